#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tcslot/tensor.hpp"

namespace tcslot::embedding {

/// Condition vocabulary for the target tooth region.
inline const std::array<std::string, 3>& vocabulary() {
  static const std::array<std::string, 3> words{"left", "middle", "right"};
  return words;
}

inline bool is_condition_word(std::string_view w) {
  for (const auto& v : vocabulary()) {
    if (v == w) return true;
  }
  return false;
}

inline void require_condition_word(std::string_view w) {
  if (!is_condition_word(w)) {
    throw ConfigError("unknown condition word '" + std::string(w) + "' (expected left|middle|right)");
  }
}

/// Mirror image of a condition under a horizontal flip.
inline std::string mirrored_condition(std::string_view w) {
  require_condition_word(w);
  if (w == "left") return "right";
  if (w == "right") return "left";
  return "middle";
}

/// Grayscale slice, row-major, intensities nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// Source of the text embedding (condition word) and the image embedding used for
/// knowledge alignment. Implementations must return unit-norm vectors of length
/// dimension() and be deterministic. They are read-only after construction.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual int dimension() const = 0;
  virtual std::string name() const = 0;
  virtual std::vector<double> embed_text(std::string_view word) const = 0;
  virtual std::vector<double> embed_image(const Image& slice) const = 0;
};

inline void normalize_in_place(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("embedding: cannot normalize zero vector");
  for (double& x : v) x /= n;
}

// FNV-1a, stable across platforms and runs (std::hash is not).
inline std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Deterministic stand-in for a CLIP text/image encoder pair.
/// Text: a seeded Gaussian direction per vocabulary word.
/// Image: area-downsample to 16x16, append a bias term, apply a fixed seeded
/// Gaussian projection to D, normalize.
class StubEmbeddingProvider final : public EmbeddingProvider {
 public:
  static constexpr int kGrid = 16;

  explicit StubEmbeddingProvider(int dimension = 512, std::uint64_t seed = 0x7c5107ULL)
      : dim_(dimension), seed_(seed) {
    if (dimension <= 0) throw ConfigError("embedding dimension must be positive");
    std::mt19937_64 rng(seed_ ^ stable_hash("image-projection"));
    std::normal_distribution<double> nd(0.0, 1.0);
    projection_.resize(static_cast<std::size_t>(dim_) * (kGrid * kGrid + 1));
    for (auto& v : projection_) v = nd(rng);
  }

  int dimension() const override { return dim_; }
  std::string name() const override { return "stub"; }

  std::vector<double> embed_text(std::string_view word) const override {
    require_condition_word(word);
    std::mt19937_64 rng(seed_ ^ stable_hash(word));
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(dim_));
    for (auto& x : v) x = nd(rng);
    normalize_in_place(v);
    return v;
  }

  std::vector<double> embed_image(const Image& slice) const override {
    if (slice.height <= 0 || slice.width <= 0 ||
        slice.pixels.size() != static_cast<std::size_t>(slice.height) * slice.width) {
      throw ShapeError("embed_image: malformed slice");
    }
    std::vector<double> feat(kGrid * kGrid + 1, 0.0);
    std::vector<int> counts(kGrid * kGrid, 0);
    for (int y = 0; y < slice.height; ++y) {
      const int gy = y * kGrid / slice.height;
      for (int x = 0; x < slice.width; ++x) {
        const double v = slice.at(y, x);
        if (!std::isfinite(v)) throw NumericError("embed_image: non-finite pixel");
        const int gx = x * kGrid / slice.width;
        feat[gy * kGrid + gx] += v;
        ++counts[gy * kGrid + gx];
      }
    }
    for (int i = 0; i < kGrid * kGrid; ++i) {
      if (counts[i] > 0) feat[i] /= counts[i];
    }
    feat.back() = 1.0;
    std::vector<double> out(static_cast<std::size_t>(dim_), 0.0);
    const std::size_t cols = feat.size();
    for (int d = 0; d < dim_; ++d) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += projection_[d * cols + j] * feat[j];
      out[d] = s;
    }
    normalize_in_place(out);
    return out;
  }

 private:
  int dim_;
  std::uint64_t seed_;
  std::vector<double> projection_;
};

using ProviderFactory = std::function<std::unique_ptr<EmbeddingProvider>(int dimension, std::uint64_t seed)>;

/// Name -> factory table. "stub" is always present; adapters backed by a real
/// encoder register themselves here.
inline std::map<std::string, ProviderFactory>& provider_registry() {
  static std::map<std::string, ProviderFactory> registry{
      {"stub", [](int d, std::uint64_t s) { return std::make_unique<StubEmbeddingProvider>(d, s); }}};
  return registry;
}

inline void register_provider(const std::string& name, ProviderFactory factory) {
  provider_registry()[name] = std::move(factory);
}

inline std::unique_ptr<EmbeddingProvider> make_provider(const std::string& name, int dimension,
                                                        std::uint64_t seed) {
  auto& reg = provider_registry();
  auto it = reg.find(name);
  if (it == reg.end()) throw ConfigError("unknown embedding provider: " + name);
  auto p = it->second(dimension, seed);
  if (p->dimension() != dimension) throw ConfigError("embedding provider dimension mismatch");
  return p;
}

}  // namespace tcslot::embedding
