#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tcslot/embedding.hpp"
#include "tcslot/nn.hpp"

namespace tcslot::model {

enum class TextPlaneMode { kLinear, kTile };

NLOHMANN_JSON_SERIALIZE_ENUM(TextPlaneMode, {{TextPlaneMode::kLinear, "linear"}, {TextPlaneMode::kTile, "tile"}})

struct ModelConfig {
  int input_height = 64;
  int input_width = 64;
  std::vector<int> encoder_channels{32, 64, 64, 64};  // last entry is the feature width C
  std::vector<int> encoder_strides{2, 2, 1, 1};
  std::vector<int> decoder_channels{64, 64, 64};
  std::vector<int> decoder_strides{1, 1, 1};
  int head_channels = 64;
  int embed_dim = 512;
  int g = 4;
  int k = 7;
  bool use_tvp = true;
  bool use_ctg = true;
  TextPlaneMode text_plane = TextPlaneMode::kLinear;
  std::string embedding_provider = "stub";
  std::uint64_t embedding_seed = 0x7c5107ULL;
  std::uint64_t init_seed = 1;

  int feature_channels() const { return encoder_channels.back(); }
  int encoder_stride() const {
    return std::accumulate(encoder_strides.begin(), encoder_strides.end(), 1, std::multiplies<>());
  }
  int decoder_upsample() const {
    return std::accumulate(decoder_strides.begin(), decoder_strides.end(), 1, std::multiplies<>());
  }
  int grid_height() const { return input_height / g; }
  int grid_width() const { return input_width / g; }

  void validate() const {
    if (g != 4) throw ConfigError("model: prediction down-sampling factor g must be 4");
    if (k < 1) throw ConfigError("model: slice interval k must be >= 1");
    if (embed_dim <= 0) throw ConfigError("model: embedding dimension must be positive");
    if (encoder_channels.empty() || encoder_channels.size() != encoder_strides.size()) {
      throw ConfigError("model: encoder_channels and encoder_strides must be non-empty and equal length");
    }
    if (decoder_channels.size() != 3 || decoder_strides.size() != 3) {
      throw ConfigError("model: decoder has exactly three deconvolution stages");
    }
    for (int c : encoder_channels) {
      if (c <= 0) throw ConfigError("model: channel widths must be positive");
    }
    for (int c : decoder_channels) {
      if (c <= 0) throw ConfigError("model: channel widths must be positive");
    }
    for (int s : encoder_strides) {
      if (s != 1 && s != 2) throw ConfigError("model: encoder strides must be 1 or 2");
    }
    for (int s : decoder_strides) {
      if (s != 1 && s != 2) throw ConfigError("model: decoder strides must be 1 or 2");
    }
    if (head_channels <= 0) throw ConfigError("model: head_channels must be positive");
    if (input_height % encoder_stride() != 0 || input_width % encoder_stride() != 0) {
      throw ConfigError("model: input size must be divisible by the encoder stride");
    }
    if (encoder_stride() != g * decoder_upsample()) {
      throw ConfigError("model: encoder stride / decoder upsampling must equal g");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_height", c.input_height},
                     {"input_width", c.input_width},
                     {"encoder_channels", c.encoder_channels},
                     {"encoder_strides", c.encoder_strides},
                     {"decoder_channels", c.decoder_channels},
                     {"decoder_strides", c.decoder_strides},
                     {"head_channels", c.head_channels},
                     {"embed_dim", c.embed_dim},
                     {"g", c.g},
                     {"k", c.k},
                     {"use_tvp", c.use_tvp},
                     {"use_ctg", c.use_ctg},
                     {"text_plane", c.text_plane},
                     {"embedding_provider", c.embedding_provider},
                     {"embedding_seed", c.embedding_seed},
                     {"init_seed", c.init_seed}};
}

// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.input_height = j.value("input_height", d.input_height);
  c.input_width = j.value("input_width", d.input_width);
  c.encoder_channels = j.value("encoder_channels", d.encoder_channels);
  c.encoder_strides = j.value("encoder_strides", d.encoder_strides);
  c.decoder_channels = j.value("decoder_channels", d.decoder_channels);
  c.decoder_strides = j.value("decoder_strides", d.decoder_strides);
  c.head_channels = j.value("head_channels", d.head_channels);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.g = j.value("g", d.g);
  c.k = j.value("k", d.k);
  c.use_tvp = j.value("use_tvp", d.use_tvp);
  c.use_ctg = j.value("use_ctg", d.use_ctg);
  c.text_plane = j.value("text_plane", d.text_plane);
  c.embedding_provider = j.value("embedding_provider", d.embedding_provider);
  c.embedding_seed = j.value("embedding_seed", d.embedding_seed);
  c.init_seed = j.value("init_seed", d.init_seed);
}

/// Scaled dot-product attention of query map onto key/value map, both (C, H, W),
/// single head, keys double as values: softmax(Q K^T / sqrt(C)) V.
template <typename T>
struct CrossAttention {
  Var<T> output;     // (C, H, W)
  Var<T> attention;  // (N, N), rows sum to 1
};

template <typename T>
CrossAttention<T> cross_attention(const Var<T>& query, const Var<T>& key_value) {
  if (query.shape() != key_value.shape() || query.value().rank() != 3) {
    throw ShapeError("cross_attention: query and key/value must be equal (C,H,W) maps, got " +
                     shape_str(query.shape()) + " and " + shape_str(key_value.shape()));
  }
  const int c = query.dim(0), n = query.dim(1) * query.dim(2);
  auto q = ops::transpose(ops::reshape(query, Shape{c, n}));  // (N, C)
  auto kv = ops::reshape(key_value, Shape{c, n});             // (C, N)
  auto scores = ops::scale(ops::matmul(q, kv), static_cast<T>(1.0 / std::sqrt(static_cast<double>(c))));
  auto attn = ops::softmax_rows(scores);
  auto out = ops::matmul(attn, ops::transpose(kv));  // (N, C)
  return {ops::reshape(ops::transpose(out), query.shape()), attn};
}

/// Texture-variation fusion of a triplet's feature maps: the middle slice queries
/// the upper and lower slices, each result gets the middle slice added back, and
/// the two are stacked along channels -> (2C, H, W).
template <typename T>
Var<T> tvp_fuse(const Var<T>& upper, const Var<T>& middle, const Var<T>& lower) {
  if (upper.shape() != middle.shape() || lower.shape() != middle.shape()) {
    throw ShapeError("tvp_fuse: feature maps differ in shape");
  }
  auto from_upper = cross_attention(middle, upper).output;
  auto from_lower = cross_attention(middle, lower).output;
  return ops::concat<T>({ops::add(from_upper, middle), ops::add(from_lower, middle)});
}

template <typename T>
struct ForwardOutput {
  Var<T> heatmap;  // (1, H/g, W/g), post-sigmoid
  Var<T> offsets;  // (2, H/g, W/g)
  Var<T> pooled;   // (D); undefined when CTG is disabled
};

/// Slice triplet network: shared encoder, slice fusion, three-stage deconvolution
/// decoder, text-plane conditioning and the heatmap/offset heads.
template <typename T>
class TcslotNet {
 public:
  explicit TcslotNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.init_seed);

    int in = 1;
    for (std::size_t i = 0; i < cfg_.encoder_channels.size(); ++i) {
      encoder_.emplace_back(params_, "encoder." + std::to_string(i), in, cfg_.encoder_channels[i], 3,
                            cfg_.encoder_strides[i], 1, rng);
      in = cfg_.encoder_channels[i];
    }
    const int c = cfg_.feature_channels();
    if (!cfg_.use_tvp) fuse_reduce_ = nn::Conv2d<T>(params_, "fuse_reduce", 3 * c, 2 * c, 1, 1, 0, rng);

    in = 2 * c;
    for (std::size_t i = 0; i < 3; ++i) {
      const int s = cfg_.decoder_strides[i];
      decoder_.emplace_back(params_, "decoder." + std::to_string(i), in, cfg_.decoder_channels[i],
                            s == 2 ? 4 : 3, s, 1, rng);
      in = cfg_.decoder_channels[i];
    }

    const int gh = cfg_.grid_height(), gw = cfg_.grid_width();
    if (cfg_.use_ctg) {
      if (cfg_.text_plane == TextPlaneMode::kLinear) {
        text_proj_ = nn::Linear<T>(params_, "ctg.text_proj", cfg_.embed_dim, gh * gw, rng);
      }
      pool_query_ = params_.add("ctg.pool_query", random_normal<T>(Shape{1, 2 * c}, T(0), T(0.02), rng));
      pool_reduce_ = nn::Linear<T>(params_, "ctg.pool_reduce", 2 * c, cfg_.embed_dim, rng);
      in += 1;
    }

    hm_conv_ = nn::Conv2d<T>(params_, "head.heatmap.0", in, cfg_.head_channels, 3, 1, 1, rng);
    hm_out_ = nn::Conv2d<T>(params_, "head.heatmap.1", cfg_.head_channels, 1, 1, 1, 0, rng, T(-2.19), 0.1);
    off_conv_ = nn::Conv2d<T>(params_, "head.offset.0", in, cfg_.head_channels, 3, 1, 1, rng);
    off_out_ = nn::Conv2d<T>(params_, "head.offset.1", cfg_.head_channels, 2, 1, 1, 0, rng, T(0), 0.1);
  }

  TcslotNet(const TcslotNet&) = delete;
  TcslotNet& operator=(const TcslotNet&) = delete;
  TcslotNet(TcslotNet&&) = default;
  TcslotNet& operator=(TcslotNet&&) = default;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& parameters() { return params_; }
  const nn::ParameterSet<T>& parameters() const { return params_; }

  /// One slice (H, W) or (1, H, W) -> feature map (C, H/s, W/s).
  Var<T> encode(const Var<T>& slice) const {
    Var<T> x = slice.value().rank() == 2 ? ops::reshape(slice, Shape{1, slice.dim(0), slice.dim(1)}) : slice;
    if (x.dim(1) != cfg_.input_height || x.dim(2) != cfg_.input_width) {
      throw ShapeError("encode: expected " + std::to_string(cfg_.input_height) + "x" +
                       std::to_string(cfg_.input_width) + " slice, got " + shape_str(slice.shape()));
    }
    for (const auto& conv : encoder_) x = ops::relu(conv(x));
    return x;
  }

  /// The same encoder parameters process all three slices.
  std::array<Var<T>, 3> encode_triplet(const std::array<Var<T>, 3>& slices) const {
    if (slices[0].shape() != slices[1].shape() || slices[2].shape() != slices[1].shape()) {
      throw ShapeError("encode_triplet: slices differ in shape");
    }
    return {encode(slices[0]), encode(slices[1]), encode(slices[2])};
  }

  Var<T> fuse(const Var<T>& upper, const Var<T>& middle, const Var<T>& lower) const {
    if (cfg_.use_tvp) return tvp_fuse(upper, middle, lower);
    if (upper.shape() != middle.shape() || lower.shape() != middle.shape()) {
      throw ShapeError("fuse: feature maps differ in shape");
    }
    return fuse_reduce_(ops::concat<T>({upper, middle, lower}));
  }

  Var<T> decode_features(const Var<T>& fused) const {
    Var<T> x = fused;
    for (const auto& deconv : decoder_) x = ops::relu(deconv(x));
    return x;
  }

  /// Text embedding (D) -> (1, H', W') plane.
  Var<T> text_plane(const Tensor<T>& text_embedding) const {
    check_embedding(text_embedding);
    const int gh = cfg_.grid_height(), gw = cfg_.grid_width();
    if (cfg_.text_plane == TextPlaneMode::kLinear) {
      return ops::reshape(text_proj_(Var<T>::constant(text_embedding.reshaped(Shape{cfg_.embed_dim}))),
                          Shape{1, gh, gw});
    }
    Tensor<T> plane(Shape{1, gh, gw});
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = text_embedding[i % text_embedding.size()];
    return Var<T>::constant(std::move(plane));
  }

  Var<T> ctg_condition(const Var<T>& decoder_feature, const Tensor<T>& text_embedding) const {
    if (!cfg_.use_ctg) throw ConfigError("ctg_condition: text guidance disabled in this model");
    auto plane = text_plane(text_embedding);
    if (decoder_feature.dim(1) != plane.dim(1) || decoder_feature.dim(2) != plane.dim(2)) {
      throw ShapeError("ctg_condition: decoder feature is not at grid resolution");
    }
    return ops::concat<T>({decoder_feature, plane});
  }

  /// Single learnable query attends over all positions; result reduced to D.
  Var<T> attention_pool(const Var<T>& fused) const {
    if (!cfg_.use_ctg) throw ConfigError("attention_pool: text guidance disabled in this model");
    const int c = fused.dim(0), n = fused.dim(1) * fused.dim(2);
    auto x = ops::reshape(fused, Shape{c, n});
    auto scores = ops::scale(ops::matmul(pool_query_, x), static_cast<T>(1.0 / std::sqrt(static_cast<double>(c))));
    auto weights = ops::softmax_rows(scores);                         // (1, N)
    auto pooled = ops::matmul(x, ops::transpose(weights));            // (C, 1)
    return pool_reduce_(ops::reshape(pooled, Shape{c}));
  }

  ForwardOutput<T> forward(const std::array<Tensor<T>, 3>& slices, const Tensor<T>& text_embedding) const {
    std::array<Var<T>, 3> in;
    for (int i = 0; i < 3; ++i) {
      Tensor<T> s = slices[i];
      for (auto& v : s.values()) v = (v - T(0.5)) * T(2);
      in[i] = Var<T>::constant(std::move(s));
    }
    auto feats = encode_triplet(in);
    auto fused = fuse(feats[0], feats[1], feats[2]);
    auto dec = decode_features(fused);
    ForwardOutput<T> out;
    if (cfg_.use_ctg) {
      dec = ctg_condition(dec, text_embedding);
      out.pooled = attention_pool(fused);
    }
    auto hm = hm_out_(ops::relu(hm_conv_(dec)));
    out.heatmap = ops::clamp(ops::sigmoid(hm), static_cast<T>(1e-4), static_cast<T>(1 - 1e-4));
    out.offsets = off_out_(ops::relu(off_conv_(dec)));
    return out;
  }

  ForwardOutput<T> forward(const std::array<Tensor<T>, 3>& slices, std::string_view condition,
                           const embedding::EmbeddingProvider& provider) const {
    embedding::require_condition_word(condition);
    auto v = provider.embed_text(condition);
    return forward(slices, Tensor<T>(Shape{static_cast<int>(v.size())}, std::vector<T>(v.begin(), v.end())));
  }

  /// Scalar count of the encoder, shared by all three slices.
  std::size_t encoder_parameter_count() const { return params_.scalar_count("encoder."); }

 private:
  void check_embedding(const Tensor<T>& e) const {
    if (static_cast<int>(e.size()) != cfg_.embed_dim) {
      throw ShapeError("text embedding has dimension " + std::to_string(e.size()) + ", model expects " +
                       std::to_string(cfg_.embed_dim));
    }
  }

  ModelConfig cfg_;
  nn::ParameterSet<T> params_;
  std::vector<nn::Conv2d<T>> encoder_;
  nn::Conv2d<T> fuse_reduce_;
  std::vector<nn::ConvTranspose2d<T>> decoder_;
  nn::Linear<T> text_proj_;
  Var<T> pool_query_;
  nn::Linear<T> pool_reduce_;
  nn::Conv2d<T> hm_conv_, hm_out_, off_conv_, off_out_;
};

}  // namespace tcslot::model
