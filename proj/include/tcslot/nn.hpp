#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tcslot/ops.hpp"

namespace tcslot::nn {

/// Ordered registry of named trainable tensors.
template <typename T>
class ParameterSet {
 public:
  Var<T> add(std::string name, Tensor<T> init) {
    for (const auto& [n, _] : params_) {
      if (n == name) throw ConfigError("duplicate parameter name: " + name);
    }
    auto v = Var<T>::parameter(std::move(init));
    params_.emplace_back(std::move(name), v);
    return v;
  }

  const std::vector<std::pair<std::string, Var<T>>>& items() const { return params_; }
  std::size_t count() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) n += v.size();
    return n;
  }

  std::size_t scalar_count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [name, v] : params_) {
      if (name.rfind(prefix, 0) == 0) n += v.size();
    }
    return n;
  }

  Var<T> find(const std::string& name) const {
    for (const auto& [n, v] : params_) {
      if (n == name) return v;
    }
    throw ConfigError("unknown parameter: " + name);
  }

  void zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
};

namespace detail {

// Kaiming-uniform bound for ReLU networks.
template <typename T>
Tensor<T> kaiming(Shape shape, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return random_uniform<T>(std::move(shape), static_cast<T>(-bound), static_cast<T>(bound), rng);
}

}  // namespace detail

template <typename T>
struct Conv2d {
  Var<T> weight, bias;
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParameterSet<T>& params, const std::string& name, int in, int out, int k, int stride_,
         int pad_, std::mt19937_64& rng, T bias_init = T(0), double init_gain = 1.0)
      : stride(stride_), pad(pad_) {
    auto w = detail::kaiming<T>(Shape{out, in, k, k}, in * k * k, rng);
    for (auto& v : w.values()) v = static_cast<T>(v * init_gain);
    weight = params.add(name + ".weight", std::move(w));
    bias = params.add(name + ".bias", Tensor<T>(Shape{out}, bias_init));
  }

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
};

template <typename T>
struct ConvTranspose2d {
  Var<T> weight, bias;
  int stride = 1, pad = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterSet<T>& params, const std::string& name, int in, int out, int k,
                  int stride_, int pad_, std::mt19937_64& rng)
      : stride(stride_), pad(pad_) {
    const int fan_in = in * k * k / (stride_ * stride_);
    weight = params.add(name + ".weight", detail::kaiming<T>(Shape{in, out, k, k}, fan_in, rng));
    bias = params.add(name + ".bias", Tensor<T>(Shape{out}, T(0)));
  }

  Var<T> operator()(const Var<T>& x) const {
    return ops::conv_transpose2d(x, weight, bias, stride, pad);
  }
};

template <typename T>
struct Linear {
  Var<T> weight, bias;

  Linear() = default;
  Linear(ParameterSet<T>& params, const std::string& name, int in, int out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = params.add(name + ".weight", random_uniform<T>(Shape{out, in}, static_cast<T>(-bound),
                                                             static_cast<T>(bound), rng));
    bias = params.add(name + ".bias", Tensor<T>(Shape{out}, T(0)));
  }

  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }
};

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a ParameterSet. State is indexed by registration order.
template <typename T>
class Adam {
 public:
  Adam(ParameterSet<T>& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
    for (const auto& [_, v] : params_.items()) {
      m_.emplace_back(v.size(), 0.0);
      v_.emplace_back(v.size(), 0.0);
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  long steps() const { return step_; }

  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    std::size_t idx = 0;
    for (const auto& [_, p] : params_.items()) {
      Var<T> param = p;
      const Tensor<T> g = param.grad();
      auto& val = param.mutable_value();
      auto& m = m_[idx];
      auto& v = v_[idx];
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mh = m[i] / bc1, vh = v[i] / bc2;
        val[i] = static_cast<T>(static_cast<double>(val[i]) - cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
      ++idx;
    }
  }

 private:
  ParameterSet<T>& params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long step_ = 0;
};

}  // namespace tcslot::nn
