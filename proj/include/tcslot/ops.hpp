#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tcslot/autograd.hpp"

namespace tcslot::ops {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

template <typename T>
bool input_needs_grad(const Node<T>& n, std::size_t i) {
  return n.inputs[i]->requires_grad;
}

template <typename T>
Tensor<T>& input_grad(Node<T>& n, std::size_t i) {
  return n.inputs[i]->grad;
}

template <typename T>
const Tensor<T>& input_value(const Node<T>& n, std::size_t i) {
  return n.inputs[i]->value;
}

inline int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// Unfolds (C, H, W) into (C*k*k, Ho*Wo) columns.
template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* cols) {
  const int n = ho * wo;
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + static_cast<std::size_t>((ch * k + ky) * k + kx) * n;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(row + oy * wo, row + (oy + 1) * wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(ch) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters columns back, accumulating into x.
template <typename T>
void col2im(const T* cols, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* x) {
  const int n = ho * wo;
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + static_cast<std::size_t>((ch * k + ky) * k + kx) * n;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = x + (static_cast<std::size_t>(ch) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                              shape_str(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!detail::input_needs_grad(n, k)) continue;
      auto& g = detail::input_grad(n, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (detail::input_needs_grad(n, 0)) {
      auto& g = detail::input_grad(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (detail::input_needs_grad(n, 1)) {
      auto& g = detail::input_grad(n, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& n) {
    auto& g = detail::input_grad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = detail::input_grad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (n.value[i] > T(0)) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = T(1) / (T(1) + std::exp(-v));
  return make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = detail::input_grad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = n.value[i];
      g[i] += n.grad[i] * y * (T(1) - y);
    }
  });
}

/// Clamps to [lo, hi]; gradient is zero where clamping is active.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::clamp(v, lo, hi);
  return make_result<T>(std::move(out), {a}, [lo, hi](Node<T>& n) {
    auto& g = detail::input_grad(n, 0);
    const auto& x = detail::input_value(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] >= lo && x[i] <= hi) g[i] += n.grad[i];
    }
  });
}

// ---- shape -----------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = detail::input_grad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

/// Concatenates along the leading axis; remaining dims must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  int lead = 0;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    detail::require(t == tail, "concat: trailing shape mismatch " + shape_str(p.shape()) + " vs " +
                                   shape_str(parts[0].shape()));
    lead += p.dim(0);
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor<T> out(shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.size(), out.data() + offset);
    offset += p.size();
  }
  return make_result<T>(std::move(out), parts, [](Node<T>& n) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const std::size_t len = n.inputs[k]->value.size();
      if (n.inputs[k]->requires_grad) {
        auto& g = n.inputs[k]->grad;
        for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[off + i];
      }
      off += len;
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  detail::require(a.value().rank() == 2, "transpose: rank-2 input required");
  const int r = a.dim(0), c = a.dim(1);
  Tensor<T> out(Shape{c, r});
  MatMap<T>(out.data(), c, r) = ConstMatMap<T>(a.value().data(), r, c).transpose();
  return make_result<T>(std::move(out), {a}, [r, c](Node<T>& n) {
    auto& g = detail::input_grad(n, 0);
    MatMap<T>(g.data(), r, c) += ConstMatMap<T>(n.grad.data(), c, r).transpose();
  });
}

// ---- linear algebra --------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require(a.value().rank() == 2 && b.value().rank() == 2 && a.dim(1) == b.dim(0),
                  "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), nn = b.dim(1);
  Tensor<T> out(Shape{m, nn});
  MatMap<T>(out.data(), m, nn).noalias() =
      ConstMatMap<T>(a.value().data(), m, k) * ConstMatMap<T>(b.value().data(), k, nn);
  return make_result<T>(std::move(out), {a, b}, [m, k, nn](Node<T>& n) {
    ConstMatMap<T> dy(n.grad.data(), m, nn);
    if (detail::input_needs_grad(n, 0)) {
      MatMap<T>(detail::input_grad(n, 0).data(), m, k).noalias() +=
          dy * ConstMatMap<T>(detail::input_value(n, 1).data(), k, nn).transpose();
    }
    if (detail::input_needs_grad(n, 1)) {
      MatMap<T>(detail::input_grad(n, 1).data(), k, nn).noalias() +=
          ConstMatMap<T>(detail::input_value(n, 0).data(), m, k).transpose() * dy;
    }
  });
}

/// Row-wise softmax of a rank-2 tensor.
template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  detail::require(a.value().rank() == 2, "softmax_rows: rank-2 input required");
  const int r = a.dim(0), c = a.dim(1);
  Tensor<T> out = a.value();
  for (int i = 0; i < r; ++i) {
    T* row = out.data() + static_cast<std::size_t>(i) * c;
    const T mx = *std::max_element(row, row + c);
    T sum = T(0);
    for (int j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < c; ++j) row[j] /= sum;
  }
  return make_result<T>(std::move(out), {a}, [r, c](Node<T>& n) {
    auto& g = detail::input_grad(n, 0);
    for (int i = 0; i < r; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * c;
      T dot = T(0);
      for (int j = 0; j < c; ++j) dot += n.grad[base + j] * n.value[base + j];
      for (int j = 0; j < c; ++j) g[base + j] += n.value[base + j] * (n.grad[base + j] - dot);
    }
  });
}

/// y = W x + b for a vector x of length in, W (out, in), b (out).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const int in = weight.dim(1), out = weight.dim(0);
  detail::require(static_cast<int>(x.size()) == in, "linear: input length mismatch");
  auto y = matmul(weight, reshape(x, Shape{in, 1}));
  return add(reshape(y, Shape{out}), bias);
}

// ---- convolution -----------------------------------------------------------

/// 2D convolution of x (Ci, H, W) with weight (Co, Ci, k, k) and bias (Co).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  detail::require(x.value().rank() == 3 && weight.value().rank() == 4, "conv2d: bad ranks");
  const int ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int co = weight.dim(0), k = weight.dim(2);
  detail::require(weight.dim(1) == ci, "conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                                           shape_str(weight.shape()));
  const int ho = detail::conv_out(h, k, stride, pad), wo = detail::conv_out(w, k, stride, pad);
  detail::require(ho > 0 && wo > 0, "conv2d: empty output");
  const int rows = ci * k * k, n = ho * wo;

  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows) * n);
  detail::im2col(x.value().data(), ci, h, w, k, stride, pad, ho, wo, cols->data());

  Tensor<T> out(Shape{co, ho, wo});
  MatMap<T> y(out.data(), co, n);
  y.noalias() = ConstMatMap<T>(weight.value().data(), co, rows) * ConstMatMap<T>(cols->data(), rows, n);
  for (int o = 0; o < co; ++o) y.row(o).array() += bias.value()[o];

  return make_result<T>(std::move(out), {x, weight, bias},
                        [=](Node<T>& nd) {
                          ConstMatMap<T> dy(nd.grad.data(), co, n);
                          if (detail::input_needs_grad(nd, 1)) {
                            MatMap<T>(detail::input_grad(nd, 1).data(), co, rows).noalias() +=
                                dy * ConstMatMap<T>(cols->data(), rows, n).transpose();
                          }
                          if (detail::input_needs_grad(nd, 2)) {
                            auto& gb = detail::input_grad(nd, 2);
                            for (int o = 0; o < co; ++o) gb[o] += dy.row(o).sum();
                          }
                          if (detail::input_needs_grad(nd, 0)) {
                            std::vector<T> dcols(static_cast<std::size_t>(rows) * n);
                            MatMap<T>(dcols.data(), rows, n).noalias() =
                                ConstMatMap<T>(detail::input_value(nd, 1).data(), co, rows).transpose() * dy;
                            detail::col2im(dcols.data(), ci, h, w, k, stride, pad, ho, wo,
                                           detail::input_grad(nd, 0).data());
                          }
                        });
}

/// Transposed convolution of x (Ci, H, W) with weight (Ci, Co, k, k); output side
/// is (H - 1) * stride - 2 * pad + k.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  detail::require(x.value().rank() == 3 && weight.value().rank() == 4, "conv_transpose2d: bad ranks");
  const int ci = x.dim(0), hi = x.dim(1), wi = x.dim(2);
  const int co = weight.dim(1), k = weight.dim(2);
  detail::require(weight.dim(0) == ci, "conv_transpose2d: channel mismatch");
  const int ho = (hi - 1) * stride - 2 * pad + k, wo = (wi - 1) * stride - 2 * pad + k;
  detail::require(ho > 0 && wo > 0, "conv_transpose2d: empty output");
  const int rows = co * k * k, n = hi * wi;

  std::vector<T> cols(static_cast<std::size_t>(rows) * n);
  MatMap<T>(cols.data(), rows, n).noalias() =
      ConstMatMap<T>(weight.value().data(), ci, rows).transpose() * ConstMatMap<T>(x.value().data(), ci, n);
  Tensor<T> out(Shape{co, ho, wo});
  detail::col2im(cols.data(), co, ho, wo, k, stride, pad, hi, wi, out.data());
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int o = 0; o < co; ++o) {
    T* p = out.data() + o * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] += bias.value()[o];
  }

  return make_result<T>(std::move(out), {x, weight, bias}, [=](Node<T>& nd) {
    std::vector<T> dcols(static_cast<std::size_t>(rows) * n);
    detail::im2col(nd.grad.data(), co, ho, wo, k, stride, pad, hi, wi, dcols.data());
    ConstMatMap<T> dc(dcols.data(), rows, n);
    if (detail::input_needs_grad(nd, 0)) {
      MatMap<T>(detail::input_grad(nd, 0).data(), ci, n).noalias() +=
          ConstMatMap<T>(detail::input_value(nd, 1).data(), ci, rows) * dc;
    }
    if (detail::input_needs_grad(nd, 1)) {
      MatMap<T>(detail::input_grad(nd, 1).data(), ci, rows).noalias() +=
          ConstMatMap<T>(detail::input_value(nd, 0).data(), ci, n) * dc.transpose();
    }
    if (detail::input_needs_grad(nd, 2)) {
      auto& gb = detail::input_grad(nd, 2);
      for (int o = 0; o < co; ++o) {
        const T* p = nd.grad.data() + o * plane;
        T s = T(0);
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
        gb[o] += s;
      }
    }
  });
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = T(0);
  for (auto v : a.value().values()) s += v;
  return make_result<T>(Tensor<T>::scalar(s), {a}, [](Node<T>& n) {
    auto& g = detail::input_grad(n, 0);
    for (auto& v : g.values()) v += n.grad[0];
  });
}

/// mean |a - b|; the subgradient at a == b is zero.
template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  detail::require(a.shape() == b.shape(), "mean_abs_diff: shape mismatch " + shape_str(a.shape()) +
                                              " vs " + shape_str(b.shape()));
  const std::size_t len = a.size();
  if (len == 0) return Var<T>::constant(Tensor<T>::scalar(T(0)));
  T s = T(0);
  for (std::size_t i = 0; i < len; ++i) s += std::abs(a.value()[i] - b.value()[i]);
  return make_result<T>(Tensor<T>::scalar(s / static_cast<T>(len)), {a, b}, [len](Node<T>& n) {
    const auto& av = detail::input_value(n, 0);
    const auto& bv = detail::input_value(n, 1);
    const T scale_g = n.grad[0] / static_cast<T>(len);
    for (std::size_t i = 0; i < len; ++i) {
      const T d = av[i] - bv[i];
      const T sg = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
      if (detail::input_needs_grad(n, 0)) detail::input_grad(n, 0)[i] += scale_g * sg;
      if (detail::input_needs_grad(n, 1)) detail::input_grad(n, 1)[i] -= scale_g * sg;
    }
  });
}

/// Σ w_i * s_i over single-element vars with constant weights.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& scalars, const std::vector<T>& weights) {
  detail::require(scalars.size() == weights.size(), "weighted_sum: length mismatch");
  T s = T(0);
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    detail::require(scalars[i].size() == 1, "weighted_sum: scalar inputs required");
    s += weights[i] * scalars[i].item();
  }
  return make_result<T>(Tensor<T>::scalar(s), scalars, [weights](Node<T>& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (n.inputs[i]->requires_grad) n.inputs[i]->grad[0] += weights[i] * n.grad[0];
    }
  });
}

/// Reads map (C, H, W) at integer cells, giving (K, C).
template <typename T>
Var<T> gather_cells(const Var<T>& map, const std::vector<std::pair<int, int>>& cells) {
  detail::require(map.value().rank() == 3, "gather_cells: (C,H,W) input required");
  const int c = map.dim(0), h = map.dim(1), w = map.dim(2);
  const int k = static_cast<int>(cells.size());
  Tensor<T> out(Shape{k, c});
  for (int i = 0; i < k; ++i) {
    const auto [cx, cy] = cells[i];
    detail::require(cx >= 0 && cx < w && cy >= 0 && cy < h, "gather_cells: cell out of range");
    for (int ch = 0; ch < c; ++ch) out.at(i, ch) = map.value().at(ch, cy, cx);
  }
  return make_result<T>(std::move(out), {map}, [cells, c](Node<T>& n) {
    auto& g = detail::input_grad(n, 0);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto [cx, cy] = cells[i];
      for (int ch = 0; ch < c; ++ch) g.at(ch, cy, cx) += n.grad.at(static_cast<int>(i), ch);
    }
  });
}

}  // namespace tcslot::ops
