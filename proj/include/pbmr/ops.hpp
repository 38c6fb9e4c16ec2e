#pragma once

// Differentiable operations over pbmr::Tensor. Matrix products go through
// Eigen (single-threaded, so results are bitwise reproducible); everything
// else is plain loops in a fixed order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pbmr/tensor.hpp"

namespace pbmr {

/// (rows, cols) pair for convolution stride and padding.
struct Window2 {
  int h = 1;
  int w = 1;
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

inline std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t v) {
  return (h ^ v) * 0x100000001b3ULL;
}

struct ConvGeometry {
  std::size_t n, c, h, w, k, kh, kw, oh, ow;
  std::size_t sh, sw, ph, pw;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

/// Output columns [lo, hi) whose input column ox * sw + kj - pw is in range.
inline std::pair<std::size_t, std::size_t> valid_cols(const ConvGeometry& g, std::size_t kj) {
  std::size_t lo = 0;
  while (lo < g.ow && lo * g.sw + kj < g.pw) ++lo;
  std::size_t hi = lo;
  while (hi < g.ow && hi * g.sw + kj - g.pw < g.w) ++hi;
  return {lo, hi};
}

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const std::size_t p = g.positions();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * p;
        const auto [lo, hi] = valid_cols(g, kj);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.sh + ki) - static_cast<std::ptrdiff_t>(g.ph);
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w + kj - g.pw;
          std::fill(dst, dst + lo, T(0));
          if (g.sw == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.sw];
          }
          std::fill(dst + hi, dst + g.ow, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* img) {
  const std::size_t p = g.positions();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * p;
        const auto [lo, hi] = valid_cols(g, kj);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.sh + ki) - static_cast<std::ptrdiff_t>(g.ph);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w + kj - g.pw;
          const T* src = row + oy * g.ow;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * g.sw] += src[ox];
        }
      }
    }
  }
}

} // namespace detail

/// 2-D cross-correlation with zero padding, NCHW layout.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Window2 stride,
                 Window2 padding) {
  using detail::require;
  require(input.rank() == 4, "conv2d: input must be NCHW, got " + shape_str(input.shape()));
  require(weight.rank() == 4, "conv2d: weight must be KCkhkw, got " + shape_str(weight.shape()));
  require(stride.h > 0 && stride.w > 0, "conv2d: stride must be positive");
  require(padding.h >= 0 && padding.w >= 0, "conv2d: padding must be non-negative");
  detail::ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.k = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.sh = static_cast<std::size_t>(stride.h);
  g.sw = static_cast<std::size_t>(stride.w);
  g.ph = static_cast<std::size_t>(padding.h);
  g.pw = static_cast<std::size_t>(padding.w);
  require(weight.dim(1) == g.c, "conv2d: channel mismatch, input has " + std::to_string(g.c) +
                                    " channels, weight expects " + std::to_string(weight.dim(1)));
  require(bias.rank() == 1 && bias.dim(0) == g.k, "conv2d: bias must have shape [" + std::to_string(g.k) + "]");
  require(g.kh <= g.h + 2 * g.ph && g.kw <= g.w + 2 * g.pw,
          "conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) + " larger than padded input " +
              shape_str(input.shape()));
  g.oh = (g.h + 2 * g.ph - g.kh) / g.sh + 1;
  g.ow = (g.w + 2 * g.pw - g.kw) / g.sw + 1;

  const std::size_t patch = g.patch();
  const std::size_t pos = g.positions();
  const bool track = detail::grad_mode() && (input.requires_grad() || weight.requires_grad() || bias.requires_grad());
  auto cols = std::make_shared<std::vector<T>>(track ? g.n * patch * pos : patch * pos);

  auto out = detail::make_result<T>(
      {g.n, g.k, g.oh, g.ow}, {&input, &weight, &bias}, "conv2d", [g, cols](const TensorImpl<T>& o) {
        auto& fn = *o.grad_fn;
        auto& x = *fn.inputs[0];
        auto& wt = *fn.inputs[1];
        auto& b = *fn.inputs[2];
        const std::size_t patch = g.patch();
        const std::size_t pos = g.positions();
        std::vector<T> dcol(x.requires_grad ? patch * pos : 0);
        detail::CMapMat<T> wm(wt.data.data(), g.k, patch);
        for (std::size_t n = 0; n < g.n; ++n) {
          detail::CMapMat<T> dy(o.grad.data() + n * g.k * pos, g.k, pos);
          detail::CMapMat<T> col(cols->data() + n * patch * pos, patch, pos);
          if (wt.requires_grad) {
            detail::MapMat<T> dw(wt.grad.data(), g.k, patch);
            dw.noalias() += dy * col.transpose();
          }
          if (b.requires_grad) {
            for (std::size_t k = 0; k < g.k; ++k) b.grad[k] += dy.row(k).sum();
          }
          if (x.requires_grad) {
            detail::MapMat<T> dc(dcol.data(), patch, pos);
            dc.noalias() = wm.transpose() * dy;
            detail::col2im_add(dcol.data(), g, x.grad.data() + n * g.c * g.h * g.w);
          }
        }
      });

  detail::CMapMat<T> wm(weight.data().data(), g.k, patch);
  for (std::size_t n = 0; n < g.n; ++n) {
    T* col = cols->data() + (track ? n * patch * pos : 0);
    detail::im2col(input.data().data() + n * g.c * g.h * g.w, g, col);
    detail::MapMat<T> y(out.data().data() + n * g.k * pos, g.k, pos);
    y.noalias() = wm * detail::CMapMat<T>(col, patch, pos);
    for (std::size_t k = 0; k < g.k; ++k) y.row(k).array() += bias[k];
  }
  return out;
}

/// out = input * weight^T + bias.
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  using detail::require;
  require(input.rank() == 2 && weight.rank() == 2 && bias.rank() == 1,
          "linear: expected input [N,F], weight [G,F], bias [G]");
  const std::size_t n = input.dim(0), f = input.dim(1), g = weight.dim(0);
  require(weight.dim(1) == f && bias.dim(0) == g,
          "linear: shape mismatch " + shape_str(input.shape()) + " x " + shape_str(weight.shape()) + " + " +
              shape_str(bias.shape()));
  auto out = detail::make_result<T>({n, g}, {&input, &weight, &bias}, "linear", [n, f, g](const TensorImpl<T>& o) {
    auto& fn = *o.grad_fn;
    auto& x = *fn.inputs[0];
    auto& w = *fn.inputs[1];
    auto& b = *fn.inputs[2];
    detail::CMapMat<T> dy(o.grad.data(), n, g);
    if (x.requires_grad) {
      detail::MapMat<T>(x.grad.data(), n, f).noalias() += dy * detail::CMapMat<T>(w.data.data(), g, f);
    }
    if (w.requires_grad) {
      detail::MapMat<T>(w.grad.data(), g, f).noalias() += dy.transpose() * detail::CMapMat<T>(x.data.data(), n, f);
    }
    if (b.requires_grad) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < g; ++j) b.grad[j] += o.grad[i * g + j];
    }
  });
  detail::MapMat<T> y(out.data().data(), n, g);
  y.noalias() = detail::CMapMat<T>(input.data().data(), n, f) *
                detail::CMapMat<T>(weight.data().data(), g, f).transpose();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < g; ++j) y(i, j) += bias[j];
  return out;
}

/// Elementwise max(0, x); the subgradient at 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  auto out = detail::make_result<T>(input.shape(), {&input}, "relu", [](const TensorImpl<T>& o) {
    auto& x = *o.grad_fn->inputs[0];
    for (std::size_t i = 0; i < x.data.size(); ++i)
      if (x.data[i] > T(0)) x.grad[i] += o.grad[i];
  });
  const auto src = input.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
  if (auto* trace = detail::branch_trace()) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < src.size(); ++i) h = detail::fnv_mix(h, src[i] > T(0) ? i + 1 : 0);
    trace->push_back(h);
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::make_result<T>(a.shape(), {&a, &b}, "add", [](const TensorImpl<T>& o) {
    for (std::size_t s = 0; s < 2; ++s) {
      auto& in = *o.grad_fn->inputs[s];
      if (!in.requires_grad) continue;
      for (std::size_t i = 0; i < o.grad.size(); ++i) in.grad[i] += o.grad[i];
    }
  });
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a[i] + b[i];
  return out;
}

/// Global mean per (sample, channel): [N,C,H,W] -> [N,C,1,1].
template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& input) {
  detail::require(input.rank() == 4, "adaptive_avg_pool: input must be NCHW");
  const std::size_t nc = input.dim(0) * input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  detail::require(hw > 0, "adaptive_avg_pool: empty spatial extent");
  auto out = detail::make_result<T>({input.dim(0), input.dim(1), 1, 1}, {&input}, "adaptive_avg_pool",
                                    [nc, hw](const TensorImpl<T>& o) {
                                      auto& x = *o.grad_fn->inputs[0];
                                      const T scale = T(1) / static_cast<T>(hw);
                                      for (std::size_t i = 0; i < nc; ++i) {
                                        const T g = o.grad[i] * scale;
                                        for (std::size_t j = 0; j < hw; ++j) x.grad[i * hw + j] += g;
                                      }
                                    });
  const auto src = input.data();
  for (std::size_t i = 0; i < nc; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < hw; ++j) acc += src[i * hw + j];
    out[i] = acc / static_cast<T>(hw);
  }
  return out;
}

/// Global max per (sample, channel). Ties resolve to the first maximal
/// element in row-major order, which also receives the whole gradient.
template <typename T>
Tensor<T> adaptive_max_pool(const Tensor<T>& input) {
  detail::require(input.rank() == 4, "adaptive_max_pool: input must be NCHW");
  const std::size_t nc = input.dim(0) * input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  detail::require(hw > 0, "adaptive_max_pool: empty spatial extent");
  auto argmax = std::make_shared<std::vector<std::size_t>>(nc);
  const auto src = input.data();
  for (std::size_t i = 0; i < nc; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < hw; ++j)
      if (src[i * hw + j] > src[i * hw + best]) best = j;
    (*argmax)[i] = i * hw + best;
  }
  if (auto* trace = detail::branch_trace()) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto idx : *argmax) h = detail::fnv_mix(h, idx);
    trace->push_back(h);
  }
  auto out = detail::make_result<T>({input.dim(0), input.dim(1), 1, 1}, {&input}, "adaptive_max_pool",
                                    [argmax](const TensorImpl<T>& o) {
                                      auto& x = *o.grad_fn->inputs[0];
                                      for (std::size_t i = 0; i < argmax->size(); ++i) x.grad[(*argmax)[i]] += o.grad[i];
                                    });
  for (std::size_t i = 0; i < nc; ++i) out[i] = src[(*argmax)[i]];
  return out;
}

/// [N, ...] -> [N, prod(...)].
template <typename T>
Tensor<T> flatten(const Tensor<T>& input) {
  detail::require(input.rank() >= 1, "flatten: rank-0 input");
  const std::size_t n = input.dim(0);
  const std::size_t rest = n ? input.numel() / n : 0;
  auto out = detail::make_result<T>({n, rest}, {&input}, "flatten", [](const TensorImpl<T>& o) {
    auto& x = *o.grad_fn->inputs[0];
    for (std::size_t i = 0; i < o.grad.size(); ++i) x.grad[i] += o.grad[i];
  });
  std::copy(input.data().begin(), input.data().end(), out.data().begin());
  return out;
}

/// Column concatenation: [N,A] ++ [N,B] -> [N,A+B].
template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
                  "concat_cols: expected [N,A] and [N,B], got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  auto out = detail::make_result<T>({n, ca + cb}, {&a, &b}, "concat_cols", [n, ca, cb](const TensorImpl<T>& o) {
    auto& xa = *o.grad_fn->inputs[0];
    auto& xb = *o.grad_fn->inputs[1];
    for (std::size_t i = 0; i < n; ++i) {
      const T* g = o.grad.data() + i * (ca + cb);
      if (xa.requires_grad)
        for (std::size_t j = 0; j < ca; ++j) xa.grad[i * ca + j] += g[j];
      if (xb.requires_grad)
        for (std::size_t j = 0; j < cb; ++j) xb.grad[i * cb + j] += g[ca + j];
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().begin() + i * ca, ca, out.data().begin() + i * (ca + cb));
    std::copy_n(b.data().begin() + i * cb, cb, out.data().begin() + i * (ca + cb) + ca);
  }
  return out;
}

/// Sum of all elements as a rank-0 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  auto out = detail::make_result<T>({}, {&input}, "sum", [](const TensorImpl<T>& o) {
    auto& x = *o.grad_fn->inputs[0];
    for (auto& g : x.grad) g += o.grad[0];
  });
  T acc = 0;
  for (T v : input.data()) acc += v;
  out[0] = acc;
  return out;
}

namespace detail {

template <typename T>
void check_loss_shapes(const Tensor<T>& pred, const Tensor<T>& target, const char* name) {
  require(pred.shape() == target.shape(), std::string(name) + ": shape mismatch " + shape_str(pred.shape()) + " vs " +
                                              shape_str(target.shape()));
  require(pred.numel() > 0, std::string(name) + ": empty batch");
}

} // namespace detail

/// Mean squared error over all elements.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::check_loss_shapes(pred, target, "mse_loss");
  const std::size_t n = pred.numel();
  auto out = detail::make_result<T>({}, {&pred, &target}, "mse_loss", [n](const TensorImpl<T>& o) {
    auto& p = *o.grad_fn->inputs[0];
    auto& t = *o.grad_fn->inputs[1];
    const T scale = T(2) * o.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = scale * (p.data[i] - t.data[i]);
      if (p.requires_grad) p.grad[i] += d;
      if (t.requires_grad) t.grad[i] -= d;
    }
  });
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred[i] - target[i];
    acc += d * d;
  }
  out[0] = acc / static_cast<T>(n);
  return out;
}

/// Mean absolute error over all elements; subgradient 0 where pred == target.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::check_loss_shapes(pred, target, "l1_loss");
  const std::size_t n = pred.numel();
  auto out = detail::make_result<T>({}, {&pred, &target}, "l1_loss", [n](const TensorImpl<T>& o) {
    auto& p = *o.grad_fn->inputs[0];
    auto& t = *o.grad_fn->inputs[1];
    const T scale = o.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T diff = p.data[i] - t.data[i];
      const T d = diff > T(0) ? scale : (diff < T(0) ? -scale : T(0));
      if (p.requires_grad) p.grad[i] += d;
      if (t.requires_grad) t.grad[i] -= d;
    }
  });
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(pred[i] - target[i]);
  out[0] = acc / static_cast<T>(n);
  if (auto* trace = detail::branch_trace()) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
      const T diff = pred[i] - target[i];
      h = detail::fnv_mix(h, diff > T(0) ? 1 : (diff < T(0) ? 2 : 3));
    }
    trace->push_back(h);
  }
  return out;
}

} // namespace pbmr
