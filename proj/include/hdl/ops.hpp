#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "hdl/tensor.hpp"

namespace hdl {
namespace detail {

// C[M,N] += A[M,K] * B[K,N], row-major. The i-k-j ordering keeps the inner
// loop contiguous over both C and B rows so it auto-vectorizes without
// reassociating floating-point sums.
template <typename T>
void gemm_acc(T* c, const T* a, const T* b, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void transpose(T* dst, const T* src, std::int64_t rows, std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride,
                                 std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Expand one image [c,h,w] into columns [c*kh*kw, ho*wo] for convolution as
// matrix multiply. Out-of-bounds (padding) positions become zero.
template <typename T>
void im2col(T* cols, const T* img, std::int64_t c, std::int64_t h, std::int64_t w,
            std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
            std::int64_t ho, std::int64_t wo) {
  const std::int64_t patch = ho * wo;
  for (std::int64_t ci = 0; ci < c; ++ci) {
    for (std::int64_t i = 0; i < kh; ++i) {
      for (std::int64_t j = 0; j < kw; ++j) {
        T* row = cols + ((ci * kh + i) * kw + j) * patch;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t y = oy * stride - pad + i;
          if (y < 0 || y >= h) {
            for (std::int64_t ox = 0; ox < wo; ++ox) row[oy * wo + ox] = T(0);
            continue;
          }
          const T* src = img + (ci * h + y) * w;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const std::int64_t x = ox * stride - pad + j;
            row[oy * wo + ox] = (x >= 0 && x < w) ? src[x] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of column gradients back into an image gradient.
template <typename T>
void col2im_acc(T* img, const T* cols, std::int64_t c, std::int64_t h, std::int64_t w,
                std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
                std::int64_t ho, std::int64_t wo) {
  const std::int64_t patch = ho * wo;
  for (std::int64_t ci = 0; ci < c; ++ci) {
    for (std::int64_t i = 0; i < kh; ++i) {
      for (std::int64_t j = 0; j < kw; ++j) {
        const T* row = cols + ((ci * kh + i) * kw + j) * patch;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t y = oy * stride - pad + i;
          if (y < 0 || y >= h) continue;
          T* dst = img + (ci * h + y) * w;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const std::int64_t x = ox * stride - pad + j;
            if (x >= 0 && x < w) dst[x] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

namespace ops {

// ---------------------------------------------------------------------------
// Elementwise and reduction primitives
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  HDL_CHECK(a.shape() == b.shape(), "add: shape mismatch ", shape_str(a.shape()), " vs ",
            shape_str(b.shape()));
  Graph<T>& g = *a.graph;
  Tensor<T> out = g.value(a.id);
  const Tensor<T>& bv = g.value(b.id);
  for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i];
  int ida = a.id, idb = b.id;
  int id = g.add_op(std::move(out), {ida, idb}, [ida, idb](Graph<T>& gr, int self) {
    const Tensor<T>& dy = gr.grad(self);
    for (int in : {ida, idb}) {
      if (!gr.requires_grad(in)) continue;
      Tensor<T>& din = gr.grad(in);
      for (std::int64_t i = 0; i < dy.numel(); ++i) din.data[i] += dy.data[i];
    }
  });
  return Var<T>{&g, id};
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Graph<T>& g = *a.graph;
  Tensor<T> out = g.value(a.id);
  for (T& v : out.data) v *= s;
  int ida = a.id;
  int id = g.add_op(std::move(out), {ida}, [ida, s](Graph<T>& gr, int self) {
    if (!gr.requires_grad(ida)) return;
    const Tensor<T>& dy = gr.grad(self);
    Tensor<T>& din = gr.grad(ida);
    for (std::int64_t i = 0; i < dy.numel(); ++i) din.data[i] += s * dy.data[i];
  });
  return Var<T>{&g, id};
}

template <typename T>
Var<T> sum(Var<T> a) {
  Graph<T>& g = *a.graph;
  T total = T(0);
  for (T v : g.value(a.id).data) total += v;
  int ida = a.id;
  int id = g.add_op(Tensor<T>::scalar(total), {ida}, [ida](Graph<T>& gr, int self) {
    if (!gr.requires_grad(ida)) return;
    const T dy = gr.grad(self).data[0];
    Tensor<T>& din = gr.grad(ida);
    for (T& v : din.data) v += dy;
  });
  return Var<T>{&g, id};
}

template <typename T>
Var<T> mean(Var<T> a) {
  const std::int64_t n = a.value().numel();
  return scale(sum(a), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> relu(Var<T> a) {
  Graph<T>& g = *a.graph;
  Tensor<T> out = g.value(a.id);
  for (T& v : out.data) v = v > T(0) ? v : T(0);
  int ida = a.id;
  int id = g.add_op(std::move(out), {ida}, [ida](Graph<T>& gr, int self) {
    if (!gr.requires_grad(ida)) return;
    const Tensor<T>& dy = gr.grad(self);
    const Tensor<T>& x = gr.value(ida);
    Tensor<T>& din = gr.grad(ida);
    // Gradient at exactly 0 is defined as 0.
    for (std::int64_t i = 0; i < dy.numel(); ++i)
      if (x.data[i] > T(0)) din.data[i] += dy.data[i];
  });
  return Var<T>{&g, id};
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  HDL_CHECK(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
            "matmul: shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Graph<T>& g = *a.graph;
  const std::int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<T> out({m, n});
  detail::gemm_acc(out.data.data(), g.value(a.id).data.data(), g.value(b.id).data.data(), m, k, n);
  int ida = a.id, idb = b.id;
  int id = g.add_op(std::move(out), {ida, idb}, [ida, idb, m, k, n](Graph<T>& gr, int self) {
    const T* dc = gr.grad(self).data.data();
    if (gr.requires_grad(ida)) {
      // dA = dC * B^T
      std::vector<T> bt(static_cast<std::size_t>(k * n));
      detail::transpose(bt.data(), gr.value(idb).data.data(), k, n);
      detail::gemm_acc(gr.grad(ida).data.data(), dc, bt.data(), m, n, k);
    }
    if (gr.requires_grad(idb)) {
      // dB = A^T * dC
      std::vector<T> at(static_cast<std::size_t>(m * k));
      detail::transpose(at.data(), gr.value(ida).data.data(), m, k);
      detail::gemm_acc(gr.grad(idb).data.data(), at.data(), dc, k, m, n);
    }
  });
  return Var<T>{&g, id};
}

// y = x * W^T + b with x:[m,in], W:[out,in], b:[out] broadcast across rows.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  HDL_CHECK(x.shape().size() == 2 && w.shape().size() == 2 && x.shape()[1] == w.shape()[1],
            "linear: input ", shape_str(x.shape()), " incompatible with weight ",
            shape_str(w.shape()));
  HDL_CHECK(b.shape().size() == 1 && b.shape()[0] == w.shape()[0],
            "linear: bias ", shape_str(b.shape()), " incompatible with weight ",
            shape_str(w.shape()));
  Graph<T>& g = *x.graph;
  const std::int64_t m = x.shape()[0], in = x.shape()[1], out_n = w.shape()[0];
  Tensor<T> out({m, out_n});
  std::vector<T> wt(static_cast<std::size_t>(in * out_n));
  detail::transpose(wt.data(), g.value(w.id).data.data(), out_n, in);
  detail::gemm_acc(out.data.data(), g.value(x.id).data.data(), wt.data(), m, in, out_n);
  const T* bias = g.value(b.id).data.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < out_n; ++j) out.data[static_cast<std::size_t>(i * out_n + j)] += bias[j];
  int idx = x.id, idw = w.id, idb = b.id;
  int id = g.add_op(std::move(out), {idx, idw, idb},
                    [idx, idw, idb, m, in, out_n](Graph<T>& gr, int self) {
    const T* dy = gr.grad(self).data.data();
    if (gr.requires_grad(idx)) {
      // dX = dY * W
      detail::gemm_acc(gr.grad(idx).data.data(), dy, gr.value(idw).data.data(), m, out_n, in);
    }
    if (gr.requires_grad(idw)) {
      // dW = dY^T * X
      std::vector<T> dyt(static_cast<std::size_t>(m * out_n));
      detail::transpose(dyt.data(), dy, m, out_n);
      detail::gemm_acc(gr.grad(idw).data.data(), dyt.data(), gr.value(idx).data.data(), out_n, m, in);
    }
    if (gr.requires_grad(idb)) {
      Tensor<T>& db = gr.grad(idb);
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < out_n; ++j) db.data[static_cast<std::size_t>(j)] += dy[i * out_n + j];
    }
  });
  return Var<T>{&g, id};
}

// ---------------------------------------------------------------------------
// Convolution / pooling
// ---------------------------------------------------------------------------

// Cross-correlation (no kernel flip), NCHW. bias may be a default Var (id < 0)
// to run without one.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::int64_t stride, std::int64_t pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  HDL_CHECK(xs.size() == 4 && ws.size() == 4, "conv2d: expected 4-d input and kernel, got ",
            shape_str(xs), " and ", shape_str(ws));
  HDL_CHECK(xs[1] == ws[1], "conv2d: channel mismatch ", shape_str(xs), " vs ", shape_str(ws));
  HDL_CHECK(stride >= 1, "conv2d: stride must be >= 1");
  HDL_CHECK(pad >= 0, "conv2d: padding must be >= 0");
  const std::int64_t n = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  const std::int64_t f = ws[0], kh = ws[2], kw = ws[3];
  HDL_CHECK(kh <= h + 2 * pad && kw <= wd + 2 * pad,
            "conv2d: kernel ", kh, "x", kw, " larger than padded input ", h + 2 * pad, "x",
            wd + 2 * pad);
  const std::int64_t ho = detail::conv_out_dim(h, kh, stride, pad);
  const std::int64_t wo = detail::conv_out_dim(wd, kw, stride, pad);
  const std::int64_t kdim = c * kh * kw, patch = ho * wo;

  Graph<T>& g = *x.graph;
  const bool has_bias = bias.id >= 0;
  Tensor<T> out({n, f, ho, wo});
  {
    std::vector<T> cols(static_cast<std::size_t>(kdim * patch));
    const T* xd = g.value(x.id).data.data();
    const T* wdta = g.value(w.id).data.data();
    for (std::int64_t img = 0; img < n; ++img) {
      detail::im2col(cols.data(), xd + img * c * h * wd, c, h, wd, kh, kw, stride, pad, ho, wo);
      detail::gemm_acc(out.data.data() + img * f * patch, wdta, cols.data(), f, kdim, patch);
    }
    if (has_bias) {
      const T* bd = g.value(bias.id).data.data();
      for (std::int64_t img = 0; img < n; ++img)
        for (std::int64_t fc = 0; fc < f; ++fc) {
          T* dst = out.data.data() + (img * f + fc) * patch;
          for (std::int64_t p = 0; p < patch; ++p) dst[p] += bd[fc];
        }
    }
  }

  std::vector<int> inputs = {x.id, w.id};
  if (has_bias) inputs.push_back(bias.id);
  int idx = x.id, idw = w.id, idb = bias.id;
  int id = g.add_op(std::move(out), std::move(inputs),
                    [idx, idw, idb, has_bias, n, c, h, wd, f, kh, kw, stride, pad, ho, wo, kdim,
                     patch](Graph<T>& gr, int self) {
    const T* dy = gr.grad(self).data.data();
    const bool need_dx = gr.requires_grad(idx);
    const bool need_dw = gr.requires_grad(idw);
    std::vector<T> cols(static_cast<std::size_t>(kdim * patch));
    std::vector<T> colst;
    std::vector<T> dcols;
    std::vector<T> wt;
    if (need_dw) colst.resize(static_cast<std::size_t>(kdim * patch));
    if (need_dx) {
      dcols.resize(static_cast<std::size_t>(kdim * patch));
      wt.resize(static_cast<std::size_t>(f * kdim));
      detail::transpose(wt.data(), gr.value(idw).data.data(), f, kdim);
    }
    const T* xd = gr.value(idx).data.data();
    T* dxd = need_dx ? gr.grad(idx).data.data() : nullptr;
    T* dwd = need_dw ? gr.grad(idw).data.data() : nullptr;
    for (std::int64_t img = 0; img < n; ++img) {
      const T* dyi = dy + img * f * patch;
      if (need_dw) {
        detail::im2col(cols.data(), xd + img * c * h * wd, c, h, wd, kh, kw, stride, pad, ho, wo);
        detail::transpose(colst.data(), cols.data(), kdim, patch);
        // dW += dY_img * cols^T
        detail::gemm_acc(dwd, dyi, colst.data(), f, patch, kdim);
      }
      if (need_dx) {
        std::fill(dcols.begin(), dcols.end(), T(0));
        // dcols = W^T * dY_img
        detail::gemm_acc(dcols.data(), wt.data(), dyi, kdim, f, patch);
        detail::col2im_acc(dxd + img * c * h * wd, dcols.data(), c, h, wd, kh, kw, stride, pad, ho,
                           wo);
      }
    }
    if (has_bias && gr.requires_grad(idb)) {
      Tensor<T>& db = gr.grad(idb);
      for (std::int64_t img = 0; img < n; ++img)
        for (std::int64_t fc = 0; fc < f; ++fc) {
          const T* src = dy + (img * f + fc) * patch;
          T acc = T(0);
          for (std::int64_t p = 0; p < patch; ++p) acc += src[p];
          db.data[static_cast<std::size_t>(fc)] += acc;
        }
    }
  });
  return Var<T>{&g, id};
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::int64_t stride, std::int64_t pad) {
  return conv2d(x, w, Var<T>{x.graph, -1}, stride, pad);
}

// Square-window max pooling; ties route the gradient to the first index in
// scan order.
template <typename T>
Var<T> max_pool2d(Var<T> x, std::int64_t window, std::int64_t stride) {
  const Shape& xs = x.shape();
  HDL_CHECK(xs.size() == 4, "max_pool2d: expected 4-d input, got ", shape_str(xs));
  const std::int64_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  HDL_CHECK(window >= 1 && window <= h && window <= w,
            "max_pool2d: window ", window, " exceeds input ", h, "x", w);
  HDL_CHECK(stride >= 1, "max_pool2d: stride must be >= 1");
  const std::int64_t ho = (h - window) / stride + 1;
  const std::int64_t wo = (w - window) / stride + 1;
  Graph<T>& g = *x.graph;
  Tensor<T> out({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * c * ho * wo));
  const T* xd = g.value(x.id).data.data();
  std::int64_t oi = 0;
  for (std::int64_t img = 0; img < n; ++img)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* plane = xd + (img * c + ch) * h * w;
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox, ++oi) {
          T best = plane[oy * stride * w + ox * stride];
          std::int64_t besti = oy * stride * w + ox * stride;
          for (std::int64_t i = 0; i < window; ++i)
            for (std::int64_t j = 0; j < window; ++j) {
              const std::int64_t idx = (oy * stride + i) * w + ox * stride + j;
              if (plane[idx] > best) {
                best = plane[idx];
                besti = idx;
              }
            }
          out.data[static_cast<std::size_t>(oi)] = best;
          (*argmax)[static_cast<std::size_t>(oi)] = (img * c + ch) * h * w + besti;
        }
    }
  int idx = x.id;
  int id = g.add_op(std::move(out), {idx}, [idx, argmax](Graph<T>& gr, int self) {
    if (!gr.requires_grad(idx)) return;
    const Tensor<T>& dy = gr.grad(self);
    Tensor<T>& dx = gr.grad(idx);
    for (std::int64_t i = 0; i < dy.numel(); ++i)
      dx.data[static_cast<std::size_t>((*argmax)[static_cast<std::size_t>(i)])] += dy.data[i];
  });
  return Var<T>{&g, id};
}

// [n,c,h,w] -> [n,c]: mean over spatial dims.
template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  const Shape& xs = x.shape();
  HDL_CHECK(xs.size() == 4, "global_avg_pool: expected 4-d input, got ", shape_str(xs));
  HDL_CHECK(xs[2] >= 1 && xs[3] >= 1, "global_avg_pool: empty spatial dims");
  const std::int64_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  Graph<T>& g = *x.graph;
  Tensor<T> out({n, c});
  const T* xd = g.value(x.id).data.data();
  for (std::int64_t i = 0; i < n * c; ++i) {
    T acc = T(0);
    for (std::int64_t p = 0; p < hw; ++p) acc += xd[i * hw + p];
    out.data[static_cast<std::size_t>(i)] = acc / static_cast<T>(hw);
  }
  int idx = x.id;
  int id = g.add_op(std::move(out), {idx}, [idx, n, c, hw](Graph<T>& gr, int self) {
    if (!gr.requires_grad(idx)) return;
    const Tensor<T>& dy = gr.grad(self);
    Tensor<T>& dx = gr.grad(idx);
    for (std::int64_t i = 0; i < n * c; ++i) {
      const T gshare = dy.data[static_cast<std::size_t>(i)] / static_cast<T>(hw);
      for (std::int64_t p = 0; p < hw; ++p) dx.data[static_cast<std::size_t>(i * hw + p)] += gshare;
    }
  });
  return Var<T>{&g, id};
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

// Per-channel standardization over (n, h, w). Training mode uses batch
// statistics (biased variance in the denominator) and, when update_running is
// set, folds them into the running stats with the given momentum (unbiased
// variance, matching the usual convention). Eval mode normalizes with the
// running stats. running_mean/running_var are owned by the caller.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum = T(0.1),
                  T eps = T(1e-5), bool update_running = true) {
  const Shape& xs = x.shape();
  HDL_CHECK(xs.size() == 4, "batch_norm: expected 4-d input, got ", shape_str(xs));
  const std::int64_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  HDL_CHECK(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
            "batch_norm: gamma/beta must have shape [", c, "]");
  HDL_CHECK(running_mean.shape == Shape{c} && running_var.shape == Shape{c},
            "batch_norm: running stats must have shape [", c, "]");
  HDL_CHECK(!training || n >= 2, "batch_norm: training mode requires batch size >= 2, got ", n);

  Graph<T>& g = *x.graph;
  const std::int64_t hw = h * w;
  const std::int64_t m = n * hw;  // elements per channel
  auto mu = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
  const T* xd = g.value(x.id).data.data();

  if (training) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      T s = T(0);
      for (std::int64_t img = 0; img < n; ++img) {
        const T* p = xd + (img * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) s += p[i];
      }
      const T mean_c = s / static_cast<T>(m);
      T v = T(0);
      for (std::int64_t img = 0; img < n; ++img) {
        const T* p = xd + (img * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const T d = p[i] - mean_c;
          v += d * d;
        }
      }
      const T var_c = v / static_cast<T>(m);
      (*mu)[static_cast<std::size_t>(ch)] = mean_c;
      (*inv_std)[static_cast<std::size_t>(ch)] = T(1) / std::sqrt(var_c + eps);
      if (update_running) {
        const T unbiased = m > 1 ? v / static_cast<T>(m - 1) : var_c;
        running_mean.data[static_cast<std::size_t>(ch)] =
            (T(1) - momentum) * running_mean.data[static_cast<std::size_t>(ch)] + momentum * mean_c;
        running_var.data[static_cast<std::size_t>(ch)] =
            (T(1) - momentum) * running_var.data[static_cast<std::size_t>(ch)] + momentum * unbiased;
      }
    }
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      (*mu)[static_cast<std::size_t>(ch)] = running_mean.data[static_cast<std::size_t>(ch)];
      (*inv_std)[static_cast<std::size_t>(ch)] =
          T(1) / std::sqrt(running_var.data[static_cast<std::size_t>(ch)] + eps);
    }
  }

  Tensor<T> out(xs);
  const T* gm = g.value(gamma.id).data.data();
  const T* bt = g.value(beta.id).data.data();
  for (std::int64_t img = 0; img < n; ++img)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* src = xd + (img * c + ch) * hw;
      T* dst = out.data.data() + (img * c + ch) * hw;
      const T mc = (*mu)[static_cast<std::size_t>(ch)];
      const T is = (*inv_std)[static_cast<std::size_t>(ch)];
      const T gc = gm[ch], bc = bt[ch];
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mc) * is * gc + bc;
    }

  int idx = x.id, idg = gamma.id, idb = beta.id;
  int id = g.add_op(std::move(out), {idx, idg, idb},
                    [idx, idg, idb, mu, inv_std, training, n, c, hw, m](Graph<T>& gr, int self) {
    const T* dy = gr.grad(self).data.data();
    const T* xd2 = gr.value(idx).data.data();
    const T* gm2 = gr.value(idg).data.data();
    const bool need_dx = gr.requires_grad(idx);
    const bool need_dg = gr.requires_grad(idg);
    const bool need_db = gr.requires_grad(idb);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T mc = (*mu)[static_cast<std::size_t>(ch)];
      const T is = (*inv_std)[static_cast<std::size_t>(ch)];
      T sum_dy = T(0), sum_dy_xhat = T(0);
      for (std::int64_t img = 0; img < n; ++img) {
        const T* dyp = dy + (img * c + ch) * hw;
        const T* xp = xd2 + (img * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          sum_dy += dyp[i];
          sum_dy_xhat += dyp[i] * (xp[i] - mc) * is;
        }
      }
      if (need_dg) gr.grad(idg).data[static_cast<std::size_t>(ch)] += sum_dy_xhat;
      if (need_db) gr.grad(idb).data[static_cast<std::size_t>(ch)] += sum_dy;
      if (!need_dx) continue;
      Tensor<T>& dx = gr.grad(idx);
      const T gc = gm2[ch];
      if (training) {
        // dx = gamma*inv_std/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
        const T k = gc * is / static_cast<T>(m);
        for (std::int64_t img = 0; img < n; ++img) {
          const T* dyp = dy + (img * c + ch) * hw;
          const T* xp = xd2 + (img * c + ch) * hw;
          T* dxp = dx.data.data() + (img * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            const T xhat = (xp[i] - mc) * is;
            dxp[i] += k * (static_cast<T>(m) * dyp[i] - sum_dy - xhat * sum_dy_xhat);
          }
        }
      } else {
        const T k = gc * is;
        for (std::int64_t img = 0; img < n; ++img) {
          const T* dyp = dy + (img * c + ch) * hw;
          T* dxp = dx.data.data() + (img * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) dxp[i] += k * dyp[i];
        }
      }
    }
  });
  return Var<T>{&g, id};
}

// ---------------------------------------------------------------------------
// Softmax / losses
// ---------------------------------------------------------------------------

// Row-wise softmax over the last dimension of a [m,n] tensor (non-graph).
template <typename T>
void softmax_rows(const T* logits, T* probs, std::int64_t m, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* row = logits + i * n;
    T* prow = probs + i * n;
    T mx = row[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T s = T(0);
    for (std::int64_t j = 0; j < n; ++j) {
      prow[j] = std::exp(row[j] - mx);
      s += prow[j];
    }
    for (std::int64_t j = 0; j < n; ++j) prow[j] /= s;
  }
}

// Differentiable row-wise softmax (used by the post-softmax cascade option).
template <typename T>
Var<T> softmax(Var<T> x) {
  const Shape& xs = x.shape();
  HDL_CHECK(xs.size() == 2, "softmax: expected 2-d input, got ", shape_str(xs));
  const std::int64_t m = xs[0], n = xs[1];
  Graph<T>& g = *x.graph;
  Tensor<T> out(xs);
  softmax_rows(g.value(x.id).data.data(), out.data.data(), m, n);
  int idx = x.id;
  int id = g.add_op(std::move(out), {idx}, [idx, m, n](Graph<T>& gr, int self) {
    if (!gr.requires_grad(idx)) return;
    const Tensor<T>& y = gr.value(self);
    const Tensor<T>& dy = gr.grad(self);
    Tensor<T>& dx = gr.grad(idx);
    for (std::int64_t i = 0; i < m; ++i) {
      const T* yr = y.data.data() + i * n;
      const T* dyr = dy.data.data() + i * n;
      T dot = T(0);
      for (std::int64_t j = 0; j < n; ++j) dot += yr[j] * dyr[j];
      T* dxr = dx.data.data() + i * n;
      for (std::int64_t j = 0; j < n; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
    }
  });
  return Var<T>{&g, id};
}

// Mean over the batch of -log softmax(logits)[label], stabilized by
// max-subtraction. Backward: (softmax - onehot) / m.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<std::int64_t>& labels) {
  const Shape& ls = logits.shape();
  HDL_CHECK(ls.size() == 2, "softmax_cross_entropy: expected 2-d logits, got ", shape_str(ls));
  const std::int64_t m = ls[0], n = ls[1];
  HDL_CHECK(static_cast<std::int64_t>(labels.size()) == m,
            "softmax_cross_entropy: ", labels.size(), " labels for ", m, " rows");
  for (std::int64_t lab : labels)
    HDL_CHECK(lab >= 0 && lab < n, "softmax_cross_entropy: label ", lab, " out of range [0,", n, ")");

  Graph<T>& g = *logits.graph;
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(m * n));
  softmax_rows(g.value(logits.id).data.data(), probs->data(), m, n);
  const T* ld = g.value(logits.id).data.data();
  T loss = T(0);
  for (std::int64_t i = 0; i < m; ++i) {
    const T* row = ld + i * n;
    T mx = row[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T s = T(0);
    for (std::int64_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    loss -= row[labels[static_cast<std::size_t>(i)]] - mx - std::log(s);
  }
  loss /= static_cast<T>(m);

  auto labels_copy = std::make_shared<std::vector<std::int64_t>>(labels);
  int idl = logits.id;
  int id = g.add_op(Tensor<T>::scalar(loss), {idl},
                    [idl, probs, labels_copy, m, n](Graph<T>& gr, int self) {
    if (!gr.requires_grad(idl)) return;
    const T dy = gr.grad(self).data[0];
    Tensor<T>& dx = gr.grad(idl);
    const T invm = dy / static_cast<T>(m);
    for (std::int64_t i = 0; i < m; ++i) {
      const T* pr = probs->data() + i * n;
      T* dxr = dx.data.data() + i * n;
      for (std::int64_t j = 0; j < n; ++j) dxr[j] += pr[j] * invm;
      dxr[(*labels_copy)[static_cast<std::size_t>(i)]] -= invm;
    }
  });
  return Var<T>{&g, id};
}

// Sum over the batch of squared distances to the per-class centers. Centers
// are constants in the graph; gradient w.r.t. features is 2*(x - c_y)
// (scaled by 1/m when normalize is set).
template <typename T>
Var<T> center_loss(Var<T> features, const std::vector<std::int64_t>& labels,
                   const Tensor<T>& centers, bool normalize = false) {
  const Shape& fs = features.shape();
  HDL_CHECK(fs.size() == 2, "center_loss: expected 2-d features, got ", shape_str(fs));
  HDL_CHECK(centers.rank() == 2 && centers.shape[1] == fs[1],
            "center_loss: centers ", shape_str(centers.shape), " incompatible with features ",
            shape_str(fs));
  const std::int64_t m = fs[0], d = fs[1], k = centers.shape[0];
  HDL_CHECK(static_cast<std::int64_t>(labels.size()) == m,
            "center_loss: ", labels.size(), " labels for ", m, " rows");
  for (std::int64_t lab : labels)
    HDL_CHECK(lab >= 0 && lab < k, "center_loss: label ", lab, " out of range [0,", k, ")");

  Graph<T>& g = *features.graph;
  const T* fd = g.value(features.id).data.data();
  T loss = T(0);
  for (std::int64_t i = 0; i < m; ++i) {
    const T* cy = centers.data.data() + labels[static_cast<std::size_t>(i)] * d;
    const T* xi = fd + i * d;
    for (std::int64_t j = 0; j < d; ++j) {
      const T diff = xi[j] - cy[j];
      loss += diff * diff;
    }
  }
  const T norm = normalize ? T(1) / static_cast<T>(m) : T(1);
  loss *= norm;

  auto labels_copy = std::make_shared<std::vector<std::int64_t>>(labels);
  auto centers_copy = std::make_shared<Tensor<T>>(centers);
  int idf = features.id;
  int id = g.add_op(Tensor<T>::scalar(loss), {idf},
                    [idf, labels_copy, centers_copy, m, d, norm](Graph<T>& gr, int self) {
    if (!gr.requires_grad(idf)) return;
    const T dy = gr.grad(self).data[0] * norm;
    const T* fd2 = gr.value(idf).data.data();
    Tensor<T>& dx = gr.grad(idf);
    for (std::int64_t i = 0; i < m; ++i) {
      const T* cy = centers_copy->data.data() + (*labels_copy)[static_cast<std::size_t>(i)] * d;
      const T* xi = fd2 + i * d;
      T* dxi = dx.data.data() + i * d;
      for (std::int64_t j = 0; j < d; ++j) dxi[j] += T(2) * (xi[j] - cy[j]) * dy;
    }
  });
  return Var<T>{&g, id};
}

}  // namespace ops
}  // namespace hdl
