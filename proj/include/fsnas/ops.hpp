#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "fsnas/rng.hpp"
#include "fsnas/tape.hpp"
#include "fsnas/tensor.hpp"

namespace fsnas {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<MatRM<S>>;
template <typename S>
using MapCM = Eigen::Map<const MatRM<S>>;
template <typename S>
using MapA = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using MapCA = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

namespace detail {

template <typename S>
bool should_record(std::initializer_list<const Tensor<S>*> inputs) {
  if (!Tape<S>::recording()) return false;
  for (const Tensor<S>* t : inputs)
    if (Tape<S>::wants_adjoint(t->impl())) return true;
  return false;
}

// Gathers conv patches of one NCHW batch into a [Cin*k*k, N*Ho*Wo] matrix.
template <typename S>
void im2col(const S* x, int n_batch, int cin, int h, int w, int k, int stride,
            int pad, int ho, int wo, std::vector<S>& cols) {
  const std::int64_t span = static_cast<std::int64_t>(n_batch) * ho * wo;
  cols.assign(static_cast<std::size_t>(cin) * k * k * span, S(0));
  for (int n = 0; n < n_batch; ++n) {
    const S* xn = x + static_cast<std::int64_t>(n) * cin * h * w;
    for (int c = 0; c < cin; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const std::int64_t row = (static_cast<std::int64_t>(c) * k + ky) * k + kx;
          S* dst = cols.data() + row * span + static_cast<std::int64_t>(n) * ho * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) {
              dst += wo;
              continue;
            }
            const S* src = xn + (static_cast<std::int64_t>(c) * h + iy) * w;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride + kx - pad;
              *dst++ = (ix >= 0 && ix < w) ? src[ix] : S(0);
            }
          }
        }
      }
    }
  }
}

// Scatter-adds a [Cin*k*k, N*Ho*Wo] column-gradient back onto the input.
template <typename S>
void col2im_add(const S* cols, int n_batch, int cin, int h, int w, int k,
                int stride, int pad, int ho, int wo, S* dx) {
  const std::int64_t span = static_cast<std::int64_t>(n_batch) * ho * wo;
  for (int n = 0; n < n_batch; ++n) {
    S* dxn = dx + static_cast<std::int64_t>(n) * cin * h * w;
    for (int c = 0; c < cin; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const std::int64_t row = (static_cast<std::int64_t>(c) * k + ky) * k + kx;
          const S* src = cols + row * span + static_cast<std::int64_t>(n) * ho * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) {
              src += wo;
              continue;
            }
            S* dst = dxn + (static_cast<std::int64_t>(c) * h + iy) * w;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < w) dst[ix] += *src;
              ++src;
            }
          }
        }
      }
    }
  }
}

// [N,Cout,Ho,Wo] <-> [Cout, N*Ho*Wo] repacking around the GEMM.
template <typename S>
void scatter_rows_to_nchw(const S* mat, int n_batch, int cout, int hw, S* out) {
  for (int c = 0; c < cout; ++c) {
    const S* row = mat + static_cast<std::int64_t>(c) * n_batch * hw;
    for (int n = 0; n < n_batch; ++n) {
      std::memcpy(out + (static_cast<std::int64_t>(n) * cout + c) * hw,
                  row + static_cast<std::int64_t>(n) * hw,
                  sizeof(S) * static_cast<std::size_t>(hw));
    }
  }
}

template <typename S>
void gather_nchw_to_rows(const S* nchw, int n_batch, int cout, int hw, S* mat) {
  for (int c = 0; c < cout; ++c) {
    S* row = mat + static_cast<std::int64_t>(c) * n_batch * hw;
    for (int n = 0; n < n_batch; ++n) {
      std::memcpy(row + static_cast<std::int64_t>(n) * hw,
                  nchw + (static_cast<std::int64_t>(n) * cout + c) * hw,
                  sizeof(S) * static_cast<std::size_t>(hw));
    }
  }
}

}  // namespace detail

// Cross-correlation with zero padding, implemented as im2col + GEMM. The
// naive reference used to validate it lives in the test suite.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, int stride,
                 int padding) {
  check(input.ndim() == 4, ErrorCode::Dimension,
        "conv2d input must be NCHW, got " + shape_str(input.shape()));
  check(weight.ndim() == 4, ErrorCode::Dimension,
        "conv2d weight must be [Cout,Cin,k,k], got " + shape_str(weight.shape()));
  check(stride >= 1, ErrorCode::Usage, "conv2d stride must be >= 1");
  check(padding >= 0, ErrorCode::Usage, "conv2d padding must be >= 0");
  const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  check(weight.dim(2) == weight.dim(3), ErrorCode::Dimension,
        "conv2d kernel must be square");
  check(k >= 1, ErrorCode::Usage, "conv2d kernel size must be >= 1");
  check(weight.dim(1) == cin, ErrorCode::Dimension,
        "conv2d Cin mismatch: input has " + std::to_string(cin) +
            ", weight expects " + std::to_string(weight.dim(1)));
  const int ho = (h + 2 * padding - k) / stride + 1;
  const int wo = (w + 2 * padding - k) / stride + 1;
  check(h + 2 * padding - k >= 0 && w + 2 * padding - k >= 0 && ho > 0 && wo > 0,
        ErrorCode::Config, "conv2d produces non-positive output dims");

  Tensor<S> out({n, cout, ho, wo});
  const std::int64_t span = static_cast<std::int64_t>(n) * ho * wo;
  const int ck2 = cin * k * k;
  {
    std::vector<S> cols;
    detail::im2col(input.data(), n, cin, h, w, k, stride, padding, ho, wo, cols);
    std::vector<S> prod(static_cast<std::size_t>(cout) * span);
    MapCM<S> wm(weight.data(), cout, ck2);
    MapCM<S> cm(cols.data(), ck2, span);
    MapM<S> pm(prod.data(), cout, span);
    pm.noalias() = wm * cm;
    detail::scatter_rows_to_nchw(prod.data(), n, cout, ho * wo, out.data());
  }

  if (detail::should_record<S>({&input, &weight})) {
    Tensor<S> x = input, wt = weight, y = out;
    int s = stride, p = padding;
    Tape<S>::active()->record(out, [x, wt, y, s, p, n, cin, h, w, cout, k, ho,
                                    wo, ck2, span](Tape<S>& tp) {
      const std::vector<S>& dy = tp.adjoint_of(y.impl());
      std::vector<S> dy_rows(static_cast<std::size_t>(cout) * span);
      detail::gather_nchw_to_rows(dy.data(), n, cout, ho * wo, dy_rows.data());
      MapCM<S> dym(dy_rows.data(), cout, span);
      MapCM<S> wm(wt.data(), cout, ck2);
      const bool need_dw = Tape<S>::wants_adjoint(wt.impl());
      const bool need_dx = Tape<S>::wants_adjoint(x.impl());
      std::vector<S> cols;
      if (need_dw) {
        detail::im2col(x.data(), n, cin, h, w, k, s, p, ho, wo, cols);
        MapCM<S> cm(cols.data(), ck2, span);
        std::vector<S> dw(wt.values().size());
        MapM<S> dwm(dw.data(), cout, ck2);
        dwm.noalias() = dym * cm.transpose();
        tp.accumulate(wt.handle(), dw);
      }
      if (need_dx) {
        std::vector<S> dcols(static_cast<std::size_t>(ck2) * span);
        MapM<S> dcm(dcols.data(), ck2, span);
        dcm.noalias() = wm.transpose() * dym;
        std::vector<S> dx(x.values().size(), S(0));
        detail::col2im_add(dcols.data(), n, cin, h, w, k, s, p, ho, wo, dx.data());
        tp.accumulate(x.handle(), dx);
      }
    });
  }
  return out;
}

// input [N,F] * weight [O,F]^T + bias [O]
template <typename S>
Tensor<S> linear(const Tensor<S>& input, const Tensor<S>& weight,
                 const Tensor<S>& bias) {
  check(input.ndim() == 2 && weight.ndim() == 2 && bias.ndim() == 1,
        ErrorCode::Dimension, "linear expects input [N,F], weight [O,F], bias [O]");
  const int n = input.dim(0), f = input.dim(1), o = weight.dim(0);
  check(weight.dim(1) == f, ErrorCode::Dimension,
        "linear feature dims disagree: input F=" + std::to_string(f) +
            ", weight F=" + std::to_string(weight.dim(1)));
  check(bias.dim(0) == o, ErrorCode::Dimension, "linear bias size mismatch");

  Tensor<S> out({n, o});
  {
    MapCM<S> xm(input.data(), n, f);
    MapCM<S> wm(weight.data(), o, f);
    MapM<S> ym(out.data(), n, o);
    ym.noalias() = xm * wm.transpose();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < o; ++j) out.data()[i * o + j] += bias.data()[j];
  }

  if (detail::should_record<S>({&input, &weight, &bias})) {
    Tensor<S> x = input, wt = weight, b = bias, y = out;
    Tape<S>::active()->record(out, [x, wt, b, y, n, f, o](Tape<S>& tp) {
      const std::vector<S>& dyv = tp.adjoint_of(y.impl());
      MapCM<S> dym(dyv.data(), n, o);
      if (Tape<S>::wants_adjoint(wt.impl())) {
        std::vector<S> dw(wt.values().size());
        MapM<S> dwm(dw.data(), o, f);
        MapCM<S> xm(x.data(), n, f);
        dwm.noalias() = dym.transpose() * xm;
        tp.accumulate(wt.handle(), dw);
      }
      if (Tape<S>::wants_adjoint(b.impl())) {
        std::vector<S> db(static_cast<std::size_t>(o), S(0));
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < o; ++j) db[j] += dyv[i * o + j];
        tp.accumulate(b.handle(), db);
      }
      if (Tape<S>::wants_adjoint(x.impl())) {
        std::vector<S> dx(x.values().size());
        MapM<S> dxm(dx.data(), n, f);
        MapCM<S> wm(wt.data(), o, f);
        dxm.noalias() = dym * wm;
        tp.accumulate(x.handle(), dx);
      }
    });
  }
  return out;
}

enum class BnMode { Train, Eval, Recalibrate };

// Running statistics of one batch-norm layer, sized to the owning layer's
// channel capacity; ops touch only the first C entries of each buffer.
template <typename S>
struct BnStats {
  std::vector<S> running_mean;
  std::vector<S> running_var;
  std::int64_t recal_count = 0;

  explicit BnStats(int capacity = 0)
      : running_mean(static_cast<std::size_t>(capacity), S(0)),
        running_var(static_cast<std::size_t>(capacity), S(1)) {}

  int capacity() const { return static_cast<int>(running_mean.size()); }
  void reset() {
    std::fill(running_mean.begin(), running_mean.end(), S(0));
    std::fill(running_var.begin(), running_var.end(), S(1));
    recal_count = 0;
  }
};

// gamma/beta are the active [C] slices. Train mode normalizes by batch
// statistics (biased variance) and folds them into the running buffers with
// momentum; eval mode uses the running buffers; recalibrate mode normalizes
// by batch statistics and updates the running buffers as a cumulative
// average without recording gradients.
template <typename S>
Tensor<S> batch_norm2d(const Tensor<S>& input, const Tensor<S>& gamma,
                       const Tensor<S>& beta, BnStats<S>& stats, BnMode mode,
                       S momentum = S(0.1), S eps = S(1e-5)) {
  check(input.ndim() == 4, ErrorCode::Dimension,
        "batch_norm2d input must be NCHW");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  check(gamma.ndim() == 1 && beta.ndim() == 1 && gamma.dim(0) == c &&
            beta.dim(0) == c,
        ErrorCode::Dimension, "batch_norm2d gamma/beta must be [C]");
  check(c <= stats.capacity(), ErrorCode::Capacity,
        "batch_norm2d channel count " + std::to_string(c) +
            " exceeds stats capacity " + std::to_string(stats.capacity()));

  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t cnt = static_cast<std::int64_t>(n) * plane;
  Tensor<S> out({n, c, h, w});

  std::vector<S> mean(static_cast<std::size_t>(c), S(0));
  std::vector<S> invstd(static_cast<std::size_t>(c), S(0));

  if (mode == BnMode::Train || mode == BnMode::Recalibrate) {
    std::vector<S> var(static_cast<std::size_t>(c), S(0));
    for (int ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (int b = 0; b < n; ++b) {
        const S* p = input.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      }
      const double mu = acc / static_cast<double>(cnt);
      double vacc = 0.0;
      for (int b = 0; b < n; ++b) {
        const S* p = input.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          vacc += d * d;
        }
      }
      mean[ch] = static_cast<S>(mu);
      var[ch] = static_cast<S>(vacc / static_cast<double>(cnt));
      invstd[ch] = S(1) / std::sqrt(var[ch] + eps);
    }
    if (mode == BnMode::Train) {
      for (int ch = 0; ch < c; ++ch) {
        stats.running_mean[ch] = (S(1) - momentum) * stats.running_mean[ch] +
                                 momentum * mean[ch];
        stats.running_var[ch] = (S(1) - momentum) * stats.running_var[ch] +
                                momentum * var[ch];
      }
    } else {
      const S k = S(1) / static_cast<S>(stats.recal_count + 1);
      for (int ch = 0; ch < c; ++ch) {
        if (stats.recal_count == 0) {
          stats.running_mean[ch] = mean[ch];
          stats.running_var[ch] = var[ch];
        } else {
          stats.running_mean[ch] += k * (mean[ch] - stats.running_mean[ch]);
          stats.running_var[ch] += k * (var[ch] - stats.running_var[ch]);
        }
      }
      stats.recal_count += 1;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = stats.running_mean[ch];
      invstd[ch] = S(1) / std::sqrt(stats.running_var[ch] + eps);
    }
  }

  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const S* p = input.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
      S* q = out.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
      const S a = gamma.data()[ch] * invstd[ch];
      const S o = beta.data()[ch] - a * mean[ch];
      for (std::int64_t i = 0; i < plane; ++i) q[i] = a * p[i] + o;
    }
  }

  if (mode != BnMode::Recalibrate &&
      detail::should_record<S>({&input, &gamma, &beta})) {
    Tensor<S> x = input, g = gamma, bt = beta, y = out;
    const bool train = (mode == BnMode::Train);
    Tape<S>::active()->record(
        out, [x, g, bt, y, mean, invstd, train, n, c, plane, cnt](Tape<S>& tp) {
          const std::vector<S>& dy = tp.adjoint_of(y.impl());
          std::vector<S> dgamma(static_cast<std::size_t>(c), S(0));
          std::vector<S> dbeta(static_cast<std::size_t>(c), S(0));
          std::vector<S> sum_dy(static_cast<std::size_t>(c), S(0));
          std::vector<S> sum_dy_xhat(static_cast<std::size_t>(c), S(0));
          for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < c; ++ch) {
              const std::int64_t base = (static_cast<std::int64_t>(b) * c + ch) * plane;
              const S* xp = x.data() + base;
              const S* dp = dy.data() + base;
              S sd = 0, sdx = 0;
              for (std::int64_t i = 0; i < plane; ++i) {
                const S xhat = (xp[i] - mean[ch]) * invstd[ch];
                sd += dp[i];
                sdx += dp[i] * xhat;
              }
              sum_dy[ch] += sd;
              sum_dy_xhat[ch] += sdx;
            }
          }
          for (int ch = 0; ch < c; ++ch) {
            dbeta[ch] = sum_dy[ch];
            dgamma[ch] = sum_dy_xhat[ch];
          }
          if (Tape<S>::wants_adjoint(x.impl())) {
            std::vector<S> dx(x.values().size());
            for (int b = 0; b < n; ++b) {
              for (int ch = 0; ch < c; ++ch) {
                const std::int64_t base = (static_cast<std::int64_t>(b) * c + ch) * plane;
                const S* xp = x.data() + base;
                const S* dp = dy.data() + base;
                S* dq = dx.data() + base;
                const S a = g.data()[ch] * invstd[ch];
                if (train) {
                  const S m_dy = sum_dy[ch] / static_cast<S>(cnt);
                  const S m_dyx = sum_dy_xhat[ch] / static_cast<S>(cnt);
                  for (std::int64_t i = 0; i < plane; ++i) {
                    const S xhat = (xp[i] - mean[ch]) * invstd[ch];
                    dq[i] = a * (dp[i] - m_dy - xhat * m_dyx);
                  }
                } else {
                  for (std::int64_t i = 0; i < plane; ++i) dq[i] = a * dp[i];
                }
              }
            }
            tp.accumulate(x.handle(), dx);
          }
          if (Tape<S>::wants_adjoint(g.impl())) tp.accumulate(g.handle(), dgamma);
          if (Tape<S>::wants_adjoint(bt.impl())) tp.accumulate(bt.handle(), dbeta);
        });
  }
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& input) {
  Tensor<S> out(input.shape());
  const std::size_t n = input.values().size();
  for (std::size_t i = 0; i < n; ++i)
    out.data()[i] = input.data()[i] > S(0) ? input.data()[i] : S(0);
  if (detail::should_record<S>({&input})) {
    Tensor<S> x = input, y = out;
    Tape<S>::active()->record(out, [x, y, n](Tape<S>& tp) {
      const std::vector<S>& dy = tp.adjoint_of(y.impl());
      std::vector<S> dx(n);
      for (std::size_t i = 0; i < n; ++i)
        dx[i] = x.data()[i] > S(0) ? dy[i] : S(0);
      tp.accumulate(x.handle(), dx);
    });
  }
  return out;
}

// Elementwise sum, used for the residual join.
template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.shape() == b.shape(), ErrorCode::Dimension,
        "add shape mismatch: " + shape_str(a.shape()) + " vs " +
            shape_str(b.shape()));
  Tensor<S> out(a.shape());
  const std::size_t n = a.values().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (detail::should_record<S>({&a, &b})) {
    Tensor<S> ta = a, tb = b, y = out;
    Tape<S>::active()->record(out, [ta, tb, y](Tape<S>& tp) {
      const std::vector<S>& dy = tp.adjoint_of(y.impl());
      if (Tape<S>::wants_adjoint(ta.impl())) tp.accumulate(ta.handle(), dy);
      if (Tape<S>::wants_adjoint(tb.impl())) tp.accumulate(tb.handle(), dy);
    });
  }
  return out;
}

// [N,C,H,W] -> [N,C] spatial mean.
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& input) {
  check(input.ndim() == 4, ErrorCode::Dimension, "global_avg_pool expects NCHW");
  const int n = input.dim(0), c = input.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(input.dim(2)) * input.dim(3);
  Tensor<S> out({n, c});
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const S* p = input.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
      double acc = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      out.data()[b * c + ch] = static_cast<S>(acc / static_cast<double>(plane));
    }
  }
  if (detail::should_record<S>({&input})) {
    Tensor<S> x = input, y = out;
    Tape<S>::active()->record(out, [x, y, n, c, plane](Tape<S>& tp) {
      const std::vector<S>& dy = tp.adjoint_of(y.impl());
      std::vector<S> dx(x.values().size());
      const S inv = S(1) / static_cast<S>(plane);
      for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
          const S g = dy[b * c + ch] * inv;
          S* dst = dx.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
          for (std::int64_t i = 0; i < plane; ++i) dst[i] = g;
        }
      tp.accumulate(x.handle(), dx);
    });
  }
  return out;
}

// Inverted dropout: kept activations are scaled by 1/(1-p) at train time so
// eval needs no rescaling. Inactive (or p == 0) passes the tensor through.
template <typename S>
Tensor<S> dropout(const Tensor<S>& input, double p, bool active, Rng& rng) {
  check(p >= 0.0 && p < 1.0, ErrorCode::Usage, "dropout p must be in [0, 1)");
  if (!active || p == 0.0) return input;
  const std::size_t n = input.values().size();
  std::vector<S> mask(n);
  const S scale = static_cast<S>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < n; ++i)
    mask[i] = rng.uniform() < p ? S(0) : scale;
  Tensor<S> out(input.shape());
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = input.data()[i] * mask[i];
  if (detail::should_record<S>({&input})) {
    Tensor<S> x = input, y = out;
    Tape<S>::active()->record(out, [x, y, mask, n](Tape<S>& tp) {
      const std::vector<S>& dy = tp.adjoint_of(y.impl());
      std::vector<S> dx(n);
      for (std::size_t i = 0; i < n; ++i) dx[i] = dy[i] * mask[i];
      tp.accumulate(x.handle(), dx);
    });
  }
  return out;
}

// Row-wise softmax over [N,K].
template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
  check(logits.ndim() == 2, ErrorCode::Dimension, "softmax expects [N,K]");
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor<S> out({n, k});
  for (int i = 0; i < n; ++i) {
    const S* p = logits.data() + static_cast<std::int64_t>(i) * k;
    S* q = out.data() + static_cast<std::int64_t>(i) * k;
    S m = p[0];
    for (int j = 1; j < k; ++j) m = std::max(m, p[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(p[j] - m));
    for (int j = 0; j < k; ++j)
      q[j] = static_cast<S>(std::exp(static_cast<double>(p[j] - m)) / z);
  }
  if (detail::should_record<S>({&logits})) {
    Tensor<S> x = logits, y = out;
    Tape<S>::active()->record(out, [x, y, n, k](Tape<S>& tp) {
      const std::vector<S>& dy = tp.adjoint_of(y.impl());
      std::vector<S> dx(x.values().size());
      for (int i = 0; i < n; ++i) {
        const S* yv = y.data() + static_cast<std::int64_t>(i) * k;
        const S* dv = dy.data() + static_cast<std::int64_t>(i) * k;
        S dot = 0;
        for (int j = 0; j < k; ++j) dot += dv[j] * yv[j];
        S* q = dx.data() + static_cast<std::int64_t>(i) * k;
        for (int j = 0; j < k; ++j) q[j] = yv[j] * (dv[j] - dot);
      }
      tp.accumulate(x.handle(), dx);
    });
  }
  return out;
}

namespace detail {
// Row-wise log-softmax into `out` (double intermediates for stability).
template <typename S>
void log_softmax_rows(const S* logits, int n, int k, std::vector<S>& out) {
  out.resize(static_cast<std::size_t>(n) * k);
  for (int i = 0; i < n; ++i) {
    const S* p = logits + static_cast<std::int64_t>(i) * k;
    S* q = out.data() + static_cast<std::int64_t>(i) * k;
    S m = p[0];
    for (int j = 1; j < k; ++j) m = std::max(m, p[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(p[j] - m));
    const double lse = static_cast<double>(m) + std::log(z);
    for (int j = 0; j < k; ++j) q[j] = static_cast<S>(p[j] - lse);
  }
}
}  // namespace detail

// Mean over the batch of -log softmax(logits)[label].
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
  check(logits.ndim() == 2, ErrorCode::Dimension, "cross_entropy expects [N,K]");
  const int n = logits.dim(0), k = logits.dim(1);
  check(static_cast<int>(labels.size()) == n, ErrorCode::Dimension,
        "cross_entropy label count mismatch");
  for (int i = 0; i < n; ++i)
    check(labels[i] >= 0 && labels[i] < k, ErrorCode::Input,
          "label " + std::to_string(labels[i]) + " out of range [0," +
              std::to_string(k) + ")");
  std::vector<S> logp;
  detail::log_softmax_rows(logits.data(), n, k, logp);
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    acc -= static_cast<double>(logp[static_cast<std::size_t>(i) * k + labels[i]]);
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc / n));
  if (detail::should_record<S>({&logits})) {
    Tensor<S> x = logits, y = out;
    Tape<S>::active()->record(out, [x, y, logp, labels, n, k](Tape<S>& tp) {
      const S g = tp.adjoint_of(y.impl())[0];
      std::vector<S> dx(x.values().size());
      const S invn = S(1) / static_cast<S>(n);
      for (int i = 0; i < n; ++i) {
        const S* lp = logp.data() + static_cast<std::int64_t>(i) * k;
        S* q = dx.data() + static_cast<std::int64_t>(i) * k;
        for (int j = 0; j < k; ++j) {
          const S p = std::exp(lp[j]);
          q[j] = g * invn * (p - (labels[i] == j ? S(1) : S(0)));
        }
      }
      tp.accumulate(x.handle(), dx);
    });
  }
  return out;
}

// Mean over the batch of KL(softmax(teacher) || softmax(student)). The
// teacher is treated as a constant: no gradient flows into it.
template <typename S>
Tensor<S> kl_distill(const Tensor<S>& student_logits,
                     const Tensor<S>& teacher_logits) {
  check(student_logits.ndim() == 2 && teacher_logits.ndim() == 2 &&
            student_logits.shape() == teacher_logits.shape(),
        ErrorCode::Dimension, "kl_distill shape mismatch: " +
                                  shape_str(student_logits.shape()) + " vs " +
                                  shape_str(teacher_logits.shape()));
  const int n = student_logits.dim(0), k = student_logits.dim(1);
  std::vector<S> ls, lt;
  detail::log_softmax_rows(student_logits.data(), n, k, ls);
  detail::log_softmax_rows(teacher_logits.data(), n, k, lt);
  double acc = 0.0;
  for (std::size_t i = 0; i < ls.size(); ++i) {
    const double pt = std::exp(static_cast<double>(lt[i]));
    acc += pt * (static_cast<double>(lt[i]) - static_cast<double>(ls[i]));
  }
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc / n));
  if (detail::should_record<S>({&student_logits})) {
    Tensor<S> x = student_logits, y = out;
    Tape<S>::active()->record(out, [x, y, ls, lt, n, k](Tape<S>& tp) {
      const S g = tp.adjoint_of(y.impl())[0];
      std::vector<S> dx(x.values().size());
      const S invn = S(1) / static_cast<S>(n);
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const S ps = std::exp(ls[i]);
        const S pt = std::exp(lt[i]);
        dx[i] = g * invn * (ps - pt);
      }
      tp.accumulate(x.handle(), dx);
    });
  }
  return out;
}

// Prefix slice of a conv weight: out = w[0:cout, 0:cin, :, :]. Returns the
// original tensor when the slice covers it entirely, so full-width paths
// cost nothing and gradients land directly in the parameter.
template <typename S>
Tensor<S> prefix_slice4(const Tensor<S>& w, int cout, int cin) {
  check(w.ndim() == 4, ErrorCode::Dimension, "prefix_slice4 expects 4-d tensor");
  const int co = w.dim(0), ci = w.dim(1), k1 = w.dim(2), k2 = w.dim(3);
  check(cout >= 1 && cout <= co && cin >= 1 && cin <= ci, ErrorCode::Capacity,
        "prefix_slice4 slice [" + std::to_string(cout) + "," +
            std::to_string(cin) + "] exceeds capacity " + shape_str(w.shape()));
  if (cout == co && cin == ci) return w;
  Tensor<S> out({cout, cin, k1, k2});
  const std::int64_t kk = static_cast<std::int64_t>(k1) * k2;
  for (int a = 0; a < cout; ++a)
    for (int b = 0; b < cin; ++b)
      std::memcpy(out.data() + (static_cast<std::int64_t>(a) * cin + b) * kk,
                  w.data() + (static_cast<std::int64_t>(a) * ci + b) * kk,
                  sizeof(S) * static_cast<std::size_t>(kk));
  if (detail::should_record<S>({&w})) {
    Tensor<S> src = w, y = out;
    Tape<S>::active()->record(out, [src, y, cout, cin, ci, kk](Tape<S>& tp) {
      const std::vector<S>& dy = tp.adjoint_of(y.impl());
      std::vector<S> dsrc(src.values().size(), S(0));
      for (int a = 0; a < cout; ++a)
        for (int b = 0; b < cin; ++b)
          std::memcpy(dsrc.data() + (static_cast<std::int64_t>(a) * ci + b) * kk,
                      dy.data() + (static_cast<std::int64_t>(a) * cin + b) * kk,
                      sizeof(S) * static_cast<std::size_t>(kk));
      tp.accumulate(src.handle(), dsrc);
    });
  }
  return out;
}

// Prefix slice of a 1-d parameter (BN gamma/beta, bias).
template <typename S>
Tensor<S> prefix_slice1(const Tensor<S>& v, int c) {
  check(v.ndim() == 1, ErrorCode::Dimension, "prefix_slice1 expects 1-d tensor");
  check(c >= 1 && c <= v.dim(0), ErrorCode::Capacity,
        "prefix_slice1 slice " + std::to_string(c) + " exceeds capacity " +
            std::to_string(v.dim(0)));
  if (c == v.dim(0)) return v;
  Tensor<S> out({c});
  std::memcpy(out.data(), v.data(), sizeof(S) * static_cast<std::size_t>(c));
  if (detail::should_record<S>({&v})) {
    Tensor<S> src = v, y = out;
    Tape<S>::active()->record(out, [src, y, c](Tape<S>& tp) {
      const std::vector<S>& dy = tp.adjoint_of(y.impl());
      std::vector<S> dsrc(src.values().size(), S(0));
      std::memcpy(dsrc.data(), dy.data(), sizeof(S) * static_cast<std::size_t>(c));
      tp.accumulate(src.handle(), dsrc);
    });
  }
  return out;
}

// Column prefix of a [O,F] matrix (classifier weight over sliced features).
template <typename S>
Tensor<S> prefix_slice_cols(const Tensor<S>& m, int f) {
  check(m.ndim() == 2, ErrorCode::Dimension, "prefix_slice_cols expects [O,F]");
  const int o = m.dim(0), fmax = m.dim(1);
  check(f >= 1 && f <= fmax, ErrorCode::Capacity,
        "prefix_slice_cols slice " + std::to_string(f) + " exceeds capacity " +
            std::to_string(fmax));
  if (f == fmax) return m;
  Tensor<S> out({o, f});
  for (int i = 0; i < o; ++i)
    std::memcpy(out.data() + static_cast<std::int64_t>(i) * f,
                m.data() + static_cast<std::int64_t>(i) * fmax,
                sizeof(S) * static_cast<std::size_t>(f));
  if (detail::should_record<S>({&m})) {
    Tensor<S> src = m, y = out;
    Tape<S>::active()->record(out, [src, y, o, f, fmax](Tape<S>& tp) {
      const std::vector<S>& dy = tp.adjoint_of(y.impl());
      std::vector<S> dsrc(src.values().size(), S(0));
      for (int i = 0; i < o; ++i)
        std::memcpy(dsrc.data() + static_cast<std::int64_t>(i) * fmax,
                    dy.data() + static_cast<std::int64_t>(i) * f,
                    sizeof(S) * static_cast<std::size_t>(f));
      tp.accumulate(src.handle(), dsrc);
    });
  }
  return out;
}

template <typename S>
void fill_normal(Tensor<S>& t, Rng& rng, double mean, double stddev) {
  for (auto& v : t.values()) v = static_cast<S>(rng.normal(mean, stddev));
}

// Kaiming-normal fan-in initialization for conv / linear weights.
template <typename S>
void he_normal_init(Tensor<S>& w, Rng& rng) {
  std::int64_t fan_in = 1;
  for (int i = 1; i < w.ndim(); ++i) fan_in *= w.dim(i);
  fill_normal(w, rng, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

}  // namespace fsnas
