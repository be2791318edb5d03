#include <algorithm>
#include <cmath>
#include <cstring>

#include "pcreg/kernels.hpp"
#include "pcreg/nn.hpp"

namespace pcreg {
namespace {

kernels::ConvGeometry conv_geometry(const Shape& x, const Shape& w) {
  kernels::ConvGeometry g;
  g.batch = x.n;
  g.in_channels = x.c;
  g.out_channels = w.n;
  g.height = x.h;
  g.width = x.w;
  g.ksize = static_cast<int>(w.h);
  return g;
}

// Source taps for one axis of a half-pixel-center bilinear resample.
struct AxisTaps {
  std::vector<std::int64_t> lo;
  std::vector<std::int64_t> hi;
  std::vector<double> frac;
};

AxisTaps axis_taps(std::int64_t in, std::int64_t out) {
  AxisTaps t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(src));
    const auto k = static_cast<std::size_t>(i);
    t.lo[k] = lo;
    t.hi[k] = std::min(lo + 1, in - 1);
    t.frac[k] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.h != ws.w || (ws.h != 1 && ws.h != 3)) {
    throw ShapeError("conv2d: kernel must be 1x1 or 3x3, got " + ws.str());
  }
  if (xs.c != ws.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) +
                     " channels but kernel expects " + std::to_string(ws.c));
  }
  if (!(bias.shape() == Shape{1, ws.n, 1, 1})) {
    throw ShapeError("conv2d: bias shape " + bias.shape().str() + " for " +
                     std::to_string(ws.n) + " output channels");
  }
  if (xs.h < 1 || xs.w < 1) throw ShapeError("conv2d: empty spatial size " + xs.str());

  const kernels::ConvGeometry g = conv_geometry(xs, ws);
  BasicTensor<T> out({xs.n, ws.n, xs.h, xs.w});
  kernels::conv2d_forward<T>(g, x.data().data(), weight.data().data(), bias.data().data(),
                             out.mutable_data().data());
  detail::check_finite(out, OpKind::kConv2d);
  detail::record<T>(OpKind::kConv2d, {x, weight, bias}, out,
                    [x, weight, bias, g](std::span<const T> grad) {
                      kernels::conv2d_backward<T>(
                          g, x.data().data(), weight.data().data(), grad.data(),
                          x.requires_grad() ? x.storage().grad_buffer() : nullptr,
                          weight.requires_grad() ? weight.storage().grad_buffer() : nullptr,
                          bias.requires_grad() ? bias.storage().grad_buffer() : nullptr);
                    });
  return out;
}

template <class T>
BasicTensor<T> batch_norm_train(const BasicTensor<T>& x, const BasicTensor<T>& scale,
                                const BasicTensor<T>& shift, double eps, BatchStats* stats) {
  const Shape& s = x.shape();
  const Shape param{1, s.c, 1, 1};
  detail::require_same_shape(scale.shape(), param, "batch_norm scale");
  detail::require_same_shape(shift.shape(), param, "batch_norm shift");
  const std::int64_t count = s.n * s.h * s.w;
  if (count <= 1) {
    throw ShapeError("batch_norm in training mode needs more than one value per channel, got " +
                     s.str());
  }
  const std::int64_t plane = s.plane();
  auto xd = x.data();
  auto gamma = scale.data();
  auto beta = shift.data();

  BasicTensor<T> out(s);
  auto yd = out.mutable_data();
  std::vector<T> xhat(xd.size());
  std::vector<double> inv_std(static_cast<std::size_t>(s.c));
  std::vector<double> means(static_cast<std::size_t>(s.c));
  std::vector<double> vars(static_cast<std::size_t>(s.c));

#pragma omp parallel for schedule(static) if (s.c > 1 && count > 1024)
  for (std::int64_t c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (std::int64_t n = 0; n < s.n; ++n) {
      const T* p = xd.data() + (n * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) sum += static_cast<double>(p[i]);
    }
    const double mu = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::int64_t n = 0; n < s.n; ++n) {
      const T* p = xd.data() + (n * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double d = static_cast<double>(p[i]) - mu;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(count);
    const double istd = 1.0 / std::sqrt(var + eps);
    const auto k = static_cast<std::size_t>(c);
    means[k] = mu;
    vars[k] = var;
    inv_std[k] = istd;
    const double g = static_cast<double>(gamma[k]);
    const double b = static_cast<double>(beta[k]);
    for (std::int64_t n = 0; n < s.n; ++n) {
      const std::int64_t off = (n * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double h = (static_cast<double>(xd[off + i]) - mu) * istd;
        xhat[off + i] = static_cast<T>(h);
        yd[off + i] = static_cast<T>(g * h + b);
      }
    }
  }
  if (stats) {
    stats->mean = means;
    stats->var = vars;
  }
  detail::check_finite(out, OpKind::kBatchNorm);
  detail::record<T>(
      OpKind::kBatchNorm, {x, scale, shift}, out,
      [x, scale, shift, xhat = std::move(xhat), inv_std = std::move(inv_std), s, count,
       plane](std::span<const T> grad) {
        T* gx = x.requires_grad() ? x.storage().grad_buffer() : nullptr;
        T* gg = scale.requires_grad() ? scale.storage().grad_buffer() : nullptr;
        T* gb = shift.requires_grad() ? shift.storage().grad_buffer() : nullptr;
        auto gamma = scale.data();
#pragma omp parallel for schedule(static) if (s.c > 1 && count > 1024)
        for (std::int64_t c = 0; c < s.c; ++c) {
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (std::int64_t n = 0; n < s.n; ++n) {
            const std::int64_t off = (n * s.c + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              sum_g += static_cast<double>(grad[off + i]);
              sum_gx += static_cast<double>(grad[off + i]) * static_cast<double>(xhat[off + i]);
            }
          }
          const auto k = static_cast<std::size_t>(c);
          if (gg) gg[k] += static_cast<T>(sum_gx);
          if (gb) gb[k] += static_cast<T>(sum_g);
          if (!gx) continue;
          const double m = static_cast<double>(count);
          const double coef = static_cast<double>(gamma[k]) * inv_std[k] / m;
          for (std::int64_t n = 0; n < s.n; ++n) {
            const std::int64_t off = (n * s.c + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              const double d = m * static_cast<double>(grad[off + i]) - sum_g -
                               static_cast<double>(xhat[off + i]) * sum_gx;
              gx[off + i] += static_cast<T>(coef * d);
            }
          }
        }
      });
  return out;
}

template <class T>
BasicTensor<T> batch_norm_eval(const BasicTensor<T>& x, const BasicTensor<T>& scale,
                               const BasicTensor<T>& shift, const BasicTensor<T>& running_mean,
                               const BasicTensor<T>& running_var, double eps) {
  const Shape& s = x.shape();
  const Shape param{1, s.c, 1, 1};
  detail::require_same_shape(scale.shape(), param, "batch_norm scale");
  detail::require_same_shape(shift.shape(), param, "batch_norm shift");
  detail::require_same_shape(running_mean.shape(), param, "batch_norm running_mean");
  detail::require_same_shape(running_var.shape(), param, "batch_norm running_var");
  const std::int64_t plane = s.plane();
  std::vector<double> inv_std(static_cast<std::size_t>(s.c));
  for (std::int64_t c = 0; c < s.c; ++c) {
    inv_std[static_cast<std::size_t>(c)] =
        1.0 / std::sqrt(static_cast<double>(running_var.data()[c]) + eps);
  }
  BasicTensor<T> out(s);
  auto xd = x.data();
  auto yd = out.mutable_data();
  auto gamma = scale.data();
  auto beta = shift.data();
  auto mu = running_mean.data();
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const auto k = static_cast<std::size_t>(c);
      const std::int64_t off = (n * s.c + c) * plane;
      const double a = static_cast<double>(gamma[k]) * inv_std[k];
      const double m = static_cast<double>(mu[k]);
      const double b = static_cast<double>(beta[k]);
      for (std::int64_t i = 0; i < plane; ++i) {
        yd[off + i] = static_cast<T>(a * (static_cast<double>(xd[off + i]) - m) + b);
      }
    }
  }
  detail::check_finite(out, OpKind::kBatchNorm);
  detail::record<T>(
      OpKind::kBatchNorm, {x, scale, shift}, out,
      [x, scale, shift, running_mean, inv_std = std::move(inv_std), s,
       plane](std::span<const T> grad) {
        T* gx = x.requires_grad() ? x.storage().grad_buffer() : nullptr;
        T* gg = scale.requires_grad() ? scale.storage().grad_buffer() : nullptr;
        T* gb = shift.requires_grad() ? shift.storage().grad_buffer() : nullptr;
        auto xd = x.data();
        auto gamma = scale.data();
        auto mu = running_mean.data();
        for (std::int64_t c = 0; c < s.c; ++c) {
          const auto k = static_cast<std::size_t>(c);
          double sum_g = 0.0;
          double sum_gx = 0.0;
          const double a = static_cast<double>(gamma[k]) * inv_std[k];
          for (std::int64_t n = 0; n < s.n; ++n) {
            const std::int64_t off = (n * s.c + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              const double g = static_cast<double>(grad[off + i]);
              sum_g += g;
              sum_gx += g * (static_cast<double>(xd[off + i]) - static_cast<double>(mu[k])) *
                        inv_std[k];
              if (gx) gx[off + i] += static_cast<T>(g * a);
            }
          }
          if (gg) gg[k] += static_cast<T>(sum_gx);
          if (gb) gb[k] += static_cast<T>(sum_g);
        }
      });
  return out;
}

template <class T>
BasicTensor<T> maxpool2(const BasicTensor<T>& x) {
  const Shape& s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("maxpool2 needs even height and width, got " + s.str());
  }
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  BasicTensor<T> out(os);
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(os.numel()));
  auto xd = x.data();
  auto yd = out.mutable_data();
  const std::int64_t planes = s.n * s.c;
#pragma omp parallel for schedule(static) if (planes > 1 && os.numel() > 4096)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = xd.data() + p * s.plane();
    for (std::int64_t y = 0; y < os.h; ++y) {
      for (std::int64_t xo = 0; xo < os.w; ++xo) {
        std::int64_t best = (2 * y) * s.w + 2 * xo;
        const std::int64_t cand[3] = {best + 1, best + s.w, best + s.w + 1};
        for (std::int64_t c : cand) {
          if (src[c] > src[best]) best = c;
        }
        const std::int64_t o = p * os.plane() + y * os.w + xo;
        yd[o] = src[best];
        argmax[o] = p * s.plane() + best;
      }
    }
  }
  detail::record<T>(OpKind::kMaxPool2, {x}, out,
                    [x, argmax = std::move(argmax)](std::span<const T> grad) {
                      if (!x.requires_grad()) return;
                      T* gx = x.storage().grad_buffer();
                      for (std::size_t i = 0; i < grad.size(); ++i) gx[argmax[i]] += grad[i];
                    });
  return out;
}

template <class T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  const Shape& s = x.shape();
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("bilinear_resize: output size must be positive, got " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  if (s.h < 1 || s.w < 1) throw ShapeError("bilinear_resize: empty input " + s.str());
  const Shape os{s.n, s.c, out_h, out_w};
  BasicTensor<T> out(os);
  if (out_h == s.h && out_w == s.w) {
    std::copy(x.data().begin(), x.data().end(), out.mutable_data().begin());
    detail::record<T>(OpKind::kResize, {x}, out, [x](std::span<const T> grad) {
      if (!x.requires_grad()) return;
      T* gx = x.storage().grad_buffer();
      for (std::size_t i = 0; i < grad.size(); ++i) gx[i] += grad[i];
    });
    return out;
  }
  const AxisTaps ty = axis_taps(s.h, out_h);
  const AxisTaps tx = axis_taps(s.w, out_w);
  auto xd = x.data();
  auto yd = out.mutable_data();
  const std::int64_t planes = s.n * s.c;
  // Interpolation in lerp form a + t (b - a) reproduces constants exactly.
#pragma omp parallel for schedule(static) if (planes > 1 && os.numel() > 4096)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = xd.data() + p * s.plane();
    T* dst = yd.data() + p * os.plane();
    for (std::int64_t i = 0; i < out_h; ++i) {
      const auto ki = static_cast<std::size_t>(i);
      const T* r0 = src + ty.lo[ki] * s.w;
      const T* r1 = src + ty.hi[ki] * s.w;
      const T fy = static_cast<T>(ty.frac[ki]);
      for (std::int64_t j = 0; j < out_w; ++j) {
        const auto kj = static_cast<std::size_t>(j);
        const T fx = static_cast<T>(tx.frac[kj]);
        const T top = r0[tx.lo[kj]] + fx * (r0[tx.hi[kj]] - r0[tx.lo[kj]]);
        const T bot = r1[tx.lo[kj]] + fx * (r1[tx.hi[kj]] - r1[tx.lo[kj]]);
        dst[i * out_w + j] = top + fy * (bot - top);
      }
    }
  }
  detail::record<T>(OpKind::kResize, {x}, out, [x, ty, tx, s, os](std::span<const T> grad) {
    if (!x.requires_grad()) return;
    T* gx = x.storage().grad_buffer();
    const std::int64_t planes = s.n * s.c;
#pragma omp parallel for schedule(static) if (planes > 1 && os.numel() > 4096)
    for (std::int64_t p = 0; p < planes; ++p) {
      T* dst = gx + p * s.plane();
      const T* g = grad.data() + p * os.plane();
      for (std::int64_t i = 0; i < os.h; ++i) {
        const auto ki = static_cast<std::size_t>(i);
        const T fy = static_cast<T>(ty.frac[ki]);
        T* r0 = dst + ty.lo[ki] * s.w;
        T* r1 = dst + ty.hi[ki] * s.w;
        for (std::int64_t j = 0; j < os.w; ++j) {
          const auto kj = static_cast<std::size_t>(j);
          const T fx = static_cast<T>(tx.frac[kj]);
          const T v = g[i * os.w + j];
          const T top = (T(1) - fy) * v;
          const T bot = fy * v;
          r0[tx.lo[kj]] += (T(1) - fx) * top;
          r0[tx.hi[kj]] += fx * top;
          r1[tx.lo[kj]] += (T(1) - fx) * bot;
          r1[tx.hi[kj]] += fx * bot;
        }
      }
    }
  });
  return out;
}

template <class T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + sa.str() + " vs " + sb.str());
  }
  const Shape os{sa.n, sa.c + sb.c, sa.h, sa.w};
  BasicTensor<T> out(os);
  const std::int64_t block_a = sa.c * sa.plane();
  const std::int64_t block_b = sb.c * sb.plane();
  auto yd = out.mutable_data();
  for (std::int64_t n = 0; n < sa.n; ++n) {
    std::copy_n(a.data().data() + n * block_a, block_a, yd.data() + n * (block_a + block_b));
    std::copy_n(b.data().data() + n * block_b, block_b,
                yd.data() + n * (block_a + block_b) + block_a);
  }
  detail::record<T>(OpKind::kConcat, {a, b}, out,
                    [a, b, block_a, block_b, batch = sa.n](std::span<const T> grad) {
                      T* ga = a.requires_grad() ? a.storage().grad_buffer() : nullptr;
                      T* gb = b.requires_grad() ? b.storage().grad_buffer() : nullptr;
                      for (std::int64_t n = 0; n < batch; ++n) {
                        const T* g = grad.data() + n * (block_a + block_b);
                        if (ga) {
                          for (std::int64_t i = 0; i < block_a; ++i) ga[n * block_a + i] += g[i];
                        }
                        if (gb) {
                          for (std::int64_t i = 0; i < block_b; ++i) {
                            gb[n * block_b + i] += g[block_a + i];
                          }
                        }
                      }
                    });
  return out;
}

template <class T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::int64_t begin, std::int64_t end) {
  const Shape& s = x.shape();
  if (begin < 0 || end > s.c || begin >= end) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for " + s.str());
  }
  const Shape os{s.n, end - begin, s.h, s.w};
  BasicTensor<T> out(os);
  const std::int64_t plane = s.plane();
  const std::int64_t block = os.c * plane;
  auto yd = out.mutable_data();
  for (std::int64_t n = 0; n < s.n; ++n) {
    std::copy_n(x.data().data() + (n * s.c + begin) * plane, block, yd.data() + n * block);
  }
  detail::record<T>(OpKind::kSlice, {x}, out,
                    [x, s, begin, block, plane](std::span<const T> grad) {
                      if (!x.requires_grad()) return;
                      T* gx = x.storage().grad_buffer();
                      for (std::int64_t n = 0; n < s.n; ++n) {
                        T* dst = gx + (n * s.c + begin) * plane;
                        for (std::int64_t i = 0; i < block; ++i) dst[i] += grad[n * block + i];
                      }
                    });
  return out;
}

#define PCREG_INSTANTIATE_NN(T)                                                          \
  template BasicTensor<T> conv2d<T>(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                    const BasicTensor<T>&);                              \
  template BasicTensor<T> batch_norm_train<T>(const BasicTensor<T>&, const BasicTensor<T>&, \
                                              const BasicTensor<T>&, double, BatchStats*); \
  template BasicTensor<T> batch_norm_eval<T>(const BasicTensor<T>&, const BasicTensor<T>&, \
                                             const BasicTensor<T>&, const BasicTensor<T>&, \
                                             const BasicTensor<T>&, double);             \
  template BasicTensor<T> maxpool2<T>(const BasicTensor<T>&);                            \
  template BasicTensor<T> bilinear_resize<T>(const BasicTensor<T>&, std::int64_t,        \
                                             std::int64_t);                              \
  template BasicTensor<T> concat_channels<T>(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> slice_channels<T>(const BasicTensor<T>&, std::int64_t, std::int64_t);

PCREG_INSTANTIATE_NN(float)
PCREG_INSTANTIATE_NN(double)

#undef PCREG_INSTANTIATE_NN

}  // namespace pcreg
