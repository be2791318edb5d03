#include <algorithm>
#include <cstring>
#include <vector>

#include "pcreg/kernels.hpp"

namespace pcreg::kernels {

template <class T>
void im2col(const T* image, std::ptrdiff_t channels, std::ptrdiff_t height,
            std::ptrdiff_t width, int ksize, T* columns) {
  const int pad = ksize / 2;
  const std::ptrdiff_t plane = height * width;
#pragma omp parallel for schedule(static) if (channels > 1 && plane > 256)
  for (std::ptrdiff_t c = 0; c < channels; ++c) {
    const T* src = image + c * plane;
    for (int ky = 0; ky < ksize; ++ky) {
      for (int kx = 0; kx < ksize; ++kx) {
        T* row = columns + ((c * ksize + ky) * ksize + kx) * plane;
        const std::ptrdiff_t dx = kx - pad;
        const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(width, width - dx);
        for (std::ptrdiff_t y = 0; y < height; ++y) {
          T* out = row + y * width;
          const std::ptrdiff_t sy = y + ky - pad;
          if (sy < 0 || sy >= height || x_lo >= x_hi) {
            std::fill(out, out + width, T(0));
            continue;
          }
          std::fill(out, out + x_lo, T(0));
          std::memcpy(out + x_lo, src + sy * width + x_lo + dx,
                      sizeof(T) * static_cast<std::size_t>(x_hi - x_lo));
          std::fill(out + x_hi, out + width, T(0));
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* columns, std::ptrdiff_t channels,
                std::ptrdiff_t height, std::ptrdiff_t width, int ksize,
                T* image) {
  const int pad = ksize / 2;
  const std::ptrdiff_t plane = height * width;
#pragma omp parallel for schedule(static) if (channels > 1 && plane > 256)
  for (std::ptrdiff_t c = 0; c < channels; ++c) {
    T* dst = image + c * plane;
    for (int ky = 0; ky < ksize; ++ky) {
      for (int kx = 0; kx < ksize; ++kx) {
        const T* row = columns + ((c * ksize + ky) * ksize + kx) * plane;
        const std::ptrdiff_t dx = kx - pad;
        const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(width, width - dx);
        for (std::ptrdiff_t y = 0; y < height; ++y) {
          const std::ptrdiff_t sy = y + ky - pad;
          if (sy < 0 || sy >= height) continue;
          const T* in = row + y * width;
          T* out = dst + sy * width + dx;
          for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) out[x] += in[x];
        }
      }
    }
  }
}

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight,
                    const T* bias, T* output) {
  const std::ptrdiff_t plane = g.plane();
  const std::ptrdiff_t patch = g.patch();
  std::vector<T> columns;
  if (g.ksize != 1) columns.resize(static_cast<std::size_t>(patch * plane));

  for (std::ptrdiff_t n = 0; n < g.batch; ++n) {
    const T* x = input + n * g.in_channels * plane;
    T* y = output + n * g.out_channels * plane;
    for (std::ptrdiff_t co = 0; co < g.out_channels; ++co) {
      std::fill(y + co * plane, y + (co + 1) * plane, bias ? bias[co] : T(0));
    }
    const T* cols = x;
    if (g.ksize != 1) {
      im2col(x, g.in_channels, g.height, g.width, g.ksize, columns.data());
      cols = columns.data();
    }
    gemm<T>(Trans::kNo, Trans::kNo, g.out_channels, plane, patch, T(1), weight,
            patch, cols, plane, T(1), y, plane);
  }
}

template <class T>
void conv2d_backward(const ConvGeometry& g, const T* input, const T* weight,
                     const T* grad_output, T* grad_input, T* grad_weight,
                     T* grad_bias) {
  const std::ptrdiff_t plane = g.plane();
  const std::ptrdiff_t patch = g.patch();
  const bool unfold = g.ksize != 1;
  std::vector<T> columns;
  std::vector<T> grad_columns;
  if (unfold && grad_weight) columns.resize(static_cast<std::size_t>(patch * plane));
  if (unfold && grad_input) grad_columns.resize(static_cast<std::size_t>(patch * plane));

  if (grad_bias) {
#pragma omp parallel for schedule(static) if (g.out_channels > 1)
    for (std::ptrdiff_t co = 0; co < g.out_channels; ++co) {
      T sum = 0;
      for (std::ptrdiff_t n = 0; n < g.batch; ++n) {
        const T* go = grad_output + (n * g.out_channels + co) * plane;
        for (std::ptrdiff_t p = 0; p < plane; ++p) sum += go[p];
      }
      grad_bias[co] += sum;
    }
  }

  for (std::ptrdiff_t n = 0; n < g.batch; ++n) {
    const T* x = input + n * g.in_channels * plane;
    const T* go = grad_output + n * g.out_channels * plane;
    if (grad_weight) {
      const T* cols = x;
      if (unfold) {
        im2col(x, g.in_channels, g.height, g.width, g.ksize, columns.data());
        cols = columns.data();
      }
      gemm<T>(Trans::kNo, Trans::kYes, g.out_channels, patch, plane, T(1), go,
              plane, cols, plane, T(1), grad_weight, patch);
    }
    if (grad_input) {
      T* gx = grad_input + n * g.in_channels * plane;
      if (unfold) {
        gemm<T>(Trans::kYes, Trans::kNo, patch, plane, g.out_channels, T(1),
                weight, patch, go, plane, T(0), grad_columns.data(), plane);
        col2im_add(grad_columns.data(), g.in_channels, g.height, g.width,
                   g.ksize, gx);
      } else {
        gemm<T>(Trans::kYes, Trans::kNo, patch, plane, g.out_channels, T(1),
                weight, patch, go, plane, T(1), gx, plane);
      }
    }
  }
}

namespace ref {

// Direct sliding-window loops, no unfolding.
template <class T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight,
                    const T* bias, T* output) {
  const int pad = g.ksize / 2;
  const int k = g.ksize;
  for (std::ptrdiff_t n = 0; n < g.batch; ++n) {
    for (std::ptrdiff_t co = 0; co < g.out_channels; ++co) {
      for (std::ptrdiff_t y = 0; y < g.height; ++y) {
        for (std::ptrdiff_t x = 0; x < g.width; ++x) {
          T sum = bias ? bias[co] : T(0);
          for (std::ptrdiff_t ci = 0; ci < g.in_channels; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t sy = y + ky - pad;
              if (sy < 0 || sy >= g.height) continue;
              for (int kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t sx = x + kx - pad;
                if (sx < 0 || sx >= g.width) continue;
                sum += weight[((co * g.in_channels + ci) * k + ky) * k + kx] *
                       input[((n * g.in_channels + ci) * g.height + sy) * g.width + sx];
              }
            }
          }
          output[((n * g.out_channels + co) * g.height + y) * g.width + x] = sum;
        }
      }
    }
  }
}

template <class T>
void conv2d_backward(const ConvGeometry& g, const T* input, const T* weight,
                     const T* grad_output, T* grad_input, T* grad_weight,
                     T* grad_bias) {
  const int pad = g.ksize / 2;
  const int k = g.ksize;
  for (std::ptrdiff_t n = 0; n < g.batch; ++n) {
    for (std::ptrdiff_t co = 0; co < g.out_channels; ++co) {
      for (std::ptrdiff_t y = 0; y < g.height; ++y) {
        for (std::ptrdiff_t x = 0; x < g.width; ++x) {
          const T go =
              grad_output[((n * g.out_channels + co) * g.height + y) * g.width + x];
          if (grad_bias) grad_bias[co] += go;
          for (std::ptrdiff_t ci = 0; ci < g.in_channels; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t sy = y + ky - pad;
              if (sy < 0 || sy >= g.height) continue;
              for (int kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t sx = x + kx - pad;
                if (sx < 0 || sx >= g.width) continue;
                const std::ptrdiff_t wi = ((co * g.in_channels + ci) * k + ky) * k + kx;
                const std::ptrdiff_t xi =
                    ((n * g.in_channels + ci) * g.height + sy) * g.width + sx;
                if (grad_weight) grad_weight[wi] += go * input[xi];
                if (grad_input) grad_input[xi] += go * weight[wi];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace ref

#define PCREG_INSTANTIATE_CONV(T)                                                \
  template void im2col<T>(const T*, std::ptrdiff_t, std::ptrdiff_t,              \
                          std::ptrdiff_t, int, T*);                              \
  template void col2im_add<T>(const T*, std::ptrdiff_t, std::ptrdiff_t,          \
                              std::ptrdiff_t, int, T*);                          \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*,       \
                                  const T*, T*);                                 \
  template void conv2d_backward<T>(const ConvGeometry&, const T*, const T*,      \
                                   const T*, T*, T*, T*);                        \
  template void ref::conv2d_forward<T>(const ConvGeometry&, const T*, const T*,  \
                                       const T*, T*);                            \
  template void ref::conv2d_backward<T>(const ConvGeometry&, const T*, const T*, \
                                        const T*, T*, T*, T*);

PCREG_INSTANTIATE_CONV(float)
PCREG_INSTANTIATE_CONV(double)

#undef PCREG_INSTANTIATE_CONV

}  // namespace pcreg::kernels
