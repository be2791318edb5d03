#pragma once

// Dense compute kernels behind the tensor ops.
//
// Every kernel has two implementations: the OpenMP-parallel one used by the
// library, and a plain serial one under `ref::` kept as the test oracle and
// benchmark baseline. The parallel kernels partition work only over output
// elements, so each output is reduced in the same order no matter how many
// threads run; results are bit-identical across thread counts.

#include <cstddef>
#include <cstdint>

namespace pcreg::kernels {

enum class Trans : std::uint8_t { kNo, kYes };

/// Row-major C[m,n] = alpha * op(A)[m,k] * op(B)[k,n] + beta * C.
/// When beta == 0, C is overwritten and never read.
template <class T>
void gemm(Trans trans_a, Trans trans_b, std::ptrdiff_t m, std::ptrdiff_t n,
          std::ptrdiff_t k, T alpha, const T* a, std::ptrdiff_t lda, const T* b,
          std::ptrdiff_t ldb, T beta, T* c, std::ptrdiff_t ldc);

/// Unfolds one (C,H,W) image into a (C*k*k, H*W) column matrix for a
/// stride-1 same-padded k x k window (k odd).
template <class T>
void im2col(const T* image, std::ptrdiff_t channels, std::ptrdiff_t height,
            std::ptrdiff_t width, int ksize, T* columns);

/// Adjoint of im2col: scatters-adds columns back into the image.
template <class T>
void col2im_add(const T* columns, std::ptrdiff_t channels,
                std::ptrdiff_t height, std::ptrdiff_t width, int ksize,
                T* image);

struct ConvGeometry {
  std::ptrdiff_t batch = 0;
  std::ptrdiff_t in_channels = 0;
  std::ptrdiff_t out_channels = 0;
  std::ptrdiff_t height = 0;
  std::ptrdiff_t width = 0;
  int ksize = 3;

  std::ptrdiff_t plane() const { return height * width; }
  std::ptrdiff_t patch() const { return in_channels * ksize * ksize; }
};

/// Same-padded stride-1 cross-correlation, NCHW input, (Cout,Cin,k,k) weight.
template <class T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight,
                    const T* bias, T* output);

/// Accumulates into any of grad_input / grad_weight / grad_bias that are
/// non-null.
template <class T>
void conv2d_backward(const ConvGeometry& g, const T* input, const T* weight,
                     const T* grad_output, T* grad_input, T* grad_weight,
                     T* grad_bias);

namespace ref {

template <class T>
void gemm(Trans trans_a, Trans trans_b, std::ptrdiff_t m, std::ptrdiff_t n,
          std::ptrdiff_t k, T alpha, const T* a, std::ptrdiff_t lda, const T* b,
          std::ptrdiff_t ldb, T beta, T* c, std::ptrdiff_t ldc);

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight,
                    const T* bias, T* output);

template <class T>
void conv2d_backward(const ConvGeometry& g, const T* input, const T* weight,
                     const T* grad_output, T* grad_input, T* grad_weight,
                     T* grad_bias);

}  // namespace ref

/// Number of OpenMP threads the kernels will use (1 without OpenMP).
int max_threads();
void set_num_threads(int n);

}  // namespace pcreg::kernels
