#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "pcreg/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pcreg::kernels {
namespace {

// Register tile: MR rows of A broadcast against NR contiguous columns of B.
// NR spans two 512-bit vectors for either precision.
template <class T>
struct Blocking;

template <>
struct Blocking<float> {
  static constexpr int kMr = 8;
  static constexpr int kNr = 32;
  static constexpr std::ptrdiff_t kKc = 256;
  static constexpr std::ptrdiff_t kMc = 128;
  static constexpr std::ptrdiff_t kNc = 2048;
};

template <>
struct Blocking<double> {
  static constexpr int kMr = 8;
  static constexpr int kNr = 16;
  static constexpr std::ptrdiff_t kKc = 256;
  static constexpr std::ptrdiff_t kMc = 128;
  static constexpr std::ptrdiff_t kNc = 1024;
};

template <class T>
inline T at(const T* p, std::ptrdiff_t ld, Trans t, std::ptrdiff_t row,
            std::ptrdiff_t col) {
  return t == Trans::kNo ? p[row * ld + col] : p[col * ld + row];
}

// Packs op(A)[i0:i0+mc, p0:p0+kc] into MR-row panels laid out k-major.
template <class T>
void pack_a(const T* a, std::ptrdiff_t lda, Trans ta, std::ptrdiff_t i0,
            std::ptrdiff_t mc, std::ptrdiff_t p0, std::ptrdiff_t kc, T* out) {
  constexpr int kMr = Blocking<T>::kMr;
  for (std::ptrdiff_t ir = 0; ir < mc; ir += kMr) {
    const std::ptrdiff_t rows = std::min<std::ptrdiff_t>(kMr, mc - ir);
    T* panel = out + ir * kc;
    if (ta == Trans::kYes && rows == kMr) {
      // op(A) row i is column i of A: each k-slice is contiguous.
      for (std::ptrdiff_t p = 0; p < kc; ++p) {
        std::memcpy(panel + p * kMr, a + (p0 + p) * lda + i0 + ir,
                    sizeof(T) * kMr);
      }
      continue;
    }
    for (std::ptrdiff_t p = 0; p < kc; ++p) {
      for (int r = 0; r < kMr; ++r) {
        panel[p * kMr + r] =
            r < rows ? at(a, lda, ta, i0 + ir + r, p0 + p) : T(0);
      }
    }
  }
}

// Packs op(B)[p0:p0+kc, j0:j0+nc] into NR-column panels laid out k-major.
template <class T>
void pack_b_panel(const T* b, std::ptrdiff_t ldb, Trans tb, std::ptrdiff_t p0,
                  std::ptrdiff_t kc, std::ptrdiff_t j0, std::ptrdiff_t cols,
                  T* panel) {
  constexpr int kNr = Blocking<T>::kNr;
  if (tb == Trans::kNo && cols == kNr) {
    for (std::ptrdiff_t p = 0; p < kc; ++p) {
      std::memcpy(panel + p * kNr, b + (p0 + p) * ldb + j0, sizeof(T) * kNr);
    }
    return;
  }
  if (tb == Trans::kYes) {
    // op(B) column j is row j of B: walk it contiguously.
    for (std::ptrdiff_t c = 0; c < kNr; ++c) {
      if (c < cols) {
        const T* src = b + (j0 + c) * ldb + p0;
        for (std::ptrdiff_t p = 0; p < kc; ++p) panel[p * kNr + c] = src[p];
      } else {
        for (std::ptrdiff_t p = 0; p < kc; ++p) panel[p * kNr + c] = T(0);
      }
    }
    return;
  }
  for (std::ptrdiff_t p = 0; p < kc; ++p) {
    const T* src = b + (p0 + p) * ldb + j0;
    for (std::ptrdiff_t c = 0; c < kNr; ++c) {
      panel[p * kNr + c] = c < cols ? src[c] : T(0);
    }
  }
}

template <class T>
inline void micro_kernel(std::ptrdiff_t kc, const T* __restrict a,
                         const T* __restrict b, T* __restrict tile) {
  constexpr int kMr = Blocking<T>::kMr;
  constexpr int kNr = Blocking<T>::kNr;
  T acc[kMr][kNr] = {};
  for (std::ptrdiff_t p = 0; p < kc; ++p) {
    const T* bp = b + p * kNr;
    const T* ap = a + p * kMr;
#pragma GCC unroll 8
    for (int r = 0; r < kMr; ++r) {
      const T ar = ap[r];
#pragma omp simd
      for (int c = 0; c < kNr; ++c) acc[r][c] = std::fma(ar, bp[c], acc[r][c]);
    }
  }
  std::memcpy(tile, acc, sizeof(acc));
}

template <class T>
void gemm_impl(Trans ta, Trans tb, std::ptrdiff_t m, std::ptrdiff_t n,
               std::ptrdiff_t k, T alpha, const T* a, std::ptrdiff_t lda,
               const T* b, std::ptrdiff_t ldb, T beta, T* c,
               std::ptrdiff_t ldc) {
  using B = Blocking<T>;
  constexpr int kMr = B::kMr;
  constexpr int kNr = B::kNr;
  if (m <= 0 || n <= 0) return;
  if (k <= 0) {
    for (std::ptrdiff_t i = 0; i < m; ++i) {
      for (std::ptrdiff_t j = 0; j < n; ++j) {
        c[i * ldc + j] = beta == T(0) ? T(0) : beta * c[i * ldc + j];
      }
    }
    return;
  }

  const std::ptrdiff_t nc_max = std::min(B::kNc, (n + kNr - 1) / kNr * kNr);
  const std::ptrdiff_t kc_max = std::min(B::kKc, k);
  const std::ptrdiff_t mc_max = std::min(B::kMc, (m + kMr - 1) / kMr * kMr);
  std::vector<T> packed_b(static_cast<std::size_t>(nc_max * kc_max));
  std::vector<T> packed_a(static_cast<std::size_t>(mc_max * kc_max));

  for (std::ptrdiff_t jc = 0; jc < n; jc += B::kNc) {
    const std::ptrdiff_t nc = std::min(B::kNc, n - jc);
    const std::ptrdiff_t b_panels = (nc + kNr - 1) / kNr;
    for (std::ptrdiff_t pc = 0; pc < k; pc += B::kKc) {
      const std::ptrdiff_t kc = std::min(B::kKc, k - pc);
      const bool first = pc == 0;

#pragma omp parallel for schedule(static) if (b_panels > 4)
      for (std::ptrdiff_t jp = 0; jp < b_panels; ++jp) {
        const std::ptrdiff_t cols = std::min<std::ptrdiff_t>(kNr, nc - jp * kNr);
        pack_b_panel(b, ldb, tb, pc, kc, jc + jp * kNr, cols,
                     packed_b.data() + jp * kNr * kc);
      }

      for (std::ptrdiff_t ic = 0; ic < m; ic += B::kMc) {
        const std::ptrdiff_t mc = std::min(B::kMc, m - ic);
        const std::ptrdiff_t a_panels = (mc + kMr - 1) / kMr;
        pack_a(a, lda, ta, ic, mc, pc, kc, packed_a.data());

        const std::ptrdiff_t tiles = a_panels * b_panels;
#pragma omp parallel for schedule(static) if (tiles > 4)
        for (std::ptrdiff_t t = 0; t < tiles; ++t) {
          const std::ptrdiff_t jp = t / a_panels;
          const std::ptrdiff_t ip = t % a_panels;
          alignas(64) T tile[kMr * kNr];
          micro_kernel<T>(kc, packed_a.data() + ip * kMr * kc,
                          packed_b.data() + jp * kNr * kc, tile);
          const std::ptrdiff_t rows = std::min<std::ptrdiff_t>(kMr, mc - ip * kMr);
          const std::ptrdiff_t cols = std::min<std::ptrdiff_t>(kNr, nc - jp * kNr);
          for (std::ptrdiff_t r = 0; r < rows; ++r) {
            T* crow = c + (ic + ip * kMr + r) * ldc + jc + jp * kNr;
            const T* trow = tile + r * kNr;
            if (!first) {
              for (std::ptrdiff_t q = 0; q < cols; ++q) crow[q] += alpha * trow[q];
            } else if (beta == T(0)) {
              for (std::ptrdiff_t q = 0; q < cols; ++q) crow[q] = alpha * trow[q];
            } else {
              for (std::ptrdiff_t q = 0; q < cols; ++q) {
                crow[q] = beta * crow[q] + alpha * trow[q];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
void gemm(Trans trans_a, Trans trans_b, std::ptrdiff_t m, std::ptrdiff_t n,
          std::ptrdiff_t k, T alpha, const T* a, std::ptrdiff_t lda, const T* b,
          std::ptrdiff_t ldb, T beta, T* c, std::ptrdiff_t ldc) {
  gemm_impl<T>(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

namespace ref {

template <class T>
void gemm(Trans trans_a, Trans trans_b, std::ptrdiff_t m, std::ptrdiff_t n,
          std::ptrdiff_t k, T alpha, const T* a, std::ptrdiff_t lda, const T* b,
          std::ptrdiff_t ldb, T beta, T* c, std::ptrdiff_t ldc) {
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    for (std::ptrdiff_t j = 0; j < n; ++j) {
      T sum = 0;
      for (std::ptrdiff_t p = 0; p < k; ++p) {
        sum += at(a, lda, trans_a, i, p) * at(b, ldb, trans_b, p, j);
      }
      T& out = c[i * ldc + j];
      out = beta == T(0) ? alpha * sum : beta * out + alpha * sum;
    }
  }
}

}  // namespace ref

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

#define PCREG_INSTANTIATE_GEMM(T)                                             \
  template void gemm<T>(Trans, Trans, std::ptrdiff_t, std::ptrdiff_t,         \
                        std::ptrdiff_t, T, const T*, std::ptrdiff_t, const T*, \
                        std::ptrdiff_t, T, T*, std::ptrdiff_t);               \
  template void ref::gemm<T>(Trans, Trans, std::ptrdiff_t, std::ptrdiff_t,    \
                             std::ptrdiff_t, T, const T*, std::ptrdiff_t,     \
                             const T*, std::ptrdiff_t, T, T*, std::ptrdiff_t);

PCREG_INSTANTIATE_GEMM(float)
PCREG_INSTANTIATE_GEMM(double)

#undef PCREG_INSTANTIATE_GEMM

}  // namespace pcreg::kernels
