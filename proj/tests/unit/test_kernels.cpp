#include <gtest/gtest.h>

#include <cstring>
#include <vector>

#include "oracles.hpp"
#include "pcreg/kernels.hpp"
#include "pcreg/rng.hpp"

namespace {

using namespace pcreg::kernels;

template <class T>
std::vector<T> random_values(std::size_t n, std::uint64_t seed) {
  pcreg::Rng rng(seed);
  std::vector<T> v(n);
  for (T& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return v;
}

// Naive op(A) * op(B) in long double.
std::vector<double> naive_gemm(bool ta, bool tb, int m, int n, int k, const std::vector<double>& a,
                               const std::vector<double>& b) {
  std::vector<double> c(static_cast<std::size_t>(m * n));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      long double s = 0;
      for (int p = 0; p < k; ++p) {
        const double av = ta ? a[static_cast<std::size_t>(p * m + i)] : a[static_cast<std::size_t>(i * k + p)];
        const double bv = tb ? b[static_cast<std::size_t>(j * k + p)] : b[static_cast<std::size_t>(p * n + j)];
        s += static_cast<long double>(av) * bv;
      }
      c[static_cast<std::size_t>(i * n + j)] = static_cast<double>(s);
    }
  return c;
}

struct GemmShape {
  int m, n, k;
};

class GemmTest : public ::testing::TestWithParam<GemmShape> {};

TEST_P(GemmTest, MatchesNaiveProductForEveryTransposeCombination) {
  const auto [m, n, k] = GetParam();
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      const auto a = random_values<double>(static_cast<std::size_t>(m * k), 1);
      const auto b = random_values<double>(static_cast<std::size_t>(k * n), 2);
      const auto expect = naive_gemm(ta, tb, m, n, k, a, b);
      std::vector<double> c(static_cast<std::size_t>(m * n), 7.0);
      gemm<double>(ta ? Trans::kYes : Trans::kNo, tb ? Trans::kYes : Trans::kNo, m, n, k, 1.0,
                   a.data(), ta ? m : k, b.data(), tb ? k : n, 0.0, c.data(), n);
      for (std::size_t i = 0; i < c.size(); ++i) {
        ASSERT_NEAR(c[i], expect[i], 1e-12 * (1 + k)) << "ta=" << ta << " tb=" << tb << " i=" << i;
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Shapes, GemmTest,
                         ::testing::Values(GemmShape{1, 1, 1}, GemmShape{3, 5, 7},
                                           GemmShape{17, 33, 65}, GemmShape{64, 48, 300},
                                           GemmShape{130, 70, 9}));

TEST(Gemm, AlphaBetaAccumulate) {
  const int m = 9, n = 11, k = 13;
  const auto a = random_values<double>(m * k, 3);
  const auto b = random_values<double>(k * n, 4);
  auto c = random_values<double>(m * n, 5);
  const auto c0 = c;
  const auto ab = naive_gemm(false, false, m, n, k, a, b);
  gemm<double>(Trans::kNo, Trans::kNo, m, n, k, 2.0, a.data(), k, b.data(), n, 0.5, c.data(), n);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], 2.0 * ab[i] + 0.5 * c0[i], 1e-12);
}

TEST(Gemm, BetaZeroNeverReadsOutput) {
  const auto a = random_values<float>(4 * 4, 6);
  const auto b = random_values<float>(4 * 4, 7);
  std::vector<float> c(16, std::numeric_limits<float>::quiet_NaN());
  gemm<float>(Trans::kNo, Trans::kNo, 4, 4, 4, 1.0f, a.data(), 4, b.data(), 4, 0.0f, c.data(), 4);
  for (float v : c) EXPECT_TRUE(std::isfinite(v));
}

// The packed kernel fuses multiply-adds and blocks over k, so it rounds
// differently from the serial loop; agreement is to float accuracy.
TEST(Gemm, PackedKernelAgreesWithSerialLoop) {
  const int m = 77, n = 131, k = 250;
  const auto a = random_values<float>(m * k, 8);
  const auto b = random_values<float>(k * n, 9);
  std::vector<float> fast(m * n), slow(m * n);
  gemm<float>(Trans::kNo, Trans::kYes, m, n, k, 1.0f, a.data(), k, b.data(), k, 0.0f, fast.data(), n);
  ref::gemm<float>(Trans::kNo, Trans::kYes, m, n, k, 1.0f, a.data(), k, b.data(), k, 0.0f, slow.data(), n);
  for (std::size_t i = 0; i < fast.size(); ++i) ASSERT_NEAR(fast[i], slow[i], 1e-4) << i;
}

TEST(Gemm, ResultsDoNotDependOnThreadCount) {
  const int m = 300, n = 700, k = 600;
  const auto a = random_values<float>(m * k, 24);
  const auto b = random_values<float>(k * n, 25);
  auto run = [&](int threads) {
    set_num_threads(threads);
    std::vector<float> c(static_cast<std::size_t>(m * n));
    gemm<float>(Trans::kNo, Trans::kNo, m, n, k, 1.0f, a.data(), k, b.data(), n, 0.0f, c.data(), n);
    return c;
  };
  const int original = max_threads();
  const auto one = run(1);
  const auto three = run(3);
  set_num_threads(original);
  EXPECT_EQ(0, std::memcmp(one.data(), three.data(), one.size() * sizeof(float)));
}

struct ConvCase {
  int n, cin, cout, h, w, k;
};

class ConvTest : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvTest, ForwardMatchesDirectLoops) {
  const auto p = GetParam();
  ConvGeometry g{p.n, p.cin, p.cout, p.h, p.w, p.k};
  const auto x = random_values<double>(static_cast<std::size_t>(p.n * p.cin * p.h * p.w), 10);
  const auto wt = random_values<double>(static_cast<std::size_t>(p.cout * p.cin * p.k * p.k), 11);
  const auto bias = random_values<double>(static_cast<std::size_t>(p.cout), 12);
  const auto expect = oracle::conv2d(x, wt, bias, p.n, p.cin, p.cout, p.h, p.w, p.k);
  std::vector<double> y(expect.size()), y_ref(expect.size());
  conv2d_forward<double>(g, x.data(), wt.data(), bias.data(), y.data());
  ref::conv2d_forward<double>(g, x.data(), wt.data(), bias.data(), y_ref.data());
  for (std::size_t i = 0; i < y.size(); ++i) {
    ASSERT_NEAR(y[i], expect[i], 1e-12);
    ASSERT_NEAR(y_ref[i], expect[i], 1e-12);
  }
}

// <dy, conv(x)> is bilinear: the backward pass must be its exact adjoint.
TEST_P(ConvTest, BackwardIsTheAdjointOfForward) {
  const auto p = GetParam();
  ConvGeometry g{p.n, p.cin, p.cout, p.h, p.w, p.k};
  const auto x = random_values<double>(static_cast<std::size_t>(p.n * p.cin * p.h * p.w), 13);
  const auto wt = random_values<double>(static_cast<std::size_t>(p.cout * p.cin * p.k * p.k), 14);
  const auto dy = random_values<double>(static_cast<std::size_t>(p.n * p.cout * p.h * p.w), 15);
  std::vector<double> dx(x.size()), dw(wt.size()), db(static_cast<std::size_t>(p.cout));
  conv2d_backward<double>(g, x.data(), wt.data(), dy.data(), dx.data(), dw.data(), db.data());

  // <dy, conv(x; w)> = <dx, x> = <dw, w>.
  const auto y = oracle::conv2d(x, wt, {}, p.n, p.cin, p.cout, p.h, p.w, p.k);
  double lhs = 0, via_x = 0, via_w = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += dy[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) via_x += dx[i] * x[i];
  for (std::size_t i = 0; i < wt.size(); ++i) via_w += dw[i] * wt[i];
  EXPECT_NEAR(via_x, lhs, 1e-9 * (1 + std::abs(lhs)));
  EXPECT_NEAR(via_w, lhs, 1e-9 * (1 + std::abs(lhs)));
  for (int o = 0; o < p.cout; ++o) {
    double s = 0;
    for (int b = 0; b < p.n; ++b)
      for (int i = 0; i < p.h * p.w; ++i) s += dy[static_cast<std::size_t>((b * p.cout + o) * p.h * p.w + i)];
    EXPECT_NEAR(db[static_cast<std::size_t>(o)], s, 1e-12);
  }
}

TEST_P(ConvTest, ParallelAgreesWithSerialReference) {
  const auto p = GetParam();
  ConvGeometry g{p.n, p.cin, p.cout, p.h, p.w, p.k};
  const auto x = random_values<float>(static_cast<std::size_t>(p.n * p.cin * p.h * p.w), 16);
  const auto wt = random_values<float>(static_cast<std::size_t>(p.cout * p.cin * p.k * p.k), 17);
  const auto dy = random_values<float>(static_cast<std::size_t>(p.n * p.cout * p.h * p.w), 18);
  std::vector<float> y(dy.size()), y_ref(dy.size());
  conv2d_forward<float>(g, x.data(), wt.data(), nullptr, y.data());
  ref::conv2d_forward<float>(g, x.data(), wt.data(), nullptr, y_ref.data());
  for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], y_ref[i], 1e-4);

  std::vector<float> dx(x.size()), dw(wt.size()), db(static_cast<std::size_t>(p.cout));
  std::vector<float> dx_r(x.size()), dw_r(wt.size()), db_r(static_cast<std::size_t>(p.cout));
  conv2d_backward<float>(g, x.data(), wt.data(), dy.data(), dx.data(), dw.data(), db.data());
  ref::conv2d_backward<float>(g, x.data(), wt.data(), dy.data(), dx_r.data(), dw_r.data(), db_r.data());
  for (std::size_t i = 0; i < dx.size(); ++i) ASSERT_NEAR(dx[i], dx_r[i], 1e-4);
  for (std::size_t i = 0; i < dw.size(); ++i) ASSERT_NEAR(dw[i], dw_r[i], 1e-4);
  for (std::size_t i = 0; i < db.size(); ++i) ASSERT_NEAR(db[i], db_r[i], 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Geometries, ConvTest,
                         ::testing::Values(ConvCase{1, 1, 1, 1, 1, 3}, ConvCase{2, 3, 4, 5, 7, 3},
                                           ConvCase{2, 5, 3, 8, 8, 1}, ConvCase{3, 16, 8, 12, 9, 3},
                                           ConvCase{1, 33, 32, 16, 16, 3}));

TEST(Conv, ResultsDoNotDependOnThreadCount) {
  ConvGeometry g{4, 8, 16, 16, 16, 3};
  const auto x = random_values<float>(static_cast<std::size_t>(4 * 8 * 256), 19);
  const auto wt = random_values<float>(static_cast<std::size_t>(16 * 8 * 9), 20);
  const auto dy = random_values<float>(static_cast<std::size_t>(4 * 16 * 256), 21);
  auto run = [&](int threads) {
    set_num_threads(threads);
    std::vector<float> dx(x.size()), dw(wt.size());
    conv2d_backward<float>(g, x.data(), wt.data(), dy.data(), dx.data(), dw.data(), nullptr);
    dx.insert(dx.end(), dw.begin(), dw.end());
    return dx;
  };
  const int original = max_threads();
  const auto one = run(1);
  const auto four = run(4);
  set_num_threads(original);
  EXPECT_EQ(0, std::memcmp(one.data(), four.data(), one.size() * sizeof(float)));
}

TEST(Im2col, Col2imIsItsAdjoint) {
  const int c = 3, h = 6, w = 5, k = 3;
  const auto img = random_values<double>(c * h * w, 22);
  const auto cols = random_values<double>(c * k * k * h * w, 23);
  std::vector<double> unfolded(cols.size());
  im2col<double>(img.data(), c, h, w, k, unfolded.data());
  std::vector<double> folded(img.size(), 0.0);
  col2im_add<double>(cols.data(), c, h, w, k, folded.data());
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < cols.size(); ++i) lhs += unfolded[i] * cols[i];
  for (std::size_t i = 0; i < img.size(); ++i) rhs += img[i] * folded[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

}  // namespace
