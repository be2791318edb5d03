#include <gtest/gtest.h>

#include <numeric>

#include "oracles.hpp"
#include "pcreg/nn.hpp"
#include "pcreg/ops.hpp"
#include "pcreg/rng.hpp"

namespace {

using namespace pcreg;

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(s.numel()));
  for (float& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(s, std::move(v));
}

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TEST(Conv2d, AllOnesKernelOnAllOnesImage) {
  const Tensor x({1, 1, 3, 3}, 1.0f);
  const Tensor w({1, 1, 3, 3}, 1.0f);
  const Tensor b({1, 1, 1, 1}, 0.0f);
  EXPECT_EQ(values(conv2d(x, w, b)), (std::vector<float>{4, 6, 4, 6, 9, 6, 4, 6, 4}));
}

TEST(Conv2d, IdentityAndConstantKernels) {
  const Tensor x = random_tensor({2, 3, 5, 4}, 1);
  Tensor w({3, 3, 1, 1}, 0.0f);
  for (int c = 0; c < 3; ++c) w.mutable_data()[static_cast<std::size_t>(c * 3 + c)] = 1.0f;
  EXPECT_EQ(values(conv2d(x, w, Tensor({1, 3, 1, 1}, 0.0f))), values(x));

  const Tensor zero({4, 3, 3, 3}, 0.0f);
  const Tensor y = conv2d(x, zero, Tensor({1, 4, 1, 1}, 0.75f));
  EXPECT_EQ(y.shape(), (Shape{2, 4, 5, 4}));
  for (float v : y.data()) EXPECT_EQ(v, 0.75f);
}

TEST(Conv2d, MatchesNestedLoopsOnRandomInputs) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = random_tensor({1, 2, 6, 6}, seed, -1, 1);
    const Tensor w = random_tensor({3, 2, 3, 3}, seed + 100, -1, 1);
    const Tensor b = random_tensor({1, 3, 1, 1}, seed + 200, -1, 1);
    const auto expect = oracle::conv2d(std::vector<double>(x.data().begin(), x.data().end()),
                                       std::vector<double>(w.data().begin(), w.data().end()),
                                       std::vector<double>(b.data().begin(), b.data().end()), 1,
                                       2, 3, 6, 6, 3);
    const Tensor y = conv2d(x, w, b);
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y.data()[i], expect[i], 1e-5);
  }
}

TEST(Conv2d, ChannelMismatchIsAnError) {
  EXPECT_THROW(conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor({1, 1, 1, 1})), ShapeError);
}

TEST(BatchNorm, FreshEvalLayerIsIdentity) {
  BatchNorm2d bn(3);
  bn.set_training(false);
  const Tensor x = random_tensor({2, 3, 4, 4}, 2, -3, 3);
  const Tensor y = bn.forward(x);
  for (std::size_t i = 0; i < y.data().size(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-5 * std::abs(x.data()[i]) + 1e-7);
}

TEST(BatchNorm, TrainModeStandardizesAndUpdatesRunningStats) {
  // Channel c: 5 + 2 z with z standardized exactly, so mean 5 and variance 4.
  const int n = 4, hw = 16;
  std::vector<float> v;
  Rng rng(3);
  for (int c = 0; c < 2; ++c) {
    std::vector<double> z(n * hw);
    for (double& q : z) q = rng.normal();
    const double m = std::accumulate(z.begin(), z.end(), 0.0) / z.size();
    double s = 0;
    for (double q : z) s += (q - m) * (q - m);
    s = std::sqrt(s / z.size());
    for (double& q : z) q = 5 + 2 * (q - m) / s;
    v.insert(v.end(), z.begin(), z.end());
  }
  // Reorder from (C, N*HW) to NCHW.
  std::vector<float> nchw(v.size());
  for (int c = 0; c < 2; ++c)
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < hw; ++i) nchw[(b * 2 + c) * hw + i] = v[c * n * hw + b * hw + i];
  const Tensor x({n, 2, 4, 4}, nchw);

  BatchNorm2d bn(2);
  const Tensor y = bn.forward(x);
  for (int c = 0; c < 2; ++c) {
    double m = 0, q = 0;
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < hw; ++i) m += y.data()[(b * 2 + c) * hw + i];
    m /= n * hw;
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < hw; ++i) q += std::pow(y.data()[(b * 2 + c) * hw + i] - m, 2);
    q /= n * hw;
    EXPECT_NEAR(m, 0.0, 1e-4);
    EXPECT_NEAR(q, 1.0, 1e-4);
    EXPECT_NEAR(bn.running_mean().data()[c], 0.1 * 5.0, 1e-5);
    // Running variance uses the unbiased estimate.
    EXPECT_NEAR(bn.running_var().data()[c], 0.9 + 0.1 * 4.0 * (n * hw) / (n * hw - 1.0), 1e-5);
  }
}

TEST(BatchNorm, ShiftAndScaleSetOutputMoments) {
  BatchNorm2d bn(1);
  bn.scale().mutable_data()[0] = 3.0f;
  bn.shift().mutable_data()[0] = -2.0f;
  const Tensor x = random_tensor({3, 1, 5, 5}, 4);
  double xm = 0, xv = 0;
  for (float v : x.data()) xm += v / 75.0;
  for (float v : x.data()) xv += (v - xm) * (v - xm) / 75.0;
  const Tensor y = bn.forward(x);
  double m = 0, q = 0;
  for (float v : y.data()) m += v;
  m /= y.numel();
  for (float v : y.data()) q += (v - m) * (v - m);
  EXPECT_NEAR(m, -2.0, 1e-4);
  EXPECT_NEAR(q / y.numel(), 9.0 * xv / (xv + 1e-5), 1e-4);
}

TEST(BatchNorm, SingleValuePerChannelIsRejected) {
  BatchNorm2d bn(2);
  EXPECT_THROW(bn.forward(Tensor({1, 2, 1, 1}, 1.0f)), ShapeError);
}

TEST(BatchNorm, EvalModePermutesWithTheBatch) {
  BatchNorm2d bn(2);
  bn.forward(random_tensor({4, 2, 3, 3}, 5));  // non-trivial running stats
  bn.set_training(false);
  const Tensor x = random_tensor({3, 2, 3, 3}, 6);
  std::vector<float> swapped(x.data().begin(), x.data().end());
  const std::size_t item = 2 * 9;
  std::swap_ranges(swapped.begin(), swapped.begin() + item, swapped.begin() + 2 * item);
  const Tensor y = bn.forward(x);
  const Tensor ys = bn.forward(Tensor(x.shape(), swapped));
  for (std::size_t i = 0; i < item; ++i) {
    EXPECT_EQ(ys.data()[i], y.data()[2 * item + i]);
    EXPECT_EQ(ys.data()[2 * item + i], y.data()[i]);
    EXPECT_EQ(ys.data()[item + i], y.data()[item + i]);
  }
}

TEST(MaxPool, ExamplesAndRouting) {
  const Tensor x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  EXPECT_EQ(maxpool2(x).item(), 4.0f);
  const Tensor c = maxpool2(Tensor({2, 3, 6, 4}, 0.5f));
  EXPECT_EQ(c.shape(), (Shape{2, 3, 3, 2}));
  for (float v : c.data()) EXPECT_EQ(v, 0.5f);
  EXPECT_THROW(maxpool2(Tensor({1, 1, 3, 4})), ShapeError);

  Tape tape;
  Tensor g = x;
  g.set_requires_grad(true);
  {
    TapeScope scope(tape);
    tape.backward(maxpool2(g));
  }
  EXPECT_EQ(values(Tensor(x.shape(), std::vector<float>(g.grad().begin(), g.grad().end()))),
            (std::vector<float>{0, 0, 0, 1}));
}

TEST(MaxPool, TiesRouteToFirstMaximum) {
  Tensor x({1, 1, 2, 2}, std::vector<float>{1, 3, 3, 3});
  x.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(maxpool2(x));
  }
  EXPECT_EQ(std::vector<float>(x.grad().begin(), x.grad().end()), (std::vector<float>{0, 1, 0, 0}));
}

TEST(Bilinear, SameSizeIsBitIdentical) {
  const Tensor x = random_tensor({2, 3, 7, 5}, 7);
  EXPECT_EQ(values(bilinear_resize(x, 7, 5)), values(x));
}

TEST(Bilinear, UpsampleMatchesHalfPixelFormula) {
  const Tensor x({1, 1, 2, 2}, std::vector<float>{1, 3, 5, 7});
  const Tensor y = bilinear_resize(x, 4, 4);
  EXPECT_EQ(y.at(0, 0, 0, 0), 1.0f);
  EXPECT_EQ(y.at(0, 0, 0, 3), 3.0f);
  EXPECT_EQ(y.at(0, 0, 3, 0), 5.0f);
  EXPECT_EQ(y.at(0, 0, 3, 3), 7.0f);
  const auto expect = oracle::bilinear({1, 3, 5, 7}, 2, 2, 4, 4);
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y.data()[i], expect[i], 1e-6);
  // Interior sample (1,1) sits at source (0.25, 0.25).
  EXPECT_NEAR(y.at(0, 0, 1, 1), 1 + 0.25 * 2 + 0.25 * 4, 1e-6);
}

TEST(Bilinear, ArbitrarySizesMatchFormula) {
  const Tensor x = random_tensor({1, 1, 5, 9}, 8);
  const std::vector<double> xv(x.data().begin(), x.data().end());
  for (auto [oh, ow] : {std::pair{3, 4}, {10, 18}, {7, 2}, {1, 1}}) {
    const Tensor y = bilinear_resize(x, oh, ow);
    const auto expect = oracle::bilinear(xv, 5, 9, oh, ow);
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y.data()[i], expect[i], 1e-6);
  }
}

TEST(Bilinear, ConstantImagesStayConstant) {
  const Tensor x({1, 2, 8, 8}, 0.3f);
  for (auto [oh, ow] : {std::pair{16, 16}, {3, 5}, {4, 4}}) {
    const Tensor y = bilinear_resize(x, oh, ow);
    for (float v : y.data()) EXPECT_FLOAT_EQ(v, 0.3f);
  }
  const Tensor round_trip = bilinear_resize(bilinear_resize(x, 4, 4), 8, 8);
  for (float v : round_trip.data()) EXPECT_EQ(v, 0.3f);
}

TEST(Concat, ShapesSliceBackAndGradientSplit) {
  const Tensor a = random_tensor({2, 3, 4, 4}, 9);
  const Tensor z({2, 5, 4, 4}, 0.0f);
  const Tensor c = concat_channels(a, z);
  EXPECT_EQ(c.shape(), (Shape{2, 8, 4, 4}));
  EXPECT_EQ(values(slice_channels(c, 0, 3)), values(a));
  EXPECT_THROW(concat_channels(a, Tensor({2, 5, 4, 3})), ShapeError);
  EXPECT_THROW(concat_channels(a, Tensor({1, 5, 4, 4})), ShapeError);

  Tensor p = random_tensor({1, 2, 2, 2}, 10);
  Tensor q = random_tensor({1, 1, 2, 2}, 11);
  p.set_requires_grad(true);
  q.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    const Tensor joined = concat_channels(p, q);
    std::vector<float> seed(12);
    std::iota(seed.begin(), seed.end(), 0.0f);
    tape.backward(joined, seed);
  }
  EXPECT_EQ(std::vector<float>(p.grad().begin(), p.grad().end()),
            (std::vector<float>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(std::vector<float>(q.grad().begin(), q.grad().end()), (std::vector<float>{8, 9, 10, 11}));
}

TEST(Kaiming, VarianceBiasAndDeterminism) {
  Conv2d a(256, 128, 3);
  Rng r1(42);
  a.init_kaiming(r1);
  double s = 0, q = 0;
  for (float v : a.weight().data()) {
    s += v;
    q += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(a.weight().numel());
  EXPECT_EQ(n, 294912);
  const double var = q / n - (s / n) * (s / n);
  const double expect = 2.0 / (256 * 9);
  EXPECT_LT(std::abs(var - expect) / expect, 0.2);
  for (float v : a.bias().data()) EXPECT_EQ(v, 0.0f);

  Conv2d b(256, 128, 3);
  Rng r2(42);
  b.init_kaiming(r2);
  EXPECT_EQ(values(a.weight()), values(b.weight()));
}

TEST(ConvBlock, SamePaddingKeepsSpatialSize) {
  ConvBlock block(3, 8);
  Rng rng(1);
  block.init(rng);
  const Tensor y = block.forward(random_tensor({2, 3, 7, 5}, 12));
  EXPECT_EQ(y.shape(), (Shape{2, 8, 7, 5}));
  for (float v : y.data()) EXPECT_GE(v, 0.0f);
}

}  // namespace
