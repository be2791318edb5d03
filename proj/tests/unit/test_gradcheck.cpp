#include <gtest/gtest.h>

#include <set>

#include "pcreg/gradcheck.hpp"
#include "pcreg/nn.hpp"
#include "pcreg/objective.hpp"
#include "pcreg/ops.hpp"

namespace {

using namespace pcreg;

InputSpec spec(Shape s) {
  InputSpec out;
  out.shape = s;
  return out;
}

TEST(GradientSuite, CoversEveryPrimitive) {
  std::set<std::string> names;
  for (const auto& c : gradient_suite()) names.insert(c.name);
  for (const char* required :
       {"conv3x3", "conv1x1", "batchnorm_train", "relu", "maxpool2", "bilinear_resize", "concat",
        "residual_add", "l1", "mse", "ssim", "stage_loss", "total_loss", "add", "sub", "mul",
        "scale", "abs", "square", "clamp01", "mean", "batchnorm_eval", "slice"}) {
    EXPECT_TRUE(names.count(required)) << required;
  }
}

class SuiteCase : public ::testing::TestWithParam<std::size_t> {};

TEST_P(SuiteCase, Passes32BitCheckOnFiveSeeds) {
  const GradCase c = gradient_suite()[GetParam()];
  const GradCaseResult r = run_grad_case(c, 0, 5, false);
  EXPECT_LT(r.worst, 1e-2) << c.name << " seed " << r.worst_seed << " analytic "
                           << r.report.worst_analytic << " numeric " << r.report.worst_numeric;
  EXPECT_GT(r.report.checked, 0u);
}

TEST_P(SuiteCase, Passes64BitCheckAtOneInAMillion) {
  const GradCase c = gradient_suite()[GetParam()];
  const GradCaseResult r = run_grad_case(c, 100, 3, true);
  EXPECT_LT(r.worst, 1e-6) << c.name << " seed " << r.worst_seed << " analytic "
                           << r.report.worst_analytic << " numeric " << r.report.worst_numeric;
}

INSTANTIATE_TEST_SUITE_P(All, SuiteCase, ::testing::Range<std::size_t>(0, gradient_suite().size()),
                         [](const auto& info) { return gradient_suite()[info.param].name; });

TEST(GradCheck, IdentityIsExactToFloatRounding) {
  auto op32 = [](const std::vector<Tensor>& in) { return scale(in[0], 1.0f); };
  auto op64 = [](const std::vector<BasicTensor<double>>& in) { return scale(in[0], 1.0); };
  const auto r = grad_check<float>(op32, op64, {spec({1, 2, 4, 4})}, 7);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, ConvOnSmallInput) {
  auto op32 = [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2]); };
  auto op64 = [](const std::vector<BasicTensor<double>>& in) { return conv2d(in[0], in[1], in[2]); };
  const auto r = grad_check<float>(op32, op64,
                                   {spec({1, 2, 6, 6}), spec({3, 2, 3, 3}), spec({1, 3, 1, 1})}, 11);
  EXPECT_LT(r.max_rel_error, 1e-2);
}

TEST(GradCheck, SsimLossOnSixteenBySixteenPair) {
  auto op32 = [](const std::vector<Tensor>& in) { return add(scale(ssim(in[0], in[1]), -1.0f), 1.0f); };
  auto op64 = [](const std::vector<BasicTensor<double>>& in) {
    return add(scale(ssim(in[0], in[1]), -1.0), 1.0);
  };
  const auto r = grad_check<float>(op32, op64, {spec({1, 1, 16, 16}), spec({1, 1, 16, 16})}, 5);
  EXPECT_LT(r.max_rel_error, 1e-2);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // Analytic side differentiates x^2, the reference evaluates 3x: the check must fail.
  auto op32 = [](const std::vector<Tensor>& in) { return square(in[0]); };
  auto op64 = [](const std::vector<BasicTensor<double>>& in) { return scale(in[0], 3.0); };
  const auto r = grad_check<float>(op32, op64, {spec({1, 1, 3, 3})}, 1);
  EXPECT_GT(r.max_rel_error, 0.1);
}

TEST(GradCheck, InputsAvoidKinksAndTies) {
  InputSpec s = spec({1, 1, 8, 8});
  s.lo = -0.5;
  s.hi = 0.5;
  s.avoid = {0.0};
  InputSpec apart = s;
  apart.apart_from = 0;
  InputSpec distinct = spec({1, 1, 4, 4});
  distinct.distinct = true;
  distinct.lo = 0;
  distinct.hi = 2;
  const GradCheckOptions opt;
  const auto v = sample_inputs({s, apart, distinct}, 9, opt);
  const double gap = opt.gap_factor * opt.h;
  for (std::size_t i = 0; i < v[0].size(); ++i) {
    EXPECT_GE(std::abs(v[0][i]), gap * 0.999);
    EXPECT_GE(std::abs(v[1][i] - v[0][i]), gap * 0.999);
  }
  std::vector<double> d = v[2];
  std::sort(d.begin(), d.end());
  for (std::size_t i = 1; i < d.size(); ++i) EXPECT_GE(d[i] - d[i - 1], gap * 0.999);
}

}  // namespace
