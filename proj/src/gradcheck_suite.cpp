#include <type_traits>

#include "pcreg/gradcheck.hpp"
#include "pcreg/nn.hpp"
#include "pcreg/objective.hpp"
#include "pcreg/ops.hpp"

namespace pcreg {
namespace {

template <class F>
GradCase make_case(std::string name, std::function<std::vector<InputSpec>(Rng&)> specs, F f) {
  return {std::move(name), std::move(specs), OpUnderTest<float>(f), OpUnderTest<double>(f)};
}

template <class V>
using elem_t = typename std::decay_t<V>::value_type::value_type;

std::int64_t pick(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

Shape random_shape(Rng& rng, std::int64_t max_c = 3, std::int64_t min_hw = 2,
                   std::int64_t max_hw = 6) {
  return {pick(rng, 1, 2), pick(rng, 1, max_c), pick(rng, min_hw, max_hw),
          pick(rng, min_hw, max_hw)};
}

InputSpec unit(Shape s) {
  InputSpec spec;
  spec.shape = s;
  return spec;
}

InputSpec ranged(Shape s, double lo, double hi, std::vector<double> avoid = {}) {
  InputSpec spec = unit(s);
  spec.lo = lo;
  spec.hi = hi;
  spec.avoid = std::move(avoid);
  return spec;
}

InputSpec apart(Shape s, int other) {
  InputSpec spec = unit(s);
  spec.apart_from = other;
  return spec;
}

std::vector<InputSpec> same_shape_pair(Rng& rng) {
  const Shape s = random_shape(rng);
  return {unit(s), unit(s)};
}

std::vector<InputSpec> conv_specs(Rng& rng, int k) {
  const Shape x = random_shape(rng, 3, 3, 7);
  const std::int64_t cout = pick(rng, 1, 3);
  return {unit(x), ranged({cout, x.c, k, k}, -0.5, 0.5), ranged({1, cout, 1, 1}, -0.5, 0.5)};
}

Shape image_shape(Rng& rng) { return {pick(rng, 1, 2), 1, pick(rng, 12, 18), pick(rng, 12, 18)}; }

}  // namespace

std::vector<GradCase> gradient_suite() {
  std::vector<GradCase> cases;

  cases.push_back(make_case(
      "identity", [](Rng& rng) { return std::vector<InputSpec>{unit(random_shape(rng))}; },
      [](const auto& in) { return scale(in[0], elem_t<decltype(in)>(1)); }));
  cases.push_back(make_case("add", same_shape_pair,
                            [](const auto& in) { return add(in[0], in[1]); }));
  cases.push_back(make_case(
      "add_scalar", [](Rng& rng) { return std::vector<InputSpec>{unit(random_shape(rng))}; },
      [](const auto& in) { return add(in[0], elem_t<decltype(in)>(0.25)); }));
  cases.push_back(make_case("sub", same_shape_pair,
                            [](const auto& in) { return sub(in[0], in[1]); }));
  cases.push_back(make_case("mul", same_shape_pair,
                            [](const auto& in) { return mul(in[0], in[1]); }));
  cases.push_back(make_case(
      "scale", [](Rng& rng) { return std::vector<InputSpec>{unit(random_shape(rng))}; },
      [](const auto& in) { return scale(in[0], elem_t<decltype(in)>(-1.75)); }));
  cases.push_back(make_case(
      "abs",
      [](Rng& rng) { return std::vector<InputSpec>{ranged(random_shape(rng), -0.9, 0.9, {0.0})}; },
      [](const auto& in) { return abs(in[0]); }));
  cases.push_back(make_case(
      "square", [](Rng& rng) { return std::vector<InputSpec>{unit(random_shape(rng))}; },
      [](const auto& in) { return square(in[0]); }));
  cases.push_back(make_case(
      "clamp01",
      [](Rng& rng) {
        return std::vector<InputSpec>{ranged(random_shape(rng), -0.4, 1.4, {0.0, 1.0})};
      },
      [](const auto& in) { return clamp01(in[0]); }));
  cases.push_back(make_case(
      "relu",
      [](Rng& rng) { return std::vector<InputSpec>{ranged(random_shape(rng), -0.9, 0.9, {0.0})}; },
      [](const auto& in) { return relu(in[0]); }));
  cases.push_back(make_case(
      "mean", [](Rng& rng) { return std::vector<InputSpec>{unit(random_shape(rng))}; },
      [](const auto& in) { return mean(in[0]); }));

  cases.push_back(make_case(
      "conv3x3", [](Rng& rng) { return conv_specs(rng, 3); },
      [](const auto& in) { return conv2d(in[0], in[1], in[2]); }));
  cases.push_back(make_case(
      "conv1x1", [](Rng& rng) { return conv_specs(rng, 1); },
      [](const auto& in) { return conv2d(in[0], in[1], in[2]); }));
  cases.push_back(make_case(
      "batchnorm_train",
      [](Rng& rng) {
        const Shape x = random_shape(rng, 3, 2, 5);
        const Shape p{1, x.c, 1, 1};
        return std::vector<InputSpec>{unit(x), ranged(p, 0.5, 1.5), ranged(p, -0.5, 0.5)};
      },
      [](const auto& in) { return batch_norm_train(in[0], in[1], in[2], 1e-5); }));
  cases.push_back(make_case(
      "batchnorm_eval",
      [](Rng& rng) {
        const Shape x = random_shape(rng, 3, 1, 5);
        const Shape p{1, x.c, 1, 1};
        InputSpec mean_spec = ranged(p, -0.5, 0.5);
        InputSpec var_spec = ranged(p, 0.5, 1.5);
        mean_spec.differentiable = false;
        var_spec.differentiable = false;
        return std::vector<InputSpec>{unit(x), ranged(p, 0.5, 1.5), ranged(p, -0.5, 0.5),
                                      mean_spec, var_spec};
      },
      [](const auto& in) { return batch_norm_eval(in[0], in[1], in[2], in[3], in[4], 1e-5); }));
  cases.push_back(make_case(
      "maxpool2",
      [](Rng& rng) {
        const Shape s{pick(rng, 1, 2), pick(rng, 1, 2), 2 * pick(rng, 1, 3), 2 * pick(rng, 1, 3)};
        InputSpec spec = ranged(s, 0.0, 2.0);
        spec.distinct = true;
        return std::vector<InputSpec>{spec};
      },
      [](const auto& in) { return maxpool2(in[0]); }));
  cases.push_back(make_case(
      "bilinear_up2",
      [](Rng& rng) { return std::vector<InputSpec>{unit(random_shape(rng, 2, 1, 5))}; },
      [](const auto& in) {
        return bilinear_resize(in[0], 2 * in[0].shape().h, 2 * in[0].shape().w);
      }));
  cases.push_back(make_case(
      "bilinear_resize",
      [](Rng& rng) { return std::vector<InputSpec>{unit(random_shape(rng, 2, 1, 7))}; },
      [](const auto& in) {
        // Output size is a fixed function of the input size so both
        // precisions agree.
        const Shape s = in[0].shape();
        return bilinear_resize(in[0], s.h * 3 / 2 + 1, std::max<std::int64_t>(1, s.w - 2));
      }));
  cases.push_back(make_case(
      "concat",
      [](Rng& rng) {
        const Shape a = random_shape(rng);
        Shape b = a;
        b.c = pick(rng, 1, 3);
        return std::vector<InputSpec>{unit(a), unit(b)};
      },
      [](const auto& in) { return concat_channels(in[0], in[1]); }));
  cases.push_back(make_case(
      "slice",
      [](Rng& rng) { return std::vector<InputSpec>{unit(random_shape(rng, 4))}; },
      [](const auto& in) {
        const std::int64_t c = in[0].shape().c;
        return slice_channels(in[0], c / 2, c);
      }));
  cases.push_back(make_case(
      "residual_add",
      [](Rng& rng) {
        const Shape x = random_shape(rng, 3, 2, 5);
        return std::vector<InputSpec>{unit(x), ranged({x.c, x.c, 1, 1}, -0.5, 0.5),
                                      ranged({1, x.c, 1, 1}, -0.5, 0.5)};
      },
      // X + W * F, the injection pattern.
      [](const auto& in) { return add(in[0], conv2d(in[0], in[1], in[2])); }));

  cases.push_back(make_case(
      "l1",
      [](Rng& rng) {
        const Shape s = image_shape(rng);
        return std::vector<InputSpec>{unit(s), apart(s, 0)};
      },
      [](const auto& in) { return mean(abs(sub(in[1], in[0]))); }));
  cases.push_back(make_case(
      "mse", same_shape_pair, [](const auto& in) { return mean(square(sub(in[1], in[0]))); }));
  cases.push_back(make_case(
      "ssim",
      [](Rng& rng) {
        const Shape s = image_shape(rng);
        return std::vector<InputSpec>{unit(s), unit(s)};
      },
      [](const auto& in) { return ssim(in[0], in[1]); }));
  cases.push_back(make_case(
      "stage_loss",
      [](Rng& rng) {
        const Shape s = image_shape(rng);
        return std::vector<InputSpec>{unit(s), apart(s, 0)};
      },
      [](const auto& in) { return stage_loss(in[1], in[0], LossWeights{}); }));
  cases.push_back(make_case(
      "total_loss",
      [](Rng& rng) {
        const Shape s = image_shape(rng);
        return std::vector<InputSpec>{unit(s), apart(s, 0), apart(s, 0)};
      },
      [](const auto& in) { return total_loss(in[1], in[2], in[0], LossWeights{}); }));
  return cases;
}

GradCaseResult run_grad_case(const GradCase& c, std::uint64_t first_seed, int n_seeds,
                             bool f64_mode) {
  GradCaseResult result;
  result.name = c.name;
  GradCheckOptions opt;
  opt.five_point = f64_mode;
  for (int i = 0; i < n_seeds; ++i) {
    const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(i);
    Rng shape_rng = Rng::for_stream(seed, 0xC0DEULL);
    const auto specs = c.specs(shape_rng);
    const GradCheckReport r = f64_mode ? grad_check<double>(c.op_f64, c.op_f64, specs, seed, opt)
                                       : grad_check<float>(c.op_f32, c.op_f64, specs, seed, opt);
    if (i == 0 || r.max_rel_error > result.worst) {
      result.worst = r.max_rel_error;
      result.worst_seed = seed;
      result.report = r;
    }
  }
  return result;
}

}  // namespace pcreg
