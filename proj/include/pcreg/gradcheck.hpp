#pragma once

// Finite-difference gradient checking.
//
// The analytic gradient is computed at precision A (float or double) and
// compared against a central difference of the same op evaluated in double
// at the same (float-representable) point. A scalar objective sum(R * op(x))
// with a fixed random projection R exercises every output element.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcreg/rng.hpp"
#include "pcreg/tensor.hpp"

namespace pcreg {

struct InputSpec {
  Shape shape;
  double lo = 0.1;
  double hi = 0.9;
  /// Values are kept at least `gap` away from each of these points.
  std::vector<double> avoid;
  /// Index of an earlier input that this one must differ from elementwise
  /// by at least `gap`, or -1.
  int apart_from = -1;
  /// A permutation of an evenly spaced grid over [lo, hi]: all values
  /// pairwise distinct by at least `gap`.
  bool distinct = false;
  bool differentiable = true;
};

struct GradCheckOptions {
  double h = 1e-3;
  /// Minimum distance from kinks and ties, as a multiple of h.
  double gap_factor = 10.0;
  /// Fourth-order five-point stencil instead of the central difference.
  bool five_point = false;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

template <class T>
using OpUnderTest = std::function<BasicTensor<T>(const std::vector<BasicTensor<T>>&)>;

/// Draws the input values for `specs`; identical for a given seed.
inline std::vector<std::vector<double>> sample_inputs(const std::vector<InputSpec>& specs,
                                                      std::uint64_t seed,
                                                      const GradCheckOptions& opt) {
  const double gap = opt.gap_factor * opt.h;
  std::vector<std::vector<double>> values(specs.size());
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const InputSpec& s = specs[k];
    Rng rng = Rng::for_stream(seed, k);
    const auto n = static_cast<std::size_t>(s.shape.numel());
    auto& v = values[k];
    v.resize(n);
    if (s.distinct) {
      const double step = n > 1 ? (s.hi - s.lo) / static_cast<double>(n - 1) : 0.0;
      if (n > 1 && step < gap) {
        throw std::invalid_argument("distinct input of " + std::to_string(n) +
                                    " values cannot keep spacing " + std::to_string(gap));
      }
      const auto perm = rng.permutation(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = s.lo + step * static_cast<double>(perm[i]);
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        double x = rng.uniform(s.lo, s.hi);
        auto too_close = [&](double y) {
          for (double a : s.avoid) {
            if (std::abs(y - a) < gap) return true;
          }
          return false;
        };
        while (too_close(x)) x = rng.uniform(s.lo, s.hi);
        if (s.apart_from >= 0) {
          const double o = values[static_cast<std::size_t>(s.apart_from)][i];
          if (std::abs(x - o) < gap) {
            const double push = gap * (1.0 + rng.uniform());
            x = x >= o ? o + push : o - push;
          }
        }
        v[i] = x;
      }
    }
    // Both precisions see exactly the same point.
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  }
  return values;
}

/// Checks the gradient of `op` with respect to every differentiable input.
/// `analytic_op` runs at precision A; `reference_op` is the double-precision
/// instantiation of the same op.
template <class A>
GradCheckReport grad_check(const OpUnderTest<A>& analytic_op,
                           const OpUnderTest<double>& reference_op,
                           const std::vector<InputSpec>& specs, std::uint64_t seed,
                           const GradCheckOptions& opt = {}) {
  const auto values = sample_inputs(specs, seed, opt);

  std::vector<BasicTensor<A>> inputs;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    std::vector<A> data(values[k].begin(), values[k].end());
    BasicTensor<A> t(specs[k].shape, std::move(data));
    t.set_requires_grad(specs[k].differentiable);
    inputs.push_back(t);
  }

  BasicTape<A> tape;
  std::vector<double> projection;
  {
    BasicTapeScope<A> scope(tape);
    BasicTensor<A> out = analytic_op(inputs);
    Rng rng = Rng::for_stream(seed, 0x5EEDULL);
    projection.resize(static_cast<std::size_t>(out.numel()));
    for (double& r : projection) r = static_cast<double>(static_cast<A>(rng.uniform(0.5, 1.5)));
    std::vector<A> seed_grad(projection.begin(), projection.end());
    if (!out.requires_grad()) {
      throw std::logic_error("grad_check: op output does not depend on any differentiable input");
    }
    tape.backward(out, seed_grad);
  }

  std::vector<BasicTensor<double>> probe;
  for (std::size_t k = 0; k < specs.size(); ++k) probe.emplace_back(specs[k].shape, values[k]);
  auto objective = [&]() {
    BasicNoGradScope<double> no_grad;
    const BasicTensor<double> out = reference_op(probe);
    auto y = out.data();
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += projection[i] * y[i];
    return s;
  };

  GradCheckReport report;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    if (!specs[k].differentiable) continue;
    auto analytic = inputs[k].grad();
    auto x = probe[k].mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      auto at = [&](double offset) {
        x[i] = saved + offset;
        return objective();
      };
      double numeric = 0.0;
      if (opt.five_point) {
        const double d1 = at(opt.h) - at(-opt.h);
        const double d2 = at(2 * opt.h) - at(-2 * opt.h);
        numeric = (8.0 * d1 - d2) / (12.0 * opt.h);
      } else {
        numeric = (at(opt.h) - at(-opt.h)) / (2.0 * opt.h);
      }
      x[i] = saved;
      const double a = analytic.empty() ? 0.0 : static_cast<double>(analytic[i]);
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      ++report.checked;
      if (err > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = err;
        report.worst_input = k;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

/// One named entry of the gradient suite. `specs` draws randomized shapes
/// from the seed.
struct GradCase {
  std::string name;
  std::function<std::vector<InputSpec>(Rng&)> specs;
  OpUnderTest<float> op_f32;
  OpUnderTest<double> op_f64;
};

/// Every differentiable primitive of the library.
std::vector<GradCase> gradient_suite();

struct GradCaseResult {
  std::string name;
  double worst = 0.0;
  std::uint64_t worst_seed = 0;
  GradCheckReport report;  // of the worst seed
};

/// Runs `c` over seeds first_seed .. first_seed + n_seeds - 1. In 64-bit
/// mode the analytic side is also double and the numeric side uses the
/// five-point stencil.
GradCaseResult run_grad_case(const GradCase& c, std::uint64_t first_seed, int n_seeds,
                             bool f64_mode);

}  // namespace pcreg
