#pragma once

// Training objective: a per-stage image loss (mean L1 + weighted mean squared
// error + weighted SSIM dissimilarity) and the two-stage composite that adds
// an auxiliary term on the coarse output.

#include <array>
#include <cstdint>
#include <span>

#include "pcreg/model.hpp"
#include "pcreg/tensor.hpp"

namespace pcreg {

struct LossWeights {
  double alpha = 0.5;  // squared-error weight
  double beta = 0.1;   // SSIM weight
  double gamma = 0.3;  // auxiliary coarse-stage weight

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct SsimConfig {
  static constexpr int kWindow = 11;
  static constexpr double kSigma = 1.5;
  static constexpr double kRange = 1.0;
  static constexpr double kC1 = (0.01 * kRange) * (0.01 * kRange);
  static constexpr double kC2 = (0.03 * kRange) * (0.03 * kRange);

  /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
  static const std::array<double, kWindow>& taps();
};

/// Mean SSIM over every valid 11x11 window position of every (n, c) plane,
/// computed in double. Throws ShapeError if a plane is smaller than the window.
double ssim_index(std::span<const float> p, std::span<const float> t, const Shape& shape);
double ssim_index(std::span<const double> p, std::span<const double> t, const Shape& shape);

/// Differentiable mean SSIM of P against T as a (1,1,1,1) tensor.
template <class T>
BasicTensor<T> ssim(const BasicTensor<T>& p, const BasicTensor<T>& t);

/// Values of the three terms of one stage loss, for logging.
struct StageTerms {
  double l1 = 0.0;
  double l2 = 0.0;
  double ssim = 1.0;
  double total = 0.0;
};

/// mean|P - T| + alpha mean(P - T)^2 + beta (1 - SSIM(P, T)).
template <class T>
BasicTensor<T> stage_loss(const BasicTensor<T>& p, const BasicTensor<T>& t,
                          const LossWeights& w, StageTerms* terms = nullptr);

struct LossBreakdown {
  StageTerms final_stage;
  StageTerms aux_stage;  // zero-valued when gamma == 0
  double aux_contribution = 0.0;  // gamma * aux_stage.total
  double total = 0.0;
};

/// stage_loss(refined, fixed) + gamma stage_loss(coarse, fixed). With
/// gamma == 0 the auxiliary term is not built at all.
template <class T>
BasicTensor<T> total_loss(const BasicTensor<T>& refined, const BasicTensor<T>& coarse,
                          const BasicTensor<T>& fixed, const LossWeights& w,
                          LossBreakdown* breakdown = nullptr);

Tensor total_loss(const ForwardOutput& out, const Tensor& fixed, const LossWeights& w,
                  LossBreakdown* breakdown = nullptr);

}  // namespace pcreg
