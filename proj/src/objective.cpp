#include "pcreg/objective.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcreg/ops.hpp"

namespace pcreg {
namespace {

constexpr int kWin = SsimConfig::kWindow;

// Valid-region separable Gaussian filter: (h, w) -> (h - 10, w - 10).
void filter_valid(const double* in, std::int64_t h, std::int64_t w, double* tmp, double* out) {
  const auto& k = SsimConfig::taps();
  const std::int64_t ow = w - kWin + 1;
  const std::int64_t oh = h - kWin + 1;
  for (std::int64_t i = 0; i < h; ++i) {
    const double* row = in + i * w;
    for (std::int64_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int b = 0; b < kWin; ++b) s += k[b] * row[j + b];
      tmp[i * ow + j] = s;
    }
  }
  for (std::int64_t i = 0; i < oh; ++i) {
    for (std::int64_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int a = 0; a < kWin; ++a) s += k[a] * tmp[(i + a) * ow + j];
      out[i * ow + j] = s;
    }
  }
}

// Adjoint of filter_valid; accumulates into `grad_in`.
void filter_valid_adjoint(const double* grad_out, std::int64_t h, std::int64_t w, double* tmp,
                          double* grad_in) {
  const auto& k = SsimConfig::taps();
  const std::int64_t ow = w - kWin + 1;
  const std::int64_t oh = h - kWin + 1;
  std::fill(tmp, tmp + h * ow, 0.0);
  for (std::int64_t i = 0; i < oh; ++i) {
    for (int a = 0; a < kWin; ++a) {
      double* trow = tmp + (i + a) * ow;
      const double* grow = grad_out + i * ow;
      for (std::int64_t j = 0; j < ow; ++j) trow[j] += k[a] * grow[j];
    }
  }
  for (std::int64_t i = 0; i < h; ++i) {
    const double* trow = tmp + i * ow;
    double* row = grad_in + i * w;
    for (std::int64_t j = 0; j < ow; ++j) {
      for (int b = 0; b < kWin; ++b) row[j + b] += k[b] * trow[j];
    }
  }
}

// Local moments of one plane pair at every window position.
struct PlaneMoments {
  std::vector<double> mp, mt, spp, stt, spt;
};

PlaneMoments plane_moments(const double* p, const double* t, std::int64_t h, std::int64_t w) {
  const std::int64_t n = h * w;
  const std::int64_t on = (h - kWin + 1) * (w - kWin + 1);
  std::vector<double> pp(n), tt(n), pt(n), tmp(h * (w - kWin + 1));
  for (std::int64_t i = 0; i < n; ++i) {
    pp[i] = p[i] * p[i];
    tt[i] = t[i] * t[i];
    pt[i] = p[i] * t[i];
  }
  PlaneMoments m;
  for (auto* v : {&m.mp, &m.mt, &m.spp, &m.stt, &m.spt}) v->resize(on);
  filter_valid(p, h, w, tmp.data(), m.mp.data());
  filter_valid(t, h, w, tmp.data(), m.mt.data());
  filter_valid(pp.data(), h, w, tmp.data(), m.spp.data());
  filter_valid(tt.data(), h, w, tmp.data(), m.stt.data());
  filter_valid(pt.data(), h, w, tmp.data(), m.spt.data());
  return m;
}

struct SsimTerms {
  double a1, a2, b1, b2;
  double value() const { return (a1 * a2) / (b1 * b2); }
};

inline SsimTerms ssim_terms(double mp, double mt, double spp, double stt, double spt) {
  constexpr double c1 = SsimConfig::kC1;
  constexpr double c2 = SsimConfig::kC2;
  const double vp = spp - mp * mp;
  const double vt = stt - mt * mt;
  const double cov = spt - mp * mt;
  return {2.0 * mp * mt + c1, 2.0 * cov + c2, mp * mp + mt * mt + c1, vp + vt + c2};
}

void check_ssim_shape(const Shape& s) {
  if (s.h < kWin || s.w < kWin) {
    throw ShapeError("ssim: images must be at least 11x11, got " + s.str());
  }
  if (s.numel() == 0) throw ShapeError("ssim: empty input");
}

template <class In>
double ssim_index_impl(std::span<const In> p, std::span<const In> t, const Shape& shape) {
  check_ssim_shape(shape);
  if (static_cast<std::int64_t>(p.size()) != shape.numel() ||
      static_cast<std::int64_t>(t.size()) != shape.numel()) {
    throw ShapeError("ssim: buffer size does not match " + shape.str());
  }
  const std::int64_t planes = shape.n * shape.c;
  const std::int64_t hw = shape.plane();
  std::vector<double> sums(static_cast<std::size_t>(planes), 0.0);
#pragma omp parallel for schedule(static) if (planes > 1)
  for (std::int64_t q = 0; q < planes; ++q) {
    std::vector<double> pd(p.begin() + q * hw, p.begin() + (q + 1) * hw);
    std::vector<double> td(t.begin() + q * hw, t.begin() + (q + 1) * hw);
    const PlaneMoments m = plane_moments(pd.data(), td.data(), shape.h, shape.w);
    double s = 0.0;
    for (std::size_t i = 0; i < m.mp.size(); ++i) {
      s += ssim_terms(m.mp[i], m.mt[i], m.spp[i], m.stt[i], m.spt[i]).value();
    }
    sums[static_cast<std::size_t>(q)] = s;
  }
  double total = 0.0;
  for (double s : sums) total += s;
  const double count =
      static_cast<double>(planes * (shape.h - kWin + 1) * (shape.w - kWin + 1));
  return total / count;
}

template <class T>
double to_double(T v) {
  return static_cast<double>(v);
}

}  // namespace

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) {
    throw std::invalid_argument("loss weights must be >= 0 (alpha " + std::to_string(alpha) +
                                ", beta " + std::to_string(beta) + ", gamma " +
                                std::to_string(gamma) + ")");
  }
}

const std::array<double, SsimConfig::kWindow>& SsimConfig::taps() {
  static const std::array<double, kWindow> taps = [] {
    std::array<double, kWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
      const double d = i - kWindow / 2;
      k[i] = std::exp(-(d * d) / (2.0 * kSigma * kSigma));
      sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
  }();
  return taps;
}

double ssim_index(std::span<const float> p, std::span<const float> t, const Shape& shape) {
  return ssim_index_impl(p, t, shape);
}

double ssim_index(std::span<const double> p, std::span<const double> t, const Shape& shape) {
  return ssim_index_impl(p, t, shape);
}

template <class T>
BasicTensor<T> ssim(const BasicTensor<T>& p, const BasicTensor<T>& t) {
  detail::require_same_shape(p.shape(), t.shape(), "ssim");
  const Shape shape = p.shape();
  const double value = ssim_index(p.data(), t.data(), shape);
  BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(value));
  detail::check_finite(out, OpKind::kSsim);

  detail::record<T>(OpKind::kSsim, {p, t}, out, [p, t, shape](std::span<const T> g) {
    const std::int64_t planes = shape.n * shape.c;
    const std::int64_t hw = shape.plane();
    const std::int64_t oh = shape.h - kWin + 1;
    const std::int64_t ow = shape.w - kWin + 1;
    const double count = static_cast<double>(planes * oh * ow);
    const double upstream = to_double(g[0]) / count;
    const bool want_p = p.requires_grad();
    const bool want_t = t.requires_grad();
    T* gp = want_p ? p.storage().grad_buffer() : nullptr;
    T* gt = want_t ? t.storage().grad_buffer() : nullptr;
    auto pv = p.data();
    auto tv = t.data();

#pragma omp parallel for schedule(static) if (planes > 1)
    for (std::int64_t q = 0; q < planes; ++q) {
      std::vector<double> pd(pv.begin() + q * hw, pv.begin() + (q + 1) * hw);
      std::vector<double> td(tv.begin() + q * hw, tv.begin() + (q + 1) * hw);
      const PlaneMoments m = plane_moments(pd.data(), td.data(), shape.h, shape.w);
      const std::size_t on = m.mp.size();
      // Partial derivatives of each window's SSIM with respect to the five
      // local moments; the P-side and T-side are mirror images.
      std::vector<double> d_mp(on), d_spp(on), d_mt(on), d_stt(on), d_spt(on);
      for (std::size_t i = 0; i < on; ++i) {
        const SsimTerms s = ssim_terms(m.mp[i], m.mt[i], m.spp[i], m.stt[i], m.spt[i]);
        const double den = s.b1 * s.b2;
        const double v = s.a1 * s.a2 / den;
        const double mp = m.mp[i], mt = m.mt[i];
        d_spt[i] = upstream * 2.0 * s.a1 / den;
        d_spp[i] = upstream * (-v / s.b2);
        d_stt[i] = d_spp[i];
        d_mp[i] = upstream * ((2.0 * mt * s.a2 - 2.0 * mt * s.a1) / den -
                              v * (2.0 * mp / s.b1 - 2.0 * mp / s.b2));
        d_mt[i] = upstream * ((2.0 * mp * s.a2 - 2.0 * mp * s.a1) / den -
                              v * (2.0 * mt / s.b1 - 2.0 * mt / s.b2));
      }
      std::vector<double> tmp(static_cast<std::size_t>(shape.h * ow));
      std::vector<double> a_m(static_cast<std::size_t>(hw)), a_s(static_cast<std::size_t>(hw)),
          a_x(static_cast<std::size_t>(hw));
      auto side = [&](const std::vector<double>& dm, const std::vector<double>& ds,
                      const std::vector<double>& other, const std::vector<double>& self,
                      T* dst) {
        std::fill(a_m.begin(), a_m.end(), 0.0);
        std::fill(a_s.begin(), a_s.end(), 0.0);
        std::fill(a_x.begin(), a_x.end(), 0.0);
        filter_valid_adjoint(dm.data(), shape.h, shape.w, tmp.data(), a_m.data());
        filter_valid_adjoint(ds.data(), shape.h, shape.w, tmp.data(), a_s.data());
        filter_valid_adjoint(d_spt.data(), shape.h, shape.w, tmp.data(), a_x.data());
        T* out = dst + q * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          out[i] += static_cast<T>(a_m[i] + 2.0 * self[i] * a_s[i] + other[i] * a_x[i]);
        }
      };
      if (gp) side(d_mp, d_spp, td, pd, gp);
      if (gt) side(d_mt, d_stt, pd, td, gt);
    }
  });
  return out;
}

template <class T>
BasicTensor<T> stage_loss(const BasicTensor<T>& p, const BasicTensor<T>& t,
                          const LossWeights& w, StageTerms* terms) {
  w.validate();
  detail::require_same_shape(p.shape(), t.shape(), "stage_loss");
  const BasicTensor<T> d = sub(p, t);
  const BasicTensor<T> l1 = mean(abs(d));
  const BasicTensor<T> l2 = mean(square(d));
  const BasicTensor<T> s = ssim(p, t);
  // beta (1 - s) is formed as beta - beta s.
  const BasicTensor<T> dissim = add(scale(s, static_cast<T>(-w.beta)), static_cast<T>(w.beta));
  BasicTensor<T> total = add(add(l1, scale(l2, static_cast<T>(w.alpha))), dissim);
  if (terms) {
    terms->l1 = to_double(l1.item());
    terms->l2 = to_double(l2.item());
    terms->ssim = to_double(s.item());
    terms->total = to_double(total.item());
  }
  return total;
}

template <class T>
BasicTensor<T> total_loss(const BasicTensor<T>& refined, const BasicTensor<T>& coarse,
                          const BasicTensor<T>& fixed, const LossWeights& w,
                          LossBreakdown* breakdown) {
  w.validate();
  StageTerms final_terms;
  BasicTensor<T> final_loss = stage_loss(refined, fixed, w, &final_terms);
  if (breakdown) {
    *breakdown = LossBreakdown{};
    breakdown->final_stage = final_terms;
    breakdown->aux_stage = StageTerms{0.0, 0.0, 0.0, 0.0};
  }
  if (w.gamma == 0.0) {
    if (breakdown) breakdown->total = final_terms.total;
    return final_loss;
  }
  StageTerms aux_terms;
  const BasicTensor<T> aux = scale(stage_loss(coarse, fixed, w, &aux_terms), static_cast<T>(w.gamma));
  BasicTensor<T> total = add(final_loss, aux);
  if (breakdown) {
    breakdown->aux_stage = aux_terms;
    breakdown->aux_contribution = to_double(aux.item());
    breakdown->total = to_double(total.item());
  }
  return total;
}

Tensor total_loss(const ForwardOutput& out, const Tensor& fixed, const LossWeights& w,
                  LossBreakdown* breakdown) {
  return total_loss<float>(out.refined, out.coarse, fixed, w, breakdown);
}

#define PCREG_INSTANTIATE_OBJECTIVE(T)                                                         \
  template BasicTensor<T> ssim<T>(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> stage_loss<T>(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                        const LossWeights&, StageTerms*);                      \
  template BasicTensor<T> total_loss<T>(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                        const BasicTensor<T>&, const LossWeights&,             \
                                        LossBreakdown*);

PCREG_INSTANTIATE_OBJECTIVE(float)
PCREG_INSTANTIATE_OBJECTIVE(double)

#undef PCREG_INSTANTIATE_OBJECTIVE

}  // namespace pcreg
