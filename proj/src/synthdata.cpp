#include "pcreg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace pcreg::synth {
namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

void require_range(double lo, double hi, const char* name) {
  require(lo <= hi, std::string(name) + ": lower bound exceeds upper bound");
}

// Separable box filter of radius r with edge clamping.
std::vector<double> box_filter(const std::vector<double>& in, std::int64_t h, std::int64_t w,
                               int r) {
  std::vector<double> tmp(in.size()), out(in.size());
  const double norm = 1.0 / (2 * r + 1);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) s += in[y * w + std::clamp<std::int64_t>(x + k, 0, w - 1)];
      tmp[y * w + x] = s * norm;
    }
  }
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) s += tmp[std::clamp<std::int64_t>(y + k, 0, h - 1) * w + x];
      out[y * w + x] = s * norm;
    }
  }
  return out;
}

// Smooth field with max |value| = amplitude (or all zeros).
std::vector<double> elastic_component(std::int64_t h, std::int64_t w, int radius,
                                      double amplitude, Rng& rng) {
  std::vector<double> noise(static_cast<std::size_t>(h * w));
  for (double& v : noise) v = rng.uniform(-1.0, 1.0);
  std::vector<double> field = box_filter(noise, h, w, radius);
  double peak = 0.0;
  for (double v : field) peak = std::max(peak, std::abs(v));
  const double k = peak > 0.0 ? amplitude / peak : 0.0;
  for (double& v : field) v *= k;
  return field;
}

}  // namespace

GeneratorConfig GeneratorConfig::zero_amplitude(std::int64_t height, std::int64_t width,
                                                std::uint64_t seed) {
  GeneratorConfig c;
  c.height = height;
  c.width = width;
  c.seed = seed;
  c.max_rotation_deg = 0.0;
  c.max_translation = 0.0;
  c.min_scale = c.max_scale = 1.0;
  c.max_elastic_amplitude = 0.0;
  c.gamma_lo = c.gamma_hi = 1.0;
  c.contrast_lo = c.contrast_hi = 1.0;
  c.bias_lo = c.bias_hi = 0.0;
  c.noise_lo = c.noise_hi = 0.0;
  return c;
}

void GeneratorConfig::validate() const {
  require(height >= 8 && width >= 8 && height % 8 == 0 && width % 8 == 0,
          "image size must be a positive multiple of 8, got " + std::to_string(height) + "x" +
              std::to_string(width));
  require(n_blobs >= 0 && n_vessels >= 0, "n_blobs and n_vessels must be >= 0");
  require(max_rotation_deg >= 0.0 && max_translation >= 0.0 && max_elastic_amplitude >= 0.0,
          "geometric amplitudes must be >= 0");
  require(elastic_radius >= 0, "elastic_radius must be >= 0");
  require(min_scale > 0.0, "scale must be positive");
  require_range(min_scale, max_scale, "scale");
  require_range(gamma_lo, gamma_hi, "gamma");
  require(gamma_lo > 0.0, "gamma must be positive");
  require_range(contrast_lo, contrast_hi, "contrast");
  require_range(bias_lo, bias_hi, "bias");
  require_range(noise_lo, noise_hi, "noise");
  require(noise_lo >= 0.0, "noise sigma must be >= 0");
}

float sample_bilinear(const Image& img, double row, double col) {
  row = std::clamp(row, 0.0, static_cast<double>(img.height - 1));
  col = std::clamp(col, 0.0, static_cast<double>(img.width - 1));
  const auto r0 = static_cast<std::int64_t>(std::floor(row));
  const auto c0 = static_cast<std::int64_t>(std::floor(col));
  const std::int64_t r1 = std::min(r0 + 1, img.height - 1);
  const std::int64_t c1 = std::min(c0 + 1, img.width - 1);
  const double fr = row - static_cast<double>(r0);
  const double fc = col - static_cast<double>(c0);
  const double top = img.at(r0, c0) + fc * (img.at(r0, c1) - img.at(r0, c0));
  const double bottom = img.at(r1, c0) + fc * (img.at(r1, c1) - img.at(r1, c0));
  return static_cast<float>(top + fr * (bottom - top));
}

Image render_scene(std::int64_t height, std::int64_t width, int n_blobs, int n_vessels,
                   Rng& rng) {
  const double h = static_cast<double>(height);
  const double w = static_cast<double>(width);
  const double extent = std::min(h, w);
  std::vector<double> blobs(static_cast<std::size_t>(height * width), 0.0);
  std::vector<double> vessels(blobs.size(), 0.0);

  for (int b = 0; b < n_blobs; ++b) {
    const double amp = rng.uniform(0.2, 0.8);
    const double cy = rng.uniform(0.0, h);
    const double cx = rng.uniform(0.0, w);
    const double sigma = rng.uniform(extent / 12.0, extent / 5.0);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (std::int64_t y = 0; y < height; ++y) {
      for (std::int64_t x = 0; x < width; ++x) {
        const double dy = y - cy, dx = x - cx;
        blobs[y * width + x] += amp * std::exp(-(dx * dx + dy * dy) * inv);
      }
    }
  }

  for (int v = 0; v < n_vessels; ++v) {
    double y = rng.uniform(0.0, h);
    double x = rng.uniform(0.0, w);
    double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double sigma = rng.uniform(0.6, 1.2);
    const double amp = rng.uniform(0.5, 1.0);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const auto reach = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
    const auto steps = static_cast<int>(2 * std::max(height, width));
    for (int s = 0; s < steps; ++s) {
      const auto iy = static_cast<std::int64_t>(std::floor(y));
      const auto ix = static_cast<std::int64_t>(std::floor(x));
      for (std::int64_t py = std::max<std::int64_t>(0, iy - reach);
           py <= std::min(height - 1, iy + reach); ++py) {
        for (std::int64_t px = std::max<std::int64_t>(0, ix - reach);
             px <= std::min(width - 1, ix + reach); ++px) {
          const double dy = py - y, dx = px - x;
          double& cell = vessels[py * width + px];
          cell = std::max(cell, amp * std::exp(-(dx * dx + dy * dy) * inv));
        }
      }
      heading += 0.25 * rng.normal();
      y += std::sin(heading);
      x += std::cos(heading);
      if (y < -reach || y > h + reach || x < -reach || x > w + reach) break;
    }
  }

  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    blobs[i] += vessels[i];
    if (i == 0 || blobs[i] < lo) lo = blobs[i];
    if (i == 0 || blobs[i] > hi) hi = blobs[i];
  }
  Image out(height, width);
  const double span = hi - lo;
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    out.pixels[i] = span > 0.0 ? static_cast<float>(std::clamp((blobs[i] - lo) / span, 0.0, 1.0))
                               : 0.0f;
  }
  return out;
}

ImagePair generate_pair(const GeneratorConfig& config, std::uint64_t index) {
  config.validate();
  Rng rng = Rng::for_stream(config.seed, index);
  const std::int64_t h = config.height, w = config.width;

  ImagePair pair;
  pair.fixed = render_scene(h, w, config.n_blobs, config.n_vessels, rng);

  GroundTruth& gt = pair.truth;
  gt.rotation_deg = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
  gt.translation_x = rng.uniform(-config.max_translation, config.max_translation);
  gt.translation_y = rng.uniform(-config.max_translation, config.max_translation);
  gt.scale = rng.uniform(config.min_scale, config.max_scale);
  gt.elastic_amplitude = rng.uniform(0.0, config.max_elastic_amplitude);
  const auto ex = elastic_component(h, w, config.elastic_radius, gt.elastic_amplitude, rng);
  const auto ey = elastic_component(h, w, config.elastic_radius, gt.elastic_amplitude, rng);
  gt.gamma = rng.uniform(config.gamma_lo, config.gamma_hi);
  gt.contrast = rng.uniform(config.contrast_lo, config.contrast_hi);
  gt.bias = rng.uniform(config.bias_lo, config.bias_hi);
  gt.noise_sigma = rng.uniform(config.noise_lo, config.noise_hi);

  // Sampling position: affine applied to the elastically displaced grid.
  const double theta = gt.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta) * gt.scale;
  const double sn = std::sin(theta) * gt.scale;
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  gt.displacement_x.resize(static_cast<std::size_t>(h * w));
  gt.displacement_y.resize(static_cast<std::size_t>(h * w));
  Image warped(h, w);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y * w + x);
      const double qy = (y + ey[i]) - cy;
      const double qx = (x + ex[i]) - cx;
      const double sy = cy + (sn * qx + cs * qy) + gt.translation_y;
      const double sx = cx + (cs * qx - sn * qy) + gt.translation_x;
      gt.displacement_x[i] = static_cast<float>(sx - x);
      gt.displacement_y[i] = static_cast<float>(sy - y);
      warped.pixels[i] = sample_bilinear(pair.fixed, sy, sx);
    }
  }

  // v' = contrast * v^gamma + offset, offset keeping mid-grey in place.
  const double offset = (1.0 - gt.contrast) * 0.5 + gt.bias;
  pair.moving = Image(h, w);
  for (std::size_t i = 0; i < warped.pixels.size(); ++i) {
    double v = warped.pixels[i];
    if (gt.gamma != 1.0) v = std::pow(v, gt.gamma);
    v = gt.contrast * v + offset;
    if (gt.noise_sigma > 0.0) v += gt.noise_sigma * rng.normal();
    pair.moving.pixels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return pair;
}

void ScanSequenceConfig::validate() const {
  require(n_frames >= 2, "scan sequence needs at least 2 frames");
  require(height >= 8 && width >= 16 && height % 8 == 0 && width % 16 == 0,
          "scan frame height must be a multiple of 8 and width a multiple of 16, got " +
              std::to_string(height) + "x" + std::to_string(width));
  require(max_drift >= 0.0, "max_drift must be >= 0");
  require_range(shift_lo, shift_hi, "shift");
  require_range(intensity_lo, intensity_hi, "intensity scale");
}

ScanSequence generate_scan_sequence(const ScanSequenceConfig& config) {
  config.validate();
  Rng rng = Rng::for_stream(config.seed, 0x5CA9ULL);
  const std::int64_t h = config.height, w = config.width, half = w / 2;
  const Image scene = render_scene(h, w, config.n_blobs, config.n_vessels, rng);

  ScanSequence seq;
  const double drawn_shift = rng.uniform(config.shift_lo, config.shift_hi);
  const double drawn_scale = rng.uniform(config.intensity_lo, config.intensity_hi);
  seq.shift = config.fixed_distortion ? config.shift : drawn_shift;
  seq.intensity_scale = config.fixed_distortion ? config.intensity_scale : drawn_scale;

  double dx = 0.0, dy = 0.0;
  for (int k = 0; k < config.n_frames; ++k) {
    if (k > 0) {
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double step = rng.uniform(0.0, config.max_drift);
      dx += step * std::cos(angle);
      dy += step * std::sin(angle);
    }
    seq.drift_x.push_back(dx);
    seq.drift_y.push_back(dy);

    auto sample = [&](std::int64_t row, std::int64_t col, double extra) {
      return sample_bilinear(scene, static_cast<double>(row) - dy,
                             (static_cast<double>(col) + extra) - dx);
    };
    Image truth(h, w), odd(h, half), even(h, half);
    for (std::int64_t r = 0; r < h; ++r) {
      for (std::int64_t c = 0; c < w; ++c) truth.at(r, c) = sample(r, c, 0.0);
      for (std::int64_t j = 0; j < half; ++j) {
        odd.at(r, j) = truth.at(r, 2 * j);
        const double v = sample(r, 2 * j + 1, seq.shift);
        even.at(r, j) = static_cast<float>(seq.intensity_scale * v);
      }
    }
    seq.truth.push_back(std::move(truth));
    seq.fixed.push_back(std::move(odd));
    seq.moving.push_back(std::move(even));
  }
  return seq;
}

}  // namespace pcreg::synth
