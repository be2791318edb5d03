#pragma once

// Deterministic synthetic registration data.
//
// A pair is a smooth scene of Gaussian blobs and thin random-walk vessels
// (the fixed image) and a warped, re-rendered copy of it (the moving image).
// A scan sequence imitates bidirectional raster acquisition: odd columns are
// the reference, even columns come back shifted and dimmer.

#include <cstdint>
#include <vector>

#include "pcreg/metrics.hpp"
#include "pcreg/rng.hpp"

namespace pcreg::synth {

using metrics::Image;

struct GeneratorConfig {
  std::int64_t height = 64;
  std::int64_t width = 64;
  int n_blobs = 6;
  int n_vessels = 4;

  double max_rotation_deg = 5.0;
  double max_translation = 3.0;
  double min_scale = 0.95;
  double max_scale = 1.05;
  double max_elastic_amplitude = 2.0;
  int elastic_radius = 8;

  double gamma_lo = 0.7, gamma_hi = 1.4;
  double contrast_lo = 0.8, contrast_hi = 1.2;
  double bias_lo = -0.1, bias_hi = 0.1;
  double noise_lo = 0.0, noise_hi = 0.02;

  std::uint64_t seed = 0;

  /// No geometric or appearance change at all: moving == fixed.
  static GeneratorConfig zero_amplitude(std::int64_t height, std::int64_t width,
                                        std::uint64_t seed);
  void validate() const;
};

struct GroundTruth {
  double rotation_deg = 0.0;
  double translation_x = 0.0;
  double translation_y = 0.0;
  double scale = 1.0;
  double elastic_amplitude = 0.0;
  double gamma = 1.0;
  double contrast = 1.0;
  double bias = 0.0;
  double noise_sigma = 0.0;
  /// Per-pixel sampling offset (source - target), row-major.
  std::vector<float> displacement_x;
  std::vector<float> displacement_y;
};

struct ImagePair {
  Image moving;
  Image fixed;
  GroundTruth truth;  // diagnostics only
};

/// Blob-and-vessel scene normalized to [0, 1].
Image render_scene(std::int64_t height, std::int64_t width, int n_blobs, int n_vessels, Rng& rng);

/// Bilinear sample with edge clamping at continuous (row, col).
float sample_bilinear(const Image& img, double row, double col);

/// Pair `index` of the dataset; independent of generation order.
ImagePair generate_pair(const GeneratorConfig& config, std::uint64_t index);

struct ScanSequenceConfig {
  int n_frames = 8;
  std::int64_t height = 64;
  std::int64_t width = 64;
  double max_drift = 1.0;
  double shift_lo = 0.5, shift_hi = 2.0;
  double intensity_lo = 0.7, intensity_hi = 0.95;
  int n_blobs = 6;
  int n_vessels = 6;
  std::uint64_t seed = 0;

  /// Fixes shift and intensity scale instead of drawing them.
  bool fixed_distortion = false;
  double shift = 0.0;
  double intensity_scale = 1.0;

  void validate() const;
};

struct ScanSequence {
  std::vector<Image> moving;  // even columns as acquired, H x W/2
  std::vector<Image> fixed;   // odd columns, H x W/2
  std::vector<Image> truth;   // full frames, H x W
  double shift = 0.0;
  double intensity_scale = 1.0;
  std::vector<double> drift_x;  // cumulative, per frame
  std::vector<double> drift_y;
};

ScanSequence generate_scan_sequence(const ScanSequenceConfig& config);

}  // namespace pcreg::synth
