#pragma once

// Evaluation metrics on single-channel images, and the temporal protocol
// for bidirectionally scanned sequences: frames are rebuilt by interleaving
// the reference (odd) columns with registered even columns, and temporal
// consistency is the mean NCC of consecutive frames.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcreg/tensor.hpp"

namespace pcreg::metrics {

/// A (1, H, W) image stored row-major.
struct Image {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::int64_t h, std::int64_t w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h * w), fill) {}

  float& at(std::int64_t r, std::int64_t c) { return pixels[static_cast<std::size_t>(r * width + c)]; }
  float at(std::int64_t r, std::int64_t c) const {
    return pixels[static_cast<std::size_t>(r * width + c)];
  }
  bool operator==(const Image&) const = default;

  /// Batch element `n` of an (N, 1, H, W) tensor.
  static Image from_tensor(const Tensor& t, std::int64_t n = 0);
  /// As a (1, 1, H, W) tensor.
  Tensor to_tensor() const;
};

/// Stacks equally sized images into an (N, 1, H, W) tensor.
Tensor stack(const std::vector<const Image*>& images);

/// Values clamped to [0, 1], as every metric expects.
Image clamp01(const Image& x);

/// Zero-mean normalized cross-correlation. Both constant: 1 if equal else 0;
/// exactly one constant: 0.
double ncc(std::span<const float> a, std::span<const float> b);
double ncc(const Image& a, const Image& b);

/// 10 log10(1 / MSE) with peak 1; identical images give kPsnrCap.
constexpr double kPsnrCap = 100.0;
double psnr(std::span<const float> a, std::span<const float> b);
double psnr(const Image& a, const Image& b);

/// Mean SSIM with the training objective's window and constants.
double ssim(const Image& a, const Image& b);

/// Column 2j from odd_img column j, column 2j+1 from even_registered column j.
Image merge_frame(const Image& odd_img, const Image& even_registered);

/// Inverse of merge_frame: {columns 0, 2, 4, ...; columns 1, 3, 5, ...}.
struct ColumnSplit {
  Image odd;
  Image even;
};
ColumnSplit split_columns(const Image& full);

struct FrameSequence {
  enum class Source { kMerged, kOddOnly };
  std::vector<Image> frames;
  Source source = Source::kMerged;
};

/// Mean NCC over consecutive frame pairs; needs at least two frames.
double tncc(const FrameSequence& seq);
double tncg(double tncc_value, double tncc_ref);

struct PairMetrics {
  std::string id;
  double ncc = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
};

struct TemporalMetrics {
  double tncc = 0.0;
  double tncc_ref = 0.0;
  double tncg = 0.0;
};

struct MetricsReport {
  std::vector<PairMetrics> per_pair;
  std::optional<TemporalMetrics> temporal;

  /// Means in per_pair order; id is "mean".
  PairMetrics aggregate() const;
};

/// NCC, SSIM and PSNR of `a` against `b` after clamping both to [0, 1].
PairMetrics evaluate_pair(const std::string& id, const Image& a, const Image& b);

}  // namespace pcreg::metrics
