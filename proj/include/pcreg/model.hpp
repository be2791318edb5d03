#pragma once

// The four-module progressive registration network:
//
//   R  registration U-Net      moving -> coarse image + encoder features
//   E  reference encoder       fixed  -> encoder features (own weights)
//   C  contrast module         per scale ReLU(BN(Conv1x1([F_f; F_r])))
//   U  refinement U-Net        [coarse; F_c^(1)] -> refined image, with the
//                              contrast features injected into every
//                              decoder level by residual addition
//
// Feature level l (1..4) lives at spatial scale 2^(1-l) with b * 2^(l-1)
// channels, b = base_channels.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pcreg/nn.hpp"

namespace pcreg {

struct AblationConfig {
  bool use_contrast = true;
  bool use_injection = true;
  bool refinement_stage = true;
  double aux_gamma = 0.3;

  /// Full model or one of: no-contrast, no-injection, single-stage, no-aux.
  static AblationConfig from_name(const std::string& name);
  std::string name() const;
  bool operator==(const AblationConfig&) const = default;
};

struct ModelConfig {
  std::int64_t base_channels = 32;
  std::uint64_t seed = 0;
  AblationConfig ablation;

  /// {b, 2b, 4b, 8b}.
  std::array<std::int64_t, 4> channels() const {
    const std::int64_t b = base_channels;
    return {b, 2 * b, 4 * b, 8 * b};
  }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Features at levels 1..4 (index 0..3).
using MultiScaleFeatures = std::array<Tensor, 4>;

struct ForwardOutput {
  Tensor coarse;
  Tensor refined;
  MultiScaleFeatures reg_features;
  MultiScaleFeatures ref_features;
  MultiScaleFeatures contrast_features;
};

/// Optional record of every intermediate shape, in evaluation order.
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

/// Throws ShapeError unless x is (N, 1, H, W) with H, W divisible by 8.
void require_registrable(const Shape& x, const char* what);

class RegistrationUNet {
 public:
  struct Output {
    Tensor image;
    MultiScaleFeatures features;
  };

  explicit RegistrationUNet(std::int64_t base_channels);
  Output forward(const Tensor& moving, ShapeTrace* trace = nullptr);
  void init(Rng& rng);
  void set_training(bool on);
  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  std::array<ConvBlock, 4> encoder_;
  std::array<ConvBlock, 3> decoder_;
  Conv2d head_;
};

class ReferenceEncoder {
 public:
  explicit ReferenceEncoder(std::int64_t base_channels);
  MultiScaleFeatures forward(const Tensor& fixed, ShapeTrace* trace = nullptr);
  void init(Rng& rng);
  void set_training(bool on);
  void collect(const std::string& prefix, ParameterList& out,
               std::size_t levels = 4) const;

 private:
  std::array<ConvBlock, 4> encoder_;
};

class ContrastModule {
 public:
  /// With `compare` off, each scale sees only the reference features
  /// through a C_l -> C_l projection.
  ContrastModule(std::int64_t base_channels, bool compare);
  MultiScaleFeatures forward(const MultiScaleFeatures& reference,
                             const MultiScaleFeatures& registration,
                             ShapeTrace* trace = nullptr);
  void init(Rng& rng);
  void set_training(bool on);
  void collect(const std::string& prefix, ParameterList& out,
               std::size_t levels = 4) const;

 private:
  bool compare_;
  std::array<Conv2d, 4> fuse_;
  std::array<BatchNorm2d, 4> norm_;
};

class RefinementUNet {
 public:
  explicit RefinementUNet(std::int64_t base_channels);
  Tensor forward(const Tensor& coarse, const MultiScaleFeatures& contrast, bool inject,
                 ShapeTrace* trace = nullptr);
  void init(Rng& rng);
  void set_training(bool on);
  /// Projections are collected separately so ablations can leave them out.
  void collect_body(const std::string& prefix, ParameterList& out) const;
  void collect_projections(const std::string& prefix, ParameterList& out) const;

  /// Projection for level l (1..4).
  Conv2d& projection(int level) { return projections_[static_cast<std::size_t>(level - 1)]; }

 private:
  std::array<ConvBlock, 4> encoder_;
  std::array<ConvBlock, 3> decoder_;
  std::array<Conv2d, 4> projections_;  // level 1..4: b->b, 2b->b, 4b->2b, 8b->4b
  Conv2d head_;
};

class PCRegNet {
 public:
  explicit PCRegNet(const ModelConfig& config);
  PCRegNet(const PCRegNet&) = delete;
  PCRegNet& operator=(const PCRegNet&) = delete;
  PCRegNet(PCRegNet&&) = default;
  PCRegNet& operator=(PCRegNet&&) = default;

  /// Runs the four modules on an (N,1,H,W) moving/fixed batch.
  ForwardOutput forward(const Tensor& moving, const Tensor& fixed, ShapeTrace* trace = nullptr);

  void set_training(bool on);
  bool training() const { return training_; }

  /// Parameters the configured ablation actually uses; these are what the
  /// optimizer updates and what count_parameters() reports.
  ParameterList active_parameters() const;
  /// Every tensor the model owns, including unused modules (checkpoints).
  ParameterList all_parameters() const;

  const ModelConfig& config() const { return config_; }

  RegistrationUNet& registration() { return registration_; }
  ReferenceEncoder& reference() { return reference_; }
  ContrastModule& contrast() { return contrast_; }
  RefinementUNet& refinement() { return refinement_; }

 private:
  ModelConfig config_;
  bool training_ = true;
  RegistrationUNet registration_;
  ReferenceEncoder reference_;
  ContrastModule contrast_;
  RefinementUNet refinement_;
};

/// Exact number of trainable floats used by the configured model.
std::int64_t count_parameters(const PCRegNet& model);

}  // namespace pcreg
