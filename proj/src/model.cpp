#include "pcreg/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace pcreg {
namespace {

void note(ShapeTrace* trace, const std::string& name, const Tensor& t) {
  if (trace) trace->emplace_back(name, t.shape());
}

MultiScaleFeatures encode(std::array<ConvBlock, 4>& blocks, const Tensor& x,
                          ShapeTrace* trace, const std::string& prefix) {
  MultiScaleFeatures f;
  f[0] = blocks[0].forward(x);
  note(trace, prefix + ".enc1", f[0]);
  for (std::size_t l = 1; l < 4; ++l) {
    f[l] = blocks[l].forward(maxpool2(f[l - 1]));
    note(trace, prefix + ".enc" + std::to_string(l + 1), f[l]);
  }
  return f;
}

// Upsamples `deep` to the skip's resolution and stacks [up; skip].
Tensor up_concat(const Tensor& deep, const Tensor& skip) {
  return concat_channels(bilinear_resize(deep, skip.shape().h, skip.shape().w), skip);
}

// Seeds independent per-module initialization streams.
enum StreamId : std::uint64_t { kStreamR = 1, kStreamE = 2, kStreamC = 3, kStreamU = 4 };

}  // namespace

AblationConfig AblationConfig::from_name(const std::string& name) {
  AblationConfig a;
  if (name.empty() || name == "full") return a;
  if (name == "no-contrast") {
    a.use_contrast = false;
  } else if (name == "no-injection") {
    a.use_injection = false;
  } else if (name == "single-stage") {
    a.refinement_stage = false;
  } else if (name == "no-aux") {
    a.aux_gamma = 0.0;
  } else {
    throw std::invalid_argument("unknown ablation '" + name +
                                "' (expected no-contrast, no-injection, single-stage, no-aux)");
  }
  return a;
}

std::string AblationConfig::name() const {
  if (!refinement_stage) return "single-stage";
  if (!use_contrast) return "no-contrast";
  if (!use_injection) return "no-injection";
  if (aux_gamma == 0.0) return "no-aux";
  return "full";
}

void ModelConfig::validate() const {
  if (base_channels < 1) {
    throw std::invalid_argument("base_channels must be >= 1, got " + std::to_string(base_channels));
  }
  if (!(ablation.aux_gamma >= 0.0)) {
    throw std::invalid_argument("aux_gamma must be >= 0");
  }
}

void require_registrable(const Shape& x, const char* what) {
  if (x.c != 1 || x.n < 1) {
    throw ShapeError(std::string(what) + " must be (N, 1, H, W), got " + x.str());
  }
  if (x.h < 8 || x.w < 8 || x.h % 8 != 0 || x.w % 8 != 0) {
    throw ShapeError(std::string(what) + " height and width must be positive multiples of 8, got " +
                     x.str());
  }
}

// ---------------------------------------------------------------------------

RegistrationUNet::RegistrationUNet(std::int64_t b)
    : encoder_{ConvBlock(1, b), ConvBlock(b, 2 * b), ConvBlock(2 * b, 4 * b),
               ConvBlock(4 * b, 8 * b)},
      decoder_{ConvBlock(12 * b, 4 * b), ConvBlock(6 * b, 2 * b), ConvBlock(3 * b, b)},
      head_(b, 1, 1) {}

RegistrationUNet::Output RegistrationUNet::forward(const Tensor& moving, ShapeTrace* trace) {
  Output out;
  out.features = encode(encoder_, moving, trace, "reg");
  const auto& f = out.features;
  Tensor x = decoder_[0].forward(up_concat(f[3], f[2]));
  note(trace, "reg.dec3", x);
  x = decoder_[1].forward(up_concat(x, f[1]));
  note(trace, "reg.dec2", x);
  x = decoder_[2].forward(up_concat(x, f[0]));
  note(trace, "reg.dec1", x);
  out.image = head_.forward(x);
  note(trace, "reg.coarse", out.image);
  return out;
}

void RegistrationUNet::init(Rng& rng) {
  for (auto& blk : encoder_) blk.init(rng);
  for (auto& blk : decoder_) blk.init(rng);
  head_.init_kaiming(rng);
}

void RegistrationUNet::set_training(bool on) {
  for (auto& blk : encoder_) blk.set_training(on);
  for (auto& blk : decoder_) blk.set_training(on);
}

void RegistrationUNet::collect(const std::string& prefix, ParameterList& out) const {
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    encoder_[i].collect(prefix + ".enc" + std::to_string(i + 1), out);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    decoder_[i].collect(prefix + ".dec" + std::to_string(3 - i), out);
  }
  head_.collect(prefix + ".head", out);
}

// ---------------------------------------------------------------------------

ReferenceEncoder::ReferenceEncoder(std::int64_t b)
    : encoder_{ConvBlock(1, b), ConvBlock(b, 2 * b), ConvBlock(2 * b, 4 * b),
               ConvBlock(4 * b, 8 * b)} {}

MultiScaleFeatures ReferenceEncoder::forward(const Tensor& fixed, ShapeTrace* trace) {
  return encode(encoder_, fixed, trace, "ref");
}

void ReferenceEncoder::init(Rng& rng) {
  for (auto& blk : encoder_) blk.init(rng);
}

void ReferenceEncoder::set_training(bool on) {
  for (auto& blk : encoder_) blk.set_training(on);
}

void ReferenceEncoder::collect(const std::string& prefix, ParameterList& out,
                               std::size_t levels) const {
  for (std::size_t i = 0; i < std::min(levels, encoder_.size()); ++i) {
    encoder_[i].collect(prefix + ".enc" + std::to_string(i + 1), out);
  }
}

// ---------------------------------------------------------------------------

ContrastModule::ContrastModule(std::int64_t b, bool compare) : compare_(compare) {
  for (std::size_t l = 0; l < 4; ++l) {
    const std::int64_t c = b << l;
    fuse_[l] = Conv2d(compare ? 2 * c : c, c, 1);
    norm_[l] = BatchNorm2d(c);
  }
}

MultiScaleFeatures ContrastModule::forward(const MultiScaleFeatures& reference,
                                           const MultiScaleFeatures& registration,
                                           ShapeTrace* trace) {
  MultiScaleFeatures out;
  for (std::size_t l = 0; l < 4; ++l) {
    const std::string level = std::to_string(l + 1);
    Tensor input = reference[l];
    if (compare_) {
      if (!(reference[l].shape() == registration[l].shape())) {
        throw ShapeError("contrast module: scale " + level + " shape mismatch " +
                         reference[l].shape().str() + " (reference) vs " +
                         registration[l].shape().str() + " (registration)");
      }
      // Fixed-image features first.
      input = concat_channels(reference[l], registration[l]);
    }
    note(trace, "contrast.in" + level, input);
    out[l] = relu(norm_[l].forward(fuse_[l].forward(input)));
    note(trace, "contrast.out" + level, out[l]);
  }
  return out;
}

void ContrastModule::init(Rng& rng) {
  for (auto& conv : fuse_) conv.init_kaiming(rng);
}

void ContrastModule::set_training(bool on) {
  for (auto& bn : norm_) bn.set_training(on);
}

void ContrastModule::collect(const std::string& prefix, ParameterList& out,
                             std::size_t levels) const {
  for (std::size_t l = 0; l < std::min<std::size_t>(levels, 4); ++l) {
    const std::string level = std::to_string(l + 1);
    fuse_[l].collect(prefix + ".fuse" + level, out);
    norm_[l].collect(prefix + ".bn" + level, out);
  }
}

// ---------------------------------------------------------------------------

RefinementUNet::RefinementUNet(std::int64_t b)
    : encoder_{ConvBlock(1 + b, b), ConvBlock(b, 2 * b), ConvBlock(2 * b, 4 * b),
               ConvBlock(4 * b, 8 * b)},
      decoder_{ConvBlock(12 * b, 4 * b), ConvBlock(6 * b, 2 * b), ConvBlock(3 * b, b)},
      projections_{Conv2d(b, b, 1), Conv2d(2 * b, b, 1), Conv2d(4 * b, 2 * b, 1),
                   Conv2d(8 * b, 4 * b, 1)},
      head_(b, 1, 1) {}

Tensor RefinementUNet::forward(const Tensor& coarse, const MultiScaleFeatures& contrast,
                               bool inject, ShapeTrace* trace) {
  if (coarse.shape().h != contrast[0].shape().h || coarse.shape().w != contrast[0].shape().w ||
      coarse.shape().n != contrast[0].shape().n) {
    throw ShapeError("refinement: coarse image " + coarse.shape().str() +
                     " does not match finest contrast feature " + contrast[0].shape().str());
  }
  const Tensor input = concat_channels(coarse, contrast[0]);
  note(trace, "refine.input", input);
  const MultiScaleFeatures skip = encode(encoder_, input, trace, "refine");

  // X <- X + W^(l) resize(F_c^(l)) at decoder outputs for levels 4, 3, 2,
  // then level 1 at full resolution.
  auto injected = [&](Tensor x, int level) {
    if (!inject) return x;
    const Tensor& f = contrast[static_cast<std::size_t>(level - 1)];
    const Tensor resized = bilinear_resize(f, x.shape().h, x.shape().w);
    Tensor projected = projection(level).forward(resized);
    note(trace, "refine.inject" + std::to_string(level), projected);
    return add(x, projected);
  };

  Tensor x = decoder_[0].forward(up_concat(skip[3], skip[2]));
  note(trace, "refine.dec3", x);
  x = injected(x, 4);
  x = decoder_[1].forward(up_concat(x, skip[1]));
  note(trace, "refine.dec2", x);
  x = injected(x, 3);
  x = decoder_[2].forward(up_concat(x, skip[0]));
  note(trace, "refine.dec1", x);
  x = injected(x, 2);
  x = injected(x, 1);
  Tensor out = head_.forward(x);
  note(trace, "refine.refined", out);
  return out;
}

void RefinementUNet::init(Rng& rng) {
  for (auto& blk : encoder_) blk.init(rng);
  for (auto& blk : decoder_) blk.init(rng);
  for (auto& p : projections_) p.init_kaiming(rng);
  head_.init_kaiming(rng);
}

void RefinementUNet::set_training(bool on) {
  for (auto& blk : encoder_) blk.set_training(on);
  for (auto& blk : decoder_) blk.set_training(on);
}

void RefinementUNet::collect_body(const std::string& prefix, ParameterList& out) const {
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    encoder_[i].collect(prefix + ".enc" + std::to_string(i + 1), out);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    decoder_[i].collect(prefix + ".dec" + std::to_string(3 - i), out);
  }
  head_.collect(prefix + ".head", out);
}

void RefinementUNet::collect_projections(const std::string& prefix, ParameterList& out) const {
  for (std::size_t l = 0; l < projections_.size(); ++l) {
    projections_[l].collect(prefix + ".proj" + std::to_string(l + 1), out);
  }
}

// ---------------------------------------------------------------------------

PCRegNet::PCRegNet(const ModelConfig& config)
    : config_(config),
      registration_((config.validate(), config.base_channels)),
      reference_(config.base_channels),
      contrast_(config.base_channels, config.ablation.use_contrast),
      refinement_(config.base_channels) {
  Rng r = Rng::for_stream(config.seed, kStreamR);
  Rng e = Rng::for_stream(config.seed, kStreamE);
  Rng c = Rng::for_stream(config.seed, kStreamC);
  Rng u = Rng::for_stream(config.seed, kStreamU);
  registration_.init(r);
  reference_.init(e);
  contrast_.init(c);
  refinement_.init(u);
}

ForwardOutput PCRegNet::forward(const Tensor& moving, const Tensor& fixed, ShapeTrace* trace) {
  require_registrable(moving.shape(), "moving image");
  require_registrable(fixed.shape(), "fixed image");
  detail::require_same_shape(moving.shape(), fixed.shape(), "moving/fixed pair");

  ForwardOutput out;
  auto coarse = registration_.forward(moving, trace);
  out.coarse = coarse.image;
  out.reg_features = coarse.features;
  if (!config_.ablation.refinement_stage) {
    out.refined = out.coarse;
    return out;
  }
  out.ref_features = reference_.forward(fixed, trace);
  out.contrast_features = contrast_.forward(out.ref_features, out.reg_features, trace);
  out.refined = refinement_.forward(out.coarse, out.contrast_features,
                                    config_.ablation.use_injection, trace);
  return out;
}

void PCRegNet::set_training(bool on) {
  training_ = on;
  registration_.set_training(on);
  reference_.set_training(on);
  contrast_.set_training(on);
  refinement_.set_training(on);
}

ParameterList PCRegNet::active_parameters() const {
  ParameterList out;
  registration_.collect("reg", out);
  if (!config_.ablation.refinement_stage) return out;
  // Without injection only the first-scale contrast feature reaches the output.
  const std::size_t levels = config_.ablation.use_injection ? 4 : 1;
  reference_.collect("ref", out, levels);
  contrast_.collect("contrast", out, levels);
  refinement_.collect_body("refine", out);
  if (config_.ablation.use_injection) refinement_.collect_projections("refine", out);
  return out;
}

ParameterList PCRegNet::all_parameters() const {
  ParameterList out;
  registration_.collect("reg", out);
  reference_.collect("ref", out);
  contrast_.collect("contrast", out);
  refinement_.collect_body("refine", out);
  refinement_.collect_projections("refine", out);
  return out;
}

std::int64_t count_parameters(const PCRegNet& model) {
  return model.active_parameters().trainable_count();
}

}  // namespace pcreg
