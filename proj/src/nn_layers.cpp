#include <cmath>

#include "pcreg/nn.hpp"

namespace pcreg {

std::vector<std::uint32_t> NamedTensor::dims() const {
  const Shape& s = tensor.shape();
  if (rank == 1) return {static_cast<std::uint32_t>(s.numel())};
  return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
          static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
}

std::int64_t ParameterList::trainable_count() const {
  std::int64_t total = 0;
  for (const auto& p : trainable) total += p.tensor.numel();
  return total;
}

Conv2d::Conv2d(std::int64_t in_channels, std::int64_t out_channels, int ksize)
    : weight_({out_channels, in_channels, ksize, ksize}), bias_({1, out_channels, 1, 1}) {
  if (ksize != 1 && ksize != 3) {
    throw ShapeError("Conv2d: kernel size must be 1 or 3, got " + std::to_string(ksize));
  }
  if (in_channels < 1 || out_channels < 1) {
    throw ShapeError("Conv2d: channel counts must be positive");
  }
  weight_.set_requires_grad(true);
  bias_.set_requires_grad(true);
}

void Conv2d::init_kaiming(Rng& rng) {
  const Shape& s = weight_.shape();
  const double stddev = std::sqrt(2.0 / static_cast<double>(s.c * s.h * s.w));
  for (float& v : weight_.mutable_data()) v = static_cast<float>(stddev * rng.normal());
  for (float& v : bias_.mutable_data()) v = 0.0f;
}

void Conv2d::collect(const std::string& prefix, ParameterList& out) const {
  out.trainable.push_back({prefix + ".weight", weight_, 4});
  out.trainable.push_back({prefix + ".bias", bias_, 1});
}

BatchNorm2d::BatchNorm2d(std::int64_t channels)
    : scale_({1, channels, 1, 1}, 1.0f),
      shift_({1, channels, 1, 1}, 0.0f),
      running_mean_({1, channels, 1, 1}, 0.0f),
      running_var_({1, channels, 1, 1}, 1.0f) {
  scale_.set_requires_grad(true);
  shift_.set_requires_grad(true);
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  if (!training_) {
    return batch_norm_eval(x, scale_, shift_, running_mean_, running_var_, kEps);
  }
  BatchStats stats;
  Tensor out = batch_norm_train(x, scale_, shift_, kEps, &stats);
  const Shape& s = x.shape();
  const double count = static_cast<double>(s.n * s.h * s.w);
  auto rm = running_mean_.mutable_data();
  auto rv = running_var_.mutable_data();
  for (std::size_t c = 0; c < rm.size(); ++c) {
    // Running variance tracks the unbiased estimate.
    const double unbiased = stats.var[c] * count / (count - 1.0);
    rm[c] = static_cast<float>((1.0 - kMomentum) * rm[c] + kMomentum * stats.mean[c]);
    rv[c] = static_cast<float>((1.0 - kMomentum) * rv[c] + kMomentum * unbiased);
  }
  return out;
}

void BatchNorm2d::collect(const std::string& prefix, ParameterList& out) const {
  out.trainable.push_back({prefix + ".scale", scale_, 1});
  out.trainable.push_back({prefix + ".shift", shift_, 1});
  out.buffers.push_back({prefix + ".running_mean", running_mean_, 1});
  out.buffers.push_back({prefix + ".running_var", running_var_, 1});
}

void ConvBlock::collect(const std::string& prefix, ParameterList& out) const {
  conv_.collect(prefix + ".conv", out);
  bn_.collect(prefix + ".bn", out);
}

}  // namespace pcreg
