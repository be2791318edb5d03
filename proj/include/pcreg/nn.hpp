#pragma once

// Neural-network layers on top of the tensor core: differentiable
// functional ops (templated so they can be checked in double precision)
// and the float parameterized layers the model is assembled from.

#include <string>
#include <vector>

#include "pcreg/ops.hpp"
#include "pcreg/rng.hpp"
#include "pcreg/tensor.hpp"

namespace pcreg {

// ---------------------------------------------------------------------------
// Functional ops

/// Same-padded stride-1 cross-correlation. `weight` is (C_out, C_in, k, k)
/// with k in {1, 3}; `bias` is (1, C_out, 1, 1).
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

/// Per-channel mean and biased variance of the last training-mode batch.
struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;
};

/// Normalizes with batch statistics over (N, H, W); `scale`/`shift` are
/// (1, C, 1, 1). Rejects a single value per channel.
template <class T>
BasicTensor<T> batch_norm_train(const BasicTensor<T>& x, const BasicTensor<T>& scale,
                                const BasicTensor<T>& shift, double eps,
                                BatchStats* stats = nullptr);

/// Normalizes with fixed running statistics; an affine map per channel.
template <class T>
BasicTensor<T> batch_norm_eval(const BasicTensor<T>& x, const BasicTensor<T>& scale,
                               const BasicTensor<T>& shift,
                               const BasicTensor<T>& running_mean,
                               const BasicTensor<T>& running_var, double eps);

/// 2x2 max pool, stride 2. Ties route the gradient to the first maximum in
/// row-major window order.
template <class T>
BasicTensor<T> maxpool2(const BasicTensor<T>& x);

/// Bilinear resampling with half-pixel centers and edge clamping.
template <class T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& x, std::int64_t out_h,
                               std::int64_t out_w);

template <class T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Channels [begin, end) of x.
template <class T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::int64_t begin,
                              std::int64_t end);

// ---------------------------------------------------------------------------
// Layers

/// A tensor registered under a stable name, with the rank it is stored at
/// in checkpoints.
struct NamedTensor {
  std::string name;
  Tensor tensor;
  int rank = 4;

  std::vector<std::uint32_t> dims() const;
};

struct ParameterList {
  std::vector<NamedTensor> trainable;
  std::vector<NamedTensor> buffers;  // running statistics, not trained

  std::int64_t trainable_count() const;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::int64_t in_channels, std::int64_t out_channels, int ksize);

  Tensor forward(const Tensor& x) const { return conv2d(x, weight_, bias_); }

  /// Kernel ~ Normal(0, sqrt(2 / (C_in k k))), bias = 0.
  void init_kaiming(Rng& rng);
  void collect(const std::string& prefix, ParameterList& out) const;

  std::int64_t in_channels() const { return weight_.shape().c; }
  std::int64_t out_channels() const { return weight_.shape().n; }
  int ksize() const { return static_cast<int>(weight_.shape().h); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

class BatchNorm2d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::int64_t channels);

  /// Training mode normalizes with batch statistics and updates the running
  /// estimates; evaluation mode uses the running estimates.
  Tensor forward(const Tensor& x);

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }
  void collect(const std::string& prefix, ParameterList& out) const;

  Tensor& scale() { return scale_; }
  Tensor& shift() { return shift_; }
  const Tensor& running_mean() const { return running_mean_; }
  const Tensor& running_var() const { return running_var_; }

 private:
  Tensor scale_;
  Tensor shift_;
  Tensor running_mean_;
  Tensor running_var_;
  bool training_ = true;
};

/// Conv3x3 -> BN -> ReLU.
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(std::int64_t in_channels, std::int64_t out_channels)
      : conv_(in_channels, out_channels, 3), bn_(out_channels) {}

  Tensor forward(const Tensor& x) { return relu(bn_.forward(conv_.forward(x))); }

  void init(Rng& rng) { conv_.init_kaiming(rng); }
  void set_training(bool on) { bn_.set_training(on); }
  void collect(const std::string& prefix, ParameterList& out) const;

  Conv2d& conv() { return conv_; }
  BatchNorm2d& bn() { return bn_; }

 private:
  Conv2d conv_;
  BatchNorm2d bn_;
};

}  // namespace pcreg
