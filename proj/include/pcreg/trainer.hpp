#pragma once

// Optimization: Adam with weight decay folded into the gradient, per-epoch
// cosine annealing, global-norm gradient clipping, and the epoch loop with
// validation.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pcreg/metrics.hpp"
#include "pcreg/model.hpp"
#include "pcreg/objective.hpp"

namespace pcreg {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update of every tensor in `params`, in order.
/// The decay term weight_decay * param is added to the gradient first.
/// Throws if a parameter has no gradient.
void adam_step(std::vector<NamedTensor>& params, AdamState& state, double lr,
               double weight_decay);

/// 0.5 lr0 (1 + cos(pi t / T)); t is clamped to [0, T].
double cosine_lr(double t, double total, double lr0);

/// Scales all gradients by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the scale applied (1 when unchanged).
double clip_global_norm(std::vector<NamedTensor>& params, double max_norm);

struct Sample {
  std::string id;
  metrics::Image moving;
  metrics::Image fixed;
};
using Dataset = std::vector<Sample>;

struct TrainConfig {
  double lr0 = 1e-4;
  double weight_decay = 1e-5;
  int epochs = 100;
  int batch_size = 8;
  double clip_max_norm = 1.0;
  LossWeights loss;
  std::uint64_t seed = 0;
  int eval_every = 1;
  AdamConfig adam;

  void validate(std::size_t dataset_size) const;
};

struct Preset {
  std::string name;
  TrainConfig train;
  std::int64_t image_size = 64;
  std::size_t max_train = 0;  // 0: all
  std::size_t max_val = 0;

  /// "desk" (64x64, 64 train / 16 val, 30 epochs) or "full" (256x256, 100 epochs).
  static Preset from_name(const std::string& name);
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;        // mean training loss over batches
  double loss_final = 0.0;  // mean refined-stage loss
  double loss_aux = 0.0;    // mean gamma * coarse-stage loss
  bool validated = false;
  double ncc_coarse = 0.0;
  double ncc_refined = 0.0;
  double ssim_refined = 0.0;
  double psnr_refined = 0.0;
  double ncc_moving = 0.0;
  double ssim_moving = 0.0;
  double psnr_moving = 0.0;
};

/// Header plus one line per epoch.
std::string epoch_log_csv(const std::vector<EpochLog>& log);

struct Evaluation {
  std::vector<metrics::PairMetrics> coarse;
  std::vector<metrics::PairMetrics> refined;
  std::vector<metrics::PairMetrics> moving;  // unregistered baseline
};

/// Eval-mode forward over `data` in batches; metrics against each fixed image.
Evaluation evaluate(PCRegNet& model, const Dataset& data, int batch_size);

struct Registered {
  metrics::Image coarse;
  metrics::Image refined;
};

/// Eval-mode registration of one pair (outputs not clamped).
Registered register_pair(PCRegNet& model, const metrics::Image& moving,
                         const metrics::Image& fixed);

struct TrainResult {
  std::vector<EpochLog> log;
  AdamState optimizer;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains `model` in place. Throws NumericalError naming the epoch, batch
/// and loss components if the loss stops being finite.
TrainResult train(PCRegNet& model, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace pcreg
