#include "pcreg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace pcreg {
namespace {

Tensor batch_tensor(const Dataset& data, const std::vector<std::size_t>& order, std::size_t begin,
                    std::size_t end, bool moving) {
  std::vector<const metrics::Image*> images;
  for (std::size_t i = begin; i < end; ++i) {
    const Sample& s = data[order[i]];
    images.push_back(moving ? &s.moving : &s.fixed);
  }
  return metrics::stack(images);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double mean_of(const std::vector<metrics::PairMetrics>& v, double metrics::PairMetrics::*field) {
  double s = 0.0;
  for (const auto& p : v) s += p.*field;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

void adam_step(std::vector<NamedTensor>& params, AdamState& state, double lr,
               double weight_decay) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
      state.v.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state tracks " +
                                std::to_string(state.m.size()) + " tensors, got " +
                                std::to_string(params.size()));
  }
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw std::logic_error("adam_step: no gradient for parameter " + p.name);
    }
  }
  ++state.step;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& param = params[k].tensor;
    auto x = param.mutable_data();
    auto g = param.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double grad = static_cast<double>(g[i]) + weight_decay * static_cast<double>(x[i]);
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad * grad;
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      x[i] = static_cast<float>(static_cast<double>(x[i]) - lr * m_hat / (std::sqrt(v_hat) + c.eps));
    }
  }
}

double cosine_lr(double t, double total, double lr0) {
  if (total <= 0.0) return lr0;
  t = std::clamp(t, 0.0, total);
  return std::max(0.0, 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * t / total)));
}

double clip_global_norm(std::vector<NamedTensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (float g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return 1.0;
  const double scale = max_norm / norm;
  for (auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (float& g : p.tensor.mutable_grad()) g = static_cast<float>(g * scale);
  }
  return scale;
}

void TrainConfig::validate(std::size_t dataset_size) const {
  if (!(lr0 > 0.0) || !(weight_decay >= 0.0) || epochs < 1 || batch_size < 1 ||
      !(clip_max_norm > 0.0) || eval_every < 1) {
    throw std::invalid_argument(
        "train config: lr0, epochs, batch_size, clip_max_norm and eval_every must be positive");
  }
  if (dataset_size == 0) throw std::invalid_argument("train config: empty training set");
  if (static_cast<std::size_t>(batch_size) > dataset_size) {
    throw std::invalid_argument("train config: batch size " + std::to_string(batch_size) +
                                " exceeds dataset size " + std::to_string(dataset_size));
  }
  loss.validate();
}

Preset Preset::from_name(const std::string& name) {
  Preset p;
  p.name = name;
  if (name == "desk") {
    p.train.epochs = 30;
    p.image_size = 64;
    p.max_train = 64;
    p.max_val = 16;
  } else if (name == "full") {
    p.train.epochs = 100;
    p.image_size = 256;
  } else {
    throw std::invalid_argument("unknown preset '" + name + "' (expected desk or full)");
  }
  return p;
}

std::string epoch_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,lr,loss,ncc_coarse,ncc_refined,ssim_refined,psnr_refined,loss_final,loss_aux\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << fmt(e.lr) << ',' << fmt(e.loss) << ',';
    if (e.validated) {
      os << fmt(e.ncc_coarse) << ',' << fmt(e.ncc_refined) << ',' << fmt(e.ssim_refined) << ','
         << fmt(e.psnr_refined);
    } else {
      os << ",,,";
    }
    os << ',' << fmt(e.loss_final) << ',' << fmt(e.loss_aux) << '\n';
  }
  return os.str();
}

Evaluation evaluate(PCRegNet& model, const Dataset& data, int batch_size) {
  const bool was_training = model.training();
  model.set_training(false);
  NoGradScope no_grad;
  Evaluation ev;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto step = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t b = 0; b < data.size(); b += step) {
    const std::size_t e = std::min(data.size(), b + step);
    const Tensor moving = batch_tensor(data, order, b, e, true);
    const Tensor fixed = batch_tensor(data, order, b, e, false);
    const ForwardOutput out = model.forward(moving, fixed);
    for (std::size_t i = b; i < e; ++i) {
      const auto n = static_cast<std::int64_t>(i - b);
      const Sample& s = data[i];
      ev.coarse.push_back(
          metrics::evaluate_pair(s.id, metrics::Image::from_tensor(out.coarse, n), s.fixed));
      ev.refined.push_back(
          metrics::evaluate_pair(s.id, metrics::Image::from_tensor(out.refined, n), s.fixed));
      ev.moving.push_back(metrics::evaluate_pair(s.id, s.moving, s.fixed));
    }
  }
  model.set_training(was_training);
  return ev;
}

Registered register_pair(PCRegNet& model, const metrics::Image& moving,
                         const metrics::Image& fixed) {
  const bool was_training = model.training();
  model.set_training(false);
  NoGradScope no_grad;
  const ForwardOutput out = model.forward(moving.to_tensor(), fixed.to_tensor());
  model.set_training(was_training);
  return {metrics::Image::from_tensor(out.coarse), metrics::Image::from_tensor(out.refined)};
}

TrainResult train(PCRegNet& model, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate(train_set.size());
  TrainResult result;
  result.optimizer.config = config.adam;
  ParameterList params = model.active_parameters();
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = cosine_lr(epoch, config.epochs, config.lr0);
    model.set_training(true);

    Rng shuffle = Rng::for_stream(config.seed, 0x5EED0000ULL + static_cast<std::uint64_t>(epoch));
    const std::vector<std::size_t> order = shuffle.permutation(train_set.size());
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t e = std::min(order.size(), b + batch);
      const Tensor moving = batch_tensor(train_set, order, b, e, true);
      const Tensor fixed = batch_tensor(train_set, order, b, e, false);
      for (auto& p : params.trainable) p.tensor.zero_grad();

      Tape tape;
      LossBreakdown parts;
      try {
        TapeScope scope(tape);
        const ForwardOutput out = model.forward(moving, fixed);
        const Tensor loss = total_loss(out, fixed, config.loss, &parts);
        if (!std::isfinite(loss.item())) throw NumericalError("loss is not finite");
        tape.backward(loss);
      } catch (const NumericalError& err) {
        std::ostringstream os;
        os << "training diverged at epoch " << epoch + 1 << ", batch " << batches + 1 << ": "
           << err.what() << " (final l1 " << parts.final_stage.l1 << ", l2 "
           << parts.final_stage.l2 << ", ssim " << parts.final_stage.ssim << "; aux l1 "
           << parts.aux_stage.l1 << ", l2 " << parts.aux_stage.l2 << ", ssim "
           << parts.aux_stage.ssim << ")";
        throw NumericalError(os.str());
      }
      clip_global_norm(params.trainable, config.clip_max_norm);
      adam_step(params.trainable, result.optimizer, log.lr, config.weight_decay);

      log.loss += parts.total;
      log.loss_final += parts.final_stage.total;
      log.loss_aux += parts.aux_contribution;
      ++batches;
    }
    log.loss /= batches;
    log.loss_final /= batches;
    log.loss_aux /= batches;
    for (auto& p : params.trainable) p.tensor.zero_grad();

    const bool last = epoch + 1 == config.epochs;
    if (!val_set.empty() && ((epoch + 1) % config.eval_every == 0 || last)) {
      const Evaluation ev = evaluate(model, val_set, config.batch_size);
      log.validated = true;
      log.ncc_coarse = mean_of(ev.coarse, &metrics::PairMetrics::ncc);
      log.ncc_refined = mean_of(ev.refined, &metrics::PairMetrics::ncc);
      log.ssim_refined = mean_of(ev.refined, &metrics::PairMetrics::ssim);
      log.psnr_refined = mean_of(ev.refined, &metrics::PairMetrics::psnr);
      log.ncc_moving = mean_of(ev.moving, &metrics::PairMetrics::ncc);
      log.ssim_moving = mean_of(ev.moving, &metrics::PairMetrics::ssim);
      log.psnr_moving = mean_of(ev.moving, &metrics::PairMetrics::psnr);
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  model.set_training(false);
  return result;
}

}  // namespace pcreg
