#include "mica/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <utility>

#include "mica/error.hpp"
#include "mica/rng.hpp"

namespace mica {

TrainConfig TrainConfig::blogs() {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.weight_decay = 0.01;
  cfg.warmup_ratio = 0.1;
  cfg.max_grad_norm = 0.3;
  return cfg;
}

TrainConfig TrainConfig::history() {
  TrainConfig cfg;
  cfg.weight_decay = 0.01;
  cfg.warmup_ratio = 0.1;
  cfg.max_grad_norm = 1.0;
  return cfg;
}

TrainConfig TrainConfig::profile(const std::string& name) {
  if (name == "blogs") return blogs();
  if (name == "history") return history();
  throw ContractViolation("unknown training profile '" + name + "' (expected blogs or history)");
}

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ContractViolation("train: base_lr must be positive");
  if (!(max_grad_norm > 0.0)) throw ContractViolation("train: max_grad_norm must be positive");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw ContractViolation("train: warmup_ratio must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ContractViolation("train: weight_decay must be nonnegative");
  if (batch_size == 0) throw ContractViolation("train: batch_size must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ContractViolation("train: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ContractViolation("train: eps must be positive");
}

std::size_t warmup_steps(std::size_t total_steps, const TrainConfig& cfg) {
  if (total_steps == 0) return 0;
  const auto rounded = static_cast<std::size_t>(std::llround(cfg.warmup_ratio * static_cast<double>(total_steps)));
  return std::min(rounded, total_steps - 1);
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (total_steps == 0 || step > total_steps) {
    throw ContractViolation("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) +
                            "]");
  }
  const std::size_t warmup = warmup_steps(total_steps, cfg);
  if (step < warmup) return cfg.base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double global_norm(const GradSet& grads) {
  double acc = 0.0;
  for (const auto& [name, g] : grads) acc += g.squared_norm();
  return std::sqrt(acc);
}

ClipResult clip_global_norm(GradSet grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractViolation("clip_global_norm: max_norm must be positive");
  ClipResult out;
  out.preclip_norm = global_norm(grads);
  if (out.preclip_norm > max_norm) {
    const double scale = max_norm / out.preclip_norm;
    for (auto& [name, g] : grads) g *= scale;
  }
  out.grads = std::move(grads);
  return out;
}

void opt_step(std::span<const ParamRef> params, const GradSet& grads, OptState& state, double lr,
              const TrainConfig& cfg) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  for (const ParamRef& param : params) {
    const auto it = grads.find(param.name);
    if (it == grads.end()) continue;
    Matrix& p = *param.tensor;
    const Matrix& g = it->second;
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw ContractViolation("opt_step: gradient for '" + param.name + "' has the wrong shape");
    }
    auto [m_it, m_new] = state.m.try_emplace(param.name, p.rows(), p.cols());
    auto [v_it, v_new] = state.v.try_emplace(param.name, p.rows(), p.cols());
    auto pd = p.data();
    auto gd = g.data();
    auto md = m_it->second.data();
    auto vd = v_it->second.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      pd[i] -= lr * cfg.weight_decay * pd[i];
      md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gd[i];
      vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
      const double m_hat = md[i] / bias1;
      const double v_hat = vd[i] / bias2;
      pd[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
    require_finite(p, "opt_step");
  }
}

TrainReport train_loop(ToyModel& model, std::span<const Batch> data, const TrainConfig& cfg,
                       const EpochCallback& on_epoch_end) {
  if (data.empty()) throw ContractViolation("train_loop: no training batches");
  cfg.validate();

  TrainReport report;
  report.frozen_hash_before = frozen_hash(model);
  report.total_steps = cfg.epochs * data.size();
  std::set<std::string> seen;

  OptState state;
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 shuffle(derive_seed(cfg.seed, "epoch-" + std::to_string(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.below(i))]);
    }
    for (std::size_t idx : order) {
      const double lr = lr_at(step, report.total_steps, cfg);
      ForwardResult fr;
      try {
        fr = forward(model, data[idx], true, derive_seed(cfg.seed, step));
      } catch (const NumericalError& e) {
        throw NumericalError("train_loop: step " + std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(fr.loss)) throw NumericalError("train_loop: non-finite loss at step " + std::to_string(step));
      ClipResult clipped = clip_global_norm(backward(model, fr.cache), cfg.max_grad_norm);
      for (const auto& [name, g] : clipped.grads) seen.insert(name);
      const auto params = trainable_params(model);
      opt_step(params, clipped.grads, state, lr, cfg);
      report.steps.push_back({step, epoch, lr, fr.loss, clipped.preclip_norm, global_norm(clipped.grads)});
      ++step;
    }
    if (on_epoch_end) on_epoch_end(epoch, model);
  }

  report.frozen_hash_after = frozen_hash(model);
  for (const ConstParamRef& ref : trainable_params(std::as_const(model))) {
    report.final_trainable.emplace(ref.name, *ref.tensor);
  }
  report.gradient_names.assign(seen.begin(), seen.end());
  return report;
}

std::vector<Batch> make_batches(const Matrix& inputs, const Matrix& targets, std::size_t batch_size) {
  if (inputs.cols() != targets.cols()) throw ContractViolation("make_batches: inputs and targets differ in count");
  if (batch_size == 0) throw ContractViolation("make_batches: batch_size must be positive");
  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < inputs.cols(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, inputs.cols());
    batches.push_back(Batch{inputs.col_range(begin, end), targets.col_range(begin, end), 0});
  }
  return batches;
}

}  // namespace mica
