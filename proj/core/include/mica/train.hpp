#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mica/toynet.hpp"

namespace mica {

struct TrainConfig {
  double base_lr = 1e-3;
  std::size_t epochs = 1;
  std::size_t batch_size = 4;
  double weight_decay = 0.01;
  double warmup_ratio = 0.1;
  double max_grad_norm = 1.0;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  // Per-device batch 4, max grad norm 0.3.
  static TrainConfig blogs();
  // Max grad norm 1.0.
  static TrainConfig history();
  static TrainConfig profile(const std::string& name);

  void validate() const;
};

// Cosine decay to zero after linear warmup over round(warmup_ratio · total)
// steps (capped at total − 1).
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);
std::size_t warmup_steps(std::size_t total_steps, const TrainConfig& cfg);

double global_norm(const GradSet& grads);

struct ClipResult {
  GradSet grads;
  double preclip_norm = 0.0;
};

ClipResult clip_global_norm(GradSet grads, double max_norm);

// First and second moment estimates for every tensor seen so far.
struct OptState {
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
  std::size_t step = 0;
};

// One adaptive-moment step with bias correction and decoupled weight decay
// (p ← p − lr·wd·p, then p ← p − lr·m̂/(√v̂ + ε)). Only tensors named in
// `grads` move.
void opt_step(std::span<const ParamRef> params, const GradSet& grads, OptState& state, double lr,
              const TrainConfig& cfg);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm_preclip = 0.0;
  double grad_norm_postclip = 0.0;
};

struct TrainReport {
  std::vector<StepRecord> steps;
  std::size_t total_steps = 0;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
  std::map<std::string, Matrix> final_trainable;
  std::vector<std::string> gradient_names;  // union of GradSet keys seen during the run
};

using EpochCallback = std::function<void(std::size_t epoch, const ToyModel& model)>;

// Runs epochs over `data` in a seeded shuffled order. Deterministic given the
// model, data and config. Throws NumericalError with the step index when the
// loss stops being finite.
TrainReport train_loop(ToyModel& model, std::span<const Batch> data, const TrainConfig& cfg,
                       const EpochCallback& on_epoch_end = {});

// Splits the columns of inputs/targets into consecutive batches of
// `batch_size` (last batch may be short).
std::vector<Batch> make_batches(const Matrix& inputs, const Matrix& targets, std::size_t batch_size);

}  // namespace mica
