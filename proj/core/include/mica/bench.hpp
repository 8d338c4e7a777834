#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mica/densela.hpp"
#include "mica/toynet.hpp"
#include "mica/train.hpp"

namespace mica {

// Knowledge-injection scenario: a base teacher W★ with a prescribed spectrum
// and a new teacher T = W★ + c·u·vᵀ where u is one left singular direction of
// W★ and v a random unit vector.
struct ScenarioSpec {
  std::size_t d_out = 64;
  std::size_t d_in = 64;
  std::vector<double> spectrum;  // descending, length min(d_out, d_in)
  std::size_t perturb_index = 63;
  double c = 5.0;
  std::size_t n_train = 512;
  std::size_t n_eval = 512;
  std::uint64_t seed = 0;

  // d = 64, spectrum linear 10 → 0.1, perturbation on the last direction.
  static ScenarioSpec defaults();
};

std::vector<double> linear_spectrum(std::size_t n, double first, double last);

struct Dataset {
  Matrix inputs;   // d_in x n, standard normal
  Matrix targets;  // d_out x n
};

struct Scenario {
  ScenarioSpec spec;
  Matrix left_basis;   // U₀, d_out x d_out
  Matrix right_basis;  // V₀, d_in x d_in
  Matrix base_teacher; // W★
  Matrix new_teacher;  // T
  Matrix u;            // d_out x 1
  Matrix v;            // d_in x 1
  Dataset base_train, base_eval;  // D0
  Dataset new_train, new_eval;    // D1
};

Scenario make_scenario(const ScenarioSpec& spec);

double mean_squared_error(const Matrix& prediction, const Matrix& target);

// One dense block "0.fc" holding w with a zero bias and no activation.
ToyModel single_layer(const Matrix& w);
AdaptedLinear& layer_of(ToyModel& model);

struct Variant {
  enum class Kind { NoFt, MicaMinor, Major, Random, Lora };

  Kind kind = Kind::MicaMinor;
  std::uint64_t seed = 0;  // Random only

  std::string label() const;
  static Variant parse(const std::string& text);  // "no-ft", "mica-minor", "major", "random(7)", "lora"
  bool fixed_projection() const noexcept { return kind == Kind::MicaMinor || kind == Kind::Major || kind == Kind::Random; }
};

struct AblationOptions {
  double alpha = 16.0;
  double dropout = 0.0;
  std::optional<double> lora_sigma;
  std::uint64_t lora_seed = 0;
  std::size_t probe_rank = 8;  // top-k left singular directions of W★ for drift probes
};

struct EpochPoint {
  std::size_t epoch = 0;
  double new_task_loss = 0.0;
  double base_task_loss = 0.0;
};

struct VariantRecord {
  Variant variant;
  bool ok = true;
  std::string error;
  double final_new_task_loss = 0.0;
  double final_base_task_loss = 0.0;
  double retention_delta = 0.0;
  double projected_base_drift = 0.0;
  std::optional<double> oracle_new_task_loss;
  std::uint64_t trainable_param_count = 0;
  std::size_t steps = 0;
  std::vector<double> lr_trace;
  std::vector<EpochPoint> curves;
};

struct RandomSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double standard_error = 0.0;
};

struct FairnessCheck {
  bool equal_steps = true;
  bool equal_lr_traces = true;
  bool equal_fixed_projection_param_counts = true;
};

struct AblationReport {
  std::size_t rank = 0;
  double no_ft_new_task_loss = 0.0;
  double no_ft_base_task_loss = 0.0;
  std::vector<VariantRecord> variants;
  std::optional<RandomSummary> random;
  FairnessCheck fairness;

  const VariantRecord* find(Variant::Kind kind) const;
  bool all_ok() const;
};

// Trains one adapted copy of W★ per variant on D1 with identical settings and
// evaluates on the held-out splits. A failing variant is recorded, not
// propagated.
AblationReport run_ablation(const Scenario& scenario, std::span<const Variant> variants, std::size_t r,
                            const TrainConfig& train_cfg, const AblationOptions& options = {});

// Mean squared output drift; with a probe basis (orthonormal columns) the
// drift is first projected onto its span.
double retention_metric(const Matrix& before, const Matrix& after, const Matrix* probe_basis = nullptr);

// Least-squares optimal new-task loss on D1 eval for a fixed projection B,
// from the normal equations of min_A ‖R − s·B·A·X‖ on D1 train.
double oracle_new_task_loss(const Scenario& scenario, const Matrix& b, double scaling);

nlohmann::json to_json(const ScenarioSpec& spec);
nlohmann::json to_json(const AblationReport& report);
nlohmann::json ablation_document(const ScenarioSpec& spec, std::span<const AblationReport> reports);

// Problems found in an ablation document; empty when it matches the schema.
std::vector<std::string> validate_ablation_document(const nlohmann::json& doc);

// rank,variant,epoch,new_task_loss,base_task_loss
std::string curves_csv(std::span<const AblationReport> reports);

}  // namespace mica
