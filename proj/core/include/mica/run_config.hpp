#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mica/adapter.hpp"
#include "mica/bench.hpp"
#include "mica/train.hpp"

namespace mica {

// Scenario as written in a config: the spectrum is either explicit or a
// linear ramp, and the perturbed direction may be "last".
struct ScenarioSection {
  std::size_t d_out = 64;
  std::size_t d_in = 64;
  std::vector<double> spectrum_values;  // explicit when non-empty
  double spectrum_first = 10.0;
  double spectrum_last = 0.1;
  std::optional<std::size_t> perturb_index;  // unset = last direction
  double c = 5.0;
  std::size_t n_train = 512;
  std::size_t n_eval = 512;
  std::uint64_t seed = 0;

  ScenarioSpec resolve() const;
};

struct AdapterSection {
  std::string method = "mica";  // mica | lora
  std::string mode = "minor";    // minor | major | random (mica only)
  std::uint64_t mode_seed = 0;
  std::size_t rank = 4;
  double alpha = 16.0;
  double dropout = 0.05;
  std::optional<double> lora_sigma;
  std::uint64_t lora_seed = 0;

  AdapterConfig resolve() const;
};

struct TrainSection {
  std::string profile = "history";
  TrainConfig config = TrainConfig::history();
};

struct TrainRunConfig {
  ScenarioSection scenario;
  AdapterSection adapter;
  TrainSection train;
  std::string checkpoint = "adapter.mckpt";
  std::string metrics = "metrics.csv";
  std::string base_checkpoint;  // empty = not written
  std::string dtype = "f64";

  static TrainRunConfig defaults();
};

struct AblateRunConfig {
  ScenarioSection scenario;
  std::vector<std::string> variants{"no-ft", "mica-minor", "major", "random", "lora"};
  std::vector<std::size_t> ranks{1, 4, 8};
  std::vector<std::uint64_t> random_seeds{0, 1, 2, 3, 4};
  AblationOptions options;
  TrainSection train;
  std::string report = "ablation.json";
  std::string curves = "curves.csv";

  static AblateRunConfig defaults();
  // "random" expands into one variant per seed.
  std::vector<Variant> expanded_variants() const;
};

// Strict parsing: unknown keys and type errors raise ConfigError with the
// JSON path of the field.
TrainRunConfig parse_train_config(const nlohmann::json& doc);
AblateRunConfig parse_ablate_config(const nlohmann::json& doc);

nlohmann::json to_json(const TrainRunConfig& cfg);
nlohmann::json to_json(const AblateRunConfig& cfg);

// Applies "dotted.path=value" assignments; values parse as JSON when
// possible, otherwise as strings.
nlohmann::json apply_overrides(nlohmann::json doc, const std::vector<std::string>& assignments);

}  // namespace mica
