#include "mica/bench.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mica/adapter.hpp"
#include "mica/error.hpp"
#include "mica/format.hpp"
#include "mica/rng.hpp"
#include "mica/subspace.hpp"

namespace mica {

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, SplitMix64& gen) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = gen.normal();
  return m;
}

Dataset make_dataset(const Matrix& teacher, std::size_t n, std::uint64_t seed) {
  SplitMix64 gen(seed);
  Dataset d;
  d.inputs = gaussian(teacher.cols(), n, gen);
  d.targets = matmul(teacher, d.inputs);
  return d;
}

double mse(const Matrix& a, const Matrix& b) { return mean_squared_error(a, b); }

}  // namespace

double mean_squared_error(const Matrix& prediction, const Matrix& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw ContractViolation("mean_squared_error: shapes differ");
  }
  return (prediction - target).squared_norm() / static_cast<double>(prediction.size());
}

ToyModel single_layer(const Matrix& w) {
  ToyModel model;
  AdaptedLinear fc;
  fc.w = w;
  fc.bias = Matrix(w.rows(), 1);
  model.blocks.emplace_back(DenseBlock{std::move(fc), false});
  return model;
}

AdaptedLinear& layer_of(ToyModel& model) { return std::get<DenseBlock>(model.blocks.front()).fc; }

ScenarioSpec ScenarioSpec::defaults() {
  ScenarioSpec spec;
  spec.spectrum = linear_spectrum(64, 10.0, 0.1);
  spec.perturb_index = 63;
  return spec;
}

std::vector<double> linear_spectrum(std::size_t n, double first, double last) {
  if (n == 0) throw ContractViolation("linear_spectrum: empty spectrum");
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = n == 1 ? first : first + (last - first) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return s;
}

Scenario make_scenario(const ScenarioSpec& spec) {
  const std::size_t m = std::min(spec.d_out, spec.d_in);
  if (spec.d_out == 0 || spec.d_in == 0) throw ContractViolation("make_scenario: dimensions must be positive");
  if (spec.spectrum.size() != m) {
    throw ContractViolation("make_scenario: spectrum has " + std::to_string(spec.spectrum.size()) +
                            " values, expected min(d_out, d_in) = " + std::to_string(m));
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (!(spec.spectrum[i] > 0.0) || (i > 0 && spec.spectrum[i] > spec.spectrum[i - 1])) {
      throw ContractViolation("make_scenario: spectrum must be positive and non-increasing");
    }
  }
  if (spec.perturb_index >= m) {
    throw ContractViolation("make_scenario: perturb_index " + std::to_string(spec.perturb_index) + " outside [0, " +
                            std::to_string(m) + ")");
  }
  if (spec.n_train == 0 || spec.n_eval == 0) throw ContractViolation("make_scenario: dataset sizes must be positive");

  Scenario sc;
  sc.spec = spec;
  SplitMix64 gen(derive_seed(spec.seed, "teacher"));
  sc.left_basis = orthonormalize_columns(gaussian(spec.d_out, spec.d_out, gen));
  sc.right_basis = orthonormalize_columns(gaussian(spec.d_in, spec.d_in, gen));
  sc.base_teacher = matmul_nt(matmul(sc.left_basis.col_range(0, m), Matrix::diagonal(spec.spectrum)),
                              sc.right_basis.col_range(0, m));
  sc.u = sc.left_basis.col_range(spec.perturb_index, spec.perturb_index + 1);
  Matrix v = gaussian(spec.d_in, 1, gen);
  v *= 1.0 / v.frobenius_norm();
  sc.v = std::move(v);
  sc.new_teacher = sc.base_teacher + spec.c * matmul_nt(sc.u, sc.v);

  sc.base_train = make_dataset(sc.base_teacher, spec.n_train, derive_seed(spec.seed, "base-train"));
  sc.base_eval = make_dataset(sc.base_teacher, spec.n_eval, derive_seed(spec.seed, "base-eval"));
  sc.new_train = make_dataset(sc.new_teacher, spec.n_train, derive_seed(spec.seed, "new-train"));
  sc.new_eval = make_dataset(sc.new_teacher, spec.n_eval, derive_seed(spec.seed, "new-eval"));
  return sc;
}

std::string Variant::label() const {
  switch (kind) {
    case Kind::NoFt:
      return "no-ft";
    case Kind::MicaMinor:
      return "mica-minor";
    case Kind::Major:
      return "major";
    case Kind::Random:
      return "random(" + std::to_string(seed) + ")";
    case Kind::Lora:
      return "lora";
  }
  return "unknown";
}

Variant Variant::parse(const std::string& text) {
  if (text == "no-ft") return {Kind::NoFt, 0};
  if (text == "mica-minor" || text == "minor") return {Kind::MicaMinor, 0};
  if (text == "major") return {Kind::Major, 0};
  if (text == "lora") return {Kind::Lora, 0};
  if (text.starts_with("random(") && text.ends_with(")")) {
    const std::string digits = text.substr(7, text.size() - 8);
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      return {Kind::Random, std::stoull(digits)};
    }
  }
  throw ContractViolation("unknown ablation variant '" + text +
                          "' (expected no-ft, mica-minor, major, random(<seed>) or lora)");
}

const VariantRecord* AblationReport::find(Variant::Kind kind) const {
  for (const auto& rec : variants) {
    if (rec.variant.kind == kind) return &rec;
  }
  return nullptr;
}

bool AblationReport::all_ok() const {
  return std::all_of(variants.begin(), variants.end(), [](const VariantRecord& r) { return r.ok; });
}

double retention_metric(const Matrix& before, const Matrix& after, const Matrix* probe_basis) {
  if (before.rows() != after.rows() || before.cols() != after.cols()) {
    throw ContractViolation("retention_metric: output matrices differ in shape");
  }
  Matrix drift = after - before;
  if (probe_basis) {
    if (probe_basis->rows() != drift.rows()) throw ContractViolation("retention_metric: probe basis has wrong height");
    const double defect = orthonormality_defect(*probe_basis);
    if (!(defect <= 1e-8)) throw ContractViolation("retention_metric: probe basis is not orthonormal");
    drift = matmul(*probe_basis, matmul_tn(*probe_basis, drift));
  }
  return drift.squared_norm() / static_cast<double>(drift.size());
}

double oracle_new_task_loss(const Scenario& scenario, const Matrix& b, double scaling) {
  const Matrix& x = scenario.new_train.inputs;
  const Matrix residual = scenario.new_train.targets - matmul(scenario.base_teacher, x);
  // s² (BᵀB) A (XXᵀ) = s Bᵀ R Xᵀ
  const Matrix rhs = matmul_nt(matmul_tn(b, residual), x);
  const Matrix left = solve_spd(matmul_tn(b, b), rhs);
  const Matrix a = (1.0 / scaling) * solve_spd(matmul_nt(x, x), left.transposed()).transposed();
  const Matrix w = scenario.base_teacher + scaling * matmul(b, a);
  return mse(matmul(w, scenario.new_eval.inputs), scenario.new_eval.targets);
}

AblationReport run_ablation(const Scenario& scenario, std::span<const Variant> variants, std::size_t r,
                            const TrainConfig& train_cfg, const AblationOptions& options) {
  const std::size_t m = std::min(scenario.spec.d_out, scenario.spec.d_in);
  if (r == 0 || r > m) {
    throw ContractViolation("run_ablation: rank " + std::to_string(r) + " outside [1, " + std::to_string(m) + "]");
  }
  if (options.probe_rank == 0 || options.probe_rank > m) {
    throw ContractViolation("run_ablation: probe_rank outside [1, " + std::to_string(m) + "]");
  }

  const Matrix& w_star = scenario.base_teacher;
  const SvdFactors factors = full_svd(w_star);
  const Matrix probe = select_projection(factors, options.probe_rank, SubspaceMode::major());
  const Matrix base_before = matmul(w_star, scenario.base_eval.inputs);
  const std::vector<Batch> batches =
      make_batches(scenario.new_train.inputs, scenario.new_train.targets, train_cfg.batch_size);

  AblationReport report;
  report.rank = r;
  report.no_ft_new_task_loss = mse(matmul(w_star, scenario.new_eval.inputs), scenario.new_eval.targets);
  report.no_ft_base_task_loss = mse(base_before, scenario.base_eval.targets);

  for (const Variant& variant : variants) {
    VariantRecord rec;
    rec.variant = variant;
    try {
      ToyModel model = single_layer(w_star);
      if (variant.kind != Variant::Kind::NoFt) {
        AdapterConfig cfg;
        cfg.rank = r;
        cfg.alpha = options.alpha;
        cfg.dropout_p = options.dropout;
        switch (variant.kind) {
          case Variant::Kind::MicaMinor:
            cfg.method = MicaMethod{SubspaceMode::minor()};
            break;
          case Variant::Kind::Major:
            cfg.method = MicaMethod{SubspaceMode::major()};
            break;
          case Variant::Kind::Random:
            cfg.method = MicaMethod{SubspaceMode::random(variant.seed)};
            break;
          default:
            cfg.method = LoraGaussian{options.lora_sigma, options.lora_seed};
            break;
        }
        AdaptedLinear& layer = layer_of(model);
        layer.adapter = init_adapter(layer.w, cfg);
        const Adapter& adapter = *layer.adapter;
        rec.trainable_param_count = adapter.a.size() + (adapter.b_trainable ? adapter.b.size() : 0);
        if (variant.fixed_projection()) rec.oracle_new_task_loss = oracle_new_task_loss(scenario, adapter.b, adapter.scaling());

        const auto on_epoch = [&](std::size_t epoch, const ToyModel& current) {
          rec.curves.push_back({epoch, mse(predict(current, scenario.new_eval.inputs), scenario.new_eval.targets),
                                mse(predict(current, scenario.base_eval.inputs), scenario.base_eval.targets)});
        };
        const TrainReport tr = train_loop(model, batches, train_cfg, on_epoch);
        if (tr.frozen_hash_after != tr.frozen_hash_before) throw NumericalError("frozen tensors changed during training");
        rec.steps = tr.steps.size();
        for (const auto& s : tr.steps) rec.lr_trace.push_back(s.lr);
      }
      const Matrix base_after = predict(model, scenario.base_eval.inputs);
      rec.final_new_task_loss = mse(predict(model, scenario.new_eval.inputs), scenario.new_eval.targets);
      rec.final_base_task_loss = mse(base_after, scenario.base_eval.targets);
      rec.retention_delta = rec.final_base_task_loss - report.no_ft_base_task_loss;
      rec.projected_base_drift = retention_metric(base_before, base_after, &probe);
      if (!std::isfinite(rec.final_new_task_loss) || !std::isfinite(rec.final_base_task_loss)) {
        throw NumericalError("non-finite evaluation loss");
      }
    } catch (const std::exception& e) {
      rec.ok = false;
      rec.error = e.what();
    }
    report.variants.push_back(std::move(rec));
  }

  std::vector<double> random_losses;
  const VariantRecord* first_trained = nullptr;
  const VariantRecord* first_fixed = nullptr;
  for (const auto& rec : report.variants) {
    if (!rec.ok || rec.variant.kind == Variant::Kind::NoFt) continue;
    if (rec.variant.kind == Variant::Kind::Random) random_losses.push_back(rec.final_new_task_loss);
    if (!first_trained) first_trained = &rec;
    report.fairness.equal_steps &= rec.steps == first_trained->steps;
    report.fairness.equal_lr_traces &= rec.lr_trace == first_trained->lr_trace;
    if (rec.variant.fixed_projection()) {
      if (!first_fixed) first_fixed = &rec;
      report.fairness.equal_fixed_projection_param_counts &=
          rec.trainable_param_count == first_fixed->trainable_param_count;
    }
  }
  if (!random_losses.empty()) {
    RandomSummary summary;
    summary.count = random_losses.size();
    for (double l : random_losses) summary.mean += l;
    summary.mean /= static_cast<double>(summary.count);
    if (summary.count > 1) {
      double var = 0.0;
      for (double l : random_losses) var += (l - summary.mean) * (l - summary.mean);
      var /= static_cast<double>(summary.count - 1);
      summary.standard_error = std::sqrt(var / static_cast<double>(summary.count));
    }
    report.random = summary;
  }
  return report;
}

nlohmann::json to_json(const ScenarioSpec& spec) {
  return {{"d_out", spec.d_out},       {"d_in", spec.d_in},       {"spectrum", spec.spectrum},
          {"perturb_index", spec.perturb_index}, {"c", spec.c}, {"n_train", spec.n_train},
          {"n_eval", spec.n_eval},     {"seed", spec.seed}};
}

nlohmann::json to_json(const AblationReport& report) {
  nlohmann::json variants = nlohmann::json::array();
  for (const auto& rec : report.variants) {
    nlohmann::json curves = nlohmann::json::array();
    for (const auto& p : rec.curves) {
      curves.push_back({{"epoch", p.epoch}, {"new_task_loss", p.new_task_loss}, {"base_task_loss", p.base_task_loss}});
    }
    nlohmann::json j = {{"variant", rec.variant.label()},
                        {"ok", rec.ok},
                        {"final_new_task_loss", rec.final_new_task_loss},
                        {"final_base_task_loss", rec.final_base_task_loss},
                        {"retention_delta", rec.retention_delta},
                        {"projected_base_drift", rec.projected_base_drift},
                        {"oracle_new_task_loss", rec.oracle_new_task_loss ? nlohmann::json(*rec.oracle_new_task_loss)
                                                                           : nlohmann::json(nullptr)},
                        {"trainable_param_count", rec.trainable_param_count},
                        {"steps", rec.steps},
                        {"curves", curves}};
    if (!rec.ok) j["error"] = rec.error;
    variants.push_back(std::move(j));
  }
  nlohmann::json out = {{"rank", report.rank},
                        {"no_ft_new_task_loss", report.no_ft_new_task_loss},
                        {"no_ft_base_task_loss", report.no_ft_base_task_loss},
                        {"variants", variants},
                        {"fairness",
                         {{"equal_steps", report.fairness.equal_steps},
                          {"equal_lr_traces", report.fairness.equal_lr_traces},
                          {"equal_fixed_projection_param_counts", report.fairness.equal_fixed_projection_param_counts}}}};
  if (report.random) {
    out["random_summary"] = {{"count", report.random->count},
                             {"mean", report.random->mean},
                             {"standard_error", report.random->standard_error}};
  } else {
    out["random_summary"] = nullptr;
  }
  return out;
}

nlohmann::json ablation_document(const ScenarioSpec& spec, std::span<const AblationReport> reports) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : reports) runs.push_back(to_json(r));
  return {{"format", "mica-ablation-report"}, {"version", 1}, {"scenario", to_json(spec)}, {"runs", runs}};
}

std::vector<std::string> validate_ablation_document(const nlohmann::json& doc) {
  std::vector<std::string> problems;
  auto need = [&](const nlohmann::json& obj, const std::string& path, const char* key, auto pred, const char* kind) {
    if (!obj.is_object() || !obj.contains(key)) {
      problems.push_back(path + "." + key + ": missing");
      return false;
    }
    if (!pred(obj.at(key))) {
      problems.push_back(path + "." + key + ": expected " + kind);
      return false;
    }
    return true;
  };
  const auto is_num = [](const nlohmann::json& j) { return j.is_number(); };
  const auto is_uint = [](const nlohmann::json& j) {
    return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
  };
  const auto is_bool = [](const nlohmann::json& j) { return j.is_boolean(); };
  const auto is_str = [](const nlohmann::json& j) { return j.is_string(); };
  const auto is_arr = [](const nlohmann::json& j) { return j.is_array(); };
  const auto is_obj = [](const nlohmann::json& j) { return j.is_object(); };
  const auto num_or_null = [](const nlohmann::json& j) { return j.is_number() || j.is_null(); };
  const auto obj_or_null = [](const nlohmann::json& j) { return j.is_object() || j.is_null(); };

  if (!doc.is_object()) return {"document: expected object"};
  if (need(doc, "$", "format", is_str, "string") && doc["format"] != "mica-ablation-report") {
    problems.push_back("$.format: expected \"mica-ablation-report\"");
  }
  need(doc, "$", "version", is_uint, "unsigned integer");
  if (need(doc, "$", "scenario", is_obj, "object")) {
    for (const char* k : {"d_out", "d_in", "perturb_index", "n_train", "n_eval", "seed"}) {
      need(doc["scenario"], "$.scenario", k, is_uint, "unsigned integer");
    }
    need(doc["scenario"], "$.scenario", "c", is_num, "number");
    need(doc["scenario"], "$.scenario", "spectrum", is_arr, "array");
  }
  if (!need(doc, "$", "runs", is_arr, "array")) return problems;
  for (std::size_t i = 0; i < doc["runs"].size(); ++i) {
    const auto& run = doc["runs"][i];
    const std::string rp = "$.runs[" + std::to_string(i) + "]";
    need(run, rp, "rank", is_uint, "unsigned integer");
    need(run, rp, "no_ft_new_task_loss", is_num, "number");
    need(run, rp, "no_ft_base_task_loss", is_num, "number");
    if (need(run, rp, "fairness", is_obj, "object")) {
      for (const char* k : {"equal_steps", "equal_lr_traces", "equal_fixed_projection_param_counts"}) {
        need(run["fairness"], rp + ".fairness", k, is_bool, "boolean");
      }
    }
    if (need(run, rp, "random_summary", obj_or_null, "object or null") && run["random_summary"].is_object()) {
      need(run["random_summary"], rp + ".random_summary", "count", is_uint, "unsigned integer");
      need(run["random_summary"], rp + ".random_summary", "mean", is_num, "number");
      need(run["random_summary"], rp + ".random_summary", "standard_error", is_num, "number");
    }
    if (!need(run, rp, "variants", is_arr, "array")) continue;
    for (std::size_t k = 0; k < run["variants"].size(); ++k) {
      const auto& v = run["variants"][k];
      const std::string vp = rp + ".variants[" + std::to_string(k) + "]";
      if (need(v, vp, "variant", is_str, "string")) {
        try {
          Variant::parse(v["variant"].get<std::string>());
        } catch (const ContractViolation&) {
          problems.push_back(vp + ".variant: unknown variant label");
        }
      }
      need(v, vp, "ok", is_bool, "boolean");
      for (const char* key : {"final_new_task_loss", "final_base_task_loss", "retention_delta", "projected_base_drift"}) {
        need(v, vp, key, is_num, "number");
      }
      need(v, vp, "oracle_new_task_loss", num_or_null, "number or null");
      need(v, vp, "trainable_param_count", is_uint, "unsigned integer");
      need(v, vp, "steps", is_uint, "unsigned integer");
      if (need(v, vp, "curves", is_arr, "array")) {
        for (std::size_t e = 0; e < v["curves"].size(); ++e) {
          const std::string cp = vp + ".curves[" + std::to_string(e) + "]";
          need(v["curves"][e], cp, "epoch", is_uint, "unsigned integer");
          need(v["curves"][e], cp, "new_task_loss", is_num, "number");
          need(v["curves"][e], cp, "base_task_loss", is_num, "number");
        }
      }
      if (v.is_object() && v.contains("ok") && v["ok"] == false) need(v, vp, "error", is_str, "string");
    }
  }
  return problems;
}

std::string curves_csv(std::span<const AblationReport> reports) {
  std::ostringstream out;
  out << "rank,variant,epoch,new_task_loss,base_task_loss\n";
  for (const auto& report : reports) {
    for (const auto& rec : report.variants) {
      for (const auto& p : rec.curves) {
        out << report.rank << ',' << rec.variant.label() << ',' << p.epoch << ',' << format_double(p.new_task_loss)
            << ',' << format_double(p.base_task_loss) << '\n';
      }
    }
  }
  return out.str();
}

}  // namespace mica
