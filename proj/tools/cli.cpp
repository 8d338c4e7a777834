#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "mica/adapter.hpp"
#include "mica/bench.hpp"
#include "mica/checkpoint_io.hpp"
#include "mica/compose.hpp"
#include "mica/error.hpp"
#include "mica/format.hpp"
#include "mica/model_io.hpp"
#include "mica/rng.hpp"
#include "mica/run_config.hpp"
#include "mica/subspace.hpp"

namespace mica::cli {

using nlohmann::json;

namespace {

// MICA_LOG: error, warn (default), info, debug, or 0-3.
class Log {
 public:
  enum Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

  explicit Log(std::ostream& err) : err_(err) {
    const char* env = std::getenv("MICA_LOG");
    if (!env) return;
    const std::string v = env;
    if (v == "error" || v == "0") level_ = Error;
    else if (v == "warn" || v == "1") level_ = Warn;
    else if (v == "info" || v == "2") level_ = Info;
    else if (v == "debug" || v == "3") level_ = Debug;
    else err_ << "[warn] ignoring MICA_LOG='" << v << "' (expected error, warn, info or debug)\n";
  }

  void info(const std::string& msg) const { emit(Info, "info", msg); }
  void debug(const std::string& msg) const { emit(Debug, "debug", msg); }

 private:
  void emit(Level at, const char* tag, const std::string& msg) const {
    if (level_ >= at) err_ << "[" << tag << "] " << msg << '\n';
  }

  std::ostream& err_;
  Level level_ = Warn;
};

// A config problem that should exit with kUsage.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config '" + path + "'");
    doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError(path, "not valid JSON");
    if (!doc.is_object()) throw ConfigError(path, "top level must be an object");
  }
  return apply_overrides(std::move(doc), overrides);
}

AdapterMethod make_method(const std::string& method, const std::string& mode, std::uint64_t seed,
                          std::optional<double> sigma) {
  if (method == "mica") {
    const auto kind = subspace_kind_from_string(mode);
    return MicaMethod{kind == SubspaceMode::Kind::Random ? SubspaceMode::random(seed) : SubspaceMode{kind, 0}};
  }
  if (method == "lora") return LoraGaussian{sigma, seed};
  throw UsageError("unknown method '" + method + "' (expected mica or lora)");
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

std::string available_tensors(const ModelCheckpoint& ckpt) {
  std::string s;
  for (const auto& [name, t] : ckpt.tensors) s += (s.empty() ? "" : ", ") + name;
  return s.empty() ? "(none)" : s;
}

const Matrix& find_tensor(const ModelCheckpoint& ckpt, const std::string& name, const std::string& file) {
  const auto it = ckpt.tensors.find(name);
  if (it == ckpt.tensors.end()) {
    throw UsageError("tensor '" + name + "' not found in " + file + "; available: " + available_tensors(ckpt));
  }
  return it->second;
}

std::string metrics_csv(const TrainReport& report) {
  std::string csv = "step,epoch,lr,loss,grad_norm_preclip\n";
  for (const auto& s : report.steps) {
    csv += std::to_string(s.step) + ',' + std::to_string(s.epoch) + ',' + format_double(s.lr) + ',' +
           format_double(s.loss) + ',' + format_double(s.grad_norm_preclip) + '\n';
  }
  return csv;
}

std::string with_trailing_newline(std::string s) { return s + '\n'; }

// ---- commands ----------------------------------------------------------

int cmd_param_count(const std::string& geom, const std::string& method, std::size_t r, bool as_json,
                    std::ostream& out) {
  const json table = param_count_table(geom, method, r);
  if (as_json) {
    out << table.dump(2) << '\n';
    return kOk;
  }
  out << "geometry   " << table["geometry"].get<std::string>() << '\n'
      << "method     " << table["method"].get<std::string>() << '\n'
      << "rank       " << r << '\n'
      << "trainable  " << group_thousands(table["trainable"]) << '\n'
      << "millions   " << table["millions"].get<std::string>() << '\n'
      << "lora       " << group_thousands(table["lora_trainable"]) << '\n'
      << "ratio      " << format_double(table["ratio_vs_lora"]) << '\n';
  return kOk;
}

int cmd_svd_report(const std::string& path, const std::string& tensor, std::size_t r, bool as_json,
                   std::ostream& out, const Log& log) {
  const ModelCheckpoint ckpt = read_checkpoint(path);
  const Matrix& w = find_tensor(ckpt, tensor, path);
  const std::size_t m = std::min(w.rows(), w.cols());
  if (r == 0 || r > m) throw UsageError("--r must lie in [1, " + std::to_string(m) + "] for '" + tensor + "'");
  log.info("decomposing " + tensor + " (" + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) + ")");
  const SvdFactors f = full_svd(w);
  const SpectrumReport rep = spectrum_report(f, r);
  const auto minor = select_indices(m, r, SubspaceMode::minor());
  const auto major = select_indices(m, r, SubspaceMode::major());

  if (as_json) {
    json j = {{"tensor", tensor},
              {"rows", w.rows()},
              {"cols", w.cols()},
              {"r", r},
              {"singular_values", f.s},
              {"total_energy", rep.total_energy},
              {"minor_energy_fraction", rep.minor_energy_fraction},
              {"major_energy_fraction", rep.major_energy_fraction},
              {"minor_indices", minor},
              {"major_indices", major}};
    out << j.dump(2) << '\n';
    return kOk;
  }
  out << "tensor                 " << tensor << '\n'
      << "shape                  " << w.rows() << "x" << w.cols() << '\n'
      << "r                      " << r << '\n'
      << "singular_values       ";
  for (double s : f.s) out << ' ' << format_double(s);
  out << '\n'
      << "total_energy           " << format_double(rep.total_energy) << '\n'
      << "minor_energy_fraction  " << format_double(rep.minor_energy_fraction) << '\n'
      << "major_energy_fraction  " << format_double(rep.major_energy_fraction) << '\n'
      << "minor_indices          " << join(minor) << '\n'
      << "major_indices          " << join(major) << '\n';
  return kOk;
}

struct InitOptions {
  std::string checkpoint;
  std::vector<std::string> tensors;
  std::string method = "mica";
  std::string mode = "minor";
  std::uint64_t seed = 0;
  std::size_t r = 8;
  double alpha = 16.0;
  double dropout = 0.05;
  std::optional<double> sigma;
  std::string out;
  std::string dtype = "f64";
};

int cmd_init_adapter(const InitOptions& o, std::ostream& out, const Log& log) {
  const ModelCheckpoint base = read_checkpoint(o.checkpoint);
  std::vector<std::string> names = o.tensors;
  if (names.empty()) {
    for (const auto& [name, t] : base.tensors) {
      if (name.ends_with(".weight")) names.push_back(name);
    }
    if (names.empty()) throw UsageError("no '*.weight' tensors in " + o.checkpoint + "; pass --tensor");
  }

  ModelCheckpoint ckpt;
  ckpt.name = "adapter";
  json configs = json::object();
  for (const auto& name : names) {
    const Matrix& w = find_tensor(base, name, o.checkpoint);
    const std::string prefix = name.ends_with(".weight") ? name.substr(0, name.size() - 7) : name;
    AdapterConfig cfg;
    cfg.rank = o.r;
    cfg.alpha = o.alpha;
    cfg.dropout_p = o.dropout;
    cfg.method = make_method(o.method, o.mode, derive_seed(o.seed, prefix), o.sigma);
    const Adapter adapter = init_adapter(w, cfg);
    ckpt.tensors.emplace(prefix + ".A", adapter.a);
    ckpt.tensors.emplace(prefix + ".B", adapter.b);
    configs[prefix] = to_json(adapter.config);
    log.info("initialized " + prefix + " (" + method_name(cfg.method) + ", r=" + std::to_string(o.r) + ")");
  }
  ckpt.metadata = {{"kind", "adapter"}, {"adapters", configs}};
  write_checkpoint(o.out, ckpt, dtype_from_string(o.dtype));
  out << "wrote " << names.size() << " adapter(s) to " << o.out << '\n';
  return kOk;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides, std::ostream& out,
              const Log& log) {
  const TrainRunConfig cfg = parse_train_config(load_config(config_path, overrides));
  const DType dtype = dtype_from_string(cfg.dtype);
  const Scenario scenario = make_scenario(cfg.scenario.resolve());

  const std::size_t max_rank = std::min(scenario.spec.d_out, scenario.spec.d_in);
  if (cfg.adapter.rank > max_rank) {
    throw ConfigError("adapter.rank", "must lie in [1, " + std::to_string(max_rank) + "] for the scenario");
  }

  ToyModel model = single_layer(scenario.base_teacher);
  AdaptedLinear& layer = layer_of(model);
  layer.adapter = init_adapter(layer.w, cfg.adapter.resolve());
  const ModelCheckpoint base = model_checkpoint(single_layer(scenario.base_teacher), "base");

  const auto batches = make_batches(scenario.new_train.inputs, scenario.new_train.targets, cfg.train.config.batch_size);
  log.info("training " + std::to_string(cfg.train.config.epochs) + " epoch(s) x " + std::to_string(batches.size()) +
           " batch(es), profile " + cfg.train.profile);
  const TrainReport report = train_loop(model, batches, cfg.train.config, [&](std::size_t epoch, const ToyModel& m) {
    log.debug("epoch " + std::to_string(epoch) + " new-task loss " +
              format_double(mean_squared_error(predict(m, scenario.new_eval.inputs), scenario.new_eval.targets)));
  });
  if (report.frozen_hash_after != report.frozen_hash_before) throw NumericalError("frozen tensors changed during training");

  ModelCheckpoint ckpt = adapter_checkpoint(model, "adapter");
  ckpt.metadata["config"] = to_json(cfg);

  // Everything is computed before the first write, and each write is atomic.
  write_checkpoint(cfg.checkpoint, ckpt, dtype);
  write_file_atomic(cfg.metrics, metrics_csv(report));
  if (!cfg.base_checkpoint.empty()) write_checkpoint(cfg.base_checkpoint, base, dtype);

  const double final_loss = mean_squared_error(predict(model, scenario.new_eval.inputs), scenario.new_eval.targets);
  out << "steps " << report.steps.size() << '\n'
      << "new_task_eval_loss " << format_double(final_loss) << '\n'
      << "checkpoint " << cfg.checkpoint << '\n'
      << "metrics " << cfg.metrics << '\n';
  if (!cfg.base_checkpoint.empty()) out << "base_checkpoint " << cfg.base_checkpoint << '\n';
  return kOk;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& overrides, std::ostream& out,
               std::ostream& err, const Log& log) {
  const AblateRunConfig cfg = parse_ablate_config(load_config(config_path, overrides));
  const Scenario scenario = make_scenario(cfg.scenario.resolve());
  const std::vector<Variant> variants = cfg.expanded_variants();
  const std::size_t max_rank = std::min(scenario.spec.d_out, scenario.spec.d_in);
  for (std::size_t i = 0; i < cfg.ranks.size(); ++i) {
    if (cfg.ranks[i] > max_rank) {
      throw ConfigError("ranks[" + std::to_string(i) + "]",
                        "must lie in [1, " + std::to_string(max_rank) + "] for the scenario");
    }
  }

  std::vector<AblationReport> reports;
  for (std::size_t r : cfg.ranks) {
    log.info("rank " + std::to_string(r) + ": " + std::to_string(variants.size()) + " variant(s)");
    reports.push_back(run_ablation(scenario, variants, r, cfg.train.config, cfg.options));
  }
  const json doc = ablation_document(scenario.spec, reports);
  write_file_atomic(cfg.report, with_trailing_newline(doc.dump(2)));
  write_file_atomic(cfg.curves, curves_csv(reports));

  bool failed = false;
  out << std::left << std::setw(6) << "rank" << std::setw(14) << "variant" << std::setw(24) << "new_task_loss"
      << "base_task_loss\n";
  for (const auto& rep : reports) {
    for (const auto& rec : rep.variants) {
      out << std::setw(6) << rep.rank << std::setw(14) << rec.variant.label();
      if (rec.ok) {
        out << std::setw(24) << format_double(rec.final_new_task_loss) << format_double(rec.final_base_task_loss)
            << '\n';
      } else {
        out << "FAILED\n";
        err << "variant " << rec.variant.label() << " at rank " << rep.rank << " failed: " << rec.error << '\n';
        failed = true;
      }
    }
  }
  out << "report " << cfg.report << '\n' << "curves " << cfg.curves << '\n';
  return failed ? kFailure : kOk;
}

int cmd_compose(const std::string& base_ft, const std::string& instr, const std::string& base,
                const std::string& out_path, const std::string& dtype, std::ostream& out) {
  const ModelCheckpoint ft = read_checkpoint(base_ft);
  const ModelCheckpoint in = read_checkpoint(instr);
  const ModelCheckpoint b = read_checkpoint(base);
  ModelCheckpoint result = compose(ft, delta(in, b));
  result.name = "composed";
  write_checkpoint(out_path, result, dtype_from_string(dtype));
  out << "wrote " << result.tensors.size() << " tensor(s) to " << out_path << '\n';
  return kOk;
}

int cmd_show_defaults(const std::string& which, std::ostream& out) {
  json doc;
  if (which == "train") doc = to_json(TrainRunConfig::defaults());
  else if (which == "ablate") doc = to_json(AblateRunConfig::defaults());
  else doc = {{"train", to_json(TrainRunConfig::defaults())}, {"ablate", to_json(AblateRunConfig::defaults())}};
  out << doc.dump(2) << '\n';
  return kOk;
}

}  // namespace

std::string group_thousands(std::uint64_t n) {
  std::string digits = std::to_string(n);
  std::string s;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) s += ',';
    s += digits[i];
  }
  return s;
}

std::string millions_label(std::uint64_t n) { return std::to_string((n + 500000) / 1000000) + "M"; }

json param_count_table(const std::string& geometry, const std::string& method, std::size_t r) {
  const auto geom = ModelGeometry::preset(geometry);
  if (!geom) {
    std::string names;
    for (const auto& n : ModelGeometry::preset_names()) names += (names.empty() ? "" : ", ") + n;
    throw UsageError("unknown geometry preset '" + geometry + "' (available: " + names + ")");
  }
  if (r == 0) throw UsageError("--r must be positive");
  const std::uint64_t count = count_trainable(*geom, make_method(method, "minor", 0, std::nullopt), r);
  const std::uint64_t lora = count_trainable(*geom, LoraGaussian{}, r);
  return {{"geometry", geom->name},
          {"method", method},
          {"r", r},
          {"trainable", count},
          {"millions", millions_label(count)},
          {"lora_trainable", lora},
          {"ratio_vs_lora", static_cast<double>(count) / static_cast<double>(lora)}};
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const Log log(err);
  CLI::App app{"Minor-component adapters: parameter counts, SVD reports, training, ablations and composition"};
  app.name("mica");
  app.require_subcommand(1);

  std::string geom, method = "mica";
  std::size_t r = 0;
  bool as_json = false;
  auto* pc = app.add_subcommand("param-count", "Trainable-parameter count for a model geometry preset");
  pc->add_option("--geom", geom, "Geometry preset (llama2-7b, qwen2.5-7b)")->required();
  pc->add_option("--method", method, "mica or lora")->check(CLI::IsMember({"mica", "lora"}));
  pc->add_option("--r", r, "Adapter rank")->required();
  pc->add_flag("--json", as_json, "Emit JSON");

  std::string ckpt_path, tensor;
  auto* svd = app.add_subcommand("svd-report", "Spectrum and minor/major index sets of one checkpoint tensor");
  svd->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  svd->add_option("--tensor", tensor, "Tensor name")->required();
  svd->add_option("--r", r, "Adapter rank")->required();
  svd->add_flag("--json", as_json, "Emit JSON");

  InitOptions init;
  auto* ia = app.add_subcommand("init-adapter", "Initialize adapters for weights of a checkpoint");
  ia->add_option("--checkpoint", init.checkpoint, "Base checkpoint")->required();
  ia->add_option("--tensor", init.tensors, "Weight tensor to adapt (repeatable; default all *.weight)");
  ia->add_option("--method", init.method, "mica or lora")->check(CLI::IsMember({"mica", "lora"}));
  ia->add_option("--mode", init.mode, "minor, major or random (mica)")
      ->check(CLI::IsMember({"minor", "major", "random"}));
  ia->add_option("--seed", init.seed, "Seed for random subspaces and LoRA draws (derived per tensor)");
  ia->add_option("--r", init.r, "Adapter rank")->required();
  ia->add_option("--alpha", init.alpha, "Scaling numerator");
  ia->add_option("--dropout", init.dropout, "Adapter-branch dropout");
  ia->add_option("--lora-sigma", init.sigma, "LoRA A standard deviation (default 1/sqrt(d_in))");
  ia->add_option("--out", init.out, "Output adapter checkpoint")->required();
  ia->add_option("--dtype", init.dtype, "f64 or f32")->check(CLI::IsMember({"f64", "f32"}));

  std::string config_path;
  std::vector<std::string> overrides;
  auto* tr = app.add_subcommand("train", "Train an adapter on the synthetic new-task data");
  tr->add_option("--config", config_path, "JSON config (defaults: config show-defaults train)");
  tr->add_option("--set", overrides, "Override, e.g. train.epochs=3 (repeatable)");

  auto* ab = app.add_subcommand("ablate", "Compare subspace variants on the synthetic scenario");
  ab->add_option("--config", config_path, "JSON config (defaults: config show-defaults ablate)");
  ab->add_option("--set", overrides, "Override, e.g. ranks=[8] (repeatable)");

  std::string base_ft, instr, base, out_path, dtype = "f64";
  auto* co = app.add_subcommand("compose", "Write base_ft + (instr - base)");
  co->add_option("--base-ft", base_ft, "Fine-tuned base checkpoint")->required();
  co->add_option("--instr", instr, "Instruction-tuned checkpoint")->required();
  co->add_option("--base", base, "Base checkpoint")->required();
  co->add_option("--out", out_path, "Output checkpoint")->required();
  co->add_option("--dtype", dtype, "f64 or f32")->check(CLI::IsMember({"f64", "f32"}));

  std::string which = "all";
  auto* cf = app.add_subcommand("config", "Configuration helpers");
  cf->require_subcommand(1);
  auto* sd = cf->add_subcommand("show-defaults", "Print every default of the train and ablate configs");
  sd->add_option("command", which, "train, ablate or all")->check(CLI::IsMember({"train", "ablate", "all"}));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (*pc) return cmd_param_count(geom, method, r, as_json, out);
    if (*svd) return cmd_svd_report(ckpt_path, tensor, r, as_json, out, log);
    if (*ia) return cmd_init_adapter(init, out, log);
    if (*tr) return cmd_train(config_path, overrides, out, log);
    if (*ab) return cmd_ablate(config_path, overrides, out, err, log);
    if (*co) return cmd_compose(base_ft, instr, base, out_path, dtype, out);
    if (*sd) return cmd_show_defaults(which, out);
  } catch (const ConfigError& e) {
    err << "mica: invalid config: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    err << "mica: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "mica: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace mica::cli
