#include "mica/run_config.hpp"

#include <set>

#include "mica/error.hpp"

namespace mica {

namespace {

using nlohmann::json;

// Reads one JSON object, tracking which keys were consumed.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json* raw(const std::string& key) {
    used_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    const json* v = raw(key);
    if (!v) return;
    out = convert<T>(*v, child(key));
  }

  template <typename T>
  void read_optional(const std::string& key, std::optional<T>& out) {
    const json* v = raw(key);
    if (!v) return;
    if (v->is_null()) {
      out.reset();
    } else {
      out = convert<T>(*v, child(key));
    }
  }

  ObjectReader object(const std::string& key) {
    const json* v = raw(key);
    static const json kEmpty = json::object();
    return ObjectReader(v ? *v : kEmpty, child(key));
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!used_.contains(key)) throw ConfigError(child(key), "unknown key");
    }
  }

  template <typename T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      // documents built in code hold small literals as signed integers
      const bool nonneg = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
      if (!nonneg) throw ConfigError(path, "expected a nonnegative integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path, "expected a number");
      return v.get<T>();
    } else {
      if (!v.is_array()) throw ConfigError(path, "expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> used_;
};

ScenarioSection parse_scenario(ObjectReader r) {
  ScenarioSection s;
  r.read("d_out", s.d_out);
  r.read("d_in", s.d_in);
  if (const json* spec = r.raw("spectrum")) {
    const std::string path = r.child("spectrum");
    if (spec->is_array()) {
      s.spectrum_values = ObjectReader::convert<std::vector<double>>(*spec, path);
    } else {
      ObjectReader sr(*spec, path);
      std::string kind = "linear";
      sr.read("kind", kind);
      if (kind != "linear") throw ConfigError(sr.child("kind"), "expected \"linear\" (or give an explicit array)");
      sr.read("first", s.spectrum_first);
      sr.read("last", s.spectrum_last);
      sr.finish();
    }
  }
  if (const json* p = r.raw("perturb_index")) {
    if (p->is_string()) {
      if (*p != "last") throw ConfigError(r.child("perturb_index"), "expected an index or \"last\"");
      s.perturb_index.reset();
    } else {
      s.perturb_index = ObjectReader::convert<std::size_t>(*p, r.child("perturb_index"));
    }
  }
  r.read("c", s.c);
  r.read("n_train", s.n_train);
  r.read("n_eval", s.n_eval);
  r.read("seed", s.seed);
  r.finish();
  return s;
}

json scenario_json(const ScenarioSection& s) {
  json j = {{"d_out", s.d_out}, {"d_in", s.d_in}, {"c", s.c}, {"n_train", s.n_train}, {"n_eval", s.n_eval},
            {"seed", s.seed}};
  if (s.spectrum_values.empty()) {
    j["spectrum"] = {{"kind", "linear"}, {"first", s.spectrum_first}, {"last", s.spectrum_last}};
  } else {
    j["spectrum"] = s.spectrum_values;
  }
  j["perturb_index"] = s.perturb_index ? json(*s.perturb_index) : json("last");
  return j;
}

// A profile overrides the table-driven knobs (batch size, weight decay,
// warmup, clipping) of `t`; explicit keys override the profile.
TrainSection parse_train(ObjectReader r, TrainSection t) {
  if (r.has("profile")) {
    r.read("profile", t.profile);
    TrainConfig p;
    try {
      p = TrainConfig::profile(t.profile);
    } catch (const ContractViolation& e) {
      throw ConfigError(r.child("profile"), e.what());
    }
    t.config.batch_size = p.batch_size;
    t.config.weight_decay = p.weight_decay;
    t.config.warmup_ratio = p.warmup_ratio;
    t.config.max_grad_norm = p.max_grad_norm;
  }
  TrainConfig& c = t.config;
  r.read("base_lr", c.base_lr);
  r.read("epochs", c.epochs);
  r.read("batch_size", c.batch_size);
  r.read("weight_decay", c.weight_decay);
  r.read("warmup_ratio", c.warmup_ratio);
  r.read("max_grad_norm", c.max_grad_norm);
  r.read("seed", c.seed);
  r.read("beta1", c.beta1);
  r.read("beta2", c.beta2);
  r.read("eps", c.eps);
  r.finish();
  try {
    c.validate();
  } catch (const ContractViolation& e) {
    // "train: base_lr must be positive" -> path "<section>.base_lr"
    std::string msg = e.what();
    if (msg.starts_with("train: ")) msg = msg.substr(7);
    const auto space = msg.find(' ');
    const std::string key = msg.substr(0, space);
    throw ConfigError(r.child(key == "betas" ? "beta1" : key), msg);
  }
  return t;
}

json train_json(const TrainSection& t) {
  const TrainConfig& c = t.config;
  return {{"profile", t.profile},           {"base_lr", c.base_lr},           {"epochs", c.epochs},
          {"batch_size", c.batch_size},     {"weight_decay", c.weight_decay}, {"warmup_ratio", c.warmup_ratio},
          {"max_grad_norm", c.max_grad_norm}, {"seed", c.seed},             {"beta1", c.beta1},
          {"beta2", c.beta2},               {"eps", c.eps}};
}

void check_one_of(const std::string& value, std::initializer_list<const char*> allowed, const std::string& path) {
  for (const char* a : allowed) {
    if (value == a) return;
  }
  std::string list;
  for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
  throw ConfigError(path, "expected one of: " + list);
}

}  // namespace

ScenarioSpec ScenarioSection::resolve() const {
  ScenarioSpec spec;
  spec.d_out = d_out;
  spec.d_in = d_in;
  const std::size_t m = std::min(d_out, d_in);
  spec.spectrum = spectrum_values.empty() ? linear_spectrum(m, spectrum_first, spectrum_last) : spectrum_values;
  spec.perturb_index = perturb_index.value_or(m == 0 ? 0 : m - 1);
  spec.c = c;
  spec.n_train = n_train;
  spec.n_eval = n_eval;
  spec.seed = seed;
  return spec;
}

AdapterConfig AdapterSection::resolve() const {
  AdapterConfig cfg;
  cfg.rank = rank;
  cfg.alpha = alpha;
  cfg.dropout_p = dropout;
  if (method == "mica") {
    SubspaceMode m;
    m.kind = subspace_kind_from_string(mode);
    m.seed = mode_seed;
    cfg.method = MicaMethod{m};
  } else {
    cfg.method = LoraGaussian{lora_sigma, lora_seed};
  }
  return cfg;
}

TrainRunConfig TrainRunConfig::defaults() {
  TrainRunConfig cfg;
  cfg.train.config.base_lr = 5e-3;
  cfg.train.config.epochs = 2;
  cfg.train.config.batch_size = 16;
  return cfg;
}

AblateRunConfig AblateRunConfig::defaults() {
  AblateRunConfig cfg;
  cfg.options.dropout = 0.0;
  cfg.train.config.base_lr = 3e-2;
  cfg.train.config.epochs = 40;
  cfg.train.config.batch_size = 32;
  return cfg;
}

std::vector<Variant> AblateRunConfig::expanded_variants() const {
  std::vector<Variant> out;
  for (const auto& name : variants) {
    if (name == "random") {
      for (std::uint64_t s : random_seeds) out.push_back({Variant::Kind::Random, s});
    } else {
      out.push_back(Variant::parse(name));
    }
  }
  return out;
}

TrainRunConfig parse_train_config(const nlohmann::json& doc) {
  TrainRunConfig cfg = TrainRunConfig::defaults();
  ObjectReader root(doc, "");
  if (root.has("scenario")) cfg.scenario = parse_scenario(root.object("scenario"));
  if (root.has("adapter")) {
    ObjectReader r = root.object("adapter");
    AdapterSection& a = cfg.adapter;
    r.read("method", a.method);
    check_one_of(a.method, {"mica", "lora"}, r.child("method"));
    r.read("mode", a.mode);
    check_one_of(a.mode, {"minor", "major", "random"}, r.child("mode"));
    r.read("mode_seed", a.mode_seed);
    r.read("rank", a.rank);
    r.read("alpha", a.alpha);
    r.read("dropout", a.dropout);
    r.read_optional("lora_sigma", a.lora_sigma);
    r.read("lora_seed", a.lora_seed);
    r.finish();
    if (a.rank == 0) throw ConfigError(r.child("rank"), "must be positive");
    if (!(a.alpha > 0.0)) throw ConfigError(r.child("alpha"), "must be positive");
    if (!(a.dropout >= 0.0 && a.dropout < 1.0)) throw ConfigError(r.child("dropout"), "must lie in [0, 1)");
  }
  if (root.has("train")) cfg.train = parse_train(root.object("train"), cfg.train);
  if (root.has("output")) {
    ObjectReader r = root.object("output");
    r.read("checkpoint", cfg.checkpoint);
    r.read("metrics", cfg.metrics);
    r.read("base_checkpoint", cfg.base_checkpoint);
    r.read("dtype", cfg.dtype);
    check_one_of(cfg.dtype, {"f64", "f32"}, r.child("dtype"));
    r.finish();
  }
  root.finish();
  return cfg;
}

AblateRunConfig parse_ablate_config(const nlohmann::json& doc) {
  AblateRunConfig cfg = AblateRunConfig::defaults();
  ObjectReader root(doc, "");
  if (root.has("scenario")) cfg.scenario = parse_scenario(root.object("scenario"));
  root.read("variants", cfg.variants);
  for (std::size_t i = 0; i < cfg.variants.size(); ++i) {
    if (cfg.variants[i] == "random") continue;
    try {
      Variant::parse(cfg.variants[i]);
    } catch (const ContractViolation& e) {
      throw ConfigError("variants[" + std::to_string(i) + "]", e.what());
    }
  }
  root.read("ranks", cfg.ranks);
  if (cfg.ranks.empty()) throw ConfigError("ranks", "must list at least one rank");
  root.read("random_seeds", cfg.random_seeds);
  root.read("probe_rank", cfg.options.probe_rank);
  if (root.has("adapter")) {
    ObjectReader r = root.object("adapter");
    r.read("alpha", cfg.options.alpha);
    r.read("dropout", cfg.options.dropout);
    r.read_optional("lora_sigma", cfg.options.lora_sigma);
    r.read("lora_seed", cfg.options.lora_seed);
    r.finish();
    if (!(cfg.options.alpha > 0.0)) throw ConfigError(r.child("alpha"), "must be positive");
    if (!(cfg.options.dropout >= 0.0 && cfg.options.dropout < 1.0)) {
      throw ConfigError(r.child("dropout"), "must lie in [0, 1)");
    }
  }
  if (root.has("train")) cfg.train = parse_train(root.object("train"), cfg.train);
  if (root.has("output")) {
    ObjectReader r = root.object("output");
    r.read("report", cfg.report);
    r.read("curves", cfg.curves);
    r.finish();
  }
  root.finish();
  return cfg;
}

nlohmann::json to_json(const TrainRunConfig& cfg) {
  const auto& a = cfg.adapter;
  return {{"scenario", scenario_json(cfg.scenario)},
          {"adapter",
           {{"method", a.method},
            {"mode", a.mode},
            {"mode_seed", a.mode_seed},
            {"rank", a.rank},
            {"alpha", a.alpha},
            {"dropout", a.dropout},
            {"lora_sigma", a.lora_sigma ? json(*a.lora_sigma) : json(nullptr)},
            {"lora_seed", a.lora_seed}}},
          {"train", train_json(cfg.train)},
          {"output",
           {{"checkpoint", cfg.checkpoint},
            {"metrics", cfg.metrics},
            {"base_checkpoint", cfg.base_checkpoint},
            {"dtype", cfg.dtype}}}};
}

nlohmann::json to_json(const AblateRunConfig& cfg) {
  const auto& o = cfg.options;
  return {{"scenario", scenario_json(cfg.scenario)},
          {"variants", cfg.variants},
          {"ranks", cfg.ranks},
          {"random_seeds", cfg.random_seeds},
          {"probe_rank", o.probe_rank},
          {"adapter",
           {{"alpha", o.alpha},
            {"dropout", o.dropout},
            {"lora_sigma", o.lora_sigma ? json(*o.lora_sigma) : json(nullptr)},
            {"lora_seed", o.lora_seed}}},
          {"train", train_json(cfg.train)},
          {"output", {{"report", cfg.report}, {"curves", cfg.curves}}}};
}

nlohmann::json apply_overrides(nlohmann::json doc, const std::vector<std::string>& assignments) {
  for (const auto& assignment : assignments) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError(assignment, "override must look like key.path=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    std::string pointer;
    std::size_t start = 0;
    while (start <= key.size()) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError(key, "empty path component");
      pointer += "/" + part;
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    doc[json::json_pointer(pointer)] = value;
  }
  return doc;
}

}  // namespace mica
