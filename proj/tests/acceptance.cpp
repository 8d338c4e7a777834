// One PASS/FAIL line per acceptance criterion. Exit status is nonzero when a
// criterion fails that is not listed with --known-deviation N.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "mica/adapter.hpp"
#include "mica/bench.hpp"
#include "mica/checkpoint_io.hpp"
#include "mica/compose.hpp"
#include "mica/error.hpp"
#include "mica/model_io.hpp"
#include "mica/run_config.hpp"
#include "mica/toynet.hpp"
#include "mica/train.hpp"
#include "support.hpp"

namespace mica {
namespace {

using nlohmann::json;
using test::random_matrix;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what + (detail.empty() ? "" : "; " + detail);
    pass = pass && ok;
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// ---- 1 ------------------------------------------------------------------

Verdict param_counts() {
  Verdict v;
  const auto start = Clock::now();
  struct Row {
    const char* geom;
    const char* method;
    const char* r;
    std::uint64_t trainable;
    const char* millions;
  };
  for (const Row& row : {Row{"llama2-7b", "lora", "128", 67108864, "67M"}, Row{"llama2-7b", "mica", "16", 4194304, "4M"},
                         Row{"qwen2.5-7b", "lora", "32", 10092544, "10M"},
                         Row{"qwen2.5-7b", "mica", "32", 6422528, "6M"}}) {
    std::ostringstream out, err;
    const int code = cli::run({"param-count", "--geom", row.geom, "--method", row.method, "--r", row.r, "--json"}, out, err);
    const std::string label = std::string(row.method) + "/" + row.geom + " r=" + row.r;
    v.require(code == cli::kOk, label + " exit " + std::to_string(code));
    if (code != cli::kOk) continue;
    const json j = json::parse(out.str());
    v.require(j["trainable"].get<std::uint64_t>() == row.trainable,
              label + " gave " + std::to_string(j["trainable"].get<std::uint64_t>()));
    v.require(j["millions"] == row.millions, label + " rounded to " + j["millions"].get<std::string>());
  }
  const double secs = seconds_since(start);
  v.require(secs < 1.0, "runtime " + fmt(secs) + " s");
  v.note("4 configurations, " + fmt(secs) + " s");
  return v;
}

// ---- 2 ------------------------------------------------------------------

Verdict halving() {
  Verdict v;
  const auto start = Clock::now();
  SplitMix64 gen(2024);
  for (int i = 0; i < 100; ++i) {
    ModelGeometry g;
    g.name = "square-" + std::to_string(i);
    g.num_layers = 1 + gen.below(80);
    g.targets = {{"q_proj", 0, 0}, {"v_proj", 0, 0}};
    std::size_t min_d = SIZE_MAX;
    for (auto& t : g.targets) {
      t.d_in = t.d_out = 1 + gen.below(16384);
      min_d = std::min(min_d, t.d_in);
    }
    const std::size_t r = 1 + gen.below(min_d);
    const std::uint64_t mica = count_trainable(g, MicaMethod{}, r);
    const std::uint64_t lora = count_trainable(g, LoraGaussian{}, r);
    v.require(lora % 2 == 0 && 2 * mica == lora,
              "geometry " + std::to_string(i) + ": mica " + std::to_string(mica) + " lora " + std::to_string(lora));
  }
  const double secs = seconds_since(start);
  v.require(secs < 1.0, "runtime " + fmt(secs) + " s");
  v.note("100 geometries, " + fmt(secs) + " s");
  return v;
}

// ---- 3 ------------------------------------------------------------------

Verdict svd_suite() {
  Verdict v;
  const auto start = Clock::now();
  SplitMix64 gen(7);
  double worst_residual = 0.0, worst_defect_ratio = 0.0;
  for (int i = 0; i < 200; ++i) {
    // every tenth matrix at the full 256 x 256 size
    const std::size_t rows = i % 10 == 0 ? 256 : 1 + gen.below(256);
    const std::size_t cols = i % 10 == 0 ? 256 : 1 + gen.below(256);
    const Matrix w = random_matrix(rows, cols, 1000 + i);
    const SvdFactors f = full_svd(w);
    const double residual = (reconstruct(f) - w).frobenius_norm() / w.frobenius_norm();
    const double dim = static_cast<double>(std::max(rows, cols));
    const double defect = std::max(orthonormality_defect(f.u), orthonormality_defect(f.vt.transposed()));
    worst_residual = std::max(worst_residual, residual);
    worst_defect_ratio = std::max(worst_defect_ratio, defect / dim);
    v.require(residual < 1e-9, std::to_string(rows) + "x" + std::to_string(cols) + " residual " + fmt(residual));
    v.require(defect < 1e-10 * dim, std::to_string(rows) + "x" + std::to_string(cols) + " defect " + fmt(defect));
  }
  const SvdFactors eye = full_svd(Matrix::identity(9));
  v.require(std::all_of(eye.s.begin(), eye.s.end(), [](double s) { return s == 1.0; }), "identity spectrum not exact");
  const SvdFactors diag = full_svd(Matrix::from_rows({{0, 0, 0}, {0, 3, 0}, {0, 0, -2}, {0, 0, 0}}));
  v.require(diag.s == std::vector<double>{3.0, 2.0, 0.0}, "diagonal spectrum not exact");
  const double secs = seconds_since(start);
  v.require(secs < 60.0, "runtime " + fmt(secs) + " s");
  v.note("200 matrices, worst residual " + fmt(worst_residual) + ", worst defect/dim " + fmt(worst_defect_ratio) + ", " +
         fmt(secs) + " s");
  return v;
}

// ---- 4 ------------------------------------------------------------------

// Cyclic two-sided Jacobi on a symmetric matrix: eigenvalues descending with
// eigenvectors as columns, sign-normalized like the library's U.
std::pair<std::vector<double>, Matrix> symmetric_eigen(Matrix a) {
  const std::size_t n = a.rows();
  Matrix q = Matrix::identity(n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-30 * a.squared_norm()) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t r = p + 1; r < n; ++r) {
        if (a(p, r) == 0.0) continue;
        const double theta = (a(r, r) - a(p, p)) / (2.0 * a(p, r));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akr = a(k, r);
          a(k, p) = c * akp - s * akr;
          a(k, r) = s * akp + c * akr;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), ark = a(r, k);
          a(p, k) = c * apk - s * ark;
          a(r, k) = s * apk + c * ark;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double qkp = q(k, p), qkr = q(k, r);
          q(k, p) = c * qkp - s * qkr;
          q(k, r) = s * qkp + c * qkr;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  std::vector<double> values(n);
  Matrix vecs(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    values[j] = a(order[j], order[j]);
    std::size_t big = 0;
    for (std::size_t k = 0; k < n; ++k)
      if (std::abs(q(k, order[j])) > std::abs(q(big, order[j]))) big = k;
    const double sign = q(big, order[j]) < 0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) vecs(k, j) = sign * q(k, order[j]);
  }
  return {values, vecs};
}

Verdict init_contracts() {
  Verdict v;
  SplitMix64 gen(4);
  double worst_b = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t d_out = 2 + gen.below(23), d_in = 2 + gen.below(23);
    const std::size_t m = std::min(d_out, d_in);
    // well-separated spectrum so the minor directions are unique up to sign
    std::vector<double> s(m);
    for (std::size_t k = 0; k < m; ++k) s[k] = 1.0 + 0.5 * static_cast<double>(m - 1 - k) + 0.2 * gen.uniform();
    const Matrix u0 = orthonormalize_columns(random_matrix(d_out, m, 50 + i));
    const Matrix v0 = orthonormalize_columns(random_matrix(d_in, m, 150 + i));
    const Matrix w = matmul_nt(matmul(u0, diag_embed(s, m, m)), v0);
    const std::size_t r = 1 + gen.below(m);
    const std::string label = "case " + std::to_string(i);

    AdapterConfig cfg;
    cfg.rank = r;
    cfg.method = MicaMethod{SubspaceMode::minor()};
    const Adapter mica = init_adapter(w, cfg);
    cfg.method = LoraGaussian{std::nullopt, static_cast<std::uint64_t>(i)};
    const Adapter lora = init_adapter(w, cfg);
    for (const Adapter* a : {&mica, &lora}) {
      const Matrix d = effective_delta(*a);
      v.require(std::all_of(d.data().begin(), d.data().end(), [](double x) { return x == 0.0; }),
                label + ": nonzero delta at init");
    }

    const auto [values, vecs] = symmetric_eigen(matmul_nt(w, w));
    for (std::size_t j = 0; j < r; ++j) {
      const std::size_t k = m - r + j;
      double diff = 0.0;
      for (std::size_t row = 0; row < d_out; ++row) diff = std::max(diff, std::abs(mica.b(row, j) - vecs(row, k)));
      worst_b = std::max(worst_b, diff);
    }
  }
  v.require(worst_b < 1e-9, "B differs from the minor eigenvectors by " + fmt(worst_b));
  v.note("100 cases, worst |B - U_minor| " + fmt(worst_b));
  return v;
}

// ---- 5 ------------------------------------------------------------------

Verdict gradients() {
  Verdict v;
  const auto start = Clock::now();
  double worst = 0.0;
  for (std::uint64_t c = 0; c < 25; ++c) {
    SplitMix64 gen(500 + c);
    const std::size_t d = 4 + gen.below(13);  // 4..16
    const bool mica = c % 2 == 0;
    const int layout = static_cast<int>((c / 2) % 3);  // linear, attention, linear + attention
    ToyModel m;
    if (layout != 1) m.blocks.emplace_back(make_dense(d, d, gen));
    if (layout != 0) m.blocks.emplace_back(make_attention(d, 3 + gen.below(d - 2), gen, true, c % 4 == 1));
    const bool classify = c % 3 == 0;
    if (classify) m.head = make_linear(d, 3, gen);
    AdapterConfig cfg;
    cfg.rank = 1 + gen.below(3);
    cfg.dropout_p = c % 5 == 0 ? 0.0 : 0.1;
    cfg.method = mica ? AdapterMethod{MicaMethod{SubspaceMode::minor()}} : AdapterMethod{LoraGaussian{std::nullopt, c}};
    attach_adapters(m, cfg, {"fc", "q_proj", "v_proj"});
    SplitMix64 jitter(900 + c);
    for (const ParamRef& ref : trainable_params(m))
      for (double& x : ref.tensor->data()) x += 0.3 * jitter.normal();
    Batch b{random_matrix(d, 6, 700 + c), Matrix(), 3};
    if (classify) b.targets = std::vector<std::size_t>{0, 2, 1, 1, 0, 2};
    else b.targets = random_matrix(d, 6, 800 + c);
    // fourth-order central differences, h = 1e-4
    const double err = test::max_fd_relative_error(m, b, true, 1100 + c, 1e-4, 1e-4, true);
    worst = std::max(worst, err);
    v.require(err < 1e-5, "case " + std::to_string(c) + " relative error " + fmt(err));
  }
  const double secs = seconds_since(start);
  v.require(secs < 120.0, "runtime " + fmt(secs) + " s");
  v.note("25 cases, worst relative error " + fmt(worst) + ", " + fmt(secs) + " s");
  return v;
}

// ---- shared training fixture for 6, 7, 10 ----------------------------------

constexpr std::size_t kDim = 12;

ToyModel fixture_model(bool with_adapters, bool mica, double dropout = 0.05) {
  SplitMix64 gen(31);
  ToyModel m;
  m.blocks.emplace_back(make_dense(kDim, kDim, gen));
  m.blocks.emplace_back(make_attention(kDim, 6, gen, true, true));
  if (with_adapters) {
    AdapterConfig cfg;
    cfg.rank = 3;
    cfg.dropout_p = dropout;
    cfg.method = mica ? AdapterMethod{MicaMethod{SubspaceMode::minor()}} : AdapterMethod{LoraGaussian{std::nullopt, 5}};
    attach_adapters(m, cfg, {"fc", "q_proj", "v_proj"});
  }
  return m;
}

std::vector<Batch> fixture_batches(double target_scale = 1.0) {
  const Matrix x = random_matrix(kDim, 40, 32);
  const Matrix y = random_matrix(kDim, 40, 33, target_scale);
  std::vector<Batch> batches = make_batches(x, y, 8);
  for (Batch& b : batches) b.seq_len = 4;
  return batches;
}

// ---- 6 ------------------------------------------------------------------

Verdict frozen_conservation() {
  Verdict v;
  const auto batches = fixture_batches();
  TrainConfig cfg = TrainConfig::history();
  cfg.base_lr = 1e-2;
  cfg.epochs = 500 / batches.size();
  for (const bool mica : {true, false}) {
    const std::string label = mica ? "mica" : "lora";
    ToyModel m = fixture_model(true, mica);
    const auto frozen_before = frozen_hash(m);
    std::uint64_t b_hash = 0;
    for (const auto& [name, a] : adapters_of(std::as_const(m))) b_hash ^= content_hash(a->b) + std::hash<std::string>{}(name);
    const TrainReport rep = train_loop(m, batches, cfg);
    v.require(rep.steps.size() == 500, label + " ran " + std::to_string(rep.steps.size()) + " steps");
    v.require(frozen_hash(m) == frozen_before && rep.frozen_hash_after == rep.frozen_hash_before,
              label + ": frozen tensors changed");
    std::uint64_t b_after = 0;
    for (const auto& [name, a] : adapters_of(std::as_const(m))) b_after ^= content_hash(a->b) + std::hash<std::string>{}(name);
    if (mica) v.require(b_after == b_hash, "mica: B changed");
    for (const auto& name : rep.gradient_names) {
      const bool is_factor = name.ends_with(".A") || (!mica && name.ends_with(".B"));
      v.require(is_factor, label + ": gradient for frozen tensor " + name);
    }

    ToyModel again = fixture_model(true, mica);
    train_loop(again, batches, cfg);
    v.require(encode_checkpoint(adapter_checkpoint(m, "a")) == encode_checkpoint(adapter_checkpoint(again, "a")),
              label + ": repeat run checkpoint bytes differ");
  }
  v.note("500 steps each for mica and lora, repeat runs bitwise identical");
  return v;
}

// ---- 7 ------------------------------------------------------------------

Verdict merge_and_confinement() {
  Verdict v;
  const auto batches = fixture_batches();
  TrainConfig cfg = TrainConfig::history();
  cfg.base_lr = 1e-2;
  cfg.epochs = 20;
  double worst_off = 0.0, worst_merge = 0.0;
  std::size_t max_rank = 0;
  for (const bool mica : {true, false}) {
    ToyModel m = fixture_model(true, mica);
    const auto check = [&](std::size_t, const ToyModel& cur) {
      for (const auto& [name, a] : adapters_of(cur)) {
        const Matrix delta = effective_delta(*a);
        const double norm = delta.frobenius_norm();
        if (norm == 0.0) continue;
        if (mica) worst_off = std::max(worst_off, project_off_span(delta, a->b).frobenius_norm() / norm);
        max_rank = std::max(max_rank, numerical_rank(delta, 1e-10));
      }
    };
    train_loop(m, batches, cfg, check);

    ToyModel plain = fixture_model(false, mica);
    std::map<std::string, Adapter> adapters;
    for (const auto& [name, a] : adapters_of(std::as_const(m))) adapters.emplace(name + ".weight", *a);
    load_tensors(plain, merge_adapters_into(model_checkpoint(plain, "base"), adapters));
    const Matrix x = random_matrix(kDim, 16, 34);
    worst_merge = std::max(worst_merge, max_abs_diff(predict(plain, x, 4), predict(m, x, 4)));
  }
  v.require(worst_merge < 1e-10, "merged forward differs by " + fmt(worst_merge));
  v.require(worst_off < 1e-9, "off-span fraction " + fmt(worst_off));
  v.require(max_rank <= 3, "numerical rank " + std::to_string(max_rank) + " > r");
  v.note("merge gap " + fmt(worst_merge) + ", off-span " + fmt(worst_off) + ", max rank " + std::to_string(max_rank));
  return v;
}

// ---- 8 ------------------------------------------------------------------

// base ⊙ (1 + u), |u| < 0.5: same sign, within a factor two per entry.
ModelCheckpoint nearby(const ModelCheckpoint& base, std::uint64_t seed) {
  ModelCheckpoint out = base;
  SplitMix64 gen(seed);
  for (auto& [n, t] : out.tensors)
    for (double& x : t.data()) x *= 1.0 + 0.49 * (2.0 * gen.uniform() - 1.0);
  return out;
}

Verdict composition() {
  Verdict v;
  std::size_t inexact_unrelated = 0, unrelated_entries = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    SplitMix64 gen(60 + s);
    ToyModel model;
    model.blocks.emplace_back(make_dense(kDim, kDim, gen));
    model.blocks.emplace_back(make_attention(kDim, 6, gen));
    const ModelCheckpoint base = model_checkpoint(model, "base");
    const ModelCheckpoint instr = nearby(base, 2 * s);
    const ModelCheckpoint base_ft = nearby(base, 2 * s + 1);
    v.require(compose(base, delta(instr, base)).tensors == instr.tensors, "round trip not bitwise, seed " + std::to_string(s));
    v.require(compose(base_ft, delta(base, base)).tensors == base_ft.tensors, "instr == base identity, seed " + std::to_string(s));

    // unrelated pairs: informational, rounding can move the last bit
    ModelCheckpoint other = base;
    for (auto& [n, t] : other.tensors) t = random_matrix(t.rows(), t.cols(), 3000 + s);
    const ModelCheckpoint back = compose(base, delta(other, base));
    for (const auto& [n, t] : other.tensors) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        ++unrelated_entries;
        if (back.at(n).data()[i] != t.data()[i]) ++inexact_unrelated;
      }
    }
  }

  ModelCheckpoint a;
  a.tensors.emplace("w", Matrix(2, 2, 1.0));
  ModelCheckpoint reshaped;
  reshaped.tensors.emplace("w", Matrix(2, 3, 1.0));
  ModelCheckpoint renamed;
  renamed.tensors.emplace("v", Matrix(2, 2, 1.0));
  for (const ModelCheckpoint* bad : {&reshaped, &renamed}) {
    bool rejected = false;
    try {
      compose(a, delta(*bad, a));
    } catch (const ContractViolation&) {
      rejected = true;
    }
    v.require(rejected, "non-conformal input accepted");
  }
  v.note("50 checkpoint triples bitwise; unrelated pairs off by rounding in " + std::to_string(inexact_unrelated) + "/" +
         std::to_string(unrelated_entries) + " entries");
  return v;
}

// ---- 9 ------------------------------------------------------------------

Verdict ablation() {
  Verdict v;
  const auto start = Clock::now();
  const AblateRunConfig cfg = AblateRunConfig::defaults();
  const Scenario scenario = make_scenario(cfg.scenario.resolve());
  const auto variants = cfg.expanded_variants();
  const double c2 = scenario.spec.c * scenario.spec.c;
  for (std::size_t r : cfg.ranks) {
    const AblationReport rep = run_ablation(scenario, variants, r, cfg.train.config, cfg.options);
    const std::string at = "r=" + std::to_string(r) + ": ";
    v.require(rep.all_ok(), at + "a variant failed");
    if (!rep.all_ok()) continue;
    const VariantRecord& minor = *rep.find(Variant::Kind::MicaMinor);
    const VariantRecord& major = *rep.find(Variant::Kind::Major);
    const double no_ft = rep.no_ft_new_task_loss;
    v.require(minor.final_new_task_loss < 1e-6 * c2, at + "minor loss " + fmt(minor.final_new_task_loss));
    v.require(major.final_new_task_loss >= 0.9 * no_ft, at + "major loss " + fmt(major.final_new_task_loss));
    v.require(*minor.oracle_new_task_loss < 1e-6 * c2, at + "minor oracle " + fmt(*minor.oracle_new_task_loss));
    v.require(*major.oracle_new_task_loss >= 0.9 * no_ft, at + "major oracle " + fmt(*major.oracle_new_task_loss));
    const double random_mean = rep.random->mean;
    v.require(minor.final_new_task_loss < random_mean && random_mean < major.final_new_task_loss,
              at + "random mean " + fmt(random_mean) + " not strictly between minor " + fmt(minor.final_new_task_loss) +
                  " and major " + fmt(major.final_new_task_loss) + " (major - random = " +
                  fmt(major.final_new_task_loss - random_mean) + ")");
    if (r + cfg.options.probe_rank <= std::min(scenario.spec.d_out, scenario.spec.d_in)) {
      v.require(minor.projected_base_drift < 1e-9, at + "minor drift " + fmt(minor.projected_base_drift));
    }
    v.note(at + "minor " + fmt(minor.final_new_task_loss) + ", random " + fmt(random_mean) + ", major " +
           fmt(major.final_new_task_loss) + ", no-ft " + fmt(no_ft));
  }
  const double secs = seconds_since(start);
  v.require(secs < 120.0, "runtime " + fmt(secs) + " s");
  v.note(fmt(secs) + " s");
  return v;
}

// ---- 10 -----------------------------------------------------------------

Verdict schedule_and_clipping() {
  Verdict v;
  const auto batches = fixture_batches(20.0);  // large targets so clipping engages
  std::size_t clipped = 0, steps = 0;
  for (const std::string profile : {"blogs", "history"}) {
    TrainConfig cfg = TrainConfig::profile(profile);
    cfg.epochs = 12;
    ToyModel m = fixture_model(true, profile == "blogs");
    const TrainReport rep = train_loop(m, batches, cfg);
    const std::size_t total = rep.total_steps;
    const auto warmup = static_cast<std::size_t>(std::llround(cfg.warmup_ratio * static_cast<double>(total)));
    for (const StepRecord& s : rep.steps) {
      double want;
      if (s.step < warmup) {
        want = cfg.base_lr * static_cast<double>(s.step) / static_cast<double>(warmup);
      } else {
        const double progress = static_cast<double>(s.step - warmup) / static_cast<double>(total - warmup);
        want = cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      }
      v.require(s.lr == want, profile + " step " + std::to_string(s.step) + " lr " + fmt(s.lr) + " != " + fmt(want));
      v.require(s.grad_norm_postclip <= cfg.max_grad_norm + 1e-12,
                profile + " step " + std::to_string(s.step) + " post-clip norm " + fmt(s.grad_norm_postclip));
      clipped += s.grad_norm_preclip > cfg.max_grad_norm;
      ++steps;
    }
  }
  v.note(std::to_string(steps) + " steps over both profiles, " + std::to_string(clipped) + " clipped");
  return v;
}

}  // namespace
}  // namespace mica

int main(int argc, char** argv) {
  using namespace mica;
  std::set<int> known;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--known-deviation" && i + 1 < argc) {
      known.insert(std::atoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: acceptance [--known-deviation N]...\n");
      return 2;
    }
  }
  struct Criterion {
    const char* name;
    std::function<Verdict()> run;
  };
  const Criterion criteria[] = {
      {"parameter counts", param_counts},
      {"halving identity", halving},
      {"svd suite", svd_suite},
      {"initialization contracts", init_contracts},
      {"gradient correctness", gradients},
      {"frozen-tensor conservation", frozen_conservation},
      {"merge and confinement", merge_and_confinement},
      {"composition identities", composition},
      {"ablation mechanism", ablation},
      {"schedule and clipping", schedule_and_clipping},
  };
  int unexpected = 0;
  int index = 0;
  for (const Criterion& c : criteria) {
    ++index;
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    unexpected += !v.pass && !known.contains(index);
    std::printf("%s %2d %s: %s\n", v.pass ? "PASS" : "FAIL", index, c.name, v.detail.c_str());
    if (!v.pass && known.contains(index)) std::printf("     %2d listed as a known deviation\n", index);
    if (v.pass && known.contains(index)) std::printf("     %2d listed as a known deviation but passed\n", index);
    std::fflush(stdout);
  }
  return unexpected == 0 ? 0 : 1;
}
