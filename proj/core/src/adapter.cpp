#include "mica/adapter.hpp"

#include <algorithm>
#include <cmath>

#include "mica/error.hpp"
#include "mica/rng.hpp"

namespace mica {

namespace {

void require_conformal(const Adapter& adapter, const Matrix& w, const char* op) {
  if (w.rows() != adapter.d_out() || w.cols() != adapter.d_in()) {
    throw ContractViolation(std::string(op) + ": adapter is " + std::to_string(adapter.d_out()) + "x" +
                            std::to_string(adapter.d_in()) + ", weight is " + std::to_string(w.rows()) + "x" +
                            std::to_string(w.cols()));
  }
}

void require_batch(const Adapter& adapter, const Matrix& x, const Matrix& g, const char* op) {
  if (x.rows() != adapter.d_in() || g.rows() != adapter.d_out() || x.cols() != g.cols()) {
    throw ContractViolation(std::string(op) + ": expected X (" + std::to_string(adapter.d_in()) + " x n) and G (" +
                            std::to_string(adapter.d_out()) + " x n), got " + std::to_string(x.rows()) + "x" +
                            std::to_string(x.cols()) + " and " + std::to_string(g.rows()) + "x" +
                            std::to_string(g.cols()));
  }
}

}  // namespace

std::string method_name(const AdapterMethod& m) { return is_mica(m) ? "mica" : "lora"; }

ModelGeometry ModelGeometry::llama2_7b() {
  ModelGeometry g;
  g.name = "llama2-7b";
  g.num_layers = 32;
  g.targets = {{"q_proj", 4096, 4096}, {"k_proj", 4096, 4096}, {"v_proj", 4096, 4096}, {"o_proj", 4096, 4096}};
  return g;
}

// Grouped-query attention: 4 key/value heads of width 128 next to 28 query heads.
ModelGeometry ModelGeometry::qwen25_7b() {
  ModelGeometry g;
  g.name = "qwen2.5-7b";
  g.num_layers = 28;
  g.targets = {{"q_proj", 3584, 3584}, {"k_proj", 3584, 512}, {"v_proj", 3584, 512}, {"o_proj", 3584, 3584}};
  return g;
}

std::optional<ModelGeometry> ModelGeometry::preset(const std::string& name) {
  if (name == "llama2-7b") return llama2_7b();
  if (name == "qwen2.5-7b") return qwen25_7b();
  return std::nullopt;
}

std::vector<std::string> ModelGeometry::preset_names() { return {"llama2-7b", "qwen2.5-7b"}; }

Adapter init_adapter(const Matrix& w, const AdapterConfig& config) {
  const std::size_t d_out = w.rows();
  const std::size_t d_in = w.cols();
  const std::size_t r = config.rank;
  if (r == 0 || r > std::min(d_out, d_in)) {
    throw ContractViolation("init_adapter: rank " + std::to_string(r) + " outside [1, " +
                            std::to_string(std::min(d_out, d_in)) + "]");
  }
  if (!(config.alpha > 0.0)) throw ContractViolation("init_adapter: alpha must be positive");
  if (!(config.dropout_p >= 0.0 && config.dropout_p < 1.0)) {
    throw ContractViolation("init_adapter: dropout_p must lie in [0, 1)");
  }

  Adapter adapter;
  adapter.config = config;
  if (const auto* mica = std::get_if<MicaMethod>(&config.method)) {
    adapter.b = select_projection(full_svd(w), r, mica->mode);
    adapter.a = Matrix(r, d_in, 0.0);
    adapter.b_trainable = false;
    adapter.a_trainable = true;
  } else {
    const auto& lora = std::get<LoraGaussian>(config.method);
    const double sigma = lora.sigma.value_or(1.0 / std::sqrt(static_cast<double>(d_in)));
    if (!(sigma > 0.0)) throw ContractViolation("init_adapter: LoRA sigma must be positive");
    adapter.b = Matrix(d_out, r, 0.0);
    adapter.a = Matrix(r, d_in, 0.0);
    SplitMix64 gen(lora.seed);
    for (double& v : adapter.a.data()) v = sigma * gen.normal();
    adapter.b_trainable = true;
    adapter.a_trainable = true;
  }
  return adapter;
}

Matrix effective_delta(const Adapter& adapter) { return adapter.scaling() * matmul(adapter.b, adapter.a); }

Matrix merge(const Adapter& adapter, const Matrix& w) {
  require_conformal(adapter, w, "merge");
  return w + effective_delta(adapter);
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, double p, std::uint64_t seed) {
  Matrix mask(rows, cols, 0.0);
  const double keep_scale = 1.0 / (1.0 - p);
  SplitMix64 gen(seed);
  for (double& v : mask.data()) v = gen.uniform() >= p ? keep_scale : 0.0;
  return mask;
}

Matrix adapted_forward(const Adapter& adapter, const Matrix& w, const Matrix& x, bool training,
                       std::uint64_t dropout_seed) {
  require_conformal(adapter, w, "adapted_forward");
  Matrix h = matmul(w, x);
  const double p = adapter.config.dropout_p;
  const Matrix branch_in =
      training && p > 0.0 ? hadamard(x, dropout_mask(x.rows(), x.cols(), p, dropout_seed)) : x;
  h += adapter.scaling() * matmul(adapter.b, matmul(adapter.a, branch_in));
  return h;
}

Matrix grad_coeff(const Adapter& adapter, const Matrix& x_batch, const Matrix& g_batch) {
  require_batch(adapter, x_batch, g_batch, "grad_coeff");
  return adapter.scaling() * matmul_nt(matmul_tn(adapter.b, g_batch), x_batch);
}

LoraGrads grad_lora_pair(const Adapter& adapter, const Matrix& x_batch, const Matrix& g_batch) {
  if (is_mica(adapter.config.method)) {
    throw ContractViolation("grad_lora_pair: adapter has a frozen projection (MiCA); use grad_coeff");
  }
  require_batch(adapter, x_batch, g_batch, "grad_lora_pair");
  const double s = adapter.scaling();
  return {s * matmul_nt(g_batch, matmul(adapter.a, x_batch)), s * matmul_nt(matmul_tn(adapter.b, g_batch), x_batch)};
}

std::uint64_t count_trainable(const ModelGeometry& geometry, const AdapterMethod& method, std::size_t r) {
  std::uint64_t per_layer = 0;
  for (const auto& name : geometry.adapted) {
    const auto it = std::find_if(geometry.targets.begin(), geometry.targets.end(),
                                 [&](const TargetDims& t) { return t.name == name; });
    if (it == geometry.targets.end()) {
      throw ContractViolation("count_trainable: geometry '" + geometry.name + "' declares no target '" + name + "'");
    }
    if (r == 0 || r > std::min(it->d_in, it->d_out)) {
      throw ContractViolation("count_trainable: rank " + std::to_string(r) + " invalid for target '" + name + "'");
    }
    per_layer += is_mica(method) ? r * it->d_in : r * (it->d_in + it->d_out);
  }
  return per_layer * geometry.num_layers;
}

}  // namespace mica
