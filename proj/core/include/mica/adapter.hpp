#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mica/densela.hpp"
#include "mica/subspace.hpp"

namespace mica {

// Frozen SVD-derived projection B, trainable coefficients A.
struct MicaMethod {
  SubspaceMode mode = SubspaceMode::minor();
};

// Classic low-rank adaptation: B = 0, A ~ N(0, σ²); both factors train.
// An unset sigma means 1/√d_in of the host weight.
struct LoraGaussian {
  std::optional<double> sigma;
  std::uint64_t seed = 0;
};

using AdapterMethod = std::variant<MicaMethod, LoraGaussian>;

inline bool is_mica(const AdapterMethod& m) { return std::holds_alternative<MicaMethod>(m); }
std::string method_name(const AdapterMethod& m);

struct AdapterConfig {
  std::size_t rank = 8;
  double alpha = 16.0;
  double dropout_p = 0.05;
  AdapterMethod method = MicaMethod{};
};

struct Adapter {
  Matrix b;  // d_out x r
  Matrix a;  // r x d_in
  AdapterConfig config;
  bool b_trainable = false;
  bool a_trainable = true;

  std::size_t rank() const noexcept { return config.rank; }
  std::size_t d_out() const noexcept { return b.rows(); }
  std::size_t d_in() const noexcept { return a.cols(); }
  double scaling() const noexcept { return config.alpha / static_cast<double>(config.rank); }
};

struct TargetDims {
  std::string name;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
};

struct ModelGeometry {
  std::string name;
  std::size_t num_layers = 1;
  std::vector<TargetDims> targets;
  std::vector<std::string> adapted{"q_proj", "v_proj"};

  static ModelGeometry llama2_7b();
  static ModelGeometry qwen25_7b();
  static std::optional<ModelGeometry> preset(const std::string& name);
  static std::vector<std::string> preset_names();
};

Adapter init_adapter(const Matrix& w, const AdapterConfig& config);

// (alpha / r) · B · A
Matrix effective_delta(const Adapter& adapter);

// W + effective_delta
Matrix merge(const Adapter& adapter, const Matrix& w);

// Inverted dropout mask (entries 0 or 1/(1-p)) drawn row-major from
// SplitMix64(seed).
Matrix dropout_mask(std::size_t rows, std::size_t cols, double p, std::uint64_t seed);

// h = W x + (alpha/r) B (A x̃), x̃ = x in eval mode and the inverted-dropout
// input in training mode. Dropout touches the adapter branch only.
Matrix adapted_forward(const Adapter& adapter, const Matrix& w, const Matrix& x, bool training,
                       std::uint64_t dropout_seed);

// ∂L/∂A = (alpha/r) Bᵀ G Xᵀ for upstream gradient G (d_out x n) and the
// adapter-branch input X actually used.
Matrix grad_coeff(const Adapter& adapter, const Matrix& x_batch, const Matrix& g_batch);

struct LoraGrads {
  Matrix b;
  Matrix a;
};

// Both factor gradients of a LoRA adapter.
LoraGrads grad_lora_pair(const Adapter& adapter, const Matrix& x_batch, const Matrix& g_batch);

// Σ over layers and adapted targets of r·(d_in + d_out) for LoRA and r·d_in
// for MiCA.
std::uint64_t count_trainable(const ModelGeometry& geometry, const AdapterMethod& method, std::size_t r);

}  // namespace mica
