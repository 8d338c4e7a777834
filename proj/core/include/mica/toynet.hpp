#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "mica/adapter.hpp"
#include "mica/densela.hpp"
#include "mica/rng.hpp"

namespace mica {

// Gradients keyed by tensor name ("<layer>.<target>.A", "<layer>.<target>.B").
using GradSet = std::map<std::string, Matrix>;

// Frozen affine map W x + bias with an optional adapter on W.
struct AdaptedLinear {
  Matrix w;     // d_out x d_in
  Matrix bias;  // d_out x 1
  std::optional<Adapter> adapter;

  std::size_t d_in() const noexcept { return w.cols(); }
  std::size_t d_out() const noexcept { return w.rows(); }
};

// Linear layer followed by tanh (or identity when activate is false).
struct DenseBlock {
  AdaptedLinear fc;
  bool activate = true;
};

// Single-head scaled dot-product attention over the columns of a sequence.
struct AttentionBlock {
  AdaptedLinear q_proj;  // head_dim x d_model
  AdaptedLinear k_proj;  // head_dim x d_model
  AdaptedLinear v_proj;  // head_dim x d_model
  AdaptedLinear o_proj;  // d_model x head_dim
  bool causal = true;
  bool residual = false;

  std::size_t head_dim() const noexcept { return q_proj.d_out(); }
  std::size_t d_model() const noexcept { return q_proj.d_in(); }
};

using Block = std::variant<DenseBlock, AttentionBlock>;

struct ToyModel {
  std::vector<Block> blocks;
  std::optional<AdaptedLinear> head;  // never adapted

  std::size_t d_in() const;
  std::size_t d_out() const;
};

struct Batch {
  Matrix inputs;  // d_in x n
  std::variant<std::vector<std::size_t>, Matrix> targets;  // class ids or d_out x n
  // Columns are split into consecutive sequences of this length for attention
  // blocks; 0 treats the whole batch as one sequence.
  std::size_t seq_len = 0;

  std::size_t size() const noexcept { return inputs.cols(); }
  bool is_classification() const noexcept { return std::holds_alternative<std::vector<std::size_t>>(targets); }
};

// Name of the tensor for a layer target, e.g. "0.q_proj".
std::vector<std::string> linear_names(const ToyModel& model);

struct ParamRef {
  std::string name;
  Matrix* tensor;
};

struct ConstParamRef {
  std::string name;
  const Matrix* tensor;
};

// Tensors the optimizer may update: adapter A always, adapter B for LoRA.
std::vector<ParamRef> trainable_params(ToyModel& model);
std::vector<ConstParamRef> trainable_params(const ToyModel& model);
// Everything else: weights, biases, frozen projections.
std::vector<ConstParamRef> frozen_tensors(const ToyModel& model);
std::vector<ConstParamRef> all_tensors(const ToyModel& model);
std::vector<ParamRef> all_tensors(ToyModel& model);

std::uint64_t frozen_hash(const ToyModel& model);
std::uint64_t trainable_hash(const ToyModel& model);

// Cached activations of one AdaptedLinear call.
struct LinearCache {
  Matrix x;
  Matrix mask;        // empty when the adapter branch saw x unchanged
  Matrix branch_in;   // x̃
  Matrix coeff;       // A x̃
};

struct AttentionCache {
  LinearCache q, k, v, o;
  Matrix queries, keys, values;  // head_dim x n
  std::vector<Matrix> probs;     // per sequence, L x L, row i = query position i
};

struct DenseCache {
  LinearCache fc;
  Matrix out;  // post-activation
};

using BlockCache = std::variant<DenseCache, AttentionCache>;

struct ModelCache {
  std::vector<BlockCache> blocks;
  std::optional<LinearCache> head;
  Matrix output;
  std::variant<std::vector<std::size_t>, Matrix> targets;
  std::size_t seq_len = 0;
  std::uint64_t fingerprint = 0;
};

struct ForwardResult {
  double loss = 0.0;
  ModelCache cache;
};

// Softmax cross-entropy (mean over the batch) for class targets, mean squared
// error over all output entries for regression targets.
ForwardResult forward(const ToyModel& model, const Batch& batch, bool training, std::uint64_t seed);

// Eval-mode outputs.
Matrix predict(const ToyModel& model, const Matrix& inputs, std::size_t seq_len = 0);

// Gradients for trainable tensors only. Throws ContractViolation if the
// trainable tensors changed since the forward pass that produced `cache`.
GradSet backward(const ToyModel& model, const ModelCache& cache);

Matrix linear_forward(const AdaptedLinear& layer, const Matrix& x, bool training, std::uint64_t seed,
                      LinearCache* cache);

Matrix attention_forward(const AttentionBlock& block, const Matrix& x, std::size_t seq_len, bool training,
                         std::uint64_t seed, AttentionCache* cache = nullptr);

// --- construction helpers ---------------------------------------------------

// Weights ~ N(0, scale²/d_in), biases ~ N(0, bias_scale²).
AdaptedLinear make_linear(std::size_t d_in, std::size_t d_out, SplitMix64& gen, double scale = 1.0,
                          double bias_scale = 0.0);
DenseBlock make_dense(std::size_t d_in, std::size_t d_out, SplitMix64& gen, bool activate = true,
                      double bias_scale = 0.1);
AttentionBlock make_attention(std::size_t d_model, std::size_t head_dim, SplitMix64& gen, bool causal = true,
                              bool residual = false);

// Initializes adapters on every linear whose target name is in `targets`
// ("fc", "q_proj", "k_proj", "v_proj", "o_proj"). Seeds of random modes and
// LoRA draws are derived per layer from the configured seed.
void attach_adapters(ToyModel& model, const AdapterConfig& config,
                     const std::set<std::string>& targets = {"q_proj", "v_proj"});

// Adapters keyed by "<layer>.<target>".
std::map<std::string, const Adapter*> adapters_of(const ToyModel& model);
std::map<std::string, Adapter*> adapters_of(ToyModel& model);

}  // namespace mica
