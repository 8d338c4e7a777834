#include "mica/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mica/error.hpp"

namespace mica {

namespace {

std::string layer_prefix(std::size_t index, const char* target) { return std::to_string(index) + "." + target; }

// Calls fn(prefix, layer) for every AdaptedLinear in a fixed order.
template <typename Model, typename Fn>
void for_each_linear(Model& model, Fn&& fn) {
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    auto& block = model.blocks[i];
    if (auto* dense = std::get_if<DenseBlock>(&block)) {
      fn(layer_prefix(i, "fc"), dense->fc);
    } else {
      auto& att = std::get<AttentionBlock>(block);
      fn(layer_prefix(i, "q_proj"), att.q_proj);
      fn(layer_prefix(i, "k_proj"), att.k_proj);
      fn(layer_prefix(i, "v_proj"), att.v_proj);
      fn(layer_prefix(i, "o_proj"), att.o_proj);
    }
  }
  if (model.head) fn(std::string("head"), *model.head);
}

std::string target_of(const std::string& prefix) { return prefix.substr(prefix.find('.') + 1); }

Matrix add_bias(Matrix y, const Matrix& bias) {
  for (std::size_t i = 0; i < y.rows(); ++i) {
    const double b = bias(i, 0);
    if (b == 0.0) continue;
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b;
  }
  return y;
}

// Returns ∂L/∂x and records adapter gradients under `prefix`.
Matrix linear_backward(const AdaptedLinear& layer, const LinearCache& cache, const Matrix& g,
                       const std::string& prefix, GradSet& grads) {
  Matrix dx = matmul_tn(layer.w, g);
  if (!layer.adapter) return dx;
  const Adapter& adapter = *layer.adapter;
  const Matrix& branch_in = cache.mask.empty() ? cache.x : cache.branch_in;
  if (adapter.b_trainable) {
    LoraGrads pair = grad_lora_pair(adapter, branch_in, g);
    grads[prefix + ".A"] = std::move(pair.a);
    grads[prefix + ".B"] = std::move(pair.b);
  } else {
    grads[prefix + ".A"] = grad_coeff(adapter, branch_in, g);
  }
  Matrix d_branch = adapter.scaling() * matmul_tn(adapter.a, matmul_tn(adapter.b, g));
  if (!cache.mask.empty()) d_branch = hadamard(d_branch, cache.mask);
  dx += d_branch;
  return dx;
}

struct SequenceSpan {
  std::size_t begin;
  std::size_t len;
};

std::vector<SequenceSpan> split_sequences(std::size_t n, std::size_t seq_len) {
  const std::size_t len = seq_len == 0 ? n : seq_len;
  if (n % len != 0) {
    throw ContractViolation("batch of " + std::to_string(n) +
                            " columns is not a whole number of sequences of length " + std::to_string(len));
  }
  std::vector<SequenceSpan> spans;
  for (std::size_t b = 0; b < n; b += len) spans.push_back({b, len});
  return spans;
}

Matrix attention_backward(const AttentionBlock& block, const AttentionCache& cache, const Matrix& g,
                          std::size_t seq_len, const std::string& prefix, GradSet& grads) {
  const std::size_t h = block.head_dim();
  const std::size_t n = cache.queries.cols();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(h));

  const Matrix d_mixed = linear_backward(block.o_proj, cache.o, g, prefix + ".o_proj", grads);
  Matrix dq(h, n), dk(h, n), dv(h, n);
  const auto spans = split_sequences(n, seq_len);
  for (std::size_t s = 0; s < spans.size(); ++s) {
    const auto [begin, len] = spans[s];
    const Matrix& p = cache.probs[s];
    // dP(i, j) = dO_i · V_j
    Matrix dp(len, len);
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t j = 0; j < len; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < h; ++c) acc += d_mixed(c, begin + i) * cache.values(c, begin + j);
        dp(i, j) = acc;
      }
    }
    for (std::size_t i = 0; i < len; ++i) {
      double row_dot = 0.0;
      for (std::size_t j = 0; j < len; ++j) row_dot += p(i, j) * dp(i, j);
      for (std::size_t j = 0; j < len; ++j) {
        const double pij = p(i, j);
        if (pij == 0.0) continue;
        const double ds = pij * (dp(i, j) - row_dot) * inv_sqrt;
        for (std::size_t c = 0; c < h; ++c) {
          dq(c, begin + i) += ds * cache.keys(c, begin + j);
          dk(c, begin + j) += ds * cache.queries(c, begin + i);
        }
        for (std::size_t c = 0; c < h; ++c) dv(c, begin + j) += pij * d_mixed(c, begin + i);
      }
    }
  }
  Matrix dx = linear_backward(block.q_proj, cache.q, dq, prefix + ".q_proj", grads);
  dx += linear_backward(block.k_proj, cache.k, dk, prefix + ".k_proj", grads);
  dx += linear_backward(block.v_proj, cache.v, dv, prefix + ".v_proj", grads);
  if (block.residual) dx += g;
  return dx;
}

void softmax_cross_entropy(const Matrix& logits, const std::vector<std::size_t>& labels, double& loss,
                           Matrix* grad) {
  const std::size_t k = logits.rows();
  const std::size_t n = logits.cols();
  if (labels.size() != n) throw ContractViolation("forward: label count does not match batch size");
  loss = 0.0;
  if (grad) *grad = Matrix(k, n);
  for (std::size_t j = 0; j < n; ++j) {
    if (labels[j] >= k) {
      throw ContractViolation("forward: class index " + std::to_string(labels[j]) + " >= " + std::to_string(k));
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += std::exp(logits(i, j) - mx);
    const double log_z = mx + std::log(z);
    loss += log_z - logits(labels[j], j);
    if (grad) {
      for (std::size_t i = 0; i < k; ++i) {
        (*grad)(i, j) = (std::exp(logits(i, j) - log_z) - (i == labels[j] ? 1.0 : 0.0)) / static_cast<double>(n);
      }
    }
  }
  loss /= static_cast<double>(n);
}

double mean_squared_error(const Matrix& out, const Matrix& target, Matrix* grad) {
  if (out.rows() != target.rows() || out.cols() != target.cols()) {
    throw ContractViolation("forward: regression target shape does not match model output");
  }
  const double denom = static_cast<double>(out.size());
  double loss = 0.0;
  if (grad) *grad = Matrix(out.rows(), out.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = out.data()[i] - target.data()[i];
    loss += d * d;
    if (grad) grad->data()[i] = 2.0 * d / denom;
  }
  return loss / denom;
}

// "layer 1.fc", or "layer 1.q_proj" when an attention projection failed.
std::string layer_label(std::size_t i, const Block& block, const std::string& what) {
  if (std::holds_alternative<DenseBlock>(block)) return "layer " + std::to_string(i) + ".fc: " + what;
  for (const char* name : {"q_proj", "k_proj", "v_proj", "o_proj"}) {
    if (what.starts_with(std::string(name) + ": ")) return "layer " + std::to_string(i) + "." + what;
  }
  return "layer " + std::to_string(i) + ".attention: " + what;
}

Matrix run_blocks(const ToyModel& model, const Matrix& inputs, std::size_t seq_len, bool training, std::uint64_t seed,
                  ModelCache* cache) {
  Matrix x = inputs;
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const Block& block = model.blocks[i];
    const std::uint64_t block_seed = derive_seed(seed, i);
    try {
      if (const auto* dense = std::get_if<DenseBlock>(&block)) {
        DenseCache dc;
        Matrix y = linear_forward(dense->fc, x, training, derive_seed(block_seed, "fc"), cache ? &dc.fc : nullptr);
        if (dense->activate) {
          for (double& v : y.data()) v = std::tanh(v);
        }
        if (cache) {
          dc.out = y;
          cache->blocks.emplace_back(std::move(dc));
        }
        x = std::move(y);
      } else {
        const auto& att = std::get<AttentionBlock>(block);
        AttentionCache ac;
        x = attention_forward(att, x, seq_len, training, block_seed, cache ? &ac : nullptr);
        if (cache) cache->blocks.emplace_back(std::move(ac));
      }
    } catch (const NumericalError& e) {
      throw NumericalError("forward: " + layer_label(i, block, e.what()));
    }
    if (!all_finite(x)) throw NumericalError("forward: " + layer_label(i, block, "non-finite activation"));
  }
  if (model.head) {
    LinearCache hc;
    try {
      x = linear_forward(*model.head, x, training, derive_seed(seed, "head"), cache ? &hc : nullptr);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("forward: head: ") + e.what());
    }
    if (cache) cache->head = std::move(hc);
  }
  return x;
}

}  // namespace

std::size_t ToyModel::d_in() const {
  if (blocks.empty()) return head ? head->d_in() : 0;
  const Block& first = blocks.front();
  if (const auto* dense = std::get_if<DenseBlock>(&first)) return dense->fc.d_in();
  return std::get<AttentionBlock>(first).d_model();
}

std::size_t ToyModel::d_out() const {
  if (head) return head->d_out();
  if (blocks.empty()) return 0;
  const Block& last = blocks.back();
  if (const auto* dense = std::get_if<DenseBlock>(&last)) return dense->fc.d_out();
  return std::get<AttentionBlock>(last).o_proj.d_out();
}

std::vector<std::string> linear_names(const ToyModel& model) {
  std::vector<std::string> names;
  for_each_linear(model, [&](const std::string& prefix, const AdaptedLinear&) { names.push_back(prefix); });
  return names;
}

std::vector<ParamRef> trainable_params(ToyModel& model) {
  std::vector<ParamRef> out;
  for_each_linear(model, [&](const std::string& prefix, AdaptedLinear& layer) {
    if (!layer.adapter) return;
    if (layer.adapter->a_trainable) out.push_back({prefix + ".A", &layer.adapter->a});
    if (layer.adapter->b_trainable) out.push_back({prefix + ".B", &layer.adapter->b});
  });
  return out;
}

std::vector<ConstParamRef> trainable_params(const ToyModel& model) {
  std::vector<ConstParamRef> out;
  for_each_linear(model, [&](const std::string& prefix, const AdaptedLinear& layer) {
    if (!layer.adapter) return;
    if (layer.adapter->a_trainable) out.push_back({prefix + ".A", &layer.adapter->a});
    if (layer.adapter->b_trainable) out.push_back({prefix + ".B", &layer.adapter->b});
  });
  return out;
}

std::vector<ConstParamRef> frozen_tensors(const ToyModel& model) {
  std::vector<ConstParamRef> out;
  for_each_linear(model, [&](const std::string& prefix, const AdaptedLinear& layer) {
    out.push_back({prefix + ".weight", &layer.w});
    out.push_back({prefix + ".bias", &layer.bias});
    if (layer.adapter && !layer.adapter->a_trainable) out.push_back({prefix + ".A", &layer.adapter->a});
    if (layer.adapter && !layer.adapter->b_trainable) out.push_back({prefix + ".B", &layer.adapter->b});
  });
  return out;
}

std::vector<ConstParamRef> all_tensors(const ToyModel& model) {
  std::vector<ConstParamRef> out;
  for_each_linear(model, [&](const std::string& prefix, const AdaptedLinear& layer) {
    out.push_back({prefix + ".weight", &layer.w});
    out.push_back({prefix + ".bias", &layer.bias});
    if (layer.adapter) {
      out.push_back({prefix + ".A", &layer.adapter->a});
      out.push_back({prefix + ".B", &layer.adapter->b});
    }
  });
  return out;
}

std::vector<ParamRef> all_tensors(ToyModel& model) {
  std::vector<ParamRef> out;
  for_each_linear(model, [&](const std::string& prefix, AdaptedLinear& layer) {
    out.push_back({prefix + ".weight", &layer.w});
    out.push_back({prefix + ".bias", &layer.bias});
    if (layer.adapter) {
      out.push_back({prefix + ".A", &layer.adapter->a});
      out.push_back({prefix + ".B", &layer.adapter->b});
    }
  });
  return out;
}

namespace {

std::uint64_t hash_refs(const std::vector<ConstParamRef>& refs) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& ref : refs) {
    h ^= content_hash(*ref.tensor) + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    for (unsigned char c : ref.name) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

}  // namespace

std::uint64_t frozen_hash(const ToyModel& model) { return hash_refs(frozen_tensors(model)); }
std::uint64_t trainable_hash(const ToyModel& model) { return hash_refs(trainable_params(model)); }

Matrix linear_forward(const AdaptedLinear& layer, const Matrix& x, bool training, std::uint64_t seed,
                      LinearCache* cache) {
  if (x.rows() != layer.d_in()) {
    throw ContractViolation("linear_forward: input has " + std::to_string(x.rows()) + " rows, layer expects " +
                            std::to_string(layer.d_in()));
  }
  Matrix y = add_bias(matmul(layer.w, x), layer.bias);
  if (cache) cache->x = x;
  if (layer.adapter) {
    const Adapter& adapter = *layer.adapter;
    const double p = adapter.config.dropout_p;
    Matrix mask;
    if (training && p > 0.0) mask = dropout_mask(x.rows(), x.cols(), p, seed);
    Matrix dropped;
    if (!mask.empty()) dropped = hadamard(x, mask);
    Matrix coeff = matmul(adapter.a, mask.empty() ? x : dropped);
    y += adapter.scaling() * matmul(adapter.b, coeff);
    if (cache) {
      cache->mask = std::move(mask);
      cache->branch_in = std::move(dropped);
      cache->coeff = std::move(coeff);
    }
  }
  return y;
}

Matrix attention_forward(const AttentionBlock& block, const Matrix& x, std::size_t seq_len, bool training,
                         std::uint64_t seed, AttentionCache* cache) {
  const std::size_t h = block.head_dim();
  const std::size_t n = x.cols();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(h));

  LinearCache* qc = cache ? &cache->q : nullptr;
  LinearCache* kc = cache ? &cache->k : nullptr;
  LinearCache* vc = cache ? &cache->v : nullptr;
  // Failures name the projection so forward() can report "<block>.<target>".
  const auto project = [&](const char* name, const AdaptedLinear& layer, const Matrix& in, LinearCache* lc) {
    try {
      return linear_forward(layer, in, training, derive_seed(seed, name), lc);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(name) + ": " + e.what());
    }
  };
  const Matrix q = project("q_proj", block.q_proj, x, qc);
  const Matrix k = project("k_proj", block.k_proj, x, kc);
  const Matrix v = project("v_proj", block.v_proj, x, vc);

  Matrix mixed(h, n);
  const auto spans = split_sequences(n, seq_len);
  for (const auto& [begin, len] : spans) {
    Matrix p(len, len);
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t visible = block.causal ? i + 1 : len;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < visible; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < h; ++c) acc += q(c, begin + i) * k(c, begin + j);
        p(i, j) = acc * inv_sqrt;
        mx = std::max(mx, p(i, j));
      }
      double z = 0.0;
      for (std::size_t j = 0; j < visible; ++j) {
        p(i, j) = std::exp(p(i, j) - mx);
        z += p(i, j);
      }
      for (std::size_t j = 0; j < visible; ++j) p(i, j) /= z;
      for (std::size_t j = 0; j < visible; ++j) {
        const double pij = p(i, j);
        for (std::size_t c = 0; c < h; ++c) mixed(c, begin + i) += pij * v(c, begin + j);
      }
    }
    if (cache) cache->probs.push_back(std::move(p));
  }

  Matrix y = project("o_proj", block.o_proj, mixed, cache ? &cache->o : nullptr);
  if (block.residual) {
    if (y.rows() != x.rows()) throw ContractViolation("attention_forward: residual needs matching widths");
    y += x;
  }
  if (cache) {
    cache->queries = q;
    cache->keys = k;
    cache->values = v;
  }
  return y;
}

ForwardResult forward(const ToyModel& model, const Batch& batch, bool training, std::uint64_t seed) {
  if (batch.size() == 0) throw ContractViolation("forward: empty batch");
  ForwardResult result;
  ModelCache& cache = result.cache;
  cache.fingerprint = trainable_hash(model);
  cache.seq_len = batch.seq_len;
  cache.targets = batch.targets;
  cache.output = run_blocks(model, batch.inputs, batch.seq_len, training, seed, &cache);
  if (const auto* labels = std::get_if<std::vector<std::size_t>>(&batch.targets)) {
    softmax_cross_entropy(cache.output, *labels, result.loss, nullptr);
  } else {
    result.loss = mean_squared_error(cache.output, std::get<Matrix>(batch.targets), nullptr);
  }
  if (!std::isfinite(result.loss)) throw NumericalError("forward: non-finite loss");
  return result;
}

Matrix predict(const ToyModel& model, const Matrix& inputs, std::size_t seq_len) {
  return run_blocks(model, inputs, seq_len, false, 0, nullptr);
}

GradSet backward(const ToyModel& model, const ModelCache& cache) {
  if (cache.blocks.size() != model.blocks.size() || cache.head.has_value() != model.head.has_value()) {
    throw ContractViolation("backward: cache does not match model structure");
  }
  if (cache.fingerprint != trainable_hash(model)) {
    throw ContractViolation("backward: stale cache (trainable tensors changed since forward)");
  }
  Matrix g;
  if (const auto* labels = std::get_if<std::vector<std::size_t>>(&cache.targets)) {
    double unused = 0.0;
    softmax_cross_entropy(cache.output, *labels, unused, &g);
  } else {
    mean_squared_error(cache.output, std::get<Matrix>(cache.targets), &g);
  }

  GradSet grads;
  if (model.head) g = linear_backward(*model.head, *cache.head, g, "head", grads);
  for (std::size_t i = model.blocks.size(); i-- > 0;) {
    const Block& block = model.blocks[i];
    if (const auto* dense = std::get_if<DenseBlock>(&block)) {
      const auto& dc = std::get<DenseCache>(cache.blocks[i]);
      if (dense->activate) {
        for (std::size_t e = 0; e < g.size(); ++e) {
          const double y = dc.out.data()[e];
          g.data()[e] *= 1.0 - y * y;
        }
      }
      g = linear_backward(dense->fc, dc.fc, g, layer_prefix(i, "fc"), grads);
    } else {
      const auto& att = std::get<AttentionBlock>(block);
      g = attention_backward(att, std::get<AttentionCache>(cache.blocks[i]), g, cache.seq_len,
                             std::to_string(i), grads);
    }
  }
  return grads;
}

AdaptedLinear make_linear(std::size_t d_in, std::size_t d_out, SplitMix64& gen, double scale, double bias_scale) {
  AdaptedLinear layer;
  layer.w = Matrix(d_out, d_in);
  const double std_dev = scale / std::sqrt(static_cast<double>(d_in));
  for (double& v : layer.w.data()) v = std_dev * gen.normal();
  layer.bias = Matrix(d_out, 1);
  if (bias_scale > 0.0) {
    for (double& v : layer.bias.data()) v = bias_scale * gen.normal();
  }
  return layer;
}

DenseBlock make_dense(std::size_t d_in, std::size_t d_out, SplitMix64& gen, bool activate, double bias_scale) {
  return DenseBlock{make_linear(d_in, d_out, gen, 1.0, bias_scale), activate};
}

AttentionBlock make_attention(std::size_t d_model, std::size_t head_dim, SplitMix64& gen, bool causal,
                              bool residual) {
  AttentionBlock block;
  block.q_proj = make_linear(d_model, head_dim, gen);
  block.k_proj = make_linear(d_model, head_dim, gen);
  block.v_proj = make_linear(d_model, head_dim, gen);
  block.o_proj = make_linear(head_dim, d_model, gen);
  block.causal = causal;
  block.residual = residual;
  return block;
}

void attach_adapters(ToyModel& model, const AdapterConfig& config, const std::set<std::string>& targets) {
  for_each_linear(model, [&](const std::string& prefix, AdaptedLinear& layer) {
    if (prefix == "head" || !targets.contains(target_of(prefix))) return;
    AdapterConfig local = config;
    if (auto* mica = std::get_if<MicaMethod>(&local.method)) {
      if (mica->mode.kind == SubspaceMode::Kind::Random) mica->mode.seed = derive_seed(mica->mode.seed, prefix);
    } else {
      auto& lora = std::get<LoraGaussian>(local.method);
      lora.seed = derive_seed(lora.seed, prefix);
    }
    layer.adapter = init_adapter(layer.w, local);
  });
}

std::map<std::string, const Adapter*> adapters_of(const ToyModel& model) {
  std::map<std::string, const Adapter*> out;
  for_each_linear(model, [&](const std::string& prefix, const AdaptedLinear& layer) {
    if (layer.adapter) out.emplace(prefix, &*layer.adapter);
  });
  return out;
}

std::map<std::string, Adapter*> adapters_of(ToyModel& model) {
  std::map<std::string, Adapter*> out;
  for_each_linear(model, [&](const std::string& prefix, AdaptedLinear& layer) {
    if (layer.adapter) out.emplace(prefix, &*layer.adapter);
  });
  return out;
}

}  // namespace mica
