#include "mica/model_io.hpp"

#include "mica/error.hpp"

namespace mica {

nlohmann::json to_json(const AdapterConfig& config) {
  nlohmann::json j = {{"rank", config.rank},
                      {"alpha", config.alpha},
                      {"dropout", config.dropout_p},
                      {"method", method_name(config.method)}};
  if (const auto* mica = std::get_if<MicaMethod>(&config.method)) {
    j["mode"] = to_string(mica->mode.kind);
    if (mica->mode.kind == SubspaceMode::Kind::Random) j["mode_seed"] = mica->mode.seed;
  } else {
    const auto& lora = std::get<LoraGaussian>(config.method);
    j["lora_seed"] = lora.seed;
    j["lora_sigma"] = lora.sigma ? nlohmann::json(*lora.sigma) : nlohmann::json(nullptr);
  }
  return j;
}

ModelCheckpoint model_checkpoint(const ToyModel& model, const std::string& name) {
  ModelCheckpoint ckpt;
  ckpt.name = name;
  for (const auto& ref : all_tensors(model)) ckpt.tensors.emplace(ref.name, *ref.tensor);
  ckpt.metadata = {{"kind", "model"}};
  return ckpt;
}

ModelCheckpoint adapter_checkpoint(const ToyModel& model, const std::string& name) {
  ModelCheckpoint ckpt;
  ckpt.name = name;
  nlohmann::json configs = nlohmann::json::object();
  for (const auto& [prefix, adapter] : adapters_of(model)) {
    ckpt.tensors.emplace(prefix + ".A", adapter->a);
    ckpt.tensors.emplace(prefix + ".B", adapter->b);
    configs[prefix] = to_json(adapter->config);
  }
  ckpt.metadata = {{"kind", "adapter"}, {"adapters", configs}};
  return ckpt;
}

void load_tensors(ToyModel& model, const ModelCheckpoint& checkpoint) {
  std::map<std::string, Matrix*> slots;
  for (const auto& ref : all_tensors(model)) slots.emplace(ref.name, ref.tensor);
  for (const auto& [name, tensor] : checkpoint.tensors) {
    const auto it = slots.find(name);
    if (it == slots.end()) throw ContractViolation("load_tensors: model has no tensor '" + name + "'");
    if (it->second->rows() != tensor.rows() || it->second->cols() != tensor.cols()) {
      throw ContractViolation("load_tensors: shape mismatch for '" + name + "'");
    }
    *it->second = tensor;
  }
}

}  // namespace mica
