#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "mica/compose.hpp"
#include "mica/toynet.hpp"

namespace mica {

nlohmann::json to_json(const AdapterConfig& config);

// Every tensor of the model: "<layer>.<target>.{weight,bias,A,B}".
ModelCheckpoint model_checkpoint(const ToyModel& model, const std::string& name);

// Adapter factors only ("<layer>.<target>.A" / ".B"); metadata["adapters"]
// holds one config block per adapted target.
ModelCheckpoint adapter_checkpoint(const ToyModel& model, const std::string& name);

// Copies every tensor of `checkpoint` whose name exists in the model.
// Throws ContractViolation on unknown names or shape mismatches.
void load_tensors(ToyModel& model, const ModelCheckpoint& checkpoint);

}  // namespace mica
