#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "mica/adapter.hpp"
#include "mica/densela.hpp"

namespace mica {

// Named tensors plus free-form metadata (geometry name, dtype, provenance).
struct ModelCheckpoint {
  std::string name;
  std::map<std::string, Matrix> tensors;
  nlohmann::json metadata = nlohmann::json::object();

  const Matrix& at(const std::string& tensor) const;
};

// Identical name sets and per-name shapes.
bool conformal(const ModelCheckpoint& a, const ModelCheckpoint& b);

// Throws ContractViolation naming the first mismatched tensor.
void require_conformal(const ModelCheckpoint& a, const ModelCheckpoint& b, const char* op);

// instr − base, tensor by tensor.
ModelCheckpoint delta(const ModelCheckpoint& instr, const ModelCheckpoint& base);

// base_ft + d, tensor by tensor: θ_final = θ_base^FT + (θ_instr − θ_base).
ModelCheckpoint compose(const ModelCheckpoint& base_ft, const ModelCheckpoint& d);

// Replaces each tensor named by a key of `adapters` with merge(adapter, W).
ModelCheckpoint merge_adapters_into(const ModelCheckpoint& checkpoint, const std::map<std::string, Adapter>& adapters);

}  // namespace mica
