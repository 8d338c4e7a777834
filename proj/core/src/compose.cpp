#include "mica/compose.hpp"

#include "mica/error.hpp"

namespace mica {

namespace {

std::string shape_of(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

}  // namespace

const Matrix& ModelCheckpoint::at(const std::string& tensor) const {
  const auto it = tensors.find(tensor);
  if (it == tensors.end()) throw ContractViolation("checkpoint '" + name + "' has no tensor '" + tensor + "'");
  return it->second;
}

bool conformal(const ModelCheckpoint& a, const ModelCheckpoint& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  auto ia = a.tensors.begin();
  auto ib = b.tensors.begin();
  for (; ia != a.tensors.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    if (ia->second.rows() != ib->second.rows() || ia->second.cols() != ib->second.cols()) return false;
  }
  return true;
}

void require_conformal(const ModelCheckpoint& a, const ModelCheckpoint& b, const char* op) {
  for (const auto& [name, tensor] : a.tensors) {
    const auto it = b.tensors.find(name);
    if (it == b.tensors.end()) {
      throw ContractViolation(std::string(op) + ": tensor '" + name + "' missing from '" + b.name + "'");
    }
    if (it->second.rows() != tensor.rows() || it->second.cols() != tensor.cols()) {
      throw ContractViolation(std::string(op) + ": tensor '" + name + "' is " + shape_of(tensor) + " in '" + a.name +
                              "' but " + shape_of(it->second) + " in '" + b.name + "'");
    }
  }
  for (const auto& [name, tensor] : b.tensors) {
    if (!a.tensors.contains(name)) {
      throw ContractViolation(std::string(op) + ": tensor '" + name + "' missing from '" + a.name + "'");
    }
  }
}

ModelCheckpoint delta(const ModelCheckpoint& instr, const ModelCheckpoint& base) {
  require_conformal(instr, base, "delta");
  ModelCheckpoint out;
  out.name = instr.name + "-minus-" + base.name;
  out.metadata = {{"kind", "delta"}, {"minuend", instr.name}, {"subtrahend", base.name}};
  for (const auto& [name, tensor] : instr.tensors) out.tensors.emplace(name, tensor - base.tensors.at(name));
  return out;
}

ModelCheckpoint compose(const ModelCheckpoint& base_ft, const ModelCheckpoint& d) {
  require_conformal(base_ft, d, "compose");
  ModelCheckpoint out;
  out.name = base_ft.name + "-plus-" + d.name;
  out.metadata = base_ft.metadata;
  out.metadata["composed_with"] = d.name;
  for (const auto& [name, tensor] : base_ft.tensors) out.tensors.emplace(name, tensor + d.tensors.at(name));
  return out;
}

ModelCheckpoint merge_adapters_into(const ModelCheckpoint& checkpoint,
                                    const std::map<std::string, Adapter>& adapters) {
  ModelCheckpoint out = checkpoint;
  for (const auto& [target, adapter] : adapters) {
    const auto it = out.tensors.find(target);
    if (it == out.tensors.end()) {
      throw ContractViolation("merge_adapters_into: unknown target '" + target + "' in checkpoint '" +
                              checkpoint.name + "'");
    }
    it->second = merge(adapter, it->second);
  }
  return out;
}

}  // namespace mica
