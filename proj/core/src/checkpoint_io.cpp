#include "mica/checkpoint_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <system_error>

#include <unistd.h>

#include "mica/error.hpp"

namespace mica {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::size_t kHeaderBytes = 8 + 4 + 8;

template <typename T>
void append_le(std::vector<unsigned char>& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T read_le(const std::vector<unsigned char>& in, std::size_t offset) {
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  return value;
}

std::size_t element_size(DType dtype) { return dtype == DType::F64 ? 8 : 4; }

const nlohmann::json& field(const nlohmann::json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ContractViolation(std::string("checkpoint manifest: missing field '") + key + "'");
  }
  return obj.at(key);
}

}  // namespace

std::string to_string(DType dtype) { return dtype == DType::F64 ? "f64" : "f32"; }

DType dtype_from_string(const std::string& name) {
  if (name == "f64") return DType::F64;
  if (name == "f32") return DType::F32;
  throw ContractViolation("unknown dtype '" + name + "' (expected f64 or f32)");
}

std::vector<unsigned char> encode_checkpoint(const ModelCheckpoint& checkpoint, DType dtype) {
  const std::size_t esize = element_size(dtype);
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : checkpoint.tensors) {
    const std::uint64_t len = m.size() * esize;
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"byte_offset", offset},
                       {"byte_len", len}});
    offset += len;
  }
  const nlohmann::json manifest = {{"format", std::string(kCheckpointMagic)},
                                   {"name", checkpoint.name},
                                   {"dtype", to_string(dtype)},
                                   {"tensors", tensors},
                                   {"metadata", checkpoint.metadata}};
  const std::string text = manifest.dump();

  std::vector<unsigned char> out;
  out.reserve(kHeaderBytes + text.size() + offset);
  out.insert(out.end(), kCheckpointMagic.begin(), kCheckpointMagic.end());
  append_le<std::uint32_t>(out, kCheckpointVersion);
  append_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, m] : checkpoint.tensors) {
    for (double v : m.data()) {
      if (dtype == DType::F64) {
        append_le<double>(out, v);
      } else {
        append_le<float>(out, static_cast<float>(v));
      }
    }
  }
  return out;
}

ModelCheckpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kHeaderBytes || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
    throw ContractViolation("checkpoint: bad magic (not a MICACKPT file)");
  }
  const auto version = read_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) {
    throw ContractViolation("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto manifest_len = read_le<std::uint64_t>(bytes, 12);
  if (manifest_len > bytes.size() - kHeaderBytes) throw ContractViolation("checkpoint: truncated manifest");
  const std::size_t payload_begin = kHeaderBytes + manifest_len;
  const std::size_t payload_len = bytes.size() - payload_begin;

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + kHeaderBytes, bytes.begin() + static_cast<long>(payload_begin));
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
  }
  if (field(manifest, "format") != kCheckpointMagic) throw ContractViolation("checkpoint: manifest format mismatch");
  const DType dtype = dtype_from_string(field(manifest, "dtype").get<std::string>());
  const std::size_t esize = element_size(dtype);

  ModelCheckpoint ckpt;
  ckpt.name = manifest.value("name", std::string());
  ckpt.metadata = manifest.value("metadata", nlohmann::json::object());

  struct Extent {
    std::uint64_t begin, end;
    std::string name;
  };
  std::vector<Extent> extents;
  for (const auto& entry : field(manifest, "tensors")) {
    const auto name = field(entry, "name").get<std::string>();
    const auto rows = field(entry, "rows").get<std::uint64_t>();
    const auto cols = field(entry, "cols").get<std::uint64_t>();
    const auto off = field(entry, "byte_offset").get<std::uint64_t>();
    const auto len = field(entry, "byte_len").get<std::uint64_t>();
    if (rows == 0 || cols == 0 || len != rows * cols * esize) {
      throw ContractViolation("checkpoint: tensor '" + name + "' has inconsistent shape/length");
    }
    if (off > payload_len || len > payload_len - off) {
      throw ContractViolation("checkpoint: tensor '" + name + "' lies outside the payload");
    }
    if (ckpt.tensors.contains(name)) throw ContractViolation("checkpoint: duplicate tensor '" + name + "'");
    std::vector<double> data(rows * cols);
    const std::size_t base = payload_begin + off;
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] = dtype == DType::F64 ? read_le<double>(bytes, base + i * 8)
                                    : static_cast<double>(read_le<float>(bytes, base + i * 4));
    }
    ckpt.tensors.emplace(name, Matrix(rows, cols, std::move(data)));
    extents.push_back({off, off + len, name});
  }
  std::sort(extents.begin(), extents.end(), [](const Extent& a, const Extent& b) { return a.begin < b.begin; });
  for (std::size_t i = 1; i < extents.size(); ++i) {
    if (extents[i].begin < extents[i - 1].end) {
      throw ContractViolation("checkpoint: tensors '" + extents[i - 1].name + "' and '" + extents[i].name +
                              "' overlap");
    }
  }
  return ckpt;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("write to '" + tmp.string() + "' failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw std::runtime_error("cannot move output into place at '" + path.string() + "'");
  }
}

void write_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& checkpoint, DType dtype) {
  const auto bytes = encode_checkpoint(checkpoint, dtype);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

ModelCheckpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mica
