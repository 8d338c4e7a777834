#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mica/compose.hpp"

namespace mica {

// Single-file tensor container:
//
//   bytes 0..7    magic "MICACKPT"
//   bytes 8..11   format version, u32 little-endian (1)
//   bytes 12..19  manifest length N, u64 little-endian
//   next N bytes  UTF-8 JSON manifest
//                 {format, name, dtype, tensors: [{name, rows, cols,
//                  byte_offset, byte_len}], metadata}
//   remainder     tensor payload, little-endian row-major; byte_offset is
//                 relative to the first payload byte
enum class DType { F64, F32 };

inline constexpr std::string_view kCheckpointMagic = "MICACKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string to_string(DType dtype);
DType dtype_from_string(const std::string& name);

std::vector<unsigned char> encode_checkpoint(const ModelCheckpoint& checkpoint, DType dtype = DType::F64);
ModelCheckpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

// Writes to a temporary sibling and renames it into place.
void write_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& checkpoint, DType dtype = DType::F64);
ModelCheckpoint read_checkpoint(const std::filesystem::path& path);

// Atomic text/binary file write (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace mica
