#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "salprune/model.hpp"

namespace salprune {

// Binary checkpoint layout, all integers little-endian:
//
//   "PSCK"                       4 bytes magic
//   version          u32         kCheckpointVersion
//   header length    u32, then that many bytes of `key=value\n` text
//                    (input, layers, classes, seed, regime, pruning,
//                    epochs, epsilon, history)
//   entry count      u32
//   per entry:       name length u16, name bytes, rank u8, dims u32 x rank,
//                    payload kind u8 (0 = parameter f32, 1 = mask u8), payload
//   crc32            u32 over every preceding byte
//
// Each parameter is written as two entries with the same name: its values
// then its mask.
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, version_mismatch, truncated, checksum, malformed };

  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::vector<std::uint8_t> encode_checkpoint(const ModelState& model);
ModelState decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

// Rounds every parameter through f32, as a save/load round trip would.
ModelState quantized_f32(const ModelState& model);

}  // namespace salprune
