#pragma once

// Token file layout (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "UWTK"
//   4       2     format version (1)
//   6       2     h
//   8       2     w
//   10      1     g
//   11      1     d'
//   12      6     reserved, must be zero
//   18      ...   h*w*g ids, ceil(d'/8) bytes each, raster order, groups innermost

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace uniwetok {

inline constexpr char kTokenMagic[4] = {'U', 'W', 'T', 'K'};
inline constexpr uint16_t kTokenFormatVersion = 1;
inline constexpr size_t kTokenHeaderBytes = 18;

struct TokenFile {
  uint16_t height = 0;
  uint16_t width = 0;
  uint8_t groups = 0;
  uint8_t bits_per_group = 0;
  std::vector<uint32_t> ids;  // h * w * g entries

  size_t bytes_per_id() const { return (bits_per_group + 7u) / 8u; }
  size_t payload_bytes() const {
    return static_cast<size_t>(height) * width * groups * bytes_per_id();
  }

  // Throws FormatError when ids disagree with the header fields.
  void validate() const;

  // ids tensor [h, w, g] (int64) <-> file.
  static TokenFile from_ids(const torch::Tensor& ids, int bits_per_group);
  torch::Tensor to_ids() const;
};

std::vector<uint8_t> serialize(const TokenFile& file);
// Throws FormatError with a specific reason (magic, version, reserved bytes,
// field ranges, or expected/actual payload byte counts).
TokenFile parse_token_file(const std::vector<uint8_t>& bytes);

void write_token_file(const std::filesystem::path& path, const TokenFile& file);
TokenFile read_token_file(const std::filesystem::path& path);

}  // namespace uniwetok
