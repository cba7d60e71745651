#include "uniwetok/token_file.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "uniwetok/errors.hpp"

namespace uniwetok {

namespace {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

uint16_t get_u16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace

void TokenFile::validate() const {
  if (groups == 0) throw FormatError("token file group count must be positive");
  if (bits_per_group == 0 || bits_per_group > 32) {
    throw FormatError("token file d' must lie in [1, 32], got " + std::to_string(bits_per_group));
  }
  const size_t expected = static_cast<size_t>(height) * width * groups;
  if (ids.size() != expected) {
    throw FormatError("token file holds " + std::to_string(ids.size()) + " ids, header implies " +
                      std::to_string(expected));
  }
  const uint64_t limit = uint64_t{1} << bits_per_group;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= limit) {
      throw FormatError("id " + std::to_string(ids[i]) + " at index " + std::to_string(i) +
                        " exceeds 2^" + std::to_string(bits_per_group));
    }
  }
}

TokenFile TokenFile::from_ids(const torch::Tensor& ids, int bits_per_group) {
  if (ids.dim() != 3) throw ValidationError("token ids must be [h, w, g]");
  if (ids.size(0) > 0xffff || ids.size(1) > 0xffff || ids.size(2) > 0xff) {
    throw ValidationError("token grid exceeds the header field ranges");
  }
  TokenFile file;
  file.height = static_cast<uint16_t>(ids.size(0));
  file.width = static_cast<uint16_t>(ids.size(1));
  file.groups = static_cast<uint8_t>(ids.size(2));
  file.bits_per_group = static_cast<uint8_t>(bits_per_group);
  auto flat = ids.to(torch::kInt64).contiguous();
  const auto* p = flat.data_ptr<int64_t>();
  file.ids.reserve(flat.numel());
  for (int64_t i = 0; i < flat.numel(); ++i) {
    if (p[i] < 0) throw ValidationError("negative token id");
    file.ids.push_back(static_cast<uint32_t>(p[i]));
  }
  file.validate();
  return file;
}

torch::Tensor TokenFile::to_ids() const {
  auto out = torch::empty({height, width, groups}, torch::kInt64);
  auto* p = out.data_ptr<int64_t>();
  for (size_t i = 0; i < ids.size(); ++i) p[i] = ids[i];
  return out;
}

std::vector<uint8_t> serialize(const TokenFile& file) {
  file.validate();
  std::vector<uint8_t> out(kTokenMagic, kTokenMagic + 4);
  out.reserve(kTokenHeaderBytes + file.payload_bytes());
  put_u16(out, kTokenFormatVersion);
  put_u16(out, file.height);
  put_u16(out, file.width);
  out.push_back(file.groups);
  out.push_back(file.bits_per_group);
  out.insert(out.end(), 6, 0);
  const size_t width = file.bytes_per_id();
  for (uint32_t id : file.ids) {
    for (size_t b = 0; b < width; ++b) out.push_back(static_cast<uint8_t>(id >> (8 * b)));
  }
  return out;
}

TokenFile parse_token_file(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < kTokenHeaderBytes) {
    throw FormatError("token file header truncated: expected " +
                      std::to_string(kTokenHeaderBytes) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  if (std::memcmp(bytes.data(), kTokenMagic, 4) != 0) throw FormatError("bad token file magic");
  const uint16_t version = get_u16(bytes.data() + 4);
  if (version != kTokenFormatVersion) {
    throw FormatError("unsupported token file version " + std::to_string(version));
  }
  TokenFile file;
  file.height = get_u16(bytes.data() + 6);
  file.width = get_u16(bytes.data() + 8);
  file.groups = bytes[10];
  file.bits_per_group = bytes[11];
  for (size_t i = 12; i < kTokenHeaderBytes; ++i) {
    if (bytes[i] != 0) throw FormatError("token file reserved bytes must be zero");
  }
  if (file.groups == 0) throw FormatError("token file group count must be positive");
  if (file.bits_per_group == 0 || file.bits_per_group > 32) {
    throw FormatError("token file d' must lie in [1, 32], got " +
                      std::to_string(file.bits_per_group));
  }
  const size_t expected = file.payload_bytes();
  const size_t actual = bytes.size() - kTokenHeaderBytes;
  if (actual != expected) {
    throw FormatError("token payload size mismatch: expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(actual));
  }
  const size_t width = file.bytes_per_id();
  const size_t count = expected / width;
  file.ids.resize(count);
  const uint8_t* p = bytes.data() + kTokenHeaderBytes;
  for (size_t i = 0; i < count; ++i) {
    uint32_t id = 0;
    for (size_t b = 0; b < width; ++b) id |= static_cast<uint32_t>(p[i * width + b]) << (8 * b);
    file.ids[i] = id;
  }
  file.validate();
  return file;
}

void write_token_file(const std::filesystem::path& path, const TokenFile& file) {
  auto bytes = serialize(file);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write token file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write on " + path.string());
}

TokenFile read_token_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open token file " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_token_file(bytes);
}

}  // namespace uniwetok
