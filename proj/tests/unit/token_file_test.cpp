#include <gtest/gtest.h>
#include <torch/torch.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "uniwetok/errors.hpp"
#include "uniwetok/token_file.hpp"

using namespace uniwetok;

#ifndef UNIWETOK_GOLDEN_DIR
#error "UNIWETOK_GOLDEN_DIR must point at tests/golden"
#endif

namespace {

std::vector<uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string format_error(const std::vector<uint8_t>& bytes) {
  try {
    parse_token_file(bytes);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(TokenFile, GoldenOneBytePerId) {
  auto bytes = read_bytes(std::filesystem::path(UNIWETOK_GOLDEN_DIR) / "grid_2x3_g2_d8.uwtk");
  ASSERT_EQ(bytes.size(), 18u + 12u);
  auto f = parse_token_file(bytes);
  EXPECT_EQ(f.height, 2);
  EXPECT_EQ(f.width, 3);
  EXPECT_EQ(f.groups, 2);
  EXPECT_EQ(f.bits_per_group, 8);
  for (size_t i = 0; i < f.ids.size(); ++i) EXPECT_EQ(f.ids[i], (17 * i) % 256);
  // Raster order with groups innermost.
  auto ids = f.to_ids();
  EXPECT_EQ(ids.index({1, 2, 1}).item<int64_t>(), (17 * 11) % 256);
  EXPECT_EQ(serialize(f), bytes);
}

TEST(TokenFile, GoldenTwoBytesPerIdIsLittleEndian) {
  auto bytes = read_bytes(std::filesystem::path(UNIWETOK_GOLDEN_DIR) / "grid_1x2_g1_d12.uwtk");
  auto f = parse_token_file(bytes);
  EXPECT_EQ(f.bytes_per_id(), 2u);
  EXPECT_EQ(f.ids, (std::vector<uint32_t>{0x0abc, 0x0123}));
  EXPECT_EQ(serialize(f), bytes);
}

TEST(TokenFile, EightByEightGridAtEightBitsIsPositionsTimesGroups) {
  auto ids = torch::randint(0, 256, {8, 8, 16}, torch::kInt64);
  auto f = TokenFile::from_ids(ids, 8);
  EXPECT_EQ(serialize(f).size(), kTokenHeaderBytes + 8 * 8 * 16);
  EXPECT_TRUE(torch::equal(parse_token_file(serialize(f)).to_ids(), ids));
}

TEST(TokenFile, RoundTripsRandomValidFiles) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    TokenFile f;
    f.height = 1 + rng() % 5;
    f.width = 1 + rng() % 5;
    f.groups = 1 + rng() % 4;
    f.bits_per_group = 1 + rng() % 32;
    const uint64_t limit = uint64_t{1} << f.bits_per_group;
    f.ids.resize(static_cast<size_t>(f.height) * f.width * f.groups);
    for (auto& id : f.ids) id = static_cast<uint32_t>(rng() % limit);
    auto back = parse_token_file(serialize(f));
    EXPECT_EQ(back.ids, f.ids);
    EXPECT_EQ(back.bits_per_group, f.bits_per_group);
  }
}

TEST(TokenFile, ErrorsNameTheProblem) {
  auto good = serialize(TokenFile::from_ids(torch::zeros({2, 2, 1}, torch::kInt64), 8));

  EXPECT_NE(format_error({good.begin(), good.begin() + 10}).find("expected 18 bytes, got 10"),
            std::string::npos);

  auto magic = good;
  magic[0] = 'X';
  EXPECT_NE(format_error(magic).find("magic"), std::string::npos);

  auto version = good;
  version[4] = 2;
  EXPECT_NE(format_error(version).find("version"), std::string::npos);

  auto reserved = good;
  reserved[15] = 1;
  EXPECT_NE(format_error(reserved).find("reserved"), std::string::npos);

  auto truncated = good;
  truncated.pop_back();
  EXPECT_NE(format_error(truncated).find("expected 4 bytes, got 3"), std::string::npos);

  auto too_big = serialize(TokenFile::from_ids(torch::zeros({1, 1, 1}, torch::kInt64), 3));
  too_big.back() = 9;
  EXPECT_NE(format_error(too_big).find("id 9"), std::string::npos);
}

TEST(TokenFile, FromIdsRejectsOutOfRange) {
  EXPECT_THROW(TokenFile::from_ids(torch::full({1, 1, 1}, 16, torch::kInt64), 4), FormatError);
}

TEST(TokenFile, ReadMissingFileIsIoError) {
  EXPECT_THROW(read_token_file("/nonexistent/tokens.uwtk"), IoError);
}
