#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "uniwetok/data.hpp"
#include "uniwetok/errors.hpp"
#include "uniwetok/image_io.hpp"

using namespace uniwetok;

TEST(DatasetSpec, Parse) {
  auto s = DatasetSpec::parse("synthetic-glyph:7@0.25");
  EXPECT_EQ(s.kind, DatasetKind::synthetic_glyph);
  EXPECT_EQ(s.seed, 7u);
  EXPECT_DOUBLE_EQ(s.weight, 0.25);
  EXPECT_EQ(DatasetSpec::parse("dir:/a/b").root, std::filesystem::path("/a/b"));
  EXPECT_THROW(DatasetSpec::parse("imagenet"), ConfigError);
  EXPECT_THROW(DatasetSpec::parse("synthetic-face:1@-1"), ConfigError);
}

TEST(Synthetic, RenderersAreDeterministicAndInRange) {
  for (auto render : {render_texture, render_glyph, render_face}) {
    auto a = render(3, 17, 40);
    auto b = render(3, 17, 40);
    auto c = render(3, 18, 40);
    EXPECT_EQ(a.image.sizes(), (std::vector<int64_t>{40, 40, 3}));
    EXPECT_TRUE(torch::equal(a.image, b.image));
    EXPECT_EQ(a.id, b.id);
    EXPECT_NE(a.id, c.id);
    EXPECT_FALSE(torch::equal(a.image, c.image));
    EXPECT_LE(a.image.abs().max().item<float>(), 1.0f);
  }
}

TEST(Synthetic, TexturesCarryClassLabels) {
  std::map<int, int> counts;
  for (int i = 0; i < 400; ++i) counts[render_texture(1, i, 16).label]++;
  EXPECT_EQ(counts.size(), static_cast<size_t>(kTextureClasses));
  EXPECT_EQ(render_glyph(1, 0, 16).label, -1);
}

TEST(Resize, CenterResizeKeepsConstantImages) {
  auto img = torch::full({20, 30, 3}, 0.25f);
  auto out = center_resize(img, 16);
  EXPECT_EQ(out.sizes(), (std::vector<int64_t>{16, 16, 3}));
  EXPECT_TRUE(torch::allclose(out, torch::full({16, 16, 3}, 0.25f)));
}

TEST(Batcher, SameSeedSameBatches) {
  std::vector<DatasetSpec> specs{DatasetSpec::parse("synthetic-texture:1"),
                                 DatasetSpec::parse("synthetic-face:2")};
  MultiResolutionBatcher a(specs, {16, 24}, 4, 8, 99), b(specs, {16, 24}, 4, 8, 99);
  for (int step : {0, 5, 17}) {
    auto x = a.batch(step), y = b.batch(step);
    EXPECT_EQ(x.ids, y.ids);
    EXPECT_EQ(x.resolution, y.resolution);
    EXPECT_TRUE(torch::equal(x.images, y.images));
  }
  EXPECT_NE(a.batch(1).ids, a.batch(2).ids);
}

TEST(Batcher, RejectsIndivisibleResolution) {
  std::vector<DatasetSpec> specs{DatasetSpec::parse("synthetic-texture:1")};
  EXPECT_THROW(MultiResolutionBatcher(specs, {16, 20}, 2, 8, 0), ConfigError);
}

TEST(Batcher, MixtureAndResolutionFrequencies) {
  std::vector<DatasetSpec> specs{DatasetSpec::parse("synthetic-texture:1@0.7"),
                                 DatasetSpec::parse("synthetic-glyph:2@0.3")};
  const std::vector<int> res{8, 16, 24};
  MultiResolutionBatcher batcher(specs, res, 8, 8, 5);
  std::map<int, int> res_counts;
  int from_first = 0, total = 0;
  const int steps = 3000;
  for (int s = 0; s < steps; ++s) {
    auto b = batcher.batch(s);
    res_counts[b.resolution]++;
    for (int src : b.source) from_first += src == 0;
    total += static_cast<int>(b.source.size());
  }
  EXPECT_NEAR(static_cast<double>(from_first) / total, 0.7, 0.02);
  for (int r : res) EXPECT_NEAR(res_counts[r] / double(steps), 1.0 / 3.0, 0.03) << r;
}

TEST(Batcher, FixedEvalSetIsStable) {
  auto spec = DatasetSpec::parse("synthetic-face:4");
  auto a = fixed_eval_set(spec, 6, 16), b = fixed_eval_set(spec, 6, 16);
  EXPECT_TRUE(torch::equal(a.images, b.images));
  EXPECT_EQ(a.images.sizes(), (std::vector<int64_t>{6, 16, 16, 3}));
}

TEST(DirectorySource, LabelsFromFolders) {
  const auto root = std::filesystem::temp_directory_path() / "uwt_dir_source";
  std::filesystem::remove_all(root);
  std::filesystem::create_directories(root / "cats");
  std::filesystem::create_directories(root / "dogs");
  write_png(root / "cats" / "a.png", torch::zeros({8, 8, 3}));
  write_png(root / "dogs" / "b.png", torch::ones({8, 8, 3}));
  auto source = make_dataset(DatasetSpec::parse("dir:" + root.string()));
  ASSERT_EQ(source->size(), 2u);
  EXPECT_EQ(source->get(0).label, 0);
  EXPECT_EQ(source->get(1).label, 1);
  EXPECT_NEAR(source->get(1).image.mean().item<float>(), 1.0f, 1e-6);
  std::filesystem::remove_all(root);
  EXPECT_THROW(make_dataset(DatasetSpec::parse("dir:" + root.string())), DataError);
}

TEST(ImageIo, PixelMappingRoundTrips) {
  const auto path = std::filesystem::temp_directory_path() / "uwt_roundtrip.png";
  auto img = torch::linspace(-1, 1, 4 * 5 * 3).view({4, 5, 3});
  write_png(path, img);
  auto back = read_png(path);
  EXPECT_LE((back - img).abs().max().item<float>(), 1.0f / 127.5f);
  write_png(path, back);
  EXPECT_TRUE(torch::equal(read_png(path), back));
  EXPECT_THROW(read_png(std::filesystem::temp_directory_path() / "uwt_missing.png"), DataError);
  std::filesystem::remove(path);
}
