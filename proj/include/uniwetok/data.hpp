#pragma once

// Sample sources (PNG directories and seeded synthetic generators) plus the
// multi-resolution batcher. Every draw is addressed by (seed, step), so a
// resumed run sees exactly the batches an unbroken run would have seen.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace uniwetok {

enum class DatasetKind { directory, synthetic_texture, synthetic_glyph, synthetic_face };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::synthetic_texture;
  std::filesystem::path root;  // directory kind only
  uint64_t seed = 0;           // synthetic kinds only
  double weight = 1.0;
  bool labeled = true;  // directory: label = index of the parent folder name
  int native_size = 64;

  // "synthetic-texture:7", "synthetic-glyph", "synthetic-face:3", "dir:<path>".
  // An optional "@<weight>" suffix sets the mixture weight. Throws ConfigError.
  static DatasetSpec parse(const std::string& text);
  std::string describe() const;
};

// Number of texture classes emitted by the synthetic texture generator.
inline constexpr int kTextureClasses = 8;

struct Sample {
  torch::Tensor image;  // [H, W, 3] float32 in [-1, 1]
  std::string id;
  int label = -1;
};

// Deterministic uniform/normal draws independent of the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  static uint64_t mix(uint64_t a, uint64_t b);
  uint64_t bits() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int64_t below(int64_t n) { return static_cast<int64_t>(uniform() * static_cast<double>(n)); }
  double normal();

 private:
  std::mt19937_64 engine_;
};

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  // Same index, same sample.
  virtual Sample get(uint64_t index) const = 0;
  // Distinct samples before indices wrap (0: unbounded).
  virtual uint64_t size() const { return 0; }
};

// Throws DataError for unreadable or empty directories.
std::unique_ptr<SampleSource> make_dataset(const DatasetSpec& spec);

// Individual renderers, exposed for tests.
Sample render_texture(uint64_t seed, uint64_t index, int size);
Sample render_glyph(uint64_t seed, uint64_t index, int size);
Sample render_face(uint64_t seed, uint64_t index, int size);

// Square crop at (top, left) with side `side`, bilinearly resized to `size`.
torch::Tensor crop_resize(const torch::Tensor& image, int64_t top, int64_t left, int64_t side,
                          int64_t size);
// Largest centered square, resized to `size`.
torch::Tensor center_resize(const torch::Tensor& image, int64_t size);

enum class Augmentation { random_crop, center_crop };
Augmentation parse_augmentation(const std::string& text);

struct Batch {
  torch::Tensor images;  // [B, r, r, 3]
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<int> source;  // index of the dataset each sample came from
  int resolution = 0;
};

class MultiResolutionBatcher {
 public:
  // Throws ConfigError when a resolution is not divisible by the downsample
  // factor, when weights are invalid, or when no dataset is given.
  MultiResolutionBatcher(std::vector<DatasetSpec> datasets, std::vector<int> resolutions,
                         int batch_size, int downsample_factor, uint64_t seed,
                         Augmentation augmentation = Augmentation::random_crop);

  Batch batch(int64_t step) const;
  const std::vector<double>& mixture() const { return mixture_; }
  const std::vector<int>& resolutions() const { return resolutions_; }

 private:
  std::vector<DatasetSpec> specs_;
  std::vector<std::unique_ptr<SampleSource>> sources_;
  std::vector<double> mixture_;
  std::vector<int> resolutions_;
  int batch_size_;
  uint64_t seed_;
  Augmentation augmentation_;
};

// Fixed evaluation set: `count` samples at one resolution, center cropped,
// drawn from indices [0, count) of the given spec.
Batch fixed_eval_set(const DatasetSpec& spec, int count, int resolution);

}  // namespace uniwetok
