#pragma once

// Pre/post-quantization semantic distillation.
//
// Two independent pooling heads map the pre-quantization latent U_G and the
// straight-through latent U_Q to the teacher's embedding space; each branch
// is trained with 1 - cos(pooled, f_T). The zero-shot proxy classifies pooled
// post-quantization embeddings against per-class teacher prototypes.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uniwetok/layers.hpp"

namespace uniwetok {

// L2-normalized teacher vector for one sample.
struct TeacherEmbedding {
  std::vector<float> vector;
  std::string sample_id;
};

class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual int dim() const = 0;
  // images [B, H, W, 3] with matching sample ids -> [B, d_T], rows unit-norm.
  virtual torch::Tensor embed(const torch::Tensor& images,
                              const std::vector<std::string>& sample_ids) const = 0;
  TeacherEmbedding embed_one(const torch::Tensor& image, const std::string& sample_id) const;
};

// Frozen, seeded two-layer conv encoder with mean/std pooling.
class SyntheticTeacher final : public Teacher {
 public:
  SyntheticTeacher(int dim, uint64_t seed);
  int dim() const override { return dim_; }
  torch::Tensor embed(const torch::Tensor& images,
                      const std::vector<std::string>& sample_ids) const override;

 private:
  int dim_;
  torch::Tensor conv1_, conv2_, proj_;
};

// Keyed embedding file.
//
// Layout (little-endian):
//   magic "UWEM" | u32 version = 1 | u32 d_T | u64 count
//   count x { u32 key_length | key bytes | d_T x f32 }
class EmbeddingStore {
 public:
  explicit EmbeddingStore(int dim);
  int dim() const { return dim_; }
  size_t size() const { return vectors_.size(); }
  // Normalizes to unit length. Throws ValidationError on a zero or
  // non-finite vector or wrong length.
  void insert(const std::string& key, std::vector<float> vector);
  const std::vector<float>* find(const std::string& key) const;
  const std::map<std::string, std::vector<float>>& entries() const { return vectors_; }

  void save(const std::filesystem::path& path) const;
  // Throws IoError / FormatError.
  static EmbeddingStore load(const std::filesystem::path& path);

 private:
  int dim_;
  std::map<std::string, std::vector<float>> vectors_;
};

class FileTeacher final : public Teacher {
 public:
  explicit FileTeacher(EmbeddingStore store);
  int dim() const override { return store_.dim(); }
  // Throws DataError naming every sample id missing from the store.
  torch::Tensor embed(const torch::Tensor& images,
                      const std::vector<std::string>& sample_ids) const override;

 private:
  EmbeddingStore store_;
};

enum class PoolKind { attention, linear };

// Attention variant: one learned query, cross-attention over the h*w latent
// tokens, projection to d_T. Linear variant: mean pool then projection.
class PoolHeadImpl : public torch::nn::Module {
 public:
  PoolHeadImpl(int latent_width, int teacher_dim, PoolKind kind, int heads = 4,
               int attention_width = 64);
  // latent [B, h, w, C] (flat view) -> [B, d_T]. Throws InternalError on an
  // empty grid.
  torch::Tensor forward(const torch::Tensor& latent);
  PoolKind kind() const { return kind_; }

 private:
  PoolKind kind_;
  torch::Tensor query;
  nn::MultiHeadAttention attn{nullptr};
  nn::Linear proj{nullptr};
};
TORCH_MODULE(PoolHead);

// Mean over the batch of 1 - cos(pooled, target); norms get +1e-8.
torch::Tensor cosine_distill_loss(const torch::Tensor& pooled, const torch::Tensor& target);

struct DistillArms {
  bool pre = true;
  bool post = true;
  double eta = 1.0;
};

struct PpdTerms {
  torch::Tensor pre;    // zero scalar when the arm is off
  torch::Tensor post;   // zero scalar when the arm is off
  torch::Tensor total;  // pre + eta * post
};

// pre_latent: U_G, post_latent: U_Q, both flat [B, h, w, C].
PpdTerms ppd_loss(const torch::Tensor& pre_latent, const torch::Tensor& post_latent,
                  const torch::Tensor& teacher, PoolHead& pre_head, PoolHead& post_head,
                  const DistillArms& arms);

struct ZeroShotResult {
  double top1 = 0.0;
  double top5 = 0.0;
  int64_t samples = 0;
  int classes = 0;
};

// Prototypes are per-class means of `prototype_embeddings`; each student
// row is ranked against them by cosine. Throws ValidationError for fewer than
// two classes or a class without prototype samples.
ZeroShotResult zero_shot_proxy(const torch::Tensor& student, const std::vector<int>& labels,
                               const torch::Tensor& prototype_embeddings,
                               const std::vector<int>& prototype_labels, int num_classes);

}  // namespace uniwetok
