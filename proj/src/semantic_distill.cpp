#include "uniwetok/semantic_distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "uniwetok/binary_io.hpp"
#include "uniwetok/errors.hpp"

namespace uniwetok {

TeacherEmbedding Teacher::embed_one(const torch::Tensor& image,
                                    const std::string& sample_id) const {
  auto row = embed(image.unsqueeze(0), {sample_id}).to(torch::kFloat32).contiguous();
  TeacherEmbedding out;
  out.sample_id = sample_id;
  out.vector.assign(row.data_ptr<float>(), row.data_ptr<float>() + row.numel());
  return out;
}

SyntheticTeacher::SyntheticTeacher(int dim, uint64_t seed) : dim_(dim) {
  if (dim < 1) throw ConfigError("teacher dimension must be positive");
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto opts = torch::TensorOptions().dtype(torch::kFloat32);
  conv1_ = torch::randn({16, 3, 5, 5}, gen, opts) / std::sqrt(75.0);
  conv2_ = torch::randn({32, 16, 3, 3}, gen, opts) / std::sqrt(144.0);
  proj_ = torch::randn({dim, 64}, gen, opts) / std::sqrt(64.0);
}

torch::Tensor SyntheticTeacher::embed(const torch::Tensor& images,
                                      const std::vector<std::string>&) const {
  torch::NoGradGuard no_grad;
  auto x = images.detach().to(torch::kFloat32).permute({0, 3, 1, 2}).contiguous();
  auto h = torch::tanh(torch::conv2d(x, conv1_, {}, 2, 2));
  h = torch::tanh(torch::conv2d(h, conv2_, {}, 2, 1));
  auto pooled = torch::cat({h.mean({2, 3}), h.std({2, 3}, /*unbiased=*/false)}, 1);
  auto out = torch::matmul(pooled, proj_.t());
  return out / (out.norm(2, 1, true) + 1e-12);
}

EmbeddingStore::EmbeddingStore(int dim) : dim_(dim) {
  if (dim < 1) throw ValidationError("embedding dimension must be positive");
}

void EmbeddingStore::insert(const std::string& key, std::vector<float> vector) {
  if (static_cast<int>(vector.size()) != dim_) {
    throw ValidationError("embedding for '" + key + "' has length " +
                          std::to_string(vector.size()) + ", expected " + std::to_string(dim_));
  }
  double norm = 0.0;
  for (float v : vector) {
    if (!std::isfinite(v)) throw ValidationError("non-finite embedding for '" + key + "'");
    norm += static_cast<double>(v) * v;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) throw ValidationError("zero-norm embedding for '" + key + "'");
  for (float& v : vector) v = static_cast<float>(v / norm);
  vectors_[key] = std::move(vector);
}

const std::vector<float>* EmbeddingStore::find(const std::string& key) const {
  auto it = vectors_.find(key);
  return it == vectors_.end() ? nullptr : &it->second;
}

void EmbeddingStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write embedding store " + path.string());
  out.write("UWEM", 4);
  binio::write_le<uint32_t>(out, 1);
  binio::write_le<uint32_t>(out, static_cast<uint32_t>(dim_));
  binio::write_le<uint64_t>(out, vectors_.size());
  for (const auto& [key, vec] : vectors_) {
    binio::write_le<uint32_t>(out, static_cast<uint32_t>(key.size()));
    out.write(key.data(), static_cast<std::streamsize>(key.size()));
    for (float v : vec) binio::write_le<float>(out, v);
  }
  if (!out) throw IoError("failed writing embedding store " + path.string());
}

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read embedding store " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "UWEM", 4) != 0) {
    throw FormatError("bad embedding store magic in " + path.string());
  }
  const auto version = binio::read_le<uint32_t>(in);
  if (version != 1) throw FormatError("unsupported embedding store version " + std::to_string(version));
  const auto dim = binio::read_le<uint32_t>(in);
  const auto count = binio::read_le<uint64_t>(in);
  if (dim == 0 || dim > (1u << 20)) throw FormatError("implausible embedding dimension");
  EmbeddingStore store(static_cast<int>(dim));
  for (uint64_t i = 0; i < count; ++i) {
    const auto key_len = binio::read_le<uint32_t>(in);
    if (key_len > (1u << 16)) throw FormatError("implausible key length in embedding store");
    std::string key(key_len, '\0');
    if (!in.read(key.data(), key_len)) throw FormatError("truncated embedding store key");
    std::vector<float> vec(dim);
    for (auto& v : vec) v = binio::read_le<float>(in);
    // Stored vectors are already unit-norm; keep the bytes exact.
    store.vectors_[key] = std::move(vec);
  }
  return store;
}

FileTeacher::FileTeacher(EmbeddingStore store) : store_(std::move(store)) {}

torch::Tensor FileTeacher::embed(const torch::Tensor&,
                                 const std::vector<std::string>& sample_ids) const {
  auto out = torch::empty({static_cast<int64_t>(sample_ids.size()), store_.dim()});
  std::vector<std::string> missing;
  for (size_t i = 0; i < sample_ids.size(); ++i) {
    const auto* vec = store_.find(sample_ids[i]);
    if (!vec) {
      missing.push_back(sample_ids[i]);
      continue;
    }
    std::memcpy(out[static_cast<int64_t>(i)].data_ptr<float>(), vec->data(),
                vec->size() * sizeof(float));
  }
  if (!missing.empty()) {
    std::string msg = "teacher embedding store has no entry for:";
    for (const auto& key : missing) msg += " " + key;
    throw DataError(msg);
  }
  return out;
}

PoolHeadImpl::PoolHeadImpl(int latent_width, int teacher_dim, PoolKind kind, int heads,
                           int attention_width)
    : kind_(kind) {
  if (kind == PoolKind::attention) {
    auto q = torch::empty({1, 1, attention_width}, nn::param_options());
    if (!q.is_meta()) {
      torch::NoGradGuard no_grad;
      q.normal_(0.0, 0.02);
    }
    query = register_parameter("query", q);
    attn = register_module("attn", nn::MultiHeadAttention(attention_width, heads, latent_width));
    proj = register_module("proj", nn::Linear(attention_width, teacher_dim));
  } else {
    proj = register_module("proj", nn::Linear(latent_width, teacher_dim));
  }
}

torch::Tensor PoolHeadImpl::forward(const torch::Tensor& latent) {
  if (latent.dim() != 4 || latent.size(1) * latent.size(2) == 0) {
    throw InternalError("attention pooling needs a nonempty [B, h, w, C] grid");
  }
  const int64_t batch = latent.size(0);
  auto tokens = latent.reshape({batch, latent.size(1) * latent.size(2), latent.size(3)});
  if (kind_ == PoolKind::linear) return proj->forward(tokens.mean(1));
  auto q = query.to(tokens.scalar_type()).expand({batch, 1, query.size(2)});
  return proj->forward(attn->forward(q, tokens).squeeze(1));
}

torch::Tensor cosine_distill_loss(const torch::Tensor& pooled, const torch::Tensor& target) {
  auto t = target.to(pooled.scalar_type());
  auto dot = (pooled * t).sum(-1);
  auto denom = (pooled.norm(2, -1) + 1e-8) * (t.norm(2, -1) + 1e-8);
  return (1.0 - dot / denom).mean();
}

PpdTerms ppd_loss(const torch::Tensor& pre_latent, const torch::Tensor& post_latent,
                  const torch::Tensor& teacher, PoolHead& pre_head, PoolHead& post_head,
                  const DistillArms& arms) {
  PpdTerms terms;
  auto zero = torch::zeros({}, pre_latent.options());
  terms.pre = arms.pre ? cosine_distill_loss(pre_head->forward(pre_latent), teacher) : zero;
  terms.post = arms.post ? cosine_distill_loss(post_head->forward(post_latent), teacher) : zero;
  terms.total = terms.pre + arms.eta * terms.post;
  return terms;
}

ZeroShotResult zero_shot_proxy(const torch::Tensor& student, const std::vector<int>& labels,
                               const torch::Tensor& prototype_embeddings,
                               const std::vector<int>& prototype_labels, int num_classes) {
  if (num_classes < 2) throw ValidationError("zero-shot proxy needs at least two classes");
  if (student.size(0) != static_cast<int64_t>(labels.size()) ||
      prototype_embeddings.size(0) != static_cast<int64_t>(prototype_labels.size())) {
    throw ValidationError("zero-shot proxy: embedding and label counts differ");
  }
  auto protos = prototype_embeddings.to(torch::kFloat64);
  auto sums = torch::zeros({num_classes, protos.size(1)}, torch::kFloat64);
  std::vector<int64_t> counts(num_classes, 0);
  for (size_t i = 0; i < prototype_labels.size(); ++i) {
    const int c = prototype_labels[i];
    if (c < 0 || c >= num_classes) throw ValidationError("prototype label out of range");
    sums[c] += protos[static_cast<int64_t>(i)];
    ++counts[c];
  }
  for (int c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) {
      throw ValidationError("class " + std::to_string(c) + " has no prototype samples");
    }
  }
  auto centers = sums / torch::tensor(counts, torch::kFloat64).unsqueeze(1).to(torch::kFloat64);
  centers = centers / (centers.norm(2, 1, true) + 1e-12);
  auto s = student.detach().to(torch::kFloat64);
  s = s / (s.norm(2, 1, true) + 1e-12);
  auto sims = torch::matmul(s, centers.t());  // [N, C]
  const int64_t k5 = std::min<int64_t>(5, num_classes);
  auto top = std::get<1>(sims.topk(k5, 1)).contiguous();
  ZeroShotResult result;
  result.samples = s.size(0);
  result.classes = num_classes;
  if (result.samples == 0) throw ValidationError("zero-shot proxy needs evaluation samples");
  auto acc = top.accessor<int64_t, 2>();
  int64_t hit1 = 0, hit5 = 0;
  for (int64_t i = 0; i < result.samples; ++i) {
    if (acc[i][0] == labels[i]) ++hit1;
    for (int64_t j = 0; j < k5; ++j) {
      if (acc[i][j] == labels[i]) {
        ++hit5;
        break;
      }
    }
  }
  result.top1 = static_cast<double>(hit1) / static_cast<double>(result.samples);
  result.top5 = static_cast<double>(hit5) / static_cast<double>(result.samples);
  return result;
}

}  // namespace uniwetok
