#include "uniwetok/model.hpp"

#include "uniwetok/errors.hpp"
#include "uniwetok/layers.hpp"

namespace uniwetok {

std::shared_ptr<Teacher> make_teacher(const TeacherSpec& spec) {
  if (!spec.enabled()) throw ConfigError("semantic teacher: none configured");
  if (spec.synthetic()) return std::make_shared<SyntheticTeacher>(spec.dim, spec.seed);
  if (spec.store.empty()) {
    throw ConfigError("semantic teacher '" + spec.name +
                      "' has no built-in encoder; point 'teacher store' at precomputed embeddings");
  }
  auto store = EmbeddingStore::load(spec.store);
  if (spec.dim > 0 && store.dim() != spec.dim) {
    throw ConfigError("teacher store width " + std::to_string(store.dim()) +
                      " disagrees with teacher dim " + std::to_string(spec.dim));
  }
  return std::make_shared<FileTeacher>(std::move(store));
}

namespace {

void append(NamedTensors& out, const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters()) out.emplace_back(prefix + item.key(), item.value());
}

}  // namespace

ModelBundle::ModelBundle(const ModelConfig& config, const BundleOptions& options) : config_(config) {
  config_.quantizer.validate();
  auto backbone = config_.backbone;
  backbone.siglu = config_.quantizer.siglu;
  backbone.latent_width = config_.quantizer.code_width();
  config_.backbone = backbone;
  encoder = Encoder(backbone);
  decoder = Decoder(backbone);

  const bool distilling = config_.arms.pre || config_.arms.post;
  int teacher_dim = config_.teacher.dim;
  if (distilling && options.load_teacher) {
    teacher = make_teacher(config_.teacher);
    teacher_dim = teacher->dim();
  }
  if (distilling && options.pool_heads) {
    if (teacher_dim < 1) throw ConfigError("teacher dim: unknown width for the pool heads");
    const int width = backbone.latent_width;
    if (config_.arms.pre) pre_head = PoolHead(width, teacher_dim, config_.head);
    if (config_.arms.post) post_head = PoolHead(width, teacher_dim, config_.head);
  }
  if (config_.prior_enabled() && options.prior) {
    prior = Prior(config_.prior, backbone.latent_width);
  }
  if (options.discriminator) discriminator = PatchDiscriminator(config_.discriminator_channels);
  if (options.perceptual) perceptual = std::make_shared<PerceptualNet>(config_.perceptual_seed);
}

NamedTensors ModelBundle::generator_parameters() const {
  NamedTensors out;
  append(out, "encoder.", *encoder);
  append(out, "decoder.", *decoder);
  if (pre_head) append(out, "pre_head.", *pre_head);
  if (post_head) append(out, "post_head.", *post_head);
  if (prior) append(out, "prior.", *prior);
  return out;
}

NamedTensors ModelBundle::discriminator_parameters() const {
  NamedTensors out;
  if (discriminator) append(out, "discriminator.", *discriminator);
  return out;
}

NamedTensors ModelBundle::autoencoder_parameters() const {
  NamedTensors out;
  append(out, "encoder.", *encoder);
  append(out, "decoder.", *decoder);
  return out;
}

void ModelBundle::train(bool on) {
  encoder->train(on);
  decoder->train(on);
  if (pre_head) pre_head->train(on);
  if (post_head) post_head->train(on);
  if (prior) prior->train(on);
  if (discriminator) discriminator->train(on);
}

torch::Tensor ModelBundle::encode(const torch::Tensor& images) { return encoder->forward(images); }

BinaryCode ModelBundle::tokenize(const torch::Tensor& images) {
  return quantize(group_reshape(encode(images), config_.quantizer));
}

torch::Tensor ModelBundle::detokenize(const torch::Tensor& ids) {
  auto code = indices_to_codes(ids, config_.quantizer);
  return decoder->forward(ungroup(code.signs.to(torch::kFloat32)));
}

torch::Tensor ModelBundle::reconstruct(const torch::Tensor& images) {
  auto grouped = group_reshape(encode(images), config_.quantizer);
  auto code = quantize(grouped);
  return decoder->forward(ungroup(straight_through(grouped, code)));
}

ModelBundle::ParameterCounts ModelBundle::parameter_counts() const {
  ParameterCounts c;
  c.encoder = nn::parameter_count(*encoder);
  c.decoder = nn::parameter_count(*decoder);
  if (pre_head) c.pre_head = nn::parameter_count(*pre_head);
  if (post_head) c.post_head = nn::parameter_count(*post_head);
  if (prior) c.prior = nn::parameter_count(*prior);
  if (discriminator) c.discriminator = nn::parameter_count(*discriminator);
  return c;
}

EmaSwap::EmaSwap(ModelBundle& bundle, const std::map<std::string, torch::Tensor>& shadow)
    : params_(bundle.autoencoder_parameters()) {
  torch::NoGradGuard no_grad;
  for (auto& [name, p] : params_) {
    saved_.push_back(p.detach().clone());
    auto it = shadow.find(name);
    if (it == shadow.end()) throw InternalError("EMA shadow lacks " + name);
    p.copy_(it->second);
  }
}

EmaSwap::~EmaSwap() {
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < params_.size(); ++i) params_[i].second.copy_(saved_[i]);
}

}  // namespace uniwetok
