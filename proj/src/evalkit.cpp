#include "uniwetok/evalkit.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "uniwetok/checkpoint.hpp"
#include "uniwetok/config.hpp"
#include "uniwetok/errors.hpp"
#include "uniwetok/kernels.hpp"

namespace uniwetok {

double psnr_from_mse(double mse) {
  if (!(mse >= 0.0)) throw ValidationError("mse must be nonnegative");
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(4.0 / mse));
}

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ValidationError("psnr: image shapes differ");
  auto diff = a.to(torch::kFloat64) - b.to(torch::kFloat64);
  return psnr_from_mse(diff.pow(2).mean().item<double>());
}

double ssim(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ValidationError("ssim: image shapes differ");
  if (a.dim() != 2 && !(a.dim() == 3 && a.size(2) == 3)) {
    throw ValidationError("ssim expects [H, W] or [H, W, 3] images");
  }
  const kernels::SsimParams params;
  if (a.size(0) < params.window || a.size(1) < params.window) {
    throw ValidationError("ssim needs images of at least 11x11, got " + std::to_string(a.size(0)) +
                          "x" + std::to_string(a.size(1)));
  }
  auto gray = [](const torch::Tensor& t) {
    auto g = t.dim() == 3 ? t.to(torch::kFloat64).mean(2) : t.to(torch::kFloat64);
    return g.contiguous();
  };
  auto ga = gray(a), gb = gray(b);
  const int h = static_cast<int>(ga.size(0)), w = static_cast<int>(ga.size(1));
  return kernels::parallel::ssim_mean({ga.data_ptr<double>(), static_cast<size_t>(ga.numel())},
                                      {gb.data_ptr<double>(), static_cast<size_t>(gb.numel())}, h, w,
                                      params);
}

double frechet_distance(const torch::Tensor& fa, const torch::Tensor& fb) {
  if (fa.dim() != 2 || fb.dim() != 2 || fa.size(1) != fb.size(1)) {
    throw ValidationError("frechet distance expects [N, F] feature sets of equal width");
  }
  if (fa.size(0) < 2 || fb.size(0) < 2) throw ValidationError("frechet distance needs >= 2 samples per set");
  using Mat = Eigen::MatrixXd;
  auto to_eigen = [](const torch::Tensor& t) {
    auto c = t.to(torch::kFloat64).contiguous();
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
               c.data_ptr<double>(), c.size(0), c.size(1))
        .eval();
  };
  const Mat a = to_eigen(fa), b = to_eigen(fb);
  const Eigen::VectorXd mu_a = a.colwise().mean(), mu_b = b.colwise().mean();
  auto covariance = [](const Mat& x, const Eigen::VectorXd& mu) {
    const Mat centered = x.rowwise() - mu.transpose();
    Mat cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
    cov.diagonal().array() += 1e-6;
    return cov;
  };
  const Mat sa = covariance(a, mu_a), sb = covariance(b, mu_b);
  // tr((Sa Sb)^1/2) = tr((Sa^1/2 Sb Sa^1/2)^1/2), the inner matrix being symmetric PSD.
  Eigen::SelfAdjointEigenSolver<Mat> ea(sa);
  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Mat root_a = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  const Mat inner = root_a * sb * root_a;
  Eigen::SelfAdjointEigenSolver<Mat> ei((inner + inner.transpose()) / 2.0, Eigen::EigenvaluesOnly);
  const double tr_root = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_root;
  return std::max(0.0, value);
}

double frechet_proxy(const torch::Tensor& images_a, const torch::Tensor& images_b,
                     const PerceptualNet& net) {
  torch::NoGradGuard no_grad;
  return frechet_distance(net.descriptor(images_a), net.descriptor(images_b));
}

std::string MetricReport::to_text() const {
  std::ostringstream out;
  out << std::setprecision(9);
  out << "samples=" << samples << "\n"
      << "resolution=" << resolution << "\n"
      << "fingerprint=" << fingerprint << "\n"
      << "recon_mse=" << recon_mse << "\n"
      << "psnr=" << psnr << "\n"
      << "ssim=" << ssim << "\n"
      << "usage_overall=" << usage.overall << "\n";
  for (size_t k = 0; k < usage.per_group.size(); ++k) {
    out << "usage_group_" << k << "=" << usage.per_group[k] << "\n";
  }
  if (frechet_proxy) out << "frechet_proxy=" << *frechet_proxy << "\n";
  if (zero_shot) {
    out << "zero_shot_top1=" << zero_shot->top1 << "\n"
        << "zero_shot_top5=" << zero_shot->top5 << "\n";
  }
  return out.str();
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["samples"] = samples;
  j["resolution"] = resolution;
  j["fingerprint"] = fingerprint;
  j["recon_mse"] = recon_mse;
  j["psnr"] = psnr;
  j["ssim"] = ssim;
  j["usage_overall"] = usage.overall;
  j["usage_per_group"] = usage.per_group;
  j["positions_seen"] = usage.positions_seen;
  if (frechet_proxy) j["frechet_proxy"] = *frechet_proxy;
  if (zero_shot) {
    j["zero_shot_top1"] = zero_shot->top1;
    j["zero_shot_top5"] = zero_shot->top5;
    j["zero_shot_classes"] = zero_shot->classes;
  }
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    r.samples = j.at("samples").get<int64_t>();
    r.resolution = j.at("resolution").get<int>();
    r.fingerprint = j.at("fingerprint").get<uint64_t>();
    r.recon_mse = j.at("recon_mse").get<double>();
    r.psnr = j.at("psnr").get<double>();
    r.ssim = j.at("ssim").get<double>();
    r.usage.overall = j.at("usage_overall").get<double>();
    r.usage.per_group = j.at("usage_per_group").get<std::vector<double>>();
    r.usage.positions_seen = j.value("positions_seen", int64_t{0});
    if (j.contains("frechet_proxy")) r.frechet_proxy = j.at("frechet_proxy").get<double>();
    if (j.contains("zero_shot_top1")) {
      ZeroShotResult z;
      z.top1 = j.at("zero_shot_top1").get<double>();
      z.top5 = j.at("zero_shot_top5").get<double>();
      z.classes = j.value("zero_shot_classes", 0);
      r.zero_shot = z;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed metric report: ") + e.what());
  }
  return r;
}

torch::Tensor token_sequences(ModelBundle& model, const Batch& batch, int64_t chunk) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (int64_t s = 0; s < batch.images.size(0); s += chunk) {
    auto x = batch.images.slice(0, s, std::min<int64_t>(s + chunk, batch.images.size(0)));
    parts.push_back(flatten_tokens(ungroup(model.tokenize(x).signs.to(torch::kFloat32))));
  }
  return torch::cat(parts);
}

ZeroShotResult zero_shot_accuracy(ModelBundle& model, const Batch& queries, const Batch& prototypes) {
  if (!model.post_head) throw ValidationError("zero-shot proxy needs a post distillation head");
  if (!model.teacher) throw ValidationError("zero-shot proxy needs a semantic teacher");
  torch::NoGradGuard no_grad;
  std::vector<int64_t> keep_q, keep_p;
  std::vector<int> labels, proto_labels;
  int classes = 0;
  for (size_t i = 0; i < prototypes.labels.size(); ++i) {
    if (prototypes.labels[i] < 0) continue;
    keep_p.push_back(static_cast<int64_t>(i));
    proto_labels.push_back(prototypes.labels[i]);
    classes = std::max(classes, prototypes.labels[i] + 1);
  }
  for (size_t i = 0; i < queries.labels.size(); ++i) {
    if (queries.labels[i] < 0) continue;
    keep_q.push_back(static_cast<int64_t>(i));
    labels.push_back(queries.labels[i]);
    classes = std::max(classes, queries.labels[i] + 1);
  }
  if (keep_q.empty() || keep_p.empty()) throw ValidationError("zero-shot proxy needs labeled samples");
  auto proto_images = prototypes.images.index_select(0, torch::tensor(keep_p));
  std::vector<std::string> proto_ids;
  for (auto i : keep_p) proto_ids.push_back(prototypes.ids[i]);
  auto proto_emb = model.teacher->embed(proto_images, proto_ids);

  auto query_images = queries.images.index_select(0, torch::tensor(keep_q));
  std::vector<torch::Tensor> pooled;
  const int64_t chunk = 32;
  for (int64_t s = 0; s < query_images.size(0); s += chunk) {
    auto x = query_images.slice(0, s, std::min(s + chunk, query_images.size(0)));
    auto code = model.tokenize(x);
    pooled.push_back(model.post_head->forward(ungroup(code.signs.to(torch::kFloat32))));
  }
  return zero_shot_proxy(torch::cat(pooled), labels, proto_emb, proto_labels, classes);
}

MetricReport evaluate(ModelBundle& model, const EvalSpec& spec, uint64_t fingerprint) {
  torch::NoGradGuard no_grad;
  model.train(false);
  auto set = fixed_eval_set(spec.data, spec.samples, spec.resolution);
  const auto& qcfg = model.config().quantizer;
  CodebookUsageCounter usage(qcfg);
  std::vector<torch::Tensor> recons;
  for (int64_t s = 0; s < set.images.size(0); s += spec.batch_size) {
    auto x = set.images.slice(0, s, std::min<int64_t>(s + spec.batch_size, set.images.size(0)));
    auto code = model.tokenize(x);
    usage.add(code.ids);
    recons.push_back(model.decoder->forward(ungroup(code.signs.to(torch::kFloat32))));
  }
  auto recon = torch::cat(recons);

  MetricReport r;
  r.samples = set.images.size(0);
  r.resolution = spec.resolution;
  r.fingerprint = fingerprint;
  r.recon_mse = (set.images.to(torch::kFloat64) - recon.to(torch::kFloat64)).pow(2).mean().item<double>();
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (int64_t i = 0; i < r.samples; ++i) {
    psnr_sum += psnr(set.images[i], recon[i]);
    if (spec.resolution >= 11) ssim_sum += ssim(set.images[i], recon[i]);
  }
  r.psnr = psnr_sum / static_cast<double>(r.samples);
  r.ssim = spec.resolution >= 11 ? ssim_sum / static_cast<double>(r.samples) : std::nan("");
  r.usage = usage.result();
  if (spec.frechet && r.samples >= 2) {
    const PerceptualNet net(model.config().perceptual_seed);
    r.frechet_proxy = frechet_proxy(set.images, recon, net);
  }
  const bool labeled = std::any_of(set.labels.begin(), set.labels.end(), [](int l) { return l >= 0; });
  if (spec.zero_shot && model.post_head && model.teacher && labeled) {
    auto protos = fixed_eval_set(spec.prototypes, spec.prototype_samples, spec.resolution);
    r.zero_shot = zero_shot_accuracy(model, set, protos);
  }
  return r;
}

void write_report(const std::filesystem::path& dir, const MetricReport& report) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream text(dir / "report.txt");
  text << report.to_text();
  std::ofstream json(dir / "report.json");
  json << report.to_json().dump(1) << "\n";
  if (!text || !json) throw IoError("cannot write report in " + dir.string());
}

MetricReport read_report(const std::filesystem::path& dir) {
  std::ifstream in(dir / "report.json");
  if (!in) throw IoError("no report.json in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed report.json in " + dir.string() + ": " + e.what());
  }
  return MetricReport::from_json(j);
}

namespace {

std::map<std::string, std::string> run_config_entries(const std::filesystem::path& dir) {
  std::string text;
  if (std::ifstream in(dir / "config.cfg"); in) {
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  } else if (std::filesystem::exists(dir / "latest" / "manifest.json")) {
    text = load_checkpoint(dir / "latest").config_text;
  }
  std::map<std::string, std::string> out;
  if (text.empty()) return out;
  for (const auto& [k, v] : parse_config(text).entries) out[k] = v;
  return out;
}

std::string fixed(double v, int precision) {
  if (std::isnan(v)) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

std::string with_delta(std::optional<double> v, std::optional<double> base, int precision) {
  if (!v) return "-";
  std::string out = fixed(*v, precision);
  if (base && !std::isnan(*v) && !std::isnan(*base)) {
    std::ostringstream d;
    d << std::showpos << std::fixed << std::setprecision(precision) << (*v - *base);
    out += " (" + d.str() + ")";
  }
  return out;
}

}  // namespace

std::string ablation_report(const std::vector<std::filesystem::path>& run_dirs) {
  std::vector<MetricReport> reports;
  std::vector<std::map<std::string, std::string>> configs;
  for (const auto& dir : run_dirs) {
    reports.push_back(read_report(dir));
    configs.push_back(run_config_entries(dir));
  }
  std::set<std::string> keys;
  for (const auto& c : configs) {
    for (const auto& [k, v] : c) keys.insert(k);
  }
  std::vector<std::string> diff_keys;
  for (const auto& k : keys) {
    std::set<std::string> values;
    for (const auto& c : configs) {
      auto it = c.find(k);
      values.insert(it == c.end() ? "<unset>" : it->second);
    }
    if (values.size() > 1) diff_keys.push_back(k);
  }

  const std::vector<std::string> header{"run", "config", "psnr", "ssim", "recon_mse", "usage",
                                        "frechet_proxy", "zs_top1", "zs_top5"};
  std::vector<std::vector<std::string>> rows;
  const auto& base = reports.front();
  auto opt = [](double v) { return std::optional<double>(v); };
  for (size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    std::string label;
    for (const auto& k : diff_keys) {
      auto it = configs[i].find(k);
      if (!label.empty()) label += ", ";
      label += k + "=" + (it == configs[i].end() ? "<unset>" : it->second);
    }
    if (label.empty()) label = "-";
    const bool first = i == 0;
    std::optional<double> zs1, zs5, bz1, bz5;
    if (r.zero_shot) zs1 = r.zero_shot->top1, zs5 = r.zero_shot->top5;
    if (base.zero_shot) bz1 = base.zero_shot->top1, bz5 = base.zero_shot->top5;
    rows.push_back({run_dirs[i].filename().string(), label,
                    with_delta(opt(r.psnr), first ? std::nullopt : opt(base.psnr), 2),
                    with_delta(opt(r.ssim), first ? std::nullopt : opt(base.ssim), 4),
                    with_delta(opt(r.recon_mse), first ? std::nullopt : opt(base.recon_mse), 5),
                    with_delta(opt(r.usage.overall), first ? std::nullopt : opt(base.usage.overall), 4),
                    with_delta(r.frechet_proxy, first ? std::nullopt : base.frechet_proxy, 4),
                    with_delta(zs1, first ? std::nullopt : bz1, 4),
                    with_delta(zs5, first ? std::nullopt : bz5, 4)});
  }
  std::vector<size_t> width(header.size());
  for (size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (size_t c = 0; c < row.size(); ++c) {
      out << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      out << (c + 1 < row.size() ? "  " : "\n");
    }
  };
  emit(header);
  std::vector<std::string> rule;
  for (size_t c = 0; c < header.size(); ++c) rule.push_back(std::string(width[c], '-'));
  emit(rule);
  for (const auto& row : rows) emit(row);
  return out.str();
}

}  // namespace uniwetok
