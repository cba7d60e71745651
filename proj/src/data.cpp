#include "uniwetok/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "uniwetok/errors.hpp"
#include "uniwetok/image_io.hpp"

namespace uniwetok {

uint64_t Rng::mix(uint64_t a, uint64_t b) {
  // splitmix64 finalizer over a combined word
  uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

namespace {

const std::map<std::string, DatasetKind>& kind_names() {
  static const std::map<std::string, DatasetKind> names{
      {"synthetic-texture", DatasetKind::synthetic_texture},
      {"synthetic-glyph", DatasetKind::synthetic_glyph},
      {"synthetic-face", DatasetKind::synthetic_face},
      {"dir", DatasetKind::directory}};
  return names;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

// RGB float canvas in [0, 1].
struct Canvas {
  int size;
  std::vector<float> px;
  explicit Canvas(int n) : size(n), px(static_cast<size_t>(n) * n * 3, 0.0f) {}
  float* at(int y, int x) { return px.data() + (static_cast<size_t>(y) * size + x) * 3; }
  void blend(int y, int x, const std::array<double, 3>& c, double a) {
    if (a <= 0.0) return;
    float* p = at(y, x);
    for (int k = 0; k < 3; ++k) p[k] = static_cast<float>(p[k] * (1.0 - a) + c[k] * a);
  }
  torch::Tensor tensor() const {
    auto t = torch::from_blob(const_cast<float*>(px.data()), {size, size, 3}, torch::kFloat32);
    return (t.clamp(0.0, 1.0) * 2.0 - 1.0).clone();
  }
};

std::array<double, 3> hsv(double h, double s, double v) {
  h = std::fmod(h, 1.0);
  if (h < 0) h += 1.0;
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

// Coverage of an axis-aligned ellipse with a one-pixel soft edge.
double ellipse_cover(double x, double y, double cx, double cy, double rx, double ry) {
  const double dx = (x - cx) / rx, dy = (y - cy) / ry;
  const double r = std::sqrt(dx * dx + dy * dy);
  const double edge = 1.0 / std::min(rx, ry);
  return 1.0 - smoothstep(1.0 - edge, 1.0 + edge, r);
}

// 5x7 bitmap font, one string per row, '#' = ink.
struct Glyph {
  char ch;
  const char* rows[7];
};

constexpr Glyph kFont[] = {
    {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
    {'1', {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
    {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
    {'3', {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."}},
    {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
    {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
    {'6', {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."}},
    {'7', {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
    {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
    {'9', {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."}},
    {'A', {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
    {'B', {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."}},
    {'C', {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."}},
    {'D', {"###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."}},
    {'E', {"#####", "#....", "#....", "####.", "#....", "#....", "#####"}},
    {'F', {"#####", "#....", "#....", "####.", "#....", "#....", "#...."}},
    {'G', {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"}},
    {'H', {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
    {'I', {".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
    {'J', {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."}},
    {'K', {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"}},
    {'L', {"#....", "#....", "#....", "#....", "#....", "#....", "#####"}},
    {'M', {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"}},
    {'N', {"#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"}},
    {'O', {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
    {'P', {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."}},
    {'Q', {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"}},
    {'R', {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"}},
    {'S', {".####", "#....", "#....", ".###.", "....#", "....#", "####."}},
    {'T', {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."}},
    {'U', {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
    {'V', {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
    {'W', {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."}},
    {'X', {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"}},
    {'Y', {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."}},
    {'Z', {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"}},
};
constexpr int kFontSize = static_cast<int>(sizeof(kFont) / sizeof(kFont[0]));

class SyntheticSource final : public SampleSource {
 public:
  SyntheticSource(DatasetKind kind, uint64_t seed, int size) : kind_(kind), seed_(seed), size_(size) {}
  Sample get(uint64_t index) const override {
    switch (kind_) {
      case DatasetKind::synthetic_texture: return render_texture(seed_, index, size_);
      case DatasetKind::synthetic_glyph: return render_glyph(seed_, index, size_);
      case DatasetKind::synthetic_face: return render_face(seed_, index, size_);
      default: throw InternalError("not a synthetic kind");
    }
  }

 private:
  DatasetKind kind_;
  uint64_t seed_;
  int size_;
};

class DirectorySource final : public SampleSource {
 public:
  DirectorySource(const std::filesystem::path& root, bool labeled) {
    std::error_code ec;
    if (!std::filesystem::is_directory(root, ec)) {
      throw DataError("dataset directory not found or unreadable: " + root.string());
    }
    for (auto it = std::filesystem::recursive_directory_iterator(root, ec);
         !ec && it != std::filesystem::recursive_directory_iterator(); it.increment(ec)) {
      if (it->is_regular_file() && it->path().extension() == ".png") files_.push_back(it->path());
    }
    if (ec) throw DataError("cannot list dataset directory " + root.string() + ": " + ec.message());
    if (files_.empty()) throw DataError("dataset directory holds no PNG images: " + root.string());
    std::sort(files_.begin(), files_.end());
    if (labeled) {
      std::set<std::string> names;
      for (const auto& f : files_) names.insert(f.parent_path().filename().string());
      std::map<std::string, int> index;
      for (const auto& n : names) index.emplace(n, static_cast<int>(index.size()));
      for (const auto& f : files_) labels_.push_back(index.at(f.parent_path().filename().string()));
    }
    root_ = root;
  }
  Sample get(uint64_t index) const override {
    const size_t i = index % files_.size();
    Sample s;
    s.image = read_png(files_[i]);
    s.id = std::filesystem::relative(files_[i], root_).generic_string();
    s.label = labels_.empty() ? -1 : labels_[i];
    return s;
  }
  uint64_t size() const override { return files_.size(); }

 private:
  std::filesystem::path root_;
  std::vector<std::filesystem::path> files_;
  std::vector<int> labels_;
};

}  // namespace

DatasetSpec DatasetSpec::parse(const std::string& raw) {
  std::string text = trim(raw);
  DatasetSpec spec;
  const auto at = text.rfind('@');
  if (at != std::string::npos) {
    const std::string w = trim(text.substr(at + 1));
    try {
      size_t used = 0;
      spec.weight = std::stod(w, &used);
      if (used != w.size()) throw std::invalid_argument(w);
    } catch (const std::exception&) {
      throw ConfigError("bad mixture weight '" + w + "' in dataset '" + raw + "'");
    }
    if (!(spec.weight >= 0.0) || !std::isfinite(spec.weight)) {
      throw ConfigError("mixture weight must be finite and nonnegative in '" + raw + "'");
    }
    text = trim(text.substr(0, at));
  }
  const auto colon = text.find(':');
  const std::string kind = colon == std::string::npos ? text : text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  auto it = kind_names().find(kind);
  if (it == kind_names().end()) throw ConfigError("unknown dataset kind '" + kind + "'");
  spec.kind = it->second;
  if (spec.kind == DatasetKind::directory) {
    if (arg.empty()) throw ConfigError("directory dataset needs a path: dir:<path>");
    spec.root = arg;
  } else if (!arg.empty()) {
    try {
      size_t used = 0;
      spec.seed = std::stoull(arg, &used);
      if (used != arg.size()) throw std::invalid_argument(arg);
    } catch (const std::exception&) {
      throw ConfigError("bad dataset seed '" + arg + "' in '" + raw + "'");
    }
  }
  return spec;
}

std::string DatasetSpec::describe() const {
  std::string base;
  for (const auto& [name, k] : kind_names()) {
    if (k == kind) base = name;
  }
  base += kind == DatasetKind::directory ? ":" + root.string() : ":" + std::to_string(seed);
  char w[32];
  std::snprintf(w, sizeof(w), "@%g", weight);
  return base + w;
}

std::unique_ptr<SampleSource> make_dataset(const DatasetSpec& spec) {
  if (spec.native_size < 8) throw ConfigError("synthetic native size must be >= 8");
  if (spec.kind == DatasetKind::directory) {
    return std::make_unique<DirectorySource>(spec.root, spec.labeled);
  }
  return std::make_unique<SyntheticSource>(spec.kind, spec.seed, spec.native_size);
}

Sample render_texture(uint64_t seed, uint64_t index, int size) {
  Rng rng(Rng::mix(seed, index));
  const int label = static_cast<int>(rng.below(kTextureClasses));
  // Class identity lives in orientation, frequency band and palette.
  const double theta = (label % 4) * std::numbers::pi / 4.0 + rng.uniform(-0.15, 0.15);
  const double freq = (label < 4 ? 3.0 : 6.0) * rng.uniform(0.85, 1.15);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double theta2 = rng.uniform(0.0, std::numbers::pi);
  const double freq2 = rng.uniform(2.0, 8.0);
  const double phase2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double hue = label / static_cast<double>(kTextureClasses) + rng.uniform(-0.03, 0.03);
  const auto c0 = hsv(hue, rng.uniform(0.5, 0.8), rng.uniform(0.15, 0.35));
  const auto c1 = hsv(hue + 0.08, rng.uniform(0.3, 0.6), rng.uniform(0.75, 0.95));
  Canvas canvas(size);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double ct2 = std::cos(theta2), st2 = std::sin(theta2);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = x / static_cast<double>(size), v = y / static_cast<double>(size);
      const double g1 = std::sin(2 * std::numbers::pi * freq * (u * ct + v * st) + phase);
      const double g2 = std::sin(2 * std::numbers::pi * freq2 * (u * ct2 + v * st2) + phase2);
      const double s = std::clamp(0.5 + 0.5 * (0.8 * g1 + 0.2 * g2) + 0.03 * rng.normal(), 0.0, 1.0);
      float* p = canvas.at(y, x);
      for (int k = 0; k < 3; ++k) p[k] = static_cast<float>(c0[k] * (1 - s) + c1[k] * s);
    }
  }
  return {canvas.tensor(), "texture:" + std::to_string(seed) + ":" + std::to_string(index), label};
}

Sample render_glyph(uint64_t seed, uint64_t index, int size) {
  Rng rng(Rng::mix(seed ^ 0x676c797068ULL, index));
  const bool dark_text = rng.uniform() < 0.5;
  const auto bg = hsv(rng.uniform(), rng.uniform(0.0, 0.3), dark_text ? rng.uniform(0.8, 1.0)
                                                                       : rng.uniform(0.0, 0.2));
  const auto fg = hsv(rng.uniform(), rng.uniform(0.0, 0.8), dark_text ? rng.uniform(0.0, 0.25)
                                                                       : rng.uniform(0.8, 1.0));
  Canvas canvas(size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) canvas.blend(y, x, bg, 1.0);
  }
  const int scale = std::max(1, static_cast<int>(size / 32) + static_cast<int>(rng.below(2)));
  const int cell_w = 6 * scale, cell_h = 9 * scale;
  const int lines = std::max(1, std::min(4, size / cell_h));
  const int top = static_cast<int>(rng.below(std::max(1, size - lines * cell_h + 1)));
  for (int line = 0; line < lines; ++line) {
    const int max_chars = std::max(1, size / cell_w);
    const int chars = 1 + static_cast<int>(rng.below(max_chars));
    const int left = static_cast<int>(rng.below(std::max(1, size - chars * cell_w + 1)));
    for (int c = 0; c < chars; ++c) {
      const Glyph& g = kFont[rng.below(kFontSize)];
      for (int r = 0; r < 7; ++r) {
        for (int col = 0; col < 5; ++col) {
          if (g.rows[r][col] != '#') continue;
          for (int dy = 0; dy < scale; ++dy) {
            for (int dx = 0; dx < scale; ++dx) {
              const int y = top + line * cell_h + r * scale + dy;
              const int x = left + c * cell_w + col * scale + dx;
              if (y < size && x < size) canvas.blend(y, x, fg, 1.0);
            }
          }
        }
      }
    }
  }
  return {canvas.tensor(), "glyph:" + std::to_string(seed) + ":" + std::to_string(index), -1};
}

Sample render_face(uint64_t seed, uint64_t index, int size) {
  Rng rng(Rng::mix(seed ^ 0x66616365ULL, index));
  const auto top = hsv(rng.uniform(), rng.uniform(0.1, 0.5), rng.uniform(0.4, 0.9));
  const auto bottom = hsv(rng.uniform(), rng.uniform(0.1, 0.5), rng.uniform(0.2, 0.7));
  const double tone = rng.uniform();
  const std::array<double, 3> skin{0.95 - 0.55 * tone, 0.78 - 0.5 * tone, 0.65 - 0.45 * tone};
  const auto hair = hsv(rng.uniform(0.02, 0.12), rng.uniform(0.3, 0.8), rng.uniform(0.05, 0.5));
  const std::array<double, 3> lips{0.75 - 0.3 * tone, 0.3, 0.3};
  const std::array<double, 3> white{0.95, 0.95, 0.95};
  const auto iris = hsv(rng.uniform(), rng.uniform(0.3, 0.8), rng.uniform(0.1, 0.5));
  const double n = size;
  const double cx = n * rng.uniform(0.45, 0.55), cy = n * rng.uniform(0.5, 0.58);
  const double rx = n * rng.uniform(0.26, 0.32), ry = n * rng.uniform(0.34, 0.4);
  const double eye_dx = rx * rng.uniform(0.35, 0.45), eye_y = cy - ry * rng.uniform(0.1, 0.25);
  const double eye_rx = rx * rng.uniform(0.16, 0.22), eye_ry = eye_rx * rng.uniform(0.45, 0.7);
  const double mouth_y = cy + ry * rng.uniform(0.4, 0.55), mouth_rx = rx * rng.uniform(0.3, 0.5);
  Canvas canvas(size);
  for (int y = 0; y < size; ++y) {
    const double t = y / n;
    std::array<double, 3> c{};
    for (int k = 0; k < 3; ++k) c[k] = top[k] * (1 - t) + bottom[k] * t;
    for (int x = 0; x < size; ++x) canvas.blend(y, x, c, 1.0);
  }
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      canvas.blend(y, x, hair, ellipse_cover(px, py, cx, cy - ry * 0.2, rx * 1.12, ry * 0.95));
      canvas.blend(y, x, skin, ellipse_cover(px, py, cx, cy, rx, ry));
      canvas.blend(y, x, hair, ellipse_cover(px, py, cx, cy - ry * 0.85, rx * 0.95, ry * 0.3));
      for (double side : {-1.0, 1.0}) {
        const double ex = cx + side * eye_dx;
        canvas.blend(y, x, white, ellipse_cover(px, py, ex, eye_y, eye_rx, eye_ry));
        canvas.blend(y, x, iris, ellipse_cover(px, py, ex, eye_y, eye_ry * 0.8, eye_ry * 0.8));
      }
      const double nose = ellipse_cover(px, py, cx, cy + ry * 0.15, rx * 0.07, ry * 0.16);
      canvas.blend(y, x, {skin[0] * 0.8, skin[1] * 0.75, skin[2] * 0.75}, nose);
      const double outer = ellipse_cover(px, py, cx, mouth_y - ry * 0.08, mouth_rx, ry * 0.16);
      const double inner = ellipse_cover(px, py, cx, mouth_y - ry * 0.14, mouth_rx, ry * 0.14);
      canvas.blend(y, x, lips, std::max(0.0, outer - inner));
    }
  }
  return {canvas.tensor(), "face:" + std::to_string(seed) + ":" + std::to_string(index), -1};
}

torch::Tensor crop_resize(const torch::Tensor& image, int64_t top, int64_t left, int64_t side,
                          int64_t size) {
  auto crop = image.slice(0, top, top + side).slice(1, left, left + side);
  if (side == size) return crop.contiguous();
  namespace F = torch::nn::functional;
  auto nchw = crop.permute({2, 0, 1}).unsqueeze(0);
  auto out = F::interpolate(nchw, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{size, size})
                                      .mode(torch::kBilinear)
                                      .align_corners(false)
                                      .antialias(side > size));
  return out.squeeze(0).permute({1, 2, 0}).contiguous();
}

torch::Tensor center_resize(const torch::Tensor& image, int64_t size) {
  const int64_t side = std::min(image.size(0), image.size(1));
  return crop_resize(image, (image.size(0) - side) / 2, (image.size(1) - side) / 2, side, size);
}

Augmentation parse_augmentation(const std::string& text) {
  if (text == "random crop") return Augmentation::random_crop;
  if (text == "center crop" || text == "none") return Augmentation::center_crop;
  throw ConfigError("unknown data augmentation '" + text + "' (random crop | center crop)");
}

MultiResolutionBatcher::MultiResolutionBatcher(std::vector<DatasetSpec> datasets,
                                               std::vector<int> resolutions, int batch_size,
                                               int downsample_factor, uint64_t seed,
                                               Augmentation augmentation)
    : specs_(std::move(datasets)),
      resolutions_(std::move(resolutions)),
      batch_size_(batch_size),
      seed_(seed),
      augmentation_(augmentation) {
  if (specs_.empty()) throw ConfigError("training data lists no datasets");
  if (resolutions_.empty()) throw ConfigError("no training resolution given");
  if (batch_size_ < 1) throw ConfigError("batch size must be positive");
  for (int r : resolutions_) {
    if (r < downsample_factor || r % downsample_factor != 0) {
      throw ConfigError("resolution " + std::to_string(r) + " is not divisible by downsample factor " +
                        std::to_string(downsample_factor));
    }
  }
  double total = 0.0;
  for (const auto& s : specs_) total += s.weight;
  if (!(total > 0.0)) throw ConfigError("dataset mixture weights sum to zero");
  for (const auto& s : specs_) {
    mixture_.push_back(s.weight / total);
    sources_.push_back(make_dataset(s));
  }
}

Batch MultiResolutionBatcher::batch(int64_t step) const {
  Rng rng(Rng::mix(seed_, static_cast<uint64_t>(step)));
  Batch out;
  out.resolution = resolutions_[rng.below(static_cast<int64_t>(resolutions_.size()))];
  std::vector<torch::Tensor> images;
  for (int i = 0; i < batch_size_; ++i) {
    const double u = rng.uniform();
    size_t k = 0;
    double acc = mixture_[0];
    while (u >= acc && k + 1 < mixture_.size()) acc += mixture_[++k];
    const uint64_t n = sources_[k]->size();
    const uint64_t index = n ? rng.bits() % n : rng.bits();
    Sample s = sources_[k]->get(index);
    const int64_t h = s.image.size(0), w = s.image.size(1);
    const int64_t full = std::min(h, w);
    torch::Tensor img;
    if (augmentation_ == Augmentation::random_crop) {
      const int64_t side = std::max<int64_t>(1, static_cast<int64_t>(full * rng.uniform(0.8, 1.0)));
      const int64_t top = rng.below(h - side + 1), left = rng.below(w - side + 1);
      img = crop_resize(s.image, top, left, side, out.resolution);
    } else {
      img = center_resize(s.image, out.resolution);
    }
    images.push_back(img);
    out.ids.push_back(std::move(s.id));
    out.labels.push_back(s.label);
    out.source.push_back(static_cast<int>(k));
  }
  out.images = torch::stack(images);
  return out;
}

Batch fixed_eval_set(const DatasetSpec& spec, int count, int resolution) {
  if (count < 1) throw ValidationError("eval set needs at least one sample");
  auto source = make_dataset(spec);
  Batch out;
  out.resolution = resolution;
  std::vector<torch::Tensor> images;
  for (int i = 0; i < count; ++i) {
    Sample s = source->get(static_cast<uint64_t>(i));
    images.push_back(center_resize(s.image, resolution));
    out.ids.push_back(std::move(s.id));
    out.labels.push_back(s.label);
    out.source.push_back(0);
  }
  out.images = torch::stack(images);
  return out;
}

}  // namespace uniwetok
