#include "uniwetok/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "uniwetok/errors.hpp"

namespace uniwetok {

double LrSchedule::at(int64_t step, int64_t total_steps) const {
  if (warmup_steps > 0 && step < warmup_steps) {
    return base * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  if (kind == LrScheduleKind::constant) return base;
  const int64_t span = std::max<int64_t>(1, total_steps - warmup_steps);
  const double progress =
      std::clamp(static_cast<double>(step - warmup_steps) / static_cast<double>(span), 0.0, 1.0);
  const double floor = base * end_ratio;
  return floor + (base - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void StageConfig::validate(int downsample_factor, bool siglu) const {
  const std::string where = name + ": ";
  if (name != "stage1" && name != "stage2" && name != "stage3") {
    throw ConfigError("stages: unknown stage '" + name + "' (stage1 | stage2 | stage3)");
  }
  if (resolutions.empty()) throw ConfigError(where + "image size lists no resolution");
  if (name == "stage1" && resolutions.size() != 1) {
    throw ConfigError(where + "stage1 trains at exactly one resolution, got " +
                      std::to_string(resolutions.size()));
  }
  if (name == "stage3" && lr.kind != LrScheduleKind::cosine) {
    throw ConfigError(where + "learning rate schedule must be cosine for the annealing stage");
  }
  for (int r : resolutions) {
    if (r < downsample_factor || r % downsample_factor != 0) {
      throw ConfigError(where + "image size " + std::to_string(r) +
                        " is not divisible by the downsample factor " +
                        std::to_string(downsample_factor));
    }
  }
  if (datasets.empty()) throw ConfigError(where + "training data is empty");
  if (steps < 0) throw ConfigError(where + "total steps must be >= 0");
  if (batch_size < 1) throw ConfigError(where + "global batchsize must be positive");
  if (!(lr.base > 0.0)) throw ConfigError(where + "learning rate must be positive");
  if (lr.warmup_steps < 0) throw ConfigError(where + "warmup steps must be >= 0");
  if (!(lr.end_ratio >= 0.0 && lr.end_ratio <= 1.0)) {
    throw ConfigError(where + "cos decay end ratio must lie in [0, 1]");
  }
  weights.validate(siglu);
}

std::string RunConfig::text() const {
  std::ostringstream out;
  for (const auto& [k, v] : entries) out << k << " = " << v << "\n";
  return out.str();
}

uint64_t RunConfig::fingerprint() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

PriorConfig prior_preset(const std::string& name) {
  if (name == "BitDance-T") {
    // Sized to the stated 8.6M-parameter budget at token width 128.
    PriorConfig p;
    p.layers = 4;
    p.width = 416;
    p.heads = 8;
    p.timestep_embedding_dim = 128;
    return p;
  }
  if (name == "desk") return PriorConfig{};
  throw ConfigError("prior model: unknown prior '" + name + "' (-- | BitDance-T | desk)");
}

int known_teacher_dim(const std::string& name) {
  if (name == "ViT-SO400M-16-SigLIP2-384") return 1152;
  return 0;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::set<std::string>& stage_keys() {
  static const std::set<std::string> keys{
      "training data", "image size", "resolutions", "data augmentation", "total steps",
      "learning rate schedule", "learning rate", "warmup steps", "cos decay end ratio",
      "global batchsize", "alpha", "beta", "gamma", "delta", "theta", "mu", "eta",
      "disc start step"};
  return keys;
}

const std::set<std::string>& global_keys() {
  static const std::set<std::string> keys{
      "downsample", "ema", "ema decay", "g (group number)", "d' (group channel)", "optimizer",
      "optimizer momentum", "weight decay", "channel_mult", "channel", "num_res_blocks",
      "bottleneck channel double", "num_attn_blocks", "attention heads", "concurrent downsample",
      "generative decoder", "semantic teacher", "teacher dim", "teacher store",
      "SigLu activation", "pre distillation", "post distillation", "distill head",
      "prior model", "query token", "prior layers", "prior width", "prior heads",
      "entropy temperature", "disc channels", "perceptual seed", "data root", "stages", "seed",
      "eval data", "eval samples", "eval resolution"};
  return keys;
}

class Entries {
 public:
  Entries(std::map<std::string, std::pair<std::string, int>> values) : values_(std::move(values)) {}

  const std::string* find(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second.first;
  }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    auto it = values_.find(key);
    std::string where = it == values_.end() ? "" : " (line " + std::to_string(it->second.second) + ")";
    throw ConfigError("config key '" + key + "'" + where + ": " + why);
  }

  std::string str(const std::string& key, const std::string& fallback) const {
    const auto* v = find(key);
    return v ? *v : fallback;
  }

  bool boolean(const std::string& key, bool fallback) const {
    const auto* v = find(key);
    if (!v) return fallback;
    std::string s = *v;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    fail(key, "expected True or False, got '" + *v + "'");
  }

  double real(const std::string& key, double fallback) const {
    const auto* v = find(key);
    return v ? to_real(key, *v) : fallback;
  }

  int64_t integer(const std::string& key, int64_t fallback) const {
    const auto* v = find(key);
    return v ? to_integer(key, *v) : fallback;
  }

  std::vector<int64_t> int_list(const std::string& key) const {
    std::vector<int64_t> out;
    for (const auto& item : items(key)) out.push_back(to_integer(key, item));
    return out;
  }

  std::vector<std::string> items(const std::string& key) const {
    std::string s = trim(str(key, ""));
    if (!s.empty() && s.front() == '[') {
      if (s.back() != ']') fail(key, "unbalanced brackets in '" + s + "'");
      s = s.substr(1, s.size() - 2);
    }
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) fail(key, "empty list entry");
      out.push_back(item);
    }
    return out;
  }

  double to_real(const std::string& key, const std::string& text) const {
    try {
      size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      fail(key, "expected a number, got '" + text + "'");
    }
  }

  int64_t to_integer(const std::string& key, const std::string& text) const {
    try {
      size_t used = 0;
      const long long v = std::stoll(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      fail(key, "expected an integer, got '" + text + "'");
    }
  }

 private:
  std::map<std::string, std::pair<std::string, int>> values_;
};

bool is_known_kind(const std::string& entry) {
  std::string head = trim(entry.substr(0, entry.find_first_of(":@")));
  return head == "synthetic-texture" || head == "synthetic-glyph" || head == "synthetic-face" ||
         head == "dir";
}

std::vector<DatasetSpec> parse_datasets(const Entries& e, const std::string& key,
                                        const std::filesystem::path& data_root) {
  std::vector<DatasetSpec> out;
  for (const auto& item : e.items(key)) {
    try {
      if (is_known_kind(item)) {
        out.push_back(DatasetSpec::parse(item));
      } else {
        // A named external corpus resolves to a folder under the data root.
        DatasetSpec spec;
        std::string name = item;
        const auto at = item.rfind('@');
        if (at != std::string::npos) {
          spec = DatasetSpec::parse("dir:x" + item.substr(at));
          name = trim(item.substr(0, at));
        }
        spec.kind = DatasetKind::directory;
        spec.root = data_root / name;
        out.push_back(spec);
      }
    } catch (const ConfigError& err) {
      e.fail(key, err.what());
    }
  }
  if (out.empty()) e.fail(key, "no dataset given");
  return out;
}

std::vector<int> parse_image_size(const Entries& e, const std::string& key) {
  auto values = e.int_list(key);
  if (values.size() == 1) values.push_back(values[0]);
  if (values.size() != 2) e.fail(key, "expected [height, width]");
  if (values[0] != values[1]) e.fail(key, "only square images are supported");
  if (values[0] < 1) e.fail(key, "size must be positive");
  return {static_cast<int>(values[0])};
}

LrScheduleKind parse_schedule(const Entries& e, const std::string& key) {
  const std::string v = e.str(key, "consistent");
  if (v == "consistent" || v == "constant") return LrScheduleKind::constant;
  if (v == "cosine" || v == "cos" || v == "cosine-anneal") return LrScheduleKind::cosine;
  e.fail(key, "expected consistent or cosine, got '" + v + "'");
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, std::pair<std::string, int>> values;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    std::string bare = key;
    if (key.size() > 7 && key.compare(0, 5, "stage") == 0 && key[6] == '.') {
      if (key[5] < '1' || key[5] > '3') throw ConfigError("config key '" + key + "': unknown stage prefix");
      bare = key.substr(7);
      if (!stage_keys().count(bare)) {
        throw ConfigError("config key '" + key + "': '" + bare + "' cannot vary per stage");
      }
    } else if (!stage_keys().count(key) && !global_keys().count(key)) {
      throw ConfigError("config key '" + key + "' (line " + std::to_string(line_no) + "): unknown key");
    }
    if (!values.emplace(key, std::make_pair(value, line_no)).second) {
      throw ConfigError("config key '" + key + "' (line " + std::to_string(line_no) + "): duplicate");
    }
    cfg.entries.emplace_back(key, value);
  }
  const Entries e(std::move(values));

  // Model.
  auto& m = cfg.model;
  auto& q = m.quantizer;
  q.groups = static_cast<int>(e.integer("g (group number)", q.groups));
  q.bits_per_group = static_cast<int>(e.integer("d' (group channel)", q.bits_per_group));
  q.siglu = e.boolean("SigLu activation", true);
  q.entropy_temperature = e.real("entropy temperature", q.entropy_temperature);
  try {
    q.validate();
  } catch (const ConfigError& err) {
    e.fail("d' (group channel)", err.what());
  }

  auto& b = m.backbone;
  if (e.has("channel_mult")) {
    b.channel_mult.clear();
    for (auto v : e.int_list("channel_mult")) b.channel_mult.push_back(static_cast<int>(v));
  }
  b.base_channel = static_cast<int>(e.integer("channel", b.base_channel));
  b.num_res_blocks = static_cast<int>(e.integer("num_res_blocks", b.num_res_blocks));
  b.num_attn_blocks = static_cast<int>(e.integer("num_attn_blocks", b.num_attn_blocks));
  b.bottleneck_double = e.boolean("bottleneck channel double", b.bottleneck_double);
  b.concurrent_downsample = e.boolean("concurrent downsample", b.concurrent_downsample);
  b.attn_heads = static_cast<int>(e.integer("attention heads", 0));
  b.siglu = q.siglu;
  b.latent_width = q.code_width();
  try {
    b.validate();
  } catch (const ConfigError& err) {
    e.fail("channel_mult", err.what());
  }
  if (e.has("downsample")) {
    std::string v = e.str("downsample", "");
    const auto x = v.find_first_of("xX");
    int64_t f = 0;
    if (x == std::string::npos) {
      f = e.to_integer("downsample", trim(v));
    } else {
      const auto a = e.to_integer("downsample", trim(v.substr(0, x)));
      const auto c = e.to_integer("downsample", trim(v.substr(x + 1)));
      if (a != c) e.fail("downsample", "only square downsampling is supported");
      f = a;
    }
    if (f != b.downsample_factor()) {
      e.fail("downsample", "factor " + std::to_string(f) + " disagrees with channel_mult, which implies " +
                               std::to_string(b.downsample_factor()));
    }
  }
  m.generative_decoder = e.boolean("generative decoder", true);
  m.discriminator_channels = static_cast<int>(e.integer("disc channels", 32));
  m.perceptual_seed = static_cast<uint64_t>(e.integer("perceptual seed", 1234));

  // Distillation.
  m.arms.pre = e.boolean("pre distillation", false);
  m.arms.post = e.boolean("post distillation", false);
  {
    const std::string head = e.str("distill head", "linear");
    if (head == "linear") {
      m.head = PoolKind::linear;
    } else if (head == "attention") {
      m.head = PoolKind::attention;
    } else {
      e.fail("distill head", "expected linear or attention, got '" + head + "'");
    }
  }
  {
    const std::string name = e.str("semantic teacher", "--");
    auto& t = m.teacher;
    if (name == "--") {
      t.name = "--";
    } else if (name == "synthetic" || name.rfind("synthetic:", 0) == 0) {
      t.name = "synthetic";
      if (name.size() > 10) t.seed = static_cast<uint64_t>(e.to_integer("semantic teacher", name.substr(10)));
      t.dim = static_cast<int>(e.integer("teacher dim", 64));
    } else if (name.rfind("file:", 0) == 0) {
      t.name = "file";
      t.store = name.substr(5);
      t.dim = static_cast<int>(e.integer("teacher dim", 0));
    } else {
      t.name = name;
      t.dim = static_cast<int>(e.integer("teacher dim", known_teacher_dim(name)));
      if (t.dim <= 0) e.fail("semantic teacher", "unknown teacher '" + name + "' needs 'teacher dim'");
      t.store = e.str("teacher store", "");
    }
    if (t.enabled() && t.name != "file" && t.dim < 1) e.fail("teacher dim", "must be positive");
  }
  if ((m.arms.pre || m.arms.post) && !m.teacher.enabled()) {
    e.fail(m.arms.pre ? "pre distillation" : "post distillation", "distillation needs a semantic teacher");
  }

  // Generative prior.
  m.prior_model = e.str("prior model", "--");
  if (m.prior_enabled()) {
    try {
      m.prior = prior_preset(m.prior_model);
    } catch (const ConfigError& err) {
      e.fail("prior model", err.what());
    }
    m.prior.layers = static_cast<int>(e.integer("prior layers", m.prior.layers));
    m.prior.width = static_cast<int>(e.integer("prior width", m.prior.width));
    m.prior.heads = static_cast<int>(e.integer("prior heads", m.prior.heads));
    try {
      m.prior.validate();
    } catch (const ConfigError& err) {
      e.fail("prior model", err.what());
    }
  }
  m.prior.query_token = e.boolean("query token", false);

  // Optimization.
  if (e.str("optimizer", "Adam") != "Adam") e.fail("optimizer", "only Adam is supported");
  if (e.has("optimizer momentum")) {
    const auto betas = e.items("optimizer momentum");
    if (betas.size() != 2) e.fail("optimizer momentum", "expected 'beta1, beta2'");
    cfg.adam.beta1 = e.to_real("optimizer momentum", betas[0]);
    cfg.adam.beta2 = e.to_real("optimizer momentum", betas[1]);
    if (!(cfg.adam.beta1 >= 0 && cfg.adam.beta1 < 1 && cfg.adam.beta2 >= 0 && cfg.adam.beta2 < 1)) {
      e.fail("optimizer momentum", "betas must lie in [0, 1)");
    }
  }
  cfg.adam.weight_decay = e.real("weight decay", 0.0);
  if (cfg.adam.weight_decay < 0) e.fail("weight decay", "must be >= 0");
  cfg.ema = e.boolean("ema", true);
  cfg.ema_decay = e.real("ema decay", cfg.ema_decay);
  if (!(cfg.ema_decay >= 0.0 && cfg.ema_decay < 1.0)) e.fail("ema decay", "must lie in [0, 1)");
  cfg.seed = static_cast<uint64_t>(e.integer("seed", 0));
  const std::filesystem::path data_root = e.str("data root", "data");

  // Stages: every stage starts from the unprefixed values.
  std::vector<std::string> names{"stage1"};
  if (e.has("stages")) names = e.items("stages");
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] != "stage1" && names[i] != "stage2" && names[i] != "stage3") {
      e.fail("stages", "unknown stage '" + names[i] + "'");
    }
    if (i > 0 && names[i] <= names[i - 1]) {
      e.fail("stages", "stages must run in order stage1 -> stage2 -> stage3");
    }
  }
  for (const auto& [key, value] : cfg.entries) {
    if (key.size() > 7 && key.compare(0, 5, "stage") == 0 && key[6] == '.' &&
        std::find(names.begin(), names.end(), key.substr(0, 6)) == names.end()) {
      e.fail(key, "stage '" + key.substr(0, 6) + "' is not listed in stages");
    }
  }
  for (const auto& name : names) {
    auto key = [&](const std::string& k) {
      const std::string prefixed = name + "." + k;
      return e.has(prefixed) ? prefixed : k;
    };
    StageConfig s;
    s.name = name;
    if (e.has(key("training data"))) {
      s.datasets = parse_datasets(e, key("training data"), data_root);
    } else {
      s.datasets = {DatasetSpec::parse("synthetic-texture:0")};
    }
    if (e.has(key("resolutions"))) {
      s.resolutions.clear();
      for (auto r : e.int_list(key("resolutions"))) s.resolutions.push_back(static_cast<int>(r));
    } else if (e.has(key("image size"))) {
      s.resolutions = parse_image_size(e, key("image size"));
    }
    s.augmentation = Augmentation::random_crop;
    try {
      s.augmentation = parse_augmentation(e.str(key("data augmentation"), "random crop"));
    } catch (const ConfigError& err) {
      e.fail(key("data augmentation"), err.what());
    }
    s.steps = e.integer(key("total steps"), 0);
    s.batch_size = static_cast<int>(e.integer(key("global batchsize"), s.batch_size));
    s.lr.kind = parse_schedule(e, key("learning rate schedule"));
    s.lr.base = e.real(key("learning rate"), s.lr.base);
    s.lr.warmup_steps = e.integer(key("warmup steps"), 0);
    s.lr.end_ratio = e.real(key("cos decay end ratio"), 1.0);
    auto& w = s.weights;
    const bool distilling = m.arms.pre || m.arms.post;
    w.alpha = e.real(key("alpha"), q.siglu ? 0.0 : 0.25);
    w.beta = e.real(key("beta"), 0.1);
    w.gamma = e.real(key("gamma"), 0.1);
    w.delta = e.real(key("delta"), 0.1);
    w.theta = e.real(key("theta"), distilling ? 1.0 : 0.0);
    w.mu = e.real(key("mu"), m.prior_enabled() ? 1.0 : 0.0);
    w.eta = e.real(key("eta"), 1.0);
    w.disc_start_step = e.integer(key("disc start step"), 1000);
    if (w.mu > 0.0 && !m.prior_enabled()) e.fail(key("mu"), "mu > 0 needs a prior model");
    try {
      s.validate(b.downsample_factor(), q.siglu);
    } catch (const ConfigError& err) {
      const std::string what = err.what();
      if (what.find("alpha") != std::string::npos) e.fail(key("alpha"), what);
      throw;
    }
    cfg.stages.push_back(std::move(s));
  }
  m.arms.eta = cfg.stages.front().weights.eta;

  // Evaluation.
  if (e.has("eval data")) {
    auto specs = parse_datasets(e, "eval data", data_root);
    if (specs.size() != 1) e.fail("eval data", "expected exactly one dataset");
    cfg.eval_data = specs.front();
  } else {
    cfg.eval_data = cfg.stages.front().datasets.front();
    if (cfg.eval_data.kind != DatasetKind::directory) cfg.eval_data.seed += 1000003;
  }
  cfg.eval_samples = static_cast<int>(e.integer("eval samples", cfg.eval_samples));
  if (cfg.eval_samples < 2) e.fail("eval samples", "must be >= 2");
  cfg.eval_resolution = static_cast<int>(e.integer("eval resolution", 0));
  if (cfg.eval_resolution != 0 && cfg.eval_resolution % b.downsample_factor() != 0) {
    e.fail("eval resolution", "not divisible by the downsample factor");
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace uniwetok
