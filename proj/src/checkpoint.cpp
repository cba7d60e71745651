#include "uniwetok/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "uniwetok/errors.hpp"

namespace uniwetok {

static_assert(std::endian::native == std::endian::little, "payload layout assumes a little-endian host");

namespace {

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw InternalError("unsupported checkpoint dtype");
  }
}

torch::ScalarType dtype_from(const std::string& name) {
  if (name == "f32") return torch::kFloat32;
  if (name == "f64") return torch::kFloat64;
  if (name == "i64") return torch::kInt64;
  throw FormatError("unknown tensor dtype '" + name + "' in checkpoint");
}

}  // namespace

std::map<std::string, torch::Tensor> Checkpoint::with_prefix(const std::string& prefix) const {
  std::map<std::string, torch::Tensor> out;
  for (const auto& [name, t] : tensors) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.emplace(name.substr(prefix.size()), t);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  nlohmann::json manifest;
  manifest["format"] = "uniwetok-checkpoint";
  manifest["version"] = 1;
  manifest["stage"] = ck.stage;
  manifest["stage_step"] = ck.stage_step;
  manifest["stage_complete"] = ck.stage_complete;
  manifest["seed"] = ck.seed;
  manifest["config"] = ck.config_text;
  auto table = nlohmann::json::array();

  std::ofstream payload(dir / "payload.bin", std::ios::binary);
  if (!payload) throw IoError("cannot write " + (dir / "payload.bin").string());
  uint64_t offset = 0;
  for (const auto& [name, tensor] : ck.tensors) {
    auto t = tensor.detach().cpu().contiguous();
    const uint64_t bytes = static_cast<uint64_t>(t.numel()) * t.element_size();
    table.push_back({{"name", name},
                     {"dtype", dtype_name(t.scalar_type())},
                     {"shape", t.sizes().vec()},
                     {"offset", offset},
                     {"bytes", bytes}});
    payload.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(bytes));
    offset += bytes;
  }
  payload.close();
  if (!payload) throw IoError("short write on checkpoint payload in " + dir.string());
  manifest["tensors"] = table;
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(1) << "\n";
  if (!out) throw IoError("cannot write checkpoint manifest in " + dir.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto payload_path = dir / "payload.bin";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("checkpoint not found: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  std::ifstream payload(payload_path, std::ios::binary | std::ios::ate);
  if (!payload) throw IoError("checkpoint payload missing: " + payload_path.string());
  const auto payload_size = static_cast<uint64_t>(payload.tellg());

  Checkpoint ck;
  try {
    if (manifest.at("format") != "uniwetok-checkpoint" || manifest.at("version") != 1) {
      throw FormatError("unsupported checkpoint format in " + dir.string());
    }
    ck.stage = manifest.at("stage").get<std::string>();
    ck.stage_step = manifest.at("stage_step").get<int64_t>();
    ck.stage_complete = manifest.at("stage_complete").get<bool>();
    ck.seed = manifest.at("seed").get<uint64_t>();
    ck.config_text = manifest.at("config").get<std::string>();
    for (const auto& entry : manifest.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      const auto dtype = dtype_from(entry.at("dtype").get<std::string>());
      const auto offset = entry.at("offset").get<uint64_t>();
      const auto bytes = entry.at("bytes").get<uint64_t>();
      auto t = torch::empty(shape, dtype);
      if (static_cast<uint64_t>(t.numel()) * t.element_size() != bytes) {
        throw FormatError("tensor " + name + " byte count disagrees with its shape");
      }
      if (offset + bytes > payload_size) {
        throw FormatError("tensor " + name + " extends past the payload end");
      }
      payload.seekg(static_cast<std::streamoff>(offset));
      payload.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(bytes));
      if (!payload) throw FormatError("short read for tensor " + name);
      ck.tensors.emplace(name, t);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  return ck;
}

void assign_tensors(const std::map<std::string, torch::Tensor>& source,
                    const std::vector<std::pair<std::string, torch::Tensor>>& targets,
                    const std::string& what) {
  torch::NoGradGuard no_grad;
  for (const auto& [name, target] : targets) {
    auto it = source.find(name);
    if (it == source.end()) throw FormatError(what + " is missing tensor " + name);
    if (it->second.sizes() != target.sizes()) {
      std::ostringstream msg;
      msg << what << " tensor " << name << " has shape " << it->second.sizes() << ", model expects "
          << target.sizes();
      throw FormatError(msg.str());
    }
    target.copy_(it->second);
  }
}

}  // namespace uniwetok
