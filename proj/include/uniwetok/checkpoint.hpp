#pragma once

// A checkpoint is a directory holding manifest.json (run metadata plus a
// tensor table of name, dtype, shape, byte offset and length) and
// payload.bin (raw little-endian tensor bytes in table order).

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace uniwetok {

struct Checkpoint {
  std::map<std::string, torch::Tensor> tensors;
  std::string config_text;
  std::string stage;           // stage the tensors belong to
  int64_t stage_step = 0;      // optimizer steps completed within `stage`
  bool stage_complete = false;
  uint64_t seed = 0;

  // Tensors whose names start with `prefix`, with the prefix stripped.
  std::map<std::string, torch::Tensor> with_prefix(const std::string& prefix) const;
};

// Throws IoError.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);
// Throws IoError when missing, FormatError when the table or payload is inconsistent.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Copies `source` into the named tensors of `targets`; throws FormatError on a
// missing name or shape mismatch.
void assign_tensors(const std::map<std::string, torch::Tensor>& source,
                    const std::vector<std::pair<std::string, torch::Tensor>>& targets,
                    const std::string& what);

}  // namespace uniwetok
