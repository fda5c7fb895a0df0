#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vdet/autodiff.hpp"

namespace vdet {

/// Named tensors plus free-form metadata, stored as "VDETCKPT", u64 LE header length, a JSON
/// header (metadata and a manifest of name, shape and byte offset per tensor), then the float64
/// little-endian payload.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> parameters;  // registration order
  std::map<std::string, Tensor> optimizer_state;
  std::int64_t optimizer_steps = 0;
};

Checkpoint capture_checkpoint(const ParameterStore& store, nlohmann::json meta);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into `store`. Names and shapes must agree exactly; the first
/// disagreement (in store registration order) is reported by name.
void restore_parameters(ParameterStore& store, const Checkpoint& ckpt);

}  // namespace vdet
