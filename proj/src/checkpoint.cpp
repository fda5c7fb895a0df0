#include "vdet/checkpoint.hpp"

#include <algorithm>

#include "vdet/io.hpp"

namespace vdet {

namespace {

constexpr std::string_view kMagic = "VDETCKPT";

nlohmann::json append_tensor(std::string& payload, const std::string& name, const Tensor& t) {
  nlohmann::json entry = {{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}};
  for (double v : t.data()) io::append_f64le(payload, v);
  return entry;
}

Tensor read_tensor(const std::filesystem::path& path, const nlohmann::json& entry, const std::string& payload) {
  Shape shape = entry.at("shape").get<Shape>();
  for (auto d : shape) {
    if (d < 0) throw FormatError(path.string() + ": negative extent in manifest");
  }
  const auto offset = entry.at("offset").get<std::uint64_t>();
  const auto n = static_cast<std::uint64_t>(numel(shape));
  if (offset > payload.size() || n * 8 > payload.size() - offset) {
    throw FormatError(path.string() + ": tensor " + entry.at("name").get<std::string>() + " runs past the payload");
  }
  Tensor t(std::move(shape));
  for (std::uint64_t i = 0; i < n; ++i) t[static_cast<std::int64_t>(i)] = io::read_f64le(payload.data() + offset + i * 8);
  return t;
}

}  // namespace

Checkpoint capture_checkpoint(const ParameterStore& store, nlohmann::json meta) {
  Checkpoint c;
  c.meta = std::move(meta);
  for (const Parameter* p : store.all()) c.parameters.emplace_back(p->name, p->value);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string payload;
  auto params = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.parameters) params.push_back(append_tensor(payload, name, t));
  auto opt = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.optimizer_state) opt.push_back(append_tensor(payload, name, t));
  nlohmann::json header = {{"meta", ckpt.meta},
                           {"parameters", params},
                           {"optimizer", {{"steps", ckpt.optimizer_steps}, {"state", opt}}}};
  // Write-then-rename so an interrupted save never leaves a truncated checkpoint behind.
  auto tmp = path;
  tmp += ".tmp";
  io::write_framed(tmp, kMagic, header, payload);
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const io::FramedFile f = io::read_framed(path, kMagic);
  Checkpoint c;
  try {
    c.meta = f.header.at("meta");
    for (const auto& e : f.header.at("parameters")) {
      c.parameters.emplace_back(e.at("name").get<std::string>(), read_tensor(path, e, f.payload));
    }
    const auto& opt = f.header.at("optimizer");
    c.optimizer_steps = opt.at("steps").get<std::int64_t>();
    for (const auto& e : opt.at("state")) c.optimizer_state[e.at("name").get<std::string>()] = read_tensor(path, e, f.payload);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed checkpoint manifest: " + e.what());
  }
  return c;
}

void restore_parameters(ParameterStore& store, const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.parameters) by_name[name] = &t;
  for (const Parameter* p : std::as_const(store).all()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw ValidationError("parameter mismatch: " + p->name + " is missing from the checkpoint");
    if (it->second->shape() != p->value.shape()) {
      throw ValidationError("parameter mismatch: " + p->name + " has shape " + to_string(it->second->shape()) +
                            " in the checkpoint but " + to_string(p->value.shape()) + " in the model");
    }
  }
  if (ckpt.parameters.size() != store.size()) {
    for (const auto& [name, t] : ckpt.parameters) {
      if (!store.contains(name)) throw ValidationError("parameter mismatch: checkpoint has unexpected " + name);
    }
  }
  for (Parameter* p : store.all()) p->value = *by_name.at(p->name);
}

}  // namespace vdet
