#include "vdet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "vdet/io.hpp"
#include "vdet/rng.hpp"

namespace vdet::synth {

namespace {

constexpr double kTwoPi = 6.283185307179586476925;
constexpr double kGap = 3.0;  // minimum clearance between object surfaces, voxels
constexpr std::string_view kVolumeMagic = "VDETVOL1";

struct Wave {
  double fx, fy, fz, phase, amp;
};

double in_plane_dist(double ax, double ay, double bx, double by) { return std::hypot(ax - bx, ay - by); }

bool tube_covers(const Tube& t, std::int64_t z) { return z >= t.z0 && z <= t.z1; }

bool sphere_clear(const Sphere& s, const std::vector<Sphere>& spheres, const std::vector<Tube>& tubes) {
  for (const auto& o : spheres) {
    const double d = std::sqrt(std::pow(s.cx - o.cx, 2) + std::pow(s.cy - o.cy, 2) +
                               std::pow(static_cast<double>(s.cz - o.cz), 2));
    if (d < s.radius + o.radius + kGap) return false;
  }
  for (const auto& t : tubes) {
    for (std::int64_t z = t.z0; z <= t.z1; ++z) {
      if (std::abs(static_cast<double>(z - s.cz)) >= s.radius + kGap) continue;
      const auto i = static_cast<std::size_t>(z - t.z0);
      if (in_plane_dist(s.cx, s.cy, t.axis_x[i], t.axis_y[i]) < s.radius + t.radius + kGap) return false;
    }
  }
  return true;
}

bool tube_clear(const Tube& t, const std::vector<Tube>& tubes) {
  for (const auto& o : tubes) {
    for (std::int64_t z = std::max(t.z0, o.z0); z <= std::min(t.z1, o.z1); ++z) {
      const auto i = static_cast<std::size_t>(z - t.z0), j = static_cast<std::size_t>(z - o.z0);
      if (in_plane_dist(t.axis_x[i], t.axis_y[i], o.axis_x[j], o.axis_y[j]) < t.radius + o.radius + kGap) return false;
    }
  }
  return true;
}

Tube place_tube(Rng& rng, const SynthConfig& cfg, const std::vector<Tube>& placed) {
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    Tube t;
    t.radius = rng.uniform(cfg.min_tube_radius, cfg.max_tube_radius);
    const std::int64_t len = rng.uniform_int(cfg.min_tube_length, cfg.depth);
    t.z0 = rng.uniform_int(0, cfg.depth - len);
    t.z1 = t.z0 + len - 1;
    const double margin = t.radius + 2.0;
    double x = rng.uniform(margin, static_cast<double>(cfg.width) - margin);
    double y = rng.uniform(margin, static_cast<double>(cfg.height) - margin);
    const double sx = rng.uniform(-cfg.max_tube_slope, cfg.max_tube_slope);
    const double sy = rng.uniform(-cfg.max_tube_slope, cfg.max_tube_slope);
    bool inside = true;
    for (std::int64_t z = t.z0; z <= t.z1; ++z) {
      t.axis_x.push_back(x);
      t.axis_y.push_back(y);
      inside = inside && x >= margin && x <= static_cast<double>(cfg.width) - margin && y >= margin &&
               y <= static_cast<double>(cfg.height) - margin;
      // Small per-slice jitter on top of the drift.
      x += sx + rng.uniform(-0.25, 0.25);
      y += sy + rng.uniform(-0.25, 0.25);
    }
    if (inside && tube_clear(t, placed)) return t;
  }
  throw GenerationError("could not place a tube after " + std::to_string(cfg.max_retries) + " attempts");
}

Sphere place_sphere(Rng& rng, const SynthConfig& cfg, const std::vector<Sphere>& spheres,
                    const std::vector<Tube>& tubes) {
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    Sphere s;
    s.radius = rng.uniform(cfg.min_radius, cfg.max_radius);
    const double margin = s.radius + 2.0;
    s.cx = rng.uniform(margin, static_cast<double>(cfg.width) - margin);
    s.cy = rng.uniform(margin, static_cast<double>(cfg.height) - margin);
    s.cz = rng.uniform_int(1, cfg.depth - 2);
    if (sphere_clear(s, spheres, tubes)) return s;
  }
  throw GenerationError("could not place a lesion after " + std::to_string(cfg.max_retries) + " attempts");
}

}  // namespace

void SynthConfig::validate() const {
  std::vector<std::string> bad;
  if (depth < 16 || height < 16 || width < 16) bad.push_back("depth/height/width must be >= 16");
  if (min_lesions < 0 || max_lesions < min_lesions) bad.push_back("lesion count range");
  if (min_tubes < 0 || max_tubes < min_tubes) bad.push_back("tube count range");
  if (min_radius <= 0.0 || max_radius < min_radius) bad.push_back("lesion radius range");
  if (min_tube_radius <= 0.0 || max_tube_radius < min_tube_radius) bad.push_back("tube radius range");
  if (2.0 * std::max(max_radius, max_tube_radius) + 4.0 >= static_cast<double>(std::min(height, width))) {
    bad.push_back("objects do not fit in the slice");
  }
  if (min_tube_length < 1 || min_tube_length > depth) bad.push_back("min_tube_length must lie in [1, depth]");
  if (max_tube_slope < 0.0) bad.push_back("max_tube_slope must be >= 0");
  if (noise_sigma < 0.0) bad.push_back("noise_sigma must be >= 0");
  if (intensity <= 0.0) bad.push_back("intensity must be > 0");
  if (max_retries < 1) bad.push_back("max_retries must be >= 1");
  if (!bad.empty()) {
    std::string msg = "invalid synthetic data config:";
    for (const auto& b : bad) msg += " [" + b + "]";
    throw ConfigError(msg);
  }
}

std::vector<Tensor> SyntheticVolume::slices() const {
  const std::int64_t d = voxels.dim(0), h = voxels.dim(1), w = voxels.dim(2);
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(d));
  for (std::int64_t z = 0; z < d; ++z) {
    Tensor s({h, w});
    std::copy_n(voxels.ptr() + z * h * w, h * w, s.ptr());
    out.push_back(std::move(s));
  }
  return out;
}

std::int64_t SyntheticVolume::gt_count() const {
  std::int64_t n = 0;
  for (const auto& s : gt_boxes) n += static_cast<std::int64_t>(s.size());
  return n;
}

double object_profile(double dist, double radius) { return std::clamp(radius + 0.5 - dist, 0.0, 1.0); }

bool sphere_box(const Sphere& s, std::int64_t z, LesionBox& out) {
  const double dz = static_cast<double>(z - s.cz);
  if (std::abs(dz) >= s.radius) return false;
  const double half = std::sqrt(s.radius * s.radius - dz * dz);
  if (half < 1.0) return false;
  out = LesionBox{z, s.cx - half, s.cy - half, s.cx + half, s.cy + half, 1.0};
  return true;
}

SyntheticVolume generate_volume(std::uint64_t seed, const SynthConfig& cfg, std::string volume_id) {
  cfg.validate();
  Rng rng(seed);
  SyntheticVolume vol;
  vol.volume_id = std::move(volume_id);

  const int n_tubes = static_cast<int>(rng.uniform_int(cfg.min_tubes, cfg.max_tubes));
  const int n_lesions = static_cast<int>(rng.uniform_int(cfg.min_lesions, cfg.max_lesions));
  for (int i = 0; i < n_tubes; ++i) vol.distractors.push_back(place_tube(rng, cfg, vol.distractors));
  for (int i = 0; i < n_lesions; ++i) vol.lesions.push_back(place_sphere(rng, cfg, vol.lesions, vol.distractors));

  std::vector<Wave> waves;
  for (int i = 0; i < 4; ++i) {
    waves.push_back(Wave{static_cast<double>(rng.uniform_int(0, 2)), static_cast<double>(rng.uniform_int(0, 2)),
                         static_cast<double>(rng.uniform_int(0, 1)), rng.uniform(0.0, kTwoPi), rng.uniform(0.5, 1.0)});
  }
  double amp_sum = 0.0;
  for (const auto& wv : waves) amp_sum += wv.amp;

  const std::int64_t D = cfg.depth, H = cfg.height, W = cfg.width;
  vol.voxels = Tensor({D, H, W});
  vol.gt_boxes.assign(static_cast<std::size_t>(D), {});
  for (std::int64_t z = 0; z < D; ++z) {
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        double v = 0.0;
        for (const auto& wv : waves) {
          v += wv.amp * std::cos(kTwoPi * (wv.fx * px / static_cast<double>(W) + wv.fy * py / static_cast<double>(H) +
                                           wv.fz * static_cast<double>(z) / static_cast<double>(D)) +
                                 wv.phase);
        }
        v = cfg.background_level + cfg.background_amplitude * v / amp_sum;
        double obj = 0.0;
        for (const auto& s : vol.lesions) {
          const double d = std::sqrt(std::pow(px - s.cx, 2) + std::pow(py - s.cy, 2) +
                                     std::pow(static_cast<double>(z - s.cz), 2));
          obj = std::max(obj, object_profile(d, s.radius));
        }
        for (const auto& t : vol.distractors) {
          if (!tube_covers(t, z)) continue;
          const auto i = static_cast<std::size_t>(z - t.z0);
          obj = std::max(obj, object_profile(in_plane_dist(px, py, t.axis_x[i], t.axis_y[i]), t.radius));
        }
        v += cfg.intensity * obj + cfg.noise_sigma * rng.normal();
        vol.voxels[(z * H + y) * W + x] = static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0)));
      }
    }
    for (const auto& s : vol.lesions) {
      LesionBox b;
      if (sphere_box(s, z, b)) vol.gt_boxes[static_cast<std::size_t>(z)].push_back(b);
    }
  }
  return vol;
}

void write_volume_file(const std::filesystem::path& path, const std::string& volume_id, const Tensor& voxels) {
  if (voxels.rank() != 3) throw DimensionError("volume must be [D, H, W], got " + to_string(voxels.shape()));
  nlohmann::json header = {{"dtype", "f32le"}, {"shape", voxels.shape()}, {"volume_id", volume_id}};
  std::string payload;
  payload.reserve(static_cast<std::size_t>(voxels.numel()) * 4);
  for (double v : voxels.data()) io::append_f32le(payload, static_cast<float>(v));
  io::write_framed(path, kVolumeMagic, header, payload);
}

LoadedVolume read_volume_file(const std::filesystem::path& path) {
  const io::FramedFile f = io::read_framed(path, kVolumeMagic);
  const auto& h = f.header;
  const auto fail = [&](const std::string& what) { throw FormatError(path.string() + ": " + what); };
  if (!h.is_object() || !h.contains("dtype") || !h.contains("shape") || !h.contains("volume_id")) {
    fail("header lacks dtype/shape/volume_id");
  }
  if (h["dtype"] != "f32le") fail("unsupported dtype " + h["dtype"].dump());
  if (!h["shape"].is_array() || h["shape"].size() != 3) fail("shape must have 3 entries");
  Shape shape;
  for (const auto& d : h["shape"]) {
    if (!d.is_number_integer() || d.get<std::int64_t>() <= 0) fail("shape entries must be positive integers");
    shape.push_back(d.get<std::int64_t>());
  }
  if (!h["volume_id"].is_string()) fail("volume_id must be a string");
  const std::int64_t n = numel(shape);
  if (f.payload.size() != static_cast<std::size_t>(n) * 4) {
    fail("payload has " + std::to_string(f.payload.size()) + " bytes, expected " + std::to_string(n * 4));
  }
  LoadedVolume out{h["volume_id"].get<std::string>(), Tensor(shape)};
  for (std::int64_t i = 0; i < n; ++i) out.voxels[i] = io::read_f32le(f.payload.data() + i * 4);
  return out;
}

void write_boxes_jsonl(const std::filesystem::path& path, const std::string& volume_id,
                       const std::vector<LesionBox>& boxes, bool with_score) {
  std::string text;
  for (const auto& b : boxes) {
    nlohmann::ordered_json rec = {{"volume_id", volume_id}, {"slice", b.slice}, {"x1", b.x1},
                                  {"y1", b.y1},             {"x2", b.x2},       {"y2", b.y2}};
    if (with_score) rec["score"] = b.score;
    text += rec.dump() + "\n";
  }
  io::write_text(path, text);
}

std::vector<LesionBox> read_boxes_jsonl(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::vector<LesionBox> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      LesionBox b;
      b.slice = rec.at("slice").get<std::int64_t>();
      b.x1 = rec.at("x1").get<double>();
      b.y1 = rec.at("y1").get<double>();
      b.x2 = rec.at("x2").get<double>();
      b.y2 = rec.at("y2").get<double>();
      if (rec.contains("score")) b.score = rec["score"].get<double>();
      out.push_back(b);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace vdet::synth
