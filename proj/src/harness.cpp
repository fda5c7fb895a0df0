#include "vdet/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "vdet/checkpoint.hpp"
#include "vdet/io.hpp"
#include "vdet/rng.hpp"

#ifndef VDET_VERSION
#define VDET_VERSION "v0.0.0-unknown"
#endif

namespace vdet::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string version_string() { return VDET_VERSION; }

namespace {

const std::vector<std::string> kSplits = {"train", "val", "test"};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Walks one JSON object, reading known keys and remembering the rest so every unknown or
// mistyped key ends up in a single error message.
class Reader {
 public:
  Reader(const json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back(label("") + " must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      errors_.push_back(label(key) + " has the wrong type");
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  void finish() {
    if (!j_.is_object()) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) errors_.push_back("unknown key '" + label(k) + "'");
    }
  }

 private:
  std::string label(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

template <class F>
void section(Reader& parent, const std::string& key, const std::string& path, std::vector<std::string>& errors, F&& f) {
  if (const json* c = parent.child(key)) {
    Reader r(*c, path, errors);
    f(r);
    r.finish();
  }
}

std::string padded(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return buf;
}

std::vector<std::vector<LesionBox>> by_slice(const std::vector<LesionBox>& boxes, std::int64_t depth) {
  std::vector<std::vector<LesionBox>> out(static_cast<std::size_t>(depth));
  for (const auto& b : boxes) {
    if (b.slice < 0 || b.slice >= depth) throw FormatError("ground-truth box on slice " + std::to_string(b.slice) + " outside the volume");
    out[static_cast<std::size_t>(b.slice)].push_back(b);
  }
  return out;
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

void RunConfig::validate() const {
  detector.validate();
  optimizer.validate();
  data.synth.validate();
  if (train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (train.slices_per_volume < 0) throw ConfigError("train.slices_per_volume must be >= 0");
  if (train.max_volumes < 0) throw ConfigError("train.max_volumes must be >= 0");
  if (data.train_volumes < 0 || data.val_volumes < 0 || data.test_volumes < 0) {
    throw ConfigError("data volume counts must be >= 0");
  }
  const int m = detector.backbone.input_multiple();
  if (data.synth.height % m != 0 || data.synth.width % m != 0) {
    // Not fatal for the model (inputs are padded) but keeps level grids aligned with the image.
    throw ConfigError("data.height and data.width must be multiples of " + std::to_string(m));
  }
}

ordered_json RunConfig::to_json() const {
  const auto& b = detector.backbone;
  const auto& s = data.synth;
  ordered_json j;
  j["seed"] = seed;
  j["fusion"] = detection::fusion_name(detector.fusion);
  j["T"] = detector.depth;
  j["backbone"] = {{"patch", b.patch},         {"depths", b.depths},     {"widths", b.widths},
                   {"heads", b.heads},         {"window", b.window},     {"mlp_ratio", b.mlp_ratio},
                   {"relative_bias", b.use_relative_bias}, {"fpn_channels", b.fpn_channels}};
  j["attention"] = {{"heads", detector.vd_heads},
                    {"window", detector.vd_window},
                    {"mlp_ratio", detector.vd_mlp_ratio},
                    {"relative_bias", detector.vd_relative_bias},
                    {"zero_init", detector.vd_zero_init}};
  j["optimizer"] = {{"name", optimizer.name},   {"lr", optimizer.lr},          {"weight_decay", optimizer.weight_decay},
                    {"beta1", optimizer.beta1}, {"beta2", optimizer.beta2},    {"eps", optimizer.eps},
                    {"momentum", optimizer.momentum}, {"clip_norm", optimizer.clip_norm},
                    {"schedule", optimizer.schedule}};
  j["train"] = {{"epochs", train.epochs}, {"slices_per_volume", train.slices_per_volume}, {"max_volumes", train.max_volumes}};
  j["data"] = {{"train_volumes", data.train_volumes},
               {"val_volumes", data.val_volumes},
               {"test_volumes", data.test_volumes},
               {"depth", s.depth},
               {"height", s.height},
               {"width", s.width},
               {"min_lesions", s.min_lesions},
               {"max_lesions", s.max_lesions},
               {"min_radius", s.min_radius},
               {"max_radius", s.max_radius},
               {"min_tubes", s.min_tubes},
               {"max_tubes", s.max_tubes},
               {"min_tube_radius", s.min_tube_radius},
               {"max_tube_radius", s.max_tube_radius},
               {"min_tube_length", s.min_tube_length},
               {"max_tube_slope", s.max_tube_slope},
               {"noise_sigma", s.noise_sigma},
               {"intensity", s.intensity},
               {"background_level", s.background_level},
               {"background_amplitude", s.background_amplitude},
               {"max_retries", s.max_retries}};
  j["eval"] = {{"score_threshold", detector.score_threshold}, {"nms_iou", detector.nms_iou}};
  j["paths"] = {{"data_dir", data_dir}};
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  std::vector<std::string> errors;
  Reader root(j, "", errors);
  root.get("seed", c.seed);
  std::string fusion = detection::fusion_name(c.detector.fusion);
  root.get("fusion", fusion);
  root.get("T", c.detector.depth);
  root.get("epochs", c.train.epochs);  // shorthand for train.epochs
  auto& b = c.detector.backbone;
  section(root, "backbone", "backbone", errors, [&](Reader& r) {
    r.get("patch", b.patch);
    r.get("depths", b.depths);
    r.get("widths", b.widths);
    r.get("heads", b.heads);
    r.get("window", b.window);
    r.get("mlp_ratio", b.mlp_ratio);
    r.get("relative_bias", b.use_relative_bias);
    r.get("fpn_channels", b.fpn_channels);
  });
  section(root, "attention", "attention", errors, [&](Reader& r) {
    r.get("heads", c.detector.vd_heads);
    r.get("window", c.detector.vd_window);
    r.get("mlp_ratio", c.detector.vd_mlp_ratio);
    r.get("relative_bias", c.detector.vd_relative_bias);
    r.get("zero_init", c.detector.vd_zero_init);
  });
  auto& o = c.optimizer;
  section(root, "optimizer", "optimizer", errors, [&](Reader& r) {
    r.get("name", o.name);
    r.get("lr", o.lr);
    r.get("weight_decay", o.weight_decay);
    r.get("beta1", o.beta1);
    r.get("beta2", o.beta2);
    r.get("eps", o.eps);
    r.get("momentum", o.momentum);
    r.get("clip_norm", o.clip_norm);
    r.get("schedule", o.schedule);
  });
  section(root, "train", "train", errors, [&](Reader& r) {
    r.get("epochs", c.train.epochs);
    r.get("slices_per_volume", c.train.slices_per_volume);
    r.get("max_volumes", c.train.max_volumes);
  });
  auto& s = c.data.synth;
  section(root, "data", "data", errors, [&](Reader& r) {
    r.get("train_volumes", c.data.train_volumes);
    r.get("val_volumes", c.data.val_volumes);
    r.get("test_volumes", c.data.test_volumes);
    r.get("depth", s.depth);
    r.get("height", s.height);
    r.get("width", s.width);
    r.get("min_lesions", s.min_lesions);
    r.get("max_lesions", s.max_lesions);
    r.get("min_radius", s.min_radius);
    r.get("max_radius", s.max_radius);
    r.get("min_tubes", s.min_tubes);
    r.get("max_tubes", s.max_tubes);
    r.get("min_tube_radius", s.min_tube_radius);
    r.get("max_tube_radius", s.max_tube_radius);
    r.get("min_tube_length", s.min_tube_length);
    r.get("max_tube_slope", s.max_tube_slope);
    r.get("noise_sigma", s.noise_sigma);
    r.get("intensity", s.intensity);
    r.get("background_level", s.background_level);
    r.get("background_amplitude", s.background_amplitude);
    r.get("max_retries", s.max_retries);
  });
  section(root, "eval", "eval", errors, [&](Reader& r) {
    r.get("score_threshold", c.detector.score_threshold);
    r.get("nms_iou", c.detector.nms_iou);
  });
  section(root, "paths", "paths", errors, [&](Reader& r) { r.get("data_dir", c.data_dir); });
  root.finish();
  try {
    c.detector.fusion = detection::parse_fusion_mode(fusion);
  } catch (const Error&) {
    errors.push_back("fusion must be one of none, p3d, c3d, vdformer (got '" + fusion + "')");
  }
  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::uint64_t volume_seed(std::uint64_t seed, const std::string& split, int index) {
  return splitmix64(splitmix64(seed ^ io::fnv1a64(split)) + static_cast<std::uint64_t>(index));
}

json cmd_gen(const RunConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ValidationError("cannot create " + out_dir.string() + ": " + ec.message());
  ordered_json manifest;
  manifest["version"] = version_string();
  manifest["config"] = cfg.to_json();
  ordered_json splits;
  const std::map<std::string, int> counts = {
      {"train", cfg.data.train_volumes}, {"val", cfg.data.val_volumes}, {"test", cfg.data.test_volumes}};
  for (const auto& split : kSplits) {
    fs::create_directories(out_dir / split, ec);
    if (ec) throw ValidationError("cannot create " + (out_dir / split).string() + ": " + ec.message());
    auto list = ordered_json::array();
    for (int i = 0; i < counts.at(split); ++i) {
      const std::string id = split + "_" + padded(i);
      const std::uint64_t seed = volume_seed(cfg.seed, split, i);
      const auto vol = synth::generate_volume(seed, cfg.data.synth, id);
      const std::string vfile = split + "/" + id + ".vol", gfile = split + "/" + id + ".gt.jsonl";
      synth::write_volume_file(out_dir / vfile, id, vol.voxels);
      std::vector<LesionBox> boxes;
      for (const auto& s : vol.gt_boxes) boxes.insert(boxes.end(), s.begin(), s.end());
      synth::write_boxes_jsonl(out_dir / gfile, id, boxes, false);
      list.push_back({{"volume_id", id},
                      {"seed", seed},
                      {"volume_file", vfile},
                      {"gt_file", gfile},
                      {"lesions", vol.lesions.size()},
                      {"gt_boxes", boxes.size()},
                      {"volume_checksum", io::hex64(io::fnv1a64(io::read_text(out_dir / vfile)))},
                      {"gt_checksum", io::hex64(io::fnv1a64(io::read_text(out_dir / gfile)))}});
    }
    splits[split] = list;
  }
  manifest["splits"] = splits;
  io::write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

std::vector<VolumeRecord> read_manifest(const fs::path& data_dir, const std::string& split) {
  const fs::path mpath = data_dir / "manifest.json";
  if (!fs::exists(mpath)) throw ValidationError("no dataset at " + data_dir.string() + " (missing manifest.json)");
  json m;
  try {
    m = json::parse(io::read_text(mpath));
  } catch (const json::exception& e) {
    throw FormatError(mpath.string() + ": " + e.what());
  }
  if (!m.contains("splits") || !m["splits"].contains(split)) {
    throw ValidationError("dataset " + data_dir.string() + " has no split '" + split + "'");
  }
  std::vector<VolumeRecord> out;
  try {
    for (const auto& e : m["splits"][split]) {
      out.push_back(VolumeRecord{split, e.at("volume_id").get<std::string>(), e.at("seed").get<std::uint64_t>(),
                                 e.at("volume_file").get<std::string>(), e.at("gt_file").get<std::string>(),
                                 e.at("volume_checksum").get<std::string>(), e.at("gt_checksum").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(mpath.string() + ": " + e.what());
  }
  return out;
}

std::vector<Scan> load_split(const fs::path& data_dir, const std::string& split, int max_volumes) {
  auto records = read_manifest(data_dir, split);
  if (max_volumes > 0 && static_cast<int>(records.size()) > max_volumes) records.resize(static_cast<std::size_t>(max_volumes));
  std::vector<Scan> scans;
  for (const auto& r : records) {
    auto vol = synth::read_volume_file(data_dir / r.volume_file);
    if (vol.volume_id != r.volume_id) {
      throw FormatError((data_dir / r.volume_file).string() + ": volume_id '" + vol.volume_id + "' does not match manifest");
    }
    Scan s;
    s.volume_id = r.volume_id;
    const std::int64_t d = vol.voxels.dim(0), h = vol.voxels.dim(1), w = vol.voxels.dim(2);
    for (std::int64_t z = 0; z < d; ++z) {
      Tensor sl({h, w});
      std::copy_n(vol.voxels.ptr() + z * h * w, h * w, sl.ptr());
      s.slices.push_back(std::move(sl));
    }
    s.ground_truth = synth::read_boxes_jsonl(data_dir / r.gt_file);
    scans.push_back(std::move(s));
  }
  return scans;
}

TrainResult train_on_scans(const RunConfig& cfg, const std::vector<Scan>& scans, const TrainOptions& opts) {
  cfg.validate();
  if (scans.empty()) throw ValidationError("no training volumes");
  detection::Detector det(cfg.detector, cfg.seed);
  auto& store = det.parameters();
  auto opt = optim::make_optimizer(cfg.optimizer);
  const ordered_json cfg_json = cfg.to_json();

  int start_epoch = 0;
  std::int64_t step = 0;
  if (opts.resume_from) {
    const Checkpoint ck = load_checkpoint(*opts.resume_from);
    restore_parameters(store, ck);
    opt->load_state(ck.optimizer_state, ck.optimizer_steps);
    try {
      start_epoch = ck.meta.at("epoch").get<int>();
      step = ck.meta.at("step").get<std::int64_t>();
    } catch (const json::exception& e) {
      throw FormatError(opts.resume_from->string() + ": checkpoint lacks training progress: " + e.what());
    }
  }

  std::error_code ec;
  fs::create_directories(opts.out_dir, ec);
  if (ec) throw ValidationError("cannot create " + opts.out_dir.string() + ": " + ec.message());
  std::ofstream log(opts.out_dir / "train_log.jsonl", std::ios::trunc);
  if (!log) throw ValidationError("cannot write " + (opts.out_dir / "train_log.jsonl").string());

  std::vector<std::vector<std::vector<LesionBox>>> gt;
  for (const auto& s : scans) gt.push_back(by_slice(s.ground_truth, static_cast<std::int64_t>(s.slices.size())));
  const auto grids = det.grids(scans[0].slices[0].dim(0), scans[0].slices[0].dim(1));

  std::int64_t per_epoch = 0;
  for (const auto& s : scans) {
    const auto depth = static_cast<std::int64_t>(s.slices.size());
    per_epoch += cfg.train.slices_per_volume > 0 ? std::min<std::int64_t>(cfg.train.slices_per_volume, depth) : depth;
  }
  const std::int64_t total_steps = per_epoch * cfg.train.epochs;

  TrainResult result;
  bool first = true;
  for (int epoch = start_epoch; epoch < cfg.train.epochs; ++epoch) {
    Rng rng(splitmix64(cfg.seed ^ 0x5eedull) + static_cast<std::uint64_t>(epoch));
    std::vector<std::pair<std::size_t, std::int64_t>> items;
    for (std::size_t v = 0; v < scans.size(); ++v) {
      std::vector<std::int64_t> zs(scans[v].slices.size());
      for (std::size_t z = 0; z < zs.size(); ++z) zs[z] = static_cast<std::int64_t>(z);
      if (cfg.train.slices_per_volume > 0 && cfg.train.slices_per_volume < static_cast<int>(zs.size())) {
        shuffle(zs, rng);
        zs.resize(static_cast<std::size_t>(cfg.train.slices_per_volume));
      }
      for (auto z : zs) items.emplace_back(v, z);
    }
    shuffle(items, rng);

    for (const auto& [v, z] : items) {
      const Scan& scan = scans[v];
      ++step;
      store.zero_grad();
      double loss = NAN, cls = NAN, reg = NAN;
      double grad_norm = 0.0;
      try {
        Tape tape;
        const auto outs = det.forward(tape, scan.slices, z);
        const auto targets = detection::assign_targets(gt[v][static_cast<std::size_t>(z)], grids);
        const auto terms = detection::detection_loss(outs, targets);
        loss = terms.total.value().item();
        cls = terms.classification.value().item();
        reg = terms.regression.value().item();
        tape.backward(terms.total);
        grad_norm = optim::clip_grad_norm(store, cfg.optimizer.clip_norm);
        if (!std::isfinite(grad_norm)) throw NumericError("non-finite gradient norm");
      } catch (const NumericError& e) {
        std::ostringstream msg;
        msg << "training aborted at step " << step << " (epoch " << epoch + 1 << ", volume " << scan.volume_id
            << ", slice " << z << "): " << e.what() << "; loss=" << loss << " classification=" << cls
            << " regression=" << reg;
        throw TrainingError(msg.str());
      }
      opt->set_lr_scale(optim::schedule_scale(cfg.optimizer, step, total_steps));
      opt->step(store);
      ordered_json rec = {{"epoch", epoch + 1},       {"step", step},         {"volume_id", scan.volume_id},
                          {"slice", z},               {"loss", loss},         {"classification", cls},
                          {"regression", reg},        {"grad_norm", grad_norm}};
      log << rec.dump() << '\n';
      if (opts.on_step) opts.on_step(rec);
      if (first) result.first_loss = loss;
      first = false;
      result.last_loss = loss;
    }
    log.flush();

    Checkpoint ck = capture_checkpoint(store, {{"version", version_string()},
                                               {"config", cfg_json},
                                               {"epoch", epoch + 1},
                                               {"step", step}});
    ck.optimizer_state = opt->state();
    ck.optimizer_steps = opt->steps();
    char name[64];
    std::snprintf(name, sizeof name, "checkpoint_epoch%03d.bin", epoch + 1);
    save_checkpoint(opts.out_dir / name, ck);
    save_checkpoint(opts.out_dir / "checkpoint.bin", ck);
    result.last_checkpoint = opts.out_dir / "checkpoint.bin";
  }
  result.steps = step;
  return result;
}

TrainResult cmd_train(const RunConfig& cfg, const TrainOptions& opts) {
  const auto scans = load_split(cfg.data_dir, "train", cfg.train.max_volumes);
  return train_on_scans(cfg, scans, opts);
}

RunConfig checkpoint_config(const fs::path& checkpoint) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (!ck.meta.contains("config")) throw FormatError(checkpoint.string() + ": checkpoint carries no config");
  return RunConfig::from_json(ck.meta["config"]);
}

detection::Detector load_detector(const fs::path& checkpoint, const RunConfig* cfg) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const RunConfig c = cfg ? *cfg : RunConfig::from_json(ck.meta.at("config"));
  detection::Detector det(c.detector, c.seed);
  restore_parameters(det.parameters(), ck);
  return det;
}

std::vector<LesionBox> detect_volume(const detection::Detector& det, const std::vector<Tensor>& slices) {
  const auto depth = static_cast<std::int64_t>(slices.size());
  const int half = det.config().depth / 2;
  const bool fuse = det.config().fusion != detection::FusionMode::kNone;
  // Per-slice pyramids once per volume, then fusion + head per centre slice on a fresh tape.
  std::vector<std::array<Tensor, backbone::kNumLevels>> feats(slices.size());
  for (std::int64_t k = 0; k < depth; ++k) {
    Tape tape(false);
    const auto p = det.slice_features(tape, slices, k);
    for (int l = 0; l < backbone::kNumLevels; ++l) feats[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)] = p.levels[static_cast<std::size_t>(l)].value();
  }
  const double h = static_cast<double>(slices[0].dim(0)), w = static_cast<double>(slices[0].dim(1));
  std::vector<LesionBox> out;
  for (std::int64_t t = 0; t < depth; ++t) {
    Tape tape(false);
    std::vector<backbone::PyramidFeatures> window;
    for (std::int64_t k = t - half; k <= t + half; ++k) {
      backbone::PyramidFeatures p;
      const bool inside = k >= 0 && k < depth;
      if (!fuse && k != t) {
        window.push_back(p);  // unused by a non-fusing detector
        continue;
      }
      for (int l = 0; l < backbone::kNumLevels; ++l) {
        const Tensor& f = feats[static_cast<std::size_t>(inside ? k : t)][static_cast<std::size_t>(l)];
        p.levels[static_cast<std::size_t>(l)] = tape.constant(inside ? f : Tensor::zeros(f.shape()));
      }
      window.push_back(p);
    }
    const auto boxes = det.decode(det.fuse_and_head(window), t, w, h);
    out.insert(out.end(), boxes.begin(), boxes.end());
  }
  return out;
}

ordered_json eval_report(const RunConfig& cfg, const std::string& split, const metrics::EvalReport& r) {
  ordered_json sens;
  for (std::size_t i = 0; i < r.froc.fp_levels.size(); ++i) {
    char key[32];
    std::snprintf(key, sizeof key, "%g", r.froc.fp_levels[i]);
    sens[key] = r.froc.sensitivity[i];
  }
  ordered_json j;
  j["version"] = version_string();
  j["config"] = cfg.to_json();
  j["split"] = split;
  j["metrics"] = {{"sensitivity_at_fps", sens},
                  {"average_sensitivity", r.froc.average},
                  {"map_iou_0.5", r.map},
                  {"true_positives", r.true_positives},
                  {"false_positives", r.false_positives},
                  {"false_negatives", r.false_negatives},
                  {"scans", r.scans},
                  {"ground_truth_boxes", r.ground_truth}};
  return j;
}

EvalOutput cmd_eval(const fs::path& checkpoint, const std::string& split, const fs::path& out_dir, const RunConfig* cfg) {
  const RunConfig c = cfg ? *cfg : checkpoint_config(checkpoint);
  const detection::Detector det = load_detector(checkpoint, &c);
  const auto scans = load_split(c.data_dir, split);
  EvalOutput out;
  std::string det_lines;
  for (const auto& s : scans) {
    metrics::ScanBoxes sb;
    sb.ground_truth = s.ground_truth;
    sb.predictions = detect_volume(det, s.slices);
    for (const auto& b : sb.predictions) {
      ordered_json rec = {{"volume_id", s.volume_id}, {"slice", b.slice}, {"x1", b.x1}, {"y1", b.y1},
                          {"x2", b.x2},               {"y2", b.y2},       {"score", b.score}};
      det_lines += rec.dump() + "\n";
    }
    out.scans.push_back(std::move(sb));
  }
  const auto r = metrics::evaluate(out.scans);
  out.report = eval_report(c, split, r);
  out.report["checkpoint_checksum"] = io::hex64(io::fnv1a64(io::read_text(checkpoint)));
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ValidationError("cannot create " + out_dir.string() + ": " + ec.message());
  io::write_text(out_dir / "report.json", out.report.dump(2) + "\n");
  io::write_text(out_dir / "detections.jsonl", det_lines);
  return out;
}

std::vector<cost::CostReport> cmd_bench(const RunConfig& cfg, const fs::path& out_dir,
                                        const std::vector<cost::CostShape>& grid) {
  std::vector<cost::CostReport> rows;
  for (const auto& s : grid) {
    rows.push_back(cost::cost_report(cost::AttentionMode::kFull3D, s));
    rows.push_back(cost::cost_report(cost::AttentionMode::kVD, s));
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ValidationError("cannot create " + out_dir.string() + ": " + ec.message());
  const std::string provenance = "# vdet " + version_string() + " config " + cfg.to_json().dump() + "\n";
  io::write_text(out_dir / "cost.csv", provenance + cost::to_csv(rows));
  ordered_json j;
  j["version"] = version_string();
  j["config"] = cfg.to_json();
  j["rows"] = cost::to_json(rows);
  io::write_text(out_dir / "cost.json", j.dump(2) + "\n");
  return rows;
}

}  // namespace vdet::harness
