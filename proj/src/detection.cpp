#include "vdet/detection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vdet/ops.hpp"

namespace vdet::detection {

namespace {

Tensor conv_init(Rng& rng, std::int64_t out, std::int64_t in, std::int64_t k) {
  return rng.normal_tensor({out, in, k, k}, std::sqrt(1.0 / static_cast<double>(in * k * k)));
}

void check_features(std::span<const Var> features) {
  if (features.empty() || features.size() % 2 == 0) {
    throw ConfigError("fusion needs an odd number of slice features, got " + std::to_string(features.size()));
  }
  const Shape& s = features[0].shape();
  if (s.size() != 3) throw DimensionError("slice features must be [F, H, W], got " + to_string(s));
  for (const Var& f : features) {
    if (f.shape() != s) throw DimensionError("slice features disagree in shape: " + to_string(f.shape()));
  }
}

// [F, F] slice of a [F, F, 3] temporal kernel at tap `kz`.
Var temporal_tap(Tape& tape, Parameter& w, int kz) {
  const std::int64_t f = w.value.dim(0), fi = w.value.dim(1);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(f * fi));
  for (std::int64_t o = 0; o < f; ++o)
    for (std::int64_t i = 0; i < fi; ++i) idx[static_cast<std::size_t>(o * fi + i)] = (o * fi + i) * 3 + kz;
  return ops::gather(tape.param(w), ops::make_index(std::move(idx)), {f, fi});
}

}  // namespace

FusionMode parse_fusion_mode(std::string_view name) {
  if (name == "none") return FusionMode::kNone;
  if (name == "p3d") return FusionMode::kP3D;
  if (name == "c3d") return FusionMode::kC3D;
  if (name == "vdformer") return FusionMode::kVdFormer;
  throw ConfigError("unknown fusion mode '" + std::string(name) + "' (expected none, p3d, c3d or vdformer)");
}

std::string fusion_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::kNone: return "none";
    case FusionMode::kP3D: return "p3d";
    case FusionMode::kC3D: return "c3d";
    default: return "vdformer";
  }
}

LevelFusionParams register_fusion(ParameterStore& store, const std::string& prefix, FusionMode mode, int channels,
                                  const attention::AttentionConfig& vd_cfg, Rng& rng) {
  LevelFusionParams p;
  p.mode = mode;
  const std::int64_t f = channels;
  switch (mode) {
    case FusionMode::kNone: break;
    case FusionMode::kVdFormer:
      if (vd_cfg.channels != channels) throw ConfigError("VD-Former channels must equal the pyramid width");
      p.vd = vdformer::register_vdformer(store, prefix, vd_cfg, rng);
      break;
    case FusionMode::kC3D:
      p.c3d_w = &store.add(prefix + ".c3d.weight", rng.normal_tensor({f, f, 3, 3, 3}, std::sqrt(1.0 / (27.0 * f))));
      p.c3d_b = &store.add(prefix + ".c3d.bias", Tensor({f}));
      break;
    case FusionMode::kP3D:
      p.p3d_w2d = &store.add(prefix + ".p3d.spatial.weight", conv_init(rng, f, f, 3));
      p.p3d_b2d = &store.add(prefix + ".p3d.spatial.bias", Tensor({f}));
      p.p3d_w1d = &store.add(prefix + ".p3d.temporal.weight", rng.normal_tensor({f, f, 3}, std::sqrt(1.0 / (3.0 * f))));
      p.p3d_b1d = &store.add(prefix + ".p3d.temporal.bias", Tensor({f}));
      break;
  }
  return p;
}

Var c3d_response(std::span<const Var> features, const LevelFusionParams& params) {
  check_features(features);
  if (!params.c3d_w) throw ConfigError("C3D fusion parameters missing");
  Tape& tape = *features[0].tape;
  const Shape& s = features[0].shape();
  const std::int64_t f = s[0], h = s[1], w = s[2];
  const auto depth = static_cast<std::int64_t>(features.size());
  const std::int64_t center = depth / 2;
  Var stackv = ops::stack(features, 3);  // [F, H, W, T]
  std::vector<std::int64_t> idx(static_cast<std::size_t>(f * 27 * h * w));
  std::size_t q = 0;
  for (std::int64_t ci = 0; ci < f; ++ci)
    for (int kz = 0; kz < 3; ++kz)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const std::int64_t z = center + kz - 1;
          for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
              const std::int64_t yy = y + ky - 1, xx = x + kx - 1;
              const bool in = z >= 0 && z < depth && yy >= 0 && yy < h && xx >= 0 && xx < w;
              idx[q++] = in ? ((ci * h + yy) * w + xx) * depth + z : -1;
            }
        }
  Var cols = ops::gather(stackv, ops::make_index(std::move(idx)), {f * 27, h * w});
  Var wm = ops::reshape(tape.param(*params.c3d_w), {params.c3d_w->value.dim(0), f * 27});
  Var y = ops::add(ops::matmul(wm, cols), ops::reshape(tape.param(*params.c3d_b), {params.c3d_w->value.dim(0), 1}));
  return ops::reshape(y, {params.c3d_w->value.dim(0), h, w});
}

Var fuse_level(std::span<const Var> features, FusionMode mode, const LevelFusionParams& params,
               const attention::AttentionConfig& vd_cfg) {
  check_features(features);
  if (params.mode != mode) {
    throw ConfigError("fusion mode " + fusion_name(mode) + " does not match parameters built for " +
                      fusion_name(params.mode));
  }
  const std::size_t center = features.size() / 2;
  switch (mode) {
    case FusionMode::kNone: return features[center];
    case FusionMode::kVdFormer: return vdformer::vd_former(ops::stack(features, 3), params.vd, vd_cfg);
    case FusionMode::kC3D: return ops::gelu(c3d_response(features, params));
    case FusionMode::kP3D: {
      Tape& tape = *features[0].tape;
      const Shape& s = features[0].shape();
      const std::int64_t f = params.p3d_w1d->value.dim(0);
      Var acc = ops::reshape(tape.param(*params.p3d_b1d), {f, 1});
      Var sum;
      bool first = true;
      for (int kz = 0; kz < 3; ++kz) {
        const auto k = static_cast<std::int64_t>(center) + kz - 1;
        if (k < 0 || k >= static_cast<std::int64_t>(features.size())) continue;
        Var spatial = ops::conv2d(features[static_cast<std::size_t>(k)], tape.param(*params.p3d_w2d),
                                  tape.param(*params.p3d_b2d), 1, 1);
        Var term = ops::matmul(temporal_tap(tape, *params.p3d_w1d, kz), ops::reshape(spatial, {s[0], s[1] * s[2]}));
        sum = first ? term : ops::add(sum, term);
        first = false;
      }
      return ops::reshape(ops::gelu(ops::add(sum, acc)), {f, s[1], s[2]});
    }
  }
  throw ConfigError("unhandled fusion mode");
}

HeadParams register_head(ParameterStore& store, const std::string& prefix, int channels, Rng& rng) {
  HeadParams p;
  const std::int64_t f = channels;
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string n = prefix + ".tower" + std::to_string(i);
    p.tower_w[i] = &store.add(n + ".weight", conv_init(rng, f, f, 3));
    p.tower_b[i] = &store.add(n + ".bias", Tensor({f}));
  }
  // Score bias starts at a 1% foreground prior.
  p.cls_w = &store.add(prefix + ".cls.weight", rng.normal_tensor({1, f, 1, 1}, 0.01));
  p.cls_b = &store.add(prefix + ".cls.bias", Tensor({1}, -std::log(99.0)));
  p.reg_w = &store.add(prefix + ".reg.weight", rng.normal_tensor({4, f, 1, 1}, 0.01));
  p.reg_b = &store.add(prefix + ".reg.bias", Tensor({4}));
  return p;
}

std::vector<LevelOutput> head_forward(const backbone::PyramidFeatures& features, const HeadParams& p) {
  std::vector<LevelOutput> out;
  for (int lvl = backbone::kMinLevel; lvl <= backbone::kMaxLevel; ++lvl) {
    Var x = features.level(lvl);
    Tape& tape = *x.tape;
    for (std::size_t i = 0; i < 2; ++i) {
      x = ops::gelu(ops::conv2d(x, tape.param(*p.tower_w[i]), tape.param(*p.tower_b[i]), 1, 1));
    }
    LevelOutput o;
    o.level = lvl;
    o.logits = ops::conv2d(x, tape.param(*p.cls_w), tape.param(*p.cls_b), 1, 0);
    o.regression = ops::exp(ops::conv2d(x, tape.param(*p.reg_w), tape.param(*p.reg_b), 1, 0));
    out.push_back(o);
  }
  return out;
}

std::pair<double, double> level_size_range(int level) {
  const double lo = level <= backbone::kMinLevel ? 0.0 : std::ldexp(1.0, level + 1);
  const double hi = level >= backbone::kMaxLevel ? std::numeric_limits<double>::infinity() : std::ldexp(1.0, level + 3);
  return {lo, hi};
}

std::int64_t DetectionTargets::positives() const {
  std::int64_t n = 0;
  for (const auto& l : levels)
    for (int b : l.assigned_box) n += b >= 0 ? 1 : 0;
  return n;
}

DetectionTargets assign_targets(std::span<const LesionBox> gt, std::span<const LevelGrid> levels) {
  for (const auto& b : gt) {
    if (!b.valid()) {
      throw ValidationError("degenerate ground-truth box (" + std::to_string(b.x1) + ", " + std::to_string(b.y1) +
                            ", " + std::to_string(b.x2) + ", " + std::to_string(b.y2) + ")");
    }
  }
  DetectionTargets targets;
  for (const LevelGrid& grid : levels) {
    LevelTargets lt;
    lt.grid = grid;
    lt.labels = Tensor({1, grid.rows, grid.cols});
    lt.regression = Tensor({4, grid.rows, grid.cols});
    lt.assigned_box.assign(static_cast<std::size_t>(grid.rows * grid.cols), -1);
    const double s = grid.stride();
    const auto [lo, hi] = level_size_range(grid.level);
    const std::int64_t plane = grid.rows * grid.cols;
    for (std::int64_t r = 0; r < grid.rows; ++r)
      for (std::int64_t c = 0; c < grid.cols; ++c) {
        const double cx = (static_cast<double>(c) + 0.5) * s;
        const double cy = (static_cast<double>(r) + 0.5) * s;
        int best = -1;
        for (std::size_t bi = 0; bi < gt.size(); ++bi) {
          const LesionBox& b = gt[bi];
          const double side = b.longer_side();
          if (side < lo || side >= hi) continue;
          if (cx < b.x1 || cx > b.x2 || cy < b.y1 || cy > b.y2) continue;
          if (best < 0 || b.area() < gt[static_cast<std::size_t>(best)].area()) best = static_cast<int>(bi);
        }
        if (best < 0) continue;
        const LesionBox& b = gt[static_cast<std::size_t>(best)];
        const std::int64_t pos = r * grid.cols + c;
        lt.assigned_box[static_cast<std::size_t>(pos)] = best;
        lt.labels[pos] = 1.0;
        lt.regression[0 * plane + pos] = (cx - b.x1) / s;
        lt.regression[1 * plane + pos] = (cy - b.y1) / s;
        lt.regression[2 * plane + pos] = (b.x2 - cx) / s;
        lt.regression[3 * plane + pos] = (b.y2 - cy) / s;
      }
    targets.levels.push_back(std::move(lt));
  }
  return targets;
}

LossTerms detection_loss(const std::vector<LevelOutput>& outputs, const DetectionTargets& targets, double beta) {
  if (outputs.empty() || outputs.size() != targets.levels.size()) {
    throw DimensionError("detection_loss: outputs and targets cover different levels");
  }
  Tape& tape = *outputs[0].logits.tape;
  std::vector<Var> flat_logits;
  std::vector<double> labels;
  std::vector<Var> pos_reg;
  std::vector<double> pos_targets;
  std::int64_t npos = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const LevelOutput& o = outputs[i];
    const LevelTargets& t = targets.levels[i];
    if (o.logits.shape() != t.labels.shape() || o.regression.shape() != t.regression.shape()) {
      throw DimensionError("detection_loss: level " + std::to_string(o.level) + " prediction " +
                           to_string(o.logits.shape()) + " vs target " + to_string(t.labels.shape()));
    }
    const std::int64_t plane = t.labels.numel();
    flat_logits.push_back(ops::reshape(o.logits, {plane}));
    labels.insert(labels.end(), t.labels.data().begin(), t.labels.data().end());
    std::vector<std::int64_t> idx;
    for (std::int64_t pos = 0; pos < plane; ++pos) {
      if (t.assigned_box[static_cast<std::size_t>(pos)] < 0) continue;
      for (std::int64_t k = 0; k < 4; ++k) {
        idx.push_back(k * plane + pos);
        pos_targets.push_back(t.regression[k * plane + pos]);
      }
      ++npos;
    }
    if (!idx.empty()) {
      const auto n = static_cast<std::int64_t>(idx.size());
      pos_reg.push_back(ops::gather(o.regression, ops::make_index(std::move(idx)), {n}));
    }
  }
  LossTerms terms;
  const auto total_positions = static_cast<std::int64_t>(labels.size());
  terms.classification = ops::bce_with_logits(ops::concat(flat_logits, 0), Tensor({total_positions}, std::move(labels)));
  if (npos > 0) {
    const auto n = static_cast<std::int64_t>(pos_targets.size());
    Var sl1 = ops::smooth_l1(ops::concat(pos_reg, 0), Tensor({n}, std::move(pos_targets)), beta);
    terms.regression = ops::scale(sl1, 1.0 / static_cast<double>(npos));
  } else {
    terms.regression = tape.constant(Tensor::scalar(0.0));
  }
  terms.total = ops::add(terms.classification, terms.regression);
  return terms;
}

std::vector<LesionBox> nms(std::vector<Candidate> candidates, double iou_threshold) {
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.box.score != b.box.score) return a.box.score > b.box.score;
    if (a.level != b.level) return a.level < b.level;
    return a.position < b.position;
  });
  std::vector<LesionBox> kept;
  for (const Candidate& c : candidates) {
    bool suppressed = false;
    for (const LesionBox& k : kept) {
      if (iou(c.box, k) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(c.box);
  }
  return kept;
}

std::vector<LesionBox> decode_and_nms(std::span<const LevelPrediction> preds, std::int64_t slice, double image_w,
                                      double image_h, double score_threshold, double iou_threshold) {
  constexpr double kMinDistance = 1e-3;
  std::vector<Candidate> cands;
  for (const LevelPrediction& p : preds) {
    const std::int64_t rows = p.logits.dim(1), cols = p.logits.dim(2), plane = rows * cols;
    const double s = std::ldexp(1.0, p.level);
    for (std::int64_t pos = 0; pos < plane; ++pos) {
      const double score = 1.0 / (1.0 + std::exp(-p.logits[pos]));
      if (score < score_threshold) continue;
      const double cx = (static_cast<double>(pos % cols) + 0.5) * s;
      const double cy = (static_cast<double>(pos / cols) + 0.5) * s;
      if (cx >= image_w || cy >= image_h) continue;  // cell centre lies in input padding
      auto dist = [&](int k) { return std::max(p.regression[k * plane + pos], kMinDistance) * s; };
      Candidate c;
      c.level = p.level;
      c.position = pos;
      c.box.slice = slice;
      c.box.score = score;
      c.box.x1 = std::clamp(cx - dist(0), 0.0, image_w);
      c.box.y1 = std::clamp(cy - dist(1), 0.0, image_h);
      c.box.x2 = std::clamp(cx + dist(2), 0.0, image_w);
      c.box.y2 = std::clamp(cy + dist(3), 0.0, image_h);
      cands.push_back(c);
    }
  }
  return nms(std::move(cands), iou_threshold);
}

}  // namespace vdet::detection
