#include "vdet/detector.hpp"

#include "vdet/ops.hpp"

namespace vdet::detection {

attention::AttentionConfig DetectorConfig::vd_attention() const {
  attention::AttentionConfig a;
  a.channels = backbone.fpn_channels;
  a.heads = vd_heads;
  a.window = vd_window;
  a.mlp_ratio = vd_mlp_ratio;
  a.use_relative_bias = vd_relative_bias;
  return a;
}

void DetectorConfig::validate() const {
  backbone.validate();
  // Level i of the pyramid must have stride 2^i, which pins the stem to 4 x 4 patches.
  if (backbone.patch != 4) throw ConfigError("detector needs backbone.patch == 4, got " + std::to_string(backbone.patch));
  if (depth < 1 || depth % 2 == 0) throw ConfigError("T must be a positive odd integer, got " + std::to_string(depth));
  if (fusion == FusionMode::kVdFormer) vd_attention().validate();
  if (score_threshold < 0.0 || score_threshold > 1.0) throw ConfigError("score_threshold must lie in [0, 1]");
  if (nms_iou <= 0.0 || nms_iou > 1.0) throw ConfigError("nms_iou must lie in (0, 1]");
}

Tensor build_input_image(std::span<const Tensor> slices, std::int64_t k, int multiple) {
  const auto depth = static_cast<std::int64_t>(slices.size());
  if (depth == 0) throw ContractError("empty volume");
  const std::int64_t h = slices[0].dim(0), w = slices[0].dim(1);
  const std::int64_t hp = (h + multiple - 1) / multiple * multiple;
  const std::int64_t wp = (w + multiple - 1) / multiple * multiple;
  Tensor img({3, hp, wp});
  for (int ch = 0; ch < 3; ++ch) {
    const std::int64_t src = k - 1 + ch;
    if (src < 0 || src >= depth) continue;
    const Tensor& s = slices[static_cast<std::size_t>(src)];
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) img[(ch * hp + y) * wp + x] = s[y * w + x];
  }
  return img;
}

Detector::Detector(DetectorConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  encoder_ = backbone::register_encoder(store_, "backbone", cfg_.backbone, rng);
  fpn_ = backbone::register_fpn(store_, "fpn", cfg_.backbone, rng);
  const auto vd = cfg_.vd_attention();
  for (int lvl = backbone::kMinLevel; lvl <= backbone::kMaxLevel; ++lvl) {
    const std::string prefix = std::string(cfg_.fusion == FusionMode::kVdFormer ? "vdformer" : "fusion") + ".level" +
                               std::to_string(lvl);
    fusion_params(lvl) = register_fusion(store_, prefix, cfg_.fusion, cfg_.backbone.fpn_channels, vd, rng);
    if (cfg_.fusion == FusionMode::kVdFormer && cfg_.vd_zero_init) vdformer::zero_output_layers(fusion_params(lvl).vd);
  }
  head_ = register_head(store_, "head", cfg_.backbone.fpn_channels, rng);
}

std::vector<LevelGrid> Detector::grids(std::int64_t height, std::int64_t width) const {
  const int m = cfg_.backbone.input_multiple();
  const std::int64_t hp = (height + m - 1) / m * m, wp = (width + m - 1) / m * m;
  std::vector<LevelGrid> g;
  for (int lvl = backbone::kMinLevel; lvl < backbone::kMaxLevel; ++lvl) {
    g.push_back(LevelGrid{lvl, hp >> lvl, wp >> lvl});
  }
  g.push_back(LevelGrid{backbone::kMaxLevel, g.back().rows / 2, g.back().cols / 2});
  return g;
}

backbone::PyramidFeatures Detector::slice_features(Tape& tape, std::span<const Tensor> slices, std::int64_t k) const {
  Var img = tape.constant(build_input_image(slices, k, cfg_.backbone.input_multiple()));
  return backbone::fpn_fuse(backbone::encoder_forward(img, cfg_.backbone, encoder_), fpn_);
}

std::vector<LevelOutput> Detector::head(const backbone::PyramidFeatures& fused) const {
  return head_forward(fused, head_);
}

std::vector<LevelOutput> Detector::forward(Tape& tape, std::span<const Tensor> slices, std::int64_t t) const {
  const auto depth = static_cast<std::int64_t>(slices.size());
  if (t < 0 || t >= depth) {
    throw IndexError("slice index " + std::to_string(t) + " out of range [0, " + std::to_string(depth) + ")");
  }
  const std::int64_t half = cfg_.depth / 2;
  const backbone::PyramidFeatures center = slice_features(tape, slices, t);
  if (cfg_.fusion == FusionMode::kNone) return head(center);

  std::vector<backbone::PyramidFeatures> per_slice;
  for (std::int64_t k = t - half; k <= t + half; ++k) {
    if (k == t) {
      per_slice.push_back(center);
    } else if (k < 0 || k >= depth) {
      backbone::PyramidFeatures zero;
      for (int lvl = backbone::kMinLevel; lvl <= backbone::kMaxLevel; ++lvl) {
        zero.level(lvl) = tape.constant(Tensor::zeros(center.level(lvl).shape()));
      }
      per_slice.push_back(zero);
    } else {
      per_slice.push_back(slice_features(tape, slices, k));
    }
  }
  return fuse_and_head(per_slice);
}

std::vector<LevelOutput> Detector::fuse_and_head(std::span<const backbone::PyramidFeatures> window) const {
  if (static_cast<int>(window.size()) != cfg_.depth) {
    throw ContractError("fusion window holds " + std::to_string(window.size()) + " slices, expected " +
                        std::to_string(cfg_.depth));
  }
  if (cfg_.fusion == FusionMode::kNone) return head(window[window.size() / 2]);
  backbone::PyramidFeatures fused;
  const auto vd = cfg_.vd_attention();
  for (int lvl = backbone::kMinLevel; lvl <= backbone::kMaxLevel; ++lvl) {
    std::vector<Var> feats;
    for (const auto& p : window) feats.push_back(p.level(lvl));
    fused.level(lvl) = fuse_level(feats, cfg_.fusion, fusion_params(lvl), vd);
  }
  return head(fused);
}

std::vector<LesionBox> Detector::detect_slice(std::span<const Tensor> slices, std::int64_t t) const {
  Tape tape(false);
  const auto outs = forward(tape, slices, t);
  return decode(outs, t, static_cast<double>(slices[0].dim(1)), static_cast<double>(slices[0].dim(0)));
}

std::vector<LesionBox> Detector::decode(const std::vector<LevelOutput>& outputs, std::int64_t t, double image_w,
                                        double image_h) const {
  std::vector<LevelPrediction> preds;
  for (const auto& o : outputs) preds.push_back(LevelPrediction{o.level, o.logits.value(), o.regression.value()});
  return decode_and_nms(preds, t, image_w, image_h, cfg_.score_threshold, cfg_.nms_iou);
}

}  // namespace vdet::detection
