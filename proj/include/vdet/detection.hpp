#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vdet/backbone.hpp"
#include "vdet/box.hpp"
#include "vdet/vdformer.hpp"

namespace vdet::detection {

/// Inter-slice fusion applied to every pyramid level.
enum class FusionMode { kNone, kP3D, kC3D, kVdFormer };

FusionMode parse_fusion_mode(std::string_view name);
std::string fusion_name(FusionMode mode);

struct LevelFusionParams {
  FusionMode mode = FusionMode::kNone;
  vdformer::VdFormerParams vd;
  Parameter* c3d_w = nullptr;  // [F, F, 3, 3, 3], taps ordered (depth, y, x)
  Parameter* c3d_b = nullptr;
  Parameter* p3d_w2d = nullptr;  // [F, F, 3, 3]
  Parameter* p3d_b2d = nullptr;
  Parameter* p3d_w1d = nullptr;  // [F, F, 3]
  Parameter* p3d_b1d = nullptr;
};

LevelFusionParams register_fusion(ParameterStore& store, const std::string& prefix, FusionMode mode, int channels,
                                  const attention::AttentionConfig& vd_cfg, Rng& rng);

/// Fuses T per-slice features [F, H, W] into the centre slice's enhanced feature.
Var fuse_level(std::span<const Var> features, FusionMode mode, const LevelFusionParams& params,
               const attention::AttentionConfig& vd_cfg);
/// Centre-slice 3x3x3 convolution response before the activation.
Var c3d_response(std::span<const Var> features, const LevelFusionParams& params);

struct HeadParams {
  std::array<Parameter*, 2> tower_w{};  // [F, F, 3, 3]
  std::array<Parameter*, 2> tower_b{};
  Parameter* cls_w = nullptr;  // [1, F, 1, 1]
  Parameter* cls_b = nullptr;
  Parameter* reg_w = nullptr;  // [4, F, 1, 1]
  Parameter* reg_b = nullptr;
};

HeadParams register_head(ParameterStore& store, const std::string& prefix, int channels, Rng& rng);

struct LevelOutput {
  int level = 0;
  Var logits;      // [1, H_i, W_i]
  Var regression;  // [4, H_i, W_i], positive distances (l, t, r, b) in level units
};

/// Shared two-layer 3x3 tower, then score and box branches, applied to each level.
std::vector<LevelOutput> head_forward(const backbone::PyramidFeatures& features, const HeadParams& params);

struct LevelGrid {
  int level = 0;
  std::int64_t rows = 0, cols = 0;
  double stride() const { return static_cast<double>(std::int64_t{1} << level); }
};

/// Longer-side range [lo, hi) of the boxes a level is responsible for.
std::pair<double, double> level_size_range(int level);

struct LevelTargets {
  LevelGrid grid;
  Tensor labels;                  // [1, rows, cols] in {0, 1}
  Tensor regression;              // [4, rows, cols], defined where labels == 1
  std::vector<int> assigned_box;  // per position, -1 when negative
};

struct DetectionTargets {
  std::vector<LevelTargets> levels;
  std::int64_t positives() const;
};

/// A cell is positive when its centre lies in a ground-truth box whose longer side falls in the
/// level's range; among several such boxes the smallest area wins (ties: lower index).
DetectionTargets assign_targets(std::span<const LesionBox> gt, std::span<const LevelGrid> levels);

struct LossTerms {
  Var total;
  Var classification;
  Var regression;
};

/// Mean binary cross-entropy over all positions plus smooth-L1 over positive positions
/// (summed over the four distances, averaged over positives).
LossTerms detection_loss(const std::vector<LevelOutput>& outputs, const DetectionTargets& targets,
                         double beta = 1.0);

struct LevelPrediction {
  int level = 0;
  Tensor logits;      // [1, H_i, W_i]
  Tensor regression;  // [4, H_i, W_i]
};

struct Candidate {
  LesionBox box;
  int level = 0;
  std::int64_t position = 0;  // row-major index within the level
};

/// Greedy suppression: descending score, ties by (lower level, lower position); a candidate is
/// dropped when its IoU with an already kept one exceeds the threshold.
std::vector<LesionBox> nms(std::vector<Candidate> candidates, double iou_threshold = 0.5);

/// Decodes cells with sigmoid(logit) >= score_threshold to boxes clipped to the image, then applies nms.
std::vector<LesionBox> decode_and_nms(std::span<const LevelPrediction> preds, std::int64_t slice, double image_w,
                                      double image_h, double score_threshold, double iou_threshold = 0.5);

}  // namespace vdet::detection
