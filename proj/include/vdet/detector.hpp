#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "vdet/detection.hpp"

namespace vdet::detection {

struct DetectorConfig {
  backbone::BackboneConfig backbone;
  FusionMode fusion = FusionMode::kNone;
  int depth = 3;  // T, slices fused per prediction
  int vd_heads = 8;
  int vd_window = 4;
  double vd_mlp_ratio = 4.0;
  bool vd_relative_bias = true;
  bool vd_zero_init = false;  // start each VD-Former block as an identity
  double score_threshold = 0.05;
  double nms_iou = 0.5;

  attention::AttentionConfig vd_attention() const;
  void validate() const;
};

/// [I(k-1), I(k), I(k+1)] for slice k of a volume of [H, W] slices, zero where a neighbour is
/// missing, zero-padded on the bottom/right up to a multiple of `multiple`.
Tensor build_input_image(std::span<const Tensor> slices, std::int64_t k, int multiple);

/// Encoder + FPN per slice, inter-slice fusion per level, shared head.
class Detector {
 public:
  Detector(DetectorConfig cfg, std::uint64_t seed);
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;
  Detector(Detector&&) = default;
  Detector& operator=(Detector&&) = default;

  const DetectorConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  /// Head outputs for centre slice t; slices outside the volume contribute zero features.
  std::vector<LevelOutput> forward(Tape& tape, std::span<const Tensor> slices, std::int64_t t) const;
  std::vector<LesionBox> detect_slice(std::span<const Tensor> slices, std::int64_t t) const;
  /// Thresholded, NMS-filtered boxes of slice t from head outputs.
  std::vector<LesionBox> decode(const std::vector<LevelOutput>& outputs, std::int64_t t, double image_w,
                                double image_h) const;

  std::vector<LevelGrid> grids(std::int64_t height, std::int64_t width) const;

  backbone::PyramidFeatures slice_features(Tape& tape, std::span<const Tensor> slices, std::int64_t k) const;
  std::vector<LevelOutput> head(const backbone::PyramidFeatures& fused) const;
  /// Fusion over a window of T per-slice pyramids (centre in the middle), then the head.
  std::vector<LevelOutput> fuse_and_head(std::span<const backbone::PyramidFeatures> window) const;
  LevelFusionParams& fusion_params(int level) { return fusion_[static_cast<std::size_t>(level - backbone::kMinLevel)]; }
  const LevelFusionParams& fusion_params(int level) const {
    return fusion_[static_cast<std::size_t>(level - backbone::kMinLevel)];
  }

 private:
  DetectorConfig cfg_;
  ParameterStore store_;
  backbone::EncoderParams encoder_;
  backbone::FpnParams fpn_;
  std::array<LevelFusionParams, backbone::kNumLevels> fusion_;
  HeadParams head_;
};

}  // namespace vdet::detection
