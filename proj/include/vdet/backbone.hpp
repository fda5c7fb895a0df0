#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vdet/attention.hpp"

namespace vdet::backbone {

inline constexpr int kMinLevel = 2;
inline constexpr int kMaxLevel = 6;
inline constexpr int kNumLevels = kMaxLevel - kMinLevel + 1;

struct BackboneConfig {
  int in_channels = 3;
  int patch = 4;
  std::array<int, 4> depths{1, 1, 1, 1};
  std::array<int, 4> widths{32, 64, 128, 256};
  std::array<int, 4> heads{2, 2, 4, 4};
  int window = 4;
  double mlp_ratio = 4.0;
  bool use_relative_bias = true;
  int fpn_channels = 256;

  void validate() const;
  attention::AttentionConfig stage_attention(int stage) const;
  // Input extents must be multiples of this.
  int input_multiple() const { return patch * 8; }
};

struct MergeParams {
  Parameter* norm_g = nullptr;
  Parameter* norm_b = nullptr;
  Parameter* reduction = nullptr;  // [4c, 2c], no bias
};

struct EncoderParams {
  Parameter* embed_w = nullptr;  // [C1, in, p, p]
  Parameter* embed_b = nullptr;
  std::array<std::vector<attention::PairParams>, 4> stages;
  std::array<MergeParams, 3> merges;
};

struct FpnParams {
  std::array<Parameter*, 4> lateral_w{};  // [F, c_i, 1, 1] for C2..C5
  std::array<Parameter*, 4> lateral_b{};
};

EncoderParams register_encoder(ParameterStore& store, const std::string& prefix, const BackboneConfig& cfg, Rng& rng);
FpnParams register_fpn(ParameterStore& store, const std::string& prefix, const BackboneConfig& cfg, Rng& rng);

/// Equal-width feature maps for levels 2..6, each [F, H / 2^i, W / 2^i] (level 6 pooled from 5).
struct PyramidFeatures {
  std::array<Var, kNumLevels> levels;

  Var& level(int i) { return levels[static_cast<std::size_t>(i - kMinLevel)]; }
  const Var& level(int i) const { return levels[static_cast<std::size_t>(i - kMinLevel)]; }
};

/// Non-overlapping p x p patches projected to the stage-1 width (stride-p convolution).
Var patch_embed(Var image, Parameter& weight, Parameter& bias, int patch);
/// [c, h, w] -> [2c, h/2, w/2]: concatenate each 2x2 neighbourhood, layer-norm, project.
Var patch_merge(Var x, const MergeParams& params);

/// C2..C5 for one [in, H, W] image; stage s output has extent (H / p) / 2^(s-1).
std::array<Var, 4> encoder_forward(Var image, const BackboneConfig& cfg, const EncoderParams& params);
/// P5 = L5, Pi = Li + Up(P(i+1)), P6 = maxpool(P5), with Li the 1x1 lateral projections.
PyramidFeatures fpn_fuse(const std::array<Var, 4>& c, const FpnParams& params);

}  // namespace vdet::backbone
