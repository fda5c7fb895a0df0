#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vdet/autodiff.hpp"
#include "vdet/rng.hpp"

namespace vdet::attention {

struct AttentionConfig {
  int channels = 32;
  int heads = 2;
  int window = 4;
  bool use_relative_bias = true;
  double mlp_ratio = 4.0;

  int head_dim() const { return channels / heads; }
  int hidden() const;
  void validate() const;
};

inline constexpr double kMaskValue = -1e9;

/// Window layout of one pass over a rows x cols grid. An axis shorter than the window
/// keeps a single window of the axis length and is never shifted; other axes are padded
/// up to a multiple of the window.
struct WindowGeometry {
  std::int64_t rows = 0, cols = 0;
  std::int64_t win_r = 0, win_c = 0;
  std::int64_t shift_r = 0, shift_c = 0;
  std::int64_t padded_r = 0, padded_c = 0;

  static WindowGeometry make(std::int64_t rows, std::int64_t cols, int window, int shift);

  std::int64_t windows_r() const { return padded_r / win_r; }
  std::int64_t windows_c() const { return padded_c / win_c; }
  std::int64_t windows_per_plane() const { return windows_r() * windows_c(); }
  std::int64_t tokens_per_window() const { return win_r * win_c; }
  // Padded-grid cell (row, col) that lands at window-local token `t` of window `win`
  // after the cyclic shift by (-shift_r, -shift_c).
  std::pair<std::int64_t, std::int64_t> source_cell(std::int64_t win, std::int64_t t) const;
  bool is_padding(std::int64_t r, std::int64_t c) const { return r >= rows || c >= cols; }
};

/// What partitioning did to a plane batch, sufficient to invert it.
struct PadRecord {
  std::int64_t planes = 0;
  std::int64_t channels = 0;
  WindowGeometry geometry;
  std::vector<std::uint8_t> pad_mask;  // padded_r x padded_c, 1 = padding cell

  std::int64_t padded_cells() const;
};

/// Additive logits mask [windows_per_plane, n, n] shared by every plane; entries 0 or kMaskValue.
struct WindowMask {
  Tensor logits;
};

/// Splits a [B, rows, cols, C] plane batch into [B * windows, n, C] windows (zero padding).
std::pair<Var, PadRecord> partition_windows(Var plane, int window);
/// Exact inverse of partition_windows; padding discarded.
Var merge_windows(Var windows, const PadRecord& record);
/// Torus roll of the token grid of a [B, rows, cols, C] plane batch.
Var cyclic_shift(Var plane, std::int64_t offset_rows, std::int64_t offset_cols);
/// Mask for a pass with the given shift (0 <= shift < window) on a rows x cols grid.
WindowMask build_shift_mask(std::int64_t rows, std::int64_t cols, int window, int shift);
WindowMask build_shift_mask(const WindowGeometry& geometry);

// Fused pad + roll + partition and its inverse, as gathers over [B, rows, cols, C].
Var to_windows(Var plane, const WindowGeometry& g);
Var from_windows(Var windows, const WindowGeometry& g, std::int64_t planes, std::int64_t channels);

/// Parameters of one windowed multi-head attention layer (weights stored [in, out]).
struct WmsaParams {
  Parameter* qkv_w = nullptr;  // [C, 3C]
  Parameter* qkv_b = nullptr;  // [3C]
  Parameter* rel_table = nullptr;  // [(2w-1)^2, heads] or null
  Parameter* proj_w = nullptr;  // [C, C]
  Parameter* proj_b = nullptr;  // [C]
};

/// One pre-norm transformer block around a windowed attention layer.
struct BlockParams {
  Parameter* norm1_g = nullptr;
  Parameter* norm1_b = nullptr;
  WmsaParams attn;
  Parameter* norm2_g = nullptr;
  Parameter* norm2_b = nullptr;
  Parameter* fc1_w = nullptr;
  Parameter* fc1_b = nullptr;
  Parameter* fc2_w = nullptr;
  Parameter* fc2_b = nullptr;
};

/// Regular-window block followed by shifted-window block.
struct PairParams {
  BlockParams regular;
  BlockParams shifted;
};

BlockParams register_block(ParameterStore& store, const std::string& prefix, const AttentionConfig& cfg, Rng& rng);
PairParams register_pair(ParameterStore& store, const std::string& prefix, const AttentionConfig& cfg, Rng& rng);

/// Zeroes the attention output projection and the MLP output layer, making the block a pure residual.
void zero_output_layers(BlockParams& p);
void zero_output_layers(PairParams& p);

/// Optional observer of the post-softmax attention weights of each block ([Nw, heads, n, n]).
struct AttentionProbe {
  std::vector<Tensor> weights;
  std::vector<WindowGeometry> geometry;
};

/// Multi-head self-attention inside each window. `windows` is [B * windows_per_plane, n, C];
/// the mask is shared by all planes. Adds Nw * n * n to the pair counter.
Var wmsa(Var windows, const WmsaParams& params, const WindowMask& mask, const AttentionConfig& cfg,
         const WindowGeometry& geometry, AttentionProbe* probe = nullptr);

Var transformer_block(Var plane, const BlockParams& params, const AttentionConfig& cfg, int shift,
                      AttentionProbe* probe = nullptr);

/// Two sequential blocks: regular windows, then windows shifted by -floor(w/2) on both axes.
Var swin_pair_pass(Var plane, const PairParams& params, const AttentionConfig& cfg, AttentionProbe* probe = nullptr);

/// Counts query-key logit entries computed by wmsa (per head-agnostic window pair).
std::int64_t pair_counter();
void reset_pair_counter();

}  // namespace vdet::attention
