#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

#include "vdet/attention.hpp"

namespace vdet::vdformer {

/// Which two of {H, W, T} span the attention plane; the third axis is the batch of planes.
enum class View { kWT, kHT, kHW };

inline constexpr std::array<View, 3> kCascadeOrder{View::kWT, View::kHT, View::kHW};

const char* view_name(View v);

/// T consecutive slice features around `center`, stacked on a trailing axis: [C, H, W, T].
struct SliceStack {
  Tensor data;
  std::int64_t center = 0;
  int depth = 1;  // T, odd
};

/// Slices outside [0, slices.size()) contribute zero features.
SliceStack extract_slice_window(std::span<const Tensor> slices, std::int64_t t, int depth);
/// Same on tape values; the result is differentiable w.r.t. every in-range slice.
Var stack_slice_window(std::span<const Var> slices, std::int64_t t, int depth);

struct VdFormerParams {
  std::array<attention::PairParams, 3> views;  // indexed in cascade order
};

VdFormerParams register_vdformer(ParameterStore& store, const std::string& prefix,
                                 const attention::AttentionConfig& cfg, Rng& rng);
void zero_output_layers(VdFormerParams& p);

struct PlaneLayout {
  std::int64_t planes = 0, rows = 0, cols = 0;
};
PlaneLayout plane_layout(const Shape& stack_shape, View view);

/// Runs a shifted-window pair over the planes of one view of x [C, H, W, T]; same output shape.
Var view_pass(Var x, View view, const attention::PairParams& params, const attention::AttentionConfig& cfg,
              attention::AttentionProbe* probe = nullptr);

/// WT -> HT -> HW cascade, then the centre slice: [C, H, W, T] -> [C, H, W].
Var vd_former(Var x, const VdFormerParams& params, const attention::AttentionConfig& cfg);

}  // namespace vdet::vdformer
