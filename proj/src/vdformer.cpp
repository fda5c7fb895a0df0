#include "vdet/vdformer.hpp"

#include <vector>

#include "vdet/ops.hpp"

namespace vdet::vdformer {

namespace {

// Axis orders taking [C, H, W, T] to [planes, rows, cols, C] and back.
const std::vector<int>& to_plane_axes(View v) {
  static const std::vector<int> wt{1, 2, 3, 0}, ht{2, 1, 3, 0}, hw{3, 1, 2, 0};
  return v == View::kWT ? wt : v == View::kHT ? ht : hw;
}

const std::vector<int>& from_plane_axes(View v) {
  static const std::vector<int> wt{3, 0, 1, 2}, ht{3, 1, 0, 2}, hw{3, 1, 2, 0};
  return v == View::kWT ? wt : v == View::kHT ? ht : hw;
}

void check_window(std::int64_t n, std::int64_t t, int depth) {
  if (depth < 1 || depth % 2 == 0) throw ConfigError("slice window depth T must be odd, got " + std::to_string(depth));
  if (t < 0 || t >= n) {
    throw IndexError("slice index " + std::to_string(t) + " out of range [0, " + std::to_string(n) + ")");
  }
}

}  // namespace

const char* view_name(View v) {
  switch (v) {
    case View::kWT: return "WT";
    case View::kHT: return "HT";
    default: return "HW";
  }
}

SliceStack extract_slice_window(std::span<const Tensor> slices, std::int64_t t, int depth) {
  check_window(static_cast<std::int64_t>(slices.size()), t, depth);
  const Shape& s = slices[0].shape();
  if (s.size() != 3) throw DimensionError("slice features must be [C, H, W], got " + to_string(s));
  for (const auto& x : slices) {
    if (x.shape() != s) throw DimensionError("slice features disagree in shape: " + to_string(x.shape()));
  }
  const std::int64_t plane = numel(s);
  Tensor out({s[0], s[1], s[2], depth});
  const std::int64_t half = depth / 2;
  for (int k = 0; k < depth; ++k) {
    const std::int64_t src = t - half + k;
    if (src < 0 || src >= static_cast<std::int64_t>(slices.size())) continue;
    const double* in = slices[static_cast<std::size_t>(src)].ptr();
    for (std::int64_t i = 0; i < plane; ++i) out[i * depth + k] = in[i];
  }
  return SliceStack{std::move(out), t, depth};
}

Var stack_slice_window(std::span<const Var> slices, std::int64_t t, int depth) {
  check_window(static_cast<std::int64_t>(slices.size()), t, depth);
  Tape& tape = *slices[0].tape;
  const Shape& s = slices[0].shape();
  std::vector<Var> parts;
  parts.reserve(static_cast<std::size_t>(depth));
  const std::int64_t half = depth / 2;
  for (int k = 0; k < depth; ++k) {
    const std::int64_t src = t - half + k;
    if (src < 0 || src >= static_cast<std::int64_t>(slices.size())) {
      parts.push_back(tape.constant(Tensor::zeros(s)));
    } else {
      parts.push_back(slices[static_cast<std::size_t>(src)]);
    }
  }
  return ops::stack(parts, 3);
}

VdFormerParams register_vdformer(ParameterStore& store, const std::string& prefix,
                                 const attention::AttentionConfig& cfg, Rng& rng) {
  VdFormerParams p;
  for (std::size_t i = 0; i < kCascadeOrder.size(); ++i) {
    p.views[i] = attention::register_pair(store, prefix + ".view" + view_name(kCascadeOrder[i]), cfg, rng);
  }
  return p;
}

void zero_output_layers(VdFormerParams& p) {
  for (auto& v : p.views) attention::zero_output_layers(v);
}

PlaneLayout plane_layout(const Shape& s, View view) {
  if (s.size() != 4) throw DimensionError("slice stack must be [C, H, W, T], got " + to_string(s));
  const Shape ps = ops::permuted_shape(s, to_plane_axes(view));
  return PlaneLayout{ps[0], ps[1], ps[2]};
}

Var view_pass(Var x, View view, const attention::PairParams& params, const attention::AttentionConfig& cfg,
              attention::AttentionProbe* probe) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[0] != cfg.channels) {
    throw DimensionError("view pass expects [" + std::to_string(cfg.channels) + ", H, W, T], got " + to_string(s));
  }
  Var planes = ops::permute(x, to_plane_axes(view));
  planes = attention::swin_pair_pass(planes, params, cfg, probe);
  return ops::permute(planes, from_plane_axes(view));
}

Var vd_former(Var x, const VdFormerParams& params, const attention::AttentionConfig& cfg) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("vd_former expects [C, H, W, T], got " + to_string(s));
  if (s[3] % 2 == 0) throw ConfigError("slice window depth T must be odd, got " + std::to_string(s[3]));
  for (std::size_t i = 0; i < kCascadeOrder.size(); ++i) x = view_pass(x, kCascadeOrder[i], params.views[i], cfg);
  return ops::select(x, 3, s[3] / 2);
}

}  // namespace vdet::vdformer
