#include "vdet/backbone.hpp"

#include <cmath>

#include "vdet/ops.hpp"

namespace vdet::backbone {

namespace {

Tensor conv_init(Rng& rng, std::int64_t out, std::int64_t in, std::int64_t k) {
  return rng.normal_tensor({out, in, k, k}, std::sqrt(1.0 / static_cast<double>(in * k * k)));
}

Var to_tokens(Var x) {
  const Shape& s = x.shape();
  return ops::reshape(ops::permute(x, {1, 2, 0}), {1, s[1], s[2], s[0]});
}

Var from_tokens(Var t) {
  const Shape& s = t.shape();
  return ops::permute(ops::reshape(t, {s[1], s[2], s[3]}), {2, 0, 1});
}

}  // namespace

void BackboneConfig::validate() const {
  if (in_channels < 1) throw ConfigError("backbone in_channels must be >= 1");
  if (patch < 1) throw ConfigError("patch size must be >= 1");
  if (window < 1) throw ConfigError("backbone window must be >= 1");
  if (fpn_channels < 1) throw ConfigError("fpn_channels must be >= 1");
  for (int s = 0; s < 4; ++s) {
    if (depths[static_cast<std::size_t>(s)] < 1) throw ConfigError("stage depths must be >= 1");
    if (s > 0 && widths[static_cast<std::size_t>(s)] != 2 * widths[static_cast<std::size_t>(s - 1)]) {
      throw ConfigError("stage widths must double from stage to stage");
    }
    stage_attention(s).validate();
  }
}

attention::AttentionConfig BackboneConfig::stage_attention(int stage) const {
  attention::AttentionConfig a;
  a.channels = widths[static_cast<std::size_t>(stage)];
  a.heads = heads[static_cast<std::size_t>(stage)];
  a.window = window;
  a.mlp_ratio = mlp_ratio;
  a.use_relative_bias = use_relative_bias;
  return a;
}

EncoderParams register_encoder(ParameterStore& store, const std::string& prefix, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  p.embed_w = &store.add(prefix + ".patch_embed.weight", conv_init(rng, cfg.widths[0], cfg.in_channels, cfg.patch));
  p.embed_b = &store.add(prefix + ".patch_embed.bias", Tensor({cfg.widths[0]}));
  for (int s = 0; s < 4; ++s) {
    const auto us = static_cast<std::size_t>(s);
    for (int d = 0; d < cfg.depths[us]; ++d) {
      p.stages[us].push_back(attention::register_pair(
          store, prefix + ".stage" + std::to_string(s + 1) + ".pair" + std::to_string(d), cfg.stage_attention(s), rng));
    }
    if (s < 3) {
      const std::int64_t c = cfg.widths[us];
      const std::string mp = prefix + ".merge" + std::to_string(s + 1);
      p.merges[us].norm_g = &store.add(mp + ".norm.weight", Tensor({4 * c}, 1.0));
      p.merges[us].norm_b = &store.add(mp + ".norm.bias", Tensor({4 * c}));
      p.merges[us].reduction = &store.add(mp + ".reduction.weight", rng.normal_tensor({4 * c, 2 * c}, 0.02));
    }
  }
  return p;
}

FpnParams register_fpn(ParameterStore& store, const std::string& prefix, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  FpnParams p;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string name = prefix + ".lateral" + std::to_string(i + 2);
    p.lateral_w[i] = &store.add(name + ".weight", conv_init(rng, cfg.fpn_channels, cfg.widths[i], 1));
    p.lateral_b[i] = &store.add(name + ".bias", Tensor({cfg.fpn_channels}));
  }
  return p;
}

Var patch_embed(Var image, Parameter& weight, Parameter& bias, int patch) {
  const Shape& s = image.shape();
  if (s.size() != 3) throw DimensionError("patch_embed expects [C, H, W], got " + to_string(s));
  if (patch < 1 || s[1] % patch != 0 || s[2] % patch != 0) {
    throw ContractError("image extents " + to_string(s) + " are not divisible by patch size " + std::to_string(patch) +
                        "; pad the input first");
  }
  Tape& tape = *image.tape;
  return ops::conv2d(image, tape.param(weight), tape.param(bias), patch, 0);
}

Var patch_merge(Var x, const MergeParams& params) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("patch_merge expects [c, h, w], got " + to_string(s));
  const std::int64_t c = s[0], h = s[1], w = s[2];
  if (h % 2 != 0 || w % 2 != 0) throw ContractError("patch_merge needs even extents, got " + to_string(s));
  const std::int64_t ho = h / 2, wo = w / 2;
  // Neighbour order (dy, dx): (0,0), (1,0), (0,1), (1,1); channels of each neighbour contiguous.
  static constexpr int kDy[4] = {0, 1, 0, 1};
  static constexpr int kDx[4] = {0, 0, 1, 1};
  std::vector<std::int64_t> idx(static_cast<std::size_t>(ho * wo * 4 * c));
  std::size_t q = 0;
  for (std::int64_t y = 0; y < ho; ++y)
    for (std::int64_t xx = 0; xx < wo; ++xx)
      for (int nb = 0; nb < 4; ++nb)
        for (std::int64_t ch = 0; ch < c; ++ch) idx[q++] = (ch * h + 2 * y + kDy[nb]) * w + 2 * xx + kDx[nb];
  Tape& tape = *x.tape;
  Var t = ops::gather(x, ops::make_index(std::move(idx)), {ho * wo, 4 * c});
  t = ops::layer_norm(t, tape.param(*params.norm_g), tape.param(*params.norm_b));
  t = ops::matmul(t, tape.param(*params.reduction));
  return ops::permute(ops::reshape(t, {ho, wo, 2 * c}), {2, 0, 1});
}

std::array<Var, 4> encoder_forward(Var image, const BackboneConfig& cfg, const EncoderParams& params) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != cfg.in_channels) {
    throw DimensionError("encoder expects [" + std::to_string(cfg.in_channels) + ", H, W], got " + to_string(s));
  }
  if (s[1] % cfg.input_multiple() != 0 || s[2] % cfg.input_multiple() != 0) {
    throw ContractError("image extents " + to_string(s) + " must be multiples of " +
                        std::to_string(cfg.input_multiple()));
  }
  std::array<Var, 4> out;
  Var x = patch_embed(image, *params.embed_w, *params.embed_b, cfg.patch);
  for (int st = 0; st < 4; ++st) {
    const auto us = static_cast<std::size_t>(st);
    const auto acfg = cfg.stage_attention(st);
    Var tok = to_tokens(x);
    for (const auto& pair : params.stages[us]) tok = attention::swin_pair_pass(tok, pair, acfg);
    out[us] = from_tokens(tok);
    if (st < 3) x = patch_merge(out[us], params.merges[us]);
  }
  return out;
}

PyramidFeatures fpn_fuse(const std::array<Var, 4>& c, const FpnParams& params) {
  Tape& tape = *c[0].tape;
  std::array<Var, 4> lateral;
  for (std::size_t i = 0; i < 4; ++i) {
    lateral[i] = ops::conv2d(c[i], tape.param(*params.lateral_w[i]), tape.param(*params.lateral_b[i]), 1, 0);
  }
  PyramidFeatures p;
  p.level(5) = lateral[3];
  for (int lvl = 4; lvl >= 2; --lvl) {
    Var up = ops::upsample_nearest2x(p.level(lvl + 1));
    const Var& lat = lateral[static_cast<std::size_t>(lvl - 2)];
    if (up.shape() != lat.shape()) {
      throw ContractError("FPN level " + std::to_string(lvl) + ": upsampled " + to_string(up.shape()) +
                          " does not match lateral " + to_string(lat.shape()));
    }
    p.level(lvl) = ops::add(lat, up);
  }
  p.level(6) = ops::maxpool2x2(p.level(5));
  return p;
}

}  // namespace vdet::backbone
