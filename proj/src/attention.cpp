#include "vdet/attention.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "vdet/ops.hpp"

namespace vdet::attention {

namespace {

std::atomic<std::int64_t> g_pair_counter{0};

// q, k or v for every (window, head): [Nw * heads, n, d] from qkv [Nw, n, 3C].
Var split_heads(Var qkv, int part, std::int64_t nw, std::int64_t n, int heads, int d) {
  const std::int64_t c = static_cast<std::int64_t>(heads) * d;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(nw * heads * n * d));
  std::size_t q = 0;
  for (std::int64_t b = 0; b < nw; ++b)
    for (int h = 0; h < heads; ++h)
      for (std::int64_t i = 0; i < n; ++i)
        for (int dd = 0; dd < d; ++dd) idx[q++] = (b * n + i) * 3 * c + part * c + h * d + dd;
  return ops::gather(qkv, ops::make_index(std::move(idx)), {nw * heads, n, d});
}

// Inverse layout of split_heads: [Nw * heads, n, d] -> [Nw, n, C].
Var merge_heads(Var o, std::int64_t nw, std::int64_t n, int heads, int d) {
  const std::int64_t c = static_cast<std::int64_t>(heads) * d;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(nw * n * c));
  std::size_t q = 0;
  for (std::int64_t b = 0; b < nw; ++b)
    for (std::int64_t i = 0; i < n; ++i)
      for (int h = 0; h < heads; ++h)
        for (int dd = 0; dd < d; ++dd) idx[q++] = ((b * heads + h) * n + i) * d + dd;
  return ops::gather(o, ops::make_index(std::move(idx)), {nw, n, c});
}

Var relative_bias(Tape& tape, Parameter& table, const WindowGeometry& g, int window, int heads) {
  const std::int64_t n = g.tokens_per_window();
  const std::int64_t span = 2 * window - 1;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(heads * n * n));
  std::size_t q = 0;
  for (int h = 0; h < heads; ++h)
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        const std::int64_t dr = i / g.win_c - j / g.win_c + window - 1;
        const std::int64_t dc = i % g.win_c - j % g.win_c + window - 1;
        idx[q++] = (dr * span + dc) * heads + h;
      }
  return ops::gather(tape.param(table), ops::make_index(std::move(idx)), {heads, n, n});
}

Tensor init_linear(Rng& rng, std::int64_t in, std::int64_t out) { return rng.normal_tensor({in, out}, 0.02); }

void zero(Parameter* p) {
  if (p) std::fill(p->value.data().begin(), p->value.data().end(), 0.0);
}

}  // namespace

int AttentionConfig::hidden() const {
  return std::max(1, static_cast<int>(std::lround(mlp_ratio * channels)));
}

void AttentionConfig::validate() const {
  if (channels <= 0 || heads <= 0) throw ConfigError("attention channels and heads must be positive");
  if (channels % heads != 0) {
    throw ConfigError("attention channels (" + std::to_string(channels) + ") not divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  if (window < 1) throw ConfigError("attention window must be >= 1");
  if (!(mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be positive");
}

WindowGeometry WindowGeometry::make(std::int64_t rows, std::int64_t cols, int window, int shift) {
  if (window < 1) throw ConfigError("window size must be >= 1, got " + std::to_string(window));
  if (shift < 0 || shift >= window) {
    throw ConfigError("shift must satisfy 0 <= shift < window, got shift " + std::to_string(shift) + " window " +
                      std::to_string(window));
  }
  if (rows < 1 || cols < 1) throw DimensionError("plane extents must be >= 1");
  WindowGeometry g;
  g.rows = rows;
  g.cols = cols;
  g.win_r = std::min<std::int64_t>(window, rows);
  g.win_c = std::min<std::int64_t>(window, cols);
  g.shift_r = rows < window ? 0 : shift;
  g.shift_c = cols < window ? 0 : shift;
  g.padded_r = (rows + g.win_r - 1) / g.win_r * g.win_r;
  g.padded_c = (cols + g.win_c - 1) / g.win_c * g.win_c;
  return g;
}

std::pair<std::int64_t, std::int64_t> WindowGeometry::source_cell(std::int64_t win, std::int64_t t) const {
  const std::int64_t sr = (win / windows_c()) * win_r + t / win_c;
  const std::int64_t sc = (win % windows_c()) * win_c + t % win_c;
  return {(sr + shift_r) % padded_r, (sc + shift_c) % padded_c};
}

std::int64_t PadRecord::padded_cells() const {
  return std::count(pad_mask.begin(), pad_mask.end(), std::uint8_t{1});
}

Var to_windows(Var plane, const WindowGeometry& g) {
  const Shape& s = plane.shape();
  if (s.size() != 4 || s[1] != g.rows || s[2] != g.cols) {
    throw DimensionError("plane batch " + to_string(s) + " does not match window geometry");
  }
  const std::int64_t b = s[0], c = s[3];
  const std::int64_t nwp = g.windows_per_plane(), n = g.tokens_per_window();
  std::vector<std::int64_t> idx(static_cast<std::size_t>(b * nwp * n * c));
  std::size_t q = 0;
  for (std::int64_t p = 0; p < b; ++p)
    for (std::int64_t w = 0; w < nwp; ++w)
      for (std::int64_t t = 0; t < n; ++t) {
        const auto [r, cc] = g.source_cell(w, t);
        const bool padding = g.is_padding(r, cc);
        const std::int64_t base = ((p * g.rows + r) * g.cols + cc) * c;
        for (std::int64_t ch = 0; ch < c; ++ch) idx[q++] = padding ? -1 : base + ch;
      }
  return ops::gather(plane, ops::make_index(std::move(idx)), {b * nwp, n, c});
}

Var from_windows(Var windows, const WindowGeometry& g, std::int64_t planes, std::int64_t channels) {
  const std::int64_t nwp = g.windows_per_plane(), n = g.tokens_per_window();
  if (windows.shape() != Shape{planes * nwp, n, channels}) {
    throw ContractError("windows " + to_string(windows.shape()) + " inconsistent with pad record");
  }
  std::vector<std::int64_t> idx(static_cast<std::size_t>(planes * g.rows * g.cols * channels));
  std::size_t q = 0;
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t r = 0; r < g.rows; ++r)
      for (std::int64_t cc = 0; cc < g.cols; ++cc) {
        const std::int64_t sr = (r - g.shift_r + g.padded_r) % g.padded_r;
        const std::int64_t sc = (cc - g.shift_c + g.padded_c) % g.padded_c;
        const std::int64_t w = (sr / g.win_r) * g.windows_c() + sc / g.win_c;
        const std::int64_t t = (sr % g.win_r) * g.win_c + sc % g.win_c;
        const std::int64_t base = ((p * nwp + w) * n + t) * channels;
        for (std::int64_t ch = 0; ch < channels; ++ch) idx[q++] = base + ch;
      }
  return ops::gather(windows, ops::make_index(std::move(idx)), {planes, g.rows, g.cols, channels});
}

std::pair<Var, PadRecord> partition_windows(Var plane, int window) {
  if (window <= 0) throw ConfigError("window size must be positive, got " + std::to_string(window));
  const Shape& s = plane.shape();
  if (s.size() != 4) throw DimensionError("plane batch must be [B, rows, cols, C], got " + to_string(s));
  PadRecord rec;
  rec.planes = s[0];
  rec.channels = s[3];
  rec.geometry = WindowGeometry::make(s[1], s[2], window, 0);
  const auto& g = rec.geometry;
  rec.pad_mask.assign(static_cast<std::size_t>(g.padded_r * g.padded_c), 0);
  for (std::int64_t r = 0; r < g.padded_r; ++r)
    for (std::int64_t c = 0; c < g.padded_c; ++c)
      rec.pad_mask[static_cast<std::size_t>(r * g.padded_c + c)] = g.is_padding(r, c) ? 1 : 0;
  return {to_windows(plane, g), std::move(rec)};
}

Var merge_windows(Var windows, const PadRecord& record) {
  const auto& g = record.geometry;
  if (record.pad_mask.size() != static_cast<std::size_t>(g.padded_r * g.padded_c)) {
    throw ContractError("pad record mask does not match its geometry");
  }
  return from_windows(windows, g, record.planes, record.channels);
}

Var cyclic_shift(Var plane, std::int64_t offset_rows, std::int64_t offset_cols) {
  if (plane.value().rank() != 4) throw DimensionError("plane batch must be [B, rows, cols, C]");
  return ops::roll(ops::roll(plane, 1, offset_rows), 2, offset_cols);
}

WindowMask build_shift_mask(const WindowGeometry& g) {
  const std::int64_t nwp = g.windows_per_plane(), n = g.tokens_per_window();
  Tensor m({nwp, n, n});
  auto region = [](std::int64_t pos, std::int64_t padded, std::int64_t win, std::int64_t shift) {
    if (pos < padded - win) return 0;
    return pos < padded - shift ? 1 : 2;
  };
  std::vector<int> reg(static_cast<std::size_t>(n));
  std::vector<bool> pad(static_cast<std::size_t>(n));
  for (std::int64_t w = 0; w < nwp; ++w) {
    for (std::int64_t t = 0; t < n; ++t) {
      const std::int64_t sr = (w / g.windows_c()) * g.win_r + t / g.win_c;
      const std::int64_t sc = (w % g.windows_c()) * g.win_c + t % g.win_c;
      reg[static_cast<std::size_t>(t)] =
          region(sr, g.padded_r, g.win_r, g.shift_r) * 3 + region(sc, g.padded_c, g.win_c, g.shift_c);
      const auto [r, c] = g.source_cell(w, t);
      pad[static_cast<std::size_t>(t)] = g.is_padding(r, c);
    }
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
        const bool blocked = reg[ui] != reg[uj] || (i != j && (pad[ui] || pad[uj]));
        m[(w * n + i) * n + j] = blocked ? kMaskValue : 0.0;
      }
  }
  return WindowMask{std::move(m)};
}

WindowMask build_shift_mask(std::int64_t rows, std::int64_t cols, int window, int shift) {
  return build_shift_mask(WindowGeometry::make(rows, cols, window, shift));
}

BlockParams register_block(ParameterStore& store, const std::string& prefix, const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::int64_t c = cfg.channels, hid = cfg.hidden(), span = 2 * cfg.window - 1;
  BlockParams p;
  p.norm1_g = &store.add(prefix + ".norm1.weight", Tensor({c}, 1.0));
  p.norm1_b = &store.add(prefix + ".norm1.bias", Tensor({c}));
  p.attn.qkv_w = &store.add(prefix + ".attn.qkv.weight", init_linear(rng, c, 3 * c));
  p.attn.qkv_b = &store.add(prefix + ".attn.qkv.bias", Tensor({3 * c}));
  if (cfg.use_relative_bias) {
    p.attn.rel_table = &store.add(prefix + ".attn.relative_bias", rng.normal_tensor({span * span, cfg.heads}, 0.02));
  }
  p.attn.proj_w = &store.add(prefix + ".attn.proj.weight", init_linear(rng, c, c));
  p.attn.proj_b = &store.add(prefix + ".attn.proj.bias", Tensor({c}));
  p.norm2_g = &store.add(prefix + ".norm2.weight", Tensor({c}, 1.0));
  p.norm2_b = &store.add(prefix + ".norm2.bias", Tensor({c}));
  p.fc1_w = &store.add(prefix + ".mlp.fc1.weight", init_linear(rng, c, hid));
  p.fc1_b = &store.add(prefix + ".mlp.fc1.bias", Tensor({hid}));
  p.fc2_w = &store.add(prefix + ".mlp.fc2.weight", init_linear(rng, hid, c));
  p.fc2_b = &store.add(prefix + ".mlp.fc2.bias", Tensor({c}));
  return p;
}

PairParams register_pair(ParameterStore& store, const std::string& prefix, const AttentionConfig& cfg, Rng& rng) {
  PairParams p;
  p.regular = register_block(store, prefix + ".block0", cfg, rng);
  p.shifted = register_block(store, prefix + ".block1", cfg, rng);
  return p;
}

void zero_output_layers(BlockParams& p) {
  zero(p.attn.proj_w);
  zero(p.attn.proj_b);
  zero(p.fc2_w);
  zero(p.fc2_b);
}

void zero_output_layers(PairParams& p) {
  zero_output_layers(p.regular);
  zero_output_layers(p.shifted);
}

Var wmsa(Var windows, const WmsaParams& params, const WindowMask& mask, const AttentionConfig& cfg,
         const WindowGeometry& geometry, AttentionProbe* probe) {
  cfg.validate();
  Tape& tape = *windows.tape;
  const Shape& s = windows.shape();
  const std::int64_t n = geometry.tokens_per_window();
  const std::int64_t nwp = geometry.windows_per_plane();
  if (s.size() != 3 || s[1] != n || s[2] != cfg.channels) {
    throw DimensionError("wmsa windows " + to_string(s) + " do not match window geometry / channels");
  }
  if (mask.logits.shape() != Shape{nwp, n, n} || s[0] % nwp != 0) {
    throw ContractError("wmsa mask " + to_string(mask.logits.shape()) + " does not match " + std::to_string(s[0]) +
                        " windows of " + std::to_string(n) + " tokens");
  }
  const std::int64_t nw = s[0], planes = nw / nwp;
  const int heads = cfg.heads, d = cfg.head_dim();
  g_pair_counter += nw * n * n;

  Var qkv = ops::linear(windows, tape.param(*params.qkv_w), tape.param(*params.qkv_b));
  Var q = split_heads(qkv, 0, nw, n, heads, d);
  Var k = split_heads(qkv, 1, nw, n, heads, d);
  Var v = split_heads(qkv, 2, nw, n, heads, d);

  Var logits = ops::scale(ops::matmul(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(d)));
  logits = ops::reshape(logits, {planes, nwp, heads, n, n});

  const bool masked = std::any_of(mask.logits.data().begin(), mask.logits.data().end(), [](double x) { return x != 0.0; });
  if (masked || params.rel_table) {
    Tensor expanded({nwp, heads, n, n});
    for (std::int64_t w = 0; w < nwp; ++w)
      for (int h = 0; h < heads; ++h)
        std::copy_n(mask.logits.ptr() + w * n * n, n * n, expanded.ptr() + (w * heads + h) * n * n);
    Var extra = tape.constant(std::move(expanded));
    if (params.rel_table) extra = ops::add(extra, relative_bias(tape, *params.rel_table, geometry, cfg.window, heads));
    logits = ops::add(logits, extra);
  }
  Var attn = ops::softmax_last(ops::reshape(logits, {nw * heads, n, n}));
  if (probe) {
    probe->weights.push_back(attn.value().reshaped({nw, heads, n, n}));
    probe->geometry.push_back(geometry);
  }
  Var o = merge_heads(ops::matmul(attn, v), nw, n, heads, d);
  return ops::linear(o, tape.param(*params.proj_w), tape.param(*params.proj_b));
}

Var transformer_block(Var plane, const BlockParams& p, const AttentionConfig& cfg, int shift, AttentionProbe* probe) {
  Tape& tape = *plane.tape;
  const Shape& s = plane.shape();
  if (s.size() != 4 || s[3] != cfg.channels) {
    throw DimensionError("transformer block expects [B, rows, cols, " + std::to_string(cfg.channels) + "], got " +
                         to_string(s));
  }
  const WindowGeometry g = WindowGeometry::make(s[1], s[2], cfg.window, shift);
  Var h = ops::layer_norm(plane, tape.param(*p.norm1_g), tape.param(*p.norm1_b));
  Var a = wmsa(to_windows(h, g), p.attn, build_shift_mask(g), cfg, g, probe);
  Var x = ops::add(plane, from_windows(a, g, s[0], s[3]));
  Var m = ops::layer_norm(x, tape.param(*p.norm2_g), tape.param(*p.norm2_b));
  m = ops::gelu(ops::linear(m, tape.param(*p.fc1_w), tape.param(*p.fc1_b)));
  m = ops::linear(m, tape.param(*p.fc2_w), tape.param(*p.fc2_b));
  return ops::add(x, m);
}

Var swin_pair_pass(Var plane, const PairParams& params, const AttentionConfig& cfg, AttentionProbe* probe) {
  cfg.validate();
  Var x = transformer_block(plane, params.regular, cfg, 0, probe);
  return transformer_block(x, params.shifted, cfg, cfg.window / 2, probe);
}

std::int64_t pair_counter() { return g_pair_counter.load(); }
void reset_pair_counter() { g_pair_counter = 0; }

}  // namespace vdet::attention
