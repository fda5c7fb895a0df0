#include <gtest/gtest.h>

#include <cmath>
#include <tuple>

#include "test_support.hpp"
#include "vdet/attention.hpp"

namespace vdet {
namespace {

using namespace attention;
using testing::input_grad_error;
using testing::param_grad_error;
using testing::projection_loss;

AttentionConfig small_config(int channels, int heads, int window, bool bias = true) {
  AttentionConfig cfg;
  cfg.channels = channels;
  cfg.heads = heads;
  cfg.window = window;
  cfg.mlp_ratio = 2.0;
  cfg.use_relative_bias = bias;
  return cfg;
}

// Reference transformer block written directly over grid cells. A query at (r, c) sees every real
// cell that lands in the same shifted window and sits on the same side of the wrap seam on both
// axes; no windows, padding or masks are materialised.
Tensor dense_block(const Tensor& x, const BlockParams& p, const AttentionConfig& cfg, int shift) {
  const std::int64_t B = x.dim(0), R = x.dim(1), C = x.dim(2), ch = x.dim(3);
  const int heads = cfg.heads, d = cfg.head_dim(), w = cfg.window;
  const std::int64_t win_r = std::min<std::int64_t>(w, R), win_c = std::min<std::int64_t>(w, C);
  const std::int64_t s_r = R < w ? 0 : shift, s_c = C < w ? 0 : shift;
  const std::int64_t P_r = (R + win_r - 1) / win_r * win_r, P_c = (C + win_c - 1) / win_c * win_c;

  const auto norm = [&](const double* v, const Parameter* g, const Parameter* b, double* out) {
    double mean = 0, var = 0;
    for (std::int64_t k = 0; k < ch; ++k) mean += v[k];
    mean /= static_cast<double>(ch);
    for (std::int64_t k = 0; k < ch; ++k) var += (v[k] - mean) * (v[k] - mean);
    var /= static_cast<double>(ch);
    for (std::int64_t k = 0; k < ch; ++k) out[k] = (v[k] - mean) / std::sqrt(var + 1e-5) * g->value[k] + b->value[k];
  };
  const auto affine = [](const double* v, const Parameter* wt, const Parameter* b, std::int64_t in, std::int64_t out,
                         double* dst) {
    for (std::int64_t o = 0; o < out; ++o) {
      double acc = b->value[o];
      for (std::int64_t i = 0; i < in; ++i) acc += v[i] * wt->value[i * out + o];
      dst[o] = acc;
    }
  };

  const std::int64_t cells = R * C;
  Tensor out = x;
  for (std::int64_t b = 0; b < B; ++b) {
    const double* xb = x.ptr() + b * cells * ch;
    std::vector<double> qkv(static_cast<std::size_t>(cells * 3 * ch)), h(static_cast<std::size_t>(ch));
    for (std::int64_t i = 0; i < cells; ++i) {
      norm(xb + i * ch, p.norm1_g, p.norm1_b, h.data());
      affine(h.data(), p.attn.qkv_w, p.attn.qkv_b, ch, 3 * ch, qkv.data() + i * 3 * ch);
    }
    for (std::int64_t r = 0; r < R; ++r)
      for (std::int64_t c = 0; c < C; ++c) {
        const std::int64_t sr = (r - s_r + P_r) % P_r, sc = (c - s_c + P_c) % P_c;
        std::vector<std::int64_t> partners;
        for (std::int64_t r2 = 0; r2 < R; ++r2)
          for (std::int64_t c2 = 0; c2 < C; ++c2) {
            const std::int64_t sr2 = (r2 - s_r + P_r) % P_r, sc2 = (c2 - s_c + P_c) % P_c;
            if (sr / win_r != sr2 / win_r || sc / win_c != sc2 / win_c) continue;
            if ((r < s_r) != (r2 < s_r) || (c < s_c) != (c2 < s_c)) continue;
            partners.push_back(r2 * C + c2);
          }
        const std::int64_t i = r * C + c;
        std::vector<double> attn_out(static_cast<std::size_t>(ch), 0.0);
        for (int hd = 0; hd < heads; ++hd) {
          std::vector<double> logit;
          for (auto j : partners) {
            double dot = 0;
            for (int k = 0; k < d; ++k) dot += qkv[i * 3 * ch + hd * d + k] * qkv[j * 3 * ch + ch + hd * d + k];
            dot /= std::sqrt(static_cast<double>(d));
            if (p.attn.rel_table) {
              const std::int64_t r2 = j / C, c2 = j % C;
              const std::int64_t dr = sr % win_r - (r2 - s_r + P_r) % P_r % win_r + w - 1;
              const std::int64_t dc = sc % win_c - (c2 - s_c + P_c) % P_c % win_c + w - 1;
              dot += p.attn.rel_table->value[(dr * (2 * w - 1) + dc) * heads + hd];
            }
            logit.push_back(dot);
          }
          double mx = -INFINITY, z = 0;
          for (double l : logit) mx = std::max(mx, l);
          for (double& l : logit) z += (l = std::exp(l - mx));
          for (std::size_t n = 0; n < partners.size(); ++n)
            for (int k = 0; k < d; ++k) attn_out[hd * d + k] += logit[n] / z * qkv[partners[n] * 3 * ch + 2 * ch + hd * d + k];
        }
        std::vector<double> proj(static_cast<std::size_t>(ch));
        affine(attn_out.data(), p.attn.proj_w, p.attn.proj_b, ch, ch, proj.data());
        double* o = out.ptr() + (b * cells + i) * ch;
        for (std::int64_t k = 0; k < ch; ++k) o[k] = xb[i * ch + k] + proj[k];
      }
    // MLP sublayer.
    const std::int64_t hid = cfg.hidden();
    std::vector<double> hidden(static_cast<std::size_t>(hid)), mlp(static_cast<std::size_t>(ch));
    for (std::int64_t i = 0; i < cells; ++i) {
      double* o = out.ptr() + (b * cells + i) * ch;
      norm(o, p.norm2_g, p.norm2_b, h.data());
      affine(h.data(), p.fc1_w, p.fc1_b, ch, hid, hidden.data());
      for (auto& v : hidden) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
      affine(hidden.data(), p.fc2_w, p.fc2_b, hid, ch, mlp.data());
      for (std::int64_t k = 0; k < ch; ++k) o[k] += mlp[k];
    }
  }
  return out;
}

void randomize(ParameterStore& store, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (Parameter* p : store.all())
    for (auto& v : p->value.data()) v += rng.normal() * scale;
}

TEST(WindowGeometry, PadsLongAxesAndClampsShortOnes) {
  const auto g = WindowGeometry::make(7, 5, 4, 2);
  EXPECT_EQ(g.win_r, 4);
  EXPECT_EQ(g.win_c, 4);
  EXPECT_EQ(g.padded_r, 8);
  EXPECT_EQ(g.padded_c, 8);
  EXPECT_EQ(g.shift_r, 2);
  EXPECT_EQ(g.windows_per_plane(), 4);
  EXPECT_EQ(g.tokens_per_window(), 16);

  const auto t = WindowGeometry::make(3, 10, 4, 2);
  EXPECT_EQ(t.win_r, 3);
  EXPECT_EQ(t.shift_r, 0);
  EXPECT_EQ(t.padded_r, 3);
  EXPECT_EQ(t.shift_c, 2);
  EXPECT_EQ(t.padded_c, 12);
  EXPECT_EQ(t.windows_per_plane(), 3);
}

TEST(WindowGeometry, RejectsBadArguments) {
  EXPECT_THROW(WindowGeometry::make(4, 4, 0, 0), ConfigError);
  EXPECT_THROW(WindowGeometry::make(4, 4, 4, 4), ConfigError);
  EXPECT_THROW(WindowGeometry::make(4, 4, 4, -1), ConfigError);
  EXPECT_THROW(WindowGeometry::make(0, 4, 2, 0), DimensionError);
}

TEST(Partition, RoundTripIsExactWithPadding) {
  Rng rng(1);
  for (auto [rows, cols, w] : {std::tuple{7, 5, 4}, {8, 8, 4}, {3, 9, 4}, {1, 1, 3}, {6, 6, 1}}) {
    Tape tape(false);
    const Tensor x = rng.uniform_tensor({2, rows, cols, 3}, -1, 1);
    auto [win, rec] = partition_windows(tape.constant(x), w);
    const auto& g = rec.geometry;
    EXPECT_EQ(win.shape(), (Shape{2 * g.windows_per_plane(), g.tokens_per_window(), 3}));
    EXPECT_EQ(rec.padded_cells(), g.padded_r * g.padded_c - rows * cols);
    EXPECT_TRUE(merge_windows(win, rec).value().bit_equal(x));
  }
}

TEST(Partition, WindowsHoldContiguousBlocksAndZeroPadding) {
  Tape tape(false);
  Tensor x({1, 5, 3, 1});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<double>(i + 1);
  auto [win, rec] = partition_windows(tape.constant(x), 2);
  // padded 6 x 4, windows 3 x 2; second window covers rows 0-1, cols 2-3 (col 3 is padding)
  const Tensor& v = win.value();
  EXPECT_EQ(v.at({1, 0, 0}), x.at({0, 0, 2, 0}));
  EXPECT_EQ(v.at({1, 1, 0}), 0.0);
  EXPECT_EQ(v.at({1, 2, 0}), x.at({0, 1, 2, 0}));
  EXPECT_EQ(v.at({4, 2, 0}), 0.0);  // row 5 is padding
}

TEST(Partition, ShiftedLayoutMatchesRollThenPartition) {
  Rng rng(2);
  Tape tape(false);
  const Tensor x = rng.uniform_tensor({2, 8, 12, 2}, -1, 1);
  const Var in = tape.constant(x);
  const auto g = WindowGeometry::make(8, 12, 4, 2);
  const Tensor fused = to_windows(in, g).value();
  const Tensor ref = partition_windows(cyclic_shift(in, -2, -2), 4).first.value();
  EXPECT_TRUE(fused.bit_equal(ref));
  EXPECT_TRUE(from_windows(to_windows(in, g), g, 2, 2).value().bit_equal(x));
}

TEST(Partition, CyclicShiftWrapsAround) {
  Tape tape(false);
  Tensor x({1, 3, 4, 1});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<double>(i);
  const Tensor y = cyclic_shift(tape.constant(x), -1, 1).value();
  for (std::int64_t r = 0; r < 3; ++r)
    for (std::int64_t c = 0; c < 4; ++c) {
      EXPECT_EQ(y.at({0, r, c, 0}), x.at({0, (r + 1) % 3, (c + 3) % 4, 0}));
    }
  EXPECT_TRUE(cyclic_shift(cyclic_shift(tape.constant(x), 2, -3), -2, 3).value().bit_equal(x));
}

TEST(Partition, Errors) {
  Tape tape(false);
  EXPECT_THROW(partition_windows(tape.constant(Tensor({4, 4, 2})), 2), DimensionError);
  EXPECT_THROW(partition_windows(tape.constant(Tensor({1, 4, 4, 2})), 0), ConfigError);
  auto [win, rec] = partition_windows(tape.constant(Tensor({1, 4, 4, 2})), 2);
  rec.planes = 2;
  EXPECT_THROW(merge_windows(win, rec), ContractError);
}

// Two tokens of a shifted window may interact iff both are real and neither axis separates them
// across the wrap seam; every token may attend to itself.
TEST(ShiftMask, MatchesBruteForceSeamOracle) {
  for (std::int64_t rows = 1; rows <= 9; ++rows)
    for (std::int64_t cols = 1; cols <= 9; cols += 2)
      for (int w = 1; w <= 5; ++w)
        for (int s = 0; s < w; ++s) {
          const auto g = WindowGeometry::make(rows, cols, w, s);
          const Tensor m = build_shift_mask(rows, cols, w, s).logits;
          const std::int64_t n = g.tokens_per_window(), nwc = g.padded_c / g.win_c;
          ASSERT_EQ(m.shape(), (Shape{g.windows_per_plane(), n, n}));
          for (std::int64_t win = 0; win < g.windows_per_plane(); ++win) {
            const auto cell = [&](std::int64_t t) {
              const std::int64_t r = ((win / nwc) * g.win_r + t / g.win_c + g.shift_r) % g.padded_r;
              const std::int64_t c = ((win % nwc) * g.win_c + t % g.win_c + g.shift_c) % g.padded_c;
              return std::pair{r, c};
            };
            for (std::int64_t i = 0; i < n; ++i)
              for (std::int64_t j = 0; j < n; ++j) {
                const auto [ri, ci] = cell(i);
                const auto [rj, cj] = cell(j);
                const bool real = ri < rows && ci < cols && rj < rows && cj < cols;
                const bool same_side = (ri < g.shift_r) == (rj < g.shift_r) && (ci < g.shift_c) == (cj < g.shift_c);
                const double expect = (i == j || (real && same_side)) ? 0.0 : kMaskValue;
                ASSERT_EQ(m.at({win, i, j}), expect) << rows << "x" << cols << " w" << w << " s" << s;
              }
          }
        }
}

TEST(ShiftMask, UnshiftedUnpaddedGridIsUnmasked) {
  const Tensor m = build_shift_mask(8, 12, 4, 0).logits;
  for (double v : m.data()) EXPECT_EQ(v, 0.0);
}

TEST(ShiftMask, SymmetricWithOpenDiagonal) {
  const Tensor m = build_shift_mask(7, 9, 4, 2).logits;
  const std::int64_t n = m.dim(1);
  for (std::int64_t w = 0; w < m.dim(0); ++w)
    for (std::int64_t i = 0; i < n; ++i) {
      EXPECT_EQ(m.at({w, i, i}), 0.0);
      for (std::int64_t j = 0; j < n; ++j) EXPECT_EQ(m.at({w, i, j}), m.at({w, j, i}));
    }
}

class BlockOracle : public ::testing::TestWithParam<std::tuple<int, int, int, int, bool>> {};

TEST_P(BlockOracle, MatchesDenseReference) {
  const auto [rows, cols, window, shift, bias] = GetParam();
  const AttentionConfig cfg = small_config(6, 2, window, bias);
  ParameterStore store;
  Rng rng(11);
  BlockParams p = register_block(store, "b", cfg, rng);
  randomize(store, 12);
  const Tensor x = Rng(13).uniform_tensor({2, rows, cols, 6}, -1, 1);
  Tape tape(false);
  const Tensor got = transformer_block(tape.constant(x), p, cfg, shift).value();
  const Tensor want = dense_block(x, p, cfg, shift);
  EXPECT_LT(max_abs_diff(got, want), 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Shapes, BlockOracle,
                         ::testing::Values(std::tuple{4, 4, 2, 0, true}, std::tuple{4, 4, 2, 1, true},
                                           std::tuple{7, 5, 4, 2, true}, std::tuple{7, 5, 4, 2, false},
                                           std::tuple{3, 8, 4, 2, true}, std::tuple{6, 9, 3, 1, true},
                                           std::tuple{5, 5, 5, 0, true}, std::tuple{2, 2, 7, 3, true},
                                           std::tuple{9, 4, 3, 2, true}));

TEST(Wmsa, AttentionRowsAreDistributionsThatIgnorePadding) {
  const AttentionConfig cfg = small_config(4, 2, 4);
  ParameterStore store;
  Rng rng(3);
  PairParams p = register_pair(store, "p", cfg, rng);
  randomize(store, 4);
  AttentionProbe probe;
  Tape tape(false);
  swin_pair_pass(tape.constant(Rng(5).uniform_tensor({1, 6, 5, 4}, -1, 1)), p, cfg, &probe);
  ASSERT_EQ(probe.weights.size(), 2u);
  for (std::size_t b = 0; b < 2; ++b) {
    const Tensor& a = probe.weights[b];
    const auto& g = probe.geometry[b];
    const std::int64_t n = g.tokens_per_window();
    for (std::int64_t w = 0; w < a.dim(0); ++w)
      for (std::int64_t h = 0; h < 2; ++h)
        for (std::int64_t i = 0; i < n; ++i) {
          double row = 0;
          const auto [ri, ci] = g.source_cell(w, i);
          for (std::int64_t j = 0; j < n; ++j) {
            const double v = a.at({w, h, i, j});
            row += v;
            const auto [rj, cj] = g.source_cell(w, j);
            if (!g.is_padding(ri, ci) && g.is_padding(rj, cj)) {
              EXPECT_EQ(v, 0.0);
            }
          }
          EXPECT_NEAR(row, 1.0, 1e-12);
        }
  }
}

TEST(Wmsa, CountsQueryKeyPairs) {
  const AttentionConfig cfg = small_config(4, 2, 4);
  ParameterStore store;
  Rng rng(3);
  PairParams p = register_pair(store, "p", cfg, rng);
  Tape tape(false);
  reset_pair_counter();
  swin_pair_pass(tape.constant(Tensor({3, 6, 5, 4})), p, cfg);
  // 3 planes x 4 windows x 16^2 per block, two blocks
  EXPECT_EQ(pair_counter(), 2 * 3 * 4 * 256);
}

TEST(Wmsa, RejectsMismatchedInputs) {
  const AttentionConfig cfg = small_config(4, 2, 2);
  ParameterStore store;
  Rng rng(3);
  BlockParams p = register_block(store, "b", cfg, rng);
  Tape tape(false);
  const auto g = WindowGeometry::make(4, 4, 2, 0);
  EXPECT_THROW(wmsa(tape.constant(Tensor({4, 4, 5})), p.attn, build_shift_mask(g), cfg, g), DimensionError);
  EXPECT_THROW(wmsa(tape.constant(Tensor({4, 4, 4})), p.attn, build_shift_mask(6, 6, 2, 0), cfg, g), ContractError);
  EXPECT_THROW(transformer_block(tape.constant(Tensor({1, 4, 4, 3})), p, cfg, 0), DimensionError);
  EXPECT_THROW(small_config(6, 4, 2).validate(), ConfigError);
}

TEST(Block, ZeroedOutputLayersGiveIdentity) {
  const AttentionConfig cfg = small_config(4, 2, 3);
  ParameterStore store;
  Rng rng(7);
  PairParams p = register_pair(store, "p", cfg, rng);
  randomize(store, 8);
  zero_output_layers(p);
  const Tensor x = Rng(9).uniform_tensor({2, 5, 7, 4}, -1, 1);
  Tape tape(false);
  EXPECT_TRUE(swin_pair_pass(tape.constant(x), p, cfg).value().bit_equal(x));
}

TEST(Block, ShiftedPassMixesAcrossWindowBoundaries) {
  const AttentionConfig cfg = small_config(4, 1, 4);
  ParameterStore store;
  Rng rng(7);
  BlockParams p = register_block(store, "b", cfg, rng);
  randomize(store, 8);
  const Tensor x = Rng(9).uniform_tensor({1, 8, 8, 4}, -1, 1);
  Tensor x2 = x;
  x2[(3 * 8 + 3) * 4] += 1.0;  // cell (3, 3) sits next to the regular window seam
  Tape tape(false);
  const auto diff_at = [&](int shift, std::int64_t r, std::int64_t c) {
    const Tensor a = transformer_block(tape.constant(x), p, cfg, shift).value();
    const Tensor b = transformer_block(tape.constant(x2), p, cfg, shift).value();
    double d = 0;
    for (int k = 0; k < 4; ++k) d += std::abs(a.at({0, r, c, k}) - b.at({0, r, c, k}));
    return d;
  };
  EXPECT_EQ(diff_at(0, 4, 4), 0.0);
  EXPECT_GT(diff_at(2, 4, 4), 0.0);
}

TEST(Block, InputGradientsMatchFiniteDifferences) {
  const AttentionConfig cfg = small_config(4, 2, 3);
  ParameterStore store;
  Rng rng(21);
  PairParams p = register_pair(store, "p", cfg, rng);
  randomize(store, 22);
  const double err = input_grad_error({Rng(23).uniform_tensor({2, 5, 4, 4}, -1, 1)},
                                      [&](Tape&, std::vector<Var>& v) { return projection_loss(swin_pair_pass(v[0], p, cfg)); });
  EXPECT_LT(err, 1e-6);
}

TEST(Block, ParameterGradientsMatchFiniteDifferences) {
  const AttentionConfig cfg = small_config(4, 2, 3);
  ParameterStore store;
  Rng rng(31);
  PairParams p = register_pair(store, "p", cfg, rng);
  randomize(store, 32);
  const Tensor x = Rng(33).uniform_tensor({1, 4, 5, 4}, -1, 1);
  const double err =
      param_grad_error(store, [&](Tape& t) { return projection_loss(swin_pair_pass(t.constant(x), p, cfg)); });
  EXPECT_LT(err, 1e-6);
}

}  // namespace
}  // namespace vdet
