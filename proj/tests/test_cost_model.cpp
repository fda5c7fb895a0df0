#include <gtest/gtest.h>

#include <algorithm>

#include "vdet/cost_model.hpp"
#include "vdet/vdformer.hpp"

namespace vdet {
namespace {

using namespace cost;

// Walks every window of every plane on the padded grid and counts token pairs one by one.
std::int64_t enumerate_view_pairs(std::int64_t planes, std::int64_t rows, std::int64_t cols, int w) {
  const std::int64_t wr = std::min<std::int64_t>(w, rows), wc = std::min<std::int64_t>(w, cols);
  std::int64_t total = 0;
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t r0 = 0; r0 < rows; r0 += wr)
      for (std::int64_t c0 = 0; c0 < cols; c0 += wc)
        for (std::int64_t q = 0; q < wr * wc; ++q)
          for (std::int64_t k = 0; k < wr * wc; ++k) ++total;
  return total;
}

std::int64_t enumerate_vd(std::int64_t h, std::int64_t w, std::int64_t t, int win) {
  return 2 * (enumerate_view_pairs(h, w, t, win) + enumerate_view_pairs(w, h, t, win) +
              enumerate_view_pairs(t, h, w, win));
}

TEST(PairCount, Examples) {
  EXPECT_EQ(pair_count(AttentionMode::kFull3D, 2, 2, 2, 2), 64);
  EXPECT_EQ(pair_count(AttentionMode::kVD, 4, 4, 4, 2), 1536);
  EXPECT_EQ(view_pass_pairs(0, 4, 4, 4, 2), 256);
  EXPECT_THROW(view_pass_pairs(3, 4, 4, 4, 2), IndexError);
  EXPECT_THROW(pair_count(AttentionMode::kVD, 0, 4, 4, 2), ConfigError);
  EXPECT_EQ(parse_mode(mode_name(AttentionMode::kFull3D)), AttentionMode::kFull3D);
  EXPECT_THROW(parse_mode("axial"), FormatError);
}

TEST(PairCount, MatchesEnumeration) {
  for (std::int64_t h = 1; h <= 9; ++h)
    for (std::int64_t w = 1; w <= 9; ++w)
      for (std::int64_t t = 1; t <= 5; ++t)
        for (int win = 1; win <= 4; ++win) {
          ASSERT_EQ(pair_count(AttentionMode::kVD, h, w, t, win), enumerate_vd(h, w, t, win))
              << h << "x" << w << "x" << t << " w" << win;
        }
}

// The formula must agree with the logit entries the attention code actually computes.
TEST(PairCount, EqualsInstrumentedCounter) {
  attention::AttentionConfig cfg;
  cfg.channels = 2;
  cfg.heads = 1;
  cfg.mlp_ratio = 1.0;
  for (int win = 1; win <= 3; ++win) {
    cfg.window = win;
    ParameterStore store;
    Rng rng(win);
    const auto params = vdformer::register_vdformer(store, "vd", cfg, rng);
    for (std::int64_t h = 1; h <= 8; ++h)
      for (std::int64_t w = 1; w <= 8; ++w)
        for (std::int64_t t = 1; t <= 8; ++t) {
          Tape tape(false);
          const Var x = tape.constant(Tensor({2, h, w, t}, 0.5));
          const std::int64_t want = pair_count(AttentionMode::kVD, h, w, t, win);
          // The cascade itself runs on any depth; the centre-slice wrapper needs an odd one.
          attention::reset_pair_counter();
          Var y = x;
          for (std::size_t v = 0; v < 3; ++v) y = vdformer::view_pass(y, vdformer::kCascadeOrder[v], params.views[v], cfg);
          ASSERT_EQ(attention::pair_counter(), want) << h << "x" << w << "x" << t << " w" << win;
          if (t % 2 == 1) {
            attention::reset_pair_counter();
            vdformer::vd_former(x, params, cfg);
            ASSERT_EQ(attention::pair_counter(), want) << h << "x" << w << "x" << t << " w" << win;
          }
        }
  }
}

TEST(PairCount, FullAttentionIsInfeasibleAtScale) {
  const double full = static_cast<double>(pair_count(AttentionMode::kFull3D, 128, 128, 3, 7));
  const double vd = static_cast<double>(pair_count(AttentionMode::kVD, 128, 128, 3, 7));
  EXPECT_GT(full / vd, 100.0);
}

TEST(PairCount, FullDominatesWhenEveryAxisExceedsTheWindow) {
  for (const auto& s : default_grid()) {
    if (std::min({s.height, s.width, s.depth}) <= s.window) continue;
    EXPECT_GT(pair_count(AttentionMode::kFull3D, s.height, s.width, s.depth, s.window),
              pair_count(AttentionMode::kVD, s.height, s.width, s.depth, s.window));
  }
}

TEST(Costs, FlopsAndBytes) {
  const CostShape s{8, 4, 4, 4, 2};
  EXPECT_EQ(attention_flops(AttentionMode::kVD, s), 4 * 8 * 1536);
  EXPECT_EQ(activation_bytes(AttentionMode::kFull3D, s), (5 * 8 * 64 + 64 * 64) * 4);
  EXPECT_EQ(activation_bytes(AttentionMode::kVD, s, 2), (5 * 8 * 64 + 256) * 2);
  EXPECT_THROW(activation_bytes(AttentionMode::kVD, s, 0), ConfigError);
  // More channels or a wider grid never costs less.
  for (const auto mode : {AttentionMode::kFull3D, AttentionMode::kVD}) {
    CostShape wide = s;
    wide.width = 8;
    EXPECT_GT(activation_bytes(mode, wide), activation_bytes(mode, s));
    CostShape deep = s;
    deep.channels = 16;
    EXPECT_GT(activation_bytes(mode, deep), activation_bytes(mode, s));
  }
}

TEST(Report, DefaultGridHasTheReferenceRow) {
  const auto grid = default_grid();
  const auto it = std::find_if(grid.begin(), grid.end(), [](const CostShape& s) {
    return s.height == 4 && s.width == 4 && s.depth == 4 && s.window == 2;
  });
  ASSERT_NE(it, grid.end());
  EXPECT_EQ(cost_report(AttentionMode::kVD, *it).pairs, 1536);
}

TEST(Report, CsvAndJsonRoundTrip) {
  std::vector<CostReport> rows;
  for (const auto& s : default_grid())
    for (const auto mode : {AttentionMode::kFull3D, AttentionMode::kVD}) rows.push_back(cost_report(mode, s));
  EXPECT_EQ(from_csv(to_csv(rows)), rows);
  EXPECT_EQ(from_json(to_json(rows)), rows);
  EXPECT_EQ(from_json(nlohmann::json::parse(to_json(from_csv(to_csv(rows))).dump())), rows);
  EXPECT_THROW(from_csv(""), FormatError);
  EXPECT_THROW(from_csv("header\nvd,1,2\n"), FormatError);
}

}  // namespace
}  // namespace vdet
