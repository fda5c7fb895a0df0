#include <gtest/gtest.h>

#include "test_support.hpp"
#include "vdet/vdformer.hpp"

namespace vdet {
namespace {

using namespace vdformer;
using attention::AttentionConfig;

AttentionConfig config(int channels = 4, int window = 2) {
  AttentionConfig cfg;
  cfg.channels = channels;
  cfg.heads = 2;
  cfg.window = window;
  cfg.mlp_ratio = 2.0;
  return cfg;
}

void randomize(ParameterStore& store, std::uint64_t seed) {
  Rng rng(seed);
  for (Parameter* p : store.all())
    for (auto& v : p->value.data()) v += rng.normal() * 0.3;
}

// Planes of one view built by explicit loops: [planes, rows, cols, C].
Tensor gather_planes(const Tensor& x, View v) {
  const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2), T = x.dim(3);
  const std::int64_t P = v == View::kWT ? H : v == View::kHT ? W : T;
  const std::int64_t R = v == View::kWT ? W : H;
  const std::int64_t K = v == View::kHW ? W : T;
  Tensor out({P, R, K, C});
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t h = 0; h < H; ++h)
      for (std::int64_t w = 0; w < W; ++w)
        for (std::int64_t t = 0; t < T; ++t) {
          const double val = x.at({c, h, w, t});
          if (v == View::kWT) out.at({h, w, t, c}) = val;
          if (v == View::kHT) out.at({w, h, t, c}) = val;
          if (v == View::kHW) out.at({t, h, w, c}) = val;
        }
  return out;
}

Tensor scatter_planes(const Tensor& planes, View v, const Shape& s) {
  Tensor out(s);
  for (std::int64_t c = 0; c < s[0]; ++c)
    for (std::int64_t h = 0; h < s[1]; ++h)
      for (std::int64_t w = 0; w < s[2]; ++w)
        for (std::int64_t t = 0; t < s[3]; ++t) {
          if (v == View::kWT) out.at({c, h, w, t}) = planes.at({h, w, t, c});
          if (v == View::kHT) out.at({c, h, w, t}) = planes.at({w, h, t, c});
          if (v == View::kHW) out.at({c, h, w, t}) = planes.at({t, h, w, c});
        }
  return out;
}

std::vector<Tensor> make_slices(int n, std::uint64_t seed, Shape s = {4, 5, 6}) {
  Rng rng(seed);
  std::vector<Tensor> out;
  for (int i = 0; i < n; ++i) out.push_back(rng.uniform_tensor(s, -1, 1));
  return out;
}

TEST(SliceWindow, StacksNeighboursAndZeroFillsOutsideTheVolume) {
  const auto slices = make_slices(4, 1);
  const SliceStack st = extract_slice_window(slices, 0, 3);
  EXPECT_EQ(st.data.shape(), (Shape{4, 5, 6, 3}));
  EXPECT_EQ(st.center, 0);
  for (std::int64_t c = 0; c < 4; ++c)
    for (std::int64_t h = 0; h < 5; ++h)
      for (std::int64_t w = 0; w < 6; ++w) {
        EXPECT_EQ(st.data.at({c, h, w, 0}), 0.0);
        EXPECT_EQ(st.data.at({c, h, w, 1}), slices[0].at({c, h, w}));
        EXPECT_EQ(st.data.at({c, h, w, 2}), slices[1].at({c, h, w}));
      }
  const SliceStack last = extract_slice_window(slices, 3, 5);
  EXPECT_EQ(last.data.at({1, 2, 3, 0}), slices[1].at({1, 2, 3}));
  EXPECT_EQ(last.data.at({1, 2, 3, 3}), 0.0);
  EXPECT_EQ(last.data.at({1, 2, 3, 4}), 0.0);
}

TEST(SliceWindow, TapeVersionMatchesAndRejectsBadArguments) {
  const auto slices = make_slices(5, 2);
  Tape tape(false);
  std::vector<Var> vars;
  for (const auto& s : slices) vars.push_back(tape.constant(s));
  for (std::int64_t t = 0; t < 5; ++t) {
    EXPECT_TRUE(stack_slice_window(vars, t, 3).value().bit_equal(extract_slice_window(slices, t, 3).data));
  }
  EXPECT_THROW(extract_slice_window(slices, 5, 3), IndexError);
  EXPECT_THROW(extract_slice_window(slices, -1, 3), IndexError);
  EXPECT_THROW(extract_slice_window(slices, 1, 4), ConfigError);
  EXPECT_THROW(stack_slice_window(vars, 1, 2), ConfigError);
  auto bad = slices;
  bad[2] = Tensor({4, 5, 5});
  EXPECT_THROW(extract_slice_window(bad, 1, 3), DimensionError);
}

TEST(Views, PlaneLayouts) {
  const Shape s{8, 5, 6, 3};
  const auto wt = plane_layout(s, View::kWT), ht = plane_layout(s, View::kHT), hw = plane_layout(s, View::kHW);
  EXPECT_EQ((std::array{wt.planes, wt.rows, wt.cols}), (std::array<std::int64_t, 3>{5, 6, 3}));
  EXPECT_EQ((std::array{ht.planes, ht.rows, ht.cols}), (std::array<std::int64_t, 3>{6, 5, 3}));
  EXPECT_EQ((std::array{hw.planes, hw.rows, hw.cols}), (std::array<std::int64_t, 3>{3, 5, 6}));
  EXPECT_THROW(plane_layout({8, 5, 6}, View::kHW), DimensionError);
  EXPECT_STREQ(view_name(kCascadeOrder[0]), "WT");
  EXPECT_STREQ(view_name(kCascadeOrder[1]), "HT");
  EXPECT_STREQ(view_name(kCascadeOrder[2]), "HW");
}

TEST(Views, EachPassEqualsSwinPairOnExplicitPlanes) {
  const AttentionConfig cfg = config();
  ParameterStore store;
  Rng rng(3);
  VdFormerParams p = register_vdformer(store, "vd", cfg, rng);
  randomize(store, 4);
  const Tensor x = Rng(5).uniform_tensor({4, 5, 6, 3}, -1, 1);
  for (std::size_t i = 0; i < 3; ++i) {
    const View v = kCascadeOrder[i];
    Tape tape(false);
    const Tensor got = view_pass(tape.constant(x), v, p.views[i], cfg).value();
    const Tensor planes = attention::swin_pair_pass(tape.constant(gather_planes(x, v)), p.views[i], cfg).value();
    EXPECT_TRUE(got.bit_equal(scatter_planes(planes, v, x.shape()))) << view_name(v);
  }
}

TEST(Views, PassesOnlyMixWithinTheirPlanes) {
  const AttentionConfig cfg = config();
  ParameterStore store;
  Rng rng(3);
  VdFormerParams p = register_vdformer(store, "vd", cfg, rng);
  randomize(store, 4);
  const Tensor x = Rng(6).uniform_tensor({4, 4, 4, 3}, -1, 1);
  Tensor x2 = x;
  x2.at({0, 1, 2, 0}) += 1.0;  // h = 1, w = 2, t = 0
  for (std::size_t i = 0; i < 3; ++i) {
    const View v = kCascadeOrder[i];
    Tape tape(false);
    const Tensor a = view_pass(tape.constant(x), v, p.views[i], cfg).value();
    const Tensor b = view_pass(tape.constant(x2), v, p.views[i], cfg).value();
    for (std::int64_t h = 0; h < 4; ++h)
      for (std::int64_t w = 0; w < 4; ++w)
        for (std::int64_t t = 0; t < 3; ++t) {
          const bool same_plane = v == View::kWT ? h == 1 : v == View::kHT ? w == 2 : t == 0;
          double d = 0;
          for (std::int64_t c = 0; c < 4; ++c) d += std::abs(a.at({c, h, w, t}) - b.at({c, h, w, t}));
          if (!same_plane) {
            EXPECT_EQ(d, 0.0) << view_name(v) << " " << h << w << t;
          }
        }
  }
}

TEST(VdFormer, CascadeThenCentreSlice) {
  const AttentionConfig cfg = config();
  ParameterStore store;
  Rng rng(7);
  VdFormerParams p = register_vdformer(store, "vd", cfg, rng);
  randomize(store, 8);
  const Tensor x = Rng(9).uniform_tensor({4, 5, 4, 3}, -1, 1);
  Tape tape(false);
  Var y = tape.constant(x);
  y = view_pass(y, View::kWT, p.views[0], cfg);
  y = view_pass(y, View::kHT, p.views[1], cfg);
  y = view_pass(y, View::kHW, p.views[2], cfg);
  const Tensor full = y.value();
  const Tensor out = vd_former(tape.constant(x), p, cfg).value();
  ASSERT_EQ(out.shape(), (Shape{4, 5, 4}));
  for (std::int64_t c = 0; c < 4; ++c)
    for (std::int64_t h = 0; h < 5; ++h)
      for (std::int64_t w = 0; w < 4; ++w) EXPECT_EQ(out.at({c, h, w}), full.at({c, h, w, 1}));
}

TEST(VdFormer, ZeroedOutputLayersReturnTheCentreSliceExactly) {
  const AttentionConfig cfg = config(4, 3);
  ParameterStore store;
  Rng rng(7);
  VdFormerParams p = register_vdformer(store, "vd", cfg, rng);
  randomize(store, 8);
  zero_output_layers(p);
  const auto slices = make_slices(6, 10, {4, 7, 5});
  for (std::int64_t t : {0, 2, 5}) {
    Tape tape(false);
    const Tensor out = vd_former(tape.constant(extract_slice_window(slices, t, 5).data), p, cfg).value();
    EXPECT_TRUE(out.bit_equal(slices[static_cast<std::size_t>(t)]));
  }
}

TEST(VdFormer, RegistersSeparateParametersPerView) {
  const AttentionConfig cfg = config();
  ParameterStore store;
  Rng rng(1);
  register_vdformer(store, "vd", cfg, rng);
  EXPECT_TRUE(store.contains("vd.viewWT.block0.attn.relative_bias"));
  EXPECT_TRUE(store.contains("vd.viewHT.block1.mlp.fc2.weight"));
  EXPECT_TRUE(store.contains("vd.viewHW.block0.norm1.weight"));
  EXPECT_EQ(store.size(), 3u * 2u * 13u);
}

TEST(VdFormer, RejectsBadStacks) {
  const AttentionConfig cfg = config();
  ParameterStore store;
  Rng rng(1);
  VdFormerParams p = register_vdformer(store, "vd", cfg, rng);
  Tape tape(false);
  EXPECT_THROW(vd_former(tape.constant(Tensor({4, 4, 4, 2})), p, cfg), ConfigError);
  EXPECT_THROW(vd_former(tape.constant(Tensor({4, 4, 4})), p, cfg), DimensionError);
  EXPECT_THROW(vd_former(tape.constant(Tensor({3, 4, 4, 3})), p, cfg), DimensionError);
}

TEST(VdFormer, InputGradientsMatchFiniteDifferences) {
  const AttentionConfig cfg = config();
  ParameterStore store;
  Rng rng(11);
  VdFormerParams p = register_vdformer(store, "vd", cfg, rng);
  randomize(store, 12);
  const double err = testing::input_grad_error({Rng(13).uniform_tensor({4, 3, 4, 3}, -1, 1)},
                                               [&](Tape&, std::vector<Var>& v) {
                                                 return testing::projection_loss(vd_former(v[0], p, cfg));
                                               });
  EXPECT_LT(err, 1e-6);
}

TEST(VdFormer, ParameterGradientsMatchFiniteDifferences) {
  const AttentionConfig cfg = config();
  ParameterStore store;
  Rng rng(21);
  VdFormerParams p = register_vdformer(store, "vd", cfg, rng);
  randomize(store, 22);
  const Tensor x = Rng(23).uniform_tensor({4, 3, 4, 3}, -1, 1);
  const double err = testing::param_grad_error(
      store, [&](Tape& t) { return testing::projection_loss(vd_former(t.constant(x), p, cfg)); }, 6);
  EXPECT_LT(err, 1e-6);
}

TEST(VdFormer, GradientsReachEveryInRangeSlice) {
  const AttentionConfig cfg = config();
  ParameterStore store;
  Rng rng(31);
  VdFormerParams p = register_vdformer(store, "vd", cfg, rng);
  randomize(store, 32);
  const auto slices = make_slices(3, 33, {4, 3, 4});
  Tape tape;
  std::vector<Var> vars;
  for (const auto& s : slices) vars.push_back(tape.input(s));
  tape.backward(testing::projection_loss(vd_former(stack_slice_window(vars, 0, 3), p, cfg)));
  const auto norm = [](const Tensor& g) {
    double s = 0;
    for (double v : g.data()) s += v * v;
    return s;
  };
  EXPECT_GT(norm(tape.grad(vars[0])), 0.0);
  EXPECT_GT(norm(tape.grad(vars[1])), 0.0);
  EXPECT_EQ(norm(tape.grad(vars[2])), 0.0);  // outside the window around slice 0
}

}  // namespace
}  // namespace vdet
