#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "vdet/backbone.hpp"

namespace vdet {
namespace {

using namespace backbone;

BackboneConfig tiny() {
  BackboneConfig cfg;
  cfg.in_channels = 1;
  cfg.patch = 2;
  cfg.widths = {4, 8, 16, 32};
  cfg.heads = {1, 1, 2, 2};
  cfg.window = 2;
  cfg.mlp_ratio = 2.0;
  cfg.fpn_channels = 4;
  return cfg;
}

void randomize(ParameterStore& store, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (Parameter* p : store.all())
    for (auto& v : p->value.data()) v += rng.normal() * scale;
}

TEST(BackboneConfig, Validation) {
  BackboneConfig cfg = tiny();
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.input_multiple(), 16);
  cfg.widths = {4, 8, 12, 32};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny();
  cfg.heads = {1, 3, 2, 2};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny();
  cfg.depths = {1, 0, 1, 1};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny();
  cfg.patch = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(PatchEmbed, ProjectsEachPatchIndependently) {
  ParameterStore store;
  Rng rng(1);
  Parameter& w = store.add("w", rng.normal_tensor({3, 2, 2, 2}, 1.0));
  Parameter& b = store.add("b", rng.normal_tensor({3}, 1.0));
  const Tensor img = rng.uniform_tensor({2, 4, 6}, -1, 1);
  Tape tape(false);
  const Tensor out = patch_embed(tape.constant(img), w, b, 2).value();
  ASSERT_EQ(out.shape(), (Shape{3, 2, 3}));
  for (std::int64_t o = 0; o < 3; ++o)
    for (std::int64_t y = 0; y < 2; ++y)
      for (std::int64_t x = 0; x < 3; ++x) {
        double acc = b.value[o];
        for (std::int64_t c = 0; c < 2; ++c)
          for (std::int64_t dy = 0; dy < 2; ++dy)
            for (std::int64_t dx = 0; dx < 2; ++dx) acc += w.value.at({o, c, dy, dx}) * img.at({c, 2 * y + dy, 2 * x + dx});
        EXPECT_NEAR(out.at({o, y, x}), acc, 1e-12);
      }
  EXPECT_THROW(patch_embed(tape.constant(Tensor({2, 5, 6})), w, b, 2), ContractError);
}

TEST(PatchMerge, ConcatenatesNeighboursInFixedOrder) {
  ParameterStore store;
  Rng rng(2);
  MergeParams p;
  p.norm_g = &store.add("g", rng.normal_tensor({8}, 1.0));
  p.norm_b = &store.add("b", rng.normal_tensor({8}, 1.0));
  p.reduction = &store.add("r", rng.normal_tensor({8, 4}, 1.0));
  const Tensor x = rng.uniform_tensor({2, 4, 6}, -1, 1);
  Tape tape(false);
  const Tensor out = patch_merge(tape.constant(x), p).value();
  ASSERT_EQ(out.shape(), (Shape{4, 2, 3}));
  const int dy[4] = {0, 1, 0, 1}, dx[4] = {0, 0, 1, 1};
  for (std::int64_t y = 0; y < 2; ++y)
    for (std::int64_t xx = 0; xx < 3; ++xx) {
      double v[8], mean = 0, var = 0;
      for (int nb = 0; nb < 4; ++nb)
        for (int c = 0; c < 2; ++c) v[nb * 2 + c] = x.at({c, 2 * y + dy[nb], 2 * xx + dx[nb]});
      for (double e : v) mean += e / 8;
      for (double e : v) var += (e - mean) * (e - mean) / 8;
      for (int k = 0; k < 8; ++k) v[k] = (v[k] - mean) / std::sqrt(var + 1e-5) * p.norm_g->value[k] + p.norm_b->value[k];
      for (std::int64_t o = 0; o < 4; ++o) {
        double acc = 0;
        for (int k = 0; k < 8; ++k) acc += v[k] * p.reduction->value.at({k, o});
        EXPECT_NEAR(out.at({o, y, xx}), acc, 1e-12);
      }
    }
  EXPECT_THROW(patch_merge(tape.constant(Tensor({2, 3, 4})), p), ContractError);
  EXPECT_THROW(patch_merge(tape.constant(Tensor({2, 4})), p), DimensionError);
}

TEST(Encoder, StageShapes) {
  const BackboneConfig cfg = tiny();
  ParameterStore store;
  Rng rng(3);
  EncoderParams enc = register_encoder(store, "enc", cfg, rng);
  FpnParams fpn = register_fpn(store, "fpn", cfg, rng);
  Tape tape(false);
  const auto c = encoder_forward(tape.constant(Rng(4).uniform_tensor({1, 32, 48}, 0, 1)), cfg, enc);
  EXPECT_EQ(c[0].shape(), (Shape{4, 16, 24}));
  EXPECT_EQ(c[1].shape(), (Shape{8, 8, 12}));
  EXPECT_EQ(c[2].shape(), (Shape{16, 4, 6}));
  EXPECT_EQ(c[3].shape(), (Shape{32, 2, 3}));
  const PyramidFeatures p = fpn_fuse(c, fpn);
  EXPECT_EQ(p.level(2).shape(), (Shape{4, 16, 24}));
  EXPECT_EQ(p.level(5).shape(), (Shape{4, 2, 3}));
  EXPECT_EQ(p.level(6).shape(), (Shape{4, 1, 1}));
  EXPECT_THROW(encoder_forward(tape.constant(Tensor({1, 24, 32})), cfg, enc), ContractError);
  EXPECT_THROW(encoder_forward(tape.constant(Tensor({3, 32, 32})), cfg, enc), DimensionError);
}

TEST(Encoder, DepthAddsPairsPerStage) {
  BackboneConfig cfg = tiny();
  cfg.depths = {2, 1, 1, 3};
  ParameterStore store;
  Rng rng(3);
  EncoderParams enc = register_encoder(store, "enc", cfg, rng);
  EXPECT_EQ(enc.stages[0].size(), 2u);
  EXPECT_EQ(enc.stages[3].size(), 3u);
  EXPECT_EQ(enc.merges[2].reduction->value.shape(), (Shape{64, 32}));
}

// Pyramid recomputed pixel by pixel from the lateral maps.
TEST(Fpn, TopDownSumAndPooledTopLevel) {
  const BackboneConfig cfg = tiny();
  ParameterStore store;
  Rng rng(5);
  FpnParams fpn = register_fpn(store, "fpn", cfg, rng);
  randomize(store, 6);
  std::array<Tensor, 4> c;
  for (int i = 0; i < 4; ++i) c[i] = rng.uniform_tensor({cfg.widths[i], 32 >> i, 16 >> i}, -1, 1);
  Tape tape(false);
  std::array<Var, 4> cv;
  for (int i = 0; i < 4; ++i) cv[i] = tape.constant(c[i]);
  const PyramidFeatures got = fpn_fuse(cv, fpn);

  const std::int64_t F = cfg.fpn_channels;
  std::array<Tensor, 4> lat;
  for (int i = 0; i < 4; ++i) {
    const std::int64_t h = c[i].dim(1), w = c[i].dim(2);
    lat[i] = Tensor({F, h, w});
    for (std::int64_t o = 0; o < F; ++o)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          double acc = fpn.lateral_b[i]->value[o];
          for (std::int64_t k = 0; k < c[i].dim(0); ++k) acc += fpn.lateral_w[i]->value.at({o, k, 0, 0}) * c[i].at({k, y, x});
          lat[i].at({o, y, x}) = acc;
        }
  }
  std::array<Tensor, 4> want;
  want[3] = lat[3];
  for (int i = 2; i >= 0; --i) {
    want[i] = lat[i];
    for (std::int64_t o = 0; o < F; ++o)
      for (std::int64_t y = 0; y < want[i].dim(1); ++y)
        for (std::int64_t x = 0; x < want[i].dim(2); ++x) want[i].at({o, y, x}) += want[i + 1].at({o, y / 2, x / 2});
  }
  for (int i = 0; i < 4; ++i) EXPECT_LT(max_abs_diff(got.level(i + 2).value(), want[i]), 1e-12) << "P" << i + 2;
  const Tensor& p6 = got.level(6).value();
  ASSERT_EQ(p6.shape(), (Shape{F, 2, 1}));
  for (std::int64_t o = 0; o < F; ++o)
    for (std::int64_t y = 0; y < 2; ++y) {
      const Tensor& p5 = got.level(5).value();
      const double m = std::max({p5.at({o, 2 * y, 0}), p5.at({o, 2 * y, 1}), p5.at({o, 2 * y + 1, 0}), p5.at({o, 2 * y + 1, 1})});
      EXPECT_EQ(p6.at({o, y, 0}), m);
    }
}

TEST(Fpn, RejectsMisalignedLevels) {
  const BackboneConfig cfg = tiny();
  ParameterStore store;
  Rng rng(5);
  FpnParams fpn = register_fpn(store, "fpn", cfg, rng);
  Tape tape(false);
  std::array<Var, 4> cv;
  for (int i = 0; i < 4; ++i) cv[i] = tape.constant(Tensor({cfg.widths[i], 8 >> i, 8 >> i}));
  cv[1] = tape.constant(Tensor({8, 3, 4}));
  EXPECT_THROW(fpn_fuse(cv, fpn), ContractError);
}

TEST(Encoder, ParameterGradientsMatchFiniteDifferences) {
  const BackboneConfig cfg = tiny();
  ParameterStore store;
  Rng rng(7);
  EncoderParams enc = register_encoder(store, "enc", cfg, rng);
  FpnParams fpn = register_fpn(store, "fpn", cfg, rng);
  randomize(store, 8, 0.2);
  const Tensor img = Rng(9).uniform_tensor({1, 32, 32}, 0, 1);
  const double err = testing::param_grad_error(
      store,
      [&](Tape& t) {
        const PyramidFeatures p = fpn_fuse(encoder_forward(t.constant(img), cfg, enc), fpn);
        Var loss = testing::projection_loss(p.level(2), 1);
        for (int l = 3; l <= 6; ++l) loss = ops::add(loss, testing::projection_loss(p.level(l), 10 + l));
        return loss;
      },
      4);
  EXPECT_LT(err, 1e-6);
}

TEST(Encoder, InputGradientsMatchFiniteDifferences) {
  const BackboneConfig cfg = tiny();
  ParameterStore store;
  Rng rng(11);
  EncoderParams enc = register_encoder(store, "enc", cfg, rng);
  FpnParams fpn = register_fpn(store, "fpn", cfg, rng);
  randomize(store, 12, 0.2);
  const double err = testing::input_grad_error({Rng(13).uniform_tensor({1, 32, 32}, 0, 1)}, [&](Tape&, std::vector<Var>& v) {
    const PyramidFeatures p = fpn_fuse(encoder_forward(v[0], cfg, enc), fpn);
    return ops::add(testing::projection_loss(p.level(2)), testing::projection_loss(p.level(6), 3));
  });
  EXPECT_LT(err, 1e-6);
}

}  // namespace
}  // namespace vdet
