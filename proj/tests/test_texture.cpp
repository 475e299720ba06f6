#include <gtest/gtest.h>

#include <random>

#include "liplab/texture.hpp"
#include "oracles.hpp"

using namespace liplab;
using namespace liplab::texture;

namespace {

FloatImage random_gray(std::mt19937_64& rng, int h, int w) {
  FloatImage img(h, w, 1);
  for (auto& v : img.data) v = static_cast<float>(rng() % 256);
  return img;
}

oracle::Interp interp(Sampling s) { return s == Sampling::nearest ? oracle::Interp::nearest : oracle::Interp::bilinear; }

}  // namespace

TEST(Lbp, ConstantImageSetsEveryBit) {
  const FloatImage flat(6, 7, 1, 42.0f);
  for (auto s : {Sampling::nearest, Sampling::bilinear}) {
    const FloatImage codes = lbp(flat, {8, 1.0, s});
    for (float c : codes.data) EXPECT_EQ(c, 255.0f);
  }
}

TEST(Lbp, StrictMaximumGivesZero) {
  FloatImage img(3, 3, 1, 10.0f);
  img.at(1, 1) = 50.0f;
  EXPECT_EQ(lbp(img, {8, 1.0, Sampling::nearest}).at(1, 1), 0.0f);
  EXPECT_EQ(lbp(img, {8, 1.0, Sampling::bilinear}).at(1, 1), 0.0f);
}

TEST(Lbp, HandEvaluatedCode) {
  // Neighbor i sits at angle 2*pi*i/8 (y down): i=1 is (+1,+1), i=2 (0,+1), ... i=8 (+1,0).
  const float values[8] = {6, 4, 7, 3, 5, 2, 8, 1};
  const int offsets[8][2] = {{1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}, {1, 0}};
  FloatImage img(3, 3, 1);
  img.at(1, 1) = 5;
  for (int i = 0; i < 8; ++i) img.at(1 + offsets[i][1], 1 + offsets[i][0]) = values[i];
  EXPECT_EQ(lbp(img, {8, 1.0, Sampling::nearest}).at(1, 1), 85.0f);
}

TEST(Lbp, CodesStayInRange) {
  std::mt19937_64 rng(1);
  for (int P : {4, 8, 12, 16}) {
    const FloatImage codes = lbp(random_gray(rng, 12, 12), {P, 2.0, Sampling::bilinear});
    for (float c : codes.data) {
      EXPECT_GE(c, 0.0f);
      EXPECT_LE(c, std::ldexp(1.0, P) - 1);
      EXPECT_EQ(c, std::floor(c));
    }
  }
}

TEST(Lbp, MatchesNaiveOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = 8 + static_cast<int>(rng() % 25), w = 8 + static_cast<int>(rng() % 25);
    const FloatImage gray = random_gray(rng, h, w);
    for (auto params : {LbpParams{8, 1.0, Sampling::nearest}, LbpParams{8, 1.0, Sampling::bilinear},
                        LbpParams{16, 2.0, Sampling::bilinear}, LbpParams{12, 1.5, Sampling::nearest}}) {
      EXPECT_EQ(lbp(gray, params), oracle::lbp(gray, params.neighbors, params.radius, interp(params.sampling)));
    }
  }
}

TEST(Lbp, MonotoneRemapInvarianceWithNearestSampling) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const FloatImage gray = random_gray(rng, 16, 16);
    std::vector<float> table(256);
    float level = static_cast<float>(rng() % 5);
    for (auto& t : table) t = (level += 0.25f + static_cast<float>(rng() % 100) / 10.0f);
    FloatImage mapped = gray;
    for (auto& v : mapped.data) v = table[static_cast<int>(v)];
    const LbpParams p{8, 1.0, Sampling::nearest};
    EXPECT_EQ(lbp(mapped, p), lbp(gray, p));
  }
}

TEST(Lbp, RejectsBadInput) {
  EXPECT_THROW(lbp(FloatImage(5, 5, 3)), ShapeError);
  EXPECT_THROW(lbp(FloatImage(2, 2, 1)), ShapeError);
  EXPECT_THROW(lbp(FloatImage(5, 5, 1), {3, 1.0}), UsageError);
  EXPECT_THROW(lbp(FloatImage(5, 5, 1), {8, 0.5}), UsageError);
}

TEST(Gradients, ConstantAndOneDirectional) {
  const GradientField flat = gradients(FloatImage(5, 5, 1, 7.0f));
  for (std::size_t k = 0; k < flat.gc.data.size(); ++k) {
    EXPECT_EQ(flat.gx.data[k], 0.0f);
    EXPECT_EQ(flat.gy.data[k], 0.0f);
    EXPECT_EQ(flat.gc.data[k], 0.0f);
  }
  FloatImage ramp(5, 6, 1);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) ramp.at(y, x) = static_cast<float>(x * x);
  const GradientField f = gradients(ramp);
  for (std::size_t k = 0; k < f.gc.data.size(); ++k) {
    EXPECT_EQ(f.gy.data[k], 0.0f);
    EXPECT_EQ(f.gc.data[k], 0.0f);
  }
}

TEST(Gradients, DiagonalEdgeReachesUnitMagnitude) {
  FloatImage img(5, 5, 1);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) img.at(y, x) = x + y >= 4 ? 200.0f : 0.0f;
  const GradientField f = gradients(img);
  const FloatImage gc = oracle::gradient_product(img);
  float peak = 0.0f;
  for (std::size_t k = 0; k < gc.data.size(); ++k) {
    EXPECT_NEAR(f.gc.data[k], gc.data[k], 1e-7);
    EXPECT_LE(std::abs(f.gc.data[k]), 1.0f);
    peak = std::max(peak, std::abs(f.gc.data[k]));
  }
  EXPECT_EQ(peak, 1.0f);
}

TEST(Glbp, ConstantImageIsZeroAndDarkCenterVanishes) {
  const FloatImage flat(6, 6, 1, 3.0f);
  const FloatImage g = glbp(flat, {}, gradients(flat));
  for (float v : g.data) EXPECT_EQ(v, 0.0f);

  std::mt19937_64 rng(4);
  FloatImage img = random_gray(rng, 9, 9);
  img.at(4, 4) = 1000.0f;
  const FloatImage out = glbp(img, {8, 1.0, Sampling::nearest}, gradients(img));
  EXPECT_EQ(out.at(4, 4), 0.0f);
}

TEST(Glbp, MatchesNaiveOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = 8 + static_cast<int>(rng() % 25), w = 8 + static_cast<int>(rng() % 25);
    const FloatImage gray = random_gray(rng, h, w);
    for (auto params : {LbpParams{8, 1.0, Sampling::nearest}, LbpParams{8, 1.0, Sampling::bilinear},
                        LbpParams{16, 2.0, Sampling::bilinear}}) {
      const FloatImage got = glbp(gray, params, gradients(gray));
      const FloatImage want = oracle::glbp(gray, params.neighbors, params.radius, interp(params.sampling));
      for (std::size_t k = 0; k < got.data.size(); ++k) {
        ASSERT_NEAR(got.data[k], want.data[k], 1e-6 * std::max(1.0f, want.data[k])) << "pixel " << k;
        EXPECT_GE(got.data[k], 0.0f);
        EXPECT_LE(got.data[k], params.max_code() * (1 + 1e-6));
      }
    }
  }
}

TEST(Glbp, RejectsMismatchedField) {
  EXPECT_THROW(glbp(FloatImage(5, 5, 1), {}, gradients(FloatImage(6, 5, 1))), ShapeError);
}

TEST(BuildInput, BlackImage) {
  const FloatImage in = build_input(ByteImage(6, 5, 3));
  ASSERT_EQ(in.channels, 5);
  ASSERT_EQ(in.height, 6);
  ASSERT_EQ(in.width, 5);
  for (std::size_t p = 0; p < in.pixel_count(); ++p) {
    for (int c = 0; c < 3; ++c) EXPECT_EQ(in.data[p * 5 + c], 0.0f);
    EXPECT_EQ(in.data[p * 5 + 3], 1.0f);
    EXPECT_EQ(in.data[p * 5 + 4], 0.0f);
  }
}

TEST(BuildInput, PlanesNormalized) {
  std::mt19937_64 rng(6);
  ByteImage rgb(20, 24, 3);
  for (auto& v : rgb.data) v = static_cast<std::uint8_t>(rng());
  const FloatImage in = build_input(rgb);
  std::vector<float> lo(5, 2.0f), hi(5, -1.0f);
  for (std::size_t p = 0; p < in.pixel_count(); ++p) {
    for (int c = 0; c < 5; ++c) {
      lo[c] = std::min(lo[c], in.data[p * 5 + c]);
      hi[c] = std::max(hi[c], in.data[p * 5 + c]);
    }
    EXPECT_FLOAT_EQ(in.data[p * 5], rgb.data[p * 3] / 255.0f);
  }
  for (int c = 0; c < 5; ++c) {
    EXPECT_GE(lo[c], 0.0f);
    EXPECT_LE(hi[c], 1.0f);
  }
  EXPECT_EQ(lo[4], 0.0f);
  EXPECT_EQ(hi[4], 1.0f);
  EXPECT_THROW(build_input(ByteImage(8, 8, 1)), ShapeError);
}

TEST(BuildInput, GlbpRespondsAtCornersOnly) {
  // Lip block on skin: gx*gy is nonzero only where both derivatives are, i.e. at the block's corners.
  ByteImage rgb(16, 16, 3);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const bool lip = y >= 8 && x >= 4 && x < 12;
      rgb.at(y, x, 0) = lip ? 170 : 210;
      rgb.at(y, x, 1) = lip ? 90 : 160;
      rgb.at(y, x, 2) = lip ? 90 : 130;
    }
  const FloatImage in = build_input(rgb);
  int responding = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      if (in.at(y, x, 4) == 0.0f) continue;
      ++responding;
      const bool near_corner = std::abs(y - 7.5) <= 2.5 && (std::abs(x - 3.5) <= 2.5 || std::abs(x - 11.5) <= 2.5);
      EXPECT_TRUE(near_corner) << y << "," << x;
    }
  EXPECT_GT(responding, 0);
}
