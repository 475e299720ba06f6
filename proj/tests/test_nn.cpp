#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>

#include "liplab/nn/adam.hpp"
#include "liplab/nn/gradcheck.hpp"
#include "liplab/nn/graph.hpp"
#include "liplab/nn/layers.hpp"
#include "liplab/nn/loss.hpp"
#include "liplab/nn/ops.hpp"

using namespace liplab;
using namespace liplab::nn;

namespace {

constexpr int kSeeds = 5;

template <class T>
Tensor<T> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(s);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Values kept at least `margin` away from zero so relu kinks are not straddled by the difference quotient.
void fill_away_from_zero(Tensor<double>& t, Rng& rng, double margin = 1e-2) {
  for (auto& v : t.data) {
    do v = rng.uniform(-1.0, 1.0);
    while (std::abs(v) < margin);
  }
}

Parameter<double>& add_random(ParameterStore<double>& s, const std::string& name, Shape shape, Rng& rng) {
  auto& p = s.add(name, shape);
  p.value = random_tensor<double>(shape, rng);
  return p;
}

// Scalar projection <y, R> with a fixed random R, so every output entry carries a distinct upstream gradient.
Var project(Graph<double>& g, Var y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(g, mul(g, y, g.input(random_tensor<double>(g.shape(y), rng))));
}

GradCheckOptions strict(std::uint64_t seed) {
  GradCheckOptions o;
  o.eps = 1e-3;
  o.tolerance = 1e-4;
  o.seed = seed;
  return o;
}

// Direct-loop cross-correlation with zero padding.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b, int stride, int pad) {
  const int k = w.shape.h;
  const int ho = (x.shape.h + 2 * pad - k) / stride + 1, wo = (x.shape.w + 2 * pad - k) / stride + 1;
  Tensor<double> out(Shape{x.shape.n, w.shape.n, ho, wo});
  for (int n = 0; n < x.shape.n; ++n)
    for (int co = 0; co < w.shape.n; ++co)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          double s = b ? b->data[co] : 0.0;
          for (int ci = 0; ci < x.shape.c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int y = i * stride + ky - pad, xx = j * stride + kx - pad;
                if (y < 0 || xx < 0 || y >= x.shape.h || xx >= x.shape.w) continue;
                s += x.at(n, ci, y, xx) * w.at(co, ci, ky, kx);
              }
          out.at(n, co, i, j) = s;
        }
  return out;
}

// Scatter form of the stride-2 transposed convolution.
Tensor<double> naive_conv_transpose(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
  Tensor<double> out(Shape{x.shape.n, w.shape.c, 2 * x.shape.h, 2 * x.shape.w});
  for (int n = 0; n < x.shape.n; ++n)
    for (int co = 0; co < w.shape.c; ++co)
      for (int y = 0; y < out.shape.h; ++y)
        for (int xx = 0; xx < out.shape.w; ++xx) out.at(n, co, y, xx) = b.data[co];
  for (int n = 0; n < x.shape.n; ++n)
    for (int ci = 0; ci < x.shape.c; ++ci)
      for (int i = 0; i < x.shape.h; ++i)
        for (int j = 0; j < x.shape.w; ++j)
          for (int co = 0; co < w.shape.c; ++co)
            for (int ky = 0; ky < 2; ++ky)
              for (int kx = 0; kx < 2; ++kx) out.at(n, co, 2 * i + ky, 2 * j + kx) += x.at(n, ci, i, j) * w.at(ci, co, ky, kx);
  return out;
}

void expect_near_all(const Tensor<double>& a, const Tensor<double>& b, double tol) {
  ASSERT_EQ(a.shape, b.shape);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], tol) << "entry " << i;
}

void expect_pass(const GradCheckReport& r) { EXPECT_TRUE(r.passed()) << r.to_text(); }

}  // namespace

// ---- forward values ----

TEST(Conv2d, IdentityKernelSamePaddingReproducesInput) {
  Graph<double> g;
  Rng rng(3);
  const auto x = random_tensor<double>(Shape{1, 1, 3, 3}, rng);
  Tensor<double> w(Shape{1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  const Var y = conv2d(g, g.input(x), g.input(w));
  EXPECT_EQ(g.value(y), x);
}

TEST(Conv2d, AllOnesValidGivesNine) {
  Graph<double> g;
  const Var y = conv2d(g, g.input(Tensor<double>(Shape{1, 1, 3, 3}, 1.0)), g.input(Tensor<double>(Shape{1, 1, 3, 3}, 1.0)),
                       {}, {1, Padding::valid});
  ASSERT_EQ(g.shape(y), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(g.value(y).data[0], 9.0);
}

TEST(Conv2d, MatchesDirectLoopsAcrossGeometries) {
  Rng rng(11);
  struct Case {
    Shape x;
    int cout, k, stride;
    Padding pad;
  };
  for (const Case& c : {Case{{2, 3, 6, 6}, 4, 3, 1, Padding::same}, Case{{1, 2, 7, 5}, 3, 3, 1, Padding::valid},
                        Case{{2, 5, 8, 8}, 2, 1, 2, Padding::valid}, Case{{1, 3, 9, 9}, 2, 3, 2, Padding::same},
                        Case{{3, 4, 4, 6}, 6, 1, 1, Padding::same}}) {
    const auto x = random_tensor<double>(c.x, rng);
    const auto w = random_tensor<double>(Shape{c.cout, c.x.c, c.k, c.k}, rng);
    const auto b = random_tensor<double>(Shape{1, c.cout, 1, 1}, rng);
    Graph<double> g;
    const Var y = conv2d(g, g.input(x), g.input(w), g.input(b), {c.stride, c.pad});
    expect_near_all(g.value(y), naive_conv(x, w, &b, c.stride, c.pad == Padding::same ? c.k / 2 : 0), 1e-12);
  }
}

TEST(Conv2d, ShapeErrors) {
  Graph<double> g;
  const Var x = g.input(Tensor<double>(Shape{1, 3, 4, 4}));
  EXPECT_THROW(conv2d(g, x, g.input(Tensor<double>(Shape{2, 2, 3, 3}))), ShapeError);
  EXPECT_THROW(conv2d(g, x, g.input(Tensor<double>(Shape{2, 3, 2, 2}))), ShapeError);
  EXPECT_THROW(conv2d(g, x, g.input(Tensor<double>(Shape{2, 3, 3, 3})), g.input(Tensor<double>(Shape{1, 3, 1, 1}))),
               ShapeError);
  EXPECT_THROW(conv2d(g, g.input(Tensor<double>(Shape{1, 3, 2, 2})), g.input(Tensor<double>(Shape{1, 3, 3, 3})), {},
                      {1, Padding::valid}),
               ShapeError);
}

TEST(Maxpool2, SingleWindow) {
  Graph<double> g;
  Tensor<double> x(Shape{1, 1, 2, 2});
  x.data = {1, 2, 3, 4};
  const Var y = maxpool2(g, g.input(x));
  ASSERT_EQ(g.shape(y), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(g.value(y).data[0], 4.0);
}

TEST(Maxpool2, TiesRouteToFirstRowMajorElement) {
  ParameterStore<double> s;
  auto& p = s.add("x", Shape{1, 2, 4, 4});
  std::fill(p.value.data.begin(), p.value.data.end(), 0.7);
  Graph<double> g;
  g.backward(sum(g, maxpool2(g, g.parameter(p))));
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) EXPECT_EQ(p.grad.at(0, c, y, x), (y % 2 == 0 && x % 2 == 0) ? 1.0 : 0.0);
}

TEST(Maxpool2, OddDimsRejected) {
  Graph<double> g;
  EXPECT_THROW(maxpool2(g, g.input(Tensor<double>(Shape{1, 1, 3, 4}))), ShapeError);
}

TEST(Upsample2, RepeatsEachPixel) {
  Graph<double> g;
  Tensor<double> x(Shape{1, 1, 2, 2});
  x.data = {1, 2, 3, 4};
  const Var y = upsample2(g, g.input(x));
  const std::vector<double> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(g.value(y).data, want);
}

TEST(ConvTranspose2, DeltaReproducesKernel) {
  Rng rng(5);
  const auto w = random_tensor<double>(Shape{1, 3, 2, 2}, rng);
  Tensor<double> x(Shape{1, 1, 3, 3});
  x.at(0, 0, 1, 2) = 1.0;
  Graph<double> g;
  const Var y = conv_transpose2(g, g.input(x), g.input(w));
  ASSERT_EQ(g.shape(y), (Shape{1, 3, 6, 6}));
  for (int co = 0; co < 3; ++co)
    for (int yy = 0; yy < 6; ++yy)
      for (int xx = 0; xx < 6; ++xx) {
        const bool site = yy / 2 == 1 && xx / 2 == 2;
        EXPECT_EQ(g.value(y).at(0, co, yy, xx), site ? w.at(0, co, yy % 2, xx % 2) : 0.0);
      }
}

TEST(ConvTranspose2, MatchesScatterLoops) {
  Rng rng(8);
  const auto x = random_tensor<double>(Shape{2, 3, 4, 5}, rng);
  const auto w = random_tensor<double>(Shape{3, 2, 2, 2}, rng);
  const auto b = random_tensor<double>(Shape{1, 2, 1, 1}, rng);
  Graph<double> g;
  const Var y = conv_transpose2(g, g.input(x), g.input(w), g.input(b));
  expect_near_all(g.value(y), naive_conv_transpose(x, w, b), 1e-12);
  EXPECT_THROW(conv_transpose2(g, g.input(x), g.input(Tensor<double>(Shape{2, 2, 2, 2}))), ShapeError);
}

TEST(Activations, KnownValues) {
  Graph<double> g;
  Tensor<double> x(Shape{1, 1, 1, 3});
  x.data = {-1.0, 0.0, 2.0};
  EXPECT_EQ(g.value(relu(g, g.input(x))).data, (std::vector<double>{0.0, 0.0, 2.0}));
  const auto& s = g.value(sigmoid(g, g.input(x))).data;
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  EXPECT_NEAR(s[0], 1.0 / (1.0 + std::exp(1.0)), 1e-15);
  Tensor<double> big(Shape{1, 1, 1, 2});
  big.data = {-800.0, 800.0};
  const auto& sb = g.value(sigmoid(g, g.input(big))).data;
  EXPECT_EQ(sb[0], 0.0);
  EXPECT_EQ(sb[1], 1.0);
}

TEST(Activations, ReluSubgradientAtZeroIsZero) {
  ParameterStore<double> s;
  auto& p = s.add("x", Shape{1, 1, 1, 3});
  p.value.data = {-1.0, 0.0, 1.0};
  Graph<double> g;
  g.backward(sum(g, relu(g, g.parameter(p))));
  EXPECT_EQ(p.grad.data, (std::vector<double>{0.0, 0.0, 1.0}));
}

TEST(Concat, OrderAndErrors) {
  Graph<double> g;
  const Var a = g.input(Tensor<double>(Shape{2, 1, 2, 2}, 1.0));
  const Var b = g.input(Tensor<double>(Shape{2, 2, 2, 2}, 2.0));
  const Var c = concat_channels(g, a, b);
  ASSERT_EQ(g.shape(c), (Shape{2, 3, 2, 2}));
  for (int n = 0; n < 2; ++n) {
    EXPECT_EQ(g.value(c).at(n, 0, 1, 1), 1.0);
    EXPECT_EQ(g.value(c).at(n, 2, 0, 1), 2.0);
  }
  EXPECT_THROW(concat_channels(g, a, g.input(Tensor<double>(Shape{2, 1, 4, 4}))), ShapeError);
}

TEST(Graph, NonFiniteInputRejected) {
  Graph<double> g;
  Tensor<double> x(Shape{1, 1, 1, 2});
  x.data[1] = std::nan("");
  EXPECT_THROW(g.input(x), NumericalError);
}

TEST(Graph, BackwardNeedsScalar) {
  ParameterStore<double> s;
  auto& p = s.add("x", Shape{1, 1, 2, 2});
  Graph<double> g;
  EXPECT_THROW(g.backward(relu(g, g.parameter(p))), ShapeError);
}

TEST(Graph, GradientsAccumulateAcrossReuse) {
  ParameterStore<double> s;
  auto& p = s.add("x", Shape{1, 1, 1, 2});
  p.value.data = {3.0, -2.0};
  Graph<double> g;
  const Var x = g.parameter(p);
  g.backward(sum(g, mul(g, x, x)));
  EXPECT_EQ(p.grad.data, (std::vector<double>{6.0, -4.0}));
}

TEST(Graph, NoGradModeLeavesParametersUntouched) {
  ParameterStore<double> s;
  auto& p = s.add("x", Shape{1, 1, 1, 2});
  p.value.data = {1.0, 2.0};
  Graph<double> g(false);
  const Var loss = sum(g, g.parameter(p));
  EXPECT_FALSE(g.requires_grad(loss));
  g.backward(loss);
  EXPECT_EQ(p.grad.data, (std::vector<double>{0.0, 0.0}));
}

// ---- attention gate ----

namespace {

void set_identity_psi(ParameterStore<double>& s, const std::string& name, double bias) {
  std::fill(s.get(name + ".psi.w").value.data.begin(), s.get(name + ".psi.w").value.data.end(), 0.0);
  s.get(name + ".psi.b").value.data[0] = bias;
}

}  // namespace

TEST(AttentionGate, SaturatedBiasGivesIdentityOrSuppression) {
  Rng rng(21);
  ParameterStore<double> s;
  declare_attention(s, "att", 8, 16, 4, rng);
  const auto skip = random_tensor<double>(Shape{1, 8, 16, 16}, rng);
  const auto gate = random_tensor<double>(Shape{1, 16, 8, 8}, rng);
  for (double bias : {20.0, -20.0}) {
    set_identity_psi(s, "att", bias);
    Graph<double> g;
    const Var out = attention_gate(g, g.input(skip), g.input(gate), bind_attention(g, s, "att"));
    const auto& o = g.value(out);
    for (std::size_t i = 0; i < o.size(); ++i) {
      if (bias > 0) EXPECT_NEAR(o.data[i], skip.data[i], 1e-8);
      else EXPECT_NEAR(o.data[i], 0.0, 1e-8);
    }
  }
}

TEST(AttentionGate, OutputBoundedBySkip) {
  for (int seed = 1; seed <= kSeeds; ++seed) {
    Rng rng(seed);
    ParameterStore<double> s;
    declare_attention(s, "att", 4, 6, 3, rng);
    const auto skip = random_tensor<double>(Shape{2, 4, 8, 8}, rng, -5.0, 5.0);
    const auto gate = random_tensor<double>(Shape{2, 6, 4, 4}, rng, -5.0, 5.0);
    Graph<double> g;
    const auto& o = g.value(attention_gate(g, g.input(skip), g.input(gate), bind_attention(g, s, "att")));
    for (std::size_t i = 0; i < o.size(); ++i) EXPECT_LE(std::abs(o.data[i]), std::abs(skip.data[i]));
    const auto& a = g.value(attention_coefficients(g, g.input(skip), g.input(gate), bind_attention(g, s, "att")));
    for (double v : a.data) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(AttentionGate, ShapeMismatchRejected) {
  Rng rng(2);
  ParameterStore<double> s;
  declare_attention(s, "att", 4, 6, 3, rng);
  Graph<double> g;
  const auto w = bind_attention(g, s, "att");
  EXPECT_THROW(attention_gate(g, g.input(Tensor<double>(Shape{1, 4, 8, 8})), g.input(Tensor<double>(Shape{1, 6, 8, 8})), w),
               ShapeError);
  EXPECT_THROW(attention_gate(g, g.input(Tensor<double>(Shape{1, 4, 8, 8})), g.input(Tensor<double>(Shape{1, 5, 4, 4})), w),
               ShapeError);
}

// ---- loss ----

TEST(Loss, BceOfHalfAgainstOnesIsLn2) {
  Graph<double> g;
  const Var l = loss_bce_dice(g, g.input(Tensor<double>(Shape{1, 1, 4, 4}, 0.5)), Tensor<double>(Shape{1, 1, 4, 4}, 1.0), 1.0);
  EXPECT_NEAR(g.value(l).data[0], std::log(2.0), 1e-12);
}

TEST(Loss, PerfectPredictionNearZero) {
  Rng rng(4);
  Tensor<double> t(Shape{2, 1, 5, 5}), p(t.shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t.data[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    p.data[i] = t.data[i] > 0 ? 1.0 - 1e-9 : 1e-9;
  }
  Graph<double> g;
  EXPECT_LT(g.value(loss_bce_dice(g, g.input(p), t)).data[0], 1e-6);
}

TEST(Loss, DiceTermClosedForm) {
  Tensor<double> t(Shape{1, 1, 2, 2}), p(t.shape);
  t.data = {1, 1, 0, 0};
  p.data = {0.8, 0.4, 0.2, 0.6};
  Graph<double> g;
  const double dice = 2.0 * 1.2 / (2.0 + 2.0 + kDiceSmooth);
  EXPECT_NEAR(g.value(loss_bce_dice(g, g.input(p), t, 0.0)).data[0], 1.0 - dice, 1e-12);
}

TEST(Loss, Errors) {
  Graph<double> g;
  const Var p = g.input(Tensor<double>(Shape{1, 1, 2, 2}, 0.5));
  EXPECT_THROW(loss_bce_dice(g, p, Tensor<double>(Shape{1, 1, 2, 3})), ShapeError);
  EXPECT_THROW(loss_bce_dice(g, p, Tensor<double>(Shape{1, 1, 2, 2}), 1.5), UsageError);
  EXPECT_THROW(mse_loss(g, p, Tensor<double>(Shape{1, 1, 1, 1})), ShapeError);
}

TEST(Loss, MseValue) {
  Tensor<double> p(Shape{1, 1, 1, 2}), t(p.shape);
  p.data = {1.0, 3.0};
  t.data = {0.0, 1.0};
  Graph<double> g;
  EXPECT_DOUBLE_EQ(g.value(mse_loss(g, g.input(p), t)).data[0], 2.5);
}

// ---- finite-difference checks, five seeds each ----

TEST(GradCheck, LinearGraphIsExact) {
  ParameterStore<double> s;
  Rng rng(1);
  auto& w = add_random(s, "w", Shape{1, 1, 1, 16}, rng);
  const auto x = random_tensor<double>(w.value.shape, rng);
  const auto r = grad_check(s, [&](Graph<double>& g) { return sum(g, mul(g, g.parameter(w), g.input(x))); });
  EXPECT_TRUE(r.passed());
  EXPECT_LT(r.worst(), 1e-8);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(w.grad.data[i], x.data[i]);
}

TEST(GradCheck, Conv2dSameAndValidAndStrided) {
  for (int seed = 1; seed <= kSeeds; ++seed) {
    Rng rng(seed);
    ParameterStore<double> s;
    auto& x = add_random(s, "x", Shape{2, 3, 6, 6}, rng);
    auto& w = add_random(s, "w", Shape{4, 3, 3, 3}, rng);
    auto& b = add_random(s, "b", Shape{1, 4, 1, 1}, rng);
    auto& w1 = add_random(s, "w1", Shape{2, 4, 1, 1}, rng);
    expect_pass(grad_check(
        s,
        [&](Graph<double>& g) {
          const Var a = conv2d(g, g.parameter(x), g.parameter(w), g.parameter(b));
          const Var v = conv2d(g, g.parameter(x), g.parameter(w), {}, {1, Padding::valid});
          const Var st = conv2d(g, a, g.parameter(w1), {}, {2, Padding::valid});
          return add(g, add(g, project(g, a, seed), project(g, v, seed + 100)), project(g, st, seed + 200));
        },
        strict(seed)));
  }
}

TEST(GradCheck, ConvTransposeAndUpsample) {
  for (int seed = 1; seed <= kSeeds; ++seed) {
    Rng rng(seed);
    ParameterStore<double> s;
    auto& x = add_random(s, "x", Shape{2, 3, 3, 4}, rng);
    auto& w = add_random(s, "w", Shape{3, 2, 2, 2}, rng);
    auto& b = add_random(s, "b", Shape{1, 2, 1, 1}, rng);
    expect_pass(grad_check(
        s,
        [&](Graph<double>& g) {
          const Var y = conv_transpose2(g, g.parameter(x), g.parameter(w), g.parameter(b));
          return add(g, project(g, y, seed), project(g, upsample2(g, g.parameter(x)), seed + 7));
        },
        strict(seed)));
  }
}

TEST(GradCheck, Maxpool) {
  for (int seed = 1; seed <= kSeeds; ++seed) {
    Rng rng(seed);
    ParameterStore<double> s;
    auto& x = add_random(s, "x", Shape{2, 3, 6, 8}, rng);
    expect_pass(grad_check(s, [&](Graph<double>& g) { return project(g, maxpool2(g, g.parameter(x)), seed); }, strict(seed)));
  }
}

TEST(GradCheck, ReluSigmoidConcatAwayFromKinks) {
  for (int seed = 1; seed <= kSeeds; ++seed) {
    Rng rng(seed);
    ParameterStore<double> s;
    auto& a = s.add("a", Shape{2, 2, 4, 4});
    fill_away_from_zero(a.value, rng);
    auto& b = add_random(s, "b", Shape{2, 3, 4, 4}, rng);
    expect_pass(grad_check(
        s,
        [&](Graph<double>& g) {
          const Var c = concat_channels(g, relu(g, g.parameter(a)), sigmoid(g, g.parameter(b)));
          return project(g, c, seed);
        },
        strict(seed)));
  }
}

TEST(GradCheck, AttentionGateAllWeightSets) {
  for (int seed = 1; seed <= kSeeds; ++seed) {
    Rng rng(seed);
    ParameterStore<double> s;
    declare_attention(s, "att", 8, 16, 4, rng);
    // Non-zero biases so the relu operates on both sides.
    for (const char* n : {"att.gate.b", "att.psi.b"}) s.get(n).value = random_tensor<double>(s.get(n).value.shape, rng);
    auto& skip = add_random(s, "skip", Shape{1, 8, 16, 16}, rng);
    auto& gate = add_random(s, "gate", Shape{1, 16, 8, 8}, rng);
    GradCheckOptions o = strict(seed);
    o.max_entries = 64;
    expect_pass(grad_check(
        s,
        [&](Graph<double>& g) {
          return project(g, attention_gate(g, g.parameter(skip), g.parameter(gate), bind_attention(g, s, "att")), seed);
        },
        o));
  }
}

TEST(GradCheck, BceDiceLossAndMse) {
  for (int seed = 1; seed <= kSeeds; ++seed) {
    Rng rng(seed);
    ParameterStore<double> s;
    auto& z = add_random(s, "z", Shape{2, 1, 5, 5}, rng);
    Tensor<double> t(z.value.shape);
    for (auto& v : t.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    for (double lambda : {0.0, 0.5, 1.0}) {
      expect_pass(grad_check(s, [&](Graph<double>& g) { return loss_bce_dice(g, sigmoid(g, g.parameter(z)), t, lambda); },
                             strict(seed)));
    }
    expect_pass(grad_check(s, [&](Graph<double>& g) { return mse_loss(g, sigmoid(g, g.parameter(z)), t); }, strict(seed)));
  }
}

TEST(GradCheck, CorruptedConvBackwardIsCaught) {
  Rng rng(9);
  ParameterStore<double> s;
  auto& x = add_random(s, "x", Shape{2, 3, 6, 6}, rng);
  auto& w = add_random(s, "w", Shape{4, 3, 3, 3}, rng);
  // Forward is the conv itself; backward scales every seventh upstream entry by 2.
  auto corrupted_conv = [](Graph<double>& g, Var in, Var k) {
    const Var y = conv2d(g, in, k);
    return g.record("corrupted", g.value(y), {y}, [y](Graph<double>& g, const Tensor<double>& dy) {
      auto& d = g.grad(y).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy.data[i] * (i % 7 == 0 ? 2.0 : 1.0);
    });
  };
  const auto r = grad_check(
      s, [&](Graph<double>& g) { return project(g, corrupted_conv(g, g.parameter(x), g.parameter(w)), 3); }, strict(1));
  EXPECT_FALSE(r.passed());
  EXPECT_GT(r.worst(), 1e-2);
  EXPECT_NE(r.to_text().find("FAIL w"), std::string::npos);
}

// ---- optimizer ----

TEST(Adam, FirstStepIsMinusLr) {
  ParameterStore<float> s;
  auto& w = s.add("w", Shape{});
  w.grad.data[0] = 1.0f;
  Adam<float> opt({0.1});
  opt.step(s);
  EXPECT_NEAR(w.value.data[0], -0.1f, 1e-6f);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, ZeroGradientLeavesWeights) {
  ParameterStore<float> s;
  Rng rng(3);
  auto& w = s.add("w", Shape{1, 2, 3, 3});
  w.value = random_tensor<float>(w.value.shape, rng);
  const auto before = w.value;
  Adam<float> opt;
  for (int i = 0; i < 5; ++i) opt.step(s);
  EXPECT_EQ(w.value, before);
}

TEST(Adam, DeterministicOverTenSteps) {
  auto run = [] {
    ParameterStore<float> s(42);
    Rng rng(42);
    declare_conv(s, "c", 2, 3, 3, rng);
    Tensor<float> x = random_tensor<float>(Shape{2, 2, 5, 5}, rng);
    Adam<float> opt({1e-2});
    for (int step = 0; step < 10; ++step) {
      s.zero_grad();
      Graph<float> g;
      const Var y = conv2d(g, g.input(x), g.parameter(s.get("c.w")), g.parameter(s.get("c.b")));
      g.backward(sum(g, mul(g, y, y)));
      opt.step(s);
    }
    return std::make_pair(s.get("c.w").value, s.get("c.b").value);
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, NanGradientNamesParameterAndLeavesWeights) {
  ParameterStore<float> s;
  s.add("ok", Shape{}).grad.data[0] = 1.0f;
  s.add("enc1.conv.w", Shape{1, 1, 1, 2}).grad.data[1] = std::nanf("");
  Adam<float> opt;
  try {
    opt.step(s);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("enc1.conv.w"), std::string::npos);
  }
  EXPECT_EQ(s.get("ok").value.data[0], 0.0f);
  EXPECT_EQ(opt.steps(), 0);
}

TEST(ParameterStoreTest, DuplicateAndUnknownNames) {
  ParameterStore<float> s;
  s.add("a", Shape{});
  EXPECT_THROW(s.add("a", Shape{}), UsageError);
  EXPECT_THROW(s.get("b"), UsageError);
  EXPECT_EQ(s.scalar_count(), 1u);
}
