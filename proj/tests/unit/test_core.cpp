#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "cola/core/adam.hpp"
#include "cola/core/archive.hpp"
#include "cola/core/ops.hpp"
#include "support.hpp"

using namespace cola;
using cola::test::gradcheck;
using cola::test::random_mat;
using V = Var<double>;
using Vs = std::vector<V>;

namespace {

// Scalar probe: sum of elementwise product with a fixed random matrix, so
// every output entry gets a distinct upstream gradient.
V probe(Tape<double>& t, const V& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ops::sum(ops::mul(y, t.constant(random_mat<double>(rng, y.rows(), y.cols()))));
}

}  // namespace

TEST(Rng, SameSeedSameStream) {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, StateRoundTrip) {
  Rng a(11);
  for (int i = 0; i < 7; ++i) a.normal();
  Rng b;
  b.set_state(a.state());
  for (int i = 0; i < 20; ++i) EXPECT_EQ(a.normal(), b.normal());
}

TEST(Rng, BelowStaysInRange) {
  Rng r(1);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(r.below(7), 7u);
  EXPECT_EQ(r.below(1), 0u);
}

TEST(Rng, DerivedStreamsDiffer) { EXPECT_NE(derive_seed(0, 1), derive_seed(0, 2)); }

TEST(Ops, MatmulGradient) {
  Rng r(1);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::matmul(v[0], v[1])); },
                      {random_mat<double>(r, 3, 4), random_mat<double>(r, 4, 2)}),
            1e-6);
}

TEST(Ops, LinearGradient) {
  Rng r(2);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::linear(v[0], v[1], v[2])); },
                      {random_mat<double>(r, 5, 3), random_mat<double>(r, 3, 4), random_mat<double>(r, 1, 4)}),
            1e-6);
}

TEST(Ops, ElementwiseGradients) {
  Rng r(3);
  auto a = random_mat<double>(r, 3, 3), b = random_mat<double>(r, 3, 3);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::sigmoid(v[0])); }, {a}), 1e-6);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::tanh(v[0])); }, {a}), 1e-6);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::exp(v[0])); }, {a}), 1e-6);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::one_minus(v[0])); }, {a}), 1e-6);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::mul(v[0], v[1])); }, {a, b}), 1e-6);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::sub(v[0], v[1])); }, {a, b}), 1e-6);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::axpy(v[0], 0.3, v[1])); }, {a, b}), 1e-6);
}

TEST(Ops, ReluGradientAwayFromKink) {
  Mat<double> a(2, 3);
  a << 0.5, -0.7, 1.2, -0.1, 0.9, -2.0;
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::relu(v[0])); }, {a}), 1e-6);
}

TEST(Ops, ShapeOpsGradients) {
  Rng r(4);
  auto x = random_mat<double>(r, 6, 4);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::tile_rows(v[0], 3)); }, {x}), 1e-6);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::repeat_rows(v[0], 2)); }, {x}), 1e-6);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::slice_cols(v[0], 1, 2)); }, {x}), 1e-6);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::reshape(v[0], 3, 8)); }, {x}), 1e-6);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::block_mean_rows(v[0], 3)); }, {x}), 1e-6);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::add_tiled(v[0], v[1])); },
                      {x, random_mat<double>(r, 3, 4)}),
            1e-6);
}

TEST(Ops, NormalizationGradients) {
  Rng r(5);
  auto x = random_mat<double>(r, 6, 5);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::layer_norm(v[0], v[1], v[2])); },
                      {x, random_mat<double>(r, 1, 5), random_mat<double>(r, 1, 5)}),
            1e-5);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::block_col_softmax(v[0], 3)); }, {x}), 1e-6);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::log_softmax_rows(v[0])); }, {x}), 1e-6);
  Mat<double> pos = random_mat<double>(r, 4, 3).cwiseAbs().array() + 0.1;
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::row_normalize(v[0])); }, {pos}), 1e-6);
}

TEST(Ops, BlockMatmulGradients) {
  Rng r(6);
  // batch 2: a blocks 3x4, b blocks 5x4 (nt) / 4x5
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::block_matmul_nt(v[0], v[1], 2)); },
                      {random_mat<double>(r, 6, 4), random_mat<double>(r, 10, 4)}),
            1e-6);
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::block_matmul(v[0], v[1], 2)); },
                      {random_mat<double>(r, 6, 5), random_mat<double>(r, 10, 4)}),
            1e-6);
}

TEST(Ops, SlotSoftmaxAndMaskedSumGradients) {
  Rng r(7);
  const int B = 2, K = 3, G = 4, C = 2;
  EXPECT_LT(gradcheck([&](auto& t, const Vs& v) { return probe(t, ops::slot_softmax(v[0], K, G)); },
                      {random_mat<double>(r, B * K * G, 1)}),
            1e-6);
  EXPECT_LT(gradcheck([&](auto& t, const Vs& v) { return probe(t, ops::masked_slot_sum(v[0], v[1], K, G)); },
                      {random_mat<double>(r, B * K * G, 1), random_mat<double>(r, B * K * G, C)}),
            1e-6);
}

TEST(Ops, SlotSoftmaxNormalizesOverSlots) {
  Rng r(8);
  const int B = 2, K = 3, G = 5;
  Tape<double> t(false);
  auto m = ops::slot_softmax(t.constant(random_mat<double>(r, B * K * G, 1, 5.0)), K, G).value();
  for (int b = 0; b < B; ++b)
    for (int g = 0; g < G; ++g) {
      double s = 0;
      for (int k = 0; k < K; ++k) s += m((b * K + k) * G + g, 0);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Ops, ConvMatchesDirectLoop) {
  Rng r(9);
  const int B = 2, H = 5, W = 5, Cin = 2, Cout = 3, k = 3, stride = 2;
  auto x = random_mat<double>(r, B * H * W, Cin);
  auto w = random_mat<double>(r, k * k * Cin, Cout);
  auto bias = random_mat<double>(r, 1, Cout);
  ops::ConvGeometry g{B, H, W, Cin, k, stride, k / 2};
  Tape<double> t(false);
  auto y = ops::conv2d(t.constant(x), t.constant(w), t.constant(bias), g).value();
  const int oh = static_cast<int>(g.out_height()), ow = static_cast<int>(g.out_width());
  ASSERT_EQ(y.rows(), B * oh * ow);
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int co = 0; co < Cout; ++co) {
          double s = bias(0, co);
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride - 1 + ky, ix = ox * stride - 1 + kx;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              for (int ci = 0; ci < Cin; ++ci)
                s += x((b * H + iy) * W + ix, ci) * w((ky * k + kx) * Cin + ci, co);
            }
          EXPECT_NEAR(y((b * oh + oy) * ow + ox, co), s, 1e-12);
        }
}

TEST(Ops, ConvAndPoolGradients) {
  Rng r(10);
  ops::ConvGeometry g{2, 4, 4, 2, 3, 1, 1};
  EXPECT_LT(gradcheck([&](auto& t, const Vs& v) { return probe(t, ops::conv2d(v[0], v[1], v[2], g)); },
                      {random_mat<double>(r, 32, 2), random_mat<double>(r, 18, 3), random_mat<double>(r, 1, 3)}),
            1e-6);
  EXPECT_LT(gradcheck([&](auto& t, const Vs& v) { return probe(t, ops::avg_pool(v[0], 2, 4, 4, 2)); },
                      {random_mat<double>(r, 32, 3)}),
            1e-6);
}

TEST(Ops, DistanceAndNllGradients) {
  Rng r(11);
  std::vector<int> labels{2, 0, 1};
  EXPECT_LT(gradcheck([](auto& t, const Vs& v) { return probe(t, ops::sq_dist_rows(v[0], v[1])); },
                      {random_mat<double>(r, 3, 4), random_mat<double>(r, 5, 4)}),
            1e-6);
  EXPECT_LT(gradcheck([&](auto&, const Vs& v) { return ops::nll_mean(ops::log_softmax_rows(v[0]), labels); },
                      {random_mat<double>(r, 3, 4)}),
            1e-6);
  EXPECT_LT(gradcheck([](auto&, const Vs& v) { return ops::sum_squares(v[0]); }, {random_mat<double>(r, 3, 4)}), 1e-6);
}

TEST(Ops, ShapeMismatchThrows) {
  Tape<double> t;
  EXPECT_THROW(ops::matmul(t.constant(Mat<double>::Zero(2, 3)), t.constant(Mat<double>::Zero(2, 3))), ShapeError);
  EXPECT_THROW(ops::add(t.constant(Mat<double>::Zero(2, 3)), t.constant(Mat<double>::Zero(3, 2))), ShapeError);
}

TEST(Tape, FrozenParameterGetsNoGradient) {
  ParamStore<double> ps;
  auto& p = ps.add("w", Mat<double>::Ones(2, 2));
  p.trainable = false;
  Tape<double> t;
  auto y = ops::sum_squares(t.param(p));
  t.backward(y);
  EXPECT_TRUE(p.grad.isZero());
}

TEST(Adam, MatchesHandComputedSteps) {
  ParamStore<double> ps;
  auto& p = ps.add("w", Mat<double>::Constant(1, 1, 1.0));
  Adam<double> opt(AdamOptions{0.9, 0.99, 1e-8});
  double x = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 5; ++t) {
    const double g = 2 * x;  // d/dx x^2
    p.grad(0, 0) = g;
    opt.step(ps, 0.1);
    m = 0.9 * m + 0.1 * g;
    v = 0.99 * v + 0.01 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.99, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.value(0, 0), x, 1e-12);
  }
  EXPECT_EQ(opt.steps(), 5);
}

TEST(Adam, GroupsUseTheirOwnRate) {
  ParamStore<double> ps;
  ps.add("a", Mat<double>::Zero(1, 1));
  ps.add("b", Mat<double>::Zero(1, 1));
  ps.at("a").grad(0, 0) = 1;
  ps.at("b").grad(0, 0) = 1;
  Adam<double> opt;
  opt.step(ps, {0.1, 0.3}, [](const std::string& n) { return n == "b" ? 1 : 0; });
  // The first bias-corrected step moves by lr * g / |g|.
  EXPECT_NEAR(ps.at("a").value(0, 0), -0.1, 1e-6);
  EXPECT_NEAR(ps.at("b").value(0, 0), -0.3, 1e-6);
}

TEST(Archive, RoundTripPreservesTensorsAndMeta) {
  Rng r(12);
  Archive a;
  a.meta["hello"] = "world";
  auto f = random_mat<float>(r, 3, 5);
  auto d = random_mat<double>(r, 2, 2);
  a.put("x/f", f);
  a.put("x/d", d);
  const auto path = std::filesystem::temp_directory_path() / "cola_archive_test.cola";
  a.write(path);
  const Archive b = Archive::read(path);
  std::filesystem::remove(path);
  EXPECT_EQ(b.meta.at("hello"), "world");
  EXPECT_EQ(b.get<float>("x/f"), f);
  EXPECT_EQ(b.get<double>("x/d"), d);
  EXPECT_EQ(b.names("x/").size(), 2u);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_THROW(b.get<float>("missing"), IoError);
}

TEST(Archive, RejectsGarbage) {
  const auto path = std::filesystem::temp_directory_path() / "cola_archive_bad.cola";
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("not an archive", f);
    std::fclose(f);
  }
  EXPECT_THROW(Archive::read(path), IoError);
  std::filesystem::remove(path);
}
