#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "stada/losses.hpp"
#include "support/test_util.hpp"

using namespace stada;
using namespace stada::test;

namespace {

FeatureMap fm(std::initializer_list<std::initializer_list<double>> rows,
              const std::string& layer = "L") {
  FeatureMap f;
  f.layer_id = layer;
  f.data.resize(static_cast<Eigen::Index>(rows.size()),
                static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) f.data(i, j++) = v;
    ++i;
  }
  return f;
}

}  // namespace

TEST(ContentLoss, IdentityIsZero) {
  Rng rng(7);
  auto f = random_feature_map(rng, 4, 6);
  EXPECT_EQ(content_loss(f, f), 0.0);
}

TEST(ContentLoss, FrozenExample) {
  auto f = fm({{1, 2}, {3, 4}});
  auto p = fm({{0, 0}, {0, 0}});
  EXPECT_DOUBLE_EQ(content_loss(f, p), 15.0);
}

TEST(ContentLoss, ConstantOffset) {
  auto p = fm({{1, 2, 3}, {4, 5, 6}});
  FeatureMap f = p;
  f.data.array() += 1.0;
  EXPECT_DOUBLE_EQ(content_loss(f, p), 3.0);
}

TEST(ContentLoss, ShapeMismatchNamesBothShapes) {
  auto f = fm({{1, 2}, {3, 4}});
  auto p = fm({{1, 2, 3}, {4, 5, 6}});
  try {
    content_loss(f, p);
    FAIL() << "expected ContractViolation";
  } catch (const ContractViolation& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("(2, 2)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos) << msg;
  }
}

TEST(GramMatrix, SelfInnerProduct) {
  auto f = fm({{1, 1, 1, 1}});
  auto g = gram_matrix(f);
  ASSERT_EQ(g.data.rows(), 1);
  EXPECT_DOUBLE_EQ(g.data(0, 0), 4.0);
}

TEST(GramMatrix, OrthogonalRows) {
  auto f = fm({{1, 0}, {0, 1}});
  auto g = gram_matrix(f);
  EXPECT_DOUBLE_EQ(g.data(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g.data(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(g.data(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(g.data(1, 0), 0.0);
}

TEST(GramMatrix, FrozenExample) {
  auto g = gram_matrix(fm({{1, 2}, {3, 4}}));
  EXPECT_DOUBLE_EQ(g.data(0, 0), 5.0);
  EXPECT_DOUBLE_EQ(g.data(0, 1), 11.0);
  EXPECT_DOUBLE_EQ(g.data(1, 0), 11.0);
  EXPECT_DOUBLE_EQ(g.data(1, 1), 25.0);
}

TEST(GramMatrix, ExactSymmetryAndPsdOnRandomInputs) {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    int n = 1 + int(rng.below(8)), m = 1 + int(rng.below(8));
    auto f = random_feature_map(rng, n, m);
    auto g = gram_matrix(f);
    for (int i = 0; i < n; ++i) {
      EXPECT_GE(g.data(i, i), 0.0);
      for (int j = 0; j < n; ++j) EXPECT_EQ(g.data(i, j), g.data(j, i));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.data);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8);
  }
}

TEST(LayerStyleLoss, IdentityIsZero) {
  Rng rng(3);
  auto g = gram_matrix(random_feature_map(rng, 3, 5));
  EXPECT_EQ(layer_style_loss(g, g, 3, 5), 0.0);
}

TEST(LayerStyleLoss, FrozenExample) {
  GramMatrix g{MatD::Constant(1, 1, 4.0), "L"};
  GramMatrix a{MatD::Constant(1, 1, 0.0), "L"};
  EXPECT_DOUBLE_EQ(layer_style_loss(g, a, 1, 2), 1.0);
}

TEST(LayerStyleLoss, QuadraticHomogeneity) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    int n = 1 + int(rng.below(5));
    auto a = gram_matrix(random_feature_map(rng, n, 4));
    auto g = gram_matrix(random_feature_map(rng, n, 4));
    GramMatrix g2{a.data + 2.0 * (g.data - a.data), "L"};
    g.layer_id = a.layer_id = "L";
    double e1 = layer_style_loss(g, a, n, 4);
    double e2 = layer_style_loss(g2, a, n, 4);
    EXPECT_NEAR(e2, 4.0 * e1, 1e-9 * std::max(1.0, e2));
  }
}

TEST(StyleLoss, WeightedSum) {
  // two layers engineered to have E1 = 1.0 and E2 = 3.0
  GramMatrix g1{MatD::Constant(1, 1, 4.0), "a"}, a1{MatD::Constant(1, 1, 0.0), "a"};
  GramMatrix g2{MatD::Constant(1, 1, 0.0), "b"}, a2{MatD::Constant(1, 1, 4.0 * std::sqrt(3.0)), "b"};
  StyleTarget target{{a1, a2}, {0.5, 0.5}, {{1, 2}, {1, 2}}};
  double s = style_loss({g1, g2}, target, {{1, 2}, {1, 2}});
  EXPECT_NEAR(s, 2.0, 1e-12);
}

TEST(StyleLoss, SingleLayerEqualsLayerLoss) {
  Rng rng(9);
  auto f = random_feature_map(rng, 4, 6, "x");
  auto p = random_feature_map(rng, 4, 6, "x");
  auto g = gram_matrix(f), a = gram_matrix(p);
  StyleTarget target{{a}, {1.0}, {{4, 6}}};
  EXPECT_DOUBLE_EQ(style_loss({g}, target, {{4, 6}}), layer_style_loss(g, a, 4, 6));
}

TEST(StyleLoss, AllEqualIsZero) {
  Rng rng(13);
  std::vector<GramMatrix> gs;
  StyleTarget target;
  std::vector<std::pair<int, int>> dims;
  for (int l = 0; l < 3; ++l) {
    auto g = gram_matrix(random_feature_map(rng, 3, 4, "l" + std::to_string(l)));
    gs.push_back(g);
    target.grams.push_back(g);
    target.layer_weights.push_back(1.0 / 3.0);
    target.dims.push_back({3, 4});
    dims.push_back({3, 4});
  }
  EXPECT_EQ(style_loss(gs, target, dims), 0.0);
}

TEST(StyleLoss, LayerMismatchListsMissing) {
  GramMatrix g{MatD::Zero(1, 1), "relu1_2"};
  GramMatrix a{MatD::Zero(1, 1), "relu2_2"};
  StyleTarget target{{a}, {1.0}, {{1, 1}}};
  try {
    style_loss({g}, target, {{1, 1}});
    FAIL() << "expected ContractViolation";
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("relu2_2"), std::string::npos);
  }
}

TEST(StyleLoss, PermutationInvariant) {
  Rng rng(17);
  std::vector<GramMatrix> gs;
  StyleTarget t1;
  std::vector<std::pair<int, int>> dims;
  std::vector<double> ws = {0.2, 0.3, 0.5};
  for (int l = 0; l < 3; ++l) {
    std::string id = "l" + std::to_string(l);
    gs.push_back(gram_matrix(random_feature_map(rng, 2 + l, 4, id)));
    t1.grams.push_back(gram_matrix(random_feature_map(rng, 2 + l, 4, id)));
    t1.layer_weights.push_back(ws[l]);
    t1.dims.push_back({2 + l, 4});
    dims.push_back({2 + l, 4});
  }
  double base = style_loss(gs, t1, dims);
  // permute layer order 2,0,1 consistently
  auto perm = [](auto v) { return decltype(v){v[2], v[0], v[1]}; };
  StyleTarget t2{perm(t1.grams), perm(t1.layer_weights), perm(t1.dims)};
  EXPECT_NEAR(style_loss(perm(gs), t2, perm(dims)), base, 1e-12 * std::max(1.0, base));
}

TEST(TvLoss, ConstantImageIsZero) {
  Tensor4<double> x(2, 3, 4, 5);
  x.fill(3.25);
  EXPECT_EQ(tv_loss(x), 0.0);
}

TEST(TvLoss, FrozenExample) {
  Tensor4<double> x(1, 1, 2, 2);
  x.at(0, 0, 0, 0) = 0;
  x.at(0, 0, 0, 1) = 1;
  x.at(0, 0, 1, 0) = 2;
  x.at(0, 0, 1, 1) = 3;
  EXPECT_DOUBLE_EQ(tv_loss(x), 10.0);
}

TEST(TvLoss, SinglePixelIsZero) {
  Tensor4<double> x(1, 3, 1, 1);
  x.at(0, 0, 0, 0) = 42;
  EXPECT_EQ(tv_loss(x), 0.0);
}

TEST(TvLoss, ZeroOnlyForConstantChannels) {
  Tensor4<double> x(1, 1, 3, 3);
  x.fill(1.0);
  x.at(0, 0, 2, 2) = 1.0001;
  EXPECT_GT(tv_loss(x), 0.0);
}

TEST(TotalObjective, Zeros) {
  EXPECT_EQ(total_objective(0, 0, 0, LossWeights{1, 1, 1}), 0.0);
}

TEST(TotalObjective, UnitWeights) {
  EXPECT_DOUBLE_EQ(total_objective(2, 3, 5, LossWeights{1, 1, 1}), 10.0);
}

TEST(TotalObjective, DefaultWeightsExample) {
  EXPECT_DOUBLE_EQ(total_objective(2, 3, 5, LossWeights{7.5, 100, 200}), 1315.0);
}

TEST(TotalObjective, LinearInEachComponent) {
  Rng rng(23);
  for (int t = 0; t < 50; ++t) {
    LossWeights w{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0.01, 10)};
    double c = rng.uniform(0, 5), s = rng.uniform(0, 5), tv = rng.uniform(0, 5);
    double base = total_objective(c, s, tv, w);
    double a = rng.uniform(0, 3);
    EXPECT_NEAR(total_objective(c + a, s, tv, w) - base, w.lambda_content * a, 1e-9);
    EXPECT_NEAR(total_objective(c, s + a, tv, w) - base, w.lambda_style * a, 1e-9);
    EXPECT_NEAR(total_objective(c, s, tv + a, w) - base, w.lambda_tv * a, 1e-9);
  }
}

TEST(TotalObjective, RejectsNonFinite) {
  EXPECT_THROW(total_objective(std::nan(""), 0, 0, LossWeights{1, 1, 1}), ContractViolation);
  EXPECT_THROW(total_objective(0, INFINITY, 0, LossWeights{1, 1, 1}), ContractViolation);
}

TEST(LossWeights, RejectAllZero) {
  EXPECT_THROW(validate(LossWeights{0, 0, 0}), ContractViolation);
  EXPECT_THROW(validate(LossWeights{-1, 1, 1}), ContractViolation);
}

// Randomized agreement with the independent oracles, double precision.
TEST(Oracles, AllLossesMatchBruteForce) {
  Rng rng(1234);
  for (int t = 0; t < 1000; ++t) {
    int n = 1 + int(rng.below(8)), m = 1 + int(rng.below(8));
    auto f = random_feature_map(rng, n, m);
    auto p = random_feature_map(rng, n, m);
    double cl = content_loss(f, p);
    double co = oracle_content_loss(f.data, p.data);
    EXPECT_LE(rel_err(cl, co), 1e-12);

    auto g = gram_matrix(f);
    MatD go = oracle_gram(f.data);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) EXPECT_LE(rel_err(g.data(i, j), go(i, j)), 1e-12);

    auto a = gram_matrix(p);
    EXPECT_LE(rel_err(layer_style_loss(g, a, n, m), oracle_layer_style(g.data, a.data, n, m)),
              1e-12);

    auto x = random_tensor<double>(rng, 1, 1 + int(rng.below(3)), 1 + int(rng.below(8)),
                                   1 + int(rng.below(8)));
    EXPECT_LE(rel_err(tv_loss(x), oracle_tv(x)), 1e-12);
  }
}
