#include <gtest/gtest.h>

#include "stada/losses.hpp"
#include "support/test_util.hpp"

using namespace stada;
using namespace stada::test;

namespace {

void expect_grads_close(const std::vector<double>& analytic, const std::vector<double>& fd,
                        double tol = 1e-3) {
  ASSERT_EQ(analytic.size(), fd.size());
  for (std::size_t i = 0; i < analytic.size(); ++i)
    EXPECT_LE(rel_err(analytic[i], fd[i]), tol) << "component " << i;
}

std::vector<double*> mat_params(MatD& m) {
  std::vector<double*> p;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) p.push_back(&m(i, j));
  return p;
}

std::vector<double> flatten(const MatD& m) {
  std::vector<double> v;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
  return v;
}

}  // namespace

TEST(LossGradients, ContentLossMatchesFiniteDifferences) {
  Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    int n = 1 + int(rng.below(8)), m = 1 + int(rng.below(8));
    auto f = random_feature_map(rng, n, m);
    auto p = random_feature_map(rng, n, m);
    auto fd = central_diff([&] { return content_loss(f, p); }, mat_params(f.data));
    expect_grads_close(flatten(content_loss_grad(f, p)), fd);
  }
}

TEST(LossGradients, StyleThroughGramMatchesFiniteDifferences) {
  Rng rng(37);
  for (int t = 0; t < 20; ++t) {
    int n = 1 + int(rng.below(6)), m = 1 + int(rng.below(6));
    auto f = random_feature_map(rng, n, m);
    auto a = gram_matrix(random_feature_map(rng, n, m));
    auto eval = [&] { return layer_style_loss(gram_matrix(f), a, n, m); };
    auto fd = central_diff(eval, mat_params(f.data));
    expect_grads_close(flatten(layer_style_loss_grad(f, a, n, m)), fd);
  }
}

TEST(LossGradients, TvLossMatchesFiniteDifferences) {
  Rng rng(41);
  for (int t = 0; t < 20; ++t) {
    auto x = random_tensor<double>(rng, 1, 2, 2 + int(rng.below(6)), 2 + int(rng.below(6)));
    std::vector<double*> params;
    for (auto& v : x.v) params.push_back(&v);
    auto fd = central_diff([&] { return tv_loss(x); }, params);
    auto g = tv_loss_grad(x);
    std::vector<double> analytic(g.v.begin(), g.v.end());
    expect_grads_close(analytic, fd);
  }
}

// Composed objective: lambda_c * content(F, P) + lambda_s * sum_l w_l E_l(gram(F_l), A_l)
// + lambda_tv * tv(x), differentiated w.r.t. F, every F_l and x jointly.
TEST(LossGradients, ComposedObjectiveMatchesFiniteDifferences) {
  Rng rng(43);
  for (int t = 0; t < 10; ++t) {
    LossWeights w{rng.uniform(0.5, 5), rng.uniform(0.5, 5), rng.uniform(0.5, 5)};
    auto f = random_feature_map(rng, 3, 6, "c");
    auto p = random_feature_map(rng, 3, 6, "c");
    std::vector<FeatureMap> fs;
    StyleTarget target;
    std::vector<std::pair<int, int>> dims;
    for (int l = 0; l < 2; ++l) {
      std::string id = "s" + std::to_string(l);
      fs.push_back(random_feature_map(rng, 2 + l, 4, id));
      target.grams.push_back(gram_matrix(random_feature_map(rng, 2 + l, 4, id)));
      target.layer_weights.push_back(0.5);
      target.dims.push_back({2 + l, 4});
      dims.push_back({2 + l, 4});
    }
    auto x = random_tensor<double>(rng, 1, 2, 3, 3);

    auto eval = [&] {
      std::vector<GramMatrix> gs;
      for (auto& fl : fs) gs.push_back(gram_matrix(fl));
      return total_objective(content_loss(f, p), style_loss(gs, target, dims), tv_loss(x), w);
    };

    std::vector<double*> params = mat_params(f.data);
    for (auto& fl : fs)
      for (auto* ptr : mat_params(fl.data)) params.push_back(ptr);
    for (auto& v : x.v) params.push_back(&v);

    auto fd = central_diff(eval, params);

    std::vector<double> analytic = flatten(w.lambda_content * content_loss_grad(f, p));
    for (std::size_t l = 0; l < fs.size(); ++l) {
      MatD gl = w.lambda_style * target.layer_weights[l] *
                layer_style_loss_grad(fs[l], target.grams[l], dims[l].first, dims[l].second);
      for (double v : flatten(gl)) analytic.push_back(v);
    }
    auto tvg = tv_loss_grad(x);
    for (double v : tvg.v) analytic.push_back(w.lambda_tv * v);

    expect_grads_close(analytic, fd);
  }
}
