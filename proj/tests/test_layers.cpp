#include <gtest/gtest.h>

#include "stada/nn/layers.hpp"
#include "support/test_util.hpp"

using namespace stada;
using namespace stada::nn;
using namespace stada::test;

namespace {

// Scalar probe loss: sum of c * y for a fixed random coefficient tensor c,
// so dL/dy = c and any backward bug shows up against finite differences.
struct Probe {
  Tensor4<double> coeff;
  explicit Probe(Rng& rng, const Tensor4<double>& like) {
    coeff = Tensor4<double>(like.n, like.c, like.h, like.w);
    for (auto& v : coeff.v) v = rng.uniform(-1, 1);
  }
  double loss(const Tensor4<double>& y) const {
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += coeff.v[i] * y.v[i];
    return s;
  }
  Tensor4<double> grad() const { return coeff; }
};

std::vector<double*> tensor_params(Tensor4<double>& t) {
  std::vector<double*> p;
  for (auto& v : t.v) p.push_back(&v);
  return p;
}

void check_close(const std::vector<double>& analytic, const std::vector<double>& fd,
                 double tol = 2e-3) {
  ASSERT_EQ(analytic.size(), fd.size());
  for (std::size_t i = 0; i < analytic.size(); ++i)
    ASSERT_LE(rel_err(analytic[i], fd[i]), tol) << "component " << i;
}

}  // namespace

TEST(Conv2d, InputAndParamGradientsZeroPad) {
  Rng rng(101);
  for (int stride : {1, 2}) {
    Conv2d<double> conv(2, 3, 3, stride, PadMode::zero);
    conv.init_he_uniform(rng);
    auto x = random_tensor<double>(rng, 2, 2, 6, 5);
    Probe probe(rng, conv.forward(x));

    auto eval = [&] { return probe.loss(conv.forward(x)); };

    Conv2dCtx<double> ctx;
    conv.forward(x, &ctx);
    std::vector<double> dw(conv.w.size(), 0), db(conv.b.size(), 0);
    auto dx = conv.backward(probe.grad(), ctx, &dw, &db);

    auto fd_x = central_diff(eval, tensor_params(x));
    check_close({dx.v.begin(), dx.v.end()}, fd_x);

    std::vector<double*> wp;
    for (auto& v : conv.w) wp.push_back(&v);
    check_close(dw, central_diff(eval, wp));

    std::vector<double*> bp;
    for (auto& v : conv.b) bp.push_back(&v);
    check_close(db, central_diff(eval, bp));
  }
}

TEST(Conv2d, InputGradientsReflectPad) {
  Rng rng(103);
  for (int k : {3, 9}) {
    Conv2d<double> conv(1, 2, k, 1, PadMode::reflect);
    conv.init_he_uniform(rng);
    auto x = random_tensor<double>(rng, 1, 1, 7, 6);
    Probe probe(rng, conv.forward(x));
    auto eval = [&] { return probe.loss(conv.forward(x)); };

    Conv2dCtx<double> ctx;
    conv.forward(x, &ctx);
    std::vector<double> dw(conv.w.size(), 0), db(conv.b.size(), 0);
    auto dx = conv.backward(probe.grad(), ctx, &dw, &db);

    check_close({dx.v.begin(), dx.v.end()}, central_diff(eval, tensor_params(x)));
    std::vector<double*> wp;
    for (auto& v : conv.w) wp.push_back(&v);
    check_close(dw, central_diff(eval, wp));
  }
}

TEST(Conv2d, ReflectPadTooSmallThrows) {
  Conv2d<double> conv(1, 1, 9, 1, PadMode::reflect);
  Tensor4<double> x(1, 1, 3, 3);
  EXPECT_THROW(conv.forward(x), ContractViolation);
}

TEST(InstanceNorm, Gradients) {
  Rng rng(107);
  InstanceNorm<double> in(3);
  for (int i = 0; i < 3; ++i) {
    in.gamma[i] = rng.uniform(0.5, 1.5);
    in.beta[i] = rng.uniform(-0.5, 0.5);
  }
  auto x = random_tensor<double>(rng, 2, 3, 4, 5);
  Probe probe(rng, x);
  auto eval = [&] { return probe.loss(in.forward(x)); };

  InstanceNormCtx<double> ctx;
  in.forward(x, &ctx);
  std::vector<double> dg(3, 0), db(3, 0);
  auto dx = in.backward(probe.grad(), ctx, &dg, &db);

  check_close({dx.v.begin(), dx.v.end()}, central_diff(eval, tensor_params(x)));
  std::vector<double*> gp{&in.gamma[0], &in.gamma[1], &in.gamma[2]};
  check_close(dg, central_diff(eval, gp));
  std::vector<double*> bp{&in.beta[0], &in.beta[1], &in.beta[2]};
  check_close(db, central_diff(eval, bp));
}

TEST(InstanceNorm, NormalizesPerInstance) {
  Rng rng(109);
  InstanceNorm<double> in(2);
  auto x = random_tensor<double>(rng, 3, 2, 5, 5, -4.0, 9.0);
  auto y = in.forward(x);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double mean = 0, var = 0;
      const double* p = y.plane(i, j);
      for (int s = 0; s < 25; ++s) mean += p[s];
      mean /= 25;
      for (int s = 0; s < 25; ++s) var += (p[s] - mean) * (p[s] - mean);
      var /= 25;
      EXPECT_NEAR(mean, 0.0, 1e-9);
      EXPECT_NEAR(var, 1.0, 1e-3);
    }
}

TEST(MaxPool, CeilShapeAndGradients) {
  Rng rng(113);
  auto x = random_tensor<double>(rng, 1, 2, 5, 7);  // odd sizes exercise clipping
  MaxPoolCtx<double> ctx;
  auto y = maxpool2_forward(x, &ctx);
  EXPECT_EQ(y.h, 3);
  EXPECT_EQ(y.w, 4);

  Probe probe(rng, y);
  auto eval = [&] { return probe.loss(maxpool2_forward(x)); };
  auto dx = maxpool2_backward(probe.grad(), ctx);
  check_close({dx.v.begin(), dx.v.end()}, central_diff(eval, tensor_params(x)));
}

TEST(Upsample, RoundTripShapesAndGradients) {
  Rng rng(127);
  auto x = random_tensor<double>(rng, 1, 2, 3, 4);
  auto y = upsample_nearest2_forward(x);
  EXPECT_EQ(y.h, 6);
  EXPECT_EQ(y.w, 8);
  Probe probe(rng, y);
  auto eval = [&] { return probe.loss(upsample_nearest2_forward(x)); };
  auto dx = upsample_nearest2_backward(probe.grad());
  check_close({dx.v.begin(), dx.v.end()}, central_diff(eval, tensor_params(x)));
}

TEST(ScaledTanh, Range) {
  Rng rng(131);
  auto x = random_tensor<double>(rng, 1, 3, 4, 4, -20, 20);
  auto y = scaled_tanh_forward(x);
  for (double v : y.v) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 255.0);
  }
}

TEST(ScaledTanh, Gradients) {
  // pre-saturation inputs: finite differences are meaningless in the flat tails
  Rng rng(131);
  auto x = random_tensor<double>(rng, 1, 3, 4, 4, -2, 2);
  ScaledTanhCtx<double> ctx;
  scaled_tanh_forward(x, &ctx);
  Probe probe(rng, x);
  auto eval = [&] { return probe.loss(scaled_tanh_forward(x)); };
  auto dx = scaled_tanh_backward(probe.grad(), ctx);
  check_close({dx.v.begin(), dx.v.end()}, central_diff(eval, tensor_params(x)), 5e-3);
}

TEST(Linear, Gradients) {
  Rng rng(137);
  Linear<double> lin(12, 4);
  lin.init_he_uniform(rng);
  auto x = random_tensor<double>(rng, 3, 3, 2, 2);
  Probe probe(rng, lin.forward(x));
  auto eval = [&] { return probe.loss(lin.forward(x)); };

  LinearCtx<double> ctx;
  lin.forward(x, &ctx);
  std::vector<double> dw(lin.w.size(), 0), db(lin.b.size(), 0);
  auto dx = lin.backward(probe.grad(), ctx, &dw, &db);

  check_close({dx.v.begin(), dx.v.end()}, central_diff(eval, tensor_params(x)));
  std::vector<double*> wp;
  for (auto& v : lin.w) wp.push_back(&v);
  check_close(dw, central_diff(eval, wp));
}

TEST(SoftmaxCrossEntropy, LossAndGradients) {
  Rng rng(139);
  auto logits = random_tensor<double>(rng, 4, 3, 1, 1, -3, 3);
  std::vector<int> labels = {0, 2, 1, 2};
  auto eval = [&] { return softmax_cross_entropy<double>(logits, labels, nullptr); };
  Tensor4<double> dlogits;
  softmax_cross_entropy(logits, labels, &dlogits);
  check_close({dlogits.v.begin(), dlogits.v.end()}, central_diff(eval, tensor_params(logits)));
}

TEST(SoftmaxCrossEntropy, PerfectPredictionLowLoss) {
  Tensor4<double> logits(2, 3, 1, 1);
  logits.at(0, 0, 0, 0) = 50;
  logits.at(1, 2, 0, 0) = 50;
  EXPECT_LT(softmax_cross_entropy<double>(logits, {0, 2}, nullptr), 1e-9);
}

// Composite stack: conv -> IN -> relu -> pool -> upsample -> conv -> tanh,
// checked end to end against finite differences through every layer.
TEST(LayerStack, EndToEndGradient) {
  Rng rng(149);
  Conv2d<double> c1(1, 3, 3, 2, PadMode::reflect);
  c1.init_he_uniform(rng);
  InstanceNorm<double> in1(3);
  Conv2d<double> c2(3, 2, 3, 1, PadMode::zero);
  c2.init_he_uniform(rng);

  auto x = random_tensor<double>(rng, 1, 1, 8, 8);

  auto run = [&](Conv2dCtx<double>* cc1, InstanceNormCtx<double>* ci, ReluCtx<double>* cr,
                 MaxPoolCtx<double>* cp, Conv2dCtx<double>* cc2, ScaledTanhCtx<double>* ct) {
    auto h1 = c1.forward(x, cc1);
    auto h2 = in1.forward(h1, ci);
    auto h3 = relu_forward(h2, cr);
    auto h4 = maxpool2_forward(h3, cp);
    auto h5 = upsample_nearest2_forward(h4);
    auto h6 = c2.forward(h5, cc2);
    return scaled_tanh_forward(h6, ct);
  };

  auto y0 = run(nullptr, nullptr, nullptr, nullptr, nullptr, nullptr);
  Probe probe(rng, y0);
  auto eval = [&] { return probe.loss(run(nullptr, nullptr, nullptr, nullptr, nullptr, nullptr)); };

  Conv2dCtx<double> cc1, cc2;
  InstanceNormCtx<double> ci;
  ReluCtx<double> cr;
  MaxPoolCtx<double> cp;
  ScaledTanhCtx<double> ct;
  run(&cc1, &ci, &cr, &cp, &cc2, &ct);

  std::vector<double> dw1(c1.w.size(), 0), db1(c1.b.size(), 0);
  std::vector<double> dw2(c2.w.size(), 0), db2(c2.b.size(), 0);
  std::vector<double> dg(3, 0), dbeta(3, 0);

  auto g = scaled_tanh_backward(probe.grad(), ct);
  g = c2.backward(g, cc2, &dw2, &db2);
  g = upsample_nearest2_backward(g);
  g = maxpool2_backward(g, cp);
  g = relu_backward(g, cr);
  g = in1.backward(g, ci, &dg, &dbeta);
  g = c1.backward(g, cc1, &dw1, &db1);

  check_close({g.v.begin(), g.v.end()}, central_diff(eval, tensor_params(x)), 5e-3);
  std::vector<double*> w1p;
  for (auto& v : c1.w) w1p.push_back(&v);
  check_close(dw1, central_diff(eval, w1p), 5e-3);
  std::vector<double*> w2p;
  for (auto& v : c2.w) w2p.push_back(&v);
  check_close(dw2, central_diff(eval, w2p), 5e-3);
}
