// Central finite-difference checks (h = 1e-5) for every differentiable
// layer, coordinate by coordinate on small random inputs.
#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "glyphnet/layers.hpp"
#include "glyphnet/rng.hpp"
#include "oracle.hpp"

using namespace glyphnet;

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

// Fixed random weighting turns a tensor output into a scalar loss with a
// dense, nontrivial gradient (the weights themselves are grad_out).
struct WeightedLoss {
  Tensor weights;

  explicit WeightedLoss(const std::vector<std::size_t>& shape, Rng& rng)
      : weights(oracle::random_tensor(shape, rng)) {}

  double operator()(const Tensor& y) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += weights[i] * y[i];
    return acc;
  }
};

void expect_grad_matches(Tensor& param, const Tensor& analytic,
                         const std::function<double()>& loss) {
  ASSERT_EQ(param.shape(), analytic.shape());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double fd = oracle::finite_difference(param, i, loss, kStep);
    EXPECT_LE(oracle::rel_error(analytic[i], fd), kTol)
        << "coordinate " << i << ": analytic " << analytic[i] << " vs fd " << fd;
  }
}

}  // namespace

TEST(GradCheck, Conv2d) {
  Rng rng(21);
  ConvParams p;
  p.in_channels = 2;
  p.out_channels = 3;
  p.kernel = 3;
  p.stride = 1;
  p.padding = 1;
  p.use_bias = true;
  p.weights = oracle::random_tensor({3, 2, 3, 3}, rng);
  p.bias = oracle::random_tensor({3}, rng);
  Tensor x = oracle::random_tensor({2, 2, 5, 5}, rng);

  WeightedLoss loss_fn({2, 3, 5, 5}, rng);
  auto loss = [&] { return loss_fn(conv2d_forward(x, p)); };
  const ConvGrads g = conv2d_backward(x, p, loss_fn.weights);

  expect_grad_matches(x, g.grad_x, loss);
  expect_grad_matches(p.weights, g.grad_w, loss);
  expect_grad_matches(p.bias, g.grad_b, loss);
}

TEST(GradCheck, ConvStride2NoPadding) {
  Rng rng(22);
  ConvParams p;
  p.in_channels = 1;
  p.out_channels = 2;
  p.kernel = 3;
  p.stride = 2;
  p.padding = 0;
  p.use_bias = false;
  p.weights = oracle::random_tensor({2, 1, 3, 3}, rng);
  Tensor x = oracle::random_tensor({1, 1, 7, 7}, rng);

  WeightedLoss loss_fn({1, 2, 3, 3}, rng);
  auto loss = [&] { return loss_fn(conv2d_forward(x, p)); };
  const ConvGrads g = conv2d_backward(x, p, loss_fn.weights);
  expect_grad_matches(x, g.grad_x, loss);
  expect_grad_matches(p.weights, g.grad_w, loss);
}

TEST(GradCheck, Dense) {
  Rng rng(23);
  DenseParams p;
  p.use_bias = true;
  p.weights = oracle::random_tensor({6, 4}, rng);
  p.bias = oracle::random_tensor({4}, rng);
  Tensor x = oracle::random_tensor({3, 6}, rng);

  WeightedLoss loss_fn({3, 4}, rng);
  auto loss = [&] { return loss_fn(dense_forward(x, p)); };
  const DenseGrads g = dense_backward(x, p, loss_fn.weights);
  expect_grad_matches(x, g.grad_x, loss);
  expect_grad_matches(p.weights, g.grad_w, loss);
  expect_grad_matches(p.bias, g.grad_b, loss);
}

TEST(GradCheck, BatchNorm) {
  Rng rng(24);
  BatchNormState state = BatchNormState::make(3);
  for (std::size_t i = 0; i < 3; ++i) {
    state.gamma[i] = rng.uniform(0.5, 1.5);
    state.beta[i] = rng.uniform(-0.5, 0.5);
  }
  Tensor x = oracle::random_tensor({2, 3, 4, 4}, rng, -1.5, 2.5);

  WeightedLoss loss_fn({2, 3, 4, 4}, rng);
  auto loss = [&] { return loss_fn(batchnorm_forward(x, state, /*train=*/true)); };

  BatchNormCache cache;
  batchnorm_forward(x, state, /*train=*/true, &cache);
  const BatchNormGrads g = batchnorm_backward(state, cache, loss_fn.weights);

  expect_grad_matches(x, g.grad_x, loss);
  expect_grad_matches(state.gamma, g.grad_gamma, loss);
  expect_grad_matches(state.beta, g.grad_beta, loss);
}

TEST(GradCheck, ReluMaxpoolAvgpoolGap) {
  Rng rng(25);
  {
    Tensor x = oracle::random_tensor({2, 2, 4, 4}, rng);
    WeightedLoss loss_fn({2, 2, 4, 4}, rng);
    auto loss = [&] { return loss_fn(relu_forward(x)); };
    expect_grad_matches(x, relu_backward(x, loss_fn.weights), loss);
  }
  {
    Tensor x = oracle::random_tensor({1, 2, 6, 6}, rng);
    WeightedLoss loss_fn({1, 2, 3, 3}, rng);
    auto loss = [&] { return loss_fn(maxpool2x2_forward(x).y); };
    const MaxPoolResult r = maxpool2x2_forward(x);
    expect_grad_matches(x, maxpool2x2_backward(r.argmax, x.shape(), loss_fn.weights), loss);
  }
  {
    Tensor x = oracle::random_tensor({1, 2, 6, 6}, rng);
    WeightedLoss loss_fn({1, 2, 3, 3}, rng);
    auto loss = [&] { return loss_fn(avgpool2x2_forward(x)); };
    expect_grad_matches(x, avgpool2x2_backward(x.shape(), loss_fn.weights), loss);
  }
  {
    Tensor x = oracle::random_tensor({2, 3, 5, 5}, rng);
    WeightedLoss loss_fn({2, 3}, rng);
    auto loss = [&] { return loss_fn(global_avg_pool_forward(x)); };
    expect_grad_matches(x, global_avg_pool_backward(x.shape(), loss_fn.weights), loss);
  }
}

TEST(GradCheck, SoftmaxJacobian) {
  Rng rng(26);
  Tensor logits = oracle::random_tensor({3, 5}, rng, -2.0, 2.0);
  WeightedLoss loss_fn({3, 5}, rng);
  auto loss = [&] { return loss_fn(softmax_forward(logits)); };
  const Tensor probs = softmax_forward(logits);
  expect_grad_matches(logits, softmax_backward(probs, loss_fn.weights), loss);
}

TEST(GradCheck, SoftmaxCrossEntropyAgainstLogits) {
  // Fused gradient (p - onehot)/N against finite differences of the
  // composed loss, within 1e-6.
  Rng rng(27);
  Tensor logits = oracle::random_tensor({4, 6}, rng, -2.0, 2.0);
  const std::vector<int> labels{2, 0, 5, 3};
  auto loss = [&] { return cross_entropy(softmax_forward(logits), labels); };
  const Tensor analytic = cross_entropy_logit_grad(softmax_forward(logits), labels);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double fd = oracle::finite_difference(logits, i, loss, kStep);
    EXPECT_NEAR(analytic[i], fd, 1e-6);
  }
}

TEST(GradCheck, TwoLayerComposition) {
  // conv -> relu end to end: composed analytic backward vs finite
  // differences through the whole stack.
  Rng rng(28);
  ConvParams p;
  p.in_channels = 1;
  p.out_channels = 2;
  p.kernel = 3;
  p.stride = 1;
  p.padding = 0;
  p.use_bias = true;
  p.weights = oracle::random_tensor({2, 1, 3, 3}, rng);
  p.bias = oracle::random_tensor({2}, rng);
  Tensor x = oracle::random_tensor({1, 1, 6, 6}, rng);

  WeightedLoss loss_fn({1, 2, 4, 4}, rng);
  auto loss = [&] { return loss_fn(relu_forward(conv2d_forward(x, p))); };

  const Tensor pre = conv2d_forward(x, p);
  const Tensor grad_pre = relu_backward(pre, loss_fn.weights);
  const ConvGrads g = conv2d_backward(x, p, grad_pre);

  expect_grad_matches(x, g.grad_x, loss);
  expect_grad_matches(p.weights, g.grad_w, loss);
  expect_grad_matches(p.bias, g.grad_b, loss);
}
