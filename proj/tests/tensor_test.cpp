#include "glyphnet/tensor.hpp"

#include <gtest/gtest.h>

#include "glyphnet/errors.hpp"
#include "glyphnet/rng.hpp"
#include "oracle.hpp"

using namespace glyphnet;

TEST(Elementwise, AddAndSub) {
  const Tensor a({2}, {1.0, 2.0});
  const Tensor b({2}, {3.0, 4.0});
  const Tensor sum = elementwise(a, b, BinaryOp::add);
  EXPECT_EQ(sum[0], 4.0);
  EXPECT_EQ(sum[1], 6.0);

  const Tensor x({3, 3}, {1, -2, 3, 4, -5, 6, 7, 8, -9});
  const Tensor zero = elementwise(x, x, BinaryOp::sub);
  for (std::size_t i = 0; i < zero.size(); ++i) EXPECT_EQ(zero[i], 0.0);
}

TEST(Elementwise, MulMatchesScalarLoop) {
  Rng rng(42);
  const Tensor a = oracle::random_tensor({3, 3}, rng);
  const Tensor b = oracle::random_tensor({3, 3}, rng);
  const Tensor prod = elementwise(a, b, BinaryOp::mul);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_EQ(prod.at2(i, j), a.at2(i, j) * b.at2(i, j));
    }
  }
}

TEST(Elementwise, ShapeMismatchThrows) {
  const Tensor a({2, 2});
  const Tensor b({2, 3});
  EXPECT_THROW(elementwise(a, b, BinaryOp::add), ShapeMismatch);
}

TEST(Matmul, IdentityIsNeutral) {
  Rng rng(7);
  const Tensor a = oracle::random_tensor({3, 3}, rng);
  const Tensor out = matmul(Tensor::identity(3), a);
  EXPECT_EQ(out, a);
}

TEST(Matmul, HandExample) {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({2, 1}, {5, 6});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.at2(0, 0), 17.0);
  EXPECT_EQ(c.at2(1, 0), 39.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(3);
  const Tensor a = oracle::random_tensor({7, 5}, rng);
  const Tensor b = oracle::random_tensor({5, 4}, rng);
  const Tensor fast = matmul(a, b);
  const Tensor ref = oracle::matmul(a, b);
  for (std::size_t i = 0; i < fast.size(); ++i) {
    EXPECT_LE(oracle::rel_error(fast[i], ref[i], 1e-12), 1e-12);
  }
}

TEST(Matmul, InnerExtentMismatchThrows) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({4, 2})), ShapeMismatch);
}

TEST(Matmul, AssociativityWithinTolerance) {
  Rng rng(11);
  const Tensor a = oracle::random_tensor({4, 6}, rng);
  const Tensor b = oracle::random_tensor({6, 5}, rng);
  const Tensor c = oracle::random_tensor({5, 3}, rng);
  const Tensor left = matmul(matmul(a, b), c);
  const Tensor right = matmul(a, matmul(b, c));
  for (std::size_t i = 0; i < left.size(); ++i) {
    EXPECT_LE(oracle::rel_error(left[i], right[i], 1e-10), 1e-10);
  }
}

TEST(ConcatChannels, SinglePartIdentity) {
  Rng rng(5);
  const Tensor a = oracle::random_tensor({2, 3, 4, 4}, rng);
  EXPECT_EQ(concat_channels({a}), a);
}

TEST(ConcatChannels, SliceRecoversPartsBitExactly) {
  Rng rng(6);
  const Tensor a = oracle::random_tensor({1, 2, 2, 2}, rng);
  const Tensor b = oracle::random_tensor({1, 3, 2, 2}, rng);
  const Tensor cat = concat_channels({a, b});
  const std::vector<std::size_t> want{1, 5, 2, 2};
  EXPECT_EQ(cat.shape(), want);
  EXPECT_EQ(slice_channels(cat, 0, 2), a);
  EXPECT_EQ(slice_channels(cat, 2, 5), b);
}

TEST(ConcatChannels, DenseBlockChannelArithmetic) {
  // 4 growth-3 parts over a 16-channel input: 16 + 4*3 = 28 channels.
  Rng rng(8);
  std::vector<Tensor> parts;
  parts.push_back(oracle::random_tensor({1, 16, 4, 4}, rng));
  for (int i = 0; i < 4; ++i) parts.push_back(oracle::random_tensor({1, 3, 4, 4}, rng));
  const Tensor cat = concat_channels(parts);
  EXPECT_EQ(cat.extent(1), 28u);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    EXPECT_EQ(slice_channels(cat, off, off + p.extent(1)), p);
    off += p.extent(1);
  }
}

TEST(ConcatChannels, Errors) {
  EXPECT_THROW(concat_channels({}), EmptyInput);
  const Tensor a({1, 2, 2, 2});
  const Tensor b({1, 2, 3, 2});
  EXPECT_THROW(concat_channels({a, b}), ShapeMismatch);
}

TEST(Reduce, SumOverAllAxes) {
  const Tensor ones = Tensor::full({2, 3}, 1.0);
  const ReduceResult r = reduce(ones, {0, 1}, ReduceOp::sum);
  EXPECT_EQ(r.values.size(), 1u);
  EXPECT_EQ(r.values[0], 6.0);
}

TEST(Reduce, MeanOfConstantMap) {
  const Tensor x = Tensor::full({1, 1, 4, 4}, 2.5);
  const ReduceResult r = reduce(x, {2, 3}, ReduceOp::mean, /*keepdims=*/true);
  const std::vector<std::size_t> want{1, 1, 1, 1};
  EXPECT_EQ(r.values.shape(), want);
  EXPECT_EQ(r.values[0], 2.5);
}

TEST(Reduce, MaxTracksFirstRowMajorArgmax) {
  Rng rng(9);
  Tensor x = oracle::random_tensor({4, 4}, rng);
  x.at2(2, 1) = 5.0;  // unique maximum
  const ReduceResult r = reduce(x, {0, 1}, ReduceOp::max);
  EXPECT_EQ(r.values[0], 5.0);
  ASSERT_EQ(r.argmax.size(), 1u);
  // linear-scan reference
  std::size_t want = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (x[i] > x[want]) want = i;
  }
  EXPECT_EQ(r.argmax[0], want);
  EXPECT_EQ(r.argmax[0], 2u * 4u + 1u);

  // ties go to the first maximizer in row-major order
  const Tensor flat = Tensor::full({6}, 1.0);
  EXPECT_EQ(reduce(flat, {0}, ReduceOp::max).argmax[0], 0u);
}

TEST(Reduce, PartialAxes) {
  const Tensor x({2, 2}, {1, 2, 3, 4});
  const ReduceResult rows = reduce(x, {1}, ReduceOp::sum);
  const std::vector<std::size_t> want{2};
  EXPECT_EQ(rows.values.shape(), want);
  EXPECT_EQ(rows.values[0], 3.0);
  EXPECT_EQ(rows.values[1], 7.0);
}

TEST(Reduce, InvalidAxisThrows) {
  const Tensor x({2, 2});
  EXPECT_THROW(reduce(x, {2}, ReduceOp::sum), InvalidAxis);
  EXPECT_THROW(reduce(x, {0, 0}, ReduceOp::sum), InvalidAxis);
  EXPECT_THROW(reduce(x, {}, ReduceOp::sum), InvalidAxis);
}

TEST(Reshape, RoundTripIsBitIdentical) {
  Rng rng(10);
  const Tensor x = oracle::random_tensor({2, 3, 4}, rng);
  const Tensor back = x.reshape({4, 6}).reshape({2, 3, 4});
  EXPECT_EQ(back, x);
  EXPECT_THROW(x.reshape({5, 5}), ShapeMismatch);
}

TEST(Tensor, ShapeValidation) {
  EXPECT_THROW(Tensor({0, 2}), ShapeMismatch);
  EXPECT_THROW(Tensor({2}, {1.0, 2.0, 3.0}), ShapeMismatch);
  Shape4 bad{1, 0, 4, 4};
  EXPECT_THROW(bad.validate(), ShapeMismatch);
}

TEST(Tensor, DeterministicOps) {
  Rng rng1(77);
  Rng rng2(77);
  const Tensor a1 = oracle::random_tensor({6, 6}, rng1);
  const Tensor a2 = oracle::random_tensor({6, 6}, rng2);
  EXPECT_EQ(a1, a2);
  EXPECT_EQ(matmul(a1, a1), matmul(a2, a2));
}
