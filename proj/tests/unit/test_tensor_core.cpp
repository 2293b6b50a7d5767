#include <gtest/gtest.h>

#include <cmath>

#include "rdns/binary_io.hpp"
#include "rdns/errors.hpp"
#include "rdns/gradcheck.hpp"
#include "rdns/rng.hpp"
#include "rdns/tensor.hpp"

using namespace rdns;

namespace {

Tensor seeded(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  return uniform_tensor(s, rng);
}

}  // namespace

TEST(Tensor, ConstructionEnforcesLength) {
  EXPECT_EQ(Tensor({2, 3, 4, 5}).size(), 120u);
  EXPECT_THROW(Tensor({1, 1, 2, 2}, std::vector<double>(3)), ShapeError);
}

TEST(ConcatChannels, SinglePartIsIdentity) {
  const Tensor a = seeded({1, 3, 4, 4}, 1);
  EXPECT_EQ(concat_channels(std::vector<Tensor>{a}), a);
}

TEST(ConcatChannels, ExtentsAdd) {
  const std::vector<Tensor> parts{Tensor({1, 2, 2, 2}), Tensor({1, 3, 2, 2})};
  EXPECT_EQ(concat_channels(parts).shape(), (Shape{1, 5, 2, 2}));
}

TEST(ConcatChannels, BandsMatchIndexMap) {
  const std::vector<Tensor> parts{Tensor({1, 1, 2, 2}, 1.0), Tensor({1, 1, 2, 2}, 2.0)};
  const Tensor t = concat_channels(parts);
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t w = 0; w < 2; ++w) {
      EXPECT_EQ(t.at(0, 0, h, w), 1.0);
      EXPECT_EQ(t.at(0, 1, h, w), 2.0);
    }
  }
}

TEST(ConcatChannels, SeededPartsFollowIndexMap) {
  const std::vector<Tensor> parts{seeded({2, 2, 3, 3}, 2), seeded({2, 1, 3, 3}, 3),
                                  seeded({2, 4, 3, 3}, 4)};
  const Tensor t = concat_channels(parts);
  std::size_t base = 0;
  for (const Tensor& p : parts) {
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t c = 0; c < p.shape().c; ++c) {
        for (std::size_t h = 0; h < 3; ++h) {
          for (std::size_t w = 0; w < 3; ++w) EXPECT_EQ(t.at(n, base + c, h, w), p.at(n, c, h, w));
        }
      }
    }
    base += p.shape().c;
  }
}

TEST(ConcatChannels, MismatchNamesPart) {
  const std::vector<Tensor> parts{Tensor({1, 1, 2, 2}), Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 2})};
  try {
    (void)concat_channels(parts);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
  EXPECT_THROW((void)concat_channels(std::vector<Tensor>{}), ShapeError);
}

TEST(ConcatBatch, StacksAlongN) {
  const std::vector<Tensor> parts{seeded({1, 2, 3, 3}, 5), seeded({2, 2, 3, 3}, 6)};
  const Tensor t = concat_batch(parts);
  EXPECT_EQ(t.shape(), (Shape{3, 2, 3, 3}));
  EXPECT_EQ(t.at(2, 1, 2, 2), parts[1].at(1, 1, 2, 2));
  EXPECT_THROW((void)concat_batch(std::vector<Tensor>{Tensor({1, 2, 3, 3}), Tensor({1, 1, 3, 3})}),
               ShapeError);
}

TEST(SplitChannels, ShapesAndIdentity) {
  const Tensor t = seeded({1, 5, 2, 2}, 7);
  const std::vector<std::size_t> bands{2, 3};
  const auto parts = split_channels(t, bands);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0].shape(), (Shape{1, 2, 2, 2}));
  EXPECT_EQ(parts[1].shape(), (Shape{1, 3, 2, 2}));
  const std::vector<std::size_t> whole{5};
  EXPECT_EQ(split_channels(t, whole).front(), t);
  const std::vector<std::size_t> bad{2, 2};
  EXPECT_THROW((void)split_channels(t, bad), ShapeError);
}

TEST(SplitChannels, RoundTripIsBitExactOverSeeds) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    std::vector<std::size_t> bands;
    std::size_t c = 0;
    for (std::size_t i = 0, k = 1 + rng.below(4); i < k; ++i) {
      bands.push_back(1 + rng.below(3));
      c += bands.back();
    }
    const Tensor t = uniform_tensor({1 + rng.below(3), c, 1 + rng.below(4), 1 + rng.below(4)}, rng);
    EXPECT_EQ(concat_channels(split_channels(t, bands)), t);
  }
}

TEST(Reduce, Basics) {
  EXPECT_EQ(reduce(Tensor({1, 1, 2, 2}, 1.0), ReduceKind::Sum, Axes::all())[0], 4.0);
  EXPECT_NEAR(reduce(Tensor({2, 3, 2, 2}, 0.7), ReduceKind::Mean, Axes::all())[0], 0.7, 1e-15);
  EXPECT_THROW((void)reduce(Tensor({1, 1, 2, 2}), ReduceKind::Sum, Axes()), ShapeError);
  EXPECT_THROW((void)reduce(Tensor({0, 1, 2, 2}), ReduceKind::Max, Axis::H), DomainError);
}

TEST(Reduce, MaxOverSpatialMatchesScan) {
  const Tensor t = seeded({2, 3, 4, 5}, 11);
  const Tensor m = reduce(t, ReduceKind::Max, Axis::H | Axis::W);
  ASSERT_EQ(m.shape(), (Shape{2, 3, 1, 1}));
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t c = 0; c < 3; ++c) {
      double best = -1e300;
      for (std::size_t h = 0; h < 4; ++h) {
        for (std::size_t w = 0; w < 5; ++w) best = std::max(best, t.at(n, c, h, w));
      }
      EXPECT_EQ(m.at(n, c, 0, 0), best);
    }
  }
}

TEST(Reduce, SumIsAssociativeOverChannelBands) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor t = seeded({2, 6, 3, 3}, 100 + seed);
    const std::vector<std::size_t> bands{1, 2, 3};
    double parts = 0.0;
    for (const Tensor& p : split_channels(t, bands)) parts += reduce(p, ReduceKind::Sum, Axes::all())[0];
    const double whole = reduce(t, ReduceKind::Sum, Axes::all())[0];
    EXPECT_LE(std::abs(parts - whole), 1e-12 * std::max(1.0, std::abs(whole)));
  }
}

TEST(FiniteDifference, SumGivesOnes) {
  const Tensor x = seeded({1, 2, 2, 2}, 3);
  const Tensor g = finite_difference_gradient(
      [](const Tensor& t) { return reduce(t, ReduceKind::Sum, Axes::all())[0]; }, x);
  for (double v : g.data()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(FiniteDifference, HalfSquaredNormGivesX) {
  const Tensor x = seeded({1, 2, 3, 3}, 4);
  const Tensor g = finite_difference_gradient([](const Tensor& t) { return 0.5 * dot(t, t); }, x, 1e-4);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g[i], x[i], 1e-6);
}

TEST(FiniteDifference, SinGivesCos) {
  const Tensor x = seeded({1, 1, 4, 4}, 5);
  const Tensor g = finite_difference_gradient(
      [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.data()) s += std::sin(v);
        return s;
      },
      x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g[i], std::cos(x[i]), 1e-6);
}

TEST(FiniteDifference, LinearFunctionalIsExact) {
  const Tensor coeff = seeded({1, 3, 2, 2}, 6);
  const Tensor x = seeded({1, 3, 2, 2}, 7);
  const Tensor g = finite_difference_gradient([&](const Tensor& t) { return dot(coeff, t); }, x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g[i], coeff[i], 1e-9);
}

TEST(FiniteDifference, NonFiniteEvaluationIsNumericError) {
  const Tensor x({1, 1, 1, 2}, 0.0);
  EXPECT_THROW((void)finite_difference_gradient(
                   [](const Tensor& t) { return std::log(t[0]); }, x),
               NumericError);
}

TEST(BinaryIo, TensorRecordLayout) {
  const Tensor t({1, 1, 1, 2}, std::vector<double>{1.0, -2.5});
  const std::string bytes = serialize_tensor(t);
  ASSERT_EQ(bytes.size(), 4 * 8 + 2 * 8u);
  // Little-endian extents: the fourth u64 is W = 2.
  EXPECT_EQ(static_cast<unsigned char>(bytes[24]), 2u);
  for (int i = 25; i < 32; ++i) EXPECT_EQ(bytes[i], 0);
  // 1.0 is 0x3FF0000000000000; its top byte comes last.
  EXPECT_EQ(static_cast<unsigned char>(bytes[39]), 0x3Fu);
  EXPECT_EQ(static_cast<unsigned char>(bytes[38]), 0xF0u);
  EXPECT_EQ(deserialize_tensor(bytes), t);
}

TEST(BinaryIo, TruncationReportsOffset) {
  const std::string bytes = serialize_tensor(seeded({1, 2, 2, 2}, 8));
  try {
    (void)deserialize_tensor(std::string_view(bytes).substr(0, bytes.size() - 3));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
}

TEST(BinaryIo, TensorListRoundTrip) {
  ByteWriter w;
  const std::vector<Tensor> ts{seeded({1, 1, 2, 3}, 1), Tensor(), seeded({2, 1, 1, 1}, 2)};
  w.tensor_list(ts);
  ByteReader r(w.buffer());
  EXPECT_EQ(r.tensor_list(), ts);
  EXPECT_TRUE(r.at_end());
}

TEST(Rng, ReproducibleAndDistinct) {
  Rng a(42);
  Rng b(42);
  Rng c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
}

TEST(Rng, SplitMixReferenceValue) {
  // First output of the SplitMix64 generator seeded with 0 is 0xE220A8397B1DCDAF.
  EXPECT_EQ(splitmix64(0), 0xE220A8397B1DCDAFull);
}

TEST(Rng, UniformAndBelowStayInRange) {
  Rng rng(9);
  double sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    ASSERT_LT(rng.below(7), 7u);
  }
  EXPECT_NEAR(sum / 10000.0, 0.5, 0.02);
}
