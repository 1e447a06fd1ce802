#include <gtest/gtest.h>

#include "hierbayes/rng.hpp"

using namespace hierbayes;

TEST(Rng, SameSpecSameSequence) {
  Rng a = make_rng({42, 3}), b = make_rng({42, 3});
  for (int k = 0; k < 100; ++k) EXPECT_EQ(a(), b());
}

TEST(Rng, DistinctStreamsDiffer) {
  Rng a = make_rng({42, 3}), b = make_rng({42, 4}), c = make_rng({43, 3});
  const auto x = a();
  EXPECT_NE(x, b());
  EXPECT_NE(x, c());
  EXPECT_NE(SeedSpec({1, 0}).child(0), SeedSpec({1, 0}).child(1));
  EXPECT_NE(SeedSpec({1, 0}).child(0), SeedSpec({1, 1}).child(0));
}

TEST(Rng, ChunkedReduceIgnoresThreadCount) {
  struct Acc {
    double sum = 0;
    std::size_t n = 0;
    void merge(const Acc& o) {
      sum += o.sum;
      n += o.n;
    }
  };
  auto run = [](unsigned threads) {
    return chunked_reduce<Acc>(100000, 1000, {9, 0}, threads, [](Rng& rng, std::size_t b, std::size_t e, Acc& a) {
      for (std::size_t i = b; i < e; ++i) {
        a.sum += standard_normal(rng);
        ++a.n;
      }
    });
  };
  const Acc one = run(1), four = run(4);
  EXPECT_EQ(one.n, 100000u);
  EXPECT_EQ(one.sum, four.sum);
}
