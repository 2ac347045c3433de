#include <gtest/gtest.h>

#include <cmath>

#include "dgdpo/common.hpp"
#include "dgdpo/metrics.hpp"

using namespace dgdpo;

TEST(Bleu, IdenticalIsExactlyOne) {
  TokenSeq cap{5, 6, 7, 8, 9};
  EXPECT_NEAR(bleu(cap, {cap}), 1.0, 1e-12);
  TokenSeq shorty{5};
  EXPECT_NEAR(bleu(shorty, {shorty}), 1.0, 1e-12);
}

TEST(Bleu, HandComputedShortCandidate) {
  // candidate length 2, reference length 8, one shared unigram:
  // p1 = 1/2, p2 = (0+1)/(1+1), p3 = p4 = (0+1)/(0+1) = 1; BP = exp(1 - 8/2)
  TokenSeq cand{5, 20};
  TokenSeq ref{5, 6, 7, 8, 9, 10, 11, 12};
  double expected = std::exp(-3.0) * std::pow(0.5 * 0.5, 0.25);
  EXPECT_NEAR(bleu(cand, {ref}), expected, 1e-12);
}

TEST(Bleu, HandComputedDisjointFloor) {
  // no shared unigrams: p1 = 1/3, p2 = 1/2, p3 = p4 = 1; BP = exp(1 - 3/2)
  TokenSeq cand{9, 10};
  TokenSeq ref{5, 6, 7};
  double expected = std::exp(-0.5) * std::pow((1.0 / 3.0) * 0.5, 0.25);
  EXPECT_NEAR(bleu(cand, {ref}), expected, 1e-12);
  EXPECT_GT(bleu(cand, {ref}), 0.0);
}

TEST(Bleu, PermutationSensitive) {
  TokenSeq ref{5, 6, 7, 8};
  TokenSeq reordered{8, 7, 6, 5};
  EXPECT_NEAR(bleu(ref, {ref}), 1.0, 1e-12);
  EXPECT_LT(bleu(reordered, {ref}), 1.0);
}

TEST(Bleu, BoundsOnRandomInputs) {
  Rng rng(404);
  for (int trial = 0; trial < 100; ++trial) {
    TokenSeq cand(1 + static_cast<size_t>(rng.uniform_int(0, 12)));
    TokenSeq ref(1 + static_cast<size_t>(rng.uniform_int(0, 12)));
    for (auto& t : cand) t = rng.uniform_int(5, 20);
    for (auto& t : ref) t = rng.uniform_int(5, 20);
    double b = bleu(cand, {ref});
    EXPECT_GT(b, 0.0);
    EXPECT_LE(b, 1.0);
  }
}

TEST(Bleu, MultiReferenceClippingAndErrors) {
  TokenSeq cand{5, 5, 6};
  TokenSeq r1{5, 6};
  TokenSeq r2{5, 5};
  // unigram matches: "5" clipped at max ref count 2, "6" at 1 -> p1 = 3/3
  double b = bleu(cand, {r1, r2});
  EXPECT_GT(b, 0.5);
  EXPECT_THROW(bleu({}, {r1}), std::invalid_argument);
  EXPECT_THROW(bleu(cand, {}), std::invalid_argument);
  EXPECT_THROW(bleu(cand, {TokenSeq{}}), std::invalid_argument);
}

TEST(SelfBleu, IdenticalSetIsOne) {
  TokenSeq cap{5, 6, 7};
  EXPECT_NEAR(self_bleu({cap, cap, cap}), 1.0, 1e-12);
}

TEST(SelfBleu, MatchesPerCaptionBleuMean) {
  std::vector<TokenSeq> caps{{5, 6, 7}, {5, 6, 8}, {9, 10, 11}};
  double expected = (bleu(caps[0], {caps[1], caps[2]}) + bleu(caps[1], {caps[0], caps[2]}) +
                     bleu(caps[2], {caps[0], caps[1]})) /
                    3.0;
  EXPECT_NEAR(self_bleu(caps), expected, 1e-12);
  EXPECT_THROW(self_bleu({caps[0]}), std::invalid_argument);
}

TEST(SelfBleu, DisjointPairHandFloor) {
  // two token-disjoint length-2 captions: symmetric; for each direction
  // p1 = 1/3, p2 = 1/2, p3 = p4 = 1, BP = 1 (equal lengths)
  std::vector<TokenSeq> caps{{5, 6}, {7, 8}};
  double one_direction = std::pow((1.0 / 3.0) * 0.5, 0.25);
  EXPECT_NEAR(self_bleu(caps), one_direction, 1e-12);
}

TEST(DistinctN, HandCountsAndBounds) {
  // "a b" and "a c": 3 unique unigrams over 4 total
  std::vector<TokenSeq> caps{{5, 6}, {5, 7}};
  EXPECT_NEAR(distinct_n(caps, 1), 0.75, 1e-12);

  EXPECT_DOUBLE_EQ(distinct_n({TokenSeq{5, 6, 7}}, 1), 1.0);

  // duplicating the whole set halves the unigram ratio
  std::vector<TokenSeq> dup{{5, 6, 7}, {5, 6, 7}};
  EXPECT_DOUBLE_EQ(distinct_n(dup, 1), 0.5);

  EXPECT_THROW(distinct_n(caps, 3), std::invalid_argument);
  EXPECT_THROW(distinct_n({}, 1), std::invalid_argument);
  // captions shorter than n contribute nothing; all-empty errors
  EXPECT_THROW(distinct_n({TokenSeq{5}}, 2), std::invalid_argument);
  EXPECT_NEAR(distinct_n({TokenSeq{5}, TokenSeq{6, 7}}, 2), 1.0, 1e-12);
}

TEST(DistinctN, DuplicateNeverIncreases) {
  Rng rng(808);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TokenSeq> caps;
    int n_caps = 2 + rng.uniform_int(0, 4);
    for (int i = 0; i < n_caps; ++i) {
      TokenSeq c(2 + static_cast<size_t>(rng.uniform_int(0, 6)));
      for (auto& t : c) t = rng.uniform_int(5, 15);
      caps.push_back(c);
    }
    for (int n = 1; n <= 2; ++n) {
      double before = distinct_n(caps, n);
      EXPECT_GT(before, 0.0);
      EXPECT_LE(before, 1.0);
      auto with_dup = caps;
      with_dup.push_back(caps[static_cast<size_t>(rng.uniform_int(0, n_caps))]);
      EXPECT_LE(distinct_n(with_dup, n), before + 1e-15);
    }
  }
}

TEST(Pearson, KnownValuesAndUndefined) {
  std::vector<double> x{0, 1, 0, 1};
  EXPECT_NEAR(pearson(x, x).value(), 1.0, 1e-12);
  std::vector<double> y{1, 0, 1, 0};
  EXPECT_NEAR(pearson(x, y).value(), -1.0, 1e-12);
  std::vector<double> flat{2, 2, 2, 2};
  EXPECT_FALSE(pearson(x, flat).has_value());
  EXPECT_FALSE(pearson(flat, x).has_value());
}

TEST(Pearson, MatchesTextbookRecomputation) {
  Rng rng(909);
  std::vector<double> x(50), y(50);
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.gaussian();
    y[i] = 0.4 * x[i] + rng.gaussian();
  }
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  long double n = static_cast<long double>(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += static_cast<long double>(x[i]) * x[i];
    syy += static_cast<long double>(y[i]) * y[i];
    sxy += static_cast<long double>(x[i]) * y[i];
  }
  long double num = n * sxy - sx * sy;
  long double den = sqrtl(n * sxx - sx * sx) * sqrtl(n * syy - sy * sy);
  EXPECT_NEAR(pearson(x, y).value(), static_cast<double>(num / den), 1e-12);
}
