#pragma once

// Caption-quality metrics over token sequences: BLEU-4 with add-one
// smoothing, Self-BLEU, Distinct-n, and Pearson correlation.

#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "dgdpo/common.hpp"

namespace dgdpo {

namespace detail {

inline std::map<std::vector<int>, int> ngram_counts(const TokenSeq& seq, int n) {
  std::map<std::vector<int>, int> counts;
  if (static_cast<int>(seq.size()) < n) return counts;
  for (size_t i = 0; i + static_cast<size_t>(n) <= seq.size(); ++i) {
    std::vector<int> key(seq.begin() + static_cast<long>(i),
                         seq.begin() + static_cast<long>(i + static_cast<size_t>(n)));
    ++counts[key];
  }
  return counts;
}

}  // namespace detail

// BLEU-4: geometric mean of modified n-gram precisions (n = 1..4) with
// add-one smoothing whenever the raw match count is zero, times the brevity
// penalty min(1, exp(1 - r/c)) with r the closest reference length.
inline double bleu(const TokenSeq& candidate, const std::vector<TokenSeq>& references) {
  require(!candidate.empty(), "bleu: empty candidate");
  require(!references.empty(), "bleu: no references");
  for (const auto& r : references) require(!r.empty(), "bleu: empty reference");

  double log_prec_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    auto cand_counts = detail::ngram_counts(candidate, n);
    long total = 0, match = 0;
    for (const auto& [key, count] : cand_counts) {
      total += count;
      int best_ref = 0;
      for (const auto& ref : references) {
        auto rc = detail::ngram_counts(ref, n);
        auto it = rc.find(key);
        if (it != rc.end() && it->second > best_ref) best_ref = it->second;
      }
      match += std::min(count, best_ref);
    }
    double p;
    if (match == 0)
      p = static_cast<double>(match + 1) / static_cast<double>(total + 1);
    else
      p = static_cast<double>(match) / static_cast<double>(total);
    log_prec_sum += 0.25 * std::log(p);
  }

  size_t c = candidate.size();
  size_t r = references[0].size();
  for (const auto& ref : references) {
    size_t diff_cur = r > c ? r - c : c - r;
    size_t diff_new = ref.size() > c ? ref.size() - c : c - ref.size();
    if (diff_new < diff_cur || (diff_new == diff_cur && ref.size() < r)) r = ref.size();
  }
  double bp = c >= r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return bp * std::exp(log_prec_sum);
}

// Mean BLEU of each caption against all the others; high values mean the set
// is redundant.
inline double self_bleu(const std::vector<TokenSeq>& captions) {
  require(captions.size() >= 2, "self_bleu: need at least 2 captions");
  double total = 0.0;
  for (size_t i = 0; i < captions.size(); ++i) {
    std::vector<TokenSeq> refs;
    for (size_t j = 0; j < captions.size(); ++j)
      if (j != i) refs.push_back(captions[j]);
    total += bleu(captions[i], refs);
  }
  return total / static_cast<double>(captions.size());
}

// Unique n-grams over total n-grams across the caption set.
inline double distinct_n(const std::vector<TokenSeq>& captions, int n) {
  require(n == 1 || n == 2, "distinct_n: n must be 1 or 2");
  require(!captions.empty(), "distinct_n: empty caption set");
  std::map<std::vector<int>, int> uniq;
  long total = 0;
  for (const auto& cap : captions) {
    auto counts = detail::ngram_counts(cap, n);
    for (const auto& [key, count] : counts) {
      uniq[key] += count;
      total += count;
    }
  }
  require(total > 0, "distinct_n: no n-grams in caption set");
  return static_cast<double>(uniq.size()) / static_cast<double>(total);
}

// Pearson correlation; std::nullopt when either sequence has zero variance.
inline std::optional<double> pearson(const std::vector<double>& x,
                                     const std::vector<double>& y) {
  require(x.size() == y.size(), "pearson: length mismatch");
  require(x.size() >= 2, "pearson: need at least 2 points");
  double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace dgdpo
