#pragma once

// Preference dataset construction: scoring sampled captions with the
// video-masked retrieval score, global ranking, and the three pairing
// strategies (every qualifying pair, top-half vs bottom-half, adjacent
// ranks). Local pairs compare captions of one video; cross pairs compare
// distinct video-caption pairs by global rank.

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "dgdpo/captioner.hpp"
#include "dgdpo/common.hpp"
#include "dgdpo/corpus.hpp"
#include "dgdpo/retriever.hpp"

namespace dgdpo {

struct ScoredCandidate {
  int video_id = 0;
  int sample_index = 0;
  TokenSeq tokens;
  double s_p = 0.0;
  int global_rank = 0;  // 1 = best
};

enum class PairKind { local, cross };
enum class PairStrategy { all_pairs, halves, adjacent };

inline std::string to_string(PairStrategy s) {
  switch (s) {
    case PairStrategy::all_pairs: return "all_pairs";
    case PairStrategy::halves: return "halves";
    case PairStrategy::adjacent: return "adjacent";
  }
  throw std::invalid_argument("unknown strategy");
}

inline PairStrategy strategy_from_string(const std::string& s) {
  if (s == "all_pairs") return PairStrategy::all_pairs;
  if (s == "halves") return PairStrategy::halves;
  if (s == "adjacent") return PairStrategy::adjacent;
  throw std::invalid_argument("unknown strategy: " + s);
}

struct PreferencePair {
  int chosen_video = 0;
  int chosen_sample = 0;
  int rejected_video = 0;
  int rejected_sample = 0;
  PairKind kind = PairKind::local;
  double weight = 1.0;  // lambda for this pair's kind
  double s_p_chosen = 0.0;
  double s_p_rejected = 0.0;
};

struct PreferenceDataset {
  std::vector<PreferencePair> pairs;
  double gamma = 0.0;
  std::string strategy;  // "sg", "all_pairs", "halves", "adjacent"
  std::string retriever_id;
  std::string caption_dump_id;
};

// Keyed access to caption dump records.
class CaptionPool {
 public:
  explicit CaptionPool(std::vector<CaptionRecord> records) : records_(std::move(records)) {
    for (size_t i = 0; i < records_.size(); ++i)
      index_[{records_[i].video_id, records_[i].sample_index}] = i;
  }

  const CaptionRecord& at(int video_id, int sample_index) const {
    auto it = index_.find({video_id, sample_index});
    require(it != index_.end(), "CaptionPool: missing caption record");
    return records_[it->second];
  }

  const std::vector<CaptionRecord>& records() const { return records_; }

  std::map<int, int> samples_per_video() const {
    std::map<int, int> counts;
    for (const auto& r : records_) ++counts[r.video_id];
    return counts;
  }

 private:
  std::vector<CaptionRecord> records_;
  std::map<std::pair<int, int>, size_t> index_;
};

// Descending s_p, ties broken by (video_id, sample_index) ascending.
inline void assign_global_ranks(std::vector<ScoredCandidate>& pool) {
  std::vector<size_t> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (pool[a].s_p != pool[b].s_p) return pool[a].s_p > pool[b].s_p;
    if (pool[a].video_id != pool[b].video_id) return pool[a].video_id < pool[b].video_id;
    return pool[a].sample_index < pool[b].sample_index;
  });
  for (size_t rank = 0; rank < order.size(); ++rank)
    pool[order[rank]].global_rank = static_cast<int>(rank) + 1;
}

// Scores every dump record with the masked preference score and assigns
// global ranks.
inline std::vector<ScoredCandidate> score_pool(const RetrieverModel& m,
                                               const RetrievalDataset& ds,
                                               const CaptionPool& pool, bool use_roles = true,
                                               bool masked = true) {
  for (const auto& [vid, count] : pool.samples_per_video()) {
    require(count >= 2, "score_pool: each video needs K >= 2 sampled captions");
    require(vid >= 0 && vid < static_cast<int>(ds.videos.size()),
            "score_pool: caption references unknown video");
  }
  std::vector<ScoredCandidate> out;
  for (const auto& r : pool.records()) {
    ScoredCandidate c;
    c.video_id = r.video_id;
    c.sample_index = r.sample_index;
    c.tokens = r.tokens;
    c.s_p = preference_score(m, ds.videos[static_cast<size_t>(r.video_id)], r.tokens,
                             ds.queries[static_cast<size_t>(r.video_id)].tokens, use_roles,
                             masked);
    out.push_back(std::move(c));
  }
  assign_global_ranks(out);
  return out;
}

namespace detail {

inline PreferencePair make_pair(const ScoredCandidate& w, const ScoredCandidate& l,
                                double lambda_cross) {
  PreferencePair p;
  p.chosen_video = w.video_id;
  p.chosen_sample = w.sample_index;
  p.rejected_video = l.video_id;
  p.rejected_sample = l.sample_index;
  p.kind = (w.video_id == l.video_id) ? PairKind::local : PairKind::cross;
  p.weight = (p.kind == PairKind::cross) ? lambda_cross : 1.0 - lambda_cross;
  p.s_p_chosen = w.s_p;
  p.s_p_rejected = l.s_p;
  return p;
}

inline std::vector<const ScoredCandidate*> by_rank(const std::vector<ScoredCandidate>& pool) {
  std::vector<const ScoredCandidate*> ranked(pool.size());
  for (const auto& c : pool) {
    require(c.global_rank >= 1 && c.global_rank <= static_cast<int>(pool.size()),
            "pairing: global_rank is not a permutation");
    ranked[static_cast<size_t>(c.global_rank - 1)] = &c;
  }
  return ranked;
}

}  // namespace detail

// Within-video pairs only: every ordered (winner, loser) with
// s_p(w) > s_p(l) + gamma.
inline PreferenceDataset build_sg_pairs(const std::vector<ScoredCandidate>& pool, double gamma,
                                        double lambda_cross = 0.0) {
  require(gamma >= 0.0, "build_sg_pairs: gamma must be >= 0");
  PreferenceDataset out;
  out.gamma = gamma;
  out.strategy = "sg";
  for (const auto& w : pool)
    for (const auto& l : pool) {
      if (w.video_id != l.video_id || w.sample_index == l.sample_index) continue;
      if (w.s_p > l.s_p + gamma) out.pairs.push_back(detail::make_pair(w, l, lambda_cross));
    }
  return out;
}

inline PreferenceDataset build_dg_pairs(const std::vector<ScoredCandidate>& pool, double gamma,
                                        PairStrategy strategy, double lambda_cross = 0.3) {
  require(gamma >= 0.0, "build_dg_pairs: gamma must be >= 0");
  PreferenceDataset out;
  out.gamma = gamma;
  out.strategy = to_string(strategy);
  if (strategy == PairStrategy::all_pairs) {
    for (const auto& w : pool)
      for (const auto& l : pool) {
        if (&w == &l) continue;
        if (w.s_p > l.s_p + gamma) out.pairs.push_back(detail::make_pair(w, l, lambda_cross));
      }
    return out;
  }
  auto ranked = detail::by_rank(pool);
  size_t half = ranked.size() / 2;
  if (strategy == PairStrategy::halves) {
    // rank r is chosen against rank r + n/2; the last candidate of an odd
    // pool is dropped
    for (size_t r = 0; r < half; ++r) {
      const auto& w = *ranked[r];
      const auto& l = *ranked[r + half];
      if (w.s_p > l.s_p + gamma) out.pairs.push_back(detail::make_pair(w, l, lambda_cross));
    }
  } else {  // adjacent
    for (size_t mpair = 0; mpair < half; ++mpair) {
      const auto& w = *ranked[2 * mpair];
      const auto& l = *ranked[2 * mpair + 1];
      if (w.s_p > l.s_p + gamma) out.pairs.push_back(detail::make_pair(w, l, lambda_cross));
    }
  }
  return out;
}

// Shards the ranked pool into deterministic groups of `shard_size` (a
// seeded shuffle of candidates) and applies the DG strategy within each
// shard, using the pool-wide global ranks for ordering. This mirrors pair
// construction over batches aggregated across workers.
inline PreferenceDataset build_dg_pairs_sharded(const std::vector<ScoredCandidate>& pool,
                                                double gamma, PairStrategy strategy,
                                                double lambda_cross, int shard_size,
                                                uint64_t seed) {
  require(shard_size >= 2, "build_dg_pairs_sharded: shard_size must be >= 2");
  std::vector<size_t> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x5A4D));
  rng.shuffle(order);
  PreferenceDataset out;
  out.gamma = gamma;
  out.strategy = to_string(strategy);
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(shard_size)) {
    size_t end = std::min(order.size(), start + static_cast<size_t>(shard_size));
    if (end - start < 2) break;
    std::vector<ScoredCandidate> shard;
    for (size_t i = start; i < end; ++i) shard.push_back(pool[order[i]]);
    // ranks within the shard follow the pool-wide global ranks
    std::sort(shard.begin(), shard.end(), [](const ScoredCandidate& a,
                                             const ScoredCandidate& b) {
      return a.global_rank < b.global_rank;
    });
    for (size_t i = 0; i < shard.size(); ++i)
      shard[i].global_rank = static_cast<int>(i) + 1;
    PreferenceDataset part = build_dg_pairs(shard, gamma, strategy, lambda_cross);
    out.pairs.insert(out.pairs.end(), part.pairs.begin(), part.pairs.end());
  }
  return out;
}

// Union of two pair sets with duplicate (chosen, rejected) pairs removed;
// the first set wins on conflicts.
inline PreferenceDataset merge_preference_sets(const PreferenceDataset& a,
                                               const PreferenceDataset& b) {
  PreferenceDataset out = a;
  out.strategy = a.strategy + "+" + b.strategy;
  std::set<std::tuple<int, int, int, int>> seen;
  for (const auto& pr : a.pairs)
    seen.insert({pr.chosen_video, pr.chosen_sample, pr.rejected_video, pr.rejected_sample});
  for (const auto& pr : b.pairs)
    if (seen.insert({pr.chosen_video, pr.chosen_sample, pr.rejected_video, pr.rejected_sample})
            .second)
      out.pairs.push_back(pr);
  return out;
}

struct PairBatch {
  std::vector<PreferencePair> pairs;
  // distinct (video_id, sample_index) touched by the batch; log-probs are
  // computed once per entry and shared across pairs
  std::vector<std::pair<int, int>> unique_samples;
};

inline std::vector<PairBatch> pair_batches(const std::vector<PreferencePair>& pairs,
                                           int batch_size, uint64_t seed) {
  require(batch_size >= 1, "pair_batches: batch_size must be >= 1");
  require(!pairs.empty(), "pair_batches: empty pair set");
  std::vector<PreferencePair> shuffled = pairs;
  Rng rng(derive_seed(seed, 0xBA7C));
  rng.shuffle(shuffled);
  std::vector<PairBatch> batches;
  for (size_t start = 0; start < shuffled.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(shuffled.size(), start + static_cast<size_t>(batch_size));
    PairBatch b;
    b.pairs.assign(shuffled.begin() + static_cast<long>(start),
                   shuffled.begin() + static_cast<long>(end));
    std::set<std::pair<int, int>> uniq;
    for (const auto& p : b.pairs) {
      uniq.insert({p.chosen_video, p.chosen_sample});
      uniq.insert({p.rejected_video, p.rejected_sample});
    }
    b.unique_samples.assign(uniq.begin(), uniq.end());
    batches.push_back(std::move(b));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Preference dump: JSON Lines.

inline void write_preference_dump(const PreferenceDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_preference_dump: cannot open " + path);
  for (const auto& p : ds.pairs) {
    nlohmann::json j{
        {"chosen", {{"video_id", p.chosen_video}, {"k", p.chosen_sample}}},
        {"rejected", {{"video_id", p.rejected_video}, {"k", p.rejected_sample}}},
        {"kind", p.kind == PairKind::local ? "local" : "cross"},
        {"lambda", p.weight},
        {"s_p_chosen", p.s_p_chosen},
        {"s_p_rejected", p.s_p_rejected},
        {"gamma", ds.gamma},
        {"strategy", ds.strategy}};
    out << j.dump() << "\n";
  }
}

inline PreferenceDataset read_preference_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_preference_dump: cannot open " + path);
  PreferenceDataset ds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    PreferencePair p;
    p.chosen_video = j.at("chosen").at("video_id").get<int>();
    p.chosen_sample = j.at("chosen").at("k").get<int>();
    p.rejected_video = j.at("rejected").at("video_id").get<int>();
    p.rejected_sample = j.at("rejected").at("k").get<int>();
    p.kind = j.at("kind").get<std::string>() == "local" ? PairKind::local : PairKind::cross;
    p.weight = j.at("lambda").get<double>();
    p.s_p_chosen = j.at("s_p_chosen").get<double>();
    p.s_p_rejected = j.at("s_p_rejected").get<double>();
    ds.gamma = j.at("gamma").get<double>();
    ds.strategy = j.at("strategy").get<std::string>();
    ds.pairs.push_back(p);
  }
  return ds;
}

}  // namespace dgdpo
