#pragma once

// Retrieval evaluation: two-stage retrieve-then-rerank with score fusion,
// Recall@K for both directions, caption probes, the hard-similarity subset,
// confidence, diversity, and the BLEU-vs-retrieval top-1 index correlation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgdpo/common.hpp"
#include "dgdpo/corpus.hpp"
#include "dgdpo/encoder.hpp"
#include "dgdpo/metrics.hpp"
#include "dgdpo/preference.hpp"
#include "dgdpo/retriever.hpp"

namespace dgdpo {

struct ScoreMatrix {
  size_t rows = 0, cols = 0;
  std::vector<double> data;

  ScoreMatrix() = default;
  ScoreMatrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& at(size_t r, size_t c) { return data[r * cols + c]; }
  double at(size_t r, size_t c) const { return data[r * cols + c]; }
};

inline ScoreMatrix transposed(const ScoreMatrix& m) {
  ScoreMatrix out(m.cols, m.rows);
  for (size_t r = 0; r < m.rows; ++r)
    for (size_t c = 0; c < m.cols; ++c) out.at(c, r) = m.at(r, c);
  return out;
}

// Cosine similarities between every query and every video under the trained
// dual encoder; rows are queries, columns are videos.
inline ScoreMatrix first_stage_scores(const DualEncoder& enc, const RetrievalDataset& ds) {
  require(!ds.videos.empty(), "first_stage_scores: empty dataset");
  if (!enc.trained) throw std::runtime_error("first_stage_scores: encoder is untrained");
  size_t n = ds.videos.size();
  std::vector<std::vector<double>> t_emb(n), v_emb(n);
  for (size_t i = 0; i < n; ++i) {
    t_emb[i] = encode_text(enc, ds.queries[i].tokens);
    v_emb[i] = encode_video(enc, ds.videos[i]);
  }
  ScoreMatrix out(n, n);
  for (size_t q = 0; q < n; ++q)
    for (size_t c = 0; c < n; ++c) {
      double dot = 0.0;
      for (size_t k = 0; k < t_emb[q].size(); ++k) dot += t_emb[q][k] * v_emb[c][k];
      out.at(q, c) = dot;
    }
  return out;
}

// Top-k column indices of one row, score descending with id-ascending ties.
inline std::vector<size_t> topk_indices(const ScoreMatrix& m, size_t row, size_t k) {
  std::vector<size_t> idx(m.cols);
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (m.at(row, a) != m.at(row, b)) return m.at(row, a) > m.at(row, b);
    return a < b;
  });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

// Fuses reranker scores with first-stage scores over the top-k survivors:
// fused = rerank + alpha * first_stage. Non-survivors rank strictly below
// every survivor, ordered among themselves by first-stage score.
inline ScoreMatrix rerank_fused(const ScoreMatrix& fs, size_t topk, double alpha,
                                const std::function<double(size_t, size_t)>& rerank_score) {
  require(alpha >= 0.0, "rerank_fused: alpha must be >= 0");
  ScoreMatrix out(fs.rows, fs.cols);
  for (size_t q = 0; q < fs.rows; ++q) {
    std::vector<size_t> survivors = topk_indices(fs, q, topk);
    std::vector<char> is_survivor(fs.cols, 0);
    double min_fused = 0.0;
    bool first = true;
    for (size_t c : survivors) {
      double fused = rerank_score(q, c) + alpha * fs.at(q, c);
      require_finite(fused, "rerank_fused score");
      out.at(q, c) = fused;
      is_survivor[c] = 1;
      if (first || fused < min_fused) min_fused = fused;
      first = false;
    }
    // first-stage cosines live in [-1, 1]; this keeps non-survivors below
    for (size_t c = 0; c < fs.cols; ++c)
      if (!is_survivor[c]) out.at(q, c) = min_fused - 2.0 + (fs.at(q, c) - 1.0);
  }
  return out;
}

enum class Direction { T2V, V2T };

struct TwoStageConfig {
  size_t topk = 16;
  double alpha = 0.5;
  ScoreVariant variant = ScoreVariant::contrastive;
  bool use_roles = true;
};

// Full two-stage protocol over a test split. `captions` holds the auxiliary
// caption attached to each video (indexed by video id).
inline ScoreMatrix two_stage_matrix(const RetrieverModel& m, const DualEncoder& enc,
                                    const RetrievalDataset& ds,
                                    const std::vector<TokenSeq>& captions, Direction dir,
                                    const TwoStageConfig& cfg) {
  require(captions.size() == ds.videos.size(), "two_stage_matrix: caption/candidate mismatch");
  ScoreMatrix fs = first_stage_scores(enc, ds);
  if (dir == Direction::T2V) {
    auto score = [&](size_t q, size_t cand) {
      TripletInput in;
      in.video = &ds.videos[cand];
      in.caption = &captions[cand];
      in.query = &ds.queries[q].tokens;
      in.use_roles = cfg.use_roles;
      return relevance_score(m, in, cfg.variant);
    };
    return rerank_fused(fs, cfg.topk, cfg.alpha, score);
  }
  ScoreMatrix fs_t = transposed(fs);
  auto score = [&](size_t vid, size_t cand) {
    TripletInput in;
    in.video = &ds.videos[vid];
    in.caption = &captions[vid];
    in.query = &ds.queries[cand].tokens;
    in.use_roles = cfg.use_roles;
    return relevance_score(m, in, cfg.variant);
  };
  return rerank_fused(fs_t, cfg.topk, cfg.alpha, score);
}

// Fraction of rows whose ground-truth column lands in the top k, ties broken
// by candidate id ascending.
inline double recall_at_k(const ScoreMatrix& m, const std::vector<int>& ground_truth,
                          size_t k) {
  require(ground_truth.size() == m.rows, "recall_at_k: ground truth size mismatch");
  require(k >= 1, "recall_at_k: k must be >= 1");
  size_t hits = 0;
  for (size_t q = 0; q < m.rows; ++q) {
    int gt = ground_truth[q];
    require(gt >= 0 && static_cast<size_t>(gt) < m.cols, "recall_at_k: missing ground truth");
    double gt_score = m.at(q, static_cast<size_t>(gt));
    size_t rank = 1;
    for (size_t c = 0; c < m.cols; ++c) {
      if (static_cast<int>(c) == gt) continue;
      if (m.at(q, c) > gt_score || (m.at(q, c) == gt_score && static_cast<int>(c) < gt)) ++rank;
    }
    if (rank <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(m.rows);
}

struct RecallReport {
  std::string direction;
  double r1 = 0.0, r5 = 0.0, r10 = 0.0;
  int n_queries = 0;
  int caption_samples_averaged = 1;
};

inline void to_json(nlohmann::json& j, const RecallReport& r) {
  j = nlohmann::json{{"direction", r.direction},
                     {"R@1", r.r1},
                     {"R@5", r.r5},
                     {"R@10", r.r10},
                     {"n", r.n_queries},
                     {"caption_samples_averaged", r.caption_samples_averaged}};
}

inline RecallReport make_recall_report(const ScoreMatrix& m, const std::vector<int>& gt,
                                       const std::string& direction) {
  RecallReport rep;
  rep.direction = direction;
  rep.r1 = recall_at_k(m, gt, 1);
  rep.r5 = recall_at_k(m, gt, 5);
  rep.r10 = recall_at_k(m, gt, 10);
  rep.n_queries = static_cast<int>(m.rows);
  require(rep.r1 <= rep.r5 && rep.r5 <= rep.r10, "recall report: R@K monotonicity violated");
  return rep;
}

// Videos having at least one other video whose frame-mean-pooled cosine
// similarity exceeds the threshold.
inline std::vector<int> hard_subset(const std::vector<SyntheticVideo>& videos,
                                    double threshold) {
  require(threshold > 0.0 && threshold <= 1.0, "hard_subset: threshold outside (0,1]");
  std::vector<std::vector<double>> pooled(videos.size());
  for (size_t i = 0; i < videos.size(); ++i) pooled[i] = pooled_frames(videos[i]);
  std::vector<int> out;
  for (size_t i = 0; i < videos.size(); ++i) {
    for (size_t j = 0; j < videos.size(); ++j) {
      if (i == j) continue;
      if (cosine(pooled[i], pooled[j]) > threshold) {
        out.push_back(static_cast<int>(i));
        break;
      }
    }
  }
  return out;
}

// Mean sigmoid of contrastive scores, scaled to a percentage.
inline double confidence(const std::vector<double>& scores) {
  require(!scores.empty(), "confidence: empty score list");
  double total = 0.0;
  for (double s : scores) {
    require_finite(s, "confidence score");
    total += sigmoid(s);
  }
  return 100.0 * total / static_cast<double>(scores.size());
}

namespace detail {

// Per video, the sample_index with the highest score (ties -> smaller index).
inline std::map<int, int> top1_indices(const std::vector<ScoredCandidate>& pool) {
  std::map<int, std::pair<double, int>> best;  // video -> (score, sample)
  for (const auto& c : pool) {
    auto it = best.find(c.video_id);
    if (it == best.end() || c.s_p > it->second.first ||
        (c.s_p == it->second.first && c.sample_index < it->second.second))
      best[c.video_id] = {c.s_p, c.sample_index};
  }
  std::map<int, int> out;
  for (const auto& [vid, pick] : best) out[vid] = pick.second;
  return out;
}

}  // namespace detail

// Pearson correlation between the top-1 sample indices under two scorings of
// the same candidate pool. std::nullopt when either index sequence has zero
// variance (the correlation is undefined, not zero).
inline std::optional<double> top1_correlation(const std::vector<ScoredCandidate>& pool_a,
                                              const std::vector<ScoredCandidate>& pool_b) {
  auto a = detail::top1_indices(pool_a);
  auto b = detail::top1_indices(pool_b);
  require(a.size() == b.size() && a.size() >= 2, "top1_correlation: need >= 2 videos");
  std::vector<double> xa, xb;
  for (const auto& [vid, idx] : a) {
    auto it = b.find(vid);
    require(it != b.end(), "top1_correlation: pools cover different videos");
    xa.push_back(static_cast<double>(idx));
    xb.push_back(static_cast<double>(it->second));
  }
  return pearson(xa, xb);
}

// Companion statistic: fraction of videos where the two scorings agree on
// the top-1 sample.
inline double top1_agreement(const std::vector<ScoredCandidate>& pool_a,
                             const std::vector<ScoredCandidate>& pool_b) {
  auto a = detail::top1_indices(pool_a);
  auto b = detail::top1_indices(pool_b);
  require(a.size() == b.size() && !a.empty(), "top1_agreement: pools cover different videos");
  size_t agree = 0;
  for (const auto& [vid, idx] : a)
    if (b.at(vid) == idx) ++agree;
  return static_cast<double>(agree) / static_cast<double>(a.size());
}

struct DiversityReport {
  double self_bleu = 0.0;
  double distinct_1 = 0.0;
  double distinct_2 = 0.0;
};

inline void to_json(nlohmann::json& j, const DiversityReport& r) {
  j = nlohmann::json{{"self_bleu", r.self_bleu},
                     {"distinct_1", r.distinct_1},
                     {"distinct_2", r.distinct_2}};
}

inline DiversityReport make_diversity_report(const std::vector<TokenSeq>& captions) {
  DiversityReport rep;
  rep.self_bleu = self_bleu(captions);
  rep.distinct_1 = distinct_n(captions, 1);
  rep.distinct_2 = distinct_n(captions, 2);
  return rep;
}

// ---------------------------------------------------------------------------
// Caption probes (text-to-caption and video-to-caption).

// T2C: rank candidate captions for each text query using the main model with
// video tokens masked. Candidate j's own video fills the (masked) video slot.
inline ScoreMatrix t2c_matrix(const RetrieverModel& m, const RetrievalDataset& ds,
                              const std::vector<TokenSeq>& captions, bool use_roles = true) {
  require(captions.size() == ds.videos.size(), "t2c_matrix: caption count mismatch");
  size_t n = ds.videos.size();
  ScoreMatrix out(n, n);
  for (size_t q = 0; q < n; ++q)
    for (size_t c = 0; c < n; ++c) {
      TripletInput in;
      in.video = &ds.videos[c];
      in.caption = &captions[c];
      in.query = &ds.queries[q].tokens;
      in.mask_video = true;
      in.use_roles = use_roles;
      out.at(q, c) = relevance_score(m, in, ScoreVariant::contrastive);
    }
  return out;
}

// V2C: rank candidate captions for each video using the model trained solely
// on (v, t) pairs, with captions scored in the query slot.
inline ScoreMatrix v2c_matrix(const RetrieverModel& vt_model, const RetrievalDataset& ds,
                              const std::vector<TokenSeq>& captions, bool use_roles = true) {
  require(captions.size() == ds.videos.size(), "v2c_matrix: caption count mismatch");
  size_t n = ds.videos.size();
  ScoreMatrix out(n, n);
  for (size_t v = 0; v < n; ++v)
    for (size_t c = 0; c < n; ++c) {
      TripletInput in;
      in.video = &ds.videos[v];
      in.caption = nullptr;
      in.query = &captions[c];
      in.use_roles = use_roles;
      out.at(v, c) = relevance_score(vt_model, in, ScoreVariant::contrastive);
    }
  return out;
}

}  // namespace dgdpo
