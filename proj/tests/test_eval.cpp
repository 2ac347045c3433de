#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "dgdpo/eval.hpp"

using namespace dgdpo;

namespace {

// stable argsort oracle: descending score, ascending id on ties
double oracle_recall(const ScoreMatrix& m, const std::vector<int>& gt, size_t k) {
  size_t hits = 0;
  for (size_t q = 0; q < m.rows; ++q) {
    std::vector<size_t> order(m.cols);
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (m.at(q, a) != m.at(q, b)) return m.at(q, a) > m.at(q, b);
      return a < b;
    });
    for (size_t pos = 0; pos < std::min(k, order.size()); ++pos)
      if (order[pos] == static_cast<size_t>(gt[q])) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / static_cast<double>(m.rows);
}

std::vector<ScoredCandidate> pool_from_scores(const std::vector<std::vector<double>>& scores) {
  std::vector<ScoredCandidate> pool;
  for (size_t v = 0; v < scores.size(); ++v)
    for (size_t k = 0; k < scores[v].size(); ++k) {
      ScoredCandidate c;
      c.video_id = static_cast<int>(v);
      c.sample_index = static_cast<int>(k);
      c.s_p = scores[v][k];
      pool.push_back(c);
    }
  assign_global_ranks(pool);
  return pool;
}

}  // namespace

TEST(FirstStage, CosineExtremesAndTrainedFlag) {
  DualEncoderConfig cfg;
  cfg.vocab_size = 8;
  cfg.embed_dim = 4;
  cfg.feature_dim = 4;
  DualEncoder enc = init_dual_encoder(cfg, 1);

  RetrievalDataset ds;
  ds.vocab_size = 8;
  SyntheticVideo v0;
  v0.video_id = 0;
  v0.frames = {{1, 0, 0, 0}};
  SyntheticVideo v1;
  v1.video_id = 1;
  v1.frames = {{0, 1, 0, 0}};
  ds.videos = {v0, v1};
  ds.queries = {{{5}, 0}, {{6}, 1}};
  ds.gt_captions = {{{5}, 0}, {{6}, 1}};

  EXPECT_THROW(first_stage_scores(enc, ds), std::runtime_error);

  // craft: token 5 -> e0, token 6 -> e1; projection = identity
  for (auto& t : enc.params.tensors()) std::fill(t.data.begin(), t.data.end(), 0.0);
  enc.params.at("txt_emb").at(5, 0) = 1.0;
  enc.params.at("txt_emb").at(6, 1) = 1.0;
  for (size_t d = 0; d < 4; ++d) enc.params.at("vid_proj").at(d, d) = 1.0;
  enc.trained = true;

  ScoreMatrix fs = first_stage_scores(enc, ds);
  EXPECT_NEAR(fs.at(0, 0), 1.0, 1e-9);   // identical embedding
  EXPECT_NEAR(fs.at(0, 1), 0.0, 1e-9);   // orthogonal
  EXPECT_NEAR(fs.at(1, 1), 1.0, 1e-9);
}

TEST(FirstStage, GradientMatchesFiniteDifferences) {
  CorpusConfig ccfg;
  ccfg.num_concepts = 4;
  ccfg.num_videos = 5;
  ccfg.concepts_per_video = 2;
  ccfg.feature_dim = 8;
  ccfg.vocab_size = 16;
  ccfg.similar_fraction = 0.0;
  RetrievalDataset ds = generate_corpus(ccfg, 12);
  DualEncoderConfig cfg;
  cfg.vocab_size = 16;
  cfg.embed_dim = 6;
  cfg.feature_dim = 8;
  DualEncoder enc = init_dual_encoder(cfg, 3);
  GradStore grads = enc.params.zeros_like();
  dual_encoder_loss(enc, ds, &grads);
  auto loss_fn = [&](const ParamStore& p) {
    DualEncoder probe{enc.cfg, p, false};
    return dual_encoder_loss(probe, ds, nullptr);
  };
  EXPECT_LE(grad_check(loss_fn, enc.params, grads, 1e-4), 1e-4);
}

TEST(Rerank, SurvivorTruncationAndBand) {
  // 1 query, 50 candidates with descending first-stage scores
  ScoreMatrix fs(1, 50);
  for (size_t c = 0; c < 50; ++c) fs.at(0, c) = 1.0 - static_cast<double>(c) * 0.02;
  auto survivors = topk_indices(fs, 0, 16);
  EXPECT_EQ(survivors.size(), 16u);

  auto rr = [](size_t, size_t cand) { return cand % 2 == 0 ? -1.0 : -2.0; };
  ScoreMatrix fused = rerank_fused(fs, 16, 0.0, rr);
  double min_survivor = fused.at(0, survivors[0]);
  for (size_t c : survivors) min_survivor = std::min(min_survivor, fused.at(0, c));
  for (size_t c = 16; c < 50; ++c) EXPECT_LT(fused.at(0, c), min_survivor);
  // non-survivors keep their first-stage order
  for (size_t c = 17; c < 50; ++c) EXPECT_LT(fused.at(0, c), fused.at(0, c - 1));
}

TEST(Rerank, AlphaZeroIgnoresFirstStageAmongSurvivors) {
  ScoreMatrix fs_a(1, 6), fs_b(1, 6);
  for (size_t c = 0; c < 6; ++c) {
    fs_a.at(0, c) = 1.0 - static_cast<double>(c) * 0.1;
    fs_b.at(0, c) = 0.9 - static_cast<double>(c) * 0.13;  // same top-4 set, different values
  }
  auto rr = [](size_t, size_t cand) { return std::sin(static_cast<double>(cand) * 1.7); };
  ScoreMatrix fused_a = rerank_fused(fs_a, 4, 0.0, rr);
  ScoreMatrix fused_b = rerank_fused(fs_b, 4, 0.0, rr);
  auto order_a = topk_indices(fused_a, 0, 4);
  auto order_b = topk_indices(fused_b, 0, 4);
  EXPECT_EQ(order_a, order_b);  // ranking among survivors is rerank-only

  // but the survivor set itself still follows the first stage
  ScoreMatrix fs_c = fs_a;
  fs_c.at(0, 5) = 2.0;  // promote candidate 5 into the top-4
  ScoreMatrix fused_c = rerank_fused(fs_c, 4, 0.0, rr);
  auto order_c = topk_indices(fused_c, 0, 6);
  EXPECT_TRUE(std::find(order_c.begin(), order_c.begin() + 4, 5u) != order_c.begin() + 4);
}

TEST(Rerank, DominanceLimitAndHandFusion) {
  ScoreMatrix fs(1, 3);
  fs.at(0, 0) = 0.9;
  fs.at(0, 1) = 0.5;
  fs.at(0, 2) = 0.1;
  std::vector<std::vector<double>> rr_table{{-3.0, -1.0, -2.0}};
  auto rr = [&](size_t q, size_t c) { return rr_table[q][c]; };

  // alpha -> infinity: first-stage order wins
  ScoreMatrix dom = rerank_fused(fs, 3, 1e6, rr);
  auto order = topk_indices(dom, 0, 3);
  EXPECT_EQ(order, (std::vector<size_t>{0, 1, 2}));

  // alpha = 1: hand arithmetic
  ScoreMatrix fused = rerank_fused(fs, 3, 1.0, rr);
  EXPECT_DOUBLE_EQ(fused.at(0, 0), -3.0 + 0.9);
  EXPECT_DOUBLE_EQ(fused.at(0, 1), -1.0 + 0.5);
  EXPECT_DOUBLE_EQ(fused.at(0, 2), -2.0 + 0.1);
  EXPECT_THROW(rerank_fused(fs, 3, -0.5, rr), std::invalid_argument);
}

TEST(Recall, DiagonalAndSaturation) {
  ScoreMatrix m(4, 4);
  for (size_t q = 0; q < 4; ++q)
    for (size_t c = 0; c < 4; ++c) m.at(q, c) = (q == c) ? 5.0 : 1.0;
  std::vector<int> gt{0, 1, 2, 3};
  EXPECT_DOUBLE_EQ(recall_at_k(m, gt, 1), 1.0);
  EXPECT_DOUBLE_EQ(recall_at_k(m, gt, 10), 1.0);
  std::vector<int> bad{0, 1, 2, 9};
  EXPECT_THROW(recall_at_k(m, bad, 1), std::invalid_argument);
}

TEST(Recall, MatchesBruteForceOnRandomMatrices) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    size_t n = 2 + static_cast<size_t>(rng.uniform_int(0, 63));
    ScoreMatrix m(n, n);
    for (auto& v : m.data) v = rng.uniform_int(0, 6) == 0 ? 0.5 : rng.gaussian();  // force ties
    std::vector<int> gt(n);
    for (auto& g : gt) g = rng.uniform_int(0, static_cast<int>(n));
    for (size_t k : {size_t{1}, size_t{5}, size_t{10}})
      EXPECT_DOUBLE_EQ(recall_at_k(m, gt, k), oracle_recall(m, gt, k)) << "n=" << n;
  }
}

TEST(HardSubset, DuplicatesAndOrthogonal) {
  SyntheticVideo a;
  a.frames = {{1, 0, 0}};
  SyntheticVideo dup = a;
  SyntheticVideo b;
  b.frames = {{0, 1, 0}};
  SyntheticVideo c;
  c.frames = {{0, 0, 1}};
  auto kept = hard_subset({a, dup, b}, 0.97);
  EXPECT_EQ(kept, (std::vector<int>{0, 1}));  // both copies retained
  EXPECT_TRUE(hard_subset({a, b, c}, 0.5).empty());
  EXPECT_THROW(hard_subset({a, b}, 0.0), std::invalid_argument);
}

TEST(HardSubset, SeparatesPairPopulationsOnCorpus) {
  CorpusConfig cfg;
  cfg.num_concepts = 48;
  cfg.vocab_size = 128;
  cfg.feature_dim = 64;
  cfg.num_videos = 16;
  cfg.noise_scale = 0.0;
  cfg.similar_fraction = 0.4;
  RetrievalDataset ds = generate_corpus(cfg, 3);
  ASSERT_EQ(ds.similar_pairs.size(), 6u);

  std::set<std::pair<int, int>> pairs;
  for (auto [x, y] : ds.similar_pairs) pairs.insert({std::min(x, y), std::max(x, y)});
  double min_intra = 1.0, max_inter = -1.0;
  for (int i = 0; i < 16; ++i)
    for (int j = i + 1; j < 16; ++j) {
      double cs = cosine(pooled_frames(ds.videos[static_cast<size_t>(i)]),
                         pooled_frames(ds.videos[static_cast<size_t>(j)]));
      if (pairs.count({i, j}))
        min_intra = std::min(min_intra, cs);
      else
        max_inter = std::max(max_inter, cs);
    }
  ASSERT_GT(min_intra, max_inter);  // the two similarity populations separate

  double threshold = 0.5 * (min_intra + max_inter);
  auto kept = hard_subset(ds.videos, threshold);
  std::set<int> expect;
  for (auto [x, y] : ds.similar_pairs) {
    expect.insert(x);
    expect.insert(y);
  }
  EXPECT_EQ(std::set<int>(kept.begin(), kept.end()), expect);
}

TEST(Confidence, KnownValues) {
  EXPECT_DOUBLE_EQ(confidence({0.0, 0.0}), 50.0);
  EXPECT_NEAR(confidence({std::log(9.0)}), 90.0, 1e-12);
  EXPECT_GT(confidence({40.0}), 99.999);
  EXPECT_THROW(confidence({}), std::invalid_argument);
}

TEST(Top1Correlation, KnownAndRandom) {
  // identical pools agree everywhere
  auto pool = pool_from_scores({{3, 1}, {0, 2}, {5, 4}, {1, 7}});
  EXPECT_NEAR(top1_correlation(pool, pool).value(), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(top1_agreement(pool, pool), 1.0);

  // anti-aligned top-1 indices [0,1,0,1] vs [1,0,1,0]
  auto a = pool_from_scores({{3, 1}, {0, 2}, {5, 4}, {1, 7}});
  auto b = pool_from_scores({{1, 3}, {2, 0}, {4, 5}, {7, 1}});
  EXPECT_NEAR(top1_correlation(a, b).value(), -1.0, 1e-12);
  EXPECT_DOUBLE_EQ(top1_agreement(a, b), 0.0);

  // zero variance is undefined, not zero
  auto flat = pool_from_scores({{9, 1}, {9, 1}, {9, 1}, {9, 1}});
  EXPECT_FALSE(top1_correlation(flat, a).has_value());

  // random 50-video pool against a direct Pearson recomputation
  Rng rng(41);
  std::vector<std::vector<double>> sa(50), sb(50);
  for (size_t v = 0; v < 50; ++v) {
    sa[v] = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
    sb[v] = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
  }
  auto pa = pool_from_scores(sa);
  auto pb = pool_from_scores(sb);
  std::vector<double> ia, ib;
  for (size_t v = 0; v < 50; ++v) {
    ia.push_back(static_cast<double>(
        std::max_element(sa[v].begin(), sa[v].end()) - sa[v].begin()));
    ib.push_back(static_cast<double>(
        std::max_element(sb[v].begin(), sb[v].end()) - sb[v].begin()));
  }
  auto direct = pearson(ia, ib);
  auto got = top1_correlation(pa, pb);
  ASSERT_EQ(got.has_value(), direct.has_value());
  if (got) EXPECT_NEAR(*got, *direct, 1e-12);
}

TEST(Probes, ShapesAndCaptionSensitivity) {
  CorpusConfig ccfg;
  ccfg.num_concepts = 4;
  ccfg.num_videos = 5;
  ccfg.concepts_per_video = 2;
  ccfg.feature_dim = 8;
  ccfg.vocab_size = 16;
  ccfg.similar_fraction = 0.0;
  RetrievalDataset ds = generate_corpus(ccfg, 9);
  RetrieverConfig rcfg;
  rcfg.vocab_size = 16;
  rcfg.embed_dim = 6;
  rcfg.feature_dim = 8;
  RetrieverModel m = init_retriever(rcfg, 10);

  std::vector<TokenSeq> captions;
  for (const auto& c : ds.gt_captions) captions.push_back(c.tokens);

  ScoreMatrix t2c = t2c_matrix(m, ds, captions);
  EXPECT_EQ(t2c.rows, 5u);
  EXPECT_EQ(t2c.cols, 5u);
  ScoreMatrix v2c = v2c_matrix(m, ds, captions);
  EXPECT_EQ(v2c.rows, 5u);
  // different candidate captions produce different scores somewhere
  bool varies = false;
  for (size_t c = 1; c < 5; ++c)
    if (v2c.at(0, c) != v2c.at(0, 0)) varies = true;
  EXPECT_TRUE(varies);

  DiversityReport div = make_diversity_report(captions);
  EXPECT_DOUBLE_EQ(div.self_bleu, self_bleu(captions));
  EXPECT_DOUBLE_EQ(div.distinct_1, distinct_n(captions, 1));
  EXPECT_DOUBLE_EQ(div.distinct_2, distinct_n(captions, 2));
}

TEST(Reports, RecallReportMonotone) {
  ScoreMatrix m(3, 12);
  Rng rng(77);
  for (auto& v : m.data) v = rng.gaussian();
  std::vector<int> gt{0, 5, 11};
  RecallReport rep = make_recall_report(m, gt, "T2V");
  EXPECT_LE(rep.r1, rep.r5);
  EXPECT_LE(rep.r5, rep.r10);
  EXPECT_EQ(rep.n_queries, 3);
  nlohmann::json j = rep;
  EXPECT_EQ(j.at("direction"), "T2V");
  EXPECT_EQ(j.at("n"), 3);
}
