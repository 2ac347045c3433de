#pragma once

// Seeded synthetic retrieval corpus: videos are sequences of frame feature
// vectors built from latent concepts, queries and ground-truth captions
// render those concepts as token sequences, and a configured fraction of
// videos are near-duplicates differing in exactly one concept. Everything is
// a pure function of (config, seed).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dgdpo/common.hpp"

namespace dgdpo {

struct Concept {
  int id = 0;
  std::vector<double> feature;  // unit norm, dimension D_f
  TokenSeq token_form;          // 2-4 non-reserved token ids
};

struct SyntheticVideo {
  int video_id = 0;
  std::vector<std::vector<double>> frames;  // N_v x D_f
  std::vector<int> concept_ids;             // ascending order
};

struct QueryText {
  TokenSeq tokens;
  int video_id = 0;
};

struct GroundTruthCaption {
  TokenSeq tokens;
  int video_id = 0;
};

struct CorpusConfig {
  int num_concepts = 16;       // C
  int num_videos = 100;        // N
  int concepts_per_video = 3;  // k_c
  int frames_per_video = 8;    // N_v
  int feature_dim = 16;        // D_f
  double noise_scale = 0.1;    // sigma_n
  double similar_fraction = 0.4;  // rho
  double distractor_rate = 0.15;
  int vocab_size = 64;  // V
  double similar_cosine_floor = 0.4;
  double concept_render_prob = 0.9;  // chance a concept shows up in the query
};

inline void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = nlohmann::json{{"num_concepts", c.num_concepts},
                     {"num_videos", c.num_videos},
                     {"concepts_per_video", c.concepts_per_video},
                     {"frames_per_video", c.frames_per_video},
                     {"feature_dim", c.feature_dim},
                     {"noise_scale", c.noise_scale},
                     {"similar_fraction", c.similar_fraction},
                     {"distractor_rate", c.distractor_rate},
                     {"vocab_size", c.vocab_size},
                     {"similar_cosine_floor", c.similar_cosine_floor},
                     {"concept_render_prob", c.concept_render_prob}};
}

inline void from_json(const nlohmann::json& j, CorpusConfig& c) {
  j.at("num_concepts").get_to(c.num_concepts);
  j.at("num_videos").get_to(c.num_videos);
  j.at("concepts_per_video").get_to(c.concepts_per_video);
  j.at("frames_per_video").get_to(c.frames_per_video);
  j.at("feature_dim").get_to(c.feature_dim);
  j.at("noise_scale").get_to(c.noise_scale);
  j.at("similar_fraction").get_to(c.similar_fraction);
  j.at("distractor_rate").get_to(c.distractor_rate);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("similar_cosine_floor").get_to(c.similar_cosine_floor);
  j.at("concept_render_prob").get_to(c.concept_render_prob);
}

struct RetrievalDataset {
  CorpusConfig config;
  uint64_t seed = 0;
  int vocab_size = 0;
  std::vector<Concept> concepts;  // generation-time only; not serialized
  std::vector<SyntheticVideo> videos;
  std::vector<QueryText> queries;
  std::vector<GroundTruthCaption> gt_captions;
  // Recorded (source_id, partner_id) near-duplicate pairs.
  std::vector<std::pair<int, int>> similar_pairs;

  size_t size() const { return videos.size(); }
};

inline std::vector<double> pooled_frames(const SyntheticVideo& v) {
  std::vector<double> mean(v.frames.empty() ? 0 : v.frames[0].size(), 0.0);
  for (const auto& f : v.frames)
    for (size_t d = 0; d < mean.size(); ++d) mean[d] += f[d];
  for (auto& x : mean) x /= static_cast<double>(v.frames.size());
  return mean;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), "cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  double denom = std::sqrt(na) * std::sqrt(nb);
  if (denom == 0.0) return 0.0;
  return dot / denom;
}

namespace detail {

inline void validate_corpus_config(const CorpusConfig& c) {
  require(c.num_concepts >= 4, "corpus: need at least 4 concepts");
  require(c.num_videos >= 2, "corpus: need at least 2 videos");
  require(c.concepts_per_video >= 1, "corpus: concepts_per_video must be >= 1");
  require(c.concepts_per_video <= c.num_concepts,
          "corpus: concepts_per_video exceeds concept count");
  require(c.frames_per_video >= 1, "corpus: need at least 1 frame");
  require(c.feature_dim >= 2, "corpus: feature_dim must be >= 2");
  require(c.noise_scale >= 0.0, "corpus: noise scale must be >= 0");
  require(c.similar_fraction >= 0.0 && c.similar_fraction <= 1.0,
          "corpus: similar_fraction outside [0,1]");
  require(c.distractor_rate >= 0.0 && c.distractor_rate <= 1.0,
          "corpus: distractor_rate outside [0,1]");
  // Each concept gets a unique primary and secondary token id.
  require(c.vocab_size >= tok::kFirstConcept + 2 * c.num_concepts,
          "corpus: vocabulary too small to render all concepts");
}

inline std::vector<Concept> make_concepts(const CorpusConfig& cfg, Rng& rng) {
  std::vector<Concept> concepts(static_cast<size_t>(cfg.num_concepts));
  int texture_lo = tok::kFirstConcept + 2 * cfg.num_concepts;
  for (int i = 0; i < cfg.num_concepts; ++i) {
    Concept& c = concepts[static_cast<size_t>(i)];
    c.id = i;
    c.feature.resize(static_cast<size_t>(cfg.feature_dim));
    double norm = 0.0;
    for (auto& x : c.feature) {
      x = rng.gaussian();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : c.feature) x /= norm;
    c.token_form = {tok::kFirstConcept + i, tok::kFirstConcept + cfg.num_concepts + i};
    if (texture_lo < cfg.vocab_size) {
      int extra = rng.uniform_int(0, 3);  // token_form length 2-4
      for (int e = 0; e < extra; ++e)
        c.token_form.push_back(rng.uniform_int(texture_lo, cfg.vocab_size));
    }
  }
  return concepts;
}

inline std::vector<std::vector<double>> make_frames(const std::vector<int>& concept_ids,
                                                    const std::vector<Concept>& concepts,
                                                    const CorpusConfig& cfg, Rng& rng) {
  std::vector<std::vector<double>> frames(static_cast<size_t>(cfg.frames_per_video));
  for (int f = 0; f < cfg.frames_per_video; ++f) {
    const auto& base =
        concepts[static_cast<size_t>(concept_ids[static_cast<size_t>(f) % concept_ids.size()])]
            .feature;
    auto& frame = frames[static_cast<size_t>(f)];
    frame.resize(base.size());
    for (size_t d = 0; d < base.size(); ++d)
      frame[d] = base[d] + cfg.noise_scale * rng.gaussian();
  }
  return frames;
}

inline TokenSeq render_caption(const std::vector<int>& concept_ids,
                               const std::vector<Concept>& concepts) {
  TokenSeq out;
  for (int cid : concept_ids) {
    const auto& form = concepts[static_cast<size_t>(cid)].token_form;
    out.insert(out.end(), form.begin(), form.end());
  }
  return out;
}

// forced_concept < 0 means no concept is forced into the query.
inline TokenSeq render_query(const std::vector<int>& concept_ids,
                             const std::vector<Concept>& concepts, const CorpusConfig& cfg,
                             int forced_concept, Rng& rng) {
  std::vector<int> rendered;
  for (int cid : concept_ids) {
    bool pick = rng.uniform() < cfg.concept_render_prob;
    if (cid == forced_concept) pick = true;
    if (pick) rendered.push_back(cid);
  }
  if (rendered.empty())
    rendered.push_back(concept_ids[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(concept_ids.size())))]);
  TokenSeq out;
  for (int cid : rendered) {
    const auto& form = concepts[static_cast<size_t>(cid)].token_form;
    out.insert(out.end(), form.begin(), form.end());
  }
  if (rng.uniform() < cfg.distractor_rate)
    out.push_back(rng.uniform_int(tok::kFirstConcept, cfg.vocab_size));
  return out;
}

}  // namespace detail

// Builds a near-duplicate of `source` sharing all concepts but the last
// (largest-id) one, which is replaced by a fresh concept. The first
// substitute meeting the pooled-cosine floor is taken; throws if none does.
inline SyntheticVideo make_similar_pair(const SyntheticVideo& source,
                                        const std::vector<Concept>& concepts,
                                        const CorpusConfig& cfg, uint64_t seed,
                                        int new_video_id) {
  require(source.concept_ids.size() >= 2, "make_similar_pair: source needs >= 2 concepts");
  Rng rng(derive_seed(seed, 0x70A1));
  std::set<int> in_use(source.concept_ids.begin(), source.concept_ids.end());
  std::vector<int> candidates;
  for (int c = 0; c < cfg.num_concepts; ++c)
    if (!in_use.count(c)) candidates.push_back(c);
  require(!candidates.empty(), "make_similar_pair: no substitute concept available");
  rng.shuffle(candidates);

  std::vector<double> src_pool = pooled_frames(source);
  for (int sub : candidates) {
    std::vector<int> ids(source.concept_ids.begin(), source.concept_ids.end() - 1);
    ids.push_back(sub);
    std::sort(ids.begin(), ids.end());
    Rng frame_rng(derive_seed(seed, 0xF2A3));
    SyntheticVideo partner;
    partner.video_id = new_video_id;
    partner.concept_ids = ids;
    partner.frames = detail::make_frames(ids, concepts, cfg, frame_rng);
    if (cosine(src_pool, pooled_frames(partner)) >= cfg.similar_cosine_floor) return partner;
  }
  throw std::runtime_error("make_similar_pair: cosine floor unattainable for this source");
}

inline RetrievalDataset generate_corpus(const CorpusConfig& cfg, uint64_t seed) {
  detail::validate_corpus_config(cfg);
  Rng rng(derive_seed(seed, 0xC0));

  RetrievalDataset ds;
  ds.config = cfg;
  ds.seed = seed;
  ds.vocab_size = cfg.vocab_size;
  ds.concepts = detail::make_concepts(cfg, rng);

  int n_pairs = static_cast<int>(std::llround(cfg.similar_fraction * cfg.num_videos));
  if (n_pairs > cfg.num_videos - 1) n_pairs = cfg.num_videos - 1;
  if (cfg.concepts_per_video < 2) n_pairs = 0;  // partners need a concept to swap
  int n_base = cfg.num_videos - n_pairs;

  std::set<std::vector<int>> used_sets;
  // discriminative concept per video: the one its partner (or source) lacks
  std::vector<int> forced(static_cast<size_t>(cfg.num_videos), -1);

  for (int i = 0; i < n_base; ++i) {
    std::vector<int> ids;
    for (int attempt = 0; attempt < 200; ++attempt) {
      std::set<int> s;
      while (static_cast<int>(s.size()) < cfg.concepts_per_video)
        s.insert(rng.uniform_int(0, cfg.num_concepts));
      ids.assign(s.begin(), s.end());
      if (!used_sets.count(ids)) break;  // avoid exact duplicates when possible
    }
    used_sets.insert(ids);
    SyntheticVideo v;
    v.video_id = i;
    v.concept_ids = ids;
    v.frames = detail::make_frames(ids, ds.concepts, cfg, rng);
    ds.videos.push_back(std::move(v));
  }

  // Partner videos: each takes a distinct base source; the last (largest-id)
  // concept of the source is swapped out.
  std::vector<int> source_order(static_cast<size_t>(n_base));
  for (int i = 0; i < n_base; ++i) source_order[static_cast<size_t>(i)] = i;
  rng.shuffle(source_order);
  size_t next_source = 0;
  for (int p = 0; p < n_pairs; ++p) {
    int partner_id = n_base + p;
    bool placed = false;
    while (next_source < source_order.size() && !placed) {
      int src_id = source_order[next_source++];
      const SyntheticVideo& src = ds.videos[static_cast<size_t>(src_id)];
      uint64_t pair_seed = rng.next_u64();
      for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
        try {
          SyntheticVideo partner = make_similar_pair(
              src, ds.concepts, cfg, derive_seed(pair_seed, static_cast<uint64_t>(attempt)),
              partner_id);
          if (used_sets.count(partner.concept_ids) && attempt < 49) continue;
          used_sets.insert(partner.concept_ids);
          // the concept each side has that the other lacks
          forced[static_cast<size_t>(src_id)] = src.concept_ids.back();
          for (int cid : partner.concept_ids)
            if (std::find(src.concept_ids.begin(), src.concept_ids.end(), cid) ==
                src.concept_ids.end())
              forced[static_cast<size_t>(partner_id)] = cid;
          ds.videos.push_back(std::move(partner));
          ds.similar_pairs.emplace_back(src_id, partner_id);
          placed = true;
        } catch (const std::runtime_error&) {
          break;  // cosine floor unreachable for this source; try the next
        }
      }
    }
    require(placed, "generate_corpus: could not place all similar pairs");
  }

  for (int i = 0; i < cfg.num_videos; ++i) {
    const auto& v = ds.videos[static_cast<size_t>(i)];
    GroundTruthCaption cap;
    cap.video_id = i;
    cap.tokens = detail::render_caption(v.concept_ids, ds.concepts);
    ds.gt_captions.push_back(std::move(cap));
    QueryText q;
    q.video_id = i;
    q.tokens = detail::render_query(v.concept_ids, ds.concepts, cfg,
                                    forced[static_cast<size_t>(i)], rng);
    ds.queries.push_back(std::move(q));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Serialization: JSON Lines (one record per video) plus a sidecar header.

inline void write_dataset(const RetrievalDataset& ds, const std::string& data_path,
                          const std::string& header_path) {
  std::ofstream out(data_path);
  if (!out) throw std::runtime_error("write_dataset: cannot open " + data_path);
  for (size_t i = 0; i < ds.videos.size(); ++i) {
    nlohmann::json rec;
    rec["video_id"] = ds.videos[i].video_id;
    rec["frames"] = ds.videos[i].frames;
    rec["concept_ids"] = ds.videos[i].concept_ids;
    rec["query_tokens"] = ds.queries[i].tokens;
    rec["gt_caption_tokens"] = ds.gt_captions[i].tokens;
    out << rec.dump() << "\n";
  }
  nlohmann::json header;
  header["vocab_size"] = ds.vocab_size;
  header["seed"] = ds.seed;
  header["config"] = ds.config;
  header["similar_pairs"] = ds.similar_pairs;
  std::ofstream hf(header_path);
  if (!hf) throw std::runtime_error("write_dataset: cannot open " + header_path);
  hf << header.dump(2) << "\n";
}

inline RetrievalDataset read_dataset(const std::string& data_path,
                                     const std::string& header_path) {
  std::ifstream hf(header_path);
  if (!hf) throw std::runtime_error("read_dataset: cannot open " + header_path);
  nlohmann::json header = nlohmann::json::parse(hf);
  RetrievalDataset ds;
  ds.vocab_size = header.at("vocab_size").get<int>();
  ds.seed = header.at("seed").get<uint64_t>();
  ds.config = header.at("config").get<CorpusConfig>();
  ds.similar_pairs = header.at("similar_pairs").get<std::vector<std::pair<int, int>>>();

  std::ifstream in(data_path);
  if (!in) throw std::runtime_error("read_dataset: cannot open " + data_path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line);
    SyntheticVideo v;
    v.video_id = rec.at("video_id").get<int>();
    v.frames = rec.at("frames").get<std::vector<std::vector<double>>>();
    v.concept_ids = rec.at("concept_ids").get<std::vector<int>>();
    QueryText q;
    q.video_id = v.video_id;
    q.tokens = rec.at("query_tokens").get<TokenSeq>();
    GroundTruthCaption c;
    c.video_id = v.video_id;
    c.tokens = rec.at("gt_caption_tokens").get<TokenSeq>();
    ds.videos.push_back(std::move(v));
    ds.queries.push_back(std::move(q));
    ds.gt_captions.push_back(std::move(c));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Train/test split. Similar-pair partners always land in the same side; the
// requested sizes are met exactly whenever pair atomicity allows it.

namespace detail {

class UnionFind {
 public:
  explicit UnionFind(size_t n) : parent_(n) {
    for (size_t i = 0; i < n; ++i) parent_[i] = i;
  }
  size_t find(size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void unite(size_t a, size_t b) { parent_[find(a)] = find(b); }

 private:
  std::vector<size_t> parent_;
};

inline RetrievalDataset subset_dataset(const RetrievalDataset& ds,
                                       const std::vector<int>& keep_ids) {
  RetrievalDataset out;
  out.config = ds.config;
  out.config.num_videos = static_cast<int>(keep_ids.size());
  out.seed = ds.seed;
  out.vocab_size = ds.vocab_size;
  out.concepts = ds.concepts;
  std::vector<int> remap(ds.videos.size(), -1);
  for (size_t new_id = 0; new_id < keep_ids.size(); ++new_id) {
    int old_id = keep_ids[new_id];
    remap[static_cast<size_t>(old_id)] = static_cast<int>(new_id);
    SyntheticVideo v = ds.videos[static_cast<size_t>(old_id)];
    v.video_id = static_cast<int>(new_id);
    QueryText q = ds.queries[static_cast<size_t>(old_id)];
    q.video_id = static_cast<int>(new_id);
    GroundTruthCaption c = ds.gt_captions[static_cast<size_t>(old_id)];
    c.video_id = static_cast<int>(new_id);
    out.videos.push_back(std::move(v));
    out.queries.push_back(std::move(q));
    out.gt_captions.push_back(std::move(c));
  }
  for (auto [a, b] : ds.similar_pairs) {
    int na = remap[static_cast<size_t>(a)];
    int nb = remap[static_cast<size_t>(b)];
    if (na >= 0 && nb >= 0) out.similar_pairs.emplace_back(na, nb);
  }
  return out;
}

}  // namespace detail

// Re-indexed sub-dataset over the given (sorted, distinct) original ids.
inline RetrievalDataset subset_by_ids(const RetrievalDataset& ds, const std::vector<int>& ids) {
  return detail::subset_dataset(ds, ids);
}

inline std::pair<RetrievalDataset, RetrievalDataset> split_dataset(
    const RetrievalDataset& ds, double train_fraction, uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0,
          "split_dataset: train_fraction outside (0,1)");
  size_t n = ds.videos.size();
  detail::UnionFind uf(n);
  for (auto [a, b] : ds.similar_pairs)
    uf.unite(static_cast<size_t>(a), static_cast<size_t>(b));

  std::vector<std::vector<int>> units;
  {
    std::vector<int> root_to_unit(n, -1);
    for (size_t i = 0; i < n; ++i) {
      size_t r = uf.find(i);
      if (root_to_unit[r] < 0) {
        root_to_unit[r] = static_cast<int>(units.size());
        units.emplace_back();
      }
      units[static_cast<size_t>(root_to_unit[r])].push_back(static_cast<int>(i));
    }
  }

  Rng rng(derive_seed(seed, 0x511));
  rng.shuffle(units);

  size_t target = static_cast<size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (target == 0) target = 1;
  if (target >= n) target = n - 1;

  std::vector<int> train_ids, test_ids;
  std::vector<std::vector<int>> overflow;
  for (auto& unit : units) {
    if (train_ids.size() + unit.size() <= target)
      train_ids.insert(train_ids.end(), unit.begin(), unit.end());
    else
      overflow.push_back(unit);
  }
  // Singleton swap pass to hit the target exactly when possible.
  for (auto& unit : overflow) {
    if (train_ids.size() < target && unit.size() <= target - train_ids.size())
      train_ids.insert(train_ids.end(), unit.begin(), unit.end());
    else
      test_ids.insert(test_ids.end(), unit.begin(), unit.end());
  }
  require(!train_ids.empty() && !test_ids.empty(),
          "split_dataset: degenerate split (pair atomicity left one side empty)");
  std::sort(train_ids.begin(), train_ids.end());
  std::sort(test_ids.begin(), test_ids.end());
  return {detail::subset_dataset(ds, train_ids), detail::subset_dataset(ds, test_ids)};
}

}  // namespace dgdpo
