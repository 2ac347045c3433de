#pragma once

// Joint (video, caption, query) True/False scorer. Caption and query tokens
// are pooled together through a shared per-token encoder, so without the
// role embeddings the model cannot tell which text tokens belong to which
// role; R_c and R_t are added per token before the nonlinearity and are the
// only way to separate them. Exposes the standard, negative-only, and
// contrastive relevance scores plus the video-masked preference score.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgdpo/common.hpp"
#include "dgdpo/corpus.hpp"
#include "dgdpo/numerics.hpp"
#include "dgdpo/tensor.hpp"

namespace dgdpo {

struct RetrieverConfig {
  int vocab_size = 64;
  int embed_dim = 24;
  int feature_dim = 16;
  double init_scale = 0.1;
};

inline void to_json(nlohmann::json& j, const RetrieverConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"embed_dim", c.embed_dim},
                     {"feature_dim", c.feature_dim},
                     {"init_scale", c.init_scale}};
}

inline void from_json(const nlohmann::json& j, RetrieverConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("feature_dim").get_to(c.feature_dim);
  j.at("init_scale").get_to(c.init_scale);
}

struct RetrieverModel {
  RetrieverConfig cfg;
  ParamStore params;
};

inline size_t retriever_param_count(const RetrieverConfig& c) {
  size_t v = static_cast<size_t>(c.vocab_size);
  size_t e = static_cast<size_t>(c.embed_dim);
  size_t f = static_cast<size_t>(c.feature_dim);
  return v * e + e * e + e + f * e + e + e + e * 4 * e + e + 2 * e + 2;
}

// Role embeddings start at zero so the role model and the role-free model
// coincide exactly at initialization.
inline RetrieverModel init_retriever(const RetrieverConfig& cfg, uint64_t seed) {
  require(cfg.vocab_size >= 2 && cfg.embed_dim >= 1 && cfg.feature_dim >= 1,
          "init_retriever: invalid config");
  RetrieverModel m;
  m.cfg = cfg;
  size_t v = static_cast<size_t>(cfg.vocab_size);
  size_t e = static_cast<size_t>(cfg.embed_dim);
  size_t f = static_cast<size_t>(cfg.feature_dim);
  Rng rng(derive_seed(seed, 0x8E7));
  fill_gaussian(m.params.add("tok_emb", {v, e}), rng, cfg.init_scale);
  fill_gaussian(m.params.add("txt_w", {e, e}), rng, cfg.init_scale);
  m.params.add("txt_b", {e});
  fill_gaussian(m.params.add("vid_proj", {f, e}), rng, cfg.init_scale);
  m.params.add("role_cap", {e});
  m.params.add("role_qry", {e});
  fill_gaussian(m.params.add("fus_w", {e, 4 * e}), rng, cfg.init_scale);
  m.params.add("fus_b", {e});
  fill_gaussian(m.params.add("out_w", {2, e}), rng, cfg.init_scale);
  m.params.add("out_b", {2});
  return m;
}

struct TripletInput {
  const SyntheticVideo* video = nullptr;
  const TokenSeq* caption = nullptr;  // optional (the (v,t)-only ablation)
  const TokenSeq* query = nullptr;
  bool mask_video = false;
  bool use_roles = true;
};

enum class ScoreVariant { standard, neg_only, contrastive };

namespace detail {

struct RetForward {
  std::vector<double> pv, ptext, z, h;
  std::vector<double> log_probs;  // [logP_true, logP_false]
  // per-token encoder activations, rebuilt on the backward pass
};

inline void check_triplet(const RetrieverModel& m, const TripletInput& in) {
  require(in.video != nullptr, "retriever: missing video");
  require(in.query != nullptr && !in.query->empty(), "retriever: empty query");
  if (in.caption) require(!in.caption->empty(), "retriever: empty caption");
  for (const TokenSeq* seq : {in.caption, in.query}) {
    if (!seq) continue;
    for (int t : *seq)
      require(t >= 0 && t < m.cfg.vocab_size, "retriever: token id out of range");
  }
  if (!in.mask_video) {
    require(!in.video->frames.empty(), "retriever: video has no frames");
    for (const auto& f : in.video->frames)
      require(static_cast<int>(f.size()) == m.cfg.feature_dim,
              "retriever: frame dimension mismatch");
  }
}

inline RetForward ret_forward(const RetrieverModel& m, const TripletInput& in) {
  check_triplet(m, in);
  size_t e = static_cast<size_t>(m.cfg.embed_dim);
  const Tensor& tok_emb = m.params.at("tok_emb");
  const Tensor& txt_w = m.params.at("txt_w");
  const Tensor& txt_b = m.params.at("txt_b");
  const Tensor& fus_w = m.params.at("fus_w");
  const Tensor& fus_b = m.params.at("fus_b");
  const Tensor& out_w = m.params.at("out_w");
  const Tensor& out_b = m.params.at("out_b");

  RetForward fw;
  // video slot; masking zeroes it, excluding every video contribution
  fw.pv.assign(e, 0.0);
  if (!in.mask_video) {
    const Tensor& proj = m.params.at("vid_proj");
    for (const auto& frame : in.video->frames)
      for (size_t d = 0; d < frame.size(); ++d)
        for (size_t k = 0; k < e; ++k) fw.pv[k] += frame[d] * proj.at(d, k);
    for (auto& x : fw.pv) x /= static_cast<double>(in.video->frames.size());
  }

  // shared text pool over caption and query tokens
  fw.ptext.assign(e, 0.0);
  size_t n_tokens = (in.caption ? in.caption->size() : 0) + in.query->size();
  auto pool_tokens = [&](const TokenSeq& seq, const char* role_name) {
    const Tensor* role = in.use_roles ? &m.params.at(role_name) : nullptr;
    for (int t : seq) {
      for (size_t r = 0; r < e; ++r) {
        double acc = txt_b.at(r);
        for (size_t c = 0; c < e; ++c) {
          double inp = tok_emb.at(static_cast<size_t>(t), c) + (role ? role->at(c) : 0.0);
          acc += txt_w.at(r, c) * inp;
        }
        fw.ptext[r] += std::tanh(acc);
      }
    }
  };
  if (in.caption) pool_tokens(*in.caption, "role_cap");
  pool_tokens(*in.query, "role_qry");
  for (auto& x : fw.ptext) x /= static_cast<double>(n_tokens);

  // fusion over [pv; ptext; pv*ptext; ptext*ptext]
  fw.z.resize(4 * e);
  for (size_t k = 0; k < e; ++k) {
    fw.z[k] = fw.pv[k];
    fw.z[e + k] = fw.ptext[k];
    fw.z[2 * e + k] = fw.pv[k] * fw.ptext[k];
    fw.z[3 * e + k] = fw.ptext[k] * fw.ptext[k];
  }
  fw.h.resize(e);
  for (size_t r = 0; r < e; ++r) {
    double acc = fus_b.at(r);
    for (size_t c = 0; c < 4 * e; ++c) acc += fus_w.at(r, c) * fw.z[c];
    fw.h[r] = std::tanh(acc);
  }
  std::vector<double> logits(2);
  for (size_t r = 0; r < 2; ++r) {
    double acc = out_b.at(r);
    for (size_t c = 0; c < e; ++c) acc += out_w.at(r, c) * fw.h[c];
    logits[r] = acc;
  }
  fw.log_probs = log_softmax(logits);
  return fw;
}

// Backpropagates d/d logits through the shared trunk. dlogits has 2 entries.
inline void ret_backward(const RetrieverModel& m, const TripletInput& in, const RetForward& fw,
                         const std::vector<double>& dlogits, GradStore& grads) {
  size_t e = static_cast<size_t>(m.cfg.embed_dim);
  const Tensor& tok_emb = m.params.at("tok_emb");
  const Tensor& txt_w = m.params.at("txt_w");
  const Tensor& txt_b = m.params.at("txt_b");
  const Tensor& fus_w = m.params.at("fus_w");
  const Tensor& out_w = m.params.at("out_w");

  Tensor& g_ow = grads.at("out_w");
  Tensor& g_ob = grads.at("out_b");
  std::vector<double> dh(e, 0.0);
  for (size_t j = 0; j < 2; ++j) {
    g_ob.at(j) += dlogits[j];
    for (size_t c = 0; c < e; ++c) {
      g_ow.at(j, c) += dlogits[j] * fw.h[c];
      dh[c] += dlogits[j] * out_w.at(j, c);
    }
  }

  Tensor& g_fw = grads.at("fus_w");
  Tensor& g_fb = grads.at("fus_b");
  std::vector<double> dz(4 * e, 0.0);
  for (size_t r = 0; r < e; ++r) {
    double dpre = dh[r] * (1.0 - fw.h[r] * fw.h[r]);
    g_fb.at(r) += dpre;
    for (size_t c = 0; c < 4 * e; ++c) {
      g_fw.at(r, c) += dpre * fw.z[c];
      dz[c] += dpre * fus_w.at(r, c);
    }
  }
  std::vector<double> dpv(e), dptext(e);
  for (size_t k = 0; k < e; ++k) {
    dpv[k] = dz[k] + dz[2 * e + k] * fw.ptext[k];
    dptext[k] = dz[e + k] + dz[2 * e + k] * fw.pv[k] + 2.0 * dz[3 * e + k] * fw.ptext[k];
  }

  if (!in.mask_video) {
    Tensor& g_proj = grads.at("vid_proj");
    size_t f_dim = static_cast<size_t>(m.cfg.feature_dim);
    std::vector<double> mean_frame(f_dim, 0.0);
    for (const auto& frame : in.video->frames)
      for (size_t d = 0; d < f_dim; ++d) mean_frame[d] += frame[d];
    for (auto& mv : mean_frame) mv /= static_cast<double>(in.video->frames.size());
    for (size_t d = 0; d < f_dim; ++d)
      for (size_t k = 0; k < e; ++k) g_proj.at(d, k) += dpv[k] * mean_frame[d];
  }

  size_t n_tokens = (in.caption ? in.caption->size() : 0) + in.query->size();
  double inv_n = 1.0 / static_cast<double>(n_tokens);
  Tensor& g_tok = grads.at("tok_emb");
  Tensor& g_tw = grads.at("txt_w");
  Tensor& g_tb = grads.at("txt_b");
  auto backprop_tokens = [&](const TokenSeq& seq, const char* role_name) {
    const Tensor* role = in.use_roles ? &m.params.at(role_name) : nullptr;
    Tensor* g_role = in.use_roles ? &grads.at(role_name) : nullptr;
    for (int t : seq) {
      // recompute this token's activation
      std::vector<double> inp(e), a(e);
      for (size_t c = 0; c < e; ++c)
        inp[c] = tok_emb.at(static_cast<size_t>(t), c) + (role ? role->at(c) : 0.0);
      for (size_t r = 0; r < e; ++r) {
        double acc = txt_b.at(r);
        for (size_t c = 0; c < e; ++c) acc += txt_w.at(r, c) * inp[c];
        a[r] = std::tanh(acc);
      }
      std::vector<double> dinp(e, 0.0);
      for (size_t r = 0; r < e; ++r) {
        double dpre = dptext[r] * inv_n * (1.0 - a[r] * a[r]);
        g_tb.at(r) += dpre;
        for (size_t c = 0; c < e; ++c) {
          g_tw.at(r, c) += dpre * inp[c];
          dinp[c] += dpre * txt_w.at(r, c);
        }
      }
      for (size_t c = 0; c < e; ++c) {
        g_tok.at(static_cast<size_t>(t), c) += dinp[c];
        if (g_role) g_role->at(c) += dinp[c];
      }
    }
  };
  if (in.caption) backprop_tokens(*in.caption, "role_cap");
  backprop_tokens(*in.query, "role_qry");
}

}  // namespace detail

// (log P(True), log P(False)); always a 2-way distribution.
inline std::pair<double, double> joint_logprobs(const RetrieverModel& m,
                                                const TripletInput& in) {
  detail::RetForward fw = detail::ret_forward(m, in);
  return {fw.log_probs[0], fw.log_probs[1]};
}

inline double relevance_score(const RetrieverModel& m, const TripletInput& in,
                              ScoreVariant variant) {
  auto [lp_true, lp_false] = joint_logprobs(m, in);
  switch (variant) {
    case ScoreVariant::standard:
      return lp_true;
    case ScoreVariant::neg_only:
      return lp_false;
    case ScoreVariant::contrastive:
      return lp_true - lp_false;
  }
  throw std::invalid_argument("relevance_score: unknown variant");
}

// The preference score s_p: contrastive relevance with video contributions
// masked out. `masked=false` gives the unmasked comparison variant.
inline double preference_score(const RetrieverModel& m, const SyntheticVideo& video,
                               const TokenSeq& caption, const TokenSeq& query,
                               bool use_roles = true, bool masked = true) {
  TripletInput in;
  in.video = &video;
  in.caption = &caption;
  in.query = &query;
  in.mask_video = masked;
  in.use_roles = use_roles;
  return relevance_score(m, in, ScoreVariant::contrastive);
}

struct MatchedTriplet {
  const SyntheticVideo* video = nullptr;
  const TokenSeq* caption = nullptr;  // may be null for the (v,t)-only model
  const TokenSeq* query = nullptr;
};

namespace detail {

struct RetTerm {
  TripletInput input;
  bool positive = true;
};

// Positives are the matched triplets; negatives swap in the query of another
// batch element, `negatives` per positive, drawn uniformly with a seed.
inline std::vector<RetTerm> build_ret_terms(const std::vector<MatchedTriplet>& matched,
                                            int negatives, uint64_t seed, bool use_roles) {
  require(!matched.empty(), "ret_loss: empty batch");
  require(negatives >= 0, "ret_loss: negative count must be >= 0");
  if (negatives > 0)
    require(matched.size() >= 2, "ret_loss: in-batch negatives need batch size >= 2");
  Rng rng(derive_seed(seed, 0x4E6));
  std::vector<RetTerm> terms;
  for (size_t i = 0; i < matched.size(); ++i) {
    TripletInput in;
    in.video = matched[i].video;
    in.caption = matched[i].caption;
    in.query = matched[i].query;
    in.use_roles = use_roles;
    terms.push_back({in, true});
    for (int n = 0; n < negatives; ++n) {
      size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(matched.size()) - 1));
      if (j >= i) ++j;
      TripletInput neg = in;
      neg.query = matched[j].query;
      terms.push_back({neg, false});
    }
  }
  return terms;
}

}  // namespace detail

// Mean of -log P(True) over matched triplets and -log P(False) over the
// constructed mismatched ones.
inline double ret_loss(const RetrieverModel& m, const std::vector<MatchedTriplet>& matched,
                       int negatives, uint64_t seed, bool use_roles) {
  auto terms = detail::build_ret_terms(matched, negatives, seed, use_roles);
  double total = 0.0;
  for (const auto& term : terms) {
    auto [lp_true, lp_false] = joint_logprobs(m, term.input);
    total += term.positive ? -lp_true : -lp_false;
  }
  return total / static_cast<double>(terms.size());
}

inline double ret_loss_backward(const RetrieverModel& m,
                                const std::vector<MatchedTriplet>& matched, int negatives,
                                uint64_t seed, bool use_roles, GradStore& grads) {
  auto terms = detail::build_ret_terms(matched, negatives, seed, use_roles);
  double total = 0.0;
  double scale = 1.0 / static_cast<double>(terms.size());
  for (const auto& term : terms) {
    detail::RetForward fw = detail::ret_forward(m, term.input);
    size_t label = term.positive ? 0 : 1;
    total += -fw.log_probs[label];
    // d(-logP_label)/dlogit_j = p_j - 1{j==label}
    std::vector<double> dlogits(2);
    for (size_t j = 0; j < 2; ++j)
      dlogits[j] = scale * (std::exp(fw.log_probs[j]) - (j == label ? 1.0 : 0.0));
    detail::ret_backward(m, term.input, fw, dlogits, grads);
  }
  return total * scale;
}

using CaptionFn = std::function<const TokenSeq*(int video_id)>;

inline CaptionFn gt_caption_fn(const RetrievalDataset& ds) {
  return [&ds](int video_id) -> const TokenSeq* {
    return &ds.gt_captions[static_cast<size_t>(video_id)].tokens;
  };
}

inline CaptionFn no_caption_fn() {
  return [](int) -> const TokenSeq* { return nullptr; };
}

struct RetTrainOptions {
  int epochs = 40;
  double lr = 0.05;
  int negatives = 1;
  bool use_roles = true;
  // weight of the auxiliary masked-view term: the same labels must also be
  // predictable from (caption, query) alone, which is what the preference
  // score s_p asks of the model at inference
  double masked_view_weight = 0.0;
  // per-epoch input perturbations; fresh frame noise and text-token dropout
  // fight memorization of the small training split
  double aug_frame_noise = 0.0;
  double aug_token_dropout = 0.0;
  OptimRule rule = OptimRule::adam;
  uint64_t seed = 0;
};

// Full-batch gradient descent; negatives are redrawn every epoch. The trace
// holds the batch loss at the parameters each epoch started from.
inline std::vector<double> train_retriever(RetrieverModel& m, const RetrievalDataset& ds,
                                           const CaptionFn& caption_fn,
                                           const RetTrainOptions& opt) {
  require(ds.videos.size() >= 2, "train_retriever: need at least 2 videos");
  std::vector<MatchedTriplet> matched;
  for (size_t i = 0; i < ds.videos.size(); ++i) {
    MatchedTriplet t;
    t.video = &ds.videos[i];
    t.caption = caption_fn(static_cast<int>(i));
    t.query = &ds.queries[i].tokens;
    matched.push_back(t);
  }
  OptimConfig ocfg;
  ocfg.lr = opt.lr;
  ocfg.rule = opt.rule;
  OptimState state = make_optim_state(m.params, ocfg);
  std::vector<double> trace;
  bool augmented = opt.aug_frame_noise > 0.0 || opt.aug_token_dropout > 0.0;
  std::vector<SyntheticVideo> aug_videos;
  std::vector<TokenSeq> aug_caps, aug_queries;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    uint64_t epoch_seed = derive_seed(opt.seed, 0xE4 + static_cast<uint64_t>(epoch));
    std::vector<MatchedTriplet> view = matched;
    if (augmented) {
      Rng aug_rng(derive_seed(epoch_seed, 0xA06));
      aug_videos.assign(ds.videos.begin(), ds.videos.end());
      aug_caps.resize(matched.size());
      aug_queries.resize(matched.size());
      auto dropout = [&](const TokenSeq& toks) {
        TokenSeq out;
        for (int t : toks)
          if (aug_rng.uniform() >= opt.aug_token_dropout) out.push_back(t);
        if (out.empty()) out.push_back(toks[static_cast<size_t>(
            aug_rng.uniform_int(0, static_cast<int>(toks.size())))]);
        return out;
      };
      for (size_t i = 0; i < matched.size(); ++i) {
        if (opt.aug_frame_noise > 0.0)
          for (auto& frame : aug_videos[i].frames)
            for (auto& x : frame) x += opt.aug_frame_noise * aug_rng.gaussian();
        view[i].video = &aug_videos[i];
        if (matched[i].caption) {
          aug_caps[i] = dropout(*matched[i].caption);
          view[i].caption = &aug_caps[i];
        }
        aug_queries[i] = dropout(*matched[i].query);
        view[i].query = &aug_queries[i];
      }
    }
    GradStore grads = m.params.zeros_like();
    double loss = ret_loss_backward(m, view, opt.negatives, epoch_seed, opt.use_roles, grads);
    if (opt.masked_view_weight > 0.0) {
      auto terms = detail::build_ret_terms(view, opt.negatives, epoch_seed, opt.use_roles);
      double scale = opt.masked_view_weight / static_cast<double>(terms.size());
      double masked_loss = 0.0;
      for (auto& term : terms) {
        term.input.mask_video = true;
        detail::RetForward fw = detail::ret_forward(m, term.input);
        size_t label = term.positive ? 0 : 1;
        masked_loss += -fw.log_probs[label];
        std::vector<double> dlogits(2);
        for (size_t j = 0; j < 2; ++j)
          dlogits[j] = scale * (std::exp(fw.log_probs[j]) - (j == label ? 1.0 : 0.0));
        detail::ret_backward(m, term.input, fw, dlogits, grads);
      }
      loss += opt.masked_view_weight * masked_loss / static_cast<double>(terms.size());
    }
    require_finite(loss, "train_retriever loss");
    trace.push_back(loss);
    optimizer_step(m.params, grads, state);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Score dumps: JSON Lines.

struct ScoreRecord {
  int video_id = 0;
  int query_id = 0;
  int caption_index = 0;
  std::string variant;
  bool mask_video = false;
  double score = 0.0;
};

inline void write_score_dump(const std::vector<ScoreRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_score_dump: cannot open " + path);
  for (const auto& r : records) {
    nlohmann::json j{{"video_id", r.video_id},           {"query_id", r.query_id},
                     {"caption_index", r.caption_index}, {"variant", r.variant},
                     {"mask_video", r.mask_video},       {"score", r.score}};
    out << j.dump() << "\n";
  }
}

}  // namespace dgdpo
