#pragma once

// Cheap first-stage scorer: a dual encoder mapping queries and videos into a
// shared space, trained with a symmetric in-batch contrastive objective.
// Scores are cosines; the reranker consumes the top-k survivors.

#include <cmath>
#include <vector>

#include <json.hpp>

#include "dgdpo/common.hpp"
#include "dgdpo/corpus.hpp"
#include "dgdpo/numerics.hpp"
#include "dgdpo/tensor.hpp"

namespace dgdpo {

struct DualEncoderConfig {
  int vocab_size = 64;
  int embed_dim = 8;
  int feature_dim = 16;
  double init_scale = 0.1;
  double temperature = 0.1;  // contrastive softmax temperature
};

inline void to_json(nlohmann::json& j, const DualEncoderConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"embed_dim", c.embed_dim},
                     {"feature_dim", c.feature_dim},
                     {"init_scale", c.init_scale},
                     {"temperature", c.temperature}};
}

inline void from_json(const nlohmann::json& j, DualEncoderConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("feature_dim").get_to(c.feature_dim);
  j.at("init_scale").get_to(c.init_scale);
  j.at("temperature").get_to(c.temperature);
}

struct DualEncoder {
  DualEncoderConfig cfg;
  ParamStore params;
  bool trained = false;
};

inline DualEncoder init_dual_encoder(const DualEncoderConfig& cfg, uint64_t seed) {
  DualEncoder enc;
  enc.cfg = cfg;
  Rng rng(derive_seed(seed, 0xD0A1));
  fill_gaussian(enc.params.add("txt_emb", {static_cast<size_t>(cfg.vocab_size),
                                           static_cast<size_t>(cfg.embed_dim)}),
                rng, cfg.init_scale);
  fill_gaussian(enc.params.add("vid_proj", {static_cast<size_t>(cfg.feature_dim),
                                            static_cast<size_t>(cfg.embed_dim)}),
                rng, cfg.init_scale);
  return enc;
}

namespace detail {

constexpr double kNormEps2 = 1e-24;

inline std::vector<double> l2_normalize(const std::vector<double>& u) {
  double ss = kNormEps2;
  for (double v : u) ss += v * v;
  double inv = 1.0 / std::sqrt(ss);
  std::vector<double> out(u.size());
  for (size_t i = 0; i < u.size(); ++i) out[i] = u[i] * inv;
  return out;
}

// du for t = u / sqrt(|u|^2 + eps^2) given dt.
inline std::vector<double> l2_normalize_backward(const std::vector<double>& u,
                                                 const std::vector<double>& dt) {
  double ss = kNormEps2;
  for (double v : u) ss += v * v;
  double norm = std::sqrt(ss);
  double udot = 0.0;
  for (size_t i = 0; i < u.size(); ++i) udot += u[i] * dt[i];
  std::vector<double> du(u.size());
  for (size_t i = 0; i < u.size(); ++i) du[i] = dt[i] / norm - u[i] * udot / (norm * norm * norm);
  return du;
}

}  // namespace detail

inline std::vector<double> encode_text_raw(const DualEncoder& enc, const TokenSeq& tokens) {
  require(!tokens.empty(), "dual_encoder: empty token sequence");
  const Tensor& emb = enc.params.at("txt_emb");
  size_t e = static_cast<size_t>(enc.cfg.embed_dim);
  std::vector<double> u(e, 0.0);
  for (int t : tokens) {
    require(t >= 0 && t < enc.cfg.vocab_size, "dual_encoder: token id out of range");
    for (size_t k = 0; k < e; ++k) u[k] += emb.at(static_cast<size_t>(t), k);
  }
  for (auto& v : u) v /= static_cast<double>(tokens.size());
  return u;
}

inline std::vector<double> encode_video_raw(const DualEncoder& enc, const SyntheticVideo& video) {
  require(!video.frames.empty(), "dual_encoder: video has no frames");
  const Tensor& proj = enc.params.at("vid_proj");
  size_t e = static_cast<size_t>(enc.cfg.embed_dim);
  std::vector<double> u(e, 0.0);
  for (const auto& frame : video.frames) {
    require(static_cast<int>(frame.size()) == enc.cfg.feature_dim,
            "dual_encoder: frame dimension mismatch");
    for (size_t d = 0; d < frame.size(); ++d)
      for (size_t k = 0; k < e; ++k) u[k] += frame[d] * proj.at(d, k);
  }
  for (auto& v : u) v /= static_cast<double>(video.frames.size());
  return u;
}

inline std::vector<double> encode_text(const DualEncoder& enc, const TokenSeq& tokens) {
  return detail::l2_normalize(encode_text_raw(enc, tokens));
}

inline std::vector<double> encode_video(const DualEncoder& enc, const SyntheticVideo& video) {
  return detail::l2_normalize(encode_video_raw(enc, video));
}

// Symmetric in-batch contrastive loss over matched (query, video) pairs:
// mean of the two softmax cross-entropies over rows and columns.
inline double dual_encoder_loss(const DualEncoder& enc, const RetrievalDataset& ds,
                                GradStore* grads = nullptr) {
  size_t n = ds.videos.size();
  require(n >= 2, "dual_encoder_loss: need at least 2 pairs");
  size_t e = static_cast<size_t>(enc.cfg.embed_dim);
  double tau = enc.cfg.temperature;

  std::vector<std::vector<double>> t_raw(n), v_raw(n), t_emb(n), v_emb(n);
  for (size_t i = 0; i < n; ++i) {
    t_raw[i] = encode_text_raw(enc, ds.queries[i].tokens);
    v_raw[i] = encode_video_raw(enc, ds.videos[i]);
    t_emb[i] = detail::l2_normalize(t_raw[i]);
    v_emb[i] = detail::l2_normalize(v_raw[i]);
  }

  std::vector<std::vector<double>> sims(n, std::vector<double>(n));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (size_t k = 0; k < e; ++k) dot += t_emb[i][k] * v_emb[j][k];
      sims[i][j] = dot / tau;
    }

  double loss = 0.0;
  std::vector<std::vector<double>> dsims(n, std::vector<double>(n, 0.0));
  double inv2n = 1.0 / (2.0 * static_cast<double>(n));
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> row = log_softmax(sims[i]);
    loss -= inv2n * row[i];
    if (grads)
      for (size_t j = 0; j < n; ++j)
        dsims[i][j] += inv2n * (std::exp(row[j]) - (i == j ? 1.0 : 0.0));
  }
  for (size_t j = 0; j < n; ++j) {
    std::vector<double> col(n);
    for (size_t i = 0; i < n; ++i) col[i] = sims[i][j];
    std::vector<double> cls = log_softmax(col);
    loss -= inv2n * cls[j];
    if (grads)
      for (size_t i = 0; i < n; ++i)
        dsims[i][j] += inv2n * (std::exp(cls[i]) - (i == j ? 1.0 : 0.0));
  }
  if (!grads) return loss;

  Tensor& g_emb = grads->at("txt_emb");
  Tensor& g_proj = grads->at("vid_proj");
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> dt(e, 0.0), dv(e, 0.0);
    for (size_t j = 0; j < n; ++j)
      for (size_t k = 0; k < e; ++k) dt[k] += dsims[i][j] * v_emb[j][k] / tau;
    for (size_t j = 0; j < n; ++j)
      for (size_t k = 0; k < e; ++k) dv[k] += dsims[j][i] * t_emb[j][k] / tau;

    std::vector<double> dt_raw = detail::l2_normalize_backward(t_raw[i], dt);
    const TokenSeq& toks = ds.queries[i].tokens;
    double inv_len = 1.0 / static_cast<double>(toks.size());
    for (int t : toks)
      for (size_t k = 0; k < e; ++k)
        g_emb.at(static_cast<size_t>(t), k) += dt_raw[k] * inv_len;

    std::vector<double> dv_raw = detail::l2_normalize_backward(v_raw[i], dv);
    size_t f_dim = static_cast<size_t>(enc.cfg.feature_dim);
    std::vector<double> mean_frame(f_dim, 0.0);
    for (const auto& frame : ds.videos[i].frames)
      for (size_t d = 0; d < f_dim; ++d) mean_frame[d] += frame[d];
    for (auto& mv : mean_frame) mv /= static_cast<double>(ds.videos[i].frames.size());
    for (size_t d = 0; d < f_dim; ++d)
      for (size_t k = 0; k < e; ++k) g_proj.at(d, k) += dv_raw[k] * mean_frame[d];
  }
  return loss;
}

struct EncoderTrainOptions {
  int epochs = 60;
  double lr = 0.05;
  OptimRule rule = OptimRule::adam;
  uint64_t seed = 0;
};

inline std::vector<double> train_dual_encoder(DualEncoder& enc, const RetrievalDataset& ds,
                                              const EncoderTrainOptions& opt) {
  OptimConfig ocfg;
  ocfg.lr = opt.lr;
  ocfg.rule = opt.rule;
  OptimState state = make_optim_state(enc.params, ocfg);
  std::vector<double> trace;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    GradStore grads = enc.params.zeros_like();
    double loss = dual_encoder_loss(enc, ds, &grads);
    require_finite(loss, "train_dual_encoder loss");
    trace.push_back(loss);
    optimizer_step(enc.params, grads, state);
  }
  enc.trained = true;
  return trace;
}

}  // namespace dgdpo
