#pragma once

// Autoregressive token captioner conditioned on mean-pooled projected video
// frames. Exact sequence log-probabilities, temperature sampling, SFT
// training, and frozen reference snapshots. Gradients are hand-derived;
// grad_check covers them in the tests.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgdpo/common.hpp"
#include "dgdpo/corpus.hpp"
#include "dgdpo/numerics.hpp"
#include "dgdpo/tensor.hpp"

namespace dgdpo {

struct CaptionerConfig {
  int vocab_size = 64;
  int embed_dim = 24;
  int feature_dim = 16;
  int max_caption_len = 16;  // content tokens; EOS is forced at the limit
  double init_scale = 0.1;
};

inline void to_json(nlohmann::json& j, const CaptionerConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"embed_dim", c.embed_dim},
                     {"feature_dim", c.feature_dim},
                     {"max_caption_len", c.max_caption_len},
                     {"init_scale", c.init_scale}};
}

inline void from_json(const nlohmann::json& j, CaptionerConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("feature_dim").get_to(c.feature_dim);
  j.at("max_caption_len").get_to(c.max_caption_len);
  j.at("init_scale").get_to(c.init_scale);
}

struct CaptionerModel {
  CaptionerConfig cfg;
  ParamStore params;
};

// Parameter count is a closed form of the config; tests pin it.
inline size_t captioner_param_count(const CaptionerConfig& c) {
  size_t v = static_cast<size_t>(c.vocab_size);
  size_t e = static_cast<size_t>(c.embed_dim);
  size_t f = static_cast<size_t>(c.feature_dim);
  size_t l = static_cast<size_t>(c.max_caption_len);
  return v * e + (l + 1) * e + f * e + e * e + e + v * e + v;
}

inline CaptionerModel init_captioner(const CaptionerConfig& cfg, uint64_t seed) {
  require(cfg.vocab_size >= 2 && cfg.embed_dim >= 1 && cfg.feature_dim >= 1 &&
              cfg.max_caption_len >= 1,
          "init_captioner: invalid config");
  CaptionerModel m;
  m.cfg = cfg;
  size_t v = static_cast<size_t>(cfg.vocab_size);
  size_t e = static_cast<size_t>(cfg.embed_dim);
  size_t f = static_cast<size_t>(cfg.feature_dim);
  size_t l = static_cast<size_t>(cfg.max_caption_len);
  Rng rng(derive_seed(seed, 0xCA9));
  fill_gaussian(m.params.add("tok_emb", {v, e}), rng, cfg.init_scale);
  fill_gaussian(m.params.add("pos_emb", {l + 1, e}), rng, cfg.init_scale);
  fill_gaussian(m.params.add("vid_proj", {f, e}), rng, cfg.init_scale);
  fill_gaussian(m.params.add("hid_w", {e, e}), rng, cfg.init_scale);
  m.params.add("hid_b", {e});
  fill_gaussian(m.params.add("out_w", {v, e}), rng, cfg.init_scale);
  m.params.add("out_b", {v});
  return m;
}

namespace detail {

inline std::vector<double> video_context(const CaptionerModel& m, const SyntheticVideo& video) {
  const Tensor& proj = m.params.at("vid_proj");
  size_t e = static_cast<size_t>(m.cfg.embed_dim);
  size_t f_dim = static_cast<size_t>(m.cfg.feature_dim);
  std::vector<double> ctx(e, 0.0);
  require(!video.frames.empty(), "captioner: video has no frames");
  for (const auto& frame : video.frames) {
    require(frame.size() == f_dim, "captioner: frame dimension mismatch");
    for (size_t d = 0; d < f_dim; ++d)
      for (size_t k = 0; k < e; ++k) ctx[k] += frame[d] * proj.at(d, k);
  }
  for (auto& x : ctx) x /= static_cast<double>(video.frames.size());
  return ctx;
}

// Logits for the step that predicts the token at position `pos` given the
// previous token. Optionally exposes the hidden activations and input.
inline std::vector<double> step_logits(const CaptionerModel& m, const std::vector<double>& vctx,
                                       int prev_token, int pos, std::vector<double>* x_out,
                                       std::vector<double>* h_out) {
  size_t e = static_cast<size_t>(m.cfg.embed_dim);
  size_t v = static_cast<size_t>(m.cfg.vocab_size);
  const Tensor& tok_emb = m.params.at("tok_emb");
  const Tensor& pos_emb = m.params.at("pos_emb");
  const Tensor& hid_w = m.params.at("hid_w");
  const Tensor& hid_b = m.params.at("hid_b");
  const Tensor& out_w = m.params.at("out_w");
  const Tensor& out_b = m.params.at("out_b");

  std::vector<double> x(e);
  for (size_t k = 0; k < e; ++k)
    x[k] = tok_emb.at(static_cast<size_t>(prev_token), k) +
           pos_emb.at(static_cast<size_t>(pos), k) + vctx[k];
  std::vector<double> h(e);
  for (size_t r = 0; r < e; ++r) {
    double acc = hid_b.at(r);
    for (size_t c = 0; c < e; ++c) acc += hid_w.at(r, c) * x[c];
    h[r] = std::tanh(acc);
  }
  std::vector<double> logits(v);
  for (size_t r = 0; r < v; ++r) {
    double acc = out_b.at(r);
    for (size_t c = 0; c < e; ++c) acc += out_w.at(r, c) * h[c];
    logits[r] = acc;
  }
  if (x_out) *x_out = std::move(x);
  if (h_out) *h_out = std::move(h);
  return logits;
}

inline void check_tokens(const CaptionerModel& m, const TokenSeq& tokens) {
  require(!tokens.empty(), "captioner: empty token sequence");
  for (int t : tokens)
    require(t >= 0 && t < m.cfg.vocab_size, "captioner: token id out of range");
}

}  // namespace detail

// Sum over tokens of log p(c_k | c_<k, v) under teacher forcing, starting
// from BOS. No length normalization.
inline double caption_logprob(const CaptionerModel& m, const SyntheticVideo& video,
                              const TokenSeq& tokens) {
  detail::check_tokens(m, tokens);
  require(static_cast<int>(tokens.size()) <= m.cfg.max_caption_len + 1,
          "captioner: sequence exceeds max length");
  std::vector<double> vctx = detail::video_context(m, video);
  double total = 0.0;
  int prev = tok::kBos;
  for (size_t t = 0; t < tokens.size(); ++t) {
    std::vector<double> logits =
        detail::step_logits(m, vctx, prev, static_cast<int>(t), nullptr, nullptr);
    total += log_softmax(logits)[static_cast<size_t>(tokens[t])];
    prev = tokens[t];
  }
  return total;
}

// Accumulates coeff * d caption_logprob / d params into grads; returns the
// log-probability (same value as caption_logprob).
inline double caption_logprob_backward(const CaptionerModel& m, const SyntheticVideo& video,
                                       const TokenSeq& tokens, double coeff, GradStore& grads) {
  detail::check_tokens(m, tokens);
  require(static_cast<int>(tokens.size()) <= m.cfg.max_caption_len + 1,
          "captioner: sequence exceeds max length");
  size_t e = static_cast<size_t>(m.cfg.embed_dim);
  size_t v = static_cast<size_t>(m.cfg.vocab_size);
  std::vector<double> vctx = detail::video_context(m, video);
  const Tensor& hid_w = m.params.at("hid_w");
  const Tensor& out_w = m.params.at("out_w");
  Tensor& g_tok = grads.at("tok_emb");
  Tensor& g_pos = grads.at("pos_emb");
  Tensor& g_proj = grads.at("vid_proj");
  Tensor& g_hw = grads.at("hid_w");
  Tensor& g_hb = grads.at("hid_b");
  Tensor& g_ow = grads.at("out_w");
  Tensor& g_ob = grads.at("out_b");

  std::vector<double> d_vctx(e, 0.0);
  double total = 0.0;
  int prev = tok::kBos;
  for (size_t t = 0; t < tokens.size(); ++t) {
    std::vector<double> x, h;
    std::vector<double> logits =
        detail::step_logits(m, vctx, prev, static_cast<int>(t), &x, &h);
    std::vector<double> ls = log_softmax(logits);
    int y = tokens[t];
    total += ls[static_cast<size_t>(y)];

    // d logprob / d logit_j = coeff * (1{j==y} - p_j)
    std::vector<double> dh(e, 0.0);
    for (size_t j = 0; j < v; ++j) {
      double dj = coeff * ((static_cast<int>(j) == y ? 1.0 : 0.0) - std::exp(ls[j]));
      g_ob.at(j) += dj;
      for (size_t c = 0; c < e; ++c) {
        g_ow.at(j, c) += dj * h[c];
        dh[c] += dj * out_w.at(j, c);
      }
    }
    std::vector<double> dx(e, 0.0);
    for (size_t r = 0; r < e; ++r) {
      double dpre = dh[r] * (1.0 - h[r] * h[r]);
      g_hb.at(r) += dpre;
      for (size_t c = 0; c < e; ++c) {
        g_hw.at(r, c) += dpre * x[c];
        dx[c] += dpre * hid_w.at(r, c);
      }
    }
    for (size_t c = 0; c < e; ++c) {
      g_tok.at(static_cast<size_t>(prev), c) += dx[c];
      g_pos.at(t, c) += dx[c];
      d_vctx[c] += dx[c];
    }
    prev = y;
  }

  // vctx = mean_f proj^T frame_f
  size_t f_dim = static_cast<size_t>(m.cfg.feature_dim);
  std::vector<double> mean_frame(f_dim, 0.0);
  for (const auto& frame : video.frames)
    for (size_t d = 0; d < f_dim; ++d) mean_frame[d] += frame[d];
  for (auto& mval : mean_frame) mval /= static_cast<double>(video.frames.size());
  for (size_t d = 0; d < f_dim; ++d)
    for (size_t k = 0; k < e; ++k) g_proj.at(d, k) += d_vctx[k] * mean_frame[d];
  return total;
}

struct SampledCaption {
  TokenSeq tokens;  // BOS-initiated, EOS-terminated
  std::vector<double> per_token_logprob;  // temperature-1 log-probs, content + EOS
  double total_logprob = 0.0;
  double temperature = 1.0;
  int sample_index = 0;

  // Strips the leading BOS and trailing EOS; any token the model sampled in
  // between is content, reserved ids included.
  TokenSeq content() const {
    if (tokens.size() <= 2) return {};
    return TokenSeq(tokens.begin() + 1, tokens.end() - 1);
  }
};

// Ancestral sampling with logits divided by temperature; greedy decode below
// 1e-6. Recorded log-probs are always the temperature-1 model distribution.
inline std::vector<SampledCaption> sample_captions(const CaptionerModel& m,
                                                   const SyntheticVideo& video, int num_samples,
                                                   double temperature, uint64_t seed) {
  require(num_samples >= 1, "sample_captions: need K >= 1");
  require(temperature > 0.0, "sample_captions: temperature must be > 0");
  std::vector<double> vctx = detail::video_context(m, video);
  std::vector<SampledCaption> out;
  for (int k = 0; k < num_samples; ++k) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(k) + 0x5A17));
    SampledCaption cap;
    cap.temperature = temperature;
    cap.sample_index = k;
    cap.tokens.push_back(tok::kBos);
    int prev = tok::kBos;
    for (int pos = 0; pos <= m.cfg.max_caption_len; ++pos) {
      std::vector<double> logits = detail::step_logits(m, vctx, prev, pos, nullptr, nullptr);
      std::vector<double> ls = log_softmax(logits);
      int chosen;
      if (pos == m.cfg.max_caption_len) {
        chosen = tok::kEos;  // forced at the limit
      } else if (temperature < 1e-6) {
        chosen = 0;
        for (size_t j = 1; j < logits.size(); ++j)
          if (logits[j] > logits[static_cast<size_t>(chosen)]) chosen = static_cast<int>(j);
      } else {
        std::vector<double> scaled(logits.size());
        for (size_t j = 0; j < logits.size(); ++j) scaled[j] = logits[j] / temperature;
        std::vector<double> sls = log_softmax(scaled);
        double u = rng.uniform();
        double cum = 0.0;
        chosen = static_cast<int>(logits.size()) - 1;
        for (size_t j = 0; j < sls.size(); ++j) {
          cum += std::exp(sls[j]);
          if (u < cum) {
            chosen = static_cast<int>(j);
            break;
          }
        }
      }
      cap.tokens.push_back(chosen);
      cap.per_token_logprob.push_back(ls[static_cast<size_t>(chosen)]);
      cap.total_logprob += ls[static_cast<size_t>(chosen)];
      if (chosen == tok::kEos) break;
      prev = chosen;
    }
    out.push_back(std::move(cap));
  }
  return out;
}

// Scored sequence for training objectives: content plus the terminal EOS.
inline TokenSeq with_eos(const TokenSeq& content) {
  TokenSeq out = content;
  out.push_back(tok::kEos);
  return out;
}

// Mean token negative log-likelihood of the caption (terminal EOS included).
inline double sft_loss(const CaptionerModel& m, const SyntheticVideo& video,
                       const TokenSeq& caption) {
  require(!caption.empty(), "sft_loss: empty caption");
  TokenSeq scored = with_eos(caption);
  return -caption_logprob(m, video, scored) / static_cast<double>(scored.size());
}

inline double sft_loss_backward(const CaptionerModel& m, const SyntheticVideo& video,
                                const TokenSeq& caption, double coeff, GradStore& grads) {
  require(!caption.empty(), "sft_loss: empty caption");
  TokenSeq scored = with_eos(caption);
  double inv = -coeff / static_cast<double>(scored.size());
  double lp = caption_logprob_backward(m, video, scored, inv, grads);
  return -lp / static_cast<double>(scored.size());
}

struct SftOptions {
  int epochs = 30;
  double lr = 0.05;
  int batch_size = 16;
  OptimRule rule = OptimRule::adam;
  uint64_t seed = 0;
};

// Minibatch SFT over (video, gt caption) pairs; returns the per-epoch mean
// loss trace.
inline std::vector<double> train_sft(CaptionerModel& m, const RetrievalDataset& ds,
                                     const SftOptions& opt) {
  require(!ds.videos.empty(), "train_sft: empty dataset");
  OptimConfig ocfg;
  ocfg.lr = opt.lr;
  ocfg.rule = opt.rule;
  OptimState state = make_optim_state(m.params, ocfg);
  std::vector<double> trace;
  std::vector<size_t> order(ds.videos.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng rng(derive_seed(opt.seed, 0xE90 + static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    double epoch_loss = 0.0;
    size_t count = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opt.batch_size)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(opt.batch_size));
      GradStore grads = m.params.zeros_like();
      double scale = 1.0 / static_cast<double>(end - start);
      for (size_t i = start; i < end; ++i) {
        size_t idx = order[i];
        double loss = sft_loss_backward(m, ds.videos[idx], ds.gt_captions[idx].tokens, scale,
                                        grads);
        require_finite(loss, "train_sft loss");
        epoch_loss += loss;
        ++count;
      }
      optimizer_step(m.params, grads, state);
    }
    trace.push_back(epoch_loss / static_cast<double>(count));
  }
  return trace;
}

struct ReferenceSnapshot {
  CaptionerConfig cfg;
  ParamStore params;
};

inline ReferenceSnapshot snapshot_reference(const CaptionerModel& m) {
  return ReferenceSnapshot{m.cfg, m.params};
}

inline CaptionerModel model_from_snapshot(const ReferenceSnapshot& snap) {
  return CaptionerModel{snap.cfg, snap.params};
}

// ---------------------------------------------------------------------------
// Caption dumps: JSON Lines, content tokens only.

struct CaptionRecord {
  int video_id = 0;
  int sample_index = 0;
  TokenSeq tokens;  // content tokens (no BOS/EOS)
  double total_logprob = 0.0;
  double temperature = 1.0;
  uint64_t seed = 0;
};

inline void write_caption_dump(const std::vector<CaptionRecord>& records,
                               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_caption_dump: cannot open " + path);
  for (const auto& r : records) {
    nlohmann::json j{{"video_id", r.video_id},       {"sample_index", r.sample_index},
                     {"tokens", r.tokens},           {"total_logprob", r.total_logprob},
                     {"temperature", r.temperature}, {"seed", r.seed}};
    out << j.dump() << "\n";
  }
}

inline std::vector<CaptionRecord> read_caption_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_caption_dump: cannot open " + path);
  std::vector<CaptionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    CaptionRecord r;
    r.video_id = j.at("video_id").get<int>();
    r.sample_index = j.at("sample_index").get<int>();
    r.tokens = j.at("tokens").get<TokenSeq>();
    r.total_logprob = j.at("total_logprob").get<double>();
    r.temperature = j.at("temperature").get<double>();
    r.seed = j.at("seed").get<uint64_t>();
    out.push_back(std::move(r));
  }
  return out;
}

// Samples K captions per video and collects dump records.
inline std::vector<CaptionRecord> sample_caption_dump(const CaptionerModel& m,
                                                      const RetrievalDataset& ds, int k,
                                                      double temperature, uint64_t seed) {
  std::vector<CaptionRecord> records;
  for (const auto& video : ds.videos) {
    auto samples = sample_captions(
        m, video, k, temperature,
        derive_seed(seed, static_cast<uint64_t>(video.video_id)));
    for (const auto& s : samples) {
      CaptionRecord r;
      r.video_id = video.video_id;
      r.sample_index = s.sample_index;
      r.tokens = s.content();
      r.total_logprob = s.total_logprob;
      r.temperature = temperature;
      r.seed = seed;
      // Retrieval-side consumers need a non-empty caption; an immediate EOS
      // sample degenerates to the PAD token.
      if (r.tokens.empty()) {
        r.tokens.push_back(tok::kPad);
        r.total_logprob = caption_logprob(m, video, with_eos(r.tokens));
      }
      records.push_back(std::move(r));
    }
  }
  return records;
}

}  // namespace dgdpo
