#pragma once

// The implicit DPO reward and the dual-group loss: every preference pair
// contributes -lambda_kind * log sigma(r_chosen - r_rejected), where local
// pairs carry 1 - lambda_cross and cross pairs lambda_cross. Per-sample
// log-probs are computed once per batch and shared across the pairs that
// touch them; gradients flow only into the policy.

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgdpo/captioner.hpp"
#include "dgdpo/common.hpp"
#include "dgdpo/corpus.hpp"
#include "dgdpo/metrics.hpp"
#include "dgdpo/numerics.hpp"
#include "dgdpo/preference.hpp"

namespace dgdpo {

struct DpoConfig {
  double beta = 0.1;
  double gamma = 2.0;
  double lambda_cross = 0.1;  // lambda for i != j; local pairs carry 1 - lambda_cross
  PairStrategy strategy = PairStrategy::adjacent;
  std::string preference_signal = "retrieval_masked";  // retrieval_unmasked | bleu

  double lambda_same() const { return 1.0 - lambda_cross; }
  double lambda_for(PairKind kind) const {
    return kind == PairKind::cross ? lambda_cross : lambda_same();
  }
};

inline void to_json(nlohmann::json& j, const DpoConfig& c) {
  j = nlohmann::json{{"beta", c.beta},
                     {"gamma", c.gamma},
                     {"lambda_cross", c.lambda_cross},
                     {"strategy", to_string(c.strategy)},
                     {"preference_signal", c.preference_signal}};
}

inline void from_json(const nlohmann::json& j, DpoConfig& c) {
  j.at("beta").get_to(c.beta);
  j.at("gamma").get_to(c.gamma);
  j.at("lambda_cross").get_to(c.lambda_cross);
  c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  j.at("preference_signal").get_to(c.preference_signal);
}

inline void validate(const DpoConfig& c) {
  require(c.beta > 0.0, "dpo: beta must be > 0");
  require(c.gamma >= 0.0, "dpo: gamma must be >= 0");
  require(c.lambda_cross >= 0.0 && c.lambda_cross <= 1.0, "dpo: lambda_cross outside [0,1]");
}

// r_hat(x, y) = beta * log(pi_theta(y|x) / pi_ref(y|x))
inline double implicit_reward(const CaptionerModel& policy, const ReferenceSnapshot& ref,
                              const SyntheticVideo& video, const TokenSeq& caption,
                              double beta) {
  require(beta > 0.0, "implicit_reward: beta must be > 0");
  CaptionerModel ref_model = model_from_snapshot(ref);
  return beta *
         (caption_logprob(policy, video, caption) - caption_logprob(ref_model, video, caption));
}

struct PairLossRecord {
  int pair_index = 0;
  double r_chosen = 0.0;
  double r_rejected = 0.0;
  double margin = 0.0;  // r_chosen - r_rejected
  double loss_contribution = 0.0;
  double lambda = 0.0;
};

struct DpoBatchStats {
  size_t n_local = 0;
  size_t n_cross = 0;
  double local_loss_sum = 0.0;  // unweighted -log sigma(margin) sums
  double cross_loss_sum = 0.0;
  size_t policy_logprob_evals = 0;  // one per distinct (video, caption) in the batch
  std::vector<PairLossRecord> records;
};

// Mean over pairs of -lambda_kind * log sigma(margin). If `grads` is non-null
// the policy gradient is accumulated; the reference is never touched.
inline double dg_dpo_batch_loss(const CaptionerModel& policy, const ReferenceSnapshot& ref,
                                const PairBatch& batch, const CaptionPool& pool,
                                const RetrievalDataset& ds, const DpoConfig& cfg,
                                GradStore* grads = nullptr, DpoBatchStats* stats = nullptr) {
  validate(cfg);
  require(!batch.pairs.empty(), "dg_dpo_batch_loss: empty batch");
  CaptionerModel ref_model = model_from_snapshot(ref);

  // one log-prob evaluation per distinct (video, sample) for both models
  std::map<std::pair<int, int>, double> lp_policy, lp_ref;
  for (const auto& key : batch.unique_samples) {
    const CaptionRecord& rec = pool.at(key.first, key.second);
    const SyntheticVideo& video = ds.videos.at(static_cast<size_t>(key.first));
    TokenSeq scored = with_eos(rec.tokens);
    lp_policy[key] = caption_logprob(policy, video, scored);
    lp_ref[key] = caption_logprob(ref_model, video, scored);
    if (stats) ++stats->policy_logprob_evals;
  }

  double inv_b = 1.0 / static_cast<double>(batch.pairs.size());
  double loss = 0.0;
  std::map<std::pair<int, int>, double> coeff;  // dL/d lp_policy(sample)
  int pair_index = 0;
  for (const auto& p : batch.pairs) {
    std::pair<int, int> w{p.chosen_video, p.chosen_sample};
    std::pair<int, int> l{p.rejected_video, p.rejected_sample};
    double r_w = cfg.beta * (lp_policy.at(w) - lp_ref.at(w));
    double r_l = cfg.beta * (lp_policy.at(l) - lp_ref.at(l));
    double margin = r_w - r_l;
    double lambda = cfg.lambda_for(p.kind);
    double pair_loss = -lambda * log_sigmoid(margin);
    loss += inv_b * pair_loss;

    if (grads) {
      // d(-lambda log sigma(m))/dm = -lambda * sigma(-m)
      double dmargin = inv_b * (-lambda * sigmoid(-margin));
      coeff[w] += dmargin * cfg.beta;
      coeff[l] -= dmargin * cfg.beta;
    }
    if (stats) {
      double unweighted = -log_sigmoid(margin);
      if (p.kind == PairKind::local) {
        ++stats->n_local;
        stats->local_loss_sum += unweighted;
      } else {
        ++stats->n_cross;
        stats->cross_loss_sum += unweighted;
      }
      stats->records.push_back(
          PairLossRecord{pair_index, r_w, r_l, margin, pair_loss, lambda});
    }
    ++pair_index;
  }

  if (grads) {
    for (const auto& [key, c] : coeff) {
      if (c == 0.0) continue;
      const CaptionRecord& rec = pool.at(key.first, key.second);
      const SyntheticVideo& video = ds.videos.at(static_cast<size_t>(key.first));
      caption_logprob_backward(policy, video, with_eos(rec.tokens), c, *grads);
    }
  }
  return loss;
}

struct DpoTraceRow {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_local_loss = 0.0;
  double mean_cross_loss = 0.0;
  size_t n_local = 0;
  size_t n_cross = 0;
};

struct DpoTrainOptions {
  int epochs = 15;
  double lr = 0.02;
  int batch_size = 32;
  OptimRule rule = OptimRule::adam;
  uint64_t seed = 0;
};

inline std::vector<DpoTraceRow> train_dg_dpo(CaptionerModel& policy, const ReferenceSnapshot& ref,
                                             const PreferenceDataset& prefs,
                                             const CaptionPool& pool, const RetrievalDataset& ds,
                                             const DpoConfig& cfg, const DpoTrainOptions& opt) {
  require(!prefs.pairs.empty(), "train_dg_dpo: empty preference dataset");
  OptimConfig ocfg;
  ocfg.lr = opt.lr;
  ocfg.rule = opt.rule;
  OptimState state = make_optim_state(policy.params, ocfg);
  std::vector<DpoTraceRow> trace;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    auto batches = pair_batches(prefs.pairs, opt.batch_size,
                                derive_seed(opt.seed, 0xD90 + static_cast<uint64_t>(epoch)));
    DpoTraceRow row;
    row.epoch = epoch;
    double loss_sum = 0.0;
    DpoBatchStats epoch_stats;
    for (const auto& batch : batches) {
      GradStore grads = policy.params.zeros_like();
      double loss = dg_dpo_batch_loss(policy, ref, batch, pool, ds, cfg, &grads, &epoch_stats);
      require_finite(loss, "train_dg_dpo loss");
      loss_sum += loss;
      optimizer_step(policy.params, grads, state);
    }
    row.mean_loss = loss_sum / static_cast<double>(batches.size());
    row.n_local = epoch_stats.n_local;
    row.n_cross = epoch_stats.n_cross;
    row.mean_local_loss =
        epoch_stats.n_local ? epoch_stats.local_loss_sum / static_cast<double>(epoch_stats.n_local)
                            : 0.0;
    row.mean_cross_loss =
        epoch_stats.n_cross ? epoch_stats.cross_loss_sum / static_cast<double>(epoch_stats.n_cross)
                            : 0.0;
    trace.push_back(row);
  }
  return trace;
}

inline void write_dpo_trace_csv(const std::vector<DpoTraceRow>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_dpo_trace_csv: cannot open " + path);
  out << "epoch,mean_loss,mean_local_loss,mean_cross_loss,n_local,n_cross\n";
  for (const auto& r : trace)
    out << r.epoch << "," << r.mean_loss << "," << r.mean_local_loss << ","
        << r.mean_cross_loss << "," << r.n_local << "," << r.n_cross << "\n";
}

// BLEU-based preference signal: each candidate is scored against its own
// video's query as the single reference; the pairing pipeline is unchanged.
inline std::vector<ScoredCandidate> bleu_preference_scores(const CaptionPool& pool,
                                                           const RetrievalDataset& ds) {
  std::vector<ScoredCandidate> out;
  for (const auto& r : pool.records()) {
    require(r.video_id >= 0 && r.video_id < static_cast<int>(ds.queries.size()),
            "bleu_preference_scores: caption references unknown video");
    const TokenSeq& reference = ds.queries[static_cast<size_t>(r.video_id)].tokens;
    require(!reference.empty(), "bleu_preference_scores: empty reference");
    ScoredCandidate c;
    c.video_id = r.video_id;
    c.sample_index = r.sample_index;
    c.tokens = r.tokens;
    c.s_p = bleu(r.tokens, {reference});
    out.push_back(std::move(c));
  }
  assign_global_ranks(out);
  return out;
}

}  // namespace dgdpo
