#pragma once

// End-to-end experiment orchestration: a resolved config drives a stage
// graph (gen-data -> train-retriever -> train-captioner -> sample-captions ->
// build-prefs -> train-dpo -> evaluate) with every intermediate persisted to
// disk, a manifest of artifact hashes, and a cross-seed aggregate report.
// Stages communicate only through files, so any suffix of the graph can be
// deleted and re-run to identical hashes.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgdpo/captioner.hpp"
#include "dgdpo/checkpoint.hpp"
#include "dgdpo/common.hpp"
#include "dgdpo/corpus.hpp"
#include "dgdpo/dpo.hpp"
#include "dgdpo/encoder.hpp"
#include "dgdpo/eval.hpp"
#include "dgdpo/metrics.hpp"
#include "dgdpo/preference.hpp"
#include "dgdpo/retriever.hpp"

namespace dgdpo {

// ---------------------------------------------------------------------------
// Configuration

struct SplitSpec {
  double train_fraction = 0.8;  // full -> trainval / test
  double val_fraction = 0.2;    // trainval -> train / val
};

struct RetrieverStageConfig {
  RetrieverConfig model;
  int epochs = 500;
  double lr = 0.05;
  int negatives = 8;
  double aug_frame_noise = 0.1;
  double aug_token_dropout = 0.15;
  // the evaluation retrievers train on video-visible triplets only; the
  // preference scorer gets additional masked views so the video-free score
  // it must produce at inference is a trained behavior
  double masked_view_weight = 0.0;
  double scorer_masked_weight = 1.0;
};

struct CaptionerStageConfig {
  CaptionerConfig model;
  int pretrain_epochs = 3;  // light base pass; its checkpoint is the zero-shot captioner
  // the base pass trains on the query renderings (partial, distractor-laden
  // descriptions) so zero-shot captions carry a generic style; the extended
  // SFT pass uses the reference captions
  bool pretrain_on_queries = false;
  int sft_epochs = 60;      // additional epochs for the extended-SFT row
  double lr = 0.05;
  int batch_size = 16;
  int k_samples = 3;                // captions per video for preference data
  double sample_temperature = 0.8;  // candidate-pool sampling
  double eval_temperature = 0.5;    // evaluation-time sampling
  int eval_samples = 2;             // captions per video at evaluation, averaged
};

struct EncoderStageConfig {
  DualEncoderConfig model;
  int epochs = 30;
  double lr = 0.05;
};

struct DpoStageConfig {
  DpoConfig dpo;
  int epochs = 6;  // upper bound; the shipped checkpoint is picked on validation
  double lr = 0.001;
  int batch_size = 32;
  // dual-group pairs are built within deterministic shards of the globally
  // ranked pool (the batch-aggregated universe); SG pairs are pool-wide
  int shard_size = 32;
};

struct EvalStageConfig {
  int topk = 16;
  std::vector<double> alpha_sweep{0.0, 0.25, 0.5, 1.0, 2.0};
};

struct ExperimentConfig {
  std::string out_dir = "runs/default";
  std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
  CorpusConfig corpus;
  SplitSpec split;
  RetrieverStageConfig retriever;
  CaptionerStageConfig captioner;
  EncoderStageConfig encoder;
  DpoStageConfig dpo;
  EvalStageConfig eval;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json corpus = c.corpus;
  nlohmann::json retr{{"model", c.retriever.model},
                      {"epochs", c.retriever.epochs},
                      {"lr", c.retriever.lr},
                      {"negatives", c.retriever.negatives},
                      {"aug_frame_noise", c.retriever.aug_frame_noise},
                      {"aug_token_dropout", c.retriever.aug_token_dropout},
                      {"masked_view_weight", c.retriever.masked_view_weight},
                      {"scorer_masked_weight", c.retriever.scorer_masked_weight}};
  nlohmann::json cap{{"model", c.captioner.model},
                     {"pretrain_epochs", c.captioner.pretrain_epochs},
                     {"pretrain_on_queries", c.captioner.pretrain_on_queries},
                     {"sft_epochs", c.captioner.sft_epochs},
                     {"lr", c.captioner.lr},
                     {"batch_size", c.captioner.batch_size},
                     {"k_samples", c.captioner.k_samples},
                     {"sample_temperature", c.captioner.sample_temperature},
                     {"eval_temperature", c.captioner.eval_temperature},
                     {"eval_samples", c.captioner.eval_samples}};
  nlohmann::json enc{{"model", c.encoder.model},
                     {"epochs", c.encoder.epochs},
                     {"lr", c.encoder.lr}};
  nlohmann::json dpo_j = c.dpo.dpo;
  dpo_j["epochs"] = c.dpo.epochs;
  dpo_j["lr"] = c.dpo.lr;
  dpo_j["batch_size"] = c.dpo.batch_size;
  dpo_j["shard_size"] = c.dpo.shard_size;
  j = nlohmann::json{{"out_dir", c.out_dir},
                     {"seeds", c.seeds},
                     {"corpus", corpus},
                     {"split", {{"train_fraction", c.split.train_fraction},
                                {"val_fraction", c.split.val_fraction}}},
                     {"retriever", retr},
                     {"captioner", cap},
                     {"encoder", enc},
                     {"dpo", dpo_j},
                     {"eval", {{"topk", c.eval.topk}, {"alpha_sweep", c.eval.alpha_sweep}}}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  detail::check_keys(j, {"out_dir", "seeds", "corpus", "split", "retriever", "captioner",
                         "encoder", "dpo", "eval"},
                     "experiment config");
  detail::maybe(j, "out_dir", c.out_dir);
  detail::maybe(j, "seeds", c.seeds);
  if (j.contains("corpus")) {
    detail::check_keys(j.at("corpus"),
                       {"num_concepts", "num_videos", "concepts_per_video", "frames_per_video",
                        "feature_dim", "noise_scale", "similar_fraction", "distractor_rate",
                        "vocab_size", "similar_cosine_floor", "concept_render_prob"},
                       "corpus");
    nlohmann::json merged = nlohmann::json(c.corpus);
    merged.update(j.at("corpus"));
    c.corpus = merged.get<CorpusConfig>();
  }
  if (j.contains("split")) {
    detail::check_keys(j.at("split"), {"train_fraction", "val_fraction"}, "split");
    detail::maybe(j.at("split"), "train_fraction", c.split.train_fraction);
    detail::maybe(j.at("split"), "val_fraction", c.split.val_fraction);
  }
  if (j.contains("retriever")) {
    const auto& r = j.at("retriever");
    detail::check_keys(r, {"model", "epochs", "lr", "negatives", "aug_frame_noise",
                        "aug_token_dropout", "masked_view_weight", "scorer_masked_weight"},
                       "retriever");
    if (r.contains("model")) {
      nlohmann::json merged = nlohmann::json(c.retriever.model);
      merged.update(r.at("model"));
      c.retriever.model = merged.get<RetrieverConfig>();
    }
    detail::maybe(r, "epochs", c.retriever.epochs);
    detail::maybe(r, "lr", c.retriever.lr);
    detail::maybe(r, "negatives", c.retriever.negatives);
    detail::maybe(r, "aug_frame_noise", c.retriever.aug_frame_noise);
    detail::maybe(r, "aug_token_dropout", c.retriever.aug_token_dropout);
    detail::maybe(r, "masked_view_weight", c.retriever.masked_view_weight);
    detail::maybe(r, "scorer_masked_weight", c.retriever.scorer_masked_weight);
  }
  if (j.contains("captioner")) {
    const auto& p = j.at("captioner");
    detail::check_keys(p,
                       {"model", "pretrain_epochs", "pretrain_on_queries", "sft_epochs", "lr",
                        "batch_size", "k_samples", "sample_temperature", "eval_temperature",
                        "eval_samples"},
                       "captioner");
    if (p.contains("model")) {
      nlohmann::json merged = nlohmann::json(c.captioner.model);
      merged.update(p.at("model"));
      c.captioner.model = merged.get<CaptionerConfig>();
    }
    detail::maybe(p, "pretrain_epochs", c.captioner.pretrain_epochs);
    detail::maybe(p, "pretrain_on_queries", c.captioner.pretrain_on_queries);
    detail::maybe(p, "sft_epochs", c.captioner.sft_epochs);
    detail::maybe(p, "lr", c.captioner.lr);
    detail::maybe(p, "batch_size", c.captioner.batch_size);
    detail::maybe(p, "k_samples", c.captioner.k_samples);
    detail::maybe(p, "sample_temperature", c.captioner.sample_temperature);
    detail::maybe(p, "eval_temperature", c.captioner.eval_temperature);
    detail::maybe(p, "eval_samples", c.captioner.eval_samples);
  }
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    detail::check_keys(e, {"model", "epochs", "lr"}, "encoder");
    if (e.contains("model")) {
      nlohmann::json merged = nlohmann::json(c.encoder.model);
      merged.update(e.at("model"));
      c.encoder.model = merged.get<DualEncoderConfig>();
    }
    detail::maybe(e, "epochs", c.encoder.epochs);
    detail::maybe(e, "lr", c.encoder.lr);
  }
  if (j.contains("dpo")) {
    const auto& d = j.at("dpo");
    detail::check_keys(
        d, {"beta", "gamma", "lambda_cross", "strategy", "preference_signal", "epochs", "lr",
            "batch_size", "shard_size"},
        "dpo");
    nlohmann::json merged = nlohmann::json(c.dpo.dpo);
    for (auto it = d.begin(); it != d.end(); ++it)
      if (it.key() != "epochs" && it.key() != "lr" && it.key() != "batch_size" &&
          it.key() != "shard_size")
        merged[it.key()] = it.value();
    c.dpo.dpo = merged.get<DpoConfig>();
    detail::maybe(d, "epochs", c.dpo.epochs);
    detail::maybe(d, "lr", c.dpo.lr);
    detail::maybe(d, "batch_size", c.dpo.batch_size);
    detail::maybe(d, "shard_size", c.dpo.shard_size);
  }
  if (j.contains("eval")) {
    detail::check_keys(j.at("eval"), {"topk", "alpha_sweep"}, "eval");
    detail::maybe(j.at("eval"), "topk", c.eval.topk);
    detail::maybe(j.at("eval"), "alpha_sweep", c.eval.alpha_sweep);
  }
}

// Identifies the experiment, not its output location.
inline std::string config_hash(const ExperimentConfig& cfg) {
  nlohmann::json j = cfg;
  j.erase("out_dir");
  return hex64(fnv1a64(j.dump()));
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  return j.get<ExperimentConfig>();
}

// ---------------------------------------------------------------------------
// Manifest

class RunManifest {
 public:
  explicit RunManifest(const std::string& out_dir)
      : path_((std::filesystem::path(out_dir) / "manifest.jsonl").string()) {}

  static std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("manifest: cannot hash missing file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string bytes = ss.str();
    return hex64(fnv1a64(bytes.data(), bytes.size()));
  }

  void record(const std::string& command, const std::vector<std::string>& inputs,
              const std::vector<std::string>& outputs, long duration_ms) {
    nlohmann::json entry;
    entry["command"] = command;
    nlohmann::json ins = nlohmann::json::array(), outs = nlohmann::json::array();
    for (const auto& p : inputs) ins.push_back({{"path", p}, {"hash", file_hash(p)}});
    for (const auto& p : outputs) outs.push_back({{"path", p}, {"hash", file_hash(p)}});
    entry["inputs"] = ins;
    entry["outputs"] = outs;
    entry["duration_ms"] = duration_ms;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw std::runtime_error("manifest: cannot append to " + path_);
    out << entry.dump() << "\n";
  }

 private:
  std::string path_;
};

// ---------------------------------------------------------------------------
// Paths

struct SeedPaths {
  std::filesystem::path dir;

  std::string data(const std::string& split_name) const {
    return (dir / ("data_" + split_name + ".jsonl")).string();
  }
  std::string header(const std::string& split_name) const {
    return (dir / ("data_" + split_name + ".json")).string();
  }
  std::string ckpt(const std::string& name) const { return (dir / name).string(); }
  std::string file(const std::string& name) const { return (dir / name).string(); }
};

inline SeedPaths seed_paths(const ExperimentConfig& cfg, uint64_t seed) {
  return SeedPaths{std::filesystem::path(cfg.out_dir) / ("seed_" + std::to_string(seed))};
}

namespace detail {

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  long ms() const {
    return static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - start_)
                                 .count());
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline RetrievalDataset load_split(const SeedPaths& paths, const std::string& name) {
  return read_dataset(paths.data(name), paths.header(name));
}

inline CaptionerModel load_captioner(const std::string& prefix) {
  Checkpoint ck = load_checkpoint(prefix);
  require(ck.model_kind == "captioner", "expected a captioner checkpoint at " + prefix);
  return CaptionerModel{ck.config.get<CaptionerConfig>(), std::move(ck.params)};
}

inline RetrieverModel load_retriever(const std::string& prefix) {
  Checkpoint ck = load_checkpoint(prefix);
  require(ck.model_kind == "retriever", "expected a retriever checkpoint at " + prefix);
  return RetrieverModel{ck.config.get<RetrieverConfig>(), std::move(ck.params)};
}

inline DualEncoder load_encoder(const std::string& prefix) {
  Checkpoint ck = load_checkpoint(prefix);
  require(ck.model_kind == "dual_encoder", "expected an encoder checkpoint at " + prefix);
  return DualEncoder{ck.config.get<DualEncoderConfig>(), std::move(ck.params), true};
}

inline void write_trace_csv(const std::vector<double>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,loss\n";
  for (size_t i = 0; i < trace.size(); ++i) out << i << "," << trace[i] << "\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages. Each one reads its inputs from disk and persists its outputs.

inline void cmd_gen_data(const ExperimentConfig& cfg, uint64_t seed) {
  detail::StageTimer timer;
  SeedPaths paths = seed_paths(cfg, seed);
  std::filesystem::create_directories(paths.dir);

  RetrievalDataset full = generate_corpus(cfg.corpus, seed);
  auto [trainval, test] = split_dataset(full, cfg.split.train_fraction, derive_seed(seed, 1));
  auto [train, val] = split_dataset(trainval, 1.0 - cfg.split.val_fraction, derive_seed(seed, 2));

  write_dataset(full, paths.data("full"), paths.header("full"));
  write_dataset(train, paths.data("train"), paths.header("train"));
  write_dataset(val, paths.data("val"), paths.header("val"));
  write_dataset(test, paths.data("test"), paths.header("test"));

  RunManifest(cfg.out_dir)
      .record("gen-data seed=" + std::to_string(seed), {},
              {paths.data("full"), paths.data("train"), paths.data("val"), paths.data("test")},
              timer.ms());
}

inline void cmd_train_retriever(const ExperimentConfig& cfg, uint64_t seed) {
  detail::StageTimer timer;
  SeedPaths paths = seed_paths(cfg, seed);
  RetrievalDataset train = detail::load_split(paths, "train");

  struct Variant {
    const char* name;
    bool use_roles;
    bool with_captions;
    bool scorer;
  };
  for (Variant v : {Variant{"ret_roles", true, true, false},
                    Variant{"ret_norole", false, true, false},
                    Variant{"ret_vt", true, false, false},
                    Variant{"ret_scorer", true, true, true}}) {
    RetrieverModel model = init_retriever(cfg.retriever.model, derive_seed(seed, 0x11E7));
    RetTrainOptions opt;
    opt.epochs = cfg.retriever.epochs;
    opt.lr = cfg.retriever.lr;
    opt.negatives = cfg.retriever.negatives;
    opt.masked_view_weight =
        v.scorer ? cfg.retriever.scorer_masked_weight : cfg.retriever.masked_view_weight;
    opt.aug_frame_noise = cfg.retriever.aug_frame_noise;
    opt.aug_token_dropout = cfg.retriever.aug_token_dropout;
    opt.use_roles = v.use_roles;
    opt.seed = derive_seed(seed, fnv1a64(v.name));
    auto trace = train_retriever(model, train, v.with_captions ? gt_caption_fn(train)
                                                               : no_caption_fn(),
                                 opt);
    save_checkpoint(model.params, "retriever", nlohmann::json(model.cfg), seed,
                    cfg.retriever.epochs, paths.ckpt(v.name));
    detail::write_trace_csv(trace, paths.file(std::string(v.name) + "_trace.csv"));
  }
  RunManifest(cfg.out_dir)
      .record("train-retriever seed=" + std::to_string(seed),
              {paths.data("train")},
              {paths.ckpt("ret_roles") + ".bin", paths.ckpt("ret_norole") + ".bin",
               paths.ckpt("ret_vt") + ".bin", paths.ckpt("ret_scorer") + ".bin"},
              timer.ms());
}

inline void cmd_train_captioner(const ExperimentConfig& cfg, uint64_t seed) {
  detail::StageTimer timer;
  SeedPaths paths = seed_paths(cfg, seed);
  RetrievalDataset train = detail::load_split(paths, "train");

  CaptionerModel model = init_captioner(cfg.captioner.model, derive_seed(seed, 0xCA90));
  SftOptions base;
  base.epochs = cfg.captioner.pretrain_epochs;
  base.lr = cfg.captioner.lr;
  base.batch_size = cfg.captioner.batch_size;
  base.seed = derive_seed(seed, 0xBA5E);
  RetrievalDataset base_view = train;
  if (cfg.captioner.pretrain_on_queries)
    for (size_t i = 0; i < base_view.size(); ++i)
      base_view.gt_captions[i].tokens = base_view.queries[i].tokens;
  auto base_trace = train_sft(model, base_view, base);
  save_checkpoint(model.params, "captioner", nlohmann::json(model.cfg), seed,
                  cfg.captioner.pretrain_epochs, paths.ckpt("cap_zero_shot"));
  detail::write_trace_csv(base_trace, paths.file("cap_zero_shot_trace.csv"));

  SftOptions extended;
  extended.epochs = cfg.captioner.sft_epochs;
  extended.lr = cfg.captioner.lr;
  extended.batch_size = cfg.captioner.batch_size;
  extended.seed = derive_seed(seed, 0x5F7);
  auto sft_trace = train_sft(model, train, extended);
  save_checkpoint(model.params, "captioner", nlohmann::json(model.cfg), seed,
                  cfg.captioner.pretrain_epochs + cfg.captioner.sft_epochs,
                  paths.ckpt("cap_sft"));
  detail::write_trace_csv(sft_trace, paths.file("cap_sft_trace.csv"));

  RunManifest(cfg.out_dir)
      .record("train-captioner seed=" + std::to_string(seed), {paths.data("train")},
              {paths.ckpt("cap_zero_shot") + ".bin", paths.ckpt("cap_sft") + ".bin"},
              timer.ms());
}

inline void cmd_sample_captions(const ExperimentConfig& cfg, uint64_t seed) {
  detail::StageTimer timer;
  SeedPaths paths = seed_paths(cfg, seed);
  RetrievalDataset train = detail::load_split(paths, "train");
  CaptionerModel zero_shot = detail::load_captioner(paths.ckpt("cap_zero_shot"));

  auto records = sample_caption_dump(zero_shot, train, cfg.captioner.k_samples,
                                     cfg.captioner.sample_temperature,
                                     derive_seed(seed, 0x5A3));
  write_caption_dump(records, paths.file("captions_train.jsonl"));

  RunManifest(cfg.out_dir)
      .record("sample-captions seed=" + std::to_string(seed),
              {paths.data("train"), paths.ckpt("cap_zero_shot") + ".bin"},
              {paths.file("captions_train.jsonl")}, timer.ms());
}

inline void cmd_build_prefs(const ExperimentConfig& cfg, uint64_t seed) {
  detail::StageTimer timer;
  SeedPaths paths = seed_paths(cfg, seed);
  RetrievalDataset train = detail::load_split(paths, "train");
  RetrieverModel scorer = detail::load_retriever(paths.ckpt("ret_scorer"));
  CaptionPool pool(read_caption_dump(paths.file("captions_train.jsonl")));

  const DpoConfig& dcfg = cfg.dpo.dpo;
  bool masked = dcfg.preference_signal != "retrieval_unmasked";
  auto retrieval_pool = score_pool(scorer, train, pool, true, masked);
  auto bleu_pool = bleu_preference_scores(pool, train);

  // retrieval-signal pairs: SG is the pool-wide local set; DG keeps those
  // local pairs and adds strategy-sampled pairs built over deterministic
  // shards of the globally ranked pool (the batch-aggregated universe)
  auto sg_ret = build_sg_pairs(retrieval_pool, dcfg.gamma, 0.0);
  auto dg_ret = merge_preference_sets(
      build_sg_pairs(retrieval_pool, dcfg.gamma, dcfg.lambda_cross),
      build_dg_pairs_sharded(retrieval_pool, dcfg.gamma, dcfg.strategy, dcfg.lambda_cross,
                             cfg.dpo.shard_size, derive_seed(seed, 0xD6)));
  // BLEU-signal pairs use the same machinery with a gamma on the BLEU scale
  double bleu_gamma = 0.0;
  auto sg_bleu = build_sg_pairs(bleu_pool, bleu_gamma, 0.0);
  auto dg_bleu = merge_preference_sets(
      build_sg_pairs(bleu_pool, bleu_gamma, dcfg.lambda_cross),
      build_dg_pairs_sharded(bleu_pool, bleu_gamma, dcfg.strategy, dcfg.lambda_cross,
                             cfg.dpo.shard_size, derive_seed(seed, 0xD7)));

  std::string scorer_id = RunManifest::file_hash(paths.ckpt("ret_scorer") + ".bin");
  std::string dump_id = RunManifest::file_hash(paths.file("captions_train.jsonl"));
  for (PreferenceDataset* pd : {&sg_ret, &dg_ret, &sg_bleu, &dg_bleu}) {
    pd->retriever_id = scorer_id;
    pd->caption_dump_id = dump_id;
  }
  write_preference_dump(sg_ret, paths.file("prefs_sg_ret.jsonl"));
  write_preference_dump(dg_ret, paths.file("prefs_dg_ret.jsonl"));
  write_preference_dump(sg_bleu, paths.file("prefs_sg_bleu.jsonl"));
  write_preference_dump(dg_bleu, paths.file("prefs_dg_bleu.jsonl"));

  // per-candidate score dump for the masked preference scores
  std::vector<ScoreRecord> score_records;
  for (const auto& c : retrieval_pool) {
    ScoreRecord rec;
    rec.video_id = c.video_id;
    rec.query_id = c.video_id;
    rec.caption_index = c.sample_index;
    rec.variant = "contrastive";
    rec.mask_video = masked;
    rec.score = c.s_p;
    score_records.push_back(rec);
  }
  write_score_dump(score_records, paths.file("scores_train.jsonl"));

  RunManifest(cfg.out_dir)
      .record("build-prefs seed=" + std::to_string(seed),
              {paths.ckpt("ret_scorer") + ".bin", paths.file("captions_train.jsonl")},
              {paths.file("prefs_sg_ret.jsonl"), paths.file("prefs_dg_ret.jsonl"),
               paths.file("prefs_sg_bleu.jsonl"), paths.file("prefs_dg_bleu.jsonl")},
              timer.ms());
}

// ---------------------------------------------------------------------------
// Evaluation

namespace detail {

inline const std::vector<std::string>& caption_sources() {
  static const std::vector<std::string> sources{"zero_shot", "sft", "sg", "dg",
                                                "sg_bleu", "dg_bleu"};
  return sources;
}

inline std::string source_ckpt(const std::string& source) { return "cap_" + source; }

// m caption vectors (one per eval sample index) for every video of ds.
inline std::vector<std::vector<TokenSeq>> eval_captions(const CaptionerModel& model,
                                                        const RetrievalDataset& ds, int m,
                                                        double temperature, uint64_t seed) {
  std::vector<std::vector<TokenSeq>> out(static_cast<size_t>(m),
                                         std::vector<TokenSeq>(ds.size()));
  auto records = sample_caption_dump(model, ds, m, temperature, seed);
  for (const auto& r : records)
    out[static_cast<size_t>(r.sample_index)][static_cast<size_t>(r.video_id)] = r.tokens;
  return out;
}

struct RecallPair {
  double t2v_r1 = 0, t2v_r5 = 0, t2v_r10 = 0;
  double v2t_r1 = 0, v2t_r5 = 0, v2t_r10 = 0;

  double mean6() const {
    return (t2v_r1 + t2v_r5 + t2v_r10 + v2t_r1 + v2t_r5 + v2t_r10) / 6.0;
  }
};

inline RecallPair recall_both_directions(const RetrieverModel& m, const DualEncoder& enc,
                                         const RetrievalDataset& ds,
                                         const std::vector<std::vector<TokenSeq>>& captions,
                                         const TwoStageConfig& cfg) {
  std::vector<int> gt(ds.size());
  for (size_t i = 0; i < ds.size(); ++i) gt[i] = static_cast<int>(i);
  RecallPair out;
  double m_count = static_cast<double>(captions.size());
  for (const auto& caps : captions) {
    ScoreMatrix t2v = two_stage_matrix(m, enc, ds, caps, Direction::T2V, cfg);
    ScoreMatrix v2t = two_stage_matrix(m, enc, ds, caps, Direction::V2T, cfg);
    out.t2v_r1 += recall_at_k(t2v, gt, 1) / m_count;
    out.t2v_r5 += recall_at_k(t2v, gt, 5) / m_count;
    out.t2v_r10 += recall_at_k(t2v, gt, 10) / m_count;
    out.v2t_r1 += recall_at_k(v2t, gt, 1) / m_count;
    out.v2t_r5 += recall_at_k(v2t, gt, 5) / m_count;
    out.v2t_r10 += recall_at_k(v2t, gt, 10) / m_count;
  }
  return out;
}

inline nlohmann::json recall_pair_json(const RecallPair& r, int n, int m) {
  return nlohmann::json{
      {"T2V", {{"R@1", r.t2v_r1}, {"R@5", r.t2v_r5}, {"R@10", r.t2v_r10}, {"n", n},
               {"caption_samples_averaged", m}}},
      {"V2T", {{"R@1", r.v2t_r1}, {"R@5", r.v2t_r5}, {"R@10", r.v2t_r10}, {"n", n},
               {"caption_samples_averaged", m}}}};
}

// Deterministic "random captions": a seeded permutation with no fixed point
// for n >= 2 (rotation of a shuffled order).
inline std::vector<std::vector<TokenSeq>> permuted_captions(
    const std::vector<std::vector<TokenSeq>>& captions, uint64_t seed) {
  std::vector<std::vector<TokenSeq>> out = captions;
  if (captions.empty() || captions[0].size() < 2) return out;
  size_t n = captions[0].size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0xFE2));
  rng.shuffle(order);
  for (size_t s = 0; s < captions.size(); ++s)
    for (size_t i = 0; i < n; ++i)
      out[s][order[i]] = captions[s][order[(i + 1) % n]];
  return out;
}

}  // namespace detail

inline void cmd_train_dpo(const ExperimentConfig& cfg, uint64_t seed) {
  detail::StageTimer timer;
  SeedPaths paths = seed_paths(cfg, seed);
  RetrievalDataset train = detail::load_split(paths, "train");
  CaptionPool pool(read_caption_dump(paths.file("captions_train.jsonl")));
  CaptionerModel zero_shot = detail::load_captioner(paths.ckpt("cap_zero_shot"));
  ReferenceSnapshot ref = snapshot_reference(zero_shot);

  // the configured preference signal drives the headline sg/dg models; the
  // *_bleu rows always train from the BLEU-signal pairs for comparison
  bool bleu_signal = cfg.dpo.dpo.preference_signal == "bleu";
  std::string sg_main = bleu_signal ? "prefs_sg_bleu.jsonl" : "prefs_sg_ret.jsonl";
  std::string dg_main = bleu_signal ? "prefs_dg_bleu.jsonl" : "prefs_dg_ret.jsonl";
  struct Job {
    std::string prefs;
    const char* out;
    double lambda_cross;  // 0 turns the loss into single-group DPO
  };
  // caption-sensitive validation score: rerank-only contrastive T2V R@1 on
  // the validation split with captions sampled from the candidate policy
  RetrievalDataset val = detail::load_split(paths, "val");
  RetrieverModel val_ret = detail::load_retriever(paths.ckpt("ret_roles"));
  auto val_r1 = [&](const CaptionerModel& policy) {
    auto caps = detail::eval_captions(policy, val, 2, cfg.captioner.eval_temperature,
                                      derive_seed(seed, 0x7A1));
    size_t n = val.size();
    std::vector<int> gt(n);
    for (size_t i = 0; i < n; ++i) gt[i] = static_cast<int>(i);
    double total = 0.0;
    for (const auto& sample : caps) {
      ScoreMatrix mat(n, n);
      for (size_t q = 0; q < n; ++q)
        for (size_t c = 0; c < n; ++c) {
          TripletInput in;
          in.video = &val.videos[c];
          in.caption = &sample[c];
          in.query = &val.queries[q].tokens;
          mat.at(q, c) = relevance_score(val_ret, in, ScoreVariant::contrastive);
        }
      total += recall_at_k(mat, gt, 1) / static_cast<double>(caps.size());
    }
    return total;
  };

  for (Job job : {Job{sg_main, "cap_sg", 0.0},
                  Job{dg_main, "cap_dg", cfg.dpo.dpo.lambda_cross},
                  Job{"prefs_sg_bleu.jsonl", "cap_sg_bleu", 0.0},
                  Job{"prefs_dg_bleu.jsonl", "cap_dg_bleu", cfg.dpo.dpo.lambda_cross}}) {
    PreferenceDataset prefs = read_preference_dump(paths.file(job.prefs));
    CaptionerModel policy = zero_shot;  // DPO starts from the zero-shot checkpoint
    DpoConfig dcfg = cfg.dpo.dpo;
    dcfg.lambda_cross = job.lambda_cross;
    std::vector<DpoTraceRow> trace;
    ParamStore best_params = policy.params;
    int best_epoch = 0;
    double best_val = val_r1(policy);
    if (!prefs.pairs.empty()) {
      // epoch-wise training with validation selection; epoch 0 (the
      // zero-shot policy) stays in the candidate set
      OptimConfig ocfg;
      ocfg.lr = cfg.dpo.lr;
      ocfg.rule = OptimRule::adam;
      OptimState state = make_optim_state(policy.params, ocfg);
      uint64_t job_seed = derive_seed(seed, fnv1a64(job.out));
      for (int epoch = 0; epoch < cfg.dpo.epochs; ++epoch) {
        auto batches = pair_batches(prefs.pairs, cfg.dpo.batch_size,
                                    derive_seed(job_seed, 0xD90 + static_cast<uint64_t>(epoch)));
        DpoTraceRow row;
        row.epoch = epoch;
        double loss_sum = 0.0;
        DpoBatchStats epoch_stats;
        for (const auto& batch : batches) {
          GradStore grads = policy.params.zeros_like();
          double loss =
              dg_dpo_batch_loss(policy, ref, batch, pool, train, dcfg, &grads, &epoch_stats);
          require_finite(loss, "train-dpo loss");
          loss_sum += loss;
          optimizer_step(policy.params, grads, state);
        }
        row.mean_loss = loss_sum / static_cast<double>(batches.size());
        row.n_local = epoch_stats.n_local;
        row.n_cross = epoch_stats.n_cross;
        row.mean_local_loss = epoch_stats.n_local
                                  ? epoch_stats.local_loss_sum /
                                        static_cast<double>(epoch_stats.n_local)
                                  : 0.0;
        row.mean_cross_loss = epoch_stats.n_cross
                                  ? epoch_stats.cross_loss_sum /
                                        static_cast<double>(epoch_stats.n_cross)
                                  : 0.0;
        trace.push_back(row);
        double v = val_r1(policy);
        if (v > best_val) {
          best_val = v;
          best_epoch = epoch + 1;
          best_params = policy.params;
        }
      }
    }
    save_checkpoint(best_params, "captioner", nlohmann::json(policy.cfg), seed, best_epoch,
                    paths.ckpt(job.out));
    write_dpo_trace_csv(trace, paths.file(std::string(job.out) + "_trace.csv"));
    nlohmann::json sel{{"selected_epoch", best_epoch}, {"val_t2v_r1", best_val}};
    std::ofstream sf(paths.file(std::string(job.out) + "_selection.json"));
    sf << sel.dump(2) << "\n";
  }

  RunManifest(cfg.out_dir)
      .record("train-dpo seed=" + std::to_string(seed),
              {paths.ckpt("cap_zero_shot") + ".bin", paths.file("captions_train.jsonl")},
              {paths.ckpt("cap_sg") + ".bin", paths.ckpt("cap_dg") + ".bin",
               paths.ckpt("cap_sg_bleu") + ".bin", paths.ckpt("cap_dg_bleu") + ".bin"},
              timer.ms());
}


inline nlohmann::json cmd_evaluate(const ExperimentConfig& cfg, uint64_t seed) {
  detail::StageTimer timer;
  SeedPaths paths = seed_paths(cfg, seed);
  RetrievalDataset train = detail::load_split(paths, "train");
  RetrievalDataset val = detail::load_split(paths, "val");
  RetrievalDataset test = detail::load_split(paths, "test");

  // first-stage encoder trains on the train split only
  DualEncoder enc = init_dual_encoder(cfg.encoder.model, derive_seed(seed, 0xE2C));
  EncoderTrainOptions enc_opt;
  enc_opt.epochs = cfg.encoder.epochs;
  enc_opt.lr = cfg.encoder.lr;
  enc_opt.seed = derive_seed(seed, 0xE2D);
  train_dual_encoder(enc, train, enc_opt);
  save_checkpoint(enc.params, "dual_encoder", nlohmann::json(enc.cfg), seed, cfg.encoder.epochs,
                  paths.ckpt("enc"));

  RetrieverModel ret_roles = detail::load_retriever(paths.ckpt("ret_roles"));
  RetrieverModel ret_norole = detail::load_retriever(paths.ckpt("ret_norole"));
  RetrieverModel ret_vt = detail::load_retriever(paths.ckpt("ret_vt"));
  RetrieverModel ret_scorer = detail::load_retriever(paths.ckpt("ret_scorer"));

  int m = cfg.captioner.eval_samples;
  double temp = cfg.captioner.eval_temperature;

  // fusion weight: swept on the validation split with the dataset's
  // reference captions attached to the candidates
  CaptionerModel zero_shot = detail::load_captioner(paths.ckpt("cap_zero_shot"));
  std::vector<TokenSeq> val_gt;
  for (const auto& c : val.gt_captions) val_gt.push_back(c.tokens);
  std::vector<std::vector<TokenSeq>> val_caps{val_gt};
  nlohmann::json sweep_json;
  double best_alpha = cfg.eval.alpha_sweep.empty() ? 0.0 : cfg.eval.alpha_sweep.front();
  double best_r1 = -1.0;
  for (double alpha : cfg.eval.alpha_sweep) {
    TwoStageConfig tcfg;
    tcfg.topk = static_cast<size_t>(cfg.eval.topk);
    tcfg.alpha = alpha;
    auto pair = detail::recall_both_directions(ret_roles, enc, val, val_caps, tcfg);
    sweep_json[std::to_string(alpha)] = pair.t2v_r1;
    if (pair.t2v_r1 > best_r1) {
      best_r1 = pair.t2v_r1;
      best_alpha = alpha;
    }
  }

  TwoStageConfig tcfg;
  tcfg.topk = static_cast<size_t>(cfg.eval.topk);
  tcfg.alpha = best_alpha;

  // eval captions per source on the test split
  // every source samples with the same stream so source comparisons are
  // paired: identical policies yield identical captions
  std::map<std::string, std::vector<std::vector<TokenSeq>>> captions_by_source;
  for (const std::string& source : detail::caption_sources()) {
    CaptionerModel model = detail::load_captioner(paths.ckpt(detail::source_ckpt(source)));
    captions_by_source[source] =
        detail::eval_captions(model, test, m, temp, derive_seed(seed, 0xE5A));
  }

  nlohmann::json bundle;
  bundle["seed"] = seed;
  bundle["config_hash"] = config_hash(cfg);
  bundle["alpha"] = best_alpha;
  bundle["alpha_sweep_t2v_r1"] = sweep_json;

  // headline recall per caption source
  nlohmann::json recall_json;
  for (const auto& [source, caps] : captions_by_source) {
    auto pair = detail::recall_both_directions(ret_roles, enc, test, caps, tcfg);
    recall_json[source] = detail::recall_pair_json(pair, static_cast<int>(test.size()), m);
  }
  bundle["recall"] = recall_json;

  // inference-variant comparison with the dual-group captions
  nlohmann::json variant_json;
  for (auto [name, variant] :
       std::initializer_list<std::pair<const char*, ScoreVariant>>{
           {"standard", ScoreVariant::standard},
           {"neg_only", ScoreVariant::neg_only},
           {"contrastive", ScoreVariant::contrastive}}) {
    TwoStageConfig vcfg = tcfg;
    vcfg.variant = variant;
    auto pair = detail::recall_both_directions(ret_roles, enc, test,
                                               captions_by_source.at("dg"), vcfg);
    variant_json[name] = detail::recall_pair_json(pair, static_cast<int>(test.size()), m);
  }
  bundle["recall_variants"] = variant_json;

  // role-embedding ablation: original captions vs a seeded permutation of
  // them, measured both with the zero-shot captions attached at evaluation
  // time and with the dataset's reference captions
  nlohmann::json ablation;
  std::vector<TokenSeq> gt_caps;
  for (const auto& c : test.gt_captions) gt_caps.push_back(c.tokens);
  struct CaptionBase {
    const char* tag;
    std::vector<std::vector<TokenSeq>> caps;
  };
  std::vector<CaptionBase> bases;
  bases.push_back({"zero_shot", captions_by_source.at("zero_shot")});
  bases.push_back({"reference", {gt_caps}});
  for (const auto& base : bases) {
    auto rand = detail::permuted_captions(base.caps, derive_seed(seed, 0xAB1));
    for (auto [name, model] :
         std::initializer_list<std::pair<const char*, const RetrieverModel*>>{
             {"roles", &ret_roles}, {"norole", &ret_norole}}) {
      auto orig_pair = detail::recall_both_directions(*model, enc, test, base.caps, tcfg);
      auto rand_pair = detail::recall_both_directions(*model, enc, test, rand, tcfg);
      ablation[base.tag][name] = {
          {"orig_avg", orig_pair.mean6() * 100.0},
          {"rand_avg", rand_pair.mean6() * 100.0},
          {"drop_points", (orig_pair.mean6() - rand_pair.mean6()) * 100.0}};
    }
  }
  bundle["role_ablation"] = ablation;

  // caption probes (T2C with the masked main model, V2C with the (v,t) model)
  nlohmann::json probes;
  std::vector<int> gt(test.size());
  for (size_t i = 0; i < test.size(); ++i) gt[i] = static_cast<int>(i);
  for (const std::string source : {"zero_shot", "dg"}) {
    double t2c_r1 = 0, v2c_r1 = 0;
    const auto& caps = captions_by_source.at(source);
    for (const auto& c : caps) {
      t2c_r1 += recall_at_k(t2c_matrix(ret_scorer, test, c), gt, 1) /
                static_cast<double>(caps.size());
      v2c_r1 += recall_at_k(v2c_matrix(ret_vt, test, c), gt, 1) /
                static_cast<double>(caps.size());
    }
    probes[source] = {{"T2C_R@1", t2c_r1}, {"V2C_R@1", v2c_r1}};
  }
  bundle["probes"] = probes;

  // hard subset: threshold from the test split's similarity populations
  double mean_intra = 0.0, mean_inter = 0.0;
  {
    std::set<std::pair<int, int>> pair_set;
    for (auto [a, b] : test.similar_pairs)
      pair_set.insert({std::min(a, b), std::max(a, b)});
    size_t n_intra = 0, n_inter = 0;
    for (int i = 0; i < static_cast<int>(test.size()); ++i)
      for (int j = i + 1; j < static_cast<int>(test.size()); ++j) {
        double cs = cosine(pooled_frames(test.videos[static_cast<size_t>(i)]),
                           pooled_frames(test.videos[static_cast<size_t>(j)]));
        if (pair_set.count({i, j})) {
          mean_intra += cs;
          ++n_intra;
        } else {
          mean_inter += cs;
          ++n_inter;
        }
      }
    mean_intra = n_intra ? mean_intra / static_cast<double>(n_intra) : 1.0;
    mean_inter = n_inter ? mean_inter / static_cast<double>(n_inter) : 0.0;
  }
  double hard_threshold = 0.5 * (mean_intra + mean_inter);
  std::vector<int> hard_ids = hard_subset(test.videos, hard_threshold);
  nlohmann::json hard;
  hard["threshold"] = hard_threshold;
  hard["size"] = hard_ids.size();
  if (hard_ids.size() >= 2) {
    RetrievalDataset hard_ds = subset_by_ids(test, hard_ids);
    nlohmann::json conf_json, hard_recall;
    for (const auto& [source, caps] : captions_by_source) {
      // confidence: sigmoid of the unmasked contrastive score on gt pairs
      double conf = 0.0;
      for (const auto& c : caps) {
        std::vector<double> scores;
        for (int id : hard_ids) {
          TripletInput in;
          in.video = &test.videos[static_cast<size_t>(id)];
          in.caption = &c[static_cast<size_t>(id)];
          in.query = &test.queries[static_cast<size_t>(id)].tokens;
          scores.push_back(relevance_score(ret_roles, in, ScoreVariant::contrastive));
        }
        conf += confidence(scores) / static_cast<double>(caps.size());
      }
      conf_json[source] = conf;

      // retrieval restricted to the hard subset
      std::vector<std::vector<TokenSeq>> hard_caps(caps.size());
      for (size_t s = 0; s < caps.size(); ++s)
        for (int id : hard_ids) hard_caps[s].push_back(caps[s][static_cast<size_t>(id)]);
      auto pair = detail::recall_both_directions(ret_roles, enc, hard_ds, hard_caps, tcfg);
      hard_recall[source] = {{"T2V_R@1", pair.t2v_r1}, {"V2T_R@1", pair.v2t_r1}};
    }
    hard["confidence"] = conf_json;
    hard["recall"] = hard_recall;
  }
  bundle["hard_subset"] = hard;

  // diversity per source, averaged over the eval samples
  nlohmann::json diversity;
  for (const auto& [source, caps] : captions_by_source) {
    double sb = 0, d1 = 0, d2 = 0;
    for (const auto& c : caps) {
      DiversityReport rep = make_diversity_report(c);
      sb += rep.self_bleu / static_cast<double>(caps.size());
      d1 += rep.distinct_1 / static_cast<double>(caps.size());
      d2 += rep.distinct_2 / static_cast<double>(caps.size());
    }
    diversity[source] = {{"self_bleu", sb}, {"distinct_1", d1}, {"distinct_2", d2}};
  }
  bundle["diversity"] = diversity;

  // BLEU-vs-retrieval top-1 correlation over the training preference pool
  {
    RetrieverModel scorer = detail::load_retriever(paths.ckpt("ret_scorer"));
    CaptionPool pool(read_caption_dump(paths.file("captions_train.jsonl")));
    auto sp_pool = score_pool(scorer, train, pool);
    auto bleu_pool = bleu_preference_scores(pool, train);
    auto corr = top1_correlation(bleu_pool, sp_pool);
    bundle["top1_correlation"] = corr ? nlohmann::json(*corr) : nlohmann::json(nullptr);
    bundle["top1_agreement"] = top1_agreement(bleu_pool, sp_pool);
  }

  std::ofstream out(paths.file("eval.json"));
  if (!out) throw std::runtime_error("cmd_evaluate: cannot write eval.json");
  out << bundle.dump(2) << "\n";

  RunManifest(cfg.out_dir)
      .record("evaluate seed=" + std::to_string(seed),
              {paths.data("test"), paths.ckpt("ret_roles") + ".bin"},
              {paths.file("eval.json")}, timer.ms());
  return bundle;
}

// ---------------------------------------------------------------------------
// Aggregation, reporting, and the full pipeline

namespace detail {

inline double median(std::vector<double> v) {
  require(!v.empty(), "median: empty");
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline void svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values, const std::string& path) {
  require(labels.size() == values.size(), "svg_bar_chart: label/value mismatch");
  double max_val = 1e-9;
  for (double v : values) max_val = std::max(max_val, v);
  const int bar_w = 60, gap = 20, height = 240, base = 200, left = 40;
  int width = left + static_cast<int>(labels.size()) * (bar_w + gap) + gap;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
  svg << "<text x=\"" << left << "\" y=\"16\" font-size=\"13\">" << title << "</text>\n";
  for (size_t i = 0; i < labels.size(); ++i) {
    double h = (values[i] / max_val) * 150.0;
    int x = left + static_cast<int>(i) * (bar_w + gap);
    svg << "<rect x=\"" << x << "\" y=\"" << base - h << "\" width=\"" << bar_w
        << "\" height=\"" << h << "\" fill=\"#4477aa\"/>\n";
    svg << "<text x=\"" << x << "\" y=\"" << base + 14 << "\" font-size=\"11\">" << labels[i]
        << "</text>\n";
    svg << "<text x=\"" << x << "\" y=\"" << base - h - 4 << "\" font-size=\"10\">" << values[i]
        << "</text>\n";
  }
  svg << "</svg>\n";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("svg_bar_chart: cannot write " + path);
  out << svg.str();
}

}  // namespace detail

// Cross-seed aggregate written by run-all: medians for every headline metric
// plus the comparison table.
inline nlohmann::json aggregate_results(const ExperimentConfig& cfg,
                                        const std::vector<nlohmann::json>& bundles) {
  nlohmann::json summary;
  summary["config_hash"] = config_hash(cfg);
  summary["seeds"] = cfg.seeds;

  auto collect = [&](const std::function<double(const nlohmann::json&)>& get) {
    std::vector<double> vals;
    for (const auto& b : bundles) vals.push_back(get(b));
    return detail::median(vals);
  };

  nlohmann::json med;
  for (const std::string& source : detail::caption_sources()) {
    med["t2v_r1"][source] = collect(
        [&](const nlohmann::json& b) { return b.at("recall").at(source).at("T2V").at("R@1"); });
    med["v2t_r1"][source] = collect(
        [&](const nlohmann::json& b) { return b.at("recall").at(source).at("V2T").at("R@1"); });
    med["self_bleu"][source] = collect([&](const nlohmann::json& b) {
      return b.at("diversity").at(source).at("self_bleu");
    });
    med["hard_confidence"][source] = collect([&](const nlohmann::json& b) {
      return b.at("hard_subset").at("confidence").at(source);
    });
  }
  for (const std::string variant : {"standard", "neg_only", "contrastive"})
    med["variant_t2v_r1"][variant] = collect([&](const nlohmann::json& b) {
      return b.at("recall_variants").at(variant).at("T2V").at("R@1");
    });
  for (const std::string base : {"zero_shot", "reference"})
    for (const std::string model : {"roles", "norole"})
      med["role_drop_points"][base][model] = collect([&](const nlohmann::json& b) {
        return b.at("role_ablation").at(base).at(model).at("drop_points");
      });
  summary["median"] = med;
  return summary;
}

inline void cmd_run_all(const ExperimentConfig& cfg) {
  detail::StageTimer timer;
  std::filesystem::create_directories(cfg.out_dir);
  {
    nlohmann::json j = cfg;
    j["hash"] = config_hash(cfg);
    std::ofstream out((std::filesystem::path(cfg.out_dir) / "config.json").string());
    out << j.dump(2) << "\n";
  }

  std::vector<nlohmann::json> bundles;
  for (uint64_t seed : cfg.seeds) {
    cmd_gen_data(cfg, seed);
    cmd_train_retriever(cfg, seed);
    cmd_train_captioner(cfg, seed);
    cmd_sample_captions(cfg, seed);
    cmd_build_prefs(cfg, seed);
    cmd_train_dpo(cfg, seed);
    bundles.push_back(cmd_evaluate(cfg, seed));
  }

  nlohmann::json summary = aggregate_results(cfg, bundles);
  std::ofstream sout((std::filesystem::path(cfg.out_dir) / "summary.json").string());
  sout << summary.dump(2) << "\n";
  sout.close();

  // comparison table: caption sources x seeds, with a median column
  std::ofstream csv((std::filesystem::path(cfg.out_dir) / "comparison.csv").string());
  csv << "source,metric";
  for (uint64_t seed : cfg.seeds) csv << ",seed_" << seed;
  csv << ",median\n";
  for (const std::string& source : detail::caption_sources()) {
    for (const std::string metric : {"T2V", "V2T"}) {
      csv << source << "," << metric << "_R@1";
      std::vector<double> vals;
      for (const auto& b : bundles) {
        double v = b.at("recall").at(source).at(metric).at("R@1").get<double>();
        vals.push_back(v);
        csv << "," << v;
      }
      csv << "," << detail::median(vals) << "\n";
    }
  }
  csv.close();

  RunManifest(cfg.out_dir)
      .record("run-all", {},
              {(std::filesystem::path(cfg.out_dir) / "summary.json").string(),
               (std::filesystem::path(cfg.out_dir) / "comparison.csv").string()},
              timer.ms());
}

// Aggregates whatever artifacts exist into a human-readable summary and SVG
// plots; never recomputes model outputs. Missing pieces are listed, not fatal.
inline std::string cmd_report(const std::string& out_dir) {
  std::ostringstream report;
  std::vector<std::string> missing;
  auto path = [&](const std::string& name) {
    return (std::filesystem::path(out_dir) / name).string();
  };

  nlohmann::json summary;
  if (std::filesystem::exists(path("summary.json"))) {
    std::ifstream in(path("summary.json"));
    summary = nlohmann::json::parse(in);
  } else {
    missing.push_back("summary.json");
  }

  report << "run report: " << out_dir << "\n";
  if (!summary.is_null()) {
    report << "config hash: " << summary.at("config_hash").get<std::string>() << "\n";
    report << "seeds: " << summary.at("seeds").dump() << "\n\n";
    const auto& med = summary.at("median");
    report << "median T2V R@1 by caption source:\n";
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& [source, val] : med.at("t2v_r1").items()) {
      report << "  " << source << ": " << val.get<double>() << "\n";
      labels.push_back(source);
      values.push_back(val.get<double>());
    }
    std::filesystem::create_directories(path("plots"));
    detail::svg_bar_chart("median T2V R@1 by caption source", labels, values,
                          path("plots/t2v_r1.svg"));

    labels.clear();
    values.clear();
    report << "median Self-BLEU by caption source:\n";
    for (const auto& [source, val] : med.at("self_bleu").items()) {
      report << "  " << source << ": " << val.get<double>() << "\n";
      labels.push_back(source);
      values.push_back(val.get<double>());
    }
    detail::svg_bar_chart("median Self-BLEU by caption source", labels, values,
                          path("plots/self_bleu.svg"));

    report << "median inference-variant T2V R@1:\n";
    for (const auto& [variant, val] : med.at("variant_t2v_r1").items())
      report << "  " << variant << ": " << val.get<double>() << "\n";
    report << "median role-ablation drop (points):\n";
    for (const auto& [base, models] : med.at("role_drop_points").items())
      for (const auto& [model, val] : models.items())
        report << "  " << base << "/" << model << ": " << val.get<double>() << "\n";
    report << "median hard-subset confidence:\n";
    for (const auto& [source, val] : med.at("hard_confidence").items())
      report << "  " << source << ": " << val.get<double>() << "\n";
  }

  // per-seed bundles
  if (std::filesystem::exists(out_dir)) {
    for (const auto& entry : std::filesystem::directory_iterator(out_dir)) {
      if (!entry.is_directory()) continue;
      std::string name = entry.path().filename().string();
      if (name.rfind("seed_", 0) != 0) continue;
      if (!std::filesystem::exists(entry.path() / "eval.json"))
        missing.push_back(name + "/eval.json");
    }
  }

  if (!missing.empty()) {
    report << "\nmissing artifacts:\n";
    for (const auto& m : missing) report << "  " << m << "\n";
  }

  std::ofstream out(path("report.txt"));
  out << report.str();
  return report.str();
}

}  // namespace dgdpo
