#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "dgdpo/captioner.hpp"
#include "dgdpo/corpus.hpp"
#include "dgdpo/numerics.hpp"

using namespace dgdpo;

namespace {

CorpusConfig tiny_corpus_config() {
  CorpusConfig cfg;
  cfg.num_concepts = 4;
  cfg.num_videos = 6;
  cfg.concepts_per_video = 2;
  cfg.feature_dim = 8;
  cfg.vocab_size = 16;
  cfg.similar_fraction = 0.0;
  return cfg;
}

CaptionerConfig tiny_captioner_config() {
  CaptionerConfig cfg;
  cfg.vocab_size = 16;
  cfg.embed_dim = 6;
  cfg.feature_dim = 8;
  cfg.max_caption_len = 10;
  return cfg;
}

// Independent teacher-forcing recomputation in long double: walks the steps
// explicitly and normalizes without the max-subtraction shortcut.
double oracle_caption_logprob(const CaptionerModel& m, const SyntheticVideo& video,
                              const TokenSeq& tokens) {
  size_t e = static_cast<size_t>(m.cfg.embed_dim);
  size_t v = static_cast<size_t>(m.cfg.vocab_size);
  const Tensor& tok_emb = m.params.at("tok_emb");
  const Tensor& pos_emb = m.params.at("pos_emb");
  const Tensor& proj = m.params.at("vid_proj");
  const Tensor& hid_w = m.params.at("hid_w");
  const Tensor& hid_b = m.params.at("hid_b");
  const Tensor& out_w = m.params.at("out_w");
  const Tensor& out_b = m.params.at("out_b");

  std::vector<long double> vctx(e, 0.0L);
  for (const auto& frame : video.frames)
    for (size_t d = 0; d < frame.size(); ++d)
      for (size_t k = 0; k < e; ++k) vctx[k] += static_cast<long double>(frame[d]) * proj.at(d, k);
  for (auto& x : vctx) x /= static_cast<long double>(video.frames.size());

  long double total = 0.0L;
  int prev = tok::kBos;
  for (size_t t = 0; t < tokens.size(); ++t) {
    std::vector<long double> logits(v);
    for (size_t r = 0; r < v; ++r) {
      long double acc = out_b.at(r);
      for (size_t c = 0; c < e; ++c) {
        long double pre = hid_b.at(c);
        for (size_t c2 = 0; c2 < e; ++c2)
          pre += hid_w.at(c, c2) *
                 (tok_emb.at(static_cast<size_t>(prev), c2) + pos_emb.at(t, c2) + vctx[c2]);
        acc += out_w.at(r, c) * tanhl(pre);
      }
      logits[r] = acc;
    }
    long double z = 0.0L;
    for (auto l : logits) z += expl(l);
    total += logits[static_cast<size_t>(tokens[t])] - logl(z);
    prev = tokens[t];
  }
  return static_cast<double>(total);
}

}  // namespace

TEST(Captioner, ParamCountClosedForm) {
  CaptionerConfig cfg;  // defaults: V=64, D_e=16, D_f=16, L=16
  CaptionerModel m = init_captioner(cfg, 1);
  EXPECT_EQ(m.params.total_params(), captioner_param_count(cfg));
  EXPECT_EQ(captioner_param_count(cfg), 4528u);
}

TEST(Captioner, SeededInitDeterministic) {
  CaptionerModel a = init_captioner(tiny_captioner_config(), 9);
  CaptionerModel b = init_captioner(tiny_captioner_config(), 9);
  EXPECT_EQ(a.params.flatten(), b.params.flatten());
  CaptionerModel c = init_captioner(tiny_captioner_config(), 10);
  EXPECT_NE(a.params.flatten(), c.params.flatten());
}

TEST(Captioner, UniformModelSingleTokenLogprob) {
  CaptionerConfig cfg;
  cfg.vocab_size = 2;  // two-token effective vocabulary
  cfg.embed_dim = 4;
  cfg.feature_dim = 4;
  CaptionerModel m = init_captioner(cfg, 1);
  for (auto& t : m.params.tensors()) std::fill(t.data.begin(), t.data.end(), 0.0);
  SyntheticVideo video;
  video.video_id = 0;
  video.concept_ids = {0};
  video.frames = {{0.1, 0.2, 0.3, 0.4}};
  EXPECT_NEAR(caption_logprob(m, video, {1}), std::log(0.5), 1e-15);
}

TEST(Captioner, LogprobMatchesOracleAndIsPure) {
  RetrievalDataset ds = generate_corpus(tiny_corpus_config(), 21);
  CaptionerModel m = init_captioner(tiny_captioner_config(), 4);
  for (size_t i = 0; i < 3; ++i) {
    const TokenSeq& cap = ds.gt_captions[i].tokens;
    double got = caption_logprob(m, ds.videos[i], cap);
    EXPECT_NEAR(got, oracle_caption_logprob(m, ds.videos[i], cap), 1e-12);
    EXPECT_EQ(got, caption_logprob(m, ds.videos[i], cap));
    EXPECT_LE(got, 0.0);
  }
  EXPECT_THROW(caption_logprob(m, ds.videos[0], {99}), std::invalid_argument);
  EXPECT_THROW(caption_logprob(m, ds.videos[0], {}), std::invalid_argument);
}

TEST(Captioner, GradientMatchesFiniteDifferences) {
  RetrievalDataset ds = generate_corpus(tiny_corpus_config(), 33);
  CaptionerModel m = init_captioner(tiny_captioner_config(), 8);
  const SyntheticVideo& video = ds.videos[0];
  const TokenSeq cap = ds.gt_captions[0].tokens;

  GradStore grads = m.params.zeros_like();
  sft_loss_backward(m, video, cap, 1.0, grads);
  auto loss_fn = [&](const ParamStore& p) {
    CaptionerModel probe{m.cfg, p};
    return sft_loss(probe, video, cap);
  };
  EXPECT_LE(grad_check(loss_fn, m.params, grads, 1e-4), 1e-6);
}

TEST(Captioner, SamplingContracts) {
  RetrievalDataset ds = generate_corpus(tiny_corpus_config(), 2);
  CaptionerModel m = init_captioner(tiny_captioner_config(), 5);
  const SyntheticVideo& video = ds.videos[0];

  EXPECT_THROW(sample_captions(m, video, 3, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(sample_captions(m, video, 0, 0.2, 1), std::invalid_argument);

  auto caps = sample_captions(m, video, 3, 0.2, 7);
  ASSERT_EQ(caps.size(), 3u);
  for (const auto& c : caps) {
    EXPECT_EQ(c.tokens.front(), tok::kBos);
    EXPECT_EQ(c.tokens.back(), tok::kEos);
    EXPECT_LE(c.content().size(), static_cast<size_t>(m.cfg.max_caption_len));
    double sum = 0.0;
    for (double lp : c.per_token_logprob) sum += lp;
    EXPECT_NEAR(sum, c.total_logprob, 1e-10);
    // recorded log-probs are the temperature-1 model distribution
    EXPECT_NEAR(c.total_logprob, caption_logprob(m, video, with_eos(c.content())), 1e-10);
  }

  auto again = sample_captions(m, video, 2, 0.2, 7);
  EXPECT_EQ(again[0].tokens, caps[0].tokens);
  EXPECT_EQ(again[1].tokens, caps[1].tokens);

  auto greedy1 = sample_captions(m, video, 1, 1e-9, 123);
  auto greedy2 = sample_captions(m, video, 1, 1e-9, 456);
  EXPECT_EQ(greedy1[0].tokens, greedy2[0].tokens);
}

TEST(Captioner, SamplingFrequenciesMatchModel) {
  CaptionerConfig cfg = tiny_captioner_config();
  cfg.max_caption_len = 1;
  CaptionerModel m = init_captioner(cfg, 6);
  RetrievalDataset ds = generate_corpus(tiny_corpus_config(), 3);
  const SyntheticVideo& video = ds.videos[1];

  const int n = 10000;
  auto caps = sample_captions(m, video, n, 1.0, 314);
  std::map<int, int> counts;
  for (const auto& c : caps) counts[c.tokens[1]]++;
  for (int t = 0; t < cfg.vocab_size; ++t) {
    double p = std::exp(caption_logprob(m, video, {t}));
    double freq = static_cast<double>(counts[t]) / n;
    double se = std::sqrt(p * (1.0 - p) / n);
    EXPECT_NEAR(freq, p, 3.0 * se + 1e-9) << "token " << t;
  }
}

TEST(Captioner, SftLossUniformAndOracle) {
  CaptionerConfig cfg = tiny_captioner_config();
  CaptionerModel m = init_captioner(cfg, 1);
  for (auto& t : m.params.tensors()) std::fill(t.data.begin(), t.data.end(), 0.0);
  SyntheticVideo video;
  video.frames = {std::vector<double>(8, 0.5)};
  video.concept_ids = {0};
  EXPECT_NEAR(sft_loss(m, video, {5, 6, 7}), std::log(cfg.vocab_size), 1e-12);

  CaptionerModel m2 = init_captioner(cfg, 91);
  double expected = -oracle_caption_logprob(m2, video, with_eos({5, 6, 7})) / 4.0;
  EXPECT_NEAR(sft_loss(m2, video, {5, 6, 7}), expected, 1e-12);
  EXPECT_THROW(sft_loss(m2, video, {}), std::invalid_argument);
}

TEST(Captioner, TrainSftContracts) {
  RetrievalDataset ds = generate_corpus(tiny_corpus_config(), 55);
  CaptionerModel m = init_captioner(tiny_captioner_config(), 12);

  // lr = 0 leaves parameters untouched
  CaptionerModel frozen = m;
  SftOptions opt0;
  opt0.epochs = 1;
  opt0.lr = 0.0;
  opt0.batch_size = 4;
  opt0.seed = 3;
  train_sft(frozen, ds, opt0);
  EXPECT_EQ(frozen.params.flatten(), m.params.flatten());

  SftOptions opt;
  opt.epochs = 30;
  opt.lr = 0.05;
  opt.batch_size = 4;
  opt.seed = 3;
  CaptionerModel a = m, b = m;
  auto trace_a = train_sft(a, ds, opt);
  auto trace_b = train_sft(b, ds, opt);
  EXPECT_EQ(trace_a, trace_b);
  EXPECT_EQ(a.params.flatten(), b.params.flatten());

  EXPECT_LT(trace_a.back(), trace_a.front());
  int decreases = 0;
  for (size_t i = 1; i < trace_a.size(); ++i)
    if (trace_a[i] < trace_a[i - 1]) ++decreases;
  EXPECT_GE(decreases, static_cast<int>(0.8 * (trace_a.size() - 1)));
}

TEST(Captioner, SftDrivesLossTowardZero) {
  CorpusConfig ccfg = tiny_corpus_config();
  ccfg.num_videos = 2;
  RetrievalDataset ds = generate_corpus(ccfg, 70);
  CaptionerModel m = init_captioner(tiny_captioner_config(), 2);
  SftOptions opt;
  opt.epochs = 300;
  opt.lr = 0.05;
  opt.batch_size = 2;
  opt.seed = 5;
  auto trace = train_sft(m, ds, opt);
  EXPECT_LT(trace.back(), 0.05);
}

TEST(Captioner, ReferenceSnapshotIsImmutable) {
  RetrievalDataset ds = generate_corpus(tiny_corpus_config(), 81);
  CaptionerModel m = init_captioner(tiny_captioner_config(), 14);
  ReferenceSnapshot snap = snapshot_reference(m);
  double lp_before = caption_logprob(model_from_snapshot(snap), ds.videos[0],
                                     ds.gt_captions[0].tokens);

  SftOptions opt;
  opt.epochs = 3;
  opt.lr = 0.05;
  opt.batch_size = 4;
  opt.seed = 9;
  train_sft(m, ds, opt);
  double lp_after = caption_logprob(model_from_snapshot(snap), ds.videos[0],
                                    ds.gt_captions[0].tokens);
  EXPECT_EQ(lp_before, lp_after);
  EXPECT_NE(caption_logprob(m, ds.videos[0], ds.gt_captions[0].tokens), lp_before);

  ReferenceSnapshot snap2 = snapshot_reference(model_from_snapshot(snap));
  EXPECT_EQ(snap2.params.flatten(), snap.params.flatten());
}

TEST(Captioner, DumpRoundTrip) {
  RetrievalDataset ds = generate_corpus(tiny_corpus_config(), 44);
  CaptionerModel m = init_captioner(tiny_captioner_config(), 3);
  auto records = sample_caption_dump(m, ds, 3, 0.2, 99);
  EXPECT_EQ(records.size(), ds.size() * 3);
  for (const auto& r : records) EXPECT_FALSE(r.tokens.empty());

  auto dir = std::filesystem::temp_directory_path() / "dgdpo_capdump";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "caps.jsonl").string();
  write_caption_dump(records, path);
  auto back = read_caption_dump(path);
  ASSERT_EQ(back.size(), records.size());
  for (size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].video_id, records[i].video_id);
    EXPECT_EQ(back[i].sample_index, records[i].sample_index);
    EXPECT_EQ(back[i].tokens, records[i].tokens);
    EXPECT_EQ(back[i].total_logprob, records[i].total_logprob);
  }
}
