#include <gtest/gtest.h>
#include <quadmath.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dgdpo/checkpoint.hpp"
#include "dgdpo/common.hpp"
#include "dgdpo/numerics.hpp"
#include "dgdpo/tensor.hpp"

using namespace dgdpo;

namespace {

// Quad-precision recomputation, deliberately without max-subtraction; valid
// as an oracle for moderate logits.
std::vector<double> log_softmax_oracle(const std::vector<double>& logits) {
  __float128 sum = 0;
  for (double v : logits) sum += expq(static_cast<__float128>(v));
  __float128 lse = logq(sum);
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i)
    out[i] = static_cast<double>(static_cast<__float128>(logits[i]) - lse);
  return out;
}

}  // namespace

TEST(LogSoftmax, SymmetricPair) {
  auto out = log_softmax(std::vector<double>{0.0, 0.0});
  EXPECT_NEAR(out[0], std::log(0.5), 1e-15);
  EXPECT_NEAR(out[1], std::log(0.5), 1e-15);
}

TEST(LogSoftmax, LargeMagnitudeStability) {
  auto out = log_softmax(std::vector<double>{1000.0, 0.0});
  EXPECT_NEAR(out[0], 0.0, 1e-12);
  EXPECT_NEAR(out[1], -1000.0, 1e-9);
  EXPECT_TRUE(std::isfinite(out[0]));
  EXPECT_TRUE(std::isfinite(out[1]));
}

TEST(LogSoftmax, MatchesQuadPrecisionOracle) {
  std::vector<double> logits{1.0, 2.0, 3.0};
  auto got = log_softmax(logits);
  auto want = log_softmax_oracle(logits);
  for (size_t i = 0; i < logits.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
}

TEST(LogSoftmax, NormalizesAndIsNonPositive) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> logits(2 + static_cast<size_t>(rng.uniform_int(0, 30)));
    for (auto& v : logits) v = 10.0 * rng.gaussian();
    auto out = log_softmax(logits);
    double sum = 0.0;
    for (double v : out) {
      EXPECT_LE(v, 0.0);
      sum += std::exp(v);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(LogSoftmax, RejectsBadInput) {
  EXPECT_THROW(log_softmax(std::vector<double>{1.0}), std::invalid_argument);
  EXPECT_THROW(log_softmax(std::vector<double>{1.0, std::nan("")}), std::runtime_error);
}

TEST(ParamStore, FlattenUnflattenIdentity) {
  ParamStore p;
  Rng rng(3);
  fill_gaussian(p.add("a", {2, 3}), rng, 1.0);
  fill_gaussian(p.add("b", {4}), rng, 1.0);
  EXPECT_EQ(p.total_params(), 10u);
  auto flat = p.flatten();
  ParamStore q = p.zeros_like();
  q.unflatten(flat);
  EXPECT_EQ(q.flatten(), flat);
  EXPECT_THROW(p.add("a", {1}), std::invalid_argument);
}

TEST(Optimizer, ZeroGradLeavesParamsUnchanged) {
  ParamStore p;
  Rng rng(5);
  fill_gaussian(p.add("w", {3, 3}), rng, 1.0);
  auto before = p.flatten();
  GradStore g = p.zeros_like();
  OptimState st = make_optim_state(p, {0.3, 0.0});
  optimizer_step(p, g, st);
  EXPECT_EQ(p.flatten(), before);
  EXPECT_EQ(st.step, 1);
}

TEST(Optimizer, PlainDescentDefinition) {
  ParamStore p;
  p.add("x", {1}).at(0) = 2.0;
  GradStore g = p.zeros_like();
  g.at("x").at(0) = 1.0;
  OptimState st = make_optim_state(p, {0.1, 0.0});
  optimizer_step(p, g, st);
  EXPECT_DOUBLE_EQ(p.at("x").at(0), 1.9);
}

TEST(Optimizer, TwoStepMomentumRecurrence) {
  // hand-rolled: v1 = g, x1 = x0 - lr*g; v2 = mu*g + g, x2 = x1 - lr*(mu+1)*g
  double lr = 0.1, mu = 0.5, g0 = 2.0, x0 = 1.0;
  ParamStore p;
  p.add("x", {1}).at(0) = x0;
  GradStore g = p.zeros_like();
  g.at("x").at(0) = g0;
  OptimState st = make_optim_state(p, {lr, mu});
  optimizer_step(p, g, st);
  optimizer_step(p, g, st);
  double expected = x0 - lr * g0 - lr * (mu + 1.0) * g0;
  EXPECT_NEAR(p.at("x").at(0), expected, 1e-15);
}

TEST(Optimizer, AdamTwoStepRecurrence) {
  // constant gradient: mhat = g and vhat = g*g every step, so each step
  // subtracts lr * g / (|g| + eps)
  double lr = 0.05, g0 = 2.0, x0 = 1.0, eps = 1e-8;
  ParamStore p;
  p.add("x", {1}).at(0) = x0;
  GradStore g = p.zeros_like();
  g.at("x").at(0) = g0;
  OptimConfig cfg;
  cfg.lr = lr;
  cfg.rule = OptimRule::adam;
  OptimState st = make_optim_state(p, cfg);
  optimizer_step(p, g, st);
  optimizer_step(p, g, st);
  double step = lr * g0 / (std::fabs(g0) + eps);
  EXPECT_NEAR(p.at("x").at(0), x0 - 2.0 * step, 1e-12);
}

TEST(Optimizer, DeterministicBitwise) {
  auto run = [] {
    ParamStore p;
    Rng rng(11);
    fill_gaussian(p.add("w", {8}), rng, 1.0);
    GradStore g = p.zeros_like();
    Rng rng2(13);
    fill_gaussian(g.at("w"), rng2, 1.0);
    OptimState st = make_optim_state(p, {0.05, 0.9});
    for (int i = 0; i < 5; ++i) optimizer_step(p, g, st);
    return p.flatten();
  };
  EXPECT_EQ(run(), run());
}

TEST(Optimizer, RejectsMismatchAndNonFinite) {
  ParamStore p;
  p.add("x", {2});
  ParamStore other;
  other.add("y", {2});
  OptimState st = make_optim_state(p, {0.1, 0.0});
  EXPECT_THROW(optimizer_step(p, other, st), std::invalid_argument);
  GradStore g = p.zeros_like();
  g.at("x").at(0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(optimizer_step(p, g, st), std::runtime_error);
}

TEST(GradCheck, QuadraticLoss) {
  ParamStore p;
  p.add("x", {1}).at(0) = 3.0;
  GradStore analytic = p.zeros_like();
  analytic.at("x").at(0) = 6.0;
  auto loss = [](const ParamStore& q) { return q.at("x").at(0) * q.at("x").at(0); };
  EXPECT_LE(grad_check(loss, p, analytic, 1e-4), 1e-6);
}

TEST(GradCheck, DetectsWrongGradient) {
  ParamStore p;
  p.add("x", {1}).at(0) = 3.0;
  GradStore wrong = p.zeros_like();
  wrong.at("x").at(0) = 12.0;  // doubled
  auto loss = [](const ParamStore& q) { return q.at("x").at(0) * q.at("x").at(0); };
  EXPECT_NEAR(grad_check(loss, p, wrong, 1e-4), 0.5, 1e-4);
}

TEST(GradCheck, RejectsBadEps) {
  ParamStore p;
  p.add("x", {1});
  GradStore g = p.zeros_like();
  auto loss = [](const ParamStore&) { return 0.0; };
  EXPECT_THROW(grad_check(loss, p, g, 1e-2), std::invalid_argument);
}

TEST(Checkpoint, RoundTripBitExact) {
  ParamStore p;
  Rng rng(23);
  fill_gaussian(p.add("emb", {5, 4}), rng, 0.7);
  fill_gaussian(p.add("bias", {4}), rng, 0.7);
  nlohmann::json cfg{{"embed_dim", 4}};
  auto dir = std::filesystem::temp_directory_path() / "dgdpo_ckpt_test";
  std::filesystem::create_directories(dir);
  std::string prefix = (dir / "model").string();
  save_checkpoint(p, "captioner", cfg, 42, 7, prefix);
  Checkpoint ck = load_checkpoint(prefix);
  EXPECT_EQ(ck.model_kind, "captioner");
  EXPECT_EQ(ck.seed, 42u);
  EXPECT_EQ(ck.step, 7);
  EXPECT_EQ(ck.config.at("embed_dim").get<int>(), 4);
  ASSERT_TRUE(ck.params.same_layout(p));
  EXPECT_EQ(ck.params.flatten(), p.flatten());
}

TEST(Rng, DeterministicStreams) {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(100);
  EXPECT_NE(Rng(99).next_u64(), c.next_u64());
}
