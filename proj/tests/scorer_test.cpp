// Copyright 2026 The bayesspec Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "bayesspec/scorer.hpp"
#include "fixtures.hpp"

namespace bayesspec::scorer {
namespace {

using testing::dialog_automaton;
using testing::theta1;
using testing::theta2;

TableModel dialog_stub() {
  TableModel m;
  m.probs[theta1()] = 0.99;
  m.probs[theta2()] = 1e-5;
  return m;
}

const std::vector<TopicVector> kUnit = {{1.0}};

// Model that returns log a for psi {0} and log b for psi {1}.
struct TwoPointModel {
  double a, b;
  double log_prob(const TopicVector& psi, const Behavior&) const {
    return std::log(psi[0] == 0.0 ? a : b);
  }
};

TEST(PosteriorLogProb, SingletonAndPair) {
  const TwoPointModel m{0.2, 0.6};
  EXPECT_NEAR(posterior_behavior_log_prob(m, {}, {{0.0}}), std::log(0.2), 1e-15);
  EXPECT_NEAR(posterior_behavior_log_prob(m, {}, {{0.0}, {1.0}}), std::log(0.4), 1e-15);
  EXPECT_THROW(posterior_behavior_log_prob(m, {}, {}), ConfigError);
}

TEST(PosteriorLogProb, StableForTinyProbabilities) {
  const TwoPointModel m{std::exp(-800.0), std::exp(-801.0)};
  // Both underflow as doubles; log-sum-exp keeps the value.
  struct Logs {
    double log_prob(const TopicVector& psi, const Behavior&) const {
      return psi[0] == 0.0 ? -800.0 : -801.0;
    }
  } logs;
  EXPECT_NEAR(posterior_behavior_log_prob(logs, {}, {{0.0}, {1.0}}),
              -800.0 + std::log((1 + std::exp(-1.0)) / 2), 1e-12);
}

TEST(PosteriorLogProb, SingleTopicBundleMatchesSequenceModel) {
  Rng rng(1);
  ModelBundle b;
  b.alphabet = testing::dialog_alphabet();
  b.lda.num_topics = 1;
  b.lda.alpha = {0.1};
  b.lda.alphabet = b.alphabet;
  b.lda.beta = {{0.25, 0.25, 0.25, 0.25}};
  b.seq = seqmodel::SequenceModel::random(8, b.alphabet.vocab_size(), 1, true, rng);
  b.check();
  const auto psis = b.sample_psis(extract_features(dialog_automaton()), 5, rng);
  EXPECT_NEAR(posterior_behavior_log_prob(b, theta1(), psis),
              seqmodel::sequence_log_prob(b.seq, {1.0}, theta1()), 1e-12);
}

TEST(Bias, ConstantContributionsGiveZero) {
  Rng rng(1);
  const std::vector<double> xs(50, 0.3);
  EXPECT_EQ(log_mean_bias(xs, 0.3, rng), 0.0);
  EXPECT_THROW(log_mean_bias(xs, 0.0, rng), DegenerateEstimate);
}

TEST(Bias, SeriesByHand) {
  // var/mean^2 = 0.01.
  const double r = 0.01;
  const double expected = -(r / 2 + 3 * r * r / 4 + 15 * r * r * r / 6 + 105 * r * r * r * r / 8);
  EXPECT_NEAR(log_mean_bias_series(0.01 * 4.0, 2.0), expected, 1e-15);
  EXPECT_NEAR(expected, -0.005077, 1e-6);
}

TEST(Bias, BernoulliMeanAgainstExactBinomial) {
  // E[log(K/n)] - log p for K ~ Binomial(n, p), conditioned on K > 0 (the
  // K = 0 mass is 0.7^50 ~ 2e-8).
  const double p = 0.3;
  const int n = 50;
  double e_log = 0, mass = 0;
  for (int k = 1; k <= n; ++k) {
    const double lpmf = std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1) +
                        k * std::log(p) + (n - k) * std::log(1 - p);
    e_log += std::exp(lpmf) * std::log(static_cast<double>(k) / n);
    mass += std::exp(lpmf);
  }
  const double exact_bias = e_log / mass - std::log(p);
  const double series = log_mean_bias_series(p * (1 - p) / n, p);
  EXPECT_NEAR(series / exact_bias, 1.0, 0.05);
}

TEST(Bias, RunTermOnlyCorrectedWhenMissesAreRare) {
  scorer::ScoreConfig cfg;
  Rng rng(3);
  // One hit in sixteen: variance / mean^2 = 15/16, far outside the guard.
  std::vector<double> rare(16, 0.0);
  rare[0] = 1.0;
  EXPECT_EQ(scorer::run_term_bias(rare, 1.0 / 16, cfg, rng), 0.0);
  // Fifteen of sixteen: ratio 1/240, corrected as usual.
  std::vector<double> common(16, 1.0);
  common[0] = 0.0;
  const double p = 15.0 / 16;
  EXPECT_DOUBLE_EQ(scorer::run_term_bias(common, p, cfg, rng),
                   scorer::log_mean_bias_series(p * (1 - p) / 16, p));
  cfg.run_bias_max_ratio = 1.0;
  EXPECT_LT(scorer::run_term_bias(rare, 1.0 / 16, cfg, rng), 0.0);
}

TEST(Bias, BootstrapVarianceOfBernoulliMean) {
  Rng rng(3);
  std::vector<double> xs;
  for (int i = 0; i < 200; ++i) xs.push_back(i < 60 ? 1.0 : 0.0);
  const double v = bootstrap_mean_variance(xs, 2000, rng);
  const double plug_in = 0.3 * 0.7 / 200;
  EXPECT_NEAR(v / plug_in, 1.0, 0.1);
}

TEST(Bias, ClosedFormBootstrapIsTheResamplingLimit) {
  Rng rng(9);
  std::vector<double> xs;
  for (int i = 0; i < 64; ++i) xs.push_back(std::pow(uniform01(rng), 3));
  double mean = 0, ss = 0;
  for (double x : xs) mean += x / 64;
  for (double x : xs) ss += (x - mean) * (x - mean);
  EXPECT_NEAR(ideal_bootstrap_mean_variance(xs), ss / (64.0 * 64.0), 1e-15);
  const double mc = bootstrap_mean_variance(xs, 20000, rng);
  EXPECT_NEAR(mc / ideal_bootstrap_mean_variance(xs), 1.0, 0.04);
  EXPECT_NEAR(log_mean_bias(xs, mean, rng), log_mean_bias_series(ss / (64.0 * 64.0), mean), 1e-15);
}

TEST(Exact, DialogWithStubModel) {
  const double expected = 2.0 / 3 * std::log((2.0 / 3) / 0.99) + 1.0 / 3 * std::log((1.0 / 3) / 1e-5);
  EXPECT_NEAR(exact_anomaly_score(dialog_automaton(), dialog_stub(), kUnit), expected, 1e-12);
  EXPECT_NEAR(expected, 3.2078, 1e-4);
  // The same formula with the probabilities rounded to two places.
  const double rounded = 0.66 * std::log(0.66 / 0.99) + 0.33 * std::log(0.33 / 1e-5);
  EXPECT_NEAR(rounded, 3.1658, 1e-4);
}

TEST(Exact, DialogWithoutShowOnlyBranch) {
  EXPECT_NEAR(exact_anomaly_score(dialog_automaton(true), dialog_stub(), kUnit),
              std::log(1 / 0.99), 1e-12);
  EXPECT_NEAR(std::log(1 / 0.99), 0.01, 0.001);
}

TEST(Exact, ClosedForms) {
  const Alphabet s({"a", "b"});
  Automaton one(s, 2, 0, {1}, {{0, Symbol{0}, 1.0, 1}});
  TableModel half;
  half.probs[{Symbol{0}}] = 0.5;
  EXPECT_NEAR(exact_anomaly_score(one, half, kUnit), std::log(2.0), 1e-12);

  Automaton two(s, 3, 0, {1, 2}, {{0, Symbol{0}, 0.25, 1}, {0, Symbol{1}, 0.75, 2}});
  TableModel same;
  same.probs[{Symbol{0}}] = 0.25;
  same.probs[{Symbol{1}}] = 0.75;
  EXPECT_NEAR(exact_anomaly_score(two, same, kUnit), 0.0, 1e-12);
}

TEST(ExactProperty, MonotoneInDominantBehavior) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const Automaton a = testing::random_automaton(rng);
    const auto pf = enumerate_behaviors(a);
    auto dominant = std::max_element(pf.entries.begin(), pf.entries.end(),
                                     [](auto& x, auto& y) { return x.second < y.second; });
    TableModel m;
    for (auto& [b, p] : pf.entries) m.probs[b] = 0.5 * p + 0.01;
    const double before = exact_anomaly_score(a, m, kUnit);
    m.probs[dominant->first] *= 0.5;
    EXPECT_GT(exact_anomaly_score(a, m, kUnit), before);
  }
}

TEST(Sampled, SingleBehaviorIsExact) {
  const Alphabet s({"a", "b"});
  Automaton a(s, 3, 0, {2}, {{0, Symbol{0}, 1.0, 1}, {1, Symbol{1}, 1.0, 2}});
  TableModel m;
  m.probs[{Symbol{0}, Symbol{1}}] = 0.99;
  Rng rng(5);
  ScoreConfig cfg;
  cfg.runs_per_triple = 16;
  const auto r = estimate_anomaly_score(a, m, cfg, rng);
  EXPECT_NEAR(r.score, std::log(1 / 0.99), 1e-12);
  EXPECT_EQ(r.std_err, 0.0);
  EXPECT_EQ(r.bias_total, 0.0);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.n_triples, cfg.min_triples);
}

TEST(Sampled, DialogStubWithinThreeStdErr) {
  Rng rng(6);
  ScoreConfig cfg;
  cfg.target_se = 0.02;
  const auto r = estimate_anomaly_score(dialog_automaton(), dialog_stub(), cfg, rng);
  const double exact = exact_anomaly_score(dialog_automaton(), dialog_stub(), kUnit);
  EXPECT_LE(std::abs(r.score - exact), 3 * r.std_err) << r.score << " vs " << exact;
  EXPECT_GT(r.std_err, 0.0);
}

TEST(Sampled, JobsDoNotChangeResult) {
  ScoreConfig cfg;
  cfg.runs_per_triple = 64;
  cfg.max_triples = 120;
  cfg.target_se = 0.0;
  Rng r1(7), r2(7);
  const auto a = estimate_anomaly_score(dialog_automaton(), dialog_stub(), cfg, r1);
  cfg.jobs = 3;
  const auto b = estimate_anomaly_score(dialog_automaton(), dialog_stub(), cfg, r2);
  EXPECT_EQ(a.score, b.score);
  EXPECT_EQ(a.std_err, b.std_err);
  EXPECT_EQ(a.n_triples, 120u);
  EXPECT_FALSE(a.converged);
}

TEST(SampledProperty, StdErrShrinksWithTriples) {
  std::vector<double> small, large;
  for (std::uint64_t seed = 0; seed < 7; ++seed) {
    ScoreConfig cfg;
    cfg.runs_per_triple = 128;
    cfg.target_se = 0.0;
    cfg.min_triples = cfg.max_triples = 100;
    Rng r1(seed);
    small.push_back(estimate_anomaly_score(dialog_automaton(), dialog_stub(), cfg, r1).std_err);
    cfg.min_triples = cfg.max_triples = 200;
    Rng r2(seed);
    large.push_back(estimate_anomaly_score(dialog_automaton(), dialog_stub(), cfg, r2).std_err);
  }
  std::sort(small.begin(), small.end());
  std::sort(large.begin(), large.end());
  EXPECT_LT(large[3], small[3]);
}

TEST(SampledProperty, AgreesWithExactOnRandomAutomata) {
  Rng rng(8);
  int agree = 0;
  const int n = 8;
  for (int i = 0; i < n; ++i) {
    const Automaton a = testing::random_automaton(rng);
    const auto pf = enumerate_behaviors(a);
    TableModel m;
    double z = 0;
    for (auto& [b, p] : pf.entries) z += (m.probs[b] = uniform01(rng) + 0.1);
    for (auto& [b, p] : m.probs) p /= z;
    ScoreConfig cfg;
    Rng r(100 + i);
    const auto rep = estimate_anomaly_score(a, m, cfg, r);
    const double exact = exact_anomaly_score(a, m, kUnit);
    agree += std::abs(rep.score - exact) <= 3 * rep.std_err;
  }
  EXPECT_GE(agree, n - 1);
}

TEST(Sampled, Errors) {
  Rng rng(1);
  ScoreConfig cfg;
  cfg.runs_per_triple = 0;
  EXPECT_THROW(estimate_anomaly_score(dialog_automaton(), dialog_stub(), cfg, rng), ConfigError);
  const Alphabet s({"a"});
  Automaton eps(s, 2, 0, {1}, {{0, kEpsilon, 1.0, 1}});
  EXPECT_THROW(estimate_anomaly_score(eps, dialog_stub(), ScoreConfig{}, rng), DataError);
}

TEST(Knn, SelfNovelAndClosedForm) {
  const Alphabet s({"a", "b", "c"});
  Automaton a(s, 2, 0, {1}, {{0, Symbol{0}, 1.0, 1}});
  Automaton g(s, 3, 0, {1, 2}, {{0, Symbol{0}, 0.5, 1}, {0, Symbol{1}, 0.5, 2}});
  Automaton novel(s, 2, 0, {1}, {{0, Symbol{2}, 1.0, 1}});
  EXPECT_EQ(knn_score(a, {g, a}), 0.0);
  EXPECT_NEAR(knn_score(a, {g}), std::log(2.0), 1e-12);
  EXPECT_EQ(knn_score(novel, {a, g}), kInfinity);
  EXPECT_NEAR(knn_score(a, {g, a}, 2), std::log(2.0) / 2, 1e-12);
  EXPECT_THROW(knn_score(a, {}), ConfigError);
}

TEST(Json, InfiniteSentinel) {
  EXPECT_EQ(score_to_json(kInfinity).dump(), "\"inf\"");
  EXPECT_EQ(score_to_json(0.5).dump(), "0.5");
}

}  // namespace
}  // namespace bayesspec::scorer
