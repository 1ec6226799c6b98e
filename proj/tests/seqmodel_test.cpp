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

#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "bayesspec/seqmodel.hpp"
#include "fixtures.hpp"

namespace bayesspec::seqmodel {
namespace {

// Plain-loop reimplementation of the recurrence for cross-checking.
double oracle_log_prob(const SequenceModel& m, const TopicVector& psi,
                       const std::vector<std::uint32_t>& in,
                       const std::vector<std::uint32_t>& out) {
  const std::size_t H = m.hidden, V = m.vocab;
  std::vector<double> h(H, 0.0);
  double total = 0;
  for (std::size_t t = 0; t < in.size(); ++t) {
    std::vector<double> a(H);
    for (std::size_t i = 0; i < H; ++i) {
      double s = m.bh(i) + m.U(i, in[t]);
      for (std::size_t j = 0; j < H; ++j) s += m.W(i, j) * h[j];
      for (std::size_t k = 0; k < m.topics; ++k) s += m.V(i, k) * psi[k];
      a[i] = std::tanh(s);
    }
    h = a;
    std::vector<double> o(V);
    double mx = -1e300;
    for (std::size_t v = 0; v < V; ++v) {
      o[v] = m.by(v);
      for (std::size_t j = 0; j < H; ++j) o[v] += m.T(v, j) * h[j];
      mx = std::max(mx, o[v]);
    }
    double z = 0;
    for (double x : o) z += std::exp(x - mx);
    total += std::max(kLogProbFloor, o[out[t]] - mx - std::log(z));
  }
  return total;
}

SequenceModel small_model(std::uint64_t seed, bool conditioned = true, double scale = 0.5) {
  Rng rng(seed);
  SequenceModel m = SequenceModel::random(8, 10, 3, conditioned, rng, scale);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (Eigen::Index i = 0; i < m.bh.size(); ++i) m.bh(i) = u(rng);
  for (Eigen::Index i = 0; i < m.by.size(); ++i) m.by(i) = u(rng);
  return m;
}

Behavior seq(std::initializer_list<std::uint32_t> ids) {
  Behavior b;
  for (auto i : ids) b.push_back(Symbol{i});
  return b;
}

TEST(Forward, OutputsAreDistributions) {
  const SequenceModel m = small_model(1);
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint32_t> in;
    for (int t = 0; t < 12; ++t) in.push_back(static_cast<std::uint32_t>(rng() % 10));
    const auto psi = sample_dirichlet(std::vector<double>(3, 1.0), rng);
    for (const auto& y : forward(m, psi, in)) {
      EXPECT_GE(y.minCoeff(), 0.0);
      EXPECT_NEAR(y.sum(), 1.0, 1e-9);
    }
  }
}

TEST(Forward, ZeroModelIsUniform) {
  const SequenceModel m = SequenceModel::zeros(4, 6, 2, true);
  for (const auto& y : forward(m, {0.5, 0.5}, {0, 1, 4})) {
    for (Eigen::Index v = 0; v < y.size(); ++v) EXPECT_NEAR(y(v), 1.0 / 6.0, 1e-15);
  }
  const Behavior b = seq({0, 1, 2});
  EXPECT_NEAR(sequence_log_prob(m, {0.5, 0.5}, b), 4 * std::log(1.0 / 6.0), 1e-12);
}

TEST(Forward, UnconditionedIgnoresPsi) {
  const SequenceModel m = small_model(3, false);
  EXPECT_EQ(m.V.size(), 0);
  const Behavior b = seq({1, 2, 3});
  EXPECT_EQ(sequence_log_prob(m, {1, 0, 0}, b), sequence_log_prob(m, {0, 0.5, 0.5}, b));
  EXPECT_EQ(sequence_log_prob(m, {}, b), sequence_log_prob(m, {0.2}, b));
}

TEST(Forward, Errors) {
  const SequenceModel m = small_model(4);
  EXPECT_THROW(forward(m, {1, 0}, {0}), DimensionMismatch);
  EXPECT_THROW(forward(m, {1, 0, 0}, {10}), SymbolOutOfVocab);
  EXPECT_THROW(sequence_log_prob(m, {1, 0, 0}, seq({8})), SymbolOutOfVocab);  // START
  EXPECT_THROW(sequence_log_prob(m, {1, 0, 0}, Behavior{kEpsilon}), SymbolOutOfVocab);
}

TEST(LogProb, MatchesPlainLoopOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const SequenceModel m = small_model(100 + trial, trial % 2 == 0, 1.0);
    const auto psi = sample_dirichlet(std::vector<double>(3, 1.0), rng);
    Behavior b;
    const int n = 1 + static_cast<int>(rng() % 6);
    for (int i = 0; i < n; ++i) b.push_back(Symbol{static_cast<std::uint32_t>(rng() % 8)});
    std::vector<std::uint32_t> in = {8}, out;
    for (Symbol s : b) {
      in.push_back(s.id);
      out.push_back(s.id);
    }
    out.push_back(9);
    EXPECT_NEAR(sequence_log_prob(m, psi, b), oracle_log_prob(m, psi, in, out), 1e-10);
    std::vector<std::uint32_t> pin, pout;
    for (std::size_t t = 0; t + 1 < b.size(); ++t) {
      pin.push_back(b[t].id);
      pout.push_back(b[t + 1].id);
    }
    EXPECT_NEAR(sequence_log_prob(m, psi, b, ScoreMode::kConditional),
                oracle_log_prob(m, psi, pin, pout), 1e-10);
  }
}

TEST(LogProb, ConditionalModeEdgeCases) {
  const SequenceModel m = small_model(6);
  EXPECT_EQ(sequence_log_prob(m, {1, 0, 0}, seq({3}), ScoreMode::kConditional), 0.0);
  EXPECT_THROW(sequence_log_prob(m, {1, 0, 0}, {}, ScoreMode::kConditional), ConfigError);
}

TEST(LogProb, FloorPerToken) {
  SequenceModel m = SequenceModel::zeros(2, 5, 1, true);
  m.by(0) = -1000.0;
  // Symbol 0 is practically impossible; each occurrence costs exactly the floor.
  EXPECT_NEAR(sequence_log_prob(m, {1.0}, seq({0, 0})),
              2 * kLogProbFloor + std::log(1.0 / (4 + std::exp(-1000.0))), 1e-9);
}

TEST(LogProbProperty, NormalizedModeIsSubDistribution) {
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    Rng rng(seed);
    const SequenceModel m = SequenceModel::random(6, 5, 2, true, rng, 1.0);  // 3 symbols
    const TopicVector psi = {0.3, 0.7};
    double total = 0;
    std::function<void(Behavior&, int)> go = [&](Behavior& b, int left) {
      total += std::exp(sequence_log_prob(m, psi, b));
      if (left == 0) return;
      for (std::uint32_t s = 0; s < 3; ++s) {
        b.push_back(Symbol{s});
        go(b, left - 1);
        b.pop_back();
      }
    };
    Behavior b;
    go(b, 5);
    EXPECT_LE(total, 1.0 + 1e-6);
    EXPECT_GT(total, 0.0);
  }
}

TEST(GradientCheck, SmallModel) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const SequenceModel m = small_model(seed);
    Rng rng(seed);
    TrainingExample ex{{sample_dirichlet(std::vector<double>(3, 1.0), rng)}, seq({0, 3, 5, 7, 2})};
    const auto r = gradient_check(m, ex, 1e-5, rng);
    EXPECT_LE(r.max_relative_error, 1e-4);
    EXPECT_EQ(r.entries_checked, 8u * 8 + 8 * 3 + 8 * 10 + 10 * 8 + 8 + 10);
    const auto rp = gradient_check(m, ex, 1e-5, rng, ScoreMode::kConditional);
    EXPECT_LE(rp.max_relative_error, 1e-4);
  }
}

TEST(GradientCheck, EmptyBehaviorNormalized) {
  const SequenceModel m = small_model(14);
  Rng rng(1);
  TrainingExample ex{{{0.2, 0.3, 0.5}}, {}};
  const auto r = gradient_check(m, ex, 1e-5, rng);
  EXPECT_LE(r.max_relative_error, 1e-4);
}

TEST(GradientCheck, UnconditionedHasNoV) {
  const SequenceModel m = small_model(15, false);
  Rng rng(1);
  TrainingExample ex{{}, seq({1, 2})};
  const auto r = gradient_check(m, ex, 1e-5, rng);
  EXPECT_LE(r.max_relative_error, 1e-4);
  EXPECT_EQ(std::count(r.parameters.begin(), r.parameters.end(), "V"), 0);
  EXPECT_THROW(gradient_check(m, ex, 1e-2, rng), ConfigError);
}

TEST(Train, MemorizesSingleBehavior) {
  Rng rng(20);
  SequenceModel m = SequenceModel::random(16, 6, 2, true, rng);
  std::vector<TrainingExample> data(20, TrainingExample{{{0.5, 0.5}}, seq({0, 1, 2, 3})});
  TrainOptions o;
  o.epochs = 60;
  o.learning_rate = 0.1;
  const auto res = train(m, data, o, rng);
  EXPECT_LE(std::exp(mean_cross_entropy(res.model, data)), 1.05);
  EXPECT_LT(res.loss_history.back(), res.loss_history.front());
}

TEST(Train, ZeroLearningRateLeavesWeights) {
  Rng rng(21);
  const SequenceModel m = SequenceModel::random(8, 6, 2, true, rng);
  std::vector<TrainingExample> data = {{{{0.5, 0.5}}, seq({0, 1})}, {{{1.0, 0.0}}, seq({2})}};
  TrainOptions o;
  o.epochs = 5;
  o.learning_rate = 0.0;
  const auto res = train(m, data, o, rng);
  EXPECT_EQ(res.model.W, m.W);
  EXPECT_EQ(res.model.T, m.T);
  for (double l : res.loss_history) EXPECT_NEAR(l, res.loss_history.front(), 1e-12);
}

// Two patterns that share a first symbol and differ afterwards; the topic
// vector tells them apart.
std::vector<TrainingExample> segregated(std::size_t n) {
  std::vector<TrainingExample> d;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 2 == 0) {
      d.push_back({{{0.95, 0.05}}, seq({0, 1, 2})});
    } else {
      d.push_back({{{0.05, 0.95}}, seq({0, 2, 1, 3})});
    }
  }
  return d;
}

TEST(Train, ConditioningLowersHeldOutLoss) {
  const auto train_set = segregated(40);
  const auto held_out = segregated(10);
  TrainOptions o;
  o.epochs = 40;
  Rng r1(30), r2(30);
  const auto cond = train(SequenceModel::random(16, 6, 2, true, r1), train_set, o, r1);
  const auto uncond = train(SequenceModel::random(16, 6, 2, false, r2), train_set, o, r2);
  EXPECT_LT(mean_cross_entropy(cond.model, held_out), mean_cross_entropy(uncond.model, held_out));

  // The topic input is live: the prediction after the shared first symbol
  // flips with psi.
  const auto ya = forward(cond.model, {0.95, 0.05}, {4, 0});
  const auto yb = forward(cond.model, {0.05, 0.95}, {4, 0});
  Eigen::Index ia, ib;
  ya.back().maxCoeff(&ia);
  yb.back().maxCoeff(&ib);
  EXPECT_EQ(ia, 1);
  EXPECT_EQ(ib, 2);
}

TEST(Train, DialogPatternPrefersSetItems) {
  const Alphabet s = testing::dialog_alphabet();
  const TopicVector psi = {0.98, 0.01, 0.01};
  std::vector<TrainingExample> data(50, TrainingExample{{psi}, testing::theta1()});
  Rng rng(31);
  TrainOptions o;
  o.epochs = 30;
  const auto res = train(SequenceModel::random(16, s.vocab_size(), 3, true, rng), data, o, rng);
  const double p1 = std::exp(sequence_log_prob(res.model, psi, testing::theta1()));
  const double p2 = std::exp(sequence_log_prob(res.model, psi, testing::theta2()));
  EXPECT_GT(p1, 0.9);
  EXPECT_GT(p1, 100 * p2);
}

TEST(Train, NonFiniteLossAborts) {
  Rng rng(32);
  SequenceModel m = SequenceModel::random(4, 5, 1, true, rng);
  m.T(0, 0) = std::numeric_limits<double>::quiet_NaN();
  std::vector<TrainingExample> data = {{{{1.0}}, seq({0, 1})}};
  EXPECT_THROW(train(m, data, {}, rng), NonFiniteLoss);
  EXPECT_THROW(train(m, {}, {}, rng), EmptyCorpus);
}

TEST(Train, DeterministicPerSeed) {
  const auto d = segregated(10);
  TrainOptions o;
  o.epochs = 3;
  Rng a(40), b(40);
  const auto ra = train(SequenceModel::random(8, 6, 2, true, a), d, o, a);
  const auto rb = train(SequenceModel::random(8, 6, 2, true, b), d, o, b);
  EXPECT_EQ(ra.model.W, rb.model.W);
  EXPECT_EQ(ra.loss_history, rb.loss_history);
}

TEST(Json, RoundTripIsBitExact) {
  const SequenceModel m = small_model(50);
  Alphabet s({"a", "b", "c", "d", "e", "f", "g", "h"});
  const auto j = nlohmann::json::parse(to_json(m, s).dump());
  const auto [back, sigma] = seqmodel_from_json(j);
  EXPECT_EQ(sigma, s);
  EXPECT_EQ(back.W, m.W);
  EXPECT_EQ(back.V, m.V);
  EXPECT_EQ(back.U, m.U);
  EXPECT_EQ(back.T, m.T);
  EXPECT_EQ(back.bh, m.bh);
  EXPECT_EQ(back.by, m.by);
  auto bad = j;
  bad["W"] = "AAAA";
  EXPECT_THROW(seqmodel_from_json(bad), DataError);
}

TEST(Base64, KnownVectors) {
  const std::string text = "foobar";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  EXPECT_EQ(base64::encode(std::span(bytes).first(1)), "Zg==");
  EXPECT_EQ(base64::encode(std::span(bytes).first(2)), "Zm8=");
  EXPECT_EQ(base64::encode(bytes), "Zm9vYmFy");
  EXPECT_EQ(base64::decode("Zm9vYg=="), std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 4));
  const std::vector<double> xs = {1.0, -0.0, 3.5e-300};
  EXPECT_EQ(base64::decode_doubles(base64::encode_doubles(xs)), xs);
  // 1.0 as little-endian IEEE-754.
  EXPECT_EQ(base64::encode_doubles(std::vector<double>{1.0}), "AAAAAAAA8D8=");
}

}  // namespace
}  // namespace bayesspec::seqmodel
