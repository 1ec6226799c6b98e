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
#include <map>

#include <gtest/gtest.h>

#include "bayesspec/gpa.hpp"
#include "fixtures.hpp"

namespace bayesspec {
namespace {

using testing::dialog_alphabet;
using testing::dialog_automaton;
using testing::theta1;
using testing::theta2;

// Independent oracle: depth-first expansion of every run, applying the halt
// rule at accepting states, no memoization, then normalization.
std::map<Behavior, double> brute_force(const Automaton& a, std::size_t max_len, double h) {
  std::map<Behavior, double> out;
  std::function<void(StateId, Behavior&, double, std::size_t)> go =
      [&](StateId q, Behavior& w, double mass, std::size_t len) {
        std::vector<const Transition*> outs;
        for (const auto& t : a.transitions()) {
          if (t.from == q) outs.push_back(&t);
        }
        const bool acc = std::find(a.accepting().begin(), a.accepting().end(), q) !=
                         a.accepting().end();
        if (acc) {
          const double stop = outs.empty() ? mass : mass * h;
          out[w] += stop;
          mass -= stop;
        }
        if (outs.empty() || len == max_len || mass <= 0) return;
        for (const Transition* t : outs) {
          if (!t->symbol.is_epsilon()) w.push_back(t->symbol);
          go(t->to, w, mass * t->prob, len + 1);
          if (!t->symbol.is_epsilon()) w.pop_back();
        }
      };
  Behavior w;
  go(a.initial(), w, 1.0, 0);
  double z = 0;
  for (auto& [b, p] : out) z += p;
  for (auto& [b, p] : out) p /= z;
  return out;
}

TEST(Validate, DialogAutomatonIsValid) {
  EXPECT_TRUE(validate(dialog_automaton()).empty());
  EXPECT_TRUE(validate(dialog_automaton(true)).empty());
}

TEST(Validate, ZeroProbabilityTransition) {
  const Alphabet s({"a"});
  Automaton a(s, 2, 0, {1}, {{0, Symbol{0}, 0.0, 1}, {0, Symbol{0}, 1.0, 1}});
  auto ds = validate(a);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds[0].message, "transition probability must be in (0,1]");
  EXPECT_TRUE(has_errors(ds));
}

TEST(Validate, OutgoingSumNotOne) {
  const Alphabet s({"a", "b"});
  Automaton a(s, 3, 0, {1, 2}, {{0, Symbol{0}, 0.5, 1}, {0, Symbol{1}, 0.4, 2}});
  auto ds = validate(a);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds[0].message, "outgoing probabilities do not sum to 1");
}

TEST(Validate, UnreachableAcceptingIsWarning) {
  const Alphabet s({"a"});
  Automaton a(s, 3, 0, {1, 2}, {{0, Symbol{0}, 1.0, 1}});
  auto ds = validate(a);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds[0].severity, Severity::kWarning);
  EXPECT_FALSE(has_errors(ds));
}

TEST(Validate, BadEndpointsAndSymbols) {
  const Alphabet s({"a"});
  Automaton a(s, 2, 5, {7}, {{0, Symbol{3}, 1.0, 9}});
  auto ds = validate(a);
  EXPECT_GE(ds.size(), 4u);
  EXPECT_TRUE(has_errors(ds));
}

TEST(BehaviorOf, DropsEpsilon) {
  const Alphabet s = dialog_alphabet();
  bayesspec::Run r;
  r.steps = {{0, s.at("newA"), 1, 1}, {1, s.at("setTitle"), 1, 2}, {2, kEpsilon, 1, 3},
             {3, s.at("show"), 1, 4}};
  EXPECT_EQ(behavior_of(r), theta2());
  bayesspec::Run eps;
  eps.steps = {{0, kEpsilon, 1, 1}, {1, kEpsilon, 1, 2}};
  EXPECT_TRUE(behavior_of(eps).empty());
}

TEST(Enumerate, DialogAutomaton) {
  const auto d = enumerate_behaviors(dialog_automaton());
  ASSERT_EQ(d.entries.size(), 2u);
  // Worked example: 0.66 / 0.33 after rounding.
  EXPECT_NEAR(d.prob(theta1()), 0.66, 0.01);
  EXPECT_NEAR(d.prob(theta2()), 0.33, 0.01);
  EXPECT_NEAR(d.prob(theta1()), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(d.normalizer, 1.0, 1e-12);
  EXPECT_EQ(d.truncated_mass, 0.0);
}

TEST(Enumerate, DroppingShowOnlyBranch) {
  const auto d = enumerate_behaviors(dialog_automaton(true));
  ASSERT_EQ(d.entries.size(), 1u);
  EXPECT_NEAR(d.prob(theta1()), 1.0, 1e-12);
  EXPECT_GT(d.prob(theta1()), enumerate_behaviors(dialog_automaton()).prob(theta1()));
}

TEST(Enumerate, SinglePath) {
  const Alphabet s({"s"});
  Automaton a(s, 2, 0, {1}, {{0, Symbol{0}, 1.0, 1}});
  const auto d = enumerate_behaviors(a);
  ASSERT_EQ(d.entries.size(), 1u);
  EXPECT_DOUBLE_EQ(d.prob({Symbol{0}}), 1.0);
}

TEST(Enumerate, HaltRuleAtNonTerminalAccepting) {
  const Alphabet s({"a", "b"});
  Automaton a(s, 3, 0, {1, 2}, {{0, Symbol{0}, 1.0, 1}, {1, Symbol{1}, 1.0, 2}});
  WalkOptions o;
  o.halt_probability = 0.25;
  const auto d = enumerate_behaviors(a, o);
  EXPECT_NEAR(d.prob({Symbol{0}}), 0.25, 1e-12);
  EXPECT_NEAR(d.prob({Symbol{0}, Symbol{1}}), 0.75, 1e-12);
}

TEST(Enumerate, InitialAcceptingGivesEmptyBehavior) {
  const Alphabet s({"a"});
  Automaton a(s, 2, 0, {0, 1}, {{0, Symbol{0}, 1.0, 1}});
  const auto d = enumerate_behaviors(a);
  EXPECT_NEAR(d.prob({}), 0.5, 1e-12);
}

TEST(Enumerate, NoAcceptingRun) {
  const Alphabet s({"a"});
  Automaton a(s, 3, 0, {2}, {{0, Symbol{0}, 1.0, 1}});
  EXPECT_THROW(enumerate_behaviors(a), NoAcceptingRun);
}

TEST(Enumerate, TruncationReportedAndRefused) {
  const Alphabet s({"a", "b"});
  Automaton a(s, 2, 0, {1}, {{0, Symbol{0}, 0.9, 0}, {0, Symbol{1}, 0.1, 1}});
  WalkOptions o;
  o.max_len = 5;
  EXPECT_THROW(enumerate_behaviors(a, o), EnumerationTruncated);
  o.allow_truncation = true;
  const auto d = enumerate_behaviors(a, o);
  EXPECT_NEAR(d.truncated_mass, std::pow(0.9, 5), 1e-12);
  double sum = 0;
  for (auto& [b, p] : d.entries) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Enumerate, FrontierLimitRefuses) {
  // Two looping symbols: every length-k prefix in {a,b}^k is distinct.
  const Alphabet s({"a", "b", "c"});
  Automaton a(s, 2, 0, {1},
              {{0, Symbol{0}, 0.45, 0}, {0, Symbol{1}, 0.45, 0}, {0, Symbol{2}, 0.1, 1}});
  WalkOptions o;
  o.allow_truncation = true;
  o.max_len = 12;
  o.max_frontier = 1000;
  EXPECT_THROW(enumerate_behaviors(a, o), EnumerationTruncated);
  o.max_frontier = 1u << 13;
  EXPECT_NO_THROW(enumerate_behaviors(a, o));
}

TEST(EnumerateProperty, MatchesBruteForceAndSumsToOne) {
  Rng rng(11);
  for (int i = 0; i < 60; ++i) {
    testing::RandomAutomatonOptions o;
    o.self_loop_rate = 0.2;
    const Automaton a = testing::random_automaton(rng, o);
    ASSERT_FALSE(has_errors(validate(a)));
    WalkOptions w;
    w.max_len = 12;
    w.allow_truncation = true;
    const auto d = enumerate_behaviors(a, w);
    const auto oracle = brute_force(a, 12, w.halt_probability);
    double sum = 0;
    for (auto& [b, p] : d.entries) {
      sum += p;
      EXPECT_GT(p, 0.0);
      for (Symbol s : b) EXPECT_FALSE(s.is_epsilon());
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_LT(testing::total_variation(d.entries, oracle), 1e-9);
    const auto fs = extract_features(a);
    for (auto& [b, p] : d.entries) {
      for (Symbol s : b) EXPECT_TRUE(fs.count(s));
    }
  }
}

TEST(Sample, DialogFrequencies) {
  Rng rng(5);
  const Automaton a = dialog_automaton();
  const int n = 100000;
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += behavior_of(sample_accepting_run(a, {}, rng)) == theta1();
  EXPECT_NEAR(static_cast<double>(hits) / n, 2.0 / 3.0, 0.01);
}

TEST(Sample, RunsChainFromInitial) {
  Rng rng(6);
  testing::RandomAutomatonOptions o;
  o.self_loop_rate = 0.3;
  for (int i = 0; i < 30; ++i) {
    const Automaton a = testing::random_automaton(rng, o);
    const bayesspec::Run r = sample_accepting_run(a, {}, rng);
    StateId q = a.initial();
    double p = 1.0;
    for (const auto& t : r.steps) {
      EXPECT_EQ(t.from, q);
      q = t.to;
      p *= t.prob;
    }
    EXPECT_TRUE(a.is_accepting(q));
    EXPECT_NEAR(r.prob, p, 1e-15);
  }
}

TEST(SampleProperty, EmpiricalMatchesEnumeration) {
  Rng rng(7);
  for (int i = 0; i < 5; ++i) {
    const Automaton a = testing::random_automaton(rng);
    const auto d = enumerate_behaviors(a);
    const std::size_t n = 100000;
    std::map<Behavior, double> freq;
    for (std::size_t k = 0; k < n; ++k) freq[behavior_of(sample_accepting_run(a, {}, rng))] += 1.0 / n;
    const double bound = 3.0 * std::sqrt(static_cast<double>(d.entries.size()) / n);
    EXPECT_LE(testing::total_variation(freq, d.entries), bound);
  }
}

TEST(Sample, SinglePathAlwaysSame) {
  const Alphabet s({"s"});
  Automaton a(s, 2, 0, {1}, {{0, Symbol{0}, 1.0, 1}});
  Rng rng(1);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(behavior_of(sample_accepting_run(a, {}, rng)), Behavior{Symbol{0}});
}

TEST(Sample, UnreachableAcceptingExhaustsBudget) {
  const Alphabet s({"a"});
  Automaton a(s, 3, 0, {2}, {{0, Symbol{0}, 1.0, 1}});
  WalkOptions o;
  o.rejection_budget = 100;
  Rng rng(1);
  EXPECT_THROW(sample_accepting_run(a, o, rng), SamplingBudgetExceeded);
}

TEST(Features, DialogAndEdgeCases) {
  const FeatureSet fs = extract_features(dialog_automaton());
  EXPECT_EQ(fs.size(), 4u);
  const Alphabet s({"a"});
  Automaton eps(s, 2, 0, {1}, {{0, kEpsilon, 1.0, 1}});
  EXPECT_TRUE(extract_features(eps).empty());
  Automaton twice(s, 3, 0, {2}, {{0, Symbol{0}, 1.0, 1}, {1, Symbol{0}, 1.0, 2}});
  EXPECT_EQ(extract_features(twice), FeatureSet{Symbol{0}});
}

TEST(Json, AutomatonRoundTrip) {
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    const Automaton a = testing::random_automaton(rng);
    const auto j = to_json(a);
    EXPECT_EQ(j.at("version"), 1);
    EXPECT_EQ(automaton_from_json(nlohmann::json::parse(j.dump())), a);
  }
}

TEST(Json, MalformedIsDataError) {
  EXPECT_THROW(automaton_from_json(nlohmann::json::parse("{\"version\":1}")), DataError);
}

TEST(Json, BehaviorByName) {
  const Alphabet s = dialog_alphabet();
  const auto j = behavior_to_json(theta1(), s);
  EXPECT_EQ(j.dump(), "[\"newA\",\"setTitle\",\"setItems\",\"show\"]");
  EXPECT_EQ(behavior_from_json(j, s), theta1());
}

TEST(Alphabet, RejectsDuplicatesAndReserved) {
  EXPECT_THROW(Alphabet({"a", "a"}), ConfigError);
  EXPECT_THROW(Alphabet({"<s>"}), ConfigError);
  const Alphabet s({"x", "y"});
  EXPECT_EQ(s.vocab_size(), 4u);
  EXPECT_EQ(s.start_index(), 2u);
  EXPECT_EQ(s.end_index(), 3u);
  EXPECT_THROW(s.at("z"), DataError);
}

}  // namespace
}  // namespace bayesspec
