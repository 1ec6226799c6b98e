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

/*
 * Generative probabilistic automata.
 *
 * An automaton is a tuple <Q, Sigma, q0, Q_A, delta> whose transitions carry
 * an emitted symbol (possibly epsilon) and a probability in (0, 1]. A run is
 * a transition sequence starting at q0; it is accepting when it ends in Q_A.
 * The behavior of a run is its emitted word with epsilons removed, and the
 * behavior distribution P_F(theta) is the run mass producing theta divided by
 * the mass Z of all accepting runs.
 *
 * Generative stopping rule. A walk standing on an accepting state with no
 * outgoing transitions stops and accepts. A walk standing on an accepting
 * state that still has outgoing transitions stops with probability
 * `halt_probability` and otherwise continues. Walks that dead-end outside
 * Q_A or would exceed `max_len` transitions are rejected. Exact enumeration
 * and the rejection sampler both implement this rule, so at equal settings
 * they describe the same distribution. For automata whose accepting states
 * are all terminal the rule is invisible and P(run) is the plain product of
 * transition probabilities.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bayesspec/error.hpp"
#include "bayesspec/random.hpp"

namespace bayesspec {

struct Symbol {
  static constexpr std::uint32_t kEpsilonId =
      std::numeric_limits<std::uint32_t>::max();

  std::uint32_t id = kEpsilonId;

  constexpr bool is_epsilon() const { return id == kEpsilonId; }
  constexpr auto operator<=>(const Symbol&) const = default;
};

inline constexpr Symbol kEpsilon{};

/// Observable symbol names. The sequence model appends two sentinels (START
/// and END) after the last name; their names are reserved here.
class Alphabet {
 public:
  static constexpr std::string_view kStartName = "<s>";
  static constexpr std::string_view kEndName = "</s>";

  Alphabet() = default;

  explicit Alphabet(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::uint32_t i = 0; i < names_.size(); ++i) {
      const std::string& n = names_[i];
      if (n.empty() || n == kStartName || n == kEndName) {
        throw ConfigError("alphabet: invalid symbol name '" + n + "'");
      }
      if (!index_.emplace(n, i).second) {
        throw ConfigError("alphabet: duplicate symbol name '" + n + "'");
      }
    }
  }

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }

  /// Vocabulary size seen by the sequence model: names plus START and END.
  std::size_t vocab_size() const { return names_.size() + 2; }
  std::uint32_t start_index() const {
    return static_cast<std::uint32_t>(names_.size());
  }
  std::uint32_t end_index() const {
    return static_cast<std::uint32_t>(names_.size() + 1);
  }

  const std::vector<std::string>& names() const { return names_; }

  const std::string& name(Symbol s) const {
    static const std::string kEps = "<eps>";
    if (s.is_epsilon()) return kEps;
    return names_.at(s.id);
  }

  std::optional<Symbol> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return Symbol{it->second};
  }

  Symbol at(std::string_view name) const {
    if (auto s = find(name)) return *s;
    throw DataError("unknown symbol '" + std::string(name) + "'");
  }

  bool contains(Symbol s) const { return !s.is_epsilon() && s.id < size(); }

  friend bool operator==(const Alphabet& a, const Alphabet& b) {
    return a.names_ == b.names_;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// A word over the alphabet; never contains epsilon.
using Behavior = std::vector<Symbol>;
using StateId = std::uint32_t;
using FeatureSet = std::set<Symbol>;

struct Transition {
  StateId from = 0;
  Symbol symbol;
  double prob = 1.0;
  StateId to = 0;

  friend bool operator==(const Transition&, const Transition&) = default;
};

/// Immutable after construction. The constructor does not enforce the
/// automaton invariants so that `validate` can report them; out-of-range
/// transitions are simply left out of the adjacency index.
class Automaton {
 public:
  Automaton() = default;

  Automaton(Alphabet alphabet, std::size_t num_states, StateId initial,
            std::vector<StateId> accepting, std::vector<Transition> transitions)
      : alphabet_(std::move(alphabet)),
        num_states_(num_states),
        initial_(initial),
        accepting_(std::move(accepting)),
        transitions_(std::move(transitions)) {
    std::sort(accepting_.begin(), accepting_.end());
    accepting_.erase(std::unique(accepting_.begin(), accepting_.end()),
                     accepting_.end());
    is_accepting_.assign(num_states_, false);
    for (StateId q : accepting_) {
      if (q < num_states_) is_accepting_[q] = true;
    }
    out_.assign(num_states_, {});
    for (std::size_t i = 0; i < transitions_.size(); ++i) {
      const Transition& t = transitions_[i];
      if (t.from < num_states_ && t.to < num_states_) out_[t.from].push_back(i);
    }
  }

  const Alphabet& alphabet() const { return alphabet_; }
  std::size_t num_states() const { return num_states_; }
  StateId initial() const { return initial_; }
  const std::vector<StateId>& accepting() const { return accepting_; }
  const std::vector<Transition>& transitions() const { return transitions_; }

  bool is_accepting(StateId q) const {
    return q < is_accepting_.size() && is_accepting_[q];
  }

  /// Indices into transitions() leaving state q.
  const std::vector<std::size_t>& outgoing(StateId q) const {
    static const std::vector<std::size_t> kNone;
    return q < out_.size() ? out_[q] : kNone;
  }

  /// Copy with the symbol of one transition replaced; structure and
  /// probabilities are untouched.
  Automaton with_symbol(std::size_t transition, Symbol s) const {
    std::vector<Transition> ts = transitions_;
    ts.at(transition).symbol = s;
    return Automaton(alphabet_, num_states_, initial_, accepting_,
                     std::move(ts));
  }

  friend bool operator==(const Automaton& a, const Automaton& b) {
    return a.alphabet_ == b.alphabet_ && a.num_states_ == b.num_states_ &&
           a.initial_ == b.initial_ && a.accepting_ == b.accepting_ &&
           a.transitions_ == b.transitions_;
  }

 private:
  Alphabet alphabet_;
  std::size_t num_states_ = 0;
  StateId initial_ = 0;
  std::vector<StateId> accepting_;
  std::vector<Transition> transitions_;
  std::vector<bool> is_accepting_;
  std::vector<std::vector<std::size_t>> out_;
};

struct Run {
  std::vector<Transition> steps;
  double prob = 1.0;  // product of step probabilities
};

struct BehaviorDistribution {
  std::map<Behavior, double> entries;
  double normalizer = 0.0;      // Z, mass of accepting runs within max_len
  double truncated_mass = 0.0;  // walk mass still alive at max_len

  double prob(const Behavior& b) const {
    auto it = entries.find(b);
    return it == entries.end() ? 0.0 : it->second;
  }
};

struct WalkOptions {
  std::size_t max_len = 64;
  double halt_probability = 0.5;
  std::size_t rejection_budget = 1'000'000;
  double truncation_tolerance = 1e-6;
  bool allow_truncation = false;
  // Distinct (state, prefix) pairs kept per enumeration step. Loops over
  // several symbols make this grow fast with max_len.
  std::size_t max_frontier = 1'000'000;
};

enum class Severity { kError, kWarning };

struct Diagnostic {
  Severity severity;
  std::string message;
};

inline constexpr double kProbSumTolerance = 1e-9;

/// Reports every invariant violation. Unreachable accepting states are
/// warnings; everything else is an error.
inline std::vector<Diagnostic> validate(const Automaton& a) {
  std::vector<Diagnostic> out;
  auto error = [&](std::string m) {
    out.push_back({Severity::kError, std::move(m)});
  };
  const std::size_t n = a.num_states();
  if (a.initial() >= n) error("initial state is not a state");
  for (StateId q : a.accepting()) {
    if (q >= n) error("accepting state " + std::to_string(q) + " is not a state");
  }
  bool bad_prob = false;
  bool bad_endpoint = false;
  bool bad_symbol = false;
  for (const Transition& t : a.transitions()) {
    if (t.from >= n || t.to >= n) bad_endpoint = true;
    if (!t.symbol.is_epsilon() && !a.alphabet().contains(t.symbol)) {
      bad_symbol = true;
    }
    if (!(t.prob > 0.0 && t.prob <= 1.0)) bad_prob = true;
  }
  if (bad_endpoint) error("transition endpoint is not a state");
  if (bad_symbol) error("transition symbol is not in the alphabet");
  if (bad_prob) error("transition probability must be in (0,1]");

  bool bad_sum = false;
  for (StateId q = 0; q < n; ++q) {
    const auto& out_q = a.outgoing(q);
    if (out_q.empty()) continue;
    double s = 0.0;
    for (std::size_t i : out_q) s += a.transitions()[i].prob;
    if (std::abs(s - 1.0) > kProbSumTolerance) bad_sum = true;
  }
  if (bad_sum) error("outgoing probabilities do not sum to 1");

  if (a.initial() < n) {
    std::vector<bool> seen(n, false);
    std::vector<StateId> stack{a.initial()};
    seen[a.initial()] = true;
    while (!stack.empty()) {
      StateId q = stack.back();
      stack.pop_back();
      for (std::size_t i : a.outgoing(q)) {
        StateId r = a.transitions()[i].to;
        if (!seen[r]) {
          seen[r] = true;
          stack.push_back(r);
        }
      }
    }
    for (StateId q : a.accepting()) {
      if (q < n && !seen[q]) {
        out.push_back({Severity::kWarning, "accepting state " +
                                               std::to_string(q) +
                                               " is unreachable"});
      }
    }
  }
  return out;
}

inline bool has_errors(const std::vector<Diagnostic>& ds) {
  return std::any_of(ds.begin(), ds.end(), [](const Diagnostic& d) {
    return d.severity == Severity::kError;
  });
}

inline Behavior behavior_of(const Run& r) {
  Behavior b;
  b.reserve(r.steps.size());
  for (const Transition& t : r.steps) {
    if (!t.symbol.is_epsilon()) b.push_back(t.symbol);
  }
  return b;
}

/// Exact behavior distribution over accepting runs of at most
/// `opts.max_len` transitions. Throws NoAcceptingRun when Z = 0 and
/// EnumerationTruncated when more than `truncation_tolerance` of walk mass is
/// still alive at the length bound (unless `allow_truncation`) or when the
/// frontier outgrows `max_frontier`.
inline BehaviorDistribution enumerate_behaviors(const Automaton& a,
                                                const WalkOptions& opts = {}) {
  if (opts.max_len < 1) throw ConfigError("max_len must be >= 1");
  const double h = opts.halt_probability;

  BehaviorDistribution dist;
  std::map<std::pair<StateId, Behavior>, double> frontier;
  frontier[{a.initial(), {}}] = 1.0;
  for (std::size_t step = 0; !frontier.empty(); ++step) {
    std::map<std::pair<StateId, Behavior>, double> next;
    for (auto& [key, mass] : frontier) {
      const auto& [q, word] = key;
      const auto& out_q = a.outgoing(q);
      double alive = mass;
      if (a.is_accepting(q)) {
        double stop = out_q.empty() ? alive : alive * h;
        dist.entries[word] += stop;
        alive -= stop;
      }
      if (out_q.empty() || alive <= 0.0) continue;
      if (step == opts.max_len) {
        dist.truncated_mass += alive;
        continue;
      }
      for (std::size_t i : out_q) {
        const Transition& t = a.transitions()[i];
        Behavior w = word;
        if (!t.symbol.is_epsilon()) w.push_back(t.symbol);
        next[{t.to, std::move(w)}] += alive * t.prob;
      }
    }
    if (next.size() > opts.max_frontier) {
      throw EnumerationTruncated("enumeration frontier exceeds " +
                                 std::to_string(opts.max_frontier) + " prefixes at length " +
                                 std::to_string(step + 1));
    }
    frontier = std::move(next);
  }

  double z = 0.0;
  for (const auto& [b, m] : dist.entries) z += m;
  if (!(z > 0.0)) {
    throw NoAcceptingRun("no accepting run within " +
                         std::to_string(opts.max_len) + " transitions");
  }
  if (!opts.allow_truncation && dist.truncated_mass > opts.truncation_tolerance) {
    throw EnumerationTruncated("truncated mass " +
                               std::to_string(dist.truncated_mass) +
                               " exceeds tolerance");
  }
  dist.normalizer = z;
  for (auto& [b, m] : dist.entries) m /= z;
  return dist;
}

/// Rejection sampler for accepting runs; see the stopping rule above.
inline Run sample_accepting_run(const Automaton& a, const WalkOptions& opts,
                                Rng& rng) {
  std::vector<double> weights;
  for (std::size_t attempt = 0; attempt < opts.rejection_budget; ++attempt) {
    Run run;
    StateId q = a.initial();
    bool accepted = false;
    for (std::size_t step = 0;; ++step) {
      const auto& out_q = a.outgoing(q);
      if (a.is_accepting(q) &&
          (out_q.empty() || uniform01(rng) < opts.halt_probability)) {
        accepted = true;
        break;
      }
      if (out_q.empty() || step == opts.max_len) break;
      weights.clear();
      for (std::size_t i : out_q) weights.push_back(a.transitions()[i].prob);
      const Transition& t = a.transitions()[out_q[sample_categorical(weights, rng)]];
      run.steps.push_back(t);
      run.prob *= t.prob;
      q = t.to;
    }
    if (accepted) return run;
  }
  throw SamplingBudgetExceeded("no accepting run after " +
                               std::to_string(opts.rejection_budget) +
                               " consecutive rejections");
}

inline FeatureSet extract_features(const Automaton& a) {
  FeatureSet fs;
  for (const Transition& t : a.transitions()) {
    if (!t.symbol.is_epsilon()) fs.insert(t.symbol);
  }
  return fs;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json behavior_to_json(const Behavior& b, const Alphabet& sigma) {
  nlohmann::json j = nlohmann::json::array();
  for (Symbol s : b) j.push_back(sigma.name(s));
  return j;
}

inline Behavior behavior_from_json(const nlohmann::json& j,
                                   const Alphabet& sigma) {
  Behavior b;
  for (const auto& n : j) b.push_back(sigma.at(n.get<std::string>()));
  return b;
}

inline constexpr int kAutomatonFormatVersion = 1;

inline nlohmann::json to_json(const Automaton& a) {
  nlohmann::json j;
  j["version"] = kAutomatonFormatVersion;
  j["alphabet"] = a.alphabet().names();
  j["states"] = a.num_states();
  j["initial"] = a.initial();
  j["accepting"] = a.accepting();
  auto& ts = j["transitions"] = nlohmann::json::array();
  for (const Transition& t : a.transitions()) {
    ts.push_back({{"from", t.from},
                  {"sym", t.symbol.is_epsilon()
                              ? nlohmann::json(-1)
                              : nlohmann::json(t.symbol.id)},
                  {"prob", t.prob},
                  {"to", t.to}});
  }
  return j;
}

inline Automaton automaton_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kAutomatonFormatVersion) {
      throw DataError("automaton: unsupported version");
    }
    Alphabet sigma(j.at("alphabet").get<std::vector<std::string>>());
    std::vector<Transition> ts;
    for (const auto& t : j.at("transitions")) {
      long long sym = t.at("sym").get<long long>();
      Transition tr;
      tr.from = t.at("from").get<StateId>();
      tr.to = t.at("to").get<StateId>();
      tr.prob = t.at("prob").get<double>();
      tr.symbol = sym < 0 ? kEpsilon : Symbol{static_cast<std::uint32_t>(sym)};
      ts.push_back(tr);
    }
    return Automaton(std::move(sigma), j.at("states").get<std::size_t>(),
                     j.at("initial").get<StateId>(),
                     j.at("accepting").get<std::vector<StateId>>(),
                     std::move(ts));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("automaton: ") + e.what());
  }
}

}  // namespace bayesspec
