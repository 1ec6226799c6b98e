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

// Shared fixtures for the unit and acceptance suites.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "bayesspec/gpa.hpp"
#include "bayesspec/random.hpp"

namespace bayesspec::testing {

inline Alphabet dialog_alphabet() {
  return Alphabet({"newA", "setTitle", "setItems", "show"});
}

inline Behavior word(const Alphabet& sigma, const std::vector<std::string>& names) {
  Behavior b;
  for (const auto& n : names) b.push_back(sigma.at(n));
  return b;
}

// newA setTitle setItems show
inline Behavior theta1() {
  return word(dialog_alphabet(), {"newA", "setTitle", "setItems", "show"});
}

// newA setTitle show
inline Behavior theta2() {
  return word(dialog_alphabet(), {"newA", "setTitle", "show"});
}

// The dialog automaton: after newA and setTitle, state 3 branches three ways
// with probability 1/3 each, two of them through setItems. States:
// 0 -newA-> 1 -setTitle-> 2 -setItems-> 3 -show-> 5
//                           2 -setItems-> 4 -show-> 6
//                           2 -show-> 7
// Accepting {5, 6, 7}. With `drop_show_only` the direct show branch is gone
// and the two setItems branches carry 1/2 each.
inline Automaton dialog_automaton(bool drop_show_only = false) {
  const Alphabet s = dialog_alphabet();
  const Symbol newA = s.at("newA"), title = s.at("setTitle"),
               items = s.at("setItems"), show = s.at("show");
  std::vector<Transition> ts = {{0, newA, 1.0, 1}, {1, title, 1.0, 2}};
  const double p = drop_show_only ? 0.5 : 1.0 / 3.0;
  ts.push_back({2, items, p, 3});
  ts.push_back({2, items, p, 4});
  ts.push_back({3, show, 1.0, 5});
  ts.push_back({4, show, 1.0, 6});
  std::vector<StateId> acc = {5, 6};
  if (!drop_show_only) {
    ts.push_back({2, show, p, 7});
    acc.push_back(7);
  }
  return Automaton(s, drop_show_only ? 7 : 8, 0, acc, ts);
}

inline Alphabet letters(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back(std::string(1, static_cast<char>('a' + i)));
  return Alphabet(names);
}

struct RandomAutomatonOptions {
  std::size_t alphabet_size = 4;
  std::size_t min_states = 3;
  std::size_t max_states = 7;
  std::size_t max_out = 3;
  double epsilon_rate = 0.15;
  double accept_rate = 0.25;     // intermediate accepting states
  double self_loop_rate = 0.0;   // chance a state gets a small self loop
  double min_prob = 0.0;         // floor on transition probabilities
};

// Random DAG automaton (plus optional self loops) over `letters`. Every
// state reaches the last state, which is accepting and terminal.
inline Automaton random_automaton(Rng& rng, const RandomAutomatonOptions& o = {}) {
  const Alphabet sigma = letters(o.alphabet_size);
  std::uniform_int_distribution<std::size_t> nstates(o.min_states, o.max_states);
  const std::size_t n = nstates(rng);
  std::vector<Transition> ts;
  std::vector<StateId> acc = {static_cast<StateId>(n - 1)};
  std::uniform_int_distribution<std::uint32_t> sym(0, static_cast<std::uint32_t>(o.alphabet_size - 1));
  for (StateId q = 0; q + 1 < n; ++q) {
    if (q > 0 && uniform01(rng) < o.accept_rate) acc.push_back(q);
    const std::size_t k =
        std::uniform_int_distribution<std::size_t>(1, std::min(o.max_out, n - 1 - q))(rng);
    std::vector<StateId> targets = {q + 1};
    while (targets.size() < k) {
      StateId t = static_cast<StateId>(std::uniform_int_distribution<std::size_t>(q + 1, n - 1)(rng));
      targets.push_back(t);
    }
    const bool loop = uniform01(rng) < o.self_loop_rate;
    std::vector<double> w(targets.size() + (loop ? 1 : 0));
    for (double& x : w) x = o.min_prob + uniform01(rng) + 0.05;
    double total = 0.0;
    for (double x : w) total += x;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const Symbol s = uniform01(rng) < o.epsilon_rate ? kEpsilon : Symbol{sym(rng)};
      ts.push_back({q, s, w[i] / total, targets[i]});
    }
    if (loop) ts.push_back({q, Symbol{sym(rng)}, w.back() / total, q});
  }
  return Automaton(sigma, n, 0, acc, ts);
}

// Total variation distance between two distributions over behaviors.
inline double total_variation(const std::map<Behavior, double>& p,
                              const std::map<Behavior, double>& q) {
  double tv = 0.0;
  for (const auto& [b, x] : p) {
    auto it = q.find(b);
    tv += std::abs(x - (it == q.end() ? 0.0 : it->second));
  }
  for (const auto& [b, y] : q) {
    if (!p.count(b)) tv += y;
  }
  return tv / 2.0;
}

// Best matching of rows a[i] to rows b[perm[i]] by brute force over
// permutations (small K only); returns the permutation.
template <class Cost>
std::vector<std::size_t> best_permutation(std::size_t k, Cost cost) {
  std::vector<std::size_t> perm(k), best;
  for (std::size_t i = 0; i < k; ++i) perm[i] = i;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < k; ++i) c += cost(i, perm[i]);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace bayesspec::testing
