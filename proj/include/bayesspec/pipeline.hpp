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

// End-to-end helpers shared by the command line tool and the evaluations:
// training a model bundle, scoring programs, and the mutation, heterogeneity
// and nearest-neighbour experiments.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bayesspec/corpus.hpp"
#include "bayesspec/error.hpp"
#include "bayesspec/gpa.hpp"
#include "bayesspec/random.hpp"
#include "bayesspec/scorer.hpp"
#include "bayesspec/seqmodel.hpp"
#include "bayesspec/symexec.hpp"
#include "bayesspec/topics.hpp"

namespace bayesspec::pipeline {

/// Runs fn(0..n-1) on `jobs` threads. Work is handed out by index; the first
/// exception (lowest index) is rethrown after all threads finish.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::size_t failed_at = n;
  std::exception_ptr failure;
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (next >= n) return;
            i = next++;
          }
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (i < failed_at) {
              failed_at = i;
              failure = std::current_exception();
            }
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  topics::LdaOptions lda;
  std::size_t hidden = 64;
  seqmodel::TrainOptions rnn;
  bool conditioned = true;
  std::size_t psi_draws = 32;  // posterior draws kept per training record
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"topics", c.lda.num_topics},
          {"alpha", c.lda.alpha},
          {"eta", c.lda.eta ? nlohmann::json(*c.lda.eta) : nlohmann::json("1/|alphabet|")},
          {"lda_iters", c.lda.iterations},
          {"hidden", c.hidden},
          {"epochs", c.rnn.epochs},
          {"lr", c.rnn.learning_rate},
          {"clip_norm", c.rnn.clip_norm},
          {"mode", seqmodel::mode_name(c.rnn.mode)},
          {"conditioned", c.conditioned},
          {"psi_draws", c.psi_draws}};
}

/// One document per training record; records without features are skipped.
inline topics::LdaModel train_topic_model(const corpus::TrainingSet& ts,
                                          const topics::LdaOptions& opts, std::uint64_t seed) {
  std::vector<topics::Document> docs;
  for (const auto& r : ts.records) {
    if (!r.features.empty()) docs.push_back(topics::Document::from_features(r.features));
  }
  Rng rng(seed);
  return topics::train_lda(docs, ts.alphabet, opts, rng);
}

struct TrainedBundle {
  scorer::ModelBundle bundle;
  std::vector<double> loss_history;
};

/// Trains the sequence model on top of a fitted topic model. Each record gets
/// a pool of posterior draws; training picks one of them per example and epoch.
inline TrainedBundle train_sequence_model(const corpus::TrainingSet& ts, topics::LdaModel lda,
                                          const TrainConfig& cfg, std::uint64_t seed) {
  scorer::ModelBundle b;
  b.alphabet = ts.alphabet;
  b.lda = std::move(lda);
  b.mode = cfg.rnn.mode;
  topics::PosteriorOptions po;
  po.num_samples = cfg.psi_draws;

  std::vector<seqmodel::TrainingExample> data;
  for (std::size_t i = 0; i < ts.records.size(); ++i) {
    const auto& r = ts.records[i];
    std::vector<topics::TopicVector> draws;
    if (cfg.conditioned) {
      if (r.features.empty()) continue;
      Rng rng(derive_seed(seed, i + 1));
      draws = topics::infer_topic_posterior(b.lda, r.features, po, rng);
    }
    for (const auto& theta : r.behaviors) data.push_back({draws, theta});
  }
  Rng rng(derive_seed(seed, 0));
  auto init = seqmodel::SequenceModel::random(cfg.hidden, ts.alphabet.vocab_size(),
                                              b.lda.num_topics, cfg.conditioned, rng);
  auto result = seqmodel::train(std::move(init), data, cfg.rnn, rng);
  b.seq = std::move(result.model);
  b.check();
  return {std::move(b), std::move(result.loss_history)};
}

inline TrainedBundle train_bundle(const corpus::TrainingSet& ts, const TrainConfig& cfg,
                                  std::uint64_t seed) {
  return train_sequence_model(ts, train_topic_model(ts, cfg.lda, derive_seed(seed, 0)), cfg,
                              derive_seed(seed, 1));
}

// ---------------------------------------------------------------------------
// Scoring

struct ScoreOptions {
  scorer::ScoreConfig cfg;
  bool exact = false;  // enumerate P_F instead of sampling triples
};

inline nlohmann::json to_json(const ScoreOptions& o) {
  auto j = scorer::to_json(o.cfg);
  j["exact"] = o.exact;
  return j;
}

/// Anomaly score of one automaton. An unconditioned bundle ignores psi, so no
/// topic inference is run for it.
inline scorer::AnomalyReport score_automaton(const Automaton& a, const scorer::ModelBundle& b,
                                             const ScoreOptions& o, Rng& rng) {
  scorer::ScoreConfig cfg = o.cfg;
  cfg.jobs = std::max<std::size_t>(1, cfg.jobs);
  if (!b.seq.conditioned) cfg.fixed_psis = std::vector<topics::TopicVector>{topics::TopicVector{}};
  if (!o.exact) return scorer::estimate_anomaly_score(a, b, cfg, rng);

  const FeatureSet features = extract_features(a);
  if (features.empty()) throw DataError("scorer: automaton emits no symbols");
  const auto psis = cfg.fixed_psis ? *cfg.fixed_psis
                                   : b.sample_psis(features, cfg.psis_per_triple, rng);
  scorer::AnomalyReport r;
  r.config = cfg;
  r.score = r.uncorrected = scorer::exact_anomaly_score(a, b, psis, cfg.walk);
  r.converged = true;
  return r;
}

/// Compiles every accept location, refusing calls outside the alphabet unless
/// `ignore_unknown` (then they are silent).
inline std::vector<corpus::CompiledProgram> compile_checked(const std::string& id,
                                                            std::string_view text,
                                                            const Alphabet& alphabet,
                                                            const symexec::SymexecOptions& sx,
                                                            bool ignore_unknown) {
  if (!ignore_unknown) {
    const auto unknown = corpus::unknown_calls(symexec::parse_program(text), alphabet);
    if (!unknown.empty()) {
      std::string names;
      for (const auto& u : unknown) names += (names.empty() ? "" : ", ") + u;
      throw DataError("calls outside the model alphabet: " + names);
    }
  }
  return corpus::compile_program(id, text, alphabet, sx);
}

/// Nine cutoffs at 10%, ..., 90% (nearest rank).
inline std::vector<double> decile_cutoffs(std::vector<double> xs) {
  std::vector<double> out;
  if (xs.empty()) return out;
  std::sort(xs.begin(), xs.end());
  for (int d = 1; d <= 9; ++d) {
    const auto rank = static_cast<std::size_t>(std::ceil(d / 10.0 * static_cast<double>(xs.size())));
    out.push_back(xs[std::max<std::size_t>(rank, 1) - 1]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluations

/// Relative increase with the baseline clamped from below, so that
/// near-zero baselines do not dominate a mean of ratios.
inline double relative_increase(double after, double before, double floor) {
  return after / std::max(before, floor);
}

struct MutationRow {
  std::string id;
  std::string location;
  double before = 0.0;
  double after = 0.0;
  bool identity = false;  // every drawn replacement equals the original call
  std::string mutation;
};

struct MutationSummary {
  std::vector<MutationRow> rows;
  std::size_t skipped = 0;  // no call before acceptance
  std::size_t identities = 0;
  double mean_relative_increase = 0.0;  // over non-identity rows
  double ratio_of_means = 0.0;
};

struct MutationOptions {
  ScoreOptions score;
  double baseline_floor = 0.05;
  std::size_t jobs = 1;
};

/// Scores each unit before and after mutating the calls that precede its
/// accepting states. Every site is mutated in its own copy and the copy with
/// the highest score is kept.
inline MutationSummary eval_mutation(const std::vector<corpus::CompiledProgram>& units,
                                     const scorer::ModelBundle& b, const MutationOptions& o,
                                     std::uint64_t seed) {
  std::vector<std::optional<MutationRow>> rows(units.size());
  parallel_for(units.size(), o.jobs, [&](std::size_t i) {
    const Automaton& a = units[i].automaton;
    if (corpus::mutation_sites(a).empty()) return;
    Rng rng(derive_seed(seed, i));
    MutationRow row;
    row.id = units[i].id;
    row.location = units[i].location;
    const auto copies = corpus::mutate_each_site(a, rng);
    row.before = score_automaton(a, b, o.score, rng).score;
    row.identity = true;
    row.after = -std::numeric_limits<double>::infinity();
    for (const auto& [m, mut] : copies) {
      if (mut.identity()) continue;
      const double s = score_automaton(m, b, o.score, rng).score;
      if (row.identity || s > row.after) {
        row.after = s;
        row.mutation = corpus::describe(mut, a);
      }
      row.identity = false;
    }
    if (row.identity) row.after = row.before;
    rows[i] = std::move(row);
  });

  MutationSummary s;
  double sum_rel = 0.0, sum_before = 0.0, sum_after = 0.0;
  std::size_t n = 0;
  for (auto& r : rows) {
    if (!r) {
      ++s.skipped;
      continue;
    }
    if (r->identity) {
      ++s.identities;
    } else {
      sum_rel += relative_increase(r->after, r->before, o.baseline_floor);
      sum_before += r->before;
      sum_after += r->after;
      ++n;
    }
    s.rows.push_back(std::move(*r));
  }
  if (n > 0) {
    s.mean_relative_increase = sum_rel / static_cast<double>(n);
    s.ratio_of_means = sum_after / std::max(sum_before, o.baseline_floor * static_cast<double>(n));
  }
  return s;
}

struct HeteroStep {
  std::vector<double> bayes;     // per test unit
  std::vector<double> baseline;  // per test unit
  double bayes_relative = 1.0;   // vs the previous step
  double baseline_relative = 1.0;
};

struct HeteroOptions {
  ScoreOptions score;
  symexec::SymexecOptions symexec;
  double baseline_floor = 0.05;
  std::size_t jobs = 1;
};

/// Scores the same test programs under models trained on growing corpora.
/// `bayes[s]` and `baseline[s]` are the topic-conditioned and unconditioned
/// bundles of step s; every step reuses the same per-program seeds.
inline std::vector<HeteroStep> eval_hetero(
    const std::vector<scorer::ModelBundle>& bayes,
    const std::vector<scorer::ModelBundle>& baseline,
    const std::vector<std::pair<std::string, std::string>>& programs, const HeteroOptions& o,
    std::uint64_t seed) {
  if (bayes.size() < 2) throw ConfigError("eval-hetero: need at least two corpus steps");
  if (baseline.size() != bayes.size()) {
    throw ConfigError("eval-hetero: need one baseline bundle per step");
  }
  if (baseline.front().seq.conditioned || !bayes.front().seq.conditioned) {
    throw ConfigError("eval-hetero: baselines must be unconditioned, bundles conditioned");
  }
  auto score_all = [&](const scorer::ModelBundle& b) {
    std::vector<std::vector<double>> per_program(programs.size());
    parallel_for(programs.size(), o.jobs, [&](std::size_t i) {
      const auto units = compile_checked(programs[i].first, programs[i].second, b.alphabet,
                                         o.symexec, false);
      for (std::size_t u = 0; u < units.size(); ++u) {
        Rng rng(derive_seed(derive_seed(seed, i), u));
        per_program[i].push_back(score_automaton(units[u].automaton, b, o.score, rng).score);
      }
    });
    std::vector<double> flat;
    for (auto& v : per_program) flat.insert(flat.end(), v.begin(), v.end());
    return flat;
  };
  auto mean_relative = [&](const std::vector<double>& now, const std::vector<double>& before) {
    double s = 0.0;
    for (std::size_t i = 0; i < now.size(); ++i) {
      s += relative_increase(now[i], before[i], o.baseline_floor);
    }
    return now.empty() ? 1.0 : s / static_cast<double>(now.size());
  };
  std::vector<HeteroStep> steps(bayes.size());
  for (std::size_t s = 0; s < bayes.size(); ++s) {
    steps[s].bayes = score_all(bayes[s]);
    steps[s].baseline = score_all(baseline[s]);
    if (s > 0) {
      steps[s].bayes_relative = mean_relative(steps[s].bayes, steps[s - 1].bayes);
      steps[s].baseline_relative = mean_relative(steps[s].baseline, steps[s - 1].baseline);
    }
  }
  return steps;
}

struct KnnSummary {
  std::vector<double> scores;
  double fraction_infinite = 0.0;
};

inline KnnSummary eval_knn(const std::vector<Automaton>& corpus_units,
                           const std::vector<Automaton>& test_units, std::size_t k,
                           const WalkOptions& walk, std::size_t jobs) {
  std::vector<BehaviorDistribution> corpus_dists(corpus_units.size());
  parallel_for(corpus_units.size(), jobs, [&](std::size_t i) {
    corpus_dists[i] = enumerate_behaviors(corpus_units[i], walk);
  });
  KnnSummary s;
  s.scores.resize(test_units.size());
  parallel_for(test_units.size(), jobs, [&](std::size_t i) {
    s.scores[i] = scorer::knn_score(enumerate_behaviors(test_units[i], walk), corpus_dists, k);
  });
  const auto inf = std::count_if(s.scores.begin(), s.scores.end(),
                                 [](double x) { return std::isinf(x); });
  if (!s.scores.empty()) {
    s.fraction_infinite = static_cast<double>(inf) / static_cast<double>(s.scores.size());
  }
  return s;
}

}  // namespace bayesspec::pipeline
