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
 * Anomaly scores.
 *
 * The score of an automaton F is KL(P_F || P(.|X_F; M)) in nats, where
 * P(theta|X_F; M) averages the sequence model over the topic posterior of
 * F's feature set.
 *
 * The sampled estimator draws triples (theta, runs, psis): theta is the word
 * of one accepting run, `runs` is an independent batch of accepting runs and
 * `psis` is a batch of topic-posterior draws. Each triple contributes
 *
 *   log(#runs producing theta / #runs) - log(mean_psi P(theta|psi)) - bias
 *
 * where bias is the difference of the two log-of-mean biases, each from the
 * truncated normal-moment series
 *
 *   -s/(2p^2) - 3s^2/(4p^4) - 15s^3/(6p^6) - 105s^4/(8p^8),   s = var(mean)
 *
 * with s from a bootstrap over the contributions. The standard error comes
 * from a bootstrap over triples.
 *
 * Anything with log_prob(psi, theta) is a behavior model; one that can also
 * sample_psis(features, n, rng) is a posterior model. ModelBundle is the
 * trained one, TableModel a fixed lookup used for pinned examples.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bayesspec/error.hpp"
#include "bayesspec/gpa.hpp"
#include "bayesspec/random.hpp"
#include "bayesspec/seqmodel.hpp"
#include "bayesspec/topics.hpp"

namespace bayesspec::scorer {

using topics::TopicVector;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

template <class M>
concept BehaviorModel = requires(const M& m, const TopicVector& psi, const Behavior& theta) {
  { m.log_prob(psi, theta) } -> std::convertible_to<double>;
};

template <class M>
concept PosteriorModel = BehaviorModel<M> && requires(const M& m, const FeatureSet& f,
                                                      std::size_t n, Rng& rng) {
  { m.sample_psis(f, n, rng) } -> std::convertible_to<std::vector<TopicVector>>;
};

/// Trained topic model plus sequence model over one alphabet.
struct ModelBundle {
  topics::LdaModel lda;
  seqmodel::SequenceModel seq;
  Alphabet alphabet;
  seqmodel::ScoreMode mode = seqmodel::ScoreMode::kNormalized;
  topics::PosteriorOptions posterior;

  void check() const {
    if (!(lda.alphabet == alphabet)) throw DataError("bundle: topic model alphabet differs");
    if (seq.vocab != alphabet.vocab_size()) {
      throw DataError("bundle: sequence model vocabulary differs");
    }
    if (seq.conditioned && seq.topics != lda.num_topics) {
      throw DataError("bundle: topic count differs between models");
    }
  }

  double log_prob(const TopicVector& psi, const Behavior& theta) const {
    return seqmodel::sequence_log_prob(seq, psi, theta, mode);
  }

  std::vector<TopicVector> sample_psis(const FeatureSet& features, std::size_t n,
                                       Rng& rng) const {
    topics::PosteriorOptions o = posterior;
    o.num_samples = n;
    return topics::infer_topic_posterior(lda, features, o, rng);
  }
};

/// Fixed probabilities per behavior, independent of psi. Unlisted behaviors
/// get `floor` (zero by default, i.e. log_prob = -inf).
struct TableModel {
  std::map<Behavior, double> probs;
  double floor = 0.0;

  double log_prob(const TopicVector&, const Behavior& theta) const {
    auto it = probs.find(theta);
    return std::log(it == probs.end() ? floor : it->second);
  }

  std::vector<TopicVector> sample_psis(const FeatureSet&, std::size_t n, Rng&) const {
    return std::vector<TopicVector>(n, TopicVector{1.0});
  }
};

inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -kInfinity;
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

/// log of the mean over psis of P(theta | psi).
template <BehaviorModel M>
double posterior_behavior_log_prob(const M& model, const Behavior& theta,
                                   const std::vector<TopicVector>& psis) {
  if (psis.empty()) throw ConfigError("posterior_behavior_log_prob: no psi samples");
  std::vector<double> lps;
  lps.reserve(psis.size());
  for (const auto& psi : psis) lps.push_back(model.log_prob(psi, theta));
  return log_sum_exp(lps) - std::log(static_cast<double>(psis.size()));
}

// ---------------------------------------------------------------------------
// Bias of log(mean)

/// The four-term series for E[log X] - log E[X] given var(X) and E[X].
inline double log_mean_bias_series(double variance, double mean) {
  if (!(mean > 0.0)) throw DegenerateEstimate("log-mean bias: mean must be positive");
  const double r = variance / (mean * mean);
  return -r / 2.0 - 3.0 * r * r / 4.0 - 15.0 * r * r * r / 6.0 -
         105.0 * r * r * r * r / 8.0;
}

/// Bootstrap variance of the sample mean of `samples`.
inline double bootstrap_mean_variance(std::span<const double> samples,
                                      std::size_t resamples, Rng& rng) {
  const std::size_t n = samples.size();
  if (n == 0) throw ConfigError("bootstrap: no samples");
  if (resamples < 2) throw ConfigError("bootstrap: need at least two resamples");
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t b = 0; b < resamples; ++b) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += samples[pick(rng)];
    m /= static_cast<double>(n);
    sum += m;
    sum_sq += m * m;
  }
  const double rb = static_cast<double>(resamples);
  return std::max(0.0, (sum_sq - sum * sum / rb) / (rb - 1.0));
}

/// Variance of the bootstrap distribution of the mean in the limit of
/// infinitely many resamples: the plug-in variance over n.
inline double ideal_bootstrap_mean_variance(std::span<const double> samples) {
  if (samples.empty()) throw ConfigError("bootstrap: no samples");
  const double n = static_cast<double>(samples.size());
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : samples) ss += (x - mean) * (x - mean);
  return ss / (n * n);
}

/// Bias of log(observed_mean) with the variance bootstrapped from the
/// contributions; resamples = 0 uses the infinite-resample limit. Constant
/// contributions give exactly zero.
inline double log_mean_bias(std::span<const double> samples, double observed_mean,
                            Rng& rng, std::size_t resamples = 0) {
  if (!(observed_mean > 0.0)) {
    throw DegenerateEstimate("log-mean bias: observed mean must be positive");
  }
  if (samples.empty()) throw ConfigError("log-mean bias: no samples");
  const bool constant = std::all_of(samples.begin(), samples.end(),
                                    [&](double x) { return x == samples.front(); });
  if (constant) return 0.0;
  const double var = resamples == 0 ? ideal_bootstrap_mean_variance(samples)
                                    : bootstrap_mean_variance(samples, resamples, rng);
  return log_mean_bias_series(var, observed_mean);
}

// ---------------------------------------------------------------------------
// Sampled estimator

struct ScoreConfig {
  std::size_t runs_per_triple = 1024;
  std::size_t psis_per_triple = 32;
  std::size_t min_triples = 50;
  std::size_t max_triples = 2000;
  std::size_t batch_triples = 50;
  double target_se = 0.05;
  double relative_se = 0.0;  // also stop once std_err <= relative_se * |score|
  std::size_t bootstrap_resamples = 200;  // for the standard error
  std::size_t bias_resamples = 0;         // 0: closed-form bootstrap variance
  bool bias_correction = true;
  // The run term is resampled until theta shows up, so its estimate is only
  // close to a plain mean when misses are unlikely. Its correction is applied
  // while variance / mean^2 stays at or below this.
  double run_bias_max_ratio = 0.1;
  // When no run in the batch produces theta, further batches are drawn up
  // to this many times before theta's own run is counted.
  std::size_t max_run_batches = 16;
  std::size_t jobs = 1;
  WalkOptions walk;
  // Shared psi draws for every triple; the second log term is then exact
  // with respect to these draws and carries no bias.
  std::optional<std::vector<TopicVector>> fixed_psis;
};

inline nlohmann::json to_json(const ScoreConfig& c) {
  return {{"runs_per_triple", c.runs_per_triple},
          {"psis_per_triple", c.psis_per_triple},
          {"min_triples", c.min_triples},
          {"max_triples", c.max_triples},
          {"target_se", c.target_se},
          {"relative_se", c.relative_se},
          {"bootstrap_resamples", c.bootstrap_resamples},
          {"bias_resamples", c.bias_resamples},
          {"bias_correction", c.bias_correction},
          {"run_bias_max_ratio", c.run_bias_max_ratio},
          {"max_len", c.walk.max_len},
          {"halt_probability", c.walk.halt_probability}};
}

/// One sampled triple, reduced to what the aggregate needs.
struct TripleTerms {
  double log_pf = 0.0;     // first log term
  double log_model = 0.0;  // second log term
  double bias = 0.0;       // bias(first) - bias(second)
  std::size_t runs_used = 0;

  double corrected() const { return log_pf - log_model - bias; }
  double uncorrected() const { return log_pf - log_model; }
};

struct AnomalyReport {
  double score = 0.0;
  double std_err = 0.0;
  double bias_total = 0.0;      // mean per-triple bias that was subtracted
  double uncorrected = 0.0;     // the same estimate without the subtraction
  std::size_t n_triples = 0;
  bool converged = false;       // std_err reached target_se
  ScoreConfig config;
};

inline nlohmann::json to_json(const AnomalyReport& r) {
  return {{"score", r.score},         {"std_err", r.std_err},
          {"bias_total", r.bias_total}, {"uncorrected", r.uncorrected},
          {"n_triples", r.n_triples}, {"converged", r.converged},
          {"config", to_json(r.config)}};
}

/// Bias of the run term, or 0 outside the regime where the series holds.
inline double run_term_bias(std::span<const double> hits, double p1, const ScoreConfig& cfg,
                            Rng& rng) {
  if (ideal_bootstrap_mean_variance(hits) > cfg.run_bias_max_ratio * p1 * p1) return 0.0;
  return log_mean_bias(hits, p1, rng, cfg.bias_resamples);
}

template <PosteriorModel M>
TripleTerms sample_triple(const Automaton& a, const M& model, const FeatureSet& features,
                          const ScoreConfig& cfg, Rng& rng) {
  TripleTerms t;
  const Behavior theta = behavior_of(sample_accepting_run(a, cfg.walk, rng));

  // First term: fraction of an independent batch of runs that produce theta.
  std::vector<double> hits;
  std::size_t count = 0;
  for (std::size_t batch = 0; batch < cfg.max_run_batches && count == 0; ++batch) {
    for (std::size_t i = 0; i < cfg.runs_per_triple; ++i) {
      const bool hit = behavior_of(sample_accepting_run(a, cfg.walk, rng)) == theta;
      hits.push_back(hit ? 1.0 : 0.0);
      count += hit;
    }
  }
  if (count == 0) {
    hits.push_back(1.0);
    count = 1;
  }
  t.runs_used = hits.size();
  const double p1 = static_cast<double>(count) / static_cast<double>(hits.size());
  t.log_pf = std::log(p1);

  // Second term: model probability averaged over topic-posterior draws.
  std::vector<TopicVector> sampled;
  if (!cfg.fixed_psis) sampled = model.sample_psis(features, cfg.psis_per_triple, rng);
  const std::vector<TopicVector>& psis = cfg.fixed_psis ? *cfg.fixed_psis : sampled;
  if (psis.empty()) throw ConfigError("scorer: no psi samples");
  std::vector<double> lps;
  lps.reserve(psis.size());
  for (const auto& psi : psis) lps.push_back(model.log_prob(psi, theta));
  t.log_model = log_sum_exp(lps) - std::log(static_cast<double>(lps.size()));

  if (cfg.bias_correction) {
    const double b1 = run_term_bias(hits, p1, cfg, rng);
    double b2 = 0.0;
    if (!cfg.fixed_psis && std::isfinite(t.log_model)) {
      // Contributions rescaled by the largest; the series is scale-free.
      const double mx = *std::max_element(lps.begin(), lps.end());
      std::vector<double> scaled;
      scaled.reserve(lps.size());
      for (double lp : lps) scaled.push_back(std::exp(lp - mx));
      const double mean = std::exp(t.log_model - mx);
      b2 = log_mean_bias(scaled, mean, rng, cfg.bias_resamples);
    }
    t.bias = b1 - b2;
  }
  return t;
}

/// Bootstrap standard error of the mean of `xs`.
inline double bootstrap_std_err(std::span<const double> xs, std::size_t resamples, Rng& rng) {
  if (xs.size() < 2) return kInfinity;
  if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs[0]; })) return 0.0;
  return std::sqrt(bootstrap_mean_variance(xs, resamples, rng));
}

template <PosteriorModel M>
AnomalyReport estimate_anomaly_score(const Automaton& a, const M& model,
                                     const ScoreConfig& cfg, Rng& rng) {
  if (cfg.runs_per_triple < 1 || cfg.max_triples < 1 || cfg.batch_triples < 1) {
    throw ConfigError("scorer: triple and run counts must be positive");
  }
  if (cfg.bootstrap_resamples < 2) throw ConfigError("scorer: need at least two resamples");
  if (!cfg.fixed_psis && cfg.psis_per_triple < 1) {
    throw ConfigError("scorer: psis_per_triple must be positive");
  }
  const FeatureSet features = extract_features(a);
  if (features.empty()) throw DataError("scorer: automaton emits no symbols");

  // Triple i draws from its own stream, so results do not depend on jobs.
  const std::uint64_t base = rng();
  std::vector<TripleTerms> triples;
  AnomalyReport rep;
  rep.config = cfg;
  const std::size_t jobs = std::max<std::size_t>(1, cfg.jobs);
  Rng boot(derive_seed(base, std::numeric_limits<std::uint64_t>::max()));

  while (triples.size() < cfg.max_triples) {
    const std::size_t want =
        triples.empty() ? std::max(cfg.min_triples, cfg.batch_triples) : cfg.batch_triples;
    const std::size_t lo = triples.size();
    const std::size_t hi = std::min(cfg.max_triples, lo + want);
    triples.resize(hi);
    auto work = [&](std::size_t w) {
      for (std::size_t i = lo + w; i < hi; i += jobs) {
        Rng r(derive_seed(base, i));
        triples[i] = sample_triple(a, model, features, cfg, r);
      }
    };
    if (jobs == 1) {
      work(0);
    } else {
      std::vector<std::jthread> pool;
      std::vector<std::exception_ptr> errors(jobs);
      for (std::size_t w = 0; w < jobs; ++w) {
        pool.emplace_back([&, w] {
          try {
            work(w);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      pool.clear();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }

    std::vector<double> values;
    values.reserve(triples.size());
    for (const auto& t : triples) values.push_back(cfg.bias_correction ? t.corrected() : t.uncorrected());
    rep.std_err = bootstrap_std_err(values, cfg.bootstrap_resamples, boot);
    const double mean =
        std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    const double tol = std::max(cfg.target_se, cfg.relative_se * std::abs(mean));
    if (triples.size() >= cfg.min_triples && rep.std_err <= tol) {
      rep.converged = true;
      break;
    }
  }

  const double n = static_cast<double>(triples.size());
  double sc = 0.0, su = 0.0, sb = 0.0;
  for (const auto& t : triples) {
    sc += cfg.bias_correction ? t.corrected() : t.uncorrected();
    su += t.uncorrected();
    sb += t.bias;
  }
  rep.score = sc / n;
  rep.uncorrected = su / n;
  rep.bias_total = sb / n;
  rep.n_triples = triples.size();
  if (!std::isfinite(rep.std_err)) rep.std_err = std::isfinite(rep.score) ? 0.0 : kInfinity;
  return rep;
}

// ---------------------------------------------------------------------------
// Exact scores

/// KL(P || Q) over the support of P. Infinite when Q misses part of it.
inline double kl_divergence(const BehaviorDistribution& p, const BehaviorDistribution& q) {
  double kl = 0.0;
  for (const auto& [theta, pv] : p.entries) {
    if (pv <= 0.0) continue;
    const double qv = q.prob(theta);
    if (qv <= 0.0) return kInfinity;
    kl += pv * std::log(pv / qv);
  }
  return std::max(0.0, kl);
}

/// Exact score from the enumerated behavior distribution, with the model
/// term averaged over the given psi draws.
template <BehaviorModel M>
double exact_anomaly_score(const Automaton& a, const M& model,
                           const std::vector<TopicVector>& psis,
                           const WalkOptions& opts = {}) {
  const BehaviorDistribution pf = enumerate_behaviors(a, opts);
  double kl = 0.0;
  for (const auto& [theta, p] : pf.entries) {
    if (p <= 0.0) continue;
    kl += p * (std::log(p) - posterior_behavior_log_prob(model, theta, psis));
  }
  return kl;
}

/// Mean of the k smallest KL(P_a || P_G) over corpus members G; kInfinity
/// when they are all infinite.
inline double knn_score(const BehaviorDistribution& pa,
                        const std::vector<BehaviorDistribution>& corpus, std::size_t k = 1) {
  if (corpus.empty()) throw ConfigError("knn: empty corpus");
  if (k < 1) throw ConfigError("knn: k must be positive");
  std::vector<double> d;
  d.reserve(corpus.size());
  for (const auto& g : corpus) d.push_back(kl_divergence(pa, g));
  std::sort(d.begin(), d.end());
  k = std::min(k, d.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += d[i];
  return sum / static_cast<double>(k);
}

inline double knn_score(const Automaton& a, const std::vector<Automaton>& corpus,
                        std::size_t k = 1, const WalkOptions& opts = {}) {
  if (corpus.empty()) throw ConfigError("knn: empty corpus");
  std::vector<BehaviorDistribution> ds;
  ds.reserve(corpus.size());
  for (const Automaton& g : corpus) ds.push_back(enumerate_behaviors(g, opts));
  return knn_score(enumerate_behaviors(a, opts), ds, k);
}

/// Scores are written as numbers, the infinite sentinel as "inf".
inline nlohmann::json score_to_json(double x) {
  if (std::isinf(x) && x > 0) return "inf";
  return x;
}

}  // namespace bayesspec::scorer
