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
 * Latent Dirichlet allocation over program feature sets.
 *
 * -- Model --
 *
 * k < {1 ... K}   : topics
 * w < {1 ... W}   : words (alphabet symbols)
 * psi[d]          : topic proportions of document d,   psi[d] ~ Dir(alpha)
 * beta[k]         : word distribution of topic k,      beta[k] ~ Dir(eta)
 * z[d,n]          : topic of the n-th word of document d
 *
 * -- Training --
 *
 * Collapsed Gibbs sampling over z with psi and beta integrated out:
 *
 *   p(z = k | rest) ~ (n_dk + alpha_k) * (n_kw + eta) / (n_k + W * eta)
 *
 * After the last sweep beta and the per-document topic vectors are read off
 * the counts with the same smoothing.
 *
 * -- Inference --
 *
 * For a new document the posterior over psi is sampled with beta held
 * fixed: start from psi ~ Dir(d); then repeatedly draw a topic for every
 * word from beta_k(w) * psi_k (normalized), count the draws per topic into
 * n, and redraw psi ~ Dir(d + n). The prior concentration d defaults to the
 * trained alpha.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bayesspec/error.hpp"
#include "bayesspec/gpa.hpp"
#include "bayesspec/random.hpp"

namespace bayesspec::topics {

/// A point on the K-simplex.
using TopicVector = std::vector<double>;

/// Bag of symbols. Feature sets map to documents with each symbol once.
struct Document {
  std::vector<Symbol> words;

  static Document from_features(const FeatureSet& fs) {
    return Document{{fs.begin(), fs.end()}};
  }
};

struct LdaModel {
  std::size_t num_topics = 1;
  std::vector<double> alpha;
  double eta = 0.01;
  Alphabet alphabet;
  std::vector<std::vector<double>> beta;        // K x W, rows sum to 1
  std::vector<TopicVector> doc_topics;          // diagnostics only

  std::size_t vocab() const { return alphabet.size(); }
};

struct LdaOptions {
  std::size_t num_topics = 6;
  double alpha = 0.1;
  std::optional<double> eta;  // default 1/|Sigma|
  std::size_t iterations = 500;
};

inline LdaModel train_lda(const std::vector<Document>& docs,
                          const Alphabet& alphabet, const LdaOptions& opts,
                          Rng& rng) {
  if (opts.num_topics < 1) throw ConfigError("lda: need at least one topic");
  if (opts.iterations < 1) throw ConfigError("lda: need at least one iteration");
  if (!(opts.alpha > 0.0)) throw ConfigError("lda: alpha must be positive");
  if (docs.empty()) throw EmptyCorpus("lda: empty corpus");
  const std::size_t W = alphabet.size();
  if (W == 0) throw EmptyCorpus("lda: empty alphabet");
  const double eta = opts.eta.value_or(1.0 / static_cast<double>(W));
  if (!(eta > 0.0)) throw ConfigError("lda: eta must be positive");
  const std::size_t K = opts.num_topics;

  for (const Document& d : docs) {
    if (d.words.empty()) throw EmptyDocument("lda: empty document");
    for (Symbol s : d.words) {
      if (!alphabet.contains(s)) throw DataError("lda: word outside the alphabet");
    }
  }

  std::vector<std::vector<int>> n_dk(docs.size(), std::vector<int>(K, 0));
  std::vector<std::vector<int>> n_kw(K, std::vector<int>(W, 0));
  std::vector<int> n_k(K, 0);
  std::vector<std::vector<std::size_t>> z(docs.size());

  for (std::size_t d = 0; d < docs.size(); ++d) {
    z[d].resize(docs[d].words.size());
    for (std::size_t i = 0; i < docs[d].words.size(); ++i) {
      std::size_t k = std::uniform_int_distribution<std::size_t>(0, K - 1)(rng);
      z[d][i] = k;
      ++n_dk[d][k];
      ++n_kw[k][docs[d].words[i].id];
      ++n_k[k];
    }
  }

  const double w_eta = static_cast<double>(W) * eta;
  std::vector<double> p(K);
  for (std::size_t it = 0; it < opts.iterations; ++it) {
    for (std::size_t d = 0; d < docs.size(); ++d) {
      for (std::size_t i = 0; i < docs[d].words.size(); ++i) {
        const std::uint32_t w = docs[d].words[i].id;
        std::size_t k = z[d][i];
        --n_dk[d][k];
        --n_kw[k][w];
        --n_k[k];
        for (std::size_t t = 0; t < K; ++t) {
          p[t] = (n_dk[d][t] + opts.alpha) * (n_kw[t][w] + eta) / (n_k[t] + w_eta);
        }
        k = sample_categorical(p, rng);
        z[d][i] = k;
        ++n_dk[d][k];
        ++n_kw[k][w];
        ++n_k[k];
      }
    }
  }

  LdaModel m;
  m.num_topics = K;
  m.alpha.assign(K, opts.alpha);
  m.eta = eta;
  m.alphabet = alphabet;
  m.beta.assign(K, std::vector<double>(W));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t w = 0; w < W; ++w) {
      m.beta[k][w] = (n_kw[k][w] + eta) / (n_k[k] + w_eta);
    }
  }
  const double k_alpha = static_cast<double>(K) * opts.alpha;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    TopicVector psi(K);
    const double len = static_cast<double>(docs[d].words.size());
    for (std::size_t k = 0; k < K; ++k) {
      psi[k] = (n_dk[d][k] + opts.alpha) / (len + k_alpha);
    }
    m.doc_topics.push_back(std::move(psi));
  }
  return m;
}

struct PosteriorOptions {
  std::size_t num_samples = 32;
  std::size_t burn_in = 100;
  std::size_t thin = 5;
  std::optional<std::vector<double>> prior;  // d; defaults to alpha
};

/// Topic-assignment probabilities for one word under the current psi.
inline std::vector<double> word_topic_probs(const LdaModel& m, Symbol w,
                                            const TopicVector& psi) {
  std::vector<double> p(m.num_topics);
  double total = 0.0;
  for (std::size_t k = 0; k < m.num_topics; ++k) {
    p[k] = m.beta[k][w.id] * psi[k];
    total += p[k];
  }
  if (total > 0.0) {
    for (double& x : p) x /= total;
  }
  return p;
}

/// Samples psi ~ P(psi | features) by the Gibbs scheme described above.
/// Words outside the model alphabet are ignored; throws UnknownFeatures when
/// none remain.
inline std::vector<TopicVector> infer_topic_posterior(const LdaModel& m,
                                                      const FeatureSet& features,
                                                      const PosteriorOptions& opts,
                                                      Rng& rng) {
  if (opts.num_samples < 1) throw ConfigError("posterior: need at least one sample");
  std::vector<Symbol> words;
  for (Symbol s : features) {
    if (m.alphabet.contains(s)) words.push_back(s);
  }
  if (words.empty()) throw UnknownFeatures("no feature is known to the topic model");

  const std::size_t K = m.num_topics;
  const std::vector<double> d = opts.prior.value_or(m.alpha);
  if (d.size() != K) throw ConfigError("posterior: prior has wrong length");
  std::vector<TopicVector> out;
  out.reserve(opts.num_samples);
  if (K == 1) {
    out.assign(opts.num_samples, TopicVector{1.0});
    return out;
  }

  TopicVector psi = sample_dirichlet(d, rng);
  std::vector<double> conc(K);
  std::vector<double> p(K);
  const std::size_t thin = std::max<std::size_t>(1, opts.thin);
  for (std::size_t it = 0; out.size() < opts.num_samples; ++it) {
    std::vector<double> n(K, 0.0);
    for (Symbol w : words) {
      for (std::size_t k = 0; k < K; ++k) p[k] = m.beta[k][w.id] * psi[k];
      n[sample_categorical(p, rng)] += 1.0;
    }
    for (std::size_t k = 0; k < K; ++k) conc[k] = d[k] + n[k];
    psi = sample_dirichlet(conc, rng);
    if (it >= opts.burn_in && (it - opts.burn_in) % thin == 0) out.push_back(psi);
  }
  return out;
}

/// The n most probable words of a topic, descending; ties by symbol index.
inline std::vector<std::pair<Symbol, double>> topic_top_words(const LdaModel& m,
                                                              std::size_t topic,
                                                              std::size_t n) {
  if (topic >= m.num_topics) throw ConfigError("topic index out of range");
  std::vector<std::pair<Symbol, double>> all;
  for (std::uint32_t w = 0; w < m.vocab(); ++w) {
    all.emplace_back(Symbol{w}, m.beta[topic][w]);
  }
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.second > b.second;
  });
  if (all.size() > n) all.resize(n);
  return all;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kLdaFormatVersion = 1;

inline nlohmann::json to_json(const LdaModel& m) {
  return {{"version", kLdaFormatVersion}, {"K", m.num_topics},
          {"alpha", m.alpha},             {"eta", m.eta},
          {"alphabet", m.alphabet.names()}, {"beta", m.beta}};
}

inline LdaModel lda_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kLdaFormatVersion) {
      throw DataError("lda: unsupported version");
    }
    LdaModel m;
    m.num_topics = j.at("K").get<std::size_t>();
    m.alpha = j.at("alpha").get<std::vector<double>>();
    m.eta = j.at("eta").get<double>();
    m.alphabet = Alphabet(j.at("alphabet").get<std::vector<std::string>>());
    m.beta = j.at("beta").get<std::vector<std::vector<double>>>();
    if (m.alpha.size() != m.num_topics || m.beta.size() != m.num_topics) {
      throw DataError("lda: inconsistent topic count");
    }
    for (const auto& row : m.beta) {
      if (row.size() != m.alphabet.size()) throw DataError("lda: beta row length");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("lda: ") + e.what());
  }
}

}  // namespace bayesspec::topics
