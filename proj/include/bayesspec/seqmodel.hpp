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
 * Topic-conditioned recurrent sequence model.
 *
 *   h_t = tanh(W h_{t-1} + V psi + U x_t + b_h),   h_0 = 0
 *   y_t = softmax(T h_t + b_y)
 *
 * x_t is the one-hot vector of the t-th input token. The vocabulary is the
 * alphabet followed by START and END sentinels. An unconditioned model has no
 * V term and ignores psi.
 *
 * Two scoring modes:
 *   kConditional inputs s_1..s_{n-1}, scores s_2..s_n. The first symbol and
 *                termination are not scored, so this is not a distribution
 *                over words.
 *   kNormalized  inputs START s_1..s_n, scores s_1..s_n END. Sums to at most
 *                one over all words; the default.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "bayesspec/base64.hpp"
#include "bayesspec/error.hpp"
#include "bayesspec/gpa.hpp"
#include "bayesspec/random.hpp"
#include "bayesspec/topics.hpp"

namespace bayesspec::seqmodel {

using topics::TopicVector;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class ScoreMode { kConditional, kNormalized };

inline ScoreMode parse_mode(std::string_view s) {
  if (s == "conditional") return ScoreMode::kConditional;
  if (s == "normalized") return ScoreMode::kNormalized;
  throw ConfigError("unknown scoring mode '" + std::string(s) + "'");
}

inline std::string_view mode_name(ScoreMode m) {
  return m == ScoreMode::kConditional ? "conditional" : "normalized";
}

/// Per-token log-probabilities are floored here so KL terms stay finite.
inline constexpr double kLogProbFloor = -40.0;

struct SequenceModel {
  std::size_t hidden = 0;
  std::size_t vocab = 0;   // alphabet + START + END
  std::size_t topics = 0;  // K; 0 when unconditioned
  bool conditioned = true;

  MatrixXd W;   // H x H
  MatrixXd V;   // H x K (empty when unconditioned)
  MatrixXd U;   // H x vocab
  MatrixXd T;   // vocab x H
  VectorXd bh;  // H
  VectorXd by;  // vocab

  std::uint32_t start_token() const { return static_cast<std::uint32_t>(vocab - 2); }
  std::uint32_t end_token() const { return static_cast<std::uint32_t>(vocab - 1); }

  static SequenceModel zeros(std::size_t hidden, std::size_t vocab,
                             std::size_t topics, bool conditioned) {
    if (vocab < 3) throw ConfigError("sequence model: vocabulary too small");
    SequenceModel m;
    m.hidden = hidden;
    m.vocab = vocab;
    m.conditioned = conditioned;
    m.topics = conditioned ? topics : 0;
    m.W = MatrixXd::Zero(hidden, hidden);
    m.V = MatrixXd::Zero(hidden, m.topics);
    m.U = MatrixXd::Zero(hidden, vocab);
    m.T = MatrixXd::Zero(vocab, hidden);
    m.bh = VectorXd::Zero(hidden);
    m.by = VectorXd::Zero(vocab);
    return m;
  }

  /// Uniform initialization in [-scale, scale]; biases start at zero.
  static SequenceModel random(std::size_t hidden, std::size_t vocab,
                              std::size_t topics, bool conditioned, Rng& rng,
                              double scale = 0.08) {
    SequenceModel m = zeros(hidden, vocab, topics, conditioned);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (MatrixXd* p : {&m.W, &m.V, &m.U, &m.T}) {
      for (Eigen::Index i = 0; i < p->size(); ++i) p->data()[i] = u(rng);
    }
    return m;
  }

  bool all_finite() const {
    return W.allFinite() && V.allFinite() && U.allFinite() && T.allFinite() &&
           bh.allFinite() && by.allFinite();
  }
};

/// Gradient buffers with the model's shapes.
struct Gradients {
  MatrixXd W, V, U, T;
  VectorXd bh, by;

  explicit Gradients(const SequenceModel& m)
      : W(MatrixXd::Zero(m.W.rows(), m.W.cols())),
        V(MatrixXd::Zero(m.V.rows(), m.V.cols())),
        U(MatrixXd::Zero(m.U.rows(), m.U.cols())),
        T(MatrixXd::Zero(m.T.rows(), m.T.cols())),
        bh(VectorXd::Zero(m.bh.size())),
        by(VectorXd::Zero(m.by.size())) {}

  double squared_norm() const {
    return W.squaredNorm() + V.squaredNorm() + U.squaredNorm() +
           T.squaredNorm() + bh.squaredNorm() + by.squaredNorm();
  }

  void scale(double s) {
    W *= s;
    V *= s;
    U *= s;
    T *= s;
    bh *= s;
    by *= s;
  }
};

/// Token-level view of a behavior under a scoring mode.
struct TokenSequence {
  std::vector<std::uint32_t> inputs;
  std::vector<std::uint32_t> targets;
};

inline TokenSequence encode(const SequenceModel& m, const Behavior& theta,
                            ScoreMode mode) {
  TokenSequence seq;
  for (Symbol s : theta) {
    if (s.is_epsilon() || s.id >= m.vocab - 2) {
      throw SymbolOutOfVocab("symbol outside the model vocabulary");
    }
  }
  if (mode == ScoreMode::kNormalized) {
    seq.inputs.push_back(m.start_token());
    for (Symbol s : theta) {
      seq.inputs.push_back(s.id);
      seq.targets.push_back(s.id);
    }
    seq.targets.push_back(m.end_token());
  } else {
    for (std::size_t t = 0; t + 1 < theta.size(); ++t) {
      seq.inputs.push_back(theta[t].id);
      seq.targets.push_back(theta[t + 1].id);
    }
  }
  return seq;
}

namespace detail {

inline void check_psi(const SequenceModel& m, const TopicVector& psi) {
  if (m.conditioned && psi.size() != m.topics) {
    throw DimensionMismatch("topic vector has length " + std::to_string(psi.size()) +
                            ", model expects " + std::to_string(m.topics));
  }
}

inline VectorXd topic_drive(const SequenceModel& m, const TopicVector& psi) {
  if (!m.conditioned) return VectorXd::Zero(static_cast<Eigen::Index>(m.hidden));
  Eigen::Map<const VectorXd> p(psi.data(), static_cast<Eigen::Index>(psi.size()));
  return m.V * p;
}

inline VectorXd log_softmax(const VectorXd& o) {
  const double mx = o.maxCoeff();
  const double lse = mx + std::log((o.array() - mx).exp().sum());
  return o.array() - lse;
}

}  // namespace detail

/// Output distributions y_1..y_n for the input tokens.
inline std::vector<VectorXd> forward(const SequenceModel& m, const TopicVector& psi,
                                     const std::vector<std::uint32_t>& inputs) {
  detail::check_psi(m, psi);
  const VectorXd drive = detail::topic_drive(m, psi) + m.bh;
  VectorXd h = VectorXd::Zero(static_cast<Eigen::Index>(m.hidden));
  std::vector<VectorXd> ys;
  ys.reserve(inputs.size());
  for (std::uint32_t x : inputs) {
    if (x >= m.vocab) throw SymbolOutOfVocab("input token outside the vocabulary");
    h = (m.W * h + drive + m.U.col(x)).array().tanh();
    ys.push_back(detail::log_softmax(m.T * h + m.by).array().exp());
  }
  return ys;
}

/// log P(theta | psi). Each token's log-probability is floored at
/// kLogProbFloor.
inline double sequence_log_prob(const SequenceModel& m, const TopicVector& psi,
                                const Behavior& theta,
                                ScoreMode mode = ScoreMode::kNormalized) {
  if (mode == ScoreMode::kConditional && theta.empty()) {
    throw ConfigError("conditional-mode scoring needs a nonempty behavior");
  }
  detail::check_psi(m, psi);
  const TokenSequence seq = encode(m, theta, mode);
  const VectorXd drive = detail::topic_drive(m, psi) + m.bh;
  VectorXd h = VectorXd::Zero(static_cast<Eigen::Index>(m.hidden));
  double total = 0.0;
  for (std::size_t t = 0; t < seq.inputs.size(); ++t) {
    h = (m.W * h + drive + m.U.col(seq.inputs[t])).array().tanh();
    const VectorXd ls = detail::log_softmax(m.T * h + m.by);
    total += std::max(kLogProbFloor, ls[seq.targets[t]]);
  }
  return total;
}

/// Summed cross-entropy of one token sequence and its gradient (accumulated
/// into `g`) by backpropagation through time.
inline double loss_and_gradient(const SequenceModel& m, const TopicVector& psi,
                                const TokenSequence& seq, Gradients& g) {
  detail::check_psi(m, psi);
  const std::size_t n = seq.inputs.size();
  if (n == 0) return 0.0;
  const auto H = static_cast<Eigen::Index>(m.hidden);
  const VectorXd drive = detail::topic_drive(m, psi) + m.bh;

  std::vector<VectorXd> hs(n + 1, VectorXd::Zero(H));
  std::vector<VectorXd> ps(n);
  double loss = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    hs[t + 1] = (m.W * hs[t] + drive + m.U.col(seq.inputs[t])).array().tanh();
    const VectorXd ls = detail::log_softmax(m.T * hs[t + 1] + m.by);
    loss -= ls[seq.targets[t]];
    ps[t] = ls.array().exp();
  }

  VectorXd dh_next = VectorXd::Zero(H);
  VectorXd da_sum = VectorXd::Zero(H);
  for (std::size_t t = n; t-- > 0;) {
    VectorXd dout = ps[t];
    dout[seq.targets[t]] -= 1.0;
    g.T.noalias() += dout * hs[t + 1].transpose();
    g.by += dout;
    const VectorXd dh = m.T.transpose() * dout + dh_next;
    const VectorXd da = dh.array() * (1.0 - hs[t + 1].array().square());
    g.W.noalias() += da * hs[t].transpose();
    g.U.col(seq.inputs[t]) += da;
    da_sum += da;
    dh_next.noalias() = m.W.transpose() * da;
  }
  g.bh += da_sum;
  if (m.conditioned) {
    Eigen::Map<const VectorXd> p(psi.data(), static_cast<Eigen::Index>(psi.size()));
    g.V.noalias() += da_sum * p.transpose();
  }
  return loss;
}

/// One training pair. Each epoch draws one psi uniformly from `psi_draws`
/// (samples of the source program's topic posterior), so the network sees a
/// fresh posterior sample per example per epoch.
struct TrainingExample {
  std::vector<TopicVector> psi_draws;
  Behavior behavior;
};

struct TrainOptions {
  std::size_t epochs = 30;
  double learning_rate = 0.05;
  double clip_norm = 5.0;
  ScoreMode mode = ScoreMode::kNormalized;
};

struct TrainResult {
  SequenceModel model;
  std::vector<double> loss_history;  // mean per-token cross-entropy per epoch
};

/// Plain SGD, one example at a time, with global gradient-norm clipping.
inline TrainResult train(SequenceModel m, const std::vector<TrainingExample>& data,
                         const TrainOptions& opts, Rng& rng) {
  if (data.empty()) throw EmptyCorpus("sequence model: no training data");
  std::vector<TokenSequence> seqs;
  seqs.reserve(data.size());
  for (const auto& ex : data) {
    if (m.conditioned && ex.psi_draws.empty()) {
      throw ConfigError("sequence model: training example without psi");
    }
    seqs.push_back(encode(m, ex.behavior, opts.mode));
  }

  TrainResult res;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const TopicVector no_psi;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t tokens = 0;
    for (std::size_t i : order) {
      const TokenSequence& seq = seqs[i];
      if (seq.inputs.empty()) continue;
      const auto& draws = data[i].psi_draws;
      const TopicVector& psi =
          !m.conditioned
              ? no_psi
              : draws[std::uniform_int_distribution<std::size_t>(0, draws.size() - 1)(rng)];
      Gradients g(m);
      const double loss = loss_and_gradient(m, psi, seq, g);
      if (!std::isfinite(loss)) {
        throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) +
                            ", example " + std::to_string(i));
      }
      total += loss;
      tokens += seq.inputs.size();
      const double norm = std::sqrt(g.squared_norm());
      if (norm > opts.clip_norm) g.scale(opts.clip_norm / norm);
      if (opts.learning_rate != 0.0) {
        m.W -= opts.learning_rate * g.W;
        m.U -= opts.learning_rate * g.U;
        m.T -= opts.learning_rate * g.T;
        m.bh -= opts.learning_rate * g.bh;
        m.by -= opts.learning_rate * g.by;
        if (m.conditioned) m.V -= opts.learning_rate * g.V;
      }
    }
    const double mean = tokens ? total / static_cast<double>(tokens) : 0.0;
    if (!std::isfinite(mean) || !m.all_finite()) {
      throw NonFiniteLoss("non-finite parameters after epoch " + std::to_string(epoch));
    }
    res.loss_history.push_back(mean);
  }
  res.model = std::move(m);
  return res;
}

/// Mean per-token cross-entropy of a data set (first psi draw per example).
inline double mean_cross_entropy(const SequenceModel& m,
                                 const std::vector<TrainingExample>& data,
                                 ScoreMode mode = ScoreMode::kNormalized) {
  double total = 0.0;
  std::size_t tokens = 0;
  const TopicVector no_psi;
  for (const auto& ex : data) {
    const TokenSequence seq = encode(m, ex.behavior, mode);
    if (seq.inputs.empty()) continue;
    Gradients g(m);
    total += loss_and_gradient(m, m.conditioned ? ex.psi_draws.front() : no_psi, seq, g);
    tokens += seq.inputs.size();
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t entries_checked = 0;
  std::vector<std::string> parameters;  // names of the checked parameter blocks
};

/// Compares backpropagated gradients of the summed cross-entropy with
/// central finite differences, on every entry when the model has at most
/// `max_entries` parameters and on a random subsample of that size otherwise.
inline GradientCheckResult gradient_check(const SequenceModel& model,
                                          const TrainingExample& example,
                                          double epsilon, Rng& rng,
                                          ScoreMode mode = ScoreMode::kNormalized,
                                          std::size_t max_entries = 2000) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw ConfigError("gradient check: epsilon must be in [1e-7, 1e-3]");
  }
  const TopicVector no_psi;
  const TopicVector& psi = model.conditioned ? example.psi_draws.at(0) : no_psi;
  const TokenSequence seq = encode(model, example.behavior, mode);
  Gradients g(model);
  loss_and_gradient(model, psi, seq, g);

  SequenceModel m = model;
  auto loss = [&]() {
    Gradients scratch(m);
    return loss_and_gradient(m, psi, seq, scratch);
  };

  struct Block {
    std::string name;
    double* param;
    const double* grad;
    Eigen::Index size;
  };
  std::vector<Block> blocks = {
      {"W", m.W.data(), g.W.data(), m.W.size()},
      {"U", m.U.data(), g.U.data(), m.U.size()},
      {"T", m.T.data(), g.T.data(), m.T.size()},
      {"b_h", m.bh.data(), g.bh.data(), m.bh.size()},
      {"b_y", m.by.data(), g.by.data(), m.by.size()},
  };
  if (m.conditioned) blocks.insert(blocks.begin() + 1, {"V", m.V.data(), g.V.data(), m.V.size()});

  std::vector<std::pair<std::size_t, Eigen::Index>> entries;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (Eigen::Index i = 0; i < blocks[b].size; ++i) entries.emplace_back(b, i);
  }
  if (entries.size() > max_entries) {
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(max_entries);
  }

  GradientCheckResult res;
  for (const auto& b : blocks) res.parameters.push_back(b.name);
  for (auto [b, i] : entries) {
    double* p = blocks[b].param + i;
    const double saved = *p;
    *p = saved + epsilon;
    const double up = loss();
    *p = saved - epsilon;
    const double down = loss();
    *p = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double analytic = blocks[b].grad[i];
    const double rel = std::abs(analytic - numeric) /
                       std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    res.max_relative_error = std::max(res.max_relative_error, rel);
    ++res.entries_checked;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kSeqFormatVersion = 1;

namespace detail {

inline std::string encode_matrix(const MatrixXd& a) {
  std::vector<double> row_major;
  row_major.reserve(static_cast<std::size_t>(a.size()));
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) row_major.push_back(a(r, c));
  }
  return base64::encode_doubles(row_major);
}

inline MatrixXd decode_matrix(const std::string& s, Eigen::Index rows, Eigen::Index cols) {
  std::vector<double> xs = base64::decode_doubles(s);
  if (static_cast<Eigen::Index>(xs.size()) != rows * cols) {
    throw DataError("sequence model: weight array has wrong size");
  }
  MatrixXd a(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) a(r, c) = xs[static_cast<std::size_t>(r * cols + c)];
  }
  return a;
}

}  // namespace detail

inline nlohmann::json to_json(const SequenceModel& m, const Alphabet& alphabet) {
  nlohmann::json j;
  j["version"] = kSeqFormatVersion;
  j["hidden"] = m.hidden;
  j["vocab"] = m.vocab;
  j["topics"] = m.topics;
  j["conditioned"] = m.conditioned;
  j["alphabet"] = alphabet.names();
  j["encoding"] = "base64-f64le-rowmajor";
  j["W"] = detail::encode_matrix(m.W);
  j["V"] = detail::encode_matrix(m.V);
  j["U"] = detail::encode_matrix(m.U);
  j["T"] = detail::encode_matrix(m.T);
  j["b_h"] = detail::encode_matrix(m.bh);
  j["b_y"] = detail::encode_matrix(m.by);
  return j;
}

inline std::pair<SequenceModel, Alphabet> seqmodel_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kSeqFormatVersion) {
      throw DataError("sequence model: unsupported version");
    }
    Alphabet alphabet(j.at("alphabet").get<std::vector<std::string>>());
    SequenceModel m = SequenceModel::zeros(
        j.at("hidden").get<std::size_t>(), j.at("vocab").get<std::size_t>(),
        j.at("topics").get<std::size_t>(), j.at("conditioned").get<bool>());
    if (m.vocab != alphabet.vocab_size()) {
      throw DataError("sequence model: vocabulary does not match alphabet");
    }
    const auto H = static_cast<Eigen::Index>(m.hidden);
    const auto Vs = static_cast<Eigen::Index>(m.vocab);
    const auto K = static_cast<Eigen::Index>(m.topics);
    m.W = detail::decode_matrix(j.at("W"), H, H);
    m.V = detail::decode_matrix(j.at("V"), H, K);
    m.U = detail::decode_matrix(j.at("U"), H, Vs);
    m.T = detail::decode_matrix(j.at("T"), Vs, H);
    m.bh = detail::decode_matrix(j.at("b_h"), H, 1);
    m.by = detail::decode_matrix(j.at("b_y"), Vs, 1);
    return {std::move(m), std::move(alphabet)};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("sequence model: ") + e.what());
  }
}

}  // namespace bayesspec::seqmodel
