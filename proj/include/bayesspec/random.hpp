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

#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace bayesspec {

/// Every randomized routine takes a caller-owned engine of this type.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

/// Draws an index with probability proportional to `weights`.
/// All-zero weights fall back to a uniform draw.
inline std::size_t sample_categorical(std::span<const double> weights,
                                      Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) {
    return std::uniform_int_distribution<std::size_t>(0, weights.size() - 1)(
        rng);
  }
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return i;
  }
  // Rounding left u marginally non-negative; take the last positive weight.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return weights.size() - 1;
}

inline std::vector<double> sample_dirichlet(std::span<const double> alpha,
                                            Rng& rng) {
  std::vector<double> out(alpha.size());
  double total = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    out[k] = std::gamma_distribution<double>(alpha[k], 1.0)(rng);
    total += out[k];
  }
  if (!(total > 0.0)) {
    // Every gamma draw underflowed (tiny concentrations): put all mass on
    // one coordinate chosen proportionally to alpha.
    std::fill(out.begin(), out.end(), 0.0);
    out[sample_categorical(alpha, rng)] = 1.0;
    return out;
  }
  for (double& x : out) x /= total;
  return out;
}

/// Derives an independent stream seed for worker `index` from a base seed
/// (splitmix64 finalizer), so parallel results do not depend on scheduling.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace bayesspec
