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
 * Synthetic corpora, training data and mutations.
 *
 * A pattern file has `key = value` lines followed by one or more templates:
 *
 *   # a comment
 *   name = dialog-int
 *   weight = 2
 *   label = normal
 *   alphabet = newA setTitle setItems show
 *
 *   [template]
 *   program dialog
 *   var focus;
 *   call newA();
 *   ? call setTitle();
 *   call {{setItems|setIcon}}();
 *   ?{
 *   if (focus == 1) { call setItems(); }
 *   ?}
 *   call show();
 *
 * In a template a line starting with `?` is kept with probability 1/2, a
 * `?{` ... `?}` group is kept or dropped as a whole, and `{{a|b|c}}` is
 * replaced by one alternative chosen uniformly. The alphabet defaults to
 * every call target of the pattern's templates.
 */

#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bayesspec/error.hpp"
#include "bayesspec/gpa.hpp"
#include "bayesspec/random.hpp"
#include "bayesspec/symexec.hpp"

namespace bayesspec::corpus {

struct PatternSpec {
  std::string name;
  double weight = 1.0;
  std::string label = "normal";
  std::vector<std::string> alphabet;
  std::vector<std::string> templates;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_words(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

/// Expands template syntax; `choose(n)` picks an alternative in [0, n) and
/// `keep()` decides optional lines.
template <class Choose, class Keep>
std::string expand(std::string_view tmpl, Choose choose, Keep keep) {
  std::string out;
  std::istringstream in{std::string(tmpl)};
  std::vector<bool> group_keep;  // nesting of ?{ ... ?}
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::string t = trim(line);
    const bool live =
        std::all_of(group_keep.begin(), group_keep.end(), [](bool b) { return b; });
    if (t == "?{") {
      group_keep.push_back(live ? keep() : false);
      out += '\n';
      continue;
    }
    if (t == "?}") {
      if (group_keep.empty()) {
        throw TemplateParseError("template line " + std::to_string(line_no) +
                                 ": unmatched ?}");
      }
      group_keep.pop_back();
      out += '\n';
      continue;
    }
    std::string body = line;
    bool kept = live;
    if (!t.empty() && t[0] == '?') {
      body = t.substr(1);
      if (live) kept = keep();
    }
    std::string expanded;
    for (std::size_t i = 0; i < body.size();) {
      const auto open = body.find("{{", i);
      if (open == std::string::npos) {
        expanded += body.substr(i);
        break;
      }
      const auto close = body.find("}}", open);
      if (close == std::string::npos) {
        throw TemplateParseError("template line " + std::to_string(line_no) +
                                 ": unterminated {{");
      }
      expanded += body.substr(i, open - i);
      std::vector<std::string> alts;
      std::string inner = body.substr(open + 2, close - open - 2);
      for (std::size_t s = 0;;) {
        const auto bar = inner.find('|', s);
        alts.push_back(trim(inner.substr(s, bar == std::string::npos ? std::string::npos : bar - s)));
        if (bar == std::string::npos) break;
        s = bar + 1;
      }
      expanded += alts[choose(alts.size())];
      i = close + 2;
    }
    // Dropped lines leave a blank so parser line numbers match the template.
    out += kept ? expanded : std::string();
    out += '\n';
  }
  if (!group_keep.empty()) throw TemplateParseError("template: unterminated ?{");
  return out;
}

}  // namespace detail

/// Instantiates a template with random choices.
inline std::string instantiate(std::string_view tmpl, Rng& rng) {
  return detail::expand(
      tmpl,
      [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); },
      [&] { return uniform01(rng) < 0.5; });
}

/// The fullest instantiation: every optional line kept, first alternatives.
inline std::string instantiate_full(std::string_view tmpl) {
  return detail::expand(tmpl, [](std::size_t) { return std::size_t{0}; }, [] { return true; });
}

inline PatternSpec parse_pattern(std::string_view text) {
  PatternSpec spec;
  std::istringstream in{std::string(text)};
  bool in_template = false;
  bool alphabet_given = false;
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t == "[template]") {
      spec.templates.emplace_back();
      in_template = true;
      continue;
    }
    if (in_template) {
      spec.templates.back() += line + '\n';
      continue;
    }
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw TemplateParseError("pattern line " + std::to_string(line_no) +
                               ": expected key = value");
    }
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (key == "name") {
      spec.name = value;
    } else if (key == "weight") {
      try {
        std::size_t used = 0;
        spec.weight = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw TemplateParseError("pattern line " + std::to_string(line_no) + ": bad weight");
      }
    } else if (key == "label") {
      spec.label = value;
    } else if (key == "alphabet") {
      spec.alphabet = detail::split_words(value);
      alphabet_given = true;
    } else {
      throw TemplateParseError("pattern line " + std::to_string(line_no) +
                               ": unknown key '" + key + "'");
    }
  }
  if (spec.name.empty()) throw TemplateParseError("pattern: missing name");
  if (!(spec.weight > 0.0)) throw TemplateParseError("pattern " + spec.name + ": weight must be positive");
  if (spec.templates.empty()) throw TemplateParseError("pattern " + spec.name + ": no templates");

  std::set<std::string> targets;
  for (std::size_t i = 0; i < spec.templates.size(); ++i) {
    try {
      symexec::Cfg g = symexec::parse_program(instantiate_full(spec.templates[i]));
      for (auto& c : symexec::call_targets(g)) targets.insert(c);
    } catch (const Error& e) {
      throw TemplateParseError("pattern " + spec.name + ", template " +
                               std::to_string(i + 1) + ": " + e.what());
    }
  }
  if (!alphabet_given) spec.alphabet.assign(targets.begin(), targets.end());
  if (spec.alphabet.empty()) throw TemplateParseError("pattern " + spec.name + ": empty alphabet");
  return spec;
}

inline PatternSpec load_pattern(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TemplateParseError("cannot read pattern file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_pattern(ss.str());
  } catch (const TemplateParseError& e) {
    throw TemplateParseError(path + ": " + e.what());
  }
}

/// Union of the patterns' alphabet slices in order of first appearance.
inline Alphabet corpus_alphabet(const std::vector<PatternSpec>& specs) {
  std::vector<std::string> names;
  std::set<std::string> seen;
  for (const auto& s : specs) {
    for (const auto& a : s.alphabet) {
      if (seen.insert(a).second) names.push_back(a);
    }
  }
  return Alphabet(names);
}

struct GeneratedProgram {
  std::string id;
  std::string pattern;
  std::string label;
  std::string text;
};

inline std::string program_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%05zu", i);
  return buf;
}

inline std::vector<GeneratedProgram> generate_corpus(const std::vector<PatternSpec>& specs,
                                                     std::size_t n_programs, Rng& rng) {
  if (specs.empty()) throw ConfigError("generate_corpus: no patterns");
  std::vector<double> weights;
  for (const auto& s : specs) weights.push_back(s.weight);
  std::vector<GeneratedProgram> out;
  out.reserve(n_programs);
  for (std::size_t i = 0; i < n_programs; ++i) {
    const PatternSpec& s = specs[sample_categorical(weights, rng)];
    const std::size_t t =
        std::uniform_int_distribution<std::size_t>(0, s.templates.size() - 1)(rng);
    out.push_back({program_id(i), s.name, s.label, instantiate(s.templates[t], rng)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Compilation and training data

/// One accept location of one program.
struct CompiledProgram {
  std::string id;
  std::string location;  // accept point label
  Automaton automaton;
};

/// Unknown call targets, i.e. calls that would compile to epsilon.
inline std::vector<std::string> unknown_calls(const symexec::Cfg& g, const Alphabet& alphabet) {
  std::vector<std::string> out;
  for (const auto& c : symexec::call_targets(g)) {
    if (!alphabet.find(c)) out.push_back(c);
  }
  return out;
}

inline std::vector<CompiledProgram> compile_program(const std::string& id,
                                                    std::string_view text,
                                                    const Alphabet& alphabet,
                                                    const symexec::SymexecOptions& opts = {}) {
  const symexec::Cfg g = symexec::parse_program(text);
  std::vector<CompiledProgram> out;
  for (const auto& ap : g.accept_points) {
    out.push_back({id, ap.label, symexec::symbolic_execute(g, alphabet, ap.location, opts)});
  }
  return out;
}

struct TrainingRecord {
  std::string program_id;
  std::string location;
  FeatureSet features;
  std::vector<Behavior> behaviors;
};

struct TrainingSet {
  Alphabet alphabet;
  std::vector<TrainingRecord> records;

  std::size_t num_behaviors() const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.behaviors.size();
    return n;
  }
};

/// Samples behaviors for every accept location of every program. Program i
/// draws from its own stream seeded from `seed` and i.
inline TrainingSet extract_training_data(
    const std::vector<std::pair<std::string, std::string>>& programs,
    const Alphabet& alphabet, std::size_t samples_per_program, std::uint64_t seed,
    const WalkOptions& walk = {}, const symexec::SymexecOptions& sx = {}) {
  if (samples_per_program < 1) throw ConfigError("extract: need at least one sample");
  TrainingSet ts{alphabet, {}};
  for (std::size_t i = 0; i < programs.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    for (auto& cp : compile_program(programs[i].first, programs[i].second, alphabet, sx)) {
      TrainingRecord rec{cp.id, cp.location, extract_features(cp.automaton), {}};
      for (std::size_t s = 0; s < samples_per_program; ++s) {
        rec.behaviors.push_back(behavior_of(sample_accepting_run(cp.automaton, walk, rng)));
      }
      ts.records.push_back(std::move(rec));
    }
  }
  return ts;
}

inline nlohmann::json to_json(const TrainingRecord& r, const Alphabet& alphabet) {
  nlohmann::json feats = nlohmann::json::array();
  for (Symbol s : r.features) feats.push_back(alphabet.name(s));
  nlohmann::json bs = nlohmann::json::array();
  for (const auto& b : r.behaviors) bs.push_back(behavior_to_json(b, alphabet));
  return {{"program_id", r.program_id}, {"location", r.location},
          {"features", feats}, {"behaviors", bs}};
}

inline TrainingRecord record_from_json(const nlohmann::json& j, const Alphabet& alphabet) {
  try {
    TrainingRecord r;
    r.program_id = j.at("program_id").get<std::string>();
    r.location = j.value("location", std::string("end"));
    for (const auto& f : j.at("features")) r.features.insert(alphabet.at(f.get<std::string>()));
    for (const auto& b : j.at("behaviors")) r.behaviors.push_back(behavior_from_json(b, alphabet));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("training record: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Mutation

/// Indices of the last non-epsilon transitions before accepting states:
/// transitions into an accepting state, looking back through epsilon ones.
inline std::vector<std::size_t> mutation_sites(const Automaton& a) {
  const auto& ts = a.transitions();
  std::set<std::size_t> sites;
  std::set<StateId> visited;
  std::vector<StateId> stack(a.accepting().begin(), a.accepting().end());
  while (!stack.empty()) {
    const StateId q = stack.back();
    stack.pop_back();
    if (!visited.insert(q).second) continue;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (ts[i].to != q) continue;
      if (ts[i].symbol.is_epsilon()) {
        stack.push_back(ts[i].from);
      } else {
        sites.insert(i);
      }
    }
  }
  return {sites.begin(), sites.end()};
}

struct Mutation {
  std::size_t transition = 0;
  Symbol from;
  Symbol to;

  bool identity() const { return from == to; }
};

inline std::string describe(const Mutation& m, const Automaton& a) {
  const Transition& t = a.transitions()[m.transition];
  return "transition " + std::to_string(m.transition) + " (" + std::to_string(t.from) +
         "->" + std::to_string(t.to) + "): " + a.alphabet().name(m.from) + " -> " +
         a.alphabet().name(m.to);
}

/// Replaces the symbol of one site by a uniformly drawn alphabet symbol,
/// possibly the same one.
inline std::pair<Automaton, Mutation> mutate_at(const Automaton& a, std::size_t site, Rng& rng) {
  const std::size_t n = a.alphabet().size();
  if (n == 0) throw NoMutableCall("empty alphabet");
  Mutation m;
  m.transition = site;
  m.from = a.transitions().at(site).symbol;
  m.to = Symbol{static_cast<std::uint32_t>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng))};
  return {a.with_symbol(site, m.to), m};
}

/// Mutates one randomly chosen site.
inline std::pair<Automaton, Mutation> mutate_program(const Automaton& a, Rng& rng) {
  const auto sites = mutation_sites(a);
  if (sites.empty()) throw NoMutableCall("program emits no symbol before acceptance");
  const std::size_t k = std::uniform_int_distribution<std::size_t>(0, sites.size() - 1)(rng);
  return mutate_at(a, sites[k], rng);
}

/// Every site mutated in its own copy.
inline std::vector<std::pair<Automaton, Mutation>> mutate_each_site(const Automaton& a, Rng& rng) {
  const auto sites = mutation_sites(a);
  if (sites.empty()) throw NoMutableCall("program emits no symbol before acceptance");
  std::vector<std::pair<Automaton, Mutation>> out;
  for (std::size_t s : sites) out.push_back(mutate_at(a, s, rng));
  return out;
}

}  // namespace bayesspec::corpus
