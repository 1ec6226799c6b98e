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

// bayesspec: corpus generation, training, scoring and evaluation.
//
// Exit codes: 0 ok, 2 usage or configuration, 3 data, 4 internal.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bayesspec/corpus.hpp"
#include "bayesspec/error.hpp"
#include "bayesspec/gpa.hpp"
#include "bayesspec/pipeline.hpp"
#include "bayesspec/random.hpp"
#include "bayesspec/scorer.hpp"
#include "bayesspec/seqmodel.hpp"
#include "bayesspec/symexec.hpp"
#include "bayesspec/topics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bayesspec::cli {
namespace {

constexpr int kFormatVersion = 1;

// Everything that can influence an output. --jobs is left out on purpose:
// results do not depend on it.
struct Options {
  std::uint64_t seed = 1;
  std::size_t jobs = 1;

  std::vector<std::string> patterns;
  std::size_t count = 0;
  std::string out;

  std::string corpus;
  std::string programs;
  std::vector<std::string> data;
  std::string bundle;
  std::vector<std::string> bundles;
  std::vector<std::string> baselines;
  std::size_t samples = 10;
  std::size_t knn_k = 1;
  bool ignore_unknown = false;
  std::string only_label;

  symexec::SymexecOptions symexec;
  pipeline::TrainConfig train;
  double eta = 0.0;  // <= 0 means 1/|alphabet|
  std::string mode = "normalized";
  bool unconditioned = false;
  pipeline::ScoreOptions score;
  bool no_bias_correction = false;
  double baseline_floor = 0.05;
};

json run_config(const std::string& command, const Options& o) {
  pipeline::TrainConfig t = o.train;
  if (o.eta > 0) t.lda.eta = o.eta;
  t.rnn.mode = seqmodel::parse_mode(o.mode);
  t.conditioned = !o.unconditioned;
  pipeline::ScoreOptions s = o.score;
  s.cfg.bias_correction = !o.no_bias_correction;
  return {{"command", command},
          {"seed", o.seed},
          {"paths",
           {{"patterns", o.patterns},
            {"out", o.out},
            {"corpus", o.corpus},
            {"programs", o.programs},
            {"data", o.data},
            {"bundle", o.bundle},
            {"bundles", o.bundles},
            {"baselines", o.baselines}}},
          {"count", o.count},
          {"samples", o.samples},
          {"unroll_bound", o.symexec.unroll_bound},
          {"ignore_unknown", o.ignore_unknown},
          {"train", pipeline::to_json(t)},
          {"score", pipeline::to_json(s)},
          {"knn_k", o.knn_k},
          {"baseline_floor", o.baseline_floor},
          {"only_label", o.only_label}};
}

// ---------------------------------------------------------------------------
// Files

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
  if (!out) throw DataError("write failed for " + p.string());
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

std::vector<fs::path> files_with_extension(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct Program {
  std::string id;
  std::string pattern;
  std::string label;
  std::string text;
};

struct ProgramSet {
  std::vector<Program> programs;
  std::optional<Alphabet> alphabet;  // from a corpus manifest
};

// A directory written by gen-corpus (with corpus.json), a directory of .dsl
// files, or a single .dsl file.
ProgramSet load_programs(const std::string& where) {
  const fs::path p(where);
  if (where.empty()) throw ConfigError("no program location given");
  if (!fs::exists(p)) throw DataError("no such file or directory: " + where);
  ProgramSet set;
  if (fs::is_regular_file(p)) {
    set.programs.push_back({p.stem().string(), "", "", read_file(p)});
    return set;
  }
  const fs::path manifest = p / "corpus.json";
  if (fs::exists(manifest)) {
    const json j = read_json(manifest);
    try {
      set.alphabet = Alphabet(j.at("alphabet").get<std::vector<std::string>>());
      for (const auto& e : j.at("programs")) {
        set.programs.push_back({e.at("id").get<std::string>(), e.value("pattern", ""),
                                e.value("label", ""),
                                read_file(p / e.at("file").get<std::string>())});
      }
    } catch (const json::exception& e) {
      throw DataError(manifest.string() + ": " + e.what());
    }
    return set;
  }
  for (const auto& f : files_with_extension(p, ".dsl")) {
    set.programs.push_back({f.stem().string(), "", "", read_file(f)});
  }
  if (set.programs.empty()) throw DataError("no .dsl programs in " + where);
  return set;
}

std::vector<Program> filter_label(std::vector<Program> ps, const std::string& label) {
  if (label.empty()) return ps;
  std::erase_if(ps, [&](const Program& p) { return p.label != label; });
  return ps;
}

Alphabet alphabet_from_calls(const std::vector<Program>& ps) {
  std::set<std::string> names;
  for (const auto& p : ps) {
    for (auto& c : symexec::call_targets(symexec::parse_program(p.text))) names.insert(c);
  }
  return Alphabet({names.begin(), names.end()});
}

scorer::ModelBundle load_bundle(const std::string& dir) {
  if (dir.empty()) throw ConfigError("no model bundle given");
  const fs::path p(dir);
  scorer::ModelBundle b;
  b.lda = topics::lda_from_json(read_json(p / "lda.json"));
  auto [seq, alphabet] = seqmodel::seqmodel_from_json(read_json(p / "rnn.json"));
  b.seq = std::move(seq);
  b.alphabet = std::move(alphabet);
  const json meta = read_json(p / "meta.json");
  try {
    b.mode = seqmodel::parse_mode(meta.at("mode").get<std::string>());
  } catch (const json::exception& e) {
    throw DataError((p / "meta.json").string() + ": " + e.what());
  }
  b.check();
  return b;
}

pipeline::ScoreOptions score_options(const Options& o) {
  pipeline::ScoreOptions s = o.score;
  s.cfg.bias_correction = !o.no_bias_correction;
  s.cfg.jobs = 1;  // parallelism is across programs
  return s;
}

std::vector<corpus::CompiledProgram> compile_all(const std::vector<Program>& ps,
                                                 const Alphabet& alphabet, const Options& o,
                                                 json& errors) {
  std::vector<corpus::CompiledProgram> units;
  for (const auto& p : ps) {
    try {
      for (auto& u : pipeline::compile_checked(p.id, p.text, alphabet, o.symexec,
                                               o.ignore_unknown)) {
        units.push_back(std::move(u));
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kData) throw;
      errors.push_back({{"id", p.id}, {"error", e.what()}});
    }
  }
  return units;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_gen_corpus(const Options& o) {
  if (o.count < 1) throw ConfigError("gen-corpus: -n must be at least 1");
  if (o.patterns.empty()) throw ConfigError("gen-corpus: no pattern files");
  if (o.out.empty()) throw ConfigError("gen-corpus: --out is required");
  std::vector<corpus::PatternSpec> specs;
  for (const auto& p : o.patterns) {
    if (fs::is_directory(p)) {
      for (const auto& f : files_with_extension(p, ".pattern")) {
        specs.push_back(corpus::load_pattern(f.string()));
      }
    } else {
      specs.push_back(corpus::load_pattern(p));
    }
  }
  if (specs.empty()) throw DataError("gen-corpus: no .pattern files found");
  Rng rng(o.seed);
  const auto programs = corpus::generate_corpus(specs, o.count, rng);
  const Alphabet alphabet = corpus::corpus_alphabet(specs);
  const json rc = run_config("gen-corpus", o);
  const std::string stamp = "// run_config " + rc.dump() + "\n";

  const fs::path out(o.out);
  fs::create_directories(out);
  json entries = json::array();
  for (const auto& p : programs) {
    const std::string file = p.id + ".dsl";
    write_file(out / file, p.text + stamp);
    entries.push_back({{"id", p.id}, {"pattern", p.pattern}, {"label", p.label}, {"file", file}});
  }
  json manifest = {{"version", kFormatVersion},
                   {"run_config", rc},
                   {"alphabet", alphabet.names()},
                   {"programs", entries}};
  write_file(out / "corpus.json", manifest.dump(2) + "\n");
  std::cout << json{{"programs", programs.size()}, {"out", o.out}}.dump() << "\n";
  return 0;
}

int cmd_extract(const Options& o) {
  if (o.out.empty()) throw ConfigError("extract: --out is required");
  const ProgramSet set = load_programs(o.corpus);
  const auto programs = filter_label(set.programs, o.only_label);
  const Alphabet alphabet = set.alphabet ? *set.alphabet : alphabet_from_calls(programs);

  json errors = json::array();
  std::vector<std::pair<std::string, std::string>> ok;
  for (const auto& p : programs) {
    try {
      if (!o.ignore_unknown) {
        const auto unknown = corpus::unknown_calls(symexec::parse_program(p.text), alphabet);
        if (!unknown.empty()) throw DataError("calls outside the alphabet: " + unknown.front());
      }
      ok.emplace_back(p.id, p.text);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kData) throw;
      errors.push_back({{"id", p.id}, {"error", e.what()}});
    }
  }
  // Each program is extracted with its own derived seed, so one failing
  // program does not shift the others.
  json records = json::array();
  std::size_t n_behaviors = 0;
  std::vector<json> per_program(ok.size());
  std::vector<std::string> failures(ok.size());
  pipeline::parallel_for(ok.size(), o.jobs, [&](std::size_t i) {
    try {
      const auto ts = corpus::extract_training_data({ok[i]}, alphabet, o.samples,
                                                    derive_seed(o.seed, i), {}, o.symexec);
      per_program[i] = json::array();
      for (const auto& r : ts.records) per_program[i].push_back(corpus::to_json(r, alphabet));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kData) throw;
      failures[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < ok.size(); ++i) {
    if (!failures[i].empty()) {
      errors.push_back({{"id", ok[i].first}, {"error", failures[i]}});
      continue;
    }
    for (auto& r : per_program[i]) {
      n_behaviors += r["behaviors"].size();
      records.push_back(std::move(r));
    }
  }
  json out = {{"version", kFormatVersion},
              {"run_config", run_config("extract", o)},
              {"alphabet", alphabet.names()},
              {"records", records},
              {"errors", errors}};
  write_file(o.out, out.dump() + "\n");
  std::cout << json{{"records", records.size()},
                    {"behaviors", n_behaviors},
                    {"errors", errors.size()}}
                   .dump()
            << "\n";
  return 0;
}

// Several files are merged over the union of their alphabets, in order of
// first appearance.
corpus::TrainingSet load_training_set(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ConfigError("train: --data is required");
  std::vector<json> docs;
  std::vector<std::string> names;
  std::set<std::string> seen;
  for (const auto& path : paths) {
    docs.push_back(read_json(path));
    try {
      for (auto& n : docs.back().at("alphabet").get<std::vector<std::string>>()) {
        if (seen.insert(n).second) names.push_back(n);
      }
    } catch (const json::exception& e) {
      throw DataError(path + ": " + e.what());
    }
  }
  corpus::TrainingSet ts;
  ts.alphabet = Alphabet(names);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    try {
      for (const auto& r : docs[i].at("records")) {
        ts.records.push_back(corpus::record_from_json(r, ts.alphabet));
      }
    } catch (const json::exception& e) {
      throw DataError(paths[i] + ": " + e.what());
    }
  }
  return ts;
}

int cmd_train(const Options& o) {
  if (o.out.empty()) throw ConfigError("train: --out is required");
  pipeline::TrainConfig cfg = o.train;
  if (o.eta > 0) cfg.lda.eta = o.eta;
  cfg.rnn.mode = seqmodel::parse_mode(o.mode);
  cfg.conditioned = !o.unconditioned;
  const corpus::TrainingSet ts = load_training_set(o.data);
  if (ts.num_behaviors() == 0) throw EmptyCorpus("train: training set has no behaviors");

  const auto trained = pipeline::train_bundle(ts, cfg, o.seed);
  const fs::path out(o.out);
  const json rc = run_config("train", o);
  json lda = topics::to_json(trained.bundle.lda);
  lda["run_config"] = rc;
  json rnn = seqmodel::to_json(trained.bundle.seq, trained.bundle.alphabet);
  rnn["run_config"] = rc;
  json meta = {{"version", kFormatVersion},
               {"run_config", rc},
               {"seed", o.seed},
               {"mode", seqmodel::mode_name(cfg.rnn.mode)},
               {"conditioned", cfg.conditioned},
               {"training",
                "staged: topic model fitted first, then the sequence model on "
                "(behavior, posterior topic draw) pairs; the joint maximum likelihood "
                "fit with topics integrated out is approximated by this two-stage fit"},
               {"records", ts.records.size()},
               {"behaviors", ts.num_behaviors()},
               {"loss_history", trained.loss_history}};
  write_file(out / "lda.json", lda.dump() + "\n");
  write_file(out / "rnn.json", rnn.dump() + "\n");
  write_file(out / "meta.json", meta.dump(2) + "\n");
  std::cout << json{{"out", o.out},
                    {"final_loss", trained.loss_history.empty() ? 0.0 : trained.loss_history.back()}}
                   .dump()
            << "\n";
  return 0;
}

json histogram(const std::vector<double>& xs, int bins = 10) {
  std::vector<double> finite;
  for (double x : xs) {
    if (std::isfinite(x)) finite.push_back(x);
  }
  if (finite.empty()) return json::array();
  const auto [lo_it, hi_it] = std::minmax_element(finite.begin(), finite.end());
  const double lo = *lo_it, hi = *hi_it;
  const double width = hi > lo ? (hi - lo) / bins : 1.0;
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (double x : finite) {
    auto b = static_cast<std::size_t>((x - lo) / width);
    ++counts[std::min<std::size_t>(b, counts.size() - 1)];
  }
  json h = json::array();
  for (int b = 0; b < bins; ++b) {
    h.push_back({{"lo", lo + b * width}, {"hi", lo + (b + 1) * width}, {"count", counts[b]}});
  }
  return h;
}

int cmd_score(const Options& o) {
  if (o.out.empty()) throw ConfigError("score: --out is required");
  const scorer::ModelBundle b = load_bundle(o.bundle);
  const ProgramSet set = load_programs(o.programs);
  const auto programs = filter_label(set.programs, o.only_label);
  const pipeline::ScoreOptions so = score_options(o);

  struct Item {
    std::string id, label, location;
    std::optional<scorer::AnomalyReport> report;
    std::string error;
  };
  std::vector<std::vector<Item>> per_program(programs.size());
  pipeline::parallel_for(programs.size(), o.jobs, [&](std::size_t i) {
    const auto& p = programs[i];
    try {
      const auto units =
          pipeline::compile_checked(p.id, p.text, b.alphabet, o.symexec, o.ignore_unknown);
      for (std::size_t u = 0; u < units.size(); ++u) {
        Item it{p.id, p.label, units[u].location, std::nullopt, ""};
        try {
          Rng rng(derive_seed(derive_seed(o.seed, i), u));
          it.report = pipeline::score_automaton(units[u].automaton, b, so, rng);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kData) throw;
          it.error = e.what();
        }
        per_program[i].push_back(std::move(it));
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kData) throw;
      per_program[i].push_back({p.id, p.label, "", std::nullopt, e.what()});
    }
  });

  std::vector<double> scores;
  for (const auto& items : per_program) {
    for (const auto& it : items) {
      if (it.report) scores.push_back(it.report->score);
    }
  }
  const auto cutoffs = pipeline::decile_cutoffs(scores);
  const double top = cutoffs.empty() ? scorer::kInfinity : cutoffs.back();

  const json rc = run_config("score", o);
  std::ostringstream lines;
  lines << json{{"type", "run_config"}, {"run_config", rc}}.dump() << "\n";
  std::size_t n_errors = 0, n_flagged = 0;
  std::map<std::string, std::pair<std::size_t, std::size_t>> by_label;  // flagged, total
  for (const auto& items : per_program) {
    for (const auto& it : items) {
      json r = {{"id", it.id}, {"location", it.location}};
      if (!it.label.empty()) r["label"] = it.label;
      if (it.report) {
        const bool flagged = it.report->score >= top;
        r["type"] = "score";
        r["score"] = scorer::score_to_json(it.report->score);
        r["std_err"] = it.report->std_err;
        r["bias_total"] = it.report->bias_total;
        r["uncorrected"] = it.report->uncorrected;
        r["n_triples"] = it.report->n_triples;
        r["converged"] = it.report->converged;
        r["top10"] = flagged;
        n_flagged += flagged;
        auto& bl = by_label[it.label];
        bl.first += flagged;
        ++bl.second;
      } else {
        r["type"] = "error";
        r["error"] = it.error;
        ++n_errors;
      }
      lines << r.dump() << "\n";
    }
  }
  write_file(o.out, lines.str());

  json labels = json::object();
  for (const auto& [label, fc] : by_label) {
    if (!label.empty()) labels[label] = {{"flagged", fc.first}, {"total", fc.second}};
  }
  json summary = {{"run_config", rc},
                  {"scored", scores.size()},
                  {"errors", n_errors},
                  {"decile_cutoffs", cutoffs},
                  {"top10_cutoff", scorer::score_to_json(top)},
                  {"flagged", n_flagged},
                  {"labels", labels},
                  {"histogram", histogram(scores)}};
  write_file(o.out + ".summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_eval_mutation(const Options& o) {
  if (o.out.empty()) throw ConfigError("eval-mutation: --out is required");
  const scorer::ModelBundle b = load_bundle(o.bundle);
  const auto programs = filter_label(load_programs(o.programs).programs, o.only_label);
  json errors = json::array();
  const auto units = compile_all(programs, b.alphabet, o, errors);
  pipeline::MutationOptions mo;
  mo.score = score_options(o);
  mo.baseline_floor = o.baseline_floor;
  mo.jobs = o.jobs;
  const auto s = pipeline::eval_mutation(units, b, mo, o.seed);

  json rows = json::array();
  for (const auto& r : s.rows) {
    rows.push_back({{"id", r.id},
                    {"location", r.location},
                    {"before", r.before},
                    {"after", r.after},
                    {"identity", r.identity},
                    {"mutation", r.mutation}});
  }
  json out = {{"run_config", run_config("eval-mutation", o)},
              {"rows", rows},
              {"errors", errors},
              {"skipped_no_call", s.skipped},
              {"identity_mutations", s.identities},
              {"mean_relative_increase", s.mean_relative_increase},
              {"ratio_of_means", s.ratio_of_means}};
  write_file(o.out, out.dump(2) + "\n");
  std::cout << json{{"units", s.rows.size()},
                    {"identity_mutations", s.identities},
                    {"mean_relative_increase", s.mean_relative_increase},
                    {"ratio_of_means", s.ratio_of_means}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_eval_hetero(const Options& o) {
  if (o.out.empty()) throw ConfigError("eval-hetero: --out is required");
  if (o.bundles.size() < 2) throw ConfigError("eval-hetero: give at least two --bundle steps");
  if (o.baselines.size() != o.bundles.size()) {
    throw ConfigError("eval-hetero: give one --baseline per --bundle");
  }
  std::vector<scorer::ModelBundle> bayes, base;
  for (const auto& d : o.bundles) bayes.push_back(load_bundle(d));
  for (const auto& d : o.baselines) base.push_back(load_bundle(d));
  std::vector<std::pair<std::string, std::string>> programs;
  for (auto& p : filter_label(load_programs(o.programs).programs, o.only_label)) {
    programs.emplace_back(p.id, p.text);
  }
  pipeline::HeteroOptions ho;
  ho.score = score_options(o);
  ho.symexec = o.symexec;
  ho.baseline_floor = o.baseline_floor;
  ho.jobs = o.jobs;
  const auto steps = pipeline::eval_hetero(bayes, base, programs, ho, o.seed);

  json js = json::array();
  for (std::size_t s = 0; s < steps.size(); ++s) {
    json step = {{"bundle", o.bundles[s]},
                 {"baseline", o.baselines[s]},
                 {"bayes_scores", steps[s].bayes},
                 {"baseline_scores", steps[s].baseline}};
    if (s > 0) {
      step["bayes_relative_increase"] = steps[s].bayes_relative;
      step["baseline_relative_increase"] = steps[s].baseline_relative;
    }
    js.push_back(step);
  }
  json out = {{"run_config", run_config("eval-hetero", o)}, {"steps", js}};
  write_file(o.out, out.dump(2) + "\n");
  json curve = json::array();
  for (std::size_t s = 1; s < steps.size(); ++s) {
    curve.push_back({{"step", s},
                     {"bayes", steps[s].bayes_relative},
                     {"baseline", steps[s].baseline_relative}});
  }
  std::cout << curve.dump() << "\n";
  return 0;
}

int cmd_eval_knn(const Options& o) {
  if (o.out.empty()) throw ConfigError("eval-knn: --out is required");
  const ProgramSet train = load_programs(o.corpus);
  const ProgramSet test = load_programs(o.programs);
  std::optional<scorer::ModelBundle> bundle;
  if (!o.bundle.empty()) bundle = load_bundle(o.bundle);
  Alphabet alphabet;
  if (bundle) {
    alphabet = bundle->alphabet;
  } else if (train.alphabet) {
    alphabet = *train.alphabet;
  } else {
    auto all = train.programs;
    all.insert(all.end(), test.programs.begin(), test.programs.end());
    alphabet = alphabet_from_calls(all);
  }
  json errors = json::array();
  const auto corpus_units = compile_all(train.programs, alphabet, o, errors);
  const auto test_units =
      compile_all(filter_label(test.programs, o.only_label), alphabet, o, errors);
  if (corpus_units.empty()) throw DataError("eval-knn: corpus compiled to nothing");

  std::vector<Automaton> ca, ta;
  for (const auto& u : corpus_units) ca.push_back(u.automaton);
  for (const auto& u : test_units) ta.push_back(u.automaton);
  const auto s = pipeline::eval_knn(ca, ta, o.knn_k, o.score.cfg.walk, o.jobs);

  std::vector<std::optional<double>> bayes(test_units.size());
  if (bundle) {
    const auto so = score_options(o);
    pipeline::parallel_for(test_units.size(), o.jobs, [&](std::size_t i) {
      Rng rng(derive_seed(o.seed, i));
      bayes[i] = pipeline::score_automaton(test_units[i].automaton, *bundle, so, rng).score;
    });
  }
  json rows = json::array();
  std::size_t inf_with_finite_bayes = 0;
  for (std::size_t i = 0; i < test_units.size(); ++i) {
    json r = {{"id", test_units[i].id},
              {"location", test_units[i].location},
              {"knn", scorer::score_to_json(s.scores[i])}};
    if (bayes[i]) {
      r["bayes"] = scorer::score_to_json(*bayes[i]);
      inf_with_finite_bayes += std::isinf(s.scores[i]) && std::isfinite(*bayes[i]);
    }
    rows.push_back(r);
  }
  json summary = {{"units", test_units.size()},
                  {"k", o.knn_k},
                  {"fraction_infinite", s.fraction_infinite}};
  if (bundle) summary["infinite_with_finite_bayes"] = inf_with_finite_bayes;
  json out = {{"run_config", run_config("eval-knn", o)},
              {"rows", rows},
              {"errors", errors},
              {"summary", summary}};
  write_file(o.out, out.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Flags

void add_common(CLI::App* c, Options& o, bool seed_required) {
  auto* seed = c->add_option("--seed", o.seed, "Random seed");
  if (seed_required) seed->required();
  c->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
}

void add_symexec(CLI::App* c, Options& o) {
  c->add_option("--unroll-bound", o.symexec.unroll_bound, "Loop unroll bound")
      ->check(CLI::PositiveNumber);
  c->add_flag("--ignore-unknown", o.ignore_unknown,
              "Treat calls outside the alphabet as silent instead of failing the program");
  c->add_option("--only-label", o.only_label, "Use only programs with this corpus label");
}

void add_scoring(CLI::App* c, Options& o) {
  auto& cfg = o.score.cfg;
  c->add_flag("--exact", o.score.exact, "Enumerate behaviors instead of sampling");
  c->add_option("--runs", cfg.runs_per_triple, "Runs sampled per triple")
      ->check(CLI::PositiveNumber);
  c->add_option("--psis", cfg.psis_per_triple, "Topic draws per triple")
      ->check(CLI::PositiveNumber);
  c->add_option("--min-triples", cfg.min_triples, "Triples before the stopping rule applies");
  c->add_option("--max-triples", cfg.max_triples, "Triple budget")->check(CLI::PositiveNumber);
  c->add_option("--target-se", cfg.target_se, "Stop once the standard error is this small");
  c->add_option("--relative-se", cfg.relative_se,
                "Also stop once the standard error is this fraction of the score");
  c->add_option("--bootstrap", cfg.bootstrap_resamples, "Bootstrap resamples for the standard error");
  c->add_option("--bias-resamples", cfg.bias_resamples,
                "Bootstrap resamples for the bias terms (0: closed form)");
  c->add_option("--run-bias-max-ratio", cfg.run_bias_max_ratio,
                "Largest variance / mean^2 at which the run term is corrected");
  c->add_flag("--no-bias-correction", o.no_bias_correction, "Report the uncorrected estimate");
  c->add_option("--max-len", cfg.walk.max_len, "Run length budget");
}

void add_training(CLI::App* c, Options& o) {
  auto& t = o.train;
  c->add_option("--topics", t.lda.num_topics, "Number of topics")->check(CLI::PositiveNumber);
  c->add_option("--alpha", t.lda.alpha, "Document-topic prior");
  c->add_option("--eta", o.eta, "Topic-word prior (default 1/|alphabet|)");
  c->add_option("--lda-iters", t.lda.iterations, "Gibbs sweeps")->check(CLI::PositiveNumber);
  c->add_option("--hidden", t.hidden, "Hidden units")->check(CLI::PositiveNumber);
  c->add_option("--epochs", t.rnn.epochs, "Training epochs");
  c->add_option("--lr", t.rnn.learning_rate, "Learning rate");
  c->add_option("--clip-norm", t.rnn.clip_norm, "Gradient norm clip");
  c->add_option("--mode", o.mode, "Sequence scoring: normalized or conditional")
      ->check(CLI::IsMember({"normalized", "conditional"}));
  c->add_flag("--unconditioned", o.unconditioned, "Train without topic conditioning");
  c->add_option("--psi-draws", t.psi_draws, "Posterior topic draws per training record")
      ->check(CLI::PositiveNumber);
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kConfig:
      return 2;
    case ErrorKind::kData:
      return 3;
    case ErrorKind::kInternal:
      return 4;
  }
  return 4;
}

int run(int argc, char** argv) {
  CLI::App app{"Bayesian specification learning for API usage anomalies"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic program corpus");
  add_common(gen, o, false);
  gen->add_option("--patterns", o.patterns, "Pattern files or directories")->required();
  gen->add_option("-n,--count", o.count, "Number of programs")->required();
  gen->add_option("--out", o.out, "Output directory")->required();

  auto* extract = app.add_subcommand("extract", "Sample behaviors from a corpus");
  add_common(extract, o, false);
  add_symexec(extract, o);
  extract->add_option("--corpus", o.corpus, "Corpus directory")->required();
  extract->add_option("--out", o.out, "Training data file")->required();
  extract->add_option("--samples", o.samples, "Behaviors sampled per accept location")
      ->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "Train a model bundle");
  add_common(train, o, false);
  add_training(train, o);
  train->add_option("--data", o.data, "Training data files (merged)")->required();
  train->add_option("--out", o.out, "Bundle directory")->required();

  auto* score = app.add_subcommand("score", "Score programs against a bundle");
  add_common(score, o, false);
  add_symexec(score, o);
  add_scoring(score, o);
  score->add_option("--bundle", o.bundle, "Bundle directory")->required();
  score->add_option("--programs", o.programs, "Program directory or file")->required();
  score->add_option("--out", o.out, "Scores (JSON lines)")->required();

  auto* mut = app.add_subcommand("eval-mutation", "Score increase after mutating final calls");
  add_common(mut, o, true);
  add_symexec(mut, o);
  add_scoring(mut, o);
  mut->add_option("--bundle", o.bundle, "Bundle directory")->required();
  mut->add_option("--programs", o.programs, "Program directory")->required();
  mut->add_option("--out", o.out, "Result file")->required();
  mut->add_option("--floor", o.baseline_floor, "Lower clamp on scores before mutation");

  auto* het = app.add_subcommand("eval-hetero", "Score drift as the training corpus grows");
  add_common(het, o, true);
  add_symexec(het, o);
  add_scoring(het, o);
  het->add_option("--bundle", o.bundles, "Topic-conditioned bundle per step, in order")
      ->required();
  het->add_option("--baseline", o.baselines, "Unconditioned bundle per step, in order")
      ->required();
  het->add_option("--programs", o.programs, "Test programs")->required();
  het->add_option("--out", o.out, "Result file")->required();
  het->add_option("--floor", o.baseline_floor, "Lower clamp on previous-step scores");

  auto* knn = app.add_subcommand("eval-knn", "Nearest-neighbour KL scores");
  add_common(knn, o, true);
  add_symexec(knn, o);
  add_scoring(knn, o);
  knn->add_option("--corpus", o.corpus, "Reference programs")->required();
  knn->add_option("--programs", o.programs, "Test programs")->required();
  knn->add_option("--out", o.out, "Result file")->required();
  knn->add_option("-k", o.knn_k, "Neighbours")->check(CLI::PositiveNumber);
  knn->add_option("--bundle", o.bundle, "Also report Bayesian scores from this bundle");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_corpus(o);
    if (*extract) return cmd_extract(o);
    if (*train) return cmd_train(o);
    if (*score) return cmd_score(o);
    if (*mut) return cmd_eval_mutation(o);
    if (*het) return cmd_eval_hetero(o);
    if (*knn) return cmd_eval_knn(o);
  } catch (const Error& e) {
    std::cerr << "bayesspec: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "bayesspec: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "bayesspec: internal error: " << e.what() << "\n";
    return 4;
  }
  return 2;
}

}  // namespace
}  // namespace bayesspec::cli

int main(int argc, char** argv) { return bayesspec::cli::run(argc, argv); }
