#ifndef RISKSEQ_COMMANDS_HPP
#define RISKSEQ_COMMANDS_HPP

// The riskseq command line. run_cli() parses, dispatches and maps errors to
// exit codes, so the tool's main() is a one-liner and tests can drive it.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "riskseq/attribution.hpp"
#include "riskseq/baseline.hpp"
#include "riskseq/checkpoint.hpp"
#include "riskseq/cohort.hpp"
#include "riskseq/csv.hpp"
#include "riskseq/error.hpp"
#include "riskseq/evaluation.hpp"
#include "riskseq/preprocess.hpp"
#include "riskseq/run_manifest.hpp"
#include "riskseq/synth.hpp"
#include "riskseq/toml.hpp"
#include "riskseq/training.hpp"

namespace riskseq::cli {

namespace fs = std::filesystem;

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline std::string sibling(const std::string& file, const std::string& name) {
  const fs::path dir = fs::path(file).parent_path();
  return (dir.empty() ? fs::path(name) : dir / name).string();
}

inline std::string with_suffix(const std::string& file, const std::string& suffix) {
  fs::path p(file);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

inline void ensure_parent(const std::string& file) {
  const fs::path dir = fs::path(file).parent_path();
  if (!dir.empty()) fs::create_directories(dir);
}

struct DataDir {
  std::shared_ptr<const FeatureSchema> schema;
  Cohort cohort;
  CohortPaths paths;
  std::string schema_path;
};

/// Loads DIR/schema.json and the cohort files; series.csv only when needed.
inline DataDir load_data_dir(const std::string& dir, bool need_series) {
  DataDir d;
  d.schema_path = (fs::path(dir) / "schema.json").string();
  if (!fs::exists(d.schema_path)) throw DataError("data directory '" + dir + "' has no schema.json");
  d.schema = std::make_shared<const FeatureSchema>(load_schema(d.schema_path));
  d.paths = CohortPaths::in_directory(dir);
  if (need_series && !fs::exists(d.paths.series_csv))
    throw DataError("this phase needs intraoperative data but " + d.paths.series_csv +
                    " does not exist; supply series.csv or use --phase preop");
  if (!need_series) d.paths.series_csv.clear();
  d.cohort = load_cohort(d.schema, d.paths);
  return d;
}

inline void add_data_inputs(RunManifest& m, const DataDir& d) {
  m.add_input(d.schema_path);
  m.add_input(d.paths.static_csv);
  if (!d.paths.series_csv.empty()) m.add_input(d.paths.series_csv);
  m.add_input(d.paths.outcomes_csv);
}

inline TimePoint resolve_cutoff(const Cohort& c, const std::string& cutoff) {
  return cutoff.empty() ? chronological_quantile(c, 0.8) : parse_iso8601(cutoff);
}

inline Cohort select_split(const Cohort& c, const std::string& split, TimePoint cutoff) {
  auto [dev, val] = split_chronological(c, cutoff);
  if (split == "validation") return val;
  if (split == "development") return dev;
  if (split == "all") return c;
  throw ConfigError("unknown split '" + split + "' (expected validation, development or all)");
}

inline void finish(RunManifest& m, const std::string& path, std::chrono::steady_clock::time_point t0) {
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ensure_parent(path);
  write_json(manifest_to_json(m), path);
}

inline RunManifest start_manifest(const std::string& command, const std::vector<std::string>& argv) {
  RunManifest m;
  m.command = command;
  m.argv = argv;
  m.cwd = fs::current_path().string();
  return m;
}

// ---- scores files ---------------------------------------------------------------

struct ScoreTable {
  std::vector<std::string> ids;
  std::vector<std::string> outcomes;
  std::vector<std::vector<double>> scores;  // [outcome][row]
};

inline void write_scores(const ScoreTable& t, const std::string& path) {
  csv::Writer w(path);
  std::vector<std::string> header{"encounter_id"};
  header.insert(header.end(), t.outcomes.begin(), t.outcomes.end());
  w.row(header);
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    std::vector<std::string> row{t.ids[i]};
    for (const auto& col : t.scores) row.push_back(csv::format_double(col[i]));
    w.row(row);
  }
}

inline ScoreTable read_scores(const std::string& path) {
  const csv::Table tab = csv::read_table(path);
  const std::size_t id = tab.require_column("encounter_id");
  ScoreTable t;
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < tab.header.size(); ++c)
    if (c != id) {
      t.outcomes.push_back(tab.header[c]);
      cols.push_back(c);
    }
  t.scores.assign(cols.size(), {});
  for (std::size_t r = 0; r < tab.rows.size(); ++r) {
    t.ids.push_back(tab.rows[r][id]);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const auto v = csv::parse_double(tab.rows[r][cols[k]]);
      if (!v) throw DataError(path + ":" + std::to_string(r + 2) + ": score is not a number");
      t.scores[k].push_back(*v);
    }
  }
  return t;
}

// ---- commands ---------------------------------------------------------------------

struct SynthOptions {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
};

inline int cmd_synth(const SynthOptions& o, const std::vector<std::string>& argv, Streams io) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest m = start_manifest("synth", argv);
  SynthSpec spec = synth_spec_from_json(toml::parse_file(o.spec));
  if (o.seed) spec.seed = *o.seed;
  const SynthResult r = generate(spec);
  write_synth(r, o.out);
  m.config_path = o.spec;
  m.config_sha256 = sha256_file(o.spec);
  m.seed = spec.seed;
  for (const char* f : {"schema.json", "static.csv", "series.csv", "outcomes.csv", "ground_truth.csv"}) {
    const std::string p = (fs::path(o.out) / f).string();
    if (fs::exists(p)) m.add_output(p);
  }
  const auto oracle = oracle_auroc(r.truth, r.cohort);
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t k = 0; k < r.truth.outcomes.size(); ++k)
    per[r.truth.outcomes[k]] = {{"intercept", r.truth.intercepts[k]},
                                {"realized_prevalence", r.truth.realized_prevalence[k]},
                                {"oracle_auroc", oracle[k]}};
  m.extra = {{"n", spec.n}, {"spec", synth_spec_to_json(spec)}, {"outcomes", per}};
  finish(m, (fs::path(o.out) / "manifest.json").string(), t0);
  io.out << "synth: wrote " << spec.n << " encounters to " << o.out << '\n';
  return 0;
}

struct TrainOptions {
  std::string data, phase = "postop", task_mode = "multitask", config, out, cutoff;
  std::optional<std::uint64_t> seed;
};

inline int cmd_train(const TrainOptions& o, const std::vector<std::string>& argv, Streams io) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest m = start_manifest("train", argv);
  const Phase phase = parse_phase(o.phase);
  TrainConfig cfg;
  if (!o.config.empty()) {
    cfg = train_config_from_json(toml::parse_file(o.config));
    m.config_path = o.config;
    m.config_sha256 = sha256_file(o.config);
  }
  if (o.seed) cfg.seed = *o.seed;
  cfg.model.phase = phase;
  const DataDir d = load_data_dir(o.data, uses_series(phase));
  if (o.task_mode == "multitask") {
    cfg.model.single_task.reset();
  } else if (o.task_mode.rfind("single:", 0) == 0) {
    const std::string name = o.task_mode.substr(7);
    const auto k = d.schema->outcome_index(name);
    if (!k) throw ConfigError("--task-mode names unknown outcome '" + name + "'");
    cfg.model.single_task = *k;
  } else {
    throw ConfigError("--task-mode must be 'multitask' or 'single:NAME'");
  }
  cfg.validate();
  const TimePoint cutoff = resolve_cutoff(d.cohort, o.cutoff);
  const auto [dev, val] = split_chronological(d.cohort, cutoff);
  const PreprocessorState pre = fit(dev, *d.schema);
  const TrainResult r = train(dev, *d.schema, pre, cfg);

  ensure_parent(o.out);
  save_checkpoint(r.model, schema_hash(*d.schema), o.out);
  const std::string pre_path = sibling(o.out, "preprocessor.json");
  const std::string hist_path = sibling(o.out, "history.json");
  save_state(pre, pre_path);
  std::vector<std::string> names;
  for (const auto& s : d.schema->outcomes) names.push_back(s);
  nlohmann::json hist = history_to_json(r.history, names);
  hist["train_config"] = train_config_to_json(cfg);
  write_json(hist, hist_path);

  add_data_inputs(m, d);
  if (!o.config.empty()) m.add_input(o.config);
  m.seed = cfg.seed;
  m.add_output(o.out);
  m.add_output(pre_path);
  m.add_output(hist_path, false);  // per-epoch wall times
  m.extra = {{"cutoff", format_iso8601(cutoff)},
             {"development", dev.size()},
             {"validation", val.size()},
             {"epochs", r.history.epochs.size()},
             {"best_epoch", r.history.best_epoch}};
  finish(m, with_suffix(o.out, ".manifest.json"), t0);
  io.out << "train: " << phase_name(phase) << " " << o.task_mode << ", " << r.history.epochs.size()
         << " epochs, best " << r.history.best_epoch << ", wrote " << o.out << '\n';
  return 0;
}

struct EvaluateOptions {
  std::string model, data, split = "validation", out, cutoff, preprocessor, scores;
  std::size_t bootstrap = 1000;
  std::uint64_t seed = 0;
};

inline bool is_baseline_file(const std::string& path) { return fs::path(path).extension() == ".json"; }

/// Validation-style scores from a checkpoint or baseline file.
inline ScoreTable score_model(const std::string& model_path, const std::string& preprocessor_path,
                              const Cohort& cohort, nlohmann::json& model_info) {
  const FeatureSchema& schema = *cohort.schema;
  ScoreTable t;
  for (const auto& e : cohort.encounters) t.ids.push_back(e.id);
  if (is_baseline_file(model_path)) {
    const LogisticModel lm = load_baseline(model_path);
    if (lm.schema_hash != schema_hash(schema))
      throw ConfigError(model_path + ": schema hash mismatch (model " + lm.schema_hash + ", data " +
                        schema_hash(schema) + ")");
    const Tensor X = design_matrix(cohort, lm.preprocessor, lm.design);
    for (const auto& task : lm.tasks) {
      t.outcomes.push_back(task.outcome);
      t.scores.push_back(predict_logistic(task, X));
    }
    model_info = {{"kind", "baseline"}, {"phase", phase_name(lm.design.phase)}, {"mode", "per-outcome"}};
    return t;
  }
  const Checkpoint ck = load_checkpoint(model_path, schema_hash(schema));
  const std::string pp = preprocessor_path.empty() ? sibling(model_path, "preprocessor.json") : preprocessor_path;
  const PreprocessorState pre = load_state(pp);
  check_compatible(pre, schema);
  const bool series = uses_series(ck.model.config.phase);
  std::vector<EncodedEncounter> enc(cohort.size());
  parallel_for(cohort.size(), [&](std::size_t i) { enc[i] = encode(cohort.encounters[i], pre, schema, series); });
  const auto probs = predict_all(ck.model, enc);
  const auto tasks = ck.model.config.active_tasks();
  for (std::size_t j = 0; j < tasks.size(); ++j) {
    t.outcomes.push_back(schema.outcomes[tasks[j]]);
    std::vector<double> col;
    for (const auto& p : probs) col.push_back(p[j]);
    t.scores.push_back(std::move(col));
  }
  model_info = {{"kind", "deep"},
                {"phase", phase_name(ck.model.config.phase)},
                {"mode", ck.model.config.single_task ? "single" : "multitask"}};
  return t;
}

inline int cmd_evaluate(const EvaluateOptions& o, const std::vector<std::string>& argv, Streams io) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest m = start_manifest("evaluate", argv);
  if (o.bootstrap == 1) throw ConfigError("--bootstrap must be 0 or at least 2");
  const bool need_series = [&] {
    if (is_baseline_file(o.model)) return uses_series(load_baseline(o.model).design.phase);
    return uses_series(load_checkpoint(o.model).model.config.phase);
  }();
  const DataDir d = load_data_dir(o.data, need_series);
  const TimePoint cutoff = resolve_cutoff(d.cohort, o.cutoff);
  const Cohort part = select_split(d.cohort, o.split, cutoff);
  if (part.empty()) throw DataError("the " + o.split + " split is empty");
  nlohmann::json info;
  const ScoreTable t = score_model(o.model, o.preprocessor, part, info);
  info["path"] = o.model;

  nlohmann::json outcomes = nlohmann::json::object();
  for (std::size_t j = 0; j < t.outcomes.size(); ++j) {
    const std::size_t k = *d.schema->outcome_index(t.outcomes[j]);
    std::vector<int> y;
    for (const auto& e : part.encounters) y.push_back(e.outcomes[k]);
    const OutcomeReport r = evaluate_outcome(t.outcomes[j], t.scores[j], y, o.bootstrap, derive_seed(o.seed, k));
    outcomes[t.outcomes[j]] = outcome_report_to_json(r);
  }
  nlohmann::json report{{"schema_version", kMetricsSchemaVersion},
                        {"model", info},
                        {"split", o.split},
                        {"cutoff", format_iso8601(cutoff)},
                        {"n", part.size()},
                        {"bootstrap", {{"resamples", o.bootstrap}, {"seed", o.seed}, {"method", "percentile"}}},
                        {"outcomes", outcomes}};
  ensure_parent(o.out);
  write_json(report, o.out);
  const std::string scores_path = o.scores.empty() ? with_suffix(o.out, ".scores.csv") : o.scores;
  write_scores(t, scores_path);

  add_data_inputs(m, d);
  m.add_input(o.model);
  if (!is_baseline_file(o.model))
    m.add_input(o.preprocessor.empty() ? sibling(o.model, "preprocessor.json") : o.preprocessor);
  m.seed = o.seed;
  m.add_output(o.out);
  m.add_output(scores_path);
  finish(m, with_suffix(o.out, ".manifest.json"), t0);
  io.out << "evaluate: " << t.outcomes.size() << " outcome(s) on " << part.size() << " encounters, wrote " << o.out
         << '\n';
  return 0;
}

struct NriOptions {
  std::string old_scores, new_scores, labels, out;
  std::size_t bootstrap = 1000;
  std::uint64_t seed = 0;
};

inline int cmd_nri(const NriOptions& o, const std::vector<std::string>& argv, Streams io) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest m = start_manifest("nri", argv);
  const ScoreTable a = read_scores(o.old_scores), b = read_scores(o.new_scores);
  const csv::Table lab = csv::read_table(o.labels);
  const std::size_t lid = lab.require_column("encounter_id");
  std::map<std::string, std::size_t> lrow, brow;
  for (std::size_t r = 0; r < lab.rows.size(); ++r) lrow[lab.rows[r][lid]] = r;
  for (std::size_t r = 0; r < b.ids.size(); ++r) brow[b.ids[r]] = r;
  if (a.ids.size() != b.ids.size()) throw DataError("old and new score files cover different encounters");

  nlohmann::json outcomes = nlohmann::json::object();
  for (std::size_t ka = 0; ka < a.outcomes.size(); ++ka) {
    const std::string& name = a.outcomes[ka];
    const auto kb = std::find(b.outcomes.begin(), b.outcomes.end(), name);
    if (kb == b.outcomes.end()) continue;
    const std::size_t lc = lab.require_column(name);
    std::vector<double> so, sn;
    std::vector<int> y;
    for (std::size_t r = 0; r < a.ids.size(); ++r) {
      const auto il = lrow.find(a.ids[r]);
      const auto ib = brow.find(a.ids[r]);
      if (il == lrow.end() || ib == brow.end())
        throw DataError("encounter '" + a.ids[r] + "' is missing from the labels or the new scores");
      so.push_back(a.scores[ka][r]);
      sn.push_back(b.scores[static_cast<std::size_t>(kb - b.outcomes.begin())][ib->second]);
      const auto v = csv::parse_int(lab.rows[il->second][lc]);
      if (!v || (*v != 0 && *v != 1)) throw DataError(o.labels + ": label for '" + a.ids[r] + "' must be 0 or 1");
      y.push_back(static_cast<int>(*v));
    }
    const YoudenResult to = youden_threshold(so, y), tn = youden_threshold(sn, y);
    const std::size_t k = static_cast<std::size_t>(&name - a.outcomes.data());
    nlohmann::json j = nri_to_json(nri(so, sn, y, to.threshold, tn.threshold, o.bootstrap, derive_seed(o.seed, k)));
    j.erase("schema_version");
    j["old_threshold"] = std::isfinite(to.threshold) ? nlohmann::json(to.threshold) : nlohmann::json(nullptr);
    j["new_threshold"] = std::isfinite(tn.threshold) ? nlohmann::json(tn.threshold) : nlohmann::json(nullptr);
    outcomes[name] = j;
  }
  if (outcomes.empty()) throw DataError("old and new score files share no outcome columns");
  const nlohmann::json report{{"schema_version", kMetricsSchemaVersion},
                              {"old", o.old_scores},
                              {"new", o.new_scores},
                              {"thresholds", "Youden index of each model on these labels"},
                              {"bootstrap", {{"resamples", o.bootstrap}, {"seed", o.seed}}},
                              {"outcomes", outcomes}};
  ensure_parent(o.out);
  write_json(report, o.out);
  m.add_input(o.old_scores);
  m.add_input(o.new_scores);
  m.add_input(o.labels);
  m.seed = o.seed;
  m.add_output(o.out);
  finish(m, with_suffix(o.out, ".manifest.json"), t0);
  io.out << "nri: " << outcomes.size() << " outcome(s), wrote " << o.out << '\n';
  return 0;
}

struct AttributeOptions {
  std::string model, data, outcome, out, split = "validation", cutoff, preprocessor;
  std::size_t steps = kDefaultIgSteps, top = 20, limit = 0;
};

inline int cmd_attribute(const AttributeOptions& o, const std::vector<std::string>& argv, Streams io) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest m = start_manifest("attribute", argv);
  if (o.steps < 1) throw ConfigError("--steps must be at least 1");
  const DataDir d = load_data_dir(o.data, true);
  const Checkpoint ck = load_checkpoint(o.model, schema_hash(*d.schema));
  require_phase(ck.model, Phase::postop);
  const auto k = d.schema->outcome_index(o.outcome);
  if (!k) throw ConfigError("unknown outcome '" + o.outcome + "'");
  const std::string pp = o.preprocessor.empty() ? sibling(o.model, "preprocessor.json") : o.preprocessor;
  const PreprocessorState pre = load_state(pp);
  Cohort part = select_split(d.cohort, o.split, resolve_cutoff(d.cohort, o.cutoff));
  if (o.limit > 0 && part.size() > o.limit) part.encounters.resize(o.limit);
  if (part.empty()) throw DataError("the " + o.split + " split is empty");
  const auto enc = encode_cohort(part, pre);
  const auto results = attribute_cohort(ck.model, *d.schema, enc, *k, o.steps);
  const auto ranking = rank_features(results, o.top);

  fs::create_directories(o.out);
  const std::string attr_path = (fs::path(o.out) / "attributions.csv").string();
  const std::string rank_path = (fs::path(o.out) / ("ranking_" + o.outcome + ".csv")).string();
  write_attributions_csv(results, attr_path);
  write_ranking_csv(ranking, o.outcome, rank_path);
  double worst_gap = 0.0;
  for (const auto& r : results) worst_gap = std::max(worst_gap, std::abs(r.completeness_gap));

  add_data_inputs(m, d);
  m.add_input(o.model);
  m.add_input(pp);
  m.add_output(attr_path);
  m.add_output(rank_path);
  m.extra = {{"outcome", o.outcome}, {"steps", o.steps}, {"encounters", results.size()},
             {"max_abs_completeness_gap", worst_gap}, {"attributed", "pre-sigmoid logit"}};
  finish(m, (fs::path(o.out) / "manifest.json").string(), t0);
  io.out << "attribute: " << results.size() << " encounters, top feature '" << ranking.front().feature << "', wrote "
         << o.out << '\n';
  return 0;
}

struct BaselineOptions {
  std::string data, phase = "postop", out, config, cutoff;
};

inline BaselineConfig baseline_config_from_json(const nlohmann::json& j) {
  BaselineConfig c;
  try {
    c.l2 = j.value("l2", c.l2);
    c.tol = j.value("tol", c.tol);
    c.max_iter = j.value("max_iter", c.max_iter);
    c.pool_min_count = j.value("pool_min_count", c.pool_min_count);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("baseline config: ") + e.what());
  }
  if (c.l2 < 0.0 || !(c.tol > 0.0) || c.max_iter == 0) throw ConfigError("baseline config: need l2 >= 0, tol > 0, max_iter > 0");
  return c;
}

inline int cmd_baseline(const BaselineOptions& o, const std::vector<std::string>& argv, Streams io) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest m = start_manifest("baseline", argv);
  const Phase phase = parse_phase(o.phase);
  BaselineConfig cfg;
  if (!o.config.empty()) {
    cfg = baseline_config_from_json(toml::parse_file(o.config));
    m.config_path = o.config;
    m.config_sha256 = sha256_file(o.config);
    m.add_input(o.config);
  }
  const DataDir d = load_data_dir(o.data, uses_series(phase));
  const TimePoint cutoff = resolve_cutoff(d.cohort, o.cutoff);
  const auto [dev, val] = split_chronological(d.cohort, cutoff);
  const PreprocessorState pre = fit(dev, *d.schema);
  const LogisticModel lm = train_baseline(dev, phase, pre, cfg);
  for (const auto& t : lm.tasks)
    if (!t.converged)
      io.err << "riskseq: warning: baseline '" << t.outcome << "' stopped after " << t.iterations
             << " iterations with gradient norm " << t.grad_norm << '\n';
  ensure_parent(o.out);
  save_baseline(lm, o.out);
  add_data_inputs(m, d);
  m.add_output(o.out);
  m.extra = {{"cutoff", format_iso8601(cutoff)}, {"development", dev.size()}, {"width", lm.design.columns.size()}};
  finish(m, with_suffix(o.out, ".manifest.json"), t0);
  io.out << "baseline: " << phase_name(phase) << ", " << lm.design.columns.size() << " columns, wrote " << o.out << '\n';
  return 0;
}

inline int cmd_inspect(const std::string& path, Streams io) {
  nlohmann::json j;
  if (fs::is_directory(path)) {
    const DataDir d = load_data_dir(path, fs::exists(fs::path(path) / "series.csv"));
    std::vector<double> prevalence(d.schema->outcomes.size(), 0.0);
    for (const auto& e : d.cohort.encounters)
      for (std::size_t k = 0; k < prevalence.size(); ++k) prevalence[k] += e.outcomes[k];
    nlohmann::json prev = nlohmann::json::object();
    for (std::size_t k = 0; k < prevalence.size(); ++k)
      prev[d.schema->outcomes[k]] = prevalence[k] / static_cast<double>(std::max<std::size_t>(1, d.cohort.size()));
    j = {{"kind", "data"},
         {"encounters", d.cohort.size()},
         {"schema_hash", schema_hash(*d.schema)},
         {"features", d.schema->features.size()},
         {"numeric_width", d.schema->numeric_width()},
         {"series_width", d.schema->series_width()},
         {"unknown_levels", d.cohort.report.unknown_levels},
         {"prevalence", prev}};
  } else if (is_baseline_file(path)) {
    const LogisticModel lm = load_baseline(path);
    j = {{"kind", "baseline"}, {"phase", phase_name(lm.design.phase)}, {"width", lm.design.columns.size()},
         {"tasks", lm.tasks.size()}, {"schema_hash", lm.schema_hash}};
  } else {
    const Checkpoint ck = load_checkpoint(path);
    j = {{"kind", "checkpoint"},
         {"config", config_to_json(ck.model.config)},
         {"schema_hash", ck.schema_hash},
         {"branches", ck.manifest.at("branches")},
         {"parameters", parameter_count(ck.model)},
         {"tensors", ck.model.params.size()}};
  }
  io.out << j.dump(2) << '\n';
  return 0;
}

// ---- reproduce --------------------------------------------------------------------

// Built-in experiment: a reduced schema so the full grid fits a desk budget.
inline constexpr const char* kReproduceSpec = R"(n = 2000
seed = 11
start = "2015-01-01"
span_days = 1000
missing_rate = 0.05
channel_dropout = 0.05

[schema]
continuous = 16
binary = 6
small_nominals = 3
embedded_levels = [40]

[duration]
median = 40
sigma = 0.4
min = 20
max = 90

[latent]
cont_000 = 1.0
cont_001 = 1.0
cont_002 = 1.0

[missingness]
cont_010 = 0.4

[[outcome]]
name = "icu_stay_48h"
prevalence = 0.2
noise = 0.5
latent_loading = 1.5
linear = { cont_003 = 1.0, bin_000 = 0.5 }

[[outcome]]
name = "mv_48h"
prevalence = 0.12
noise = 0.5
latent_loading = 1.5
series = [{ channel = "spo2", stat = "level", weight = -1.5 }]

[[outcome]]
name = "neuro_delirium"
prevalence = 0.1
noise = 0.5
linear = { cont_004 = 1.2 }
series = [{ channel = "heart_rate", stat = "late_slope", weight = 1.0 }]

[[outcome]]
name = "sepsis"
prevalence = 0.08
noise = 0.5
interaction = [{ a = "cont_005", b = "cont_006", weight = 2.5 }]

[[outcome]]
name = "aki"
prevalence = 0.15
noise = 0.5
latent_loading = 1.0
linear = { cont_007 = 1.0 }

[[outcome]]
name = "cardiovascular"
prevalence = 0.1
noise = 0.5
series = [{ channel = "systolic_bp", stat = "level", weight = -1.2 }]
linear = { cont_008 = 0.8 }

[[outcome]]
name = "vte"
prevalence = 0.06
noise = 0.5
latent_loading = 1.5

[[outcome]]
name = "wound"
prevalence = 0.1
noise = 0.5
mask = { cont_010 = 2.0 }
linear = { cont_009 = 0.8 }

[[outcome]]
name = "mortality"
prevalence = 0.05
noise = 0.5
latent_loading = 1.5
linear = { cont_011 = 0.8 }
)";

inline constexpr const char* kReproduceTrainConfig = R"(batch = 32
patience = 3
max_epochs = 12
seed = 5

[model]
embed_dim = 4
hidden = 16
conv_layers = 7
conv_channels = 8
)";

struct ReproduceOptions {
  bool all = false;
  std::string out, spec, config, baseline_config;
  std::size_t bootstrap = 200;
  std::uint64_t seed = 0;
};

using Runner = std::function<int(const std::vector<std::string>&)>;

inline int cmd_reproduce(const ReproduceOptions& o, const std::vector<std::string>& argv, Streams io,
                         const Runner& run) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!o.all) throw ConfigError("reproduce needs --all (the full grid is the only mode)");
  RunManifest m = start_manifest("reproduce", argv);
  const fs::path out(o.out);
  fs::create_directories(out);
  auto path = [&](const fs::path& rel) { return (out / rel).string(); };

  std::string spec = o.spec, config = o.config;
  if (spec.empty()) {
    spec = path("synth.toml");
    std::ofstream(spec, std::ios::binary) << kReproduceSpec;
  }
  if (config.empty()) {
    config = path("train.toml");
    std::ofstream(config, std::ios::binary) << kReproduceTrainConfig;
  }
  m.add_input(spec);
  m.add_input(config);
  m.seed = o.seed;
  const std::string data = path("data");
  const std::string seed = std::to_string(o.seed), boot = std::to_string(o.bootstrap);
  auto check = [&](const std::vector<std::string>& args) {
    const int rc = run(args);
    if (rc != 0) throw NumericError("reproduce: step '" + args.front() + "' failed with exit code " + std::to_string(rc));
  };
  check({"synth", "--spec", spec, "--out", data, "--seed", seed});
  const FeatureSchema schema = load_schema(path("data/schema.json"));

  struct Row {
    std::string model, metrics;
    std::optional<std::size_t> only;  // single-task models cover one outcome
  };
  std::vector<Row> rows;
  std::vector<std::string> sub_manifests{path("data/manifest.json")};
  auto evaluate = [&](const std::string& model, const std::string& metrics) {
    check({"evaluate", "--model", model, "--data", data, "--split", "validation", "--bootstrap", boot, "--seed", seed,
           "--out", metrics});
    sub_manifests.push_back(with_suffix(metrics, ".manifest.json"));
  };
  for (const char* phase : {"preop", "intraop", "postop"}) {
    const std::string p = phase;
    {
      const std::string dir = path("models/baseline_" + p);
      std::vector<std::string> args{"baseline", "--data", data, "--phase", p, "--out", dir + "/baseline.json"};
      if (!o.baseline_config.empty()) args.insert(args.end(), {"--config", o.baseline_config});
      check(args);
      sub_manifests.push_back(dir + "/baseline.manifest.json");
      evaluate(dir + "/baseline.json", dir + "/metrics.json");
      rows.push_back({"logistic_" + p, dir + "/metrics.json", std::nullopt});
    }
    {
      const std::string dir = path("models/deep_" + p + "_multitask");
      check({"train", "--data", data, "--phase", p, "--task-mode", "multitask", "--config", config, "--out",
             dir + "/model.ckpt"});
      sub_manifests.push_back(dir + "/model.manifest.json");
      evaluate(dir + "/model.ckpt", dir + "/metrics.json");
      rows.push_back({"deep_" + p + "_multitask", dir + "/metrics.json", std::nullopt});
    }
    for (std::size_t k = 0; k < schema.outcomes.size(); ++k) {
      const std::string dir = path("models/deep_" + p + "_single/" + schema.outcomes[k]);
      check({"train", "--data", data, "--phase", p, "--task-mode", "single:" + schema.outcomes[k], "--config", config,
             "--out", dir + "/model.ckpt"});
      sub_manifests.push_back(dir + "/model.manifest.json");
      evaluate(dir + "/model.ckpt", dir + "/metrics.json");
      rows.push_back({"deep_" + p + "_single", dir + "/metrics.json", k});
    }
  }
  check({"nri", "--old", path("models/deep_preop_multitask/metrics.scores.csv"), "--new",
         path("models/deep_postop_multitask/metrics.scores.csv"), "--labels", path("data/outcomes.csv"), "--bootstrap",
         boot, "--seed", seed, "--out", path("nri_postop_vs_preop.json")});
  sub_manifests.push_back(path("nri_postop_vs_preop.manifest.json"));

  // One row per (outcome, model), point (ci_lo-ci_hi) per metric.
  const std::string table_csv = path("comparison.csv"), table_md = path("comparison.md"), report_json = path("report.json");
  nlohmann::json report = nlohmann::json::array();
  {
    csv::Writer w(table_csv);
    std::vector<std::string> header{"outcome", "model"};
    for (const auto& mn : metric_names()) {
      header.push_back(mn);
      header.push_back(mn + "_ci_lo");
      header.push_back(mn + "_ci_hi");
    }
    w.row(header);
    std::ofstream md(table_md, std::ios::binary);
    md << "| outcome | model |";
    for (const auto& mn : metric_names()) md << ' ' << mn << " |";
    md << "\n|---|---|";
    for (std::size_t i = 0; i < metric_names().size(); ++i) md << "---|";
    md << '\n';
    auto fmt = [](const nlohmann::json& v) {
      if (v.is_null()) return std::string("NA");
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", v.get<double>());
      return std::string(buf);
    };
    for (const auto& outcome : schema.outcomes) {
      const std::size_t k = *schema.outcome_index(outcome);
      for (const auto& row : rows) {
        if (row.only && *row.only != k) continue;
        const nlohmann::json mj = read_json(row.metrics).at("outcomes").at(outcome).at("metrics");
        std::vector<std::string> line{outcome, row.model};
        md << "| " << outcome << " | " << row.model << " |";
        nlohmann::json entry{{"outcome", outcome}, {"model", row.model}};
        for (const auto& mn : metric_names()) {
          const auto& e = mj.at(mn);
          const nlohmann::json lo = e.value("ci_lo", nlohmann::json(nullptr));
          const nlohmann::json hi = e.value("ci_hi", nlohmann::json(nullptr));
          line.push_back(e.at("point").is_null() ? "" : csv::format_double(e.at("point").get<double>()));
          line.push_back(lo.is_null() ? "" : csv::format_double(lo.get<double>()));
          line.push_back(hi.is_null() ? "" : csv::format_double(hi.get<double>()));
          md << ' ' << fmt(e.at("point"));
          if (!lo.is_null()) md << " (" << fmt(lo) << '-' << fmt(hi) << ')';
          md << " |";
          entry[mn] = {{"point", e.at("point")}, {"ci_lo", lo}, {"ci_hi", hi}};
        }
        md << '\n';
        w.row(line);
        report.push_back(entry);
      }
    }
  }
  write_json({{"schema_version", kMetricsSchemaVersion}, {"rows", report}}, report_json);
  m.add_output(table_csv);
  m.add_output(table_md);
  m.add_output(report_json);
  m.extra = {{"sub_manifests", sub_manifests}, {"models", rows.size()}};
  finish(m, path("manifest.json"), t0);
  io.out << "reproduce: " << report.size() << " table rows, wrote " << o.out << '\n';
  return 0;
}

// ---- dispatch ---------------------------------------------------------------------

/// Runs one command line (without the program name). Returns the exit code.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Streams io{out, err};
  CLI::App app{"riskseq: perioperative multi-task risk models on synthetic or real cohorts", "riskseq"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort with planted signal");
  synth->add_option("--spec", so.spec, "synth.toml")->required();
  synth->add_option("--out", so.out, "output directory")->required();
  synth->add_option("--seed", so.seed, "overrides the spec seed");

  TrainOptions to;
  auto* train_cmd = app.add_subcommand("train", "fit the preprocessor and a deep model on the development split");
  train_cmd->add_option("--data", to.data)->required();
  train_cmd->add_option("--phase", to.phase)->check(CLI::IsMember({"preop", "intraop", "postop"}));
  train_cmd->add_option("--task-mode", to.task_mode, "multitask or single:NAME");
  train_cmd->add_option("--config", to.config, "train.toml");
  train_cmd->add_option("--out", to.out, "model.ckpt")->required();
  train_cmd->add_option("--cutoff", to.cutoff, "ISO date; default puts 80% of encounters in development");
  train_cmd->add_option("--seed", to.seed, "overrides the config seed");

  EvaluateOptions eo;
  auto* eval = app.add_subcommand("evaluate", "metrics with bootstrap confidence intervals");
  eval->add_option("--model", eo.model, "model.ckpt or baseline .json")->required();
  eval->add_option("--data", eo.data)->required();
  eval->add_option("--split", eo.split)->check(CLI::IsMember({"validation", "development", "all"}));
  eval->add_option("--bootstrap", eo.bootstrap, "resamples; 0 gives point estimates only");
  eval->add_option("--seed", eo.seed);
  eval->add_option("--out", eo.out, "metrics.json")->required();
  eval->add_option("--cutoff", eo.cutoff);
  eval->add_option("--preprocessor", eo.preprocessor, "default: preprocessor.json beside the checkpoint");
  eval->add_option("--scores", eo.scores, "default: <out>.scores.csv");

  NriOptions no;
  auto* nri_cmd = app.add_subcommand("nri", "net reclassification improvement of new scores over old");
  nri_cmd->add_option("--old", no.old_scores)->required();
  nri_cmd->add_option("--new", no.new_scores)->required();
  nri_cmd->add_option("--labels", no.labels, "outcomes.csv")->required();
  nri_cmd->add_option("--out", no.out)->required();
  nri_cmd->add_option("--bootstrap", no.bootstrap);
  nri_cmd->add_option("--seed", no.seed);

  AttributeOptions ao;
  auto* attr = app.add_subcommand("attribute", "integrated-gradients attribution for a postop model");
  attr->add_option("--model", ao.model)->required();
  attr->add_option("--data", ao.data)->required();
  attr->add_option("--outcome", ao.outcome)->required();
  attr->add_option("--steps", ao.steps);
  attr->add_option("--out", ao.out, "output directory")->required();
  attr->add_option("--split", ao.split)->check(CLI::IsMember({"validation", "development", "all"}));
  attr->add_option("--top", ao.top, "rows in the ranking; 0 keeps all");
  attr->add_option("--limit", ao.limit, "attribute only the first N encounters");
  attr->add_option("--cutoff", ao.cutoff);
  attr->add_option("--preprocessor", ao.preprocessor);

  BaselineOptions bo;
  auto* base = app.add_subcommand("baseline", "class-weighted logistic regression baseline");
  base->add_option("--data", bo.data)->required();
  base->add_option("--phase", bo.phase)->check(CLI::IsMember({"preop", "intraop", "postop"}));
  base->add_option("--out", bo.out, "baseline.json")->required();
  base->add_option("--config", bo.config, "baseline.toml");
  base->add_option("--cutoff", bo.cutoff);

  std::string inspect_path;
  auto* insp = app.add_subcommand("inspect", "summarize a checkpoint, baseline file or data directory");
  insp->add_option("path", inspect_path)->required();

  ReproduceOptions ro;
  auto* repro = app.add_subcommand("reproduce", "run the synthetic experiment grid and build the comparison table");
  repro->add_flag("--all", ro.all);
  repro->add_option("--out", ro.out, "report directory")->required();
  repro->add_option("--spec", ro.spec, "synth.toml; default: built-in 2000-encounter recipe");
  repro->add_option("--config", ro.config, "train.toml; default: built-in reduced model");
  repro->add_option("--baseline-config", ro.baseline_config);
  repro->add_option("--bootstrap", ro.bootstrap);
  repro->add_option("--seed", ro.seed);

  std::vector<std::string> full{"riskseq"};
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> cargs;
  for (const auto& a : full) cargs.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "riskseq: error[E_CONFIG]: " << e.what() << '\n';
    return static_cast<int>(ExitCode::config);
  }

  try {
    if (synth->parsed()) return cmd_synth(so, args, io);
    if (train_cmd->parsed()) return cmd_train(to, args, io);
    if (eval->parsed()) return cmd_evaluate(eo, args, io);
    if (nri_cmd->parsed()) return cmd_nri(no, args, io);
    if (attr->parsed()) return cmd_attribute(ao, args, io);
    if (base->parsed()) return cmd_baseline(bo, args, io);
    if (insp->parsed()) return cmd_inspect(inspect_path, io);
    if (repro->parsed())
      return cmd_reproduce(ro, args, io, [&](const std::vector<std::string>& a) { return run_cli(a, out, err); });
  } catch (const Error& e) {
    err << "riskseq: error[" << e.tag() << "]: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "riskseq: error[E_DATA]: " << e.what() << '\n';
    return static_cast<int>(ExitCode::data);
  }
  return static_cast<int>(ExitCode::config);
}

}  // namespace riskseq::cli

#endif  // RISKSEQ_COMMANDS_HPP
