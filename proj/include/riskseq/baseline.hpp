#ifndef RISKSEQ_BASELINE_HPP
#define RISKSEQ_BASELINE_HPP

// Class-weighted L2 logistic regression on flat design matrices:
//   preop   numeric values and masks, every nominal one-hot
//   intraop 49 summary statistics per channel
//   postop  both blocks

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "riskseq/cohort.hpp"
#include "riskseq/error.hpp"
#include "riskseq/model.hpp"
#include "riskseq/parallel.hpp"
#include "riskseq/preprocess.hpp"
#include "riskseq/series_stats.hpp"
#include "riskseq/training.hpp"

namespace riskseq {

inline constexpr int kBaselineVersion = 1;
inline const std::string kPooledLevel = "other";

struct BaselineConfig {
  double l2 = 1.0;
  double tol = 1e-6;  // on the gradient infinity-norm divided by n
  std::size_t max_iter = 5000;
  std::size_t pool_min_count = 5;  // embedded-nominal levels seen less often in dev share one column; 0 disables
};

/// Column layout plus standardization learned on the development cohort.
struct BaselineDesign {
  Phase phase = Phase::postop;
  std::vector<std::string> columns;
  std::map<std::string, std::vector<std::string>> kept_levels;  // embedded nominals only
  std::vector<double> mean;
  std::vector<double> scale;  // 0 marks a constant column, which encodes as 0
};

namespace detail {

inline bool pools(const BaselineDesign& d, const Feature& f) {
  const auto it = d.kept_levels.find(f.name);
  return it != d.kept_levels.end() && it->second.size() < f.levels.size();
}

inline void append_nominal_columns(const BaselineDesign& d, const FeatureSchema& schema, std::vector<std::string>& cols) {
  for (std::size_t fi : schema.onehot_features())
    for (const auto& l : schema.features[fi].levels) cols.push_back(schema.features[fi].name + "=" + l);
  for (std::size_t fi : schema.embedded_features()) {
    const Feature& f = schema.features[fi];
    for (const auto& l : d.kept_levels.at(f.name)) cols.push_back(f.name + "=" + l);
    if (pools(d, f)) cols.push_back(f.name + "=" + kPooledLevel);
  }
}

// Unstandardized row.
inline std::vector<double> raw_design_row(const RawEncounter& e, const PreprocessorState& pre,
                                          const FeatureSchema& schema, const BaselineDesign& d) {
  std::vector<double> row;
  if (uses_static(d.phase)) {
    const EncodedStatic s = encode_static(e, pre, schema);
    row = s.numeric;  // values, masks, small nominals one-hot
    for (std::size_t k = 0; k < schema.embedded_features().size(); ++k) {
      const Feature& f = schema.features[schema.embedded_features()[k]];
      const auto& kept = d.kept_levels.at(f.name);
      const std::size_t start = row.size();
      row.resize(start + kept.size() + (pools(d, f) ? 1 : 0), 0.0);
      const std::string& level = f.levels.at(s.embedded_ids[k]);
      const auto it = std::find(kept.begin(), kept.end(), level);
      if (it != kept.end()) row[start + static_cast<std::size_t>(it - kept.begin())] = 1.0;
      else row.back() = 1.0;
    }
  }
  if (uses_series(d.phase)) {
    const std::vector<double> summary = summarize_series(resample_series(e, pre, schema), pre);
    row.insert(row.end(), summary.begin(), summary.end());
  }
  return row;
}

}  // namespace detail

inline std::vector<std::string> design_column_names(const BaselineDesign& d, const FeatureSchema& schema) {
  std::vector<std::string> cols;
  if (uses_static(d.phase)) {
    const auto names = schema.numeric_column_names();
    cols.assign(names.begin(), names.begin() + static_cast<std::ptrdiff_t>(2 * schema.numeric_features().size()));
    detail::append_nominal_columns(d, schema, cols);
  }
  if (uses_series(d.phase)) {
    const auto stats = series_stat_names();
    for (const Channel& c : schema.channels)
      for (const auto& s : stats) cols.push_back(c.name + "." + s);
  }
  return cols;
}

/// Rows of the design matrix, standardized with the stored development statistics.
inline Tensor design_matrix(const Cohort& cohort, const PreprocessorState& pre, const BaselineDesign& d) {
  const FeatureSchema& schema = *cohort.schema;
  check_compatible(pre, schema);
  const std::size_t n = cohort.size(), w = d.columns.size();
  Tensor X({n, w});
  parallel_for(n, [&](std::size_t i) {
    const auto row = detail::raw_design_row(cohort.encounters[i], pre, schema, d);
    if (row.size() != w) throw NumericError("design row width " + std::to_string(row.size()) + " != " + std::to_string(w));
    for (std::size_t j = 0; j < w; ++j) X.at(i, j) = d.scale[j] > 0.0 ? (row[j] - d.mean[j]) / d.scale[j] : 0.0;
  });
  return X;
}

/// Chooses pooled levels and standardization on the development cohort.
inline BaselineDesign fit_design(const Cohort& dev, Phase phase, const PreprocessorState& pre,
                                 const BaselineConfig& cfg = {}) {
  const FeatureSchema& schema = *dev.schema;
  check_compatible(pre, schema);
  if (dev.empty()) throw DataError("baseline: empty development cohort");
  BaselineDesign d;
  d.phase = phase;
  for (std::size_t fi : schema.embedded_features()) {
    const Feature& f = schema.features[fi];
    std::vector<std::size_t> counts(f.levels.size(), 0);
    for (const auto& e : dev.encounters) {
      const auto& v = e.static_values.at(fi);
      ++counts.at(v ? static_cast<std::size_t>(*v) : f.missing_index());
    }
    auto& kept = d.kept_levels[f.name];
    for (std::size_t l = 0; l < f.levels.size(); ++l)
      if (counts[l] >= cfg.pool_min_count) kept.push_back(f.levels[l]);
  }
  d.columns = design_column_names(d, schema);
  const std::size_t w = d.columns.size();
  d.mean.assign(w, 0.0);
  d.scale.assign(w, 1.0);
  Tensor raw = design_matrix(dev, pre, d);  // identity scaling
  const double n = static_cast<double>(dev.size());
  for (std::size_t j = 0; j < w; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < dev.size(); ++i) s += raw.at(i, j);
    const double mu = s / n;
    double ss = 0.0;
    for (std::size_t i = 0; i < dev.size(); ++i) ss += (raw.at(i, j) - mu) * (raw.at(i, j) - mu);
    d.mean[j] = mu;
    d.scale[j] = dev.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  }
  return d;
}

struct LogisticTask {
  std::string outcome;
  std::vector<double> coef;
  double intercept = 0.0;
  ClassWeights weights;
  std::size_t iterations = 0;
  double grad_norm = 0.0;  // infinity-norm of the gradient divided by n
  bool converged = false;
};

struct LogisticModel {
  BaselineDesign design;
  BaselineConfig config;
  std::string schema_hash;
  PreprocessorState preprocessor;
  std::vector<LogisticTask> tasks;
};

struct LogisticObjective {
  double value = 0.0;
  std::vector<double> grad_w;
  double grad_b = 0.0;
};

/// sum_i c_i * NLL_i + l2/2 |w|^2, with c_i the class weight of row i. The intercept is not penalized.
inline LogisticObjective logistic_objective(const Tensor& X, std::span<const int> y, const ClassWeights& cw, double l2,
                                            std::span<const double> w, double b) {
  const std::size_t n = X.dim(0), d = X.dim(1);
  LogisticObjective o;
  o.grad_w.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = X.data() + i * d;
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += row[j] * w[j];
    const double c = y[i] == 1 ? cw.w_pos : cw.w_neg;
    // log(1 + e^z) - y z, evaluated stably
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    o.value += c * (softplus - (y[i] == 1 ? z : 0.0));
    const double r = c * (ad::sigmoid(z) - y[i]);
    o.grad_b += r;
    for (std::size_t j = 0; j < d; ++j) o.grad_w[j] += r * row[j];
  }
  for (std::size_t j = 0; j < d; ++j) {
    o.value += 0.5 * l2 * w[j] * w[j];
    o.grad_w[j] += l2 * w[j];
  }
  return o;
}

namespace detail {

inline double scaled_inf_norm(const LogisticObjective& o, std::size_t n) {
  double m = std::abs(o.grad_b);
  for (double g : o.grad_w) m = std::max(m, std::abs(g));
  return m / static_cast<double>(std::max<std::size_t>(1, n));
}

}  // namespace detail

/// Gradient descent with a Barzilai-Borwein trial step and Armijo backtracking.
inline LogisticTask fit_logistic(const Tensor& X, std::span<const int> y, const ClassWeights& cw, double l2, double tol,
                                 std::size_t max_iter) {
  if (X.rank() != 2 || X.dim(0) != y.size()) throw DataError("fit_logistic: X rows and labels differ");
  std::size_t pos = 0;
  for (int v : y) pos += v == 1;
  if (pos == 0 || pos == y.size()) throw DataError("fit_logistic: both classes must be present");
  const std::size_t n = X.dim(0), d = X.dim(1);
  LogisticTask t;
  t.weights = cw;
  std::vector<double> w(d, 0.0);
  double b = 0.0;
  LogisticObjective o = logistic_objective(X, y, cw, l2, w, b);
  double step = 1.0 / static_cast<double>(n);
  std::vector<double> wn(d);
  for (t.iterations = 0; t.iterations < max_iter; ++t.iterations) {
    t.grad_norm = detail::scaled_inf_norm(o, n);
    if (t.grad_norm < tol) {
      t.converged = true;
      break;
    }
    double gg = o.grad_b * o.grad_b;
    for (double g : o.grad_w) gg += g * g;
    LogisticObjective on;
    double bn = 0.0;
    for (int tries = 0;; ++tries) {
      for (std::size_t j = 0; j < d; ++j) wn[j] = w[j] - step * o.grad_w[j];
      bn = b - step * o.grad_b;
      on = logistic_objective(X, y, cw, l2, wn, bn);
      if (on.value <= o.value - 1e-4 * step * gg) break;
      step *= 0.5;
      if (tries > 60) {  // no descent left at machine precision
        t.coef = std::move(w);
        t.intercept = b;
        return t;
      }
    }
    // Barzilai-Borwein step for the next iteration: s.s / s.g_diff
    double ss = 0.0, sy = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double s = wn[j] - w[j], dy = on.grad_w[j] - o.grad_w[j];
      ss += s * s;
      sy += s * dy;
    }
    ss += (bn - b) * (bn - b);
    sy += (bn - b) * (on.grad_b - o.grad_b);
    w.swap(wn);
    b = bn;
    o = std::move(on);
    step = sy > 0.0 ? ss / sy : step * 2.0;
  }
  if (!t.converged) t.grad_norm = detail::scaled_inf_norm(o, n);
  t.coef = std::move(w);
  t.intercept = b;
  return t;
}

inline std::vector<double> predict_logistic(const LogisticTask& t, const Tensor& X) {
  if (X.rank() != 2 || X.dim(1) != t.coef.size())
    throw DataError("predict_logistic: design width " + std::to_string(X.rank() == 2 ? X.dim(1) : 0) +
                    " does not match coefficient length " + std::to_string(t.coef.size()));
  std::vector<double> p(X.dim(0));
  for (std::size_t i = 0; i < X.dim(0); ++i) {
    double z = t.intercept;
    for (std::size_t j = 0; j < X.dim(1); ++j) z += X.at(i, j) * t.coef[j];
    p[i] = ad::sigmoid(z);
  }
  return p;
}

/// Fits one logistic model per requested outcome (all outcomes when `outcomes` is empty).
inline LogisticModel train_baseline(const Cohort& dev, Phase phase, const PreprocessorState& pre,
                                    const BaselineConfig& cfg = {}, std::vector<std::size_t> outcomes = {}) {
  const FeatureSchema& schema = *dev.schema;
  LogisticModel m;
  m.config = cfg;
  m.schema_hash = schema_hash(schema);
  m.preprocessor = pre;
  m.design = fit_design(dev, phase, pre, cfg);
  const Tensor X = design_matrix(dev, pre, m.design);
  if (outcomes.empty())
    for (std::size_t k = 0; k < schema.outcomes.size(); ++k) outcomes.push_back(k);
  m.tasks.resize(outcomes.size());
  parallel_for(outcomes.size(), [&](std::size_t i) {
    const std::size_t k = outcomes[i];
    std::vector<int> y;
    for (const auto& e : dev.encounters) y.push_back(e.outcomes.at(k));
    const ClassWeights cw = class_weights(y, schema.outcomes[k]);
    m.tasks[i] = fit_logistic(X, y, cw, cfg.l2, cfg.tol, cfg.max_iter);
    m.tasks[i].outcome = schema.outcomes[k];
  });
  return m;
}

inline const LogisticTask& baseline_task(const LogisticModel& m, const std::string& outcome) {
  for (const auto& t : m.tasks)
    if (t.outcome == outcome) return t;
  throw ConfigError("baseline model has no outcome '" + outcome + "'");
}

inline nlohmann::json baseline_to_json(const LogisticModel& m) {
  using nlohmann::json;
  json tasks = json::array();
  for (const auto& t : m.tasks)
    tasks.push_back({{"outcome", t.outcome},
                     {"intercept", t.intercept},
                     {"coef", t.coef},
                     {"w_pos", t.weights.w_pos},
                     {"w_neg", t.weights.w_neg},
                     {"iterations", t.iterations},
                     {"grad_norm", t.grad_norm},
                     {"converged", t.converged}});
  return {{"format_version", kBaselineVersion},
          {"kind", "logistic_baseline"},
          {"phase", phase_name(m.design.phase)},
          {"schema_hash", m.schema_hash},
          {"config",
           {{"l2", m.config.l2}, {"tol", m.config.tol}, {"max_iter", m.config.max_iter},
            {"pool_min_count", m.config.pool_min_count}}},
          {"columns", m.design.columns},
          {"kept_levels", m.design.kept_levels},
          {"mean", m.design.mean},
          {"scale", m.design.scale},
          {"preprocessor", state_to_json(m.preprocessor)},
          {"tasks", tasks}};
}

inline LogisticModel baseline_from_json(const nlohmann::json& j) {
  LogisticModel m;
  try {
    if (j.at("format_version").get<int>() != kBaselineVersion || j.at("kind").get<std::string>() != "logistic_baseline")
      throw ConfigError("not a supported baseline model file");
    m.design.phase = parse_phase(j.at("phase").get<std::string>());
    m.schema_hash = j.at("schema_hash").get<std::string>();
    const auto& c = j.at("config");
    m.config.l2 = c.at("l2").get<double>();
    m.config.tol = c.at("tol").get<double>();
    m.config.max_iter = c.at("max_iter").get<std::size_t>();
    m.config.pool_min_count = c.at("pool_min_count").get<std::size_t>();
    m.design.columns = j.at("columns").get<std::vector<std::string>>();
    m.design.kept_levels = j.at("kept_levels").get<std::map<std::string, std::vector<std::string>>>();
    m.design.mean = j.at("mean").get<std::vector<double>>();
    m.design.scale = j.at("scale").get<std::vector<double>>();
    m.preprocessor = state_from_json(j.at("preprocessor"));
    for (const auto& jt : j.at("tasks")) {
      LogisticTask t;
      t.outcome = jt.at("outcome").get<std::string>();
      t.intercept = jt.at("intercept").get<double>();
      t.coef = jt.at("coef").get<std::vector<double>>();
      t.weights = {jt.at("w_pos").get<double>(), jt.at("w_neg").get<double>()};
      t.iterations = jt.at("iterations").get<std::size_t>();
      t.grad_norm = jt.at("grad_norm").get<double>();
      t.converged = jt.at("converged").get<bool>();
      if (t.coef.size() != m.design.columns.size()) throw DataError("baseline task '" + t.outcome + "' has wrong width");
      m.tasks.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed baseline model: ") + e.what());
  }
  return m;
}

inline void save_baseline(const LogisticModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << baseline_to_json(m).dump(1) << '\n';
}

inline LogisticModel load_baseline(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return baseline_from_json(j);
}

}  // namespace riskseq

#endif  // RISKSEQ_BASELINE_HPP
