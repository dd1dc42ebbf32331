#ifndef RISKSEQ_ATTRIBUTION_HPP
#define RISKSEQ_ATTRIBUTION_HPP

// Integrated gradients against the all-zero input, midpoint rule:
//   IG_i = x_i * (1/m) sum_{j=1..m} dF/dx_i at ((j - 1/2)/m) x
// F is the pre-sigmoid logit of one branch.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "riskseq/autodiff.hpp"
#include "riskseq/csv.hpp"
#include "riskseq/error.hpp"
#include "riskseq/model.hpp"
#include "riskseq/parallel.hpp"
#include "riskseq/preprocess.hpp"

namespace riskseq {

inline constexpr std::size_t kDefaultIgSteps = 64;

using PathFunction = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

struct PathAttribution {
  std::vector<Tensor> attributions;  // one per input, same shapes
  double f_x = 0.0;
  double f_baseline = 0.0;
  double gap = 0.0;  // (F(x) - F(0)) - sum of attributions
};

namespace detail {

// Neumaier-compensated running sum, so m equal gradients average back to themselves.
struct CompensatedSum {
  std::vector<double> sum, comp;
  explicit CompensatedSum(std::size_t n) : sum(n, 0.0), comp(n, 0.0) {}
  void add(std::size_t i, double v) {
    const double t = sum[i] + v;
    if (std::abs(sum[i]) >= std::abs(v)) comp[i] += (sum[i] - t) + v;
    else comp[i] += (v - t) + sum[i];
    sum[i] = t;
  }
  double total(std::size_t i) const { return sum[i] + comp[i]; }
};

inline double evaluate_path_function(const PathFunction& f, const std::vector<Tensor>& x) {
  ad::Tape tape;
  std::vector<ad::Var> in;
  for (const auto& t : x) in.push_back(tape.constant(t));
  const ad::Var out = f(tape, in);
  if (out.value().size() != 1) throw NumericError("attributed function must return a scalar");
  return out.value()[0];
}

}  // namespace detail

/// Integrated gradients of a scalar function of several tensor inputs.
inline PathAttribution integrated_gradients(const PathFunction& f, const std::vector<Tensor>& x, std::size_t steps) {
  if (steps < 1) throw ConfigError("integrated gradients needs at least one step");
  std::vector<detail::CompensatedSum> acc;
  for (const auto& t : x) acc.emplace_back(t.size());
  for (std::size_t j = 1; j <= steps; ++j) {
    const double alpha = (static_cast<double>(j) - 0.5) / static_cast<double>(steps);
    ad::Tape tape;
    std::vector<ad::Var> in;
    for (const auto& t : x) {
      Tensor scaled = t;
      for (double& v : scaled.storage()) v *= alpha;
      in.push_back(tape.leaf(std::move(scaled)));
    }
    const ad::Var out = f(tape, in);
    tape.backward(out);
    for (std::size_t k = 0; k < x.size(); ++k)
      if (const Tensor* g = tape.grad_if_any(in[k].id))
        for (std::size_t i = 0; i < g->size(); ++i) acc[k].add(i, (*g)[i]);
  }
  PathAttribution r;
  double total = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    Tensor a(x[k].shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = x[k][i] * (acc[k].total(i) / static_cast<double>(steps));
      total += a[i];
    }
    r.attributions.push_back(std::move(a));
  }
  std::vector<Tensor> zeros;
  for (const auto& t : x) zeros.emplace_back(t.shape());
  r.f_x = detail::evaluate_path_function(f, x);
  r.f_baseline = detail::evaluate_path_function(f, zeros);
  r.gap = (r.f_x - r.f_baseline) - total;
  return r;
}

struct AttributionResult {
  std::string encounter_id;
  std::string outcome;
  std::vector<std::string> features;  // static columns, embedded nominals, then <channel>.value / <channel>.mask
  std::vector<double> attributions;
  std::vector<double> input_values;
  Tensor series_attributions;  // [T, 2C] per minute
  double f_x = 0.0;
  double f_baseline = 0.0;
  double completeness_gap = 0.0;
  std::size_t steps = 0;
};

/// Feature names in AttributionResult order.
inline std::vector<std::string> attribution_feature_names(const FeatureSchema& schema) {
  std::vector<std::string> names = schema.numeric_column_names();
  for (std::size_t fi : schema.embedded_features()) names.push_back(schema.features[fi].name);
  for (const auto& c : schema.channels) names.push_back(c.name + ".value");
  for (const auto& c : schema.channels) names.push_back(c.name + ".mask");
  return names;
}

/// Attributions of outcome k's logit for one encounter of a postop model.
inline AttributionResult integrated_gradients(const Model& model, const FeatureSchema& schema,
                                              const EncodedEncounter& enc, std::size_t outcome, std::size_t steps) {
  require_phase(model, Phase::postop);
  if (steps < 1) throw ConfigError("integrated gradients needs at least one step");
  const auto active = model.config.active_tasks();
  if (std::find(active.begin(), active.end(), outcome) == active.end())
    throw ConfigError("model has no branch for outcome index " + std::to_string(outcome));
  Model single = model;
  single.config.single_task = outcome;

  // Inputs: numeric vector, one looked-up embedding per embedded nominal, series.
  std::vector<Tensor> x;
  x.emplace_back(Shape{enc.numeric.size()}, enc.numeric);
  for (std::size_t i = 0; i < enc.embedded_ids.size(); ++i) {
    const Tensor& table = single.param(names::embed(single.embedded_feature_names.at(i)));
    const std::size_t d = table.dim(1);
    std::vector<double> row(table.data() + enc.embedded_ids[i] * d, table.data() + (enc.embedded_ids[i] + 1) * d);
    x.emplace_back(Shape{d}, std::move(row));
  }
  x.push_back(enc.series);
  const std::size_t n_embed = enc.embedded_ids.size();

  const PathFunction f = [&single, n_embed](ad::Tape& tape, const std::vector<ad::Var>& in) {
    BoundParams p(tape, single.params, false);
    ModelInputs mi;
    mi.numeric = in[0];
    mi.embeddings.assign(in.begin() + 1, in.begin() + 1 + static_cast<std::ptrdiff_t>(n_embed));
    mi.series = in[1 + n_embed];
    return forward(single, p, mi).logits.at(0);
  };
  const PathAttribution pa = integrated_gradients(f, x, steps);

  AttributionResult r;
  r.encounter_id = enc.id;
  r.outcome = model.outcome_names.at(outcome);
  r.features = attribution_feature_names(schema);
  r.steps = steps;
  r.f_x = pa.f_x;
  r.f_baseline = pa.f_baseline;
  r.completeness_gap = pa.gap;
  for (std::size_t i = 0; i < enc.numeric.size(); ++i) {
    r.attributions.push_back(pa.attributions[0][i]);
    r.input_values.push_back(enc.numeric[i]);
  }
  for (std::size_t i = 0; i < n_embed; ++i) {
    double s = 0.0;
    for (double v : pa.attributions[1 + i].values()) s += v;
    r.attributions.push_back(s);
    r.input_values.push_back(static_cast<double>(enc.embedded_ids[i]));
  }
  r.series_attributions = pa.attributions[1 + n_embed];
  const Tensor& S = enc.series;
  const std::size_t T = S.dim(0), W = S.dim(1);
  for (std::size_t c = 0; c < W; ++c) {
    double s = 0.0, mean_in = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      s += r.series_attributions.at(t, c);
      mean_in += S.at(t, c);
    }
    r.attributions.push_back(s);
    r.input_values.push_back(mean_in / static_cast<double>(T));
  }
  if (r.attributions.size() != r.features.size()) throw NumericError("attribution width does not match feature names");
  return r;
}

inline std::vector<AttributionResult> attribute_cohort(const Model& model, const FeatureSchema& schema,
                                                       const std::vector<EncodedEncounter>& encs, std::size_t outcome,
                                                       std::size_t steps) {
  std::vector<AttributionResult> out(encs.size());
  parallel_for(encs.size(), [&](std::size_t i) { out[i] = integrated_gradients(model, schema, encs[i], outcome, steps); });
  return out;
}

struct RankedFeature {
  std::string feature;
  double mean_abs = 0.0;
  double mean_signed = 0.0;
  double mean_input = 0.0;
};

/// Features by mean |attribution| descending, ties by name; top_n = 0 keeps all.
inline std::vector<RankedFeature> rank_features(const std::vector<AttributionResult>& results, std::size_t top_n = 0) {
  if (results.empty()) throw DataError("rank_features: no attribution results");
  const auto& first = results.front();
  std::vector<RankedFeature> rows(first.features.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].feature = first.features[i];
  for (const auto& r : results) {
    if (r.outcome != first.outcome || r.features != first.features)
      throw DataError("rank_features: results mix outcomes or feature layouts");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i].mean_abs += std::abs(r.attributions[i]);
      rows[i].mean_signed += r.attributions[i];
      rows[i].mean_input += r.input_values[i];
    }
  }
  const double n = static_cast<double>(results.size());
  for (auto& row : rows) {
    row.mean_abs /= n;
    row.mean_signed /= n;
    row.mean_input /= n;
  }
  std::sort(rows.begin(), rows.end(), [](const RankedFeature& a, const RankedFeature& b) {
    if (a.mean_abs != b.mean_abs) return a.mean_abs > b.mean_abs;
    return a.feature < b.feature;
  });
  if (top_n > 0 && rows.size() > top_n) rows.resize(top_n);
  return rows;
}

inline void write_attributions_csv(const std::vector<AttributionResult>& results, const std::string& path) {
  csv::Writer w(path);
  w.row({"encounter_id", "outcome", "feature", "attribution", "input_value"});
  for (const auto& r : results)
    for (std::size_t i = 0; i < r.features.size(); ++i)
      w.row({r.encounter_id, r.outcome, r.features[i], csv::format_double(r.attributions[i]),
             csv::format_double(r.input_values[i])});
}

inline void write_ranking_csv(const std::vector<RankedFeature>& rows, const std::string& outcome,
                              const std::string& path) {
  csv::Writer w(path);
  w.row({"rank", "outcome", "feature", "mean_abs_attribution", "mean_attribution", "mean_input_value"});
  for (std::size_t i = 0; i < rows.size(); ++i)
    w.row({std::to_string(i + 1), outcome, rows[i].feature, csv::format_double(rows[i].mean_abs),
           csv::format_double(rows[i].mean_signed), csv::format_double(rows[i].mean_input)});
}

}  // namespace riskseq

#endif  // RISKSEQ_ATTRIBUTION_HPP
