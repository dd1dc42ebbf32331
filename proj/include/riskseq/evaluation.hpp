#ifndef RISKSEQ_EVALUATION_HPP
#define RISKSEQ_EVALUATION_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "riskseq/error.hpp"
#include "riskseq/parallel.hpp"
#include "riskseq/rng.hpp"
#include "riskseq/series_stats.hpp"

namespace riskseq {

inline constexpr int kMetricsSchemaVersion = 1;

namespace detail {

inline void require_aligned(std::span<const double> s, std::span<const int> y) {
  if (s.size() != y.size()) throw DataError("scores and labels differ in length");
  for (int v : y)
    if (v != 0 && v != 1) throw DataError("labels must be 0 or 1");
}

inline std::pair<std::size_t, std::size_t> class_counts(std::span<const int> y) {
  std::size_t pos = 0;
  for (int v : y) pos += v == 1;
  return {pos, y.size() - pos};
}

inline void require_both_classes(std::span<const int> y, const char* what) {
  const auto [pos, neg] = class_counts(y);
  if (pos == 0 || neg == 0) throw DataError(std::string(what) + " needs both classes present");
}

// Indices ordered by descending score.
inline std::vector<std::size_t> order_desc(std::span<const double> s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return idx;
}

}  // namespace detail

/// Mann-Whitney AUROC with midranks for ties.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  detail::require_aligned(scores, labels);
  detail::require_both_classes(labels, "auroc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[idx[k]] == 1) rank_sum += midrank;
    i = j + 1;
  }
  const auto [pos, neg] = detail::class_counts(labels);
  const double np = static_cast<double>(pos), nn = static_cast<double>(neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

/// Step-wise average precision over descending unique score thresholds.
inline double auprc(std::span<const double> scores, std::span<const int> labels) {
  detail::require_aligned(scores, labels);
  const auto [pos, neg] = detail::class_counts(labels);
  if (pos == 0) throw DataError("auprc needs at least one positive");
  const auto idx = detail::order_desc(scores);
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0, i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      tp += labels[idx[j]] == 1;
      ++j;
    }
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

struct YoudenResult {
  double threshold = 0.0;
  double j = 0.0;
};

/// Threshold among the observed scores plus +inf maximizing sens + spec - 1 under
/// the rule score >= threshold; ties go to the smallest threshold.
inline YoudenResult youden_threshold(std::span<const double> scores, std::span<const int> labels) {
  detail::require_aligned(scores, labels);
  detail::require_both_classes(labels, "youden_threshold");
  const auto [pos, neg] = detail::class_counts(labels);
  const auto idx = detail::order_desc(scores);
  // Start at +inf (nothing positive) and lower the threshold group by group.
  YoudenResult best{std::numeric_limits<double>::infinity(), 0.0};
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double jv = static_cast<double>(tp) / static_cast<double>(pos) +
                      static_cast<double>(neg - fp) / static_cast<double>(neg) - 1.0;
    if (jv >= best.j) best = {scores[idx[i]], jv};
    i = j;
  }
  return best;
}

struct MetricValue {
  std::optional<double> value;
  std::string reason;  // set when value is absent
};

struct ConfusionMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  MetricValue sensitivity, specificity, ppv, npv, accuracy;
};

inline MetricValue ratio(std::size_t num, std::size_t den, const char* why_undefined) {
  if (den == 0) return {std::nullopt, why_undefined};
  return {static_cast<double>(num) / static_cast<double>(den), {}};
}

inline ConfusionMetrics confusion_metrics(std::span<const double> scores, std::span<const int> labels,
                                          double threshold) {
  detail::require_aligned(scores, labels);
  ConfusionMetrics m;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) (predicted ? m.tp : m.fn) += 1;
    else (predicted ? m.fp : m.tn) += 1;
  }
  m.sensitivity = ratio(m.tp, m.tp + m.fn, "no positive labels");
  m.specificity = ratio(m.tn, m.tn + m.fp, "no negative labels");
  m.ppv = ratio(m.tp, m.tp + m.fp, "no predicted positives");
  m.npv = ratio(m.tn, m.tn + m.fn, "no predicted negatives");
  m.accuracy = ratio(m.tp + m.tn, scores.size(), "empty input");
  return m;
}

// A metric over a (resampled) data set; nullopt when undefined on that sample.
using Metric = std::function<std::optional<double>(std::span<const double>, std::span<const int>)>;

inline Metric auroc_metric() {
  return [](std::span<const double> s, std::span<const int> y) -> std::optional<double> {
    const auto [p, n] = detail::class_counts(y);
    if (p == 0 || n == 0) return std::nullopt;
    return auroc(s, y);
  };
}

inline Metric auprc_metric() {
  return [](std::span<const double> s, std::span<const int> y) -> std::optional<double> {
    const auto [p, n] = detail::class_counts(y);
    if (p == 0 || n == 0) return std::nullopt;
    return auprc(s, y);
  };
}

/// One confusion metric at a fixed threshold; `which` is sensitivity|specificity|ppv|npv|accuracy.
inline Metric confusion_metric(const std::string& which, double threshold) {
  if (which != "sensitivity" && which != "specificity" && which != "ppv" && which != "npv" && which != "accuracy")
    throw ConfigError("unknown confusion metric '" + which + "'");
  return [which, threshold](std::span<const double> s, std::span<const int> y) -> std::optional<double> {
    const auto [p, n] = detail::class_counts(y);
    if (p == 0 || n == 0) return std::nullopt;
    const ConfusionMetrics m = confusion_metrics(s, y, threshold);
    if (which == "sensitivity") return m.sensitivity.value;
    if (which == "specificity") return m.specificity.value;
    if (which == "ppv") return m.ppv.value;
    if (which == "npv") return m.npv.value;
    return m.accuracy.value;
  };
}

inline constexpr std::size_t kMinValidResamples = 100;
inline constexpr std::size_t kRedrawCap = 20;

struct BootstrapResult {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t valid = 0;
  std::size_t skipped = 0;  // resamples still undefined after kRedrawCap redraws
  std::size_t redraws = 0;
  std::vector<double> samples;  // resample metric values in resample order
};

/// Percentile bootstrap. Resample j draws from Rng(derive_seed(seed, j)), so the
/// result does not depend on scheduling.
inline BootstrapResult bootstrap_ci(const Metric& metric, std::span<const double> scores, std::span<const int> labels,
                                    std::size_t n_resamples, std::uint64_t seed) {
  detail::require_aligned(scores, labels);
  if (n_resamples < 2) throw ConfigError("bootstrap needs at least 2 resamples");
  if (scores.empty()) throw DataError("bootstrap on an empty sample");
  const std::size_t n = scores.size();
  std::vector<std::optional<double>> values(n_resamples);
  std::vector<std::size_t> redraws(n_resamples, 0);
  parallel_for(n_resamples, [&](std::size_t j) {
    Rng rng(derive_seed(seed, j));
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t attempt = 0; attempt <= kRedrawCap; ++attempt) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = rng.index(n);
        s[i] = scores[k];
        y[i] = labels[k];
      }
      values[j] = metric(s, y);
      if (values[j]) break;
      if (attempt < kRedrawCap) ++redraws[j];
    }
  });
  BootstrapResult r;
  for (std::size_t j = 0; j < n_resamples; ++j) {
    r.redraws += redraws[j];
    if (values[j]) r.samples.push_back(*values[j]);
    else ++r.skipped;
  }
  r.valid = r.samples.size();
  if (r.valid < kMinValidResamples)
    throw DataError("bootstrap produced " + std::to_string(r.valid) + " valid resamples, need at least " +
                    std::to_string(kMinValidResamples));
  std::vector<double> sorted = r.samples;
  std::sort(sorted.begin(), sorted.end());
  r.lo = percentile_sorted(sorted, 0.025);
  r.hi = percentile_sorted(sorted, 0.975);
  return r;
}

struct Estimate {
  std::optional<double> point;
  std::string reason;  // why point is absent
  std::optional<double> ci_lo;
  std::optional<double> ci_hi;
  std::size_t valid = 0;
  std::size_t skipped = 0;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"sensitivity", "specificity", "ppv", "npv",
                                              "accuracy",    "auprc",       "auroc"};
  return names;
}

struct OutcomeReport {
  std::string outcome;
  std::size_t n = 0;
  double prevalence = 0.0;
  double threshold = 0.0;
  double youden_j = 0.0;
  std::map<std::string, Estimate> metrics;
};

/// All seven metrics for one outcome. The Youden threshold is chosen once on the
/// full sample and held fixed inside the resamples. A CI that does not cover its
/// point estimate is widened to do so.
inline OutcomeReport evaluate_outcome(const std::string& outcome, std::span<const double> scores,
                                      std::span<const int> labels, std::size_t n_resamples, std::uint64_t seed) {
  detail::require_aligned(scores, labels);
  detail::require_both_classes(labels, ("evaluation of '" + outcome + "'").c_str());
  OutcomeReport r;
  r.outcome = outcome;
  r.n = scores.size();
  r.prevalence = static_cast<double>(detail::class_counts(labels).first) / static_cast<double>(r.n);
  const YoudenResult yj = youden_threshold(scores, labels);
  r.threshold = yj.threshold;
  r.youden_j = yj.j;
  const ConfusionMetrics cm = confusion_metrics(scores, labels, yj.threshold);
  const std::map<std::string, MetricValue> points{{"sensitivity", cm.sensitivity}, {"specificity", cm.specificity},
                                                  {"ppv", cm.ppv},                 {"npv", cm.npv},
                                                  {"accuracy", cm.accuracy},       {"auprc", {auprc(scores, labels), {}}},
                                                  {"auroc", {auroc(scores, labels), {}}}};
  for (std::size_t m = 0; m < metric_names().size(); ++m) {
    const std::string& name = metric_names()[m];
    Estimate e;
    e.point = points.at(name).value;
    e.reason = points.at(name).reason;
    if (n_resamples > 0 && e.point) {
      const Metric metric = name == "auroc" ? auroc_metric() : name == "auprc" ? auprc_metric()
                                                                               : confusion_metric(name, yj.threshold);
      const BootstrapResult b = bootstrap_ci(metric, scores, labels, n_resamples, derive_seed(seed, m));
      e.ci_lo = std::min(b.lo, *e.point);
      e.ci_hi = std::max(b.hi, *e.point);
      e.valid = b.valid;
      e.skipped = b.skipped;
    }
    r.metrics.emplace(name, e);
  }
  return r;
}

inline nlohmann::json estimate_to_json(const Estimate& e) {
  nlohmann::json j;
  j["point"] = e.point ? nlohmann::json(*e.point) : nlohmann::json(nullptr);
  if (!e.point) j["reason"] = e.reason;
  if (e.ci_lo) {
    j["ci_lo"] = *e.ci_lo;
    j["ci_hi"] = *e.ci_hi;
    j["bootstrap_valid"] = e.valid;
    j["bootstrap_skipped"] = e.skipped;
  }
  return j;
}

inline nlohmann::json outcome_report_to_json(const OutcomeReport& r) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [name, e] : r.metrics) metrics[name] = estimate_to_json(e);
  // +inf threshold (predict none) is written as null.
  const nlohmann::json thr = std::isfinite(r.threshold) ? nlohmann::json(r.threshold) : nlohmann::json(nullptr);
  return {{"n", r.n}, {"prevalence", r.prevalence}, {"threshold", thr}, {"youden_j", r.youden_j}, {"metrics", metrics}};
}

struct NRIResult {
  double event_component = 0.0;
  double nonevent_component = 0.0;
  double nri_index = 0.0;
  double event_pct = 0.0;
  double nonevent_pct = 0.0;
  double overall_pct = 0.0;
  std::size_t events_up = 0, events_down = 0, nonevents_up = 0, nonevents_down = 0;
  std::size_t n_events = 0, n_nonevents = 0;
  std::optional<double> ci_lo, ci_hi, se, p_value;
  std::size_t resamples_valid = 0;
};

namespace detail {

struct NriCounts {
  std::size_t eu = 0, ed = 0, nu = 0, nd = 0, e = 0, ne = 0;
};

inline NriCounts nri_counts(std::span<const double> old_s, std::span<const double> new_s, std::span<const int> y,
                            double old_t, double new_t) {
  NriCounts c;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool was = old_s[i] >= old_t, now = new_s[i] >= new_t;
    const bool up = now && !was, down = was && !now;
    if (y[i] == 1) {
      ++c.e;
      c.eu += up;
      c.ed += down;
    } else {
      ++c.ne;
      c.nu += up;
      c.nd += down;
    }
  }
  return c;
}

inline double nri_of(const NriCounts& c) {
  return (static_cast<double>(c.eu) - static_cast<double>(c.ed)) / static_cast<double>(c.e) +
         (static_cast<double>(c.nd) - static_cast<double>(c.nu)) / static_cast<double>(c.ne);
}

}  // namespace detail

/// Two-category NRI at fixed thresholds (score >= threshold is high risk). The
/// p-value is a two-sided z-test on the bootstrap standard error.
inline NRIResult nri(std::span<const double> old_scores, std::span<const double> new_scores,
                     std::span<const int> labels, double old_threshold, double new_threshold,
                     std::size_t n_resamples, std::uint64_t seed) {
  detail::require_aligned(old_scores, labels);
  detail::require_aligned(new_scores, labels);
  detail::require_both_classes(labels, "nri");
  const auto c = detail::nri_counts(old_scores, new_scores, labels, old_threshold, new_threshold);
  NRIResult r;
  r.events_up = c.eu;
  r.events_down = c.ed;
  r.nonevents_up = c.nu;
  r.nonevents_down = c.nd;
  r.n_events = c.e;
  r.n_nonevents = c.ne;
  r.event_component = (static_cast<double>(c.eu) - static_cast<double>(c.ed)) / static_cast<double>(c.e);
  r.nonevent_component = (static_cast<double>(c.nd) - static_cast<double>(c.nu)) / static_cast<double>(c.ne);
  r.nri_index = r.event_component + r.nonevent_component;
  r.event_pct = 100.0 * r.event_component;
  r.nonevent_pct = 100.0 * r.nonevent_component;
  const double net = static_cast<double>(c.eu) - static_cast<double>(c.ed) + static_cast<double>(c.nd) -
                     static_cast<double>(c.nu);
  r.overall_pct = 100.0 * net / static_cast<double>(labels.size());
  if (n_resamples == 0) return r;

  // Resample row indices; old and new scores move together.
  std::vector<double> rows(labels.size());
  std::iota(rows.begin(), rows.end(), 0.0);
  const Metric metric = [&](std::span<const double> idx, std::span<const int> y) -> std::optional<double> {
    const auto [p, n] = detail::class_counts(y);
    if (p == 0 || n == 0) return std::nullopt;
    std::vector<double> o(idx.size()), nw(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto k = static_cast<std::size_t>(idx[i]);
      o[i] = old_scores[k];
      nw[i] = new_scores[k];
    }
    return detail::nri_of(detail::nri_counts(o, nw, y, old_threshold, new_threshold));
  };
  const BootstrapResult b = bootstrap_ci(metric, rows, labels, n_resamples, seed);
  r.ci_lo = std::min(b.lo, r.nri_index);
  r.ci_hi = std::max(b.hi, r.nri_index);
  r.resamples_valid = b.valid;
  const double mean = std::accumulate(b.samples.begin(), b.samples.end(), 0.0) / static_cast<double>(b.valid);
  double ss = 0.0;
  for (double v : b.samples) ss += (v - mean) * (v - mean);
  r.se = std::sqrt(ss / static_cast<double>(b.valid - 1));
  if (*r.se > 0.0) r.p_value = std::erfc(std::abs(r.nri_index / *r.se) / std::sqrt(2.0));
  else r.p_value = r.nri_index == 0.0 ? 1.0 : 0.0;
  return r;
}

inline nlohmann::json nri_to_json(const NRIResult& r) {
  nlohmann::json j{{"schema_version", kMetricsSchemaVersion},
                   {"nri_index", r.nri_index},
                   {"event_component", r.event_component},
                   {"nonevent_component", r.nonevent_component},
                   {"event_pct", r.event_pct},
                   {"nonevent_pct", r.nonevent_pct},
                   {"overall_pct", r.overall_pct},
                   {"counts",
                    {{"events", r.n_events},
                     {"nonevents", r.n_nonevents},
                     {"events_up", r.events_up},
                     {"events_down", r.events_down},
                     {"nonevents_up", r.nonevents_up},
                     {"nonevents_down", r.nonevents_down}}},
                   {"p_value_method", "bootstrap standard error z-test, two-sided"}};
  if (r.ci_lo) {
    j["ci_lo"] = *r.ci_lo;
    j["ci_hi"] = *r.ci_hi;
    j["bootstrap_se"] = *r.se;
    j["p_value"] = *r.p_value;
    j["bootstrap_valid"] = r.resamples_valid;
  }
  return j;
}

}  // namespace riskseq

#endif  // RISKSEQ_EVALUATION_HPP
