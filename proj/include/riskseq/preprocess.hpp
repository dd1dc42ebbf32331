#ifndef RISKSEQ_PREPROCESS_HPP
#define RISKSEQ_PREPROCESS_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "riskseq/cohort.hpp"
#include "riskseq/error.hpp"
#include "riskseq/schema.hpp"
#include "riskseq/series_stats.hpp"
#include "riskseq/tensor.hpp"

namespace riskseq {

inline constexpr int kPreprocessorVersion = 1;

struct NumericStats {
  double p1 = 0.0;
  double p99 = 0.0;
  double median = 0.0;  // imputation value; the mode for binary features
  double mean = 0.0;
  double std = 0.0;
};

struct ChannelStats {
  double median = 0.0;
  double mean = 0.0;
  double std = 0.0;
  double lo = 0.0;  // valid range
  double hi = 0.0;
  double dev_min = 0.0;  // observed development range, used for entropy bins
  double dev_max = 0.0;
};

/// Development-cohort statistics. Immutable after fit().
struct PreprocessorState {
  std::string schema_hash;
  std::vector<NumericStats> numeric;  // aligned with schema.numeric_features()
  std::vector<std::vector<std::string>> onehot_levels;    // index = position
  std::vector<std::vector<std::string>> embedded_levels;  // id = position
  std::vector<ChannelStats> channels;
};

struct EncodedEncounter {
  std::string id;
  std::vector<double> numeric;          // values, masks, one-hot blocks
  std::vector<std::size_t> embedded_ids;
  Tensor series;                        // [T, 2C]: C value columns, then C mask columns
  std::vector<int> labels;

  std::size_t duration() const { return series.empty() ? 0 : series.dim(0); }
};

/// Channel values on the one-minute grid before normalization.
struct ResampledSeries {
  std::size_t T = 1;
  std::vector<std::vector<double>> values;        // [C][T]
  std::vector<std::vector<unsigned char>> masks;  // [C][T]
};

inline double cap_outliers(double x, double p1, double p99) {
  if (!(p1 <= p99)) throw NumericError("cap_outliers: p1 must not exceed p99");
  return std::min(std::max(x, p1), p99);
}

/// (sin, cos) of the phase index/period; period is 7 (weekday) or 12 (month).
inline std::pair<double, double> encode_cyclical(int index, int period) {
  if (period != 7 && period != 12) throw DataError("encode_cyclical: period must be 7 or 12");
  if (index < 0 || index >= period) {
    throw DataError("encode_cyclical: index " + std::to_string(index) + " outside [0, " + std::to_string(period) + ")");
  }
  // Exact values at the quarter points keep encodings free of 1e-16 noise.
  const int quarter = 4 * index;
  if (quarter % period == 0) {
    static constexpr double s[] = {0.0, 1.0, 0.0, -1.0};
    static constexpr double c[] = {1.0, 0.0, -1.0, 0.0};
    const int q = quarter / period;
    return {s[q], c[q]};
  }
  const double angle = 2.0 * std::numbers::pi * index / period;
  return {std::sin(angle), std::cos(angle)};
}

/// Raw value of feature f for an encounter, computing derived features from the admission time.
inline std::optional<double> raw_feature_value(const RawEncounter& e, const Feature& f, std::size_t f_index) {
  switch (f.derive) {
    case Derivation::weekday_sin: return encode_cyclical(weekday_index(e.admit), 7).first;
    case Derivation::weekday_cos: return encode_cyclical(weekday_index(e.admit), 7).second;
    case Derivation::month_sin: return encode_cyclical(month_index(e.admit), 12).first;
    case Derivation::month_cos: return encode_cyclical(month_index(e.admit), 12).second;
    default: return f_index < e.static_values.size() ? e.static_values[f_index] : std::nullopt;
  }
}

inline double z_normalize(double v, double mean, double std) { return std > 0.0 ? (v - mean) / std : 0.0; }

namespace detail {

inline double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

/// Fits capping, imputation, normalization and level maps on the development cohort.
inline PreprocessorState fit(const Cohort& dev, const FeatureSchema& schema) {
  if (dev.empty()) throw DataError("preprocess fit: development cohort is empty");
  PreprocessorState st;
  st.schema_hash = schema_hash(schema);

  for (std::size_t fi : schema.numeric_features()) {
    const Feature& f = schema.features[fi];
    std::vector<double> observed;
    for (const auto& e : dev.encounters)
      if (auto v = raw_feature_value(e, f, fi)) observed.push_back(*v);
    NumericStats ns;
    std::sort(observed.begin(), observed.end());
    if (f.kind == FeatureKind::continuous) {
      if (observed.empty())
        throw DataError("preprocess fit: continuous feature '" + f.name + "' is never observed in the development cohort");
      if (f.derive == Derivation::none) {
        ns.p1 = percentile_sorted(observed, 0.01);
        ns.p99 = percentile_sorted(observed, 0.99);
      } else {
        // Cyclical encodings are bounded and exempt from capping.
        ns.p1 = observed.front();
        ns.p99 = observed.back();
      }
      for (double& v : observed) v = cap_outliers(v, ns.p1, ns.p99);
      ns.median = percentile_sorted(observed, 0.5);
    } else {
      std::size_t ones = 0;
      for (double v : observed) ones += v == 1.0;
      ns.p1 = 0.0;
      ns.p99 = 1.0;
      ns.median = 2 * ones > observed.size() ? 1.0 : 0.0;  // mode; ties resolve to 0
    }
    // Moments of the imputed, capped column, so the development set normalizes exactly.
    std::vector<double> column;
    column.reserve(dev.size());
    for (const auto& e : dev.encounters) {
      auto v = raw_feature_value(e, f, fi);
      column.push_back(v ? cap_outliers(*v, ns.p1, ns.p99) : ns.median);
    }
    ns.mean = detail::mean_of(column);
    ns.std = detail::sample_std(column, ns.mean);
    st.numeric.push_back(ns);
  }

  for (std::size_t fi : schema.onehot_features()) st.onehot_levels.push_back(schema.features[fi].levels);
  for (std::size_t fi : schema.embedded_features()) st.embedded_levels.push_back(schema.features[fi].levels);

  for (std::size_t c = 0; c < schema.channels.size(); ++c) {
    const Channel& ch = schema.channels[c];
    std::vector<double> observed;
    for (const auto& e : dev.encounters)
      for (const auto& m : e.series)
        if (m.channel == c && m.value >= ch.lo && m.value <= ch.hi) observed.push_back(m.value);
    ChannelStats cs;
    cs.lo = ch.lo;
    cs.hi = ch.hi;
    if (observed.empty()) {
      // Nothing to learn from: centre of the valid range, no scaling.
      cs.median = cs.mean = 0.5 * (ch.lo + ch.hi);
      cs.dev_min = ch.lo;
      cs.dev_max = ch.hi;
    } else {
      std::sort(observed.begin(), observed.end());
      cs.median = percentile_sorted(observed, 0.5);
      cs.mean = detail::mean_of(observed);
      cs.std = detail::sample_std(observed, cs.mean);
      cs.dev_min = observed.front();
      cs.dev_max = observed.back();
    }
    st.channels.push_back(cs);
  }
  return st;
}

inline void check_compatible(const PreprocessorState& st, const FeatureSchema& schema) {
  if (st.schema_hash != schema_hash(schema))
    throw ConfigError("preprocessor was fitted on a different schema (hash " + st.schema_hash + ")");
}

struct EncodedStatic {
  std::vector<double> numeric;
  std::vector<std::size_t> embedded_ids;
};

inline EncodedStatic encode_static(const RawEncounter& e, const PreprocessorState& st, const FeatureSchema& schema) {
  const auto& numeric = schema.numeric_features();
  const std::size_t m = numeric.size();
  EncodedStatic out;
  out.numeric.assign(schema.numeric_width(), 0.0);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t fi = numeric[k];
    const NumericStats& ns = st.numeric.at(k);
    const auto v = raw_feature_value(e, schema.features[fi], fi);
    const double filled = v ? cap_outliers(*v, ns.p1, ns.p99) : ns.median;
    out.numeric[k] = z_normalize(filled, ns.mean, ns.std);
    out.numeric[m + k] = v ? 1.0 : 0.0;
  }
  std::size_t offset = 2 * m;
  for (std::size_t fi : schema.onehot_features()) {
    const Feature& f = schema.features[fi];
    const auto& v = e.static_values.at(fi);
    const std::size_t level = v ? static_cast<std::size_t>(*v) : f.missing_index();
    if (level >= f.levels.size()) throw DataError("encounter '" + e.id + "': level index out of range for '" + f.name + "'");
    out.numeric[offset + level] = 1.0;
    offset += f.levels.size();
  }
  for (std::size_t fi : schema.embedded_features()) {
    const Feature& f = schema.features[fi];
    const auto& v = e.static_values.at(fi);
    const std::size_t id = v ? static_cast<std::size_t>(*v) : f.missing_index();
    if (id >= f.levels.size()) throw DataError("encounter '" + e.id + "': level index out of range for '" + f.name + "'");
    out.embedded_ids.push_back(id);
  }
  if (offset != schema.numeric_width()) throw NumericError("encode_static: width law violated");
  return out;
}

/// One-minute grid with range filtering, duplicate resolution and gap filling, before normalization.
inline ResampledSeries resample_series(const RawEncounter& e, const PreprocessorState& st,
                                       const FeatureSchema& schema) {
  const std::size_t C = schema.channels.size();
  ResampledSeries rs;
  int max_minute = -1;
  for (const auto& mm : e.series) max_minute = std::max(max_minute, mm.minute);
  rs.T = static_cast<std::size_t>(max_minute + 1);
  if (rs.T == 0) rs.T = 1;
  const std::size_t T = rs.T;
  rs.values.assign(C, std::vector<double>(T, 0.0));
  rs.masks.assign(C, std::vector<unsigned char>(T, 0));

  for (std::size_t c = 0; c < C; ++c) {
    const Channel& ch = schema.channels[c];
    auto& val = rs.values[c];
    auto& mask = rs.masks[c];
    // Rows are in file order, so a later row at the same minute replaces an earlier one.
    for (const auto& mm : e.series) {
      if (mm.channel != c || mm.value < ch.lo || mm.value > ch.hi) continue;
      const auto t = static_cast<std::size_t>(mm.minute);
      val[t] = mm.value;
      mask[t] = 1;
    }
    std::vector<std::size_t> obs;
    for (std::size_t t = 0; t < T; ++t)
      if (mask[t]) obs.push_back(t);
    if (obs.empty()) {
      std::fill(val.begin(), val.end(), st.channels.at(c).median);
      continue;
    }
    if (ch.gap_fill == GapFill::zero) {
      for (std::size_t t = 0; t < T; ++t)
        if (!mask[t]) val[t] = 0.0;
      continue;
    }
    for (std::size_t t = 0; t < obs.front(); ++t) val[t] = val[obs.front()];
    for (std::size_t t = obs.back() + 1; t < T; ++t) val[t] = val[obs.back()];
    for (std::size_t i = 0; i + 1 < obs.size(); ++i) {
      const std::size_t a = obs[i], b = obs[i + 1];
      for (std::size_t t = a + 1; t < b; ++t) {
        const double w = static_cast<double>(t - a) / static_cast<double>(b - a);
        val[t] = val[a] + w * (val[b] - val[a]);
      }
    }
  }
  return rs;
}

/// [T, 2C] model input: z-normalized values, then observation masks.
inline Tensor build_series(const RawEncounter& e, const PreprocessorState& st, const FeatureSchema& schema) {
  const ResampledSeries rs = resample_series(e, st, schema);
  const std::size_t C = schema.channels.size();
  Tensor x({rs.T, 2 * C});
  for (std::size_t t = 0; t < rs.T; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const ChannelStats& cs = st.channels[c];
      x.at(t, c) = z_normalize(rs.values[c][t], cs.mean, cs.std);
      x.at(t, C + c) = rs.masks[c][t];
    }
  }
  if (x.dim(1) != schema.series_width()) throw NumericError("build_series: width law violated");
  return x;
}

/// 49 statistics for each channel, channel-major.
inline std::vector<double> summarize_series(const ResampledSeries& rs, const PreprocessorState& st,
                                            const SeriesStatsConfig& cfg = {}) {
  std::vector<double> out;
  out.reserve(rs.values.size() * kSeriesStatCount);
  for (std::size_t c = 0; c < rs.values.size(); ++c) {
    const auto s = summarize_channel(rs.values[c], st.channels.at(c).dev_min, st.channels.at(c).dev_max, cfg);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

inline EncodedEncounter encode(const RawEncounter& e, const PreprocessorState& st, const FeatureSchema& schema,
                               bool with_series = true) {
  EncodedStatic s = encode_static(e, st, schema);
  EncodedEncounter out;
  out.id = e.id;
  out.numeric = std::move(s.numeric);
  out.embedded_ids = std::move(s.embedded_ids);
  if (with_series) out.series = build_series(e, st, schema);
  out.labels = e.outcomes;
  return out;
}

inline std::vector<EncodedEncounter> encode_cohort(const Cohort& c, const PreprocessorState& st,
                                                   bool with_series = true) {
  check_compatible(st, *c.schema);
  std::vector<EncodedEncounter> out;
  out.reserve(c.size());
  for (const auto& e : c.encounters) out.push_back(encode(e, st, *c.schema, with_series));
  return out;
}

inline nlohmann::json state_to_json(const PreprocessorState& st) {
  using nlohmann::json;
  json numeric = json::array();
  for (const auto& n : st.numeric)
    numeric.push_back({{"p1", n.p1}, {"p99", n.p99}, {"median", n.median}, {"mean", n.mean}, {"std", n.std}});
  json channels = json::array();
  for (const auto& c : st.channels)
    channels.push_back({{"median", c.median}, {"mean", c.mean}, {"std", c.std}, {"valid_range", {c.lo, c.hi}},
                        {"dev_range", {c.dev_min, c.dev_max}}});
  return json{{"format_version", kPreprocessorVersion},
              {"schema_hash", st.schema_hash},
              {"numeric", numeric},
              {"onehot_levels", st.onehot_levels},
              {"embedded_levels", st.embedded_levels},
              {"channels", channels}};
}

inline PreprocessorState state_from_json(const nlohmann::json& j) {
  PreprocessorState st;
  try {
    if (j.at("format_version").get<int>() != kPreprocessorVersion)
      throw ConfigError("preprocessor: unsupported format_version " + j.at("format_version").dump());
    st.schema_hash = j.at("schema_hash").get<std::string>();
    for (const auto& n : j.at("numeric"))
      st.numeric.push_back({n.at("p1").get<double>(), n.at("p99").get<double>(), n.at("median").get<double>(),
                            n.at("mean").get<double>(), n.at("std").get<double>()});
    st.onehot_levels = j.at("onehot_levels").get<std::vector<std::vector<std::string>>>();
    st.embedded_levels = j.at("embedded_levels").get<std::vector<std::vector<std::string>>>();
    for (const auto& c : j.at("channels")) {
      ChannelStats cs;
      cs.median = c.at("median").get<double>();
      cs.mean = c.at("mean").get<double>();
      cs.std = c.at("std").get<double>();
      cs.lo = c.at("valid_range").at(0).get<double>();
      cs.hi = c.at("valid_range").at(1).get<double>();
      cs.dev_min = c.at("dev_range").at(0).get<double>();
      cs.dev_max = c.at("dev_range").at(1).get<double>();
      st.channels.push_back(cs);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("preprocessor: ") + e.what());
  }
  return st;
}

inline void save_state(const PreprocessorState& st, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << state_to_json(st).dump(2) << '\n';
}

inline PreprocessorState load_state(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("preprocessor: parse error in " + path + ": " + e.what());
  }
  return state_from_json(j);
}

}  // namespace riskseq

#endif  // RISKSEQ_PREPROCESS_HPP
