#ifndef RISKSEQ_COHORT_HPP
#define RISKSEQ_COHORT_HPP

#include <algorithm>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "riskseq/csv.hpp"
#include "riskseq/error.hpp"
#include "riskseq/schema.hpp"
#include "riskseq/timeutil.hpp"

namespace riskseq {

/// One intraoperative measurement, minutes after anesthesia start.
struct Measurement {
  int minute = 0;
  std::size_t channel = 0;
  double value = 0.0;

  bool operator==(const Measurement&) const = default;
};

/// One surgical encounter as read from disk.
///
/// static_values is aligned with schema.features. Numeric cells hold the raw
/// value; nominal cells hold the level index. Derived features are left empty
/// and computed from admit at encode time.
struct RawEncounter {
  std::string id;
  TimePoint admit{};
  std::vector<std::optional<double>> static_values;
  std::vector<Measurement> series;  // file row order
  std::vector<int> outcomes;

  bool operator==(const RawEncounter&) const = default;
};

struct LoadReport {
  std::size_t unknown_levels = 0;  // nominal values mapped to the missing level
};

struct Cohort {
  std::shared_ptr<const FeatureSchema> schema;
  std::vector<RawEncounter> encounters;
  LoadReport report;

  std::size_t size() const { return encounters.size(); }
  bool empty() const { return encounters.empty(); }
};

struct CohortPaths {
  std::string static_csv;
  std::string series_csv;  // empty: no intraoperative data
  std::string outcomes_csv;

  static CohortPaths in_directory(const std::string& dir) {
    namespace fs = std::filesystem;
    return {(fs::path(dir) / "static.csv").string(), (fs::path(dir) / "series.csv").string(),
            (fs::path(dir) / "outcomes.csv").string()};
  }
};

inline Cohort load_cohort(std::shared_ptr<const FeatureSchema> schema, const CohortPaths& paths) {
  const FeatureSchema& s = *schema;
  Cohort cohort;
  cohort.schema = schema;

  const csv::Table st = csv::read_table(paths.static_csv);
  const std::size_t id_col = st.require_column("encounter_id");
  const std::size_t ts_col = st.require_column("admit_timestamp");
  std::vector<std::optional<std::size_t>> cols(s.features.size());
  for (std::size_t f = 0; f < s.features.size(); ++f) {
    if (s.features[f].derive != Derivation::none) continue;
    cols[f] = st.require_column(s.features[f].name);
  }

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < st.rows.size(); ++r) {
    const auto& row = st.rows[r];
    RawEncounter e;
    e.id = row[id_col];
    if (e.id.empty()) throw DataError(st.path + ": row " + std::to_string(r + 2) + " has an empty encounter_id");
    if (!index.emplace(e.id, r).second) throw DataError(st.path + ": duplicate encounter_id '" + e.id + "'");
    e.admit = parse_iso8601(row[ts_col]);
    e.static_values.resize(s.features.size());
    for (std::size_t f = 0; f < s.features.size(); ++f) {
      if (!cols[f]) continue;
      const std::string& cell = row[*cols[f]];
      if (cell.empty()) continue;
      const Feature& feat = s.features[f];
      if (feat.is_nominal()) {
        auto li = feat.level_index(cell);
        if (!li) ++cohort.report.unknown_levels;
        e.static_values[f] = static_cast<double>(li ? *li : feat.missing_index());
        continue;
      }
      auto v = csv::parse_double(cell);
      if (!v || !std::isfinite(*v))
        throw DataError(st.path + ": encounter '" + e.id + "' feature '" + feat.name + "' is not a number: '" + cell + "'");
      if (feat.kind == FeatureKind::binary && *v != 0.0 && *v != 1.0)
        throw DataError(st.path + ": encounter '" + e.id + "' binary feature '" + feat.name + "' must be 0 or 1");
      e.static_values[f] = *v;
    }
    cohort.encounters.push_back(std::move(e));
  }

  if (!paths.series_csv.empty()) {
    const csv::Table se = csv::read_table(paths.series_csv);
    const std::size_t sid = se.require_column("encounter_id");
    const std::size_t smin = se.require_column("minute");
    const std::size_t sch = se.require_column("channel");
    const std::size_t sval = se.require_column("value");
    for (std::size_t r = 0; r < se.rows.size(); ++r) {
      const auto& row = se.rows[r];
      const std::string where = se.path + ":" + std::to_string(r + 2);
      auto it = index.find(row[sid]);
      if (it == index.end()) throw DataError(where + ": unknown encounter_id '" + row[sid] + "'");
      auto minute = csv::parse_int(row[smin]);
      if (!minute) throw DataError(where + ": minute is not an integer: '" + row[smin] + "'");
      if (*minute < 0) throw DataError(where + ": negative minute offset " + row[smin]);
      auto ch = s.channel_index(row[sch]);
      if (!ch) throw DataError(where + ": unknown channel '" + row[sch] + "'");
      auto v = csv::parse_double(row[sval]);
      if (!v || !std::isfinite(*v)) throw DataError(where + ": value is not a number: '" + row[sval] + "'");
      cohort.encounters[it->second].series.push_back({static_cast<int>(*minute), *ch, *v});
    }
  }

  const csv::Table oc = csv::read_table(paths.outcomes_csv);
  const std::size_t oid = oc.require_column("encounter_id");
  std::vector<std::size_t> ocols;
  for (const std::string& o : s.outcomes) ocols.push_back(oc.require_column(o));
  std::vector<bool> labelled(cohort.encounters.size(), false);
  for (std::size_t r = 0; r < oc.rows.size(); ++r) {
    const auto& row = oc.rows[r];
    auto it = index.find(row[oid]);
    if (it == index.end())
      throw DataError(oc.path + ": encounter '" + row[oid] + "' does not appear in " + st.path);
    if (labelled[it->second]) throw DataError(oc.path + ": duplicate encounter_id '" + row[oid] + "'");
    labelled[it->second] = true;
    auto& e = cohort.encounters[it->second];
    for (std::size_t k = 0; k < ocols.size(); ++k) {
      auto v = csv::parse_int(row[ocols[k]]);
      if (!v || (*v != 0 && *v != 1)) {
        throw DataError(oc.path + ": encounter '" + e.id + "' outcome '" + s.outcomes[k] +
                        "' must be 0 or 1, got '" + row[ocols[k]] + "'");
      }
      e.outcomes.push_back(static_cast<int>(*v));
    }
  }
  for (std::size_t i = 0; i < labelled.size(); ++i)
    if (!labelled[i]) throw DataError(oc.path + ": no outcomes for encounter '" + cohort.encounters[i].id + "'");
  return cohort;
}

inline void write_cohort(const Cohort& cohort, const CohortPaths& paths) {
  const FeatureSchema& s = *cohort.schema;
  {
    csv::Writer w(paths.static_csv);
    std::vector<std::string> header{"encounter_id", "admit_timestamp"};
    for (const Feature& f : s.features)
      if (f.derive == Derivation::none) header.push_back(f.name);
    w.row(header);
    for (const RawEncounter& e : cohort.encounters) {
      std::vector<std::string> row{e.id, format_iso8601(e.admit)};
      for (std::size_t f = 0; f < s.features.size(); ++f) {
        const Feature& feat = s.features[f];
        if (feat.derive != Derivation::none) continue;
        const auto& v = e.static_values[f];
        if (!v) row.emplace_back();
        else if (feat.is_nominal()) row.push_back(feat.levels.at(static_cast<std::size_t>(*v)));
        else row.push_back(csv::format_double(*v));
      }
      w.row(row);
    }
  }
  if (!paths.series_csv.empty()) {
    csv::Writer w(paths.series_csv);
    w.row({"encounter_id", "minute", "channel", "value"});
    for (const RawEncounter& e : cohort.encounters)
      for (const Measurement& m : e.series)
        w.row({e.id, std::to_string(m.minute), s.channels[m.channel].name, csv::format_double(m.value)});
  }
  {
    csv::Writer w(paths.outcomes_csv);
    std::vector<std::string> header{"encounter_id"};
    header.insert(header.end(), s.outcomes.begin(), s.outcomes.end());
    w.row(header);
    for (const RawEncounter& e : cohort.encounters) {
      std::vector<std::string> row{e.id};
      for (int y : e.outcomes) row.push_back(std::to_string(y));
      w.row(row);
    }
  }
}

/// Development = admitted strictly before cutoff; validation = the rest. Order is preserved.
inline std::pair<Cohort, Cohort> split_chronological(const Cohort& cohort, TimePoint cutoff) {
  Cohort dev{cohort.schema, {}, {}};
  Cohort val{cohort.schema, {}, {}};
  for (const RawEncounter& e : cohort.encounters) (e.admit < cutoff ? dev : val).encounters.push_back(e);
  return {std::move(dev), std::move(val)};
}

/// Admission time at the given fraction of the chronologically sorted cohort.
inline TimePoint chronological_quantile(const Cohort& cohort, double fraction) {
  if (cohort.empty()) throw DataError("cannot place a cutoff in an empty cohort");
  std::vector<TimePoint> times;
  for (const auto& e : cohort.encounters) times.push_back(e.admit);
  std::sort(times.begin(), times.end());
  const auto k = static_cast<std::size_t>(fraction * static_cast<double>(times.size()));
  return times[std::min(k, times.size() - 1)];
}

/// Subset by position, keeping the schema.
inline Cohort subset(const Cohort& cohort, const std::vector<std::size_t>& rows) {
  Cohort out{cohort.schema, {}, {}};
  out.encounters.reserve(rows.size());
  for (std::size_t r : rows) out.encounters.push_back(cohort.encounters.at(r));
  return out;
}

}  // namespace riskseq

#endif  // RISKSEQ_COHORT_HPP
