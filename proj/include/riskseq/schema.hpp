#ifndef RISKSEQ_SCHEMA_HPP
#define RISKSEQ_SCHEMA_HPP

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "riskseq/error.hpp"
#include "riskseq/hash.hpp"

namespace riskseq {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::size_t kChannelCount = 14;
inline constexpr std::size_t kOutcomeCount = 9;
// Nominals with fewer levels than this are one-hot encoded, otherwise embedded.
inline constexpr std::size_t kEmbeddingCardinality = 20;
inline const std::string kMissingLevel = "missing";

enum class FeatureKind { continuous, binary, nominal };
enum class NominalEncoding { onehot, embedded };
enum class GapFill { interpolate, zero };

// Continuous features computed from the admission timestamp instead of read
// from the static file.
enum class Derivation { none, weekday_sin, weekday_cos, month_sin, month_cos };

struct Feature {
  std::string name;
  FeatureKind kind = FeatureKind::continuous;
  std::vector<std::string> levels;  // nominal only; includes kMissingLevel
  NominalEncoding encoding = NominalEncoding::onehot;
  Derivation derive = Derivation::none;

  bool is_nominal() const { return kind == FeatureKind::nominal; }
  bool is_numeric() const { return kind != FeatureKind::nominal; }
  bool is_embedded() const { return is_nominal() && encoding == NominalEncoding::embedded; }
  bool is_onehot() const { return is_nominal() && encoding == NominalEncoding::onehot; }

  /// Number of real (non-missing) levels.
  std::size_t cardinality() const { return levels.empty() ? 0 : levels.size() - 1; }

  std::size_t missing_index() const {
    auto it = std::find(levels.begin(), levels.end(), kMissingLevel);
    return static_cast<std::size_t>(it - levels.begin());
  }

  std::optional<std::size_t> level_index(const std::string& level) const {
    auto it = std::find(levels.begin(), levels.end(), level);
    if (it == levels.end()) return std::nullopt;
    return static_cast<std::size_t>(it - levels.begin());
  }
};

struct Channel {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
  GapFill gap_fill = GapFill::interpolate;
};

class FeatureSchema {
 public:
  std::vector<Feature> features;
  std::vector<Channel> channels;
  std::vector<std::string> outcomes;

  /// Checks every invariant and rebuilds the lookup tables.
  void validate() {
    std::set<std::string> seen;
    numeric_.clear();
    onehot_.clear();
    embedded_.clear();
    for (std::size_t i = 0; i < features.size(); ++i) {
      Feature& f = features[i];
      if (f.name.empty()) throw ConfigError("schema: feature " + std::to_string(i) + " has no name");
      if (!seen.insert(f.name).second) throw ConfigError("schema: duplicate feature name '" + f.name + "'");
      if (f.is_nominal()) {
        if (std::find(f.levels.begin(), f.levels.end(), kMissingLevel) == f.levels.end())
          f.levels.push_back(kMissingLevel);
        std::set<std::string> lv(f.levels.begin(), f.levels.end());
        if (lv.size() != f.levels.size())
          throw ConfigError("schema: nominal '" + f.name + "' has duplicate levels");
        if (f.cardinality() == 0) throw ConfigError("schema: nominal '" + f.name + "' has no levels");
        const bool want_embedded = f.cardinality() >= kEmbeddingCardinality;
        if (want_embedded != (f.encoding == NominalEncoding::embedded)) {
          throw ConfigError("schema: nominal '" + f.name + "' has " + std::to_string(f.cardinality()) +
                            " levels and must use " + (want_embedded ? "embedded" : "onehot") +
                            " encoding");
        }
        (f.is_embedded() ? embedded_ : onehot_).push_back(i);
      } else {
        if (!f.levels.empty()) throw ConfigError("schema: numeric feature '" + f.name + "' declares levels");
        if (f.derive != Derivation::none && f.kind != FeatureKind::continuous)
          throw ConfigError("schema: derived feature '" + f.name + "' must be continuous");
        numeric_.push_back(i);
      }
    }
    if (channels.size() != kChannelCount) {
      throw ConfigError("schema: expected " + std::to_string(kChannelCount) + " intraoperative channels, got " +
                        std::to_string(channels.size()));
    }
    std::set<std::string> cseen;
    for (const Channel& c : channels) {
      if (!cseen.insert(c.name).second) throw ConfigError("schema: duplicate channel '" + c.name + "'");
      if (!(c.lo <= c.hi)) throw ConfigError("schema: channel '" + c.name + "' has an empty valid range");
    }
    if (outcomes.size() != kOutcomeCount) {
      throw ConfigError("schema: expected " + std::to_string(kOutcomeCount) + " outcomes, got " +
                        std::to_string(outcomes.size()));
    }
    std::set<std::string> oseen(outcomes.begin(), outcomes.end());
    if (oseen.size() != outcomes.size()) throw ConfigError("schema: duplicate outcome name");
  }

  /// Continuous and binary feature indices in declaration order.
  const std::vector<std::size_t>& numeric_features() const { return numeric_; }
  const std::vector<std::size_t>& onehot_features() const { return onehot_; }
  const std::vector<std::size_t>& embedded_features() const { return embedded_; }

  std::size_t onehot_width() const {
    std::size_t w = 0;
    for (std::size_t i : onehot_) w += features[i].levels.size();
    return w;
  }
  /// Values, their presence masks, then one-hot blocks.
  std::size_t numeric_width() const { return 2 * numeric_.size() + onehot_width(); }
  std::size_t series_width() const { return 2 * channels.size(); }

  std::optional<std::size_t> feature_index(const std::string& name) const {
    for (std::size_t i = 0; i < features.size(); ++i)
      if (features[i].name == name) return i;
    return std::nullopt;
  }
  std::optional<std::size_t> channel_index(const std::string& name) const {
    for (std::size_t i = 0; i < channels.size(); ++i)
      if (channels[i].name == name) return i;
    return std::nullopt;
  }
  std::optional<std::size_t> outcome_index(const std::string& name) const {
    for (std::size_t i = 0; i < outcomes.size(); ++i)
      if (outcomes[i] == name) return i;
    return std::nullopt;
  }

  /// Column names of the numeric static vector, in encoding order.
  std::vector<std::string> numeric_column_names() const {
    std::vector<std::string> names;
    for (std::size_t i : numeric_) names.push_back(features[i].name);
    for (std::size_t i : numeric_) names.push_back(features[i].name + "__mask");
    for (std::size_t i : onehot_)
      for (const std::string& l : features[i].levels) names.push_back(features[i].name + "=" + l);
    return names;
  }

 private:
  std::vector<std::size_t> numeric_;
  std::vector<std::size_t> onehot_;
  std::vector<std::size_t> embedded_;
};

namespace detail {

inline const char* kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::continuous: return "continuous";
    case FeatureKind::binary: return "binary";
    default: return "nominal";
  }
}

inline const std::map<std::string, Derivation>& derivations() {
  static const std::map<std::string, Derivation> m{{"admit_weekday_sin", Derivation::weekday_sin},
                                                   {"admit_weekday_cos", Derivation::weekday_cos},
                                                   {"admit_month_sin", Derivation::month_sin},
                                                   {"admit_month_cos", Derivation::month_cos}};
  return m;
}

inline std::string derivation_name(Derivation d) {
  for (const auto& [k, v] : derivations())
    if (v == d) return k;
  return "";
}

}  // namespace detail

inline nlohmann::json schema_to_json(const FeatureSchema& s) {
  using nlohmann::json;
  json features = json::array();
  for (const Feature& f : s.features) {
    json jf{{"name", f.name}, {"kind", detail::kind_name(f.kind)}};
    if (f.is_nominal()) {
      jf["levels"] = f.levels;
      jf["encoding"] = f.is_embedded() ? "embedded" : "onehot";
    }
    if (f.derive != Derivation::none) jf["derive"] = detail::derivation_name(f.derive);
    features.push_back(std::move(jf));
  }
  json channels = json::array();
  for (const Channel& c : s.channels) {
    channels.push_back({{"name", c.name},
                        {"valid_range", {c.lo, c.hi}},
                        {"gap_fill", c.gap_fill == GapFill::zero ? "zero" : "interpolate"}});
  }
  return json{{"schema_version", kSchemaVersion},
              {"features", std::move(features)},
              {"channels", std::move(channels)},
              {"outcomes", s.outcomes}};
}

inline FeatureSchema schema_from_json(const nlohmann::json& j) {
  FeatureSchema s;
  try {
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw ConfigError("schema: unsupported schema_version " + j.at("schema_version").dump());
    for (const auto& jf : j.at("features")) {
      Feature f;
      f.name = jf.at("name").get<std::string>();
      const std::string kind = jf.at("kind").get<std::string>();
      if (kind == "continuous") f.kind = FeatureKind::continuous;
      else if (kind == "binary") f.kind = FeatureKind::binary;
      else if (kind == "nominal") f.kind = FeatureKind::nominal;
      else throw ConfigError("schema: feature '" + f.name + "' has unknown kind '" + kind + "'");
      if (f.is_nominal()) {
        f.levels = jf.at("levels").get<std::vector<std::string>>();
        const std::string enc = jf.at("encoding").get<std::string>();
        if (enc == "onehot") f.encoding = NominalEncoding::onehot;
        else if (enc == "embedded") f.encoding = NominalEncoding::embedded;
        else throw ConfigError("schema: feature '" + f.name + "' has unknown encoding '" + enc + "'");
      } else if (jf.contains("levels")) {
        f.levels = jf.at("levels").get<std::vector<std::string>>();
      }
      if (jf.contains("derive")) {
        const std::string d = jf.at("derive").get<std::string>();
        auto it = detail::derivations().find(d);
        if (it == detail::derivations().end())
          throw ConfigError("schema: feature '" + f.name + "' has unknown derivation '" + d + "'");
        f.derive = it->second;
      }
      s.features.push_back(std::move(f));
    }
    for (const auto& jc : j.at("channels")) {
      Channel c;
      c.name = jc.at("name").get<std::string>();
      const auto& r = jc.at("valid_range");
      c.lo = r.at(0).get<double>();
      c.hi = r.at(1).get<double>();
      const std::string fill = jc.value("gap_fill", "interpolate");
      if (fill == "zero") c.gap_fill = GapFill::zero;
      else if (fill == "interpolate") c.gap_fill = GapFill::interpolate;
      else throw ConfigError("schema: channel '" + c.name + "' has unknown gap_fill '" + fill + "'");
      s.channels.push_back(std::move(c));
    }
    s.outcomes = j.at("outcomes").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
  s.validate();
  return s;
}

inline FeatureSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("schema: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("schema: parse error in " + path + ": " + e.what());
  }
  return schema_from_json(j);
}

inline void save_schema(const FeatureSchema& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << schema_to_json(s).dump(2) << '\n';
}

/// Identity of a schema: SHA-256 of its canonical JSON.
inline std::string schema_hash(const FeatureSchema& s) { return sha256_hex(schema_to_json(s).dump()); }

namespace detail {

inline Feature nominal(std::string name, std::vector<std::string> levels) {
  Feature f;
  f.name = std::move(name);
  f.kind = FeatureKind::nominal;
  f.levels = std::move(levels);
  f.levels.push_back(kMissingLevel);
  f.encoding = f.cardinality() >= kEmbeddingCardinality ? NominalEncoding::embedded : NominalEncoding::onehot;
  return f;
}

inline Feature numbered_nominal(std::string name, std::size_t n) {
  std::vector<std::string> levels;
  for (std::size_t i = 0; i < n; ++i) levels.push_back(name + "_" + std::to_string(i));
  return nominal(std::move(name), std::move(levels));
}

}  // namespace detail

/// The perioperative layout: 88 continuous, 32 binary, 12 one-hot nominals
/// (55 columns), 4 embedded nominals, 14 channels and 9 outcomes.
inline FeatureSchema default_schema() {
  FeatureSchema s;
  auto cont = [&](const std::string& name, Derivation d = Derivation::none) {
    s.features.push_back(Feature{name, FeatureKind::continuous, {}, NominalEncoding::onehot, d});
  };
  auto bin = [&](const std::string& name) {
    s.features.push_back(Feature{name, FeatureKind::binary, {}, NominalEncoding::onehot, Derivation::none});
  };

  cont("age");
  bin("gender");
  s.features.push_back(detail::nominal("race", {"white", "african_american", "other"}));
  cont("bmi");
  s.features.push_back(detail::nominal("marital_status", {"married", "single", "divorced"}));
  bin("ethnicity");
  s.features.push_back(detail::nominal("primary_insurance", {"medicare", "private", "medicaid", "uninsured"}));
  s.features.push_back(detail::numbered_nominal("zip_code", 1908));
  bin("rural_area");
  for (const char* n : {"total_population", "median_income", "prop_african_american", "prop_hispanic",
                        "prop_below_poverty", "distance_to_hospital_km"})
    cont(n);
  cont("admit_weekday_sin", Derivation::weekday_sin);
  cont("admit_weekday_cos", Derivation::weekday_cos);
  cont("admit_month_sin", Derivation::month_sin);
  cont("admit_month_cos", Derivation::month_cos);
  s.features.push_back(detail::numbered_nominal("attending_surgeon", 311));
  for (const char* n : {"admission_source", "admission_emergent", "admitting_service_surgery", "night_admission"})
    bin(n);
  s.features.push_back(detail::numbered_nominal("surgery_type", 9));
  s.features.push_back(detail::numbered_nominal("scheduled_room", 64));
  bin("postop_location_icu");
  bin("trauma_room");
  cont("days_admission_to_surgery");
  s.features.push_back(detail::numbered_nominal("primary_procedure", 2126));
  cont("charlson_index");
  for (const char* n : {"myocardial_infarction", "congestive_heart_failure", "peripheral_vascular_disease",
                        "cerebrovascular_disease", "chronic_pulmonary_disease", "diabetes", "cancer",
                        "liver_disease", "valvular_disease", "coagulopathy", "weight_loss", "substance_abuse"})
    bin(n);
  s.features.push_back(detail::nominal("smoking_status", {"never", "former", "current"}));
  for (const char* n : {"betablockers", "diuretics", "statin", "aspirin", "ace_inhibitors", "pressors_inotropes",
                        "bicarbonate", "antiemetic", "aminoglycosides", "vancomycin", "nsaid"})
    bin(n);
  for (const char* n : {"urine_protein", "urine_hemoglobin", "urine_erythrocytes"})
    s.features.push_back(detail::nominal(n, {"negative", "trace", "small", "large"}));
  s.features.push_back(detail::nominal("urine_glucose", {"negative", "trace", "positive"}));
  s.features.push_back(detail::nominal("anesthesia_type", {"general", "regional"}));
  s.features.push_back(detail::nominal("patient_class", {"inpatient", "outpatient"}));
  s.features.push_back(detail::nominal("urine_ketones", {"negative", "positive"}));

  const std::vector<std::string> labs{"serum_glucose", "bun",        "serum_creatinine", "serum_calcium",
                                      "serum_sodium",  "serum_potassium", "serum_chloride", "serum_co2",
                                      "wbc",           "mch",        "mchc",             "rdw",
                                      "platelets",     "hemoglobin", "egfr",             "bun_creatinine_ratio"};
  for (const auto& l : labs) cont(l);
  for (const auto& l : labs) cont(l + "_tests_past_week");
  for (const auto& l : labs) cont(l + "_min_past_week");
  for (const auto& l : labs) cont(l + "_max_past_week");
  for (std::size_t i = 0; i < 10; ++i) cont(labs[i] + "_mean_past_year");

  s.channels = {
      {"systolic_bp", 40, 250, GapFill::interpolate},   {"diastolic_bp", 20, 160, GapFill::interpolate},
      {"etco2", 5, 80, GapFill::interpolate},           {"fio2", 15, 100, GapFill::interpolate},
      {"heart_rate", 20, 220, GapFill::interpolate},    {"mac", 0, 3, GapFill::interpolate},
      {"o2_flow", 0, 15, GapFill::interpolate},         {"peep", 0, 25, GapFill::interpolate},
      {"pip", 0, 60, GapFill::interpolate},             {"respiratory_rate", 4, 50, GapFill::interpolate},
      {"spo2", 50, 100, GapFill::interpolate},          {"temperature", 30, 42, GapFill::interpolate},
      {"urine_output", 0, 2000, GapFill::zero},         {"blood_loss", 0, 5000, GapFill::zero},
  };
  s.outcomes = {"icu_stay_48h", "mv_48h", "neuro_delirium", "sepsis", "aki",
                "cardiovascular", "vte", "wound", "mortality"};
  s.validate();
  return s;
}

}  // namespace riskseq

#endif  // RISKSEQ_SCHEMA_HPP
