#ifndef RISKSEQ_TESTS_SUPPORT_HPP
#define RISKSEQ_TESTS_SUPPORT_HPP

// Small fixtures shared by the unit tests.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <unistd.h>

#include "riskseq/cohort.hpp"
#include "riskseq/schema.hpp"
#include "riskseq/timeutil.hpp"

namespace riskseq::testing {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("riskseq_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// age, gender, race (3 levels, one-hot), surgeon (25 levels, embedded),
/// the two weekday encodings, the default channels and outcomes.
inline FeatureSchema tiny_schema() {
  FeatureSchema s = default_schema();
  std::vector<Feature> f;
  f.push_back(Feature{"age", FeatureKind::continuous, {}, NominalEncoding::onehot, Derivation::none});
  f.push_back(Feature{"gender", FeatureKind::binary, {}, NominalEncoding::onehot, Derivation::none});
  f.push_back(detail::nominal("race", {"white", "african_american", "other"}));
  f.push_back(detail::numbered_nominal("surgeon", 25));
  f.push_back(Feature{"admit_weekday_sin", FeatureKind::continuous, {}, NominalEncoding::onehot, Derivation::weekday_sin});
  f.push_back(Feature{"admit_weekday_cos", FeatureKind::continuous, {}, NominalEncoding::onehot, Derivation::weekday_cos});
  s.features = std::move(f);
  s.validate();
  return s;
}

inline std::shared_ptr<const FeatureSchema> tiny_schema_ptr() {
  return std::make_shared<const FeatureSchema>(tiny_schema());
}

inline std::size_t channel(const FeatureSchema& s, const std::string& name) { return *s.channel_index(name); }

inline RawEncounter blank_encounter(const FeatureSchema& s, const std::string& id) {
  RawEncounter e;
  e.id = id;
  e.admit = parse_iso8601("2017-06-05");
  e.static_values.assign(s.features.size(), std::nullopt);
  e.outcomes.assign(s.outcomes.size(), 0);
  return e;
}

/// Tiny-schema cohort with some intraoperative rows. Outcome k is a noisy
/// threshold of age (odd k) or of mean heart rate (even k), so every outcome has
/// both classes and some signal.
inline Cohort labelled_cohort(std::size_t n, unsigned seed) {
  Cohort c;
  c.schema = tiny_schema_ptr();
  const FeatureSchema& s = *c.schema;
  std::mt19937 gen(seed);
  std::normal_distribution<double> age(60, 15), z(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t a = *s.feature_index("age"), g = *s.feature_index("gender"), r = *s.feature_index("race"),
                    sg = *s.feature_index("surgeon");
  for (std::size_t i = 0; i < n; ++i) {
    RawEncounter e = blank_encounter(s, "e" + std::to_string(i));
    e.admit = parse_iso8601("2016-01-01") + std::chrono::hours(static_cast<int>(i) * 31);
    const double years = age(gen);
    if (u(gen) < 0.85) e.static_values[a] = std::round(years * 10) / 10;
    if (u(gen) < 0.9) e.static_values[g] = u(gen) < 0.4 ? 1.0 : 0.0;
    if (u(gen) < 0.9) e.static_values[r] = static_cast<double>(static_cast<int>(u(gen) * 3));
    if (u(gen) < 0.9) e.static_values[sg] = static_cast<double>(static_cast<int>(u(gen) * u(gen) * 25));
    const double hr = 80 + 15 * z(gen);
    const int T = 5 + static_cast<int>(u(gen) * 25);
    for (int t = 0; t < T; ++t) {
      if (u(gen) < 0.6) e.series.push_back({t, channel(s, "heart_rate"), hr + 5 * z(gen)});
      if (u(gen) < 0.3) e.series.push_back({t, channel(s, "spo2"), 90 + u(gen) * 10});
    }
    for (std::size_t k = 0; k < s.outcomes.size(); ++k) {
      const double score = k % 2 ? (years - 60) / 15 : (hr - 80) / 15;
      e.outcomes[k] = score + 0.7 * z(gen) > 0.3 ? 1 : 0;
    }
    c.encounters.push_back(std::move(e));
  }
  return c;
}

}  // namespace riskseq::testing

#endif  // RISKSEQ_TESTS_SUPPORT_HPP
