#ifndef RISKSEQ_SYNTH_HPP
#define RISKSEQ_SYNTH_HPP

// Seeded synthetic cohorts with planted signal. For encounter i and outcome k
//   logit_ik = b_k + linear + interaction + series + mask + loading_k * latent_i
// and the label is Bernoulli(sigmoid(logit_ik + noise_k * eps_ik)), or
// 1[logit_ik > 0] for deterministic recipes. The intercept b_k is solved by
// bisection so the expected prevalence hits the target.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "riskseq/cohort.hpp"
#include "riskseq/csv.hpp"
#include "riskseq/error.hpp"
#include "riskseq/evaluation.hpp"
#include "riskseq/rng.hpp"
#include "riskseq/schema.hpp"
#include "riskseq/timeutil.hpp"

namespace riskseq {

struct InteractionTerm {
  std::string a, b;
  double weight = 0.0;  // weight * z_a * z_b
};

struct SeriesTerm {
  std::string channel;
  std::string stat;  // "level" (per-encounter channel offset) or "late_slope"
  double weight = 0.0;
};

struct OutcomeRecipe {
  std::string name;
  double prevalence = 0.1;
  double noise = 1.0;
  bool deterministic = false;
  double latent_loading = 0.0;
  std::map<std::string, double> linear;
  std::vector<InteractionTerm> interactions;
  std::vector<SeriesTerm> series;
  std::map<std::string, double> mask;  // weight on the observed indicator
};

struct SchemaDims {
  bool use_default = true;
  std::size_t continuous = 88;
  std::size_t binary = 32;
  std::size_t small_nominals = 12;
  std::vector<std::size_t> embedded_levels{1908, 311, 64, 2126};
};

struct SynthSpec {
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  SchemaDims schema;
  double duration_median = 120.0;  // lognormal, minutes
  double duration_sigma = 0.6;
  double duration_min = 20.0;
  double duration_max = 600.0;
  std::string start = "2014-01-01";
  double span_days = 1460.0;
  double missing_rate = 0.05;
  std::map<std::string, double> missingness;  // per-feature override
  double channel_dropout = 0.05;                // whole channel unobserved
  std::map<std::string, double> latent;         // feature -> loading of the shared factor
  bool with_series = true;
  std::vector<OutcomeRecipe> outcomes;

  void validate() const;
};

inline nlohmann::json synth_spec_to_json(const SynthSpec& s) {
  using nlohmann::json;
  json outcomes = json::array();
  for (const auto& o : s.outcomes) {
    json inter = json::array();
    for (const auto& t : o.interactions) inter.push_back({{"a", t.a}, {"b", t.b}, {"weight", t.weight}});
    json series = json::array();
    for (const auto& t : o.series) series.push_back({{"channel", t.channel}, {"stat", t.stat}, {"weight", t.weight}});
    outcomes.push_back({{"name", o.name}, {"prevalence", o.prevalence}, {"noise", o.noise},
                        {"deterministic", o.deterministic}, {"latent_loading", o.latent_loading},
                        {"linear", o.linear}, {"interaction", inter}, {"series", series}, {"mask", o.mask}});
  }
  json schema = s.schema.use_default ? json("default")
                                     : json{{"continuous", s.schema.continuous},
                                            {"binary", s.schema.binary},
                                            {"small_nominals", s.schema.small_nominals},
                                            {"embedded_levels", s.schema.embedded_levels}};
  return {{"n", s.n},
          {"seed", s.seed},
          {"schema", schema},
          {"duration", {{"median", s.duration_median}, {"sigma", s.duration_sigma}, {"min", s.duration_min},
                        {"max", s.duration_max}}},
          {"start", s.start},
          {"span_days", s.span_days},
          {"missing_rate", s.missing_rate},
          {"missingness", s.missingness},
          {"channel_dropout", s.channel_dropout},
          {"latent", s.latent},
          {"with_series", s.with_series},
          {"outcome", outcomes}};
}

/// Reads the synth.toml layout (as JSON); unspecified keys keep their defaults.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    s.n = j.value("n", s.n);
    s.seed = j.value("seed", s.seed);
    if (j.contains("schema")) {
      const auto& js = j.at("schema");
      if (js.is_string()) {
        if (js.get<std::string>() != "default") throw ConfigError("synth spec: schema must be \"default\" or a table");
      } else {
        s.schema.use_default = false;
        s.schema.continuous = js.value("continuous", s.schema.continuous);
        s.schema.binary = js.value("binary", s.schema.binary);
        s.schema.small_nominals = js.value("small_nominals", s.schema.small_nominals);
        s.schema.embedded_levels = js.value("embedded_levels", s.schema.embedded_levels);
      }
    }
    if (j.contains("duration")) {
      const auto& d = j.at("duration");
      s.duration_median = d.value("median", s.duration_median);
      s.duration_sigma = d.value("sigma", s.duration_sigma);
      s.duration_min = d.value("min", s.duration_min);
      s.duration_max = d.value("max", s.duration_max);
    }
    s.start = j.value("start", s.start);
    s.span_days = j.value("span_days", s.span_days);
    s.missing_rate = j.value("missing_rate", s.missing_rate);
    s.missingness = j.value("missingness", s.missingness);
    s.channel_dropout = j.value("channel_dropout", s.channel_dropout);
    s.latent = j.value("latent", s.latent);
    s.with_series = j.value("with_series", s.with_series);
    if (j.contains("outcome")) {
      for (const auto& jo : j.at("outcome")) {
        OutcomeRecipe o;
        o.name = jo.at("name").get<std::string>();
        o.prevalence = jo.value("prevalence", o.prevalence);
        o.noise = jo.value("noise", o.noise);
        o.deterministic = jo.value("deterministic", o.deterministic);
        o.latent_loading = jo.value("latent_loading", o.latent_loading);
        o.linear = jo.value("linear", o.linear);
        o.mask = jo.value("mask", o.mask);
        if (jo.contains("interaction"))
          for (const auto& t : jo.at("interaction"))
            o.interactions.push_back({t.at("a").get<std::string>(), t.at("b").get<std::string>(),
                                      t.at("weight").get<double>()});
        if (jo.contains("series"))
          for (const auto& t : jo.at("series"))
            o.series.push_back({t.at("channel").get<std::string>(), t.at("stat").get<std::string>(),
                                t.at("weight").get<double>()});
        s.outcomes.push_back(std::move(o));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

/// Default layout, or a reduced one with generic feature names.
inline FeatureSchema synth_schema(const SchemaDims& d) {
  if (d.use_default) return default_schema();
  FeatureSchema base = default_schema();
  FeatureSchema s;
  auto pad = [](std::size_t i) {
    std::string t = std::to_string(i);
    return std::string(3 - std::min<std::size_t>(3, t.size()), '0') + t;
  };
  for (std::size_t i = 0; i < d.continuous; ++i)
    s.features.push_back(Feature{"cont_" + pad(i), FeatureKind::continuous, {}, NominalEncoding::onehot, Derivation::none});
  for (std::size_t i = 0; i < d.binary; ++i)
    s.features.push_back(Feature{"bin_" + pad(i), FeatureKind::binary, {}, NominalEncoding::onehot, Derivation::none});
  for (std::size_t i = 0; i < d.small_nominals; ++i)
    s.features.push_back(detail::numbered_nominal("nom_" + pad(i), 2 + i % 5));
  for (std::size_t i = 0; i < d.embedded_levels.size(); ++i)
    s.features.push_back(detail::numbered_nominal("emb_" + pad(i), d.embedded_levels[i]));
  s.channels = base.channels;
  s.outcomes = base.outcomes;
  s.validate();
  return s;
}

inline void SynthSpec::validate() const {
  if (n < 2) throw ConfigError("synth spec: n must be at least 2");
  if (!(duration_min > 0.0 && duration_max >= duration_min)) throw ConfigError("synth spec: duration bounds must be positive and ordered");
  if (!(duration_median > 0.0) || duration_sigma < 0.0) throw ConfigError("synth spec: bad duration distribution");
  if (!(span_days > 0.0)) throw ConfigError("synth spec: span_days must be positive");
  auto rate_ok = [](double r) { return r >= 0.0 && r < 1.0; };
  if (!rate_ok(missing_rate) || !rate_ok(channel_dropout)) throw ConfigError("synth spec: rates must be in [0, 1)");
  for (const auto& [f, r] : missingness)
    if (!rate_ok(r)) throw ConfigError("synth spec: missingness for '" + f + "' must be in [0, 1)");
  if (!schema.use_default)
    for (std::size_t l : schema.embedded_levels)
      if (l + 1 < kEmbeddingCardinality) throw ConfigError("synth spec: embedded nominals need at least 19 levels");
  const FeatureSchema fs = synth_schema(schema);
  auto numeric_feature = [&](const std::string& name) {
    const auto fi = fs.feature_index(name);
    if (!fi) throw ConfigError("synth spec: unknown feature '" + name + "'");
    const Feature& f = fs.features[*fi];
    if (f.is_nominal() || f.derive != Derivation::none)
      throw ConfigError("synth spec: feature '" + name + "' must be a stored continuous or binary feature");
  };
  for (const auto& [f, _] : missingness)
    if (!fs.feature_index(f)) throw ConfigError("synth spec: unknown feature '" + f + "' in missingness");
  for (const auto& [f, _] : latent) numeric_feature(f);
  std::set<std::string> seen;
  for (const auto& o : outcomes) {
    if (!fs.outcome_index(o.name)) throw ConfigError("synth spec: unknown outcome '" + o.name + "'");
    if (!seen.insert(o.name).second) throw ConfigError("synth spec: outcome '" + o.name + "' given twice");
    if (!(o.prevalence > 0.01 && o.prevalence < 0.5))
      throw ConfigError("synth spec: prevalence for '" + o.name + "' must be in (0.01, 0.5), got " +
                        std::to_string(o.prevalence));
    if (o.noise < 0.0) throw ConfigError("synth spec: noise must be non-negative");
    for (const auto& [f, _] : o.linear) numeric_feature(f);
    for (const auto& t : o.interactions) {
      numeric_feature(t.a);
      numeric_feature(t.b);
    }
    for (const auto& [f, _] : o.mask)
      if (!fs.feature_index(f)) throw ConfigError("synth spec: unknown feature '" + f + "' in mask terms");
    for (const auto& t : o.series) {
      if (!fs.channel_index(t.channel)) throw ConfigError("synth spec: unknown channel '" + t.channel + "'");
      if (t.stat != "level" && t.stat != "late_slope")
        throw ConfigError("synth spec: series stat must be 'level' or 'late_slope', got '" + t.stat + "'");
      if (!with_series) throw ConfigError("synth spec: series terms need with_series = true");
    }
  }
}

struct GroundTruth {
  std::vector<std::string> outcomes;
  std::vector<std::vector<double>> logits;  // [encounter][outcome], noise excluded
  std::vector<double> intercepts;
  std::vector<double> realized_prevalence;
};

struct SynthResult {
  Cohort cohort;
  GroundTruth truth;
};

namespace detail {

struct ChannelProfile {
  double mid, sd;
  std::size_t interval;  // minutes between samples
};

inline ChannelProfile channel_profile(const Channel& c) {
  static const std::map<std::string, ChannelProfile> known{
      {"systolic_bp", {115, 15, 3}}, {"diastolic_bp", {65, 10, 3}}, {"etco2", {36, 4, 1}},
      {"fio2", {55, 12, 2}},         {"heart_rate", {75, 12, 1}},   {"mac", {0.9, 0.25, 2}},
      {"o2_flow", {2, 0.8, 5}},      {"peep", {5, 1.5, 5}},         {"pip", {20, 4, 2}},
      {"respiratory_rate", {12, 2.5, 1}}, {"spo2", {97, 1.5, 1}},   {"temperature", {36.4, 0.4, 5}},
      {"urine_output", {60, 30, 30}}, {"blood_loss", {80, 60, 30}}};
  const auto it = known.find(c.name);
  if (it != known.end()) return it->second;
  return {0.5 * (c.lo + c.hi), (c.hi - c.lo) / 10.0, 2};
}

// Divide by the integer reciprocal so the result is the double nearest k * step.
inline double round_to(double v, double step) {
  const double inv = std::round(1.0 / step);
  return std::round(v * inv) / inv;
}

}  // namespace detail

/// Generates the cohort and its ground truth from a single sequential stream.
inline SynthResult generate(const SynthSpec& spec) {
  spec.validate();
  auto schema = std::make_shared<const FeatureSchema>(synth_schema(spec.schema));
  const FeatureSchema& s = *schema;
  const std::size_t n = spec.n, F = s.features.size(), C = s.channels.size(), K = s.outcomes.size();
  Rng rng(spec.seed);

  // Per-feature generating parameters.
  std::vector<double> loc(F), scale(F), pbin(F), miss(F);
  for (std::size_t f = 0; f < F; ++f) {
    loc[f] = 10.0 * static_cast<double>(1 + f % 7);
    scale[f] = 1.0 + static_cast<double>(f % 5);
    pbin[f] = 0.1 + 0.6 * static_cast<double>(f % 11) / 10.0;
    const auto it = spec.missingness.find(s.features[f].name);
    miss[f] = it != spec.missingness.end() ? it->second : spec.missing_rate;
  }

  const TimePoint start = parse_iso8601(spec.start);
  const double slot = spec.span_days * 86400.0 / static_cast<double>(n);

  std::vector<std::vector<double>> z(n, std::vector<double>(F, 0.0));  // standardized signal, 0 when missing
  std::vector<std::vector<bool>> observed(n, std::vector<bool>(F, false));
  std::vector<std::vector<double>> level(n, std::vector<double>(C)), slope(n, std::vector<double>(C));
  std::vector<double> latent(n, 0.0);

  SynthResult out;
  Cohort& cohort = out.cohort;
  cohort.schema = schema;
  cohort.encounters.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    RawEncounter& e = cohort.encounters[i];
    char id[32];
    std::snprintf(id, sizeof id, "E%06zu", i + 1);
    e.id = id;
    e.admit = start + std::chrono::seconds(static_cast<long long>(std::floor(slot * (static_cast<double>(i) + rng.uniform()))));
    e.static_values.assign(F, std::nullopt);
    for (std::size_t f = 0; f < F; ++f) {
      const Feature& feat = s.features[f];
      if (feat.derive != Derivation::none) continue;
      const double zf = rng.normal();
      const double u = rng.uniform();
      if (rng.uniform() < miss[f]) continue;
      observed[i][f] = true;
      switch (feat.kind) {
        case FeatureKind::continuous:
          z[i][f] = zf;
          e.static_values[f] = detail::round_to(loc[f] + scale[f] * zf, 1e-4);
          break;
        case FeatureKind::binary: {
          const double x = u < pbin[f] ? 1.0 : 0.0;
          z[i][f] = (x - pbin[f]) / std::sqrt(pbin[f] * (1.0 - pbin[f]));
          e.static_values[f] = x;
          break;
        }
        case FeatureKind::nominal: {
          // Skewed toward low level indices; the missing level is never drawn.
          const std::size_t L = feat.levels.size() - 1;
          e.static_values[f] = static_cast<double>(std::min(L - 1, static_cast<std::size_t>(u * u * static_cast<double>(L))));
          break;
        }
      }
    }
    double lat = 0.0, norm = 0.0;
    for (const auto& [name, a] : spec.latent) {
      lat += a * z[i][*s.feature_index(name)];
      norm += a * a;
    }
    latent[i] = norm > 0.0 ? lat / std::sqrt(norm) : 0.0;

    if (!spec.with_series) continue;
    const double dur = std::clamp(std::round(spec.duration_median * std::exp(spec.duration_sigma * rng.normal())),
                                  spec.duration_min, spec.duration_max);
    const auto D = static_cast<std::size_t>(dur);
    for (std::size_t c = 0; c < C; ++c) {
      const Channel& ch = s.channels[c];
      const auto prof = detail::channel_profile(ch);
      level[i][c] = rng.normal();
      slope[i][c] = rng.normal();
      const bool dropped = rng.uniform() < spec.channel_dropout;
      const std::size_t phase = rng.index(prof.interval);
      double ar = 0.0;
      for (std::size_t t = 0; t < D; ++t) {
        ar = 0.8 * ar + 0.6 * rng.normal();
        if (dropped || t % prof.interval != phase) continue;
        const double late = std::max(0.0, (static_cast<double>(t) - 0.75 * dur) / (0.25 * dur));
        double v = prof.mid + prof.sd * (level[i][c] + slope[i][c] * late + 0.3 * ar);
        if (ch.gap_fill == GapFill::zero) v = std::max(0.0, v);
        v = std::clamp(detail::round_to(v, 0.01), ch.lo, ch.hi);
        e.series.push_back({static_cast<int>(t), c, v});
      }
    }
    // Interleave channels by minute, as monitors export them.
    std::stable_sort(e.series.begin(), e.series.end(),
                     [](const Measurement& a, const Measurement& b) { return a.minute < b.minute; });
  }

  // Signal and labels, one outcome at a time.
  GroundTruth& gt = out.truth;
  gt.outcomes = s.outcomes;
  gt.logits.assign(n, std::vector<double>(K, 0.0));
  gt.intercepts.assign(K, 0.0);
  gt.realized_prevalence.assign(K, 0.0);
  for (auto& e : cohort.encounters) e.outcomes.assign(K, 0);
  for (std::size_t k = 0; k < K; ++k) {
    OutcomeRecipe r;
    r.name = s.outcomes[k];
    for (const auto& o : spec.outcomes)
      if (o.name == r.name) r = o;
    std::vector<double> signal(n, 0.0), eps(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double v = r.latent_loading * latent[i];
      for (const auto& [name, w] : r.linear) v += w * z[i][*s.feature_index(name)];
      for (const auto& t : r.interactions) v += t.weight * z[i][*s.feature_index(t.a)] * z[i][*s.feature_index(t.b)];
      for (const auto& t : r.series) {
        const std::size_t c = *s.channel_index(t.channel);
        v += t.weight * (t.stat == "level" ? level[i][c] : slope[i][c]);
      }
      for (const auto& [name, w] : r.mask) v += w * (observed[i][*s.feature_index(name)] ? 1.0 : 0.0);
      signal[i] = v;
      eps[i] = r.deterministic ? 0.0 : r.noise * rng.normal();
    }
    auto rate = [&](double b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        acc += r.deterministic ? (signal[i] + b > 0.0 ? 1.0 : 0.0) : ad::sigmoid(signal[i] + b + eps[i]);
      return acc / static_cast<double>(n);
    };
    double lo = -20.0, hi = 20.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (rate(mid) < r.prevalence ? lo : hi) = mid;
    }
    const double b = 0.5 * (lo + hi);
    if (std::abs(rate(b) - r.prevalence) > 0.01)
      throw ConfigError("synth spec: prevalence " + std::to_string(r.prevalence) + " for '" + r.name +
                        "' is unreachable with this signal (closest " + std::to_string(rate(b)) + ")");
    gt.intercepts[k] = b;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double logit = signal[i] + b;
      gt.logits[i][k] = logit;
      const int y = r.deterministic ? (logit > 0.0 ? 1 : 0) : (rng.uniform() < ad::sigmoid(logit + eps[i]) ? 1 : 0);
      cohort.encounters[i].outcomes[k] = y;
      pos += y;
    }
    gt.realized_prevalence[k] = static_cast<double>(pos) / static_cast<double>(n);
  }
  return out;
}

/// AUROC of the generating logits against the realized labels, per outcome.
inline std::vector<double> oracle_auroc(const GroundTruth& gt, const Cohort& cohort) {
  std::vector<double> out;
  for (std::size_t k = 0; k < gt.outcomes.size(); ++k) {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      s.push_back(gt.logits.at(i).at(k));
      y.push_back(cohort.encounters[i].outcomes.at(k));
    }
    const auto [pos, neg] = detail::class_counts(y);
    if (pos == 0 || neg == 0) throw DataError("oracle_auroc: outcome '" + gt.outcomes[k] + "' drew a single class");
    out.push_back(auroc(s, y));
  }
  return out;
}

inline void write_ground_truth(const GroundTruth& gt, const Cohort& cohort, const std::string& path) {
  csv::Writer w(path);
  std::vector<std::string> header{"encounter_id"};
  for (const auto& o : gt.outcomes) header.push_back(o);
  w.row(header);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    std::vector<std::string> row{cohort.encounters[i].id};
    for (double v : gt.logits[i]) row.push_back(csv::format_double(v));
    w.row(row);
  }
}

/// Writes schema.json, static.csv, series.csv, outcomes.csv and ground_truth.csv into `dir`.
inline void write_synth(const SynthResult& r, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_schema(*r.cohort.schema, (fs::path(dir) / "schema.json").string());
  CohortPaths paths = CohortPaths::in_directory(dir);
  if (r.cohort.encounters.empty() || std::all_of(r.cohort.encounters.begin(), r.cohort.encounters.end(),
                                                 [](const RawEncounter& e) { return e.series.empty(); }))
    paths.series_csv.clear();
  write_cohort(r.cohort, paths);
  write_ground_truth(r.truth, r.cohort, (fs::path(dir) / "ground_truth.csv").string());
}

}  // namespace riskseq

#endif  // RISKSEQ_SYNTH_HPP
