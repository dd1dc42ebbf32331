#include <gtest/gtest.h>

#include <cmath>

#include "riskseq/baseline.hpp"
#include "riskseq/synth.hpp"
#include "riskseq/toml.hpp"
#include "support.hpp"

using namespace riskseq;
using riskseq::testing::TempDir;

namespace {

SynthSpec small_spec(std::size_t n, bool series = false) {
  SynthSpec s;
  s.n = n;
  s.seed = 17;
  s.schema.use_default = false;
  s.schema.continuous = 6;
  s.schema.binary = 2;
  s.schema.small_nominals = 1;
  s.schema.embedded_levels = {20};
  s.with_series = series;
  s.duration_median = 30;
  s.duration_min = 20;
  s.duration_max = 40;
  return s;
}

std::vector<double> column(const SynthResult& r, std::size_t k) {
  std::vector<double> v;
  for (const auto& row : r.truth.logits) v.push_back(row[k]);
  return v;
}

std::vector<int> labels(const SynthResult& r, std::size_t k) {
  std::vector<int> y;
  for (const auto& e : r.cohort.encounters) y.push_back(e.outcomes[k]);
  return y;
}

std::size_t outcome(const SynthResult& r, const std::string& name) { return *r.cohort.schema->outcome_index(name); }

OutcomeRecipe recipe(const std::string& name, double prevalence, double noise = 1.0) {
  OutcomeRecipe o;
  o.name = name;
  o.prevalence = prevalence;
  o.noise = noise;
  return o;
}

}  // namespace

TEST(Generate, NoSignalHitsPrevalenceAndChance) {
  SynthSpec spec = small_spec(10000);
  spec.outcomes.push_back(recipe("mortality", 0.2));
  const SynthResult r = generate(spec);
  const std::size_t k = outcome(r, "mortality");
  EXPECT_NEAR(r.truth.realized_prevalence[k], 0.2, 0.02);
  EXPECT_LT(std::abs(oracle_auroc(r.truth, r.cohort)[k] - 0.5), 0.02);
}

TEST(Generate, DeterministicRecipeHasPerfectOracle) {
  SynthSpec spec = small_spec(2000);
  spec.outcomes.push_back([] { auto o = recipe("aki", 0.25); o.deterministic = true; o.linear = {{"cont_001", 1.0}}; return o; }());
  const SynthResult r = generate(spec);
  EXPECT_EQ(oracle_auroc(r.truth, r.cohort)[outcome(r, "aki")], 1.0);
}

TEST(Generate, PlantedLinearSignalIsReproducible) {
  SynthSpec spec = small_spec(3000);
  spec.outcomes.push_back([] { auto o = recipe("sepsis", 0.15, 1.0); o.linear = {{"cont_002", 1.5}, {"bin_000", -0.7}}; return o; }());
  const SynthResult a = generate(spec), b = generate(spec);
  const std::size_t k = outcome(a, "sepsis");
  const double oa = oracle_auroc(a.truth, a.cohort)[k];
  EXPECT_EQ(oa, oracle_auroc(b.truth, b.cohort)[k]);
  EXPECT_GT(oa, 0.75);
  EXPECT_LT(oa, 1.0);
  EXPECT_EQ(column(a, k), column(b, k));
  // the oracle is the AUROC of the stored logits by definition
  EXPECT_DOUBLE_EQ(oa, auroc(column(a, k), labels(a, k)));
}

TEST(Generate, DifferentSeedsDiffer) {
  SynthSpec spec = small_spec(200);
  const SynthResult a = generate(spec);
  spec.seed = 18;
  const SynthResult b = generate(spec);
  EXPECT_NE(a.cohort.encounters[0].static_values, b.cohort.encounters[0].static_values);
}

TEST(Generate, SameSpecWritesIdenticalFiles) {
  SynthSpec spec = small_spec(150, true);
  spec.outcomes.push_back([] { auto o = recipe("mv_48h", 0.2); o.series = {{"spo2", "level", -1.0}}; return o; }());
  TempDir a("synth"), b("synth");
  write_synth(generate(spec), a.file("d"));
  write_synth(generate(spec), b.file("d"));
  for (const char* f : {"schema.json", "static.csv", "series.csv", "outcomes.csv", "ground_truth.csv"}) {
    const std::string x = riskseq::testing::read_text(a.file(std::string("d/") + f));
    ASSERT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, riskseq::testing::read_text(b.file(std::string("d/") + f))) << f;
  }
}

TEST(Generate, WrittenCohortLoadsBack) {
  SynthSpec spec = small_spec(120, true);
  const SynthResult r = generate(spec);
  TempDir dir("synth");
  write_synth(r, dir.file("d"));
  const auto schema = std::make_shared<const FeatureSchema>(load_schema(dir.file("d/schema.json")));
  EXPECT_EQ(schema_hash(*schema), schema_hash(*r.cohort.schema));
  const Cohort back = load_cohort(schema, CohortPaths::in_directory(dir.file("d")));
  ASSERT_EQ(back.size(), r.cohort.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back.encounters[i].outcomes, r.cohort.encounters[i].outcomes);
    EXPECT_EQ(back.encounters[i].series.size(), r.cohort.encounters[i].series.size());
  }
}

TEST(Generate, DurationsRespectBounds) {
  SynthSpec spec = small_spec(300, true);
  spec.channel_dropout = 0.0;
  const SynthResult r = generate(spec);
  for (const auto& e : r.cohort.encounters) {
    int last = 0;
    for (const auto& m : e.series) last = std::max(last, m.minute);
    EXPECT_LT(last, 40);
    EXPECT_GE(last + 1, 20 - 10);  // sparse channels may stop a few minutes early
  }
}

TEST(Generate, InteractionDefeatsLinearModel) {
  SynthSpec spec = small_spec(4000);
  spec.missing_rate = 0.0;
  spec.outcomes.push_back([] { auto o = recipe("sepsis", 0.3, 0.3); o.interactions = {{"cont_000", "cont_001", 4.0}}; return o; }());
  const SynthResult r = generate(spec);
  const std::size_t k = outcome(r, "sepsis");
  EXPECT_GT(oracle_auroc(r.truth, r.cohort)[k], 0.9);

  // logistic regression on the two raw inputs
  Tensor X({4000, 2});
  for (std::size_t i = 0; i < 4000; ++i) {
    X.at(i, 0) = *r.cohort.encounters[i].static_values[0];
    X.at(i, 1) = *r.cohort.encounters[i].static_values[1];
  }
  for (std::size_t j = 0; j < 2; ++j) {
    double mu = 0, sd = 0;
    for (std::size_t i = 0; i < 4000; ++i) mu += X.at(i, j) / 4000;
    for (std::size_t i = 0; i < 4000; ++i) sd += (X.at(i, j) - mu) * (X.at(i, j) - mu) / 3999;
    for (std::size_t i = 0; i < 4000; ++i) X.at(i, j) = (X.at(i, j) - mu) / std::sqrt(sd);
  }
  const auto y = labels(r, k);
  const LogisticTask t = fit_logistic(X, y, class_weights(y, "sepsis"), 1.0, 1e-8, 5000);
  EXPECT_LT(std::abs(auroc(predict_logistic(t, X), y) - 0.5), 0.05);
}

TEST(Generate, MaskTermMakesObservationInformative) {
  SynthSpec spec = small_spec(4000);
  spec.missingness["cont_003"] = 0.5;
  spec.outcomes.push_back([] { auto o = recipe("vte", 0.2, 0.3); o.mask = {{"cont_003", 3.0}}; return o; }());
  const SynthResult r = generate(spec);
  const std::size_t k = outcome(r, "vte");
  double pos_obs = 0, pos = 0, neg_obs = 0, neg = 0;
  for (const auto& e : r.cohort.encounters) {
    const bool obs = e.static_values[3].has_value();
    (e.outcomes[k] ? pos : neg) += 1;
    (e.outcomes[k] ? pos_obs : neg_obs) += obs;
  }
  EXPECT_GT(pos_obs / pos, neg_obs / neg + 0.3);
}

TEST(Generate, SharedLatentCorrelatesOutcomes) {
  SynthSpec spec = small_spec(5000);
  spec.latent = {{"cont_000", 1.0}, {"cont_001", 1.0}};
  spec.outcomes.push_back([] { auto o = recipe("aki", 0.2, 0.3); o.latent_loading = 2.0; return o; }());
  spec.outcomes.push_back([] { auto o = recipe("vte", 0.03, 0.3); o.latent_loading = 2.0; return o; }());
  const SynthResult r = generate(spec);
  const std::size_t a = outcome(r, "aki"), v = outcome(r, "vte");
  double both = 0, va = 0, aa = 0;
  for (const auto& e : r.cohort.encounters) {
    both += e.outcomes[a] && e.outcomes[v];
    va += e.outcomes[v];
    aa += e.outcomes[a];
  }
  EXPECT_NEAR(va / 5000, 0.03, 0.01);
  EXPECT_GT(both / va, 2.0 * aa / 5000);  // P(aki | vte) well above P(aki)
}

TEST(Generate, SeriesLevelTermShowsInChannelMean) {
  SynthSpec spec = small_spec(1500, true);
  spec.channel_dropout = 0.0;
  spec.outcomes.push_back([] { auto o = recipe("mv_48h", 0.25, 0.3); o.series = {{"heart_rate", "level", 2.5}}; return o; }());
  const SynthResult r = generate(spec);
  const std::size_t k = outcome(r, "mv_48h"), hr = *r.cohort.schema->channel_index("heart_rate");
  std::vector<double> means;
  for (const auto& e : r.cohort.encounters) {
    double s = 0, c = 0;
    for (const auto& m : e.series)
      if (m.channel == hr) {
        s += m.value;
        ++c;
      }
    means.push_back(s / c);
  }
  EXPECT_GT(auroc(means, labels(r, k)), 0.8);
}

TEST(Spec, UnreachablePrevalenceIsError) {
  SynthSpec spec = small_spec(1000);
  spec.missing_rate = 0.0;
  // a single binary driver leaves only the rates P(bin=1) and 1 reachable
  spec.outcomes.push_back([] { auto o = recipe("aki", 0.45); o.deterministic = true; o.linear = {{"bin_000", 5.0}}; return o; }());
  EXPECT_THROW(generate(spec), ConfigError);
}

TEST(Spec, ValidationErrors) {
  SynthSpec spec = small_spec(100);
  spec.outcomes.push_back(recipe("aki", 0.9));
  EXPECT_THROW(spec.validate(), ConfigError);
  spec.outcomes[0] = recipe("nope", 0.2);
  EXPECT_THROW(spec.validate(), ConfigError);
  spec.outcomes[0] = [] { auto o = recipe("aki", 0.2); o.linear = {{"nom_000", 1.0}}; return o; }();
  EXPECT_THROW(spec.validate(), ConfigError);
  spec.outcomes[0] = [] { auto o = recipe("aki", 0.2); o.series = {{"spo2", "mean", 1.0}}; return o; }();
  EXPECT_THROW(spec.validate(), ConfigError);
  spec.outcomes.clear();
  spec.duration_min = 0;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = small_spec(100);
  spec.schema.embedded_levels = {5};
  EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(Spec, ParsesTomlLayout) {
  const std::string text = R"(n = 50
seed = 4
[schema]
continuous = 3
binary = 1
small_nominals = 1
embedded_levels = [25]
[duration]
median = 25
min = 20
max = 30
[[outcome]]
name = "sepsis"
prevalence = 0.2
linear = { cont_000 = 1.0 }
interaction = [{ a = "cont_001", b = "cont_002", weight = 2.0 }]
)";
  const SynthSpec s = synth_spec_from_json(toml::parse(text));
  EXPECT_EQ(s.n, 50u);
  EXPECT_EQ(s.schema.embedded_levels, std::vector<std::size_t>{25});
  ASSERT_EQ(s.outcomes.size(), 1u);
  EXPECT_EQ(s.outcomes[0].interactions[0].b, "cont_002");
  EXPECT_EQ(s.outcomes[0].linear.at("cont_000"), 1.0);
  EXPECT_THROW(synth_spec_from_json(toml::parse("[[outcome]]\nprevalence = 0.2\n")), ConfigError);
  const SynthSpec back = synth_spec_from_json(synth_spec_to_json(s));
  EXPECT_EQ(back.outcomes[0].interactions[0].weight, 2.0);
}
