// Acceptance checks, one line per criterion. Exit status is nonzero when any
// criterion fails. Usage: acceptance [--only N]... [--keep DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "riskseq/attribution.hpp"
#include "riskseq/commands.hpp"
#include "riskseq/evaluation.hpp"
#include "riskseq/model.hpp"
#include "riskseq/training.hpp"
#include "support.hpp"

using namespace riskseq;
namespace fs = std::filesystem;

namespace {

// ---- tolerances ----------------------------------------------------------------
constexpr double kGradRelTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr std::size_t kReceptiveField = 255;
constexpr std::size_t kIgSteps = 256;
constexpr double kIgRelTol = 1e-3;
constexpr double kIgAbsTol = 1e-6;
constexpr std::size_t kMetricInstances = 1000;
constexpr std::size_t kCoverageReps = 100;
constexpr std::size_t kCoverageMinHits = 90;
constexpr std::size_t kNriTables = 1000;
constexpr double kDeepMargin = 0.05;
constexpr double kOracleSlack = 0.03;
constexpr double kDeepMinutes = 30.0;
constexpr double kMultitaskSlack = 0.01;
constexpr std::size_t kMaskTopRank = 3;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

EncodedEncounter random_encounter(const FeatureSchema& s, std::size_t T, std::mt19937_64& gen) {
  std::normal_distribution<double> n(0, 1);
  EncodedEncounter e;
  e.id = "r";
  e.numeric.resize(s.numeric_width());
  for (auto& v : e.numeric) v = n(gen);
  for (std::size_t fi : s.embedded_features()) e.embedded_ids.push_back(gen() % s.features[fi].levels.size());
  e.series = Tensor({T, s.series_width()});
  for (auto& v : e.series.storage()) v = n(gen);
  e.labels.resize(s.outcomes.size());
  for (auto& y : e.labels) y = static_cast<int>(gen() % 2);
  return e;
}

// ---- 1 ------------------------------------------------------------------------

Verdict gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const FeatureSchema s = riskseq::testing::tiny_schema();
  ModelConfig c;
  c.embed_dim = 3;
  c.hidden = 8;
  c.conv_layers = 2;
  c.conv_channels = 8;
  c.phase = Phase::postop;
  const Model m = build(c, s, 101);
  std::mt19937_64 gen(101);
  const EncodedEncounter e = random_encounter(s, 40, gen);
  std::vector<ClassWeights> w;
  for (std::size_t k = 0; k < s.outcomes.size(); ++k) w.push_back({0.6 + 0.1 * k, 1.4 - 0.05 * k});

  auto loss_of = [&](const Model& mm) {
    ad::Tape tape;
    BoundParams p(tape, mm.params, false);
    return sample_loss(mm, p, make_inputs(tape, e, mm, p), e.labels, w).value()[0];
  };
  ad::Tape tape;
  BoundParams p(tape, m.params, true);
  tape.backward(sample_loss(m, p, make_inputs(tape, e, m, p), e.labels, w));
  const ParameterMap g = p.gradients(tape);

  const double h = 1e-5;
  double worst = 0.0;
  std::string worst_at;
  std::size_t checked = 0;
  Model probe = m;
  for (const auto& [name, t] : m.params) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      Tensor& q = probe.params.at(name);
      const double keep = q[i];
      q[i] = keep + h;
      const double up = loss_of(probe);
      q[i] = keep - h;
      const double down = loss_of(probe);
      q[i] = keep;
      const double num = (up - down) / (2 * h);
      const double a = g.at(name)[i];
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6});
      if (rel > worst) {
        worst = rel;
        worst_at = name + "[" + std::to_string(i) + "]";
      }
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < kGradRelTol && secs < kGradSeconds,
          fmt("%zu parameters, max rel err %.2e at %s (< %.0e), %.1f s (< %.0f s)", checked, worst, worst_at.c_str(),
              kGradRelTol, secs, kGradSeconds)};
}

// ---- 2 ------------------------------------------------------------------------

Verdict causality() {
  const FeatureSchema s = riskseq::testing::tiny_schema();
  ModelConfig c;  // full-size stack: 7 layers, 64 channels
  c.phase = Phase::intraop;
  const Model m = build(c, s, 202);
  std::mt19937_64 gen(202);
  const std::size_t T = 300, W = s.series_width();
  const EncodedEncounter e = random_encounter(s, T, gen);

  auto layers = [&](const Tensor& x) {
    ad::Tape tape;
    BoundParams p(tape, m.params, false);
    std::vector<Tensor> out;
    for (const auto& l : conv_stack(m, p, tape.constant(x)).layers) out.push_back(l.value());
    return out;
  };
  const auto base = layers(e.series);
  std::size_t leaks = 0, inert = 0;
  for (std::size_t tp = 0; tp < T; ++tp) {
    Tensor x = e.series;
    for (std::size_t j = 0; j < W; ++j) x.at(tp, j) += 0.75;
    const auto pert = layers(x);
    for (std::size_t l = 0; l < base.size(); ++l) {
      for (std::size_t t = 0; t < tp; ++t)
        for (std::size_t ch = 0; ch < base[l].dim(1); ++ch) leaks += base[l].at(t, ch) != pert[l].at(t, ch);
    }
    bool moved = false;
    for (std::size_t ch = 0; ch < base.back().dim(1); ++ch) moved |= base.back().at(tp, ch) != pert.back().at(tp, ch);
    inert += !moved;
  }

  // Gradient support of one top-layer minute.
  auto support = [&](std::size_t t_out) {
    ad::Tape tape;
    BoundParams p(tape, m.params, false);
    const ad::Var x = tape.leaf(e.series);
    const ad::Var top = conv_stack(m, p, x).layers.back();
    Tensor pick(top.value().shape());
    for (std::size_t ch = 0; ch < pick.dim(1); ++ch) pick.at(t_out, ch) = 1.0;
    tape.backward(ad::sum(ad::mul(top, tape.constant(pick))));
    const Tensor* gx = tape.grad_if_any(x.id);
    std::vector<std::size_t> minutes;
    for (std::size_t t = 0; gx && t < T; ++t) {
      bool any = false;
      for (std::size_t j = 0; j < W; ++j) any |= gx->at(t, j) != 0.0;
      if (any) minutes.push_back(t);
    }
    return minutes;
  };
  const std::size_t t_out = T - 1;
  const auto sup = support(t_out);
  const bool contiguous = !sup.empty() && sup.back() == t_out && sup.back() - sup.front() + 1 == sup.size();
  const auto early = support(100);  // clipped at minute 0
  const bool clipped = early.size() == 101 && early.front() == 0;
  return {leaks == 0 && inert == 0 && contiguous && sup.size() == kReceptiveField && clipped,
          fmt("%zu perturbed minutes x 7 layers, %zu earlier outputs changed, %zu perturbations with no effect; "
              "top-layer support %zu minutes [%zu, %zu] (want %zu)",
              T, leaks, inert, sup.size(), sup.empty() ? 0 : sup.front(), sup.empty() ? 0 : sup.back(),
              kReceptiveField)};
}

// ---- 3 ------------------------------------------------------------------------

Verdict ig_completeness() {
  const FeatureSchema s = riskseq::testing::tiny_schema();
  ModelConfig c;
  c.embed_dim = 4;
  c.hidden = 16;
  c.conv_layers = 7;
  c.conv_channels = 8;
  c.phase = Phase::postop;
  const Model m = build(c, s, 303);
  std::mt19937_64 gen(303);
  std::uniform_int_distribution<std::size_t> len(5, 80);
  double worst = 0.0;  // gap / allowed
  std::size_t failures = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const EncodedEncounter e = random_encounter(s, len(gen), gen);
    const AttributionResult r = integrated_gradients(m, s, e, i % s.outcomes.size(), kIgSteps);
    double total = 0.0;
    for (double a : r.attributions) total += a;
    const double delta = r.f_x - r.f_baseline;
    const double gap = std::abs(total - delta);
    const double allowed = kIgRelTol * std::abs(delta) + kIgAbsTol;
    worst = std::max(worst, gap / allowed);
    failures += !(gap < allowed);
  }

  // Linear function: w_i * x_i exactly.
  std::normal_distribution<double> n(0, 1);
  std::size_t inexact = 0, lin = 0;
  for (std::size_t rep = 0; rep < 100; ++rep) {
    const std::size_t d = 1 + rep % 17;
    Tensor w({d}), x({d});
    for (auto& v : w.storage()) v = n(gen);
    for (auto& v : x.storage()) v = 3 * n(gen);
    const PathFunction f = [&](ad::Tape& tape, const std::vector<ad::Var>& in) {
      return ad::sum(ad::mul(in[0], tape.constant(w)));
    };
    for (std::size_t steps : {std::size_t{1}, std::size_t{16}, kIgSteps}) {
      const PathAttribution r = integrated_gradients(f, {x}, steps);
      for (std::size_t i = 0; i < d; ++i) {
        inexact += r.attributions[0][i] != w[i] * x[i];
        ++lin;
      }
    }
  }
  return {failures == 0 && inexact == 0,
          fmt("100 encounters at m=%zu: %zu over tolerance, worst gap %.3f of allowed; linear: %zu/%zu inexact",
              kIgSteps, failures, worst, inexact, lin)};
}

// ---- 4 ------------------------------------------------------------------------

struct Instance {
  std::vector<double> s;
  std::vector<int> y;
};

Instance random_instance(std::mt19937_64& gen) {
  std::uniform_int_distribution<int> size(2, 200), grid(0, 12);
  std::uniform_real_distribution<double> u(0, 1);
  Instance in;
  const int n = size(gen);
  const bool coarse = u(gen) < 0.5;
  const double prev = 0.05 + 0.5 * u(gen);
  do {
    in.s.clear();
    in.y.clear();
    for (int i = 0; i < n; ++i) {
      in.y.push_back(u(gen) < prev ? 1 : 0);
      in.s.push_back(coarse ? grid(gen) / 12.0 : u(gen) + 0.4 * in.y.back());
    }
  } while (std::count(in.y.begin(), in.y.end(), 1) == 0 || std::count(in.y.begin(), in.y.end(), 0) == 0);
  return in;
}

double oracle_auroc(const Instance& in) {
  double hits = 0, pairs = 0;
  for (std::size_t i = 0; i < in.s.size(); ++i)
    for (std::size_t j = 0; j < in.s.size(); ++j)
      if (in.y[i] == 1 && in.y[j] == 0) {
        pairs += 1;
        hits += in.s[i] > in.s[j] ? 1.0 : in.s[i] == in.s[j] ? 0.5 : 0.0;
      }
  return hits / pairs;
}

struct Counts {
  double tp = 0, fp = 0, tn = 0, fn = 0;
};

Counts count_at(const Instance& in, double t) {
  Counts c;
  for (std::size_t i = 0; i < in.s.size(); ++i) {
    const bool p = in.s[i] >= t;
    if (in.y[i]) (p ? c.tp : c.fn) += 1;
    else (p ? c.fp : c.tn) += 1;
  }
  return c;
}

double oracle_auprc(const Instance& in) {
  std::set<double, std::greater<>> thresholds(in.s.begin(), in.s.end());
  double area = 0, prev = 0;
  for (double t : thresholds) {
    const Counts c = count_at(in, t);
    const double recall = c.tp / (c.tp + c.fn);
    area += (recall - prev) * (c.tp / (c.tp + c.fp));
    prev = recall;
  }
  return area;
}

std::pair<double, double> oracle_youden(const Instance& in) {
  std::vector<double> cand(in.s);
  cand.push_back(std::numeric_limits<double>::infinity());
  std::sort(cand.begin(), cand.end());
  double best_j = -2, best_t = 0;
  for (double t : cand) {
    const Counts c = count_at(in, t);
    const double j = c.tp / (c.tp + c.fn) + c.tn / (c.tn + c.fp) - 1.0;
    if (j > best_j) {
      best_j = j;
      best_t = t;
    }
  }
  return {best_t, best_j};
}

bool same_ratio(const MetricValue& v, double num, double den) {
  if (den == 0) return !v.value.has_value();
  return v.value && *v.value == num / den;
}

Verdict metric_oracles() {
  std::mt19937_64 gen(404);
  std::uniform_real_distribution<double> u(-0.1, 1.5);
  std::size_t bad_auroc = 0, bad_auprc = 0, bad_youden = 0, bad_conf = 0;
  for (std::size_t rep = 0; rep < kMetricInstances; ++rep) {
    const Instance in = random_instance(gen);
    bad_auroc += auroc(in.s, in.y) != oracle_auroc(in);
    bad_auprc += auprc(in.s, in.y) != oracle_auprc(in);
    const auto [t, j] = oracle_youden(in);
    const YoudenResult yr = youden_threshold(in.s, in.y);
    bad_youden += yr.threshold != t || yr.j != j;
    for (double thr : {t, u(gen)}) {
      const Counts c = count_at(in, thr);
      const ConfusionMetrics m = confusion_metrics(in.s, in.y, thr);
      const bool ok = m.tp == c.tp && m.fp == c.fp && m.tn == c.tn && m.fn == c.fn &&
                      same_ratio(m.sensitivity, c.tp, c.tp + c.fn) && same_ratio(m.specificity, c.tn, c.tn + c.fp) &&
                      same_ratio(m.ppv, c.tp, c.tp + c.fp) && same_ratio(m.npv, c.tn, c.tn + c.fn) &&
                      same_ratio(m.accuracy, c.tp + c.tn, static_cast<double>(in.s.size()));
      bad_conf += !ok;
    }
  }
  return {bad_auroc + bad_auprc + bad_youden + bad_conf == 0,
          fmt("%zu instances: mismatches auroc %zu, auprc %zu, youden %zu, confusion %zu", kMetricInstances, bad_auroc,
              bad_auprc, bad_youden, bad_conf)};
}

// ---- 5 ------------------------------------------------------------------------

Verdict bootstrap_behavior() {
  std::mt19937_64 gen(505);
  std::normal_distribution<double> n(0, 1);
  // Binormal population: AUROC = Phi(delta / sqrt 2).
  const double delta = 1.0;
  const double truth = 0.5 * std::erfc(-delta / 2.0);
  const std::size_t pos = 90, neg = 210, B = 1000;

  auto sample = [&](Instance& in) {
    in.s.clear();
    in.y.clear();
    for (std::size_t i = 0; i < pos; ++i) {
      in.s.push_back(delta + n(gen));
      in.y.push_back(1);
    }
    for (std::size_t i = 0; i < neg; ++i) {
      in.s.push_back(n(gen));
      in.y.push_back(0);
    }
  };
  Instance in;
  sample(in);
  const BootstrapResult a = bootstrap_ci(auroc_metric(), in.s, in.y, B, 77);
  const BootstrapResult b = bootstrap_ci(auroc_metric(), in.s, in.y, B, 77);
  const bool identical = a.lo == b.lo && a.hi == b.hi && a.samples == b.samples;

  std::size_t hits = 0;
  for (std::size_t rep = 0; rep < kCoverageReps; ++rep) {
    sample(in);
    const BootstrapResult r = bootstrap_ci(auroc_metric(), in.s, in.y, B, 1000 + rep);
    hits += r.lo <= truth && truth <= r.hi;
  }
  return {identical && hits >= kCoverageMinHits && hits <= kCoverageReps,
          fmt("repeat with seed 77 %s; true AUROC %.4f covered %zu/%zu (want >= %zu)",
              identical ? "bit-identical" : "DIFFERS", truth, hits, kCoverageReps, kCoverageMinHits)};
}

// ---- 6 ------------------------------------------------------------------------

Verdict nri_oracle() {
  std::mt19937_64 gen(606);
  std::uniform_int_distribution<int> cell(0, 40);
  std::size_t mismatch = 0, asym = 0;
  for (std::size_t rep = 0; rep < kNriTables; ++rep) {
    // Reclassification table per class: (old high?, new high?) cell counts.
    int ev[2][2], ne[2][2];
    int E = 0, NE = 0;
    do {
      E = NE = 0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          E += ev[a][b] = cell(gen);
          NE += ne[a][b] = cell(gen);
        }
    } while (E == 0 || NE == 0);
    Instance old_in, new_in;
    auto emit = [&](int label, int a, int b, int count) {
      for (int i = 0; i < count; ++i) {
        old_in.s.push_back(a ? 0.6 + 0.01 * (i % 7) : 0.1 + 0.01 * (i % 5));
        new_in.s.push_back(b ? 0.3 + 0.01 * (i % 3) : 0.05);
        old_in.y.push_back(label);
      }
    };
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        emit(1, a, b, ev[a][b]);
        emit(0, a, b, ne[a][b]);
      }
    // Shuffle rows jointly.
    std::vector<std::size_t> perm(old_in.s.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<double> os, ns;
    std::vector<int> y;
    for (std::size_t i : perm) {
      os.push_back(old_in.s[i]);
      ns.push_back(new_in.s[i]);
      y.push_back(old_in.y[i]);
    }
    const double t_old = 0.5, t_new = 0.25;
    const double expect = (static_cast<double>(ev[0][1]) - ev[1][0]) / E + (static_cast<double>(ne[1][0]) - ne[0][1]) / NE;
    const NRIResult f = nri(os, ns, y, t_old, t_new, 0, 0);
    const NRIResult r = nri(ns, os, y, t_new, t_old, 0, 0);
    mismatch += f.nri_index != expect || f.events_up != static_cast<std::size_t>(ev[0][1]) ||
                f.events_down != static_cast<std::size_t>(ev[1][0]) ||
                f.nonevents_up != static_cast<std::size_t>(ne[0][1]) ||
                f.nonevents_down != static_cast<std::size_t>(ne[1][0]);
    asym += r.nri_index != -f.nri_index;
  }
  return {mismatch == 0 && asym == 0,
          fmt("%zu random tables: %zu differ from direct count, %zu not antisymmetric", kNriTables, mismatch, asym)};
}

// ---- synthetic experiments -----------------------------------------------------

std::string config_file(const std::string& name) { return (fs::path(RISKSEQ_CONFIG_DIR) / name).string(); }

struct Experiment {
  SynthSpec spec;
  SynthResult synth;
  Cohort dev, val;
  PreprocessorState pre;
  std::vector<std::size_t> val_rows;  // generation index of each validation encounter
};

Experiment prepare(const std::string& spec_name) {
  Experiment x;
  x.spec = synth_spec_from_json(toml::parse_file(config_file(spec_name)));
  x.synth = generate(x.spec);
  const Cohort& all = x.synth.cohort;
  std::tie(x.dev, x.val) = split_chronological(all, chronological_quantile(all, 0.8));
  std::map<std::string, std::size_t> row;
  for (std::size_t i = 0; i < all.size(); ++i) row[all.encounters[i].id] = i;
  for (const auto& e : x.val.encounters) x.val_rows.push_back(row.at(e.id));
  x.pre = fit(x.dev, *all.schema);
  return x;
}

std::size_t outcome_of(const Experiment& x, const std::string& name) { return *x.synth.cohort.schema->outcome_index(name); }

std::vector<int> val_labels(const Experiment& x, std::size_t k) {
  std::vector<int> y;
  for (const auto& e : x.val.encounters) y.push_back(e.outcomes.at(k));
  return y;
}

double val_oracle(const Experiment& x, std::size_t k) {
  std::vector<double> s;
  for (std::size_t i : x.val_rows) s.push_back(x.synth.truth.logits.at(i).at(k));
  return auroc(s, val_labels(x, k));
}

TrainConfig train_config(const std::string& name, Phase phase, std::optional<std::size_t> single = std::nullopt) {
  TrainConfig c = train_config_from_json(toml::parse_file(config_file(name)));
  c.model.phase = phase;
  c.model.single_task = single;
  return c;
}

// Validation AUROC of a trained deep model for outcome k.
double deep_auroc(const Experiment& x, const Model& m, std::size_t k) {
  const FeatureSchema& s = *x.synth.cohort.schema;
  std::vector<EncodedEncounter> enc;
  for (const auto& e : x.val.encounters) enc.push_back(encode(e, x.pre, s, uses_series(m.config.phase)));
  const auto probs = predict_all(m, enc);
  const auto tasks = m.config.active_tasks();
  const std::size_t j = std::find(tasks.begin(), tasks.end(), k) - tasks.begin();
  std::vector<double> col;
  for (const auto& p : probs) col.push_back(p.at(j));
  return auroc(col, val_labels(x, k));
}

// ---- 7 ------------------------------------------------------------------------

Verdict deep_vs_logistic() {
  const auto t0 = std::chrono::steady_clock::now();
  const Experiment x = prepare("nonlinear.toml");
  const FeatureSchema& s = *x.synth.cohort.schema;
  const std::size_t nl = outcome_of(x, "sepsis"), lin = outcome_of(x, "mortality");

  const TrainResult deep = train(x.dev, s, x.pre, train_config("train_acceptance.toml", Phase::postop));
  const double deep_nl = deep_auroc(x, deep.model, nl), deep_lin = deep_auroc(x, deep.model, lin);

  const LogisticModel lm = train_baseline(x.dev, Phase::postop, x.pre, BaselineConfig{}, {nl, lin});
  const Tensor X = design_matrix(x.val, x.pre, lm.design);
  const double base_nl = auroc(predict_logistic(baseline_task(lm, "sepsis"), X), val_labels(x, nl));
  const double base_lin = auroc(predict_logistic(baseline_task(lm, "mortality"), X), val_labels(x, lin));
  const double oracle_nl = val_oracle(x, nl), oracle_lin = val_oracle(x, lin);
  const double minutes = seconds_since(t0) / 60.0;

  const bool pass = deep_nl - base_nl >= kDeepMargin && deep_lin >= oracle_lin - kOracleSlack &&
                    base_lin >= oracle_lin - kOracleSlack && minutes < kDeepMinutes;
  return {pass, fmt("nonlinear outcome: deep %.3f, logistic %.3f (margin %.3f, want >= %.2f), oracle %.3f; "
                    "linear outcome: deep %.3f, logistic %.3f, oracle %.3f (slack %.2f); %.1f min",
                    deep_nl, base_nl, deep_nl - base_nl, kDeepMargin, oracle_nl, deep_lin, base_lin, oracle_lin,
                    kOracleSlack, minutes)};
}

// ---- 8 ------------------------------------------------------------------------

Verdict multitask_rare() {
  const Experiment x = prepare("correlated_rare.toml");
  const FeatureSchema& s = *x.synth.cohort.schema;
  const std::size_t k = outcome_of(x, "vte");
  const auto y = val_labels(x, k);
  const std::size_t pos = std::count(y.begin(), y.end(), 1);

  const TrainResult multi = train(x.dev, s, x.pre, train_config("train_acceptance.toml", Phase::preop));
  const TrainResult single = train(x.dev, s, x.pre, train_config("train_acceptance.toml", Phase::preop, k));
  const double a_multi = deep_auroc(x, multi.model, k), a_single = deep_auroc(x, single.model, k);
  const double gap = a_multi - a_single;
  return {gap >= -kMultitaskSlack && gap > 0.0,
          fmt("rare outcome (prevalence %.3f, %zu validation events, synth seed %llu): multitask %.3f, single-task "
              "%.3f, gap %+.3f (want >= -%.2f and > 0), oracle %.3f",
              x.synth.truth.realized_prevalence[k], pos, static_cast<unsigned long long>(x.spec.seed), a_multi, a_single, gap,
              kMultitaskSlack, val_oracle(x, k))};
}

// ---- 9 ------------------------------------------------------------------------

Verdict missingness_importance() {
  const Experiment x = prepare("missingness.toml");
  const FeatureSchema& s = *x.synth.cohort.schema;
  const std::size_t k = outcome_of(x, "wound");
  const std::string planted = "cont_005__mask";
  const TrainResult r = train(x.dev, s, x.pre, train_config("train_acceptance.toml", Phase::postop));

  std::vector<EncodedEncounter> enc;
  for (std::size_t i = 0; i < std::min<std::size_t>(200, x.val.size()); ++i)
    enc.push_back(encode(x.val.encounters[i], x.pre, s, true));
  const auto ranking = rank_features(attribute_cohort(r.model, s, enc, k, 64));
  std::size_t rank = 0;
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (ranking[i].feature == planted) rank = i + 1;
  std::string top;
  for (std::size_t i = 0; i < std::min<std::size_t>(5, ranking.size()); ++i)
    top += (i ? ", " : "") + ranking[i].feature + fmt(" %.3f", ranking[i].mean_abs);
  return {rank >= 1 && rank <= kMaskTopRank,
          fmt("%s ranks %zu of %zu for wound over %zu validation encounters (want <= %zu); top: %s", planted.c_str(),
              rank, ranking.size(), enc.size(), kMaskTopRank, top.c_str())};
}

// ---- 10 -----------------------------------------------------------------------

std::string g_keep;  // --keep DIR: leave the reproduce run there

std::map<std::string, std::string> deterministic_outputs(const nlohmann::json& manifest) {
  std::map<std::string, std::string> out;
  for (const auto& o : manifest.at("outputs"))
    if (o.at("deterministic").get<bool>()) out[o.at("path").get<std::string>()] = o.at("sha256").get<std::string>();
  return out;
}

Verdict pipeline_integrity() {
  std::unique_ptr<riskseq::testing::TempDir> tmp;
  std::string dir = g_keep;
  if (dir.empty()) {
    tmp = std::make_unique<riskseq::testing::TempDir>("reproduce");
    dir = tmp->file("run");
  }
  std::ostringstream log;
  if (const int rc = cli::run_cli({"reproduce", "--all", "--out", dir}, log, log); rc != 0)
    return {false, fmt("reproduce exited %d: %s", rc, log.str().c_str())};

  // Every metric point and interval present for every row.
  const nlohmann::json report = read_json((fs::path(dir) / "report.json").string());
  const FeatureSchema schema = load_schema((fs::path(dir) / "data" / "schema.json").string());
  std::set<std::string> models;
  std::size_t cells = 0, empty = 0;
  for (const auto& row : report.at("rows")) {
    models.insert(row.at("model").get<std::string>());
    for (const auto& m : metric_names()) {
      const auto& e = row.at(m);
      ++cells;
      empty += e.at("point").is_null() || e.at("ci_lo").is_null() || e.at("ci_hi").is_null();
    }
  }
  std::size_t missing_rows = 0;
  for (const auto& outcome : schema.outcomes)
    for (const char* phase : {"preop", "intraop", "postop"})
      for (const std::string& model : {std::string("logistic_") + phase, std::string("deep_") + phase + "_multitask"}) {
        bool found = false;
        for (const auto& row : report.at("rows")) found |= row.at("outcome") == outcome && row.at("model") == model;
        missing_rows += !found;
      }

  // Rerun from the top-level manifest and check every deterministic output.
  const nlohmann::json top = read_json((fs::path(dir) / "manifest.json").string());
  std::map<std::string, std::string> expected = deterministic_outputs(top);
  for (const auto& sub : top.at("extra").at("sub_manifests")) {
    const auto o = deterministic_outputs(read_json(sub.get<std::string>()));
    expected.insert(o.begin(), o.end());
  }
  const auto argv = top.at("argv").get<std::vector<std::string>>();
  const auto t0 = std::chrono::steady_clock::now();
  if (const int rc = cli::run_cli(argv, log, log); rc != 0) return {false, fmt("rerun exited %d", rc)};
  std::size_t differ = 0;
  std::string first_diff;
  for (const auto& [path, sha] : expected)
    if (!fs::exists(path) || sha256_file(path) != sha) {
      if (!differ) first_diff = path;
      ++differ;
    }
  const bool pass = report.at("rows").size() > 0 && empty == 0 && missing_rows == 0 &&
                    schema.outcomes.size() == 9 && metric_names().size() == 7 && differ == 0 && expected.size() > 100;
  return {pass, fmt("%zu rows (%zu model kinds) x %zu metrics, %zu of %zu cells empty, %zu required rows missing; rerun "
                    "(%.0f s) reproduced %zu/%zu hashed outputs%s%s",
                    report.at("rows").size(), models.size(), metric_names().size(), empty, cells, missing_rows,
                    seconds_since(t0), expected.size() - differ, expected.size(), differ ? ", first mismatch " : "",
                    first_diff.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only.insert(std::atoi(argv[++i]));
    else if (std::strcmp(argv[i], "--keep") == 0 && i + 1 < argc) g_keep = argv[++i];
  }
  const std::vector<std::pair<int, std::function<Verdict()>>> criteria{
      {1, gradient_correctness}, {2, causality}, {3, ig_completeness},
      {4, metric_oracles},       {5, bootstrap_behavior}, {6, nri_oracle},
      {7, deep_vs_logistic}, {8, multitask_rare},
      {9, missingness_importance}, {10, pipeline_integrity},
  };
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail
              << fmt("  [%.1f s]", seconds_since(t0)) << std::endl;
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
