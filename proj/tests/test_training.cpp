#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "riskseq/training.hpp"
#include "support.hpp"

using namespace riskseq;

namespace {

// Labels depend on the first numeric columns so every task is learnable.
std::vector<EncodedEncounter> toy_set(const FeatureSchema& s, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z(0, 1);
  std::vector<EncodedEncounter> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& e = out[i];
    e.id = "e" + std::to_string(i);
    e.numeric.resize(s.numeric_width());
    for (auto& v : e.numeric) v = z(gen);
    for (std::size_t fi : s.embedded_features()) e.embedded_ids.push_back(gen() % s.features[fi].levels.size());
    e.series = Tensor({4, s.series_width()});
    for (auto& v : e.series.storage()) v = z(gen);
    for (std::size_t k = 0; k < s.outcomes.size(); ++k)
      e.labels.push_back(e.numeric[k % 2] + 0.3 * z(gen) > (k == 3 ? 1.0 : 0.0) ? 1 : 0);
  }
  return out;
}

TrainConfig toy_config(Phase phase) {
  TrainConfig c;
  c.lr = 0.01;
  c.batch = 16;
  c.patience = 3;
  c.max_epochs = 6;
  c.seed = 3;
  c.model.embed_dim = 2;
  c.model.hidden = 6;
  c.model.conv_layers = 2;
  c.model.conv_channels = 3;
  c.model.phase = phase;
  return c;
}

std::vector<ClassWeights> weights_for(const std::vector<EncodedEncounter>& d, const FeatureSchema& s) {
  std::vector<ClassWeights> w;
  for (std::size_t k = 0; k < s.outcomes.size(); ++k) {
    std::vector<int> y;
    for (const auto& e : d) y.push_back(e.labels[k]);
    w.push_back(class_weights(y, s.outcomes[k]));
  }
  return w;
}

}  // namespace

TEST(ClassWeights, InverseFrequency) {
  const std::vector<int> y{1, 0, 0, 0};
  const ClassWeights w = class_weights(y, "t");
  EXPECT_DOUBLE_EQ(w.w_pos, 2.0);
  EXPECT_DOUBLE_EQ(w.w_neg, 4.0 / 6.0);
  // both classes then carry equal total weight
  EXPECT_DOUBLE_EQ(1 * w.w_pos, 3 * w.w_neg);
}

TEST(ClassWeights, SingleClassIsDataError) {
  const std::vector<int> y{0, 0, 0};
  EXPECT_THROW(class_weights(y, "t"), DataError);
  const std::vector<int> ones{1, 1};
  EXPECT_THROW(class_weights(ones, "t"), DataError);
}

TEST(WeightedBce, MatchesFormulaAndClamps) {
  EXPECT_NEAR(ad::weighted_bce(0.8, 1, 2.0, 0.5), -2.0 * std::log(0.8), 1e-15);
  EXPECT_NEAR(ad::weighted_bce(0.8, 0, 2.0, 0.5), -0.5 * std::log(0.2), 1e-15);
  EXPECT_NEAR(ad::weighted_bce(0.0, 1, 1.0, 1.0), -std::log(1e-7), 1e-9);
  EXPECT_TRUE(std::isfinite(ad::weighted_bce(1.0, 0, 1.0, 1.0)));
}

TEST(EarlyStopper, StopsAfterPatienceWithoutImprovement) {
  EarlyStopper s(2);
  EXPECT_FALSE(s.update(1.0));
  EXPECT_FALSE(s.update(0.8));
  EXPECT_FALSE(s.update(0.9));
  EXPECT_TRUE(s.update(0.8));  // equal is not an improvement
  EXPECT_EQ(s.best_epoch(), 1u);
  EXPECT_DOUBLE_EQ(s.best(), 0.8);
}

TEST(EarlyStopper, ImprovementResetsCounter) {
  EarlyStopper s(2);
  s.update(1.0);
  s.update(1.1);
  EXPECT_FALSE(s.update(0.5));
  EXPECT_TRUE(s.improved_last());
  EXPECT_FALSE(s.update(0.6));
  EXPECT_TRUE(s.update(0.7));
  EXPECT_EQ(s.best_epoch(), 2u);
}

TEST(EarlyStopSplit, HoldsOutLatestAdmissions) {
  Cohort c;
  const int day[] = {5, 1, 9, 3, 7, 2, 8, 4, 6, 0};
  for (int i = 0; i < 10; ++i) {
    RawEncounter e;
    e.id = std::to_string(i);
    e.admit = TimePoint(std::chrono::seconds(86400LL * day[i]));
    c.encounters.push_back(e);
  }
  const auto [train, es] = early_stop_split(c, 0.2);
  EXPECT_EQ(es, (std::vector<std::size_t>{2, 6}));  // days 9 and 8
  EXPECT_EQ(train.size(), 8u);
  EXPECT_THROW(early_stop_split(c, 0.01), DataError);
}

TEST(Config, ValidationAndJson) {
  TrainConfig c;
  c.es_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config(Phase::intraop);
  c.l2_scope = L2Scope::all;
  const TrainConfig back = train_config_from_json(train_config_to_json(c));
  EXPECT_EQ(back.batch, c.batch);
  EXPECT_EQ(back.lr, c.lr);
  EXPECT_EQ(back.l2_scope, L2Scope::all);
  EXPECT_EQ(back.model.hidden, 6u);
  EXPECT_THROW(parse_l2_scope("some"), ConfigError);
}

TEST(BatchGradient, EqualsMeanOfPerSampleGradients) {
  const FeatureSchema s = riskseq::testing::tiny_schema();
  const auto data = toy_set(s, 12, 1);
  const auto w = weights_for(data, s);
  const Model m = build(toy_config(Phase::postop).model, s, 2);
  std::vector<std::size_t> batch{3, 0, 7, 11, 5};
  const LossAndGradient lg = batch_loss_and_gradient(m, data, batch, w, std::nullopt, 1);

  double loss = 0.0;
  ParameterMap acc;
  for (const auto& [n, t] : m.params) acc.emplace(n, Tensor(t.shape()));
  for (std::size_t i : batch) {
    ad::Tape tape;
    BoundParams p(tape, m.params, true);
    ad::Var l = sample_loss(m, p, make_inputs(tape, data[i], m, p), data[i].labels, w);
    tape.backward(l);
    loss += l.value()[0];
    for (const auto& [n, g] : p.gradients(tape))
      for (std::size_t j = 0; j < g.size(); ++j) acc.at(n)[j] += g[j];
  }
  EXPECT_NEAR(lg.loss, loss / 5, 1e-12);
  for (const auto& [n, g] : acc)
    for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(lg.grad.at(n)[j], g[j] / 5, 1e-12) << n;
}

TEST(BatchGradient, IndependentOfWorkerCount) {
  const FeatureSchema s = riskseq::testing::tiny_schema();
  const auto data = toy_set(s, 20, 2);
  const auto w = weights_for(data, s);
  const Model m = build(toy_config(Phase::postop).model, s, 3);
  std::vector<std::size_t> batch(20);
  std::iota(batch.begin(), batch.end(), 0);
  const auto a = batch_loss_and_gradient(m, data, batch, w, std::nullopt, 1);
  const auto b = batch_loss_and_gradient(m, data, batch, w, std::nullopt, 3);
  EXPECT_EQ(a.loss, b.loss);
  for (const auto& [n, g] : a.grad) EXPECT_EQ(g.storage(), b.grad.at(n).storage()) << n;
}

TEST(BatchGradient, MatchesFiniteDifferences) {
  const FeatureSchema s = riskseq::testing::tiny_schema();
  const auto data = toy_set(s, 40, 3);
  const auto w = weights_for(data, s);
  const Model m = build(toy_config(Phase::postop).model, s, 4);
  std::vector<std::size_t> batch{0, 1, 2, 3, 4, 5};
  const auto lg = batch_loss_and_gradient(m, data, batch, w, std::nullopt, 1);
  const double h = 1e-5;
  double worst = 0.0;
  for (const auto& [name, t] : m.params) {
    for (std::size_t i = 0; i < t.size(); i += 5) {
      Model up = m, down = m;
      up.params.at(name)[i] += h;
      down.params.at(name)[i] -= h;
      const double num = (batch_loss_and_gradient(up, data, batch, w, std::nullopt, 1).loss -
                          batch_loss_and_gradient(down, data, batch, w, std::nullopt, 1).loss) /
                         (2 * h);
      worst = std::max(worst, riskseq::testing::relative_error(lg.grad.at(name)[i], num));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(SampleLoss, SumsActiveTasks) {
  const FeatureSchema s = riskseq::testing::tiny_schema();
  const auto data = toy_set(s, 1, 4);
  std::vector<ClassWeights> w(9, ClassWeights{1.5, 0.7});
  const Model m = build(toy_config(Phase::preop).model, s, 5);
  const Prediction pr = predict(m, data[0]);
  double expect = 0.0;
  for (std::size_t k = 0; k < 9; ++k) expect += ad::weighted_bce(pr.probs[k], data[0].labels[k], 1.5, 0.7);
  ad::Tape tape;
  BoundParams p(tape, m.params, false);
  EXPECT_NEAR(sample_loss(m, p, make_inputs(tape, data[0], m, p), data[0].labels, w).value()[0], expect, 1e-12);
}

TEST(Train, LossDecreasesOnLearnableTask) {
  const FeatureSchema s = riskseq::testing::tiny_schema();
  const auto tr = toy_set(s, 240, 5), es = toy_set(s, 60, 6);
  const TrainResult r = train_encoded(tr, es, s, toy_config(Phase::preop));
  ASSERT_GE(r.history.epochs.size(), 2u);
  EXPECT_LT(r.history.epochs.back().train_loss, r.history.epochs.front().train_loss);
  double best = r.history.epochs[r.history.best_epoch].es_loss;
  for (const auto& e : r.history.epochs) EXPECT_GE(e.es_loss, best);
  // returned parameters are the best epoch's
  const auto w = r.weights;
  const double mean =
      [&] {
        const auto t = task_losses(r.model, es, w);
        return std::accumulate(t.begin(), t.end(), 0.0) / t.size();
      }();
  EXPECT_NEAR(mean, best, 1e-12);
}

TEST(Train, DeterministicForFixedSeed) {
  const FeatureSchema s = riskseq::testing::tiny_schema();
  const auto tr = toy_set(s, 80, 7), es = toy_set(s, 20, 8);
  TrainConfig c = toy_config(Phase::postop);
  c.max_epochs = 2;
  const TrainResult a = train_encoded(tr, es, s, c), b = train_encoded(tr, es, s, c);
  for (const auto& [n, t] : a.model.params) EXPECT_EQ(t.storage(), b.model.params.at(n).storage()) << n;
  EXPECT_EQ(a.history.epochs[1].es_loss, b.history.epochs[1].es_loss);
}

TEST(Train, SingleTaskOnlyNeedsItsOwnLabels) {
  const FeatureSchema s = riskseq::testing::tiny_schema();
  auto tr = toy_set(s, 60, 9), es = toy_set(s, 20, 10);
  for (auto& e : tr) e.labels[5] = 0;  // another task collapses to one class
  TrainConfig c = toy_config(Phase::preop);
  c.max_epochs = 1;
  EXPECT_THROW(train_encoded(tr, es, s, c), DataError);
  c.model.single_task = 2;
  const TrainResult r = train_encoded(tr, es, s, c);
  EXPECT_EQ(r.history.epochs[0].es_task_loss[5], 0.0);
  EXPECT_GT(r.history.epochs[0].es_task_loss[2], 0.0);
}

TEST(History, JsonLayout) {
  TrainHistory h;
  h.epochs.push_back(EpochRecord{1.0, {0.5, 0.25}, 0.375, 0.1});
  h.best_epoch = 0;
  const auto j = history_to_json(h, {"a", "b"});
  EXPECT_EQ(j.at("epochs").at(0).at("es_task_loss").at("b"), 0.25);
  EXPECT_EQ(j.at("best_epoch"), 0);
}

TEST(Train, OverfitsOneSmallBatch) {
  const FeatureSchema s = riskseq::testing::tiny_schema();
  auto data = toy_set(s, 8, 11);
  for (std::size_t k = 0; k < 9; ++k) {  // make sure both classes appear in the batch
    data[0].labels[k] = 1;
    data[1].labels[k] = 0;
  }
  const auto w = weights_for(data, s);
  TrainConfig c = toy_config(Phase::postop);
  Model m = build(c.model, s, 12);
  AdamState st;
  const AdamConfig acfg{0.01, 0.0, 0.9, 0.999, 1e-8, L2Scope::weights_and_embeddings};
  std::vector<std::size_t> batch{0, 1, 2, 3, 4, 5, 6, 7};
  const double start = batch_loss_and_gradient(m, data, batch, w, std::nullopt, 1).loss;
  double last = start;
  for (int step = 0; step < 500; ++step) {
    const auto lg = batch_loss_and_gradient(m, data, batch, w, std::nullopt, 1);
    adam_step(m.params, lg.grad, st, acfg);
    last = lg.loss;
  }
  last = batch_loss_and_gradient(m, data, batch, w, std::nullopt, 1).loss;
  EXPECT_LT(last, 0.1 * start);
}
