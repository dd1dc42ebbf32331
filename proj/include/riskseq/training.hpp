#ifndef RISKSEQ_TRAINING_HPP
#define RISKSEQ_TRAINING_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "riskseq/adam.hpp"
#include "riskseq/autodiff.hpp"
#include "riskseq/cohort.hpp"
#include "riskseq/error.hpp"
#include "riskseq/model.hpp"
#include "riskseq/parallel.hpp"
#include "riskseq/preprocess.hpp"
#include "riskseq/rng.hpp"

namespace riskseq {

struct TrainConfig {
  double lr = 0.001;
  double l2 = 0.01;
  L2Scope l2_scope = L2Scope::weights_and_embeddings;
  std::size_t batch = 64;
  std::size_t patience = 4;
  std::size_t max_epochs = 100;
  double es_fraction = 0.10;
  std::uint64_t seed = 0;
  ModelConfig model;

  void validate() const {
    if (!(es_fraction > 0.0 && es_fraction < 1.0)) throw ConfigError("train config: es_fraction must be in (0, 1)");
    if (patience < 1) throw ConfigError("train config: patience must be >= 1");
    if (batch < 1) throw ConfigError("train config: batch must be >= 1");
    if (max_epochs < 1) throw ConfigError("train config: max_epochs must be >= 1");
    if (!(lr > 0.0) || l2 < 0.0) throw ConfigError("train config: lr must be positive and l2 non-negative");
    model.validate();
  }
};

inline L2Scope parse_l2_scope(const std::string& s) {
  if (s == "weights_and_embeddings") return L2Scope::weights_and_embeddings;
  if (s == "all") return L2Scope::all;
  if (s == "none") return L2Scope::none;
  throw ConfigError("unknown l2_scope '" + s + "'");
}

inline const char* l2_scope_name(L2Scope s) {
  switch (s) {
    case L2Scope::all: return "all";
    case L2Scope::none: return "none";
    default: return "weights_and_embeddings";
  }
}

/// Reads train.toml keys (all optional) on top of the defaults; [model] holds architecture sizes.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  try {
    c.lr = j.value("lr", c.lr);
    c.l2 = j.value("l2", c.l2);
    if (j.contains("l2_scope")) c.l2_scope = parse_l2_scope(j.at("l2_scope").get<std::string>());
    c.batch = j.value("batch", c.batch);
    c.patience = j.value("patience", c.patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.es_fraction = j.value("es_fraction", c.es_fraction);
    c.seed = j.value("seed", c.seed);
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
      c.model.hidden = m.value("hidden", c.model.hidden);
      c.model.kernel = m.value("kernel", c.model.kernel);
      c.model.conv_layers = m.value("conv_layers", c.model.conv_layers);
      c.model.conv_channels = m.value("conv_channels", c.model.conv_channels);
      c.model.per_task_attention = m.value("per_task_attention", c.model.per_task_attention);
      if (m.contains("activation") && m.at("activation").get<std::string>() != "elu")
        throw ConfigError("train config: only the 'elu' activation is supported");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"lr", c.lr},         {"l2", c.l2},
          {"l2_scope", l2_scope_name(c.l2_scope)},
          {"batch", c.batch},   {"patience", c.patience},
          {"max_epochs", c.max_epochs}, {"es_fraction", c.es_fraction},
          {"seed", c.seed},     {"model", config_to_json(c.model)}};
}

struct ClassWeights {
  double w_pos = 1.0;
  double w_neg = 1.0;
};

/// Inverse-frequency weights: w_pos = N / (2 N_pos), w_neg = N / (2 N_neg).
inline ClassWeights class_weights(std::span<const int> labels, const std::string& task) {
  std::size_t pos = 0;
  for (int y : labels) pos += y == 1;
  const std::size_t n = labels.size(), neg = n - pos;
  if (pos == 0 || neg == 0)
    throw DataError("task '" + task + "' has a single class in the training data (" + std::to_string(pos) +
                    " positives of " + std::to_string(n) + ")");
  const double dn = static_cast<double>(n);
  return {dn / (2.0 * static_cast<double>(pos)), dn / (2.0 * static_cast<double>(neg))};
}

/// Stops once the monitored loss has failed to improve for `patience` consecutive epochs.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Records one evaluated epoch; returns true when training should stop.
  bool update(double monitored) {
    const std::size_t epoch = evaluated_++;
    if (monitored < best_) {
      best_ = monitored;
      best_epoch_ = epoch;
      since_best_ = 0;
    } else {
      ++since_best_;
    }
    return since_best_ >= patience_;
  }

  bool improved_last() const { return since_best_ == 0; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }
  std::size_t evaluated() const { return evaluated_; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  std::size_t evaluated_ = 0;
};

struct EpochRecord {
  double train_loss = 0.0;
  std::vector<double> es_task_loss;
  double es_loss = 0.0;  // mean of es_task_loss
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::uint64_t seed = 0;
  std::size_t train_size = 0;
  std::size_t es_size = 0;
};

inline nlohmann::json history_to_json(const TrainHistory& h, const std::vector<std::string>& task_names) {
  nlohmann::json epochs = nlohmann::json::array();
  for (std::size_t i = 0; i < h.epochs.size(); ++i) {
    const auto& e = h.epochs[i];
    nlohmann::json per_task = nlohmann::json::object();
    for (std::size_t k = 0; k < e.es_task_loss.size(); ++k) per_task[task_names.at(k)] = e.es_task_loss[k];
    epochs.push_back({{"epoch", i}, {"train_loss", e.train_loss}, {"es_loss", e.es_loss},
                      {"es_task_loss", per_task}, {"wall_seconds", e.wall_seconds}});
  }
  return {{"format_version", 1}, {"best_epoch", h.best_epoch}, {"shuffle_seed", h.seed},
          {"train_size", h.train_size}, {"es_size", h.es_size}, {"epochs", epochs}};
}

/// Per-sample loss: sum over the model's active tasks of the weighted BCE.
inline ad::Var sample_loss(const Model& model, const BoundParams& p, const ModelInputs& in,
                           const std::vector<int>& labels, const std::vector<ClassWeights>& weights,
                           std::optional<std::size_t> only_task = std::nullopt) {
  ForwardResult r = forward(model, p, in);
  std::vector<ad::Var> terms;
  for (std::size_t i = 0; i < r.tasks.size(); ++i) {
    const std::size_t k = r.tasks[i];
    if (only_task && *only_task != k) continue;
    terms.push_back(ad::weighted_bce_logit(r.logits[i], labels.at(k), weights.at(k).w_pos, weights.at(k).w_neg));
  }
  if (terms.empty()) throw ConfigError("sample_loss: requested task is not active in the model");
  return ad::sum(terms);
}

struct LossAndGradient {
  double loss = 0.0;
  ParameterMap grad;
};

/// Mean per-sample loss over `batch` and its gradient. Gradients are reduced in
/// batch order, so the result is independent of the worker count.
inline LossAndGradient batch_loss_and_gradient(const Model& model, const std::vector<EncodedEncounter>& data,
                                               std::span<const std::size_t> batch,
                                               const std::vector<ClassWeights>& weights,
                                               std::optional<std::size_t> only_task = std::nullopt,
                                               std::size_t workers = worker_count()) {
  LossAndGradient out;
  for (const auto& [name, t] : model.params) out.grad.emplace(name, Tensor(t.shape()));
  const std::size_t wave = std::max<std::size_t>(1, workers);
  std::vector<double> losses(wave);
  std::vector<std::vector<std::pair<std::string, Tensor>>> grads(wave);
  for (std::size_t start = 0; start < batch.size(); start += wave) {
    const std::size_t count = std::min(wave, batch.size() - start);
    parallel_for(
        count,
        [&](std::size_t i) {
          ad::Tape tape;
          BoundParams p(tape, model.params, true);
          const EncodedEncounter& enc = data.at(batch[start + i]);
          ModelInputs in = make_inputs(tape, enc, model, p);
          ad::Var loss = sample_loss(model, p, in, enc.labels, weights, only_task);
          tape.backward(loss);
          losses[i] = loss.value()[0];
          grads[i].clear();
          for (const auto& [name, v] : p.vars())
            if (const Tensor* g = tape.grad_if_any(v.id)) grads[i].emplace_back(name, *g);
        },
        workers);
    for (std::size_t i = 0; i < count; ++i) {
      out.loss += losses[i];
      for (const auto& [name, g] : grads[i]) {
        Tensor& acc = out.grad.at(name);
        for (std::size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (auto& [_, g] : out.grad)
    for (double& v : g.storage()) v *= inv;
  return out;
}

/// Per-task mean weighted loss over a dataset (forward only).
inline std::vector<double> task_losses(const Model& model, const std::vector<EncodedEncounter>& data,
                                       const std::vector<ClassWeights>& weights) {
  const auto tasks = model.config.active_tasks();
  std::vector<std::vector<double>> per(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    const Prediction pr = predict(model, data[i]);
    per[i].resize(tasks.size());
    for (std::size_t t = 0; t < tasks.size(); ++t)
      per[i][t] = ad::weighted_bce(pr.probs[t], data[i].labels.at(tasks[t]), weights.at(tasks[t]).w_pos,
                                   weights.at(tasks[t]).w_neg);
  });
  std::vector<double> mean(tasks.size(), 0.0);
  for (const auto& row : per)
    for (std::size_t t = 0; t < tasks.size(); ++t) mean[t] += row[t];
  for (double& m : mean) m /= static_cast<double>(std::max<std::size_t>(1, data.size()));
  return mean;
}

/// Chronological development split: positions of the training and early-stopping parts.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> early_stop_split(const Cohort& dev,
                                                                                      double es_fraction) {
  std::vector<std::size_t> order(dev.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dev.encounters[a].admit < dev.encounters[b].admit;
  });
  const auto n_es = static_cast<std::size_t>(std::llround(es_fraction * static_cast<double>(dev.size())));
  if (n_es == 0 || n_es >= dev.size())
    throw DataError("development cohort of " + std::to_string(dev.size()) +
                    " encounters is too small for an early-stopping split");
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_es));
  std::vector<std::size_t> es(order.end() - static_cast<std::ptrdiff_t>(n_es), order.end());
  std::sort(train.begin(), train.end());
  std::sort(es.begin(), es.end());
  return {train, es};
}

struct TrainResult {
  Model model;  // parameters from the best epoch
  TrainHistory history;
  std::vector<ClassWeights> weights;  // indexed by outcome; unused tasks keep (1, 1)
};

using EpochCallback = std::function<void(std::size_t epoch, const EpochRecord&)>;

/// Trains on already-encoded samples.
inline TrainResult train_encoded(const std::vector<EncodedEncounter>& train_set,
                                 const std::vector<EncodedEncounter>& es_set, const FeatureSchema& schema,
                                 const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  config.validate();
  if (train_set.empty() || es_set.empty()) throw DataError("training and early-stopping sets must be non-empty");
  TrainResult result;
  result.weights.assign(schema.outcomes.size(), ClassWeights{});
  for (std::size_t k : config.model.active_tasks()) {
    std::vector<int> labels;
    for (const auto& e : train_set) labels.push_back(e.labels.at(k));
    result.weights[k] = class_weights(labels, schema.outcomes[k]);
  }

  Model model = build(config.model, schema, config.seed);
  AdamState adam;
  const AdamConfig acfg{config.lr, config.l2, 0.9, 0.999, 1e-8, config.l2_scope};
  EarlyStopper stopper(config.patience);
  result.history.seed = derive_seed(config.seed, 0x5eed);
  result.history.train_size = train_set.size();
  result.history.es_size = es_set.size();
  result.model = model;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffler(result.history.seed);
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffler.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      LossAndGradient lg = batch_loss_and_gradient(
          model, train_set, std::span<const std::size_t>(order).subspan(start, end - start), result.weights);
      if (!std::isfinite(lg.loss)) {
        std::ostringstream os;
        os << "non-finite training loss at epoch " << epoch << ", batch " << batches << " (loss=" << lg.loss << ")";
        throw NumericError(os.str());
      }
      adam_step(model.params, lg.grad, adam, acfg);
      loss_sum += lg.loss;
      ++batches;
    }
    EpochRecord rec;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    std::vector<double> active = task_losses(model, es_set, result.weights);
    rec.es_task_loss.assign(schema.outcomes.size(), 0.0);
    const auto tasks = config.model.active_tasks();
    for (std::size_t i = 0; i < tasks.size(); ++i) rec.es_task_loss[tasks[i]] = active[i];
    rec.es_loss = std::accumulate(active.begin(), active.end(), 0.0) / static_cast<double>(active.size());
    if (!std::isfinite(rec.es_loss)) throw NumericError("non-finite early-stopping loss at epoch " + std::to_string(epoch));
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(rec);
    const bool stop = stopper.update(rec.es_loss);
    if (stopper.improved_last()) result.model = model;
    if (on_epoch) on_epoch(epoch, rec);
    if (stop) break;
  }
  result.history.best_epoch = stopper.best_epoch();
  return result;
}

/// Encodes the development cohort, holds out its chronologically last es_fraction and trains.
inline TrainResult train(const Cohort& dev, const FeatureSchema& schema, const PreprocessorState& pre,
                         const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  config.validate();
  const auto [train_rows, es_rows] = early_stop_split(dev, config.es_fraction);
  const bool series = uses_series(config.model.phase);
  auto encode_rows = [&](const std::vector<std::size_t>& rows) {
    std::vector<EncodedEncounter> out(rows.size());
    parallel_for(rows.size(), [&](std::size_t i) { out[i] = encode(dev.encounters[rows[i]], pre, schema, series); });
    return out;
  };
  return train_encoded(encode_rows(train_rows), encode_rows(es_rows), schema, config, on_epoch);
}

/// Probabilities for every encounter, [n][active task].
inline std::vector<std::vector<double>> predict_all(const Model& model, const std::vector<EncodedEncounter>& data) {
  std::vector<std::vector<double>> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) { out[i] = predict(model, data[i]).probs; });
  return out;
}

}  // namespace riskseq

#endif  // RISKSEQ_TRAINING_HPP
