#ifndef RISKSEQ_MODEL_HPP
#define RISKSEQ_MODEL_HPP

// Preoperative, intraoperative and postoperative risk networks sharing one
// set of nine outcome branches.
//
//   preop:   embedded nominals -> lookup -> concat -> dense ┐
//            numeric static vector            -> dense ┴ concat -> dense = preop repr
//   intraop: series -> 7 causal dilated convs (dilation 2^L, ELU); each layer's
//            sequence is attention-pooled; the 7 contexts -> concat -> dense = intraop repr
//   postop:  concat(preop repr, intraop repr)
//   branch k: repr -> dense(ELU) -> dense -> logit -> sigmoid
//
// Every hidden dense is followed by ELU.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "riskseq/adam.hpp"
#include "riskseq/autodiff.hpp"
#include "riskseq/error.hpp"
#include "riskseq/preprocess.hpp"
#include "riskseq/rng.hpp"
#include "riskseq/schema.hpp"

namespace riskseq {

enum class Phase { preop, intraop, postop };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::preop: return "preop";
    case Phase::intraop: return "intraop";
    default: return "postop";
  }
}

inline Phase parse_phase(const std::string& s) {
  if (s == "preop") return Phase::preop;
  if (s == "intraop") return Phase::intraop;
  if (s == "postop") return Phase::postop;
  throw ConfigError("unknown phase '" + s + "' (expected preop, intraop or postop)");
}

inline bool uses_static(Phase p) { return p != Phase::intraop; }
inline bool uses_series(Phase p) { return p != Phase::preop; }

struct ModelConfig {
  std::size_t embed_dim = 10;
  std::size_t hidden = 64;
  std::size_t kernel = 3;
  std::size_t conv_layers = 7;
  std::size_t conv_channels = 64;
  std::size_t tasks = kOutcomeCount;
  Phase phase = Phase::postop;
  std::optional<std::size_t> single_task;  // unset: multitask
  bool per_task_attention = false;

  std::vector<std::size_t> active_tasks() const {
    if (single_task) return {*single_task};
    std::vector<std::size_t> all(tasks);
    for (std::size_t k = 0; k < tasks; ++k) all[k] = k;
    return all;
  }

  std::size_t dilation(std::size_t layer) const { return std::size_t{1} << layer; }

  void validate() const {
    if (embed_dim == 0 || hidden == 0 || kernel == 0 || conv_channels == 0 || tasks == 0)
      throw ConfigError("model config: dimensions must be positive");
    if (conv_layers == 0 || conv_layers > 20) throw ConfigError("model config: conv_layers must be in [1, 20]");
    if (single_task && *single_task >= tasks) throw ConfigError("model config: single task index out of range");
  }
};

inline nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json j{{"embed_dim", c.embed_dim},       {"hidden", c.hidden},
                   {"kernel", c.kernel},             {"conv_layers", c.conv_layers},
                   {"conv_channels", c.conv_channels}, {"tasks", c.tasks},
                   {"activation", "elu"},            {"phase", phase_name(c.phase)},
                   {"mode", c.single_task ? "single" : "multitask"},
                   {"per_task_attention", c.per_task_attention}};
  if (c.single_task) j["single_task"] = *c.single_task;
  return j;
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.conv_layers = j.at("conv_layers").get<std::size_t>();
    c.conv_channels = j.at("conv_channels").get<std::size_t>();
    c.tasks = j.at("tasks").get<std::size_t>();
    c.phase = parse_phase(j.at("phase").get<std::string>());
    if (j.at("mode").get<std::string>() == "single") c.single_task = j.at("single_task").get<std::size_t>();
    c.per_task_attention = j.value("per_task_attention", false);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

struct Model {
  ModelConfig config;
  ParameterMap params;
  std::vector<std::string> outcome_names;         // from the schema
  std::vector<std::string> embedded_feature_names;

  const Tensor& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("model has no parameter '" + name + "'");
    return it->second;
  }
};

namespace names {

inline std::string embed(const std::string& feature) { return "preop.embed." + feature; }
inline std::string conv(std::size_t l) { return "intraop.conv" + std::to_string(l); }
inline std::string attn(std::optional<std::size_t> task, std::size_t l) {
  return task ? "intraop.task" + std::to_string(*task) + ".attn" + std::to_string(l)
              : "intraop.attn" + std::to_string(l);
}
inline std::string intraop_fusion(std::optional<std::size_t> task) {
  return task ? "intraop.task" + std::to_string(*task) + ".fusion" : "intraop.fusion";
}
inline std::string branch(const std::string& outcome) { return "branch." + outcome; }

}  // namespace names

namespace detail {

inline void glorot(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.storage()) v = rng.uniform(-a, a);
}

}  // namespace detail

inline constexpr double kEmbeddingInitRange = 0.05;

/// Allocates and seeds every parameter for the configured phase and task mode.
inline Model build(const ModelConfig& config, const FeatureSchema& schema, std::uint64_t seed) {
  config.validate();
  if (config.tasks != schema.outcomes.size()) throw ConfigError("model config: task count does not match schema outcomes");
  Model m;
  m.config = config;
  m.outcome_names = schema.outcomes;
  for (std::size_t fi : schema.embedded_features()) m.embedded_feature_names.push_back(schema.features[fi].name);

  const std::size_t H = config.hidden, C = config.conv_channels, E = config.embed_dim;
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    m.params.emplace(name + ".W", Tensor({in, out}));
    m.params.emplace(name + ".b", Tensor({out}));
  };

  std::size_t repr = 0;
  if (uses_static(config.phase)) {
    std::size_t parts = 1;
    dense("preop.numeric", schema.numeric_width(), H);
    if (!schema.embedded_features().empty()) {
      for (std::size_t fi : schema.embedded_features()) {
        const Feature& f = schema.features[fi];
        m.params.emplace(names::embed(f.name), Tensor({f.levels.size(), E}));
      }
      dense("preop.nominal", schema.embedded_features().size() * E, H);
      ++parts;
    }
    dense("preop.fusion", parts * H, H);
    repr += H;
  }
  if (uses_series(config.phase)) {
    for (std::size_t l = 0; l < config.conv_layers; ++l) {
      const std::size_t cin = l == 0 ? schema.series_width() : C;
      m.params.emplace(names::conv(l) + ".K", Tensor({config.kernel, cin, C}));
      m.params.emplace(names::conv(l) + ".b", Tensor({C}));
    }
    std::vector<std::optional<std::size_t>> owners;
    if (config.per_task_attention) {
      for (std::size_t k : config.active_tasks()) owners.emplace_back(k);
    } else {
      owners.emplace_back(std::nullopt);
    }
    for (const auto& owner : owners) {
      for (std::size_t l = 0; l < config.conv_layers; ++l) {
        const std::string a = names::attn(owner, l);
        m.params.emplace(a + ".W", Tensor({C, C}));
        m.params.emplace(a + ".b", Tensor({C}));
        m.params.emplace(a + ".v", Tensor({C}));
      }
      dense(names::intraop_fusion(owner), config.conv_layers * C, H);
    }
    repr += H;
  }
  for (std::size_t k : config.active_tasks()) {
    dense(names::branch(schema.outcomes[k]) + ".hidden", repr, H);
    dense(names::branch(schema.outcomes[k]) + ".out", H, 1);
  }

  // One stream, consumed in parameter-name order.
  Rng rng(seed);
  for (auto& [name, t] : m.params) {
    if (is_bias_name(name)) continue;
    if (name.rfind("preop.embed.", 0) == 0) {
      for (double& v : t.storage()) v = rng.uniform(-kEmbeddingInitRange, kEmbeddingInitRange);
    } else if (t.rank() == 3) {
      detail::glorot(t, t.dim(0) * t.dim(1), t.dim(0) * t.dim(2), rng);
    } else if (t.rank() == 2) {
      detail::glorot(t, t.dim(0), t.dim(1), rng);
    } else {
      detail::glorot(t, t.dim(0), 1, rng);  // attention score vector
    }
  }
  return m;
}

/// Parameters registered on a tape.
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const ParameterMap& params, bool differentiable) {
    for (const auto& [name, t] : params)
      vars_.emplace(name, differentiable ? tape.leaf_ref(t) : tape.constant(t));
  }
  ad::Var operator()(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ConfigError("model has no parameter '" + name + "'");
    return it->second;
  }
  const std::map<std::string, ad::Var>& vars() const { return vars_; }

  /// Gradient of every parameter after backward(); zeros where nothing flowed.
  ParameterMap gradients(const ad::Tape& tape) const {
    ParameterMap out;
    for (const auto& [name, v] : vars_) {
      const Tensor* g = tape.grad_if_any(v.id);
      out.emplace(name, g ? *g : Tensor(v.value().shape()));
    }
    return out;
  }

 private:
  std::map<std::string, ad::Var> vars_;
};

struct ModelInputs {
  ad::Var numeric;                     // [numeric_width]
  std::vector<ad::Var> embeddings;     // one [embed_dim] per embedded nominal
  ad::Var series;                      // [T, 2C]
};

/// Wraps an encoded encounter; embeddings are looked up from the bound tables.
inline ModelInputs make_inputs(ad::Tape& tape, const EncodedEncounter& enc, const Model& model,
                               const BoundParams& bound) {
  ModelInputs in;
  if (uses_static(model.config.phase)) {
    in.numeric = tape.constant(Tensor({enc.numeric.size()}, enc.numeric));
    if (enc.embedded_ids.size() != model.embedded_feature_names.size())
      throw NumericError("encounter has " + std::to_string(enc.embedded_ids.size()) +
                         " embedded ids, model expects " + std::to_string(model.embedded_feature_names.size()));
    for (std::size_t i = 0; i < enc.embedded_ids.size(); ++i)
      in.embeddings.push_back(
          ad::embedding_lookup(bound(names::embed(model.embedded_feature_names[i])), enc.embedded_ids[i]));
  }
  if (uses_series(model.config.phase)) {
    if (enc.series.empty()) throw DataError("encounter '" + enc.id + "' has no intraoperative series");
    in.series = tape.constant(enc.series);
  }
  return in;
}

struct ForwardResult {
  std::vector<std::size_t> tasks;          // outcome index of each logit
  std::vector<ad::Var> logits;             // scalar per active task
  std::optional<ad::Var> preop_repr;
  std::vector<ad::Var> intraop_repr;       // one shared, or one per task
  std::vector<std::vector<Tensor>> attention;  // [owner][layer] weights
};

inline ad::Var dense_elu(const BoundParams& p, const std::string& name, const ad::Var& x) {
  return ad::elu(ad::dense(x, p(name + ".W"), p(name + ".b")));
}

inline ad::Var preop_representation(const Model& model, const BoundParams& p, const ModelInputs& in) {
  const Tensor& W = model.param("preop.numeric.W");
  if (in.numeric.value().size() != W.dim(0))
    throw NumericError("numeric input width " + std::to_string(in.numeric.value().size()) +
                       " does not match checkpoint width " + std::to_string(W.dim(0)));
  std::vector<ad::Var> parts{dense_elu(p, "preop.numeric", in.numeric)};
  if (!in.embeddings.empty()) parts.push_back(dense_elu(p, "preop.nominal", ad::concat(in.embeddings)));
  return dense_elu(p, "preop.fusion", parts.size() == 1 ? parts.front() : ad::concat(parts));
}

struct IntraopFeatures {
  std::vector<ad::Var> layers;  // conv outputs, [T, C] each
};

inline IntraopFeatures conv_stack(const Model& model, const BoundParams& p, const ad::Var& series) {
  const Tensor& K0 = model.param(names::conv(0) + ".K");
  if (series.value().rank() != 2 || series.value().dim(1) != K0.dim(1))
    throw NumericError("series shape " + shape_string(series.value().shape()) + " does not match width " +
                       std::to_string(K0.dim(1)));
  IntraopFeatures f;
  ad::Var h = series;
  for (std::size_t l = 0; l < model.config.conv_layers; ++l) {
    h = ad::elu(ad::causal_dilated_conv(h, p(names::conv(l) + ".K"), p(names::conv(l) + ".b"),
                                        model.config.dilation(l)));
    f.layers.push_back(h);
  }
  return f;
}

inline ForwardResult forward(const Model& model, const BoundParams& p, const ModelInputs& in) {
  const ModelConfig& cfg = model.config;
  ForwardResult r;
  r.tasks = cfg.active_tasks();
  if (uses_static(cfg.phase)) r.preop_repr = preop_representation(model, p, in);

  std::vector<std::optional<std::size_t>> owners;
  if (uses_series(cfg.phase)) {
    const IntraopFeatures feats = conv_stack(model, p, in.series);
    if (cfg.per_task_attention) {
      for (std::size_t k : r.tasks) owners.emplace_back(k);
    } else {
      owners.emplace_back(std::nullopt);
    }
    for (const auto& owner : owners) {
      std::vector<ad::Var> contexts;
      std::vector<Tensor> weights;
      for (std::size_t l = 0; l < cfg.conv_layers; ++l) {
        const std::string a = names::attn(owner, l);
        ad::AttentionOutput att = ad::attention_pool(feats.layers[l], p(a + ".v"), p(a + ".W"), p(a + ".b"));
        contexts.push_back(att.context);
        weights.push_back(std::move(att.weights));
      }
      r.intraop_repr.push_back(dense_elu(p, names::intraop_fusion(owner), ad::concat(contexts)));
      r.attention.push_back(std::move(weights));
    }
  }

  for (std::size_t i = 0; i < r.tasks.size(); ++i) {
    ad::Var repr;
    if (cfg.phase == Phase::preop) {
      repr = *r.preop_repr;
    } else {
      const ad::Var& intra = r.intraop_repr[cfg.per_task_attention ? i : 0];
      repr = cfg.phase == Phase::intraop ? intra : ad::concat({*r.preop_repr, intra});
    }
    const std::string b = names::branch(model.outcome_names.at(r.tasks[i]));
    ad::Var hidden = dense_elu(p, b + ".hidden", repr);
    r.logits.push_back(ad::element(ad::dense(hidden, p(b + ".out.W"), p(b + ".out.b")), 0));
  }
  return r;
}

/// Per-outcome probabilities for one phase.
struct Prediction {
  Phase phase = Phase::postop;
  std::vector<std::size_t> tasks;
  std::vector<double> probs;   // sigmoid outputs, aligned with tasks
  std::vector<double> logits;
};

struct PhaseOutput {
  Prediction prediction;
  Tensor representation;  // shared representation fed to the branches
};

inline PhaseOutput run_forward(const Model& model, const EncodedEncounter& enc) {
  ad::Tape tape;
  BoundParams p(tape, model.params, false);
  ModelInputs in = make_inputs(tape, enc, model, p);
  ForwardResult r = forward(model, p, in);
  PhaseOutput out;
  out.prediction.phase = model.config.phase;
  out.prediction.tasks = r.tasks;
  for (const auto& z : r.logits) {
    out.prediction.logits.push_back(z.value()[0]);
    out.prediction.probs.push_back(ad::sigmoid(z.value()[0]));
  }
  if (model.config.phase == Phase::preop) out.representation = r.preop_repr->value();
  else if (model.config.phase == Phase::intraop) out.representation = r.intraop_repr.front().value();
  else {
    std::vector<double> v = r.preop_repr->value().storage();
    const auto& iv = r.intraop_repr.front().value().storage();
    v.insert(v.end(), iv.begin(), iv.end());
    const std::size_t width = v.size();
    out.representation = Tensor({width}, std::move(v));
  }
  return out;
}

inline void require_phase(const Model& model, Phase phase) {
  if (model.config.phase != phase)
    throw ConfigError(std::string("expected a ") + phase_name(phase) + " model, got " + phase_name(model.config.phase));
}

/// Preoperative prediction; the series is never read.
inline PhaseOutput forward_preop(const EncodedEncounter& enc, const Model& model) {
  require_phase(model, Phase::preop);
  return run_forward(model, enc);
}

/// Intraoperative prediction; static inputs are never read.
inline PhaseOutput forward_intraop(const EncodedEncounter& enc, const Model& model) {
  require_phase(model, Phase::intraop);
  return run_forward(model, enc);
}

inline PhaseOutput forward_postop(const EncodedEncounter& enc, const Model& model) {
  require_phase(model, Phase::postop);
  return run_forward(model, enc);
}

inline Prediction predict(const Model& model, const EncodedEncounter& enc) { return run_forward(model, enc).prediction; }

inline std::size_t parameter_count(const Model& m) {
  std::size_t n = 0;
  for (const auto& [_, t] : m.params) n += t.size();
  return n;
}

}  // namespace riskseq

#endif  // RISKSEQ_MODEL_HPP
