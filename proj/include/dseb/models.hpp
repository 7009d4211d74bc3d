#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dseb/adam.hpp"
#include "dseb/autodiff.hpp"
#include "dseb/contrastive.hpp"
#include "dseb/rng.hpp"
#include "dseb/tensor.hpp"

namespace dseb {

/// Thrown when a training loss stops being finite.
struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& what)
      : std::runtime_error(what) {}
};

inline constexpr std::array<const char*, 3> kAttributes = {"gender", "age",
                                                           "accent"};

struct ModelDims {
  std::size_t input_dim = 64;   // per-frame feature width (mel bands)
  std::size_t hidden = 256;     // frame MLP width
  std::size_t embed_dim = 128;  // encoder output z
  std::size_t proj_hidden = 128;
  std::size_t proj_out = 64;
  std::size_t adv_hidden = 64;
};

enum class TrainMode { baseline, adversarial, bottleneck };

struct TrainConfig {
  TrainMode mode = TrainMode::baseline;
  double lambda_adv = 0.0;  // adversarial mode; multiplies the summed CE term
  std::size_t bottleneck_k = 32;
  double lambda_gender = 0.01;
  double lambda_age = 0.01;
  double lambda_accent = 0.01;
  double covariance_weight = 1.0;
  bool freeze_encoder = true;
  double learning_rate = 0.0;  // 0 picks the mode default
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  double temperature = 0.5;
  double grad_clip_norm = 0.0;  // 0 disables clipping
  ModelDims dims;

  double effective_learning_rate() const {
    if (learning_rate > 0.0) return learning_rate;
    return mode == TrainMode::bottleneck ? 1e-3 : 1e-4;
  }

  std::array<double, 3> lambda_triple() const {
    return {lambda_gender, lambda_age, lambda_accent};
  }
};

/// Training-facing view of a prepared dataset. `views` yields two augmented
/// feature matrices per utterance; `eval_features` yields the deterministic
/// evaluation-time features.
struct TrainingSet {
  struct Item {
    std::string id;
    int gender = -1;
    int age = -1;
    int accent = -1;
  };
  std::vector<Item> items;
  int gender_classes = 2;
  int age_classes = 3;
  int accent_classes = 5;
  std::function<std::pair<Tensor, Tensor>(std::size_t, Rng&)> views;
  std::function<Tensor(std::size_t, Rng&)> eval_features;

  int classes_for(std::size_t attr) const {
    return attr == 0 ? gender_classes : attr == 1 ? age_classes : accent_classes;
  }

  int label_for(std::size_t index, std::size_t attr) const {
    const Item& it = items[index];
    return attr == 0 ? it.gender : attr == 1 ? it.age : it.accent;
  }
};

struct EpochLosses {
  std::size_t epoch = 0;
  double total = 0.0;
  double ntxent = 0.0;
  double adversarial_ce = 0.0;
  double demo_ce = 0.0;
  double residual_ce = 0.0;
  double covariance = 0.0;
};

struct TrainResult {
  ParamSet params;
  std::vector<EpochLosses> curves;
};

// ---- initialization -------------------------------------------------------

/// Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases. Draw order
/// is the declaration order below, so initialization is stable per seed.
inline Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out,
                             Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w = Tensor::zeros(fan_in, fan_out);
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = rng.uniform(-limit, limit);
  return w;
}

inline void init_encoder(ParamSet& params, const ModelDims& dims, Rng rng) {
  params["encoder/frame1/W"] = xavier_uniform(dims.input_dim, dims.hidden, rng);
  params["encoder/frame1/b"] = Tensor::zeros_vector(dims.hidden);
  params["encoder/frame2/W"] = xavier_uniform(dims.hidden, dims.hidden, rng);
  params["encoder/frame2/b"] = Tensor::zeros_vector(dims.hidden);
  params["encoder/pool/W"] =
      xavier_uniform(2 * dims.hidden, dims.embed_dim, rng);
  params["encoder/pool/b"] = Tensor::zeros_vector(dims.embed_dim);
}

inline void init_projection_head(ParamSet& params, const ModelDims& dims,
                                 Rng rng) {
  params["head/l1/W"] = xavier_uniform(dims.embed_dim, dims.proj_hidden, rng);
  params["head/l1/b"] = Tensor::zeros_vector(dims.proj_hidden);
  params["head/l2/W"] = xavier_uniform(dims.proj_hidden, dims.proj_hidden, rng);
  params["head/l2/b"] = Tensor::zeros_vector(dims.proj_hidden);
  params["head/out/W"] = xavier_uniform(dims.proj_hidden, dims.proj_out, rng);
  params["head/out/b"] = Tensor::zeros_vector(dims.proj_out);
}

inline void init_adversary(ParamSet& params, const std::string& prefix,
                           std::size_t input_dim, std::size_t hidden,
                           std::size_t classes, Rng rng) {
  params[prefix + "/l1/W"] = xavier_uniform(input_dim, hidden, rng);
  params[prefix + "/l1/b"] = Tensor::zeros_vector(hidden);
  params[prefix + "/out/W"] = xavier_uniform(hidden, classes, rng);
  params[prefix + "/out/b"] = Tensor::zeros_vector(classes);
}

inline void init_bottleneck(ParamSet& params, const ModelDims& dims,
                            std::size_t k, const std::array<int, 3>& classes,
                            Rng rng) {
  if (k == 0 || k >= dims.embed_dim)
    throw std::invalid_argument("bottleneck: need 0 < k < embed_dim");
  const std::size_t res_dim = dims.embed_dim - k;
  params["bottleneck/demo/W"] = xavier_uniform(dims.embed_dim, k, rng);
  params["bottleneck/res/W"] = xavier_uniform(dims.embed_dim, res_dim, rng);
  for (std::size_t a = 0; a < kAttributes.size(); ++a) {
    const std::string name = kAttributes[a];
    Rng demo_rng = rng.child("demo/" + name);
    params["bottleneck/demo_head/" + name + "/W"] =
        xavier_uniform(k, static_cast<std::size_t>(classes[a]), demo_rng);
    params["bottleneck/demo_head/" + name + "/b"] =
        Tensor::zeros_vector(static_cast<std::size_t>(classes[a]));
    init_adversary(params, "bottleneck/res_adv/" + name, res_dim,
                   dims.adv_hidden, static_cast<std::size_t>(classes[a]),
                   rng.child("res/" + name));
  }
}

// ---- graph building --------------------------------------------------------

struct BoundParams {
  std::map<std::string, ad::Var> vars;

  ad::Var at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end())
      throw std::logic_error("missing bound parameter: " + name);
    return it->second;
  }
};

inline BoundParams bind_params(ad::Tape& tape, const ParamSet& params) {
  BoundParams bound;
  for (const auto& [name, tensor] : params) bound.vars[name] = tape.input(tensor);
  return bound;
}

inline GradSet collect_grads(const ad::Tape& tape, const BoundParams& bound) {
  GradSet grads;
  for (const auto& [name, var] : bound.vars) grads[name] = tape.grad(var);
  return grads;
}

/// x . W + b as one node chain.
inline ad::Var linear_node(ad::Tape& tape, ad::Var x, const BoundParams& p,
                           const std::string& prefix) {
  return tape.add_row_bias(tape.matmul(x, p.at(prefix + "/W")),
                           p.at(prefix + "/b"));
}

/// Per-frame MLP (linear, ReLU, linear), mean/std pooling, linear head.
inline ad::Var encode_node(ad::Tape& tape, const BoundParams& p,
                           ad::Var features) {
  ad::Var h1 = tape.relu(linear_node(tape, features, p, "encoder/frame1"));
  ad::Var h2 = linear_node(tape, h1, p, "encoder/frame2");
  ad::Var pooled = tape.mean_std_pool(h2);
  return linear_node(tape, pooled, p, "encoder/pool");
}

inline ad::Var projection_node(ad::Tape& tape, const BoundParams& p,
                               ad::Var z) {
  ad::Var h1 = tape.relu(linear_node(tape, z, p, "head/l1"));
  ad::Var h2 = tape.relu(linear_node(tape, h1, p, "head/l2"));
  return linear_node(tape, h2, p, "head/out");
}

inline ad::Var adversary_node(ad::Tape& tape, const BoundParams& p,
                              const std::string& prefix, ad::Var input) {
  ad::Var h = tape.relu(linear_node(tape, input, p, prefix + "/l1"));
  return linear_node(tape, h, p, prefix + "/out");
}

/// Deterministic forward pass: features (frames x input_dim) -> embedding z.
inline std::vector<double> encode(const Tensor& features,
                                  const ParamSet& params) {
  ad::Tape tape;
  BoundParams bound = bind_params(tape, params);
  ad::Var z = encode_node(tape, bound, tape.input(features));
  return tape.value(z).raw();
}

struct BottleneckOutputs {
  std::vector<double> demo;
  std::vector<double> residual;
  std::map<std::string, std::vector<double>> demo_logits;
  std::map<std::string, std::vector<double>> residual_logits;
};

/// Branch split plus all classifier logits for one embedding. The residual
/// adversary paths carry a GRL node; the forward values are unaffected.
inline BottleneckOutputs bottleneck_forward(const std::vector<double>& z,
                                            const ParamSet& params) {
  ad::Tape tape;
  BoundParams bound = bind_params(tape, params);
  ad::Var zv = tape.input(Tensor::matrix(1, z.size(), z));
  ad::Var demo = tape.matmul(zv, bound.at("bottleneck/demo/W"));
  ad::Var res = tape.matmul(zv, bound.at("bottleneck/res/W"));
  ad::Var res_rev = tape.grl(res, 1.0);
  BottleneckOutputs out;
  out.demo = tape.value(demo).raw();
  out.residual = tape.value(res).raw();
  for (const char* attr : kAttributes) {
    ad::Var dl = linear_node(tape, demo, bound,
                             std::string("bottleneck/demo_head/") + attr);
    ad::Var rl = adversary_node(tape, bound,
                                std::string("bottleneck/res_adv/") + attr,
                                res_rev);
    out.demo_logits[attr] = tape.value(dl).raw();
    out.residual_logits[attr] = tape.value(rl).raw();
  }
  return out;
}

// ---- class weights ---------------------------------------------------------

/// Inverse class frequency normalized to mean 1 over the classes actually
/// present; absent classes get weight 1 (they never appear in the labels).
inline std::vector<double> inverse_frequency_weights(
    const std::vector<int>& labels, int classes) {
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  for (int y : labels) {
    if (y < 0 || y >= classes)
      throw std::invalid_argument("class weight: label out of range");
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  std::vector<double> weights(counts.size(), 1.0);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > 0.0) {
      weights[c] = 1.0 / counts[c];
      sum += weights[c];
      ++present;
    }
  }
  if (present == 0) return weights;
  const double mean = sum / static_cast<double>(present);
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] > 0.0) weights[c] /= mean;
  return weights;
}

// ---- training --------------------------------------------------------------

namespace detail {

inline void require_labels(const TrainingSet& data) {
  for (const auto& item : data.items) {
    if (item.gender < 0 || item.age < 0 || item.accent < 0)
      throw std::invalid_argument("utterance " + item.id +
                                  " is missing a demographic label");
  }
}

inline std::vector<std::vector<double>> attribute_weights(
    const TrainingSet& data) {
  std::vector<std::vector<double>> weights;
  for (std::size_t a = 0; a < kAttributes.size(); ++a) {
    std::vector<int> labels;
    labels.reserve(data.items.size());
    for (std::size_t i = 0; i < data.items.size(); ++i)
      labels.push_back(data.label_for(i, a));
    weights.push_back(inverse_frequency_weights(labels, data.classes_for(a)));
  }
  return weights;
}

inline ParamSet filter_prefix(const ParamSet& params,
                              const std::string& prefix) {
  ParamSet out;
  for (const auto& [name, t] : params)
    if (name.rfind(prefix, 0) == 0) out[name] = t;
  return out;
}

}  // namespace detail

/// Shared SimCLR loop for baseline and adversarial modes. Returns every
/// parameter it touched; the public entry points strip what their contracts
/// discard.
inline TrainResult train_contrastive(const TrainingSet& data,
                                     const TrainConfig& cfg) {
  if (!data.views) throw std::invalid_argument("training set has no views");
  const bool adversarial = cfg.mode == TrainMode::adversarial;
  if (adversarial) detail::require_labels(data);

  Rng root(cfg.seed);
  ParamSet params;
  init_encoder(params, cfg.dims, root.child("init/encoder"));
  init_projection_head(params, cfg.dims, root.child("init/head"));
  if (adversarial) {
    const std::array<int, 3> classes = {data.gender_classes, data.age_classes,
                                        data.accent_classes};
    for (std::size_t a = 0; a < kAttributes.size(); ++a) {
      init_adversary(params, std::string("adv/") + kAttributes[a],
                     cfg.dims.embed_dim, cfg.dims.adv_hidden,
                     static_cast<std::size_t>(classes[a]),
                     root.child(std::string("init/adversary/") + kAttributes[a]));
    }
  }
  const auto weights = detail::attribute_weights(data);

  AdamState adam;
  adam.learning_rate = cfg.effective_learning_rate();

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = root.child("epoch").child(epoch);
    std::vector<std::size_t> order(data.items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    {
      Rng order_rng = epoch_rng.child("order");
      order_rng.shuffle(order);
    }
    EpochLosses losses;
    losses.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, order.size());
      if (end - begin < 2) continue;  // NT-Xent needs at least two pairs
      ad::Tape tape;
      BoundParams bound = bind_params(tape, params);
      std::vector<ad::Var> rows;
      std::vector<int> view_labels[3];
      rows.reserve(2 * (end - begin));
      for (std::size_t bi = begin; bi < end; ++bi) {
        const std::size_t idx = order[bi];
        Rng aug_rng = epoch_rng.child("aug").child(idx);
        auto [fa, fb] = data.views(idx, aug_rng);
        rows.push_back(encode_node(tape, bound, tape.input(std::move(fa))));
        rows.push_back(encode_node(tape, bound, tape.input(std::move(fb))));
        if (adversarial) {
          for (std::size_t a = 0; a < 3; ++a) {
            const int y = data.label_for(idx, a);
            view_labels[a].push_back(y);
            view_labels[a].push_back(y);
          }
        }
      }
      ad::Var z_batch = tape.stack_rows(rows);
      ad::Var projected =
          tape.l2_normalize_rows(projection_node(tape, bound, z_batch));
      ad::Var contrastive = tape.nt_xent(projected, cfg.temperature);
      ad::Var total = contrastive;
      ad::Var adv_sum{};
      if (adversarial) {
        ad::Var reversed = tape.grl(z_batch, 1.0);
        for (std::size_t a = 0; a < 3; ++a) {
          ad::Var logits = adversary_node(
              tape, bound, std::string("adv/") + kAttributes[a], reversed);
          ad::Var ce = tape.softmax_cross_entropy(logits, view_labels[a],
                                                  weights[a]);
          adv_sum = adv_sum.valid() ? tape.add(adv_sum, ce) : ce;
        }
        total = tape.add(total, tape.scale(adv_sum, cfg.lambda_adv));
      }
      const double total_value = tape.value(total).item();
      if (!std::isfinite(total_value))
        throw TrainingDiverged("training diverged at epoch " +
                               std::to_string(epoch));
      tape.backward(total);
      GradSet grads = collect_grads(tape, bound);
      clip_gradients(grads, cfg.grad_clip_norm);
      adam_step(params, grads, adam);
      losses.total += total_value;
      losses.ntxent += tape.value(contrastive).item();
      if (adversarial) losses.adversarial_ce += tape.value(adv_sum).item();
      ++batches;
    }
    if (batches > 0) {
      losses.total /= static_cast<double>(batches);
      losses.ntxent /= static_cast<double>(batches);
      losses.adversarial_ce /= static_cast<double>(batches);
    }
    result.curves.push_back(losses);
  }
  result.params = std::move(params);
  return result;
}

/// SimCLR baseline. The projection head is dropped from the returned
/// parameters; downstream evaluation uses the encoder embedding z.
inline TrainResult train_baseline(const TrainingSet& data,
                                  const TrainConfig& cfg) {
  TrainConfig base = cfg;
  base.mode = TrainMode::baseline;
  TrainResult result = train_contrastive(data, base);
  result.params = detail::filter_prefix(result.params, "encoder/");
  return result;
}

/// Joint single-phase adversarial training. GRL sits between the encoder
/// embedding and each adversary with unit reversal; lambda_adv weights the
/// summed cross-entropy term of the loss.
inline TrainResult train_adversarial(const TrainingSet& data,
                                     const TrainConfig& cfg) {
  TrainConfig adv = cfg;
  adv.mode = TrainMode::adversarial;
  TrainResult result = train_contrastive(data, adv);
  result.params = detail::filter_prefix(result.params, "encoder/");
  return result;
}

/// Causal bottleneck training on top of a pretrained encoder. With
/// freeze_encoder the embeddings are extracted once and only the bottleneck
/// parameters move; otherwise the encoder trains jointly and an NT-Xent term
/// on the normalized residual projections is added.
inline TrainResult train_bottleneck(const TrainingSet& data,
                                    const ParamSet& pretrained_encoder,
                                    const TrainConfig& cfg) {
  detail::require_labels(data);
  if (!data.eval_features)
    throw std::invalid_argument("training set has no eval_features");
  const std::size_t k = cfg.bottleneck_k;
  if (k == 0 || k >= cfg.dims.embed_dim)
    throw std::invalid_argument("bottleneck: need 0 < k < embed_dim");

  Rng root(cfg.seed);
  ParamSet encoder = detail::filter_prefix(pretrained_encoder, "encoder/");
  if (encoder.empty())
    throw std::invalid_argument("bottleneck: pretrained encoder is empty");
  const std::array<int, 3> classes = {data.gender_classes, data.age_classes,
                                      data.accent_classes};
  ParamSet trainable;
  init_bottleneck(trainable, cfg.dims, k, classes, root.child("init/bottleneck"));
  if (!cfg.freeze_encoder)
    for (const auto& [name, t] : encoder) trainable[name] = t;

  const auto weights = detail::attribute_weights(data);
  const std::array<double, 3> lambdas = cfg.lambda_triple();

  // Frozen path: one deterministic embedding per utterance, computed once.
  std::vector<std::vector<double>> frozen_z;
  if (cfg.freeze_encoder) {
    frozen_z.resize(data.items.size());
    for (std::size_t i = 0; i < data.items.size(); ++i) {
      Rng embed_rng = root.child("embed").child(i);
      frozen_z[i] = encode(data.eval_features(i, embed_rng), encoder);
    }
  }

  AdamState adam;
  adam.learning_rate = cfg.effective_learning_rate();

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = root.child("epoch").child(epoch);
    std::vector<std::size_t> order(data.items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    {
      Rng order_rng = epoch_rng.child("order");
      order_rng.shuffle(order);
    }
    EpochLosses losses;
    losses.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, order.size());
      if (end - begin < 2) continue;
      ad::Tape tape;
      BoundParams bound = bind_params(tape, trainable);
      std::vector<ad::Var> rows;
      std::vector<int> batch_labels[3];
      for (std::size_t bi = begin; bi < end; ++bi) {
        const std::size_t idx = order[bi];
        if (cfg.freeze_encoder) {
          rows.push_back(tape.input(
              Tensor::matrix(1, frozen_z[idx].size(), frozen_z[idx])));
          for (std::size_t a = 0; a < 3; ++a)
            batch_labels[a].push_back(data.label_for(idx, a));
        } else {
          Rng aug_rng = epoch_rng.child("aug").child(idx);
          auto [fa, fb] = data.views(idx, aug_rng);
          rows.push_back(encode_node(tape, bound, tape.input(std::move(fa))));
          rows.push_back(encode_node(tape, bound, tape.input(std::move(fb))));
          for (std::size_t a = 0; a < 3; ++a) {
            const int y = data.label_for(idx, a);
            batch_labels[a].push_back(y);
            batch_labels[a].push_back(y);
          }
        }
      }
      ad::Var z_batch = tape.stack_rows(rows);
      ad::Var demo = tape.matmul(z_batch, bound.at("bottleneck/demo/W"));
      ad::Var res = tape.matmul(z_batch, bound.at("bottleneck/res/W"));
      ad::Var total{};
      double demo_ce_value = 0.0, res_ce_value = 0.0;
      for (std::size_t a = 0; a < 3; ++a) {
        ad::Var demo_logits = linear_node(
            tape, demo, bound, std::string("bottleneck/demo_head/") +
                                   kAttributes[a]);
        ad::Var demo_ce = tape.softmax_cross_entropy(
            demo_logits, batch_labels[a], weights[a]);
        total = total.valid() ? tape.add(total, demo_ce) : demo_ce;
        demo_ce_value += tape.value(demo_ce).item();

        ad::Var res_logits = adversary_node(
            tape, bound, std::string("bottleneck/res_adv/") + kAttributes[a],
            tape.grl(res, 1.0));
        ad::Var res_ce = tape.softmax_cross_entropy(
            res_logits, batch_labels[a], weights[a]);
        total = tape.add(total, tape.scale(res_ce, lambdas[a]));
        res_ce_value += tape.value(res_ce).item();
      }
      ad::Var cov = tape.covariance_penalty(demo, res);
      total = tape.add(total, tape.scale(cov, cfg.covariance_weight));
      if (!cfg.freeze_encoder) {
        ad::Var res_projected = tape.l2_normalize_rows(res);
        ad::Var contrastive = tape.nt_xent(res_projected, cfg.temperature);
        total = tape.add(total, contrastive);
        losses.ntxent += tape.value(contrastive).item();
      }
      const double total_value = tape.value(total).item();
      if (!std::isfinite(total_value))
        throw TrainingDiverged("training diverged at epoch " +
                               std::to_string(epoch));
      tape.backward(total);
      GradSet grads = collect_grads(tape, bound);
      clip_gradients(grads, cfg.grad_clip_norm);
      adam_step(trainable, grads, adam);
      losses.total += total_value;
      losses.demo_ce += demo_ce_value;
      losses.residual_ce += res_ce_value;
      losses.covariance += tape.value(cov).item();
      ++batches;
    }
    if (batches > 0) {
      const double inv = 1.0 / static_cast<double>(batches);
      losses.total *= inv;
      losses.ntxent *= inv;
      losses.demo_ce *= inv;
      losses.residual_ce *= inv;
      losses.covariance *= inv;
    }
    result.curves.push_back(losses);
  }

  result.params = std::move(trainable);
  if (cfg.freeze_encoder)
    for (const auto& [name, t] : encoder) result.params[name] = t;
  return result;
}

}  // namespace dseb
