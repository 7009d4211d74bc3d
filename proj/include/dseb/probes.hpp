#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dseb/adam.hpp"
#include "dseb/autodiff.hpp"
#include "dseb/models.hpp"
#include "dseb/rng.hpp"
#include "dseb/tensor.hpp"

namespace dseb {

enum class ProbeKind { linear, mlp };

struct ProbeConfig {
  ProbeKind kind = ProbeKind::linear;
  std::size_t mlp_hidden = 128;
  double learning_rate = 0.01;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};  // MLP sweep
  std::size_t bootstrap_resamples = 1000;
  double bootstrap_level = 0.95;
};

/// One attribute/split row of a probing table.
struct ProbeReport {
  std::string attribute;
  std::string split;
  double point_accuracy = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double mlp_mean = 0.0;
  double mlp_std = 0.0;
  std::size_t n_eval = 0;
};

struct ProbeParams {
  ProbeKind kind = ProbeKind::linear;
  int classes = 0;
  ParamSet params;
};

namespace detail {

inline int infer_classes(const std::vector<int>& labels) {
  int mx = -1;
  for (int y : labels) {
    if (y < 0) throw std::invalid_argument("probe: negative label");
    mx = std::max(mx, y);
  }
  return mx + 1;
}

inline ad::Var probe_logits(ad::Tape& tape, const BoundParams& bound,
                            ProbeKind kind, ad::Var x) {
  if (kind == ProbeKind::linear) return linear_node(tape, x, bound, "probe/out");
  ad::Var h = tape.relu(linear_node(tape, x, bound, "probe/l1"));
  return linear_node(tape, h, bound, "probe/out");
}

inline Tensor take_rows(const Tensor& m, const std::vector<std::size_t>& idx) {
  Tensor out = Tensor::zeros(idx.size(), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      out.at(r, c) = m.at(idx[r], c);
  return out;
}

}  // namespace detail

/// Plain mini-batch SGD on class-weighted cross-entropy. Embeddings are
/// frozen inputs; only the probe parameters move. Deterministic per seed.
inline ProbeParams train_probe(const Tensor& embeddings,
                               const std::vector<int>& labels,
                               const ProbeConfig& cfg, std::uint64_t seed) {
  const std::size_t n = embeddings.rows();
  if (labels.size() != n)
    throw std::invalid_argument("train_probe: label count mismatch");
  const int classes = detail::infer_classes(labels);
  if (classes < 2)
    throw std::invalid_argument("train_probe: need at least 2 classes");
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
  for (int y : labels) counts[static_cast<std::size_t>(y)] += 1;
  for (int c = 0; c < classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0)
      throw std::invalid_argument("train_probe: class " + std::to_string(c) +
                                  " absent from training split");
  }
  const std::vector<double> weights = inverse_frequency_weights(labels, classes);

  Rng root(seed);
  ProbeParams probe;
  probe.kind = cfg.kind;
  probe.classes = classes;
  const std::size_t dim = embeddings.cols();
  if (cfg.kind == ProbeKind::linear) {
    // Zero init keeps the convex fit independent of the seed; the seed only
    // drives batch order.
    probe.params["probe/out/W"] =
        Tensor::zeros(dim, static_cast<std::size_t>(classes));
    probe.params["probe/out/b"] =
        Tensor::zeros_vector(static_cast<std::size_t>(classes));
  } else {
    Rng init = root.child("init");
    probe.params["probe/l1/W"] = xavier_uniform(dim, cfg.mlp_hidden, init);
    probe.params["probe/l1/b"] = Tensor::zeros_vector(cfg.mlp_hidden);
    probe.params["probe/out/W"] =
        xavier_uniform(cfg.mlp_hidden, static_cast<std::size_t>(classes), init);
    probe.params["probe/out/b"] =
        Tensor::zeros_vector(static_cast<std::size_t>(classes));
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order_rng = root.child("epoch").child(epoch);
    order_rng.shuffle(order);
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, n);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<int> batch_labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i)
        batch_labels[i] = labels[idx[i]];
      ad::Tape tape;
      BoundParams bound = bind_params(tape, probe.params);
      ad::Var x = tape.input(detail::take_rows(embeddings, idx));
      ad::Var loss = tape.softmax_cross_entropy(
          detail::probe_logits(tape, bound, cfg.kind, x), batch_labels,
          weights);
      tape.backward(loss);
      for (auto& [name, theta] : probe.params) {
        const Tensor& g = tape.grad(bound.at(name));
        for (std::size_t i = 0; i < theta.size(); ++i)
          theta[i] -= cfg.learning_rate * g[i];
      }
    }
  }
  return probe;
}

/// Argmax predictions; ties resolve to the lowest class index.
inline std::vector<int> probe_predict(const ProbeParams& probe,
                                      const Tensor& embeddings) {
  ad::Tape tape;
  BoundParams bound = bind_params(tape, probe.params);
  ad::Var logits = detail::probe_logits(tape, bound, probe.kind,
                                        tape.input(embeddings));
  const Tensor& lv = tape.value(logits);
  std::vector<int> out(lv.rows());
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    int best = 0;
    for (std::size_t c = 1; c < lv.cols(); ++c)
      if (lv.at(r, c) > lv.at(r, static_cast<std::size_t>(best)))
        best = static_cast<int>(c);
    out[r] = best;
  }
  return out;
}

inline double evaluate_probe(const ProbeParams& probe, const Tensor& embeddings,
                             const std::vector<int>& labels) {
  if (labels.size() != embeddings.rows())
    throw std::invalid_argument("evaluate_probe: label count mismatch");
  const std::vector<int> pred = probe_predict(probe, embeddings);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

/// Percentile bootstrap interval for accuracy, resampling prediction/label
/// pairs with replacement. Deterministic per seed.
inline std::pair<double, double> bootstrap_ci(const std::vector<int>& predictions,
                                              const std::vector<int>& labels,
                                              std::size_t resamples,
                                              double level, std::uint64_t seed) {
  const std::size_t n = predictions.size();
  if (labels.size() != n)
    throw std::invalid_argument("bootstrap_ci: label count mismatch");
  if (n < 10) throw std::invalid_argument("too few samples for bootstrap");
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("bootstrap_ci: level must be in (0,1)");
  std::vector<char> correct(n);
  for (std::size_t i = 0; i < n; ++i) correct[i] = predictions[i] == labels[i];
  Rng rng(seed);
  std::vector<double> acc(resamples);
  for (std::size_t r = 0; r < resamples; ++r) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i)
      hits += static_cast<std::size_t>(correct[rng.uniform_int(n)]);
    acc[r] = static_cast<double>(hits) / static_cast<double>(n);
  }
  std::sort(acc.begin(), acc.end());
  const double alpha = (1.0 - level) / 2.0;
  const auto lo_idx = static_cast<std::size_t>(
      std::floor(alpha * static_cast<double>(resamples)));
  const auto hi_idx = static_cast<std::size_t>(
      std::ceil((1.0 - alpha) * static_cast<double>(resamples))) - 1;
  return {acc[lo_idx], acc[std::min(hi_idx, resamples - 1)]};
}

struct MlpSweepResult {
  double mean = 0.0;
  double stddev = 0.0;  // population std across seeds
  std::vector<double> per_seed;
};

/// One MLP probe per seed on the training embeddings, accuracy measured on
/// the evaluation embeddings.
inline MlpSweepResult mlp_probe_sweep(const Tensor& train_embeddings,
                                      const std::vector<int>& train_labels,
                                      const Tensor& eval_embeddings,
                                      const std::vector<int>& eval_labels,
                                      const ProbeConfig& cfg) {
  if (cfg.seeds.size() < 2)
    throw std::invalid_argument("mlp_probe_sweep: need >= 2 seeds");
  ProbeConfig mlp_cfg = cfg;
  mlp_cfg.kind = ProbeKind::mlp;
  MlpSweepResult result;
  for (std::uint64_t seed : cfg.seeds) {
    ProbeParams probe = train_probe(train_embeddings, train_labels, mlp_cfg, seed);
    result.per_seed.push_back(
        evaluate_probe(probe, eval_embeddings, eval_labels));
  }
  double mean = 0.0;
  for (double a : result.per_seed) mean += a;
  mean /= static_cast<double>(result.per_seed.size());
  double var = 0.0;
  for (double a : result.per_seed) var += (a - mean) * (a - mean);
  var /= static_cast<double>(result.per_seed.size());
  result.mean = mean;
  result.stddev = std::sqrt(var);
  return result;
}

}  // namespace dseb
