#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dseb/tensor.hpp"

namespace dseb::ad {

/// Handle into a Tape node.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Nodes are recorded in creation order, which is a
/// topological order by construction (an op's inputs always exist before its
/// output). backward() visits nodes exactly once in reverse.
class Tape {
 public:
  Var input(Tensor value) {
    nodes_.push_back(Node{std::move(value), Tensor{}, nullptr});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  const Tensor& value(Var v) const { return node(v).value; }

  /// Gradient of the last backward() loss w.r.t. node v.
  const Tensor& grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) {
      throw std::logic_error("tape: gradient not computed; call backward()");
    }
    return n.grad;
  }

  std::size_t node_count() const { return nodes_.size(); }

  // ---- ops -------------------------------------------------------------

  Var matmul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.cols() != bv.rows()) {
      throw std::invalid_argument("matmul: inner dimensions differ, lhs " +
                                  av.shape_string() + " rhs " +
                                  bv.shape_string());
    }
    Tensor out = dseb::matmul(av, bv);
    return record(std::move(out), [a, b](Tape& t, const Tensor& g, int) {
      // grad_a = g . b^T ; grad_b = a^T . g
      matmul_accumulate(g, transpose(t.value(b)), t.grad_buffer(a));
      matmul_accumulate(transpose(t.value(a)), g, t.grad_buffer(b));
    });
  }

  Var add(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) {
      throw std::invalid_argument("add: shape mismatch " + av.shape_string() +
                                  " vs " + bv.shape_string());
    }
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return record(std::move(out), [a, b](Tape& t, const Tensor& g, int) {
      accumulate(t.grad_buffer(a), g);
      accumulate(t.grad_buffer(b), g);
    });
  }

  /// x (NxD) + bias (vector of D) broadcast across rows.
  Var add_row_bias(Var x, Var bias) {
    const Tensor& xv = value(x);
    const Tensor& bv = value(bias);
    if (bv.size() != xv.cols()) {
      throw std::invalid_argument("add_row_bias: bias length " +
                                  std::to_string(bv.size()) +
                                  " does not match columns of " +
                                  xv.shape_string());
    }
    Tensor out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += bv[c];
    return record(std::move(out), [x, bias](Tape& t, const Tensor& g, int) {
      accumulate(t.grad_buffer(x), g);
      Tensor& gb = t.grad_buffer(bias);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g.at(r, c);
    });
  }

  Var scale(Var x, double factor) {
    Tensor out = value(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
    return record(std::move(out), [x, factor](Tape& t, const Tensor& g, int) {
      Tensor& gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
    });
  }

  Var mul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) {
      throw std::invalid_argument("mul: shape mismatch");
    }
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return record(std::move(out), [a, b](Tape& t, const Tensor& g, int) {
      Tensor& ga = t.grad_buffer(a);
      Tensor& gb = t.grad_buffer(b);
      const Tensor& av = t.value(a);
      const Tensor& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bv[i];
        gb[i] += g[i] * av[i];
      }
    });
  }

  Var relu(Var x) {
    Tensor out = value(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], 0.0);
    return record(std::move(out), [x](Tape& t, const Tensor& g, int self) {
      Tensor& gx = t.grad_buffer(x);
      const Tensor& y = t.nodes_[self].value;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (y[i] > 0.0) gx[i] += g[i];
    });
  }

  Var sum(Var x) {
    double s = 0.0;
    for (double v : value(x).raw()) s += v;
    return record(Tensor::scalar(s), [x](Tape& t, const Tensor& g, int) {
      Tensor& gx = t.grad_buffer(x);
      const double gs = g[0];
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gs;
    });
  }

  /// Stack 1xD rows into an NxD matrix.
  Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
    const std::size_t d = value(rows[0]).cols();
    Tensor out = Tensor::zeros(rows.size(), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Tensor& r = value(rows[i]);
      if (r.rows() != 1 || r.cols() != d) {
        throw std::invalid_argument("stack_rows: row " + std::to_string(i) +
                                    " has shape " + r.shape_string());
      }
      for (std::size_t c = 0; c < d; ++c) out.at(i, c) = r.at(0, c);
    }
    return record(std::move(out), [rows](Tape& t, const Tensor& g, int) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        Tensor& gr = t.grad_buffer(rows[i]);
        for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g.at(i, c);
      }
    });
  }

  /// Normalize every row to unit Euclidean norm. Rows with norm <= 1e-12
  /// are rejected.
  Var l2_normalize_rows(Var x) {
    const Tensor& xv = value(x);
    Tensor out = xv;
    std::vector<double> norms(xv.rows());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < xv.cols(); ++c) s += xv.at(r, c) * xv.at(r, c);
      const double n = std::sqrt(s);
      if (n <= 1e-12) throw std::invalid_argument("degenerate embedding");
      norms[r] = n;
      for (std::size_t c = 0; c < xv.cols(); ++c) out.at(r, c) /= n;
    }
    return record(std::move(out), [x, norms](Tape& t, const Tensor& g,
                                             int self) {
      // d/dx (x/|x|) applied per row: (g - <g,y> y) / |x|
      const Tensor& y = t.nodes_[self].value;
      Tensor& gx = t.grad_buffer(x);
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c)
          gx.at(r, c) += (g.at(r, c) - dot * y.at(r, c)) / norms[r];
      }
    });
  }

  /// TxH -> 1x2H: per-column temporal mean, then per-column population std.
  /// A zero-variance column contributes zero gradient through the std half.
  Var mean_std_pool(Var x) {
    const Tensor& xv = value(x);
    const std::size_t frames = xv.rows(), h = xv.cols();
    Tensor out = Tensor::zeros(1, 2 * h);
    for (std::size_t c = 0; c < h; ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < frames; ++r) mean += xv.at(r, c);
      mean /= static_cast<double>(frames);
      double var = 0.0;
      for (std::size_t r = 0; r < frames; ++r) {
        const double d = xv.at(r, c) - mean;
        var += d * d;
      }
      var /= static_cast<double>(frames);
      out.at(0, c) = mean;
      out.at(0, h + c) = std::sqrt(var);
    }
    return record(std::move(out), [x, frames, h](Tape& t, const Tensor& g,
                                                 int self) {
      const Tensor& xv = t.value(x);
      const Tensor& out = t.nodes_[self].value;
      Tensor& gx = t.grad_buffer(x);
      const double inv_n = 1.0 / static_cast<double>(frames);
      for (std::size_t c = 0; c < h; ++c) {
        const double gmean = g.at(0, c);
        const double gstd = g.at(0, h + c);
        const double mean = out.at(0, c);
        const double stddev = out.at(0, h + c);
        for (std::size_t r = 0; r < frames; ++r) {
          double acc = gmean * inv_n;
          if (stddev > 0.0)
            acc += gstd * (xv.at(r, c) - mean) * inv_n / stddev;
          gx.at(r, c) += acc;
        }
      }
    });
  }

  /// Gradient reversal: identity forward, -lambda * upstream backward.
  Var grl(Var x, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("grl: lambda must be >= 0");
    Tensor out = value(x);
    return record(std::move(out), [x, lambda](Tape& t, const Tensor& g, int) {
      Tensor& gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += -lambda * g[i];
    });
  }

  /// Class-weighted mean cross-entropy over rows of logits.
  /// loss = sum_i w[y_i] * (-log softmax(logits_i)[y_i]) / sum_i w[y_i].
  Var softmax_cross_entropy(Var logits, std::vector<int> labels,
                            std::vector<double> class_weights) {
    const Tensor& lv = value(logits);
    const std::size_t n = lv.rows(), c = lv.cols();
    if (labels.size() != n) {
      throw std::invalid_argument("softmax_cross_entropy: got " +
                                  std::to_string(labels.size()) +
                                  " labels for " + std::to_string(n) + " rows");
    }
    if (class_weights.size() != c) {
      throw std::invalid_argument(
          "softmax_cross_entropy: class_weights length " +
          std::to_string(class_weights.size()) + " for " + std::to_string(c) +
          " classes");
    }
    for (double w : class_weights) {
      if (!(w > 0.0))
        throw std::invalid_argument(
            "softmax_cross_entropy: class weights must be positive");
    }
    Tensor probs = Tensor::zeros(n, c);
    double loss = 0.0, weight_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const int y = labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= c) {
        throw std::invalid_argument("softmax_cross_entropy: label " +
                                    std::to_string(y) + " out of range [0," +
                                    std::to_string(c) + ") at row " +
                                    std::to_string(i));
      }
      double mx = lv.at(i, 0);
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv.at(i, j));
      double denom = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        probs.at(i, j) = std::exp(lv.at(i, j) - mx);
        denom += probs.at(i, j);
      }
      for (std::size_t j = 0; j < c; ++j) probs.at(i, j) /= denom;
      const double w = class_weights[static_cast<std::size_t>(y)];
      loss += w * -(lv.at(i, static_cast<std::size_t>(y)) - mx -
                    std::log(denom));
      weight_sum += w;
    }
    loss /= weight_sum;
    return record(
        Tensor::scalar(loss),
        [logits, labels = std::move(labels),
         class_weights = std::move(class_weights), probs = std::move(probs),
         weight_sum](Tape& t, const Tensor& g, int) {
          Tensor& gl = t.grad_buffer(logits);
          const double gs = g[0];
          for (std::size_t i = 0; i < probs.rows(); ++i) {
            const int y = labels[i];
            const double w =
                class_weights[static_cast<std::size_t>(y)] / weight_sum;
            for (std::size_t j = 0; j < probs.cols(); ++j) {
              double d = probs.at(i, j);
              if (static_cast<int>(j) == y) d -= 1.0;
              gl.at(i, j) += gs * w * d;
            }
          }
        });
  }

  /// Normalized temperature-scaled cross-entropy over 2N unit-norm rows,
  /// where rows 2i and 2i+1 form a positive pair. Self-similarity is
  /// excluded from every denominator.
  Var nt_xent(Var projections, double temperature) {
    const Tensor& p = value(projections);
    const std::size_t total = p.rows();
    if (temperature <= 0.0)
      throw std::invalid_argument("nt_xent: temperature must be > 0");
    if (total < 4 || total % 2 != 0)
      throw std::invalid_argument("nt_xent: need 2N rows with N >= 2");
    for (std::size_t r = 0; r < total; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) s += p.at(r, c) * p.at(r, c);
      if (std::abs(std::sqrt(s) - 1.0) > 1e-6)
        throw std::invalid_argument("nt_xent: row " + std::to_string(r) +
                                    " is not unit-norm");
    }
    Tensor sim = dseb::matmul(p, transpose(p));
    // Per-anchor softmax over the 2N-1 candidates (self excluded).
    Tensor soft = Tensor::zeros(total, total);
    double loss = 0.0;
    for (std::size_t i = 0; i < total; ++i) {
      const std::size_t partner = i ^ 1ULL;
      double mx = -1e300;
      for (std::size_t k = 0; k < total; ++k)
        if (k != i) mx = std::max(mx, sim.at(i, k) / temperature);
      double denom = 0.0;
      for (std::size_t k = 0; k < total; ++k) {
        if (k == i) continue;
        soft.at(i, k) = std::exp(sim.at(i, k) / temperature - mx);
        denom += soft.at(i, k);
      }
      for (std::size_t k = 0; k < total; ++k) soft.at(i, k) /= denom;
      loss += -(sim.at(i, partner) / temperature - mx - std::log(denom));
    }
    loss /= static_cast<double>(total);
    return record(
        Tensor::scalar(loss),
        [projections, temperature, soft = std::move(soft)](Tape& t,
                                                           const Tensor& g,
                                                           int self) {
          // dL/dS, then dL/dP = (G + G^T) P since S = P P^T.
          const Tensor& p = t.value(projections);
          const std::size_t total = p.rows();
          const double scale = g[0] / (static_cast<double>(total) * temperature);
          Tensor gs = Tensor::zeros(total, total);
          for (std::size_t i = 0; i < total; ++i) {
            const std::size_t partner = i ^ 1ULL;
            for (std::size_t k = 0; k < total; ++k) {
              if (k == i) continue;
              double d = soft.at(i, k);
              if (k == partner) d -= 1.0;
              gs.at(i, k) = scale * d;
            }
          }
          Tensor sym = Tensor::zeros(total, total);
          for (std::size_t i = 0; i < total; ++i)
            for (std::size_t k = 0; k < total; ++k)
              sym.at(i, k) = gs.at(i, k) + gs.at(k, i);
          matmul_accumulate(sym, p, t.grad_buffer(projections));
          (void)self;
        });
  }

  /// Mean squared entry of the batch cross-covariance matrix between two
  /// branches (rows are batch items). Population normalization 1/N.
  Var covariance_penalty(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const std::size_t n = av.rows();
    if (bv.rows() != n)
      throw std::invalid_argument("covariance_penalty: batch sizes differ");
    if (n < 2)
      throw std::invalid_argument("covariance_penalty: need batch of >= 2");
    const std::size_t ka = av.cols(), kb = bv.cols();
    Tensor ac = center_rows(av);
    Tensor bc = center_rows(bv);
    Tensor cov = dseb::matmul(transpose(ac), bc);
    const double inv_n = 1.0 / static_cast<double>(n);
    double penalty = 0.0;
    for (std::size_t i = 0; i < cov.size(); ++i) {
      cov[i] *= inv_n;
      penalty += cov[i] * cov[i];
    }
    const double norm = 1.0 / static_cast<double>(ka * kb);
    penalty *= norm;
    return record(
        Tensor::scalar(penalty),
        [a, b, ac = std::move(ac), bc = std::move(bc), cov = std::move(cov),
         inv_n, norm](Tape& t, const Tensor& g, int) {
          // dL/dC = 2 C norm; dL/dAc = Bc (dL/dC)^T / N; centering adjoint
          // subtracts column means.
          Tensor gc = cov;
          for (std::size_t i = 0; i < gc.size(); ++i) gc[i] *= 2.0 * norm * g[0];
          Tensor ga = dseb::matmul(bc, transpose(gc));
          Tensor gb = dseb::matmul(ac, gc);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= inv_n;
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= inv_n;
          accumulate_centered(t.grad_buffer(a), ga);
          accumulate_centered(t.grad_buffer(b), gb);
        });
  }

  // ---- backward ---------------------------------------------------------

  /// Seed the scalar loss gradient with 1 and sweep the tape in reverse.
  void backward(Var loss) {
    const Node& ln = node(loss);
    if (ln.value.size() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  ln.value.shape_string());
    }
    for (Node& n : nodes_) {
      n.grad = Tensor::zeros_like(n.value);
    }
    nodes_[static_cast<std::size_t>(loss.id)].grad[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backprop) n.backprop(*this, n.grad, i);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&, const Tensor&, int)> backprop;
  };

  const Node& node(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw std::logic_error("tape: invalid node handle");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  Tensor& grad_buffer(Var v) {
    return nodes_[static_cast<std::size_t>(v.id)].grad;
  }

  Var record(Tensor value, std::function<void(Tape&, const Tensor&, int)> bp) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(bp)});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  static void accumulate(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  static Tensor center_rows(const Tensor& x) {
    Tensor out = x;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < x.rows(); ++r) mean += x.at(r, c);
      mean /= static_cast<double>(x.rows());
      for (std::size_t r = 0; r < x.rows(); ++r) out.at(r, c) -= mean;
    }
    return out;
  }

  static void accumulate_centered(Tensor& dst, const Tensor& g) {
    for (std::size_t c = 0; c < g.cols(); ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < g.rows(); ++r) mean += g.at(r, c);
      mean /= static_cast<double>(g.rows());
      for (std::size_t r = 0; r < g.rows(); ++r)
        dst.at(r, c) += g.at(r, c) - mean;
    }
  }

  std::vector<Node> nodes_;
};

/// Cosine of the angle between two equal-length vectors.
inline double cosine_similarity(const std::vector<double>& u,
                                const std::vector<double>& v) {
  if (u.size() != v.size())
    throw std::invalid_argument("cosine_similarity: length mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu <= 1e-24 || nv <= 1e-24)
    throw std::invalid_argument("degenerate embedding");
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

}  // namespace dseb::ad
