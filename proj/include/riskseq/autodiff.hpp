#ifndef RISKSEQ_AUTODIFF_HPP
#define RISKSEQ_AUTODIFF_HPP

// Tape-based reverse-mode differentiation over dense double tensors.
//
// Every primitive evaluates eagerly and, when any input requires a gradient,
// records a closure that propagates the output gradient to its inputs. Nodes
// are appended in evaluation order, so the tape is topologically sorted and
// backward() is a single reverse sweep.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "riskseq/error.hpp"
#include "riskseq/tensor.hpp"

namespace riskseq::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape != nullptr; }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input that never receives a gradient.
  Var constant(Tensor value) { return push(std::move(value), nullptr, false, {}); }

  /// Differentiable leaf owning its value.
  Var leaf(Tensor value) { return push(std::move(value), nullptr, true, {}); }

  /// Differentiable leaf viewing caller-owned storage; `value` must outlive the tape.
  Var leaf_ref(const Tensor& value) { return push({}, &value, true, {}); }

  /// Appends the result of a primitive. The closure is dropped when no input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || requires_grad(in.id);
    return push(std::move(value), nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || requires_grad(in.id);
    return push(std::move(value), nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
  }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient accumulator for a node, zero-allocated on first use.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor(value(id).shape());
    return n.grad;
  }

  /// Accumulated gradient, or nullptr when nothing flowed into the node.
  const Tensor* grad_if_any(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.grad.empty() ? nullptr : &n.grad;
  }

  void backward(Var loss) {
    if (loss.tape != this) throw NumericError("loss belongs to a different tape");
    if (value(loss.id).size() != 1) {
      throw NumericError("backward requires a scalar loss, got shape " +
                         shape_string(value(loss.id).shape()));
    }
    grad(loss.id)[0] += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, const Tensor* external, bool needs, BackwardFn fn) {
    // std::deque keeps node addresses stable as the tape grows.
    nodes_.push_back(Node{std::move(value), external, Tensor{}, needs, std::move(fn)});
    return Var{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw NumericError(what);
}

inline void accumulate(Tape& tape, const Var& v, const Tensor& g) {
  if (!tape.requires_grad(v.id)) return;
  Tensor& acc = tape.grad(v.id);
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
}

}  // namespace detail

/// y = xW + b for x of shape [n, d_in] or [d_in].
inline Var dense(const Var& x, const Var& W, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& Wv = W.value();
  const Tensor& bv = b.value();
  detail::require(Wv.rank() == 2, "dense: W must be rank 2, got " + shape_string(Wv.shape()));
  const std::size_t d_in = Wv.dim(0), d_out = Wv.dim(1);
  detail::require(bv.rank() == 1 && bv.dim(0) == d_out,
                  "dense: bias shape " + shape_string(bv.shape()) + " does not match W " +
                      shape_string(Wv.shape()));
  const bool batched = xv.rank() == 2;
  detail::require((batched && xv.dim(1) == d_in) || (xv.rank() == 1 && xv.dim(0) == d_in),
                  "dense: input shape " + shape_string(xv.shape()) + " does not match W " +
                      shape_string(Wv.shape()));
  const std::size_t n = batched ? xv.dim(0) : 1;

  Tensor y(batched ? Shape{n, d_out} : Shape{d_out});
  for (std::size_t r = 0; r < n; ++r) {
    double* yr = y.data() + r * d_out;
    std::copy(bv.data(), bv.data() + d_out, yr);
    const double* xr = xv.data() + r * d_in;
    for (std::size_t i = 0; i < d_in; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wrow = Wv.data() + i * d_out;
      for (std::size_t o = 0; o < d_out; ++o) yr[o] += xi * wrow[o];
    }
  }

  Tape& tape = *x.tape;
  return tape.record(std::move(y), {x, W, b}, [x, W, b, n, d_in, d_out](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x.id);
    const Tensor& Wv = t.value(W.id);
    if (t.requires_grad(W.id)) {
      Tensor& gW = t.grad(W.id);
      for (std::size_t r = 0; r < n; ++r) {
        const double* xr = xv.data() + r * d_in;
        const double* gr = g.data() + r * d_out;
        for (std::size_t i = 0; i < d_in; ++i) {
          const double xi = xr[i];
          if (xi == 0.0) continue;
          double* gw = gW.data() + i * d_out;
          for (std::size_t o = 0; o < d_out; ++o) gw[o] += xi * gr[o];
        }
      }
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad(b.id);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < d_out; ++o) gb[o] += g[r * d_out + o];
    }
    if (t.requires_grad(x.id)) {
      Tensor& gx = t.grad(x.id);
      for (std::size_t r = 0; r < n; ++r) {
        const double* gr = g.data() + r * d_out;
        for (std::size_t i = 0; i < d_in; ++i) {
          const double* wrow = Wv.data() + i * d_out;
          double s = 0.0;
          for (std::size_t o = 0; o < d_out; ++o) s += wrow[o] * gr[o];
          gx[r * d_in + i] += s;
        }
      }
    }
  });
}

/// Causal dilated 1-D convolution over time.
///
/// x is [T, c_in], K is [k, c_in, c_out]. Tap j reads x[t - (k-1-j)*dilation],
/// so the last tap is the current step; reads before t = 0 see zero padding.
inline Var causal_dilated_conv(const Var& x, const Var& K, const Var& b, std::size_t dilation) {
  const Tensor& xv = x.value();
  const Tensor& Kv = K.value();
  const Tensor& bv = b.value();
  detail::require(dilation >= 1, "causal_dilated_conv: dilation must be >= 1");
  detail::require(xv.rank() == 2, "causal_dilated_conv: input must be [T, c_in]");
  detail::require(Kv.rank() == 3 && Kv.dim(1) == xv.dim(1),
                  "causal_dilated_conv: kernel " + shape_string(Kv.shape()) +
                      " does not match input " + shape_string(xv.shape()));
  const std::size_t T = xv.dim(0), c_in = xv.dim(1), k = Kv.dim(0), c_out = Kv.dim(2);
  detail::require(bv.rank() == 1 && bv.dim(0) == c_out, "causal_dilated_conv: bias shape mismatch");

  Tensor y({T, c_out});
  for (std::size_t t = 0; t < T; ++t) {
    double* yt = y.data() + t * c_out;
    std::copy(bv.data(), bv.data() + c_out, yt);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t shift = (k - 1 - j) * dilation;
      if (shift > t) continue;
      const double* xs = xv.data() + (t - shift) * c_in;
      const double* kj = Kv.data() + j * c_in * c_out;
      for (std::size_t c = 0; c < c_in; ++c) {
        const double xc = xs[c];
        if (xc == 0.0) continue;
        const double* kc = kj + c * c_out;
        for (std::size_t o = 0; o < c_out; ++o) yt[o] += xc * kc[o];
      }
    }
  }

  Tape& tape = *x.tape;
  return tape.record(std::move(y), {x, K, b},
                     [x, K, b, T, c_in, k, c_out, dilation](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x.id);
    const Tensor& Kv = t.value(K.id);
    const bool need_k = t.requires_grad(K.id);
    const bool need_x = t.requires_grad(x.id);
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad(b.id);
      for (std::size_t s = 0; s < T; ++s)
        for (std::size_t o = 0; o < c_out; ++o) gb[o] += g[s * c_out + o];
    }
    if (!need_k && !need_x) return;
    double* gK = need_k ? t.grad(K.id).data() : nullptr;
    double* gx = need_x ? t.grad(x.id).data() : nullptr;
    for (std::size_t s = 0; s < T; ++s) {
      const double* gs = g.data() + s * c_out;
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t shift = (k - 1 - j) * dilation;
        if (shift > s) continue;
        const std::size_t src = s - shift;
        const double* xs = xv.data() + src * c_in;
        const double* kj = Kv.data() + j * c_in * c_out;
        for (std::size_t c = 0; c < c_in; ++c) {
          const double* kc = kj + c * c_out;
          if (gK) {
            const double xc = xs[c];
            if (xc != 0.0) {
              double* gkc = gK + (j * c_in + c) * c_out;
              for (std::size_t o = 0; o < c_out; ++o) gkc[o] += xc * gs[o];
            }
          }
          if (gx) {
            double acc = 0.0;
            for (std::size_t o = 0; o < c_out; ++o) acc += kc[o] * gs[o];
            gx[src * c_in + c] += acc;
          }
        }
      }
    }
  });
}

struct AttentionOutput {
  Var context;     // [d]
  Tensor weights;  // [T], a probability distribution over timesteps
};

/// Softmax attention pooling with scores s_t = v . tanh(W_a h_t + b_a).
inline AttentionOutput attention_pool(const Var& H, const Var& v, const Var& Wa, const Var& ba) {
  const Tensor& Hv = H.value();
  const Tensor& vv = v.value();
  const Tensor& Wv = Wa.value();
  const Tensor& bv = ba.value();
  detail::require(Hv.rank() == 2 && Hv.dim(0) >= 1, "attention_pool: H must be [T>=1, d]");
  const std::size_t T = Hv.dim(0), d = Hv.dim(1);
  detail::require(vv.rank() == 1 && vv.dim(0) == d && Wv.rank() == 2 && Wv.dim(0) == d &&
                      Wv.dim(1) == d && bv.rank() == 1 && bv.dim(0) == d,
                  "attention_pool: parameter shapes do not match H " + shape_string(Hv.shape()));

  // Saved activations a_t = tanh(W_a h_t + b_a).
  Tensor act({T, d});
  std::vector<double> scores(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double* h = Hv.data() + t * d;
    double* a = act.data() + t * d;
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double* wi = Wv.data() + i * d;
      double u = bv[i];
      for (std::size_t j = 0; j < d; ++j) u += wi[j] * h[j];
      a[i] = std::tanh(u);
      s += vv[i] * a[i];
    }
    scores[t] = s;
  }
  const double smax = *std::max_element(scores.begin(), scores.end());
  Tensor w({T});
  double z = 0.0;
  for (std::size_t t = 0; t < T; ++t) z += (w[t] = std::exp(scores[t] - smax));
  for (std::size_t t = 0; t < T; ++t) w[t] /= z;

  Tensor ctx({d});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j) ctx[j] += w[t] * Hv[t * d + j];

  Tape& tape = *H.tape;
  Var out = tape.record(std::move(ctx), {H, v, Wa, ba},
                        [H, v, Wa, ba, T, d, act = std::move(act), w](Tape& t, const Tensor& g) {
    const Tensor& Hv = t.value(H.id);
    const Tensor& vv = t.value(v.id);
    const Tensor& Wv = t.value(Wa.id);
    const bool need_h = t.requires_grad(H.id);
    std::vector<double> dw(T);
    double mean_dw = 0.0;
    for (std::size_t s = 0; s < T; ++s) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += g[j] * Hv[s * d + j];
      dw[s] = acc;
      mean_dw += w[s] * acc;
    }
    double* gH = need_h ? t.grad(H.id).data() : nullptr;
    double* gv = t.requires_grad(v.id) ? t.grad(v.id).data() : nullptr;
    double* gW = t.requires_grad(Wa.id) ? t.grad(Wa.id).data() : nullptr;
    double* gb = t.requires_grad(ba.id) ? t.grad(ba.id).data() : nullptr;
    std::vector<double> du(d);
    for (std::size_t s = 0; s < T; ++s) {
      const double ds = w[s] * (dw[s] - mean_dw);
      const double* a = act.data() + s * d;
      const double* h = Hv.data() + s * d;
      if (gH)
        for (std::size_t j = 0; j < d; ++j) gH[s * d + j] += w[s] * g[j];
      if (gv)
        for (std::size_t i = 0; i < d; ++i) gv[i] += ds * a[i];
      for (std::size_t i = 0; i < d; ++i) du[i] = ds * vv[i] * (1.0 - a[i] * a[i]);
      if (gb)
        for (std::size_t i = 0; i < d; ++i) gb[i] += du[i];
      if (gW)
        for (std::size_t i = 0; i < d; ++i) {
          if (du[i] == 0.0) continue;
          double* gwi = gW + i * d;
          for (std::size_t j = 0; j < d; ++j) gwi[j] += du[i] * h[j];
        }
      if (gH)
        for (std::size_t i = 0; i < d; ++i) {
          if (du[i] == 0.0) continue;
          const double* wi = Wv.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) gH[s * d + j] += du[i] * wi[j];
        }
    }
  });
  return AttentionOutput{out, std::move(w)};
}

/// ELU with alpha = 1.
inline Var elu(const Var& x) {
  Tensor y = x.value();
  for (double& v : y.storage()) v = v >= 0.0 ? v : std::expm1(v);
  Tape& tape = *x.tape;
  Var out = tape.record(std::move(y), {x}, [x](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x.id);
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (xv[i] >= 0.0 ? 1.0 : std::exp(xv[i]));
  });
  return out;
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& x) {
  Tensor y = x.value();
  for (double& v : y.storage()) v = sigmoid(v);
  Tape& tape = *x.tape;
  const std::size_t self = tape.size();
  return tape.record(std::move(y), {x}, [x, self](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
  });
}

inline Var tanh(const Var& x) {
  Tensor y = x.value();
  for (double& v : y.storage()) v = std::tanh(v);
  Tape& tape = *x.tape;
  const std::size_t self = tape.size();
  return tape.record(std::move(y), {x}, [x, self](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - yv[i] * yv[i]);
  });
}

/// Concatenates same-rank tensors along `axis`; all other extents must agree.
inline Var concat(const std::vector<Var>& xs, std::size_t axis = 0) {
  detail::require(!xs.empty(), "concat: no inputs");
  const Shape& first = xs.front().shape();
  detail::require(axis < first.size(), "concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& v : xs) {
    const Shape& s = v.shape();
    detail::require(s.size() == first.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      detail::require(i == axis || s[i] == first[i],
                      "concat: shape " + shape_string(s) + " incompatible with " + shape_string(first));
    widths.push_back(s[axis] * inner);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  Tensor y(out_shape);
  const std::size_t row = total * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const double* src = xs[k].value().data() + o * widths[k];
      std::copy(src, src + widths[k], y.data() + o * row + offset);
      offset += widths[k];
    }
  }
  Tape& tape = *xs.front().tape;
  return tape.record(std::move(y), xs, [xs, widths, outer, row](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (t.requires_grad(xs[k].id)) {
        Tensor& gx = t.grad(xs[k].id);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < widths[k]; ++i) gx[o * widths[k] + i] += g[o * row + offset + i];
      }
      offset += widths[k];
    }
  });
}

/// Row `id` of a [V, d] table.
inline Var embedding_lookup(const Var& table, std::size_t id) {
  const Tensor& tv = table.value();
  detail::require(tv.rank() == 2, "embedding_lookup: table must be rank 2");
  if (id >= tv.dim(0)) {
    throw NumericError("embedding_lookup: id " + std::to_string(id) + " out of range for table with " +
                       std::to_string(tv.dim(0)) + " rows");
  }
  const std::size_t d = tv.dim(1);
  Tensor y({d}, std::vector<double>(tv.data() + id * d, tv.data() + (id + 1) * d));
  Tape& tape = *table.tape;
  return tape.record(std::move(y), {table}, [table, id, d](Tape& t, const Tensor& g) {
    Tensor& gt = t.grad(table.id);
    for (std::size_t j = 0; j < d; ++j) gt[id * d + j] += g[j];
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  Tape& tape = *a.tape;
  return tape.record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  Tape& tape = *a.tape;
  return tape.record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a.id);
    const Tensor& bv = t.value(b.id);
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(const Var& x, double c) {
  Tensor y = x.value();
  for (double& v : y.storage()) v *= c;
  Tape& tape = *x.tape;
  return tape.record(std::move(y), {x}, [x, c](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  Tape& tape = *x.tape;
  return tape.record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

/// Sum of scalar vars in the given order.
inline Var sum(const std::vector<Var>& xs) {
  detail::require(!xs.empty(), "sum: no inputs");
  double s = 0.0;
  for (const Var& x : xs) {
    detail::require(x.value().size() == 1, "sum: inputs must be scalars");
    s += x.value()[0];
  }
  Tape& tape = *xs.front().tape;
  return tape.record(Tensor::scalar(s), xs, [xs](Tape& t, const Tensor& g) {
    for (const Var& x : xs)
      if (t.requires_grad(x.id)) t.grad(x.id)[0] += g[0];
  });
}

/// Element `i` of x as a scalar.
inline Var element(const Var& x, std::size_t i) {
  detail::require(i < x.value().size(), "element: index out of range");
  Tape& tape = *x.tape;
  return tape.record(Tensor::scalar(x.value()[i]), {x}, [x, i](Tape& t, const Tensor& g) {
    t.grad(x.id)[i] += g[0];
  });
}

inline constexpr double kProbabilityClamp = 1e-7;

/// Class-weighted binary cross-entropy of sigmoid(logit), with the
/// probability clamped to [1e-7, 1 - 1e-7].
inline double weighted_bce(double p, int y, double w_pos, double w_neg) {
  p = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return -(w_pos * y * std::log(p) + w_neg * (1 - y) * std::log(1.0 - p));
}

/// weighted_bce applied to sigmoid(logit); zero gradient where the clamp is active.
inline Var weighted_bce_logit(const Var& logit, int y, double w_pos, double w_neg) {
  detail::require(logit.value().size() == 1, "weighted_bce_logit: logit must be scalar");
  const double p = sigmoid(logit.value()[0]);
  Tape& tape = *logit.tape;
  return tape.record(Tensor::scalar(weighted_bce(p, y, w_pos, w_neg)), {logit},
                     [logit, p, y, w_pos, w_neg](Tape& t, const Tensor& g) {
    if (p < kProbabilityClamp || p > 1.0 - kProbabilityClamp) return;
    const double d = y ? -w_pos * (1.0 - p) : w_neg * p;
    t.grad(logit.id)[0] += g[0] * d;
  });
}

}  // namespace riskseq::ad

#endif  // RISKSEQ_AUTODIFF_HPP
