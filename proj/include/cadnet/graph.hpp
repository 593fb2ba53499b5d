#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "cadnet/error.hpp"
#include "cadnet/kernels.hpp"
#include "cadnet/params.hpp"
#include "cadnet/tensor.hpp"

namespace cadnet {

/// Reverse-mode tape over whole-tensor operations. Each op evaluates eagerly
/// and records a closure that routes gradients to its arguments; backward()
/// replays the tape once in reverse. This is deliberately not a general
/// autodiff engine: only the operations the model needs exist.
template <typename T>
class Graph {
 public:
  struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
  };

  explicit Graph(ParameterStore<T>* store = nullptr) : store_(store) {}

  /// Leaf carrying data that never receives a gradient.
  Var input(Tensor<T> value) {
    value.require_finite("graph input");
    return push(std::move(value), nullptr, false);
  }

  /// Leaf bound to a parameter slot; gradients flow into the store.
  Var parameter(int slot) {
    if (!store_) throw usage_error("graph has no parameter store");
    Node node;
    node.view = &store_->at(slot).value;
    node.needs_grad = true;
    node.param_slot = slot;
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T>& value(Var v) const { return node(v).val(); }

  T scalar(Var v) const {
    const Tensor<T>& t = value(v);
    if (t.numel() != 1) throw usage_error("scalar() on tensor with more than one element");
    return t[0];
  }

  Var fc(Var x, Var weights, Var bias) {
    Tensor<T> y = fc_forward_batch(val(x), val(weights), val(bias));
    const int xi = x.idx, wi = weights.idx, bi = bias.idx;
    return push(std::move(y), [this, xi, wi, bi](Node& self) {
      auto g = fc_backward_batch(nodes_[xi].val(), nodes_[wi].val(), self.grad);
      accumulate(xi, g.dx);
      accumulate(wi, g.dweights);
      accumulate(bi, g.dbias);
    }, any_grad({x, weights, bias}));
  }

  Var conv2d(Var x, Var kernel, Var bias, int stride, Padding padding) {
    Tensor<T> y = conv2d_forward_batch(val(x), val(kernel), val(bias), stride, padding);
    const int xi = x.idx, ki = kernel.idx, bi = bias.idx;
    return push(std::move(y), [this, xi, ki, bi, stride, padding](Node& self) {
      auto g = conv2d_backward_batch(nodes_[xi].val(), nodes_[ki].val(), self.grad, stride, padding);
      accumulate(xi, g.dx);
      accumulate(ki, g.dkernel);
      accumulate(bi, g.dbias);
    }, any_grad({x, kernel, bias}));
  }

  Var activation(Var x, Activation kind) {
    Tensor<T> y = activation_forward(val(x), kind);
    const int xi = x.idx;
    return push(std::move(y), [this, xi, kind](Node& self) {
      accumulate(xi, activation_backward(self.val(), self.grad, kind));
    }, any_grad({x}));
  }

  Var relu(Var x) { return activation(x, Activation::relu); }
  Var sigmoid(Var x) { return activation(x, Activation::sigmoid); }

  Var reshape(Var x, Shape shape) {
    Tensor<T> y = val(x).reshaped(std::move(shape));
    const int xi = x.idx;
    return push(std::move(y), [this, xi](Node& self) {
      Tensor<T> dx = self.grad.reshaped(nodes_[xi].val().shape());
      accumulate(xi, dx);
    }, any_grad({x}));
  }

  /// Concatenates along the trailing axis. Leading extents must match.
  Var concat_last(Var a, Var b) {
    const Tensor<T>& ta = val(a);
    const Tensor<T>& tb = val(b);
    if (ta.rank() != tb.rank()) throw config_error("concat_last: rank mismatch");
    Shape shape = ta.shape();
    const int axis = ta.rank() - 1;
    for (int i = 0; i < axis; ++i)
      if (ta.extent(i) != tb.extent(i))
        throw config_error("concat_last: leading extents differ, " + shape_to_string(ta.shape()) +
                           " vs " + shape_to_string(tb.shape()));
    const int wa = ta.extent(axis), wb = tb.extent(axis);
    shape[static_cast<std::size_t>(axis)] = wa + wb;
    Tensor<T> y(shape);
    const std::int64_t rows = ta.numel() / wa;
    for (std::int64_t r = 0; r < rows; ++r) {
      std::copy(ta.data() + r * wa, ta.data() + (r + 1) * wa, y.data() + r * (wa + wb));
      std::copy(tb.data() + r * wb, tb.data() + (r + 1) * wb, y.data() + r * (wa + wb) + wa);
    }
    const int ai = a.idx, bi = b.idx;
    return push(std::move(y), [this, ai, bi, wa, wb](Node& self) {
      const std::int64_t rows = self.grad.numel() / (wa + wb);
      Tensor<T> da(nodes_[ai].val().shape());
      Tensor<T> db(nodes_[bi].val().shape());
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* src = self.grad.data() + r * (wa + wb);
        std::copy(src, src + wa, da.data() + r * wa);
        std::copy(src + wa, src + wa + wb, db.data() + r * wb);
      }
      accumulate(ai, da);
      accumulate(bi, db);
    }, any_grad({a, b}));
  }

  /// z = mu + exp(0.5 * logvar) * eps with eps held fixed.
  Var reparam_sample(Var mu, Var logvar, Tensor<T> eps) {
    const Tensor<T>& m = val(mu);
    const Tensor<T>& lv = val(logvar);
    if (!m.same_shape(lv) || !m.same_shape(eps))
      throw config_error("reparam_sample: mu, logvar and eps must share a shape");
    Tensor<T> sigma(m.shape());
    Tensor<T> z(m.shape());
    for (std::int64_t i = 0; i < m.numel(); ++i) {
      sigma[i] = std::exp(T{0.5} * lv[i]);
      z[i] = m[i] + sigma[i] * eps[i];
    }
    z.require_finite("reparam_sample");
    const int mi = mu.idx, li = logvar.idx;
    auto shared_eps = std::make_shared<Tensor<T>>(std::move(eps));
    auto shared_sigma = std::make_shared<Tensor<T>>(std::move(sigma));
    return push(std::move(z), [this, mi, li, shared_eps, shared_sigma](Node& self) {
      accumulate(mi, self.grad);
      Tensor<T> dlv(self.grad.shape());
      for (std::int64_t i = 0; i < dlv.numel(); ++i)
        dlv[i] = self.grad[i] * (*shared_eps)[i] * (*shared_sigma)[i] * T{0.5};
      accumulate(li, dlv);
    }, any_grad({mu, logvar}));
  }

  /// Mean over the batch of per-sample summed binary cross-entropy between a
  /// prediction in (0,1) and a target in [0,1]. Predictions are clamped to
  /// [clamp_eps, 1 - clamp_eps]; gradients vanish outside the clamp range.
  Var bce_sum_mean(Var prediction, Tensor<T> target, T clamp_eps) {
    const Tensor<T>& p = val(prediction);
    if (!p.same_shape(target)) throw config_error("bce_sum_mean: prediction/target shape mismatch");
    if (p.rank() < 1 || p.extent(0) < 1) throw usage_error("bce_sum_mean: empty batch");
    const int n = p.extent(0);
    const T lo = clamp_eps, hi = T{1} - clamp_eps;
    double total = 0;
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const T pc = std::min(hi, std::max(lo, p[i]));
      const T t = target[i];
      total -= static_cast<double>(t) * std::log(static_cast<double>(pc)) +
               (1.0 - static_cast<double>(t)) * std::log(1.0 - static_cast<double>(pc));
    }
    Tensor<T> out({1});
    out[0] = static_cast<T>(total / n);
    out.require_finite("bce_sum_mean");
    const int pi = prediction.idx;
    auto shared_target = std::make_shared<Tensor<T>>(std::move(target));
    return push(std::move(out), [this, pi, shared_target, lo, hi, n](Node& self) {
      const Tensor<T>& pred = nodes_[pi].val();
      const T seed = self.grad[0] / static_cast<T>(n);
      Tensor<T> dp(pred.shape());
      for (std::int64_t i = 0; i < pred.numel(); ++i) {
        const T raw = pred[i];
        if (raw < lo || raw > hi) {
          dp[i] = T{0};
          continue;
        }
        const T t = (*shared_target)[i];
        dp[i] = seed * (raw - t) / (raw * (T{1} - raw));
      }
      accumulate(pi, dp);
    }, any_grad({prediction}));
  }

  /// Mean over the batch of the closed-form KL divergence between
  /// N(mu, diag(exp(logvar))) and the standard normal.
  Var kl_standard_normal_mean(Var mu, Var logvar) {
    const Tensor<T>& m = val(mu);
    const Tensor<T>& lv = val(logvar);
    if (!m.same_shape(lv)) throw config_error("kl: mu/logvar shape mismatch");
    if (m.rank() != 2) throw config_error("kl: expected (batch, latent) inputs");
    const int n = m.extent(0);
    double total = 0;
    for (std::int64_t i = 0; i < m.numel(); ++i) {
      const double mu_i = m[i], lv_i = lv[i];
      total += 0.5 * (mu_i * mu_i + std::exp(lv_i) - 1.0 - lv_i);
    }
    Tensor<T> out({1});
    out[0] = static_cast<T>(total / n);
    out.require_finite("kl_standard_normal_mean");
    const int mi = mu.idx, li = logvar.idx;
    return push(std::move(out), [this, mi, li, n](Node& self) {
      const Tensor<T>& m = nodes_[mi].val();
      const Tensor<T>& lv = nodes_[li].val();
      const T seed = self.grad[0] / static_cast<T>(n);
      Tensor<T> dm(m.shape());
      Tensor<T> dlv(lv.shape());
      for (std::int64_t i = 0; i < m.numel(); ++i) {
        dm[i] = seed * m[i];
        dlv[i] = seed * T{0.5} * (std::exp(lv[i]) - T{1});
      }
      accumulate(mi, dm);
      accumulate(li, dlv);
    }, any_grad({mu, logvar}));
  }

  Var add(Var a, Var b) {
    const Tensor<T>& ta = val(a);
    const Tensor<T>& tb = val(b);
    if (!ta.same_shape(tb)) throw config_error("add: shape mismatch");
    Tensor<T> y(ta.shape());
    for (std::int64_t i = 0; i < ta.numel(); ++i) y[i] = ta[i] + tb[i];
    const int ai = a.idx, bi = b.idx;
    return push(std::move(y), [this, ai, bi](Node& self) {
      accumulate(ai, self.grad);
      accumulate(bi, self.grad);
    }, any_grad({a, b}));
  }

  Var scale(Var x, T factor) {
    const Tensor<T>& tx = val(x);
    Tensor<T> y(tx.shape());
    for (std::int64_t i = 0; i < tx.numel(); ++i) y[i] = tx[i] * factor;
    const int xi = x.idx;
    return push(std::move(y), [this, xi, factor](Node& self) {
      Tensor<T> dx(self.grad.shape());
      for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] = self.grad[i] * factor;
      accumulate(xi, dx);
    }, any_grad({x}));
  }

  /// Reverse sweep from a scalar loss. Parameter gradients are accumulated
  /// into the bound store; every other leaf keeps a zero gradient.
  void backward(Var loss) {
    if (nodes_.empty()) throw usage_error("backward called on an empty graph");
    if (!loss.valid() || loss.idx >= static_cast<int>(nodes_.size()))
      throw usage_error("backward called with a variable from another graph");
    if (node(loss).val().numel() != 1) throw usage_error("backward requires a scalar loss");
    for (auto& n : nodes_)
      if (n.needs_grad && n.grad.empty()) n.grad = Tensor<T>(n.val().shape());
    if (!node(loss).needs_grad) return;  // loss independent of every parameter
    nodes_[static_cast<std::size_t>(loss.idx)].grad.fill(T{0});
    nodes_[static_cast<std::size_t>(loss.idx)].grad[0] = T{1};
    for (int i = loss.idx; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.needs_grad && n.backprop) n.backprop(n);
    }
    if (store_) {
      for (const auto& n : nodes_) {
        if (n.param_slot < 0 || n.grad.empty()) continue;
        auto& p = store_->at(n.param_slot);
        for (std::int64_t i = 0; i < p.grad.numel(); ++i) p.grad[i] += n.grad[i];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* view = nullptr;
    Tensor<T> grad;
    std::function<void(Node&)> backprop;
    bool needs_grad = false;
    int param_slot = -1;

    const Tensor<T>& val() const { return view ? *view : value; }
  };

  const Tensor<T>& val(Var v) const { return node(v).val(); }

  const Node& node(Var v) const {
    if (!v.valid() || v.idx >= static_cast<int>(nodes_.size()))
      throw usage_error("variable does not belong to this graph");
    return nodes_[static_cast<std::size_t>(v.idx)];
  }

  bool any_grad(std::initializer_list<Var> vars) const {
    for (Var v : vars)
      if (node(v).needs_grad) return true;
    return false;
  }

  Var push(Tensor<T> value, std::function<void(Node&)> backprop, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void accumulate(int idx, const Tensor<T>& grad) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!n.needs_grad) return;
    if (n.grad.empty()) n.grad = Tensor<T>(n.val().shape());
    for (std::int64_t i = 0; i < grad.numel(); ++i) n.grad[i] += grad[i];
  }

  std::vector<Node> nodes_;
  ParameterStore<T>* store_ = nullptr;
};

}  // namespace cadnet
