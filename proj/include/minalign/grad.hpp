// Reverse-mode gradients for the nets used in this toolkit, the optimizer,
// and finite-difference validation. Only the fixed loss family below is
// supported; there is no general autodiff graph.
#pragma once

#include <functional>
#include <memory>

#include "minalign/scm.hpp"

namespace minalign {

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

inline double leaky_slope(double preact, double a) { return preact < 0.0 ? a : 1.0; }

// ---------------------------------------------------------------------------
// flat parameter packing for ScmNet

struct NetLayout {
  // [weights offset, bias offset or npos, layer size] per layer
  struct LayerSpan {
    std::size_t offset;
    std::size_t weights;
    bool has_bias;
    std::size_t size() const { return weights + (has_bias ? weights_dim() : 0); }
    std::size_t weights_dim() const {
      // square layers only
      std::size_t d = 1;
      while (d * d < weights) ++d;
      return d;
    }
  };
  std::vector<LayerSpan> layers;
  std::size_t total = 0;
};

inline NetLayout layout_of(const ScmNet& net) {
  NetLayout l;
  std::size_t off = 0;
  for (const auto& layer : net.layers()) {
    NetLayout::LayerSpan s{off, layer.W.rows() * layer.W.cols(), layer.b.has_value()};
    off += s.size();
    l.layers.push_back(s);
  }
  l.total = off;
  return l;
}

inline Vec pack(const ScmNet& net) {
  Vec out;
  for (const auto& layer : net.layers()) {
    out.insert(out.end(), layer.W.data().begin(), layer.W.data().end());
    if (layer.b) out.insert(out.end(), layer.b->begin(), layer.b->end());
  }
  return out;
}

inline void unpack(ScmNet& net, std::span<const double> params) {
  std::size_t off = 0;
  for (auto& layer : net.layers()) {
    for (double& w : layer.W.data()) w = params[off++];
    if (layer.b)
      for (double& b : *layer.b) b = params[off++];
  }
  if (off != params.size()) throw DimensionMismatch("unpack: parameter count mismatch");
}

// ---------------------------------------------------------------------------
// forward caches and backward passes

struct ScmForward {
  std::vector<Vec> inputs;    // input to each affine layer
  std::vector<Vec> preacts;   // affine outputs feeding an activation
  Vec output;
};

inline ScmForward scm_forward(const ScmNet& net, const Vec& x) {
  ScmForward f;
  const std::size_t n = net.depth();
  f.inputs.reserve(n + 1);
  f.preacts.reserve(n);
  Vec cur = x;
  for (std::size_t i = 0; i <= n; ++i) {
    f.inputs.push_back(cur);
    Vec y = net.layers()[i].apply(cur);
    if (i < n) {
      f.preacts.push_back(y);
      for (double& v : y) v = activation_scalar(v, net.leak());
    }
    cur = std::move(y);
  }
  f.output = cur;
  return f;
}

// Accumulates dLoss/dparams into grads (layout of pack()) and returns
// dLoss/dinput.
inline Vec scm_backward(const ScmNet& net, const ScmForward& f, Vec dout, Vec& grads) {
  const std::size_t n = net.depth();
  const NetLayout layout = layout_of(net);
  if (grads.size() != layout.total) grads.assign(layout.total, 0.0);
  Vec g = std::move(dout);
  for (std::size_t i = n + 1; i-- > 0;) {
    const auto& layer = net.layers()[i];
    const auto& span = layout.layers[i];
    const Vec& input = f.inputs[i];
    const std::size_t m = layer.W.rows();
    double* gw = grads.data() + span.offset;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < m; ++c) gw[r * m + c] += g[r] * input[c];
    if (layer.b) {
      double* gb = grads.data() + span.offset + span.weights;
      for (std::size_t r = 0; r < m; ++r) gb[r] += g[r];
    }
    Vec gin = mul_transposed(layer.W, g);
    if (i > 0) {
      const Vec& pre = f.preacts[i - 1];
      for (std::size_t r = 0; r < m; ++r) gin[r] *= leaky_slope(pre[r], net.leak());
    }
    g = std::move(gin);
  }
  return g;
}

// ---------------------------------------------------------------------------
// plain MLP (non-square, biased), used for discriminators

struct Mlp {
  double leak = 0.2;
  bool sigmoid_head = true;
  std::vector<Matrix> W;
  std::vector<Vec> b;

  static Mlp make(std::size_t in_dim, std::size_t hidden_layers, std::size_t width,
                  double leak, RngStream& rng, bool sigmoid_head = true) {
    Mlp m;
    m.leak = leak;
    m.sigmoid_head = sigmoid_head;
    std::size_t prev = in_dim;
    for (std::size_t i = 0; i < hidden_layers; ++i) {
      Matrix w(width, prev);
      const double scale = std::sqrt(2.0 / static_cast<double>(prev));
      for (double& v : w.data()) v = scale * rng.normal();
      m.W.push_back(std::move(w));
      m.b.push_back(Vec(width, 0.0));
      prev = width;
    }
    Matrix w(1, prev);
    const double scale = std::sqrt(1.0 / static_cast<double>(prev));
    for (double& v : w.data()) v = scale * rng.normal();
    m.W.push_back(std::move(w));
    m.b.push_back(Vec(1, 0.0));
    return m;
  }

  std::size_t in_dim() const { return W.front().cols(); }
  std::size_t hidden_layers() const { return W.size() - 1; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < W.size(); ++i) n += W[i].rows() * W[i].cols() + b[i].size();
    return n;
  }
};

inline Vec pack(const Mlp& m) {
  Vec out;
  for (std::size_t i = 0; i < m.W.size(); ++i) {
    out.insert(out.end(), m.W[i].data().begin(), m.W[i].data().end());
    out.insert(out.end(), m.b[i].begin(), m.b[i].end());
  }
  return out;
}

inline void unpack(Mlp& m, std::span<const double> params) {
  std::size_t off = 0;
  for (std::size_t i = 0; i < m.W.size(); ++i) {
    for (double& w : m.W[i].data()) w = params[off++];
    for (double& b : m.b[i]) b = params[off++];
  }
  if (off != params.size()) throw DimensionMismatch("unpack(Mlp): parameter count mismatch");
}

struct MlpForward {
  std::vector<Vec> inputs;
  std::vector<Vec> preacts;  // hidden affine outputs
  double last_linear = 0.0;  // final affine output (before sigmoid)
  double output = 0.0;
};

inline MlpForward mlp_forward(const Mlp& m, const Vec& x) {
  MlpForward f;
  Vec cur = x;
  const std::size_t L = m.W.size();
  for (std::size_t i = 0; i < L; ++i) {
    f.inputs.push_back(cur);
    Vec y = mul(m.W[i], cur);
    for (std::size_t r = 0; r < y.size(); ++r) y[r] += m.b[i][r];
    if (i + 1 < L) {
      f.preacts.push_back(y);
      for (double& v : y) v = activation_scalar(v, m.leak);
      cur = std::move(y);
    } else {
      f.last_linear = y[0];
      cur = std::move(y);
    }
  }
  f.output = m.sigmoid_head ? 1.0 / (1.0 + std::exp(-f.last_linear)) : f.last_linear;
  return f;
}

// Accumulates dLoss/dparams into grads (layout of pack(Mlp)) and returns
// dLoss/dinput.
inline Vec mlp_backward(const Mlp& m, const MlpForward& f, double dout, Vec& grads) {
  const std::size_t L = m.W.size();
  if (grads.size() != m.param_count()) grads.assign(m.param_count(), 0.0);
  double g0 = dout;
  if (m.sigmoid_head) g0 *= f.output * (1.0 - f.output);
  Vec g{g0};
  // offsets per layer
  std::vector<std::size_t> offsets(L);
  std::size_t off = 0;
  for (std::size_t i = 0; i < L; ++i) {
    offsets[i] = off;
    off += m.W[i].rows() * m.W[i].cols() + m.b[i].size();
  }
  for (std::size_t i = L; i-- > 0;) {
    const Vec& input = f.inputs[i];
    double* gw = grads.data() + offsets[i];
    double* gb = gw + m.W[i].rows() * m.W[i].cols();
    for (std::size_t r = 0; r < m.W[i].rows(); ++r) {
      gb[r] += g[r];
      for (std::size_t c = 0; c < m.W[i].cols(); ++c)
        gw[r * m.W[i].cols() + c] += g[r] * input[c];
    }
    Vec gin = mul_transposed(m.W[i], g);
    if (i > 0) {
      const Vec& pre = f.preacts[i - 1];
      for (std::size_t r = 0; r < gin.size(); ++r) gin[r] *= leaky_slope(pre[r], m.leak);
    }
    g = std::move(gin);
  }
  return g;
}

// ---------------------------------------------------------------------------
// the loss family

enum class LossKind {
  risk_to_target,   // mean ||net(x) - target(x)||^2
  gan_generator,    // mean (critic(net(x)) - 1)^2, critic frozen
  gan_critic,       // mean (critic(real) - 1)^2 + mean critic(net(fake))^2, net frozen
  anti_identity,    // -mean ||x - net(x)||_1
  alg1_composite    // gan_generator + lambda * mean ||net(x) - g(x)||^2
};

struct LossSpec {
  LossKind kind = LossKind::risk_to_target;
  double lambda = 0.0;
  std::shared_ptr<const ScmNet> target;  // risk_to_target / alg1_composite
  std::shared_ptr<const Mlp> critic;     // generator-side losses
  std::shared_ptr<const ScmNet> mapper;  // gan_critic: frozen generator
  std::vector<Vec> real_batch;           // gan_critic: samples of the real side
};

struct GradResult {
  double loss = 0.0;
  Vec net_grads;     // layout of pack(net); empty when the net is frozen
  Vec critic_grads;  // layout of pack(critic); empty when the critic is frozen
};

namespace detail {

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NonFiniteLoss(std::string("non-finite value in ") + what);
}

}  // namespace detail

// Exact reverse-mode batch gradients of the requested loss. The activation
// subgradient at 0 uses the nonnegative branch (slope 1).
inline GradResult gradients(const ScmNet& net, const Mlp* critic, const LossSpec& spec,
                            std::span<const Vec> batch) {
  if (batch.empty()) throw Error("gradients: batch must be nonempty");
  GradResult res;
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  switch (spec.kind) {
    case LossKind::risk_to_target: {
      if (!spec.target) throw Error("risk_to_target needs a target net");
      res.net_grads.assign(layout_of(net).total, 0.0);
      for (const Vec& x : batch) {
        const ScmForward f = scm_forward(net, x);
        const Vec t = spec.target->eval(x);
        Vec dout(f.output.size());
        for (std::size_t i = 0; i < dout.size(); ++i) {
          const double d = f.output[i] - t[i];
          res.loss += d * d * inv_n;
          dout[i] = 2.0 * d * inv_n;
        }
        scm_backward(net, f, std::move(dout), res.net_grads);
      }
      break;
    }
    case LossKind::anti_identity: {
      res.net_grads.assign(layout_of(net).total, 0.0);
      for (const Vec& x : batch) {
        const ScmForward f = scm_forward(net, x);
        Vec dout(f.output.size());
        for (std::size_t i = 0; i < dout.size(); ++i) {
          const double d = x[i] - f.output[i];
          res.loss -= std::abs(d) * inv_n;
          dout[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * inv_n;
        }
        scm_backward(net, f, std::move(dout), res.net_grads);
      }
      break;
    }
    case LossKind::gan_generator:
    case LossKind::alg1_composite: {
      const Mlp* c = critic ? critic : spec.critic.get();
      if (!c) throw Error("generator loss needs a critic");
      res.net_grads.assign(layout_of(net).total, 0.0);
      Vec scratch;  // critic grads are discarded (critic frozen)
      for (const Vec& x : batch) {
        const ScmForward f = scm_forward(net, x);
        const MlpForward cf = mlp_forward(*c, f.output);
        const double d = cf.output - 1.0;
        res.loss += d * d * inv_n;
        scratch.assign(c->param_count(), 0.0);
        Vec dout = mlp_backward(*c, cf, 2.0 * d * inv_n, scratch);
        if (spec.kind == LossKind::alg1_composite && spec.lambda != 0.0) {
          if (!spec.target) throw Error("alg1_composite needs a target net");
          const Vec t = spec.target->eval(x);
          for (std::size_t i = 0; i < dout.size(); ++i) {
            const double r = f.output[i] - t[i];
            res.loss += spec.lambda * r * r * inv_n;
            dout[i] += spec.lambda * 2.0 * r * inv_n;
          }
        }
        scm_backward(net, f, std::move(dout), res.net_grads);
      }
      break;
    }
    case LossKind::gan_critic: {
      const Mlp* c = critic;
      if (!c) throw Error("gan_critic differentiates the critic; pass it");
      const ScmNet* mapper = spec.mapper ? spec.mapper.get() : &net;
      if (spec.real_batch.empty()) throw Error("gan_critic needs real samples");
      res.critic_grads.assign(c->param_count(), 0.0);
      const double inv_r = 1.0 / static_cast<double>(spec.real_batch.size());
      for (const Vec& x : spec.real_batch) {
        const MlpForward cf = mlp_forward(*c, x);
        const double d = cf.output - 1.0;
        res.loss += d * d * inv_r;
        mlp_backward(*c, cf, 2.0 * d * inv_r, res.critic_grads);
      }
      for (const Vec& x : batch) {
        const MlpForward cf = mlp_forward(*c, mapper->eval(x));
        res.loss += cf.output * cf.output * inv_n;
        mlp_backward(*c, cf, 2.0 * cf.output * inv_n, res.critic_grads);
      }
      break;
    }
  }
  detail::require_finite(res.loss, "loss");
  for (double g : res.net_grads) detail::require_finite(g, "net gradient");
  for (double g : res.critic_grads) detail::require_finite(g, "critic gradient");
  return res;
}

// ---------------------------------------------------------------------------
// finite differences

// Central-difference comparison over every net parameter (or critic
// parameter for critic-side losses). Returns the max relative error
// |g - ghat| / (|g| + |ghat| + 1e-8).
inline double grad_check(const ScmNet& net, const Mlp* critic, const LossSpec& spec,
                         std::span<const Vec> batch, double h = 1e-5) {
  if (h < 1e-7 || h > 1e-3) throw Error("grad_check: step outside [1e-7, 1e-3]");
  const GradResult base = gradients(net, critic, spec, batch);
  const bool critic_side = spec.kind == LossKind::gan_critic;

  double worst = 0.0;
  if (critic_side) {
    Mlp probe = *critic;
    Vec params = pack(probe);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double saved = params[i];
      params[i] = saved + h;
      unpack(probe, params);
      const double up = gradients(net, &probe, spec, batch).loss;
      params[i] = saved - h;
      unpack(probe, params);
      const double dn = gradients(net, &probe, spec, batch).loss;
      params[i] = saved;
      unpack(probe, params);
      const double fd = (up - dn) / (2.0 * h);
      const double g = base.critic_grads[i];
      worst = std::max(worst, std::abs(g - fd) / (std::abs(g) + std::abs(fd) + 1e-8));
    }
  } else {
    ScmNet probe = net;
    Vec params = pack(probe);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double saved = params[i];
      params[i] = saved + h;
      unpack(probe, params);
      const double up = gradients(probe, critic, spec, batch).loss;
      params[i] = saved - h;
      unpack(probe, params);
      const double dn = gradients(probe, critic, spec, batch).loss;
      params[i] = saved;
      unpack(probe, params);
      const double fd = (up - dn) / (2.0 * h);
      const double g = base.net_grads[i];
      worst = std::max(worst, std::abs(g - fd) / (std::abs(g) + std::abs(fd) + 1e-8));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// optimizer: adaptive moments with bias correction

struct OptState {
  Vec m, v;
  long long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit OptState(std::size_t n = 0, double lr_ = 1e-3) : m(n, 0.0), v(n, 0.0), lr(lr_) {}
};

// lr_scale, when given, multiplies the step size per parameter index.
inline void optimize_step(Vec& params, const Vec& grads, OptState& st,
                          const Vec* lr_scale = nullptr) {
  if (params.size() != grads.size()) throw DimensionMismatch("optimize_step: size mismatch");
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i] * grads[i];
    const double mhat = st.m[i] / c1;
    const double vhat = st.v[i] / c2;
    const double scale = lr_scale ? (*lr_scale)[i] : 1.0;
    params[i] -= st.lr * scale * mhat / (std::sqrt(vhat) + st.eps);
  }
}

// ---------------------------------------------------------------------------
// guarded mapper training step
//
// Applies an optimizer step to an ScmNet and rejects any layer whose weight
// matrix would drift within 1e-10 (relative pivot) of singular; the rejected
// layer keeps its previous parameters and its step size is halved.

class GuardedNetTrainer {
 public:
  GuardedNetTrainer(ScmNet net, double lr)
      : net_(std::move(net)),
        layout_(layout_of(net_)),
        params_(pack(net_)),
        opt_(params_.size(), lr),
        lr_scale_(params_.size(), 1.0),
        layer_scale_(net_.layers().size(), 1.0) {}

  const ScmNet& net() const { return net_; }
  ScmNet& net() { return net_; }
  int guard_trips() const { return guard_trips_; }
  const NetLayout& layout() const { return layout_; }
  OptState& opt() { return opt_; }

  void step(const Vec& grads) {
    const Vec before = params_;
    const Vec m_before = opt_.m, v_before = opt_.v;
    optimize_step(params_, grads, opt_, &lr_scale_);
    unpack(net_, params_);
    for (std::size_t li = 0; li < net_.layers().size(); ++li) {
      if (is_invertible(net_.layers()[li].W, 1e-10)) continue;
      ++guard_trips_;
      const auto& span = layout_.layers[li];
      for (std::size_t i = span.offset; i < span.offset + span.size(); ++i) {
        params_[i] = before[i];
        opt_.m[i] = m_before[i];
        opt_.v[i] = v_before[i];
      }
      layer_scale_[li] *= 0.5;
      for (std::size_t i = span.offset; i < span.offset + span.size(); ++i)
        lr_scale_[i] = layer_scale_[li];
      unpack(net_, params_);
    }
  }

 private:
  ScmNet net_;
  NetLayout layout_;
  Vec params_;
  OptState opt_;
  Vec lr_scale_;
  Vec layer_scale_;
  int guard_trips_ = 0;
};

}  // namespace minalign
