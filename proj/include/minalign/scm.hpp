// Leaky-ReLU networks with invertible square layers: evaluation, exact
// inversion, composition, invariant (positive scaled permutation) algebra,
// identifiability at depth 1, and canonical gauge fixing.
//
// A net of declared depth n is an ordered list of n+1 affine layers with the
// activation applied between consecutive layers. Depth 0 is a single affine
// map. The declared depth is the working complexity measure throughout this
// toolkit: the true minimal-decomposition complexity is not computable in
// general, but for generic weights the two coincide, so every complexity
// knob and report below speaks in declared depth.
#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <utility>

#include "minalign/numcore.hpp"

#include <json.hpp>

namespace minalign {

class InvalidLeak : public Error {
 public:
  using Error::Error;
};

class LeakMismatch : public Error {
 public:
  using Error::Error;
};

class NotInvariant : public Error {
 public:
  using Error::Error;
};

class NonpositiveScale : public Error {
 public:
  using Error::Error;
};

class DegenerateRow : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// activation

enum class ActivationDir { forward, inverse };

inline void check_leak(double a) {
  if (!(a > 0.0) || a == 1.0)
    throw InvalidLeak("leak must satisfy 0 < a and a != 1, got " + std::to_string(a));
}

inline double activation_scalar(double x, double a, ActivationDir dir = ActivationDir::forward) {
  if (dir == ActivationDir::forward) return x < 0.0 ? a * x : x;
  return x < 0.0 ? x / a : x;
}

inline Vec activation(Vec x, double a, ActivationDir dir = ActivationDir::forward) {
  check_leak(a);
  for (double& v : x) v = activation_scalar(v, a, dir);
  return x;
}

// ---------------------------------------------------------------------------
// layers and nets

struct AffineLayer {
  Matrix W;
  std::optional<Vec> b;

  Vec apply(const Vec& x) const {
    Vec y = mul(W, x);
    if (b) {
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += (*b)[i];
    }
    return y;
  }
};

class ScmNet {
 public:
  ScmNet(double leak, std::vector<AffineLayer> layers) : leak_(leak), layers_(std::move(layers)) {
    check_leak(leak_);
    if (layers_.empty()) throw Error("ScmNet: at least one affine layer required");
    const std::size_t m = layers_.front().W.rows();
    for (const auto& l : layers_) {
      if (l.W.rows() != m || l.W.cols() != m)
        throw DimensionMismatch("ScmNet: all layers must be square of equal dimension");
      if (l.b && l.b->size() != m)
        throw DimensionMismatch("ScmNet: bias dimension mismatch");
      if (!is_invertible(l.W))
        throw SingularMatrix("ScmNet: layer weight matrix is singular");
    }
  }

  static ScmNet identity(double leak, std::size_t dim) {
    return ScmNet(leak, {AffineLayer{Matrix::identity(dim), std::nullopt}});
  }

  double leak() const { return leak_; }
  std::size_t dim() const { return layers_.front().W.rows(); }
  // number of activation applications in the decomposition
  std::size_t depth() const { return layers_.size() - 1; }
  const std::vector<AffineLayer>& layers() const { return layers_; }
  std::vector<AffineLayer>& layers() { return layers_; }

  bool bias_free() const {
    for (const auto& l : layers_)
      if (l.b) return false;
    return true;
  }

  Vec eval(const Vec& x) const {
    if (x.size() != dim()) throw DimensionMismatch("ScmNet::eval: input dimension mismatch");
    Vec y = layers_.front().apply(x);
    for (std::size_t i = 1; i < layers_.size(); ++i) {
      for (double& v : y) v = activation_scalar(v, leak_);
      y = layers_[i].apply(y);
    }
    return y;
  }

  // evaluation of the first `count` layers (count-1 activations), i.e. the
  // prefix F[W_count, ..., W_1] of the decomposition
  Vec eval_prefix(const Vec& x, std::size_t count) const {
    if (count == 0 || count > layers_.size()) throw Error("eval_prefix: bad layer count");
    Vec y = layers_.front().apply(x);
    for (std::size_t i = 1; i < count; ++i) {
      for (double& v : y) v = activation_scalar(v, leak_);
      y = layers_[i].apply(y);
    }
    return y;
  }

 private:
  double leak_;
  std::vector<AffineLayer> layers_;
};

// ---------------------------------------------------------------------------
// exact inversion
//
// Bias-free nets invert layerwise into the same depth: the inner layer of the
// inverse is -W_{n+1}^{-1}/a, middle layers are W_i^{-1}/a, and the outer
// layer is -W_1^{-1}. With biases, each affine inverse is propagated through
// the same scheme. Depth 0 is the plain affine inverse.

inline ScmNet invert_net(const ScmNet& net) {
  const auto& L = net.layers();
  const std::size_t n = net.depth();
  const double a = net.leak();

  auto affine_inverse = [](const AffineLayer& l) {
    AffineLayer inv;
    inv.W = invert_matrix(l.W);
    if (l.b) inv.b = -1.0 * mul(inv.W, *l.b);
    return inv;
  };

  if (n == 0) return ScmNet(a, {affine_inverse(L[0])});

  std::vector<AffineLayer> out;
  out.reserve(n + 1);
  // innermost: (-1/a) * inverse of the outermost original layer
  {
    AffineLayer inv = affine_inverse(L[n]);
    inv.W = (-1.0 / a) * inv.W;
    if (inv.b) inv.b = (-1.0 / a) * *inv.b;
    out.push_back(std::move(inv));
  }
  // middle: (1/a) * inverse of layers n, ..., 2, with the sign flip of the
  // incoming value absorbed into the weight
  for (std::size_t i = n; i >= 2; --i) {
    AffineLayer inv = affine_inverse(L[i - 1]);
    // x -> (-1/a) * (W^{-1} (-x) + b_inv) composes the two -Id factors of
    // sigma^{-1} around the affine inverse
    inv.W = (1.0 / a) * inv.W;
    if (inv.b) inv.b = (-1.0 / a) * *inv.b;
    out.push_back(std::move(inv));
  }
  // outermost: inverse of the innermost original layer, applied to -x
  {
    AffineLayer inv = affine_inverse(L[0]);
    inv.W = -1.0 * inv.W;
    out.push_back(std::move(inv));
  }
  return ScmNet(a, std::move(out));
}

// f after g, with the junction affine pair fused into a single layer
inline ScmNet compose(const ScmNet& f, const ScmNet& g) {
  if (f.leak() != g.leak()) throw LeakMismatch("compose: leak parameters differ");
  if (f.dim() != g.dim()) throw DimensionMismatch("compose: dimensions differ");

  std::vector<AffineLayer> out(g.layers().begin(), g.layers().end() - 1);
  const AffineLayer& gj = g.layers().back();
  const AffineLayer& fj = f.layers().front();
  AffineLayer fused;
  fused.W = fj.W * gj.W;
  if (gj.b || fj.b) {
    Vec b = gj.b ? mul(fj.W, *gj.b) : Vec(f.dim(), 0.0);
    if (fj.b) b = b + *fj.b;
    fused.b = std::move(b);
  }
  out.push_back(std::move(fused));
  out.insert(out.end(), f.layers().begin() + 1, f.layers().end());
  return ScmNet(f.leak(), std::move(out));
}

// ---------------------------------------------------------------------------
// invariants: positive scaled permutations, y_i = c_i * x_{perm[i]}

struct InvariantMap {
  std::vector<std::size_t> perm;
  Vec scales;

  std::size_t dim() const { return perm.size(); }

  Matrix to_matrix() const {
    Matrix m(dim(), dim());
    for (std::size_t i = 0; i < dim(); ++i) m(i, perm[i]) = scales[i];
    return m;
  }

  Vec apply(const Vec& x) const {
    Vec y(dim());
    for (std::size_t i = 0; i < dim(); ++i) y[i] = scales[i] * x[perm[i]];
    return y;
  }

  InvariantMap inverse() const {
    InvariantMap inv;
    inv.perm.resize(dim());
    inv.scales.resize(dim());
    for (std::size_t i = 0; i < dim(); ++i) {
      inv.perm[perm[i]] = i;
      inv.scales[perm[i]] = 1.0 / scales[i];
    }
    return inv;
  }
};

// tau1 after tau2
inline InvariantMap compose(const InvariantMap& t1, const InvariantMap& t2) {
  if (t1.dim() != t2.dim()) throw DimensionMismatch("invariant compose: dims differ");
  InvariantMap r;
  r.perm.resize(t1.dim());
  r.scales.resize(t1.dim());
  for (std::size_t i = 0; i < t1.dim(); ++i) {
    r.perm[i] = t2.perm[t1.perm[i]];
    r.scales[i] = t1.scales[i] * t2.scales[t1.perm[i]];
  }
  return r;
}

inline InvariantMap make_invariant(std::vector<std::size_t> perm, Vec scales) {
  if (perm.size() != scales.size()) throw DimensionMismatch("make_invariant: size mismatch");
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || seen[p]) throw Error("make_invariant: not a permutation");
    seen[p] = true;
  }
  for (double c : scales)
    if (!(c > 0.0)) throw NonpositiveScale("make_invariant: scales must be positive");
  return InvariantMap{std::move(perm), std::move(scales)};
}

inline InvariantMap random_invariant(std::size_t dim, RngStream& rng) {
  std::vector<std::size_t> perm(dim);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = dim; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
  Vec scales(dim);
  for (double& c : scales) c = std::exp(rng.uniform(-1.0, 1.0));
  return make_invariant(std::move(perm), std::move(scales));
}

// Structural test for membership in the invariant set: exactly one
// strictly positive entry per row and per column, everything else zero
// (entries under rel_tol * max|entry| count as zero). The candidate is then
// probed for commutation with the activation on random vectors.
inline bool is_invariant(const Matrix& m, double a, double rel_tol = 1e-8,
                         int probes = 50, double probe_tol = 1e-12) {
  check_leak(a);
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  const std::size_t n = m.rows();
  const double cutoff = rel_tol * max_abs(m);
  std::vector<int> row_hits(n, 0), col_hits(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double v = m(i, j);
      if (std::abs(v) <= cutoff) continue;
      if (v < 0.0) return false;
      ++row_hits[i];
      ++col_hits[j];
    }
  for (std::size_t i = 0; i < n; ++i)
    if (row_hits[i] != 1 || col_hits[i] != 1) return false;

  RngStream rng(0x5ca1ab1eULL);
  const double scale = max_abs(m);
  for (int p = 0; p < probes; ++p) {
    const Vec x = normal_vec(n, rng);
    const Vec lhs = activation(mul(m, x), a);
    Vec rhs = mul(m, activation(x, a));
    for (std::size_t i = 0; i < n; ++i)
      if (std::abs(lhs[i] - rhs[i]) > probe_tol * std::max(1.0, scale)) return false;
  }
  return true;
}

// Extract the scaled-permutation structure, snapping sub-threshold entries
// to zero. Throws NotInvariant if the structural test fails.
inline InvariantMap snap_invariant(const Matrix& m, double rel_tol = 1e-8) {
  if (m.rows() != m.cols()) throw NotInvariant("snap_invariant: matrix not square");
  const std::size_t n = m.rows();
  const double cutoff = rel_tol * max_abs(m);
  InvariantMap tau;
  tau.perm.assign(n, n);
  tau.scales.assign(n, 0.0);
  std::vector<bool> col_used(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = m(i, j);
      if (std::abs(v) <= cutoff) continue;
      if (v < 0.0 || tau.perm[i] != n || col_used[j])
        throw NotInvariant("snap_invariant: not a positive scaled permutation");
      tau.perm[i] = j;
      tau.scales[i] = v;
      col_used[j] = true;
    }
    if (tau.perm[i] == n) throw NotInvariant("snap_invariant: empty row");
  }
  return tau;
}

// Depth-1 identifiability: two decompositions of the same function satisfy
// W1 = tau o V1; recover tau = W1 V1^{-1} and validate its structure.
inline InvariantMap recover_invariant(const Matrix& W1, const Matrix& V1, double a,
                                      double rel_tol = 1e-8) {
  check_leak(a);
  const Matrix tau = W1 * invert_matrix(V1);
  InvariantMap snapped = snap_invariant(tau, rel_tol);
  if (!is_invariant(snapped.to_matrix(), a, rel_tol))
    throw NotInvariant("recover_invariant: candidate fails the invariant test");
  return snapped;
}

// ---------------------------------------------------------------------------
// the inverse-prefix identity
//
// For a bias-free minimal decomposition f = F[W_{n+1}, ..., W_1] and any
// prefix index i, applying F[W_{i+1}^{-1}/a, ..., W_n^{-1}/a, -W_{n+1}^{-1}/a]
// to f recovers -1/a * sigma(F[W_i, ..., W_1]). Returns the max deviation
// between both sides over the sample list.

inline double verify_inverse_prefix_identity(const ScmNet& net, std::size_t i,
                                             std::span<const Vec> samples) {
  if (!net.bias_free()) throw Error("inverse prefix identity requires a bias-free net");
  const std::size_t n = net.depth();
  if (i < 1 || i > n) throw Error("prefix index out of range");
  const double a = net.leak();

  std::vector<AffineLayer> post;  // applied to f's output, innermost first
  post.push_back(AffineLayer{(-1.0 / a) * invert_matrix(net.layers()[n].W), std::nullopt});
  for (std::size_t j = n; j >= i + 1; --j)
    post.push_back(AffineLayer{(1.0 / a) * invert_matrix(net.layers()[j - 1].W), std::nullopt});
  const ScmNet post_net(a, std::move(post));

  double worst = 0.0;
  for (const Vec& x : samples) {
    const Vec lhs = post_net.eval(net.eval(x));
    Vec rhs = activation(net.eval_prefix(x, i), a);
    for (double& v : rhs) v *= -1.0 / a;
    for (std::size_t k = 0; k < lhs.size(); ++k)
      worst = std::max(worst, std::abs(lhs[k] - rhs[k]));
  }
  return worst;
}

// kept under the name used by the verification CLI and tests
inline double verify_lemma_inverse_prefix(const ScmNet& net, std::size_t i,
                                          std::span<const Vec> samples) {
  return verify_inverse_prefix_identity(net, i, samples);
}

// ---------------------------------------------------------------------------
// canonical gauge
//
// Hidden-layer rows are scaled to unit Euclidean norm and sorted
// lexicographically by applying invariants at each junction; the function
// computed is unchanged. Two nets that differ only by invariant gauge
// transformations canonicalize to identical weights. For depth-1 nets this
// is exact up to identifiability; for deeper nets it is heuristic gauge
// fixing.

inline ScmNet canonicalize(const ScmNet& net) {
  const std::size_t n = net.depth();
  if (n == 0) return net;
  const std::size_t m = net.dim();

  std::vector<AffineLayer> out;
  out.reserve(n + 1);
  InvariantMap prev{std::vector<std::size_t>(m), Vec(m, 1.0)};
  std::iota(prev.perm.begin(), prev.perm.end(), std::size_t{0});

  for (std::size_t li = 0; li < n; ++li) {
    const AffineLayer& layer = net.layers()[li];
    Matrix A = layer.W * prev.inverse().to_matrix();
    Vec b = layer.b ? *layer.b : Vec();

    Vec inv_norms(m);
    for (std::size_t r = 0; r < m; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < m; ++c) s += A(r, c) * A(r, c);
      const double norm = std::sqrt(s);
      if (norm < 1e-300) throw DegenerateRow("canonicalize: zero hidden row");
      inv_norms[r] = 1.0 / norm;
    }
    Matrix scaled(m, m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < m; ++c) scaled(r, c) = A(r, c) * inv_norms[r];

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      for (std::size_t c = 0; c < m; ++c) {
        if (scaled(x, c) < scaled(y, c)) return true;
        if (scaled(x, c) > scaled(y, c)) return false;
      }
      return x < y;
    });

    InvariantMap tau;
    tau.perm.resize(m);
    tau.scales.resize(m);
    for (std::size_t r = 0; r < m; ++r) {
      tau.perm[r] = order[r];
      tau.scales[r] = inv_norms[order[r]];
    }

    AffineLayer canon;
    canon.W = Matrix(m, m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < m; ++c) canon.W(r, c) = scaled(order[r], c);
    if (layer.b) {
      Vec nb(m);
      for (std::size_t r = 0; r < m; ++r) nb[r] = b[order[r]] * inv_norms[order[r]];
      canon.b = std::move(nb);
    }
    out.push_back(std::move(canon));
    prev = tau;
  }

  const AffineLayer& last = net.layers()[n];
  AffineLayer outer;
  outer.W = last.W * prev.inverse().to_matrix();
  outer.b = last.b;
  out.push_back(std::move(outer));
  return ScmNet(net.leak(), std::move(out));
}

// gauge a net by explicit junction invariants; the computed function is
// unchanged (used by tests and the census machinery)
inline ScmNet apply_gauge(const ScmNet& net, const std::vector<InvariantMap>& taus) {
  const std::size_t n = net.depth();
  if (taus.size() != n) throw Error("apply_gauge: need one invariant per junction");
  std::vector<AffineLayer> out;
  out.reserve(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    const AffineLayer& l = net.layers()[i];
    Matrix W = l.W;
    std::optional<Vec> b = l.b;
    if (i > 0) W = W * taus[i - 1].inverse().to_matrix();
    if (i < n) {
      W = taus[i].to_matrix() * W;
      if (b) b = taus[i].apply(*b);
    }
    out.push_back(AffineLayer{std::move(W), std::move(b)});
  }
  return ScmNet(net.leak(), std::move(out));
}

// random bias-free net with well-conditioned layers
inline ScmNet random_net(std::size_t dim, std::size_t depth, double leak, RngStream& rng,
                         bool with_bias = false, double weight_scale = 1.0) {
  std::vector<AffineLayer> layers;
  layers.reserve(depth + 1);
  for (std::size_t i = 0; i <= depth; ++i) {
    AffineLayer l;
    l.W = weight_scale * random_invertible(dim, rng);
    if (with_bias) l.b = normal_vec(dim, rng);
    layers.push_back(std::move(l));
  }
  return ScmNet(leak, std::move(layers));
}

// ---------------------------------------------------------------------------
// serialization: {leak, layers: [{W: row-major floats, b: floats|null}]}

inline nlohmann::json to_json(const ScmNet& net) {
  nlohmann::json j;
  j["leak"] = net.leak();
  j["layers"] = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    nlohmann::json jl;
    jl["rows"] = l.W.rows();
    jl["W"] = std::vector<double>(l.W.data().begin(), l.W.data().end());
    if (l.b)
      jl["b"] = *l.b;
    else
      jl["b"] = nullptr;
    j["layers"].push_back(std::move(jl));
  }
  return j;
}

inline ScmNet net_from_json(const nlohmann::json& j) {
  const double leak = j.at("leak").get<double>();
  std::vector<AffineLayer> layers;
  for (const auto& jl : j.at("layers")) {
    const std::size_t rows = jl.at("rows").get<std::size_t>();
    const auto flat = jl.at("W").get<std::vector<double>>();
    if (flat.size() != rows * rows) throw Error("net_from_json: bad weight size");
    AffineLayer l;
    l.W = Matrix(rows, rows);
    std::copy(flat.begin(), flat.end(), l.W.data().begin());
    if (!jl.at("b").is_null()) l.b = jl.at("b").get<Vec>();
    layers.push_back(std::move(l));
  }
  return ScmNet(leak, std::move(layers));
}

}  // namespace minalign
