// Finite-instance counting machinery: enumeration of measure-preserving
// permutations over finite supports, the layerwise similarity relation
// between equal-depth nets, and covering numbers of reflexive-symmetric
// relations with an exact branch-and-bound solver.
#pragma once

#include "minalign/domains.hpp"

namespace minalign {

class SupportTooLarge : public Error {
 public:
  using Error::Error;
};

class DepthMismatch : public Error {
 public:
  using Error::Error;
};

class TooLargeForExact : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// density-preserving permutations of a finite support
//
// The discrepancy proxy on point masses is the total variation distance
// between the pushed-forward and original mass vectors; it is exact,
// deterministic and conservative for census purposes (it is not the
// critic-limited discrepancy).

using FiniteDomain = FiniteSupport;

inline double tv_distance_permuted(const Vec& masses, const std::vector<std::size_t>& perm) {
  double tv = 0.0;
  for (std::size_t i = 0; i < masses.size(); ++i) tv += std::abs(masses[i] - masses[perm[i]]);
  return 0.5 * tv;
}

inline std::vector<std::vector<std::size_t>> dpm_census_finite(const FiniteDomain& dom,
                                                               double eps0) {
  const std::size_t n = dom.masses.size();
  if (n > 10) throw SupportTooLarge("dpm_census_finite: factorial enumeration capped at 10");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<std::vector<std::size_t>> census;
  do {
    if (tv_distance_permuted(dom.masses, perm) <= eps0) census.push_back(perm);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return census;
}

// ---------------------------------------------------------------------------
// similarity graphs

class SimilarityGraph {
 public:
  explicit SimilarityGraph(std::size_t n, std::vector<std::string> labels = {})
      : n_(n), labels_(std::move(labels)), adj_(n * n, 0) {
    if (labels_.empty())
      for (std::size_t i = 0; i < n; ++i) labels_.push_back("item" + std::to_string(i));
    if (labels_.size() != n) throw DimensionMismatch("SimilarityGraph: label count mismatch");
    for (std::size_t i = 0; i < n; ++i) adj_[i * n + i] = 1;  // reflexive
  }

  std::size_t size() const { return n_; }
  const std::vector<std::string>& labels() const { return labels_; }

  void set_similar(std::size_t i, std::size_t j, bool value = true) {
    adj_[i * n_ + j] = value ? 1 : 0;
    adj_[j * n_ + i] = value ? 1 : 0;
    adj_[i * n_ + i] = 1;
    adj_[j * n_ + j] = 1;
  }

  bool similar(std::size_t i, std::size_t j) const { return adj_[i * n_ + j] != 0; }

 private:
  std::size_t n_;
  std::vector<std::string> labels_;
  std::vector<std::uint8_t> adj_;
};

enum class CoveringMode { exact, greedy };

struct CoveringResult {
  std::size_t number = 0;
  std::vector<std::size_t> assignment;  // item -> class id (0-based, first-occurrence order)
  bool exact = false;
};

namespace detail {

inline void verify_clique_partition(const SimilarityGraph& g,
                                    const std::vector<std::size_t>& assignment,
                                    std::size_t classes) {
  if (assignment.size() != g.size()) throw Error("covering: bad assignment size");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (assignment[i] >= classes) throw Error("covering: class id out of range");
    for (std::size_t j = i + 1; j < g.size(); ++j)
      if (assignment[i] == assignment[j] && !g.similar(i, j))
        throw Error("covering: a class is not a clique");
  }
}

inline std::vector<std::size_t> normalize_class_ids(const std::vector<std::size_t>& raw) {
  std::vector<std::size_t> remap(raw.size(), SIZE_MAX);
  std::vector<std::size_t> out(raw.size());
  std::size_t next = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (remap[raw[i]] == SIZE_MAX) remap[raw[i]] = next++;
    out[i] = remap[raw[i]];
  }
  return out;
}

// first-fit clique assignment in item order
inline std::vector<std::size_t> greedy_clique_cover(const SimilarityGraph& g) {
  const std::size_t n = g.size();
  std::vector<std::size_t> assignment(n, SIZE_MAX);
  std::vector<std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < n; ++i) {
    bool placed = false;
    for (std::size_t c = 0; c < classes.size() && !placed; ++c) {
      bool fits = true;
      for (std::size_t member : classes[c])
        if (!g.similar(i, member)) {
          fits = false;
          break;
        }
      if (fits) {
        classes[c].push_back(i);
        assignment[i] = c;
        placed = true;
      }
    }
    if (!placed) {
      assignment[i] = classes.size();
      classes.push_back({i});
    }
  }
  return assignment;
}

// Branch-and-bound minimum clique cover (optimal coloring of the complement
// graph). Vertices are processed in a fixed order; ties break by item index,
// so the partition is deterministic.
struct CliqueCoverSolver {
  const SimilarityGraph& g;
  std::size_t n;
  std::vector<std::size_t> order;
  std::vector<std::size_t> assignment;       // in `order` positions
  std::vector<std::size_t> best_assignment;  // item-indexed
  std::size_t best = SIZE_MAX;

  explicit CliqueCoverSolver(const SimilarityGraph& graph) : g(graph), n(graph.size()) {
    order.resize(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // most-constrained first: fewest similarities, ties by index
    std::vector<std::size_t> sim_count(n, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (g.similar(i, j)) ++sim_count[i];
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      if (sim_count[x] != sim_count[y]) return sim_count[x] < sim_count[y];
      return x < y;
    });
    assignment.assign(n, SIZE_MAX);
  }

  void solve() {
    // greedy warm start gives an upper bound
    std::vector<std::size_t> greedy = greedy_clique_cover(g);
    std::size_t greedy_classes = 0;
    for (std::size_t c : greedy) greedy_classes = std::max(greedy_classes, c + 1);
    best = greedy_classes;
    best_assignment = greedy;
    recurse(0, 0);
  }

  void recurse(std::size_t pos, std::size_t used) {
    if (used >= best) return;
    if (pos == n) {
      best = used;
      best_assignment.assign(n, 0);
      for (std::size_t p = 0; p < n; ++p) best_assignment[order[p]] = assignment[p];
      return;
    }
    const std::size_t v = order[pos];
    for (std::size_t c = 0; c < used; ++c) {
      bool fits = true;
      for (std::size_t p = 0; p < pos && fits; ++p)
        if (assignment[p] == c && !g.similar(v, order[p])) fits = false;
      if (!fits) continue;
      assignment[pos] = c;
      recurse(pos + 1, used);
      assignment[pos] = SIZE_MAX;
    }
    if (used + 1 < best) {
      assignment[pos] = used;
      recurse(pos + 1, used + 1);
      assignment[pos] = SIZE_MAX;
    }
  }
};

}  // namespace detail

inline CoveringResult covering_number(const SimilarityGraph& g,
                                      CoveringMode mode = CoveringMode::exact,
                                      std::size_t max_exact_items = 16) {
  CoveringResult res;
  if (mode == CoveringMode::exact) {
    if (g.size() > max_exact_items)
      throw TooLargeForExact("covering_number: exact mode capped at " +
                             std::to_string(max_exact_items) + " items");
    detail::CliqueCoverSolver solver(g);
    solver.solve();
    res.assignment = detail::normalize_class_ids(solver.best_assignment);
    res.number = solver.best;
    res.exact = true;
  } else {
    res.assignment = detail::normalize_class_ids(detail::greedy_clique_cover(g));
    res.number = 0;
    for (std::size_t c : res.assignment) res.number = std::max(res.number, c + 1);
    res.exact = false;
  }
  detail::verify_clique_partition(g, res.assignment, res.number);
  return res;
}

// product relation on pairs: (a,b) ~ (c,d) iff a ~ c and b ~ d
inline SimilarityGraph product_graph(const SimilarityGraph& g) {
  const std::size_t n = g.size();
  std::vector<std::string> labels;
  labels.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      labels.push_back("(" + g.labels()[i] + "," + g.labels()[j] + ")");
  SimilarityGraph p(n * n, std::move(labels));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < n; ++c)
        for (std::size_t d = 0; d < n; ++d)
          if (g.similar(a, c) && g.similar(b, d)) p.set_similar(a * n + b, c * n + d);
  return p;
}

inline SimilarityGraph restrict_graph(const SimilarityGraph& g,
                                      std::span<const std::size_t> subset) {
  std::vector<std::string> labels;
  for (std::size_t idx : subset) {
    if (idx >= g.size()) throw Error("restrict_graph: index out of range");
    labels.push_back(g.labels()[idx]);
  }
  SimilarityGraph r(subset.size(), std::move(labels));
  for (std::size_t i = 0; i < subset.size(); ++i)
    for (std::size_t j = 0; j < subset.size(); ++j)
      if (g.similar(subset[i], subset[j])) r.set_similar(i, j);
  return r;
}

// ---------------------------------------------------------------------------
// layerwise similarity between equal-depth nets
//
// Both nets are canonicalized first; the relation then compares the
// pushforward of the sample set through every matching decomposition prefix.
// A per-coordinate positive rescaling of one side is allowed before each
// comparison (it is an invariant gauge choice, so it stays within the
// relation's quantifier over minimal decompositions). The canonical gauge is
// a computable stand-in for that quantifier: the test can report false where
// a cleverer gauge would give true, so census counts are upper bounds.

struct SimilarityConfig {
  bool scale_match = true;
  GridOracleConfig grid{16};
  DiscrepancyConfig adversarial{};
  std::size_t critic_depth = 2;
  std::uint64_t adversarial_seed = 77;
};

inline double prefix_discrepancy(std::span<const Vec> push_f, std::span<const Vec> push_g,
                                 const SimilarityConfig& cfg) {
  if (push_f.front().size() <= 2) return discrepancy_grid_oracle(push_f, push_g, cfg.grid);
  RngStream rng(cfg.adversarial_seed);
  return discrepancy_adversarial(push_f, push_g, cfg.critic_depth, cfg.adversarial, rng).estimate;
}

inline bool layerwise_similarity(const ScmNet& f, const ScmNet& g, std::span<const Vec> samples,
                                 double eps, const SimilarityConfig& cfg = {}) {
  if (f.depth() != g.depth()) throw DepthMismatch("layerwise_similarity: depths differ");
  if (f.dim() != g.dim()) throw DimensionMismatch("layerwise_similarity: dimensions differ");
  if (samples.empty()) throw Error("layerwise_similarity: empty sample set");

  const ScmNet cf = canonicalize(f);
  const ScmNet cg = canonicalize(g);
  const std::size_t layer_count = f.depth() + 1;
  const std::size_t dim = f.dim();

  for (std::size_t i = 1; i <= layer_count; ++i) {
    std::vector<Vec> pf, pg;
    pf.reserve(samples.size());
    pg.reserve(samples.size());
    for (const Vec& x : samples) {
      pf.push_back(cf.eval_prefix(x, i));
      pg.push_back(cg.eval_prefix(x, i));
    }
    if (cfg.scale_match && i <= f.depth()) {
      // positive per-coordinate rescaling of g's hidden representation
      for (std::size_t c = 0; c < dim; ++c) {
        double mf = 0.0, mg = 0.0;
        for (const Vec& v : pf) mf += std::abs(v[c]);
        for (const Vec& v : pg) mg += std::abs(v[c]);
        if (mg < 1e-12 || mf < 1e-12) continue;
        const double s = mf / mg;
        for (Vec& v : pg) v[c] *= s;
      }
    }
    if (prefix_discrepancy(pf, pg, cfg) > eps) return false;
  }
  return true;
}

}  // namespace minalign
