// Synthetic domain pairs with known semantics: segment pairs, latent-decoded
// pairs with invertible decoders and derived ground truth, finite empirical
// domains loaded from CSV, and deterministic sampling.
#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <memory>
#include <variant>

#include "minalign/distmeas.hpp"

namespace minalign {

class NoGroundTruth : public Error {
 public:
  using Error::Error;
};

class NonInvertibleDecoder : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// samplers

// A line segment {(t, height, 0, ...): t in [t_lo, t_hi)} in R^dim. The
// parameter is uniform, or triangular (density 2u on the unit parameter)
// when `triangular` is set, which breaks the flip symmetry of the segment.
struct SegmentSpec {
  double t_lo = 0.0;
  double t_hi = 1.0;
  double height = 0.5;
  std::size_t dim = 2;
  bool triangular = false;

  Vec point(double unit_param) const {
    const double u = triangular ? std::sqrt(unit_param) : unit_param;
    Vec x(dim, 0.0);
    x[0] = t_lo + (t_hi - t_lo) * u;
    x[1] = height;
    return x;
  }
};

struct Domain;

struct LatentSampler {
  std::shared_ptr<const Domain> base;
  std::shared_ptr<const ScmNet> decoder;
};

struct FiniteSupport {
  std::vector<Vec> points;
  Vec masses;  // must sum to 1
};

struct Domain {
  std::size_t dim = 0;
  std::variant<SegmentSpec, LatentSampler, FiniteSupport> spec;

  static Domain segment(SegmentSpec s) { return Domain{s.dim, s}; }

  static Domain latent_decoded(std::shared_ptr<const Domain> base,
                               std::shared_ptr<const ScmNet> decoder) {
    const std::size_t d = decoder->dim();
    if (base->dim != d) throw DimensionMismatch("latent domain: decoder dimension mismatch");
    return Domain{d, LatentSampler{std::move(base), std::move(decoder)}};
  }

  static Domain finite(std::vector<Vec> points, Vec masses) {
    if (points.empty()) throw Error("finite domain: empty support");
    if (points.size() != masses.size())
      throw DimensionMismatch("finite domain: points/masses size mismatch");
    double total = 0.0;
    for (double m : masses) {
      if (m < 0.0) throw Error("finite domain: negative mass");
      total += m;
    }
    if (std::abs(total - 1.0) > 1e-12) throw Error("finite domain: masses must sum to 1");
    const std::size_t d = points.front().size();
    for (const Vec& p : points)
      if (p.size() != d) throw DimensionMismatch("finite domain: ragged support");
    return Domain{d, FiniteSupport{std::move(points), std::move(masses)}};
  }
};

inline Vec draw(const Domain& dom, RngStream& rng) {
  if (const auto* s = std::get_if<SegmentSpec>(&dom.spec)) return s->point(rng.uniform01());
  if (const auto* l = std::get_if<LatentSampler>(&dom.spec))
    return l->decoder->eval(draw(*l->base, rng));
  const auto& f = std::get<FiniteSupport>(dom.spec);
  const double u = rng.uniform01();
  double acc = 0.0;
  for (std::size_t i = 0; i < f.points.size(); ++i) {
    acc += f.masses[i];
    if (u < acc) return f.points[i];
  }
  return f.points.back();
}

inline std::vector<Vec> sample(const Domain& dom, std::size_t n, RngStream& rng) {
  if (n < 1) throw Error("sample: n must be >= 1");
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw(dom, rng));
  return out;
}

// Deterministic midpoint-grid quasi-sample of a segment-backed domain; the
// uniform segment grid is exactly invariant under the flip map, which makes
// flip-symmetry checks exact instead of noisy.
inline std::vector<Vec> grid_sample(const Domain& dom, std::size_t n) {
  if (const auto* s = std::get_if<SegmentSpec>(&dom.spec)) {
    std::vector<Vec> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      out.push_back(s->point((static_cast<double>(i) + 0.5) / static_cast<double>(n)));
    return out;
  }
  if (const auto* l = std::get_if<LatentSampler>(&dom.spec)) {
    std::vector<Vec> out = grid_sample(*l->base, n);
    for (Vec& x : out) x = l->decoder->eval(x);
    return out;
  }
  throw Error("grid_sample: finite domains have no parameter grid");
}

// ---------------------------------------------------------------------------
// domain pairs

struct DomainPair {
  std::string name;
  Domain a, b;
  double leak = 0.2;  // leak used by preset nets and ground-truth forms

  std::function<Vec(const Vec&)> y_ab;      // ground truth (empty when unknown)
  std::function<Vec(const Vec&)> y_ab_alt;  // symmetric alternative, if any
  std::shared_ptr<const ScmNet> y_ab_net;   // representable ground truth, if any
  std::shared_ptr<const ScmNet> y_a, y_b;   // decoders of the latent view, if any
  std::shared_ptr<const Domain> latent;

  bool has_ground_truth() const { return static_cast<bool>(y_ab); }
};

namespace detail {

inline std::shared_ptr<const ScmNet> diag_net(double leak, const Vec& d) {
  return std::make_shared<ScmNet>(leak,
                                  std::vector<AffineLayer>{AffineLayer{Matrix::diagonal(d), std::nullopt}});
}

}  // namespace detail

// The uniform-segment toy pair: A at height_a, B at height_b, ground truth
// (t, h_a) -> (t, h_b) plus the flipped alternative (t, h_a) -> (lo+hi-t, h_b).
inline DomainPair make_segment_pair(std::size_t d = 2, double height_a = 0.5,
                                    double height_b = 2.0, double leak = 0.2,
                                    bool triangular = false) {
  if (d < 2) throw Error("make_segment_pair: ambient dimension must be >= 2");
  if (!(height_a > 0.0) || !(height_b > 0.0))
    throw Error("make_segment_pair: heights must be positive");
  DomainPair pair;
  pair.name = triangular ? "asym-segment" : "segment";
  pair.leak = leak;
  SegmentSpec sa{0.0, 1.0, height_a, d, triangular};
  SegmentSpec sb{0.0, 1.0, height_b, d, triangular};
  pair.a = Domain::segment(sa);
  pair.b = Domain::segment(sb);

  const double ratio = height_b / height_a;
  pair.y_ab = [ratio](const Vec& x) {
    Vec y = x;
    y[1] *= ratio;
    return y;
  };
  if (!triangular) {
    pair.y_ab_alt = [ratio](const Vec& x) {
      Vec y = x;
      y[0] = 1.0 - x[0];
      y[1] *= ratio;
      return y;
    };
  }

  // latent view: z = (t, 1) with the same parameter density
  auto latent = std::make_shared<Domain>(Domain::segment(SegmentSpec{0.0, 1.0, 1.0, d, triangular}));
  Vec da(d, 1.0), db(d, 1.0);
  da[1] = height_a;
  db[1] = height_b;
  pair.latent = latent;
  pair.y_a = detail::diag_net(leak, da);
  pair.y_b = detail::diag_net(leak, db);

  // depth-1 representable ground truth (the b = 0 member of the toy family);
  // the activation is transparent on the segment since both outputs stay
  // nonnegative there
  if (d == 2) {
    Matrix w = Matrix::from_rows({{1.0, 0.0}, {0.0, ratio}});
    std::vector<AffineLayer> layers;
    layers.push_back(AffineLayer{std::move(w), std::nullopt});
    layers.push_back(AffineLayer{Matrix::identity(2), std::nullopt});
    pair.y_ab_net = std::make_shared<ScmNet>(leak, std::move(layers));
  }
  return pair;
}

inline DomainPair make_asym_segment_pair(std::size_t d = 2, double leak = 0.2) {
  return make_segment_pair(d, 0.5, 2.0, leak, /*triangular=*/true);
}

// A pair whose ground truth is the identity; depth 0 suffices.
inline DomainPair make_identity_pair(std::size_t d = 2, double leak = 0.2) {
  DomainPair pair = make_segment_pair(d, 1.0, 1.0, leak);
  pair.name = "identity";
  pair.y_ab_alt = nullptr;  // keep the unique ground truth
  return pair;
}

// The flipped-solution net of the toy family at bias zero: maps the segment
// at height_a to the reversed segment at height_b.
inline ScmNet segment_flip_solution_net(double height_a = 0.5, double height_b = 2.0,
                                        double leak = 0.2) {
  const double ratio = height_b / height_a;
  Matrix w = Matrix::from_rows({{-1.0, 1.0 / height_a}, {0.0, ratio}});
  std::vector<AffineLayer> layers;
  layers.push_back(AffineLayer{std::move(w), std::nullopt});
  layers.push_back(AffineLayer{Matrix::identity(2), std::nullopt});
  return ScmNet(leak, std::move(layers));
}

// The flip of a segment domain as a depth-0 net: x1 -> lo + hi - x1.
inline ScmNet segment_flip_net(const Domain& dom, double leak = 0.2) {
  const auto* s = std::get_if<SegmentSpec>(&dom.spec);
  if (!s) throw Error("segment_flip_net: not a segment domain");
  Matrix w = Matrix::identity(s->dim);
  w(0, 0) = -1.0;
  Vec b(s->dim, 0.0);
  b[0] = s->t_lo + s->t_hi;
  return ScmNet(leak, {AffineLayer{std::move(w), std::move(b)}});
}

// General latent construction: domains are the decoder pushforwards and the
// ground truth is y_b o y_a^{-1}. Decoders must invert numerically.
inline DomainPair make_latent_pair(Domain latent, ScmNet y_a, ScmNet y_b,
                                   const std::string& name = "latent") {
  if (y_a.leak() != y_b.leak()) throw LeakMismatch("make_latent_pair: decoder leaks differ");
  auto latent_ptr = std::make_shared<Domain>(std::move(latent));
  auto ya = std::make_shared<ScmNet>(std::move(y_a));
  auto yb = std::make_shared<ScmNet>(std::move(y_b));

  ScmNet ya_inv = invert_net(*ya);
  {
    RngStream probe_rng(0xdec0de);
    for (int i = 0; i < 32; ++i) {
      const Vec z = draw(*latent_ptr, probe_rng);
      const Vec back = ya_inv.eval(ya->eval(z));
      if (std::sqrt(sq_dist(back, z)) > 1e-6 * (1.0 + norm2(z)))
        throw NonInvertibleDecoder("make_latent_pair: y_a does not invert numerically");
    }
  }

  DomainPair pair;
  pair.name = name;
  pair.leak = ya->leak();
  pair.latent = latent_ptr;
  pair.y_a = ya;
  pair.y_b = yb;
  pair.a = Domain::latent_decoded(latent_ptr, ya);
  pair.b = Domain::latent_decoded(latent_ptr, yb);
  auto gt = std::make_shared<ScmNet>(compose(*yb, ya_inv));
  pair.y_ab_net = gt;
  pair.y_ab = [gt](const Vec& x) { return gt->eval(x); };
  return pair;
}

// The zigzag preset: the latent segment {(t, 1): t in [-1, 1]} decoded into
// a four-piece polyline by a bias-free depth-2 net. Depth-1 mappers cannot
// fold three times, so aligning A to B needs declared depth 2; the preset's
// depth-1 discrepancy floor is established empirically by the validation
// suite before the preset is used as an oracle.
inline DomainPair make_zigzag_pair(double leak = 0.2) {
  Domain latent = Domain::segment(SegmentSpec{-1.0, 1.0, 1.0, 2, false});
  const ScmNet y_a = ScmNet::identity(leak, 2);
  const Matrix w1 = Matrix::from_rows({{1.0, 0.5}, {1.0, -0.5}});
  const Matrix w2 = Matrix::from_rows({{1.0, 0.0}, {1.0, 5.0}});
  const Matrix w3 = Matrix::identity(2);
  const ScmNet y_b(leak, {AffineLayer{w1, std::nullopt}, AffineLayer{w2, std::nullopt},
                          AffineLayer{w3, std::nullopt}});
  DomainPair pair = make_latent_pair(std::move(latent), y_a, y_b, "zigzag");
  return pair;
}

inline std::vector<std::string> preset_names() {
  return {"segment", "asym-segment", "zigzag", "identity"};
}

inline DomainPair preset_pair(const std::string& name, double leak = 0.2) {
  if (name == "segment") return make_segment_pair(2, 0.5, 2.0, leak);
  if (name == "asym-segment") return make_asym_segment_pair(2, leak);
  if (name == "zigzag") return make_zigzag_pair(leak);
  if (name == "identity") return make_identity_pair(2, leak);
  throw Error("unknown domain preset: " + name);
}

// Swap the two sides; ground truth is inverted when representable.
inline DomainPair reversed(const DomainPair& pair) {
  DomainPair r;
  r.name = pair.name + "-reversed";
  r.a = pair.b;
  r.b = pair.a;
  r.leak = pair.leak;
  r.latent = pair.latent;
  r.y_a = pair.y_b;
  r.y_b = pair.y_a;
  if (pair.y_ab_net) {
    auto inv = std::make_shared<ScmNet>(invert_net(*pair.y_ab_net));
    r.y_ab_net = inv;
    r.y_ab = [inv](const Vec& x) { return inv->eval(x); };
  }
  return r;
}

// ---------------------------------------------------------------------------
// alignment error

struct AlignmentError {
  double primary = 0.0;  // risk against y_ab
  double best = 0.0;     // min over {y_ab, y_ab_alt}
};

inline AlignmentError alignment_error(const std::function<Vec(const Vec&)>& h,
                                      const DomainPair& pair, std::size_t n, RngStream& rng) {
  if (!pair.has_ground_truth()) throw NoGroundTruth("alignment_error: pair has no ground truth");
  const std::vector<Vec> xs = sample(pair.a, n, rng);
  AlignmentError e;
  e.primary = risk(h, pair.y_ab, xs);
  e.best = e.primary;
  if (pair.y_ab_alt) e.best = std::min(e.best, risk(h, pair.y_ab_alt, xs));
  return e;
}

inline AlignmentError alignment_error(const ScmNet& h, const DomainPair& pair, std::size_t n,
                                      RngStream& rng) {
  return alignment_error([&h](const Vec& x) { return h.eval(x); }, pair, n, rng);
}

// ---------------------------------------------------------------------------
// CSV ingestion: numeric rows of uniform width become an empirical domain
// (uniform over rows)

inline std::vector<Vec> load_rows_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::vector<Vec> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Vec row;
    std::size_t pos = 0, col = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      const std::string field = line.substr(pos, comma - pos);
      ++col;
      double value = 0.0;
      const char* first = field.data();
      const char* last = field.data() + field.size();
      while (first != last && (*first == ' ' || *first == '\t')) ++first;
      const auto [ptr, ec] = std::from_chars(first, last, value);
      bool trailing_ok = true;
      for (const char* p = ptr; p != last; ++p)
        if (*p != ' ' && *p != '\t' && *p != '\r') trailing_ok = false;
      if (ec != std::errc() || !trailing_ok)
        throw ParseError("bad number at row " + std::to_string(lineno) + ", column " +
                         std::to_string(col));
      row.push_back(value);
      pos = comma + 1;
      if (comma == line.size()) break;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError("ragged row " + std::to_string(lineno) + ": expected " +
                       std::to_string(rows.front().size()) + " columns, got " +
                       std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("no data rows in " + path);
  return rows;
}

inline Domain load_points_csv(const std::string& path) {
  std::vector<Vec> rows = load_rows_csv(path);
  const std::size_t n = rows.size();
  return Domain::finite(std::move(rows), Vec(n, 1.0 / static_cast<double>(n)));
}

inline void save_points_csv(const std::string& path, std::span<const Vec> rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  char buf[64];
  for (const Vec& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), row[i]);
      if (i) out << ',';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
}

}  // namespace minalign
