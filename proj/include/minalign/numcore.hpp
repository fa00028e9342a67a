// Dense 64-bit linear algebra, deterministic RNG streams and small numeric
// helpers. Everything above this header builds on these types.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace minalign {

// ---------------------------------------------------------------------------
// errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularMatrix : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// vectors

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw DimensionMismatch("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double norm_inf(const Vec& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline double norm1(const Vec& a) {
  double s = 0.0;
  for (double v : a) s += std::abs(v);
  return s;
}

inline Vec operator+(Vec a, const Vec& b) {
  if (a.size() != b.size()) throw DimensionMismatch("vec add: size mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline Vec operator-(Vec a, const Vec& b) {
  if (a.size() != b.size()) throw DimensionMismatch("vec sub: size mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}

inline Vec operator*(double s, Vec a) {
  for (double& v : a) v *= s;
  return a;
}

inline double sq_dist(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw DimensionMismatch("sq_dist: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline bool all_finite(const Vec& a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// matrices (row-major)

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(const Vec& d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionMismatch("from_rows: ragged rows");
      std::size_t j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  Vec row(std::size_t i) const {
    return Vec(data_.begin() + static_cast<std::ptrdiff_t>(i * cols_),
               data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols_));
  }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double max_abs(const Matrix& m) {
  double v = 0.0;
  for (double x : m.data()) v = std::max(v, std::abs(x));
  return v;
}

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dims differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline Matrix operator*(double s, Matrix m) {
  for (double& v : m.data()) v *= s;
  return m;
}

inline Matrix operator-(Matrix a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionMismatch("mat sub: shape mismatch");
  auto d = a.data();
  auto e = b.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] -= e[i];
  return a;
}

inline Vec mul(const Matrix& m, const Vec& x) {
  if (m.cols() != x.size()) throw DimensionMismatch("matvec: size mismatch");
  Vec y(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

inline Vec mul_transposed(const Matrix& m, const Vec& x) {
  if (m.rows() != x.size()) throw DimensionMismatch("matvec^T: size mismatch");
  Vec y(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) y[j] += m(i, j) * x[i];
  return y;
}

namespace detail {

// LU with partial pivoting; factors in place. Returns the permutation and
// throws SingularMatrix if any pivot falls under rel_tol * max|entry|.
struct LuFactors {
  Matrix lu;
  std::vector<std::size_t> perm;
};

inline LuFactors lu_factor(const Matrix& m, double rel_tol = 1e-12) {
  if (m.rows() != m.cols()) throw DimensionMismatch("lu_factor: matrix not square");
  const std::size_t n = m.rows();
  const double scale = max_abs(m);
  if (scale == 0.0) throw SingularMatrix("lu_factor: zero matrix");
  LuFactors f{m, {}};
  f.perm.resize(n);
  for (std::size_t i = 0; i < n; ++i) f.perm[i] = i;
  Matrix& a = f.lu;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    double best = std::abs(a(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double v = std::abs(a(i, k));
      if (v > best) {
        best = v;
        piv = i;
      }
    }
    if (best < rel_tol * scale)
      throw SingularMatrix("lu_factor: pivot below " + std::to_string(rel_tol) +
                           " * max|entry|");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      std::swap(f.perm[k], f.perm[piv]);
    }
    const double inv_piv = 1.0 / a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double l = a(i, k) * inv_piv;
      a(i, k) = l;
      if (l == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= l * a(k, j);
    }
  }
  return f;
}

inline Vec lu_solve(const LuFactors& f, const Vec& b) {
  const std::size_t n = f.perm.size();
  Vec y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = b[f.perm[i]];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) y[i] -= f.lu(i, j) * y[j];
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = i + 1; j < n; ++j) y[i] -= f.lu(i, j) * y[j];
    y[i] /= f.lu(i, i);
  }
  return y;
}

}  // namespace detail

inline Matrix invert_matrix(const Matrix& m) {
  const auto f = detail::lu_factor(m);
  const std::size_t n = m.rows();
  Matrix inv(n, n);
  Vec e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    const Vec col = detail::lu_solve(f, e);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    e[j] = 0.0;
  }
  return inv;
}

inline bool is_invertible(const Matrix& m, double rel_tol = 1e-12) {
  try {
    detail::lu_factor(m, rel_tol);
    return true;
  } catch (const SingularMatrix&) {
    return false;
  }
}

inline double norm1_operator(const Matrix& m) {
  double best = 0.0;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) s += std::abs(m(i, j));
    best = std::max(best, s);
  }
  return best;
}

// 1-norm condition estimate via the explicit inverse; fine at desk scale.
inline double condition_estimate(const Matrix& m) {
  try {
    return norm1_operator(m) * norm1_operator(invert_matrix(m));
  } catch (const SingularMatrix&) {
    return std::numeric_limits<double>::infinity();
  }
}

// ---------------------------------------------------------------------------
// deterministic RNG streams
//
// xoshiro256++ seeded through splitmix64 from (seed, substream). The
// generator and both variate transforms are pinned here so that any
// (seed, substream) pair yields the same draws on every platform and build.

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t substream = 0)
      : seed_(seed), substream_(substream) {
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (substream + 1));
    for (auto& s : state_) s = splitmix64(x);
    // xoshiro must not start from the all-zero state
    if (state_[0] == 0 && state_[1] == 0 && state_[2] == 0 && state_[3] == 0)
      state_[0] = 1;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t substream() const { return substream_; }

  // independent child stream; id selects the fork deterministically
  RngStream fork(std::uint64_t id) const {
    std::uint64_t mixed = substream_ ^ (0xbf58476d1ce4e5b9ULL * (id + 1));
    mixed = splitmix64(mixed);
    return RngStream(seed_, mixed);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform on [0, 1)
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // uniform on {0, ..., n-1}; n must be positive
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(uniform01() * static_cast<double>(n)) % n;
  }

  // standard normal via Box-Muller; the spare is cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::array<std::uint64_t, 4> state_{};
  std::uint64_t seed_ = 0;
  std::uint64_t substream_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Vec normal_vec(std::size_t n, RngStream& rng) {
  Vec v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Random square matrix with i.i.d. standard normal entries, rejected until
// the 1-norm condition estimate falls under cond_cap.
inline Matrix random_invertible(std::size_t dim, RngStream& rng, double cond_cap = 1e4) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Matrix m(dim, dim);
    for (double& v : m.data()) v = rng.normal();
    if (condition_estimate(m) <= cond_cap) return m;
  }
  throw Error("random_invertible: rejection cap exceeded");
}

}  // namespace minalign
