#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttf/common.hpp"
#include "ttf/csv.hpp"
#include "ttf/prep.hpp"
#include "ttf/roadnet.hpp"
#include "ttf/tensor.hpp"

namespace ttf {

/// Observed cells of a rows x cols matrix.
struct SparseMatrix {
  struct Entry {
    std::size_t row = 0;
    std::size_t col = 0;
    double value = 0.0;
  };

  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Entry> entries;

  /// Segment x window matrix M of a windowed dataset.
  static SparseMatrix from_dataset(const WindowedDataset& ds) {
    SparseMatrix m;
    m.rows = ds.num_segments();
    m.cols = ds.num_windows();
    for (const auto& b : ds.batches)
      for (std::size_t k = 0; k < b.size(); ++k)
        m.entries.push_back({static_cast<std::size_t>(b.segment_ids[k]), b.window, b.z_values[k]});
    return m;
  }

  SparseMatrix transposed() const {
    SparseMatrix t;
    t.rows = cols;
    t.cols = rows;
    for (const auto& e : entries) t.entries.push_back({e.col, e.row, e.value});
    return t;
  }

  std::vector<char> observed_rows() const {
    std::vector<char> seen(rows, 0);
    for (const auto& e : entries) seen[e.row] = 1;
    return seen;
  }
};

struct AlsOptions {
  std::size_t d = 16;
  double lambda = 0.1;
  std::size_t sweeps = 25;
  std::uint64_t seed = 7;
  /// Which factor each sweep solves first. Solving columns first on the
  /// transposed matrix reproduces the same trajectory.
  bool rows_first = true;
};

struct AlsResult {
  Tensor P;  ///< rows x d; for M this is the segment embedding table
  Tensor Q;  ///< cols x d
  std::vector<double> objective;  ///< before the first sweep, then after every sweep
  std::vector<std::string> warnings;
};

namespace detail {

/// Solves (A) x = b in place for symmetric positive definite A (d x d, row-major).
/// Returns false when A is not numerically positive definite.
inline bool cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t d) {
  for (std::size_t j = 0; j < d; ++j) {
    double s = a[j * d + j];
    for (std::size_t k = 0; k < j; ++k) s -= a[j * d + k] * a[j * d + k];
    if (!(s > 0.0)) return false;
    const double ljj = std::sqrt(s);
    a[j * d + j] = ljj;
    for (std::size_t i = j + 1; i < d; ++i) {
      double t = a[i * d + j];
      for (std::size_t k = 0; k < j; ++k) t -= a[i * d + k] * a[j * d + k];
      a[i * d + j] = t / ljj;
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    double t = b[i];
    for (std::size_t k = 0; k < i; ++k) t -= a[i * d + k] * b[k];
    b[i] = t / a[i * d + i];
  }
  for (std::size_t ii = d; ii-- > 0;) {
    double t = b[ii];
    for (std::size_t k = ii + 1; k < d; ++k) t -= a[k * d + ii] * b[k];
    b[ii] = t / a[ii * d + ii];
  }
  return true;
}

/// Exact ridge solve of every row of `target` against fixed `other`.
inline void solve_block(const std::vector<std::vector<std::pair<std::size_t, double>>>& lists, const Tensor& other,
                        Tensor& target, double lambda) {
  const std::size_t d = target.cols();
  std::vector<double> a(d * d);
  std::vector<double> b(d);
  for (std::size_t i = 0; i < lists.size(); ++i) {
    const auto& obs = lists[i];
    auto row = target.row(i);
    if (obs.empty()) {
      if (lambda > 0.0) std::fill(row.begin(), row.end(), 0.0);
      continue;
    }
    std::fill(a.begin(), a.end(), 0.0);
    std::fill(b.begin(), b.end(), 0.0);
    for (const auto& [j, v] : obs) {
      const auto q = other.row(j);
      for (std::size_t r = 0; r < d; ++r) {
        b[r] += v * q[r];
        for (std::size_t c = 0; c <= r; ++c) a[r * d + c] += q[r] * q[c];
      }
    }
    for (std::size_t r = 0; r < d; ++r) {
      a[r * d + r] += lambda;
      for (std::size_t c = 0; c < r; ++c) a[c * d + r] = a[r * d + c];
    }
    auto a_copy = a;
    auto b_copy = b;
    if (!cholesky_solve(a_copy, b_copy, d)) {
      // Rank-deficient with lambda = 0: the minimal-jitter ridge solution is still a minimizer to rounding.
      double trace = 0.0;
      for (std::size_t r = 0; r < d; ++r) trace += a[r * d + r];
      const double jitter = 1e-12 * (trace / static_cast<double>(d) + 1.0);
      for (std::size_t r = 0; r < d; ++r) a[r * d + r] += jitter;
      b_copy = b;
      if (!cholesky_solve(a, b_copy, d)) continue;
    }
    std::copy(b_copy.begin(), b_copy.end(), row.begin());
  }
}

}  // namespace detail

inline double als_objective(const SparseMatrix& m, const Tensor& P, const Tensor& Q, double lambda) {
  double loss = 0.0;
  for (const auto& e : m.entries) {
    const auto p = P.row(e.row);
    const auto q = Q.row(e.col);
    double dot = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) dot += p[k] * q[k];
    const double r = e.value - dot;
    loss += r * r;
  }
  return loss + lambda * (P.squared_norm() + Q.squared_norm());
}

inline double observed_rmse(const SparseMatrix& m, const Tensor& P, const Tensor& Q) {
  if (m.entries.empty()) return 0.0;
  return std::sqrt(als_objective(m, P, Q, 0.0) / static_cast<double>(m.entries.size()));
}

/// Initial factors, uniform in [-0.1, 0.1]: all of P row-major, then all of Q.
inline std::pair<Tensor, Tensor> als_initial_factors(std::size_t rows, std::size_t cols, std::size_t d,
                                                     std::uint64_t seed) {
  SplitMix64 rng(seed);
  Tensor P = Tensor::matrix(rows, d);
  Tensor Q = Tensor::matrix(cols, d);
  for (auto& v : P.values()) v = rng.uniform(-0.1, 0.1);
  for (auto& v : Q.values()) v = rng.uniform(-0.1, 0.1);
  return {std::move(P), std::move(Q)};
}

/// Alternating least squares on the observed cells with L2 regularization.
inline AlsResult factorize(const SparseMatrix& m, const AlsOptions& opt,
                           std::optional<std::pair<Tensor, Tensor>> init = std::nullopt) {
  if (m.entries.empty()) throw Error("factorize: matrix has no observed cells");
  if (opt.d < 1) throw Error("factorize: d must be at least 1");
  if (!(opt.lambda >= 0.0)) throw Error("factorize: lambda must be non-negative");
  AlsResult res;
  if (opt.d > std::min(m.rows, m.cols))
    res.warnings.push_back("embedding dimension exceeds min(rows, cols); factors are not identifiable");
  if (init) {
    res.P = std::move(init->first);
    res.Q = std::move(init->second);
    if (res.P.rows() != m.rows || res.Q.rows() != m.cols || res.P.cols() != opt.d || res.Q.cols() != opt.d)
      throw Error("factorize: initial factors have the wrong shape");
  } else {
    std::tie(res.P, res.Q) = als_initial_factors(m.rows, m.cols, opt.d, opt.seed);
  }

  std::vector<std::vector<std::pair<std::size_t, double>>> by_row(m.rows), by_col(m.cols);
  for (const auto& e : m.entries) {
    by_row[e.row].push_back({e.col, e.value});
    by_col[e.col].push_back({e.row, e.value});
  }

  res.objective.push_back(als_objective(m, res.P, res.Q, opt.lambda));
  for (std::size_t s = 0; s < opt.sweeps; ++s) {
    if (opt.rows_first) {
      detail::solve_block(by_row, res.Q, res.P, opt.lambda);
      detail::solve_block(by_col, res.P, res.Q, opt.lambda);
    } else {
      detail::solve_block(by_col, res.P, res.Q, opt.lambda);
      detail::solve_block(by_row, res.Q, res.P, opt.lambda);
    }
    res.objective.push_back(als_objective(m, res.P, res.Q, opt.lambda));
  }
  return res;
}

/// Mean of the observed neighbors' rows, or of every observed row when no neighbor is observed.
inline std::vector<double> cold_start_row(const Tensor& P, std::span<const SegmentId> neighbors,
                                          std::span<const char> observed) {
  const std::size_t d = P.cols();
  std::vector<double> out(d, 0.0);
  std::size_t n = 0;
  for (SegmentId s : neighbors) {
    if (!observed[static_cast<std::size_t>(s)]) continue;
    const auto r = P.row(static_cast<std::size_t>(s));
    for (std::size_t k = 0; k < d; ++k) out[k] += r[k];
    ++n;
  }
  if (n == 0) {
    for (std::size_t i = 0; i < P.rows(); ++i) {
      if (!observed[i]) continue;
      const auto r = P.row(i);
      for (std::size_t k = 0; k < d; ++k) out[k] += r[k];
      ++n;
    }
  }
  if (n > 0)
    for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

/// Replaces every unobserved row of P with its cold-start row. Neighbor rows
/// are read from the factorized table, never from rows filled in this pass.
inline void fill_cold_start_rows(Tensor& P, const RoadNetwork& net, std::span<const char> observed) {
  const Tensor source = P;
  for (std::size_t i = 0; i < P.rows(); ++i) {
    if (observed[i]) continue;
    const auto nb = net.neighbors(static_cast<SegmentId>(i));
    const auto row = cold_start_row(source, nb, observed);
    std::copy(row.begin(), row.end(), P.row(i).begin());
  }
}

inline void save_embeddings(const Tensor& P, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write embedding file " + path);
  out << "segment_id";
  for (std::size_t k = 0; k < P.cols(); ++k) out << ",e" << k;
  out << '\n';
  for (std::size_t i = 0; i < P.rows(); ++i) {
    out << i;
    for (double v : P.row(i)) out << ',' << format_double17(v);
    out << '\n';
  }
}

inline Tensor load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open embedding file " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("embedding file " + path + " is empty");
  const auto header = csv::split(line);
  if (header.size() < 2 || csv::trim(header[0]) != "segment_id")
    throw Error("embedding file " + path + ": bad header");
  const std::size_t d = header.size() - 1;
  for (std::size_t k = 0; k < d; ++k)
    if (csv::trim(header[k + 1]) != "e" + std::to_string(k)) throw Error("embedding file " + path + ": bad header");
  std::vector<double> data;
  std::size_t rows = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    const auto cols = csv::split(line);
    std::size_t id = 0;
    if (cols.size() != d + 1 || !parse_int(cols[0], id) || id != rows)
      throw Error("embedding file " + path + ": malformed row at line " + std::to_string(lineno));
    for (std::size_t k = 0; k < d; ++k) {
      double v = 0.0;
      if (!parse_double(cols[k + 1], v))
        throw Error("embedding file " + path + ": bad value at line " + std::to_string(lineno));
      data.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw Error("embedding file " + path + " has no rows");
  return Tensor({rows, d}, std::move(data));
}

}  // namespace ttf
