#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ttf/common.hpp"
#include "ttf/tensor.hpp"

namespace ttf {

/// A trainable tensor with its gradient and Adam moments.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;

  Param() = default;
  Param(std::string n, Tensor init)
      : name(std::move(n)), value(std::move(init)), grad(value.shape()), m(value.shape()), v(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitive operations in creation order, which is a topological
/// order, so backward is one reverse sweep visiting every node once.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  /// With `record` false no backward closures are kept (inference).
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value) {
    check_finite(value, "constant");
    nodes_.push_back(Node{std::move(value), {}, false, nullptr, nullptr});
    return {this, nodes_.size() - 1};
  }

  /// Leaf bound to a parameter; repeated calls on one tape return the same node.
  Var param(Param& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    nodes_.push_back(Node{p.value, {}, record_, nullptr, &p});
    param_nodes_[&p] = nodes_.size() - 1;
    return {this, nodes_.size() - 1};
  }

  /// Appends an op result. `backward` reads grad(self) and accumulates into its inputs.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward, const char* op) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward), op);
  }

  Var record(Tensor value, std::span<const Var> inputs, Backward backward, const char* op) {
    check_finite(value, op);
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
    needs = needs && record_;
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}, nullptr});
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() != 0; }

  /// Accumulates d(loss)/d(param) into every parameter reached from `loss`.
  void backward(Var loss) {
    if (!record_) throw Error("backward called on a non-recording tape");
    if (loss.tape() != this) throw Error("loss belongs to a different tape");
    if (value(loss.id()).size() != 1) throw Error("backward: loss must be a scalar");
    for (auto& n : nodes_) n.grad = Tensor();
    grad(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || !has_grad(i)) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        auto& pg = n.param->grad;
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      }
    }
  }

  static void check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
    Param* param = nullptr;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw Error(std::string(op) + ": " + what);
}

inline void require_same_tape(const Var& a, const Var& b, const char* op) {
  require(a.tape() == b.tape() && a.tape() != nullptr, op, "operands live on different tapes");
}

/// c (m x n) += a (m x k) * b (k x n)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

/// c (m x n) += s * a (m x k) * b^T, b is (n x k)
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
                    double s = 1.0) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += s * acc;
    }
  }
}

/// c (k x n) += s * a^T * b, a is (m x k), b is (m x n)
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
                    double s = 1.0) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double v = s * ai[p];
      if (v == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += v * bi[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives. All take and return 2-D values.

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b, "matmul");
  const auto& A = a.value();
  const auto& B = b.value();
  detail::require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows(), "matmul",
                  "shape mismatch " + A.shape_string() + " * " + B.shape_string());
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C = Tensor::matrix(m, n);
  detail::gemm_nn(A.data(), B.data(), C.data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(C), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) detail::gemm_nt(g.data(), t.value(ib).data(), t.grad(ia).data(), m, n, k);
    if (t.requires_grad(ib)) detail::gemm_tn(t.value(ia).data(), g.data(), t.grad(ib).data(), m, k, n);
  }, "matmul");
}

/// scale * a * b^T
inline Var matmul_nt(Var a, Var b, double scale = 1.0) {
  detail::require_same_tape(a, b, "matmul_nt");
  const auto& A = a.value();
  const auto& B = b.value();
  detail::require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.cols(), "matmul_nt",
                  "shape mismatch " + A.shape_string() + " * " + B.shape_string() + "^T");
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor C = Tensor::matrix(m, n);
  detail::gemm_nt(A.data(), B.data(), C.data(), m, k, n, scale);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(C), {a, b}, [ia, ib, m, k, n, scale](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    // dA = s g B ; dB = s g^T A
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      const double* bv = t.value(ib).data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = scale * g[i * n + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv[j * k + p];
        }
    }
    if (t.requires_grad(ib)) detail::gemm_tn(g.data(), t.value(ia).data(), t.grad(ib).data(), m, n, k, scale);
  }, "matmul_nt");
}

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b, "add");
  detail::require(a.value().same_shape(b.value()), "add",
                  "shape mismatch " + a.value().shape_string() + " + " + b.value().shape_string());
  Tensor C = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(C), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      Tensor& gi = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  }, "add");
}

/// a (m x n) + bias (1 x n) broadcast over rows.
inline Var add_row(Var a, Var bias) {
  detail::require_same_tape(a, bias, "add_row");
  const auto& A = a.value();
  const auto& B = bias.value();
  detail::require(A.rank() == 2 && B.rank() == 2 && B.rows() == 1 && B.cols() == A.cols(), "add_row",
                  "bias must be 1 x " + std::to_string(A.cols()));
  const std::size_t m = A.rows(), n = A.cols();
  Tensor C = A;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) C[i * n + j] += B[j];
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape()->record(std::move(C), {a, bias}, [ia, ib, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  }, "add_row");
}

inline Var scale(Var a, double s) {
  Tensor C = a.value();
  for (auto& v : C.values()) v *= s;
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(C), {a}, [ia, s](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  }, "scale");
}

inline Var concat_cols(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(parts.front(), p, "concat_cols");
    detail::require(p.value().rank() == 2 && p.rows() == m, "concat_cols", "row counts differ");
    total += p.cols();
  }
  Tensor C = Tensor::matrix(m, total);
  std::vector<std::size_t> ids, widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& P = p.value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < P.cols(); ++j) C[i * total + off + j] = P[i * P.cols() + j];
    off += P.cols();
    ids.push_back(p.id());
    widths.push_back(P.cols());
  }
  Tape* tape = parts.front().tape();
  return tape->record(std::move(C), std::span<const Var>(parts), [ids, widths, m, total](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t o = 0;
    for (std::size_t q = 0; q < ids.size(); ++q) {
      if (t.requires_grad(ids[q])) {
        Tensor& gq = t.grad(ids[q]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[q]; ++j) gq[i * widths[q] + j] += g[i * total + o + j];
      }
      o += widths[q];
    }
  }, "concat_cols");
}

/// Row-wise softmax over columns whose mask entry is non-zero. Masked
/// columns get exactly zero weight.
inline Var row_softmax_masked(Var logits, std::span<const char> mask) {
  const auto& X = logits.value();
  detail::require(X.rank() == 2 && mask.size() == X.cols(), "row_softmax_masked",
                  "mask length must equal the number of columns");
  const bool any = std::any_of(mask.begin(), mask.end(), [](char c) { return c != 0; });
  detail::require(any || X.rows() == 0, "row_softmax_masked", "every column of a consumed row is masked");
  const std::size_t m = X.rows(), n = X.cols();
  Tensor Y = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (mask[j]) mx = std::max(mx, X[i * n + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[j]) continue;
      const double e = std::exp(X[i * n + j] - mx);
      Y[i * n + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < n; ++j) Y[i * n + j] /= sum;
  }
  const std::size_t ix = logits.id();
  return logits.tape()->record(std::move(Y), {logits}, [ix, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  }, "row_softmax_masked");
}

/// Per-row normalization over the feature axis, then gain * xhat + bias.
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-6) {
  detail::require_same_tape(x, gain, "layer_norm");
  detail::require_same_tape(x, bias, "layer_norm");
  const auto& X = x.value();
  const auto& G = gain.value();
  const auto& B = bias.value();
  const std::size_t m = X.rows(), n = X.cols();
  detail::require(X.rank() == 2 && G.size() == n && B.size() == n, "layer_norm", "gain and bias must have one entry per column");
  Tensor Y = Tensor::matrix(m, n);
  Tensor xhat = Tensor::matrix(m, n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += X[i * n + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = X[i * n + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (X[i * n + j] - mean) * inv_std[i];
      xhat[i * n + j] = h;
      Y[i * n + j] = G[j] * h + B[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape()->record(std::move(Y), {x, gain, bias},
                          [ix, ig, ib, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& G = t.value(ig);
    if (t.requires_grad(ig)) {
      Tensor& gg = t.grad(ig);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
    if (t.requires_grad(ix)) {
      Tensor& gx = t.grad(ix);
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < m; ++i) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double dh = g[i * n + j] * G[j];
          s1 += dh;
          s2 += dh * xhat[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const double dh = g[i * n + j] * G[j];
          gx[i * n + j] += inv_std[i] * (dh - inv_n * s1 - xhat[i * n + j] * inv_n * s2);
        }
      }
    }
  }, "layer_norm");
}

inline Var relu(Var a) {
  Tensor C = a.value();
  for (auto& v : C.values()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(C), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  }, "relu");
}

/// Selected rows of a table, in the given order (embedding lookup).
inline Var gather_rows(Var table, std::span<const SegmentId> ids) {
  const auto& T = table.value();
  const std::size_t n = T.cols();
  Tensor C = Tensor::matrix(ids.size(), n);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    detail::require(ids[r] >= 0 && static_cast<std::size_t>(ids[r]) < T.rows(), "gather_rows",
                    "row id " + std::to_string(ids[r]) + " out of range");
    std::copy_n(T.data() + static_cast<std::size_t>(ids[r]) * n, n, C.data() + r * n);
  }
  const std::size_t it = table.id();
  std::vector<SegmentId> idv(ids.begin(), ids.end());
  return table.tape()->record(std::move(C), {table}, [it, idv = std::move(idv), n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gt = t.grad(it);
    for (std::size_t r = 0; r < idv.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) gt[static_cast<std::size_t>(idv[r]) * n + j] += g[r * n + j];
  }, "gather_rows");
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape()->record(Tensor({1, 1}, s), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  }, "sum");
}

/// Mean of (pred - target)^2 over entries with a non-zero mask; 1 x 1.
inline Var mse_masked(Var pred, const Tensor& target, std::span<const char> mask) {
  const auto& P = pred.value();
  detail::require(P.size() == target.size() && mask.size() == P.size(), "mse_masked", "size mismatch");
  std::size_t count = 0;
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (!mask[i]) continue;
    const double e = P[i] - target[i];
    s += e * e;
    ++count;
  }
  detail::require(count > 0, "mse_masked", "no unmasked entries");
  const std::size_t ip = pred.id();
  std::vector<double> tv = target.values();
  std::vector<char> mv(mask.begin(), mask.end());
  return pred.tape()->record(Tensor({1, 1}, s / static_cast<double>(count)), {pred},
                             [ip, tv = std::move(tv), mv = std::move(mv), count](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const Tensor& p = t.value(ip);
    Tensor& gp = t.grad(ip);
    const double c = 2.0 * g / static_cast<double>(count);
    for (std::size_t i = 0; i < gp.size(); ++i)
      if (mv[i]) gp[i] += c * (p[i] - tv[i]);
  }, "mse_masked");
}

}  // namespace ttf
