#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ttf/autodiff.hpp"
#include "ttf/common.hpp"

namespace ttf {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update with bias correction; `step` counts from 1.
inline void adam_step(std::span<Param* const> params, const AdamOptions& opt, std::size_t step) {
  if (step < 1) throw Error("adam_step: step counts from 1");
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  for (Param* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      p->m[i] = opt.beta1 * p->m[i] + (1.0 - opt.beta1) * g;
      p->v[i] = opt.beta2 * p->v[i] + (1.0 - opt.beta2) * g * g;
      const double mhat = p->m[i] / c1;
      const double vhat = p->v[i] / c2;
      p->value[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
    Tape::check_finite(p->value, "adam_step");
  }
}

inline double grad_norm(std::span<Param* const> params) {
  double s = 0.0;
  for (const Param* p : params) s += p->grad.squared_norm();
  return std::sqrt(s);
}

/// Rescales all gradients so their global L2 norm is at most max_norm. Returns the norm before clipping.
inline double clip_grad_norm(std::span<Param* const> params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (Param* p : params)
      for (auto& g : p->grad.values()) g *= f;
  }
  return norm;
}

inline void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) p->zero_grad();
}

struct GradcheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double tolerance = 1e-4;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
  }

  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_error);
    return w;
  }
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t samples_per_tensor = 25;
  std::uint64_t seed = 7;
};

/// Compares backward() against central differences. `loss_fn` must build the
/// loss on the tape it is given and be deterministic.
inline GradcheckReport gradcheck(const std::function<Var(Tape&)>& loss_fn, std::span<Param* const> params,
                                 const GradcheckOptions& opt = {}) {
  zero_grads(params);
  {
    Tape tape(true);
    tape.backward(loss_fn(tape));
  }
  auto eval = [&] {
    Tape tape(false);
    return loss_fn(tape).value()[0];
  };

  GradcheckReport report;
  report.tolerance = opt.tolerance;
  SplitMix64 rng(opt.seed);
  for (Param* p : params) {
    GradcheckEntry entry;
    entry.name = p->name;
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opt.samples_per_tensor) {
      // Partial Fisher-Yates: the first k entries become a uniform sample.
      for (std::size_t i = 0; i < opt.samples_per_tensor; ++i)
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      coords.resize(opt.samples_per_tensor);
    }
    for (std::size_t c : coords) {
      const double original = p->value[c];
      p->value[c] = original + opt.step;
      const double up = eval();
      p->value[c] = original - opt.step;
      const double down = eval();
      p->value[c] = original;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double analytic = p->grad[c];
      const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
      ++entry.checked;
    }
    entry.passed = entry.max_rel_error < opt.tolerance;
    report.entries.push_back(entry);
  }
  zero_grads(params);
  return report;
}

}  // namespace ttf
