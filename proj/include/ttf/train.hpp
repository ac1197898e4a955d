#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttf/autodiff.hpp"
#include "ttf/common.hpp"
#include "ttf/model.hpp"
#include "ttf/optim.hpp"
#include "ttf/prep.hpp"

namespace ttf {

struct SplitFractions {
  double train = 0.70;
  double validation = 0.15;
  double test = 0.15;
};

struct MfSettings {
  double lambda = 0.1;
  std::size_t sweeps = 25;
};

struct TrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 100;
  std::uint64_t seed = 7;
  std::size_t L = 8;
  std::size_t H = 1;
  std::size_t d = 16;
  std::size_t h = 4;
  std::size_t N = 2;
  std::size_t d_ff = 0;
  MfSettings mf;
  double sigma_floor = 1.0;
  std::optional<double> grad_clip = 5.0;
  SplitFractions split;
  std::size_t patience = 10;  ///< 0 disables early stopping

  ModelConfig model_config(std::size_t num_segments) const {
    ModelConfig c;
    c.d = d;
    c.h = h;
    c.N = N;
    c.L = L;
    c.d_ff = d_ff;
    c.num_segments = num_segments;
    return c;
  }

  WindowSplit window_split(std::size_t windows) const {
    return WindowSplit::from_fractions(windows, split.train, split.validation, split.test);
  }

  void validate() const {
    if (!(lr > 0.0)) throw Error("train config: lr must be positive");
    if (L < 1 || H < 1) throw Error("train config: L and H must be at least 1");
    if (grad_clip && !(*grad_clip > 0.0)) throw Error("train config: grad_clip must be positive");
    if (!(sigma_floor > 0.0)) throw Error("train config: sigma_floor must be positive");
    WindowSplit::from_fractions(1, split.train, split.validation, split.test);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["lr"] = lr;
    j["epochs"] = epochs;
    j["seed"] = seed;
    j["L"] = L;
    j["H"] = H;
    j["d"] = d;
    j["h"] = h;
    j["N"] = N;
    j["d_ff"] = d_ff;
    j["mf"] = {{"lambda", mf.lambda}, {"sweeps", mf.sweeps}};
    j["sigma_floor"] = sigma_floor;
    j["grad_clip"] = grad_clip ? nlohmann::ordered_json(*grad_clip) : nlohmann::ordered_json(nullptr);
    j["split"] = {{"train", split.train}, {"validation", split.validation}, {"test", split.test}};
    j["patience"] = patience;
    return j;
  }

  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known{"lr", "epochs", "seed", "L", "H", "d", "h", "N", "d_ff",
                                                "mf", "sigma_floor", "grad_clip", "split", "patience"};
    if (!j.is_object()) throw Error("train config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
      if (std::find(known.begin(), known.end(), it.key()) == known.end())
        throw Error("train config: unknown key '" + it.key() + "'");
    TrainConfig c;
    try {
      c.lr = j.value("lr", c.lr);
      c.epochs = j.value("epochs", c.epochs);
      c.seed = j.value("seed", c.seed);
      c.L = j.value("L", c.L);
      c.H = j.value("H", c.H);
      c.d = j.value("d", c.d);
      c.h = j.value("h", c.h);
      c.N = j.value("N", c.N);
      c.d_ff = j.value("d_ff", c.d_ff);
      if (j.contains("mf")) {
        c.mf.lambda = j["mf"].value("lambda", c.mf.lambda);
        c.mf.sweeps = j["mf"].value("sweeps", c.mf.sweeps);
      }
      c.sigma_floor = j.value("sigma_floor", c.sigma_floor);
      if (j.contains("grad_clip")) {
        if (j["grad_clip"].is_null())
          c.grad_clip.reset();
        else
          c.grad_clip = j["grad_clip"].get<double>();
      }
      if (j.contains("split")) {
        c.split.train = j["split"].value("train", c.split.train);
        c.split.validation = j["split"].value("validation", c.split.validation);
        c.split.test = j["split"].value("test", c.split.test);
      }
      c.patience = j.value("patience", c.patience);
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("malformed train config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open train config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed train config " + path + ": " + e.what());
  }
  return TrainConfig::from_json(j);
}

/// Input windows t-L+1..t (oldest first). Positions before window 0 do not exist in a sample.
inline std::span<const WindowBatch> input_windows(const WindowedDataset& ds, std::size_t t, std::size_t L) {
  if (t + 1 < L || t >= ds.num_windows()) throw Error("input_windows: position out of range");
  return std::span<const WindowBatch>(ds.batches).subspan(t + 1 - L, L);
}

/// Masked z-space MSE of the forecast for window t+1 against its observed segments.
inline Var sample_loss(Tape& tape, TrafficTransformer& model, const WindowedDataset& ds, std::size_t t) {
  const auto& target = ds.batches.at(t + 1);
  if (target.empty()) throw Error("sample_loss: target window is empty");
  auto state = recurrent_forward(tape, model, input_windows(ds, t, model.config.L));
  Var pred = forecast(tape, model, state, target.segment_ids);
  const std::vector<char> mask(target.size(), 1);
  return mse_masked(pred, Tensor::column(target.z_values), mask);
}

struct EpochLoss {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  std::optional<double> val_mse;
};

struct TrainResult {
  std::vector<EpochLoss> curve;
  std::size_t best_epoch = 0;  ///< 0 when no epoch ran or validation is empty
  bool stopped_early = false;
  double max_grad_norm_after_clip = 0.0;
};

using EpochCallback = std::function<void(const EpochLoss&)>;

inline double mean_loss(TrafficTransformer& model, const WindowedDataset& ds, std::span<const Sample> samples) {
  double s = 0.0;
  for (const auto& smp : samples) {
    Tape tape(false);
    s += sample_loss(tape, model, ds, smp.t).value()[0];
  }
  return s / static_cast<double>(samples.size());
}

/// Adam on one sample per step, shuffled each epoch. With validation samples,
/// stops after `patience` epochs without improvement and restores the best parameters.
inline TrainResult train_on_samples(TrafficTransformer& model, const WindowedDataset& ds,
                                    std::vector<Sample> train_samples, const std::vector<Sample>& val_samples,
                                    const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (train_samples.empty()) throw Error("train: no trainable samples");
  auto params = model.params();
  TrainResult res;
  SplitMix64 rng(cfg.seed ^ 0x7261696eULL);
  AdamOptions adam;
  adam.lr = cfg.lr;
  std::size_t step = 0;
  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_values;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = train_samples.size(); i > 1; --i) std::swap(train_samples[i - 1], train_samples[rng.below(i)]);
    double total = 0.0;
    for (const auto& smp : train_samples) {
      zero_grads(params);
      Tape tape(true);
      Var loss = sample_loss(tape, model, ds, smp.t);
      total += loss.value()[0];
      tape.backward(loss);
      if (cfg.grad_clip) {
        clip_grad_norm(params, *cfg.grad_clip);
        res.max_grad_norm_after_clip = std::max(res.max_grad_norm_after_clip, grad_norm(params));
      }
      adam_step(params, adam, ++step);
    }
    EpochLoss e;
    e.epoch = epoch;
    e.train_mse = total / static_cast<double>(train_samples.size());
    if (!val_samples.empty()) e.val_mse = mean_loss(model, ds, val_samples);
    res.curve.push_back(e);
    if (on_epoch) on_epoch(e);

    if (e.val_mse) {
      if (*e.val_mse < best) {
        best = *e.val_mse;
        res.best_epoch = epoch;
        since_best = 0;
        best_values.clear();
        for (const Param* p : params) best_values.push_back(p->value);
      } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
        res.stopped_early = true;
        break;
      }
    }
  }
  if (!best_values.empty())
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  zero_grads(params);
  return res;
}

/// Trains on the chronological training part, early-stopping on the validation part.
inline TrainResult train(TrafficTransformer& model, const WindowedDataset& ds, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const auto split = cfg.window_split(ds.num_windows());
  const auto samples = make_samples(ds, model.config.L, 1);
  return train_on_samples(model, ds, samples_in(samples, split, WindowSplit::Part::Train),
                          samples_in(samples, split, WindowSplit::Part::Validation), cfg, on_epoch);
}

inline void write_loss_curve(const std::vector<EpochLoss>& curve, std::ostream& out) {
  out << "epoch,train_mse,val_mse\n";
  for (const auto& e : curve)
    out << e.epoch << ',' << format_double17(e.train_mse) << ',' << (e.val_mse ? format_double17(*e.val_mse) : "")
        << '\n';
}

inline void save_loss_curve(const std::vector<EpochLoss>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write loss curve " + path);
  write_loss_curve(curve, out);
}

// ---------------------------------------------------------------------------
// Evaluation

/// H x |E| z-space forecast for windows t+1..t+H.
using Predictor = std::function<Tensor(const WindowedDataset&, std::size_t t, std::size_t H)>;

inline Predictor model_predictor(TrafficTransformer& model) {
  return [&model](const WindowedDataset& ds, std::size_t t, std::size_t H) {
    return rollout(model, input_windows(ds, t, model.config.L), H);
  };
}

inline Tensor baseline_hourly_mean(const WindowedDataset& ds, std::size_t, std::size_t H) {
  return Tensor::matrix(H, ds.num_segments());
}

/// Most recent observed z-value at or before window t, repeated for every horizon; 0 if never observed.
inline Tensor baseline_last_observation(const WindowedDataset& ds, std::size_t t, std::size_t H) {
  const std::size_t n = ds.num_segments();
  std::vector<double> last(n, 0.0);
  std::vector<char> seen(n, 0);
  std::size_t remaining = n;
  for (std::size_t w = std::min(t + 1, ds.num_windows()); w-- > 0 && remaining > 0;) {
    const auto& b = ds.batches[w];
    for (std::size_t k = 0; k < b.size(); ++k) {
      const auto s = static_cast<std::size_t>(b.segment_ids[k]);
      if (seen[s]) continue;
      seen[s] = 1;
      last[s] = b.z_values[k];
      --remaining;
    }
  }
  Tensor out = Tensor::matrix(H, n);
  for (std::size_t h = 0; h < H; ++h) std::copy(last.begin(), last.end(), out.row(h).begin());
  return out;
}

struct HorizonMetrics {
  std::vector<double> mae, rmse, mape, z_mse;
  std::vector<std::size_t> count;

  nlohmann::ordered_json to_json() const {
    return {{"mae", mae}, {"rmse", rmse}, {"mape", mape}, {"z_mse", z_mse}, {"count", count}};
  }
};

struct NamedMetrics {
  std::string name;
  HorizonMetrics metrics;
};

struct EvalReport {
  std::size_t horizon = 1;
  std::size_t positions = 0;
  std::vector<NamedMetrics> observed;  ///< model first, then baselines; truth = observed M cells
  std::vector<NamedMetrics> oracle;    ///< same predictors against dense true travel times, if supplied

  const HorizonMetrics& find(const std::string& name, bool use_oracle = false) const {
    for (const auto& m : use_oracle ? oracle : observed)
      if (m.name == name) return m.metrics;
    throw Error("evaluation report has no entry '" + name + "'");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["horizon"] = horizon;
    j["positions"] = positions;
    auto section = [](const std::vector<NamedMetrics>& rows) {
      nlohmann::ordered_json s = nlohmann::ordered_json::object();
      for (const auto& r : rows) s[r.name] = r.metrics.to_json();
      return s;
    };
    j["observed"] = section(observed);
    if (!oracle.empty()) j["oracle"] = section(oracle);
    return j;
  }
};

namespace detail {

struct Accumulator {
  std::vector<double> abs, sq, pct, zsq;
  std::vector<std::size_t> n;

  explicit Accumulator(std::size_t H) : abs(H), sq(H), pct(H), zsq(H), n(H) {}

  void add(std::size_t h, double pred_s, double true_s, double pred_z, double true_z) {
    const double e = pred_s - true_s;
    abs[h] += std::abs(e);
    sq[h] += e * e;
    pct[h] += 100.0 * std::abs(e) / true_s;
    zsq[h] += (pred_z - true_z) * (pred_z - true_z);
    n[h] += 1;
  }

  HorizonMetrics finish() const {
    HorizonMetrics m;
    for (std::size_t h = 0; h < n.size(); ++h) {
      const double c = n[h] ? static_cast<double>(n[h]) : std::numeric_limits<double>::quiet_NaN();
      m.mae.push_back(abs[h] / c);
      m.rmse.push_back(std::sqrt(sq[h] / c));
      m.mape.push_back(pct[h] / c);
      m.z_mse.push_back(zsq[h] / c);
      m.count.push_back(n[h]);
    }
    return m;
  }
};

}  // namespace detail

struct EvalOptions {
  std::size_t H = 1;
  WindowSplit::Part part = WindowSplit::Part::Test;
  std::size_t L = 8;  ///< positions start at window L-1
  /// Optional dense true travel times in seconds, windows x |E|.
  const Tensor* oracle_seconds = nullptr;
};

/// Forecast positions whose first target window lies in the requested part and
/// whose H target windows all exist. Empty first targets are kept out.
inline std::vector<Sample> evaluation_positions(const WindowedDataset& ds, const WindowSplit& split,
                                                const EvalOptions& opt) {
  auto pos = samples_in(make_samples(ds, opt.L, opt.H), split, opt.part);
  if (pos.empty()) throw Error("evaluate: the selected split has no forecast positions");
  return pos;
}

/// Every predictor is scored on the same positions. Errors in seconds use
/// destandardization at each target window's start time.
inline EvalReport evaluate_predictors(const WindowedDataset& ds, const WindowSplit& split,
                                      const std::vector<std::pair<std::string, Predictor>>& predictors,
                                      const EvalOptions& opt) {
  const auto positions = evaluation_positions(ds, split, opt);
  EvalReport rep;
  rep.horizon = opt.H;
  rep.positions = positions.size();
  const std::size_t n = ds.num_segments();
  if (opt.oracle_seconds && (opt.oracle_seconds->rows() < ds.num_windows() || opt.oracle_seconds->cols() != n))
    throw Error("evaluate: ground-truth matrix does not cover the dataset");
  for (const auto& [name, predict] : predictors) {
    detail::Accumulator obs(opt.H), orc(opt.H);
    for (const auto& p : positions) {
      const Tensor z = predict(ds, p.t, opt.H);
      if (z.rows() != opt.H || z.cols() != n) throw Error("evaluate: predictor '" + name + "' returned a bad shape");
      for (std::size_t h = 0; h < opt.H; ++h) {
        const std::size_t w = p.t + 1 + h;
        const double tau = ds.window_time(w);
        const auto& b = ds.batches[w];
        for (std::size_t k = 0; k < b.size(); ++k) {
          const SegmentId s = b.segment_ids[k];
          const double pz = z(h, static_cast<std::size_t>(s));
          obs.add(h, ds.stats.destandardize(s, pz, tau), ds.stats.destandardize(s, b.z_values[k], tau), pz,
                  b.z_values[k]);
        }
        if (opt.oracle_seconds) {
          for (std::size_t s = 0; s < n; ++s) {
            const auto id = static_cast<SegmentId>(s);
            const double truth = (*opt.oracle_seconds)(w, s);
            const double pz = z(h, s);
            orc.add(h, ds.stats.destandardize(id, pz, tau), truth, pz, ds.stats.standardize(id, truth, tau));
          }
        }
      }
    }
    rep.observed.push_back({name, obs.finish()});
    if (opt.oracle_seconds) rep.oracle.push_back({name, orc.finish()});
  }
  return rep;
}

/// The model plus both baselines.
inline EvalReport evaluate(TrafficTransformer& model, const WindowedDataset& ds, const WindowSplit& split,
                           std::size_t H, const Tensor* oracle_seconds = nullptr) {
  EvalOptions opt;
  opt.H = H;
  opt.L = model.config.L;
  opt.oracle_seconds = oracle_seconds;
  return evaluate_predictors(ds, split,
                             {{"model", model_predictor(model)},
                              {"hourly_mean", baseline_hourly_mean},
                              {"last_observation", baseline_last_observation}},
                             opt);
}

}  // namespace ttf
