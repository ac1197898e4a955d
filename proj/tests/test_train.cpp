#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"

using namespace ttf;
using namespace testing_helpers;

namespace {

struct Fixture {
  SynthOutput world;
  WindowedDataset ds;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    SynthConfig cfg;
    cfg.grid_rows = 3;
    cfg.grid_cols = 3;
    cfg.n_vehicles = 6;
    cfg.hours = 48;
    Fixture out{generate(cfg), {}};
    std::ostringstream csv;
    write_trips(csv, out.world.trips);
    std::istringstream in(csv.str());
    const auto log = ingest_trips(out.world.network, in).log;
    out.ds = build_windows(log, fit_stats(log, 24), WindowIndex::covering(log));
    return out;
  }();
  return f;
}

TrainConfig small_train_config() {
  TrainConfig c;
  c.d = 8;
  c.h = 2;
  c.N = 1;
  c.L = 3;
  c.epochs = 2;
  return c;
}

TrafficTransformer small_model(const TrainConfig& c, std::uint64_t seed = 1) {
  return TrafficTransformer::create(c.model_config(24), seed);
}

/// The first k samples whose target window is not trivially z = 0.
std::vector<Sample> first_samples(const WindowedDataset& ds, std::size_t L, std::size_t k) {
  std::vector<Sample> out;
  for (const auto& s : make_samples(ds, L, 1)) {
    double e = 0.0;
    for (double z : ds.batches[s.t + 1].z_values) e += z * z;
    if (e > 1e-3 && out.size() < k) out.push_back(s);
  }
  return out;
}

/// The sample whose target and last input window carry the most signal.
std::vector<Sample> hardest_sample(const WindowedDataset& ds, std::size_t L) {
  const auto all = make_samples(ds, L, 1);
  auto energy = [&](std::size_t w) {
    double e = 0.0;
    for (double z : ds.batches[w].z_values) e += z * z;
    return e;
  };
  // Forecasts are linear in the input z-values, so the history needs signal too.
  auto score = [&](const Sample& s) { return std::min(energy(s.t + 1), energy(s.t)); };
  return {*std::max_element(all.begin(), all.end(),
                            [&](const Sample& a, const Sample& b) { return score(a) < score(b); })};
}

}  // namespace

TEST(Train, OverfitsSingleSample) {
  const auto& ds = fixture().ds;
  auto cfg = small_train_config();
  cfg.epochs = 500;
  cfg.lr = 1e-3;
  auto model = small_model(cfg, 2);
  const auto one = hardest_sample(ds, cfg.L);
  const double before = mean_loss(model, ds, one);
  ASSERT_GT(before, 0.5);
  const auto res = train_on_samples(model, ds, one, {}, cfg);
  ASSERT_EQ(res.curve.size(), 500u);
  EXPECT_LT(mean_loss(model, ds, one), 0.05);
  EXPECT_LT(res.curve.back().train_mse, res.curve.front().train_mse);
}

TEST(Train, ZeroEpochsLeaveModelUntouched) {
  const auto& ds = fixture().ds;
  auto cfg = small_train_config();
  cfg.epochs = 0;
  auto model = small_model(cfg);
  const auto before = serialize_checkpoint(model);
  const auto res = train(model, ds, cfg);
  EXPECT_TRUE(res.curve.empty());
  EXPECT_EQ(serialize_checkpoint(model), before);
}

TEST(Train, DeterministicLossCurve) {
  const auto& ds = fixture().ds;
  auto cfg = small_train_config();
  const auto samples = first_samples(ds, cfg.L, 12);
  auto run = [&] {
    auto model = small_model(cfg, 3);
    auto res = train_on_samples(model, ds, samples, {}, cfg);
    return std::pair{res, serialize_checkpoint(model)};
  };
  const auto [a, ma] = run();
  const auto [b, mb] = run();
  ASSERT_EQ(a.curve.size(), b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) EXPECT_EQ(a.curve[i].train_mse, b.curve[i].train_mse);
  EXPECT_EQ(ma, mb);
}

TEST(Train, GradientClipBoundsNorm) {
  const auto& ds = fixture().ds;
  auto cfg = small_train_config();
  cfg.grad_clip = 0.01;
  auto model = small_model(cfg, 4);
  const auto res = train_on_samples(model, ds, first_samples(ds, cfg.L, 8), {}, cfg);
  EXPECT_GT(res.max_grad_norm_after_clip, 0.0);
  EXPECT_LE(res.max_grad_norm_after_clip, 0.01 * (1 + 1e-12));
  for (const Param* p : model.params()) EXPECT_TRUE(p->value.all_finite());
}

TEST(Train, RejectsNoSamples) {
  const auto& ds = fixture().ds;
  auto cfg = small_train_config();
  auto model = small_model(cfg);
  EXPECT_THROW(train_on_samples(model, ds, {}, {}, cfg), Error);
}

TEST(Train, LossMatchesScalarLoop) {
  const auto& ds = fixture().ds;
  auto cfg = small_train_config();
  auto model = small_model(cfg, 5);
  for (const auto& s : first_samples(ds, cfg.L, 10)) {
    const auto& target = ds.batches[s.t + 1];
    const auto pred = predict(model, input_windows(ds, s.t, cfg.L), target.segment_ids);
    double ref = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) ref += (pred[k] - target.z_values[k]) * (pred[k] - target.z_values[k]);
    ref /= static_cast<double>(pred.size());
    Tape tape(false);
    EXPECT_NEAR(sample_loss(tape, model, ds, s.t).value()[0], ref, 1e-12);
  }
}

TEST(Train, EarlyStoppingRestoresBest) {
  const auto& ds = fixture().ds;
  auto cfg = small_train_config();
  cfg.epochs = 40;
  cfg.patience = 2;
  cfg.lr = 0.05;
  auto model = small_model(cfg, 6);
  const auto train_s = first_samples(ds, cfg.L, 20);
  auto all = make_samples(ds, cfg.L, 1);
  const std::vector<Sample> val(all.begin() + 100, all.begin() + 120);
  const auto res = train_on_samples(model, ds, train_s, val, cfg);
  ASSERT_TRUE(res.stopped_early);
  EXPECT_LT(res.curve.size(), 40u);
  ASSERT_GE(res.best_epoch, 1u);
  EXPECT_EQ(mean_loss(model, ds, val), *res.curve[res.best_epoch - 1].val_mse);
  for (const auto& e : res.curve) EXPECT_GE(*e.val_mse, *res.curve[res.best_epoch - 1].val_mse);
}

TEST(Train, ChronologicalSplit) {
  const auto& ds = fixture().ds;
  auto cfg = small_train_config();
  const auto split = cfg.window_split(ds.num_windows());
  const auto samples = make_samples(ds, cfg.L, 1);
  auto span_of = [&](WindowSplit::Part part) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& s : samples_in(samples, split, part)) {
      lo = std::min(lo, ds.window_time(s.t + 1));
      hi = std::max(hi, ds.window_time(s.t + 1));
    }
    return std::pair{lo, hi};
  };
  const auto tr = span_of(WindowSplit::Part::Train);
  const auto va = span_of(WindowSplit::Part::Validation);
  const auto te = span_of(WindowSplit::Part::Test);
  EXPECT_LT(tr.second, va.first);
  EXPECT_LT(va.second, te.first);
}

TEST(TrainConfigTest, JsonRoundTrip) {
  TrainConfig c;
  c.lr = 0.003;
  c.grad_clip.reset();
  c.split = {0.6, 0.2, 0.2};
  const auto back = TrainConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  EXPECT_EQ(back.lr, 0.003);
  EXPECT_FALSE(back.grad_clip);
  EXPECT_EQ(back.split.validation, 0.2);
  EXPECT_EQ(back.to_json().dump(), c.to_json().dump());
  EXPECT_EQ(TrainConfig::from_json(nlohmann::json::object()).epochs, 100u);
  EXPECT_THROW(TrainConfig::from_json({{"learning_rate", 0.1}}), Error);
  EXPECT_THROW(TrainConfig::from_json({{"split", {{"train", 0.9}}}}), Error);
  EXPECT_THROW(TrainConfig::from_json({{"lr", "fast"}}), Error);
}

TEST(LossCurve, CsvFormat) {
  std::ostringstream out;
  write_loss_curve({{1, 0.5, 0.25}, {2, 0.125, std::nullopt}}, out);
  EXPECT_EQ(out.str(), "epoch,train_mse,val_mse\n1,0.5,0.25\n2,0.125,\n");
}

TEST(Baselines, HourlyMeanIsZero) {
  const auto z = baseline_hourly_mean(fixture().ds, 20, 3);
  EXPECT_EQ(z.shape(), (std::vector<std::size_t>{3, 24}));
  for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(Baselines, LastObservation) {
  WindowedDataset ds;
  ds.stats.segments.resize(3);
  ds.index.count = 4;
  ds.batches = {{0, {0}, {0.5}}, {1, {0}, {1.3}}, {2, {}, {}}, {3, {1}, {-2.0}}};
  const auto z = baseline_last_observation(ds, 2, 2);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_EQ(z(h, 0), 1.3);
    EXPECT_EQ(z(h, 1), 0.0);  // observed only after t
    EXPECT_EQ(z(h, 2), 0.0);
  }
}

TEST(Evaluate, ZeroedModelMatchesHourlyMean) {
  const auto& ds = fixture().ds;
  auto cfg = small_train_config();
  auto model = small_model(cfg);
  model.zero_update_paths();
  const auto rep = evaluate(model, ds, cfg.window_split(ds.num_windows()), 3);
  const auto& m = rep.find("model");
  const auto& b = rep.find("hourly_mean");
  EXPECT_EQ(m.mae, b.mae);
  EXPECT_EQ(m.rmse, b.rmse);
  EXPECT_EQ(m.mape, b.mape);
  EXPECT_EQ(m.count, b.count);
  EXPECT_GT(m.count[0], 0u);
  EXPECT_THROW(rep.find("nope"), Error);
}

TEST(Evaluate, PerfectPredictionsScoreZero) {
  const auto& f = fixture();
  const auto& ds = f.ds;
  const Tensor truth = truth_seconds(f.world.truth, ds.index);
  Predictor observed = [](const WindowedDataset& d, std::size_t t, std::size_t H) {
    Tensor z = Tensor::matrix(H, d.num_segments());
    for (std::size_t h = 0; h < H; ++h) {
      const auto& b = d.batches[t + 1 + h];
      for (std::size_t k = 0; k < b.size(); ++k) z(h, static_cast<std::size_t>(b.segment_ids[k])) = b.z_values[k];
    }
    return z;
  };
  Predictor dense = [&](const WindowedDataset& d, std::size_t t, std::size_t H) {
    return oracle_matrix(f.world.truth, d.stats, d.index, t, H);
  };
  EvalOptions opt;
  opt.H = 2;
  opt.L = 3;
  opt.oracle_seconds = &truth;
  const auto rep = evaluate_predictors(ds, WindowSplit::from_fractions(ds.num_windows(), 0.7, 0.15, 0.15),
                                       {{"observed", observed}, {"dense", dense}}, opt);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_EQ(rep.find("observed").mae[h], 0.0);
    EXPECT_EQ(rep.find("observed").rmse[h], 0.0);
    EXPECT_EQ(rep.find("observed").z_mse[h], 0.0);
    EXPECT_LT(rep.find("dense", true).mae[h], 1e-9);
    EXPECT_LT(rep.find("dense", true).mape[h], 1e-9);
    EXPECT_EQ(rep.find("dense", true).count[h], rep.positions * 24);
  }
  const auto j = rep.to_json();
  EXPECT_TRUE(j.contains("oracle"));
  EXPECT_EQ(j["observed"]["observed"]["mae"].size(), 2u);
}

TEST(Evaluate, EmptySplitRejected) {
  const auto& ds = fixture().ds;
  auto cfg = small_train_config();
  auto model = small_model(cfg);
  EXPECT_THROW(evaluate(model, ds, WindowSplit::from_fractions(ds.num_windows(), 1.0, 0.0, 0.0), 1), Error);
}
