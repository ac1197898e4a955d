#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ttf/ttf.hpp"

namespace fs = std::filesystem;
using namespace ttf;

namespace {

void write_json(const nlohmann::ordered_json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(1) << '\n';
}

ReportLog read_reports(const std::string& path) {
  auto res = load_reports(path);
  for (const auto& d : res.diagnostics) std::cerr << path << ':' << d.line << ": " << d.message << '\n';
  if (!res.diagnostics.empty()) throw Error(path + ": " + std::to_string(res.diagnostics.size()) + " malformed row(s)");
  if (res.log.empty()) throw Error(path + ": no reports");
  return res.log;
}

void check_segments(const ReportLog& log, std::size_t n, const std::string& what) {
  for (const auto& r : log.reports)
    if (static_cast<std::size_t>(r.segment_id) >= n)
      throw Error("report for segment " + std::to_string(r.segment_id) + " is outside " + what);
}

/// Window index anchored like WindowIndex::covering, extended to hold at least `min_count` windows.
WindowIndex index_for(const ReportLog& log, std::size_t min_count = 0) {
  auto idx = WindowIndex::covering(log);
  idx.count = std::max(idx.count, min_count);
  return idx;
}

std::vector<SegmentId> parse_path(const std::string& text) {
  std::vector<SegmentId> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    SegmentId s = 0;
    if (!parse_int(item, s)) throw Error("bad segment id '" + item + "' in --path");
    out.push_back(s);
  }
  if (out.empty()) throw Error("--path is empty");
  return out;
}

TrafficTransformer load_model_for(const std::string& path, const SegmentStats& stats) {
  auto model = load_checkpoint(path);
  if (model.config.num_segments != stats.size())
    throw Error("checkpoint expects " + std::to_string(model.config.num_segments) + " segments but stats have " +
                std::to_string(stats.size()));
  return model;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse traffic travel-time forecasting pipeline"};
  app.require_subcommand(1);

  std::string config, out, network, trips, reports, stats_path, embeddings, model_path, curve, groundtruth, path_text;
  std::string summary;
  std::uint64_t seed = 7;
  double radius_m = 30.0, sigma_floor = 1.0, hour_offset_s = 0.0, fit_fraction = 1.0, lambda = 0.1;
  double at = 0.0, depart = 0.0, test_fraction = 0.15;
  std::size_t d = 16, sweeps = 25, horizon = 1;

  auto* synth = app.add_subcommand("synth", "generate a synthetic world");
  synth->add_option("--config", config, "generator config (JSON)")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "output directory")->required();
  auto* synth_seed = synth->add_option("--seed", seed, "overrides the config seed");

  auto* ingest = app.add_subcommand("ingest", "map-match trips into travel-time reports");
  ingest->add_option("--network", network)->required()->check(CLI::ExistingFile);
  ingest->add_option("--trips", trips)->required()->check(CLI::ExistingFile);
  ingest->add_option("--radius-m", radius_m)->capture_default_str();
  ingest->add_option("--out", out)->required();

  auto* stats = app.add_subcommand("stats", "fit hourly profiles and residual statistics");
  stats->add_option("--reports", reports)->required()->check(CLI::ExistingFile);
  stats->add_option("--out", out)->required();
  stats->add_option("--network", network, "sizes |E| from the network instead of the reports")->check(CLI::ExistingFile);
  stats->add_option("--sigma-floor", sigma_floor)->capture_default_str();
  stats->add_option("--hour-offset-s", hour_offset_s)->capture_default_str();
  stats->add_option("--fit-fraction", fit_fraction, "fit on the leading fraction of windows only")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));

  auto* windows = app.add_subcommand("windows", "summarize the windowed dataset");
  windows->add_option("--reports", reports)->required()->check(CLI::ExistingFile);
  windows->add_option("--stats", stats_path)->required()->check(CLI::ExistingFile);
  windows->add_option("--out-summary", summary)->required();

  auto* factor = app.add_subcommand("factorize", "segment embeddings from the sparse matrix");
  factor->add_option("--reports", reports)->required()->check(CLI::ExistingFile);
  factor->add_option("--stats", stats_path)->required()->check(CLI::ExistingFile);
  factor->add_option("--network", network, "cold-start rows from graph neighbours")->check(CLI::ExistingFile);
  factor->add_option("--d", d)->capture_default_str();
  factor->add_option("--lambda", lambda)->capture_default_str();
  factor->add_option("--sweeps", sweeps)->capture_default_str();
  factor->add_option("--seed", seed)->capture_default_str();
  factor->add_option("--fit-fraction", fit_fraction, "use the leading fraction of windows only")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  factor->add_option("--out", out)->required();
  std::string out_windows;
  factor->add_option("--out-windows", out_windows, "also write the window factors");

  auto* train_cmd = app.add_subcommand("train", "train the forecasting model");
  train_cmd->add_option("--config", config)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--reports", reports)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--stats", stats_path)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--embeddings", embeddings)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out)->required();
  train_cmd->add_option("--curve", curve)->required();
  auto* train_seed = train_cmd->add_option("--seed", seed, "overrides the config seed");

  auto* fc = app.add_subcommand("forecast", "forecast every segment for the windows after --at");
  fc->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  fc->add_option("--reports", reports)->required()->check(CLI::ExistingFile);
  fc->add_option("--stats", stats_path)->required()->check(CLI::ExistingFile);
  fc->add_option("--at", at, "unix time inside the first forecast window")->required();
  fc->add_option("--horizon", horizon)->capture_default_str()->check(CLI::PositiveNumber);
  fc->add_option("--out", out)->required();

  auto* ev = app.add_subcommand("evaluate", "score the model and baselines on the test span");
  ev->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--reports", reports)->required()->check(CLI::ExistingFile);
  ev->add_option("--stats", stats_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--groundtruth", groundtruth)->check(CLI::ExistingFile);
  ev->add_option("--horizon", horizon)->capture_default_str()->check(CLI::PositiveNumber);
  ev->add_option("--test-fraction", test_fraction)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  ev->add_option("--out", out)->required();

  auto* eta = app.add_subcommand("eta", "travel time along a path");
  eta->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  eta->add_option("--network", network)->required()->check(CLI::ExistingFile);
  eta->add_option("--stats", stats_path)->required()->check(CLI::ExistingFile);
  eta->add_option("--reports", reports, "recent reports feeding the forecast")->check(CLI::ExistingFile);
  eta->add_option("--path", path_text, "comma-separated segment ids")->required();
  eta->add_option("--depart", depart)->required();
  eta->add_option("--out", out)->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  gc->add_option("--seed", seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      auto cfg = load_synth_config(config);
      if (synth_seed->count()) cfg.seed = seed;
      fs::create_directories(out);
      const auto world = generate(cfg);
      write_synth_output(world, out);
      std::cerr << "synth: " << world.network.segment_count() << " segments, " << world.trips.size() << " trips, "
                << world.truth.traversals_emitted << " of " << world.truth.traversals_total << " traversals emitted\n";
    } else if (*ingest) {
      if (!(radius_m > 0.0)) throw Error("--radius-m must be positive");
      const auto net = load_network(network);
      MatchOptions opt;
      opt.radius_m = radius_m;
      auto res = ingest_trips(net, trips, opt);
      save_reports(res.log, out);
      for (const auto& dg : res.diagnostics) std::cerr << trips << ':' << dg.line << ": " << dg.message << '\n';
      std::cerr << "ingest: " << res.log.size() << " reports\n";
      if (!res.diagnostics.empty()) return 2;
    } else if (*stats) {
      const auto log = read_reports(reports);
      std::size_t n = 0;
      if (!network.empty()) {
        n = load_network(network).segment_count();
        check_segments(log, n, "the network");
      } else {
        for (const auto& r : log.reports) n = std::max(n, static_cast<std::size_t>(r.segment_id) + 1);
      }
      const auto idx = index_for(log);
      const auto end = static_cast<std::size_t>(std::floor(fit_fraction * static_cast<double>(idx.count)));
      const auto fit_log = fit_fraction < 1.0 ? reports_before(log, idx, end) : log;
      save_stats(fit_stats(fit_log, n, sigma_floor, hour_offset_s), out);
    } else if (*windows) {
      const auto log = read_reports(reports);
      const auto st = load_stats(stats_path);
      check_segments(log, st.size(), "the stats");
      const auto ds = build_windows(log, st, index_for(log));
      std::size_t empty = 0;
      for (const auto& b : ds.batches) empty += b.empty() ? 1 : 0;
      nlohmann::ordered_json j;
      j["origin"] = ds.index.origin;
      j["window_seconds"] = ds.index.window_seconds;
      j["windows"] = ds.num_windows();
      j["segments"] = ds.num_segments();
      j["observed_cells"] = ds.observed_cells();
      j["density"] = ds.density();
      j["empty_windows"] = empty;
      j["skipped_reports"] = ds.skipped;
      write_json(j, summary);
    } else if (*factor) {
      const auto log = read_reports(reports);
      const auto st = load_stats(stats_path);
      check_segments(log, st.size(), "the stats");
      const auto ds = build_windows(log, st, index_for(log));
      auto m = SparseMatrix::from_dataset(ds);
      const auto end = static_cast<std::size_t>(std::floor(fit_fraction * static_cast<double>(m.cols)));
      std::erase_if(m.entries, [end](const auto& e) { return e.col >= end; });
      AlsOptions opt;
      opt.d = d;
      opt.lambda = lambda;
      opt.sweeps = sweeps;
      opt.seed = seed;
      auto res = factorize(m, opt);
      for (const auto& w : res.warnings) std::cerr << "factorize: warning: " << w << '\n';
      const auto observed = m.observed_rows();
      if (!network.empty()) {
        const auto net = load_network(network);
        if (net.segment_count() != st.size()) throw Error("network and stats disagree on the number of segments");
        fill_cold_start_rows(res.P, net, observed);
      } else {
        const Tensor source = res.P;
        for (std::size_t i = 0; i < res.P.rows(); ++i)
          if (!observed[i]) {
            const auto row = cold_start_row(source, {}, observed);
            std::copy(row.begin(), row.end(), res.P.row(i).begin());
          }
      }
      save_embeddings(res.P, out);
      if (!out_windows.empty()) save_embeddings(res.Q, out_windows);
      std::cerr << "factorize: objective " << res.objective.front() << " -> " << res.objective.back()
                << ", observed RMSE " << observed_rmse(m, res.P, res.Q) << '\n';
    } else if (*train_cmd) {
      auto cfg = load_train_config(config);
      if (train_seed->count()) cfg.seed = seed;
      const auto log = read_reports(reports);
      const auto st = load_stats(stats_path);
      check_segments(log, st.size(), "the stats");
      const auto table = load_embeddings(embeddings);
      if (table.rows() != st.size()) throw Error("embeddings and stats disagree on the number of segments");
      if (table.cols() != cfg.d)
        throw Error("embedding width " + std::to_string(table.cols()) + " does not match config d = " +
                    std::to_string(cfg.d));
      const auto ds = build_windows(log, st, index_for(log));
      auto model = TrafficTransformer::create(cfg.model_config(st.size()), cfg.seed, table);
      const auto res = train(model, ds, cfg, [](const EpochLoss& e) {
        std::cerr << "epoch " << e.epoch << " train " << e.train_mse;
        if (e.val_mse) std::cerr << " val " << *e.val_mse;
        std::cerr << '\n';
      });
      save_checkpoint(model, out);
      save_loss_curve(res.curve, curve);
    } else if (*fc) {
      const auto log = read_reports(reports);
      const auto st = load_stats(stats_path);
      check_segments(log, st.size(), "the stats");
      auto model = load_model_for(model_path, st);
      const auto first = WindowIndex::covering(log);
      const auto target = first.locate(at);
      if (target < static_cast<std::int64_t>(model.config.L))
        throw Error("--at leaves fewer than L = " + std::to_string(model.config.L) + " windows of history");
      const auto t = static_cast<std::size_t>(target - 1);
      const auto ds = build_windows(log, st, index_for(log, t + 1 + horizon));
      const auto z = rollout(model, input_windows(ds, t, model.config.L), horizon);
      std::ofstream o(out);
      if (!o) throw Error("cannot write " + out);
      o << "segment_id,horizon,z,travel_time_s\n";
      for (std::size_t h = 0; h < horizon; ++h) {
        const double tau = ds.index.start(t + 1 + h);
        for (std::size_t s = 0; s < st.size(); ++s) {
          const auto id = static_cast<SegmentId>(s);
          o << s << ',' << h + 1 << ',' << format_double(z(h, s)) << ','
            << format_double(st.destandardize(id, z(h, s), tau)) << '\n';
        }
      }
    } else if (*ev) {
      const auto log = read_reports(reports);
      const auto st = load_stats(stats_path);
      check_segments(log, st.size(), "the stats");
      auto model = load_model_for(model_path, st);
      const auto ds = build_windows(log, st, index_for(log));
      const auto split = WindowSplit::from_fractions(ds.num_windows(), 1.0 - test_fraction, 0.0, test_fraction);
      std::optional<Tensor> truth;
      if (!groundtruth.empty()) {
        const auto gt = load_ground_truth(groundtruth);
        if (gt.num_segments() != st.size()) throw Error("ground truth and stats disagree on the number of segments");
        truth = truth_seconds(gt, ds.index);
      }
      const auto rep = evaluate(model, ds, split, horizon, truth ? &*truth : nullptr);
      write_json(rep.to_json(), out);
    } else if (*eta) {
      const auto net = load_network(network);
      const auto st = load_stats(stats_path);
      if (net.segment_count() != st.size()) throw Error("network and stats disagree on the number of segments");
      auto model = load_model_for(model_path, st);
      const auto path = parse_path(path_text);
      for (SegmentId s : path) net.segment(s);
      if (!net.is_connected_path(path)) throw Error("--path is not a connected sequence of segments");
      ReportLog log;
      if (!reports.empty()) {
        log = read_reports(reports);
        check_segments(log, st.size(), "the stats");
      }
      WindowIndex base;
      base.origin = log.empty() ? std::floor(depart / kSecondsPerDay) * kSecondsPerDay
                                : WindowIndex::covering(log).origin;
      const auto first = base.locate(depart);
      if (first < static_cast<std::int64_t>(model.config.L))
        throw Error("--depart leaves fewer than L = " + std::to_string(model.config.L) + " windows of history");
      const auto t = static_cast<std::size_t>(first - 1);
      std::size_t H = 1;
      Tensor z;
      WindowedDataset ds;
      auto refresh = [&] {
        base.count = t + 1 + H;
        ds = build_windows(log, st, base);
        z = rollout(model, input_windows(ds, t, model.config.L), H);
      };
      refresh();
      nlohmann::ordered_json legs = nlohmann::ordered_json::array();
      double clock = depart;
      double total = 0.0;
      for (SegmentId s : path) {
        const auto w = static_cast<std::size_t>(base.locate(clock));
        while (w - t > H) {
          H *= 2;
          refresh();
        }
        const double tt = st.destandardize(s, z(w - t - 1, static_cast<std::size_t>(s)), ds.index.start(w));
        legs.push_back({{"segment_id", s}, {"enter", clock}, {"window", w}, {"travel_time_s", tt}});
        clock += tt;
        total += tt;
      }
      nlohmann::ordered_json j;
      j["depart"] = depart;
      j["arrive"] = clock;
      j["eta_s"] = total;
      j["segments"] = std::move(legs);
      write_json(j, out);
    } else if (*gc) {
      const auto rep = model_gradcheck(seed);
      for (const auto& e : rep.entries)
        std::cout << (e.passed ? "ok   " : "FAIL ") << e.name << " checked=" << e.checked
                  << " max_rel_error=" << e.max_rel_error << '\n';
      std::cout << (rep.passed() ? "gradcheck passed" : "gradcheck FAILED") << " (worst " << rep.worst()
                << ", tolerance " << rep.tolerance << ")\n";
      return rep.passed() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "ttf: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
