#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttf/common.hpp"
#include "ttf/ingest.hpp"
#include "ttf/prep.hpp"
#include "ttf/roadnet.hpp"
#include "ttf/tensor.hpp"

namespace ttf {

/// Daily congestion profile of one segment class.
struct CongestionClass {
  double amplitude = 1.0;  ///< peak slowdown: travel time grows by up to (1 + amplitude)
  double phase_h = 5.0;    ///< the peak lobe spans [phase, phase + 12h), maximal at phase + 6h
  double base_speed_mps = 12.0;
};

struct SynthConfig {
  std::size_t grid_rows = 6;
  std::size_t grid_cols = 6;
  double segment_length_m = 400.0;
  std::size_t n_vehicles = 7;
  double hours = 21 * 24;
  double coverage = 0.3;  ///< probability that a trip is emitted
  double gps_noise_sigma_m = 0.0;
  CongestionClass arterial{1.5, 2.0, 12.0};
  CongestionClass side{0.6, 10.0, 8.0};
  /// Per-day, per-class amplitude factor drawn from [jitter_low, jitter_high]; off = 1.
  bool amplitude_jitter = true;
  double jitter_low = 0.6;
  double jitter_high = 1.4;
  std::size_t trip_min_segments = 4;
  std::size_t trip_max_segments = 12;
  double pause_mean_s = 300.0;
  double start_unix = 1699920000.0;  ///< 2023-11-14 00:00:00 UTC
  double origin_lon = 23.70;
  double origin_lat = 37.95;
  std::uint64_t seed = 7;

  void validate() const {
    if (grid_rows < 1 || grid_cols < 1 || grid_rows * grid_cols < 2) throw Error("synth config: grid needs at least 2 junctions");
    if (!(segment_length_m > 0.0)) throw Error("synth config: segment_length_m must be positive");
    if (n_vehicles < 1) throw Error("synth config: n_vehicles must be at least 1");
    if (!(hours > 0.0)) throw Error("synth config: hours must be positive");
    if (!(coverage > 0.0 && coverage <= 1.0)) throw Error("synth config: coverage must be in (0, 1]");
    if (!(gps_noise_sigma_m >= 0.0)) throw Error("synth config: gps_noise_sigma_m must be non-negative");
    for (const auto* c : {&arterial, &side})
      if (!(c->amplitude >= 0.0) || !(c->base_speed_mps > 0.0))
        throw Error("synth config: amplitudes must be non-negative and speeds positive");
    if (!(jitter_low > 0.0 && jitter_low <= jitter_high)) throw Error("synth config: bad jitter range");
    if (trip_min_segments < 1 || trip_min_segments > trip_max_segments) throw Error("synth config: bad trip length range");
    if (!(pause_mean_s >= 0.0)) throw Error("synth config: pause_mean_s must be non-negative");
  }

  nlohmann::ordered_json to_json() const {
    auto cls = [](const CongestionClass& c) {
      return nlohmann::ordered_json{{"amplitude", c.amplitude}, {"phase_h", c.phase_h}, {"base_speed_mps", c.base_speed_mps}};
    };
    return {{"grid_rows", grid_rows},
            {"grid_cols", grid_cols},
            {"segment_length_m", segment_length_m},
            {"n_vehicles", n_vehicles},
            {"hours", hours},
            {"coverage", coverage},
            {"gps_noise_sigma_m", gps_noise_sigma_m},
            {"arterial", cls(arterial)},
            {"side", cls(side)},
            {"amplitude_jitter", amplitude_jitter},
            {"jitter_low", jitter_low},
            {"jitter_high", jitter_high},
            {"trip_min_segments", trip_min_segments},
            {"trip_max_segments", trip_max_segments},
            {"pause_mean_s", pause_mean_s},
            {"start_unix", start_unix},
            {"origin_lon", origin_lon},
            {"origin_lat", origin_lat},
            {"seed", seed}};
  }

  /// Missing keys keep their defaults; unknown keys are rejected.
  static SynthConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error("synth config must be a JSON object");
    SynthConfig c;
    const auto known = c.to_json();
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!known.contains(it.key())) throw Error("synth config: unknown key '" + it.key() + "'");
    try {
      c.grid_rows = j.value("grid_rows", c.grid_rows);
      c.grid_cols = j.value("grid_cols", c.grid_cols);
      c.segment_length_m = j.value("segment_length_m", c.segment_length_m);
      c.n_vehicles = j.value("n_vehicles", c.n_vehicles);
      c.hours = j.value("hours", c.hours);
      c.coverage = j.value("coverage", c.coverage);
      c.gps_noise_sigma_m = j.value("gps_noise_sigma_m", c.gps_noise_sigma_m);
      for (auto [key, cls] : {std::pair{"arterial", &c.arterial}, std::pair{"side", &c.side}}) {
        if (!j.contains(key)) continue;
        const auto& o = j.at(key);
        cls->amplitude = o.value("amplitude", cls->amplitude);
        cls->phase_h = o.value("phase_h", cls->phase_h);
        cls->base_speed_mps = o.value("base_speed_mps", cls->base_speed_mps);
      }
      c.amplitude_jitter = j.value("amplitude_jitter", c.amplitude_jitter);
      c.jitter_low = j.value("jitter_low", c.jitter_low);
      c.jitter_high = j.value("jitter_high", c.jitter_high);
      c.trip_min_segments = j.value("trip_min_segments", c.trip_min_segments);
      c.trip_max_segments = j.value("trip_max_segments", c.trip_max_segments);
      c.pause_mean_s = j.value("pause_mean_s", c.pause_mean_s);
      c.start_unix = j.value("start_unix", c.start_unix);
      c.origin_lon = j.value("origin_lon", c.origin_lon);
      c.origin_lat = j.value("origin_lat", c.origin_lat);
      c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("malformed synth config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

inline SynthConfig load_synth_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open synth config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed synth config " + path + ": " + e.what());
  }
  return SynthConfig::from_json(j);
}

/// One generated trip, emitted or not.
struct TrueTrip {
  std::string trip_id;
  std::vector<SegmentId> segments;
  std::vector<double> enter;
  std::vector<double> exit;
};

struct GroundTruth {
  double start_unix = 0.0;
  double window_seconds = kWindowSeconds;
  Tensor travel_time_s;  ///< windows x |E|, true travel time at each window's midpoint
  std::vector<TrueTrip> trips;  ///< emitted trips only, same order as the trips file
  std::size_t traversals_total = 0;
  std::size_t traversals_emitted = 0;

  std::size_t num_windows() const { return travel_time_s.rows(); }
  std::size_t num_segments() const { return travel_time_s.cols(); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["start_unix"] = start_unix;
    j["window_seconds"] = window_seconds;
    j["num_windows"] = num_windows();
    j["num_segments"] = num_segments();
    j["traversals_total"] = traversals_total;
    j["traversals_emitted"] = traversals_emitted;
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t w = 0; w < num_windows(); ++w) {
      const auto r = travel_time_s.row(w);
      rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    j["travel_time_s"] = std::move(rows);
    auto trips_json = nlohmann::ordered_json::array();
    for (const auto& t : trips)
      trips_json.push_back({{"trip_id", t.trip_id}, {"segments", t.segments}, {"enter", t.enter}, {"exit", t.exit}});
    j["trips"] = std::move(trips_json);
    return j;
  }

  static GroundTruth from_json(const nlohmann::json& j) {
    GroundTruth gt;
    try {
      gt.start_unix = j.at("start_unix").get<double>();
      gt.window_seconds = j.at("window_seconds").get<double>();
      gt.traversals_total = j.at("traversals_total").get<std::size_t>();
      gt.traversals_emitted = j.at("traversals_emitted").get<std::size_t>();
      const auto W = j.at("num_windows").get<std::size_t>();
      const auto n = j.at("num_segments").get<std::size_t>();
      const auto& rows = j.at("travel_time_s");
      if (!rows.is_array() || rows.size() != W) throw Error("ground truth: travel_time_s must have num_windows rows");
      gt.travel_time_s = Tensor::matrix(W, n);
      for (std::size_t w = 0; w < W; ++w) {
        const auto r = rows[w].get<std::vector<double>>();
        if (r.size() != n) throw Error("ground truth: travel_time_s row has the wrong length");
        std::copy(r.begin(), r.end(), gt.travel_time_s.row(w).begin());
      }
      for (const auto& t : j.at("trips")) {
        TrueTrip tt;
        tt.trip_id = t.at("trip_id").get<std::string>();
        tt.segments = t.at("segments").get<std::vector<SegmentId>>();
        tt.enter = t.at("enter").get<std::vector<double>>();
        tt.exit = t.at("exit").get<std::vector<double>>();
        if (tt.enter.size() != tt.segments.size() || tt.exit.size() != tt.segments.size())
          throw Error("ground truth: trip '" + tt.trip_id + "' has misaligned arrays");
        gt.trips.push_back(std::move(tt));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("malformed ground truth: ") + e.what());
    }
    return gt;
  }
};

inline void save_ground_truth(const GroundTruth& gt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write ground truth " + path);
  out << gt.to_json().dump() << '\n';
}

inline GroundTruth load_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open ground truth " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed ground truth " + path + ": " + e.what());
  }
  return GroundTruth::from_json(j);
}

/// The grid world: network geometry plus the congestion model.
class SynthWorld {
 public:
  explicit SynthWorld(const SynthConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    build_network();
    const auto days = static_cast<std::size_t>(std::ceil(cfg_.hours / 24.0)) + 1;
    SplitMix64 rng = SplitMix64(cfg_.seed).split(0xda11);
    for (std::size_t d = 0; d < days; ++d) {
      for (auto* f : {&arterial_factor_, &side_factor_})
        f->push_back(cfg_.amplitude_jitter ? rng.uniform(cfg_.jitter_low, cfg_.jitter_high) : 1.0);
    }
  }

  const SynthConfig& config() const { return cfg_; }
  const RoadNetwork& network() const { return net_; }
  bool is_arterial(SegmentId s) const { return arterial_[static_cast<std::size_t>(s)] != 0; }

  double end_time() const { return cfg_.start_unix + cfg_.hours * kSecondsPerHour; }

  /// Travel time of a traversal entering segment s at unix time t.
  double travel_time(SegmentId s, double t) const {
    const bool art = is_arterial(s);
    const auto& c = art ? cfg_.arterial : cfg_.side;
    const double rel = t - cfg_.start_unix;
    auto day = static_cast<std::size_t>(std::max(0.0, std::floor(rel / kSecondsPerDay)));
    const auto& factors = art ? arterial_factor_ : side_factor_;
    day = std::min(day, factors.size() - 1);
    const double phase = 2.0 * M_PI * (rel - c.phase_h * kSecondsPerHour) / kSecondsPerDay;
    const double slowdown = c.amplitude * factors[day] * std::max(0.0, std::sin(phase));
    return net_.segment(s).length_m / c.base_speed_mps * (1.0 + slowdown);
  }

 private:
  void build_network() {
    const std::size_t R = cfg_.grid_rows, C = cfg_.grid_cols;
    const double len = cfg_.segment_length_m;
    // Junction planar positions are exact multiples of the segment length around the grid centre.
    const double cx = 0.5 * static_cast<double>(C - 1) * len;
    const double cy = 0.5 * static_cast<double>(R - 1) * len;
    const double cos_lat = std::cos(cfg_.origin_lat * M_PI / 180.0);
    std::vector<Junction> junctions;
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const double x = static_cast<double>(c) * len - cx;
        const double y = cy - static_cast<double>(r) * len;
        junctions.push_back({static_cast<JunctionId>(r * C + c), cfg_.origin_lon + x / (kMetersPerDegree * cos_lat),
                             cfg_.origin_lat + y / kMetersPerDegree});
      }
    std::vector<RoadSegment> segments;
    auto add_pair = [&](std::size_t a, std::size_t b, bool art) {
      for (auto [u, v] : {std::pair{a, b}, std::pair{b, a}}) {
        segments.push_back({static_cast<SegmentId>(segments.size()), static_cast<JunctionId>(u),
                            static_cast<JunctionId>(v), len});
        arterial_.push_back(art ? 1 : 0);
      }
    };
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t j = r * C + c;
        if (c + 1 < C) add_pair(j, j + 1, r % 2 == 0);
        if (r + 1 < R) add_pair(j, j + C, c % 2 == 0);
      }
    net_ = RoadNetwork(std::move(junctions), std::move(segments));
  }

  SynthConfig cfg_;
  RoadNetwork net_;
  std::vector<char> arterial_;
  std::vector<double> arterial_factor_, side_factor_;
};

struct SynthOutput {
  RoadNetwork network;
  std::vector<Trip> trips;
  GroundTruth truth;
};

/// Random-walk vehicles on the grid. Each vehicle has its own PRNG stream;
/// trips alternate with exponential pauses and are emitted with probability `coverage`.
inline SynthOutput generate(const SynthConfig& cfg) {
  SynthWorld world(cfg);
  const auto& net = world.network();
  SynthOutput out;
  out.network = net;
  out.truth.start_unix = cfg.start_unix;

  const auto W = static_cast<std::size_t>(std::ceil(cfg.hours * kSecondsPerHour / kWindowSeconds));
  out.truth.travel_time_s = Tensor::matrix(W, net.segment_count());
  for (std::size_t w = 0; w < W; ++w)
    for (std::size_t s = 0; s < net.segment_count(); ++s)
      out.truth.travel_time_s(w, s) =
          world.travel_time(static_cast<SegmentId>(s), cfg.start_unix + (static_cast<double>(w) + 0.5) * kWindowSeconds);

  const double cos_lat = std::cos(cfg.origin_lat * M_PI / 180.0);
  for (std::size_t v = 0; v < cfg.n_vehicles; ++v) {
    SplitMix64 rng = SplitMix64(cfg.seed).split(v + 1);
    JunctionId at = static_cast<JunctionId>(rng.below(net.junction_count()));
    SegmentId last = -1;
    double t = cfg.start_unix + rng.uniform(0.0, cfg.pause_mean_s);
    for (std::size_t k = 0; t < world.end_time(); ++k) {
      const std::size_t K = cfg.trip_min_segments + rng.below(cfg.trip_max_segments - cfg.trip_min_segments + 1);
      TrueTrip trip;
      trip.trip_id = "v" + std::to_string(v) + "_t" + std::to_string(k);
      for (std::size_t i = 0; i < K && t < world.end_time(); ++i) {
        const auto outs = net.out_segments(at);
        std::vector<SegmentId> options;
        for (SegmentId s : outs)
          if (last < 0 || net.segment(s).to != net.segment(last).from) options.push_back(s);
        if (options.empty()) options.assign(outs.begin(), outs.end());
        const SegmentId s = options[rng.below(options.size())];
        const double tt = world.travel_time(s, t);
        trip.segments.push_back(s);
        trip.enter.push_back(t);
        trip.exit.push_back(t + tt);
        t += tt;
        at = net.segment(s).to;
        last = s;
      }
      const bool emit = rng.uniform() < cfg.coverage;
      out.truth.traversals_total += trip.segments.size();
      if (emit && !trip.segments.empty()) {
        Trip gps;
        gps.trip_id = trip.trip_id;
        auto fix = [&](JunctionId j, double tau) {
          const auto& jn = net.junction(j);
          double lon = jn.lon, lat = jn.lat;
          if (cfg.gps_noise_sigma_m > 0.0) {
            lon += rng.normal() * cfg.gps_noise_sigma_m / (kMetersPerDegree * cos_lat);
            lat += rng.normal() * cfg.gps_noise_sigma_m / kMetersPerDegree;
          }
          gps.points.push_back({lon, lat, tau});
        };
        fix(net.segment(trip.segments.front()).from, trip.enter.front());
        for (std::size_t i = 0; i < trip.segments.size(); ++i) fix(net.segment(trip.segments[i]).to, trip.exit[i]);
        out.truth.traversals_emitted += trip.segments.size();
        out.trips.push_back(std::move(gps));
        out.truth.trips.push_back(std::move(trip));
      }
      t += rng.exponential(cfg.pause_mean_s);
      last = -1;
    }
  }
  return out;
}

/// Dense true travel times aligned to a window index (rows = index windows).
/// Windows outside the generated span repeat the nearest generated window.
inline Tensor truth_seconds(const GroundTruth& gt, const WindowIndex& index) {
  if (gt.num_windows() == 0) throw Error("ground truth has no windows");
  Tensor out = Tensor::matrix(index.count, gt.num_segments());
  for (std::size_t w = 0; w < index.count; ++w) {
    const double mid = index.start(w) + 0.5 * index.window_seconds;
    auto g = static_cast<std::int64_t>(std::floor((mid - gt.start_unix) / gt.window_seconds));
    g = std::clamp<std::int64_t>(g, 0, static_cast<std::int64_t>(gt.num_windows()) - 1);
    const auto src = gt.travel_time_s.row(static_cast<std::size_t>(g));
    std::copy(src.begin(), src.end(), out.row(w).begin());
  }
  return out;
}

/// True z-values of windows t+1..t+H (H x |E|).
inline Tensor oracle_matrix(const GroundTruth& gt, const SegmentStats& stats, const WindowIndex& index, std::size_t t,
                            std::size_t H) {
  if (gt.num_segments() != stats.size()) throw Error("oracle_matrix: ground truth and stats disagree on |E|");
  const Tensor secs = truth_seconds(gt, index);
  Tensor z = Tensor::matrix(H, gt.num_segments());
  for (std::size_t h = 0; h < H; ++h) {
    const std::size_t w = t + 1 + h;
    if (w >= index.count) throw Error("oracle_matrix: position beyond the window index");
    for (std::size_t s = 0; s < gt.num_segments(); ++s)
      z(h, s) = stats.standardize(static_cast<SegmentId>(s), secs(w, s), index.start(w));
  }
  return z;
}

inline void write_synth_output(const SynthOutput& out, const std::string& dir) {
  save_network(out.network, dir + "/network.json");
  save_trips(out.trips, dir + "/trips.csv");
  save_ground_truth(out.truth, dir + "/groundtruth.json");
}

}  // namespace ttf
