#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttf/common.hpp"
#include "ttf/ingest.hpp"

namespace ttf {

/// Hour of day in [0, 24) of a unix timestamp shifted by a fixed offset.
inline int hour_of_day(double tau, double offset_s = 0.0) {
  double s = std::fmod(tau + offset_s, kSecondsPerDay);
  if (s < 0.0) s += kSecondsPerDay;
  return std::min(23, static_cast<int>(s / kSecondsPerHour));
}

struct SegmentStat {
  double mu = 0.0;
  double sigma = 1.0;
  std::array<double, 24> hourly{};
  std::size_t count = 0;
};

/// Hour-of-day profile plus residual mean/std for every segment.
struct SegmentStats {
  double sigma_floor = 1.0;
  double hour_offset_s = 0.0;
  std::vector<SegmentStat> segments;

  std::size_t size() const { return segments.size(); }

  const SegmentStat& at(SegmentId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= segments.size())
      throw Error("unknown segment id " + std::to_string(id));
    return segments[static_cast<std::size_t>(id)];
  }

  double hourly_mean(SegmentId id, double tau) const { return at(id).hourly[hour_of_day(tau, hour_offset_s)]; }

  /// The historical expectation at tau, i.e. the travel time corresponding to z = 0.
  double expected(SegmentId id, double tau) const {
    const auto& s = at(id);
    return s.hourly[hour_of_day(tau, hour_offset_s)] + s.mu;
  }

  double standardize(SegmentId id, double travel_time_s, double tau) const {
    const auto& s = at(id);
    return ((travel_time_s - s.hourly[hour_of_day(tau, hour_offset_s)]) - s.mu) / s.sigma;
  }

  /// Inverse of standardize(), clamped below at 0.1 s.
  double destandardize(SegmentId id, double z, double tau) const {
    const auto& s = at(id);
    const double raw = s.hourly[hour_of_day(tau, hour_offset_s)] + s.mu + z * s.sigma;
    return std::max(0.1, raw);
  }

  /// Segment keys keep id order in the written file.
  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["sigma_floor"] = sigma_floor;
    j["hour_offset_s"] = hour_offset_s;
    nlohmann::ordered_json segs = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < segments.size(); ++i) {
      const auto& s = segments[i];
      segs[std::to_string(i)] = {{"mu", s.mu}, {"sigma", s.sigma}, {"hourly", s.hourly}, {"count", s.count}};
    }
    j["segments"] = std::move(segs);
    return j;
  }

  static SegmentStats from_json(const nlohmann::json& j) {
    SegmentStats st;
    try {
      st.sigma_floor = j.at("sigma_floor").get<double>();
      st.hour_offset_s = j.value("hour_offset_s", 0.0);
      const auto& segs = j.at("segments");
      if (!segs.is_object()) throw Error("stats: 'segments' must be an object");
      std::map<SegmentId, SegmentStat> by_id;
      for (auto it = segs.begin(); it != segs.end(); ++it) {
        SegmentId id = 0;
        if (!parse_int(it.key(), id) || id < 0) throw Error("stats: bad segment key '" + it.key() + "'");
        SegmentStat s;
        s.mu = it->at("mu").get<double>();
        s.sigma = it->at("sigma").get<double>();
        s.hourly = it->at("hourly").get<std::array<double, 24>>();
        s.count = it->at("count").get<std::size_t>();
        if (!(s.sigma > 0.0)) throw Error("stats: sigma must be positive for segment " + it.key());
        by_id[id] = s;
      }
      SegmentId expect = 0;
      for (auto& [id, s] : by_id) {
        if (id != expect) throw Error("stats: segment ids must be contiguous from 0");
        st.segments.push_back(s);
        ++expect;
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("malformed stats: ") + e.what());
    }
    return st;
  }
};

inline void save_stats(const SegmentStats& st, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write stats file " + path);
  out << st.to_json().dump(1) << '\n';
}

inline SegmentStats load_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open stats file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed stats file " + path + ": " + e.what());
  }
  return SegmentStats::from_json(j);
}

/// Hourly profile first, then residual mean/std. Segments without reports get
/// the global mean profile, mu = 0 and sigma = sigma_floor.
inline SegmentStats fit_stats(const ReportLog& log, std::size_t num_segments, double sigma_floor = 1.0,
                              double hour_offset_s = 0.0) {
  if (log.empty()) throw Error("fit_stats: empty report log");
  if (!(sigma_floor > 0.0)) throw Error("fit_stats: sigma_floor must be positive");
  SegmentStats st;
  st.sigma_floor = sigma_floor;
  st.hour_offset_s = hour_offset_s;
  st.segments.resize(num_segments);

  std::vector<std::array<double, 24>> sums(num_segments);
  std::vector<std::array<std::size_t, 24>> counts(num_segments);
  for (auto& a : sums) a.fill(0.0);
  for (auto& a : counts) a.fill(0);
  double global_sum = 0.0;
  for (const auto& r : log.reports) {
    if (r.segment_id < 0 || static_cast<std::size_t>(r.segment_id) >= num_segments)
      throw Error("fit_stats: report references unknown segment " + std::to_string(r.segment_id));
    const int h = hour_of_day(r.tau, hour_offset_s);
    sums[r.segment_id][h] += r.travel_time_s;
    counts[r.segment_id][h] += 1;
    global_sum += r.travel_time_s;
  }
  const double global_mean = global_sum / static_cast<double>(log.size());

  for (std::size_t i = 0; i < num_segments; ++i) {
    auto& s = st.segments[i];
    double populated_sum = 0.0;
    int populated = 0;
    for (int h = 0; h < 24; ++h) {
      if (counts[i][h] > 0) {
        s.hourly[h] = sums[i][h] / static_cast<double>(counts[i][h]);
        populated_sum += s.hourly[h];
        ++populated;
        s.count += counts[i][h];
      }
    }
    const double fill = populated > 0 ? populated_sum / populated : global_mean;
    for (int h = 0; h < 24; ++h)
      if (counts[i][h] == 0) s.hourly[h] = fill;
    s.mu = 0.0;
    s.sigma = sigma_floor;
  }

  // Residual moments (population).
  std::vector<double> rsum(num_segments, 0.0);
  for (const auto& r : log.reports)
    rsum[r.segment_id] += r.travel_time_s - st.segments[r.segment_id].hourly[hour_of_day(r.tau, hour_offset_s)];
  for (std::size_t i = 0; i < num_segments; ++i)
    if (st.segments[i].count > 0) st.segments[i].mu = rsum[i] / static_cast<double>(st.segments[i].count);
  std::vector<double> rss(num_segments, 0.0);
  for (const auto& r : log.reports) {
    const auto& s = st.segments[r.segment_id];
    const double e = r.travel_time_s - s.hourly[hour_of_day(r.tau, hour_offset_s)] - s.mu;
    rss[r.segment_id] += e * e;
  }
  for (std::size_t i = 0; i < num_segments; ++i) {
    auto& s = st.segments[i];
    if (s.count > 0) s.sigma = std::max(sigma_floor, std::sqrt(rss[i] / static_cast<double>(s.count)));
  }
  return st;
}

/// 15-minute windows: window w covers [origin + 900 w, origin + 900 (w + 1)).
struct WindowIndex {
  double window_seconds = kWindowSeconds;
  double origin = 0.0;
  std::size_t count = 0;

  double start(std::size_t w) const { return origin + window_seconds * static_cast<double>(w); }

  /// May be negative or >= count for timestamps outside the covered span.
  std::int64_t locate(double tau) const {
    return static_cast<std::int64_t>(std::floor((tau - origin) / window_seconds));
  }

  /// Origin at midnight UTC of the first report's day, extended to cover the last report.
  static WindowIndex covering(const ReportLog& log, double window_seconds = kWindowSeconds) {
    if (log.empty()) throw Error("cannot build a window index from an empty log");
    WindowIndex idx;
    idx.window_seconds = window_seconds;
    idx.origin = std::floor(log.reports.front().tau / kSecondsPerDay) * kSecondsPerDay;
    idx.count = static_cast<std::size_t>(idx.locate(log.reports.back().tau)) + 1;
    return idx;
  }
};

/// Distinct segments observed in one window and their mean standardized value.
struct WindowBatch {
  std::size_t window = 0;
  std::vector<SegmentId> segment_ids;  ///< ascending
  std::vector<double> z_values;

  bool empty() const { return segment_ids.empty(); }
  std::size_t size() const { return segment_ids.size(); }
};

/// Sparse |E| x W matrix of standardized travel times, stored as per-window batches.
struct WindowedDataset {
  WindowIndex index;
  std::vector<WindowBatch> batches;
  SegmentStats stats;
  std::size_t skipped = 0;  ///< reports outside the index range

  std::size_t num_segments() const { return stats.size(); }
  std::size_t num_windows() const { return batches.size(); }

  std::optional<double> cell(SegmentId segment, std::size_t window) const {
    const auto& b = batches.at(window);
    auto it = std::lower_bound(b.segment_ids.begin(), b.segment_ids.end(), segment);
    if (it == b.segment_ids.end() || *it != segment) return std::nullopt;
    return b.z_values[static_cast<std::size_t>(it - b.segment_ids.begin())];
  }

  std::size_t observed_cells() const {
    std::size_t n = 0;
    for (const auto& b : batches) n += b.size();
    return n;
  }

  double density() const {
    const double total = static_cast<double>(num_segments()) * static_cast<double>(num_windows());
    return total > 0.0 ? static_cast<double>(observed_cells()) / total : 0.0;
  }

  /// Hour-of-day timestamp used to destandardize values of window w.
  double window_time(std::size_t w) const { return index.start(w); }
};

/// Standardize every report, then average per (segment, window).
inline WindowedDataset build_windows(const ReportLog& log, const SegmentStats& stats, const WindowIndex& index) {
  WindowedDataset ds;
  ds.index = index;
  ds.stats = stats;
  ds.batches.resize(index.count);
  std::vector<std::map<SegmentId, std::pair<double, std::size_t>>> acc(index.count);
  for (const auto& r : log.reports) {
    const auto w = index.locate(r.tau);
    if (w < 0 || static_cast<std::size_t>(w) >= index.count) {
      ++ds.skipped;
      continue;
    }
    auto& cell = acc[static_cast<std::size_t>(w)][r.segment_id];
    cell.first += stats.standardize(r.segment_id, r.travel_time_s, r.tau);
    cell.second += 1;
  }
  for (std::size_t w = 0; w < index.count; ++w) {
    auto& b = ds.batches[w];
    b.window = w;
    for (const auto& [seg, sc] : acc[w]) {
      b.segment_ids.push_back(seg);
      b.z_values.push_back(sc.first / static_cast<double>(sc.second));
    }
  }
  return ds;
}

/// Forecast position t: inputs are windows t-L+1..t, targets t+1..t+H.
struct Sample {
  std::size_t t = 0;
};

/// Stride-1 sliding positions; positions whose first target window is empty are dropped.
inline std::vector<Sample> make_samples(const WindowedDataset& ds, std::size_t L, std::size_t H,
                                        bool drop_empty_targets = true) {
  if (L < 1 || H < 1) throw Error("make_samples: L and H must be at least 1");
  if (ds.num_windows() < L + H) throw Error("make_samples: dataset too short for L + H windows");
  std::vector<Sample> out;
  for (std::size_t t = L - 1; t + H < ds.num_windows(); ++t) {
    if (drop_empty_targets && ds.batches[t + 1].empty()) continue;
    out.push_back({t});
  }
  return out;
}

/// Chronological split of window indices into [0, train_end), [train_end, val_end), [val_end, W).
struct WindowSplit {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::size_t total = 0;

  static WindowSplit from_fractions(std::size_t windows, double train, double val, double test) {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9)
      throw Error("split fractions must be non-negative and sum to 1");
    WindowSplit s;
    s.total = windows;
    s.train_end = static_cast<std::size_t>(std::floor(train * static_cast<double>(windows)));
    s.val_end = static_cast<std::size_t>(std::floor((train + val) * static_cast<double>(windows)));
    return s;
  }

  enum class Part { Train, Validation, Test };

  Part part_of(std::size_t window) const {
    if (window < train_end) return Part::Train;
    if (window < val_end) return Part::Validation;
    return Part::Test;
  }
};

/// Samples whose first target window falls in the requested part of the split.
inline std::vector<Sample> samples_in(const std::vector<Sample>& samples, const WindowSplit& split,
                                      WindowSplit::Part part) {
  std::vector<Sample> out;
  for (const auto& s : samples)
    if (split.part_of(s.t + 1) == part) out.push_back(s);
  return out;
}

/// Reports whose window lies before `end_window` (used to fit statistics on the training span only).
inline ReportLog reports_before(const ReportLog& log, const WindowIndex& index, std::size_t end_window) {
  ReportLog out;
  for (const auto& r : log.reports) {
    const auto w = index.locate(r.tau);
    if (w >= 0 && static_cast<std::size_t>(w) < end_window) out.reports.push_back(r);
  }
  return out;
}

}  // namespace ttf
