#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "ttf/common.hpp"
#include "ttf/csv.hpp"
#include "ttf/roadnet.hpp"

namespace ttf {

struct GpsPoint {
  double lon = 0.0;
  double lat = 0.0;
  double tau = 0.0;  ///< unix seconds
};

struct Trip {
  std::string trip_id;
  std::vector<GpsPoint> points;
};

struct TravelTimeReport {
  std::string trip_id;
  SegmentId segment_id = 0;
  double travel_time_s = 0.0;
  double tau = 0.0;  ///< segment exit time

  bool operator==(const TravelTimeReport&) const = default;
};

/// Reports sorted by tau (stable with respect to insertion order).
struct ReportLog {
  std::vector<TravelTimeReport> reports;

  bool empty() const { return reports.empty(); }
  std::size_t size() const { return reports.size(); }

  void sort() {
    std::stable_sort(reports.begin(), reports.end(),
                     [](const auto& a, const auto& b) { return a.tau < b.tau; });
  }
};

/// One traversal of a segment by a matched trip.
struct MatchedSegment {
  SegmentId segment = 0;
  double enter = 0.0;
  double exit = 0.0;
  /// exit - enter, accumulated in trip-relative time so it does not lose
  /// precision against ~1e9 unix timestamps.
  double travel_time = 0.0;
};

/// A connected run of traversals. A trip splits into several runs only when
/// the network offers no route across a gap.
using MatchRun = std::vector<MatchedSegment>;

struct MatchOptions {
  double radius_m = 30.0;
  /// A perpendicular foot this close to a segment end is treated as the junction itself.
  double snap_m = 15.0;
  /// Maximum number of whole segments between consecutive fixes before the
  /// nearest candidate is preferred over continuity.
  int max_hops = 2;
};

namespace detail {

struct Location {
  bool on_segment = false;
  JunctionId junction = 0;
  SegmentId segment = 0;
  double fraction = 0.0;
  double distance_m = 0.0;
};

struct Piece {
  SegmentId segment = 0;
  double f0 = 0.0;
  double f1 = 0.0;
  double length = 0.0;
};

inline std::vector<Location> locations_for(const RoadNetwork& net, const GpsPoint& p,
                                           const MatchOptions& opt) {
  std::vector<Location> out;
  for (const auto& c : net.project_point(p.lon, p.lat, opt.radius_m)) {
    const auto& seg = net.segment(c.segment);
    Location loc;
    loc.distance_m = c.distance_m;
    if (c.fraction * seg.length_m <= opt.snap_m) {
      loc.junction = seg.from;
    } else if ((1.0 - c.fraction) * seg.length_m <= opt.snap_m) {
      loc.junction = seg.to;
    } else {
      loc.on_segment = true;
      loc.segment = c.segment;
      loc.fraction = c.fraction;
    }
    const bool dup = std::any_of(out.begin(), out.end(), [&](const Location& o) {
      return !o.on_segment && !loc.on_segment && o.junction == loc.junction;
    });
    if (!dup) out.push_back(loc);  // candidates arrive nearest-first, so the kept copy is the nearest
  }
  return out;
}

struct Leg {
  std::vector<Piece> pieces;
  int hops = 0;
};

inline std::optional<Leg> route_between(const RoadNetwork& net, const Location& a, const Location& b) {
  Leg leg;
  if (a.on_segment && b.on_segment && a.segment == b.segment && b.fraction >= a.fraction) {
    const double len = net.segment(a.segment).length_m;
    leg.pieces.push_back({a.segment, a.fraction, b.fraction, (b.fraction - a.fraction) * len});
    return leg;
  }
  JunctionId start = a.junction;
  if (a.on_segment) {
    const auto& seg = net.segment(a.segment);
    leg.pieces.push_back({a.segment, a.fraction, 1.0, (1.0 - a.fraction) * seg.length_m});
    start = seg.to;
  }
  const JunctionId end = b.on_segment ? net.segment(b.segment).from : b.junction;
  auto path = net.shortest_path(start, end);
  if (!path) return std::nullopt;
  for (SegmentId sid : path->segments) leg.pieces.push_back({sid, 0.0, 1.0, net.segment(sid).length_m});
  leg.hops = static_cast<int>(path->segments.size());
  if (b.on_segment) {
    const auto& seg = net.segment(b.segment);
    leg.pieces.push_back({b.segment, 0.0, b.fraction, b.fraction * seg.length_m});
  }
  return leg;
}

/// Accumulates pieces with their durations and folds them into traversals.
class RunBuilder {
 public:
  explicit RunBuilder(double t0) : t0_(t0) {}

  void add_interval(const std::vector<Piece>& pieces, double rel_start, double rel_end) {
    double total = 0.0;
    for (const auto& p : pieces) total += p.length;
    const double dt = rel_end - rel_start;
    if (!(total > 0.0)) {
      pending_ += dt;  // stationary between fixes: bill the dwell to the next movement
      return;
    }
    double cum = 0.0;
    double prev_t = rel_start;
    bool first = true;
    for (std::size_t k = 0; k < pieces.size(); ++k) {
      const auto& p = pieces[k];
      if (!(p.length > 0.0)) continue;
      cum += p.length;
      const double end_t = (k + 1 == pieces.size()) ? rel_end : rel_start + dt * (cum / total);
      double duration = end_t - prev_t;
      if (first) {
        duration += pending_;
        pending_ = 0.0;
        first = false;
      }
      append(p, end_t, duration);
      prev_t = end_t;
    }
  }

  MatchRun finish() {
    if (!run_.empty() && pending_ > 0.0) {
      run_.back().travel_time += pending_;
      run_.back().exit = t0_ + (rel_exit_ + pending_);
    }
    pending_ = 0.0;
    return std::move(run_);
  }

 private:
  void append(const Piece& p, double rel_to, double duration) {
    const bool continues = !run_.empty() && run_.back().segment == p.segment && last_f1_ == p.f0 && p.f0 < 1.0;
    if (continues) {
      run_.back().travel_time += duration;
      run_.back().exit = t0_ + rel_to;
    } else {
      // Dwell billed to this piece happened before it started moving.
      const double rel_enter = rel_to - duration;
      run_.push_back({p.segment, t0_ + rel_enter, t0_ + rel_to, duration});
    }
    last_f1_ = p.f1;
    rel_exit_ = rel_to;
  }

  double t0_;
  double pending_ = 0.0;
  double last_f1_ = 0.0;
  double rel_exit_ = 0.0;
  MatchRun run_;
};

}  // namespace detail

/// Greedy nearest-candidate matching with a continuity preference. Gaps between
/// consecutive matches are joined by shortest paths; an unroutable gap starts a new run.
inline std::vector<MatchRun> map_match(const RoadNetwork& net, const Trip& trip, const MatchOptions& opt = {}) {
  if (!(opt.radius_m > 0.0)) throw Error("map_match: radius must be positive");
  std::vector<MatchRun> runs;
  if (trip.points.size() < 2) return runs;
  const double t0 = trip.points.front().tau;

  std::optional<detail::Location> prev;
  double prev_rel = 0.0;
  std::optional<detail::RunBuilder> builder;
  auto close_run = [&] {
    if (builder) {
      auto run = builder->finish();
      if (!run.empty()) runs.push_back(std::move(run));
      builder.reset();
    }
  };

  for (const auto& pt : trip.points) {
    const auto cands = detail::locations_for(net, pt, opt);
    if (cands.empty()) continue;
    const double rel = pt.tau - t0;
    if (!prev) {
      prev = cands.front();
      prev_rel = rel;
      builder.emplace(t0);
      continue;
    }
    // Backwards jitter along the same segment is treated as standing still.
    std::optional<detail::Location> chosen;
    std::optional<detail::Leg> leg;
    for (const auto& c : cands) {
      detail::Location target = c;
      if (prev->on_segment && c.on_segment && prev->segment == c.segment && c.fraction < prev->fraction &&
          (prev->fraction - c.fraction) * net.segment(c.segment).length_m <= opt.snap_m)
        target = *prev;
      auto l = detail::route_between(net, *prev, target);
      if (l && l->hops <= opt.max_hops) {
        chosen = target;
        leg = std::move(l);
        break;
      }
    }
    if (!chosen) {
      chosen = cands.front();
      leg = detail::route_between(net, *prev, *chosen);
      if (!leg) {
        close_run();
        prev = chosen;
        prev_rel = rel;
        builder.emplace(t0);
        continue;
      }
    }
    builder->add_interval(leg->pieces, prev_rel, rel);
    prev = chosen;
    prev_rel = rel;
  }
  close_run();
  return runs;
}

/// One report per traversal; the report enters the system when the traversal completes.
inline std::vector<TravelTimeReport> allocate_travel_times(const std::string& trip_id,
                                                           const std::vector<MatchRun>& runs) {
  std::vector<TravelTimeReport> out;
  for (const auto& run : runs)
    for (const auto& m : run) {
      if (!(m.travel_time > 0.0)) continue;
      out.push_back({trip_id, m.segment, m.travel_time, m.exit});
    }
  return out;
}

struct TripParseResult {
  std::vector<Trip> trips;
  std::vector<csv::Diagnostic> diagnostics;
};

/// Reads `trip_id,lon,lat,t`. Bad rows are skipped and reported with their line number.
inline TripParseResult parse_trips(std::istream& in) {
  TripParseResult res;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  std::unordered_set<std::string> closed;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (!csv::header_matches(line, {"trip_id", "lon", "lat", "t"})) {
        res.diagnostics.push_back({lineno, "bad header, expected trip_id,lon,lat,t"});
        // Treat the line as data only if it parses; otherwise skip it.
      } else {
        continue;
      }
    }
    const auto cols = csv::split(line);
    if (cols.size() != 4) {
      res.diagnostics.push_back({lineno, "expected 4 columns"});
      continue;
    }
    GpsPoint p;
    const std::string id(csv::trim(cols[0]));
    if (id.empty() || !parse_double(cols[1], p.lon) || !parse_double(cols[2], p.lat) ||
        !parse_double(cols[3], p.tau)) {
      res.diagnostics.push_back({lineno, "unparseable value"});
      continue;
    }
    if (p.lon < -180.0 || p.lon > 180.0 || p.lat < -90.0 || p.lat > 90.0) {
      res.diagnostics.push_back({lineno, "coordinates out of range"});
      continue;
    }
    if (res.trips.empty() || res.trips.back().trip_id != id) {
      if (closed.count(id)) {
        res.diagnostics.push_back({lineno, "rows of trip '" + id + "' are not contiguous"});
        continue;
      }
      if (!res.trips.empty()) closed.insert(res.trips.back().trip_id);
      res.trips.push_back({id, {}});
    }
    auto& trip = res.trips.back();
    if (!trip.points.empty() && !(p.tau > trip.points.back().tau)) {
      res.diagnostics.push_back({lineno, "timestamp not strictly increasing"});
      continue;
    }
    trip.points.push_back(p);
  }
  return res;
}

struct IngestResult {
  ReportLog log;
  std::vector<csv::Diagnostic> diagnostics;
};

inline IngestResult ingest_trips(const RoadNetwork& net, std::istream& in, const MatchOptions& opt = {}) {
  auto parsed = parse_trips(in);
  IngestResult res;
  res.diagnostics = std::move(parsed.diagnostics);
  for (const auto& trip : parsed.trips) {
    auto reports = allocate_travel_times(trip.trip_id, map_match(net, trip, opt));
    res.log.reports.insert(res.log.reports.end(), reports.begin(), reports.end());
  }
  res.log.sort();
  return res;
}

inline IngestResult ingest_trips(const RoadNetwork& net, const std::string& path, const MatchOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trips file " + path);
  return ingest_trips(net, in, opt);
}

inline void write_trips(std::ostream& out, const std::vector<Trip>& trips) {
  out << "trip_id,lon,lat,t\n";
  for (const auto& trip : trips)
    for (const auto& p : trip.points)
      out << trip.trip_id << ',' << format_double(p.lon) << ',' << format_double(p.lat) << ',' << format_double(p.tau)
          << '\n';
}

inline void save_trips(const std::vector<Trip>& trips, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write trips file " + path);
  write_trips(out, trips);
}

inline void write_reports(std::ostream& out, const ReportLog& log) {
  out << "trip_id,segment_id,travel_time_s,t\n";
  for (const auto& r : log.reports)
    out << r.trip_id << ',' << r.segment_id << ',' << format_double(r.travel_time_s) << ','
        << format_double(r.tau) << '\n';
}

inline void save_reports(const ReportLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write reports file " + path);
  write_reports(out, log);
}

struct ReportParseResult {
  ReportLog log;
  std::vector<csv::Diagnostic> diagnostics;
};

inline ReportParseResult parse_reports(std::istream& in) {
  ReportParseResult res;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (csv::header_matches(line, {"trip_id", "segment_id", "travel_time_s", "t"})) continue;
      res.diagnostics.push_back({lineno, "bad header, expected trip_id,segment_id,travel_time_s,t"});
    }
    const auto cols = csv::split(line);
    TravelTimeReport r;
    if (cols.size() != 4 || !parse_int(cols[1], r.segment_id) || !parse_double(cols[2], r.travel_time_s) ||
        !parse_double(cols[3], r.tau) || r.segment_id < 0 || !(r.travel_time_s > 0.0)) {
      res.diagnostics.push_back({lineno, "malformed report row"});
      continue;
    }
    r.trip_id = std::string(csv::trim(cols[0]));
    res.log.reports.push_back(std::move(r));
  }
  res.log.sort();
  return res;
}

inline ReportParseResult load_reports(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open reports file " + path);
  return parse_reports(in);
}

}  // namespace ttf
