#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ttf/common.hpp"

namespace ttf {

struct Junction {
  JunctionId id = 0;
  double lon = 0.0;
  double lat = 0.0;
};

struct RoadSegment {
  SegmentId id = 0;
  JunctionId from = 0;
  JunctionId to = 0;
  double length_m = 0.0;
};

/// Planar position in meters relative to the network's reference point.
struct PlanarPoint {
  double x = 0.0;
  double y = 0.0;
};

/// Ordered, connected segment sequence plus its total length.
struct Route {
  std::vector<SegmentId> segments;
  double distance_m = 0.0;
};

/// A segment within the search radius of a query point.
struct Candidate {
  SegmentId segment = 0;
  double distance_m = 0.0;
  double fraction = 0.0;  ///< position of the foot of the perpendicular, 0 = from, 1 = to
};

inline constexpr double kEarthRadiusM = 6371008.8;
inline constexpr double kMetersPerDegree = kEarthRadiusM * M_PI / 180.0;

/// Directed road graph. Immutable once constructed; every query is a const read.
class RoadNetwork {
 public:
  RoadNetwork() = default;

  RoadNetwork(std::vector<Junction> junctions, std::vector<RoadSegment> segments)
      : junctions_(std::move(junctions)), segments_(std::move(segments)) {
    build();
  }

  static RoadNetwork from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("junctions") || !j.contains("segments") ||
        !j["junctions"].is_array() || !j["segments"].is_array())
      throw Error("malformed network: expected object with 'junctions' and 'segments' arrays");
    std::vector<Junction> junctions;
    std::vector<RoadSegment> segments;
    try {
      for (const auto& jn : j["junctions"])
        junctions.push_back({jn.at("id").get<JunctionId>(), jn.at("lon").get<double>(),
                             jn.at("lat").get<double>()});
      for (const auto& s : j["segments"])
        segments.push_back({s.at("id").get<SegmentId>(), s.at("from").get<JunctionId>(),
                            s.at("to").get<JunctionId>(), s.at("length_m").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("malformed network: ") + e.what());
    }
    return RoadNetwork(std::move(junctions), std::move(segments));
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["junctions"] = nlohmann::json::array();
    for (const auto& jn : junctions_)
      j["junctions"].push_back({{"id", jn.id}, {"lon", jn.lon}, {"lat", jn.lat}});
    j["segments"] = nlohmann::json::array();
    for (const auto& s : segments_)
      j["segments"].push_back({{"id", s.id}, {"from", s.from}, {"to", s.to}, {"length_m", s.length_m}});
    return j;
  }

  std::size_t junction_count() const { return junctions_.size(); }
  std::size_t segment_count() const { return segments_.size(); }
  const std::vector<Junction>& junctions() const { return junctions_; }
  const std::vector<RoadSegment>& segments() const { return segments_; }

  const RoadSegment& segment(SegmentId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= segments_.size())
      throw Error("unknown segment id " + std::to_string(id));
    return segments_[static_cast<std::size_t>(id)];
  }

  bool has_junction(JunctionId id) const { return index_.count(id) != 0; }

  const Junction& junction(JunctionId id) const { return junctions_[junction_index(id)]; }

  std::span<const SegmentId> out_segments(JunctionId id) const { return out_adj_[junction_index(id)]; }
  std::span<const SegmentId> in_segments(JunctionId id) const { return in_adj_[junction_index(id)]; }

  /// Segments sharing a junction with `id` (predecessors and successors), ascending, without `id`.
  std::vector<SegmentId> neighbors(SegmentId id) const {
    const auto& s = segment(id);
    std::vector<SegmentId> out;
    for (JunctionId j : {s.from, s.to}) {
      for (SegmentId n : in_segments(j)) out.push_back(n);
      for (SegmentId n : out_segments(j)) out.push_back(n);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    std::erase(out, id);
    return out;
  }

  PlanarPoint project(double lon, double lat) const {
    return {(lon - ref_lon_) * kMetersPerDegree * cos_ref_lat_, (lat - ref_lat_) * kMetersPerDegree};
  }

  /// Inverse of project().
  std::pair<double, double> unproject(PlanarPoint p) const {
    return {ref_lon_ + p.x / (kMetersPerDegree * cos_ref_lat_), ref_lat_ + p.y / kMetersPerDegree};
  }

  double reference_latitude() const { return ref_lat_; }

  /// Dijkstra on length_m. `from == to` yields an empty route of distance 0.
  std::optional<Route> shortest_path(JunctionId from, JunctionId to) const {
    const std::size_t src = junction_index(from);
    const std::size_t dst = junction_index(to);
    if (src == dst) return Route{};

    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(junctions_.size(), inf);
    std::vector<SegmentId> via(junctions_.size(), -1);
    std::vector<char> settled(junctions_.size(), 0);
    using Item = std::pair<double, JunctionId>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist[src] = 0.0;
    queue.push({0.0, junctions_[src].id});
    while (!queue.empty()) {
      const auto [d, jid] = queue.top();
      queue.pop();
      const std::size_t u = junction_index(jid);
      if (settled[u]) continue;
      settled[u] = 1;
      if (u == dst) break;
      for (SegmentId sid : out_adj_[u]) {
        const auto& seg = segments_[static_cast<std::size_t>(sid)];
        const std::size_t v = junction_index(seg.to);
        if (settled[v]) continue;
        const double nd = d + seg.length_m;
        // Equal-length alternatives resolve toward the smaller predecessor junction id.
        const bool better = nd < dist[v] ||
                            (nd == dist[v] && via[v] >= 0 &&
                             jid < segments_[static_cast<std::size_t>(via[v])].from);
        if (better) {
          dist[v] = nd;
          via[v] = sid;
          queue.push({nd, seg.to});
        }
      }
    }
    if (!settled[dst]) return std::nullopt;
    Route route;
    route.distance_m = dist[dst];
    for (std::size_t cur = dst; cur != src;) {
      const SegmentId sid = via[cur];
      route.segments.push_back(sid);
      cur = junction_index(segments_[static_cast<std::size_t>(sid)].from);
    }
    std::reverse(route.segments.begin(), route.segments.end());
    return route;
  }

  /// Segments whose straight-line geometry lies within radius_m of the point,
  /// nearest first; distances equal to 1e-9 m are ordered by segment id.
  std::vector<Candidate> project_point(double lon, double lat, double radius_m) const {
    if (!(radius_m > 0.0)) throw Error("project_point: radius must be positive");
    const PlanarPoint p = project(lon, lat);
    std::vector<Candidate> out;
    for (const auto& seg : segments_) {
      const PlanarPoint a = planar_[junction_index(seg.from)];
      const PlanarPoint b = planar_[junction_index(seg.to)];
      const double dx = b.x - a.x;
      const double dy = b.y - a.y;
      const double len2 = dx * dx + dy * dy;
      double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double fx = a.x + t * dx - p.x;
      const double fy = a.y + t * dy - p.y;
      const double d = std::sqrt(fx * fx + fy * fy);
      if (d <= radius_m) out.push_back({seg.id, d, t});
    }
    std::sort(out.begin(), out.end(), [](const Candidate& x, const Candidate& y) {
      const double kx = std::round(x.distance_m * 1e9);
      const double ky = std::round(y.distance_m * 1e9);
      if (kx != ky) return kx < ky;
      return x.segment < y.segment;
    });
    return out;
  }

  /// True iff the sequence is non-empty, uses valid ids and is connected end to start.
  bool is_connected_path(std::span<const SegmentId> path) const {
    if (path.empty()) return false;
    for (SegmentId id : path)
      if (id < 0 || static_cast<std::size_t>(id) >= segments_.size()) return false;
    for (std::size_t k = 0; k + 1 < path.size(); ++k)
      if (segment(path[k]).to != segment(path[k + 1]).from) return false;
    return true;
  }

  /// Same junctions with every segment reversed.
  RoadNetwork mirrored() const {
    auto segs = segments_;
    for (auto& s : segs) std::swap(s.from, s.to);
    return RoadNetwork(junctions_, std::move(segs));
  }

 private:
  std::size_t junction_index(JunctionId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error("unknown junction id " + std::to_string(id));
    return it->second;
  }

  void build() {
    for (std::size_t i = 0; i < junctions_.size(); ++i) {
      const auto& jn = junctions_[i];
      if (!(jn.lon >= -180.0 && jn.lon <= 180.0 && jn.lat >= -90.0 && jn.lat <= 90.0))
        throw Error("junction " + std::to_string(jn.id) + " has out-of-range coordinates");
      if (!index_.emplace(jn.id, i).second)
        throw Error("duplicate junction id " + std::to_string(jn.id));
    }
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      const auto& s = segments_[i];
      if (s.id != static_cast<SegmentId>(i))
        throw Error("non-contiguous segment ids: expected " + std::to_string(i) + ", found " +
                    std::to_string(s.id));
      if (!index_.count(s.from) || !index_.count(s.to))
        throw Error("dangling reference: segment " + std::to_string(s.id) + " references an unknown junction");
      if (s.from == s.to) throw Error("segment " + std::to_string(s.id) + " is a self-loop");
      if (!(s.length_m > 0.0) || !std::isfinite(s.length_m))
        throw Error("segment " + std::to_string(s.id) + " must have positive length");
    }
    out_adj_.assign(junctions_.size(), {});
    in_adj_.assign(junctions_.size(), {});
    for (const auto& s : segments_) {
      out_adj_[index_.at(s.from)].push_back(s.id);
      in_adj_[index_.at(s.to)].push_back(s.id);
    }
    if (!junctions_.empty()) {
      double lat_sum = 0.0;
      double lon_sum = 0.0;
      for (const auto& jn : junctions_) {
        lat_sum += jn.lat;
        lon_sum += jn.lon;
      }
      ref_lat_ = lat_sum / static_cast<double>(junctions_.size());
      ref_lon_ = lon_sum / static_cast<double>(junctions_.size());
    }
    cos_ref_lat_ = std::cos(ref_lat_ * M_PI / 180.0);
    planar_.clear();
    for (const auto& jn : junctions_) planar_.push_back(project(jn.lon, jn.lat));
  }

  std::vector<Junction> junctions_;
  std::vector<RoadSegment> segments_;
  std::unordered_map<JunctionId, std::size_t> index_;
  std::vector<std::vector<SegmentId>> out_adj_;
  std::vector<std::vector<SegmentId>> in_adj_;
  std::vector<PlanarPoint> planar_;
  double ref_lat_ = 0.0;
  double ref_lon_ = 0.0;
  double cos_ref_lat_ = 1.0;
};

inline RoadNetwork load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open network file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed network file " + path + ": " + e.what());
  }
  return RoadNetwork::from_json(j);
}

inline void save_network(const RoadNetwork& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write network file " + path);
  out << net.to_json().dump(1) << '\n';
}

}  // namespace ttf
