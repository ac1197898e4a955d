#include <gtest/gtest.h>

#include <functional>
#include <limits>

#include "helpers.hpp"

using namespace ttf;
using namespace testing_helpers;

namespace {

// Exhaustive simple-path search, used as the shortest-path oracle.
double brute_force_distance(const RoadNetwork& net, JunctionId from, JunctionId to) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<char> seen(net.junction_count(), 0);
  std::function<void(JunctionId, double)> dfs = [&](JunctionId j, double acc) {
    if (j == to) {
      best = std::min(best, acc);
      return;
    }
    seen[static_cast<std::size_t>(j)] = 1;
    for (SegmentId s : net.out_segments(j)) {
      const auto& seg = net.segment(s);
      if (!seen[static_cast<std::size_t>(seg.to)]) dfs(seg.to, acc + seg.length_m);
    }
    seen[static_cast<std::size_t>(j)] = 0;
  };
  dfs(from, 0.0);
  return best;
}

}  // namespace

TEST(RoadNetwork, LoadsMinimalNetwork) {
  RoadNetwork net({{0, 23.7, 37.9}, {1, 23.701, 37.9}}, {{0, 0, 1, 88.0}});
  EXPECT_EQ(net.junction_count(), 2u);
  EXPECT_EQ(net.segment_count(), 1u);
  EXPECT_EQ(net.out_segments(0).size(), 1u);
  EXPECT_EQ(net.in_segments(1).size(), 1u);
}

TEST(RoadNetwork, RejectsDanglingReference) {
  try {
    RoadNetwork net({{0, 0.0, 0.0}}, {{0, 0, 5, 10.0}});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("dangling reference"), std::string::npos);
  }
}

TEST(RoadNetwork, RejectsNonContiguousIds) {
  try {
    RoadNetwork net({{0, 0.0, 0.0}, {1, 0.001, 0.0}}, {{0, 0, 1, 10.0}, {2, 1, 0, 10.0}});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("non-contiguous segment ids"), std::string::npos);
  }
}

TEST(RoadNetwork, RejectsMalformedJson) {
  EXPECT_THROW(RoadNetwork::from_json(nlohmann::json::array()), Error);
  EXPECT_THROW(RoadNetwork::from_json({{"junctions", nlohmann::json::array()}}), Error);
}

TEST(RoadNetwork, GridFixture) {
  const auto net = grid3x3();
  EXPECT_EQ(net.junction_count(), 9u);
  EXPECT_EQ(net.segment_count(), 24u);
}

TEST(RoadNetwork, JsonRoundTrip) {
  const auto net = grid3x3();
  const auto back = RoadNetwork::from_json(net.to_json());
  ASSERT_EQ(back.segment_count(), net.segment_count());
  for (std::size_t i = 0; i < net.segment_count(); ++i) {
    EXPECT_EQ(back.segments()[i].from, net.segments()[i].from);
    EXPECT_EQ(back.segments()[i].to, net.segments()[i].to);
    EXPECT_EQ(back.segments()[i].length_m, net.segments()[i].length_m);
  }
}

TEST(ShortestPath, SameJunctionIsEmpty) {
  const auto net = grid3x3();
  auto r = net.shortest_path(4, 4);
  ASSERT_TRUE(r);
  EXPECT_TRUE(r->segments.empty());
  EXPECT_EQ(r->distance_m, 0.0);
}

TEST(ShortestPath, Chain) {
  const auto net = chain(5);
  auto r = net.shortest_path(0, 5);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->segments, (std::vector<SegmentId>{0, 1, 2, 3, 4}));
  EXPECT_DOUBLE_EQ(r->distance_m, 500.0);
  EXPECT_FALSE(net.shortest_path(5, 0));
}

TEST(ShortestPath, GridCornerToCorner) {
  const auto net = grid3x3();
  auto r = net.shortest_path(0, 8);
  ASSERT_TRUE(r);
  EXPECT_DOUBLE_EQ(r->distance_m, 400.0);
  EXPECT_DOUBLE_EQ(brute_force_distance(net, 0, 8), 400.0);
  EXPECT_TRUE(net.is_connected_path(r->segments));
  EXPECT_EQ(net.segment(r->segments.front()).from, 0);
  EXPECT_EQ(net.segment(r->segments.back()).to, 8);
}

TEST(ShortestPath, AgreesWithEnumerationOnAllPairs) {
  const auto net = grid3x3();
  for (JunctionId a = 0; a < 9; ++a)
    for (JunctionId b = 0; b < 9; ++b) {
      auto r = net.shortest_path(a, b);
      ASSERT_TRUE(r);
      EXPECT_DOUBLE_EQ(r->distance_m, a == b ? 0.0 : brute_force_distance(net, a, b)) << a << "->" << b;
      double sum = 0.0;
      for (SegmentId s : r->segments) sum += net.segment(s).length_m;
      EXPECT_DOUBLE_EQ(sum, r->distance_m);
    }
}

TEST(ShortestPath, MirrorSymmetry) {
  const auto net = grid3x3();
  const auto mir = net.mirrored();
  for (JunctionId a = 0; a < 9; ++a)
    for (JunctionId b = 0; b < 9; ++b) {
      auto fwd = net.shortest_path(a, b);
      auto back = mir.shortest_path(b, a);
      ASSERT_EQ(fwd.has_value(), back.has_value());
      if (fwd) EXPECT_DOUBLE_EQ(fwd->distance_m, back->distance_m);
    }
}

TEST(ShortestPath, UnknownJunction) {
  const auto net = grid3x3();
  try {
    (void)net.shortest_path(0, 42);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("unknown junction id 42"), std::string::npos);
  }
}

TEST(ProjectPoint, MidpointOfSegment) {
  const auto net = chain(1);
  const auto p = at_planar(net, 0.0, 0.0, 0.0);  // reference point is the chain midpoint
  auto c = net.project_point(p.lon, p.lat, 5.0);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].segment, 0);
  EXPECT_NEAR(c[0].distance_m, 0.0, 1e-6);
  EXPECT_NEAR(c[0].fraction, 0.5, 1e-9);
}

TEST(ProjectPoint, OutsideRadiusIsEmpty) {
  const auto net = chain(1);
  const auto p = at_planar(net, 0.0, 30.0, 0.0);
  EXPECT_TRUE(net.project_point(p.lon, p.lat, 20.0).empty());
  auto c = net.project_point(p.lon, p.lat, 40.0);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_NEAR(c[0].distance_m, 30.0, 1e-6);
}

TEST(ProjectPoint, EquidistantSegmentsOrderedById) {
  // Two parallel segments 20 m apart, the query point halfway between them.
  const double dlat = 10.0 / kMetersPerDegree;
  const double dlon = 100.0 / kMetersPerDegree;
  RoadNetwork net({{0, 0.0, dlat}, {1, dlon, dlat}, {2, 0.0, -dlat}, {3, dlon, -dlat}},
                  {{0, 2, 3, 100.0}, {1, 0, 1, 100.0}});
  auto c = net.project_point(dlon / 2, 0.0, 15.0);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].segment, 0);
  EXPECT_EQ(c[1].segment, 1);
  for (const auto& x : c) {
    EXPECT_LE(x.distance_m, 15.0);
    EXPECT_NEAR(x.distance_m, 10.0, 1e-6);
  }
}

TEST(ProjectPoint, DistancesWithinRadiusAndSorted) {
  const auto net = grid3x3();
  SplitMix64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto p = at_planar(net, rng.uniform(-150, 150), rng.uniform(-150, 150), 0.0);
    const double radius = rng.uniform(1.0, 80.0);
    auto c = net.project_point(p.lon, p.lat, radius);
    for (std::size_t k = 0; k < c.size(); ++k) {
      EXPECT_LE(c[k].distance_m, radius);
      EXPECT_GE(c[k].fraction, 0.0);
      EXPECT_LE(c[k].fraction, 1.0);
      if (k > 0) EXPECT_LE(c[k - 1].distance_m, c[k].distance_m + 1e-9);
    }
  }
}

TEST(ProjectPoint, RejectsNonPositiveRadius) {
  const auto net = chain(1);
  EXPECT_THROW((void)net.project_point(0.0, 0.0, 0.0), Error);
  EXPECT_THROW((void)net.project_point(0.0, 0.0, -1.0), Error);
}

TEST(RoadNetwork, ConnectedPathValidator) {
  const auto net = chain(3);
  EXPECT_TRUE(net.is_connected_path(std::vector<SegmentId>{0, 1, 2}));
  EXPECT_FALSE(net.is_connected_path(std::vector<SegmentId>{0, 2}));
  EXPECT_FALSE(net.is_connected_path(std::vector<SegmentId>{}));
  EXPECT_FALSE(net.is_connected_path(std::vector<SegmentId>{7}));
}

TEST(RoadNetwork, NeighborsFollowJunctions) {
  const auto net = grid3x3();
  for (const auto& s : net.segments())
    for (SegmentId n : net.neighbors(s.id)) {
      EXPECT_NE(n, s.id);
      const auto& o = net.segment(n);
      EXPECT_TRUE(o.from == s.from || o.from == s.to || o.to == s.from || o.to == s.to);
    }
}

TEST(RoadNetwork, ProjectUnprojectRoundTrip) {
  const auto net = grid3x3();
  for (const auto& j : net.junctions()) {
    auto [lon, lat] = net.unproject(net.project(j.lon, j.lat));
    EXPECT_NEAR(lon, j.lon, 1e-12);
    EXPECT_NEAR(lat, j.lat, 1e-12);
  }
}
