#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ttf/ttf.hpp"

namespace testing_helpers {

inline std::string data_path(const std::string& name) { return std::string(TTF_TEST_DATA) + "/" + name; }

inline ttf::RoadNetwork grid3x3() { return ttf::load_network(data_path("grid3x3.json")); }

/// Straight east-west chain of `n` segments, each `len` metres, at latitude 0.
inline ttf::RoadNetwork chain(std::size_t n, double len = 100.0) {
  std::vector<ttf::Junction> js;
  for (std::size_t i = 0; i <= n; ++i)
    js.push_back({static_cast<ttf::JunctionId>(i), static_cast<double>(i) * len / ttf::kMetersPerDegree, 0.0});
  std::vector<ttf::RoadSegment> ss;
  for (std::size_t i = 0; i < n; ++i)
    ss.push_back({static_cast<ttf::SegmentId>(i), static_cast<ttf::JunctionId>(i),
                  static_cast<ttf::JunctionId>(i + 1), len});
  return ttf::RoadNetwork(std::move(js), std::move(ss));
}

inline ttf::GpsPoint at_planar(const ttf::RoadNetwork& net, double x, double y, double tau) {
  auto [lon, lat] = net.unproject({x, y});
  return {lon, lat, tau};
}

inline ttf::GpsPoint at_junction(const ttf::RoadNetwork& net, ttf::JunctionId j, double tau) {
  const auto& jn = net.junction(j);
  return {jn.lon, jn.lat, tau};
}

class TempDir {
 public:
  TempDir() {
    char tmpl[] = "/tmp/ttf_test_XXXXXX";
    path_ = mkdtemp(tmpl);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::string operator/(const std::string& name) const { return path_ + "/" + name; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace testing_helpers
