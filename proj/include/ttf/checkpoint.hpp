#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttf/common.hpp"
#include "ttf/model.hpp"

namespace ttf {

/// Binary model file, little-endian:
///   "TTFC" | u32 version | u32 n | n bytes of JSON hyperparameters
///   then for every tensor in TrafficTransformer::params() order:
///   u32 rank | rank x u32 dims | raw f64 values
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : b_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_++])) << (8 * i);
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_++])) << (8 * i);
    return std::bit_cast<double>(v);
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw Error("checkpoint is truncated");
  }

  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline nlohmann::ordered_json hyperparameters_json(const ModelConfig& c, std::size_t tensors) {
  return {{"d", c.d}, {"h", c.h}, {"N", c.N}, {"L", c.L}, {"d_ff", c.ffn_width()}, {"num_segments", c.num_segments},
          {"tensors", tensors}};
}

inline std::string serialize_checkpoint(TrafficTransformer& model) {
  const auto params = model.params();
  std::string out = "TTFC";
  detail::put_u32(out, kCheckpointVersion);
  const std::string header = hyperparameters_json(model.config, params.size()).dump();
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const Param* p : params) {
    const auto& shape = p->value.shape();
    detail::put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto dim : shape) detail::put_u32(out, static_cast<std::uint32_t>(dim));
    for (double v : p->value.values()) detail::put_f64(out, v);
  }
  return out;
}

inline TrafficTransformer deserialize_checkpoint(const std::string& bytes) {
  detail::ByteReader in(bytes);
  if (bytes.size() < 4 || in.bytes(4) != "TTFC") throw Error("not a model checkpoint (bad magic)");
  const auto version = in.u32();
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = in.u32();
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(in.bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  ModelConfig cfg;
  std::size_t tensors = 0;
  try {
    cfg.d = h.at("d").get<std::size_t>();
    cfg.h = h.at("h").get<std::size_t>();
    cfg.N = h.at("N").get<std::size_t>();
    cfg.L = h.at("L").get<std::size_t>();
    cfg.d_ff = h.at("d_ff").get<std::size_t>();
    cfg.num_segments = h.at("num_segments").get<std::size_t>();
    tensors = h.at("tensors").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint header is missing hyperparameters: ") + e.what());
  }
  TrafficTransformer model = TrafficTransformer::create(cfg, 0);
  auto params = model.params();
  if (params.size() != tensors) throw Error("checkpoint tensor count does not match its hyperparameters");
  for (Param* p : params) {
    const auto rank = in.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& dim : shape) dim = in.u32();
    if (shape != p->value.shape())
      throw Error("checkpoint tensor " + p->name + " has an unexpected shape");
    for (auto& v : p->value.values()) v = in.f64();
    Tape::check_finite(p->value, "checkpoint load");
  }
  if (!in.done()) throw Error("checkpoint has trailing bytes");
  return model;
}

inline void save_checkpoint(TrafficTransformer& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path);
  const auto bytes = serialize_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline TrafficTransformer load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace ttf
