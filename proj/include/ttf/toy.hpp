#pragma once

#include <vector>

#include "ttf/model.hpp"
#include "ttf/optim.hpp"
#include "ttf/prep.hpp"

namespace ttf {

/// Random window batches over `num_segments` segments: each segment is present
/// with probability `presence` (at least one per batch), z-values standard normal.
inline std::vector<WindowBatch> random_batches(std::size_t count, std::size_t num_segments, double presence,
                                               SplitMix64& rng) {
  std::vector<WindowBatch> out(count);
  for (std::size_t w = 0; w < count; ++w) {
    auto& b = out[w];
    b.window = w;
    for (std::size_t s = 0; s < num_segments; ++s)
      if (rng.uniform() < presence) b.segment_ids.push_back(static_cast<SegmentId>(s));
    if (b.empty()) b.segment_ids.push_back(static_cast<SegmentId>(rng.below(num_segments)));
    for (std::size_t k = 0; k < b.size(); ++k) b.z_values.push_back(rng.normal());
  }
  return out;
}

/// A tiny model, L input windows and one target window, all seeded.
struct ToyProblem {
  TrafficTransformer model;
  std::vector<WindowBatch> inputs;
  WindowBatch target;

  static ToyProblem make(std::uint64_t seed, std::size_t d = 4, std::size_t h = 2, std::size_t N = 2, std::size_t L = 3,
                         std::size_t num_segments = 6) {
    ModelConfig cfg;
    cfg.d = d;
    cfg.h = h;
    cfg.N = N;
    cfg.L = L;
    cfg.num_segments = num_segments;
    ToyProblem p;
    p.model = TrafficTransformer::create(cfg, seed);
    SplitMix64 rng = SplitMix64(seed).split(0x70f);
    // Unit-scale embeddings and head mixers in [-1.5, 1.5].
    for (auto& v : p.model.embedding.value.values()) v = rng.normal();
    for (Param* prm : p.model.params())
      if (prm->name.ends_with(".wo2"))
        for (auto& v : prm->value.values()) v = rng.uniform(-1.5, 1.5);
    p.inputs = random_batches(L, num_segments, 0.6, rng);
    p.target = random_batches(1, num_segments, 0.6, rng).front();
    p.target.window = L;
    return p;
  }

  Var loss(Tape& tape) {
    auto state = recurrent_forward(tape, model, inputs);
    Var pred = forecast(tape, model, state, target.segment_ids);
    const std::vector<char> mask(target.size(), 1);
    return mse_masked(pred, Tensor::column(target.z_values), mask);
  }
};

/// Full-model gradient check at d=4, h=2, N=2, L=3, |E|=6.
inline GradcheckReport model_gradcheck(std::uint64_t seed, const GradcheckOptions& opt = {}) {
  ToyProblem p = ToyProblem::make(seed);
  auto params = p.model.params();
  return gradcheck([&p](Tape& t) { return p.loss(t); }, params, opt);
}

}  // namespace ttf
