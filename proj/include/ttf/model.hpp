#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttf/autodiff.hpp"
#include "ttf/common.hpp"
#include "ttf/prep.hpp"
#include "ttf/tensor.hpp"

namespace ttf {

struct ModelConfig {
  std::size_t d = 16;
  std::size_t h = 4;
  std::size_t N = 2;
  std::size_t L = 8;
  std::size_t d_ff = 0;  ///< 0 selects 4 d
  std::size_t num_segments = 0;

  std::size_t ffn_width() const { return d_ff == 0 ? 4 * d : d_ff; }

  void validate() const {
    if (d < 1 || h < 1 || N < 1 || L < 1) throw Error("model config: d, h, N and L must be at least 1");
    if (ffn_width() < d) throw Error("model config: d_ff must be at least d");
    if (num_segments < 1) throw Error("model config: the network must have at least one segment");
  }
};

/// Per-head query/key/value projections (each d x d) and the two output mixers.
/// `wo2` holds one scalar per head: the travel-time output is
/// Concat(head_1 T, ..., head_h T) * wo2 with wo2 of shape h x 1.
struct AttentionParams {
  std::vector<Param> wq, wk, wv;
  Param wo1;  ///< (h d) x d
  Param wo2;  ///< h x 1
};

struct FeedForwardParams {
  Param w1, b1, w2, b2;
};

struct NormParams {
  Param gain, bias;
};

struct EncoderBlockParams {
  AttentionParams self;
  FeedForwardParams ffn;
  NormParams ln1, ln2;
};

struct DecoderBlockParams {
  AttentionParams self;
  AttentionParams cross;
  FeedForwardParams ffn;
  NormParams ln1, ln2, ln3;
};

inline constexpr double kLayerNormEps = 1e-6;

namespace detail {

inline Tensor xavier(std::size_t rows, std::size_t cols, SplitMix64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t = Tensor::matrix(rows, cols);
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

inline AttentionParams make_attention(const std::string& prefix, const ModelConfig& c, SplitMix64& rng) {
  AttentionParams p;
  for (std::size_t i = 0; i < c.h; ++i) p.wq.emplace_back(prefix + ".wq." + std::to_string(i), xavier(c.d, c.d, rng));
  for (std::size_t i = 0; i < c.h; ++i) p.wk.emplace_back(prefix + ".wk." + std::to_string(i), xavier(c.d, c.d, rng));
  for (std::size_t i = 0; i < c.h; ++i) p.wv.emplace_back(prefix + ".wv." + std::to_string(i), xavier(c.d, c.d, rng));
  p.wo1 = Param(prefix + ".wo1", xavier(c.h * c.d, c.d, rng));
  Tensor w2 = Tensor::matrix(c.h, 1);
  for (auto& v : w2.values()) v = rng.uniform(-0.5, 0.5) / static_cast<double>(c.h);
  p.wo2 = Param(prefix + ".wo2", std::move(w2));
  return p;
}

inline FeedForwardParams make_ffn(const std::string& prefix, const ModelConfig& c, SplitMix64& rng) {
  const std::size_t f = c.ffn_width();
  return {Param(prefix + ".w1", xavier(c.d, f, rng)), Param(prefix + ".b1", Tensor::matrix(1, f)),
          Param(prefix + ".w2", xavier(f, c.d, rng)), Param(prefix + ".b2", Tensor::matrix(1, c.d))};
}

inline NormParams make_norm(const std::string& prefix, const ModelConfig& c) {
  return {Param(prefix + ".gain", Tensor::matrix(1, c.d, 1.0)), Param(prefix + ".bias", Tensor::matrix(1, c.d))};
}

inline void collect(AttentionParams& a, std::vector<Param*>& out) {
  for (auto& p : a.wq) out.push_back(&p);
  for (auto& p : a.wk) out.push_back(&p);
  for (auto& p : a.wv) out.push_back(&p);
  out.push_back(&a.wo1);
  out.push_back(&a.wo2);
}

inline void collect(FeedForwardParams& f, std::vector<Param*>& out) {
  for (Param* p : {&f.w1, &f.b1, &f.w2, &f.b2}) out.push_back(p);
}

inline void collect(NormParams& n, std::vector<Param*>& out) {
  out.push_back(&n.gain);
  out.push_back(&n.bias);
}

}  // namespace detail

/// Encoder stack and cell decoder shared across the L recurrent steps, plus N
/// distinct forecasting decoder blocks.
struct TrafficTransformer {
  ModelConfig config;
  Param embedding;  ///< |E| x d
  std::vector<EncoderBlockParams> encoder;
  DecoderBlockParams cell;
  std::vector<DecoderBlockParams> forecaster;

  /// Random initialization; the embedding table comes from `table` when given.
  static TrafficTransformer create(const ModelConfig& cfg, std::uint64_t seed,
                                   const std::optional<Tensor>& table = std::nullopt) {
    cfg.validate();
    TrafficTransformer m;
    m.config = cfg;
    SplitMix64 rng(seed);
    if (table) {
      if (table->rank() != 2 || table->rows() != cfg.num_segments || table->cols() != cfg.d)
        throw Error("embedding table must be " + std::to_string(cfg.num_segments) + " x " + std::to_string(cfg.d) +
                    ", got " + table->shape_string());
      m.embedding = Param("embedding", *table);
    } else {
      Tensor t = Tensor::matrix(cfg.num_segments, cfg.d);
      for (auto& v : t.values()) v = rng.uniform(-0.1, 0.1);
      m.embedding = Param("embedding", std::move(t));
    }
    for (std::size_t b = 0; b < cfg.N; ++b) {
      const std::string p = "encoder." + std::to_string(b);
      EncoderBlockParams e;
      e.self = detail::make_attention(p + ".self", cfg, rng);
      e.ffn = detail::make_ffn(p + ".ffn", cfg, rng);
      e.ln1 = detail::make_norm(p + ".ln1", cfg);
      e.ln2 = detail::make_norm(p + ".ln2", cfg);
      m.encoder.push_back(std::move(e));
    }
    m.cell = make_decoder("cell", cfg, rng);
    for (std::size_t b = 0; b < cfg.N; ++b) m.forecaster.push_back(make_decoder("forecaster." + std::to_string(b), cfg, rng));
    return m;
  }

  /// Every trainable tensor in checkpoint order: embedding, encoder blocks,
  /// cell decoder, forecasting decoder blocks. Within a block: attention
  /// (wq, wk, wv per head, wo1, wo2; self before cross), feed-forward
  /// (w1, b1, w2, b2), then layer norms in application order (gain, bias).
  std::vector<Param*> params() {
    std::vector<Param*> out{&embedding};
    for (auto& e : encoder) {
      detail::collect(e.self, out);
      detail::collect(e.ffn, out);
      detail::collect(e.ln1, out);
      detail::collect(e.ln2, out);
    }
    collect_decoder(cell, out);
    for (auto& f : forecaster) collect_decoder(f, out);
    return out;
  }

  std::vector<const Param*> params() const {
    auto ps = const_cast<TrafficTransformer*>(this)->params();
    return {ps.begin(), ps.end()};
  }

  /// Zeroes every attention output mixer and feed-forward weight/bias, so each
  /// block passes travel times through unchanged and only normalizes embeddings.
  void zero_update_paths() {
    auto zero_att = [](AttentionParams& a) {
      a.wo1.value.fill(0.0);
      a.wo2.value.fill(0.0);
    };
    auto zero_ffn = [](FeedForwardParams& f) {
      for (Param* p : {&f.w1, &f.b1, &f.w2, &f.b2}) p->value.fill(0.0);
    };
    for (auto& e : encoder) {
      zero_att(e.self);
      zero_ffn(e.ffn);
    }
    for (DecoderBlockParams* dec : decoders()) {
      zero_att(dec->self);
      zero_att(dec->cross);
      zero_ffn(dec->ffn);
    }
  }

  std::vector<DecoderBlockParams*> decoders() {
    std::vector<DecoderBlockParams*> out{&cell};
    for (auto& f : forecaster) out.push_back(&f);
    return out;
  }

 private:
  static DecoderBlockParams make_decoder(const std::string& p, const ModelConfig& cfg, SplitMix64& rng) {
    DecoderBlockParams dec;
    dec.self = detail::make_attention(p + ".self", cfg, rng);
    dec.cross = detail::make_attention(p + ".cross", cfg, rng);
    dec.ffn = detail::make_ffn(p + ".ffn", cfg, rng);
    dec.ln1 = detail::make_norm(p + ".ln1", cfg);
    dec.ln2 = detail::make_norm(p + ".ln2", cfg);
    dec.ln3 = detail::make_norm(p + ".ln3", cfg);
    return dec;
  }

  static void collect_decoder(DecoderBlockParams& dec, std::vector<Param*>& out) {
    detail::collect(dec.self, out);
    detail::collect(dec.cross, out);
    detail::collect(dec.ffn, out);
    detail::collect(dec.ln1, out);
    detail::collect(dec.ln2, out);
    detail::collect(dec.ln3, out);
  }
};

// ---------------------------------------------------------------------------
// Forward pass building blocks. Embeddings are rows x d, travel times rows x 1.

struct BlockOutput {
  Var emb;
  Var tt;
};

/// Multi-head masked set attention producing an embedding update and a
/// travel-time update. Masked key/value rows receive exactly zero weight.
inline BlockOutput sparse_set_attention(Tape& tape, AttentionParams& p, Var q_emb, Var kv_emb, Var kv_tt,
                                        std::span<const char> kv_mask) {
  const std::size_t heads = p.wq.size();
  const std::size_t d = q_emb.cols();
  if (kv_emb.rows() != kv_tt.rows() || kv_tt.cols() != 1 || kv_mask.size() != kv_emb.rows())
    throw Error("sparse_set_attention: key/value embeddings, travel times and mask disagree in length");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Var> values, times;
  values.reserve(heads);
  times.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    Var q = matmul(q_emb, tape.param(p.wq[i]));
    Var k = matmul(kv_emb, tape.param(p.wk[i]));
    Var v = matmul(kv_emb, tape.param(p.wv[i]));
    Var head = row_softmax_masked(matmul_nt(q, k, inv_sqrt_d), kv_mask);
    values.push_back(matmul(head, v));
    times.push_back(matmul(head, kv_tt));
  }
  return {matmul(concat_cols(values), tape.param(p.wo1)), matmul(concat_cols(times), tape.param(p.wo2))};
}

inline Var feed_forward(Tape& tape, FeedForwardParams& f, Var x) {
  Var hidden = relu(add_row(matmul(x, tape.param(f.w1)), tape.param(f.b1)));
  return add_row(matmul(hidden, tape.param(f.w2)), tape.param(f.b2));
}

inline Var norm(Tape& tape, NormParams& n, Var x) {
  return layer_norm(x, tape.param(n.gain), tape.param(n.bias), kLayerNormEps);
}

inline BlockOutput encoder_block(Tape& tape, EncoderBlockParams& p, Var emb, Var tt, std::span<const char> mask) {
  auto [a, ta] = sparse_set_attention(tape, p.self, emb, emb, tt, mask);
  Var e1 = norm(tape, p.ln1, add(emb, a));
  Var e2 = norm(tape, p.ln2, add(e1, feed_forward(tape, p.ffn, e1)));
  return {e2, add(tt, ta)};
}

/// Self-attention over the queries, then cross-attention into an encoded set.
inline BlockOutput decoder_block(Tape& tape, DecoderBlockParams& p, Var q_emb, Var q_tt, Var enc_emb, Var enc_tt,
                                 std::span<const char> enc_mask) {
  const std::vector<char> q_mask(q_emb.rows(), 1);
  auto [a1, t1] = sparse_set_attention(tape, p.self, q_emb, q_emb, q_tt, q_mask);
  Var e1 = norm(tape, p.ln1, add(q_emb, a1));
  auto [a2, t2] = sparse_set_attention(tape, p.cross, e1, enc_emb, enc_tt, enc_mask);
  Var e2 = norm(tape, p.ln2, add(e1, a2));
  Var e3 = norm(tape, p.ln3, add(e2, feed_forward(tape, p.ffn, e2)));
  return {e3, add(add(q_tt, t1), t2)};
}

struct EncodedWindow {
  Var emb;
  Var tt;
  std::vector<char> mask;
};

/// Embedding lookup for the window's segments followed by the N encoder blocks.
inline EncodedWindow encoder_stack(Tape& tape, TrafficTransformer& model, const WindowBatch& batch) {
  if (batch.empty()) throw Error("encoder_stack: empty window batch");
  EncodedWindow out;
  out.mask.assign(batch.size(), 1);
  out.emb = gather_rows(tape.param(model.embedding), batch.segment_ids);
  out.tt = tape.constant(Tensor::column(batch.z_values));
  for (auto& block : model.encoder) {
    auto [e, t] = encoder_block(tape, block, out.emb, out.tt, out.mask);
    out.emb = e;
    out.tt = t;
  }
  return out;
}

/// Running state over all |E| segments.
struct HiddenState {
  Var emb;
  Var tt;
};

/// Per-step values recorded by recurrent_forward for inspection.
struct RecurrentTrace {
  std::vector<Tensor> encoder_emb;  ///< one entry per non-empty window, oldest first
  std::vector<Tensor> state_tt;     ///< state travel times after every window (including bypassed ones)
};

inline HiddenState initial_state(Tape& tape, TrafficTransformer& model) {
  return {tape.param(model.embedding), tape.constant(Tensor::matrix(model.config.num_segments, 1))};
}

/// Folds the windows (oldest first) into the hidden state. Empty windows leave the state unchanged.
inline HiddenState recurrent_forward(Tape& tape, TrafficTransformer& model, std::span<const WindowBatch> windows,
                                     RecurrentTrace* trace = nullptr) {
  HiddenState state = initial_state(tape, model);
  for (const auto& batch : windows) {
    if (!batch.empty()) {
      EncodedWindow enc = encoder_stack(tape, model, batch);
      if (trace) trace->encoder_emb.push_back(enc.emb.value());
      auto [e, t] = decoder_block(tape, model.cell, state.emb, state.tt, enc.emb, enc.tt, enc.mask);
      state = {e, t};
    }
    if (trace) trace->state_tt.push_back(state.tt.value());
  }
  return state;
}

/// z-space predictions for the next window, one per query segment (m x 1).
inline Var forecast(Tape& tape, TrafficTransformer& model, const HiddenState& state,
                    std::span<const SegmentId> query_segments) {
  if (query_segments.empty()) throw Error("forecast: no query segments");
  for (SegmentId s : query_segments)
    if (s < 0 || static_cast<std::size_t>(s) >= model.config.num_segments)
      throw Error("forecast: unknown segment id " + std::to_string(s));
  Var q_emb = gather_rows(tape.param(model.embedding), query_segments);
  Var q_tt = tape.constant(Tensor::matrix(query_segments.size(), 1));
  const std::vector<char> all(model.config.num_segments, 1);
  for (auto& block : model.forecaster) {
    auto [e, t] = decoder_block(tape, block, q_emb, q_tt, state.emb, state.tt, all);
    q_emb = e;
    q_tt = t;
  }
  return q_tt;
}

/// Inference helper: one forecast without recording gradients.
inline std::vector<double> predict(TrafficTransformer& model, std::span<const WindowBatch> windows,
                                   std::span<const SegmentId> query_segments) {
  Tape tape(false);
  auto state = recurrent_forward(tape, model, windows);
  const auto& v = forecast(tape, model, state, query_segments).value();
  return v.values();
}

inline std::vector<SegmentId> all_segments(std::size_t n) {
  std::vector<SegmentId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<SegmentId>(i);
  return ids;
}

/// Iterated one-step forecasts: each forecast becomes a full-coverage window
/// appended to the input while the oldest window drops out. Returns H x |E|.
inline Tensor rollout(TrafficTransformer& model, std::span<const WindowBatch> windows, std::size_t H) {
  if (H < 1) throw Error("rollout: H must be at least 1");
  const std::size_t n = model.config.num_segments;
  const auto ids = all_segments(n);
  std::vector<WindowBatch> current(windows.begin(), windows.end());
  Tensor out = Tensor::matrix(H, n);
  for (std::size_t step = 0; step < H; ++step) {
    const auto z = predict(model, current, ids);
    std::copy(z.begin(), z.end(), out.row(step).begin());
    if (step + 1 == H) break;
    WindowBatch synthetic;
    synthetic.window = current.empty() ? step : current.back().window + 1;
    synthetic.segment_ids = ids;
    synthetic.z_values = z;
    if (!current.empty()) current.erase(current.begin());
    current.push_back(std::move(synthetic));
  }
  return out;
}

}  // namespace ttf
