#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "apgan/data.hpp"
#include "apgan/layers.hpp"
#include "apgan/param.hpp"
#include "apgan/tensor.hpp"

namespace apgan {

// Ablation baselines. `full` is the complete pipeline: prefix-mean pooling,
// two-layer LSTM residual estimation and the additive skip.
enum class Variant { scp, lstm, lstm_scp, full };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::scp: return "scp";
    case Variant::lstm: return "lstm";
    case Variant::lstm_scp: return "lstm-scp";
    case Variant::full: return "full";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "scp") return Variant::scp;
  if (s == "lstm") return Variant::lstm;
  if (s == "lstm-scp") return Variant::lstm_scp;
  if (s == "full") return Variant::full;
  throw std::invalid_argument("unknown variant '" + s + "' (scp|lstm|lstm-scp|full)");
}

struct ModelDims {
  std::size_t d_raw = 32;
  std::size_t d_enc = 64;     // encoder hidden width
  std::size_t d_feat = 64;    // segment feature dimension
  std::size_t d_hidden = 64;  // LSTM hidden size
  std::size_t width1 = 128;   // first hidden width of discriminator/perceptual
  std::size_t width2 = 64;    // second hidden width
  std::size_t n_classes = 8;
  std::size_t segments = 10;  // K

  bool operator==(const ModelDims&) const = default;
};

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

// Segment encoder (the CNN stand-in), two-layer LSTM residual estimator and
// the residual projection back to feature space.
struct GeneratorNet {
  LinearLayer enc1;  // d_raw -> d_enc
  LinearLayer enc2;  // d_enc -> d_feat
  LstmCellParams lstm1;  // d_feat -> d_hidden
  LstmCellParams lstm2;  // d_hidden -> d_hidden
  LinearLayer proj;  // d_hidden -> d_feat

  GeneratorNet() = default;
  explicit GeneratorNet(const ModelDims& d)
      : enc1("gen.enc1", d.d_raw, d.d_enc),
        enc2("gen.enc2", d.d_enc, d.d_feat),
        lstm1("gen.lstm1", d.d_feat, d.d_hidden),
        lstm2("gen.lstm2", d.d_hidden, d.d_hidden),
        proj("gen.proj", d.d_hidden, d.d_feat) {}

  void init(Rng& rng) {
    enc1.init(rng);
    enc2.init(rng);
    lstm1.init(rng);
    lstm2.init(rng);
    proj.init(rng);
  }

  std::vector<Parameter*> encoder_parameters() {
    return {&enc1.w, &enc1.b, &enc2.w, &enc2.b};
  }
  std::vector<Parameter*> sequence_parameters() {
    return {&lstm1.w_x, &lstm1.w_h, &lstm1.bias, &lstm2.w_x, &lstm2.w_h, &lstm2.bias,
            &proj.w, &proj.b};
  }
  std::vector<Parameter*> parameters() {
    auto p = encoder_parameters();
    auto s = sequence_parameters();
    p.insert(p.end(), s.begin(), s.end());
    return p;
  }
};

// Two hidden relu layers and a single sigmoid unit.
struct DiscriminatorNet {
  LinearLayer fc1, fc2, out;

  DiscriminatorNet() = default;
  explicit DiscriminatorNet(const ModelDims& d)
      : fc1("disc.fc1", d.d_feat, d.width1),
        fc2("disc.fc2", d.width1, d.width2),
        out("disc.out", d.width2, 1) {}

  void init(Rng& rng) {
    fc1.init(rng);
    fc2.init(rng);
    out.init(rng);
  }
  std::vector<Parameter*> parameters() {
    return {&fc1.w, &fc1.b, &fc2.w, &fc2.b, &out.w, &out.b};
  }
};

// Two hidden relu layers and a C-way softmax classification layer.
struct PerceptualNet {
  LinearLayer fc1, fc2, out;

  PerceptualNet() = default;
  explicit PerceptualNet(const ModelDims& d)
      : fc1("perc.fc1", d.d_feat, d.width1),
        fc2("perc.fc2", d.width1, d.width2),
        out("perc.out", d.width2, d.n_classes) {}

  void init(Rng& rng) {
    fc1.init(rng);
    fc2.init(rng);
    out.init(rng);
  }
  std::vector<Parameter*> parameters() {
    return {&fc1.w, &fc1.b, &fc2.w, &fc2.b, &out.w, &out.b};
  }
};

struct ModelBundle {
  ModelDims dims;
  Variant variant = Variant::full;
  GeneratorNet gen;
  DiscriminatorNet disc;
  PerceptualNet perc;

  ModelBundle() = default;
  ModelBundle(const ModelDims& d, Variant v) : dims(d), variant(v), gen(d), disc(d), perc(d) {}

  void init(std::uint64_t seed) {
    Rng rng(seed);
    gen.init(rng);
    disc.init(rng);
    perc.init(rng);
  }

  std::vector<Parameter*> parameters() {
    auto p = gen.parameters();
    for (Parameter* q : disc.parameters()) p.push_back(q);
    for (Parameter* q : perc.parameters()) p.push_back(q);
    return p;
  }
};

// ---------------------------------------------------------------------------
// Sequential context pooling (prefix mean)
// ---------------------------------------------------------------------------

// m_i = (1/i) * sum_{j<=i} f_j, rowwise over a k x d matrix.
inline Tensor sequential_context_pool(const Tensor& f) {
  if (f.rank() != 2 || f.rows() == 0) {
    throw ShapeError("sequential_context_pool: need a non-empty k x d matrix, got " + f.shape_str());
  }
  const std::size_t k = f.rows();
  const std::size_t d = f.cols();
  Tensor m({k, d});
  std::vector<double> running(d, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const double* fi = f.row(i);
    double* mi = m.row(i);
    const double inv = 1.0 / static_cast<double>(i + 1);
    for (std::size_t j = 0; j < d; ++j) {
      running[j] += fi[j];
      mi[j] = running[j] * inv;
    }
  }
  return m;
}

// df_j = sum_{i>=j} dm_i / i  (suffix accumulation of the averaged upstream).
inline Tensor sequential_context_pool_backward(const Tensor& d_m) {
  const std::size_t k = d_m.rows();
  const std::size_t d = d_m.cols();
  Tensor df({k, d});
  std::vector<double> acc(d, 0.0);
  for (std::size_t i = k; i-- > 0;) {
    const double* g = d_m.row(i);
    const double inv = 1.0 / static_cast<double>(i + 1);
    double* o = df.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      acc[j] += g[j] * inv;
      o[j] = acc[j];
    }
  }
  return df;
}

// ---------------------------------------------------------------------------
// Segment encoder
// ---------------------------------------------------------------------------

struct EncoderCache {
  Tensor raw;  // k x d_raw
  Tensor z1;   // k x d_enc pre-activation
  Tensor a1;   // k x d_enc post-relu
};

inline Tensor encode_segments(const Tensor& raw, const GeneratorNet& g, EncoderCache* cache = nullptr) {
  if (raw.rank() != 2 || raw.rows() == 0) {
    throw ShapeError("encode_segments: need at least one segment, got " + raw.shape_str());
  }
  Tensor z1 = linear_forward(raw, g.enc1);
  Tensor a1 = activation_forward(z1, Activation::relu);
  Tensor f = linear_forward(a1, g.enc2);
  if (cache != nullptr) {
    cache->raw = raw;
    cache->z1 = std::move(z1);
    cache->a1 = std::move(a1);
  }
  return f;
}

inline Tensor encoder_backward(const Tensor& d_feats, GeneratorNet& g, const EncoderCache& cache) {
  Tensor da1 = linear_backward(cache.a1, d_feats, g.enc2);
  Tensor dz1 = activation_backward(cache.z1, cache.a1, da1, Activation::relu);
  return linear_backward(cache.raw, dz1, g.enc1);
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

struct GeneratorCache {
  Variant variant = Variant::full;
  bool has_encoder = false;
  EncoderCache enc;
  Tensor feats;   // k x d_feat
  Tensor pooled;  // k x d_feat (unused by the plain-lstm variant)
  std::vector<LstmStepCache> steps1, steps2;
  Tensor final_h;  // d_hidden, projection input
};

namespace detail {

inline Tensor tensor_row(const Tensor& m, std::size_t r) {
  Tensor out({m.cols()});
  const double* src = m.row(r);
  for (std::size_t j = 0; j < m.cols(); ++j) out[j] = src[j];
  return out;
}

}  // namespace detail

// Feature of a partial view given already-encoded segment features
// (k x d_feat). Runs the variant-specific wiring.
inline Tensor generator_forward_from_feats(const Tensor& feats, const GeneratorNet& g, Variant variant,
                                           GeneratorCache* cache = nullptr) {
  if (feats.rank() != 2 || feats.rows() == 0) {
    throw ShapeError("generator_forward: need at least one segment feature");
  }
  const std::size_t k = feats.rows();
  const std::size_t d_feat = feats.cols();
  const std::size_t d_h = g.lstm1.hidden_size();

  if (cache != nullptr) {
    cache->variant = variant;
    cache->feats = feats;
    cache->steps1.clear();
    cache->steps2.clear();
  }

  Tensor pooled;
  const bool uses_pooling = variant != Variant::lstm;
  if (uses_pooling) {
    pooled = sequential_context_pool(feats);
    if (cache != nullptr) cache->pooled = pooled;
  }

  if (variant == Variant::scp) {
    return detail::tensor_row(pooled, k - 1);
  }

  const Tensor& inputs = uses_pooling ? pooled : feats;
  LstmState s1{Tensor({d_h}), Tensor({d_h})};
  LstmState s2{Tensor({d_h}), Tensor({d_h})};
  if (cache != nullptr) {
    cache->steps1.resize(k);
    cache->steps2.resize(k);
  }
  for (std::size_t t = 0; t < k; ++t) {
    const Tensor x = detail::tensor_row(inputs, t);
    s1 = lstm_cell_forward(x, s1.h, s1.c, g.lstm1, cache ? &cache->steps1[t] : nullptr);
    s2 = lstm_cell_forward(s1.h, s2.h, s2.c, g.lstm2, cache ? &cache->steps2[t] : nullptr);
  }
  if (cache != nullptr) cache->final_h = s2.h;

  Tensor h_row({1, d_h}, s2.h.values());
  Tensor residual = linear_forward(h_row, g.proj);  // 1 x d_feat

  Tensor out({d_feat});
  if (variant == Variant::full) {
    const double* mk = pooled.row(k - 1);
    for (std::size_t j = 0; j < d_feat; ++j) out[j] = mk[j] + residual[j];
  } else {
    for (std::size_t j = 0; j < d_feat; ++j) out[j] = residual[j];
  }
  return out;
}

// Encodes raw segments first; the common inference entry point.
inline Tensor generator_forward(const Tensor& raw, const GeneratorNet& g, Variant variant,
                                GeneratorCache* cache = nullptr) {
  EncoderCache enc;
  Tensor feats = encode_segments(raw, g, cache ? &enc : nullptr);
  Tensor out = generator_forward_from_feats(feats, g, variant, cache);
  if (cache != nullptr) {
    cache->has_encoder = true;
    cache->enc = std::move(enc);
  }
  return out;
}

// Accumulates gradients for every generator parameter on the active variant
// path. Returns d_loss/d_raw when the cache went through the encoder,
// otherwise d_loss/d_feats.
inline Tensor generator_backward(const Tensor& d_out, GeneratorNet& g, const GeneratorCache& cache) {
  const std::size_t k = cache.feats.rows();
  const std::size_t d_feat = cache.feats.cols();
  const std::size_t d_h = g.lstm1.hidden_size();
  const bool uses_pooling = cache.variant != Variant::lstm;
  const bool uses_lstm = cache.variant != Variant::scp;

  Tensor d_inputs({k, d_feat});  // gradient wrt the LSTM input rows (pooled or raw feats)

  if (uses_lstm) {
    // proj
    Tensor h_row({1, d_h}, cache.final_h.values());
    Tensor d_res({1, d_feat}, d_out.values());
    Tensor d_final = linear_backward(h_row, d_res, g.proj);  // 1 x d_h

    // BPTT through the two-layer stack
    Tensor dh2({d_h}), dc2({d_h}), dh1_carry({d_h}), dc1_carry({d_h});
    for (std::size_t j = 0; j < d_h; ++j) dh2[j] = d_final[j];
    for (std::size_t t = k; t-- > 0;) {
      LstmCellGrads g2 = lstm_cell_backward(dh2, dc2, g.lstm2, cache.steps2[t]);
      Tensor dh1 = std::move(g2.dx);
      add_inplace(dh1, dh1_carry);
      LstmCellGrads g1 = lstm_cell_backward(dh1, dc1_carry, g.lstm1, cache.steps1[t]);
      double* row = d_inputs.row(t);
      for (std::size_t j = 0; j < d_feat; ++j) row[j] = g1.dx[j];
      dh1_carry = std::move(g1.dh_prev);
      dc1_carry = std::move(g1.dc_prev);
      dh2 = std::move(g2.dh_prev);
      dc2 = std::move(g2.dc_prev);
    }
  }

  Tensor d_feats;
  if (uses_pooling) {
    // d_inputs is d(loss)/d(pooled); the skip connection adds d_out at m_k.
    if (cache.variant == Variant::full || cache.variant == Variant::scp) {
      double* last = d_inputs.row(k - 1);
      for (std::size_t j = 0; j < d_feat; ++j) last[j] += d_out[j];
    }
    d_feats = sequential_context_pool_backward(d_inputs);
  } else {
    d_feats = std::move(d_inputs);
  }

  if (!cache.has_encoder) return d_feats;
  return encoder_backward(d_feats, g, cache.enc);
}

// Feature of a complete video: the prefix mean over all K encoded segments,
// no residual.
inline Tensor full_video_feature(const FeatureSequence& seq, const GeneratorNet& g,
                                 std::size_t expected_segments, EncoderCache* cache = nullptr) {
  if (seq.segments.rows() != expected_segments) {
    throw ShapeError("full_video_feature: sequence " + std::to_string(seq.id) + " has " +
                     std::to_string(seq.segments.rows()) + " segments, expected " +
                     std::to_string(expected_segments));
  }
  Tensor feats = encode_segments(seq.segments, g, cache);
  const std::size_t k = feats.rows();
  const std::size_t d = feats.cols();
  Tensor z({d});
  for (std::size_t i = 0; i < k; ++i) {
    const double* fi = feats.row(i);
    for (std::size_t j = 0; j < d; ++j) z[j] += fi[j];
  }
  scale_inplace(z, 1.0 / static_cast<double>(k));
  return z;
}

// ---------------------------------------------------------------------------
// Discriminator / perceptual heads
// ---------------------------------------------------------------------------

struct MlpHeadCache {
  Tensor input;
  Tensor z1, a1, z2, a2, z3, y;
};

// Probability per row that the feature comes from the full-video distribution.
inline Tensor discriminate(const Tensor& feats, const DiscriminatorNet& d,
                           MlpHeadCache* cache = nullptr) {
  Tensor z1 = linear_forward(feats, d.fc1);
  Tensor a1 = activation_forward(z1, Activation::relu);
  Tensor z2 = linear_forward(a1, d.fc2);
  Tensor a2 = activation_forward(z2, Activation::relu);
  Tensor z3 = linear_forward(a2, d.out);  // batch x 1
  Tensor y = activation_forward(z3, Activation::sigmoid);

  Tensor probs({feats.rows()});
  for (std::size_t i = 0; i < feats.rows(); ++i) probs[i] = y[i];
  if (cache != nullptr) {
    cache->input = feats;
    cache->z1 = std::move(z1);
    cache->a1 = std::move(a1);
    cache->z2 = std::move(z2);
    cache->a2 = std::move(a2);
    cache->z3 = std::move(z3);
    cache->y = std::move(y);
  }
  return probs;
}

inline Tensor discriminate_backward(const Tensor& d_probs, DiscriminatorNet& d,
                                    const MlpHeadCache& cache) {
  const std::size_t batch = cache.input.rows();
  Tensor dy({batch, 1}, d_probs.values());
  Tensor dz3 = activation_backward(cache.z3, cache.y, dy, Activation::sigmoid);
  Tensor da2 = linear_backward(cache.a2, dz3, d.out);
  Tensor dz2 = activation_backward(cache.z2, cache.a2, da2, Activation::relu);
  Tensor da1 = linear_backward(cache.a1, dz2, d.fc2);
  Tensor dz1 = activation_backward(cache.z1, cache.a1, da1, Activation::relu);
  return linear_backward(cache.input, dz1, d.fc1);
}

// Softmax class scores per row.
inline Tensor classify(const Tensor& feats, const PerceptualNet& p, MlpHeadCache* cache = nullptr) {
  Tensor z1 = linear_forward(feats, p.fc1);
  Tensor a1 = activation_forward(z1, Activation::relu);
  Tensor z2 = linear_forward(a1, p.fc2);
  Tensor a2 = activation_forward(z2, Activation::relu);
  Tensor z3 = linear_forward(a2, p.out);
  Tensor y = activation_forward(z3, Activation::softmax_rows);
  if (cache != nullptr) {
    cache->input = feats;
    cache->z1 = std::move(z1);
    cache->a1 = std::move(a1);
    cache->z2 = std::move(z2);
    cache->a2 = std::move(a2);
    cache->z3 = std::move(z3);
    cache->y = y;
  }
  return y;
}

inline Tensor classify_backward(const Tensor& d_probs, PerceptualNet& p, const MlpHeadCache& cache) {
  Tensor dz3 = activation_backward(cache.z3, cache.y, d_probs, Activation::softmax_rows);
  Tensor da2 = linear_backward(cache.a2, dz3, p.out);
  Tensor dz2 = activation_backward(cache.z2, cache.a2, da2, Activation::relu);
  Tensor da1 = linear_backward(cache.a1, dz2, p.fc2);
  Tensor dz1 = activation_backward(cache.z1, cache.a1, da1, Activation::relu);
  return linear_backward(cache.input, dz1, p.fc1);
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct Prediction {
  std::size_t label = 0;
  Tensor scores;  // C softmax scores
};

inline std::size_t argmax_lowest_tie(const Tensor& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// Classification of a partial view. The discriminator plays no part here.
inline Prediction predict(const PartialView& view, const ModelBundle& bundle) {
  if (view.progress < 1 || view.progress > bundle.dims.segments) {
    throw std::invalid_argument("predict: progress level " + std::to_string(view.progress) +
                                " outside [1," + std::to_string(bundle.dims.segments) + "]");
  }
  Tensor feat = generator_forward(view.segments, bundle.gen, bundle.variant);
  Tensor row({1, feat.size()}, feat.values());
  Tensor probs = classify(row, bundle.perc);
  Prediction out;
  out.scores = Tensor({probs.cols()});
  for (std::size_t j = 0; j < probs.cols(); ++j) out.scores[j] = probs.at(0, j);
  out.label = argmax_lowest_tie(out.scores);
  return out;
}

// Late fusion of two score vectors over the same classes.
inline Prediction fuse_scores(const Tensor& s_a, const Tensor& s_b) {
  if (s_a.rank() != 1 || s_b.rank() != 1 || s_a.size() != s_b.size()) {
    throw ShapeError("fuse_scores: score lengths differ, " + s_a.shape_str() + " vs " +
                     s_b.shape_str());
  }
  Prediction out;
  out.scores = s_a;
  add_inplace(out.scores, s_b);
  out.label = argmax_lowest_tie(out.scores);
  return out;
}

}  // namespace apgan
