#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "apgan/model.hpp"

#include "oracles.hpp"

using namespace apgan;

namespace {

ModelDims tiny_dims() {
  return ModelDims{.d_raw = 4, .d_enc = 4, .d_feat = 4, .d_hidden = 5, .width1 = 6, .width2 = 5,
                   .n_classes = 3, .segments = 4};
}

void make_identity_encoder(GeneratorNet& gen, std::size_t d) {
  gen.enc1.w.value.fill(0.0);
  gen.enc2.w.value.fill(0.0);
  for (std::size_t i = 0; i < d; ++i) {
    gen.enc1.w.value.at(i, i) = 1.0;
    gen.enc2.w.value.at(i, i) = 1.0;
  }
  gen.enc1.b.value.fill(0.0);
  gen.enc2.b.value.fill(0.0);
}

Tensor oracle_generator_full(const Tensor& feats, const GeneratorNet& gen) {
  // chain the public cell op step by step over pooled inputs, then project
  // and add the skip, per the wiring diagram
  const Tensor pooled = oracle::prefix_mean(feats);
  const std::size_t k = feats.rows();
  const std::size_t d_h = gen.lstm1.hidden_size();
  Tensor h1({d_h}), c1({d_h}), h2({d_h}), c2({d_h});
  for (std::size_t t = 0; t < k; ++t) {
    Tensor x({feats.cols()});
    for (std::size_t j = 0; j < feats.cols(); ++j) x[j] = pooled.at(t, j);
    const LstmState s1 = lstm_cell_forward(x, h1, c1, gen.lstm1);
    const LstmState s2 = lstm_cell_forward(s1.h, h2, c2, gen.lstm2);
    h1 = s1.h;
    c1 = s1.c;
    h2 = s2.h;
    c2 = s2.c;
  }
  Tensor out({feats.cols()});
  for (std::size_t j = 0; j < feats.cols(); ++j) {
    double r = gen.proj.b.value[j];
    for (std::size_t p = 0; p < d_h; ++p) r += h2[p] * gen.proj.w.value.at(p, j);
    out[j] = pooled.at(k - 1, j) + r;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// sequential context pooling
// ---------------------------------------------------------------------------

TEST_CASE("pooling of a single segment is the segment itself", "[model]") {
  const Tensor f = Tensor::matrix(1, 3, {4, -1, 2});
  const Tensor m = sequential_context_pool(f);
  for (std::size_t j = 0; j < 3; ++j) REQUIRE(m.at(0, j) == f.at(0, j));
}

TEST_CASE("pooling two segments takes their arithmetic mean", "[model]") {
  const Tensor f = Tensor::matrix(2, 2, {2, 0, 0, 2});
  const Tensor m = sequential_context_pool(f);
  REQUIRE(m.at(1, 0) == 1.0);
  REQUIRE(m.at(1, 1) == 1.0);
}

TEST_CASE("pooling matches the brute-force prefix mean", "[model]") {
  Rng rng(10);
  const Tensor f = oracle::random_tensor({10, 8}, rng);
  const Tensor m = sequential_context_pool(f);
  const Tensor expected = oracle::prefix_mean(f);
  for (std::size_t i = 0; i < m.size(); ++i) {
    REQUIRE(m[i] == Catch::Approx(expected[i]).margin(1e-12));
  }
}

TEST_CASE("pooling satisfies the incremental-update identity", "[model][property]") {
  Rng rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    const Tensor f = oracle::random_tensor({7, 5}, rng);
    const Tensor m = sequential_context_pool(f);
    for (std::size_t i = 1; i < 7; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        const double inc =
            m.at(i - 1, j) + (f.at(i, j) - m.at(i - 1, j)) / static_cast<double>(i + 1);
        REQUIRE(m.at(i, j) == Catch::Approx(inc).margin(1e-10));
      }
    }
  }
}

TEST_CASE("pooling rejects empty input", "[model]") {
  REQUIRE_THROWS_AS(sequential_context_pool(Tensor({0, 3})), ShapeError);
}

// ---------------------------------------------------------------------------
// encoder
// ---------------------------------------------------------------------------

TEST_CASE("identity-initialized encoder passes non-negative input through", "[model]") {
  ModelDims dims = tiny_dims();
  GeneratorNet gen(dims);
  make_identity_encoder(gen, dims.d_feat);
  Rng rng(4);
  const Tensor raw = oracle::random_tensor({3, dims.d_raw}, rng, 0.0, 1.0);
  const Tensor f = encode_segments(raw, gen);
  for (std::size_t i = 0; i < raw.size(); ++i) REQUIRE(f[i] == raw[i]);
}

TEST_CASE("zero encoder weights produce the bias in every row", "[model]") {
  ModelDims dims = tiny_dims();
  GeneratorNet gen(dims);
  for (std::size_t j = 0; j < dims.d_feat; ++j) {
    gen.enc2.b.value[j] = 0.5 * static_cast<double>(j) - 1.0;
  }
  Rng rng(6);
  const Tensor raw = oracle::random_tensor({5, dims.d_raw}, rng);
  const Tensor f = encode_segments(raw, gen);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < dims.d_feat; ++j) {
      REQUIRE(f.at(i, j) == gen.enc2.b.value[j]);
    }
  }
}

TEST_CASE("random encoder matches the composed-linear oracle", "[model]") {
  ModelDims dims = tiny_dims();
  GeneratorNet gen(dims);
  Rng rng(8);
  gen.init(rng);
  const Tensor raw = oracle::random_tensor({3, dims.d_raw}, rng);
  const Tensor f = encode_segments(raw, gen);

  Tensor hidden = oracle::matmul(raw, gen.enc1.w.value);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < dims.d_enc; ++j) {
      hidden.at(i, j) = std::max(0.0, hidden.at(i, j) + gen.enc1.b.value[j]);
    }
  }
  const Tensor out = oracle::matmul(hidden, gen.enc2.w.value);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < dims.d_feat; ++j) {
      REQUIRE(f.at(i, j) == Catch::Approx(out.at(i, j) + gen.enc2.b.value[j]).margin(1e-12));
    }
  }
}

TEST_CASE("encoder rejects an empty view", "[model]") {
  GeneratorNet gen(tiny_dims());
  REQUIRE_THROWS_AS(encode_segments(Tensor({0, 4}), gen), ShapeError);
}

// ---------------------------------------------------------------------------
// generator
// ---------------------------------------------------------------------------

TEST_CASE("zero residual projection reduces the full variant to pooling", "[model]") {
  ModelDims dims = tiny_dims();
  GeneratorNet gen(dims);
  Rng rng(14);
  gen.init(rng);
  gen.proj.w.value.fill(0.0);
  gen.proj.b.value.fill(0.0);

  const Tensor raw = oracle::random_tensor({3, dims.d_raw}, rng);
  const Tensor feats = encode_segments(raw, gen);
  const Tensor pooled = sequential_context_pool(feats);
  const Tensor g = generator_forward(raw, gen, Variant::full);
  for (std::size_t j = 0; j < dims.d_feat; ++j) {
    REQUIRE(g[j] == pooled.at(2, j));
  }
}

TEST_CASE("full-length view with zero residual equals the full-video feature", "[model]") {
  ModelDims dims = tiny_dims();
  GeneratorNet gen(dims);
  Rng rng(15);
  gen.init(rng);
  gen.proj.w.value.fill(0.0);
  gen.proj.b.value.fill(0.0);

  FeatureSequence seq;
  seq.id = 1;
  seq.label = 0;
  seq.segments = oracle::random_tensor({dims.segments, dims.d_raw}, rng);
  const Tensor z = full_video_feature(seq, gen, dims.segments);
  const Tensor g = generator_forward(seq.segments, gen, Variant::full);
  for (std::size_t j = 0; j < dims.d_feat; ++j) {
    REQUIRE(g[j] == Catch::Approx(z[j]).margin(1e-12));
  }
}

TEST_CASE("generator matches the cell-chain oracle", "[model]") {
  ModelDims dims = tiny_dims();
  GeneratorNet gen(dims);
  Rng rng(16);
  gen.init(rng);
  const Tensor raw = oracle::random_tensor({3, dims.d_raw}, rng);
  const Tensor feats = encode_segments(raw, gen);
  const Tensor expected = oracle_generator_full(feats, gen);
  const Tensor g = generator_forward(raw, gen, Variant::full);
  for (std::size_t j = 0; j < dims.d_feat; ++j) {
    REQUIRE(g[j] == Catch::Approx(expected[j]).margin(1e-12));
  }
}

TEST_CASE("residual additivity: g - m_k equals the projection output", "[model]") {
  ModelDims dims = tiny_dims();
  GeneratorNet gen(dims);
  Rng rng(18);
  gen.init(rng);
  const Tensor raw = oracle::random_tensor({4, dims.d_raw}, rng);

  const Tensor g_full = generator_forward(raw, gen, Variant::full);
  const Tensor residual = generator_forward(raw, gen, Variant::lstm_scp);
  const Tensor pooled = sequential_context_pool(encode_segments(raw, gen));
  for (std::size_t j = 0; j < dims.d_feat; ++j) {
    REQUIRE(g_full[j] == Catch::Approx(pooled.at(3, j) + residual[j]).margin(1e-14));
  }
}

TEST_CASE("full video feature equals the last pooled row exactly", "[model]") {
  ModelDims dims = tiny_dims();
  GeneratorNet gen(dims);
  Rng rng(20);
  gen.init(rng);
  FeatureSequence seq;
  seq.segments = oracle::random_tensor({dims.segments, dims.d_raw}, rng);
  const Tensor z = full_video_feature(seq, gen, dims.segments);
  const Tensor pooled = sequential_context_pool(encode_segments(seq.segments, gen));
  for (std::size_t j = 0; j < dims.d_feat; ++j) {
    REQUIRE(z[j] == pooled.at(dims.segments - 1, j));
  }
}

TEST_CASE("full video feature hand cases", "[model]") {
  ModelDims dims = tiny_dims();
  dims.d_raw = dims.d_enc = dims.d_feat = 1;
  dims.segments = 2;
  GeneratorNet gen(dims);
  make_identity_encoder(gen, 1);
  FeatureSequence seq;
  seq.segments = Tensor::matrix(2, 1, {4.0, 0.0});
  const Tensor z = full_video_feature(seq, gen, 2);
  REQUIRE(z[0] == 2.0);

  FeatureSequence constant;
  constant.segments = Tensor::matrix(2, 1, {3.0, 3.0});
  REQUIRE(full_video_feature(constant, gen, 2)[0] == 3.0);

  FeatureSequence incomplete;
  incomplete.segments = Tensor::matrix(1, 1, {3.0});
  REQUIRE_THROWS_AS(full_video_feature(incomplete, gen, 2), ShapeError);
}

// ---------------------------------------------------------------------------
// heads
// ---------------------------------------------------------------------------

TEST_CASE("zero-weight discriminator outputs one half everywhere", "[model]") {
  ModelDims dims = tiny_dims();
  DiscriminatorNet disc(dims);
  Rng rng(22);
  const Tensor feats = oracle::random_tensor({6, dims.d_feat}, rng);
  const Tensor probs = discriminate(feats, disc);
  REQUIRE(probs.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) REQUIRE(probs[i] == 0.5);
}

TEST_CASE("scaling a positive-logit discriminator saturates toward 1", "[model]") {
  ModelDims dims = tiny_dims();
  DiscriminatorNet disc(dims);
  Rng rng(24);
  disc.init(rng);
  const Tensor feats = oracle::random_tensor({1, dims.d_feat}, rng);

  // force a positive logit by flipping the sign of the output weights if needed
  MlpHeadCache cache;
  discriminate(feats, disc, &cache);
  if (cache.z3.at(0, 0) < 0.0) {
    for (std::size_t i = 0; i < disc.out.w.value.size(); ++i) disc.out.w.value[i] *= -1.0;
    disc.out.b.value[0] *= -1.0;
  }
  const double before = discriminate(feats, disc)[0];
  for (std::size_t i = 0; i < disc.out.w.value.size(); ++i) disc.out.w.value[i] *= 50.0;
  disc.out.b.value[0] *= 50.0;
  const double after = discriminate(feats, disc)[0];
  REQUIRE(after > before);
  REQUIRE(after > 0.999);
}

TEST_CASE("zero-weight perceptual head is uniform over classes", "[model]") {
  ModelDims dims = tiny_dims();
  PerceptualNet perc(dims);
  Rng rng(26);
  const Tensor feats = oracle::random_tensor({3, dims.d_feat}, rng);
  const Tensor probs = classify(feats, perc);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    REQUIRE(probs[i] == Catch::Approx(1.0 / 3.0).margin(1e-15));
  }
}

TEST_CASE("heads match a composed-layer oracle", "[model]") {
  ModelDims dims = tiny_dims();
  DiscriminatorNet disc(dims);
  PerceptualNet perc(dims);
  Rng rng(28);
  disc.init(rng);
  perc.init(rng);
  const Tensor feats = oracle::random_tensor({2, dims.d_feat}, rng);

  auto hidden = [&](const LinearLayer& l1, const LinearLayer& l2) {
    Tensor h1 = oracle::matmul(feats, l1.w.value);
    for (std::size_t i = 0; i < h1.rows(); ++i)
      for (std::size_t j = 0; j < h1.cols(); ++j)
        h1.at(i, j) = std::max(0.0, h1.at(i, j) + l1.b.value[j]);
    Tensor h2 = oracle::matmul(h1, l2.w.value);
    for (std::size_t i = 0; i < h2.rows(); ++i)
      for (std::size_t j = 0; j < h2.cols(); ++j)
        h2.at(i, j) = std::max(0.0, h2.at(i, j) + l2.b.value[j]);
    return h2;
  };

  const Tensor dh = hidden(disc.fc1, disc.fc2);
  const Tensor d_probs = discriminate(feats, disc);
  for (std::size_t i = 0; i < 2; ++i) {
    double logit = disc.out.b.value[0];
    for (std::size_t p = 0; p < dims.width2; ++p) logit += dh.at(i, p) * disc.out.w.value.at(p, 0);
    REQUIRE(d_probs[i] == Catch::Approx(oracle::sigmoid(logit)).margin(1e-12));
  }

  const Tensor ph = hidden(perc.fc1, perc.fc2);
  const Tensor p_probs = classify(feats, perc);
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<double> logits(dims.n_classes);
    double total = 0.0;
    for (std::size_t c = 0; c < dims.n_classes; ++c) {
      logits[c] = perc.out.b.value[c];
      for (std::size_t p = 0; p < dims.width2; ++p) {
        logits[c] += ph.at(i, p) * perc.out.w.value.at(p, c);
      }
    }
    for (std::size_t c = 0; c < dims.n_classes; ++c) total += std::exp(logits[c]);
    for (std::size_t c = 0; c < dims.n_classes; ++c) {
      REQUIRE(p_probs.at(i, c) == Catch::Approx(std::exp(logits[c]) / total).margin(1e-12));
    }
  }
}

// ---------------------------------------------------------------------------
// predict / fuse
// ---------------------------------------------------------------------------

TEST_CASE("predict ignores the discriminator entirely", "[model]") {
  ModelDims dims = tiny_dims();
  Rng rng(30);
  for (int rep = 0; rep < 10; ++rep) {
    ModelBundle bundle(dims, Variant::full);
    bundle.init(rng.next_u64());
    PartialView view;
    view.progress = 2;
    view.label = 0;
    view.segments = oracle::random_tensor({2, dims.d_raw}, rng);

    const Prediction before = predict(view, bundle);
    for (Parameter* p : bundle.disc.parameters()) {
      for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = rng.uniform(-10.0, 10.0);
    }
    const Prediction after = predict(view, bundle);
    REQUIRE(before.label == after.label);
    for (std::size_t j = 0; j < before.scores.size(); ++j) {
      REQUIRE(before.scores[j] == after.scores[j]);
    }
  }
}

TEST_CASE("full variant with zero residual predicts like scp", "[model]") {
  ModelDims dims = tiny_dims();
  ModelBundle full(dims, Variant::full);
  full.init(404);
  full.gen.proj.w.value.fill(0.0);
  full.gen.proj.b.value.fill(0.0);

  ModelBundle scp(dims, Variant::scp);
  // share encoder and perceptual head
  for (std::size_t i = 0; i < full.gen.parameters().size(); ++i) {
    scp.gen.parameters()[i]->value = full.gen.parameters()[i]->value;
  }
  for (std::size_t i = 0; i < full.perc.parameters().size(); ++i) {
    scp.perc.parameters()[i]->value = full.perc.parameters()[i]->value;
  }

  Rng rng(32);
  for (int rep = 0; rep < 5; ++rep) {
    PartialView view;
    view.progress = 3;
    view.segments = oracle::random_tensor({3, dims.d_raw}, rng);
    const Prediction a = predict(view, full);
    const Prediction b = predict(view, scp);
    REQUIRE(a.label == b.label);
    for (std::size_t j = 0; j < a.scores.size(); ++j) REQUIRE(a.scores[j] == b.scores[j]);
  }
}

TEST_CASE("predict agrees with an end-to-end composed oracle", "[model]") {
  ModelDims dims = tiny_dims();
  ModelBundle bundle(dims, Variant::full);
  bundle.init(99);
  Rng rng(34);
  PartialView view;
  view.progress = 3;
  view.segments = oracle::random_tensor({3, dims.d_raw}, rng);

  const Tensor feats = encode_segments(view.segments, bundle.gen);
  const Tensor g = oracle_generator_full(feats, bundle.gen);
  Tensor row({1, g.size()}, g.values());
  const Tensor probs = classify(row, bundle.perc);
  std::size_t best = 0;
  for (std::size_t c = 1; c < dims.n_classes; ++c) {
    if (probs.at(0, c) > probs.at(0, best)) best = c;
  }
  const Prediction pred = predict(view, bundle);
  REQUIRE(pred.label == best);
}

TEST_CASE("predict rejects out-of-range progress", "[model]") {
  ModelDims dims = tiny_dims();
  ModelBundle bundle(dims, Variant::full);
  bundle.init(7);
  PartialView view;
  view.progress = dims.segments + 1;
  view.segments = Tensor({dims.segments + 1, dims.d_raw});
  REQUIRE_THROWS_AS(predict(view, bundle), std::invalid_argument);
}

TEST_CASE("fuse_scores adds and argmaxes", "[model]") {
  const Prediction same = fuse_scores(Tensor::row_vector({0.2, 0.8}), Tensor::row_vector({0.2, 0.8}));
  REQUIRE(same.label == 1);

  const Prediction p = fuse_scores(Tensor::row_vector({0.6, 0.4}), Tensor::row_vector({0.1, 0.9}));
  REQUIRE(p.scores[0] == Catch::Approx(0.7).margin(1e-15));
  REQUIRE(p.scores[1] == Catch::Approx(1.3).margin(1e-15));
  REQUIRE(p.label == 1);

  REQUIRE_THROWS_AS(fuse_scores(Tensor::row_vector({0.5, 0.5}), Tensor::row_vector({1.0})),
                    ShapeError);
}

TEST_CASE("fused argmax matches the oracle over random pairs", "[model][property]") {
  Rng rng(36);
  for (int rep = 0; rep < 100; ++rep) {
    const Tensor a = oracle::random_tensor({6}, rng, 0.0, 1.0);
    const Tensor b = oracle::random_tensor({6}, rng, 0.0, 1.0);
    const Prediction p = fuse_scores(a, b);
    std::size_t best = 0;
    for (std::size_t j = 1; j < 6; ++j) {
      if (a[j] + b[j] > a[best] + b[best]) best = j;
    }
    REQUIRE(p.label == best);
  }
}

// ---------------------------------------------------------------------------
// parameter bookkeeping
// ---------------------------------------------------------------------------

TEST_CASE("parameter counts match the closed forms", "[model]") {
  const ModelDims dims{.d_raw = 32, .d_enc = 64, .d_feat = 64, .d_hidden = 64, .width1 = 128,
                       .width2 = 64, .n_classes = 8, .segments = 10};
  ModelBundle bundle(dims, Variant::full);

  const auto disc_params = bundle.disc.parameters();
  const std::size_t disc_count = params_count(disc_params);
  REQUIRE(disc_count == dims.d_feat * dims.width1 + dims.width1 +
                            dims.width1 * dims.width2 + dims.width2 + dims.width2 + 1);

  const auto perc_params = bundle.perc.parameters();
  REQUIRE(params_count(perc_params) ==
          dims.d_feat * dims.width1 + dims.width1 + dims.width1 * dims.width2 + dims.width2 +
              dims.width2 * dims.n_classes + dims.n_classes);

  // one LSTM cell: d_in*4h + h*4h + 4h
  const std::size_t cell1 = dims.d_feat * 4 * dims.d_hidden +
                            dims.d_hidden * 4 * dims.d_hidden + 4 * dims.d_hidden;
  Parameter* cell_params[] = {&bundle.gen.lstm1.w_x, &bundle.gen.lstm1.w_h, &bundle.gen.lstm1.bias};
  REQUIRE(params_count(cell_params) == cell1);
}

TEST_CASE("bundle init is deterministic in the seed", "[model]") {
  ModelBundle a(tiny_dims(), Variant::full);
  ModelBundle b(tiny_dims(), Variant::full);
  a.init(123);
  b.init(123);
  REQUIRE(params_checksum(a.parameters()) == params_checksum(b.parameters()));
  b.init(124);
  REQUIRE(params_checksum(a.parameters()) != params_checksum(b.parameters()));
}

TEST_CASE("variant names round trip", "[model]") {
  for (const Variant v : {Variant::scp, Variant::lstm, Variant::lstm_scp, Variant::full}) {
    REQUIRE(variant_from_name(variant_name(v)) == v);
  }
  REQUIRE_THROWS_AS(variant_from_name("cnn"), std::invalid_argument);
}
