#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "apgan/data.hpp"
#include "apgan/io.hpp"
#include "apgan/losses.hpp"
#include "apgan/model.hpp"
#include "apgan/optim.hpp"

namespace apgan {

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

struct Stage1Config {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lr_decay = 0.1;           // multiply lr by this every decay_interval iterations
  std::size_t decay_interval = 300;
  std::size_t iterations = 1200;
};

struct Stage2Config {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
  double lambda = 1.0;
  std::size_t d_steps_per_g_step = 3;
  std::size_t iterations = 500;  // alternation cycles (1 G step + d_steps D steps each)
  bool freeze_encoder = true;
  bool freeze_perceptual = false;
  bool freeze_generator = false;  // D-only training, used to probe the discriminator
  bool include_full_views = true; // feed k = K views as fakes too
  AdversarialForm adv_form = AdversarialForm::non_saturating;
};

struct TrainConfig {
  Stage1Config stage1;
  Stage2Config stage2;
  std::size_t batch = 64;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch < 1) throw std::invalid_argument("batch must be >= 1");
    if (stage1.lr < 0.0 || stage2.lr < 0.0) throw std::invalid_argument("lr must be >= 0");
    if (stage2.lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
    if (stage2.d_steps_per_g_step < 1) throw std::invalid_argument("d_steps must be >= 1");
    if (stage1.decay_interval < 1) throw std::invalid_argument("decay interval must be >= 1");
  }
};

struct TrainRecord {
  int stage = 0;
  std::size_t iter = 0;
  double loss_cls = 0.0;
  double loss_d = 0.0;
  double loss_g_adv = 0.0;
  double loss_g_total = 0.0;
  double d_real_mean = 0.0;
  double d_fake_mean = 0.0;
};

// Append-only loss trace. Wall-clock stays a summary field; the persisted
// table holds only the per-iteration records so equal seeds give equal files.
struct TrainLog {
  std::vector<TrainRecord> records;
  double wall_seconds = 0.0;

  void append(TrainRecord r) {
    if (!records.empty() && records.back().stage == r.stage && r.iter <= records.back().iter) {
      throw std::logic_error("TrainLog: iterations must increase within a stage");
    }
    for (double v : {r.loss_cls, r.loss_d, r.loss_g_adv, r.loss_g_total, r.d_real_mean, r.d_fake_mean}) {
      if (!std::isfinite(v)) {
        throw TrainingDiverged("non-finite loss at stage " + std::to_string(r.stage) + " iteration " +
                               std::to_string(r.iter));
      }
    }
    records.push_back(r);
  }

  void extend(const TrainLog& other) {
    for (const TrainRecord& r : other.records) append(r);
    wall_seconds += other.wall_seconds;
  }

  static std::string header() {
    return "stage,iter,loss_cls,loss_d,loss_g_adv,loss_g_total,d_real_mean,d_fake_mean";
  }

  void save(const std::string& path) const {
    std::string out = header() + "\n";
    char buf[192];
    for (const TrainRecord& r : records) {
      std::snprintf(buf, sizeof(buf), "%d,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.stage,
                    r.iter, r.loss_cls, r.loss_d, r.loss_g_adv, r.loss_g_total, r.d_real_mean,
                    r.d_fake_mean);
      out += buf;
    }
    detail::write_file(path, out);
  }
};

// ---------------------------------------------------------------------------
// Batch sampling: uniform without replacement within an epoch shuffle,
// wrapping across epochs when the batch exceeds what is left.
// ---------------------------------------------------------------------------

class EpochSampler {
 public:
  EpochSampler(std::size_t pool_size, Rng* rng) : pool_(pool_size), rng_(rng) {
    if (pool_ == 0) throw std::invalid_argument("EpochSampler: empty pool");
    refill();
  }

  std::size_t next() {
    if (cursor_ == perm_.size()) refill();
    return perm_[cursor_++];
  }

 private:
  void refill() {
    perm_ = rng_->permutation(pool_);
    cursor_ = 0;
  }

  std::size_t pool_;
  Rng* rng_;
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
};

struct Batch {
  std::vector<const PartialView*> fakes;
  std::vector<const FeatureSequence*> reals;
  std::vector<std::size_t> labels;  // labels of the fake views
};

class BatchSampler {
 public:
  BatchSampler(const std::vector<PartialView>& views, const std::vector<FeatureSequence>& reals,
               Rng* rng)
      : views_(&views), reals_(&reals), fake_sampler_(views.size(), rng),
        real_sampler_(reals.size(), rng) {}

  Batch next(std::size_t batch) {
    if (batch == 0) throw std::invalid_argument("make_batch: empty batch");
    Batch b;
    b.fakes.reserve(batch);
    b.reals.reserve(batch);
    b.labels.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const PartialView& v = (*views_)[fake_sampler_.next()];
      b.fakes.push_back(&v);
      b.labels.push_back(v.label);
      b.reals.push_back(&(*reals_)[real_sampler_.next()]);
    }
    return b;
  }

 private:
  const std::vector<PartialView>* views_;
  const std::vector<FeatureSequence>* reals_;
  EpochSampler fake_sampler_;
  EpochSampler real_sampler_;
};

inline Batch make_batch(BatchSampler& sampler, std::size_t batch) { return sampler.next(batch); }

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t h = seed ^ (salt * 0x9E3779B97F4A7C15ull);
  h ^= h >> 33;
  h *= 0xFF51AFD7ED558CCDull;
  h ^= h >> 33;
  return h;
}

// ---------------------------------------------------------------------------
// Stage 1: supervised pre-training of encoder + perceptual head on complete
// videos only, SGD with step decay.
// ---------------------------------------------------------------------------

inline TrainLog stage1_pretrain(ModelBundle& bundle, const Dataset& train, const TrainConfig& cfg) {
  cfg.validate();
  if (train.sequences.empty()) throw std::invalid_argument("stage1_pretrain: empty training set");
  const auto t0 = std::chrono::steady_clock::now();

  const std::size_t k = bundle.dims.segments;
  const std::size_t d_feat = bundle.dims.d_feat;

  Rng rng(derive_seed(cfg.seed, 1));
  EpochSampler sampler(train.sequences.size(), &rng);

  std::vector<Parameter*> params = bundle.gen.encoder_parameters();
  for (Parameter* p : bundle.perc.parameters()) params.push_back(p);

  TrainLog log;
  std::vector<EncoderCache> caches(cfg.batch);
  for (std::size_t iter = 1; iter <= cfg.stage1.iterations; ++iter) {
    const double lr =
        cfg.stage1.lr * std::pow(cfg.stage1.lr_decay,
                                 static_cast<double>((iter - 1) / cfg.stage1.decay_interval));

    std::vector<const FeatureSequence*> seqs(cfg.batch);
    std::vector<std::size_t> labels(cfg.batch);
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      seqs[i] = &train.sequences[sampler.next()];
      labels[i] = seqs[i]->label;
    }

    Tensor feats({cfg.batch, d_feat});
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      Tensor z = full_video_feature(*seqs[i], bundle.gen, k, &caches[i]);
      double* row = feats.row(i);
      for (std::size_t j = 0; j < d_feat; ++j) row[j] = z[j];
    }

    MlpHeadCache pcache;
    Tensor probs = classify(feats, bundle.perc, &pcache);
    const double loss = cross_entropy_mean(labels, probs);

    zero_grads(params);
    Tensor d_probs = cross_entropy_mean_backward(labels, probs);
    Tensor d_feats = classify_backward(d_probs, bundle.perc, pcache);

    const double inv_k = 1.0 / static_cast<double>(k);
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      Tensor d_seq({k, d_feat});
      const double* dz = d_feats.row(i);
      for (std::size_t seg = 0; seg < k; ++seg) {
        double* row = d_seq.row(seg);
        for (std::size_t j = 0; j < d_feat; ++j) row[j] = dz[j] * inv_k;
      }
      encoder_backward(d_seq, bundle.gen, caches[i]);
    }

    sgd_step(params, SgdConfig{lr, cfg.stage1.momentum, cfg.stage1.weight_decay});

    TrainRecord r;
    r.stage = 1;
    r.iter = iter;
    r.loss_cls = loss;
    r.loss_g_total = cfg.stage2.lambda * loss;  // no adversarial term in stage 1
    log.append(r);
  }

  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

// ---------------------------------------------------------------------------
// Stage 2: adversarial training. Each cycle runs one generator update on
// loss_G_adv + lambda*loss_cls and d_steps_per_g_step discriminator updates
// on loss_D. Real examples are full-video features under the encoder as it
// stood when stage 2 began.
// ---------------------------------------------------------------------------

inline TrainLog stage2_adversarial(ModelBundle& bundle, const Dataset& train,
                                   const TrainConfig& cfg) {
  cfg.validate();
  if (train.sequences.empty()) throw std::invalid_argument("stage2_adversarial: empty training set");
  const auto t0 = std::chrono::steady_clock::now();

  const std::size_t k = bundle.dims.segments;
  const std::size_t d_feat = bundle.dims.d_feat;
  const Stage2Config& s2 = cfg.stage2;

  // Real examples come from the stage-1 encoder; snapshot it so a fine-tuned
  // encoder cannot drag the target distribution along.
  std::vector<Tensor> real_feats;
  real_feats.reserve(train.sequences.size());
  for (const FeatureSequence& seq : train.sequences) {
    real_feats.push_back(full_video_feature(seq, bundle.gen, k));
  }

  // With the encoder frozen the segment features are constant; encode each
  // sequence once and slice prefixes.
  std::unordered_map<std::uint64_t, std::size_t> seq_index;
  std::vector<Tensor> frozen_feats;
  if (s2.freeze_encoder) {
    frozen_feats.reserve(train.sequences.size());
    for (std::size_t i = 0; i < train.sequences.size(); ++i) {
      seq_index[train.sequences[i].id] = i;
      frozen_feats.push_back(encode_segments(train.sequences[i].segments, bundle.gen));
    }
  }

  std::vector<PartialView> views = expand_views(train);
  if (!s2.include_full_views) {
    std::vector<PartialView> kept;
    kept.reserve(views.size());
    for (auto& v : views) {
      if (v.progress < k) kept.push_back(std::move(v));
    }
    views = std::move(kept);
  }
  if (views.empty()) throw std::invalid_argument("stage2_adversarial: no partial views to train on");

  Rng rng(derive_seed(cfg.seed, 2));
  BatchSampler sampler(views, train.sequences, &rng);

  std::vector<Parameter*> g_params =
      s2.freeze_encoder ? bundle.gen.sequence_parameters() : bundle.gen.parameters();
  if (!s2.freeze_perceptual) {
    for (Parameter* p : bundle.perc.parameters()) g_params.push_back(p);
  }
  std::vector<Parameter*> d_params = bundle.disc.parameters();
  std::vector<Parameter*> gen_all = bundle.gen.parameters();
  std::vector<Parameter*> perc_all = bundle.perc.parameters();

  const AdamConfig adam{s2.lr, s2.beta1, s2.beta2, s2.eps, s2.weight_decay};

  auto fake_forward = [&](const PartialView& view, GeneratorCache* cache) -> Tensor {
    if (s2.freeze_encoder) {
      const Tensor& all = frozen_feats[seq_index.at(view.source_id)];
      Tensor prefix({view.progress, d_feat});
      for (std::size_t i = 0; i < view.progress * d_feat; ++i) prefix[i] = all[i];
      return generator_forward_from_feats(prefix, bundle.gen, bundle.variant, cache);
    }
    return generator_forward(view.segments, bundle.gen, bundle.variant, cache);
  };

  TrainLog log;
  std::vector<GeneratorCache> g_caches(cfg.batch);
  for (std::size_t iter = 1; iter <= s2.iterations; ++iter) {
    TrainRecord rec;
    rec.stage = 2;
    rec.iter = iter;

    if (!s2.freeze_generator) {
      const std::uint64_t d_before = params_checksum(d_params);
      Batch batch = sampler.next(cfg.batch);

      Tensor feats({cfg.batch, d_feat});
      for (std::size_t i = 0; i < cfg.batch; ++i) {
        Tensor gfeat = fake_forward(*batch.fakes[i], &g_caches[i]);
        double* row = feats.row(i);
        for (std::size_t j = 0; j < d_feat; ++j) row[j] = gfeat[j];
      }

      MlpHeadCache dcache, pcache;
      Tensor d_fake = discriminate(feats, bundle.disc, &dcache);
      Tensor probs = classify(feats, bundle.perc, &pcache);

      rec.loss_g_adv = gan_loss_g(d_fake, s2.adv_form);
      rec.loss_cls = cross_entropy_mean(batch.labels, probs);
      rec.loss_g_total = rec.loss_g_adv + s2.lambda * rec.loss_cls;

      zero_grads(gen_all);
      zero_grads(perc_all);
      zero_grads(d_params);  // scratch for the pass-through gradient below

      Tensor d_fake_grad = gan_loss_g_backward(d_fake, s2.adv_form);
      Tensor d_feats = discriminate_backward(d_fake_grad, bundle.disc, dcache);
      Tensor d_probs = cross_entropy_mean_backward(batch.labels, probs);
      Tensor d_feats_cls = classify_backward(d_probs, bundle.perc, pcache);
      axpy(s2.lambda, d_feats_cls, d_feats);

      for (std::size_t i = 0; i < cfg.batch; ++i) {
        generator_backward(detail::tensor_row(d_feats, i), bundle.gen, g_caches[i]);
      }

      adam_step(g_params, adam);
      if (params_checksum(d_params) != d_before) {
        throw std::logic_error("generator step modified discriminator parameters");
      }
    }

    const std::uint64_t g_before = params_checksum(gen_all);
    const std::uint64_t p_before = params_checksum(perc_all);
    for (std::size_t step = 0; step < s2.d_steps_per_g_step; ++step) {
      Batch batch = sampler.next(cfg.batch);

      Tensor fake_feats({cfg.batch, d_feat});
      Tensor real_batch({cfg.batch, d_feat});
      for (std::size_t i = 0; i < cfg.batch; ++i) {
        Tensor gfeat = fake_forward(*batch.fakes[i], nullptr);
        double* frow = fake_feats.row(i);
        for (std::size_t j = 0; j < d_feat; ++j) frow[j] = gfeat[j];
        const Tensor& z =
            real_feats[static_cast<std::size_t>(batch.reals[i] - train.sequences.data())];
        double* rrow = real_batch.row(i);
        for (std::size_t j = 0; j < d_feat; ++j) rrow[j] = z[j];
      }

      MlpHeadCache cache_fake, cache_real;
      Tensor d_fake = discriminate(fake_feats, bundle.disc, &cache_fake);
      Tensor d_real = discriminate(real_batch, bundle.disc, &cache_real);

      const GanLosses losses = gan_losses(d_real, d_fake, s2.adv_form);
      rec.loss_d = losses.loss_d;
      double real_mean = 0.0, fake_mean = 0.0;
      for (std::size_t i = 0; i < cfg.batch; ++i) {
        real_mean += d_real[i];
        fake_mean += d_fake[i];
      }
      rec.d_real_mean = real_mean / static_cast<double>(cfg.batch);
      rec.d_fake_mean = fake_mean / static_cast<double>(cfg.batch);

      zero_grads(d_params);
      auto [d_real_grad, d_fake_grad] = gan_loss_d_backward(d_real, d_fake);
      discriminate_backward(d_fake_grad, bundle.disc, cache_fake);
      discriminate_backward(d_real_grad, bundle.disc, cache_real);
      adam_step(d_params, adam);
    }
    if (params_checksum(gen_all) != g_before || params_checksum(perc_all) != p_before) {
      throw std::logic_error("discriminator step modified generator or perceptual parameters");
    }

    log.append(rec);
  }

  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

}  // namespace apgan
