#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "apgan/gradcheck.hpp"
#include "apgan/losses.hpp"
#include "apgan/model.hpp"

namespace apgan {

// The standard verification sweep: every layer, both loss families, the full
// generator unrolled over `unroll` pooled steps with the residual add, the
// discriminator and the perceptual head, each against central finite
// differences at deliberately small dimensions.
struct BatteryOptions {
  GradCheckOptions check;
  std::uint64_t seed = 42;
  std::size_t unroll = 10;  // LSTM steps in the generator checks
};

namespace detail {

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline double weighted_sum(const Tensor& x, const Tensor& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * weights[i];
  return s;
}

}  // namespace detail

inline GradCheckReport run_gradcheck_battery(const BatteryOptions& opt = {}) {
  GradCheckReport report;
  report.rel_tol = opt.check.rel_tol;
  Rng rng(opt.seed);

  const ModelDims dims{.d_raw = 5, .d_enc = 6, .d_feat = 6, .d_hidden = 7, .width1 = 8,
                       .width2 = 5, .n_classes = 4, .segments = opt.unroll};

  auto run_item = [&](const std::string& name, const std::function<void(GradCheckItem&)>& body) {
    GradCheckItem item;
    item.name = name;
    body(item);
    report.items.push_back(item);
  };

  // --- linear -------------------------------------------------------------
  run_item("linear", [&](GradCheckItem& item) {
    LinearLayer layer("lin", 4, 3);
    layer.init(rng);
    Tensor x = detail::random_tensor({3, 4}, rng);
    const Tensor r = detail::random_tensor({3, 3}, rng);
    auto forward = [&]() { return detail::weighted_sum(linear_forward(x, layer), r); };
    layer.w.zero_grad();
    layer.b.zero_grad();
    Tensor dx = linear_backward(x, r, layer);
    check_parameter(item, layer.w, forward, opt.check);
    check_parameter(item, layer.b, forward, opt.check);
    check_gradient(item, "lin.x", x, dx, forward, opt.check);
  });

  // --- elementwise activations ---------------------------------------------
  for (const auto& [name, kind] : std::initializer_list<std::pair<const char*, Activation>>{
           {"relu", Activation::relu}, {"sigmoid", Activation::sigmoid}, {"tanh", Activation::tanh}}) {
    run_item(name, [&, kind = kind](GradCheckItem& item) {
      Tensor x = detail::random_tensor({4, 5}, rng);
      // keep relu kinks away from the probe points
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::abs(x[i]) < 10.0 * opt.check.step) x[i] += 0.1;
      }
      const Tensor r = detail::random_tensor({4, 5}, rng);
      auto forward = [&]() { return detail::weighted_sum(activation_forward(x, kind), r); };
      Tensor y = activation_forward(x, kind);
      Tensor dx = activation_backward(x, y, r, kind);
      check_gradient(item, std::string(item.name) + ".x", x, dx, forward, opt.check);
    });
  }

  run_item("softmax_rows", [&](GradCheckItem& item) {
    Tensor x = detail::random_tensor({3, 5}, rng);
    const Tensor r = detail::random_tensor({3, 5}, rng);
    auto forward = [&]() {
      return detail::weighted_sum(activation_forward(x, Activation::softmax_rows), r);
    };
    Tensor y = activation_forward(x, Activation::softmax_rows);
    Tensor dx = activation_backward(x, y, r, Activation::softmax_rows);
    check_gradient(item, "softmax.x", x, dx, forward, opt.check);
  });

  // --- losses ---------------------------------------------------------------
  run_item("cross_entropy", [&](GradCheckItem& item) {
    const std::size_t batch = 3, classes = 4;
    Tensor probs = detail::random_tensor({batch, classes}, rng, 0.1, 0.9);
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < batch; ++i) {
      targets.push_back(static_cast<std::size_t>(rng.uniform_int(0, classes - 1)));
    }
    auto forward = [&]() { return cross_entropy_mean(targets, probs); };
    Tensor dp = cross_entropy_mean_backward(targets, probs);
    check_gradient(item, "ce.probs", probs, dp, forward, opt.check);
  });

  run_item("gan_loss_d", [&](GradCheckItem& item) {
    Tensor d_real = detail::random_tensor({6}, rng, 0.05, 0.95);
    Tensor d_fake = detail::random_tensor({6}, rng, 0.05, 0.95);
    auto forward = [&]() { return gan_losses(d_real, d_fake).loss_d; };
    auto [dr, df] = gan_loss_d_backward(d_real, d_fake);
    check_gradient(item, "gan.d_real", d_real, dr, forward, opt.check);
    check_gradient(item, "gan.d_fake", d_fake, df, forward, opt.check);
  });

  for (const auto& [name, form] :
       std::initializer_list<std::pair<const char*, AdversarialForm>>{
           {"gan_loss_g_nonsat", AdversarialForm::non_saturating},
           {"gan_loss_g_sat", AdversarialForm::saturating}}) {
    run_item(name, [&, form = form](GradCheckItem& item) {
      Tensor d_fake = detail::random_tensor({6}, rng, 0.05, 0.95);
      auto forward = [&]() { return gan_loss_g(d_fake, form); };
      Tensor df = gan_loss_g_backward(d_fake, form);
      check_gradient(item, "gan_g.d_fake", d_fake, df, forward, opt.check);
    });
  }

  // --- LSTM cell -------------------------------------------------------------
  run_item("lstm_cell", [&](GradCheckItem& item) {
    LstmCellParams cell("cell", 4, 3);
    cell.init(rng);
    Tensor x = detail::random_tensor({4}, rng);
    Tensor h_prev = detail::random_tensor({3}, rng);
    Tensor c_prev = detail::random_tensor({3}, rng);
    const Tensor rh = detail::random_tensor({3}, rng);
    const Tensor rc = detail::random_tensor({3}, rng);
    auto forward = [&]() {
      const LstmState s = lstm_cell_forward(x, h_prev, c_prev, cell);
      return detail::weighted_sum(s.h, rh) + detail::weighted_sum(s.c, rc);
    };
    LstmStepCache cache;
    lstm_cell_forward(x, h_prev, c_prev, cell, &cache);
    cell.w_x.zero_grad();
    cell.w_h.zero_grad();
    cell.bias.zero_grad();
    LstmCellGrads grads = lstm_cell_backward(rh, rc, cell, cache);
    check_parameter(item, cell.w_x, forward, opt.check);
    check_parameter(item, cell.w_h, forward, opt.check);
    check_parameter(item, cell.bias, forward, opt.check);
    check_gradient(item, "cell.x", x, grads.dx, forward, opt.check);
    check_gradient(item, "cell.h_prev", h_prev, grads.dh_prev, forward, opt.check);
    check_gradient(item, "cell.c_prev", c_prev, grads.dc_prev, forward, opt.check);
  });

  // --- encoder ----------------------------------------------------------------
  run_item("encoder", [&](GradCheckItem& item) {
    GeneratorNet gen(dims);
    Rng init_rng(opt.seed + 1);
    gen.init(init_rng);
    Tensor raw = detail::random_tensor({3, dims.d_raw}, rng);
    const Tensor r = detail::random_tensor({3, dims.d_feat}, rng);
    auto forward = [&]() { return detail::weighted_sum(encode_segments(raw, gen), r); };
    EncoderCache cache;
    encode_segments(raw, gen, &cache);
    zero_grads(gen.parameters());
    Tensor draw = encoder_backward(r, gen, cache);
    for (Parameter* p : gen.encoder_parameters()) check_parameter(item, *p, forward, opt.check);
    check_gradient(item, "encoder.raw", raw, draw, forward, opt.check);
  });

  // --- heads -------------------------------------------------------------------
  run_item("discriminator", [&](GradCheckItem& item) {
    DiscriminatorNet disc(dims);
    Rng init_rng(opt.seed + 2);
    disc.init(init_rng);
    Tensor feats = detail::random_tensor({3, dims.d_feat}, rng);
    const Tensor r = detail::random_tensor({3}, rng);
    auto forward = [&]() { return detail::weighted_sum(discriminate(feats, disc), r); };
    MlpHeadCache cache;
    discriminate(feats, disc, &cache);
    zero_grads(disc.parameters());
    Tensor dfeats = discriminate_backward(r, disc, cache);
    for (Parameter* p : disc.parameters()) check_parameter(item, *p, forward, opt.check);
    check_gradient(item, "disc.input", feats, dfeats, forward, opt.check);
  });

  run_item("perceptual_head", [&](GradCheckItem& item) {
    PerceptualNet perc(dims);
    Rng init_rng(opt.seed + 3);
    perc.init(init_rng);
    Tensor feats = detail::random_tensor({3, dims.d_feat}, rng);
    const Tensor r = detail::random_tensor({3, dims.n_classes}, rng);
    auto forward = [&]() { return detail::weighted_sum(classify(feats, perc), r); };
    MlpHeadCache cache;
    classify(feats, perc, &cache);
    zero_grads(perc.parameters());
    Tensor dfeats = classify_backward(r, perc, cache);
    for (Parameter* p : perc.parameters()) check_parameter(item, *p, forward, opt.check);
    check_gradient(item, "perc.input", feats, dfeats, forward, opt.check);
  });

  // --- generator variants --------------------------------------------------------
  for (const Variant variant :
       {Variant::full, Variant::scp, Variant::lstm, Variant::lstm_scp}) {
    const std::string name = std::string("generator_") +
                             (variant == Variant::full ? "full" : variant_name(variant));
    run_item(name, [&, variant](GradCheckItem& item) {
      GeneratorNet gen(dims);
      Rng init_rng(opt.seed + 4 + static_cast<std::uint64_t>(variant));
      gen.init(init_rng);
      Tensor raw = detail::random_tensor({opt.unroll, dims.d_raw}, rng);
      const Tensor r = detail::random_tensor({dims.d_feat}, rng);
      auto forward = [&]() {
        return detail::weighted_sum(generator_forward(raw, gen, variant), r);
      };
      GeneratorCache cache;
      generator_forward(raw, gen, variant, &cache);
      zero_grads(gen.parameters());
      Tensor draw = generator_backward(r, gen, cache);
      for (Parameter* p : gen.parameters()) {
        // the SCP path never touches the LSTM or projection; their gradients
        // are identically zero and finite differences agree trivially
        check_parameter(item, *p, forward, opt.check);
      }
      check_gradient(item, "gen.raw", raw, draw, forward, opt.check);
    });
  }

  return report;
}

inline std::string format_gradcheck_report(const GradCheckReport& report) {
  char buf[192];
  std::string out;
  for (const GradCheckItem& item : report.items) {
    const bool ok = item.finite && item.max_rel_err <= report.rel_tol;
    std::snprintf(buf, sizeof(buf), "%-20s max_rel_err=%.3e %s%s%s\n", item.name.c_str(),
                  item.max_rel_err, ok ? "PASS" : "FAIL",
                  item.worst_coord.empty() ? "" : "  worst=", item.worst_coord.c_str());
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "overall max_rel_err=%.3e tol=%.1e -> %s\n",
                report.max_rel_err(), report.rel_tol, report.passed() ? "PASS" : "FAIL");
  out += buf;
  return out;
}

}  // namespace apgan
