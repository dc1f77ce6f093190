#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "apgan/param.hpp"
#include "apgan/tensor.hpp"

namespace apgan {

// ---------------------------------------------------------------------------
// Fully connected layer
// ---------------------------------------------------------------------------

struct LinearLayer {
  Parameter w;  // d_in x d_out
  Parameter b;  // d_out

  LinearLayer() = default;
  LinearLayer(const std::string& name, std::size_t d_in, std::size_t d_out)
      : w(name + ".w", Tensor({d_in, d_out})), b(name + ".b", Tensor({d_out})) {}

  std::size_t in_dim() const { return w.value.shape()[0]; }
  std::size_t out_dim() const { return w.value.shape()[1]; }

  void init(Rng& rng) {
    init_glorot_uniform(w, in_dim(), out_dim(), rng);
    init_constant(b, 0.0);
  }
};

// out[i][j] = sum_k x[i][k] * W[k][j] + b[j]
inline Tensor linear_forward(const Tensor& x, const LinearLayer& layer) {
  if (x.rank() != 2 || x.cols() != layer.in_dim()) {
    throw ShapeError("linear_forward: input " + x.shape_str() + " does not match weights " +
                     layer.w.value.shape_str());
  }
  const std::size_t batch = x.rows();
  const std::size_t d_out = layer.out_dim();
  Tensor out({batch, d_out});
  for (std::size_t i = 0; i < batch; ++i) {
    double* row = out.row(i);
    const double* bias = layer.b.value.data();
    for (std::size_t j = 0; j < d_out; ++j) row[j] = bias[j];
  }
  detail::gemm_acc(x.data(), layer.w.value.data(), out.data(), batch, x.cols(), d_out);
  return out;
}

// Accumulates parameter gradients and returns d_loss/d_x.
inline Tensor linear_backward(const Tensor& x, const Tensor& d_out, LinearLayer& layer) {
  if (d_out.rank() != 2 || d_out.rows() != x.rows() || d_out.cols() != layer.out_dim()) {
    throw ShapeError("linear_backward: upstream " + d_out.shape_str() + " does not match output " +
                     Tensor::shape_string({x.rows(), layer.out_dim()}));
  }
  const std::size_t batch = x.rows();
  const std::size_t d_in = layer.in_dim();
  const std::size_t dout = layer.out_dim();

  // dW += x^T * d_out ; db += column sums of d_out
  detail::gemm_tn_acc(x.data(), d_out.data(), layer.w.grad.data(), batch, d_in, dout);
  double* db = layer.b.grad.data();
  for (std::size_t i = 0; i < batch; ++i) {
    const double* g = d_out.row(i);
    for (std::size_t j = 0; j < dout; ++j) db[j] += g[j];
  }

  Tensor dx({batch, d_in});
  detail::gemm_nt_acc(d_out.data(), layer.w.value.data(), dx.data(), batch, dout, d_in);
  return dx;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Activation { sigmoid, tanh, relu, softmax_rows };

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor activation_forward(const Tensor& x, Activation kind) {
  if (kind == Activation::softmax_rows && x.rank() != 2) {
    throw ShapeError("softmax_rows expects a rank-2 tensor, got " + x.shape_str());
  }
  Tensor out(x.shape());
  switch (kind) {
    case Activation::sigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid_scalar(x[i]);
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    case Activation::softmax_rows: {
      const std::size_t rows = x.rows();
      const std::size_t cols = x.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xin = x.row(r);
        double* o = out.row(r);
        double mx = xin[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xin[c]);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          o[c] = std::exp(xin[c] - mx);
          total += o[c];
        }
        for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
      }
      break;
    }
  }
  return out;
}

// d_loss/d_x given the forward input x, forward output y and upstream d_y.
inline Tensor activation_backward(const Tensor& x, const Tensor& y, const Tensor& d_y,
                                  Activation kind) {
  check_same_shape("activation_backward", y, d_y);
  Tensor dx(x.shape());
  switch (kind) {
    case Activation::sigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] = d_y[i] * y[i] * (1.0 - y[i]);
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] = d_y[i] * (1.0 - y[i] * y[i]);
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? d_y[i] : 0.0;
      break;
    case Activation::softmax_rows: {
      // dx_j = s_j * (dy_j - sum_i dy_i s_i), rowwise
      const std::size_t rows = y.rows();
      const std::size_t cols = y.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* s = y.row(r);
        const double* g = d_y.row(r);
        double* o = dx.row(r);
        double inner = 0.0;
        for (std::size_t c = 0; c < cols; ++c) inner += g[c] * s[c];
        for (std::size_t c = 0; c < cols; ++c) o[c] = s[c] * (g[c] - inner);
      }
      break;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// LSTM cell
// ---------------------------------------------------------------------------

// Gate blocks are packed [input | forget | candidate | output] along the
// 4*hidden axis of w_x, w_h and bias.
struct LstmCellParams {
  Parameter w_x;   // d_in x 4*d_h
  Parameter w_h;   // d_h x 4*d_h
  Parameter bias;  // 4*d_h

  LstmCellParams() = default;
  LstmCellParams(const std::string& name, std::size_t d_in, std::size_t d_h)
      : w_x(name + ".wx", Tensor({d_in, 4 * d_h})),
        w_h(name + ".wh", Tensor({d_h, 4 * d_h})),
        bias(name + ".b", Tensor({4 * d_h})) {}

  std::size_t input_size() const { return w_x.value.shape()[0]; }
  std::size_t hidden_size() const { return w_h.value.shape()[0]; }

  // Forget-gate bias starts at 1 so early training does not flush the cell.
  void init(Rng& rng, double forget_bias = 1.0) {
    const std::size_t d_h = hidden_size();
    init_glorot_uniform(w_x, input_size(), d_h, rng);
    init_glorot_uniform(w_h, d_h, d_h, rng);
    init_constant(bias, 0.0);
    for (std::size_t i = d_h; i < 2 * d_h; ++i) bias.value[i] = forget_bias;
  }
};

struct LstmState {
  Tensor h;  // d_h
  Tensor c;  // d_h
};

// Everything the backward pass needs from one step.
struct LstmStepCache {
  Tensor x;       // d_in
  Tensor h_prev;  // d_h
  Tensor c_prev;  // d_h
  Tensor gate_i;
  Tensor gate_f;
  Tensor gate_g;  // tanh candidate
  Tensor gate_o;
  Tensor c;
  Tensor tanh_c;
};

inline LstmState lstm_cell_forward(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                                   const LstmCellParams& p, LstmStepCache* cache = nullptr) {
  const std::size_t d_in = p.input_size();
  const std::size_t d_h = p.hidden_size();
  if (x.size() != d_in || h_prev.size() != d_h || c_prev.size() != d_h) {
    throw ShapeError("lstm_cell_forward: got x " + x.shape_str() + ", h " + h_prev.shape_str() +
                     ", c " + c_prev.shape_str() + " for cell (" + std::to_string(d_in) + " -> " +
                     std::to_string(d_h) + ")");
  }

  Tensor pre = p.bias.value;  // 4*d_h
  detail::gemm_acc(x.data(), p.w_x.value.data(), pre.data(), 1, d_in, 4 * d_h);
  detail::gemm_acc(h_prev.data(), p.w_h.value.data(), pre.data(), 1, d_h, 4 * d_h);

  Tensor gi({d_h}), gf({d_h}), gg({d_h}), go({d_h});
  for (std::size_t j = 0; j < d_h; ++j) {
    gi[j] = sigmoid_scalar(pre[j]);
    gf[j] = sigmoid_scalar(pre[d_h + j]);
    gg[j] = std::tanh(pre[2 * d_h + j]);
    go[j] = sigmoid_scalar(pre[3 * d_h + j]);
  }

  LstmState out{Tensor({d_h}), Tensor({d_h})};
  Tensor tanh_c({d_h});
  for (std::size_t j = 0; j < d_h; ++j) {
    out.c[j] = gf[j] * c_prev[j] + gi[j] * gg[j];
    tanh_c[j] = std::tanh(out.c[j]);
    out.h[j] = go[j] * tanh_c[j];
  }

  if (cache != nullptr) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->c_prev = c_prev;
    cache->gate_i = std::move(gi);
    cache->gate_f = std::move(gf);
    cache->gate_g = std::move(gg);
    cache->gate_o = std::move(go);
    cache->c = out.c;
    cache->tanh_c = std::move(tanh_c);
  }
  return out;
}

struct LstmCellGrads {
  Tensor dx;
  Tensor dh_prev;
  Tensor dc_prev;
};

// Backward of one cell step. dh/dc are the gradients arriving at this step's
// outputs; parameter gradients accumulate into p.
inline LstmCellGrads lstm_cell_backward(const Tensor& dh, const Tensor& dc_in,
                                        LstmCellParams& p, const LstmStepCache& cache) {
  const std::size_t d_in = p.input_size();
  const std::size_t d_h = p.hidden_size();

  Tensor dpre({4 * d_h});
  Tensor dc_prev({d_h});
  for (std::size_t j = 0; j < d_h; ++j) {
    const double t = cache.tanh_c[j];
    const double dc = dc_in[j] + dh[j] * cache.gate_o[j] * (1.0 - t * t);
    const double di = dc * cache.gate_g[j];
    const double df = dc * cache.c_prev[j];
    const double dg = dc * cache.gate_i[j];
    const double dout = dh[j] * t;
    const double i = cache.gate_i[j];
    const double f = cache.gate_f[j];
    const double g = cache.gate_g[j];
    const double o = cache.gate_o[j];
    dpre[j] = di * i * (1.0 - i);
    dpre[d_h + j] = df * f * (1.0 - f);
    dpre[2 * d_h + j] = dg * (1.0 - g * g);
    dpre[3 * d_h + j] = dout * o * (1.0 - o);
    dc_prev[j] = dc * f;
  }

  // dWx += x^T dpre ; dWh += h_prev^T dpre ; db += dpre
  detail::gemm_tn_acc(cache.x.data(), dpre.data(), p.w_x.grad.data(), 1, d_in, 4 * d_h);
  detail::gemm_tn_acc(cache.h_prev.data(), dpre.data(), p.w_h.grad.data(), 1, d_h, 4 * d_h);
  add_inplace(p.bias.grad, dpre);

  LstmCellGrads grads{Tensor({d_in}), Tensor({d_h}), std::move(dc_prev)};
  detail::gemm_nt_acc(dpre.data(), p.w_x.value.data(), grads.dx.data(), 1, 4 * d_h, d_in);
  detail::gemm_nt_acc(dpre.data(), p.w_h.value.data(), grads.dh_prev.data(), 1, 4 * d_h, d_h);
  return grads;
}

}  // namespace apgan
