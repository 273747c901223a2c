#pragma once

#include <cmath>
#include <vector>

#include "uasr/mat.hpp"
#include "uasr/rng.hpp"

namespace uasr {

// 1-D convolution over a T x in_ch sequence, zero padded. Weights are laid
// out [out_ch][kernel][in_ch]; out[t][o] = b[o] + sum_{k,i} w[o][k][i] *
// in[t + k - pad_left][i].
struct Conv1d {
  int in_ch = 0, out_ch = 0, kernel = 0;
  int pad_left = 0, pad_right = 0;
  std::vector<double> w;
  std::vector<double> b;

  static Conv1d make(int in_ch, int out_ch, int kernel, int pad_left, int pad_right);
  // non-causal: output length == input length, asymmetric for even kernels
  static Conv1d make_same(int in_ch, int out_ch, int kernel);
  // causal: pad_left = kernel - 1
  static Conv1d make_causal(int in_ch, int out_ch, int kernel);

  size_t param_count() const { return w.size() + b.size(); }
  void init_uniform(Rng& rng);  // U(-a, a), a = 1/sqrt(fan_in)

  double& wt(int o, int k, int i) { return w[size_t((o * kernel + k)) * in_ch + i]; }
  double wt(int o, int k, int i) const { return w[size_t((o * kernel + k)) * in_ch + i]; }
};

MatD conv1d_forward(const Conv1d& conv, const MatD& in, bool use_bias = true);
// gradient w.r.t. the input sequence
MatD conv1d_backward_input(const Conv1d& conv, const MatD& grad_out, int in_rows);
// accumulates gradients w.r.t. weights (and bias unless with_bias is false,
// for linear-in-input tangent passes) into dw/db
void conv1d_backward_params(const Conv1d& conv, const MatD& in, const MatD& grad_out,
                            std::vector<double>& dw, std::vector<double>& db,
                            bool with_bias = true);

// exact (erf-based) GELU and its first two derivatives
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_d1(double x) {
  double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}
inline double gelu_d2(double x) {
  double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return (2.0 - x * x) * phi;
}

// numerically safe log(sigmoid(x)) with the logit clamped to +/- clamp
inline double log_sigmoid(double x, double clamp = 30.0) {
  double c = std::min(std::max(x, -clamp), clamp);
  return c >= 0 ? -std::log1p(std::exp(-c)) : c - std::log1p(std::exp(c));
}
inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// row-wise softmax
MatD softmax_rows(const MatD& z);
// given softmax outputs p and dL/dp, returns dL/dz
MatD softmax_backward(const MatD& p, const MatD& dp);

// Adam with optional torch-style L2 weight decay (added to the gradient).
struct Adam {
  double lr = 1e-4, beta1 = 0.5, beta2 = 0.98, eps = 1e-8, weight_decay = 0.0;
  long t = 0;
  std::vector<double> m, v;

  void init(size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }
  void update(std::vector<double>& params, const std::vector<double>& grads);
};

}  // namespace uasr
