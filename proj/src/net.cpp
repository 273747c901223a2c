#include "uasr/net.hpp"

#include <algorithm>

namespace uasr {

Conv1d Conv1d::make(int in_ch, int out_ch, int kernel, int pad_left, int pad_right) {
  Conv1d c;
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  c.kernel = kernel;
  c.pad_left = pad_left;
  c.pad_right = pad_right;
  c.w.assign(size_t(out_ch) * kernel * in_ch, 0.0);
  c.b.assign(size_t(out_ch), 0.0);
  return c;
}

Conv1d Conv1d::make_same(int in_ch, int out_ch, int kernel) {
  int pl = kernel / 2;
  return make(in_ch, out_ch, kernel, pl, kernel - 1 - pl);
}

Conv1d Conv1d::make_causal(int in_ch, int out_ch, int kernel) {
  return make(in_ch, out_ch, kernel, kernel - 1, 0);
}

void Conv1d::init_uniform(Rng& rng) {
  double a = 1.0 / std::sqrt(double(in_ch) * kernel);
  for (auto& x : w) x = (2.0 * rng.uniform() - 1.0) * a;
  for (auto& x : b) x = (2.0 * rng.uniform() - 1.0) * a;
}

MatD conv1d_forward(const Conv1d& conv, const MatD& in, bool use_bias) {
  int t_in = in.rows;
  int t_out = t_in + conv.pad_left + conv.pad_right - conv.kernel + 1;
  UASR_REQUIRE(in.cols == conv.in_ch, "conv1d: channel mismatch");
  UASR_REQUIRE(t_out >= 1, "conv1d: sequence shorter than receptive field");
  MatD out(t_out, conv.out_ch);
  for (int t = 0; t < t_out; ++t) {
    double* orow = out.row(t);
    if (use_bias)
      for (int o = 0; o < conv.out_ch; ++o) orow[o] = conv.b[size_t(o)];
    for (int k = 0; k < conv.kernel; ++k) {
      int src = t + k - conv.pad_left;
      if (src < 0 || src >= t_in) continue;
      const double* irow = in.row(src);
      const double* wk = conv.w.data() + size_t(k) * conv.in_ch;
      for (int o = 0; o < conv.out_ch; ++o) {
        const double* wo = wk + size_t(o) * conv.kernel * conv.in_ch;
        double acc = 0.0;
        for (int i = 0; i < conv.in_ch; ++i) acc += wo[i] * irow[i];
        orow[o] += acc;
      }
    }
  }
  return out;
}

MatD conv1d_backward_input(const Conv1d& conv, const MatD& grad_out, int in_rows) {
  MatD din(in_rows, conv.in_ch);
  for (int t = 0; t < grad_out.rows; ++t) {
    const double* grow = grad_out.row(t);
    for (int k = 0; k < conv.kernel; ++k) {
      int src = t + k - conv.pad_left;
      if (src < 0 || src >= in_rows) continue;
      double* drow = din.row(src);
      const double* wk = conv.w.data() + size_t(k) * conv.in_ch;
      for (int o = 0; o < conv.out_ch; ++o) {
        const double* wo = wk + size_t(o) * conv.kernel * conv.in_ch;
        double g = grow[o];
        for (int i = 0; i < conv.in_ch; ++i) drow[i] += g * wo[i];
      }
    }
  }
  return din;
}

void conv1d_backward_params(const Conv1d& conv, const MatD& in, const MatD& grad_out,
                            std::vector<double>& dw, std::vector<double>& db, bool with_bias) {
  dw.resize(conv.w.size(), 0.0);
  db.resize(conv.b.size(), 0.0);
  for (int t = 0; t < grad_out.rows; ++t) {
    const double* grow = grad_out.row(t);
    if (with_bias)
      for (int o = 0; o < conv.out_ch; ++o) db[size_t(o)] += grow[o];
    for (int k = 0; k < conv.kernel; ++k) {
      int src = t + k - conv.pad_left;
      if (src < 0 || src >= in.rows) continue;
      const double* irow = in.row(src);
      for (int o = 0; o < conv.out_ch; ++o) {
        double* dwo = dw.data() + size_t((o * conv.kernel + k)) * conv.in_ch;
        double g = grow[o];
        for (int i = 0; i < conv.in_ch; ++i) dwo[i] += g * irow[i];
      }
    }
  }
}

MatD softmax_rows(const MatD& z) {
  MatD p(z.rows, z.cols);
  for (int t = 0; t < z.rows; ++t) {
    const double* zr = z.row(t);
    double* pr = p.row(t);
    double mx = zr[0];
    for (int c = 1; c < z.cols; ++c) mx = std::max(mx, zr[c]);
    double total = 0.0;
    for (int c = 0; c < z.cols; ++c) {
      pr[c] = std::exp(zr[c] - mx);
      total += pr[c];
    }
    for (int c = 0; c < z.cols; ++c) pr[c] /= total;
  }
  return p;
}

MatD softmax_backward(const MatD& p, const MatD& dp) {
  MatD dz(p.rows, p.cols);
  for (int t = 0; t < p.rows; ++t) {
    const double* pr = p.row(t);
    const double* dpr = dp.row(t);
    double dot = 0.0;
    for (int c = 0; c < p.cols; ++c) dot += pr[c] * dpr[c];
    double* dzr = dz.row(t);
    for (int c = 0; c < p.cols; ++c) dzr[c] = pr[c] * (dpr[c] - dot);
  }
  return dz;
}

void Adam::update(std::vector<double>& params, const std::vector<double>& grads) {
  UASR_REQUIRE(params.size() == grads.size() && params.size() == m.size(),
               "adam: size mismatch");
  ++t;
  double bc1 = 1.0 - std::pow(beta1, double(t));
  double bc2 = 1.0 - std::pow(beta2, double(t));
  for (size_t i = 0; i < params.size(); ++i) {
    double g = grads[i] + weight_decay * params[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
  }
}

}  // namespace uasr
