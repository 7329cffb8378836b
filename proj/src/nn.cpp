#include "moe/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <cstring>
#include <stdexcept>

namespace moe::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void zero_grads(const std::vector<Param*>& params) {
  for (Param* p : params) p->grad.fill(0.0);
}

void gemm(int64_t m, int64_t n, int64_t k, const double* a, bool trans_a, const double* b,
          bool trans_b, double* c, double beta) {
  MapMat cm(c, m, n);
  CMapMat am(a, trans_a ? k : m, trans_a ? m : k);
  CMapMat bm(b, trans_b ? n : k, trans_b ? k : n);
  if (beta == 0.0) {
    if (!trans_a && !trans_b) cm.noalias() = am * bm;
    else if (trans_a && !trans_b) cm.noalias() = am.transpose() * bm;
    else if (!trans_a && trans_b) cm.noalias() = am * bm.transpose();
    else cm.noalias() = am.transpose() * bm.transpose();
  } else {
    if (!trans_a && !trans_b) cm.noalias() += am * bm;
    else if (trans_a && !trans_b) cm.noalias() += am.transpose() * bm;
    else if (!trans_a && trans_b) cm.noalias() += am * bm.transpose();
    else cm.noalias() += am.transpose() * bm.transpose();
  }
}

void im2col3x3(const double* in, int64_t c, int64_t h, int64_t w, double* cols) {
  int64_t hw = h * w;
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* src = in + ch * hw;
    for (int ky = -1; ky <= 1; ++ky) {
      for (int kx = -1; kx <= 1; ++kx) {
        double* dst = cols + (ch * 9 + (ky + 1) * 3 + (kx + 1)) * hw;
        for (int64_t y = 0; y < h; ++y) {
          int64_t sy = y + ky;
          double* row = dst + y * w;
          if (sy < 0 || sy >= h) {
            std::memset(row, 0, sizeof(double) * static_cast<size_t>(w));
            continue;
          }
          const double* srow = src + sy * w;
          int64_t x0 = std::max<int64_t>(0, -kx);
          int64_t x1 = std::min<int64_t>(w, w - kx);
          if (x0 > 0) std::memset(row, 0, sizeof(double) * static_cast<size_t>(x0));
          if (x1 < w) std::memset(row + x1, 0, sizeof(double) * static_cast<size_t>(w - x1));
          if (x1 > x0)
            std::memcpy(row + x0, srow + x0 + kx, sizeof(double) * static_cast<size_t>(x1 - x0));
        }
      }
    }
  }
}

void col2im3x3(const double* cols, int64_t c, int64_t h, int64_t w, double* out) {
  int64_t hw = h * w;
  std::memset(out, 0, sizeof(double) * static_cast<size_t>(c * hw));
  for (int64_t ch = 0; ch < c; ++ch) {
    double* dst = out + ch * hw;
    for (int ky = -1; ky <= 1; ++ky) {
      for (int kx = -1; kx <= 1; ++kx) {
        const double* src = cols + (ch * 9 + (ky + 1) * 3 + (kx + 1)) * hw;
        for (int64_t y = 0; y < h; ++y) {
          int64_t sy = y + ky;
          if (sy < 0 || sy >= h) continue;
          const double* row = src + y * w;
          double* drow = dst + sy * w;
          int64_t x0 = std::max<int64_t>(0, -kx);
          int64_t x1 = std::min<int64_t>(w, w - kx);
          for (int64_t x = x0; x < x1; ++x) drow[x + kx] += row[x];
        }
      }
    }
  }
}

void conv3x3_forward_one(const double* in, int64_t c, int64_t h, int64_t w, const double* weights,
                         const double* bias, int64_t o, double* out, std::vector<double>& cols_buf) {
  int64_t hw = h * w;
  cols_buf.resize(static_cast<size_t>(c * 9 * hw));
  im2col3x3(in, c, h, w, cols_buf.data());
  gemm(o, hw, c * 9, weights, false, cols_buf.data(), false, out, 0.0);
  for (int64_t oc = 0; oc < o; ++oc) {
    double bv = bias[oc];
    double* row = out + oc * hw;
    for (int64_t i = 0; i < hw; ++i) row[i] += bv;
  }
}

void conv3x3_backward_one(const double* in, int64_t c, int64_t h, int64_t w, const double* weights,
                          const double* dout, int64_t o, double* dw, double* db, double* din,
                          std::vector<double>& cols_buf, std::vector<double>& dcols_buf) {
  int64_t hw = h * w;
  if (dw != nullptr) {
    cols_buf.resize(static_cast<size_t>(c * 9 * hw));
    im2col3x3(in, c, h, w, cols_buf.data());
    gemm(o, c * 9, hw, dout, false, cols_buf.data(), true, dw, 1.0);
  }
  if (db != nullptr) {
    for (int64_t oc = 0; oc < o; ++oc) {
      const double* row = dout + oc * hw;
      double acc = 0.0;
      for (int64_t i = 0; i < hw; ++i) acc += row[i];
      db[oc] += acc;
    }
  }
  if (din != nullptr) {
    dcols_buf.resize(static_cast<size_t>(c * 9 * hw));
    gemm(c * 9, hw, o, weights, true, dout, false, dcols_buf.data(), 0.0);
    col2im3x3(dcols_buf.data(), c, h, w, din);
  }
}

void mfm_forward(const double* in, int64_t c_out, int64_t s, double* out, uint8_t* mask) {
  for (int64_t ch = 0; ch < c_out; ++ch) {
    const double* a = in + ch * s;
    const double* b = in + (ch + c_out) * s;
    double* y = out + ch * s;
    uint8_t* m = mask + ch * s;
    for (int64_t i = 0; i < s; ++i) {
      if (a[i] >= b[i]) {
        y[i] = a[i];
        m[i] = 0;
      } else {
        y[i] = b[i];
        m[i] = 1;
      }
    }
  }
}

void mfm_backward(const double* dout, int64_t c_out, int64_t s, const uint8_t* mask, double* din) {
  std::memset(din, 0, sizeof(double) * static_cast<size_t>(2 * c_out * s));
  for (int64_t ch = 0; ch < c_out; ++ch) {
    const double* dy = dout + ch * s;
    const uint8_t* m = mask + ch * s;
    double* da = din + ch * s;
    double* db = din + (ch + c_out) * s;
    for (int64_t i = 0; i < s; ++i) {
      if (m[i] == 0) da[i] = dy[i];
      else db[i] = dy[i];
    }
  }
}

void maxpool2x2_forward(const double* in, int64_t c, int64_t h, int64_t w, double* out,
                        uint8_t* idx) {
  int64_t ho = h / 2, wo = w / 2;
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* src = in + ch * h * w;
    double* dst = out + ch * ho * wo;
    uint8_t* id = idx + ch * ho * wo;
    for (int64_t y = 0; y < ho; ++y) {
      for (int64_t x = 0; x < wo; ++x) {
        const double* p = src + 2 * y * w + 2 * x;
        double best = p[0];
        uint8_t bi = 0;
        if (p[1] > best) { best = p[1]; bi = 1; }
        if (p[w] > best) { best = p[w]; bi = 2; }
        if (p[w + 1] > best) { best = p[w + 1]; bi = 3; }
        dst[y * wo + x] = best;
        id[y * wo + x] = bi;
      }
    }
  }
}

void maxpool2x2_backward(const double* dout, int64_t c, int64_t h, int64_t w, const uint8_t* idx,
                         double* din) {
  int64_t ho = h / 2, wo = w / 2;
  std::memset(din, 0, sizeof(double) * static_cast<size_t>(c * h * w));
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* dy = dout + ch * ho * wo;
    const uint8_t* id = idx + ch * ho * wo;
    double* dst = din + ch * h * w;
    for (int64_t y = 0; y < ho; ++y) {
      for (int64_t x = 0; x < wo; ++x) {
        uint8_t bi = id[y * wo + x];
        int64_t oy = 2 * y + (bi >> 1);
        int64_t ox = 2 * x + (bi & 1);
        dst[oy * w + ox] += dy[y * wo + x];
      }
    }
  }
}

void BatchNorm::init(int64_t c, const std::string& name) {
  channels = c;
  gamma.setup(name + ".gamma", {c});
  beta.setup(name + ".beta", {c});
  gamma.value.fill(1.0);
  run_mean = Tensor({c});
  run_var = Tensor::full({c}, 1.0);
}

void BatchNorm::forward(const Tensor& x, int64_t n, int64_t s, bool training, Tensor& y,
                        Cache& cache) {
  int64_t c = channels;
  y = Tensor({n, c, s});
  cache.xhat = Tensor({n, c, s});
  cache.inv_std.assign(static_cast<size_t>(c), 0.0);
  cache.training = training;
  cache.n = n;
  cache.s = s;

  for (int64_t ch = 0; ch < c; ++ch) {
    double mean, inv_std;
    double cnt = static_cast<double>(n * s);
    if (training) {
      double sum = 0.0, sq = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double* row = x.data() + (i * c + ch) * s;
        for (int64_t j = 0; j < s; ++j) {
          sum += row[j];
          sq += row[j] * row[j];
        }
      }
      mean = sum / cnt;
      double var = std::max(0.0, sq / cnt - mean * mean);
      inv_std = 1.0 / std::sqrt(var + eps);
      double unbiased = cnt > 1.0 ? var * cnt / (cnt - 1.0) : var;
      run_mean[ch] = (1.0 - momentum) * run_mean[ch] + momentum * mean;
      run_var[ch] = (1.0 - momentum) * run_var[ch] + momentum * unbiased;
    } else {
      mean = run_mean[ch];
      inv_std = 1.0 / std::sqrt(run_var[ch] + eps);
    }
    cache.inv_std[static_cast<size_t>(ch)] = inv_std;
    double g = gamma.value[ch], bt = beta.value[ch];
    for (int64_t i = 0; i < n; ++i) {
      const double* row = x.data() + (i * c + ch) * s;
      double* xh = cache.xhat.data() + (i * c + ch) * s;
      double* yo = y.data() + (i * c + ch) * s;
      for (int64_t j = 0; j < s; ++j) {
        xh[j] = (row[j] - mean) * inv_std;
        yo[j] = g * xh[j] + bt;
      }
    }
  }
}

void BatchNorm::eval_output(const Tensor& x, int64_t n, int64_t s, Tensor& y, Tensor& xhat_eval,
                            std::vector<double>& inv_std_run) const {
  int64_t c = channels;
  y = Tensor({n, c, s});
  xhat_eval = Tensor({n, c, s});
  inv_std_run.assign(static_cast<size_t>(c), 0.0);
  for (int64_t ch = 0; ch < c; ++ch) {
    double mean = run_mean[ch];
    double inv_std = 1.0 / std::sqrt(run_var[ch] + eps);
    inv_std_run[static_cast<size_t>(ch)] = inv_std;
    double g = gamma.value[ch], bt = beta.value[ch];
    for (int64_t i = 0; i < n; ++i) {
      const double* row = x.data() + (i * c + ch) * s;
      double* xh = xhat_eval.data() + (i * c + ch) * s;
      double* yo = y.data() + (i * c + ch) * s;
      for (int64_t j = 0; j < s; ++j) {
        xh[j] = (row[j] - mean) * inv_std;
        yo[j] = g * xh[j] + bt;
      }
    }
  }
}

void BatchNorm::backward(const Cache& cache, const Tensor& dy, Tensor& dx) {
  int64_t c = channels, n = cache.n, s = cache.s;
  dx = Tensor({n, c, s});
  for (int64_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double* dyr = dy.data() + (i * c + ch) * s;
      const double* xh = cache.xhat.data() + (i * c + ch) * s;
      for (int64_t j = 0; j < s; ++j) {
        sum_dy += dyr[j];
        sum_dy_xhat += dyr[j] * xh[j];
      }
    }
    gamma.grad[ch] += sum_dy_xhat;
    beta.grad[ch] += sum_dy;

    double g = gamma.value[ch];
    double inv_std = cache.inv_std[static_cast<size_t>(ch)];
    if (cache.training) {
      double cnt = static_cast<double>(n * s);
      double mean_dy = sum_dy / cnt;
      double mean_dy_xhat = sum_dy_xhat / cnt;
      for (int64_t i = 0; i < n; ++i) {
        const double* dyr = dy.data() + (i * c + ch) * s;
        const double* xh = cache.xhat.data() + (i * c + ch) * s;
        double* dxr = dx.data() + (i * c + ch) * s;
        for (int64_t j = 0; j < s; ++j)
          dxr[j] = g * inv_std * (dyr[j] - mean_dy - xh[j] * mean_dy_xhat);
      }
    } else {
      for (int64_t i = 0; i < n; ++i) {
        const double* dyr = dy.data() + (i * c + ch) * s;
        double* dxr = dx.data() + (i * c + ch) * s;
        for (int64_t j = 0; j < s; ++j) dxr[j] = g * inv_std * dyr[j];
      }
    }
  }
}

void BatchNorm::backward_eval_path(const Tensor& xhat_eval, const std::vector<double>& inv_std_run,
                                   const Tensor& de, int64_t n, int64_t s, Tensor& dx_accum) {
  int64_t c = channels;
  for (int64_t ch = 0; ch < c; ++ch) {
    double g = gamma.value[ch];
    double inv_std = inv_std_run[static_cast<size_t>(ch)];
    double sum_de = 0.0, sum_de_xhat = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double* der = de.data() + (i * c + ch) * s;
      const double* xh = xhat_eval.data() + (i * c + ch) * s;
      double* dxr = dx_accum.data() + (i * c + ch) * s;
      for (int64_t j = 0; j < s; ++j) {
        sum_de += der[j];
        sum_de_xhat += der[j] * xh[j];
        dxr[j] += g * inv_std * der[j];
      }
    }
    gamma.grad[ch] += sum_de_xhat;
    beta.grad[ch] += sum_de;
  }
}

void Dense::init(int64_t in_dim, int64_t out_dim, const std::string& name, Rng& rng) {
  in = in_dim;
  out = out_dim;
  w.setup(name + ".w", {out, in});
  b.setup(name + ".b", {out});
  init_he_normal(w.value, in, rng);
}

void Dense::forward(const Tensor& x, int64_t n, Tensor& y) const {
  y = Tensor({n, out});
  gemm(n, out, in, x.data(), false, w.value.data(), true, y.data(), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < out; ++j) y.data()[i * out + j] += b.value[j];
}

void Dense::backward(const Tensor& x, const Tensor& dy, int64_t n, Tensor* dx) {
  gemm(out, in, n, dy.data(), true, x.data(), false, w.grad.data(), 1.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < out; ++j) b.grad[j] += dy.data()[i * out + j];
  if (dx != nullptr) {
    *dx = Tensor({n, in});
    gemm(n, in, out, dy.data(), false, w.value.data(), false, dx->data(), 0.0);
  }
}

void dropout_forward(Tensor& x, double p, Rng& rng, std::vector<uint8_t>& mask) {
  mask.assign(static_cast<size_t>(x.numel()), 1);
  double scale = 1.0 / (1.0 - p);
  for (int64_t i = 0; i < x.numel(); ++i) {
    if (rng.uniform() < p) {
      mask[static_cast<size_t>(i)] = 0;
      x[i] = 0.0;
    } else {
      x[i] *= scale;
    }
  }
}

void dropout_backward(Tensor& dx, double p, const std::vector<uint8_t>& mask) {
  double scale = 1.0 / (1.0 - p);
  for (int64_t i = 0; i < dx.numel(); ++i)
    dx[i] = mask[static_cast<size_t>(i)] ? dx[i] * scale : 0.0;
}

void leaky_relu_forward(Tensor& x, double slope, std::vector<uint8_t>& neg_mask) {
  neg_mask.assign(static_cast<size_t>(x.numel()), 0);
  for (int64_t i = 0; i < x.numel(); ++i) {
    if (x[i] < 0.0) {
      neg_mask[static_cast<size_t>(i)] = 1;
      x[i] *= slope;
    }
  }
}

void leaky_relu_backward(Tensor& dx, double slope, const std::vector<uint8_t>& neg_mask) {
  for (int64_t i = 0; i < dx.numel(); ++i)
    if (neg_mask[static_cast<size_t>(i)]) dx[i] *= slope;
}

std::vector<double> softmax(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> out(z.size());
  double sum = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    // Floor at DBL_MIN so weights stay strictly positive even when the
    // shifted exponent underflows; the perturbation is far below 1e-6.
    out[i] = std::max(std::exp(z[i] - mx), std::numeric_limits<double>::min());
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

double softmax_xent(const Tensor& logits, int64_t n, int64_t k, const std::vector<int>& labels,
                    Tensor* dlogits) {
  if (dlogits != nullptr) *dlogits = Tensor({n, k});
  double loss = 0.0;
  std::vector<double> row(static_cast<size_t>(k));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < k; ++j) row[static_cast<size_t>(j)] = logits.data()[i * k + j];
    std::vector<double> prob = softmax(row);
    int y = labels[static_cast<size_t>(i)];
    loss += -std::log(std::max(prob[static_cast<size_t>(y)], 1e-300));
    if (dlogits != nullptr) {
      for (int64_t j = 0; j < k; ++j) {
        double d = prob[static_cast<size_t>(j)] - (j == y ? 1.0 : 0.0);
        dlogits->data()[i * k + j] = d / static_cast<double>(n);
      }
    }
  }
  return loss / static_cast<double>(n);
}

void AdamW::init(const std::vector<Param*>& params) {
  t = 0;
  m.clear();
  v.clear();
  for (Param* p : params) {
    m.emplace_back(p->value.shape());
    v.emplace_back(p->value.shape());
  }
}

void AdamW::step(const std::vector<Param*>& params, double lr) {
  if (m.size() != params.size()) throw std::logic_error("AdamW: init/step param list mismatch");
  ++t;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    Tensor& mi = m[pi];
    Tensor& vi = v[pi];
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      double g = p.grad[i];
      mi[i] = beta1 * mi[i] + (1.0 - beta1) * g;
      vi[i] = beta2 * vi[i] + (1.0 - beta2) * g * g;
      double mhat = mi[i] / bc1;
      double vhat = vi[i] / bc2;
      p.value[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.value[i]);
    }
  }
}

void init_he_normal(Tensor& w, int64_t fan_in, Rng& rng) {
  double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, std);
}

}  // namespace moe::nn
