#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moe/tensor.hpp"
#include "moe/util.hpp"

namespace moe::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  void setup(std::string n, std::vector<int64_t> shape) {
    name = std::move(n);
    value = Tensor(shape);
    grad = Tensor(shape);
  }
};

void zero_grads(const std::vector<Param*>& params);

/// C (m x n) = op(A) * op(B) + beta * C, all row-major.
void gemm(int64_t m, int64_t n, int64_t k, const double* a, bool trans_a, const double* b,
          bool trans_b, double* c, double beta);

// -- 3x3 convolution, stride 1, pad 1, single sample ------------------------

void im2col3x3(const double* in, int64_t c, int64_t h, int64_t w, double* cols);
void col2im3x3(const double* cols, int64_t c, int64_t h, int64_t w, double* out);

/// out (o x h x w) = weights (o x c*9) * im2col(in) + bias.
void conv3x3_forward_one(const double* in, int64_t c, int64_t h, int64_t w, const double* weights,
                         const double* bias, int64_t o, double* out, std::vector<double>& cols_buf);

/// Accumulates dw/db; writes din when non-null (din is overwritten).
void conv3x3_backward_one(const double* in, int64_t c, int64_t h, int64_t w, const double* weights,
                          const double* dout, int64_t o, double* dw, double* db, double* din,
                          std::vector<double>& cols_buf, std::vector<double>& dcols_buf);

// -- Max-Feature-Map over the channel axis -----------------------------------

/// in has 2*c_out channels of s elements each; out[j] = max(in[j], in[j+c_out]).
/// mask records the winning half (0 = first, ties included; 1 = second).
void mfm_forward(const double* in, int64_t c_out, int64_t s, double* out, uint8_t* mask);
void mfm_backward(const double* dout, int64_t c_out, int64_t s, const uint8_t* mask, double* din);

// -- 2x2 max pooling, stride 2 (floor) ---------------------------------------

void maxpool2x2_forward(const double* in, int64_t c, int64_t h, int64_t w, double* out,
                        uint8_t* idx);
void maxpool2x2_backward(const double* dout, int64_t c, int64_t h, int64_t w, const uint8_t* idx,
                         double* din);

// -- Batch normalization ------------------------------------------------------

/// Per-channel batch norm over tensors laid out as (N, C, S) with S spatial
/// elements (S == 1 for the 1-d case). Running stats follow the usual
/// momentum update with unbiased batch variance.
struct BatchNorm {
  Param gamma, beta;
  Tensor run_mean, run_var;
  double momentum = 0.1;
  double eps = 1e-5;
  int64_t channels = 0;

  void init(int64_t c, const std::string& name);

  struct Cache {
    Tensor xhat;                   // (N, C, S)
    std::vector<double> inv_std;   // per channel (batch or running, per mode)
    bool training = false;
    int64_t n = 0, s = 1;
  };

  /// training=true: batch statistics, running stats updated after use.
  /// training=false: running statistics.
  void forward(const Tensor& x, int64_t n, int64_t s, bool training, Tensor& y, Cache& cache);

  /// Eval-semantics output under the *current* running stats without touching
  /// them; xhat_eval/inv_std_run are snapshots for the matching backward.
  void eval_output(const Tensor& x, int64_t n, int64_t s, Tensor& y, Tensor& xhat_eval,
                   std::vector<double>& inv_std_run) const;

  /// Accumulates gamma/beta grads, overwrites dx.
  void backward(const Cache& cache, const Tensor& dy, Tensor& dx);

  /// Backward of eval_output: dx += gamma * inv_std_run * de.
  void backward_eval_path(const Tensor& xhat_eval, const std::vector<double>& inv_std_run,
                          const Tensor& de, int64_t n, int64_t s, Tensor& dx_accum);
};

// -- Dense layer --------------------------------------------------------------

struct Dense {
  Param w;  // (out x in), row-major
  Param b;  // (out)
  int64_t in = 0, out = 0;

  void init(int64_t in_dim, int64_t out_dim, const std::string& name, Rng& rng);
  void forward(const Tensor& x, int64_t n, Tensor& y) const;
  /// Accumulates w/b grads; writes dx when non-null (overwritten).
  void backward(const Tensor& x, const Tensor& dy, int64_t n, Tensor* dx);
};

// -- Elementwise pieces ---------------------------------------------------------

/// Train-mode inverted dropout in place; mask[i] == 1 means kept.
void dropout_forward(Tensor& x, double p, Rng& rng, std::vector<uint8_t>& mask);
void dropout_backward(Tensor& dx, double p, const std::vector<uint8_t>& mask);

void leaky_relu_forward(Tensor& x, double slope, std::vector<uint8_t>& neg_mask);
void leaky_relu_backward(Tensor& dx, double slope, const std::vector<uint8_t>& neg_mask);

/// Numerically stable softmax of a small vector.
std::vector<double> softmax(const std::vector<double>& z);

/// Mean cross-entropy over a batch of logits (n x k); when dlogits is non-null
/// it receives d(loss)/d(logits) including the 1/n factor.
double softmax_xent(const Tensor& logits, int64_t n, int64_t k, const std::vector<int>& labels,
                    Tensor* dlogits);

// -- AdamW ----------------------------------------------------------------------

struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
  int64_t t = 0;
  std::vector<Tensor> m, v;

  void init(const std::vector<Param*>& params);
  void step(const std::vector<Param*>& params, double lr);
};

/// He-normal initialization: N(0, sqrt(2 / fan_in)).
void init_he_normal(Tensor& w, int64_t fan_in, Rng& rng);

}  // namespace moe::nn
