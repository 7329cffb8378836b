#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "moe/checkpoint.hpp"
#include "moe/frontend.hpp"
#include "moe/nn.hpp"
#include "moe/tensor.hpp"

namespace moe::lcnn {

/// Max-Feature-Map over the leading (channel) axis: output channel j is the
/// elementwise max of input channels j and j + c. Channel count must be even.
Tensor mfm(const Tensor& a);

struct ExpertOutput {
  std::array<double, 2> logits;    // index 0 = real, 1 = fake
  std::vector<double> embedding;   // 64-dim tap after the final batch norm
};

struct ExpertBatchOutput {
  Tensor logits;   // (N, 2)
  Tensor e_train;  // (N, 64) embedding under the forward mode's batch-norm
  Tensor e_eval;   // (N, 64) embedding under eval-mode (running) batch-norm
};

struct ExpertCache {
  int64_t n = 0;
  bool training = false;
  Tensor mels;                                 // (N, 1, 80, 188)
  std::array<std::vector<uint8_t>, 4> mfm_mask;
  std::array<std::vector<uint8_t>, 4> pool_idx;
  std::array<nn::BatchNorm::Cache, 3> bn_cache;
  std::array<Tensor, 3> bn_out;                // conv inputs for blocks 2..4
  Tensor pooled;                               // (N, 64) global mean pool
  std::vector<uint8_t> mfm1d_mask;
  Tensor a1;                                   // (N, 64) input to fc2
  nn::BatchNorm::Cache bn_emb_cache;
  Tensor xhat_eval;                            // (N, 64, 1) for the gate path
  std::vector<double> inv_std_run;
  std::vector<uint8_t> dropout_mask;
  Tensor fc3_in;                               // (N, 64) classifier input
};

/// LCNN expert over 80x188 log-mel inputs:
/// 4 conv3x3+MFM+pool blocks (32/48/64/64 channels post-MFM, batch norm
/// between blocks), global mean pooling, dense 64->128 + MFM, dense 64->64,
/// batch norm (the 64-dim embedding tap), dropout 0.5, dense 64->2.
class ExpertNet {
 public:
  static constexpr const char* kArchTag = "lcnn9-mel-v1";
  static constexpr int64_t kMelBins = 80;
  static constexpr int64_t kFrames = 188;
  static constexpr int64_t kEmbedDim = 64;

  ExpertNet();

  /// Deterministic initialization: He-normal conv/dense weights, zero biases,
  /// batch-norm scale 1 / shift 0 with running mean 0 / variance 1.
  void init(uint64_t seed);

  std::vector<nn::Param*> params();
  std::vector<const nn::Param*> params() const;

  /// Single-sample eval-mode forward (pure; batch norms use running stats).
  ExpertOutput forward_eval(const Tensor& mel) const;

  /// Batch forward. training=true uses batch statistics, updates running
  /// stats and applies dropout (rng required); e_eval always carries
  /// eval-semantics batch norm for the gating path.
  ExpertBatchOutput forward_batch(const Tensor& mels, bool training, Rng* dropout_rng,
                                  ExpertCache& cache);

  /// Accumulates parameter gradients. dlogits is (N, 2); de_eval, when
  /// non-null, is the (N, 64) gradient flowing into e_eval from the gate.
  void backward_batch(const ExpertCache& cache, const Tensor& dlogits, const Tensor* de_eval);

  /// Classifier head applied to an embedding, eval semantics (dropout off).
  std::array<double, 2> logits_from_embedding(const std::vector<double>& e) const;

  void pack(ckpt::Container& c, const std::string& prefix) const;
  void unpack(const ckpt::Container& c, const std::string& prefix);

  const std::string& domain() const { return domain_; }
  void set_domain(std::string d) { domain_ = std::move(d); }

 private:
  friend struct ExpertAccess;

  static constexpr int64_t kConvOut[4] = {64, 96, 128, 128};
  static constexpr int64_t kMfmOut[4] = {32, 48, 64, 64};
  static constexpr int64_t kConvIn[4] = {1, 32, 48, 64};
  static constexpr int64_t kH[5] = {80, 40, 20, 10, 5};
  static constexpr int64_t kW[5] = {188, 94, 47, 23, 11};

  nn::Param conv_w_[4], conv_b_[4];
  nn::BatchNorm bn_[3];
  nn::Dense fc1_, fc2_, fc3_;
  nn::BatchNorm bn_emb_;
  double dropout_p_ = 0.5;
  std::string domain_;
};

/// Writes an expert checkpoint plus a JSON sidecar at path + ".json".
void save_expert(const ExpertNet& net, const std::string& path, const std::string& sidecar_json);

/// Loads an expert checkpoint; rejects mismatched architecture tags.
ExpertNet load_expert(const std::string& path);

}  // namespace moe::lcnn
