#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "moe/checkpoint.hpp"
#include "moe/frontend.hpp"
#include "moe/lcnn.hpp"
#include "moe/nn.hpp"
#include "moe/tensor.hpp"

namespace moe::fusion {

enum class GateVariant { Standard, Enhanced };

const char* variant_name(GateVariant v);
GateVariant parse_variant(const std::string& s);

/// Learnable weighted elementwise product of the expert embeddings:
/// w[j] = (prod_i e_i[j]) * p[j]. The per-element product is evaluated in
/// value-sorted factor order so the result is independent of expert order.
std::vector<double> combined_embedding(const std::vector<std::vector<double>>& e_list,
                                       const std::vector<double>& p);

/// Gate input: [e_1, ..., e_N, w] concatenated in expert index order.
std::vector<double> gate_input(const std::vector<std::vector<double>>& e_list,
                               const std::vector<double>& w);

/// Soft fusion: z = sum_i alpha_i * z_i.
std::array<double, 2> fuse(const std::vector<double>& alpha,
                           const std::vector<std::array<double, 2>>& z_list);

/// Fake-class likelihood: softmax(z)[1], computed with max subtraction.
double predict(const std::array<double, 2>& z);

/// Mean of per-expert fake probabilities (the average-ensemble combiner).
double mean_fake_probability(const std::vector<std::array<double, 2>>& z_list);

/// Gating network. Both variants share the head
/// dense -> dropout(0.3) -> batch norm -> Leaky ReLU(0.01) -> softmax;
/// the standard variant prepends a 2-block conv+MFM trunk (16/24 channels
/// post-MFM, 2x2 pooling, batch norm between blocks) with global mean
/// pooling over the mel input, the enhanced variant feeds the concatenated
/// embedding vector straight into the dense layer.
class GateNet {
 public:
  static constexpr const char* kArchTag = "gate-v1";
  static constexpr int64_t kTrunkChannels[2] = {32, 48};  // pre-MFM
  static constexpr int64_t kTrunkPost[2] = {16, 24};

  void init_standard(int64_t n_experts, uint64_t seed);
  void init_enhanced(int64_t n_experts, int64_t d, uint64_t seed);

  GateVariant variant() const { return variant_; }
  int64_t n_experts() const { return n_experts_; }
  int64_t head_in_dim() const { return head_.in; }

  std::vector<nn::Param*> params();

  struct Cache {
    int64_t n = 0;
    bool training = false;
    Tensor mels;
    std::array<std::vector<uint8_t>, 2> mfm_mask;
    std::array<std::vector<uint8_t>, 2> pool_idx;
    nn::BatchNorm::Cache bn_tr_cache;
    Tensor bn_tr_out;
    Tensor head_in;  // (n, head in dim)
    std::vector<uint8_t> dropout_mask;
    nn::BatchNorm::Cache bn_out_cache;
    std::vector<uint8_t> lrelu_mask;
    Tensor glogits;  // (n, N) post-activation gate logits
    Tensor alpha;    // (n, N)
  };

  /// input: (N,1,80,188) mels for standard, (N, (n_experts+1)*d) for enhanced.
  /// Returns alpha (n, N), each row a softmax over gate logits.
  Tensor forward_batch(const Tensor& input, bool training, Rng* dropout_rng, Cache& cache);

  /// dglogits is the gradient at the post-activation gate logits. Returns the
  /// gradient w.r.t. the head input for the enhanced variant (empty tensor
  /// for standard, whose trunk consumes it internally).
  Tensor backward_batch(const Cache& cache, const Tensor& dglogits);

  /// Single-sample eval helpers with variant checks.
  std::vector<double> forward_eval_mel(const Tensor& mel);
  std::vector<double> forward_eval_vec(const std::vector<double>& e_input);

  void pack(ckpt::Container& c, const std::string& prefix) const;
  void unpack(const ckpt::Container& c, const std::string& prefix);

 private:
  GateVariant variant_ = GateVariant::Enhanced;
  int64_t n_experts_ = 0;
  nn::Param conv_w_[2], conv_b_[2];
  nn::BatchNorm bn_tr_;
  nn::Dense head_;
  nn::BatchNorm bn_out_;
  double dropout_p_ = 0.3;
  double lrelu_slope_ = 0.01;
};

/// The assembled detector: N domain experts, the gate, and the learnable
/// combination vector p (initialized to ones).
struct MoEModel {
  GateVariant variant = GateVariant::Enhanced;
  int64_t n_experts = 0;
  std::vector<lcnn::ExpertNet> experts;
  GateNet gate;
  nn::Param p;

  /// Builds the gate and p for already-populated experts.
  void init_gate(uint64_t seed);
  std::vector<nn::Param*> trainable_params();
  std::vector<std::string> domains() const;
};

struct MoEOutput {
  double yhat = 0.0;
  std::array<double, 2> z{};
  std::vector<double> alpha;
  std::vector<std::array<double, 2>> expert_logits;
  std::vector<std::vector<double>> embeddings;
};

/// Dense-MoE eval forward on a precomputed 80x188 log-mel input: every expert
/// is queried, the gate mixes their logits, predict() maps to a likelihood.
MoEOutput moe_forward_mel(MoEModel& model, const Tensor& mel);

/// Full pipeline on a raw waveform: fix_length -> melspec -> experts -> gate
/// -> fuse -> predict. Eval mode, fully deterministic.
MoEOutput moe_forward(MoEModel& model, const frontend::Waveform& w,
                      const frontend::MelConfig& cfg = frontend::MelConfig{});

/// Spec'd gate entry points with wrong-variant checks.
std::vector<double> gate_forward(MoEModel& model, const Tensor& mel);
std::vector<double> gate_forward(MoEModel& model, const std::vector<std::vector<double>>& e_list);

/// Input-independent average ensemble over per-expert fake probabilities.
double ensemble_average(std::vector<lcnn::ExpertNet>& experts, const frontend::Waveform& w,
                        const frontend::MelConfig& cfg = frontend::MelConfig{});
double ensemble_average_mel(std::vector<lcnn::ExpertNet>& experts, const Tensor& mel);

// -- Batch training path ------------------------------------------------------

struct MoEBatchCaches {
  std::vector<lcnn::ExpertCache> expert;
  GateNet::Cache gate;
  std::vector<lcnn::ExpertBatchOutput> eouts;
  Tensor gate_in;  // (n, (N+1)*d), enhanced only
  Tensor alpha;    // (n, N)
};

struct MoEBatchOutput {
  Tensor fused;  // (n, 2)
  Tensor alpha;  // (n, N)
};

/// Training/eval batch forward through the full MoE. freeze_gate_uniform
/// bypasses the gate with constant uniform weights (ablation hook).
MoEBatchOutput moe_forward_batch(MoEModel& model, const Tensor& mels, bool training,
                                 Rng* dropout_rng, MoEBatchCaches& caches,
                                 bool freeze_gate_uniform = false);

/// Backward of moe_forward_batch given d(loss)/d(fused logits).
void moe_backward_batch(MoEModel& model, const MoEBatchCaches& caches, const Tensor& dfused,
                        bool freeze_gate_uniform = false);

void save_moe(const MoEModel& model, const std::string& path, const std::string& sidecar_json);
MoEModel load_moe(const std::string& path);

}  // namespace moe::fusion
