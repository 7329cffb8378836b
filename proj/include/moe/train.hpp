#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "moe/corpus.hpp"
#include "moe/frontend.hpp"
#include "moe/fusion.hpp"
#include "moe/lcnn.hpp"

namespace moe::train {

struct TrainConfig {
  int64_t epochs = 100;
  int64_t patience = 20;
  int64_t batch_size = 128;  // reduced to 64 for joint MoE training
  double lr0 = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  uint64_t seed = 0;

  void validate() const;
};

/// Cosine annealing to zero: lr(t) = 0.5 * lr0 * (1 + cos(pi * t / T)).
double cosine_lr(int64_t t, int64_t total_epochs, double lr0);

/// Patience-based early stopping on dev loss; improvement is strict (<).
struct EarlyStopper {
  explicit EarlyStopper(int64_t patience_epochs) : patience(patience_epochs) {}

  int64_t patience;
  double best = std::numeric_limits<double>::infinity();
  int64_t since_improvement = 0;

  struct Update {
    bool improved = false;
    bool stop = false;
  };
  Update update(double dev_loss);
};

struct EpochLogRow {
  int64_t epoch;
  double train_loss;
  double dev_loss;
  double lr;
  bool stopped;
};

/// Emits the per-epoch CSV log: epoch,train_loss,dev_loss,lr,stopped.
void write_epoch_log(const std::vector<EpochLogRow>& rows, const std::string& path);

/// Memoized waveform -> fixed-length log-mel features, keyed by entry path.
class MelCache {
 public:
  MelCache(frontend::MelConfig cfg, std::string data_root)
      : cfg_(cfg), data_root_(std::move(data_root)) {}

  const Tensor& get(const std::string& entry_path);

 private:
  frontend::MelConfig cfg_;
  std::string data_root_;
  std::unordered_map<std::string, Tensor> cache_;
};

struct ExpertTrainResult {
  lcnn::ExpertNet net;
  std::vector<EpochLogRow> log;
  double best_dev_loss = 0.0;
};

/// Pre-trains one LCNN expert: class-balanced batches, cross-entropy,
/// cosine-annealed AdamW, best-dev-loss snapshot returned. Deterministic
/// given cfg.seed.
ExpertTrainResult train_expert(const corpus::DatasetManifest& manifest, const TrainConfig& cfg,
                               const frontend::MelConfig& mel_cfg, const std::string& data_root);

/// Single-model baseline: pools every manifest's entries into one dataset
/// (domain tags kept for analysis) and trains exactly like train_expert.
ExpertTrainResult train_joint_baseline(const std::vector<corpus::DatasetManifest>& manifests,
                                       const TrainConfig& cfg, const frontend::MelConfig& mel_cfg,
                                       const std::string& data_root);

struct MoeTrainOptions {
  /// Ablation hook: bypass the gate with constant uniform weights.
  bool freeze_gate_uniform = false;
};

struct MoeTrainResult {
  fusion::MoEModel model;
  std::vector<EpochLogRow> log;
  double best_dev_loss = 0.0;
};

/// Joint MoE fine-tuning: experts start from pre-trained weights (and keep
/// updating, batch norms included), the gate is freshly initialized from the
/// seed. Train entries are pooled with per-domain equalization so every
/// domain is sampled with equal probability.
MoeTrainResult train_moe(std::vector<lcnn::ExpertNet> experts, fusion::GateVariant variant,
                         const std::vector<corpus::DatasetManifest>& manifests,
                         const TrainConfig& cfg, const frontend::MelConfig& mel_cfg,
                         const std::string& data_root, const MoeTrainOptions& opts = {});

/// Pools train-split entries across manifests, oversampling each
/// (domain, class) cell with replacement up to the largest cell so domains
/// are equally likely under uniform sampling. Deterministic given seed.
std::vector<corpus::ManifestEntry> pool_equalized_train(
    const std::vector<corpus::DatasetManifest>& manifests, uint64_t seed);

}  // namespace moe::train
