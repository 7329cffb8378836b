#include "moe/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "moe/nn.hpp"
#include "moe/util.hpp"

namespace moe::train {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
  if (lr0 <= 0.0) throw std::invalid_argument("TrainConfig: lr0 must be > 0");
  if (batch_size < 2 || batch_size % 2 != 0)
    throw std::invalid_argument("TrainConfig: batch_size must be a positive even number");
}

double cosine_lr(int64_t t, int64_t total_epochs, double lr0) {
  if (total_epochs < 1) throw std::invalid_argument("cosine_lr: total_epochs must be >= 1");
  if (t < 0 || t > total_epochs)
    throw std::invalid_argument("cosine_lr: epoch index out of range [0, T]");
  return 0.5 * lr0 * (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(total_epochs)));
}

EarlyStopper::Update EarlyStopper::update(double dev_loss) {
  Update u;
  if (dev_loss < best) {
    best = dev_loss;
    since_improvement = 0;
    u.improved = true;
  } else {
    ++since_improvement;
  }
  u.stop = since_improvement >= patience;
  return u;
}

void write_epoch_log(const std::vector<EpochLogRow>& rows, const std::string& path) {
  std::ostringstream out;
  out << "epoch,train_loss,dev_loss,lr,stopped\n";
  for (const auto& r : rows)
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.dev_loss)
        << ',' << format_double(r.lr) << ',' << (r.stopped ? 1 : 0) << '\n';
  write_text_file(path, out.str());
}

const Tensor& MelCache::get(const std::string& entry_path) {
  std::string full = join_path(data_root_, entry_path);
  auto it = cache_.find(full);
  if (it != cache_.end()) return it->second;
  frontend::Waveform w = frontend::load_audio(full);
  frontend::MelSpectrogram ms = frontend::melspec(frontend::fix_length(w), cfg_);
  return cache_.emplace(full, std::move(ms.values)).first->second;
}

namespace {

Tensor assemble_batch(MelCache& mels, const std::vector<corpus::ManifestEntry>& entries,
                      std::vector<int>& labels) {
  int64_t n = static_cast<int64_t>(entries.size());
  Tensor batch({n, 1, lcnn::ExpertNet::kMelBins, lcnn::ExpertNet::kFrames});
  labels.resize(static_cast<size_t>(n));
  int64_t stride = lcnn::ExpertNet::kMelBins * lcnn::ExpertNet::kFrames;
  for (int64_t i = 0; i < n; ++i) {
    const Tensor& m = mels.get(entries[static_cast<size_t>(i)].path);
    if (m.numel() != stride) throw std::runtime_error("assemble_batch: unexpected mel shape");
    std::copy(m.data(), m.data() + stride, batch.data() + i * stride);
    labels[static_cast<size_t>(i)] = entries[static_cast<size_t>(i)].label;
  }
  return batch;
}

void require_both_classes(const std::vector<corpus::ManifestEntry>& entries, const char* what) {
  bool has[2] = {false, false};
  for (const auto& e : entries) has[e.label] = true;
  if (!has[0] || !has[1])
    throw std::runtime_error(std::string("training requires both classes in the ") + what +
                             " split");
}

double expert_dev_loss(lcnn::ExpertNet& net, MelCache& mels,
                       const std::vector<corpus::ManifestEntry>& dev) {
  double total = 0.0;
  int64_t count = 0;
  std::vector<int> labels;
  for (size_t start = 0; start < dev.size(); start += 64) {
    size_t end = std::min(dev.size(), start + 64);
    std::vector<corpus::ManifestEntry> chunk(dev.begin() + static_cast<std::ptrdiff_t>(start),
                                             dev.begin() + static_cast<std::ptrdiff_t>(end));
    Tensor batch = assemble_batch(mels, chunk, labels);
    lcnn::ExpertCache cache;
    lcnn::ExpertBatchOutput out = net.forward_batch(batch, false, nullptr, cache);
    int64_t n = static_cast<int64_t>(chunk.size());
    total += nn::softmax_xent(out.logits, n, 2, labels, nullptr) * static_cast<double>(n);
    count += n;
  }
  return total / static_cast<double>(count);
}

ExpertTrainResult train_expert_impl(const corpus::DatasetManifest& manifest,
                                    const TrainConfig& cfg, const frontend::MelConfig& mel_cfg,
                                    const std::string& data_root) {
  cfg.validate();
  std::vector<corpus::ManifestEntry> dev = manifest.filter(corpus::Split::Dev);
  if (dev.empty()) throw std::runtime_error("train_expert: empty dev split");
  require_both_classes(manifest.filter(corpus::Split::Train), "train");
  require_both_classes(dev, "dev");

  MelCache mels(mel_cfg, data_root);
  corpus::BalancedBatcher batcher(manifest, corpus::Split::Train, static_cast<int>(cfg.batch_size),
                                  derive_seed(cfg.seed, "batches"));

  lcnn::ExpertNet net;
  net.init(derive_seed(cfg.seed, "expert-init"));
  std::vector<nn::Param*> params = net.params();
  nn::AdamW opt;
  opt.beta1 = cfg.beta1;
  opt.beta2 = cfg.beta2;
  opt.weight_decay = cfg.weight_decay;
  opt.init(params);
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));

  EarlyStopper stopper(cfg.patience);
  ExpertTrainResult result;
  lcnn::ExpertNet best = net;
  std::vector<int> labels;

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cosine_lr(epoch, cfg.epochs, cfg.lr0);
    double train_loss = 0.0;
    auto batches = batcher.epoch_batches(epoch);
    for (const auto& entries : batches) {
      Tensor batch = assemble_batch(mels, entries, labels);
      nn::zero_grads(params);
      lcnn::ExpertCache cache;
      lcnn::ExpertBatchOutput out = net.forward_batch(batch, true, &dropout_rng, cache);
      Tensor dlogits;
      train_loss += nn::softmax_xent(out.logits, static_cast<int64_t>(entries.size()), 2, labels,
                                     &dlogits);
      net.backward_batch(cache, dlogits, nullptr);
      opt.step(params, lr);
    }
    train_loss /= static_cast<double>(batches.size());

    double dev_loss = expert_dev_loss(net, mels, dev);
    EarlyStopper::Update u = stopper.update(dev_loss);
    if (u.improved) best = net;
    result.log.push_back({epoch, train_loss, dev_loss, lr, u.stop});
    if (u.stop) break;
  }

  result.net = std::move(best);
  result.best_dev_loss = stopper.best;
  return result;
}

}  // namespace

ExpertTrainResult train_expert(const corpus::DatasetManifest& manifest, const TrainConfig& cfg,
                               const frontend::MelConfig& mel_cfg, const std::string& data_root) {
  return train_expert_impl(manifest, cfg, mel_cfg, data_root);
}

ExpertTrainResult train_joint_baseline(const std::vector<corpus::DatasetManifest>& manifests,
                                       const TrainConfig& cfg, const frontend::MelConfig& mel_cfg,
                                       const std::string& data_root) {
  if (manifests.empty()) throw std::invalid_argument("train_joint_baseline: no manifests");
  corpus::DatasetManifest pooled;
  pooled.name = "joint";
  for (const auto& m : manifests)
    pooled.entries.insert(pooled.entries.end(), m.entries.begin(), m.entries.end());
  std::sort(pooled.entries.begin(), pooled.entries.end(),
            [](const corpus::ManifestEntry& a, const corpus::ManifestEntry& b) {
              return a.path < b.path;
            });
  return train_expert_impl(pooled, cfg, mel_cfg, data_root);
}

std::vector<corpus::ManifestEntry> pool_equalized_train(
    const std::vector<corpus::DatasetManifest>& manifests, uint64_t seed) {
  std::map<std::pair<std::string, int>, std::vector<corpus::ManifestEntry>> cells;
  for (const auto& m : manifests)
    for (const auto& e : m.entries)
      if (e.split == corpus::Split::Train) cells[{e.domain, e.label}].push_back(e);

  size_t max_count = 0;
  for (const auto& [key, v] : cells) max_count = std::max(max_count, v.size());

  std::vector<corpus::ManifestEntry> pooled;
  uint64_t cell_idx = 0;
  for (const auto& [key, v] : cells) {
    pooled.insert(pooled.end(), v.begin(), v.end());
    Rng rng(derive_seed(seed, "pool-equalize", cell_idx++));
    for (size_t i = v.size(); i < max_count; ++i)
      pooled.push_back(v[static_cast<size_t>(rng.uniform_int(v.size()))]);
  }
  return pooled;
}

MoeTrainResult train_moe(std::vector<lcnn::ExpertNet> experts, fusion::GateVariant variant,
                         const std::vector<corpus::DatasetManifest>& manifests,
                         const TrainConfig& cfg, const frontend::MelConfig& mel_cfg,
                         const std::string& data_root, const MoeTrainOptions& opts) {
  cfg.validate();
  if (experts.size() < 2) throw std::invalid_argument("train_moe: need at least 2 experts");
  if (manifests.empty()) throw std::invalid_argument("train_moe: no manifests");

  corpus::DatasetManifest pooled;
  pooled.name = "moe-pool";
  pooled.entries = pool_equalized_train(manifests, derive_seed(cfg.seed, "pool"));
  std::vector<corpus::ManifestEntry> dev;
  for (const auto& m : manifests)
    for (const auto& e : m.entries)
      if (e.split == corpus::Split::Dev) dev.push_back(e);
  if (dev.empty()) throw std::runtime_error("train_moe: empty dev split");
  require_both_classes(pooled.entries, "train");
  require_both_classes(dev, "dev");

  MelCache mels(mel_cfg, data_root);
  corpus::BalancedBatcher batcher(pooled, corpus::Split::Train, static_cast<int>(cfg.batch_size),
                                  derive_seed(cfg.seed, "batches"));

  fusion::MoEModel model;
  model.variant = variant;
  model.experts = std::move(experts);
  model.init_gate(cfg.seed);

  std::vector<nn::Param*> params = model.trainable_params();
  nn::AdamW opt;
  opt.beta1 = cfg.beta1;
  opt.beta2 = cfg.beta2;
  opt.weight_decay = cfg.weight_decay;
  opt.init(params);
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));

  auto dev_loss_fn = [&](fusion::MoEModel& m) {
    double total = 0.0;
    int64_t count = 0;
    std::vector<int> labels;
    for (size_t start = 0; start < dev.size(); start += 64) {
      size_t end = std::min(dev.size(), start + 64);
      std::vector<corpus::ManifestEntry> chunk(dev.begin() + static_cast<std::ptrdiff_t>(start),
                                               dev.begin() + static_cast<std::ptrdiff_t>(end));
      Tensor batch = assemble_batch(mels, chunk, labels);
      fusion::MoEBatchCaches caches;
      fusion::MoEBatchOutput out =
          fusion::moe_forward_batch(m, batch, false, nullptr, caches, opts.freeze_gate_uniform);
      int64_t n = static_cast<int64_t>(chunk.size());
      total += nn::softmax_xent(out.fused, n, 2, labels, nullptr) * static_cast<double>(n);
      count += n;
    }
    return total / static_cast<double>(count);
  };

  EarlyStopper stopper(cfg.patience);
  MoeTrainResult result;
  fusion::MoEModel best = model;
  std::vector<int> labels;

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cosine_lr(epoch, cfg.epochs, cfg.lr0);
    double train_loss = 0.0;
    auto batches = batcher.epoch_batches(epoch);
    for (const auto& entries : batches) {
      Tensor batch = assemble_batch(mels, entries, labels);
      nn::zero_grads(params);
      fusion::MoEBatchCaches caches;
      fusion::MoEBatchOutput out = fusion::moe_forward_batch(model, batch, true, &dropout_rng,
                                                             caches, opts.freeze_gate_uniform);
      Tensor dfused;
      train_loss += nn::softmax_xent(out.fused, static_cast<int64_t>(entries.size()), 2, labels,
                                     &dfused);
      fusion::moe_backward_batch(model, caches, dfused, opts.freeze_gate_uniform);
      opt.step(params, lr);
    }
    train_loss /= static_cast<double>(batches.size());

    double dev_loss = dev_loss_fn(model);
    EarlyStopper::Update u = stopper.update(dev_loss);
    if (u.improved) best = model;
    result.log.push_back({epoch, train_loss, dev_loss, lr, u.stop});
    if (u.stop) break;
  }

  result.model = std::move(best);
  result.best_dev_loss = stopper.best;
  return result;
}

}  // namespace moe::train
