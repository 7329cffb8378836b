#include "moe/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "moe/util.hpp"

namespace moe::fusion {

const char* variant_name(GateVariant v) {
  return v == GateVariant::Standard ? "standard" : "enhanced";
}

GateVariant parse_variant(const std::string& s) {
  if (s == "standard") return GateVariant::Standard;
  if (s == "enhanced") return GateVariant::Enhanced;
  throw std::invalid_argument("unknown MoE variant: '" + s + "'");
}

std::vector<double> combined_embedding(const std::vector<std::vector<double>>& e_list,
                                       const std::vector<double>& p) {
  if (e_list.empty()) throw std::invalid_argument("combined_embedding: empty embedding list");
  size_t d = p.size();
  for (const auto& e : e_list)
    if (e.size() != d)
      throw std::invalid_argument("combined_embedding: embedding/p length mismatch");

  std::vector<double> w(d);
  std::vector<double> factors(e_list.size());
  for (size_t j = 0; j < d; ++j) {
    for (size_t k = 0; k < e_list.size(); ++k) factors[k] = e_list[k][j];
    std::sort(factors.begin(), factors.end());
    double prod = 1.0;
    for (double f : factors) prod *= f;
    w[j] = prod * p[j];
  }
  return w;
}

std::vector<double> gate_input(const std::vector<std::vector<double>>& e_list,
                               const std::vector<double>& w) {
  size_t d = w.size();
  for (const auto& e : e_list)
    if (e.size() != d) throw std::invalid_argument("gate_input: embedding length mismatch");
  std::vector<double> out;
  out.reserve((e_list.size() + 1) * d);
  for (const auto& e : e_list) out.insert(out.end(), e.begin(), e.end());
  out.insert(out.end(), w.begin(), w.end());
  return out;
}

std::array<double, 2> fuse(const std::vector<double>& alpha,
                           const std::vector<std::array<double, 2>>& z_list) {
  if (alpha.size() != z_list.size())
    throw std::invalid_argument("fuse: alpha/z_list length mismatch");
  if (alpha.empty()) throw std::invalid_argument("fuse: empty inputs");
  std::array<double, 2> z{0.0, 0.0};
  for (size_t i = 0; i < alpha.size(); ++i) {
    z[0] += alpha[i] * z_list[i][0];
    z[1] += alpha[i] * z_list[i][1];
  }
  return z;
}

double predict(const std::array<double, 2>& z) {
  double m = std::max(z[0], z[1]);
  double e0 = std::exp(z[0] - m);
  double e1 = std::exp(z[1] - m);
  return e1 / (e0 + e1);
}

double mean_fake_probability(const std::vector<std::array<double, 2>>& z_list) {
  if (z_list.empty()) throw std::invalid_argument("mean_fake_probability: empty logits list");
  double acc = 0.0;
  for (const auto& z : z_list) acc += predict(z);
  return acc / static_cast<double>(z_list.size());
}

// ---------------------------------------------------------------------------

void GateNet::init_standard(int64_t n_experts, uint64_t seed) {
  variant_ = GateVariant::Standard;
  n_experts_ = n_experts;
  Rng rng(seed);
  conv_w_[0].setup("conv1.w", {kTrunkChannels[0], 1 * 9});
  conv_b_[0].setup("conv1.b", {kTrunkChannels[0]});
  conv_w_[1].setup("conv2.w", {kTrunkChannels[1], kTrunkPost[0] * 9});
  conv_b_[1].setup("conv2.b", {kTrunkChannels[1]});
  nn::init_he_normal(conv_w_[0].value, 9, rng);
  nn::init_he_normal(conv_w_[1].value, kTrunkPost[0] * 9, rng);
  bn_tr_.init(kTrunkPost[0], "bn_tr");
  head_.init(kTrunkPost[1], n_experts, "head", rng);
  bn_out_.init(n_experts, "bn_out");
}

void GateNet::init_enhanced(int64_t n_experts, int64_t d, uint64_t seed) {
  variant_ = GateVariant::Enhanced;
  n_experts_ = n_experts;
  Rng rng(seed);
  head_.init((n_experts + 1) * d, n_experts, "head", rng);
  bn_out_.init(n_experts, "bn_out");
}

std::vector<nn::Param*> GateNet::params() {
  std::vector<nn::Param*> ps;
  if (variant_ == GateVariant::Standard) {
    for (int b = 0; b < 2; ++b) {
      ps.push_back(&conv_w_[b]);
      ps.push_back(&conv_b_[b]);
    }
    ps.push_back(&bn_tr_.gamma);
    ps.push_back(&bn_tr_.beta);
  }
  ps.push_back(&head_.w);
  ps.push_back(&head_.b);
  ps.push_back(&bn_out_.gamma);
  ps.push_back(&bn_out_.beta);
  return ps;
}

Tensor GateNet::forward_batch(const Tensor& input, bool training, Rng* dropout_rng, Cache& cache) {
  if (training && dropout_rng == nullptr)
    throw std::invalid_argument("GateNet: training mode requires an RNG for dropout");
  int64_t n = input.dim(0);
  cache.n = n;
  cache.training = training;

  if (variant_ == GateVariant::Standard) {
    if (input.rank() != 4 || input.dim(1) != 1 || input.dim(2) != 80 || input.dim(3) != 188)
      throw std::invalid_argument("GateNet(standard): input must be (N, 1, 80, 188)");
    cache.mels = input;

    static constexpr int64_t h[3] = {80, 40, 20};
    static constexpr int64_t w[3] = {188, 94, 47};
    static constexpr int64_t cin[2] = {1, kTrunkPost[0]};

    std::vector<double> conv_buf, mfm_buf, cols_buf;
    const Tensor* cur = &cache.mels;
    Tensor pool_out;
    for (int b = 0; b < 2; ++b) {
      int64_t cpre = kTrunkChannels[b], cpost = kTrunkPost[b];
      conv_buf.resize(static_cast<size_t>(cpre * h[b] * w[b]));
      mfm_buf.resize(static_cast<size_t>(cpost * h[b] * w[b]));
      cache.mfm_mask[b].assign(static_cast<size_t>(n * cpost * h[b] * w[b]), 0);
      cache.pool_idx[b].assign(static_cast<size_t>(n * cpost * h[b + 1] * w[b + 1]), 0);
      pool_out = Tensor({n, cpost, h[b + 1], w[b + 1]});
      for (int64_t i = 0; i < n; ++i) {
        const double* in = cur->data() + i * cin[b] * h[b] * w[b];
        nn::conv3x3_forward_one(in, cin[b], h[b], w[b], conv_w_[b].value.data(),
                                conv_b_[b].value.data(), cpre, conv_buf.data(), cols_buf);
        nn::mfm_forward(conv_buf.data(), cpost, h[b] * w[b], mfm_buf.data(),
                        cache.mfm_mask[b].data() + i * cpost * h[b] * w[b]);
        nn::maxpool2x2_forward(mfm_buf.data(), cpost, h[b], w[b],
                               pool_out.data() + i * cpost * h[b + 1] * w[b + 1],
                               cache.pool_idx[b].data() + i * cpost * h[b + 1] * w[b + 1]);
      }
      if (b == 0) {
        bn_tr_.forward(pool_out, n, h[1] * w[1], training, cache.bn_tr_out, cache.bn_tr_cache);
        cur = &cache.bn_tr_out;
      }
    }

    int64_t s = h[2] * w[2];
    cache.head_in = Tensor({n, kTrunkPost[1]});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t c = 0; c < kTrunkPost[1]; ++c) {
        const double* src = pool_out.data() + (i * kTrunkPost[1] + c) * s;
        double acc = 0.0;
        for (int64_t j = 0; j < s; ++j) acc += src[j];
        cache.head_in.data()[i * kTrunkPost[1] + c] = acc / static_cast<double>(s);
      }
  } else {
    if (input.rank() != 2 || input.dim(1) != head_.in)
      throw std::invalid_argument("GateNet(enhanced): input must be (N, " +
                                  std::to_string(head_.in) + ")");
    cache.head_in = input;
  }

  Tensor y;
  head_.forward(cache.head_in, n, y);
  if (training) nn::dropout_forward(y, dropout_p_, *dropout_rng, cache.dropout_mask);

  Tensor b;
  bn_out_.forward(y, n, 1, training, b, cache.bn_out_cache);
  Tensor g({n, n_experts_}, b.vec());
  nn::leaky_relu_forward(g, lrelu_slope_, cache.lrelu_mask);
  cache.glogits = g;

  cache.alpha = Tensor({n, n_experts_});
  std::vector<double> row(static_cast<size_t>(n_experts_));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t k = 0; k < n_experts_; ++k) row[static_cast<size_t>(k)] = g.data()[i * n_experts_ + k];
    std::vector<double> a = nn::softmax(row);
    for (int64_t k = 0; k < n_experts_; ++k) cache.alpha.data()[i * n_experts_ + k] = a[static_cast<size_t>(k)];
  }
  return cache.alpha;
}

Tensor GateNet::backward_batch(const Cache& cache, const Tensor& dglogits) {
  int64_t n = cache.n;

  Tensor db = dglogits;
  nn::leaky_relu_backward(db, lrelu_slope_, cache.lrelu_mask);

  Tensor db3({n, n_experts_, 1}, db.vec());
  Tensor dy;
  bn_out_.backward(cache.bn_out_cache, db3, dy);
  Tensor dy2({n, n_experts_}, dy.vec());
  if (cache.training) nn::dropout_backward(dy2, dropout_p_, cache.dropout_mask);

  Tensor dhead_in;
  head_.backward(cache.head_in, dy2, n, &dhead_in);
  if (variant_ == GateVariant::Enhanced) return dhead_in;

  // Standard trunk backward.
  static constexpr int64_t h[3] = {80, 40, 20};
  static constexpr int64_t w[3] = {188, 94, 47};
  static constexpr int64_t cin[2] = {1, kTrunkPost[0]};

  int64_t s = h[2] * w[2];
  Tensor dstage({n, kTrunkPost[1], h[2], w[2]});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < kTrunkPost[1]; ++c) {
      double g = dhead_in.data()[i * kTrunkPost[1] + c] / static_cast<double>(s);
      double* dst = dstage.data() + (i * kTrunkPost[1] + c) * s;
      for (int64_t j = 0; j < s; ++j) dst[j] = g;
    }

  std::vector<double> dmfm_buf, dconv_buf, cols_buf, dcols_buf;
  for (int b = 1; b >= 0; --b) {
    int64_t cpre = kTrunkChannels[b], cpost = kTrunkPost[b];
    const Tensor* conv_in = (b == 0) ? &cache.mels : &cache.bn_tr_out;
    Tensor dnext = (b == 0) ? Tensor() : Tensor({n, cin[b], h[b], w[b]});
    dmfm_buf.resize(static_cast<size_t>(cpost * h[b] * w[b]));
    dconv_buf.resize(static_cast<size_t>(cpre * h[b] * w[b]));
    for (int64_t i = 0; i < n; ++i) {
      nn::maxpool2x2_backward(dstage.data() + i * cpost * h[b + 1] * w[b + 1], cpost, h[b], w[b],
                               cache.pool_idx[b].data() + i * cpost * h[b + 1] * w[b + 1],
                               dmfm_buf.data());
      nn::mfm_backward(dmfm_buf.data(), cpost, h[b] * w[b],
                       cache.mfm_mask[b].data() + i * cpost * h[b] * w[b], dconv_buf.data());
      nn::conv3x3_backward_one(conv_in->data() + i * cin[b] * h[b] * w[b], cin[b], h[b], w[b],
                               conv_w_[b].value.data(), dconv_buf.data(), cpre,
                               conv_w_[b].grad.data(), conv_b_[b].grad.data(),
                               b == 0 ? nullptr : dnext.data() + i * cin[b] * h[b] * w[b],
                               cols_buf, dcols_buf);
    }
    if (b == 1) bn_tr_.backward(cache.bn_tr_cache, dnext, dstage);
  }
  return Tensor();
}

std::vector<double> GateNet::forward_eval_mel(const Tensor& mel) {
  if (variant_ != GateVariant::Standard)
    throw std::invalid_argument("gate_forward: mel input requires the standard variant");
  Tensor batch({1, 1, 80, 188}, mel.vec());
  Cache cache;
  Tensor alpha = forward_batch(batch, false, nullptr, cache);
  return {alpha.data(), alpha.data() + n_experts_};
}

std::vector<double> GateNet::forward_eval_vec(const std::vector<double>& e_input) {
  if (variant_ != GateVariant::Enhanced)
    throw std::invalid_argument("gate_forward: embedding input requires the enhanced variant");
  Tensor batch({1, static_cast<int64_t>(e_input.size())}, e_input);
  Cache cache;
  Tensor alpha = forward_batch(batch, false, nullptr, cache);
  return {alpha.data(), alpha.data() + n_experts_};
}

void GateNet::pack(ckpt::Container& c, const std::string& prefix) const {
  auto ps = const_cast<GateNet*>(this)->params();
  for (const nn::Param* p : ps) c.add(prefix + p->name, p->value);
  if (variant_ == GateVariant::Standard) {
    c.add(prefix + "bn_tr.run_mean", bn_tr_.run_mean);
    c.add(prefix + "bn_tr.run_var", bn_tr_.run_var);
  }
  c.add(prefix + "bn_out.run_mean", bn_out_.run_mean);
  c.add(prefix + "bn_out.run_var", bn_out_.run_var);
}

void GateNet::unpack(const ckpt::Container& c, const std::string& prefix) {
  for (nn::Param* p : params()) {
    const Tensor& t = c.get(prefix + p->name);
    if (t.shape() != p->value.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + prefix + p->name);
    p->value = t;
  }
  if (variant_ == GateVariant::Standard) {
    bn_tr_.run_mean = c.get(prefix + "bn_tr.run_mean");
    bn_tr_.run_var = c.get(prefix + "bn_tr.run_var");
  }
  bn_out_.run_mean = c.get(prefix + "bn_out.run_mean");
  bn_out_.run_var = c.get(prefix + "bn_out.run_var");
}

// ---------------------------------------------------------------------------

void MoEModel::init_gate(uint64_t seed) {
  n_experts = static_cast<int64_t>(experts.size());
  if (n_experts < 2) throw std::invalid_argument("MoEModel: need at least 2 experts");
  if (variant == GateVariant::Standard)
    gate.init_standard(n_experts, derive_seed(seed, "gate"));
  else
    gate.init_enhanced(n_experts, lcnn::ExpertNet::kEmbedDim, derive_seed(seed, "gate"));
  p.setup("p", {lcnn::ExpertNet::kEmbedDim});
  p.value.fill(1.0);
}

std::vector<nn::Param*> MoEModel::trainable_params() {
  std::vector<nn::Param*> ps;
  for (auto& e : experts)
    for (nn::Param* p_ : e.params()) ps.push_back(p_);
  for (nn::Param* p_ : gate.params()) ps.push_back(p_);
  if (variant == GateVariant::Enhanced) ps.push_back(&p);
  return ps;
}

std::vector<std::string> MoEModel::domains() const {
  std::vector<std::string> out;
  for (const auto& e : experts) out.push_back(e.domain());
  return out;
}

MoEOutput moe_forward_mel(MoEModel& model, const Tensor& mel) {
  MoEOutput out;
  out.expert_logits.resize(static_cast<size_t>(model.n_experts));
  out.embeddings.resize(static_cast<size_t>(model.n_experts));
  for (int64_t k = 0; k < model.n_experts; ++k) {
    lcnn::ExpertOutput eo = model.experts[static_cast<size_t>(k)].forward_eval(mel);
    out.expert_logits[static_cast<size_t>(k)] = eo.logits;
    out.embeddings[static_cast<size_t>(k)] = std::move(eo.embedding);
  }
  if (model.variant == GateVariant::Enhanced) {
    std::vector<double> pv(model.p.value.data(), model.p.value.data() + model.p.value.numel());
    std::vector<double> w = combined_embedding(out.embeddings, pv);
    out.alpha = model.gate.forward_eval_vec(gate_input(out.embeddings, w));
  } else {
    out.alpha = model.gate.forward_eval_mel(mel);
  }
  out.z = fuse(out.alpha, out.expert_logits);
  out.yhat = predict(out.z);
  return out;
}

MoEOutput moe_forward(MoEModel& model, const frontend::Waveform& w,
                      const frontend::MelConfig& cfg) {
  frontend::MelSpectrogram ms = frontend::melspec(frontend::fix_length(w), cfg);
  return moe_forward_mel(model, ms.values);
}

std::vector<double> gate_forward(MoEModel& model, const Tensor& mel) {
  return model.gate.forward_eval_mel(mel);
}

std::vector<double> gate_forward(MoEModel& model, const std::vector<std::vector<double>>& e_list) {
  if (static_cast<int64_t>(e_list.size()) != model.n_experts)
    throw std::invalid_argument("gate_forward: expected one embedding per expert");
  std::vector<double> pv(model.p.value.data(), model.p.value.data() + model.p.value.numel());
  std::vector<double> w = combined_embedding(e_list, pv);
  return model.gate.forward_eval_vec(gate_input(e_list, w));
}

double ensemble_average_mel(std::vector<lcnn::ExpertNet>& experts, const Tensor& mel) {
  if (experts.empty()) throw std::invalid_argument("ensemble_average: no experts");
  std::vector<std::array<double, 2>> z_list;
  z_list.reserve(experts.size());
  for (auto& e : experts) z_list.push_back(e.forward_eval(mel).logits);
  return mean_fake_probability(z_list);
}

double ensemble_average(std::vector<lcnn::ExpertNet>& experts, const frontend::Waveform& w,
                        const frontend::MelConfig& cfg) {
  frontend::MelSpectrogram ms = frontend::melspec(frontend::fix_length(w), cfg);
  return ensemble_average_mel(experts, ms.values);
}

// ---------------------------------------------------------------------------

MoEBatchOutput moe_forward_batch(MoEModel& model, const Tensor& mels, bool training,
                                 Rng* dropout_rng, MoEBatchCaches& caches,
                                 bool freeze_gate_uniform) {
  int64_t n = mels.dim(0);
  int64_t nx = model.n_experts;
  int64_t d = lcnn::ExpertNet::kEmbedDim;

  caches.expert.assign(static_cast<size_t>(nx), lcnn::ExpertCache{});
  caches.eouts.clear();
  caches.eouts.reserve(static_cast<size_t>(nx));
  for (int64_t k = 0; k < nx; ++k)
    caches.eouts.push_back(model.experts[static_cast<size_t>(k)].forward_batch(
        mels, training, dropout_rng, caches.expert[static_cast<size_t>(k)]));

  MoEBatchOutput out;
  if (freeze_gate_uniform) {
    out.alpha = Tensor::full({n, nx}, 1.0 / static_cast<double>(nx));
  } else if (model.variant == GateVariant::Enhanced) {
    caches.gate_in = Tensor({n, (nx + 1) * d});
    std::vector<std::vector<double>> e_rows(static_cast<size_t>(nx));
    std::vector<double> pv(model.p.value.data(), model.p.value.data() + d);
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t k = 0; k < nx; ++k) {
        const double* src = caches.eouts[static_cast<size_t>(k)].e_eval.data() + i * d;
        e_rows[static_cast<size_t>(k)].assign(src, src + d);
      }
      std::vector<double> w = combined_embedding(e_rows, pv);
      std::vector<double> gi = gate_input(e_rows, w);
      std::memcpy(caches.gate_in.data() + i * (nx + 1) * d, gi.data(),
                  sizeof(double) * gi.size());
    }
    out.alpha = model.gate.forward_batch(caches.gate_in, training, dropout_rng, caches.gate);
  } else {
    out.alpha = model.gate.forward_batch(mels, training, dropout_rng, caches.gate);
  }
  caches.alpha = out.alpha;

  out.fused = Tensor({n, 2});
  for (int64_t i = 0; i < n; ++i) {
    double z0 = 0.0, z1 = 0.0;
    for (int64_t k = 0; k < nx; ++k) {
      double a = out.alpha.data()[i * nx + k];
      z0 += a * caches.eouts[static_cast<size_t>(k)].logits.data()[i * 2 + 0];
      z1 += a * caches.eouts[static_cast<size_t>(k)].logits.data()[i * 2 + 1];
    }
    out.fused.data()[i * 2 + 0] = z0;
    out.fused.data()[i * 2 + 1] = z1;
  }
  return out;
}

void moe_backward_batch(MoEModel& model, const MoEBatchCaches& caches, const Tensor& dfused,
                        bool freeze_gate_uniform) {
  int64_t n = dfused.dim(0);
  int64_t nx = model.n_experts;
  int64_t d = lcnn::ExpertNet::kEmbedDim;

  std::vector<Tensor> dz(static_cast<size_t>(nx), Tensor({n, 2}));
  Tensor dalpha({n, nx});
  for (int64_t i = 0; i < n; ++i) {
    double d0 = dfused.data()[i * 2 + 0];
    double d1 = dfused.data()[i * 2 + 1];
    for (int64_t k = 0; k < nx; ++k) {
      const double* zk = caches.eouts[static_cast<size_t>(k)].logits.data() + i * 2;
      dalpha.data()[i * nx + k] = d0 * zk[0] + d1 * zk[1];
      double a = caches.alpha.data()[i * nx + k];
      dz[static_cast<size_t>(k)].data()[i * 2 + 0] = a * d0;
      dz[static_cast<size_t>(k)].data()[i * 2 + 1] = a * d1;
    }
  }

  std::vector<Tensor> de_eval;
  bool gate_path = !freeze_gate_uniform;
  if (gate_path) {
    // Softmax Jacobian: dg_k = alpha_k * (dalpha_k - sum_j dalpha_j alpha_j).
    Tensor dglogits({n, nx});
    for (int64_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int64_t k = 0; k < nx; ++k)
        dot += dalpha.data()[i * nx + k] * caches.alpha.data()[i * nx + k];
      for (int64_t k = 0; k < nx; ++k) {
        double a = caches.alpha.data()[i * nx + k];
        dglogits.data()[i * nx + k] = a * (dalpha.data()[i * nx + k] - dot);
      }
    }

    Tensor dhead_in = model.gate.backward_batch(caches.gate, dglogits);

    if (model.variant == GateVariant::Enhanced) {
      de_eval.assign(static_cast<size_t>(nx), Tensor({n, d}));
      const double* pv = model.p.value.data();
      std::vector<double> prefix(static_cast<size_t>(nx) + 1);
      std::vector<double> suffix(static_cast<size_t>(nx) + 1);
      for (int64_t i = 0; i < n; ++i) {
        const double* drow = dhead_in.data() + i * (nx + 1) * d;
        const double* dw = drow + nx * d;
        for (int64_t j = 0; j < d; ++j) {
          prefix[0] = 1.0;
          for (int64_t k = 0; k < nx; ++k)
            prefix[static_cast<size_t>(k) + 1] =
                prefix[static_cast<size_t>(k)] *
                caches.eouts[static_cast<size_t>(k)].e_eval.data()[i * d + j];
          suffix[static_cast<size_t>(nx)] = 1.0;
          for (int64_t k = nx - 1; k >= 0; --k)
            suffix[static_cast<size_t>(k)] =
                suffix[static_cast<size_t>(k) + 1] *
                caches.eouts[static_cast<size_t>(k)].e_eval.data()[i * d + j];
          model.p.grad[j] += dw[j] * prefix[static_cast<size_t>(nx)];
          for (int64_t k = 0; k < nx; ++k) {
            double loo = prefix[static_cast<size_t>(k)] * suffix[static_cast<size_t>(k) + 1];
            de_eval[static_cast<size_t>(k)].data()[i * d + j] =
                drow[k * d + j] + dw[j] * pv[j] * loo;
          }
        }
      }
    }
  }

  for (int64_t k = 0; k < nx; ++k) {
    const Tensor* de = (gate_path && model.variant == GateVariant::Enhanced)
                           ? &de_eval[static_cast<size_t>(k)]
                           : nullptr;
    model.experts[static_cast<size_t>(k)].backward_batch(caches.expert[static_cast<size_t>(k)],
                                                         dz[static_cast<size_t>(k)], de);
  }
}

// ---------------------------------------------------------------------------

void save_moe(const MoEModel& model, const std::string& path, const std::string& sidecar_json) {
  ckpt::Container c;
  c.meta["kind"] = "moe";
  c.meta["arch"] = lcnn::ExpertNet::kArchTag;
  c.meta["gate_arch"] = GateNet::kArchTag;
  c.meta["variant"] = variant_name(model.variant);
  c.meta["n_experts"] = model.n_experts;
  c.meta["embed_dim"] = lcnn::ExpertNet::kEmbedDim;
  c.meta["domains"] = model.domains();
  for (int64_t k = 0; k < model.n_experts; ++k)
    model.experts[static_cast<size_t>(k)].pack(c, "expert" + std::to_string(k) + "/");
  model.gate.pack(c, "gate/");
  c.add("p", model.p.value);
  c.save(path);
  write_text_file(path + ".json", sidecar_json);
}

MoEModel load_moe(const std::string& path) {
  ckpt::Container c = ckpt::Container::load(path);
  if (c.meta.value("kind", "") != "moe")
    throw std::runtime_error("load_moe: not a MoE checkpoint: " + path);
  if (c.meta.value("arch", "") != lcnn::ExpertNet::kArchTag)
    throw std::runtime_error("load_moe: expert architecture tag mismatch in " + path);
  if (c.meta.value("gate_arch", "") != GateNet::kArchTag)
    throw std::runtime_error("load_moe: gate architecture tag mismatch in " + path);

  MoEModel m;
  m.variant = parse_variant(c.meta.value("variant", ""));
  m.n_experts = c.meta.value("n_experts", 0);
  if (m.n_experts < 2) throw std::runtime_error("load_moe: bad expert count in " + path);
  std::vector<std::string> domains = c.meta.value("domains", std::vector<std::string>{});
  m.experts.assign(static_cast<size_t>(m.n_experts), lcnn::ExpertNet());
  for (int64_t k = 0; k < m.n_experts; ++k) {
    m.experts[static_cast<size_t>(k)].unpack(c, "expert" + std::to_string(k) + "/");
    if (static_cast<size_t>(k) < domains.size())
      m.experts[static_cast<size_t>(k)].set_domain(domains[static_cast<size_t>(k)]);
  }
  m.init_gate(0);
  m.gate.unpack(c, "gate/");
  const Tensor& pv = c.get("p");
  if (pv.shape() != m.p.value.shape()) throw std::runtime_error("load_moe: bad p shape in " + path);
  m.p.value = pv;
  return m;
}

}  // namespace moe::fusion
