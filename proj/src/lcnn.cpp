#include "moe/lcnn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "moe/util.hpp"

namespace moe::lcnn {

Tensor mfm(const Tensor& a) {
  if (a.rank() < 1) throw std::invalid_argument("mfm: rank must be >= 1");
  int64_t c2 = a.dim(0);
  if (c2 % 2 != 0) throw std::invalid_argument("mfm: channel axis must have even size");
  int64_t s = a.numel() / c2;
  std::vector<int64_t> out_shape = a.shape();
  out_shape[0] = c2 / 2;
  Tensor out(out_shape);
  std::vector<uint8_t> mask(static_cast<size_t>(out.numel()));
  nn::mfm_forward(a.data(), c2 / 2, s, out.data(), mask.data());
  return out;
}

ExpertNet::ExpertNet() {
  for (int b = 0; b < 4; ++b) {
    std::string tag = "conv" + std::to_string(b + 1);
    conv_w_[b].setup(tag + ".w", {kConvOut[b], kConvIn[b] * 9});
    conv_b_[b].setup(tag + ".b", {kConvOut[b]});
  }
  bn_[0].init(kMfmOut[0], "bn1");
  bn_[1].init(kMfmOut[1], "bn2");
  bn_[2].init(kMfmOut[2], "bn3");
  Rng dummy(0);
  fc1_.init(64, 128, "fc1", dummy);
  fc2_.init(64, 64, "fc2", dummy);
  fc3_.init(64, 2, "fc3", dummy);
  bn_emb_.init(kEmbedDim, "bn_emb");
}

void ExpertNet::init(uint64_t seed) {
  Rng rng(seed);
  for (int b = 0; b < 4; ++b) {
    nn::init_he_normal(conv_w_[b].value, kConvIn[b] * 9, rng);
    conv_b_[b].value.fill(0.0);
  }
  nn::init_he_normal(fc1_.w.value, fc1_.in, rng);
  fc1_.b.value.fill(0.0);
  nn::init_he_normal(fc2_.w.value, fc2_.in, rng);
  fc2_.b.value.fill(0.0);
  nn::init_he_normal(fc3_.w.value, fc3_.in, rng);
  fc3_.b.value.fill(0.0);
  for (auto& bn : bn_) {
    bn.gamma.value.fill(1.0);
    bn.beta.value.fill(0.0);
    bn.run_mean.fill(0.0);
    bn.run_var.fill(1.0);
  }
  bn_emb_.gamma.value.fill(1.0);
  bn_emb_.beta.value.fill(0.0);
  bn_emb_.run_mean.fill(0.0);
  bn_emb_.run_var.fill(1.0);
}

std::vector<nn::Param*> ExpertNet::params() {
  std::vector<nn::Param*> ps;
  for (int b = 0; b < 4; ++b) {
    ps.push_back(&conv_w_[b]);
    ps.push_back(&conv_b_[b]);
  }
  for (auto& bn : bn_) {
    ps.push_back(&bn.gamma);
    ps.push_back(&bn.beta);
  }
  ps.push_back(&fc1_.w);
  ps.push_back(&fc1_.b);
  ps.push_back(&fc2_.w);
  ps.push_back(&fc2_.b);
  ps.push_back(&bn_emb_.gamma);
  ps.push_back(&bn_emb_.beta);
  ps.push_back(&fc3_.w);
  ps.push_back(&fc3_.b);
  return ps;
}

std::vector<const nn::Param*> ExpertNet::params() const {
  auto ps = const_cast<ExpertNet*>(this)->params();
  return {ps.begin(), ps.end()};
}

ExpertBatchOutput ExpertNet::forward_batch(const Tensor& mels, bool training, Rng* dropout_rng,
                                           ExpertCache& cache) {
  if (mels.rank() != 4 || mels.dim(1) != 1 || mels.dim(2) != kMelBins || mels.dim(3) != kFrames)
    throw std::invalid_argument("ExpertNet: input must be (N, 1, 80, 188)");
  if (training && dropout_rng == nullptr)
    throw std::invalid_argument("ExpertNet: training mode requires an RNG for dropout");

  int64_t n = mels.dim(0);
  cache.n = n;
  cache.training = training;
  cache.mels = mels;

  std::vector<double> conv_buf, mfm_buf, cols_buf;

  const Tensor* cur = &cache.mels;
  Tensor pool_out;
  for (int b = 0; b < 4; ++b) {
    int64_t hi = kH[b], wi = kW[b];
    int64_t ho = kH[b + 1], wo = kW[b + 1];
    int64_t cin = kConvIn[b], cpre = kConvOut[b], cpost = kMfmOut[b];
    conv_buf.resize(static_cast<size_t>(cpre * hi * wi));
    mfm_buf.resize(static_cast<size_t>(cpost * hi * wi));
    cache.mfm_mask[b].assign(static_cast<size_t>(n * cpost * hi * wi), 0);
    cache.pool_idx[b].assign(static_cast<size_t>(n * cpost * ho * wo), 0);
    pool_out = Tensor({n, cpost, ho, wo});

    for (int64_t i = 0; i < n; ++i) {
      const double* in = cur->data() + i * cin * hi * wi;
      nn::conv3x3_forward_one(in, cin, hi, wi, conv_w_[b].value.data(), conv_b_[b].value.data(),
                              cpre, conv_buf.data(), cols_buf);
      nn::mfm_forward(conv_buf.data(), cpost, hi * wi, mfm_buf.data(),
                      cache.mfm_mask[b].data() + i * cpost * hi * wi);
      nn::maxpool2x2_forward(mfm_buf.data(), cpost, hi, wi,
                             pool_out.data() + i * cpost * ho * wo,
                             cache.pool_idx[b].data() + i * cpost * ho * wo);
    }

    if (b < 3) {
      bn_[b].forward(pool_out, n, ho * wo, training, cache.bn_out[b], cache.bn_cache[b]);
      cur = &cache.bn_out[b];
    }
  }

  // Global mean pool over the 5x11 map.
  int64_t s4 = kH[4] * kW[4];
  cache.pooled = Tensor({n, kEmbedDim});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t c = 0; c < kEmbedDim; ++c) {
      const double* src = pool_out.data() + (i * kEmbedDim + c) * s4;
      double acc = 0.0;
      for (int64_t j = 0; j < s4; ++j) acc += src[j];
      cache.pooled.data()[i * kEmbedDim + c] = acc / static_cast<double>(s4);
    }
  }

  Tensor t1;
  fc1_.forward(cache.pooled, n, t1);  // (N, 128)
  cache.a1 = Tensor({n, 64});
  cache.mfm1d_mask.assign(static_cast<size_t>(n * 64), 0);
  for (int64_t i = 0; i < n; ++i)
    nn::mfm_forward(t1.data() + i * 128, 64, 1, cache.a1.data() + i * 64,
                    cache.mfm1d_mask.data() + i * 64);

  Tensor h;
  fc2_.forward(cache.a1, n, h);  // (N, 64)

  ExpertBatchOutput out;
  if (training) {
    // Gate-path embedding reads the running stats as of the start of the
    // step; the classifier path then uses batch stats and updates them.
    bn_emb_.eval_output(h, n, 1, out.e_eval, cache.xhat_eval, cache.inv_std_run);
    Tensor e_train;
    bn_emb_.forward(h, n, 1, true, e_train, cache.bn_emb_cache);
    out.e_train = e_train;
  } else {
    Tensor e;
    bn_emb_.forward(h, n, 1, false, e, cache.bn_emb_cache);
    out.e_train = e;
    out.e_eval = e;
    cache.xhat_eval = cache.bn_emb_cache.xhat;
    cache.inv_std_run = cache.bn_emb_cache.inv_std;
  }
  out.e_train = Tensor({n, kEmbedDim}, out.e_train.vec());
  out.e_eval = Tensor({n, kEmbedDim}, out.e_eval.vec());

  cache.fc3_in = out.e_train;
  if (training) nn::dropout_forward(cache.fc3_in, dropout_p_, *dropout_rng, cache.dropout_mask);

  fc3_.forward(cache.fc3_in, n, out.logits);
  return out;
}

void ExpertNet::backward_batch(const ExpertCache& cache, const Tensor& dlogits,
                               const Tensor* de_eval) {
  int64_t n = cache.n;

  Tensor d_fc3in;
  fc3_.backward(cache.fc3_in, dlogits, n, &d_fc3in);
  if (cache.training) nn::dropout_backward(d_fc3in, dropout_p_, cache.dropout_mask);

  Tensor de_train({n, kEmbedDim, 1}, d_fc3in.vec());
  Tensor dh;
  bn_emb_.backward(cache.bn_emb_cache, de_train, dh);
  if (de_eval != nullptr) {
    Tensor de({n, kEmbedDim, 1}, de_eval->vec());
    bn_emb_.backward_eval_path(cache.xhat_eval, cache.inv_std_run, de, n, 1, dh);
  }

  Tensor dh2({n, 64}, dh.vec());
  Tensor da1;
  fc2_.backward(cache.a1, dh2, n, &da1);

  Tensor dt1({n, 128});
  for (int64_t i = 0; i < n; ++i)
    nn::mfm_backward(da1.data() + i * 64, 64, 1, cache.mfm1d_mask.data() + i * 64,
                     dt1.data() + i * 128);

  Tensor dpooled;
  fc1_.backward(cache.pooled, dt1, n, &dpooled);

  int64_t s4 = kH[4] * kW[4];
  Tensor dstage({n, kEmbedDim, kH[4], kW[4]});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < kEmbedDim; ++c) {
      double g = dpooled.data()[i * kEmbedDim + c] / static_cast<double>(s4);
      double* dst = dstage.data() + (i * kEmbedDim + c) * s4;
      for (int64_t j = 0; j < s4; ++j) dst[j] = g;
    }

  std::vector<double> dmfm_buf, dconv_buf, cols_buf, dcols_buf;
  for (int b = 3; b >= 0; --b) {
    int64_t hi = kH[b], wi = kW[b];
    int64_t ho = kH[b + 1], wo = kW[b + 1];
    int64_t cin = kConvIn[b], cpre = kConvOut[b], cpost = kMfmOut[b];

    const Tensor* conv_in = (b == 0) ? &cache.mels : &cache.bn_out[b - 1];
    Tensor dnext = (b == 0) ? Tensor() : Tensor({n, cin, hi, wi});
    dmfm_buf.resize(static_cast<size_t>(cpost * hi * wi));
    dconv_buf.resize(static_cast<size_t>(cpre * hi * wi));

    for (int64_t i = 0; i < n; ++i) {
      nn::maxpool2x2_backward(dstage.data() + i * cpost * ho * wo, cpost, hi, wi,
                              cache.pool_idx[b].data() + i * cpost * ho * wo, dmfm_buf.data());
      nn::mfm_backward(dmfm_buf.data(), cpost, hi * wi,
                       cache.mfm_mask[b].data() + i * cpost * hi * wi, dconv_buf.data());
      nn::conv3x3_backward_one(conv_in->data() + i * cin * hi * wi, cin, hi, wi,
                               conv_w_[b].value.data(), dconv_buf.data(), cpre,
                               conv_w_[b].grad.data(), conv_b_[b].grad.data(),
                               b == 0 ? nullptr : dnext.data() + i * cin * hi * wi, cols_buf,
                               dcols_buf);
    }
    if (b == 0) break;
    bn_[b - 1].backward(cache.bn_cache[b - 1], dnext, dstage);
  }
}

ExpertOutput ExpertNet::forward_eval(const Tensor& mel) const {
  if (mel.rank() != 2 || mel.dim(0) != kMelBins || mel.dim(1) != kFrames)
    throw std::invalid_argument("ExpertNet: eval input must be 80x188");
  Tensor batch({1, 1, kMelBins, kFrames}, mel.vec());
  ExpertCache cache;
  ExpertBatchOutput out = const_cast<ExpertNet*>(this)->forward_batch(batch, false, nullptr, cache);
  ExpertOutput o;
  o.logits = {out.logits[0], out.logits[1]};
  o.embedding.assign(out.e_train.data(), out.e_train.data() + kEmbedDim);
  return o;
}

std::array<double, 2> ExpertNet::logits_from_embedding(const std::vector<double>& e) const {
  if (static_cast<int64_t>(e.size()) != kEmbedDim)
    throw std::invalid_argument("logits_from_embedding: embedding must be 64-dim");
  // Same code path as the forward pass so the tap identity holds bit-exactly.
  Tensor x({1, kEmbedDim}, e);
  Tensor y;
  fc3_.forward(x, 1, y);
  return {y[0], y[1]};
}

void ExpertNet::pack(ckpt::Container& c, const std::string& prefix) const {
  for (const nn::Param* p : params()) c.add(prefix + p->name, p->value);
  const nn::BatchNorm* bns[4] = {&bn_[0], &bn_[1], &bn_[2], &bn_emb_};
  const char* tags[4] = {"bn1", "bn2", "bn3", "bn_emb"};
  for (int i = 0; i < 4; ++i) {
    c.add(prefix + std::string(tags[i]) + ".run_mean", bns[i]->run_mean);
    c.add(prefix + std::string(tags[i]) + ".run_var", bns[i]->run_var);
  }
}

void ExpertNet::unpack(const ckpt::Container& c, const std::string& prefix) {
  for (nn::Param* p : params()) {
    const Tensor& t = c.get(prefix + p->name);
    if (t.shape() != p->value.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + prefix + p->name);
    p->value = t;
  }
  nn::BatchNorm* bns[4] = {&bn_[0], &bn_[1], &bn_[2], &bn_emb_};
  const char* tags[4] = {"bn1", "bn2", "bn3", "bn_emb"};
  for (int i = 0; i < 4; ++i) {
    bns[i]->run_mean = c.get(prefix + std::string(tags[i]) + ".run_mean");
    bns[i]->run_var = c.get(prefix + std::string(tags[i]) + ".run_var");
  }
}

void save_expert(const ExpertNet& net, const std::string& path, const std::string& sidecar_json) {
  ckpt::Container c;
  c.meta["kind"] = "expert";
  c.meta["arch"] = ExpertNet::kArchTag;
  c.meta["domain"] = net.domain();
  net.pack(c, "");
  c.save(path);
  write_text_file(path + ".json", sidecar_json);
}

ExpertNet load_expert(const std::string& path) {
  ckpt::Container c = ckpt::Container::load(path);
  if (c.meta.value("kind", "") != "expert")
    throw std::runtime_error("load_expert: not an expert checkpoint: " + path);
  if (c.meta.value("arch", "") != ExpertNet::kArchTag)
    throw std::runtime_error("load_expert: architecture tag mismatch in " + path + " (have '" +
                             c.meta.value("arch", "") + "', want '" + ExpertNet::kArchTag + "')");
  ExpertNet net;
  net.unpack(c, "");
  net.set_domain(c.meta.value("domain", ""));
  return net;
}

}  // namespace moe::lcnn
