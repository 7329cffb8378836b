#include "moe/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "moe/util.hpp"

namespace moe::evalx {

namespace {

void split_scores(const std::vector<ScoreRecord>& records, std::vector<double>& real,
                  std::vector<double>& fake) {
  for (const auto& r : records) (r.y == 0 ? real : fake).push_back(r.yhat);
  if (real.empty() || fake.empty())
    throw std::invalid_argument("metric requires both classes to be present");
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

double compute_eer(const std::vector<ScoreRecord>& records) {
  std::vector<double> real, fake;
  split_scores(records, real, fake);
  std::sort(real.begin(), real.end());
  std::sort(fake.begin(), fake.end());
  double nr = static_cast<double>(real.size());
  double nf = static_cast<double>(fake.size());

  // Distinct score values, ascending: each is a decision boundary.
  std::vector<double> values;
  values.reserve(real.size() + fake.size());
  values.insert(values.end(), real.begin(), real.end());
  values.insert(values.end(), fake.begin(), fake.end());
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());

  // Operating points for tau = -inf, then just above each distinct value.
  double prev_fpr = 1.0, prev_fnr = 0.0;
  size_t ri = 0, fi = 0;
  for (size_t vi = 0; vi <= values.size(); ++vi) {
    double fpr, fnr;
    if (vi < values.size()) {
      double u = values[vi];
      while (ri < real.size() && real[ri] <= u) ++ri;
      while (fi < fake.size() && fake[fi] <= u) ++fi;
      fpr = static_cast<double>(real.size() - ri) / nr;
      fnr = static_cast<double>(fi) / nf;
    } else {
      fpr = 0.0;
      fnr = 1.0;
    }
    double d = fnr - fpr;
    if (d >= 0.0) {
      if (d == 0.0) return fpr;
      double d_prev = prev_fnr - prev_fpr;
      double t = -d_prev / (d - d_prev);
      return prev_fpr + t * (fpr - prev_fpr);
    }
    prev_fpr = fpr;
    prev_fnr = fnr;
  }
  return 1.0;  // unreachable: the final point has d = 1
}

double compute_auc(const std::vector<ScoreRecord>& records) {
  std::vector<double> real, fake;
  split_scores(records, real, fake);
  std::sort(real.begin(), real.end());

  // Numerator in half-units: 2 per strictly-greater pair, 1 per tie.
  int64_t num = 0;
  for (double f : fake) {
    auto lo = std::lower_bound(real.begin(), real.end(), f);
    auto hi = std::upper_bound(real.begin(), real.end(), f);
    num += 2 * static_cast<int64_t>(lo - real.begin());
    num += static_cast<int64_t>(hi - lo);
  }
  return static_cast<double>(num) /
         (2.0 * static_cast<double>(fake.size()) * static_cast<double>(real.size()));
}

EvalReport aggregate(const std::vector<MetricRow>& rows,
                     const std::vector<std::string>& known_set) {
  if (rows.empty()) throw std::invalid_argument("aggregate: no rows");
  EvalReport report;
  report.rows = rows;

  auto find_row = [&](const std::string& name) -> const MetricRow& {
    for (const auto& r : rows)
      if (r.dataset == name) return r;
    throw std::invalid_argument("aggregate: known dataset '" + name + "' was not evaluated");
  };

  if (!known_set.empty()) {
    report.has_known = true;
    report.known.dataset = "Known";
    for (const auto& name : known_set) {
      const MetricRow& r = find_row(name);
      report.known.eer_pct += r.eer_pct;
      report.known.auc_pct += r.auc_pct;
    }
    report.known.eer_pct /= static_cast<double>(known_set.size());
    report.known.auc_pct /= static_cast<double>(known_set.size());
  }

  report.all.dataset = "All";
  for (const auto& r : rows) {
    report.all.eer_pct += r.eer_pct;
    report.all.auc_pct += r.auc_pct;
  }
  report.all.eer_pct /= static_cast<double>(rows.size());
  report.all.auc_pct /= static_cast<double>(rows.size());
  return report;
}

Scorer make_scorer(fusion::MoEModel& model) {
  Scorer s;
  s.kind = "moe";
  s.n_alpha = model.n_experts;
  s.score_mel = [&model](const Tensor& mel, std::vector<double>* alpha) {
    fusion::MoEOutput out = fusion::moe_forward_mel(model, mel);
    if (alpha != nullptr) *alpha = out.alpha;
    return out.yhat;
  };
  return s;
}

Scorer make_scorer(lcnn::ExpertNet& expert) {
  Scorer s;
  s.kind = "expert";
  s.score_mel = [&expert](const Tensor& mel, std::vector<double>* alpha) {
    if (alpha != nullptr) alpha->clear();
    return fusion::predict(expert.forward_eval(mel).logits);
  };
  return s;
}

Scorer make_scorer(std::vector<lcnn::ExpertNet>& ensemble) {
  if (ensemble.empty()) throw std::invalid_argument("make_scorer: empty ensemble");
  Scorer s;
  s.kind = "ensemble";
  s.score_mel = [&ensemble](const Tensor& mel, std::vector<double>* alpha) {
    if (alpha != nullptr) alpha->clear();
    return fusion::ensemble_average_mel(ensemble, mel);
  };
  return s;
}

ScoreResult score_dataset(const Scorer& scorer, const corpus::DatasetManifest& manifest,
                          corpus::Split split, const frontend::MelConfig& mel_cfg,
                          const std::string& data_root) {
  std::vector<corpus::ManifestEntry> entries = manifest.filter(split);
  if (entries.empty())
    throw std::invalid_argument("score_dataset: split '" +
                                std::string(corpus::split_name(split)) + "' is empty");
  ScoreResult result;
  for (const auto& e : entries) {
    std::string full = join_path(data_root, e.path);
    try {
      frontend::Waveform w = frontend::load_audio(full);
      frontend::MelSpectrogram ms = frontend::melspec(frontend::fix_length(w), mel_cfg);
      ScoreRecord rec;
      rec.path = e.path;
      rec.y = e.label;
      rec.yhat = scorer.score_mel(ms.values, &rec.alpha);
      result.records.push_back(std::move(rec));
    } catch (const std::exception& ex) {
      result.failures.push_back(full + ": " + ex.what());
    }
  }
  return result;
}

GateProfile gate_profile(fusion::MoEModel& model,
                         const std::map<std::string, corpus::DatasetManifest>& manifests,
                         corpus::Split split, const frontend::MelConfig& mel_cfg,
                         const std::string& data_root) {
  GateProfile profile;
  profile.expert_domains = model.domains();
  Scorer scorer = make_scorer(model);
  for (const auto& [name, manifest] : manifests) {
    ScoreResult sr = score_dataset(scorer, manifest, split, mel_cfg, data_root);
    if (!sr.failures.empty())
      throw std::runtime_error("gate_profile: failed to score " + sr.failures.front());
    std::vector<double> mean(static_cast<size_t>(model.n_experts), 0.0);
    for (const auto& rec : sr.records)
      for (size_t k = 0; k < mean.size(); ++k) mean[k] += rec.alpha[k];
    for (auto& v : mean) v /= static_cast<double>(sr.records.size());
    profile.mean_alpha[name] = std::move(mean);
  }
  return profile;
}

void emit_report_csv(const EvalReport& report, const std::string& path) {
  std::ostringstream out;
  out << "dataset,eer_pct,auc_pct\n";
  for (const auto& r : report.rows)
    out << r.dataset << ',' << fmt2(r.eer_pct) << ',' << fmt2(r.auc_pct) << '\n';
  if (report.has_known)
    out << report.known.dataset << ',' << fmt2(report.known.eer_pct) << ','
        << fmt2(report.known.auc_pct) << '\n';
  out << report.all.dataset << ',' << fmt2(report.all.eer_pct) << ','
      << fmt2(report.all.auc_pct) << '\n';
  write_text_file(path, out.str());
}

void emit_scores_csv(const std::vector<ScoreRecord>& records, const std::string& path) {
  std::ostringstream out;
  size_t n_alpha = records.empty() ? 0 : records.front().alpha.size();
  out << "path,label,score";
  for (size_t k = 1; k <= n_alpha; ++k) out << ",alpha_" << k;
  out << '\n';
  for (const auto& r : records) {
    out << r.path << ',' << r.y << ',' << format_double(r.yhat);
    for (double a : r.alpha) out << ',' << format_double(a);
    out << '\n';
  }
  write_text_file(path, out.str());
}

void emit_gate_profile_csv(const GateProfile& profile, const std::string& path) {
  std::ostringstream out;
  size_t n = profile.expert_domains.size();
  out << "dataset";
  for (size_t k = 1; k <= n; ++k) out << ",alpha_" << k;
  out << '\n';
  for (const auto& [name, mean] : profile.mean_alpha) {
    out << name;
    for (double v : mean) out << ',' << fmt6(v);
    out << '\n';
  }
  write_text_file(path, out.str());
}

void emit_gate_profile_plots(const GateProfile& profile, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("emit_gate_profile_plots: cannot create " + out_dir);

  const int width = 520, height = 340, margin = 50;
  for (const auto& [name, mean] : profile.mean_alpha) {
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
        << "Average gating weights: " << name << "</text>\n";

    int plot_w = width - 2 * margin;
    int plot_h = height - 2 * margin;
    size_t n = mean.size();
    int bar_w = static_cast<int>(plot_w / (2.0 * static_cast<double>(n)));
    for (size_t k = 0; k < n; ++k) {
      double v = mean[k];
      int bh = static_cast<int>(v * plot_h);
      int x = margin + static_cast<int>((2 * k + 0.5) * bar_w);
      int y = height - margin - bh;
      svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w << "\" height=\"" << bh
          << "\" fill=\"#4878a8\"/>\n";
      svg << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << y - 6
          << "\" text-anchor=\"middle\" font-size=\"12\">" << fmt2(v) << "</text>\n";
      std::string label = k < profile.expert_domains.size() ? profile.expert_domains[k]
                                                            : "E" + std::to_string(k + 1);
      svg << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << height - margin + 18
          << "\" text-anchor=\"middle\" font-size=\"12\">" << label << "</text>\n";
    }
    svg << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
        << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    svg << "</svg>\n";
    write_text_file(join_path(out_dir, "gate_" + name + ".svg"), svg.str());
  }
}

}  // namespace moe::evalx
