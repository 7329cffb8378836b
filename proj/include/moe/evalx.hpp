#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "moe/corpus.hpp"
#include "moe/frontend.hpp"
#include "moe/fusion.hpp"
#include "moe/lcnn.hpp"

namespace moe::evalx {

struct ScoreRecord {
  std::string path;
  int y = 0;          // true label, 1 = fake
  double yhat = 0.0;  // fake likelihood in [0, 1]
  std::vector<double> alpha;  // gate weights; empty for non-MoE detectors
};

/// Equal error rate with fake as the positive class. ROC operating points are
/// swept over all distinct thresholds (decision: fake iff score >= tau) and
/// the FNR/FPR crossing is linearly interpolated between the bracketing
/// points. Requires both classes.
double compute_eer(const std::vector<ScoreRecord>& records);

/// Mann-Whitney AUC: fraction of (fake, real) pairs with yhat_fake >
/// yhat_real, ties counted 1/2. The numerator is accumulated in integer
/// half-units, so the result matches the pairwise-count oracle exactly.
double compute_auc(const std::vector<ScoreRecord>& records);

struct MetricRow {
  std::string dataset;
  double eer_pct = 0.0;
  double auc_pct = 0.0;
};

struct EvalReport {
  std::vector<MetricRow> rows;
  bool has_known = false;
  MetricRow known;  // arithmetic means over the known datasets
  MetricRow all;    // arithmetic means over all rows
};

/// Table-style aggregation: Known and All are per-metric arithmetic means of
/// the per-dataset rows. An empty known_set omits the Known row.
EvalReport aggregate(const std::vector<MetricRow>& rows,
                     const std::vector<std::string>& known_set);

/// Uniform scoring interface over MoE / single expert / average ensemble.
struct Scorer {
  std::function<double(const Tensor& mel, std::vector<double>* alpha)> score_mel;
  int64_t n_alpha = 0;
  std::string kind;
};

Scorer make_scorer(fusion::MoEModel& model);
Scorer make_scorer(lcnn::ExpertNet& expert);
Scorer make_scorer(std::vector<lcnn::ExpertNet>& ensemble);

struct ScoreResult {
  std::vector<ScoreRecord> records;
  std::vector<std::string> failures;  // per-file errors; scoring continues
};

/// Scores every entry of a split in manifest order (eval-mode inference).
/// Unreadable files are collected into failures without aborting the run.
ScoreResult score_dataset(const Scorer& scorer, const corpus::DatasetManifest& manifest,
                          corpus::Split split, const frontend::MelConfig& mel_cfg,
                          const std::string& data_root);

struct GateProfile {
  std::vector<std::string> expert_domains;
  std::map<std::string, std::vector<double>> mean_alpha;  // dataset -> N means
};

/// Per-dataset arithmetic mean of the gate weight vectors over a split.
GateProfile gate_profile(fusion::MoEModel& model,
                         const std::map<std::string, corpus::DatasetManifest>& manifests,
                         corpus::Split split, const frontend::MelConfig& mel_cfg,
                         const std::string& data_root);

/// CSV emission; re-emission is byte-identical.
void emit_report_csv(const EvalReport& report, const std::string& path);
void emit_scores_csv(const std::vector<ScoreRecord>& records, const std::string& path);
void emit_gate_profile_csv(const GateProfile& profile, const std::string& path);

/// One bar chart per dataset, written as gate_<dataset>.svg under out_dir
/// (presentation only, excluded from byte-exactness guarantees).
void emit_gate_profile_plots(const GateProfile& profile, const std::string& out_dir);

}  // namespace moe::evalx
