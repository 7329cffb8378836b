#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "moe/evalx.hpp"
#include "moe/util.hpp"
#include "test_util.hpp"

using namespace moe;
using evalx::ScoreRecord;

namespace {

std::vector<ScoreRecord> records_from(const std::vector<double>& fake,
                                      const std::vector<double>& real) {
  std::vector<ScoreRecord> out;
  for (double s : fake) out.push_back({"f", 1, s, {}});
  for (double s : real) out.push_back({"r", 0, s, {}});
  return out;
}

// Brute-force EER oracle: sweep tau over -inf, midpoints between consecutive
// distinct scores and above the maximum, counting rates directly at each
// threshold, then interpolate the FNR/FPR crossing linearly.
double eer_oracle(const std::vector<ScoreRecord>& records) {
  std::vector<double> real, fake, values;
  for (const auto& r : records) {
    (r.y == 0 ? real : fake).push_back(r.yhat);
    values.push_back(r.yhat);
  }
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());

  std::vector<double> taus;
  taus.push_back(-1e300);
  for (size_t i = 0; i + 1 < values.size(); ++i) taus.push_back(0.5 * (values[i] + values[i + 1]));
  taus.push_back(values.back() + 1.0);

  double prev_fpr = 0.0, prev_fnr = 0.0;
  bool have_prev = false;
  for (double tau : taus) {
    int fp = 0, fn = 0;
    for (double s : real)
      if (s >= tau) ++fp;
    for (double s : fake)
      if (s < tau) ++fn;
    double fpr = static_cast<double>(fp) / static_cast<double>(real.size());
    double fnr = static_cast<double>(fn) / static_cast<double>(fake.size());
    double d = fnr - fpr;
    if (d >= 0.0) {
      if (d == 0.0) return fpr;
      REQUIRE(have_prev);
      double d_prev = prev_fnr - prev_fpr;
      double t = -d_prev / (d - d_prev);
      return prev_fpr + t * (fpr - prev_fpr);
    }
    prev_fpr = fpr;
    prev_fnr = fnr;
    have_prev = true;
  }
  return 1.0;
}

// Pairwise-count AUC oracle in integer half-units.
double auc_oracle(const std::vector<ScoreRecord>& records) {
  std::vector<double> real, fake;
  for (const auto& r : records) (r.y == 0 ? real : fake).push_back(r.yhat);
  int64_t num = 0;
  for (double f : fake)
    for (double r : real) {
      if (f > r) num += 2;
      else if (f == r) num += 1;
    }
  return static_cast<double>(num) /
         (2.0 * static_cast<double>(fake.size()) * static_cast<double>(real.size()));
}

std::vector<ScoreRecord> random_records(Rng& rng, bool with_ties) {
  while (true) {
    int n = 2 + static_cast<int>(rng.uniform_int(11));
    std::vector<ScoreRecord> recs;
    bool has[2] = {false, false};
    for (int i = 0; i < n; ++i) {
      int y = static_cast<int>(rng.uniform_int(2));
      double s = with_ties ? 0.1 * static_cast<double>(rng.uniform_int(11)) : rng.uniform();
      recs.push_back({"x", y, s, {}});
      has[y] = true;
    }
    if (has[0] && has[1]) return recs;
  }
}

}  // namespace

TEST_CASE("compute_eer: perfect, anti-perfect, and the interpolated crossing") {
  CHECK(evalx::compute_eer(records_from({0.9, 0.8}, {0.1, 0.2})) == 0.0);
  CHECK(evalx::compute_eer(records_from({0.1, 0.2}, {0.9, 0.8})) == 1.0);
  CHECK(evalx::compute_eer(records_from({0.9, 0.3}, {0.7, 0.1})) == 0.5);
  CHECK_THROWS(evalx::compute_eer(records_from({0.5}, {})));
}

TEST_CASE("compute_auc: perfect, all ties, pairwise-count example") {
  CHECK(evalx::compute_auc(records_from({0.9, 0.8}, {0.1, 0.2})) == 1.0);
  CHECK(evalx::compute_auc(records_from({0.5, 0.5}, {0.5, 0.5})) == 0.5);
  CHECK(evalx::compute_auc(records_from({0.9, 0.3}, {0.7, 0.1})) == 0.75);
  CHECK_THROWS(evalx::compute_auc(records_from({}, {0.5})));
}

TEST_CASE("compute_eer and compute_auc match the brute-force oracles exactly") {
  Rng rng(1);
  for (int trial = 0; trial < 400; ++trial) {
    std::vector<ScoreRecord> recs = random_records(rng, trial % 2 == 0);
    CHECK(evalx::compute_eer(recs) == eer_oracle(recs));
    CHECK(evalx::compute_auc(recs) == auc_oracle(recs));
  }
}

TEST_CASE("EER and AUC are invariant under strictly monotone score transforms") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ScoreRecord> recs = random_records(rng, trial % 3 == 0);
    double a = rng.uniform(0.2, 2.0), b = rng.uniform(0.1, 1.0), c = rng.uniform(-1.0, 1.0);
    std::vector<ScoreRecord> mapped = recs;
    for (auto& r : mapped) r.yhat = c + a * r.yhat + b * r.yhat * r.yhat * r.yhat;
    CHECK(evalx::compute_eer(mapped) == evalx::compute_eer(recs));
    CHECK(evalx::compute_auc(mapped) == evalx::compute_auc(recs));
  }
}

TEST_CASE("AUC flip identity: AUC + AUC(labels flipped) == 1") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ScoreRecord> recs = random_records(rng, trial % 2 == 0);
    std::vector<ScoreRecord> flipped = recs;
    for (auto& r : flipped) r.y = 1 - r.y;
    CHECK(std::abs(evalx::compute_auc(recs) + evalx::compute_auc(flipped) - 1.0) <= 1e-12);
  }
}

TEST_CASE("EER stays within [0, 1] on random inputs") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    double eer = evalx::compute_eer(random_records(rng, trial % 2 == 0));
    CHECK(eer >= 0.0);
    CHECK(eer <= 1.0);
  }
}

TEST_CASE("aggregate reproduces the published Known/All means") {
  std::vector<evalx::MetricRow> rows = {
      {"ASV", 9.45, 96.17}, {"FoR", 2.74, 99.43}, {"ADD", 30.87, 76.04},
      {"ItW", 0.55, 99.83}, {"PUR", 2.53, 94.52}, {"TIM", 6.98, 97.73},
  };
  evalx::EvalReport rep = evalx::aggregate(rows, {"ASV", "FoR", "ADD", "ItW"});
  REQUIRE(rep.has_known);
  CHECK(std::abs(rep.known.eer_pct - 10.90) <= 0.005);
  CHECK(std::abs(rep.all.eer_pct - 8.85) <= 0.005);
  // Aggregates re-derivable as exact arithmetic means of their member rows.
  CHECK(rep.known.eer_pct == (9.45 + 2.74 + 30.87 + 0.55) / 4.0);
  CHECK(rep.all.eer_pct == (9.45 + 2.74 + 30.87 + 0.55 + 2.53 + 6.98) / 6.0);
}

TEST_CASE("aggregate: single dataset and empty known set") {
  std::vector<evalx::MetricRow> rows = {{"only", 12.5, 88.0}};
  evalx::EvalReport rep = evalx::aggregate(rows, {"only"});
  CHECK(rep.known.eer_pct == 12.5);
  CHECK(rep.all.eer_pct == 12.5);

  evalx::EvalReport no_known = evalx::aggregate(rows, {});
  CHECK_FALSE(no_known.has_known);

  CHECK_THROWS(evalx::aggregate(rows, {"missing"}));
}

TEST_CASE("score_dataset: counting, determinism, and decomposition consistency") {
  std::string dir = testutil::temp_dir("evalx_score");
  corpus::SynthCorpusSpec spec;
  spec.num_domains = 2;
  spec.clips_per_domain_per_class = 8;
  spec.clip_seconds = 1.0;
  spec.seed = 5;
  corpus::DatasetManifest manifest = corpus::synth_corpus(spec, dir);

  fusion::MoEModel model;
  model.variant = fusion::GateVariant::Enhanced;
  for (int k = 0; k < 2; ++k) {
    lcnn::ExpertNet e;
    e.init(100 + static_cast<uint64_t>(k));
    e.set_domain(corpus::synth_domain_name(k));
    model.experts.push_back(std::move(e));
  }
  model.init_gate(6);

  evalx::Scorer scorer = evalx::make_scorer(model);
  evalx::ScoreResult a = evalx::score_dataset(scorer, manifest, corpus::Split::Dev, {}, dir);
  evalx::ScoreResult b = evalx::score_dataset(scorer, manifest, corpus::Split::Dev, {}, dir);
  CHECK(a.failures.empty());

  int expect = 0;
  for (const auto& e : manifest.entries)
    if (e.split == corpus::Split::Dev) ++expect;
  CHECK(static_cast<int>(a.records.size()) == expect);

  REQUIRE(a.records.size() == b.records.size());
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].yhat == b.records[i].yhat);
    CHECK(testutil::bytes_equal(a.records[i].alpha, b.records[i].alpha));
  }

  // Records match direct moe_forward calls on the same files.
  for (size_t i = 0; i < 3 && i < a.records.size(); ++i) {
    frontend::Waveform w = frontend::load_audio(join_path(dir, a.records[i].path));
    fusion::MoEOutput out = fusion::moe_forward(model, w);
    CHECK(out.yhat == a.records[i].yhat);
  }
}

TEST_CASE("score_dataset collects per-file failures and keeps going") {
  std::string dir = testutil::temp_dir("evalx_fail");
  corpus::SynthCorpusSpec spec;
  spec.num_domains = 2;
  spec.clips_per_domain_per_class = 8;
  spec.clip_seconds = 0.5;
  spec.seed = 7;
  corpus::DatasetManifest manifest = corpus::synth_corpus(spec, dir);
  manifest.entries.push_back({"audio/missing.wav", 0, "dom0", corpus::Split::Dev});

  lcnn::ExpertNet e;
  e.init(8);
  evalx::Scorer scorer = evalx::make_scorer(e);
  evalx::ScoreResult r = evalx::score_dataset(scorer, manifest, corpus::Split::Dev, {}, dir);
  CHECK(r.failures.size() == 1);
  CHECK(r.failures.front().find("missing.wav") != std::string::npos);
  CHECK(r.records.size() >= 4);
}

TEST_CASE("gate_profile: a zeroed gate head gives exactly uniform profiles") {
  std::string dir = testutil::temp_dir("evalx_profile");
  corpus::SynthCorpusSpec spec;
  spec.num_domains = 2;
  spec.clips_per_domain_per_class = 8;
  spec.clip_seconds = 0.5;
  spec.seed = 9;
  corpus::DatasetManifest manifest = corpus::synth_corpus(spec, dir);

  fusion::MoEModel model;
  model.variant = fusion::GateVariant::Enhanced;
  for (int k = 0; k < 2; ++k) {
    lcnn::ExpertNet e;
    e.init(200 + static_cast<uint64_t>(k));
    e.set_domain(corpus::synth_domain_name(k));
    model.experts.push_back(std::move(e));
  }
  model.init_gate(10);
  for (nn::Param* p : model.gate.params()) p->value.fill(0.0);

  std::map<std::string, corpus::DatasetManifest> by_domain;
  for (const std::string& d : manifest.domains()) {
    corpus::DatasetManifest sub;
    sub.name = d;
    for (const auto& e : manifest.entries)
      if (e.domain == d) sub.entries.push_back(e);
    by_domain[d] = sub;
  }

  evalx::GateProfile profile = evalx::gate_profile(model, by_domain, corpus::Split::Dev, {}, dir);
  REQUIRE(profile.mean_alpha.size() == 2);
  for (const auto& [name, mean] : profile.mean_alpha) {
    double sum = 0.0;
    for (double v : mean) {
      CHECK(v == 0.5);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("emit_report_csv: row count and byte-identical re-emission") {
  std::string dir = testutil::temp_dir("evalx_emit");
  std::vector<evalx::MetricRow> rows;
  for (int i = 0; i < 6; ++i)
    rows.push_back({"d" + std::to_string(i), 10.0 + i, 90.0 - i});
  evalx::EvalReport rep = evalx::aggregate(rows, {"d0", "d1", "d2", "d3"});

  evalx::emit_report_csv(rep, dir + "/report.csv");
  std::string text = testutil::slurp(dir + "/report.csv");
  int lines = static_cast<int>(std::count(text.begin(), text.end(), '\n'));
  CHECK(lines == 9);  // header + 6 datasets + Known + All
  CHECK(text.rfind("dataset,eer_pct,auc_pct\n", 0) == 0);

  evalx::emit_report_csv(rep, dir + "/report2.csv");
  CHECK(testutil::slurp(dir + "/report2.csv") == text);
}

TEST_CASE("gate profile CSV schema and SVG emission") {
  std::string dir = testutil::temp_dir("evalx_gate_emit");
  evalx::GateProfile profile;
  profile.expert_domains = {"a", "b", "c", "d"};
  profile.mean_alpha["set1"] = {0.4, 0.3, 0.2, 0.1};
  profile.mean_alpha["set2"] = {0.25, 0.25, 0.25, 0.25};

  evalx::emit_gate_profile_csv(profile, dir + "/profile.csv");
  std::string text = testutil::slurp(dir + "/profile.csv");
  CHECK(text.rfind("dataset,alpha_1,alpha_2,alpha_3,alpha_4\n", 0) == 0);

  evalx::emit_gate_profile_csv(profile, dir + "/profile2.csv");
  CHECK(testutil::slurp(dir + "/profile2.csv") == text);

  evalx::emit_gate_profile_plots(profile, dir);
  CHECK(std::filesystem::exists(dir + "/gate_set1.svg"));
  CHECK(std::filesystem::exists(dir + "/gate_set2.svg"));
}

TEST_CASE("emit_scores_csv carries gate weights when present") {
  std::string dir = testutil::temp_dir("evalx_scores_emit");
  std::vector<ScoreRecord> recs = {{"a.wav", 0, 0.25, {0.6, 0.4}}, {"b.wav", 1, 0.75, {0.1, 0.9}}};
  evalx::emit_scores_csv(recs, dir + "/scores.csv");
  std::string text = testutil::slurp(dir + "/scores.csv");
  CHECK(text.rfind("path,label,score,alpha_1,alpha_2\n", 0) == 0);
  CHECK(text.find("a.wav,0,0.25,") != std::string::npos);
}
