// Command-line entry point wiring corpus generation, training, evaluation
// and gate profiling into reproducible seeded runs.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "moe/checkpoint.hpp"
#include "moe/corpus.hpp"
#include "moe/evalx.hpp"
#include "moe/frontend.hpp"
#include "moe/fusion.hpp"
#include "moe/lcnn.hpp"
#include "moe/train.hpp"
#include "moe/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace moe;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct GlobalOpts {
  uint64_t seed = 0;
  std::string data_root;
  // Frontend knobs (defaults give the 80x188 input the models expect).
  int n_fft = 1024;
  int hop = 256;
  int n_mels = 80;
  // Training recipe defaults follow the experts' recipe; train-moe drops the
  // batch size to 64 unless overridden.
  int64_t epochs = 100;
  int64_t patience = 20;
  int64_t batch_size = 128;
  bool batch_size_set = false;
  double lr = 1e-4;
  double weight_decay = 0.01;

  frontend::MelConfig mel() const {
    frontend::MelConfig cfg;
    cfg.n_fft = n_fft;
    cfg.hop = hop;
    cfg.n_mels = n_mels;
    return cfg;
  }

  train::TrainConfig train_cfg(int64_t default_batch) const {
    train::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.patience = patience;
    cfg.batch_size = batch_size_set ? batch_size : default_batch;
    cfg.lr0 = lr;
    cfg.weight_decay = weight_decay;
    cfg.seed = seed;
    return cfg;
  }
};

void add_global_options(CLI::App& app, GlobalOpts& g) {
  app.add_option("--seed", g.seed, "Seed for all randomness")->capture_default_str();
  app.add_option("--data-root", g.data_root,
                 "Root for relative manifest paths (default: $MOE_DATA_ROOT, else the "
                 "manifest's directory)");
  app.add_option("--n-fft", g.n_fft, "STFT size")->capture_default_str();
  app.add_option("--hop", g.hop, "STFT hop")->capture_default_str();
  app.add_option("--n-mels", g.n_mels, "Mel bands")->capture_default_str();
  app.add_option("--epochs", g.epochs, "Training epochs")->capture_default_str();
  app.add_option("--patience", g.patience, "Early-stopping patience")->capture_default_str();
  app.add_option("--batch-size", g.batch_size, "Batch size (default 128, 64 for train-moe)")
      ->each([&g](const std::string&) { g.batch_size_set = true; });
  app.add_option("--lr", g.lr, "Initial learning rate")->capture_default_str();
  app.add_option("--weight-decay", g.weight_decay, "AdamW weight decay")->capture_default_str();
}

json global_json(const GlobalOpts& g, const std::string& command) {
  json j;
  j["command"] = command;
  j["seed"] = g.seed;
  j["data_root"] = g.data_root;
  j["mel"] = {{"n_fft", g.n_fft}, {"hop", g.hop}, {"n_mels", g.n_mels},
              {"window", "hann"}, {"log_floor", 1e-6}, {"center", true}};
  j["train"] = {{"epochs", g.epochs},
                {"patience", g.patience},
                {"batch_size", g.batch_size_set ? g.batch_size : -1},
                {"lr0", g.lr},
                {"optimizer", "adamw"},
                {"beta1", 0.9},
                {"beta2", 0.999},
                {"weight_decay", g.weight_decay},
                {"schedule", "cosine"},
                {"loss", "cross_entropy"}};
  return j;
}

/// Relative entry paths resolve against --data-root / $MOE_DATA_ROOT when
/// given (kept relative in outputs, so score CSVs are location-independent),
/// otherwise against the manifest's own directory.
struct ManifestSet {
  std::vector<corpus::DatasetManifest> manifests;
  std::string root;
};

ManifestSet load_manifests(const std::vector<std::string>& paths, const GlobalOpts& g) {
  ManifestSet set;
  set.root = g.data_root;
  if (set.root.empty()) {
    const char* env = std::getenv("MOE_DATA_ROOT");
    if (env != nullptr && env[0] != '\0') set.root = env;
  }
  for (const auto& p : paths) {
    corpus::DatasetManifest m = corpus::load_manifest(p);
    if (set.root.empty()) {
      std::string dir = fs::path(p).parent_path().string();
      for (auto& e : m.entries)
        if (!is_abs_path(e.path)) e.path = join_path(dir, e.path);
    }
    set.manifests.push_back(std::move(m));
  }
  return set;
}

std::map<std::string, corpus::DatasetManifest> group_by_domain(
    const std::vector<corpus::DatasetManifest>& manifests) {
  std::map<std::string, corpus::DatasetManifest> out;
  for (const auto& m : manifests)
    for (const auto& e : m.entries) {
      corpus::DatasetManifest& sub = out[e.domain];
      sub.name = e.domain;
      sub.entries.push_back(e);
    }
  return out;
}

void write_sidecar(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

// -- subcommand implementations ----------------------------------------------

int cmd_synth_corpus(const GlobalOpts& g, const std::string& out_dir, int domains, int per_domain,
                     double clip_seconds) {
  corpus::SynthCorpusSpec spec;
  spec.num_domains = domains;
  spec.clips_per_domain_per_class = per_domain;
  spec.clip_seconds = clip_seconds;
  spec.seed = g.seed;
  corpus::DatasetManifest m = corpus::synth_corpus(spec, out_dir);

  json j = global_json(g, "synth-corpus");
  j["synth"] = {{"num_domains", domains},
                {"clips_per_domain_per_class", per_domain},
                {"clip_seconds", clip_seconds}};
  j["outputs"] = {{"manifest", join_path(out_dir, "manifest.csv")}, {"files", m.entries.size()}};
  write_sidecar(join_path(out_dir, "run_config.json"), j);

  std::cout << "wrote " << m.entries.size() << " clips under " << out_dir << "\n";
  return kExitOk;
}

json expert_sidecar(const GlobalOpts& g, const std::string& command, const std::string& domain,
                    const train::TrainConfig& cfg) {
  json j = global_json(g, command);
  j["arch"] = lcnn::ExpertNet::kArchTag;
  j["domain"] = domain;
  j["train"]["batch_size"] = cfg.batch_size;
  return j;
}

int cmd_train_expert(const GlobalOpts& g, const std::string& manifest_path,
                     const std::string& domain, const std::string& out) {
  ManifestSet set = load_manifests({manifest_path}, g);
  corpus::DatasetManifest m = std::move(set.manifests.front());
  std::string domain_name = domain;
  if (!domain.empty()) {
    corpus::DatasetManifest filtered;
    filtered.name = domain;
    for (const auto& e : m.entries)
      if (e.domain == domain) filtered.entries.push_back(e);
    if (filtered.entries.empty())
      throw std::runtime_error("no entries for domain '" + domain + "' in " + manifest_path);
    m = std::move(filtered);
  } else {
    auto domains = m.domains();
    domain_name = domains.size() == 1 ? domains.front() : m.name;
  }

  train::TrainConfig cfg = g.train_cfg(128);
  train::ExpertTrainResult result = train::train_expert(m, cfg, g.mel(), set.root);
  result.net.set_domain(domain_name);

  lcnn::save_expert(result.net, out,
                    expert_sidecar(g, "train-expert", domain_name, cfg).dump(2) + "\n");
  train::write_epoch_log(result.log, out + ".log.csv");
  std::cout << "trained expert '" << domain_name << "': best dev loss "
            << format_double(result.best_dev_loss) << " over " << result.log.size()
            << " epochs -> " << out << "\n";
  return kExitOk;
}

int cmd_train_joint(const GlobalOpts& g, const std::vector<std::string>& manifest_paths,
                    const std::string& out) {
  ManifestSet set = load_manifests(manifest_paths, g);
  train::TrainConfig cfg = g.train_cfg(128);
  train::ExpertTrainResult result =
      train::train_joint_baseline(set.manifests, cfg, g.mel(), set.root);
  result.net.set_domain("joint");

  lcnn::save_expert(result.net, out, expert_sidecar(g, "train-joint", "joint", cfg).dump(2) + "\n");
  train::write_epoch_log(result.log, out + ".log.csv");
  std::cout << "trained joint baseline: best dev loss " << format_double(result.best_dev_loss)
            << " over " << result.log.size() << " epochs -> " << out << "\n";
  return kExitOk;
}

int cmd_train_moe(const GlobalOpts& g, const std::string& variant_name,
                  const std::vector<std::string>& expert_paths,
                  const std::vector<std::string>& manifest_paths, const std::string& out) {
  fusion::GateVariant variant = fusion::parse_variant(variant_name);
  std::vector<lcnn::ExpertNet> experts;
  for (const auto& p : expert_paths) experts.push_back(lcnn::load_expert(p));
  ManifestSet set = load_manifests(manifest_paths, g);

  train::TrainConfig cfg = g.train_cfg(64);
  train::MoeTrainResult result =
      train::train_moe(std::move(experts), variant, set.manifests, cfg, g.mel(), set.root);

  json j = global_json(g, "train-moe");
  j["variant"] = variant_name;
  j["n_experts"] = result.model.n_experts;
  j["domains"] = result.model.domains();
  j["experts"] = expert_paths;
  j["train"]["batch_size"] = cfg.batch_size;
  fusion::save_moe(result.model, out, j.dump(2) + "\n");
  train::write_epoch_log(result.log, out + ".log.csv");
  std::cout << "trained MoE (" << variant_name << "): best dev loss "
            << format_double(result.best_dev_loss) << " over " << result.log.size()
            << " epochs -> " << out << "\n";
  return kExitOk;
}

struct LoadedDetector {
  std::string kind;
  fusion::MoEModel moe;
  lcnn::ExpertNet expert;
  std::vector<lcnn::ExpertNet> ensemble;

  evalx::Scorer scorer() {
    if (kind == "moe") return evalx::make_scorer(moe);
    if (kind == "expert") return evalx::make_scorer(expert);
    return evalx::make_scorer(ensemble);
  }
};

LoadedDetector load_detector(const std::string& model_path,
                             const std::vector<std::string>& ensemble_paths) {
  LoadedDetector d;
  if (!model_path.empty()) {
    ckpt::Container c = ckpt::Container::load(model_path);
    d.kind = c.meta.value("kind", "");
    if (d.kind == "moe") d.moe = fusion::load_moe(model_path);
    else if (d.kind == "expert") d.expert = lcnn::load_expert(model_path);
    else throw std::runtime_error("unknown checkpoint kind in " + model_path);
  } else {
    d.kind = "ensemble";
    for (const auto& p : ensemble_paths) d.ensemble.push_back(lcnn::load_expert(p));
  }
  return d;
}

int cmd_evaluate(const GlobalOpts& g, const std::string& model_path,
                 const std::vector<std::string>& ensemble_paths,
                 const std::vector<std::string>& manifest_paths, const std::string& split_name,
                 const std::string& known_csv, const std::string& out_dir) {
  corpus::Split split = corpus::parse_split(split_name);
  LoadedDetector detector = load_detector(model_path, ensemble_paths);
  evalx::Scorer scorer = detector.scorer();

  ManifestSet set = load_manifests(manifest_paths, g);
  std::map<std::string, corpus::DatasetManifest> by_domain = group_by_domain(set.manifests);
  if (by_domain.empty()) throw std::runtime_error("no datasets to score");

  fs::create_directories(out_dir);
  std::vector<evalx::MetricRow> rows;
  std::vector<std::string> failures;
  for (auto& [name, manifest] : by_domain) {
    evalx::ScoreResult sr = evalx::score_dataset(scorer, manifest, split, g.mel(), set.root);
    failures.insert(failures.end(), sr.failures.begin(), sr.failures.end());
    if (sr.records.empty()) continue;
    evalx::emit_scores_csv(sr.records, join_path(out_dir, "scores_" + name + ".csv"));
    rows.push_back({name, 100.0 * evalx::compute_eer(sr.records),
                    100.0 * evalx::compute_auc(sr.records)});
  }

  std::vector<std::string> known;
  if (!known_csv.empty())
    for (const auto& tok : split_csv_line(known_csv))
      if (!tok.empty()) known.push_back(tok);

  evalx::EvalReport report = evalx::aggregate(rows, known);
  evalx::emit_report_csv(report, join_path(out_dir, "report.csv"));

  json j = global_json(g, "evaluate");
  j["model"] = model_path.empty() ? json(ensemble_paths) : json(model_path);
  j["detector_kind"] = detector.kind;
  j["split"] = split_name;
  j["known"] = known;
  j["failures"] = failures;
  write_sidecar(join_path(out_dir, "run_config.json"), j);

  auto print_row = [](const evalx::MetricRow& r) {
    std::printf("%-12s EER %6.2f%%  AUC %6.2f%%\n", r.dataset.c_str(), r.eer_pct, r.auc_pct);
  };
  for (const auto& r : report.rows) print_row(r);
  if (report.has_known) print_row(report.known);
  print_row(report.all);

  if (!failures.empty()) {
    for (const auto& f : failures) std::cerr << "evaluate: failed to score " << f << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_gate_profile(const GlobalOpts& g, const std::string& model_path,
                     const std::vector<std::string>& manifest_paths,
                     const std::string& split_name, const std::string& out_dir) {
  corpus::Split split = corpus::parse_split(split_name);
  ckpt::Container c = ckpt::Container::load(model_path);
  if (c.meta.value("kind", "") != "moe")
    throw std::runtime_error(model_path + " is not a MoE checkpoint");
  fusion::MoEModel model = fusion::load_moe(model_path);

  ManifestSet set = load_manifests(manifest_paths, g);
  std::map<std::string, corpus::DatasetManifest> by_domain = group_by_domain(set.manifests);

  evalx::GateProfile profile = evalx::gate_profile(model, by_domain, split, g.mel(), set.root);
  fs::create_directories(out_dir);
  evalx::emit_gate_profile_csv(profile, join_path(out_dir, "gate_profile.csv"));
  evalx::emit_gate_profile_plots(profile, out_dir);

  json j = global_json(g, "gate-profile");
  j["model"] = model_path;
  j["split"] = split_name;
  j["expert_domains"] = profile.expert_domains;
  write_sidecar(join_path(out_dir, "run_config.json"), j);

  for (const auto& [name, mean] : profile.mean_alpha) {
    std::printf("%-12s", name.c_str());
    for (double v : mean) std::printf("  %.3f", v);
    std::printf("\n");
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-experts speech deepfake detector"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Config file with key=value lines (flags take precedence)");

  GlobalOpts g;
  add_global_options(app, g);

  // synth-corpus
  auto* sc = app.add_subcommand("synth-corpus", "Generate the synthetic multi-domain corpus");
  std::string sc_out;
  int sc_domains = 4, sc_per = 32;
  double sc_secs = 4.0;
  sc->add_option("--out", sc_out, "Output directory")->required();
  sc->add_option("--domains", sc_domains, "Number of domains")->capture_default_str();
  sc->add_option("--per-domain", sc_per, "Clips per domain per class")->capture_default_str();
  sc->add_option("--clip-seconds", sc_secs, "Clip length in seconds")->capture_default_str();

  // train-expert
  auto* te = app.add_subcommand("train-expert", "Pre-train one LCNN expert");
  std::string te_manifest, te_domain, te_out;
  te->add_option("--manifest", te_manifest, "Manifest CSV")->required();
  te->add_option("--domain", te_domain, "Restrict training to one domain tag");
  te->add_option("--out", te_out, "Output checkpoint path")->required();

  // train-joint
  auto* tj = app.add_subcommand("train-joint", "Train the single-model baseline on pooled data");
  std::vector<std::string> tj_manifests;
  std::string tj_out;
  tj->add_option("--manifests", tj_manifests, "Manifest CSVs")->required()->expected(-1);
  tj->add_option("--out", tj_out, "Output checkpoint path")->required();

  // train-moe
  auto* tm = app.add_subcommand("train-moe", "Jointly fine-tune experts plus a fresh gate");
  std::string tm_variant = "enhanced", tm_out;
  std::vector<std::string> tm_experts, tm_manifests;
  tm->add_option("--variant", tm_variant, "Gate variant: standard | enhanced")
      ->check(CLI::IsMember({"standard", "enhanced"}))
      ->capture_default_str();
  tm->add_option("--experts", tm_experts, "Pre-trained expert checkpoints")
      ->required()
      ->expected(-1);
  tm->add_option("--manifests", tm_manifests, "Manifest CSVs")->required()->expected(-1);
  tm->add_option("--out", tm_out, "Output checkpoint path")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score datasets and report EER/AUC");
  std::string ev_model, ev_split = "eval", ev_known, ev_out;
  std::vector<std::string> ev_ensemble, ev_manifests;
  ev->add_option("--model", ev_model, "Checkpoint (expert or MoE)");
  ev->add_option("--ensemble", ev_ensemble, "Expert checkpoints for the average ensemble")
      ->expected(-1);
  ev->add_option("--manifests", ev_manifests, "Manifest CSVs")->required()->expected(-1);
  ev->add_option("--split", ev_split, "Split to score")->capture_default_str();
  ev->add_option("--known", ev_known, "Comma-separated dataset names for the Known aggregate");
  ev->add_option("--out", ev_out, "Output directory")->required();

  // gate-profile
  auto* gp = app.add_subcommand("gate-profile", "Per-dataset mean gate weights");
  std::string gp_model, gp_split = "eval", gp_out;
  std::vector<std::string> gp_manifests;
  gp->add_option("--model", gp_model, "MoE checkpoint")->required();
  gp->add_option("--manifests", gp_manifests, "Manifest CSVs")->required()->expected(-1);
  gp->add_option("--split", gp_split, "Split to profile")->capture_default_str();
  gp->add_option("--out", gp_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (sc->parsed()) return cmd_synth_corpus(g, sc_out, sc_domains, sc_per, sc_secs);
    if (te->parsed()) return cmd_train_expert(g, te_manifest, te_domain, te_out);
    if (tj->parsed()) return cmd_train_joint(g, tj_manifests, tj_out);
    if (tm->parsed()) return cmd_train_moe(g, tm_variant, tm_experts, tm_manifests, tm_out);
    if (ev->parsed()) {
      if (ev_model.empty() == ev_ensemble.empty()) {
        std::cerr << "evaluate: exactly one of --model / --ensemble is required\n";
        return kExitUsage;
      }
      return cmd_evaluate(g, ev_model, ev_ensemble, ev_manifests, ev_split, ev_known, ev_out);
    }
    if (gp->parsed()) return cmd_gate_profile(g, gp_model, gp_manifests, gp_split, gp_out);
  } catch (const std::exception& e) {
    std::cerr << stage << ": error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
