#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dseb/experiment.hpp"

namespace dseb::exp {

// ---- embeddings -----------------------------------------------------------------

/// Branch projection of an encoder embedding using a bottleneck checkpoint.
inline std::vector<double> project_branch(const std::vector<double>& z,
                                          const ParamSet& params,
                                          EmbeddingBranch branch) {
  if (branch == EmbeddingBranch::full) return z;
  const char* key = branch == EmbeddingBranch::demo ? "bottleneck/demo/W"
                                                    : "bottleneck/res/W";
  auto it = params.find(key);
  if (it == params.end())
    throw DataError(std::string("checkpoint has no ") + key +
                    "; demo/residual branches need a bottleneck checkpoint");
  const Tensor out =
      matmul(Tensor::matrix(1, z.size(), z), it->second);
  return out.raw();
}

inline EmbeddingsFile compute_embeddings(const ExperimentConfig& cfg,
                                         const PreparedDataset& data,
                                         const ParamSet& checkpoint,
                                         Split split, EmbeddingBranch branch,
                                         FeaturePipeline& pipeline) {
  EmbeddingsFile file;
  file.branch = branch;
  for (std::size_t idx : data.indices_of(split)) {
    const Tensor features = pipeline.eval_features(idx);
    std::vector<double> z = encode(features, checkpoint);
    file.ids.push_back(data.utterances[idx].id);
    file.rows.push_back(project_branch(z, checkpoint, branch));
  }
  (void)cfg;
  return file;
}

// ---- probes ---------------------------------------------------------------------

inline Tensor embeddings_matrix(const EmbeddingsFile& file) {
  const std::size_t n = file.rows.size(), d = file.dim();
  Tensor m = Tensor::zeros(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m.at(i, j) = file.rows[i][j];
  return m;
}

inline std::vector<int> labels_for(const PreparedDataset& data,
                                   const EmbeddingsFile& file,
                                   std::size_t attr) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < data.utterances.size(); ++i)
    index[data.utterances[i].id] = i;
  std::vector<int> labels;
  labels.reserve(file.ids.size());
  for (const std::string& id : file.ids) {
    auto it = index.find(id);
    if (it == index.end())
      throw DataError("embeddings reference unknown utterance " + id);
    labels.push_back(data.label_of(data.utterances[it->second], attr));
  }
  return labels;
}

/// Probes train on the validation-split embeddings and report on both
/// validation (in-sample) and test.
inline std::vector<ProbeReport> run_probes(const ExperimentConfig& cfg,
                                           const PreparedDataset& data,
                                           const EmbeddingsFile& val,
                                           const EmbeddingsFile& test,
                                           const std::string& seed_scope) {
  if (!val.rows.empty() && !test.rows.empty() && val.dim() != test.dim())
    throw DataError("probe: embedding dims differ between splits (" +
                    std::to_string(val.dim()) + " vs " +
                    std::to_string(test.dim()) + ")");
  const Tensor val_matrix = embeddings_matrix(val);
  const Tensor test_matrix = embeddings_matrix(test);
  std::vector<ProbeReport> reports;
  for (std::size_t attr = 0; attr < kAttributes.size(); ++attr) {
    const std::vector<int> val_labels = labels_for(data, val, attr);
    const std::vector<int> test_labels = labels_for(data, test, attr);

    ProbeConfig linear_cfg = cfg.probe;
    linear_cfg.kind = ProbeKind::linear;
    const std::uint64_t linear_seed =
        derive_seed(cfg.seed, seed_scope + "/probe/linear/" + kAttributes[attr]);
    ProbeParams linear = train_probe(val_matrix, val_labels, linear_cfg,
                                     linear_seed);

    MlpSweepResult mlp_val, mlp_test;
    {
      ProbeConfig mlp_cfg = cfg.probe;
      mlp_cfg.kind = ProbeKind::mlp;
      std::vector<std::uint64_t> scoped;
      for (std::uint64_t s : cfg.probe.seeds)
        scoped.push_back(derive_seed(
            cfg.seed, seed_scope + "/probe/mlp/" + kAttributes[attr] + "/" +
                          std::to_string(s)));
      mlp_cfg.seeds = scoped;
      mlp_val = mlp_probe_sweep(val_matrix, val_labels, val_matrix, val_labels,
                                mlp_cfg);
      mlp_test = mlp_probe_sweep(val_matrix, val_labels, test_matrix,
                                 test_labels, mlp_cfg);
    }

    auto make_report = [&](const char* split, const Tensor& m,
                           const std::vector<int>& labels,
                           const MlpSweepResult& mlp) {
      ProbeReport rep;
      rep.attribute = kAttributes[attr];
      rep.split = split;
      rep.n_eval = labels.size();
      rep.point_accuracy = evaluate_probe(linear, m, labels);
      const std::vector<int> preds = probe_predict(linear, m);
      const std::uint64_t boot_seed = derive_seed(
          cfg.seed, seed_scope + "/bootstrap/" + kAttributes[attr] + "/" + split);
      std::tie(rep.ci_low, rep.ci_high) =
          bootstrap_ci(preds, labels, cfg.probe.bootstrap_resamples,
                       cfg.probe.bootstrap_level, boot_seed);
      rep.mlp_mean = mlp.mean;
      rep.mlp_std = mlp.stddev;
      return rep;
    };
    reports.push_back(make_report("val", val_matrix, val_labels, mlp_val));
    reports.push_back(make_report("test", test_matrix, test_labels, mlp_test));
  }
  return reports;
}

inline void write_probe_csv(const fs::path& path,
                            const std::vector<ProbeReport>& reports) {
  std::ofstream out(path);
  out << "attribute,split,n_eval,linear_acc,ci_low,ci_high,mlp_mean,mlp_std\n";
  for (const auto& r : reports) {
    out << r.attribute << ',' << r.split << ',' << r.n_eval << ','
        << fmt(r.point_accuracy) << ',' << fmt(r.ci_low) << ','
        << fmt(r.ci_high) << ',' << fmt(r.mlp_mean) << ',' << fmt(r.mlp_std)
        << '\n';
  }
}

// ---- verification ----------------------------------------------------------------

inline std::vector<TrialPair> make_trials(const ExperimentConfig& cfg,
                                          const PreparedDataset& data,
                                          Split split = Split::test) {
  std::vector<TrialSpeaker> speakers;
  for (const auto& s : data.speakers) {
    auto it = data.splits.by_speaker.find(s.speaker_id);
    if (it == data.splits.by_speaker.end() || it->second != split) continue;
    TrialSpeaker ts;
    ts.speaker_id = s.speaker_id;
    ts.utterances = s.utterance_ids;
    ts.gender = to_string(s.gender);
    ts.age_group = to_string(s.age_group);
    ts.accent_group = to_string(s.accent_group);
    speakers.push_back(std::move(ts));
  }
  Rng rng = Rng(cfg.seed).child("trials");
  return build_trials(speakers, rng, cfg.impostor_ratio, cfg.genuine_cap);
}

inline void write_trials_csv(const fs::path& path,
                             const std::vector<TrialPair>& trials) {
  std::ofstream out(path);
  out << "utt_a,utt_b,is_genuine,gender,age_group,accent_group\n";
  for (const auto& t : trials) {
    out << t.utterance_a << ',' << t.utterance_b << ','
        << (t.is_genuine ? 1 : 0) << ',' << t.gender << ',' << t.age_group
        << ',' << t.accent_group << '\n';
  }
}

inline std::vector<TrialPair> read_trials_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trials file: " + path.string());
  std::vector<TrialPair> trials;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 6)
      throw DataError("malformed trials row: " + line);
    trials.push_back(TrialPair{cells[0], cells[1], cells[2] == "1", cells[3],
                               cells[4], cells[5]});
  }
  return trials;
}

struct VerificationOutputs {
  VerificationReport overall;
  std::map<std::string, VerificationReport> by_gender;
  std::map<std::string, VerificationReport> by_age;
  std::map<std::string, VerificationReport> by_accent;
};

inline VerificationOutputs run_verification(const std::vector<TrialPair>& trials,
                                            const EmbeddingsFile& embeddings) {
  std::map<std::string, std::vector<double>> lookup;
  for (std::size_t i = 0; i < embeddings.ids.size(); ++i)
    lookup[embeddings.ids[i]] = embeddings.rows[i];
  const std::vector<double> scores = score_trials(trials, lookup);
  std::vector<char> labels;
  labels.reserve(trials.size());
  for (const auto& t : trials) labels.push_back(t.is_genuine ? 1 : 0);
  VerificationOutputs out;
  out.overall = verification_report(scores, labels);
  out.by_gender = subgroup_report(trials, scores, SubgroupBy::gender);
  out.by_age = subgroup_report(trials, scores, SubgroupBy::age);
  out.by_accent = subgroup_report(trials, scores, SubgroupBy::accent);
  return out;
}

inline void write_verification_csv(const fs::path& path,
                                   const VerificationOutputs& v) {
  std::ofstream out(path);
  out << "group_by,group,roc_auc,eer,n_genuine,n_impostor\n";
  auto row = [&](const std::string& by, const std::string& group,
                 const VerificationReport& r) {
    out << by << ',' << group << ',' << fmt(r.roc_auc) << ',' << fmt(r.eer)
        << ',' << r.n_genuine << ',' << r.n_impostor << '\n';
  };
  row("overall", "all", v.overall);
  for (const auto& [g, r] : v.by_gender) row("gender", g, r);
  for (const auto& [g, r] : v.by_age) row("age", g, r);
  for (const auto& [g, r] : v.by_accent) row("accent", g, r);
}

// ---- run execution ----------------------------------------------------------------

struct RunOutcome {
  std::string name;
  bool diverged = false;
  std::string message;
};

/// Train one grid point and write its artifacts: snapshot, checkpoint,
/// curves, embeddings, probe report(s), verification. Divergence is
/// recorded in the run directory, not thrown.
inline RunOutcome execute_run(const ExperimentConfig& cfg,
                              const PreparedDataset& data,
                              const RunSpec& spec, const fs::path& run_dir,
                              const std::vector<TrialPair>& trials,
                              const ParamSet* baseline_encoder,
                              std::shared_ptr<FeaturePipeline> pipeline) {
  RunOutcome outcome;
  outcome.name = spec.name;
  fs::create_directories(run_dir);
  {
    std::ofstream snap(run_dir / "config.snapshot");
    snap << run_snapshot(cfg, spec).snapshot();
  }
  TrainingSet train_set = make_training_set(cfg, data, Split::train, pipeline);
  TrainResult result;
  try {
    switch (spec.train.mode) {
      case TrainMode::baseline:
        result = train_baseline(train_set, spec.train);
        break;
      case TrainMode::adversarial:
        result = train_adversarial(train_set, spec.train);
        break;
      case TrainMode::bottleneck: {
        if (!baseline_encoder)
          throw DataError("bottleneck run needs a pretrained encoder");
        result = train_bottleneck(train_set, *baseline_encoder, spec.train);
        break;
      }
    }
  } catch (const TrainingDiverged& e) {
    outcome.diverged = true;
    outcome.message = e.what();
    std::ofstream marker(run_dir / "diverged.txt");
    marker << e.what() << '\n';
    log_info("run " + spec.name + " diverged: " + e.what());
    return outcome;
  }
  save_checkpoint((run_dir / "checkpoint.dseb").string(), result.params);
  write_curves_csv(run_dir / "curves.csv", result.curves);

  const bool bottleneck = spec.train.mode == TrainMode::bottleneck;
  const std::vector<EmbeddingBranch> branches =
      bottleneck ? std::vector<EmbeddingBranch>{EmbeddingBranch::demo,
                                                EmbeddingBranch::residual}
                 : std::vector<EmbeddingBranch>{EmbeddingBranch::full};
  std::map<EmbeddingBranch, std::pair<EmbeddingsFile, EmbeddingsFile>> embedded;
  for (EmbeddingBranch branch : branches) {
    EmbeddingsFile val = compute_embeddings(cfg, data, result.params,
                                            Split::val, branch, *pipeline);
    EmbeddingsFile test = compute_embeddings(cfg, data, result.params,
                                             Split::test, branch, *pipeline);
    save_embeddings((run_dir / ("embeddings_val_" +
                                std::string(to_string(branch)) + ".dsemb"))
                        .string(),
                    val);
    save_embeddings((run_dir / ("embeddings_test_" +
                                std::string(to_string(branch)) + ".dsemb"))
                        .string(),
                    test);
    embedded[branch] = {std::move(val), std::move(test)};
  }
  for (EmbeddingBranch branch : branches) {
    const auto& [val, test] = embedded[branch];
    const std::string scope = spec.name + "/" + to_string(branch);
    const std::vector<ProbeReport> probes =
        run_probes(cfg, data, val, test, scope);
    const std::string suffix =
        branch == EmbeddingBranch::full
            ? std::string{}
            : "_" + std::string(to_string(branch));
    write_probe_csv(run_dir / ("probe_report" + suffix + ".csv"), probes);
  }
  // Verification scores the residual branch for bottleneck runs ("only z_res
  // is used"), the full embedding otherwise.
  const EmbeddingBranch score_branch =
      bottleneck ? EmbeddingBranch::residual : EmbeddingBranch::full;
  const VerificationOutputs verification =
      run_verification(trials, embedded[score_branch].second);
  write_verification_csv(run_dir / "verification.csv", verification);
  return outcome;
}

inline void cmd_train(const ExperimentConfig& cfg, const fs::path& out_root) {
  PreparedDataset data = load_prepared(cfg, out_root);
  RunSpec spec;
  switch (cfg.train.mode) {
    case TrainMode::baseline:
      spec = baseline_spec(cfg);
      break;
    case TrainMode::adversarial:
      spec = adversarial_spec(cfg, cfg.train.lambda_adv);
      break;
    case TrainMode::bottleneck:
      spec = bottleneck_spec(cfg, cfg.train.bottleneck_k,
                             cfg.train.lambda_triple());
      break;
  }
  const fs::path run_dir = out_root / "runs" / spec.name;
  fs::create_directories(run_dir);
  {
    std::ofstream snap(run_dir / "config.snapshot");
    snap << run_snapshot(cfg, spec).snapshot();
  }
  auto pipeline = std::make_shared<FeaturePipeline>(cfg, data);
  TrainingSet train_set = make_training_set(cfg, data, Split::train, pipeline);
  TrainResult result;
  if (spec.train.mode == TrainMode::bottleneck) {
    const fs::path baseline_ckpt =
        out_root / "runs" / "baseline" / "checkpoint.dseb";
    if (!fs::exists(baseline_ckpt))
      throw DataError("bottleneck training needs " + baseline_ckpt.string() +
                      "; train the baseline first");
    const ParamSet encoder = load_checkpoint(baseline_ckpt.string());
    result = train_bottleneck(train_set, encoder, spec.train);
  } else if (spec.train.mode == TrainMode::adversarial) {
    result = train_adversarial(train_set, spec.train);
  } else {
    result = train_baseline(train_set, spec.train);
  }
  save_checkpoint((run_dir / "checkpoint.dseb").string(), result.params);
  write_curves_csv(run_dir / "curves.csv", result.curves);
  log_info("trained " + spec.name + " -> " + run_dir.string());
}

/// Full grid: train + embed + probe + verify per point, then consolidate.
/// Returns the number of diverged grid points.
inline std::size_t cmd_sweep(const ExperimentConfig& cfg,
                             const fs::path& out_root, std::size_t jobs);

// ---- report ------------------------------------------------------------------------

namespace detail {

inline std::vector<std::map<std::string, std::string>> read_csv(
    const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) return {};
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  const std::vector<std::string> header = split(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i)
      row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

struct RunInfo {
  std::string name;
  std::string mode;
  double lambda_adv = 0.0;
  std::size_t k = 0;
  std::array<double, 3> triple = {0, 0, 0};
  bool diverged = false;
  fs::path dir;
};

inline std::vector<RunInfo> scan_runs(const fs::path& runs_dir) {
  std::vector<RunInfo> runs;
  if (!fs::exists(runs_dir)) return runs;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(runs_dir))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  for (const fs::path& dir : dirs) {
    const fs::path snapshot = dir / "config.snapshot";
    if (!fs::exists(snapshot)) continue;
    const Config snap = Config::load(snapshot.string());
    RunInfo info;
    info.name = snap.get_string("run.name", dir.filename().string());
    info.mode = snap.get_string("train.mode", "baseline");
    info.lambda_adv = snap.get_double("train.lambda_adv", 0.0);
    info.k = static_cast<std::size_t>(snap.get_int("train.k", 0));
    info.triple = {snap.get_double("train.lambda_gender", 0.0),
                   snap.get_double("train.lambda_age", 0.0),
                   snap.get_double("train.lambda_accent", 0.0)};
    info.diverged = fs::exists(dir / "diverged.txt");
    info.dir = dir;
    runs.push_back(std::move(info));
  }
  return runs;
}

/// Fixed-width rendering of a CSV-like table for report.txt.
inline std::string align_table(const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return "";
  std::vector<std::size_t> widths;
  for (const auto& row : rows) {
    if (widths.size() < row.size()) widths.resize(row.size(), 0);
    for (std::size_t i = 0; i < row.size(); ++i)
      widths[i] = std::max(widths[i], row[i].size());
  }
  std::ostringstream out;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << "  ";
      out << row[i];
      for (std::size_t pad = row[i].size(); pad < widths[i]; ++pad) out << ' ';
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace detail

/// Consolidates completed run directories into the paper-shaped tables.
/// One row per run; diverged runs keep explicit "diverged" cells.
inline void cmd_report(const ExperimentConfig& cfg, const fs::path& out_root) {
  (void)cfg;
  const std::vector<detail::RunInfo> runs =
      detail::scan_runs(out_root / "runs");
  if (runs.empty()) throw DataError("no run directories under " +
                                    (out_root / "runs").string());
  const fs::path report_dir = out_root / "report";
  fs::create_directories(report_dir);

  auto overall_verification =
      [&](const detail::RunInfo& run) -> std::optional<std::map<std::string, std::string>> {
    const fs::path file = run.dir / "verification.csv";
    if (!fs::exists(file)) return std::nullopt;
    for (const auto& row : detail::read_csv(file))
      if (row.at("group_by") == "overall") return row;
    return std::nullopt;
  };

  std::ostringstream text;

  {  // one row per run, every mode
    std::ofstream out(report_dir / "verification_overall.csv");
    out << "run,mode,lambda,k,lambda_gender,lambda_age,lambda_accent,roc_auc,"
           "eer,n_genuine,n_impostor\n";
    std::vector<std::vector<std::string>> table = {
        {"run", "mode", "roc_auc", "eer"}};
    for (const auto& run : runs) {
      std::string auc = "diverged", eer_s = "diverged", ng = "0", ni = "0";
      if (!run.diverged) {
        if (auto row = overall_verification(run)) {
          auc = row->at("roc_auc");
          eer_s = row->at("eer");
          ng = row->at("n_genuine");
          ni = row->at("n_impostor");
        }
      }
      out << run.name << ',' << run.mode << ',' << fmt_g(run.lambda_adv) << ','
          << run.k << ',' << fmt_g(run.triple[0]) << ',' << fmt_g(run.triple[1])
          << ',' << fmt_g(run.triple[2]) << ',' << auc << ',' << eer_s << ','
          << ng << ',' << ni << '\n';
      table.push_back({run.name, run.mode, auc, eer_s});
    }
    text << "== Verification (all runs) ==\n"
         << detail::align_table(table) << '\n';
  }

  {  // Table 3 shape: lambda, ROC-AUC, EER over the adversarial sweep
    std::ofstream out(report_dir / "verification_vs_lambda.csv");
    out << "lambda,roc_auc,eer\n";
    std::vector<std::vector<std::string>> table = {{"lambda", "roc_auc", "eer"}};
    std::vector<const detail::RunInfo*> adv;
    for (const auto& run : runs)
      if (run.mode == "adversarial") adv.push_back(&run);
    std::sort(adv.begin(), adv.end(), [](const auto* a, const auto* b) {
      return a->lambda_adv < b->lambda_adv;
    });
    for (const auto* run : adv) {
      std::string auc = "diverged", eer_s = "diverged";
      if (!run->diverged) {
        if (auto row = overall_verification(*run)) {
          auc = row->at("roc_auc");
          eer_s = row->at("eer");
        }
      }
      out << fmt_g(run->lambda_adv) << ',' << auc << ',' << eer_s << '\n';
      table.push_back({fmt_g(run->lambda_adv), auc, eer_s});
    }
    text << "== Verification vs adversarial strength ==\n"
         << detail::align_table(table) << '\n';
  }

  {  // Table 4 shape: probes vs lambda (test split, full embedding)
    std::ofstream out(report_dir / "probes_vs_lambda.csv");
    out << "attribute,lambda,linear_acc,ci_low,ci_high,mlp_mean,mlp_std\n";
    std::vector<std::vector<std::string>> table = {
        {"attribute", "lambda", "linear_acc", "ci", "mlp"}};
    for (const char* attr : kAttributes) {
      std::vector<const detail::RunInfo*> adv;
      for (const auto& run : runs)
        if (run.mode == "adversarial") adv.push_back(&run);
      std::sort(adv.begin(), adv.end(), [](const auto* a, const auto* b) {
        return a->lambda_adv < b->lambda_adv;
      });
      for (const auto* run : adv) {
        std::string linear = "diverged", lo = "", hi = "", mean = "", sd = "";
        if (!run->diverged && fs::exists(run->dir / "probe_report.csv")) {
          for (const auto& row : detail::read_csv(run->dir / "probe_report.csv")) {
            if (row.at("attribute") == attr && row.at("split") == "test") {
              linear = row.at("linear_acc");
              lo = row.at("ci_low");
              hi = row.at("ci_high");
              mean = row.at("mlp_mean");
              sd = row.at("mlp_std");
            }
          }
        }
        out << attr << ',' << fmt_g(run->lambda_adv) << ',' << linear << ','
            << lo << ',' << hi << ',' << mean << ',' << sd << '\n';
        table.push_back({attr, fmt_g(run->lambda_adv), linear,
                         "[" + lo + "," + hi + "]", mean + "+-" + sd});
      }
    }
    text << "== Probes vs adversarial strength (test) ==\n"
         << detail::align_table(table) << '\n';
  }

  {  // Table 5 shape: bottleneck verification grid
    std::ofstream out(report_dir / "bottleneck_verification.csv");
    out << "k,lambda_gender,lambda_age,lambda_accent,roc_auc,eer\n";
    std::vector<std::vector<std::string>> table = {
        {"k", "lambdas", "roc_auc", "eer"}};
    for (const auto& run : runs) {
      if (run.mode != "bottleneck") continue;
      std::string auc = "diverged", eer_s = "diverged";
      if (!run.diverged) {
        if (auto row = overall_verification(run)) {
          auc = row->at("roc_auc");
          eer_s = row->at("eer");
        }
      }
      out << run.k << ',' << fmt_g(run.triple[0]) << ',' << fmt_g(run.triple[1])
          << ',' << fmt_g(run.triple[2]) << ',' << auc << ',' << eer_s << '\n';
      table.push_back({std::to_string(run.k),
                       fmt_g(run.triple[0]) + "," + fmt_g(run.triple[1]) + "," +
                           fmt_g(run.triple[2]),
                       auc, eer_s});
    }
    text << "== Bottleneck verification (residual branch) ==\n"
         << detail::align_table(table) << '\n';
  }

  // Tables 6/7 shapes: per-branch linear test accuracies
  for (const char* branch : {"demo", "residual"}) {
    std::ofstream out(report_dir /
                      (std::string(branch) + "_branch_probes.csv"));
    out << "k,lambda_gender,lambda_age,lambda_accent,gender,age,accent\n";
    std::vector<std::vector<std::string>> table = {
        {"k", "lambdas", "gender", "age", "accent"}};
    for (const auto& run : runs) {
      if (run.mode != "bottleneck") continue;
      std::map<std::string, std::string> acc = {
          {"gender", "diverged"}, {"age", "diverged"}, {"accent", "diverged"}};
      const fs::path file =
          run.dir / ("probe_report_" + std::string(branch) + ".csv");
      if (!run.diverged && fs::exists(file)) {
        for (const auto& row : detail::read_csv(file))
          if (row.at("split") == "test")
            acc[row.at("attribute")] = row.at("linear_acc");
      }
      out << run.k << ',' << fmt_g(run.triple[0]) << ',' << fmt_g(run.triple[1])
          << ',' << fmt_g(run.triple[2]) << ',' << acc["gender"] << ','
          << acc["age"] << ',' << acc["accent"] << '\n';
      table.push_back({std::to_string(run.k),
                       fmt_g(run.triple[0]) + "," + fmt_g(run.triple[1]) + "," +
                           fmt_g(run.triple[2]),
                       acc["gender"], acc["age"], acc["accent"]});
    }
    text << "== " << (branch == std::string("demo") ? "Demo" : "Residual")
         << " branch probes (linear, test) ==\n"
         << detail::align_table(table) << '\n';
  }

  {  // per-run probe summary (test split)
    std::ofstream out(report_dir / "probes_overall.csv");
    out << "run,branch,attribute,linear_acc,ci_low,ci_high,mlp_mean,mlp_std,"
           "n_eval\n";
    for (const auto& run : runs) {
      if (run.diverged) continue;
      const std::vector<std::pair<std::string, std::string>> files = {
          {"full", "probe_report.csv"},
          {"demo", "probe_report_demo.csv"},
          {"residual", "probe_report_residual.csv"}};
      for (const auto& [branch, file] : files) {
        const fs::path path = run.dir / file;
        if (!fs::exists(path)) continue;
        for (const auto& row : detail::read_csv(path)) {
          if (row.at("split") != "test") continue;
          out << run.name << ',' << branch << ',' << row.at("attribute") << ','
              << row.at("linear_acc") << ',' << row.at("ci_low") << ','
              << row.at("ci_high") << ',' << row.at("mlp_mean") << ','
              << row.at("mlp_std") << ',' << row.at("n_eval") << '\n';
        }
      }
    }
  }

  {
    std::ofstream out(report_dir / "report.txt");
    out << text.str();
  }
  log_info("report written to " + report_dir.string());
}

// ---- sweep ------------------------------------------------------------------------

inline std::size_t cmd_sweep(const ExperimentConfig& cfg,
                             const fs::path& out_root, std::size_t jobs) {
  PreparedDataset data = load_prepared(cfg, out_root);
  const std::vector<RunSpec> grid = sweep_grid(cfg);
  const fs::path runs_dir = out_root / "runs";
  fs::create_directories(runs_dir);

  const std::vector<TrialPair> trials = make_trials(cfg, data);
  write_trials_csv(out_root / "trials.csv", trials);

  auto pipeline = std::make_shared<FeaturePipeline>(cfg, data);
  std::atomic<std::size_t> diverged{0};

  // The baseline runs first; bottleneck points reuse its encoder.
  RunOutcome baseline_outcome =
      execute_run(cfg, data, grid[0], runs_dir / grid[0].name, trials, nullptr,
                  pipeline);
  if (baseline_outcome.diverged) ++diverged;
  ParamSet baseline_encoder;
  const fs::path baseline_ckpt = runs_dir / grid[0].name / "checkpoint.dseb";
  if (fs::exists(baseline_ckpt))
    baseline_encoder = load_checkpoint(baseline_ckpt.string());

  std::atomic<std::size_t> next{1};
  std::mutex error_mutex;
  std::vector<std::string> errors;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= grid.size()) return;
      const RunSpec& spec = grid[i];
      try {
        if (spec.train.mode == TrainMode::bottleneck &&
            baseline_encoder.empty())
          throw DataError("baseline diverged; bottleneck point " + spec.name +
                          " has no encoder");
        RunOutcome outcome = execute_run(
            cfg, data, spec, runs_dir / spec.name, trials,
            spec.train.mode == TrainMode::bottleneck ? &baseline_encoder
                                                     : nullptr,
            pipeline);
        if (outcome.diverged) ++diverged;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        errors.push_back(spec.name + ": " + e.what());
      }
    }
  };
  const std::size_t n_workers =
      std::max<std::size_t>(1, std::min(jobs, grid.size()));
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (!errors.empty()) {
    std::string all;
    for (const auto& e : errors) all += e + "; ";
    throw DataError("sweep failures: " + all);
  }
  cmd_report(cfg, out_root);
  return diverged.load();
}

// ---- standalone embed/probe/verify --------------------------------------------------

inline void cmd_embed(const ExperimentConfig& cfg, const fs::path& out_root,
                      const std::string& run_name, Split split,
                      EmbeddingBranch branch, const fs::path& dest = {}) {
  PreparedDataset data = load_prepared(cfg, out_root);
  const fs::path run_dir = out_root / "runs" / run_name;
  const fs::path ckpt = run_dir / "checkpoint.dseb";
  if (!fs::exists(ckpt)) throw DataError("no checkpoint at " + ckpt.string());
  FeaturePipeline pipeline(cfg, data);
  const ParamSet params = load_checkpoint(ckpt.string());
  EmbeddingsFile file =
      compute_embeddings(cfg, data, params, split, branch, pipeline);
  fs::path target = dest;
  if (target.empty())
    target = run_dir / ("embeddings_" + std::string(to_string(split)) + "_" +
                        to_string(branch) + ".dsemb");
  save_embeddings(target.string(), file);
  log_info("wrote " + target.string() + " (" + std::to_string(file.rows.size()) +
           " x " + std::to_string(file.dim()) + ")");
}

inline void cmd_probe(const ExperimentConfig& cfg, const fs::path& out_root,
                      const std::string& run_name, EmbeddingBranch branch) {
  PreparedDataset data = load_prepared(cfg, out_root);
  const fs::path run_dir = out_root / "runs" / run_name;
  const std::string tag = to_string(branch);
  const fs::path val_path = run_dir / ("embeddings_val_" + tag + ".dsemb");
  const fs::path test_path = run_dir / ("embeddings_test_" + tag + ".dsemb");
  if (!fs::exists(val_path) || !fs::exists(test_path))
    throw DataError("missing embeddings for run " + run_name + " branch " +
                    tag + "; run embed first");
  const EmbeddingsFile val = load_embeddings(val_path.string());
  const EmbeddingsFile test = load_embeddings(test_path.string());
  const std::vector<ProbeReport> reports =
      run_probes(cfg, data, val, test, run_name + "/" + tag);
  const std::string suffix =
      branch == EmbeddingBranch::full ? std::string{} : "_" + tag;
  write_probe_csv(run_dir / ("probe_report" + suffix + ".csv"), reports);
  for (const auto& r : reports) {
    log_info("probe " + r.attribute + " " + r.split + ": linear " +
             fmt(r.point_accuracy) + " [" + fmt(r.ci_low) + "," +
             fmt(r.ci_high) + "], mlp " + fmt(r.mlp_mean) + "+-" +
             fmt(r.mlp_std));
  }
}

inline void cmd_verify(const ExperimentConfig& cfg, const fs::path& out_root,
                       const std::string& run_name, EmbeddingBranch branch) {
  PreparedDataset data = load_prepared(cfg, out_root);
  const fs::path run_dir = out_root / "runs" / run_name;
  const fs::path emb_path =
      run_dir / ("embeddings_test_" + std::string(to_string(branch)) + ".dsemb");
  if (!fs::exists(emb_path))
    throw DataError("missing embeddings at " + emb_path.string() +
                    "; run embed first");
  std::vector<TrialPair> trials;
  const fs::path trials_path = out_root / "trials.csv";
  if (fs::exists(trials_path)) {
    trials = read_trials_csv(trials_path);
  } else {
    trials = make_trials(cfg, data);
    write_trials_csv(trials_path, trials);
  }
  const EmbeddingsFile embeddings = load_embeddings(emb_path.string());
  const VerificationOutputs v = run_verification(trials, embeddings);
  write_verification_csv(run_dir / "verification.csv", v);
  log_info("verification: AUC " + fmt(v.overall.roc_auc) + ", EER " +
           fmt(v.overall.eer));
}

}  // namespace dseb::exp
