#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dseb/config.hpp"
#include "dseb/contrastive.hpp"
#include "dseb/data.hpp"
#include "dseb/frontend.hpp"
#include "dseb/log.hpp"
#include "dseb/models.hpp"
#include "dseb/probes.hpp"
#include "dseb/serialize.hpp"
#include "dseb/verification.hpp"
#include "dseb/wav.hpp"

namespace dseb::exp {

namespace fs = std::filesystem;

/// Input or schema problem; the CLI maps this to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

inline std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::uint64_t derive_seed(std::uint64_t base, const std::string& label) {
  return Rng(base).child(label).next_u64();
}

// ---- resolved configuration --------------------------------------------------

struct ExperimentConfig {
  Config raw;
  std::uint64_t seed = 42;

  std::string dataset_kind = "synth";  // synth | manifest
  std::string manifest_path;
  std::string audio_root;
  AgeSchema age_schema = AgeSchema::decade_labels;
  SynthConfig synth;

  FrontendConfig frontend;
  bool cache_features = false;
  AugmentationConfig augment;

  TrainConfig train;  // per-run copies get mode-specific overrides
  std::array<double, 3> split_ratios = {0.8, 0.1, 0.1};

  std::vector<double> sweep_lambdas = {0.2, 0.5, 1.0, 2.0, 5.0};
  std::vector<std::size_t> sweep_ks = {32, 64, 76, 88, 100};
  std::vector<std::array<double, 3>> sweep_triples = {
      {0.01, 0.01, 0.01}, {0.1, 0.01, 0.01}, {0.5, 0.05, 0.05}};

  ProbeConfig probe;
  double impostor_ratio = 1.0;
  std::size_t genuine_cap = 10;

  bool vector_mode() const {
    return dataset_kind == "synth" && !synth.waveform_mode;
  }
};

inline ExperimentConfig resolve_config(
    const Config& raw, std::optional<std::uint64_t> seed_override = {}) {
  ExperimentConfig cfg;
  cfg.raw = raw;
  cfg.seed = seed_override ? *seed_override
                           : static_cast<std::uint64_t>(
                                 raw.get_int("seed", 42));
  cfg.raw.set("seed", std::to_string(cfg.seed));

  cfg.dataset_kind = raw.get_string("dataset.kind", "synth");
  if (cfg.dataset_kind != "synth" && cfg.dataset_kind != "manifest")
    throw DataError("dataset.kind must be synth or manifest");
  cfg.manifest_path = raw.get_string("dataset.manifest", "");
  cfg.audio_root = raw.get_string("dataset.audio_root", "");
  const std::string schema = raw.get_string("dataset.age_schema", "decade_labels");
  if (schema == "decade_labels") {
    cfg.age_schema = AgeSchema::decade_labels;
  } else if (schema == "year_ranges") {
    cfg.age_schema = AgeSchema::year_ranges;
  } else {
    throw DataError("dataset.age_schema must be decade_labels or year_ranges");
  }

  cfg.synth.n_speakers = static_cast<std::size_t>(
      raw.get_int("synth.n_speakers", 200));
  cfg.synth.utterances_per_speaker = static_cast<std::size_t>(
      raw.get_int("synth.utterances_per_speaker", 4));
  cfg.synth.feature_dim =
      static_cast<std::size_t>(raw.get_int("synth.feature_dim", 32));
  cfg.synth.gender_direction_strength =
      raw.get_double("synth.gender_direction_strength", 4.0);
  cfg.synth.age_structure_strength =
      raw.get_double("synth.age_structure_strength", 2.0);
  cfg.synth.accent_structure_strength =
      raw.get_double("synth.accent_structure_strength", 1.0);
  cfg.synth.nonlinear_age = raw.get_bool("synth.nonlinear_age", true);
  cfg.synth.waveform_mode = raw.get_bool("synth.waveform_mode", false);
  cfg.synth.seed = derive_seed(cfg.seed, "synth");

  cfg.frontend.target_rate = raw.get_double("frontend.target_rate", 16000.0);
  cfg.frontend.window_ms = raw.get_double("frontend.window_ms", 25.0);
  cfg.frontend.hop_ms = raw.get_double("frontend.hop_ms", 10.0);
  cfg.frontend.n_mels =
      static_cast<std::size_t>(raw.get_int("frontend.n_mels", 64));
  cfg.frontend.clip_seconds = raw.get_double("frontend.clip_seconds", 6.0);
  cfg.frontend.log_floor = raw.get_double("frontend.log_floor", 1e-10);
  cfg.frontend.mvn_per_band = raw.get_bool("frontend.mvn_per_band", false);
  cfg.cache_features = raw.get_bool("frontend.cache", false);

  cfg.augment.noise_std = raw.get_double("augment.noise_std", 0.01);
  cfg.augment.gain_low = raw.get_double("augment.gain_low", 0.7);
  cfg.augment.gain_high = raw.get_double("augment.gain_high", 1.3);
  cfg.augment.clip_seconds = cfg.frontend.clip_seconds;

  TrainConfig& t = cfg.train;
  const std::string mode = raw.get_string("train.mode", "baseline");
  if (mode == "baseline") {
    t.mode = TrainMode::baseline;
  } else if (mode == "adversarial") {
    t.mode = TrainMode::adversarial;
  } else if (mode == "bottleneck") {
    t.mode = TrainMode::bottleneck;
  } else {
    throw DataError("train.mode must be baseline, adversarial or bottleneck");
  }
  t.lambda_adv = raw.get_double("train.lambda_adv", 1.0);
  t.bottleneck_k = static_cast<std::size_t>(raw.get_int("train.k", 32));
  t.lambda_gender = raw.get_double("train.lambda_gender", 0.01);
  t.lambda_age = raw.get_double("train.lambda_age", 0.01);
  t.lambda_accent = raw.get_double("train.lambda_accent", 0.01);
  t.covariance_weight = raw.get_double("train.covariance_weight", 1.0);
  t.freeze_encoder = raw.get_bool("train.freeze_encoder", true);
  t.learning_rate = raw.get_double("train.learning_rate", 0.0);
  t.batch_size = static_cast<std::size_t>(raw.get_int("train.batch_size", 64));
  t.epochs = static_cast<std::size_t>(raw.get_int("train.epochs", 10));
  t.temperature = raw.get_double("train.temperature", 0.5);
  t.grad_clip_norm = raw.get_double("train.grad_clip_norm", 0.0);
  t.dims.hidden = static_cast<std::size_t>(raw.get_int("model.hidden", 256));
  t.dims.embed_dim =
      static_cast<std::size_t>(raw.get_int("model.embed_dim", 128));
  t.dims.proj_hidden =
      static_cast<std::size_t>(raw.get_int("model.proj_hidden", 128));
  t.dims.proj_out = static_cast<std::size_t>(raw.get_int("model.proj_out", 64));
  t.dims.adv_hidden =
      static_cast<std::size_t>(raw.get_int("model.adv_hidden", 64));
  t.dims.input_dim = cfg.vector_mode() ? cfg.synth.feature_dim
                                       : cfg.frontend.n_mels;

  {
    auto lams = raw.get_double_list("sweep.lambdas", {0.2, 0.5, 1.0, 2.0, 5.0});
    cfg.sweep_lambdas.assign(lams.begin(), lams.end());
    cfg.sweep_ks.clear();
    for (long long k : raw.get_int_list("sweep.ks", {32, 64, 76, 88, 100}))
      cfg.sweep_ks.push_back(static_cast<std::size_t>(k));
    cfg.sweep_triples = raw.get_triple_list(
        "sweep.triples",
        {{0.01, 0.01, 0.01}, {0.1, 0.01, 0.01}, {0.5, 0.05, 0.05}});
  }

  cfg.probe.mlp_hidden =
      static_cast<std::size_t>(raw.get_int("probe.mlp_hidden", 128));
  cfg.probe.learning_rate = raw.get_double("probe.learning_rate", 0.01);
  cfg.probe.epochs = static_cast<std::size_t>(raw.get_int("probe.epochs", 100));
  cfg.probe.batch_size =
      static_cast<std::size_t>(raw.get_int("probe.batch_size", 64));
  cfg.probe.bootstrap_resamples = static_cast<std::size_t>(
      raw.get_int("probe.bootstrap_resamples", 1000));
  {
    auto seeds = raw.get_int_list("probe.seeds", {1, 2, 3, 4, 5});
    cfg.probe.seeds.clear();
    for (long long s : seeds)
      cfg.probe.seeds.push_back(static_cast<std::uint64_t>(s));
  }

  cfg.impostor_ratio = raw.get_double("verify.impostor_ratio", 1.0);
  cfg.genuine_cap =
      static_cast<std::size_t>(raw.get_int("verify.genuine_cap", 10));
  return cfg;
}

// ---- prepared datasets --------------------------------------------------------

struct PreparedUtterance {
  std::string id;
  std::size_t speaker_index = 0;
  Split split = Split::train;
  std::vector<double> features;  // vector mode
  std::string audio_path;        // audio mode
};

struct PreparedDataset {
  std::vector<SpeakerRecord> speakers;
  std::vector<Exclusion> exclusions;
  SplitAssignment splits;
  std::vector<PreparedUtterance> utterances;
  bool vector_mode = true;
  std::size_t feature_dim = 0;

  const SpeakerRecord& speaker_of(const PreparedUtterance& u) const {
    return speakers[u.speaker_index];
  }

  std::vector<std::size_t> indices_of(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < utterances.size(); ++i)
      if (utterances[i].split == split) out.push_back(i);
    return out;
  }

  int label_of(const PreparedUtterance& u, std::size_t attr) const {
    const SpeakerRecord& s = speaker_of(u);
    return attr == 0   ? class_index(s.gender)
           : attr == 1 ? class_index(s.age_group)
                       : class_index(s.accent_group);
  }
};

namespace detail {

inline std::string sanitize_filename(const std::string& id) {
  std::string out = id;
  for (char& c : out)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ||
          c == '.'))
      c = '_';
  return out;
}

}  // namespace detail

/// Assemble the dataset in memory: synth generation or manifest
/// normalization, then a speaker-disjoint split.
inline PreparedDataset build_dataset(const ExperimentConfig& cfg,
                                     const fs::path& prepared_dir = {}) {
  PreparedDataset data;
  if (cfg.dataset_kind == "synth") {
    SynthDataset synth = synth_generate(cfg.synth);
    data.speakers = synth.speakers;
    data.vector_mode = !cfg.synth.waveform_mode;
    data.feature_dim = cfg.synth.feature_dim;
    std::map<std::string, std::size_t> speaker_index;
    for (std::size_t i = 0; i < data.speakers.size(); ++i)
      speaker_index[data.speakers[i].speaker_id] = i;
    data.splits =
        split_speakers(data.speakers, cfg.split_ratios, derive_seed(cfg.seed, "split"));
    for (auto& utt : synth.utterances) {
      PreparedUtterance pu;
      pu.id = utt.id;
      pu.speaker_index = utt.speaker_index;
      pu.split = data.splits.by_speaker.at(
          data.speakers[utt.speaker_index].speaker_id);
      if (cfg.synth.waveform_mode) {
        const std::string name = detail::sanitize_filename(utt.id) + ".wav";
        pu.audio_path = (fs::path("audio") / name).string();
        if (!prepared_dir.empty()) {
          fs::create_directories(prepared_dir / "audio");
          write_wav((prepared_dir / pu.audio_path).string(), utt.waveform);
        }
      } else {
        pu.features = std::move(utt.features);
      }
      data.utterances.push_back(std::move(pu));
    }
    return data;
  }

  if (cfg.manifest_path.empty())
    throw DataError("dataset.manifest is required for manifest datasets");
  std::ifstream in(cfg.manifest_path);
  if (!in) throw DataError("cannot open manifest: " + cfg.manifest_path);
  std::vector<UtteranceRecord> records;
  try {
    records = parse_manifest(in);
  } catch (const std::exception& e) {
    throw DataError(cfg.manifest_path + ": " + e.what());
  }
  NormalizationResult norm = normalize_speakers(records, cfg.age_schema);
  data.speakers = std::move(norm.speakers);
  data.exclusions = std::move(norm.exclusions);
  data.vector_mode = false;
  data.splits =
      split_speakers(data.speakers, cfg.split_ratios, derive_seed(cfg.seed, "split"));
  std::map<std::string, std::pair<std::size_t, const UtteranceRecord*>> by_id;
  for (const auto& rec : records) by_id[rec.utterance_id] = {0, &rec};
  for (std::size_t s = 0; s < data.speakers.size(); ++s) {
    for (const std::string& utt_id : data.speakers[s].utterance_ids) {
      const UtteranceRecord* rec = by_id.at(utt_id).second;
      PreparedUtterance pu;
      pu.id = utt_id;
      pu.speaker_index = s;
      pu.split = data.splits.by_speaker.at(data.speakers[s].speaker_id);
      pu.audio_path = cfg.audio_root.empty()
                          ? rec->audio_path
                          : (fs::path(cfg.audio_root) / rec->audio_path).string();
      data.utterances.push_back(std::move(pu));
    }
  }
  return data;
}

// ---- prepared directory I/O ----------------------------------------------------

inline void write_table_1_summary(std::ostream& out,
                                  const DemographicSummary& summary) {
  out << "Category            Speakers   Percent\n";
  auto section = [&](const char* title, const std::vector<CategoryCount>& rows) {
    out << title << "\n";
    for (const auto& row : rows) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "  %-18s %8zu   %6.2f\n",
                    row.category.c_str(), row.count, row.percent);
      out << buf;
    }
  };
  section("Gender", summary.gender);
  section("Age Group", summary.age);
  section("Accent Group", summary.accent);
  out << "Total speakers: " << summary.total_speakers << "\n";
}

inline void save_prepared(const PreparedDataset& data,
                          const fs::path& prepared_dir) {
  fs::create_directories(prepared_dir);
  {
    std::ofstream out(prepared_dir / "speakers.tsv");
    out << "speaker_id\tgender\tage_group\taccent_group\tn_utterances\n";
    for (const auto& s : data.speakers) {
      out << s.speaker_id << '\t' << to_string(s.gender) << '\t'
          << to_string(s.age_group) << '\t' << to_string(s.accent_group) << '\t'
          << s.utterance_ids.size() << '\n';
    }
  }
  {
    std::ofstream out(prepared_dir / "exclusions.tsv");
    out << "speaker_id\treason\n";
    for (const auto& e : data.exclusions)
      out << e.speaker_id << '\t' << e.reason << '\n';
  }
  {
    std::ofstream out(prepared_dir / "splits.tsv");
    out << "speaker_id\tsplit\n";
    for (const auto& [id, split] : data.splits.by_speaker)
      out << id << '\t' << to_string(split) << '\n';
  }
  {
    std::ofstream out(prepared_dir / "utterances.tsv");
    out << "utterance_id\tspeaker_id\tsplit\taudio_path\n";
    for (const auto& u : data.utterances) {
      out << u.id << '\t' << data.speaker_of(u).speaker_id << '\t'
          << to_string(u.split) << '\t' << u.audio_path << '\n';
    }
  }
  if (data.vector_mode) {
    EmbeddingsFile features;
    features.branch = EmbeddingBranch::full;
    for (const auto& u : data.utterances) {
      features.ids.push_back(u.id);
      features.rows.push_back(u.features);
    }
    save_embeddings((prepared_dir / "features.dsemb").string(), features);
  }
  {
    std::ofstream out(prepared_dir / "summary.txt");
    write_table_1_summary(out, demographic_summary(data.speakers));
  }
}

inline PreparedDataset load_prepared(const ExperimentConfig& cfg,
                                     const fs::path& out_root) {
  const fs::path prepared_dir = out_root / "prepared";
  if (!fs::exists(prepared_dir / "speakers.tsv"))
    throw DataError("prepared data not found under " + prepared_dir.string() +
                    "; run prepare first");
  PreparedDataset data;
  data.vector_mode = cfg.vector_mode();
  auto read_tsv = [](const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot open " + p.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      rows.push_back(dseb::detail::split_tsv_line(line));
    }
    return rows;
  };
  std::map<std::string, std::size_t> speaker_index;
  for (const auto& row : read_tsv(prepared_dir / "speakers.tsv")) {
    SpeakerRecord s;
    s.speaker_id = row[0];
    s.gender = row[1] == "Male" ? Gender::Male : Gender::Female;
    s.age_group = row[2] == "Young"   ? AgeGroup::Young
                  : row[2] == "Adult" ? AgeGroup::Adult
                                      : AgeGroup::Senior;
    const std::array<AccentGroup, 5> accents = {
        AccentGroup::USA, AccentGroup::England, AccentGroup::Canada,
        AccentGroup::AustraliaNZ, AccentGroup::IndiaSEAsia};
    s.accent_group = AccentGroup::USA;
    for (AccentGroup a : accents)
      if (row[3] == to_string(a)) s.accent_group = a;
    speaker_index[s.speaker_id] = data.speakers.size();
    data.speakers.push_back(std::move(s));
  }
  for (const auto& row : read_tsv(prepared_dir / "splits.tsv")) {
    const Split split = row[1] == "train"  ? Split::train
                        : row[1] == "val" ? Split::val
                                          : Split::test;
    data.splits.by_speaker[row[0]] = split;
  }
  std::map<std::string, std::vector<double>> features;
  if (data.vector_mode) {
    EmbeddingsFile f =
        load_embeddings((prepared_dir / "features.dsemb").string());
    for (std::size_t i = 0; i < f.ids.size(); ++i)
      features[f.ids[i]] = f.rows[i];
    data.feature_dim = f.dim();
  }
  for (const auto& row : read_tsv(prepared_dir / "utterances.tsv")) {
    PreparedUtterance u;
    u.id = row[0];
    auto it = speaker_index.find(row[1]);
    if (it == speaker_index.end())
      throw DataError("utterances.tsv references unknown speaker " + row[1]);
    u.speaker_index = it->second;
    u.split = row[2] == "train"  ? Split::train
              : row[2] == "val" ? Split::val
                                : Split::test;
    if (row.size() > 3) u.audio_path = row[3];
    if (data.vector_mode) {
      auto fit = features.find(u.id);
      if (fit == features.end())
        throw DataError("features.dsemb is missing utterance " + u.id);
      u.features = fit->second;
    } else if (!u.audio_path.empty() && u.audio_path.rfind("audio/", 0) == 0) {
      u.audio_path = (prepared_dir / u.audio_path).string();
    }
    data.speakers[u.speaker_index].utterance_ids.push_back(u.id);
    data.utterances.push_back(std::move(u));
  }
  return data;
}

inline void cmd_prepare(const ExperimentConfig& cfg, const fs::path& out_root) {
  const fs::path prepared_dir = out_root / "prepared";
  fs::create_directories(prepared_dir);
  PreparedDataset data = build_dataset(cfg, prepared_dir);
  save_prepared(data, prepared_dir);
  std::ostringstream summary;
  write_table_1_summary(summary, demographic_summary(data.speakers));
  std::cout << summary.str();
  log_info("prepared " + std::to_string(data.speakers.size()) + " speakers, " +
           std::to_string(data.utterances.size()) + " utterances, " +
           std::to_string(data.exclusions.size()) + " exclusions");
}

// ---- feature pipelines ---------------------------------------------------------

/// Evaluation-time crop offsets derive from the utterance id alone, so eval
/// features are identical across runs and seeds (and cacheable).
inline constexpr std::uint64_t kEvalCropSeed = 0x6576616cULL;

class FeaturePipeline {
 public:
  FeaturePipeline(const ExperimentConfig& cfg, const PreparedDataset& data)
      : cfg_(cfg), data_(data) {}

  Tensor eval_features(std::size_t index) const {
    const PreparedUtterance& u = data_.utterances[index];
    if (data_.vector_mode)
      return Tensor::matrix(1, u.features.size(), u.features);
    Rng rng = Rng(kEvalCropSeed).child(u.id);
    const Waveform& wav = waveform(index);
    Waveform clipped = crop_or_pad(wav, cfg_.frontend.clip_seconds, rng);
    return mvn_normalize(log_mel(clipped, cfg_.frontend),
                         cfg_.frontend.mvn_per_band)
        .frames;
  }

  std::pair<Tensor, Tensor> training_views(std::size_t index, Rng& rng) const {
    const PreparedUtterance& u = data_.utterances[index];
    if (data_.vector_mode) {
      auto noisy = [&](Rng& r) {
        std::vector<double> v = u.features;
        if (cfg_.augment.noise_std > 0.0)
          for (double& x : v) x += cfg_.augment.noise_std * r.normal();
        const std::size_t dim = v.size();
        return Tensor::matrix(1, dim, std::move(v));
      };
      Tensor a = noisy(rng);
      Tensor b = noisy(rng);
      return {std::move(a), std::move(b)};
    }
    const Waveform& wav = waveform(index);
    auto [va, vb] = augment_pair(wav, cfg_.augment, rng);
    Tensor fa = mvn_normalize(log_mel(va, cfg_.frontend),
                              cfg_.frontend.mvn_per_band)
                    .frames;
    Tensor fb = mvn_normalize(log_mel(vb, cfg_.frontend),
                              cfg_.frontend.mvn_per_band)
                    .frames;
    return {std::move(fa), std::move(fb)};
  }

 private:
  const Waveform& waveform(std::size_t index) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = waveforms_.find(index);
    if (it != waveforms_.end()) return it->second;
    const PreparedUtterance& u = data_.utterances[index];
    Waveform wav = read_wav(u.audio_path);
    wav = resample(wav, cfg_.frontend.target_rate);
    return waveforms_.emplace(index, std::move(wav)).first->second;
  }

  const ExperimentConfig& cfg_;
  const PreparedDataset& data_;
  mutable std::map<std::size_t, Waveform> waveforms_;
  mutable std::mutex mutex_;
};

/// Training-facing view over one split. Holds the pipeline by shared_ptr so
/// the closures stay valid.
inline TrainingSet make_training_set(
    const ExperimentConfig& cfg, const PreparedDataset& data, Split split,
    std::shared_ptr<FeaturePipeline> pipeline = nullptr) {
  if (!pipeline) pipeline = std::make_shared<FeaturePipeline>(cfg, data);
  TrainingSet set;
  const std::vector<std::size_t> indices = data.indices_of(split);
  for (std::size_t idx : indices) {
    const PreparedUtterance& u = data.utterances[idx];
    TrainingSet::Item item;
    item.id = u.id;
    item.gender = data.label_of(u, 0);
    item.age = data.label_of(u, 1);
    item.accent = data.label_of(u, 2);
    set.items.push_back(std::move(item));
  }
  auto index_map = std::make_shared<std::vector<std::size_t>>(indices);
  set.views = [pipeline, index_map](std::size_t i, Rng& rng) {
    return pipeline->training_views((*index_map)[i], rng);
  };
  set.eval_features = [pipeline, index_map](std::size_t i, Rng&) {
    return pipeline->eval_features((*index_map)[i]);
  };
  return set;
}

// ---- run grid -------------------------------------------------------------------

struct RunSpec {
  std::string name;
  TrainConfig train;
};

inline RunSpec baseline_spec(const ExperimentConfig& cfg) {
  RunSpec spec;
  spec.name = "baseline";
  spec.train = cfg.train;
  spec.train.mode = TrainMode::baseline;
  spec.train.seed = derive_seed(cfg.seed, "run/baseline");
  return spec;
}

inline RunSpec adversarial_spec(const ExperimentConfig& cfg, double lambda) {
  RunSpec spec;
  spec.name = "adversarial_lambda_" + fmt_g(lambda);
  spec.train = cfg.train;
  spec.train.mode = TrainMode::adversarial;
  spec.train.lambda_adv = lambda;
  spec.train.seed = derive_seed(cfg.seed, "run/" + spec.name);
  return spec;
}

inline RunSpec bottleneck_spec(const ExperimentConfig& cfg, std::size_t k,
                               const std::array<double, 3>& triple) {
  RunSpec spec;
  spec.name = "bottleneck_k" + std::to_string(k) + "_" + fmt_g(triple[0]) +
              "_" + fmt_g(triple[1]) + "_" + fmt_g(triple[2]);
  spec.train = cfg.train;
  spec.train.mode = TrainMode::bottleneck;
  spec.train.bottleneck_k = k;
  spec.train.lambda_gender = triple[0];
  spec.train.lambda_age = triple[1];
  spec.train.lambda_accent = triple[2];
  spec.train.seed = derive_seed(cfg.seed, "run/" + spec.name);
  return spec;
}

/// Grid = {baseline} + {adversarial x lambda} + {bottleneck x k x triple}.
inline std::vector<RunSpec> sweep_grid(const ExperimentConfig& cfg) {
  std::vector<RunSpec> grid;
  grid.push_back(baseline_spec(cfg));
  for (double lambda : cfg.sweep_lambdas)
    grid.push_back(adversarial_spec(cfg, lambda));
  for (std::size_t k : cfg.sweep_ks)
    for (const auto& triple : cfg.sweep_triples)
      grid.push_back(bottleneck_spec(cfg, k, triple));
  return grid;
}

inline Config run_snapshot(const ExperimentConfig& cfg, const RunSpec& spec) {
  Config snap = cfg.raw;
  const char* mode = spec.train.mode == TrainMode::baseline ? "baseline"
                     : spec.train.mode == TrainMode::adversarial
                         ? "adversarial"
                         : "bottleneck";
  snap.set("train.mode", mode);
  snap.set("train.lambda_adv", fmt_g(spec.train.lambda_adv));
  snap.set("train.k", std::to_string(spec.train.bottleneck_k));
  snap.set("train.lambda_gender", fmt_g(spec.train.lambda_gender));
  snap.set("train.lambda_age", fmt_g(spec.train.lambda_age));
  snap.set("train.lambda_accent", fmt_g(spec.train.lambda_accent));
  snap.set("run.name", spec.name);
  snap.set("run.seed", std::to_string(spec.train.seed));
  return snap;
}

inline void write_curves_csv(const fs::path& path,
                             const std::vector<EpochLosses>& curves) {
  std::ofstream out(path);
  out << "epoch,total,ntxent,adversarial_ce,demo_ce,residual_ce,covariance\n";
  for (const auto& e : curves) {
    out << e.epoch << ',' << fmt(e.total, 6) << ',' << fmt(e.ntxent, 6) << ','
        << fmt(e.adversarial_ce, 6) << ',' << fmt(e.demo_ce, 6) << ','
        << fmt(e.residual_ce, 6) << ',' << fmt(e.covariance, 6) << '\n';
  }
}

}  // namespace dseb::exp
