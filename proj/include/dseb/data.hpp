#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dseb/frontend.hpp"
#include "dseb/rng.hpp"

namespace dseb {

struct UtteranceRecord {
  std::string utterance_id;
  std::string speaker_id;
  std::string audio_path;
  std::string raw_gender;
  std::string raw_age;
  std::string raw_accent;
};

enum class Gender { Male, Female };
enum class AgeGroup { Young, Adult, Senior };
enum class AccentGroup { USA, England, Canada, AustraliaNZ, IndiaSEAsia };
enum class Split { train, val, test };
enum class AgeSchema { decade_labels, year_ranges };

inline const char* to_string(Gender g) {
  return g == Gender::Male ? "Male" : "Female";
}
inline const char* to_string(AgeGroup a) {
  switch (a) {
    case AgeGroup::Young: return "Young";
    case AgeGroup::Adult: return "Adult";
    default: return "Senior";
  }
}
inline const char* to_string(AccentGroup a) {
  switch (a) {
    case AccentGroup::USA: return "USA";
    case AccentGroup::England: return "England";
    case AccentGroup::Canada: return "Canada";
    case AccentGroup::AustraliaNZ: return "AustraliaNZ";
    default: return "IndiaSEAsia";
  }
}
inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

/// Class index layout used by every classifier in the pipeline.
inline int class_index(Gender g) { return g == Gender::Male ? 0 : 1; }
inline int class_index(AgeGroup a) { return static_cast<int>(a); }
inline int class_index(AccentGroup a) { return static_cast<int>(a); }

struct SpeakerRecord {
  std::string speaker_id;
  Gender gender = Gender::Male;
  AgeGroup age_group = AgeGroup::Adult;
  AccentGroup accent_group = AccentGroup::USA;
  std::vector<std::string> utterance_ids;
};

struct Exclusion {
  std::string speaker_id;
  std::string reason;
};

struct SplitAssignment {
  std::map<std::string, Split> by_speaker;
};

// ---- manifest parsing -------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_tsv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == '\t') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

inline std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Reads a Common-Voice-style validated.tsv. The header must name
/// client_id, path, gender, age, accents in any order; missing trailing
/// cells become empty strings, extra cells are a parse error.
inline std::vector<UtteranceRecord> parse_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("manifest: empty stream, no header row");
  const std::vector<std::string> header = detail::split_tsv_line(line);
  std::map<std::string, std::size_t> columns;
  for (std::size_t i = 0; i < header.size(); ++i)
    columns[detail::trim(header[i])] = i;
  for (const char* required : {"client_id", "path", "gender", "age", "accents"}) {
    if (!columns.count(required))
      throw std::runtime_error(std::string("manifest: missing column '") +
                               required + "'");
  }
  auto cell = [&](const std::vector<std::string>& cells, const char* name) {
    const std::size_t idx = columns.at(name);
    return idx < cells.size() ? cells[idx] : std::string{};
  };
  std::vector<UtteranceRecord> records;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    const std::vector<std::string> cells = detail::split_tsv_line(line);
    if (cells.size() > header.size())
      throw std::runtime_error("manifest: malformed row at line " +
                               std::to_string(line_number) + ": " +
                               std::to_string(cells.size()) + " cells for " +
                               std::to_string(header.size()) + " columns");
    UtteranceRecord rec;
    rec.speaker_id = cell(cells, "client_id");
    rec.audio_path = cell(cells, "path");
    rec.utterance_id = rec.audio_path;
    rec.raw_gender = cell(cells, "gender");
    rec.raw_age = cell(cells, "age");
    rec.raw_accent = cell(cells, "accents");
    records.push_back(std::move(rec));
  }
  return records;
}

// ---- label normalization ----------------------------------------------------

inline std::optional<Gender> map_gender(const std::string& raw) {
  std::string s = detail::lowercase(detail::trim(raw));
  std::replace(s.begin(), s.end(), ' ', '_');
  if (s == "male_masculine") return Gender::Male;
  if (s == "female_feminine") return Gender::Female;
  return std::nullopt;
}

/// decade_labels maps Common Voice decade tokens; year_ranges applies the
/// Young 9-28 / Adult 29-54 / Senior 55-100 boundaries to "a-b" strings.
inline std::optional<AgeGroup> map_age_group(const std::string& raw,
                                             AgeSchema schema) {
  const std::string s = detail::lowercase(detail::trim(raw));
  if (s.empty()) return std::nullopt;
  if (schema == AgeSchema::decade_labels) {
    if (s == "teens" || s == "twenties") return AgeGroup::Young;
    if (s == "thirties" || s == "fourties" || s == "forties" || s == "fifties")
      return AgeGroup::Adult;
    if (s == "sixties" || s == "seventies" || s == "eighties" || s == "nineties")
      return AgeGroup::Senior;
    return std::nullopt;
  }
  const std::size_t dash = s.find('-');
  if (dash == std::string::npos) return std::nullopt;
  int lo = 0, hi = 0;
  try {
    lo = std::stoi(s.substr(0, dash));
    hi = std::stoi(s.substr(dash + 1));
  } catch (const std::exception&) {
    return std::nullopt;
  }
  if (lo >= 9 && hi <= 28) return AgeGroup::Young;
  if (lo >= 29 && hi <= 54) return AgeGroup::Adult;
  if (lo >= 55 && hi <= 100) return AgeGroup::Senior;
  return std::nullopt;  // straddles a boundary or out of range
}

/// First matching keyword wins; table order is the priority order.
inline std::optional<AccentGroup> map_accent(const std::string& raw) {
  const std::string s = detail::lowercase(raw);
  if (s.empty()) return std::nullopt;
  static const std::vector<std::pair<std::string, AccentGroup>> table = {
      {"united states", AccentGroup::USA},
      {"us english", AccentGroup::USA},
      {"american", AccentGroup::USA},
      {"usa", AccentGroup::USA},
      {"england", AccentGroup::England},
      {"british", AccentGroup::England},
      {"received pronunciation", AccentGroup::England},
      {"canada", AccentGroup::Canada},
      {"canadian", AccentGroup::Canada},
      {"australia", AccentGroup::AustraliaNZ},
      {"new zealand", AccentGroup::AustraliaNZ},
      {"aussie", AccentGroup::AustraliaNZ},
      {"kiwi", AccentGroup::AustraliaNZ},
      {"india", AccentGroup::IndiaSEAsia},
      {"south asia", AccentGroup::IndiaSEAsia},
      {"south-east asia", AccentGroup::IndiaSEAsia},
      {"southeast asia", AccentGroup::IndiaSEAsia},
      {"pakistan", AccentGroup::IndiaSEAsia},
      {"sri lanka", AccentGroup::IndiaSEAsia},
      {"bangladesh", AccentGroup::IndiaSEAsia},
      {"singapore", AccentGroup::IndiaSEAsia},
      {"malaysia", AccentGroup::IndiaSEAsia},
      {"philippines", AccentGroup::IndiaSEAsia},
  };
  for (const auto& [keyword, group] : table) {
    if (s.find(keyword) != std::string::npos) return group;
  }
  return std::nullopt;
}

struct NormalizationResult {
  std::vector<SpeakerRecord> speakers;
  std::vector<Exclusion> exclusions;
};

/// Groups records by speaker, maps demographics, and excludes speakers that
/// fail any rule. Every excluded speaker gets exactly one log row.
inline NormalizationResult normalize_speakers(
    const std::vector<UtteranceRecord>& records,
    AgeSchema schema = AgeSchema::decade_labels) {
  std::map<std::string, std::vector<const UtteranceRecord*>> by_speaker;
  std::vector<std::string> speaker_order;
  for (const auto& rec : records) {
    auto [it, inserted] = by_speaker.try_emplace(rec.speaker_id);
    if (inserted) speaker_order.push_back(rec.speaker_id);
    it->second.push_back(&rec);
  }
  NormalizationResult result;
  for (const std::string& speaker_id : speaker_order) {
    const auto& recs = by_speaker.at(speaker_id);
    auto distinct_raw = [&](auto field) {
      std::set<std::string> values;
      for (const UtteranceRecord* r : recs) {
        const std::string v = detail::trim(r->*field);
        if (!v.empty()) values.insert(v);
      }
      return values;
    };
    const auto genders = distinct_raw(&UtteranceRecord::raw_gender);
    const auto ages = distinct_raw(&UtteranceRecord::raw_age);
    const auto accents = distinct_raw(&UtteranceRecord::raw_accent);
    if (genders.size() > 1 || ages.size() > 1 || accents.size() > 1) {
      result.exclusions.push_back({speaker_id, "conflicting_metadata"});
      continue;
    }
    const auto gender =
        genders.empty() ? std::nullopt : map_gender(*genders.begin());
    if (!gender) {
      result.exclusions.push_back({speaker_id, "gender_out_of_scope"});
      continue;
    }
    const auto age =
        ages.empty() ? std::nullopt : map_age_group(*ages.begin(), schema);
    if (!age) {
      result.exclusions.push_back({speaker_id, "age_out_of_scope"});
      continue;
    }
    const auto accent =
        accents.empty() ? std::nullopt : map_accent(*accents.begin());
    if (!accent) {
      result.exclusions.push_back({speaker_id, "accent_out_of_scope"});
      continue;
    }
    if (recs.size() < 2) {
      result.exclusions.push_back({speaker_id, "too_few_utterances"});
      continue;
    }
    SpeakerRecord sr;
    sr.speaker_id = speaker_id;
    sr.gender = *gender;
    sr.age_group = *age;
    sr.accent_group = *accent;
    for (const UtteranceRecord* r : recs)
      sr.utterance_ids.push_back(r->utterance_id);
    result.speakers.push_back(std::move(sr));
  }
  return result;
}

// ---- splitting --------------------------------------------------------------

/// Random speaker-level partition with largest-remainder rounding; ties go
/// to the earlier split (train, val, test order). Deterministic per seed.
inline SplitAssignment split_speakers(const std::vector<SpeakerRecord>& speakers,
                                      std::array<double, 3> ratios,
                                      std::uint64_t seed) {
  double ratio_sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(ratio_sum - 1.0) > 1e-9)
    throw std::invalid_argument("split_speakers: ratios must sum to 1");
  if (speakers.size() < 10)
    throw std::invalid_argument("split_speakers: need at least 10 speakers");
  std::vector<std::string> ids;
  ids.reserve(speakers.size());
  for (const auto& s : speakers) ids.push_back(s.speaker_id);
  std::sort(ids.begin(), ids.end());
  Rng rng = Rng(seed).child("split");
  rng.shuffle(ids);

  const double n = static_cast<double>(ids.size());
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = n * ratios[k];
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    remainders[k] = exact - std::floor(exact);
    assigned += counts[k];
  }
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return remainders[a] > remainders[b];
  });
  for (std::size_t k = 0; assigned < ids.size(); ++k)
    counts[order[k % 3]] += 1, ++assigned;

  SplitAssignment out;
  std::size_t cursor = 0;
  const std::array<Split, 3> splits = {Split::train, Split::val, Split::test};
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < counts[k]; ++i)
      out.by_speaker[ids[cursor++]] = splits[k];
  }
  return out;
}

// ---- summary ----------------------------------------------------------------

struct CategoryCount {
  std::string category;
  std::size_t count = 0;
  double percent = 0.0;
};

struct DemographicSummary {
  std::vector<CategoryCount> gender;
  std::vector<CategoryCount> age;
  std::vector<CategoryCount> accent;
  std::size_t total_speakers = 0;
};

inline DemographicSummary demographic_summary(
    const std::vector<SpeakerRecord>& speakers) {
  DemographicSummary summary;
  summary.total_speakers = speakers.size();
  if (speakers.empty()) return summary;
  auto tally = [&](auto categories, auto getter) {
    std::vector<CategoryCount> rows;
    for (auto cat : categories) {
      std::size_t count = 0;
      for (const auto& s : speakers)
        if (getter(s) == cat) ++count;
      if (count == 0) continue;
      rows.push_back({to_string(cat), count,
                      100.0 * static_cast<double>(count) /
                          static_cast<double>(speakers.size())});
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return a.count > b.count; });
    return rows;
  };
  summary.gender = tally(std::array{Gender::Male, Gender::Female},
                         [](const SpeakerRecord& s) { return s.gender; });
  summary.age =
      tally(std::array{AgeGroup::Young, AgeGroup::Adult, AgeGroup::Senior},
            [](const SpeakerRecord& s) { return s.age_group; });
  summary.accent = tally(
      std::array{AccentGroup::USA, AccentGroup::England, AccentGroup::Canada,
                 AccentGroup::AustraliaNZ, AccentGroup::IndiaSEAsia},
      [](const SpeakerRecord& s) { return s.accent_group; });
  return summary;
}

// ---- synthetic datasets -----------------------------------------------------

/// Planted-signal generator for desk-scale evaluation. Feature layout:
///   dim 0      gender: +-gender_direction_strength
///   dims 1..2  age: three concentric rings of radius (1+2a)*strength when
///              nonlinear_age, otherwise (a-1)*strength along dim 1
///   dims 3..7  accent: one-hot offset * accent_structure_strength
/// Speaker centroids add N(0,1) everywhere; utterances add N(0,1) on top.
struct SynthConfig {
  std::size_t n_speakers = 200;
  std::size_t utterances_per_speaker = 4;
  std::size_t feature_dim = 32;
  double gender_direction_strength = 4.0;
  double age_structure_strength = 2.0;
  double accent_structure_strength = 1.0;
  bool nonlinear_age = true;
  bool waveform_mode = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_speakers < 4)
      throw std::invalid_argument("synth: need at least 4 speakers");
    if (utterances_per_speaker < 2)
      throw std::invalid_argument("synth: need >= 2 utterances per speaker");
    if (feature_dim < 8)
      throw std::invalid_argument("synth: feature_dim must be >= 8");
    if (gender_direction_strength < 0 || age_structure_strength < 0 ||
        accent_structure_strength < 0)
      throw std::invalid_argument("synth: strengths must be >= 0");
  }
};

struct SynthUtterance {
  std::string id;
  std::size_t speaker_index = 0;
  std::vector<double> features;
  Waveform waveform;  // populated only in waveform mode
};

struct SynthDataset {
  SynthConfig config;
  std::vector<SpeakerRecord> speakers;
  std::vector<SynthUtterance> utterances;
};

namespace detail {

inline Waveform synth_tone(Gender gender, AgeGroup age, AccentGroup accent,
                           double speaker_jitter, Rng& rng) {
  // A few-harmonic tone; pitch carries the planted demographics.
  const double rate = 16000.0;
  const double f0 = 110.0 + (gender == Gender::Female ? 80.0 : 0.0) +
                    10.0 * static_cast<double>(class_index(age)) +
                    2.0 * static_cast<double>(class_index(accent)) +
                    speaker_jitter;
  const double seconds = rng.uniform(3.0, 7.0);
  const double phase = rng.uniform(0.0, 6.283185307179586);
  Waveform wav;
  wav.sample_rate = rate;
  wav.samples.resize(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < wav.samples.size(); ++i) {
    const double t = static_cast<double>(i) / rate;
    double s = 0.0;
    for (int h = 1; h <= 4; ++h)
      s += (0.25 / h) * std::sin(2.0 * 3.141592653589793 * f0 * h * t + phase * h);
    wav.samples[i] = s;
  }
  return wav;
}

}  // namespace detail

inline SynthDataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthDataset data;
  data.config = cfg;
  Rng root = Rng(cfg.seed).child("synth");
  for (std::size_t s = 0; s < cfg.n_speakers; ++s) {
    Rng srng = root.child("speaker").child(s);
    SpeakerRecord rec;
    rec.speaker_id = "synth_spk_" + std::to_string(s);
    rec.gender = srng.uniform() < 0.5 ? Gender::Male : Gender::Female;
    rec.age_group = static_cast<AgeGroup>(srng.uniform_int(3));
    rec.accent_group = static_cast<AccentGroup>(srng.uniform_int(5));

    std::vector<double> centroid(cfg.feature_dim);
    for (double& v : centroid) v = srng.normal();
    centroid[0] += (rec.gender == Gender::Male ? -1.0 : 1.0) *
                   cfg.gender_direction_strength;
    const int age = class_index(rec.age_group);
    if (cfg.nonlinear_age) {
      const double radius =
          cfg.age_structure_strength * (1.0 + 2.0 * static_cast<double>(age));
      const double angle = srng.uniform(0.0, 6.283185307179586);
      centroid[1] += radius * std::cos(angle);
      centroid[2] += radius * std::sin(angle);
    } else {
      centroid[1] +=
          cfg.age_structure_strength * (static_cast<double>(age) - 1.0);
    }
    centroid[3 + static_cast<std::size_t>(class_index(rec.accent_group))] +=
        cfg.accent_structure_strength;

    const double jitter = srng.uniform(-20.0, 20.0);
    for (std::size_t u = 0; u < cfg.utterances_per_speaker; ++u) {
      Rng urng = srng.child("utt").child(u);
      SynthUtterance utt;
      utt.id = rec.speaker_id + "_u" + std::to_string(u);
      utt.speaker_index = s;
      utt.features.resize(cfg.feature_dim);
      for (std::size_t d = 0; d < cfg.feature_dim; ++d)
        utt.features[d] = centroid[d] + urng.normal();
      if (cfg.waveform_mode) {
        utt.waveform = detail::synth_tone(rec.gender, rec.age_group,
                                          rec.accent_group, jitter, urng);
      }
      rec.utterance_ids.push_back(utt.id);
      data.utterances.push_back(std::move(utt));
    }
    data.speakers.push_back(std::move(rec));
  }
  return data;
}

}  // namespace dseb
