#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <sstream>

#include "dseb/data.hpp"
#include "dseb/probes.hpp"

using namespace dseb;
using Catch::Approx;

TEST_CASE("parse_manifest") {
  SECTION("header plus zero rows parses to an empty list") {
    std::istringstream in("client_id\tpath\tgender\tage\taccents\n");
    REQUIRE(parse_manifest(in).empty());
  }
  SECTION("fields map by header name, order free") {
    std::istringstream in(
        "path\tage\tclient_id\tgender\taccents\n"
        "a.mp3\ttwenties\tspk1\tmale_masculine\tUnited States English\n"
        "b.mp3\tthirties\tspk2\tfemale_feminine\tEngland English\n"
        "c.mp3\tfourties\tspk1\tmale_masculine\tUnited States English\n");
    auto records = parse_manifest(in);
    REQUIRE(records.size() == 3);
    REQUIRE(records[0].speaker_id == "spk1");
    REQUIRE(records[0].audio_path == "a.mp3");
    REQUIRE(records[0].utterance_id == "a.mp3");
    REQUIRE(records[1].raw_gender == "female_feminine");
    REQUIRE(records[2].raw_age == "fourties");
  }
  SECTION("missing trailing field becomes an empty accent") {
    std::istringstream in(
        "client_id\tpath\tgender\tage\taccents\n"
        "spk1\ta.mp3\tmale_masculine\ttwenties\n");
    auto records = parse_manifest(in);
    REQUIRE(records.size() == 1);
    REQUIRE(records[0].raw_accent.empty());
  }
  SECTION("missing required column is named") {
    std::istringstream in("client_id\tpath\tgender\tage\n");
    REQUIRE_THROWS_WITH(parse_manifest(in),
                        Catch::Matchers::ContainsSubstring("accents"));
  }
  SECTION("row with extra cells reports the line number") {
    std::istringstream in(
        "client_id\tpath\tgender\tage\taccents\n"
        "spk1\ta.mp3\tmale_masculine\ttwenties\tUSA\n"
        "spk2\tb.mp3\tf\tteens\tUSA\textra\tcells\n");
    REQUIRE_THROWS_WITH(parse_manifest(in),
                        Catch::Matchers::ContainsSubstring("line 3"));
  }
}

TEST_CASE("map_gender") {
  REQUIRE(map_gender("male_masculine") == Gender::Male);
  REQUIRE(map_gender("Male Masculine") == Gender::Male);
  REQUIRE(map_gender("female_feminine") == Gender::Female);
  REQUIRE_FALSE(map_gender("non-binary").has_value());
  REQUIRE_FALSE(map_gender("").has_value());
}

TEST_CASE("map_age_group") {
  SECTION("year ranges follow the Young 9-28 / Adult 29-54 / Senior 55-100 boundaries") {
    REQUIRE(map_age_group("17-28", AgeSchema::year_ranges) == AgeGroup::Young);
    REQUIRE(map_age_group("9-16", AgeSchema::year_ranges) == AgeGroup::Young);
    REQUIRE(map_age_group("29-41", AgeSchema::year_ranges) == AgeGroup::Adult);
    REQUIRE(map_age_group("42-54", AgeSchema::year_ranges) == AgeGroup::Adult);
    REQUIRE(map_age_group("55-100", AgeSchema::year_ranges) == AgeGroup::Senior);
    REQUIRE_FALSE(map_age_group("20-40", AgeSchema::year_ranges).has_value());
  }
  SECTION("decade labels, including the Common Voice 'fourties' spelling") {
    REQUIRE(map_age_group("teens", AgeSchema::decade_labels) == AgeGroup::Young);
    REQUIRE(map_age_group("twenties", AgeSchema::decade_labels) ==
            AgeGroup::Young);
    REQUIRE(map_age_group("thirties", AgeSchema::decade_labels) ==
            AgeGroup::Adult);
    REQUIRE(map_age_group("fourties", AgeSchema::decade_labels) ==
            AgeGroup::Adult);
    REQUIRE(map_age_group("fifties", AgeSchema::decade_labels) ==
            AgeGroup::Adult);
    REQUIRE(map_age_group("sixties", AgeSchema::decade_labels) ==
            AgeGroup::Senior);
    REQUIRE(map_age_group("nineties", AgeSchema::decade_labels) ==
            AgeGroup::Senior);
  }
  SECTION("unrecognized or empty tokens are excluded") {
    REQUIRE_FALSE(map_age_group("", AgeSchema::decade_labels).has_value());
    REQUIRE_FALSE(
        map_age_group("ancient", AgeSchema::decade_labels).has_value());
  }
}

TEST_CASE("map_accent") {
  REQUIRE(map_accent("United States English") == AccentGroup::USA);
  REQUIRE(map_accent("us english") == AccentGroup::USA);
  REQUIRE(map_accent("England English") == AccentGroup::England);
  REQUIRE(map_accent("Canadian English") == AccentGroup::Canada);
  REQUIRE(map_accent("Australian English, australia") ==
          AccentGroup::AustraliaNZ);
  REQUIRE(map_accent("India and South Asia (India, Pakistan, Sri Lanka)") ==
          AccentGroup::IndiaSEAsia);
  REQUIRE_FALSE(map_accent("Klingon").has_value());
  SECTION("first match wins for comma-joined multi-accent text") {
    REQUIRE(map_accent("United States English,England English") ==
            AccentGroup::USA);
  }
}

namespace {

std::string fixture_manifest() {
  return
      "client_id\tpath\tgender\tage\taccents\n"
      // good: 2 utterances, all attributes mappable
      "good\tg1.mp3\tmale_masculine\ttwenties\tUnited States English\n"
      "good\tg2.mp3\tmale_masculine\ttwenties\tUnited States English\n"
      // nonbinary gender -> excluded
      "nb\tn1.mp3\tnon-binary\tthirties\tEngland English\n"
      "nb\tn2.mp3\tnon-binary\tthirties\tEngland English\n"
      // only one utterance
      "lone\tl1.mp3\tfemale_feminine\tteens\tCanadian English\n"
      // conflicting gender metadata
      "conflict\tc1.mp3\tmale_masculine\tfifties\tEngland English\n"
      "conflict\tc2.mp3\tfemale_feminine\tfifties\tEngland English\n"
      // unmappable accent
      "mars\tm1.mp3\tfemale_feminine\tteens\tMartian\n"
      "mars\tm2.mp3\tfemale_feminine\tteens\tMartian\n"
      // missing age
      "young\ty1.mp3\tmale_masculine\t\tUnited States English\n"
      "young\ty2.mp3\tmale_masculine\t\tUnited States English\n";
}

}  // namespace

TEST_CASE("normalize_speakers") {
  std::istringstream in(fixture_manifest());
  auto records = parse_manifest(in);
  NormalizationResult result = normalize_speakers(records);

  SECTION("survivors carry all attributes and at least two utterances") {
    REQUIRE(result.speakers.size() == 1);
    const SpeakerRecord& s = result.speakers[0];
    REQUIRE(s.speaker_id == "good");
    REQUIRE(s.gender == Gender::Male);
    REQUIRE(s.age_group == AgeGroup::Young);
    REQUIRE(s.accent_group == AccentGroup::USA);
    REQUIRE(s.utterance_ids.size() == 2);
  }
  SECTION("exclusion reasons") {
    std::map<std::string, std::string> reasons;
    for (const auto& e : result.exclusions) reasons[e.speaker_id] = e.reason;
    REQUIRE(reasons.at("nb") == "gender_out_of_scope");
    REQUIRE(reasons.at("lone") == "too_few_utterances");
    REQUIRE(reasons.at("conflict") == "conflicting_metadata");
    REQUIRE(reasons.at("mars") == "accent_out_of_scope");
    REQUIRE(reasons.at("young") == "age_out_of_scope");
  }
  SECTION("exclusions plus survivors account for every speaker") {
    REQUIRE(result.exclusions.size() + result.speakers.size() == 6);
  }
}

namespace {

std::vector<SpeakerRecord> dummy_speakers(std::size_t n) {
  std::vector<SpeakerRecord> speakers(n);
  for (std::size_t i = 0; i < n; ++i) {
    speakers[i].speaker_id = "s" + std::to_string(i);
    speakers[i].utterance_ids = {"a", "b"};
  }
  return speakers;
}

}  // namespace

TEST_CASE("split_speakers") {
  SECTION("10 speakers split 8/1/1") {
    auto assignment = split_speakers(dummy_speakers(10), {0.8, 0.1, 0.1}, 1);
    std::map<Split, std::size_t> counts;
    for (const auto& [id, split] : assignment.by_speaker) counts[split] += 1;
    REQUIRE(counts[Split::train] == 8);
    REQUIRE(counts[Split::val] == 1);
    REQUIRE(counts[Split::test] == 1);
  }
  SECTION("11209 speakers split 8967/1121/1121") {
    auto assignment = split_speakers(dummy_speakers(11209), {0.8, 0.1, 0.1}, 2);
    std::map<Split, std::size_t> counts;
    for (const auto& [id, split] : assignment.by_speaker) counts[split] += 1;
    REQUIRE(counts[Split::train] == 8967);
    REQUIRE(counts[Split::val] == 1121);
    REQUIRE(counts[Split::test] == 1121);
  }
  SECTION("deterministic per seed, disjoint by construction") {
    auto a = split_speakers(dummy_speakers(100), {0.8, 0.1, 0.1}, 3);
    auto b = split_speakers(dummy_speakers(100), {0.8, 0.1, 0.1}, 3);
    REQUIRE(a.by_speaker == b.by_speaker);
    REQUIRE(a.by_speaker.size() == 100);  // each speaker exactly once
  }
  SECTION("bad ratios are rejected") {
    REQUIRE_THROWS_AS(split_speakers(dummy_speakers(10), {0.8, 0.1, 0.2}, 1),
                      std::invalid_argument);
  }
  SECTION("too few speakers rejected") {
    REQUIRE_THROWS_AS(split_speakers(dummy_speakers(9), {0.8, 0.1, 0.1}, 1),
                      std::invalid_argument);
  }
}

TEST_CASE("demographic_summary") {
  SECTION("8 male, 2 female") {
    auto speakers = dummy_speakers(10);
    for (std::size_t i = 0; i < 10; ++i)
      speakers[i].gender = i < 8 ? Gender::Male : Gender::Female;
    DemographicSummary summary = demographic_summary(speakers);
    REQUIRE(summary.gender[0].category == "Male");
    REQUIRE(summary.gender[0].percent == Approx(80.0));
    REQUIRE(summary.gender[1].percent == Approx(20.0));
  }
  SECTION("empty input gives an empty summary") {
    DemographicSummary summary = demographic_summary({});
    REQUIRE(summary.gender.empty());
    REQUIRE(summary.total_speakers == 0);
  }
  SECTION("gender counts matching the processed-corpus proportions") {
    auto speakers = dummy_speakers(11209);
    for (std::size_t i = 0; i < 11209; ++i)
      speakers[i].gender = i < 8968 ? Gender::Male : Gender::Female;
    DemographicSummary summary = demographic_summary(speakers);
    // 8968/11209 and 2241/11209, shown with two decimals
    char male[16], female[16];
    std::snprintf(male, sizeof male, "%.2f", summary.gender[0].percent);
    std::snprintf(female, sizeof female, "%.2f", summary.gender[1].percent);
    REQUIRE(std::string(male) == "80.01");
    REQUIRE(std::string(female) == "19.99");
  }
}

TEST_CASE("synth_generate") {
  SynthConfig cfg;
  cfg.n_speakers = 60;
  cfg.utterances_per_speaker = 3;
  cfg.feature_dim = 16;
  cfg.seed = 99;

  SECTION("deterministic per seed") {
    SynthDataset a = synth_generate(cfg);
    SynthDataset b = synth_generate(cfg);
    REQUIRE(a.utterances.size() == b.utterances.size());
    for (std::size_t i = 0; i < a.utterances.size(); ++i)
      REQUIRE(a.utterances[i].features == b.utterances[i].features);
  }
  SECTION("label marginals approach the uniform priors") {
    SynthConfig big = cfg;
    big.n_speakers = 600;
    SynthDataset data = synth_generate(big);
    std::size_t male = 0;
    std::array<std::size_t, 3> ages{};
    for (const auto& s : data.speakers) {
      if (s.gender == Gender::Male) ++male;
      ages[static_cast<std::size_t>(class_index(s.age_group))] += 1;
    }
    // binomial tolerance: ~4 sigma
    REQUIRE(std::abs(static_cast<double>(male) / 600.0 - 0.5) < 0.085);
    for (std::size_t a = 0; a < 3; ++a)
      REQUIRE(std::abs(static_cast<double>(ages[a]) / 600.0 - 1.0 / 3.0) <
              0.08);
  }
  SECTION("zero gender strength leaves the gender probe at chance") {
    SynthConfig flat = cfg;
    flat.n_speakers = 120;
    flat.gender_direction_strength = 0.0;
    SynthDataset data = synth_generate(flat);
    Tensor x = Tensor::zeros(data.utterances.size(), flat.feature_dim);
    std::vector<int> y;
    for (std::size_t i = 0; i < data.utterances.size(); ++i) {
      for (std::size_t c = 0; c < flat.feature_dim; ++c)
        x.at(i, c) = data.utterances[i].features[c];
      y.push_back(class_index(data.speakers[data.utterances[i].speaker_index].gender));
    }
    ProbeConfig pcfg;
    pcfg.epochs = 60;
    // train on the first half, judge on the held-out second half
    const std::size_t half = data.utterances.size() / 2;
    Tensor xtr = Tensor::zeros(half, flat.feature_dim);
    Tensor xte = Tensor::zeros(data.utterances.size() - half, flat.feature_dim);
    std::vector<int> ytr(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(half));
    std::vector<int> yte(y.begin() + static_cast<std::ptrdiff_t>(half), y.end());
    for (std::size_t i = 0; i < half; ++i)
      for (std::size_t c = 0; c < flat.feature_dim; ++c)
        xtr.at(i, c) = x.at(i, c);
    for (std::size_t i = half; i < data.utterances.size(); ++i)
      for (std::size_t c = 0; c < flat.feature_dim; ++c)
        xte.at(i - half, c) = x.at(i, c);
    ProbeParams probe = train_probe(xtr, ytr, pcfg, 3);
    const double acc = evaluate_probe(probe, xte, yte);
    REQUIRE(acc > 0.3);
    REQUIRE(acc < 0.7);
  }
  SECTION("strong planted gender is recovered by a nearest-centroid rule") {
    SynthConfig strong = cfg;
    strong.gender_direction_strength = 5.0;
    SynthDataset data = synth_generate(strong);
    // independent check: classify by the sign of dim 0
    std::size_t correct = 0;
    for (const auto& u : data.utterances) {
      const bool is_female = u.features[0] > 0.0;
      const bool truth =
          data.speakers[u.speaker_index].gender == Gender::Female;
      if (is_female == truth) ++correct;
    }
    REQUIRE(static_cast<double>(correct) /
                static_cast<double>(data.utterances.size()) >=
            0.95);
  }
  SECTION("waveform mode emits band-limited tones at 16 kHz") {
    SynthConfig wavey = cfg;
    wavey.n_speakers = 4;
    wavey.waveform_mode = true;
    SynthDataset data = synth_generate(wavey);
    for (const auto& u : data.utterances) {
      REQUIRE(u.waveform.sample_rate == 16000.0);
      REQUIRE(u.waveform.samples.size() >= 3 * 16000);
      double peak = 0;
      for (double s : u.waveform.samples) peak = std::max(peak, std::abs(s));
      REQUIRE(peak > 0.1);
      REQUIRE(peak <= 1.0);
    }
  }
  SECTION("invalid configs are rejected") {
    SynthConfig bad = cfg;
    bad.feature_dim = 4;
    REQUIRE_THROWS_AS(synth_generate(bad), std::invalid_argument);
    bad = cfg;
    bad.n_speakers = 2;
    REQUIRE_THROWS_AS(synth_generate(bad), std::invalid_argument);
  }
}
