#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dseb/autodiff.hpp"
#include "dseb/rng.hpp"

namespace dseb {

/// One verification trial. Subgroup tags come from speaker a (the first
/// utterance's speaker).
struct TrialPair {
  std::string utterance_a;
  std::string utterance_b;
  bool is_genuine = false;
  std::string gender;
  std::string age_group;
  std::string accent_group;
};

struct VerificationReport {
  double roc_auc = 0.0;
  double eer = 0.0;
  std::size_t n_genuine = 0;
  std::size_t n_impostor = 0;
};

/// Speaker view used for trial construction.
struct TrialSpeaker {
  std::string speaker_id;
  std::vector<std::string> utterances;
  std::string gender;
  std::string age_group;
  std::string accent_group;
};

/// All within-speaker pairs up to genuine_cap per speaker, plus uniformly
/// sampled cross-speaker impostor pairs at impostor_ratio times the genuine
/// count. Deterministic per rng stream.
inline std::vector<TrialPair> build_trials(
    const std::vector<TrialSpeaker>& speakers, Rng& rng,
    double impostor_ratio = 1.0, std::size_t genuine_cap = 10) {
  if (speakers.size() < 2)
    throw std::invalid_argument("build_trials: need at least 2 speakers");
  for (const auto& s : speakers) {
    if (s.utterances.size() < 2)
      throw std::invalid_argument("build_trials: speaker " + s.speaker_id +
                                  " has fewer than 2 utterances");
  }
  std::vector<TrialPair> trials;
  for (const auto& s : speakers) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < s.utterances.size(); ++i)
      for (std::size_t j = i + 1; j < s.utterances.size(); ++j)
        pairs.emplace_back(i, j);
    if (pairs.size() > genuine_cap) {
      rng.shuffle(pairs);
      pairs.resize(genuine_cap);
      std::sort(pairs.begin(), pairs.end());
    }
    for (const auto& [i, j] : pairs) {
      trials.push_back(TrialPair{s.utterances[i], s.utterances[j], true,
                                 s.gender, s.age_group, s.accent_group});
    }
  }
  const std::size_t n_genuine = trials.size();
  const auto wanted = static_cast<std::size_t>(
      std::llround(impostor_ratio * static_cast<double>(n_genuine)));
  std::set<std::pair<std::string, std::string>> seen;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 200 * (wanted + 1);
  while (seen.size() < wanted && attempts < max_attempts) {
    ++attempts;
    const std::size_t sa = rng.uniform_int(speakers.size());
    const std::size_t sb = rng.uniform_int(speakers.size());
    if (sa == sb) continue;
    const auto& a = speakers[sa];
    const auto& b = speakers[sb];
    const std::string& ua = a.utterances[rng.uniform_int(a.utterances.size())];
    const std::string& ub = b.utterances[rng.uniform_int(b.utterances.size())];
    auto key = ua < ub ? std::make_pair(ua, ub) : std::make_pair(ub, ua);
    if (!seen.insert(key).second) continue;
    trials.push_back(
        TrialPair{ua, ub, false, a.gender, a.age_group, a.accent_group});
  }
  return trials;
}

/// Mann-Whitney statistic: P(genuine > impostor) + 0.5 P(equal), over all
/// genuine x impostor pairs. Integer pair counting, so it matches brute
/// force exactly.
inline double roc_auc(const std::vector<double>& scores,
                      const std::vector<char>& is_genuine) {
  if (scores.size() != is_genuine.size())
    throw std::invalid_argument("roc_auc: size mismatch");
  std::vector<double> genuine, impostor;
  for (std::size_t i = 0; i < scores.size(); ++i)
    (is_genuine[i] ? genuine : impostor).push_back(scores[i]);
  if (genuine.empty() || impostor.empty())
    throw std::invalid_argument("roc_auc: need both genuine and impostor scores");
  std::sort(impostor.begin(), impostor.end());
  std::uint64_t wins2 = 0;  // 2*wins + ties
  for (double g : genuine) {
    const auto lo = std::lower_bound(impostor.begin(), impostor.end(), g);
    const auto hi = std::upper_bound(impostor.begin(), impostor.end(), g);
    const auto below = static_cast<std::uint64_t>(lo - impostor.begin());
    const auto ties = static_cast<std::uint64_t>(hi - lo);
    wins2 += 2 * below + ties;
  }
  return static_cast<double>(wins2) /
         (2.0 * static_cast<double>(genuine.size()) *
          static_cast<double>(impostor.size()));
}

/// Equal error rate with acceptance rule score >= threshold. Thresholds
/// sweep the distinct scores; the FAR/FRR crossing is linearly interpolated
/// between adjacent sweep points, and an exact tie returns the common value.
inline double eer(const std::vector<double>& scores,
                  const std::vector<char>& is_genuine) {
  if (scores.size() != is_genuine.size())
    throw std::invalid_argument("eer: size mismatch");
  std::vector<double> genuine, impostor;
  for (std::size_t i = 0; i < scores.size(); ++i)
    (is_genuine[i] ? genuine : impostor).push_back(scores[i]);
  if (genuine.empty() || impostor.empty())
    throw std::invalid_argument("eer: need both genuine and impostor scores");
  std::sort(genuine.begin(), genuine.end());
  std::sort(impostor.begin(), impostor.end());
  std::vector<double> thresholds(scores);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  const double ng = static_cast<double>(genuine.size());
  const double ni = static_cast<double>(impostor.size());
  auto far_at = [&](double t) {
    // impostors accepted: score >= t
    const auto idx = std::lower_bound(impostor.begin(), impostor.end(), t) -
                     impostor.begin();
    return static_cast<double>(impostor.size() - static_cast<std::size_t>(idx)) /
           ni;
  };
  auto frr_at = [&](double t) {
    // genuines rejected: score < t
    const auto idx = std::lower_bound(genuine.begin(), genuine.end(), t) -
                     genuine.begin();
    return static_cast<double>(idx) / ng;
  };

  // Virtual endpoints guarantee a sign flip: accept-all has FAR=1, FRR=0;
  // reject-all has FAR=0, FRR=1.
  double prev_far = 1.0, prev_frr = 0.0;
  double prev_diff = 1.0;
  for (std::size_t i = 0; i <= thresholds.size(); ++i) {
    double far, frr;
    if (i < thresholds.size()) {
      far = far_at(thresholds[i]);
      frr = frr_at(thresholds[i]);
    } else {
      far = 0.0;
      frr = 1.0;
    }
    const double diff = far - frr;
    if (diff == 0.0) return far;
    if (diff < 0.0) {
      // crossing between the previous point and this one
      const double alpha = prev_diff / (prev_diff - diff);
      return prev_far + alpha * (far - prev_far);
    }
    prev_far = far;
    prev_frr = frr;
    prev_diff = diff;
  }
  (void)prev_frr;
  return 0.5;  // unreachable
}

inline VerificationReport verification_report(const std::vector<double>& scores,
                                              const std::vector<char>& labels) {
  VerificationReport rep;
  rep.roc_auc = roc_auc(scores, labels);
  rep.eer = eer(scores, labels);
  for (char g : labels) (g ? rep.n_genuine : rep.n_impostor) += 1;
  return rep;
}

enum class SubgroupBy { gender, age, accent };

/// Per-subgroup reports keyed by the tag of speaker a. Groups without at
/// least one genuine and one impostor trial are absent from the map.
inline std::map<std::string, VerificationReport> subgroup_report(
    const std::vector<TrialPair>& trials, const std::vector<double>& scores,
    SubgroupBy group_by) {
  if (trials.size() != scores.size())
    throw std::invalid_argument("subgroup_report: size mismatch");
  std::map<std::string, std::pair<std::vector<double>, std::vector<char>>> parts;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const TrialPair& t = trials[i];
    const std::string& tag = group_by == SubgroupBy::gender ? t.gender
                             : group_by == SubgroupBy::age  ? t.age_group
                                                            : t.accent_group;
    auto& [s, l] = parts[tag];
    s.push_back(scores[i]);
    l.push_back(t.is_genuine ? 1 : 0);
  }
  std::map<std::string, VerificationReport> out;
  for (const auto& [tag, part] : parts) {
    const auto& [s, l] = part;
    const bool has_genuine = std::find(l.begin(), l.end(), char(1)) != l.end();
    const bool has_impostor = std::find(l.begin(), l.end(), char(0)) != l.end();
    if (!has_genuine || !has_impostor) continue;
    out[tag] = verification_report(s, l);
  }
  return out;
}

/// Cosine scores for a trial list against an embedding lookup.
inline std::vector<double> score_trials(
    const std::vector<TrialPair>& trials,
    const std::map<std::string, std::vector<double>>& embeddings) {
  std::vector<double> scores;
  scores.reserve(trials.size());
  for (const TrialPair& t : trials) {
    auto a = embeddings.find(t.utterance_a);
    auto b = embeddings.find(t.utterance_b);
    if (a == embeddings.end() || b == embeddings.end())
      throw std::invalid_argument("score_trials: missing embedding for trial " +
                                  t.utterance_a + " / " + t.utterance_b);
    scores.push_back(ad::cosine_similarity(a->second, b->second));
  }
  return scores;
}

}  // namespace dseb
