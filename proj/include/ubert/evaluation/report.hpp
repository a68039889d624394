// Evaluation reports: full-set metrics with bootstrap intervals, length
// buckets, longest-document slices, and paired bootstrap scores for model
// comparison.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubert/evaluation/bootstrap.hpp"
#include "ubert/evaluation/metrics.hpp"
#include "ubert/evaluation/ranking.hpp"
#include "ubert/evaluation/records.hpp"

namespace ubert::eval {

struct Interval {
  double lo = 0.0, hi = 0.0;
};

struct EvaluationReport {
  std::size_t documents = 0;
  ConfusionCounts counts;
  double macro_f1 = 0.0;
  double mcc = 0.0;
  double positive_ratio = 0.0;  // share of gold class 1
  double mean_tokens = 0.0;
  std::size_t min_tokens = 0, max_tokens = 0;
  std::optional<Interval> macro_f1_ci, mcc_ci;
  std::size_t bootstrap_redraws = 0;
};

inline EvaluationReport evaluate(const std::vector<PredictionRecord>& records,
                                 const std::optional<BootstrapOptions>& bootstrap = std::nullopt) {
  if (records.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
  EvaluationReport rep;
  rep.documents = records.size();
  rep.counts = confusion(records);
  rep.macro_f1 = macro_f1(rep.counts);
  rep.mcc = mcc(rep.counts);
  rep.positive_ratio = double(rep.counts.tp + rep.counts.fn) / double(rep.documents);
  double tokens = 0;
  rep.min_tokens = records.front().length;
  for (const auto& r : records) {
    tokens += double(r.length);
    rep.min_tokens = std::min(rep.min_tokens, r.length);
    rep.max_tokens = std::max(rep.max_tokens, r.length);
  }
  rep.mean_tokens = tokens / double(rep.documents);
  if (bootstrap) {
    std::vector<LabeledPrediction> lp;
    lp.reserve(records.size());
    for (const auto& r : records) lp.push_back({r.gold, r.predicted});
    auto f1 = bootstrap_ci(lp, [](const ConfusionCounts& c) { return macro_f1(c); }, *bootstrap);
    auto mc = bootstrap_ci(lp, [](const ConfusionCounts& c) { return mcc(c); }, *bootstrap);
    rep.macro_f1_ci = Interval{f1.lo, f1.hi};
    rep.mcc_ci = Interval{mc.lo, mc.hi};
    rep.bootstrap_redraws = f1.redraws;
  }
  return rep;
}

// Ascending by token length, ties by document id.
inline std::vector<PredictionRecord> sorted_by_length(std::vector<PredictionRecord> records) {
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    if (a.length != b.length) return a.length < b.length;
    return a.id < b.id;
  });
  return records;
}

// The ceil(fraction * N) longest documents.
inline std::vector<PredictionRecord> longest_slice(const std::vector<PredictionRecord>& records, double fraction) {
  if (!(fraction > 0 && fraction <= 1)) throw std::invalid_argument("longest_slice: fraction must be in (0,1]");
  if (records.empty()) throw std::invalid_argument("longest_slice: no records");
  auto sorted = sorted_by_length(records);
  auto count = static_cast<std::size_t>(std::ceil(fraction * double(sorted.size()) - 1e-9));
  count = std::clamp<std::size_t>(count, 1, sorted.size());
  return {sorted.end() - static_cast<std::ptrdiff_t>(count), sorted.end()};
}

// G groups of consecutive lengths, sizes differing by at most one; the
// longer groups absorb the remainder.
inline std::vector<std::vector<PredictionRecord>> split_length_buckets(const std::vector<PredictionRecord>& records,
                                                                       std::size_t groups) {
  if (groups < 1) throw std::invalid_argument("length_buckets: need at least one group");
  if (groups > records.size()) {
    throw std::invalid_argument("length_buckets: " + std::to_string(groups) + " groups for " +
                                std::to_string(records.size()) + " documents");
  }
  auto sorted = sorted_by_length(records);
  const std::size_t base = sorted.size() / groups, extra = sorted.size() % groups;
  std::vector<std::vector<PredictionRecord>> out;
  std::size_t pos = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t size = base + (g >= groups - extra ? 1 : 0);
    out.emplace_back(sorted.begin() + static_cast<std::ptrdiff_t>(pos),
                     sorted.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return out;
}

inline std::vector<EvaluationReport> length_buckets(const std::vector<PredictionRecord>& records, std::size_t groups,
                                                    const std::optional<BootstrapOptions>& bootstrap = std::nullopt) {
  std::vector<EvaluationReport> out;
  for (const auto& bucket : split_length_buckets(records, groups)) out.push_back(evaluate(bucket, bootstrap));
  return out;
}

// Per-replicate metric scores on shared resamples, one row per model. All
// models must cover the same documents with the same gold labels.
inline std::vector<std::vector<double>> paired_bootstrap_scores(
    const std::vector<std::vector<PredictionRecord>>& per_model, const Metric& metric, const BootstrapOptions& opt) {
  if (per_model.empty()) throw std::invalid_argument("paired_bootstrap_scores: no models");
  std::vector<std::map<std::string, const PredictionRecord*>> by_id(per_model.size());
  for (std::size_t m = 0; m < per_model.size(); ++m) {
    for (const auto& r : per_model[m]) {
      if (!by_id[m].emplace(r.id, &r).second) {
        throw std::invalid_argument("paired_bootstrap_scores: duplicate document id " + r.id);
      }
    }
  }
  std::vector<std::string> ids;
  for (const auto& [id, _] : by_id[0]) ids.push_back(id);
  for (std::size_t m = 1; m < by_id.size(); ++m) {
    if (by_id[m].size() != ids.size()) throw std::invalid_argument("paired_bootstrap_scores: models cover different documents");
    for (const auto& id : ids) {
      auto it = by_id[m].find(id);
      if (it == by_id[m].end()) throw std::invalid_argument("paired_bootstrap_scores: document " + id + " missing");
      if (it->second->gold != by_id[0].at(id)->gold) {
        throw std::invalid_argument("paired_bootstrap_scores: gold labels disagree for " + id);
      }
    }
  }
  std::vector<int> gold;
  for (const auto& id : ids) gold.push_back(by_id[0].at(id)->gold);
  std::vector<std::vector<double>> scores(per_model.size(), std::vector<double>(opt.replicates));
  for (std::size_t b = 0; b < opt.replicates; ++b) {
    auto idx = resample_indices(gold, opt.seed, b, opt.max_redraws);
    for (std::size_t m = 0; m < per_model.size(); ++m) {
      ConfusionCounts c;
      for (auto i : idx) {
        const auto* r = by_id[m].at(ids[i]);
        if (r->gold == 1) {
          (r->predicted == 1 ? c.tp : c.fn)++;
        } else {
          (r->predicted == 1 ? c.fp : c.tn)++;
        }
      }
      scores[m][b] = metric(c);
    }
  }
  return scores;
}

inline void to_json(nlohmann::json& j, const Interval& i) { j = nlohmann::json::array({i.lo, i.hi}); }

inline void to_json(nlohmann::json& j, const EvaluationReport& r) {
  j = {{"documents", r.documents},
       {"tp", r.counts.tp},
       {"tn", r.counts.tn},
       {"fp", r.counts.fp},
       {"fn", r.counts.fn},
       {"macro_f1", r.macro_f1},
       {"mcc", r.mcc},
       {"positive_ratio", r.positive_ratio},
       {"mean_tokens", r.mean_tokens},
       {"min_tokens", r.min_tokens},
       {"max_tokens", r.max_tokens}};
  if (r.macro_f1_ci) j["macro_f1_ci"] = *r.macro_f1_ci;
  if (r.mcc_ci) j["mcc_ci"] = *r.mcc_ci;
  if (r.macro_f1_ci) j["bootstrap_redraws"] = r.bootstrap_redraws;
}

// Plot-ready critical-difference data: rank positions and clique bars.
inline nlohmann::json cd_ranking_json(const CdRanking& cd, const std::vector<std::string>& names, double alpha) {
  nlohmann::json models = nlohmann::json::array();
  for (std::size_t i = 0; i < names.size(); ++i) models.push_back({{"model", names[i]}, {"average_rank", cd.average_ranks[i]}});
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : cd.pairs) {
    pairs.push_back({{"a", names[p.a]}, {"b", names[p.b]}, {"p_value", p.p_value}, {"rejected", p.rejected}});
  }
  nlohmann::json cliques = nlohmann::json::array();
  for (const auto& c : cd.cliques) {
    nlohmann::json members = nlohmann::json::array();
    double lo = 1e300, hi = -1e300;
    for (auto v : c) {
      members.push_back(names[v]);
      lo = std::min(lo, cd.average_ranks[v]);
      hi = std::max(hi, cd.average_ranks[v]);
    }
    cliques.push_back({{"members", members}, {"rank_from", lo}, {"rank_to", hi}});
  }
  return {{"alpha", alpha}, {"models", models}, {"pairs", pairs}, {"cliques", cliques}};
}

}  // namespace ubert::eval
