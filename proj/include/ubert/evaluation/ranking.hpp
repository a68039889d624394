// Critical-difference ranking: average ranks plus groups of models with no
// significant pairwise difference (Wilcoxon signed-rank, Holm-corrected).
#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ubert/evaluation/significance.hpp"

namespace ubert::eval {

struct PairTest {
  std::size_t a = 0, b = 0;
  double p_value = 1.0;
  bool rejected = false;
};

struct CdRanking {
  std::vector<double> average_ranks;            // per model, 1 = best
  std::vector<PairTest> pairs;                  // all a < b
  std::vector<std::vector<std::size_t>> cliques;  // maximal, ordered by best member rank
};

// scores[model][sample]; higher is better.
inline CdRanking cd_ranking(const std::vector<std::vector<double>>& scores, double alpha = 0.05) {
  const std::size_t k = scores.size();
  if (k < 2) throw std::invalid_argument("cd_ranking: need at least 2 models");
  const std::size_t n = scores[0].size();
  if (n < 2) throw std::invalid_argument("cd_ranking: need at least 2 paired samples");
  for (const auto& s : scores) {
    if (s.size() != n) throw std::invalid_argument("cd_ranking: models have different sample counts");
  }

  CdRanking out;
  out.average_ranks.assign(k, 0.0);
  std::vector<std::size_t> order(k);
  for (std::size_t j = 0; j < n; ++j) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a][j] > scores[b][j]; });
    for (std::size_t i = 0; i < k;) {
      std::size_t e = i;
      while (e + 1 < k && scores[order[e + 1]][j] == scores[order[i]][j]) ++e;
      const double r = 0.5 * double(i + e) + 1.0;
      for (std::size_t t = i; t <= e; ++t) out.average_ranks[order[t]] += r;
      i = e + 1;
    }
  }
  for (auto& r : out.average_ranks) r /= double(n);

  std::vector<double> pvals;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) {
      pvals.push_back(wilcoxon_signed_rank(scores[a], scores[b]).p_value);
      out.pairs.push_back({a, b, pvals.back(), false});
    }
  auto rejected = holm_correct(pvals, alpha);
  std::vector<std::vector<bool>> linked(k, std::vector<bool>(k, true));
  for (std::size_t i = 0; i < out.pairs.size(); ++i) {
    out.pairs[i].rejected = rejected[i];
    if (rejected[i]) linked[out.pairs[i].a][out.pairs[i].b] = linked[out.pairs[i].b][out.pairs[i].a] = false;
  }

  // Bron-Kerbosch over the "not significantly different" graph
  std::function<void(std::vector<std::size_t>, std::vector<std::size_t>, std::vector<std::size_t>)> expand =
      [&](std::vector<std::size_t> r, std::vector<std::size_t> p, std::vector<std::size_t> x) {
        if (p.empty() && x.empty()) {
          std::sort(r.begin(), r.end());
          out.cliques.push_back(r);
          return;
        }
        auto candidates = p;
        for (auto v : candidates) {
          std::vector<std::size_t> p2, x2;
          for (auto u : p)
            if (u != v && linked[u][v]) p2.push_back(u);
          for (auto u : x)
            if (linked[u][v]) x2.push_back(u);
          auto r2 = r;
          r2.push_back(v);
          expand(r2, p2, x2);
          p.erase(std::find(p.begin(), p.end(), v));
          x.push_back(v);
        }
      };
  std::vector<std::size_t> all(k);
  std::iota(all.begin(), all.end(), 0);
  expand({}, all, {});
  auto best = [&](const std::vector<std::size_t>& c) {
    double m = 1e300;
    for (auto v : c) m = std::min(m, out.average_ranks[v]);
    return m;
  };
  std::sort(out.cliques.begin(), out.cliques.end(), [&](const auto& a, const auto& b) {
    if (best(a) != best(b)) return best(a) < best(b);
    return a < b;
  });
  return out;
}

}  // namespace ubert::eval
