#include "ike/metrics.hpp"

#include <cmath>

#include "ike/error.hpp"

namespace ike::metrics {

ScorePair efficacy(std::span<const ProbePair> pairs) {
  if (pairs.empty()) throw ContractError("efficacy: no probe pairs");
  std::size_t successes = 0;
  double gap_sum = 0.0;
  for (const ProbePair& pair : pairs) {
    if (pair.p_new > pair.p_old) ++successes;
    gap_sum += pair.p_new - pair.p_old;
  }
  double n = static_cast<double>(pairs.size());
  return {100.0 * static_cast<double>(successes) / n, 100.0 * gap_sum / n};
}

ScorePair specificity(std::span<const ProbePair> pairs) {
  if (pairs.empty()) throw ContractError("specificity: no probe pairs");
  std::size_t successes = 0;
  double gap_sum = 0.0;
  for (const ProbePair& pair : pairs) {
    if (pair.p_old > pair.p_new) ++successes;
    gap_sum += pair.p_old - pair.p_new;
  }
  double n = static_cast<double>(pairs.size());
  return {100.0 * static_cast<double>(successes) / n, 100.0 * gap_sum / n};
}

double harmonic_score(double es, double ps, double ns) {
  if (es <= 0.0 || ps <= 0.0 || ns <= 0.0) return 0.0;  // degenerate editor
  return 3.0 / (1.0 / es + 1.0 / ps + 1.0 / ns);
}

double cka_score(double p_true, std::span<const double> p_contrastive) {
  if (p_contrastive.empty()) {
    throw ContractError("cka_score: contrastive list is empty");
  }
  if (p_true < 0.0) throw ContractError("cka_score: p_true must be >= 0");
  double sum = 0.0;
  for (double p : p_contrastive) {
    if (p < 0.0) throw ContractError("cka_score: contrastive value below 0");
    sum += p;
  }
  double mean = sum / static_cast<double>(p_contrastive.size());
  if (mean <= 0.0) {
    throw ContractError("cka_score: contrastive mean is zero (undefined ratio)");
  }
  return p_true / mean;
}

double cka_false_rate(std::span<const double> scores, double alpha) {
  if (scores.empty()) throw ContractError("cka_false_rate: no scores");
  std::size_t below = 0;
  for (double s : scores) {
    if (s < alpha) ++below;
  }
  return 100.0 * static_cast<double>(below) / static_cast<double>(scores.size());
}

ForgettingStats forgetting(std::span<const double> pre,
                           std::span<const double> post) {
  if (pre.size() != post.size()) {
    throw ContractError("forgetting: pre/post length mismatch (" +
                        std::to_string(pre.size()) + " vs " +
                        std::to_string(post.size()) + ")");
  }
  if (pre.empty()) throw ContractError("forgetting: no values");
  double drop_sum = 0.0;
  std::size_t forgotten = 0;
  for (std::size_t i = 0; i < pre.size(); ++i) {
    double drop = pre[i] - post[i];
    drop_sum += drop;
    if (drop > 0.5 * pre[i]) ++forgotten;
  }
  double n = static_cast<double>(pre.size());
  return {100.0 * drop_sum / n, 100.0 * static_cast<double>(forgotten) / n};
}

double memorization_ratio(double p_after_first, double p_after_all) {
  if (!(p_after_first > 0.0)) {
    throw ContractError("memorization_ratio: zero denominator");
  }
  return 100.0 * p_after_all / p_after_first;
}

MetricsReport aggregate(std::span<const CaseResult> results) {
  if (results.empty()) throw ContractError("aggregate: no case results");

  std::vector<ProbePair> target, paraphrase, neighborhood;
  for (const CaseResult& r : results) {
    target.insert(target.end(), r.target_pairs.begin(), r.target_pairs.end());
    paraphrase.insert(paraphrase.end(), r.paraphrase_pairs.begin(),
                      r.paraphrase_pairs.end());
    neighborhood.insert(neighborhood.end(), r.neighborhood_pairs.begin(),
                        r.neighborhood_pairs.end());
  }
  if (target.empty()) {
    throw ValidationError("aggregate: no target pairs in any record");
  }
  if (paraphrase.empty()) {
    throw ValidationError("aggregate: no paraphrase pairs in any record");
  }
  if (neighborhood.empty()) {
    throw ValidationError("aggregate: no neighborhood pairs in any record");
  }

  MetricsReport report;
  ScorePair t = efficacy(target);
  ScorePair p = efficacy(paraphrase);
  ScorePair nb = specificity(neighborhood);
  report.es = t.score;
  report.em = t.magnitude;
  report.ps = p.score;
  report.pm = p.magnitude;
  report.ns = nb.score;
  report.nm = nb.magnitude;
  report.s = harmonic_score(report.es, report.ps, report.ns);
  return report;
}

}  // namespace ike::metrics
