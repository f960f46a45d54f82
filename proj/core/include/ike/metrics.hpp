#pragma once

// Knowledge-editing metric suite.
//
// Every score is a percentage (×100) and all internal math is double
// precision.  The efficacy/specificity indicators use strict inequalities:
// a tie counts as a failure.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ike::metrics {

/** Probabilities of the edited and original object for one probe. */
struct ProbePair {
  double p_new = 0.0;  // P(edited object)
  double p_old = 0.0;  // P(original object)
};

/** All probe outcomes for one edited case. */
struct CaseResult {
  std::int64_t case_id = 0;
  std::vector<ProbePair> target_pairs;        // the edited prompt itself
  std::vector<ProbePair> paraphrase_pairs;    // in-scope rephrasings
  std::vector<ProbePair> neighborhood_pairs;  // out-of-scope prompts
};

struct ScorePair {
  double score = 0.0;      // indicator rate ×100
  double magnitude = 0.0;  // mean probability gap ×100 (percentage points)
};

struct MetricsReport {
  double es = 0.0, em = 0.0;  // efficacy over target prompts
  double ps = 0.0, pm = 0.0;  // efficacy over paraphrases
  double ns = 0.0, nm = 0.0;  // specificity over neighborhood prompts
  double s = 0.0;             // harmonic mean of (es, ps, ns)
  std::optional<double> cka_mean;
  std::vector<std::pair<double, double>> cka_false_rates;  // (alpha, rate)
  std::optional<double> prob_drop;
  std::optional<double> forgetting_rate;
  std::optional<double> memorization_ratio;
};

/**
 * (score, magnitude) where score = 100 × fraction with p_new > p_old (strict)
 * and magnitude = 100 × mean(p_new − p_old).  Throws on empty input.
 */
ScorePair efficacy(std::span<const ProbePair> pairs);

/** Mirror of efficacy with the roles of p_new/p_old swapped. */
ScorePair specificity(std::span<const ProbePair> pairs);

/** 3 / (1/es + 1/ps + 1/ns); defined as 0 when any input is ≤ 0. */
double harmonic_score(double es, double ps, double ns);

/**
 * p_true / mean(p_contrastive).  Throws when the contrastive list is empty
 * or its mean is zero.
 */
double cka_score(double p_true, std::span<const double> p_contrastive);

/** 100 × fraction of scores strictly below alpha.  Throws on empty input. */
double cka_false_rate(std::span<const double> scores, double alpha);

struct ForgettingStats {
  double prob_drop = 0.0;        // 100 × mean(pre − post)
  double forgetting_rate = 0.0;  // 100 × fraction with (pre − post) > 0.5·pre
};

/** Pre/post probabilities of the original object on the target prompt. */
ForgettingStats forgetting(std::span<const double> pre,
                           std::span<const double> post);

/** 100 × p_after_all / p_after_first.  Throws when the denominator is 0. */
double memorization_ratio(double p_after_first, double p_after_all);

/**
 * Pools probe pairs flat across all records (each prompt counts once) and
 * computes ES/EM, PS/PM, NS/NM, and S.  Throws when a scope has no pairs in
 * any record, naming the scope.
 */
MetricsReport aggregate(std::span<const CaseResult> results);

}  // namespace ike::metrics
