#pragma once

// End-to-end experiment orchestration.
//
// The suite pipeline: load corpus → split → embed train records → for each
// test record, retrieve and order k demonstrations, assemble the context,
// score (edited, original) candidate pairs through the backend, aggregate
// the metric suite, and persist a summary, per-case logs, and a
// human-readable table.  Cases run on a bounded worker pool; results are
// keyed by case position, so parallelism never changes any output byte.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ike/config.hpp"
#include "ike/corpus.hpp"
#include "ike/lmclient.hpp"
#include "ike/metrics.hpp"
#include "ike/retrieval.hpp"

namespace ike::runner {

/** Per-record embedding lookup (stub, precomputed file, or remote endpoint). */
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dimension() const = 0;
  virtual retrieval::Vector embed(const corpus::EditRecord& record) = 0;
  /** Batch warm-up opportunity for remote sources; default no-op. */
  virtual void prefetch(std::span<const corpus::EditRecord> records);
};

/** Builds the provider selected by the config (stub / file / endpoint). */
std::unique_ptr<EmbeddingProvider> make_embedding_provider(const RunConfig& config);

/** Builds the configured backend, wrapped in a disk cache when enabled. */
std::shared_ptr<lmclient::Backend> make_backend(const RunConfig& config);

// ---------------------------------------------------------------------------
// Run records

struct ProbeLog {
  std::string scope;  // "target" | "paraphrase" | "neighborhood"
  std::string probe;
  double lp_new = 0.0, lp_old = 0.0;  // raw logprobs
  double p_new = 0.0, p_old = 0.0;    // probabilities as configured
};

struct CaseLog {
  std::int64_t case_id = 0;
  std::string context_digest;  // hash of the target-probe context
  std::vector<std::string> kinds;  // kind names, context order left→right
  std::vector<retrieval::ScoredNeighbor> neighbors;  // retrieval order
  std::vector<ProbeLog> probes;
  // Bare-prompt (no edit context) scores of the same candidates; feeds the
  // forgetting statistics.
  std::optional<ProbeLog> pre;
  // Full target-probe context; kept in memory for context dumps and audits,
  // represented in the on-disk log only by its digest.
  std::string target_context;
};

struct SkippedCase {
  std::int64_t case_id = 0;
  std::string reason;
};

struct EditOutcome {
  metrics::MetricsReport report;
  std::vector<CaseLog> cases;  // sorted by case_id
  std::vector<SkippedCase> skipped;
  // Set when the run aborted (backend down, or strict mode): the cases
  // gathered so far are still flushed before the error is rethrown.
  std::exception_ptr abort_error;
};

struct CkaRow {
  std::int64_t case_id = 0;
  double p_true = 0.0;
  std::vector<double> p_contrastive;
  double score = 0.0;
};

struct CkaOutcome {
  std::vector<CkaRow> rows;  // sorted by case_id
  double mean_score = 0.0;
  std::vector<std::pair<double, double>> false_rates;  // (alpha, rate)
  std::vector<SkippedCase> skipped;
  std::vector<std::string> warnings;
  std::exception_ptr abort_error;
};

struct TemporalRow {
  std::string subject;
  std::string relation_id;
  double p_after_first = 0.0;
  double p_after_all = 0.0;
  double ratio = 0.0;  // memorization ratio, percent
};

struct TemporalOutcome {
  std::vector<TemporalRow> rows;  // input order
  double mean_ratio = 0.0;
  std::vector<SkippedCase> skipped;
  std::vector<std::string> warnings;
  std::exception_ptr abort_error;
};

// ---------------------------------------------------------------------------
// Suite cores (injectable pieces; unit tests drive these directly)

EditOutcome evaluate_edit_cases(const RunConfig& config,
                                const corpus::CorpusSplit& split,
                                EmbeddingProvider& embedder,
                                lmclient::Backend& backend);

CkaOutcome evaluate_cka_cases(const RunConfig& config,
                              const corpus::CorpusSplit& split,
                              EmbeddingProvider& embedder,
                              lmclient::Backend& backend);

TemporalOutcome evaluate_temporal_cases(
    const RunConfig& config,
    std::span<const corpus::TemporalFactRecord> records,
    lmclient::Backend& backend);

/**
 * Temporal probe text: "In {t}, " + the query template cut at its "_X_"
 * placeholder (placeholder and trailing text dropped, right-trimmed).
 */
std::string temporal_probe(const corpus::TemporalFactRecord& record,
                           const std::string& time_label);

// ---------------------------------------------------------------------------
// Full suites (load inputs, evaluate, emit reports, return the report)

metrics::MetricsReport run_edit_suite(const RunConfig& config);

/** Same pipeline; requires an ablation switch; summary rows carry its name. */
metrics::MetricsReport run_ablation(const RunConfig& config);

CkaOutcome run_cka_suite(const RunConfig& config);

TemporalOutcome run_temporal_suite(const RunConfig& config);

// ---------------------------------------------------------------------------
// Reports

/**
 * Writes summary.json, cases.jsonl, table.txt, and resolved_config.txt into
 * out_dir (plus contexts/ dumps when enabled).  Requires >= 1 case.
 * Outputs carry no timestamps: a rerun with identical inputs and a warm
 * cache is byte-identical.
 */
void emit_reports(const EditOutcome& outcome, const RunConfig& config,
                  const std::string& backend_id,
                  const std::filesystem::path& out_dir);

void emit_cka_reports(const CkaOutcome& outcome, const RunConfig& config,
                      const std::string& backend_id,
                      const std::filesystem::path& out_dir);

void emit_temporal_reports(const TemporalOutcome& outcome,
                           const RunConfig& config,
                           const std::string& backend_id,
                           const std::filesystem::path& out_dir);

/** Reads a cases.jsonl produced by emit_reports. */
std::vector<CaseLog> load_case_logs(const std::filesystem::path& file);

/** Rebuilds the metric report (including forgetting stats) from case logs. */
metrics::MetricsReport recompute_report(std::span<const CaseLog> cases);

/**
 * The `report` subcommand: re-render summary.json and table.txt in out_dir
 * from an existing run directory's cases.jsonl (+ its summary metadata).
 */
void rerender_reports(const std::filesystem::path& run_dir,
                      const std::filesystem::path& out_dir);

}  // namespace ike::runner
