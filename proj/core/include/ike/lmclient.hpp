#pragma once

// Black-box completion scoring.
//
// Every backend answers one question: given a context string and a list of
// candidate continuations, what is the total log-probability of each
// candidate?  A remote HTTP backend talks to a real model server; a rule
// table mock provides a deterministic desk-scale oracle; a caching wrapper
// makes reruns free and byte-stable.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ike::lmclient {

struct ScoreRequest {
  std::string context;
  std::vector<std::string> continuations;  // non-empty; no empty candidate
};

struct ScoreResult {
  /** Total candidate log-probabilities, aligned with the request. */
  std::vector<double> logprobs;
  /** Per-candidate token counts when the backend reports them, else 1s. */
  std::vector<int> token_counts;
};

/** Marker for impossible candidates. */
constexpr double kLogZero = -std::numeric_limits<double>::infinity();

class Backend {
 public:
  virtual ~Backend() = default;
  /** Stable identity string; part of the scoring cache key. */
  virtual std::string id() const = 0;
  /** Must tolerate concurrent calls. */
  virtual ScoreResult score(const ScoreRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Mock backend

struct MockRule {
  std::string fact_pattern;   // must appear anywhere in the context
  std::string probe_pattern;  // must end the context (after trailing-ws trim)
  std::string answer;         // must equal the candidate
  double probability = 0.0;   // in (0, 1]
};

/**
 * Rule-table scoring: each candidate gets log(probability) of the first rule
 * (in list order) whose fact pattern appears in the context, whose probe
 * pattern ends the trailing-whitespace-trimmed context, and whose answer
 * equals the candidate; unmatched candidates get log(default_floor).
 */
ScoreResult mock_score(std::span<const MockRule> rules, double default_floor,
                       const ScoreRequest& request);

class MockBackend : public Backend {
 public:
  /** Validates rules and requires default_floor below every rule probability. */
  explicit MockBackend(std::vector<MockRule> rules, double default_floor = 0.01);

  std::string id() const override { return id_; }
  ScoreResult score(const ScoreRequest& request) override;

 private:
  std::vector<MockRule> rules_;
  double default_floor_;
  std::string id_;
};

/** Reads a rule file: one JSON object per line with the MockRule fields. */
std::vector<MockRule> load_mock_rules(const std::filesystem::path& file);

/** Writes rules in the same one-object-per-line form. */
void write_mock_rules(std::span<const MockRule> rules,
                      const std::filesystem::path& file);

// ---------------------------------------------------------------------------
// Remote backend

struct HttpBackendOptions {
  std::string url;  // e.g. "http://host:port/score"
  /** Environment variable holding the bearer token; empty value = no auth. */
  std::string auth_env = "IKE_BACKEND_TOKEN";
  std::chrono::seconds timeout{60};
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{250};  // doubles per retry
  int max_inflight = 4;
};

/**
 * POSTs {"context": ..., "continuations": [...]} to the configured URL and
 * expects {"logprobs": [...]} (optionally {"token_counts": [...]}) aligned by
 * index.  Transport failures are retried with exponential backoff; a
 * malformed response raises ProtocolError carrying the raw payload.
 */
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendOptions options);
  ~HttpBackend() override;

  std::string id() const override;
  ScoreResult score(const ScoreRequest& request) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/**
 * Shared transport helper: POST a JSON body, return the response body.
 * Retries on transport failure; non-2xx status is a ProtocolError.
 * Used by the scoring client and the embedding-endpoint fetch.
 */
std::string http_post_json(const HttpBackendOptions& options,
                           const std::string& body);

// ---------------------------------------------------------------------------
// Disk cache

/**
 * Write-through scoring cache: one file per request hash under cache_dir,
 * holding the full request and response.  A hit must match the stored
 * request byte-for-byte (hash collisions fall through to the inner backend).
 */
class CachingBackend : public Backend {
 public:
  CachingBackend(std::shared_ptr<Backend> inner, std::filesystem::path cache_dir);

  std::string id() const override;
  ScoreResult score(const ScoreRequest& request) override;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------

/**
 * Candidate probability: exp(logprob), or exp(logprob / token_count) when
 * per-token length normalization is requested.  The -inf marker maps to 0.
 */
double probability(const ScoreResult& result, std::size_t index,
                   bool length_normalized = false);

}  // namespace ike::lmclient
