#pragma once

// Run configuration: a flat key = value text file plus programmatic
// overrides (the CLI maps its flags onto the same keys).  Every run writes
// its resolved configuration next to its outputs, and the summary carries a
// hash of that text, so results are traceable to exact settings.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ike::runner {

enum class Ablation {
  kNone,
  kRandomSelection,  // seeded uniform sample of train records instead of kNN
  kRandomOrdering,   // seeded shuffle of the retrieved context order
  kDropCopy,
  kDropUpdate,
  kDropRetain,
  kPromptBaseline,   // zero demonstrations (k = 0)
};

std::string_view ablation_name(Ablation ablation);
Ablation ablation_from_name(std::string_view name);  // throws ConfigError

struct RunConfig {
  // Inputs
  std::filesystem::path corpus;    // edit-record corpus (JSONL or raw array)
  std::filesystem::path templama;  // temporal-fact corpus (JSONL)

  // Embedding source: exactly one of {file, endpoint, stub}; stub is the
  // default when neither a file nor an endpoint is configured.
  std::filesystem::path embedding_file;
  std::string embedding_endpoint;
  std::size_t embedding_dim = 64;  // stub dimension

  // Demonstrations
  std::size_t k = 32;           // k = 0 means the zero-demonstration baseline
  std::size_t budget = 8000;    // context length budget
  std::string length_mode = "chars";

  // Backend: exactly one of {backend_url, mock_rules}.
  std::string backend_url;
  std::filesystem::path mock_rules;
  std::filesystem::path cache_dir;  // empty = no scoring cache
  std::size_t max_inflight = 4;

  // Scoring / metrics
  std::uint64_t seed = 0;
  bool length_normalized = false;  // per-token probability normalization
  std::size_t cka_m = 5;           // contrastive relations per case
  std::vector<double> alphas = {1.0, 1.1};

  Ablation ablation = Ablation::kNone;
  bool strict = false;         // promote case/record failures to run aborts
  bool dump_contexts = false;  // write per-case context files
  std::size_t max_cases = 0;   // 0 = evaluate the whole test split

  std::filesystem::path out = "out";

  /** Cross-field checks; throws ConfigError. */
  void validate() const;

  /** Row label for tables/summaries: ablation name, or "edit". */
  std::string effective_label() const;

  /** Cache directory after applying the IKE_CACHE_DIR environment override. */
  std::filesystem::path effective_cache_dir() const;
};

/** Parses a flat key = value file ('#' comments, blank lines ignored). */
RunConfig load_config(const std::filesystem::path& file);

/** Sets one field by its config-file key; throws ConfigError on unknown keys. */
void apply_override(RunConfig& config, std::string_view key,
                    std::string_view value);

/** Canonical text form: every key, fixed order, one per line. */
std::string resolved_config_text(const RunConfig& config);

/** Hex hash of the resolved text; stamped into summaries. */
std::string config_hash(const RunConfig& config);

}  // namespace ike::runner
