#pragma once

// Shared fixtures for the unit and acceptance test binaries: a synthetic
// fact-edit corpus with deterministic content, mock rule tables that turn
// the backend into a metric oracle, and scratch-directory plumbing.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ike/config.hpp"
#include "ike/corpus.hpp"
#include "ike/lmclient.hpp"

namespace ike::testutil {

/** Unique scratch directory, removed (recursively) on destruction. */
class TempDir {
 public:
  explicit TempDir(std::string_view tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path file(std::string_view name) const {
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

/**
 * Deterministic synthetic edit record.  Subjects are unique per case id;
 * relation and prompt template cycle over three distinct relations so that
 * contrastive-template pools are non-trivial.
 */
corpus::EditRecord make_record(std::int64_t case_id);

/** Records with case ids 1..n. */
std::vector<corpus::EditRecord> make_corpus(std::size_t n);

/**
 * A rule table that plays the ideal editor: answers the edited object on
 * the target prompt (p=0.9) and every paraphrase (p=0.8), and the original
 * object on every neighborhood prompt (p=0.7).  Under these rules the
 * efficacy, generalization, and specificity rates are all forced to 100.
 */
std::vector<lmclient::MockRule> scope_aware_rules(
    std::span<const corpus::EditRecord> records);

/**
 * A rule table that parrots the edited object on every probe, including
 * neighborhood prompts: efficacy stays 100 but specificity collapses to 0.
 */
std::vector<lmclient::MockRule> copy_everything_rules(
    std::span<const corpus::EditRecord> records);

/** Writes records as JSONL and returns the path. */
std::filesystem::path write_corpus_file(
    std::span<const corpus::EditRecord> records,
    const std::filesystem::path& path);

/** Writes rules as JSONL and returns the path. */
std::filesystem::path write_rules_file(
    std::span<const lmclient::MockRule> rules,
    const std::filesystem::path& path);

/** Whole-file read (binary, byte-exact). */
std::string slurp(const std::filesystem::path& path);

/** Config preset: mock backend, stub embeddings, fixed seed. */
runner::RunConfig base_config(const std::filesystem::path& corpus,
                              const std::filesystem::path& rules,
                              const std::filesystem::path& out_dir);

}  // namespace ike::testutil
