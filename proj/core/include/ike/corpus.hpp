#pragma once

// Fact-edit corpus loading, validation, and splitting.
//
// The canonical on-disk form is JSON Lines: one record object per line with
// the flat field names below.  A shim also accepts the raw upstream export
// (a single JSON array whose elements may nest the rewrite under a
// "requested_rewrite" object).  All text fields are whitespace-trimmed at
// the edges during parsing; interior whitespace is preserved.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ike::corpus {

/** One editable fact with its evaluation probes. */
struct EditRecord {
  std::int64_t case_id = 0;
  std::string subject;
  std::string relation_id;
  std::string prompt_template;  // contains exactly one "{}" placeholder
  std::string target_true;      // original object
  std::string target_new;       // edited object, != target_true
  std::vector<std::string> paraphrase_prompts;
  std::vector<std::string> neighborhood_prompts;
  std::vector<std::string> generation_prompts;  // optional, carried verbatim
};

/** One (time label, object) entry of a temporal fact timeline. */
struct TemporalFact {
  std::string time_label;
  std::string object;
};

/** A subject/relation pair whose object changes over time. */
struct TemporalFactRecord {
  std::string subject;
  std::string relation_id;
  std::string query_template;  // contains the placeholder "_X_"
  std::vector<TemporalFact> timeline;  // >= 2 entries, time-ascending
};

/** Deterministic evaluation/demonstration partition of a corpus. */
struct CorpusSplit {
  std::vector<EditRecord> test;   // first min(2000, n) records, input order
  std::vector<EditRecord> train;  // the remainder, input order
};

/** Why a single record was rejected during parsing. */
struct RecordReject {
  std::size_t line = 0;         // 1-based input line (0 when not line-based)
  std::int64_t case_id = -1;    // -1 when the id itself was unreadable
  std::string message;          // names the offending field
};

enum class Strictness {
  kLenient,  // rejected records are reported and skipped
  kStrict,   // the first rejection aborts with an exception
};

struct ParsedCorpus {
  std::vector<EditRecord> records;
  std::vector<RecordReject> rejects;
};

struct ParsedTemplama {
  std::vector<TemporalFactRecord> records;
  std::vector<RecordReject> rejects;
  std::vector<std::string> warnings;  // e.g. single-entry groups skipped
};

// ---------------------------------------------------------------------------

/**
 * Loads an edit corpus.  Accepts canonical JSONL or the raw array export.
 * Lenient mode returns every valid record plus a reject report; strict mode
 * throws ParseError/ValidationError on the first bad record.
 */
ParsedCorpus parse_counterfact(const std::filesystem::path& file,
                               Strictness strictness = Strictness::kLenient);

/**
 * Loads a temporal-fact file (JSONL; keys subject, relation_id,
 * query_template, time_label, object).  Facts are grouped by
 * (subject, relation_id) in order of first appearance and each timeline is
 * sorted ascending by time label (numeric when both labels are integers,
 * lexicographic otherwise).  Groups with a single entry are skipped with a
 * warning; duplicate time labels within a group reject the group.
 */
ParsedTemplama parse_templama(const std::filesystem::path& file,
                              Strictness strictness = Strictness::kLenient);

/** Writes records in the canonical JSONL form (one object per line). */
void write_counterfact(const std::vector<EditRecord>& records,
                       const std::filesystem::path& file);

/** Canonical single-line JSON form of one record. */
std::string to_json_line(const EditRecord& record);

/**
 * Order-preserving split: the first min(2000, n) records form the test set,
 * the rest the train (demonstration) pool.
 */
CorpusSplit split(std::vector<EditRecord> records);

/** Substitutes the subject into a "{}" template. */
std::string render_template(const std::string& prompt_template,
                            const std::string& subject);

/** The record's own prompt with its subject substituted. */
std::string render_target_prompt(const EditRecord& record);

/** True when the record can be fully evaluated (both probe lists present). */
bool eligible_for_eval(const EditRecord& record);

/** Edge-trims ASCII whitespace; exposed for reuse by other modules. */
std::string trim(std::string_view text);

}  // namespace ike::corpus
