#pragma once

// Demonstration construction and context assembly.
//
// A context teaches three behaviors: copy the edited answer on the edited
// prompt itself, update the answer on paraphrases of it, and retain the
// original answer on out-of-scope prompts.  Demonstrations render as a
// two-line block ("New Fact: ..." / "Prompt: ...") and the context always
// ends with the injected fact plus a bare query line awaiting completion.

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ike/corpus.hpp"

namespace ike::demobuilder {

enum class Kind { kCopy, kUpdate, kRetain };

/** Human-readable kind name ("copy" / "update" / "retain"). */
std::string_view kind_name(Kind kind);

/** One rendered-unit of in-context teaching. */
struct Demonstration {
  Kind kind = Kind::kCopy;
  std::string fact_prompt;   // the demonstrated record's edited prompt
  std::string fact_answer;   // its edited object
  std::string probe;         // prompt shown after the fact
  std::string answer;        // completion demonstrated for the probe
};

/** How many demonstrations of each kind a context of size k carries. */
struct KindAllocation {
  std::size_t copy_count = 0;
  std::size_t update_count = 0;
  std::size_t retain_count = 0;

  std::size_t total() const { return copy_count + update_count + retain_count; }
  bool operator==(const KindAllocation&) const = default;
};

/** Relative kind weights; a zero weight removes the kind (ablations). */
struct KindRatio {
  unsigned copy_weight = 1;
  unsigned update_weight = 3;
  unsigned retain_weight = 4;
};

/** Everything needed to assemble one query context. */
struct ContextPlan {
  std::vector<Demonstration> demonstrations;  // left to right
  std::string new_fact_prompt;                // x*, the edited prompt
  std::string new_fact_answer;                // y*, the edited object
  std::string query_probe;                    // x, the bare query
};

/**
 * Splits k slots 1:3:4 across copy/update/retain by largest-remainder
 * apportionment; every kind receives at least one slot.  k must be >= 3.
 */
KindAllocation allocate_kinds(std::size_t k);

/**
 * Generalized allocation for an arbitrary ratio (zero-weight kinds get 0).
 * k must be >= the number of active kinds; each active kind gets >= 1.
 */
KindAllocation allocate_kinds(std::size_t k, const KindRatio& ratio);

/**
 * Deterministic left-to-right kind sequence whose multiset equals
 * allocate_kinds(k), with each kind spread as uniformly as possible: slot s
 * goes to the kind with the largest remaining quota deficit
 * count*(s+1) - placed*k (ties: copy, then update, then retain).
 */
std::vector<Kind> assign_kinds(std::size_t k);

/** Same construction over an explicit allocation. */
std::vector<Kind> assign_kinds(std::size_t k, const KindAllocation& allocation);

/**
 * Builds one demonstration from a record.  copy probes the edited prompt
 * itself; update probes a seeded-uniform paraphrase (answer = edited object);
 * retain probes a seeded-uniform neighborhood prompt (answer = original
 * object).  Throws when the needed prompt list is empty.
 */
Demonstration build_demonstration(const corpus::EditRecord& record, Kind kind,
                                  std::uint64_t selector_seed);

/**
 * "New Fact: {fact_prompt} {fact_answer}\nPrompt: {probe} {answer}\n\n".
 * A trailing space left by an empty answer is trimmed.
 */
std::string render_demonstration(const Demonstration& demo);

/** Final block: "New Fact: {x*} {y*}\nPrompt: {query_probe}" — no answer. */
std::string render_query_tail(const std::string& new_fact_prompt,
                              const std::string& new_fact_answer,
                              const std::string& query_probe);

using LengthFn = std::function<std::size_t(std::string_view)>;

/** Default budget length function: character count. */
std::size_t char_length(std::string_view text);

/**
 * Renders the full context.  When the total exceeds the budget, whole
 * demonstrations are dropped from the left (least similar first); the
 * new-fact/query tail is never dropped and must fit on its own.
 */
std::string assemble_context(const ContextPlan& plan, std::size_t budget,
                             const LengthFn& length_fn = char_length);

/**
 * Audit helper: true when `context` consists of `expected_demos` demonstration
 * blocks followed by exactly one final new-fact block and the bare query line.
 */
bool context_well_formed(const std::string& context, std::size_t expected_demos,
                         const std::string& new_fact_prompt,
                         const std::string& new_fact_answer,
                         const std::string& query_probe);

}  // namespace ike::demobuilder
