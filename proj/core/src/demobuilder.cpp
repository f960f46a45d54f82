#include "ike/demobuilder.hpp"

#include <algorithm>
#include <array>

#include "ike/error.hpp"
#include "ike/rng.hpp"

namespace ike::demobuilder {
namespace {

constexpr std::string_view kFactLead = "New Fact: ";
constexpr std::string_view kPromptLead = "Prompt: ";

std::string rtrim_spaces(std::string text) {
  while (!text.empty() && text.back() == ' ') text.pop_back();
  return text;
}

/** "lead + a + ' ' + b" with the trailing space trimmed when b is empty. */
std::string joined_line(std::string_view lead, const std::string& a,
                        const std::string& b) {
  std::string line(lead);
  line += a;
  line += ' ';
  line += b;
  return rtrim_spaces(std::move(line));
}

std::array<std::size_t, 3> to_counts(const KindAllocation& a) {
  return {a.copy_count, a.update_count, a.retain_count};
}

}  // namespace

std::string_view kind_name(Kind kind) {
  switch (kind) {
    case Kind::kCopy: return "copy";
    case Kind::kUpdate: return "update";
    case Kind::kRetain: return "retain";
  }
  return "?";
}

KindAllocation allocate_kinds(std::size_t k) {
  if (k < 3) {
    throw ContractError("allocate_kinds: k=" + std::to_string(k) +
                        " cannot host all three kinds (need k >= 3)");
  }
  return allocate_kinds(k, KindRatio{});
}

KindAllocation allocate_kinds(std::size_t k, const KindRatio& ratio) {
  const std::array<std::size_t, 3> weights = {ratio.copy_weight,
                                              ratio.update_weight,
                                              ratio.retain_weight};
  std::size_t total_weight = weights[0] + weights[1] + weights[2];
  if (total_weight == 0) throw ContractError("allocate_kinds: all weights zero");
  std::size_t active = 0;
  for (std::size_t w : weights) active += (w > 0) ? 1 : 0;
  if (k < active) {
    throw ContractError("allocate_kinds: k=" + std::to_string(k) +
                        " is smaller than the number of active kinds (" +
                        std::to_string(active) + ")");
  }

  // Largest-remainder apportionment in exact integer arithmetic.
  std::array<std::size_t, 3> counts{};
  std::array<std::size_t, 3> remainders{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    counts[i] = k * weights[i] / total_weight;
    remainders[i] = k * weights[i] % total_weight;
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (remainders[a] != remainders[b]) return remainders[a] > remainders[b];
    return a < b;  // ties: copy, then update, then retain
  });
  for (std::size_t i = 0; assigned < k; ++i) {
    counts[order[i % 3]] += 1;
    ++assigned;
  }

  // Every active kind must appear at least once; borrow from the largest.
  auto zero_active = [&]() -> int {
    for (std::size_t i = 0; i < 3; ++i) {
      if (weights[i] > 0 && counts[i] == 0) return static_cast<int>(i);
    }
    return -1;
  };
  for (int z = zero_active(); z >= 0; z = zero_active()) {
    std::size_t donor = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (counts[i] >= counts[donor]) donor = i;
    }
    counts[donor] -= 1;
    counts[static_cast<std::size_t>(z)] += 1;
  }
  return KindAllocation{counts[0], counts[1], counts[2]};
}

std::vector<Kind> assign_kinds(std::size_t k) {
  return assign_kinds(k, allocate_kinds(k));
}

std::vector<Kind> assign_kinds(std::size_t k, const KindAllocation& allocation) {
  if (allocation.total() != k) {
    throw ContractError("assign_kinds: allocation totals " +
                        std::to_string(allocation.total()) + ", expected k=" +
                        std::to_string(k));
  }
  const std::array<std::size_t, 3> counts = to_counts(allocation);
  std::array<std::size_t, 3> placed{};
  std::vector<Kind> sequence;
  sequence.reserve(k);
  for (std::size_t slot = 0; slot < k; ++slot) {
    // Deficit of kind i after slot s if not placed: count_i*(s+1) - placed_i*k.
    // Picking the max keeps every prefix within one of its exact quota.
    long long best_deficit = 0;
    int best = -1;
    for (std::size_t i = 0; i < 3; ++i) {
      long long deficit = static_cast<long long>(counts[i]) *
                              static_cast<long long>(slot + 1) -
                          static_cast<long long>(placed[i]) *
                              static_cast<long long>(k);
      if (best < 0 || deficit > best_deficit) {
        best = static_cast<int>(i);
        best_deficit = deficit;
      }
    }
    placed[static_cast<std::size_t>(best)] += 1;
    sequence.push_back(static_cast<Kind>(best));
  }
  return sequence;
}

Demonstration build_demonstration(const corpus::EditRecord& record, Kind kind,
                                  std::uint64_t selector_seed) {
  Demonstration demo;
  demo.kind = kind;
  demo.fact_prompt = corpus::render_target_prompt(record);
  demo.fact_answer = record.target_new;

  auto pick = [&](const std::vector<std::string>& prompts) -> const std::string& {
    rng::SplitMix gen(rng::mix(selector_seed,
                               rng::mix(static_cast<std::uint64_t>(record.case_id),
                                        static_cast<std::uint64_t>(kind))));
    return prompts[static_cast<std::size_t>(gen.next_below(prompts.size()))];
  };

  switch (kind) {
    case Kind::kCopy:
      demo.probe = demo.fact_prompt;
      demo.answer = record.target_new;
      break;
    case Kind::kUpdate:
      if (record.paraphrase_prompts.empty()) {
        throw ContractError("record case_id=" + std::to_string(record.case_id) +
                            ": update demonstration needs a non-empty "
                            "paraphrase_prompts list");
      }
      demo.probe = pick(record.paraphrase_prompts);
      demo.answer = record.target_new;
      break;
    case Kind::kRetain:
      if (record.neighborhood_prompts.empty()) {
        throw ContractError("record case_id=" + std::to_string(record.case_id) +
                            ": retain demonstration needs a non-empty "
                            "neighborhood_prompts list");
      }
      demo.probe = pick(record.neighborhood_prompts);
      demo.answer = record.target_true;
      break;
  }
  return demo;
}

std::string render_demonstration(const Demonstration& demo) {
  std::string out = joined_line(kFactLead, demo.fact_prompt, demo.fact_answer);
  out += '\n';
  out += joined_line(kPromptLead, demo.probe, demo.answer);
  out += "\n\n";
  return out;
}

std::string render_query_tail(const std::string& new_fact_prompt,
                              const std::string& new_fact_answer,
                              const std::string& query_probe) {
  std::string out = joined_line(kFactLead, new_fact_prompt, new_fact_answer);
  out += '\n';
  out += kPromptLead;
  out += query_probe;
  return out;
}

std::size_t char_length(std::string_view text) { return text.size(); }

std::string assemble_context(const ContextPlan& plan, std::size_t budget,
                             const LengthFn& length_fn) {
  if (!length_fn) throw ContractError("assemble_context: null length function");

  std::string tail = render_query_tail(plan.new_fact_prompt,
                                       plan.new_fact_answer, plan.query_probe);
  std::vector<std::string> rendered;
  rendered.reserve(plan.demonstrations.size());
  for (const Demonstration& demo : plan.demonstrations) {
    rendered.push_back(render_demonstration(demo));
  }

  auto total_from = [&](std::size_t first) {
    std::string context;
    for (std::size_t i = first; i < rendered.size(); ++i) context += rendered[i];
    context += tail;
    return context;
  };

  std::size_t first = 0;
  std::string context = total_from(first);
  while (length_fn(context) > budget && first < rendered.size()) {
    ++first;  // drop the leftmost (least similar) demonstration
    context = total_from(first);
  }
  if (length_fn(context) > budget) {
    throw ContractError("assemble_context: query tail alone (" +
                        std::to_string(length_fn(tail)) +
                        ") exceeds the budget (" + std::to_string(budget) + ")");
  }
  return context;
}

bool context_well_formed(const std::string& context, std::size_t expected_demos,
                         const std::string& new_fact_prompt,
                         const std::string& new_fact_answer,
                         const std::string& query_probe) {
  std::string tail =
      render_query_tail(new_fact_prompt, new_fact_answer, query_probe);
  if (context.size() < tail.size()) return false;
  if (context.compare(context.size() - tail.size(), tail.size(), tail) != 0) {
    return false;
  }
  // The tail must occur exactly once (its fact block is the final one).
  if (context.find(tail) != context.size() - tail.size()) return false;

  // The body before the tail must be a run of well-formed demonstration blocks.
  std::size_t body_len = context.size() - tail.size();
  std::size_t pos = 0;
  std::size_t blocks = 0;
  while (pos < body_len) {
    if (context.compare(pos, kFactLead.size(), kFactLead) != 0) return false;
    std::size_t prompt_at = context.find(std::string("\n") + std::string(kPromptLead), pos);
    if (prompt_at == std::string::npos || prompt_at >= body_len) return false;
    std::size_t block_end = context.find("\n\n", prompt_at);
    if (block_end == std::string::npos || block_end + 2 > body_len) return false;
    pos = block_end + 2;
    ++blocks;
  }
  return blocks == expected_demos && pos == body_len;
}

}  // namespace ike::demobuilder
