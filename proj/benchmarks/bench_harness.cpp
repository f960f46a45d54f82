// Microbenchmarks for the hot paths: retrieval over a large index,
// context assembly at full width, metric aggregation, and mock scoring.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <string>
#include <vector>

#include "ike/corpus.hpp"
#include "ike/demobuilder.hpp"
#include "ike/lmclient.hpp"
#include "ike/metrics.hpp"
#include "ike/retrieval.hpp"
#include "ike/rng.hpp"

using namespace ike;

namespace {

retrieval::Vector random_vector(rng::SplitMix& gen, std::size_t dim) {
  retrieval::Vector v(dim);
  for (auto& x : v) {
    x = static_cast<float>(gen.next_unit() * 2.0 - 1.0);
  }
  if (v[0] == 0.0f) v[0] = 1.0f;
  return v;
}

corpus::EditRecord bench_record(std::int64_t id) {
  corpus::EditRecord record;
  record.case_id = id;
  record.subject = "Subject " + std::to_string(id);
  record.relation_id = "R" + std::to_string(id % 7);
  record.prompt_template = "The well-known property of {} is";
  record.target_true = "the original value";
  record.target_new = "the edited value";
  record.paraphrase_prompts = {
      "Put differently for Subject " + std::to_string(id) + ", it is"};
  record.neighborhood_prompts = {
      "A nearby subject " + std::to_string(id) + " maps to"};
  return record;
}

void BM_Knn(benchmark::State& state) {
  const std::size_t size = static_cast<std::size_t>(state.range(0));
  const std::size_t dim = 64;
  rng::SplitMix gen(1);
  retrieval::EmbeddingIndex index(dim);
  for (std::size_t i = 0; i < size; ++i) {
    index.add(static_cast<std::int64_t>(i + 1), random_vector(gen, dim));
  }
  const retrieval::Vector query = random_vector(gen, dim);
  for (auto _ : state) {
    benchmark::DoNotOptimize(retrieval::knn(index, query, 32));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(size));
}
BENCHMARK(BM_Knn)->Arg(1000)->Arg(10000)->Arg(100000);

void BM_StubEmbed(benchmark::State& state) {
  const auto record = bench_record(42);
  const std::string key = retrieval::encode_key(record);
  for (auto _ : state) {
    benchmark::DoNotOptimize(retrieval::stub_embed(key, 64, 7));
  }
}
BENCHMARK(BM_StubEmbed);

void BM_AssembleContext(benchmark::State& state) {
  const std::size_t k = static_cast<std::size_t>(state.range(0));
  demobuilder::ContextPlan plan;
  const auto target = bench_record(1);
  plan.new_fact_prompt = corpus::render_target_prompt(target);
  plan.new_fact_answer = target.target_new;
  plan.query_probe = plan.new_fact_prompt;
  const auto kinds = demobuilder::assign_kinds(k);
  for (std::size_t i = 0; i < k; ++i) {
    plan.demonstrations.push_back(demobuilder::build_demonstration(
        bench_record(static_cast<std::int64_t>(i + 100)), kinds[i], 7));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(demobuilder::assemble_context(plan, 8000));
  }
}
BENCHMARK(BM_AssembleContext)->Arg(16)->Arg(32);

void BM_Aggregate(benchmark::State& state) {
  const std::size_t cases = static_cast<std::size_t>(state.range(0));
  rng::SplitMix gen(5);
  std::vector<metrics::CaseResult> results(cases);
  for (std::size_t i = 0; i < cases; ++i) {
    auto fill = [&](std::vector<metrics::ProbePair>& pairs, std::size_t n) {
      pairs.resize(n);
      for (auto& pair : pairs) {
        pair.p_new = gen.next_unit();
        pair.p_old = gen.next_unit();
      }
    };
    results[i].case_id = static_cast<std::int64_t>(i);
    fill(results[i].target_pairs, 1);
    fill(results[i].paraphrase_pairs, 2);
    fill(results[i].neighborhood_pairs, 10);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::aggregate(results));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(cases));
}
BENCHMARK(BM_Aggregate)->Arg(1000)->Arg(10000);

void BM_MockScore(benchmark::State& state) {
  std::vector<lmclient::MockRule> rules;
  for (int i = 0; i < 64; ++i) {
    rules.push_back({"New Fact: prompt " + std::to_string(i),
                     "Prompt: probe " + std::to_string(i),
                     "answer " + std::to_string(i), 0.9});
  }
  lmclient::ScoreRequest request;
  request.context = "New Fact: prompt 63 answer\nPrompt: probe 63";
  request.continuations = {"answer 63", "other"};
  for (auto _ : state) {
    benchmark::DoNotOptimize(lmclient::mock_score(rules, 0.01, request));
  }
}
BENCHMARK(BM_MockScore);

}  // namespace

BENCHMARK_MAIN();
