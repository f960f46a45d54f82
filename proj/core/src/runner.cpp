#include "ike/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>
#include <utility>

#include "json.hpp"

#include "ike/demobuilder.hpp"
#include "ike/error.hpp"
#include "ike/rng.hpp"

namespace ike::runner {

using nlohmann::json;

namespace {

// Stream tags keep the per-case random streams of unrelated features apart.
constexpr std::uint64_t kSelectionTag = 0x73656c656374ULL;  // "select"
constexpr std::uint64_t kOrderingTag = 0x6f72646572ULL;     // "order"
constexpr std::uint64_t kCkaTag = 0x636b61ULL;              // "cka"

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(value));
  return buf;
}

std::uint64_t case_stream(std::uint64_t seed, std::int64_t case_id,
                          std::uint64_t tag) {
  return rng::mix(rng::mix(seed, static_cast<std::uint64_t>(case_id)), tag);
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << content;
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// ---------------------------------------------------------------------------
// Worker pool
//
// Runs body(i) for i in [0, n) on up to `threads` workers.  A TransportError
// always aborts the run (the backend is gone; later cases would fail the
// same way); any other failure aborts only in strict mode, otherwise the
// case is recorded as skipped via on_skip.  Returns the aborting exception,
// or nullptr when the run completed.
std::exception_ptr run_cases(
    std::size_t n, std::size_t threads, bool strict,
    const std::function<void(std::size_t)>& body,
    const std::function<void(std::size_t, const std::string&)>& on_skip) {
  std::atomic<std::size_t> next{0};
  std::atomic<bool> fatal{false};
  std::exception_ptr abort_error;
  std::mutex abort_mutex;

  auto record_abort = [&] {
    std::lock_guard<std::mutex> lock(abort_mutex);
    if (!abort_error) abort_error = std::current_exception();
    fatal.store(true);
  };

  auto worker = [&] {
    while (!fatal.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) break;
      try {
        body(i);
      } catch (const TransportError&) {
        record_abort();
      } catch (const std::exception& error) {
        if (strict) {
          record_abort();
        } else {
          on_skip(i, error.what());
        }
      }
    }
  };

  threads = std::clamp<std::size_t>(threads, 1, n == 0 ? 1 : n);
  if (threads <= 1 || n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return abort_error;
}

// ---------------------------------------------------------------------------
// Embedding providers

class StubProvider final : public EmbeddingProvider {
 public:
  StubProvider(std::size_t dimension, std::uint64_t seed)
      : dimension_(dimension), seed_(seed) {}

  std::size_t dimension() const override { return dimension_; }

  retrieval::Vector embed(const corpus::EditRecord& record) override {
    return retrieval::stub_embed(retrieval::encode_key(record), dimension_,
                                 seed_);
  }

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

class FileProvider final : public EmbeddingProvider {
 public:
  explicit FileProvider(const std::filesystem::path& file)
      : index_(retrieval::load_embedding_file(file)), file_(file) {}

  std::size_t dimension() const override { return index_.dimension(); }

  retrieval::Vector embed(const corpus::EditRecord& record) override {
    const retrieval::Vector* vector = index_.find(record.case_id);
    if (vector == nullptr) {
      throw ValidationError("no embedding for case " +
                            std::to_string(record.case_id) + " in " +
                            file_.string());
    }
    return *vector;
  }

 private:
  retrieval::EmbeddingIndex index_;
  std::filesystem::path file_;
};

class EndpointProvider final : public EmbeddingProvider {
 public:
  EndpointProvider(std::string url, std::size_t dimension)
      : dimension_(dimension) {
    options_.url = std::move(url);
  }

  std::size_t dimension() const override { return dimension_; }

  retrieval::Vector embed(const corpus::EditRecord& record) override {
    const std::string key = retrieval::encode_key(record);
    std::lock_guard<std::mutex> lock(mutex_);
    auto hit = cache_.find(key);
    if (hit == cache_.end()) {
      fetch_locked({key});
      hit = cache_.find(key);
    }
    return hit->second;
  }

  void prefetch(std::span<const corpus::EditRecord> records) override {
    std::vector<std::string> missing;
    std::lock_guard<std::mutex> lock(mutex_);
    for (const auto& record : records) {
      std::string key = retrieval::encode_key(record);
      if (!cache_.contains(key)) missing.push_back(std::move(key));
    }
    if (!missing.empty()) fetch_locked(missing);
  }

 private:
  // Caller holds mutex_.
  void fetch_locked(const std::vector<std::string>& texts) {
    json body;
    body["texts"] = texts;
    const std::string raw = lmclient::http_post_json(options_, body.dump());
    json reply = json::parse(raw, nullptr, false);
    if (reply.is_discarded() || !reply.is_object() ||
        !reply.contains("embeddings") || !reply["embeddings"].is_array() ||
        reply["embeddings"].size() != texts.size()) {
      throw ProtocolError(
          "embedding endpoint reply is not {\"embeddings\": [...]} aligned "
          "with the request",
          raw);
    }
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const json& row = reply["embeddings"][i];
      if (!row.is_array() || row.size() != dimension_) {
        throw ProtocolError("embedding " + std::to_string(i) +
                                " is not a vector of dimension " +
                                std::to_string(dimension_),
                            raw);
      }
      retrieval::Vector vector;
      vector.reserve(dimension_);
      for (const json& entry : row) {
        if (!entry.is_number()) {
          throw ProtocolError("embedding " + std::to_string(i) +
                                  " holds a non-numeric entry",
                              raw);
        }
        vector.push_back(entry.get<float>());
      }
      cache_[texts[i]] = std::move(vector);
    }
  }

  std::size_t dimension_;
  lmclient::HttpBackendOptions options_;
  std::mutex mutex_;
  std::map<std::string, retrieval::Vector> cache_;
};

// ---------------------------------------------------------------------------
// Shared per-case machinery

demobuilder::KindRatio ratio_for(Ablation ablation) {
  demobuilder::KindRatio ratio;
  switch (ablation) {
    case Ablation::kDropCopy:
      ratio.copy_weight = 0;
      break;
    case Ablation::kDropUpdate:
      ratio.update_weight = 0;
      break;
    case Ablation::kDropRetain:
      ratio.retain_weight = 0;
      break;
    default:
      break;
  }
  return ratio;
}

struct DemoPool {
  retrieval::EmbeddingIndex index{1};
  std::map<std::int64_t, const corpus::EditRecord*> records;

  bool empty() const { return index.empty(); }
};

DemoPool build_demo_pool(const std::vector<corpus::EditRecord>& train,
                         EmbeddingProvider& embedder) {
  DemoPool pool;
  pool.index = retrieval::EmbeddingIndex(embedder.dimension());
  embedder.prefetch(train);
  for (const auto& record : train) {
    pool.index.add(record.case_id, embedder.embed(record));
    pool.records.emplace(record.case_id, &record);
  }
  return pool;
}

struct CaseContext {
  retrieval::RetrievalResult retrieved;          // descending similarity
  std::vector<demobuilder::Demonstration> demos;  // context order
  std::vector<std::string> kind_names;            // aligned with demos
};

CaseContext build_case_context(const RunConfig& config,
                               const corpus::EditRecord& record,
                               const DemoPool& pool,
                               EmbeddingProvider& embedder) {
  CaseContext out;
  if (config.k == 0) return out;

  const retrieval::Vector query = embedder.embed(record);
  if (config.ablation == Ablation::kRandomSelection) {
    rng::SplitMix gen(case_stream(config.seed, record.case_id, kSelectionTag));
    const auto picks = rng::sample_without_replacement(pool.index.size(),
                                                       config.k, gen);
    for (const std::size_t i : picks) {
      const auto& entry = pool.index.entries()[i];
      out.retrieved.neighbors.push_back(
          {entry.case_id, retrieval::cosine(entry.vector, query)});
    }
    std::sort(out.retrieved.neighbors.begin(), out.retrieved.neighbors.end(),
              [](const retrieval::ScoredNeighbor& a,
                 const retrieval::ScoredNeighbor& b) {
                if (a.similarity != b.similarity)
                  return a.similarity > b.similarity;
                return a.case_id < b.case_id;
              });
  } else {
    out.retrieved = retrieval::knn(pool.index, query, config.k);
  }

  std::vector<std::int64_t> ordered =
      retrieval::order_for_context(out.retrieved);
  if (config.ablation == Ablation::kRandomOrdering) {
    rng::SplitMix gen(case_stream(config.seed, record.case_id, kOrderingTag));
    rng::shuffle(ordered, gen);
  }

  const auto allocation =
      demobuilder::allocate_kinds(ordered.size(), ratio_for(config.ablation));
  const auto kinds = demobuilder::assign_kinds(ordered.size(), allocation);
  out.demos.reserve(ordered.size());
  out.kind_names.reserve(ordered.size());
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const corpus::EditRecord* demo_record = pool.records.at(ordered[i]);
    out.demos.push_back(
        demobuilder::build_demonstration(*demo_record, kinds[i], config.seed));
    out.kind_names.emplace_back(demobuilder::kind_name(kinds[i]));
  }
  return out;
}

std::string assemble_for_probe(const RunConfig& config,
                               const CaseContext& context,
                               const corpus::EditRecord& record,
                               const std::string& probe) {
  demobuilder::ContextPlan plan;
  plan.demonstrations = context.demos;
  plan.new_fact_prompt = corpus::render_target_prompt(record);
  plan.new_fact_answer = record.target_new;
  plan.query_probe = probe;
  return demobuilder::assemble_context(plan, config.budget);
}

ProbeLog score_probe(const RunConfig& config, lmclient::Backend& backend,
                     const std::string& scope, const std::string& probe,
                     const std::string& context,
                     const corpus::EditRecord& record) {
  lmclient::ScoreRequest request;
  request.context = context;
  request.continuations = {record.target_new, record.target_true};
  const lmclient::ScoreResult result = backend.score(request);
  ProbeLog log;
  log.scope = scope;
  log.probe = probe;
  log.lp_new = result.logprobs[0];
  log.lp_old = result.logprobs[1];
  log.p_new = lmclient::probability(result, 0, config.length_normalized);
  log.p_old = lmclient::probability(result, 1, config.length_normalized);
  return log;
}

CaseLog score_case(const RunConfig& config, const corpus::EditRecord& record,
                   const DemoPool& pool, EmbeddingProvider& embedder,
                   lmclient::Backend& backend) {
  CaseLog log;
  log.case_id = record.case_id;

  const CaseContext context = build_case_context(config, record, pool,
                                                 embedder);
  log.neighbors = context.retrieved.neighbors;
  log.kinds = context.kind_names;

  const std::string target_prompt = corpus::render_target_prompt(record);

  const std::string target_context =
      assemble_for_probe(config, context, record, target_prompt);
  log.context_digest = hex64(rng::fnv1a64(target_context));
  log.target_context = target_context;
  log.probes.push_back(score_probe(config, backend, "target", target_prompt,
                                   target_context, record));
  for (const std::string& probe : record.paraphrase_prompts) {
    log.probes.push_back(
        score_probe(config, backend, "paraphrase", probe,
                    assemble_for_probe(config, context, record, probe),
                    record));
  }
  for (const std::string& probe : record.neighborhood_prompts) {
    log.probes.push_back(
        score_probe(config, backend, "neighborhood", probe,
                    assemble_for_probe(config, context, record, probe),
                    record));
  }

  // Bare-prompt scores (no injected fact): the "before the edit" reference
  // point for the forgetting statistics.
  log.pre = score_probe(config, backend, "pre", target_prompt, target_prompt,
                        record);
  return log;
}

std::size_t effective_case_count(const RunConfig& config, std::size_t total) {
  if (config.max_cases == 0) return total;
  return std::min(total, config.max_cases);
}

void sort_skips(std::vector<SkippedCase>& skips) {
  std::sort(skips.begin(), skips.end(),
            [](const SkippedCase& a, const SkippedCase& b) {
              return std::tie(a.case_id, a.reason) <
                     std::tie(b.case_id, b.reason);
            });
}

// ---------------------------------------------------------------------------
// JSON (de)serialization of run records

json probe_to_json(const ProbeLog& probe) {
  json j;
  j["scope"] = probe.scope;
  j["probe"] = probe.probe;
  j["lp_new"] = probe.lp_new;  // -inf serializes as null
  j["lp_old"] = probe.lp_old;
  j["p_new"] = probe.p_new;
  j["p_old"] = probe.p_old;
  return j;
}

double logprob_from_json(const json& value) {
  if (value.is_null()) return lmclient::kLogZero;
  if (!value.is_number()) {
    throw ParseError("log-probability field is neither number nor null");
  }
  return value.get<double>();
}

ProbeLog probe_from_json(const json& j) {
  ProbeLog probe;
  probe.scope = j.at("scope").get<std::string>();
  probe.probe = j.at("probe").get<std::string>();
  probe.lp_new = logprob_from_json(j.at("lp_new"));
  probe.lp_old = logprob_from_json(j.at("lp_old"));
  probe.p_new = j.at("p_new").get<double>();
  probe.p_old = j.at("p_old").get<double>();
  return probe;
}

json case_to_json(const CaseLog& log) {
  json j;
  j["case_id"] = log.case_id;
  j["context_digest"] = log.context_digest;
  j["kinds"] = log.kinds;
  json neighbors = json::array();
  for (const auto& neighbor : log.neighbors) {
    json row;
    row["case_id"] = neighbor.case_id;
    row["similarity"] = neighbor.similarity;
    neighbors.push_back(std::move(row));
  }
  j["neighbors"] = std::move(neighbors);
  json probes = json::array();
  for (const auto& probe : log.probes) probes.push_back(probe_to_json(probe));
  j["probes"] = std::move(probes);
  if (log.pre) j["pre"] = probe_to_json(*log.pre);
  return j;
}

CaseLog case_from_json(const json& j) {
  CaseLog log;
  log.case_id = j.at("case_id").get<std::int64_t>();
  log.context_digest = j.at("context_digest").get<std::string>();
  log.kinds = j.at("kinds").get<std::vector<std::string>>();
  for (const json& row : j.at("neighbors")) {
    log.neighbors.push_back({row.at("case_id").get<std::int64_t>(),
                             row.at("similarity").get<double>()});
  }
  for (const json& row : j.at("probes")) {
    log.probes.push_back(probe_from_json(row));
  }
  if (j.contains("pre")) log.pre = probe_from_json(j.at("pre"));
  return log;
}

json skips_to_json(const std::vector<SkippedCase>& skips) {
  json rows = json::array();
  for (const auto& skip : skips) {
    json row;
    row["case_id"] = skip.case_id;
    row["reason"] = skip.reason;
    rows.push_back(std::move(row));
  }
  return rows;
}

json run_header(const RunConfig& config, const std::string& backend_id,
                const std::string& label) {
  json j;
  j["backend"] = backend_id;
  j["config_hash"] = config_hash(config);
  j["seed"] = config.seed;
  j["label"] = label;
  return j;
}

std::string table_row_format(const std::string& label,
                             const metrics::MetricsReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "%-18s %6.1f %6.1f %6.1f %6.1f %6.1f %6.1f %6.1f\n",
                label.c_str(), report.s, report.es, report.em, report.ps,
                report.pm, report.ns, report.nm);
  return buf;
}

std::string edit_table(const std::string& label,
                       const metrics::MetricsReport& report,
                       std::size_t cases, std::size_t skipped) {
  std::string out =
      "method                  S     ES     EM     PS     PM     NS     NM\n";
  out += table_row_format(label, report);
  char buf[128];
  std::snprintf(buf, sizeof buf, "cases: %zu  skipped: %zu\n", cases, skipped);
  out += buf;
  return out;
}

void write_jsonl(const std::filesystem::path& path,
                 const std::vector<json>& rows) {
  std::string text;
  for (const json& row : rows) {
    text += row.dump();
    text += '\n';
  }
  write_text_file(path, text);
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::vector<json> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (corpus::trim(line).empty()) continue;
    json row = json::parse(line, nullptr, false);
    if (row.is_discarded()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": invalid JSON");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void prepare_out_dir(const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("cannot create output directory " + out_dir.string() + ": " +
                  ec.message());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Providers and backends

void EmbeddingProvider::prefetch(std::span<const corpus::EditRecord>) {}

std::unique_ptr<EmbeddingProvider> make_embedding_provider(
    const RunConfig& config) {
  if (!config.embedding_file.empty()) {
    return std::make_unique<FileProvider>(config.embedding_file);
  }
  if (!config.embedding_endpoint.empty()) {
    return std::make_unique<EndpointProvider>(config.embedding_endpoint,
                                              config.embedding_dim);
  }
  return std::make_unique<StubProvider>(config.embedding_dim, config.seed);
}

std::shared_ptr<lmclient::Backend> make_backend(const RunConfig& config) {
  std::shared_ptr<lmclient::Backend> inner;
  if (!config.mock_rules.empty()) {
    inner = std::make_shared<lmclient::MockBackend>(
        lmclient::load_mock_rules(config.mock_rules));
  } else if (!config.backend_url.empty()) {
    lmclient::HttpBackendOptions options;
    options.url = config.backend_url;
    options.max_inflight = static_cast<int>(config.max_inflight);
    inner = std::make_shared<lmclient::HttpBackend>(std::move(options));
  } else {
    throw ConfigError("no backend configured: set mock_rules or backend_url");
  }
  const std::filesystem::path cache_dir = config.effective_cache_dir();
  if (!cache_dir.empty()) {
    return std::make_shared<lmclient::CachingBackend>(std::move(inner),
                                                      cache_dir);
  }
  return inner;
}

// ---------------------------------------------------------------------------
// Edit suite

EditOutcome evaluate_edit_cases(const RunConfig& config,
                                const corpus::CorpusSplit& split,
                                EmbeddingProvider& embedder,
                                lmclient::Backend& backend) {
  config.validate();

  DemoPool pool;
  if (config.k > 0) {
    if (split.train.empty()) {
      throw ValidationError(
          "demonstration pool is empty: use k = 0 or a corpus larger than "
          "the evaluation split");
    }
    pool = build_demo_pool(split.train, embedder);
  }

  const std::size_t n = effective_case_count(config, split.test.size());
  if (config.k > 0 && n > 0) {
    embedder.prefetch(std::span<const corpus::EditRecord>(split.test.data(),
                                                          n));
  }

  std::vector<std::optional<CaseLog>> slots(n);
  std::vector<std::optional<SkippedCase>> skips(n);
  std::mutex skip_mutex;

  auto body = [&](std::size_t i) {
    const corpus::EditRecord& record = split.test[i];
    if (!corpus::eligible_for_eval(record)) {
      throw ValidationError("record lacks paraphrase or neighborhood prompts");
    }
    slots[i] = score_case(config, record, pool, embedder, backend);
  };
  auto on_skip = [&](std::size_t i, const std::string& reason) {
    std::lock_guard<std::mutex> lock(skip_mutex);
    skips[i] = SkippedCase{split.test[i].case_id, reason};
  };

  EditOutcome outcome;
  outcome.abort_error =
      run_cases(n, config.max_inflight, config.strict, body, on_skip);

  for (auto& slot : slots) {
    if (slot) outcome.cases.push_back(std::move(*slot));
  }
  for (auto& skip : skips) {
    if (skip) outcome.skipped.push_back(std::move(*skip));
  }
  std::sort(outcome.cases.begin(), outcome.cases.end(),
            [](const CaseLog& a, const CaseLog& b) {
              return a.case_id < b.case_id;
            });
  sort_skips(outcome.skipped);

  if (!outcome.cases.empty()) {
    try {
      outcome.report = recompute_report(outcome.cases);
    } catch (const ValidationError&) {
      // A partial (aborted) run may lack whole probe scopes; flush the case
      // logs anyway and let the abort error surface.
      if (!outcome.abort_error) throw;
    }
  }
  return outcome;
}

metrics::MetricsReport run_edit_suite(const RunConfig& config) {
  config.validate();
  if (config.corpus.empty()) {
    throw ConfigError("corpus is required for the edit suite");
  }
  const auto strictness = config.strict ? corpus::Strictness::kStrict
                                        : corpus::Strictness::kLenient;
  corpus::ParsedCorpus parsed = corpus::parse_counterfact(config.corpus,
                                                          strictness);
  const corpus::CorpusSplit split = corpus::split(std::move(parsed.records));

  const auto embedder = make_embedding_provider(config);
  const auto backend = make_backend(config);

  EditOutcome outcome = evaluate_edit_cases(config, split, *embedder,
                                            *backend);
  for (const auto& reject : parsed.rejects) {
    outcome.skipped.push_back(
        SkippedCase{reject.case_id, "corpus: " + reject.message});
  }
  sort_skips(outcome.skipped);

  if (outcome.cases.empty()) {
    if (outcome.abort_error) std::rethrow_exception(outcome.abort_error);
    throw ValidationError("no cases were scored; nothing to report");
  }
  emit_reports(outcome, config, backend->id(), config.out);
  if (outcome.abort_error) std::rethrow_exception(outcome.abort_error);
  return outcome.report;
}

metrics::MetricsReport run_ablation(const RunConfig& config) {
  if (config.ablation == Ablation::kNone) {
    throw ConfigError("ablation run requires an ablation switch");
  }
  return run_edit_suite(config);
}

// ---------------------------------------------------------------------------
// CKA suite

namespace {

struct ForeignTemplate {
  std::string relation_id;
  std::string prompt_template;

  auto operator<=>(const ForeignTemplate&) const = default;
};

// Unique (relation, template, subject) triples over the whole corpus; the
// per-case foreign pool filters this by relation and subject.
std::vector<std::tuple<std::string, std::string, std::string>>
template_triples(const corpus::CorpusSplit& split) {
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  for (const auto* records : {&split.test, &split.train}) {
    for (const auto& record : *records) {
      seen.insert({record.relation_id, record.prompt_template, record.subject});
    }
  }
  return {seen.begin(), seen.end()};
}

std::vector<ForeignTemplate> foreign_pool(
    const std::vector<std::tuple<std::string, std::string, std::string>>&
        triples,
    const corpus::EditRecord& record) {
  std::set<ForeignTemplate> pool;
  for (const auto& [relation_id, prompt_template, subject] : triples) {
    if (relation_id == record.relation_id) continue;
    if (subject == record.subject) continue;
    pool.insert({relation_id, prompt_template});
  }
  return {pool.begin(), pool.end()};
}

}  // namespace

CkaOutcome evaluate_cka_cases(const RunConfig& config,
                              const corpus::CorpusSplit& split,
                              EmbeddingProvider& embedder,
                              lmclient::Backend& backend) {
  config.validate();

  DemoPool pool;
  if (config.k > 0) {
    if (split.train.empty()) {
      throw ValidationError(
          "demonstration pool is empty: use k = 0 or a corpus larger than "
          "the evaluation split");
    }
    pool = build_demo_pool(split.train, embedder);
  }
  const auto triples = template_triples(split);

  const std::size_t n = effective_case_count(config, split.test.size());
  std::vector<std::optional<CkaRow>> slots(n);
  std::vector<std::optional<SkippedCase>> skips(n);
  std::vector<std::string> slot_warnings(n);
  std::mutex skip_mutex;

  auto body = [&](std::size_t i) {
    const corpus::EditRecord& record = split.test[i];
    const CaseContext context =
        build_case_context(config, record, pool, embedder);

    std::vector<ForeignTemplate> foreign = foreign_pool(triples, record);
    if (foreign.empty()) {
      throw ValidationError(
          "no contrastive templates: every record shares this record's "
          "relation or subject");
    }
    if (foreign.size() > config.cka_m) {
      rng::SplitMix gen(case_stream(config.seed, record.case_id, kCkaTag));
      auto picks = rng::sample_without_replacement(foreign.size(),
                                                   config.cka_m, gen);
      std::sort(picks.begin(), picks.end());
      std::vector<ForeignTemplate> chosen;
      chosen.reserve(picks.size());
      for (const std::size_t p : picks) chosen.push_back(foreign[p]);
      foreign = std::move(chosen);
    } else if (foreign.size() < config.cka_m) {
      slot_warnings[i] = "case " + std::to_string(record.case_id) + ": only " +
                         std::to_string(foreign.size()) +
                         " contrastive templates available (wanted " +
                         std::to_string(config.cka_m) + ")";
    }

    auto probability_of = [&](const std::string& probe) {
      lmclient::ScoreRequest request;
      request.context = assemble_for_probe(config, context, record, probe);
      request.continuations = {record.target_new};
      const lmclient::ScoreResult result = backend.score(request);
      return lmclient::probability(result, 0, config.length_normalized);
    };

    CkaRow row;
    row.case_id = record.case_id;
    row.p_true = probability_of(corpus::render_target_prompt(record));
    row.p_contrastive.reserve(foreign.size());
    for (const auto& tmpl : foreign) {
      row.p_contrastive.push_back(probability_of(
          corpus::render_template(tmpl.prompt_template, record.subject)));
    }
    row.score = metrics::cka_score(row.p_true, row.p_contrastive);
    slots[i] = std::move(row);
  };
  auto on_skip = [&](std::size_t i, const std::string& reason) {
    std::lock_guard<std::mutex> lock(skip_mutex);
    skips[i] = SkippedCase{split.test[i].case_id, reason};
  };

  CkaOutcome outcome;
  outcome.abort_error =
      run_cases(n, config.max_inflight, config.strict, body, on_skip);

  for (auto& slot : slots) {
    if (slot) outcome.rows.push_back(std::move(*slot));
  }
  for (auto& skip : skips) {
    if (skip) outcome.skipped.push_back(std::move(*skip));
  }
  for (auto& warning : slot_warnings) {
    if (!warning.empty()) outcome.warnings.push_back(std::move(warning));
  }
  std::sort(outcome.rows.begin(), outcome.rows.end(),
            [](const CkaRow& a, const CkaRow& b) {
              return a.case_id < b.case_id;
            });
  sort_skips(outcome.skipped);

  if (!outcome.rows.empty()) {
    std::vector<double> scores;
    scores.reserve(outcome.rows.size());
    double sum = 0.0;
    for (const auto& row : outcome.rows) {
      scores.push_back(row.score);
      sum += row.score;
    }
    outcome.mean_score = sum / static_cast<double>(scores.size());
    for (const double alpha : config.alphas) {
      outcome.false_rates.emplace_back(
          alpha, metrics::cka_false_rate(scores, alpha));
    }
  }
  return outcome;
}

CkaOutcome run_cka_suite(const RunConfig& config) {
  config.validate();
  if (config.corpus.empty()) {
    throw ConfigError("corpus is required for the contrastive suite");
  }
  const auto strictness = config.strict ? corpus::Strictness::kStrict
                                        : corpus::Strictness::kLenient;
  corpus::ParsedCorpus parsed = corpus::parse_counterfact(config.corpus,
                                                          strictness);
  const corpus::CorpusSplit split = corpus::split(std::move(parsed.records));

  const auto embedder = make_embedding_provider(config);
  const auto backend = make_backend(config);

  CkaOutcome outcome = evaluate_cka_cases(config, split, *embedder, *backend);
  for (const auto& reject : parsed.rejects) {
    outcome.skipped.push_back(
        SkippedCase{reject.case_id, "corpus: " + reject.message});
  }
  sort_skips(outcome.skipped);

  if (outcome.rows.empty()) {
    if (outcome.abort_error) std::rethrow_exception(outcome.abort_error);
    throw ValidationError("no cases were scored; nothing to report");
  }
  emit_cka_reports(outcome, config, backend->id(), config.out);
  if (outcome.abort_error) std::rethrow_exception(outcome.abort_error);
  return outcome;
}

// ---------------------------------------------------------------------------
// Temporal suite

std::string temporal_probe(const corpus::TemporalFactRecord& record,
                           const std::string& time_label) {
  std::string base = record.query_template;
  const std::size_t placeholder = base.find("_X_");
  if (placeholder != std::string::npos) base.erase(placeholder);
  while (!base.empty() &&
         std::isspace(static_cast<unsigned char>(base.back()))) {
    base.pop_back();
  }
  return "In " + time_label + ", " + base;
}

namespace {

std::string temporal_fact_line(const corpus::TemporalFactRecord& record,
                               const corpus::TemporalFact& fact) {
  return "New Fact: " + temporal_probe(record, fact.time_label) + " " +
         fact.object;
}

// Context holding the first `facts` timeline entries, probing the first one.
std::string temporal_context(const corpus::TemporalFactRecord& record,
                             std::size_t facts) {
  std::string out;
  for (std::size_t i = 0; i < facts; ++i) {
    if (i > 0) out += '\n';
    out += temporal_fact_line(record, record.timeline[i]);
  }
  out += "\nPrompt: " + temporal_probe(record, record.timeline[0].time_label);
  return out;
}

}  // namespace

TemporalOutcome evaluate_temporal_cases(
    const RunConfig& config,
    std::span<const corpus::TemporalFactRecord> records,
    lmclient::Backend& backend) {
  const std::size_t n = effective_case_count(config, records.size());
  std::vector<std::optional<TemporalRow>> slots(n);
  std::vector<std::optional<SkippedCase>> skips(n);
  std::mutex skip_mutex;

  auto probability_of = [&](const std::string& context,
                            const std::string& candidate) {
    lmclient::ScoreRequest request;
    request.context = context;
    request.continuations = {candidate};
    const lmclient::ScoreResult result = backend.score(request);
    return lmclient::probability(result, 0, config.length_normalized);
  };

  auto body = [&](std::size_t i) {
    const corpus::TemporalFactRecord& record = records[i];
    if (record.timeline.size() < 2) {
      throw ValidationError("timeline has fewer than two facts");
    }
    const std::string& first_object = record.timeline[0].object;
    TemporalRow row;
    row.subject = record.subject;
    row.relation_id = record.relation_id;
    row.p_after_first =
        probability_of(temporal_context(record, 1), first_object);
    row.p_after_all = probability_of(
        temporal_context(record, record.timeline.size()), first_object);
    row.ratio = metrics::memorization_ratio(row.p_after_first,
                                            row.p_after_all);
    slots[i] = std::move(row);
  };
  auto on_skip = [&](std::size_t i, const std::string& reason) {
    std::lock_guard<std::mutex> lock(skip_mutex);
    skips[i] = SkippedCase{static_cast<std::int64_t>(i),
                           records[i].subject + "/" + records[i].relation_id +
                               ": " + reason};
  };

  TemporalOutcome outcome;
  outcome.abort_error =
      run_cases(n, config.max_inflight, config.strict, body, on_skip);

  for (auto& slot : slots) {
    if (slot) outcome.rows.push_back(std::move(*slot));
  }
  for (auto& skip : skips) {
    if (skip) outcome.skipped.push_back(std::move(*skip));
  }
  sort_skips(outcome.skipped);

  if (!outcome.rows.empty()) {
    double sum = 0.0;
    for (const auto& row : outcome.rows) sum += row.ratio;
    outcome.mean_ratio = sum / static_cast<double>(outcome.rows.size());
  }
  return outcome;
}

TemporalOutcome run_temporal_suite(const RunConfig& config) {
  config.validate();
  if (config.templama.empty()) {
    throw ConfigError("templama is required for the temporal suite");
  }
  const auto strictness = config.strict ? corpus::Strictness::kStrict
                                        : corpus::Strictness::kLenient;
  const corpus::ParsedTemplama parsed =
      corpus::parse_templama(config.templama, strictness);

  const auto backend = make_backend(config);

  TemporalOutcome outcome =
      evaluate_temporal_cases(config, parsed.records, *backend);
  for (const auto& reject : parsed.rejects) {
    outcome.skipped.push_back(
        SkippedCase{reject.case_id, "corpus: " + reject.message});
  }
  sort_skips(outcome.skipped);
  outcome.warnings.insert(outcome.warnings.end(), parsed.warnings.begin(),
                          parsed.warnings.end());

  if (outcome.rows.empty()) {
    if (outcome.abort_error) std::rethrow_exception(outcome.abort_error);
    throw ValidationError("no timelines were scored; nothing to report");
  }
  emit_temporal_reports(outcome, config, backend->id(), config.out);
  if (outcome.abort_error) std::rethrow_exception(outcome.abort_error);
  return outcome;
}

// ---------------------------------------------------------------------------
// Reports

void emit_reports(const EditOutcome& outcome, const RunConfig& config,
                  const std::string& backend_id,
                  const std::filesystem::path& out_dir) {
  if (outcome.cases.empty()) {
    throw ValidationError("reports require at least one scored case");
  }
  prepare_out_dir(out_dir);

  std::vector<json> case_rows;
  case_rows.reserve(outcome.cases.size());
  for (const auto& log : outcome.cases) case_rows.push_back(case_to_json(log));
  write_jsonl(out_dir / "cases.jsonl", case_rows);

  const std::string label = config.effective_label();
  json summary = run_header(config, backend_id, label);
  summary["pooling"] = "flat";
  summary["cases"] = outcome.cases.size();
  summary["skipped"] = skips_to_json(outcome.skipped);
  json m;
  m["es"] = outcome.report.es;
  m["em"] = outcome.report.em;
  m["ps"] = outcome.report.ps;
  m["pm"] = outcome.report.pm;
  m["ns"] = outcome.report.ns;
  m["nm"] = outcome.report.nm;
  m["s"] = outcome.report.s;
  summary["metrics"] = std::move(m);
  if (outcome.report.prob_drop && outcome.report.forgetting_rate) {
    json f;
    f["prob_drop"] = *outcome.report.prob_drop;
    f["forgetting_rate"] = *outcome.report.forgetting_rate;
    summary["forgetting"] = std::move(f);
  }
  write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");

  write_text_file(out_dir / "table.txt",
                  edit_table(label, outcome.report, outcome.cases.size(),
                             outcome.skipped.size()));
  write_text_file(out_dir / "resolved_config.txt",
                  resolved_config_text(config));

  if (config.dump_contexts) {
    const std::filesystem::path contexts = out_dir / "contexts";
    prepare_out_dir(contexts);
    for (const auto& log : outcome.cases) {
      if (log.target_context.empty()) continue;
      write_text_file(contexts /
                          ("case_" + std::to_string(log.case_id) + ".txt"),
                      log.target_context);
    }
  }
}

void emit_cka_reports(const CkaOutcome& outcome, const RunConfig& config,
                      const std::string& backend_id,
                      const std::filesystem::path& out_dir) {
  if (outcome.rows.empty()) {
    throw ValidationError("reports require at least one scored case");
  }
  prepare_out_dir(out_dir);

  std::vector<json> rows;
  rows.reserve(outcome.rows.size());
  for (const auto& row : outcome.rows) {
    json j;
    j["case_id"] = row.case_id;
    j["p_true"] = row.p_true;
    j["p_contrastive"] = row.p_contrastive;
    j["score"] = row.score;
    rows.push_back(std::move(j));
  }
  write_jsonl(out_dir / "cka_rows.jsonl", rows);

  json summary = run_header(config, backend_id, "cka");
  summary["cases"] = outcome.rows.size();
  summary["mean_score"] = outcome.mean_score;
  json rates = json::array();
  for (const auto& [alpha, rate] : outcome.false_rates) {
    json j;
    j["alpha"] = alpha;
    j["rate"] = rate;
    rates.push_back(std::move(j));
  }
  summary["false_rates"] = std::move(rates);
  summary["skipped"] = skips_to_json(outcome.skipped);
  summary["warnings"] = outcome.warnings;
  write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");

  std::string table;
  char buf[160];
  std::snprintf(buf, sizeof buf, "mean contrastive score: %.4f over %zu cases\n",
                outcome.mean_score, outcome.rows.size());
  table += buf;
  for (const auto& [alpha, rate] : outcome.false_rates) {
    std::snprintf(buf, sizeof buf, "false rate @ alpha %.2f: %6.1f %%\n", alpha,
                  rate);
    table += buf;
  }
  write_text_file(out_dir / "table.txt", table);
  write_text_file(out_dir / "resolved_config.txt",
                  resolved_config_text(config));
}

void emit_temporal_reports(const TemporalOutcome& outcome,
                           const RunConfig& config,
                           const std::string& backend_id,
                           const std::filesystem::path& out_dir) {
  if (outcome.rows.empty()) {
    throw ValidationError("reports require at least one scored timeline");
  }
  prepare_out_dir(out_dir);

  std::vector<json> rows;
  rows.reserve(outcome.rows.size());
  for (const auto& row : outcome.rows) {
    json j;
    j["subject"] = row.subject;
    j["relation_id"] = row.relation_id;
    j["p_after_first"] = row.p_after_first;
    j["p_after_all"] = row.p_after_all;
    j["ratio"] = row.ratio;
    rows.push_back(std::move(j));
  }
  write_jsonl(out_dir / "temporal_rows.jsonl", rows);

  json summary = run_header(config, backend_id, "temporal");
  summary["timelines"] = outcome.rows.size();
  summary["mean_memorization_ratio"] = outcome.mean_ratio;
  summary["skipped"] = skips_to_json(outcome.skipped);
  summary["warnings"] = outcome.warnings;
  write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");

  char buf[160];
  std::snprintf(buf, sizeof buf,
                "mean memorization ratio: %6.1f %% over %zu timelines\n",
                outcome.mean_ratio, outcome.rows.size());
  write_text_file(out_dir / "table.txt", buf);
  write_text_file(out_dir / "resolved_config.txt",
                  resolved_config_text(config));
}

std::vector<CaseLog> load_case_logs(const std::filesystem::path& file) {
  std::vector<CaseLog> logs;
  for (const json& row : read_jsonl(file)) {
    try {
      logs.push_back(case_from_json(row));
    } catch (const json::exception& error) {
      throw ParseError(file.string() + ": malformed case log: " +
                       error.what());
    }
  }
  return logs;
}

metrics::MetricsReport recompute_report(std::span<const CaseLog> cases) {
  std::vector<metrics::CaseResult> results;
  results.reserve(cases.size());
  std::vector<double> pre_old;
  std::vector<double> post_old;
  for (const CaseLog& log : cases) {
    metrics::CaseResult result;
    result.case_id = log.case_id;
    const double* first_target_old = nullptr;
    for (const ProbeLog& probe : log.probes) {
      const metrics::ProbePair pair{probe.p_new, probe.p_old};
      if (probe.scope == "target") {
        result.target_pairs.push_back(pair);
        if (first_target_old == nullptr) {
          first_target_old = &result.target_pairs.back().p_old;
        }
      } else if (probe.scope == "paraphrase") {
        result.paraphrase_pairs.push_back(pair);
      } else if (probe.scope == "neighborhood") {
        result.neighborhood_pairs.push_back(pair);
      } else {
        throw ValidationError("case " + std::to_string(log.case_id) +
                              ": unknown probe scope \"" + probe.scope + "\"");
      }
    }
    if (log.pre && first_target_old != nullptr) {
      pre_old.push_back(log.pre->p_old);
      post_old.push_back(*first_target_old);
    }
    results.push_back(std::move(result));
  }
  metrics::MetricsReport report = metrics::aggregate(results);
  if (!pre_old.empty()) {
    const metrics::ForgettingStats stats = metrics::forgetting(pre_old,
                                                               post_old);
    report.prob_drop = stats.prob_drop;
    report.forgetting_rate = stats.forgetting_rate;
  }
  return report;
}

void rerender_reports(const std::filesystem::path& run_dir,
                      const std::filesystem::path& out_dir) {
  const std::filesystem::path summary_path = run_dir / "summary.json";
  json old_summary = json::parse(read_text_file(summary_path), nullptr, false);
  if (old_summary.is_discarded() || !old_summary.is_object()) {
    throw ParseError(summary_path.string() + ": invalid summary JSON");
  }
  prepare_out_dir(out_dir);

  const std::filesystem::path cases_path = run_dir / "cases.jsonl";
  const std::filesystem::path cka_path = run_dir / "cka_rows.jsonl";
  const std::filesystem::path temporal_path = run_dir / "temporal_rows.jsonl";

  if (std::filesystem::exists(cases_path)) {
    const std::vector<CaseLog> logs = load_case_logs(cases_path);
    if (logs.empty()) {
      throw ValidationError(cases_path.string() + ": no case logs to render");
    }
    const metrics::MetricsReport report = recompute_report(logs);
    json summary = old_summary;
    summary["cases"] = logs.size();
    json m;
    m["es"] = report.es;
    m["em"] = report.em;
    m["ps"] = report.ps;
    m["pm"] = report.pm;
    m["ns"] = report.ns;
    m["nm"] = report.nm;
    m["s"] = report.s;
    summary["metrics"] = std::move(m);
    if (report.prob_drop && report.forgetting_rate) {
      json f;
      f["prob_drop"] = *report.prob_drop;
      f["forgetting_rate"] = *report.forgetting_rate;
      summary["forgetting"] = std::move(f);
    } else {
      summary.erase("forgetting");
    }
    write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");
    const std::string label =
        summary.contains("label") && summary["label"].is_string()
            ? summary["label"].get<std::string>()
            : "edit";
    const std::size_t skipped =
        summary.contains("skipped") && summary["skipped"].is_array()
            ? summary["skipped"].size()
            : 0;
    write_text_file(out_dir / "table.txt",
                    edit_table(label, report, logs.size(), skipped));
    return;
  }

  if (std::filesystem::exists(cka_path)) {
    std::vector<double> scores;
    for (const json& row : read_jsonl(cka_path)) {
      scores.push_back(row.at("score").get<double>());
    }
    if (scores.empty()) {
      throw ValidationError(cka_path.string() + ": no rows to render");
    }
    double sum = 0.0;
    for (const double s : scores) sum += s;
    const double mean = sum / static_cast<double>(scores.size());
    std::vector<double> alphas;
    if (old_summary.contains("false_rates")) {
      for (const json& row : old_summary["false_rates"]) {
        alphas.push_back(row.at("alpha").get<double>());
      }
    }
    json summary = old_summary;
    summary["cases"] = scores.size();
    summary["mean_score"] = mean;
    json rates = json::array();
    std::string table;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "mean contrastive score: %.4f over %zu cases\n", mean,
                  scores.size());
    table += buf;
    for (const double alpha : alphas) {
      const double rate = metrics::cka_false_rate(scores, alpha);
      json j;
      j["alpha"] = alpha;
      j["rate"] = rate;
      rates.push_back(std::move(j));
      std::snprintf(buf, sizeof buf, "false rate @ alpha %.2f: %6.1f %%\n",
                    alpha, rate);
      table += buf;
    }
    summary["false_rates"] = std::move(rates);
    write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");
    write_text_file(out_dir / "table.txt", table);
    return;
  }

  if (std::filesystem::exists(temporal_path)) {
    std::vector<double> ratios;
    for (const json& row : read_jsonl(temporal_path)) {
      ratios.push_back(row.at("ratio").get<double>());
    }
    if (ratios.empty()) {
      throw ValidationError(temporal_path.string() + ": no rows to render");
    }
    double sum = 0.0;
    for (const double r : ratios) sum += r;
    const double mean = sum / static_cast<double>(ratios.size());
    json summary = old_summary;
    summary["timelines"] = ratios.size();
    summary["mean_memorization_ratio"] = mean;
    write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "mean memorization ratio: %6.1f %% over %zu timelines\n",
                  mean, ratios.size());
    write_text_file(out_dir / "table.txt", buf);
    return;
  }

  throw IoError("no case logs found in " + run_dir.string() +
                " (expected cases.jsonl, cka_rows.jsonl, or "
                "temporal_rows.jsonl)");
}

}  // namespace ike::runner
