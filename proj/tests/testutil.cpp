#include "testutil.hpp"

#include <unistd.h>

#include <atomic>
#include <fstream>
#include <sstream>

#include "ike/error.hpp"

namespace ike::testutil {

namespace {

std::atomic<unsigned> g_temp_counter{0};

struct RelationShape {
  const char* relation_id;
  const char* prompt_template;
  const char* target_new;
  const char* target_true;
};

constexpr RelationShape kShapes[3] = {
    {"R0", "The mother tongue of {} is", "English", "French"},
    {"R1", "The genre played by {} is", "jazz", "opera"},
    {"R2", "The capital of {} is", "Paris", "Rome"},
};

}  // namespace

TempDir::TempDir(std::string_view tag) {
  const unsigned id = g_temp_counter.fetch_add(1);
  path_ = std::filesystem::temp_directory_path() /
          ("ike_test_" + std::string(tag) + "_" +
           std::to_string(static_cast<unsigned long long>(getpid())) + "_" +
           std::to_string(id));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

corpus::EditRecord make_record(std::int64_t case_id) {
  const RelationShape& shape = kShapes[static_cast<std::size_t>(case_id) % 3];
  corpus::EditRecord record;
  record.case_id = case_id;
  record.subject = "Entity" + std::to_string(case_id);
  record.relation_id = shape.relation_id;
  record.prompt_template = shape.prompt_template;
  record.target_new = shape.target_new;
  record.target_true = shape.target_true;
  record.paraphrase_prompts = {
      "In other words about " + record.subject + ", the answer is",
      "Rephrased for " + record.subject + ", one would say",
  };
  record.neighborhood_prompts = {
      "A nearby fact on Sibling" + std::to_string(case_id) + "A gives",
      "A nearby fact on Sibling" + std::to_string(case_id) + "B gives",
  };
  return record;
}

std::vector<corpus::EditRecord> make_corpus(std::size_t n) {
  std::vector<corpus::EditRecord> records;
  records.reserve(n);
  for (std::size_t i = 1; i <= n; ++i) {
    records.push_back(make_record(static_cast<std::int64_t>(i)));
  }
  return records;
}

namespace {

std::vector<lmclient::MockRule> oracle_rules(
    std::span<const corpus::EditRecord> records, bool copy_everything) {
  std::vector<lmclient::MockRule> rules;
  for (const auto& record : records) {
    const std::string prompt = corpus::render_target_prompt(record);
    const std::string fact = "New Fact: " + prompt + " " + record.target_new;
    rules.push_back({fact, "Prompt: " + prompt, record.target_new, 0.9});
    for (const auto& probe : record.paraphrase_prompts) {
      rules.push_back({fact, "Prompt: " + probe, record.target_new, 0.8});
    }
    for (const auto& probe : record.neighborhood_prompts) {
      rules.push_back({fact, "Prompt: " + probe,
                       copy_everything ? record.target_new
                                       : record.target_true,
                       0.7});
    }
  }
  return rules;
}

}  // namespace

std::vector<lmclient::MockRule> scope_aware_rules(
    std::span<const corpus::EditRecord> records) {
  return oracle_rules(records, /*copy_everything=*/false);
}

std::vector<lmclient::MockRule> copy_everything_rules(
    std::span<const corpus::EditRecord> records) {
  return oracle_rules(records, /*copy_everything=*/true);
}

std::filesystem::path write_corpus_file(
    std::span<const corpus::EditRecord> records,
    const std::filesystem::path& path) {
  corpus::write_counterfact({records.begin(), records.end()}, path);
  return path;
}

std::filesystem::path write_rules_file(
    std::span<const lmclient::MockRule> rules,
    const std::filesystem::path& path) {
  lmclient::write_mock_rules(rules, path);
  return path;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("testutil: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

runner::RunConfig base_config(const std::filesystem::path& corpus,
                              const std::filesystem::path& rules,
                              const std::filesystem::path& out_dir) {
  runner::RunConfig config;
  config.corpus = corpus;
  config.mock_rules = rules;
  config.out = out_dir;
  config.seed = 7;
  config.embedding_dim = 16;
  config.max_inflight = 4;
  return config;
}

}  // namespace ike::testutil
