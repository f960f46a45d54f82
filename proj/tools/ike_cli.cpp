// Command-line front end for the in-context knowledge-editing harness.
//
// Subcommands:
//   validate  lint a corpus (and optionally a temporal-fact file)
//   embed     write deterministic stub embeddings for a corpus
//   edit      run the full editing evaluation suite
//   ablate    same pipeline with an ablation switch applied
//   cka       contrastive over-editing assessment
//   temporal  sequential-edit memorization measurement
//   report    re-render summary/table from an existing run directory
//
// Every run subcommand accepts --config FILE plus per-key overrides; the
// override flags map 1:1 onto config-file keys, so `--k 16` and a config
// line `k = 16` are interchangeable.

#include <cstdio>
#include <exception>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "ike/config.hpp"
#include "ike/corpus.hpp"
#include "ike/error.hpp"
#include "ike/retrieval.hpp"
#include "ike/runner.hpp"

namespace {

struct ConfigBuilder {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> overrides;

  ike::runner::RunConfig build() const {
    ike::runner::RunConfig config;
    if (!config_file.empty()) {
      config = ike::runner::load_config(config_file);
    }
    for (const auto& [key, value] : overrides) {
      ike::runner::apply_override(config, key, value);
    }
    return config;
  }
};

void add_common_flags(CLI::App* cmd, ConfigBuilder& builder) {
  cmd->add_option("--config", builder.config_file,
                  "flat `key = value` configuration file");

  const auto opt = [cmd, &builder](const std::string& flag,
                                   const std::string& key,
                                   const std::string& help) {
    cmd->add_option_function<std::string>(
        flag,
        [&builder, key](const std::string& value) {
          builder.overrides.emplace_back(key, value);
        },
        help);
  };
  const auto flag = [cmd, &builder](const std::string& name,
                                    const std::string& key,
                                    const std::string& help) {
    cmd->add_flag_function(
        name,
        [&builder, key](std::int64_t) {
          builder.overrides.emplace_back(key, "true");
        },
        help);
  };

  opt("--corpus", "corpus", "edit-record corpus (JSONL or raw array)");
  opt("--templama", "templama", "temporal-fact corpus (JSONL)");
  opt("--k", "k", "demonstrations per context (0 = new-fact-only baseline)");
  opt("--seed", "seed", "random seed for selection/sampling streams");
  opt("--backend-url", "backend_url", "remote scoring endpoint URL");
  opt("--mock-rules", "mock_rules", "rule file for the mock backend");
  opt("--budget", "budget", "context length budget");
  opt("--out", "out", "output directory");
  opt("--ablation", "ablation",
      "one of: random_selection, random_ordering, drop_copy, drop_update, "
      "drop_retain, prompt_baseline");
  opt("--alpha", "alpha", "comma-separated thresholds for false-rate counts");
  opt("--embedding-file", "embedding_file",
      "precomputed embedding file (case_id<TAB>v1 v2 ...)");
  opt("--embedding-endpoint", "embedding_endpoint",
      "remote embedding endpoint URL");
  opt("--embedding-dim", "embedding_dim",
      "embedding dimension (stub and endpoint sources)");
  opt("--cache-dir", "cache_dir", "scoring cache directory");
  opt("--max-inflight", "max_inflight", "concurrent backend requests");
  opt("--max-cases", "max_cases", "cap on evaluated cases (0 = all)");
  opt("--cka-m", "cka_m", "contrastive templates per case");
  flag("--strict", "strict", "abort on the first bad record or failed case");
  flag("--dump-contexts", "dump_contexts", "write per-case context files");
  flag("--length-normalized", "length_normalized",
       "use per-token probability normalization");
}

int run_validate(const ike::runner::RunConfig& config) {
  if (config.corpus.empty() && config.templama.empty()) {
    throw ike::ConfigError("validate needs --corpus and/or --templama");
  }
  const auto strictness = config.strict ? ike::corpus::Strictness::kStrict
                                        : ike::corpus::Strictness::kLenient;
  std::size_t rejects = 0;

  if (!config.corpus.empty()) {
    const auto parsed = ike::corpus::parse_counterfact(config.corpus,
                                                       strictness);
    for (const auto& reject : parsed.rejects) {
      std::fprintf(stderr, "%s:%zu: case %lld: %s\n",
                   config.corpus.string().c_str(), reject.line,
                   static_cast<long long>(reject.case_id),
                   reject.message.c_str());
    }
    std::size_t ineligible = 0;
    for (const auto& record : parsed.records) {
      if (!ike::corpus::eligible_for_eval(record)) {
        ++ineligible;
        std::fprintf(stderr,
                     "warning: case %lld lacks %s prompts and will be "
                     "skipped during evaluation\n",
                     static_cast<long long>(record.case_id),
                     record.paraphrase_prompts.empty() ? "paraphrase"
                                                       : "neighborhood");
      }
    }
    rejects += parsed.rejects.size();
    std::printf("%s: %zu valid records, %zu rejected, %zu not fully "
                "evaluable\n",
                config.corpus.string().c_str(), parsed.records.size(),
                parsed.rejects.size(), ineligible);
  }

  if (!config.templama.empty()) {
    const auto parsed = ike::corpus::parse_templama(config.templama,
                                                    strictness);
    for (const auto& reject : parsed.rejects) {
      std::fprintf(stderr, "%s:%zu: %s\n",
                   config.templama.string().c_str(), reject.line,
                   reject.message.c_str());
    }
    for (const auto& warning : parsed.warnings) {
      std::fprintf(stderr, "warning: %s\n", warning.c_str());
    }
    rejects += parsed.rejects.size();
    std::printf("%s: %zu timelines, %zu rejected, %zu warnings\n",
                config.templama.string().c_str(), parsed.records.size(),
                parsed.rejects.size(), parsed.warnings.size());
  }
  return rejects == 0 ? 0 : 1;
}

int run_embed(const ike::runner::RunConfig& config,
              const std::string& out_file) {
  if (config.corpus.empty()) {
    throw ike::ConfigError("embed needs --corpus");
  }
  const auto strictness = config.strict ? ike::corpus::Strictness::kStrict
                                        : ike::corpus::Strictness::kLenient;
  const auto parsed = ike::corpus::parse_counterfact(config.corpus,
                                                     strictness);
  ike::retrieval::EmbeddingIndex index(config.embedding_dim);
  for (const auto& record : parsed.records) {
    index.add(record.case_id,
              ike::retrieval::stub_embed(ike::retrieval::encode_key(record),
                                         config.embedding_dim, config.seed));
  }
  ike::retrieval::write_embedding_file(index, out_file);
  std::printf("wrote %zu embeddings of dimension %zu to %s\n", index.size(),
              config.embedding_dim, out_file.c_str());
  return 0;
}

void print_edit_report(const ike::metrics::MetricsReport& report,
                       const ike::runner::RunConfig& config) {
  std::printf("S %.1f  ES %.1f  EM %.1f  PS %.1f  PM %.1f  NS %.1f  NM %.1f\n",
              report.s, report.es, report.em, report.ps, report.pm, report.ns,
              report.nm);
  if (report.prob_drop && report.forgetting_rate) {
    std::printf("prob drop %.1f  forgetting rate %.1f\n", *report.prob_drop,
                *report.forgetting_rate);
  }
  std::printf("results written to %s\n", config.out.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"in-context knowledge-editing harness"};
  app.require_subcommand(1);

  ConfigBuilder builder;
  std::string embed_out;
  std::string report_run;
  std::string report_out;

  CLI::App* validate = app.add_subcommand("validate", "lint corpus files");
  add_common_flags(validate, builder);

  CLI::App* embed = app.add_subcommand("embed",
                                       "write stub embeddings for a corpus");
  add_common_flags(embed, builder);
  embed->add_option("--embedding-out", embed_out, "output embedding file")
      ->required();

  CLI::App* edit = app.add_subcommand("edit", "run the editing suite");
  add_common_flags(edit, builder);

  CLI::App* ablate = app.add_subcommand("ablate",
                                        "run the suite with an ablation");
  add_common_flags(ablate, builder);

  CLI::App* cka = app.add_subcommand("cka",
                                     "contrastive over-editing assessment");
  add_common_flags(cka, builder);

  CLI::App* temporal = app.add_subcommand("temporal",
                                          "sequential-edit memorization");
  add_common_flags(temporal, builder);

  CLI::App* report = app.add_subcommand(
      "report", "re-render summary and table from run logs");
  report->add_option("--run", report_run, "existing run directory")
      ->required();
  report->add_option("--out", report_out,
                     "destination directory (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& error) {
    return app.exit(error);
  }

  try {
    if (validate->parsed()) return run_validate(builder.build());
    if (embed->parsed()) return run_embed(builder.build(), embed_out);
    if (edit->parsed()) {
      const auto config = builder.build();
      print_edit_report(ike::runner::run_edit_suite(config), config);
      return 0;
    }
    if (ablate->parsed()) {
      const auto config = builder.build();
      print_edit_report(ike::runner::run_ablation(config), config);
      return 0;
    }
    if (cka->parsed()) {
      const auto config = builder.build();
      const auto outcome = ike::runner::run_cka_suite(config);
      std::printf("mean contrastive score %.4f over %zu cases\n",
                  outcome.mean_score, outcome.rows.size());
      for (const auto& [alpha, rate] : outcome.false_rates) {
        std::printf("false rate @ alpha %.2f: %.1f %%\n", alpha, rate);
      }
      std::printf("results written to %s\n", config.out.string().c_str());
      return 0;
    }
    if (temporal->parsed()) {
      const auto config = builder.build();
      const auto outcome = ike::runner::run_temporal_suite(config);
      std::printf("mean memorization ratio %.1f %% over %zu timelines\n",
                  outcome.mean_ratio, outcome.rows.size());
      std::printf("results written to %s\n", config.out.string().c_str());
      return 0;
    }
    if (report->parsed()) {
      ike::runner::rerender_reports(report_run, report_out.empty()
                                                    ? report_run
                                                    : report_out);
      std::printf("re-rendered %s\n",
                  (report_out.empty() ? report_run : report_out).c_str());
      return 0;
    }
  } catch (const ike::Error& error) {
    std::fprintf(stderr, "error: %s\n", error.what());
    return 1;
  } catch (const std::exception& error) {
    std::fprintf(stderr, "unexpected error: %s\n", error.what());
    return 2;
  }
  return 2;
}
