#include "ike/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ike/corpus.hpp"  // trim
#include "ike/error.hpp"
#include "ike/rng.hpp"

namespace ike::runner {
namespace {

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("config key \"" + std::string(key) + "\": expected a boolean, got \"" +
                    std::string(value) + "\"");
}

std::size_t parse_size(std::string_view key, std::string_view value) {
  try {
    std::size_t used = 0;
    std::string s(value);
    long long v = std::stoll(s, &used);
    if (used != s.size() || v < 0) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("config key \"" + std::string(key) +
                      "\": expected a non-negative integer, got \"" +
                      std::string(value) + "\"");
  }
}

std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  try {
    std::size_t used = 0;
    std::string s(value);
    unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key \"" + std::string(key) +
                      "\": expected an unsigned integer, got \"" +
                      std::string(value) + "\"");
  }
}

std::vector<double> parse_alpha_list(std::string_view value) {
  std::vector<double> out;
  std::string s(value);
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = corpus::trim(tok);
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("config key \"alpha\": bad threshold \"" + tok + "\"");
    }
  }
  if (out.empty()) throw ConfigError("config key \"alpha\": empty threshold list");
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string_view ablation_name(Ablation ablation) {
  switch (ablation) {
    case Ablation::kNone: return "none";
    case Ablation::kRandomSelection: return "random_selection";
    case Ablation::kRandomOrdering: return "random_ordering";
    case Ablation::kDropCopy: return "drop_copy";
    case Ablation::kDropUpdate: return "drop_update";
    case Ablation::kDropRetain: return "drop_retain";
    case Ablation::kPromptBaseline: return "prompt_baseline";
  }
  return "?";
}

Ablation ablation_from_name(std::string_view name) {
  for (Ablation a : {Ablation::kNone, Ablation::kRandomSelection,
                     Ablation::kRandomOrdering, Ablation::kDropCopy,
                     Ablation::kDropUpdate, Ablation::kDropRetain,
                     Ablation::kPromptBaseline}) {
    if (name == ablation_name(a)) return a;
  }
  throw ConfigError("unknown ablation \"" + std::string(name) +
                    "\" (expected one of: none, random_selection, "
                    "random_ordering, drop_copy, drop_update, drop_retain, "
                    "prompt_baseline)");
}

void RunConfig::validate() const {
  if (backend_url.empty() && mock_rules.empty()) {
    throw ConfigError("no backend configured: set backend_url or mock_rules");
  }
  if (!backend_url.empty() && !mock_rules.empty()) {
    throw ConfigError("conflicting backends: set only one of backend_url, mock_rules");
  }
  if (!embedding_file.empty() && !embedding_endpoint.empty()) {
    throw ConfigError(
        "conflicting embedding sources: set only one of embedding_file, "
        "embedding_endpoint");
  }
  if (embedding_dim == 0) throw ConfigError("embedding_dim must be >= 1");
  if (budget == 0) throw ConfigError("budget must be >= 1");
  if (length_mode != "chars") {
    throw ConfigError("unsupported length_mode \"" + length_mode +
                      "\" (this build measures budgets in chars)");
  }
  if (cka_m == 0) throw ConfigError("cka_m must be >= 1");
  if (alphas.empty()) throw ConfigError("alpha list must be non-empty");
  if (max_inflight == 0) throw ConfigError("max_inflight must be >= 1");

  // k = 0 and the zero-demonstration baseline imply each other.
  if (ablation == Ablation::kPromptBaseline && k != 0) {
    throw ConfigError("prompt_baseline requires k = 0 (got k = " +
                      std::to_string(k) + ")");
  }
  if (k == 0 && ablation != Ablation::kNone &&
      ablation != Ablation::kPromptBaseline) {
    throw ConfigError("conflicting switches: ablation " +
                      std::string(ablation_name(ablation)) +
                      " needs demonstrations, but k = 0");
  }
}

std::string RunConfig::effective_label() const {
  if (ablation != Ablation::kNone) return std::string(ablation_name(ablation));
  if (k == 0) return std::string(ablation_name(Ablation::kPromptBaseline));
  return "edit";
}

std::filesystem::path RunConfig::effective_cache_dir() const {
  const char* env = std::getenv("IKE_CACHE_DIR");
  if (env != nullptr && env[0] != '\0') return std::filesystem::path(env);
  return cache_dir;
}

void apply_override(RunConfig& config, std::string_view key,
                    std::string_view value) {
  std::string v = corpus::trim(value);
  if (key == "corpus") {
    config.corpus = v;
  } else if (key == "templama") {
    config.templama = v;
  } else if (key == "embedding_file") {
    config.embedding_file = v;
  } else if (key == "embedding_endpoint") {
    config.embedding_endpoint = v;
  } else if (key == "embedding_dim") {
    config.embedding_dim = parse_size(key, v);
  } else if (key == "k") {
    config.k = parse_size(key, v);
  } else if (key == "budget") {
    config.budget = parse_size(key, v);
  } else if (key == "length_mode") {
    config.length_mode = v;
  } else if (key == "backend_url") {
    config.backend_url = v;
  } else if (key == "mock_rules") {
    config.mock_rules = v;
  } else if (key == "cache_dir") {
    config.cache_dir = v;
  } else if (key == "max_inflight") {
    config.max_inflight = parse_size(key, v);
  } else if (key == "seed") {
    config.seed = parse_u64(key, v);
  } else if (key == "length_normalized") {
    config.length_normalized = parse_bool(key, v);
  } else if (key == "cka_m") {
    config.cka_m = parse_size(key, v);
  } else if (key == "alpha") {
    config.alphas = parse_alpha_list(v);
  } else if (key == "ablation") {
    config.ablation = ablation_from_name(v);
    if (config.ablation == Ablation::kPromptBaseline) config.k = 0;
  } else if (key == "strict") {
    config.strict = parse_bool(key, v);
  } else if (key == "dump_contexts") {
    config.dump_contexts = parse_bool(key, v);
  } else if (key == "max_cases") {
    config.max_cases = parse_size(key, v);
  } else if (key == "out") {
    config.out = v;
  } else {
    throw ConfigError("unknown config key \"" + std::string(key) + "\"");
  }
}

RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + file.string());
  RunConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string stripped = corpus::trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value, got \"" + stripped + "\"");
    }
    std::string key = corpus::trim(stripped.substr(0, eq));
    std::string value = corpus::trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    }
    try {
      apply_override(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " +
                        e.what());
    }
  }
  return config;
}

std::string resolved_config_text(const RunConfig& config) {
  std::ostringstream os;
  os << "corpus = " << config.corpus.string() << '\n';
  os << "templama = " << config.templama.string() << '\n';
  os << "embedding_file = " << config.embedding_file.string() << '\n';
  os << "embedding_endpoint = " << config.embedding_endpoint << '\n';
  os << "embedding_dim = " << config.embedding_dim << '\n';
  os << "k = " << config.k << '\n';
  os << "budget = " << config.budget << '\n';
  os << "length_mode = " << config.length_mode << '\n';
  os << "backend_url = " << config.backend_url << '\n';
  os << "mock_rules = " << config.mock_rules.string() << '\n';
  os << "cache_dir = " << config.cache_dir.string() << '\n';
  os << "max_inflight = " << config.max_inflight << '\n';
  os << "seed = " << config.seed << '\n';
  os << "length_normalized = " << (config.length_normalized ? "true" : "false") << '\n';
  os << "cka_m = " << config.cka_m << '\n';
  os << "alpha = ";
  for (std::size_t i = 0; i < config.alphas.size(); ++i) {
    if (i) os << ',';
    os << format_double(config.alphas[i]);
  }
  os << '\n';
  os << "ablation = " << ablation_name(config.ablation) << '\n';
  os << "strict = " << (config.strict ? "true" : "false") << '\n';
  os << "dump_contexts = " << (config.dump_contexts ? "true" : "false") << '\n';
  os << "max_cases = " << config.max_cases << '\n';
  os << "out = " << config.out.string() << '\n';
  return os.str();
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = rng::fnv1a64(resolved_config_text(config));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace ike::runner
