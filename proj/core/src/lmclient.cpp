#include "ike/lmclient.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <semaphore>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "ike/corpus.hpp"  // trim
#include "ike/error.hpp"
#include "ike/rng.hpp"

namespace ike::lmclient {
namespace {

using nlohmann::json;

void validate_request(const ScoreRequest& request) {
  if (request.continuations.empty()) {
    throw ContractError("score: candidate list is empty");
  }
  for (const std::string& c : request.continuations) {
    if (c.empty()) throw ContractError("score: empty candidate text");
  }
}

std::string_view rtrim_ws(std::string_view text) {
  std::size_t end = text.find_last_not_of(" \t\r\n\v\f");
  if (end == std::string_view::npos) return {};
  return text.substr(0, end + 1);
}

/** Unambiguous length-prefixed encoding of the request for hashing. */
std::string cache_key_material(const std::string& backend_id,
                               const ScoreRequest& request) {
  std::string material;
  auto append = [&material](const std::string& part) {
    material += std::to_string(part.size());
    material += ':';
    material += part;
    material += ';';
  };
  append(backend_id);
  append(request.context);
  for (const std::string& c : request.continuations) append(c);
  return material;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return std::string(buf);
}

json rules_to_json(std::span<const MockRule> rules) {
  json arr = json::array();
  for (const MockRule& r : rules) {
    arr.push_back({{"fact_pattern", r.fact_pattern},
                   {"probe_pattern", r.probe_pattern},
                   {"answer", r.answer},
                   {"probability", r.probability}});
  }
  return arr;
}

}  // namespace

// ---------------------------------------------------------------------------
// Mock backend

ScoreResult mock_score(std::span<const MockRule> rules, double default_floor,
                       const ScoreRequest& request) {
  validate_request(request);
  if (!(default_floor > 0.0 && default_floor < 1.0)) {
    throw ContractError("mock_score: default_floor must be in (0, 1)");
  }
  std::string_view trimmed_context = rtrim_ws(request.context);

  ScoreResult result;
  result.logprobs.reserve(request.continuations.size());
  result.token_counts.assign(request.continuations.size(), 1);
  for (const std::string& candidate : request.continuations) {
    double p = default_floor;
    for (const MockRule& rule : rules) {
      if (candidate != rule.answer) continue;
      if (request.context.find(rule.fact_pattern) == std::string::npos) continue;
      if (trimmed_context.size() < rule.probe_pattern.size()) continue;
      if (trimmed_context.compare(trimmed_context.size() - rule.probe_pattern.size(),
                                  rule.probe_pattern.size(),
                                  rule.probe_pattern) != 0) {
        continue;
      }
      p = rule.probability;  // first matching rule wins
      break;
    }
    result.logprobs.push_back(std::log(p));
  }
  return result;
}

MockBackend::MockBackend(std::vector<MockRule> rules, double default_floor)
    : rules_(std::move(rules)), default_floor_(default_floor) {
  if (!(default_floor_ > 0.0 && default_floor_ < 1.0)) {
    throw ContractError("mock backend: default_floor must be in (0, 1)");
  }
  for (const MockRule& r : rules_) {
    if (!(r.probability > 0.0 && r.probability <= 1.0)) {
      throw ValidationError("mock rule probability must be in (0, 1]");
    }
    if (default_floor_ >= r.probability) {
      throw ContractError(
          "mock backend: default_floor must stay below every rule probability");
    }
  }
  id_ = "mock:" + hex64(rng::mix(rng::fnv1a64(rules_to_json(rules_).dump()),
                                 rng::fnv1a64(std::to_string(default_floor_))));
}

ScoreResult MockBackend::score(const ScoreRequest& request) {
  return mock_score(rules_, default_floor_, request);
}

std::vector<MockRule> load_mock_rules(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open mock rule file: " + file.string());
  std::vector<MockRule> rules;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (corpus::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("mock rule line " + std::to_string(line_no) +
                       ": invalid JSON: " + e.what());
    }
    MockRule rule;
    try {
      rule.fact_pattern = j.at("fact_pattern").get<std::string>();
      rule.probe_pattern = j.at("probe_pattern").get<std::string>();
      rule.answer = j.at("answer").get<std::string>();
      rule.probability = j.at("probability").get<double>();
    } catch (const json::exception& e) {
      throw ParseError("mock rule line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    if (!(rule.probability > 0.0 && rule.probability <= 1.0)) {
      throw ValidationError("mock rule line " + std::to_string(line_no) +
                            ": probability must be in (0, 1]");
    }
    rules.push_back(std::move(rule));
  }
  return rules;
}

void write_mock_rules(std::span<const MockRule> rules,
                      const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write mock rule file: " + file.string());
  for (const MockRule& r : rules) {
    json j = {{"fact_pattern", r.fact_pattern},
              {"probe_pattern", r.probe_pattern},
              {"answer", r.answer},
              {"probability", r.probability}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + file.string());
}

// ---------------------------------------------------------------------------
// Remote backend

namespace {

struct ParsedUrl {
  std::string base;  // scheme://host[:port]
  std::string path;  // begins with '/'
};

ParsedUrl parse_url(const std::string& url) {
  std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("backend url must include a scheme: " + url);
  }
  std::size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

std::string http_post_json(const HttpBackendOptions& options,
                           const std::string& body) {
  ParsedUrl url = parse_url(options.url);

  httplib::Headers headers;
  if (!options.auth_env.empty()) {
    const char* token = std::getenv(options.auth_env.c_str());
    if (token != nullptr && token[0] != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  std::string last_error;
  for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
    if (attempt > 1) {
      auto delay = options.backoff_base * (1 << (attempt - 2));
      std::this_thread::sleep_for(delay);
    }
    httplib::Client client(url.base);
    client.set_connection_timeout(options.timeout);
    client.set_read_timeout(options.timeout);
    client.set_write_timeout(options.timeout);

    httplib::Result res =
        client.Post(url.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {  // transient server trouble: retry
      last_error = "server error: HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw ProtocolError("backend answered HTTP " + std::to_string(res->status),
                          res->body);
    }
    return res->body;
  }
  throw TransportError("backend unreachable after " +
                           std::to_string(options.max_attempts) +
                           " attempts (" + last_error + "): " + options.url,
                       options.max_attempts);
}

struct HttpBackend::Impl {
  HttpBackendOptions options;
  std::counting_semaphore<4096> inflight;

  explicit Impl(HttpBackendOptions opts)
      : options(std::move(opts)),
        inflight(options.max_inflight > 0 ? options.max_inflight : 1) {}
};

HttpBackend::HttpBackend(HttpBackendOptions options)
    : impl_(std::make_unique<Impl>(std::move(options))) {
  if (impl_->options.url.empty()) throw ConfigError("backend url is empty");
  parse_url(impl_->options.url);  // validate shape up front
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::id() const { return "http:" + impl_->options.url; }

ScoreResult HttpBackend::score(const ScoreRequest& request) {
  validate_request(request);
  json body = {{"context", request.context},
               {"continuations", request.continuations}};

  impl_->inflight.acquire();
  std::string payload;
  try {
    payload = http_post_json(impl_->options, body.dump());
  } catch (...) {
    impl_->inflight.release();
    throw;
  }
  impl_->inflight.release();

  json resp;
  try {
    resp = json::parse(payload);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("unparseable backend response: ") + e.what(),
                        payload);
  }
  if (!resp.is_object() || !resp.contains("logprobs") ||
      !resp.at("logprobs").is_array()) {
    throw ProtocolError("backend response lacks a logprobs array", payload);
  }
  const json& lps = resp.at("logprobs");
  if (lps.size() != request.continuations.size()) {
    throw ProtocolError("backend returned " + std::to_string(lps.size()) +
                            " logprobs for " +
                            std::to_string(request.continuations.size()) +
                            " candidates",
                        payload);
  }

  ScoreResult result;
  result.logprobs.reserve(lps.size());
  for (const json& v : lps) {
    if (v.is_null()) {
      result.logprobs.push_back(kLogZero);  // impossible-candidate marker
    } else if (v.is_number()) {
      result.logprobs.push_back(v.get<double>());
    } else {
      throw ProtocolError("logprob entry is not a number", payload);
    }
  }
  result.token_counts.assign(lps.size(), 1);
  if (resp.contains("token_counts")) {
    const json& tcs = resp.at("token_counts");
    if (!tcs.is_array() || tcs.size() != lps.size()) {
      throw ProtocolError("token_counts misaligned with logprobs", payload);
    }
    for (std::size_t i = 0; i < tcs.size(); ++i) {
      if (!tcs[i].is_number_integer() || tcs[i].get<int>() < 1) {
        throw ProtocolError("token_counts entry is not a positive integer",
                            payload);
      }
      result.token_counts[i] = tcs[i].get<int>();
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Disk cache

struct CachingBackend::Impl {
  std::shared_ptr<Backend> inner;
  std::filesystem::path dir;
  std::mutex mutex;
};

CachingBackend::CachingBackend(std::shared_ptr<Backend> inner,
                               std::filesystem::path cache_dir)
    : impl_(std::make_shared<Impl>()) {
  if (!inner) throw ContractError("caching backend: inner backend is null");
  impl_->inner = std::move(inner);
  impl_->dir = std::move(cache_dir);
  std::error_code ec;
  std::filesystem::create_directories(impl_->dir, ec);
  if (ec) throw IoError("cannot create cache directory: " + impl_->dir.string());
}

std::string CachingBackend::id() const { return impl_->inner->id(); }

ScoreResult CachingBackend::score(const ScoreRequest& request) {
  validate_request(request);
  const std::string backend_id = impl_->inner->id();
  const std::string material = cache_key_material(backend_id, request);
  const std::filesystem::path file =
      impl_->dir / (hex64(rng::fnv1a64(material)) + ".json");

  {
    std::lock_guard<std::mutex> lock(impl_->mutex);
    std::ifstream in(file, std::ios::binary);
    if (in) {
      try {
        json j = json::parse(in);
        if (j.at("backend_id").get<std::string>() == backend_id &&
            j.at("context").get<std::string>() == request.context &&
            j.at("continuations").get<std::vector<std::string>>() ==
                request.continuations) {
          ScoreResult cached;
          for (const json& v : j.at("logprobs")) {
            cached.logprobs.push_back(v.is_null() ? kLogZero : v.get<double>());
          }
          cached.token_counts = j.at("token_counts").get<std::vector<int>>();
          if (cached.logprobs.size() == request.continuations.size() &&
              cached.token_counts.size() == request.continuations.size()) {
            return cached;
          }
        }
      } catch (const json::exception&) {
        // Damaged entry: fall through and rebuild it.
      }
    }
  }

  ScoreResult fresh = impl_->inner->score(request);

  json j;
  j["backend_id"] = backend_id;
  j["context"] = request.context;
  j["continuations"] = request.continuations;
  j["logprobs"] = fresh.logprobs;  // -inf serializes as null, restored on read
  j["token_counts"] = fresh.token_counts;

  std::lock_guard<std::mutex> lock(impl_->mutex);
  std::filesystem::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write cache entry: " + tmp.string());
    out << j.dump();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, file, ec);
  if (ec) throw IoError("cannot finalize cache entry: " + file.string());
  return fresh;
}

// ---------------------------------------------------------------------------

double probability(const ScoreResult& result, std::size_t index,
                   bool length_normalized) {
  if (index >= result.logprobs.size()) {
    throw ContractError("probability: index out of range");
  }
  double lp = result.logprobs[index];
  if (lp == kLogZero) return 0.0;
  if (length_normalized) {
    int tokens = 1;
    if (index < result.token_counts.size() && result.token_counts[index] > 0) {
      tokens = result.token_counts[index];
    }
    return std::exp(lp / static_cast<double>(tokens));
  }
  return std::exp(lp);
}

}  // namespace ike::lmclient
