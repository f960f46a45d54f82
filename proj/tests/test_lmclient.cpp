#include "doctest.h"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "ike/error.hpp"
#include "ike/lmclient.hpp"
#include "testutil.hpp"

using namespace ike;
using lmclient::MockRule;
using lmclient::ScoreRequest;
using lmclient::ScoreResult;

namespace {

/** Scoped environment override, restoring the prior value on destruction. */
class EnvGuard {
 public:
  EnvGuard(const char* name, const char* value) : name_(name) {
    const char* prev = std::getenv(name);
    had_ = prev != nullptr;
    if (had_) old_ = prev;
    if (value != nullptr) {
      ::setenv(name, value, 1);
    } else {
      ::unsetenv(name);
    }
  }
  ~EnvGuard() {
    if (had_) {
      ::setenv(name_.c_str(), old_.c_str(), 1);
    } else {
      ::unsetenv(name_.c_str());
    }
  }

 private:
  std::string name_;
  std::string old_;
  bool had_ = false;
};

/** Backend that counts how often it is asked, for cache-hit assertions. */
class CountingBackend : public lmclient::Backend {
 public:
  explicit CountingBackend(std::vector<double> logprobs)
      : logprobs_(std::move(logprobs)) {}

  std::string id() const override { return "counting:v1"; }

  ScoreResult score(const ScoreRequest& request) override {
    ++calls;
    ScoreResult result;
    result.logprobs = logprobs_;
    result.logprobs.resize(request.continuations.size(), -1.0);
    result.token_counts.assign(request.continuations.size(), 1);
    return result;
  }

  int calls = 0;

 private:
  std::vector<double> logprobs_;
};

/** Local scoring server plus its worker thread, stopped on destruction. */
class LocalServer {
 public:
  using Handler = std::function<void(const httplib::Request&,
                                     httplib::Response&)>;

  explicit LocalServer(Handler handler) {
    server_.Post("/score", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    REQUIRE(port_ > 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    REQUIRE(server_.is_running());
  }

  ~LocalServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/score";
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

lmclient::HttpBackendOptions fast_options(const std::string& url,
                                          int max_attempts = 3) {
  lmclient::HttpBackendOptions options;
  options.url = url;
  options.max_attempts = max_attempts;
  options.backoff_base = std::chrono::milliseconds(1);
  options.timeout = std::chrono::seconds(5);
  return options;
}

}  // namespace

TEST_CASE("mock_score applies the first rule matching all three conditions") {
  const std::vector<MockRule> rules = {
      {"New Fact: sky", "Prompt: what color", "blue", 0.9},
      {"", "Prompt: what color", "blue", 0.5},  // later catch-all, shadowed
      {"", "", "green", 0.25},                  // catch-all for green
  };

  ScoreRequest request;
  request.context = "New Fact: sky\nPrompt: what color  \n";
  request.continuations = {"blue", "green", "red"};

  const auto result = lmclient::mock_score(rules, 0.01, request);
  REQUIRE(result.logprobs.size() == 3);
  CHECK(result.logprobs[0] == doctest::Approx(std::log(0.9)));
  CHECK(result.logprobs[1] == doctest::Approx(std::log(0.25)));
  CHECK(result.logprobs[2] == doctest::Approx(std::log(0.01)));
  CHECK(result.token_counts == std::vector<int>{1, 1, 1});

  // The probe pattern anchors to the end of the trimmed context: the same
  // rule does not fire when other text follows the probe.
  ScoreRequest moved = request;
  moved.context = "New Fact: sky\nPrompt: what color\nPrompt: other";
  const auto shifted = lmclient::mock_score(rules, 0.01, moved);
  CHECK(shifted.logprobs[0] == doctest::Approx(std::log(0.01)));

  // The fact pattern may sit anywhere, but it must be present.
  ScoreRequest nofact = request;
  nofact.context = "Prompt: what color";
  const auto unmatched = lmclient::mock_score(rules, 0.01, nofact);
  CHECK(unmatched.logprobs[0] == doctest::Approx(std::log(0.5)));

  CHECK_THROWS_AS(lmclient::mock_score(rules, 0.0, request), ContractError);
  CHECK_THROWS_AS(lmclient::mock_score(rules, 1.0, request), ContractError);

  ScoreRequest empty;
  empty.context = "x";
  CHECK_THROWS_AS(lmclient::mock_score(rules, 0.01, empty), ContractError);
  empty.continuations = {"ok", ""};
  CHECK_THROWS_AS(lmclient::mock_score(rules, 0.01, empty), ContractError);
}

TEST_CASE("MockBackend validates rules and has a content-derived identity") {
  std::vector<MockRule> rules = {{"f", "p", "a", 0.9}};
  lmclient::MockBackend backend(rules);
  CHECK(backend.id().rfind("mock:", 0) == 0);
  CHECK(backend.id() == lmclient::MockBackend(rules).id());
  std::vector<MockRule> other = {{"f", "p", "a", 0.8}};
  CHECK(backend.id() != lmclient::MockBackend(other).id());

  CHECK_THROWS_AS(lmclient::MockBackend(rules, 0.9), ContractError);   // floor
  CHECK_THROWS_AS(lmclient::MockBackend(rules, 0.95), ContractError);  // >= p
  std::vector<MockRule> bad = {{"f", "p", "a", 1.5}};
  CHECK_THROWS_AS((lmclient::MockBackend(bad)), ValidationError);
  std::vector<MockRule> zero = {{"f", "p", "a", 0.0}};
  CHECK_THROWS_AS((lmclient::MockBackend(zero)), ValidationError);

  ScoreRequest request;
  request.context = "f then p";
  request.continuations = {"a"};
  CHECK(backend.score(request).logprobs[0] == doctest::Approx(std::log(0.9)));
}

TEST_CASE("mock rule files round trip, embedded newlines included") {
  testutil::TempDir dir("rules");
  const std::vector<MockRule> rules = {
      {"New Fact: a b\nPrompt: c", "Prompt: c", "yes", 0.75},
      {"", "", "no", 0.125},
  };
  lmclient::write_mock_rules(rules, dir.file("r.jsonl"));

  // One JSON object per physical line even with newlines inside patterns.
  std::ifstream in(dir.file("r.jsonl"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 2);

  const auto loaded = lmclient::load_mock_rules(dir.file("r.jsonl"));
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].fact_pattern == rules[0].fact_pattern);
  CHECK(loaded[0].probe_pattern == rules[0].probe_pattern);
  CHECK(loaded[0].answer == rules[0].answer);
  CHECK(loaded[0].probability == rules[0].probability);
  CHECK(loaded[1].answer == "no");
}

TEST_CASE("mock rule loader reports line-precise failures") {
  testutil::TempDir dir("rulesbad");
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir.file(name), std::ios::binary);
    out << body;
    return dir.file(name);
  };

  CHECK_THROWS_AS(lmclient::load_mock_rules(dir.file("absent.jsonl")),
                  IoError);
  const std::string good =
      R"({"fact_pattern":"f","probe_pattern":"p","answer":"a","probability":0.5})";
  try {
    lmclient::load_mock_rules(write("bad.jsonl", good + "\nnot json\n"));
    FAIL("expected ParseError");
  } catch (const ParseError& error) {
    CHECK(std::string(error.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(lmclient::load_mock_rules(write(
                      "missing.jsonl", R"({"fact_pattern":"f"})" "\n")),
                  ParseError);
  CHECK_THROWS_AS(
      lmclient::load_mock_rules(write(
          "range.jsonl",
          R"({"fact_pattern":"f","probe_pattern":"p","answer":"a","probability":2.0})"
          "\n")),
      ValidationError);
  // Blank lines are ignored.
  const auto rules =
      lmclient::load_mock_rules(write("blank.jsonl", "\n" + good + "\n\n"));
  CHECK(rules.size() == 1);
}

TEST_CASE("probability converts logprobs with optional normalization") {
  ScoreResult result;
  result.logprobs = {std::log(0.25), lmclient::kLogZero, std::log(0.64)};
  result.token_counts = {1, 1, 2};

  CHECK(lmclient::probability(result, 0) == doctest::Approx(0.25));
  CHECK(lmclient::probability(result, 1) == 0.0);
  CHECK(lmclient::probability(result, 2) == doctest::Approx(0.64));
  CHECK(lmclient::probability(result, 2, true) == doctest::Approx(0.8));
  CHECK(lmclient::probability(result, 1, true) == 0.0);
  CHECK_THROWS_AS(lmclient::probability(result, 3), ContractError);
}

TEST_CASE("caching backend serves repeats from disk") {
  testutil::TempDir dir("cache");
  auto inner = std::make_shared<CountingBackend>(
      std::vector<double>{std::log(0.5), std::log(0.25)});
  lmclient::CachingBackend cached(inner, dir.file("c"));
  CHECK(cached.id() == inner->id());

  ScoreRequest request;
  request.context = "ctx";
  request.continuations = {"a", "b"};

  const auto first = cached.score(request);
  CHECK(inner->calls == 1);
  const auto second = cached.score(request);
  CHECK(inner->calls == 1);  // served from disk
  CHECK(second.logprobs == first.logprobs);
  CHECK(second.token_counts == first.token_counts);

  // A fresh wrapper over the same directory still hits the stored entry.
  lmclient::CachingBackend revived(inner, dir.file("c"));
  revived.score(request);
  CHECK(inner->calls == 1);

  // Different continuations are a different entry.
  ScoreRequest other = request;
  other.continuations = {"a", "c"};
  cached.score(other);
  CHECK(inner->calls == 2);

  // Exactly one file per distinct request.
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.file("c"))) {
    (void)e;
    ++files;
  }
  CHECK(files == 2);

  CHECK_THROWS_AS(lmclient::CachingBackend(nullptr, dir.file("c2")),
                  ContractError);
}

TEST_CASE("caching backend rebuilds damaged entries and verifies on read") {
  testutil::TempDir dir("cachedmg");
  auto inner = std::make_shared<CountingBackend>(
      std::vector<double>{std::log(0.5)});
  lmclient::CachingBackend cached(inner, dir.file("c"));

  ScoreRequest request;
  request.context = "ctx";
  request.continuations = {"a"};
  cached.score(request);
  CHECK(inner->calls == 1);

  // Corrupt the single cache file; the next call falls through and repairs.
  std::filesystem::path entry;
  for (const auto& e : std::filesystem::directory_iterator(dir.file("c"))) {
    entry = e.path();
  }
  REQUIRE(!entry.empty());
  {
    std::ofstream out(entry, std::ios::binary | std::ios::trunc);
    out << "garbage";
  }
  const auto repaired = cached.score(request);
  CHECK(inner->calls == 2);
  CHECK(repaired.logprobs[0] == doctest::Approx(std::log(0.5)));
  cached.score(request);
  CHECK(inner->calls == 2);  // repaired entry serves again

  // A colliding file whose stored request differs is not trusted.
  {
    std::ofstream out(entry, std::ios::binary | std::ios::trunc);
    out << R"({"backend_id":"counting:v1","context":"OTHER","continuations":)"
        << R"(["a"],"logprobs":[-9.9],"token_counts":[1]})";
  }
  const auto fresh = cached.score(request);
  CHECK(inner->calls == 3);
  CHECK(fresh.logprobs[0] == doctest::Approx(std::log(0.5)));
}

TEST_CASE("caching backend preserves the impossible-candidate marker") {
  testutil::TempDir dir("cacheinf");
  auto inner = std::make_shared<CountingBackend>(
      std::vector<double>{lmclient::kLogZero});
  lmclient::CachingBackend cached(inner, dir.file("c"));

  ScoreRequest request;
  request.context = "ctx";
  request.continuations = {"a"};
  CHECK(cached.score(request).logprobs[0] == lmclient::kLogZero);
  const auto from_disk = cached.score(request);
  CHECK(inner->calls == 1);
  CHECK(from_disk.logprobs[0] == lmclient::kLogZero);
}

TEST_CASE("http backend round trips a scoring request") {
  EnvGuard token("IKE_BACKEND_TOKEN", "sekrit");
  std::string seen_auth;
  std::string seen_body;
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = req.body;
    res.set_content(
        R"({"logprobs": [-0.5, null], "token_counts": [2, 1]})",
        "application/json");
  });

  lmclient::HttpBackend backend(fast_options(server.url()));
  CHECK(backend.id() == "http:" + server.url());

  ScoreRequest request;
  request.context = "New Fact: x\nPrompt: y";
  request.continuations = {"a", "b"};
  const auto result = backend.score(request);

  REQUIRE(result.logprobs.size() == 2);
  CHECK(result.logprobs[0] == doctest::Approx(-0.5));
  CHECK(result.logprobs[1] == lmclient::kLogZero);
  CHECK(result.token_counts == std::vector<int>{2, 1});
  CHECK(seen_auth == "Bearer sekrit");
  CHECK(seen_body ==
        R"({"context":"New Fact: x\nPrompt: y","continuations":["a","b"]})");
}

TEST_CASE("http backend omits auth when the token variable is unset") {
  EnvGuard token("IKE_BACKEND_TOKEN", nullptr);
  std::string seen_auth = "unset";
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.has_header("Authorization")
                    ? req.get_header_value("Authorization")
                    : "";
    res.set_content(R"({"logprobs": [-1.0]})", "application/json");
  });

  lmclient::HttpBackend backend(fast_options(server.url()));
  ScoreRequest request;
  request.context = "c";
  request.continuations = {"a"};
  const auto result = backend.score(request);
  CHECK(seen_auth.empty());
  CHECK(result.token_counts == std::vector<int>{1});  // default when absent
}

TEST_CASE("http backend retries server errors and then succeeds") {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    if (++hits <= 2) {
      res.status = 503;
      res.set_content("busy", "text/plain");
      return;
    }
    res.set_content(R"({"logprobs": [-0.25]})", "application/json");
  });

  lmclient::HttpBackend backend(fast_options(server.url(), 3));
  ScoreRequest request;
  request.context = "c";
  request.continuations = {"a"};
  const auto result = backend.score(request);
  CHECK(hits == 3);
  CHECK(result.logprobs[0] == doctest::Approx(-0.25));
}

TEST_CASE("http backend surfaces a spent retry budget as TransportError") {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 500;
  });

  lmclient::HttpBackend backend(fast_options(server.url(), 2));
  ScoreRequest request;
  request.context = "c";
  request.continuations = {"a"};
  try {
    backend.score(request);
    FAIL("expected TransportError");
  } catch (const TransportError& error) {
    CHECK(error.attempts() == 2);
    CHECK(hits == 2);
  }
}

TEST_CASE("http backend treats client errors as protocol failures") {
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    res.status = 400;
    res.set_content("bad request body", "text/plain");
  });

  lmclient::HttpBackend backend(fast_options(server.url()));
  ScoreRequest request;
  request.context = "c";
  request.continuations = {"a"};
  try {
    backend.score(request);
    FAIL("expected ProtocolError");
  } catch (const ProtocolError& error) {
    CHECK(error.payload() == "bad request body");
  }
}

TEST_CASE("http backend rejects malformed response bodies") {
  std::string body;
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    res.set_content(body, "application/json");
  });
  lmclient::HttpBackend backend(fast_options(server.url()));
  ScoreRequest request;
  request.context = "c";
  request.continuations = {"a", "b"};

  body = "not json at all";
  CHECK_THROWS_AS(backend.score(request), ProtocolError);
  body = R"({"scores": [1, 2]})";
  CHECK_THROWS_AS(backend.score(request), ProtocolError);
  body = R"({"logprobs": [-1.0]})";  // wrong arity
  CHECK_THROWS_AS(backend.score(request), ProtocolError);
  body = R"({"logprobs": [-1.0, "x"]})";
  CHECK_THROWS_AS(backend.score(request), ProtocolError);
  body = R"({"logprobs": [-1.0, -2.0], "token_counts": [1]})";
  CHECK_THROWS_AS(backend.score(request), ProtocolError);
  body = R"({"logprobs": [-1.0, -2.0], "token_counts": [1, 0]})";
  CHECK_THROWS_AS(backend.score(request), ProtocolError);
}

TEST_CASE("http backend validates its configuration up front") {
  CHECK_THROWS_AS(lmclient::HttpBackend(fast_options("")), ConfigError);
  CHECK_THROWS_AS(lmclient::HttpBackend(fast_options("no-scheme:8080/x")),
                  ConfigError);
}

TEST_CASE("http backend reports unreachable hosts as TransportError") {
  // Bind a port, then close the listener so nothing answers it.
  int dead_port = 0;
  {
    httplib::Server probe;
    dead_port = probe.bind_to_any_port("127.0.0.1");
  }
  REQUIRE(dead_port > 0);

  auto options =
      fast_options("http://127.0.0.1:" + std::to_string(dead_port), 2);
  options.timeout = std::chrono::seconds(1);
  lmclient::HttpBackend backend(options);
  ScoreRequest request;
  request.context = "c";
  request.continuations = {"a"};
  CHECK_THROWS_AS(backend.score(request), TransportError);
}
