#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <memory>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "seqforge/errors.hpp"
#include "seqforge/gateway.hpp"
#include "test_util.hpp"

using namespace seqforge;

namespace {

CompletionRequest user_request(const std::string& text) {
  CompletionRequest request;
  request.model = "test-model";
  request.messages = {{"user", text}};
  request.temperature = 0.7;
  request.max_tokens = 64;
  return request;
}

RetryPolicy fast_retry(int attempts = 4) {
  RetryPolicy policy;
  policy.max_attempts = attempts;
  policy.initial_delay = std::chrono::milliseconds(1);
  policy.max_delay = std::chrono::milliseconds(4);
  return policy;
}

// Thread-safe deterministic backend: the reply is a function of the request,
// so results do not depend on scheduling. Exercises the parallel batch path.
class EchoBackend : public Backend {
 public:
  bool serial() const override { return false; }

 private:
  Completion do_send(const CompletionRequest& request) override {
    if (request.messages.back().content.find("poison") != std::string::npos) {
      throw AuthError("poisoned request");
    }
    Completion completion;
    completion.text = "echo:" + request.messages.back().content;
    return completion;
  }
};

}  // namespace

TEST_CASE("cache key changes with any request field") {
  CompletionRequest base = user_request("hello");
  CHECK(CacheKey::of(base).hex() == CacheKey::of(base).hex());

  CompletionRequest other = base;
  other.model = "other";
  CHECK(CacheKey::of(other).hex() != CacheKey::of(base).hex());
  other = base;
  other.temperature = 0.0;
  CHECK(CacheKey::of(other).hex() != CacheKey::of(base).hex());
  other = base;
  other.max_tokens = 65;
  CHECK(CacheKey::of(other).hex() != CacheKey::of(base).hex());
  other = base;
  other.seed = 1;
  CHECK(CacheKey::of(other).hex() != CacheKey::of(base).hex());
  other = base;
  other.messages[0].content = "hello!";
  CHECK(CacheKey::of(other).hex() != CacheKey::of(base).hex());
}

TEST_CASE("scripted backend pops replies in order and exhausts") {
  auto backend = std::make_shared<ScriptedBackend>(std::vector<std::string>{"alpha", "beta"});
  Gateway gateway(backend, fast_retry());
  CHECK(gateway.complete(user_request("a")).text == "alpha");
  CHECK(gateway.complete(user_request("b")).text == "beta");
  CHECK_THROWS_AS(gateway.complete(user_request("c")), ScriptExhausted);
}

TEST_CASE("scripted fixture file drives text and failures") {
  test::TempDir dir;
  test::write_file(dir.file("script.jsonl"),
                   "\"plain\"\n"
                   "{\"text\": \"wrapped\"}\n"
                   "{\"error\": \"transient\"}\n"
                   "{\"text\": \"after-retry\"}\n");
  auto backend = ScriptedBackend::from_jsonl(dir.file("script.jsonl"));
  Gateway gateway(backend, fast_retry());
  CHECK(gateway.complete(user_request("1")).text == "plain");
  CHECK(gateway.complete(user_request("2")).text == "wrapped");
  // Transient entry consumed, then the retry pops the next entry.
  CHECK(gateway.complete(user_request("3")).text == "after-retry");
  CHECK(backend->calls() == 4);
}

TEST_CASE("cache returns stored text without touching the backend") {
  test::TempDir dir;
  auto backend = std::make_shared<ScriptedBackend>(std::vector<std::string>{"only-reply"});
  auto cache = std::make_shared<ResponseCache>(dir.file("cache"));
  Gateway gateway(backend, fast_retry(), cache);

  Completion first = gateway.complete(user_request("same"));
  CHECK(first.text == "only-reply");
  CHECK_FALSE(first.cached);
  CHECK(backend->calls() == 1);

  Completion second = gateway.complete(user_request("same"));
  CHECK(second.text == "only-reply");
  CHECK(second.cached);
  CHECK(backend->calls() == 1);  // cache soundness: no backend contact
}

TEST_CASE("cache persists across gateway instances") {
  test::TempDir dir;
  auto cache_path = dir.file("cache");
  {
    auto backend = std::make_shared<ScriptedBackend>(std::vector<std::string>{"persisted"});
    Gateway gateway(backend, fast_retry(), std::make_shared<ResponseCache>(cache_path));
    CHECK(gateway.complete(user_request("q")).text == "persisted");
  }
  auto backend = std::make_shared<ScriptedBackend>(std::vector<std::string>{});
  Gateway gateway(backend, fast_retry(), std::make_shared<ResponseCache>(cache_path));
  Completion hit = gateway.complete(user_request("q"));
  CHECK(hit.text == "persisted");
  CHECK(hit.cached);
  CHECK(backend->calls() == 0);
}

TEST_CASE("auth errors are not retried") {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->push_error("auth");
  backend->push_text("never reached");
  Gateway gateway(backend, fast_retry());
  CHECK_THROWS_AS(gateway.complete(user_request("x")), AuthError);
  CHECK(backend->calls() == 1);
}

TEST_CASE("transient failures exhaust into BackendExhausted") {
  auto backend = std::make_shared<ScriptedBackend>();
  for (int i = 0; i < 3; ++i) {
    backend->push_error("transient");
  }
  Gateway gateway(backend, fast_retry(3));
  CHECK_THROWS_AS(gateway.complete(user_request("x")), BackendExhausted);
  CHECK(backend->calls() == 3);
}

TEST_CASE("retry delays are non-decreasing and capped") {
  RetryPolicy policy;
  policy.max_attempts = 10;
  policy.initial_delay = std::chrono::milliseconds(100);
  policy.multiplier = 2.0;
  policy.max_delay = std::chrono::milliseconds(1500);
  auto previous = std::chrono::milliseconds(0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    auto delay = policy.delay(attempt);
    CHECK(delay >= previous);
    CHECK(delay <= policy.max_delay);
    previous = delay;
  }
  CHECK(policy.delay(0) == std::chrono::milliseconds(100));
  CHECK(policy.delay(1) == std::chrono::milliseconds(200));
  CHECK(policy.delay(4) == std::chrono::milliseconds(1500));
}

TEST_CASE("invalid requests are rejected before any backend call") {
  auto backend = std::make_shared<ScriptedBackend>(std::vector<std::string>{"r"});
  Gateway gateway(backend, fast_retry());
  CompletionRequest empty;
  empty.model = "m";
  CHECK_THROWS_AS(gateway.complete(empty), InvalidRequest);
  CompletionRequest wrong_tail = user_request("x");
  wrong_tail.messages.push_back({"assistant", "y"});
  CHECK_THROWS_AS(gateway.complete(wrong_tail), InvalidRequest);
  CHECK(backend->calls() == 0);
}

TEST_CASE("scripted batch outputs are independent of max_in_flight") {
  std::vector<CompletionRequest> requests = {user_request("1"), user_request("2"),
                                             user_request("3")};
  std::vector<std::vector<std::string>> outputs;
  for (int k : {1, 2, 3}) {
    auto backend =
        std::make_shared<ScriptedBackend>(std::vector<std::string>{"alpha", "beta", "gamma"});
    Gateway gateway(backend, fast_retry());
    auto results = gateway.complete_batch(requests, k);
    REQUIRE(results.size() == 3);
    std::vector<std::string> texts;
    for (const auto& item : results) {
      REQUIRE(item.ok());
      texts.push_back(item.completion->text);
    }
    outputs.push_back(texts);
  }
  CHECK(outputs[0] == std::vector<std::string>{"alpha", "beta", "gamma"});
  CHECK(outputs[1] == outputs[0]);
  CHECK(outputs[2] == outputs[0]);
}

TEST_CASE("batch records per-slot failures without aborting") {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->push_text("ok");
  backend->push_error("auth");
  Gateway gateway(backend, fast_retry());
  auto results = gateway.complete_batch({user_request("1"), user_request("2")}, 1);
  REQUIRE(results.size() == 2);
  CHECK(results[0].ok());
  CHECK(results[0].completion->text == "ok");
  CHECK_FALSE(results[1].ok());
  CHECK(results[1].error.find("auth") != std::string::npos);
}

TEST_CASE("parallel batch keeps input order with a concurrent backend") {
  auto backend = std::make_shared<EchoBackend>();
  Gateway gateway(backend, fast_retry());
  std::vector<CompletionRequest> requests;
  for (int i = 0; i < 16; ++i) {
    requests.push_back(user_request(std::to_string(i)));
  }
  requests[5].messages[0].content = "poison 5";
  auto results = gateway.complete_batch(requests, 4);
  REQUIRE(results.size() == 16);
  for (int i = 0; i < 16; ++i) {
    if (i == 5) {
      CHECK_FALSE(results[i].ok());
    } else {
      REQUIRE(results[i].ok());
      CHECK(results[i].completion->text == "echo:" + std::to_string(i));
    }
  }
  CHECK_THROWS_AS(gateway.complete_batch(requests, 0), InvalidRequest);
}

TEST_CASE("http backend speaks the chat completion protocol") {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    int hit = ++hits;
    if (req.get_header_value("Authorization") != "Bearer sk-test") {
      res.status = 401;
      res.set_content("{}", "application/json");
      return;
    }
    if (hit == 1) {
      res.status = 503;  // first call fails, exercising the retry path
      res.set_content("busy", "text/plain");
      return;
    }
    auto body = nlohmann::json::parse(req.body);
    REQUIRE(body.at("model") == "test-model");
    REQUIRE(body.at("messages").size() == 1);
    nlohmann::json reply = {
        {"choices",
         {{{"message", {{"content", "pong:" + body.at("messages")[0].at("content").get<std::string>()}}},
           {"finish_reason", "stop"}}}}};
    res.set_content(reply.dump(), "application/json");
  });

  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpBackendConfig config;
  config.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  config.api_key = "sk-test";
  Gateway gateway(std::make_shared<HttpBackend>(config), fast_retry());
  Completion completion = gateway.complete(user_request("ping"));
  CHECK(completion.text == "pong:ping");
  CHECK(hits.load() == 2);

  HttpBackendConfig bad = config;
  bad.api_key = "wrong";
  Gateway denied(std::make_shared<HttpBackend>(bad), fast_retry());
  CHECK_THROWS_AS(denied.complete(user_request("ping")), AuthError);

  server.stop();
  server_thread.join();
}
