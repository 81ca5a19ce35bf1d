#include "seqforge/gateway.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "seqforge/errors.hpp"
#include "seqforge/hash.hpp"

namespace seqforge {

using nlohmann::json;

namespace fs = std::filesystem;

CacheKey CacheKey::of(const CompletionRequest& request) {
  json canonical;
  canonical["model"] = request.model;
  json messages = json::array();
  for (const auto& message : request.messages) {
    messages.push_back({{"role", message.role}, {"content", message.content}});
  }
  canonical["messages"] = messages;
  canonical["temperature"] = request.temperature;
  canonical["max_tokens"] = request.max_tokens;
  canonical["seed"] = request.seed ? json(*request.seed) : json(nullptr);

  Sha256 hasher;
  hasher.update(canonical.dump());
  CacheKey key;
  key.digest = hasher.finish();
  return key;
}

std::string CacheKey::hex() const { return to_hex(digest); }

ScriptedBackend::ScriptedBackend(std::vector<std::string> replies) {
  for (auto& reply : replies) {
    queue_.push_back({std::move(reply), ""});
  }
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open script fixture: " + path);
  }
  auto backend = std::make_shared<ScriptedBackend>();
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    json value;
    try {
      value = json::parse(line);
    } catch (const json::exception& ex) {
      throw SchemaError(std::string("invalid script line: ") + ex.what(), index);
    }
    if (value.is_string()) {
      backend->push_text(value.get<std::string>());
    } else if (value.is_object() && value.contains("text")) {
      backend->push_text(value.at("text").get<std::string>());
    } else if (value.is_object() && value.contains("error")) {
      backend->push_error(value.at("error").get<std::string>());
    } else {
      throw SchemaError("script line must be a string, {\"text\"} or {\"error\"}", index);
    }
    ++index;
  }
  return backend;
}

void ScriptedBackend::push_text(std::string text) {
  std::lock_guard<std::mutex> lock(mutex_);
  queue_.push_back({std::move(text), ""});
}

void ScriptedBackend::push_error(std::string kind) {
  std::lock_guard<std::mutex> lock(mutex_);
  queue_.push_back({"", std::move(kind)});
}

std::size_t ScriptedBackend::remaining() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return queue_.size();
}

Completion ScriptedBackend::do_send(const CompletionRequest&) {
  Entry entry;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (queue_.empty()) {
      throw ScriptExhausted();
    }
    entry = std::move(queue_.front());
    queue_.pop_front();
  }
  if (entry.error_kind == "transient") {
    throw TransientBackendError("scripted transient failure");
  }
  if (entry.error_kind == "auth") {
    throw AuthError("scripted auth failure");
  }
  if (!entry.error_kind.empty()) {
    throw BackendError("scripted failure: " + entry.error_kind);
  }
  Completion completion;
  completion.text = std::move(entry.text);
  completion.finish_reason = FinishReason::stop;
  return completion;
}

namespace {

// Splits http://host:port/prefix into (scheme://host:port, /prefix).
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
  std::size_t scheme = endpoint.find("://");
  std::size_t host_begin = scheme == std::string::npos ? 0 : scheme + 3;
  std::size_t slash = endpoint.find('/', host_begin);
  if (slash == std::string::npos) {
    return {endpoint, ""};
  }
  std::string prefix = endpoint.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') {
    prefix.pop_back();
  }
  return {endpoint.substr(0, slash), prefix};
}

}  // namespace

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) {
    throw InvalidRequest("http backend requires an endpoint (set SEQFORGE_API_BASE)");
  }
  auto [host, prefix] = split_endpoint(config_.endpoint);
  host_ = host;
  path_prefix_ = prefix;
}

Completion HttpBackend::do_send(const CompletionRequest& request) {
  json body;
  body["model"] = request.model;
  json messages = json::array();
  for (const auto& message : request.messages) {
    messages.push_back({{"role", message.role}, {"content", message.content}});
  }
  body["messages"] = messages;
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  if (request.seed) {
    body["seed"] = *request.seed;
  }

  httplib::Client client(host_);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!config_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + config_.api_key);
  }

  std::string path = path_prefix_ + "/chat/completions";
  auto result = client.Post(path, headers, body.dump(), "application/json");
  if (!result) {
    throw TransientBackendError("connection failed: " + httplib::to_string(result.error()));
  }
  if (result->status == 401 || result->status == 403) {
    throw AuthError("backend rejected credentials (HTTP " + std::to_string(result->status) + ")");
  }
  if (result->status == 429 || result->status >= 500) {
    throw TransientBackendError("HTTP " + std::to_string(result->status) + ": " + result->body);
  }
  if (result->status != 200) {
    throw BackendError("HTTP " + std::to_string(result->status) + ": " + result->body);
  }

  json payload;
  try {
    payload = json::parse(result->body);
  } catch (const json::exception& ex) {
    throw BackendError(std::string("unparsable completion response: ") + ex.what());
  }
  if (!payload.contains("choices") || !payload.at("choices").is_array() ||
      payload.at("choices").empty()) {
    throw BackendError("completion response has no choices");
  }
  const json& choice = payload.at("choices").front();
  Completion completion;
  completion.text = choice.contains("message") ? choice.at("message").value("content", "")
                                               : choice.value("text", "");
  std::string reason = choice.value("finish_reason", "stop");
  completion.finish_reason = reason == "length" ? FinishReason::length : FinishReason::stop;
  return completion;
}

std::chrono::milliseconds RetryPolicy::delay(int attempt) const {
  double scaled =
      static_cast<double>(initial_delay.count()) * std::pow(multiplier, static_cast<double>(attempt));
  auto clamped = std::min(scaled, static_cast<double>(max_delay.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(clamped));
}

ResponseCache::ResponseCache(std::string dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) {
    throw IoError("cannot create cache directory " + dir_ + ": " + ec.message());
  }
}

std::optional<std::string> ResponseCache::lookup(const CacheKey& key) const {
  fs::path path = fs::path(dir_) / key.hex();
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    return std::nullopt;
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void ResponseCache::store(const CacheKey& key, const std::string& text) {
  std::lock_guard<std::mutex> lock(write_mutex_);
  fs::path final_path = fs::path(dir_) / key.hex();
  if (fs::exists(final_path)) {
    return;  // first writer wins; entries are immutable
  }
  fs::path tmp_path = final_path;
  tmp_path += ".tmp";
  {
    std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot write cache entry: " + tmp_path.string());
    }
    out << text;
  }
  std::error_code ec;
  fs::rename(tmp_path, final_path, ec);
  if (ec) {
    throw IoError("cannot finalize cache entry: " + ec.message());
  }
}

Gateway::Gateway(std::shared_ptr<Backend> backend, RetryPolicy retry,
                 std::shared_ptr<ResponseCache> cache)
    : backend_(std::move(backend)), retry_(retry), cache_(std::move(cache)) {}

CompletionRequest Gateway::make_request(std::vector<ChatMessage> messages) const {
  CompletionRequest request;
  request.model = model;
  request.messages = std::move(messages);
  request.temperature = temperature;
  request.max_tokens = max_tokens;
  request.seed = seed;
  return request;
}

Completion Gateway::complete(const CompletionRequest& request) {
  if (request.messages.empty()) {
    throw InvalidRequest("completion request has no messages");
  }
  if (request.messages.back().role != "user") {
    throw InvalidRequest("last message must have role `user`");
  }
  if (request.temperature < 0.0) {
    throw InvalidRequest("temperature must be >= 0");
  }
  if (request.max_tokens < 1) {
    throw InvalidRequest("max_tokens must be positive");
  }

  CacheKey key;
  if (cache_) {
    key = CacheKey::of(request);
    if (auto hit = cache_->lookup(key)) {
      Completion completion;
      completion.text = std::move(*hit);
      completion.finish_reason = FinishReason::stop;
      completion.cached = true;
      return completion;
    }
  }

  std::string last_error;
  for (int attempt = 0; attempt < retry_.max_attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(retry_.delay(attempt - 1));
    }
    try {
      Completion completion = backend_->send(request);
      completion.cached = false;
      if (cache_) {
        cache_->store(key, completion.text);
      }
      return completion;
    } catch (const TransientBackendError& ex) {
      last_error = ex.what();
    }
    // AuthError / ScriptExhausted / BackendError propagate: retrying cannot help.
  }
  throw BackendExhausted("backend still failing after " + std::to_string(retry_.max_attempts) +
                         " attempts: " + last_error);
}

std::vector<BatchItem> Gateway::complete_batch(const std::vector<CompletionRequest>& requests,
                                               int max_in_flight) {
  if (max_in_flight < 1) {
    throw InvalidRequest("max_in_flight must be >= 1");
  }
  std::vector<BatchItem> results(requests.size());

  auto run_one = [&](std::size_t i) {
    try {
      results[i].completion = complete(requests[i]);
    } catch (const std::exception& ex) {
      results[i].error = ex.what();
    }
  };

  // A serial backend matches replies to calls by order, so it must see the
  // requests strictly in input order.
  if (backend_->serial() || max_in_flight == 1 || requests.size() <= 1) {
    for (std::size_t i = 0; i < requests.size(); ++i) {
      run_one(i);
    }
    return results;
  }

  std::atomic<std::size_t> next{0};
  std::size_t worker_count = std::min<std::size_t>(static_cast<std::size_t>(max_in_flight),
                                                   requests.size());
  std::vector<std::thread> workers;
  workers.reserve(worker_count);
  for (std::size_t w = 0; w < worker_count; ++w) {
    workers.emplace_back([&] {
      while (true) {
        std::size_t i = next.fetch_add(1);
        if (i >= requests.size()) {
          return;
        }
        run_one(i);
      }
    });
  }
  for (auto& worker : workers) {
    worker.join();
  }
  return results;
}

}  // namespace seqforge
