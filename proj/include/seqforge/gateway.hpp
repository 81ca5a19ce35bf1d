#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "seqforge/chat.hpp"

namespace seqforge {

struct CompletionRequest {
  std::string model;
  std::vector<ChatMessage> messages;  // non-empty; last role must be "user"
  double temperature = 0.7;
  int max_tokens = 1024;
  std::optional<std::int64_t> seed;
};

enum class FinishReason { stop, length, error };

struct Completion {
  std::string text;
  FinishReason finish_reason = FinishReason::stop;
  bool cached = false;
};

// Content address of a request: identical requests map to identical keys,
// any field change changes the key.
struct CacheKey {
  std::array<std::uint8_t, 32> digest{};

  static CacheKey of(const CompletionRequest& request);
  std::string hex() const;
};

class Backend {
 public:
  virtual ~Backend() = default;

  Completion send(const CompletionRequest& request) {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return do_send(request);
  }

  // Serial backends hand out responses in call order; the gateway drives
  // them strictly sequentially so batch results never depend on scheduling.
  virtual bool serial() const { return false; }

  std::size_t calls() const { return calls_.load(std::memory_order_relaxed); }

 private:
  virtual Completion do_send(const CompletionRequest& request) = 0;

  std::atomic<std::size_t> calls_{0};
};

// FIFO queue of canned replies; the deterministic test-time stand-in for a
// live model. Entries may also inject failures ("transient" or "auth").
class ScriptedBackend : public Backend {
 public:
  ScriptedBackend() = default;
  explicit ScriptedBackend(std::vector<std::string> replies);

  // Fixture file: one JSON value per line, either a bare string or
  // {"text": ...} / {"error": "transient"|"auth"}.
  static std::shared_ptr<ScriptedBackend> from_jsonl(const std::string& path);

  void push_text(std::string text);
  void push_error(std::string kind);
  std::size_t remaining() const;

  bool serial() const override { return true; }

 private:
  Completion do_send(const CompletionRequest& request) override;

  struct Entry {
    std::string text;
    std::string error_kind;  // empty = success
  };
  mutable std::mutex mutex_;
  std::deque<Entry> queue_;
};

struct HttpBackendConfig {
  std::string endpoint;  // e.g. http://host:8080/v1
  std::string api_key;
  int timeout_seconds = 120;
};

// Speaks the common chat-completion protocol: POST {model, messages,
// temperature, max_tokens, seed} to <endpoint>/chat/completions.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);

 private:
  Completion do_send(const CompletionRequest& request) override;

  HttpBackendConfig config_;
  std::string host_;  // scheme://host:port
  std::string path_prefix_;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_delay{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_delay{60000};

  // Delay before retry number `attempt` (0-based); non-decreasing.
  std::chrono::milliseconds delay(int attempt) const;
};

// Append-only on-disk store: one file per cache key holding the raw
// completion text. Entries are written once and never mutated.
class ResponseCache {
 public:
  explicit ResponseCache(std::string dir);  // creates the directory

  std::optional<std::string> lookup(const CacheKey& key) const;
  void store(const CacheKey& key, const std::string& text);

  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  mutable std::mutex write_mutex_;
};

struct BatchItem {
  std::optional<Completion> completion;
  std::string error;  // set when the slot failed

  bool ok() const { return completion.has_value(); }
};

// Backend + cache + retry policy behind one call surface.
class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Backend> backend, RetryPolicy retry = {},
                   std::shared_ptr<ResponseCache> cache = nullptr);

  // Cache hit returns the stored text byte-identically with cached=true;
  // otherwise calls the backend with retries (transient failures only) and
  // stores the result. Throws BackendExhausted / AuthError / ScriptExhausted.
  Completion complete(const CompletionRequest& request);

  // Results in input order; at most max_in_flight requests outstanding.
  // Per-slot failures are recorded without aborting the batch.
  std::vector<BatchItem> complete_batch(const std::vector<CompletionRequest>& requests,
                                        int max_in_flight);

  CompletionRequest make_request(std::vector<ChatMessage> messages) const;

  Backend& backend() { return *backend_; }

  // Profile defaults applied by make_request / batched operations.
  std::string model = "default";
  double temperature = 0.7;
  int max_tokens = 1024;
  std::optional<std::int64_t> seed;
  int max_in_flight = 4;

 private:
  std::shared_ptr<Backend> backend_;
  RetryPolicy retry_;
  std::shared_ptr<ResponseCache> cache_;
};

}  // namespace seqforge
