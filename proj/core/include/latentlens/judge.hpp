#pragma once

// Client for an external chat-completions judge. Everything except the
// HTTP transport is pure and runs offline.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentlens/error.hpp"
#include "latentlens/verdict.hpp"

namespace latentlens::judge {

inline constexpr std::size_t kMaxCandidates = 5;

struct ImageBlob {
  std::string media_type = "image/png";
  std::string bytes;

  bool operator==(const ImageBlob&) const = default;
};

struct JudgeRequest {
  /// Full image with the red box already drawn by the caller.
  ImageBlob full_image;
  ImageBlob cropped_region;
  std::vector<std::string> candidate_words;
  std::string prompt_text;

  bool operator==(const JudgeRequest&) const = default;
};

/// The fixed judge instructions. Candidates are appended by build_request.
std::string_view prompt_template();

/// Throws kRejectedInput for zero or more than five candidates.
JudgeRequest build_request(ImageBlob full_image, ImageBlob cropped_region, std::vector<std::string> words);

std::string base64_encode(std::string_view bytes);

/// OpenAI-compatible chat-completions body with both images attached as
/// data URLs. Serialization is deterministic (sorted keys, no whitespace).
std::string request_body(const JudgeRequest& request, std::string_view model);

/// Lowercase hex SHA-256; used as idempotency key and cache key.
std::string sha256_hex(std::string_view bytes);

enum class ParseErrorKind { kNoJsonObject, kMissingKey, kTypeError, kInvariantViolation };
std::string_view to_string(ParseErrorKind kind);

class ParseError : public Error {
 public:
  ParseError(ParseErrorKind kind, const std::string& message);
  ParseErrorKind kind() const noexcept { return kind_; }

 private:
  ParseErrorKind kind_;
};

struct ParsedVerdict {
  JudgeVerdict verdict;
  /// One entry per dropped word.
  std::vector<std::string> warnings;
};

/// Accepts either the verdict object itself (optionally in markdown fences
/// or surrounded by prose) or a chat-completions response whose first
/// choice carries it. Words not among `candidates` (ASCII case-folded) are
/// dropped with a warning.
ParsedVerdict parse_verdict(std::string_view body, std::span<const std::string> candidates);

/// Content of choices[0].message.content, or the body unchanged when it is
/// not a chat-completions response.
std::string message_content(std::string_view body);

/// Plain text chat request, used by the live evolution generator.
std::string chat_text_body(std::string_view model, std::string_view prompt, double temperature = 1.0);

// ---- transport ----

struct TransportResponse {
  int status = 0;
  std::string body;
};

/// Thrown for connection-level failures; always treated as transient.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  /// Must be safe to call from several threads.
  virtual TransportResponse post(const std::string& body, const std::string& idempotency_key) = 0;
};

/// 429 and 5xx are retried; other non-2xx statuses fail immediately.
bool is_transient_status(int status);

struct JudgeConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-5";
  std::string auth_env = "OPENAI_API_KEY";
  std::uint32_t max_retries = 3;
  std::chrono::milliseconds backoff_initial{500};
  double backoff_multiplier = 2.0;
  std::chrono::milliseconds backoff_max{8000};
  std::chrono::seconds timeout{60};
  std::uint32_t max_in_flight = 4;
  std::optional<std::filesystem::path> cache_dir;
  /// Replaced in tests to avoid real waiting.
  std::function<void(std::chrono::milliseconds)> sleep;

  /// Delay before retry number `attempt` (1-based).
  std::chrono::milliseconds backoff(std::uint32_t attempt) const;
};

/// Connects to config.endpoint with a bearer token from config.auth_env.
/// Throws kConfiguration for a malformed URL.
std::unique_ptr<Transport> make_http_transport(const JudgeConfig& config);

/// Raw response bodies on disk, one file per request hash.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);
  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, const std::string& body) const;

 private:
  std::filesystem::path dir_;
};

struct RetryRecord {
  std::size_t request_index = 0;
  std::uint32_t attempt = 0;
  std::string reason;
  std::chrono::milliseconds delay{0};
};

struct FailureRecord {
  std::size_t request_index = 0;
  std::string idempotency_key;
  std::uint32_t attempts = 0;
  std::string reason;
};

struct IndexedVerdict {
  std::size_t request_index = 0;
  JudgeVerdict verdict;
  std::vector<std::string> warnings;
  bool from_cache = false;
};

struct BatchResult {
  /// Successful verdicts in request order.
  std::vector<IndexedVerdict> verdicts;
  std::vector<RetryRecord> retries;
  std::vector<FailureRecord> failures;
};

/// Never throws for per-request failures; they land in the manifest.
BatchResult run_judgments(std::span<const JudgeRequest> requests, const JudgeConfig& config, Transport& transport);

nlohmann::json failure_manifest(const BatchResult& result);

}  // namespace latentlens::judge
