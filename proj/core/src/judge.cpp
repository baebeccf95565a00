#include "latentlens/judge.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace latentlens::judge {

using nlohmann::json;

namespace {

constexpr std::string_view kPrompt =
    R"(You are a visual interpretation expert specializing in connecting textual concepts to specific image regions. Your task is to analyze a list of candidate words and determine how strongly each one relates to the content of the highlighted region.

Inputs
1. Full Image: An image containing a red bounding box highlighting the region of interest.
2. Cropped Region: A close-up view of the exact region highlighted by the red bounding box. Only rely on this if it is too small in the full image (e.g. text is too small to read), otherwise rely on the full image.
3. Candidate Words: A list of words to evaluate.

Evaluation Guidelines
There are three types of relationships to consider between the candidate words and the highlighted region:

Concrete: A word is concretely related if it names something that is literally visible in the cropped region. This includes: objects or parts of objects clearly present; colors, textures, or materials visible; text, numbers, or symbols shown; shapes, patterns, or visual features.

Abstract: A word is abstractly related if it describes broader concepts, emotions, or activities related to what's shown in the cropped region, but isn't literally present. This includes: emotions or feelings (beautiful, scary, peaceful); activities or functions (driving, cooking, reading); cultural or conceptual associations (luxury, tradition, modern); qualities or characteristics (elegant, rustic, professional); anything deemed semantically related to the region or the whole image context.

Global: A word is globally related if it describes something that exists elsewhere in the full image (outside the highlighted region), but not in the cropped region itself. This includes: objects visible in other parts of the image; colors present in other parts; text or elements in different regions.

Important Note: For regions with text, the connection can be concrete (characters/words shown) or abstract (concepts implied by the text).

Output Format
Return a JSON object with: reasoning (string), interpretable (true/false), concrete_words (list), abstract_words (list), global_words (list).)";

std::string fold(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string data_url(const ImageBlob& img) { return "data:" + img.media_type + ";base64," + base64_encode(img.bytes); }

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Strips a ```json ... ``` fence if present, else returns the text from the
// first '{' to the last '}'.
std::optional<std::string> extract_object(std::string_view text) {
  text = trim(text);
  const auto fence = text.find("```");
  if (fence != std::string_view::npos) {
    auto body_start = text.find('\n', fence);
    if (body_start != std::string_view::npos) {
      auto close = text.find("```", body_start);
      std::string_view inner = text.substr(body_start + 1, close == std::string_view::npos
                                                               ? std::string_view::npos
                                                               : close - body_start - 1);
      text = trim(inner);
    }
  }
  const auto open = text.find('{');
  const auto close = text.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) return std::nullopt;
  return std::string(text.substr(open, close - open + 1));
}

}  // namespace

std::string_view prompt_template() { return kPrompt; }

JudgeRequest build_request(ImageBlob full_image, ImageBlob cropped_region, std::vector<std::string> words) {
  if (words.empty()) throw Error(ErrorCode::kRejectedInput, "judge request needs at least one candidate word");
  if (words.size() > kMaxCandidates) {
    throw Error(ErrorCode::kRejectedInput, "judge request takes at most 5 candidate words");
  }
  JudgeRequest r;
  r.full_image = std::move(full_image);
  r.cropped_region = std::move(cropped_region);
  r.prompt_text = std::string(kPrompt) + "\n\nCandidate Words: " + json(words).dump();
  r.candidate_words = std::move(words);
  return r;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string request_body(const JudgeRequest& request, std::string_view model) {
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", request.prompt_text}});
  content.push_back({{"type", "image_url"}, {"image_url", {{"url", data_url(request.full_image)}}}});
  content.push_back({{"type", "image_url"}, {"image_url", {{"url", data_url(request.cropped_region)}}}});
  json body{{"model", model},
            {"messages", json::array({{{"role", "user"}, {"content", content}}})},
            {"response_format", {{"type", "json_object"}}}};
  return body.dump();
}

std::string chat_text_body(std::string_view model, std::string_view prompt, double temperature) {
  json body{{"model", model},
            {"temperature", temperature},
            {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
  return body.dump();
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIo, "SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

std::string_view to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::kNoJsonObject: return "no_json_object";
    case ParseErrorKind::kMissingKey: return "missing_key";
    case ParseErrorKind::kTypeError: return "type_error";
    case ParseErrorKind::kInvariantViolation: return "invariant_violation";
  }
  return "unknown";
}

ParseError::ParseError(ParseErrorKind kind, const std::string& message)
    : Error(ErrorCode::kCorruptInput, std::string(to_string(kind)) + ": " + message), kind_(kind) {}

std::string message_content(std::string_view body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_object() && j.contains("choices")) {
    try {
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      throw ParseError(ParseErrorKind::kTypeError, "chat response without choices[0].message.content");
    }
  }
  return std::string(body);
}

ParsedVerdict parse_verdict(std::string_view body, std::span<const std::string> candidates) {
  const std::string content = message_content(body);
  const auto text = extract_object(content);
  if (!text) throw ParseError(ParseErrorKind::kNoJsonObject, "response contains no JSON object");
  json j = json::parse(*text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ParseError(ParseErrorKind::kNoJsonObject, "response object is not valid JSON");
  }
  for (const char* key : {"reasoning", "interpretable", "concrete_words", "abstract_words", "global_words"}) {
    if (!j.contains(key)) throw ParseError(ParseErrorKind::kMissingKey, std::string("missing key '") + key + "'");
  }
  ParsedVerdict out;
  if (!j["reasoning"].is_string()) throw ParseError(ParseErrorKind::kTypeError, "'reasoning' is not a string");
  if (!j["interpretable"].is_boolean()) {
    throw ParseError(ParseErrorKind::kTypeError, "'interpretable' is not a boolean");
  }
  out.verdict.reasoning = j["reasoning"].get<std::string>();
  out.verdict.interpretable = j["interpretable"].get<bool>();

  std::vector<std::string> allowed;
  for (const auto& c : candidates) allowed.push_back(fold(c));
  const auto take = [&](const char* key, std::vector<std::string>& dest) {
    const json& arr = j[key];
    if (!arr.is_array()) throw ParseError(ParseErrorKind::kTypeError, std::string("'") + key + "' is not a list");
    for (const json& w : arr) {
      if (!w.is_string()) throw ParseError(ParseErrorKind::kTypeError, std::string("'") + key + "' has a non-string");
      const std::string word = w.get<std::string>();
      if (std::find(allowed.begin(), allowed.end(), fold(word)) == allowed.end()) {
        out.warnings.push_back(std::string(key) + ": dropped '" + word + "' (not a candidate)");
        continue;
      }
      dest.push_back(word);
    }
  };
  take("concrete_words", out.verdict.concrete_words);
  take("abstract_words", out.verdict.abstract_words);
  take("global_words", out.verdict.global_words);

  if (out.verdict.interpretable && out.verdict.concrete_words.empty() && out.verdict.abstract_words.empty() &&
      out.verdict.global_words.empty()) {
    throw ParseError(ParseErrorKind::kInvariantViolation, "interpretable verdict lists no candidate words");
  }
  return out;
}

bool is_transient_status(int status) { return status == 429 || status >= 500; }

std::chrono::milliseconds JudgeConfig::backoff(std::uint32_t attempt) const {
  double ms = static_cast<double>(backoff_initial.count());
  for (std::uint32_t i = 1; i < attempt; ++i) ms *= backoff_multiplier;
  ms = std::min(ms, static_cast<double>(backoff_max.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::optional<std::string> ResponseCache::get(const std::string& key) const {
  std::ifstream in(dir_ / (key + ".json"), std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ResponseCache::put(const std::string& key, const std::string& body) const {
  // Write then rename so concurrent readers never see a partial file.
  const auto tmp = dir_ / (key + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << body;
    if (!out) throw Error(ErrorCode::kIo, "cannot write cache entry " + tmp.string());
  }
  std::filesystem::rename(tmp, dir_ / (key + ".json"));
}

namespace {

struct Slot {
  std::optional<IndexedVerdict> verdict;
  std::vector<RetryRecord> retries;
  std::optional<FailureRecord> failure;
};

void judge_one(std::size_t index, const JudgeRequest& request, const JudgeConfig& config, Transport& transport,
               const ResponseCache* cache, Slot& slot) {
  const std::string body = request_body(request, config.model);
  const std::string key = sha256_hex(body);
  const auto finish = [&](const std::string& response, bool cached) {
    ParsedVerdict parsed = parse_verdict(response, request.candidate_words);
    slot.verdict = IndexedVerdict{index, std::move(parsed.verdict), std::move(parsed.warnings), cached};
  };

  if (cache) {
    if (auto hit = cache->get(key)) {
      try {
        finish(*hit, true);
        return;
      } catch (const Error&) {
        // Unusable cache entry; fall through to a fresh request.
      }
    }
  }

  std::uint32_t attempt = 0;
  while (true) {
    ++attempt;
    std::string reason;
    bool transient = false;
    try {
      TransportResponse resp = transport.post(body, key);
      if (resp.status >= 200 && resp.status < 300) {
        try {
          finish(resp.body, false);
          if (cache) cache->put(key, resp.body);
          return;
        } catch (const ParseError& e) {
          reason = std::string("unparseable response: ") + e.what();
        }
      } else {
        reason = "HTTP " + std::to_string(resp.status);
        transient = is_transient_status(resp.status);
      }
    } catch (const TransportError& e) {
      reason = std::string("transport: ") + e.what();
      transient = true;
    } catch (const std::exception& e) {
      reason = std::string("error: ") + e.what();
    }
    if (!transient || attempt > config.max_retries) {
      slot.failure = FailureRecord{index, key, attempt, reason};
      return;
    }
    const auto delay = config.backoff(attempt);
    slot.retries.push_back(RetryRecord{index, attempt, reason, delay});
    if (config.sleep) {
      config.sleep(delay);
    } else {
      std::this_thread::sleep_for(delay);
    }
  }
}

}  // namespace

BatchResult run_judgments(std::span<const JudgeRequest> requests, const JudgeConfig& config, Transport& transport) {
  std::optional<ResponseCache> cache;
  if (config.cache_dir) cache.emplace(*config.cache_dir);
  std::vector<Slot> slots(requests.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) {
      judge_one(i, requests[i], config, transport, cache ? &*cache : nullptr, slots[i]);
    }
  };
  const std::size_t n = std::clamp<std::size_t>(config.max_in_flight, 1, std::max<std::size_t>(requests.size(), 1));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  }

  BatchResult out;
  for (Slot& s : slots) {
    if (s.verdict) out.verdicts.push_back(std::move(*s.verdict));
    out.retries.insert(out.retries.end(), s.retries.begin(), s.retries.end());
    if (s.failure) out.failures.push_back(std::move(*s.failure));
  }
  return out;
}

json failure_manifest(const BatchResult& result) {
  json failures = json::array();
  for (const auto& f : result.failures) {
    failures.push_back({{"request_index", f.request_index},
                        {"idempotency_key", f.idempotency_key},
                        {"attempts", f.attempts},
                        {"reason", f.reason}});
  }
  json retries = json::array();
  for (const auto& r : result.retries) {
    retries.push_back({{"request_index", r.request_index},
                       {"attempt", r.attempt},
                       {"reason", r.reason},
                       {"delay_ms", r.delay.count()}});
  }
  return {{"succeeded", result.verdicts.size()}, {"failed", result.failures.size()}, {"failures", failures},
          {"retries", retries}};
}

}  // namespace latentlens::judge
