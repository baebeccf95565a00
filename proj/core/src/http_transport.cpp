#include <cstdlib>
#include <regex>

#include "httplib.h"
#include "latentlens/judge.hpp"

namespace latentlens::judge {

namespace {

class HttpTransport final : public Transport {
 public:
  HttpTransport(std::string base, std::string path, std::string token, std::chrono::seconds timeout)
      : base_(std::move(base)), path_(std::move(path)), token_(std::move(token)), timeout_(timeout) {}

  TransportResponse post(const std::string& body, const std::string& idempotency_key) override {
    // One client per call keeps the transport safe to share across threads.
    httplib::Client client(base_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers headers{{"Idempotency-Key", idempotency_key}};
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) throw TransportError("request to " + base_ + path_ + " failed: " + httplib::to_string(res.error()));
    return {res->status, res->body};
  }

 private:
  std::string base_;
  std::string path_;
  std::string token_;
  std::chrono::seconds timeout_;
};

}  // namespace

std::unique_ptr<Transport> make_http_transport(const JudgeConfig& config) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config.endpoint, m, kUrl)) {
    throw Error(ErrorCode::kConfiguration, "malformed endpoint URL '" + config.endpoint + "'");
  }
  std::string token;
  if (const char* v = std::getenv(config.auth_env.c_str())) token = v;
  const std::string path = m[2].matched ? m[2].str() : "/";
  return std::make_unique<HttpTransport>(m[1].str(), path, std::move(token), config.timeout);
}

}  // namespace latentlens::judge
