#pragma once

// Read-only JSON API over a loaded index and latent dumps. Requests are
// handled by Service::handle so the whole surface is testable without
// sockets; serve() puts an HTTP listener in front of it.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentlens/corpus_index.hpp"
#include "latentlens/evolution.hpp"
#include "latentlens/formats.hpp"
#include "latentlens/judge.hpp"
#include "latentlens/latent_store.hpp"

namespace latentlens::service {

struct ApiRequest {
  std::string method = "GET";
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

struct EvolutionBackend {
  std::unique_ptr<evolution::PhraseGenerator> generator;
  std::unique_ptr<evolution::PhraseEmbedder> embedder;
};

struct ServiceConfig {
  std::optional<std::filesystem::path> index_path;
  std::vector<std::filesystem::path> latent_paths;
  std::optional<std::filesystem::path> embedding_path;
  std::optional<std::filesystem::path> unembedding_path;
  /// Served under /thumbnails/; files named <image_id>.<ext> are advertised.
  std::optional<std::filesystem::path> thumbnails_dir;
  /// Root for judge image paths given in batch requests.
  std::optional<std::filesystem::path> images_dir;
  judge::JudgeConfig judge;
  /// Null means no judge endpoint is configured (POST answers 503).
  std::function<std::unique_ptr<judge::Transport>()> judge_transport;
  std::function<EvolutionBackend()> evolution_backend;
  unsigned threads = 1;
  std::string cors_origin = "*";
};

class Service {
 public:
  explicit Service(ServiceConfig config);
  /// For callers that already hold the loaded state.
  Service(ServiceConfig config, std::shared_ptr<const corpus::CorpusIndex> index);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  ApiResponse handle(const ApiRequest& request);

  /// Serves on a background thread until stop(); port 0 picks a free
  /// port. Returns the bound port. Throws kIo if binding fails.
  int serve_background(const std::string& host = "127.0.0.1", int port = 0);
  void stop();

  /// Waits for every job started so far (tests and shutdown).
  void wait_for_jobs();

 private:
  struct Job;
  struct Server;

  void load();
  ApiResponse catalog();
  ApiResponse patches(std::uint32_t image_id);
  ApiResponse lens_query(const nlohmann::json& body);
  ApiResponse alignment(const ApiRequest& r);
  ApiResponse norms(const ApiRequest& r);
  ApiResponse drift(const ApiRequest& r);
  ApiResponse similarity_hist(const ApiRequest& r);
  ApiResponse judge_batch(const nlohmann::json& body);
  ApiResponse evolve_start(const nlohmann::json& body);
  ApiResponse job_result(const std::string& kind, const std::string& id);
  ApiResponse thumbnail(const std::string& name);

  std::size_t dump_param(const ApiRequest& r) const;
  std::string start_job(const std::string& kind, std::function<nlohmann::json(int&)> work);

  ServiceConfig config_;
  std::shared_ptr<const corpus::CorpusIndex> index_;
  std::optional<std::uint32_t> index_crc_;
  LatentStore latents_;
  std::optional<io::VocabularyMatrix> embedding_;
  std::optional<io::VocabularyMatrix> unembedding_;

  std::mutex memo_mutex_;
  std::map<std::string, std::string> memo_;

  std::mutex jobs_mutex_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::uint64_t next_job_ = 1;

  std::unique_ptr<Server> server_;
  std::jthread server_thread_;
};

/// HTTP status for an engine error code.
int status_for(ErrorCode code);

}  // namespace latentlens::service
