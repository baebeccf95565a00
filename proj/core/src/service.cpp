#include "latentlens/service.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "latentlens/analysis.hpp"
#include "latentlens/error.hpp"
#include "latentlens/lens.hpp"
#include "latentlens/report_io.hpp"
#include "latentlens/version.hpp"
#include "latentlens/word_merge.hpp"

namespace latentlens::service {

using nlohmann::json;

struct Service::Job {
  std::atomic<bool> done{false};
  int status = 200;
  json result;
  std::jthread worker;
};

struct Service::Server {
  httplib::Server http;
};

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kRejectedInput:
    case ErrorCode::kRejectedRecord:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kDegenerateQuery:
    case ErrorCode::kConfiguration:
    case ErrorCode::kInfeasible: return 400;
    default: return 500;
  }
}

namespace {

ApiResponse json_response(int status, const json& body) {
  ApiResponse r;
  r.status = status;
  r.body = body.dump();
  return r;
}

ApiResponse error_response(int status, std::string_view code, const std::string& message) {
  return json_response(status, {{"error", {{"code", code}, {"message", message}}}});
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '/')) {
    if (!part.empty()) parts.push_back(part);
  }
  return parts;
}

std::uint64_t parse_uint(const std::string& s, std::string_view what) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || s.front() == '-') {
    throw Error(ErrorCode::kRejectedInput, "bad " + std::string(what) + " '" + s + "'");
  }
  return v;
}

template <class T>
T field(const json& body, const char* key) {
  if (!body.contains(key)) throw Error(ErrorCode::kRejectedInput, std::string("missing field '") + key + "'");
  try {
    return body.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::kRejectedInput, std::string("field '") + key + "' has the wrong type");
  }
}

template <class T>
T field_or(const json& body, const char* key, T fallback) {
  if (!body.contains(key) || body.at(key).is_null()) return fallback;
  return field<T>(body, key);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "no such file " + path.filename().string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string media_type_for(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  return "application/octet-stream";
}

bool safe_relative(const std::string& name) {
  if (name.empty()) return false;
  const std::filesystem::path p(name);
  if (p.is_absolute()) return false;
  for (const auto& part : p) {
    if (part == "..") return false;
  }
  return true;
}

}  // namespace

Service::Service(ServiceConfig config) : config_(std::move(config)) {
  if (config_.index_path) {
    index_ = std::make_shared<const corpus::CorpusIndex>(corpus::load_index(*config_.index_path));
    index_crc_ = report::index_fingerprint(*config_.index_path);
  }
  load();
}

Service::Service(ServiceConfig config, std::shared_ptr<const corpus::CorpusIndex> index)
    : config_(std::move(config)), index_(std::move(index)) {
  load();
}

Service::~Service() {
  stop();
  wait_for_jobs();
}

void Service::load() {
  for (const auto& p : config_.latent_paths) latents_.add(p);
  if (config_.embedding_path) embedding_ = io::read_vocabulary(*config_.embedding_path);
  if (config_.unembedding_path) unembedding_ = io::read_vocabulary(*config_.unembedding_path);
  if (config_.threads == 0) config_.threads = 1;
}

ApiResponse Service::handle(const ApiRequest& r) {
  ApiResponse resp;
  try {
    const auto parts = split_path(r.path);
    const auto body_json = [&] {
      json j = json::parse(r.body.empty() ? std::string("{}") : r.body, nullptr, false);
      if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::kRejectedInput, "body is not a JSON object");
      return j;
    };
    if (r.method == "OPTIONS") {
      resp.status = 204;
    } else if (parts.size() == 2 && parts[0] == "thumbnails" && r.method == "GET") {
      resp = thumbnail(parts[1]);
    } else if (parts.empty() || parts[0] != "v1") {
      resp = error_response(404, "not_found", "no route for " + r.path);
    } else if (r.method == "GET" && parts.size() == 2 && parts[1] == "catalog") {
      resp = catalog();
    } else if (r.method == "GET" && parts.size() == 4 && parts[1] == "images" && parts[3] == "patches") {
      resp = patches(static_cast<std::uint32_t>(parse_uint(parts[2], "image id")));
    } else if (r.method == "POST" && parts.size() == 3 && parts[1] == "lens" && parts[2] == "query") {
      resp = lens_query(body_json());
    } else if (r.method == "GET" && parts.size() == 3 && parts[1] == "analysis") {
      if (parts[2] == "layer-alignment") {
        resp = alignment(r);
      } else if (parts[2] == "norms") {
        resp = norms(r);
      } else if (parts[2] == "drift") {
        resp = drift(r);
      } else if (parts[2] == "similarity-hist") {
        resp = similarity_hist(r);
      } else {
        resp = error_response(404, "not_found", "unknown analysis '" + parts[2] + "'");
      }
    } else if (r.method == "POST" && parts.size() == 3 && parts[1] == "judge" && parts[2] == "batch") {
      resp = judge_batch(body_json());
    } else if (r.method == "GET" && parts.size() == 3 && parts[1] == "judge") {
      resp = job_result("judge", parts[2]);
    } else if (r.method == "POST" && parts.size() == 2 && parts[1] == "evolve") {
      resp = evolve_start(body_json());
    } else if (r.method == "GET" && parts.size() == 3 && parts[1] == "evolve") {
      resp = job_result("evolve", parts[2]);
    } else {
      resp = error_response(404, "not_found", "no route for " + r.method + " " + r.path);
    }
  } catch (const Error& e) {
    resp = error_response(status_for(e.code()), to_string(e.code()), e.what());
  } catch (const json::exception& e) {
    resp = error_response(400, "rejected_input", e.what());
  } catch (const std::exception& e) {
    resp = error_response(500, "internal", e.what());
  }
  resp.headers["Access-Control-Allow-Origin"] = config_.cors_origin;
  resp.headers["Access-Control-Allow-Methods"] = "GET, POST, OPTIONS";
  resp.headers["Access-Control-Allow-Headers"] = "Content-Type";
  return resp;
}

ApiResponse Service::catalog() {
  json index = nullptr;
  if (index_) {
    json stats = json::array();
    for (const auto& s : index_->stats()) {
      stats.push_back({{"layer", s.layer_id},
                       {"entries", s.entries},
                       {"unique_tokens", s.unique_tokens},
                       {"occurrences", s.occurrences}});
    }
    char crc[9] = "";
    if (index_crc_) std::snprintf(crc, sizeof crc, "%08x", *index_crc_);
    index = {{"model_tag", index_->metadata().model_tag},
             {"dim", index_->dim()},
             {"cap", index_->metadata().cap},
             {"seed", index_->metadata().seed},
             {"layers", index_->layers()},
             {"entries", index_->entry_count()},
             {"phrases", index_->phrases().size()},
             {"hash", index_crc_ ? json(crc) : json(nullptr)},
             {"stats", stats}};
  }
  json images = json::array();
  for (const auto& [id, info] : latents_.images()) {
    json thumb = nullptr;
    if (config_.thumbnails_dir) {
      for (const char* ext : {".png", ".jpg", ".jpeg", ".webp"}) {
        const std::string name = std::to_string(id) + ext;
        if (std::filesystem::exists(*config_.thumbnails_dir / name)) {
          thumb = "/thumbnails/" + name;
          break;
        }
      }
    }
    images.push_back({{"image_id", id},
                      {"rows", info.rows},
                      {"cols", info.cols},
                      {"layers", std::vector<std::uint16_t>(info.layers.begin(), info.layers.end())},
                      {"dumps", std::vector<std::size_t>(info.dumps.begin(), info.dumps.end())},
                      {"thumbnail", thumb}});
  }
  json dumps = json::array();
  for (std::size_t d = 0; d < latents_.dumps().size(); ++d) {
    const auto& dump = latents_.dumps()[d];
    dumps.push_back({{"dump", d},
                     {"name", dump.path.filename().string()},
                     {"model_tag", dump.header.model_tag},
                     {"dim", dump.header.dim},
                     {"layers", dump.header.layer_ids},
                     {"records", dump.records.size()}});
  }
  const auto vocab = [](const std::optional<io::VocabularyMatrix>& m) -> json {
    if (!m) return nullptr;
    return {{"rows", m->rows()}, {"dim", m->dim}, {"model_tag", m->model_tag}};
  };
  json methods = json::array();
  if (embedding_) methods.push_back("embedding");
  if (unembedding_) methods.push_back("logit");
  if (index_) methods.push_back("latent");
  return json_response(200, {{"engine_version", kEngineVersion},
                             {"index", index},
                             {"images", images},
                             {"dumps", dumps},
                             {"vocabularies", {{"embedding", vocab(embedding_)}, {"unembedding", vocab(unembedding_)}}},
                             {"methods", methods},
                             {"judge_available", static_cast<bool>(config_.judge_transport)},
                             {"evolve_available", static_cast<bool>(config_.evolution_backend)}});
}

ApiResponse Service::patches(std::uint32_t image_id) {
  auto it = latents_.images().find(image_id);
  if (it == latents_.images().end()) {
    throw Error(ErrorCode::kNotFound, "unknown image " + std::to_string(image_id));
  }
  const ImageInfo& info = it->second;
  json grid = json::array();
  for (std::uint16_t r = 0; r < info.rows; ++r) {
    for (std::uint16_t c = 0; c < info.cols; ++c) {
      grid.push_back({{"row", r}, {"col", c}, {"patch_id", r * info.cols + c}});
    }
  }
  return json_response(200, {{"image_id", image_id},
                             {"rows", info.rows},
                             {"cols", info.cols},
                             {"layers", std::vector<std::uint16_t>(info.layers.begin(), info.layers.end())},
                             {"patches", grid}});
}

namespace {

struct LensCall {
  lens::LatentVector latent;
  lens::LensMethod method;
  std::size_t k = lens::kDefaultTopK;
};

}  // namespace

ApiResponse Service::lens_query(const json& body) {
  const auto image_id = field<std::uint32_t>(body, "image_id");
  const auto row = field<std::uint16_t>(body, "row");
  const auto col = field<std::uint16_t>(body, "col");
  const auto layer = field<std::uint16_t>(body, "layer");
  const auto method_name = field_or<std::string>(body, "method", "latent");
  const auto k = field_or<std::int64_t>(body, "k", static_cast<std::int64_t>(lens::kDefaultTopK));
  if (k < 1) throw Error(ErrorCode::kRejectedInput, "k must be >= 1");
  std::optional<std::size_t> dump;
  if (body.contains("dump") && !body["dump"].is_null()) dump = field<std::size_t>(body, "dump");

  if (!latents_.images().count(image_id)) {
    throw Error(ErrorCode::kNotFound, "unknown image " + std::to_string(image_id));
  }
  const io::VisualLatentRecord* rec = latents_.find(image_id, row, col, layer, dump);
  if (!rec) {
    throw Error(ErrorCode::kNotFound, "no latent for image " + std::to_string(image_id) + " patch (" +
                                          std::to_string(row) + ", " + std::to_string(col) + ") layer " +
                                          std::to_string(layer));
  }
  lens::LensMethod method;
  method.kind = lens::parse_lens_kind(method_name);
  method.threads = config_.threads;
  if (body.contains("layer_filter") && !body["layer_filter"].is_null()) {
    method.layer_filter = field<std::vector<std::uint16_t>>(body, "layer_filter");
  }
  if (body.contains("final_norm")) method.logit.final_norm = field<bool>(body, "final_norm");
  const lens::LensResources res{embedding_ ? &*embedding_ : nullptr, unembedding_ ? &*unembedding_ : nullptr,
                                index_.get()};
  const auto matches = lens::describe(lens::from_record(*rec), method, res, static_cast<std::size_t>(k));
  json out = json::array();
  for (std::size_t i = 0; i < matches.size(); ++i) {
    std::optional<lens::MergedWord> word;
    if (matches[i].phrase_id && index_) word = lens::merge_to_full_word(matches[i], index_->phrases());
    json m = report::to_json(matches[i], word);
    m["rank"] = i + 1;
    out.push_back(std::move(m));
  }
  return json_response(200, {{"query",
                              {{"image_id", image_id},
                               {"row", row},
                               {"col", col},
                               {"layer", layer},
                               {"method", method_name},
                               {"k", k}}},
                             {"matches", out}});
}

std::size_t Service::dump_param(const ApiRequest& r) const {
  std::size_t d = 0;
  if (auto it = r.query.find("dump"); it != r.query.end()) d = parse_uint(it->second, "dump");
  if (d >= latents_.dumps().size()) throw Error(ErrorCode::kNotFound, "unknown dump " + std::to_string(d));
  return d;
}

namespace {

std::size_t k_param(const ApiRequest& r) {
  std::size_t k = lens::kDefaultTopK;
  if (auto it = r.query.find("k"); it != r.query.end()) k = parse_uint(it->second, "k");
  if (k < 1) throw Error(ErrorCode::kRejectedInput, "k must be >= 1");
  return k;
}

}  // namespace

ApiResponse Service::alignment(const ApiRequest& r) {
  if (!index_) throw Error(ErrorCode::kNotFound, "no index loaded");
  const std::size_t d = dump_param(r);
  const std::size_t k = k_param(r);
  const std::string key = "align/" + std::to_string(d) + "/" + std::to_string(k);
  {
    std::lock_guard lock(memo_mutex_);
    if (auto it = memo_.find(key); it != memo_.end()) return json_response(200, json::parse(it->second));
  }
  std::vector<lens::LatentVector> qs;
  for (const auto& rec : latents_.dumps()[d].records) qs.push_back(lens::from_record(rec));
  const json body = report::to_json(analysis::layer_alignment(qs, *index_, k, config_.threads));
  std::lock_guard lock(memo_mutex_);
  memo_[key] = body.dump();
  return json_response(200, body);
}

ApiResponse Service::norms(const ApiRequest& r) {
  const std::size_t d = dump_param(r);
  std::vector<analysis::NormSample> samples;
  for (const auto& rec : latents_.dumps()[d].records) {
    samples.push_back({lens::Modality::kVisual, rec.layer_id, rec.raw_l2_norm});
  }
  if (index_) {
    for (const auto& shard : index_->shards()) {
      for (float n : shard.raw_norms) samples.push_back({lens::Modality::kText, shard.layer_id, n});
    }
  }
  return json_response(200, report::to_json(analysis::norm_stats(samples)));
}

ApiResponse Service::drift(const ApiRequest& r) {
  const std::size_t d = dump_param(r);
  std::vector<analysis::TokenState> states;
  for (const auto& rec : latents_.dumps()[d].records) {
    states.push_back({analysis::visual_token_key(rec.image_id, rec.patch_row, rec.patch_col), lens::Modality::kVisual,
                      rec.layer_id, rec.vector});
  }
  return json_response(200, report::to_json(analysis::token_drift(states)));
}

ApiResponse Service::similarity_hist(const ApiRequest& r) {
  if (!index_) throw Error(ErrorCode::kNotFound, "no index loaded");
  const std::size_t d = dump_param(r);
  const std::size_t k = k_param(r);
  std::optional<std::uint16_t> layer;
  if (auto it = r.query.find("layer"); it != r.query.end()) {
    layer = static_cast<std::uint16_t>(parse_uint(it->second, "layer"));
  }
  std::vector<float> scores;
  lens::LatentLensOptions opts;
  opts.threads = config_.threads;
  for (const auto& rec : latents_.dumps()[d].records) {
    if (layer && rec.layer_id != *layer) continue;
    for (const auto& m : lens::latent_lens(lens::from_record(rec), *index_, k, opts)) scores.push_back(m.score);
  }
  return json_response(200, report::to_json(analysis::similarity_histogram(scores)));
}

std::string Service::start_job(const std::string& kind, std::function<json(int&)> work) {
  auto job = std::make_shared<Job>();
  std::string id;
  {
    std::lock_guard lock(jobs_mutex_);
    id = kind + "-" + std::to_string(next_job_++);
    jobs_[id] = job;
  }
  job->worker = std::jthread([job, work = std::move(work)] {
    int status = 200;
    json result;
    try {
      result = work(status);
    } catch (const Error& e) {
      status = status_for(e.code());
      result = {{"error", {{"code", to_string(e.code())}, {"message", e.what()}}}};
    } catch (const std::exception& e) {
      status = 500;
      result = {{"error", {{"code", "internal"}, {"message", e.what()}}}};
    }
    job->status = status;
    job->result = std::move(result);
    job->done.store(true, std::memory_order_release);
  });
  return id;
}

ApiResponse Service::job_result(const std::string& kind, const std::string& id) {
  std::shared_ptr<Job> job;
  {
    std::lock_guard lock(jobs_mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end() || id.rfind(kind + "-", 0) != 0) {
      throw Error(ErrorCode::kNotFound, "unknown job " + id);
    }
    job = it->second;
  }
  if (!job->done.load(std::memory_order_acquire)) {
    return json_response(409, {{"job", id}, {"status", "running"},
                               {"error", {{"code", "job_running"}, {"message", "job not finished"}}}});
  }
  json body = job->result;
  body["job"] = id;
  body["status"] = job->status == 200 ? "done" : "failed";
  return json_response(job->status, body);
}

void Service::wait_for_jobs() {
  std::vector<std::shared_ptr<Job>> jobs;
  {
    std::lock_guard lock(jobs_mutex_);
    for (auto& [id, job] : jobs_) jobs.push_back(job);
  }
  for (auto& job : jobs) {
    if (job->worker.joinable() && job->worker.get_id() != std::this_thread::get_id()) job->worker.join();
  }
}

ApiResponse Service::judge_batch(const json& body) {
  if (!config_.judge_transport) {
    return error_response(503, "judge_unavailable", "no judge endpoint configured");
  }
  const json items = field<json>(body, "items");
  if (!items.is_array() || items.empty()) throw Error(ErrorCode::kRejectedInput, "'items' must be a nonempty list");
  std::vector<judge::JudgeRequest> requests;
  std::vector<std::uint16_t> layers;
  for (const json& item : items) {
    const auto layer = field<std::uint16_t>(item, "layer");
    std::vector<std::string> words = field_or<std::vector<std::string>>(item, "candidates", {});
    if (words.empty()) {
      json q = item;
      q["k"] = judge::kMaxCandidates;
      const json matches = lens_query(q).json().at("matches");
      for (const json& m : matches) {
        std::string w = m["full_word"].is_null() ? m["description"].get<std::string>()
                                                 : m["full_word"]["word"].get<std::string>();
        if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(std::move(w));
      }
    }
    if (!config_.images_dir) throw Error(ErrorCode::kNotFound, "no images directory configured");
    const auto full = field<std::string>(item, "full_image");
    const auto crop = field<std::string>(item, "cropped_region");
    if (!safe_relative(full) || !safe_relative(crop)) throw Error(ErrorCode::kRejectedInput, "bad image path");
    const auto full_path = *config_.images_dir / full;
    const auto crop_path = *config_.images_dir / crop;
    requests.push_back(judge::build_request({media_type_for(full_path), read_file(full_path)},
                                            {media_type_for(crop_path), read_file(crop_path)}, std::move(words)));
    layers.push_back(layer);
  }
  judge::JudgeConfig cfg = config_.judge;
  if (body.contains("max_in_flight")) cfg.max_in_flight = field<std::uint32_t>(body, "max_in_flight");
  auto factory = config_.judge_transport;
  const std::string id = start_job("judge", [cfg, factory, requests = std::move(requests),
                                             layers = std::move(layers), items](int& status) {
    auto transport = factory();
    const judge::BatchResult result = judge::run_judgments(requests, cfg, *transport);
    json verdicts = json::array();
    std::vector<analysis::LayerVerdict> lv;
    for (const auto& v : result.verdicts) {
      verdicts.push_back({{"request_index", v.request_index},
                          {"item", items[v.request_index]},
                          {"candidates", requests[v.request_index].candidate_words},
                          {"verdict", report::to_json(v.verdict)},
                          {"warnings", v.warnings},
                          {"from_cache", v.from_cache}});
      lv.push_back({layers[v.request_index], v.verdict});
    }
    const bool unreachable =
        result.verdicts.empty() && !result.failures.empty() &&
        std::all_of(result.failures.begin(), result.failures.end(),
                    [](const judge::FailureRecord& f) { return f.reason.rfind("transport:", 0) == 0; });
    if (unreachable) status = 503;
    return json{{"verdicts", verdicts},
                {"report", report::to_json(analysis::interpretability_rate(lv))},
                {"manifest", judge::failure_manifest(result)},
                {"error", unreachable ? json{{"code", "judge_unreachable"}, {"message", "judge endpoint unreachable"}}
                                      : json(nullptr)}};
  });
  return json_response(202, {{"job", id}, {"status", "running"}});
}

ApiResponse Service::evolve_start(const json& body) {
  if (!config_.evolution_backend) {
    return error_response(503, "evolve_unavailable", "no generator or embedder configured");
  }
  const auto image_id = field<std::uint32_t>(body, "image_id");
  const auto row = field<std::uint16_t>(body, "row");
  const auto col = field<std::uint16_t>(body, "col");
  const auto layer = field<std::uint16_t>(body, "layer");
  if (!latents_.images().count(image_id)) {
    throw Error(ErrorCode::kNotFound, "unknown image " + std::to_string(image_id));
  }
  const io::VisualLatentRecord* rec = latents_.find(image_id, row, col, layer);
  if (!rec) throw Error(ErrorCode::kNotFound, "no latent for that patch and layer");

  evolution::EvolutionConfig cfg;
  if (body.contains("config")) {
    const json& c = body["config"];
    cfg.rounds = field_or<std::uint32_t>(c, "rounds", cfg.rounds);
    cfg.variations_per_round = field_or<std::uint32_t>(c, "variations_per_round", cfg.variations_per_round);
    cfg.keep = field_or<std::uint32_t>(c, "keep", cfg.keep);
    cfg.seed = field_or<std::uint64_t>(c, "seed", cfg.seed);
    cfg.allow_target_substitution = field_or<bool>(c, "allow_target_substitution", false);
  }
  cfg.validate();

  std::vector<evolution::CandidatePhrase> seeds;
  if (body.contains("seeds")) {
    for (const json& s : body["seeds"]) {
      evolution::CandidatePhrase c;
      c.text = field<std::string>(s, "text");
      c.target_token = field<std::string>(s, "target_token");
      seeds.push_back(std::move(c));
    }
  } else {
    if (!index_) throw Error(ErrorCode::kNotFound, "no index loaded for default seeds");
    lens::LatentLensOptions opts;
    opts.threads = config_.threads;
    for (const auto& m : lens::latent_lens(lens::from_record(*rec), *index_, lens::kDefaultTopK, opts)) {
      seeds.push_back(evolution::seed_from_match(m, index_->phrases()));
    }
  }
  const lens::LatentVector h = lens::from_record(*rec);
  auto factory = config_.evolution_backend;
  const std::string id = start_job("evolve", [cfg, h, seeds = std::move(seeds), factory](int&) {
    EvolutionBackend backend = factory();
    return evolution::to_json(evolution::evolve(h, seeds, *backend.generator, *backend.embedder, cfg));
  });
  return json_response(202, {{"job", id}, {"status", "running"}});
}

ApiResponse Service::thumbnail(const std::string& name) {
  if (!config_.thumbnails_dir || !safe_relative(name) || name.find('/') != std::string::npos) {
    throw Error(ErrorCode::kNotFound, "no thumbnail " + name);
  }
  const auto path = *config_.thumbnails_dir / name;
  ApiResponse r;
  r.body = read_file(path);
  r.content_type = media_type_for(path);
  return r;
}

// ---- HTTP front end ----

namespace {

void install_routes(httplib::Server& http, Service& service) {
  const auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
    ApiRequest r;
    r.method = req.method;
    r.path = req.path;
    for (const auto& [k, v] : req.params) r.query[k] = v;
    r.body = req.body;
    const ApiResponse out = service.handle(r);
    res.status = out.status;
    for (const auto& [k, v] : out.headers) res.set_header(k, v);
    if (out.status != 204) res.set_content(out.body, out.content_type);
  };
  http.Get(".*", forward);
  http.Post(".*", forward);
  http.Options(".*", forward);
}

}  // namespace

int Service::serve_background(const std::string& host, int port) {
  server_ = std::make_unique<Server>();
  install_routes(server_->http, *this);
  int bound = port;
  if (port == 0) {
    bound = server_->http.bind_to_any_port(host);
  } else if (!server_->http.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound <= 0) throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  server_thread_ = std::jthread([this] { server_->http.listen_after_bind(); });
  server_->http.wait_until_ready();
  return bound;
}

void Service::stop() {
  if (server_) server_->http.stop();
  if (server_thread_.joinable()) server_thread_.join();
}

}  // namespace latentlens::service
