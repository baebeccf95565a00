// latentlens command-line tool. Flags take precedence over LATENTLENS_*
// environment variables, which take precedence over built-in defaults.

#include <algorithm>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "latentlens/analysis.hpp"
#include "latentlens/corpus_index.hpp"
#include "latentlens/error.hpp"
#include "latentlens/evolution.hpp"
#include "latentlens/formats.hpp"
#include "latentlens/judge.hpp"
#include "latentlens/lens.hpp"
#include "latentlens/report_io.hpp"
#include "latentlens/service.hpp"
#include "latentlens/testkit.hpp"
#include "latentlens/version.hpp"
#include "latentlens/word_merge.hpp"

namespace fs = std::filesystem;
using namespace latentlens;
using nlohmann::json;

namespace {

// Exit codes by failure category.
enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kMissingFile = 3,
  kCorrupt = 4,
  kRejected = 5,
  kPartial = 6,
};

int exit_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo:
    case ErrorCode::kNotFound: return kMissingFile;
    case ErrorCode::kCorruptIndex:
    case ErrorCode::kCorruptInput:
    case ErrorCode::kBadMagic:
    case ErrorCode::kUnsupportedVersion:
    case ErrorCode::kCrcMismatch:
    case ErrorCode::kTruncated: return kCorrupt;
    default: return kRejected;
  }
}

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw Error(ErrorCode::kNotFound, "no such file: " + p.string());
}

std::unique_ptr<std::ostream> open_out(const std::string& path) {
  if (path.empty() || path == "-") return nullptr;
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  auto f = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
  if (!*f) throw Error(ErrorCode::kIo, "cannot write " + path);
  return f;
}

struct Output {
  explicit Output(const std::string& path) : file(open_out(path)) {}
  std::ostream& get() { return file ? *file : std::cout; }
  std::unique_ptr<std::ostream> file;
};

std::vector<std::uint16_t> parse_layers(const std::string& s) {
  if (s.empty()) return {};
  return corpus::parse_layer_spec(s, std::nullopt);
}

std::optional<io::VisualLatentRecord> find_latent(const fs::path& path, std::uint32_t image, std::uint16_t row,
                                                  std::uint16_t col, std::uint16_t layer) {
  io::DumpReader reader = io::DumpReader::open(path);
  while (auto rec = reader.next_latent()) {
    if (rec->image_id == image && rec->patch_row == row && rec->patch_col == col && rec->layer_id == layer) {
      return rec;
    }
  }
  return std::nullopt;
}

std::string query_key(const io::VisualLatentRecord& r) {
  return analysis::visual_token_key(r.image_id, r.patch_row, r.patch_col) + "@" + std::to_string(r.layer_id);
}

struct LensInputs {
  std::string index;
  std::string vocab;
  std::string method = "latent";
  std::size_t k = lens::kDefaultTopK;
  std::string layer_filter;
  bool final_norm = false;
};

struct LoadedLens {
  std::optional<corpus::CorpusIndex> index;
  std::optional<std::uint32_t> index_crc;
  std::optional<io::VocabularyMatrix> vocab;
  lens::LensMethod method;
  lens::LensResources res;
};

std::unique_ptr<LoadedLens> load_lens(const LensInputs& in, unsigned threads) {
  auto l = std::make_unique<LoadedLens>();
  l->method.kind = lens::parse_lens_kind(in.method);
  l->method.threads = threads;
  l->method.logit.final_norm = in.final_norm;
  if (!in.layer_filter.empty()) l->method.layer_filter = parse_layers(in.layer_filter);
  if (!in.index.empty()) {
    require_file(in.index);
    l->index = corpus::load_index(fs::path(in.index));
    l->index_crc = report::index_fingerprint(in.index);
    l->res.index = &*l->index;
  }
  if (!in.vocab.empty()) {
    require_file(in.vocab);
    l->vocab = io::read_vocabulary(fs::path(in.vocab));
    (l->vocab->role == io::MatrixRole::kEmbedding ? l->res.embedding : l->res.unembedding) = &*l->vocab;
  }
  return l;
}

std::vector<report::MatchRow> rows_for(const io::VisualLatentRecord& rec, const LoadedLens& l, const LensInputs& in) {
  const auto matches = lens::describe(lens::from_record(rec), l.method, l.res, in.k);
  std::vector<report::MatchRow> rows;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    report::MatchRow r;
    r.query_key = query_key(rec);
    r.image_id = rec.image_id;
    r.row = rec.patch_row;
    r.col = rec.patch_col;
    r.layer = rec.layer_id;
    r.method = in.method;
    r.rank = static_cast<std::uint32_t>(i + 1);
    r.match = matches[i];
    if (matches[i].phrase_id && l.index) r.full_word = lens::merge_to_full_word(matches[i], l.index->phrases());
    rows.push_back(std::move(r));
  }
  return rows;
}

void print_table(std::ostream& out, const std::vector<report::MatchRow>& rows) {
  out << std::left << std::setw(5) << "rank" << std::setw(11) << "score" << std::setw(8) << "layer" << std::setw(20)
      << "full_word" << "description\n";
  for (const auto& r : rows) {
    std::ostringstream score;
    score << std::fixed << std::setprecision(6) << r.match.score;
    out << std::left << std::setw(5) << r.rank << std::setw(11) << score.str() << std::setw(8)
        << (r.match.source_layer ? std::to_string(*r.match.source_layer) : "-") << std::setw(20)
        << (r.full_word ? r.full_word->word : "-") << r.match.description << '\n';
  }
}

std::vector<lens::LatentVector> all_latents(const fs::path& path) {
  std::vector<lens::LatentVector> out;
  io::DumpReader reader = io::DumpReader::open(path);
  while (auto rec = reader.next_latent()) out.push_back(lens::from_record(*rec));
  return out;
}

std::string slurp(const fs::path& p) {
  require_file(p);
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

analysis::Lexicon read_lexicon(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw Error(ErrorCode::kRejectedInput, "lexicon must be name=file, got " + spec);
  analysis::Lexicon lex;
  lex.name = spec.substr(0, eq);
  std::istringstream in(slurp(spec.substr(eq + 1)));
  std::string w;
  while (in >> w) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
    lex.words.insert(w);
  }
  return lex;
}

fs::path existing(const std::string& p) {
  require_file(p);
  return p;
}

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latentlens: map visual-token latents to text descriptions"};
  app.set_version_flag("--version", std::string(kEngineVersion));
  app.require_subcommand(1);

  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--threads", threads, "Worker thread cap")->envname("LATENTLENS_THREADS")->check(CLI::PositiveNumber);

  // ---- build-index ----
  auto* build = app.add_subcommand("build-index", "Build a reference index from reference dumps");
  std::vector<std::string> refs;
  std::uint32_t cap = corpus::kDefaultCap;
  std::uint64_t seed = 0;
  std::string layers_spec;
  std::optional<std::uint16_t> num_layers;
  bool keep_special = false;
  std::string index_out;
  build->add_option("--refs", refs, "Reference dump files")->required()->envname("LATENTLENS_REFS");
  build->add_option("--cap", cap, "Vectors kept per (token, layer)")->envname("LATENTLENS_CAP")->check(CLI::PositiveNumber);
  build->add_option("--seed", seed, "Reservoir seed")->envname("LATENTLENS_SEED");
  build->add_option("--layers", layers_spec, "Layer list, e.g. 1,2,4,8,16,24,L-2,L-1")->envname("LATENTLENS_LAYERS");
  build->add_option("--num-layers", num_layers, "Model layer count for L terms (default: from the dump)");
  build->add_flag("--keep-special", keep_special, "Keep records of special tokens");
  build->add_option("--out", index_out, "Output index file")->required()->envname("LATENTLENS_INDEX_OUT");

  // ---- query ----
  auto* query = app.add_subcommand("query", "Describe one visual token (or all with --all)");
  LensInputs lin;
  std::string latents_path;
  std::uint32_t image = 0;
  std::uint16_t row = 0, col = 0, layer = 0;
  bool query_all = false;
  bool as_csv = false;
  std::string query_out;
  query->add_option("--index", lin.index, "Index file")->envname("LATENTLENS_INDEX");
  query->add_option("--latents", latents_path, "Visual latent dump")->required()->envname("LATENTLENS_LATENTS");
  query->add_option("--image", image, "Image id");
  query->add_option("--row", row, "Patch row");
  query->add_option("--col", col, "Patch column");
  query->add_option("--layer", layer, "Latent layer");
  query->add_option("--method", lin.method, "embedding | logit | latent")
      ->check(CLI::IsMember({"embedding", "logit", "latent"}))
      ->envname("LATENTLENS_METHOD");
  query->add_option("--k", lin.k, "Matches per query")->envname("LATENTLENS_K")->check(CLI::PositiveNumber);
  query->add_option("--vocab", lin.vocab, "Vocabulary matrix (embedding or unembedding)")->envname("LATENTLENS_VOCAB");
  query->add_option("--layer-filter", lin.layer_filter, "Stored layers to search, e.g. 8,16");
  query->add_flag("--final-norm", lin.final_norm, "Logit lens: RMS-normalize before unembedding");
  query->add_flag("--all", query_all, "Describe every latent in the dump");
  query->add_flag("--csv", as_csv, "CSV instead of a table");
  query->add_option("--out", query_out, "Output file (default stdout)");

  // ---- analyze ----
  auto* analyze = app.add_subcommand("analyze", "Aggregate analyses written as CSV");
  analyze->require_subcommand(1);
  std::string an_out;
  std::string an_index, an_latents;
  std::vector<std::string> an_refs;
  std::size_t an_k = lens::kDefaultTopK;
  std::optional<std::uint16_t> an_layer;
  std::size_t an_bins = analysis::kNormHistogramBins;
  std::string overlap_a, overlap_b, attr_matches;
  std::vector<std::string> lexicons;
  auto add_common = [&](CLI::App* sub) { sub->add_option("--out", an_out, "Output CSV (default stdout)"); };
  auto* a_align = analyze->add_subcommand("alignment", "Source-layer counts of top-k matches per query layer");
  a_align->add_option("--index", an_index)->required()->envname("LATENTLENS_INDEX");
  a_align->add_option("--latents", an_latents)->required()->envname("LATENTLENS_LATENTS");
  a_align->add_option("--k", an_k)->check(CLI::PositiveNumber);
  add_common(a_align);
  auto* a_drift = analyze->add_subcommand("drift", "Cosine of each token to its layer-0 state");
  a_drift->add_option("--latents", an_latents)->envname("LATENTLENS_LATENTS");
  a_drift->add_option("--refs", an_refs, "Reference dumps for text-token drift");
  add_common(a_drift);
  auto* a_norms = analyze->add_subcommand("norms", "L2 norm statistics per modality and layer");
  a_norms->add_option("--latents", an_latents)->envname("LATENTLENS_LATENTS");
  a_norms->add_option("--index", an_index, "Index whose stored raw norms give the text side");
  a_norms->add_option("--bins", an_bins)->check(CLI::PositiveNumber);
  std::string max_token_out;
  a_norms->add_option("--max-token-out", max_token_out, "Dimension histogram of the largest-norm latent");
  add_common(a_norms);
  auto* a_sim = analyze->add_subcommand("simhist", "Histogram of top-k latent-lens scores");
  a_sim->add_option("--index", an_index)->required()->envname("LATENTLENS_INDEX");
  a_sim->add_option("--latents", an_latents)->required()->envname("LATENTLENS_LATENTS");
  a_sim->add_option("--k", an_k)->check(CLI::PositiveNumber);
  a_sim->add_option("--layer", an_layer, "Only latents of this layer");
  add_common(a_sim);
  auto* a_overlap = analyze->add_subcommand("overlap", "Top-k neighbour overlap between two match tables");
  a_overlap->add_option("--a", overlap_a)->required();
  a_overlap->add_option("--b", overlap_b)->required();
  add_common(a_overlap);
  auto* a_attr = analyze->add_subcommand("attributes", "Lexicon hit rates of matched full words per layer");
  a_attr->add_option("--matches", attr_matches)->required();
  a_attr->add_option("--lexicon", lexicons, "name=wordfile (repeatable)")->required();
  add_common(a_attr);

  // ---- judge ----
  auto* judge_cmd = app.add_subcommand("judge", "Send top-k words to an external judge");
  std::string judge_matches, judge_images, judge_out = "judge-out";
  judge::JudgeConfig jcfg;
  std::optional<std::string> judge_cache;
  judge_cmd->add_option("--matches", judge_matches, "Match CSV from query --all --csv")->required();
  judge_cmd->add_option("--images", judge_images,
                        "Directory with <image>_r<row>_c<col>_full.png and _crop.png")
      ->required();
  judge_cmd->add_option("--endpoint", jcfg.endpoint)->envname("LATENTLENS_JUDGE_ENDPOINT");
  judge_cmd->add_option("--model", jcfg.model)->envname("LATENTLENS_JUDGE_MODEL");
  judge_cmd->add_option("--auth-env", jcfg.auth_env, "Variable holding the bearer token");
  judge_cmd->add_option("--retries", jcfg.max_retries)->envname("LATENTLENS_JUDGE_RETRIES");
  judge_cmd->add_option("--max-in-flight", jcfg.max_in_flight)->check(CLI::PositiveNumber);
  std::int64_t backoff_ms = jcfg.backoff_initial.count();
  std::int64_t timeout_s = jcfg.timeout.count();
  judge_cmd->add_option("--backoff-ms", backoff_ms, "Initial retry delay");
  judge_cmd->add_option("--timeout", timeout_s, "Per-request timeout in seconds");
  judge_cmd->add_option("--cache-dir", judge_cache)->envname("LATENTLENS_JUDGE_CACHE");
  judge_cmd->add_option("--out", judge_out, "Output directory");

  // ---- evolve ----
  auto* evolve_cmd = app.add_subcommand("evolve", "Evolve phrase contexts toward one latent");
  std::string evo_latent, evo_seeds, evo_config, evo_out = "-";
  std::string gen_endpoint, gen_model = "gpt-5", emb_endpoint;
  evolve_cmd->add_option("--latent", evo_latent, "dump.llns-lat:image:row:col:layer")->required();
  evolve_cmd->add_option("--seeds", evo_seeds, "Match CSV; rows for that latent become seeds")->required();
  evolve_cmd->add_option("--config", evo_config, "rounds=6,variations=20,keep=5[,seed=N,substitute=1]")
      ->envname("LATENTLENS_EVOLVE_CONFIG");
  evolve_cmd->add_option("--generator-endpoint", gen_endpoint)->envname("LATENTLENS_GENERATOR_ENDPOINT");
  evolve_cmd->add_option("--generator-model", gen_model)->envname("LATENTLENS_GENERATOR_MODEL");
  evolve_cmd->add_option("--embedder-endpoint", emb_endpoint)->envname("LATENTLENS_EMBEDDER_ENDPOINT");
  evolve_cmd->add_option("--out", evo_out, "Run manifest JSON (default stdout)");

  // ---- gen-fixture ----
  auto* gen = app.add_subcommand("gen-fixture", "Write a planted synthetic fixture");
  std::string gen_spec, gen_preset, gen_out;
  std::string gen_layers = "0,1,2,4,8";
  std::uint32_t gen_queries = 4, gen_dim = 64, gen_distractors = 100;
  std::uint16_t gen_leap = 8;
  std::uint64_t gen_seed = 1;
  gen->add_option("--spec", gen_spec, "Planted spec JSON");
  gen->add_option("--preset", gen_preset, "diagonal | leap")->check(CLI::IsMember({"diagonal", "leap"}));
  gen->add_option("--layers", gen_layers);
  gen->add_option("--queries-per-layer", gen_queries);
  gen->add_option("--dim", gen_dim);
  gen->add_option("--distractors", gen_distractors);
  gen->add_option("--leap-layer", gen_leap);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--out", gen_out, "Output directory")->required();

  // ---- serve ----
  auto* serve = app.add_subcommand("serve", "Serve the JSON API");
  service::ServiceConfig scfg;
  std::string serve_index, serve_emb, serve_unemb, serve_thumbs, serve_images, port_file;
  std::vector<std::string> serve_latents;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string serve_judge_endpoint;
  serve->add_option("--index", serve_index)->envname("LATENTLENS_INDEX");
  serve->add_option("--latents", serve_latents)->envname("LATENTLENS_LATENTS");
  serve->add_option("--vocab-emb", serve_emb);
  serve->add_option("--vocab-unemb", serve_unemb);
  serve->add_option("--thumbnails", serve_thumbs);
  serve->add_option("--images", serve_images, "Root for judge image paths");
  serve->add_option("--judge-endpoint", serve_judge_endpoint)->envname("LATENTLENS_JUDGE_ENDPOINT");
  serve->add_option("--judge-model", scfg.judge.model)->envname("LATENTLENS_JUDGE_MODEL");
  serve->add_option("--host", host)->envname("LATENTLENS_HOST");
  serve->add_option("--port", port, "0 picks a free port")->envname("LATENTLENS_PORT");
  serve->add_option("--port-file", port_file, "Write the bound port here once listening");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (build->parsed()) {
      std::vector<fs::path> paths(refs.begin(), refs.end());
      for (const auto& p : paths) require_file(p);
      corpus::BuildOptions opts;
      opts.cap = cap;
      opts.seed = seed;
      opts.exclude_special = !keep_special;
      if (!layers_spec.empty()) {
        std::optional<std::uint16_t> n = num_layers;
        if (!n) {
          // Infer the model depth from the first dump's highest layer.
          io::DumpReader r = io::DumpReader::open(paths.front());
          const auto& ids = r.header().layer_ids;
          if (!ids.empty()) n = static_cast<std::uint16_t>(ids.back() + 1);
        }
        opts.layers = corpus::parse_layer_spec(layers_spec, n);
      }
      const corpus::CorpusIndex index = corpus::build_index(paths, opts);
      corpus::save_index(index, fs::path(index_out));
      std::cout << "# " << report::provenance(report::index_fingerprint(index_out)) << '\n';
      report::write_csv_row(std::cout, {"layer", "entries", "unique_tokens", "occurrences"});
      for (const auto& s : index.stats()) {
        report::write_csv_row(std::cout, {std::to_string(s.layer_id), std::to_string(s.entries),
                                          std::to_string(s.unique_tokens), std::to_string(s.occurrences)});
      }
      return kOk;
    }

    if (query->parsed()) {
      require_file(latents_path);
      const auto l = load_lens(lin, threads);
      std::vector<report::MatchRow> rows;
      if (query_all) {
        io::DumpReader reader = io::DumpReader::open(latents_path);
        while (auto rec = reader.next_latent()) {
          auto part = rows_for(*rec, *l, lin);
          rows.insert(rows.end(), part.begin(), part.end());
        }
      } else {
        const auto rec = find_latent(latents_path, image, row, col, layer);
        if (!rec) {
          throw Error(ErrorCode::kNotFound, "no latent for image " + std::to_string(image) + " (" +
                                                std::to_string(row) + ", " + std::to_string(col) + ") layer " +
                                                std::to_string(layer));
        }
        rows = rows_for(*rec, *l, lin);
      }
      Output out(query_out);
      if (as_csv || query_all) {
        report::write_matches_csv(out.get(), rows, l->index_crc);
      } else {
        print_table(out.get(), rows);
      }
      return kOk;
    }

    if (analyze->parsed()) {
      Output out(an_out);
      if (a_align->parsed()) {
        require_file(an_index);
        require_file(an_latents);
        const auto index = corpus::load_index(fs::path(an_index));
        io::DumpReader reader = io::DumpReader::open(an_latents);
        const auto m = analysis::layer_alignment(reader, index, an_k, threads);
        report::write_alignment_csv(out.get(), m, report::index_fingerprint(an_index));
      } else if (a_drift->parsed()) {
        std::vector<analysis::TokenState> states;
        if (!an_latents.empty()) {
          require_file(an_latents);
          io::DumpReader reader = io::DumpReader::open(an_latents);
          while (auto rec = reader.next_latent()) {
            states.push_back({analysis::visual_token_key(rec->image_id, rec->patch_row, rec->patch_col),
                              lens::Modality::kVisual, rec->layer_id, std::move(rec->vector)});
          }
        }
        for (std::size_t d = 0; d < an_refs.size(); ++d) {
          require_file(an_refs[d]);
          io::DumpReader reader = io::DumpReader::open(an_refs[d]);
          while (auto rec = reader.next_reference()) {
            states.push_back({std::to_string(d) + "/" + analysis::text_token_key(rec->phrase_id, rec->token_index),
                              lens::Modality::kText, rec->layer_id, std::move(rec->vector)});
          }
        }
        if (states.empty()) throw Error(ErrorCode::kRejectedInput, "drift needs --latents or --refs");
        report::write_drift_csv(out.get(), analysis::token_drift(states));
      } else if (a_norms->parsed()) {
        std::vector<analysis::NormSample> samples;
        if (!an_latents.empty()) {
          require_file(an_latents);
          io::DumpReader reader = io::DumpReader::open(an_latents);
          while (auto rec = reader.next_latent()) {
            samples.push_back({lens::Modality::kVisual, rec->layer_id, rec->raw_l2_norm});
          }
          if (!max_token_out.empty()) {
            reader.rewind();
            if (auto mx = analysis::max_norm_token(reader)) {
              Output mo(max_token_out);
              mo.get() << "# image " << mx->record.image_id << " row " << mx->record.patch_row << " col "
                       << mx->record.patch_col << " layer " << mx->record.layer_id << " norm "
                       << mx->record.raw_l2_norm << '\n';
              report::write_histogram_csv(mo.get(), mx->dimension_histogram);
            }
          }
        }
        if (!an_index.empty()) {
          require_file(an_index);
          const auto index = corpus::load_index(fs::path(an_index));
          for (const auto& shard : index.shards()) {
            for (float n : shard.raw_norms) samples.push_back({lens::Modality::kText, shard.layer_id, n});
          }
        }
        if (samples.empty()) throw Error(ErrorCode::kRejectedInput, "norms needs --latents or --index");
        report::write_norms_csv(out.get(), analysis::norm_stats(samples, an_bins));
      } else if (a_sim->parsed()) {
        require_file(an_index);
        const auto index = corpus::load_index(fs::path(an_index));
        lens::LatentLensOptions opts;
        opts.threads = threads;
        std::vector<float> scores;
        for (const auto& h : all_latents(an_latents)) {
          if (an_layer && h.layer_id != *an_layer) continue;
          for (const auto& m : lens::latent_lens(h, index, an_k, opts)) scores.push_back(m.score);
        }
        report::write_histogram_csv(out.get(), analysis::similarity_histogram(scores));
      } else if (a_overlap->parsed()) {
        const auto a = report::group_by_query(report::read_matches_csv(report::read_csv(existing(overlap_a))));
        const auto b = report::group_by_query(report::read_matches_csv(report::read_csv(existing(overlap_b))));
        report::write_overlap_csv(out.get(), analysis::nn_overlap(a, b));
      } else if (a_attr->parsed()) {
        std::vector<analysis::Lexicon> lex;
        for (const auto& s : lexicons) lex.push_back(read_lexicon(s));
        std::vector<analysis::LayerWord> words;
        for (const auto& r : report::read_matches_csv(report::read_csv(existing(attr_matches)))) {
          words.push_back({r.layer, r.full_word ? r.full_word->word : r.match.description});
        }
        report::write_attributes_csv(out.get(), analysis::attribute_counts(words, lex));
      }
      return kOk;
    }

    if (judge_cmd->parsed()) {
      jcfg.backoff_initial = std::chrono::milliseconds(backoff_ms);
      jcfg.timeout = std::chrono::seconds(timeout_s);
      if (judge_cache) jcfg.cache_dir = *judge_cache;
      const auto rows = report::read_matches_csv(report::read_csv(existing(judge_matches)));
      const auto groups = report::group_by_query(rows);
      std::vector<judge::JudgeRequest> requests;
      std::vector<report::MatchRow> heads;
      for (const auto& g : groups) {
        const auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.query_key == g.query_key; });
        std::vector<std::string> words;
        for (const auto& r : rows) {
          if (r.query_key != g.query_key) continue;
          std::string w = r.full_word ? r.full_word->word : r.match.description;
          if (std::find(words.begin(), words.end(), w) == words.end() && words.size() < judge::kMaxCandidates) {
            words.push_back(std::move(w));
          }
        }
        const std::string stem = std::to_string(it->image_id) + "_r" + std::to_string(it->row) + "_c" +
                                 std::to_string(it->col);
        const fs::path full = fs::path(judge_images) / (stem + "_full.png");
        const fs::path crop = fs::path(judge_images) / (stem + "_crop.png");
        requests.push_back(judge::build_request({"image/png", slurp(full)}, {"image/png", slurp(crop)}, words));
        heads.push_back(*it);
      }
      const auto transport = judge::make_http_transport(jcfg);
      const judge::BatchResult result = judge::run_judgments(requests, jcfg, *transport);
      fs::create_directories(judge_out);
      json verdicts = json::array();
      std::vector<analysis::LayerVerdict> lv;
      for (const auto& v : result.verdicts) {
        const auto& h = heads[v.request_index];
        verdicts.push_back({{"query_key", h.query_key},
                            {"image_id", h.image_id},
                            {"row", h.row},
                            {"col", h.col},
                            {"layer", h.layer},
                            {"candidates", requests[v.request_index].candidate_words},
                            {"verdict", report::to_json(v.verdict)},
                            {"warnings", v.warnings}});
        lv.push_back({h.layer, v.verdict});
      }
      std::ofstream(fs::path(judge_out) / "verdicts.json") << verdicts.dump(2) << '\n';
      std::ofstream(fs::path(judge_out) / "failures.json") << judge::failure_manifest(result).dump(2) << '\n';
      {
        std::ofstream rep(fs::path(judge_out) / "interpretability.csv");
        report::write_interpretability_csv(rep, analysis::interpretability_rate(lv));
      }
      std::cerr << result.verdicts.size() << " verdicts, " << result.failures.size() << " failures, "
                << result.retries.size() << " retries; outputs in " << judge_out << '\n';
      return result.failures.empty() ? kOk : kPartial;
    }

    if (evolve_cmd->parsed()) {
      // dump:image:row:col:layer, split from the right so paths may hold ':'.
      std::vector<std::string> parts;
      std::string rest = evo_latent;
      for (int i = 0; i < 4; ++i) {
        const auto c = rest.rfind(':');
        if (c == std::string::npos) throw Error(ErrorCode::kRejectedInput, "--latent must be dump:image:row:col:layer");
        parts.insert(parts.begin(), rest.substr(c + 1));
        rest = rest.substr(0, c);
      }
      const auto num = [](const std::string& s) { return static_cast<std::uint32_t>(std::stoul(s)); };
      const auto rec = find_latent(rest, num(parts[0]), static_cast<std::uint16_t>(num(parts[1])),
                                   static_cast<std::uint16_t>(num(parts[2])), static_cast<std::uint16_t>(num(parts[3])));
      if (!rec) throw Error(ErrorCode::kNotFound, "latent " + evo_latent + " not found");
      std::vector<evolution::CandidatePhrase> seeds;
      for (const auto& r : report::read_matches_csv(report::read_csv(existing(evo_seeds)))) {
        if (r.image_id != rec->image_id || r.row != rec->patch_row || r.col != rec->patch_col ||
            r.layer != rec->layer_id || !r.full_word) {
          continue;
        }
        evolution::CandidatePhrase c;
        c.text = r.match.description.substr(0, r.full_word->span.end);
        c.target_token = r.full_word->word;
        c.score = r.match.score;
        seeds.push_back(std::move(c));
      }
      if (seeds.empty()) throw Error(ErrorCode::kRejectedInput, "no seed rows with full words for that latent");
      const auto cfg = evolution::parse_config(evo_config);
      if (gen_endpoint.empty() || emb_endpoint.empty()) {
        throw Error(ErrorCode::kConfiguration, "evolve needs --generator-endpoint and --embedder-endpoint");
      }
      judge::JudgeConfig gcfg;
      gcfg.endpoint = gen_endpoint;
      judge::JudgeConfig ecfg;
      ecfg.endpoint = emb_endpoint;
      auto gt = judge::make_http_transport(gcfg);
      auto et = judge::make_http_transport(ecfg);
      evolution::ChatPhraseGenerator generator(*gt, gen_model);
      evolution::HttpPhraseEmbedder embedder(*et);
      const auto run = evolution::evolve(lens::from_record(*rec), seeds, generator, embedder, cfg);
      Output out(evo_out);
      out.get() << evolution::to_json(run).dump(2) << '\n';
      return kOk;
    }

    if (gen->parsed()) {
      testkit::PlantedSpec spec;
      if (!gen_spec.empty()) {
        spec = testkit::spec_from_json(json::parse(slurp(gen_spec)));
      } else if (gen_preset == "leap") {
        spec = testkit::leap_spec(parse_layers(gen_layers), gen_leap, gen_queries, 5, gen_dim, gen_seed);
        spec.distractors_per_layer = gen_distractors;
      } else if (gen_preset == "diagonal") {
        spec = testkit::diagonal_spec(parse_layers(gen_layers), gen_queries, 5, gen_dim, gen_seed);
        spec.distractors_per_layer = gen_distractors;
      } else {
        throw Error(ErrorCode::kRejectedInput, "gen-fixture needs --spec or --preset");
      }
      const auto corpus = testkit::generate_planted_corpus(spec);
      const auto paths = testkit::write_planted_fixture(corpus, spec, gen_out);
      std::cout << paths.references.string() << '\n'
                << paths.latents.string() << '\n'
                << paths.manifest.string() << '\n';
      return kOk;
    }

    if (serve->parsed()) {
      if (!serve_index.empty()) {
        require_file(serve_index);
        scfg.index_path = serve_index;
      }
      for (const auto& p : serve_latents) {
        require_file(p);
        scfg.latent_paths.push_back(p);
      }
      if (!serve_emb.empty()) scfg.embedding_path = serve_emb;
      if (!serve_unemb.empty()) scfg.unembedding_path = serve_unemb;
      if (!serve_thumbs.empty()) scfg.thumbnails_dir = serve_thumbs;
      if (!serve_images.empty()) scfg.images_dir = serve_images;
      scfg.threads = threads;
      if (!serve_judge_endpoint.empty()) {
        scfg.judge.endpoint = serve_judge_endpoint;
        scfg.judge_transport = [cfg = scfg.judge] { return judge::make_http_transport(cfg); };
      }
      service::Service svc(scfg);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const int bound = svc.serve_background(host, port);
      if (!port_file.empty()) {
        const std::string tmp = port_file + ".tmp";
        std::ofstream(tmp) << bound << '\n';
        fs::rename(tmp, port_file);
      }
      std::cerr << "serving on http://" << host << ":" << bound << '\n';
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      svc.stop();
      return kOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_for(e.code());
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRejected;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
