#include "latentlens/corpus_index.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>

#include "latentlens/error.hpp"
#include "latentlens/vector_ops.hpp"

namespace latentlens::corpus {

std::vector<std::uint16_t> default_layer_set(std::uint16_t num_layers) {
  std::set<std::uint16_t> layers;
  for (int l : {1, 2, 4, 8, 16, 24, num_layers - 2, num_layers - 1}) {
    if (l >= 0 && l < num_layers) layers.insert(static_cast<std::uint16_t>(l));
  }
  return {layers.begin(), layers.end()};
}

std::vector<std::uint16_t> parse_layer_spec(std::string_view spec,
                                            std::optional<std::uint16_t> num_layers) {
  std::set<std::uint16_t> layers;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const std::size_t comma = std::min(spec.find(',', pos), spec.size());
    std::string_view term = spec.substr(pos, comma - pos);
    while (!term.empty() && term.front() == ' ') term.remove_prefix(1);
    while (!term.empty() && term.back() == ' ') term.remove_suffix(1);
    if (term.empty()) throw Error(ErrorCode::kRejectedInput, "empty term in layer list");
    long value = 0;
    if (term.front() == 'L' || term.front() == 'N') {
      if (!num_layers) {
        throw Error(ErrorCode::kConfiguration, "layer term '" + std::string(term) +
                                                   "' needs the model layer count");
      }
      value = *num_layers;
      term.remove_prefix(1);
      if (!term.empty()) {
        if (term.front() != '-') throw Error(ErrorCode::kRejectedInput, "bad layer term");
        term.remove_prefix(1);
        long off = 0;
        auto [p, ec] = std::from_chars(term.data(), term.data() + term.size(), off);
        if (ec != std::errc() || p != term.data() + term.size()) {
          throw Error(ErrorCode::kRejectedInput, "bad layer offset");
        }
        value -= off;
      }
    } else {
      auto [p, ec] = std::from_chars(term.data(), term.data() + term.size(), value);
      if (ec != std::errc() || p != term.data() + term.size()) {
        throw Error(ErrorCode::kRejectedInput, "bad layer id '" + std::string(term) + "'");
      }
    }
    if (value < 0 || value > 0xFFFF || (num_layers && value >= *num_layers)) {
      throw Error(ErrorCode::kRejectedInput, "layer " + std::to_string(value) + " out of range");
    }
    layers.insert(static_cast<std::uint16_t>(value));
    pos = comma + 1;
  }
  return {layers.begin(), layers.end()};
}

// ---- CorpusIndex ----

CorpusIndex::CorpusIndex(BuildMetadata metadata, PhraseTable phrases, std::vector<LayerShard> shards,
                         std::map<TokenLayer, std::uint64_t> counters)
    : metadata_(std::move(metadata)),
      phrases_(std::move(phrases)),
      shards_(std::move(shards)),
      counters_(std::move(counters)) {
  std::sort(shards_.begin(), shards_.end(),
            [](const LayerShard& a, const LayerShard& b) { return a.layer_id < b.layer_id; });
}

std::optional<std::size_t> CorpusIndex::shard_ordinal(std::uint16_t layer) const {
  for (std::size_t i = 0; i < shards_.size(); ++i) {
    if (shards_[i].layer_id == layer) return i;
  }
  return std::nullopt;
}

std::vector<std::uint16_t> CorpusIndex::layers() const {
  std::vector<std::uint16_t> out;
  for (const LayerShard& s : shards_) out.push_back(s.layer_id);
  return out;
}

std::size_t CorpusIndex::entry_count() const {
  std::size_t n = 0;
  for (const LayerShard& s : shards_) n += s.size();
  return n;
}

std::uint64_t CorpusIndex::occurrences(std::uint32_t vocab_token_id, std::uint16_t layer) const {
  auto it = counters_.find({vocab_token_id, layer});
  return it == counters_.end() ? 0 : it->second;
}

ReferenceEntry CorpusIndex::entry(ReferenceId id) const {
  const std::size_t s = reference_shard(id);
  const std::size_t i = reference_index(id);
  if (s >= shards_.size() || i >= shards_[s].size()) {
    throw Error(ErrorCode::kNotFound, "reference id " + std::to_string(id) + " not in index");
  }
  const LayerShard& sh = shards_[s];
  ReferenceEntry e;
  auto codes = sh.codes_of(i);
  e.vector.codes.assign(codes.begin(), codes.end());
  e.vector.scale = sh.scales[i];
  e.phrase_id = sh.phrase_ids[i];
  e.token_index = sh.token_indices[i];
  e.vocab_token_id = sh.vocab_token_ids[i];
  e.layer_id = sh.layer_id;
  e.raw_l2_norm = sh.raw_norms[i];
  return e;
}

std::vector<LayerStats> CorpusIndex::stats() const {
  std::vector<LayerStats> out;
  for (const LayerShard& s : shards_) {
    LayerStats st;
    st.layer_id = s.layer_id;
    st.entries = s.size();
    std::set<std::uint32_t> tokens(s.vocab_token_ids.begin(), s.vocab_token_ids.end());
    st.unique_tokens = tokens.size();
    for (const auto& [key, count] : counters_) {
      if (key.second == s.layer_id) st.occurrences += count;
    }
    out.push_back(st);
  }
  return out;
}

bool CorpusIndex::operator==(const CorpusIndex& other) const {
  return metadata_ == other.metadata_ && phrases_ == other.phrases_ && shards_ == other.shards_ &&
         counters_ == other.counters_;
}

// ---- IndexBuilder ----

IndexBuilder::IndexBuilder(BuildOptions options) : options_(std::move(options)) {
  if (options_.cap == 0) throw Error(ErrorCode::kRejectedInput, "cap must be >= 1");
  std::sort(options_.layers.begin(), options_.layers.end());
  options_.layers.erase(std::unique(options_.layers.begin(), options_.layers.end()), options_.layers.end());
}

void IndexBuilder::begin_stream(const io::DumpHeader& header, std::span<const io::PhraseRecord> phrases) {
  if (header.kind != io::StreamKind::kReference) {
    throw Error(ErrorCode::kRejectedInput, "index input must be a reference stream");
  }
  if (!metadata_) {
    metadata_ = BuildMetadata{options_.cap, options_.seed, header.model_tag, header.dim,
                              options_.exclude_special};
    if (options_.layers.empty()) options_.layers = header.layer_ids;
  } else if (metadata_->dim != header.dim || metadata_->model_tag != header.model_tag) {
    throw Error(ErrorCode::kRejectedInput,
                "dump (" + header.model_tag + ", dim " + std::to_string(header.dim) +
                    ") does not match index (" + metadata_->model_tag + ", dim " +
                    std::to_string(metadata_->dim) + ")");
  }
  stream_layers_ = header.layer_ids;
  local_phrases_.clear();
  for (const io::PhraseRecord& p : phrases) {
    const auto added = phrases_.add(p.text, p.tokens);
    const auto [it, fresh] = local_phrases_.emplace(p.phrase_id, LocalPhrase{added.id, added.inserted});
    if (!fresh) {
      throw Error(ErrorCode::kRejectedRecord, "phrase id " + std::to_string(p.phrase_id) +
                                                  " appears twice in one phrase table");
    }
  }
}

LayerShard& IndexBuilder::shard_for(std::uint16_t layer) {
  auto [it, fresh] = shards_.try_emplace(layer);
  if (fresh) {
    it->second.layer_id = layer;
    it->second.dim = metadata_->dim;
  }
  return it->second;
}

void IndexBuilder::add_record(const io::ReferenceEmbeddingRecord& r) {
  if (!metadata_) throw Error(ErrorCode::kRejectedInput, "add_record before begin_stream");
  ++counters_.records;
  if (r.vector.size() != metadata_->dim) {
    throw Error(ErrorCode::kRejectedRecord, "record dim mismatch");
  }
  if (!std::binary_search(stream_layers_.begin(), stream_layers_.end(), r.layer_id)) {
    throw Error(ErrorCode::kRejectedRecord,
                "layer " + std::to_string(r.layer_id) + " not declared by its stream");
  }
  auto lp = local_phrases_.find(r.phrase_id);
  if (lp == local_phrases_.end()) {
    throw Error(ErrorCode::kRejectedRecord, "phrase id " + std::to_string(r.phrase_id) +
                                                " missing from the stream's phrase table");
  }
  const Phrase& phrase = phrases_.at(lp->second.global_id);
  if (r.token_index >= phrase.tokens.size()) {
    throw Error(ErrorCode::kRejectedRecord, "token index " + std::to_string(r.token_index) +
                                                " outside phrase " + std::to_string(r.phrase_id));
  }
  const io::TokenSpan& tok = phrase.tokens[r.token_index];
  if (tok.vocab_token_id != r.vocab_token_id) {
    throw Error(ErrorCode::kRejectedRecord, "record vocab id disagrees with phrase table");
  }
  if (!std::binary_search(options_.layers.begin(), options_.layers.end(), r.layer_id)) {
    ++counters_.skipped_layer;
    return;
  }
  if (!lp->second.first_occurrence) {
    ++counters_.skipped_duplicate_phrase;
    return;
  }
  if (options_.exclude_special && tok.special()) {
    ++counters_.skipped_special;
    return;
  }

  const std::uint64_t key = (std::uint64_t{r.vocab_token_id} << 16) | r.layer_id;
  auto res = reservoirs_.find(key);
  if (res == reservoirs_.end()) {
    res = reservoirs_.emplace(key, Reservoir(ReservoirKey{options_.seed, r.vocab_token_id, r.layer_id},
                                             options_.cap))
              .first;
  }
  const auto slot = res->second.admit();
  if (!slot) return;

  const float norm = l2_norm(r.vector);
  if (!(norm > 0.0f) || !all_finite(r.vector)) {
    throw Error(ErrorCode::kRejectedRecord, "reference vector is zero or non-finite");
  }
  scratch_.assign(r.vector.begin(), r.vector.end());
  for (float& x : scratch_) x /= norm;

  LayerShard& sh = shard_for(r.layer_id);
  std::size_t at;
  if (*slot == res->second.slots().size()) {
    at = sh.size();
    sh.codes.resize(sh.codes.size() + metadata_->dim);
    sh.scales.push_back(0.0f);
    sh.raw_norms.push_back(0.0f);
    sh.phrase_ids.push_back(0);
    sh.token_indices.push_back(0);
    sh.vocab_token_ids.push_back(0);
    res->second.set_slot(*slot, static_cast<std::uint32_t>(at));
  } else {
    at = res->second.slots()[*slot];
  }
  sh.scales[at] = quantize_into(scratch_, std::span<std::int8_t>(sh.codes).subspan(at * sh.dim, sh.dim));
  sh.raw_norms[at] = norm;
  sh.phrase_ids[at] = lp->second.global_id;
  sh.token_indices[at] = r.token_index;
  sh.vocab_token_ids[at] = r.vocab_token_id;
  ++counters_.admitted;
}

void IndexBuilder::add_dump(io::DumpReader& reader) {
  const auto phrases = reader.phrase_table();
  begin_stream(reader.header(), phrases);
  while (auto rec = reader.next_reference()) add_record(*rec);
}

CorpusIndex IndexBuilder::finish() {
  if (!metadata_) throw Error(ErrorCode::kRejectedInput, "no input streams");
  std::vector<LayerShard> shards;
  for (auto& [layer, shard] : shards_) shards.push_back(std::move(shard));
  std::map<TokenLayer, std::uint64_t> counters;
  for (const auto& [key, res] : reservoirs_) {
    counters[{static_cast<std::uint32_t>(key >> 16), static_cast<std::uint16_t>(key & 0xFFFF)}] = res.seen();
  }
  shards_.clear();
  reservoirs_.clear();
  return CorpusIndex(*metadata_, std::move(phrases_), std::move(shards), std::move(counters));
}

CorpusIndex build_index(std::span<const std::filesystem::path> dumps, const BuildOptions& options) {
  IndexBuilder builder(options);
  for (const auto& path : dumps) {
    io::DumpReader reader = io::DumpReader::open(path);
    builder.add_dump(reader);
  }
  return builder.finish();
}

// ---- persistence ----

void save_index(const CorpusIndex& index, std::ostream& out) {
  const BuildMetadata& m = index.metadata();
  io::DumpHeader h{io::StreamKind::kIndex, m.dim, m.model_tag, index.layers()};
  io::write_header(out, h);
  io::PayloadWriter w(out);
  w.put(m.cap);
  w.put(m.seed);
  w.put(static_cast<std::uint8_t>(m.exclude_special ? 1 : 0));

  const auto& phrases = index.phrases().phrases();
  w.put(static_cast<std::uint32_t>(phrases.size()));
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    io::write_phrase(w, io::PhraseRecord{static_cast<std::uint32_t>(i), phrases[i].text, phrases[i].tokens});
  }

  w.put(static_cast<std::uint64_t>(index.counters().size()));
  for (const auto& [key, count] : index.counters()) {
    w.put(key.first);
    w.put(key.second);
    w.put(count);
  }

  std::uint64_t total = 0;
  for (const LayerShard& s : index.shards()) {
    w.put(static_cast<std::uint64_t>(s.size()));
    w.put_array(std::span<const float>(s.scales));
    w.put_array(std::span<const float>(s.raw_norms));
    w.put_array(std::span<const std::uint32_t>(s.phrase_ids));
    w.put_array(std::span<const std::uint16_t>(s.token_indices));
    w.put_array(std::span<const std::uint32_t>(s.vocab_token_ids));
    w.put_array(std::span<const std::int8_t>(s.codes));
    total += s.size();
  }
  io::write_trailer(out, total, w.crc());
  out.flush();
}

void save_index(const CorpusIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot create " + path.string());
  save_index(index, out);
}

CorpusIndex load_index(std::istream& in) {
  const io::ContainerInfo info = io::open_container(in, true);
  if (info.header.kind != io::StreamKind::kIndex) {
    throw Error(ErrorCode::kRejectedInput, "not an index file");
  }
  io::PayloadReader r(in, info.payload_size);
  BuildMetadata m;
  m.dim = info.header.dim;
  m.model_tag = info.header.model_tag;
  m.cap = r.get<std::uint32_t>();
  m.seed = r.get<std::uint64_t>();
  m.exclude_special = r.get<std::uint8_t>() != 0;
  if (m.cap == 0) throw Error(ErrorCode::kCorruptIndex, "cap is zero");

  PhraseTable phrases;
  const auto n_phrases = r.get<std::uint32_t>();
  if (n_phrases > r.remaining() / 11) throw Error(ErrorCode::kTruncated, "phrase count exceeds payload");
  for (std::uint32_t i = 0; i < n_phrases; ++i) {
    io::PhraseRecord p = io::read_phrase(r);
    if (p.phrase_id != i) throw Error(ErrorCode::kCorruptIndex, "phrase ids are not dense");
    if (!phrases.add(std::move(p.text), std::move(p.tokens)).inserted) {
      throw Error(ErrorCode::kCorruptIndex, "duplicate phrase text in index");
    }
  }

  std::map<TokenLayer, std::uint64_t> counters;
  const auto n_counters = r.get<std::uint64_t>();
  if (n_counters > r.remaining() / 14) throw Error(ErrorCode::kTruncated, "counter count exceeds payload");
  for (std::uint64_t i = 0; i < n_counters; ++i) {
    const auto tok = r.get<std::uint32_t>();
    const auto layer = r.get<std::uint16_t>();
    counters[{tok, layer}] = r.get<std::uint64_t>();
  }

  std::vector<LayerShard> shards;
  std::uint64_t total = 0;
  const std::uint64_t per_entry = 4 + 4 + 4 + 2 + 4 + std::uint64_t{m.dim};
  for (std::uint16_t layer : info.header.layer_ids) {
    LayerShard s;
    s.layer_id = layer;
    s.dim = m.dim;
    const auto n = r.get<std::uint64_t>();
    if (n > r.remaining() / per_entry) throw Error(ErrorCode::kTruncated, "shard size exceeds payload");
    s.scales.resize(n);
    s.raw_norms.resize(n);
    s.phrase_ids.resize(n);
    s.token_indices.resize(n);
    s.vocab_token_ids.resize(n);
    s.codes.resize(n * m.dim);
    r.get_array(std::span<float>(s.scales));
    r.get_array(std::span<float>(s.raw_norms));
    r.get_array(std::span<std::uint32_t>(s.phrase_ids));
    r.get_array(std::span<std::uint16_t>(s.token_indices));
    r.get_array(std::span<std::uint32_t>(s.vocab_token_ids));
    r.get_array(std::span<std::int8_t>(s.codes));
    for (std::size_t i = 0; i < n; ++i) {
      const Phrase& p = phrases.at(s.phrase_ids[i]);
      if (s.token_indices[i] >= p.tokens.size()) {
        throw Error(ErrorCode::kCorruptIndex, "entry token index outside its phrase");
      }
    }
    std::map<std::uint32_t, std::uint64_t> stored;
    for (std::uint32_t tok : s.vocab_token_ids) ++stored[tok];
    for (const auto& [tok, count] : stored) {
      auto it = counters.find({tok, layer});
      if (count > m.cap || it == counters.end() || it->second < count) {
        throw Error(ErrorCode::kCorruptIndex, "entry counts violate cap or occurrence counters");
      }
    }
    total += n;
    shards.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw Error(ErrorCode::kCorruptIndex, "trailing bytes in index payload");
  if (total != info.record_count) throw Error(ErrorCode::kCorruptIndex, "entry count disagrees with trailer");
  return CorpusIndex(std::move(m), std::move(phrases), std::move(shards), std::move(counters));
}

CorpusIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return load_index(in);
}

}  // namespace latentlens::corpus
