#include "latentlens/latent_store.hpp"

#include "latentlens/error.hpp"

namespace latentlens::service {

void LatentStore::add(const std::filesystem::path& path) {
  io::DumpReader reader = io::DumpReader::open(path);
  if (reader.header().kind != io::StreamKind::kVisualLatent) {
    throw Error(ErrorCode::kRejectedInput, path.string() + " is not a visual-latent dump");
  }
  Dump dump{path, reader.header(), {}};
  std::map<Key, std::size_t> lookup;
  const std::size_t ordinal = dumps_.size();
  while (auto rec = reader.next_latent()) {
    lookup[{rec->image_id, rec->patch_row, rec->patch_col, rec->layer_id}] = dump.records.size();
    ImageInfo& info = images_[rec->image_id];
    info.image_id = rec->image_id;
    info.rows = std::max<std::uint16_t>(info.rows, rec->patch_row + 1);
    info.cols = std::max<std::uint16_t>(info.cols, rec->patch_col + 1);
    info.layers.insert(rec->layer_id);
    info.dumps.insert(ordinal);
    dump.records.push_back(std::move(*rec));
  }
  dumps_.push_back(std::move(dump));
  lookup_.push_back(std::move(lookup));
}

const io::VisualLatentRecord* LatentStore::find(std::uint32_t image_id, std::uint16_t row, std::uint16_t col,
                                                std::uint16_t layer, std::optional<std::size_t> dump) const {
  const Key key{image_id, row, col, layer};
  for (std::size_t d = 0; d < dumps_.size(); ++d) {
    if (dump && *dump != d) continue;
    auto it = lookup_[d].find(key);
    if (it != lookup_[d].end()) return &dumps_[d].records[it->second];
  }
  return nullptr;
}

}  // namespace latentlens::service
