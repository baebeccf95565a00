#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <vector>

#include "latentlens/formats.hpp"

namespace latentlens::service {

struct ImageInfo {
  std::uint32_t image_id = 0;
  std::uint16_t rows = 0;
  std::uint16_t cols = 0;
  std::set<std::uint16_t> layers;
  std::set<std::size_t> dumps;
};

/// Visual-latent dumps held in memory and indexed by patch and layer.
class LatentStore {
 public:
  struct Dump {
    std::filesystem::path path;
    io::DumpHeader header;
    std::vector<io::VisualLatentRecord> records;
  };

  void add(const std::filesystem::path& path);

  const std::vector<Dump>& dumps() const { return dumps_; }
  const std::map<std::uint32_t, ImageInfo>& images() const { return images_; }

  /// Searches `dump` if given, else every dump in load order.
  const io::VisualLatentRecord* find(std::uint32_t image_id, std::uint16_t row, std::uint16_t col,
                                     std::uint16_t layer, std::optional<std::size_t> dump = std::nullopt) const;

 private:
  using Key = std::tuple<std::uint32_t, std::uint16_t, std::uint16_t, std::uint16_t>;
  std::vector<Dump> dumps_;
  std::vector<std::map<Key, std::size_t>> lookup_;
  std::map<std::uint32_t, ImageInfo> images_;
};

}  // namespace latentlens::service
