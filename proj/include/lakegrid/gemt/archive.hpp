#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lakegrid/common/bytes.hpp"

namespace lakegrid::gemt {

struct ArchiveOptions {
  bool compress = true;
  std::uint64_t max_bytes = 256ull << 20;  // limit on total unpacked size
};

/// Single-file container: content blobs (each optionally DEFLATE-compressed)
/// followed by a trailing index mapping entry paths to blobs. Identical
/// payloads are stored once and fanned out to every path on unpack.
///
///   "LGAR" u8 version u8 flags | blobs... | index | u64 index_offset u32 index_crc "LGAX"
///
/// Output is deterministic: entries are sorted by path and compression
/// settings are fixed, so equal inputs produce byte-identical archives.
class ArchiveBuilder {
 public:
  explicit ArchiveBuilder(ArchiveOptions options = {}) : options_(options) {}

  // Throws Error(Packaging) past the size limit, Error(Validation) for bad paths.
  void add(const std::string& path, SharedBytes data);
  void add(const std::string& path, std::string data) { add(path, share(std::move(data))); }

  std::string build() const;

 private:
  ArchiveOptions options_;
  std::map<std::string, SharedBytes> entries_;
  std::uint64_t raw_total_ = 0;
};

class ArchiveReader {
 public:
  // Validates structure and checksums; throws Error(Input) on any corruption.
  explicit ArchiveReader(std::string bytes);

  std::vector<std::string> paths() const;
  bool contains(const std::string& path) const { return entries_.count(path) != 0; }
  std::string read(const std::string& path) const;
  std::map<std::string, std::string> unpack() const;

  std::size_t blob_count() const { return blobs_.size(); }
  // Sum of distinct payload sizes (what dedup actually stores).
  std::uint64_t logical_size() const;
  // Sum over entries, i.e. the size after fan-out.
  std::uint64_t unpacked_size() const;
  std::size_t archive_size() const { return bytes_.size(); }

 private:
  struct Blob {
    std::uint64_t offset = 0;
    std::uint64_t stored = 0;
    std::uint64_t raw = 0;
    std::uint8_t method = 0;
    std::uint32_t crc = 0;
  };

  std::string bytes_;
  std::vector<Blob> blobs_;
  std::map<std::string, std::uint32_t> entries_;
};

std::string pack(const std::map<std::string, std::string>& files, ArchiveOptions options = {});
std::map<std::string, std::string> unpack(std::string archive);

// Relative, '/'-separated, no empty or "."/".." components.
void validate_entry_path(std::string_view path);

}  // namespace lakegrid::gemt
