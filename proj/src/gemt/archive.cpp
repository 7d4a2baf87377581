#include "lakegrid/gemt/archive.hpp"

#include <zlib.h>

#include <unordered_map>

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/kv.hpp"
#include "lakegrid/common/random.hpp"

namespace lakegrid::gemt {

namespace {

constexpr std::string_view kHeadMagic = "LGAR";
constexpr std::string_view kTailMagic = "LGAX";
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kStored = 0;
constexpr std::uint8_t kDeflate = 1;
constexpr std::size_t kFooterSize = 8 + 4 + 4;

std::uint32_t crc_of(std::string_view data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib's length argument is 32-bit; feed large payloads in pieces.
  std::size_t pos = 0;
  while (pos < data.size()) {
    auto n = static_cast<uInt>(std::min<std::size_t>(data.size() - pos, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data() + pos), n);
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string deflate_bytes(std::string_view raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::string out(bound, '\0');
  int rc = compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                     reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()), 6);
  if (rc != Z_OK) throw Error(ErrorKind::Packaging, "deflate failed");
  out.resize(bound);
  return out;
}

std::string inflate_bytes(std::string_view stored, std::uint64_t raw_size) {
  std::string out(raw_size, '\0');
  uLongf len = static_cast<uLongf>(raw_size);
  int rc = uncompress(reinterpret_cast<Bytef*>(out.data()), &len,
                      reinterpret_cast<const Bytef*>(stored.data()), static_cast<uLong>(stored.size()));
  if (rc != Z_OK || len != raw_size) throw Error(ErrorKind::Input, "corrupt archive: inflate failed");
  return out;
}

Error corrupt(const std::string& what) { return Error(ErrorKind::Input, "corrupt archive: " + what); }

}  // namespace

void validate_entry_path(std::string_view path) {
  if (path.empty() || path.front() == '/' || path.find('\\') != std::string_view::npos ||
      path.find('\0') != std::string_view::npos || path.size() > 4096) {
    throw Error(ErrorKind::Validation, "invalid archive path '" + std::string(path) + "'");
  }
  for (const auto& part : split(path, '/')) {
    if (part.empty() || part == "." || part == "..") {
      throw Error(ErrorKind::Validation, "invalid archive path '" + std::string(path) + "'");
    }
  }
}

void ArchiveBuilder::add(const std::string& path, SharedBytes data) {
  validate_entry_path(path);
  if (!data) data = share({});
  auto it = entries_.find(path);
  if (it != entries_.end()) raw_total_ -= it->second->size();
  raw_total_ += data->size();
  if (raw_total_ > options_.max_bytes) {
    throw Error(ErrorKind::Packaging, "payload exceeds archive limit of " +
                                          std::to_string(options_.max_bytes) + " bytes");
  }
  entries_[path] = std::move(data);
}

std::string ArchiveBuilder::build() const {
  ByteWriter w;
  w.raw(kHeadMagic);
  w.u8(kVersion);
  w.u8(options_.compress ? 1 : 0);

  struct BlobInfo {
    std::uint64_t offset, stored, raw;
    std::uint8_t method;
    std::uint32_t crc;
  };
  std::vector<BlobInfo> blobs;
  std::vector<std::uint32_t> entry_blob;
  std::unordered_map<const std::string*, std::uint32_t> by_pointer;
  std::unordered_map<std::string, std::uint32_t> by_digest;

  for (const auto& [path, data] : entries_) {
    auto pit = by_pointer.find(data.get());
    if (pit != by_pointer.end()) {
      entry_blob.push_back(pit->second);
      continue;
    }
    auto digest = sha256(*data);
    auto dit = by_digest.find(digest);
    if (dit != by_digest.end()) {
      by_pointer[data.get()] = dit->second;
      entry_blob.push_back(dit->second);
      continue;
    }
    BlobInfo b{w.size(), 0, data->size(), kStored, crc_of(*data)};
    std::string packed;
    if (options_.compress && !data->empty()) packed = deflate_bytes(*data);
    if (!packed.empty() && packed.size() < data->size()) {
      b.method = kDeflate;
      b.stored = packed.size();
      w.raw(packed);
    } else {
      b.stored = data->size();
      w.raw(*data);
    }
    auto index = static_cast<std::uint32_t>(blobs.size());
    blobs.push_back(b);
    by_pointer[data.get()] = index;
    by_digest.emplace(std::move(digest), index);
    entry_blob.push_back(index);
  }

  const std::uint64_t index_offset = w.size();
  ByteWriter idx;
  idx.u32(static_cast<std::uint32_t>(blobs.size()));
  for (const auto& b : blobs) {
    idx.u64(b.offset);
    idx.u64(b.stored);
    idx.u64(b.raw);
    idx.u8(b.method);
    idx.u32(b.crc);
  }
  idx.u32(static_cast<std::uint32_t>(entries_.size()));
  std::size_t i = 0;
  for (const auto& [path, _] : entries_) {
    idx.u16(static_cast<std::uint16_t>(path.size()));
    idx.raw(path);
    idx.u32(entry_blob[i++]);
  }
  auto index_bytes = idx.take();
  w.raw(index_bytes);
  w.u64(index_offset);
  w.u32(crc_of(index_bytes));
  w.raw(kTailMagic);
  return w.take();
}

ArchiveReader::ArchiveReader(std::string bytes) : bytes_(std::move(bytes)) {
  std::string_view all(bytes_);
  if (all.size() < 6 + kFooterSize || all.substr(0, 4) != kHeadMagic) throw corrupt("bad header");
  if (static_cast<std::uint8_t>(all[4]) != kVersion) throw corrupt("unsupported version");
  if (all.substr(all.size() - 4) != kTailMagic) throw corrupt("bad trailer");

  ByteReader footer(all.substr(all.size() - kFooterSize));
  auto index_offset = footer.u64();
  auto index_crc = footer.u32();
  if (index_offset < 6 || index_offset > all.size() - kFooterSize) throw corrupt("bad index offset");
  auto index = all.substr(index_offset, all.size() - kFooterSize - index_offset);
  if (crc_of(index) != index_crc) throw corrupt("index checksum mismatch");

  ByteReader r(index);
  auto nblobs = r.u32();
  for (std::uint32_t i = 0; i < nblobs; ++i) {
    Blob b;
    b.offset = r.u64();
    b.stored = r.u64();
    b.raw = r.u64();
    b.method = r.u8();
    b.crc = r.u32();
    if (b.offset < 6 || b.offset > index_offset || b.stored > index_offset - b.offset) {
      throw corrupt("blob out of bounds");
    }
    if (b.method != kStored && b.method != kDeflate) throw corrupt("unknown blob method");
    if (b.method == kStored && b.stored != b.raw) throw corrupt("stored blob size mismatch");
    blobs_.push_back(b);
  }
  auto nentries = r.u32();
  for (std::uint32_t i = 0; i < nentries; ++i) {
    auto len = r.u16();
    std::string path(r.raw(len));
    auto blob = r.u32();
    if (blob >= blobs_.size()) throw corrupt("entry references missing blob");
    try {
      validate_entry_path(path);
    } catch (const Error&) {
      throw corrupt("unsafe entry path '" + path + "'");
    }
    entries_[path] = blob;
  }
  if (!r.done()) throw corrupt("trailing index bytes");
}

std::vector<std::string> ArchiveReader::paths() const {
  std::vector<std::string> out;
  for (const auto& [p, _] : entries_) out.push_back(p);
  return out;
}

std::string ArchiveReader::read(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw Error(ErrorKind::NotFound, "archive has no entry '" + path + "'");
  const auto& b = blobs_[it->second];
  auto stored = std::string_view(bytes_).substr(b.offset, b.stored);
  std::string raw = b.method == kDeflate ? inflate_bytes(stored, b.raw) : std::string(stored);
  if (crc_of(raw) != b.crc) throw corrupt("payload checksum mismatch for '" + path + "'");
  return raw;
}

std::map<std::string, std::string> ArchiveReader::unpack() const {
  std::map<std::string, std::string> out;
  for (const auto& [p, _] : entries_) out.emplace(p, read(p));
  return out;
}

std::uint64_t ArchiveReader::logical_size() const {
  std::uint64_t total = 0;
  for (const auto& b : blobs_) total += b.raw;
  return total;
}

std::uint64_t ArchiveReader::unpacked_size() const {
  std::uint64_t total = 0;
  for (const auto& [_, blob] : entries_) total += blobs_[blob].raw;
  return total;
}

std::string pack(const std::map<std::string, std::string>& files, ArchiveOptions options) {
  ArchiveBuilder b(options);
  for (const auto& [path, data] : files) b.add(path, data);
  return b.build();
}

std::map<std::string, std::string> unpack(std::string archive) {
  return ArchiveReader(std::move(archive)).unpack();
}

}  // namespace lakegrid::gemt
