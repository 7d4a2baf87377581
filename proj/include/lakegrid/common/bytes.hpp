#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace lakegrid {

// Binary payloads are carried in std::string; every helper here is binary-safe.
using SharedBytes = std::shared_ptr<const std::string>;

inline SharedBytes share(std::string data) {
  return std::make_shared<const std::string>(std::move(data));
}

inline std::span<const std::uint8_t> as_span(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

std::string to_hex(std::string_view raw);
std::string from_hex(std::string_view hex);

/// Big-endian serializer for the binary wire and archive formats.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void raw(std::string_view bytes) { out_.append(bytes); }
  // u32 length prefix followed by the bytes.
  void blob(std::string_view bytes);

  std::size_t size() const { return out_.size(); }
  std::string& buffer() { return out_; }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

/// Bounds-checked reader; any overrun throws Error(Input).
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  std::string_view raw(std::size_t n);
  std::string_view blob();
  std::string_view rest();

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const;

  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace lakegrid
