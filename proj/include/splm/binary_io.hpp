#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace splm::io {

using Bytes = std::vector<std::uint8_t>;

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string to_hex(std::span<const std::uint8_t> bytes);

// Little-endian appenders and a bounds-checked reader.
inline void put_bytes(Bytes& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <typename U>
void put_le(Bytes& out, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::uint8_t buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  out.insert(out.end(), buf, buf + sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw std::runtime_error("truncated input");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename U>
  U get_le() {
    auto s = take(sizeof(U));
    std::uint8_t buf[sizeof(U)];
    std::memcpy(buf, s.data(), sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    U value;
    std::memcpy(&value, buf, sizeof(U));
    return value;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::span<const std::uint8_t> rest() const { return bytes_.subspan(pos_); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

Bytes read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace splm::io
