#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

namespace rgr {

// 64-bit FNV-1a. Used for config digests, batch audits and result digests;
// not a cryptographic hash.
class Fnv1a {
 public:
  static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  static constexpr std::uint64_t kPrime = 0x100000001b3ULL;

  Fnv1a& bytes(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= p[i];
      state_ *= kPrime;
    }
    return *this;
  }
  Fnv1a& str(std::string_view s) { return bytes(s.data(), s.size()); }

  template <typename T>
  Fnv1a& pod(const T& value) {
    return bytes(&value, sizeof(T));
  }

  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = kOffset;
};

std::string to_hex(std::uint64_t value);

inline std::string Fnv1a::hex() const { return to_hex(state_); }

inline std::string to_hex(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xF];
    value >>= 4;
  }
  return out;
}

// Derives an independent stream seed from a master seed and a tag.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
  Fnv1a h;
  h.pod(master).str(tag);
  return h.value();
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  Fnv1a h;
  h.pod(master).pod(index);
  return h.value();
}

}  // namespace rgr
