#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

namespace fsnas {

// FNV-1a, used for content hashes and seed derivation. Not cryptographic.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

class ContentHasher {
 public:
  void update(const void* data, std::size_t len) { h_ = fnv1a64(data, len, h_); }
  void update(std::string_view s) { h_ = fnv1a64(s, h_); }
  template <typename T>
  void update_pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    update(&v, sizeof(T));
  }
  template <typename T>
  void update_vec(const std::vector<T>& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    update_pod(static_cast<std::uint64_t>(v.size()));
    if (!v.empty()) update(v.data(), v.size() * sizeof(T));
  }
  std::uint64_t digest() const { return h_; }
  std::string hex() const;

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

inline std::string hex_u64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::string ContentHasher::hex() const { return hex_u64(h_); }

}  // namespace fsnas
