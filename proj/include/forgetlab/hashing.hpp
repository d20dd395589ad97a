#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace forgetlab {

// Incremental FNV-1a (64-bit). Used for data fingerprints, config hashes
// and freeze audits; not cryptographic, just stable and order-sensitive.
struct Fnv64 {
  std::uint64_t state = 14695981039346656037ULL;

  void update_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state ^= p[i];
      state *= 1099511628211ULL;
    }
  }
  void update_u64(std::uint64_t v) { update_bytes(&v, sizeof v); }
  void update_i64(std::int64_t v) { update_bytes(&v, sizeof v); }
  void update_i32(std::int32_t v) { update_bytes(&v, sizeof v); }
  void update_double(double v) { update_bytes(&v, sizeof v); }
  void update_string(std::string_view s) {
    update_u64(s.size());
    update_bytes(s.data(), s.size());
  }
  std::uint64_t digest() const { return state; }
};

std::string hex64(std::uint64_t v);

// Whole-file fingerprint (bytes as on disk). Throws IoError if unreadable.
std::uint64_t hash_file(const std::string& path);

}  // namespace forgetlab
