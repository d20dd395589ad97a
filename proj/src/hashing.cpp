#include "forgetlab/hashing.hpp"

#include <fstream>

#include <fmt/format.h>

#include "forgetlab/errors.hpp"

namespace forgetlab {

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("hash_file: cannot open " + path);
  Fnv64 h;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    h.update_bytes(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.digest();
}

}  // namespace forgetlab
