#include "forgetlab/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "forgetlab/errors.hpp"
#include "forgetlab/hashing.hpp"

namespace forgetlab {

double Rng::normal(double mean, double stddev) {
  // Box-Muller (cosine branch only, no cached second value: keeps the
  // state exactly the mt19937_64 state).
  double u1 = static_cast<double>((u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
  double u2 = static_cast<double>(u64() >> 11) * 0x1.0p-53;        // [0, 1)
  double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

int Rng::index(int n) {
  if (n <= 0) throw ConfigError("Rng::index: n must be positive");
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = max - max % un;
  std::uint64_t x;
  do {
    x = u64();
  } while (x >= limit);
  return static_cast<int>(x % un);
}

std::string Rng::save_state() const {
  std::ostringstream os;
  os << gen_;
  return os.str();
}

void Rng::restore_state(const std::string& text) {
  std::istringstream is(text);
  is >> gen_;
  if (is.fail()) throw IoError("Rng::restore_state: malformed state string");
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view stream, std::uint64_t index) {
  Fnv64 h;
  h.update_u64(base);
  h.update_bytes(stream.data(), stream.size());
  h.update_u64(index);
  // splitmix64 finalizer decorrelates nearby fnv digests
  std::uint64_t z = h.digest() + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace forgetlab
