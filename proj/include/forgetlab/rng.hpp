#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace forgetlab {

// Deterministic RNG used throughout. Wraps std::mt19937_64 for the raw
// stream but implements the value-level draws (uniform / normal / index /
// shuffle) itself, so results are reproducible across standard libraries
// and the full state can be serialized into checkpoints.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t u64() { return gen_(); }

  // Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  double normal(double mean = 0.0, double stddev = 1.0);

  // Uniform integer in [0, n). Rejection sampling, so exactly unbiased.
  int index(int n);

  // Fisher-Yates, consumes exactly size()-1 index() draws.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = index(i + 1);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

  std::string save_state() const;
  void restore_state(const std::string& text);

  friend bool operator==(const Rng& a, const Rng& b) { return a.gen_ == b.gen_; }

 private:
  std::mt19937_64 gen_;
};

// Stable seed derivation for named sub-streams (e.g. per-task shuffles),
// so adding a consumer never perturbs existing streams.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream, std::uint64_t index = 0);

}  // namespace forgetlab
