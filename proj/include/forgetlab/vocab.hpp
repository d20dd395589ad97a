#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace forgetlab {

// Token inventory for the toy language. Layout is fixed and position-based:
// specials first, then grammar categories in priority order, then filler up
// to the configured size. The seed parameter of build_vocabulary exists for
// generator-interface uniformity; the symbol table itself is deterministic.
struct Vocabulary {
  int size = 0;

  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kImg = 3;
  static constexpr int kSep = 4;

  std::vector<std::string> words;  // id -> spelling

  // grammar categories (each holds token ids; may be truncated for small N)
  std::vector<int> shapes;     // circle square triangle
  std::vector<int> colors;     // red green blue yellow
  std::vector<int> quadrants;  // nw ne sw se
  std::vector<int> glyphs;     // g0..g15
  std::vector<int> openers;    // op0..op5
  std::vector<int> closers;    // cl0..cl5
  std::vector<int> nouns_a;    // animals
  std::vector<int> nouns_b;    // vehicles
  std::vector<int> verbs_a;    // animal verbs
  std::vector<int> verbs_b;    // vehicle verbs

  std::map<std::string, int> templates;  // "describe", "what", ...

  const std::string& word(int id) const;
  int template_id(const std::string& name) const;  // throws ConfigError if absent

  // True when every grammar category is fully populated (size >= 80).
  bool full_grammar() const;
  void require_full_grammar() const;  // throws ConfigError otherwise
};

Vocabulary build_vocabulary(std::uint64_t seed, int n = 256);

}  // namespace forgetlab
