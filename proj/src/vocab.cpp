#include "forgetlab/vocab.hpp"

#include <fmt/format.h>

#include "forgetlab/errors.hpp"

namespace forgetlab {

namespace {

const char* kShapes[] = {"circle", "square", "triangle"};
const char* kColors[] = {"red", "green", "blue", "yellow"};
const char* kQuadrants[] = {"nw", "ne", "sw", "se"};
const char* kTemplates[] = {"describe", "what", "color", "shape", "where", "read",
                            "glyph",    "is",   "the",   "a",     "scene", "shows",
                            "at",       "in",   "empty", "and"};
const char* kNounsA[] = {"cat", "dog", "fox", "owl", "bee", "ant"};
const char* kNounsB[] = {"car", "bus", "van", "jet", "ship", "train"};
const char* kVerbsA[] = {"runs", "sleeps", "hunts", "eats"};
const char* kVerbsB[] = {"rolls", "parks", "turns", "stops"};

}  // namespace

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size) throw ConfigError(fmt::format("token id {} out of range", id));
  return words[static_cast<std::size_t>(id)];
}

int Vocabulary::template_id(const std::string& name) const {
  auto it = templates.find(name);
  if (it == templates.end()) throw ConfigError("vocabulary missing template word: " + name);
  return it->second;
}

bool Vocabulary::full_grammar() const {
  return shapes.size() == 3 && colors.size() == 4 && quadrants.size() == 4 &&
         glyphs.size() == 16 && templates.size() == 16 && openers.size() == 6 &&
         closers.size() == 6 && nouns_a.size() == 6 && nouns_b.size() == 6 &&
         verbs_a.size() == 4 && verbs_b.size() == 4;
}

void Vocabulary::require_full_grammar() const {
  if (!full_grammar()) {
    throw ConfigError(
        fmt::format("vocabulary of size {} lacks the full grammar inventory (need >= 80)", size));
  }
}

Vocabulary build_vocabulary(std::uint64_t /*seed*/, int n) {
  if (n < 16) throw ConfigError("vocabulary too small");

  Vocabulary v;
  v.size = n;
  v.words.assign(static_cast<std::size_t>(n), {});
  v.words[0] = "<pad>";
  v.words[1] = "<bos>";
  v.words[2] = "<eos>";
  v.words[3] = "<img>";
  v.words[4] = "<sep>";

  int next = 5;
  auto fill = [&](std::vector<int>& out, const char* const* names, int count) {
    for (int i = 0; i < count && next < n; ++i) {
      v.words[static_cast<std::size_t>(next)] = names[i];
      out.push_back(next++);
    }
  };

  fill(v.shapes, kShapes, 3);
  fill(v.colors, kColors, 4);
  fill(v.quadrants, kQuadrants, 4);
  for (int i = 0; i < 16 && next < n; ++i) {
    v.words[static_cast<std::size_t>(next)] = fmt::format("g{}", i);
    v.glyphs.push_back(next++);
  }
  for (const char* name : kTemplates) {
    if (next >= n) break;
    v.words[static_cast<std::size_t>(next)] = name;
    v.templates.emplace(name, next++);
  }
  for (int i = 0; i < 6 && next < n; ++i) {
    v.words[static_cast<std::size_t>(next)] = fmt::format("op{}", i);
    v.openers.push_back(next++);
  }
  for (int i = 0; i < 6 && next < n; ++i) {
    v.words[static_cast<std::size_t>(next)] = fmt::format("cl{}", i);
    v.closers.push_back(next++);
  }
  fill(v.nouns_a, kNounsA, 6);
  fill(v.nouns_b, kNounsB, 6);
  fill(v.verbs_a, kVerbsA, 4);
  fill(v.verbs_b, kVerbsB, 4);
  for (; next < n; ++next) {
    v.words[static_cast<std::size_t>(next)] = fmt::format("w{}", next);
  }
  return v;
}

}  // namespace forgetlab
