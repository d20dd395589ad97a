#include "forgetlab/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "forgetlab/errors.hpp"
#include "forgetlab/rng.hpp"

namespace forgetlab {

namespace {

constexpr double kColorAdjProb = 0.4;   // marker sentences carrying a color adjective
constexpr double kMarkerProb = 0.7;     // marker vs echo template
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Template 1 ("marker"): opener [color] noun verb closer, where the closer
// index always equals the opener index and the verb class matches the noun
// class. These two rules are what the NL probes test.
struct MarkerSentence {
  int opener = 0;
  bool has_color = false;
  int color = 0;
  int cls = 0;  // 0 = nouns_a/verbs_a, 1 = nouns_b/verbs_b
  int noun = 0;
  int verb = 0;
};

MarkerSentence sample_marker(Rng& rng) {
  MarkerSentence m;
  m.opener = rng.index(6);
  m.has_color = rng.uniform() < kColorAdjProb;
  if (m.has_color) m.color = rng.index(4);
  m.cls = rng.index(2);
  m.noun = rng.index(6);
  m.verb = rng.index(4);
  return m;
}

std::vector<int> marker_tokens(const Vocabulary& v, const MarkerSentence& m, bool with_closer) {
  std::vector<int> t;
  t.push_back(v.openers[m.opener]);
  if (m.has_color) t.push_back(v.colors[m.color]);
  t.push_back(m.cls == 0 ? v.nouns_a[m.noun] : v.nouns_b[m.noun]);
  t.push_back(m.cls == 0 ? v.verbs_a[m.verb] : v.verbs_b[m.verb]);
  if (with_closer) t.push_back(v.closers[m.opener]);
  return t;
}

// Template 2 ("echo"): a color shape at quadrant SEP color. The color is
// always echoed after the separator.
struct EchoSentence {
  int color = 0;
  int shape = 0;
  int quadrant = 0;
};

EchoSentence sample_echo(Rng& rng) {
  return EchoSentence{rng.index(4), rng.index(3), rng.index(4)};
}

std::vector<int> echo_tokens(const Vocabulary& v, const EchoSentence& e, int upto) {
  // upto: 4 = "a C S at", 6 = through SEP, 7 = full sentence with echo
  std::vector<int> t{v.template_id("a"), v.colors[e.color], v.shapes[e.shape],
                     v.template_id("at")};
  if (upto >= 6) {
    t.push_back(v.quadrants[e.quadrant]);
    t.push_back(Vocabulary::kSep);
  }
  if (upto >= 7) t.push_back(v.colors[e.color]);
  return t;
}

// count distinct category indices != correct, appended after the correct one
std::vector<int> pick_others(Rng& rng, int correct, int category_size, int count) {
  std::vector<int> pool;
  for (int i = 0; i < category_size; ++i) {
    if (i != correct) pool.push_back(i);
  }
  rng.shuffle(pool);
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

// Builds a shuffled single-token candidate list and records the correct index.
void set_candidates(Rng& rng, Sample& s, std::vector<int> token_ids, int correct_pos) {
  std::vector<int> order(token_ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  s.candidates.clear();
  for (std::size_t i = 0; i < order.size(); ++i) {
    s.candidates.push_back({token_ids[static_cast<std::size_t>(order[i])]});
    if (order[i] == correct_pos) s.correct = static_cast<int>(i);
  }
}

SceneSpec sample_scene(Rng& rng, const Vocabulary& v, TaskKind kind) {
  SceneSpec scene;
  int n_obj = 1;
  if (kind == TaskKind::vqa || kind == TaskKind::refgrounding) n_obj = 1 + rng.index(3);
  // distinct shapes and distinct quadrants keep every question unambiguous
  std::vector<int> shape_pool{0, 1, 2};
  std::vector<int> quad_pool{0, 1, 2, 3};
  rng.shuffle(shape_pool);
  rng.shuffle(quad_pool);
  for (int i = 0; i < n_obj; ++i) {
    scene.objects.push_back(SceneObject{shape_pool[static_cast<std::size_t>(i)], rng.index(4),
                                        quad_pool[static_cast<std::size_t>(i)]});
  }
  // glyphs appear exactly in ocr scenes; the textual prompt already names the
  // task, so sprinkling them elsewhere would only add clutter
  if (kind == TaskKind::ocr) scene.glyph = v.glyphs[static_cast<std::size_t>(rng.index(16))];
  return scene;
}

Sample make_vl_sample(Rng& rng, const Vocabulary& v, TaskKind kind, int task_id,
                      const RenderConfig& rcfg, std::uint64_t render_seed) {
  Sample s;
  SceneSpec scene = sample_scene(rng, v, kind);
  s.scene = scene;
  s.patches = render_scene(scene, render_seed, rcfg);
  s.source_task = task_id;

  const auto& objs = scene.objects;
  const SceneObject& first = objs.front();
  switch (kind) {
    case TaskKind::caption_instruct:
      s.prompt_ids = {Vocabulary::kImg, v.template_id("describe"), v.template_id("the"),
                      v.template_id("scene"), Vocabulary::kSep};
      s.target_ids = {v.template_id("a"), v.colors[first.color], v.shapes[first.shape],
                      v.template_id("at"), v.quadrants[first.quadrant]};
      break;
    case TaskKind::vqa: {
      const SceneObject& o = objs[static_cast<std::size_t>(rng.index(static_cast<int>(objs.size())))];
      if (rng.index(2) == 0) {
        s.prompt_ids = {Vocabulary::kImg,       v.template_id("what"), v.template_id("color"),
                        v.template_id("is"),    v.template_id("the"),  v.shapes[o.shape],
                        Vocabulary::kSep};
        s.target_ids = {v.colors[o.color]};
      } else {
        s.prompt_ids = {Vocabulary::kImg,      v.template_id("what"), v.template_id("shape"),
                        v.template_id("at"),   v.quadrants[o.quadrant], Vocabulary::kSep};
        s.target_ids = {v.shapes[o.shape]};
      }
      break;
    }
    case TaskKind::ocr:
      s.prompt_ids = {Vocabulary::kImg, v.template_id("read"), v.template_id("the"),
                      v.template_id("glyph"), Vocabulary::kSep};
      s.target_ids = {scene.glyph};
      break;
    case TaskKind::refgrounding: {
      const SceneObject& o = objs[static_cast<std::size_t>(rng.index(static_cast<int>(objs.size())))];
      s.prompt_ids = {Vocabulary::kImg,     v.template_id("where"), v.template_id("is"),
                      v.template_id("the"), v.shapes[o.shape],      Vocabulary::kSep};
      s.target_ids = {v.quadrants[o.quadrant]};
      break;
    }
    default:
      throw ConfigError("make_vl_sample: unsupported kind " + to_string(kind));
  }
  s.loss_mask.assign(s.target_ids.size(), 1);
  return s;
}

std::vector<Sample> make_vl_split(const Vocabulary& v, TaskKind kind, int task_id,
                                  const RenderConfig& rcfg, std::uint64_t split_seed, int size) {
  Rng rng(derive_seed(split_seed, "scene"));
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) {
    std::uint64_t render_seed = derive_seed(split_seed, "render", static_cast<std::uint64_t>(i));
    out.push_back(make_vl_sample(rng, v, kind, task_id, rcfg, render_seed));
  }
  return out;
}

}  // namespace

void DataConfig::validate() const {
  if (vocab_size < 16) throw ConfigError("vocabulary too small");
  if (pretrain_size < 1 || nl_eval_size < 1 || vl_train_size < 1 || vl_test_size < 1 ||
      alignment_size < 1) {
    throw ConfigError("dataset sizes must be positive");
  }
  if (patches < 4 || patches % 4 != 0) throw ConfigError("patch count must be a positive multiple of 4");
  if (features < 8) throw ConfigError("need at least 8 patch features");
  if (noise_sigma < 0.0) throw ConfigError("noise sigma must be non-negative");
  if (context_budget < patches + 16) throw ConfigError("context budget too small for image prompts");
}

Eigen::MatrixXd render_scene(const SceneSpec& scene, std::uint64_t seed, const RenderConfig& cfg) {
  if (cfg.patches < 4 || cfg.patches % 4 != 0) {
    throw ConfigError("patch count must be a positive multiple of 4");
  }
  if (cfg.features < 8) throw ConfigError("need at least 8 patch features");
  if (!scene.valid()) throw ConfigError("invalid scene");

  const int per_quadrant = cfg.patches / 4;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(cfg.patches, cfg.features);

  for (const auto& obj : scene.objects) {
    for (int p = obj.quadrant * per_quadrant; p < (obj.quadrant + 1) * per_quadrant; ++p) {
      m(p, 0) = 1.0;
      m(p, 1) = std::cos(kTwoPi * obj.shape / 3.0);
      m(p, 2) = std::sin(kTwoPi * obj.shape / 3.0);
      m(p, 3) = std::cos(kTwoPi * obj.color / 4.0);
      m(p, 4) = std::sin(kTwoPi * obj.color / 4.0);
    }
  }
  if (scene.glyph >= 0) {
    const int g = scene.glyph % 16;
    for (int p = 0; p < cfg.patches; ++p) {
      m(p, 5) = std::cos(kTwoPi * g / 16.0);
      m(p, 6) = std::sin(kTwoPi * g / 16.0);
    }
    // Unoccupied quadrants repeat the glyph as two quaternary digits in the
    // otherwise idle object channels; the 90-degree phase separation gives a
    // much easier readout than the fine 16-point circle alone.
    std::array<bool, 4> occupied{};
    for (const auto& obj : scene.objects) occupied[static_cast<std::size_t>(obj.quadrant)] = true;
    const int hi = g / 4;
    const int lo = g % 4;
    for (int q = 0; q < 4; ++q) {
      if (occupied[static_cast<std::size_t>(q)]) continue;
      for (int p = q * per_quadrant; p < (q + 1) * per_quadrant; ++p) {
        m(p, 1) = std::cos(kTwoPi * hi / 4.0);
        m(p, 2) = std::sin(kTwoPi * hi / 4.0);
        m(p, 3) = std::cos(kTwoPi * lo / 4.0);
        m(p, 4) = std::sin(kTwoPi * lo / 4.0);
      }
    }
  }
  for (int p = 0; p < cfg.patches; ++p) {
    m(p, 7) = static_cast<double>(p / per_quadrant + 1) / 4.0;
  }

  if (cfg.noise_sigma > 0.0) {
    Rng rng(seed);
    for (int p = 0; p < cfg.patches; ++p) {
      for (int f = 0; f < cfg.features; ++f) {
        m(p, f) += cfg.noise_sigma * (2.0 * rng.uniform() - 1.0);
      }
    }
  }
  return m;
}

TaskDataset generate_pretrain_corpus(const Vocabulary& vocab, std::uint64_t seed, int size) {
  if (size < 1) throw ConfigError("pretrain corpus size must be positive");
  vocab.require_full_grammar();

  TaskDataset d;
  d.task_id = 1;
  d.kind = TaskKind::pretrain;
  d.eval_mode = EvalMode::generative_exact_match;
  d.name = "pretrain";
  d.tag = "train";

  Rng rng(derive_seed(seed, "docs"));
  d.train.reserve(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) {
    Sample s;
    int sentences = 1 + rng.index(4);
    for (int k = 0; k < sentences; ++k) {
      if (k > 0) s.target_ids.push_back(Vocabulary::kSep);
      std::vector<int> sent = rng.uniform() < kMarkerProb
                                  ? marker_tokens(vocab, sample_marker(rng), true)
                                  : echo_tokens(vocab, sample_echo(rng), 7);
      s.target_ids.insert(s.target_ids.end(), sent.begin(), sent.end());
    }
    s.loss_mask.assign(s.target_ids.size(), 1);
    s.source_task = 1;
    d.train.push_back(std::move(s));
  }
  return d;
}

std::vector<TaskDataset> generate_nl_eval_suite(const Vocabulary& vocab, std::uint64_t seed,
                                                int size_each) {
  if (size_each < 1) throw ConfigError("nl eval size must be positive");
  vocab.require_full_grammar();

  auto base = [&](const char* name, const char* tag, EvalMode mode) {
    TaskDataset d;
    d.task_id = 1;
    d.kind = TaskKind::nl_eval;
    d.eval_mode = mode;
    d.name = name;
    d.tag = tag;
    return d;
  };

  TaskDataset cloze = base("cloze", "nlg", EvalMode::generative_exact_match);
  TaskDataset closer_match = base("closer_match", "nlu", EvalMode::multiple_choice);
  TaskDataset verb_agreement = base("verb_agreement", "nlu", EvalMode::multiple_choice);
  TaskDataset syntax_gate = base("syntax_gate", "nlu", EvalMode::multiple_choice);
  TaskDataset attribute_echo = base("attribute_echo", "nlu", EvalMode::multiple_choice);

  {
    Rng rng(derive_seed(seed, "cloze"));
    for (int i = 0; i < size_each; ++i) {
      MarkerSentence m = sample_marker(rng);
      Sample s;
      s.prompt_ids = marker_tokens(vocab, m, false);
      s.target_ids = {vocab.closers[m.opener]};
      s.loss_mask = {1};
      s.source_task = 1;
      cloze.test.push_back(std::move(s));
    }
  }
  {
    Rng rng(derive_seed(seed, "closer_match"));
    for (int i = 0; i < size_each; ++i) {
      MarkerSentence m = sample_marker(rng);
      Sample s;
      s.prompt_ids = marker_tokens(vocab, m, false);
      s.source_task = 1;
      std::vector<int> cand_tokens{vocab.closers[m.opener]};
      for (int idx : pick_others(rng, m.opener, 6, 3)) cand_tokens.push_back(vocab.closers[idx]);
      set_candidates(rng, s, cand_tokens, 0);
      closer_match.test.push_back(std::move(s));
    }
  }
  {
    Rng rng(derive_seed(seed, "verb_agreement"));
    for (int i = 0; i < size_each; ++i) {
      MarkerSentence m = sample_marker(rng);
      Sample s;
      std::vector<int> prompt = marker_tokens(vocab, m, false);
      prompt.pop_back();  // drop the verb, keep opener [color] noun
      s.prompt_ids = std::move(prompt);
      s.source_task = 1;
      const auto& own = m.cls == 0 ? vocab.verbs_a : vocab.verbs_b;
      const auto& other = m.cls == 0 ? vocab.verbs_b : vocab.verbs_a;
      std::vector<int> cand_tokens{own[m.verb]};
      for (int idx : pick_others(rng, -1, 4, 3)) cand_tokens.push_back(other[idx]);
      set_candidates(rng, s, cand_tokens, 0);
      verb_agreement.test.push_back(std::move(s));
    }
  }
  {
    Rng rng(derive_seed(seed, "syntax_gate"));
    for (int i = 0; i < size_each; ++i) {
      EchoSentence e = sample_echo(rng);
      Sample s;
      s.prompt_ids = echo_tokens(vocab, e, 4);
      s.source_task = 1;
      int closer = vocab.closers[rng.index(6)];
      int verb = rng.index(2) == 0 ? vocab.verbs_a[rng.index(4)] : vocab.verbs_b[rng.index(4)];
      set_candidates(rng, s, {vocab.quadrants[e.quadrant], closer, verb}, 0);
      syntax_gate.test.push_back(std::move(s));
    }
  }
  {
    Rng rng(derive_seed(seed, "attribute_echo"));
    for (int i = 0; i < size_each; ++i) {
      EchoSentence e = sample_echo(rng);
      Sample s;
      s.prompt_ids = echo_tokens(vocab, e, 6);
      s.source_task = 1;
      std::vector<int> cand_tokens{vocab.colors[e.color]};
      for (int idx : pick_others(rng, e.color, 4, 2)) cand_tokens.push_back(vocab.colors[idx]);
      set_candidates(rng, s, cand_tokens, 0);
      attribute_echo.test.push_back(std::move(s));
    }
  }

  std::vector<TaskDataset> out;
  out.push_back(std::move(cloze));
  out.push_back(std::move(closer_match));
  out.push_back(std::move(verb_agreement));
  out.push_back(std::move(syntax_gate));
  out.push_back(std::move(attribute_echo));
  return out;
}

TaskDataset generate_vl_task(TaskKind kind, const Vocabulary& vocab, std::uint64_t seed,
                             const DataConfig& cfg) {
  vocab.require_full_grammar();
  cfg.validate();

  TaskDataset d;
  d.kind = kind;
  d.eval_mode = EvalMode::generative_exact_match;
  d.tag = "vl";
  switch (kind) {
    case TaskKind::caption_instruct: d.task_id = 2; d.name = "caption"; break;
    case TaskKind::vqa: d.task_id = 3; d.name = "vqa"; break;
    case TaskKind::ocr: d.task_id = 4; d.name = "ocr"; break;
    case TaskKind::refgrounding: d.task_id = 5; d.name = "ref"; break;
    default: throw ConfigError("generate_vl_task: unknown kind " + to_string(kind));
  }

  RenderConfig rcfg{cfg.patches, cfg.features, cfg.noise_sigma};
  d.train = make_vl_split(vocab, kind, d.task_id, rcfg, derive_seed(seed, "train"), cfg.vl_train_size);
  d.test = make_vl_split(vocab, kind, d.task_id, rcfg, derive_seed(seed, "test"), cfg.vl_test_size);
  if (kind == TaskKind::caption_instruct) {
    d.alignment =
        make_vl_split(vocab, kind, d.task_id, rcfg, derive_seed(seed, "align"), cfg.alignment_size);
  }
  return d;
}

DataBundle generate_all(const DataConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DataBundle b;
  b.vocab = build_vocabulary(derive_seed(seed, "vocab"), cfg.vocab_size);
  b.vocab.require_full_grammar();
  b.pretrain = generate_pretrain_corpus(b.vocab, derive_seed(seed, "pretrain"), cfg.pretrain_size);
  b.nl_suite = generate_nl_eval_suite(b.vocab, derive_seed(seed, "nl"), cfg.nl_eval_size);
  for (TaskKind kind : {TaskKind::caption_instruct, TaskKind::vqa, TaskKind::ocr,
                        TaskKind::refgrounding}) {
    b.vl_tasks.push_back(
        generate_vl_task(kind, b.vocab, derive_seed(seed, "vl", static_cast<std::uint64_t>(kind)),
                         cfg));
  }
  return b;
}

std::vector<int> oracle_answer(const Vocabulary& vocab, const Sample& s, TaskKind kind) {
  if (!s.scene) throw ConfigError("oracle_answer: sample has no scene");
  const SceneSpec& scene = *s.scene;
  auto shape_index = [&](int token) {
    for (std::size_t i = 0; i < vocab.shapes.size(); ++i) {
      if (vocab.shapes[i] == token) return static_cast<int>(i);
    }
    throw ConfigError("oracle_answer: not a shape token");
  };
  auto quadrant_index = [&](int token) {
    for (std::size_t i = 0; i < vocab.quadrants.size(); ++i) {
      if (vocab.quadrants[i] == token) return static_cast<int>(i);
    }
    throw ConfigError("oracle_answer: not a quadrant token");
  };

  switch (kind) {
    case TaskKind::caption_instruct: {
      const SceneObject& o = scene.objects.front();
      return {vocab.template_id("a"), vocab.colors[o.color], vocab.shapes[o.shape],
              vocab.template_id("at"), vocab.quadrants[o.quadrant]};
    }
    case TaskKind::vqa: {
      if (s.prompt_ids.at(2) == vocab.template_id("color")) {
        int want = shape_index(s.prompt_ids.at(5));
        for (const auto& o : scene.objects) {
          if (o.shape == want) return {vocab.colors[o.color]};
        }
      } else {
        int want = quadrant_index(s.prompt_ids.at(4));
        for (const auto& o : scene.objects) {
          if (o.quadrant == want) return {vocab.shapes[o.shape]};
        }
      }
      throw ConfigError("oracle_answer: question not answerable from scene");
    }
    case TaskKind::ocr:
      if (scene.glyph < 0) throw ConfigError("oracle_answer: scene has no glyph");
      return {scene.glyph};
    case TaskKind::refgrounding: {
      int want = shape_index(s.prompt_ids.at(4));
      for (const auto& o : scene.objects) {
        if (o.shape == want) return {vocab.quadrants[o.quadrant]};
      }
      throw ConfigError("oracle_answer: shape not in scene");
    }
    default:
      throw ConfigError("oracle_answer: unsupported kind");
  }
}

}  // namespace forgetlab
