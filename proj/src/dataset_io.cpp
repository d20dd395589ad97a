#include "forgetlab/dataset_io.hpp"

#include <fstream>
#include <vector>

#include "forgetlab/config.hpp"
#include "forgetlab/errors.hpp"
#include "forgetlab/hashing.hpp"
#include "forgetlab/rng.hpp"

namespace forgetlab {
namespace {

using nlohmann::json;

json scene_to_json(const SceneSpec& sc) {
  json objs = json::array();
  for (const SceneObject& o : sc.objects)
    objs.push_back({{"shape", o.shape}, {"color", o.color}, {"quadrant", o.quadrant}});
  return {{"objects", objs}, {"glyph", sc.glyph}};
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec sc;
  for (const json& o : j.at("objects"))
    sc.objects.push_back({o.at("shape").get<int>(), o.at("color").get<int>(),
                          o.at("quadrant").get<int>()});
  sc.glyph = j.at("glyph").get<int>();
  return sc;
}

struct FileEntry {
  const TaskDataset* dataset;
  std::string filename;
};

std::vector<FileEntry> file_plan(const DataBundle& b) {
  std::vector<FileEntry> plan;
  plan.push_back({&b.pretrain, "pretrain.jsonl"});
  for (const TaskDataset& d : b.nl_suite) plan.push_back({&d, d.name + ".jsonl"});
  for (const TaskDataset& d : b.vl_tasks) plan.push_back({&d, d.name + ".jsonl"});
  return plan;
}

void write_split(std::ofstream& out, const std::vector<Sample>& samples, const char* split) {
  for (const Sample& s : samples) {
    json rec = sample_to_json(s);
    rec["split"] = split;
    out << rec.dump() << '\n';
  }
}

void append_split(TaskDataset& d, const std::string& split, Sample&& s) {
  if (split == "train")
    d.train.push_back(std::move(s));
  else if (split == "test")
    d.test.push_back(std::move(s));
  else if (split == "alignment")
    d.alignment.push_back(std::move(s));
  else
    throw IoError("dataset record has unknown split '" + split + "'");
}

}  // namespace

json sample_to_json(const Sample& s) {
  json j = {{"prompt_ids", s.prompt_ids},
            {"target_ids", s.target_ids},
            {"source_task", s.source_task}};
  json mask = json::array();
  for (std::uint8_t m : s.loss_mask) mask.push_back(static_cast<int>(m));
  j["loss_mask"] = std::move(mask);
  if (s.patches) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < s.patches->rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < s.patches->cols(); ++c) row.push_back((*s.patches)(r, c));
      rows.push_back(std::move(row));
    }
    j["patches"] = std::move(rows);
  }
  if (s.scene) j["scene"] = scene_to_json(*s.scene);
  if (!s.candidates.empty()) {
    j["candidates"] = s.candidates;
    j["correct"] = s.correct;
  }
  return j;
}

Sample sample_from_json(const json& j) {
  Sample s;
  s.prompt_ids = j.at("prompt_ids").get<std::vector<int>>();
  s.target_ids = j.at("target_ids").get<std::vector<int>>();
  for (const json& m : j.at("loss_mask"))
    s.loss_mask.push_back(static_cast<std::uint8_t>(m.get<int>()));
  s.source_task = j.at("source_task").get<int>();
  if (j.contains("patches")) {
    const json& rows = j["patches"];
    const auto nr = static_cast<Eigen::Index>(rows.size());
    const auto nc = nr > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
    Eigen::MatrixXd m(nr, nc);
    for (Eigen::Index r = 0; r < nr; ++r) {
      const json& row = rows[static_cast<std::size_t>(r)];
      if (static_cast<Eigen::Index>(row.size()) != nc)
        throw IoError("dataset record has a ragged patch matrix");
      for (Eigen::Index c = 0; c < nc; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    s.patches = std::move(m);
  }
  if (j.contains("scene")) s.scene = scene_from_json(j["scene"]);
  if (j.contains("candidates")) {
    s.candidates = j["candidates"].get<std::vector<std::vector<int>>>();
    s.correct = j.at("correct").get<int>();
  }
  return s;
}

std::string bundle_fingerprint(const DataBundle& b) {
  Fnv64 h;
  h.update_u64(hash_dataset(b.pretrain));
  for (const TaskDataset& d : b.nl_suite) h.update_u64(hash_dataset(d));
  for (const TaskDataset& d : b.vl_tasks) h.update_u64(hash_dataset(d));
  return hex64(h.digest());
}

void write_datasets(const DataBundle& b, const DataConfig& cfg, std::uint64_t data_seed,
                    const std::filesystem::path& dir, bool force) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path) && !force)
    throw IoError("dataset directory already populated (use --force): " + dir.string());
  fs::create_directories(dir);

  json files = json::object();
  for (const FileEntry& e : file_plan(b)) {
    const fs::path path = dir / e.filename;
    {
      std::ofstream out(path);
      if (!out) throw IoError("cannot write " + path.string());
      const TaskDataset& d = *e.dataset;
      json header = {{"header", true},
                     {"task_id", d.task_id},
                     {"kind", to_string(d.kind)},
                     {"eval_mode", to_string(d.eval_mode)},
                     {"name", d.name},
                     {"tag", d.tag}};
      out << header.dump() << '\n';
      write_split(out, d.train, "train");
      write_split(out, d.test, "test");
      write_split(out, d.alignment, "alignment");
      if (!out) throw IoError("write failed: " + path.string());
    }
    files[e.filename] = hex64(hash_file(path.string()));
  }

  json manifest = {{"kind", "forgetlab-data"},
                   {"version", 1},
                   {"data_seed", data_seed},
                   {"config", to_json(cfg)},
                   {"fingerprint", bundle_fingerprint(b)},
                   {"files", files}};
  std::ofstream out(manifest_path);
  if (!out) throw IoError("cannot write " + manifest_path.string());
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + manifest_path.string());
}

LoadedData read_datasets(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream min(manifest_path);
  if (!min) throw IoError("cannot open dataset manifest: " + manifest_path.string());
  json manifest;
  try {
    min >> manifest;
  } catch (const json::exception& e) {
    throw IoError("dataset manifest is corrupt: " + std::string(e.what()));
  }
  if (manifest.value("kind", "") != "forgetlab-data")
    throw IoError("not a dataset directory: " + dir.string());

  LoadedData loaded;
  try {
    loaded.config = data_config_from_json(manifest.at("config"));
    loaded.data_seed = manifest.at("data_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw IoError("dataset manifest is corrupt: " + std::string(e.what()));
  }

  DataBundle& b = loaded.bundle;
  b.vocab = build_vocabulary(derive_seed(loaded.data_seed, "vocab"), loaded.config.vocab_size);

  const std::vector<std::string> nl_names = {"cloze", "closer_match", "verb_agreement",
                                             "syntax_gate", "attribute_echo"};
  const std::vector<std::string> vl_names = {"caption", "vqa", "ocr", "ref"};

  auto read_file = [&](const std::string& filename) -> TaskDataset {
    const fs::path path = dir / filename;
    const json& files = manifest.at("files");
    if (!files.contains(filename)) throw IoError("dataset manifest lists no " + filename);
    const std::string want = files[filename].get<std::string>();
    const std::string got = hex64(hash_file(path.string()));
    if (want != got)
      throw IoError("dataset file hash mismatch (regenerate with gen-data): " + path.string());

    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    TaskDataset d;
    std::string line;
    long lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::exception& e) {
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
      try {
        if (!have_header) {
          if (!rec.value("header", false))
            throw IoError(path.string() + ": first line must be the dataset header");
          d.task_id = rec.at("task_id").get<int>();
          d.kind = task_kind_from_string(rec.at("kind").get<std::string>());
          d.eval_mode = eval_mode_from_string(rec.at("eval_mode").get<std::string>());
          d.name = rec.at("name").get<std::string>();
          d.tag = rec.at("tag").get<std::string>();
          have_header = true;
          continue;
        }
        Sample s = sample_from_json(rec);
        s.source_task = rec.at("source_task").get<int>();
        append_split(d, rec.at("split").get<std::string>(), std::move(s));
      } catch (const json::exception& e) {
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    if (!have_header) throw IoError(path.string() + ": empty dataset file");
    return d;
  };

  b.pretrain = read_file("pretrain.jsonl");
  for (const std::string& n : nl_names) b.nl_suite.push_back(read_file(n + ".jsonl"));
  for (const std::string& n : vl_names) b.vl_tasks.push_back(read_file(n + ".jsonl"));

  loaded.fingerprint = bundle_fingerprint(b);
  const std::string recorded = manifest.at("fingerprint").get<std::string>();
  if (loaded.fingerprint != recorded)
    throw IoError("dataset fingerprint mismatch (files edited?): " + dir.string());
  return loaded;
}

}  // namespace forgetlab
