#include "forgetlab/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "forgetlab/config.hpp"
#include "forgetlab/dataset_io.hpp"
#include "forgetlab/errors.hpp"
#include "forgetlab/report.hpp"

namespace forgetlab {
namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'F', 'G', 'L', 'B'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw IoError("checkpoint truncated: " + path);
  return v;
}
std::uint64_t read_u64(std::istream& in, const std::string& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw IoError("checkpoint truncated: " + path);
  return v;
}

}  // namespace

NlBaseline make_nl_baseline(std::vector<EvalResult> results) {
  NlBaseline b;
  b.results = std::move(results);
  std::vector<double> accs;
  accs.reserve(b.results.size());
  for (const EvalResult& r : b.results) accs.push_back(r.accuracy());
  b.omega = task_score(accs);
  auto [nlu, nlg] = split_means(b.results);
  b.nlu_mean = nlu;
  b.nlg_mean = nlg;
  return b;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json tensors = json::array();
  for (const auto& [name, m] : ckpt.params.tensors)
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});

  json header = {{"model", to_json(ckpt.params.config)},
                 {"provenance", ckpt.provenance},
                 {"rng", ckpt.rng_state},
                 {"tensors", std::move(tensors)}};
  if (ckpt.baseline) {
    json results = json::array();
    for (const EvalResult& r : ckpt.baseline->results) results.push_back(eval_result_to_json(r));
    header["baseline"] = {{"results", std::move(results)}};
  }
  if (ckpt.buffer.total() > 0) {
    json buf = json::object();
    for (const auto& [task, samples] : ckpt.buffer.per_task) {
      json arr = json::array();
      for (const Sample& s : samples) arr.push_back(sample_to_json(s));
      buf[std::to_string(task)] = std::move(arr);
    }
    header["buffer"] = std::move(buf);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_u32(out, kVersion);
  const std::string hdr = header.dump();
  write_u64(out, hdr.size());
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  for (const auto& [name, m] : ckpt.params.tensors)
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[4];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  const std::uint32_t version = read_u32(in, path.string());
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " +
                  path.string());
  const std::uint64_t hdr_len = read_u64(in, path.string());
  std::string hdr(hdr_len, '\0');
  if (!in.read(hdr.data(), static_cast<std::streamsize>(hdr_len)))
    throw IoError("checkpoint truncated: " + path.string());
  json header;
  try {
    header = json::parse(hdr);
  } catch (const json::exception& e) {
    throw IoError("checkpoint header corrupt: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  try {
    ckpt.params.config = model_config_from_json(header.at("model"));
    ckpt.provenance = header.at("provenance").get<std::string>();
    ckpt.rng_state = header.at("rng").get<std::string>();
    for (const json& t : header.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      Eigen::MatrixXd m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
      if (!in.read(reinterpret_cast<char*>(m.data()),
                   static_cast<std::streamsize>(sizeof(double) *
                                                static_cast<std::size_t>(m.size()))))
        throw IoError("checkpoint tensor data truncated: " + path.string());
      ckpt.params.tensors.emplace(name, std::move(m));
    }
    if (header.contains("baseline")) {
      std::vector<EvalResult> results;
      for (const json& r : header["baseline"].at("results"))
        results.push_back(eval_result_from_json(r));
      ckpt.baseline = make_nl_baseline(std::move(results));
    }
    if (header.contains("buffer")) {
      for (const auto& item : header["buffer"].items()) {
        const int task = std::stoi(item.key());
        std::vector<Sample> samples;
        for (const json& sj : item.value()) samples.push_back(sample_from_json(sj));
        ckpt.buffer.per_task.emplace(task, std::move(samples));
      }
    }
  } catch (const json::exception& e) {
    throw IoError("checkpoint header corrupt: " + std::string(e.what()));
  }
  char extra;
  if (in.read(&extra, 1)) throw IoError("checkpoint has trailing bytes: " + path.string());
  ckpt.params.config.validate();
  return ckpt;
}

}  // namespace forgetlab
