#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forgetlab/checkpoint.hpp"
#include "forgetlab/config.hpp"
#include "forgetlab/dataset_io.hpp"
#include "forgetlab/errors.hpp"
#include "forgetlab/evaluation.hpp"
#include "forgetlab/model.hpp"
#include "forgetlab/plot.hpp"
#include "forgetlab/report.hpp"
#include "forgetlab/synthdata.hpp"

using namespace forgetlab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& leaf) {
  fs::path p = fs::temp_directory_path() / "forgetlab_unit" / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

DataConfig tiny_data_config() {
  DataConfig cfg;
  cfg.vocab_size = 96;
  cfg.pretrain_size = 40;
  cfg.nl_eval_size = 8;
  cfg.vl_train_size = 16;
  cfg.vl_test_size = 8;
  cfg.alignment_size = 8;
  cfg.patches = 4;
  cfg.context_budget = 48;
  return cfg;
}

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.d_model = 12;
  cfg.heads = 2;
  cfg.ffn = 16;
  cfg.context = 48;
  cfg.vocab = 96;
  cfg.patches = 4;
  cfg.patch_features = 8;
  cfg.vision_dim = 8;
  return cfg;
}

RunConfig tiny_run_config() {
  RunConfig cfg;
  cfg.model = tiny_model_config();
  cfg.data = tiny_data_config();
  cfg.pretrain.step_cap = 10;
  cfg.pretrain.eval_every = 5;
  cfg.alignment.peak_lr = 1e-3;
  cfg.finetune.peak_lr = 1e-3;
  return cfg;
}

EvalResult make_result(const std::string& name, const std::string& tag, EvalMode mode,
                       long correct, long n) {
  EvalResult r;
  r.dataset = name;
  r.tag = tag;
  r.mode = mode;
  r.correct = correct;
  r.n = n;
  return r;
}

}  // namespace

TEST_CASE("task score is the harmonic mean with a zero rule") {
  CHECK(task_score({0.5}) == 0.5);
  CHECK(task_score({0.5, 0.25}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(task_score({0.6, 0.3, 0.2}) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(task_score({0.9, 0.0, 0.9}) == 0.0);
  CHECK(task_score({1.0, 1.0}) == 1.0);
  CHECK_THROWS_AS((void)task_score({}), ConfigError);
  CHECK_THROWS_AS((void)task_score({1.5}), ConfigError);
  CHECK_THROWS_AS((void)task_score({-0.1}), ConfigError);
}

TEST_CASE("forgetting delta reproduces the published arithmetic") {
  CHECK(forgetting_delta(32.61, 24.78) == doctest::Approx(7.83).epsilon(1e-9));
  CHECK(forgetting_delta(32.61, 30.92) == doctest::Approx(1.69).epsilon(1e-9));
  CHECK(forgetting_delta(32.61, 29.78) == doctest::Approx(2.83).epsilon(1e-9));
  CHECK(forgetting_delta(0.5, 0.7) == doctest::Approx(-0.2));  // backward transfer
}

TEST_CASE("split means separate the nlu and nlg tags") {
  std::vector<EvalResult> rs;
  rs.push_back(make_result("cloze", "nlg", EvalMode::generative_exact_match, 30, 100));
  rs.push_back(make_result("a", "nlu", EvalMode::multiple_choice, 80, 100));
  rs.push_back(make_result("b", "nlu", EvalMode::multiple_choice, 60, 100));
  auto [nlu, nlg] = split_means(rs);
  CHECK(nlu == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(nlg == doctest::Approx(0.3).epsilon(1e-15));

  SplitReport rep = split_report(rs, 0.9, 0.5);
  CHECK(rep.nlu_delta == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(rep.nlg_delta == doctest::Approx(0.2).epsilon(1e-12));

  std::vector<EvalResult> only_nlu{make_result("a", "nlu", EvalMode::multiple_choice, 1, 2)};
  CHECK_THROWS_AS((void)split_means(only_nlu), ConfigError);
}

TEST_CASE("run config json round trip preserves the hash") {
  RunConfig cfg = tiny_run_config();
  cfg.method.variant = MethodVariant::msgm_rehearsal;
  cfg.method.soft.alpha = 0.02;
  cfg.mode = RunMode::two_task;
  cfg.seeds.train = 17;

  json j = to_json(cfg);
  RunConfig back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(back.method.variant == MethodVariant::msgm_rehearsal);
  CHECK(back.method.soft.alpha == 0.02);
  CHECK(back.mode == RunMode::two_task);
  CHECK(back.seeds.train == 17);

  RunConfig other = cfg;
  other.finetune.peak_lr *= 2.0;
  CHECK(config_hash(other) != config_hash(cfg));
}

TEST_CASE("config parsing is strict about keys") {
  json j = to_json(tiny_run_config());
  j["model"]["unknown_knob"] = 1;
  CHECK_THROWS_AS((void)run_config_from_json(j), ConfigError);

  json j2 = to_json(tiny_run_config());
  j2["data"].erase("vl_train_size");
  CHECK_THROWS_AS((void)run_config_from_json(j2), ConfigError);

  json j3 = to_json(tiny_run_config());
  j3["mode"] = "three_task";
  CHECK_THROWS_AS((void)run_config_from_json(j3), ConfigError);
}

TEST_CASE("config validation cross-checks data against the model") {
  RunConfig cfg = tiny_run_config();
  cfg.data.vocab_size = 128;  // model still says 96
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  RunConfig cfg2 = tiny_run_config();
  cfg2.data.patches = 8;
  CHECK_THROWS_AS(cfg2.validate(), ConfigError);

  RunConfig cfg3 = tiny_run_config();
  cfg3.pretrain.eval_every = 0;
  CHECK_THROWS_AS(cfg3.validate(), ConfigError);
}

TEST_CASE("seed overrides parse name=value and reject junk") {
  RunConfig cfg = tiny_run_config();
  apply_seed_override(cfg, "train=99");
  CHECK(cfg.seeds.train == 99);
  apply_seed_override(cfg, "data=5");
  CHECK(cfg.seeds.data == 5);
  CHECK_THROWS_AS(apply_seed_override(cfg, "bogus=1"), ConfigError);
  CHECK_THROWS_AS(apply_seed_override(cfg, "train="), ConfigError);
  CHECK_THROWS_AS(apply_seed_override(cfg, "train=12x"), ConfigError);
  CHECK_THROWS_AS(apply_seed_override(cfg, "train"), ConfigError);
}

TEST_CASE("pretrain provenance ignores the training seed but not the data seed") {
  RunConfig cfg = tiny_run_config();
  std::string base = pretrain_provenance(cfg);

  RunConfig trained = cfg;
  trained.seeds.train = 1234;
  trained.method.variant = MethodVariant::msgm;  // method does not touch pretraining
  trained.mode = RunMode::two_task;
  CHECK(pretrain_provenance(trained) == base);

  RunConfig data_changed = cfg;
  data_changed.seeds.data = 77;
  CHECK(pretrain_provenance(data_changed) != base);

  RunConfig init_changed = cfg;
  init_changed.seeds.init = 78;
  CHECK(pretrain_provenance(init_changed) != base);

  RunConfig cap_changed = cfg;
  cap_changed.pretrain.step_cap += 1;
  CHECK(pretrain_provenance(cap_changed) != base);
}

TEST_CASE("config file round trip via disk") {
  fs::path dir = fresh_dir("config_io");
  RunConfig cfg = tiny_run_config();
  save_run_config(cfg, dir / "cfg.json");
  RunConfig back = load_run_config(dir / "cfg.json");
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK_THROWS_AS((void)load_run_config(dir / "missing.json"), IoError);

  std::ofstream bad(dir / "bad.json");
  bad << "{ not json";
  bad.close();
  CHECK_THROWS_AS((void)load_run_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("sample json round trip covers images, scenes and candidates") {
  DataConfig cfg = tiny_data_config();
  DataBundle b = generate_all(cfg, 5);
  for (const TaskDataset* d : {&b.pretrain, &b.vl_tasks[1], &b.vl_tasks[2]}) {
    for (const Sample& s : (d->test.empty() ? d->train : d->test)) {
      Sample back = sample_from_json(sample_to_json(s));
      CHECK(hash_sample(back) == hash_sample(s));
    }
  }
}

TEST_CASE("dataset write/read round trip with integrity checks") {
  fs::path dir = fresh_dir("dataset_io");
  DataConfig cfg = tiny_data_config();
  DataBundle b = generate_all(cfg, 5);
  std::string fp = bundle_fingerprint(b);

  write_datasets(b, cfg, 5, dir, false);
  CHECK_THROWS_AS(write_datasets(b, cfg, 5, dir, false), IoError);  // already populated
  CHECK_NOTHROW(write_datasets(b, cfg, 5, dir, true));

  LoadedData loaded = read_datasets(dir);
  CHECK(loaded.data_seed == 5);
  CHECK(loaded.fingerprint == fp);
  CHECK(bundle_fingerprint(loaded.bundle) == fp);
  CHECK(hash_dataset(loaded.bundle.pretrain) == hash_dataset(b.pretrain));
  for (std::size_t i = 0; i < b.vl_tasks.size(); ++i) {
    CHECK(hash_dataset(loaded.bundle.vl_tasks[i]) == hash_dataset(b.vl_tasks[i]));
  }

  // flipping one byte in a data file must be detected
  fs::path victim;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".jsonl") {
      victim = e.path();
      break;
    }
  }
  REQUIRE(!victim.empty());
  std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(40);
  f.put('~');
  f.close();
  CHECK_THROWS_AS((void)read_datasets(dir), IoError);
}

TEST_CASE("checkpoint round trip is bitwise for weights, counts and buffer") {
  fs::path dir = fresh_dir("checkpoint");
  Checkpoint ck;
  ck.params = init_parameters(tiny_model_config(), 3);
  ck.provenance = "abcd";
  ck.rng_state = "123 456";

  std::vector<EvalResult> rs;
  rs.push_back(make_result("cloze", "nlg", EvalMode::generative_exact_match, 3, 8));
  rs.push_back(make_result("closer_match", "nlu", EvalMode::multiple_choice, 6, 8));
  ck.baseline = make_nl_baseline(rs);

  DataBundle data = generate_all(tiny_data_config(), 5);
  ck.buffer.per_task[2] = {data.vl_tasks[0].train[0], data.vl_tasks[0].train[1]};

  save_checkpoint(ck, dir / "a.ckpt");
  Checkpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(hash_parameters(back.params) == hash_parameters(ck.params));
  CHECK(back.provenance == "abcd");
  CHECK(back.rng_state == "123 456");
  REQUIRE(back.baseline.has_value());
  CHECK(back.baseline->omega == ck.baseline->omega);
  CHECK(back.baseline->results.size() == 2);
  REQUIRE(back.buffer.per_task.count(2) == 1);
  CHECK(hash_sample(back.buffer.per_task[2][0]) == hash_sample(ck.buffer.per_task[2][0]));

  // truncation is detected
  auto size = fs::file_size(dir / "a.ckpt");
  fs::resize_file(dir / "a.ckpt", size - 16);
  CHECK_THROWS_AS((void)load_checkpoint(dir / "a.ckpt"), IoError);
  CHECK_THROWS_AS((void)load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_CASE("nl baseline derives its scores from raw counts") {
  std::vector<EvalResult> rs;
  rs.push_back(make_result("cloze", "nlg", EvalMode::generative_exact_match, 1, 2));
  rs.push_back(make_result("verb_agreement", "nlu", EvalMode::multiple_choice, 1, 4));
  NlBaseline b = make_nl_baseline(rs);
  CHECK(b.omega == doctest::Approx(1.0 / 3.0).epsilon(1e-15));  // hm(0.5, 0.25)
  CHECK(b.nlu_mean == 0.25);
  CHECK(b.nlg_mean == 0.5);
}

TEST_CASE("matrix rows persist as counts and rebuild exactly") {
  MatrixRow row;
  row.after_task = 3;
  TaskEval t;
  t.task_id = 1;
  t.task_name = "nl";
  t.datasets.push_back(make_result("cloze", "nlg", EvalMode::generative_exact_match, 5, 8));
  t.datasets.push_back(make_result("syntax_gate", "nlu", EvalMode::multiple_choice, 7, 8));
  row.tasks.push_back(t);

  MatrixRow back = row_counts_from_json(row_counts_to_json(row));
  CHECK(back.after_task == 3);
  REQUIRE(back.tasks.size() == 1);
  CHECK(back.tasks[0].task_name == "nl");
  REQUIRE(back.tasks[0].datasets.size() == 2);
  CHECK(back.tasks[0].datasets[0].correct == 5);
  CHECK(back.tasks[0].datasets[1].n == 8);

  json j = eval_result_to_json(t.datasets[0]);
  j["correct"] = 9;  // more correct than attempted
  CHECK_THROWS_AS((void)eval_result_from_json(j), IoError);
}

TEST_CASE("report csv renders one line per dataset with fixed formatting") {
  ForgettingMatrix m;
  MatrixRow row;
  row.after_task = 1;
  TaskEval t;
  t.task_id = 1;
  t.task_name = "nl";
  t.omega = 1.0 / 3.0;
  t.delta = 0.0;
  t.datasets.push_back(make_result("cloze", "nlg", EvalMode::generative_exact_match, 1, 3));
  row.tasks.push_back(t);
  m.rows.push_back(row);

  std::string csv = render_report_csv(m, "runx");
  CHECK(csv.find("run_id,after_task_k,eval_task_t,dataset,mode,n,accuracy,omega,delta,tag\n") == 0);
  CHECK(csv.find("runx,1,1,cloze,generative_exact_match,3,0.3333,0.3333,0.0000,nlg\n") !=
        std::string::npos);

  json summary = render_summary(m, "runx");
  CHECK(summary.at("run_id") == "runx");
  CHECK(summary.at("rows")[0].at("tasks")[0].at("omega").get<double>() == round4(1.0 / 3.0));
}

TEST_CASE("round4 matches the csv text rendering") {
  CHECK(round4(0.33335) == doctest::Approx(0.3333).epsilon(1e-12));
  CHECK(round4(1.0) == 1.0);
  CHECK(round4(0.0) == 0.0);
  CHECK(round4(0.12344999) == doctest::Approx(0.1234).epsilon(1e-12));
}

TEST_CASE("plot series extraction and csv rendering") {
  auto task = [](int id, const char* label, double omega, double delta, json datasets) {
    return json{{"task_id", id}, {"label", label},        {"omega", omega},
                {"delta", delta}, {"datasets", std::move(datasets)}};
  };
  json caption_set = json{{"dataset", "caption"},
                          {"tag", "vl"},
                          {"mode", "generative_exact_match"},
                          {"correct", 4},
                          {"n", 8},
                          {"accuracy", 0.5}};
  json rows = json::array();
  rows.push_back({{"after_task", 1},
                  {"tasks", json::array({task(1, "nl", 0.9, 0.1, json::array())})}});
  rows.push_back(
      {{"after_task", 2},
       {"tasks", json::array({task(1, "nl", 0.5, 0.5, json::array()),
                              task(2, "caption", 0.8, 0.0, json::array({caption_set}))})}});
  json summary = {{"run_id", "r"}, {"rows", std::move(rows)}};

  RunSeries s = series_from_summary(summary, "naive");
  CHECK(s.label == "naive");
  REQUIRE(s.after_task.size() == 2);
  CHECK(s.nl_delta[1] == 0.5);
  CHECK(s.vl_mean[0] == 0.0);  // no VL sets yet
  CHECK(s.vl_mean[1] == 0.5);

  std::string csv = render_plot_csv({s});
  CHECK(csv.find("run,after_task,nl_omega,nl_delta,vl_mean\n") == 0);
  CHECK(csv.find("naive,2,0.5000,0.5000,0.5000\n") != std::string::npos);

  std::string svg = render_delta_svg({s});
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("naive") != std::string::npos);

  fs::path dir = fresh_dir("plots");
  write_plots({s}, dir);
  CHECK(fs::exists(dir / "forgetting.svg"));
  CHECK(fs::exists(dir / "vl_accuracy.svg"));
  CHECK(fs::exists(dir / "methods.svg"));
  CHECK(fs::exists(dir / "plot_data.csv"));
}
