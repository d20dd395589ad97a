#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <span>
#include <vector>

#include "forgetlab/errors.hpp"
#include "forgetlab/model.hpp"
#include "forgetlab/rng.hpp"
#include "forgetlab/synthdata.hpp"
#include "forgetlab/vocab.hpp"

using namespace forgetlab;

namespace {

ModelConfig micro_config() {
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

DataConfig micro_data_config() {
  DataConfig cfg;
  cfg.vocab_size = 96;
  cfg.pretrain_size = 48;
  cfg.nl_eval_size = 8;
  cfg.vl_train_size = 24;
  cfg.vl_test_size = 8;
  cfg.alignment_size = 8;
  cfg.patches = 4;
  cfg.context_budget = 48;
  return cfg;
}

}  // namespace

TEST_CASE("parameter initialization is seeded and component-addressable") {
  ModelConfig cfg = micro_config();
  Parameters a = init_parameters(cfg, 1);
  Parameters b = init_parameters(cfg, 1);
  Parameters c = init_parameters(cfg, 2);
  CHECK(hash_parameters(a) == hash_parameters(b));
  CHECK(hash_parameters(a) != hash_parameters(c));

  CHECK(a.count(Component::vision) == cfg.vision_dim * cfg.patch_features);
  CHECK(a.count(Component::lm_head) == cfg.vocab * cfg.d_model + cfg.vocab);
  CHECK(a.at("block00.ln1.g").isOnes());
  CHECK(a.at("lm_head.b").isZero());
  CHECK_THROWS_AS((void)a.at("block99.attn.wq"), ConfigError);

  std::int64_t total = 0;
  for (const auto& [name, t] : a.tensors) total += t.size();
  CHECK(total <= 5000);  // the gradient-check scale
}

TEST_CASE("trainability masks cover the stage contracts") {
  auto align = TrainabilityMask::alignment_only();
  CHECK(align.trainable(Component::alignment));
  CHECK(!align.trainable(Component::embedding));
  CHECK(!align.trainable(Component::blocks));
  CHECK(!align.trainable(Component::lm_head));
  CHECK(!align.trainable(Component::vision));

  auto full = TrainabilityMask::finetune_full();
  CHECK(full.trainable(Component::blocks));
  CHECK(full.trainable(Component::lm_head));
  CHECK(full.trainable(Component::alignment));
  CHECK(!full.trainable(Component::vision));  // the encoder never trains

  auto lora = TrainabilityMask::finetune_lora();
  CHECK(!lora.trainable(Component::blocks));
  CHECK(lora.trainable(Component::adapter));
  CHECK(lora.trainable(Component::alignment));
}

TEST_CASE("assembled sequences have the documented layout") {
  ModelConfig cfg = micro_config();
  Sample s;
  s.prompt_ids = {Vocabulary::kImg, 10, 11};
  s.target_ids = {12, 13};
  s.loss_mask = {1, 1};
  s.patches = Eigen::MatrixXd::Zero(4, 8);

  Assembled tr = assemble_sequence(cfg, s, AssembleMode::train);
  // BOS + 4 patch slots + 2 prompt tokens + 2 targets; EOS is predicted from
  // the final slot's row rather than occupying a slot of its own
  CHECK(tr.length() == 1 + 4 + 2 + 2);
  CHECK(tr.slots[0].token == Vocabulary::kBos);
  CHECK(tr.slots[1].patch == 0);
  CHECK(tr.slots[4].patch == 3);
  REQUIRE(tr.entries.size() == 3);  // two masked targets + EOS
  CHECK(tr.entries[0].target == 12);
  CHECK(tr.entries[2].target == Vocabulary::kEos);
  CHECK(tr.entries[2].row == tr.length() - 1);
  for (const auto& e : tr.entries) {
    CHECK(e.row >= 0);
    CHECK(e.row < tr.length());
  }

  Assembled po = assemble_sequence(cfg, s, AssembleMode::prompt_only);
  CHECK(po.length() == 1 + 4 + 2);
  CHECK(po.entries.empty());

  Assembled cont = assemble_with_continuation(cfg, s, {20, 21, 22});
  CHECK(cont.length() == po.length() + 3);
  CHECK(cont.entries.size() == 3);

  // masked-out targets produce no loss entries
  Sample masked = s;
  masked.loss_mask = {0, 1};
  CHECK(assemble_sequence(cfg, masked, AssembleMode::train).entries.size() == 2);

  // budget overflow is a hard error
  Sample big = s;
  big.target_ids.assign(60, 10);
  big.loss_mask.assign(60, 1);
  CHECK_THROWS_AS((void)assemble_sequence(cfg, big, AssembleMode::train), ConfigError);
}

TEST_CASE("forward logits are causal") {
  ModelConfig cfg = micro_config();
  Parameters p = init_parameters(cfg, 3);

  Sample a, b;
  a.prompt_ids = {10, 11, 12, 13, 14};
  b.prompt_ids = {10, 11, 12, 40, 41};  // same first three tokens
  Eigen::MatrixXd la = forward_logits(p, nullptr, assemble_sequence(cfg, a, AssembleMode::prompt_only));
  Eigen::MatrixXd lb = forward_logits(p, nullptr, assemble_sequence(cfg, b, AssembleMode::prompt_only));
  // rows 0..2 (BOS, 10, 11) plus row 3 (sees 10,11,12) agree; row 4 differs
  CHECK((la.topRows(4) - lb.topRows(4)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((la.row(4) - lb.row(4)).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("loss of uniform logits is log vocab for any target distribution") {
  Eigen::MatrixXd logits = Eigen::MatrixXd::Constant(3, 8, 0.7);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(3, 8);
  q(0, 2) = 1.0;
  q.row(1).setConstant(1.0 / 8);
  q(2, 0) = 0.25;
  q(2, 7) = 0.75;
  std::vector<std::uint8_t> mask{1, 1, 1};
  CHECK(loss_value(logits, q, mask) == doctest::Approx(2.0794415416798357).epsilon(1e-12));

  // masked rows do not contribute
  std::vector<std::uint8_t> partial{1, 0, 1};
  CHECK(loss_value(logits, q, partial) == doctest::Approx(2.0794415416798357).epsilon(1e-12));
}

TEST_CASE("analytic batch gradients match central finite differences") {
  ModelConfig mcfg = micro_config();
  DataConfig dcfg = micro_data_config();
  Parameters p = init_parameters(mcfg, 5);
  DataBundle data = generate_all(dcfg, 7);

  std::vector<Sample> batch;
  batch.push_back(data.pretrain.train[0]);
  batch.push_back(data.vl_tasks[0].train[0]);  // caption: image + text
  batch.push_back(data.vl_tasks[2].train[0]);  // ocr
  std::span<const Sample> bs(batch);

  TrainabilityMask mask = TrainabilityMask::finetune_full();
  TargetPolicy policy{true, 0.05};  // smoothed targets exercise the full path
  BatchResult res = batch_gradients(p, nullptr, bs, mask, policy);

  const double h = 1e-5;
  double worst = 0.0;
  for (auto& [name, grad] : res.grads) {
    Eigen::MatrixXd& w = p.at(name);
    // probe a deterministic subset of each tensor to keep the test quick
    for (int k = 0; k < std::min<int>(6, static_cast<int>(w.size())); ++k) {
      int r = (k * 7) % static_cast<int>(w.rows());
      int c = (k * 13) % static_cast<int>(w.cols());
      double keep = w(r, c);
      w(r, c) = keep + h;
      double up = batch_loss(p, nullptr, bs, policy);
      w(r, c) = keep - h;
      double dn = batch_loss(p, nullptr, bs, policy);
      w(r, c) = keep;
      double fd = (up - dn) / (2.0 * h);
      double rel = std::abs(grad(r, c) - fd) / (std::abs(grad(r, c)) + std::abs(fd) + 1e-4);
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-4);
  CHECK(res.grads.count("vision.w") == 0);  // frozen encoder gets no gradient
}

TEST_CASE("greedy generation stops at EOS and respects max_new") {
  ModelConfig cfg = micro_config();
  Parameters p = init_parameters(cfg, 3);
  Sample s;
  s.prompt_ids = {10, 11};
  std::vector<int> out = generate_greedy(p, nullptr, s, 5);
  CHECK(out.size() <= 5);
  for (int id : out) CHECK(id != Vocabulary::kEos);
  std::vector<int> again = generate_greedy(p, nullptr, s, 5);
  CHECK(out == again);
}

TEST_CASE("candidate scoring picks the argmax with low-index ties") {
  CHECK(pick_candidate({-1.0, -0.5, -2.0}) == 1);
  CHECK(pick_candidate({-0.5, -0.5, -2.0}) == 0);

  ModelConfig cfg = micro_config();
  Parameters p = init_parameters(cfg, 3);
  Sample s;
  s.prompt_ids = {10, 11, 12};
  s.candidates = {{20}, {21}, {22, 23}};
  s.correct = 0;
  std::vector<double> scores = score_candidates(p, nullptr, s);
  REQUIRE(scores.size() == 3);
  for (double v : scores) CHECK(std::isfinite(v));

  // scores are mean log-probabilities: never positive
  for (double v : scores) CHECK(v <= 0.0);
}

TEST_CASE("resolve_tensor maps gradient keys to base and adapter storage") {
  ModelConfig cfg = micro_config();
  Parameters p = init_parameters(cfg, 3);
  AdapterSet set;
  LoraAdapter ad;
  ad.a = Eigen::MatrixXd::Zero(2, cfg.d_model);
  ad.b = Eigen::MatrixXd::Zero(cfg.d_model, 2);
  set.adapters["block00.attn.wq"] = ad;

  CHECK(resolve_tensor(p, &set, "block00.attn.wq") == &p.at("block00.attn.wq"));
  CHECK(resolve_tensor(p, &set, "block00.attn.wq.lora_a") == &set.adapters["block00.attn.wq"].a);
  CHECK(resolve_tensor(p, &set, "block00.attn.wq.lora_b") == &set.adapters["block00.attn.wq"].b);
}
