#include "forgetlab/model.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "forgetlab/errors.hpp"
#include "forgetlab/hashing.hpp"
#include "forgetlab/rng.hpp"
#include "forgetlab/vocab.hpp"

namespace forgetlab {

namespace {

constexpr double kInvSqrt2 = std::numbers::sqrt2 / 2.0;
const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad_scalar(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  double pdf = std::exp(-0.5 * x * x) * kInvSqrt2Pi;
  return cdf + x * pdf;
}

Eigen::MatrixXd gelu(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return gelu_scalar(v); });
}

Eigen::MatrixXd gelu_grad(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return gelu_grad_scalar(v); });
}

// Enumerates every tensor with its shape in the canonical (creation) order.
template <typename Fn>
void for_each_shape(const ModelConfig& c, Fn&& fn) {
  fn("embed.tok", c.vocab, c.d_model);
  fn("embed.pos", c.context, c.d_model);
  for (int l = 0; l < c.layers; ++l) {
    std::string p = fmt::format("block{:02d}.", l);
    fn(p + "ln1.g", c.d_model, 1);
    fn(p + "ln1.b", c.d_model, 1);
    fn(p + "attn.wq", c.d_model, c.d_model);
    fn(p + "attn.bq", c.d_model, 1);
    fn(p + "attn.wk", c.d_model, c.d_model);
    fn(p + "attn.bk", c.d_model, 1);
    fn(p + "attn.wv", c.d_model, c.d_model);
    fn(p + "attn.bv", c.d_model, 1);
    fn(p + "attn.wo", c.d_model, c.d_model);
    fn(p + "attn.bo", c.d_model, 1);
    fn(p + "ln2.g", c.d_model, 1);
    fn(p + "ln2.b", c.d_model, 1);
    fn(p + "ffn.w1", c.ffn, c.d_model);
    fn(p + "ffn.b1", c.ffn, 1);
    fn(p + "ffn.w2", c.d_model, c.ffn);
    fn(p + "ffn.b2", c.d_model, 1);
  }
  fn("final_ln.g", c.d_model, 1);
  fn("final_ln.b", c.d_model, 1);
  fn("lm_head.w", c.vocab, c.d_model);
  fn("lm_head.b", c.vocab, 1);
  fn("vision.w", c.vision_dim, c.patch_features);
  fn("align.w1", c.d_model, c.vision_dim);
  fn("align.b1", c.d_model, 1);
  fn("align.w2", c.d_model, c.d_model);
  fn("align.b2", c.d_model, 1);
}

const LoraAdapter* find_adapter(const AdapterSet* set, const std::string& name) {
  if (set == nullptr || !set->active()) return nullptr;
  auto it = set->adapters.find(name);
  return it == set->adapters.end() ? nullptr : &it->second;
}

// y = x W^T (+ b^T) (+ scale * x A^T B^T)
Eigen::MatrixXd linear_fwd(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w,
                           const Eigen::MatrixXd* b, const LoraAdapter* ad) {
  Eigen::MatrixXd y = x * w.transpose();
  if (b != nullptr) y.rowwise() += b->col(0).transpose();
  if (ad != nullptr) y.noalias() += ad->scale * ((x * ad->a.transpose()) * ad->b.transpose());
  return y;
}

struct LnCache {
  Eigen::MatrixXd xhat;  // normalized rows
  Eigen::VectorXd inv;   // 1 / sqrt(var + eps) per row
};

Eigen::MatrixXd ln_fwd(const Eigen::MatrixXd& x, const Eigen::MatrixXd& g,
                       const Eigen::MatrixXd& b, double eps, LnCache& c) {
  Eigen::VectorXd mu = x.rowwise().mean();
  Eigen::MatrixXd centered = x.colwise() - mu;
  Eigen::VectorXd var = centered.array().square().rowwise().mean();
  c.inv = (var.array() + eps).sqrt().inverse();
  c.xhat = centered.array().colwise() * c.inv.array();
  Eigen::MatrixXd y = c.xhat.array().rowwise() * g.col(0).transpose().array();
  y.rowwise() += b.col(0).transpose();
  return y;
}

struct BlockCache {
  Eigen::MatrixXd x_in, n1, q, k, v, z, x_mid, n2, f1, g_act;
  std::vector<Eigen::MatrixXd> probs;  // per head, T x T lower-triangular
  LnCache ln1, ln2;
};

struct Trace {
  Eigen::MatrixXd vis, a1, h, aligned;  // vision path (image samples only)
  Eigen::MatrixXd x0;
  std::vector<BlockCache> blocks;
  Eigen::MatrixXd x_final, nf, logits;
  LnCache lnf;
};

void forward_trace(const Parameters& p, const AdapterSet* adapters, const Assembled& seq,
                   Trace& tr) {
  const ModelConfig& c = p.config;
  const int T = seq.length();
  if (T == 0) throw ConfigError("forward: empty sequence");
  if (T > c.context) throw ConfigError("context exceeded");

  if (seq.patches != nullptr) {
    tr.vis = encode_image(p, *seq.patches);
    tr.a1 = linear_fwd(tr.vis, p.at("align.w1"), &p.at("align.b1"), nullptr);
    tr.h = gelu(tr.a1);
    tr.aligned = linear_fwd(tr.h, p.at("align.w2"), &p.at("align.b2"), nullptr);
  }

  const Eigen::MatrixXd& tok = p.at("embed.tok");
  const Eigen::MatrixXd& pos = p.at("embed.pos");
  tr.x0.resize(T, c.d_model);
  for (int t = 0; t < T; ++t) {
    const auto& slot = seq.slots[static_cast<std::size_t>(t)];
    if (slot.token >= 0) {
      if (slot.token >= c.vocab) throw ConfigError("token id out of vocabulary range");
      tr.x0.row(t) = tok.row(slot.token);
    } else {
      tr.x0.row(t) = tr.aligned.row(slot.patch);
    }
    tr.x0.row(t) += pos.row(t);
  }

  const int hd = c.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Eigen::MatrixXd x = tr.x0;
  tr.blocks.resize(static_cast<std::size_t>(c.layers));
  for (int l = 0; l < c.layers; ++l) {
    std::string bp = fmt::format("block{:02d}.", l);
    BlockCache& bc = tr.blocks[static_cast<std::size_t>(l)];
    bc.x_in = std::move(x);
    bc.n1 = ln_fwd(bc.x_in, p.at(bp + "ln1.g"), p.at(bp + "ln1.b"), c.ln_eps, bc.ln1);
    bc.q = linear_fwd(bc.n1, p.at(bp + "attn.wq"), &p.at(bp + "attn.bq"),
                      find_adapter(adapters, bp + "attn.wq"));
    bc.k = linear_fwd(bc.n1, p.at(bp + "attn.wk"), &p.at(bp + "attn.bk"),
                      find_adapter(adapters, bp + "attn.wk"));
    bc.v = linear_fwd(bc.n1, p.at(bp + "attn.wv"), &p.at(bp + "attn.bv"),
                      find_adapter(adapters, bp + "attn.wv"));
    bc.z.resize(T, c.d_model);
    bc.probs.assign(static_cast<std::size_t>(c.heads), {});
    for (int h = 0; h < c.heads; ++h) {
      auto qh = bc.q.middleCols(h * hd, hd);
      auto kh = bc.k.middleCols(h * hd, hd);
      auto vh = bc.v.middleCols(h * hd, hd);
      Eigen::MatrixXd scores = (qh * kh.transpose()) * scale;
      Eigen::MatrixXd& prob = bc.probs[static_cast<std::size_t>(h)];
      prob = Eigen::MatrixXd::Zero(T, T);
      for (int i = 0; i < T; ++i) {
        // causal: row i attends to columns 0..i only
        double m = scores.row(i).head(i + 1).maxCoeff();
        double sum = 0.0;
        for (int j = 0; j <= i; ++j) {
          double e = std::exp(scores(i, j) - m);
          prob(i, j) = e;
          sum += e;
        }
        prob.row(i).head(i + 1) /= sum;
      }
      bc.z.middleCols(h * hd, hd).noalias() = prob * vh;
    }
    Eigen::MatrixXd o = linear_fwd(bc.z, p.at(bp + "attn.wo"), &p.at(bp + "attn.bo"),
                                   find_adapter(adapters, bp + "attn.wo"));
    bc.x_mid = bc.x_in + o;
    bc.n2 = ln_fwd(bc.x_mid, p.at(bp + "ln2.g"), p.at(bp + "ln2.b"), c.ln_eps, bc.ln2);
    bc.f1 = linear_fwd(bc.n2, p.at(bp + "ffn.w1"), &p.at(bp + "ffn.b1"),
                       find_adapter(adapters, bp + "ffn.w1"));
    bc.g_act = gelu(bc.f1);
    Eigen::MatrixXd f2 = linear_fwd(bc.g_act, p.at(bp + "ffn.w2"), &p.at(bp + "ffn.b2"),
                                    find_adapter(adapters, bp + "ffn.w2"));
    x = bc.x_mid + f2;
  }
  tr.x_final = std::move(x);
  tr.nf = ln_fwd(tr.x_final, p.at("final_ln.g"), p.at("final_ln.b"), c.ln_eps, tr.lnf);
  tr.logits = linear_fwd(tr.nf, p.at("lm_head.w"), &p.at("lm_head.b"),
                         find_adapter(adapters, "lm_head.w"));
  if (!tr.logits.allFinite()) throw NumericError("forward: non-finite logits");
}

struct GradSink {
  std::map<std::string, Eigen::MatrixXd>* out = nullptr;
  TrainabilityMask mask;

  bool want(const std::string& name) const { return mask.trainable(component_of(name)); }
  Eigen::MatrixXd& acc(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    auto it = out->find(name);
    if (it == out->end()) {
      it = out->emplace(name, Eigen::MatrixXd::Zero(rows, cols)).first;
    }
    return it->second;
  }
};

// Backward through y = x W^T + b^T (+ adapter); returns dx, accumulates dW/db
// (and adapter grads) into the sink when trainable.
Eigen::MatrixXd linear_bwd(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy,
                           const std::string& wname, const std::string& bname,
                           const Eigen::MatrixXd& w, const LoraAdapter* ad, GradSink& sink) {
  Eigen::MatrixXd dx = dy * w;
  if (sink.want(wname)) {
    sink.acc(wname, w.rows(), w.cols()).noalias() += dy.transpose() * x;
    if (!bname.empty()) {
      sink.acc(bname, w.rows(), 1).col(0) += dy.colwise().sum().transpose();
    }
  }
  if (ad != nullptr) {
    Eigen::MatrixXd du = ad->scale * (dy * ad->b);  // T x r
    if (sink.mask.adapters) {
      Eigen::MatrixXd u = x * ad->a.transpose();  // T x r
      sink.acc(wname + ".lora_b", ad->b.rows(), ad->b.cols()).noalias() +=
          ad->scale * (dy.transpose() * u);
      sink.acc(wname + ".lora_a", ad->a.rows(), ad->a.cols()).noalias() += du.transpose() * x;
    }
    dx.noalias() += du * ad->a;
  }
  return dx;
}

Eigen::MatrixXd ln_bwd(const Eigen::MatrixXd& dy, const LnCache& c, const Eigen::MatrixXd& g,
                       const std::string& gname, const std::string& bname, GradSink& sink) {
  Eigen::MatrixXd dxhat = dy.array().rowwise() * g.col(0).transpose().array();
  if (sink.want(gname)) {
    sink.acc(gname, g.rows(), 1).col(0) +=
        (dy.array() * c.xhat.array()).colwise().sum().matrix().transpose();
    sink.acc(bname, g.rows(), 1).col(0) += dy.colwise().sum().transpose();
  }
  Eigen::VectorXd m1 = dxhat.rowwise().mean();
  Eigen::VectorXd m2 = (dxhat.array() * c.xhat.array()).rowwise().mean();
  Eigen::MatrixXd dx =
      ((dxhat.array().colwise() - m1.array()) - c.xhat.array().colwise() * m2.array()).colwise() *
      c.inv.array();
  return dx;
}

void backward_trace(const Parameters& p, const AdapterSet* adapters, const Assembled& seq,
                    const Trace& tr, const Eigen::MatrixXd& dlogits, GradSink& sink) {
  const ModelConfig& c = p.config;
  const int T = seq.length();
  const int hd = c.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Eigen::MatrixXd dnf = linear_bwd(tr.nf, dlogits, "lm_head.w", "lm_head.b", p.at("lm_head.w"),
                                   find_adapter(adapters, "lm_head.w"), sink);
  Eigen::MatrixXd dx = ln_bwd(dnf, tr.lnf, p.at("final_ln.g"), "final_ln.g", "final_ln.b", sink);

  for (int l = c.layers - 1; l >= 0; --l) {
    std::string bp = fmt::format("block{:02d}.", l);
    const BlockCache& bc = tr.blocks[static_cast<std::size_t>(l)];

    // x_out = x_mid + W2 gelu(W1 n2)
    Eigen::MatrixXd dg_act = linear_bwd(bc.g_act, dx, bp + "ffn.w2", bp + "ffn.b2",
                                        p.at(bp + "ffn.w2"), find_adapter(adapters, bp + "ffn.w2"),
                                        sink);
    Eigen::MatrixXd df1 = dg_act.array() * gelu_grad(bc.f1).array();
    Eigen::MatrixXd dn2 = linear_bwd(bc.n2, df1, bp + "ffn.w1", bp + "ffn.b1", p.at(bp + "ffn.w1"),
                                     find_adapter(adapters, bp + "ffn.w1"), sink);
    Eigen::MatrixXd dx_mid = dx + ln_bwd(dn2, bc.ln2, p.at(bp + "ln2.g"), bp + "ln2.g",
                                         bp + "ln2.b", sink);

    // x_mid = x_in + Wo z
    Eigen::MatrixXd dz = linear_bwd(bc.z, dx_mid, bp + "attn.wo", bp + "attn.bo",
                                    p.at(bp + "attn.wo"), find_adapter(adapters, bp + "attn.wo"),
                                    sink);
    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(T, c.d_model);
    Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(T, c.d_model);
    Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(T, c.d_model);
    for (int h = 0; h < c.heads; ++h) {
      auto qh = bc.q.middleCols(h * hd, hd);
      auto kh = bc.k.middleCols(h * hd, hd);
      auto vh = bc.v.middleCols(h * hd, hd);
      const Eigen::MatrixXd& prob = bc.probs[static_cast<std::size_t>(h)];
      auto dzh = dz.middleCols(h * hd, hd);
      Eigen::MatrixXd dprob = dzh * vh.transpose();
      dv.middleCols(h * hd, hd).noalias() = prob.transpose() * dzh;
      // softmax rows: ds = prob .* (dprob - rowsum(dprob .* prob))
      Eigen::VectorXd rs = (dprob.array() * prob.array()).rowwise().sum();
      Eigen::MatrixXd ds = prob.array() * (dprob.array().colwise() - rs.array());
      dq.middleCols(h * hd, hd).noalias() = scale * (ds * kh);
      dk.middleCols(h * hd, hd).noalias() = scale * (ds.transpose() * qh);
    }
    Eigen::MatrixXd dn1 = linear_bwd(bc.n1, dq, bp + "attn.wq", bp + "attn.bq",
                                     p.at(bp + "attn.wq"), find_adapter(adapters, bp + "attn.wq"),
                                     sink);
    dn1 += linear_bwd(bc.n1, dk, bp + "attn.wk", bp + "attn.bk", p.at(bp + "attn.wk"),
                      find_adapter(adapters, bp + "attn.wk"), sink);
    dn1 += linear_bwd(bc.n1, dv, bp + "attn.wv", bp + "attn.bv", p.at(bp + "attn.wv"),
                      find_adapter(adapters, bp + "attn.wv"), sink);
    dx = dx_mid + ln_bwd(dn1, bc.ln1, p.at(bp + "ln1.g"), bp + "ln1.g", bp + "ln1.b", sink);
  }

  // embeddings and the alignment path
  const bool want_embed = sink.mask.embedding;
  const bool want_align = sink.mask.alignment && seq.patches != nullptr;
  Eigen::MatrixXd daligned;
  if (want_align) daligned = Eigen::MatrixXd::Zero(tr.aligned.rows(), tr.aligned.cols());
  for (int t = 0; t < T; ++t) {
    const auto& slot = seq.slots[static_cast<std::size_t>(t)];
    if (want_embed) {
      sink.acc("embed.pos", c.context, c.d_model).row(t) += dx.row(t);
      if (slot.token >= 0) {
        sink.acc("embed.tok", c.vocab, c.d_model).row(slot.token) += dx.row(t);
      }
    }
    if (want_align && slot.patch >= 0) daligned.row(slot.patch) += dx.row(t);
  }
  if (want_align) {
    Eigen::MatrixXd dh = linear_bwd(tr.h, daligned, "align.w2", "align.b2", p.at("align.w2"),
                                    nullptr, sink);
    Eigen::MatrixXd da1 = dh.array() * gelu_grad(tr.a1).array();
    linear_bwd(tr.vis, da1, "align.w1", "align.b1", p.at("align.w1"), nullptr, sink);
    // the vision encoder below is frozen; patches are data — stop here
  }
}

// Cross entropy at one logits row against a one-hot or smoothed target.
// Returns the loss term; writes p - q into dz when dz != nullptr.
double row_loss(const Eigen::MatrixXd& logits, int row, int target, const TargetPolicy& policy,
                int vocab, Eigen::MatrixXd* dz_out, double weight) {
  Eigen::ArrayXd z = logits.row(row).transpose().array();
  double m = z.maxCoeff();
  Eigen::ArrayXd ex = (z - m).exp();
  double sum = ex.sum();
  double lse = m + std::log(sum);
  double loss;
  if (!policy.smoothed) {
    loss = lse - z(target);
  } else {
    double off = policy.alpha / static_cast<double>(vocab - 1);
    loss = lse - ((1.0 - policy.alpha) * z(target) + off * (z.sum() - z(target)));
  }
  if (dz_out != nullptr) {
    Eigen::ArrayXd dz = ex / sum;
    if (!policy.smoothed) {
      dz(target) -= 1.0;
    } else {
      double off = policy.alpha / static_cast<double>(vocab - 1);
      dz -= off;
      dz(target) -= 1.0 - policy.alpha - off;
    }
    dz_out->row(row) += weight * dz.matrix().transpose();
  }
  return loss;
}

}  // namespace

void ModelConfig::validate() const {
  if (layers < 1 || d_model < 1 || heads < 1 || ffn < 1 || context < 1 || vocab < 16 ||
      patches < 1 || patch_features < 1 || vision_dim < 1) {
    throw ConfigError("model dimensions must be positive (vocab >= 16)");
  }
  if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
  if (context < patches + 16) throw ConfigError("context budget must be >= patches + 16");
  if (init_std <= 0.0 || ln_eps <= 0.0) throw ConfigError("init_std and ln_eps must be positive");
}

Component component_of(const std::string& name) {
  if (name.find(".lora_") != std::string::npos) return Component::adapter;
  if (name.rfind("embed.", 0) == 0) return Component::embedding;
  if (name.rfind("block", 0) == 0 || name.rfind("final_ln", 0) == 0) return Component::blocks;
  if (name.rfind("lm_head", 0) == 0) return Component::lm_head;
  if (name.rfind("vision", 0) == 0) return Component::vision;
  if (name.rfind("align.", 0) == 0) return Component::alignment;
  throw ConfigError("unknown tensor name: " + name);
}

bool TrainabilityMask::trainable(Component c) const {
  switch (c) {
    case Component::embedding: return embedding;
    case Component::blocks: return blocks;
    case Component::lm_head: return lm_head;
    case Component::vision: return false;  // frozen unconditionally
    case Component::alignment: return alignment;
    case Component::adapter: return adapters;
  }
  return false;
}

Eigen::MatrixXd& Parameters::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigError("no such tensor: " + name);
  return it->second;
}

const Eigen::MatrixXd& Parameters::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigError("no such tensor: " + name);
  return it->second;
}

std::int64_t Parameters::count(Component c) const {
  std::int64_t n = 0;
  for (const auto& [name, t] : tensors) {
    if (component_of(name) == c) n += t.size();
  }
  return n;
}

Parameters init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Parameters p;
  p.config = cfg;
  Rng rng(derive_seed(seed, "init"));
  for_each_shape(cfg, [&](const std::string& name, int rows, int cols) {
    Eigen::MatrixXd t(rows, cols);
    bool is_gain = name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0;
    if (is_gain) {
      t.setOnes();
    } else if (cols == 1) {
      t.setZero();  // biases
    } else {
      double std = name == "vision.w" ? 1.0 / std::sqrt(static_cast<double>(cfg.patch_features))
                                      : cfg.init_std;
      for (int r = 0; r < rows; ++r) {
        for (int c2 = 0; c2 < cols; ++c2) t(r, c2) = rng.normal(0.0, std);
      }
    }
    p.tensors.emplace(name, std::move(t));
  });
  return p;
}

std::uint64_t hash_component(const Parameters& p, Component c) {
  Fnv64 h;
  for (const auto& [name, t] : p.tensors) {
    if (component_of(name) != c) continue;
    h.update_string(name);
    h.update_i64(t.rows());
    h.update_i64(t.cols());
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index col = 0; col < t.cols(); ++col) h.update_double(t(r, col));
    }
  }
  return h.digest();
}

std::uint64_t hash_parameters(const Parameters& p) {
  Fnv64 h;
  for (Component c : {Component::embedding, Component::blocks, Component::lm_head,
                      Component::vision, Component::alignment}) {
    h.update_u64(hash_component(p, c));
  }
  return h.digest();
}

Assembled assemble_sequence(const ModelConfig& cfg, const Sample& s, AssembleMode mode) {
  int img_slots = 0;
  for (int id : s.prompt_ids) {
    if (id == Vocabulary::kImg) ++img_slots;
  }
  if (s.has_image() && img_slots != 1) {
    throw ConfigError("image sample must contain exactly one IMG placeholder");
  }
  if (!s.has_image() && img_slots != 0) {
    throw ConfigError("IMG placeholder present without an image");
  }
  if (s.has_image() &&
      (s.patches->rows() != cfg.patches || s.patches->cols() != cfg.patch_features)) {
    throw ConfigError(fmt::format("patch matrix must be {}x{}", cfg.patches, cfg.patch_features));
  }

  Assembled a;
  a.patches = s.has_image() ? &*s.patches : nullptr;
  a.slots.push_back({Vocabulary::kBos, -1});
  for (int id : s.prompt_ids) {
    if (id == Vocabulary::kImg) {
      for (int pi = 0; pi < cfg.patches; ++pi) a.slots.push_back({-1, pi});
    } else {
      a.slots.push_back({id, -1});
    }
  }

  if (mode == AssembleMode::train) {
    if (s.target_ids.size() != s.loss_mask.size()) {
      throw ConfigError("loss mask must align with target tokens");
    }
    for (std::size_t i = 0; i < s.target_ids.size(); ++i) {
      if (s.loss_mask[i]) {
        a.entries.push_back({a.length() - 1, s.target_ids[i]});
      }
      a.slots.push_back({s.target_ids[i], -1});
    }
    a.entries.push_back({a.length() - 1, Vocabulary::kEos});
  }
  if (a.length() > cfg.context) throw ConfigError("context exceeded");
  return a;
}

Assembled assemble_with_continuation(const ModelConfig& cfg, const Sample& s,
                                     const std::vector<int>& continuation) {
  if (continuation.empty()) throw ConfigError("empty candidate");
  Sample prompt_only = s;
  prompt_only.target_ids.clear();
  prompt_only.loss_mask.clear();
  Assembled a = assemble_sequence(cfg, prompt_only, AssembleMode::prompt_only);
  for (int id : continuation) {
    a.entries.push_back({a.length() - 1, id});
    a.slots.push_back({id, -1});
  }
  if (a.length() > cfg.context) throw ConfigError("context exceeded");
  return a;
}

Eigen::MatrixXd encode_image(const Parameters& p, const Eigen::MatrixXd& patches) {
  const Eigen::MatrixXd& w = p.at("vision.w");
  if (patches.cols() != w.cols()) throw ConfigError("patch feature dimension mismatch");
  return patches * w.transpose();
}

Eigen::MatrixXd align(const Parameters& p, const Eigen::MatrixXd& visual) {
  if (visual.cols() != p.at("align.w1").cols()) throw ConfigError("visual embedding dim mismatch");
  Eigen::MatrixXd a1 = linear_fwd(visual, p.at("align.w1"), &p.at("align.b1"), nullptr);
  return linear_fwd(gelu(a1), p.at("align.w2"), &p.at("align.b2"), nullptr);
}

Eigen::MatrixXd forward_logits(const Parameters& p, const AdapterSet* adapters,
                               const Assembled& seq) {
  Trace tr;
  forward_trace(p, adapters, seq, tr);
  return std::move(tr.logits);
}

double loss_value(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& q,
                  const std::vector<std::uint8_t>& mask) {
  if (q.rows() != logits.rows() || q.cols() != logits.cols()) {
    throw ConfigError("loss: q must match logits shape");
  }
  if (static_cast<Eigen::Index>(mask.size()) != logits.rows()) {
    throw ConfigError("loss: mask must have one entry per logits row");
  }
  double total = 0.0;
  int used = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    double qsum = q.row(r).sum();
    if (std::abs(qsum - 1.0) > 1e-9 || q.row(r).minCoeff() < 0.0) {
      throw ConfigError("loss: q rows must be probability vectors");
    }
    Eigen::ArrayXd z = logits.row(r).transpose().array();
    double m = z.maxCoeff();
    double lse = m + std::log((z - m).exp().sum());
    total += lse - (q.row(r).array() * z.transpose()).sum();
    ++used;
  }
  if (used == 0) throw ConfigError("loss: all-false mask");
  return total / static_cast<double>(used);
}

BatchResult batch_gradients(const Parameters& p, const AdapterSet* adapters,
                            std::span<const Sample> batch, const TrainabilityMask& mask,
                            const TargetPolicy& policy) {
  if (batch.empty()) throw ConfigError("gradients: empty batch");
  BatchResult res;
  GradSink sink{&res.grads, mask};
  const double bs = static_cast<double>(batch.size());

  for (const Sample& s : batch) {
    Assembled seq = assemble_sequence(p.config, s, AssembleMode::train);
    if (seq.entries.empty()) throw ConfigError("gradients: sample with no target positions");
    Trace tr;
    forward_trace(p, adapters, seq, tr);
    const double weight = 1.0 / (static_cast<double>(seq.entries.size()) * bs);
    Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(seq.length(), p.config.vocab);
    double sample_loss = 0.0;
    for (const auto& e : seq.entries) {
      sample_loss += row_loss(tr.logits, e.row, e.target, policy, p.config.vocab, &dlogits, weight);
    }
    res.loss += sample_loss / static_cast<double>(seq.entries.size()) / bs;
    backward_trace(p, adapters, seq, tr, dlogits, sink);
  }
  if (!std::isfinite(res.loss)) throw NumericError("gradients: non-finite loss");
  for (const auto& [name, g] : res.grads) {
    if (!g.allFinite()) throw NumericError("gradients: non-finite gradient for " + name);
  }
  return res;
}

double batch_loss(const Parameters& p, const AdapterSet* adapters, std::span<const Sample> batch,
                  const TargetPolicy& policy) {
  if (batch.empty()) throw ConfigError("loss: empty batch");
  double total = 0.0;
  for (const Sample& s : batch) {
    Assembled seq = assemble_sequence(p.config, s, AssembleMode::train);
    if (seq.entries.empty()) throw ConfigError("loss: sample with no target positions");
    Trace tr;
    forward_trace(p, adapters, seq, tr);
    double sample_loss = 0.0;
    for (const auto& e : seq.entries) {
      sample_loss += row_loss(tr.logits, e.row, e.target, policy, p.config.vocab, nullptr, 0.0);
    }
    total += sample_loss / static_cast<double>(seq.entries.size());
  }
  double loss = total / static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw NumericError("loss: non-finite");
  return loss;
}

std::vector<int> generate_greedy(const Parameters& p, const AdapterSet* adapters, const Sample& s,
                                 int max_new) {
  if (max_new < 0) throw ConfigError("generate: max_new must be >= 0");
  Sample prompt_only = s;
  prompt_only.target_ids.clear();
  prompt_only.loss_mask.clear();
  Assembled seq = assemble_sequence(p.config, prompt_only, AssembleMode::prompt_only);

  std::vector<int> out;
  for (int step = 0; step < max_new; ++step) {
    if (seq.length() >= p.config.context) break;
    Eigen::MatrixXd logits = forward_logits(p, adapters, seq);
    Eigen::Index last = logits.rows() - 1;
    int best = 0;
    double best_v = logits(last, 0);
    for (int j = 1; j < p.config.vocab; ++j) {
      if (logits(last, j) > best_v) {
        best_v = logits(last, j);
        best = j;
      }
    }
    if (best == Vocabulary::kEos) break;
    out.push_back(best);
    seq.slots.push_back({best, -1});
  }
  return out;
}

std::vector<double> score_candidates(const Parameters& p, const AdapterSet* adapters,
                                     const Sample& s) {
  if (s.candidates.empty()) throw ConfigError("score: no candidates");
  bool all_single = true;
  for (const auto& cand : s.candidates) {
    if (cand.empty()) throw ConfigError("empty candidate");
    if (cand.size() != 1) all_single = false;
  }

  std::vector<double> scores;
  scores.reserve(s.candidates.size());
  if (all_single) {
    // one shared forward: every candidate is scored at the same position
    Sample prompt_only = s;
    prompt_only.target_ids.clear();
    prompt_only.loss_mask.clear();
    Assembled seq = assemble_sequence(p.config, prompt_only, AssembleMode::prompt_only);
    Eigen::MatrixXd logits = forward_logits(p, adapters, seq);
    Eigen::ArrayXd z = logits.row(logits.rows() - 1).transpose().array();
    double m = z.maxCoeff();
    double lse = m + std::log((z - m).exp().sum());
    for (const auto& cand : s.candidates) scores.push_back(z(cand[0]) - lse);
    return scores;
  }
  for (const auto& cand : s.candidates) {
    Assembled seq = assemble_with_continuation(p.config, s, cand);
    Eigen::MatrixXd logits = forward_logits(p, adapters, seq);
    double total = 0.0;
    for (const auto& e : seq.entries) {
      Eigen::ArrayXd z = logits.row(e.row).transpose().array();
      double m = z.maxCoeff();
      double lse = m + std::log((z - m).exp().sum());
      total += z(e.target) - lse;
    }
    scores.push_back(total / static_cast<double>(cand.size()));
  }
  return scores;
}

int pick_candidate(const std::vector<double>& scores) {
  if (scores.empty()) throw ConfigError("pick: no scores");
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
    if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

Eigen::MatrixXd* resolve_tensor(Parameters& p, AdapterSet* adapters, const std::string& grad_name) {
  auto suffix_at = grad_name.find(".lora_");
  if (suffix_at != std::string::npos) {
    if (adapters == nullptr) throw ConfigError("adapter gradient without adapters: " + grad_name);
    auto it = adapters->adapters.find(grad_name.substr(0, suffix_at));
    if (it == adapters->adapters.end()) throw ConfigError("no adapter for " + grad_name);
    std::string half = grad_name.substr(suffix_at + 6);
    if (half == "a") return &it->second.a;
    if (half == "b") return &it->second.b;
    throw ConfigError("bad adapter gradient key: " + grad_name);
  }
  return &p.at(grad_name);
}

}  // namespace forgetlab
