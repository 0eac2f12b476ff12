#include "cle/backbone.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "cle/optim.hpp"
#include "cle/rng.hpp"
#include "cle/taskgen.hpp"

namespace cle {

void BackboneConfig::validate() const {
  if (model_dim <= 0 || layers <= 0 || heads <= 0 || seq_img <= 0 || seq_txt <= 0 ||
      vocab_img <= 1 || vocab_txt <= 1 || ffn_mult <= 0) {
    throw std::invalid_argument("backbone config: all sizes must be positive");
  }
  if (model_dim % heads != 0) {
    throw std::invalid_argument("backbone config: model_dim must be divisible by heads");
  }
}

static Tensor init_weight(std::vector<int> shape, Rng& rng, double stdev = 0.02) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  rng.fill_normal(t, stdev);
  return t;
}

Backbone Backbone::init(const BackboneConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "backbone-init"));
  const int d = cfg.model_dim;
  Backbone bb;
  bb.cfg = cfg;
  bb.cls_embed = init_weight({1, d}, rng);
  // token tables start wide so codes stay distinguishable even when the
  // backbone freezes before ever training on them
  bb.img_embed = init_weight({cfg.vocab_img, d}, rng, 0.5);
  bb.txt_embed = init_weight({cfg.vocab_txt, d}, rng, 0.5);
  bb.pos_embed = init_weight({cfg.seq_len(), d}, rng);
  bb.type_embed = init_weight({3, d}, rng);
  const int hidden = cfg.ffn_mult * d;
  for (int l = 0; l < cfg.layers; ++l) {
    Block blk;
    blk.ln1_g = Tensor::full({d}, 1, true);
    blk.ln1_b = Tensor::zeros({d}, true);
    blk.wq = init_weight({d, d}, rng);
    blk.bq = Tensor::zeros({d}, true);
    blk.wk = init_weight({d, d}, rng);
    blk.bk = Tensor::zeros({d}, true);
    blk.wv = init_weight({d, d}, rng);
    blk.bv = Tensor::zeros({d}, true);
    blk.wo = init_weight({d, d}, rng);
    blk.bo = Tensor::zeros({d}, true);
    blk.ln2_g = Tensor::full({d}, 1, true);
    blk.ln2_b = Tensor::zeros({d}, true);
    blk.w1 = init_weight({d, hidden}, rng);
    blk.b1 = Tensor::zeros({hidden}, true);
    blk.w2 = init_weight({hidden, d}, rng);
    blk.b2 = Tensor::zeros({d}, true);
    bb.blocks.push_back(std::move(blk));
  }
  bb.lnf_g = Tensor::full({d}, 1, true);
  bb.lnf_b = Tensor::zeros({d}, true);
  return bb;
}

std::vector<Tensor> Backbone::parameters() const {
  std::vector<Tensor> ps = {cls_embed, img_embed, txt_embed, pos_embed, type_embed};
  for (const Block& b : blocks) {
    for (const Tensor& t : {b.ln1_g, b.ln1_b, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo,
                            b.ln2_g, b.ln2_b, b.w1, b.b1, b.w2, b.b2}) {
      ps.push_back(t);
    }
  }
  ps.push_back(lnf_g);
  ps.push_back(lnf_b);
  return ps;
}

void Backbone::set_frozen(bool on) {
  frozen = on;
  for (Tensor& t : parameters()) t.set_requires_grad(!on);
}

Backbone Backbone::clone() const {
  Backbone out;
  out.cfg = cfg;
  out.frozen = frozen;
  out.cls_embed = cls_embed.detached_copy();
  out.img_embed = img_embed.detached_copy();
  out.txt_embed = txt_embed.detached_copy();
  out.pos_embed = pos_embed.detached_copy();
  out.type_embed = type_embed.detached_copy();
  for (const Block& b : blocks) {
    Block c;
    c.ln1_g = b.ln1_g.detached_copy();
    c.ln1_b = b.ln1_b.detached_copy();
    c.wq = b.wq.detached_copy();
    c.bq = b.bq.detached_copy();
    c.wk = b.wk.detached_copy();
    c.bk = b.bk.detached_copy();
    c.wv = b.wv.detached_copy();
    c.bv = b.bv.detached_copy();
    c.wo = b.wo.detached_copy();
    c.bo = b.bo.detached_copy();
    c.ln2_g = b.ln2_g.detached_copy();
    c.ln2_b = b.ln2_b.detached_copy();
    c.w1 = b.w1.detached_copy();
    c.b1 = b.b1.detached_copy();
    c.w2 = b.w2.detached_copy();
    c.b2 = b.b2.detached_copy();
    out.blocks.push_back(std::move(c));
  }
  out.lnf_g = lnf_g.detached_copy();
  out.lnf_b = lnf_b.detached_copy();
  return out;
}

static void validate_batch(const BackboneConfig& cfg, const SampleBatch& batch) {
  if (batch.batch <= 0) throw std::invalid_argument("forward: empty batch");
  if (static_cast<int>(batch.img_tokens.size()) != batch.batch * cfg.seq_img ||
      static_cast<int>(batch.txt_tokens.size()) != batch.batch * cfg.seq_txt) {
    throw std::invalid_argument("forward: token buffer sizes do not match config");
  }
}

BackboneForward Backbone::forward(const SampleBatch& batch, const AdapterHook* hook) const {
  validate_batch(cfg, batch);
  const int b = batch.batch;
  const int d = cfg.model_dim;
  const int s = cfg.seq_len();
  const int heads = cfg.heads;
  const int dh = d / heads;

  std::vector<int> cls_ids(static_cast<size_t>(b), 0);
  Tensor e_cls = embedding(cls_embed, cls_ids, {b, 1});
  Tensor e_img = embedding(img_embed, batch.img_tokens, {b, cfg.seq_img});
  Tensor e_txt = embedding(txt_embed, batch.txt_tokens, {b, cfg.seq_txt});
  Tensor x = concat({e_cls, e_img, e_txt}, 1);

  // position and modality-type contributions are per-position constants
  std::vector<int> type_ids(static_cast<size_t>(s), 2);
  type_ids[0] = 0;
  for (int i = 0; i < cfg.seq_img; ++i) type_ids[static_cast<size_t>(1 + i)] = 1;
  Tensor typ = embedding(type_embed, type_ids, {s});
  x = add_bias(x, pos_embed);
  x = add_bias(x, typ);

  BackboneForward out;
  out.hidden.reserve(static_cast<size_t>(cfg.insertion_points()));

  auto apply_hook = [&](Tensor h, int point) {
    out.hidden.push_back(h);
    if (!hook) return h;
    Tensor delta = (*hook)(h, point);
    if (delta.shape() != h.shape()) {
      throw std::invalid_argument("forward: hook delta shape " + shape_str(delta.shape()) +
                                  " does not match hidden state " + shape_str(h.shape()));
    }
    return add(h, delta);
  };

  const real inv_sqrt_dh = real(1) / std::sqrt(static_cast<real>(dh));
  for (int l = 0; l < cfg.layers; ++l) {
    const Block& blk = blocks[static_cast<size_t>(l)];
    // attention sublayer
    Tensor y = layer_norm(x, blk.ln1_g, blk.ln1_b);
    Tensor q = add_bias(matmul(y, blk.wq), blk.bq);
    Tensor k = add_bias(matmul(y, blk.wk), blk.bk);
    Tensor v = add_bias(matmul(y, blk.wv), blk.bv);
    auto heads_of = [&](const Tensor& t) {
      return permute(reshape(t, {b, s, heads, dh}), {0, 2, 1, 3});
    };
    Tensor qh = heads_of(q), kh = heads_of(k), vh = heads_of(v);
    Tensor att = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dh), -1);
    Tensor ctx = reshape(permute(matmul(att, vh), {0, 2, 1, 3}), {b, s, d});
    Tensor attn_out = add_bias(matmul(ctx, blk.wo), blk.bo);
    x = apply_hook(add(x, attn_out), BackboneConfig::slots_per_layer * l);

    // feed-forward sublayer
    Tensor z = layer_norm(x, blk.ln2_g, blk.ln2_b);
    Tensor h1 = gelu(add_bias(matmul(z, blk.w1), blk.b1));
    Tensor ffn_out = add_bias(matmul(h1, blk.w2), blk.b2);
    x = apply_hook(add(x, ffn_out), BackboneConfig::slots_per_layer * l + 1);
  }

  Tensor normed = layer_norm(x, lnf_g, lnf_b);
  out.cls = select(normed, 1, 0);
  return out;
}

Backbone pretrain_base(const BackboneConfig& cfg, const TaskDataset& base_task, int epochs,
                       uint64_t seed) {
  if (base_task.spec.kind != TaskKind::kMultiModal) {
    throw std::invalid_argument("pretrain_base: base task must be multi-modal");
  }
  Backbone bb = Backbone::init(cfg, seed);

  Rng rng(derive_seed(seed, "pretrain"));
  const int classes = base_task.spec.classes;
  Tensor hw = init_weight({cfg.model_dim, classes}, rng);
  Tensor hb = Tensor::zeros({classes}, true);

  std::vector<Tensor> params = bb.parameters();
  params.push_back(hw);
  params.push_back(hb);
  Adam opt(params, AdamConfig{});

  const int n = static_cast<int>(base_task.train.size());
  const int bsz = 32;
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (int at = 0; at < n; at += bsz) {
      const int take = std::min(bsz, n - at);
      SampleBatch batch = make_batch(base_task, std::span<const int>(order).subspan(
                                                    static_cast<size_t>(at), static_cast<size_t>(take)));
      opt.zero_grad();
      Tensor logits = add_bias(matmul(bb.forward(batch).cls, hw), hb);
      Tensor loss = cross_entropy(logits, batch.labels);
      loss.backward();
      opt.step();
    }
  }

  if (epochs > 0) {
    NoGradGuard ng;
    int correct = 0;
    for (int at = 0; at < n; at += bsz) {
      const int take = std::min(bsz, n - at);
      std::vector<int> idx(static_cast<size_t>(take));
      for (int i = 0; i < take; ++i) idx[static_cast<size_t>(i)] = at + i;
      SampleBatch batch = make_batch(base_task, idx);
      Tensor logits = add_bias(matmul(bb.forward(batch).cls, hw), hb);
      for (int i = 0; i < take; ++i) {
        const real* row = logits.values().data() + static_cast<size_t>(i) * classes;
        int best = 0;
        for (int c = 1; c < classes; ++c) {
          if (row[c] > row[best]) best = c;
        }
        if (best == batch.labels[static_cast<size_t>(i)]) ++correct;
      }
    }
    const double acc = static_cast<double>(correct) / n;
    if (acc < 0.6) {
      throw std::runtime_error("pretrain_base: train accuracy " + std::to_string(acc) +
                               " below 0.6; numerics or task are degenerate");
    }
  }
  bb.set_frozen(true);
  return bb;
}

}  // namespace cle
