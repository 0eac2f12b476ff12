#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cle/ops.hpp"

namespace cle {

// Reserved code for the absent stream of a uni-modal sample.
constexpr int kPadCode = 0;

struct BackboneConfig {
  int model_dim = 32;
  int layers = 2;
  int heads = 2;
  int seq_img = 8;
  int seq_txt = 8;
  int vocab_img = 128;
  int vocab_txt = 128;
  int ffn_mult = 2;
  static constexpr int slots_per_layer = 2;  // slot 0 post-attention, slot 1 post-ffn

  int seq_len() const { return 1 + seq_img + seq_txt; }
  int insertion_points() const { return layers * slots_per_layer; }
  void validate() const;
};

enum class StreamMask { kMultiModal, kImageOnly, kTextOnly };

struct SampleBatch {
  int batch = 0;
  std::vector<int> img_tokens;  // batch * seq_img
  std::vector<int> txt_tokens;  // batch * seq_txt
  StreamMask mask = StreamMask::kMultiModal;
  std::vector<int> labels;  // batch
};

// Hook invoked at each insertion point with the pre-hook hidden state; the
// returned delta is added once by the backbone (h + delta).
using AdapterHook = std::function<Tensor(const Tensor& h, int point)>;

struct BackboneForward {
  Tensor cls;                  // [B, D]
  std::vector<Tensor> hidden;  // pre-hook state per insertion point, [B, S, D]
};

// Single-stream encoder over a joint [CLS | image tokens | text tokens]
// sequence. After pretraining every parameter is frozen; adapters only ever
// contribute through the hook.
struct Backbone {
  BackboneConfig cfg;

  Tensor cls_embed;   // [1, D]
  Tensor img_embed;   // [V_img, D]
  Tensor txt_embed;   // [V_txt, D]
  Tensor pos_embed;   // [S, D]
  Tensor type_embed;  // [3, D]: cls, image, text

  struct Block {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
  };
  std::vector<Block> blocks;
  Tensor lnf_g, lnf_b;
  bool frozen = false;

  static Backbone init(const BackboneConfig& cfg, uint64_t seed);

  std::vector<Tensor> parameters() const;
  void set_frozen(bool on);
  uint64_t checksum() const { return params_checksum(parameters()); }
  Backbone clone() const;

  BackboneForward forward(const SampleBatch& batch, const AdapterHook* hook = nullptr) const;
};

struct TaskDataset;  // taskgen

// Trains a fresh backbone plus a throwaway classifier on a multi-modal base
// task, then freezes it. epochs == 0 yields a frozen random backbone.
Backbone pretrain_base(const BackboneConfig& cfg, const TaskDataset& base_task, int epochs,
                       uint64_t seed);

}  // namespace cle
