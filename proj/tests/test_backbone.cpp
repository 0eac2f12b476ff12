#include <doctest.h>

#include <cstring>

#include "cle/backbone.hpp"
#include "cle/rng.hpp"
#include "cle/taskgen.hpp"

using namespace cle;

namespace {

BackboneConfig micro_config() {
  BackboneConfig cfg;
  cfg.model_dim = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.seq_img = 3;
  cfg.seq_txt = 3;
  cfg.vocab_img = 24;
  cfg.vocab_txt = 24;
  return cfg;
}

SampleBatch random_batch(const BackboneConfig& cfg, int b, uint64_t seed,
                         StreamMask mask = StreamMask::kMultiModal) {
  Rng rng(seed);
  SampleBatch batch;
  batch.batch = b;
  batch.mask = mask;
  for (int i = 0; i < b * cfg.seq_img; ++i) {
    batch.img_tokens.push_back(mask == StreamMask::kTextOnly ? kPadCode
                                                             : 1 + rng.below(cfg.vocab_img - 1));
  }
  for (int i = 0; i < b * cfg.seq_txt; ++i) {
    batch.txt_tokens.push_back(mask == StreamMask::kImageOnly ? kPadCode
                                                              : 1 + rng.below(cfg.vocab_txt - 1));
  }
  for (int i = 0; i < b; ++i) batch.labels.push_back(rng.below(4));
  return batch;
}

}  // namespace

TEST_SUITE_BEGIN("backbone");

TEST_CASE("config validation") {
  BackboneConfig cfg = micro_config();
  cfg.heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(Backbone::init(cfg, 1), std::invalid_argument);
  cfg = micro_config();
  cfg.layers = 0;
  CHECK_THROWS_AS(Backbone::init(cfg, 1), std::invalid_argument);
  cfg = micro_config();
  CHECK(cfg.seq_len() == 7);
  CHECK(cfg.insertion_points() == 4);
}

TEST_CASE("same seed gives identical parameters") {
  const BackboneConfig cfg = micro_config();
  Backbone a = Backbone::init(cfg, 99);
  Backbone b = Backbone::init(cfg, 99);
  CHECK(a.checksum() == b.checksum());
  Backbone c = Backbone::init(cfg, 100);
  CHECK(a.checksum() != c.checksum());
}

TEST_CASE("forward returns hidden state per insertion point") {
  const BackboneConfig cfg = micro_config();
  Backbone bb = Backbone::init(cfg, 3);
  SampleBatch batch = random_batch(cfg, 4, 5);
  BackboneForward out = bb.forward(batch);
  CHECK(static_cast<int>(out.hidden.size()) == cfg.insertion_points());
  CHECK(out.cls.shape() == std::vector<int>{4, cfg.model_dim});
  for (const Tensor& h : out.hidden) {
    CHECK(h.shape() == std::vector<int>{4, cfg.seq_len(), cfg.model_dim});
  }
}

TEST_CASE("hook returning zeros reproduces the no-hook output exactly") {
  const BackboneConfig cfg = micro_config();
  Backbone bb = Backbone::init(cfg, 3);
  SampleBatch batch = random_batch(cfg, 4, 5);
  BackboneForward plain = bb.forward(batch);
  AdapterHook zero_hook = [](const Tensor& h, int) { return Tensor::zeros(h.shape()); };
  BackboneForward hooked = bb.forward(batch, &zero_hook);
  REQUIRE(plain.cls.size() == hooked.cls.size());
  for (long long i = 0; i < plain.cls.size(); ++i) {
    CHECK(std::abs(plain.cls.values()[static_cast<size_t>(i)] -
                   hooked.cls.values()[static_cast<size_t>(i)]) <= 1e-12);
  }
}

TEST_CASE("hooks see the pre-hook hidden state and shape mismatches throw") {
  const BackboneConfig cfg = micro_config();
  Backbone bb = Backbone::init(cfg, 3);
  SampleBatch batch = random_batch(cfg, 2, 5);
  int calls = 0;
  AdapterHook counting = [&](const Tensor& h, int point) {
    CHECK(point == calls);
    ++calls;
    return Tensor::zeros(h.shape());
  };
  bb.forward(batch, &counting);
  CHECK(calls == cfg.insertion_points());

  AdapterHook bad = [](const Tensor&, int) { return Tensor::zeros({1, 1, 1}); };
  CHECK_THROWS_AS(bb.forward(batch, &bad), std::invalid_argument);
}

TEST_CASE("permuting the batch permutes outputs with no cross-sample leakage") {
  const BackboneConfig cfg = micro_config();
  Backbone bb = Backbone::init(cfg, 3);
  SampleBatch batch = random_batch(cfg, 5, 17);
  BackboneForward out = bb.forward(batch);

  // reverse the sample order
  SampleBatch rev;
  rev.batch = batch.batch;
  rev.mask = batch.mask;
  for (int i = batch.batch - 1; i >= 0; --i) {
    rev.img_tokens.insert(rev.img_tokens.end(),
                          batch.img_tokens.begin() + i * cfg.seq_img,
                          batch.img_tokens.begin() + (i + 1) * cfg.seq_img);
    rev.txt_tokens.insert(rev.txt_tokens.end(),
                          batch.txt_tokens.begin() + i * cfg.seq_txt,
                          batch.txt_tokens.begin() + (i + 1) * cfg.seq_txt);
    rev.labels.push_back(batch.labels[static_cast<size_t>(i)]);
  }
  BackboneForward out_rev = bb.forward(rev);
  const int d = cfg.model_dim;
  for (int i = 0; i < batch.batch; ++i) {
    for (int j = 0; j < d; ++j) {
      CHECK(out.cls.values()[static_cast<size_t>(i * d + j)] ==
            out_rev.cls.values()[static_cast<size_t>((batch.batch - 1 - i) * d + j)]);
    }
  }
}

TEST_CASE("single-modality batches keep the output shape") {
  const BackboneConfig cfg = micro_config();
  Backbone bb = Backbone::init(cfg, 3);
  for (StreamMask mask : {StreamMask::kImageOnly, StreamMask::kTextOnly}) {
    SampleBatch batch = random_batch(cfg, 3, 9, mask);
    BackboneForward out = bb.forward(batch);
    CHECK(out.cls.shape() == std::vector<int>{3, cfg.model_dim});
  }
}

TEST_CASE("batch shape mismatches throw") {
  const BackboneConfig cfg = micro_config();
  Backbone bb = Backbone::init(cfg, 3);
  SampleBatch batch = random_batch(cfg, 2, 5);
  batch.img_tokens.pop_back();
  CHECK_THROWS_AS(bb.forward(batch), std::invalid_argument);
}

TEST_CASE("pretraining freezes the backbone and is reproducible") {
  BackboneConfig cfg = micro_config();
  TaskFactory factory(cfg, 11);
  const int fi = factory.add_factor("fi", 0);
  const int ft = factory.add_factor("ft", 1);
  TaskSpec spec;
  spec.name = "mini_base";
  spec.kind = TaskKind::kMultiModal;
  spec.classes = 4;
  spec.factor_ids = {fi, ft};
  spec.train_n = 256;
  spec.val_n = 32;
  spec.test_n = 64;
  spec.signal_tokens = 2;
  spec.seed = 21;
  TaskDataset base = factory.make_task(spec);

  Backbone bb = pretrain_base(cfg, base, 8, 4);
  CHECK(bb.frozen);
  for (const Tensor& p : bb.parameters()) CHECK_FALSE(p.requires_grad());

  // deterministic: the same seed gives bit-identical parameters
  Backbone bb2 = pretrain_base(cfg, base, 8, 4);
  CHECK(bb.checksum() == bb2.checksum());

  // epochs == 0 keeps the random initialization, frozen
  Backbone rnd = pretrain_base(cfg, base, 0, 4);
  CHECK(rnd.frozen);
  CHECK(rnd.checksum() == [&] {
    Backbone fresh = Backbone::init(cfg, 4);
    return fresh.checksum();
  }());
}

TEST_CASE("pretraining rejects a uni-modal base task") {
  BackboneConfig cfg = micro_config();
  TaskFactory factory(cfg, 11);
  const int ft = factory.add_factor("ft", 1);
  TaskSpec spec;
  spec.kind = TaskKind::kTextOnly;
  spec.classes = 2;
  spec.factor_ids = {ft};
  spec.train_n = 64;
  spec.val_n = 16;
  spec.test_n = 16;
  spec.seed = 3;
  TaskDataset task = factory.make_task(spec);
  CHECK_THROWS_AS(pretrain_base(cfg, task, 1, 4), std::invalid_argument);
}

TEST_SUITE_END();
