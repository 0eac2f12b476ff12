#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "cle/rng.hpp"
#include "cle/taskgen.hpp"

using namespace cle;

namespace {

BackboneConfig small_config() {
  BackboneConfig cfg;
  cfg.model_dim = 16;
  cfg.heads = 2;
  cfg.seq_img = 6;
  cfg.seq_txt = 6;
  cfg.vocab_img = 64;
  cfg.vocab_txt = 64;
  return cfg;
}

TaskSpec small_spec(const TaskFactory&, std::vector<int> factors, TaskKind kind,
                    uint64_t seed) {
  TaskSpec spec;
  spec.name = "t";
  spec.kind = kind;
  spec.classes = 4;
  spec.factor_ids = std::move(factors);
  spec.train_n = 240;
  spec.val_n = 60;
  spec.test_n = 80;
  spec.seed = seed;
  return spec;
}

uint64_t hash_sample(const Sample& s) {
  uint64_t h = 1469598103934665603ULL;
  for (int c : s.img) h = splitmix64(h ^ static_cast<uint64_t>(c + 1));
  h = splitmix64(h ^ 0xabcdULL);
  for (int c : s.txt) h = splitmix64(h ^ static_cast<uint64_t>(c + 1));
  return h;
}

}  // namespace

TEST_SUITE_BEGIN("taskgen");

TEST_CASE("generation is deterministic and label-consistent with the rule") {
  BackboneConfig cfg = small_config();
  TaskFactory factory(cfg, 5);
  const int a = factory.add_factor("a", 0);
  const int b = factory.add_factor("b", 1);
  TaskSpec spec = small_spec(factory, {a, b}, TaskKind::kMultiModal, 77);
  TaskDataset ds1 = factory.make_task(spec);
  TaskDataset ds2 = factory.make_task(spec);

  std::ostringstream o1, o2;
  export_dataset(ds1, o1);
  export_dataset(ds2, o2);
  CHECK(o1.str() == o2.str());

  // Bayes accuracy of the planted rule is 100% on every split
  for (Split sp : {Split::kTrain, Split::kVal, Split::kTest}) {
    for (const Sample& s : ds1.split(sp)) {
      CHECK(factory.rule_label(s, spec.factor_ids) == s.label);
    }
  }
}

TEST_CASE("splits are disjoint and class-balanced") {
  BackboneConfig cfg = small_config();
  TaskFactory factory(cfg, 6);
  const int a = factory.add_factor("a", 0);
  const int b = factory.add_factor("b", 1);
  TaskDataset ds = factory.make_task(small_spec(factory, {a, b}, TaskKind::kMultiModal, 78));

  std::set<uint64_t> seen;
  for (Split sp : {Split::kTrain, Split::kVal, Split::kTest}) {
    for (const Sample& s : ds.split(sp)) CHECK(seen.insert(hash_sample(s)).second);
  }
  for (Split sp : {Split::kTrain, Split::kVal, Split::kTest}) {
    std::vector<int> counts(4, 0);
    for (const Sample& s : ds.split(sp)) ++counts[static_cast<size_t>(s.label)];
    const int n = static_cast<int>(ds.split(sp).size());
    for (int c : counts) {
      CHECK(std::abs(c - n / 4) <= std::max(1, n / 40));  // within 10%
    }
  }
}

TEST_CASE("uni-modal tasks pad the absent stream") {
  BackboneConfig cfg = small_config();
  TaskFactory factory(cfg, 7);
  const int t1 = factory.add_factor("t1", 1);
  const int t2 = factory.add_factor("t2", 1);
  TaskDataset ds = factory.make_task(small_spec(factory, {t1, t2}, TaskKind::kTextOnly, 79));
  CHECK(ds.mask == StreamMask::kTextOnly);
  for (const Sample& s : ds.train) {
    for (int c : s.img) CHECK(c == kPadCode);
    for (int c : s.txt) CHECK(c != kPadCode);
  }
}

TEST_CASE("invalid specs are rejected") {
  BackboneConfig cfg = small_config();
  TaskFactory factory(cfg, 8);
  const int a = factory.add_factor("a", 0);
  TaskSpec spec = small_spec(factory, {a, 99}, TaskKind::kMultiModal, 80);
  CHECK_THROWS_AS(factory.make_task(spec), std::invalid_argument);  // unknown factor

  TaskSpec wrong_kind = small_spec(factory, {a, a}, TaskKind::kTextOnly, 81);
  CHECK_THROWS_AS(factory.make_task(wrong_kind), std::invalid_argument);  // image factor, text task

  TaskSpec bad_classes = small_spec(factory, {a}, TaskKind::kImageOnly, 82);
  bad_classes.classes = 3;
  CHECK_THROWS_AS(factory.make_task(bad_classes), std::invalid_argument);  // not a power of two
}

TEST_CASE("label noise flips roughly the requested fraction of train labels") {
  BackboneConfig cfg = small_config();
  TaskFactory factory(cfg, 9);
  const int a = factory.add_factor("a", 0);
  const int b = factory.add_factor("b", 1);
  TaskSpec spec = small_spec(factory, {a, b}, TaskKind::kMultiModal, 83);
  spec.train_n = 600;
  spec.label_noise = 0.3;
  TaskDataset ds = factory.make_task(spec);
  int flipped = 0;
  for (const Sample& s : ds.train) {
    if (factory.rule_label(s, spec.factor_ids) != s.label) ++flipped;
  }
  CHECK(flipped > 120);
  CHECK(flipped < 240);
  // test split stays clean
  for (const Sample& s : ds.test) CHECK(factory.rule_label(s, spec.factor_ids) == s.label);
}

TEST_CASE("low-shot subsampling is exactly stratified") {
  BackboneConfig cfg = small_config();
  TaskFactory factory(cfg, 10);
  const int a = factory.add_factor("a", 0);
  const int b = factory.add_factor("b", 1);
  TaskDataset ds = factory.make_task(small_spec(factory, {a, b}, TaskKind::kMultiModal, 84));

  TaskDataset low = subsample_lowshot(ds, 32, 5);
  CHECK(static_cast<int>(low.train.size()) == 128);
  std::vector<int> counts(4, 0);
  for (const Sample& s : low.train) ++counts[static_cast<size_t>(s.label)];
  for (int c : counts) CHECK(c == 32);
  CHECK(low.val.size() == ds.val.size());
  CHECK(low.test.size() == ds.test.size());

  TaskDataset one = subsample_lowshot(ds, 1, 5);
  CHECK(static_cast<int>(one.train.size()) == 4);

  // the full count reproduces the train split unchanged
  TaskDataset full = subsample_lowshot(ds, 60, 5);
  REQUIRE(full.train.size() == ds.train.size());
  for (size_t i = 0; i < full.train.size(); ++i) {
    CHECK(full.train[i].label == ds.train[i].label);
    CHECK(full.train[i].img == ds.train[i].img);
    CHECK(full.train[i].txt == ds.train[i].txt);
  }

  CHECK_THROWS_AS(subsample_lowshot(ds, 1000, 5), std::invalid_argument);
}

TEST_CASE("export and import round-trip byte-exactly") {
  BackboneConfig cfg = small_config();
  TaskFactory factory(cfg, 11);
  const int a = factory.add_factor("a", 0);
  const int b = factory.add_factor("b", 1);
  TaskDataset ds = factory.make_task(small_spec(factory, {a, b}, TaskKind::kMultiModal, 85));

  std::ostringstream first;
  export_dataset(ds, first);
  std::istringstream in(first.str());
  TaskDataset loaded = import_dataset(in);
  std::ostringstream second;
  export_dataset(loaded, second);
  CHECK(first.str() == second.str());

  std::istringstream corrupt("CLEDATA 2\n");
  CHECK_THROWS_AS(import_dataset(corrupt), std::runtime_error);
}

TEST_CASE("fresh factors stay nearly orthogonal to every earlier factor") {
  BackboneConfig cfg;
  Suite suite = default_suite(cfg, 31);
  const int n = suite.factory.factor_count();
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Factor& a = suite.factory.factor(i);
      const Factor& b = suite.factory.factor(j);
      double dot = 0;
      for (size_t z = 0; z < a.dir.size(); ++z) dot += a.dir[z] * b.dir[z];
      CHECK(std::abs(dot) <= 0.1 + 1e-12);
    }
  }
}

TEST_CASE("declared overlap is real: planted projections separate the composed task") {
  // logistic-probe oracle over the two reused factor projections
  BackboneConfig cfg;
  Suite suite = default_suite(cfg, 32);
  const TaskSpec& spec = suite.downstream[0];  // reuses factors of tasks 0 and 1
  REQUIRE(spec.overlap_tasks == std::vector<int>{0, 1});
  TaskDataset ds = suite.factory.make_task(spec);

  // features: mean planted projection per rule factor
  auto features = [&](const Sample& s) {
    std::vector<double> f;
    for (int id : spec.factor_ids) {
      const Factor& fac = suite.factory.factor(id);
      f.push_back(suite.factory.planted_projection(fac.modality == 0 ? s.img : s.txt, id));
    }
    f.push_back(1.0);
    return f;
  };

  // multinomial logistic regression, plain gradient descent
  const int classes = spec.classes, dim = 3;
  std::vector<double> w(static_cast<size_t>(classes * dim), 0.0);
  for (int step = 0; step < 400; ++step) {
    std::vector<double> grad(w.size(), 0.0);
    for (const Sample& s : ds.train) {
      const auto f = features(s);
      std::vector<double> logits(static_cast<size_t>(classes), 0.0);
      double mx = -1e300;
      for (int c = 0; c < classes; ++c) {
        for (int j = 0; j < dim; ++j) {
          logits[static_cast<size_t>(c)] += w[static_cast<size_t>(c * dim + j)] * f[static_cast<size_t>(j)];
        }
        mx = std::max(mx, logits[static_cast<size_t>(c)]);
      }
      double z = 0;
      for (int c = 0; c < classes; ++c) z += std::exp(logits[static_cast<size_t>(c)] - mx);
      for (int c = 0; c < classes; ++c) {
        const double p = std::exp(logits[static_cast<size_t>(c)] - mx) / z;
        const double delta = p - (c == s.label ? 1.0 : 0.0);
        for (int j = 0; j < dim; ++j) {
          grad[static_cast<size_t>(c * dim + j)] += delta * f[static_cast<size_t>(j)];
        }
      }
    }
    for (size_t i = 0; i < w.size(); ++i) w[i] -= 2.0 * grad[i] / static_cast<double>(ds.train.size());
  }
  int correct = 0;
  for (const Sample& s : ds.test) {
    const auto f = features(s);
    int best = 0;
    double best_v = -1e300;
    for (int c = 0; c < classes; ++c) {
      double v = 0;
      for (int j = 0; j < dim; ++j) v += w[static_cast<size_t>(c * dim + j)] * f[static_cast<size_t>(j)];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    if (best == s.label) ++correct;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(ds.test.size()) >= 0.95);
}

TEST_CASE("order permutations") {
  auto id = order_permutation("multi-first", 5);
  CHECK(id == std::vector<int>{0, 1, 2, 3, 4});
  auto uni = order_permutation("uni-first", 5);
  CHECK(uni == std::vector<int>{1, 0, 3, 2, 4});
  auto custom = order_permutation("custom:4,3,2,1,0", 5);
  CHECK(custom == std::vector<int>{4, 3, 2, 1, 0});
  CHECK_THROWS_AS(order_permutation("custom:0,0,1,2,3", 5), std::invalid_argument);
  CHECK_THROWS_AS(order_permutation("nonsense", 5), std::invalid_argument);
  CHECK_THROWS_AS(order_permutation("uni-first", 4), std::invalid_argument);
}

TEST_SUITE_END();
