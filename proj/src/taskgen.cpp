#include "cle/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "cle/rng.hpp"

namespace cle {

StreamMask mask_of(TaskKind kind) {
  switch (kind) {
    case TaskKind::kMultiModal: return StreamMask::kMultiModal;
    case TaskKind::kImageOnly: return StreamMask::kImageOnly;
    case TaskKind::kTextOnly: return StreamMask::kTextOnly;
  }
  throw std::logic_error("mask_of: bad kind");
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kMultiModal: return "multimodal";
    case TaskKind::kImageOnly: return "image_only";
    case TaskKind::kTextOnly: return "text_only";
  }
  throw std::logic_error("to_string: bad kind");
}

TaskKind task_kind_from(const std::string& s) {
  if (s == "multimodal") return TaskKind::kMultiModal;
  if (s == "image_only") return TaskKind::kImageOnly;
  if (s == "text_only") return TaskKind::kTextOnly;
  throw std::invalid_argument("unknown task kind: " + s);
}

const std::vector<Sample>& TaskDataset::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  throw std::logic_error("split: bad selector");
}

SampleBatch make_batch(const TaskDataset& ds, std::span<const int> idx, Split split) {
  const std::vector<Sample>& rows = ds.split(split);
  SampleBatch batch;
  batch.batch = static_cast<int>(idx.size());
  batch.mask = ds.mask;
  for (int i : idx) {
    const Sample& s = rows.at(static_cast<size_t>(i));
    batch.img_tokens.insert(batch.img_tokens.end(), s.img.begin(), s.img.end());
    batch.txt_tokens.insert(batch.txt_tokens.end(), s.txt.begin(), s.txt.end());
    batch.labels.push_back(s.label);
  }
  return batch;
}

namespace {

int bits_for(int classes) {
  if (classes < 2) throw std::invalid_argument("task: need at least two classes");
  int bits = 0;
  while ((1 << bits) < classes) ++bits;
  if ((1 << bits) != classes) {
    throw std::invalid_argument("task: class count must be a power of two, got " +
                                std::to_string(classes));
  }
  return bits;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

uint64_t sample_hash(const Sample& s) {
  uint64_t h = 0x9e3779b97f4a7c15ULL;
  auto mix = [&h](int v) { h = splitmix64(h ^ static_cast<uint64_t>(v + 1)); };
  for (int c : s.img) mix(c);
  mix(-7);
  for (int c : s.txt) mix(c);
  return h;
}

}  // namespace

TaskFactory::TaskFactory(const BackboneConfig& cfg, uint64_t master_seed, SuiteConfig sc)
    : cfg_(cfg), sc_(sc), master_seed_(master_seed) {
  Rng rng(derive_seed(master_seed, "code-features"));
  const int vocab[2] = {cfg.vocab_img, cfg.vocab_txt};
  for (int m = 0; m < 2; ++m) {
    code_feat_[m].resize(static_cast<size_t>(vocab[m]));
    for (int c = 0; c < vocab[m]; ++c) {
      auto& row = code_feat_[m][static_cast<size_t>(c)];
      row.assign(static_cast<size_t>(sc_.code_features), 0.0);
      if (c == kPadCode) continue;  // PAD carries no planted signal
      for (double& v : row) v = rng.normal();
    }
  }
}

int TaskFactory::add_factor(const std::string& name, int modality, int band_lo, int band_hi) {
  if (modality != 0 && modality != 1) throw std::invalid_argument("add_factor: modality must be 0 or 1");
  const int vocab = modality == 0 ? cfg_.vocab_img : cfg_.vocab_txt;
  if (band_hi < band_lo) {
    band_lo = 1;
    band_hi = vocab - 1;
  }
  if (band_lo < 1 || band_hi >= vocab || band_hi - band_lo + 1 < 4) {
    throw std::invalid_argument("add_factor: band [" + std::to_string(band_lo) + ", " +
                                std::to_string(band_hi) + "] invalid for vocabulary of " +
                                std::to_string(vocab));
  }
  Rng rng(derive_seed(master_seed_, "factor", static_cast<uint64_t>(factors_.size())));
  std::vector<double> dir;
  for (int attempt = 0; attempt < 256; ++attempt) {
    dir = rng.unit_vector(sc_.code_features);
    // deflate against earlier factors until the overlap bound holds
    for (int pass = 0; pass < 4; ++pass) {
      bool ok = true;
      for (const Factor& f : factors_) {
        const double c = dot(dir, f.dir);
        if (std::abs(c) > sc_.max_overlap_cos * 0.8) {
          for (size_t i = 0; i < dir.size(); ++i) dir[i] -= c * f.dir[i];
          ok = false;
        }
      }
      double n2 = dot(dir, dir);
      if (n2 < 1e-9) break;  // degenerate; redraw
      const double inv = 1.0 / std::sqrt(n2);
      for (double& v : dir) v *= inv;
      if (ok) break;
    }
    bool accept = true;
    for (const Factor& f : factors_) {
      if (std::abs(dot(dir, f.dir)) > sc_.max_overlap_cos) accept = false;
    }
    if (!accept) continue;

    // the band must carry clearly signed codes on both sides
    constexpr double kPoolMargin = 0.3;
    const auto& table = code_feat_[modality];
    std::vector<std::pair<double, int>> proj;
    for (int c = band_lo; c <= band_hi; ++c) {
      proj.emplace_back(dot(table[static_cast<size_t>(c)], dir), c);
    }
    std::sort(proj.begin(), proj.end());
    const int pool = std::max(2, static_cast<int>(proj.size() * sc_.pool_fraction));
    std::vector<int> neg, pos;
    for (const auto& [p, c] : proj) {
      if (p < -kPoolMargin && static_cast<int>(neg.size()) < pool) neg.push_back(c);
    }
    for (auto it = proj.rbegin(); it != proj.rend(); ++it) {
      if (it->first > kPoolMargin && static_cast<int>(pos.size()) < pool) pos.push_back(it->second);
    }
    if (static_cast<int>(neg.size()) < 2 || static_cast<int>(pos.size()) < 2) continue;

    factors_.push_back(Factor{name, modality, band_lo, band_hi, dir});
    pos_pool_.push_back(std::move(pos));
    neg_pool_.push_back(std::move(neg));
    return factor_count() - 1;
  }
  throw std::runtime_error("add_factor: could not place a near-orthogonal direction");
}

const Factor& TaskFactory::factor(int id) const {
  if (id < 0 || id >= factor_count()) {
    throw std::invalid_argument("factor: unknown factor id " + std::to_string(id));
  }
  return factors_[static_cast<size_t>(id)];
}

double TaskFactory::planted_projection(const std::vector<int>& stream_codes, int factor_id) const {
  const Factor& f = factor(factor_id);
  const auto& table = code_feat_[f.modality];
  double s = 0;
  for (int c : stream_codes) s += dot(table.at(static_cast<size_t>(c)), f.dir);
  return s / static_cast<double>(stream_codes.size());
}

int TaskFactory::rule_label(const Sample& sample, const std::vector<int>& factor_ids) const {
  int label = 0;
  for (size_t j = 0; j < factor_ids.size(); ++j) {
    const Factor& f = factor(factor_ids[j]);
    const std::vector<int>& stream = f.modality == 0 ? sample.img : sample.txt;
    if (planted_projection(stream, factor_ids[j]) > 0) label |= 1 << j;
  }
  return label;
}

Sample TaskFactory::generate_sample(const TaskSpec& spec, int label, Rng& rng) const {
  const bool has_img = spec.kind != TaskKind::kTextOnly;
  const bool has_txt = spec.kind != TaskKind::kImageOnly;
  Sample s;
  s.label = label;
  s.img.assign(static_cast<size_t>(cfg_.seq_img), kPadCode);
  s.txt.assign(static_cast<size_t>(cfg_.seq_txt), kPadCode);

  std::vector<int> img_factors, txt_factors, img_bits, txt_bits;
  for (size_t j = 0; j < spec.factor_ids.size(); ++j) {
    const Factor& f = factor(spec.factor_ids[j]);
    if (f.modality == 0) {
      img_factors.push_back(spec.factor_ids[j]);
      img_bits.push_back((label >> j) & 1);
    } else {
      txt_factors.push_back(spec.factor_ids[j]);
      txt_bits.push_back((label >> j) & 1);
    }
  }

  const int signal = spec.signal_tokens > 0 ? spec.signal_tokens : sc_.signal_tokens;
  auto fill_stream = [&](std::vector<int>& stream, int vocab, const std::vector<int>& facs,
                         const std::vector<int>& bits) {
    const int seq = static_cast<int>(stream.size());
    // fillers come from the union of the stream's factor bands
    std::vector<int> filler;
    if (facs.empty()) {
      for (int c = 1; c < vocab; ++c) filler.push_back(c);
    } else {
      for (int id : facs) {
        const Factor& f = factors_[static_cast<size_t>(id)];
        for (int c = f.band_lo; c <= f.band_hi; ++c) filler.push_back(c);
      }
      std::sort(filler.begin(), filler.end());
      filler.erase(std::unique(filler.begin(), filler.end()), filler.end());
    }
    for (int i = 0; i < seq; ++i) {
      stream[static_cast<size_t>(i)] = filler[static_cast<size_t>(rng.below(static_cast<int>(filler.size())))];
    }
    if (signal == TaskSpec::kNoPlacement) return;
    std::vector<int> positions(static_cast<size_t>(seq));
    for (int i = 0; i < seq; ++i) positions[static_cast<size_t>(i)] = i;
    rng.shuffle(positions);
    int at = 0;
    for (size_t j = 0; j < facs.size(); ++j) {
      const auto& pool = bits[j] ? pos_pool_[static_cast<size_t>(facs[j])]
                                 : neg_pool_[static_cast<size_t>(facs[j])];
      for (int t = 0; t < signal && at < seq; ++t, ++at) {
        stream[static_cast<size_t>(positions[static_cast<size_t>(at)])] =
            pool[static_cast<size_t>(rng.below(static_cast<int>(pool.size())))];
      }
    }
  };

  const int max_attempts = signal == TaskSpec::kNoPlacement ? 5000 : 500;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    if (has_img) fill_stream(s.img, cfg_.vocab_img, img_factors, img_bits);
    if (has_txt) fill_stream(s.txt, cfg_.vocab_txt, txt_factors, txt_bits);
    bool ok = true;
    for (size_t j = 0; j < spec.factor_ids.size(); ++j) {
      const Factor& f = factor(spec.factor_ids[j]);
      const std::vector<int>& stream = f.modality == 0 ? s.img : s.txt;
      const double v = planted_projection(stream, spec.factor_ids[j]);
      const int want = (label >> j) & 1;
      if ((v > 0 ? 1 : 0) != want || v == 0) ok = false;
    }
    if (ok) return s;
  }
  throw std::runtime_error("make_task: could not realize the planted rule; factors too weak");
}

TaskDataset TaskFactory::make_task(const TaskSpec& spec) const {
  const int bits = bits_for(spec.classes);
  if (static_cast<int>(spec.factor_ids.size()) != bits) {
    throw std::invalid_argument("make_task: " + std::to_string(spec.classes) + " classes need " +
                                std::to_string(bits) + " factors, got " +
                                std::to_string(spec.factor_ids.size()));
  }
  for (int id : spec.factor_ids) {
    const Factor& f = factor(id);  // throws on unknown ids
    if (f.modality == 0 && spec.kind == TaskKind::kTextOnly) {
      throw std::invalid_argument("make_task: image factor in a text-only task");
    }
    if (f.modality == 1 && spec.kind == TaskKind::kImageOnly) {
      throw std::invalid_argument("make_task: text factor in an image-only task");
    }
  }

  TaskDataset ds;
  ds.spec = spec;
  ds.mask = mask_of(spec.kind);
  Rng rng(derive_seed(spec.seed, "task-data"));
  std::unordered_set<uint64_t> seen;

  auto fill_split = [&](std::vector<Sample>& out, int n) {
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const int label = i % spec.classes;  // exact class balance
      for (int tries = 0;; ++tries) {
        Sample s = generate_sample(spec, label, rng);
        if (seen.insert(sample_hash(s)).second) {
          out.push_back(std::move(s));
          break;
        }
        if (tries > 200) throw std::runtime_error("make_task: cannot generate distinct samples");
      }
    }
    rng.shuffle(out);
  };
  fill_split(ds.train, spec.train_n);
  fill_split(ds.val, spec.val_n);
  fill_split(ds.test, spec.test_n);

  if (spec.label_noise > 0) {
    for (Sample& s : ds.train) {
      if (rng.uniform() < spec.label_noise) {
        const int shift = 1 + rng.below(spec.classes - 1);
        s.label = (s.label + shift) % spec.classes;
      }
    }
  }
  return ds;
}

TaskDataset subsample_lowshot(const TaskDataset& ds, int n_per_class, uint64_t seed) {
  std::vector<std::vector<int>> by_class(static_cast<size_t>(ds.spec.classes));
  for (size_t i = 0; i < ds.train.size(); ++i) {
    by_class[static_cast<size_t>(ds.train[i].label)].push_back(static_cast<int>(i));
  }
  Rng rng(derive_seed(seed, "lowshot"));
  std::vector<int> chosen;
  for (auto& idx : by_class) {
    if (static_cast<int>(idx.size()) < n_per_class) {
      throw std::invalid_argument("subsample_lowshot: class has only " +
                                  std::to_string(idx.size()) + " samples, need " +
                                  std::to_string(n_per_class));
    }
    rng.shuffle(idx);
    idx.resize(static_cast<size_t>(n_per_class));
    chosen.insert(chosen.end(), idx.begin(), idx.end());
  }
  std::sort(chosen.begin(), chosen.end());  // original order, so n == full is the identity
  TaskDataset out;
  out.spec = ds.spec;
  out.spec.train_n = static_cast<int>(chosen.size());
  out.mask = ds.mask;
  for (int i : chosen) out.train.push_back(ds.train[static_cast<size_t>(i)]);
  out.val = ds.val;
  out.test = ds.test;
  return out;
}

namespace {

void write_codes(std::ostream& out, const std::vector<int>& codes) {
  for (size_t i = 0; i < codes.size(); ++i) out << (i ? " " : "") << codes[i];
}

std::vector<int> read_codes(const std::string& text) {
  std::istringstream is(text);
  std::vector<int> out;
  int v;
  while (is >> v) out.push_back(v);
  return out;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

}  // namespace

void export_dataset(const TaskDataset& ds, std::ostream& out) {
  out << "CLEDATA 1\n";
  out << "name " << ds.spec.name << "\n";
  out << "kind " << to_string(ds.spec.kind) << "\n";
  out << "classes " << ds.spec.classes << "\n";
  out << "factor_ids";
  for (int f : ds.spec.factor_ids) out << " " << f;
  out << "\n";
  out << "overlap_tasks";
  for (int t : ds.spec.overlap_tasks) out << " " << t;
  out << "\n";
  out << "counts " << ds.spec.train_n << " " << ds.spec.val_n << " " << ds.spec.test_n << "\n";
  out << "signal_tokens " << ds.spec.signal_tokens << "\n";
  char noise[64];
  std::snprintf(noise, sizeof noise, "%.17g", ds.spec.label_noise);
  out << "label_noise " << noise << "\n";
  out << "seed " << ds.spec.seed << "\n";
  for (Split sp : {Split::kTrain, Split::kVal, Split::kTest}) {
    for (const Sample& s : ds.split(sp)) {
      out << split_name(sp) << " ";
      write_codes(out, s.img);
      out << " | ";
      write_codes(out, s.txt);
      out << " | " << static_cast<int>(ds.mask) << " | " << s.label << "\n";
    }
  }
  out << "end\n";
}

TaskDataset import_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "CLEDATA 1") {
    throw std::runtime_error("import_dataset: bad magic");
  }
  TaskDataset ds;
  auto expect_key = [&](const std::string& key) {
    if (!std::getline(in, line) || line.rfind(key + " ", 0) != 0) {
      if (line != key) throw std::runtime_error("import_dataset: expected " + key);
    }
    return line.size() > key.size() ? line.substr(key.size() + 1) : std::string();
  };
  ds.spec.name = expect_key("name");
  ds.spec.kind = task_kind_from(expect_key("kind"));
  ds.spec.classes = std::stoi(expect_key("classes"));
  ds.spec.factor_ids = read_codes(expect_key("factor_ids"));
  ds.spec.overlap_tasks = read_codes(expect_key("overlap_tasks"));
  {
    auto counts = read_codes(expect_key("counts"));
    if (counts.size() != 3) throw std::runtime_error("import_dataset: bad counts");
    ds.spec.train_n = counts[0];
    ds.spec.val_n = counts[1];
    ds.spec.test_n = counts[2];
  }
  ds.spec.signal_tokens = std::stoi(expect_key("signal_tokens"));
  ds.spec.label_noise = std::stod(expect_key("label_noise"));
  ds.spec.seed = std::stoull(expect_key("seed"));
  ds.mask = mask_of(ds.spec.kind);
  while (std::getline(in, line)) {
    if (line == "end") return ds;
    std::istringstream is(line);
    std::string split_tag;
    is >> split_tag;
    std::string rest;
    std::getline(is, rest);
    std::vector<std::string> parts;
    size_t pos = 0;
    while (true) {
      const size_t bar = rest.find('|', pos);
      parts.push_back(rest.substr(pos, bar == std::string::npos ? bar : bar - pos));
      if (bar == std::string::npos) break;
      pos = bar + 1;
    }
    if (parts.size() != 4) throw std::runtime_error("import_dataset: bad row");
    Sample s;
    s.img = read_codes(parts[0]);
    s.txt = read_codes(parts[1]);
    s.label = std::stoi(parts[3]);
    if (split_tag == "train") {
      ds.train.push_back(std::move(s));
    } else if (split_tag == "val") {
      ds.val.push_back(std::move(s));
    } else if (split_tag == "test") {
      ds.test.push_back(std::move(s));
    } else {
      throw std::runtime_error("import_dataset: bad split tag " + split_tag);
    }
  }
  throw std::runtime_error("import_dataset: missing end marker");
}

Suite default_suite(const BackboneConfig& cfg, uint64_t seed, SuiteSizes sizes) {
  if (sizes.classes != 4) {
    throw std::invalid_argument("default_suite: the canonical suite uses 4 classes");
  }
  Suite suite{TaskFactory(cfg, seed), {}, {}, {}};
  TaskFactory& f = suite.factory;

  // disjoint vocabulary bands, one per upstream/downstream factor
  int cursor[2] = {1, 1};
  const int wide[2] = {(cfg.vocab_img - 1 - 4) / 5, (cfg.vocab_txt - 1 - 4) / 7};
  auto factor = [&](const std::string& name, int modality, int width) {
    const int lo = cursor[modality];
    const int hi = lo + width - 1;
    cursor[modality] = hi + 1;
    return f.add_factor(name, modality, lo, hi);
  };

  // base factors span the whole vocabulary; pretraining reads every code
  const int base_img = f.add_factor("base_img", 0);
  const int base_txt = f.add_factor("base_txt", 1);
  const int a = factor("A_img", 0, wide[0]), b = factor("B_txt", 1, wide[1]);  // task 0 (MM)
  const int c = factor("C_txt", 1, wide[1]), d = factor("D_txt", 1, wide[1]);  // task 1 (text)
  const int e = factor("E_img", 0, wide[0]), g = factor("F_img", 0, wide[0]);  // task 2 (image)
  const int h = factor("G_img", 0, wide[0]), i = factor("H_txt", 1, wide[1]);  // task 3 (MM)
  const int j = factor("I_txt", 1, wide[1]), k = factor("J_txt", 1, wide[1]);  // task 4 (text)
  // the no-overlap factors get tiny bands: few codes keep the task inside
  // what a linear readout of the frozen backbone can already represent
  const int x = factor("X_img", 0, 4), y = factor("Y_txt", 1, 4);

  auto spec = [&](const std::string& name, TaskKind kind, std::vector<int> factors,
                  std::vector<int> overlap, uint64_t tag) {
    TaskSpec t;
    t.name = name;
    t.kind = kind;
    t.classes = sizes.classes;
    t.factor_ids = std::move(factors);
    t.overlap_tasks = std::move(overlap);
    t.train_n = sizes.train_n;
    t.val_n = sizes.val_n;
    t.test_n = sizes.test_n;
    t.label_noise = sizes.label_noise;
    t.seed = derive_seed(seed, "task-seed", tag);
    return t;
  };

  suite.base = spec("base", TaskKind::kMultiModal, {base_img, base_txt}, {}, 100);
  suite.base.signal_tokens = TaskSpec::kNoPlacement;
  suite.upstream = {
      spec("up0_mm", TaskKind::kMultiModal, {a, b}, {}, 0),
      spec("up1_txt", TaskKind::kTextOnly, {c, d}, {}, 1),
      spec("up2_img", TaskKind::kImageOnly, {e, g}, {}, 2),
      spec("up3_mm", TaskKind::kMultiModal, {h, i}, {}, 3),
      spec("up4_txt", TaskKind::kTextOnly, {j, k}, {}, 4),
  };
  suite.downstream = {
      spec("down0_mm_reuse01", TaskKind::kMultiModal, {a, c}, {0, 1}, 10),
      spec("down1_mm_fresh", TaskKind::kMultiModal, {x, y}, {}, 11),
      spec("down2_txt_reuse14", TaskKind::kTextOnly, {d, j}, {1, 4}, 12),
      spec("down3_img_reuse2", TaskKind::kImageOnly, {e, g}, {2}, 13),
  };
  suite.downstream[1].signal_tokens = 8;  // saturated signal, see band note above
  return suite;
}

std::vector<int> order_permutation(const std::string& order, int n_tasks) {
  std::vector<int> perm;
  if (order == "multi-first") {
    for (int i = 0; i < n_tasks; ++i) perm.push_back(i);
  } else if (order == "uni-first") {
    perm = {1, 0, 3, 2, 4};
    if (n_tasks != 5) throw std::invalid_argument("order: uni-first needs the 5-task suite");
  } else if (order.rfind("custom:", 0) == 0) {
    std::istringstream is(order.substr(7));
    std::string tok;
    while (std::getline(is, tok, ',')) perm.push_back(std::stoi(tok));
  } else {
    throw std::invalid_argument("order: expected multi-first, uni-first or custom:<ids>");
  }
  std::vector<bool> used(static_cast<size_t>(n_tasks), false);
  if (static_cast<int>(perm.size()) != n_tasks) {
    throw std::invalid_argument("order: permutation size mismatch");
  }
  for (int p : perm) {
    if (p < 0 || p >= n_tasks || used[static_cast<size_t>(p)]) {
      throw std::invalid_argument("order: invalid permutation");
    }
    used[static_cast<size_t>(p)] = true;
  }
  return perm;
}

}  // namespace cle
