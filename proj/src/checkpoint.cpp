#include "cle/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cle {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

constexpr const char* kMagic = "CLECKPT 1";

uint64_t payload_checksum(const std::vector<double>& values) {
  uint64_t h = 0xcbf29ce484222325ULL;
  const auto* p = reinterpret_cast<const unsigned char*>(values.data());
  for (size_t i = 0; i < values.size() * sizeof(double); ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Writer {
  std::ostringstream header;
  std::vector<std::vector<double>> payloads;

  void meta(const std::string& key, const std::string& value) {
    header << "meta " << key << " " << value << "\n";
  }
  void meta(const std::string& key, long long value) { meta(key, std::to_string(value)); }
  void meta_f(const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    meta(key, std::string(buf));
  }

  void tensor(const std::string& name, const Tensor& t) {
    std::vector<double> values(t.values().begin(), t.values().end());
    header << "tensor " << name << " " << t.rank();
    for (int d : t.shape()) header << " " << d;
    char crc[32];
    std::snprintf(crc, sizeof crc, "%016llx",
                  static_cast<unsigned long long>(payload_checksum(values)));
    header << " " << crc << "\n";
    payloads.push_back(std::move(values));
  }

  void write(const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp);
      out << kMagic << "\n" << header.str() << "payload\n";
      for (const auto& p : payloads) {
        out.write(reinterpret_cast<const char*>(p.data()),
                  static_cast<std::streamsize>(p.size() * sizeof(double)));
      }
      if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }
};

struct Reader {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::map<std::string, size_t> index;

  explicit Reader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kMagic) {
      throw std::runtime_error("checkpoint: version mismatch or bad magic in " + path);
    }
    struct Pending {
      std::string name;
      std::vector<int> shape;
      uint64_t crc;
    };
    std::vector<Pending> pending;
    while (std::getline(in, line)) {
      if (line == "payload") break;
      std::istringstream is(line);
      std::string tag;
      is >> tag;
      if (tag == "meta") {
        std::string key;
        is >> key;
        std::string value;
        std::getline(is, value);
        if (!value.empty() && value.front() == ' ') value.erase(0, 1);
        meta[key] = value;
      } else if (tag == "tensor") {
        Pending p;
        int rank = 0;
        is >> p.name >> rank;
        p.shape.resize(static_cast<size_t>(rank));
        for (int& d : p.shape) is >> d;
        std::string crc;
        is >> crc;
        p.crc = std::stoull(crc, nullptr, 16);
        if (!is) throw std::runtime_error("checkpoint: malformed tensor line: " + line);
        pending.push_back(std::move(p));
      } else {
        throw std::runtime_error("checkpoint: unknown header line: " + line);
      }
    }
    for (const Pending& p : pending) {
      const long long count = shape_product(p.shape);
      std::vector<double> values(static_cast<size_t>(count));
      in.read(reinterpret_cast<char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
      if (!in) throw std::runtime_error("checkpoint: truncated payload for " + p.name);
      if (payload_checksum(values) != p.crc) {
        throw std::runtime_error("checkpoint: checksum mismatch for " + p.name);
      }
      std::vector<real> data(values.begin(), values.end());
      index[p.name] = tensors.size();
      tensors.emplace_back(p.name, Tensor::from(p.shape, std::move(data)));
    }
  }

  const std::string& meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw std::runtime_error("checkpoint: missing meta key " + key);
    return it->second;
  }
  long long meta_int(const std::string& key) const { return std::stoll(meta_at(key)); }
  double meta_double(const std::string& key) const { return std::stod(meta_at(key)); }

  Tensor tensor(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw std::runtime_error("checkpoint: missing tensor " + name);
    return tensors[it->second].second;
  }
};

void put_backbone(Writer& w, const Backbone& bb) {
  const BackboneConfig& c = bb.cfg;
  w.meta("backbone.model_dim", c.model_dim);
  w.meta("backbone.layers", c.layers);
  w.meta("backbone.heads", c.heads);
  w.meta("backbone.seq_img", c.seq_img);
  w.meta("backbone.seq_txt", c.seq_txt);
  w.meta("backbone.vocab_img", c.vocab_img);
  w.meta("backbone.vocab_txt", c.vocab_txt);
  w.meta("backbone.ffn_mult", c.ffn_mult);
  w.meta("backbone.frozen", bb.frozen ? 1 : 0);
  w.tensor("backbone.cls_embed", bb.cls_embed);
  w.tensor("backbone.img_embed", bb.img_embed);
  w.tensor("backbone.txt_embed", bb.txt_embed);
  w.tensor("backbone.pos_embed", bb.pos_embed);
  w.tensor("backbone.type_embed", bb.type_embed);
  for (size_t l = 0; l < bb.blocks.size(); ++l) {
    const Backbone::Block& blk = bb.blocks[l];
    const std::string p = "backbone.block" + std::to_string(l) + ".";
    w.tensor(p + "ln1_g", blk.ln1_g);
    w.tensor(p + "ln1_b", blk.ln1_b);
    w.tensor(p + "wq", blk.wq);
    w.tensor(p + "bq", blk.bq);
    w.tensor(p + "wk", blk.wk);
    w.tensor(p + "bk", blk.bk);
    w.tensor(p + "wv", blk.wv);
    w.tensor(p + "bv", blk.bv);
    w.tensor(p + "wo", blk.wo);
    w.tensor(p + "bo", blk.bo);
    w.tensor(p + "ln2_g", blk.ln2_g);
    w.tensor(p + "ln2_b", blk.ln2_b);
    w.tensor(p + "w1", blk.w1);
    w.tensor(p + "b1", blk.b1);
    w.tensor(p + "w2", blk.w2);
    w.tensor(p + "b2", blk.b2);
  }
  w.tensor("backbone.lnf_g", bb.lnf_g);
  w.tensor("backbone.lnf_b", bb.lnf_b);
}

Backbone get_backbone(const Reader& r) {
  BackboneConfig c;
  c.model_dim = static_cast<int>(r.meta_int("backbone.model_dim"));
  c.layers = static_cast<int>(r.meta_int("backbone.layers"));
  c.heads = static_cast<int>(r.meta_int("backbone.heads"));
  c.seq_img = static_cast<int>(r.meta_int("backbone.seq_img"));
  c.seq_txt = static_cast<int>(r.meta_int("backbone.seq_txt"));
  c.vocab_img = static_cast<int>(r.meta_int("backbone.vocab_img"));
  c.vocab_txt = static_cast<int>(r.meta_int("backbone.vocab_txt"));
  c.ffn_mult = static_cast<int>(r.meta_int("backbone.ffn_mult"));
  Backbone bb;
  bb.cfg = c;
  bb.cls_embed = r.tensor("backbone.cls_embed");
  bb.img_embed = r.tensor("backbone.img_embed");
  bb.txt_embed = r.tensor("backbone.txt_embed");
  bb.pos_embed = r.tensor("backbone.pos_embed");
  bb.type_embed = r.tensor("backbone.type_embed");
  for (int l = 0; l < c.layers; ++l) {
    const std::string p = "backbone.block" + std::to_string(l) + ".";
    Backbone::Block blk;
    blk.ln1_g = r.tensor(p + "ln1_g");
    blk.ln1_b = r.tensor(p + "ln1_b");
    blk.wq = r.tensor(p + "wq");
    blk.bq = r.tensor(p + "bq");
    blk.wk = r.tensor(p + "wk");
    blk.bk = r.tensor(p + "bk");
    blk.wv = r.tensor(p + "wv");
    blk.bv = r.tensor(p + "bv");
    blk.wo = r.tensor(p + "wo");
    blk.bo = r.tensor(p + "bo");
    blk.ln2_g = r.tensor(p + "ln2_g");
    blk.ln2_b = r.tensor(p + "ln2_b");
    blk.w1 = r.tensor(p + "w1");
    blk.b1 = r.tensor(p + "b1");
    blk.w2 = r.tensor(p + "w2");
    blk.b2 = r.tensor(p + "b2");
    bb.blocks.push_back(std::move(blk));
  }
  bb.lnf_g = r.tensor("backbone.lnf_g");
  bb.lnf_b = r.tensor("backbone.lnf_b");
  const bool frozen = r.meta_int("backbone.frozen") != 0;
  bb.frozen = !frozen;  // force the flag flip below to apply requires_grad
  bb.set_frozen(frozen);
  return bb;
}

std::string fusion_name(FusionMode mode) {
  return mode == FusionMode::kAdapterLevel ? "adapter" : "token";
}

FusionMode fusion_from(const std::string& s) {
  if (s == "adapter") return FusionMode::kAdapterLevel;
  if (s == "token") return FusionMode::kTokenLevel;
  throw std::runtime_error("checkpoint: unknown fusion mode " + s);
}

void put_trainer_config(Writer& w, const TrainerConfig& c) {
  w.meta_f("trainer.lr", c.lr);
  w.meta_f("trainer.beta1", c.beta1);
  w.meta_f("trainer.beta2", c.beta2);
  w.meta_f("trainer.adam_eps", c.adam_eps);
  w.meta("trainer.epochs_stage1", c.epochs_stage1);
  w.meta("trainer.epochs_stage2", c.epochs_stage2);
  w.meta("trainer.batch_size", c.batch_size);
  w.meta_f("trainer.lambda", c.lambda);
  w.meta("trainer.fusion", fusion_name(c.fusion));
  w.meta("trainer.seed", static_cast<long long>(c.seed));
  w.meta("trainer.stage2_past_queries_trainable", c.stage2_past_queries_trainable ? 1 : 0);
  w.meta("trainer.stage1_keys_trainable", c.stage1_keys_trainable ? 1 : 0);
  w.meta("trainer.bottleneck", c.bottleneck);
  w.meta_f("trainer.query_init_stdev", c.query_init_stdev);
}

TrainerConfig get_trainer_config(const Reader& r) {
  TrainerConfig c;
  c.lr = r.meta_double("trainer.lr");
  c.beta1 = r.meta_double("trainer.beta1");
  c.beta2 = r.meta_double("trainer.beta2");
  c.adam_eps = r.meta_double("trainer.adam_eps");
  c.epochs_stage1 = static_cast<int>(r.meta_int("trainer.epochs_stage1"));
  c.epochs_stage2 = static_cast<int>(r.meta_int("trainer.epochs_stage2"));
  c.batch_size = static_cast<int>(r.meta_int("trainer.batch_size"));
  c.lambda = r.meta_double("trainer.lambda");
  c.fusion = fusion_from(r.meta_at("trainer.fusion"));
  c.seed = static_cast<uint64_t>(r.meta_int("trainer.seed"));
  c.stage2_past_queries_trainable = r.meta_int("trainer.stage2_past_queries_trainable") != 0;
  c.stage1_keys_trainable = r.meta_int("trainer.stage1_keys_trainable") != 0;
  c.bottleneck = static_cast<int>(r.meta_int("trainer.bottleneck"));
  c.query_init_stdev = r.meta_double("trainer.query_init_stdev");
  return c;
}

}  // namespace

void save_backbone_checkpoint(const Backbone& backbone, const std::string& path) {
  Writer w;
  w.meta("kind", "backbone");
  put_backbone(w, backbone);
  w.write(path);
}

Backbone load_backbone_checkpoint(const std::string& path) {
  Reader r(path);
  if (r.meta_at("kind") != "backbone") {
    throw std::runtime_error("checkpoint: expected a backbone checkpoint in " + path);
  }
  return get_backbone(r);
}

void save_sequence_checkpoint(const SequenceState& state, const std::string& path) {
  Writer w;
  w.meta("kind", "sequence");
  put_backbone(w, state.backbone);
  put_trainer_config(w, state.config);
  w.meta("completed_tasks", state.completed_tasks);
  w.meta("bank.size", state.bank.size());
  w.meta("bank.points", state.bank.points);
  for (int i = 0; i < state.bank.size(); ++i) {
    const Adapter& a = state.bank.adapters[static_cast<size_t>(i)];
    const AdapterKey& k = state.bank.keys[static_cast<size_t>(i)];
    const std::string p = "bank.adapter" + std::to_string(i) + ".";
    w.meta(p + "origin_task", a.origin_task);
    w.meta(p + "bottleneck", a.bottleneck);
    w.meta(p + "key_frozen", k.frozen ? 1 : 0);
    for (int pt = 0; pt < state.bank.points; ++pt) {
      w.tensor(p + "point" + std::to_string(pt) + ".down", a.at[static_cast<size_t>(pt)].down);
      w.tensor(p + "point" + std::to_string(pt) + ".up", a.at[static_cast<size_t>(pt)].up);
      w.tensor("bank.key" + std::to_string(i) + ".point" + std::to_string(pt),
               k.per_point[static_cast<size_t>(pt)]);
    }
  }
  w.meta("tasks", static_cast<long long>(state.heads.size()));
  for (size_t t = 0; t < state.heads.size(); ++t) {
    const std::string p = "task" + std::to_string(t) + ".";
    w.meta(p + "classes", state.heads[t].classes);
    w.tensor(p + "head.w", state.heads[t].w);
    w.tensor(p + "head.b", state.heads[t].b);
    const TaskQuerySet& q = state.queries[t];
    w.meta(p + "fusion", fusion_name(q.mode));
    w.meta(p + "seq_len", q.seq_len);
    w.meta(p + "query_width", q.width());
    for (int c = 0; c < q.width(); ++c) {
      for (size_t pt = 0; pt < q.columns[static_cast<size_t>(c)].per_point.size(); ++pt) {
        w.tensor(p + "query.col" + std::to_string(c) + ".point" + std::to_string(pt),
                 q.columns[static_cast<size_t>(c)].per_point[pt]);
      }
    }
  }
  w.meta("summaries", static_cast<long long>(state.summaries.size()));
  for (size_t t = 0; t < state.summaries.size(); ++t) {
    const TaskSummary& s = state.summaries[t];
    const std::string p = "summary" + std::to_string(t) + ".";
    w.meta(p + "name", s.name);
    w.meta_f(p + "stage1_test_acc", s.stage1_test_acc);
    w.meta_f(p + "post_expansion_test_acc", s.post_expansion_test_acc);
    w.meta_f(p + "stage1_final_eval_loss", s.stage1_final_eval_loss);
    w.meta_f(p + "stage2_init_eval_loss", s.stage2_init_eval_loss);
  }
  w.meta("boundary_checksums", static_cast<long long>(state.boundary_checksums.size()));
  for (size_t i = 0; i < state.boundary_checksums.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(state.boundary_checksums[i]));
    w.meta("boundary_checksum" + std::to_string(i), std::string(buf));
  }
  w.meta("metric_rows", static_cast<long long>(state.log.rows.size()));
  w.write(path);
}

SequenceState load_sequence_checkpoint(const std::string& path) {
  Reader r(path);
  if (r.meta_at("kind") != "sequence") {
    throw std::runtime_error("checkpoint: expected a sequence checkpoint in " + path);
  }
  SequenceState state;
  state.backbone = get_backbone(r);
  state.config = get_trainer_config(r);
  state.completed_tasks = static_cast<int>(r.meta_int("completed_tasks"));
  state.bank = AdapterBank(state.backbone.cfg.model_dim,
                           static_cast<int>(r.meta_int("bank.points")));
  const int bank_size = static_cast<int>(r.meta_int("bank.size"));
  for (int i = 0; i < bank_size; ++i) {
    const std::string p = "bank.adapter" + std::to_string(i) + ".";
    Adapter a;
    a.origin_task = static_cast<int>(r.meta_int(p + "origin_task"));
    a.bottleneck = static_cast<int>(r.meta_int(p + "bottleneck"));
    AdapterKey k;
    k.frozen = r.meta_int(p + "key_frozen") != 0;
    for (int pt = 0; pt < state.bank.points; ++pt) {
      Adapter::Sub sub;
      sub.down = r.tensor(p + "point" + std::to_string(pt) + ".down");
      sub.up = r.tensor(p + "point" + std::to_string(pt) + ".up");
      a.at.push_back(std::move(sub));
      k.per_point.push_back(
          r.tensor("bank.key" + std::to_string(i) + ".point" + std::to_string(pt)));
    }
    state.bank.adapters.push_back(std::move(a));
    state.bank.keys.push_back(std::move(k));
  }
  const int tasks = static_cast<int>(r.meta_int("tasks"));
  for (int t = 0; t < tasks; ++t) {
    const std::string p = "task" + std::to_string(t) + ".";
    TaskHead head;
    head.classes = static_cast<int>(r.meta_int(p + "classes"));
    head.w = r.tensor(p + "head.w");
    head.b = r.tensor(p + "head.b");
    state.heads.push_back(std::move(head));
    TaskQuerySet q;
    q.task_id = t;
    q.mode = fusion_from(r.meta_at(p + "fusion"));
    q.seq_len = static_cast<int>(r.meta_int(p + "seq_len"));
    const int width = static_cast<int>(r.meta_int(p + "query_width"));
    for (int c = 0; c < width; ++c) {
      QueryColumn col;
      for (int pt = 0; pt < state.bank.points; ++pt) {
        col.per_point.push_back(
            r.tensor(p + "query.col" + std::to_string(c) + ".point" + std::to_string(pt)));
      }
      q.columns.push_back(std::move(col));
    }
    state.queries.push_back(std::move(q));
  }
  const int summaries = static_cast<int>(r.meta_int("summaries"));
  for (int t = 0; t < summaries; ++t) {
    const std::string p = "summary" + std::to_string(t) + ".";
    TaskSummary s;
    s.name = r.meta_at(p + "name");
    s.stage1_test_acc = r.meta_double(p + "stage1_test_acc");
    s.post_expansion_test_acc = r.meta_double(p + "post_expansion_test_acc");
    s.stage1_final_eval_loss = r.meta_double(p + "stage1_final_eval_loss");
    s.stage2_init_eval_loss = r.meta_double(p + "stage2_init_eval_loss");
    state.summaries.push_back(std::move(s));
  }
  const int checksums = static_cast<int>(r.meta_int("boundary_checksums"));
  for (int i = 0; i < checksums; ++i) {
    state.boundary_checksums.push_back(
        std::stoull(r.meta_at("boundary_checksum" + std::to_string(i)), nullptr, 16));
  }
  return state;
}

std::string checkpoint_kind(const std::string& path) {
  Reader r(path);
  return r.meta_at("kind");
}

long long metric_row_offset(const std::string& path) {
  Reader r(path);
  return r.meta_int("metric_rows");
}

}  // namespace cle
