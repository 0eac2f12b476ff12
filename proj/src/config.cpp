#include "cle/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cle {

void RunConfig::finalize() {
  trainer.seed = seed;
  trainer.validate();
  backbone.validate();
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct Schema {
  // section.key -> setter
  std::map<std::string, std::function<void(RunConfig&, const std::string&)>> keys;

  static long long to_int(const std::string& v) {
    size_t used = 0;
    long long out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("expected an integer, got '" + v + "'");
    return out;
  }
  static double to_double(const std::string& v) {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("expected a number, got '" + v + "'");
    return out;
  }
  static bool to_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("expected true/false, got '" + v + "'");
  }
};

const Schema& schema() {
  static const Schema s = [] {
    Schema sc;
    sc.keys["run.schema_version"] = [](RunConfig& c, const std::string& v) {
      c.schema_version = static_cast<int>(Schema::to_int(v));
      if (c.schema_version != 1) throw std::invalid_argument("unsupported schema_version " + v);
    };
    sc.keys["run.seed"] = [](RunConfig& c, const std::string& v) {
      c.seed = static_cast<uint64_t>(Schema::to_int(v));
    };
    sc.keys["run.order"] = [](RunConfig& c, const std::string& v) { c.order = v; };
    sc.keys["run.out_dir"] = [](RunConfig& c, const std::string& v) { c.out_dir = v; };

    sc.keys["backbone.model_dim"] = [](RunConfig& c, const std::string& v) {
      c.backbone.model_dim = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["backbone.layers"] = [](RunConfig& c, const std::string& v) {
      c.backbone.layers = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["backbone.heads"] = [](RunConfig& c, const std::string& v) {
      c.backbone.heads = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["backbone.seq_img"] = [](RunConfig& c, const std::string& v) {
      c.backbone.seq_img = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["backbone.seq_txt"] = [](RunConfig& c, const std::string& v) {
      c.backbone.seq_txt = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["backbone.vocab_img"] = [](RunConfig& c, const std::string& v) {
      c.backbone.vocab_img = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["backbone.vocab_txt"] = [](RunConfig& c, const std::string& v) {
      c.backbone.vocab_txt = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["backbone.ffn_mult"] = [](RunConfig& c, const std::string& v) {
      c.backbone.ffn_mult = static_cast<int>(Schema::to_int(v));
    };

    sc.keys["trainer.lr"] = [](RunConfig& c, const std::string& v) {
      c.trainer.lr = Schema::to_double(v);
    };
    sc.keys["trainer.epochs_stage1"] = [](RunConfig& c, const std::string& v) {
      c.trainer.epochs_stage1 = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["trainer.epochs_stage2"] = [](RunConfig& c, const std::string& v) {
      c.trainer.epochs_stage2 = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["trainer.batch_size"] = [](RunConfig& c, const std::string& v) {
      c.trainer.batch_size = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["trainer.lambda"] = [](RunConfig& c, const std::string& v) {
      c.trainer.lambda = Schema::to_double(v);
    };
    sc.keys["trainer.fusion"] = [](RunConfig& c, const std::string& v) {
      if (v == "adapter") {
        c.trainer.fusion = FusionMode::kAdapterLevel;
      } else if (v == "token") {
        c.trainer.fusion = FusionMode::kTokenLevel;
      } else {
        throw std::invalid_argument("fusion must be adapter or token, got '" + v + "'");
      }
    };
    sc.keys["trainer.bottleneck"] = [](RunConfig& c, const std::string& v) {
      c.trainer.bottleneck = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["trainer.stage2_past_queries_trainable"] = [](RunConfig& c, const std::string& v) {
      c.trainer.stage2_past_queries_trainable = Schema::to_bool(v);
    };
    sc.keys["trainer.stage1_keys_trainable"] = [](RunConfig& c, const std::string& v) {
      c.trainer.stage1_keys_trainable = Schema::to_bool(v);
    };
    sc.keys["trainer.query_init_stdev"] = [](RunConfig& c, const std::string& v) {
      c.trainer.query_init_stdev = Schema::to_double(v);
    };

    sc.keys["pretrain.epochs"] = [](RunConfig& c, const std::string& v) {
      c.pretrain_epochs = static_cast<int>(Schema::to_int(v));
    };

    sc.keys["suite.train_n"] = [](RunConfig& c, const std::string& v) {
      c.suite.train_n = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["suite.val_n"] = [](RunConfig& c, const std::string& v) {
      c.suite.val_n = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["suite.test_n"] = [](RunConfig& c, const std::string& v) {
      c.suite.test_n = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["suite.classes"] = [](RunConfig& c, const std::string& v) {
      c.suite.classes = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["suite.label_noise"] = [](RunConfig& c, const std::string& v) {
      c.suite.label_noise = Schema::to_double(v);
    };

    sc.keys["eval.probe_epochs"] = [](RunConfig& c, const std::string& v) {
      c.eval.probe_epochs = static_cast<int>(Schema::to_int(v));
    };
    sc.keys["eval.probe_lr"] = [](RunConfig& c, const std::string& v) {
      c.eval.probe_lr = Schema::to_double(v);
    };
    sc.keys["eval.lowshot_per_class"] = [](RunConfig& c, const std::string& v) {
      c.eval.lowshot_per_class = static_cast<int>(Schema::to_int(v));
    };
    return sc;
  }();
  return s;
}

}  // namespace

RunConfig parse_run_config(std::istream& in) {
  RunConfig cfg;
  std::string line, section = "run";
  int line_no = 0;
  bool saw_version = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line.substr(0, line.find('#')));
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']') {
        throw std::invalid_argument("config line " + std::to_string(line_no) + ": bad section");
      }
      section = trim(text.substr(1, text.size() - 2));
      continue;
    }
    const size_t eq = text.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = section + "." + trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    auto it = schema().keys.find(key);
    if (it == schema().keys.end()) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" +
                                  key + "'");
    }
    try {
      it->second(cfg, value);
    } catch (const std::exception& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + " (" + key +
                                  "): " + e.what());
    }
    if (key == "run.schema_version") saw_version = true;
  }
  if (!saw_version) throw std::invalid_argument("config: missing schema_version");
  cfg.finalize();
  return cfg;
}

RunConfig parse_run_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  return parse_run_config(in);
}

void write_run_config(const RunConfig& cfg, std::ostream& out) {
  char buf[64];
  auto f = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%g", v);
    return std::string(buf);
  };
  out << "schema_version = " << cfg.schema_version << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "order = " << cfg.order << "\n";
  out << "out_dir = " << cfg.out_dir << "\n\n";
  out << "[backbone]\n";
  out << "model_dim = " << cfg.backbone.model_dim << "\n";
  out << "layers = " << cfg.backbone.layers << "\n";
  out << "heads = " << cfg.backbone.heads << "\n";
  out << "seq_img = " << cfg.backbone.seq_img << "\n";
  out << "seq_txt = " << cfg.backbone.seq_txt << "\n";
  out << "vocab_img = " << cfg.backbone.vocab_img << "\n";
  out << "vocab_txt = " << cfg.backbone.vocab_txt << "\n";
  out << "ffn_mult = " << cfg.backbone.ffn_mult << "\n\n";
  out << "[trainer]\n";
  out << "lr = " << f(cfg.trainer.lr) << "\n";
  out << "epochs_stage1 = " << cfg.trainer.epochs_stage1 << "\n";
  out << "epochs_stage2 = " << cfg.trainer.epochs_stage2 << "\n";
  out << "batch_size = " << cfg.trainer.batch_size << "\n";
  out << "lambda = " << f(cfg.trainer.lambda) << "\n";
  out << "fusion = " << (cfg.trainer.fusion == FusionMode::kAdapterLevel ? "adapter" : "token")
      << "\n";
  out << "bottleneck = " << cfg.trainer.bottleneck << "\n";
  out << "stage2_past_queries_trainable = "
      << (cfg.trainer.stage2_past_queries_trainable ? "true" : "false") << "\n";
  out << "stage1_keys_trainable = " << (cfg.trainer.stage1_keys_trainable ? "true" : "false")
      << "\n";
  out << "query_init_stdev = " << f(cfg.trainer.query_init_stdev) << "\n\n";
  out << "[pretrain]\n";
  out << "epochs = " << cfg.pretrain_epochs << "\n\n";
  out << "[suite]\n";
  out << "train_n = " << cfg.suite.train_n << "\n";
  out << "val_n = " << cfg.suite.val_n << "\n";
  out << "test_n = " << cfg.suite.test_n << "\n";
  out << "classes = " << cfg.suite.classes << "\n";
  out << "label_noise = " << f(cfg.suite.label_noise) << "\n\n";
  out << "[eval]\n";
  out << "probe_epochs = " << cfg.eval.probe_epochs << "\n";
  out << "probe_lr = " << f(cfg.eval.probe_lr) << "\n";
  out << "lowshot_per_class = " << cfg.eval.lowshot_per_class << "\n";
}

std::string default_config_text() {
  RunConfig cfg;
  std::ostringstream os;
  write_run_config(cfg, os);
  return os.str();
}

}  // namespace cle
