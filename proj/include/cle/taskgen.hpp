#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cle/backbone.hpp"

namespace cle {

enum class TaskKind { kMultiModal, kImageOnly, kTextOnly };

StreamMask mask_of(TaskKind kind);
std::string to_string(TaskKind kind);
TaskKind task_kind_from(const std::string& s);

// A planted linear direction over one modality's code features. Task rules
// compose factors: each factor contributes one label bit via the sign of the
// mean projection of the stream's codes. Every factor owns a band of the
// vocabulary; its tasks draw signal and filler codes from that band, so the
// knowledge about a factor is tied to codes no other factor uses.
struct Factor {
  std::string name;
  int modality = 0;  // 0 image, 1 text
  int band_lo = 1;   // inclusive code range, PAD excluded
  int band_hi = 0;
  std::vector<double> dir;
};

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::kMultiModal;
  int classes = 4;
  std::vector<int> factor_ids;     // one per label bit
  std::vector<int> overlap_tasks;  // earlier task ids whose factors are reused
  int train_n = 2000;
  int val_n = 250;
  int test_n = 500;
  // planted tokens per factor; 0 takes the suite default, kNoPlacement draws
  // fully random streams and labels them by evaluating the rule
  int signal_tokens = 0;
  double label_noise = 0.0;
  uint64_t seed = 0;

  static constexpr int kNoPlacement = -1;
};

struct Sample {
  std::vector<int> img;
  std::vector<int> txt;
  int label = 0;
};

enum class Split { kTrain, kVal, kTest };

struct TaskDataset {
  TaskSpec spec;
  StreamMask mask = StreamMask::kMultiModal;
  std::vector<Sample> train, val, test;

  const std::vector<Sample>& split(Split s) const;
};

SampleBatch make_batch(const TaskDataset& ds, std::span<const int> idx,
                       Split split = Split::kTrain);

struct SuiteConfig {
  int code_features = 32;
  int signal_tokens = 4;
  double pool_fraction = 0.25;  // codes (by projection) eligible as signal
  double max_overlap_cos = 0.1;
};

// Owns the per-modality code-feature tables and the factor library shared by
// every task of one experiment.
class TaskFactory {
 public:
  TaskFactory(const BackboneConfig& cfg, uint64_t master_seed, SuiteConfig sc = {});

  // Fresh direction kept below max_overlap_cos against every earlier factor.
  // band_hi < band_lo means the whole vocabulary.
  int add_factor(const std::string& name, int modality, int band_lo = 1, int band_hi = 0);
  int factor_count() const { return static_cast<int>(factors_.size()); }
  const Factor& factor(int id) const;

  TaskDataset make_task(const TaskSpec& spec) const;

  // Oracle access for tests and probes over the planted geometry.
  double planted_projection(const std::vector<int>& stream_codes, int factor_id) const;
  int rule_label(const Sample& sample, const std::vector<int>& factor_ids) const;

  const BackboneConfig& backbone_config() const { return cfg_; }

 private:
  Sample generate_sample(const TaskSpec& spec, int label, class Rng& rng) const;

  BackboneConfig cfg_;
  SuiteConfig sc_;
  uint64_t master_seed_;
  std::vector<std::vector<double>> code_feat_[2];  // [modality][code][feature]
  std::vector<Factor> factors_;
  std::vector<std::vector<int>> pos_pool_, neg_pool_;  // per factor
};

// Class-stratified subsample of the train split; val and test untouched.
TaskDataset subsample_lowshot(const TaskDataset& ds, int n_per_class, uint64_t seed);

void export_dataset(const TaskDataset& ds, std::ostream& out);
TaskDataset import_dataset(std::istream& in);

// The canonical experiment: one pretraining task, five upstream tasks
// (multimodal, text, image, multimodal, text) and four downstream tasks with
// declared factor reuse. `order` permutes the upstream sequence.
struct Suite {
  TaskFactory factory;
  TaskSpec base;
  std::vector<TaskSpec> upstream;    // declared task-id order
  std::vector<TaskSpec> downstream;  // [0] reuses tasks 0+1, [1] has no overlap,
                                     // [2] reuses tasks 1+4, [3] reuses task 2
};

struct SuiteSizes {
  int train_n = 2000;
  int val_n = 250;
  int test_n = 500;
  int classes = 4;
  double label_noise = 0.0;
};

Suite default_suite(const BackboneConfig& cfg, uint64_t seed, SuiteSizes sizes = {});

// multi-first keeps the declared order; uni-first starts with a uni-modal
// task; custom:<comma-separated indices> gives an explicit permutation.
std::vector<int> order_permutation(const std::string& order, int n_tasks);

}  // namespace cle
