#pragma once

#include <iosfwd>
#include <string>

#include "cle/backbone.hpp"
#include "cle/evalkit.hpp"
#include "cle/taskgen.hpp"
#include "cle/trainer.hpp"

namespace cle {

// One experiment's configuration: sectioned key = value text with an explicit
// schema version. Unknown sections or keys are errors.
struct RunConfig {
  int schema_version = 1;
  uint64_t seed = 1;
  std::string order = "multi-first";
  std::string out_dir = "out";

  BackboneConfig backbone;
  TrainerConfig trainer;
  int pretrain_epochs = 30;
  SuiteSizes suite;
  ProbeConfig eval;

  // applies `seed` to the pieces derived from it
  void finalize();
};

RunConfig parse_run_config(std::istream& in);
RunConfig parse_run_config_file(const std::string& path);
void write_run_config(const RunConfig& cfg, std::ostream& out);
std::string default_config_text();

}  // namespace cle
