#include <doctest.h>

#include <sstream>

#include "cle/config.hpp"
#include "cle/metrics.hpp"

using namespace cle;

TEST_SUITE_BEGIN("config");

TEST_CASE("the default config text parses back to the defaults") {
  std::istringstream in(default_config_text());
  RunConfig cfg = parse_run_config(in);
  RunConfig def;
  def.finalize();
  CHECK(cfg.seed == def.seed);
  CHECK(cfg.order == def.order);
  CHECK(cfg.backbone.model_dim == def.backbone.model_dim);
  CHECK(cfg.trainer.lr == def.trainer.lr);
  CHECK(cfg.trainer.epochs_stage1 == def.trainer.epochs_stage1);
  CHECK(cfg.trainer.lambda == def.trainer.lambda);
  CHECK(cfg.suite.train_n == def.suite.train_n);
  CHECK(cfg.eval.probe_epochs == def.eval.probe_epochs);
}

TEST_CASE("unknown keys and sections are rejected") {
  std::istringstream bad1("schema_version = 1\nnot_a_key = 3\n");
  CHECK_THROWS_AS(parse_run_config(bad1), std::invalid_argument);
  std::istringstream bad2("schema_version = 1\n[nowhere]\nx = 1\n");
  CHECK_THROWS_AS(parse_run_config(bad2), std::invalid_argument);
  std::istringstream bad3("schema_version = 1\n[trainer]\nlr : 0.1\n");
  CHECK_THROWS_AS(parse_run_config(bad3), std::invalid_argument);
}

TEST_CASE("schema version is mandatory and validated") {
  std::istringstream missing("[trainer]\nlr = 0.1\n");
  CHECK_THROWS_AS(parse_run_config(missing), std::invalid_argument);
  std::istringstream wrong("schema_version = 2\n");
  CHECK_THROWS_AS(parse_run_config(wrong), std::invalid_argument);
}

TEST_CASE("values are type-checked") {
  std::istringstream bad("schema_version = 1\n[trainer]\nbatch_size = lots\n");
  CHECK_THROWS_AS(parse_run_config(bad), std::invalid_argument);
  std::istringstream bad2("schema_version = 1\n[trainer]\nfusion = both\n");
  CHECK_THROWS_AS(parse_run_config(bad2), std::invalid_argument);
  std::istringstream ok("schema_version = 1\n# comment\n[trainer]\nfusion = token\nlambda = 0.5\n");
  RunConfig cfg = parse_run_config(ok);
  CHECK(cfg.trainer.fusion == FusionMode::kTokenLevel);
  CHECK(cfg.trainer.lambda == 0.5);
}

TEST_CASE("config round trip preserves overrides") {
  RunConfig cfg;
  cfg.seed = 77;
  cfg.order = "uni-first";
  cfg.trainer.lambda = 0.25;
  cfg.suite.train_n = 123;
  std::ostringstream os;
  write_run_config(cfg, os);
  std::istringstream in(os.str());
  RunConfig back = parse_run_config(in);
  CHECK(back.seed == 77);
  CHECK(back.order == "uni-first");
  CHECK(back.trainer.lambda == 0.25);
  CHECK(back.suite.train_n == 123);
}

TEST_CASE("metric logs round trip and reject malformed rows") {
  MetricLog log;
  log.add(0, "stage1", 3, "loss", 0.125);
  log.add(1, "stage2", -1, "test_acc", 0.75);
  std::ostringstream os;
  log.write(os);
  std::istringstream in(os.str());
  MetricLog back = MetricLog::read(in);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[0].value == 0.125);
  CHECK(back.get(1, "stage2", -1, "test_acc") == 0.75);
  CHECK_THROWS_AS(back.get(9, "stage2", -1, "test_acc"), std::runtime_error);

  std::istringstream bad("0 stage1\n");
  CHECK_THROWS_AS(MetricLog::read(bad), std::runtime_error);
}

TEST_SUITE_END();
