#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "servograsp/config.hpp"
#include "servograsp/errors.hpp"

using namespace sg;

namespace {

std::string repo_default_config() {
  // Tests run from the build tree; walk up until configs/default.cfg shows.
  namespace fs = std::filesystem;
  fs::path p = fs::current_path();
  for (int i = 0; i < 6; ++i) {
    if (fs::exists(p / "configs" / "default.cfg")) {
      return (p / "configs" / "default.cfg").string();
    }
    p = p.parent_path();
  }
  return "configs/default.cfg";
}

std::string write_temp(const std::string& body) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "sg_cfg_test";
  fs::create_directories(dir);
  fs::path f = dir / "cfg.cfg";
  std::ofstream os(f, std::ios::trunc);
  os << body;
  return f.string();
}

}  // namespace

TEST_CASE("the shipped default config parses to the built-in defaults") {
  PipelineConfig from_file = PipelineConfig::load(repo_default_config());
  PipelineConfig built_in = PipelineConfig::defaults();

  REQUIRE(from_file.seed == built_in.seed);
  REQUIRE(from_file.scene.min_objects == built_in.scene.min_objects);
  REQUIRE(from_file.scene.max_len == built_in.scene.max_len);
  REQUIRE(from_file.scene.slip_gain == built_in.scene.slip_gain);
  REQUIRE(from_file.eval_scene.poly_min_verts ==
          built_in.eval_scene.poly_min_verts);
  REQUIRE(from_file.eval_scene.albedo_min == built_in.eval_scene.albedo_min);
  REQUIRE(from_file.fleet.actuation_sigma == built_in.fleet.actuation_sigma);
  REQUIRE(from_file.detect.aperture_threshold ==
          built_in.detect.aperture_threshold);
  REQUIRE(from_file.detect.pixel_diff_threshold ==
          built_in.detect.pixel_diff_threshold);
  REQUIRE(from_file.net_input_hw == built_in.net_input_hw);
  REQUIRE(from_file.train.epochs == built_in.train.epochs);
  REQUIRE(from_file.refit_train.epochs == built_in.refit_train.epochs);
  REQUIRE(from_file.servo.cem.n_samples == built_in.servo.cem.n_samples);
  REQUIRE(from_file.servo.cem.n_elite == built_in.servo.cem.n_elite);
  REQUIRE(from_file.servo.close_ratio == built_in.servo.close_ratio);
  REQUIRE(from_file.servo.max_steps == built_in.servo.max_steps);
  REQUIRE(from_file.ablate_fractions == built_in.ablate_fractions);
  REQUIRE(from_file.schedule.phases.size() ==
          built_in.schedule.phases.size());
  for (size_t i = 0; i < built_in.schedule.phases.size(); ++i) {
    REQUIRE(from_file.schedule.phases[i].policy ==
            built_in.schedule.phases[i].policy);
    REQUIRE(from_file.schedule.phases[i].budget ==
            built_in.schedule.phases[i].budget);
    REQUIRE(from_file.schedule.phases[i].max_steps ==
            built_in.schedule.phases[i].max_steps);
    REQUIRE(from_file.schedule.phases[i].refit_after ==
            built_in.schedule.phases[i].refit_after);
  }
}

TEST_CASE("unknown keys are rejected by name") {
  std::string path = write_temp("scene.min_objects = 3\nscene.bogus = 1\n");
  try {
    PipelineConfig::load(path);
    REQUIRE(false);
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("scene.bogus") != std::string::npos);
  }
}

TEST_CASE("out-of-range values are rejected by key") {
  std::string path = write_temp(
      "schedule.phase.1 = eps_greedy eps=1.5 budget=10 T=4\n");
  REQUIRE_THROWS_AS(PipelineConfig::load(path), ConfigError);

  path = write_temp("train.learning_rate = -0.5\n");
  REQUIRE_THROWS_AS(PipelineConfig::load(path), ConfigError);

  path = write_temp("cem.n_elite = 64\ncem.n_samples = 64\n");
  REQUIRE_THROWS_AS(PipelineConfig::load(path), ConfigError);
}

TEST_CASE("a config with schedule lines replaces the default schedule") {
  std::string path = write_temp(
      "schedule.phase.1 = random budget=5 T=2 refit=1\n"
      "schedule.phase.2 = eps_greedy eps=0.2 budget=3 T=4\n");
  PipelineConfig cfg = PipelineConfig::load(path);
  REQUIRE(cfg.schedule.phases.size() == 2);
  REQUIRE(cfg.schedule.phases[0].budget == 5);
  REQUIRE(cfg.schedule.phases[1].epsilon == 0.2);
  REQUIRE(cfg.schedule.phases[1].max_steps == 4);
}

TEST_CASE("malformed lines name the line number") {
  std::string path = write_temp("seed = 1\nnot a key value line\n");
  try {
    PipelineConfig::load(path);
    REQUIRE(false);
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("line 2") != std::string::npos);
  }
}
