#pragma once

#include <string>
#include <vector>

#include "servograsp/eval_harness.hpp"

namespace sg {

// Every tunable of the pipeline, loaded from one plain-text key/value file.
// Unknown keys and out-of-range values are rejected with the key named.
struct PipelineConfig {
  uint64_t seed = 7;
  int workers = 0;  // 0 = hardware default
  std::string output_dir = "out";

  SceneConfig scene;       // collection scene
  SceneConfig eval_scene;  // held-out evaluation scene
  FleetConfig fleet;
  FleetConfig eval_fleet;
  DetectConfig detect;
  CollectionSchedule schedule;

  // Network: the scaled stem/pool2-injection/head architecture.
  int net_input_hw = 56;
  InjectMode net_inject_mode = InjectMode::Add;
  double net_command_scale = 8.0;

  TrainConfig train;        // final training
  TrainConfig refit_train;  // between-phase refits
  ServoConfig servo;
  GeometricConfig geometric;

  int eval_with_replacement_attempts = 100;
  int eval_without_replacement_attempts = 30;
  int eval_repetitions = 4;
  std::vector<double> ablate_fractions = {0.12, 0.25, 0.50, 1.00};

  ArchSpec arch() const;
  CollectionConfig collection() const;
  EvalConfig eval() const;

  static PipelineConfig defaults();
  static PipelineConfig load(const std::string& path);
  // Parses one "key = value" assignment (used by load and by tests).
  void apply(const std::string& key, const std::string& value);
};

}  // namespace sg
