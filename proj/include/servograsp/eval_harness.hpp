#pragma once

#include <functional>
#include <string>
#include <vector>

#include "servograsp/baselines.hpp"
#include "servograsp/data_pipeline.hpp"

namespace sg {

// A policy instantiated for evaluation: runs one full episode on the world.
using PolicyFn = std::function<Episode(WorldState& world, Rng& rng,
                                       uint64_t episode_seed)>;

struct AttemptRecord {
  uint64_t seed = 0;       // protocol seed (repetition seed)
  int attempt = 0;         // index within the run
  int label = 0;           // detector outcome (reported)
  int truth = 0;           // simulator ground truth (diagnostic)
  int steps = 0;
  int close_branches = 0;  // decision branch counts
  int move_branches = 0;
  int raise_branches = 0;
  int scripted_branches = 0;
};

struct ProtocolResult {
  std::string policy;
  std::string protocol;  // "with_replacement" | "without_replacement"
  std::vector<AttemptRecord> attempts;

  double failure_rate() const;              // failures / attempts
  // Pooled failure rate over the first k attempts of each repetition;
  // repetitions that emptied the bin early contribute only attempted tries.
  double failure_at(int k) const;
  int repetitions() const;
};

struct EvalConfig {
  SceneConfig scene;          // evaluation scene (held-out objects)
  FleetConfig fleet;          // evaluation robot variation distribution
  DetectConfig detect;
  int with_replacement_attempts = 100;
  int without_replacement_attempts = 30;
  int repetitions = 4;
};

// 100-attempt protocol: grasped objects return to the bin at a fresh random
// pose after each attempt.
ProtocolResult eval_with_replacement(const std::string& name,
                                     const PolicyFn& policy,
                                     const EvalConfig& cfg, int attempts,
                                     uint64_t seed);

// Objects are removed as they are grasped; each repetition runs until the
// attempt budget or an empty bin. Aggregates report the first 10/20/30.
ProtocolResult eval_without_replacement(const std::string& name,
                                        const PolicyFn& policy,
                                        const EvalConfig& cfg,
                                        int repetitions, int attempts,
                                        uint64_t seed);

struct AblationRow {
  double fraction = 0.0;
  size_t episodes = 0;
  size_t samples = 0;  // stored sample count M of the slice
  double fail_10 = 0.0;
  double fail_20 = 0.0;
  double fail_30 = 0.0;
};

struct AblationConfig {
  std::vector<double> fractions = {0.12, 0.25, 0.50, 1.00};
  ArchSpec arch;
  TrainConfig train;
  ServoConfig servo;
  EvalConfig eval;
  uint64_t seed = 0;
};

// Trains one network per dataset prefix slice and evaluates each without
// replacement with paired seeds.
std::vector<AblationRow> data_ablation(const Dataset& dataset,
                                       const AblationConfig& cfg);

// Report files: one line-delimited record per attempt, a human-readable
// table, and comma-separated plot series. Deterministic content.
void emit_report(const std::vector<ProtocolResult>& results,
                 const std::vector<AblationRow>& ablation,
                 const std::string& dir);

// Canonical policy-name order for tables (the paper's row order).
std::vector<std::string> table_policy_order();

}  // namespace sg
