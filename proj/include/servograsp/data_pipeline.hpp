#pragma once

#include <optional>
#include <string>
#include <vector>

#include "servograsp/episode.hpp"
#include "servograsp/servo_control.hpp"
#include "servograsp/sim_world.hpp"

namespace sg {

// Per-robot variation distributions; drawn once per fleet.
struct FleetConfig {
  int n_robots = 4;
  double camera_offset_max = 0.012;      // uniform in +-max, per axis
  double camera_rotation_max = 0.05;     // radians
  double camera_scale_jitter = 0.04;     // scale in 1 +- jitter
  double finger_length_wear_max = 0.012;
  double finger_width_wear_max = 0.003;
  double actuation_sigma = 0.0072;       // base, ~2% of workspace width
  double actuation_sigma_jitter = 0.2;   // per-robot multiplier 1 +- jitter
};

RobotVariation draw_variation(const FleetConfig& cfg, Rng& rng);

struct Phase {
  enum class Policy { Random, EpsGreedy };
  Policy policy = Policy::Random;
  double epsilon = 0.1;
  int budget = 0;     // episodes in this phase
  int max_steps = 2;  // T
  bool refit_after = false;
};

struct CollectionSchedule {
  std::vector<Phase> phases;
};

// Desk-scale mirror of the paper's curriculum: a random block at T=2, then
// eps-greedy blocks with T growing 4 -> 10 and a refit between blocks.
CollectionSchedule default_schedule();

struct CollectionConfig {
  FleetConfig fleet;
  SceneConfig scene;
  CollectionSchedule schedule;
  ServoConfig servo;  // CEM settings for greedy phases (T comes per phase)
  DetectConfig detect;
  ArchSpec arch;
  TrainConfig refit_train;
  uint64_t seed = 0;
};

struct Dataset {
  std::vector<Episode> episodes;
  size_t total_samples() const {
    size_t n = 0;
    for (const Episode& e : episodes) n += e.steps.size();
    return n;
  }
};

struct CollectionResult {
  Dataset dataset;
  std::vector<RobotVariation> robots;
  std::optional<Network> snapshot;  // latest refit network
  std::vector<double> phase_success_rates;  // detector-label mean per phase
  int refits = 0;
};

// Executes the schedule phase by phase. Episodes derive their world and
// policy seeds from the global ordinal, so results are identical for any
// worker count. Greedy phases require a refit (or preceding refit phase) to
// have produced a network snapshot.
CollectionResult run_collection(const CollectionConfig& cfg);

// Shard file: magic "SGDS", version, image dims, then length-prefixed
// episode records with a per-episode CRC32.
void write_shard(const std::vector<Episode>& episodes, const std::string& path);

struct ShardReadResult {
  std::vector<Episode> episodes;
  int dropped = 0;  // corrupted or truncated trailing records
};
ShardReadResult read_shard(const std::string& path);

// First ceil(fraction * episodes) episodes in collection order.
Dataset dataset_slice(const Dataset& dataset, double fraction);

uint32_t crc32(const uint8_t* data, size_t n);

}  // namespace sg
