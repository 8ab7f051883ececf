#pragma once

#include <cstdint>
#include <vector>

#include "servograsp/grasp_net.hpp"
#include "servograsp/types.hpp"

namespace sg {

// Poses and commands are recorded in f32, matching the shard encoding, so
// in-memory episodes and shard round-trips compare field-for-field.
struct PoseF {
  float x = 0, y = 0, z = 0, theta = 0;
  static PoseF from(const Pose& p) {
    return {static_cast<float>(p.x), static_cast<float>(p.y),
            static_cast<float>(p.z), static_cast<float>(p.theta)};
  }
  Pose to_pose() const { return {x, y, z, theta}; }
  bool operator==(const PoseF&) const = default;
};

struct CommandF {
  float dx = 0, dy = 0, dz = 0, sin_dtheta = 0, cos_dtheta = 1;
  static CommandF from(const MotorCommand& c) {
    return {static_cast<float>(c.dx), static_cast<float>(c.dy),
            static_cast<float>(c.dz), static_cast<float>(c.sin_dtheta),
            static_cast<float>(c.cos_dtheta)};
  }
  MotorCommand to_command() const {
    return {dx, dy, dz, sin_dtheta, cos_dtheta};
  }
  bool operator==(const CommandF&) const = default;
};

// Telemetry for one decision: which branch fired and the probabilities
// behind it. branch: 'c' close, 'm' move, 'r' raise-and-move, 'x' scripted
// (random/open-loop execution), 'T' forced terminal close.
struct DecisionRecord {
  char branch = 'x';
  float ratio = 0.0f;
  float best_probability = 0.0f;
  float null_probability = 0.0f;
  uint8_t fallback_samples = 0;  // constrained-sampling fallbacks in CEM
  bool operator==(const DecisionRecord&) const = default;
};

struct StepRecord {
  Image8 image;      // I_t, observed before executing the command
  PoseF pose;        // p_t
  CommandF command;  // executed displacement; exact null on the final step
  DecisionRecord decision;
  bool operator==(const StepRecord&) const = default;
};

// One grasp attempt. The final step always carries the null command and the
// close; labels come from the self-supervised detector, never ground truth.
struct Episode {
  uint32_t robot_id = 0;
  uint64_t collection_index = 0;
  uint64_t episode_seed = 0;
  Image8 pregrasp;  // I_0, captured with the gripper out of view
  std::vector<StepRecord> steps;
  uint8_t label = 0;
  uint8_t truth = 0;  // simulator ground truth, tracked for detector fidelity
  uint8_t policy_observations = 0;  // images the policy actually consumed
  int32_t grasped_object = -1;      // ground-truth object id, -1 when none

  bool operator==(const Episode&) const = default;
};

// The canonical training-sample view (I_0, I_t, p_T - p_t, label).
using GraspSample = SampleRef;

// Emits exactly T samples for a T-step episode; the displacement of step t
// points from p_t to the final pose p_T, so the last one is the null
// command. Throws on episodes with fewer than two steps.
std::vector<GraspSample> episode_to_samples(const Episode& episode);

// Appends samples from every episode in order (flat dataset view).
std::vector<GraspSample> episodes_to_samples(
    const std::vector<Episode>& episodes);

}  // namespace sg
