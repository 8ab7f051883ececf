#pragma once

#include <vector>

#include "servograsp/episode.hpp"
#include "servograsp/servo_control.hpp"
#include "servograsp/sim_world.hpp"

namespace sg {

// The robot's true camera transform, granted only to baseline policies.
struct Calibration {
  Vec2 camera_offset;
  double camera_rotation = 0.0;
  double camera_scale = 1.0;

  static Calibration of(const RobotVariation& v) {
    return {v.camera_offset, v.camera_rotation, v.camera_scale};
  }
  // A calibrated observation: the camera transform undone exactly.
  CameraView rectified() const { return CameraView{{0.0, 0.0}, 0.0, 1.0}; }
};

// Uniform random commands for T-1 steps, then close. Identical episode
// structure to servo episodes.
Episode random_policy(WorldState& world, int max_steps,
                      const DetectConfig& detect, Rng& rng,
                      uint32_t robot_id = 0, uint64_t episode_seed = 0);

// Observes once (a single rectified image through the known calibration),
// runs one CEM inference for the full displacement to the grasp, and
// executes it blind in equal sub-steps with no further feedback.
Episode open_loop_policy(WorldState& world, const GraspPredictor& predictor,
                         const Calibration& calib, const ServoConfig& cfg,
                         const DetectConfig& detect, Rng& rng,
                         uint32_t robot_id = 0, uint64_t episode_seed = 0);

// Connected component of thresholded heightmap pixels.
struct SegmentedObject {
  std::vector<int> pixels;  // r * width + c
  Vec2 center;              // robot frame
  double major_extent = 0.0;
  double minor_extent = 0.0;
  double orientation = 0.0;  // of the longer edge
};

struct GeometricConfig {
  double height_eps = 0.005;         // threshold above the table
  double max_graspable_width = 0.08; // wider segments get split
  int min_pixels = 3;
};

// Heightmap thresholding + 4-connected components + oriented-box grasp,
// executed with the same open-loop task-space controller.
Episode geometric_policy(WorldState& world, const Calibration& calib,
                         const GeometricConfig& geo, int max_steps,
                         const DetectConfig& detect, Rng& rng,
                         uint32_t robot_id = 0, uint64_t episode_seed = 0);

// Exposed for unit tests: segmentation of a heightmap in the robot frame.
std::vector<SegmentedObject> segment_heightmap(const Image& heightmap,
                                               const Rect& view,
                                               const GeometricConfig& geo);

}  // namespace sg
