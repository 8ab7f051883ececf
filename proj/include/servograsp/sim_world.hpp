#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "servograsp/geometry.hpp"
#include "servograsp/rng.hpp"
#include "servograsp/types.hpp"

namespace sg {

// One graspable object. Shape is stored in local coordinates (centroid at
// the origin); the world footprint applies orientation then position.
struct SimObject {
  int id = 0;
  bool is_disc = true;
  double radius = 0.0;            // disc shape
  std::vector<Vec2> local_verts;  // convex CCW polygon shape
  Vec2 position;
  double orientation = 0.0;
  double softness = 0.0;  // [0, 1]; >= 0.5 admits the pinch strategy
  double albedo = 0.5;
  double longest_axis = 0.0;
  double height = 0.0;  // top surface above the table

  Footprint footprint() const;
};

// Per-robot fixed variation, drawn once at fleet creation. Camera fields
// shape rendering only and are never exposed to the learner.
struct RobotVariation {
  Vec2 camera_offset;
  double camera_rotation = 0.0;
  double camera_scale = 1.0;
  double finger_length_wear = 0.0;
  double finger_width_wear = 0.0;
  double actuation_noise_sigma = 0.0;
};

// Scene construction parameters plus the fixed world geometry. Everything
// here is a plain knob surfaced through the pipeline config.
struct SceneConfig {
  // Objects.
  int min_objects = 8;
  int max_objects = 8;
  double min_len = 0.032;   // longest axis, meters
  double max_len = 0.075;
  double disc_weight = 0.35;
  double rect_weight = 0.30;
  double poly_weight = 0.25;
  double thin_weight = 0.10;  // thin strips (aperture-test blind spot)
  int poly_min_verts = 3;
  int poly_max_verts = 4;
  double thin_width_min = 0.005;
  double thin_width_max = 0.009;
  double soft_prob = 0.25;
  double soft_min = 0.6;
  double soft_max = 0.85;
  double albedo_min = 0.45;
  double albedo_max = 0.72;
  double height_min = 0.02;
  double height_max = 0.06;

  // Bin / workspace geometry (robot frame, origin at bin center).
  double bin_half = 0.18;
  double wall_thickness = 0.02;
  double wall_margin = 0.012;  // sloped-side stand-in: re-center inside this
  double table_height = 0.0;

  // Gripper.
  double max_aperture = 0.09;
  double finger_length = 0.05;
  double finger_width = 0.012;
  double min_grasp_width = 0.002;
  double pinch_compression = 0.35;
  double slip_gain = 0.0;
  double push_gain = 1.0;
  double home_z = 0.30;
  double approach_z = 0.12;
  double max_z = 0.32;
  double visible_below_z = 0.25;

  // Rendering.
  int image_hw = 64;
  int image_channels = 1;
  double background_intensity = 0.10;
  double wall_intensity = 0.30;
  double gripper_intensity = 1.0;

  // Placement.
  double placement_gap = 0.004;
  int placement_attempts = 400;

  Rect workspace() const {
    return {{-bin_half, -bin_half}, {bin_half, bin_half}};
  }
  Rect view_rect() const {
    double h = bin_half + wall_thickness + 0.005;
    return {{-h, -h}, {h, h}};
  }
};

struct GripperState {
  Pose pose;
  double aperture = 0.0;
  std::optional<int> holding;
};

struct WorldState {
  SceneConfig params;
  RobotVariation variation;
  std::vector<SimObject> objects;
  GripperState gripper;
  uint64_t rng_seed = 0;
  Rng rng{0};

  const SimObject* find_object(int id) const;
  SimObject* find_object(int id);
};

// Builds a seeded scene. Identical (config, seed, variation) give a
// bit-identical world. Throws PlacementError when objects cannot be placed
// without overlap within the attempt budget.
WorldState spawn_scene(const SceneConfig& config, uint64_t seed,
                       const RobotVariation& variation = {});

// Applies the command plus per-axis actuation noise, clamps the pose to the
// workspace, and pushes swept objects. A held object travels with the
// gripper.
void step(WorldState& world, const MotorCommand& cmd);

// Top-down orthographic render through the robot's (miscalibrated) camera.
Image render(const WorldState& world);

// Render through an explicit camera; identity = known-calibration view.
// Granted to baseline policies only.
struct CameraView {
  Vec2 offset;
  double rotation = 0.0;
  double scale = 1.0;
};
Image render_through(const WorldState& world, const CameraView& camera);

// Robot-frame per-pixel object height above the table; consumed only by the
// hand-engineered baseline.
Image render_heightmap(const WorldState& world);

// Closes the fingers at the current pose (z must be at table height).
GraspOutcome close_gripper(WorldState& world);

// Moves the gripper (and any held object) straight to the raised home pose,
// out of camera view. Not a dynamics step.
void raise_out_of_view(WorldState& world);

// Releases a held object into the bin near the gripper, at the first free
// spot of a deterministic candidate ring.
void drop_held(WorldState& world);

// Removes the object from the world (without-replacement protocol).
void remove_object(WorldState& world, int id);

// Re-places an object at a fresh random non-overlapping pose
// (with-replacement protocol).
void return_to_bin(WorldState& world, int id, Rng& rng);

struct DetectConfig {
  double aperture_threshold = 0.01;
  int pixel_diff_threshold = 10;
  double intensity_eps = 0.05;
};

// Appendix-style self-supervised label: gripper-position test OR image
// subtraction drop test. Throws on image dimension mismatch.
int detect_success(const WorldState& world_before_drop,
                   const WorldState& world_after_drop,
                   const GraspOutcome& outcome, const DetectConfig& cfg);

// Staged close -> raise -> drop -> label sequence shared by every policy.
struct CloseResult {
  GraspOutcome outcome;
  int label = 0;
  int diff_pixels = 0;
  bool truth = false;  // simulator ground truth (holding after close)
};
CloseResult execute_close_and_label(WorldState& world,
                                    const DetectConfig& detect);

// Gripper finger descent footprints at a hypothetical pose.
std::vector<ObB> finger_footprints(const SceneConfig& params,
                                   const RobotVariation& var, const Pose& pose,
                                   double aperture);

}  // namespace sg
