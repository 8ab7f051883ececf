#pragma once

#include <functional>
#include <numbers>
#include <optional>

#include "servograsp/episode.hpp"
#include "servograsp/grasp_net.hpp"
#include "servograsp/rng.hpp"
#include "servograsp/sim_world.hpp"

namespace sg {

struct CemConfig {
  int n_samples = 64;   // N
  int n_elite = 6;      // M
  int n_iterations = 3;
  // Initial per-dimension standard deviations (dx, dy, dz, dtheta).
  double sigma_xy = 0.13;
  double sigma_z = 0.02;
  double sigma_theta = std::numbers::pi / 4.0;
  double sigma_floor = 1e-3;  // refit stddev floor keeps the Gaussian proper
  int max_rejection_attempts = 100;
};

struct Constraints {
  Rect workspace;
  double max_rotation = std::numbers::pi;
  double table_height = 0.0;
};

inline Constraints constraints_for(const SceneConfig& cfg) {
  return Constraints{cfg.workspace(), std::numbers::pi, cfg.table_height};
}

// Sampling distribution over raw (dx, dy, dz, dtheta) displacements.
struct CemState {
  double mean[4] = {0, 0, 0, 0};
  double sigma[4] = {0.13, 0.13, 0.02, std::numbers::pi / 4.0};
};

// Gaussian draw, rejecting samples whose implied final (x, y) leaves the
// workspace or whose |dtheta| exceeds max_rotation. After
// max_rejection_attempts the draw is clamped into bounds and flagged.
MotorCommand sample_constrained(const CemState& state, const Pose& pose,
                                const Constraints& constraints,
                                const CemConfig& cfg, Rng& rng,
                                bool* fallback = nullptr);

// Replaces dz so the command lands exactly at the table.
MotorCommand project_to_table(const MotorCommand& cmd, const Pose& pose,
                              double table_height);

struct CemResult {
  MotorCommand best;        // table-projected, as scored
  double best_probability = 0.0;
  std::vector<double> iteration_best;  // running best after each iteration
  int fallback_count = 0;
};

// Three-round cross-entropy optimization of the predictor score. The first
// round samples a zero-mean Gaussian around the current pose; each round
// scores N projected samples and refits a diagonal Gaussian to the M best.
// Returns the best-scoring command ever seen.
CemResult cem_infer(const GraspPredictor& predictor, const Image& pregrasp,
                    const Image& current, const Pose& pose,
                    const Constraints& constraints, const CemConfig& cfg,
                    Rng& rng);

struct ServoDecision {
  enum class Kind { Close, Move, RaiseAndMove };
  Kind kind = Kind::Move;
  MotorCommand command;  // projected for Move, raised for RaiseAndMove
  double best_probability = 0.0;
  double null_probability = 0.0;
  double ratio = 0.0;
  bool degenerate = false;  // best probability was zero
  int fallback_count = 0;
};

struct ServoConfig {
  CemConfig cem;
  double close_ratio = 0.9;  // strict: ratio must exceed this to close
  double raise_ratio = 0.5;  // inclusive: ratio at or below this raises
  double raise_band_lo = 0.04;
  double raise_band_hi = 0.10;
  int max_steps = 10;  // T
};

// One servo decision: infer v* with CEM, compare against the null command,
// and pick close / move / raise-and-move per the ratio heuristics.
ServoDecision decide(const GraspPredictor& predictor, const Image& pregrasp,
                     const Image& current, const Pose& pose,
                     const Constraints& constraints, const ServoConfig& cfg,
                     Rng& rng);

// Per-step policy for the shared episode runner: returns the executed
// command and fills telemetry, or nullopt to close now.
using StepPolicy = std::function<std::optional<MotorCommand>(
    const Image& pregrasp, const Image& current, const Pose& pose, int step,
    DecisionRecord& telemetry)>;

// Shared episode mechanics: captures I_0 with the gripper out of view,
// places a random start pose, runs up to max_steps-1 policy decisions, then
// always finishes with a terminal null-command close and the drop-test
// label. Every policy (servo and baselines) produces this same record.
Episode run_policy_episode(WorldState& world, int max_steps,
                           const DetectConfig& detect, Rng& rng,
                           const StepPolicy& policy, uint32_t robot_id = 0,
                           uint64_t episode_seed = 0);

// The closed-loop servoing controller f(I_t).
Episode run_servo_episode(WorldState& world, const GraspPredictor& predictor,
                          const ServoConfig& cfg, const DetectConfig& detect,
                          Rng& rng, uint32_t robot_id = 0,
                          uint64_t episode_seed = 0);

// Uniform random feasible displacement: final xy uniform in the workspace,
// yaw change uniform within max_rotation, projected to the table.
MotorCommand uniform_feasible_command(const Pose& pose,
                                      const Constraints& constraints,
                                      Rng& rng);

}  // namespace sg
