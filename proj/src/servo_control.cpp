#include "servograsp/servo_control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sg {

MotorCommand sample_constrained(const CemState& state, const Pose& pose,
                                const Constraints& constraints,
                                const CemConfig& cfg, Rng& rng,
                                bool* fallback) {
  if (fallback) *fallback = false;
  double draw[4];
  for (int attempt = 0; attempt < cfg.max_rejection_attempts; ++attempt) {
    for (int d = 0; d < 4; ++d) {
      draw[d] = rng.normal(state.mean[d], state.sigma[d]);
    }
    Vec2 final_xy{pose.x + draw[0], pose.y + draw[1]};
    if (!constraints.workspace.contains(final_xy)) continue;
    if (std::abs(draw[3]) > constraints.max_rotation) continue;
    return MotorCommand::encode(draw[0], draw[1], draw[2], draw[3]);
  }
  // Clamp the last draw into bounds.
  if (fallback) *fallback = true;
  Vec2 clamped =
      constraints.workspace.clamp({pose.x + draw[0], pose.y + draw[1]});
  double dtheta = std::clamp(draw[3], -constraints.max_rotation,
                             constraints.max_rotation);
  return MotorCommand::encode(clamped.x - pose.x, clamped.y - pose.y, draw[2],
                              dtheta);
}

MotorCommand project_to_table(const MotorCommand& cmd, const Pose& pose,
                              double table_height) {
  MotorCommand out = cmd;
  out.dz = table_height - pose.z;
  return out;
}

CemResult cem_infer(const GraspPredictor& predictor, const Image& pregrasp,
                    const Image& current, const Pose& pose,
                    const Constraints& constraints, const CemConfig& cfg,
                    Rng& rng) {
  CemState state;
  state.mean[0] = state.mean[1] = state.mean[2] = state.mean[3] = 0.0;
  state.sigma[0] = cfg.sigma_xy;
  state.sigma[1] = cfg.sigma_xy;
  state.sigma[2] = cfg.sigma_z;
  state.sigma[3] = cfg.sigma_theta;

  CemResult result;
  result.best_probability = -1.0;
  std::vector<MotorCommand> raw(cfg.n_samples);
  std::vector<MotorCommand> projected(cfg.n_samples);
  std::vector<double> scores(cfg.n_samples);
  std::vector<int> order(cfg.n_samples);

  for (int iter = 0; iter < cfg.n_iterations; ++iter) {
    for (int i = 0; i < cfg.n_samples; ++i) {
      bool fb = false;
      raw[i] = sample_constrained(state, pose, constraints, cfg, rng, &fb);
      if (fb) ++result.fallback_count;
      projected[i] = project_to_table(raw[i], pose, constraints.table_height);
    }
    predictor.score(pregrasp, current, projected, scores);
    for (int i = 0; i < cfg.n_samples; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return scores[a] > scores[b];
    });
    if (scores[order[0]] > result.best_probability) {
      result.best_probability = scores[order[0]];
      result.best = projected[order[0]];
    }
    result.iteration_best.push_back(result.best_probability);

    int m = std::min(cfg.n_elite, cfg.n_samples);
    double mean[4] = {0, 0, 0, 0};
    for (int e = 0; e < m; ++e) {
      const MotorCommand& c = raw[order[e]];
      mean[0] += c.dx;
      mean[1] += c.dy;
      mean[2] += c.dz;
      mean[3] += c.dtheta();
    }
    for (double& v : mean) v /= static_cast<double>(m);
    double var[4] = {0, 0, 0, 0};
    for (int e = 0; e < m; ++e) {
      const MotorCommand& c = raw[order[e]];
      double d0 = c.dx - mean[0], d1 = c.dy - mean[1], d2 = c.dz - mean[2];
      double d3 = c.dtheta() - mean[3];
      var[0] += d0 * d0;
      var[1] += d1 * d1;
      var[2] += d2 * d2;
      var[3] += d3 * d3;
    }
    for (int d = 0; d < 4; ++d) {
      state.mean[d] = mean[d];
      state.sigma[d] = std::max(std::sqrt(var[d] / static_cast<double>(m)),
                                cfg.sigma_floor);
    }
  }
  return result;
}

ServoDecision decide(const GraspPredictor& predictor, const Image& pregrasp,
                     const Image& current, const Pose& pose,
                     const Constraints& constraints, const ServoConfig& cfg,
                     Rng& rng) {
  CemResult cem = cem_infer(predictor, pregrasp, current, pose, constraints,
                            cfg.cem, rng);
  MotorCommand null_proj = project_to_table(MotorCommand::null(), pose,
                                            constraints.table_height);
  double p_null = predictor.score_one(pregrasp, current, null_proj);

  ServoDecision d;
  d.best_probability = cem.best_probability;
  d.null_probability = p_null;
  d.fallback_count = cem.fallback_count;
  if (cem.best_probability <= 0.0) {
    // Both options predicted hopeless; close and terminate cheaply.
    d.degenerate = true;
    d.ratio = std::numeric_limits<double>::infinity();
    d.kind = ServoDecision::Kind::Close;
    return d;
  }
  d.ratio = p_null / cem.best_probability;
  if (d.ratio > cfg.close_ratio) {
    d.kind = ServoDecision::Kind::Close;
  } else if (d.ratio <= cfg.raise_ratio) {
    d.kind = ServoDecision::Kind::RaiseAndMove;
    double target_z = rng.uniform(cfg.raise_band_lo, cfg.raise_band_hi);
    d.command = cem.best;
    d.command.dz = target_z - pose.z;
  } else {
    d.kind = ServoDecision::Kind::Move;
    d.command = cem.best;
  }
  return d;
}

MotorCommand uniform_feasible_command(const Pose& pose,
                                      const Constraints& constraints,
                                      Rng& rng) {
  const Rect& ws = constraints.workspace;
  double tx = rng.uniform(ws.lo.x, ws.hi.x);
  double ty = rng.uniform(ws.lo.y, ws.hi.y);
  double dtheta =
      rng.uniform(-constraints.max_rotation, constraints.max_rotation);
  MotorCommand cmd =
      MotorCommand::encode(tx - pose.x, ty - pose.y, 0.0, dtheta);
  return project_to_table(cmd, pose, constraints.table_height);
}

Episode run_policy_episode(WorldState& world, int max_steps,
                           const DetectConfig& detect, Rng& rng,
                           const StepPolicy& policy, uint32_t robot_id,
                           uint64_t episode_seed) {
  const SceneConfig& cfg = world.params;
  Episode ep;
  ep.robot_id = robot_id;
  ep.episode_seed = episode_seed;

  // Pregrasp image: gripper out of view, nothing held.
  world.gripper.holding.reset();
  world.gripper.aperture = cfg.max_aperture;
  raise_out_of_view(world);
  Image pregrasp = render(world);
  ep.pregrasp = Image8::from(pregrasp);

  // Random start pose inside the workspace.
  Rect start_rect = cfg.workspace().shrunk(0.1 * cfg.bin_half);
  Pose start{rng.uniform(start_rect.lo.x, start_rect.hi.x),
             rng.uniform(start_rect.lo.y, start_rect.hi.y), cfg.approach_z,
             rng.uniform(-std::numbers::pi, std::numbers::pi)};
  world.gripper.pose = start;

  for (int t = 1; t <= max_steps - 1; ++t) {
    Image current = render(world);
    StepRecord rec;
    rec.image = Image8::from(current);
    rec.pose = PoseF::from(world.gripper.pose);

    std::optional<MotorCommand> cmd =
        policy(pregrasp, current, world.gripper.pose, t, rec.decision);
    if (!cmd.has_value()) {
      // Close now: descend to the table as the executed motion of this
      // step; the terminal record below carries the null command.
      MotorCommand descend = project_to_table(
          MotorCommand::null(), world.gripper.pose, cfg.table_height);
      rec.command = CommandF::from(descend);
      step(world, descend);
      ep.steps.push_back(std::move(rec));
      break;
    }
    rec.command = CommandF::from(*cmd);
    step(world, *cmd);
    ep.steps.push_back(std::move(rec));
  }

  // Terminal step: ensure the gripper is on the table, record the null
  // command, close, and label via the drop test.
  if (world.gripper.pose.z > cfg.table_height + 1e-12) {
    step(world, project_to_table(MotorCommand::null(), world.gripper.pose,
                                 cfg.table_height));
  }
  StepRecord terminal;
  terminal.image = Image8::from(render(world));
  terminal.pose = PoseF::from(world.gripper.pose);
  terminal.command = CommandF::from(MotorCommand::null());
  terminal.decision.branch = 'T';
  CloseResult close = execute_close_and_label(world, detect);
  ep.steps.push_back(std::move(terminal));
  ep.label = static_cast<uint8_t>(close.label);
  ep.truth = close.truth ? 1 : 0;
  ep.grasped_object = close.outcome.grasped_object.value_or(-1);
  return ep;
}

Episode run_servo_episode(WorldState& world, const GraspPredictor& predictor,
                          const ServoConfig& cfg, const DetectConfig& detect,
                          Rng& rng, uint32_t robot_id, uint64_t episode_seed) {
  Constraints constraints = constraints_for(world.params);
  int observations = 0;
  StepPolicy policy = [&](const Image& pregrasp, const Image& current,
                          const Pose& pose, int /*step*/,
                          DecisionRecord& telemetry)
      -> std::optional<MotorCommand> {
    ++observations;
    ServoDecision d =
        decide(predictor, pregrasp, current, pose, constraints, cfg, rng);
    telemetry.ratio = static_cast<float>(
        std::min(d.ratio, 1e6));  // keep infinities out of the record
    telemetry.best_probability = static_cast<float>(d.best_probability);
    telemetry.null_probability = static_cast<float>(d.null_probability);
    telemetry.fallback_samples =
        static_cast<uint8_t>(std::min(d.fallback_count, 255));
    switch (d.kind) {
      case ServoDecision::Kind::Close:
        telemetry.branch = 'c';
        return std::nullopt;
      case ServoDecision::Kind::RaiseAndMove:
        telemetry.branch = 'r';
        return d.command;
      case ServoDecision::Kind::Move:
      default:
        telemetry.branch = 'm';
        return d.command;
    }
  };
  Episode ep = run_policy_episode(world, cfg.max_steps, detect, rng, policy,
                                  robot_id, episode_seed);
  ep.policy_observations =
      static_cast<uint8_t>(std::min(observations, 255));
  return ep;
}

}  // namespace sg
