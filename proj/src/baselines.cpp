#include "servograsp/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace sg {

Episode random_policy(WorldState& world, int max_steps,
                      const DetectConfig& detect, Rng& rng, uint32_t robot_id,
                      uint64_t episode_seed) {
  Constraints cons = constraints_for(world.params);
  StepPolicy policy = [&](const Image&, const Image&, const Pose& pose, int,
                          DecisionRecord& telemetry)
      -> std::optional<MotorCommand> {
    telemetry.branch = 'x';
    return uniform_feasible_command(pose, cons, rng);
  };
  return run_policy_episode(world, max_steps, detect, rng, policy, robot_id,
                            episode_seed);
}

// Both open-loop policies execute blind: after the single observation they
// pose-servo toward the chosen grasp target (the robot always knows its own
// pose), splitting the remaining delta evenly and projecting to the table.

Episode open_loop_policy(WorldState& world, const GraspPredictor& predictor,
                         const Calibration& calib, const ServoConfig& cfg,
                         const DetectConfig& detect, Rng& rng,
                         uint32_t robot_id, uint64_t episode_seed) {
  Constraints cons = constraints_for(world.params);
  int observations = 0;
  std::optional<Pose> target;
  StepPolicy policy = [&](const Image&, const Image&, const Pose& pose, int t,
                          DecisionRecord& telemetry)
      -> std::optional<MotorCommand> {
    if (!target) {
      // The single observation: a rectified view through the known
      // calibration, with the gripper visible at its start pose. The same
      // image stands in for the (gripper-free) pregrasp input.
      ++observations;
      Image rectified = render_through(world, calib.rectified());
      CemResult cem = cem_infer(predictor, rectified, rectified, pose, cons,
                                cfg.cem, rng);
      target = Pose{pose.x + cem.best.dx, pose.y + cem.best.dy,
                    cons.table_height,
                    normalize_angle(pose.theta + cem.best.dtheta())};
      telemetry.best_probability = static_cast<float>(cem.best_probability);
    }
    telemetry.branch = 'x';
    int remaining = std::max(1, cfg.max_steps - t);
    double f = 1.0 / static_cast<double>(remaining);
    MotorCommand cmd = MotorCommand::encode(
        (target->x - pose.x) * f, (target->y - pose.y) * f, 0.0,
        normalize_angle(target->theta - pose.theta) * f);
    return project_to_table(cmd, pose, cons.table_height);
  };
  Episode ep = run_policy_episode(world, cfg.max_steps, detect, rng, policy,
                                  robot_id, episode_seed);
  ep.policy_observations = static_cast<uint8_t>(observations);
  return ep;
}

// ---------------------------------------------------------------------------
// Hand-engineered geometric baseline.

std::vector<SegmentedObject> segment_heightmap(const Image& heightmap,
                                               const Rect& view,
                                               const GeometricConfig& geo) {
  const int h = heightmap.height, w = heightmap.width;
  double px = view.width() / static_cast<double>(w);
  auto pixel_x = [&](int c) { return view.lo.x + (c + 0.5) * px; };
  auto pixel_y = [&](int r) { return view.lo.y + (r + 0.5) * px; };

  // 4-connected components above the height threshold.
  std::vector<int> label(static_cast<size_t>(h) * w, -1);
  std::vector<std::vector<int>> components;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int idx = r * w + c;
      if (label[idx] >= 0 || heightmap.data[idx] <= geo.height_eps) continue;
      int id = static_cast<int>(components.size());
      components.emplace_back();
      std::deque<int> queue{idx};
      label[idx] = id;
      while (!queue.empty()) {
        int cur = queue.front();
        queue.pop_front();
        components[id].push_back(cur);
        int cr = cur / w, cc = cur % w;
        const int nbr[4][2] = {{cr - 1, cc}, {cr + 1, cc},
                               {cr, cc - 1}, {cr, cc + 1}};
        for (auto& n : nbr) {
          if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
          int ni = n[0] * w + n[1];
          if (label[ni] >= 0 || heightmap.data[ni] <= geo.height_eps) continue;
          label[ni] = id;
          queue.push_back(ni);
        }
      }
    }
  }

  // Split components wider than the graspable width with a vertical cut at
  // the widest row.
  std::deque<std::vector<int>> pending(components.begin(), components.end());
  std::vector<std::vector<int>> segments;
  while (!pending.empty()) {
    std::vector<int> pix = std::move(pending.front());
    pending.pop_front();
    if (static_cast<int>(pix.size()) < geo.min_pixels) continue;
    int c_lo = w, c_hi = -1;
    for (int p : pix) {
      c_lo = std::min(c_lo, p % w);
      c_hi = std::max(c_hi, p % w);
    }
    double width_m = (c_hi - c_lo + 1) * px;
    if (width_m <= geo.max_graspable_width || c_hi == c_lo) {
      segments.push_back(std::move(pix));
      continue;
    }
    // Widest row determines the cut column.
    std::vector<int> row_lo(h, w), row_hi(h, -1);
    for (int p : pix) {
      int r = p / w, c = p % w;
      row_lo[r] = std::min(row_lo[r], c);
      row_hi[r] = std::max(row_hi[r], c);
    }
    int best_row = -1, best_width = -1;
    for (int r = 0; r < h; ++r) {
      if (row_hi[r] < 0) continue;
      int wd = row_hi[r] - row_lo[r];
      if (wd > best_width) {
        best_width = wd;
        best_row = r;
      }
    }
    int cut = (row_lo[best_row] + row_hi[best_row]) / 2;
    std::vector<int> left, right;
    for (int p : pix) {
      (p % w <= cut ? left : right).push_back(p);
    }
    if (left.empty() || right.empty()) {
      segments.push_back(left.empty() ? std::move(right) : std::move(left));
      continue;
    }
    pending.push_back(std::move(left));
    pending.push_back(std::move(right));
  }

  // Oriented bounding boxes from second moments.
  std::vector<SegmentedObject> out;
  for (std::vector<int>& pix : segments) {
    SegmentedObject seg;
    double sx = 0, sy = 0;
    for (int p : pix) {
      sx += pixel_x(p % w);
      sy += pixel_y(p / w);
    }
    double n = static_cast<double>(pix.size());
    seg.center = {sx / n, sy / n};
    double mxx = 0, myy = 0, mxy = 0;
    for (int p : pix) {
      double dx = pixel_x(p % w) - seg.center.x;
      double dy = pixel_y(p / w) - seg.center.y;
      mxx += dx * dx;
      myy += dy * dy;
      mxy += dx * dy;
    }
    double angle = 0.5 * std::atan2(2.0 * mxy, mxx - myy);
    Vec2 major{std::cos(angle), std::sin(angle)};
    Vec2 minor{-major.y, major.x};
    double lo_u = 1e9, hi_u = -1e9, lo_v = 1e9, hi_v = -1e9;
    for (int p : pix) {
      Vec2 d{pixel_x(p % w) - seg.center.x, pixel_y(p / w) - seg.center.y};
      lo_u = std::min(lo_u, d.dot(major));
      hi_u = std::max(hi_u, d.dot(major));
      lo_v = std::min(lo_v, d.dot(minor));
      hi_v = std::max(hi_v, d.dot(minor));
    }
    seg.major_extent = hi_u - lo_u + px;
    seg.minor_extent = hi_v - lo_v + px;
    seg.orientation = angle;
    if (seg.minor_extent > seg.major_extent) {
      std::swap(seg.major_extent, seg.minor_extent);
      seg.orientation = normalize_angle(angle + std::numbers::pi / 2.0);
    }
    seg.pixels = std::move(pix);
    out.push_back(std::move(seg));
  }
  return out;
}

Episode geometric_policy(WorldState& world, const Calibration& calib,
                         const GeometricConfig& geo, int max_steps,
                         const DetectConfig& detect, Rng& rng,
                         uint32_t robot_id, uint64_t episode_seed) {
  (void)calib;  // the robot-frame heightmap embodies the calibration grant
  Constraints cons = constraints_for(world.params);
  int observations = 0;
  std::optional<Pose> target;
  bool fallback = false;
  StepPolicy policy = [&](const Image&, const Image&, const Pose& pose, int t,
                          DecisionRecord& telemetry)
      -> std::optional<MotorCommand> {
    if (!target) {
      ++observations;
      Image height = render_heightmap(world);
      std::vector<SegmentedObject> segments =
          segment_heightmap(height, world.params.view_rect(), geo);
      if (segments.empty()) {
        fallback = true;
        MotorCommand r = uniform_feasible_command(pose, cons, rng);
        target = Pose{pose.x + r.dx, pose.y + r.dy, cons.table_height,
                      normalize_angle(pose.theta + r.dtheta())};
      } else {
        const SegmentedObject* nearest = &segments[0];
        double best = 1e18;
        for (const SegmentedObject& s : segments) {
          double d = (s.center - pose.xy()).norm();
          if (d < best) {
            best = d;
            nearest = &s;
          }
        }
        // Fingers centrally along the longer edges: the closing axis runs
        // across the minor extent.
        double yaw =
            normalize_angle(nearest->orientation + std::numbers::pi / 2.0);
        Vec2 c = cons.workspace.clamp(nearest->center);
        target = Pose{c.x, c.y, cons.table_height, yaw};
      }
    }
    telemetry.branch = fallback ? 'f' : 'x';
    int remaining = std::max(1, max_steps - t);
    double f = 1.0 / static_cast<double>(remaining);
    MotorCommand cmd = MotorCommand::encode(
        (target->x - pose.x) * f, (target->y - pose.y) * f, 0.0,
        normalize_angle(target->theta - pose.theta) * f);
    return project_to_table(cmd, pose, cons.table_height);
  };
  Episode ep = run_policy_episode(world, max_steps, detect, rng, policy,
                                  robot_id, episode_seed);
  ep.policy_observations = static_cast<uint8_t>(observations);
  return ep;
}

}  // namespace sg
