#include "servograsp/episode.hpp"

#include <stdexcept>

#include "servograsp/geometry.hpp"

namespace sg {

std::vector<GraspSample> episode_to_samples(const Episode& episode) {
  if (episode.steps.size() < 2) {
    throw std::invalid_argument(
        "episode_to_samples: incomplete episode (needs >= 2 steps)");
  }
  const StepRecord& last = episode.steps.back();
  Pose final_pose = last.pose.to_pose();
  std::vector<GraspSample> samples;
  samples.reserve(episode.steps.size());
  for (const StepRecord& step : episode.steps) {
    Pose p = step.pose.to_pose();
    double dtheta = normalize_angle(final_pose.theta - p.theta);
    GraspSample s;
    s.pregrasp = &episode.pregrasp;
    s.current = &step.image;
    s.displacement = MotorCommand::encode(
        final_pose.x - p.x, final_pose.y - p.y, final_pose.z - p.z, dtheta);
    s.label = episode.label;
    samples.push_back(s);
  }
  return samples;
}

std::vector<GraspSample> episodes_to_samples(
    const std::vector<Episode>& episodes) {
  std::vector<GraspSample> all;
  for (const Episode& ep : episodes) {
    std::vector<GraspSample> s = episode_to_samples(ep);
    all.insert(all.end(), s.begin(), s.end());
  }
  return all;
}

}  // namespace sg
