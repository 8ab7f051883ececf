#include "servograsp/sim_world.hpp"

#include <algorithm>
#include <cassert>
#include <stdexcept>

#include "servograsp/errors.hpp"

namespace sg {

Footprint SimObject::footprint() const {
  if (is_disc) return Disc{position, radius};
  Poly p;
  p.verts.reserve(local_verts.size());
  for (const Vec2& v : local_verts) {
    p.verts.push_back(position + rotate(v, orientation));
  }
  return p;
}

const SimObject* WorldState::find_object(int id) const {
  for (const auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

SimObject* WorldState::find_object(int id) {
  for (auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

namespace {

double bounding_radius(const SimObject& obj) {
  if (obj.is_disc) return obj.radius;
  double r = 0.0;
  for (const Vec2& v : obj.local_verts) r = std::max(r, v.norm());
  return r;
}

// Convex polygon with vertices on a jittered ellipse; angular order on a
// convex curve guarantees convexity.
std::vector<Vec2> make_ellipse_polygon(Rng& rng, int k, double a, double b) {
  std::vector<Vec2> verts;
  verts.reserve(k);
  for (int i = 0; i < k; ++i) {
    double phi = 2.0 * std::numbers::pi *
                 (static_cast<double>(i) + rng.uniform(0.15, 0.85)) /
                 static_cast<double>(k);
    verts.push_back({a * std::cos(phi), b * std::sin(phi)});
  }
  Vec2 c = polygon_centroid(verts);
  for (Vec2& v : verts) v = v - c;
  return verts;
}

std::vector<Vec2> make_rect_verts(double major, double minor) {
  double hu = major / 2.0, hn = minor / 2.0;
  return {{-hu, -hn}, {hu, -hn}, {hu, hn}, {-hu, hn}};
}

double max_pairwise_distance(const std::vector<Vec2>& verts) {
  double best = 0.0;
  for (size_t i = 0; i < verts.size(); ++i) {
    for (size_t j = i + 1; j < verts.size(); ++j) {
      best = std::max(best, (verts[i] - verts[j]).norm());
    }
  }
  return best;
}

SimObject draw_object(const SceneConfig& cfg, Rng& rng, int id) {
  SimObject obj;
  obj.id = id;
  double wsum =
      cfg.disc_weight + cfg.rect_weight + cfg.poly_weight + cfg.thin_weight;
  double pick = rng.uniform() * wsum;
  double len = rng.uniform(cfg.min_len, cfg.max_len);
  if (pick < cfg.disc_weight) {
    obj.is_disc = true;
    obj.radius = len / 2.0;
    obj.longest_axis = len;
  } else if (pick < cfg.disc_weight + cfg.rect_weight) {
    obj.is_disc = false;
    double minor = std::max(0.012, len * rng.uniform(0.35, 0.8));
    obj.local_verts = make_rect_verts(len, minor);
    obj.longest_axis = len;
  } else if (pick < cfg.disc_weight + cfg.rect_weight + cfg.poly_weight) {
    obj.is_disc = false;
    int k = cfg.poly_min_verts +
            static_cast<int>(rng.index(
                static_cast<size_t>(cfg.poly_max_verts - cfg.poly_min_verts) +
                1));
    double b = len / 2.0 * rng.uniform(0.55, 1.0);
    std::vector<Vec2> verts = make_ellipse_polygon(rng, k, len / 2.0, b);
    double d = max_pairwise_distance(verts);
    double s = d > 0.0 ? len / d : 1.0;
    for (Vec2& v : verts) v = v * s;
    obj.local_verts = verts;
    obj.longest_axis = len;
  } else {
    // Thin strip: wide enough to see, too thin for the gripper-position
    // success test.
    obj.is_disc = false;
    double minor = rng.uniform(cfg.thin_width_min, cfg.thin_width_max);
    obj.local_verts = make_rect_verts(len, minor);
    obj.longest_axis = len;
  }
  obj.softness = rng.bernoulli(cfg.soft_prob)
                     ? rng.uniform(cfg.soft_min, cfg.soft_max)
                     : 0.0;
  obj.albedo = rng.uniform(cfg.albedo_min, cfg.albedo_max);
  obj.height = rng.uniform(cfg.height_min, cfg.height_max);
  obj.orientation = rng.uniform(-std::numbers::pi, std::numbers::pi);
  return obj;
}

}  // namespace

WorldState spawn_scene(const SceneConfig& config, uint64_t seed,
                       const RobotVariation& variation) {
  if (config.min_objects < 0 || config.max_objects < config.min_objects) {
    throw ConfigError("spawn_scene: bad object count range");
  }
  WorldState world;
  world.params = config;
  world.variation = variation;
  world.rng_seed = seed;
  world.rng = Rng(derive_seed(seed, 0x736365u));  // scene stream
  Rng place_rng(derive_seed(seed, 0x706c63u));    // placement stream

  world.gripper.pose = Pose{0.0, 0.0, config.home_z, 0.0};
  world.gripper.aperture = config.max_aperture;

  int count = config.min_objects +
              static_cast<int>(world.rng.index(
                  static_cast<size_t>(config.max_objects - config.min_objects) +
                  1));
  for (int i = 0; i < count; ++i) {
    SimObject obj = draw_object(config, world.rng, i);
    double br = bounding_radius(obj);
    Rect allowed = config.workspace().shrunk(config.wall_margin + br);
    if (allowed.lo.x >= allowed.hi.x || allowed.lo.y >= allowed.hi.y) {
      throw PlacementError("spawn_scene: object too large for the bin");
    }
    bool placed = false;
    for (int attempt = 0; attempt < config.placement_attempts; ++attempt) {
      obj.position = {place_rng.uniform(allowed.lo.x, allowed.hi.x),
                      place_rng.uniform(allowed.lo.y, allowed.hi.y)};
      Footprint fp = obj.footprint();
      bool clear = true;
      for (const SimObject& other : world.objects) {
        if (footprint_distance(fp, other.footprint()) <=
            config.placement_gap) {
          clear = false;
          break;
        }
      }
      if (clear) {
        placed = true;
        break;
      }
    }
    if (!placed) {
      throw PlacementError(
          "spawn_scene: could not place object " + std::to_string(i) +
          " after " + std::to_string(config.placement_attempts) + " attempts");
    }
    world.objects.push_back(std::move(obj));
  }
  return world;
}

void step(WorldState& world, const MotorCommand& cmd) {
  assert(cmd.is_valid());
  const SceneConfig& cfg = world.params;
  double dx = cmd.dx, dy = cmd.dy, dz = cmd.dz;
  double sigma = world.variation.actuation_noise_sigma;
  if (sigma > 0.0) {
    dx += world.rng.normal(0.0, sigma);
    dy += world.rng.normal(0.0, sigma);
    dz += world.rng.normal(0.0, sigma);
  }
  Pose start = world.gripper.pose;
  Pose end = start;
  Rect ws = cfg.workspace();
  end.x = std::clamp(start.x + dx, ws.lo.x, ws.hi.x);
  end.y = std::clamp(start.y + dy, ws.lo.y, ws.hi.y);
  end.z = std::clamp(start.z + dz, cfg.table_height, cfg.max_z);
  end.theta = normalize_angle(start.theta + cmd.dtheta());

  Vec2 motion = end.xy() - start.xy();
  double motion_len = motion.norm();
  double sweep_z = std::min(start.z, end.z);
  if (motion_len > 1e-12) {
    Vec2 dir = motion * (1.0 / motion_len);
    Rect margin_rect = ws.shrunk(cfg.wall_margin);
    for (SimObject& obj : world.objects) {
      if (world.gripper.holding && *world.gripper.holding == obj.id) continue;
      if (sweep_z >= obj.height) continue;
      double depth = segment_penetration(obj.footprint(), start.xy(), end.xy());
      if (depth <= 0.0) continue;
      obj.position = obj.position + dir * (cfg.push_gain * depth);
      obj.position = margin_rect.clamp(obj.position);
    }
  }
  if (world.gripper.holding) {
    if (SimObject* held = world.find_object(*world.gripper.holding)) {
      held->position = held->position + (end.xy() - start.xy());
    }
  }
  world.gripper.pose = end;
}

namespace {

float quantize(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::lround(v * 255.0)) / 255.0f;
}

struct Shader {
  const WorldState& world;
  std::vector<ObB> fingers;
  Disc hub;
  bool gripper_visible = false;
  const SimObject* held = nullptr;
  std::vector<const SimObject*> loose;  // height-descending draw order

  explicit Shader(const WorldState& w) : world(w) {
    const SceneConfig& cfg = w.params;
    gripper_visible = w.gripper.pose.z < cfg.visible_below_z;
    if (gripper_visible) {
      fingers = finger_footprints(cfg, w.variation, w.gripper.pose,
                                  w.gripper.aperture);
      hub = Disc{w.gripper.pose.xy(), 0.007};
    }
    if (w.gripper.holding) held = w.find_object(*w.gripper.holding);
    for (const SimObject& o : w.objects) {
      if (held && held->id == o.id) continue;
      loose.push_back(&o);
    }
    std::sort(loose.begin(), loose.end(),
              [](const SimObject* a, const SimObject* b) {
                if (a->height != b->height) return a->height > b->height;
                return a->id < b->id;
              });
  }

  double shade(const Vec2& q) const {
    const SceneConfig& cfg = world.params;
    if (gripper_visible) {
      for (const ObB& f : fingers) {
        Vec2 n{-f.u.y, f.u.x};
        Vec2 rel = q - f.center;
        if (std::abs(rel.dot(f.u)) <= f.half_u &&
            std::abs(rel.dot(n)) <= f.half_n) {
          return cfg.gripper_intensity;
        }
      }
      if ((q - hub.center).norm() <= hub.radius) return cfg.gripper_intensity;
      if (held && contains(held->footprint(), q)) return held->albedo;
    }
    for (const SimObject* o : loose) {
      if (contains(o->footprint(), q)) return o->albedo;
    }
    Rect ws = cfg.workspace();
    if (!ws.contains(q)) {
      Rect outer{{ws.lo.x - cfg.wall_thickness, ws.lo.y - cfg.wall_thickness},
                 {ws.hi.x + cfg.wall_thickness, ws.hi.y + cfg.wall_thickness}};
      if (outer.contains(q)) return cfg.wall_intensity;
    }
    return cfg.background_intensity;
  }
};

}  // namespace

Image render_through(const WorldState& world, const CameraView& camera) {
  const SceneConfig& cfg = world.params;
  int hw = cfg.image_hw;
  Image img = Image::zeros(hw, hw, cfg.image_channels);
  Rect view = cfg.view_rect();
  double px = view.width() / static_cast<double>(hw);
  Shader shader(world);
  double cs = std::cos(-camera.rotation), sn = std::sin(-camera.rotation);
  double inv_scale = 1.0 / camera.scale;
  // 2x2 supersampling: sub-pixel objects land as fractional intensities
  // instead of disappearing between pixel centers.
  const double sub[2] = {0.25, 0.75};
  for (int r = 0; r < hw; ++r) {
    for (int c = 0; c < hw; ++c) {
      double acc = 0.0;
      for (double fy : sub) {
        double vy = view.lo.y + (static_cast<double>(r) + fy) * px;
        for (double fx : sub) {
          double vx = view.lo.x + (static_cast<double>(c) + fx) * px;
          // Invert the camera transform: view = R(rot) * q * scale + offset.
          double ux = (vx - camera.offset.x) * inv_scale;
          double uy = (vy - camera.offset.y) * inv_scale;
          Vec2 q{cs * ux - sn * uy, sn * ux + cs * uy};
          acc += shader.shade(q);
        }
      }
      float v = quantize(acc / 4.0);
      for (int ch = 0; ch < cfg.image_channels; ++ch) img.at(r, c, ch) = v;
    }
  }
  return img;
}

Image render(const WorldState& world) {
  return render_through(world, CameraView{world.variation.camera_offset,
                                          world.variation.camera_rotation,
                                          world.variation.camera_scale});
}

Image render_heightmap(const WorldState& world) {
  const SceneConfig& cfg = world.params;
  int hw = cfg.image_hw;
  Image img = Image::zeros(hw, hw, 1);
  Rect view = cfg.view_rect();
  double px = view.width() / static_cast<double>(hw);
  for (int r = 0; r < hw; ++r) {
    double qy = view.lo.y + (static_cast<double>(r) + 0.5) * px;
    for (int c = 0; c < hw; ++c) {
      double qx = view.lo.x + (static_cast<double>(c) + 0.5) * px;
      double h = 0.0;
      for (const SimObject& o : world.objects) {
        if (world.gripper.holding && *world.gripper.holding == o.id) continue;
        if (o.height > h && contains(o.footprint(), {qx, qy})) h = o.height;
      }
      img.at(r, c) = static_cast<float>(h);
    }
  }
  return img;
}

std::vector<ObB> finger_footprints(const SceneConfig& params,
                                   const RobotVariation& var, const Pose& pose,
                                   double aperture) {
  double fw = std::max(0.004, params.finger_width - var.finger_width_wear);
  double fl = std::max(0.010, params.finger_length - var.finger_length_wear);
  Vec2 u{std::cos(pose.theta), std::sin(pose.theta)};
  Vec2 c = pose.xy();
  double off = aperture / 2.0 + fw / 2.0;
  return {ObB{c + u * off, u, fw / 2.0, fl / 2.0},
          ObB{c - u * off, u, fw / 2.0, fl / 2.0}};
}

GraspOutcome close_gripper(WorldState& world) {
  const SceneConfig& cfg = world.params;
  const double aperture = world.gripper.aperture;
  const Pose& pose = world.gripper.pose;
  Vec2 u{std::cos(pose.theta), std::sin(pose.theta)};
  Vec2 n{-u.y, u.x};
  Vec2 c = pose.xy();
  double eff_len =
      std::max(0.010, cfg.finger_length - world.variation.finger_length_wear);
  std::vector<ObB> fingers =
      finger_footprints(cfg, world.variation, pose, aperture);

  auto finger_hits_rigid = [&](const ObB& f, int skip_id) {
    for (const SimObject& o : world.objects) {
      if (o.id == skip_id || o.softness >= 0.5) continue;
      if (overlaps(f, o.footprint())) return true;
    }
    return false;
  };

  struct Candidate {
    int id;
    double width;
    double softness;
    double dist;
  };
  std::vector<Candidate> candidates;
  for (const SimObject& obj : world.objects) {
    Footprint fp = obj.footprint();
    double lo, hi;
    project_extent(fp, c, u, lo, hi);
    double w = hi - lo;
    bool between = lo > -aperture / 2.0 && hi < aperture / 2.0;
    double nlo, nhi;
    project_extent(fp, c, n, nlo, nhi);
    bool lateral = nlo < eff_len / 2.0 && nhi > -eff_len / 2.0;
    bool width_ok = w >= cfg.min_grasp_width && w <= aperture;

    bool f0_clear = !finger_hits_rigid(fingers[0], obj.id);
    bool f1_clear = !finger_hits_rigid(fingers[1], obj.id);
    bool rigid_self_clear =
        obj.softness >= 0.5 ||
        (!overlaps(fingers[0], fp) && !overlaps(fingers[1], fp));
    bool sweep_grasp = between && lateral && width_ok && f0_clear && f1_clear &&
                       rigid_self_clear;

    bool pinch_grasp = false;
    if (obj.softness >= 0.5) {
      bool in0 = overlaps(fingers[0], fp);
      bool in1 = overlaps(fingers[1], fp);
      pinch_grasp = (in0 != in1) && f0_clear && f1_clear;
    }
    if (sweep_grasp || pinch_grasp) {
      candidates.push_back(
          {obj.id, w, obj.softness, (centroid(fp) - c).norm()});
    }
  }
  if (candidates.empty()) {
    world.gripper.aperture = 0.0;
    return GraspOutcome{std::nullopt, 0.0};
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) {
              if (a.dist != b.dist) return a.dist < b.dist;
              return a.id < b.id;
            });
  const Candidate& best = candidates.front();
  if (cfg.slip_gain > 0.0) {
    double p_slip =
        std::clamp(cfg.slip_gain * (best.width / aperture), 0.0, 1.0);
    if (world.rng.uniform() < p_slip) {
      world.gripper.aperture = 0.0;
      return GraspOutcome{std::nullopt, 0.0};
    }
  }
  double final_aperture = std::clamp(
      best.width * (1.0 - best.softness * cfg.pinch_compression), 0.0,
      cfg.max_aperture);
  world.gripper.holding = best.id;
  world.gripper.aperture = final_aperture;
  return GraspOutcome{best.id, final_aperture};
}

void raise_out_of_view(WorldState& world) {
  Pose home{0.0, 0.0, world.params.home_z, world.gripper.pose.theta};
  if (world.gripper.holding) {
    if (SimObject* held = world.find_object(*world.gripper.holding)) {
      held->position = held->position + (home.xy() - world.gripper.pose.xy());
    }
  }
  world.gripper.pose = home;
}

void drop_held(WorldState& world) {
  if (!world.gripper.holding) return;
  SimObject* held = world.find_object(*world.gripper.holding);
  if (!held) {
    world.gripper.holding.reset();
    return;
  }
  const SceneConfig& cfg = world.params;
  Rect margin_rect = cfg.workspace().shrunk(cfg.wall_margin);
  const double s = 0.045;
  const Vec2 ring[] = {{0, 0},   {s, 0},    {-s, 0},  {0, s},   {0, -s},
                       {s, s},   {-s, s},   {s, -s},  {-s, -s}, {2 * s, 0},
                       {-2 * s, 0}, {0, 2 * s}, {0, -2 * s}};
  Vec2 base = margin_rect.clamp(world.gripper.pose.xy());
  Vec2 chosen = base;
  for (const Vec2& off : ring) {
    Vec2 cand = margin_rect.clamp(base + off);
    SimObject probe = *held;
    probe.position = cand;
    bool clear = true;
    for (const SimObject& other : world.objects) {
      if (other.id == held->id) continue;
      if (footprint_distance(probe.footprint(), other.footprint()) <= 0.002) {
        clear = false;
        break;
      }
    }
    if (clear) {
      chosen = cand;
      break;
    }
  }
  held->position = chosen;
  world.gripper.holding.reset();
  world.gripper.aperture = cfg.max_aperture;
}

void remove_object(WorldState& world, int id) {
  if (world.gripper.holding && *world.gripper.holding == id) {
    world.gripper.holding.reset();
    world.gripper.aperture = world.params.max_aperture;
  }
  std::erase_if(world.objects, [id](const SimObject& o) { return o.id == id; });
}

void return_to_bin(WorldState& world, int id, Rng& rng) {
  SimObject* obj = world.find_object(id);
  if (!obj) return;
  const SceneConfig& cfg = world.params;
  double br = bounding_radius(*obj);
  Rect allowed = cfg.workspace().shrunk(cfg.wall_margin + br);
  obj->orientation = rng.uniform(-std::numbers::pi, std::numbers::pi);
  for (int attempt = 0; attempt < cfg.placement_attempts; ++attempt) {
    Vec2 cand{rng.uniform(allowed.lo.x, allowed.hi.x),
              rng.uniform(allowed.lo.y, allowed.hi.y)};
    SimObject probe = *obj;
    probe.position = cand;
    bool clear = true;
    for (const SimObject& other : world.objects) {
      if (other.id == id) continue;
      if (footprint_distance(probe.footprint(), other.footprint()) <=
          cfg.placement_gap) {
        clear = false;
        break;
      }
    }
    if (clear) {
      obj->position = cand;
      return;
    }
  }
  // Crowded bin: accept the final draw.
  obj->position = {rng.uniform(allowed.lo.x, allowed.hi.x),
                   rng.uniform(allowed.lo.y, allowed.hi.y)};
}

int detect_success(const WorldState& world_before_drop,
                   const WorldState& world_after_drop,
                   const GraspOutcome& outcome, const DetectConfig& cfg) {
  if (outcome.final_aperture > cfg.aperture_threshold) return 1;
  Image before = render(world_before_drop);
  Image after = render(world_after_drop);
  if (!before.same_shape(after)) {
    throw std::invalid_argument("detect_success: image dimension mismatch");
  }
  int diff = 0;
  for (size_t i = 0; i < before.data.size(); ++i) {
    if (std::abs(before.data[i] - after.data[i]) > cfg.intensity_eps) ++diff;
  }
  return diff > cfg.pixel_diff_threshold ? 1 : 0;
}

CloseResult execute_close_and_label(WorldState& world,
                                    const DetectConfig& detect) {
  CloseResult result;
  result.outcome = close_gripper(world);
  result.truth = world.gripper.holding.has_value();
  raise_out_of_view(world);
  WorldState before = world;
  drop_held(world);
  // Count differing pixels once for telemetry, then apply the decision rule.
  Image img_before = render(before);
  Image img_after = render(world);
  if (!img_before.same_shape(img_after)) {
    throw std::invalid_argument("detect_success: image dimension mismatch");
  }
  for (size_t i = 0; i < img_before.data.size(); ++i) {
    if (std::abs(img_before.data[i] - img_after.data[i]) >
        detect.intensity_eps) {
      ++result.diff_pixels;
    }
  }
  bool aperture_hit = result.outcome.final_aperture > detect.aperture_threshold;
  result.label =
      (aperture_hit || result.diff_pixels > detect.pixel_diff_threshold) ? 1
                                                                         : 0;
  return result;
}

}  // namespace sg
