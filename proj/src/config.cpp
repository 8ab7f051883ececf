#include "servograsp/config.hpp"

#include <charconv>
#include <limits>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "servograsp/errors.hpp"

namespace sg {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v, double lo,
                    double hi) {
  char* end = nullptr;
  double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0' || !std::isfinite(x)) {
    throw ConfigError("config: " + key + ": not a number: '" + v + "'");
  }
  if (x < lo || x > hi) {
    throw ConfigError("config: " + key + " = " + v + " outside [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return x;
}

long long parse_int(const std::string& key, const std::string& v,
                    long long lo, long long hi) {
  long long x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError("config: " + key + ": not an integer: '" + v + "'");
  }
  if (x < lo || x > hi) {
    throw ConfigError("config: " + key + " = " + v + " outside [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config: " + key + ": not a boolean: '" + v + "'");
}

// Held-out evaluation scene: shapes, softness, and albedo parameters
// disjoint from the collection scene.
SceneConfig default_eval_scene() {
  SceneConfig s;
  s.min_objects = s.max_objects = 10;
  s.min_len = 0.036;
  s.max_len = 0.080;
  s.disc_weight = 0.30;
  s.rect_weight = 0.25;
  s.poly_weight = 0.30;
  s.thin_weight = 0.15;
  s.poly_min_verts = 5;
  s.poly_max_verts = 6;
  s.soft_prob = 0.30;
  s.soft_min = 0.86;
  s.soft_max = 0.95;
  s.albedo_min = 0.74;
  s.albedo_max = 0.95;
  s.height_min = 0.025;
  s.height_max = 0.065;
  return s;
}

void apply_scene(SceneConfig& s, const std::string& key,
                 const std::string& field, const std::string& v) {
  if (field == "min_objects") {
    s.min_objects = static_cast<int>(parse_int(key, v, 0, 64));
  } else if (field == "max_objects") {
    s.max_objects = static_cast<int>(parse_int(key, v, 0, 64));
  } else if (field == "min_len") {
    s.min_len = parse_double(key, v, 0.005, 0.3);
  } else if (field == "max_len") {
    s.max_len = parse_double(key, v, 0.005, 0.3);
  } else if (field == "disc_weight") {
    s.disc_weight = parse_double(key, v, 0.0, 1.0);
  } else if (field == "rect_weight") {
    s.rect_weight = parse_double(key, v, 0.0, 1.0);
  } else if (field == "poly_weight") {
    s.poly_weight = parse_double(key, v, 0.0, 1.0);
  } else if (field == "thin_weight") {
    s.thin_weight = parse_double(key, v, 0.0, 1.0);
  } else if (field == "poly_min_verts") {
    s.poly_min_verts = static_cast<int>(parse_int(key, v, 3, 12));
  } else if (field == "poly_max_verts") {
    s.poly_max_verts = static_cast<int>(parse_int(key, v, 3, 12));
  } else if (field == "thin_width_min") {
    s.thin_width_min = parse_double(key, v, 0.002, 0.02);
  } else if (field == "thin_width_max") {
    s.thin_width_max = parse_double(key, v, 0.002, 0.02);
  } else if (field == "soft_prob") {
    s.soft_prob = parse_double(key, v, 0.0, 1.0);
  } else if (field == "soft_min") {
    s.soft_min = parse_double(key, v, 0.5, 1.0);
  } else if (field == "soft_max") {
    s.soft_max = parse_double(key, v, 0.5, 1.0);
  } else if (field == "albedo_min") {
    s.albedo_min = parse_double(key, v, 0.35, 0.98);
  } else if (field == "albedo_max") {
    s.albedo_max = parse_double(key, v, 0.35, 0.98);
  } else if (field == "height_min") {
    s.height_min = parse_double(key, v, 0.005, 0.15);
  } else if (field == "height_max") {
    s.height_max = parse_double(key, v, 0.005, 0.15);
  } else if (field == "bin_half") {
    s.bin_half = parse_double(key, v, 0.08, 0.5);
  } else if (field == "image_hw") {
    s.image_hw = static_cast<int>(parse_int(key, v, 16, 512));
  } else if (field == "max_aperture") {
    s.max_aperture = parse_double(key, v, 0.02, 0.2);
  } else if (field == "finger_length") {
    s.finger_length = parse_double(key, v, 0.01, 0.2);
  } else if (field == "min_grasp_width") {
    s.min_grasp_width = parse_double(key, v, 0.0, 0.02);
  } else if (field == "pinch_compression") {
    s.pinch_compression = parse_double(key, v, 0.0, 1.0);
  } else if (field == "slip_gain") {
    s.slip_gain = parse_double(key, v, 0.0, 1.0);
  } else if (field == "push_gain") {
    s.push_gain = parse_double(key, v, 0.0, 3.0);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

void apply_fleet(FleetConfig& f, const std::string& key,
                 const std::string& field, const std::string& v) {
  if (field == "n_robots") {
    f.n_robots = static_cast<int>(parse_int(key, v, 1, 64));
  } else if (field == "camera_offset_max") {
    f.camera_offset_max = parse_double(key, v, 0.0, 0.05);
  } else if (field == "camera_rotation_max") {
    f.camera_rotation_max = parse_double(key, v, 0.0, 0.5);
  } else if (field == "camera_scale_jitter") {
    f.camera_scale_jitter = parse_double(key, v, 0.0, 0.3);
  } else if (field == "finger_length_wear_max") {
    f.finger_length_wear_max = parse_double(key, v, 0.0, 0.03);
  } else if (field == "finger_width_wear_max") {
    f.finger_width_wear_max = parse_double(key, v, 0.0, 0.01);
  } else if (field == "actuation_sigma") {
    f.actuation_sigma = parse_double(key, v, 0.0, 0.05);
  } else if (field == "actuation_sigma_jitter") {
    f.actuation_sigma_jitter = parse_double(key, v, 0.0, 1.0);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

Phase parse_phase(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  std::string policy;
  is >> policy;
  Phase p;
  if (policy == "random") {
    p.policy = Phase::Policy::Random;
    p.epsilon = 0.0;
  } else if (policy == "eps_greedy") {
    p.policy = Phase::Policy::EpsGreedy;
  } else {
    throw ConfigError("config: " + key + ": unknown policy '" + policy + "'");
  }
  std::string tok;
  bool have_budget = false, have_t = false;
  while (is >> tok) {
    size_t eq = tok.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: " + key + ": bad token '" + tok + "'");
    }
    std::string name = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (name == "budget") {
      p.budget = static_cast<int>(parse_int(key, val, 1, 1000000));
      have_budget = true;
    } else if (name == "T") {
      p.max_steps = static_cast<int>(parse_int(key, val, 2, 64));
      have_t = true;
    } else if (name == "eps") {
      p.epsilon = parse_double(key, val, 0.0, 1.0);
    } else if (name == "refit") {
      p.refit_after = parse_bool(key, val);
    } else {
      throw ConfigError("config: " + key + ": unknown field '" + name + "'");
    }
  }
  if (!have_budget || !have_t) {
    throw ConfigError("config: " + key + ": needs budget= and T=");
  }
  return p;
}

}  // namespace

ArchSpec PipelineConfig::arch() const {
  ArchSpec a = ArchSpec::scaled_default(net_input_hw, net_inject_mode);
  a.command_scale = net_command_scale;
  return a;
}

CollectionConfig PipelineConfig::collection() const {
  CollectionConfig c;
  c.fleet = fleet;
  c.scene = scene;
  c.schedule = schedule;
  c.servo = servo;
  c.detect = detect;
  c.arch = arch();
  c.refit_train = refit_train;
  c.seed = seed;
  return c;
}

EvalConfig PipelineConfig::eval() const {
  EvalConfig e;
  e.scene = eval_scene;
  e.fleet = eval_fleet;
  e.detect = detect;
  e.with_replacement_attempts = eval_with_replacement_attempts;
  e.without_replacement_attempts = eval_without_replacement_attempts;
  e.repetitions = eval_repetitions;
  return e;
}

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig c;
  c.eval_scene = default_eval_scene();
  c.schedule = default_schedule();
  c.train.epochs = 6;
  c.refit_train.epochs = 2;
  return c;
}

void PipelineConfig::apply(const std::string& raw_key,
                           const std::string& raw_value) {
  std::string key = trim(raw_key);
  std::string v = trim(raw_value);
  size_t dot = key.find('.');
  std::string section = dot == std::string::npos ? key : key.substr(0, dot);
  std::string rest = dot == std::string::npos ? "" : key.substr(dot + 1);

  if (key == "seed") {
    seed = static_cast<uint64_t>(
        parse_int(key, v, 0, std::numeric_limits<long long>::max()));
  } else if (key == "workers") {
    workers = static_cast<int>(parse_int(key, v, 0, 256));
  } else if (key == "output_dir") {
    output_dir = v;
  } else if (section == "scene") {
    apply_scene(scene, key, rest, v);
  } else if (section == "eval_scene") {
    apply_scene(eval_scene, key, rest, v);
  } else if (section == "fleet") {
    apply_fleet(fleet, key, rest, v);
  } else if (section == "eval_fleet") {
    apply_fleet(eval_fleet, key, rest, v);
  } else if (section == "detect") {
    if (rest == "aperture_threshold") {
      detect.aperture_threshold = parse_double(key, v, 0.0, 0.05);
    } else if (rest == "pixel_diff_threshold") {
      detect.pixel_diff_threshold = static_cast<int>(parse_int(key, v, 0, 4096));
    } else if (rest == "intensity_eps") {
      detect.intensity_eps = parse_double(key, v, 0.0, 1.0);
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } else if (section == "net") {
    if (rest == "input_hw") {
      net_input_hw = static_cast<int>(parse_int(key, v, 16, 512));
    } else if (rest == "inject_mode") {
      if (v == "add") {
        net_inject_mode = InjectMode::Add;
      } else if (v == "concat") {
        net_inject_mode = InjectMode::Concat;
      } else {
        throw ConfigError("config: net.inject_mode must be add or concat");
      }
    } else if (rest == "command_scale") {
      net_command_scale = parse_double(key, v, 0.1, 100.0);
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } else if (section == "train" || section == "refit") {
    TrainConfig& t = section == "train" ? train : refit_train;
    if (rest == "epochs") {
      t.epochs = static_cast<int>(parse_int(key, v, 1, 1000));
    } else if (rest == "batch_size") {
      t.batch_size = static_cast<int>(parse_int(key, v, 1, 1024));
    } else if (rest == "learning_rate") {
      t.learning_rate = parse_double(key, v, 0.0, 1.0);
    } else if (rest == "momentum") {
      t.momentum = parse_double(key, v, 0.0, 0.999);
    } else if (rest == "bn_momentum") {
      t.bn_momentum = parse_double(key, v, 0.0, 0.9999);
    } else if (rest == "augment_crop") {
      t.augment_crop = parse_bool(key, v);
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } else if (section == "cem") {
    CemConfig& m = servo.cem;
    if (rest == "n_samples") {
      m.n_samples = static_cast<int>(parse_int(key, v, 2, 4096));
    } else if (rest == "n_elite") {
      m.n_elite = static_cast<int>(parse_int(key, v, 1, 4096));
    } else if (rest == "n_iterations") {
      m.n_iterations = static_cast<int>(parse_int(key, v, 1, 64));
    } else if (rest == "sigma_xy") {
      m.sigma_xy = parse_double(key, v, 0.001, 1.0);
    } else if (rest == "sigma_z") {
      m.sigma_z = parse_double(key, v, 0.0, 1.0);
    } else if (rest == "sigma_theta") {
      m.sigma_theta = parse_double(key, v, 0.01, 3.2);
    } else if (rest == "sigma_floor") {
      m.sigma_floor = parse_double(key, v, 1e-6, 0.5);
    } else if (rest == "max_rejection_attempts") {
      m.max_rejection_attempts = static_cast<int>(parse_int(key, v, 1, 10000));
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } else if (section == "servo") {
    if (rest == "close_ratio") {
      servo.close_ratio = parse_double(key, v, 0.0, 1.0);
    } else if (rest == "raise_ratio") {
      servo.raise_ratio = parse_double(key, v, 0.0, 1.0);
    } else if (rest == "raise_band_lo") {
      servo.raise_band_lo = parse_double(key, v, 0.0, 0.3);
    } else if (rest == "raise_band_hi") {
      servo.raise_band_hi = parse_double(key, v, 0.0, 0.3);
    } else if (rest == "max_steps") {
      servo.max_steps = static_cast<int>(parse_int(key, v, 2, 64));
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } else if (section == "geometric") {
    if (rest == "height_eps") {
      geometric.height_eps = parse_double(key, v, 0.0, 0.1);
    } else if (rest == "max_graspable_width") {
      geometric.max_graspable_width = parse_double(key, v, 0.01, 0.3);
    } else if (rest == "min_pixels") {
      geometric.min_pixels = static_cast<int>(parse_int(key, v, 1, 1000));
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } else if (section == "eval") {
    if (rest == "with_replacement_attempts") {
      eval_with_replacement_attempts =
          static_cast<int>(parse_int(key, v, 1, 100000));
    } else if (rest == "without_replacement_attempts") {
      eval_without_replacement_attempts =
          static_cast<int>(parse_int(key, v, 1, 100000));
    } else if (rest == "repetitions") {
      eval_repetitions = static_cast<int>(parse_int(key, v, 1, 1000));
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } else if (key == "ablate.fractions") {
    std::vector<double> fr;
    std::istringstream is(v);
    std::string tok;
    while (std::getline(is, tok, ',')) {
      fr.push_back(parse_double(key, trim(tok), 0.0001, 1.0));
    }
    if (fr.empty()) throw ConfigError("config: ablate.fractions is empty");
    ablate_fractions = fr;
  } else if (section == "schedule") {
    if (rest.rfind("phase.", 0) != 0) {
      throw ConfigError("config: unknown key '" + key + "'");
    }
    size_t idx = static_cast<size_t>(
        parse_int(key, rest.substr(6), 1, 64));
    if (schedule.phases.size() < idx) schedule.phases.resize(idx);
    schedule.phases[idx - 1] = parse_phase(key, v);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path);
  PipelineConfig cfg = defaults();
  bool schedule_cleared = false;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    // Strip trailing comments ("value   # note").
    for (size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '#' && (i == 0 || line[i - 1] == ' ' ||
                             line[i - 1] == '\t')) {
        line.resize(i);
        break;
      }
    }
    std::string t = trim(line);
    if (t.empty()) continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    }
    std::string key = trim(t.substr(0, eq));
    // A config that specifies any schedule phase replaces the default
    // schedule entirely.
    if (!schedule_cleared && key.rfind("schedule.phase.", 0) == 0) {
      cfg.schedule.phases.clear();
      schedule_cleared = true;
    }
    cfg.apply(key, t.substr(eq + 1));
  }
  // Validate cross-field constraints.
  if (cfg.scene.max_objects < cfg.scene.min_objects ||
      cfg.eval_scene.max_objects < cfg.eval_scene.min_objects) {
    throw ConfigError("config: max_objects < min_objects");
  }
  if (cfg.scene.max_len < cfg.scene.min_len ||
      cfg.eval_scene.max_len < cfg.eval_scene.min_len) {
    throw ConfigError("config: max_len < min_len");
  }
  if (cfg.servo.cem.n_elite >= cfg.servo.cem.n_samples) {
    throw ConfigError("config: cem.n_elite must be < cem.n_samples");
  }
  if (cfg.servo.raise_band_hi < cfg.servo.raise_band_lo) {
    throw ConfigError("config: servo raise band inverted");
  }
  for (const Phase& p : cfg.schedule.phases) {
    if (p.budget <= 0) {
      throw ConfigError("config: schedule has an unset phase slot");
    }
  }
  return cfg;
}

}  // namespace sg
