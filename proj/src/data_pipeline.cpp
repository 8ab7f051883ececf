#include "servograsp/data_pipeline.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>

#include "servograsp/errors.hpp"
#include "servograsp/thread_pool.hpp"

namespace sg {

RobotVariation draw_variation(const FleetConfig& cfg, Rng& rng) {
  RobotVariation v;
  v.camera_offset = {rng.uniform(-cfg.camera_offset_max, cfg.camera_offset_max),
                     rng.uniform(-cfg.camera_offset_max, cfg.camera_offset_max)};
  v.camera_rotation =
      rng.uniform(-cfg.camera_rotation_max, cfg.camera_rotation_max);
  v.camera_scale = rng.uniform(1.0 - cfg.camera_scale_jitter,
                               1.0 + cfg.camera_scale_jitter);
  v.finger_length_wear = rng.uniform(0.0, cfg.finger_length_wear_max);
  v.finger_width_wear = rng.uniform(0.0, cfg.finger_width_wear_max);
  v.actuation_noise_sigma =
      cfg.actuation_sigma * rng.uniform(1.0 - cfg.actuation_sigma_jitter,
                                        1.0 + cfg.actuation_sigma_jitter);
  return v;
}

CollectionSchedule default_schedule() {
  CollectionSchedule s;
  s.phases.push_back({Phase::Policy::Random, 0.0, 2000, 2, true});
  s.phases.push_back({Phase::Policy::EpsGreedy, 0.1, 1000, 4, true});
  s.phases.push_back({Phase::Policy::EpsGreedy, 0.1, 1000, 6, true});
  s.phases.push_back({Phase::Policy::EpsGreedy, 0.1, 1000, 8, true});
  s.phases.push_back({Phase::Policy::EpsGreedy, 0.1, 1000, 10, false});
  return s;
}

namespace {

Episode collect_one(const CollectionConfig& cfg,
                    const std::vector<RobotVariation>& robots,
                    const Network* snapshot, const Phase& phase,
                    uint64_t ordinal) {
  uint32_t robot = static_cast<uint32_t>(ordinal % robots.size());
  uint64_t world_seed = derive_seed(cfg.seed, 0x776f726cu, ordinal);
  uint64_t policy_seed = derive_seed(cfg.seed, 0x706f6cu, ordinal);
  WorldState world = spawn_scene(cfg.scene, world_seed, robots[robot]);
  Rng rng(policy_seed);

  Episode ep;
  if (phase.policy == Phase::Policy::Random) {
    Constraints cons = constraints_for(cfg.scene);
    StepPolicy random_policy =
        [&](const Image&, const Image&, const Pose& pose, int,
            DecisionRecord& telemetry) -> std::optional<MotorCommand> {
      telemetry.branch = 'x';
      return uniform_feasible_command(pose, cons, rng);
    };
    ep = run_policy_episode(world, phase.max_steps, cfg.detect, rng,
                            random_policy, robot, policy_seed);
  } else {
    NetPredictor predictor(*snapshot);
    ServoConfig servo = cfg.servo;
    servo.max_steps = phase.max_steps;
    Constraints cons = constraints_for(cfg.scene);
    StepPolicy greedy =
        [&](const Image& pregrasp, const Image& current, const Pose& pose,
            int, DecisionRecord& telemetry) -> std::optional<MotorCommand> {
      if (rng.bernoulli(phase.epsilon)) {
        telemetry.branch = 'x';
        return uniform_feasible_command(pose, cons, rng);
      }
      ServoDecision d =
          decide(predictor, pregrasp, current, pose, cons, servo, rng);
      telemetry.ratio = static_cast<float>(std::min(d.ratio, 1e6));
      telemetry.best_probability = static_cast<float>(d.best_probability);
      telemetry.null_probability = static_cast<float>(d.null_probability);
      telemetry.fallback_samples =
          static_cast<uint8_t>(std::min(d.fallback_count, 255));
      if (d.kind == ServoDecision::Kind::Close) {
        telemetry.branch = 'c';
        return std::nullopt;
      }
      telemetry.branch = d.kind == ServoDecision::Kind::Move ? 'm' : 'r';
      return d.command;
    };
    ep = run_policy_episode(world, phase.max_steps, cfg.detect, rng, greedy,
                            robot, policy_seed);
  }
  ep.collection_index = ordinal;
  return ep;
}

}  // namespace

CollectionResult run_collection(const CollectionConfig& cfg) {
  if (cfg.fleet.n_robots < 1) {
    throw ConfigError("run_collection: fleet needs at least one robot");
  }
  for (size_t i = 0; i < cfg.schedule.phases.size(); ++i) {
    const Phase& p = cfg.schedule.phases[i];
    if (p.budget <= 0) throw ConfigError("run_collection: phase budget <= 0");
    if (p.max_steps < 2) throw ConfigError("run_collection: phase T < 2");
    if (p.epsilon < 0.0 || p.epsilon > 1.0) {
      throw ConfigError("run_collection: epsilon outside [0,1]");
    }
  }

  CollectionResult result;
  Rng fleet_rng(derive_seed(cfg.seed, 0x666c74u));
  for (int r = 0; r < cfg.fleet.n_robots; ++r) {
    result.robots.push_back(draw_variation(cfg.fleet, fleet_rng));
  }

  uint64_t ordinal = 0;
  for (size_t pi = 0; pi < cfg.schedule.phases.size(); ++pi) {
    const Phase& phase = cfg.schedule.phases[pi];
    if (phase.policy == Phase::Policy::EpsGreedy && !result.snapshot) {
      throw ConfigError(
          "run_collection: eps_greedy phase " + std::to_string(pi + 1) +
          " has no network snapshot (no earlier refit)");
    }
    std::vector<Episode> block(static_cast<size_t>(phase.budget));
    const Network* snapshot =
        result.snapshot ? &*result.snapshot : nullptr;
    uint64_t base = ordinal;
    parallel_for(block.size(), [&](size_t k) {
      block[k] = collect_one(cfg, result.robots, snapshot, phase, base + k);
    });
    ordinal += block.size();

    double successes = 0.0;
    for (Episode& e : block) successes += e.label;
    result.phase_success_rates.push_back(successes /
                                         static_cast<double>(block.size()));
    for (Episode& e : block) {
      result.dataset.episodes.push_back(std::move(e));
    }

    if (phase.refit_after) {
      std::vector<GraspSample> samples =
          episodes_to_samples(result.dataset.episodes);
      Network net = build_network(
          cfg.arch, derive_seed(cfg.seed, 0x726566u, pi));
      TrainConfig tc = cfg.refit_train;
      tc.seed = derive_seed(cfg.seed, 0x74726eu, pi);
      result.snapshot = train_network(std::move(net), samples, tc);
      ++result.refits;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Shard IO.

namespace {

constexpr char kShardMagic[4] = {'S', 'G', 'D', 'S'};
constexpr uint32_t kShardVersion = 1;

struct ByteWriter {
  std::vector<uint8_t> bytes;
  void raw(const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  template <typename T>
  void pod(const T& v) {
    raw(&v, sizeof(T));
  }
};

struct ByteReader {
  const uint8_t* p;
  size_t n;
  size_t off = 0;
  bool raw(void* out, size_t k) {
    if (off + k > n) return false;
    std::memcpy(out, p + off, k);
    off += k;
    return true;
  }
  template <typename T>
  bool pod(T& v) {
    return raw(&v, sizeof(T));
  }
};

void encode_image(ByteWriter& w, const Image8& img) {
  w.raw(img.data.data(), img.data.size());
}

bool decode_image(ByteReader& r, int h, int wdt, int c, Image8& img) {
  img.height = h;
  img.width = wdt;
  img.channels = c;
  img.data.resize(static_cast<size_t>(h) * wdt * c);
  return r.raw(img.data.data(), img.data.size());
}

std::vector<uint8_t> encode_episode(const Episode& e) {
  ByteWriter w;
  w.pod(e.robot_id);
  w.pod(e.collection_index);
  w.pod(e.episode_seed);
  w.pod(e.label);
  w.pod(e.truth);
  w.pod(e.policy_observations);
  w.pod(e.grasped_object);
  uint16_t n_steps = static_cast<uint16_t>(e.steps.size());
  w.pod(n_steps);
  encode_image(w, e.pregrasp);
  for (const StepRecord& s : e.steps) {
    encode_image(w, s.image);
    w.pod(s.pose);
    w.pod(s.command);
    w.pod(s.decision.branch);
    w.pod(s.decision.ratio);
    w.pod(s.decision.best_probability);
    w.pod(s.decision.null_probability);
    w.pod(s.decision.fallback_samples);
  }
  return std::move(w.bytes);
}

bool decode_episode(const std::vector<uint8_t>& payload, int h, int wdt,
                    int c, Episode& e) {
  ByteReader r{payload.data(), payload.size()};
  uint16_t n_steps = 0;
  if (!r.pod(e.robot_id) || !r.pod(e.collection_index) ||
      !r.pod(e.episode_seed) || !r.pod(e.label) || !r.pod(e.truth) ||
      !r.pod(e.policy_observations) || !r.pod(e.grasped_object) ||
      !r.pod(n_steps)) {
    return false;
  }
  if (!decode_image(r, h, wdt, c, e.pregrasp)) return false;
  e.steps.resize(n_steps);
  for (StepRecord& s : e.steps) {
    if (!decode_image(r, h, wdt, c, s.image)) return false;
    if (!r.pod(s.pose) || !r.pod(s.command) || !r.pod(s.decision.branch) ||
        !r.pod(s.decision.ratio) || !r.pod(s.decision.best_probability) ||
        !r.pod(s.decision.null_probability) ||
        !r.pod(s.decision.fallback_samples)) {
      return false;
    }
  }
  return r.off == payload.size();
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t n) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) {
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
      }
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i) {
    c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  }
  return c ^ 0xFFFFFFFFu;
}

void write_shard(const std::vector<Episode>& episodes,
                 const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("write_shard: cannot open " + path);
  os.write(kShardMagic, 4);
  auto put = [&](auto v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  put(kShardVersion);
  uint32_t h = 0, w = 0, c = 0;
  if (!episodes.empty()) {
    h = episodes[0].pregrasp.height;
    w = episodes[0].pregrasp.width;
    c = episodes[0].pregrasp.channels;
  }
  put(h);
  put(w);
  put(c);
  put(static_cast<uint64_t>(episodes.size()));
  for (const Episode& e : episodes) {
    if (e.pregrasp.height != static_cast<int>(h) ||
        e.pregrasp.width != static_cast<int>(w)) {
      throw FormatError("write_shard: inconsistent image dims in episodes");
    }
    std::vector<uint8_t> payload = encode_episode(e);
    put(static_cast<uint32_t>(payload.size()));
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size()));
    put(crc32(payload.data(), payload.size()));
  }
  if (!os) throw IoError("write_shard: write failed for " + path);
}

ShardReadResult read_shard(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_shard: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kShardMagic, 4) != 0) {
    throw FormatError("read_shard: bad magic in " + path);
  }
  auto get = [&](auto& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return static_cast<bool>(is);
  };
  uint32_t version = 0;
  if (!get(version)) throw TruncationError("read_shard: truncated header");
  if (version != kShardVersion) {
    throw VersionError("read_shard: unsupported shard version " +
                       std::to_string(version));
  }
  uint32_t h = 0, w = 0, c = 0;
  uint64_t count = 0;
  if (!get(h) || !get(w) || !get(c) || !get(count)) {
    throw TruncationError("read_shard: truncated header in " + path);
  }
  ShardReadResult result;
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t len = 0;
    if (!get(len)) {
      result.dropped = static_cast<int>(count - i);
      break;
    }
    std::vector<uint8_t> payload(len);
    is.read(reinterpret_cast<char*>(payload.data()), len);
    uint32_t stored_crc = 0;
    if (!is || !get(stored_crc) ||
        stored_crc != crc32(payload.data(), payload.size())) {
      result.dropped = static_cast<int>(count - i);
      break;
    }
    Episode e;
    if (!decode_episode(payload, static_cast<int>(h), static_cast<int>(w),
                        static_cast<int>(c), e)) {
      result.dropped = static_cast<int>(count - i);
      break;
    }
    result.episodes.push_back(std::move(e));
  }
  if (result.dropped > 0) {
    std::cerr << "read_shard: dropped " << result.dropped
              << " corrupted trailing episode(s) from " << path << "\n";
  }
  return result;
}

Dataset dataset_slice(const Dataset& dataset, double fraction) {
  if (dataset.episodes.empty()) {
    throw std::invalid_argument("dataset_slice: empty dataset");
  }
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw std::invalid_argument("dataset_slice: fraction must be in (0, 1]");
  }
  size_t keep = static_cast<size_t>(
      std::ceil(fraction * static_cast<double>(dataset.episodes.size())));
  keep = std::min(keep, dataset.episodes.size());
  Dataset out;
  out.episodes.assign(dataset.episodes.begin(),
                      dataset.episodes.begin() + keep);
  return out;
}

}  // namespace sg
