#include "servograsp/eval_harness.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "servograsp/errors.hpp"

namespace sg {

double ProtocolResult::failure_rate() const {
  if (attempts.empty()) return 0.0;
  int failures = 0;
  for (const AttemptRecord& a : attempts) failures += a.label == 0 ? 1 : 0;
  return static_cast<double>(failures) / static_cast<double>(attempts.size());
}

double ProtocolResult::failure_at(int k) const {
  int counted = 0, failures = 0;
  std::map<uint64_t, int> seen;  // per-repetition attempt counter
  for (const AttemptRecord& a : attempts) {
    int idx = seen[a.seed]++;
    if (idx >= k) continue;
    ++counted;
    failures += a.label == 0 ? 1 : 0;
  }
  return counted == 0 ? 0.0
                      : static_cast<double>(failures) /
                            static_cast<double>(counted);
}

int ProtocolResult::repetitions() const {
  std::set<uint64_t> seeds;
  for (const AttemptRecord& a : attempts) seeds.insert(a.seed);
  return static_cast<int>(seeds.size());
}

namespace {

AttemptRecord record_attempt(const Episode& ep, uint64_t seed, int attempt) {
  AttemptRecord r;
  r.seed = seed;
  r.attempt = attempt;
  r.label = ep.label;
  r.truth = ep.truth;
  r.steps = static_cast<int>(ep.steps.size());
  for (const StepRecord& s : ep.steps) {
    switch (s.decision.branch) {
      case 'c': ++r.close_branches; break;
      case 'm': ++r.move_branches; break;
      case 'r': ++r.raise_branches; break;
      case 'x':
      case 'f': ++r.scripted_branches; break;
      default: break;  // terminal
    }
  }
  return r;
}

}  // namespace

ProtocolResult eval_with_replacement(const std::string& name,
                                     const PolicyFn& policy,
                                     const EvalConfig& cfg, int attempts,
                                     uint64_t seed) {
  ProtocolResult result;
  result.policy = name;
  result.protocol = "with_replacement";
  Rng var_rng(derive_seed(seed, 0x766172u));
  RobotVariation variation = draw_variation(cfg.fleet, var_rng);
  WorldState world =
      spawn_scene(cfg.scene, derive_seed(seed, 0x73636eu), variation);
  Rng protocol_rng(derive_seed(seed, 0x70726fu));
  for (int a = 0; a < attempts; ++a) {
    uint64_t ep_seed = derive_seed(seed, 0x617474u, a);
    Rng rng(ep_seed);
    Episode ep = policy(world, rng, ep_seed);
    result.attempts.push_back(record_attempt(ep, seed, a));
    if (ep.grasped_object >= 0) {
      return_to_bin(world, ep.grasped_object, protocol_rng);
    }
  }
  return result;
}

ProtocolResult eval_without_replacement(const std::string& name,
                                        const PolicyFn& policy,
                                        const EvalConfig& cfg,
                                        int repetitions, int attempts,
                                        uint64_t seed) {
  ProtocolResult result;
  result.policy = name;
  result.protocol = "without_replacement";
  for (int rep = 0; rep < repetitions; ++rep) {
    uint64_t rep_seed = derive_seed(seed, 0x726570u, rep);
    Rng var_rng(derive_seed(rep_seed, 0x766172u));
    RobotVariation variation = draw_variation(cfg.fleet, var_rng);
    WorldState world =
        spawn_scene(cfg.scene, derive_seed(rep_seed, 0x73636eu), variation);
    for (int a = 0; a < attempts && !world.objects.empty(); ++a) {
      uint64_t ep_seed = derive_seed(rep_seed, 0x617474u, a);
      Rng rng(ep_seed);
      Episode ep = policy(world, rng, ep_seed);
      result.attempts.push_back(record_attempt(ep, rep_seed, a));
      if (ep.grasped_object >= 0) {
        remove_object(world, ep.grasped_object);
      }
    }
  }
  return result;
}

std::vector<AblationRow> data_ablation(const Dataset& dataset,
                                       const AblationConfig& cfg) {
  std::vector<AblationRow> rows;
  for (double fraction : cfg.fractions) {
    Dataset slice = dataset_slice(dataset, fraction);
    std::vector<GraspSample> samples = episodes_to_samples(slice.episodes);
    Network net =
        build_network(cfg.arch, derive_seed(cfg.seed, 0x6e6574u));
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, 0x74726eu);
    net = train_network(std::move(net), samples, tc);
    NetPredictor predictor(net);
    ServoConfig servo = cfg.servo;
    DetectConfig detect = cfg.eval.detect;
    PolicyFn policy = [&](WorldState& world, Rng& rng, uint64_t ep_seed) {
      return run_servo_episode(world, predictor, servo, detect, rng, 0,
                               ep_seed);
    };
    ProtocolResult res = eval_without_replacement(
        "servo", policy, cfg.eval, cfg.eval.repetitions,
        cfg.eval.without_replacement_attempts,
        derive_seed(cfg.seed, 0x6576u));
    AblationRow row;
    row.fraction = fraction;
    row.episodes = slice.episodes.size();
    row.samples = slice.total_samples();
    row.fail_10 = res.failure_at(10);
    row.fail_20 = res.failure_at(20);
    row.fail_30 = res.failure_at(30);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Reports.

std::vector<std::string> table_policy_order() {
  return {"random", "geometric", "open-loop", "servo"};
}

namespace {

const char* display_name(const std::string& policy) {
  if (policy == "geometric") return "hand-designed";
  if (policy == "open-loop") return "open loop";
  if (policy == "servo") return "our method";
  return policy.c_str();
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", v * 100.0);
  return buf;
}

}  // namespace

void emit_report(const std::vector<ProtocolResult>& results,
                 const std::vector<AblationRow>& ablation,
                 const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("emit_report: cannot create " + dir);

  // Per-attempt records.
  {
    std::ofstream os(dir + "/results.txt", std::ios::trunc);
    if (!os) throw IoError("emit_report: cannot write results.txt");
    for (const ProtocolResult& r : results) {
      for (const AttemptRecord& a : r.attempts) {
        os << "policy=" << r.policy << " protocol=" << r.protocol
           << " seed=" << a.seed << " attempt=" << a.attempt
           << " label=" << a.label << " truth=" << a.truth
           << " steps=" << a.steps << " close=" << a.close_branches
           << " move=" << a.move_branches << " raise=" << a.raise_branches
           << " scripted=" << a.scripted_branches << "\n";
      }
    }
    if (!os) throw IoError("emit_report: write failed for results.txt");
  }

  // Human-readable failure tables in the paper's row order.
  {
    std::ofstream os(dir + "/table.txt", std::ios::trunc);
    if (!os) throw IoError("emit_report: cannot write table.txt");
    auto find = [&](const std::string& policy, const std::string& protocol)
        -> const ProtocolResult* {
      for (const ProtocolResult& r : results) {
        if (r.policy == policy && r.protocol == protocol) return &r;
      }
      return nullptr;
    };

    bool any_without = false, any_with = false;
    for (const ProtocolResult& r : results) {
      any_without |= r.protocol == "without_replacement";
      any_with |= r.protocol == "with_replacement";
    }
    if (any_without) {
      os << "without replacement      first 10     first 20     first 30\n";
      for (const std::string& p : table_policy_order()) {
        const ProtocolResult* r = find(p, "without_replacement");
        if (!r) continue;
        char line[160];
        std::snprintf(line, sizeof(line), "%-22s %10s %12s %12s\n",
                      display_name(p), pct(r->failure_at(10)).c_str(),
                      pct(r->failure_at(20)).c_str(),
                      pct(r->failure_at(30)).c_str());
        os << line;
      }
      os << "\n";
    }
    if (any_with) {
      os << "with replacement         failure rate\n";
      for (const std::string& p : table_policy_order()) {
        const ProtocolResult* r = find(p, "with_replacement");
        if (!r) continue;
        char line[160];
        std::snprintf(line, sizeof(line), "%-22s %10s  (N = %zu)\n",
                      display_name(p), pct(r->failure_rate()).c_str(),
                      r->attempts.size());
        os << line;
      }
      os << "\n";
    }
    if (!ablation.empty()) {
      os << "dataset-size ablation (without replacement)\n";
      os << "fraction   samples M   first 10   first 20   first 30\n";
      for (const AblationRow& row : ablation) {
        char line[160];
        std::snprintf(line, sizeof(line),
                      "%7.0f%% %11zu %10s %10s %10s\n", row.fraction * 100.0,
                      row.samples, pct(row.fail_10).c_str(),
                      pct(row.fail_20).c_str(), pct(row.fail_30).c_str());
        os << line;
      }
    }
    if (!os) throw IoError("emit_report: write failed for table.txt");
  }

  // Plot series.
  {
    std::ofstream os(dir + "/series.csv", std::ios::trunc);
    if (!os) throw IoError("emit_report: cannot write series.csv");
    os << "series,policy,x,y\n";
    for (const ProtocolResult& r : results) {
      // Cumulative failure rate vs attempt count.
      std::map<uint64_t, int> seen;
      int failures = 0, counted = 0;
      for (const AttemptRecord& a : r.attempts) {
        (void)seen;
        ++counted;
        failures += a.label == 0 ? 1 : 0;
        char line[160];
        std::snprintf(line, sizeof(line), "failure_vs_attempts,%s:%s,%d,%.6f\n",
                      r.policy.c_str(), r.protocol.c_str(), counted,
                      static_cast<double>(failures) / counted);
        os << line;
      }
    }
    for (const AblationRow& row : ablation) {
      char line[160];
      std::snprintf(line, sizeof(line), "failure_vs_fraction,servo,%.4f,%.6f\n",
                    row.fraction, row.fail_30);
      os << line;
    }
    if (!os) throw IoError("emit_report: write failed for series.csv");
  }
}

}  // namespace sg
