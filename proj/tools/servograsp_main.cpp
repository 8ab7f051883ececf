#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "servograsp/config.hpp"
#include "servograsp/errors.hpp"
#include "servograsp/thread_pool.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace sg;

namespace {

constexpr size_t kEpisodesPerShard = 1000;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
  int workers = -1;
};

PipelineConfig load_config(const CommonArgs& args) {
  PipelineConfig cfg = args.config_path.empty()
                           ? PipelineConfig::defaults()
                           : PipelineConfig::load(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  if (args.workers >= 0) cfg.workers = args.workers;
  ThreadPool::set_workers(cfg.workers == 0 ? ThreadPool::workers()
                                           : cfg.workers);
  return cfg;
}

std::string shard_name(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "episodes_%05zu.sgds", index);
  return buf;
}

void cmd_collect(const CommonArgs& args) {
  PipelineConfig cfg = load_config(args);
  fs::create_directories(cfg.output_dir);
  CollectionResult result = run_collection(cfg.collection());

  json manifest;
  manifest["format"] = "servograsp-dataset";
  manifest["version"] = 1;
  manifest["seed"] = cfg.seed;
  manifest["episodes"] = result.dataset.episodes.size();
  manifest["samples"] = result.dataset.total_samples();
  json sched = json::array();
  for (const Phase& p : cfg.schedule.phases) {
    sched.push_back({{"policy", p.policy == Phase::Policy::Random
                                    ? "random"
                                    : "eps_greedy"},
                     {"epsilon", p.epsilon},
                     {"budget", p.budget},
                     {"T", p.max_steps},
                     {"refit", p.refit_after}});
  }
  manifest["schedule"] = sched;
  json robots = json::array();
  for (const RobotVariation& r : result.robots) {
    robots.push_back({{"camera_offset", {r.camera_offset.x, r.camera_offset.y}},
                      {"camera_rotation", r.camera_rotation},
                      {"camera_scale", r.camera_scale},
                      {"finger_length_wear", r.finger_length_wear},
                      {"finger_width_wear", r.finger_width_wear},
                      {"actuation_noise_sigma", r.actuation_noise_sigma}});
  }
  manifest["robots"] = robots;
  manifest["phase_success_rates"] = result.phase_success_rates;

  json shards = json::array();
  const std::vector<Episode>& eps = result.dataset.episodes;
  for (size_t start = 0, idx = 0; start < eps.size();
       start += kEpisodesPerShard, ++idx) {
    size_t n = std::min(kEpisodesPerShard, eps.size() - start);
    std::vector<Episode> block(eps.begin() + start, eps.begin() + start + n);
    std::string name = shard_name(idx);
    write_shard(block, cfg.output_dir + "/" + name);
    shards.push_back({{"file", name}, {"episodes", n}});
  }
  if (eps.empty()) {
    write_shard({}, cfg.output_dir + "/" + shard_name(0));
    shards.push_back({{"file", shard_name(0)}, {"episodes", 0}});
  }
  manifest["shards"] = shards;

  std::ofstream os(cfg.output_dir + "/manifest.json", std::ios::trunc);
  if (!os) throw IoError("collect: cannot write manifest.json");
  os << manifest.dump(2) << "\n";
  std::cout << "collected " << eps.size() << " episodes ("
            << result.dataset.total_samples() << " samples) into "
            << cfg.output_dir << "\n";
  for (size_t i = 0; i < result.phase_success_rates.size(); ++i) {
    std::cout << "phase " << i + 1 << " success rate "
              << result.phase_success_rates[i] << "\n";
  }
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw IoError("dataset: cannot open " + dir + "/manifest.json");
  json manifest = json::parse(is, nullptr, false);
  if (manifest.is_discarded() || !manifest.contains("shards")) {
    throw FormatError("dataset: malformed manifest in " + dir);
  }
  Dataset ds;
  for (const json& shard : manifest["shards"]) {
    ShardReadResult r =
        read_shard(dir + "/" + shard["file"].get<std::string>());
    for (Episode& e : r.episodes) ds.episodes.push_back(std::move(e));
  }
  return ds;
}

// Seed derivations shared by train/eval/ablate so that the ablation's
// fraction-1.0 row reproduces a direct train+eval run.
uint64_t net_seed(uint64_t seed) { return derive_seed(seed, 0x6e6574u); }
uint64_t train_seed(uint64_t seed) { return derive_seed(seed, 0x74726eu); }
uint64_t eval_seed(uint64_t seed) { return derive_seed(seed, 0x6576u); }

void cmd_train(const CommonArgs& args, const std::string& dataset_dir) {
  PipelineConfig cfg = load_config(args);
  Dataset ds = load_dataset(dataset_dir);
  if (ds.episodes.empty()) throw ConfigError("train: dataset is empty");
  std::vector<GraspSample> samples = episodes_to_samples(ds.episodes);
  Network net = build_network(cfg.arch(), net_seed(cfg.seed));
  TrainConfig tc = cfg.train;
  tc.seed = train_seed(cfg.seed);
  std::vector<double> losses;
  net = train_network(std::move(net), samples, tc, &losses);
  fs::create_directories(cfg.output_dir);
  save_network(net, cfg.output_dir + "/model.sgnt");
  std::ofstream log(cfg.output_dir + "/train_log.txt", std::ios::trunc);
  log << "samples " << samples.size() << "\n";
  for (size_t e = 0; e < losses.size(); ++e) {
    char line[64];
    std::snprintf(line, sizeof(line), "epoch %zu loss %.6f\n", e + 1,
                  losses[e]);
    log << line;
  }
  std::cout << "trained on " << samples.size() << " samples; model at "
            << cfg.output_dir << "/model.sgnt\n";
}

void dump_episode_frames(const Episode& ep, const std::string& dir,
                         const std::string& tag) {
  fs::create_directories(dir);
  auto write_pgm = [&](const Image8& img, const std::string& name) {
    std::ofstream os(dir + "/" + name, std::ios::binary | std::ios::trunc);
    os << "P5\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.data.data()),
             static_cast<std::streamsize>(img.data.size()));
  };
  write_pgm(ep.pregrasp, tag + "_pregrasp.pgm");
  for (size_t t = 0; t < ep.steps.size(); ++t) {
    write_pgm(ep.steps[t].image,
              tag + "_step" + std::to_string(t + 1) + ".pgm");
  }
}

void cmd_eval(const CommonArgs& args, const std::string& model_path,
              const std::string& policies_csv, int dump_episodes) {
  PipelineConfig cfg = load_config(args);
  std::vector<std::string> policies;
  {
    std::istringstream is(policies_csv);
    std::string tok;
    while (std::getline(is, tok, ',')) {
      if (!tok.empty()) policies.push_back(tok);
    }
  }
  if (policies.empty()) throw ConfigError("eval: no policies given");

  std::optional<Network> net;
  for (const std::string& p : policies) {
    if (p != "random" && p != "servo" && p != "open-loop" && p != "geometric") {
      throw ConfigError("eval: unknown policy '" + p + "'");
    }
    if ((p == "servo" || p == "open-loop") && !net) {
      if (model_path.empty()) {
        throw ConfigError("eval: policy '" + p + "' needs --model");
      }
      net = load_network(model_path);
    }
  }

  EvalConfig ev = cfg.eval();
  std::optional<NetPredictor> predictor;
  if (net) predictor.emplace(*net);

  auto make_policy = [&](const std::string& name) -> PolicyFn {
    if (name == "random") {
      return [&](WorldState& w, Rng& rng, uint64_t seed) {
        return random_policy(w, cfg.servo.max_steps, cfg.detect, rng, 0, seed);
      };
    }
    if (name == "servo") {
      return [&](WorldState& w, Rng& rng, uint64_t seed) {
        return run_servo_episode(w, *predictor, cfg.servo, cfg.detect, rng, 0,
                                 seed);
      };
    }
    if (name == "open-loop") {
      return [&](WorldState& w, Rng& rng, uint64_t seed) {
        return open_loop_policy(w, *predictor, Calibration::of(w.variation),
                                cfg.servo, cfg.detect, rng, 0, seed);
      };
    }
    return [&](WorldState& w, Rng& rng, uint64_t seed) {
      return geometric_policy(w, Calibration::of(w.variation), cfg.geometric,
                              cfg.servo.max_steps, cfg.detect, rng, 0, seed);
    };
  };

  std::vector<ProtocolResult> results;
  uint64_t es = eval_seed(cfg.seed);
  for (const std::string& name : policies) {
    PolicyFn policy = make_policy(name);
    results.push_back(eval_with_replacement(
        name, policy, ev, ev.with_replacement_attempts, es));
    results.push_back(eval_without_replacement(
        name, policy, ev, ev.repetitions, ev.without_replacement_attempts,
        es));
    std::cout << name << ": with-replacement failure "
              << results[results.size() - 2].failure_rate()
              << ", without-replacement failure@30 "
              << results.back().failure_at(30) << "\n";
    if (dump_episodes > 0) {
      WorldState world = spawn_scene(ev.scene, derive_seed(es, 0x64756d70u),
                                     RobotVariation{});
      for (int k = 0; k < dump_episodes; ++k) {
        Rng rng(derive_seed(es, 0x6672616du, k));
        Episode ep = policy(world, rng, derive_seed(es, 0x6672616du, k));
        dump_episode_frames(ep, cfg.output_dir + "/frames",
                            name + "_" + std::to_string(k));
      }
    }
  }
  emit_report(results, {}, cfg.output_dir);
  std::cout << "report written to " << cfg.output_dir << "\n";
}

void cmd_ablate(const CommonArgs& args, const std::string& dataset_dir) {
  PipelineConfig cfg = load_config(args);
  Dataset ds = load_dataset(dataset_dir);
  if (ds.episodes.empty()) throw ConfigError("ablate: dataset is empty");
  for (double f : cfg.ablate_fractions) {
    if (f * static_cast<double>(ds.episodes.size()) < 1.0) {
      throw ConfigError("ablate: dataset too small for fraction " +
                        std::to_string(f));
    }
  }
  AblationConfig ac;
  ac.fractions = cfg.ablate_fractions;
  ac.arch = cfg.arch();
  ac.train = cfg.train;
  ac.servo = cfg.servo;
  ac.eval = cfg.eval();
  ac.seed = cfg.seed;
  std::vector<AblationRow> rows = data_ablation(ds, ac);
  emit_report({}, rows, cfg.output_dir);
  for (const AblationRow& r : rows) {
    std::cout << "fraction " << r.fraction << ": M = " << r.samples
              << ", failure@30 " << r.fail_30 << "\n";
  }
}

void cmd_report(const std::string& results_path, const std::string& out_dir) {
  std::ifstream is(results_path);
  if (!is) throw IoError("report: cannot open " + results_path);
  std::vector<ProtocolResult> results;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    AttemptRecord rec;
    std::string policy, protocol;
    while (ls >> tok) {
      size_t eq = tok.find('=');
      if (eq == std::string::npos) continue;
      std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
      if (k == "policy") policy = v;
      else if (k == "protocol") protocol = v;
      else if (k == "seed") rec.seed = std::stoull(v);
      else if (k == "attempt") rec.attempt = std::stoi(v);
      else if (k == "label") rec.label = std::stoi(v);
      else if (k == "truth") rec.truth = std::stoi(v);
      else if (k == "steps") rec.steps = std::stoi(v);
      else if (k == "close") rec.close_branches = std::stoi(v);
      else if (k == "move") rec.move_branches = std::stoi(v);
      else if (k == "raise") rec.raise_branches = std::stoi(v);
      else if (k == "scripted") rec.scripted_branches = std::stoi(v);
    }
    if (policy.empty()) {
      throw FormatError("report: malformed record line: " + line);
    }
    ProtocolResult* target = nullptr;
    for (ProtocolResult& r : results) {
      if (r.policy == policy && r.protocol == protocol) target = &r;
    }
    if (!target) {
      results.push_back({});
      target = &results.back();
      target->policy = policy;
      target->protocol = protocol;
    }
    target->attempts.push_back(rec);
  }
  emit_report(results, {}, out_dir);
  std::cout << "report written to " << out_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"servograsp: self-supervised grasping pipeline"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string dataset_dir, model_path, results_path;
  std::string policies = "random,geometric,open-loop,servo";
  int dump_episodes = 0;

  auto add_common = [&](CLI::App* sub, bool need_config) {
    auto* opt = sub->add_option("--config", common.config_path,
                                "pipeline config file");
    if (need_config) opt->check(CLI::ExistingFile);
    sub->add_option("--out", common.out_dir, "output directory");
    sub->add_option("--seed", common.seed, "seed override");
    sub->add_option("--workers", common.workers, "worker threads (0 = auto)");
  };

  CLI::App* collect = app.add_subcommand("collect", "run data collection");
  add_common(collect, true);

  CLI::App* train = app.add_subcommand("train", "train the grasp predictor");
  add_common(train, true);
  train->add_option("--dataset", dataset_dir, "dataset directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate policies");
  add_common(eval, true);
  eval->add_option("--model", model_path, "trained model file");
  eval->add_option("--policies", policies, "comma-separated policy names");
  eval->add_option("--dump-episodes", dump_episodes,
                   "render frames for this many episodes per policy");

  CLI::App* ablate = app.add_subcommand("ablate", "dataset-size ablation");
  add_common(ablate, true);
  ablate->add_option("--dataset", dataset_dir, "dataset directory")
      ->required();

  CLI::App* report = app.add_subcommand("report", "re-emit report files");
  report->add_option("--results", results_path, "results.txt path")
      ->required()
      ->check(CLI::ExistingFile);
  report->add_option("--out", common.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
    if (collect->parsed()) cmd_collect(common);
    if (train->parsed()) cmd_train(common, dataset_dir);
    if (eval->parsed()) cmd_eval(common, model_path, policies, dump_episodes);
    if (ablate->parsed()) cmd_ablate(common, dataset_dir);
    if (report->parsed()) cmd_report(results_path, common.out_dir);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
