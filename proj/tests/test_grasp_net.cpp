#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "servograsp/errors.hpp"
#include "servograsp/grasp_net.hpp"
#include "servograsp/rng.hpp"
#include "test_support.hpp"

using namespace sg;

namespace {

double loss_only(const Network& net, const TrainBatch& batch) {
  Network grad = net.zeros_like();
  return loss_and_grad(net, batch, grad);
}

// Central finite differences over every parameter of every block.
void check_gradients(Network& net, const TrainBatch& batch, double step,
                     double tol) {
  Network grad = net.zeros_like();
  loss_and_grad(net, batch, grad);
  double worst = 0.0;
  for (size_t p = 0; p < net.params.size(); ++p) {
    auto& w = net.params[p].v;
    for (size_t k = 0; k < w.size(); ++k) {
      double orig = w[k];
      w[k] = orig + step;
      double lp = loss_only(net, batch);
      w[k] = orig - step;
      double lm = loss_only(net, batch);
      w[k] = orig;
      double fd = (lp - lm) / (2.0 * step);
      double an = grad.params[p].v[k];
      double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      double rel = std::abs(fd - an) / denom;
      worst = std::max(worst, rel);
      if (rel >= tol) {
        CAPTURE(net.params[p].name);
        CAPTURE(k);
        CAPTURE(fd);
        CAPTURE(an);
      }
      REQUIRE(rel < tol);
    }
  }
  MESSAGE("max relative gradient error: ", worst);
}

Image uniform_image(int hw, float v) {
  Image img = Image::zeros(hw, hw, 1);
  for (float& x : img.data) x = v;
  return img;
}

Image random_image(int hw, uint64_t seed) {
  Rng rng(seed);
  Image img = Image::zeros(hw, hw, 1);
  for (float& x : img.data) x = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences (add mode)") {
  ArchSpec arch = test::tiny_arch(16, InjectMode::Add);
  Network net = build_network(arch, 11);
  TrainBatch batch = test::random_batch(arch, 4, 77);
  check_gradients(net, batch, 1e-5, 1e-4);
}

TEST_CASE("analytic gradients match central finite differences (concat mode)") {
  ArchSpec arch = test::tiny_arch(16, InjectMode::Concat);
  Network net = build_network(arch, 12);
  TrainBatch batch = test::random_batch(arch, 4, 78);
  check_gradients(net, batch, 1e-5, 1e-4);
}

TEST_CASE("seeded build is bit-identical") {
  ArchSpec arch = test::tiny_arch();
  Network a = build_network(arch, 3);
  Network b = build_network(arch, 3);
  REQUIRE(a.params.size() == b.params.size());
  for (size_t i = 0; i < a.params.size(); ++i) {
    REQUIRE(a.params[i].v == b.params[i].v);
  }
  Network c = build_network(arch, 4);
  bool any_diff = false;
  for (size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].v != c.params[i].v) any_diff = true;
  }
  REQUIRE(any_diff);
}

TEST_CASE("forward output lies strictly inside (0,1)") {
  ArchSpec arch = test::tiny_arch();
  Network net = build_network(arch, 5);
  Image i0 = random_image(16, 1);
  Image it = random_image(16, 2);
  double p = forward_eval(net, i0, it, MotorCommand::encode(0.05, 0, 0, 0.3));
  REQUIRE(p > 0.0);
  REQUIRE(p < 1.0);
}

TEST_CASE("mismatched architecture raises a named error") {
  ArchSpec arch = test::tiny_arch();
  arch.layers[4].units = 7;  // inject add with units != channels
  REQUIRE_THROWS_AS(build_network(arch, 1), ConfigError);
  try {
    build_network(arch, 1);
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("layer 5") != std::string::npos);
  }
}

TEST_CASE("command injection reaches the output; zeroed injection is inert") {
  ArchSpec arch = test::tiny_arch();
  Network net = build_network(arch, 9);
  Image i0 = random_image(16, 3);
  Image it = random_image(16, 4);
  MotorCommand a = MotorCommand::encode(0.08, -0.02, 0.0, 0.4);
  MotorCommand b = MotorCommand::encode(-0.05, 0.06, -0.01, -1.0);
  double pa = forward_eval(net, i0, it, a);
  double pb = forward_eval(net, i0, it, b);
  REQUIRE(pa != pb);

  // Zero the injection fc weights and bias: output becomes v-independent.
  for (size_t i = 0; i < net.arch.layers.size(); ++i) {
    if (net.arch.layers[i].kind == LayerSpec::Kind::Inject) {
      auto& W = net.params[net.refs[i].w].v;
      auto& bias = net.params[net.refs[i].b].v;
      std::fill(W.begin(), W.end(), 0.0);
      std::fill(bias.begin(), bias.end(), 0.0);
    }
  }
  REQUIRE(forward_eval(net, i0, it, a) == forward_eval(net, i0, it, b));
}

TEST_CASE("eval-mode forward is deterministic") {
  ArchSpec arch = test::tiny_arch();
  Network net = build_network(arch, 21);
  Image i0 = random_image(16, 5);
  Image it = random_image(16, 6);
  MotorCommand v = MotorCommand::encode(0.02, 0.03, -0.05, 0.2);
  double p1 = forward_eval(net, i0, it, v);
  double p2 = forward_eval(net, i0, it, v);
  REQUIRE(p1 == p2);
}

TEST_CASE("loss at p=0.5 is ln 2 and batch duplication is invariant") {
  ArchSpec arch = test::tiny_arch();
  Network net = build_network(arch, 31);
  // Zero the final fc so the logit is exactly 0 -> p = 0.5.
  size_t last_fc = 0;
  for (size_t i = 0; i < arch.layers.size(); ++i) {
    if (arch.layers[i].kind == LayerSpec::Kind::Fc) last_fc = i;
  }
  std::fill(net.params[net.refs[last_fc].w].v.begin(),
            net.params[net.refs[last_fc].w].v.end(), 0.0);
  std::fill(net.params[net.refs[last_fc].b].v.begin(),
            net.params[net.refs[last_fc].b].v.end(), 0.0);
  TrainBatch batch = test::random_batch(arch, 4, 91);
  Network grad = net.zeros_like();
  double loss = loss_and_grad(net, batch, grad);
  REQUIRE(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Duplicating the batch leaves loss and gradient unchanged.
  Network net2 = build_network(arch, 32);
  TrainBatch dup;
  dup.b = batch.b * 2;
  for (int rep = 0; rep < 2; ++rep) {
    dup.images.insert(dup.images.end(), batch.images.begin(),
                      batch.images.end());
    dup.commands.insert(dup.commands.end(), batch.commands.begin(),
                        batch.commands.end());
    dup.labels.insert(dup.labels.end(), batch.labels.begin(),
                      batch.labels.end());
  }
  Network g1 = net2.zeros_like();
  Network g2 = net2.zeros_like();
  double l1 = loss_and_grad(net2, batch, g1);
  double l2 = loss_and_grad(net2, dup, g2);
  REQUIRE(l1 == doctest::Approx(l2).epsilon(1e-12));
  for (size_t p = 0; p < g1.params.size(); ++p) {
    for (size_t k = 0; k < g1.params[p].v.size(); ++k) {
      REQUIRE(g1.params[p].v[k] ==
              doctest::Approx(g2.params[p].v[k]).epsilon(1e-9));
    }
  }
}

TEST_CASE("bad labels are rejected") {
  ArchSpec arch = test::tiny_arch();
  Network net = build_network(arch, 41);
  TrainBatch batch = test::random_batch(arch, 2, 5);
  batch.labels[1] = 2;
  Network grad = net.zeros_like();
  REQUIRE_THROWS_AS(loss_and_grad(net, batch, grad), std::invalid_argument);
}

TEST_CASE("crop semantics") {
  Image img = random_image(8, 13);
  SUBCASE("full-size crop is the identity") {
    Image c = random_crop(img, 8, 8, 4);
    REQUIRE(c.data == img.data);
    Image cc = center_crop(img, 8, 8);
    REQUIRE(cc.data == img.data);
  }
  SUBCASE("crop dims honored") {
    Image c = random_crop(img, 5, 5, 4);
    REQUIRE(c.height == 5);
    REQUIRE(c.width == 5);
  }
  SUBCASE("uniform image crops are all equal") {
    Image u = uniform_image(8, 0.25f);
    Image c1 = random_crop(u, 5, 5, 1);
    Image c2 = random_crop(u, 5, 5, 2);
    REQUIRE(c1.data == c2.data);
  }
  SUBCASE("oversized crop rejected") {
    REQUIRE_THROWS_AS(random_crop(img, 9, 9, 1), std::invalid_argument);
  }
  SUBCASE("same seed, same offset") {
    Image c1 = random_crop(img, 3, 3, 7);
    Image c2 = random_crop(img, 3, 3, 7);
    REQUIRE(c1.data == c2.data);
  }
}

TEST_CASE("training: lr=0 leaves params, moves bn stats; seeded determinism") {
  ArchSpec arch = test::tiny_arch();
  Network net = build_network(arch, 51);

  std::vector<Image8> imgs;
  Rng rng(99);
  for (int i = 0; i < 8; ++i) {
    imgs.push_back(Image8::from(random_image(16, 1000 + i)));
  }
  std::vector<SampleRef> samples;
  for (int i = 0; i < 4; ++i) {
    samples.push_back({&imgs[i], &imgs[i + 4],
                       MotorCommand::encode(0.01 * i, 0.0, 0.0, 0.1),
                       i % 2});
  }

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.learning_rate = 0.0;
  cfg.seed = 7;
  Network out = train_network(net, samples, cfg);
  for (size_t p = 0; p < net.params.size(); ++p) {
    REQUIRE(out.params[p].v == net.params[p].v);
  }
  bool buffers_moved = false;
  for (size_t p = 0; p < net.buffers.size(); ++p) {
    if (out.buffers[p].v != net.buffers[p].v) buffers_moved = true;
  }
  REQUIRE(buffers_moved);

  cfg.learning_rate = 1e-3;
  Network t1 = train_network(net, samples, cfg);
  Network t2 = train_network(net, samples, cfg);
  for (size_t p = 0; p < t1.params.size(); ++p) {
    REQUIRE(t1.params[p].v == t2.params[p].v);
  }
  for (size_t p = 0; p < t1.buffers.size(); ++p) {
    REQUIRE(t1.buffers[p].v == t2.buffers[p].v);
  }
  REQUIRE_THROWS_AS(train_network(net, std::span<const SampleRef>{}, cfg),
                    std::invalid_argument);
}

TEST_CASE("training separates a synthetic bright-pixel dataset") {
  // Label = whether the current image is bright at the commanded landing
  // spot; linearly separable given the injected command features.
  ArchSpec arch = test::tiny_arch();
  Network net = build_network(arch, 61);
  Rng rng(314);
  std::vector<Image8> pre, cur;
  std::vector<MotorCommand> cmds;
  std::vector<int> labels;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    Image img = Image::zeros(16, 16, 1);
    bool bright_left = rng.bernoulli(0.5);
    for (int r = 0; r < 16; ++r) {
      for (int c = 0; c < 16; ++c) {
        bool left = c < 8;
        img.at(r, c) = (left == bright_left) ? 0.9f : 0.1f;
      }
    }
    bool cmd_left = rng.bernoulli(0.5);
    cmds.push_back(MotorCommand::encode(cmd_left ? -0.1 : 0.1, 0.0, 0.0, 0.0));
    labels.push_back((cmd_left == bright_left) ? 1 : 0);
    pre.push_back(Image8::from(img));
    cur.push_back(Image8::from(img));
  }
  std::vector<SampleRef> samples;
  for (int i = 0; i < n; ++i) {
    samples.push_back({&pre[i], &cur[i], cmds[i], labels[i]});
  }
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 32;
  cfg.learning_rate = 3e-3;
  cfg.seed = 17;
  std::vector<double> losses;
  Network out = train_network(net, samples, cfg, &losses);
  REQUIRE(losses.back() < 0.1);
}

TEST_CASE("model file round-trips bit-exactly and rejects bad files") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "sg_net_test";
  fs::create_directories(dir);
  std::string path = (dir / "model.sgnt").string();

  ArchSpec arch = test::tiny_arch();
  Network net = build_network(arch, 71);
  save_network(net, path);
  Network loaded = load_network(path);
  REQUIRE(loaded.arch.to_text() == net.arch.to_text());
  for (size_t p = 0; p < net.params.size(); ++p) {
    REQUIRE(loaded.params[p].v == net.params[p].v);
  }
  for (size_t p = 0; p < net.buffers.size(); ++p) {
    REQUIRE(loaded.buffers[p].v == net.buffers[p].v);
  }

  SUBCASE("truncated file") {
    auto size = fs::file_size(path);
    fs::resize_file(path, size - 16);
    REQUIRE_THROWS_AS(load_network(path), TruncationError);
  }
  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
    f.close();
    REQUIRE_THROWS_AS(load_network(path), FormatError);
  }
}
