#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "servograsp/types.hpp"

namespace sg {

// How the motor-vector feature is merged into the response map after the
// second pooling stage: pointwise add (default) or channel concatenation.
enum class InjectMode { Add, Concat };

struct LayerSpec {
  enum class Kind { Conv, BatchNorm, Relu, MaxPool, Inject, Flatten, Fc, Sigmoid };
  Kind kind;
  int units = 0;  // conv: out channels; fc/inject: output units
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  InjectMode mode = InjectMode::Add;
};

// Architecture descriptor. Text form is one layer per line, e.g.
//   input 2 56 56
//   conv 8 6 2 0
//   bn
//   relu
//   pool 3 2
//   inject add 16
//   flatten
//   fc 64
//   sigmoid
struct ArchSpec {
  int in_channels = 2;
  int in_h = 56;
  int in_w = 56;
  int command_dim = 5;
  // Fixed gain on the translation components of the command so they enter
  // the injection layer at the same order of magnitude as the sin/cos pair.
  double command_scale = 8.0;
  std::vector<LayerSpec> layers;

  static ArchSpec parse(const std::string& text);
  std::string to_text() const;

  // Fig.4-style stem/pool2-injection/head topology at 1/8 scale.
  static ArchSpec scaled_default(int in_hw = 56, InjectMode mode = InjectMode::Add);
};

// Activation shape after a layer; either spatial (c,h,w) or flat (n).
struct ActShape {
  int c = 0, h = 0, w = 0;
  int n = 0;
  bool spatial = true;
  size_t count() const {
    return spatial ? static_cast<size_t>(c) * h * w : static_cast<size_t>(n);
  }
};

struct ParamBlock {
  std::string name;
  std::vector<int> shape;
  std::vector<double> v;
  size_t count() const { return v.size(); }
};

// Network parameters: trainable blocks plus batch-norm running statistics,
// in descriptor order. Shapes are fully determined by the ArchSpec.
struct Network {
  ArchSpec arch;
  std::vector<ActShape> shapes;  // output shape per layer
  std::vector<ParamBlock> params;
  std::vector<ParamBlock> buffers;

  struct LayerRefs {
    int w = -1, b = -1;           // conv kernel/bias, fc or inject weights
    int gamma = -1, beta = -1;    // bn scale/shift
    int mean = -1, var = -1;      // bn running stats (buffers)
  };
  std::vector<LayerRefs> refs;

  ActShape input_shape() const {
    return ActShape{arch.in_channels, arch.in_h, arch.in_w, 0, true};
  }
  // Same structure with all params and buffers zeroed.
  Network zeros_like() const;
};

// He-initialized network; bit-identical for identical (arch, seed). Throws
// ConfigError naming the offending layer on an inconsistent shape chain.
Network build_network(const ArchSpec& arch, uint64_t seed);

// Eval-mode forward (running batch-norm statistics); pure and thread-safe
// for concurrent callers sharing one Network. Images are center-cropped to
// the architecture input size. Probability is clamped to (0, 1).
double forward_eval(const Network& net, const Image& pregrasp,
                    const Image& current, const MotorCommand& v);

// A training minibatch already cropped to the architecture input size.
// images: b * (in_channels*h*w), pregrasp channels first, then current.
struct TrainBatch {
  int b = 0;
  std::vector<double> images;
  std::vector<double> commands;  // b * command_dim
  std::vector<int> labels;       // each in {0, 1}
};

// Per-bn-layer batch statistics from the last train-mode forward, used to
// advance running statistics.
struct BnBatchStats {
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> var;
};

// Mean binary cross-entropy and its gradient via backpropagation through
// every layer (batch statistics in batch norm). grad must be zeros_like the
// network; stats (optional) receives batch statistics.
double loss_and_grad(const Network& net, const TrainBatch& batch,
                     Network& grad, BnBatchStats* stats = nullptr);

struct TrainConfig {
  int epochs = 6;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double bn_momentum = 0.99;
  uint64_t seed = 0;
  bool augment_crop = true;
};

// One training sample: episode images plus displacement-to-final and label.
struct SampleRef {
  const Image8* pregrasp = nullptr;
  const Image8* current = nullptr;
  MotorCommand displacement;
  int label = 0;
};

// Minibatch SGD with momentum and random-crop augmentation; deterministic
// given cfg.seed. Returns the trained network; per-epoch mean losses are
// appended to epoch_losses when given.
Network train_network(Network net, std::span<const SampleRef> samples,
                      const TrainConfig& cfg,
                      std::vector<double>* epoch_losses = nullptr);

// Uniformly random offset crop (training augmentation); offset drawn from
// the seed alone so paired images crop identically.
Image random_crop(const Image& img, int crop_h, int crop_w, uint64_t seed);
Image center_crop(const Image& img, int crop_h, int crop_w);

// Little-endian binary model file: magic "SGNT", version u32, length-
// prefixed architecture text, then f64 parameter blocks in descriptor order.
void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

// Scoring interface consumed by the servo layer. Implementations must be
// pure: identical inputs give identical scores.
class GraspPredictor {
 public:
  virtual ~GraspPredictor() = default;
  virtual void score(const Image& pregrasp, const Image& current,
                     std::span<const MotorCommand> commands,
                     std::span<double> out) const = 0;
  double score_one(const Image& pregrasp, const Image& current,
                   const MotorCommand& cmd) const {
    double out = 0.0;
    score(pregrasp, current, {&cmd, 1}, {&out, 1});
    return out;
  }
};

// Network-backed predictor. The image stem (all layers before the motor
// injection) is evaluated once per image pair and reused across commands.
class NetPredictor final : public GraspPredictor {
 public:
  explicit NetPredictor(const Network& net) : net_(&net) {}
  void score(const Image& pregrasp, const Image& current,
             std::span<const MotorCommand> commands,
             std::span<double> out) const override;

 private:
  const Network* net_;
};

}  // namespace sg
