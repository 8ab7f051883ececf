#include "servograsp/grasp_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "servograsp/errors.hpp"
#include "servograsp/rng.hpp"
#include "servograsp/thread_pool.hpp"

namespace sg {

namespace {

constexpr double kBnEps = 1e-5;
constexpr char kMagic[4] = {'S', 'G', 'N', 'T'};
constexpr uint32_t kModelVersion = 1;

const char* kind_name(LayerSpec::Kind k) {
  switch (k) {
    case LayerSpec::Kind::Conv: return "conv";
    case LayerSpec::Kind::BatchNorm: return "bn";
    case LayerSpec::Kind::Relu: return "relu";
    case LayerSpec::Kind::MaxPool: return "pool";
    case LayerSpec::Kind::Inject: return "inject";
    case LayerSpec::Kind::Flatten: return "flatten";
    case LayerSpec::Kind::Fc: return "fc";
    case LayerSpec::Kind::Sigmoid: return "sigmoid";
  }
  return "?";
}

[[noreturn]] void layer_error(size_t idx, const LayerSpec& spec,
                              const std::string& what) {
  throw ConfigError("network layer " + std::to_string(idx + 1) + " (" +
                    kind_name(spec.kind) + "): " + what);
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double clamp_prob(double p) {
  return std::clamp(p, 1e-12, 1.0 - 1e-12);
}

}  // namespace

ArchSpec ArchSpec::scaled_default(int in_hw, InjectMode mode) {
  using K = LayerSpec::Kind;
  ArchSpec a;
  a.in_channels = 2;
  a.in_h = a.in_w = in_hw;
  std::vector<LayerSpec>& L = a.layers;
  auto conv = [&](int ch, int k, int s, int p) {
    L.push_back({K::Conv, ch, k, s, p});
    L.push_back({K::BatchNorm});
    L.push_back({K::Relu});
  };
  conv(8, 6, 2, 0);
  L.push_back({K::MaxPool, 0, 3, 2});
  conv(16, 5, 1, 2);
  conv(16, 5, 1, 2);
  L.push_back({K::MaxPool, 0, 3, 2});  // pool2: injection point
  L.push_back({K::Inject, 16, 0, 1, 0, mode});
  conv(16, 3, 1, 1);
  conv(16, 3, 1, 1);
  L.push_back({K::MaxPool, 0, 2, 2});
  conv(16, 3, 1, 1);
  L.push_back({K::Flatten});
  L.push_back({K::Fc, 64});
  L.push_back({K::Relu});
  L.push_back({K::Fc, 64});
  L.push_back({K::Relu});
  L.push_back({K::Fc, 1});
  L.push_back({K::Sigmoid});
  return a;
}

std::string ArchSpec::to_text() const {
  std::ostringstream os;
  os << "input " << in_channels << " " << in_h << " " << in_w << "\n";
  os.precision(17);
  os << "cmdscale " << command_scale << "\n";
  for (const LayerSpec& l : layers) {
    switch (l.kind) {
      case LayerSpec::Kind::Conv:
        os << "conv " << l.units << " " << l.kernel << " " << l.stride << " "
           << l.pad << "\n";
        break;
      case LayerSpec::Kind::BatchNorm: os << "bn\n"; break;
      case LayerSpec::Kind::Relu: os << "relu\n"; break;
      case LayerSpec::Kind::MaxPool:
        os << "pool " << l.kernel << " " << l.stride << "\n";
        break;
      case LayerSpec::Kind::Inject:
        os << "inject " << (l.mode == InjectMode::Add ? "add" : "concat")
           << " " << l.units << "\n";
        break;
      case LayerSpec::Kind::Flatten: os << "flatten\n"; break;
      case LayerSpec::Kind::Fc: os << "fc " << l.units << "\n"; break;
      case LayerSpec::Kind::Sigmoid: os << "sigmoid\n"; break;
    }
  }
  return os.str();
}

ArchSpec ArchSpec::parse(const std::string& text) {
  ArchSpec a;
  a.layers.clear();
  std::istringstream is(text);
  std::string line;
  bool have_input = false;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok) || tok[0] == '#') continue;
    auto want_int = [&](const char* what) {
      long long v;
      if (!(ls >> v)) {
        throw ConfigError("arch line " + std::to_string(line_no) +
                          ": missing " + std::string(what));
      }
      return static_cast<int>(v);
    };
    if (tok == "input") {
      a.in_channels = want_int("channels");
      a.in_h = want_int("height");
      a.in_w = want_int("width");
      have_input = true;
    } else if (tok == "cmdscale") {
      if (!(ls >> a.command_scale) || a.command_scale <= 0.0) {
        throw ConfigError("arch line " + std::to_string(line_no) +
                          ": cmdscale must be a positive number");
      }
    } else if (tok == "conv") {
      LayerSpec l{LayerSpec::Kind::Conv};
      l.units = want_int("channels");
      l.kernel = want_int("kernel");
      l.stride = want_int("stride");
      l.pad = want_int("pad");
      a.layers.push_back(l);
    } else if (tok == "bn") {
      a.layers.push_back({LayerSpec::Kind::BatchNorm});
    } else if (tok == "relu") {
      a.layers.push_back({LayerSpec::Kind::Relu});
    } else if (tok == "pool") {
      LayerSpec l{LayerSpec::Kind::MaxPool};
      l.kernel = want_int("kernel");
      l.stride = want_int("stride");
      a.layers.push_back(l);
    } else if (tok == "inject") {
      LayerSpec l{LayerSpec::Kind::Inject};
      std::string mode;
      if (!(ls >> mode) || (mode != "add" && mode != "concat")) {
        throw ConfigError("arch line " + std::to_string(line_no) +
                          ": inject mode must be add or concat");
      }
      l.mode = mode == "add" ? InjectMode::Add : InjectMode::Concat;
      l.units = want_int("units");
      a.layers.push_back(l);
    } else if (tok == "flatten") {
      a.layers.push_back({LayerSpec::Kind::Flatten});
    } else if (tok == "fc") {
      LayerSpec l{LayerSpec::Kind::Fc};
      l.units = want_int("units");
      a.layers.push_back(l);
    } else if (tok == "sigmoid") {
      a.layers.push_back({LayerSpec::Kind::Sigmoid});
    } else {
      throw ConfigError("arch line " + std::to_string(line_no) +
                        ": unknown layer '" + tok + "'");
    }
  }
  if (!have_input) throw ConfigError("arch: missing 'input' line");
  return a;
}

namespace {

// Resolves the activation shape chain, throwing named errors.
std::vector<ActShape> resolve_shapes(const ArchSpec& arch) {
  if (arch.in_channels < 1 || arch.in_h < 1 || arch.in_w < 1) {
    throw ConfigError("network input shape must be positive");
  }
  std::vector<ActShape> shapes;
  ActShape cur{arch.in_channels, arch.in_h, arch.in_w, 0, true};
  int inject_count = 0;
  for (size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    if (i > 0 && arch.layers[i - 1].kind == LayerSpec::Kind::Sigmoid) {
      layer_error(i, l, "no layers allowed after sigmoid");
    }
    switch (l.kind) {
      case LayerSpec::Kind::Conv: {
        if (!cur.spatial) layer_error(i, l, "requires a spatial input");
        if (l.units < 1 || l.kernel < 1 || l.stride < 1 || l.pad < 0) {
          layer_error(i, l, "bad conv geometry");
        }
        int oh = (cur.h + 2 * l.pad - l.kernel) / l.stride + 1;
        int ow = (cur.w + 2 * l.pad - l.kernel) / l.stride + 1;
        if (cur.h + 2 * l.pad < l.kernel || oh < 1 || ow < 1) {
          layer_error(i, l, "kernel does not fit the " +
                                std::to_string(cur.h) + "x" +
                                std::to_string(cur.w) + " input");
        }
        cur = ActShape{l.units, oh, ow, 0, true};
        break;
      }
      case LayerSpec::Kind::BatchNorm:
      case LayerSpec::Kind::Relu:
        break;
      case LayerSpec::Kind::MaxPool: {
        if (!cur.spatial) layer_error(i, l, "requires a spatial input");
        if (l.kernel < 1 || l.stride < 1 || cur.h < l.kernel ||
            cur.w < l.kernel) {
          layer_error(i, l, "window does not fit the " +
                                std::to_string(cur.h) + "x" +
                                std::to_string(cur.w) + " input");
        }
        cur.h = (cur.h - l.kernel) / l.stride + 1;
        cur.w = (cur.w - l.kernel) / l.stride + 1;
        break;
      }
      case LayerSpec::Kind::Inject: {
        if (!cur.spatial) layer_error(i, l, "requires a spatial input");
        ++inject_count;
        if (l.units < 1) layer_error(i, l, "units must be positive");
        if (l.mode == InjectMode::Add) {
          if (l.units != cur.c) {
            layer_error(i, l,
                        "add mode needs units == channels (" +
                            std::to_string(l.units) + " vs " +
                            std::to_string(cur.c) + ")");
          }
        } else {
          cur.c += l.units;
        }
        break;
      }
      case LayerSpec::Kind::Flatten: {
        if (!cur.spatial) layer_error(i, l, "input already flat");
        cur = ActShape{0, 0, 0, cur.c * cur.h * cur.w, false};
        break;
      }
      case LayerSpec::Kind::Fc: {
        if (cur.spatial) layer_error(i, l, "requires a flat input (flatten first)");
        if (l.units < 1) layer_error(i, l, "units must be positive");
        cur = ActShape{0, 0, 0, l.units, false};
        break;
      }
      case LayerSpec::Kind::Sigmoid: {
        if (cur.spatial || cur.n != 1) {
          layer_error(i, l, "requires a single logit input");
        }
        break;
      }
    }
    shapes.push_back(cur);
  }
  if (arch.layers.empty() ||
      arch.layers.back().kind != LayerSpec::Kind::Sigmoid) {
    throw ConfigError("network must end with a sigmoid layer");
  }
  if (inject_count != 1) {
    throw ConfigError("network must contain exactly one inject layer");
  }
  return shapes;
}

ActShape shape_before(const Network& net, size_t layer) {
  return layer == 0 ? net.input_shape() : net.shapes[layer - 1];
}

}  // namespace

Network Network::zeros_like() const {
  Network z = *this;
  for (ParamBlock& p : z.params) std::fill(p.v.begin(), p.v.end(), 0.0);
  for (ParamBlock& p : z.buffers) std::fill(p.v.begin(), p.v.end(), 0.0);
  return z;
}

Network build_network(const ArchSpec& arch, uint64_t seed) {
  Network net;
  net.arch = arch;
  net.shapes = resolve_shapes(arch);
  net.refs.resize(arch.layers.size());
  Rng rng(derive_seed(seed, 0x6e6574u));

  auto add_param = [&](const std::string& name, std::vector<int> shape) {
    ParamBlock blk;
    blk.name = name;
    blk.shape = std::move(shape);
    size_t n = 1;
    for (int d : blk.shape) n *= static_cast<size_t>(d);
    blk.v.assign(n, 0.0);
    net.params.push_back(std::move(blk));
    return static_cast<int>(net.params.size() - 1);
  };
  auto add_buffer = [&](const std::string& name, std::vector<int> shape,
                        double fill) {
    ParamBlock blk;
    blk.name = name;
    blk.shape = std::move(shape);
    size_t n = 1;
    for (int d : blk.shape) n *= static_cast<size_t>(d);
    blk.v.assign(n, fill);
    net.buffers.push_back(std::move(blk));
    return static_cast<int>(net.buffers.size() - 1);
  };
  auto he_fill = [&](std::vector<double>& v, int fan_in) {
    double s = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& x : v) x = rng.normal(0.0, s);
  };

  for (size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    ActShape in = shape_before(net, i);
    std::string tag = "layer" + std::to_string(i + 1);
    switch (l.kind) {
      case LayerSpec::Kind::Conv: {
        int fan_in = in.c * l.kernel * l.kernel;
        net.refs[i].w = add_param(tag + ".kernel",
                                  {l.units, in.c, l.kernel, l.kernel});
        he_fill(net.params[net.refs[i].w].v, fan_in);
        net.refs[i].b = add_param(tag + ".bias", {l.units});
        break;
      }
      case LayerSpec::Kind::BatchNorm: {
        int ch = in.spatial ? in.c : in.n;
        net.refs[i].gamma = add_param(tag + ".gamma", {ch});
        std::fill(net.params[net.refs[i].gamma].v.begin(),
                  net.params[net.refs[i].gamma].v.end(), 1.0);
        net.refs[i].beta = add_param(tag + ".beta", {ch});
        net.refs[i].mean = add_buffer(tag + ".running_mean", {ch}, 0.0);
        net.refs[i].var = add_buffer(tag + ".running_var", {ch}, 1.0);
        break;
      }
      case LayerSpec::Kind::Inject: {
        net.refs[i].w = add_param(tag + ".weight",
                                  {l.units, arch.command_dim});
        he_fill(net.params[net.refs[i].w].v, arch.command_dim);
        net.refs[i].b = add_param(tag + ".bias", {l.units});
        break;
      }
      case LayerSpec::Kind::Fc: {
        net.refs[i].w = add_param(tag + ".weight", {l.units, in.n});
        he_fill(net.params[net.refs[i].w].v, in.n);
        net.refs[i].b = add_param(tag + ".bias", {l.units});
        break;
      }
      default:
        break;
    }
  }
  return net;
}

// ---------------------------------------------------------------------------
// Forward / backward machinery.

namespace {

struct ConvDims {
  int ic, ih, iw, oc, oh, ow, k, s, p;
};

inline int range_lo(int pad, int kk, int stride) {
  return pad > kk ? (pad - kk + stride - 1) / stride : 0;
}
inline int range_hi(int limit, int in_dim, int pad, int kk, int stride) {
  int hi = (in_dim - 1 - kk + pad) / stride + 1;
  return std::min(limit, hi);
}

void conv_forward_one(const double* in, const double* kernel,
                      const double* bias, double* out, const ConvDims& d) {
  for (int oc = 0; oc < d.oc; ++oc) {
    double* out_c = out + static_cast<size_t>(oc) * d.oh * d.ow;
    std::fill(out_c, out_c + static_cast<size_t>(d.oh) * d.ow, bias[oc]);
    for (int ic = 0; ic < d.ic; ++ic) {
      const double* in_c = in + static_cast<size_t>(ic) * d.ih * d.iw;
      const double* kern =
          kernel + ((static_cast<size_t>(oc) * d.ic + ic) * d.k) * d.k;
      for (int ky = 0; ky < d.k; ++ky) {
        int oy_lo = range_lo(d.p, ky, d.s);
        int oy_hi = range_hi(d.oh, d.ih, d.p, ky, d.s);
        for (int kx = 0; kx < d.k; ++kx) {
          double w = kern[ky * d.k + kx];
          if (w == 0.0) continue;
          int ox_lo = range_lo(d.p, kx, d.s);
          int ox_hi = range_hi(d.ow, d.iw, d.p, kx, d.s);
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            int iy = oy * d.s + ky - d.p;
            const double* in_row = in_c + static_cast<size_t>(iy) * d.iw;
            double* out_row = out_c + static_cast<size_t>(oy) * d.ow;
            if (d.s == 1) {
              const double* ip = in_row + (ox_lo + kx - d.p);
              for (int ox = ox_lo; ox < ox_hi; ++ox) {
                out_row[ox] += w * *ip++;
              }
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox) {
                out_row[ox] += w * in_row[ox * d.s + kx - d.p];
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward_input_one(double* din, const double* kernel,
                             const double* dout, const ConvDims& d) {
  for (int oc = 0; oc < d.oc; ++oc) {
    const double* dout_c = dout + static_cast<size_t>(oc) * d.oh * d.ow;
    for (int ic = 0; ic < d.ic; ++ic) {
      double* din_c = din + static_cast<size_t>(ic) * d.ih * d.iw;
      const double* kern =
          kernel + ((static_cast<size_t>(oc) * d.ic + ic) * d.k) * d.k;
      for (int ky = 0; ky < d.k; ++ky) {
        int oy_lo = range_lo(d.p, ky, d.s);
        int oy_hi = range_hi(d.oh, d.ih, d.p, ky, d.s);
        for (int kx = 0; kx < d.k; ++kx) {
          double w = kern[ky * d.k + kx];
          if (w == 0.0) continue;
          int ox_lo = range_lo(d.p, kx, d.s);
          int ox_hi = range_hi(d.ow, d.iw, d.p, kx, d.s);
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            int iy = oy * d.s + ky - d.p;
            double* din_row = din_c + static_cast<size_t>(iy) * d.iw;
            const double* dout_row = dout_c + static_cast<size_t>(oy) * d.ow;
            if (d.s == 1) {
              double* dp = din_row + (ox_lo + kx - d.p);
              for (int ox = ox_lo; ox < ox_hi; ++ox) {
                *dp++ += w * dout_row[ox];
              }
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox) {
                din_row[ox * d.s + kx - d.p] += w * dout_row[ox];
              }
            }
          }
        }
      }
    }
  }
}

// Accumulates kernel/bias gradients for one output channel across the batch.
void conv_backward_params_oc(int oc, const double* in_batch,
                             const double* dout_batch, int b, double* dkernel,
                             double* dbias, const ConvDims& d) {
  size_t in_stride = static_cast<size_t>(d.ic) * d.ih * d.iw;
  size_t out_stride = static_cast<size_t>(d.oc) * d.oh * d.ow;
  double db = 0.0;
  for (int s = 0; s < b; ++s) {
    const double* dout_c =
        dout_batch + s * out_stride + static_cast<size_t>(oc) * d.oh * d.ow;
    for (size_t i = 0; i < static_cast<size_t>(d.oh) * d.ow; ++i) {
      db += dout_c[i];
    }
  }
  dbias[oc] += db;
  for (int ic = 0; ic < d.ic; ++ic) {
    double* dk = dkernel + ((static_cast<size_t>(oc) * d.ic + ic) * d.k) * d.k;
    for (int ky = 0; ky < d.k; ++ky) {
      int oy_lo = range_lo(d.p, ky, d.s);
      int oy_hi = range_hi(d.oh, d.ih, d.p, ky, d.s);
      for (int kx = 0; kx < d.k; ++kx) {
        int ox_lo = range_lo(d.p, kx, d.s);
        int ox_hi = range_hi(d.ow, d.iw, d.p, kx, d.s);
        double acc = 0.0;
        for (int s2 = 0; s2 < b; ++s2) {
          const double* in_c = in_batch + s2 * in_stride +
                               static_cast<size_t>(ic) * d.ih * d.iw;
          const double* dout_c = dout_batch + s2 * out_stride +
                                 static_cast<size_t>(oc) * d.oh * d.ow;
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            int iy = oy * d.s + ky - d.p;
            const double* in_row = in_c + static_cast<size_t>(iy) * d.iw;
            const double* dout_row = dout_c + static_cast<size_t>(oy) * d.ow;
            if (d.s == 1) {
              const double* ip = in_row + (ox_lo + kx - d.p);
              for (int ox = ox_lo; ox < ox_hi; ++ox) {
                acc += dout_row[ox] * *ip++;
              }
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox) {
                acc += dout_row[ox] * in_row[ox * d.s + kx - d.p];
              }
            }
          }
        }
        dk[ky * d.k + kx] += acc;
      }
    }
  }
}

// Per-layer forward tape over a batch.
struct Tape {
  std::vector<std::vector<double>> act;      // act[i]: output of layer i-1
  std::vector<std::vector<int>> pool_arg;    // per pool layer
  std::vector<std::vector<double>> bn_xhat;  // per bn layer
  std::vector<std::vector<double>> bn_mean;
  std::vector<std::vector<double>> bn_var;
  std::vector<int> pool_index;  // layer -> index in pool_arg, or -1
  std::vector<int> bn_index;    // layer -> index in bn arrays, or -1
};

enum class Mode { Train, Eval };

// Applies layer i to a batch activation. tape is required in Train mode
// (pool argmax, batch-norm statistics); Eval mode runs without it.
void apply_layer(const Network& net, size_t i, int b,
                 const std::vector<double>& x, std::vector<double>& y,
                 const std::vector<double>& commands, Mode mode, Tape* tape) {
  const ArchSpec& arch = net.arch;
  const LayerSpec& l = arch.layers[i];
  ActShape in = shape_before(net, i);
  ActShape out = net.shapes[i];
  y.assign(static_cast<size_t>(b) * out.count(), 0.0);

  switch (l.kind) {
      case LayerSpec::Kind::Conv: {
        ConvDims d{in.c, in.h, in.w, out.c, out.h, out.w,
                   l.kernel, l.stride, l.pad};
        const double* kernel = net.params[net.refs[i].w].v.data();
        const double* bias = net.params[net.refs[i].b].v.data();
        size_t in_stride = in.count(), out_stride = out.count();
        const double* xp = x.data();
        double* yp = y.data();
        parallel_for(static_cast<size_t>(b), [&](size_t s) {
          conv_forward_one(xp + s * in_stride, kernel, bias,
                           yp + s * out_stride, d);
        });
        break;
      }
      case LayerSpec::Kind::BatchNorm: {
        int ch = in.spatial ? in.c : in.n;
        size_t plane = in.spatial ? static_cast<size_t>(in.h) * in.w : 1;
        size_t stride = in.count();
        const double* gamma = net.params[net.refs[i].gamma].v.data();
        const double* beta = net.params[net.refs[i].beta].v.data();
        std::vector<double> mean(ch, 0.0), var(ch, 0.0);
        if (mode == Mode::Train) {
          double inv_n = 1.0 / (static_cast<double>(b) * plane);
          for (int c = 0; c < ch; ++c) {
            double m = 0.0;
            for (int s = 0; s < b; ++s) {
              const double* xc = x.data() + s * stride + c * plane;
              for (size_t k = 0; k < plane; ++k) m += xc[k];
            }
            m *= inv_n;
            double v = 0.0;
            for (int s = 0; s < b; ++s) {
              const double* xc = x.data() + s * stride + c * plane;
              for (size_t k = 0; k < plane; ++k) {
                double dlt = xc[k] - m;
                v += dlt * dlt;
              }
            }
            mean[c] = m;
            var[c] = v * inv_n;
          }
        } else {
          const std::vector<double>& rm = net.buffers[net.refs[i].mean].v;
          const std::vector<double>& rv = net.buffers[net.refs[i].var].v;
          mean.assign(rm.begin(), rm.end());
          var.assign(rv.begin(), rv.end());
        }
        std::vector<double>* xhat = nullptr;
        if (mode == Mode::Train && tape) {
          tape->bn_index[i] = static_cast<int>(tape->bn_xhat.size());
          tape->bn_xhat.emplace_back(y.size());
          tape->bn_mean.push_back(mean);
          tape->bn_var.push_back(var);
          xhat = &tape->bn_xhat.back();
        }
        for (int c = 0; c < ch; ++c) {
          double inv_std = 1.0 / std::sqrt(var[c] + kBnEps);
          double g = gamma[c], bt = beta[c], m = mean[c];
          for (int s = 0; s < b; ++s) {
            const double* xc = x.data() + s * stride + c * plane;
            double* yc = y.data() + s * stride + c * plane;
            if (xhat) {
              double* hc = xhat->data() + s * stride + c * plane;
              for (size_t k = 0; k < plane; ++k) {
                double h = (xc[k] - m) * inv_std;
                hc[k] = h;
                yc[k] = g * h + bt;
              }
            } else {
              for (size_t k = 0; k < plane; ++k) {
                yc[k] = g * (xc[k] - m) * inv_std + bt;
              }
            }
          }
        }
        break;
      }
      case LayerSpec::Kind::Relu: {
        for (size_t k = 0; k < x.size(); ++k) {
          y[k] = x[k] > 0.0 ? x[k] : 0.0;
        }
        break;
      }
      case LayerSpec::Kind::MaxPool: {
        int* arg_base = nullptr;
        if (tape) {
          tape->pool_index[i] = static_cast<int>(tape->pool_arg.size());
          tape->pool_arg.emplace_back(y.size());
          arg_base = tape->pool_arg.back().data();
        }
        size_t in_stride = in.count(), out_stride = out.count();
        for (int s = 0; s < b; ++s) {
          const double* xs = x.data() + s * in_stride;
          double* ys = y.data() + s * out_stride;
          int* as = arg_base ? arg_base + s * out_stride : nullptr;
          for (int c = 0; c < in.c; ++c) {
            const double* xc = xs + static_cast<size_t>(c) * in.h * in.w;
            for (int oy = 0; oy < out.h; ++oy) {
              for (int ox = 0; ox < out.w; ++ox) {
                int iy0 = oy * l.stride, ix0 = ox * l.stride;
                double best = xc[iy0 * in.w + ix0];
                int best_i = iy0 * in.w + ix0;
                for (int ky = 0; ky < l.kernel; ++ky) {
                  for (int kx = 0; kx < l.kernel; ++kx) {
                    int idx = (iy0 + ky) * in.w + (ix0 + kx);
                    if (xc[idx] > best) {
                      best = xc[idx];
                      best_i = idx;
                    }
                  }
                }
                size_t o = (static_cast<size_t>(c) * out.h + oy) * out.w + ox;
                ys[o] = best;
                if (as) as[o] = best_i + c * in.h * in.w;
              }
            }
          }
        }
        break;
      }
      case LayerSpec::Kind::Inject: {
        const std::vector<double>& W = net.params[net.refs[i].w].v;
        const std::vector<double>& bias = net.params[net.refs[i].b].v;
        int cd = arch.command_dim;
        size_t plane = static_cast<size_t>(in.h) * in.w;
        size_t in_stride = in.count(), out_stride = out.count();
        for (int s = 0; s < b; ++s) {
          const double* cmd = commands.data() + static_cast<size_t>(s) * cd;
          const double* xs = x.data() + s * in_stride;
          double* ys = y.data() + s * out_stride;
          std::copy(xs, xs + in_stride, ys);
          for (int c = 0; c < l.units; ++c) {
            double u = bias[c];
            for (int k = 0; k < cd; ++k) {
              double s_k = k < 3 ? arch.command_scale : 1.0;
              u += W[c * cd + k] * s_k * cmd[k];
            }
            if (l.mode == InjectMode::Add) {
              double* yc = ys + static_cast<size_t>(c) * plane;
              for (size_t k = 0; k < plane; ++k) yc[k] += u;
            } else {
              double* yc = ys + in_stride + static_cast<size_t>(c) * plane;
              std::fill(yc, yc + plane, u);
            }
          }
        }
        break;
      }
      case LayerSpec::Kind::Flatten: {
        y = x;
        break;
      }
      case LayerSpec::Kind::Fc: {
        const std::vector<double>& W = net.params[net.refs[i].w].v;
        const std::vector<double>& bias = net.params[net.refs[i].b].v;
        int ni = in.n, no = out.n;
        for (int s = 0; s < b; ++s) {
          const double* xs = x.data() + static_cast<size_t>(s) * ni;
          double* ys = y.data() + static_cast<size_t>(s) * no;
          for (int o = 0; o < no; ++o) {
            double acc = bias[o];
            const double* wrow = W.data() + static_cast<size_t>(o) * ni;
            for (int k = 0; k < ni; ++k) acc += wrow[k] * xs[k];
            ys[o] = acc;
          }
        }
        break;
      }
      case LayerSpec::Kind::Sigmoid: {
        for (size_t k = 0; k < x.size(); ++k) y[k] = sigmoid(x[k]);
        break;
      }
  }
}

// Full train-mode forward over a batch, recording the tape. Returns logits
// (pre-sigmoid) and clamped probabilities.
void forward_batch(const Network& net, int b, const std::vector<double>& input,
                   const std::vector<double>& commands, Mode mode, Tape& tape,
                   std::vector<double>& probs, std::vector<double>& logits) {
  size_t nl = net.arch.layers.size();
  tape.act.assign(nl + 1, {});
  tape.pool_index.assign(nl, -1);
  tape.bn_index.assign(nl, -1);
  tape.act[0] = input;
  for (size_t i = 0; i < nl; ++i) {
    apply_layer(net, i, b, tape.act[i], tape.act[i + 1], commands, mode,
                &tape);
  }
  logits.assign(tape.act[nl - 1].begin(), tape.act[nl - 1].end());
  probs.resize(logits.size());
  for (size_t k = 0; k < logits.size(); ++k) {
    probs[k] = clamp_prob(tape.act[nl][k]);
  }
}

}  // namespace

double forward_eval(const Network& net, const Image& pregrasp,
                    const Image& current, const MotorCommand& v) {
  NetPredictor pred(net);
  return pred.score_one(pregrasp, current, v);
}

double loss_and_grad(const Network& net, const TrainBatch& batch,
                     Network& grad, BnBatchStats* stats) {
  const ArchSpec& arch = net.arch;
  int b = batch.b;
  if (b <= 0) throw std::invalid_argument("loss_and_grad: empty batch");
  for (int label : batch.labels) {
    if (label != 0 && label != 1) {
      throw std::invalid_argument("loss_and_grad: labels must be 0 or 1");
    }
  }
  Tape tape;
  std::vector<double> probs, logits;
  forward_batch(net, b, batch.images, batch.commands, Mode::Train, tape,
                probs, logits);

  double loss = 0.0;
  for (int s = 0; s < b; ++s) {
    double z = logits[s];
    double y = batch.labels[s];
    double softplus =
        z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    loss += softplus - y * z;
  }
  loss /= static_cast<double>(b);

  size_t nl = arch.layers.size();
  // Gradient seed at the logit (sigmoid + BCE fused).
  std::vector<double> dy(static_cast<size_t>(b));
  for (int s = 0; s < b; ++s) {
    dy[s] = (sigmoid(logits[s]) - batch.labels[s]) / static_cast<double>(b);
  }

  // Walk layers backwards, skipping the final sigmoid (fused above).
  for (size_t i = nl - 1; i-- > 0;) {
    const LayerSpec& l = arch.layers[i];
    ActShape in = shape_before(net, i);
    ActShape out = net.shapes[i];
    const std::vector<double>& x = tape.act[i];
    std::vector<double> dx(static_cast<size_t>(b) * in.count(), 0.0);

    switch (l.kind) {
      case LayerSpec::Kind::Conv: {
        ConvDims d{in.c, in.h, in.w, out.c, out.h, out.w,
                   l.kernel, l.stride, l.pad};
        const double* kernel = net.params[net.refs[i].w].v.data();
        double* dkernel = grad.params[net.refs[i].w].v.data();
        double* dbias = grad.params[net.refs[i].b].v.data();
        size_t in_stride = in.count(), out_stride = out.count();
        const double* dyp = dy.data();
        double* dxp = dx.data();
        parallel_for(static_cast<size_t>(b), [&](size_t s) {
          conv_backward_input_one(dxp + s * in_stride, kernel,
                                  dyp + s * out_stride, d);
        });
        const double* xp = x.data();
        parallel_for(static_cast<size_t>(out.c), [&](size_t oc) {
          conv_backward_params_oc(static_cast<int>(oc), xp, dyp, b, dkernel,
                                  dbias, d);
        });
        break;
      }
      case LayerSpec::Kind::BatchNorm: {
        int ch = in.spatial ? in.c : in.n;
        size_t plane = in.spatial ? static_cast<size_t>(in.h) * in.w : 1;
        size_t stride = in.count();
        int bi = tape.bn_index[i];
        const std::vector<double>& xhat = tape.bn_xhat[bi];
        const std::vector<double>& var = tape.bn_var[bi];
        const double* gamma = net.params[net.refs[i].gamma].v.data();
        double* dgamma = grad.params[net.refs[i].gamma].v.data();
        double* dbeta = grad.params[net.refs[i].beta].v.data();
        double n = static_cast<double>(b) * static_cast<double>(plane);
        for (int c = 0; c < ch; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int s = 0; s < b; ++s) {
            const double* dyc = dy.data() + s * stride + c * plane;
            const double* hc = xhat.data() + s * stride + c * plane;
            for (size_t k = 0; k < plane; ++k) {
              sum_dy += dyc[k];
              sum_dy_xhat += dyc[k] * hc[k];
            }
          }
          dgamma[c] += sum_dy_xhat;
          dbeta[c] += sum_dy;
          double inv_std = 1.0 / std::sqrt(var[c] + kBnEps);
          double g = gamma[c];
          for (int s = 0; s < b; ++s) {
            const double* dyc = dy.data() + s * stride + c * plane;
            const double* hc = xhat.data() + s * stride + c * plane;
            double* dxc = dx.data() + s * stride + c * plane;
            for (size_t k = 0; k < plane; ++k) {
              dxc[k] = g * inv_std / n *
                       (n * dyc[k] - sum_dy - hc[k] * sum_dy_xhat);
            }
          }
        }
        break;
      }
      case LayerSpec::Kind::Relu: {
        for (size_t k = 0; k < dx.size(); ++k) {
          dx[k] = x[k] > 0.0 ? dy[k] : 0.0;
        }
        break;
      }
      case LayerSpec::Kind::MaxPool: {
        const std::vector<int>& arg = tape.pool_arg[tape.pool_index[i]];
        size_t in_stride = in.count(), out_stride = out.count();
        for (int s = 0; s < b; ++s) {
          const double* dys = dy.data() + s * out_stride;
          const int* as = arg.data() + s * out_stride;
          double* dxs = dx.data() + s * in_stride;
          for (size_t k = 0; k < out_stride; ++k) {
            dxs[as[k]] += dys[k];
          }
        }
        break;
      }
      case LayerSpec::Kind::Inject: {
        const std::vector<double>& cmds = batch.commands;
        double* dW = grad.params[net.refs[i].w].v.data();
        double* db = grad.params[net.refs[i].b].v.data();
        int cd = arch.command_dim;
        size_t plane = static_cast<size_t>(in.h) * in.w;
        size_t in_stride = in.count(), out_stride = out.count();
        for (int s = 0; s < b; ++s) {
          const double* dys = dy.data() + s * out_stride;
          double* dxs = dx.data() + s * in_stride;
          const double* cmd = cmds.data() + static_cast<size_t>(s) * cd;
          std::copy(dys, dys + in_stride, dxs);
          size_t u_base = l.mode == InjectMode::Add ? 0 : in_stride;
          for (int c = 0; c < l.units; ++c) {
            const double* dyc = dys + u_base + static_cast<size_t>(c) * plane;
            double du = 0.0;
            for (size_t k = 0; k < plane; ++k) du += dyc[k];
            db[c] += du;
            for (int k = 0; k < cd; ++k) {
              double s_k = k < 3 ? arch.command_scale : 1.0;
              dW[c * cd + k] += du * s_k * cmd[k];
            }
          }
        }
        break;
      }
      case LayerSpec::Kind::Flatten: {
        dx = dy;
        break;
      }
      case LayerSpec::Kind::Fc: {
        const std::vector<double>& W = net.params[net.refs[i].w].v;
        double* dW = grad.params[net.refs[i].w].v.data();
        double* db = grad.params[net.refs[i].b].v.data();
        int ni = in.n, no = out.n;
        for (int s = 0; s < b; ++s) {
          const double* xs = x.data() + static_cast<size_t>(s) * ni;
          const double* dys = dy.data() + static_cast<size_t>(s) * no;
          double* dxs = dx.data() + static_cast<size_t>(s) * ni;
          for (int o = 0; o < no; ++o) {
            double g = dys[o];
            if (g == 0.0) continue;
            const double* wrow = W.data() + static_cast<size_t>(o) * ni;
            double* dwrow = dW + static_cast<size_t>(o) * ni;
            db[o] += g;
            for (int k = 0; k < ni; ++k) {
              dwrow[k] += g * xs[k];
              dxs[k] += g * wrow[k];
            }
          }
        }
        break;
      }
      case LayerSpec::Kind::Sigmoid:
        break;  // fused into the loss seed
    }
    dy = std::move(dx);
  }

  if (stats) {
    stats->mean.clear();
    stats->var.clear();
    for (size_t i = 0; i < nl; ++i) {
      if (tape.bn_index[i] >= 0) {
        stats->mean.push_back(tape.bn_mean[tape.bn_index[i]]);
        stats->var.push_back(tape.bn_var[tape.bn_index[i]]);
      }
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Cropping.

Image center_crop(const Image& img, int crop_h, int crop_w) {
  if (crop_h > img.height || crop_w > img.width) {
    throw std::invalid_argument("center_crop: crop larger than image");
  }
  int oy = (img.height - crop_h) / 2;
  int ox = (img.width - crop_w) / 2;
  Image out = Image::zeros(crop_h, crop_w, img.channels);
  for (int r = 0; r < crop_h; ++r) {
    for (int c = 0; c < crop_w; ++c) {
      for (int ch = 0; ch < img.channels; ++ch) {
        out.at(r, c, ch) = img.at(r + oy, c + ox, ch);
      }
    }
  }
  return out;
}

Image random_crop(const Image& img, int crop_h, int crop_w, uint64_t seed) {
  if (crop_h > img.height || crop_w > img.width) {
    throw std::invalid_argument("random_crop: crop larger than image");
  }
  Rng rng(derive_seed(seed, 0x63726f70u));
  int oy = static_cast<int>(rng.index(img.height - crop_h + 1));
  int ox = static_cast<int>(rng.index(img.width - crop_w + 1));
  Image out = Image::zeros(crop_h, crop_w, img.channels);
  for (int r = 0; r < crop_h; ++r) {
    for (int c = 0; c < crop_w; ++c) {
      for (int ch = 0; ch < img.channels; ++ch) {
        out.at(r, c, ch) = img.at(r + oy, c + ox, ch);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training.

namespace {

// Copies a (possibly cropped) Image8 into the batch tensor as doubles.
void blit_sample(const Image8& img, int oy, int ox, int crop_hw, double* dst) {
  for (int ch = 0; ch < img.channels; ++ch) {
    for (int r = 0; r < crop_hw; ++r) {
      for (int c = 0; c < crop_hw; ++c) {
        size_t src = (static_cast<size_t>(r + oy) * img.width + (c + ox)) *
                         img.channels +
                     ch;
        *dst++ = static_cast<double>(img.data[src]) / 255.0;
      }
    }
  }
}

}  // namespace

Network train_network(Network net, std::span<const SampleRef> samples,
                      const TrainConfig& cfg,
                      std::vector<double>* epoch_losses) {
  if (samples.empty()) {
    throw std::invalid_argument("train_network: empty dataset");
  }
  const ArchSpec& arch = net.arch;
  int crop_hw = arch.in_h;
  if (arch.in_h != arch.in_w) {
    throw ConfigError("train_network: non-square input not supported");
  }
  Network velocity = net.zeros_like();
  Network grad = net.zeros_like();

  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng perm_rng(derive_seed(cfg.seed, 0x7065726du, epoch));
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[perm_rng.index(i)]);
    }
    double epoch_loss = 0.0;
    size_t seen = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      size_t bsz = std::min(order.size() - start,
                            static_cast<size_t>(cfg.batch_size));
      TrainBatch batch;
      batch.b = static_cast<int>(bsz);
      batch.images.resize(bsz * static_cast<size_t>(arch.in_channels) *
                          crop_hw * crop_hw);
      batch.commands.resize(bsz * arch.command_dim);
      batch.labels.resize(bsz);
      size_t sample_pixels =
          static_cast<size_t>(arch.in_channels) * crop_hw * crop_hw;
      for (size_t k = 0; k < bsz; ++k) {
        const SampleRef& s = samples[order[start + k]];
        int ih = s.pregrasp->height, iw = s.pregrasp->width;
        int oy = (ih - crop_hw) / 2, ox = (iw - crop_hw) / 2;
        if (cfg.augment_crop && (ih > crop_hw || iw > crop_hw)) {
          Rng crop_rng(
              derive_seed(cfg.seed, 0x61756775u,
                          static_cast<uint64_t>(epoch) * samples.size() +
                              order[start + k]));
          oy = static_cast<int>(crop_rng.index(ih - crop_hw + 1));
          ox = static_cast<int>(crop_rng.index(iw - crop_hw + 1));
        }
        double* dst = batch.images.data() + k * sample_pixels;
        size_t half = sample_pixels / 2;
        blit_sample(*s.pregrasp, oy, ox, crop_hw, dst);
        blit_sample(*s.current, oy, ox, crop_hw, dst + half);
        double* cmd = batch.commands.data() + k * arch.command_dim;
        cmd[0] = s.displacement.dx;
        cmd[1] = s.displacement.dy;
        cmd[2] = s.displacement.dz;
        cmd[3] = s.displacement.sin_dtheta;
        cmd[4] = s.displacement.cos_dtheta;
        batch.labels[k] = s.label;
      }
      for (ParamBlock& g : grad.params) {
        std::fill(g.v.begin(), g.v.end(), 0.0);
      }
      BnBatchStats stats;
      double loss = loss_and_grad(net, batch, grad, &stats);
      epoch_loss += loss * static_cast<double>(bsz);
      seen += bsz;

      // Momentum SGD.
      if (cfg.learning_rate != 0.0) {
        for (size_t p = 0; p < net.params.size(); ++p) {
          std::vector<double>& w = net.params[p].v;
          std::vector<double>& vel = velocity.params[p].v;
          const std::vector<double>& g = grad.params[p].v;
          for (size_t k = 0; k < w.size(); ++k) {
            vel[k] = cfg.momentum * vel[k] - cfg.learning_rate * g[k];
            w[k] += vel[k];
          }
        }
      }
      // Running statistics advance in train mode regardless of lr.
      size_t bn_i = 0;
      for (size_t i = 0; i < arch.layers.size(); ++i) {
        if (arch.layers[i].kind != LayerSpec::Kind::BatchNorm) continue;
        std::vector<double>& rm = net.buffers[net.refs[i].mean].v;
        std::vector<double>& rv = net.buffers[net.refs[i].var].v;
        const std::vector<double>& m = stats.mean[bn_i];
        const std::vector<double>& v = stats.var[bn_i];
        for (size_t c = 0; c < rm.size(); ++c) {
          rm[c] = cfg.bn_momentum * rm[c] + (1.0 - cfg.bn_momentum) * m[c];
          rv[c] = cfg.bn_momentum * rv[c] + (1.0 - cfg.bn_momentum) * v[c];
        }
        ++bn_i;
      }
    }
    if (epoch_losses) {
      epoch_losses->push_back(epoch_loss / static_cast<double>(seen));
    }
  }
  return net;
}

// ---------------------------------------------------------------------------
// Serialization.

namespace {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return static_cast<bool>(is);
}

}  // namespace

void save_network(const Network& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("save_network: cannot open " + path);
  os.write(kMagic, 4);
  write_pod(os, kModelVersion);
  std::string text = net.arch.to_text();
  write_pod(os, static_cast<uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const ParamBlock& p : net.params) {
    os.write(reinterpret_cast<const char*>(p.v.data()),
             static_cast<std::streamsize>(p.v.size() * sizeof(double)));
  }
  for (const ParamBlock& p : net.buffers) {
    os.write(reinterpret_cast<const char*>(p.v.data()),
             static_cast<std::streamsize>(p.v.size() * sizeof(double)));
  }
  if (!os) throw IoError("save_network: write failed for " + path);
}

Network load_network(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_network: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("load_network: bad magic header in " + path);
  }
  uint32_t version = 0;
  if (!read_pod(is, version)) {
    throw TruncationError("load_network: truncated header in " + path);
  }
  if (version != kModelVersion) {
    throw VersionError("load_network: unsupported model version " +
                       std::to_string(version));
  }
  uint32_t text_len = 0;
  if (!read_pod(is, text_len)) {
    throw TruncationError("load_network: truncated header in " + path);
  }
  std::string text(text_len, '\0');
  is.read(text.data(), text_len);
  if (!is) throw TruncationError("load_network: truncated descriptor in " + path);
  Network net = build_network(ArchSpec::parse(text), 0);
  auto read_block = [&](ParamBlock& p) {
    is.read(reinterpret_cast<char*>(p.v.data()),
            static_cast<std::streamsize>(p.v.size() * sizeof(double)));
    if (!is) {
      throw TruncationError("load_network: truncated block " + p.name +
                            " in " + path);
    }
  };
  for (ParamBlock& p : net.params) read_block(p);
  for (ParamBlock& p : net.buffers) read_block(p);
  char extra;
  if (is.read(&extra, 1)) {
    throw FormatError("load_network: trailing data in " + path);
  }
  return net;
}

// ---------------------------------------------------------------------------
// Predictor.

void NetPredictor::score(const Image& pregrasp, const Image& current,
                         std::span<const MotorCommand> commands,
                         std::span<double> out) const {
  const Network& net = *net_;
  const ArchSpec& arch = net.arch;
  if (pregrasp.channels + current.channels != arch.in_channels ||
      !pregrasp.same_shape(current)) {
    throw std::invalid_argument("NetPredictor: image shape mismatch");
  }
  if (out.size() != commands.size()) {
    throw std::invalid_argument("NetPredictor: output size mismatch");
  }
  Image i0 = center_crop(pregrasp, arch.in_h, arch.in_w);
  Image it = center_crop(current, arch.in_h, arch.in_w);

  size_t pixels = static_cast<size_t>(arch.in_h) * arch.in_w;
  std::vector<double> input(static_cast<size_t>(arch.in_channels) * pixels);
  for (size_t k = 0; k < pixels * i0.channels; ++k) {
    input[k] = static_cast<double>(i0.data[k]);
  }
  for (size_t k = 0; k < pixels * it.channels; ++k) {
    input[pixels * i0.channels + k] = static_cast<double>(it.data[k]);
  }

  // Everything before the injection point is command-independent: run that
  // stem once and reuse it for every candidate command.
  size_t inject_idx = 0;
  for (size_t i = 0; i < arch.layers.size(); ++i) {
    if (arch.layers[i].kind == LayerSpec::Kind::Inject) {
      inject_idx = i;
      break;
    }
  }
  const std::vector<double> no_cmd(arch.command_dim, 0.0);
  std::vector<double> stem = std::move(input);
  std::vector<double> next;
  for (size_t i = 0; i < inject_idx; ++i) {
    apply_layer(net, i, 1, stem, next, no_cmd, Mode::Eval, nullptr);
    stem.swap(next);
  }

  size_t nl = arch.layers.size();
  std::vector<double> cmd(arch.command_dim);
  std::vector<double> act, tmp;
  for (size_t k = 0; k < commands.size(); ++k) {
    cmd[0] = commands[k].dx;
    cmd[1] = commands[k].dy;
    cmd[2] = commands[k].dz;
    cmd[3] = commands[k].sin_dtheta;
    cmd[4] = commands[k].cos_dtheta;
    act = stem;
    for (size_t i = inject_idx; i < nl; ++i) {
      apply_layer(net, i, 1, act, tmp, cmd, Mode::Eval, nullptr);
      act.swap(tmp);
    }
    out[k] = clamp_prob(act[0]);
  }
}

}  // namespace sg
