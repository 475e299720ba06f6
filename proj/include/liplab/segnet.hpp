#pragma once

// Attention UNet, the two-stage sequential pipeline, the mask autoencoder, training and persistence.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "liplab/config.hpp"
#include "liplab/error.hpp"
#include "liplab/imagio.hpp"
#include "liplab/nn/adam.hpp"
#include "liplab/nn/gradcheck.hpp"
#include "liplab/nn/graph.hpp"
#include "liplab/nn/layers.hpp"
#include "liplab/nn/loss.hpp"
#include "liplab/nn/ops.hpp"
#include "liplab/texture.hpp"

namespace liplab::segnet {

using nn::Graph;
using nn::ParameterStore;
using nn::Shape;
using nn::Tensor;
using nn::Var;

struct AUNetSpec {
  int in_channels = 5;
  std::array<int, 4> widths{8, 16, 32, 64};
  int height = 64;
  int width = 64;

  int bottleneck_width() const { return 2 * widths[3]; }
  int attention_width(int level) const { return std::max(1, widths[level] / 2); }

  void validate() const {
    if (in_channels <= 0) throw UsageError("in_channels must be positive");
    for (int i = 0; i < 4; ++i) {
      if (widths[i] <= 0 || (i > 0 && widths[i] <= widths[i - 1])) {
        throw UsageError("widths must be positive and strictly increasing");
      }
    }
    if (height <= 0 || width <= 0 || height % 16 || width % 16) {
      throw UsageError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                       " must be positive and divisible by 16");
    }
  }

  friend bool operator==(const AUNetSpec&, const AUNetSpec&) = default;
};

/// Four conv+pool encoder levels, a bottleneck, and four decoder levels of
/// transposed conv -> attention-gated skip -> concat -> conv, ending in a 1x1 conv + sigmoid.
class AttentionUNet {
 public:
  explicit AttentionUNet(AUNetSpec spec) : spec_(spec) { spec_.validate(); }

  const AUNetSpec& spec() const { return spec_; }

  template <class T>
  void declare(ParameterStore<T>& store, nn::Rng& rng) const {
    const auto& w = spec_.widths;
    int cin = spec_.in_channels;
    for (int k = 0; k < 4; ++k) {
      nn::declare_conv(store, level("enc", k) + ".conv", cin, w[k], 3, rng);
      cin = w[k];
    }
    nn::declare_conv(store, "bottleneck.conv", w[3], spec_.bottleneck_width(), 3, rng);
    int c_gate = spec_.bottleneck_width();
    for (int k = 3; k >= 0; --k) {
      nn::declare_conv_transpose(store, level("up", k), c_gate, w[k], rng);
      nn::declare_attention(store, level("att", k), w[k], c_gate, spec_.attention_width(k), rng);
      nn::declare_conv(store, level("dec", k) + ".conv", 2 * w[k], w[k], 3, rng);
      c_gate = w[k];
    }
    nn::declare_conv(store, "head", w[0], 1, 1, rng);
  }

  /// Closed-form count of trainable scalars.
  std::size_t parameter_count() const {
    const auto& w = spec_.widths;
    std::size_t n = 0;
    int cin = spec_.in_channels;
    for (int k = 0; k < 4; ++k) {
      n += std::size_t(9) * cin * w[k] + w[k];
      cin = w[k];
    }
    const int b = spec_.bottleneck_width();
    n += std::size_t(9) * w[3] * b + b;
    int cg = b;
    for (int k = 3; k >= 0; --k) {
      const int inter = spec_.attention_width(k);
      n += std::size_t(4) * cg * w[k] + w[k];                          // transposed conv
      n += std::size_t(w[k]) * inter + std::size_t(cg) * inter + inter  // attention projections
           + inter + 1;                                                  // psi
      n += std::size_t(9) * 2 * w[k] * w[k] + w[k];                     // decoder conv
      cg = w[k];
    }
    return n + w[0] + 1;
  }

  template <class T>
  Var forward(Graph<T>& g, ParameterStore<T>& store, Var x) const {
    const Shape xs = g.shape(x);
    if (xs.c != spec_.in_channels || xs.h != spec_.height || xs.w != spec_.width) {
      throw ShapeError("AUNet expects (N," + std::to_string(spec_.in_channels) + "," + std::to_string(spec_.height) +
                       "," + std::to_string(spec_.width) + "), got " + xs.str());
    }
    auto conv = [&](Var in, const std::string& name) {
      return nn::conv2d(g, in, g.parameter(store.get(name + ".w")), g.parameter(store.get(name + ".b")));
    };
    std::array<Var, 4> skips;
    Var h = x;
    for (int k = 0; k < 4; ++k) {
      skips[k] = nn::relu(g, conv(h, level("enc", k) + ".conv"));
      h = nn::maxpool2(g, skips[k]);
    }
    Var gate = nn::relu(g, conv(h, "bottleneck.conv"));
    for (int k = 3; k >= 0; --k) {
      const std::string up = level("up", k);
      const Var upsampled = nn::relu(
          g, nn::conv_transpose2(g, gate, g.parameter(store.get(up + ".w")), g.parameter(store.get(up + ".b"))));
      const Var attended = nn::attention_gate(g, skips[k], gate, nn::bind_attention(g, store, level("att", k)));
      gate = nn::relu(g, conv(nn::concat_channels(g, attended, upsampled), level("dec", k) + ".conv"));
    }
    return nn::sigmoid(g, conv(gate, "head"));
  }

 private:
  static std::string level(const char* kind, int k) { return std::string(kind) + std::to_string(k + 1); }

  AUNetSpec spec_;
};

template <class T>
ParameterStore<T> build_aunet(const AUNetSpec& spec, std::uint64_t seed) {
  ParameterStore<T> store(seed);
  nn::Rng rng(seed);
  AttentionUNet(spec).declare(store, rng);
  return store;
}

/// Named configurations.
inline AUNetSpec desk_spec(int in_channels = 5) { return {in_channels, {8, 16, 32, 64}, 64, 64}; }
inline AUNetSpec full_spec(int in_channels = 5) { return {in_channels, {64, 128, 256, 512}, 256, 256}; }
inline AUNetSpec toy_spec(int in_channels = 5) { return {in_channels, {4, 8, 16, 32}, 16, 16}; }

/// Options for checking a whole network. Composing ~20 layers makes the third derivative large enough that
/// the O(eps^2) truncation term of the central difference reaches 4e-4 at eps = 1e-3, so the step is 1e-4;
/// a full check of every entry takes minutes, so entries are sampled.
inline nn::GradCheckOptions network_check_options(std::size_t max_entries = 64) {
  nn::GradCheckOptions o;
  o.eps = 1e-4;
  o.max_entries = max_entries;
  return o;
}

/// Finite-difference check of the whole network plus loss_bce_dice, on a random input and random target.
inline nn::GradCheckReport grad_check_network(const AUNetSpec& spec, std::uint64_t seed,
                                              const nn::GradCheckOptions& opt = network_check_options()) {
  ParameterStore<double> store = build_aunet<double>(spec, seed);
  nn::Rng rng(seed ^ 0xD1B54A32D192ED03ull);
  Tensor<double> x(Shape{1, spec.in_channels, spec.height, spec.width});
  for (auto& v : x.data) v = rng.uniform();
  Tensor<double> target(Shape{1, 1, spec.height, spec.width});
  for (auto& v : target.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  const AttentionUNet net(spec);
  nn::GradCheckOptions o = opt;
  o.seed = seed;
  return nn::grad_check(
      store, [&](Graph<double>& g) { return nn::loss_bce_dice(g, net.forward(g, store, g.input(x)), target); }, o);
}

// ---------------------------------------------------------------------------------------------
// Data conversion

/// H x W x C interleaved image -> (1, C, H, W).
template <class T = float>
Tensor<T> to_tensor(const FloatImage& img) {
  Tensor<T> t(Shape{1, img.channels, img.height, img.width});
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) t.at(0, c, y, x) = static_cast<T>(img.at(y, x, c));
  return t;
}

template <class T = float>
Tensor<T> mask_tensor(const BinaryMask& m) {
  Tensor<T> t(Shape{1, 1, m.height, m.width});
  for (std::size_t i = 0; i < m.bits.size(); ++i) t.data[i] = m.bits[i] ? T{1} : T{0};
  return t;
}

/// Stacks single items (1, C, H, W) along the batch axis.
template <class T>
Tensor<T> stack(const std::vector<const Tensor<T>*>& items) {
  Shape s = items.front()->shape;
  s.n = static_cast<int>(items.size());
  Tensor<T> out(s);
  const std::size_t per = items.front()->size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!(items[i]->shape == items.front()->shape)) throw ShapeError("all samples must share dimensions");
    std::copy(items[i]->data.begin(), items[i]->data.end(), out.data.begin() + i * per);
  }
  return out;
}

/// Item `n` of a batch as a (1, C, H, W) tensor.
template <class T>
Tensor<T> unstack(const Tensor<T>& batch, int n) {
  Shape s = batch.shape;
  s.n = 1;
  Tensor<T> out(s);
  std::copy_n(batch.item(n), out.size(), out.data.begin());
  return out;
}

inline BinaryMask threshold_map(const Tensor<float>& prob, double threshold, int item = 0) {
  BinaryMask m(prob.shape.h, prob.shape.w);
  const float* p = prob.item(item);
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = p[i] >= threshold ? 1 : 0;
  return m;
}

/// Network input for an RGB image: 5 planes (RGB, LBP, GLBP) or 3 planes (RGB only).
inline Tensor<float> prepare_input(const ByteImage& rgb, int in_channels, const texture::LbpParams& lbp = {}) {
  if (rgb.channels != 3) throw ShapeError("expected an RGB image");
  if (in_channels == texture::kInputPlanes) return to_tensor(texture::build_input(rgb, lbp));
  if (in_channels == 3) {
    FloatImage f = to_float(rgb);
    for (auto& v : f.data) v = static_cast<float>(v / 255.0);
    return to_tensor(f);
  }
  throw UsageError("stage-1 input must have 5 (texture) or 3 (RGB) channels");
}

/// Thresholded soft overlap used for training logs: 2|A n B| / (|A| + |B|).
inline double dice_of(const Tensor<float>& prob, const Tensor<float>& target, double threshold = 0.5) {
  double inter = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = prob.data[i] >= threshold ? 1.0 : 0.0, t = target.data[i];
    inter += p * t;
    a += p;
    b += t;
  }
  return a + b == 0 ? 1.0 : 2.0 * inter / (a + b);
}

// ---------------------------------------------------------------------------------------------
// Training

struct Sample {
  Tensor<float> input;   ///< (1, C, H, W)
  Tensor<float> target;  ///< (1, 1, H, W) of {0, 1}
};

struct TrainConfig {
  int epochs = 100;
  double lr = 1e-3;
  int batch = 4;
  std::uint64_t seed = 1;
  double lambda_bce = 0.5;
  double threshold = 0.5;
  /// Stop a stage early once its epoch training Dice reaches this value; 0 disables.
  double stop_dice = 0.0;
};

struct EpochLog {
  int stage = 1;
  int epoch = 0;
  double loss = 0.0;
  double smoothed_loss = 0.0;  ///< running minimum of the loss curve
  double dice = 0.0;           ///< mean training Dice of the predictions made during the epoch
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  int epochs_run() const { return static_cast<int>(epochs.size()); }
  double final_loss() const { return epochs.empty() ? 0.0 : epochs.back().loss; }
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Minimises loss_bce_dice over `data` with Adam. Deterministic for a fixed seed and data order.
template <class Net>
TrainResult train_network(const Net& net, ParameterStore<float>& store, const std::vector<Sample>& data,
                          const TrainConfig& cfg, int stage = 1, const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw UsageError("training set is empty");
  if (cfg.batch <= 0 || cfg.epochs < 0) throw UsageError("batch must be positive and epochs non-negative");
  for (const auto& s : data) {
    if (!(s.input.shape == data.front().input.shape) || !(s.target.shape == data.front().target.shape)) {
      throw ShapeError("all training samples must share dimensions");
    }
  }
  nn::Adam<float> adam({cfg.lr});
  nn::Rng shuffle(cfg.seed ^ (0xA5A5A5A5ull * static_cast<std::uint64_t>(stage)));
  std::vector<std::size_t> order(data.size());
  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double loss_sum = 0.0, dice_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch);
      std::vector<const Tensor<float>*> xs, ts;
      for (std::size_t i = start; i < stop; ++i) {
        xs.push_back(&data[order[i]].input);
        ts.push_back(&data[order[i]].target);
      }
      const Tensor<float> target = stack(ts);
      const std::string where = "stage " + std::to_string(stage) + " epoch " + std::to_string(epoch) + " batch " +
                                std::to_string(start / cfg.batch);
      try {
        store.zero_grad();
        Graph<float> g;
        const Var pred = net.forward(g, store, g.input(stack(xs)));
        const Var loss = nn::loss_bce_dice(g, pred, target, cfg.lambda_bce);
        const double value = g.value(loss).data[0];
        if (!std::isfinite(value)) throw NumericalError("non-finite loss");
        loss_sum += value * static_cast<double>(stop - start);
        for (std::size_t i = 0; i < stop - start; ++i) {
          dice_sum += dice_of(unstack(g.value(pred), static_cast<int>(i)), *ts[i], cfg.threshold);
        }
        g.backward(loss);
        adam.step(store);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at " + where);
      }
    }
    EpochLog log;
    log.stage = stage;
    log.epoch = epoch;
    log.loss = loss_sum / static_cast<double>(data.size());
    best = std::min(best, log.loss);
    log.smoothed_loss = best;
    log.dice = dice_sum / static_cast<double>(data.size());
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
    if (cfg.stop_dice > 0.0 && log.dice >= cfg.stop_dice) break;
  }
  return result;
}

/// Forward pass without gradients, in mini-batches. Returns (N, 1, H, W) probabilities.
template <class Net>
Tensor<float> predict(const Net& net, ParameterStore<float>& store, const std::vector<const Tensor<float>*>& inputs,
                      int batch = 8) {
  if (inputs.empty()) throw UsageError("nothing to predict");
  std::vector<Tensor<float>> parts;
  for (std::size_t start = 0; start < inputs.size(); start += batch) {
    const std::size_t stop = std::min(inputs.size(), start + batch);
    std::vector<const Tensor<float>*> xs(inputs.begin() + start, inputs.begin() + stop);
    Graph<float> g(false);
    parts.push_back(g.value(net.forward(g, store, g.input(stack(xs)))));
  }
  Shape s = parts.front().shape;
  s.n = static_cast<int>(inputs.size());
  Tensor<float> out(s);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + off);
    off += p.size();
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Sequential two-stage pipeline

struct PipelineSpec {
  AUNetSpec stage1 = desk_spec(5);
  AUNetSpec stage2 = desk_spec(1);
  double threshold = 0.5;
  texture::LbpParams lbp{};

  void validate() const {
    stage1.validate();
    stage2.validate();
    if (stage2.in_channels != 1) throw UsageError("stage 2 consumes the 1-channel stage-1 probability map");
    if (stage2.height != stage1.height || stage2.width != stage1.width) {
      throw UsageError("stage 2 input size must equal stage 1 output size");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("threshold must be in (0, 1)");
  }
};

inline PipelineSpec make_pipeline_spec(int in_channels, std::array<int, 4> widths, int height, int width,
                                       double threshold = 0.5) {
  PipelineSpec p;
  p.stage1 = {in_channels, widths, height, width};
  p.stage2 = {1, widths, height, width};
  p.threshold = threshold;
  p.validate();
  return p;
}

struct Pipeline {
  PipelineSpec spec;
  ParameterStore<float> stage1;
  ParameterStore<float> stage2;
};

inline Pipeline build_pipeline(const PipelineSpec& spec, std::uint64_t seed) {
  spec.validate();
  return {spec, build_aunet<float>(spec.stage1, seed), build_aunet<float>(spec.stage2, seed + 1)};
}

struct LabeledImage {
  ByteImage rgb;
  BinaryMask mask;
};

struct PipelineTrainResult {
  TrainResult stage1;
  TrainResult stage2;
  double stage1_train_dice = 0.0;  ///< mean Dice of thresholded stage-1 maps on the training set
  double stage2_train_dice = 0.0;
};

/// Stage 1 on (input planes, mask); then stage 2 on (stage-1 probability map, mask) with stage 1 frozen.
inline PipelineTrainResult train_pipeline(Pipeline& pipe, const std::vector<LabeledImage>& data,
                                          const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  pipe.spec.validate();
  std::vector<Sample> first;
  for (const auto& item : data) {
    if (item.rgb.height != pipe.spec.stage1.height || item.rgb.width != pipe.spec.stage1.width ||
        item.mask.height != item.rgb.height || item.mask.width != item.rgb.width) {
      throw ShapeError("training image size does not match the pipeline input size");
    }
    first.push_back({prepare_input(item.rgb, pipe.spec.stage1.in_channels, pipe.spec.lbp), mask_tensor(item.mask)});
  }
  const AttentionUNet net1(pipe.spec.stage1), net2(pipe.spec.stage2);
  PipelineTrainResult out;
  out.stage1 = train_network(net1, pipe.stage1, first, cfg, 1, on_epoch);

  std::vector<const Tensor<float>*> inputs;
  for (const auto& s : first) inputs.push_back(&s.input);
  const Tensor<float> maps = predict(net1, pipe.stage1, inputs);
  std::vector<Sample> second;
  for (std::size_t i = 0; i < first.size(); ++i) {
    second.push_back({unstack(maps, static_cast<int>(i)), first[i].target});
    out.stage1_train_dice += dice_of(second.back().input, first[i].target, pipe.spec.threshold);
  }
  out.stage1_train_dice /= static_cast<double>(first.size());

  TrainConfig cfg2 = cfg;
  cfg2.seed = cfg.seed + 1;
  out.stage2 = train_network(net2, pipe.stage2, second, cfg2, 2, on_epoch);
  std::vector<const Tensor<float>*> maps_in;
  for (const auto& s : second) maps_in.push_back(&s.input);
  const Tensor<float> refined = predict(net2, pipe.stage2, maps_in);
  for (std::size_t i = 0; i < second.size(); ++i) {
    out.stage2_train_dice += dice_of(unstack(refined, static_cast<int>(i)), second[i].target, pipe.spec.threshold);
  }
  out.stage2_train_dice /= static_cast<double>(second.size());
  return out;
}

struct Inference {
  Tensor<float> stage1_prob;  ///< (1, 1, H, W)
  Tensor<float> prob;         ///< final (stage-2) probabilities
  BinaryMask stage1_mask;
  BinaryMask mask;
};

/// Runs both stages over a list of images; thresholds at the pipeline threshold.
inline std::vector<Inference> infer_batch(Pipeline& pipe, const std::vector<const ByteImage*>& images) {
  std::vector<Tensor<float>> inputs;
  for (const ByteImage* img : images) {
    if (img->height != pipe.spec.stage1.height || img->width != pipe.spec.stage1.width) {
      throw ShapeError("image is " + std::to_string(img->height) + "x" + std::to_string(img->width) +
                       ", pipeline expects " + std::to_string(pipe.spec.stage1.height) + "x" +
                       std::to_string(pipe.spec.stage1.width));
    }
    inputs.push_back(prepare_input(*img, pipe.spec.stage1.in_channels, pipe.spec.lbp));
  }
  std::vector<const Tensor<float>*> ptrs;
  for (const auto& t : inputs) ptrs.push_back(&t);
  const Tensor<float> first = predict(AttentionUNet(pipe.spec.stage1), pipe.stage1, ptrs);
  std::vector<Tensor<float>> maps;
  for (int i = 0; i < first.shape.n; ++i) maps.push_back(unstack(first, i));
  std::vector<const Tensor<float>*> map_ptrs;
  for (const auto& m : maps) map_ptrs.push_back(&m);
  const Tensor<float> second = predict(AttentionUNet(pipe.spec.stage2), pipe.stage2, map_ptrs);
  std::vector<Inference> out;
  for (int i = 0; i < first.shape.n; ++i) {
    Inference r;
    r.stage1_prob = maps[i];
    r.prob = unstack(second, i);
    r.stage1_mask = threshold_map(r.stage1_prob, pipe.spec.threshold);
    r.mask = threshold_map(r.prob, pipe.spec.threshold);
    out.push_back(std::move(r));
  }
  return out;
}

inline Inference infer(Pipeline& pipe, const ByteImage& rgb) { return std::move(infer_batch(pipe, {&rgb}).front()); }

/// Probability map as an H x W float image.
inline FloatImage prob_image(const Tensor<float>& prob) {
  FloatImage img(prob.shape.h, prob.shape.w, 1);
  std::copy_n(prob.data.begin(), img.data.size(), img.data.begin());
  return img;
}

// ---------------------------------------------------------------------------------------------
// Persistence: <dir>/manifest.txt + one tensor file per parameter

namespace detail {

inline std::string widths_text(const std::array<int, 4>& w) {
  return std::to_string(w[0]) + "," + std::to_string(w[1]) + "," + std::to_string(w[2]) + "," + std::to_string(w[3]);
}

inline std::string dims_text(const Shape& s) {
  return std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," + std::to_string(s.w);
}

inline std::string sampling_text(texture::Sampling s) { return s == texture::Sampling::nearest ? "nearest" : "bilinear"; }

inline texture::Sampling parse_sampling(const std::string& s) {
  if (s == "nearest") return texture::Sampling::nearest;
  if (s == "bilinear") return texture::Sampling::bilinear;
  throw UsageError("sampling must be nearest or bilinear, got '" + s + "'");
}

inline std::string tensor_file_name(const std::string& stage, const std::string& param) {
  return stage + "." + param + ".tensor";
}

}  // namespace detail

inline constexpr const char* kPipelineFormat = "liplab-pipeline-1";

inline void save_pipeline(const std::string& dir, const Pipeline& pipe) {
  std::filesystem::create_directories(dir);
  KeyValueConfig m;
  m.set("format", kPipelineFormat);
  m.set("input_size", std::to_string(pipe.spec.stage1.height) + "x" + std::to_string(pipe.spec.stage1.width));
  m.set("widths", detail::widths_text(pipe.spec.stage1.widths));
  m.set("stage1.in_channels", std::to_string(pipe.spec.stage1.in_channels));
  m.set("stage2.in_channels", std::to_string(pipe.spec.stage2.in_channels));
  m.set("threshold", liplab::detail::format_double(pipe.spec.threshold));
  m.set("lbp_neighbors", std::to_string(pipe.spec.lbp.neighbors));
  m.set("lbp_radius", liplab::detail::format_double(pipe.spec.lbp.radius));
  m.set("lbp_sampling", detail::sampling_text(pipe.spec.lbp.sampling));
  m.set("seed", std::to_string(pipe.stage1.seed()));
  for (const auto& [stage, store] : {std::pair<std::string, const ParameterStore<float>*>{"stage1", &pipe.stage1},
                                     std::pair<std::string, const ParameterStore<float>*>{"stage2", &pipe.stage2}}) {
    for (const auto& p : store->items()) {
      const std::string file = detail::tensor_file_name(stage, p.name);
      m.set("param." + stage + "." + p.name, detail::dims_text(p.value.shape) + " " + file);
      FloatTensor t;
      t.dims = {std::uint32_t(p.value.shape.n), std::uint32_t(p.value.shape.c), std::uint32_t(p.value.shape.h),
                std::uint32_t(p.value.shape.w)};
      t.data = p.value.data;
      write_tensor((std::filesystem::path(dir) / file).string(), t);
    }
  }
  liplab::detail::write_file((std::filesystem::path(dir) / "manifest.txt").string(), m.to_text());
}

/// Loads everything into fresh stores and only then returns; any mismatch throws before a partial result exists.
inline Pipeline load_pipeline(const std::string& dir) {
  const std::filesystem::path root(dir);
  if (!std::filesystem::exists(root / "manifest.txt")) throw DataError("missing weights: no manifest in '" + dir + "'");
  PipelineSpec spec;
  KeyValueConfig m;
  std::uint64_t seed = 0;
  try {
    m = KeyValueConfig::load((root / "manifest.txt").string());
    if (m.get_string("format", "") != kPipelineFormat) throw DataError("unsupported pipeline format in '" + dir + "'");
    const auto [h, w] = parse_size(m.raw("input_size"));
    const auto widths = m.get_int_list("widths", {});
    if (widths.size() != 4) throw DataError("manifest widths must list 4 values");
    spec = make_pipeline_spec(static_cast<int>(m.get_int("stage1.in_channels", 5)),
                              {widths[0], widths[1], widths[2], widths[3]}, h, w, m.get_double("threshold", 0.5));
    if (m.get_int("stage2.in_channels", 1) != 1) throw DataError("manifest stage2.in_channels must be 1");
    spec.lbp.neighbors = static_cast<int>(m.get_int("lbp_neighbors", 8));
    spec.lbp.radius = m.get_double("lbp_radius", 1.0);
    spec.lbp.sampling = detail::parse_sampling(m.get_string("lbp_sampling", "bilinear"));
    seed = static_cast<std::uint64_t>(m.get_int("seed", 0));
  } catch (const UsageError& e) {
    throw DataError(std::string("invalid manifest: ") + e.what());
  }

  Pipeline pipe = build_pipeline(spec, seed);
  for (auto& [stage, store] : {std::pair<std::string, ParameterStore<float>*>{"stage1", &pipe.stage1},
                               std::pair<std::string, ParameterStore<float>*>{"stage2", &pipe.stage2}}) {
    for (auto& p : store->items()) {
      const std::string key = "param." + stage + "." + p.name;
      if (!m.has(key)) throw DataError("manifest is missing parameter '" + stage + "." + p.name + "'");
      const std::string& entry = m.raw(key);
      const auto space = entry.find(' ');
      if (space == std::string::npos) throw DataError("malformed manifest entry for '" + key + "'");
      if (entry.substr(0, space) != detail::dims_text(p.value.shape)) {
        throw DataError("parameter '" + stage + "." + p.name + "': manifest shape " + entry.substr(0, space) +
                        " does not match the architecture shape " + detail::dims_text(p.value.shape));
      }
      FloatTensor t;
      try {
        t = read_tensor((root / entry.substr(space + 1)).string());
      } catch (const DataError& e) {
        throw DataError("parameter '" + stage + "." + p.name + "': " + e.what());
      }
      if (t.data.size() != p.value.size()) {
        throw DataError("parameter '" + stage + "." + p.name + "': tensor file has the wrong size");
      }
      p.value.data = std::move(t.data);
    }
  }
  return pipe;
}

// ---------------------------------------------------------------------------------------------
// Mask autoencoder

struct AutoencoderSpec {
  int height = 256;
  int width = 256;
  std::array<int, 2> widths{32, 64};

  void validate() const {
    if (height % 4 || width % 4 || height <= 0 || width <= 0) throw UsageError("autoencoder size must divide by 4");
    if (widths[0] <= 0 || widths[1] <= 0) throw UsageError("autoencoder widths must be positive");
  }
  /// (channels, height, width) of the latent code.
  std::array<int, 3> latent_dims() const { return {widths[1], height / 4, width / 4}; }
};

/// conv(32)+pool, conv(64)+pool -> latent; conv(64)+up, conv(32)+up, 3x3 conv + sigmoid -> reconstruction.
class MaskAutoencoder {
 public:
  explicit MaskAutoencoder(AutoencoderSpec spec) : spec_(spec) { spec_.validate(); }
  const AutoencoderSpec& spec() const { return spec_; }

  template <class T>
  void declare(ParameterStore<T>& store, nn::Rng& rng) const {
    const auto& w = spec_.widths;
    nn::declare_conv(store, "enc1", 1, w[0], 3, rng);
    nn::declare_conv(store, "enc2", w[0], w[1], 3, rng);
    nn::declare_conv(store, "dec1", w[1], w[1], 3, rng);
    nn::declare_conv(store, "dec2", w[1], w[0], 3, rng);
    nn::declare_conv(store, "head", w[0], 1, 3, rng);
  }

  template <class T>
  Var encode(Graph<T>& g, ParameterStore<T>& store, Var x) const {
    const Shape xs = g.shape(x);
    if (xs.c != 1 || xs.h != spec_.height || xs.w != spec_.width) {
      throw ShapeError("autoencoder expects (N,1," + std::to_string(spec_.height) + "," + std::to_string(spec_.width) +
                       "), got " + xs.str());
    }
    const Var h = nn::maxpool2(g, nn::relu(g, conv(g, store, x, "enc1")));
    return nn::maxpool2(g, nn::relu(g, conv(g, store, h, "enc2")));
  }

  template <class T>
  Var decode(Graph<T>& g, ParameterStore<T>& store, Var latent) const {
    const Var h = nn::upsample2(g, nn::relu(g, conv(g, store, latent, "dec1")));
    const Var h2 = nn::upsample2(g, nn::relu(g, conv(g, store, h, "dec2")));
    return nn::sigmoid(g, conv(g, store, h2, "head"));
  }

  template <class T>
  Var forward(Graph<T>& g, ParameterStore<T>& store, Var x) const {
    return decode(g, store, encode(g, store, x));
  }

 private:
  template <class T>
  static Var conv(Graph<T>& g, ParameterStore<T>& store, Var x, const std::string& name) {
    return nn::conv2d(g, x, g.parameter(store.get(name + ".w")), g.parameter(store.get(name + ".b")));
  }

  AutoencoderSpec spec_;
};

template <class T>
ParameterStore<T> build_autoencoder(const AutoencoderSpec& spec, std::uint64_t seed) {
  ParameterStore<T> store(seed);
  nn::Rng rng(seed);
  MaskAutoencoder(spec).declare(store, rng);
  return store;
}

/// Reconstruction training with mean-squared error; returns the per-epoch loss.
inline std::vector<double> train_autoencoder(const MaskAutoencoder& net, ParameterStore<float>& store,
                                             const std::vector<BinaryMask>& masks, const TrainConfig& cfg) {
  if (masks.empty()) throw UsageError("no masks to train on");
  std::vector<Tensor<float>> items;
  for (const auto& m : masks) items.push_back(mask_tensor(m));
  nn::Adam<float> adam({cfg.lr});
  nn::Rng shuffle(cfg.seed);
  std::vector<std::size_t> order(items.size());
  std::vector<double> losses;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch);
      std::vector<const Tensor<float>*> xs;
      for (std::size_t i = start; i < stop; ++i) xs.push_back(&items[order[i]]);
      const Tensor<float> batch = stack(xs);
      store.zero_grad();
      Graph<float> g;
      const Var loss = nn::mse_loss(g, net.forward(g, store, g.input(batch)), batch);
      sum += g.value(loss).data[0] * static_cast<double>(stop - start);
      g.backward(loss);
      adam.step(store);
    }
    losses.push_back(sum / static_cast<double>(items.size()));
  }
  return losses;
}

}  // namespace liplab::segnet
