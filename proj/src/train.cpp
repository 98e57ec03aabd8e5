#include "cav/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace cav {

namespace {

constexpr std::uint64_t kAugmentStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kAttackStream = 3;

double to_grid(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

void Dataset::validate() const {
  if (inputs.size() != labels.size())
    throw std::invalid_argument("dataset: inputs and labels differ in length");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].shape() != shape) throw std::invalid_argument("dataset: input shape mismatch");
    if (labels[i] >= num_classes) throw std::invalid_argument("dataset: label out of range");
  }
}

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
  if (begin > size()) begin = size();
  std::size_t end = std::min(size(), begin + count);
  Dataset d{shape, num_classes, {}, {}, split};
  d.inputs.assign(inputs.begin() + begin, inputs.begin() + end);
  d.labels.assign(labels.begin() + begin, labels.begin() + end);
  return d;
}

IdxArray read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("idx: cannot open " + path);
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)), {});
  if (raw.size() < 4 || raw[0] != 0 || raw[1] != 0)
    throw FormatError("idx: bad magic in " + path);
  if (raw[2] != 0x08) throw FormatError("idx: only unsigned-byte payloads are supported");
  std::size_t ndims = raw[3];
  if (ndims == 0 || raw.size() < 4 + 4 * ndims) throw FormatError("idx: truncated header");
  IdxArray a;
  std::size_t total = 1;
  for (std::size_t k = 0; k < ndims; ++k) {
    const std::uint8_t* p = raw.data() + 4 + 4 * k;
    std::size_t d = (std::size_t{p[0]} << 24) | (std::size_t{p[1]} << 16) |
                    (std::size_t{p[2]} << 8) | std::size_t{p[3]};
    a.dims.push_back(d);
    total *= d;
  }
  std::size_t offset = 4 + 4 * ndims;
  if (raw.size() - offset != total)
    throw FormatError("idx: payload holds " + std::to_string(raw.size() - offset) +
                      " bytes, header declares " + std::to_string(total));
  a.bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(offset), raw.end());
  return a;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t num_classes, const std::string& split) {
  IdxArray img = read_idx(images_path);
  IdxArray lab = read_idx(labels_path);
  if (img.dims.size() != 3) throw FormatError("idx: images must be N x H x W");
  if (lab.dims.size() != 1 || lab.dims[0] != img.dims[0])
    throw FormatError("idx: label count does not match image count");
  std::size_t n = img.dims[0], h = img.dims[1], w = img.dims[2];
  Dataset d;
  d.shape = {1, h, w};
  d.num_classes = num_classes;
  d.split = split;
  d.inputs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(h * w);
    for (std::size_t j = 0; j < h * w; ++j) v[j] = img.bytes[i * h * w + j] / 255.0;
    d.inputs.emplace_back(d.shape, std::move(v));
    if (lab.bytes[i] >= num_classes) throw FormatError("idx: label out of range");
    d.labels.push_back(lab.bytes[i]);
  }
  return d;
}

Dataset load_mnist(const std::string& dir, const std::string& split) {
  return load_idx(dir + "/" + split + "-images-idx3-ubyte", dir + "/" + split + "-labels-idx1-ubyte",
                  10, split);
}

Dataset synth_blobs(std::size_t n_classes, std::size_t dim, std::size_t count,
                    std::uint64_t seed) {
  if (n_classes == 0 || dim == 0) throw std::invalid_argument("synth_blobs: empty shape");
  CounterRng rng(seed);
  std::vector<std::vector<double>> centers(n_classes, std::vector<double>(dim));
  for (auto& c : centers)
    for (double& v : c) v = rng.uniform(0.2, 0.8);
  Dataset d;
  d.shape = {dim};
  d.num_classes = n_classes;
  d.split = "synthetic";
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t label = i % n_classes;
    std::vector<double> v(dim);
    for (std::size_t j = 0; j < dim; ++j) v[j] = to_grid(centers[label][j] + 0.1 * rng.normal());
    d.inputs.emplace_back(d.shape, std::move(v));
    d.labels.push_back(label);
  }
  return d;
}

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0 || !(lr > 0.0))
    throw std::invalid_argument("train: epochs, batch size and lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("train: Adam betas must lie in [0, 1)");
  if (flip < 0.0 || flip > 1.0 || translate < 0.0 || rotate_deg < 0.0)
    throw std::invalid_argument("train: bad augmentation parameters");
  if (adversarial) {
    const auto& a = *adversarial;
    if (a.iterations == 0 || !(a.lr > 0.0) || a.eps < 0.0 || a.ratio < 0.0 || a.ratio > 1.0)
      throw std::invalid_argument("train: bad adversarial block");
  }
}

Adam::Adam(const Network& net, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      m_(net.make_param_grads()), v_(net.make_param_grads()) {}

void Adam::step(Network& net, const ParamGrads& g) {
  ++t_;
  double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto update = [&](std::vector<double>& p, const std::vector<double>& gr, std::vector<double>& m,
                    std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gr[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gr[i] * gr[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  };
  auto& layers = net.mutable_layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (auto* d = std::get_if<Dense>(&layers[k])) {
      update(d->weights, g.weights[k], m_.weights[k], v_.weights[k]);
      update(d->bias, g.bias[k], m_.bias[k], v_.bias[k]);
    } else if (auto* c = std::get_if<Conv2d>(&layers[k])) {
      update(c->kernels, g.weights[k], m_.weights[k], v_.weights[k]);
      update(c->bias, g.bias[k], m_.bias[k], v_.bias[k]);
    }
  }
}

Tensor augment(const Tensor& x, const TrainConfig& cfg, CounterRng& rng) {
  const Shape& s = x.shape();
  if (s.size() != 3) return x;
  std::size_t ch = s[0], h = s[1], w = s[2];
  bool flip = rng.uniform() < cfg.flip;
  double angle = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg) * std::numbers::pi / 180.0;
  double ty = std::round(rng.uniform(-cfg.translate, cfg.translate) * static_cast<double>(h));
  double tx = std::round(rng.uniform(-cfg.translate, cfg.translate) * static_cast<double>(w));
  double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
  double cs = std::cos(angle), sn = std::sin(angle);
  Tensor out(s);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      // Inverse map: undo the shift, then the rotation, then the flip.
      double y = static_cast<double>(i) - ty - cy, xx = static_cast<double>(j) - tx - cx;
      double sy = cs * y - sn * xx + cy, sx = sn * y + cs * xx + cx;
      long si = std::lround(sy), sj = std::lround(sx);
      if (si < 0 || sj < 0 || si >= static_cast<long>(h) || sj >= static_cast<long>(w)) continue;
      std::size_t src_j = flip ? w - 1 - static_cast<std::size_t>(sj) : static_cast<std::size_t>(sj);
      for (std::size_t c = 0; c < ch; ++c)
        out[(c * h + i) * w + j] = x[(c * h + static_cast<std::size_t>(si)) * w + src_j];
    }
  return out;
}

std::vector<double> pgd_final(const Network& net, std::span<const double> x, std::size_t label,
                              const AdversarialConfig& adv, CounterRng& rng) {
  std::size_t n = x.size();
  std::vector<double> lo(n), hi(n), cur(n);
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = std::max(0.0, x[i] - adv.eps);
    hi[i] = std::min(1.0, x[i] + adv.eps);
    cur[i] = std::clamp(x[i] + rng.uniform(-adv.eps, adv.eps), lo[i], hi[i]);
  }
  for (std::size_t it = 0; it < adv.iterations; ++it) {
    LossGrad lg = net.loss_grad(cur, CrossEntropy{label});
    for (std::size_t i = 0; i < n; ++i) {
      double g = lg.grad[i];
      double step = g > 0.0 ? adv.lr : (g < 0.0 ? -adv.lr : 0.0);
      cur[i] = std::clamp(cur[i] + step, lo[i], hi[i]);
    }
  }
  return cur;
}

namespace {

TrainReport train_loop(Network& net, const Dataset& data, const TrainConfig& cfg,
                       const AdversarialConfig* adv) {
  cfg.validate();
  data.validate();
  if (data.shape != net.input_shape() || data.num_classes != net.num_classes())
    throw std::invalid_argument("train: dataset does not match the network");
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");

  CounterRng aug_rng(cfg.seed, kAugmentStream);
  CounterRng shuffle_rng(cfg.seed, kShuffleStream);
  CounterRng attack_rng(cfg.seed, kAttackStream);
  Adam opt(net, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  ParamGrads grads = net.make_param_grads();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> g_logits;

  TrainReport report;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::size_t end = std::min(order.size(), b + cfg.batch_size);
      std::size_t count = end - b;
      std::size_t n_adv =
          adv ? static_cast<std::size_t>(std::llround(adv->ratio * static_cast<double>(count))) : 0;
      grads.zero();
      double batch_sum = 0.0;
      for (std::size_t k = b; k < end; ++k) {
        std::size_t idx = order[k];
        Tensor x = augment(data.inputs[idx], cfg, aug_rng);
        std::vector<double> input = x.data();
        if (k - b < n_adv) input = pgd_final(net, input, data.labels[idx], *adv, attack_rng);
        Trace t = net.forward_trace(input);
        CrossEntropy ce{data.labels[idx]};
        batch_sum += loss_value(ce, t.logits());
        g_logits = loss_logit_grad(ce, t.logits());
        net.backward(t, g_logits, &grads);
      }
      double scale = 1.0 / static_cast<double>(count);
      for (auto& w : grads.weights)
        for (double& v : w) v *= scale;
      for (auto& w : grads.bias)
        for (double& v : w) v *= scale;
      opt.step(net, grads);
      report.batch_loss.push_back(batch_sum * scale);
      epoch_sum += batch_sum;
    }
    report.epoch_loss.push_back(epoch_sum / static_cast<double>(data.size()));
  }
  return report;
}

}  // namespace

TrainReport train_standard(Network& net, const Dataset& data, const TrainConfig& cfg) {
  return train_loop(net, data, cfg, nullptr);
}

TrainReport train_adversarial(Network& net, const Dataset& data, const TrainConfig& cfg) {
  if (!cfg.adversarial) throw std::invalid_argument("train_adversarial: no adversarial block");
  return train_loop(net, data, cfg, &*cfg.adversarial);
}

double accuracy(const Network& net, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    hits += net.classify(data.inputs[i]) == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

namespace {

struct ConvSpec {
  std::size_t in, out, k, stride;
};

Network build(Shape input, const std::vector<ConvSpec>& convs, std::size_t dense_in,
              std::size_t classes, std::uint64_t seed) {
  CounterRng rng(seed);
  auto draw = [&](std::vector<double>& v, std::size_t n, std::size_t fan_in) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    v.resize(n);
    for (double& x : v) x = rng.uniform(-bound, bound);
  };
  std::vector<Layer> layers;
  for (const ConvSpec& s : convs) {
    Conv2d c;
    c.in_channels = s.in;
    c.out_channels = s.out;
    c.kernel_h = c.kernel_w = s.k;
    c.stride = s.stride;
    draw(c.kernels, s.out * s.in * s.k * s.k, s.in * s.k * s.k);
    draw(c.bias, s.out, s.in * s.k * s.k);
    layers.emplace_back(std::move(c));
    layers.emplace_back(Relu{});
  }
  if (input.size() == 3) layers.emplace_back(Flatten{});
  Dense d;
  d.in = dense_in;
  d.out = classes;
  draw(d.weights, classes * dense_in, dense_in);
  draw(d.bias, classes, dense_in);
  if (convs.empty()) {
    // mnist_a: one hidden dense layer of 100 before the output.
    Dense h;
    h.in = dense_in;
    h.out = 100;
    draw(h.weights, 100 * dense_in, dense_in);
    draw(h.bias, 100, dense_in);
    layers.emplace_back(std::move(h));
    layers.emplace_back(Relu{});
    d.in = 100;
    draw(d.weights, classes * 100, 100);
    draw(d.bias, classes, 100);
  }
  layers.emplace_back(std::move(d));
  return Network(std::move(input), std::move(layers), classes);
}

}  // namespace

Network architecture(const std::string& name, std::uint64_t seed) {
  const Shape mnist{1, 28, 28}, cifar{3, 32, 32};
  if (name == "mnist_a") return build(mnist, {}, 784, 10, seed);
  if (name == "mnist_b") return build(mnist, {{1, 4, 5, 3}}, 256, 10, seed);
  if (name == "mnist_c") return build(mnist, {{1, 8, 5, 4}}, 288, 10, seed);
  if (name == "cifar_a") return build(cifar, {{3, 8, 3, 2}}, 1800, 10, seed);
  if (name == "cifar_b") return build(cifar, {{3, 20, 5, 4}}, 980, 10, seed);
  if (name == "cifar_c") return build(cifar, {{3, 8, 5, 4}, {8, 8, 3, 2}}, 72, 10, seed);
  throw std::invalid_argument("unknown architecture: " + name);
}

}  // namespace cav
