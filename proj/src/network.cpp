#include "cav/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cav/kernels.hpp"

namespace cav {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

kernels::ConvGeometry geometry(const Conv2d& c, const Shape& in) {
  return {in[0], in[1], in[2], c.out_channels, c.kernel_h, c.kernel_w, c.stride};
}

void require_finite(const std::vector<double>& v, const char* what) {
  for (double d : v)
    if (!std::isfinite(d)) throw std::invalid_argument(std::string(what) + " not finite");
}

}  // namespace

std::string layer_name(const Layer& layer) {
  return std::visit(Overloaded{[](const Dense&) { return std::string("dense"); },
                               [](const Conv2d&) { return std::string("conv2d"); },
                               [](const Relu&) { return std::string("relu"); },
                               [](const Flatten&) { return std::string("flatten"); }},
                    layer);
}

void ParamGrads::zero() {
  for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
  for (auto& b : bias) std::fill(b.begin(), b.end(), 0.0);
}

Network::Network(Shape input_shape, std::vector<Layer> layers, std::size_t num_classes)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), num_classes_(num_classes) {
  if (num_classes_ < 2) throw std::invalid_argument("network needs at least 2 classes");
  if (input_shape_.empty()) throw std::invalid_argument("empty input shape");
  for (std::size_t d : input_shape_)
    if (d == 0) throw std::invalid_argument("zero input dimension");
  Shape cur = input_shape_;
  shapes_.push_back(cur);
  for (const Layer& layer : layers_) {
    std::visit(
        Overloaded{
            [&](const Dense& d) {
              if (cur.size() != 1 || cur[0] != d.in)
                throw std::invalid_argument("dense expects input " + std::to_string(d.in) +
                                            ", got " + shape_string(cur));
              if (d.out == 0) throw std::invalid_argument("dense with zero outputs");
              if (d.weights.size() != d.out * d.in || d.bias.size() != d.out)
                throw std::invalid_argument("dense parameter size mismatch");
              require_finite(d.weights, "dense weights");
              require_finite(d.bias, "dense bias");
              cur = {d.out};
            },
            [&](const Conv2d& c) {
              if (cur.size() != 3 || cur[0] != c.in_channels)
                throw std::invalid_argument("conv2d expects " + std::to_string(c.in_channels) +
                                            " channels, got " + shape_string(cur));
              if (c.stride == 0 || c.kernel_h == 0 || c.kernel_w == 0 || c.out_channels == 0)
                throw std::invalid_argument("conv2d with zero size");
              if (c.kernel_h > cur[1] || c.kernel_w > cur[2])
                throw std::invalid_argument("conv2d kernel larger than input");
              if (c.kernels.size() != c.out_channels * c.in_channels * c.kernel_h * c.kernel_w ||
                  c.bias.size() != c.out_channels)
                throw std::invalid_argument("conv2d parameter size mismatch");
              require_finite(c.kernels, "conv2d kernels");
              require_finite(c.bias, "conv2d bias");
              auto g = geometry(c, cur);
              cur = {c.out_channels, g.out_h(), g.out_w()};
            },
            [&](const Relu&) {},
            [&](const Flatten&) { cur = {shape_size(cur)}; }},
        layer);
    shapes_.push_back(cur);
  }
  if (cur.size() != 1 || cur[0] != num_classes_)
    throw std::invalid_argument("final layer output " + shape_string(cur) + " != class count " +
                                std::to_string(num_classes_));
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& layer : layers_) {
    if (auto* d = std::get_if<Dense>(&layer)) n += d->weights.size() + d->bias.size();
    if (auto* c = std::get_if<Conv2d>(&layer)) n += c->kernels.size() + c->bias.size();
  }
  return n;
}

void Network::check_input(std::size_t n) const {
  if (n != input_size())
    throw std::invalid_argument("input size " + std::to_string(n) + " != network input " +
                                shape_string(input_shape_));
}

Trace Network::forward_trace(std::span<const double> x) const {
  check_input(x.size());
  Trace t;
  t.acts.reserve(layers_.size() + 1);
  t.acts.emplace_back(x.begin(), x.end());
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const std::vector<double>& in = t.acts.back();
    std::vector<double> out;
    std::visit(Overloaded{[&](const Dense& d) {
                            out.resize(d.out);
                            kernels::dense_forward(d.weights, d.bias, d.out, d.in, in, out);
                          },
                          [&](const Conv2d& c) {
                            auto g = geometry(c, shapes_[k]);
                            out.resize(g.out_size());
                            kernels::conv2d_forward(g, c.kernels, c.bias, in, out);
                          },
                          [&](const Relu&) {
                            out = in;
                            for (double& v : out) v = v > 0.0 ? v : 0.0;
                          },
                          [&](const Flatten&) { out = in; }},
               layers_[k]);
    t.acts.push_back(std::move(out));
  }
  return t;
}

std::vector<double> Network::forward(std::span<const double> x) const {
  check_input(x.size());
  std::vector<double> cur(x.begin(), x.end()), next;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    std::visit(Overloaded{[&](const Dense& d) {
                            next.resize(d.out);
                            kernels::dense_forward(d.weights, d.bias, d.out, d.in, cur, next);
                            cur.swap(next);
                          },
                          [&](const Conv2d& c) {
                            auto g = geometry(c, shapes_[k]);
                            next.resize(g.out_size());
                            kernels::conv2d_forward(g, c.kernels, c.bias, cur, next);
                            cur.swap(next);
                          },
                          [&](const Relu&) {
                            for (double& v : cur) v = v > 0.0 ? v : 0.0;
                          },
                          [&](const Flatten&) {}},
               layers_[k]);
  }
  return cur;
}

void Network::check_tensor(const Tensor& x) const {
  // Flat inputs of the right length are accepted alongside the declared shape.
  bool flat = x.shape().size() == 1 && x.size() == input_size();
  if (x.shape() != input_shape_ && !flat)
    throw std::invalid_argument("input shape " + shape_string(x.shape()) + " != " +
                                shape_string(input_shape_));
}

Tensor Network::forward(const Tensor& x) const {
  check_tensor(x);
  return Tensor({num_classes_}, forward(x.values()));
}

std::size_t Network::classify(std::span<const double> x) const { return argmax_lowest(forward(x)); }
std::size_t Network::classify(const Tensor& x) const {
  check_tensor(x);
  return classify(x.values());
}

std::vector<double> Network::backward(const Trace& trace, std::span<const double> grad_logits,
                                      ParamGrads* params) const {
  std::vector<double> g(grad_logits.begin(), grad_logits.end()), gin;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const std::vector<double>& in = trace.acts[k];
    std::visit(Overloaded{[&](const Dense& d) {
                            if (params)
                              kernels::dense_backward_params(d.out, d.in, g, in,
                                                             params->weights[k], params->bias[k]);
                            gin.resize(d.in);
                            kernels::dense_backward_input(d.weights, d.out, d.in, g, gin);
                            g.swap(gin);
                          },
                          [&](const Conv2d& c) {
                            auto geo = geometry(c, shapes_[k]);
                            if (params)
                              kernels::conv2d_backward_params(geo, g, in, params->weights[k],
                                                              params->bias[k]);
                            gin.resize(geo.in_size());
                            kernels::conv2d_backward_input(geo, c.kernels, g, gin);
                            g.swap(gin);
                          },
                          [&](const Relu&) {
                            // Subgradient 0 at a zero pre-activation.
                            for (std::size_t i = 0; i < g.size(); ++i)
                              if (!(in[i] > 0.0)) g[i] = 0.0;
                          },
                          [&](const Flatten&) {}},
               layers_[k]);
  }
  return g;
}

ParamGrads Network::make_param_grads() const {
  ParamGrads p;
  for (const Layer& layer : layers_) {
    std::size_t nw = 0, nb = 0;
    if (auto* d = std::get_if<Dense>(&layer)) nw = d->weights.size(), nb = d->bias.size();
    if (auto* c = std::get_if<Conv2d>(&layer)) nw = c->kernels.size(), nb = c->bias.size();
    p.weights.emplace_back(nw, 0.0);
    p.bias.emplace_back(nb, 0.0);
  }
  return p;
}

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

namespace {

void check_loss(const Loss& loss, std::size_t n) {
  std::visit(Overloaded{[&](const CrossEntropy& l) {
                          if (l.label >= n) throw std::invalid_argument("label out of range");
                        },
                        [&](const LogitMargin& l) {
                          if (l.target >= n) throw std::invalid_argument("target out of range");
                        },
                        [&](const SingleLogit& l) {
                          if (l.index >= n) throw std::invalid_argument("logit out of range");
                        },
                        [&](const LogitCombination& l) {
                          if (l.coeffs.size() != n)
                            throw std::invalid_argument("coefficient count != class count");
                        }},
             loss);
}

std::size_t runner_up(std::span<const double> z, std::size_t skip) {
  std::size_t best = skip == 0 ? 1 : 0;
  for (std::size_t j = 0; j < z.size(); ++j)
    if (j != skip && z[j] > z[best]) best = j;
  return best;
}

}  // namespace

double loss_value(const Loss& loss, std::span<const double> z) {
  check_loss(loss, z.size());
  return std::visit(
      Overloaded{[&](const CrossEntropy& l) {
                   double m = *std::max_element(z.begin(), z.end());
                   double s = 0.0;
                   for (double v : z) s += std::exp(v - m);
                   return m + std::log(s) - z[l.label];
                 },
                 [&](const LogitMargin& l) { return z[l.target] - z[runner_up(z, l.target)]; },
                 [&](const SingleLogit& l) { return z[l.index]; },
                 [&](const LogitCombination& l) {
                   double s = 0.0;
                   for (std::size_t j = 0; j < z.size(); ++j) s += l.coeffs[j] * z[j];
                   return s;
                 }},
      loss);
}

std::vector<double> loss_logit_grad(const Loss& loss, std::span<const double> z) {
  check_loss(loss, z.size());
  std::vector<double> g(z.size(), 0.0);
  std::visit(Overloaded{[&](const CrossEntropy& l) {
                          double m = *std::max_element(z.begin(), z.end());
                          double s = 0.0;
                          for (std::size_t j = 0; j < z.size(); ++j) s += g[j] = std::exp(z[j] - m);
                          for (double& v : g) v /= s;
                          g[l.label] -= 1.0;
                        },
                        [&](const LogitMargin& l) {
                          g[l.target] = 1.0;
                          g[runner_up(z, l.target)] = -1.0;
                        },
                        [&](const SingleLogit& l) { g[l.index] = 1.0; },
                        [&](const LogitCombination& l) { g = l.coeffs; }},
             loss);
  return g;
}

LossGrad Network::loss_grad(std::span<const double> x, const Loss& loss) const {
  check_loss(loss, num_classes_);
  Trace t = forward_trace(x);
  LossGrad out;
  out.logits.assign(t.logits().begin(), t.logits().end());
  out.loss = loss_value(loss, out.logits);
  out.grad = backward(t, loss_logit_grad(loss, out.logits));
  return out;
}

Tensor Network::grad_input(const Tensor& x, const Loss& loss) const {
  check_tensor(x);
  return Tensor(x.shape(), loss_grad(x.values(), loss).grad);
}

}  // namespace cav
