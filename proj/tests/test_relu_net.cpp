#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cav/gadgets.hpp"
#include "cav/network.hpp"
#include "helpers.hpp"

using namespace cav;
using namespace cav::testing;

namespace {

// Straight-line re-evaluation of a Dense/Relu stack, written independently of
// the kernels.
std::vector<double> hand_forward(const Network& net, std::vector<double> x) {
  for (const Layer& layer : net.layers()) {
    if (auto* d = std::get_if<Dense>(&layer)) {
      std::vector<double> y(d->out);
      for (std::size_t i = 0; i < d->out; ++i) {
        long double s = d->bias[i];
        for (std::size_t j = 0; j < d->in; ++j) s += (long double)d->weights[i * d->in + j] * x[j];
        y[i] = static_cast<double>(s);
      }
      x = y;
    } else if (std::holds_alternative<Relu>(layer)) {
      for (double& v : x) v = v > 0 ? v : 0;
    }
  }
  return x;
}

Network random_conv_net(CounterRng& rng) {
  Conv2d c;
  c.out_channels = 2;
  c.in_channels = 1;
  c.kernel_h = c.kernel_w = 3;
  c.stride = 2;
  c.kernels = random_vec(rng, 18, -1, 1);
  c.bias = random_vec(rng, 2, -0.5, 0.5);
  // 1x7x7 -> 2x3x3 -> 18
  return Network({1, 7, 7}, {c, Relu{}, Flatten{}, random_dense(rng, 3, 18)}, 3);
}

double min_abs_preactivation(const Network& net, std::span<const double> x) {
  Trace t = net.forward_trace(x);
  double m = INFINITY;
  for (std::size_t k = 0; k < net.layers().size(); ++k)
    if (std::holds_alternative<Relu>(net.layers()[k]))
      for (double v : t.acts[k]) m = std::min(m, std::abs(v));
  return m;
}

}  // namespace

TEST_CASE("identity dense layer passes inputs through") {
  Dense d{2, 2, {1, 0, 0, 1}, {0, 0}};
  Network net({2}, {d}, 2);
  auto y = net.forward(std::vector<double>{0.3, 0.7});
  CHECK(y[0] == 0.3);
  CHECK(y[1] == 0.7);
}

TEST_CASE("step0 gadget with mu=1 at 0 and 1") {
  NetFragment f = make_gadget("step0", 1.0, LogicFamily::kMinMax);
  CHECK(f.evaluate(std::vector<double>{0.0})[0] == 0.0);
  CHECK(f.evaluate(std::vector<double>{1.0})[0] == 1.0);
}

TEST_CASE("forward matches independent re-evaluation") {
  CounterRng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    Network net = random_mlp(rng, 5, {8}, 3);
    auto x = random_vec(rng, 5, 0, 1);
    auto a = net.forward(x);
    auto b = hand_forward(net, x);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
}

TEST_CASE("classify breaks exact ties toward the lowest index") {
  CHECK(argmax_lowest(std::vector<double>{0.5, 0.5}) == 0);
  CHECK(argmax_lowest(std::vector<double>{0.0, 1.0}) == 1);
  CounterRng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    auto z = random_vec(rng, 6, -1, 1);
    std::size_t i = rng.below(6), j = rng.below(6);
    if (i == j) continue;
    double top = *std::max_element(z.begin(), z.end()) + 1.0;
    z[i] = z[j] = top;
    CHECK(argmax_lowest(z) == std::min(i, j));
  }
}

TEST_CASE("input validation") {
  Network net = flip_at_half();
  CHECK_THROWS_AS(net.forward(std::vector<double>{0.1, 0.2}), std::invalid_argument);
  CHECK_THROWS_AS(net.forward(Tensor({1, 1, 2})), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2}, {0.0, NAN}), std::invalid_argument);
  Dense bad{2, 3, std::vector<double>(6, 0.0), {0, 0}};
  CHECK_THROWS_AS(Network({2}, {bad}, 2), std::invalid_argument);
  CHECK_THROWS_AS(Network({3}, {bad}, 3), std::invalid_argument);
}

TEST_CASE("cross-entropy gradient of an identity layer is softmax minus one-hot") {
  Dense d{2, 2, {1, 0, 0, 1}, {0, 0}};
  Network net({2}, {d}, 2);
  Tensor x({2}, {0.3, 0.7});
  Tensor g = net.grad_input(x, CrossEntropy{0});
  double e0 = std::exp(0.3), e1 = std::exp(0.7);
  CHECK(g[0] == doctest::Approx(e0 / (e0 + e1) - 1.0).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-14));
}

TEST_CASE("ReLU kink contributes zero gradient") {
  // h = ReLU(x - 0.5); logits (0, h)
  Dense a{1, 1, {1.0}, {-0.5}};
  Dense b{2, 1, {0.0, 1.0}, {0.0, 0.0}};
  Network net({1}, {a, Relu{}, b}, 2);
  Tensor g = net.grad_input(Tensor({1}, {0.5}), SingleLogit{1});
  CHECK(g[0] == 0.0);
  CHECK(net.grad_input(Tensor({1}, {0.6}), SingleLogit{1})[0] == 1.0);
}

TEST_CASE("gradient matches central differences away from kinks") {
  CounterRng rng(11);
  int checked = 0;
  for (int rep = 0; rep < 40; ++rep) {
    bool conv = rep % 4 == 3;
    Network net = conv ? random_conv_net(rng) : random_mlp(rng, 4, {6, 5}, 3);
    auto x = random_vec(rng, net.input_size(), 0, 1);
    if (min_abs_preactivation(net, x) < 1e-3) continue;
    Loss losses[] = {CrossEntropy{1}, LogitMargin{2}, SingleLogit{0},
                     LogitCombination{{0.5, -1.0, 2.0}}};
    for (const Loss& loss : losses) {
      auto g = net.loss_grad(x, loss).grad;
      for (std::size_t i = 0; i < x.size(); ++i) {
        auto xp = x, xm = x;
        xp[i] += 1e-5;
        xm[i] -= 1e-5;
        double fd = (loss_value(loss, net.forward(xp)) - loss_value(loss, net.forward(xm))) / 2e-5;
        CHECK(std::abs(fd - g[i]) <= 1e-4 * std::max(1.0, std::abs(fd)));
      }
    }
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("forward is affine along a line inside one linear region") {
  CounterRng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    Network net = random_mlp(rng, 3, {7}, 2);
    auto x = random_vec(rng, 3, 0, 1);
    auto v = random_vec(rng, 3, -1, 1);
    const double t = 1e-6;
    std::vector<double> x1(3), x2(3);
    for (int i = 0; i < 3; ++i) x1[i] = x[i] + t * v[i], x2[i] = x[i] + 2 * t * v[i];
    if (min_abs_preactivation(net, x) < 1e-4) continue;
    auto y0 = net.forward(x), y1 = net.forward(x1), y2 = net.forward(x2);
    for (int j = 0; j < 2; ++j) CHECK(y2[j] - 2 * y1[j] + y0[j] == doctest::Approx(0).epsilon(1e-9));
  }
}

TEST_CASE("serialization round-trips bit-exactly") {
  CounterRng rng(9);
  Network nets[] = {random_mlp(rng, 4, {6}, 3), random_conv_net(rng)};
  for (const Network& net : nets) {
    Network back = deserialize(serialize(net));
    CHECK(back.input_shape() == net.input_shape());
    CHECK(back.num_classes() == net.num_classes());
    CHECK(back.parameter_count() == net.parameter_count());
    for (int rep = 0; rep < 10; ++rep) {
      auto x = random_vec(rng, net.input_size(), 0, 1);
      CHECK(back.forward(x) == net.forward(x));
    }
    CHECK(serialize(back) == serialize(net));
  }
}

TEST_CASE("malformed model files are rejected") {
  CounterRng rng(1);
  std::string bytes = serialize(random_mlp(rng, 2, {3}, 2));
  CHECK_THROWS_AS(deserialize("NOTANET\n"), FormatError);
  std::string v2 = bytes;
  v2.replace(v2.find("version 1"), 9, "version 2");
  CHECK_THROWS_AS(deserialize(v2), FormatError);
  CHECK_THROWS_AS(deserialize(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(deserialize(bytes + "x"), FormatError);
  std::string wrong = bytes;
  wrong.replace(wrong.find("classes 2"), 9, "classes 3");
  CHECK_THROWS_AS(deserialize(wrong), FormatError);
}
