#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "cav/milp.hpp"
#include "cav/train.hpp"
#include "helpers.hpp"

using namespace cav;
using namespace cav::testing;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("cav_test_" + name)).string();
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> header(std::vector<std::uint32_t> dims) {
  std::vector<std::uint8_t> h{0, 0, 0x08, static_cast<std::uint8_t>(dims.size())};
  for (std::uint32_t d : dims)
    for (int s = 24; s >= 0; s -= 8) h.push_back(static_cast<std::uint8_t>(d >> s));
  return h;
}

std::string mnist_dir() { return std::string(CAV_DATA_DIR) + "/mnist"; }

std::vector<double> flat_params(const Network& net) {
  std::vector<double> out;
  for (const Layer& l : net.layers()) {
    if (auto* d = std::get_if<Dense>(&l)) {
      out.insert(out.end(), d->weights.begin(), d->weights.end());
      out.insert(out.end(), d->bias.begin(), d->bias.end());
    }
    if (auto* c = std::get_if<Conv2d>(&l)) {
      out.insert(out.end(), c->kernels.begin(), c->kernels.end());
      out.insert(out.end(), c->bias.begin(), c->bias.end());
    }
  }
  return out;
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.lr = 1e-2;
  cfg.batch_size = 16;
  cfg.seed = 5;
  return cfg;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("IDX parsing of synthetic fixtures") {
  std::string img = temp_path("img.idx"), lab = temp_path("lab.idx");
  auto bytes = header({1, 2, 2});
  bytes.insert(bytes.end(), {0, 255, 128, 1});
  write_bytes(img, bytes);
  auto lb = header({1});
  lb.push_back(7);
  write_bytes(lab, lb);

  Dataset d = load_idx(img, lab);
  REQUIRE(d.size() == 1);
  CHECK(d.shape == Shape{1, 2, 2});
  CHECK(d.inputs[0][0] == 0.0);
  CHECK(d.inputs[0][1] == 1.0);
  CHECK(d.inputs[0][2] == 128.0 / 255.0);
  CHECK(d.labels[0] == 7);

  SUBCASE("payload shorter than the header declares") {
    auto bad = header({2, 2, 2});
    bad.insert(bad.end(), {0, 1, 2, 3});
    write_bytes(img, bad);
    CHECK_THROWS_AS(read_idx(img), FormatError);
  }
  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[0] = 1;
    write_bytes(img, bad);
    CHECK_THROWS_AS(read_idx(img), FormatError);
  }
  SUBCASE("truncated header") {
    write_bytes(img, {0, 0, 8, 3, 0, 0});
    CHECK_THROWS_AS(read_idx(img), FormatError);
  }
  SUBCASE("label count mismatch") {
    write_bytes(lab, header({2}));
    CHECK_THROWS_AS(load_idx(img, lab), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_idx(temp_path("absent.idx")), FormatError); }
}

TEST_CASE("bundled MNIST subset") {
  Dataset te = load_mnist(mnist_dir(), "test");
  Dataset tr = load_mnist(mnist_dir(), "train");
  CHECK(te.size() == 500);
  CHECK(tr.size() == 2000);
  CHECK(te.shape == Shape{1, 28, 28});
  te.validate();
  for (const Tensor& x : te.inputs)
    for (double v : x.values()) REQUIRE(std::round(v * 255.0) / 255.0 == v);
}

TEST_CASE("synthetic blobs lie on the grid with cycling labels") {
  Dataset d = synth_blobs(3, 5, 60, 11);
  d.validate();
  CHECK(d.size() == 60);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(d.labels[i] == i % 3);
    for (double v : d.inputs[i].values()) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
      REQUIRE(std::round(v * 255.0) / 255.0 == v);
    }
  }
  CHECK(synth_blobs(3, 5, 60, 11).inputs == d.inputs);
  CHECK(synth_blobs(3, 5, 60, 12).inputs != d.inputs);
}

TEST_CASE("architecture parameter counts") {
  CHECK(architecture("mnist_a").parameter_count() == 79510);
  CHECK(architecture("mnist_b").parameter_count() == 2674);
  CHECK(architecture("mnist_c").parameter_count() == 3098);
  CHECK(architecture("cifar_a").parameter_count() == 18234);
  CHECK(architecture("cifar_b").parameter_count() == 11330);
  CHECK(architecture("cifar_c").parameter_count() == 1922);
  Network b = architecture("mnist_b");
  CHECK(b.layers().size() == 4);
  CHECK(std::get<Conv2d>(b.layers()[0]).stride == 3);
  CHECK(b.shapes()[3] == Shape{256});
  CHECK_THROWS(architecture("mnist_z"));
}

TEST_CASE("augmentation keeps values, range and shape") {
  CounterRng rng(3);
  Dataset te = load_mnist(mnist_dir(), "test").slice(0, 20);
  TrainConfig cfg;
  for (const Tensor& x : te.inputs) {
    Tensor a = augment(x, cfg, rng);
    REQUIRE(a.shape() == x.shape());
    for (double v : a.values()) {
      bool from_input = v == 0.0 || std::find(x.values().begin(), x.values().end(), v) != x.values().end();
      REQUIRE(from_input);
    }
  }
  TrainConfig none;
  none.flip = 0.0;
  none.translate = 0.0;
  none.rotate_deg = 0.0;
  CHECK(augment(te.inputs[0], none, rng) == te.inputs[0]);

  none.flip = 1.0;
  Tensor f = augment(te.inputs[0], none, rng);
  for (std::size_t i = 0; i < 28; ++i)
    for (std::size_t j = 0; j < 28; ++j) REQUIRE(f[i * 28 + j] == te.inputs[0][i * 28 + 27 - j]);

  Tensor flat({4}, {0.1, 0.2, 0.3, 0.4});
  CHECK(augment(flat, cfg, rng) == flat);
}

TEST_CASE("first Adam step moves every parameter by lr against the gradient sign") {
  CounterRng rng(1);
  Network net = random_mlp(rng, 3, {4}, 2);
  std::vector<double> before = flat_params(net);
  ParamGrads g = net.make_param_grads();
  for (auto& w : g.weights)
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (i % 2 ? 0.5 : -2.0);
  for (auto& b : g.bias)
    for (double& v : b) v = 3.0;
  Adam opt(net, 0.01, 0.9, 0.999, 0.0);
  opt.step(net, g);
  std::vector<double> after = flat_params(net);
  std::vector<double> expect_sign;
  for (std::size_t k = 0; k < g.weights.size(); ++k) {
    for (std::size_t i = 0; i < g.weights[k].size(); ++i) expect_sign.push_back(i % 2 ? -1.0 : 1.0);
    for (std::size_t i = 0; i < g.bias[k].size(); ++i) expect_sign.push_back(-1.0);
  }
  REQUIRE(after.size() == expect_sign.size());
  for (std::size_t i = 0; i < after.size(); ++i)
    CHECK(after[i] - before[i] == doctest::Approx(0.01 * expect_sign[i]).epsilon(1e-9));
}

TEST_CASE("training is deterministic per seed and lowers the loss") {
  Dataset data = synth_blobs(3, 6, 240, 2);
  CounterRng rng(4);
  Network a = random_mlp(rng, 6, {12}, 3, 0.3);
  Network b = a, c = a;
  TrainConfig cfg = quick_config(1);
  TrainReport ra = train_standard(a, data, cfg);
  train_standard(b, data, cfg);
  CHECK(flat_params(a) == flat_params(b));
  cfg.seed = 6;
  train_standard(c, data, cfg);
  CHECK(flat_params(a) != flat_params(c));

  // First-epoch sanity: the last batches score better than the first ones.
  const auto& bl = ra.batch_loss;
  REQUIRE(bl.size() == 15);
  double head = (bl[0] + bl[1] + bl[2]) / 3.0, tail = (bl[12] + bl[13] + bl[14]) / 3.0;
  CHECK(tail < head);

  Network d = a;
  train_standard(d, data, quick_config(20));
  CHECK(accuracy(d, data) > 0.9);
}

TEST_CASE("adversarial training with eps = 0 reproduces standard training") {
  Dataset data = synth_blobs(2, 4, 64, 8);
  CounterRng rng(9);
  Network a = random_mlp(rng, 4, {8}, 2, 0.5);
  Network b = a;
  TrainConfig cfg = quick_config(2);
  train_standard(a, data, cfg);
  cfg.adversarial = AdversarialConfig{5, 0.1, 0.0, 1.0};
  train_adversarial(b, data, cfg);
  CHECK(flat_params(a) == flat_params(b));
}

TEST_CASE("final PGD iterate stays in the ball and raises the loss") {
  Dataset data = synth_blobs(2, 4, 16, 8);
  CounterRng rng(10);
  Network net = random_mlp(rng, 4, {8}, 2);
  AdversarialConfig adv{20, 0.01, 0.05, 1.0};
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto x = data.inputs[i].values();
    std::vector<double> p = pgd_final(net, x, data.labels[i], adv, rng);
    CHECK(linf_distance(p, x) <= 0.05 + 1e-15);
    for (double v : p) REQUIRE((v >= 0.0 && v <= 1.0));
    CHECK(loss_value(CrossEntropy{data.labels[i]}, net.forward(p)) >=
          loss_value(CrossEntropy{data.labels[i]}, net.forward(x)) - 1e-9);
  }
}

TEST_CASE("adversarial training enlarges the median exact distance") {
  Dataset data = synth_blobs(3, 4, 300, 21);
  Dataset test = synth_blobs(3, 4, 330, 21).slice(300, 30);
  CounterRng rng(22);
  Network standard = random_mlp(rng, 4, {16}, 3, 0.5);
  Network robust = standard;
  TrainConfig cfg = quick_config(30);
  train_standard(standard, data, cfg);
  cfg.adversarial = AdversarialConfig{10, 0.01, 0.05, 1.0};
  train_adversarial(robust, data, cfg);

  std::vector<double> ds, dr;
  for (const Tensor& x : test.inputs) {
    ExactResult s = exact_distance(standard, x.values());
    ExactResult r = exact_distance(robust, x.values());
    REQUIRE(s.tight);
    REQUIRE(r.tight);
    ds.push_back(s.distance);
    dr.push_back(r.distance);
  }
  CHECK(median(dr) > median(ds));
}

TEST_CASE("configuration and dataset validation") {
  Dataset data = synth_blobs(2, 4, 8, 1);
  CounterRng rng(1);
  Network net = random_mlp(rng, 4, {4}, 2);
  TrainConfig cfg = quick_config(1);
  cfg.epochs = 0;
  CHECK_THROWS_AS(train_standard(net, data, cfg), std::invalid_argument);
  cfg = quick_config(1);
  cfg.lr = 0.0;
  CHECK_THROWS_AS(train_standard(net, data, cfg), std::invalid_argument);
  cfg = quick_config(1);
  CHECK_THROWS_AS(train_adversarial(net, data, cfg), std::invalid_argument);
  Network wrong = random_mlp(rng, 5, {4}, 2);
  CHECK_THROWS_AS(train_standard(wrong, data, cfg), std::invalid_argument);
  Dataset bad = data;
  bad.labels[0] = 2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = data;
  bad.labels.pop_back();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
