#include <doctest.h>

#include "cav/kernels.hpp"
#include "helpers.hpp"

using namespace cav;
using namespace cav::testing;
namespace k = cav::kernels;

TEST_CASE("OpenMP dense kernels equal the serial reference bitwise") {
  CounterRng rng(21);
  for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{3, 5}, {256, 300}}) {
    auto w = random_vec(rng, rows * cols, -1, 1), b = random_vec(rng, rows, -1, 1);
    auto x = random_vec(rng, cols, -1, 1), g = random_vec(rng, rows, -1, 1);
    std::vector<double> y1(rows), y2(rows), gx1(cols), gx2(cols);
    k::dense_forward(w, b, rows, cols, x, y1);
    k::serial::dense_forward(w, b, rows, cols, x, y2);
    CHECK(y1 == y2);
    k::dense_backward_input(w, rows, cols, g, gx1);
    k::serial::dense_backward_input(w, rows, cols, g, gx2);
    CHECK(gx1 == gx2);
    std::vector<double> gw1(rows * cols, 0.1), gw2(rows * cols, 0.1), gb1(rows), gb2(rows);
    k::dense_backward_params(rows, cols, g, x, gw1, gb1);
    k::serial::dense_backward_params(rows, cols, g, x, gw2, gb2);
    CHECK(gw1 == gw2);
    CHECK(gb1 == gb2);
  }
}

TEST_CASE("OpenMP conv kernels equal the serial reference bitwise") {
  CounterRng rng(22);
  for (k::ConvGeometry geo : {k::ConvGeometry{1, 7, 7, 2, 3, 3, 2}, k::ConvGeometry{3, 32, 32, 8, 5, 5, 1}}) {
    auto kern = random_vec(rng, geo.out_channels * geo.in_channels * geo.kernel_h * geo.kernel_w, -1, 1);
    auto b = random_vec(rng, geo.out_channels, -1, 1);
    auto x = random_vec(rng, geo.in_size(), 0, 1), g = random_vec(rng, geo.out_size(), -1, 1);
    std::vector<double> y1(geo.out_size()), y2(geo.out_size());
    k::conv2d_forward(geo, kern, b, x, y1);
    k::serial::conv2d_forward(geo, kern, b, x, y2);
    CHECK(y1 == y2);
    std::vector<double> gx1(geo.in_size()), gx2(geo.in_size());
    k::conv2d_backward_input(geo, kern, g, gx1);
    k::serial::conv2d_backward_input(geo, kern, g, gx2);
    CHECK(gx1 == gx2);
    std::vector<double> gk1(kern.size()), gk2(kern.size()), gb1(b.size()), gb2(b.size());
    k::conv2d_backward_params(geo, g, x, gk1, gb1);
    k::serial::conv2d_backward_params(geo, g, x, gk2, gb2);
    CHECK(gk1 == gk2);
    CHECK(gb1 == gb2);
  }
}

TEST_CASE("conv forward matches a direct definition") {
  CounterRng rng(23);
  k::ConvGeometry geo{2, 6, 5, 3, 2, 3, 2};
  auto kern = random_vec(rng, 3 * 2 * 2 * 3, -1, 1), b = random_vec(rng, 3, -1, 1);
  auto x = random_vec(rng, geo.in_size(), 0, 1);
  std::vector<double> y(geo.out_size());
  k::conv2d_forward(geo, kern, b, x, y);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t r = 0; r < geo.out_h(); ++r)
      for (std::size_t c = 0; c < geo.out_w(); ++c) {
        double s = b[o];
        for (std::size_t ic = 0; ic < 2; ++ic)
          for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 3; ++j)
              s += kern[((o * 2 + ic) * 2 + i) * 3 + j] * x[(ic * 6 + r * 2 + i) * 5 + c * 2 + j];
        CHECK(y[(o * geo.out_h() + r) * geo.out_w() + c] == doctest::Approx(s).epsilon(1e-13));
      }
}

TEST_CASE("pivot kernels agree and eliminate the pivot column") {
  CounterRng rng(24);
  for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{4, 6}, {120, 200}}) {
    auto t = random_vec(rng, rows * cols, -1, 1);
    auto t1 = t, t2 = t;
    k::pivot_update(t1, rows, cols, 1, 2);
    k::serial::pivot_update(t2, rows, cols, 1, 2);
    CHECK(t1 == t2);
    for (std::size_t i = 0; i < rows; ++i) CHECK(t1[i * cols + 2] == (i == 1 ? 1.0 : 0.0));
  }
}
