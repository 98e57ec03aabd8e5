#pragma once

#include <cmath>
#include <vector>

#include "cav/network.hpp"
#include "cav/rng.hpp"

namespace cav::testing {

inline std::vector<double> random_vec(CounterRng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Dense random_dense(CounterRng& rng, std::size_t out, std::size_t in, double scale = 1.0) {
  Dense d;
  d.out = out;
  d.in = in;
  d.weights = random_vec(rng, out * in, -scale, scale);
  d.bias = random_vec(rng, out, -scale, scale);
  return d;
}

/// Fully connected net in -> hidden... -> classes with ReLUs between.
inline Network random_mlp(CounterRng& rng, std::size_t in, std::vector<std::size_t> hidden,
                          std::size_t classes, double scale = 1.0) {
  std::vector<Layer> layers;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    layers.emplace_back(random_dense(rng, h, prev, scale));
    layers.emplace_back(Relu{});
    prev = h;
  }
  layers.emplace_back(random_dense(rng, classes, prev, scale));
  return Network({in}, std::move(layers), classes);
}

/// 1-D classifier with logits (0.5 - x, x - 0.5): class 1 iff x > 0.5.
inline Network flip_at_half() {
  Dense d;
  d.out = 2;
  d.in = 1;
  d.weights = {-1.0, 1.0};
  d.bias = {0.5, -0.5};
  return Network({1}, {d}, 2);
}

/// Both logits zero everywhere.
inline Network constant_net(std::size_t in) {
  Dense d;
  d.out = 2;
  d.in = in;
  d.weights.assign(2 * in, 0.0);
  d.bias = {0.0, 0.0};
  return Network({in}, {d}, 2);
}

}  // namespace cav::testing
