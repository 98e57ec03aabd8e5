#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cav/network.hpp"
#include "cav/rng.hpp"
#include "cav/tensor.hpp"

namespace cav {

/// Labelled inputs on the 1/255 grid in [0,1].
struct Dataset {
  Shape shape;  // per-sample input shape
  std::size_t num_classes = 0;
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;
  std::string split;  // "train", "test", ...

  std::size_t size() const { return inputs.size(); }
  /// Throws std::invalid_argument on length mismatch, wrong shapes or labels >= num_classes.
  void validate() const;
  Dataset slice(std::size_t begin, std::size_t count) const;
};

/// Unsigned-byte IDX array: big-endian header {0, 0, 0x08, ndims}, then dims.
struct IdxArray {
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> bytes;
};
IdxArray read_idx(const std::string& path);  // throws FormatError

/// Images (N x H x W) become 1 x H x W tensors scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t num_classes = 10, const std::string& split = "");
/// Reads `<dir>/<split>-images-idx3-ubyte` and the matching labels file.
Dataset load_mnist(const std::string& dir, const std::string& split);

/// Gaussian clusters (sigma 0.1) around centers drawn in [0.2, 0.8]^dim,
/// clipped to [0,1] and rounded to the 1/255 grid. Labels cycle 0..n_classes-1.
Dataset synth_blobs(std::size_t n_classes, std::size_t dim, std::size_t count,
                    std::uint64_t seed);

struct AdversarialConfig {
  std::size_t iterations = 200;
  double lr = 0.1;  // PGD step on the gradient sign
  double eps = 0.05;
  double ratio = 1.0;  // fraction of each batch replaced by adversarial inputs
};

struct TrainConfig {
  std::size_t epochs = 425;
  double lr = 1e-4;
  std::size_t batch_size = 32;
  double beta1 = 0.9, beta2 = 0.999;
  double adam_eps = 1e-8;
  // Spatial augmentations apply to C x H x W inputs only.
  double flip = 0.5;          // horizontal flip probability
  double translate = 0.1;     // max shift as a fraction of the side
  double rotate_deg = 15.0;   // max absolute rotation
  std::optional<AdversarialConfig> adversarial;
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
};

struct TrainReport {
  std::vector<double> batch_loss;  // mean cross-entropy per batch
  std::vector<double> epoch_loss;
};

class Adam {
 public:
  Adam(const Network& net, double lr, double beta1, double beta2, double eps);
  /// One update with gradients `g` (already averaged over the batch).
  void step(Network& net, const ParamGrads& g);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  ParamGrads m_, v_;
};

/// Flip, shift and rotate with nearest-neighbour resampling; pixels mapped
/// from outside the image are 0. Output values are a subset of the input's.
Tensor augment(const Tensor& x, const TrainConfig& cfg, CounterRng& rng);

/// Final PGD iterate (not the closest) from a uniform start in B(x, eps),
/// maximizing cross-entropy of `label`.
std::vector<double> pgd_final(const Network& net, std::span<const double> x, std::size_t label,
                              const AdversarialConfig& adv, CounterRng& rng);

/// Adam on mean cross-entropy. Deterministic given cfg.seed.
TrainReport train_standard(Network& net, const Dataset& data, const TrainConfig& cfg);
/// Same loop with each batch replaced by PGD examples; needs cfg.adversarial.
TrainReport train_adversarial(Network& net, const Dataset& data, const TrainConfig& cfg);

double accuracy(const Network& net, const Dataset& data);

/// mnist_{a,b,c}, cifar_{a,b,c} with weights and biases drawn from
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Network architecture(const std::string& name, std::uint64_t seed = 0);

}  // namespace cav
