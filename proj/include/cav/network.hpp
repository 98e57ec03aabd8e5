#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cav/tensor.hpp"

namespace cav {

/// y = W x + b with W stored row-major (out x in).
struct Dense {
  std::size_t out = 0, in = 0;
  std::vector<double> weights;
  std::vector<double> bias;
};

/// Valid (unpadded) convolution over a C x H x W input.
/// Kernels are stored [out_channels][in_channels][kernel_h][kernel_w].
struct Conv2d {
  std::size_t out_channels = 0, in_channels = 0, kernel_h = 0, kernel_w = 0, stride = 1;
  std::vector<double> kernels;
  std::vector<double> bias;
};

struct Relu {};
struct Flatten {};  // C x H x W -> C*H*W, row-major, channel slowest

using Layer = std::variant<Dense, Conv2d, Relu, Flatten>;

std::string layer_name(const Layer& layer);

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Scalar losses whose input gradient the gradient attacks and trainer need.
struct CrossEntropy {
  std::size_t label;
};
struct LogitMargin {  // Z_target - max_{j != target} Z_j
  std::size_t target;
};
struct SingleLogit {
  std::size_t index;
};
struct LogitCombination {  // sum_j c_j Z_j
  std::vector<double> coeffs;
};
using Loss = std::variant<CrossEntropy, LogitMargin, SingleLogit, LogitCombination>;

/// Activations recorded by a forward pass: acts[0] is the input, acts[k+1] is
/// the output of layer k.
struct Trace {
  std::vector<std::vector<double>> acts;
  std::span<const double> logits() const { return acts.back(); }
};

/// Parameter gradients laid out like the layers; non-parametric layers have
/// empty entries.
struct ParamGrads {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;
  void zero();
};

struct LossGrad {
  double loss = 0.0;
  std::vector<double> logits;
  std::vector<double> grad;  // w.r.t. the input
};

/// Feedforward ReLU classifier. Immutable after construction apart from
/// parameter access used by training.
class Network {
 public:
  Network(Shape input_shape, std::vector<Layer> layers, std::size_t num_classes);

  const Shape& input_shape() const { return input_shape_; }
  std::size_t input_size() const { return shape_size(input_shape_); }
  std::size_t num_classes() const { return num_classes_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }
  /// Shape entering layer k; shapes()[layers().size()] is {num_classes}.
  const std::vector<Shape>& shapes() const { return shapes_; }
  std::size_t parameter_count() const;

  std::vector<double> forward(std::span<const double> x) const;
  Tensor forward(const Tensor& x) const;
  std::size_t classify(std::span<const double> x) const;
  std::size_t classify(const Tensor& x) const;

  Trace forward_trace(std::span<const double> x) const;
  /// Back-propagates dL/dlogits through a recorded trace. When `params` is
  /// non-null, parameter gradients are accumulated into it.
  std::vector<double> backward(const Trace& trace, std::span<const double> grad_logits,
                               ParamGrads* params = nullptr) const;

  LossGrad loss_grad(std::span<const double> x, const Loss& loss) const;
  Tensor grad_input(const Tensor& x, const Loss& loss) const;

  ParamGrads make_param_grads() const;

 private:
  void check_input(std::size_t n) const;
  void check_tensor(const Tensor& x) const;

  Shape input_shape_;
  std::vector<Layer> layers_;
  std::size_t num_classes_;
  std::vector<Shape> shapes_;
};

/// Lowest index among maximal entries.
std::size_t argmax_lowest(std::span<const double> v);

double loss_value(const Loss& loss, std::span<const double> logits);
/// dLoss/dlogits at `logits`.
std::vector<double> loss_logit_grad(const Loss& loss, std::span<const double> logits);

// Model file: "CAVNET1\n", text header terminated by "end\n", then every
// parameter as a little-endian float64 in layer order (weights, then bias).
void save_network(const Network& net, std::ostream& out);
Network load_network(std::istream& in);
void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);
std::string serialize(const Network& net);
Network deserialize(const std::string& bytes);

}  // namespace cav
