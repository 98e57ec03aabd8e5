#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "cav/network.hpp"

namespace cav {

/// Affine combination c + sum_k coeff_k * unit_k over the units of a Circuit.
struct Expr {
  double constant = 0.0;
  std::vector<std::pair<std::size_t, double>> terms;  // (unit id, coefficient), ids unique

  bool is_constant() const { return terms.empty(); }
};

Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);
Expr operator*(double k, const Expr& a);
Expr operator+(const Expr& a, double c);
Expr operator-(const Expr& a, double c);
Expr operator-(double c, const Expr& a);

/// A straight-line program of affine maps and ReLUs over real inputs.
///
/// Units 0..n-1 are the inputs; every later unit is ReLU(expr) over earlier
/// units. A unit's level is 1 + the highest level it references (inputs have
/// level 0), so the circuit compiles to exactly max-level Dense+Relu pairs
/// followed by one output Dense. Values needed past their level are carried
/// forward with identity neurons.
class Circuit {
 public:
  /// `nonnegative_inputs` lets inputs be carried with one ReLU instead of a
  /// positive/negative pair; the compiled net is then exact only on x >= 0.
  explicit Circuit(std::size_t num_inputs, bool nonnegative_inputs = false);

  std::size_t num_inputs() const { return num_inputs_; }
  std::size_t num_units() const { return units_.size(); }
  std::size_t relu_count() const { return units_.size() - num_inputs_; }
  std::size_t depth() const;

  Expr input(std::size_t i) const;
  static Expr constant(double c) { return Expr{c, {}}; }
  /// ReLU of a constant folds to a constant; otherwise a new unit.
  Expr relu(const Expr& e);

  void add_output(const Expr& e) { outputs_.push_back(e); }
  std::size_t num_outputs() const { return outputs_.size(); }

  /// Direct evaluation of the unit graph, independent of compilation.
  std::vector<double> evaluate(std::span<const double> x) const;

  /// Dense/Relu layer stack computing the outputs.
  std::vector<Layer> compile_layers() const;
  Network compile(Shape input_shape) const;  // requires >= 2 outputs

 private:
  struct Unit {
    Expr arg;  // unused for inputs
    std::size_t level = 0;
  };
  double eval_expr(const Expr& e, const std::vector<double>& vals) const;

  std::size_t num_inputs_;
  bool nonnegative_inputs_;
  std::vector<Unit> units_;
  std::vector<Expr> outputs_;
};

}  // namespace cav
