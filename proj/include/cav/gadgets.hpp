#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cav/circuit.hpp"
#include "cav/network.hpp"

namespace cav {

// ---- distance-minorant arithmetic -------------------------------------------

/// Expression over FSFP spaces: sums, constant scalings and ReLUs of inputs.
class MinorantExpr {
 public:
  static MinorantExpr input();             // the input space, minorant mu_in
  static MinorantExpr space(double mu);    // a space with a known minorant
  static MinorantExpr sum(MinorantExpr a, MinorantExpr b);
  static MinorantExpr scale(double alpha, MinorantExpr a);
  static MinorantExpr relu(MinorantExpr a);

  struct Node;

 private:
  explicit MinorantExpr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  std::shared_ptr<const Node> node_;
  friend double propagate_minorant(const MinorantExpr&, double);
};

/// Throws std::invalid_argument on mu_in <= 0 or a zero scaling.
double propagate_minorant(const MinorantExpr& expr, double mu_in);

// ---- gadget functions -------------------------------------------------------

/// kStep: Boolean gates from step functions (and = step1(x+y-2), ...).
/// kMinMax: and = min, or = max, not = 1-x; the gates stay monotone and
/// 1/2-threshold-preserving on fractional inputs.
enum class LogicFamily { kStep, kMinMax };

/// Gadget constructors writing into a Circuit. `mu` is the minorant of the
/// values fed to step-based comparisons. Clamp form of step0 is
/// 1 - ReLU(1 - ReLU(x/mu)), equal to (ReLU(x) - ReLU(x - mu))/mu pointwise but
/// with tighter interval bounds.
class Gadgets {
 public:
  Gadgets(Circuit& circuit, double mu, LogicFamily family = LogicFamily::kMinMax,
          bool clamp_steps = true);

  double mu() const { return mu_; }
  LogicFamily family() const { return family_; }
  Circuit& circuit() { return c_; }

  Expr max(const Expr& x, const Expr& y);
  Expr min(const Expr& x, const Expr& y);
  Expr step0(const Expr& x);  // 0 for x <= 0, 1 for x >= mu
  Expr step1(const Expr& x);  // 0 for x <= -mu, 1 for x >= 0
  Expr not_(const Expr& x);
  Expr and_(const Expr& x, const Expr& y);
  Expr or_(const Expr& x, const Expr& y);
  Expr if_(const Expr& a, const Expr& b, const Expr& c);  // a ? c : b
  Expr geq(const Expr& x, double k);
  Expr gt(const Expr& x, double k);
  Expr leq(const Expr& x, double k);
  Expr lt(const Expr& x, double k);
  Expr eq(const Expr& x, double k);
  Expr open(const Expr& x, double a, double b);  // a < x < b
  // Left-associative chains; an empty chain of and/or yields 1/0.
  Expr and_n(std::span<const Expr> xs);
  Expr or_n(std::span<const Expr> xs);
  Expr max_n(std::span<const Expr> xs);

 private:
  Circuit& c_;
  double mu_;
  LogicFamily family_;
  bool clamp_;
};

/// A compiled gadget: Dense/Relu layers with a declared arity.
struct NetFragment {
  std::string name;
  std::size_t inputs = 0, outputs = 0;
  double mu = 0.0;
  std::vector<Layer> layers;

  std::vector<double> evaluate(std::span<const double> x) const;
};

/// Names: max, min, step0, step1, not, and, or, if, geq, gt, leq, lt, eq, open,
/// and_n, or_n, max_n. Comparisons take the constant(s) in `k`
/// (open uses k[0] < x < k[1]); n-ary chains take `arity` inputs.
NetFragment make_gadget(const std::string& name, double mu,
                        LogicFamily family = LogicFamily::kMinMax, std::vector<double> k = {},
                        std::size_t arity = 2);

// ---- 3CNF formulas ----------------------------------------------------------

/// Literals are signed 1-based variable indices.
struct Cnf3Formula {
  std::size_t num_vars = 0;
  std::vector<std::array<int, 3>> clauses;

  void validate() const;
  bool eval(std::uint64_t assignment) const;  // bit i-1 holds variable i
  bool eval(std::span<const double> bools) const;
  std::string to_dimacs() const;
};

/// Clauses with one or two literals are padded by repeating their last literal;
/// longer clauses are rejected.
Cnf3Formula parse_dimacs(const std::string& text);
Cnf3Formula random_cnf3(std::size_t num_vars, std::size_t num_clauses, std::uint64_t seed);

std::optional<std::uint64_t> brute_force_sat(const Cnf3Formula& f);

/// Variables 1..n_hat_x form x̂, the rest ŷ.
struct Split {
  std::size_t n_x = 0, n_y = 0;
};
/// Exists x̂ forall ŷ not R(x̂, ŷ); returns the x̂ witness (bit mask) if so.
std::optional<std::uint64_t> brute_force_exists_forall(const Cnf3Formula& f, Split split);

/// Adds cnf(t) over the Boolean-valued expressions t (one per variable).
Expr compile_cnf3(Gadgets& g, const Cnf3Formula& f, std::span<const Expr> vars);
/// n Boolean inputs -> 1 Boolean output.
NetFragment compile_cnf3(const Cnf3Formula& f, double mu, LogicFamily family = LogicFamily::kMinMax);

// ---- reductions -------------------------------------------------------------

struct ReductionOptions {
  double mu = 1.0 / 255.0;  // grid of the input images
  LogicFamily family = LogicFamily::kMinMax;
  bool clamp_steps = true;
};

/// Untargeted attack query: f(x_s) = 0 and, away from x_s, f = 1 exactly when
/// the formula holds for the assignment x_i > 1/2.
struct UattQuery {
  Tensor x_s;
  double eps = 0.5;
  Network f;
};
UattQuery build_uatt_query(const Cnf3Formula& f, const ReductionOptions& opt = {});

/// Parametric robustness instance: θ fixes x̂, the input encodes ŷ.
struct PlrobInstance {
  Cnf3Formula formula;
  Split split;
  ReductionOptions options;
  Tensor x_s;
  double eps = 0.5;

  bool validate(std::span<const double> theta) const;  // θ ∈ {0,1}^n_x
  Network instantiate(std::span<const double> theta) const;
};
PlrobInstance build_plrob_instance(const Cnf3Formula& f, Split split,
                                   const ReductionOptions& opt = {});

/// Counter-attack instance over the four-band encoding: coordinate i lies in
/// (0,¼), (¼,½), (½,¾), (¾,1) for (x̂_i, ŷ_i) = 00, 01, 10, 11.
struct CcaInstance {
  Split split;
  std::size_t width = 0;  // max(n_x, n_y) after padding
  double gamma = 0.375;
  Tensor x_s;
  double eps = 0.375;        // γ
  double eps_outer = 0.5;
  Network h;
};
CcaInstance build_cca_instance(const Cnf3Formula& f, Split split, double gamma = 0.375,
                               const ReductionOptions& opt = {});

enum class ReductionKind { kUatt, kPlrob, kCca };
std::string to_string(ReductionKind k);

struct ReductionReport {
  ReductionKind kind;
  std::size_t n = 0, m = 0;
  bool oracle = false;            // instance in the source language
  bool network_decision = false;  // decision read off the constructed network
  bool agree = false;
  std::vector<double> witness;    // network-side witness or counterexample point
  std::string to_json() const;
};

struct ReductionParams {
  Split split;            // plrob/cca
  double gamma = 0.375;   // cca
  ReductionOptions options;
};
ReductionReport verify_reduction(ReductionKind kind, const Cnf3Formula& f,
                                 const ReductionParams& params = {});

}  // namespace cav
