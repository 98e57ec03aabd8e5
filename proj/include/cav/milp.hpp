#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cav/lp.hpp"
#include "cav/network.hpp"

namespace cav {

/// A network rewritten as affine blocks with a ReLU between consecutive
/// blocks: logits = B_L(ReLU(... ReLU(B_1 x))). Conv and Flatten layers are
/// folded into sparse rows.
struct PwlNet {
  struct Block {
    std::size_t in = 0, out = 0;
    std::vector<std::vector<std::pair<std::uint32_t, double>>> rows;
    std::vector<double> bias;
  };
  std::size_t input_size = 0;
  std::vector<Block> blocks;

  std::size_t hidden_layers() const { return blocks.size() - 1; }
  std::vector<double> forward(std::span<const double> x) const;
};
PwlNet linearize(const Network& net);

/// Pre-activation bounds of every block output (the last entry holds logits).
struct NeuronBounds {
  std::vector<std::vector<double>> lower, upper;
  std::size_t unstable_count() const;  // hidden neurons with l < 0 < u
};

NeuronBounds interval_bounds(const Network& net, std::span<const double> x, double eps);

enum class Phase : std::int8_t { kFree = 0, kActive = 1, kInactive = -1 };
using Phases = std::vector<std::vector<Phase>>;  // per hidden block, per neuron

/// kSymbolic additionally back-substitutes linear ReLU relaxations down to the
/// input box and keeps the tighter side of each bound.
enum class BoundMethod { kInterval, kSymbolic };

/// Bounds for the input box [lo, hi] with optional per-neuron phase fixes.
/// Returns nullopt when a fixed phase is impossible inside the box. Bounds are
/// widened by a rounding-error term so they stay sound in floating point.
std::optional<NeuronBounds> propagate_bounds(const PwlNet& net, std::span<const double> lo,
                                             std::span<const double> hi,
                                             const Phases* phases = nullptr,
                                             BoundMethod method = BoundMethod::kInterval);

/// Sound upper bound of c·h + c0 over the box, h being the last hidden layer's
/// output (the input for a purely affine net), given bounds from
/// propagate_bounds with the same box and phases. `intercepts`, when given,
/// receives per neuron the amount its relaxation offset adds to the bound.
double linear_upper_bound(const PwlNet& net, const NeuronBounds& nb, const Phases* phases,
                          std::span<const double> lo, std::span<const double> hi,
                          std::span<const double> c, double c0,
                          std::vector<std::vector<double>>* intercepts = nullptr);

/// Pre-activations whose bound is within this distance of 0 are treated as
/// stable on that side.
inline constexpr double kStableTol = 1e-10;

// ---- generic big-M route ----------------------------------------------------

inline constexpr double kTieMargin = 1e-6;      // logit_t >= logit_j + margin, j < t
inline constexpr double kHigherMargin = 1e-7;   // logit_t >= logit_j + margin, j > t

struct MilpModel {
  LinearProgram lp;
  std::vector<std::size_t> binaries;
  std::vector<std::size_t> input_vars;  // decoder: x'_i = solution[input_vars[i]]
  std::size_t distance_var = 0;

  void validate() const;
  Tensor decode(std::span<const double> solution, const Shape& shape) const;
};

/// Variables: x' in B(x, eps_box) ∩ [0,1]^n, d >= |x'_i - x_i| (minimized),
/// one y per hidden ReLU, one binary per unstable ReLU with the four big-M
/// inequalities, and margin rows making `target` the top class.
MilpModel encode_bigM(const Network& net, std::span<const double> x, double eps_box,
                      std::size_t target);

enum class MilpStatus { kOptimal, kInfeasible, kTimeout };
std::string to_string(MilpStatus s);

struct MilpResult {
  MilpStatus status = MilpStatus::kInfeasible;
  double upper = kInf;  // incumbent objective
  double lower = -kInf;
  std::vector<double> solution;
  std::size_t nodes = 0;
};

struct BnbOptions {
  double atol = 1e-5;
  double rtol = 1e-10;
  double time_limit = 60.0;            // seconds
  std::optional<double> warm_start;    // incumbent objective known to be attainable
  std::ostream* log = nullptr;         // JSON lines {node, lb, ub, depth}
};

MilpResult branch_and_bound(const MilpModel& model, const BnbOptions& opt = {});

/// ub - lb <= max(atol, rtol * |ub|)
bool is_tight(double lower, double upper, double atol = 1e-5, double rtol = 1e-10);

// ---- exact minimal L∞ distance ---------------------------------------------

struct PoolHint {
  double distance = kInf;
  std::optional<std::vector<double>> witness;  // seeds the incumbent when it verifies
};

struct TargetLog {
  std::size_t target = 0;
  std::string status;  // optimal | pruned | infeasible | timeout | stopped | skipped
  double lower = kInf, upper = kInf;
  std::size_t nodes = 0;
  double seconds = 0.0;
};

struct ExactOptions {
  double atol = 1e-5;
  double rtol = 1e-10;
  double time_limit = 600.0;  // seconds for the whole sample
  double eps_box = 1.0;       // search radius when no hint is given
  /// Decision query: return once any verified witness inside eps_box is
  /// known. The distance is then only an upper bound.
  bool stop_at_first = false;
  std::ostream* log = nullptr;
};

struct ExactResult {
  /// kInfeasible: no adversarial example within eps_box (distance = +inf).
  MilpStatus status = MilpStatus::kInfeasible;
  double distance = kInf;  // upper bound; exact when tight
  double lower = 0.0;
  bool tight = false;
  std::vector<double> witness;
  std::size_t witness_label = 0;
  double eps_box = 1.0;
  std::vector<TargetLog> targets;
  std::size_t nodes = 0;
};

ExactResult exact_distance(const Network& net, std::span<const double> x,
                           const std::optional<PoolHint>& hint = std::nullopt,
                           const ExactOptions& opt = {});

struct LowerBoundResult {
  bool certified = false;  // no adversarial example within eps
  double lower = 0.0;      // LP-relaxation lower bound on the distance (<= eps when not certified)
};
LowerBoundResult lower_bound_distance(const Network& net, std::span<const double> x, double eps);

}  // namespace cav
