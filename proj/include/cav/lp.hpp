#pragma once

#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace cav {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Sense { kLe, kEq, kGe };

/// min c^T x  s.t.  rows,  lower <= x <= upper (bounds may be infinite).
struct LinearProgram {
  struct Row {
    std::vector<std::pair<std::size_t, double>> coeffs;
    Sense sense = Sense::kLe;
    double rhs = 0.0;
  };

  std::size_t num_vars = 0;
  std::vector<double> objective;
  std::vector<double> lower, upper;
  std::vector<Row> rows;
  std::vector<std::string> names;  // optional, used by the LP writer

  explicit LinearProgram(std::size_t n = 0)
      : num_vars(n), objective(n, 0.0), lower(n, 0.0), upper(n, kInf) {}

  std::size_t add_var(double lo, double hi, double cost = 0.0);
  void add_row(std::vector<std::pair<std::size_t, double>> coeffs, Sense sense, double rhs);
  /// Throws std::invalid_argument on non-finite coefficients, lo > hi, bad indices.
  void validate() const;
};

enum class LpStatus { kOptimal, kInfeasible, kUnbounded, kIterationLimit };
std::string to_string(LpStatus s);

struct LpResult {
  LpStatus status = LpStatus::kInfeasible;
  double objective = 0.0;
  std::vector<double> x;
  std::size_t iterations = 0;
};

struct SimplexOptions {
  double feas_tol = 1e-8;
  double opt_tol = 1e-9;
  double pivot_tol = 1e-9;
  std::size_t max_iterations = 200000;
  std::size_t bland_after = 50;   // consecutive degenerate pivots before Bland's rule
  std::size_t refactor_every = 400;
};

/// Dense-tableau bounded-variable primal simplex.
///
/// Row r carries a slack s_r = a_r x whose bounds encode the sense, so every
/// constraint is a bound and the all-slack basis is always available. Phase 1
/// minimizes the sum of bound violations from whatever basis is current, which
/// lets callers change bounds or the objective and re-solve warm.
class Simplex {
 public:
  explicit Simplex(const LinearProgram& lp, SimplexOptions opt = {});

  void set_var_bounds(std::size_t j, double lo, double hi);
  void set_objective(const std::vector<double>& c);
  LpResult solve();

  std::size_t num_vars() const { return n_; }
  std::size_t num_rows() const { return m_; }
  std::size_t total_iterations() const { return total_iters_; }

 private:
  enum class Phase { kOne, kTwo };
  bool infeasible_basic(std::size_t r, int& sign) const;
  void compute_reduced_costs(Phase phase);
  bool iterate(Phase phase, bool& unbounded);
  void pivot(std::size_t r, std::size_t q);
  void recompute_basics();
  void refactor();
  double row_tol(double bound) const { return opt_.feas_tol * (1.0 + std::abs(bound)); }

  SimplexOptions opt_;
  std::size_t m_, n_, N_;
  std::vector<LinearProgram::Row> rows_;
  std::vector<double> T_;  // m x N, B^{-1} [A | -I]
  std::vector<double> lo_, hi_, val_, cost_, dj_;
  std::vector<std::size_t> basis_;
  std::vector<long> pos_;  // variable -> basic row or -1
  std::size_t since_refactor_ = 0, degenerate_run_ = 0, total_iters_ = 0;
  bool bland_ = false;
};

LpResult simplex_solve(const LinearProgram& lp, SimplexOptions opt = {});

/// CPLEX-style LP text (with a "General"/"Binary" section when given).
void write_lp_text(const LinearProgram& lp, std::ostream& out,
                   const std::vector<std::size_t>& binaries = {});

}  // namespace cav
