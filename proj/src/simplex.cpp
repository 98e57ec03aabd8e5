#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "cav/kernels.hpp"
#include "cav/lp.hpp"

namespace cav {

std::size_t LinearProgram::add_var(double lo, double hi, double cost) {
  lower.push_back(lo);
  upper.push_back(hi);
  objective.push_back(cost);
  return num_vars++;
}

void LinearProgram::add_row(std::vector<std::pair<std::size_t, double>> coeffs, Sense sense,
                            double rhs) {
  rows.push_back(Row{std::move(coeffs), sense, rhs});
}

void LinearProgram::validate() const {
  if (objective.size() != num_vars || lower.size() != num_vars || upper.size() != num_vars)
    throw std::invalid_argument("LP vector sizes disagree with variable count");
  for (std::size_t j = 0; j < num_vars; ++j) {
    if (!std::isfinite(objective[j])) throw std::invalid_argument("non-finite objective");
    if (std::isnan(lower[j]) || std::isnan(upper[j]) || lower[j] > upper[j] ||
        lower[j] == kInf || upper[j] == -kInf)
      throw std::invalid_argument("bad bounds on variable " + std::to_string(j));
  }
  for (const Row& r : rows) {
    if (!std::isfinite(r.rhs)) throw std::invalid_argument("non-finite rhs");
    for (auto [j, a] : r.coeffs)
      if (j >= num_vars || !std::isfinite(a)) throw std::invalid_argument("bad row coefficient");
  }
}

std::string to_string(LpStatus s) {
  switch (s) {
    case LpStatus::kOptimal: return "optimal";
    case LpStatus::kInfeasible: return "infeasible";
    case LpStatus::kUnbounded: return "unbounded";
    case LpStatus::kIterationLimit: return "iteration_limit";
  }
  return "?";
}

Simplex::Simplex(const LinearProgram& lp, SimplexOptions opt)
    : opt_(opt), m_(lp.rows.size()), n_(lp.num_vars), N_(lp.num_vars + lp.rows.size()),
      rows_(lp.rows) {
  lp.validate();
  T_.assign(m_ * N_, 0.0);
  lo_.resize(N_);
  hi_.resize(N_);
  val_.assign(N_, 0.0);
  cost_.assign(N_, 0.0);
  basis_.resize(m_);
  pos_.assign(N_, -1);
  for (std::size_t j = 0; j < n_; ++j) {
    lo_[j] = lp.lower[j];
    hi_[j] = lp.upper[j];
    cost_[j] = lp.objective[j];
    val_[j] = std::isfinite(lo_[j]) ? lo_[j] : std::isfinite(hi_[j]) ? hi_[j] : 0.0;
  }
  for (std::size_t r = 0; r < m_; ++r) {
    const auto& row = rows_[r];
    for (auto [j, a] : row.coeffs) T_[r * N_ + j] -= a;
    T_[r * N_ + n_ + r] = 1.0;
    const std::size_t s = n_ + r;
    lo_[s] = row.sense == Sense::kLe ? -kInf : row.rhs;
    hi_[s] = row.sense == Sense::kGe ? kInf : row.rhs;
    basis_[r] = s;
    pos_[s] = static_cast<long>(r);
  }
  recompute_basics();
}

void Simplex::set_var_bounds(std::size_t j, double lo, double hi) {
  if (j >= n_) throw std::out_of_range("variable index");
  if (!(lo <= hi) || lo == kInf || hi == -kInf) throw std::invalid_argument("bad bounds");
  const bool was_upper = std::isfinite(hi_[j]) && val_[j] == hi_[j] && val_[j] != lo_[j];
  lo_[j] = lo;
  hi_[j] = hi;
  if (pos_[j] >= 0) return;
  // Nonbasic variables stay at the same side's bound when it exists.
  double target;
  if (was_upper && std::isfinite(hi)) target = hi;
  else if (std::isfinite(lo)) target = lo;
  else if (std::isfinite(hi)) target = hi;
  else target = 0.0;
  const double delta = target - val_[j];
  if (delta != 0.0) {
    for (std::size_t r = 0; r < m_; ++r) val_[basis_[r]] -= T_[r * N_ + j] * delta;
    val_[j] = target;
  }
}

void Simplex::set_objective(const std::vector<double>& c) {
  if (c.size() != n_) throw std::invalid_argument("objective size mismatch");
  for (std::size_t j = 0; j < n_; ++j) {
    if (!std::isfinite(c[j])) throw std::invalid_argument("non-finite objective");
    cost_[j] = c[j];
  }
}

void Simplex::recompute_basics() {
  for (std::size_t r = 0; r < m_; ++r) {
    const double* row = T_.data() + r * N_;
    double s = 0.0;
    for (std::size_t j = 0; j < N_; ++j)
      if (pos_[j] < 0 && val_[j] != 0.0) s -= row[j] * val_[j];
    val_[basis_[r]] = s;
  }
}

void Simplex::refactor() {
  std::vector<double> A(m_ * N_, 0.0);
  for (std::size_t r = 0; r < m_; ++r) {
    for (auto [j, a] : rows_[r].coeffs) A[r * N_ + j] += a;
    A[r * N_ + n_ + r] = -1.0;
  }
  std::vector<std::size_t> old_basis = basis_;
  std::vector<bool> used(m_, false);
  std::fill(pos_.begin(), pos_.end(), -1);
  for (std::size_t var : old_basis) {
    std::size_t best = m_;
    double best_abs = 0.0;
    for (std::size_t r = 0; r < m_; ++r)
      if (!used[r] && std::abs(A[r * N_ + var]) > best_abs) best_abs = std::abs(A[r * N_ + var]), best = r;
    if (best == m_ || best_abs < 1e-12) throw std::runtime_error("singular basis during refactor");
    kernels::pivot_update(A, m_, N_, best, var);
    used[best] = true;
    basis_[best] = var;
    pos_[var] = static_cast<long>(best);
  }
  T_.swap(A);
  since_refactor_ = 0;
  recompute_basics();
}

bool Simplex::infeasible_basic(std::size_t r, int& sign) const {
  const std::size_t v = basis_[r];
  if (val_[v] < lo_[v] - row_tol(lo_[v])) return sign = -1, true;
  if (val_[v] > hi_[v] + row_tol(hi_[v])) return sign = 1, true;
  sign = 0;
  return false;
}

void Simplex::compute_reduced_costs(Phase phase) {
  dj_.assign(N_, 0.0);
  std::vector<double> cb(m_, 0.0);
  bool any = false;
  for (std::size_t r = 0; r < m_; ++r) {
    if (phase == Phase::kOne) {
      int s;
      infeasible_basic(r, s);
      cb[r] = s;
    } else {
      cb[r] = cost_[basis_[r]];
    }
    any = any || cb[r] != 0.0;
  }
  if (phase == Phase::kTwo)
    for (std::size_t j = 0; j < N_; ++j) dj_[j] = pos_[j] < 0 ? cost_[j] : 0.0;
  if (!any) return;
  for (std::size_t r = 0; r < m_; ++r) {
    if (cb[r] == 0.0) continue;
    const double* row = T_.data() + r * N_;
    for (std::size_t j = 0; j < N_; ++j) dj_[j] -= cb[r] * row[j];
  }
  for (std::size_t r = 0; r < m_; ++r) dj_[basis_[r]] = 0.0;
}

void Simplex::pivot(std::size_t r, std::size_t q) {
  kernels::pivot_update(T_, m_, N_, r, q);
  pos_[basis_[r]] = -1;
  basis_[r] = q;
  pos_[q] = static_cast<long>(r);
  ++since_refactor_;
}

// One pricing + ratio-test step. Returns false when no improving column exists.
bool Simplex::iterate(Phase phase, bool& unbounded) {
  unbounded = false;
  compute_reduced_costs(phase);
  std::size_t q = N_;
  double best = 0.0;
  for (std::size_t j = 0; j < N_; ++j) {
    if (pos_[j] >= 0) continue;
    const double d = dj_[j];
    const bool can_up = val_[j] < hi_[j];
    const bool can_down = val_[j] > lo_[j];
    if ((d < -opt_.opt_tol && can_up) || (d > opt_.opt_tol && can_down)) {
      if (bland_) {
        q = j;
        break;
      }
      if (std::abs(d) > best) best = std::abs(d), q = j;
    }
  }
  if (q == N_) return false;

  const double dir = dj_[q] < 0 ? 1.0 : -1.0;
  std::vector<double> alpha(m_);
  for (std::size_t r = 0; r < m_; ++r) alpha[r] = -T_[r * N_ + q] * dir;

  // Harris two-pass ratio test.
  auto limit = [&](std::size_t r, bool relaxed, double& t, bool& at_upper) {
    const double a = alpha[r];
    if (std::abs(a) <= opt_.pivot_tol) return false;
    const std::size_t v = basis_[r];
    const double x = val_[v], lo = lo_[v], hi = hi_[v];
    const double tl = relaxed ? row_tol(lo) : 0.0, th = relaxed ? row_tol(hi) : 0.0;
    int s = 0;
    if (phase == Phase::kOne) infeasible_basic(r, s);
    if (a > 0) {
      if (s < 0) { t = (lo + tl - x) / a; at_upper = false; return true; }
      if (s > 0 || !std::isfinite(hi)) return false;
      t = (hi + th - x) / a;
      at_upper = true;
      return true;
    }
    if (s > 0) { t = (hi - th - x) / a; at_upper = true; return true; }
    if (s < 0 || !std::isfinite(lo)) return false;
    t = (lo - tl - x) / a;
    at_upper = false;
    return true;
  };

  double t_max = hi_[q] - lo_[q];  // bound flip of the entering variable
  for (std::size_t r = 0; r < m_; ++r) {
    double t;
    bool up;
    if (limit(r, true, t, up)) t_max = std::min(t_max, std::max(t, 0.0));
  }
  if (!std::isfinite(t_max)) {
    unbounded = true;
    return false;
  }
  std::size_t leave = m_;
  bool leave_upper = false;
  double leave_t = 0.0, leave_abs = 0.0;
  for (std::size_t r = 0; r < m_; ++r) {
    double t;
    bool up;
    if (!limit(r, false, t, up)) continue;
    t = std::max(t, 0.0);
    if (t > t_max) continue;
    const double a = std::abs(alpha[r]);
    const bool better = bland_ ? (leave == m_ || basis_[r] < basis_[leave]) : a > leave_abs;
    if (better) leave = r, leave_upper = up, leave_t = t, leave_abs = a;
  }
  const bool flip = leave == m_;
  const double t = flip ? hi_[q] - lo_[q] : leave_t;

  if (t > 1e-12) {
    degenerate_run_ = 0;
    bland_ = false;
  } else if (++degenerate_run_ > opt_.bland_after) {
    bland_ = true;
  }

  if (t != 0.0) {
    for (std::size_t r = 0; r < m_; ++r) val_[basis_[r]] += alpha[r] * t;
    val_[q] += dir * t;
  }
  if (flip) {
    val_[q] = dir > 0 ? hi_[q] : lo_[q];
    return true;
  }
  const std::size_t out = basis_[leave];
  pivot(leave, q);
  val_[out] = leave_upper ? hi_[out] : lo_[out];
  if (!std::isfinite(val_[out])) val_[out] = 0.0;
  return true;
}

LpResult Simplex::solve() {
  LpResult res;
  std::size_t iters = 0;
  bool checked = false;
  for (;;) {
    if (since_refactor_ >= opt_.refactor_every) refactor();
    else if (iters % 64 == 63) recompute_basics();

    bool feasible = true;
    for (std::size_t r = 0; r < m_ && feasible; ++r) {
      int s;
      feasible = !infeasible_basic(r, s);
    }
    const Phase phase = feasible ? Phase::kTwo : Phase::kOne;
    bool unbounded = false;
    const bool moved = iters < opt_.max_iterations && iterate(phase, unbounded);
    if (moved) {
      ++iters;
      checked = false;
      continue;
    }
    if (iters >= opt_.max_iterations) {
      res.status = LpStatus::kIterationLimit;
      break;
    }
    if (!checked) {
      // Confirm the verdict on freshly factored values before reporting it.
      refactor();
      checked = true;
      continue;
    }
    if (unbounded) res.status = LpStatus::kUnbounded;
    else res.status = phase == Phase::kOne ? LpStatus::kInfeasible : LpStatus::kOptimal;
    break;
  }
  total_iters_ += iters;
  res.iterations = iters;
  res.x.assign(val_.begin(), val_.begin() + static_cast<long>(n_));
  // Nonbasic values are exact bounds; snap basic ones that sit within tolerance.
  for (std::size_t j = 0; j < n_; ++j) res.x[j] = std::clamp(res.x[j], lo_[j], hi_[j]);
  res.objective = 0.0;
  for (std::size_t j = 0; j < n_; ++j) res.objective += cost_[j] * res.x[j];
  return res;
}

LpResult simplex_solve(const LinearProgram& lp, SimplexOptions opt) {
  Simplex s(lp, opt);
  return s.solve();
}

void write_lp_text(const LinearProgram& lp, std::ostream& out,
                   const std::vector<std::size_t>& binaries) {
  auto name = [&](std::size_t j) {
    return j < lp.names.size() && !lp.names[j].empty() ? lp.names[j] : "x" + std::to_string(j);
  };
  auto term = [&](double a, std::size_t j, bool first) {
    out << (a < 0 ? " - " : first ? " " : " + ") << std::abs(a) << ' ' << name(j);
  };
  out.precision(17);
  out << "Minimize\n obj:";
  bool first = true;
  for (std::size_t j = 0; j < lp.num_vars; ++j)
    if (lp.objective[j] != 0.0) term(lp.objective[j], j, first), first = false;
  if (first) out << " 0 " << name(0);
  out << "\nSubject To\n";
  for (std::size_t r = 0; r < lp.rows.size(); ++r) {
    const auto& row = lp.rows[r];
    out << " c" << r << ':';
    first = true;
    for (auto [j, a] : row.coeffs) term(a, j, first), first = false;
    if (first) out << " 0 " << name(0);
    out << (row.sense == Sense::kLe ? " <= " : row.sense == Sense::kGe ? " >= " : " = ") << row.rhs
        << "\n";
  }
  out << "Bounds\n";
  for (std::size_t j = 0; j < lp.num_vars; ++j) {
    const double lo = lp.lower[j], hi = lp.upper[j];
    if (!std::isfinite(lo) && !std::isfinite(hi)) out << ' ' << name(j) << " free\n";
    else if (!std::isfinite(lo)) out << " -inf <= " << name(j) << " <= " << hi << "\n";
    else if (!std::isfinite(hi)) out << ' ' << name(j) << " >= " << lo << "\n";
    else out << ' ' << lo << " <= " << name(j) << " <= " << hi << "\n";
  }
  if (!binaries.empty()) {
    out << "Binary\n";
    for (std::size_t j : binaries) out << ' ' << name(j) << "\n";
  }
  out << "End\n";
}

}  // namespace cav
