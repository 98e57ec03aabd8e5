#include <nlohmann/json.hpp>

#include <stdexcept>

#include "cav/gadgets.hpp"

namespace cav {

namespace {

// Grid points k*mu never sit within mu/2 of 1/2 or mu/4 of a quarter, so
// comparisons against those thresholds use the reduced minorant.
constexpr double kHalfScale = 0.5;
constexpr double kQuarterScale = 0.25;

std::vector<double> corner(std::uint64_t mask, std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = (mask >> i) & 1U ? 1.0 : 0.0;
  return x;
}

// f_1 = and(not(isx_s(x)), cnf(lits)); logits (not(f_1), f_1 - 1/2), so class 1
// iff f_1 > 3/4. Grid points give f_1 in {0, 1}; off the grid an
// unsatisfiable formula keeps f_1 <= 1/2, a quarter below the boundary.
Network attack_gadget(const Cnf3Formula& f, std::span<const double> theta, std::size_t n_inputs,
                      const ReductionOptions& opt) {
  Circuit c(n_inputs);
  Gadgets g(c, opt.mu * kHalfScale, opt.family, opt.clamp_steps);
  std::vector<Expr> vars, eqs;
  for (double t : theta) vars.push_back(Circuit::constant(t));
  for (std::size_t i = 0; i < n_inputs; ++i) {
    vars.push_back(g.gt(c.input(i), 0.5));
    eqs.push_back(g.eq(c.input(i), 0.5));
  }
  Expr f1 = g.and_(g.not_(g.and_n(eqs)), compile_cnf3(g, f, vars));
  c.add_output(g.not_(f1));
  c.add_output(f1 - 0.5);
  return c.compile({n_inputs});
}

Tensor halves(std::size_t n) { return Tensor({n}, std::vector<double>(n, 0.5)); }

}  // namespace

UattQuery build_uatt_query(const Cnf3Formula& f, const ReductionOptions& opt) {
  f.validate();
  return UattQuery{halves(f.num_vars), 0.5, attack_gadget(f, {}, f.num_vars, opt)};
}

bool PlrobInstance::validate(std::span<const double> theta) const {
  if (theta.size() != split.n_x) return false;
  for (double t : theta)
    if (t != 0.0 && t != 1.0) return false;
  return true;
}

Network PlrobInstance::instantiate(std::span<const double> theta) const {
  if (theta.size() != split.n_x) throw std::invalid_argument("theta length != n_x");
  return attack_gadget(formula, theta, split.n_y, options);
}

PlrobInstance build_plrob_instance(const Cnf3Formula& f, Split split,
                                   const ReductionOptions& opt) {
  f.validate();
  if (split.n_x + split.n_y != f.num_vars)
    throw std::invalid_argument("split does not cover all variables");
  if (split.n_y == 0) throw std::invalid_argument("input block must be nonempty");
  return PlrobInstance{f, split, opt, halves(split.n_y), 0.5};
}

CcaInstance build_cca_instance(const Cnf3Formula& f, Split split, double gamma,
                               const ReductionOptions& opt) {
  f.validate();
  if (!(gamma > 0.25 && gamma < 0.5)) throw std::invalid_argument("gamma must lie in (1/4, 1/2)");
  if (split.n_x + split.n_y != f.num_vars)
    throw std::invalid_argument("split does not cover all variables");
  const std::size_t w = std::max(split.n_x, split.n_y);

  Circuit c(w);
  Gadgets g(c, opt.mu * kQuarterScale, opt.family, opt.clamp_steps);
  std::vector<Expr> vars(f.num_vars), invalid, half;
  for (std::size_t i = 0; i < w; ++i) {
    Expr x = c.input(i);
    if (i < split.n_x) vars[i] = g.gt(x, 0.5);
    if (i < split.n_y) vars[split.n_x + i] = g.or_(g.open(x, 0.25, 0.5), g.open(x, 0.75, 1.0));
    Expr at_half = g.eq(x, 0.5);
    half.push_back(at_half);
    std::vector<Expr> edges{g.eq(x, 0.25), at_half, g.eq(x, 0.75)};
    invalid.push_back(g.or_(g.or_(g.leq(x, 0.0), g.geq(x, 1.0)), g.or_n(edges)));
  }
  Expr h1 = g.or_(g.or_n(half), g.and_(g.not_(g.or_n(invalid)), compile_cnf3(g, f, vars)));
  c.add_output(g.not_(h1));
  c.add_output(h1);

  return CcaInstance{split, w, gamma, halves(w), gamma, 0.5, c.compile({w})};
}

std::string to_string(ReductionKind k) {
  switch (k) {
    case ReductionKind::kUatt: return "uatt";
    case ReductionKind::kPlrob: return "plrob";
    case ReductionKind::kCca: return "cca";
  }
  return "?";
}

std::string ReductionReport::to_json() const {
  nlohmann::json j{{"kind", to_string(kind)},          {"n", n},
                   {"m", m},                           {"oracle", oracle},
                   {"network_decision", network_decision}, {"agree", agree},
                   {"witness", witness}};
  return j.dump();
}

namespace {

// Decision: some corner of [0,1]^n is classified differently from x_s. The
// network reads x only through x_i > 1/2 and the x_s detector, so corners
// cover every reachable output.
bool uatt_decision(const Network& f, std::span<const double> x_s, std::vector<double>& witness) {
  const std::size_t n = x_s.size();
  const std::size_t base = f.classify(x_s);
  for (std::uint64_t a = 0; a < (std::uint64_t{1} << n); ++a) {
    auto x = corner(a, n);
    if (f.classify(x) != base) {
      witness = x;
      return true;
    }
  }
  return false;
}

// Points of B(a, γ) with one representative per band of each coordinate:
// every valid band combination, then one invalid value at a time.
bool cca_corner_holds(const CcaInstance& inst, std::uint64_t a, std::size_t label) {
  const std::size_t w = inst.width;
  const double g = inst.gamma;
  auto val = [&](std::size_t i, double low_side) {
    return (a >> i) & 1U ? 1.0 - low_side : low_side;
  };
  const double valid[2] = {0.125, (0.25 + g) / 2.0};
  const double invalid[3] = {-g / 2.0, 0.0, 0.25};
  std::vector<double> x(w);
  for (std::uint64_t b = 0; b < (std::uint64_t{1} << w); ++b) {
    for (std::size_t i = 0; i < w; ++i) x[i] = val(i, valid[(b >> i) & 1U]);
    if (inst.h.classify(x) != label) return false;
  }
  for (std::size_t i = 0; i < w; ++i)
    for (double v : invalid) {
      for (std::size_t j = 0; j < w; ++j) x[j] = val(j, valid[0]);
      x[i] = val(i, v);
      if (inst.h.classify(x) != label) return false;
    }
  return true;
}

}  // namespace

ReductionReport verify_reduction(ReductionKind kind, const Cnf3Formula& f,
                                 const ReductionParams& params) {
  ReductionReport r;
  r.kind = kind;
  r.n = f.num_vars;
  r.m = f.clauses.size();
  switch (kind) {
    case ReductionKind::kUatt: {
      r.oracle = brute_force_sat(f).has_value();
      UattQuery q = build_uatt_query(f, params.options);
      r.network_decision = uatt_decision(q.f, q.x_s.values(), r.witness);
      break;
    }
    case ReductionKind::kPlrob: {
      r.oracle = brute_force_exists_forall(f, params.split).has_value();
      PlrobInstance inst = build_plrob_instance(f, params.split, params.options);
      for (std::uint64_t t = 0; t < (std::uint64_t{1} << params.split.n_x); ++t) {
        auto theta = corner(t, params.split.n_x);
        std::vector<double> unused;
        if (!uatt_decision(inst.instantiate(theta), inst.x_s.values(), unused)) {
          r.network_decision = true;
          r.witness = theta;
          break;
        }
      }
      break;
    }
    case ReductionKind::kCca: {
      r.oracle = brute_force_exists_forall(f, params.split).has_value();
      CcaInstance inst = build_cca_instance(f, params.split, params.gamma, params.options);
      const std::size_t top = inst.h.classify(inst.x_s.values());
      for (std::uint64_t a = 0; a < (std::uint64_t{1} << inst.width); ++a) {
        auto x = corner(a, inst.width);
        const std::size_t label = inst.h.classify(x);
        if (label != top && cca_corner_holds(inst, a, label)) {
          r.network_decision = true;
          r.witness = x;
          break;
        }
      }
      break;
    }
  }
  r.agree = r.oracle == r.network_decision;
  return r;
}

}  // namespace cav
