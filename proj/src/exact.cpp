#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <queue>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cav/milp.hpp"

namespace cav {

namespace {

using Terms = std::vector<std::pair<std::size_t, double>>;

struct Expr {
  Terms terms;
  double constant = 0.0;
  double at(std::span<const double> v) const {
    double s = constant;
    for (auto [j, w] : terms) s += w * v[j];
    return s;
  }
};

struct Relaxed {
  std::size_t block, index, y;
  Expr z;
  double l, u;
};

struct NodeLp {
  LinearProgram lp;
  std::vector<Relaxed> relaxed;
};

/// Sparse accumulator over LP variables.
class Accumulator {
 public:
  explicit Accumulator(std::size_t n) : acc_(n, 0.0), seen_(n, 0) {}
  void add(const Expr& e, double w) {
    constant_ += w * e.constant;
    for (auto [j, v] : e.terms) {
      if (!seen_[j]) seen_[j] = 1, list_.push_back(j);
      acc_[j] += w * v;
    }
  }
  void add_constant(double c) { constant_ += c; }
  Expr take() {
    Expr e;
    e.constant = constant_;
    std::sort(list_.begin(), list_.end());
    for (std::size_t j : list_) {
      if (acc_[j] != 0.0) e.terms.emplace_back(j, acc_[j]);
      acc_[j] = 0.0;
      seen_[j] = 0;
    }
    list_.clear();
    constant_ = 0.0;
    return e;
  }

 private:
  std::vector<double> acc_;
  std::vector<char> seen_;
  std::vector<std::size_t> list_;
  double constant_ = 0.0;
};

std::size_t total_units(const PwlNet& pwl) {
  std::size_t n = pwl.input_size;
  for (const auto& b : pwl.blocks) n += b.out;
  return n;
}

void add_expr_row(LinearProgram& lp, const Expr& e, double extra_coef, std::size_t extra_var,
                  Sense sense, double rhs) {
  Terms t = e.terms;
  if (extra_coef != 0.0) t.emplace_back(extra_var, extra_coef);
  lp.add_row(std::move(t), sense, rhs - e.constant);
}

/// Triangle relaxation of the free unstable neurons; phase fixes and stable
/// neurons are substituted exactly.
NodeLp build_lp(const PwlNet& pwl, const NeuronBounds& nb, const Phases* phases,
                std::size_t target, std::span<const double> lo, std::span<const double> hi) {
  const std::size_t n = pwl.input_size;
  NodeLp out;
  out.lp = LinearProgram(n);
  for (std::size_t i = 0; i < n; ++i) out.lp.lower[i] = lo[i], out.lp.upper[i] = hi[i];
  Accumulator acc(total_units(pwl));
  std::vector<Expr> cur(n);
  for (std::size_t i = 0; i < n; ++i) cur[i].terms = {{i, 1.0}};
  std::vector<Expr> logits;
  for (std::size_t k = 0; k < pwl.blocks.size(); ++k) {
    const auto& b = pwl.blocks[k];
    const bool hidden = k + 1 < pwl.blocks.size();
    std::vector<Expr> next(b.out);
    for (std::size_t i = 0; i < b.out; ++i) {
      for (auto [j, w] : b.rows[i])
        if (!cur[j].terms.empty() || cur[j].constant != 0.0) acc.add(cur[j], w);
      acc.add_constant(b.bias[i]);
      Expr z = acc.take();
      if (!hidden) {
        logits.push_back(std::move(z));
        continue;
      }
      const Phase ph = phases ? (*phases)[k][i] : Phase::kFree;
      const double l = nb.lower[k][i], u = nb.upper[k][i];
      if (ph == Phase::kActive) {
        add_expr_row(out.lp, z, 0.0, 0, Sense::kGe, 0.0);
        next[i] = std::move(z);
      } else if (ph == Phase::kInactive) {
        add_expr_row(out.lp, z, 0.0, 0, Sense::kLe, 0.0);
      } else if (u <= kStableTol) {
      } else if (l >= -kStableTol) {
        next[i] = std::move(z);
      } else {
        const std::size_t y = out.lp.add_var(0.0, u);
        Expr neg = z;
        for (auto& t : neg.terms) t.second = -t.second;
        neg.constant = -neg.constant;
        add_expr_row(out.lp, neg, 1.0, y, Sense::kGe, 0.0);  // y >= z
        const double s = u / (u - l);
        Expr scaled = z;
        for (auto& t : scaled.terms) t.second *= -s;
        scaled.constant *= -s;
        add_expr_row(out.lp, scaled, 1.0, y, Sense::kLe, -s * l);  // y <= s (z - l)
        next[i].terms = {{y, 1.0}};
        out.relaxed.push_back({k, i, y, std::move(z), l, u});
      }
    }
    cur = std::move(next);
  }
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j == target) continue;
    acc.add(logits[target], 1.0);
    acc.add(logits[j], -1.0);
    add_expr_row(out.lp, acc.take(), 0.0, 0, Sense::kGe, j < target ? kTieMargin : kHigherMargin);
  }
  return out;
}

/// Coefficients of logit_t - logit_c over the last hidden layer's output.
std::pair<std::vector<double>, double> margin_form(const PwlNet& pwl, std::size_t t, std::size_t c) {
  const auto& last = pwl.blocks.back();
  std::vector<double> w(last.in, 0.0);
  for (auto [j, v] : last.rows[t]) w[j] += v;
  for (auto [j, v] : last.rows[c]) w[j] -= v;
  return {std::move(w), last.bias[t] - last.bias[c]};
}

struct MarginCheck {
  bool possible = true;
  std::size_t tightest = 0;  // class whose margin has the least slack
};

/// Upper bounds of logit_t - logit_c over the node, from the interval bounds
/// of the last hidden layer and, when `symbolic`, from back-substitution.
MarginCheck check_margins(const PwlNet& pwl, const NeuronBounds& nb, const Phases* phases,
                          std::span<const double> lo, std::span<const double> hi,
                          std::size_t target, bool symbolic) {
  const auto& last = pwl.blocks.back();
  std::vector<double> vl, vh;
  if (pwl.blocks.size() == 1) {
    vl.assign(lo.begin(), lo.end());
    vh.assign(hi.begin(), hi.end());
  } else {
    const std::size_t k = pwl.blocks.size() - 2;
    vl.resize(nb.lower[k].size());
    vh.resize(nb.lower[k].size());
    for (std::size_t i = 0; i < vl.size(); ++i) {
      vl[i] = std::max(0.0, nb.lower[k][i]);
      vh[i] = nb.upper[k][i] <= kStableTol ? 0.0 : std::max(0.0, nb.upper[k][i]);
    }
  }
  MarginCheck out;
  double least = kInf;
  for (std::size_t c = 0; c < last.out; ++c) {
    if (c == target) continue;
    auto [w, s] = margin_form(pwl, target, c);
    double mag = std::abs(s);
    for (std::size_t j = 0; j < w.size(); ++j) {
      s += w[j] > 0 ? w[j] * vh[j] : w[j] * vl[j];
      mag += std::abs(w[j]) * std::max(std::abs(vl[j]), std::abs(vh[j]));
    }
    s += 2.3e-16 * static_cast<double>(w.size() + 2) * mag;
    if (symbolic) {
      auto [w2, c0] = margin_form(pwl, target, c);
      s = std::min(s, linear_upper_bound(pwl, nb, phases, lo, hi, w2, c0));
    }
    const double slack = s - ((c < target ? kTieMargin : kHigherMargin) - 1e-12);
    if (slack < 0) {
      out.possible = false;
      return out;
    }
    if (slack < least) least = slack, out.tightest = c;
  }
  return out;
}

struct Node {
  Phases phases;
  double lb;
  std::size_t depth;
  bool preferred = false;  // the side holding the parent's LP point
  std::size_t seq = 0;
};

// Lowest bound first; among equal bounds dive: deeper, then the side of the
// parent's LP point, then the newest.
struct NodeOrder {
  bool operator()(const Node& a, const Node& b) const {
    if (a.lb != b.lb) return a.lb > b.lb;
    if (a.depth != b.depth) return a.depth < b.depth;
    if (a.preferred != b.preferred) return b.preferred;
    return a.seq < b.seq;
  }
};

class Solver {
 public:
  Solver(const Network& net, std::span<const double> x, const ExactOptions& opt)
      : net_(net), pwl_(linearize(net)), x_(x.begin(), x.end()), clean_(net.classify(x)),
        opt_(opt), start_(std::chrono::steady_clock::now()) {
    used_.assign(x_.size(), 0);
    for (const auto& row : pwl_.blocks.front().rows)
      for (auto [j, w] : row)
        if (w != 0.0) used_[j] = 1;
  }

  std::size_t clean() const { return clean_; }
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
  bool out_of_time() const { return elapsed() > opt_.time_limit; }
  double gap() const { return std::max(opt_.atol, opt_.rtol * std::abs(ub_)); }
  // Regions that cannot beat this are closed; half the gap keeps the final
  // tightness test clear of rounding.
  double cutoff() const { return ub_ - 0.5 * gap(); }

  bool offer(std::vector<double> point) {
    const double d = linf_distance(point, x_);
    if (!(d < ub_)) return false;
    const std::size_t label = net_.classify(point);
    if (label == clean_) return false;
    ub_ = d;
    witness_ = std::move(point);
    witness_label_ = label;
    return true;
  }

  /// Offers an LP point, then points further along its displacement from x
  /// and the corner of B(x, r) in that direction.
  void offer_lp(const std::vector<double>& point, double r) {
    if (offer(point)) return;
    if (!(r < ub_)) r = std::nextafter(ub_, 0.0);
    std::vector<double> p(x_.size());
    auto along = [&](double alpha, bool corner) {
      for (std::size_t i = 0; i < x_.size(); ++i) {
        const double step = point[i] - x_[i];
        const double v = corner ? (step > 0 ? r : step < 0 ? -r : 0.0) : alpha * step;
        p[i] = std::clamp(x_[i] + std::clamp(v, -r, r), 0.0, 1.0);
      }
      return offer(p);
    };
    for (double alpha : {2.0, 4.0, 16.0})
      if (along(alpha, false)) return;
    along(0.0, true);
  }

  /// Branch and bound for one target class. Returns the proven lower bound on
  /// the distance of any class-`target` point that beats the incumbent.
  TargetLog run_target(std::size_t target, double eps_box) {
    TargetLog log;
    log.target = target;
    const double t0 = elapsed();
    const std::size_t hidden = pwl_.hidden_layers();
    Phases root(hidden);
    for (std::size_t k = 0; k < hidden; ++k) root[k].assign(pwl_.blocks[k].out, Phase::kFree);
    std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
    open.push({std::move(root), 0.0, 0});
    double proven = kInf;
    bool timeout = false;
    bool stopped = false;
    while (!open.empty()) {
      if (ub_ < kInf && open.top().lb >= cutoff()) break;
      if (opt_.stop_at_first && ub_ < kInf) {
        stopped = true;
        break;
      }
      if (out_of_time()) {
        timeout = true;
        break;
      }
      Node node = open.top();
      open.pop();
      ++log.nodes;
      proven = std::min(proven, process(node, target, eps_box, open));
    }
    while (!open.empty()) {
      proven = std::min(proven, open.top().lb);
      open.pop();
    }
    log.lower = std::min(proven, ub_);
    log.upper = ub_;
    log.status = timeout ? "timeout" : (witness_label_ == target && ub_ < kInf ? "optimal" : "pruned");
    if (!timeout && proven >= eps_box && ub_ == kInf) log.status = "infeasible";
    if (stopped) log.status = "stopped";
    log.seconds = elapsed() - t0;
    if (opt_.log) {
      nlohmann::json j = {{"target", target}, {"status", log.status}, {"nodes", log.nodes},
                          {"seconds", log.seconds}};
      j["lower"] = log.lower < kInf ? nlohmann::json(log.lower) : nlohmann::json(nullptr);
      j["upper"] = log.upper < kInf ? nlohmann::json(log.upper) : nlohmann::json(nullptr);
      *opt_.log << j.dump() << '\n';
    }
    return log;
  }

  /// LP lower bound for one target at radius eps (no branching).
  double root_bound(std::size_t target, double eps) {
    std::vector<double>& lo = box_lo_;
    std::vector<double>& hi = box_hi_;
    box(eps, lo, hi);
    auto nb = propagate_bounds(pwl_, lo, hi, nullptr, method_);
    if (!nb || !check_margins(pwl_, *nb, nullptr, lo, hi, target, symbolic()).possible)
      return kInf;
    NodeLp nl = build_lp(pwl_, *nb, nullptr, target, lo, hi);
    Simplex sx(nl.lp);
    if (!probe(sx, nl, eps).feasible) return kInf;
    double a = 0.0, b = eps;
    while (b - a > opt_.atol / 4) {
      const double mid = 0.5 * (a + b);
      Probe p = probe(sx, nl, mid);
      if (p.feasible) b = std::min(mid, p.dist);
      else a = mid;
    }
    return a;
  }

  double ub_ = kInf;
  std::vector<double> witness_;
  std::size_t witness_label_ = 0;

 private:
  struct Probe {
    bool feasible = false;
    bool known = true;
    std::vector<double> point;  // input coordinates
    std::vector<double> lp;     // full LP solution
    double dist = kInf;
  };

  /// Shrinks the input box with the half-spaces of phase-fixed first-layer
  /// neurons. Returns false when the box becomes empty.
  bool tighten_box(const Phases& phases, std::vector<double>& lo, std::vector<double>& hi) const {
    if (phases.empty()) return true;
    const auto& b = pwl_.blocks.front();
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < b.out; ++i) {
        const Phase ph = phases[0][i];
        if (ph == Phase::kFree) continue;
        // active: w.x + b >= 0, inactive: w.x + b <= 0; written as s (w.x + b) >= 0
        const double sign = ph == Phase::kActive ? 1.0 : -1.0;
        double top = sign * b.bias[i];
        for (auto [j, w] : b.rows[i]) top += std::max(sign * w * lo[j], sign * w * hi[j]);
        for (auto [j, w] : b.rows[i]) {
          const double sw = sign * w;
          const double rest = top - std::max(sw * lo[j], sw * hi[j]);
          const double limit = -rest / sw;  // sw x_j >= -rest
          const double slack = 1e-12 * (1.0 + std::abs(limit));
          if (sw > 0) lo[j] = std::max(lo[j], limit - slack);
          else hi[j] = std::min(hi[j], limit + slack);
          if (lo[j] > hi[j]) return false;
        }
      }
    }
    return true;
  }

  void box(double r, std::vector<double>& lo, std::vector<double>& hi) const {
    lo.resize(x_.size());
    hi.resize(x_.size());
    for (std::size_t i = 0; i < x_.size(); ++i) {
      lo[i] = std::max(0.0, x_[i] - r);
      hi[i] = std::min(1.0, x_[i] + r);
    }
  }

  /// LP feasibility with the inputs in the node box intersected with B(x, d).
  Probe probe(Simplex& sx, const NodeLp& nl, double d) {
    Probe p;
    std::vector<double> lo(x_.size()), hi(x_.size());
    for (std::size_t i = 0; i < x_.size(); ++i) {
      if (!used_[i]) continue;
      lo[i] = std::max(box_lo_[i], x_[i] - d);
      hi[i] = std::min(box_hi_[i], x_[i] + d);
      if (lo[i] > hi[i]) return p;
    }
    for (std::size_t i = 0; i < x_.size(); ++i)
      if (used_[i]) sx.set_var_bounds(i, lo[i], hi[i]);
    LpResult r = sx.solve();
    if (r.status == LpStatus::kIterationLimit) {
      LinearProgram lp = nl.lp;
      for (std::size_t i = 0; i < x_.size(); ++i)
        if (used_[i]) lp.lower[i] = lo[i], lp.upper[i] = hi[i];
      r = simplex_solve(lp);
    }
    if (r.status == LpStatus::kIterationLimit) {
      p.feasible = true;
      p.known = false;
      return p;
    }
    if (r.status == LpStatus::kInfeasible) return p;
    p.feasible = true;
    p.point = x_;
    for (std::size_t i = 0; i < x_.size(); ++i)
      if (used_[i]) p.point[i] = std::clamp(r.x[i], 0.0, 1.0);
    p.dist = linf_distance(p.point, x_);
    p.lp = std::move(r.x);
    return p;
  }

  /// Returns the lower bound proven for the node's region when it is closed,
  /// or +inf when it was split (children carry the bound).
  double process(const Node& node, std::size_t target, double eps_box,
                 std::priority_queue<Node, std::vector<Node>, NodeOrder>& open) {
    const double radius = std::min(eps_box, ub_);
    std::vector<double>& lo = box_lo_;
    std::vector<double>& hi = box_hi_;
    box(radius, lo, hi);
    if (!tighten_box(node.phases, lo, hi)) return radius;
    auto nb = propagate_bounds(pwl_, lo, hi, &node.phases, method_);
    if (!nb) return radius;
    const MarginCheck mc = check_margins(pwl_, *nb, &node.phases, lo, hi, target, symbolic());
    if (!mc.possible) return radius;
    NodeLp nl = build_lp(pwl_, *nb, &node.phases, target, lo, hi);
    Simplex sx(nl.lp);
    const double cap = ub_ < kInf ? std::min(eps_box, cutoff()) : eps_box;
    if (cap < node.lb) return node.lb;
    Probe best = probe(sx, nl, cap);
    if (!best.feasible) return cap;
    double a = node.lb, b = cap;
    if (best.known) {
      offer_lp(best.point, cap);
      b = std::min(b, best.dist);
      while (ub_ < kInf && b - a > opt_.atol / 4 && !out_of_time()) {
        const double mid = 0.5 * (a + b);
        Probe p = probe(sx, nl, mid);
        if (!p.feasible) {
          a = mid;
        } else if (p.known) {
          offer_lp(p.point, mid);
          b = std::min(mid, p.dist);
          best = std::move(p);
        } else {
          break;
        }
      }
    }
    if (ub_ < kInf && a >= cutoff()) return a;

    // Relaxation error at the LP point; none left means the point is exact.
    const Relaxed* pick = nullptr;
    double violation = 1e-9;
    for (const auto& r : nl.relaxed) {
      double v;
      if (best.known) {
        const double y = best.lp[r.y], z = r.z.at(best.lp);
        v = std::min(y / r.u, (y - z) / -r.l);
      } else {
        v = std::min(r.u, -r.l);
      }
      if (v > violation) violation = v, pick = &r;
    }
    if (!pick) return a;
    // Prefer the neuron whose relaxation offset loosens the tightest margin most.
    std::vector<std::vector<double>> offsets;
    auto [w, c0] = margin_form(pwl_, target, mc.tightest);
    linear_upper_bound(pwl_, *nb, &node.phases, lo, hi, w, c0, &offsets);
    double largest = 0.0;
    for (const auto& r : nl.relaxed)
      if (offsets[r.block][r.index] > largest) largest = offsets[r.block][r.index], pick = &r;
    const bool lp_active = best.known && pick->z.at(best.lp) >= 0.0;
    for (Phase ph : {Phase::kActive, Phase::kInactive}) {
      Node child{node.phases, a, node.depth + 1, (ph == Phase::kActive) == lp_active, ++seq_};
      child.phases[pick->block][pick->index] = ph;
      open.push(std::move(child));
    }
    return kInf;
  }

  const Network& net_;
  PwlNet pwl_;
  std::vector<double> x_;
  std::size_t clean_;
  ExactOptions opt_;
  std::chrono::steady_clock::time_point start_;
  std::vector<char> used_;
  std::vector<double> box_lo_, box_hi_;
  std::size_t seq_ = 0;  // input box of the node being processed
  // one hidden layer: interval bounds are already exact per neuron
  BoundMethod method_ = pwl_.hidden_layers() > 1 ? BoundMethod::kSymbolic : BoundMethod::kInterval;
  bool symbolic() const { return method_ == BoundMethod::kSymbolic; }
};

void check_inputs(const Network& net, std::span<const double> x) {
  if (x.size() != net.input_size()) throw std::invalid_argument("input size mismatch");
  for (double v : x)
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("input outside [0,1]");
}

}  // namespace

ExactResult exact_distance(const Network& net, std::span<const double> x,
                           const std::optional<PoolHint>& hint, const ExactOptions& opt) {
  check_inputs(net, x);
  if (!(opt.eps_box > 0.0)) throw std::invalid_argument("eps_box must be positive");
  Solver s(net, x, opt);
  ExactResult res;

  std::vector<double> passes;
  if (hint && hint->witness && hint->witness->size() == x.size() &&
      std::all_of(hint->witness->begin(), hint->witness->end(),
                  [](double v) { return v >= 0.0 && v <= 1.0; }) &&
      s.offer(*hint->witness)) {
    passes.push_back(std::min(1.0, s.ub_ * 1.05));
  } else if (hint && hint->distance > 0.0 && hint->distance < kInf) {
    for (double c : {1.05, 1.25, 1.5, 2.0}) passes.push_back(std::min(1.0, hint->distance * c));
    passes.push_back(opt.eps_box);
  } else {
    passes.push_back(opt.eps_box);
  }

  std::vector<std::size_t> order(net.num_classes());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::vector<double> logits = net.forward(x);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  if (s.ub_ < kInf) {
    auto it = std::find(order.begin(), order.end(), s.witness_label_);
    std::rotate(order.begin(), it, it + 1);
  }

  double lower = kInf;
  bool timeout = false;
  for (std::size_t p = 0; p < passes.size(); ++p) {
    if (p > 0 && (s.ub_ < kInf || passes[p] <= passes[p - 1])) {
      if (s.ub_ < kInf) break;
      continue;
    }
    res.eps_box = passes[p];
    res.targets.clear();
    lower = kInf;
    for (std::size_t t : order) {
      if (t == s.clean()) continue;
      if (timeout || (opt.stop_at_first && s.ub_ < kInf)) {
        res.targets.push_back({t, timeout ? "timeout" : "skipped", 0.0, s.ub_, 0, 0.0});
        lower = 0.0;
        continue;
      }
      TargetLog log = s.run_target(t, res.eps_box);
      timeout = timeout || log.status == "timeout";
      lower = std::min(lower, log.lower);
      res.nodes += log.nodes;
      res.targets.push_back(std::move(log));
    }
    if (timeout) break;
  }

  res.distance = s.ub_;
  res.lower = std::min(lower, s.ub_);
  if (s.ub_ < kInf) {
    res.witness = s.witness_;
    res.witness_label = s.witness_label_;
  }
  if (timeout) {
    res.status = MilpStatus::kTimeout;
    res.tight = is_tight(res.lower, res.distance, opt.atol, opt.rtol);
  } else if (s.ub_ < kInf) {
    res.status = MilpStatus::kOptimal;
    res.tight = is_tight(res.lower, res.distance, opt.atol, opt.rtol);
  } else {
    res.status = MilpStatus::kInfeasible;
    res.lower = res.eps_box;
    res.tight = true;
  }
  return res;
}

LowerBoundResult lower_bound_distance(const Network& net, std::span<const double> x, double eps) {
  check_inputs(net, x);
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  ExactOptions opt;
  Solver s(net, x, opt);
  LowerBoundResult r;
  double lower = kInf;
  for (std::size_t t = 0; t < net.num_classes(); ++t)
    if (t != s.clean()) lower = std::min(lower, s.root_bound(t, eps));
  r.certified = lower == kInf;
  r.lower = r.certified ? eps : lower;
  return r;
}

}  // namespace cav
