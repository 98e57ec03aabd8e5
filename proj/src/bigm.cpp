#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <queue>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cav/milp.hpp"

namespace cav {

std::string to_string(MilpStatus s) {
  switch (s) {
    case MilpStatus::kOptimal: return "optimal";
    case MilpStatus::kInfeasible: return "infeasible";
    case MilpStatus::kTimeout: return "timeout";
  }
  return "?";
}

bool is_tight(double lower, double upper, double atol, double rtol) {
  if (upper == kInf) return lower == kInf;
  return upper - lower <= std::max(atol, rtol * std::abs(upper));
}

void MilpModel::validate() const {
  lp.validate();
  if (distance_var >= lp.num_vars) throw std::invalid_argument("bad distance variable");
  for (std::size_t b : binaries)
    if (b >= lp.num_vars || lp.lower[b] < 0.0 || lp.upper[b] > 1.0)
      throw std::invalid_argument("bad binary variable");
  for (std::size_t v : input_vars)
    if (v >= lp.num_vars) throw std::invalid_argument("bad input variable");
}

Tensor MilpModel::decode(std::span<const double> solution, const Shape& shape) const {
  if (solution.size() != lp.num_vars) throw std::invalid_argument("solution size mismatch");
  if (shape_size(shape) != input_vars.size()) throw std::invalid_argument("shape mismatch");
  Tensor t(shape);
  for (std::size_t i = 0; i < input_vars.size(); ++i) t[i] = solution[input_vars[i]];
  return t;
}

MilpModel encode_bigM(const Network& net, std::span<const double> x, double eps_box,
                      std::size_t target) {
  if (x.size() != net.input_size()) throw std::invalid_argument("input size mismatch");
  if (target >= net.num_classes()) throw std::invalid_argument("target out of range");
  if (!(eps_box > 0.0)) throw std::invalid_argument("eps_box must be positive");
  if (net.classify(x) == target) throw std::invalid_argument("target equals the clean label");

  const PwlNet pwl = linearize(net);
  const std::size_t n = x.size();
  std::vector<double> lo(n), hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = std::max(0.0, x[i] - eps_box);
    hi[i] = std::min(1.0, x[i] + eps_box);
  }
  const NeuronBounds nb = *propagate_bounds(pwl, lo, hi);

  MilpModel m;
  LinearProgram& lp = m.lp;
  for (std::size_t i = 0; i < n; ++i) {
    m.input_vars.push_back(lp.add_var(lo[i], hi[i]));
    lp.names.push_back("x" + std::to_string(i));
  }
  m.distance_var = lp.add_var(0.0, eps_box, 1.0);
  lp.names.push_back("d");
  for (std::size_t i = 0; i < n; ++i) {
    lp.add_row({{m.input_vars[i], 1.0}, {m.distance_var, -1.0}}, Sense::kLe, x[i]);
    lp.add_row({{m.input_vars[i], 1.0}, {m.distance_var, 1.0}}, Sense::kGe, x[i]);
  }

  // value of each current-layer unit: a variable or the constant 0
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> cur = m.input_vars;
  std::vector<std::vector<std::pair<std::size_t, double>>> logits;
  std::vector<double> logit_bias;
  for (std::size_t k = 0; k < pwl.blocks.size(); ++k) {
    const auto& b = pwl.blocks[k];
    const bool hidden = k + 1 < pwl.blocks.size();
    std::vector<std::size_t> next(b.out, kNone);
    for (std::size_t i = 0; i < b.out; ++i) {
      std::vector<std::pair<std::size_t, double>> z;
      for (auto [j, w] : b.rows[i])
        if (cur[j] != kNone) z.emplace_back(cur[j], w);
      const double c = b.bias[i];
      if (!hidden) {
        logits.push_back(std::move(z));
        logit_bias.push_back(c);
        continue;
      }
      const double l = nb.lower[k][i], u = nb.upper[k][i];
      if (u <= kStableTol) continue;
      const std::string tag = std::to_string(k) + "_" + std::to_string(i);
      const std::size_t y = lp.add_var(0.0, std::max(u, 0.0));
      lp.names.push_back("y" + tag);
      next[i] = y;
      auto row = z;
      for (auto& t : row) t.second = -t.second;
      row.emplace_back(y, 1.0);  // y - z
      if (l >= -kStableTol) {
        lp.add_row(row, Sense::kEq, c);
        continue;
      }
      const std::size_t a = lp.add_var(0.0, 1.0);
      lp.names.push_back("a" + tag);
      m.binaries.push_back(a);
      lp.add_row(row, Sense::kGe, c);                  // y >= z
      lp.add_row({{y, 1.0}, {a, -u}}, Sense::kLe, 0.0);  // y <= u a
      row.emplace_back(a, -l);                         // y <= z - l (1 - a)
      lp.add_row(row, Sense::kLe, c - l);
    }
    cur = std::move(next);
  }
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j == target) continue;
    std::vector<std::pair<std::size_t, double>> row = logits[target];
    for (auto [v, w] : logits[j]) row.emplace_back(v, -w);
    const double margin = j < target ? kTieMargin : kHigherMargin;
    lp.add_row(std::move(row), Sense::kGe, margin + logit_bias[j] - logit_bias[target]);
  }
  m.validate();
  return m;
}

namespace {

struct BnbNode {
  std::vector<std::pair<std::size_t, double>> fixes;  // binary -> 0/1
  double lb;
  std::size_t depth;
};

struct NodeOrder {
  bool operator()(const BnbNode& a, const BnbNode& b) const {
    if (a.lb != b.lb) return a.lb > b.lb;
    return a.depth < b.depth;
  }
};

}  // namespace

MilpResult branch_and_bound(const MilpModel& model, const BnbOptions& opt) {
  model.validate();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  MilpResult res;
  if (opt.warm_start) res.upper = *opt.warm_start;
  auto gap = [&] { return std::max(opt.atol, opt.rtol * std::abs(res.upper)); };

  std::priority_queue<BnbNode, std::vector<BnbNode>, NodeOrder> open;
  open.push({{}, -kInf, 0});
  bool timed_out = false;
  while (!open.empty()) {
    if (res.upper < kInf && open.top().lb >= res.upper - gap()) break;
    if (elapsed() > opt.time_limit) {
      timed_out = true;
      break;
    }
    BnbNode node = open.top();
    open.pop();
    ++res.nodes;
    LinearProgram lp = model.lp;
    for (auto [v, val] : node.fixes) lp.lower[v] = lp.upper[v] = val;
    const LpResult r = simplex_solve(lp);
    const bool feasible = r.status == LpStatus::kOptimal;
    if (opt.log) {
      nlohmann::json line = {{"node", res.nodes},
                             {"depth", node.depth},
                             {"lb", feasible ? nlohmann::json(r.objective) : nlohmann::json("infeasible")},
                             {"ub", res.upper < kInf ? nlohmann::json(res.upper) : nlohmann::json(nullptr)}};
      *opt.log << line.dump() << '\n';
    }
    if (!feasible) continue;
    if (res.upper < kInf && r.objective >= res.upper - gap()) continue;
    std::size_t branch = model.lp.num_vars;
    double best = 1e-6;
    for (std::size_t b : model.binaries) {
      double f = std::min(r.x[b], 1.0 - r.x[b]);
      if (f > best) best = f, branch = b;
    }
    if (branch == model.lp.num_vars) {
      if (r.objective < res.upper) {
        res.upper = r.objective;
        res.solution = r.x;
        for (std::size_t b : model.binaries) res.solution[b] = std::round(res.solution[b]);
      }
      continue;
    }
    for (double v : {0.0, 1.0}) {
      BnbNode child{node.fixes, r.objective, node.depth + 1};
      child.fixes.emplace_back(branch, v);
      open.push(std::move(child));
    }
  }
  if (timed_out) {
    res.status = MilpStatus::kTimeout;
    res.lower = open.empty() ? res.upper : std::min(open.top().lb, res.upper);
    return res;
  }
  if (res.upper == kInf) {
    res.status = MilpStatus::kInfeasible;
    res.lower = kInf;
    return res;
  }
  res.status = MilpStatus::kOptimal;
  res.lower = open.empty() ? res.upper : std::min(open.top().lb, res.upper);
  return res;
}

}  // namespace cav
