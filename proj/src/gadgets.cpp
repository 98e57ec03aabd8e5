#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cav/gadgets.hpp"

namespace cav {

struct MinorantExpr::Node {
  enum class Kind { kInput, kSpace, kSum, kScale, kRelu } kind;
  double value = 0.0;  // mu for kSpace, alpha for kScale
  std::shared_ptr<const Node> a, b;
};

MinorantExpr MinorantExpr::input() {
  return MinorantExpr(std::make_shared<const Node>(Node{Node::Kind::kInput, 0.0, nullptr, nullptr}));
}
MinorantExpr MinorantExpr::space(double mu) {
  if (!(mu > 0.0)) throw std::invalid_argument("minorant must be positive");
  return MinorantExpr(std::make_shared<const Node>(Node{Node::Kind::kSpace, mu, nullptr, nullptr}));
}
MinorantExpr MinorantExpr::sum(MinorantExpr a, MinorantExpr b) {
  return MinorantExpr(
      std::make_shared<const Node>(Node{Node::Kind::kSum, 0.0, a.node_, b.node_}));
}
MinorantExpr MinorantExpr::scale(double alpha, MinorantExpr a) {
  if (alpha == 0.0) throw std::invalid_argument("scaling by 0 collapses the minorant");
  return MinorantExpr(std::make_shared<const Node>(Node{Node::Kind::kScale, alpha, a.node_, nullptr}));
}
MinorantExpr MinorantExpr::relu(MinorantExpr a) {
  return MinorantExpr(std::make_shared<const Node>(Node{Node::Kind::kRelu, 0.0, a.node_, nullptr}));
}

namespace {
double propagate(const MinorantExpr::Node& n, double mu_in) {
  using K = MinorantExpr::Node::Kind;
  switch (n.kind) {
    case K::kInput: return mu_in;
    case K::kSpace: return n.value;
    case K::kSum: return std::min(propagate(*n.a, mu_in), propagate(*n.b, mu_in));
    case K::kScale: return std::abs(n.value) * propagate(*n.a, mu_in);
    case K::kRelu: return propagate(*n.a, mu_in);
  }
  return mu_in;
}
}  // namespace

double propagate_minorant(const MinorantExpr& expr, double mu_in) {
  if (!(mu_in > 0.0)) throw std::invalid_argument("minorant must be positive");
  return propagate(*expr.node_, mu_in);
}

Gadgets::Gadgets(Circuit& circuit, double mu, LogicFamily family, bool clamp_steps)
    : c_(circuit), mu_(mu), family_(family), clamp_(clamp_steps) {
  if (!(mu > 0.0)) throw std::invalid_argument("gadget mu must be positive");
}

Expr Gadgets::max(const Expr& x, const Expr& y) { return c_.relu(x - y) + y; }
Expr Gadgets::min(const Expr& x, const Expr& y) { return x - c_.relu(x - y); }

Expr Gadgets::step0(const Expr& x) {
  if (clamp_) return 1.0 - c_.relu(1.0 - c_.relu((1.0 / mu_) * x));
  return (1.0 / mu_) * (c_.relu(x) - c_.relu(x - mu_));
}

Expr Gadgets::step1(const Expr& x) {
  if (clamp_) return step0(x + mu_);
  return (1.0 / mu_) * (c_.relu(x + mu_) - c_.relu(x));
}

Expr Gadgets::not_(const Expr& x) { return 1.0 - x; }

Expr Gadgets::and_(const Expr& x, const Expr& y) {
  if (family_ == LogicFamily::kMinMax) return min(x, y);
  return step1(x + y - 2.0);
}

Expr Gadgets::or_(const Expr& x, const Expr& y) {
  if (family_ == LogicFamily::kMinMax) return max(x, y);
  return step1(x + y - 1.0);
}

Expr Gadgets::if_(const Expr& a, const Expr& b, const Expr& c) {
  return or_(and_(not_(a), b), and_(a, c));
}

Expr Gadgets::geq(const Expr& x, double k) { return step1(x - k); }
Expr Gadgets::gt(const Expr& x, double k) { return step0(x - k); }
Expr Gadgets::leq(const Expr& x, double k) { return not_(gt(x, k)); }
Expr Gadgets::lt(const Expr& x, double k) { return not_(geq(x, k)); }
Expr Gadgets::eq(const Expr& x, double k) { return and_(geq(x, k), leq(x, k)); }
Expr Gadgets::open(const Expr& x, double a, double b) { return and_(gt(x, a), lt(x, b)); }

Expr Gadgets::and_n(std::span<const Expr> xs) {
  if (xs.empty()) return Circuit::constant(1.0);
  Expr acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = and_(acc, xs[i]);
  return acc;
}

Expr Gadgets::or_n(std::span<const Expr> xs) {
  if (xs.empty()) return Circuit::constant(0.0);
  Expr acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = or_(acc, xs[i]);
  return acc;
}

Expr Gadgets::max_n(std::span<const Expr> xs) {
  if (xs.empty()) throw std::invalid_argument("max of an empty list");
  Expr acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = max(acc, xs[i]);
  return acc;
}

std::vector<double> NetFragment::evaluate(std::span<const double> x) const {
  if (x.size() != inputs) throw std::invalid_argument("fragment input size mismatch");
  std::vector<double> cur(x.begin(), x.end());
  for (const Layer& layer : layers) {
    if (const auto* d = std::get_if<Dense>(&layer)) {
      std::vector<double> next(d->out);
      for (std::size_t i = 0; i < d->out; ++i) {
        double s = d->bias[i];
        for (std::size_t j = 0; j < d->in; ++j) s += d->weights[i * d->in + j] * cur[j];
        next[i] = s;
      }
      cur.swap(next);
    } else if (std::holds_alternative<Relu>(layer)) {
      for (double& v : cur) v = std::max(0.0, v);
    }
  }
  return cur;
}

NetFragment make_gadget(const std::string& name, double mu, LogicFamily family,
                        std::vector<double> k, std::size_t arity) {
  auto need_k = [&](std::size_t n) {
    if (k.size() != n) throw std::invalid_argument(name + " needs " + std::to_string(n) + " constant(s)");
  };
  std::size_t inputs = 1;
  if (name == "max" || name == "min" || name == "and" || name == "or") inputs = 2;
  else if (name == "if") inputs = 3;
  else if (name == "and_n" || name == "or_n" || name == "max_n") inputs = arity;
  if (inputs == 0) throw std::invalid_argument("gadget arity must be positive");

  Circuit c(inputs);
  Gadgets g(c, mu, family);
  std::vector<Expr> in;
  for (std::size_t i = 0; i < inputs; ++i) in.push_back(c.input(i));
  Expr out;
  if (name == "max") out = g.max(in[0], in[1]);
  else if (name == "min") out = g.min(in[0], in[1]);
  else if (name == "step0") out = g.step0(in[0]);
  else if (name == "step1") out = g.step1(in[0]);
  else if (name == "not") out = g.not_(in[0]);
  else if (name == "and") out = g.and_(in[0], in[1]);
  else if (name == "or") out = g.or_(in[0], in[1]);
  else if (name == "if") out = g.if_(in[0], in[1], in[2]);
  else if (name == "geq") need_k(1), out = g.geq(in[0], k[0]);
  else if (name == "gt") need_k(1), out = g.gt(in[0], k[0]);
  else if (name == "leq") need_k(1), out = g.leq(in[0], k[0]);
  else if (name == "lt") need_k(1), out = g.lt(in[0], k[0]);
  else if (name == "eq") need_k(1), out = g.eq(in[0], k[0]);
  else if (name == "open") need_k(2), out = g.open(in[0], k[0], k[1]);
  else if (name == "and_n") out = g.and_n(in);
  else if (name == "or_n") out = g.or_n(in);
  else if (name == "max_n") out = g.max_n(in);
  else throw std::invalid_argument("unknown gadget " + name);
  c.add_output(out);
  return NetFragment{name, inputs, 1, mu, c.compile_layers()};
}

}  // namespace cav
