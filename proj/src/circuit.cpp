#include "cav/circuit.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace cav {

namespace {

Expr combine(const Expr& a, double ka, const Expr& b, double kb) {
  Expr out;
  out.constant = ka * a.constant + kb * b.constant;
  std::map<std::size_t, double> acc;
  for (auto [id, w] : a.terms) acc[id] += ka * w;
  for (auto [id, w] : b.terms) acc[id] += kb * w;
  for (auto [id, w] : acc)
    if (w != 0.0) out.terms.emplace_back(id, w);
  return out;
}

}  // namespace

Expr operator+(const Expr& a, const Expr& b) { return combine(a, 1.0, b, 1.0); }
Expr operator-(const Expr& a, const Expr& b) { return combine(a, 1.0, b, -1.0); }
Expr operator-(const Expr& a) { return combine(a, -1.0, Expr{}, 0.0); }
Expr operator*(double k, const Expr& a) { return combine(a, k, Expr{}, 0.0); }
Expr operator+(const Expr& a, double c) { return a + Circuit::constant(c); }
Expr operator-(const Expr& a, double c) { return a + Circuit::constant(-c); }
Expr operator-(double c, const Expr& a) { return Circuit::constant(c) - a; }

Circuit::Circuit(std::size_t num_inputs, bool nonnegative_inputs)
    : num_inputs_(num_inputs), nonnegative_inputs_(nonnegative_inputs), units_(num_inputs) {
  if (num_inputs == 0) throw std::invalid_argument("circuit needs at least one input");
}

Expr Circuit::input(std::size_t i) const {
  if (i >= num_inputs_) throw std::out_of_range("circuit input index");
  return Expr{0.0, {{i, 1.0}}};
}

Expr Circuit::relu(const Expr& e) {
  if (e.is_constant()) return constant(std::max(0.0, e.constant));
  std::size_t level = 0;
  for (auto [id, w] : e.terms) {
    if (id >= units_.size()) throw std::out_of_range("expression references unknown unit");
    level = std::max(level, units_[id].level);
  }
  units_.push_back(Unit{e, level + 1});
  return Expr{0.0, {{units_.size() - 1, 1.0}}};
}

std::size_t Circuit::depth() const {
  std::size_t d = 0;
  for (const Unit& u : units_) d = std::max(d, u.level);
  return d;
}

double Circuit::eval_expr(const Expr& e, const std::vector<double>& vals) const {
  double s = e.constant;
  for (auto [id, w] : e.terms) s += w * vals[id];
  return s;
}

std::vector<double> Circuit::evaluate(std::span<const double> x) const {
  if (x.size() != num_inputs_) throw std::invalid_argument("circuit input size mismatch");
  std::vector<double> vals(units_.size());
  std::copy(x.begin(), x.end(), vals.begin());
  for (std::size_t u = num_inputs_; u < units_.size(); ++u)
    vals[u] = std::max(0.0, eval_expr(units_[u].arg, vals));
  std::vector<double> out;
  for (const Expr& e : outputs_) out.push_back(eval_expr(e, vals));
  return out;
}

std::vector<Layer> Circuit::compile_layers() const {
  if (outputs_.empty()) throw std::logic_error("circuit has no outputs");
  const std::size_t n_units = units_.size();
  const std::size_t L = depth();

  // last[u]: highest layer index at which unit u must be available.
  std::vector<std::size_t> last(n_units, 0);
  for (std::size_t u = 0; u < n_units; ++u) last[u] = units_[u].level;
  for (std::size_t u = num_inputs_; u < n_units; ++u)
    for (auto [id, w] : units_[u].arg.terms) last[id] = std::max(last[id], units_[u].level - 1);
  for (const Expr& e : outputs_)
    for (auto [id, w] : e.terms) last[id] = L;

  // A unit's value at layer k is a combination of that layer's slots.
  using Rep = std::vector<std::pair<std::size_t, double>>;
  std::vector<Rep> rep(n_units);
  for (std::size_t i = 0; i < num_inputs_; ++i) rep[i] = {{i, 1.0}};
  std::size_t width = num_inputs_;

  auto express = [&](const Expr& e, std::vector<double>& row) {
    for (auto [id, w] : e.terms)
      for (auto [slot, c] : rep[id]) row[slot] += w * c;
  };

  std::vector<Layer> layers;
  for (std::size_t k = 1; k <= L; ++k) {
    std::vector<std::vector<double>> rows;
    std::vector<double> bias;
    std::vector<Rep> next(n_units);
    for (std::size_t u = 0; u < n_units; ++u) {
      const Unit& unit = units_[u];
      if (unit.level == k) {
        std::vector<double> row(width, 0.0);
        express(unit.arg, row);
        rows.push_back(std::move(row));
        bias.push_back(unit.arg.constant);
        next[u] = {{rows.size() - 1, 1.0}};
      } else if (unit.level < k && last[u] >= k) {
        std::vector<double> row(width, 0.0);
        for (auto [slot, c] : rep[u]) row[slot] += c;
        const bool signed_input = u < num_inputs_ && !nonnegative_inputs_;
        if (signed_input) {
          std::vector<double> neg(width);
          for (std::size_t j = 0; j < width; ++j) neg[j] = -row[j];
          rows.push_back(std::move(row));
          bias.push_back(0.0);
          rows.push_back(std::move(neg));
          bias.push_back(0.0);
          next[u] = {{rows.size() - 2, 1.0}, {rows.size() - 1, -1.0}};
        } else {
          rows.push_back(std::move(row));
          bias.push_back(0.0);
          next[u] = {{rows.size() - 1, 1.0}};
        }
      }
    }
    Dense d;
    d.out = rows.size();
    d.in = width;
    d.bias = bias;
    d.weights.reserve(d.out * d.in);
    for (auto& r : rows) d.weights.insert(d.weights.end(), r.begin(), r.end());
    layers.emplace_back(std::move(d));
    layers.emplace_back(Relu{});
    rep = std::move(next);
    width = rows.size();
  }
  Dense out;
  out.out = outputs_.size();
  out.in = width;
  for (const Expr& e : outputs_) {
    std::vector<double> row(width, 0.0);
    express(e, row);
    out.weights.insert(out.weights.end(), row.begin(), row.end());
    out.bias.push_back(e.constant);
  }
  layers.emplace_back(std::move(out));
  return layers;
}

Network Circuit::compile(Shape input_shape) const {
  if (shape_size(input_shape) != num_inputs_)
    throw std::invalid_argument("input shape does not match circuit inputs");
  std::vector<Layer> layers;
  if (input_shape.size() != 1) layers.emplace_back(Flatten{});
  for (Layer& l : compile_layers()) layers.push_back(std::move(l));
  return Network(std::move(input_shape), std::move(layers), outputs_.size());
}

}  // namespace cav
