#include <cstdlib>
#include <sstream>
#include <stdexcept>

#include "cav/gadgets.hpp"
#include "cav/rng.hpp"

namespace cav {

void Cnf3Formula::validate() const {
  if (num_vars == 0) throw std::invalid_argument("formula needs at least one variable");
  for (const auto& cl : clauses)
    for (int lit : cl)
      if (lit == 0 || static_cast<std::size_t>(std::abs(lit)) > num_vars)
        throw std::invalid_argument("literal " + std::to_string(lit) + " out of range");
}

bool Cnf3Formula::eval(std::uint64_t a) const {
  for (const auto& cl : clauses) {
    bool sat = false;
    for (int lit : cl) {
      bool v = (a >> (std::abs(lit) - 1)) & 1U;
      if (lit > 0 ? v : !v) {
        sat = true;
        break;
      }
    }
    if (!sat) return false;
  }
  return true;
}

bool Cnf3Formula::eval(std::span<const double> bools) const {
  if (bools.size() != num_vars) throw std::invalid_argument("assignment size mismatch");
  std::uint64_t a = 0;
  for (std::size_t i = 0; i < bools.size(); ++i)
    if (bools[i] > 0.5) a |= std::uint64_t{1} << i;
  return eval(a);
}

std::string Cnf3Formula::to_dimacs() const {
  std::ostringstream out;
  out << "p cnf " << num_vars << ' ' << clauses.size() << "\n";
  for (const auto& cl : clauses) out << cl[0] << ' ' << cl[1] << ' ' << cl[2] << " 0\n";
  return out.str();
}

Cnf3Formula parse_dimacs(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Cnf3Formula f;
  bool header = false;
  std::size_t declared = 0;
  std::vector<int> cur;
  auto flush = [&] {
    if (cur.empty()) throw FormatError("empty clause");
    if (cur.size() > 3) throw FormatError("clause with more than 3 literals");
    while (cur.size() < 3) cur.push_back(cur.back());
    f.clauses.push_back({cur[0], cur[1], cur[2]});
    cur.clear();
  };
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok) || tok[0] == 'c') continue;
    if (tok == "%") break;
    if (tok == "p") {
      std::string fmt;
      long long n = -1, m = -1;
      if (header || !(ls >> fmt >> n >> m) || fmt != "cnf" || n <= 0 || m < 0)
        throw FormatError("bad problem line: " + line);
      f.num_vars = static_cast<std::size_t>(n);
      declared = static_cast<std::size_t>(m);
      header = true;
      continue;
    }
    if (!header) throw FormatError("clause before problem line");
    do {
      char* end = nullptr;
      long v = std::strtol(tok.c_str(), &end, 10);
      if (*end != '\0') throw FormatError("bad literal: " + tok);
      if (v == 0) flush();
      else cur.push_back(static_cast<int>(v));
    } while (ls >> tok);
  }
  if (!header) throw FormatError("missing problem line");
  if (!cur.empty()) flush();
  if (f.clauses.size() != declared)
    throw FormatError("clause count " + std::to_string(f.clauses.size()) + " != declared " +
                      std::to_string(declared));
  try {
    f.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return f;
}

Cnf3Formula random_cnf3(std::size_t num_vars, std::size_t num_clauses, std::uint64_t seed) {
  if (num_vars == 0) throw std::invalid_argument("formula needs at least one variable");
  CounterRng rng(seed, 0xC0F);
  Cnf3Formula f;
  f.num_vars = num_vars;
  for (std::size_t c = 0; c < num_clauses; ++c) {
    std::array<int, 3> cl{};
    for (int j = 0; j < 3; ++j) {
      int v;
      bool fresh;
      do {  // distinct variables when there are enough of them
        v = static_cast<int>(rng.below(num_vars)) + 1;
        fresh = true;
        for (int p = 0; p < j; ++p) fresh = fresh && std::abs(cl[p]) != v;
      } while (!fresh && num_vars >= 3);
      cl[j] = rng.below(2) ? v : -v;
    }
    f.clauses.push_back(cl);
  }
  return f;
}

std::optional<std::uint64_t> brute_force_sat(const Cnf3Formula& f) {
  f.validate();
  if (f.num_vars > 24) throw std::invalid_argument("brute_force_sat limited to 24 variables");
  const std::uint64_t total = std::uint64_t{1} << f.num_vars;
  for (std::uint64_t a = 0; a < total; ++a)
    if (f.eval(a)) return a;
  return std::nullopt;
}

std::optional<std::uint64_t> brute_force_exists_forall(const Cnf3Formula& f, Split split) {
  f.validate();
  if (split.n_x + split.n_y != f.num_vars)
    throw std::invalid_argument("split does not cover all variables");
  if (f.num_vars > 20) throw std::invalid_argument("exists-forall oracle limited to 20 variables");
  const std::uint64_t nx = std::uint64_t{1} << split.n_x, ny = std::uint64_t{1} << split.n_y;
  for (std::uint64_t x = 0; x < nx; ++x) {
    bool all_false = true;
    for (std::uint64_t y = 0; y < ny && all_false; ++y)
      all_false = !f.eval(x | (y << split.n_x));
    if (all_false) return x;
  }
  return std::nullopt;
}

Expr compile_cnf3(Gadgets& g, const Cnf3Formula& f, std::span<const Expr> vars) {
  f.validate();
  if (vars.size() != f.num_vars) throw std::invalid_argument("one expression per variable needed");
  std::vector<Expr> clauses;
  for (const auto& cl : f.clauses) {
    std::vector<Expr> lits;
    for (int lit : cl) {
      const Expr& v = vars[std::abs(lit) - 1];
      lits.push_back(lit > 0 ? v : g.not_(v));
    }
    clauses.push_back(g.or_n(lits));
  }
  return g.and_n(clauses);
}

NetFragment compile_cnf3(const Cnf3Formula& f, double mu, LogicFamily family) {
  f.validate();
  Circuit c(f.num_vars);
  Gadgets g(c, mu, family);
  std::vector<Expr> vars;
  for (std::size_t i = 0; i < f.num_vars; ++i) vars.push_back(c.input(i));
  c.add_output(compile_cnf3(g, f, vars));
  return NetFragment{"cnf3", f.num_vars, 1, mu, c.compile_layers()};
}

}  // namespace cav
