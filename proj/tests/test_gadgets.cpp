#include <doctest.h>

#include <cmath>
#include <functional>

#include "cav/gadgets.hpp"
#include "helpers.hpp"

using namespace cav;
using namespace cav::testing;

namespace {

constexpr double kMu = 1.0 / 256.0;  // dyadic, so k*mu grids are exact
const LogicFamily kFamilies[] = {LogicFamily::kStep, LogicFamily::kMinMax};

double eval1(const NetFragment& f, std::vector<double> x) { return f.evaluate(x)[0]; }

bool clause_eval(const Cnf3Formula& f, std::uint64_t a) {
  bool all = true;
  for (const auto& cl : f.clauses) {
    bool any = false;
    for (int lit : cl) any = any || (((a >> (std::abs(lit) - 1)) & 1) == (lit > 0 ? 1u : 0u));
    all = all && any;
  }
  return all;
}

}  // namespace

TEST_CASE("minorant propagation rules") {
  using M = MinorantExpr;
  CHECK(propagate_minorant(M::sum(M::input(), M::input()), 1.0 / 255) == 1.0 / 255);
  CHECK(propagate_minorant(M::scale(2.0, M::input()), 0.5) == 1.0);
  CHECK(propagate_minorant(M::relu(M::sum(M::scale(3.0, M::space(1.0 / 3)), M::space(1.0))), 0.1) ==
        doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(M::scale(0.0, M::input()), std::invalid_argument);
  CHECK_THROWS_AS(propagate_minorant(M::input(), 0.0), std::invalid_argument);

  CounterRng rng(4);
  for (int rep = 0; rep < 200; ++rep) {
    double mu = rng.uniform(1e-3, 1.0);
    M e = M::input();
    for (int d = 0; d < 6; ++d) {
      switch (rng.below(3)) {
        case 0: e = M::sum(e, M::input()); break;
        case 1: e = M::scale(rng.uniform(0.1, 1.0) * (rng.below(2) ? 1 : -1), e); break;
        default: e = M::relu(e);
      }
    }
    double out = propagate_minorant(e, mu);
    CHECK(out > 0.0);
    CHECK(out <= mu);
  }
}

TEST_CASE("step gadgets on the mu grid") {
  for (bool clamp : {false, true}) {
    Circuit c(1);
    Gadgets g(c, kMu, LogicFamily::kStep, clamp);
    c.add_output(g.step0(c.input(0)));
    c.add_output(g.step1(c.input(0)));
    std::vector<double> s0, s1;
    for (int k : {-1, 0, 1, 2}) {
      auto y = c.evaluate(std::vector<double>{k * kMu});
      s0.push_back(y[0]);
      s1.push_back(y[1]);
    }
    CHECK(s0 == std::vector<double>{0, 0, 1, 1});
    CHECK(s1 == std::vector<double>{0, 1, 1, 1});
  }
}

TEST_CASE("clamp and difference forms of the steps agree everywhere") {
  Circuit a(1), b(1);
  Gadgets ga(a, 0.1, LogicFamily::kStep, true), gb(b, 0.1, LogicFamily::kStep, false);
  a.add_output(ga.step0(a.input(0)));
  a.add_output(ga.step1(a.input(0)));
  b.add_output(gb.step0(b.input(0)));
  b.add_output(gb.step1(b.input(0)));
  for (double x = -0.3; x <= 0.3; x += 0.0137) {
    auto ya = a.evaluate(std::vector<double>{x}), yb = b.evaluate(std::vector<double>{x});
    CHECK(ya[0] == doctest::Approx(yb[0]).epsilon(1e-12));
    CHECK(ya[1] == doctest::Approx(yb[1]).epsilon(1e-12));
  }
}

TEST_CASE("Boolean gadgets match their truth tables") {
  for (LogicFamily fam : kFamilies) {
    auto g_and = make_gadget("and", kMu, fam), g_or = make_gadget("or", kMu, fam);
    auto g_not = make_gadget("not", kMu, fam), g_if = make_gadget("if", kMu, fam);
    for (int a = 0; a < 2; ++a) {
      CHECK(eval1(g_not, {double(a)}) == 1 - a);
      for (int b = 0; b < 2; ++b) {
        CHECK(eval1(g_and, {double(a), double(b)}) == (a && b));
        CHECK(eval1(g_or, {double(a), double(b)}) == (a || b));
        for (int c = 0; c < 2; ++c) CHECK(eval1(g_if, {double(a), double(b), double(c)}) == (a ? c : b));
      }
    }
    for (std::size_t n = 1; n <= 6; ++n) {
      auto g_andn = make_gadget("and_n", kMu, fam, {}, n), g_orn = make_gadget("or_n", kMu, fam, {}, n);
      for (std::uint64_t m = 0; m < (1u << n); ++m) {
        std::vector<double> x(n);
        for (std::size_t i = 0; i < n; ++i) x[i] = (m >> i) & 1;
        CHECK(eval1(g_andn, x) == (m == (1u << n) - 1));
        CHECK(eval1(g_orn, x) == (m != 0));
      }
    }
  }
}

TEST_CASE("max gadgets") {
  auto g = make_gadget("max", kMu);
  CHECK(eval1(g, {-2.0, 5.0}) == 5.0);
  CHECK(eval1(g, {5.0, -2.0}) == 5.0);
  auto gm = make_gadget("max_n", kMu, LogicFamily::kMinMax, {}, 5);
  CounterRng rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> x(5);
    for (double& v : x) v = static_cast<double>(static_cast<int>(rng.below(200)) - 100) * kMu;
    CHECK(eval1(gm, x) == *std::max_element(x.begin(), x.end()));
  }
}

TEST_CASE("comparison gadgets match their definitions on the threshold grid") {
  for (LogicFamily fam : kFamilies) {
    for (double k : {0.0, 0.25, 0.5, 1.0}) {
      auto geq = make_gadget("geq", kMu, fam, {k}), gt = make_gadget("gt", kMu, fam, {k});
      auto leq = make_gadget("leq", kMu, fam, {k}), lt = make_gadget("lt", kMu, fam, {k});
      auto eq = make_gadget("eq", kMu, fam, {k});
      for (int j = -300; j <= 300; ++j) {
        double x = k + j * kMu;
        CHECK(eval1(geq, {x}) == (x >= k));
        CHECK(eval1(gt, {x}) == (x > k));
        CHECK(eval1(leq, {x}) == (x <= k));
        CHECK(eval1(lt, {x}) == (x < k));
        CHECK(eval1(eq, {x}) == (x == k));
      }
    }
    auto open = make_gadget("open", kMu, fam, {0.25, 0.5});
    for (int j = -10; j <= 300; ++j) {
      double x = j * kMu;
      CHECK(eval1(open, {x}) == (x > 0.25 && x < 0.5));
    }
  }
}

TEST_CASE("compiled circuits equal direct evaluation") {
  CounterRng rng(8);
  for (int rep = 0; rep < 30; ++rep) {
    Circuit c(3, rep % 2 == 0);
    std::vector<Expr> pool{c.input(0), c.input(1), c.input(2)};
    for (int u = 0; u < 12; ++u) {
      Expr e = Circuit::constant(rng.uniform(-1, 1));
      for (int t = 0; t < 2; ++t) e = e + rng.uniform(-2, 2) * pool[rng.below(pool.size())];
      pool.push_back(c.relu(e));
    }
    c.add_output(pool.back() - pool[1]);
    c.add_output(pool[pool.size() - 2] + pool[0]);
    Network net = c.compile({3});
    CHECK(c.depth() + 1 == std::count_if(net.layers().begin(), net.layers().end(),
                                         [](const Layer& l) { return std::holds_alternative<Dense>(l); }));
    for (int s = 0; s < 20; ++s) {
      auto x = random_vec(rng, 3, rep % 2 == 0 ? 0.0 : -1.0, 1.0);
      auto a = net.forward(x), b = c.evaluate(x);
      CHECK(a[0] == doctest::Approx(b[0]).epsilon(1e-12));
      CHECK(a[1] == doctest::Approx(b[1]).epsilon(1e-12));
    }
  }
}

TEST_CASE("compile_cnf3 truth tables") {
  Cnf3Formula single{1, {{1, 1, 1}}};
  auto fs = compile_cnf3(single, kMu);
  CHECK(eval1(fs, {0.0}) == 0.0);
  CHECK(eval1(fs, {1.0}) == 1.0);

  Cnf3Formula two{3, {{1, -2, 3}, {-1, 2, 3}}};
  Cnf3Formula unsat{3, {}};
  for (int s = 0; s < 8; ++s)
    unsat.clauses.push_back({s & 1 ? 1 : -1, s & 2 ? 2 : -2, s & 4 ? 3 : -3});
  for (LogicFamily fam : kFamilies) {
    auto f2 = compile_cnf3(two, kMu, fam), fu = compile_cnf3(unsat, kMu, fam);
    for (std::uint64_t a = 0; a < 8; ++a) {
      std::vector<double> x{double(a & 1), double((a >> 1) & 1), double((a >> 2) & 1)};
      CHECK(eval1(f2, x) == clause_eval(two, a));
      CHECK(eval1(fu, x) == 0.0);
    }
  }

  for (int rep = 0; rep < 20; ++rep) {
    std::size_t n = 1 + rep % 8;
    Cnf3Formula f = random_cnf3(n, 1 + rep, 100 + rep);
    auto frag = compile_cnf3(f, kMu, kFamilies[rep % 2]);
    for (std::uint64_t a = 0; a < (1u << n); ++a) {
      std::vector<double> x(n);
      for (std::size_t i = 0; i < n; ++i) x[i] = (a >> i) & 1;
      REQUIRE(eval1(frag, x) == clause_eval(f, a));
    }
  }
}

TEST_CASE("DIMACS parsing") {
  auto f = parse_dimacs("c comment\np cnf 3 2\n1 -2 3 0\n-1 2\n0\n");
  CHECK(f.num_vars == 3);
  REQUIRE(f.clauses.size() == 2);
  CHECK(f.clauses[1] == std::array<int, 3>{-1, 2, 2});
  CHECK(parse_dimacs(f.to_dimacs()).clauses == f.clauses);
  CHECK_THROWS_AS(parse_dimacs("p cnf 4 1\n1 2 3 4 0\n"), FormatError);
  CHECK_THROWS_AS(parse_dimacs("p cnf 2 1\n1 3 0\n"), FormatError);
  CHECK_THROWS_AS(parse_dimacs("p cnf 2 2\n1 2 0\n"), FormatError);
  CHECK_THROWS_AS(parse_dimacs("1 2 0\n"), FormatError);
}

TEST_CASE("brute-force oracles") {
  Cnf3Formula x1{1, {{1, 1, 1}}};
  CHECK(brute_force_sat(x1) == std::optional<std::uint64_t>{1});
  Cnf3Formula unsat{3, {}};
  for (int s = 0; s < 8; ++s) unsat.clauses.push_back({s & 1 ? 1 : -1, s & 2 ? 2 : -2, s & 4 ? 3 : -3});
  CHECK_FALSE(brute_force_sat(unsat).has_value());

  // (x1 v y1) & (~x1 v y1) reduces to y1, which y1 = 1 satisfies for any x1.
  Cnf3Formula f{2, {{1, 2, 2}, {-1, 2, 2}}};
  CHECK_FALSE(brute_force_exists_forall(f, {1, 1}).has_value());
  // (x1 v y1) & (x1 v ~y1): x1 = 0 kills it for every y1.
  Cnf3Formula g{2, {{1, 2, 2}, {1, -2, -2}}};
  CHECK(brute_force_exists_forall(g, {1, 1}) == std::optional<std::uint64_t>{0});
  // (y1 v ~y1): true for every assignment.
  Cnf3Formula t{2, {{2, -2, 1}}};
  CHECK_FALSE(brute_force_exists_forall(t, {1, 1}).has_value());
  CHECK_THROWS_AS(brute_force_exists_forall(t, {1, 2}), std::invalid_argument);
}

TEST_CASE("uatt query construction") {
  Cnf3Formula f{3, {{1, -2, 3}, {-1, 2, 3}}};
  for (LogicFamily fam : kFamilies) {
    ReductionOptions opt;
    opt.family = fam;
    UattQuery q = build_uatt_query(f, opt);
    CHECK(q.eps == 0.5);
    CHECK(q.f.classify(q.x_s) == 0);
    CHECK(q.f.classify(std::vector<double>{1.0, 1.0, 0.0}) == 1);
    CHECK(q.f.classify(std::vector<double>{1.0, 0.0, 0.0}) == 0);
    // Off-corner grid point encoding (1,1,0).
    CHECK(q.f.classify(std::vector<double>{200.0 / 255, 128.0 / 255, 127.0 / 255}) == 1);
  }
  Cnf3Formula unsat{3, {}};
  for (int s = 0; s < 8; ++s) unsat.clauses.push_back({s & 1 ? 1 : -1, s & 2 ? 2 : -2, s & 4 ? 3 : -3});
  UattQuery q = build_uatt_query(unsat);
  for (std::uint64_t a = 0; a < 8; ++a)
    CHECK(q.f.classify(std::vector<double>{double(a & 1), double((a >> 1) & 1), double((a >> 2) & 1)}) == 0);
}

TEST_CASE("uatt output depends only on the threshold pattern on the image grid") {
  Cnf3Formula f = random_cnf3(4, 6, 3);
  UattQuery q = build_uatt_query(f);
  CounterRng rng(6);
  for (int rep = 0; rep < 400; ++rep) {
    std::vector<double> x(4), c(4);
    for (int i = 0; i < 4; ++i) {
      x[i] = static_cast<double>(rng.below(256)) / 255.0;
      c[i] = x[i] > 0.5 ? 1.0 : 0.0;
    }
    CHECK(q.f.classify(x) == q.f.classify(c));
  }
}

TEST_CASE("plrob instance") {
  Cnf3Formula f{3, {{1, 2, 3}, {-1, 2, -3}}};
  PlrobInstance inst = build_plrob_instance(f, {1, 2});
  CHECK(inst.validate(std::vector<double>{0.0}));
  CHECK_FALSE(inst.validate(std::vector<double>{0.5}));
  CHECK_THROWS_AS(build_plrob_instance(f, {1, 1}), std::invalid_argument);

  Cnf3Formula v{4, {{1, 2, 2}, {1, 3, 4}}};  // θ = 0 leaves (y1) & (y2 v y3) satisfiable
  PlrobInstance three = build_plrob_instance(v, {1, 3});
  CHECK(three.validate(std::vector<double>{0.0, 1.0, 1.0}) == false);  // wrong length

  // θ = 1 kills (~θ v y1) & (~θ v ~y1).
  Cnf3Formula kill{2, {{-1, 2, 2}, {-1, -2, -2}}};
  PlrobInstance k = build_plrob_instance(kill, {1, 1});
  Network robust = k.instantiate(std::vector<double>{1.0});
  CHECK(robust.classify(std::vector<double>{0.0}) == 0);
  CHECK(robust.classify(std::vector<double>{1.0}) == 0);
  CHECK(verify_reduction(ReductionKind::kPlrob, kill, {{1, 1}}).network_decision);

  // (y1 v ~y1 v θ) holds for every θ.
  Cnf3Formula taut{2, {{2, -2, 1}}};
  auto rep = verify_reduction(ReductionKind::kPlrob, taut, {{1, 1}});
  CHECK_FALSE(rep.network_decision);
  CHECK(rep.agree);
}

TEST_CASE("cca instance") {
  Cnf3Formula f{2, {{1, 2, 2}}};  // R = x̂1 v ŷ1
  CcaInstance inst = build_cca_instance(f, {1, 1});
  CHECK(inst.h.classify(inst.x_s) == 1);
  CHECK(inst.h.classify(std::vector<double>{0.25}) == 0);
  CHECK(inst.h.classify(std::vector<double>{0.75}) == 0);
  CHECK(inst.h.classify(std::vector<double>{0.875}) == 1);   // x̂=1, ŷ=1
  CHECK(inst.h.classify(std::vector<double>{0.125}) == 0);   // x̂=0, ŷ=0
  CHECK(inst.h.classify(std::vector<double>{0.3125}) == 1);  // x̂=0, ŷ=1
  CHECK_THROWS_AS(build_cca_instance(f, {1, 1}, 0.25), std::invalid_argument);
  CHECK_THROWS_AS(build_cca_instance(f, {1, 1}, 0.5), std::invalid_argument);

  Cnf3Formula padded{3, {{1, 2, 3}}};  // n_x = 2, n_y = 1
  CcaInstance p = build_cca_instance(padded, {2, 1});
  CHECK(p.width == 2);
  CHECK(p.h.classify(p.x_s) == 1);
}

TEST_CASE("reductions agree with the brute-force oracles on random formulas") {
  for (int rep = 0; rep < 40; ++rep) {
    std::size_t n = 1 + rep % 6;
    Cnf3Formula f = random_cnf3(n, 1 + (rep * 7) % 20, 500 + rep);
    ReductionParams p;
    p.options.family = kFamilies[rep % 2];
    auto u = verify_reduction(ReductionKind::kUatt, f, p);
    CHECK(u.agree);
    if (n >= 2) {
      p.split = {n / 2, n - n / 2};
      CHECK(verify_reduction(ReductionKind::kPlrob, f, p).agree);
      CHECK(verify_reduction(ReductionKind::kCca, f, p).agree);
    }
  }
  auto rep = verify_reduction(ReductionKind::kUatt, Cnf3Formula{1, {{1, 1, 1}}});
  auto j = rep.to_json();
  CHECK(j.find("\"kind\":\"uatt\"") != std::string::npos);
  CHECK(j.find("\"agree\":true") != std::string::npos);
}
