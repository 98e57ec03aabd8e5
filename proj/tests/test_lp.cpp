#include <doctest.h>

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>

#include "cav/lp.hpp"
#include "helpers.hpp"

using namespace cav;
using namespace cav::testing;

namespace {

// Minimum of c^T x over the vertices of {A x <= b, lo <= x <= hi}, found by
// solving every n-subset of the constraints as equalities.
struct VertexOracle {
  std::vector<std::vector<double>> A;  // all constraints as a.x <= b
  std::vector<double> b;
  std::optional<double> best;

  bool solve(std::vector<std::vector<double>> M, std::vector<double> r, std::vector<double>& x) {
    const std::size_t n = r.size();
    for (std::size_t c = 0; c < n; ++c) {
      std::size_t p = c;
      for (std::size_t i = c + 1; i < n; ++i)
        if (std::abs(M[i][c]) > std::abs(M[p][c])) p = i;
      if (std::abs(M[p][c]) < 1e-10) return false;
      std::swap(M[p], M[c]);
      std::swap(r[p], r[c]);
      for (std::size_t i = 0; i < n; ++i) {
        if (i == c) continue;
        double f = M[i][c] / M[c][c];
        for (std::size_t k = c; k < n; ++k) M[i][k] -= f * M[c][k];
        r[i] -= f * r[c];
      }
    }
    x.resize(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = r[i] / M[i][i];
    return true;
  }

  void run(const std::vector<double>& c) {
    const std::size_t n = c.size(), k = A.size();
    std::vector<std::size_t> idx(n);
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t start, std::size_t depth) {
      if (depth == n) {
        std::vector<std::vector<double>> M;
        std::vector<double> r;
        for (std::size_t i : idx) M.push_back(A[i]), r.push_back(b[i]);
        std::vector<double> x;
        if (!solve(M, r, x)) return;
        for (std::size_t i = 0; i < k; ++i) {
          double s = 0;
          for (std::size_t j = 0; j < n; ++j) s += A[i][j] * x[j];
          if (s > b[i] + 1e-7) return;
        }
        double v = 0;
        for (std::size_t j = 0; j < n; ++j) v += c[j] * x[j];
        if (!best || v < *best) best = v;
        return;
      }
      for (std::size_t i = start; i < k; ++i) {
        idx[depth] = i;
        rec(i + 1, depth + 1);
      }
    };
    rec(0, 0);
  }
};

}  // namespace

TEST_CASE("trivial LPs") {
  LinearProgram a(1);
  a.objective = {1.0};
  a.lower = {-kInf};
  a.add_row({{0, 1.0}}, Sense::kGe, 3.0);
  auto ra = simplex_solve(a);
  REQUIRE(ra.status == LpStatus::kOptimal);
  CHECK(ra.objective == doctest::Approx(3.0));

  LinearProgram b(1);
  b.objective = {-1.0};
  b.add_row({{0, 1.0}}, Sense::kLe, 5.0);
  auto rb = simplex_solve(b);
  REQUIRE(rb.status == LpStatus::kOptimal);
  CHECK(rb.objective == doctest::Approx(-5.0));
  CHECK(rb.x[0] == doctest::Approx(5.0));

  LinearProgram u(1);
  u.objective = {-1.0};
  CHECK(simplex_solve(u).status == LpStatus::kUnbounded);

  LinearProgram inf(2);
  inf.add_row({{0, 1.0}, {1, 1.0}}, Sense::kLe, -1.0);
  CHECK(simplex_solve(inf).status == LpStatus::kInfeasible);

  LinearProgram eq(2);
  eq.objective = {1.0, 2.0};
  eq.upper = {10.0, 10.0};
  eq.add_row({{0, 1.0}, {1, 1.0}}, Sense::kEq, 4.0);
  eq.add_row({{0, 1.0}, {1, -1.0}}, Sense::kLe, 1.0);
  auto re = simplex_solve(eq);
  REQUIRE(re.status == LpStatus::kOptimal);
  CHECK(re.objective == doctest::Approx(2.5 + 3.0));

  LinearProgram bad(1);
  bad.lower = {2.0};
  bad.upper = {1.0};
  CHECK_THROWS_AS(simplex_solve(bad), std::invalid_argument);
}

TEST_CASE("random LPs match vertex enumeration") {
  CounterRng rng(31);
  int optimal = 0, infeasible = 0;
  for (int rep = 0; rep < 120; ++rep) {
    const std::size_t n = rep < 3 ? 10 : 2 + rep % 4;
    const std::size_t m = rep < 3 ? 4 : 1 + rep % 5;
    LinearProgram lp(n);
    VertexOracle oracle;
    for (std::size_t j = 0; j < n; ++j) {
      lp.objective[j] = rng.uniform(-1, 1);
      lp.lower[j] = rng.uniform(-2, 0);
      lp.upper[j] = rng.uniform(0.1, 2);
      std::vector<double> e(n, 0.0);
      e[j] = 1.0;
      oracle.A.push_back(e), oracle.b.push_back(lp.upper[j]);
      e[j] = -1.0;
      oracle.A.push_back(e), oracle.b.push_back(-lp.lower[j]);
    }
    for (std::size_t r = 0; r < m; ++r) {
      std::vector<std::pair<std::size_t, double>> coeffs;
      std::vector<double> a(n);
      for (std::size_t j = 0; j < n; ++j) a[j] = rng.uniform(-1, 1), coeffs.emplace_back(j, a[j]);
      double rhs = rng.uniform(-0.5, 1.0);
      Sense s = rng.below(3) == 0 ? Sense::kGe : Sense::kLe;
      lp.add_row(coeffs, s, rhs);
      if (s == Sense::kGe) {
        for (double& v : a) v = -v;
        rhs = -rhs;
      }
      oracle.A.push_back(a), oracle.b.push_back(rhs);
    }
    oracle.run(lp.objective);
    auto res = simplex_solve(lp);
    if (!oracle.best) {
      CHECK(res.status == LpStatus::kInfeasible);
      ++infeasible;
      continue;
    }
    REQUIRE(res.status == LpStatus::kOptimal);
    CHECK(res.objective == doctest::Approx(*oracle.best).epsilon(1e-7));
    ++optimal;
  }
  CHECK(optimal > 50);
  CHECK(infeasible > 0);
}

TEST_CASE("warm re-solve after bound changes matches a cold solve") {
  CounterRng rng(32);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 6;
    LinearProgram lp(n);
    for (std::size_t j = 0; j < n; ++j) lp.objective[j] = rng.uniform(-1, 1), lp.upper[j] = 1.0;
    for (int r = 0; r < 4; ++r) {
      std::vector<std::pair<std::size_t, double>> coeffs;
      for (std::size_t j = 0; j < n; ++j) coeffs.emplace_back(j, rng.uniform(-1, 1));
      lp.add_row(coeffs, Sense::kLe, rng.uniform(0.0, 1.0));
    }
    Simplex warm(lp);
    warm.solve();
    for (int step = 0; step < 5; ++step) {
      std::size_t j = rng.below(n);
      double lo = rng.uniform(0, 0.4), hi = lo + rng.uniform(0.05, 0.6);
      warm.set_var_bounds(j, lo, hi);
      lp.lower[j] = lo;
      lp.upper[j] = hi;
      auto a = warm.solve(), b = simplex_solve(lp);
      REQUIRE(a.status == b.status);
      if (a.status == LpStatus::kOptimal) CHECK(a.objective == doctest::Approx(b.objective).epsilon(1e-8));
    }
  }
}

TEST_CASE("degenerate LP terminates") {
  // Many redundant constraints through the optimum vertex.
  LinearProgram lp(3);
  lp.objective = {-1, -1, -1};
  for (int k = 1; k <= 20; ++k)
    lp.add_row({{0, 1.0 * k}, {1, 1.0}, {2, 1.0 / k}}, Sense::kLe, 0.0 + 0 * k);
  lp.add_row({{0, 1}, {1, 1}, {2, 1}}, Sense::kLe, 1.0);
  auto r = simplex_solve(lp);
  CHECK(r.status == LpStatus::kOptimal);
  CHECK(r.objective == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("LP text writer") {
  LinearProgram lp(2);
  lp.names = {"a", "b"};
  lp.objective = {1.0, -2.0};
  lp.upper = {1.0, kInf};
  lp.add_row({{0, 1.0}, {1, 1.0}}, Sense::kGe, 0.5);
  std::ostringstream out;
  write_lp_text(lp, out, {0});
  std::string s = out.str();
  CHECK(s.find("Minimize\n obj: 1 a - 2 b") != std::string::npos);
  CHECK(s.find("c0: 1 a + 1 b >= 0.5") != std::string::npos);
  CHECK(s.find("0 <= a <= 1") != std::string::npos);
  CHECK(s.find("Binary\n a") != std::string::npos);
}
