#include "cav/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cav/rng.hpp"

namespace cav {

namespace {

constexpr const char* kKindNames[] = {"fgsm", "bim", "pgd", "deepfool", "cw_linf", "uniform"};

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
}

// Projection onto B(x, eps) ∩ [0,1]^n.
void project(std::vector<double>& p, std::span<const double> x, double eps) {
  for (std::size_t i = 0; i < p.size(); ++i)
    p[i] = std::clamp(p[i], std::max(0.0, x[i] - eps), std::min(1.0, x[i] + eps));
}

// Seeds differ per attack kind and per eps-search run.
std::uint64_t run_stream(AttackKind k, std::uint64_t run) {
  return (static_cast<std::uint64_t>(k) << 32) ^ run;
}

AttackResult finish(Oracle& o, AttackResult r) {
  r.calls = o.calls();
  r.budget_exhausted = o.exhausted();
  r.aborted = o.aborted();
  if (r.aborted) {
    r.success = false;
    r.adversarial.reset();
    r.distance = std::numeric_limits<double>::infinity();
  }
  return r;
}

AttackResult run_in(Oracle& o, std::size_t calls_before, AttackResult r) {
  r.calls = o.calls() - calls_before;
  r.budget_exhausted = o.exhausted();
  r.aborted = o.aborted();
  return r;
}

// Sign-gradient ascent on cross-entropy from `cur`, stopping at the first
// misclassified iterate.
void sign_ascent(Oracle& o, std::vector<double>& cur, double eps, const AttackConfig& cfg) {
  std::span<const double> x = o.origin();
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    auto lg = o.grad(cur, CrossEntropy{o.clean_label()});
    if (!lg || argmax_lowest(lg->logits) != o.clean_label()) return;
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += cfg.lr * sign(lg->grad[i]);
    project(cur, x, eps);
  }
  o.logits(cur);
}

}  // namespace

std::string to_string(AttackKind k) { return kKindNames[static_cast<int>(k)]; }

AttackKind attack_kind(const std::string& name) {
  for (int i = 0; i < 6; ++i)
    if (name == kKindNames[i]) return static_cast<AttackKind>(i);
  throw std::invalid_argument("unknown attack: " + name);
}

bool takes_epsilon(AttackKind k) {
  return k == AttackKind::kFgsm || k == AttackKind::kBim || k == AttackKind::kPgd ||
         k == AttackKind::kUniform;
}

void AttackConfig::validate() const {
  auto fail = [](const char* what) { throw std::invalid_argument(std::string("attack: ") + what); };
  if (iterations == 0) fail("iterations must be >= 1");
  if (!(lr > 0.0)) fail("learning rate must be positive");
  if (!(search_factor > 0.0 && search_factor < 1.0)) fail("search factor must lie in (0,1)");
  if (!(tau_factor > 0.0 && tau_factor < 1.0)) fail("tau factor must lie in (0,1)");
  if (!(start_eps > 0.0)) fail("starting epsilon must be positive");
  if (candidates < 2) fail("deepfool needs at least two candidates");
  if (overshoot < 0.0) fail("overshoot must be non-negative");
  if (!(min_tau > 0.0 && initial_tau > 0.0)) fail("tau values must be positive");
  if (!(initial_const > 0.0) || !(const_factor > 1.0) || max_const < initial_const)
    fail("bad constant schedule");
  if (tau_check_every == 0) fail("tau check interval must be >= 1");
  if (runs == 0) fail("runs must be >= 1");
}

// ---- Oracle ------------------------------------------------------------------

Oracle::Oracle(const Network& net, std::span<const double> x, std::size_t budget)
    : net_(net), x_(x.begin(), x.end()), budget_(budget) {
  if (x.size() != net.input_size()) throw std::invalid_argument("attack: input size mismatch");
  for (double v : x)
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("attack: input outside [0,1]");
  if (!reserve(1)) throw std::invalid_argument("attack: budget leaves no call for the clean input");
  clean_logits_ = net.forward(x_);
  clean_ = argmax_lowest(clean_logits_);
}

bool Oracle::reserve(std::size_t n) {
  if (budget_ != 0 && calls_ + n > budget_) {
    exhausted_ = true;
    return false;
  }
  calls_ += n;
  return true;
}

void Oracle::observe(std::span<const double> p, std::span<const double> logits) {
  std::size_t label = argmax_lowest(logits);
  if (label == clean_) return;
  double d = linf_distance(p, x_);
  if (d < best_dist_) {
    best_dist_ = d;
    best_.emplace(p.begin(), p.end());
    best_label_ = label;
  }
}

std::optional<std::vector<double>> Oracle::logits(std::span<const double> p) {
  if (aborted_ || !reserve(1)) return std::nullopt;
  std::vector<double> z = net_.forward(p);
  observe(p, z);
  return z;
}

std::optional<LossGrad> Oracle::grad(std::span<const double> p, const Loss& loss) {
  if (aborted_ || !reserve(1)) return std::nullopt;
  LossGrad lg = net_.loss_grad(p, loss);
  observe(p, lg.logits);
  if (!all_finite(lg.grad)) {
    aborted_ = true;
    return std::nullopt;
  }
  return lg;
}

std::optional<std::vector<LossGrad>> Oracle::grads(std::span<const double> p,
                                                   std::span<const Loss> losses) {
  if (aborted_ || !reserve(std::max<std::size_t>(1, losses.size()))) return std::nullopt;
  Trace t = net_.forward_trace(p);
  observe(p, t.logits());
  std::vector<LossGrad> out;
  for (const Loss& loss : losses) {
    LossGrad lg;
    lg.logits.assign(t.logits().begin(), t.logits().end());
    lg.loss = loss_value(loss, lg.logits);
    lg.grad = net_.backward(t, loss_logit_grad(loss, lg.logits));
    if (!all_finite(lg.grad)) {
      aborted_ = true;
      return std::nullopt;
    }
    out.push_back(std::move(lg));
  }
  return out;
}

AttackResult Oracle::take_best() {
  AttackResult r;
  if (best_) {
    r.success = true;
    r.adversarial = Tensor(net_.input_shape(), std::move(*best_));
    r.distance = linf_distance(r.adversarial->values(), x_);
    r.label = best_label_;
  }
  best_.reset();
  best_dist_ = std::numeric_limits<double>::infinity();
  return r;
}

// ---- single-radius runs --------------------------------------------------------

AttackResult fgsm_at(Oracle& o, double eps, const std::vector<double>& grad_sign) {
  std::size_t before = o.calls();
  std::span<const double> x = o.origin();
  std::vector<double> p(x.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = x[i] + eps * grad_sign[i];
  project(p, x, eps);
  o.logits(p);
  return run_in(o, before, o.take_best());
}

AttackResult bim_at(Oracle& o, double eps, const AttackConfig& cfg) {
  std::size_t before = o.calls();
  std::vector<double> cur(o.origin().begin(), o.origin().end());
  sign_ascent(o, cur, eps, cfg);
  return run_in(o, before, o.take_best());
}

AttackResult pgd_at(Oracle& o, double eps, const AttackConfig& cfg, std::uint64_t run) {
  std::size_t before = o.calls();
  std::span<const double> x = o.origin();
  std::vector<double> cur(x.begin(), x.end());
  if (cfg.random_init) {
    CounterRng rng(cfg.seed, run_stream(AttackKind::kPgd, run));
    for (double& v : cur) v += rng.uniform(-eps, eps);
    project(cur, x, eps);
  }
  sign_ascent(o, cur, eps, cfg);
  return run_in(o, before, o.take_best());
}

AttackResult uniform_at(Oracle& o, double eps, const AttackConfig& cfg, std::uint64_t run) {
  std::size_t before = o.calls();
  std::span<const double> x = o.origin();
  CounterRng rng(cfg.seed, run_stream(AttackKind::kUniform, run));
  std::vector<double> p(x.size());
  for (std::size_t r = 0; r < cfg.runs; ++r) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = x[i] + rng.uniform(-eps, eps);
    project(p, x, eps);
    auto z = o.logits(p);
    if (!z || argmax_lowest(*z) != o.clean_label()) break;
  }
  return run_in(o, before, o.take_best());
}

// ---- radius search -------------------------------------------------------------

AttackResult eps_search(const EpsAttack& attack, const AttackConfig& cfg) {
  AttackResult best;
  std::size_t calls = 0;
  bool stop = false, exhausted = false, aborted = false;
  auto run = [&](double eps) {
    AttackResult r = attack(eps);
    calls += r.calls;
    exhausted = exhausted || r.budget_exhausted;
    aborted = aborted || r.aborted;
    stop = exhausted || aborted;
    bool ok = r.success;
    if (ok && r.distance < best.distance) best = std::move(r);
    return ok;
  };

  double lo = 0.0, hi = cfg.start_eps;
  bool bracketed = cfg.search_steps == 0;
  double eps = cfg.start_eps;
  for (std::size_t k = 0; k < cfg.search_steps && !stop; ++k, eps *= cfg.search_factor) {
    if (run(eps)) {
      hi = eps;
      bracketed = true;
    } else if (bracketed) {
      lo = eps;
      break;
    }
  }
  if (bracketed)
    for (std::size_t b = 0; b < cfg.binary_steps && !stop; ++b) {
      double mid = 0.5 * (lo + hi);
      (run(mid) ? hi : lo) = mid;
    }

  best.calls = calls;
  best.budget_exhausted = exhausted;
  best.aborted = aborted;
  if (aborted) best = AttackResult{false, std::nullopt, best.distance, 0, calls, exhausted, true};
  if (!best.success) best.distance = std::numeric_limits<double>::infinity();
  return best;
}

// ---- attacks -------------------------------------------------------------------

AttackResult fgsm(const Network& net, std::span<const double> x, const AttackConfig& cfg,
                  std::optional<double> eps) {
  cfg.validate();
  Oracle o(net, x, cfg.budget);
  // One gradient at x serves every radius.
  auto lg = o.grad(x, CrossEntropy{o.clean_label()});
  if (!lg) return finish(o, {});
  std::vector<double> s(x.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = sign(lg->grad[i]);
  o.take_best();
  auto at = [&](double e) { return fgsm_at(o, e, s); };
  return finish(o, eps ? at(*eps) : eps_search(at, cfg));
}

AttackResult bim(const Network& net, std::span<const double> x, const AttackConfig& cfg,
                 std::optional<double> eps) {
  cfg.validate();
  Oracle o(net, x, cfg.budget);
  auto at = [&](double e) { return bim_at(o, e, cfg); };
  return finish(o, eps ? at(*eps) : eps_search(at, cfg));
}

AttackResult pgd(const Network& net, std::span<const double> x, const AttackConfig& cfg,
                 std::optional<double> eps) {
  cfg.validate();
  Oracle o(net, x, cfg.budget);
  std::uint64_t run = 0;
  auto at = [&](double e) { return pgd_at(o, e, cfg, run++); };
  return finish(o, eps ? at(*eps) : eps_search(at, cfg));
}

AttackResult uniform_noise(const Network& net, std::span<const double> x,
                           const AttackConfig& cfg, std::optional<double> eps) {
  cfg.validate();
  Oracle o(net, x, cfg.budget);
  std::uint64_t run = 0;
  auto at = [&](double e) { return uniform_at(o, e, cfg, run++); };
  return finish(o, eps ? at(*eps) : eps_search(at, cfg));
}

AttackResult deepfool(const Network& net, std::span<const double> x, const AttackConfig& cfg) {
  cfg.validate();
  Oracle o(net, x, cfg.budget);
  std::size_t n = x.size(), clean = o.clean_label();
  std::span<const double> z0 = o.clean_logits();

  // Candidate classes: the top-scoring classes at x other than the label.
  std::vector<std::size_t> order(z0.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return z0[a] > z0[b]; });
  std::vector<Loss> losses;
  for (std::size_t k = 0; k < order.size() && k < cfg.candidates; ++k) {
    if (order[k] == clean) continue;
    std::vector<double> c(z0.size(), 0.0);
    c[order[k]] = 1.0;
    c[clean] = -1.0;
    losses.emplace_back(LogitCombination{std::move(c)});
  }
  if (losses.empty()) return finish(o, {});

  std::vector<double> total(n, 0.0), cur(x.begin(), x.end());
  bool moved = false;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    auto gs = o.grads(cur, losses);
    if (!gs) return finish(o, o.take_best());
    if (argmax_lowest((*gs)[0].logits) != clean) return finish(o, o.take_best());
    std::size_t pick = 0;
    double pick_dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < gs->size(); ++k) {
      const LossGrad& g = (*gs)[k];
      double l1 = 0.0;
      for (double v : g.grad) l1 += std::abs(v);
      double d = std::abs(g.loss) / (l1 + 1e-8);
      if (d < pick_dist) pick_dist = d, pick = k;
    }
    // 1e-4 keeps each step from landing exactly on the linearized boundary.
    double step = pick_dist + 1e-4;
    for (std::size_t i = 0; i < n; ++i) {
      total[i] += step * sign((*gs)[pick].grad[i]);
      cur[i] = std::clamp(x[i] + (1.0 + cfg.overshoot) * total[i], 0.0, 1.0);
    }
    moved = true;
  }
  if (moved) o.logits(cur);
  return finish(o, o.take_best());
}

AttackResult cw_linf(const Network& net, std::span<const double> x, const AttackConfig& cfg) {
  cfg.validate();
  Oracle o(net, x, cfg.budget);
  std::size_t n = x.size(), clean = o.clean_label();

  // Projected gradient descent on x' = clip(x + delta, 0, 1).
  std::vector<double> p(x.begin(), x.end()), prev = p;
  double tau = cfg.initial_tau, c = cfg.initial_const;
  while (tau > cfg.min_tau) {
    if (!cfg.warm_start) p.assign(x.begin(), x.end());
    else p = prev;
    bool found = false;
    while (!found && c <= cfg.max_const) {
      for (std::size_t it = 0; it < cfg.iterations; ++it) {
        auto lg = o.grad(p, LogitMargin{clean});
        if (!lg) return finish(o, o.take_best());
        bool adv = argmax_lowest(lg->logits) != clean;
        if (it % cfg.tau_check_every == 0 && adv && linf_distance(p, x) <= tau) {
          found = true;
          break;
        }
        // Gradient of c * max(f, 0) + sum_i max(|x'_i - x_i| - tau, 0).
        double fc = lg->loss > 0.0 ? c : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          double delta = p[i] - x[i];
          double g = fc * lg->grad[i] + (std::abs(delta) > tau ? sign(delta) : 0.0);
          p[i] = std::clamp(p[i] - cfg.lr * g, 0.0, 1.0);
        }
      }
      if (!found) c *= cfg.const_factor;
    }
    if (!found) break;
    tau = std::min(tau, linf_distance(p, x)) * cfg.tau_factor;
    prev = p;
  }
  return finish(o, o.take_best());
}

AttackResult run_attack(const Network& net, std::span<const double> x, const AttackConfig& cfg,
                        std::optional<double> eps) {
  switch (cfg.kind) {
    case AttackKind::kFgsm: return fgsm(net, x, cfg, eps);
    case AttackKind::kBim: return bim(net, x, cfg, eps);
    case AttackKind::kPgd: return pgd(net, x, cfg, eps);
    case AttackKind::kDeepFool: return deepfool(net, x, cfg);
    case AttackKind::kCwLinf: return cw_linf(net, x, cfg);
    case AttackKind::kUniform: return uniform_noise(net, x, cfg, eps);
  }
  throw std::invalid_argument("attack: unknown kind");
}

AttackResult best_of(std::span<const AttackResult> results) {
  AttackResult best;
  std::size_t calls = 0;
  for (const AttackResult& r : results) {
    calls += r.calls;
    if (r.success && r.distance < best.distance) best = r;
  }
  best.calls = calls;
  best.budget_exhausted = false;
  best.aborted = false;
  return best;
}

PoolResult attack_pool(const Network& net, std::span<const double> x,
                       std::span<const AttackConfig> attacks) {
  if (attacks.empty()) throw std::invalid_argument("attack_pool: empty pool");
  PoolResult out;
  for (const AttackConfig& cfg : attacks) out.members.push_back(run_attack(net, x, cfg));
  out.best = best_of(out.members);
  return out;
}

// ---- presets -------------------------------------------------------------------

namespace {

AttackConfig searched(AttackKind k, double factor, std::size_t steps, std::size_t binary,
                      double start) {
  AttackConfig c;
  c.kind = k;
  c.search_factor = factor;
  c.search_steps = steps;
  c.binary_steps = binary;
  c.start_eps = start;
  return c;
}

AttackConfig iterative(AttackKind k, std::size_t iters, double lr) {
  AttackConfig c = searched(k, 0.75, 30, 20, 1.0);
  c.iterations = iters;
  c.lr = lr;
  c.random_init = k == AttackKind::kPgd;
  return c;
}

AttackConfig cw(double tau_factor, double lr, std::size_t iters) {
  AttackConfig c;
  c.kind = AttackKind::kCwLinf;
  c.tau_factor = tau_factor;
  c.lr = lr;
  c.iterations = iters;
  return c;
}

AttackConfig df(std::size_t iters, double overshoot) {
  AttackConfig c;
  c.kind = AttackKind::kDeepFool;
  c.iterations = iters;
  c.candidates = 10;
  c.overshoot = overshoot;
  return c;
}

AttackConfig uniform(std::size_t runs, double factor = 0.75, std::size_t steps = 30,
                     std::size_t binary = 20, double start = 1.0) {
  AttackConfig c = searched(AttackKind::kUniform, factor, steps, binary, start);
  c.runs = runs;
  return c;
}

AttackConfig with_pgd_search(AttackConfig c, double factor, std::size_t steps,
                             std::size_t binary, double start) {
  c.search_factor = factor;
  c.search_steps = steps;
  c.binary_steps = binary;
  c.start_eps = start;
  return c;
}

}  // namespace

std::vector<AttackConfig> preset(const std::string& name, const std::string& dataset) {
  bool mnist = dataset == "mnist";
  if (!mnist && dataset != "cifar10") throw std::invalid_argument("preset: unknown dataset " + dataset);
  const AttackKind kBim = AttackKind::kBim, kPgd = AttackKind::kPgd;
  std::vector<AttackConfig> out;
  if (name == "strong" || name == "balanced") {
    bool strong = name == "strong";
    double bim_lr = mnist ? (strong ? 1e-3 : 1e-2) : (strong ? 1e-5 : 1e-3);
    std::size_t bim_it = strong ? (mnist ? 2000 : 5000) : 200;
    double cw_tau = strong ? (mnist ? 0.95 : 0.99) : 0.9;
    double cw_lr = mnist ? 1e-2 : (strong ? 1e-5 : 1e-4);
    std::size_t cw_it = strong ? (mnist ? 1000 : 5000) : 100;
    out = {iterative(kBim, bim_it, bim_lr),
           cw(cw_tau, cw_lr, cw_it),
           df(5000, 1e-5),
           searched(AttackKind::kFgsm, 0.75, 30, 20, 1.0),
           iterative(kPgd, strong ? 5000 : 200, strong ? 1e-4 : 1e-3),
           uniform(strong ? 8000 : 200)};
    return out;
  }

  std::size_t budget;
  int col;
  if (name == "fast-100") budget = 100, col = 0;
  else if (name == "fast-1k") budget = 1000, col = 1;
  else if (name == "fast-10k") budget = 10000, col = 2;
  else throw std::invalid_argument("preset: unknown name " + name);

  auto pick = [&](auto m0, auto m1, auto m2, auto c0, auto c1, auto c2) {
    const decltype(m0) v[2][3] = {{m0, m1, m2}, {c0, c1, c2}};
    return v[mnist ? 0 : 1][col];
  };

  AttackConfig b = iterative(kBim, pick(10, 50, 500, 10, 50, 500),
                             pick(0.1, 0.01, 1e-3, 0.01, 1e-3, 1e-3));
  b = with_pgd_search(b, 0.75, 0, pick(10, 20, 20, 10, 20, 20), mnist ? 0.5 : 0.1);

  AttackConfig d = df(pick(100, 500, 500, 500, 500, 500), pick(0.1, 1e-5, 1e-5, 1e-4, 1e-4, 1e-4));

  AttackConfig f = mnist ? searched(AttackKind::kFgsm, 0.75, 30, 20, 1.0)
                         : searched(AttackKind::kFgsm, 0.5, 10, 20, 0.1);

  AttackConfig p = iterative(kPgd, pick(10, 50, 500, 10, 50, 200),
                             pick(0.1, 0.01, 1e-3, 0.01, 1e-3, 1e-3));
  p = with_pgd_search(p, pick(0.75, 0.5, 0.5, 0.75, 0.5, 0.75), pick(0, 10, 10, 0, 10, 30),
                      pick(10, 10, 10, 10, 10, 20), pick(0.1, 0.1, 0.1, 0.1, 0.1, 1.0));

  AttackConfig u = uniform(pick(200, 500, 200, 10, 50, 500), pick(0.75, 0.75, 0.75, 0.75, 0.75, 0.25),
                           pick(30, 30, 30, 30, 30, 5), pick(20, 20, 20, 20, 20, 15),
                           pick(1.0, 1.0, 1.0, 1.0, 1.0, 0.5));

  out = {b, d, f, p, u};
  for (AttackConfig& c : out) c.budget = budget;
  return out;
}

// ---- JSON ----------------------------------------------------------------------

nlohmann::json to_json(const AttackConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"initial_search_factor", c.search_factor},
          {"initial_search_steps", c.search_steps},
          {"binary_search_steps", c.binary_steps},
          {"starting_epsilon", c.start_eps},
          {"iterations", c.iterations},
          {"learning_rate", c.lr},
          {"random_initialization", c.random_init},
          {"candidates", c.candidates},
          {"overshoot", c.overshoot},
          {"minimum_tau", c.min_tau},
          {"initial_tau", c.initial_tau},
          {"tau_factor", c.tau_factor},
          {"initial_const", c.initial_const},
          {"const_factor", c.const_factor},
          {"maximum_const", c.max_const},
          {"tau_check_every_n_steps", c.tau_check_every},
          {"warm_start", c.warm_start},
          {"runs", c.runs},
          {"budget", c.budget},
          {"seed", c.seed}};
}

AttackConfig attack_config_from_json(const nlohmann::json& j, AttackConfig c) {
  if (!j.is_object()) throw std::invalid_argument("attack config must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const nlohmann::json& v = it.value();
    if (k == "kind") c.kind = attack_kind(v.get<std::string>());
    else if (k == "initial_search_factor") c.search_factor = v.get<double>();
    else if (k == "initial_search_steps") c.search_steps = v.get<std::size_t>();
    else if (k == "binary_search_steps") c.binary_steps = v.get<std::size_t>();
    else if (k == "starting_epsilon") c.start_eps = v.get<double>();
    else if (k == "iterations") c.iterations = v.get<std::size_t>();
    else if (k == "learning_rate") c.lr = v.get<double>();
    else if (k == "random_initialization") c.random_init = v.get<bool>();
    else if (k == "candidates") c.candidates = v.get<std::size_t>();
    else if (k == "overshoot") c.overshoot = v.get<double>();
    else if (k == "minimum_tau") c.min_tau = v.get<double>();
    else if (k == "initial_tau") c.initial_tau = v.get<double>();
    else if (k == "tau_factor") c.tau_factor = v.get<double>();
    else if (k == "initial_const") c.initial_const = v.get<double>();
    else if (k == "const_factor") c.const_factor = v.get<double>();
    else if (k == "maximum_const") c.max_const = v.get<double>();
    else if (k == "tau_check_every_n_steps") c.tau_check_every = v.get<std::size_t>();
    else if (k == "warm_start") c.warm_start = v.get<bool>();
    else if (k == "runs") c.runs = v.get<std::size_t>();
    else if (k == "budget") c.budget = v.get<std::size_t>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("unknown attack key: " + k);
  }
  c.validate();
  return c;
}

std::vector<AttackConfig> pool_from_json(const nlohmann::json& j) {
  std::vector<AttackConfig> pool;
  if (!j.contains("preset")) {
    for (const auto& a : j.at("attacks")) pool.push_back(attack_config_from_json(a));
    if (pool.empty()) throw std::invalid_argument("pool: no attacks");
    return pool;
  }
  pool = preset(j.at("preset").get<std::string>(), j.value("dataset", std::string("mnist")));
  if (j.contains("attacks")) {
    std::vector<AttackConfig> keep;
    for (const auto& name : j.at("attacks")) {
      AttackKind k = attack_kind(name.get<std::string>());
      auto it = std::find_if(pool.begin(), pool.end(), [&](const AttackConfig& c) { return c.kind == k; });
      if (it == pool.end()) throw std::invalid_argument("pool: preset has no " + to_string(k));
      keep.push_back(*it);
    }
    pool = std::move(keep);
  }
  if (j.contains("overrides"))
    for (auto it = j.at("overrides").begin(); it != j.at("overrides").end(); ++it) {
      AttackKind k = attack_kind(it.key());
      bool hit = false;
      for (AttackConfig& c : pool)
        if (c.kind == k) c = attack_config_from_json(it.value(), c), hit = true;
      if (!hit) throw std::invalid_argument("pool: override for absent attack " + it.key());
    }
  if (pool.empty()) throw std::invalid_argument("pool: no attacks");
  return pool;
}

}  // namespace cav
