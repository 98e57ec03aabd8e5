#include "cav/certify.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "cav/lp.hpp"

namespace cav {

namespace {

// Residuals within this of zero count as on the fitted line (LP support points).
constexpr double kResidualTol = 1e-12;

void require_pairs(std::span<const DistancePair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("calibration: no data");
  for (const auto& [h, y] : pairs)
    if (!std::isfinite(h) || !std::isfinite(y))
      throw std::invalid_argument("calibration: non-finite distance");
}

void diagnose(CalibrationModel& m, std::span<const DistancePair> pairs) {
  m.points = pairs.size();
  m.r2 = r_squared(pairs, m);
  m.achieved_quantile = achieved_quantile(pairs, m);
}

}  // namespace

double r_squared(std::span<const DistancePair> pairs, const CalibrationModel& m) {
  if (pairs.empty()) return 0.0;
  double mean = 0.0;
  for (const auto& p : pairs) mean += p.second;
  mean /= static_cast<double>(pairs.size());
  double ss_tot = 0.0, ss_res = 0.0;
  for (const auto& [h, y] : pairs) {
    ss_tot += (y - mean) * (y - mean);
    double r = y - m.predict(h);
    ss_res += r * r;
  }
  return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
}

double achieved_quantile(std::span<const DistancePair> pairs, const CalibrationModel& m) {
  if (pairs.empty()) return 0.0;
  std::size_t below = 0;
  for (const auto& [h, y] : pairs) below += y - m.predict(h) < -kResidualTol * (1.0 + std::abs(y));
  return static_cast<double>(below) / static_cast<double>(pairs.size());
}

CalibrationModel fit_linear_correction(std::span<const DistancePair> pairs) {
  require_pairs(pairs);
  double n = static_cast<double>(pairs.size()), mh = 0.0, my = 0.0;
  for (const auto& [h, y] : pairs) mh += h, my += y;
  mh /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (const auto& [h, y] : pairs) {
    sxy += (h - mh) * (y - my);
    sxx += (h - mh) * (h - mh);
  }
  CalibrationModel m;
  m.kind = CalibrationModel::Kind::kLinearLs;
  m.alpha1 = sxx > 0.0 ? sxy / sxx : 0.0;
  m.alpha0 = my - m.alpha1 * mh;
  diagnose(m, pairs);
  return m;
}

CalibrationModel fit_quantile_correction(std::span<const DistancePair> pairs, double q) {
  require_pairs(pairs);
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("calibration: q must lie in (0,1)");
  // min sum q u_i + (1-q) v_i  s.t.  alpha1 h_i + alpha0 + u_i - v_i = y_i,  u, v >= 0.
  std::size_t n = pairs.size();
  LinearProgram lp(2 + 2 * n);
  lp.lower[0] = lp.lower[1] = -kInf;
  for (std::size_t i = 0; i < n; ++i) {
    lp.objective[2 + 2 * i] = q;
    lp.objective[3 + 2 * i] = 1.0 - q;
    lp.add_row({{0, pairs[i].first}, {1, 1.0}, {2 + 2 * i, 1.0}, {3 + 2 * i, -1.0}}, Sense::kEq,
               pairs[i].second);
  }
  LpResult r = simplex_solve(lp);
  if (r.status != LpStatus::kOptimal)
    throw std::runtime_error("calibration: quantile LP ended " + to_string(r.status));
  CalibrationModel m;
  m.kind = CalibrationModel::Kind::kQuantile;
  m.q = q;
  m.alpha1 = r.x[0];
  m.alpha0 = r.x[1];
  diagnose(m, pairs);
  return m;
}

nlohmann::json to_json(const CalibrationModel& m) {
  nlohmann::json j = {
      {"kind", m.kind == CalibrationModel::Kind::kQuantile ? "quantile" : "linear_ls"},
      {"alpha1", m.alpha1},
      {"alpha0", m.alpha0},
      {"diagnostics",
       {{"r2", m.r2}, {"achieved_quantile", m.achieved_quantile}, {"points", m.points}}}};
  if (m.kind == CalibrationModel::Kind::kQuantile) j["q"] = m.q;
  return j;
}

CalibrationModel calibration_from_json(const nlohmann::json& j) {
  CalibrationModel m;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "quantile") {
    m.kind = CalibrationModel::Kind::kQuantile;
    m.q = j.at("q").get<double>();
  } else if (kind != "linear_ls") {
    throw std::invalid_argument("calibration: unknown kind " + kind);
  }
  m.alpha1 = j.at("alpha1").get<double>();
  m.alpha0 = j.at("alpha0").get<double>();
  if (j.contains("diagnostics")) {
    const auto& d = j.at("diagnostics");
    m.r2 = d.value("r2", 0.0);
    m.achieved_quantile = d.value("achieved_quantile", 0.0);
    m.points = d.value("points", std::size_t{0});
  }
  return m;
}

void save_calibration(const CalibrationModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json(m).dump(2) << "\n";
}

CalibrationModel load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return calibration_from_json(nlohmann::json::parse(in));
}

std::string to_string(Backend b) {
  switch (b) {
    case Backend::kExact: return "exact";
    case Backend::kHeuristic: return "heuristic";
    case Backend::kLowerBound: return "lower_bound";
  }
  return "?";
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::kExact: return "exact";
    case Provenance::kHeuristicUpper: return "heuristic_upper";
    case Provenance::kRelaxationLower: return "relaxation_lower";
  }
  return "?";
}

Backend backend_from_string(const std::string& s) {
  if (s == "exact") return Backend::kExact;
  if (s == "heuristic") return Backend::kHeuristic;
  if (s == "lower_bound") return Backend::kLowerBound;
  throw std::invalid_argument("unknown backend: " + s);
}

std::string to_string(Flag f) {
  switch (f) {
    case Flag::kNone: return "none";
    case Flag::kWithinEps: return "within_eps";
    case Flag::kAttackFound: return "attack_found";
    case Flag::kUnknown: return "unknown";
    case Flag::kCalibrated: return "calibrated";
  }
  return "?";
}

void CertifierConfig::validate() const {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw std::invalid_argument("certify: eps must be positive");
  if (backend == Backend::kHeuristic && pool.empty())
    throw std::invalid_argument("certify: heuristic backend needs an attack pool");
}

CaOutcome certify(const Network& net, std::span<const double> x, const CertifierConfig& cfg) {
  cfg.validate();
  CaOutcome out;
  out.label = net.classify(x);
  switch (cfg.backend) {
    case Backend::kExact: {
      ExactOptions opt = cfg.exact;
      opt.eps_box = cfg.eps;
      opt.stop_at_first = true;
      ExactResult r = exact_distance(net, x, std::nullopt, opt);
      out.provenance = Provenance::kExact;
      if (!r.witness.empty() && r.distance <= cfg.eps) {
        out.flag = Flag::kWithinEps;
        out.distance = r.distance;
        out.adversarial = Tensor(net.input_shape(), r.witness);
      } else if (r.status == MilpStatus::kInfeasible) {
        out.distance = r.lower;  // d*(x) > eps
      } else {
        out.flag = Flag::kUnknown;
        out.distance = r.lower;
      }
      break;
    }
    case Backend::kHeuristic: {
      PoolResult p = attack_pool(net, x, cfg.pool);
      out.provenance = Provenance::kHeuristicUpper;
      out.distance = p.best.distance;
      if (p.best.success && p.best.distance <= cfg.eps) {
        out.flag = Flag::kAttackFound;
        out.adversarial = p.best.adversarial;
      }
      if (cfg.calibration && p.best.success) out.calibrated = cfg.calibration->predict(p.best.distance);
      break;
    }
    case Backend::kLowerBound: {
      LowerBoundResult r = lower_bound_distance(net, x, cfg.eps);
      out.provenance = Provenance::kRelaxationLower;
      out.distance = r.lower;
      if (!r.certified) out.flag = Flag::kUnknown;
      break;
    }
  }
  return out;
}

CaOutcome calibrated_certify(const Network& net, std::span<const double> x,
                             const CertifierConfig& cfg) {
  if (cfg.backend != Backend::kHeuristic || !cfg.calibration)
    throw std::invalid_argument("calibrated_certify: needs the heuristic backend and a calibration");
  cfg.validate();
  CaOutcome out;
  out.label = net.classify(x);
  out.provenance = Provenance::kHeuristicUpper;
  PoolResult p = attack_pool(net, x, cfg.pool);
  out.distance = p.best.distance;
  if (!p.best.success) return out;
  out.calibrated = cfg.calibration->predict(p.best.distance);
  if (*out.calibrated <= cfg.eps) {
    out.flag = Flag::kCalibrated;
    out.adversarial = p.best.adversarial;
  }
  return out;
}

double cross_norm_radius(double p, double r, std::size_t n, double eps) {
  if (!(p >= 1.0) || !(r >= 1.0) || n == 0)
    throw std::invalid_argument("cross_norm_radius: need p, r >= 1 and n >= 1");
  if (r <= p) return eps;
  auto inv = [](double v) { return std::isinf(v) ? 0.0 : 1.0 / v; };
  return std::pow(static_cast<double>(n), inv(r) - inv(p)) * eps;
}

}  // namespace cav
