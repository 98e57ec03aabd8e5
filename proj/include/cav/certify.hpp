#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cav/attacks.hpp"
#include "cav/milp.hpp"

namespace cav {

/// Correction b(h) = alpha1 * h + alpha0 mapping a heuristic distance to an
/// estimate of the exact one.
struct CalibrationModel {
  enum class Kind { kLinearLs, kQuantile };
  Kind kind = Kind::kLinearLs;
  double q = 0.5;  // quantile models only
  double alpha1 = 1.0, alpha0 = 0.0;
  double r2 = 0.0;                 // training-set R², 0 when exact_d has no variance
  double achieved_quantile = 0.0;  // training-set fraction with exact_d < prediction
  std::size_t points = 0;

  double predict(double heuristic_d) const { return alpha1 * heuristic_d + alpha0; }
};

/// (heuristic_d, exact_d)
using DistancePair = std::pair<double, double>;

CalibrationModel fit_linear_correction(std::span<const DistancePair> pairs);
/// Minimizes the pinball loss exactly as a linear program.
CalibrationModel fit_quantile_correction(std::span<const DistancePair> pairs, double q);

double r_squared(std::span<const DistancePair> pairs, const CalibrationModel& m);
/// Fraction of pairs whose exact distance lies strictly below the prediction.
double achieved_quantile(std::span<const DistancePair> pairs, const CalibrationModel& m);

nlohmann::json to_json(const CalibrationModel& m);
CalibrationModel calibration_from_json(const nlohmann::json& j);
void save_calibration(const CalibrationModel& m, const std::string& path);
CalibrationModel load_calibration(const std::string& path);

enum class Backend { kExact, kHeuristic, kLowerBound };
enum class Provenance { kExact, kHeuristicUpper, kRelaxationLower };
std::string to_string(Backend b);
std::string to_string(Provenance p);
Backend backend_from_string(const std::string& s);

struct CertifierConfig {
  double eps = 0.0;
  Backend backend = Backend::kExact;
  std::vector<AttackConfig> pool;  // heuristic backend
  std::optional<CalibrationModel> calibration;
  ExactOptions exact;  // eps_box and stop_at_first are set by certify

  void validate() const;  // throws std::invalid_argument
};

enum class Flag {
  kNone,
  kWithinEps,     // exact: d*(x) <= eps
  kAttackFound,   // heuristic: a verified adversarial example within eps
  kUnknown,       // lower bound not above eps, or the exact solve timed out
  kCalibrated,    // corrected heuristic distance within eps
};
std::string to_string(Flag f);

struct CaOutcome {
  std::size_t label = 0;  // network prediction; the verdict when not flagged
  Flag flag = Flag::kNone;
  double distance = 0.0;  // evidence: exact bound, pool distance or relaxation bound
  Provenance provenance = Provenance::kExact;
  std::optional<double> calibrated;  // alpha1 * distance + alpha0
  std::optional<Tensor> adversarial;  // witness behind a flag, when one exists

  bool flagged() const { return flag != Flag::kNone; }
};

CaOutcome certify(const Network& net, std::span<const double> x, const CertifierConfig& cfg);
/// Heuristic backend with the calibration applied: flag iff
/// alpha1 * pool_distance + alpha0 <= eps.
CaOutcome calibrated_certify(const Network& net, std::span<const double> x,
                             const CertifierConfig& cfg);

/// L^r radius within which a CA with L^p radius eps defeats attacks:
/// eps for r <= p, n^(1/r - 1/p) * eps for r > p, with 1/inf = 0.
double cross_norm_radius(double p, double r, std::size_t n, double eps);

}  // namespace cav
