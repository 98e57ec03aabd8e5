#pragma once

// Evaluation pipeline: run an attack pool and the exact solver over a corpus,
// summarize how well the pool approximates the decision boundary distance,
// and persist everything as JSON lines, CSV or a UG100-style directory tree.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cav/attacks.hpp"
#include "cav/certify.hpp"
#include "cav/milp.hpp"
#include "cav/train.hpp"

namespace cav {

struct AttackRecord {
  std::string attack;
  bool success = false;
  double distance = kInf;
  std::size_t label = 0;
  std::size_t calls = 0;
  double wall_ms = 0.0;
  std::vector<double> adversarial;  // empty on failure
};

struct ExactRecord {
  std::string status;
  double distance = kInf;  // upper bound, exact when tight
  double lower = 0.0;
  bool tight = false;
  std::vector<double> witness;
  std::size_t witness_label = 0;
  std::size_t nodes = 0;
  double wall_ms = 0.0;

  double gap() const { return distance - lower; }
};

struct SampleRecord {
  std::size_t sample_id = 0;
  std::size_t label = 0;                    // network prediction on the clean input
  std::optional<std::size_t> true_label;    // dataset label
  Shape shape;
  std::vector<double> input;
  std::vector<AttackRecord> attacks;
  std::optional<ExactRecord> exact;

  /// Nearest success among the named attacks (all attacks when `subset` is
  /// empty); +inf when none succeeded.
  double pool_distance(std::span<const std::string> subset = {}) const;
  /// Every attack in `subset` is present; at least one succeeded.
  bool pool_success(std::span<const std::string> subset = {}) const;
};

/// CAV_WORKERS when set to a positive integer, else the OpenMP default.
std::size_t worker_count();

SampleRecord run_sample(const Network& net, const Tensor& x, std::size_t sample_id,
                        std::span<const AttackConfig> pool);
/// Solves the exact distance with the pool's nearest success as the hint.
void add_exact(const Network& net, SampleRecord& rec, const ExactOptions& opt);

struct CorpusOptions {
  std::vector<AttackConfig> pool;
  bool run_exact = true;
  ExactOptions exact;
  std::size_t workers = 0;  // 0: worker_count()
};
/// Samples are independent work items; the result order follows `indices`.
std::vector<SampleRecord> run_corpus(const Network& net, const Dataset& data,
                                     std::span<const std::size_t> indices,
                                     const CorpusOptions& opt);

/// Samples enter the statistics only when the exact solve is optimal and
/// lower/upper agree within max(atol, rtol * |upper|).
struct ExclusionRule {
  double atol = 1e-5;
  double rtol = 1e-10;
};

struct StatsReport {
  std::size_t total = 0, used = 0;
  std::size_t excluded_no_exact = 0, excluded_non_tight = 0, excluded_pool_failed = 0;
  double mean_overestimate_pct = 0.0;  // mean of 100 (pool - exact) / exact
  double std_overestimate_pct = 0.0;
  double ratio_of_means_pct = 0.0;     // 100 (mean pool / mean exact - 1)
  double frac_below_grid = 0.0;        // |pool - exact| < 1/255
  CalibrationModel fit;                // pool ~ alpha1 * exact + alpha0
  std::size_t dominance_violations = 0;  // pool < exact - atol
};

/// Statistics over the pool restricted to `subset` (all attacks when empty).
StatsReport compute_stats(std::span<const SampleRecord> records, const ExclusionRule& rule = {},
                          std::span<const std::string> subset = {});
/// (pool, exact) for the samples compute_stats would use.
std::vector<DistancePair> distance_pairs(std::span<const SampleRecord> records,
                                         const ExclusionRule& rule = {},
                                         std::span<const std::string> subset = {});

struct AblationRow {
  std::size_t size = 0;
  std::size_t candidates = 0;  // subsets of this size with a 100% success rate
  std::vector<std::string> members;
  double r2 = 0.0;
};
struct AblationReport {
  std::vector<AblationRow> rows;  // sizes with at least one candidate
  bool monotone = true;           // best R² non-decreasing in size
};
AblationReport ablate(std::span<const SampleRecord> records, std::size_t max_size,
                      const ExclusionRule& rule = {});

nlohmann::json to_json(const SampleRecord& r);
SampleRecord record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StatsReport& s);
nlohmann::json to_json(const AblationReport& a);

void save_records(std::span<const SampleRecord> records, const std::string& path);  // JSON lines
std::vector<SampleRecord> load_records(const std::string& path);

/// Columns: sample_id, attack, success, distance, calls, wall_ms.
void write_attack_csv(std::span<const SampleRecord> records, std::ostream& out);

/// One directory per sample holding clean.json, <attack>.json for every
/// success, exact.json when a witness exists, and metadata.json.
void export_ug100(std::span<const SampleRecord> records, const std::string& out_dir);
std::vector<SampleRecord> import_ug100(const std::string& dir);

}  // namespace cav
