#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cav/network.hpp"
#include "cav/tensor.hpp"

namespace cav {

enum class AttackKind { kFgsm, kBim, kPgd, kDeepFool, kCwLinf, kUniform };
std::string to_string(AttackKind k);
AttackKind attack_kind(const std::string& name);  // throws std::invalid_argument
/// fgsm, bim, pgd and uniform take a radius and run inside eps_search.
bool takes_epsilon(AttackKind k);

struct AttackConfig {
  AttackKind kind = AttackKind::kPgd;

  // Radius search. search_steps == 0 skips the decay phase and bisects
  // [0, start_eps] directly.
  double start_eps = 1.0;
  double search_factor = 0.75;
  std::size_t search_steps = 30;
  std::size_t binary_steps = 20;

  // bim, pgd (sign steps of size lr); cw (max gradient steps per constant).
  std::size_t iterations = 100;
  double lr = 1e-3;
  bool random_init = false;  // pgd

  // deepfool
  std::size_t candidates = 10;
  double overshoot = 1e-5;

  // cw_linf
  double min_tau = 1e-5;
  double initial_tau = 1.0;
  double tau_factor = 0.95;
  double initial_const = 1e-5;
  double const_factor = 2.0;
  double max_const = 20.0;
  std::size_t tau_check_every = 1;
  bool warm_start = true;

  // uniform
  std::size_t runs = 1;

  std::size_t budget = 0;  // model calls per sample; 0 = unlimited
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
};

struct AttackResult {
  bool success = false;
  std::optional<Tensor> adversarial;
  double distance = std::numeric_limits<double>::infinity();  // L∞ to x, recomputed
  std::size_t label = 0;  // label of the adversarial example
  std::size_t calls = 0;  // forwards plus gradient evaluations
  bool budget_exhausted = false;
  bool aborted = false;  // non-finite gradient
};

/// Model access for one attack on one input. Counts every forward and every
/// backward pass as a call, refuses calls beyond the budget, and remembers
/// the nearest misclassified point it has evaluated.
class Oracle {
 public:
  Oracle(const Network& net, std::span<const double> x, std::size_t budget = 0);

  const Network& net() const { return net_; }
  std::span<const double> origin() const { return x_; }
  std::size_t clean_label() const { return clean_; }
  std::span<const double> clean_logits() const { return clean_logits_; }
  std::size_t calls() const { return calls_; }
  bool exhausted() const { return exhausted_; }
  bool aborted() const { return aborted_; }

  /// nullopt when the budget is spent.
  std::optional<std::vector<double>> logits(std::span<const double> p);
  /// nullopt when the budget is spent or the gradient is not finite.
  std::optional<LossGrad> grad(std::span<const double> p, const Loss& loss);
  /// Gradients of several losses from one forward; costs one call per loss.
  std::optional<std::vector<LossGrad>> grads(std::span<const double> p,
                                             std::span<const Loss> losses);

  /// Nearest misclassified point evaluated since the last take_best.
  AttackResult take_best();

 private:
  bool reserve(std::size_t n);
  void observe(std::span<const double> p, std::span<const double> logits);

  const Network& net_;
  std::vector<double> x_, clean_logits_;
  std::size_t budget_, calls_ = 0, clean_ = 0;
  bool exhausted_ = false, aborted_ = false;
  std::optional<std::vector<double>> best_;
  double best_dist_ = std::numeric_limits<double>::infinity();
  std::size_t best_label_ = 0;
};

// Single-radius runs. Each returns the nearest misclassified point observed.
AttackResult fgsm_at(Oracle& o, double eps, const std::vector<double>& grad_sign);
AttackResult bim_at(Oracle& o, double eps, const AttackConfig& cfg);
AttackResult pgd_at(Oracle& o, double eps, const AttackConfig& cfg, std::uint64_t run);
AttackResult uniform_at(Oracle& o, double eps, const AttackConfig& cfg, std::uint64_t run);

using EpsAttack = std::function<AttackResult(double eps)>;

/// Geometric decay from start_eps while the attack succeeds (continuing for
/// the configured steps when the first radius fails), then bisection between
/// the last failure and the last success. Returns the nearest success seen.
AttackResult eps_search(const EpsAttack& attack, const AttackConfig& cfg);

/// With eps set, fgsm/bim/pgd/uniform run once at that radius; otherwise
/// through eps_search. deepfool and cw_linf ignore eps.
AttackResult fgsm(const Network& net, std::span<const double> x, const AttackConfig& cfg,
                  std::optional<double> eps = std::nullopt);
AttackResult bim(const Network& net, std::span<const double> x, const AttackConfig& cfg,
                 std::optional<double> eps = std::nullopt);
AttackResult pgd(const Network& net, std::span<const double> x, const AttackConfig& cfg,
                 std::optional<double> eps = std::nullopt);
AttackResult uniform_noise(const Network& net, std::span<const double> x,
                           const AttackConfig& cfg, std::optional<double> eps = std::nullopt);
AttackResult deepfool(const Network& net, std::span<const double> x, const AttackConfig& cfg);
AttackResult cw_linf(const Network& net, std::span<const double> x, const AttackConfig& cfg);

AttackResult run_attack(const Network& net, std::span<const double> x, const AttackConfig& cfg,
                        std::optional<double> eps = std::nullopt);

/// Nearest success among `results` with calls summed; failure if all fail.
AttackResult best_of(std::span<const AttackResult> results);

struct PoolResult {
  AttackResult best;
  std::vector<AttackResult> members;  // same order as the configs
};
/// Throws std::invalid_argument on an empty pool.
PoolResult attack_pool(const Network& net, std::span<const double> x,
                       std::span<const AttackConfig> attacks);

/// Table values for strong, balanced, fast-100, fast-1k, fast-10k on mnist or
/// cifar10. Fast presets carry their call budget on every member.
std::vector<AttackConfig> preset(const std::string& name, const std::string& dataset);

// JSON keys: kind, initial_search_factor, initial_search_steps,
// binary_search_steps, starting_epsilon, iterations, learning_rate,
// random_initialization, candidates, overshoot, minimum_tau, initial_tau,
// tau_factor, initial_const, const_factor, maximum_const,
// tau_check_every_n_steps, warm_start, runs, budget, seed.
nlohmann::json to_json(const AttackConfig& cfg);
/// Keys present in `j` override `base`; unknown keys throw.
AttackConfig attack_config_from_json(const nlohmann::json& j, AttackConfig base = {});
/// {"preset": name, "dataset": name, "overrides": {kind: {...}}, "attacks": [kind...]}
/// or {"attacks": [{...}, ...]} for a fully explicit pool.
std::vector<AttackConfig> pool_from_json(const nlohmann::json& j);

}  // namespace cav
