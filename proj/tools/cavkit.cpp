// cavkit: command-line front end over the toolkit.
//
// Exit status: 0 success, 1 configuration or input error, 2 an acceptance
// threshold was violated (stats gates, ablation shape, reduction agreement).
// Options may also come from a TOML/INI file passed with --config; each
// subcommand reads its own [section].

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cav/certify.hpp"
#include "cav/gadgets.hpp"
#include "cav/harness.hpp"
#include "cav/train.hpp"

namespace {

using namespace cav;

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kThresholdViolation = 2;

struct SliceArgs {
  std::string data_dir;
  std::string split = "test";
  std::size_t offset = 0;
  std::size_t count = 10;

  void attach(CLI::App* app) {
    app->add_option("--data", data_dir, "Directory holding MNIST IDX files")->required();
    app->add_option("--split", split, "train or test")->capture_default_str();
    app->add_option("--offset", offset, "First sample index")->capture_default_str();
    app->add_option("--count", count, "Number of samples")->capture_default_str();
  }

  std::vector<std::size_t> indices(const Dataset& d) const {
    if (offset >= d.size()) throw std::invalid_argument("--offset beyond the dataset");
    std::vector<std::size_t> idx(std::min(count, d.size() - offset));
    std::iota(idx.begin(), idx.end(), offset);
    return idx;
  }
};

struct PoolArgs {
  std::string preset_name = "strong";
  std::string dataset = "mnist";
  std::string pool_file;

  void attach(CLI::App* app) {
    app->add_option("--pool", preset_name, "strong, balanced, fast-100, fast-1k, fast-10k")
        ->capture_default_str();
    app->add_option("--dataset", dataset, "Preset table: mnist or cifar10")->capture_default_str();
    app->add_option("--pool-file", pool_file, "JSON pool description (overrides --pool)");
  }

  std::vector<AttackConfig> load() const {
    if (pool_file.empty()) return preset(preset_name, dataset);
    std::ifstream in(pool_file);
    if (!in) throw std::invalid_argument("cannot read " + pool_file);
    return pool_from_json(nlohmann::json::parse(in));
  }
};

// Appends a newline unless `text` already ends with one.
void write_text(const std::string& path, const std::string& text) {
  const char* tail = !text.empty() && text.back() == '\n' ? "" : "\n";
  if (path.empty() || path == "-") {
    std::cout << text << tail;
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text << tail;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string arch = "mnist_b";
  std::string data_dir;
  std::string out;
  std::uint64_t init_seed = 1;
  TrainConfig cfg;
  double adv_eps = 0.0;
  AdversarialConfig adv;
};

int cmd_train(const TrainArgs& a) {
  Dataset train = load_mnist(a.data_dir, "train");
  Network net = architecture(a.arch, a.init_seed);
  TrainConfig cfg = a.cfg;
  TrainReport rep;
  if (a.adv_eps > 0.0) {
    cfg.adversarial = a.adv;
    cfg.adversarial->eps = a.adv_eps;
    rep = train_adversarial(net, train, cfg);
  } else {
    rep = train_standard(net, train, cfg);
  }
  save_network(net, a.out);
  nlohmann::json summary = {{"arch", a.arch},
                            {"epochs", cfg.epochs},
                            {"final_loss", rep.epoch_loss.empty() ? 0.0 : rep.epoch_loss.back()},
                            {"train_accuracy", accuracy(net, train)}};
  try {
    summary["test_accuracy"] = accuracy(net, load_mnist(a.data_dir, "test"));
  } catch (const FormatError&) {
  }
  std::cout << summary.dump() << "\n";
  return kOk;
}

// ---- attack / exact / stats -----------------------------------------------------

struct StatsGate {
  double min_r2 = -1.0;
  double max_overestimate_pct = -1.0;

  void attach(CLI::App* app) {
    app->add_option("--min-r2", min_r2, "Exit 2 when the linear-fit R² is below this");
    app->add_option("--max-overestimate", max_overestimate_pct,
                    "Exit 2 when the mean relative overestimate (%) exceeds this");
  }

  int check(const StatsReport& s) const {
    bool ok = s.dominance_violations == 0;
    if (min_r2 >= 0.0) ok = ok && s.used > 0 && s.fit.r2 >= min_r2;
    if (max_overestimate_pct >= 0.0) ok = ok && s.mean_overestimate_pct <= max_overestimate_pct;
    return ok ? kOk : kThresholdViolation;
  }
};

struct AttackArgs {
  SliceArgs slice;
  PoolArgs pool;
  std::string net_path, out, csv, stats_out;
  bool exact = false;
  double time_limit = 600.0;
  std::size_t workers = 0;
  StatsGate gate;
};

int finish_records(const std::vector<SampleRecord>& recs, const std::string& out,
                   const std::string& csv, const std::string& stats_out, const StatsGate& gate) {
  if (!out.empty()) save_records(recs, out);
  if (!csv.empty()) {
    std::ofstream f(csv);
    if (!f) throw std::runtime_error("cannot write " + csv);
    write_attack_csv(recs, f);
  }
  StatsReport s = compute_stats(recs);
  write_text(stats_out, to_json(s).dump(2));
  return gate.check(s);
}

int cmd_attack(const AttackArgs& a) {
  Network net = load_network(a.net_path);
  Dataset data = load_mnist(a.slice.data_dir, a.slice.split);
  CorpusOptions opt;
  opt.pool = a.pool.load();
  opt.run_exact = a.exact;
  opt.exact.time_limit = a.time_limit;
  opt.workers = a.workers;
  auto idx = a.slice.indices(data);
  auto recs = run_corpus(net, data, idx, opt);
  return finish_records(recs, a.out, a.csv, a.stats_out, a.gate);
}

struct ExactArgs {
  std::string net_path, records, out, csv, stats_out;
  double time_limit = 600.0;
  std::size_t workers = 0;
  StatsGate gate;
};

int cmd_exact(const ExactArgs& a) {
  Network net = load_network(a.net_path);
  auto recs = load_records(a.records);
  ExactOptions opt;
  opt.time_limit = a.time_limit;
  const int workers = static_cast<int>(a.workers ? a.workers : worker_count());
  const long n = static_cast<long>(recs.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers)
  for (long k = 0; k < n; ++k) {
    try {
      add_exact(net, recs[static_cast<std::size_t>(k)], opt);
    } catch (...) {
#pragma omp critical(cavkit_exact_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return finish_records(recs, a.out.empty() ? a.records : a.out, a.csv, a.stats_out, a.gate);
}

struct StatsArgs {
  std::string records, stats_out;
  std::vector<std::string> subset;
  ExclusionRule rule;
  StatsGate gate;
};

int cmd_stats(const StatsArgs& a) {
  auto recs = load_records(a.records);
  StatsReport s = compute_stats(recs, a.rule, a.subset);
  write_text(a.stats_out, to_json(s).dump(2));
  return a.gate.check(s);
}

// ---- certify / calibrate ------------------------------------------------------

struct CertifyArgs {
  SliceArgs slice;
  PoolArgs pool;
  std::string net_path, backend = "exact", calibration, out;
  double eps = 0.0;
  double time_limit = 600.0;
};

int cmd_certify(const CertifyArgs& a) {
  Network net = load_network(a.net_path);
  Dataset data = load_mnist(a.slice.data_dir, a.slice.split);
  CertifierConfig cfg;
  cfg.eps = a.eps;
  cfg.backend = backend_from_string(a.backend);
  if (cfg.backend == Backend::kHeuristic) cfg.pool = a.pool.load();
  if (!a.calibration.empty()) cfg.calibration = load_calibration(a.calibration);
  cfg.exact.time_limit = a.time_limit;
  cfg.validate();

  std::ostringstream lines;
  std::size_t flagged = 0, total = 0;
  for (std::size_t i : a.slice.indices(data)) {
    CaOutcome o = cfg.calibration ? calibrated_certify(net, data.inputs[i].values(), cfg)
                                  : certify(net, data.inputs[i].values(), cfg);
    ++total;
    flagged += o.flagged();
    nlohmann::json j = {{"sample_id", i},
                        {"label", o.label},
                        {"true_label", data.labels[i]},
                        {"flag", to_string(o.flag)},
                        {"distance", std::isfinite(o.distance) ? nlohmann::json(o.distance)
                                                               : nlohmann::json()},
                        {"provenance", to_string(o.provenance)}};
    if (o.calibrated) j["calibrated"] = *o.calibrated;
    lines << j.dump() << "\n";
  }
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw std::runtime_error("cannot write " + a.out);
    f << lines.str();
  }
  std::cout << nlohmann::json({{"samples", total},
                               {"flagged", flagged},
                               {"flag_rate", total ? double(flagged) / double(total) : 0.0}})
                   .dump()
            << "\n";
  return kOk;
}

struct CalibrateArgs {
  std::string records, kind = "linear", out;
  double q = 0.5;
};

int cmd_calibrate(const CalibrateArgs& a) {
  auto recs = load_records(a.records);
  // distance_pairs yields (pool, exact): heuristic first, exact target second.
  auto pairs = distance_pairs(recs);
  CalibrationModel m;
  if (a.kind == "linear") m = fit_linear_correction(pairs);
  else if (a.kind == "quantile") m = fit_quantile_correction(pairs, a.q);
  else throw std::invalid_argument("--kind must be linear or quantile");
  if (a.out.empty()) std::cout << to_json(m).dump(2) << "\n";
  else save_calibration(m, a.out);
  return kOk;
}

// ---- ablate / export / reduce -------------------------------------------------

struct AblateArgs {
  std::string records, out;
  std::size_t max_size = 6;
};

int cmd_ablate(const AblateArgs& a) {
  auto recs = load_records(a.records);
  AblationReport rep = ablate(recs, a.max_size);
  write_text(a.out, to_json(rep).dump(2));
  return rep.monotone ? kOk : kThresholdViolation;
}

struct ExportArgs {
  std::string records, out, csv;
};

int cmd_export(const ExportArgs& a) {
  auto recs = load_records(a.records);
  export_ug100(recs, a.out);
  if (!a.csv.empty()) {
    std::ofstream f(a.csv);
    if (!f) throw std::runtime_error("cannot write " + a.csv);
    write_attack_csv(recs, f);
  }
  return kOk;
}

struct ReduceArgs {
  std::string kind = "uatt", dimacs, out;
  std::size_t count = 10, min_vars = 3, max_vars = 6, max_clauses = 12;
  std::size_t n_x = 0;  // plrob/cca: 0 splits the variables in half
  std::uint64_t seed = 0;
};

int cmd_reduce(const ReduceArgs& a) {
  ReductionKind kind;
  if (a.kind == "uatt") kind = ReductionKind::kUatt;
  else if (a.kind == "plrob") kind = ReductionKind::kPlrob;
  else if (a.kind == "cca") kind = ReductionKind::kCca;
  else throw std::invalid_argument("--kind must be uatt, plrob or cca");
  if (a.min_vars == 0 || a.min_vars > a.max_vars || a.max_clauses == 0)
    throw std::invalid_argument("need 1 <= --min-vars <= --max-vars and --max-clauses >= 1");

  std::vector<Cnf3Formula> formulas;
  if (!a.dimacs.empty()) {
    std::ifstream in(a.dimacs);
    if (!in) throw std::invalid_argument("cannot read " + a.dimacs);
    formulas.push_back(parse_dimacs(std::string(std::istreambuf_iterator<char>(in), {})));
  } else {
    CounterRng rng(a.seed, 1);
    for (std::size_t i = 0; i < a.count; ++i) {
      std::size_t n = a.min_vars + rng.below(a.max_vars - a.min_vars + 1);
      std::size_t m = 1 + rng.below(a.max_clauses);
      formulas.push_back(random_cnf3(n, m, a.seed * 1000003 + i));
    }
  }

  std::ostringstream lines;
  std::size_t disagree = 0;
  for (const auto& f : formulas) {
    ReductionParams p;
    if (kind != ReductionKind::kUatt) {
      std::size_t nx = a.n_x ? std::min(a.n_x, f.num_vars) : (f.num_vars + 1) / 2;
      p.split = {nx, f.num_vars - nx};
    }
    ReductionReport r = verify_reduction(kind, f, p);
    disagree += !r.agree;
    lines << r.to_json() << "\n";
  }
  write_text(a.out, lines.str());
  std::cerr << formulas.size() - disagree << "/" << formulas.size() << " agree\n";
  return disagree ? kThresholdViolation : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counter-attack verification toolkit"};
  app.set_config("--config", "", "TOML/INI file with options per subcommand");
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a network on MNIST IDX data");
  t->add_option("--arch", train.arch, "mnist_a|b|c, cifar_a|b|c")->capture_default_str();
  t->add_option("--data", train.data_dir, "Directory holding MNIST IDX files")->required();
  t->add_option("--out", train.out, "Output network file")->required();
  t->add_option("--init-seed", train.init_seed)->capture_default_str();
  t->add_option("--seed", train.cfg.seed)->capture_default_str();
  t->add_option("--epochs", train.cfg.epochs)->capture_default_str();
  t->add_option("--lr", train.cfg.lr)->capture_default_str();
  t->add_option("--batch", train.cfg.batch_size)->capture_default_str();
  t->add_option("--flip", train.cfg.flip)->capture_default_str();
  t->add_option("--translate", train.cfg.translate)->capture_default_str();
  t->add_option("--rotate", train.cfg.rotate_deg)->capture_default_str();
  t->add_option("--adv-eps", train.adv_eps, "PGD adversarial training radius (0: standard)");
  t->add_option("--adv-iterations", train.adv.iterations)->capture_default_str();
  t->add_option("--adv-lr", train.adv.lr)->capture_default_str();

  AttackArgs attack;
  auto* at = app.add_subcommand("attack", "Run an attack pool over a dataset slice");
  attack.slice.attach(at);
  attack.pool.attach(at);
  at->add_option("--net", attack.net_path)->required();
  at->add_option("--out", attack.out, "Records (JSON lines)");
  at->add_option("--csv", attack.csv, "Per-attack CSV");
  at->add_option("--stats", attack.stats_out, "Stats JSON (stdout when omitted)");
  at->add_flag("--exact", attack.exact, "Also solve the exact distance");
  at->add_option("--time-limit", attack.time_limit)->capture_default_str();
  at->add_option("--workers", attack.workers, "0: CAV_WORKERS or all cores");
  attack.gate.attach(at);

  ExactArgs exact;
  auto* ex = app.add_subcommand("exact", "Add exact distances to attack records");
  ex->add_option("--net", exact.net_path)->required();
  ex->add_option("--records", exact.records)->required();
  ex->add_option("--out", exact.out, "Defaults to rewriting --records");
  ex->add_option("--csv", exact.csv);
  ex->add_option("--stats", exact.stats_out);
  ex->add_option("--time-limit", exact.time_limit)->capture_default_str();
  ex->add_option("--workers", exact.workers);
  exact.gate.attach(ex);

  StatsArgs stats;
  auto* st = app.add_subcommand("stats", "Summarize records");
  st->add_option("--records", stats.records)->required();
  st->add_option("--out", stats.stats_out);
  st->add_option("--attacks", stats.subset, "Restrict the pool to these attacks");
  st->add_option("--atol", stats.rule.atol)->capture_default_str();
  st->add_option("--rtol", stats.rule.rtol)->capture_default_str();
  stats.gate.attach(st);

  CertifyArgs cert;
  auto* ce = app.add_subcommand("certify", "Counter-attack over a dataset slice");
  cert.slice.attach(ce);
  cert.pool.attach(ce);
  ce->add_option("--net", cert.net_path)->required();
  ce->add_option("--eps", cert.eps)->required();
  ce->add_option("--backend", cert.backend, "exact, heuristic or lower_bound")
      ->capture_default_str();
  ce->add_option("--calibration", cert.calibration, "Calibration JSON (heuristic backend)");
  ce->add_option("--time-limit", cert.time_limit)->capture_default_str();
  ce->add_option("--out", cert.out, "Outcomes (JSON lines)");

  CalibrateArgs cal;
  auto* ca = app.add_subcommand("calibrate", "Fit a distance correction on records");
  ca->add_option("--records", cal.records)->required();
  ca->add_option("--kind", cal.kind, "linear or quantile")->capture_default_str();
  ca->add_option("--q", cal.q)->capture_default_str();
  ca->add_option("--out", cal.out);

  AblateArgs abl;
  auto* ab = app.add_subcommand("ablate", "Best pool per size by R²");
  ab->add_option("--records", abl.records)->required();
  ab->add_option("--max-size", abl.max_size)->capture_default_str();
  ab->add_option("--out", abl.out);

  ReduceArgs red;
  auto* re = app.add_subcommand("reduce", "Check SAT reductions against brute force");
  re->add_option("--kind", red.kind, "uatt, plrob or cca")->capture_default_str();
  re->add_option("--dimacs", red.dimacs, "Single formula instead of random ones");
  re->add_option("--count", red.count)->capture_default_str();
  re->add_option("--min-vars", red.min_vars)->capture_default_str();
  re->add_option("--max-vars", red.max_vars)->capture_default_str();
  re->add_option("--max-clauses", red.max_clauses)->capture_default_str();
  re->add_option("--nx", red.n_x, "Size of the x-hat block for plrob/cca");
  re->add_option("--seed", red.seed)->capture_default_str();
  re->add_option("--out", red.out);

  ExportArgs exp;
  auto* eo = app.add_subcommand("export", "Write records as a UG100-style directory tree");
  eo->add_option("--records", exp.records)->required();
  eo->add_option("--out", exp.out)->required();
  eo->add_option("--csv", exp.csv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*t) return cmd_train(train);
    if (*at) return cmd_attack(attack);
    if (*ex) return cmd_exact(exact);
    if (*st) return cmd_stats(stats);
    if (*ce) return cmd_certify(cert);
    if (*ca) return cmd_calibrate(cal);
    if (*ab) return cmd_ablate(abl);
    if (*re) return cmd_reduce(red);
    if (*eo) return cmd_export(exp);
  } catch (const std::exception& e) {
    std::cerr << "cavkit: " << e.what() << "\n";
    return kConfigError;
  }
  return kConfigError;
}
