#include "cav/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <stdexcept>

namespace cav {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool in_subset(const std::string& name, std::span<const std::string> subset) {
  return subset.empty() || std::find(subset.begin(), subset.end(), name) != subset.end();
}

// JSON has no infinity; +inf travels as null.
nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }
double num_or_inf(const nlohmann::json& j) { return j.is_null() ? kInf : j.get<double>(); }

enum class Use { kUsed, kNoExact, kNonTight, kPoolFailed };

Use classify_record(const SampleRecord& r, const ExclusionRule& rule,
                    std::span<const std::string> subset) {
  if (!r.exact) return Use::kNoExact;
  const ExactRecord& e = *r.exact;
  if (e.status != "optimal" || !is_tight(e.lower, e.distance, rule.atol, rule.rtol))
    return Use::kNonTight;
  if (!r.pool_success(subset)) return Use::kPoolFailed;
  return Use::kUsed;
}

nlohmann::json attack_meta(const AttackRecord& a) {
  return {{"attack", a.attack}, {"success", a.success}, {"distance", num(a.distance)},
          {"label", a.label},   {"calls", a.calls},     {"wall_ms", a.wall_ms}};
}

AttackRecord attack_from_meta(const nlohmann::json& j) {
  AttackRecord a;
  a.attack = j.at("attack").get<std::string>();
  a.success = j.at("success").get<bool>();
  a.distance = num_or_inf(j.at("distance"));
  a.label = j.at("label").get<std::size_t>();
  a.calls = j.at("calls").get<std::size_t>();
  a.wall_ms = j.at("wall_ms").get<double>();
  return a;
}

nlohmann::json exact_meta(const ExactRecord& e) {
  return {{"status", e.status},   {"distance", num(e.distance)},
          {"lower", num(e.lower)}, {"gap", num(e.gap())},
          {"tight", e.tight},     {"witness_label", e.witness_label},
          {"nodes", e.nodes},     {"wall_ms", e.wall_ms}};
}

ExactRecord exact_from_meta(const nlohmann::json& j) {
  ExactRecord e;
  e.status = j.at("status").get<std::string>();
  e.distance = num_or_inf(j.at("distance"));
  e.lower = num_or_inf(j.at("lower"));
  e.tight = j.at("tight").get<bool>();
  e.witness_label = j.at("witness_label").get<std::size_t>();
  e.nodes = j.at("nodes").get<std::size_t>();
  e.wall_ms = j.at("wall_ms").get<double>();
  return e;
}

nlohmann::json record_meta(const SampleRecord& r) {
  nlohmann::json j = {{"sample_id", r.sample_id}, {"label", r.label}, {"shape", r.shape}};
  j["true_label"] = r.true_label ? nlohmann::json(*r.true_label) : nlohmann::json();
  j["pool_distance"] = num(r.pool_distance());
  j["attacks"] = nlohmann::json::array();
  for (const auto& a : r.attacks) j["attacks"].push_back(attack_meta(a));
  j["exact"] = r.exact ? exact_meta(*r.exact) : nlohmann::json();
  return j;
}

SampleRecord record_from_meta(const nlohmann::json& j) {
  SampleRecord r;
  r.sample_id = j.at("sample_id").get<std::size_t>();
  r.label = j.at("label").get<std::size_t>();
  if (!j.at("true_label").is_null()) r.true_label = j.at("true_label").get<std::size_t>();
  r.shape = j.at("shape").get<Shape>();
  for (const auto& a : j.at("attacks")) r.attacks.push_back(attack_from_meta(a));
  if (!j.at("exact").is_null()) r.exact = exact_from_meta(j.at("exact"));
  return r;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return nlohmann::json::parse(in);
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump() << "\n";
}

}  // namespace

double SampleRecord::pool_distance(std::span<const std::string> subset) const {
  double best = kInf;
  for (const auto& a : attacks)
    if (a.success && in_subset(a.attack, subset)) best = std::min(best, a.distance);
  return best;
}

bool SampleRecord::pool_success(std::span<const std::string> subset) const {
  for (const auto& name : subset)
    if (std::none_of(attacks.begin(), attacks.end(),
                     [&](const AttackRecord& a) { return a.attack == name; }))
      return false;
  return std::isfinite(pool_distance(subset));
}

std::size_t worker_count() {
  if (const char* env = std::getenv("CAV_WORKERS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return static_cast<std::size_t>(omp_get_max_threads());
}

SampleRecord run_sample(const Network& net, const Tensor& x, std::size_t sample_id,
                        std::span<const AttackConfig> pool) {
  SampleRecord rec;
  rec.sample_id = sample_id;
  rec.shape = x.shape();
  rec.input = x.data();
  rec.label = net.classify(x.values());
  for (const AttackConfig& cfg : pool) {
    auto t0 = Clock::now();
    AttackResult r = run_attack(net, x.values(), cfg);
    AttackRecord a;
    a.attack = to_string(cfg.kind);
    a.success = r.success;
    a.distance = r.distance;
    a.label = r.label;
    a.calls = r.calls;
    a.wall_ms = ms_since(t0);
    if (r.adversarial) a.adversarial = r.adversarial->data();
    rec.attacks.push_back(std::move(a));
  }
  return rec;
}

void add_exact(const Network& net, SampleRecord& rec, const ExactOptions& opt) {
  std::optional<PoolHint> hint;
  const AttackRecord* best = nullptr;
  for (const auto& a : rec.attacks)
    if (a.success && (!best || a.distance < best->distance)) best = &a;
  if (best) hint = PoolHint{best->distance, best->adversarial};
  auto t0 = Clock::now();
  ExactResult r = exact_distance(net, rec.input, hint, opt);
  ExactRecord e;
  e.status = to_string(r.status);
  e.distance = r.distance;
  e.lower = r.lower;
  e.tight = r.tight;
  e.witness = r.witness;
  e.witness_label = r.witness_label;
  e.nodes = r.nodes;
  e.wall_ms = ms_since(t0);
  rec.exact = std::move(e);
}

std::vector<SampleRecord> run_corpus(const Network& net, const Dataset& data,
                                     std::span<const std::size_t> indices,
                                     const CorpusOptions& opt) {
  for (std::size_t i : indices)
    if (i >= data.size()) throw std::out_of_range("run_corpus: sample index out of range");
  std::vector<SampleRecord> out(indices.size());
  const int workers = static_cast<int>(opt.workers ? opt.workers : worker_count());
  std::exception_ptr error;
  const long n = static_cast<long>(indices.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers)
  for (long k = 0; k < n; ++k) {
    try {
      std::size_t i = indices[static_cast<std::size_t>(k)];
      SampleRecord rec = run_sample(net, data.inputs[i], i, opt.pool);
      rec.true_label = data.labels[i];
      if (opt.run_exact) add_exact(net, rec, opt.exact);
      out[static_cast<std::size_t>(k)] = std::move(rec);
    } catch (...) {
#pragma omp critical(cav_corpus_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

std::vector<DistancePair> distance_pairs(std::span<const SampleRecord> records,
                                         const ExclusionRule& rule,
                                         std::span<const std::string> subset) {
  std::vector<DistancePair> pairs;
  for (const auto& r : records)
    if (classify_record(r, rule, subset) == Use::kUsed)
      pairs.emplace_back(r.pool_distance(subset), r.exact->distance);
  return pairs;
}

StatsReport compute_stats(std::span<const SampleRecord> records, const ExclusionRule& rule,
                          std::span<const std::string> subset) {
  StatsReport s;
  s.total = records.size();
  for (const auto& r : records) {
    switch (classify_record(r, rule, subset)) {
      case Use::kNoExact: ++s.excluded_no_exact; break;
      case Use::kNonTight: ++s.excluded_non_tight; break;
      case Use::kPoolFailed: ++s.excluded_pool_failed; break;
      case Use::kUsed: break;
    }
  }
  std::vector<DistancePair> pairs = distance_pairs(records, rule, subset);
  s.used = pairs.size();
  if (pairs.empty()) return s;

  double n = static_cast<double>(pairs.size());
  double sum_rel = 0.0, sum_pool = 0.0, sum_exact = 0.0;
  std::size_t below = 0;
  std::vector<double> rel;
  for (const auto& [pool, exact] : pairs) {
    rel.push_back(exact > 0.0 ? 100.0 * (pool - exact) / exact : 0.0);
    sum_rel += rel.back();
    sum_pool += pool;
    sum_exact += exact;
    below += std::abs(pool - exact) < 1.0 / 255.0;
    s.dominance_violations += pool < exact - rule.atol;
  }
  s.mean_overestimate_pct = sum_rel / n;
  double var = 0.0;
  for (double v : rel) var += (v - s.mean_overestimate_pct) * (v - s.mean_overestimate_pct);
  s.std_overestimate_pct = pairs.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  s.ratio_of_means_pct = sum_exact > 0.0 ? 100.0 * (sum_pool / sum_exact - 1.0) : 0.0;
  s.frac_below_grid = static_cast<double>(below) / n;
  std::vector<DistancePair> swapped;
  for (const auto& [pool, exact] : pairs) swapped.emplace_back(exact, pool);
  s.fit = fit_linear_correction(swapped);
  return s;
}

AblationReport ablate(std::span<const SampleRecord> records, std::size_t max_size,
                      const ExclusionRule& rule) {
  std::set<std::string> unique;
  for (const auto& r : records)
    for (const auto& a : r.attacks) unique.insert(a.attack);
  std::vector<std::string> names(unique.begin(), unique.end());
  if (names.size() > 20) throw std::invalid_argument("ablate: too many distinct attacks");

  // Samples with a tight exact distance; the pool itself is judged per subset.
  std::vector<const SampleRecord*> base;
  for (const auto& r : records)
    if (r.exact && r.exact->status == "optimal" &&
        is_tight(r.exact->lower, r.exact->distance, rule.atol, rule.rtol))
      base.push_back(&r);

  AblationReport rep;
  max_size = std::min(max_size, names.size());
  for (std::size_t size = 1; size <= max_size; ++size) {
    AblationRow row;
    row.size = size;
    row.r2 = -kInf;
    for (std::uint32_t mask = 1; mask < (1u << names.size()); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != size) continue;
      std::vector<std::string> subset;
      for (std::size_t i = 0; i < names.size(); ++i)
        if (mask >> i & 1u) subset.push_back(names[i]);
      std::vector<DistancePair> pairs;
      bool all = !base.empty();
      for (const SampleRecord* r : base) {
        if (!r->pool_success(subset)) {
          all = false;
          break;
        }
        pairs.emplace_back(r->pool_distance(subset), r->exact->distance);
      }
      if (!all) continue;
      ++row.candidates;
      double r2 = fit_linear_correction(pairs).r2;
      if (r2 > row.r2) {
        row.r2 = r2;
        row.members = subset;
      }
    }
    if (row.candidates > 0) rep.rows.push_back(std::move(row));
  }
  for (std::size_t i = 1; i < rep.rows.size(); ++i)
    if (rep.rows[i].r2 < rep.rows[i - 1].r2 - 1e-12) rep.monotone = false;
  return rep;
}

nlohmann::json to_json(const SampleRecord& r) {
  nlohmann::json j = record_meta(r);
  j["input"] = r.input;
  for (std::size_t k = 0; k < r.attacks.size(); ++k)
    j["attacks"][k]["adversarial"] = r.attacks[k].adversarial;
  if (r.exact) j["exact"]["witness"] = r.exact->witness;
  return j;
}

SampleRecord record_from_json(const nlohmann::json& j) {
  SampleRecord r = record_from_meta(j);
  r.input = j.at("input").get<std::vector<double>>();
  if (r.input.size() != shape_size(r.shape))
    throw std::invalid_argument("record: input size does not match shape");
  for (std::size_t k = 0; k < r.attacks.size(); ++k)
    r.attacks[k].adversarial = j.at("attacks")[k].value("adversarial", std::vector<double>{});
  if (r.exact) r.exact->witness = j.at("exact").value("witness", std::vector<double>{});
  return r;
}

nlohmann::json to_json(const StatsReport& s) {
  return {{"total", s.total},
          {"used", s.used},
          {"excluded_no_exact", s.excluded_no_exact},
          {"excluded_non_tight", s.excluded_non_tight},
          {"excluded_pool_failed", s.excluded_pool_failed},
          {"mean_overestimate_pct", s.mean_overestimate_pct},
          {"std_overestimate_pct", s.std_overestimate_pct},
          {"ratio_of_means_pct", s.ratio_of_means_pct},
          {"frac_below_grid", s.frac_below_grid},
          {"fit", to_json(s.fit)},
          {"dominance_violations", s.dominance_violations}};
}

nlohmann::json to_json(const AblationReport& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : a.rows)
    rows.push_back(
        {{"size", r.size}, {"candidates", r.candidates}, {"members", r.members}, {"r2", r.r2}});
  return {{"rows", rows}, {"monotone", a.monotone}};
}

void save_records(std::span<const SampleRecord> records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& r : records) out << to_json(r).dump() << "\n";
}

std::vector<SampleRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<SampleRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(record_from_json(nlohmann::json::parse(line)));
  return out;
}

void write_attack_csv(std::span<const SampleRecord> records, std::ostream& out) {
  out << "sample_id,attack,success,distance,calls,wall_ms\n";
  const auto precision = out.precision();
  for (const auto& r : records)
    for (const auto& a : r.attacks) {
      out << r.sample_id << ',' << a.attack << ',' << (a.success ? 1 : 0) << ',';
      out << std::setprecision(17) << (a.success ? a.distance : kInf) << std::setprecision(precision);
      out << ',' << a.calls << ',' << a.wall_ms << '\n';
    }
}

void export_ug100(std::span<const SampleRecord> records, const std::string& out_dir) {
  fs::create_directories(out_dir);
  nlohmann::json index = nlohmann::json::array();
  for (const auto& r : records) {
    std::string name = "sample_" + std::to_string(r.sample_id);
    fs::path dir = fs::path(out_dir) / name;
    fs::create_directories(dir);
    write_json(dir / "clean.json", {{"shape", r.shape}, {"label", r.label}, {"values", r.input}});
    nlohmann::json meta = record_meta(r);
    for (std::size_t k = 0; k < r.attacks.size(); ++k) {
      const AttackRecord& a = r.attacks[k];
      if (a.adversarial.empty()) continue;
      // Index prefix keeps two members of the same kind apart.
      std::string file = std::to_string(k) + "_" + a.attack + ".json";
      write_json(dir / file, {{"label", a.label}, {"distance", num(a.distance)},
                              {"values", a.adversarial}});
      meta["attacks"][k]["file"] = file;
    }
    if (r.exact && !r.exact->witness.empty()) {
      write_json(dir / "exact.json", {{"label", r.exact->witness_label},
                                      {"distance", num(r.exact->distance)},
                                      {"values", r.exact->witness}});
      meta["exact"]["file"] = "exact.json";
    }
    write_json(dir / "metadata.json", meta);
    index.push_back(name);
  }
  write_json(fs::path(out_dir) / "index.json", index);
}

std::vector<SampleRecord> import_ug100(const std::string& dir) {
  std::vector<SampleRecord> out;
  for (const auto& name : read_json(fs::path(dir) / "index.json")) {
    fs::path sd = fs::path(dir) / name.get<std::string>();
    nlohmann::json meta = read_json(sd / "metadata.json");
    SampleRecord r = record_from_meta(meta);
    r.input = read_json(sd / "clean.json").at("values").get<std::vector<double>>();
    for (std::size_t k = 0; k < r.attacks.size(); ++k)
      if (meta["attacks"][k].contains("file"))
        r.attacks[k].adversarial = read_json(sd / meta["attacks"][k]["file"].get<std::string>())
                                       .at("values")
                                       .get<std::vector<double>>();
    if (r.exact && meta["exact"].contains("file"))
      r.exact->witness = read_json(sd / "exact.json").at("values").get<std::vector<double>>();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace cav
