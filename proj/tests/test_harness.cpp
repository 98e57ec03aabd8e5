#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "cav/harness.hpp"
#include "helpers.hpp"

using namespace cav;
using namespace cav::testing;

namespace {

ExactRecord tight_exact(double d) {
  ExactRecord e;
  e.status = "optimal";
  e.distance = d;
  e.lower = d;
  e.tight = true;
  return e;
}

SampleRecord make_record(std::size_t id, std::optional<ExactRecord> exact,
                         std::vector<std::pair<std::string, double>> attacks) {
  SampleRecord r;
  r.sample_id = id;
  r.shape = {2};
  r.input = {0.25, 0.5};
  for (const auto& [name, d] : attacks) {
    AttackRecord a;
    a.attack = name;
    a.success = std::isfinite(d);
    a.distance = d;
    a.calls = 7;
    if (a.success) {
      a.adversarial = {0.25 + d, 0.5};
      a.label = 1;
    }
    r.attacks.push_back(a);
  }
  r.exact = std::move(exact);
  return r;
}

std::vector<SampleRecord> scaled_corpus(double factor) {
  std::vector<SampleRecord> recs;
  for (int i = 1; i <= 10; ++i) {
    double e = 0.01 * i;
    recs.push_back(make_record(i, tight_exact(e), {{"pgd", factor * e}, {"fgsm", 3.0 * e}}));
  }
  return recs;
}

}  // namespace

TEST_CASE("stats when the pool matches the exact distance") {
  auto recs = scaled_corpus(1.0);
  StatsReport s = compute_stats(recs);
  CHECK(s.used == 10);
  CHECK(s.mean_overestimate_pct == 0.0);
  CHECK(s.ratio_of_means_pct == doctest::Approx(0.0));
  CHECK(s.frac_below_grid == 1.0);
  CHECK(s.fit.r2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.fit.alpha1 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.dominance_violations == 0);
}

TEST_CASE("stats when the pool overestimates by ten percent") {
  auto recs = scaled_corpus(1.1);
  StatsReport s = compute_stats(recs);
  CHECK(s.mean_overestimate_pct == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(s.std_overestimate_pct < 1e-9);
  CHECK(s.ratio_of_means_pct == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(s.fit.r2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.fit.alpha1 == doctest::Approx(1.1).epsilon(1e-12));
  CHECK(std::abs(s.fit.alpha0) < 1e-14);
  // 0.1 * e >= 1/255 only for e >= 0.0393
  CHECK(s.frac_below_grid == doctest::Approx(0.3));

  std::vector<std::string> only_fgsm{"fgsm"};
  StatsReport f = compute_stats(recs, {}, only_fgsm);
  CHECK(f.mean_overestimate_pct == doctest::Approx(200.0).epsilon(1e-12));
}

TEST_CASE("stats on hand-built records match a hand calculation") {
  std::vector<SampleRecord> recs{
      make_record(0, tight_exact(0.1), {{"pgd", 0.11}, {"bim", kInf}}),
      make_record(1, tight_exact(0.2), {{"pgd", 0.2}, {"bim", 0.3}}),
      make_record(2, tight_exact(0.4), {{"pgd", 0.55}, {"bim", 0.5}}),
  };
  ExactRecord loose = tight_exact(0.3);
  loose.lower = 0.2;
  recs.push_back(make_record(3, loose, {{"pgd", 0.3}}));
  ExactRecord timeout = tight_exact(0.3);
  timeout.status = "timeout";
  recs.push_back(make_record(4, timeout, {{"pgd", 0.3}}));
  recs.push_back(make_record(5, std::nullopt, {{"pgd", 0.3}}));
  recs.push_back(make_record(6, tight_exact(0.3), {{"pgd", kInf}}));

  StatsReport s = compute_stats(recs);
  CHECK(s.total == 7);
  CHECK(s.used == 3);
  CHECK(s.excluded_non_tight == 2);
  CHECK(s.excluded_no_exact == 1);
  CHECK(s.excluded_pool_failed == 1);
  // relative overestimates 10%, 0%, 25%
  CHECK(s.mean_overestimate_pct == doctest::Approx(35.0 / 3.0).epsilon(1e-12));
  CHECK(s.std_overestimate_pct == doctest::Approx(std::sqrt(475.0 / 3.0)).epsilon(1e-12));
  CHECK(s.ratio_of_means_pct == doctest::Approx(100.0 * (0.81 / 0.7 - 1.0)).epsilon(1e-12));
  CHECK(s.frac_below_grid == doctest::Approx(1.0 / 3.0));
  // pool on exact: points (0.1, 0.11), (0.2, 0.2), (0.4, 0.5)
  CHECK(s.fit.alpha1 == doctest::Approx(93.0 / 70.0).epsilon(1e-12));
  CHECK(s.fit.r2 <= 1.0);

  std::vector<std::string> only_bim{"bim"};
  StatsReport b = compute_stats(recs, {}, only_bim);
  CHECK(b.used == 2);  // bim failed on sample 0 and is absent from 3..6
  CHECK(b.excluded_pool_failed == 2);
}

TEST_CASE("dominance violations are counted beyond the tolerance") {
  std::vector<SampleRecord> recs{make_record(0, tight_exact(0.1), {{"pgd", 0.1 - 1e-6}}),
                                 make_record(1, tight_exact(0.1), {{"pgd", 0.09}})};
  CHECK(compute_stats(recs).dominance_violations == 1);
}

TEST_CASE("ablation picks the best subset per size") {
  std::vector<SampleRecord> recs;
  CounterRng rng(3);
  for (int i = 1; i <= 12; ++i) {
    double e = 0.01 * i;
    // pgd is a clean multiple of the exact distance, fgsm is noisy and
    // larger, cw fails on one sample.
    double cw = i == 5 ? kInf : 1.05 * e + 0.003;
    recs.push_back(make_record(i, tight_exact(e),
                               {{"pgd", 1.2 * e}, {"fgsm", 2.0 * e + rng.uniform(0, 0.05)}, {"cw", cw}}));
  }
  AblationReport a = ablate(recs, 3);
  REQUIRE(a.rows.size() == 3);
  CHECK(a.rows[0].candidates == 2);  // cw alone misses a sample
  CHECK(a.rows[0].members == std::vector<std::string>{"pgd"});
  CHECK(a.rows[0].r2 == doctest::Approx(1.0));
  CHECK(a.rows[1].candidates == 3);
  CHECK(a.rows[2].candidates == 1);
  CHECK(a.monotone == (a.rows[1].r2 >= 1.0 - 1e-12 && a.rows[2].r2 >= 1.0 - 1e-12));

  std::vector<SampleRecord> bad;
  for (int i = 1; i <= 12; ++i) {
    double e = 0.01 * i;
    // a scales exactly; b undercuts a by a noisy amount, so {a, b} fits worse.
    bad.push_back(make_record(i, tight_exact(e), {{"a", 2.0 * e}, {"b", 1.5 * e + (i % 3) * 0.01}}));
  }
  AblationReport nb = ablate(bad, 2);
  REQUIRE(nb.rows.size() == 2);
  CHECK(nb.rows[0].members == std::vector<std::string>{"a"});
  CHECK(nb.rows[1].r2 < nb.rows[0].r2);
  CHECK_FALSE(nb.monotone);
}

TEST_CASE("record JSON lines round-trip") {
  std::vector<SampleRecord> recs{make_record(4, tight_exact(0.125), {{"pgd", 0.2}, {"cw", kInf}})};
  recs[0].true_label = 3;
  recs[0].exact->witness = {0.375, 0.5};
  recs[0].attacks[0].wall_ms = 1.0 / 3.0;
  std::string path = (std::filesystem::temp_directory_path() / "cav_test_records.jsonl").string();
  save_records(recs, path);
  auto back = load_records(path);
  REQUIRE(back.size() == 1);
  CHECK(to_json(back[0]) == to_json(recs[0]));
  CHECK(back[0].attacks[1].distance == kInf);
  CHECK(back[0].attacks[0].wall_ms == 1.0 / 3.0);
  CHECK(*back[0].true_label == 3);
}

TEST_CASE("attack CSV layout") {
  std::vector<SampleRecord> recs{make_record(9, std::nullopt, {{"pgd", 0.25}, {"cw", kInf}})};
  std::ostringstream out;
  write_attack_csv(recs, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "sample_id,attack,success,distance,calls,wall_ms");
  std::getline(in, line);
  CHECK(line == "9,pgd,1,0.25,7,0");
  std::getline(in, line);
  CHECK(line == "9,cw,0,inf,7,0");
}

TEST_CASE("UG100 export re-imports bit-exactly") {
  CounterRng rng(21);
  Network net = random_mlp(rng, 4, {8}, 3);
  Dataset data;
  data.shape = {4};
  data.num_classes = 3;
  for (int i = 0; i < 3; ++i) {
    data.inputs.emplace_back(Shape{4}, random_vec(rng, 4, 0, 1));
    data.labels.push_back(static_cast<std::size_t>(i));
  }
  CorpusOptions opt;
  opt.pool = preset("fast-1k", "mnist");
  std::vector<std::size_t> idx{0, 1, 2};
  auto recs = run_corpus(net, data, idx, opt);

  std::string dir = (std::filesystem::temp_directory_path() / "cav_test_ug100").string();
  std::filesystem::remove_all(dir);
  export_ug100(recs, dir);
  CHECK(std::filesystem::exists(std::filesystem::path(dir) / "sample_1" / "clean.json"));
  auto back = import_ug100(dir);
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(to_json(back[i]) == to_json(recs[i]));
    for (std::size_t k = 0; k < recs[i].attacks.size(); ++k)
      CHECK(back[i].attacks[k].distance == recs[i].attacks[k].distance);
    CHECK(back[i].exact->distance == recs[i].exact->distance);
  }
}

TEST_CASE("corpus runs: pool dominates exact, workers do not change results") {
  CounterRng rng(30);
  Network net = random_mlp(rng, 5, {10, 6}, 3);
  Dataset data;
  data.shape = {5};
  data.num_classes = 3;
  for (int i = 0; i < 8; ++i) {
    data.inputs.emplace_back(Shape{5}, random_vec(rng, 5, 0, 1));
    data.labels.push_back(0);
  }
  std::vector<std::size_t> idx{7, 0, 3, 5, 1, 2, 6, 4};
  CorpusOptions opt;
  opt.pool = preset("fast-1k", "mnist");
  opt.workers = 1;
  auto one = run_corpus(net, data, idx, opt);
  opt.workers = 3;
  auto three = run_corpus(net, data, idx, opt);
  REQUIRE(one.size() == idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    CHECK(one[k].sample_id == idx[k]);
    CHECK(one[k].pool_distance() == three[k].pool_distance());
    CHECK(one[k].exact->distance == three[k].exact->distance);
    if (one[k].pool_success()) {
      CHECK(one[k].pool_distance() >= one[k].exact->distance - 1e-5);
      for (const auto& a : one[k].attacks)
        if (a.success) CHECK(net.classify(a.adversarial) != one[k].label);
    }
  }
  CHECK(compute_stats(one).dominance_violations == 0);
  std::vector<std::size_t> oob{8};
  CHECK_THROWS(run_corpus(net, data, oob, opt));
}

TEST_CASE("worker count from the environment") {
  setenv("CAV_WORKERS", "3", 1);
  CHECK(worker_count() == 3);
  setenv("CAV_WORKERS", "zero", 1);
  CHECK(worker_count() >= 1);
  unsetenv("CAV_WORKERS");
}
