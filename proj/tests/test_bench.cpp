#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "hidepet/bench/experiment.hpp"
#include "hidepet/bench/metrics.hpp"
#include "hidepet/bench/report.hpp"
#include "hidepet/numcore/error.hpp"

using namespace hidepet;
using nlohmann::json;

namespace {

// Straight transcription of the definitions, 1-based, kept apart from the library.
struct Brute {
  double faa, caa, ffm, ala;
};

Brute brute_metrics(const std::vector<std::vector<double>>& stage) {
  const std::size_t t = stage.size();
  auto A = [&](std::size_t i, std::size_t ip) { return stage[ip - 1][i - 1]; };
  std::vector<double> aa(t + 1);
  for (std::size_t ip = 1; ip <= t; ++ip) {
    double s = 0;
    for (std::size_t i = 1; i <= ip; ++i) s += A(i, ip);
    aa[ip] = s / double(ip);
  }
  double caa = 0;
  for (std::size_t ip = 1; ip <= t; ++ip) caa += aa[ip];
  caa /= double(t);
  double ffm = 0, ala = 0;
  if (t == 1) {
    ala = A(1, 1);
  } else {
    for (std::size_t i = 1; i < t; ++i) {
      double best = -1e300;
      for (std::size_t ip = i; ip <= t - 1; ++ip) best = std::max(best, A(i, ip) - A(i, t));
      ffm += best;
    }
    ffm /= double(t - 1);
    for (std::size_t i = 2; i <= t; ++i) ala += A(i, i);
    ala /= double(t - 1);
  }
  return {aa[t], caa, ffm, ala};
}

AccuracyMatrix random_matrix(Rng& rng, std::size_t t, bool dyadic) {
  AccuracyMatrix a;
  for (std::size_t s = 0; s < t; ++s) {
    std::vector<double> row;
    for (std::size_t i = 0; i <= s; ++i) row.push_back(dyadic ? 0.25 * double(rng.below(401)) : rng.uniform(0, 100));
    a.stage.push_back(row);
  }
  return a;
}

ResultRecord fake_record(std::uint64_t seed, const std::string& components, double final_acc) {
  ResultRecord r;
  r.config_hash = "0123456789abcdef";
  r.seed = seed;
  r.scenario = "CIL";
  r.stream = "test";
  r.pet = "Prefix";
  r.shared = "FSA_SL";
  r.recovery = "MultiCentroid";
  r.components = components;
  r.matrix.stage = {{90}, {80, final_acc}};
  r.metrics = compute_metrics(r.matrix);
  r.tii_accuracy = 0.5 + 0.01 * double(seed);
  return r;
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig c = ExperimentConfig::desk();
  c.world.tokens = 4;
  c.world.feat = 8;
  c.world.families = 0;
  c.world.family_shared = 0;
  c.classes = 4;
  c.tasks = 2;
  c.train_per_class = 12;
  c.test_per_class = 6;
  c.backbone.arch.layers = 2;
  c.backbone.arch.dim = 16;
  c.backbone.arch.heads = 2;
  c.backbone.arch.tokens = 4;
  c.backbone.arch.feat = 8;
  c.backbone.pretext_classes = 6;
  c.backbone.pretext_per_class = 10;
  c.backbone.pretrain.epochs = 1;
  c.hide.pet.layers = {1, 2};
  c.hide.shared_pet.layers = {1, 2};
  c.hide.epochs = 1;
  c.hide.head_epochs = 2;
  c.hide.samples_per_class = 8;
  c.hide.omega_hidden = 8;
  c.components = {"naive", "wtp", "full"};
  c.mixed.second_world = c.world;
  c.mixed.second_world.seed = 8;
  return c;
}

}  // namespace

TEST_CASE("metrics of the hand matrix") {
  AccuracyMatrix a;
  a.stage = {{90}, {80, 70}, {70, 60, 50}};
  const Metrics m = compute_metrics(a);
  CHECK(m.aa == std::vector<double>{90, 75, 60});
  CHECK(m.faa == 60);
  CHECK(m.caa == 75);
  CHECK(m.ffm == 15);
  CHECK(m.ala == 60);
  SUBCASE("literal ALA reads the entry above the diagonal") {
    // (A[1][2] + A[2][3]) / 2 = (80 + 60) / 2
    CHECK(compute_metrics(a, AlaMode::Literal).ala == 70);
  }
}

TEST_CASE("a perfect matrix has no forgetting") {
  AccuracyMatrix a;
  for (std::size_t s = 0; s < 6; ++s) a.stage.emplace_back(s + 1, 100.0);
  const Metrics m = compute_metrics(a);
  CHECK(m.faa == 100);
  CHECK(m.caa == 100);
  CHECK(m.ala == 100);
  CHECK(m.ffm == 0);
}

TEST_CASE("metrics agree with a brute-force evaluation on random matrices") {
  Rng rng(17);
  for (int k = 0; k < 100; ++k) {
    const auto a = random_matrix(rng, 1 + rng.below(10), true);
    const Metrics m = compute_metrics(a);
    const Brute b = brute_metrics(a.stage);
    CHECK(m.faa == b.faa);
    CHECK(m.caa == b.caa);
    CHECK(m.ffm == b.ffm);
    CHECK(m.ala == b.ala);
  }
  for (int k = 0; k < 100; ++k) {
    const auto a = random_matrix(rng, 1 + rng.below(10), false);
    const Metrics m = compute_metrics(a);
    const Brute b = brute_metrics(a.stage);
    CHECK(m.faa == doctest::Approx(b.faa).epsilon(1e-13));
    CHECK(m.caa == doctest::Approx(b.caa).epsilon(1e-13));
    CHECK(m.ffm == doctest::Approx(b.ffm).epsilon(1e-13));
    CHECK(m.ala == doctest::Approx(b.ala).epsilon(1e-13));
  }
}

TEST_CASE("FAA depends only on the final stage") {
  Rng rng(18);
  for (int k = 0; k < 50; ++k) {
    auto a = random_matrix(rng, 2 + rng.below(8), false);
    const double faa = compute_metrics(a).faa;
    for (std::size_t s = 0; s + 1 < a.tasks(); ++s) std::reverse(a.stage[s].begin(), a.stage[s].end());
    CHECK(compute_metrics(a).faa == faa);
  }
}

TEST_CASE("malformed matrices") {
  AccuracyMatrix a;
  CHECK_THROWS_AS(compute_metrics(a), ContractError);
  a.stage = {{90}, {80}};
  CHECK_THROWS_AS(compute_metrics(a), ContractError);
  a.stage = {{90}, {80, 101}};
  CHECK_THROWS_AS(compute_metrics(a), ContractError);
}

TEST_CASE("matrix CSV") {
  const auto a = parse_matrix_csv("# stage rows\n90\n\n80, 70\r\n70,60,50\n");
  CHECK(compute_metrics(a).ffm == 15);
  CHECK(parse_matrix_csv(to_csv(a)).stage == a.stage);
  try {
    parse_matrix_csv("90\n80,x\n");
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 6);
  }
  CHECK_THROWS_AS(parse_matrix_csv("90\n80\n"), ContractError);
}

TEST_CASE("experiment config JSON") {
  ExperimentConfig c = ExperimentConfig::desk();
  c.classes = 20;
  c.components = {"naive", "full"};
  c.seeds = {1, 2, 3};
  const json j = to_json(c);
  const ExperimentConfig back = experiment_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(config_hash(back) == config_hash(c));

  SUBCASE("seeds and output location do not change the hash") {
    ExperimentConfig d = c;
    d.seeds = {9};
    d.output_dir = "elsewhere";
    CHECK(config_hash(d) == config_hash(c));
    d.classes = 24;
    CHECK(config_hash(d) != config_hash(c));
  }
  SUBCASE("unknown keys, bad values and inconsistent settings are rejected") {
    CHECK_THROWS_AS(experiment_from_json(json{{"clases", 10}}), ConfigError);
    CHECK_THROWS_AS(experiment_from_json(json{{"world", {{"nosie", 0.1}}}}), ConfigError);
    CHECK_THROWS_AS(experiment_from_json(json{{"classes", "ten"}}), ConfigError);
    CHECK_THROWS_AS(experiment_from_json(json{{"components", {"everything"}}}), ConfigError);
    CHECK_THROWS_AS(experiment_from_json(json{{"seeds", json::array()}}), ConfigError);
    CHECK_THROWS_AS(experiment_from_json(json{{"aka", true}}), ConfigError);
  }
  SUBCASE("partial files keep the desk defaults") {
    const auto p = experiment_from_json(json{{"scenario", "DIL"}});
    CHECK(p.scenario == Scenario::DIL);
    CHECK(p.classes == ExperimentConfig::desk().classes);
  }
}

TEST_CASE("output root resolution") {
  ExperimentConfig c;
  c.output_dir = "here";
  CHECK(output_root(c) == "here");
  c.output_dir.clear();
  setenv("HIDEPET_OUT", "/tmp/from-env", 1);
  CHECK(output_root(c) == "/tmp/from-env");
  unsetenv("HIDEPET_OUT");
  CHECK(output_root(c) == "hidepet-out");
}

TEST_CASE("result records round trip through JSON lines") {
  const auto dir = std::filesystem::temp_directory_path() / "hidepet_test_bench_records";
  std::filesystem::remove_all(dir);
  const std::string path = (dir / "r.jsonl").string();
  std::vector<ResultRecord> rs{fake_record(1, "full", 70), fake_record(2, "naive", 60)};
  rs[0].pool_size = 2;
  rs[0].lambda_ood = 0.7;
  rs[0].aka = true;
  AkaDecision d;
  d.task = 2;
  d.action = AkaAction::Retrieve;
  d.set = 0;
  d.ood_fraction = 0.25;
  d.votes = {1.0};
  rs[0].decisions = {d};
  append_result_records(path, rs);
  const auto back = read_result_records(path);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(back[i].to_json() == rs[i].to_json());
  CHECK(std::filesystem::exists(path + ".timing.jsonl"));
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(ResultRecord::from_json(json{{"seed", 1}}), ConfigError);
}

TEST_CASE("report statistics") {
  SUBCASE("a single record has zero spread") {
    const auto s = summarize({fake_record(1, "full", 70)});
    REQUIRE(s.size() == 1);
    CHECK(s[0].faa_mean == 75);
    CHECK(s[0].faa_std == 0);
  }
  SUBCASE("five seeds match an independent recomputation") {
    std::vector<ResultRecord> rs;
    const std::vector<double> finals{70, 64, 58, 61, 67};
    for (std::size_t k = 0; k < finals.size(); ++k) rs.push_back(fake_record(k + 1, "full", finals[k]));
    rs.push_back(fake_record(1, "naive", 10));
    const auto s = summarize(rs);
    REQUIRE(s.size() == 2);
    CHECK(s[0].runs == 5);
    // FAA = (80 + final) / 2 = 75, 72, 69, 70.5, 73.5: mean 72, sample variance 5.625
    CHECK(s[0].faa_mean == doctest::Approx(72.0).epsilon(1e-14));
    CHECK(s[0].faa_std == doctest::Approx(std::sqrt(5.625)).epsilon(1e-14));
    CHECK(s[0].tii_mean == doctest::Approx(0.53).epsilon(1e-14));
    CHECK(s[1].runs == 1);
    const Report r = make_report(rs);
    CHECK(r.table_csv.rfind("scenario,method,runs,", 0) == 0);
    CHECK(std::count(r.series_csv.begin(), r.series_csv.end(), '\n') == 1 + 2 * 2);
  }
  SUBCASE("different scenarios cannot share a table") {
    auto a = fake_record(1, "full", 70);
    auto b = fake_record(2, "full", 70);
    b.scenario = "DIL";
    CHECK_THROWS_AS(summarize({a, b}), GroupingError);
    CHECK_THROWS_AS(summarize({}), ConfigError);
  }
  SUBCASE("pool size against threshold") {
    std::vector<ResultRecord> rs;
    for (double l : {0.5, 0.9}) {
      auto r = fake_record(1, "full", 70);
      r.aka = true;
      r.lambda_ood = l;
      r.pool_size = l < 0.7 ? 3 : 1;
      rs.push_back(r);
    }
    const Report rep = make_report(rs);
    CHECK(rep.pool_csv == "lambda,k_mean,k_std,runs\n0.5,3,0,1\n0.9,1,0,1\n");
    CHECK(pool_sweep_csv({0.5}, {{1, 2}}) == "lambda,task,k\n0.5,1,1\n0.5,2,2\n");
  }
}

TEST_CASE("synthetic streams") {
  StreamConfig sc;
  sc.classes = 100;
  sc.tasks = 10;
  sc.train_per_class = 2;
  sc.test_per_class = 1;
  const TaskStream st = make_stream(sc);
  REQUIRE(st.tasks.size() == 10);
  std::vector<std::size_t> all;
  for (const auto& t : st.tasks) {
    CHECK(t.classes.size() == 10);
    all.insert(all.end(), t.classes.begin(), t.classes.end());
  }
  std::sort(all.begin(), all.end());
  CHECK(std::unique(all.begin(), all.end()) == all.end());
  const TaskStream again = make_stream(sc);
  const auto x0 = st.tasks[3].train.x.data(), x1 = again.tasks[3].train.x.data();
  CHECK(std::equal(x0.begin(), x0.end(), x1.begin(), x1.end()));

  sc.pretext_classes = {5};
  CHECK_THROWS_AS(make_stream(sc), ConfigError);
  MixedStreamConfig mc;
  mc.datasets = {StreamConfig{}};
  CHECK_THROWS_AS(make_mixed_stream(mc), ConfigError);
}

TEST_CASE("a small experiment is reproducible and checks dimensions") {
  const ExperimentConfig c = tiny_experiment();
  const BackboneCheckpoint theta = load_or_pretrain(c);
  const auto a = run_experiment(c, 1, theta);
  const auto b = run_experiment(c, 1, theta);
  REQUIRE(a.size() == 3);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].to_json().dump() == b[k].to_json().dump());
    CHECK(a[k].matrix.tasks() == 2);
  }
  CHECK(a[0].components == "naive");
  CHECK_FALSE(a[0].tii_accuracy.has_value());
  CHECK(a[2].tii_accuracy.has_value());

  ExperimentConfig wrong = c;
  wrong.world.feat = 6;
  CHECK_THROWS_AS(run_experiment(wrong, 1, theta), ConfigError);
}
