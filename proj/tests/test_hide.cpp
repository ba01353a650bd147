#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "hidepet/bench/synthetic.hpp"
#include "hidepet/hide/config_io.hpp"
#include "hidepet/hide/hide.hpp"
#include "hidepet/numcore/records.hpp"

using namespace hidepet;

namespace {

Tensor<float> gaussian_reps(Rng& rng, std::size_t n, std::size_t d, float mean = 0.f, float sd = 1.f) {
  Tensor<float> x({n, d});
  for (auto& v : x.data()) v = mean + sd * static_cast<float>(rng.normal());
  return x;
}

BackboneConfig small_arch() {
  BackboneConfig a;
  a.layers = 2;
  a.dim = 16;
  a.heads = 2;
  a.tokens = 4;
  a.feat = 8;
  return a;
}

HideConfig small_cfg() {
  HideConfig c;
  c.pet.layers = {1, 2};
  c.shared_pet.layers = {1, 2};
  c.epochs = 2;
  c.head_epochs = 2;
  c.samples_per_class = 16;
  c.omega_hidden = 16;
  c.shared = SharedStrategy::FSA;
  return c;
}

TaskStream small_stream(std::size_t tasks = 3) {
  StreamConfig sc;
  sc.classes = 2 * tasks;
  sc.tasks = tasks;
  sc.train_per_class = 20;
  sc.test_per_class = 10;
  sc.world.feat = 8;
  sc.world.tokens = 4;
  sc.world.noise = 0.2;
  return make_stream(sc);
}

BackboneCheckpoint frozen_backbone() {
  auto bb = BackboneCheckpoint::random(small_arch(), Rng(5));
  bb.freeze();
  return bb;
}

}  // namespace

TEST_CASE("storage per class for each recovery strategy") {
  const std::size_t d = 12;
  Rng rng(1);
  Tensor<float> reps = gaussian_reps(rng, 200, d);
  CHECK(fit_stats(reps, RecoveryStrategy::Prototype, rng).storage() == 10 * d);
  CHECK(fit_stats(reps, RecoveryStrategy::Variance, rng).storage() <= 2 * d);
  CHECK(fit_stats(reps, RecoveryStrategy::Covariance, rng).storage() == d * d + d);
  CHECK(fit_stats(reps, RecoveryStrategy::MultiCentroid, rng).storage() <= 10 * d);
  CHECK(fit_stats(reps, RecoveryStrategy::None, rng).storage() == 0);
}

TEST_CASE("MultiCentroid with fewer samples than centroids uses every sample") {
  Rng rng(2);
  Tensor<float> reps = gaussian_reps(rng, 6, 4);
  std::string warn;
  RepStats s = fit_stats(reps, RecoveryStrategy::MultiCentroid, rng, {}, &warn);
  CHECK(s.vectors.size() == 6);
  CHECK_FALSE(warn.empty());
}

TEST_CASE("k-means on coincident points yields one centroid") {
  Tensor<float> x({20, 3}, 1.5f);
  Rng rng(3);
  auto c = kmeans(x, 10, rng, 20);
  REQUIRE(c.size() == 1);
  CHECK(c[0][2] == doctest::Approx(1.5));
}

TEST_CASE("k-means recovers well separated clusters") {
  Rng rng(4);
  Tensor<float> x({60, 2});
  for (std::size_t i = 0; i < 60; ++i) {
    x.at(i, 0) = static_cast<float>((i % 3) * 10.0 + 0.1 * rng.normal());
    x.at(i, 1) = static_cast<float>(0.1 * rng.normal());
  }
  std::vector<std::size_t> assign;
  auto c = kmeans(x, 3, rng, 50, &assign);
  REQUIRE(c.size() == 3);
  for (std::size_t i = 3; i < 60; ++i) CHECK(assign[i] == assign[i % 3]);
}

TEST_CASE("sampled representations follow the fitted moments") {
  Rng rng(5);
  const std::size_t d = 3;
  Tensor<float> reps({4000, d});
  for (std::size_t i = 0; i < 4000; ++i) {
    const double z0 = rng.normal(), z1 = rng.normal(), z2 = rng.normal();
    reps.at(i, 0) = static_cast<float>(1.0 + z0);
    reps.at(i, 1) = static_cast<float>(-2.0 + 0.8 * z0 + 0.6 * z1);  // corr 0.8 with dim 0
    reps.at(i, 2) = static_cast<float>(0.5 * z2);
  }
  for (auto strat : {RecoveryStrategy::Variance, RecoveryStrategy::Covariance}) {
    RepStats s = fit_stats(reps, strat, rng);
    Tensor<float> smp = sample_reps(s, 20000, rng);
    double m[3] = {}, c01 = 0, v2 = 0;
    for (std::size_t i = 0; i < smp.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) m[j] += smp.at(i, j) / 20000.0;
    for (std::size_t i = 0; i < smp.rows(); ++i) {
      c01 += (smp.at(i, 0) - m[0]) * (smp.at(i, 1) - m[1]) / 20000.0;
      v2 += (smp.at(i, 2) - m[2]) * (smp.at(i, 2) - m[2]) / 20000.0;
    }
    CHECK(m[0] == doctest::Approx(1.0).epsilon(0.05));
    CHECK(m[1] == doctest::Approx(-2.0).epsilon(0.05));
    CHECK(v2 == doctest::Approx(0.25).epsilon(0.1));
    if (strat == RecoveryStrategy::Covariance) {
      CHECK(c01 == doctest::Approx(0.8).epsilon(0.1));
    } else {
      CHECK(std::abs(c01) < 0.05);  // diagonal model drops the correlation
    }
  }
  CHECK_THROWS_AS(sample_reps(fit_stats(reps, RecoveryStrategy::None, rng), 3, rng), StateError);
}

TEST_CASE("Prototype samples are stored representations") {
  Rng rng(6);
  Tensor<float> reps = gaussian_reps(rng, 30, 5);
  RepStats s = fit_stats(reps, RecoveryStrategy::Prototype, rng);
  Tensor<float> smp = sample_reps(s, 50, rng);
  for (std::size_t i = 0; i < smp.rows(); ++i) {
    bool found = false;
    for (std::size_t r = 0; r < reps.rows() && !found; ++r)
      found = std::equal(smp.row(i).begin(), smp.row(i).end(), reps.row(r).begin());
    CHECK(found);
  }
}

TEST_CASE("task-local loss: closed form and label checks") {
  // reps [1, 2]; logits [1, 2, 1]; columns {0, 1}; target column 1
  LinearHead<double> psi{Tensor<double>::matrix(2, 3, {1, 0, -1, 0, 1, 1}), Tensor<double>({1, 3})};
  Tape<double> t;
  Var r = t.constant(Tensor<double>::matrix(1, 2, {1, 2}));
  std::vector<std::size_t> cols{0, 1}, y{1};
  Var l = wtp_loss(t, r, psi, cols, y);
  CHECK(t.value(l)[0] == doctest::Approx(0.31326168751822286).epsilon(1e-12));  // log(1 + e^-1)
  // the same target over all columns sees the third logit too
  Var g = tap_loss(t, r, psi, std::vector<std::size_t>{1});
  CHECK(t.value(g)[0] == doctest::Approx(std::log(1 + 2 * std::exp(-1.0))).epsilon(1e-12));
  std::vector<std::size_t> bad{2};
  CHECK_THROWS_AS(wtp_loss(t, r, psi, cols, bad), IndexError);
  std::vector<std::size_t> unseen{3};
  CHECK_THROWS_AS(tap_loss(t, r, psi, unseen), IndexError);
}

TEST_CASE("local loss gradient touches only the task's columns") {
  Rng rng(7);
  LinearHead<double> psi = LinearHead<double>::make(4);
  psi.append(6, rng, 0.5);
  psi.set_trainable(true);
  Tape<double> t;
  Var r = t.constant(Tensor<double>({3, 4}, std::vector<double>(12, 0.3)));
  std::vector<std::size_t> cols{3, 4, 5}, y{3, 5, 4};
  t.backward(wtp_loss(t, r, psi, cols, y));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      const bool in_task = j >= 3;
      CHECK((psi.w.grad()[i * 6 + j] != 0.0) == in_task);
    }
}

TEST_CASE("task-identity loss with a single task is zero") {
  Rng rng(8);
  auto omega = TiiHead<double>::make(4, 8, rng);
  omega.append(1, rng);
  Tape<double> t;
  std::vector<std::size_t> ids{0, 0};
  Var l = tii_loss(t, t.constant(Tensor<double>({2, 4}, 1.0)), omega, ids);
  CHECK(t.value(l)[0] == doctest::Approx(0.0));
  std::vector<std::size_t> bad{1};
  CHECK_THROWS_AS(tii_loss(t, t.constant(Tensor<double>({1, 4}, 1.0)), omega, bad), IndexError);
}

TEST_CASE("shared-parameter policies") {
  HideConfig c;
  c.epochs = 10;
  auto p = update_shared(SharedStrategy::FSA, 1, c);
  CHECK(p.train);
  CHECK(p.lr == c.lr_big);
  CHECK_FALSE(update_shared(SharedStrategy::FSA, 2, c).train);
  CHECK(update_shared(SharedStrategy::SL, 1, c).lr == c.lr_small);
  CHECK(update_shared(SharedStrategy::FSA_SL, 1, c).lr == c.lr_big);
  CHECK(update_shared(SharedStrategy::FSA_SL, 3, c).lr == c.lr_small);
  CHECK(update_shared(SharedStrategy::FT, 2, c).frozen_epochs == 5);
  CHECK(update_shared(SharedStrategy::EMA, 2, c).ema);
  CHECK(parse_shared("FSA+SL") == SharedStrategy::FSA_SL);
  CHECK_THROWS_AS(parse_shared("ADAM"), ConfigError);
}

TEST_CASE("train_task: growth, frozen paths, protocol") {
  const auto theta = frozen_backbone();
  const auto stream = small_stream();
  HideConfig cfg = small_cfg();
  cfg.extra_recoveries = {RecoveryStrategy::None};
  HideState s = HideState::create(cfg, theta.arch);
  const std::uint64_t theta_hash = theta.hash();
  const Tensor<float> probe = stream.tasks[0].test.x;

  CHECK_THROWS_AS(train_task(s, 2, stream.tasks[1].train, stream.tasks[1].classes, theta), ProtocolError);
  train_task(s, 1, stream.tasks[0].train, stream.tasks[0].classes, theta);
  CHECK(s.t == 1);
  CHECK(s.main().omega.width() == 1);
  CHECK(s.main().psi.width() == 2);
  CHECK(s.main().stats_u.size() == 1);
  CHECK(s.main().stats_u[0].size() == 2);

  // a single task: TII always names it
  auto p1 = predict(s, s.main(), encode_for_eval(s, theta, probe), View::Full);
  for (auto t : p1.task) CHECK(t == 0);

  const std::uint64_t e1 = s.e[0].hash();
  const std::uint64_t g1 = s.g_sets[0].hash();
  const Tensor<float> inst1 = encode_instructed(s, theta, 0, probe);

  for (std::size_t i = 1; i < stream.tasks.size(); ++i) {
    train_task(s, i + 1, stream.tasks[i].train, stream.tasks[i].classes, theta);
    CHECK(s.e[0].hash() == e1);
    CHECK(s.g_sets[0].hash() == g1);  // FSA: frozen after task 1
    CHECK(encode_instructed(s, theta, 0, probe).bit_equal(inst1));
  }
  CHECK(theta.hash() == theta_hash);
  CHECK(s.e.size() == 3);
  CHECK(s.main().omega.width() == 3);
  CHECK(s.main().psi.width() == 6);
  CHECK(s.psi_wtp.width() == 6);
  CHECK(s.bundles[1].recovery == RecoveryStrategy::None);

  auto p = infer(s, theta, probe);
  for (auto y : p.label) CHECK(y < 6);
  CHECK_THROWS_AS(predict(s, s.main(), encode_for_eval(s, theta, probe), View::Oracle), ContractError);
}

TEST_CASE("SL keeps moving the shared set, FSA does not") {
  const auto theta = frozen_backbone();
  const auto stream = small_stream(2);
  for (auto strat : {SharedStrategy::SL, SharedStrategy::FSA, SharedStrategy::EMA, SharedStrategy::FT}) {
    HideConfig cfg = small_cfg();
    cfg.shared = strat;
    cfg.train_heads = false;
    HideState s = HideState::create(cfg, theta.arch);
    train_task(s, 1, stream.tasks[0].train, stream.tasks[0].classes, theta);
    const auto h = s.g_sets[0].hash();
    train_task(s, 2, stream.tasks[1].train, stream.tasks[1].classes, theta);
    CHECK((s.g_sets[0].hash() == h) == (strat == SharedStrategy::FSA));
  }
}

TEST_CASE("training is deterministic and state round-trips through disk") {
  const auto theta = frozen_backbone();
  const auto stream = small_stream(2);
  HideConfig cfg = small_cfg();
  cfg.recovery = RecoveryStrategy::Covariance;
  auto run = [&] {
    HideState s = HideState::create(cfg, theta.arch);
    for (std::size_t i = 0; i < 2; ++i) train_task(s, i + 1, stream.tasks[i].train, stream.tasks[i].classes, theta);
    return s;
  };
  HideState a = run(), b = run();
  const Tensor<float>& x = stream.tasks[1].test.x;
  CHECK(a.main().psi.w.bit_equal(b.main().psi.w));
  CHECK(a.main().omega.w1.bit_equal(b.main().omega.w1));

  const auto dir = (std::filesystem::temp_directory_path() / "hidepet_state_test").string();
  std::filesystem::remove_all(dir);
  save_state(a, dir);
  HideState c = load_state(dir);
  CHECK(c.t == 2);
  CHECK(c.registry.class_of_column == a.registry.class_of_column);
  for (std::size_t j = 0; j < 2; ++j) CHECK(c.e[j].hash() == a.e[j].hash());
  auto pa = infer(a, theta, x), pc = infer(c, theta, x);
  CHECK(pa.label == pc.label);
  CHECK(pa.task == pc.task);
  CHECK(c.main().stats_i[1][0].cov == a.main().stats_i[1][0].cov);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config JSON: round trip and unknown keys") {
  HideConfig c;
  c.shared = SharedStrategy::EMA;
  c.pet.technique = Technique::LoRA;
  c.extra_recoveries = {RecoveryStrategy::Prototype};
  HideConfig d = hide_config_from_json(to_json(c));
  CHECK(to_json(d) == to_json(c));
  CHECK_THROWS_AS(hide_config_from_json(nlohmann::json{{"epoch", 3}}), ConfigError);
  CHECK_THROWS_AS(hide_config_from_json(nlohmann::json{{"alpha", 2.0}}), ConfigError);
}

TEST_CASE("predict before any task is a state error") {
  HideState s = HideState::create(small_cfg(), small_arch());
  EvalReps r;
  r.plain = Tensor<float>({1, 16});
  CHECK_THROWS_AS(predict(s, s.main(), r, View::Full), StateError);
}
