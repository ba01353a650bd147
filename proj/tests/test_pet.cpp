#include "doctest.h"
#include "hidepet/pet/pet.hpp"

using namespace hidepet;
using T = Tensor<double>;

namespace {

T randn(Rng& rng, std::size_t r, std::size_t c, double s = 1.0) {
  T t({r, c});
  for (auto& v : t.data()) v = s * rng.normal();
  return t;
}

Backbone<double> pure(std::size_t d, std::size_t heads, Rng rng) {
  BackboneConfig a;
  a.layers = 1;
  a.dim = d;
  a.heads = heads;
  a.tokens = 1;
  a.feat = d;
  a.pre_ln = false;
  a.residual = false;
  return Backbone<double>::random(a, rng);
}

void randomise(PetParams<double>& p, Rng& rng) {
  for (auto& e : p.entries)
    for (auto& v : e.value.data()) v = 0.3 * rng.normal();
}

}  // namespace

TEST_CASE("ProT: empty prompt, output length, direct evaluation") {
  BackboneConfig a;
  auto bb = Backbone<double>::random(a, Rng(1));
  Rng rng(2);
  T h = randn(rng, 2 * a.seq_len(), a.dim);
  Tape<double> t;
  Var hv = t.constant(h);
  const std::size_t last = a.layers - 1;
  T plain = t.value(msa_layer(t, bb, last, hv, 2, nullptr));
  CHECK(t.value(prot_apply(t, bb, last, t.constant(T({0, a.dim})), hv, 2)).bit_equal(plain));
  Var out = prot_apply(t, bb, last, t.constant(randn(rng, 20, a.dim)), hv, 2);
  CHECK(t.value(out).rows() == 2 * (a.seq_len() + 20));
  CHECK_THROWS_AS(prot_apply(t, bb, 0, t.constant(randn(rng, 20, a.dim)), hv, 2), ConfigError);

  auto pb = pure(2, 1, Rng(3));
  pb.layers[0] = {T::matrix(2, 2, {0.3, -0.2, 0.1, 0.4}), T::matrix(2, 2, {-0.5, 0.2, 0.3, 0.7}),
                  T::matrix(2, 2, {1.0, 0.5, -0.25, 0.75}), T::matrix(2, 2, {0.6, -0.1, 0.2, 0.9})};
  Tape<double> t2;
  T o = t2.value(prot_apply(t2, pb, 0, t2.constant(T::matrix(1, 2, {0.2, 0.7})),
                            t2.constant(T::matrix(1, 2, {0.5, -1.0})), 1));
  const double expect[] = {0.23181698367413442, 0.08561225101697215, 0.26451984249296495, -0.08335251954698554};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(o[i] - expect[i]) <= 1e-10);
}

TEST_CASE("PreT: empty prefix, shape, odd length") {
  BackboneConfig a;
  auto bb = Backbone<double>::random(a, Rng(1));
  Rng rng(2);
  T h = randn(rng, 3 * a.seq_len(), a.dim);
  Tape<double> t;
  Var hv = t.constant(h);
  T plain = t.value(msa_layer(t, bb, 0, hv, 3, nullptr));
  CHECK(t.value(pret_apply(t, bb, 0, t.constant(T({0, a.dim})), t.constant(T({0, a.dim})), hv, 3)).bit_equal(plain));
  Var out = pret_apply(t, bb, 0, t.constant(randn(rng, 10, a.dim)), t.constant(randn(rng, 10, a.dim)), hv, 3);
  CHECK(t.value(out).shape() == h.shape());
  CHECK_THROWS_AS(pret_apply(t, bb, 0, t.constant(randn(rng, 10, a.dim)), t.constant(randn(rng, 9, a.dim)), hv, 3),
                  InvariantError);
  PetSpec s;
  s.technique = Technique::PreT;
  s.prompt_len = 19;
  CHECK_THROWS_AS(s.validate(4), InvariantError);
}

TEST_CASE("PreT prefix form equals the reframed mixture form") {
  Rng rng(40);
  for (int inst = 0; inst < 10; ++inst) {
    const std::size_t d = 6, len = 5, np = 4;
    auto bb = pure(d, 1, rng.split(inst));
    bb.layers[0].wo = T::identity(d);
    T h = randn(rng, len, d), pk = randn(rng, np, d), pv = randn(rng, np, d);
    Tape<double> t;
    T prefix_form = t.value(pret_apply(t, bb, 0, t.constant(pk), t.constant(pv), t.constant(h), 1));
    auto re = pret_reframe(h, bb.layers[0].wq, bb.layers[0].wk, bb.layers[0].wv, pk, pv);
    CHECK(max_abs_diff(prefix_form, re.output) <= 1e-8);
    for (double l : re.lambda) {
      CHECK(l >= 0.0);
      CHECK(l <= 1.0);
    }
  }
}

TEST_CASE("PreT reframe: empty prefix and lambda monotone in key scale") {
  Rng rng(41);
  const std::size_t d = 4, len = 3;
  T wq = randn(rng, d, d), wk = randn(rng, d, d), wv = randn(rng, d, d);
  T h = randn(rng, len, d, 0.1);
  for (std::size_t i = 0; i < len; ++i) h.at(i, 0) += 1.0;  // queries share a direction
  auto empty = pret_reframe(h, wq, wk, wv, T({0, d}), T({0, d}));
  for (double l : empty.lambda) CHECK(l == 0.0);

  T u = T::matrix(1, d, {1, 0, 0, 0});
  T key({1, d});
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t p = 0; p < d; ++p) key[c] += u[p] * wq.at(p, c);
  T pv = randn(rng, 1, d);
  std::vector<double> prev(len, -1.0);
  for (double scale : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
    T pk = key;
    for (auto& v : pk.data()) v *= scale;
    auto r = pret_reframe(h, wq, wk, wv, pk, pv);
    for (std::size_t i = 0; i < len; ++i) {
      CHECK(r.lambda[i] >= prev[i]);
      prev[i] = r.lambda[i];
    }
  }
  for (double l : prev) CHECK(l > 0.99);
}

TEST_CASE("Adapter: zero up-projection, direct formula, rank check") {
  Tape<double> t;
  T hp = T::matrix(2, 3, {0.4, -0.3, 1.1, 2.0, 0.5, -0.6});
  T wd = T::matrix(3, 2, {0.5, -1.0, 0.25, 0.3, -0.7, 0.2});
  T wu = T::matrix(2, 3, {1.0, -0.5, 0.3, 0.2, 0.6, -1.2});
  Var h = t.constant(T({2, 3}, 0.7));
  Var out = adapter_apply(t, AdapterMode::Seq, h, t.constant(hp), t.constant(wd), t.constant(wu));
  const double expect[] = {0.21139265576136124, -0.28008297184625114, 1.1773137558664355,
                           3.4408663525485332,  -0.25410723277569347, -0.10712679253287172};
  for (int i = 0; i < 6; ++i) CHECK(std::abs(t.value(out)[i] - expect[i]) <= 1e-10);
  for (auto mode : {AdapterMode::Seq, AdapterMode::Par}) {
    Var z = adapter_apply(t, mode, h, t.constant(hp), t.constant(wd), t.constant(T({2, 3})));
    CHECK(t.value(z).bit_equal(hp));
  }
  CHECK_THROWS_AS(adapter_apply(t, AdapterMode::Par, h, t.constant(hp), t.constant(T({3, 0})), t.constant(T({0, 3}))),
                  ConfigError);
  PetSpec s;
  s.technique = Technique::AdapterSeq;
  s.rank = 0;
  CHECK_THROWS_AS(s.validate(4), ConfigError);
  CHECK(PetSpec{}.rank == 10);
}

TEST_CASE("LoRA: zero factors, hand case, scale invariant") {
  Tape<double> t;
  T h = T::matrix(2, 2, {1, 2, 3, 4});
  T wd = T::matrix(2, 1, {1, 0.5});
  T wu = T::matrix(1, 2, {2, -1});
  Var out = lora_apply(t, t.constant(h), t.constant(h), t.constant(wd), t.constant(wu), 1.0);
  const double expect[] = {5, 0, 13, -1};
  for (int i = 0; i < 4; ++i) CHECK(t.value(out)[i] == expect[i]);
  T merged = lora_merge(T::identity(2), wd, wu, 1.0);
  const double em[] = {3, -1, 1, 0.5};
  for (int i = 0; i < 4; ++i) CHECK(merged[i] == em[i]);
  Var z = lora_apply(t, t.constant(h), t.constant(h), t.constant(T({2, 1})), t.constant(wu), 2.0);
  CHECK(t.value(z).bit_equal(h));
  CHECK_THROWS_AS(lora_apply(t, t.constant(h), t.constant(h), t.constant(wd), t.constant(wu), 0.5), InvariantError);
  CHECK_THROWS_AS(lora_merge(T::identity(2), wd, wu, 0.5), InvariantError);
}

TEST_CASE("LoRA merged forward equals side-branch forward") {
  BackboneConfig a;
  PetSpec s;
  s.technique = Technique::LoRA;
  s.lora_scale = 2.0;
  s.layers = {1, 2, 3};
  Rng rng(9);
  auto bb = Backbone<double>::random(a, rng.split(1));
  auto lora = PetParams<double>::init(s, a.dim, a.layers, rng.split(2));
  randomise(lora, rng);
  T x = randn(rng, 6, a.input_width());
  const std::uint64_t before = bb.hash();
  T side = encode_all<double>(bb, x, [&](Tape<double>& t) { return lora.hooks(t, a.layers); });
  T merged = encode_all(merge_lora(bb, lora), x);
  CHECK(max_abs_diff(side, merged) <= 1e-10);
  CHECK(bb.hash() == before);

  // 32-bit, one projection: h W + s h W_down W_up against h (W + s W_down W_up)
  Rng fr(10);
  Tensor<float> h({16, a.dim}), w({a.dim, a.dim}), wd({a.dim, 5}), wu({5, a.dim});
  for (auto* m : {&h, &w, &wd, &wu})
    for (auto& v : m->data()) v = static_cast<float>(0.3 * fr.normal());
  Tape<float> tf;
  Var hv = tf.constant(h);
  Var side_f = lora_apply(tf, hv, matmul(tf, hv, tf.constant(w)), tf.constant(wd), tf.constant(wu), 2.0);
  Var merged_f = matmul(tf, hv, tf.constant(lora_merge(w, wd, wu, 2.0)));
  CHECK(max_abs_diff(tf.value(side_f), tf.value(merged_f)) <= 1e-6f);

  PetSpec ad;
  auto adapter = PetParams<double>::init(ad, a.dim, a.layers, rng);
  CHECK_THROWS_AS(merge_lora(bb, adapter), UnsupportedTechniqueError);
}

TEST_CASE("zero-initialised PET leaves the backbone output bit-identical") {
  BackboneConfig a;
  Rng rng(12);
  auto bb = Backbone<double>::random(a, rng.split(1));
  T x = randn(rng, 5, a.input_width());
  T plain = encode_all(bb, x);
  for (Technique tech : {Technique::AdapterSeq, Technique::AdapterPar, Technique::Adapter, Technique::LoRA}) {
    PetSpec s;
    s.technique = tech;
    auto p = PetParams<double>::init(s, a.dim, a.layers, rng.split(int(tech) + 5));
    T out = encode_all<double>(bb, x, [&](Tape<double>& t) { return p.hooks(t, a.layers); });
    CHECK_MESSAGE(out.bit_equal(plain), to_string(tech));
  }
  for (Technique tech : {Technique::PreT, Technique::ProT}) {
    PetSpec s;
    s.technique = tech;
    s.prompt_len = 0;
    if (tech == Technique::ProT) s.layers = {a.layers};
    auto p = PetParams<double>::init(s, a.dim, a.layers, rng);
    T out = encode_all<double>(bb, x, [&](Tape<double>& t) { return p.hooks(t, a.layers); });
    CHECK_MESSAGE(out.bit_equal(plain), to_string(tech));
  }
}

TEST_CASE("parameter budgets are equal across techniques at defaults") {
  const std::size_t d = 32, L = 5;
  auto budget = [&](Technique tech, std::vector<std::size_t> layers) {
    PetSpec s;
    s.technique = tech;
    s.layers = layers;
    return param_budget(PetParams<double>::init(s, d, L, Rng(1)));
  };
  const std::vector<std::size_t> five = {1, 2, 3, 4, 5};
  CHECK(budget(Technique::PreT, five) == 20 * d * 5);
  CHECK(budget(Technique::LoRA, five) == 20 * d * 5);
  CHECK(budget(Technique::Adapter, five) == 20 * d * 5);
  CHECK(budget(Technique::AdapterSeq, five) == 20 * d * 5);
  CHECK(budget(Technique::ProT, {5}) == 20 * d);
}

TEST_CASE("ensemble initialisation") {
  PetSpec s;
  const std::size_t d = 8, L = 4;
  Rng rng(3);
  auto e1 = PetParams<double>::init(s, d, L, rng.split(1));
  auto e2 = PetParams<double>::init(s, d, L, rng.split(2));
  randomise(e1, rng);
  randomise(e2, rng);

  auto fresh = ensemble_init<double>({}, 0.1, s, d, L, rng.split(9));
  CHECK(fresh.entries.size() == e1.entries.size());

  auto copy = ensemble_init<double>({&e1, &e2}, 0.0, s, d, L, rng);
  CHECK(copy.hash() == e2.hash());

  auto mix = ensemble_init<double>({&e1, &e2}, 0.1, s, d, L, rng);
  for (std::size_t j = 0; j < mix.entries.size(); ++j)
    for (std::size_t k = 0; k < mix.entries[j].value.numel(); ++k) {
      const double a = e1.entries[j].value[k], b = e2.entries[j].value[k];
      CHECK(std::abs(mix.entries[j].value[k] - (0.1 * (a + b) + 0.9 * b)) <= 1e-15);
    }

  PetSpec other;
  other.technique = Technique::LoRA;
  auto l1 = PetParams<double>::init(other, d, L, rng);
  CHECK_THROWS_AS(ensemble_init<double>({&e1, &l1}, 0.1, s, d, L, rng), ConfigError);
  CHECK_THROWS_AS(ensemble_init<double>({&e1}, 1.5, s, d, L, rng), ConfigError);
}
