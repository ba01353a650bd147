#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "hidepet/bench/synthetic.hpp"
#include "hidepet/pet/pet.hpp"

using namespace hidepet;
using T = Tensor<double>;

namespace {

Backbone<double> pure_backbone(std::size_t d, std::size_t heads) {
  BackboneConfig a;
  a.layers = 1;
  a.dim = d;
  a.heads = heads;
  a.tokens = 1;
  a.feat = d;
  a.pre_ln = false;
  a.residual = false;
  auto b = Backbone<double>::random(a, Rng(1));
  return b;
}

T run_layer(const Backbone<double>& bb, const T& h, const MsaHook* hook = nullptr) {
  Tape<double> t;
  return t.value(msa_layer(t, bb, 0, t.constant(h), 1, hook));
}

std::string tmp_path(const char* name) { return std::string("/tmp/hidepet_test_") + name; }

}  // namespace

TEST_CASE("attention over a single position is the identity") {
  auto bb = pure_backbone(4, 1);
  bb.layers[0].wv = T::identity(4);
  bb.layers[0].wo = T::identity(4);
  T h = T::matrix(1, 4, {0.3, -1.2, 2.5, 0.01});
  CHECK(run_layer(bb, h).bit_equal(h));
}

TEST_CASE("two-token single-head layer against direct evaluation") {
  auto bb = pure_backbone(2, 1);
  bb.layers[0] = {T::matrix(2, 2, {0.3, -0.2, 0.1, 0.4}), T::matrix(2, 2, {-0.5, 0.2, 0.3, 0.7}),
                  T::matrix(2, 2, {1.0, 0.5, -0.25, 0.75}), T::matrix(2, 2, {0.6, -0.1, 0.2, 0.9})};
  T h = T::matrix(2, 2, {0.5, -1.0, 1.5, 0.25});
  const double expect[] = {0.6335312112252622, -0.0288203803557911, 0.6661539255833138, 0.02826936977079899};
  T out = run_layer(bb, h);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(out[i] - expect[i]) <= 1e-10);
}

TEST_CASE("empty PreT prefix is bit-identical to no hook") {
  BackboneConfig a;
  auto bb = Backbone<double>::random(a, Rng(3));
  Rng rng(4);
  T h({3 * a.seq_len(), a.dim});
  for (auto& v : h.data()) v = rng.normal();
  Tape<double> t;
  MsaHook hook;
  hook.prefix_k = t.constant(T({0, a.dim}));
  hook.prefix_v = t.constant(T({0, a.dim}));
  T with = t.value(msa_layer(t, bb, 1, t.constant(h), 3, &hook));
  T without = t.value(msa_layer(t, bb, 1, t.constant(h), 3, nullptr));
  CHECK(with.bit_equal(without));
}

TEST_CASE("ProT only on the last layer and grows the sequence") {
  BackboneConfig a;
  auto bb = Backbone<double>::random(a, Rng(3));
  Tape<double> t;
  MsaHook hook;
  hook.prompt = t.constant(T({5, a.dim}, 0.1));
  Var h = t.constant(T({2 * a.seq_len(), a.dim}, 0.2));
  CHECK_THROWS_AS(msa_layer(t, bb, 0, h, 2, &hook), ConfigError);
  Var out = msa_layer(t, bb, a.layers - 1, h, 2, &hook);
  CHECK(t.value(out).rows() == 2 * (a.seq_len() + 5));
}

TEST_CASE("encode is pure and checks the input width") {
  BackboneConfig a;
  auto bb = Backbone<double>::random(a, Rng(5));
  Rng rng(6);
  T x({4, a.input_width()});
  for (auto& v : x.data()) v = rng.normal();
  T r1 = encode_all(bb, x), r2 = encode_all(bb, x);
  CHECK(r1.bit_equal(r2));
  CHECK(r1.shape() == Shape{4, a.dim});
  Tape<double> t;
  CHECK_THROWS_AS(encode(t, bb, T({4, a.input_width() + 1})), DimensionError);
}

TEST_CASE("encode with zero LoRA factors equals plain encode") {
  BackboneConfig a;
  auto bb = Backbone<double>::random(a, Rng(5));
  PetSpec s;
  s.technique = Technique::LoRA;
  auto pet = PetParams<double>::init(s, a.dim, a.layers, Rng(8));
  for (auto& e : pet.entries) std::fill(e.value.data().begin(), e.value.data().end(), 0.0);
  Rng rng(6);
  T x({3, a.input_width()});
  for (auto& v : x.data()) v = rng.normal();
  T plain = encode_all(bb, x);
  T hooked = encode_all<double>(bb, x, [&](Tape<double>& t) { return pet.hooks(t, a.layers); });
  CHECK(plain.bit_equal(hooked));
}

TEST_CASE("pretraining reaches 90% on 20 pretext classes and is deterministic") {
  WorldConfig w;
  Dataset pretext = make_pretext(w, 1000, 20, 80, 3);
  BackboneConfig a;
  PretrainConfig pc;
  pc.epochs = 40;
  auto r1 = pretrain(pretext, a, pc);
  CHECK(r1.train_accuracy >= 0.90);
  CHECK(r1.checkpoint.frozen());
  CHECK(r1.checkpoint.meta.pretrain_task_count == 20);
  pc.epochs = 2;
  auto a1 = pretrain(pretext, a, pc);
  auto a2 = pretrain(pretext, a, pc);
  CHECK(a1.checkpoint.hash() == a2.checkpoint.hash());

  pc.epochs = 0;
  auto z = pretrain(pretext, a, pc);
  CHECK(z.epochs_run == 0);
  CHECK(z.checkpoint.frozen());

  pc.downstream_classes = {5, 1007};
  CHECK_THROWS_AS(pretrain(pretext, a, pc), ConfigError);
}

TEST_CASE("checkpoint round trip and format errors") {
  BackboneConfig a;
  auto bb = BackboneCheckpoint::random(a, Rng(11));
  bb.meta.seed = 0x123456789ABCDEFULL;
  bb.meta.pretrain_task_count = 20;
  const auto path = tmp_path("ckpt.bin");
  save_checkpoint(bb, path);
  auto back = load_checkpoint(path);
  auto src = bb.tensors();
  auto dst = back.tensors();
  REQUIRE(src.size() == dst.size());
  for (std::size_t i = 0; i < src.size(); ++i) CHECK(src[i]->bit_equal(*dst[i]));
  CHECK(back.meta.seed == bb.meta.seed);
  CHECK(back.arch.heads == a.heads);

  auto bytes = encode_records(checkpoint_records(bb));
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "HIDEPET1");
  CHECK(bytes[8] == 1);

  auto bad = bytes;
  bad[0] = 'X';
  try {
    decode_records(bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("HIDEPET1") != std::string::npos);
    CHECK(e.offset() == 0);
  }

  auto future = bytes;
  future[8] = 2;
  CHECK_THROWS_AS(decode_records(future), UnsupportedVersionError);

  auto cut = bytes;
  cut.resize(cut.size() - 7);
  try {
    decode_records(cut);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(dynamic_cast<const UnsupportedVersionError*>(&e) == nullptr);
    CHECK(e.offset() > 8);
  }
  std::remove(path.c_str());
}
