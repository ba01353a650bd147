#include "hidepet/backbone/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "hidepet/numcore/optim.hpp"

namespace hidepet {

void BackboneConfig::validate() const {
  if (layers == 0 || dim == 0 || heads == 0 || tokens == 0 || feat == 0) {
    throw ConfigError("backbone dimensions must be positive");
  }
  if (dim % heads != 0) {
    throw ConfigError("embedding dim " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

bool MsaHook::any() const {
  if (prompt.valid() || prefix_k.valid() || prefix_v.valid() || seq_down.valid() || par_down.valid())
    return true;
  for (const auto& v : lora_down)
    if (v.valid()) return true;
  return false;
}

namespace {

template <typename Real>
Tensor<Real> gaussian(Rng& rng, std::size_t r, std::size_t c, double std) {
  Tensor<Real> t({r, c});
  for (auto& v : t.data()) v = static_cast<Real>(rng.normal() * std);
  return t;
}

}  // namespace

template <typename Real>
Backbone<Real> Backbone<Real>::random(const BackboneConfig& arch, Rng rng) {
  arch.validate();
  Backbone b;
  b.arch = arch;
  const double s = 1.0 / std::sqrt(static_cast<double>(arch.dim));
  for (std::size_t l = 0; l < arch.layers; ++l) {
    Rng lr = rng.split(100 + l);
    b.layers.push_back({gaussian<Real>(lr, arch.dim, arch.dim, s), gaussian<Real>(lr, arch.dim, arch.dim, s),
                        gaussian<Real>(lr, arch.dim, arch.dim, s), gaussian<Real>(lr, arch.dim, arch.dim, s)});
  }
  Rng er = rng.split(1);
  b.input_embed = gaussian<Real>(er, arch.feat, arch.dim, 1.0 / std::sqrt(static_cast<double>(arch.feat)));
  Rng cr = rng.split(2);
  b.cls_token = gaussian<Real>(cr, 1, arch.dim, 1.0);
  return b;
}

template <typename Real>
std::vector<Tensor<Real>*> Backbone<Real>::tensors() {
  std::vector<Tensor<Real>*> out{&input_embed, &cls_token};
  for (auto& l : layers) out.insert(out.end(), {&l.wq, &l.wk, &l.wv, &l.wo});
  return out;
}

template <typename Real>
std::vector<const Tensor<Real>*> Backbone<Real>::tensors() const {
  std::vector<const Tensor<Real>*> out{&input_embed, &cls_token};
  for (const auto& l : layers) out.insert(out.end(), {&l.wq, &l.wk, &l.wv, &l.wo});
  return out;
}

template <typename Real>
void Backbone<Real>::freeze() {
  for (auto* t : tensors()) t->set_requires_grad(false);
}

template <typename Real>
bool Backbone<Real>::frozen() const {
  for (const auto* t : tensors())
    if (t->requires_grad() || t->has_grad()) return false;
  return true;
}

template <typename Real>
std::uint64_t Backbone<Real>::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* t : tensors()) h = tensor_hash(*t, h);
  return h;
}

namespace {

template <typename Real>
Var project(Tape<Real>& t, Var x, const Tensor<Real>& w, const MsaHook* hook, int which) {
  Var out = matmul(t, x, t.param(const_cast<Tensor<Real>&>(w)));
  if (hook && hook->lora_down[which].valid()) {
    Var side = matmul(t, matmul(t, x, hook->lora_down[which]), hook->lora_up[which]);
    out = add(t, out, scale(t, side, static_cast<Real>(hook->lora_scale)));
  }
  return out;
}

}  // namespace

template <typename Real>
Var msa_layer(Tape<Real>& t, const Backbone<Real>& bb, std::size_t layer, Var h, std::size_t batch,
              const MsaHook* hook) {
  if (layer >= bb.layers.size()) throw IndexError("layer index " + std::to_string(layer) + " out of range");
  const auto& w = bb.layers[layer];
  if (hook && hook->prompt.valid()) {
    if (layer + 1 != bb.layers.size()) {
      throw ConfigError("ProT prompt attached to layer " + std::to_string(layer + 1) +
                        "; it is only allowed on the last layer");
    }
    h = prepend_rows(t, hook->prompt, h, batch);
  }
  Var x = bb.arch.pre_ln ? layer_norm_rows(t, h) : h;
  Var q = project(t, x, w.wq, hook, 0);
  Var k = project(t, x, w.wk, hook, 1);
  Var v = project(t, x, w.wv, hook, 2);
  if (hook && hook->prefix_k.valid()) k = prepend_rows(t, hook->prefix_k, k, batch);
  if (hook && hook->prefix_v.valid()) v = prepend_rows(t, hook->prefix_v, v, batch);
  Var a = matmul(t, attention(t, q, k, v, batch, bb.arch.heads), t.param(const_cast<Tensor<Real>&>(w.wo)));
  if (hook && hook->seq_down.valid()) {
    a = add(t, a, matmul(t, gelu(t, matmul(t, a, hook->seq_down)), hook->seq_up));
  }
  if (hook && hook->par_down.valid()) {
    a = add(t, a, matmul(t, gelu(t, matmul(t, x, hook->par_down)), hook->par_up));
  }
  return bb.arch.residual ? add(t, h, a) : a;
}

template <typename Real>
Var encode(Tape<Real>& t, const Backbone<Real>& bb, const Tensor<Real>& x, const HookPlan& hooks) {
  const auto& a = bb.arch;
  if (x.rank() != 2 || x.cols() != a.input_width()) {
    throw DimensionError("encode: input " + shape_str(x.shape()) + " does not match " +
                         std::to_string(a.tokens) + " tokens of width " + std::to_string(a.feat));
  }
  if (!hooks.empty() && hooks.size() != a.layers) {
    throw ConfigError("hook plan covers " + std::to_string(hooks.size()) + " layers, backbone has " +
                      std::to_string(a.layers));
  }
  const std::size_t batch = x.rows();
  Tensor<Real> tok = x;
  tok.reshape({batch * a.tokens, a.feat});
  Var emb = matmul(t, t.constant(std::move(tok)), t.param(const_cast<Tensor<Real>&>(bb.input_embed)));
  Var h = prepend_rows(t, t.param(const_cast<Tensor<Real>&>(bb.cls_token)), emb, batch);
  std::size_t len = a.seq_len();
  std::size_t cls = 0;
  for (std::size_t l = 0; l < a.layers; ++l) {
    const MsaHook* hook = hooks.empty() ? nullptr : &hooks[l];
    if (hook && !hook->any()) hook = nullptr;
    if (hook && hook->prompt.valid()) {
      const std::size_t p = t.value(hook->prompt).rows();
      len += p;
      cls += p;
    }
    h = msa_layer(t, bb, l, h, batch, hook);
  }
  Var r = take_row(t, h, batch, len, cls);
  return a.pre_ln ? layer_norm_rows(t, r) : r;
}

template <typename Real>
Tensor<Real> encode_all(const Backbone<Real>& bb, const Tensor<Real>& x,
                        const std::function<HookPlan(Tape<Real>&)>& make_hooks, std::size_t chunk) {
  const std::size_t n = x.rows(), w = x.cols(), d = bb.arch.dim;
  Tensor<Real> out({n, d});
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    Tensor<Real> part({m, w}, std::vector<Real>(x.data().begin() + start * w, x.data().begin() + (start + m) * w));
    Tape<Real> t;
    HookPlan hooks = make_hooks ? make_hooks(t) : HookPlan{};
    const auto& r = t.value(encode(t, bb, part, hooks));
    std::copy(r.data().begin(), r.data().end(), out.data().begin() + start * d);
  }
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  Dataset d;
  d.x = rows(idx);
  for (std::size_t i : idx) d.y.push_back(y.at(i));
  return d;
}

Tensor<float> Dataset::rows(std::span<const std::size_t> idx) const {
  const std::size_t w = x.cols();
  Tensor<float> out({idx.size(), w});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= size()) throw IndexError("dataset row " + std::to_string(idx[r]) + " out of range");
    auto src = x.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

PretrainResult pretrain(const Dataset& pretext, const BackboneConfig& arch, const PretrainConfig& cfg) {
  arch.validate();
  std::set<std::size_t> classes(pretext.y.begin(), pretext.y.end());
  for (std::size_t c : cfg.downstream_classes) {
    if (classes.count(c)) {
      throw ConfigError("pretext class " + std::to_string(c) + " also appears in the downstream class set");
    }
  }
  if (pretext.size() == 0) throw ConfigError("empty pretext dataset");
  std::vector<std::size_t> class_list(classes.begin(), classes.end());
  std::vector<std::size_t> local(pretext.size());
  for (std::size_t i = 0; i < pretext.size(); ++i) {
    local[i] = std::lower_bound(class_list.begin(), class_list.end(), pretext.y[i]) - class_list.begin();
  }

  Rng rng(cfg.seed);
  PretrainResult res;
  auto& bb = res.checkpoint;
  bb = BackboneCheckpoint::random(arch, rng.split(1));
  bb.meta.seed = cfg.seed;
  bb.meta.pretrain_task_count = static_cast<std::uint32_t>(class_list.size());

  Rng hr = rng.split(2);
  Tensor<float> head = gaussian<float>(hr, arch.dim, class_list.size(), 1.0 / std::sqrt(double(arch.dim)));
  Tensor<float> bias({class_list.size()});
  std::vector<Tensor<float>*> params = bb.tensors();
  params.push_back(&head);
  params.push_back(&bias);
  for (auto* p : params) p->set_requires_grad(true);
  Adam<float> opt(params, AdamConfig{cfg.lr});

  const std::size_t n = pretext.size();
  const std::size_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const long total = static_cast<long>(steps_per_epoch * cfg.epochs);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng sr = rng.split(3);
  long step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    sr.shuffle(std::span(order));
    std::size_t correct = 0;
    for (std::size_t s = 0; s < n; s += cfg.batch) {
      std::span<const std::size_t> idx(order.data() + s, std::min(cfg.batch, n - s));
      std::vector<std::size_t> y;
      for (std::size_t i : idx) y.push_back(local[i]);
      opt.zero_grad();
      Tape<float> t;
      Var logits = affine(t, encode(t, bb, pretext.rows(idx)), t.param(head), t.param(bias));
      const auto& lv = t.value(logits);
      for (std::size_t r = 0; r < y.size(); ++r) {
        auto row = lv.row(r);
        if (static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == y[r]) ++correct;
      }
      t.backward(cross_entropy(t, logits, std::span<const std::size_t>(y)));
      opt.step(cosine_lr(cfg.lr, step++, total));
    }
    res.epochs_run = epoch + 1;
    if (static_cast<double>(correct) / static_cast<double>(n) >= cfg.target_accuracy) break;
  }
  bb.freeze();

  // final accuracy with frozen weights, head included
  Tensor<float> reps = encode_all(bb, pretext.x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    float best_v = -INFINITY;
    for (std::size_t c = 0; c < class_list.size(); ++c) {
      float v = bias[c];
      for (std::size_t j = 0; j < arch.dim; ++j) v += reps.at(i, j) * head.at(j, c);
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    if (best == local[i]) ++correct;
  }
  res.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  bb.meta.pretext_accuracy = static_cast<float>(res.train_accuracy);
  return res;
}

// ---------------------------------------------------------------------------
// persistence

std::vector<TensorRecord> checkpoint_records(const BackboneCheckpoint& ckpt) {
  const auto& a = ckpt.arch;
  std::vector<float> meta = {float(a.layers), float(a.dim),  float(a.heads),        float(a.tokens),
                             float(a.feat),   float(a.pre_ln), float(a.residual),   float(ckpt.meta.pretrain_task_count),
                             float((ckpt.meta.seed >> 48) & 0xFFFF), float((ckpt.meta.seed >> 32) & 0xFFFF),
                             float((ckpt.meta.seed >> 16) & 0xFFFF), float(ckpt.meta.seed & 0xFFFF),
                             float(ckpt.meta.version), ckpt.meta.pretext_accuracy};
  std::vector<TensorRecord> out;
  out.push_back({"meta", Tensor<float>({meta.size()}, meta)});
  out.push_back({"input_embed", ckpt.input_embed});
  out.push_back({"cls_token", ckpt.cls_token});
  for (std::size_t l = 0; l < ckpt.layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l + 1) + ".";
    out.push_back({p + "W_Q", ckpt.layers[l].wq});
    out.push_back({p + "W_K", ckpt.layers[l].wk});
    out.push_back({p + "W_V", ckpt.layers[l].wv});
    out.push_back({p + "W_O", ckpt.layers[l].wo});
  }
  for (auto& r : out) r.tensor.set_requires_grad(false);
  return out;
}

BackboneCheckpoint checkpoint_from_records(const std::vector<TensorRecord>& records) {
  auto find = [&](const std::string& name) -> const Tensor<float>& {
    for (const auto& r : records)
      if (r.name == name) return r.tensor;
    throw FormatError("checkpoint is missing tensor \"" + name + "\"", 0);
  };
  const auto& m = find("meta");
  if (m.numel() < 14) throw FormatError("checkpoint meta record too short", 0);
  BackboneCheckpoint b;
  b.arch.layers = std::size_t(m[0]);
  b.arch.dim = std::size_t(m[1]);
  b.arch.heads = std::size_t(m[2]);
  b.arch.tokens = std::size_t(m[3]);
  b.arch.feat = std::size_t(m[4]);
  b.arch.pre_ln = m[5] != 0.f;
  b.arch.residual = m[6] != 0.f;
  b.meta.pretrain_task_count = std::uint32_t(m[7]);
  b.meta.seed = (std::uint64_t(m[8]) << 48) | (std::uint64_t(m[9]) << 32) | (std::uint64_t(m[10]) << 16) |
                std::uint64_t(m[11]);
  b.meta.version = std::uint32_t(m[12]);
  b.meta.pretext_accuracy = m[13];
  b.arch.validate();
  auto expect = [&](const std::string& name, std::size_t r, std::size_t c) {
    const auto& t = find(name);
    if (t.shape() != Shape{r, c}) {
      throw FormatError("tensor " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                            shape_str({r, c}),
                        0);
    }
    return t;
  };
  b.input_embed = expect("input_embed", b.arch.feat, b.arch.dim);
  b.cls_token = expect("cls_token", 1, b.arch.dim);
  for (std::size_t l = 0; l < b.arch.layers; ++l) {
    const std::string p = "layer" + std::to_string(l + 1) + ".";
    const std::size_t d = b.arch.dim;
    b.layers.push_back({expect(p + "W_Q", d, d), expect(p + "W_K", d, d), expect(p + "W_V", d, d),
                        expect(p + "W_O", d, d)});
  }
  return b;
}

void save_checkpoint(const BackboneCheckpoint& ckpt, const std::string& path) {
  write_records(path, checkpoint_records(ckpt));
}

BackboneCheckpoint load_checkpoint(const std::string& path) { return checkpoint_from_records(read_records(path)); }

template struct Backbone<float>;
template struct Backbone<double>;
template Var msa_layer<float>(Tape<float>&, const Backbone<float>&, std::size_t, Var, std::size_t, const MsaHook*);
template Var msa_layer<double>(Tape<double>&, const Backbone<double>&, std::size_t, Var, std::size_t,
                               const MsaHook*);
template Var encode<float>(Tape<float>&, const Backbone<float>&, const Tensor<float>&, const HookPlan&);
template Var encode<double>(Tape<double>&, const Backbone<double>&, const Tensor<double>&, const HookPlan&);
template Tensor<float> encode_all<float>(const Backbone<float>&, const Tensor<float>&,
                                         const std::function<HookPlan(Tape<float>&)>&, std::size_t);
template Tensor<double> encode_all<double>(const Backbone<double>&, const Tensor<double>&,
                                           const std::function<HookPlan(Tape<double>&)>&, std::size_t);

}  // namespace hidepet
