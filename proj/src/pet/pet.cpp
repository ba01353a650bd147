#include "hidepet/pet/pet.hpp"

#include <algorithm>
#include <cmath>

namespace hidepet {

std::string to_string(Technique t) {
  switch (t) {
    case Technique::ProT: return "ProT";
    case Technique::PreT: return "PreT";
    case Technique::AdapterSeq: return "AdapterSeq";
    case Technique::AdapterPar: return "AdapterPar";
    case Technique::Adapter: return "Adapter";
    case Technique::LoRA: return "LoRA";
  }
  return "?";
}

Technique parse_technique(const std::string& s) {
  for (Technique t : {Technique::ProT, Technique::PreT, Technique::AdapterSeq, Technique::AdapterPar,
                      Technique::Adapter, Technique::LoRA}) {
    std::string name = to_string(t);
    std::string a = s, b = name;
    std::transform(a.begin(), a.end(), a.begin(), ::tolower);
    std::transform(b.begin(), b.end(), b.begin(), ::tolower);
    if (a == b) return t;
  }
  throw ConfigError("unknown PET technique \"" + s + "\"");
}

namespace {

std::size_t lora_target_index(char c) {
  switch (c) {
    case 'Q': return 0;
    case 'K': return 1;
    case 'V': return 2;
  }
  throw ConfigError(std::string("LoRA target must be one of Q, K, V; got '") + c + "'");
}

std::size_t component_rank(const PetSpec& s) {
  switch (s.technique) {
    case Technique::Adapter: return s.rank / 2;
    case Technique::LoRA: return s.lora_targets.empty() ? 0 : s.rank / s.lora_targets.size();
    default: return s.rank;
  }
}

}  // namespace

void PetSpec::validate(std::size_t num_layers) const {
  if (layers.empty()) throw ConfigError("PET layer plan is empty");
  for (std::size_t l : layers) {
    if (l == 0 || l > num_layers) {
      throw ConfigError("PET layer " + std::to_string(l) + " outside 1.." + std::to_string(num_layers));
    }
  }
  switch (technique) {
    case Technique::ProT:
      if (layers.size() != 1 || layers[0] != num_layers) {
        throw ConfigError("ProT can only be attached to the last layer (" + std::to_string(num_layers) + ")");
      }
      break;
    case Technique::PreT:
      if (prompt_len % 2 != 0) {
        throw InvariantError("PreT prefix length d_p=" + std::to_string(prompt_len) + " must be even");
      }
      break;
    case Technique::LoRA:
      if (lora_scale < 1.0) throw InvariantError("LoRA scale s must be >= 1");
      if (lora_targets.empty()) throw ConfigError("LoRA needs at least one target matrix");
      for (char c : lora_targets) lora_target_index(c);
      [[fallthrough]];
    case Technique::AdapterSeq:
    case Technique::AdapterPar:
    case Technique::Adapter:
      if (rank == 0) throw ConfigError("bottleneck rank r must be >= 1");
      if (component_rank(*this) == 0 || (technique == Technique::Adapter && rank % 2) ||
          (technique == Technique::LoRA && rank % lora_targets.size())) {
        throw ConfigError("rank " + std::to_string(rank) + " does not split evenly across the " + to_string(technique) +
                          " components");
      }
      break;
  }
}

template <typename Real>
PetParams<Real> PetParams<Real>::init(const PetSpec& spec, std::size_t dim, std::size_t num_layers, Rng rng) {
  spec.validate(num_layers);
  PetParams p;
  p.spec = spec;
  auto gauss = [&](std::size_t r, std::size_t c) {
    Tensor<Real> t({r, c});
    for (auto& v : t.data()) v = static_cast<Real>(rng.normal() * spec.init_std);
    return t;
  };
  const std::size_t r = component_rank(spec);
  for (std::size_t l : spec.layers) {
    switch (spec.technique) {
      case Technique::ProT:
        p.entries.push_back({l, "p", gauss(spec.prompt_len, dim)});
        break;
      case Technique::PreT:
        p.entries.push_back({l, "pK", gauss(spec.prompt_len / 2, dim)});
        p.entries.push_back({l, "pV", gauss(spec.prompt_len / 2, dim)});
        break;
      case Technique::AdapterSeq:
      case Technique::AdapterPar:
      case Technique::Adapter:
        if (spec.technique != Technique::AdapterPar) {
          p.entries.push_back({l, "seq.down", gauss(dim, r)});
          p.entries.push_back({l, "seq.up", Tensor<Real>({r, dim})});
        }
        if (spec.technique != Technique::AdapterSeq) {
          p.entries.push_back({l, "par.down", gauss(dim, r)});
          p.entries.push_back({l, "par.up", Tensor<Real>({r, dim})});
        }
        break;
      case Technique::LoRA:
        for (char c : spec.lora_targets) {
          p.entries.push_back({l, std::string(1, c) + ".down", gauss(dim, r)});
          p.entries.push_back({l, std::string(1, c) + ".up", Tensor<Real>({r, dim})});
        }
        break;
    }
  }
  return p;
}

template <typename Real>
HookPlan PetParams<Real>::hooks(Tape<Real>& t, std::size_t num_layers) const {
  HookPlan plan(num_layers);
  for (const auto& e : entries) {
    if (e.layer == 0 || e.layer > num_layers) throw ConfigError("PET entry on missing layer " + std::to_string(e.layer));
    MsaHook& h = plan[e.layer - 1];
    Var v = t.param(const_cast<Tensor<Real>&>(e.value));
    if (e.key == "p") h.prompt = v;
    else if (e.key == "pK") h.prefix_k = v;
    else if (e.key == "pV") h.prefix_v = v;
    else if (e.key == "seq.down") h.seq_down = v;
    else if (e.key == "seq.up") h.seq_up = v;
    else if (e.key == "par.down") h.par_down = v;
    else if (e.key == "par.up") h.par_up = v;
    else if (e.key.size() > 2 && e.key[1] == '.') {
      const std::size_t idx = lora_target_index(e.key[0]);
      (e.key.substr(2) == "down" ? h.lora_down : h.lora_up)[idx] = v;
      h.lora_scale = spec.lora_scale;
    } else {
      throw ConfigError("unknown PET tensor key \"" + e.key + "\"");
    }
  }
  return plan;
}

template <typename Real>
std::vector<Tensor<Real>*> PetParams<Real>::tensors() {
  std::vector<Tensor<Real>*> out;
  for (auto& e : entries) out.push_back(&e.value);
  return out;
}

template <typename Real>
std::string PetParams<Real>::entry_name(std::size_t i) const {
  return "layer" + std::to_string(entries.at(i).layer) + "." + entries.at(i).key;
}

template <typename Real>
Tensor<Real>* PetParams<Real>::find(std::size_t layer, const std::string& key) {
  for (auto& e : entries)
    if (e.layer == layer && e.key == key) return &e.value;
  return nullptr;
}

template <typename Real>
const Tensor<Real>* PetParams<Real>::find(std::size_t layer, const std::string& key) const {
  for (const auto& e : entries)
    if (e.layer == layer && e.key == key) return &e.value;
  return nullptr;
}

template <typename Real>
void PetParams<Real>::set_trainable(bool on) {
  for (auto& e : entries) e.value.set_requires_grad(on);
}

template <typename Real>
std::uint64_t PetParams<Real>::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : entries) h = tensor_hash(e.value, h);
  return h;
}

template <typename Real>
std::size_t param_budget(const PetParams<Real>& pet) {
  std::size_t n = 0;
  for (const auto& e : pet.entries) n += e.value.numel();
  return n;
}

template <typename Real>
Var prot_apply(Tape<Real>& t, const Backbone<Real>& bb, std::size_t layer, Var p, Var h, std::size_t batch) {
  MsaHook hook;
  hook.prompt = p;
  return msa_layer(t, bb, layer, h, batch, &hook);
}

template <typename Real>
Var pret_apply(Tape<Real>& t, const Backbone<Real>& bb, std::size_t layer, Var p_k, Var p_v, Var h,
               std::size_t batch) {
  if (t.value(p_k).rows() != t.value(p_v).rows()) {
    throw InvariantError("PreT halves differ in length; d_p must be even and split evenly");
  }
  MsaHook hook;
  hook.prefix_k = p_k;
  hook.prefix_v = p_v;
  return msa_layer(t, bb, layer, h, batch, &hook);
}

namespace {

template <typename Real>
Tensor<Real> mm(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.cols() != b.rows()) throw DimensionError("shape mismatch " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  Tensor<Real> c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t p = 0; p < a.cols(); ++p)
      for (std::size_t j = 0; j < b.cols(); ++j) c.at(i, j) += a.at(i, p) * b.at(p, j);
  return c;
}

}  // namespace

template <typename Real>
ReframeResult<Real> pret_reframe(const Tensor<Real>& h, const Tensor<Real>& wq, const Tensor<Real>& wk,
                                 const Tensor<Real>& wv, const Tensor<Real>& p_k, const Tensor<Real>& p_v) {
  const Tensor<Real> q = mm(h, wq), k = mm(h, wk), v = mm(h, wv);
  const std::size_t T = h.rows(), dh = q.cols();
  const std::size_t np = p_k.numel() ? p_k.rows() : 0;
  if (np && (p_k.cols() != dh || p_v.cols() != dh || p_v.rows() != np)) {
    throw DimensionError("prefix shapes do not match the head width");
  }
  const Real scale = Real(1) / std::sqrt(Real(dh));
  ReframeResult<Real> r{Tensor<Real>({T, dh}), std::vector<Real>(T, Real(0))};
  std::vector<Real> sp(T), sx(np);
  for (std::size_t i = 0; i < T; ++i) {
    Real mx = -INFINITY;
    for (std::size_t j = 0; j < T; ++j) {
      Real a = 0;
      for (std::size_t c = 0; c < dh; ++c) a += q.at(i, c) * k.at(j, c);
      sp[j] = a * scale;
      mx = std::max(mx, sp[j]);
    }
    for (std::size_t j = 0; j < np; ++j) {
      Real a = 0;
      for (std::size_t c = 0; c < dh; ++c) a += q.at(i, c) * p_k.at(j, c);
      sx[j] = a * scale;
      mx = std::max(mx, sx[j]);
    }
    Real zp = 0, zx = 0;
    for (auto& s : sp) zp += (s = std::exp(s - mx));
    for (auto& s : sx) zx += (s = std::exp(s - mx));
    const Real lambda = zx / (zp + zx);
    r.lambda[i] = lambda;
    for (std::size_t c = 0; c < dh; ++c) {
      Real plain = 0, pre = 0;
      for (std::size_t j = 0; j < T; ++j) plain += sp[j] / zp * v.at(j, c);
      for (std::size_t j = 0; j < np; ++j) pre += sx[j] / zx * p_v.at(j, c);
      r.output.at(i, c) = (Real(1) - lambda) * plain + (np ? lambda * pre : Real(0));
    }
  }
  return r;
}

template <typename Real>
Var adapter_apply(Tape<Real>& t, AdapterMode mode, Var h, Var h_out, Var w_down, Var w_up) {
  if (t.value(w_down).cols() == 0) throw ConfigError("adapter bottleneck r must be >= 1");
  Var src = mode == AdapterMode::Seq ? h_out : h;
  return add(t, h_out, matmul(t, gelu(t, matmul(t, src, w_down)), w_up));
}

template <typename Real>
Var lora_apply(Tape<Real>& t, Var h, Var h_out, Var w_down, Var w_up, double s) {
  if (s < 1.0) throw InvariantError("LoRA scale s must be >= 1");
  return add(t, h_out, scale(t, matmul(t, matmul(t, h, w_down), w_up), static_cast<Real>(s)));
}

template <typename Real>
Tensor<Real> lora_merge(const Tensor<Real>& w, const Tensor<Real>& w_down, const Tensor<Real>& w_up, double s) {
  if (s < 1.0) throw InvariantError("LoRA scale s must be >= 1");
  Tensor<Real> delta = mm(w_down, w_up);
  if (delta.shape() != w.shape()) throw DimensionError("LoRA factors do not match the target matrix");
  Tensor<Real> out = w;
  out.set_requires_grad(false);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += static_cast<Real>(s) * delta[i];
  return out;
}

template <typename Real>
Backbone<Real> merge_lora(const Backbone<Real>& bb, const PetParams<Real>& lora) {
  if (lora.spec.technique != Technique::LoRA) {
    throw UnsupportedTechniqueError("only LoRA sets can be merged into the backbone, got " +
                                    to_string(lora.spec.technique));
  }
  Backbone<Real> out = bb;
  for (auto* t : out.tensors()) t->set_requires_grad(false);
  for (std::size_t l : lora.spec.layers) {
    auto& lw = out.layers.at(l - 1);
    for (char c : lora.spec.lora_targets) {
      const std::string k(1, c);
      Tensor<Real>& w = c == 'Q' ? lw.wq : c == 'K' ? lw.wk : lw.wv;
      w = lora_merge(w, *lora.find(l, k + ".down"), *lora.find(l, k + ".up"), lora.spec.lora_scale);
    }
  }
  return out;
}

template <typename Real>
PetParams<Real> ensemble_init(const std::vector<const PetParams<Real>*>& previous, double alpha, const PetSpec& spec,
                              std::size_t dim, std::size_t num_layers, Rng rng) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("ensemble alpha must lie in [0, 1]");
  if (previous.empty()) return PetParams<Real>::init(spec, dim, num_layers, rng);
  const PetParams<Real>& last = *previous.back();
  for (const auto* p : previous) {
    if (p->spec.technique != last.spec.technique || p->entries.size() != last.entries.size()) {
      throw ConfigError("ensemble over parameter sets of different techniques");
    }
    for (std::size_t j = 0; j < p->entries.size(); ++j) {
      if (p->entries[j].value.shape() != last.entries[j].value.shape() || p->entries[j].key != last.entries[j].key) {
        throw ConfigError("ensemble over parameter sets of different shapes");
      }
    }
  }
  PetParams<Real> out = last;
  for (std::size_t j = 0; j < out.entries.size(); ++j) {
    auto& v = out.entries[j].value;
    v.set_requires_grad(false);
    for (std::size_t k = 0; k < v.numel(); ++k) {
      double s = 0;
      for (const auto* p : previous) s += p->entries[j].value[k];
      v[k] = static_cast<Real>(alpha * s + (1.0 - alpha) * last.entries[j].value[k]);
    }
  }
  return out;
}

#define HIDEPET_INSTANTIATE_PET(Real)                                                                             \
  template struct PetParams<Real>;                                                                                \
  template std::size_t param_budget<Real>(const PetParams<Real>&);                                                \
  template Var prot_apply<Real>(Tape<Real>&, const Backbone<Real>&, std::size_t, Var, Var, std::size_t);          \
  template Var pret_apply<Real>(Tape<Real>&, const Backbone<Real>&, std::size_t, Var, Var, Var, std::size_t);     \
  template ReframeResult<Real> pret_reframe<Real>(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,  \
                                                  const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&); \
  template Var adapter_apply<Real>(Tape<Real>&, AdapterMode, Var, Var, Var, Var);                                 \
  template Var lora_apply<Real>(Tape<Real>&, Var, Var, Var, Var, double);                                         \
  template Tensor<Real> lora_merge<Real>(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, double);  \
  template Backbone<Real> merge_lora<Real>(const Backbone<Real>&, const PetParams<Real>&);                        \
  template PetParams<Real> ensemble_init<Real>(const std::vector<const PetParams<Real>*>&, double,               \
                                               const PetSpec&, std::size_t, std::size_t, Rng);

HIDEPET_INSTANTIATE_PET(float)
HIDEPET_INSTANTIATE_PET(double)

}  // namespace hidepet
