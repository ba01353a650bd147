#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hidepet/backbone/backbone.hpp"

namespace hidepet {

enum class Technique { ProT, PreT, AdapterSeq, AdapterPar, Adapter, LoRA };

std::string to_string(Technique t);
Technique parse_technique(const std::string& s);

/// Attachment plan shared by every parameter set of one run.
///
/// `rank` is the per-layer bottleneck budget. When a technique has two
/// components (Seq+Par adapters, or LoRA on two matrices) the budget is split
/// evenly, which keeps PreT(d_p), Adapter(r) and LoRA(r) at 2*r*d scalars per
/// layer when d_p = 2r.
struct PetSpec {
  Technique technique = Technique::Adapter;
  std::vector<std::size_t> layers = {1, 2};  // 1-based
  std::size_t prompt_len = 20;               // d_p
  std::size_t rank = 10;                     // r
  double lora_scale = 1.0;                   // s
  std::string lora_targets = "KV";           // subset of "QKV"
  double init_std = 0.02;

  void validate(std::size_t num_layers) const;
};

template <typename Real>
struct PetParams {
  struct Entry {
    std::size_t layer;  // 1-based
    std::string key;    // "pK", "seq.up", "V.down", ...
    Tensor<Real> value;
  };

  PetSpec spec;
  std::vector<Entry> entries;

  static PetParams init(const PetSpec& spec, std::size_t dim, std::size_t num_layers, Rng rng);

  /// Tape handles for every layer of a backbone with `num_layers` layers.
  HookPlan hooks(Tape<Real>& t, std::size_t num_layers) const;

  std::vector<Tensor<Real>*> tensors();
  std::string entry_name(std::size_t i) const;  // "layer1.pK"
  Tensor<Real>* find(std::size_t layer, const std::string& key);
  const Tensor<Real>* find(std::size_t layer, const std::string& key) const;

  void set_trainable(bool on);
  std::uint64_t hash() const;

  template <typename To>
  PetParams<To> cast() const {
    PetParams<To> p;
    p.spec = spec;
    for (const auto& e : entries) p.entries.push_back({e.layer, e.key, e.value.template cast<To>()});
    return p;
  }
};

/// Trainable scalar count.
template <typename Real>
std::size_t param_budget(const PetParams<Real>& pet);

// Single-attachment forms, usable on their own.

/// ProT: MSA over [p; h]; only valid on the last layer.
template <typename Real>
Var prot_apply(Tape<Real>& t, const Backbone<Real>& bb, std::size_t layer, Var p, Var h, std::size_t batch);

/// PreT: MSA(h_Q, [p_K; h_K], [p_V; h_V]).
template <typename Real>
Var pret_apply(Tape<Real>& t, const Backbone<Real>& bb, std::size_t layer, Var p_k, Var p_v, Var h,
               std::size_t batch);

template <typename Real>
struct ReframeResult {
  Tensor<Real> output;       // [T x d_head]
  std::vector<Real> lambda;  // prefix attention mass per query position
};

/// Single-head PreT written as (1 - lambda) * plain + lambda * prefix-only attention.
/// h is [T x d], projections are [d x d_head], prefixes [p x d_head].
template <typename Real>
ReframeResult<Real> pret_reframe(const Tensor<Real>& h, const Tensor<Real>& wq, const Tensor<Real>& wk,
                                 const Tensor<Real>& wv, const Tensor<Real>& p_k, const Tensor<Real>& p_v);

enum class AdapterMode { Seq, Par };

/// Seq: h' + GELU(h' W_down) W_up;  Par: h' + GELU(h W_down) W_up.
template <typename Real>
Var adapter_apply(Tape<Real>& t, AdapterMode mode, Var h, Var h_out, Var w_down, Var w_up);

/// h' + s * h W_down W_up
template <typename Real>
Var lora_apply(Tape<Real>& t, Var h, Var h_out, Var w_down, Var w_up, double s);

/// W + s * W_down W_up
template <typename Real>
Tensor<Real> lora_merge(const Tensor<Real>& w, const Tensor<Real>& w_down, const Tensor<Real>& w_up, double s);

/// Copy of the backbone with every LoRA target folded into its weight.
template <typename Real>
Backbone<Real> merge_lora(const Backbone<Real>& bb, const PetParams<Real>& lora);

/// e_t = alpha * sum_{i<t} e_i + (1 - alpha) * e_{t-1}; fresh init for t = 1.
template <typename Real>
PetParams<Real> ensemble_init(const std::vector<const PetParams<Real>*>& previous, double alpha,
                              const PetSpec& spec, std::size_t dim, std::size_t num_layers, Rng rng);

}  // namespace hidepet
