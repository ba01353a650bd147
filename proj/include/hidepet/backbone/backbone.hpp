#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hidepet/numcore/records.hpp"
#include "hidepet/numcore/rng.hpp"
#include "hidepet/numcore/tape.hpp"

namespace hidepet {

struct BackboneConfig {
  std::size_t layers = 4;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t tokens = 8;   // input tokens, class token not included
  std::size_t feat = 16;    // raw feature width per token
  bool pre_ln = true;
  bool residual = true;

  std::size_t seq_len() const { return tokens + 1; }
  std::size_t input_width() const { return tokens * feat; }
  void validate() const;
};

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint32_t pretrain_task_count = 0;
  std::uint32_t version = 1;
  float pretext_accuracy = 0.f;
};

template <typename Real>
struct LayerWeights {
  Tensor<Real> wq, wk, wv, wo;
};

/// Frozen transformer weights theta plus the architecture descriptor.
template <typename Real>
struct Backbone {
  BackboneConfig arch;
  std::vector<LayerWeights<Real>> layers;
  Tensor<Real> input_embed;  // feat x dim
  Tensor<Real> cls_token;    // 1 x dim
  CheckpointMeta meta;

  static Backbone random(const BackboneConfig& arch, Rng rng);

  /// Every weight tensor, in a fixed order.
  std::vector<Tensor<Real>*> tensors();
  std::vector<const Tensor<Real>*> tensors() const;

  void freeze();
  bool frozen() const;
  std::uint64_t hash() const;

  template <typename To>
  Backbone<To> cast() const {
    Backbone<To> b;
    b.arch = arch;
    b.meta = meta;
    for (const auto& l : layers) {
      b.layers.push_back({l.wq.template cast<To>(), l.wk.template cast<To>(), l.wv.template cast<To>(),
                          l.wo.template cast<To>()});
    }
    b.input_embed = input_embed.template cast<To>();
    b.cls_token = cls_token.template cast<To>();
    return b;
  }
};

using BackboneCheckpoint = Backbone<float>;

/// Tape handles of one layer's PET attachment. Unset handles mean "absent".
struct MsaHook {
  Var prompt;                    // ProT: prepended to the layer input
  Var prefix_k, prefix_v;        // PreT: prepended after the K / V projections
  Var seq_down, seq_up;          // Adapter, sequential branch on the MSA output
  Var par_down, par_up;          // Adapter, parallel branch on the MSA input
  std::array<Var, 3> lora_down;  // LoRA on W_Q, W_K, W_V
  std::array<Var, 3> lora_up;
  double lora_scale = 1.0;

  bool any() const;
};

/// Hooks for every layer (index 0 = layer 1). Empty means no PET.
using HookPlan = std::vector<MsaHook>;

/// One MSA block over `batch` stacked sequences h[batch*T x d].
/// Returns [batch*T' x d] where T' = T + prompt length.
template <typename Real>
Var msa_layer(Tape<Real>& t, const Backbone<Real>& bb, std::size_t layer, Var h, std::size_t batch,
              const MsaHook* hook);

/// Class-token representation [batch x d] of raw inputs x[batch x tokens*feat].
template <typename Real>
Var encode(Tape<Real>& t, const Backbone<Real>& bb, const Tensor<Real>& x, const HookPlan& hooks = {});

/// Labeled raw sequences; row i of x is one sample flattened tokens-major.
struct Dataset {
  Tensor<float> x;
  std::vector<std::size_t> y;  // global class ids
  std::size_t size() const { return y.size(); }
  Dataset subset(std::span<const std::size_t> rows) const;
  Tensor<float> rows(std::span<const std::size_t> idx) const;
};

/// Forward-only encoding in chunks; returns [n x d].
template <typename Real>
Tensor<Real> encode_all(const Backbone<Real>& bb, const Tensor<Real>& x,
                        const std::function<HookPlan(Tape<Real>&)>& make_hooks = {},
                        std::size_t chunk = 256);

struct PretrainConfig {
  std::size_t epochs = 30;
  std::size_t batch = 64;
  double lr = 2e-3;
  double target_accuracy = 0.95;
  std::uint64_t seed = 1;
  std::vector<std::size_t> downstream_classes;  // must not meet the pretext classes
};

struct PretrainResult {
  BackboneCheckpoint checkpoint;
  double train_accuracy = 0.0;
  std::size_t epochs_run = 0;
};

PretrainResult pretrain(const Dataset& pretext, const BackboneConfig& arch, const PretrainConfig& cfg);

void save_checkpoint(const BackboneCheckpoint& ckpt, const std::string& path);
BackboneCheckpoint load_checkpoint(const std::string& path);

std::vector<TensorRecord> checkpoint_records(const BackboneCheckpoint& ckpt);
BackboneCheckpoint checkpoint_from_records(const std::vector<TensorRecord>& records);

}  // namespace hidepet
