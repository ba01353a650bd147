#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hidepet/hide/stats.hpp"
#include "hidepet/pet/pet.hpp"

namespace hidepet {

/// Affine head R^d -> R^n whose width grows by appending columns.
template <typename Real>
struct LinearHead {
  Tensor<Real> w;  // d x n
  Tensor<Real> b;  // 1 x n

  static LinearHead make(std::size_t dim) { return {Tensor<Real>({dim, 0}), Tensor<Real>({1, 0})}; }
  std::size_t width() const { return w.cols(); }
  std::size_t dim() const { return w.rows(); }
  void append(std::size_t k, Rng& rng, double std = 0.01);
  Var logits(Tape<Real>& t, Var reps) const;
  std::vector<Tensor<Real>*> tensors() { return {&w, &b}; }
  void set_trainable(bool on) {
    w.set_requires_grad(on);
    b.set_requires_grad(on);
  }
};

/// Task-identity head: GELU hidden layer (width 0 = none) then an affine
/// output layer with one column per task.
template <typename Real>
struct TiiHead {
  Tensor<Real> w1;  // d x h
  Tensor<Real> b1;  // 1 x h
  LinearHead<Real> out;

  static TiiHead make(std::size_t dim, std::size_t hidden, Rng& rng);
  std::size_t width() const { return out.width(); }
  std::size_t hidden() const { return w1.empty() ? 0 : w1.cols(); }
  void append(std::size_t k, Rng& rng) { out.append(k, rng); }
  Var logits(Tape<Real>& t, Var reps) const;
  std::vector<Tensor<Real>*> tensors();
  void set_trainable(bool on);
};

// Within-task loss: CE over the current task's columns only. Labels are head columns
// and must belong to `task_columns`.
template <typename Real>
Var wtp_loss(Tape<Real>& t, Var reps, const LinearHead<Real>& psi, std::span<const std::size_t> task_columns,
             std::span<const std::size_t> label_columns);

// Task-identity loss: CE of omega over all t tasks.
template <typename Real>
Var tii_loss(Tape<Real>& t, Var reps, const TiiHead<Real>& omega, std::span<const std::size_t> task_ids);

// Task-adaptive loss: CE over every observed class.
template <typename Real>
Var tap_loss(Tape<Real>& t, Var reps, const LinearHead<Real>& psi, std::span<const std::size_t> label_columns);

enum class SharedStrategy { FT, FSA, SL, EMA, FSA_SL };
std::string to_string(SharedStrategy s);
SharedStrategy parse_shared(const std::string& s);

struct HideConfig {
  PetSpec pet;                   // e_i
  PetSpec shared_pet;            // g (or g_1..g_k)
  SharedStrategy shared = SharedStrategy::FSA_SL;
  RecoveryStrategy recovery = RecoveryStrategy::MultiCentroid;
  std::vector<RecoveryStrategy> extra_recoveries;  // evaluated side by side on the same e/g
  std::size_t epochs = 30;       // E
  std::size_t head_epochs = 20;  // E-bar
  std::size_t batch = 32;
  std::size_t head_batch = 128;
  std::size_t samples_per_class = 64;
  double lr_pet = 0.01;
  double lr_head = 0.01;
  double lr_big = 0.01;
  double lr_small = 0.001;
  double ema_momentum = 0.1;
  double alpha = 0.1;
  bool task_local_ce = true;  // false: softmax over every observed class (naive baseline)
  bool train_heads = true;    // run the head phase on recovered statistics
  std::size_t omega_hidden = 128;
  StatsOptions stats;
  std::uint64_t seed = 1;
};

/// How g is treated while learning one task.
struct SharedPolicy {
  bool train = true;
  double lr = 0.0;
  std::size_t frozen_epochs = 0;  // g held fixed for the first epochs (F&T)
  bool ema = false;
  double momentum = 0.0;
};

SharedPolicy update_shared(SharedStrategy strategy, std::size_t task_index, const HideConfig& cfg);

struct ClassRegistry {
  std::vector<std::size_t> class_of_column;
  std::map<std::size_t, std::size_t> column_of_class;
  std::vector<std::vector<std::size_t>> task_columns;

  std::size_t column(std::size_t class_id) const;
  std::size_t width() const { return class_of_column.size(); }
};

/// Statistics and heads for one recovery strategy.
struct HeadBundle {
  RecoveryStrategy recovery = RecoveryStrategy::MultiCentroid;
  std::vector<std::vector<RepStats>> stats_u;  // [task][class in task], uninstructed
  std::vector<std::vector<RepStats>> stats_i;  // instructed
  TiiHead<float> omega;
  LinearHead<float> psi;
};

struct HideState {
  HideConfig cfg;
  std::size_t t = 0;
  std::vector<PetParams<float>> e;
  std::vector<PetParams<float>> g_sets;  // g_1 (g_1..g_k with AKA)
  std::vector<std::size_t> set_of_task;
  bool aka = false;  // uninstructed = plain theta, instructed = theta + g_set merged
  ClassRegistry registry;
  LinearHead<float> psi_wtp;              // columns as left by each task's within-task phase
  std::vector<std::vector<float>> task_keys;  // mean plain-theta representation per task
  std::vector<HeadBundle> bundles;        // [0] = cfg.recovery, then cfg.extra_recoveries
  std::vector<std::string> warnings;

  static HideState create(const HideConfig& cfg, const BackboneConfig& arch);

  HeadBundle& main() { return bundles.at(0); }
  const HeadBundle& main() const { return bundles.at(0); }
};

/// Generator used to fit the statistics of one class (class_pos is the
/// class's position within its task).
Rng stats_rng(std::uint64_t seed, std::size_t task_index, std::size_t bundle, std::size_t class_pos, bool instructed);

/// Shared-set plan for one task; filled by update_shared or by AKA's decision.
struct TaskPlan {
  std::size_t set = 0;
  SharedPolicy policy;
};

/// One full learning step for task `task_index` (1-based, strictly the next task).
void train_task(HideState& s, std::size_t task_index, const Dataset& train, const std::vector<std::size_t>& classes,
                const BackboneCheckpoint& theta, std::optional<TaskPlan> plan = std::nullopt);

// ---------------------------------------------------------------------------
// representations and inference

/// Uninstructed representation f_{theta,g} (or f_theta with AKA).
Tensor<float> encode_uninstructed(const HideState& s, const BackboneCheckpoint& theta, const Tensor<float>& x);
/// Instructed representation for task i (0-based).
Tensor<float> encode_instructed(const HideState& s, const BackboneCheckpoint& theta, std::size_t task,
                                const Tensor<float>& x);

enum class View { Naive, WTP, WTP_TII, WTP_TAP, Full, Oracle, OracleWTP };
std::string to_string(View v);
View parse_view(const std::string& s);

struct EvalReps {
  Tensor<float> plain;                  // f_theta
  Tensor<float> uninstructed;           // f_{theta,g}
  std::vector<Tensor<float>> instructed;  // per learned task
};

EvalReps encode_for_eval(const HideState& s, const BackboneCheckpoint& theta, const Tensor<float>& x);

struct Predictions {
  std::vector<std::size_t> task;   // 0-based
  std::vector<std::size_t> label;  // global class id
};

Predictions predict(const HideState& s, const HeadBundle& heads, const EvalReps& reps, View view,
                    std::span<const std::size_t> true_task = {});

/// Convenience: class prediction for raw inputs with the full method.
Predictions infer(const HideState& s, const BackboneCheckpoint& theta, const Tensor<float>& x);

struct TiiReport {
  double tii_accuracy = 0.0;
  double faa_u = 0.0;
};

/// TII accuracy of omega, and accuracy of an auxiliary all-class head trained
/// on the uninstructed statistics (FAA-U).
TiiReport eval_tii(const HideState& s, const BackboneCheckpoint& theta, const std::vector<Dataset>& tests,
                   std::uint64_t seed);

void save_state(const HideState& s, const std::string& dir);
HideState load_state(const std::string& dir);

}  // namespace hidepet
