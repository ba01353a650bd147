#pragma once

#include <json.hpp>

#include "hidepet/hide/hide.hpp"

namespace hidepet {

struct AkaConfig {
  double lambda_ood = 0.7;
  double expand_fraction = 0.5;  // Expand when strictly more than this share of samples is OOD for every task
};

enum class AkaAction { Init, Expand, Retrieve };
std::string to_string(AkaAction a);

struct AkaDecision {
  std::size_t task = 0;  // 1-based
  AkaAction action = AkaAction::Init;
  std::size_t set = 0;
  double ood_fraction = 0.0;
  std::vector<double> votes;  // share of samples whose nearest earlier task is j
};

nlohmann::json to_json(const AkaDecision& d);

/// Mean Euclidean distance between the L2-normalised `rep` and the
/// L2-normalised stored vectors (or means) of one task's class statistics.
double ood_score(std::span<const float> rep, const std::vector<RepStats>& task_stats);

/// The decision rule on its own: `stats_u[j]` are task j's uninstructed
/// statistics, `set_of_task[j]` its set, `pool_size` the current k.
AkaDecision decide(const Tensor<float>& reps, const std::vector<std::vector<RepStats>>& stats_u,
                   const std::vector<std::size_t>& set_of_task, std::size_t pool_size, double lambda_ood,
                   double expand_fraction = 0.5);

/// A HideState whose shared part is a pool of LoRA sets merged into theta.
HideState make_aka_state(const HideConfig& cfg, const BackboneConfig& arch);

/// Decide (on f_theta of D_i), then train the task with the chosen set.
AkaDecision aka_train_task(HideState& s, std::size_t task_index, const Dataset& train,
                           const std::vector<std::size_t>& classes, const BackboneCheckpoint& theta,
                           const AkaConfig& cfg);

/// Pool size after each task for every threshold. Uninstructed statistics
/// come from the plain backbone, so decisions do not depend on training and
/// the sweep needs only the task data.
std::vector<std::vector<std::size_t>> pool_size_sweep(const std::vector<Dataset>& tasks,
                                                      const std::vector<std::vector<std::size_t>>& classes,
                                                      const BackboneCheckpoint& theta,
                                                      const std::vector<double>& lambdas, const HideConfig& cfg,
                                                      double expand_fraction = 0.5);

}  // namespace hidepet
