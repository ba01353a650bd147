#pragma once

#include <string>
#include <vector>

#include "hidepet/bench/experiment.hpp"

namespace hidepet {

/// Families of runs behind the comparison tables.
enum class Ablation { Components, Shared, Recovery, Pet };
std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& s);

/// Variants of `base` an ablation compares. Components: one config scoring
/// every ladder view. Shared: one config per strategy. Recovery: one config
/// with every strategy as a side-by-side head bundle. Pet: one per technique.
std::vector<ExperimentConfig> ablation_configs(const ExperimentConfig& base, Ablation kind);

/// The mixed-stream pair {with AKA, without AKA} at threshold `lambda`.
/// Both use LoRA shared sets so the only difference is the pool.
std::vector<ExperimentConfig> aka_configs(const ExperimentConfig& base, double lambda);

/// theta for a config: its checkpoint if one is named, else
/// <output root>/backbone-<backbone_hash>.bin, pretraining and caching it
/// when missing.
BackboneCheckpoint cached_backbone(const ExperimentConfig& c, bool write_cache = true);

/// Every config for each of its seeds. Runs are independent and execute
/// concurrently; records come back in config, then seed order.
std::vector<ResultRecord> run_suite(const std::vector<ExperimentConfig>& configs, const BackboneCheckpoint& theta);

/// Pool size after every task of the config's (mixed) stream, per threshold.
std::vector<std::vector<std::size_t>> lambda_sweep(const ExperimentConfig& c, std::uint64_t seed,
                                                   const BackboneCheckpoint& theta, const std::vector<double>& lambdas);

}  // namespace hidepet
