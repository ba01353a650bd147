#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hidepet/aka/aka.hpp"
#include "hidepet/bench/metrics.hpp"
#include "hidepet/bench/synthetic.hpp"
#include "hidepet/hide/hide.hpp"

namespace hidepet {

/// Where theta comes from: a checkpoint file, or pretraining on pretext
/// classes of the experiment's world.
struct BackboneSpec {
  std::string checkpoint;
  BackboneConfig arch;
  std::size_t pretext_first_class = 1000;
  std::size_t pretext_classes = 80;
  std::size_t pretext_per_class = 100;
  std::uint64_t pretext_seed = 3;
  PretrainConfig pretrain;
};

/// Two-world stream for the AKA protocol: dataset A lives in the main world,
/// dataset B in `second_world`.
struct MixedSpec {
  bool enabled = false;
  WorldConfig second_world;
  std::size_t second_first_class = 500;
  std::size_t cl_tasks_per_dataset = 2;
  std::size_t validation_tasks_per_dataset = 2;
  std::size_t few_shot = 5;
  std::size_t probe_epochs = 100;
  double probe_lr = 0.05;
};

struct ExperimentConfig {
  Scenario scenario = Scenario::CIL;
  WorldConfig world;
  std::size_t classes = 40;
  std::size_t tasks = 4;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  std::size_t first_class = 0;
  BackboneSpec backbone;
  HideConfig hide;
  /// Views scored after every task: naive, wtp, wtp+tii, wtp+tap, full, oracle, oracle-wtp.
  /// "naive" trains a second state with a global softmax and no head phase.
  std::vector<std::string> components{"full"};
  bool tii_report = true;  // TII accuracy and FAA-U at the end of the run
  MixedSpec mixed;
  bool aka = false;
  AkaConfig aka_cfg;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir;  // empty: $HIDEPET_OUT, else ./hidepet-out

  /// Desk defaults used by the CLI and the acceptance run.
  static ExperimentConfig desk();
};

nlohmann::json to_json(const WorldConfig& w);
WorldConfig world_from_json(const nlohmann::json& j, WorldConfig base = {});
nlohmann::json to_json(const BackboneConfig& a);
BackboneConfig arch_from_json(const nlohmann::json& j, BackboneConfig base = {});
nlohmann::json to_json(const ExperimentConfig& c);
/// Keys absent from `j` keep the value in `base`; unknown keys are a ConfigError.
ExperimentConfig experiment_from_json(const nlohmann::json& j, ExperimentConfig base = ExperimentConfig::desk());
ExperimentConfig load_experiment(const std::string& path);

/// FNV-1a over the canonical JSON of everything that shapes a run except
/// seeds and output location.
std::string config_hash(const ExperimentConfig& c);
/// Same scheme over what determines a pretrained backbone.
std::string backbone_hash(const ExperimentConfig& c);

/// Resolves output_dir / $HIDEPET_OUT / ./hidepet-out.
std::string output_root(const ExperimentConfig& c);

struct ResultRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string scenario;
  std::string stream;
  std::string pet;
  std::string shared;
  std::string recovery;
  std::string components;
  bool aka = false;
  AccuracyMatrix matrix;
  Metrics metrics;
  std::optional<double> tii_accuracy;
  std::optional<double> faa_u;
  std::optional<std::size_t> pool_size;
  std::optional<double> lambda_ood;
  std::vector<AkaDecision> decisions;
  std::optional<double> validation_full;
  std::optional<double> validation_few;
  double wall_seconds = 0;  // kept out of to_json so records stay reproducible

  nlohmann::json to_json() const;
  static ResultRecord from_json(const nlohmann::json& j);
};

BackboneCheckpoint load_or_pretrain(const ExperimentConfig& c);

/// Trains the stream for one seed and scores every requested component after
/// every task. Records come out in component order, then one "full" record
/// per extra recovery strategy.
std::vector<ResultRecord> run_experiment(const ExperimentConfig& c, std::uint64_t seed,
                                         const BackboneCheckpoint& theta);

/// The stream a config and seed describe (mixed streams included).
TaskStream stream_for(const ExperimentConfig& c, std::uint64_t seed);

/// Appends records to `path` (JSON lines) and wall times to `path`.timing.jsonl.
void append_result_records(const std::string& path, const std::vector<ResultRecord>& records);
std::vector<ResultRecord> read_result_records(const std::string& path);

/// Accuracy of a linear probe trained on `train` reps and scored on `test` reps.
double linear_probe_accuracy(const Tensor<float>& train_x, const std::vector<std::size_t>& train_y,
                             const Tensor<float>& test_x, const std::vector<std::size_t>& test_y,
                             std::size_t epochs, double lr, std::uint64_t seed);

}  // namespace hidepet
