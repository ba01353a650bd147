#include "hidepet/bench/suite.hpp"

#include <exception>
#include <filesystem>

#include "hidepet/numcore/error.hpp"

namespace hidepet {

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::Components: return "components";
    case Ablation::Shared: return "shared";
    case Ablation::Recovery: return "recovery";
    case Ablation::Pet: return "pet";
  }
  return "?";
}

Ablation parse_ablation(const std::string& s) {
  for (Ablation a : {Ablation::Components, Ablation::Shared, Ablation::Recovery, Ablation::Pet}) {
    if (s == to_string(a)) return a;
  }
  throw ConfigError("unknown ablation \"" + s + "\" (components, shared, recovery, pet)");
}

std::vector<ExperimentConfig> ablation_configs(const ExperimentConfig& base, Ablation kind) {
  std::vector<ExperimentConfig> out;
  switch (kind) {
    case Ablation::Components: {
      ExperimentConfig c = base;
      c.components = {"naive", "wtp", "wtp+tii", "wtp+tap", "full"};
      c.hide.extra_recoveries.clear();
      out.push_back(c);
      break;
    }
    case Ablation::Shared:
      for (SharedStrategy s :
           {SharedStrategy::FT, SharedStrategy::FSA, SharedStrategy::SL, SharedStrategy::EMA, SharedStrategy::FSA_SL}) {
        ExperimentConfig c = base;
        c.components = {"full"};
        c.hide.shared = s;
        c.hide.extra_recoveries.clear();
        out.push_back(c);
      }
      break;
    case Ablation::Recovery: {
      ExperimentConfig c = base;
      c.components = {"full"};
      c.hide.recovery = RecoveryStrategy::MultiCentroid;
      c.hide.extra_recoveries = {RecoveryStrategy::None, RecoveryStrategy::Prototype, RecoveryStrategy::Variance,
                                 RecoveryStrategy::Covariance};
      out.push_back(c);
      break;
    }
    case Ablation::Pet:
      for (Technique t : {Technique::ProT, Technique::PreT, Technique::Adapter, Technique::LoRA}) {
        ExperimentConfig c = base;
        c.components = {"full"};
        c.hide.pet.technique = t;
        c.hide.extra_recoveries.clear();
        out.push_back(c);
      }
      break;
  }
  return out;
}

std::vector<ExperimentConfig> aka_configs(const ExperimentConfig& base, double lambda) {
  ExperimentConfig with = base;
  with.mixed.enabled = true;
  with.hide.shared_pet.technique = Technique::LoRA;
  with.hide.extra_recoveries.clear();
  with.components = {"full"};
  with.aka = true;
  with.aka_cfg.lambda_ood = lambda;
  ExperimentConfig without = with;
  without.aka = false;
  return {with, without};
}

BackboneCheckpoint cached_backbone(const ExperimentConfig& c, bool write_cache) {
  if (!c.backbone.checkpoint.empty()) return load_checkpoint(c.backbone.checkpoint);
  const auto path = std::filesystem::path(output_root(c)) / ("backbone-" + backbone_hash(c) + ".bin");
  if (std::filesystem::exists(path)) return load_checkpoint(path.string());
  BackboneCheckpoint theta = load_or_pretrain(c);
  if (write_cache) {
    std::filesystem::create_directories(path.parent_path());
    save_checkpoint(theta, path.string());
  }
  return theta;
}

std::vector<ResultRecord> run_suite(const std::vector<ExperimentConfig>& configs, const BackboneCheckpoint& theta) {
  struct Job {
    const ExperimentConfig* cfg;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& c : configs) {
    for (auto s : c.seeds) jobs.push_back({&c, s});
  }
  std::vector<std::vector<ResultRecord>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    try {
      results[k] = run_experiment(*jobs[k].cfg, jobs[k].seed, theta);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<ResultRecord> out;
  for (auto& r : results) out.insert(out.end(), r.begin(), r.end());
  return out;
}

std::vector<std::vector<std::size_t>> lambda_sweep(const ExperimentConfig& c, std::uint64_t seed,
                                                   const BackboneCheckpoint& theta, const std::vector<double>& lambdas) {
  const TaskStream st = stream_for(c, seed);
  std::vector<Dataset> train;
  std::vector<std::vector<std::size_t>> classes;
  for (const auto& t : st.tasks) {
    train.push_back(t.train);
    classes.push_back(t.classes);
  }
  HideConfig hc = c.hide;
  hc.seed = seed;
  return pool_size_sweep(train, classes, theta, lambdas, hc, c.aka_cfg.expand_fraction);
}

}  // namespace hidepet
