#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hidepet/backbone/backbone.hpp"

namespace hidepet {

/// A "world" is a dictionary of unit atoms in feature space. Each class is a
/// fixed multiset of atoms, one per token slot; a sample places
/// margin*atom + noise in every slot and shuffles the slots. Pretext and
/// downstream classes draw from the same dictionary, so features learned in
/// pretraining transfer.
struct WorldConfig {
  std::uint64_t seed = 7;
  std::size_t atoms = 48;
  std::size_t feat = 16;
  std::size_t tokens = 8;
  double margin = 1.0;
  double noise = 0.6;
  double offset = 0.0;  // added to every feature, shifts a whole world
  // Classes c and c' with c % families == c' % families share their first
  // `family_shared` atoms, which makes classes of different tasks confusable.
  std::size_t families = 0;
  std::size_t family_shared = 0;
};

class World {
 public:
  explicit World(WorldConfig cfg);

  const WorldConfig& config() const { return cfg_; }
  std::vector<std::size_t> class_atoms(std::size_t class_id) const;

  /// `per_class` samples for each id; `domain` shifts every token by a fixed
  /// random vector (0 = no shift), used for domain-incremental streams.
  Dataset sample(const std::vector<std::size_t>& class_ids, std::size_t per_class, Rng rng,
                 std::size_t domain = 0, std::size_t label_base = 0, bool relabel = false) const;

 private:
  WorldConfig cfg_;
  std::vector<std::vector<double>> atoms_;
};

enum class Scenario { CIL, DIL, TIL };
std::string to_string(Scenario s);
Scenario parse_scenario(const std::string& s);

struct Task {
  Dataset train, test;
  std::vector<std::size_t> classes;  // label space Y_i (global ids)
  std::string tag;                   // source dataset, for mixed streams
};

struct StreamConfig {
  Scenario scenario = Scenario::CIL;
  std::size_t classes = 40;
  std::size_t tasks = 4;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 200;
  std::size_t first_class = 0;
  std::uint64_t seed = 1;
  WorldConfig world;
  std::string tag = "A";
  std::vector<std::size_t> pretext_classes;  // must be disjoint from the stream's classes
};

struct TaskStream {
  Scenario scenario = Scenario::CIL;
  std::vector<Task> tasks;
  std::vector<Task> validation;       // held-out tasks (mixed streams)
  std::vector<Task> validation_few;   // same tasks, 5 training samples per class
  std::string descriptor;
};

TaskStream make_stream(const StreamConfig& cfg);

struct MixedStreamConfig {
  std::vector<StreamConfig> datasets;  // >= 2
  std::size_t cl_tasks_per_dataset = 2;
  std::size_t validation_tasks_per_dataset = 2;
  std::size_t few_shot = 5;
  std::uint64_t seed = 1;
};

/// Tasks from each dataset interleaved (A1 B1 A2 B2 ...); the remaining tasks
/// of each dataset become validation tasks.
TaskStream make_mixed_stream(const MixedStreamConfig& cfg);

/// Pretext data: `classes` ids starting at `first_class`, same world.
Dataset make_pretext(const WorldConfig& world, std::size_t first_class, std::size_t classes,
                     std::size_t per_class, std::uint64_t seed);

}  // namespace hidepet
