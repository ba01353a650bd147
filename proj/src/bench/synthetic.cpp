#include "hidepet/bench/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace hidepet {

World::World(WorldConfig cfg) : cfg_(cfg) {
  if (cfg_.atoms == 0 || cfg_.feat == 0 || cfg_.tokens == 0) throw ConfigError("world dimensions must be positive");
  Rng rng = Rng(cfg_.seed).split(0xA70);
  for (std::size_t a = 0; a < cfg_.atoms; ++a) {
    std::vector<double> v(cfg_.feat);
    double n2 = 0;
    for (auto& x : v) {
      x = rng.normal();
      n2 += x * x;
    }
    for (auto& x : v) x /= std::sqrt(n2);
    atoms_.push_back(std::move(v));
  }
}

std::vector<std::size_t> World::class_atoms(std::size_t class_id) const {
  Rng rng = Rng(cfg_.seed).split(0x100000 + class_id);
  std::vector<std::size_t> out(cfg_.tokens);
  for (auto& a : out) a = rng.below(cfg_.atoms);
  if (cfg_.families > 0) {
    Rng fr = Rng(cfg_.seed).split(0x300000 + class_id % cfg_.families);
    for (std::size_t k = 0; k < std::min(cfg_.family_shared, cfg_.tokens); ++k) out[k] = fr.below(cfg_.atoms);
  }
  return out;
}

Dataset World::sample(const std::vector<std::size_t>& class_ids, std::size_t per_class, Rng rng,
                      std::size_t domain, std::size_t label_base, bool relabel) const {
  const std::size_t F = cfg_.feat, T = cfg_.tokens;
  std::vector<double> shift(F, cfg_.offset);
  if (domain) {
    Rng dr = Rng(cfg_.seed).split(0x200000 + domain);
    for (auto& s : shift) s += 1.5 * dr.normal() / std::sqrt(double(F));
  }
  Dataset d;
  d.x = Tensor<float>({class_ids.size() * per_class, T * F});
  std::size_t row = 0;
  std::vector<std::size_t> slots(T);
  for (std::size_t ci = 0; ci < class_ids.size(); ++ci) {
    const auto atoms = class_atoms(class_ids[ci]);
    Rng cr = rng.split(class_ids[ci]);
    for (std::size_t s = 0; s < per_class; ++s, ++row) {
      std::iota(slots.begin(), slots.end(), 0);
      cr.shuffle(std::span(slots));
      auto out = d.x.row(row);
      for (std::size_t tk = 0; tk < T; ++tk) {
        const auto& atom = atoms_[atoms[slots[tk]]];
        for (std::size_t f = 0; f < F; ++f) {
          out[tk * F + f] = static_cast<float>(cfg_.margin * atom[f] + cfg_.noise * cr.normal() + shift[f]);
        }
      }
      d.y.push_back(relabel ? label_base + ci : class_ids[ci]);
    }
  }
  return d;
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::CIL: return "CIL";
    case Scenario::DIL: return "DIL";
    case Scenario::TIL: return "TIL";
  }
  return "?";
}

Scenario parse_scenario(const std::string& s) {
  if (s == "CIL" || s == "cil") return Scenario::CIL;
  if (s == "DIL" || s == "dil") return Scenario::DIL;
  if (s == "TIL" || s == "til") return Scenario::TIL;
  throw ConfigError("unknown scenario \"" + s + "\"");
}

namespace {

void check_pretext_overlap(const StreamConfig& cfg, std::size_t lo, std::size_t hi) {
  for (std::size_t c : cfg.pretext_classes) {
    if (c >= lo && c < hi) {
      throw ConfigError("class " + std::to_string(c) + " is used both for pretraining and in the stream");
    }
  }
}

Task build_task(const World& w, const std::vector<std::size_t>& ids, const StreamConfig& cfg, Rng rng,
                std::size_t domain, std::size_t train_n) {
  Task t;
  t.classes = ids;
  t.tag = cfg.tag;
  t.train = w.sample(ids, train_n, rng.split(1), domain);
  t.test = w.sample(ids, cfg.test_per_class, rng.split(2), domain);
  return t;
}

}  // namespace

TaskStream make_stream(const StreamConfig& cfg) {
  if (cfg.tasks == 0 || cfg.classes == 0) throw ConfigError("stream needs at least one task and class");
  World w(cfg.world);
  Rng rng(cfg.seed);
  TaskStream s;
  s.scenario = cfg.scenario;
  s.descriptor = cfg.tag + ":" + to_string(cfg.scenario) + ":" + std::to_string(cfg.classes) + "c/" +
                 std::to_string(cfg.tasks) + "t:world" + std::to_string(cfg.world.seed);
  if (cfg.scenario == Scenario::DIL) {
    // every task shares the label space; tasks are domains
    check_pretext_overlap(cfg, cfg.first_class, cfg.first_class + cfg.classes);
    std::vector<std::size_t> ids(cfg.classes);
    std::iota(ids.begin(), ids.end(), cfg.first_class);
    for (std::size_t i = 0; i < cfg.tasks; ++i) {
      s.tasks.push_back(build_task(w, ids, cfg, rng.split(10 + i), i + 1, cfg.train_per_class));
    }
    return s;
  }
  if (cfg.classes % cfg.tasks != 0) {
    throw ConfigError(std::to_string(cfg.classes) + " classes do not split evenly into " +
                      std::to_string(cfg.tasks) + " tasks");
  }
  check_pretext_overlap(cfg, cfg.first_class, cfg.first_class + cfg.classes);
  const std::size_t per = cfg.classes / cfg.tasks;
  for (std::size_t i = 0; i < cfg.tasks; ++i) {
    std::vector<std::size_t> ids(per);
    std::iota(ids.begin(), ids.end(), cfg.first_class + i * per);
    s.tasks.push_back(build_task(w, ids, cfg, rng.split(10 + i), 0, cfg.train_per_class));
  }
  return s;
}

TaskStream make_mixed_stream(const MixedStreamConfig& cfg) {
  if (cfg.datasets.size() < 2) throw ConfigError("a mixed stream needs at least two datasets");
  std::set<std::size_t> seen;
  std::vector<TaskStream> parts;
  for (std::size_t k = 0; k < cfg.datasets.size(); ++k) {
    StreamConfig c = cfg.datasets[k];
    c.tasks = cfg.cl_tasks_per_dataset + cfg.validation_tasks_per_dataset;
    if (c.scenario != Scenario::CIL) throw ConfigError("mixed streams are class-incremental");
    for (std::size_t id = c.first_class; id < c.first_class + c.classes; ++id) {
      if (!seen.insert(id).second) throw ConfigError("datasets of a mixed stream share class " + std::to_string(id));
    }
    parts.push_back(make_stream(c));
  }
  TaskStream s;
  s.scenario = Scenario::CIL;
  for (std::size_t i = 0; i < cfg.cl_tasks_per_dataset; ++i)
    for (auto& p : parts) s.tasks.push_back(p.tasks[i]);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = cfg.cl_tasks_per_dataset; i < parts[k].tasks.size(); ++i) {
      Task full = parts[k].tasks[i];
      Task few = full;
      std::vector<std::size_t> keep;
      std::size_t per_class = cfg.datasets[k].train_per_class;
      for (std::size_t c = 0; c < full.classes.size(); ++c)
        for (std::size_t j = 0; j < std::min(cfg.few_shot, per_class); ++j) keep.push_back(c * per_class + j);
      few.train = full.train.subset(keep);
      s.validation.push_back(std::move(full));
      s.validation_few.push_back(std::move(few));
    }
    s.descriptor += (k ? "+" : "") + parts[k].descriptor;
  }
  return s;
}

Dataset make_pretext(const WorldConfig& world, std::size_t first_class, std::size_t classes, std::size_t per_class,
                     std::uint64_t seed) {
  World w(world);
  std::vector<std::size_t> ids(classes);
  std::iota(ids.begin(), ids.end(), first_class);
  return w.sample(ids, per_class, Rng(seed).split(0xBEEF));
}

}  // namespace hidepet
