#include "hidepet/aka/aka.hpp"

#include <cmath>

namespace hidepet {

std::string to_string(AkaAction a) {
  switch (a) {
    case AkaAction::Init: return "init";
    case AkaAction::Expand: return "expand";
    case AkaAction::Retrieve: return "retrieve";
  }
  return "?";
}

nlohmann::json to_json(const AkaDecision& d) {
  return {{"task", d.task},
          {"decision", to_string(d.action)},
          {"set", d.set},
          {"ood_fraction", d.ood_fraction},
          {"votes", d.votes}};
}

namespace {

std::vector<float> normalized(std::span<const float> v) {
  double n2 = 0;
  for (float x : v) n2 += double(x) * x;
  const double inv = n2 > 0 ? 1.0 / std::sqrt(n2) : 0.0;
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] * inv);
  return out;
}

// normalised reference points of one task
std::vector<std::vector<float>> anchors(const std::vector<RepStats>& task_stats) {
  std::vector<std::vector<float>> out;
  for (const auto& s : task_stats) {
    if (!s.vectors.empty()) {
      for (const auto& v : s.vectors) out.push_back(normalized(v));
    } else if (!s.mean.empty()) {
      out.push_back(normalized(s.mean));
    }
  }
  if (out.empty()) throw StateError("task has no uninstructed statistics to score against");
  return out;
}

double mean_distance(const std::vector<float>& x, const std::vector<std::vector<float>>& pts) {
  double total = 0;
  for (const auto& p : pts) {
    double d2 = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double z = double(x[k]) - p[k];
      d2 += z * z;
    }
    total += std::sqrt(d2);
  }
  return total / double(pts.size());
}

}  // namespace

double ood_score(std::span<const float> rep, const std::vector<RepStats>& task_stats) {
  return mean_distance(normalized(rep), anchors(task_stats));
}

AkaDecision decide(const Tensor<float>& reps, const std::vector<std::vector<RepStats>>& stats_u,
                   const std::vector<std::size_t>& set_of_task, std::size_t pool_size, double lambda_ood,
                   double expand_fraction) {
  AkaDecision d;
  d.task = stats_u.size() + 1;
  if (stats_u.empty()) {
    d.action = AkaAction::Init;
    d.set = 0;
    d.ood_fraction = 1.0;
    return d;
  }
  std::vector<std::vector<std::vector<float>>> pts;
  for (const auto& t : stats_u) pts.push_back(anchors(t));
  const std::size_t n = reps.rows();
  std::vector<std::size_t> votes(stats_u.size(), 0);
  std::size_t ood = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = normalized(reps.row(i));
    double best = INFINITY;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      const double sc = mean_distance(x, pts[j]);
      if (sc < best) {
        best = sc;
        arg = j;
      }
    }
    ood += best > lambda_ood;
    ++votes[arg];
  }
  d.ood_fraction = n ? double(ood) / double(n) : 0.0;
  for (auto v : votes) d.votes.push_back(n ? double(v) / double(n) : 0.0);
  if (d.ood_fraction > expand_fraction) {
    d.action = AkaAction::Expand;
    d.set = pool_size;
  } else {
    std::size_t best = 0;
    for (std::size_t j = 1; j < votes.size(); ++j)
      if (votes[j] > votes[best]) best = j;
    d.action = AkaAction::Retrieve;
    d.set = set_of_task.at(best);
  }
  return d;
}

HideState make_aka_state(const HideConfig& cfg, const BackboneConfig& arch) {
  if (cfg.shared_pet.technique != Technique::LoRA) {
    throw UnsupportedTechniqueError("the shared pool holds LoRA sets, got " + to_string(cfg.shared_pet.technique));
  }
  HideState s = HideState::create(cfg, arch);
  s.aka = true;
  return s;
}

AkaDecision aka_train_task(HideState& s, std::size_t task_index, const Dataset& train,
                           const std::vector<std::size_t>& classes, const BackboneCheckpoint& theta,
                           const AkaConfig& cfg) {
  if (!s.aka) throw StateError("state was not created for adaptive knowledge accumulation");
  if (task_index != s.t + 1) {
    throw ProtocolError("expected task " + std::to_string(s.t + 1) + ", got task " + std::to_string(task_index));
  }
  AkaDecision d = decide(encode_all(theta, train.x), s.main().stats_u, s.set_of_task, s.g_sets.size(), cfg.lambda_ood,
                         cfg.expand_fraction);
  TaskPlan plan;
  plan.set = d.set;
  plan.policy.train = true;
  // a set's first task learns fast, later tasks refine it slowly
  plan.policy.lr = d.action == AkaAction::Retrieve ? s.cfg.lr_small : s.cfg.lr_big;
  train_task(s, task_index, train, classes, theta, plan);
  return d;
}

std::vector<std::vector<std::size_t>> pool_size_sweep(const std::vector<Dataset>& tasks,
                                                      const std::vector<std::vector<std::size_t>>& task_classes,
                                                      const BackboneCheckpoint& theta,
                                                      const std::vector<double>& lambdas, const HideConfig& cfg,
                                                      double expand_fraction) {
  std::vector<Tensor<float>> reps;
  std::vector<std::vector<RepStats>> stats;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    const Dataset& t = tasks[ti];
    reps.push_back(encode_all(theta, t.x));
    const auto& classes = task_classes.at(ti);
    std::vector<RepStats> per;
    for (std::size_t k = 0; k < classes.size(); ++k) {
      const std::size_t c = classes[k];
      Rng rng = stats_rng(cfg.seed, ti + 1, 0, k, false);
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < t.y.size(); ++i)
        if (t.y[i] == c) rows.push_back(i);
      Tensor<float> sub({rows.size(), reps.back().cols()});
      for (std::size_t r = 0; r < rows.size(); ++r) {
        auto src = reps.back().row(rows[r]);
        std::copy(src.begin(), src.end(), sub.row(r).begin());
      }
      per.push_back(fit_stats(sub, cfg.recovery == RecoveryStrategy::None ? RecoveryStrategy::MultiCentroid : cfg.recovery,
                              rng, cfg.stats));
    }
    stats.push_back(std::move(per));
  }
  std::vector<std::vector<std::size_t>> out;
  for (double lam : lambdas) {
    std::vector<std::size_t> set_of_task, k;
    std::size_t pool = 0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      std::vector<std::vector<RepStats>> prev(stats.begin(), stats.begin() + i);
      AkaDecision d = decide(reps[i], prev, set_of_task, pool, lam, expand_fraction);
      if (d.action != AkaAction::Retrieve) ++pool;
      set_of_task.push_back(d.set);
      k.push_back(pool);
    }
    out.push_back(std::move(k));
  }
  return out;
}

}  // namespace hidepet
