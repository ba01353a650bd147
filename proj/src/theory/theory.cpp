#include "hidepet/theory/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "hidepet/numcore/error.hpp"

namespace hidepet::theory {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kFloor = 1e-12;

double nll(double p) { return p > 0 ? -std::log(p) : kInf; }

// -log(1 - p) without losing precision for small p
double nll_complement(double p) { return p < 1 ? -std::log1p(-p) : kInf; }

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}


void check_distribution(const std::vector<double>& p, std::size_t n, const char* what) {
  if (p.size() != n) throw ContractError(std::string(what) + " has the wrong size");
  double s = 0;
  for (double x : p) {
    if (!(x >= 0.0 && x <= 1.0)) throw ContractError(std::string(what) + " has an entry outside [0, 1]");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ContractError(std::string(what) + " does not sum to 1");
}

// -sum_i g_i log q_i with 0 * log 0 taken as 0
double cross_entropy(const std::vector<double>& g, const std::vector<double>& q) {
  double h = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] > 0) h += g[i] * nll(q[i]);
  }
  return h;
}

double entropy(const std::vector<double>& g) { return cross_entropy(g, g); }

void require_setting(const std::vector<PredictorInstance>& batch, Setting s, const char* who) {
  if (batch.empty()) throw ContractError(std::string(who) + ": empty batch");
  for (const auto& inst : batch) {
    if (inst.setting != s) throw ContractError(std::string(who) + ": expects " + to_string(s) + " instances");
    inst.validate();
  }
}

// Premises are inputs, not claims under test, so breaking one is a caller error.
void require_premise(bool ok, const char* who, const char* what) {
  if (!ok) throw ContractError(std::string(who) + ": premise " + what + " does not hold for this batch");
}

std::vector<Entropies> all_entropies(const std::vector<PredictorInstance>& batch) {
  std::vector<Entropies> out;
  out.reserve(batch.size());
  for (const auto& inst : batch) out.push_back(entropies(inst));
  return out;
}

// H_WTP + H_TII in the task-conditional settings; the mixture likelihood for DIL
double two_stage(const PredictorInstance& inst, const Entropies& h) {
  return inst.setting == Setting::DIL ? h.joint : h.wtp + h.tii;
}

std::vector<double> pick(const std::vector<Entropies>& hs, double Entropies::*field) {
  std::vector<double> v;
  for (const auto& h : hs) v.push_back(h.*field);
  return v;
}

}  // namespace

std::string to_string(Setting s) {
  switch (s) {
    case Setting::CIL: return "CIL";
    case Setting::DIL: return "DIL";
    case Setting::TIL: return "TIL";
  }
  return "?";
}

std::size_t PredictorInstance::label() const {
  if (setting == Setting::DIL) return cls;
  std::size_t off = 0;
  for (std::size_t i = 0; i < task; ++i) off += classes[i];
  return off + cls;
}

void PredictorInstance::validate() const {
  const std::size_t t = tasks();
  if (t == 0) throw ContractError("instance has no tasks");
  if (task >= t || cls >= classes[task]) throw ContractError("ground truth outside the layout");
  if (wtp.size() != t) throw ContractError("one WTP distribution per task is required");
  for (std::size_t i = 0; i < t; ++i) {
    if (classes[i] == 0) throw ContractError("a task has no classes");
    if (setting == Setting::DIL && classes[i] != classes[0]) throw ContractError("DIL tasks share one label space");
    check_distribution(wtp[i], classes[i], "WTP distribution");
  }
  check_distribution(tii, t, "TII distribution");
  const std::size_t labels =
      setting == Setting::DIL ? classes[0] : std::accumulate(classes.begin(), classes.end(), std::size_t{0});
  check_distribution(tap, labels, "TAP distribution");
  if (ood.size() != t) throw ContractError("one OOD detector per task is required");
  for (double p : ood) {
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("OOD probability outside [0, 1]");
  }
  if (setting == Setting::DIL) check_distribution(gamma, t, "mixing weights");
  if (setting == Setting::TIL && tii[task] != 1.0) throw ContractError("TIL instances carry the oracle task identity");
}

nlohmann::json PredictorInstance::to_json() const {
  return {{"setting", to_string(setting)}, {"classes", classes}, {"task", task}, {"class", cls},
          {"wtp", wtp},       {"tii", tii},           {"tap", tap},   {"ood", ood},
          {"gamma", gamma}};
}

double joint_probability(const PredictorInstance& inst) {
  switch (inst.setting) {
    case Setting::CIL: return inst.tii[inst.task] * inst.wtp[inst.task][inst.cls];
    case Setting::TIL: return inst.wtp[inst.task][inst.cls];
    case Setting::DIL: {
      double p = 0;
      for (std::size_t i = 0; i < inst.tasks(); ++i) p += inst.tii[i] * inst.wtp[i][inst.cls];
      return p;
    }
  }
  return 0;
}

Entropies entropies(const PredictorInstance& inst) {
  Entropies h;
  const std::size_t t = inst.tasks();
  if (inst.setting == Setting::DIL) {
    for (std::size_t i = 0; i < t; ++i) {
      if (inst.gamma[i] > 0) h.wtp += inst.gamma[i] * nll(inst.wtp[i][inst.cls]);
    }
    h.tii = cross_entropy(inst.gamma, inst.tii);
  } else {
    h.wtp = nll(inst.wtp[inst.task][inst.cls]);
    h.tii = inst.setting == Setting::TIL ? 0.0 : nll(inst.tii[inst.task]);
  }
  h.tap = nll(inst.tap[inst.label()]);
  h.joint = nll(joint_probability(inst));
  h.ood.resize(t);
  for (std::size_t i = 0; i < t; ++i) h.ood[i] = i == inst.task ? nll(inst.ood[i]) : nll_complement(inst.ood[i]);
  return h;
}

std::vector<double> tii_from_ood(const std::vector<double>& ood) {
  const double s = std::accumulate(ood.begin(), ood.end(), 0.0);
  if (!(s > 0)) throw ContractError("OOD detectors reject every task; TII is undefined");
  std::vector<double> q(ood.size());
  for (std::size_t i = 0; i < ood.size(); ++i) q[i] = ood[i] / s;
  return q;
}

std::vector<double> product_tap(const PredictorInstance& inst) {
  if (inst.setting == Setting::DIL) throw ContractError("the product TAP needs disjoint task label spaces");
  std::vector<double> p;
  for (std::size_t i = 0; i < inst.tasks(); ++i)
    for (double w : inst.wtp[i]) p.push_back(inst.tii[i] * w);
  return p;
}

double ood_tii_bound(const std::vector<double>& eps, std::size_t task) {
  if (task >= eps.size()) throw ContractError("task outside the OOD budget vector");
  double rest = 0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (i != task) rest += -std::expm1(-eps[i]);
  }
  return std::exp(eps[task]) * rest;
}

double loss_error(const std::vector<PredictorInstance>& batch, LossMode mode) {
  std::vector<double> two, tap, per;
  for (const auto& inst : batch) {
    const Entropies h = entropies(inst);
    two.push_back(two_stage(inst, h));
    tap.push_back(h.tap);
    per.push_back(std::max(two.back(), h.tap));
  }
  return mode == LossMode::MaxOfExpectations ? std::max(mean(two), mean(tap)) : mean(per);
}

Checks check_thm1_cil(const std::vector<PredictorInstance>& batch, double delta, double eps, double eta,
                      LossMode mode) {
  require_setting(batch, Setting::CIL, "thm1");
  const auto hs = all_entropies(batch);
  require_premise(mean(pick(hs, &Entropies::wtp)) <= delta, "thm1", "E[H_WTP] <= delta");
  require_premise(mean(pick(hs, &Entropies::tii)) <= eps, "thm1", "E[H_TII] <= eps");
  require_premise(mean(pick(hs, &Entropies::tap)) <= eta, "thm1", "E[H_TAP] <= eta");
  Checks out{{"loss", loss_error(batch, mode), std::max(delta + eps, eta)}};
  // the factorised likelihood agrees with the sum of the two stage entropies
  double gap = 0;
  for (const auto& h : hs) gap = std::max(gap, std::abs(h.joint - (h.wtp + h.tii)) / (1.0 + h.joint));
  out.push_back({"joint=wtp+tii", gap, 0.0});
  return out;
}

Checks check_thm2_cil(const std::vector<PredictorInstance>& batch, double xi, LossMode mode) {
  require_setting(batch, Setting::CIL, "thm2");
  require_premise(loss_error(batch, mode) <= xi, "thm2", "L <= xi");
  const auto hs = all_entropies(batch);
  Checks out{{"wtp", mean(pick(hs, &Entropies::wtp)), xi},
             {"tii", mean(pick(hs, &Entropies::tii)), xi},
             {"tap", mean(pick(hs, &Entropies::tap)), xi}};
  // sample-wise: each stage alone costs no more than the factorised likelihood
  double w = -kInf, q = -kInf;
  for (const auto& h : hs) {
    w = std::max(w, h.wtp - h.joint);
    q = std::max(q, h.tii - h.joint);
  }
  out.push_back({"wtp<=joint", w, 0.0});
  out.push_back({"tii<=joint", q, 0.0});
  return out;
}

Checks check_thm3_ood_to_tii(const std::vector<PredictorInstance>& batch,
                             const std::vector<std::vector<double>>& eps) {
  if (eps.size() != batch.size()) throw ContractError("thm3: one OOD budget row per instance");
  Checks out;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& inst = batch[n];
    inst.validate();
    const Entropies h = entropies(inst);
    if (eps[n].size() != inst.tasks()) throw ContractError("thm3: OOD budget row has the wrong size");
    for (std::size_t i = 0; i < inst.tasks(); ++i) require_premise(h.ood[i] <= eps[n][i], "thm3", "H_OOD,i <= eps_i");
    const double h_tii = nll(tii_from_ood(inst.ood)[inst.task]);
    out.push_back({"ood->tii", h_tii, ood_tii_bound(eps[n], inst.task)});
  }
  return out;
}

Checks check_thm3_tii_to_ood(const std::vector<PredictorInstance>& batch, double eps) {
  Checks out;
  for (const auto& inst : batch) {
    inst.validate();
    require_premise(nll(inst.tii[inst.task]) <= eps, "thm3", "H_TII <= eps");
    double worst = 0;
    for (std::size_t i = 0; i < inst.tasks(); ++i) {
      const double p = inst.tii[i];
      worst = std::max(worst, i == inst.task ? nll(p) : nll_complement(p));
    }
    out.push_back({"tii->ood", worst, eps});
  }
  return out;
}

Checks check_dil(const std::vector<PredictorInstance>& batch, double delta, double eps, double eta, LossMode mode) {
  require_setting(batch, Setting::DIL, "dil");
  const auto hs = all_entropies(batch);
  require_premise(mean(pick(hs, &Entropies::wtp)) <= delta, "dil", "E[H_WTP] <= delta");
  require_premise(mean(pick(hs, &Entropies::tii)) <= eps, "dil", "E[H_TII] <= eps");
  require_premise(mean(pick(hs, &Entropies::tap)) <= eta, "dil", "E[H_TAP] <= eta");
  const double t = double(batch.front().tasks());
  Checks out{{"loss", loss_error(batch, mode), std::max(delta + eps + std::log(t), eta)}};
  // the mixture step itself, which is tighter by the mixing entropy
  double gap = -kInf;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    gap = std::max(gap, hs[n].joint - (hs[n].wtp + hs[n].tii - entropy(batch[n].gamma)));
  }
  out.push_back({"mixture", gap, 0.0});
  return out;
}

Checks check_til(const std::vector<PredictorInstance>& batch, double delta) {
  require_setting(batch, Setting::TIL, "til");
  const auto hs = all_entropies(batch);
  require_premise(mean(pick(hs, &Entropies::wtp)) <= delta, "til", "E[H_WTP] <= delta");
  double nonzero = 0;
  for (const auto& h : hs) nonzero += h.tii != 0.0;
  return {{"tii=0", nonzero, 0.0}, {"loss", loss_error(batch, LossMode::MaxOfExpectations), delta}};
}

Checks check_ood_sufficiency(const std::vector<PredictorInstance>& batch, double delta, double eta,
                             const std::vector<double>& eps, LossMode mode) {
  require_setting(batch, Setting::CIL, "ood-suff");
  const auto hs = all_entropies(batch);
  require_premise(mean(pick(hs, &Entropies::wtp)) <= delta, "ood-suff", "E[H_WTP] <= delta");
  require_premise(mean(pick(hs, &Entropies::tap)) <= eta, "ood-suff", "E[H_TAP] <= eta");
  std::vector<double> b;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& inst = batch[n];
    if (eps.size() != inst.tasks()) throw ContractError("ood-suff: one OOD budget per task");
    const auto q = tii_from_ood(inst.ood);
    for (std::size_t i = 0; i < q.size(); ++i) {
      require_premise(std::abs(q[i] - inst.tii[i]) <= 1e-12, "ood-suff", "TII derived from the OOD detectors");
      require_premise(hs[n].ood[i] <= eps[i], "ood-suff", "H_OOD,i <= eps_i");
    }
    b.push_back(ood_tii_bound(eps, inst.task));
  }
  double bound;
  if (mode == LossMode::MaxOfExpectations) {
    bound = std::max(delta + mean(b), eta);
  } else {
    std::vector<double> per;
    for (double x : b) per.push_back(std::max(delta + x, eta));
    bound = mean(per);
  }
  return {{"loss", loss_error(batch, mode), bound}};
}

Checks check_ood_necessity(const std::vector<PredictorInstance>& batch, double xi, LossMode mode) {
  require_setting(batch, Setting::CIL, "ood-nec");
  require_premise(loss_error(batch, mode) <= xi, "ood-nec", "L <= xi");
  const std::size_t t = batch.front().tasks();
  std::vector<std::vector<double>> h_ood(t);
  double per_sample = -kInf, mass = 0;
  for (const auto& inst : batch) {
    // detectors P_i = P(x in X_i): they sum to exactly one
    const Entropies h = entropies(inst);
    double worst = 0;
    for (std::size_t i = 0; i < t; ++i) {
      const double v = i == inst.task ? nll(inst.tii[i]) : nll_complement(inst.tii[i]);
      h_ood[i].push_back(v);
      worst = std::max(worst, v);
    }
    per_sample = std::max(per_sample, worst - h.joint);
    mass = std::max(mass, -std::log(std::accumulate(inst.tii.begin(), inst.tii.end(), 0.0)));
  }
  Checks out;
  for (std::size_t i = 0; i < t; ++i) out.push_back({"ood", mean(h_ood[i]), xi});
  out.push_back({"ood<=joint", per_sample, 0.0});
  out.push_back({"-log sum P", mass, 0.0});
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> peaked_categorical(Rng& rng, std::size_t n, std::size_t truth, double temperature) {
  if (n == 0 || truth >= n) throw ContractError("peaked_categorical: truth outside the support");
  if (!(temperature > 0)) throw ContractError("peaked_categorical: temperature must be positive");
  std::vector<double> z(n);
  const double boost = rng.uniform(0.0, 6.0);
  for (std::size_t k = 0; k < n; ++k) {
    z[k] = (std::log(std::max(rng.gamma(1.0), 1e-300)) + (k == truth ? boost : 0.0)) / temperature;
  }
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0;
  for (auto& v : z) s += (v = std::exp(v - m));
  for (auto& v : z) v = std::max(v / s, kFloor);
  s = std::accumulate(z.begin(), z.end(), 0.0);
  for (auto& v : z) v /= s;
  return z;
}

Layout random_layout(Rng& rng, Setting setting, std::size_t max_tasks, std::size_t max_classes,
                     std::size_t min_tasks) {
  if (min_tasks == 0 || min_tasks > max_tasks || max_classes < 2) throw ContractError("random_layout: bad ranges");
  Layout l;
  l.setting = setting;
  const std::size_t t = min_tasks + rng.below(max_tasks - min_tasks + 1);
  const std::size_t shared = 2 + rng.below(max_classes - 1);
  for (std::size_t i = 0; i < t; ++i) l.classes.push_back(setting == Setting::DIL ? shared : 1 + rng.below(max_classes));
  if (setting == Setting::DIL) {
    for (std::size_t i = 0; i < t; ++i) l.gamma.push_back(rng.gamma(1.0));
    const double s = std::accumulate(l.gamma.begin(), l.gamma.end(), 0.0);
    for (auto& g : l.gamma) g = std::max(g / s, kFloor);
    const double s2 = std::accumulate(l.gamma.begin(), l.gamma.end(), 0.0);
    for (auto& g : l.gamma) g /= s2;
  }
  return l;
}

PredictorInstance random_instance(Rng& rng, const Layout& layout, double temperature, TiiSource tii,
                                  bool product) {
  PredictorInstance inst;
  inst.setting = layout.setting;
  inst.classes = layout.classes;
  const std::size_t t = inst.tasks();
  inst.task = rng.below(t);
  inst.cls = rng.below(inst.classes[inst.task]);
  for (std::size_t i = 0; i < t; ++i) {
    const std::size_t n = inst.classes[i];
    const std::size_t peak = (i == inst.task || layout.setting == Setting::DIL) ? inst.cls : rng.below(n);
    inst.wtp.push_back(peaked_categorical(rng, n, peak, temperature));
  }
  for (std::size_t i = 0; i < t; ++i) {
    const double margin = rng.uniform(0.0, 5.0) / temperature;
    const double z = (i == inst.task ? margin : -margin) + rng.normal();
    inst.ood.push_back(std::clamp(1.0 / (1.0 + std::exp(-z)), kFloor, 1.0 - kFloor));
  }
  if (layout.setting == Setting::DIL) {
    inst.gamma = layout.gamma;
    if (inst.gamma.size() != t) {
      inst.gamma.resize(t);
      for (auto& g : inst.gamma) g = rng.gamma(1.0);
      const double s = std::accumulate(inst.gamma.begin(), inst.gamma.end(), 0.0);
      for (auto& g : inst.gamma) g = std::max(g / s, kFloor);
    }
    // the weighted TII cost is smallest at q = gamma; draws scatter around it
    inst.tii.resize(t);
    for (std::size_t i = 0; i < t; ++i) inst.tii[i] = inst.gamma[i] * std::exp(temperature * rng.normal());
    double s = std::accumulate(inst.tii.begin(), inst.tii.end(), 0.0);
    for (auto& q : inst.tii) q = std::max(q / s, kFloor);
    s = std::accumulate(inst.tii.begin(), inst.tii.end(), 0.0);
    for (auto& q : inst.tii) q /= s;
    s = std::accumulate(inst.gamma.begin(), inst.gamma.end(), 0.0);
    for (auto& g : inst.gamma) g /= s;
    inst.tap = peaked_categorical(rng, inst.classes[0], inst.cls, temperature);
  } else if (layout.setting == Setting::TIL) {
    inst.tii.assign(t, 0.0);
    inst.tii[inst.task] = 1.0;
  } else if (tii == TiiSource::FromOod) {
    inst.tii = tii_from_ood(inst.ood);
  } else {
    inst.tii = peaked_categorical(rng, t, inst.task, temperature);
  }
  if (layout.setting == Setting::DIL) return inst;
  if (product || layout.setting == Setting::TIL) {
    inst.tap = product_tap(inst);
  } else {
    std::size_t labels = std::accumulate(inst.classes.begin(), inst.classes.end(), std::size_t{0});
    inst.tap = peaked_categorical(rng, labels, inst.label(), temperature);
  }
  return inst;
}

namespace {

// Every prediction put entirely on the truth, so all entropies are zero.
// DIL keeps its mixing weights and sets q = gamma, the cheapest TII.
PredictorInstance perfect_instance(const PredictorInstance& like) {
  PredictorInstance p = like;
  const std::size_t t = p.tasks();
  for (std::size_t i = 0; i < t; ++i) {
    std::fill(p.wtp[i].begin(), p.wtp[i].end(), 0.0);
    p.wtp[i][(i == p.task || p.setting == Setting::DIL) ? p.cls : 0] = 1.0;
  }
  p.tii.assign(t, 0.0);
  p.tii[p.task] = 1.0;
  p.ood.assign(t, 0.0);
  p.ood[p.task] = 1.0;
  if (p.setting == Setting::DIL) p.tii = p.gamma;
  std::fill(p.tap.begin(), p.tap.end(), 0.0);
  p.tap[p.label()] = 1.0;
  return p;
}

struct Sampler {
  Rng rng;
  Layout layout;
  TiiSource tii = TiiSource::Independent;
  bool product = false;
  double temperature = 1.0;
  std::size_t max_retries = 1000;
  std::size_t constructed = 0;

  template <typename Accept>
  PredictorInstance draw(Accept accept) {
    double temp = temperature;
    for (std::size_t k = 0; k < max_retries; ++k, temp *= 0.8) {
      PredictorInstance inst = random_instance(rng, layout, temp, tii, product);
      if (accept(inst, entropies(inst))) return inst;
    }
    ++constructed;
    PredictorInstance inst = perfect_instance(random_instance(rng, layout, temp, tii, product));
    return inst;
  }
};

struct BatchOutcome {
  Checks checks;
  std::size_t constructed = 0;
  nlohmann::json witness;
};

nlohmann::json batch_json(const std::vector<PredictorInstance>& batch, nlohmann::json budgets) {
  nlohmann::json j{{"budgets", std::move(budgets)}, {"instances", nlohmann::json::array()}};
  for (const auto& inst : batch) j["instances"].push_back(inst.to_json());
  return j;
}

// Draws a budget in [0, hi) that is positive, so construction can always meet it.
double budget(Rng& rng, double hi) { return rng.uniform(1e-3, hi); }

BatchOutcome run_batch(Theorem th, const SweepOptions& opt, std::size_t index, std::size_t size) {
  Rng root = Rng(opt.seed).split(index);
  Rng br = root.split(1);
  Sampler s{root.split(2), {}, TiiSource::Independent, false, br.uniform(0.05, 2.0), opt.max_retries, 0};
  std::vector<PredictorInstance> batch;
  BatchOutcome out;
  nlohmann::json budgets;
  auto fill = [&](auto accept) {
    for (std::size_t n = 0; n < size; ++n) batch.push_back(s.draw(accept));
  };
  switch (th) {
    case Theorem::Thm1: {
      s.layout = random_layout(br, Setting::CIL, opt.max_tasks, opt.max_classes);
      s.product = index % 2 == 1;
      const double d = budget(br, 2.0), e = budget(br, 2.0), h = budget(br, 3.0);
      fill([&](const PredictorInstance&, const Entropies& x) { return x.wtp <= d && x.tii <= e && x.tap <= h; });
      out.checks = check_thm1_cil(batch, d, e, h, opt.mode);
      if (s.product) {
        // distribution-level chain identity for the factorised TAP
        double gap = 0;
        for (const auto& inst : batch) {
          const Entropies x = entropies(inst);
          gap = std::max(gap, std::abs(x.tap - (x.wtp + x.tii)) / (1.0 + x.tap));
        }
        out.checks.push_back({"tap=wtp+tii", gap, 0.0});
      }
      budgets = {{"delta", d}, {"eps", e}, {"eta", h}};
      break;
    }
    case Theorem::Thm2: {
      s.layout = random_layout(br, Setting::CIL, opt.max_tasks, opt.max_classes);
      const double xi = budget(br, 3.0);
      fill([&](const PredictorInstance&, const Entropies& x) { return x.wtp + x.tii <= xi && x.tap <= xi; });
      out.checks = check_thm2_cil(batch, xi, opt.mode);
      budgets = {{"xi", xi}};
      break;
    }
    case Theorem::Thm3: {
      s.layout = random_layout(br, Setting::CIL, opt.max_tasks, opt.max_classes, 2);
      s.tii = TiiSource::FromOod;
      fill([](const PredictorInstance&, const Entropies&) { return true; });
      std::vector<std::vector<double>> eps;
      double h_tii = 0;
      const bool exact = br.uniform() < 0.5;
      for (const auto& inst : batch) {
        const Entropies x = entropies(inst);
        auto row = x.ood;
        if (!exact)
          for (auto& v : row) v *= 1.0 + br.uniform(0.0, 0.5);
        eps.push_back(row);
        h_tii = std::max(h_tii, x.tii);
      }
      const double e = exact ? h_tii : h_tii * (1.0 + br.uniform(0.0, 0.5));
      out.checks = check_thm3_ood_to_tii(batch, eps);
      const Checks b = check_thm3_tii_to_ood(batch, e);
      out.checks.insert(out.checks.end(), b.begin(), b.end());
      budgets = {{"eps_rows", eps}, {"eps", e}};
      break;
    }
    case Theorem::Dil: {
      s.layout = random_layout(br, Setting::DIL, opt.max_tasks, opt.max_classes);
      // no TII does better than H(gamma), so the budget starts there
      double h_gamma = 0;
      for (double g : s.layout.gamma) h_gamma -= g * std::log(g);
      const double d = budget(br, 2.0), e = h_gamma + budget(br, 2.0), h = budget(br, 3.0);
      fill([&](const PredictorInstance&, const Entropies& x) { return x.wtp <= d && x.tii <= e && x.tap <= h; });
      out.checks = check_dil(batch, d, e, h, opt.mode);
      budgets = {{"delta", d}, {"eps", e}, {"eta", h}};
      break;
    }
    case Theorem::Til: {
      s.layout = random_layout(br, Setting::TIL, opt.max_tasks, opt.max_classes);
      const double d = budget(br, 2.0);
      fill([&](const PredictorInstance&, const Entropies& x) { return x.wtp <= d; });
      out.checks = check_til(batch, d);
      budgets = {{"delta", d}};
      break;
    }
    case Theorem::OodSufficiency: {
      s.layout = random_layout(br, Setting::CIL, opt.max_tasks, opt.max_classes);
      s.tii = TiiSource::FromOod;
      const double d = budget(br, 2.0), h = budget(br, 3.0);
      fill([&](const PredictorInstance&, const Entropies& x) { return x.wtp <= d && x.tap <= h; });
      std::vector<double> eps(s.layout.classes.size(), 0.0);
      for (const auto& inst : batch) {
        const Entropies x = entropies(inst);
        for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = std::max(eps[i], x.ood[i]);
      }
      if (br.uniform() < 0.5)
        for (auto& v : eps) v *= 1.0 + br.uniform(0.0, 0.5);
      out.checks = check_ood_sufficiency(batch, d, h, eps, opt.mode);
      budgets = {{"delta", d}, {"eta", h}, {"eps", eps}};
      break;
    }
    case Theorem::OodNecessity: {
      s.layout = random_layout(br, Setting::CIL, opt.max_tasks, opt.max_classes);
      const double xi = budget(br, 3.0);
      fill([&](const PredictorInstance&, const Entropies& x) { return x.wtp + x.tii <= xi && x.tap <= xi; });
      out.checks = check_ood_necessity(batch, xi, opt.mode);
      budgets = {{"xi", xi}};
      break;
    }
  }
  out.constructed = s.constructed;
  bool bad = false;
  for (const auto& c : out.checks) bad |= !c.holds();
  if (bad) out.witness = batch_json(batch, std::move(budgets));
  return out;
}

PredictorInstance cil(std::vector<std::size_t> classes, std::size_t task, std::size_t cls,
                      std::vector<std::vector<double>> wtp, std::vector<double> tii) {
  PredictorInstance p;
  p.classes = std::move(classes);
  p.task = task;
  p.cls = cls;
  p.wtp = std::move(wtp);
  p.tii = std::move(tii);
  p.ood = p.tii;
  p.tap = product_tap(p);
  return p;
}

Tightness tight(const std::string& name, const Check& c) { return {name, c.value, c.bound}; }

const Check& find(const Checks& cs, const std::string& name) {
  for (const auto& c : cs)
    if (c.name == name) return c;
  throw ContractError("no check named " + name);
}

}  // namespace

std::vector<Tightness> tightness_witnesses(Theorem theorem) {
  std::vector<Tightness> out;
  switch (theorem) {
    case Theorem::Thm1: {
      auto p = cil({2, 2}, 0, 1, {{0.3, 0.7}, {0.5, 0.5}}, {0.8, 0.2});
      p.tap = {0.1, 0.6, 0.2, 0.1};
      const Entropies h = entropies(p);
      out.push_back(tight("loss at delta+eps", find(check_thm1_cil({p}, h.wtp, h.tii, h.tap), "loss")));
      break;
    }
    case Theorem::Thm2: {
      // oracle-like TII: the whole loss is carried by WTP
      auto p = cil({3, 2}, 1, 0, {{0.2, 0.3, 0.5}, {0.65, 0.35}}, {0.0, 1.0});
      out.push_back(tight("wtp at xi", find(check_thm2_cil({p}, loss_error({p}, LossMode::MaxOfExpectations)), "wtp")));
      break;
    }
    case Theorem::Thm3: {
      auto a = cil({2, 2, 2}, 0, 0, {{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}}, {1.0, 0.0, 0.0});
      a.ood = {1.0, 0.004, 0.004};
      a.tii = tii_from_ood(a.ood);
      a.tap = product_tap(a);
      out.push_back(tight("ood->tii", check_thm3_ood_to_tii({a}, {entropies(a).ood}).front()));
      auto b = cil({2, 2, 2}, 0, 0, {{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}}, {0.9, 0.05, 0.05});
      out.push_back(tight("tii->ood", check_thm3_tii_to_ood({b}, entropies(b).tii).front()));
      break;
    }
    case Theorem::Dil: {
      PredictorInstance p;
      p.setting = Setting::DIL;
      p.classes = {3};
      p.cls = 1;
      p.wtp = {{0.2, 0.7, 0.1}};
      p.tii = {1.0};
      p.ood = {1.0};
      p.gamma = {1.0};
      p.tap = {0.1, 0.8, 0.1};
      Entropies h = entropies(p);
      out.push_back(tight("t=1 at delta+eps", find(check_dil({p}, h.wtp, h.tii, h.tap), "loss")));
      PredictorInstance q = p;
      q.classes = {3, 3, 3};
      q.task = 2;
      q.wtp = {{0.2, 0.7, 0.1}, {0.3, 0.4, 0.3}, {0.1, 0.5, 0.4}};
      q.tii = {0.2, 0.3, 0.5};
      q.ood = {0.2, 0.3, 0.5};
      q.gamma = {0.0, 0.0, 1.0};
      q.tap = {0.475, 0.05, 0.475};
      h = entropies(q);
      out.push_back(tight("t=3 at eta", find(check_dil({q}, h.wtp, h.tii, h.tap), "loss")));
      break;
    }
    case Theorem::Til: {
      PredictorInstance p = cil({2, 3}, 1, 2, {{0.5, 0.5}, {0.1, 0.3, 0.6}}, {0.0, 1.0});
      p.setting = Setting::TIL;
      out.push_back(tight("loss at delta", find(check_til({p}, entropies(p).wtp), "loss")));
      break;
    }
    case Theorem::OodSufficiency: {
      auto p = cil({2, 2, 2}, 0, 0, {{0.6, 0.4}, {0.5, 0.5}, {0.5, 0.5}}, {1.0, 0.0, 0.0});
      p.ood = {1.0, 0.004, 0.004};
      p.tii = tii_from_ood(p.ood);
      p.tap.assign(6, 0.0);
      p.tap[0] = 1.0;
      const Entropies h = entropies(p);
      out.push_back(tight("loss", check_ood_sufficiency({p}, h.wtp, h.tap, h.ood).front()));
      break;
    }
    case Theorem::OodNecessity: {
      auto p = cil({2, 2}, 0, 1, {{0.0, 1.0}, {0.5, 0.5}}, {0.7, 0.3});
      out.push_back(tight("ood at xi", check_ood_necessity({p}, loss_error({p}, LossMode::MaxOfExpectations)).front()));
      break;
    }
  }
  return out;
}

std::string to_string(Theorem t) {
  switch (t) {
    case Theorem::Thm1: return "1";
    case Theorem::Thm2: return "2";
    case Theorem::Thm3: return "3";
    case Theorem::Dil: return "dil";
    case Theorem::Til: return "til";
    case Theorem::OodSufficiency: return "ood-suff";
    case Theorem::OodNecessity: return "ood-nec";
  }
  return "?";
}

Theorem parse_theorem(const std::string& s) {
  for (Theorem t : all_theorems())
    if (to_string(t) == s) return t;
  throw ConfigError("unknown theorem \"" + s + "\" (expected 1, 2, 3, dil, til, ood-suff or ood-nec)");
}

std::vector<Theorem> all_theorems() {
  return {Theorem::Thm1, Theorem::Thm2, Theorem::Thm3, Theorem::Dil,
          Theorem::Til,  Theorem::OodSufficiency, Theorem::OodNecessity};
}

bool SweepReport::passed() const {
  if (violations != 0) return false;
  for (const auto& w : tight) {
    if (w.value > w.bound + Check::kTolerance * (1.0 + std::abs(w.bound)) || w.relative_slack() > 0.01) return false;
  }
  return true;
}

SweepReport run_sweep(Theorem theorem, const SweepOptions& opt) {
  if (opt.batch == 0) throw ConfigError("theory: batch size must be positive");
  if (opt.max_tasks == 0 || opt.max_classes < 2) throw ConfigError("theory: need max_tasks >= 1 and max_classes >= 2");
  SweepReport r;
  r.theorem = theorem;
  r.instances = opt.instances;
  r.batches = (opt.instances + opt.batch - 1) / opt.batch;
  std::vector<BatchOutcome> outcomes(r.batches);
  const long nb = static_cast<long>(r.batches);
#pragma omp parallel for schedule(dynamic, 16)
  for (long b = 0; b < nb; ++b) {
    const std::size_t first = std::size_t(b) * opt.batch;
    outcomes[std::size_t(b)] = run_batch(theorem, opt, std::size_t(b), std::min(opt.batch, opt.instances - first));
  }
  for (std::size_t b = 0; b < r.batches; ++b) {
    auto& o = outcomes[b];
    r.constructed += o.constructed;
    for (const auto& c : o.checks) {
      ++r.checks;
      auto it = std::find(r.check_names.begin(), r.check_names.end(), c.name);
      const std::size_t k = it - r.check_names.begin();
      if (it == r.check_names.end()) {
        r.check_names.push_back(c.name);
        r.slacks.emplace_back();
      }
      r.slacks[k].push_back(c.slack());
      if (!c.holds()) {
        ++r.violations;
        if (!r.first_violation) r.first_violation = Violation{b, c, o.witness};
      }
    }
  }
  r.tight = tightness_witnesses(theorem);
  return r;
}

std::string slack_histogram_csv(const SweepReport& r, std::size_t bins) {
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  std::ostringstream os;
  os.precision(9);
  os << "theorem,check,bin_lo,bin_hi,count\n";
  for (std::size_t k = 0; k < r.check_names.size(); ++k) {
    const auto& v = r.slacks[k];
    double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
    if (!(hi > lo)) hi = lo + 1e-12;
    std::vector<std::size_t> count(bins, 0);
    for (double x : v) {
      auto i = static_cast<std::size_t>((x - lo) / (hi - lo) * double(bins));
      ++count[std::min(i, bins - 1)];
    }
    for (std::size_t i = 0; i < bins; ++i) {
      os << to_string(r.theorem) << ',' << r.check_names[k] << ',' << lo + (hi - lo) * double(i) / double(bins) << ','
         << lo + (hi - lo) * double(i + 1) / double(bins) << ',' << count[i] << '\n';
    }
  }
  return os.str();
}

nlohmann::json summary_json(const SweepReport& r) {
  nlohmann::json j{{"theorem", to_string(r.theorem)}, {"instances", r.instances},
                   {"batches", r.batches},             {"checks", r.checks},
                   {"violations", r.violations},       {"constructed", r.constructed},
                   {"passed", r.passed()}};
  for (std::size_t k = 0; k < r.check_names.size(); ++k) {
    j["min_slack"][r.check_names[k]] = *std::min_element(r.slacks[k].begin(), r.slacks[k].end());
  }
  for (const auto& w : r.tight) {
    j["tightness"].push_back(
        {{"name", w.name}, {"value", w.value}, {"bound", w.bound}, {"relative_slack", w.relative_slack()}});
  }
  if (r.first_violation) {
    const auto& v = *r.first_violation;
    j["first_violation"] = {{"batch", v.batch_index}, {"check", v.check.name}, {"value", v.check.value},
                            {"bound", v.check.bound}, {"witness", v.witness}};
  }
  return j;
}

}  // namespace hidepet::theory
