#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hidepet/numcore/rng.hpp"

// Monte-Carlo checks of the WTP/TII/TAP/OOD decomposition bounds.
//
// A predictor instance is one sample x with explicit categorical and Bernoulli
// predictions. A batch is a handful of samples drawn under one task layout;
// expectations are batch means.

namespace hidepet::theory {

enum class Setting { CIL, DIL, TIL };

std::string to_string(Setting s);

struct PredictorInstance {
  Setting setting = Setting::CIL;
  std::vector<std::size_t> classes;      // per task; DIL tasks share one label space
  std::size_t task = 0;                  // ground-truth task
  std::size_t cls = 0;                   // ground-truth class within the task
  std::vector<std::vector<double>> wtp;  // per task, over that task's classes
  std::vector<double> tii;               // over tasks
  std::vector<double> tap;               // over every class of the label space
  std::vector<double> ood;               // per task, P_i(x in X_i)
  std::vector<double> gamma;             // DIL mixing weights

  std::size_t tasks() const { return classes.size(); }
  /// Ground-truth label in the TAP label space.
  std::size_t label() const;
  /// Throws ContractError on a malformed instance.
  void validate() const;
  nlohmann::json to_json() const;
};

/// Probability of the true class under the task-conditional factorisation:
/// tii[task]*wtp[task][cls] for CIL, the tii-weighted mixture for DIL, wtp for TIL.
double joint_probability(const PredictorInstance& inst);

struct Entropies {
  double wtp = 0;    // DIL: gamma-weighted over tasks
  double tii = 0;    // DIL: cross-entropy against gamma; TIL: 0
  double tap = 0;
  double joint = 0;  // -log joint_probability
  std::vector<double> ood;
};

/// Ground-truth cross-entropies; a zero probability gives +infinity.
Entropies entropies(const PredictorInstance& inst);

/// TII derived from OOD detectors: P_i / sum_j P_j.
std::vector<double> tii_from_ood(const std::vector<double>& ood);

/// TAP built as the product tii[i]*wtp[i][j] over all (i, j).
std::vector<double> product_tap(const PredictorInstance& inst);

/// OOD-to-TII bound (sum_{i owns x} e^{eps_i}) * (sum_{i not owning x} (1 - e^{-eps_i})).
double ood_tii_bound(const std::vector<double>& eps, std::size_t task);

enum class LossMode {
  MaxOfExpectations,  // L = max(E[H_WTP + H_TII], E[H_TAP])
  PerSampleMax,       // L = E[max(H_WTP + H_TII, H_TAP)]
};

/// Loss error of a batch. For TIL the TAP term coincides with WTP.
double loss_error(const std::vector<PredictorInstance>& batch, LossMode mode);

struct Check {
  std::string name;
  double value = 0;
  double bound = 0;
  /// Rounding allowance: the bounds are identities at their tight points.
  static constexpr double kTolerance = 1e-12;
  bool holds() const { return value <= bound + kTolerance * (1.0 + std::abs(bound)); }
  double slack() const { return bound - value; }
};

using Checks = std::vector<Check>;

Checks check_thm1_cil(const std::vector<PredictorInstance>& batch, double delta, double eps, double eta,
                      LossMode mode = LossMode::MaxOfExpectations);
Checks check_thm2_cil(const std::vector<PredictorInstance>& batch, double xi,
                      LossMode mode = LossMode::MaxOfExpectations);
/// Direction (a): per-sample OOD budgets eps[i] (one row per instance).
Checks check_thm3_ood_to_tii(const std::vector<PredictorInstance>& batch, const std::vector<std::vector<double>>& eps);
/// Direction (b): detectors are rebuilt from each instance's TII as P_i = tii[i].
Checks check_thm3_tii_to_ood(const std::vector<PredictorInstance>& batch, double eps);
Checks check_dil(const std::vector<PredictorInstance>& batch, double delta, double eps, double eta,
                 LossMode mode = LossMode::MaxOfExpectations);
Checks check_til(const std::vector<PredictorInstance>& batch, double delta);
/// eps[i] bounds H_OOD,i uniformly over the batch.
Checks check_ood_sufficiency(const std::vector<PredictorInstance>& batch, double delta, double eta,
                             const std::vector<double>& eps, LossMode mode = LossMode::MaxOfExpectations);
/// Builds detectors P_i = tii[i] and checks H_OOD,i <= xi; the instances' own ood field is ignored.
Checks check_ood_necessity(const std::vector<PredictorInstance>& batch, double xi,
                           LossMode mode = LossMode::MaxOfExpectations);

// ---------------------------------------------------------------------------
// Random construction

/// Categorical over n outcomes peaked on `truth`; lower temperature sharpens.
/// The truth entry is floored at 1e-12.
std::vector<double> peaked_categorical(Rng& rng, std::size_t n, std::size_t truth, double temperature);

struct Layout {
  Setting setting = Setting::CIL;
  std::vector<std::size_t> classes;
  std::vector<double> gamma;  // DIL mixing weights, shared by every instance drawn from the layout
};

Layout random_layout(Rng& rng, Setting setting, std::size_t max_tasks, std::size_t max_classes,
                     std::size_t min_tasks = 1);

enum class TiiSource { Independent, FromOod };

/// One random sample under `layout` with a uniformly drawn ground truth.
PredictorInstance random_instance(Rng& rng, const Layout& layout, double temperature,
                                  TiiSource tii = TiiSource::Independent, bool product_tap = false);

enum class Theorem { Thm1, Thm2, Thm3, Dil, Til, OodSufficiency, OodNecessity };

std::string to_string(Theorem t);
/// Accepts the CLI names 1, 2, 3, dil, til, ood-suff, ood-nec.
Theorem parse_theorem(const std::string& s);
std::vector<Theorem> all_theorems();

struct SweepOptions {
  std::size_t instances = 100000;
  std::size_t batch = 10;
  std::uint64_t seed = 0;
  std::size_t max_tasks = 5;
  std::size_t max_classes = 4;
  std::size_t max_retries = 1000;
  LossMode mode = LossMode::MaxOfExpectations;
};

struct Violation {
  std::size_t batch_index = 0;
  Check check;
  nlohmann::json witness;
};

struct Tightness {
  std::string name;
  double value = 0;
  double bound = 0;
  double relative_slack() const { return bound > 0 ? (bound - value) / bound : 0.0; }
};

struct SweepReport {
  Theorem theorem = Theorem::Thm1;
  std::size_t instances = 0;
  std::size_t batches = 0;
  std::size_t checks = 0;
  std::size_t violations = 0;
  std::size_t constructed = 0;  // instances built directly after the retry cap
  std::optional<Violation> first_violation;
  std::vector<std::string> check_names;
  std::vector<std::vector<double>> slacks;  // slacks[k] belong to check_names[k], in batch order
  std::vector<Tightness> tight;
  bool passed() const;
};

/// Runs the theorem over `instances` samples split into batches; batches run
/// in parallel and are merged in index order, so the report is independent of
/// the thread count.
SweepReport run_sweep(Theorem theorem, const SweepOptions& opt);

/// Hand-built instances sitting on (or within 1% of) each bound.
std::vector<Tightness> tightness_witnesses(Theorem theorem);

/// CSV "theorem,check,bin_lo,bin_hi,count" over the slacks of each check.
std::string slack_histogram_csv(const SweepReport& r, std::size_t bins = 20);

nlohmann::json summary_json(const SweepReport& r);

}  // namespace hidepet::theory
