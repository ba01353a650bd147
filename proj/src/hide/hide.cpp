#include "hidepet/hide/hide.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hidepet/numcore/optim.hpp"

namespace hidepet {

// ---------------------------------------------------------------------------
// heads and losses

template <typename Real>
void LinearHead<Real>::append(std::size_t k, Rng& rng, double std) {
  const std::size_t d = dim(), n = width();
  Tensor<Real> nw({d, n + k}), nb({1, n + k});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < n; ++j) nw.at(i, j) = w.at(i, j);
    for (std::size_t j = n; j < n + k; ++j) nw.at(i, j) = static_cast<Real>(std * rng.normal());
  }
  for (std::size_t j = 0; j < n; ++j) nb[j] = b[j];
  const bool trainable = w.requires_grad();
  w = std::move(nw);
  b = std::move(nb);
  set_trainable(trainable);
}

template <typename Real>
Var LinearHead<Real>::logits(Tape<Real>& t, Var reps) const {
  return affine(t, reps, t.param(const_cast<Tensor<Real>&>(w)), t.param(const_cast<Tensor<Real>&>(b)));
}

template <typename Real>
TiiHead<Real> TiiHead<Real>::make(std::size_t dim, std::size_t hidden, Rng& rng) {
  TiiHead h;
  h.out = LinearHead<Real>::make(hidden ? hidden : dim);
  if (hidden) {
    h.w1 = Tensor<Real>({dim, hidden});
    h.b1 = Tensor<Real>({1, hidden});
    const double std = 1.0 / std::sqrt(double(dim));
    for (std::size_t i = 0; i < h.w1.numel(); ++i) h.w1[i] = static_cast<Real>(std * rng.normal());
  }
  return h;
}

template <typename Real>
Var TiiHead<Real>::logits(Tape<Real>& t, Var reps) const {
  if (hidden()) {
    reps = gelu(t, affine(t, reps, t.param(const_cast<Tensor<Real>&>(w1)), t.param(const_cast<Tensor<Real>&>(b1))));
  }
  return out.logits(t, reps);
}

template <typename Real>
std::vector<Tensor<Real>*> TiiHead<Real>::tensors() {
  auto v = out.tensors();
  if (hidden()) {
    v.push_back(&w1);
    v.push_back(&b1);
  }
  return v;
}

template <typename Real>
void TiiHead<Real>::set_trainable(bool on) {
  out.set_trainable(on);
  if (hidden()) {
    w1.set_requires_grad(on);
    b1.set_requires_grad(on);
  }
}

template <typename Real>
Var wtp_loss(Tape<Real>& t, Var reps, const LinearHead<Real>& psi, std::span<const std::size_t> task_columns,
             std::span<const std::size_t> label_columns) {
  std::vector<std::size_t> local(label_columns.size());
  for (std::size_t i = 0; i < label_columns.size(); ++i) {
    auto it = std::find(task_columns.begin(), task_columns.end(), label_columns[i]);
    if (it == task_columns.end()) {
      throw IndexError("label column " + std::to_string(label_columns[i]) + " is not part of the current task");
    }
    local[i] = static_cast<std::size_t>(it - task_columns.begin());
  }
  Var z = select_columns(t, psi.logits(t, reps), task_columns);
  return cross_entropy(t, z, std::span<const std::size_t>(local));
}

template <typename Real>
Var tii_loss(Tape<Real>& t, Var reps, const TiiHead<Real>& omega, std::span<const std::size_t> task_ids) {
  for (std::size_t id : task_ids) {
    if (id >= omega.width()) {
      throw IndexError("task id " + std::to_string(id) + " >= " + std::to_string(omega.width()) + " learned tasks");
    }
  }
  return cross_entropy(t, omega.logits(t, reps), task_ids);
}

template <typename Real>
Var tap_loss(Tape<Real>& t, Var reps, const LinearHead<Real>& psi, std::span<const std::size_t> label_columns) {
  for (std::size_t c : label_columns) {
    if (c >= psi.width()) throw IndexError("class column " + std::to_string(c) + " has not been observed");
  }
  return cross_entropy(t, psi.logits(t, reps), label_columns);
}

template struct LinearHead<float>;
template struct LinearHead<double>;
template struct TiiHead<float>;
template struct TiiHead<double>;
template Var wtp_loss<float>(Tape<float>&, Var, const LinearHead<float>&, std::span<const std::size_t>,
                             std::span<const std::size_t>);
template Var wtp_loss<double>(Tape<double>&, Var, const LinearHead<double>&, std::span<const std::size_t>,
                              std::span<const std::size_t>);
template Var tii_loss<float>(Tape<float>&, Var, const TiiHead<float>&, std::span<const std::size_t>);
template Var tii_loss<double>(Tape<double>&, Var, const TiiHead<double>&, std::span<const std::size_t>);
template Var tap_loss<float>(Tape<float>&, Var, const LinearHead<float>&, std::span<const std::size_t>);
template Var tap_loss<double>(Tape<double>&, Var, const LinearHead<double>&, std::span<const std::size_t>);

// ---------------------------------------------------------------------------
// strategies and state

std::string to_string(SharedStrategy s) {
  switch (s) {
    case SharedStrategy::FT: return "FT";
    case SharedStrategy::FSA: return "FSA";
    case SharedStrategy::SL: return "SL";
    case SharedStrategy::EMA: return "EMA";
    case SharedStrategy::FSA_SL: return "FSA_SL";
  }
  return "?";
}

SharedStrategy parse_shared(const std::string& s) {
  for (auto v : {SharedStrategy::FT, SharedStrategy::FSA, SharedStrategy::SL, SharedStrategy::EMA,
                 SharedStrategy::FSA_SL}) {
    if (s == to_string(v)) return v;
  }
  if (s == "F&T") return SharedStrategy::FT;
  if (s == "FSA+SL") return SharedStrategy::FSA_SL;
  throw ConfigError("unknown shared-parameter strategy \"" + s + "\"");
}

SharedPolicy update_shared(SharedStrategy strategy, std::size_t task_index, const HideConfig& cfg) {
  SharedPolicy p;
  switch (strategy) {
    case SharedStrategy::FSA:
      p.train = task_index == 1;
      p.lr = cfg.lr_big;
      break;
    case SharedStrategy::SL:
      p.lr = cfg.lr_small;
      break;
    case SharedStrategy::FSA_SL:
      p.lr = task_index == 1 ? cfg.lr_big : cfg.lr_small;
      break;
    case SharedStrategy::FT:
      p.lr = cfg.lr_big;
      p.frozen_epochs = cfg.epochs / 2;
      break;
    case SharedStrategy::EMA:
      p.lr = cfg.lr_big;
      p.ema = true;
      p.momentum = cfg.ema_momentum;
      break;
  }
  return p;
}

std::size_t ClassRegistry::column(std::size_t class_id) const {
  auto it = column_of_class.find(class_id);
  if (it == column_of_class.end()) throw IndexError("class " + std::to_string(class_id) + " has not been observed");
  return it->second;
}

Rng stats_rng(std::uint64_t seed, std::size_t task_index, std::size_t bundle, std::size_t class_pos, bool instructed) {
  return Rng(seed).split(1000 + task_index).split(500 + bundle).split(2 * class_pos + (instructed ? 1 : 0));
}

HideState HideState::create(const HideConfig& cfg, const BackboneConfig& arch) {
  arch.validate();
  cfg.pet.validate(arch.layers);
  cfg.shared_pet.validate(arch.layers);
  HideState s;
  s.cfg = cfg;
  s.psi_wtp = LinearHead<float>::make(arch.dim);
  std::vector<RecoveryStrategy> rec{cfg.recovery};
  rec.insert(rec.end(), cfg.extra_recoveries.begin(), cfg.extra_recoveries.end());
  Rng hr = Rng(cfg.seed).split(78);
  for (auto r : rec) {
    HeadBundle b;
    b.recovery = r;
    b.omega = TiiHead<float>::make(arch.dim, cfg.omega_hidden, hr);
    b.psi = LinearHead<float>::make(arch.dim);
    s.bundles.push_back(std::move(b));
  }
  s.g_sets.push_back(PetParams<float>::init(cfg.shared_pet, arch.dim, arch.layers, Rng(cfg.seed).split(77)));
  return s;
}

namespace {

std::vector<std::size_t> argsort_rows_by_label(const std::vector<std::size_t>& y, std::size_t label) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] == label) out.push_back(i);
  return out;
}

Tensor<float> gather(const Tensor<float>& x, std::span<const std::size_t> idx) {
  const std::size_t w = x.cols();
  Tensor<float> out({idx.size(), w});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto src = x.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

std::size_t argmax_cols(std::span<const float> row, std::span<const std::size_t> cols) {
  std::size_t best = cols[0];
  float bv = row[cols[0]];
  for (std::size_t c : cols) {
    if (row[c] > bv) {  // strict: lowest index wins ties
      bv = row[c];
      best = c;
    }
  }
  return best;
}

template <typename Head>
Tensor<float> head_logits(const Head& h, const Tensor<float>& reps) {
  Tape<float> t;
  return t.value(h.logits(t, t.constant(reps)));
}

// Trains omega and psi of one bundle.
void train_heads(HideState& s, HeadBundle& b, Rng rng, const Tensor<float>& cur_u, const Tensor<float>& cur_i,
                 const std::vector<std::size_t>& cur_cols) {
  const auto& cfg = s.cfg;
  const std::size_t task = s.t - 1;
  b.omega.set_trainable(true);
  b.psi.set_trainable(true);
  Adam<float> opt_w(b.omega.tensors(), AdamConfig{cfg.lr_head});
  Adam<float> opt_p(b.psi.tensors(), AdamConfig{cfg.lr_head});

  auto build = [&](Rng& r, Tensor<float>& u, std::vector<std::size_t>& yt, Tensor<float>& in,
                   std::vector<std::size_t>& yc) {
    if (b.recovery == RecoveryStrategy::None) {
      u = cur_u;
      in = cur_i;
      yt.assign(cur_u.rows(), task);
      yc = cur_cols;
      return;
    }
    const std::size_t n = cfg.samples_per_class;
    std::size_t total = 0;
    for (const auto& cls : b.stats_u) total += cls.size() * n;
    const std::size_t d = cur_u.cols();
    u = Tensor<float>({total, d});
    in = Tensor<float>({total, d});
    yt.clear();
    yc.clear();
    std::size_t row = 0;
    for (std::size_t j = 0; j < b.stats_u.size(); ++j) {
      for (std::size_t c = 0; c < b.stats_u[j].size(); ++c) {
        Tensor<float> su = sample_reps(b.stats_u[j][c], n, r);
        Tensor<float> si = sample_reps(b.stats_i[j][c], n, r);
        std::copy(su.data().begin(), su.data().end(), u.data().begin() + row * d);
        std::copy(si.data().begin(), si.data().end(), in.data().begin() + row * d);
        row += n;
        yt.insert(yt.end(), n, j);
        yc.insert(yc.end(), n, s.registry.task_columns[j][c]);
      }
    }
  };

  Tensor<float> u, in;
  std::vector<std::size_t> yt, yc;
  Rng probe = rng;
  build(probe, u, yt, in, yc);
  const std::size_t n = yt.size();
  const std::size_t nb = (n + cfg.head_batch - 1) / cfg.head_batch;
  const long total = static_cast<long>(nb * cfg.head_epochs);
  long step = 0;
  std::vector<std::size_t> order(n);
  for (std::size_t ep = 0; ep < cfg.head_epochs; ++ep) {
    Rng er = rng.split(ep);
    if (ep > 0) build(er, u, yt, in, yc);
    std::iota(order.begin(), order.end(), 0);
    er.shuffle(std::span(order));
    for (std::size_t st = 0; st < n; st += cfg.head_batch) {
      std::span<const std::size_t> idx(order.data() + st, std::min(cfg.head_batch, n - st));
      std::vector<std::size_t> bt, bc;
      for (std::size_t i : idx) {
        bt.push_back(yt[i]);
        bc.push_back(yc[i]);
      }
      const double lr = cosine_lr(cfg.lr_head, step++, total);
      {
        opt_w.zero_grad();
        Tape<float> t;
        t.backward(tii_loss(t, t.constant(gather(u, idx)), b.omega, std::span<const std::size_t>(bt)));
        opt_w.step(lr);
      }
      {
        opt_p.zero_grad();
        Tape<float> t;
        t.backward(tap_loss(t, t.constant(gather(in, idx)), b.psi, std::span<const std::size_t>(bc)));
        opt_p.step(lr);
      }
    }
  }
  b.omega.set_trainable(false);
  b.psi.set_trainable(false);
}

}  // namespace

Tensor<float> encode_uninstructed(const HideState& s, const BackboneCheckpoint& theta, const Tensor<float>& x) {
  if (s.aka) return encode_all(theta, x);
  const auto& g = s.g_sets.at(0);
  return encode_all<float>(theta, x, [&](Tape<float>& t) { return g.hooks(t, theta.arch.layers); });
}

Tensor<float> encode_instructed(const HideState& s, const BackboneCheckpoint& theta, std::size_t task,
                                const Tensor<float>& x) {
  const auto& e = s.e.at(task);
  auto hooks = [&](Tape<float>& t) { return e.hooks(t, theta.arch.layers); };
  if (s.aka) return encode_all<float>(merge_lora(theta, s.g_sets.at(s.set_of_task.at(task))), x, hooks);
  return encode_all<float>(theta, x, hooks);
}

void train_task(HideState& s, std::size_t task_index, const Dataset& train, const std::vector<std::size_t>& classes,
                const BackboneCheckpoint& theta, std::optional<TaskPlan> plan) {
  if (task_index != s.t + 1) {
    throw ProtocolError("expected task " + std::to_string(s.t + 1) + ", got task " + std::to_string(task_index));
  }
  if (classes.empty() || train.size() == 0) throw ConfigError("task " + std::to_string(task_index) + " has no data");
  const auto& cfg = s.cfg;
  const std::size_t L = theta.arch.layers, d = theta.arch.dim;
  Rng rng = Rng(cfg.seed).split(1000 + task_index);

  // class registry and head growth
  std::vector<std::size_t> cols, fresh;
  for (std::size_t c : classes) {
    auto it = s.registry.column_of_class.find(c);
    if (it == s.registry.column_of_class.end()) {
      const std::size_t col = s.registry.class_of_column.size();
      s.registry.class_of_column.push_back(c);
      s.registry.column_of_class[c] = col;
      fresh.push_back(col);
      cols.push_back(col);
    } else {
      cols.push_back(it->second);
    }
  }
  std::vector<std::size_t> label_cols(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    label_cols[i] = s.registry.column(train.y[i]);
    if (std::find(cols.begin(), cols.end(), label_cols[i]) == cols.end()) {
      throw IndexError("sample of class " + std::to_string(train.y[i]) + " outside task " + std::to_string(task_index));
    }
  }
  Rng hr = rng.split(1);
  s.psi_wtp.append(fresh.size(), hr);

  // psi-hat starts from psi; e_i from the ensemble of earlier sets
  LinearHead<float> psi_hat = s.psi_wtp;
  std::vector<const PetParams<float>*> prev;
  for (const auto& e : s.e) prev.push_back(&e);
  PetParams<float> e_i = ensemble_init<float>(prev, cfg.alpha, cfg.pet, d, L, rng.split(2));

  TaskPlan tp = plan ? *plan : TaskPlan{0, update_shared(cfg.shared, task_index, cfg)};
  if (tp.set == s.g_sets.size()) {
    s.g_sets.push_back(PetParams<float>::init(cfg.shared_pet, d, L, rng.split(3)));
  } else if (tp.set > s.g_sets.size()) {
    throw StateError("shared set " + std::to_string(tp.set) + " does not exist");
  }
  PetParams<float>& g = s.g_sets[tp.set];
  PetParams<float> g_interim;
  PetParams<float>* g_work = &g;
  if (tp.policy.ema) {
    g_interim = g;
    g_work = &g_interim;
  }

  const std::size_t n = train.size();
  const std::size_t nb = (n + cfg.batch - 1) / cfg.batch;
  const long total = static_cast<long>(nb * cfg.epochs);
  e_i.set_trainable(true);
  s.psi_wtp.set_trainable(true);
  psi_hat.set_trainable(true);
  Adam<float> opt_e(e_i.tensors(), AdamConfig{cfg.lr_pet});
  Adam<float> opt_psi(s.psi_wtp.tensors(), AdamConfig{cfg.lr_head});
  Adam<float> opt_g(g_work->tensors(), AdamConfig{tp.policy.lr});
  Adam<float> opt_hat(psi_hat.tensors(), AdamConfig{cfg.lr_head});
  std::vector<std::size_t> all_cols(s.registry.width());
  std::iota(all_cols.begin(), all_cols.end(), 0);

  std::optional<BackboneCheckpoint> merged;
  if (s.aka && !tp.policy.train) merged = merge_lora(theta, g);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  long step = 0;
  for (std::size_t ep = 0; ep < cfg.epochs; ++ep) {
    Rng er = rng.split(100 + ep);
    er.shuffle(std::span(order));
    const bool g_active = tp.policy.train && ep >= tp.policy.frozen_epochs;
    g_work->set_trainable(g_active);
    for (std::size_t st = 0; st < n; st += cfg.batch, ++step) {
      std::span<const std::size_t> idx(order.data() + st, std::min(cfg.batch, n - st));
      Tensor<float> xb = train.rows(idx);
      std::vector<std::size_t> yb;
      for (std::size_t i : idx) yb.push_back(label_cols[i]);
      const double frac_lr = cosine_lr(1.0, step, total);

      if (tp.policy.train) {
        opt_g.zero_grad();
        opt_hat.zero_grad();
        Tape<float> t;
        Var rep = encode(t, theta, xb, g_work->hooks(t, L));
        t.backward(wtp_loss(t, rep, psi_hat, cols, std::span<const std::size_t>(yb)));
        if (g_active) opt_g.step(tp.policy.lr * frac_lr);
        opt_hat.step(cfg.lr_head * frac_lr);
      }

      opt_e.zero_grad();
      opt_psi.zero_grad();
      Tape<float> t;
      const BackboneCheckpoint* inst = &theta;
      if (s.aka) {
        if (tp.policy.train) merged = merge_lora(theta, *g_work);
        inst = &*merged;
      }
      Var rep = encode(t, *inst, xb, e_i.hooks(t, L));
      Var loss = cfg.task_local_ce ? wtp_loss(t, rep, s.psi_wtp, cols, std::span<const std::size_t>(yb))
                                   : tap_loss(t, rep, s.psi_wtp, std::span<const std::size_t>(yb));
      t.backward(loss);
      opt_e.step(cfg.lr_pet * frac_lr);
      opt_psi.step(cfg.lr_head * frac_lr);
    }
  }

  if (tp.policy.ema && tp.policy.train) {
    for (std::size_t j = 0; j < g.entries.size(); ++j) {
      auto& dst = g.entries[j].value;
      const auto& src = g_interim.entries[j].value;
      for (std::size_t k = 0; k < dst.numel(); ++k) {
        dst[k] = static_cast<float>((1.0 - tp.policy.momentum) * dst[k] + tp.policy.momentum * src[k]);
      }
    }
  }
  g.set_trainable(false);
  g_interim.set_trainable(false);
  e_i.set_trainable(false);
  s.psi_wtp.set_trainable(false);
  s.e.push_back(std::move(e_i));
  s.set_of_task.push_back(tp.set);
  s.registry.task_columns.push_back(cols);
  s.t = task_index;

  // representations of D_i; the raw samples are not kept past this point
  const Tensor<float> plain = encode_all(theta, train.x);
  const Tensor<float> rep_u = encode_uninstructed(s, theta, train.x);
  const Tensor<float> rep_i = encode_instructed(s, theta, s.t - 1, train.x);
  std::vector<float> key(d, 0.f);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) key[j] += plain.at(i, j) / static_cast<float>(n);
  s.task_keys.push_back(std::move(key));

  for (std::size_t bi = 0; bi < s.bundles.size(); ++bi) {
    HeadBundle& b = s.bundles[bi];
    Rng br = rng.split(500 + bi);
    std::vector<RepStats> su, si;
    for (std::size_t k = 0; k < classes.size(); ++k) {
      const std::size_t c = classes[k];
      const auto rows = argsort_rows_by_label(train.y, c);
      if (rows.empty()) throw ConfigError("class " + std::to_string(c) + " has no training samples");
      std::string warn;
      Rng ru = stats_rng(cfg.seed, task_index, bi, k, false), ri = stats_rng(cfg.seed, task_index, bi, k, true);
      su.push_back(fit_stats(gather(rep_u, rows), b.recovery, ru, cfg.stats, &warn));
      if (!warn.empty()) s.warnings.push_back("task " + std::to_string(task_index) + " class " + std::to_string(c) + ": " + warn);
      si.push_back(fit_stats(gather(rep_i, rows), b.recovery, ri, cfg.stats, nullptr));
    }
    b.stats_u.push_back(std::move(su));
    b.stats_i.push_back(std::move(si));
    b.omega.append(1, br);
    // new psi columns start from their within-task solution
    const std::size_t old = b.psi.width();
    b.psi.append(fresh.size(), br);
    for (std::size_t k = 0; k < fresh.size(); ++k) {
      for (std::size_t r = 0; r < d; ++r) b.psi.w.at(r, old + k) = s.psi_wtp.w.at(r, fresh[k]);
      b.psi.b[old + k] = s.psi_wtp.b[fresh[k]];
    }
    if (cfg.train_heads) train_heads(s, b, br.split(9), rep_u, rep_i, label_cols);
  }
}

// ---------------------------------------------------------------------------
// inference

std::string to_string(View v) {
  switch (v) {
    case View::Naive: return "naive";
    case View::WTP: return "wtp";
    case View::WTP_TII: return "wtp+tii";
    case View::WTP_TAP: return "wtp+tap";
    case View::Full: return "full";
    case View::Oracle: return "oracle";
    case View::OracleWTP: return "oracle-wtp";
  }
  return "?";
}

View parse_view(const std::string& s) {
  for (auto v : {View::Naive, View::WTP, View::WTP_TII, View::WTP_TAP, View::Full, View::Oracle, View::OracleWTP}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown component set \"" + s + "\"");
}

EvalReps encode_for_eval(const HideState& s, const BackboneCheckpoint& theta, const Tensor<float>& x) {
  EvalReps r;
  r.plain = encode_all(theta, x);
  r.uninstructed = s.aka ? r.plain : encode_uninstructed(s, theta, x);
  for (std::size_t i = 0; i < s.t; ++i) r.instructed.push_back(encode_instructed(s, theta, i, x));
  return r;
}

Predictions predict(const HideState& s, const HeadBundle& heads, const EvalReps& reps, View view,
                    std::span<const std::size_t> true_task) {
  if (s.t == 0) throw StateError("no task has been learned");
  const std::size_t n = reps.plain.rows(), d = reps.plain.cols();
  Predictions p;
  p.task.resize(n);
  p.label.resize(n);

  const bool use_keys = view == View::Naive || view == View::WTP || view == View::WTP_TAP;
  const bool oracle = view == View::Oracle || view == View::OracleWTP;
  if (oracle && true_task.size() != n) throw ContractError("oracle view needs the true task of every sample");
  if (use_keys) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = INFINITY;
      for (std::size_t j = 0; j < s.t; ++j) {
        double dist = 0;
        for (std::size_t k = 0; k < d; ++k) {
          const double z = reps.plain.at(i, k) - s.task_keys[j][k];
          dist += z * z;
        }
        if (dist < best) {
          best = dist;
          p.task[i] = j;
        }
      }
    }
  } else if (oracle) {
    std::copy(true_task.begin(), true_task.end(), p.task.begin());
  } else {
    Tensor<float> z = head_logits(heads.omega, reps.uninstructed);
    std::vector<std::size_t> all(s.t);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < n; ++i) p.task[i] = argmax_cols(z.row(i), all);
  }

  const bool wtp_head = view == View::Naive || view == View::WTP || view == View::WTP_TII || view == View::OracleWTP;
  const bool within = view == View::OracleWTP;
  const LinearHead<float>& head = wtp_head ? s.psi_wtp : heads.psi;
  std::vector<std::size_t> all_cols(head.width());
  std::iota(all_cols.begin(), all_cols.end(), 0);
  for (std::size_t j = 0; j < s.t; ++j) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
      if (p.task[i] == j) rows.push_back(i);
    if (rows.empty()) continue;
    Tensor<float> z = head_logits(head, gather(reps.instructed[j], rows));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t col = argmax_cols(z.row(r), within ? s.registry.task_columns[j] : all_cols);
      p.label[rows[r]] = s.registry.class_of_column[col];
    }
  }
  return p;
}

Predictions infer(const HideState& s, const BackboneCheckpoint& theta, const Tensor<float>& x) {
  return predict(s, s.main(), encode_for_eval(s, theta, x), View::Full);
}

TiiReport eval_tii(const HideState& s, const BackboneCheckpoint& theta, const std::vector<Dataset>& tests,
                   std::uint64_t seed) {
  if (tests.size() > s.t) throw ContractError("more test sets than learned tasks");
  const HeadBundle& b = s.main();
  TiiReport rep;
  std::size_t hit = 0, total = 0;
  std::vector<Tensor<float>> reps;
  for (std::size_t j = 0; j < tests.size(); ++j) {
    reps.push_back(s.aka ? encode_all(theta, tests[j].x) : encode_uninstructed(s, theta, tests[j].x));
    Tensor<float> z = head_logits(b.omega, reps.back());
    std::vector<std::size_t> all(s.t);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < z.rows(); ++i) hit += argmax_cols(z.row(i), all) == j;
    total += z.rows();
  }
  rep.tii_accuracy = total ? double(hit) / double(total) : 0.0;

  if (b.recovery == RecoveryStrategy::None) {
    rep.faa_u = NAN;
    return rep;
  }
  // auxiliary all-class head on uninstructed statistics
  const auto& cfg = s.cfg;
  LinearHead<float> aux = LinearHead<float>::make(theta.arch.dim);
  Rng rng = Rng(seed).split(0xFAA);
  aux.append(s.registry.width(), rng);
  aux.set_trainable(true);
  Adam<float> opt(aux.tensors(), AdamConfig{cfg.lr_head});
  const std::size_t per = cfg.samples_per_class;
  long step = 0;
  std::size_t classes = 0;
  for (const auto& t : b.stats_u) classes += t.size();
  const long total_steps = static_cast<long>(cfg.head_epochs * ((classes * per + cfg.head_batch - 1) / cfg.head_batch));
  for (std::size_t ep = 0; ep < cfg.head_epochs; ++ep) {
    Rng er = rng.split(ep + 1);
    Tensor<float> x({classes * per, theta.arch.dim});
    std::vector<std::size_t> y;
    std::size_t row = 0;
    for (std::size_t j = 0; j < b.stats_u.size(); ++j)
      for (std::size_t c = 0; c < b.stats_u[j].size(); ++c) {
        Tensor<float> smp = sample_reps(b.stats_u[j][c], per, er);
        std::copy(smp.data().begin(), smp.data().end(), x.data().begin() + row * theta.arch.dim);
        row += per;
        y.insert(y.end(), per, s.registry.task_columns[j][c]);
      }
    std::vector<std::size_t> order(y.size());
    std::iota(order.begin(), order.end(), 0);
    er.shuffle(std::span(order));
    for (std::size_t st = 0; st < order.size(); st += cfg.head_batch) {
      std::span<const std::size_t> idx(order.data() + st, std::min(cfg.head_batch, order.size() - st));
      std::vector<std::size_t> yb;
      for (std::size_t i : idx) yb.push_back(y[i]);
      opt.zero_grad();
      Tape<float> t;
      t.backward(tap_loss(t, t.constant(gather(x, idx)), aux, std::span<const std::size_t>(yb)));
      opt.step(cosine_lr(cfg.lr_head, step++, total_steps));
    }
  }
  double acc_sum = 0;
  std::vector<std::size_t> all_cols(aux.width());
  std::iota(all_cols.begin(), all_cols.end(), 0);
  for (std::size_t j = 0; j < tests.size(); ++j) {
    Tensor<float> z = head_logits(aux, reps[j]);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < z.rows(); ++i)
      ok += s.registry.class_of_column[argmax_cols(z.row(i), all_cols)] == tests[j].y[i];
    acc_sum += z.rows() ? double(ok) / double(z.rows()) : 0.0;
  }
  rep.faa_u = tests.empty() ? 0.0 : acc_sum / double(tests.size());
  return rep;
}

}  // namespace hidepet
