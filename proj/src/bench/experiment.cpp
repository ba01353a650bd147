#include "hidepet/bench/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "hidepet/hide/config_io.hpp"
#include "hidepet/numcore/optim.hpp"

namespace hidepet {

using nlohmann::json;

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.world.noise = 0.25;
  c.world.families = 10;
  c.world.family_shared = 6;
  c.backbone.pretrain.epochs = 20;
  c.hide.epochs = 5;
  c.hide.head_epochs = 40;
  c.hide.omega_hidden = 64;
  c.hide.lr_head = 0.02;
  c.hide.lr_small = 1e-4;
  c.hide.shared_pet.technique = Technique::Adapter;
  c.mixed.second_world = c.world;
  c.mixed.second_world.seed = 8;
  return c;
}

json to_json(const WorldConfig& w) {
  return {{"seed", w.seed},     {"atoms", w.atoms},   {"feat", w.feat},         {"tokens", w.tokens},
          {"margin", w.margin}, {"noise", w.noise},   {"offset", w.offset},     {"families", w.families},
          {"family_shared", w.family_shared}};
}

WorldConfig world_from_json(const json& j, WorldConfig w) {
  reject_unknown(j, {"seed", "atoms", "feat", "tokens", "margin", "noise", "offset", "families", "family_shared"},
                 "world");
  get_if(j, "seed", w.seed);
  get_if(j, "atoms", w.atoms);
  get_if(j, "feat", w.feat);
  get_if(j, "tokens", w.tokens);
  get_if(j, "margin", w.margin);
  get_if(j, "noise", w.noise);
  get_if(j, "offset", w.offset);
  get_if(j, "families", w.families);
  get_if(j, "family_shared", w.family_shared);
  return w;
}

json to_json(const BackboneConfig& a) {
  return {{"layers", a.layers}, {"dim", a.dim},       {"heads", a.heads},        {"tokens", a.tokens},
          {"feat", a.feat},     {"pre_ln", a.pre_ln}, {"residual", a.residual}};
}

BackboneConfig arch_from_json(const json& j, BackboneConfig a) {
  reject_unknown(j, {"layers", "dim", "heads", "tokens", "feat", "pre_ln", "residual"}, "architecture");
  get_if(j, "layers", a.layers);
  get_if(j, "dim", a.dim);
  get_if(j, "heads", a.heads);
  get_if(j, "tokens", a.tokens);
  get_if(j, "feat", a.feat);
  get_if(j, "pre_ln", a.pre_ln);
  get_if(j, "residual", a.residual);
  return a;
}

namespace {

json backbone_json(const BackboneSpec& b) {
  return {{"checkpoint", b.checkpoint},
          {"arch", to_json(b.arch)},
          {"pretext_first_class", b.pretext_first_class},
          {"pretext_classes", b.pretext_classes},
          {"pretext_per_class", b.pretext_per_class},
          {"pretext_seed", b.pretext_seed},
          {"pretrain",
           {{"epochs", b.pretrain.epochs},
            {"batch", b.pretrain.batch},
            {"lr", b.pretrain.lr},
            {"target_accuracy", b.pretrain.target_accuracy},
            {"seed", b.pretrain.seed}}}};
}

BackboneSpec backbone_from_json(const json& j, BackboneSpec b) {
  reject_unknown(j,
                 {"checkpoint", "arch", "pretext_first_class", "pretext_classes", "pretext_per_class", "pretext_seed",
                  "pretrain"},
                 "backbone");
  get_if(j, "checkpoint", b.checkpoint);
  if (j.contains("arch")) b.arch = arch_from_json(j.at("arch"), b.arch);
  get_if(j, "pretext_first_class", b.pretext_first_class);
  get_if(j, "pretext_classes", b.pretext_classes);
  get_if(j, "pretext_per_class", b.pretext_per_class);
  get_if(j, "pretext_seed", b.pretext_seed);
  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    reject_unknown(p, {"epochs", "batch", "lr", "target_accuracy", "seed"}, "pretrain");
    get_if(p, "epochs", b.pretrain.epochs);
    get_if(p, "batch", b.pretrain.batch);
    get_if(p, "lr", b.pretrain.lr);
    get_if(p, "target_accuracy", b.pretrain.target_accuracy);
    get_if(p, "seed", b.pretrain.seed);
  }
  return b;
}

json mixed_json(const MixedSpec& m) {
  return {{"enabled", m.enabled},
          {"second_world", to_json(m.second_world)},
          {"second_first_class", m.second_first_class},
          {"cl_tasks_per_dataset", m.cl_tasks_per_dataset},
          {"validation_tasks_per_dataset", m.validation_tasks_per_dataset},
          {"few_shot", m.few_shot},
          {"probe_epochs", m.probe_epochs},
          {"probe_lr", m.probe_lr}};
}

MixedSpec mixed_from_json(const json& j, MixedSpec m) {
  reject_unknown(j,
                 {"enabled", "second_world", "second_first_class", "cl_tasks_per_dataset",
                  "validation_tasks_per_dataset", "few_shot", "probe_epochs", "probe_lr"},
                 "mixed");
  get_if(j, "enabled", m.enabled);
  if (j.contains("second_world")) m.second_world = world_from_json(j.at("second_world"), m.second_world);
  get_if(j, "second_first_class", m.second_first_class);
  get_if(j, "cl_tasks_per_dataset", m.cl_tasks_per_dataset);
  get_if(j, "validation_tasks_per_dataset", m.validation_tasks_per_dataset);
  get_if(j, "few_shot", m.few_shot);
  get_if(j, "probe_epochs", m.probe_epochs);
  get_if(j, "probe_lr", m.probe_lr);
  return m;
}

// everything except seeds and output location
json run_identity(const ExperimentConfig& c) {
  return {{"scenario", to_string(c.scenario)},
          {"world", to_json(c.world)},
          {"classes", c.classes},
          {"tasks", c.tasks},
          {"train_per_class", c.train_per_class},
          {"test_per_class", c.test_per_class},
          {"first_class", c.first_class},
          {"backbone", backbone_json(c.backbone)},
          {"hide", to_json(c.hide)},
          {"components", c.components},
          {"tii_report", c.tii_report},
          {"mixed", mixed_json(c.mixed)},
          {"aka", c.aka},
          {"lambda_ood", c.aka_cfg.lambda_ood},
          {"expand_fraction", c.aka_cfg.expand_fraction}};
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json j = run_identity(c);
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig experiment_from_json(const json& j, ExperimentConfig c) {
  reject_unknown(j,
                 {"scenario", "world", "classes", "tasks", "train_per_class", "test_per_class", "first_class",
                  "backbone", "hide", "components", "tii_report", "mixed", "aka", "lambda_ood", "expand_fraction",
                  "seeds", "output_dir"},
                 "experiment config");
  if (j.contains("scenario")) c.scenario = parse_scenario(j.at("scenario").get<std::string>());
  if (j.contains("world")) c.world = world_from_json(j.at("world"), c.world);
  get_if(j, "classes", c.classes);
  get_if(j, "tasks", c.tasks);
  get_if(j, "train_per_class", c.train_per_class);
  get_if(j, "test_per_class", c.test_per_class);
  get_if(j, "first_class", c.first_class);
  if (j.contains("backbone")) c.backbone = backbone_from_json(j.at("backbone"), c.backbone);
  if (j.contains("hide")) c.hide = hide_config_from_json(j.at("hide"), c.hide);
  get_if(j, "components", c.components);
  for (const auto& v : c.components) parse_view(v);
  get_if(j, "tii_report", c.tii_report);
  if (j.contains("mixed")) c.mixed = mixed_from_json(j.at("mixed"), c.mixed);
  get_if(j, "aka", c.aka);
  get_if(j, "lambda_ood", c.aka_cfg.lambda_ood);
  get_if(j, "expand_fraction", c.aka_cfg.expand_fraction);
  get_if(j, "seeds", c.seeds);
  get_if(j, "output_dir", c.output_dir);
  if (c.seeds.empty()) throw ConfigError("at least one seed is required");
  if (c.components.empty()) throw ConfigError("at least one component is required");
  if (c.aka && !c.mixed.enabled) throw ConfigError("AKA runs use the mixed two-dataset stream (set mixed.enabled)");
  return c;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return experiment_from_json(j);
}

namespace {

std::string fnv_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace

std::string config_hash(const ExperimentConfig& c) { return fnv_hex(run_identity(c).dump()); }

std::string backbone_hash(const ExperimentConfig& c) {
  json b = backbone_json(c.backbone);
  b.erase("checkpoint");
  return fnv_hex(json{{"backbone", b}, {"world", to_json(c.world)}}.dump());
}

std::string output_root(const ExperimentConfig& c) {
  if (!c.output_dir.empty()) return c.output_dir;
  if (const char* env = std::getenv("HIDEPET_OUT"); env && *env) return env;
  return "hidepet-out";
}

// ---------------------------------------------------------------------------

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_double(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

json ResultRecord::to_json() const {
  json dec = json::array();
  for (const auto& d : decisions) dec.push_back(hidepet::to_json(d));
  return {{"config_hash", config_hash},
          {"seed", seed},
          {"scenario", scenario},
          {"stream", stream},
          {"pet", pet},
          {"shared", shared},
          {"recovery", recovery},
          {"components", components},
          {"aka", aka},
          {"metrics", {{"faa", metrics.faa}, {"caa", metrics.caa}, {"ffm", metrics.ffm}, {"ala", metrics.ala}}},
          {"aa", metrics.aa},
          {"matrix", matrix.stage},
          {"tii_accuracy", opt_json(tii_accuracy)},
          {"faa_u", opt_json(faa_u)},
          {"pool_size", pool_size ? json(*pool_size) : json(nullptr)},
          {"lambda_ood", opt_json(lambda_ood)},
          {"decisions", dec},
          {"validation_full", opt_json(validation_full)},
          {"validation_few", opt_json(validation_few)}};
}

ResultRecord ResultRecord::from_json(const json& j) {
  try {
    ResultRecord r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.scenario = j.at("scenario").get<std::string>();
    r.stream = j.value("stream", "");
    r.pet = j.at("pet").get<std::string>();
    r.shared = j.at("shared").get<std::string>();
    r.recovery = j.at("recovery").get<std::string>();
    r.components = j.at("components").get<std::string>();
    r.aka = j.value("aka", false);
    r.matrix.stage = j.at("matrix").get<std::vector<std::vector<double>>>();
    r.metrics = compute_metrics(r.matrix);
    r.tii_accuracy = opt_double(j, "tii_accuracy");
    r.faa_u = opt_double(j, "faa_u");
    if (j.contains("pool_size") && !j.at("pool_size").is_null()) r.pool_size = j.at("pool_size").get<std::size_t>();
    r.lambda_ood = opt_double(j, "lambda_ood");
    for (const auto& d : j.value("decisions", json::array())) {
      AkaDecision a;
      a.task = d.at("task").get<std::size_t>();
      const std::string act = d.at("decision").get<std::string>();
      if (act == "init") {
        a.action = AkaAction::Init;
      } else if (act == "expand") {
        a.action = AkaAction::Expand;
      } else if (act == "retrieve") {
        a.action = AkaAction::Retrieve;
      } else {
        throw ConfigError("unknown AKA decision \"" + act + "\"");
      }
      a.set = d.at("set").get<std::size_t>();
      a.ood_fraction = d.at("ood_fraction").get<double>();
      a.votes = d.at("votes").get<std::vector<double>>();
      r.decisions.push_back(std::move(a));
    }
    r.validation_full = opt_double(j, "validation_full");
    r.validation_few = opt_double(j, "validation_few");
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed result record: ") + e.what());
  }
}

BackboneCheckpoint load_or_pretrain(const ExperimentConfig& c) {
  if (!c.backbone.checkpoint.empty()) return load_checkpoint(c.backbone.checkpoint);
  PretrainConfig pc = c.backbone.pretrain;
  const std::size_t stream_hi = c.first_class + c.classes;
  for (std::size_t k = c.first_class; k < stream_hi; ++k) pc.downstream_classes.push_back(k);
  const Dataset d = make_pretext(c.world, c.backbone.pretext_first_class, c.backbone.pretext_classes,
                                 c.backbone.pretext_per_class, c.backbone.pretext_seed);
  return pretrain(d, c.backbone.arch, pc).checkpoint;
}

TaskStream stream_for(const ExperimentConfig& c, std::uint64_t seed) {
  std::vector<std::size_t> pretext(c.backbone.pretext_classes);
  std::iota(pretext.begin(), pretext.end(), c.backbone.pretext_first_class);
  StreamConfig sc;
  sc.scenario = c.scenario;
  sc.classes = c.classes;
  sc.tasks = c.tasks;
  sc.train_per_class = c.train_per_class;
  sc.test_per_class = c.test_per_class;
  sc.first_class = c.first_class;
  sc.seed = seed;
  sc.world = c.world;
  sc.pretext_classes = pretext;
  if (!c.mixed.enabled) return make_stream(sc);
  if (c.scenario != Scenario::CIL) throw ConfigError("mixed streams are class-incremental");
  if (c.classes % c.tasks != 0) throw ConfigError("classes must split evenly into tasks");
  const std::size_t per_task = c.classes / c.tasks;
  const std::size_t per_dataset = c.mixed.cl_tasks_per_dataset + c.mixed.validation_tasks_per_dataset;
  MixedStreamConfig mc;
  mc.cl_tasks_per_dataset = c.mixed.cl_tasks_per_dataset;
  mc.validation_tasks_per_dataset = c.mixed.validation_tasks_per_dataset;
  mc.few_shot = c.mixed.few_shot;
  mc.seed = seed;
  StreamConfig a = sc;
  a.classes = per_task * per_dataset;
  a.tag = "A";
  StreamConfig b = a;
  b.world = c.mixed.second_world;
  b.first_class = c.mixed.second_first_class;
  b.seed = seed + 7919;
  b.tag = "B";
  mc.datasets = {a, b};
  return make_mixed_stream(mc);
}

double linear_probe_accuracy(const Tensor<float>& train_x, const std::vector<std::size_t>& train_y,
                             const Tensor<float>& test_x, const std::vector<std::size_t>& test_y,
                             std::size_t epochs, double lr, std::uint64_t seed) {
  std::vector<std::size_t> classes = train_y;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  auto local = [&](std::size_t y) {
    return std::size_t(std::lower_bound(classes.begin(), classes.end(), y) - classes.begin());
  };
  std::vector<std::size_t> yl;
  for (std::size_t y : train_y) yl.push_back(local(y));
  Rng rng = Rng(seed).split(0x9B0);
  auto head = LinearHead<float>::make(train_x.cols());
  head.append(classes.size(), rng);
  head.set_trainable(true);
  Adam<float> opt(head.tensors(), AdamConfig{lr});
  for (std::size_t e = 0; e < epochs; ++e) {
    opt.zero_grad();
    Tape<float> t;
    Var loss = cross_entropy(t, head.logits(t, t.constant(train_x)), std::span<const std::size_t>(yl));
    t.backward(loss);
    opt.step(lr);
  }
  Tape<float> t;
  const Tensor<float> z = t.value(head.logits(t, t.constant(test_x)));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    const std::size_t c = std::max_element(row.begin(), row.end()) - row.begin();
    ok += classes[c] == test_y[i];
  }
  return 100.0 * double(ok) / double(test_y.size());
}

namespace {

double percent_correct(const Predictions& p, const std::vector<std::size_t>& y) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < y.size(); ++i) ok += p.label[i] == y[i];
  return 100.0 * double(ok) / double(y.size());
}

// shared representation a validation task is probed on
Tensor<float> validation_reps(const HideState& s, const BackboneCheckpoint& theta, const Tensor<float>& probe_x,
                              const Tensor<float>& x, const AkaConfig& aka) {
  if (!s.aka) return encode_uninstructed(s, theta, x);
  const AkaDecision d = decide(encode_all(theta, probe_x), s.main().stats_u, s.set_of_task, s.g_sets.size(),
                               aka.lambda_ood, aka.expand_fraction);
  const std::size_t nearest = std::max_element(d.votes.begin(), d.votes.end()) - d.votes.begin();
  return encode_all(merge_lora(theta, s.g_sets.at(s.set_of_task.at(nearest))), x);
}

}  // namespace

std::vector<ResultRecord> run_experiment(const ExperimentConfig& c, std::uint64_t seed,
                                         const BackboneCheckpoint& theta) {
  const auto t0 = std::chrono::steady_clock::now();
  const BackboneConfig& arch = theta.arch;
  auto check_world = [&](const WorldConfig& w) {
    if (w.tokens != arch.tokens || w.feat != arch.feat) {
      throw ConfigError("backbone expects " + std::to_string(arch.tokens) + "x" + std::to_string(arch.feat) +
                        " inputs but the stream produces " + std::to_string(w.tokens) + "x" + std::to_string(w.feat));
    }
  };
  check_world(c.world);
  if (c.mixed.enabled) check_world(c.mixed.second_world);

  const TaskStream st = stream_for(c, seed);
  HideConfig hc = c.hide;
  hc.seed = seed;
  std::vector<View> views;
  bool want_naive = false;
  for (const auto& name : c.components) {
    views.push_back(parse_view(name));
    want_naive |= views.back() == View::Naive;
  }
  HideState s = c.aka ? make_aka_state(hc, arch) : HideState::create(hc, arch);
  std::optional<HideState> ns;
  if (want_naive) {
    HideConfig nc = hc;
    nc.task_local_ce = false;
    nc.train_heads = false;
    nc.extra_recoveries.clear();
    ns = HideState::create(nc, arch);
  }

  const std::size_t extra = s.bundles.size() - 1;
  std::vector<AccuracyMatrix> mats(views.size() + extra);
  std::vector<AkaDecision> decisions;
  std::vector<Dataset> tests;
  for (std::size_t i = 0; i < st.tasks.size(); ++i) {
    const Task& task = st.tasks[i];
    if (c.aka) {
      decisions.push_back(aka_train_task(s, i + 1, task.train, task.classes, theta, c.aka_cfg));
    } else {
      train_task(s, i + 1, task.train, task.classes, theta);
    }
    if (ns) train_task(*ns, i + 1, task.train, task.classes, theta);
    tests.push_back(task.test);
    for (auto& m : mats) m.stage.emplace_back();
    for (std::size_t j = 0; j <= i; ++j) {
      const Dataset& te = st.tasks[j].test;
      const std::vector<std::size_t> truth(te.size(), j);
      const EvalReps reps = encode_for_eval(s, theta, te.x);
      std::optional<EvalReps> nreps;
      if (ns) nreps = encode_for_eval(*ns, theta, te.x);
      for (std::size_t k = 0; k < views.size(); ++k) {
        const bool naive = views[k] == View::Naive;
        const View v = c.scenario == Scenario::TIL ? View::OracleWTP : views[k];
        const HideState& state = naive ? *ns : s;
        mats[k].stage[i].push_back(percent_correct(predict(state, state.main(), naive ? *nreps : reps, v, truth), te.y));
      }
      for (std::size_t b = 1; b < s.bundles.size(); ++b) {
        const View v = c.scenario == Scenario::TIL ? View::OracleWTP : View::Full;
        mats[views.size() + b - 1].stage[i].push_back(percent_correct(predict(s, s.bundles[b], reps, v, truth), te.y));
      }
    }
  }

  std::optional<double> tii, faa_u;
  if (c.tii_report && c.scenario != Scenario::TIL) {
    const TiiReport tr = eval_tii(s, theta, tests, seed);
    tii = tr.tii_accuracy;
    if (std::isfinite(tr.faa_u)) faa_u = tr.faa_u;
  }
  std::optional<double> vfull, vfew;
  if (c.mixed.enabled && !st.validation.empty()) {
    double full = 0, few = 0;
    for (std::size_t k = 0; k < st.validation.size(); ++k) {
      const Task& f = st.validation[k];
      const Task& fs = st.validation_few[k];
      const Tensor<float> test = validation_reps(s, theta, f.train.x, f.test.x, c.aka_cfg);
      full += linear_probe_accuracy(validation_reps(s, theta, f.train.x, f.train.x, c.aka_cfg), f.train.y, test,
                                    f.test.y, c.mixed.probe_epochs, c.mixed.probe_lr, seed + k);
      // the few-shot probe also picks its set from the few samples it has
      const Tensor<float> test_few = validation_reps(s, theta, fs.train.x, f.test.x, c.aka_cfg);
      few += linear_probe_accuracy(validation_reps(s, theta, fs.train.x, fs.train.x, c.aka_cfg), fs.train.y,
                                   test_few, f.test.y, c.mixed.probe_epochs, c.mixed.probe_lr, seed + k);
    }
    vfull = full / double(st.validation.size());
    vfew = few / double(st.validation.size());
  }

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string hash = config_hash(c);
  std::vector<ResultRecord> out;
  for (std::size_t k = 0; k < mats.size(); ++k) {
    ResultRecord r;
    r.config_hash = hash;
    r.seed = seed;
    r.scenario = to_string(c.scenario);
    r.stream = st.descriptor;
    r.pet = to_string(hc.pet.technique);
    r.shared = to_string(hc.shared);
    const bool naive = k < views.size() && views[k] == View::Naive;
    r.recovery = naive ? "none" : to_string(k < views.size() ? s.main().recovery : s.bundles[k - views.size() + 1].recovery);
    r.components = k < views.size() ? c.components[k] : "full";
    r.aka = c.aka && !naive;
    r.matrix = mats[k];
    r.metrics = compute_metrics(mats[k]);
    if (!naive) {
      r.tii_accuracy = tii;
      r.faa_u = faa_u;
      if (c.aka) {
        r.pool_size = s.g_sets.size();
        r.lambda_ood = c.aka_cfg.lambda_ood;
        r.decisions = decisions;
      }
      r.validation_full = vfull;
      r.validation_few = vfew;
    }
    r.wall_seconds = wall;
    out.push_back(std::move(r));
  }
  return out;
}

void append_result_records(const std::string& path, const std::vector<ResultRecord>& records) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::app);
  std::ofstream timing(path + ".timing.jsonl", std::ios::app);
  if (!out || !timing) throw ConfigError("cannot write records to " + path);
  for (const auto& r : records) {
    out << r.to_json().dump() << '\n';
    timing << json{{"config_hash", r.config_hash}, {"seed", r.seed}, {"components", r.components},
                   {"recovery", r.recovery}, {"wall_seconds", r.wall_seconds}}
                  .dump()
           << '\n';
  }
}

std::vector<ResultRecord> read_result_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open records " + path);
  std::vector<ResultRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(ResultRecord::from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw ConfigError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace hidepet
