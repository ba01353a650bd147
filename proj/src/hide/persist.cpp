#include <filesystem>
#include <fstream>

#include "hidepet/hide/config_io.hpp"
#include "hidepet/numcore/records.hpp"

namespace hidepet {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
  }
}

json to_json(const PetSpec& p) {
  return {{"technique", to_string(p.technique)}, {"layers", p.layers},        {"prompt_len", p.prompt_len},
          {"rank", p.rank},                      {"lora_scale", p.lora_scale}, {"lora_targets", p.lora_targets},
          {"init_std", p.init_std}};
}

PetSpec pet_spec_from_json(const json& j, PetSpec p) {
  reject_unknown(j, {"technique", "layers", "prompt_len", "rank", "lora_scale", "lora_targets", "init_std"}, "pet spec");
  if (j.contains("technique")) p.technique = parse_technique(j.at("technique").get<std::string>());
  get_if(j, "layers", p.layers);
  get_if(j, "prompt_len", p.prompt_len);
  get_if(j, "rank", p.rank);
  get_if(j, "lora_scale", p.lora_scale);
  get_if(j, "lora_targets", p.lora_targets);
  get_if(j, "init_std", p.init_std);
  return p;
}

json to_json(const HideConfig& c) {
  json extra = json::array();
  for (auto r : c.extra_recoveries) extra.push_back(to_string(r));
  return {{"pet", to_json(c.pet)},
          {"shared_pet", to_json(c.shared_pet)},
          {"shared", to_string(c.shared)},
          {"recovery", to_string(c.recovery)},
          {"extra_recoveries", extra},
          {"epochs", c.epochs},
          {"head_epochs", c.head_epochs},
          {"batch", c.batch},
          {"head_batch", c.head_batch},
          {"samples_per_class", c.samples_per_class},
          {"lr_pet", c.lr_pet},
          {"lr_head", c.lr_head},
          {"lr_big", c.lr_big},
          {"lr_small", c.lr_small},
          {"ema_momentum", c.ema_momentum},
          {"alpha", c.alpha},
          {"task_local_ce", c.task_local_ce},
          {"train_heads", c.train_heads},
          {"omega_hidden", c.omega_hidden},
          {"stats",
           {{"prototypes", c.stats.prototypes},
            {"centroids", c.stats.centroids},
            {"kmeans_iters", c.stats.kmeans_iters},
            {"cov_ridge", c.stats.cov_ridge}}},
          {"seed", c.seed}};
}

HideConfig hide_config_from_json(const json& j, HideConfig c) {
  reject_unknown(j,
                 {"pet", "shared_pet", "shared", "recovery", "extra_recoveries", "epochs", "head_epochs", "batch",
                  "head_batch", "samples_per_class", "lr_pet", "lr_head", "lr_big", "lr_small", "ema_momentum",
                  "alpha", "task_local_ce", "train_heads", "omega_hidden", "stats", "seed"},
                 "hide config");
  if (j.contains("pet")) c.pet = pet_spec_from_json(j.at("pet"), c.pet);
  if (j.contains("shared_pet")) c.shared_pet = pet_spec_from_json(j.at("shared_pet"), c.shared_pet);
  if (j.contains("shared")) c.shared = parse_shared(j.at("shared").get<std::string>());
  if (j.contains("recovery")) c.recovery = parse_recovery(j.at("recovery").get<std::string>());
  if (j.contains("extra_recoveries")) {
    c.extra_recoveries.clear();
    for (const auto& r : j.at("extra_recoveries")) c.extra_recoveries.push_back(parse_recovery(r.get<std::string>()));
  }
  get_if(j, "epochs", c.epochs);
  get_if(j, "head_epochs", c.head_epochs);
  get_if(j, "batch", c.batch);
  get_if(j, "head_batch", c.head_batch);
  get_if(j, "samples_per_class", c.samples_per_class);
  get_if(j, "lr_pet", c.lr_pet);
  get_if(j, "lr_head", c.lr_head);
  get_if(j, "lr_big", c.lr_big);
  get_if(j, "lr_small", c.lr_small);
  get_if(j, "ema_momentum", c.ema_momentum);
  get_if(j, "alpha", c.alpha);
  get_if(j, "task_local_ce", c.task_local_ce);
  get_if(j, "train_heads", c.train_heads);
  get_if(j, "omega_hidden", c.omega_hidden);
  get_if(j, "seed", c.seed);
  if (j.contains("stats")) {
    const json& s = j.at("stats");
    reject_unknown(s, {"prototypes", "centroids", "kmeans_iters", "cov_ridge"}, "stats options");
    get_if(s, "prototypes", c.stats.prototypes);
    get_if(s, "centroids", c.stats.centroids);
    get_if(s, "kmeans_iters", c.stats.kmeans_iters);
    get_if(s, "cov_ridge", c.stats.cov_ridge);
  }
  if (c.batch == 0 || c.head_batch == 0) throw ConfigError("batch sizes must be positive");
  if (c.alpha < 0 || c.alpha > 1) throw ConfigError("alpha must lie in [0, 1]");
  if (c.ema_momentum < 0 || c.ema_momentum > 1) throw ConfigError("ema_momentum must lie in [0, 1]");
  return c;
}

// ---------------------------------------------------------------------------
// state directory: manifest.json + state.bin

namespace {

Tensor<float> vec_tensor(const std::vector<float>& v) { return Tensor<float>({v.size()}, v); }

void put_head(std::vector<TensorRecord>& out, const std::string& name, const LinearHead<float>& h) {
  if (h.width() == 0) return;
  out.push_back({name + ".w", h.w});
  out.push_back({name + ".b", h.b});
}

void put_pet(std::vector<TensorRecord>& out, const std::string& name, const PetParams<float>& p) {
  for (std::size_t i = 0; i < p.entries.size(); ++i) out.push_back({name + "." + p.entry_name(i), p.entries[i].value});
}

json stats_meta(const RepStats& s) {
  return {{"strategy", to_string(s.strategy)}, {"dim", s.dim}, {"sigma", s.sigma}, {"vectors", s.vectors.size()}};
}

void put_stats(std::vector<TensorRecord>& out, const std::string& name, const RepStats& s) {
  if (!s.vectors.empty()) {
    Tensor<float> v({s.vectors.size(), s.dim});
    for (std::size_t i = 0; i < s.vectors.size(); ++i) std::copy(s.vectors[i].begin(), s.vectors[i].end(), v.row(i).begin());
    out.push_back({name + ".vectors", v});
  }
  if (!s.mean.empty()) out.push_back({name + ".mean", vec_tensor(s.mean)});
  if (!s.var.empty()) out.push_back({name + ".var", vec_tensor(s.var)});
  if (!s.cov.empty()) out.push_back({name + ".cov", vec_tensor(s.cov)});
}

}  // namespace

void save_state(const HideState& s, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<TensorRecord> recs;
  json m;
  m["format"] = "hidepet-state";
  m["version"] = 1;
  m["config"] = to_json(s.cfg);
  m["t"] = s.t;
  m["aka"] = s.aka;
  m["set_of_task"] = s.set_of_task;
  m["class_of_column"] = s.registry.class_of_column;
  m["task_columns"] = s.registry.task_columns;
  m["task_keys"] = s.task_keys;
  m["warnings"] = s.warnings;
  m["g_sets"] = s.g_sets.size();
  put_head(recs, "psi_wtp", s.psi_wtp);
  for (std::size_t i = 0; i < s.e.size(); ++i) put_pet(recs, "e" + std::to_string(i + 1), s.e[i]);
  for (std::size_t i = 0; i < s.g_sets.size(); ++i) put_pet(recs, "g" + std::to_string(i + 1), s.g_sets[i]);
  json bundles = json::array();
  for (std::size_t b = 0; b < s.bundles.size(); ++b) {
    const auto& hb = s.bundles[b];
    const std::string p = "bundle" + std::to_string(b);
    put_head(recs, p + ".omega", hb.omega.out);
    if (hb.omega.hidden()) {
      recs.push_back({p + ".omega.w1", hb.omega.w1});
      recs.push_back({p + ".omega.b1", hb.omega.b1});
    }
    put_head(recs, p + ".psi", hb.psi);
    json bu = json::array(), bi = json::array();
    for (std::size_t j = 0; j < hb.stats_u.size(); ++j) {
      json tu = json::array(), ti = json::array();
      for (std::size_t c = 0; c < hb.stats_u[j].size(); ++c) {
        const std::string q = p + ".t" + std::to_string(j) + ".c" + std::to_string(c);
        put_stats(recs, q + ".u", hb.stats_u[j][c]);
        put_stats(recs, q + ".i", hb.stats_i[j][c]);
        tu.push_back(stats_meta(hb.stats_u[j][c]));
        ti.push_back(stats_meta(hb.stats_i[j][c]));
      }
      bu.push_back(tu);
      bi.push_back(ti);
    }
    bundles.push_back({{"recovery", to_string(hb.recovery)}, {"stats_u", bu}, {"stats_i", bi}});
  }
  m["bundles"] = bundles;
  write_records(dir + "/state.bin", recs);
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw FormatError("cannot write " + dir + "/manifest.json", 0);
  f << m.dump(2) << "\n";
}

HideState load_state(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw FormatError("cannot open " + dir + "/manifest.json", 0);
  json m;
  try {
    m = json::parse(f);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest.json: ") + e.what(), e.byte);
  }
  if (m.value("format", "") != "hidepet-state") throw FormatError("manifest.json is not a saved state", 0);
  if (m.value("version", 0) > 1) throw UnsupportedVersionError("state version " + std::to_string(m.value("version", 0)), 0);
  std::map<std::string, Tensor<float>> recs;
  for (auto& r : read_records(dir + "/state.bin")) recs.emplace(r.name, std::move(r.tensor));
  auto take = [&](const std::string& name) -> Tensor<float> {
    auto it = recs.find(name);
    if (it == recs.end()) throw FormatError("state.bin lacks tensor \"" + name + "\"", 0);
    return it->second;
  };

  HideState s;
  s.cfg = hide_config_from_json(m.at("config"));
  s.t = m.at("t").get<std::size_t>();
  s.aka = m.at("aka").get<bool>();
  s.set_of_task = m.at("set_of_task").get<std::vector<std::size_t>>();
  s.registry.class_of_column = m.at("class_of_column").get<std::vector<std::size_t>>();
  for (std::size_t c = 0; c < s.registry.class_of_column.size(); ++c) s.registry.column_of_class[s.registry.class_of_column[c]] = c;
  s.registry.task_columns = m.at("task_columns").get<std::vector<std::vector<std::size_t>>>();
  s.task_keys = m.at("task_keys").get<std::vector<std::vector<float>>>();
  s.warnings = m.at("warnings").get<std::vector<std::string>>();

  const std::size_t d = s.task_keys.empty() ? 0 : s.task_keys[0].size();
  auto get_head = [&](const std::string& name) {
    if (recs.count(name + ".w")) return LinearHead<float>{take(name + ".w"), take(name + ".b")};
    return LinearHead<float>::make(d);
  };
  auto get_pet = [&](const std::string& name, const PetSpec& spec) {
    // shapes come from the records; init only provides the entry layout
    PetParams<float> p = PetParams<float>::init(spec, d ? d : 1, 1 + *std::max_element(spec.layers.begin(), spec.layers.end()), Rng(0));
    for (std::size_t i = 0; i < p.entries.size(); ++i) p.entries[i].value = take(name + "." + p.entry_name(i));
    return p;
  };
  s.psi_wtp = get_head("psi_wtp");
  for (std::size_t i = 0; i < s.t; ++i) s.e.push_back(get_pet("e" + std::to_string(i + 1), s.cfg.pet));
  const std::size_t ng = m.at("g_sets").get<std::size_t>();
  for (std::size_t i = 0; i < ng; ++i) s.g_sets.push_back(get_pet("g" + std::to_string(i + 1), s.cfg.shared_pet));

  auto get_stats = [&](const std::string& name, const json& meta) {
    RepStats r;
    r.strategy = parse_recovery(meta.at("strategy").get<std::string>());
    r.dim = meta.at("dim").get<std::size_t>();
    r.sigma = meta.at("sigma").get<float>();
    if (recs.count(name + ".vectors")) {
      Tensor<float> v = take(name + ".vectors");
      for (std::size_t i = 0; i < v.rows(); ++i) r.vectors.emplace_back(v.row(i).begin(), v.row(i).end());
    }
    if (recs.count(name + ".mean")) r.mean = take(name + ".mean").storage();
    if (recs.count(name + ".var")) r.var = take(name + ".var").storage();
    if (recs.count(name + ".cov")) r.cov = take(name + ".cov").storage();
    return r;
  };
  const json& bundles = m.at("bundles");
  for (std::size_t b = 0; b < bundles.size(); ++b) {
    HeadBundle hb;
    const std::string p = "bundle" + std::to_string(b);
    hb.recovery = parse_recovery(bundles[b].at("recovery").get<std::string>());
    if (recs.count(p + ".omega.w1")) {
      hb.omega.w1 = take(p + ".omega.w1");
      hb.omega.b1 = take(p + ".omega.b1");
    }
    hb.omega.out = get_head(p + ".omega");
    if (hb.omega.out.width() == 0) hb.omega.out = LinearHead<float>::make(hb.omega.hidden() ? hb.omega.hidden() : d);
    hb.psi = get_head(p + ".psi");
    const json& bu = bundles[b].at("stats_u");
    const json& bi = bundles[b].at("stats_i");
    for (std::size_t j = 0; j < bu.size(); ++j) {
      std::vector<RepStats> tu, ti;
      for (std::size_t c = 0; c < bu[j].size(); ++c) {
        const std::string q = p + ".t" + std::to_string(j) + ".c" + std::to_string(c);
        tu.push_back(get_stats(q + ".u", bu[j][c]));
        ti.push_back(get_stats(q + ".i", bi[j][c]));
      }
      hb.stats_u.push_back(std::move(tu));
      hb.stats_i.push_back(std::move(ti));
    }
    s.bundles.push_back(std::move(hb));
  }
  if (s.e.size() != s.t || s.set_of_task.size() != s.t || s.registry.task_columns.size() != s.t) {
    throw FormatError("saved state is inconsistent with its task count", 0);
  }
  return s;
}

}  // namespace hidepet
