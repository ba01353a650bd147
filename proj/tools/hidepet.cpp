#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hidepet/bench/experiment.hpp"
#include "hidepet/bench/metrics.hpp"
#include "hidepet/bench/report.hpp"
#include "hidepet/bench/suite.hpp"
#include "hidepet/numcore/error.hpp"
#include "hidepet/theory/theory.hpp"

using namespace hidepet;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string records;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "experiment config (JSON); desk defaults when omitted")
      ->check(CLI::ExistingFile);
  app->add_option("--seeds", c.seeds, "override the config's seeds");
  app->add_option("-o,--out", c.out, "output root (default: config output_dir, then $HIDEPET_OUT, then ./hidepet-out)");
  app->add_option("--records", c.records, "records file (default: <output root>/records.jsonl)");
}

ExperimentConfig resolve(const Common& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig::desk() : load_experiment(o.config);
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (!o.out.empty()) c.output_dir = o.out;
  return c;
}

std::string records_path(const Common& o, const ExperimentConfig& c) {
  return o.records.empty() ? (fs::path(output_root(c)) / "records.jsonl").string() : o.records;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

void print_records(const std::vector<ResultRecord>& rs) {
  for (const auto& r : rs) {
    std::printf("seed %-3llu %-8s %-10s %-14s FAA %6.2f  CAA %6.2f  FFM %6.2f  ALA %6.2f", (unsigned long long)r.seed,
                r.components.c_str(), r.shared.c_str(), r.recovery.c_str(), r.metrics.faa, r.metrics.caa,
                r.metrics.ffm, r.metrics.ala);
    if (r.tii_accuracy) std::printf("  TII %.4f", *r.tii_accuracy);
    if (r.pool_size) std::printf("  k %zu", *r.pool_size);
    if (r.validation_few) std::printf("  few %.2f", *r.validation_few);
    std::printf("\n");
  }
}

std::vector<ResultRecord> run_and_store(const std::vector<ExperimentConfig>& configs, const Common& o) {
  const BackboneCheckpoint theta = cached_backbone(configs.front());
  const auto rs = run_suite(configs, theta);
  const std::string path = records_path(o, configs.front());
  append_result_records(path, rs);
  print_records(rs);
  std::cout << "appended " << rs.size() << " records to " << path << "\n";
  return rs;
}

std::vector<double> parse_lambdas(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("bad threshold \"" + item + "\"");
    }
  }
  if (out.empty()) throw ConfigError("no thresholds given");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical decomposition of parameter-efficient continual learning, at desk scale"};
  app.require_subcommand(1);

  Common pre_o;
  std::string ckpt_out;
  auto* pre = app.add_subcommand("pretrain", "pretrain the backbone on pretext classes and save a checkpoint");
  add_common(pre, pre_o);
  pre->add_option("--checkpoint", ckpt_out, "where to write it (default: cached path under the output root)");

  Common run_o;
  auto* run = app.add_subcommand("run", "train and score the configured stream for each seed");
  add_common(run, run_o);

  Common abl_o;
  std::string abl_kind = "components";
  auto* abl = app.add_subcommand("ablate", "run an ablation family: components, shared, recovery or pet");
  add_common(abl, abl_o);
  abl->add_option("kind", abl_kind, "ablation family")->check(CLI::IsMember({"components", "shared", "recovery", "pet"}));

  Common aka_o;
  double aka_lambda = -1;
  std::string sweep = "0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0,1.1,1.2";
  bool sweep_only = false;
  auto* aka = app.add_subcommand("aka", "threshold sweep of the pool size, then runs with and without the pool");
  add_common(aka, aka_o);
  aka->add_option("--lambda", aka_lambda, "threshold for the comparison runs (default: config value)");
  aka->add_option("--sweep", sweep, "comma separated thresholds for the pool-size sweep");
  aka->add_flag("--sweep-only", sweep_only, "only run the sweep");

  std::string theorem;
  std::size_t n = 100000;
  std::uint64_t th_seed = 1;
  bool per_sample = false;
  std::string slack_csv;
  auto* th = app.add_subcommand("theory", "Monte-Carlo check of a bound with tightness witnesses");
  th->add_option("--theorem", theorem, "1, 2, 3, dil, til, ood-suff, ood-nec or all")->required();
  th->add_option("--n", n, "instances");
  th->add_option("--seed", th_seed, "seed");
  th->add_flag("--per-sample", per_sample, "take the max inside the expectation");
  th->add_option("--csv", slack_csv, "slack histogram CSV (default: stdout after the summary)");

  std::string matrix_path;
  bool literal = false;
  auto* met = app.add_subcommand("metrics", "FAA, CAA, FFM and ALA of an accuracy matrix CSV");
  met->add_option("matrix", matrix_path, "one stage per line")->required();
  met->add_flag("--literal-ala", literal, "ALA from the entry above the diagonal");

  std::string rec_path, report_dir;
  auto* rep = app.add_subcommand("report", "mean and spread tables plus plot series from result records");
  rep->add_option("records", rec_path, "records (JSON lines)")->required()->check(CLI::ExistingFile);
  rep->add_option("-o,--out", report_dir, "directory for table.csv, series.csv and pool.csv (default: next to records)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pre) {
      ExperimentConfig c = resolve(pre_o);
      if (!c.backbone.checkpoint.empty() && ckpt_out.empty()) ckpt_out = c.backbone.checkpoint;
      c.backbone.checkpoint.clear();
      if (ckpt_out.empty()) {
        ckpt_out = (fs::path(output_root(c)) / ("backbone-" + backbone_hash(c) + ".bin")).string();
      }
      PretrainConfig pc = c.backbone.pretrain;
      for (std::size_t k = c.first_class; k < c.first_class + c.classes; ++k) pc.downstream_classes.push_back(k);
      const Dataset d = make_pretext(c.world, c.backbone.pretext_first_class, c.backbone.pretext_classes,
                                     c.backbone.pretext_per_class, c.backbone.pretext_seed);
      const PretrainResult r = pretrain(d, c.backbone.arch, pc);
      if (fs::path(ckpt_out).has_parent_path()) fs::create_directories(fs::path(ckpt_out).parent_path());
      save_checkpoint(r.checkpoint, ckpt_out);
      std::printf("pretext accuracy %.4f after %zu epochs; checkpoint %s\n", r.train_accuracy, r.epochs_run,
                  ckpt_out.c_str());
    } else if (*run) {
      run_and_store({resolve(run_o)}, run_o);
    } else if (*abl) {
      run_and_store(ablation_configs(resolve(abl_o), parse_ablation(abl_kind)), abl_o);
    } else if (*aka) {
      ExperimentConfig c = resolve(aka_o);
      c.mixed.enabled = true;
      c.hide.shared_pet.technique = Technique::LoRA;
      const BackboneCheckpoint theta = cached_backbone(c);
      const auto lambdas = parse_lambdas(sweep);
      std::string csv = "seed,lambda,task,k\n";
      for (auto seed : c.seeds) {
        const auto k = lambda_sweep(c, seed, theta, lambdas);
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
          std::printf("seed %llu  lambda %.3f  k:", (unsigned long long)seed, lambdas[i]);
          for (std::size_t t = 0; t < k[i].size(); ++t) {
            std::printf(" %zu", k[i][t]);
            std::ostringstream row;
            row.precision(10);
            row << seed << ',' << lambdas[i] << ',' << t + 1 << ',' << k[i][t] << '\n';
            csv += row.str();
          }
          std::printf("\n");
        }
      }
      const fs::path sweep_path = fs::path(output_root(c)) / "lambda_sweep.csv";
      write_file(sweep_path, csv);
      std::cout << "wrote " << sweep_path.string() << "\n";
      if (!sweep_only) {
        run_and_store(aka_configs(c, aka_lambda >= 0 ? aka_lambda : c.aka_cfg.lambda_ood), aka_o);
      }
    } else if (*th) {
      theory::SweepOptions o;
      o.instances = n;
      o.seed = th_seed;
      o.mode = per_sample ? theory::LossMode::PerSampleMax : theory::LossMode::MaxOfExpectations;
      const auto list = theorem == "all" ? theory::all_theorems() : std::vector{theory::parse_theorem(theorem)};
      bool ok = true;
      std::string csv;
      for (auto t : list) {
        const auto r = theory::run_sweep(t, o);
        const auto ws = theory::tightness_witnesses(t);
        bool tight = true;
        for (const auto& w : ws) tight &= w.value <= w.bound * (1 + 1e-12) && w.relative_slack() <= 0.01;
        const bool pass = r.passed() && tight;
        ok &= pass;
        std::printf("%s theorem %s: %zu instances, %zu checks, %zu violations, %zu constructed, witnesses %s\n",
                    pass ? "PASS" : "FAIL", theory::to_string(t).c_str(), r.instances, r.checks, r.violations,
                    r.constructed, tight ? "tight" : "loose");
        for (const auto& w : ws) {
          std::printf("  witness %-28s value %.6g bound %.6g slack %.3g%%\n", w.name.c_str(), w.value, w.bound,
                      100 * w.relative_slack());
        }
        if (r.first_violation) std::printf("  first violation: %s\n", r.first_violation->witness.dump().c_str());
        std::string h = theory::slack_histogram_csv(r);
        if (!csv.empty()) h.erase(0, h.find('\n') + 1);
        csv += h;
      }
      if (slack_csv.empty()) {
        std::cout << csv;
      } else {
        write_file(slack_csv, csv);
      }
      return ok ? 0 : 1;
    } else if (*met) {
      const auto a = parse_matrix_csv(read_file(matrix_path));
      const Metrics m = compute_metrics(a, literal ? AlaMode::Literal : AlaMode::Diagonal);
      nlohmann::json j{{"faa", m.faa}, {"caa", m.caa}, {"ffm", m.ffm}, {"ala", m.ala}, {"aa", m.aa}};
      std::cout << j.dump(2) << "\n";
    } else if (*rep) {
      const auto rs = read_result_records(rec_path);
      const Report r = make_report(rs);
      const std::string dir = report_dir.empty() ? (fs::path(rec_path).parent_path() / "report").string() : report_dir;
      write_report(r, dir);
      std::cout << r.table_csv << "wrote " << dir << "/{table,series,pool}.csv\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
