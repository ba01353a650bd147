#include "hidepet/bench/report.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace hidepet {

std::string method_key(const ResultRecord& r) {
  std::string k = r.components + "|" + r.pet + "|" + r.shared + "|" + r.recovery + (r.aka ? "|aka" : "");
  if (r.lambda_ood) {
    std::ostringstream os;
    os << "|lambda=" << *r.lambda_ood;
    k += os.str();
  }
  return k;
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                   : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

}  // namespace

std::vector<MethodSummary> summarize(const std::vector<ResultRecord>& records) {
  if (records.empty()) throw ConfigError("report needs at least one record");
  for (const auto& r : records) {
    if (r.scenario != records.front().scenario) {
      throw GroupingError("records mix scenarios " + records.front().scenario + " and " + r.scenario +
                          "; report them separately");
    }
  }
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ResultRecord*>> groups;
  for (const auto& r : records) {
    const std::string k = method_key(r);
    if (!groups.count(k)) order.push_back(k);
    groups[k].push_back(&r);
  }
  std::vector<MethodSummary> out;
  for (const auto& k : order) {
    const auto& g = groups[k];
    MethodSummary m;
    m.method = k;
    m.runs = g.size();
    std::vector<double> faa, caa, ffm, ala, tii;
    for (const auto* r : g) {
      faa.push_back(r->metrics.faa);
      caa.push_back(r->metrics.caa);
      ffm.push_back(r->metrics.ffm);
      ala.push_back(r->metrics.ala);
      if (r->tii_accuracy) tii.push_back(*r->tii_accuracy);
    }
    m.faa_mean = mean_of(faa), m.faa_std = sample_std(faa);
    m.caa_mean = mean_of(caa), m.caa_std = sample_std(caa);
    m.ffm_mean = mean_of(ffm), m.ffm_std = sample_std(ffm);
    m.ala_mean = mean_of(ala), m.ala_std = sample_std(ala);
    m.tii_mean = mean_of(tii);
    m.tii_std = tii.empty() ? std::numeric_limits<double>::quiet_NaN() : sample_std(tii);
    std::size_t stages = g.front()->metrics.aa.size();
    for (const auto* r : g) stages = std::min(stages, r->metrics.aa.size());
    for (std::size_t s = 0; s < stages; ++s) {
      std::vector<double> v;
      for (const auto* r : g) v.push_back(r->metrics.aa[s]);
      m.aa_mean.push_back(mean_of(v));
      m.aa_std.push_back(sample_std(v));
    }
    out.push_back(std::move(m));
  }
  return out;
}

Report make_report(const std::vector<ResultRecord>& records) {
  const auto sums = summarize(records);
  Report rep;
  std::ostringstream t, s, p;
  t.precision(10);
  s.precision(10);
  p.precision(10);
  t << "scenario,method,runs,faa_mean,faa_std,caa_mean,caa_std,ffm_mean,ffm_std,ala_mean,ala_std,tii_mean,tii_std\n";
  s << "method,task,aa_mean,aa_std\n";
  for (const auto& m : sums) {
    t << records.front().scenario << ',' << m.method << ',' << m.runs << ',' << m.faa_mean << ',' << m.faa_std << ','
      << m.caa_mean << ',' << m.caa_std << ',' << m.ffm_mean << ',' << m.ffm_std << ',' << m.ala_mean << ','
      << m.ala_std << ',';
    if (std::isnan(m.tii_mean)) {
      t << ",\n";
    } else {
      t << m.tii_mean << ',' << m.tii_std << '\n';
    }
    for (std::size_t i = 0; i < m.aa_mean.size(); ++i) {
      s << m.method << ',' << i + 1 << ',' << m.aa_mean[i] << ',' << m.aa_std[i] << '\n';
    }
  }
  // pool size against threshold, averaged over seeds
  std::map<double, std::vector<double>> pools;
  for (const auto& r : records) {
    if (r.aka && r.pool_size && r.lambda_ood) pools[*r.lambda_ood].push_back(double(*r.pool_size));
  }
  p << "lambda,k_mean,k_std,runs\n";
  for (const auto& [lambda, ks] : pools) {
    p << lambda << ',' << mean_of(ks) << ',' << sample_std(ks) << ',' << ks.size() << '\n';
  }
  rep.table_csv = t.str();
  rep.series_csv = s.str();
  rep.pool_csv = p.str();
  return rep;
}

void write_report(const Report& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : {std::pair{"table.csv", &r.table_csv}, std::pair{"series.csv", &r.series_csv},
                                   std::pair{"pool.csv", &r.pool_csv}}) {
    std::ofstream out(std::filesystem::path(dir) / name);
    if (!out) throw ConfigError("cannot write " + (std::filesystem::path(dir) / name).string());
    out << *text;
  }
}

std::string pool_sweep_csv(const std::vector<double>& lambdas, const std::vector<std::vector<std::size_t>>& k) {
  if (lambdas.size() != k.size()) throw ContractError("one pool-size series per lambda");
  std::ostringstream os;
  os.precision(10);
  os << "lambda,task,k\n";
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    for (std::size_t t = 0; t < k[i].size(); ++t) os << lambdas[i] << ',' << t + 1 << ',' << k[i][t] << '\n';
  }
  return os.str();
}

}  // namespace hidepet
