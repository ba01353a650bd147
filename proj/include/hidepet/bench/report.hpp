#pragma once

#include <string>
#include <vector>

#include "hidepet/bench/experiment.hpp"

namespace hidepet {

/// A method is everything in a record except its seed.
std::string method_key(const ResultRecord& r);

struct MethodSummary {
  std::string method;
  std::size_t runs = 0;
  double faa_mean = 0, faa_std = 0;
  double caa_mean = 0, caa_std = 0;
  double ffm_mean = 0, ffm_std = 0;
  double ala_mean = 0, ala_std = 0;
  double tii_mean = 0, tii_std = 0;  // NaN when no record has a TII accuracy
  std::vector<double> aa_mean, aa_std;
};

/// Sample standard deviation (n - 1); zero for a single value.
double sample_std(const std::vector<double>& v);

/// Per-method means and spreads over seeds, in order of first appearance.
/// Records from different scenarios raise GroupingError.
std::vector<MethodSummary> summarize(const std::vector<ResultRecord>& records);

struct Report {
  std::string table_csv;   // one row per method
  std::string series_csv;  // accuracy vs task index
  std::string pool_csv;    // pool size k vs lambda (AKA records only)
};

Report make_report(const std::vector<ResultRecord>& records);
/// Writes table.csv, series.csv and pool.csv into `dir`.
void write_report(const Report& r, const std::string& dir);

/// "lambda,task,k" rows from a pool-size sweep.
std::string pool_sweep_csv(const std::vector<double>& lambdas, const std::vector<std::vector<std::size_t>>& k);

}  // namespace hidepet
