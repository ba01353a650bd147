#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hidepet/numcore/tape.hpp"

namespace hidepet {

struct GradReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string param_name;
};

struct NamedParam {
  std::string name;
  Tensor<double>* tensor = nullptr;
};

/// Records a scalar loss on the tape using the supplied parameters.
using LossBuilder = std::function<Var(Tape<double>&)>;

/// Compares tape gradients with central differences (f(p+eps)-f(p-eps))/(2 eps)
/// for every entry of every parameter (or `max_entries` evenly spaced entries
/// when nonzero). The relative error of one entry is |a-n| / max(|a|, |n|, floor).
std::vector<GradReport> finite_diff_check(const LossBuilder& f, const std::vector<NamedParam>& params,
                                          double eps, std::size_t max_entries = 0,
                                          double floor = 1e-6);

}  // namespace hidepet
