#include "hidepet/numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace hidepet {

namespace {

double evaluate(const LossBuilder& f) {
  Tape<double> tape;
  Var loss = f(tape);
  const auto& v = tape.value(loss);
  if (v.numel() != 1) throw ContractError("finite_diff_check: loss is not scalar");
  return v[0];
}

}  // namespace

std::vector<GradReport> finite_diff_check(const LossBuilder& f, const std::vector<NamedParam>& params,
                                          double eps, std::size_t max_entries, double floor) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ContractError("finite_diff_check: eps must lie in [1e-7, 1e-3], got " + std::to_string(eps));
  }
  const double base1 = evaluate(f);
  const double base2 = evaluate(f);
  if (std::memcmp(&base1, &base2, sizeof(double)) != 0) {
    throw ContractError("finite_diff_check: loss is not deterministic across two evaluations");
  }

  for (const auto& p : params) {
    p.tensor->set_requires_grad(true);
    p.tensor->zero_grad();
  }
  {
    Tape<double> tape;
    Var loss = f(tape);
    tape.backward(loss);
  }

  std::vector<GradReport> reports;
  for (const auto& p : params) {
    GradReport r;
    r.param_name = p.name;
    Tensor<double>& t = *p.tensor;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    const std::size_t n = t.numel();
    const std::size_t count = (max_entries == 0 || max_entries >= n) ? n : max_entries;
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t i = count == n ? c : (c * n) / count;
      const double orig = t[i];
      t[i] = orig + eps;
      const double fp = evaluate(f);
      t[i] = orig - eps;
      const double fm = evaluate(f);
      t[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      r.max_abs_err = std::max(r.max_abs_err, abs_err);
      r.max_rel_err = std::max(r.max_rel_err, abs_err / denom);
    }
    reports.push_back(r);
  }
  return reports;
}

}  // namespace hidepet
