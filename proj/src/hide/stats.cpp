#include "hidepet/hide/stats.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace hidepet {

std::string to_string(RecoveryStrategy s) {
  switch (s) {
    case RecoveryStrategy::Prototype: return "Prototype";
    case RecoveryStrategy::Variance: return "Variance";
    case RecoveryStrategy::Covariance: return "Covariance";
    case RecoveryStrategy::MultiCentroid: return "MultiCentroid";
    case RecoveryStrategy::None: return "None";
  }
  return "?";
}

RecoveryStrategy parse_recovery(const std::string& s) {
  for (auto r : {RecoveryStrategy::Prototype, RecoveryStrategy::Variance, RecoveryStrategy::Covariance,
                 RecoveryStrategy::MultiCentroid, RecoveryStrategy::None}) {
    if (s == to_string(r)) return r;
  }
  throw ConfigError("unknown recovery strategy \"" + s + "\"");
}

std::size_t RepStats::storage() const {
  switch (strategy) {
    case RecoveryStrategy::Prototype:
    case RecoveryStrategy::MultiCentroid: return vectors.size() * dim;
    case RecoveryStrategy::Variance: return mean.size() + var.size();
    case RecoveryStrategy::Covariance: return mean.size() + cov.size();
    case RecoveryStrategy::None: return 0;
  }
  return 0;
}

namespace {

double sqdist(std::span<const float> a, const std::vector<float>& b) {
  double s = 0;
  for (std::size_t j = 0; j < b.size(); ++j) {
    const double d = double(a[j]) - b[j];
    s += d * d;
  }
  return s;
}

std::vector<float> row_vec(const Tensor<float>& x, std::size_t i) {
  auto r = x.row(i);
  return {r.begin(), r.end()};
}

}  // namespace

std::vector<std::vector<float>> kmeans(const Tensor<float>& x, std::size_t k, Rng& rng, std::size_t iters,
                                       std::vector<std::size_t>* assignment) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<std::vector<float>> c;
  if (n == 0 || k == 0) return c;
  c.push_back(row_vec(x, rng.below(n)));
  std::vector<double> best(n);
  for (std::size_t i = 0; i < n; ++i) best[i] = sqdist(x.row(i), c[0]);
  while (c.size() < k) {
    const double total = std::accumulate(best.begin(), best.end(), 0.0);
    if (total <= 0.0) break;
    double u = rng.uniform() * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (best[i] <= 0.0) continue;
      if (u < best[i]) {
        pick = i;
        break;
      }
      u -= best[i];
    }
    while (best[pick] <= 0.0) --pick;  // guard against rounding at the tail
    c.push_back(row_vec(x, pick));
    for (std::size_t i = 0; i < n; ++i) best[i] = std::min(best[i], sqdist(x.row(i), c.back()));
  }
  std::vector<std::size_t> assign(n, 0);
  for (std::size_t it = 0; it < iters; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      double bd = sqdist(x.row(i), c[0]);
      for (std::size_t j = 1; j < c.size(); ++j) {
        const double dj = sqdist(x.row(i), c[j]);
        if (dj < bd) {
          bd = dj;
          arg = j;
        }
      }
      if (assign[i] != arg) changed = true;
      assign[i] = arg;
    }
    if (!changed) break;
    std::vector<std::vector<double>> sum(c.size(), std::vector<double>(d, 0.0));
    std::vector<std::size_t> cnt(c.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++cnt[assign[i]];
      for (std::size_t j = 0; j < d; ++j) sum[assign[i]][j] += x.at(i, j);
    }
    for (std::size_t j = 0; j < c.size(); ++j) {
      if (!cnt[j]) continue;  // empty cluster keeps its position
      for (std::size_t q = 0; q < d; ++q) c[j][q] = static_cast<float>(sum[j][q] / double(cnt[j]));
    }
  }
  if (assignment) *assignment = std::move(assign);
  return c;
}

RepStats fit_stats(const Tensor<float>& reps, RecoveryStrategy strategy, Rng& rng, const StatsOptions& opt,
                   std::string* warning) {
  const std::size_t n = reps.rows(), d = reps.cols();
  if (n == 0) throw ContractError("fit_stats: no representations");
  RepStats s;
  s.strategy = strategy;
  s.dim = d;
  switch (strategy) {
    case RecoveryStrategy::None:
      break;
    case RecoveryStrategy::Prototype: {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      rng.shuffle(std::span(idx));
      for (std::size_t i = 0; i < std::min(opt.prototypes, n); ++i) s.vectors.push_back(row_vec(reps, idx[i]));
      break;
    }
    case RecoveryStrategy::Variance:
    case RecoveryStrategy::Covariance: {
      std::vector<double> mean(d, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += reps.at(i, j);
      for (auto& m : mean) m /= double(n);
      s.mean.assign(mean.begin(), mean.end());
      if (strategy == RecoveryStrategy::Variance) {
        std::vector<double> var(d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) var[j] += (reps.at(i, j) - mean[j]) * (reps.at(i, j) - mean[j]);
        for (auto& v : var) s.var.push_back(static_cast<float>(v / double(n)));
      } else {
        s.cov.assign(d * d, 0.f);
        for (std::size_t a = 0; a < d; ++a)
          for (std::size_t b = a; b < d; ++b) {
            double c = 0;
            for (std::size_t i = 0; i < n; ++i) c += (reps.at(i, a) - mean[a]) * (reps.at(i, b) - mean[b]);
            c /= double(n);
            if (a == b) c += opt.cov_ridge;
            s.cov[a * d + b] = s.cov[b * d + a] = static_cast<float>(c);
          }
      }
      break;
    }
    case RecoveryStrategy::MultiCentroid: {
      std::vector<std::size_t> assign;
      if (n < opt.centroids) {
        if (warning) {
          *warning = "only " + std::to_string(n) + " samples for " + std::to_string(opt.centroids) +
                     " centroids; using every sample as a centroid";
        }
        for (std::size_t i = 0; i < n; ++i) s.vectors.push_back(row_vec(reps, i));
        assign.resize(n);
        std::iota(assign.begin(), assign.end(), 0);
      } else {
        s.vectors = kmeans(reps, opt.centroids, rng, opt.kmeans_iters, &assign);
      }
      double ss = 0;
      for (std::size_t i = 0; i < n; ++i) ss += sqdist(reps.row(i), s.vectors[assign[i]]);
      s.sigma = static_cast<float>(std::sqrt(ss / double(n)) / std::sqrt(double(d)));
      break;
    }
  }
  return s;
}

Tensor<float> sample_reps(const RepStats& s, std::size_t n, Rng& rng) {
  const std::size_t d = s.dim;
  Tensor<float> out({n, d});
  switch (s.strategy) {
    case RecoveryStrategy::None:
      throw StateError("no statistics were kept (recovery strategy None)");
    case RecoveryStrategy::Prototype:
    case RecoveryStrategy::MultiCentroid:
      if (s.vectors.empty()) throw StateError("empty statistics");
      for (std::size_t i = 0; i < n; ++i) {
        const auto& v = s.vectors[rng.below(s.vectors.size())];
        auto o = out.row(i);
        for (std::size_t j = 0; j < d; ++j) {
          o[j] = v[j];
          if (s.strategy == RecoveryStrategy::MultiCentroid && s.sigma > 0.f)
            o[j] += static_cast<float>(s.sigma * rng.normal());
        }
      }
      break;
    case RecoveryStrategy::Variance:
      for (std::size_t i = 0; i < n; ++i) {
        auto o = out.row(i);
        for (std::size_t j = 0; j < d; ++j) {
          o[j] = s.mean[j];
          if (s.var[j] > 0.f) o[j] += static_cast<float>(std::sqrt(double(s.var[j])) * rng.normal());
        }
      }
      break;
    case RecoveryStrategy::Covariance: {
      Eigen::MatrixXd cov(d, d);
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) cov(a, b) = s.cov[a * d + b];
      Eigen::LLT<Eigen::MatrixXd> llt(cov);
      if (llt.info() != Eigen::Success) throw NumericError("covariance is not positive definite");
      const Eigen::MatrixXd L = llt.matrixL();
      Eigen::VectorXd z(d);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) z(j) = rng.normal();
        const Eigen::VectorXd x = L * z;
        auto o = out.row(i);
        for (std::size_t j = 0; j < d; ++j) o[j] = static_cast<float>(s.mean[j] + x(j));
      }
      break;
    }
  }
  return out;
}

}  // namespace hidepet
