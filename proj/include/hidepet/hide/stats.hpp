#pragma once

#include <string>
#include <vector>

#include "hidepet/numcore/rng.hpp"
#include "hidepet/numcore/tensor.hpp"

namespace hidepet {

/// How class-conditional representation distributions are preserved.
/// None keeps nothing: heads only ever see the current task's data.
enum class RecoveryStrategy { Prototype, Variance, Covariance, MultiCentroid, None };

std::string to_string(RecoveryStrategy s);
RecoveryStrategy parse_recovery(const std::string& s);

struct RepStats {
  RecoveryStrategy strategy = RecoveryStrategy::MultiCentroid;
  std::size_t dim = 0;
  std::vector<std::vector<float>> vectors;  // Prototype: stored reps; MultiCentroid: centroids
  std::vector<float> mean;                  // Variance, Covariance
  std::vector<float> var;                   // Variance
  std::vector<float> cov;                   // Covariance, dim x dim, regularised
  float sigma = 0.f;                        // MultiCentroid noise scale

  /// Stored vector/matrix entries per class (the scalar sigma is not counted).
  std::size_t storage() const;
};

struct StatsOptions {
  std::size_t prototypes = 10;
  std::size_t centroids = 10;
  std::size_t kmeans_iters = 50;
  double cov_ridge = 1e-4;
};

/// Fits one class's statistics from its representations reps[n x d].
/// `warning` (optional) receives a note when MultiCentroid has fewer samples
/// than centroids and falls back to using every sample as a centroid.
RepStats fit_stats(const Tensor<float>& reps, RecoveryStrategy strategy, Rng& rng, const StatsOptions& opt = {},
                   std::string* warning = nullptr);

/// n draws from the fitted distribution, [n x d].
Tensor<float> sample_reps(const RepStats& stats, std::size_t n, Rng& rng);

/// Lloyd's k-means with k-means++ seeding. Stops adding seeds once every point
/// coincides with a chosen centroid, so degenerate data yields fewer centroids.
std::vector<std::vector<float>> kmeans(const Tensor<float>& x, std::size_t k, Rng& rng, std::size_t iters,
                                       std::vector<std::size_t>* assignment = nullptr);

}  // namespace hidepet
