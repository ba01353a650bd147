#pragma once

#include <string>
#include <vector>

namespace hidepet {

/// stage[s][i] = accuracy (percent) on task i after learning task s, i <= s.
/// Row s therefore holds s+1 entries.
struct AccuracyMatrix {
  std::vector<std::vector<double>> stage;

  std::size_t tasks() const { return stage.size(); }
  /// A[task][after], both 0-based.
  double at(std::size_t task, std::size_t after) const { return stage.at(after).at(task); }
  /// Throws ContractError unless the lower triangle is complete and in [0, 100].
  void validate() const;
};

/// How ALA reads the matrix: the diagonal A[i][i] for i >= 2, or the literal
/// off-diagonal index (accuracy on task i-1 right after learning task i).
enum class AlaMode { Diagonal, Literal };

struct Metrics {
  double faa = 0;
  double caa = 0;
  double ffm = 0;
  double ala = 0;
  std::vector<double> aa;  // per stage
};

Metrics compute_metrics(const AccuracyMatrix& a, AlaMode ala = AlaMode::Diagonal);

/// One stage per line, comma separated; blank lines and lines starting with '#' are skipped.
AccuracyMatrix parse_matrix_csv(const std::string& text);
std::string to_csv(const AccuracyMatrix& a);

}  // namespace hidepet
