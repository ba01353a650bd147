#include "hidepet/bench/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "hidepet/numcore/error.hpp"

namespace hidepet {

void AccuracyMatrix::validate() const {
  if (stage.empty()) throw ContractError("accuracy matrix is empty");
  for (std::size_t s = 0; s < stage.size(); ++s) {
    if (stage[s].size() != s + 1) {
      throw ContractError("stage " + std::to_string(s + 1) + " has " + std::to_string(stage[s].size()) +
                          " entries, expected " + std::to_string(s + 1));
    }
    for (double v : stage[s]) {
      if (!(v >= 0.0 && v <= 100.0)) throw ContractError("accuracy entry outside [0, 100]");
    }
  }
}

Metrics compute_metrics(const AccuracyMatrix& a, AlaMode ala) {
  a.validate();
  const std::size_t t = a.tasks();
  Metrics m;
  for (const auto& row : a.stage) {
    double s = 0;
    for (double v : row) s += v;
    m.aa.push_back(s / double(row.size()));
  }
  m.faa = m.aa.back();
  double c = 0;
  for (double v : m.aa) c += v;
  m.caa = c / double(t);
  if (t > 1) {
    double f = 0;
    for (std::size_t i = 0; i + 1 < t; ++i) {
      double best = a.at(i, i);
      for (std::size_t s = i + 1; s + 1 < t; ++s) best = std::max(best, a.at(i, s));
      f += best - a.at(i, t - 1);
    }
    m.ffm = f / double(t - 1);
    double l = 0;
    for (std::size_t i = 1; i < t; ++i) l += ala == AlaMode::Diagonal ? a.at(i, i) : a.at(i - 1, i);
    m.ala = l / double(t - 1);
  } else {
    // a single task has nothing to forget; its learning accuracy is A[1][1]
    m.ffm = 0;
    m.ala = a.at(0, 0);
  }
  return m;
}

AccuracyMatrix parse_matrix_csv(const std::string& text) {
  AccuracyMatrix a;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0, offset = 0, next = 0;
  while (std::getline(in, line)) {
    ++lineno;
    offset = next;
    next += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t end = line.find(',', pos);
      if (end == std::string::npos) end = line.size();
      std::string cell = line.substr(pos, end - pos);
      cell.erase(0, cell.find_first_not_of(" \t"));
      cell.erase(cell.find_last_not_of(" \t") + 1);
      double v = 0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size() || cell.empty()) {
        throw FormatError("line " + std::to_string(lineno) + ": \"" + cell + "\" is not a number", offset + pos);
      }
      row.push_back(v);
      pos = end + 1;
    }
    a.stage.push_back(std::move(row));
  }
  a.validate();
  return a;
}

std::string to_csv(const AccuracyMatrix& a) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& row : a.stage) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << '\n';
  }
  return os.str();
}

}  // namespace hidepet
