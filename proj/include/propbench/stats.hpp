#pragma once

#include "propbench/csv.hpp"
#include "propbench/error.hpp"
#include "propbench/json_io.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace propbench::stats {

// Two-sided critical values for the supported confidence levels.
inline double z_for_confidence(double confidence) {
  struct Entry {
    double confidence, z;
  };
  static constexpr Entry table[] = {{0.90, 1.645}, {0.95, 1.96}, {0.99, 2.576}};
  for (const auto& e : table)
    if (std::abs(e.confidence - confidence) < 1e-9) return e.z;
  throw DomainError("unsupported confidence level " + std::to_string(confidence) + " (use 0.90, 0.95 or 0.99)");
}

struct SampleSpec {
  std::optional<std::uint64_t> population; // nullopt: infinite population
  double confidence = 0.95;
  double margin = 0.05;
  double proportion = 0.5;
};

// Cochran's estimate with finite-population correction, rounded up.
inline std::uint64_t sample_size(const SampleSpec& spec) {
  if (!(spec.margin > 0.0 && spec.margin < 1.0)) throw DomainError("margin of error must lie in (0, 1)");
  if (!(spec.proportion >= 0.0 && spec.proportion <= 1.0)) throw DomainError("proportion must lie in [0, 1]");
  if (spec.population && *spec.population == 0) throw DomainError("population must be positive");
  const double z = z_for_confidence(spec.confidence);
  const double n0 = z * z * spec.proportion * (1.0 - spec.proportion) / (spec.margin * spec.margin);
  double n = n0;
  if (spec.population) n = n0 / (1.0 + (n0 - 1.0) / static_cast<double>(*spec.population));
  // Guard against representation error pushing an exact integer up by one.
  const double rounded = std::ceil(n - 1e-9);
  return rounded < 1.0 ? 1 : static_cast<std::uint64_t>(rounded);
}

namespace detail {

constexpr double kGammaEps = 1e-12;
constexpr int kGammaMaxIter = 10000;

// Lower regularized gamma P(a, x) by its power series; valid for x < a + 1.
inline double gamma_p_series(double a, double x) {
  double term = 1.0 / a, sum = term;
  for (int n = 1; n < kGammaMaxIter; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * kGammaEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper regularized gamma Q(a, x) by modified Lentz continued fraction;
// valid for x >= a + 1.
inline double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < kGammaMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kGammaEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

} // namespace detail

inline double regularized_gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw DomainError("regularized gamma requires x >= 0 and a > 0");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
  return detail::gamma_q_fraction(a, x);
}

inline double regularized_gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw DomainError("regularized gamma requires x >= 0 and a > 0");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return detail::gamma_p_series(a, x);
  return 1.0 - detail::gamma_q_fraction(a, x);
}

inline double chi_square_sf(double x, int df) {
  if (df < 1) throw DomainError("degrees of freedom must be at least 1");
  if (x < 0.0 || std::isnan(x)) throw DomainError("chi-square statistic must be non-negative");
  return regularized_gamma_q(0.5 * df, 0.5 * x);
}

inline double chi_square_cdf(double x, int df) {
  if (df < 1) throw DomainError("degrees of freedom must be at least 1");
  if (x < 0.0 || std::isnan(x)) throw DomainError("chi-square statistic must be non-negative");
  return regularized_gamma_p(0.5 * df, 0.5 * x);
}

// Square k x k table of paired counts; cell (i, j) counts items labelled i
// under condition A and j under condition B.
struct ContingencyTable {
  std::vector<std::string> labels;
  std::vector<std::vector<long long>> counts;

  std::size_t k() const { return labels.size(); }

  void validate() const {
    if (counts.size() != labels.size()) throw ShapeMismatchError("table row count must equal label count");
    for (const auto& row : counts) {
      if (row.size() != labels.size()) throw ShapeMismatchError("contingency table must be square");
      for (auto v : row)
        if (v < 0) throw DomainError("contingency counts must be non-negative");
    }
  }

  static ContingencyTable from_counts(std::vector<std::vector<long long>> counts) {
    ContingencyTable t;
    for (std::size_t i = 0; i < counts.size(); ++i) t.labels.push_back("c" + std::to_string(i));
    t.counts = std::move(counts);
    return t;
  }

  // CSV with a header row and a first column of labels.
  static ContingencyTable from_csv(const csv::Table& csvt) {
    ContingencyTable t;
    t.labels.assign(csvt.header.begin() + (csvt.header.empty() ? 0 : 1), csvt.header.end());
    for (std::size_t r = 0; r < csvt.rows.size(); ++r) {
      const auto& row = csvt.rows[r];
      if (row.size() != t.labels.size() + 1) throw ParseError(csvt.row_lines[r], "row width does not match header");
      if (row[0] != t.labels[r]) throw ParseError(csvt.row_lines[r], "row label '" + row[0] + "' does not match header");
      std::vector<long long> counts;
      for (std::size_t j = 1; j < row.size(); ++j) {
        try {
          counts.push_back(std::stoll(row[j]));
        } catch (const std::exception&) {
          throw ParseError(csvt.row_lines[r], "non-integer count '" + row[j] + "'");
        }
      }
      t.counts.push_back(std::move(counts));
    }
    t.validate();
    return t;
  }

  json to_json() const { return {{"labels", labels}, {"counts", counts}}; }
};

struct TestResult {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  std::vector<std::string> dropped_categories;

  json to_json() const {
    return {{"statistic", statistic}, {"df", df}, {"p_value", p_value}, {"dropped_categories", dropped_categories}};
  }
};

// Solves A x = b by Gaussian elimination with partial pivoting.
inline std::vector<double> solve_linear(std::vector<std::vector<double>> a, std::vector<double> b,
                                        double pivot_tolerance = 1e-12) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < pivot_tolerance)
      throw SingularMatrixError("reduced covariance matrix (" + std::to_string(n) + "x" + std::to_string(n) +
                                ") is singular at column " + std::to_string(col));
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

// Stuart-Maxwell test of marginal homogeneity. Categories with an empty row
// and column are dropped, then the last retained category is removed to form
// the reduced (k-1)-dimensional system.
inline TestResult stuart_maxwell(const ContingencyTable& t) {
  t.validate();
  if (t.k() < 2) throw DegenerateTableError("Stuart-Maxwell needs at least two categories");
  std::vector<long long> row(t.k(), 0), col(t.k(), 0);
  for (std::size_t i = 0; i < t.k(); ++i)
    for (std::size_t j = 0; j < t.k(); ++j) {
      row[i] += t.counts[i][j];
      col[j] += t.counts[i][j];
    }
  TestResult result;
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < t.k(); ++i) {
    if (row[i] + col[i] == 0) result.dropped_categories.push_back(t.labels[i]);
    else kept.push_back(i);
  }
  if (kept.size() < 2)
    throw DegenerateTableError("fewer than two categories with observations (" + std::to_string(kept.size()) + ")");
  result.df = static_cast<int>(kept.size()) - 1;
  result.dropped_categories.push_back(t.labels[kept.back()]);
  kept.pop_back();

  const std::size_t m = kept.size();
  std::vector<double> d(m);
  std::vector<std::vector<double>> s(m, std::vector<double>(m));
  bool homogeneous = true;
  for (std::size_t a = 0; a < m; ++a) {
    const auto i = kept[a];
    d[a] = static_cast<double>(row[i] - col[i]);
    if (row[i] != col[i]) homogeneous = false;
    for (std::size_t b = 0; b < m; ++b) {
      const auto j = kept[b];
      s[a][b] = a == b ? static_cast<double>(row[i] + col[i] - 2 * t.counts[i][i])
                       : -static_cast<double>(t.counts[i][j] + t.counts[j][i]);
    }
  }
  // Equal marginals give a zero quadratic form whatever the covariance.
  if (homogeneous) {
    result.statistic = 0.0;
    result.p_value = 1.0;
    return result;
  }
  const auto x = solve_linear(s, d);
  double stat = 0.0;
  for (std::size_t a = 0; a < m; ++a) stat += d[a] * x[a];
  result.statistic = std::max(0.0, stat);
  result.p_value = chi_square_sf(result.statistic, result.df);
  return result;
}

// Cross-tabulates two labelings of the same items.
inline ContingencyTable paired_contingency(const std::map<std::string, std::string>& a,
                                           const std::map<std::string, std::string>& b,
                                           const std::vector<std::string>& labels) {
  if (a.size() != b.size()) throw ItemSetMismatchError("labelings cover different numbers of items");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) index.emplace(labels[i], i);
  ContingencyTable t;
  t.labels = labels;
  t.counts.assign(labels.size(), std::vector<long long>(labels.size(), 0));
  for (const auto& [item, la] : a) {
    auto it = b.find(item);
    if (it == b.end()) throw ItemSetMismatchError("item '" + item + "' missing from second labeling");
    auto ia = index.find(la), ib = index.find(it->second);
    if (ia == index.end()) throw UnknownLabelError("item '" + item + "': label '" + la + "' not in label set");
    if (ib == index.end()) throw UnknownLabelError("item '" + item + "': label '" + it->second + "' not in label set");
    ++t.counts[ia->second][ib->second];
  }
  return t;
}

} // namespace propbench::stats
