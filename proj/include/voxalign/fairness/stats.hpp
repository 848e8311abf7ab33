#pragma once

// Contingency statistics for the bias suite: odds ratios with exact Fisher
// p-values and the exact Mann-Whitney U test used by the bootstrap protocol.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace voxalign {

// Exposure x outcome counts:
//   a = exposed & outcome,   b = exposed & no outcome,
//   c = unexposed & outcome, d = unexposed & no outcome.
struct ContingencyTable {
  long long a = 0, b = 0, c = 0, d = 0;
  long long n() const { return a + b + c + d; }
};

struct OddsRatioResult {
  double odds_ratio = 0.0;
  double p_two_sided = 1.0;
  bool haldane_corrected = false;  // +0.5 applied to every cell for the OR
};

namespace detail {

inline void check_table(const ContingencyTable& t) {
  if (t.a < 0 || t.b < 0 || t.c < 0 || t.d < 0)
    throw std::invalid_argument("contingency table: negative cell");
  if (t.n() == 0) throw std::invalid_argument("contingency table: empty");
}

inline double lchoose(long long n, long long k) {
  return std::lgamma((double)n + 1.0) - std::lgamma((double)k + 1.0) -
         std::lgamma((double)(n - k) + 1.0);
}

}  // namespace detail

// Two-sided Fisher exact test: total probability of the tables with the
// observed margins that are no more likely than the observed one.
inline double fisher_two_sided_p(const ContingencyTable& t) {
  detail::check_table(t);
  const long long r1 = t.a + t.b, r2 = t.c + t.d;
  const long long c1 = t.a + t.c, n = r1 + r2;
  if (r1 == 0 || r2 == 0 || c1 == 0 || c1 == n) return 1.0;  // single attainable table
  const long long lo = std::max(0LL, c1 - r2), hi = std::min(r1, c1);
  auto log_pmf = [&](long long x) {
    return detail::lchoose(r1, x) + detail::lchoose(r2, c1 - x) - detail::lchoose(n, c1);
  };
  const double lp_obs = log_pmf(t.a);
  // Relative slack keeps mathematically tied tables (symmetric counterparts)
  // inside the sum despite lgamma roundoff.
  const double cutoff = lp_obs + std::log1p(1e-7);
  double p = 0.0;
  for (long long x = lo; x <= hi; ++x) {
    const double lp = log_pmf(x);
    if (lp <= cutoff) p += std::exp(lp);
  }
  return std::min(p, 1.0);
}

// OR = ad/bc. Margins must be positive; a zero cell switches to the
// Haldane-Anscombe +0.5 correction and flags the result. The Fisher p is
// always computed from the uncorrected counts.
inline OddsRatioResult odds_ratio(const ContingencyTable& t) {
  detail::check_table(t);
  if (t.a + t.b == 0 || t.c + t.d == 0 || t.a + t.c == 0 || t.b + t.d == 0)
    throw std::invalid_argument("odds_ratio: zero margin");
  OddsRatioResult r;
  r.haldane_corrected = (t.a == 0 || t.b == 0 || t.c == 0 || t.d == 0);
  if (r.haldane_corrected) {
    r.odds_ratio = (((double)t.a + 0.5) * ((double)t.d + 0.5)) /
                   (((double)t.b + 0.5) * ((double)t.c + 0.5));
  } else {
    r.odds_ratio = ((double)t.a * (double)t.d) / ((double)t.b * (double)t.c);
  }
  r.p_two_sided = fisher_two_sided_p(t);
  return r;
}

// Mann-Whitney U of x against y, ties counted half:
// U = #{(i,j): x_i > y_j} + 0.5 * #{x_i == y_j}.
inline double mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.empty() || y.empty()) throw std::invalid_argument("mann_whitney_u: empty sample");
  double u = 0.0;
  for (double xi : x)
    for (double yj : y) {
      if (xi > yj)
        u += 1.0;
      else if (xi == yj)
        u += 0.5;
    }
  return u;
}

namespace detail {

// Exact null counts of U for sample sizes (n, m): counts[u] arrangements with
// statistic u, total C(n+m, n). Counts stay integer-exact in doubles through
// n = m = 20 and beyond.
inline std::vector<double> mwu_null_counts(std::size_t n, std::size_t m) {
  if (n * m > 10000)
    throw std::invalid_argument("mann_whitney: exact test limited to n*m <= 10000");
  const std::size_t umax = n * m;
  std::vector<std::vector<double>> f(n + 1, std::vector<double>(umax + 1, 0.0));
  for (auto& row : f) row[0] = 1.0;
  for (std::size_t j = 1; j <= m; ++j)
    for (std::size_t i = 1; i <= n; ++i)
      for (std::size_t u = j; u <= umax; ++u) f[i][u] += f[i - 1][u - j];
  return f[n];
}

}  // namespace detail

// One-sided exact p for the alternative "x is stochastically smaller than y":
// P(U <= u_obs) under the exact null distribution of U. The observed statistic
// uses midranks, so identical samples land on the distribution midpoint.
inline double mann_whitney_one_sided_p(const std::vector<double>& x,
                                       const std::vector<double>& y) {
  const double u_obs = mann_whitney_u(x, y);
  const std::vector<double> counts = detail::mwu_null_counts(x.size(), y.size());
  double total = 0.0, tail = 0.0;
  for (std::size_t u = 0; u < counts.size(); ++u) {
    total += counts[u];
    if ((double)u <= u_obs + 1e-9) tail += counts[u];
  }
  return tail / total;
}

}  // namespace voxalign
