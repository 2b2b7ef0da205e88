#pragma once

#include <cstdint>
#include <vector>

namespace tokmark::numstats {

/// Regularized incomplete beta function I_x(a, b).
/// Continued-fraction (modified Lentz) evaluation with the usual symmetry
/// switch at x < (a+1)/(a+b+2). Tolerance 1e-14, at most 300 iterations.
double reg_incomplete_beta(double x, double a, double b);

/// log C(n, k) via lgamma.
double log_binom(int64_t n, int64_t k);

/// Upper binomial tail Prob(X >= s) for X ~ Binomial(n, p), evaluated through
/// the incomplete beta identity. s <= 0 returns exactly 1.
double binom_tail(int64_t s, int64_t n, double p);

/// Reference oracle: the same tail by direct summation of all terms, each
/// computed in log space and accumulated in extended precision. n <= 10000.
double binom_tail_exact(int64_t s, int64_t n, double p);

/// Hypergeometric PMF: C(G,g) * C(N-G, n-g) / C(N,n).
double hypergeom_pmf(int64_t g, int64_t N, int64_t G, int64_t n);

/// Two-sided Kolmogorov-Smirnov statistic against the uniform CDF on [0,1]:
/// sup_t |F_n(t) - t|. Input values need not be pre-sorted.
double ks_uniform(std::vector<double> values);

/// One-sided variant: sup_t (F_n(t) - t), the anti-conservative excess of the
/// empirical CDF over the uniform CDF. This is the statistic the H0 soundness
/// suites use: a sound (possibly conservative) test keeps it near zero, while
/// a test whose p-values pile up near 0 drives it toward 1.
double ks_uniform_plus(std::vector<double> values);

/// TPR at a fixed FPR. When null_p is empty the threshold is the analytic
/// uniform quantile (threshold = fpr); otherwise it is the empirical
/// fpr-quantile of null_p. Returns the fraction of watermarked_p strictly
/// below the threshold.
double tpr_at_fpr(const std::vector<double>& watermarked_p,
                  const std::vector<double>& null_p, double fpr);

} // namespace tokmark::numstats
