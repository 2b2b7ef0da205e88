#include "tokmark/numstats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tokmark::numstats {

namespace {

// Continued fraction for I_x(a,b), modified Lentz.
double beta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-14;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw std::runtime_error("reg_incomplete_beta: continued fraction did not converge");
}

} // namespace

double reg_incomplete_beta(double x, double a, double b) {
    if (!(a > 0.0) || !(b > 0.0))
        throw std::invalid_argument("reg_incomplete_beta: a and b must be positive");
    if (x < 0.0 || x > 1.0)
        throw std::invalid_argument("reg_incomplete_beta: x must be in [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;

    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * beta_cf(a, b, x) / a;
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double log_binom(int64_t n, int64_t k) {
    if (k < 0 || k > n) return -std::numeric_limits<double>::infinity();
    return std::lgamma(double(n) + 1.0) - std::lgamma(double(k) + 1.0) -
           std::lgamma(double(n - k) + 1.0);
}

double binom_tail(int64_t s, int64_t n, double p) {
    if (n < 0) throw std::invalid_argument("binom_tail: n must be non-negative");
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("binom_tail: p must be in (0,1)");
    if (s > n) throw std::invalid_argument("binom_tail: s exceeds n");
    if (s <= 0) return 1.0;
    // Prob(X >= s) = I_p(s, n - s + 1)
    return reg_incomplete_beta(p, double(s), double(n - s + 1));
}

double binom_tail_exact(int64_t s, int64_t n, double p) {
    if (n < 0 || n > 10000)
        throw std::invalid_argument("binom_tail_exact: n out of supported range");
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("binom_tail_exact: p must be in (0,1)");
    if (s > n) throw std::invalid_argument("binom_tail_exact: s exceeds n");
    if (s <= 0) return 1.0;

    const double lp = std::log(p);
    const double lq = std::log1p(-p);
    // Sum the smaller of the two tails, in log space against its max term.
    const bool upper = (n - s + 1) <= s; // upper tail has fewer-or-equal terms
    const int64_t lo = upper ? s : 0;
    const int64_t hi = upper ? n : s - 1;
    long double max_term = -1e4900L;
    std::vector<double> logs;
    logs.reserve(size_t(hi - lo + 1));
    for (int64_t x = lo; x <= hi; ++x) {
        const double lt = log_binom(n, x) + double(x) * lp + double(n - x) * lq;
        logs.push_back(lt);
        if ((long double)lt > max_term) max_term = lt;
    }
    long double acc = 0.0L;
    for (double lt : logs) acc += expl((long double)lt - max_term);
    const long double tail = expl(max_term) * acc;
    return upper ? double(tail) : double(1.0L - tail);
}

double hypergeom_pmf(int64_t g, int64_t N, int64_t G, int64_t n) {
    if (N < 0 || G < 0 || n < 0 || G > N || n > N)
        throw std::invalid_argument("hypergeom_pmf: invalid population parameters");
    if (g < 0 || g > std::min(G, n) || n - g > N - G) return 0.0;
    return std::exp(log_binom(G, g) + log_binom(N - G, n - g) - log_binom(N, n));
}

double ks_uniform(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("ks_uniform: empty input");
    std::sort(values.begin(), values.end());
    const double n = double(values.size());
    double d = 0.0;
    for (size_t i = 0; i < values.size(); ++i) {
        const double x = values[i];
        d = std::max(d, std::max((double(i) + 1.0) / n - x, x - double(i) / n));
    }
    return d;
}

double ks_uniform_plus(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("ks_uniform_plus: empty input");
    std::sort(values.begin(), values.end());
    const double n = double(values.size());
    double d = 0.0;
    for (size_t i = 0; i < values.size(); ++i)
        d = std::max(d, (double(i) + 1.0) / n - values[i]);
    return d;
}

double tpr_at_fpr(const std::vector<double>& watermarked_p,
                  const std::vector<double>& null_p, double fpr) {
    if (!(fpr > 0.0 && fpr < 1.0))
        throw std::invalid_argument("tpr_at_fpr: fpr must be in (0,1)");
    if (watermarked_p.empty())
        throw std::invalid_argument("tpr_at_fpr: empty watermarked sample");
    double threshold = fpr;
    if (!null_p.empty()) {
        std::vector<double> sorted(null_p);
        std::sort(sorted.begin(), sorted.end());
        size_t idx = size_t(fpr * double(sorted.size()));
        if (idx >= sorted.size()) idx = sorted.size() - 1;
        threshold = sorted[idx];
    }
    size_t hits = 0;
    for (double p : watermarked_p)
        if (p < threshold) ++hits;
    return double(hits) / double(watermarked_p.size());
}

} // namespace tokmark::numstats
