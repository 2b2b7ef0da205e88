#include <doctest.h>

#include <cmath>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "tokmark/numstats.hpp"
#include "tokmark/rng.hpp"

using namespace tokmark;
namespace ns = tokmark::numstats;

namespace {

// Independent oracle: power series for I_x(a,b),
//   I_x(a,b) = x^a (1-x)^b / (a B(a,b)) * sum_n ((a+b)_n / (a+1)_n) x^n,
// with the symmetry reduction applied for fast convergence.
long double beta_series(long double x, long double a, long double b) {
    if (x == 0.0L) return 0.0L;
    if (x == 1.0L) return 1.0L;
    if (x > (a + 1.0L) / (a + b + 2.0L))
        return 1.0L - beta_series(1.0L - x, b, a);
    long double term = 1.0L, sum = 1.0L;
    for (int n = 0; n < 100000; ++n) {
        term *= (a + b + n) / (a + 1.0L + n) * x;
        sum += term;
        if (term < 1e-20L * sum) break;
    }
    const long double log_front = lgammal(a + b) - lgammal(a) - lgammal(b) +
                                  a * logl(x) + b * logl(1.0L - x);
    return expl(log_front) * sum / a;
}

boost::multiprecision::cpp_int big_choose(int64_t n, int64_t k) {
    boost::multiprecision::cpp_int r = 1;
    for (int64_t i = 0; i < k; ++i) {
        r *= n - i;
        r /= i + 1;
    }
    return r;
}

} // namespace

TEST_CASE("reg_incomplete_beta basic identities") {
    CHECK(ns::reg_incomplete_beta(0.0, 1.0, 1.0) == 0.0);
    CHECK(ns::reg_incomplete_beta(1.0, 1.0, 1.0) == 1.0);
    CHECK(ns::reg_incomplete_beta(0.3, 1.0, 1.0) == doctest::Approx(0.3).epsilon(1e-14));
    for (double a : {1.0, 2.0, 5.0})
        CHECK(ns::reg_incomplete_beta(0.5, a, a) == doctest::Approx(0.5).epsilon(1e-13));
}

TEST_CASE("reg_incomplete_beta matches the series oracle for a,b <= 200") {
    Rng rng(42);
    for (int i = 0; i < 400; ++i) {
        const double a = 0.5 + rng.uniform() * 199.5;
        const double b = 0.5 + rng.uniform() * 199.5;
        const double x = rng.uniform();
        const double got = ns::reg_incomplete_beta(x, a, b);
        const double want = double(beta_series(x, a, b));
        CHECK(std::fabs(got - want) <= 1e-12);
    }
}

TEST_CASE("reg_incomplete_beta symmetry") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const double a = 0.2 + rng.uniform() * 100.0;
        const double b = 0.2 + rng.uniform() * 100.0;
        const double x = rng.uniform();
        const double s = ns::reg_incomplete_beta(x, a, b) +
                         ns::reg_incomplete_beta(1.0 - x, b, a);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("reg_incomplete_beta rejects bad domains") {
    CHECK_THROWS_AS(ns::reg_incomplete_beta(-0.1, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(ns::reg_incomplete_beta(1.1, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(ns::reg_incomplete_beta(0.5, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(ns::reg_incomplete_beta(0.5, 1, -2.0), std::invalid_argument);
}

TEST_CASE("binom_tail_exact reference values") {
    CHECK(ns::binom_tail_exact(0, 10, 0.5) == 1.0);
    CHECK(ns::binom_tail_exact(10, 10, 0.5) ==
          doctest::Approx(std::pow(2.0, -10)).epsilon(1e-13));
    // 4*0.25^3*0.75 + 0.25^4, checked by enumerating the 2^8 weighted outcomes
    CHECK(ns::binom_tail_exact(3, 4, 0.25) == doctest::Approx(0.05078125).epsilon(1e-13));
}

TEST_CASE("beta route equals exact summation: I_0.25(30,71)") {
    const double lhs = ns::reg_incomplete_beta(0.25, 30, 71);
    const double rhs = ns::binom_tail_exact(30, 100, 0.25);
    CHECK(std::fabs(lhs - rhs) <= 1e-12);
}

TEST_CASE("binom_tail agrees with exact summation over a grid") {
    for (double p : {0.1, 0.25, 0.5, 0.9})
        for (int64_t n : {1, 5, 17, 64, 200, 1000})
            for (int64_t s = 0; s <= n; s += std::max<int64_t>(1, n / 7)) {
                const double a = ns::binom_tail(s, n, p);
                const double b = ns::binom_tail_exact(s, n, p);
                CHECK(std::fabs(a - b) <= 1e-10 * std::max(1.0, std::fabs(b)));
            }
}

TEST_CASE("hypergeom_pmf degenerate and normalization cases") {
    // All-green population: exactly n greens drawn, always.
    CHECK(ns::hypergeom_pmf(12, 192, 192, 12) == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(ns::hypergeom_pmf(11, 192, 192, 12) == 0.0);

    double total = 0.0;
    for (int g = 0; g <= 12; ++g) total += ns::hypergeom_pmf(g, 192, 48, 12);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("hypergeom_pmf matches exact integer combinatorics") {
    using boost::multiprecision::cpp_int;
    using boost::multiprecision::cpp_rational;
    for (int g = 0; g <= 12; ++g) {
        const cpp_rational exact =
            cpp_rational(big_choose(48, g) * big_choose(144, 12 - g), big_choose(192, 12));
        const double want = exact.convert_to<double>();
        CHECK(ns::hypergeom_pmf(g, 192, 48, 12) ==
              doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("ks_uniform known values") {
    CHECK(ns::ks_uniform({0.5}) == doctest::Approx(0.5));
    std::vector<double> grid;
    const int n = 100;
    for (int i = 1; i <= n; ++i) grid.push_back(double(i) / n);
    CHECK(ns::ks_uniform(grid) <= 1.0 / n + 1e-12);
    CHECK_THROWS_AS(ns::ks_uniform({}), std::invalid_argument);
}

TEST_CASE("ks_uniform calibration on true uniform draws") {
    int pass = 0;
    for (int seed = 0; seed < 100; ++seed) {
        Rng rng(1000 + uint64_t(seed));
        std::vector<double> v(5000);
        for (auto& x : v) x = rng.uniform();
        if (ns::ks_uniform(v) < 0.025) ++pass;
    }
    CHECK(pass >= 99);
}

TEST_CASE("ks_uniform_plus is small for conservative samples") {
    // p-values pushed toward 1 are conservative: one-sided statistic stays
    // near zero while the two-sided one blows up.
    Rng rng(5);
    std::vector<double> v(5000);
    for (auto& x : v) x = 0.5 + 0.5 * rng.uniform();
    CHECK(ns::ks_uniform_plus(v) < 0.01);
    CHECK(ns::ks_uniform(std::move(v)) > 0.4);
}

TEST_CASE("tpr_at_fpr analytic threshold") {
    std::vector<double> strong(100, 1e-9);
    CHECK(ns::tpr_at_fpr(strong, {}, 0.01) == 1.0);
    CHECK_THROWS_AS(ns::tpr_at_fpr(strong, {}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(ns::tpr_at_fpr({}, {}, 0.01), std::invalid_argument);

    // Watermarked sample drawn from the null: TPR is close to the FPR.
    double total = 0.0;
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(99 + uint64_t(seed));
        std::vector<double> null_like(20000);
        for (auto& x : null_like) x = rng.uniform();
        total += ns::tpr_at_fpr(null_like, {}, 0.01);
    }
    CHECK(total / 10.0 == doctest::Approx(0.01).epsilon(0.5));
}
