#include "seqchess/stats.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/normal.hpp>

namespace seqchess::stats {

namespace {

constexpr std::uint64_t kExactBinomialLimit = 10000;
constexpr std::size_t kExactWilcoxonLimit = 25;

double log_binomial_pmf(std::uint64_t i, std::uint64_t n, double p) {
    const double di = static_cast<double>(i), dn = static_cast<double>(n);
    double out = std::lgamma(dn + 1) - std::lgamma(di + 1) - std::lgamma(dn - di + 1);
    if (i > 0) out += di * std::log(p);
    if (i < n) out += (dn - di) * std::log1p(-p);
    return out;
}

}  // namespace

const char* to_string(Method m) { return m == Method::Exact ? "exact" : "normal-approx"; }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
    if (p <= 0.0 || p >= 1.0) throw std::invalid_argument("normal_quantile: p must be in (0,1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

TestResult binomial_two_sided(std::uint64_t k, std::uint64_t n, double p0) {
    if (n == 0) throw std::invalid_argument("binomial test needs n >= 1");
    if (k > n) throw std::invalid_argument("binomial test needs k <= n");
    if (!(p0 > 0.0 && p0 < 1.0)) throw std::invalid_argument("binomial test needs p0 in (0,1)");
    if (n > kExactBinomialLimit) return binomial_normal_approx(k, n, p0);

    // Relative slack so that mirror outcomes with mathematically equal mass
    // are not split by rounding.
    const double observed = log_binomial_pmf(k, n, p0);
    const double cutoff = observed + 1e-7;
    double p = 0.0;
    for (std::uint64_t i = 0; i <= n; ++i) {
        const double lp = log_binomial_pmf(i, n, p0);
        if (lp <= cutoff) p += std::exp(lp);
    }
    return {static_cast<double>(k), std::min(1.0, p), Method::Exact, n};
}

TestResult binomial_normal_approx(std::uint64_t k, std::uint64_t n, double p0) {
    if (n == 0) throw std::invalid_argument("binomial test needs n >= 1");
    const double mean = static_cast<double>(n) * p0;
    const double sd = std::sqrt(static_cast<double>(n) * p0 * (1.0 - p0));
    const double dev = std::max(0.0, std::abs(static_cast<double>(k) - mean) - 0.5);
    const double p = std::erfc(dev / sd / std::sqrt(2.0));
    return {static_cast<double>(k), std::min(1.0, p), Method::NormalApprox, n};
}

Interval wilson_interval(std::uint64_t k, std::uint64_t n, double level) {
    if (n == 0) throw std::invalid_argument("wilson interval needs n >= 1");
    if (k > n) throw std::invalid_argument("wilson interval needs k <= n");
    const double z = normal_quantile(0.5 + level / 2.0);
    const double dn = static_cast<double>(n);
    const double phat = static_cast<double>(k) / dn;
    const double denom = 1.0 + z * z / dn;
    const double centre = (phat + z * z / (2.0 * dn)) / denom;
    const double half = z * std::sqrt(phat * (1.0 - phat) / dn + z * z / (4.0 * dn * dn)) / denom;
    Interval out{std::max(0.0, centre - half), std::min(1.0, centre + half)};
    if (k == 0) out.lo = 0.0;
    if (k == n) out.hi = 1.0;
    return out;
}

TestResult wilcoxon_signed_rank(std::span<const double> differences) {
    std::vector<double> d;
    d.reserve(differences.size());
    for (double x : differences)
        if (x != 0.0) d.push_back(x);
    if (d.empty()) throw std::invalid_argument("wilcoxon signed-rank needs at least one nonzero difference");
    const std::size_t n = d.size();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });

    // Doubled ranks stay integral under tie averaging.
    std::vector<int> rank2(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        const int r2 = static_cast<int>(i + 1 + j + 1);  // 2 * average of ranks i+1..j+1
        for (std::size_t t = i; t <= j; ++t) rank2[order[t]] = r2;
        const double tcount = static_cast<double>(j - i + 1);
        tie_term += tcount * tcount * tcount - tcount;
        i = j + 1;
    }
    int w2 = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0) w2 += rank2[i];
    const double w_plus = w2 / 2.0;

    if (n <= kExactWilcoxonLimit) {
        const int total = std::accumulate(rank2.begin(), rank2.end(), 0);
        std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
        counts[0] = 1.0;
        for (int r : rank2)
            for (int s = total; s >= r; --s) counts[static_cast<std::size_t>(s)] += counts[static_cast<std::size_t>(s - r)];
        const double all = std::ldexp(1.0, static_cast<int>(n));
        double lower = 0.0, upper = 0.0;
        for (int s = 0; s <= total; ++s) {
            if (s <= w2) lower += counts[static_cast<std::size_t>(s)];
            if (s >= w2) upper += counts[static_cast<std::size_t>(s)];
        }
        const double p = std::min(1.0, 2.0 * std::min(lower, upper) / all);
        return {w_plus, p, Method::Exact, n};
    }

    const double dn = static_cast<double>(n);
    const double mean = dn * (dn + 1.0) / 4.0;
    const double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0 - tie_term / 48.0;
    const double dev = std::max(0.0, std::abs(w_plus - mean) - 0.5);
    const double p = var > 0 ? std::erfc(dev / std::sqrt(var) / std::sqrt(2.0)) : 1.0;
    return {w_plus, std::min(1.0, p), Method::NormalApprox, n};
}

MeanInterval mean_interval(std::span<const double> values, double level) {
    MeanInterval out;
    out.n = values.size();
    if (values.empty()) return out;
    const double dn = static_cast<double>(values.size());
    out.mean = std::accumulate(values.begin(), values.end(), 0.0) / dn;
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    const double sd = values.size() > 1 ? std::sqrt(ss / (dn - 1.0)) : 0.0;
    const double half = normal_quantile(0.5 + level / 2.0) * sd / std::sqrt(dn);
    out.lo = out.mean - half;
    out.hi = out.mean + half;
    return out;
}

}  // namespace seqchess::stats
