#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace seqchess::stats {

enum class Method { Exact, NormalApprox };
const char* to_string(Method m);

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    Method method = Method::Exact;
    std::uint64_t n = 0;
};

/// Two-sided binomial test. Exact for n <= 10^4: sums P(X = i) over every i
/// whose probability does not exceed that of the observed k. Larger n falls
/// back to the continuity-corrected normal approximation.
TestResult binomial_two_sided(std::uint64_t k, std::uint64_t n, double p0 = 0.5);

/// Continuity-corrected normal approximation, kept as a cross-check.
TestResult binomial_normal_approx(std::uint64_t k, std::uint64_t n, double p0 = 0.5);

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
};

Interval wilson_interval(std::uint64_t k, std::uint64_t n, double level = 0.95);

/// Signed-rank test on paired differences. Zero differences are dropped;
/// exact null distribution for up to 25 nonzero differences, tie-corrected
/// normal approximation above. Statistic is the positive rank sum.
TestResult wilcoxon_signed_rank(std::span<const double> differences);

struct MeanInterval {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    std::uint64_t n = 0;
};

/// Sample mean with a normal-theory interval (mean +- z * sd / sqrt(n)).
MeanInterval mean_interval(std::span<const double> values, double level = 0.95);

double normal_cdf(double x);
double normal_quantile(double p);

}  // namespace seqchess::stats
