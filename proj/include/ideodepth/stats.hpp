#pragma once

#include <span>
#include <vector>

namespace ideodepth::stats {

double mean(std::span<const double> xs);
/// Population variance (divides by n).
double variance_pop(std::span<const double> xs);
/// Linear-interpolation quantile on sorted data, h = (n - 1) * q.
double quantile_sorted(std::span<const double> sorted, double q);

struct Correlation {
    double r = 0.0;
    double p_value = 1.0;  // two-sided, t with n - 2 degrees of freedom
    std::size_t n = 0;
};

/// Pearson correlation. Throws DomainError when either input is constant.
Correlation pearson(std::span<const double> x, std::span<const double> y);

/// Two-sided p-value of a Pearson r over n pairs.
double pearson_p_value(double r, std::size_t n);

}  // namespace ideodepth::stats
