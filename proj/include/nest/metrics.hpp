#pragma once

// Error metrics for learning curves.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "nest/errors.hpp"
#include "nest/psychfun.hpp"

namespace nest {

inline void check_same_length(std::size_t a, std::size_t b) {
    if (a != b) fail(ErrorKind::Shape, "metric inputs differ in length");
    if (a == 0) fail(ErrorKind::EmptyDataset, "metric inputs are empty");
}

inline double rmse(std::span<const double> predicted, std::span<const double> truth) {
    check_same_length(predicted.size(), truth.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) acc += (predicted[i] - truth[i]) * (predicted[i] - truth[i]);
    return std::sqrt(acc / static_cast<double>(truth.size()));
}

inline constexpr double kBrierStdFloor = 1e-9;

/// P(value >= mu_star) under N(mean, std^2).
inline double exceed_probability(double mean, double std, double mu_star) {
    return 1.0 - normal_cdf((mu_star - mean) / std::max(std, kBrierStdFloor));
}

/// Mean squared difference between predicted exceedance probabilities and
/// the true exceedance indicators.
inline double brier(std::span<const double> prob_exceed, std::span<const double> outcome) {
    check_same_length(prob_exceed.size(), outcome.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < outcome.size(); ++i) acc += (outcome[i] - prob_exceed[i]) * (outcome[i] - prob_exceed[i]);
    return acc / static_cast<double>(outcome.size());
}

inline double brier(std::span<const double> means, std::span<const double> stds, std::span<const double> truth,
                    double mu_star) {
    check_same_length(means.size(), truth.size());
    check_same_length(stds.size(), truth.size());
    std::vector<double> p(truth.size()), o(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
        p[i] = exceed_probability(means[i], stds[i], mu_star);
        o[i] = truth[i] >= mu_star ? 1.0 : 0.0;
    }
    return brier(p, o);
}

inline double default_mu_star(double alpha) { return (1.0 + alpha) / 2.0; }

/// Unit-spaced trapezoid over the series.
inline double auc(std::span<const double> series) {
    double acc = 0.0;
    for (std::size_t i = 1; i < series.size(); ++i) acc += 0.5 * (series[i - 1] + series[i]);
    return acc;
}

/// 1-based ranks, ties get the average of the ranks they span.
inline std::vector<double> mid_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
        i = j + 1;
    }
    return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
    check_same_length(x.size(), y.size());
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
    check_same_length(x.size(), y.size());
    const auto rx = mid_ranks(x);
    const auto ry = mid_ranks(y);
    return pearson(rx, ry);
}

}  // namespace nest
