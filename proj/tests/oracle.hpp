#pragma once

// Naive reference implementations used as test oracles. Nothing here calls
// into the library: plain loops, long double accumulators, no compensation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

struct Cluster {
    std::vector<double> mean;
    std::vector<double> std_dev;
    double rms = 0.0;
};

inline Cluster summarize(const std::vector<std::vector<double>>& xs) {
    const std::size_t n = xs.size();
    const std::size_t z = xs[0].size();
    Cluster c;
    c.mean.assign(z, 0.0);
    c.std_dev.assign(z, 0.0);
    for (std::size_t j = 0; j < z; ++j) {
        long double s = 0.0L;
        for (std::size_t i = 0; i < n; ++i) s += xs[i][j];
        const long double m = s / n;
        long double v = 0.0L;
        for (std::size_t i = 0; i < n; ++i) v += (xs[i][j] - m) * (xs[i][j] - m);
        c.mean[j] = static_cast<double>(m);
        c.std_dev[j] = static_cast<double>(std::sqrt(v / n));
    }
    long double acc = 0.0L;
    for (std::size_t j = 0; j < z; ++j) acc += static_cast<long double>(c.std_dev[j]) * c.std_dev[j];
    c.rms = static_cast<double>(std::sqrt(acc / z));
    return c;
}

inline double distance(const std::vector<double>& a, const std::vector<double>& b) {
    long double acc = 0.0L;
    for (std::size_t j = 0; j < a.size(); ++j) acc += (static_cast<long double>(a[j]) - b[j]) * (a[j] - b[j]);
    return static_cast<double>(std::sqrt(acc));
}

inline bool distinguishable(double d, double sa, double sb, double k = 3.0) { return d > k * (sa + sb); }

/// Population mean and std of `xs` without element `skip`.
inline std::pair<double, double> mean_std_without(const std::vector<double>& xs, std::size_t skip) {
    double s = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i != skip) {
            s += xs[i];
            ++n;
        }
    }
    const double m = s / n;
    double v = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i != skip) v += (xs[i] - m) * (xs[i] - m);
    }
    return {m, std::sqrt(v / n)};
}

inline std::vector<std::vector<double>> random_set(std::mt19937_64& rng, std::size_t n, std::size_t z,
                                                   double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    std::uniform_real_distribution<double> offset(-10.0, 10.0);
    std::vector<double> center(z);
    for (auto& x : center) x = offset(rng);
    std::vector<std::vector<double>> out(n, center);
    for (auto& v : out) {
        for (auto& x : v) x += g(rng);
    }
    return out;
}

inline double rel_err(double got, double want) {
    const double den = std::max(std::abs(want), 1e-300);
    return want == 0.0 ? std::abs(got) : std::abs(got - want) / den;
}

}  // namespace oracle
