#pragma once

/**
 * @file metrics.hpp
 * @brief Answer-cluster statistics in embedding space.
 *
 * An answer cluster is the set of n embeddings produced by repeating one
 * question against one node. It is summarized by its mean point, the
 * per-dimension population standard deviation and the RMS of those
 * deviations ("RMS scatter"). Two clusters are distinguishable when the
 * distance between their means exceeds `k` times the sum of their scatters.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ranges>
#include <span>
#include <string>
#include <vector>

#include "llmverify/error.hpp"

namespace llmverify {

/// One answer's position in embedding space.
using EmbeddingVector = std::vector<double>;

/// Default multiplier of the summed scatters in the distinguishability test.
inline constexpr double kSeparationK = 3.0;

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    constexpr void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    constexpr double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// n repeated answers to one question from one node.
struct SampleSet {
    std::string question_id;
    std::string node_id;
    std::vector<EmbeddingVector> vectors;
};

struct AnswerCluster {
    EmbeddingVector mean;
    std::vector<double> per_dim_std;
    double rms_scatter = 0.0;
    std::size_t n = 0;

    std::size_t dimension() const noexcept { return mean.size(); }
};

struct SeparationResult {
    double distance = 0.0;
    double scatter_sum = 0.0;
    /// distance / max(scatter_a, scatter_b); empty when both scatters are zero.
    std::optional<double> ratio;
    bool distinguishable = false;
};

namespace detail {

inline void require_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) throw InvalidInput("non-finite embedding coordinate");
    }
}

}  // namespace detail

/// Throws InvalidInput unless `v` is non-empty and finite.
inline void validate_embedding(std::span<const double> v, std::size_t expected_dim = 0) {
    if (v.empty()) throw InvalidInput("embedding has zero dimensions");
    if (expected_dim != 0 && v.size() != expected_dim) {
        throw InvalidInput("embedding dimension " + std::to_string(v.size()) + " != expected " +
                           std::to_string(expected_dim));
    }
    detail::require_finite(v);
}

/**
 * Summarize a non-empty range of equal-length embeddings.
 *
 * Uses population standard deviation (divide by n). Sums are compensated so
 * results stay accurate at z in the thousands and n up to 1e4.
 */
template <std::ranges::forward_range Range>
    requires std::convertible_to<const std::ranges::range_value_t<Range>&, std::span<const double>>
AnswerCluster summarize(const Range& vectors) {
    const auto n = static_cast<std::size_t>(std::ranges::distance(vectors));
    if (n == 0) throw InvalidInput("cannot summarize an empty sample set");

    const std::span<const double> first = *std::ranges::begin(vectors);
    const std::size_t z = first.size();
    if (z == 0) throw InvalidInput("embedding has zero dimensions");

    std::vector<CompensatedSum> acc(z);
    for (const auto& item : vectors) {
        const std::span<const double> v = item;
        if (v.size() != z) throw InvalidInput("mixed embedding dimensions in sample set");
        detail::require_finite(v);
        for (std::size_t j = 0; j < z; ++j) acc[j].add(v[j]);
    }

    AnswerCluster out;
    out.n = n;
    out.mean.resize(z);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < z; ++j) out.mean[j] = acc[j].value() * inv_n;

    // Second pass over deviations; avoids the cancellation of E[x^2] - E[x]^2.
    std::vector<CompensatedSum> sq(z);
    for (const auto& item : vectors) {
        const std::span<const double> v = item;
        for (std::size_t j = 0; j < z; ++j) {
            const double d = v[j] - out.mean[j];
            sq[j].add(d * d);
        }
    }

    out.per_dim_std.resize(z);
    CompensatedSum var_total;
    for (std::size_t j = 0; j < z; ++j) {
        const double var = n == 1 ? 0.0 : sq[j].value() * inv_n;
        out.per_dim_std[j] = std::sqrt(var);
        var_total.add(var);
    }
    out.rms_scatter = std::sqrt(var_total.value() / static_cast<double>(z));
    return out;
}

inline AnswerCluster summarize(const SampleSet& samples) { return summarize(samples.vectors); }

/// Euclidean distance between two points of equal dimension.
inline double euclidean(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw InvalidInput("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                           std::to_string(b.size()));
    }
    CompensatedSum s;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a[j] - b[j];
        s.add(d * d);
    }
    return std::sqrt(s.value());
}

/// Distance between the mean points of two clusters.
inline double cluster_distance(const AnswerCluster& a, const AnswerCluster& b) {
    return euclidean(a.mean, b.mean);
}

/// Strict test `distance > k * scatter_sum`. Zero scatter with positive distance is distinguishable.
inline bool distinguishable(double distance, double scatter_sum, double k = kSeparationK) noexcept {
    return distance > k * scatter_sum;
}

inline SeparationResult separation(const AnswerCluster& a, const AnswerCluster& b, double k = kSeparationK) {
    if (!(k > 0.0)) throw InvalidInput("separation factor k must be positive");
    SeparationResult r;
    r.distance = cluster_distance(a, b);
    r.scatter_sum = a.rms_scatter + b.rms_scatter;
    const double max_scatter = std::max(a.rms_scatter, b.rms_scatter);
    if (max_scatter > 0.0) r.ratio = r.distance / max_scatter;
    r.distinguishable = distinguishable(r.distance, r.scatter_sum, k);
    return r;
}

/**
 * Per-dimension RMS spread of a set of points about `center`:
 * sqrt( (1/z) * (1/|points|) * sum_c |p_c - center|^2 ).
 *
 * This is the RMS-scatter convention applied to arbitrary points.
 */
inline double rms_spread_about(std::span<const EmbeddingVector* const> points, std::span<const double> center) {
    if (points.empty()) return 0.0;
    CompensatedSum s;
    for (const auto* p : points) {
        const double d = euclidean(*p, center);
        s.add(d * d);
    }
    return std::sqrt(s.value() / static_cast<double>(points.size()) / static_cast<double>(center.size()));
}

/// Coordinate-wise median of equal-length points.
inline EmbeddingVector coordinate_median(std::span<const EmbeddingVector* const> points) {
    if (points.empty()) throw InvalidInput("median of an empty point set");
    const std::size_t z = points.front()->size();
    EmbeddingVector out(z);
    std::vector<double> column(points.size());
    for (std::size_t j = 0; j < z; ++j) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (points[i]->size() != z) throw InvalidInput("mixed dimensions in median");
            column[i] = (*points[i])[j];
        }
        const std::size_t mid = column.size() / 2;
        std::nth_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(mid), column.end());
        const double upper = column[mid];
        if (column.size() % 2 == 1) {
            out[j] = upper;
        } else {
            const double lower = *std::max_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(mid));
            out[j] = lower + (upper - lower) / 2.0;
        }
    }
    return out;
}

}  // namespace llmverify
