#pragma once

/**
 * @file detector.hpp
 * @brief Per-round node flags: answer outliers, latency outliers, error classes.
 *
 * Outliers are judged against a robust domain consensus: the coordinate-wise
 * median of node means. Node m is an outlier when
 *
 *     |mean_m - consensus| > k * (scatter_m + scatter_consensus)
 *
 * where scatter_consensus is the RMS spread of the honest-majority means about
 * the consensus, excluding m itself. The honest majority is the floor(N/2)+1
 * nodes closest to the consensus (ties included), so any colluding minority
 * stays out of it.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmverify/error.hpp"
#include "llmverify/metrics.hpp"
#include "llmverify/node_network.hpp"

namespace llmverify {

enum class FlagKind : std::size_t { outlier = 0, slow, timeout, error500, error404, errorOther };

inline constexpr std::array kAllFlagKinds = {FlagKind::outlier,  FlagKind::slow,     FlagKind::timeout,
                                             FlagKind::error500, FlagKind::error404, FlagKind::errorOther};

inline std::string_view to_string(FlagKind k) {
    switch (k) {
        case FlagKind::outlier: return "outlier";
        case FlagKind::slow: return "slow";
        case FlagKind::timeout: return "timeout";
        case FlagKind::error500: return "error500";
        case FlagKind::error404: return "error404";
        case FlagKind::errorOther: return "errorOther";
    }
    return "unknown";
}

inline FlagKind parse_flag_kind(std::string_view s) {
    for (auto k : kAllFlagKinds) {
        if (to_string(k) == s) return k;
    }
    throw InvalidInput("unknown flag kind '" + std::string(s) + "'");
}

struct Flag {
    FlagKind kind;
    /// Outlier: distance / (scatter_m + scatter_consensus). Slow: latency z-score.
    /// Timeout: number of timed-out requests. Errors: HTTP code.
    double evidence = 0.0;

    friend bool operator==(const Flag&, const Flag&) = default;
};

/// At most one flag per kind; merging keeps the larger evidence.
class FlagSet {
public:
    void set(FlagKind k, double evidence) {
        auto& slot = slots_[static_cast<std::size_t>(k)];
        if (!slot || evidence > *slot) slot = evidence;
    }
    void merge(const FlagSet& other) {
        for (auto k : kAllFlagKinds) {
            if (auto e = other.evidence(k)) set(k, *e);
        }
    }

    bool has(FlagKind k) const noexcept { return slots_[static_cast<std::size_t>(k)].has_value(); }
    std::optional<double> evidence(FlagKind k) const noexcept { return slots_[static_cast<std::size_t>(k)]; }

    bool empty() const noexcept {
        return std::ranges::none_of(slots_, [](const auto& s) { return s.has_value(); });
    }
    std::size_t size() const noexcept {
        return static_cast<std::size_t>(std::ranges::count_if(slots_, [](const auto& s) { return s.has_value(); }));
    }

    std::vector<Flag> flags() const {
        std::vector<Flag> out;
        for (auto k : kAllFlagKinds) {
            if (auto e = evidence(k)) out.push_back({k, *e});
        }
        return out;
    }

    friend bool operator==(const FlagSet&, const FlagSet&) = default;

private:
    std::array<std::optional<double>, kAllFlagKinds.size()> slots_{};
};

struct NodeReport {
    std::string node_id;
    FlagSet flags;
    std::optional<AnswerCluster> cluster;
    std::optional<double> consensus_distance;
    bool inconclusive = false;
};

struct DetectorOptions {
    double k = kSeparationK;
    std::size_t min_nodes = 3;
    /// Standard deviations above the other nodes' mean latency that count as slow.
    double latency_k = 3.0;
};

namespace detail {

inline std::map<std::string, std::vector<const ResponseSample*>> by_node(std::span<const ResponseSample> samples) {
    std::map<std::string, std::vector<const ResponseSample*>> out;
    for (const auto& s : samples) out[s.node_id].push_back(&s);
    return out;
}

inline double safe_ratio(double num, double den) {
    if (den > 0.0) return num / den;
    return num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

}  // namespace detail

/**
 * Outlier detection for the samples of a single question.
 *
 * Returns one report per node seen, ordered by node id. Nodes without ok
 * samples get no cluster. With fewer than `min_nodes` clustered nodes every
 * report is marked inconclusive and no outlier flag is raised.
 */
inline std::vector<NodeReport> detect_outliers(std::span<const ResponseSample> samples,
                                               const DetectorOptions& opts = {}) {
    if (!samples.empty()) {
        for (const auto& s : samples) {
            if (s.question_id != samples.front().question_id) {
                throw InvalidInput("detect_outliers expects samples of a single question");
            }
        }
    }

    std::vector<NodeReport> reports;
    for (const auto& [node, list] : detail::by_node(samples)) {
        NodeReport r;
        r.node_id = node;
        std::vector<std::span<const double>> ok;
        for (const auto* s : list) {
            if (s->ok() && s->embedding) ok.emplace_back(*s->embedding);
        }
        if (!ok.empty()) r.cluster = summarize(ok);
        reports.push_back(std::move(r));
    }

    std::vector<NodeReport*> clustered;
    for (auto& r : reports) {
        if (r.cluster) clustered.push_back(&r);
    }
    if (clustered.size() < std::max<std::size_t>(opts.min_nodes, 1)) {
        for (auto& r : reports) r.inconclusive = true;
        return reports;
    }
    const std::size_t z = clustered.front()->cluster->dimension();
    for (const auto* r : clustered) {
        if (r->cluster->dimension() != z) throw InvalidInput("dimension mismatch across nodes");
    }

    std::vector<const EmbeddingVector*> means;
    for (const auto* r : clustered) means.push_back(&r->cluster->mean);
    const EmbeddingVector consensus = coordinate_median(means);

    std::vector<double> dist(clustered.size());
    for (std::size_t i = 0; i < clustered.size(); ++i) dist[i] = euclidean(clustered[i]->cluster->mean, consensus);

    std::vector<double> sorted = dist;
    std::ranges::sort(sorted);
    const double majority_cutoff = sorted[clustered.size() / 2];

    for (std::size_t m = 0; m < clustered.size(); ++m) {
        std::vector<const EmbeddingVector*> others;
        for (std::size_t c = 0; c < clustered.size(); ++c) {
            if (c != m && dist[c] <= majority_cutoff) others.push_back(means[c]);
        }
        const double consensus_scatter = rms_spread_about(others, consensus);
        auto& r = *clustered[m];
        r.consensus_distance = dist[m];
        const double scatter_sum = r.cluster->rms_scatter + consensus_scatter;
        if (distinguishable(dist[m], scatter_sum, opts.k)) {
            r.flags.set(FlagKind::outlier, detail::safe_ratio(dist[m], scatter_sum));
        }
    }
    return reports;
}

/**
 * Latency outliers across a domain. Each node's mean ok-latency is compared
 * with the mean and population std of the other nodes' means; flag when it
 * exceeds mean + latency_k * std. One-sided. Needs at least 3 nodes with ok
 * samples, otherwise returns no flags.
 */
inline std::map<std::string, Flag> detect_slow(std::span<const ResponseSample> samples,
                                               const DetectorOptions& opts = {}) {
    std::vector<std::pair<std::string, double>> node_means;
    for (const auto& [node, list] : detail::by_node(samples)) {
        CompensatedSum sum;
        std::size_t n = 0;
        for (const auto* s : list) {
            if (s->ok()) {
                sum.add(s->latency_ms);
                ++n;
            }
        }
        if (n > 0) node_means.emplace_back(node, sum.value() / static_cast<double>(n));
    }

    std::map<std::string, Flag> out;
    if (node_means.size() < 3) return out;
    for (std::size_t m = 0; m < node_means.size(); ++m) {
        CompensatedSum s;
        for (std::size_t c = 0; c < node_means.size(); ++c) {
            if (c != m) s.add(node_means[c].second);
        }
        const double count = static_cast<double>(node_means.size() - 1);
        const double mean = s.value() / count;
        CompensatedSum sq;
        for (std::size_t c = 0; c < node_means.size(); ++c) {
            if (c == m) continue;
            const double d = node_means[c].second - mean;
            sq.add(d * d);
        }
        const double sd = std::sqrt(sq.value() / count);
        const double x = node_means[m].second;
        if (x > mean + opts.latency_k * sd) {
            out.emplace(node_means[m].first, Flag{FlagKind::slow, detail::safe_ratio(x - mean, sd)});
        }
    }
    return out;
}

/// Timeout and HTTP-error flags per node. Nodes with only ok samples are absent.
inline std::map<std::string, FlagSet> classify_errors(std::span<const ResponseSample> samples) {
    std::map<std::string, FlagSet> out;
    std::map<std::string, double> timeouts;
    for (const auto& s : samples) {
        switch (s.status) {
            case SampleStatus::ok: break;
            case SampleStatus::timeout: timeouts[s.node_id] += 1.0; break;
            case SampleStatus::http_error: {
                const FlagKind k = s.code == 500   ? FlagKind::error500
                                   : s.code == 404 ? FlagKind::error404
                                                   : FlagKind::errorOther;
                out[s.node_id].set(k, static_cast<double>(s.code));
                break;
            }
        }
    }
    for (const auto& [node, count] : timeouts) out[node].set(FlagKind::timeout, count);
    return out;
}

/**
 * Full detection over one polling round, which may span several questions.
 * Per-question outlier verdicts are unioned; the reported cluster and
 * consensus distance come from the question with the largest outlier ratio
 * (or the first conclusive question when none flagged).
 */
inline std::vector<NodeReport> detect_round(std::span<const ResponseSample> samples, const DetectorOptions& opts = {}) {
    std::map<std::string, std::vector<ResponseSample>> by_question;
    for (const auto& s : samples) by_question[s.question_id].push_back(s);

    std::map<std::string, NodeReport> merged;
    // (tier, ratio): tier 2 = flagged outlier, 1 = conclusive, 0 = clustered only.
    std::map<std::string, std::pair<int, double>> best;
    std::map<std::string, bool> conclusive;
    for (const auto& [q, qs] : by_question) {
        for (auto& r : detect_outliers(qs, opts)) {
            auto& m = merged[r.node_id];
            if (!r.inconclusive) conclusive[r.node_id] = true;
            if (r.cluster) {
                const auto ratio = r.flags.evidence(FlagKind::outlier);
                const std::pair<int, double> score{ratio ? 2 : (r.inconclusive ? 0 : 1), ratio.value_or(0.0)};
                auto it = best.find(r.node_id);
                if (it == best.end() || score > it->second) {
                    best[r.node_id] = score;
                    m.cluster = r.cluster;
                    m.consensus_distance = r.consensus_distance;
                }
            }
            m.flags.merge(r.flags);
        }
    }
    for (const auto& [node, flag] : detect_slow(samples, opts)) merged[node].flags.set(flag.kind, flag.evidence);
    for (const auto& [node, flags] : classify_errors(samples)) merged[node].flags.merge(flags);

    std::vector<NodeReport> out;
    out.reserve(merged.size());
    for (auto& [node, r] : merged) {
        r.node_id = node;
        r.inconclusive = !conclusive[node];
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSONL: {"m","flags":[{"kind","evidence"}],"inconclusive","consensus_distance"}

inline nlohmann::json finite_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }

inline nlohmann::json to_json(const FlagSet& flags) {
    auto arr = nlohmann::json::array();
    for (const auto& f : flags.flags()) {
        arr.push_back({{"kind", std::string(to_string(f.kind))}, {"evidence", finite_or_null(f.evidence)}});
    }
    return arr;
}

inline FlagSet flagset_from_json(const nlohmann::json& arr) {
    FlagSet out;
    for (const auto& f : arr) {
        const auto& e = f.at("evidence");
        out.set(parse_flag_kind(f.at("kind").get<std::string>()),
                e.is_null() ? std::numeric_limits<double>::infinity() : e.get<double>());
    }
    return out;
}

inline nlohmann::json to_json(const NodeReport& r) {
    return {{"m", r.node_id},
            {"flags", to_json(r.flags)},
            {"inconclusive", r.inconclusive},
            {"consensus_distance", r.consensus_distance ? nlohmann::json(*r.consensus_distance) : nlohmann::json(nullptr)}};
}

/// The cluster is not serialized; only verdict fields survive a round trip.
inline NodeReport report_from_json(const nlohmann::json& j) {
    NodeReport r;
    r.node_id = j.at("m").get<std::string>();
    r.flags = flagset_from_json(j.at("flags"));
    r.inconclusive = j.value("inconclusive", false);
    if (j.contains("consensus_distance") && !j.at("consensus_distance").is_null()) {
        r.consensus_distance = j.at("consensus_distance").get<double>();
    }
    return r;
}

}  // namespace llmverify
