#pragma once

/**
 * @file experiment.hpp
 * @brief Per-question cluster statistics and configuration-pair separations.
 *
 * Artifacts (all CSV, header row first, rows sorted by id):
 *   clusters.csv   question_id,config,n,rms_scatter
 *   distances.csv  question_id,config_a,config_b,distance,scatter_sum,ratio,distinguishable
 *   summary.csv    config_a,config_b,questions,d_ave,sigma_max,ratio,distinguishable_questions
 *
 * In distances.csv, ratio = distance / max(scatter_a, scatter_b). In
 * summary.csv, d_ave is the mean pair distance over questions, sigma_max the
 * larger of the two configurations' question-averaged RMS scatters, and
 * ratio = d_ave / sigma_max.
 */

#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "llmverify/format.hpp"
#include "llmverify/metrics.hpp"
#include "llmverify/node_network.hpp"

namespace llmverify {

struct ClusterRow {
    std::string question_id;
    std::string config;
    AnswerCluster cluster;
};

struct DistanceRow {
    std::string question_id;
    std::string config_a;
    std::string config_b;
    SeparationResult separation;
};

struct SummaryRow {
    std::string config_a;
    std::string config_b;
    std::size_t questions = 0;
    double d_ave = 0.0;
    double sigma_max = 0.0;
    std::optional<double> ratio;
    std::size_t distinguishable_questions = 0;
};

struct ExperimentReport {
    std::vector<ClusterRow> clusters;
    std::vector<DistanceRow> distances;
    std::vector<SummaryRow> summary;

    const SummaryRow* pair(const std::string& a, const std::string& b) const {
        for (const auto& s : summary) {
            if ((s.config_a == a && s.config_b == b) || (s.config_a == b && s.config_b == a)) return &s;
        }
        return nullptr;
    }
};

/// Sample node ids name configurations. Only ok samples contribute.
inline ExperimentReport analyze_samples(std::span<const ResponseSample> samples, double k = kSeparationK) {
    std::map<std::string, std::map<std::string, std::vector<std::span<const double>>>> grouped;
    for (const auto& s : samples) {
        if (s.ok() && s.embedding) grouped[s.question_id][s.node_id].emplace_back(*s.embedding);
    }

    ExperimentReport rep;
    struct PairAcc {
        CompensatedSum distance;
        CompensatedSum scatter_a;
        CompensatedSum scatter_b;
        std::size_t n = 0;
        std::size_t distinguishable = 0;
    };
    std::map<std::pair<std::string, std::string>, PairAcc> pairs;

    for (const auto& [q, per_config] : grouped) {
        std::vector<std::pair<std::string, AnswerCluster>> clusters;
        for (const auto& [config, vecs] : per_config) {
            clusters.emplace_back(config, summarize(vecs));
            rep.clusters.push_back({q, config, clusters.back().second});
        }
        for (std::size_t a = 0; a < clusters.size(); ++a) {
            for (std::size_t b = a + 1; b < clusters.size(); ++b) {
                auto sep = separation(clusters[a].second, clusters[b].second, k);
                auto& acc = pairs[{clusters[a].first, clusters[b].first}];
                acc.distance.add(sep.distance);
                acc.scatter_a.add(clusters[a].second.rms_scatter);
                acc.scatter_b.add(clusters[b].second.rms_scatter);
                acc.n += 1;
                acc.distinguishable += sep.distinguishable ? 1 : 0;
                rep.distances.push_back({q, clusters[a].first, clusters[b].first, sep});
            }
        }
    }

    for (const auto& [key, acc] : pairs) {
        SummaryRow s;
        s.config_a = key.first;
        s.config_b = key.second;
        s.questions = acc.n;
        const double n = static_cast<double>(acc.n);
        s.d_ave = acc.distance.value() / n;
        s.sigma_max = std::max(acc.scatter_a.value() / n, acc.scatter_b.value() / n);
        if (s.sigma_max > 0.0) s.ratio = s.d_ave / s.sigma_max;
        s.distinguishable_questions = acc.distinguishable;
        rep.summary.push_back(std::move(s));
    }
    return rep;
}

inline std::string clusters_csv(const ExperimentReport& rep) {
    std::ostringstream out;
    out << "question_id,config,n,rms_scatter\n";
    for (const auto& c : rep.clusters) {
        out << csv_field(c.question_id) << ',' << csv_field(c.config) << ',' << c.cluster.n << ','
            << format_double(c.cluster.rms_scatter) << '\n';
    }
    return out.str();
}

inline std::string distances_csv(const ExperimentReport& rep) {
    std::ostringstream out;
    out << "question_id,config_a,config_b,distance,scatter_sum,ratio,distinguishable\n";
    for (const auto& d : rep.distances) {
        out << csv_field(d.question_id) << ',' << csv_field(d.config_a) << ',' << csv_field(d.config_b) << ','
            << format_double(d.separation.distance) << ',' << format_double(d.separation.scatter_sum) << ','
            << (d.separation.ratio ? format_double(*d.separation.ratio) : "NA") << ','
            << (d.separation.distinguishable ? "true" : "false") << '\n';
    }
    return out.str();
}

inline std::string summary_csv(const ExperimentReport& rep) {
    std::ostringstream out;
    out << "config_a,config_b,questions,d_ave,sigma_max,ratio,distinguishable_questions\n";
    for (const auto& s : rep.summary) {
        out << csv_field(s.config_a) << ',' << csv_field(s.config_b) << ',' << s.questions << ','
            << format_double(s.d_ave) << ',' << format_double(s.sigma_max) << ','
            << (s.ratio ? format_double(*s.ratio) : "NA") << ',' << s.distinguishable_questions << '\n';
    }
    return out.str();
}

}  // namespace llmverify
