#pragma once

/**
 * @file question_ranker.hpp
 * @brief Ranks test questions by how cleanly they separate configurations.
 *
 * A question's effectiveness is the smallest separation ratio
 * distance / (scatter_a + scatter_b) over every pair of configurations: a
 * question is only as useful as its worst-separated pair.
 */

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "llmverify/detector.hpp"
#include "llmverify/error.hpp"
#include "llmverify/format.hpp"
#include "llmverify/metrics.hpp"
#include "llmverify/node_network.hpp"

namespace llmverify {

struct PairSeparation {
    std::string config_a;
    std::string config_b;
    double distance = 0.0;
    double scatter_sum = 0.0;
    /// distance / scatter_sum; +inf when scatter_sum is 0 and distance > 0.
    double ratio = 0.0;
};

struct QuestionStats {
    std::string question_id;
    std::vector<PairSeparation> pairs;
    /// Empty when some configuration has no ok samples for this question.
    std::optional<double> effectiveness;
    std::map<std::string, std::size_t> sample_counts;

    bool scored() const noexcept { return effectiveness.has_value(); }
};

/// Distinct configurations (node ids) present in `samples`, sorted.
inline std::vector<std::string> configurations_of(std::span<const ResponseSample> samples) {
    std::set<std::string> ids;
    for (const auto& s : samples) ids.insert(s.node_id);
    return {ids.begin(), ids.end()};
}

/**
 * Groups samples by (question, configuration), where a sample's node id
 * names its configuration, and returns questions ordered by descending
 * effectiveness with question id as tie-break. Unscored questions come last.
 */
inline std::vector<QuestionStats> rank_questions(std::span<const ResponseSample> samples) {
    const auto configs = configurations_of(samples);
    if (configs.size() < 2) throw InvalidInput("ranking needs at least 2 configurations");

    std::map<std::string, std::map<std::string, std::vector<std::span<const double>>>> grouped;
    for (const auto& s : samples) {
        auto& per_config = grouped[s.question_id];
        if (s.ok() && s.embedding) per_config[s.node_id].emplace_back(*s.embedding);
    }

    std::vector<QuestionStats> out;
    for (const auto& [q, per_config] : grouped) {
        QuestionStats st;
        st.question_id = q;
        std::map<std::string, AnswerCluster> clusters;
        for (const auto& c : configs) {
            auto it = per_config.find(c);
            st.sample_counts[c] = it == per_config.end() ? 0 : it->second.size();
            if (it != per_config.end()) clusters.emplace(c, summarize(it->second));
        }
        for (std::size_t a = 0; a < configs.size(); ++a) {
            for (std::size_t b = a + 1; b < configs.size(); ++b) {
                auto ia = clusters.find(configs[a]);
                auto ib = clusters.find(configs[b]);
                if (ia == clusters.end() || ib == clusters.end()) continue;
                PairSeparation p;
                p.config_a = configs[a];
                p.config_b = configs[b];
                p.distance = cluster_distance(ia->second, ib->second);
                p.scatter_sum = ia->second.rms_scatter + ib->second.rms_scatter;
                p.ratio = detail::safe_ratio(p.distance, p.scatter_sum);
                st.pairs.push_back(std::move(p));
            }
        }
        if (clusters.size() == configs.size()) {
            double eff = std::numeric_limits<double>::infinity();
            for (const auto& p : st.pairs) eff = std::min(eff, p.ratio);
            st.effectiveness = eff;
        }
        out.push_back(std::move(st));
    }

    std::ranges::stable_sort(out, [](const QuestionStats& x, const QuestionStats& y) {
        if (x.scored() != y.scored()) return x.scored();
        if (x.scored() && *x.effectiveness != *y.effectiveness) return *x.effectiveness > *y.effectiveness;
        return x.question_id < y.question_id;
    });
    return out;
}

/**
 * CSV: question_id,effectiveness,<a>~<b>,... with one ratio column per
 * configuration pair. Missing values are written as NA.
 */
inline std::string ranking_csv(const std::vector<QuestionStats>& ranked, const std::vector<std::string>& configs) {
    std::ostringstream out;
    out << "question_id,effectiveness";
    std::vector<std::pair<std::string, std::string>> pairs;
    for (std::size_t a = 0; a < configs.size(); ++a) {
        for (std::size_t b = a + 1; b < configs.size(); ++b) {
            pairs.emplace_back(configs[a], configs[b]);
            out << ',' << csv_field(configs[a] + "~" + configs[b]);
        }
    }
    out << '\n';
    for (const auto& q : ranked) {
        out << csv_field(q.question_id) << ',' << (q.effectiveness ? format_double(*q.effectiveness) : "NA");
        for (const auto& [a, b] : pairs) {
            auto it = std::ranges::find_if(q.pairs, [&](const PairSeparation& p) {
                return p.config_a == a && p.config_b == b;
            });
            out << ',' << (it == q.pairs.end() ? "NA" : format_double(it->ratio));
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace llmverify
