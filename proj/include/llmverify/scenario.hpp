#pragma once

/**
 * @file scenario.hpp
 * @brief Scenario configuration: one JSON document describing the provider,
 * behavior profiles, questions, domain, epoch parameters and the seed.
 *
 * All randomness derives from `seed` through named sub-streams
 * ("provider", "network", "epoch", "geometry", "keys").
 */

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmverify/embedding_provider.hpp"
#include "llmverify/epoch_engine.hpp"
#include "llmverify/error.hpp"
#include "llmverify/node_network.hpp"
#include "llmverify/rng.hpp"

namespace llmverify {

struct ProfileSpec {
    std::string id;
    double sigma = 0.0;
    std::optional<EmbeddingVector> center;
};

/// Target distance between two profile centers, absolute or in units of a's sigma.
struct ProfileDistance {
    std::string a;
    std::string b;
    double distance = 0.0;
};

struct QuestionSpec {
    Question question;
    /// Multiplies every profile distance for this question.
    double distance_scale = 1.0;
};

struct ExperimentSpec {
    std::vector<std::string> configs;
    std::vector<NodeConfig> nodes;
    std::optional<std::size_t> repeats;
    double timeout_ms = kDefaultTimeoutMs;
    std::size_t max_in_flight = 16;
};

struct ScenarioConfig {
    std::optional<std::uint64_t> seed;
    std::string output_dir;
    ProviderConfig provider;
    std::vector<ProfileSpec> profiles;
    std::vector<ProfileDistance> distances;
    std::vector<QuestionSpec> questions;
    ExperimentSpec experiment;
    std::optional<DomainSpec> domain;
    EpochConfig epoch;
    Stake node_stake = 1000;
    Stake validator_stake = 1000;
    std::optional<NodeConfig> candidate;
    Stake candidate_deposit = 1000;
    /// SHA-256 of the raw config bytes, for the run manifest.
    std::string source_sha256;

    std::uint64_t require_seed() const {
        if (!seed) throw ParseError("a seed is required (config \"seed\" or --seed)");
        return *seed;
    }

    std::vector<Question> question_list() const {
        std::vector<Question> out;
        for (const auto& q : questions) out.push_back(q.question);
        return out;
    }
};

namespace detail {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<T>() : fallback;
}

inline NodeConfig parse_node(const nlohmann::json& j) {
    NodeConfig n;
    n.node_id = j.at("id").get<std::string>();
    n.base_latency_ms = get_or(j, "base_latency_ms", 0.0);
    n.latency_jitter_ms = get_or(j, "latency_jitter_ms", 0.0);
    if (j.contains("endpoint")) {
        n.kind = NodeConfig::Kind::live;
        n.endpoint = j.at("endpoint").get<std::string>();
        n.model = get_or<std::string>(j, "model", "");
    }
    if (j.contains("behavior")) {
        const auto& b = j.at("behavior");
        if (b.is_string()) {
            if (b.get<std::string>() != "honest") throw ParseError("unknown behavior '" + b.get<std::string>() + "'");
        } else if (b.contains("misconfigured")) {
            n.behavior = behavior::Misconfigured{b.at("misconfigured").get<std::string>()};
        } else if (b.contains("slow")) {
            n.behavior = behavior::Slow{b.at("slow").get<double>()};
        } else if (b.contains("flaky")) {
            const auto& f = b.at("flaky");
            n.behavior = behavior::Flaky{get_or(f, "code", 500), f.at("p").get<double>()};
        } else if (b.contains("dead")) {
            n.behavior = behavior::Dead{b.at("dead").at("p").get<double>()};
        } else {
            throw ParseError("node " + n.node_id + ": unrecognized behavior object");
        }
    }
    n.validate();
    return n;
}

inline std::vector<NodeConfig> parse_nodes(const nlohmann::json& domain) {
    std::vector<NodeConfig> nodes;
    if (domain.contains("honest_nodes")) {
        const auto& g = domain.at("honest_nodes");
        const auto count = g.at("count").get<std::size_t>();
        const auto prefix = get_or<std::string>(g, "prefix", "node");
        const auto width = std::to_string(count).size();
        for (std::size_t i = 1; i <= count; ++i) {
            auto digits = std::to_string(i);
            NodeConfig n;
            n.node_id = prefix + std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
            n.base_latency_ms = get_or(g, "base_latency_ms", 0.0);
            n.latency_jitter_ms = get_or(g, "latency_jitter_ms", 0.0);
            nodes.push_back(std::move(n));
        }
    }
    if (domain.contains("nodes")) {
        for (const auto& nj : domain.at("nodes")) nodes.push_back(parse_node(nj));
    }
    return nodes;
}

inline EpochConfig parse_epoch(const nlohmann::json& j) {
    EpochConfig c;
    c.epoch_duration = std::chrono::milliseconds(get_or<std::int64_t>(j, "epoch_duration_ms", 12LL * 3600 * 1000));
    c.rounds_per_epoch = get_or<std::uint64_t>(j, "rounds_per_epoch", 6);
    c.validators = get_or<std::vector<std::string>>(j, "validators", {});
    c.repeats = get_or<std::size_t>(j, "repeats", 8);
    c.timeout_ms = get_or(j, "timeout_ms", kDefaultTimeoutMs);
    c.max_in_flight = get_or<std::size_t>(j, "max_in_flight", 16);
    c.detector.k = get_or(j, "k", kSeparationK);
    c.detector.min_nodes = get_or<std::size_t>(j, "min_nodes", 3);
    c.detector.latency_k = get_or(j, "latency_k", 3.0);
    auto& e = c.economics;
    e.reward_per_epoch = get_or<Stake>(j, "reward_per_epoch", e.reward_per_epoch);
    e.clean_epochs_for_reward = get_or<std::uint64_t>(j, "clean_epochs_for_reward", e.clean_epochs_for_reward);
    e.suspension_epochs = get_or<std::uint64_t>(j, "suspension_epochs", e.suspension_epochs);
    e.slash_schedule = get_or<std::vector<double>>(j, "slash_schedule", e.slash_schedule);
    e.slow_epochs_for_offense = get_or<std::uint64_t>(j, "slow_epochs_for_offense", e.slow_epochs_for_offense);
    e.disagreement_window = get_or<std::uint64_t>(j, "disagreement_window", e.disagreement_window);
    e.disagreement_threshold = get_or<std::uint64_t>(j, "disagreement_threshold", e.disagreement_threshold);
    return c;
}

}  // namespace detail

/// Parses and validates a scenario document. Every failure is a ParseError.
inline ScenarioConfig parse_scenario(const std::string& text) {
    ScenarioConfig cfg;
    cfg.source_sha256 = sha256_hex(text);
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.output_dir = detail::get_or<std::string>(j, "output_dir", "");

        if (j.contains("provider")) {
            const auto& p = j.at("provider");
            const auto kind = detail::get_or<std::string>(p, "kind", "synthetic");
            if (kind == "synthetic") {
                cfg.provider.kind = ProviderConfig::Kind::synthetic;
            } else if (kind == "file") {
                cfg.provider.kind = ProviderConfig::Kind::file;
            } else if (kind == "remote") {
                cfg.provider.kind = ProviderConfig::Kind::remote;
            } else {
                throw ParseError("unknown provider kind '" + kind + "'");
            }
            cfg.provider.dimension = detail::get_or<std::size_t>(p, "dimension", 0);
            cfg.provider.path = detail::get_or<std::string>(p, "path", "");
            cfg.provider.endpoint = detail::get_or<std::string>(p, "endpoint", "");
            cfg.provider.model = detail::get_or<std::string>(p, "model", "");
            cfg.provider.token_env = detail::get_or<std::string>(p, "token_env", "");
            cfg.provider.max_in_flight = detail::get_or<std::size_t>(p, "max_in_flight", 8);
        }

        std::set<std::string> profile_ids;
        for (const auto& pj : j.value("profiles", nlohmann::json::array())) {
            ProfileSpec p;
            p.id = pj.at("id").get<std::string>();
            p.sigma = detail::get_or(pj, "sigma", 0.0);
            if (pj.contains("center")) p.center = pj.at("center").get<EmbeddingVector>();
            if (!profile_ids.insert(p.id).second) throw ParseError("duplicate profile id " + p.id);
            cfg.profiles.push_back(std::move(p));
        }
        for (const auto& dj : j.value("profile_distances", nlohmann::json::array())) {
            ProfileDistance d;
            d.a = dj.at("a").get<std::string>();
            d.b = dj.at("b").get<std::string>();
            if (!profile_ids.contains(d.a) || !profile_ids.contains(d.b)) {
                throw ParseError("profile distance references unknown profile " + d.a + "/" + d.b);
            }
            if (dj.contains("distance")) {
                d.distance = dj.at("distance").get<double>();
            } else {
                const auto& pa = *std::ranges::find(cfg.profiles, d.a, &ProfileSpec::id);
                d.distance = dj.at("scatter_units").get<double>() * pa.sigma;
            }
            cfg.distances.push_back(std::move(d));
        }

        std::set<std::string> question_ids;
        for (const auto& qj : j.value("questions", nlohmann::json::array())) {
            QuestionSpec q;
            q.question.id = qj.at("id").get<std::string>();
            q.question.text = detail::get_or<std::string>(qj, "text", "");
            q.distance_scale = detail::get_or(qj, "distance_scale", 1.0);
            if (!question_ids.insert(q.question.id).second) throw ParseError("duplicate question id " + q.question.id);
            cfg.questions.push_back(std::move(q));
        }

        if (j.contains("experiment")) {
            const auto& e = j.at("experiment");
            cfg.experiment.configs = detail::get_or<std::vector<std::string>>(e, "configs", {});
            for (const auto& nj : e.value("nodes", nlohmann::json::array())) {
                cfg.experiment.nodes.push_back(detail::parse_node(nj));
            }
            if (e.contains("repeats")) cfg.experiment.repeats = e.at("repeats").get<std::size_t>();
            cfg.experiment.timeout_ms = detail::get_or(e, "timeout_ms", kDefaultTimeoutMs);
            cfg.experiment.max_in_flight = detail::get_or<std::size_t>(e, "max_in_flight", 16);
        }

        if (j.contains("domain")) {
            const auto& d = j.at("domain");
            DomainSpec dom;
            dom.domain_id = detail::get_or<std::string>(d, "id", "domain");
            dom.question_set_id = detail::get_or<std::string>(d, "question_set", "default");
            dom.required_model_id = d.at("required_model").get<std::string>();
            dom.required_kb_id = detail::get_or<std::string>(d, "required_kb", "");
            dom.nodes = detail::parse_nodes(d);
            dom.validate();
            cfg.domain = std::move(dom);
        }
        if (j.contains("epoch")) {
            const auto& e = j.at("epoch");
            cfg.epoch = detail::parse_epoch(e);
            cfg.node_stake = detail::get_or<Stake>(e, "initial_stake", cfg.node_stake);
            cfg.validator_stake = detail::get_or<Stake>(e, "validator_stake", cfg.validator_stake);
            cfg.epoch.validate();
        }
        if (j.contains("candidate")) cfg.candidate = detail::parse_node(j.at("candidate"));
        cfg.candidate_deposit = detail::get_or<Stake>(j, "candidate_deposit", cfg.candidate_deposit);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    } catch (const InvalidInput& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    return cfg;
}

inline ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario(buf.str());
}

/**
 * Builds a synthetic provider from the scenario's profiles. Per question,
 * profile centers are placed around a seeded base point so that their
 * pairwise distances equal the configured distances times the question's
 * distance_scale. Profiles with an explicit center use it for every question.
 */
inline std::unique_ptr<SyntheticProvider> build_synthetic_provider(const ScenarioConfig& cfg) {
    const auto seed = cfg.require_seed();
    const std::size_t z = cfg.provider.dimension;
    if (z == 0) throw ParseError("config: synthetic provider needs a positive dimension");
    auto provider = std::make_unique<SyntheticProvider>(z, rng::StreamKey(seed).add("provider").value());

    std::vector<const ProfileSpec*> placed;
    for (const auto& p : cfg.profiles) {
        if (p.center) {
            if (p.center->size() != z) throw ParseError("config: profile " + p.id + " center has wrong dimension");
            provider->add_profile(p.id, BehaviorProfile{*p.center, p.sigma});
        } else {
            placed.push_back(&p);
        }
    }
    if (placed.empty()) return provider;

    const std::size_t k = placed.size();
    std::vector<std::vector<double>> dist(k, std::vector<double>(k, 0.0));
    std::vector<std::vector<bool>> given(k, std::vector<bool>(k, false));
    auto index_of = [&](const std::string& id) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < k; ++i) {
            if (placed[i]->id == id) return i;
        }
        return std::nullopt;
    };
    for (const auto& d : cfg.distances) {
        auto a = index_of(d.a), b = index_of(d.b);
        if (!a || !b) throw ParseError("config: distance given for a profile with an explicit center");
        dist[*a][*b] = dist[*b][*a] = d.distance;
        given[*a][*b] = given[*b][*a] = true;
    }
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a + 1; b < k; ++b) {
            if (!given[a][b]) {
                throw ParseError("config: missing profile distance " + placed[a]->id + " ~ " + placed[b]->id);
            }
        }
    }

    std::vector<QuestionSpec> questions = cfg.questions;
    if (questions.empty()) questions.push_back({{std::string(SyntheticProvider::kAnyQuestion), ""}, 1.0});
    const auto geometry_seed = rng::StreamKey(seed).add("geometry").value();
    for (const auto& q : questions) {
        auto scaled = dist;
        for (auto& row : scaled) {
            for (double& x : row) x *= q.distance_scale;
        }
        const auto base = random_unit_vector(z, geometry_seed, q.question.id);
        std::vector<EmbeddingVector> centers;
        try {
            centers = place_centers(scaled, base, rng::StreamKey(geometry_seed).add(q.question.id).value());
        } catch (const InvalidInput& e) {
            throw ParseError(std::string("config: ") + e.what());
        }
        for (std::size_t i = 0; i < k; ++i) {
            provider->add_profile(placed[i]->id, q.question.id, BehaviorProfile{centers[i], placed[i]->sigma});
        }
    }
    return provider;
}

/// Provider for the scenario: synthetic from profiles, or file/remote per ProviderConfig.
inline std::unique_ptr<EmbeddingProvider> build_provider(const ScenarioConfig& cfg) {
    if (cfg.provider.kind == ProviderConfig::Kind::synthetic) return build_synthetic_provider(cfg);
    return make_provider(cfg.provider);
}

}  // namespace llmverify
