#pragma once

/**
 * @file embedding_provider.hpp
 * @brief Sources of answer embeddings.
 *
 * Three providers share one interface:
 *  - SyntheticProvider: Gaussian clusters around configured centers, seeded per
 *    (question, config, node, trial) so polling order never changes output.
 *  - EmbeddingStore: precomputed vectors loaded from a JSONL file.
 *  - RemoteEmbeddingClient: a JSON embeddings endpoint.
 */

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <semaphore>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmverify/error.hpp"
#include "llmverify/http.hpp"
#include "llmverify/metrics.hpp"
#include "llmverify/rng.hpp"

namespace llmverify {

/// Which answer is being embedded. `config_id` names the model/knowledge-base
/// configuration the node actually runs; `node_id` the node that produced it.
struct EmbedContext {
    std::string question_id;
    std::string config_id;
    std::string node_id;
    std::uint64_t trial = 0;
};

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    /// Output dimension z; 0 for an empty store.
    virtual std::size_t dimension() const = 0;
    virtual EmbeddingVector embed(std::string_view text, const EmbedContext& ctx) const = 0;
};

struct BehaviorProfile {
    EmbeddingVector center;
    double per_dim_sigma = 0.0;
};

// ---------------------------------------------------------------------------
// Synthetic

class SyntheticProvider final : public EmbeddingProvider {
public:
    /// Profile registered for every question of a config.
    static constexpr std::string_view kAnyQuestion = "*";

    SyntheticProvider(std::size_t dimension, std::uint64_t seed) : dim_(dimension), seed_(seed) {
        if (dimension == 0) throw InvalidInput("synthetic provider dimension must be >= 1");
    }

    void add_profile(const std::string& config_id, const std::string& question_id, BehaviorProfile profile) {
        validate_embedding(profile.center, dim_);
        if (!(profile.per_dim_sigma >= 0.0) || !std::isfinite(profile.per_dim_sigma)) {
            throw InvalidInput("per_dim_sigma must be finite and >= 0");
        }
        profiles_[{config_id, question_id}] = std::move(profile);
    }

    void add_profile(const std::string& config_id, BehaviorProfile profile) {
        add_profile(config_id, std::string(kAnyQuestion), std::move(profile));
    }

    const BehaviorProfile& profile(const std::string& config_id, const std::string& question_id) const {
        if (auto it = profiles_.find({config_id, question_id}); it != profiles_.end()) return it->second;
        if (auto it = profiles_.find({config_id, std::string(kAnyQuestion)}); it != profiles_.end()) return it->second;
        throw NotFound("no behavior profile for config '" + config_id + "' question '" + question_id + "'");
    }

    bool has_config(const std::string& config_id) const {
        for (const auto& [key, _] : profiles_) {
            if (key.first == config_id) return true;
        }
        return false;
    }

    std::size_t dimension() const override { return dim_; }
    std::uint64_t seed() const noexcept { return seed_; }

    EmbeddingVector embed(std::string_view /*text*/, const EmbedContext& ctx) const override {
        const auto& p = profile(ctx.config_id, ctx.question_id);
        EmbeddingVector v = p.center;
        if (p.per_dim_sigma == 0.0) return v;
        auto engine = rng::StreamKey(seed_)
                          .add("embed")
                          .add(ctx.question_id)
                          .add(ctx.config_id)
                          .add(ctx.node_id)
                          .add(ctx.trial)
                          .engine();
        std::normal_distribution<double> noise(0.0, p.per_dim_sigma);
        for (double& x : v) x += noise(engine);
        return v;
    }

private:
    std::size_t dim_;
    std::uint64_t seed_;
    std::map<std::pair<std::string, std::string>, BehaviorProfile> profiles_;
};

/**
 * Places k points with the given pairwise distances around `base`.
 *
 * Coordinates come from a Cholesky factorization of the Gram matrix relative
 * to point 0 and are laid along k-1 seeded random orthonormal directions.
 * Throws InvalidInput when the matrix is not Euclidean (within 1e-9 relative).
 */
inline std::vector<EmbeddingVector> place_centers(const std::vector<std::vector<double>>& distances,
                                                  const EmbeddingVector& base, std::uint64_t seed) {
    const std::size_t k = distances.size();
    const std::size_t z = base.size();
    if (k == 0) return {};
    for (const auto& row : distances) {
        if (row.size() != k) throw InvalidInput("distance matrix must be square");
    }
    if (k - 1 > z) throw InvalidInput("more profiles than embedding dimensions allow");
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            if (!(distances[i][j] >= 0.0) || std::abs(distances[i][j] - distances[j][i]) > 1e-12 ||
                (i == j && distances[i][j] != 0.0)) {
                throw InvalidInput("distance matrix must be symmetric, non-negative, zero-diagonal");
            }
        }
    }

    const std::size_t m = k - 1;
    double scale = 0.0;
    for (const auto& row : distances) {
        for (double d : row) scale = std::max(scale, d * d);
    }
    std::vector<std::vector<double>> gram(m, std::vector<double>(m));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double a = distances[0][i + 1], b = distances[0][j + 1], c = distances[i + 1][j + 1];
            gram[i][j] = (a * a + b * b - c * c) / 2.0;
        }
    }
    std::vector<std::vector<double>> coords(m, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = gram[i][j];
            for (std::size_t t = 0; t < j; ++t) s -= coords[i][t] * coords[j][t];
            if (i == j) {
                if (s < -1e-9 * std::max(scale, 1e-300)) throw InvalidInput("distance matrix is not Euclidean");
                coords[i][i] = std::sqrt(std::max(s, 0.0));
            } else {
                coords[i][j] = coords[j][j] > 0.0 ? s / coords[j][j] : 0.0;
                if (coords[j][j] == 0.0 && std::abs(s) > 1e-9 * std::max(scale, 1e-300)) {
                    throw InvalidInput("distance matrix is not Euclidean");
                }
            }
        }
    }

    // Random orthonormal directions via Gram-Schmidt on Gaussian draws.
    auto engine = rng::StreamKey(seed).add("directions").engine();
    std::normal_distribution<double> gauss;
    std::vector<EmbeddingVector> dirs;
    while (dirs.size() < m) {
        EmbeddingVector d(z);
        for (double& x : d) x = gauss(engine);
        for (const auto& e : dirs) {
            double dot = 0.0;
            for (std::size_t j = 0; j < z; ++j) dot += d[j] * e[j];
            for (std::size_t j = 0; j < z; ++j) d[j] -= dot * e[j];
        }
        double norm = 0.0;
        for (double x : d) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-8) continue;
        for (double& x : d) x /= norm;
        dirs.push_back(std::move(d));
    }

    std::vector<EmbeddingVector> centers(k, base);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < m; ++t) {
            const double c = coords[i][t];
            if (c == 0.0) continue;
            for (std::size_t j = 0; j < z; ++j) centers[i + 1][j] += c * dirs[t][j];
        }
    }
    return centers;
}

/// Seeded random point with unit norm; used as a question's base answer position.
inline EmbeddingVector random_unit_vector(std::size_t z, std::uint64_t seed, std::string_view label) {
    auto engine = rng::StreamKey(seed).add("unit").add(label).engine();
    std::normal_distribution<double> gauss;
    EmbeddingVector v(z);
    double norm = 0.0;
    for (double& x : v) {
        x = gauss(engine);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

// ---------------------------------------------------------------------------
// File-backed store

struct StoreKey {
    std::string question_id;
    std::string node_id;
    std::uint64_t trial = 0;

    auto operator<=>(const StoreKey&) const = default;
};

struct StoreRecord {
    StoreKey key;
    EmbeddingVector vector;
};

class EmbeddingStore final : public EmbeddingProvider {
public:
    EmbeddingStore() = default;

    void insert(StoreKey key, EmbeddingVector v) {
        validate_embedding(v, dim_);
        if (dim_ == 0) dim_ = v.size();
        entries_[std::move(key)] = std::move(v);
    }

    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t dimension() const override { return dim_; }

    const EmbeddingVector& at(const StoreKey& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) {
            throw NotFound("no stored embedding for (" + key.question_id + ", " + key.node_id + ", " +
                           std::to_string(key.trial) + ")");
        }
        return it->second;
    }

    EmbeddingVector embed(std::string_view /*text*/, const EmbedContext& ctx) const override {
        return at({ctx.question_id, ctx.node_id, ctx.trial});
    }

    const std::map<StoreKey, EmbeddingVector>& entries() const noexcept { return entries_; }

private:
    std::size_t dim_ = 0;
    std::map<StoreKey, EmbeddingVector> entries_;
};

/// Parses one store line {"q","m","i","v"}. `line_no` feeds error messages.
inline StoreRecord parse_store_line(std::string_view line, std::size_t line_no) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(e.what(), line_no);
    }
    try {
        StoreRecord r;
        r.key.question_id = j.at("q").get<std::string>();
        r.key.node_id = j.at("m").get<std::string>();
        r.key.trial = j.at("i").get<std::uint64_t>();
        r.vector = j.at("v").get<EmbeddingVector>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad store record: ") + e.what(), line_no);
    }
}

inline EmbeddingStore load_embedding_store(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("cannot open embedding store: " + path);
    EmbeddingStore store;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto rec = parse_store_line(line, line_no);
        try {
            store.insert(std::move(rec.key), std::move(rec.vector));
        } catch (const InvalidInput& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    return store;
}

inline void write_embedding_store(const std::string& path, const EmbeddingStore& store) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write embedding store: " + path);
    for (const auto& [key, v] : store.entries()) {
        nlohmann::json j;
        j["q"] = key.question_id;
        j["m"] = key.node_id;
        j["i"] = key.trial;
        j["v"] = v;
        out << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Remote

struct RemoteEmbeddingOptions {
    std::string endpoint;
    std::string model;
    /// Bearer token; empty sends no Authorization header.
    std::string token;
    std::size_t dimension = 0;
    std::size_t max_in_flight = 8;
    std::chrono::milliseconds timeout{30000};
};

/**
 * Client for a JSON embeddings endpoint at `<endpoint>/v1/embeddings`.
 * Request: {"model": ..., "input": [text]}. Accepts either
 * {"data":[{"embedding":[...]}]} or a bare [[...]] response.
 */
class RemoteEmbeddingClient final : public EmbeddingProvider {
public:
    explicit RemoteEmbeddingClient(RemoteEmbeddingOptions opts)
        : opts_(std::move(opts)),
          endpoint_(http::split_endpoint(opts_.endpoint)),
          slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(opts_.max_in_flight, 1, kMaxInFlight))) {
        if (opts_.dimension == 0) throw InvalidInput("remote embedding dimension must be >= 1");
    }

    std::size_t dimension() const override { return opts_.dimension; }

    EmbeddingVector embed(std::string_view text, const EmbedContext& /*ctx*/) const override {
        nlohmann::json body;
        body["model"] = opts_.model;
        body["input"] = nlohmann::json::array({std::string(text)});

        slots_.acquire();
        httplib::Result res;
        {
            auto client = http::make_client(endpoint_, opts_.timeout);
            httplib::Headers headers;
            if (!opts_.token.empty()) headers.emplace("Authorization", "Bearer " + opts_.token);
            res = client->Post(endpoint_.prefix + "/v1/embeddings", headers, body.dump(), "application/json");
        }
        slots_.release();

        if (!res) throw TransportError("embedding request failed: " + httplib::to_string(res.error()));
        if (res->status < 200 || res->status >= 300) {
            throw TransportError("embedding service returned HTTP " + std::to_string(res->status));
        }
        EmbeddingVector v;
        try {
            const auto j = nlohmann::json::parse(res->body);
            if (j.is_array()) {
                v = j.at(0).get<EmbeddingVector>();
            } else {
                v = j.at("data").at(0).at("embedding").get<EmbeddingVector>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("malformed embedding response: ") + e.what());
        }
        validate_embedding(v, opts_.dimension);
        return v;
    }

private:
    static constexpr std::size_t kMaxInFlight = 1024;

    RemoteEmbeddingOptions opts_;
    http::Endpoint endpoint_;
    mutable std::counting_semaphore<kMaxInFlight> slots_;
};

// ---------------------------------------------------------------------------

struct ProviderConfig {
    enum class Kind { synthetic, file, remote };

    Kind kind = Kind::synthetic;
    std::size_t dimension = 0;
    std::uint64_t seed = 0;
    std::string path;
    std::string endpoint;
    std::string model;
    /// Name of the environment variable holding the auth token.
    std::string token_env;
    std::size_t max_in_flight = 8;
};

/// Builds a file or remote provider. Synthetic providers need profiles and are built by the scenario loader.
inline std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& cfg) {
    switch (cfg.kind) {
        case ProviderConfig::Kind::synthetic:
            return std::make_unique<SyntheticProvider>(cfg.dimension, cfg.seed);
        case ProviderConfig::Kind::file: {
            auto store = std::make_unique<EmbeddingStore>(load_embedding_store(cfg.path));
            if (cfg.dimension != 0 && store->dimension() != 0 && store->dimension() != cfg.dimension) {
                throw InvalidInput("embedding store dimension " + std::to_string(store->dimension()) +
                                   " != configured " + std::to_string(cfg.dimension));
            }
            return store;
        }
        case ProviderConfig::Kind::remote: {
            RemoteEmbeddingOptions o;
            o.endpoint = cfg.endpoint;
            o.model = cfg.model;
            o.dimension = cfg.dimension;
            o.max_in_flight = cfg.max_in_flight;
            if (!cfg.token_env.empty()) {
                if (const char* t = std::getenv(cfg.token_env.c_str())) o.token = t;
            }
            return std::make_unique<RemoteEmbeddingClient>(std::move(o));
        }
    }
    throw InvalidInput("unknown provider kind");
}

}  // namespace llmverify
