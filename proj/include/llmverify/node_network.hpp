#pragma once

/**
 * @file node_network.hpp
 * @brief Polling nodes of a domain.
 *
 * A Poller turns (node, question, trial) into a ResponseSample. Failures are
 * evidence, so timeouts and HTTP errors become sample statuses rather than
 * exceptions. SimulatedNetwork is fully deterministic given its seed;
 * LiveNetwork talks to real nodes over the chat-completions protocol.
 */

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmverify/embedding_provider.hpp"
#include "llmverify/error.hpp"
#include "llmverify/http.hpp"
#include "llmverify/metrics.hpp"
#include "llmverify/rng.hpp"

namespace llmverify {

inline constexpr double kDefaultTimeoutMs = 30000.0;
inline constexpr std::size_t kMaxDomainNodes = 1000;
inline constexpr const char* kSystemPrompt = "You are a helpful assistant.";

struct Question {
    std::string id;
    std::string text;
};

namespace behavior {
struct Honest {};
/// Runs a different model or knowledge base; answers come from `config_id`'s profile.
struct Misconfigured {
    std::string config_id;
};
struct Slow {
    double latency_multiplier = 1.0;
};
struct Flaky {
    int error_code = 500;
    double probability = 0.0;
};
struct Dead {
    double timeout_probability = 1.0;
};
}  // namespace behavior

using Behavior = std::variant<behavior::Honest, behavior::Misconfigured, behavior::Slow, behavior::Flaky,
                              behavior::Dead>;

struct NodeConfig {
    enum class Kind { simulated, live };

    std::string node_id;
    Kind kind = Kind::simulated;
    Behavior behavior = behavior::Honest{};
    double base_latency_ms = 0.0;
    double latency_jitter_ms = 0.0;
    /// Live nodes only.
    std::string endpoint;
    std::string model;

    void validate() const {
        if (node_id.empty()) throw InvalidInput("node id must not be empty");
        if (!(base_latency_ms >= 0.0) || !(latency_jitter_ms >= 0.0)) {
            throw InvalidInput("node " + node_id + ": latencies must be >= 0");
        }
        auto check_p = [&](double p) {
            if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("node " + node_id + ": probability outside [0,1]");
        };
        if (auto* f = std::get_if<behavior::Flaky>(&behavior)) check_p(f->probability);
        if (auto* d = std::get_if<behavior::Dead>(&behavior)) check_p(d->timeout_probability);
        if (auto* s = std::get_if<behavior::Slow>(&behavior); s && !(s->latency_multiplier >= 0.0)) {
            throw InvalidInput("node " + node_id + ": latency multiplier must be >= 0");
        }
        if (kind == Kind::live && endpoint.empty()) throw InvalidInput("live node " + node_id + " needs an endpoint");
    }
};

struct DomainSpec {
    std::string domain_id;
    std::vector<NodeConfig> nodes;
    std::string question_set_id;
    std::string required_model_id;
    std::string required_kb_id;

    /// Configuration id honest nodes run: "<model>" or "<model>+<kb>".
    std::string required_config() const {
        return required_kb_id.empty() ? required_model_id : required_model_id + "+" + required_kb_id;
    }

    void validate() const {
        if (nodes.size() > kMaxDomainNodes) {
            throw InvalidInput("domain " + domain_id + " has " + std::to_string(nodes.size()) + " nodes (max 1000)");
        }
        std::set<std::string> ids;
        for (const auto& n : nodes) {
            n.validate();
            if (!ids.insert(n.node_id).second) throw InvalidInput("duplicate node id " + n.node_id);
        }
    }
};

enum class SampleStatus { ok, timeout, http_error };

struct ResponseSample {
    std::string node_id;
    std::string question_id;
    std::uint64_t trial = 0;
    SampleStatus status = SampleStatus::ok;
    /// HTTP status; 200 for ok, 0 when no valid HTTP response was received.
    int code = 200;
    std::string text;
    double latency_ms = 0.0;
    std::optional<EmbeddingVector> embedding;

    bool ok() const noexcept { return status == SampleStatus::ok; }

    friend bool operator==(const ResponseSample&, const ResponseSample&) = default;
};

class Poller {
public:
    virtual ~Poller() = default;
    virtual ResponseSample poll(const NodeConfig& node, const Question& question, std::uint64_t trial,
                                double timeout_ms) const = 0;
};

// ---------------------------------------------------------------------------

class SimulatedNetwork final : public Poller {
public:
    SimulatedNetwork(std::uint64_t seed, const EmbeddingProvider& provider, std::string honest_config)
        : seed_(seed), provider_(&provider), honest_config_(std::move(honest_config)) {}

    ResponseSample poll(const NodeConfig& node, const Question& question, std::uint64_t trial,
                        double timeout_ms) const override {
        if (!(timeout_ms > 0.0)) throw InvalidInput("timeout_ms must be positive");

        auto engine = rng::StreamKey(seed_).add("poll").add(node.node_id).add(question.id).add(trial).engine();
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::normal_distribution<double> gauss;
        const double fault_draw = unit(engine);
        const double latency_draw = gauss(engine);

        ResponseSample s;
        s.node_id = node.node_id;
        s.question_id = question.id;
        s.trial = trial;
        s.latency_ms = std::max(0.0, node.base_latency_ms + node.latency_jitter_ms * latency_draw);

        std::string config = honest_config_;
        if (auto* m = std::get_if<behavior::Misconfigured>(&node.behavior)) config = m->config_id;
        if (auto* sl = std::get_if<behavior::Slow>(&node.behavior)) s.latency_ms *= sl->latency_multiplier;
        if (auto* d = std::get_if<behavior::Dead>(&node.behavior); d && fault_draw < d->timeout_probability) {
            return timed_out(std::move(s), timeout_ms);
        }
        if (auto* f = std::get_if<behavior::Flaky>(&node.behavior); f && fault_draw < f->probability) {
            s.status = SampleStatus::http_error;
            s.code = f->error_code;
            s.latency_ms = std::min(s.latency_ms, timeout_ms);
            return s;
        }
        if (s.latency_ms > timeout_ms) return timed_out(std::move(s), timeout_ms);

        std::ostringstream text;
        text << "answer-" << std::hex << std::setw(16) << std::setfill('0')
             << rng::StreamKey(seed_).add("text").add(config).add(question.id).add(trial).value();
        s.text = text.str();
        s.embedding = provider_->embed(s.text, {question.id, config, node.node_id, trial});
        return s;
    }

private:
    static ResponseSample timed_out(ResponseSample s, double timeout_ms) {
        s.status = SampleStatus::timeout;
        s.code = 0;
        s.latency_ms = timeout_ms;
        return s;
    }

    std::uint64_t seed_;
    const EmbeddingProvider* provider_;
    std::string honest_config_;
};

// ---------------------------------------------------------------------------

/// Polls real nodes at `<endpoint>/v1/chat/completions` and embeds answers validator-side.
class LiveNetwork final : public Poller {
public:
    LiveNetwork(const EmbeddingProvider& provider, std::string default_model)
        : provider_(&provider), default_model_(std::move(default_model)) {}

    static nlohmann::json chat_request(const std::string& model, const std::string& question) {
        return {{"model", model},
                {"messages",
                 nlohmann::json::array({{{"role", "system"}, {"content", kSystemPrompt}},
                                        {{"role", "user"}, {"content", question}}})}};
    }

    ResponseSample poll(const NodeConfig& node, const Question& question, std::uint64_t trial,
                        double timeout_ms) const override {
        if (!(timeout_ms > 0.0)) throw InvalidInput("timeout_ms must be positive");
        ResponseSample s;
        s.node_id = node.node_id;
        s.question_id = question.id;
        s.trial = trial;

        const auto endpoint = http::split_endpoint(node.endpoint);
        const auto timeout = std::chrono::milliseconds(static_cast<std::int64_t>(std::ceil(timeout_ms)));
        auto client = http::make_client(endpoint, timeout);
        const auto body = chat_request(node.model.empty() ? default_model_ : node.model, question.text);

        const auto start = std::chrono::steady_clock::now();
        auto res = client->Post(endpoint.prefix + "/v1/chat/completions", body.dump(), "application/json");
        s.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

        if (!res) {
            const auto err = res.error();
            const bool timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                                   err == httplib::Error::Write || s.latency_ms >= timeout_ms;
            s.status = timed_out ? SampleStatus::timeout : SampleStatus::http_error;
            s.code = 0;
            if (timed_out) s.latency_ms = timeout_ms;
            return s;
        }
        if (s.latency_ms > timeout_ms) {
            s.status = SampleStatus::timeout;
            s.code = 0;
            s.latency_ms = timeout_ms;
            return s;
        }
        if (res->status < 200 || res->status >= 300) {
            s.status = SampleStatus::http_error;
            s.code = res->status;
            return s;
        }
        try {
            const auto j = nlohmann::json::parse(res->body);
            s.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            s.status = SampleStatus::http_error;
            s.code = 0;
            return s;
        }
        s.code = res->status;
        s.embedding = provider_->embed(s.text, {question.id, node.node_id, node.node_id, trial});
        return s;
    }

private:
    const EmbeddingProvider* provider_;
    std::string default_model_;
};

// ---------------------------------------------------------------------------

struct PollOptions {
    std::size_t repeats = 1;
    double timeout_ms = kDefaultTimeoutMs;
    /// Trial index of the first repeat; lets independent rounds draw fresh samples.
    std::uint64_t trial_base = 0;
    std::size_t max_in_flight = 16;
};

/**
 * Polls every node `repeats` times with one question.
 *
 * Returns nodes.size() * repeats samples ordered by (node_id, trial),
 * independent of completion order or the in-flight limit.
 */
inline std::vector<ResponseSample> poll_round(const Poller& poller, std::span<const NodeConfig> nodes,
                                              const Question& question, const PollOptions& opts) {
    if (opts.repeats == 0) throw InvalidInput("repeats must be >= 1");
    if (!(opts.timeout_ms > 0.0)) throw InvalidInput("timeout_ms must be positive");

    std::vector<const NodeConfig*> order;
    order.reserve(nodes.size());
    for (const auto& n : nodes) order.push_back(&n);
    std::ranges::sort(order, {}, &NodeConfig::node_id);

    const std::size_t total = order.size() * opts.repeats;
    std::vector<ResponseSample> out(total);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;

    auto work = [&] {
        for (std::size_t idx = next++; idx < total; idx = next++) {
            const auto& node = *order[idx / opts.repeats];
            const std::uint64_t trial = opts.trial_base + idx % opts.repeats;
            try {
                out[idx] = poller.poll(node, question, trial, opts.timeout_ms);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next = total;
            }
        }
    };

    const std::size_t workers = std::min(std::max<std::size_t>(opts.max_in_flight, 1), total);
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work);
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

inline std::vector<ResponseSample> poll_round(const Poller& poller, const DomainSpec& domain, const Question& question,
                                              const PollOptions& opts) {
    return poll_round(poller, std::span<const NodeConfig>(domain.nodes), question, opts);
}

// ---------------------------------------------------------------------------
// JSONL persistence: {"m","q","i","status","code","latency_ms","text","v"}

inline std::string to_string(SampleStatus s) {
    switch (s) {
        case SampleStatus::ok: return "ok";
        case SampleStatus::timeout: return "timeout";
        case SampleStatus::http_error: return "http_error";
    }
    return "unknown";
}

inline SampleStatus parse_status(const std::string& s) {
    if (s == "ok") return SampleStatus::ok;
    if (s == "timeout") return SampleStatus::timeout;
    if (s == "http_error") return SampleStatus::http_error;
    throw InvalidInput("unknown sample status '" + s + "'");
}

inline nlohmann::json to_json(const ResponseSample& s) {
    nlohmann::json j;
    j["m"] = s.node_id;
    j["q"] = s.question_id;
    j["i"] = s.trial;
    j["status"] = to_string(s.status);
    j["code"] = s.status == SampleStatus::timeout ? nlohmann::json(nullptr) : nlohmann::json(s.code);
    j["latency_ms"] = s.latency_ms;
    j["text"] = s.text;
    j["v"] = s.embedding ? nlohmann::json(*s.embedding) : nlohmann::json(nullptr);
    return j;
}

/// Reads a sample line. Lines without "status" (embedding-store records) count as ok samples.
inline ResponseSample sample_from_json(const nlohmann::json& j) {
    ResponseSample s;
    s.node_id = j.at("m").get<std::string>();
    s.question_id = j.at("q").get<std::string>();
    s.trial = j.at("i").get<std::uint64_t>();
    s.status = j.contains("status") ? parse_status(j.at("status").get<std::string>()) : SampleStatus::ok;
    if (j.contains("code") && !j.at("code").is_null()) {
        s.code = j.at("code").get<int>();
    } else {
        s.code = s.status == SampleStatus::ok ? 200 : 0;
    }
    s.latency_ms = j.value("latency_ms", 0.0);
    s.text = j.value("text", std::string());
    if (j.contains("v") && !j.at("v").is_null()) s.embedding = j.at("v").get<EmbeddingVector>();
    if (s.ok() != s.embedding.has_value()) throw InvalidInput("embedding must be present iff status is ok");
    return s;
}

inline void write_samples_jsonl(std::ostream& out, std::span<const ResponseSample> samples) {
    for (const auto& s : samples) out << to_json(s).dump() << '\n';
}

inline std::vector<ResponseSample> read_samples_jsonl(std::istream& in) {
    std::vector<ResponseSample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(sample_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), line_no);
        } catch (const InvalidInput& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    return out;
}

inline std::vector<ResponseSample> read_samples_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("cannot open samples file: " + path);
    return read_samples_jsonl(in);
}

}  // namespace llmverify
