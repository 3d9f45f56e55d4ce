#pragma once

/**
 * @file cli.hpp
 * @brief Operator commands behind the `llmverify` executable.
 *
 * Every command returns a process exit code: 0 success, 1 runtime failure,
 * 2 configuration or usage error. Artifacts of a run are byte-identical for
 * identical (config, seed); the only wall-clock data lives in metadata.json,
 * which the manifest does not cover.
 */

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmverify/bulletin_board.hpp"
#include "llmverify/embedding_provider.hpp"
#include "llmverify/epoch_engine.hpp"
#include "llmverify/error.hpp"
#include "llmverify/experiment.hpp"
#include "llmverify/node_network.hpp"
#include "llmverify/question_ranker.hpp"
#include "llmverify/scenario.hpp"
#include "llmverify/signer.hpp"
#include "llmverify/stake.hpp"

namespace llmverify::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

inline constexpr const char* kVersion = "0.1.0";

/// Global flags shared by every subcommand; set values override the config file.
struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::size_t> repeats;
    std::optional<double> timeout_ms;
};

namespace detail {

namespace fs = std::filesystem;

/// Writes files and remembers them for the manifest.
class ArtifactWriter {
public:
    explicit ArtifactWriter(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    const fs::path& dir() const noexcept { return dir_; }

    void write(const std::string& name, const std::string& content) {
        const auto path = dir_ / name;
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << content;
        if (!out) throw Error("cannot write " + path.string());
        artifacts_[name] = sha256_hex(content);
    }

    /// Registers a file produced elsewhere (e.g. the bulletin board log).
    void adopt(const std::string& name) {
        std::ifstream in(dir_ / name, std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        artifacts_[name] = sha256_hex(buf.str());
    }

    void finish(const std::string& command, const std::string& config_sha, std::optional<std::uint64_t> seed) {
        nlohmann::json manifest;
        manifest["command"] = command;
        manifest["config_sha256"] = config_sha;
        manifest["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
        manifest["tool_version"] = kVersion;
        auto list = nlohmann::json::array();
        for (const auto& [name, sha] : artifacts_) list.push_back({{"name", name}, {"sha256", sha}});
        manifest["artifacts"] = std::move(list);
        write_raw("manifest.json", manifest.dump(2) + "\n");

        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::ostringstream ts;
        ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
        nlohmann::json meta{{"finished_at", ts.str()}, {"command", command}};
        write_raw("metadata.json", meta.dump(2) + "\n");
    }

private:
    void write_raw(const std::string& name, const std::string& content) {
        std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
        out << content;
    }

    fs::path dir_;
    std::map<std::string, std::string> artifacts_;
};

inline ScenarioConfig load_with_overrides(const CommonOptions& opts) {
    if (opts.config_path.empty()) throw ParseError("--config is required");
    auto cfg = load_scenario(opts.config_path);
    if (opts.seed) cfg.seed = opts.seed;
    if (opts.out_dir) cfg.output_dir = *opts.out_dir;
    if (opts.repeats) {
        cfg.experiment.repeats = *opts.repeats;
        cfg.epoch.repeats = *opts.repeats;
    }
    if (opts.timeout_ms) {
        cfg.experiment.timeout_ms = *opts.timeout_ms;
        cfg.epoch.timeout_ms = *opts.timeout_ms;
    }
    if (cfg.output_dir.empty()) throw ParseError("an output directory is required (config \"output_dir\" or --out)");
    try {
        cfg.epoch.validate();
    } catch (const InvalidInput& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    return cfg;
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

inline std::string samples_jsonl(std::span<const ResponseSample> samples) {
    std::ostringstream out;
    write_samples_jsonl(out, samples);
    return out.str();
}

inline void write_analysis(ArtifactWriter& w, const ExperimentReport& rep) {
    w.write("clusters.csv", clusters_csv(rep));
    w.write("distances.csv", distances_csv(rep));
    w.write("summary.csv", summary_csv(rep));
}

inline std::string flag_names(const FlagSet& flags) {
    std::string out;
    for (const auto& f : flags.flags()) {
        if (!out.empty()) out += ',';
        out += to_string(f.kind);
    }
    return out;
}

/// Domain nodes, one validator set, and a seeded ledger for epoch-style commands.
struct EpochSetup {
    std::unique_ptr<EmbeddingProvider> provider;
    std::unique_ptr<Poller> poller;
    HmacSigner signer;
    Ledger ledger;
};

inline EpochSetup make_epoch_setup(const ScenarioConfig& cfg) {
    if (!cfg.domain) throw ParseError("config: a \"domain\" section is required");
    if (cfg.questions.empty()) throw ParseError("config: at least one question is required");
    if (cfg.epoch.validators.empty()) throw ParseError("config: epoch.validators must not be empty");
    const auto seed = cfg.require_seed();

    EpochSetup s;
    s.provider = build_provider(cfg);
    const bool live = std::ranges::any_of(cfg.domain->nodes, [](const NodeConfig& n) {
        return n.kind == NodeConfig::Kind::live;
    });
    if (live) {
        s.poller = std::make_unique<LiveNetwork>(*s.provider, cfg.domain->required_model_id);
    } else {
        s.poller = std::make_unique<SimulatedNetwork>(rng::StreamKey(seed).add("network").value(), *s.provider,
                                                      cfg.domain->required_config());
    }
    s.signer = HmacSigner::with_derived_keys(cfg.epoch.validators, rng::StreamKey(seed).add("keys").value());
    for (const auto& n : cfg.domain->nodes) s.ledger.open(n.node_id, AccountRole::node, cfg.node_stake);
    for (const auto& v : cfg.epoch.validators) s.ledger.open(v, AccountRole::validator, cfg.validator_stake);
    return s;
}

}  // namespace detail

/**
 * Polls every configuration with every question `repeats` times and writes
 * samples.jsonl plus the cluster, distance and summary CSVs.
 *
 * With a file provider and no configured questions/configs, both are taken
 * from the store, and repeats defaults to the number of stored trials.
 */
inline int cmd_experiment(const CommonOptions& opts, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        auto cfg = detail::load_with_overrides(opts);
        const auto seed = cfg.require_seed();
        auto provider = build_provider(cfg);

        std::vector<Question> questions = cfg.question_list();
        std::vector<std::string> configs = cfg.experiment.configs;
        std::size_t repeats = cfg.experiment.repeats.value_or(25);
        if (auto* store = dynamic_cast<const EmbeddingStore*>(provider.get())) {
            std::set<std::string> qs, ms;
            std::map<std::pair<std::string, std::string>, std::size_t> trials;
            for (const auto& [key, _] : store->entries()) {
                qs.insert(key.question_id);
                ms.insert(key.node_id);
                ++trials[{key.question_id, key.node_id}];
            }
            if (questions.empty()) {
                for (const auto& q : qs) questions.push_back({q, ""});
            }
            if (configs.empty() && cfg.experiment.nodes.empty()) configs.assign(ms.begin(), ms.end());
            if (!cfg.experiment.repeats) {
                repeats = 0;
                for (const auto& [_, n] : trials) repeats = std::max(repeats, n);
            }
        }
        if (questions.empty()) throw ParseError("config: no questions");
        if (repeats == 0) throw ParseError("config: repeats must be >= 1");

        std::vector<NodeConfig> nodes = cfg.experiment.nodes;
        for (const auto& c : configs) {
            NodeConfig n;
            n.node_id = c;
            n.behavior = behavior::Misconfigured{c};
            nodes.push_back(std::move(n));
        }
        if (nodes.empty()) throw ParseError("config: experiment needs configs or nodes");

        std::unique_ptr<Poller> poller;
        const bool live = std::ranges::any_of(nodes, [](const NodeConfig& n) { return n.kind == NodeConfig::Kind::live; });
        if (live) {
            poller = std::make_unique<LiveNetwork>(*provider, cfg.domain ? cfg.domain->required_model_id : "");
        } else {
            poller = std::make_unique<SimulatedNetwork>(rng::StreamKey(seed).add("network").value(), *provider, "");
        }

        std::vector<ResponseSample> samples;
        for (const auto& q : questions) {
            auto round = poll_round(*poller, nodes, q,
                                    {repeats, cfg.experiment.timeout_ms, 0, cfg.experiment.max_in_flight});
            samples.insert(samples.end(), round.begin(), round.end());
        }
        const auto report = analyze_samples(samples);

        detail::ArtifactWriter w(cfg.output_dir);
        w.write("samples.jsonl", detail::samples_jsonl(samples));
        detail::write_analysis(w, report);
        w.finish("experiment", cfg.source_sha256, cfg.seed);

        log << "experiment: " << questions.size() << " questions x " << nodes.size() << " configs x " << repeats
            << " repeats -> " << samples.size() << " samples\n";
        log << summary_csv(report);
        return kExitOk;
    });
}

/**
 * Runs `epochs` simulated epochs and writes epochs/epoch_NNNN.json,
 * bulletin.jsonl and ledger.json.
 */
inline int cmd_epoch(const CommonOptions& opts, std::uint64_t epochs, std::ostream& log = std::cout,
                     std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        auto cfg = detail::load_with_overrides(opts);
        auto setup = detail::make_epoch_setup(cfg);
        detail::ArtifactWriter w(cfg.output_dir);
        std::filesystem::remove(w.dir() / "bulletin.jsonl");
        std::filesystem::remove_all(w.dir() / "epochs");

        BulletinBoard board((w.dir() / "bulletin.jsonl").string());
        EpochEngine engine(*cfg.domain, cfg.question_list(), *setup.poller, setup.signer, board, setup.ledger,
                           cfg.epoch, rng::StreamKey(cfg.require_seed()).add("epoch").value());

        for (std::uint64_t i = 0; i < epochs; ++i) {
            const auto outcome = engine.run_epoch();
            std::ostringstream name;
            name << "epochs/epoch_" << std::setw(4) << std::setfill('0') << outcome.epoch << ".json";
            w.write(name.str(), to_json(outcome).dump(2) + "\n");

            std::size_t flagged = 0;
            for (const auto& [_, f] : outcome.node_verdicts) flagged += f.empty() ? 0 : 1;
            log << "epoch " << outcome.epoch << ": " << outcome.polled_nodes.size() << " nodes polled, " << flagged
                << " flagged, " << outcome.stake_mutations.size() << " stake mutations, aggregator "
                << outcome.aggregator << '\n';
        }
        w.adopt("bulletin.jsonl");
        w.write("ledger.json", to_json(setup.ledger).dump(2) + "\n");
        w.finish("epoch", cfg.source_sha256, cfg.seed);
        return kExitOk;
    });
}

/// Polls the configured candidate against the domain and writes admission.json.
inline int cmd_admit(const CommonOptions& opts, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        auto cfg = detail::load_with_overrides(opts);
        if (!cfg.candidate) throw ParseError("config: a \"candidate\" node is required");
        auto setup = detail::make_epoch_setup(cfg);
        BulletinBoard board;
        EpochEngine engine(*cfg.domain, cfg.question_list(), *setup.poller, setup.signer, board, setup.ledger,
                           cfg.epoch, rng::StreamKey(cfg.require_seed()).add("epoch").value());
        const auto a = engine.admit(*cfg.candidate, cfg.candidate_deposit);

        detail::ArtifactWriter w(cfg.output_dir);
        nlohmann::json j{{"candidate", cfg.candidate->node_id}, {"admitted", a.admitted}, {"reason", to_json(a.reason)}};
        w.write("admission.json", j.dump(2) + "\n");
        w.finish("admit", cfg.source_sha256, cfg.seed);
        log << (a.admitted ? "admit" : "reject: " + detail::flag_names(a.reason)) << '\n';
        return kExitOk;
    });
}

/// Ranks questions from a samples or embedding-store JSONL file; CSV to `log` and optionally ranking.csv.
inline int cmd_rank(const std::string& samples_path, const std::optional<std::string>& out_dir,
                    std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        if (samples_path.empty()) throw ParseError("--samples is required");
        std::vector<ResponseSample> samples;
        try {
            samples = read_samples_jsonl(samples_path);
        } catch (const NotFound& e) {
            throw ParseError(e.what());
        }
        if (samples.empty()) throw ParseError("no samples in " + samples_path);
        std::vector<QuestionStats> ranked;
        try {
            ranked = rank_questions(samples);
        } catch (const InvalidInput& e) {
            throw ParseError(e.what());
        }
        const auto csv = ranking_csv(ranked, configurations_of(samples));
        if (out_dir) {
            detail::ArtifactWriter w(*out_dir);
            w.write("ranking.csv", csv);
            w.finish("rank", sha256_hex(samples_path), std::nullopt);
        }
        log << csv;
        return kExitOk;
    });
}

/// Recomputes the experiment CSVs from a stored samples or embedding-store file.
inline int cmd_replay(const std::string& samples_path, const std::optional<std::string>& out_dir,
                      std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        if (samples_path.empty()) throw ParseError("--samples is required");
        if (!out_dir) throw ParseError("--out is required");
        std::vector<ResponseSample> samples;
        try {
            samples = read_samples_jsonl(samples_path);
        } catch (const NotFound& e) {
            throw ParseError(e.what());
        }
        const auto report = analyze_samples(samples);
        detail::ArtifactWriter w(*out_dir);
        detail::write_analysis(w, report);
        w.finish("replay", sha256_hex(samples_path), std::nullopt);
        log << summary_csv(report);
        return kExitOk;
    });
}

}  // namespace llmverify::cli
