#pragma once

/**
 * @file epoch_engine.hpp
 * @brief Epoch lifecycle: validator rounds, aggregation, economics, admission.
 *
 * Each epoch every active validator runs `rounds_per_epoch` poll-and-detect
 * rounds on the active nodes, signs one message per round and posts it to the
 * bulletin board. A validator drawn uniformly from a seeded stream then
 * aggregates all verified messages: a node carries flag F for the epoch iff a
 * strict majority of the validators reporting on it raised F in at least one
 * round. The verdict is applied to the stake ledger.
 */

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmverify/bulletin_board.hpp"
#include "llmverify/detector.hpp"
#include "llmverify/error.hpp"
#include "llmverify/node_network.hpp"
#include "llmverify/rng.hpp"
#include "llmverify/signer.hpp"
#include "llmverify/stake.hpp"

namespace llmverify {

struct EpochConfig {
    std::chrono::milliseconds epoch_duration = std::chrono::hours(12);
    std::uint64_t rounds_per_epoch = 6;
    std::vector<std::string> validators;
    std::size_t repeats = 8;
    double timeout_ms = kDefaultTimeoutMs;
    std::size_t max_in_flight = 16;
    DetectorOptions detector;
    EconomicsConfig economics;

    void validate() const {
        if (epoch_duration.count() <= 0) throw InvalidInput("epoch duration must be positive");
        if (rounds_per_epoch == 0) throw InvalidInput("rounds_per_epoch must be >= 1");
        if (repeats == 0) throw InvalidInput("repeats must be >= 1");
        if (!(timeout_ms > 0.0)) throw InvalidInput("timeout_ms must be positive");
        std::set<std::string> seen;
        for (const auto& v : validators) {
            if (!seen.insert(v).second) throw InvalidInput("duplicate validator id " + v);
        }
        economics.validate();
    }
};

// ---------------------------------------------------------------------------
// Aggregation

struct AggregateResult {
    std::map<std::string, FlagSet> node_flags;
    /// One entry per reporting validator (zero marks included).
    std::map<std::string, std::uint64_t> validator_marks;
    std::size_t duplicates_rejected = 0;
};

/**
 * Map-reduce over one epoch's verified messages. A duplicate (validator,
 * round) pair keeps the first message seen. A validator is marked once per
 * (node, flag kind) where its vote did not belong to a strict majority, so a
 * tie marks both sides.
 */
inline AggregateResult aggregate(std::span<const ValidatorMessage> messages) {
    if (messages.empty()) throw ProtocolError("no validator messages to aggregate");

    AggregateResult out;
    std::set<std::pair<std::string, std::uint64_t>> seen;
    // node -> validator -> union of that validator's flags on the node
    std::map<std::string, std::map<std::string, FlagSet>> votes;
    for (const auto& m : messages) {
        if (!seen.emplace(m.validator_id, m.round).second) {
            ++out.duplicates_rejected;
            continue;
        }
        out.validator_marks.try_emplace(m.validator_id, 0);
        for (const auto& r : m.reports) votes[r.node_id][m.validator_id].merge(r.flags);
    }

    for (const auto& [node, by_validator] : votes) {
        const std::size_t reporting = by_validator.size();
        FlagSet verdict;
        for (auto kind : kAllFlagKinds) {
            std::size_t raised = 0;
            double evidence = 0.0;
            for (const auto& [v, flags] : by_validator) {
                if (auto e = flags.evidence(kind)) {
                    evidence = raised == 0 ? *e : std::max(evidence, *e);
                    ++raised;
                }
            }
            if (2 * raised > reporting) verdict.set(kind, evidence);
            for (const auto& [v, flags] : by_validator) {
                const std::size_t agreeing = flags.has(kind) ? raised : reporting - raised;
                if (2 * agreeing <= reporting) ++out.validator_marks[v];
            }
        }
        out.node_flags.emplace(node, verdict);
    }
    return out;
}

// ---------------------------------------------------------------------------

struct EpochOutcome {
    std::uint64_t epoch = 0;
    std::string aggregator;
    std::vector<std::string> polled_nodes;
    std::map<std::string, FlagSet> node_verdicts;
    std::map<std::string, std::uint64_t> validator_marks;
    std::vector<StakeMutation> stake_mutations;
    std::size_t messages_accepted = 0;
    std::size_t messages_rejected = 0;
    Stake total_stake_before = 0;
    Stake total_stake_after = 0;
};

inline nlohmann::json to_json(const EpochOutcome& o) {
    nlohmann::json verdicts = nlohmann::json::object();
    for (const auto& [node, flags] : o.node_verdicts) verdicts[node] = to_json(flags);
    nlohmann::json marks = nlohmann::json::object();
    for (const auto& [v, n] : o.validator_marks) marks[v] = n;
    auto mutations = nlohmann::json::array();
    for (const auto& m : o.stake_mutations) mutations.push_back(to_json(m));
    return {{"epoch", o.epoch},
            {"aggregator", o.aggregator},
            {"polled_nodes", o.polled_nodes},
            {"node_verdicts", std::move(verdicts)},
            {"validator_marks", std::move(marks)},
            {"stake_mutations", std::move(mutations)},
            {"messages_accepted", o.messages_accepted},
            {"messages_rejected", o.messages_rejected},
            {"total_stake_before", o.total_stake_before},
            {"total_stake_after", o.total_stake_after}};
}

struct Admission {
    bool admitted = false;
    /// Flags that caused a rejection; empty when admitted.
    FlagSet reason;
};

/**
 * Polls `candidate` alongside the domain's active nodes with every question
 * and admits it iff no flag would attach to it. Throws ProtocolError when the
 * active nodes alone cannot form a conclusive consensus for any question.
 */
inline Admission admit_candidate(const NodeConfig& candidate, std::span<const NodeConfig> active_nodes,
                                 std::span<const Question> questions, const Poller& poller, const EpochConfig& cfg,
                                 std::uint64_t trial_base) {
    candidate.validate();
    if (questions.empty()) throw ProtocolError("admission needs at least one question");
    for (const auto& n : active_nodes) {
        if (n.node_id == candidate.node_id) throw InvalidInput("candidate id already in domain: " + n.node_id);
    }
    std::vector<NodeConfig> nodes(active_nodes.begin(), active_nodes.end());
    nodes.push_back(candidate);

    std::vector<ResponseSample> all;
    bool conclusive = false;
    for (const auto& q : questions) {
        PollOptions po{cfg.repeats, cfg.timeout_ms, trial_base, cfg.max_in_flight};
        auto samples = poll_round(poller, nodes, q, po);
        std::size_t domain_clusters = 0;
        for (const auto& n : active_nodes) {
            if (std::ranges::any_of(samples, [&](const auto& s) { return s.node_id == n.node_id && s.ok(); })) {
                ++domain_clusters;
            }
        }
        conclusive = conclusive || domain_clusters >= cfg.detector.min_nodes;
        all.insert(all.end(), std::make_move_iterator(samples.begin()), std::make_move_iterator(samples.end()));
    }
    if (!conclusive) throw ProtocolError("no conclusive domain consensus for admission");

    Admission a;
    for (const auto& r : detect_round(all, cfg.detector)) {
        if (r.node_id == candidate.node_id) a.reason = r.flags;
    }
    a.admitted = a.reason.empty();
    return a;
}

// ---------------------------------------------------------------------------

/**
 * Drives consecutive epochs over one domain. The engine does not own the
 * poller, signer, board or ledger; they must outlive it.
 */
class EpochEngine {
public:
    EpochEngine(DomainSpec domain, std::vector<Question> questions, const Poller& poller, const Signer& signer,
                BulletinBoard& board, Ledger& ledger, EpochConfig cfg, std::uint64_t seed)
        : domain_(std::move(domain)),
          questions_(std::move(questions)),
          poller_(&poller),
          signer_(&signer),
          board_(&board),
          ledger_(&ledger),
          cfg_(std::move(cfg)),
          seed_(seed) {
        domain_.validate();
        cfg_.validate();
        if (questions_.empty()) throw InvalidInput("question set is empty");
    }

    const DomainSpec& domain() const noexcept { return domain_; }
    const EpochConfig& config() const noexcept { return cfg_; }
    std::uint64_t last_epoch() const noexcept { return epoch_; }

    /// Simulation-clock start of epoch `e` (1-based).
    std::uint64_t epoch_start_ms(std::uint64_t e) const {
        return (e - 1) * static_cast<std::uint64_t>(cfg_.epoch_duration.count());
    }

    /// Nodes taking part in epoch `e`; suspended and slashed nodes are excluded.
    std::vector<NodeConfig> active_nodes(std::uint64_t e) const {
        std::vector<NodeConfig> out;
        for (const auto& n : domain_.nodes) {
            if (ledger_->participates(n.node_id, e)) out.push_back(n);
        }
        return out;
    }

    std::vector<std::string> active_validators(std::uint64_t e) const {
        std::vector<std::string> out;
        for (const auto& v : cfg_.validators) {
            if (ledger_->participates(v, e)) out.push_back(v);
        }
        return out;
    }

    /// Runs the next epoch end to end.
    EpochOutcome run_epoch() {
        const std::uint64_t e = epoch_ + 1;
        const auto validators = active_validators(e);
        if (validators.empty()) throw ProtocolError("no active validators registered");
        const auto nodes = active_nodes(e);

        std::vector<std::vector<ValidatorMessage>> produced(validators.size());
        {
            std::exception_ptr failure;
            std::mutex failure_mu;
            std::vector<std::jthread> workers;
            for (std::size_t i = 0; i < validators.size(); ++i) {
                workers.emplace_back([&, i] {
                    try {
                        produced[i] = validator_rounds(validators[i], e, nodes);
                    } catch (...) {
                        std::lock_guard lock(failure_mu);
                        if (!failure) failure = std::current_exception();
                    }
                });
            }
            workers.clear();
            if (failure) std::rethrow_exception(failure);
        }
        for (auto& msgs : produced) {
            for (auto& m : msgs) board_->append(std::move(m));
        }

        EpochOutcome out;
        out.epoch = e;
        for (const auto& n : nodes) out.polled_nodes.push_back(n.node_id);
        std::ranges::sort(out.polled_nodes);
        auto pick = rng::StreamKey(seed_).add("aggregator").add(e).engine();
        out.aggregator = validators[std::uniform_int_distribution<std::size_t>(0, validators.size() - 1)(pick)];

        std::vector<ValidatorMessage> valid;
        for (auto& m : board_->messages_for_epoch(e)) {
            const bool registered = std::ranges::find(validators, m.validator_id) != validators.end();
            if (registered && verify_message(m, *signer_)) {
                valid.push_back(std::move(m));
            } else {
                ++out.messages_rejected;
            }
        }
        if (valid.empty()) throw ProtocolError("epoch " + std::to_string(e) + ": all validator messages invalid");

        auto agg = aggregate(valid);
        out.messages_accepted = valid.size() - agg.duplicates_rejected;
        out.messages_rejected += agg.duplicates_rejected;
        out.node_verdicts = agg.node_flags;
        out.validator_marks = agg.validator_marks;

        out.total_stake_before = ledger_->total();
        EpochVerdict verdict{e, agg.node_flags, agg.validator_marks};
        out.stake_mutations = apply_economics(verdict, *ledger_, cfg_.economics);
        out.total_stake_after = ledger_->total();
        epoch_ = e;
        return out;
    }

    /// Admission against the current active nodes; an admitted candidate joins the domain with `deposit`.
    Admission admit(const NodeConfig& candidate, Stake deposit) {
        const auto nodes = active_nodes(epoch_ + 1);
        const std::uint64_t base = (std::uint64_t{1} << 48) + admissions_++ * questions_.size() * cfg_.repeats;
        auto a = admit_candidate(candidate, nodes, questions_, *poller_, cfg_, base);
        if (a.admitted) {
            domain_.nodes.push_back(candidate);
            domain_.validate();
            if (!ledger_->contains(candidate.node_id)) ledger_->open(candidate.node_id, AccountRole::node, deposit);
        }
        return a;
    }

private:
    std::vector<ValidatorMessage> validator_rounds(const std::string& validator, std::uint64_t e,
                                                   const std::vector<NodeConfig>& nodes) const {
        const auto vi = static_cast<std::uint64_t>(
            std::ranges::find(cfg_.validators, validator) - cfg_.validators.begin());
        auto engine = rng::StreamKey(seed_).add("questions").add(e).add(validator).engine();
        std::uniform_int_distribution<std::size_t> pick(0, questions_.size() - 1);
        const auto round_ms = static_cast<std::uint64_t>(cfg_.epoch_duration.count()) / cfg_.rounds_per_epoch;

        std::vector<ValidatorMessage> out;
        for (std::uint64_t r = 0; r < cfg_.rounds_per_epoch; ++r) {
            const auto& q = questions_[pick(engine)];
            const std::uint64_t trial_base =
                (((e - 1) * cfg_.validators.size() + vi) * cfg_.rounds_per_epoch + r) * cfg_.repeats;
            ValidatorMessage m;
            m.validator_id = validator;
            m.epoch = e;
            m.round = r;
            m.time_ms = epoch_start_ms(e) + r * round_ms;
            if (!nodes.empty()) {
                auto samples = poll_round(*poller_, nodes, q, {cfg_.repeats, cfg_.timeout_ms, trial_base, cfg_.max_in_flight});
                m.reports = detect_round(samples, cfg_.detector);
            }
            sign_message(m, *signer_);
            out.push_back(std::move(m));
        }
        return out;
    }

    DomainSpec domain_;
    std::vector<Question> questions_;
    const Poller* poller_;
    const Signer* signer_;
    BulletinBoard* board_;
    Ledger* ledger_;
    EpochConfig cfg_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::uint64_t admissions_ = 0;
};

}  // namespace llmverify
