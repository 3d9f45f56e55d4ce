#pragma once

/**
 * @file stake.hpp
 * @brief Stake accounts and the per-epoch reward / suspension / slashing rules.
 *
 * Stake is counted in integer units so that
 *     total_after == total_before + rewards - slashes
 * holds exactly.
 *
 * Node rules for epoch e:
 *   - no flags and at least `clean_epochs_for_reward` trailing clean epochs: reward.
 *   - outlier or error500 this epoch, or slow for `slow_epochs_for_offense`
 *     consecutive epochs: offense. Suspended for `suspension_epochs`, and from
 *     the second offense on, slashed by slash_schedule[offense_count - 1]
 *     (last entry for later offenses).
 * Validators commit an offense when their disagreement marks over the last
 * `disagreement_window` epochs exceed `disagreement_threshold`.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmverify/detector.hpp"
#include "llmverify/error.hpp"

namespace llmverify {

using Stake = std::int64_t;

struct EconomicsConfig {
    Stake reward_per_epoch = 10;
    std::uint64_t clean_epochs_for_reward = 10;
    std::uint64_t suspension_epochs = 3;
    std::vector<double> slash_schedule{0.0, 0.1, 0.5, 1.0};
    std::uint64_t slow_epochs_for_offense = 3;
    std::uint64_t disagreement_window = 5;
    std::uint64_t disagreement_threshold = 10;

    void validate() const {
        if (reward_per_epoch < 0) throw InvalidInput("reward_per_epoch must be >= 0");
        if (slash_schedule.empty()) throw InvalidInput("slash schedule must not be empty");
        double prev = 0.0;
        for (double f : slash_schedule) {
            if (!(f >= 0.0 && f <= 1.0)) throw InvalidInput("slash fractions must be in [0,1]");
            if (f < prev) throw InvalidInput("slash fractions must be non-decreasing");
            prev = f;
        }
        if (slow_epochs_for_offense == 0) throw InvalidInput("slow_epochs_for_offense must be >= 1");
        if (disagreement_window == 0) throw InvalidInput("disagreement_window must be >= 1");
    }

    /// Fraction applied on the given (1-based) offense; 0 for the first offense.
    double slash_fraction(std::uint64_t offense_count) const {
        if (offense_count < 2) return 0.0;
        const auto idx = std::min<std::size_t>(offense_count - 1, slash_schedule.size() - 1);
        return slash_schedule[idx];
    }
};

enum class AccountStatus { active, suspended, slashed };

inline std::string to_string(AccountStatus s) {
    switch (s) {
        case AccountStatus::active: return "active";
        case AccountStatus::suspended: return "suspended";
        case AccountStatus::slashed: return "slashed";
    }
    return "unknown";
}

enum class AccountRole { node, validator };

struct StakeAccount {
    std::string owner_id;
    AccountRole role = AccountRole::node;
    Stake staked = 0;
    AccountStatus status = AccountStatus::active;
    /// Last epoch of the current suspension.
    std::uint64_t suspended_until = 0;
    std::map<std::uint64_t, FlagSet> flag_history;
    std::uint64_t offense_count = 0;
    std::uint64_t trailing_clean_epochs = 0;
    std::uint64_t consecutive_slow_epochs = 0;
    /// (epoch, marks) for the disagreement window; validators only.
    std::deque<std::pair<std::uint64_t, std::uint64_t>> recent_marks;

    bool active() const noexcept { return status == AccountStatus::active; }
};

struct StakeMutation {
    enum class Kind { reward, slash, suspend, reinstate };

    std::string owner_id;
    Kind kind;
    /// Stake units moved; 0 for status changes.
    Stake amount = 0;
    Stake balance_after = 0;
    std::string reason;
};

inline std::string to_string(StakeMutation::Kind k) {
    switch (k) {
        case StakeMutation::Kind::reward: return "reward";
        case StakeMutation::Kind::slash: return "slash";
        case StakeMutation::Kind::suspend: return "suspend";
        case StakeMutation::Kind::reinstate: return "reinstate";
    }
    return "unknown";
}

class Ledger {
public:
    StakeAccount& open(const std::string& owner, AccountRole role, Stake deposit) {
        if (deposit < 0) throw InvalidInput("deposit must be >= 0");
        auto [it, fresh] = accounts_.try_emplace(owner);
        if (!fresh) throw InvalidInput("account already exists: " + owner);
        it->second.owner_id = owner;
        it->second.role = role;
        it->second.staked = deposit;
        return it->second;
    }

    void deposit(const std::string& owner, Stake amount) {
        if (amount < 0) throw InvalidInput("deposit must be >= 0");
        at(owner).staked += amount;
    }

    StakeAccount& at(const std::string& owner) {
        auto it = accounts_.find(owner);
        if (it == accounts_.end()) throw NotFound("unknown account id: " + owner);
        return it->second;
    }
    const StakeAccount& at(const std::string& owner) const {
        auto it = accounts_.find(owner);
        if (it == accounts_.end()) throw NotFound("unknown account id: " + owner);
        return it->second;
    }
    bool contains(const std::string& owner) const { return accounts_.contains(owner); }

    /// True when the owner has no account, an active one, or a suspension that ends before `epoch`.
    bool participates(const std::string& owner, std::uint64_t epoch) const {
        auto it = accounts_.find(owner);
        if (it == accounts_.end()) return true;
        const auto& a = it->second;
        return a.active() || (a.status == AccountStatus::suspended && a.suspended_until < epoch);
    }

    Stake total() const {
        return std::accumulate(accounts_.begin(), accounts_.end(), Stake{0},
                               [](Stake s, const auto& kv) { return s + kv.second.staked; });
    }

    const std::map<std::string, StakeAccount>& accounts() const noexcept { return accounts_; }

private:
    std::map<std::string, StakeAccount> accounts_;
};

/// What the aggregator decided for one epoch.
struct EpochVerdict {
    std::uint64_t epoch = 0;
    std::map<std::string, FlagSet> node_flags;
    std::map<std::string, std::uint64_t> validator_marks;
};

namespace detail {

inline Stake slash_amount(Stake staked, double fraction) {
    const auto ppm = static_cast<__int128>(std::llround(fraction * 1'000'000.0));
    return static_cast<Stake>(static_cast<__int128>(staked) * ppm / 1'000'000);
}

inline void punish(StakeAccount& acct, std::uint64_t epoch, const EconomicsConfig& cfg, const std::string& reason,
                   std::vector<StakeMutation>& out) {
    acct.offense_count += 1;
    acct.trailing_clean_epochs = 0;
    acct.consecutive_slow_epochs = 0;
    const double fraction = cfg.slash_fraction(acct.offense_count);
    if (fraction > 0.0) {
        const Stake amount = slash_amount(acct.staked, fraction);
        acct.staked -= amount;
        out.push_back({acct.owner_id, StakeMutation::Kind::slash, amount, acct.staked,
                       reason + " (offense " + std::to_string(acct.offense_count) + ")"});
    }
    if (acct.staked == 0 && fraction >= 1.0) {
        acct.status = AccountStatus::slashed;
        return;
    }
    acct.status = AccountStatus::suspended;
    acct.suspended_until = epoch + cfg.suspension_epochs;
    out.push_back({acct.owner_id, StakeMutation::Kind::suspend, 0, acct.staked,
                   reason + " (until epoch " + std::to_string(acct.suspended_until) + ")"});
}

}  // namespace detail

/**
 * Applies one epoch's verdict to the ledger and returns the mutations in
 * application order. Every node in the verdict and every validator with
 * marks must have an account. Suspended or slashed accounts ignore the
 * verdict; suspensions that ended before `verdict.epoch` are lifted first.
 */
inline std::vector<StakeMutation> apply_economics(const EpochVerdict& verdict, Ledger& ledger,
                                                  const EconomicsConfig& cfg) {
    cfg.validate();
    for (const auto& [node, _] : verdict.node_flags) (void)ledger.at(node);
    for (const auto& [v, _] : verdict.validator_marks) (void)ledger.at(v);

    std::vector<StakeMutation> out;
    const std::uint64_t e = verdict.epoch;

    for (const auto& [owner, acct] : ledger.accounts()) {
        if (acct.status == AccountStatus::suspended && acct.suspended_until < e) {
            auto& a = ledger.at(owner);
            a.status = AccountStatus::active;
            out.push_back({owner, StakeMutation::Kind::reinstate, 0, a.staked, "suspension ended"});
        }
    }

    for (const auto& [node, flags] : verdict.node_flags) {
        auto& acct = ledger.at(node);
        if (!acct.active()) continue;
        acct.flag_history[e] = flags;
        acct.consecutive_slow_epochs = flags.has(FlagKind::slow) ? acct.consecutive_slow_epochs + 1 : 0;

        std::string reason;
        if (flags.has(FlagKind::outlier)) {
            reason = "outlier";
        } else if (flags.has(FlagKind::error500)) {
            reason = "error500";
        } else if (acct.consecutive_slow_epochs >= cfg.slow_epochs_for_offense) {
            reason = "slow for " + std::to_string(acct.consecutive_slow_epochs) + " epochs";
        }

        if (!reason.empty()) {
            detail::punish(acct, e, cfg, reason, out);
        } else if (flags.empty()) {
            acct.trailing_clean_epochs += 1;
            if (acct.trailing_clean_epochs >= cfg.clean_epochs_for_reward && cfg.reward_per_epoch > 0) {
                acct.staked += cfg.reward_per_epoch;
                out.push_back({node, StakeMutation::Kind::reward, cfg.reward_per_epoch, acct.staked,
                               std::to_string(acct.trailing_clean_epochs) + " clean epochs"});
            }
        } else {
            acct.trailing_clean_epochs = 0;
        }
    }

    for (const auto& [validator, marks] : verdict.validator_marks) {
        auto& acct = ledger.at(validator);
        if (!acct.active()) continue;
        acct.recent_marks.emplace_back(e, marks);
        while (!acct.recent_marks.empty() && acct.recent_marks.front().first + cfg.disagreement_window <= e) {
            acct.recent_marks.pop_front();
        }
        std::uint64_t total = 0;
        for (const auto& [_, m] : acct.recent_marks) total += m;
        if (total > cfg.disagreement_threshold) {
            acct.recent_marks.clear();
            detail::punish(acct, e, cfg, std::to_string(total) + " disagreement marks", out);
        }
    }
    return out;
}

/// rewards - slashes over a mutation list.
inline Stake net_stake_change(const std::vector<StakeMutation>& mutations) {
    Stake net = 0;
    for (const auto& m : mutations) {
        if (m.kind == StakeMutation::Kind::reward) net += m.amount;
        if (m.kind == StakeMutation::Kind::slash) net -= m.amount;
    }
    return net;
}

inline nlohmann::json to_json(const StakeMutation& m) {
    return {{"owner", m.owner_id},
            {"kind", to_string(m.kind)},
            {"amount", m.amount},
            {"balance_after", m.balance_after},
            {"reason", m.reason}};
}

inline nlohmann::json to_json(const Ledger& ledger) {
    auto accounts = nlohmann::json::array();
    for (const auto& [owner, a] : ledger.accounts()) {
        accounts.push_back({{"owner", owner},
                            {"role", a.role == AccountRole::node ? "node" : "validator"},
                            {"staked", a.staked},
                            {"status", to_string(a.status)},
                            {"suspended_until", a.status == AccountStatus::suspended
                                                    ? nlohmann::json(a.suspended_until)
                                                    : nlohmann::json(nullptr)},
                            {"offense_count", a.offense_count},
                            {"trailing_clean_epochs", a.trailing_clean_epochs}});
    }
    return {{"accounts", std::move(accounts)}, {"total_stake", ledger.total()}};
}

}  // namespace llmverify
