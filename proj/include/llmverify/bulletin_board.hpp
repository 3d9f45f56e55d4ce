#pragma once

/**
 * @file bulletin_board.hpp
 * @brief Validator messages and the append-only log they are published to.
 */

#include <cstdint>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmverify/detector.hpp"
#include "llmverify/error.hpp"
#include "llmverify/signer.hpp"

namespace llmverify {

struct ValidatorMessage {
    std::string validator_id;
    std::uint64_t epoch = 0;
    std::uint64_t round = 0;
    /// Simulation-clock timestamp of the round.
    std::uint64_t time_ms = 0;
    std::vector<NodeReport> reports;
    std::string signature;
};

/// Canonical signed body: every field except the signature, keys sorted.
inline nlohmann::json unsigned_json(const ValidatorMessage& m) {
    auto reports = nlohmann::json::array();
    for (const auto& r : m.reports) reports.push_back(to_json(r));
    return {{"validator", m.validator_id},
            {"epoch", m.epoch},
            {"round", m.round},
            {"time_ms", m.time_ms},
            {"reports", std::move(reports)}};
}

inline std::string signing_payload(const ValidatorMessage& m) { return unsigned_json(m).dump(); }

inline void sign_message(ValidatorMessage& m, const Signer& signer) {
    m.signature = signer.sign(m.validator_id, signing_payload(m));
}

inline bool verify_message(const ValidatorMessage& m, const Signer& signer) {
    return signer.verify(m.validator_id, signing_payload(m), m.signature);
}

inline nlohmann::json to_json(const ValidatorMessage& m) {
    auto j = unsigned_json(m);
    j["sig"] = m.signature;
    return j;
}

inline ValidatorMessage message_from_json(const nlohmann::json& j) {
    ValidatorMessage m;
    m.validator_id = j.at("validator").get<std::string>();
    m.epoch = j.at("epoch").get<std::uint64_t>();
    m.round = j.at("round").get<std::uint64_t>();
    m.time_ms = j.value("time_ms", std::uint64_t{0});
    for (const auto& r : j.at("reports")) m.reports.push_back(report_from_json(r));
    m.signature = j.at("sig").get<std::string>();
    return m;
}

/**
 * Append-only message log. Entry ids are the SHA-256 of the serialized
 * message. When opened with a path, each append is also written as one JSONL
 * line {"id", "validator", "epoch", "round", "time_ms", "reports", "sig"}.
 * Appends are serialized by a mutex.
 */
class BulletinBoard {
public:
    struct Entry {
        std::string id;
        ValidatorMessage message;
    };

    BulletinBoard() = default;
    explicit BulletinBoard(std::string path) : path_(std::move(path)) {
        std::ofstream touch(path_, std::ios::app);
        if (!touch) throw Error("cannot open bulletin board: " + path_);
    }

    std::string append(ValidatorMessage m) {
        const auto body = to_json(m).dump();
        auto id = sha256_hex(body);
        std::lock_guard lock(mu_);
        if (!path_.empty()) {
            auto line = to_json(m);
            line["id"] = id;
            std::ofstream out(path_, std::ios::app);
            out << line.dump() << '\n';
            if (!out) throw Error("bulletin board write failed: " + path_);
        }
        entries_.push_back({id, std::move(m)});
        return id;
    }

    std::vector<Entry> entries() const {
        std::lock_guard lock(mu_);
        return entries_;
    }

    std::vector<ValidatorMessage> messages_for_epoch(std::uint64_t epoch) const {
        std::lock_guard lock(mu_);
        std::vector<ValidatorMessage> out;
        for (const auto& e : entries_) {
            if (e.message.epoch == epoch) out.push_back(e.message);
        }
        return out;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return entries_.size();
    }

    /// Reads the entries of a board log file.
    static std::vector<Entry> load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw NotFound("cannot open bulletin board: " + path);
        std::vector<Entry> entries;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                const auto j = nlohmann::json::parse(line);
                entries.push_back({j.at("id").get<std::string>(), message_from_json(j)});
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(e.what(), line_no);
            }
        }
        return entries;
    }

private:
    std::string path_;
    mutable std::mutex mu_;
    std::vector<Entry> entries_;
};

}  // namespace llmverify
