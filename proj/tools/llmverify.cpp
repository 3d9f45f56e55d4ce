#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "llmverify/cli.hpp"

namespace {

constexpr const char* kFooter = R"(Artifacts (CSV, header row first):
  clusters.csv   question_id,config,n,rms_scatter
  distances.csv  question_id,config_a,config_b,distance,scatter_sum,ratio,distinguishable
                 ratio = distance / max(scatter_a, scatter_b); NA when both are 0
  summary.csv    config_a,config_b,questions,d_ave,sigma_max,ratio,distinguishable_questions
  ranking.csv    question_id,effectiveness,<config_a>~<config_b>...
                 effectiveness = min over pairs of distance / (scatter_a + scatter_b)
Every run also writes manifest.json (config and artifact SHA-256) and
metadata.json (wall-clock timestamp, excluded from the manifest).

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.)";

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Statistical verification of decentralized LLM inference nodes"};
    app.footer(kFooter);
    app.set_version_flag("--version", llmverify::cli::kVersion);
    app.require_subcommand(1);

    llmverify::cli::CommonOptions common;
    std::uint64_t seed = 0;
    std::string out;
    std::size_t repeats = 0;
    double timeout_ms = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "Scenario JSON file")->required();
        sub->add_option("--seed", seed, "Master seed (overrides the config)");
        sub->add_option("--out", out, "Output directory (overrides the config)");
        sub->add_option("--repeats", repeats, "Samples per node and question")->check(CLI::PositiveNumber);
        sub->add_option("--timeout-ms", timeout_ms, "Per-request timeout")->check(CLI::PositiveNumber);
    };

    auto* experiment = app.add_subcommand("experiment", "Poll configurations and write cluster statistics");
    add_common(experiment);

    std::uint64_t epochs = 1;
    auto* epoch = app.add_subcommand("epoch", "Run simulated epochs with validators, aggregation and staking");
    add_common(epoch);
    epoch->add_option("--epochs", epochs, "Number of epochs to run")->check(CLI::NonNegativeNumber);

    auto* admit = app.add_subcommand("admit", "Test the configured candidate node against the domain");
    add_common(admit);

    std::string samples_path;
    auto* rank = app.add_subcommand("rank", "Rank questions by how well they separate configurations");
    rank->add_option("--samples", samples_path, "samples.jsonl or embedding store")->required();
    rank->add_option("--out", out, "Also write ranking.csv here");

    auto* replay = app.add_subcommand("replay", "Recompute experiment statistics from stored samples");
    replay->add_option("--samples", samples_path, "samples.jsonl or embedding store")->required();
    replay->add_option("--out", out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : llmverify::cli::kExitConfig;
    }

    auto* sub = app.get_subcommands().front();
    const std::optional<std::string> out_dir = out.empty() ? std::nullopt : std::optional<std::string>(out);
    if (sub == rank) return llmverify::cli::cmd_rank(samples_path, out_dir);
    if (sub == replay) return llmverify::cli::cmd_replay(samples_path, out_dir);

    if (sub->count("--seed")) common.seed = seed;
    common.out_dir = out_dir;
    if (sub->count("--repeats")) common.repeats = repeats;
    if (sub->count("--timeout-ms")) common.timeout_ms = timeout_ms;

    if (sub == experiment) return llmverify::cli::cmd_experiment(common);
    if (sub == epoch) return llmverify::cli::cmd_epoch(common, epochs);
    return llmverify::cli::cmd_admit(common);
}
