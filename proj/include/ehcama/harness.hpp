#pragma once

// Experiment plumbing behind the command-line tool: training runs with
// manifests, checkpoint evaluation, transfer sweeps and report tables.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehcama/trainer.hpp"

namespace ehcama::harness {

inline constexpr const char *kCodeVersion = "0.1.0";
inline constexpr const char *kManifestSchema = "ehcama.manifest/1";
inline constexpr const char *kReportSchema = "ehcama.report/1";

struct RunManifest {
    std::string code_version = kCodeVersion;
    train::TrainerConfig config;
    std::filesystem::path out_dir;
    std::filesystem::path curve_csv;
    std::filesystem::path eval_curve_csv;
    std::vector<std::filesystem::path> checkpoints;

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json &j);
};

/// Command-line values layered over a config file (or the defaults).
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> uavs;
    std::optional<std::size_t> pois;
    std::optional<std::size_t> episodes;
    std::optional<train::Variant> variant;
    /// Extra "key=value" assignments applied last.
    std::vector<std::string> assignments;
};

train::TrainerConfig resolve_config(const std::optional<std::filesystem::path> &config_path,
                                    const Overrides &overrides);

/// Trains with `config`, writing manifest.json, config.txt, curve.csv,
/// eval_curve.csv and checkpoints/ under out_dir. Progress lines go to `log`.
RunManifest cmd_train(const train::TrainerConfig &config, const std::filesystem::path &out_dir,
                      std::ostream *log = nullptr);

struct Summary {
    double mean = 0.0;
    double std = 0.0; // sample standard deviation, 0 for a single value
};

Summary summarize(std::span<const double> values);

struct EpisodeResult {
    std::uint64_t seed = 0;
    double mean_reward = 0.0;
    env::Metrics metrics;
};

struct EvalReport {
    std::string variant;
    std::string checkpoint_id;
    std::size_t n_train = 0;
    std::size_t n_eval = 0;
    std::size_t n_pois = 0;
    std::uint64_t seed = 0;
    std::vector<EpisodeResult> episodes;
    Summary reward;
    Summary coverage;
    Summary fairness;
    Summary energy;
    Summary cfe;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json &j);
};

struct EvalOptions {
    /// 0 keeps the training value stored in the checkpoint.
    std::size_t n_uavs = 0;
    std::size_t n_pois = 0;
    std::size_t episodes = 10;
    /// Evaluation seed stream; episode k runs on train::eval_seed(seed, k).
    std::uint64_t seed = 1;
    /// JSON-lines trace of every evaluated timeslot, if set.
    std::optional<std::filesystem::path> trace_path;
};

/// Mean-action evaluation of an actor on `world`.
EvalReport evaluate_actor(nets::ActorParams &actor, const env::WorldConfig &world, std::size_t episodes,
                          std::uint64_t seed, std::ostream *trace = nullptr);

/// Same seeds and bookkeeping as evaluate_actor, but with uniform random
/// actions drawn from a stream derived from `seed`.
EvalReport evaluate_random(const env::WorldConfig &world, std::size_t episodes, std::uint64_t seed);

/// Fills the aggregate fields from `episodes`.
void finalize(EvalReport &report);

EvalReport cmd_eval(const std::filesystem::path &checkpoint, const EvalOptions &options);

/// Evaluates one checkpoint at each requested UAV count.
std::vector<EvalReport> cmd_transfer(const std::filesystem::path &checkpoint, std::span<const std::size_t> n_evals,
                                     const EvalOptions &options);

std::string report_csv_header();
std::string report_csv(std::span<const EvalReport> reports);
nlohmann::json report_json(std::span<const EvalReport> reports);

/// One CSV row per report, aggregated over its episodes.
struct ReportRow {
    std::string variant;
    std::size_t n_train = 0;
    std::size_t n_eval = 0;
    std::uint64_t seed = 0;
    std::string checkpoint_id;
    std::size_t episodes = 0;
    Summary reward, coverage, fairness, energy, cfe;
};

std::vector<ReportRow> parse_report_csv(const std::string &text);

/// Writes report.csv and report.json into out_dir.
void emit_report(std::span<const EvalReport> reports, const std::filesystem::path &out_dir);

} // namespace ehcama::harness
