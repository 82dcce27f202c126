// ehcama: train, evaluate and tabulate UAV reconnaissance policies.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ehcama/errors.hpp"
#include "ehcama/harness.hpp"

namespace fs = std::filesystem;
using namespace ehcama;

namespace {

void write_reports(const std::vector<harness::EvalReport> &reports, const fs::path &out) {
    fs::create_directories(out);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto &r : reports) arr.push_back(r.to_json());
    std::ofstream f(out / "reports.json");
    f << arr.dump(2) << '\n';
    harness::emit_report(reports, out);
}

void print_summary(const harness::EvalReport &r) {
    std::cout << r.variant << " N_train=" << r.n_train << " N_eval=" << r.n_eval << " episodes=" << r.episodes.size()
              << "  reward " << r.reward.mean << " +- " << r.reward.std << "  C " << r.coverage.mean << "  F "
              << r.fairness.mean << "  E " << r.energy.mean << "  CFE " << r.cfe.mean << " +- " << r.cfe.std << '\n';
}

std::vector<harness::EvalReport> read_reports(const fs::path &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    const nlohmann::json j = nlohmann::json::parse(in);
    std::vector<harness::EvalReport> out;
    if (j.is_array()) {
        for (const auto &r : j) out.push_back(harness::EvalReport::from_json(r));
    } else {
        out.push_back(harness::EvalReport::from_json(j));
    }
    return out;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"EHCAMA multi-UAV reconnaissance: training, evaluation and transfer"};
    app.require_subcommand(1);

    // train
    auto *train_cmd = app.add_subcommand("train", "train a policy and write curves and checkpoints");
    std::optional<std::string> config_path;
    harness::Overrides overrides;
    std::string variant_name;
    std::string train_out;
    bool quiet = false;
    train_cmd->add_option("--config", config_path, "key = value config file");
    train_cmd->add_option("--seed", overrides.seed, "RNG seed");
    train_cmd->add_option("--uavs", overrides.uavs, "number of UAVs");
    train_cmd->add_option("--pois", overrides.pois, "number of PoIs");
    train_cmd->add_option("--episodes", overrides.episodes, "training episodes");
    train_cmd->add_option("--variant", variant_name, "ehcama, dhcama or variant_a");
    train_cmd->add_option("--set", overrides.assignments, "extra key=value config assignment (repeatable)");
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cmd->add_flag("--quiet", quiet, "no progress lines");

    // eval / transfer share their options
    harness::EvalOptions eval_opts;
    std::string checkpoint;
    std::string eval_out;
    std::optional<std::string> trace;
    auto *eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint with the mean action");
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--uavs", eval_opts.n_uavs, "UAV count (default: training value)");
    eval_cmd->add_option("--pois", eval_opts.n_pois, "PoI count (default: training value)");
    eval_cmd->add_option("--episodes", eval_opts.episodes, "evaluation episodes")->capture_default_str();
    eval_cmd->add_option("--seed", eval_opts.seed, "evaluation seed stream")->capture_default_str();
    eval_cmd->add_option("--trace", trace, "write a JSON-lines trace here");
    eval_cmd->add_option("--out", eval_out, "output directory")->required();

    std::vector<std::size_t> n_evals;
    auto *transfer_cmd = app.add_subcommand("transfer", "evaluate one checkpoint at several UAV counts");
    transfer_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    transfer_cmd->add_option("--uavs", n_evals, "UAV counts, e.g. --uavs 3,6,12")->required()->delimiter(',');
    transfer_cmd->add_option("--pois", eval_opts.n_pois, "PoI count (default: training value)");
    transfer_cmd->add_option("--episodes", eval_opts.episodes, "evaluation episodes")->capture_default_str();
    transfer_cmd->add_option("--seed", eval_opts.seed, "evaluation seed stream")->capture_default_str();
    transfer_cmd->add_option("--trace", trace, "trace path; _n<N> is appended per UAV count");
    transfer_cmd->add_option("--out", eval_out, "output directory")->required();

    auto *baseline_cmd = app.add_subcommand("baseline", "evaluate a uniform random policy on the eval seeds");
    std::optional<std::string> baseline_config;
    harness::Overrides baseline_over;
    baseline_cmd->add_option("--config", baseline_config, "key = value config file");
    baseline_cmd->add_option("--uavs", baseline_over.uavs, "number of UAVs");
    baseline_cmd->add_option("--pois", baseline_over.pois, "number of PoIs");
    baseline_cmd->add_option("--set", baseline_over.assignments, "extra key=value config assignment (repeatable)");
    baseline_cmd->add_option("--episodes", eval_opts.episodes, "evaluation episodes")->capture_default_str();
    baseline_cmd->add_option("--seed", eval_opts.seed, "evaluation seed stream")->capture_default_str();
    baseline_cmd->add_option("--out", eval_out, "output directory")->required();

    std::vector<std::string> inputs;
    std::string report_out;
    auto *report_cmd = app.add_subcommand("report", "merge reports.json files into one CSV and JSON table");
    report_cmd->add_option("inputs", inputs, "reports.json files")->required()->check(CLI::ExistingFile);
    report_cmd->add_option("--out", report_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) {
            if (!variant_name.empty()) overrides.variant = train::parse_variant(variant_name);
            std::optional<fs::path> cfg;
            if (config_path) cfg = *config_path;
            const train::TrainerConfig config = harness::resolve_config(cfg, overrides);
            const harness::RunManifest m = harness::cmd_train(config, train_out, quiet ? nullptr : &std::cout);
            std::cout << "wrote " << (fs::path(train_out) / "manifest.json").string() << " ("
                      << m.checkpoints.size() << " checkpoints)\n";
        } else if (*eval_cmd) {
            if (trace) eval_opts.trace_path = *trace;
            const harness::EvalReport r = harness::cmd_eval(checkpoint, eval_opts);
            print_summary(r);
            write_reports({r}, eval_out);
        } else if (*transfer_cmd) {
            if (trace) eval_opts.trace_path = *trace;
            const auto reports = harness::cmd_transfer(checkpoint, n_evals, eval_opts);
            for (const auto &r : reports) print_summary(r);
            write_reports(reports, eval_out);
        } else if (*baseline_cmd) {
            std::optional<fs::path> cfg;
            if (baseline_config) cfg = *baseline_config;
            const train::TrainerConfig config = harness::resolve_config(cfg, baseline_over);
            const harness::EvalReport r = harness::evaluate_random(config.world, eval_opts.episodes, eval_opts.seed);
            print_summary(r);
            write_reports({r}, eval_out);
        } else if (*report_cmd) {
            std::vector<harness::EvalReport> all;
            for (const std::string &in : inputs) {
                auto part = read_reports(in);
                all.insert(all.end(), part.begin(), part.end());
            }
            harness::emit_report(all, report_out);
            std::cout << "wrote " << all.size() << " rows to " << (fs::path(report_out) / "report.csv").string()
                      << '\n';
        }
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return EXIT_FAILURE;
    }
    return EXIT_SUCCESS;
}
