// Acceptance run: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "acceptance.hpp"

namespace fs = std::filesystem;
using acceptance::Verdict;

int main(int argc, char **argv) {
    CLI::App app{"EHCAMA acceptance criteria"};
    acceptance::DeskSetup desk;
    std::string config = EHCAMA_DESK_CONFIG;
    std::string runs = "acceptance_runs";
    std::vector<int> only;
    app.add_option("--config", config, "desk-scale config file")->capture_default_str();
    app.add_option("--runs", runs, "directory for desk-scale training runs")->capture_default_str();
    app.add_option("--only", only, "criterion numbers to run (default: all)")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    desk.config_file = config;
    desk.runs = runs;
    fs::create_directories(desk.runs);

    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"gradient suite", acceptance::gradient_suite},
        {"formula oracles", acceptance::oracle_suite},
        {"squashed density", acceptance::squashed_density},
        {"metric bounds", acceptance::metric_bounds},
        {"training improvement", [&] { return acceptance::training_improvement(desk); }},
        {"entropy ablation", [&] { return acceptance::entropy_ablation(desk); }},
        {"transfer", [&] { return acceptance::transfer(desk); }},
        {"variant_a equivalence", acceptance::variant_a_equivalence},
        {"reproducibility", [&] { return acceptance::reproducibility(desk.runs); }},
        {"replay semantics", acceptance::replay_semantics},
    };
    const std::set<int> selected(only.begin(), only.end());

    int failures = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[k].second();
        } catch (const std::exception &e) {
            v = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += !v.pass;
        std::cout << (v.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[k].first << " - " << v.detail
                  << " (" << static_cast<long>(secs) << " s)" << std::endl;
    }
    return failures ? EXIT_FAILURE : EXIT_SUCCESS;
}
