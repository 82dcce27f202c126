#pragma once

// Cooperative reconnaissance world: UAVs accelerate over a square area and
// scout ground points of interest (PoIs) that fall inside their recon range.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "ehcama/autodiff.hpp"
#include "ehcama/graph.hpp"

namespace ehcama::env {

struct WorldConfig {
    double area_size = 200.0;
    std::size_t n_pois = 120;
    std::size_t n_uavs = 20;
    double v_max = 10.0;
    double hover_energy = 0.5;
    double move_energy = 0.5;
    double recon_range = 10.0;
    double obs_range = 15.0;
    double comm_range = 30.0;
    double acc_max = 4.0;
    std::size_t episode_len = 100;
    double eta1 = 1.0;
    double eta2 = 0.1;

    /// Throws ConfigError describing the first violated constraint.
    void validate() const;
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Vec2 &) const = default;
};

struct WorldState {
    std::vector<Vec2> uav_positions;
    std::vector<Vec2> uav_velocities;
    std::vector<Vec2> poi_positions;
    /// Timeslots during which each PoI has been covered so far.
    std::vector<std::uint32_t> coverage_time;
    std::size_t t = 0;

    bool operator==(const WorldState &) const = default;
};

/// For each PoI, the UAVs whose recon range contains it.
using CoverageSets = std::vector<std::vector<std::size_t>>;

struct RewardTerms {
    std::size_t individual_count = 0;
    double individual = 0.0;
    double shared = 0.0;
    double energy = 0.0;
    double penalty = 0.0;
    double reward = 0.0;
};

struct StepResult {
    std::vector<double> rewards;
    std::vector<RewardTerms> terms;
    GraphSnapshot next_snapshot;
    std::vector<double> energies;
    std::size_t n_covered = 0;
    CoverageSets coverage;
    bool done = false;
};

struct ResetResult {
    WorldState state;
    GraphSnapshot snapshot;
};

ResetResult reset(const WorldConfig &config, std::uint64_t seed);

GraphSnapshot build_graphs(const WorldState &state, const WorldConfig &config);

CoverageSets compute_coverage(const WorldState &state, const WorldConfig &config);

bool outside_area(const Vec2 &p, const WorldConfig &config);

double energy(const Vec2 &velocity, const WorldConfig &config);

/// Per-UAV reward for one timeslot given the coverage sets.
std::vector<RewardTerms> compute_reward(const WorldState &state, const WorldConfig &config,
                                        const CoverageSets &coverage);

/// Advances one timeslot. `actions` is n_uavs x 2 with entries in [-1, 1].
StepResult step(WorldState &state, const WorldConfig &config, const ad::Tensor &actions);

struct Metrics {
    double coverage = 0.0;
    double fairness = 0.0;
    double energy = 0.0;
    double cfe = 0.0;
};

/// Incremental form of the episode-level coverage/fairness/energy metrics.
class MetricsAccumulator {
public:
    MetricsAccumulator(std::size_t n_pois, std::size_t n_uavs);

    void add_step(std::size_t n_covered, const std::vector<double> &energies);
    Metrics finish(const std::vector<std::uint32_t> &coverage_time) const;

    std::size_t steps() const { return steps_; }

private:
    std::size_t n_pois_;
    std::size_t n_uavs_;
    std::size_t steps_ = 0;
    double coverage_sum_ = 0.0;
    double energy_sum_ = 0.0;
};

struct EpisodeTrace {
    std::size_t n_pois = 0;
    std::size_t n_uavs = 0;
    std::vector<std::size_t> n_covered;
    std::vector<std::vector<double>> energies;
    std::vector<std::uint32_t> final_coverage_time;
};

Metrics accumulate_metrics(const EpisodeTrace &trace);

/// Jain's index of the coverage counts; 0 when nothing was covered.
double jain_fairness(const std::vector<std::uint32_t> &counts);

/// Writes one JSON line per timeslot (schema "ehcama.trace/1").
class TraceWriter {
public:
    static constexpr int kSchemaVersion = 1;

    explicit TraceWriter(std::ostream &out) : out_(out) {}

    void write_step(std::size_t episode, const WorldState &after, const ad::Tensor &actions, const StepResult &result);

private:
    std::ostream &out_;
};

} // namespace ehcama::env
