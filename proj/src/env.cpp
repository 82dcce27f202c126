#include "ehcama/env.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <ostream>
#include <random>
#include <string>

namespace ehcama {

BitMatrix::BitMatrix(std::size_t n) : n_(n), words_per_row_((n + 63) / 64), bits_(n * ((n + 63) / 64), 0) {}

void BitMatrix::set(std::size_t row, std::size_t col, bool value) {
    std::uint64_t &w = bits_[row * words_per_row_ + col / 64];
    const std::uint64_t bit = std::uint64_t{1} << (col % 64);
    w = value ? (w | bit) : (w & ~bit);
}

std::size_t BitMatrix::count_row(std::size_t row) const {
    std::size_t total = 0;
    for (std::size_t k = 0; k < words_per_row_; ++k) total += std::popcount(bits_[row * words_per_row_ + k]);
    return total;
}

} // namespace ehcama

namespace ehcama::env {

namespace {

double dist2(const Vec2 &a, const Vec2 &b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return dx * dx + dy * dy;
}

double norm(const Vec2 &v) { return std::hypot(v.x, v.y); }

Vec2 clip_norm(Vec2 v, double max_norm) {
    const double n = norm(v);
    if (n > max_norm) {
        v.x *= max_norm / n;
        v.y *= max_norm / n;
    }
    return v;
}

} // namespace

void WorldConfig::validate() const {
    auto fail = [](const std::string &what) { throw ConfigError("world config: " + what); };
    if (!(area_size > 0.0)) fail("area_size must be positive");
    if (n_uavs == 0) fail("n_uavs must be at least 1");
    if (!(v_max > 0.0)) fail("v_max must be positive");
    if (!(acc_max > 0.0)) fail("acc_max must be positive");
    if (!(recon_range > 0.0 && obs_range > 0.0 && comm_range > 0.0)) fail("ranges must be positive");
    if (!(recon_range <= obs_range && obs_range <= comm_range)) fail("expected recon_range <= obs_range <= comm_range");
    if (episode_len == 0) fail("episode_len must be at least 1");
    if (hover_energy < 0.0 || move_energy < 0.0 || hover_energy + move_energy <= 0.0) fail("invalid energy constants");
}

ResetResult reset(const WorldConfig &config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coord(0.0, config.area_size);
    WorldState state;
    state.poi_positions.resize(config.n_pois);
    for (Vec2 &p : state.poi_positions) {
        p.x = coord(rng);
        p.y = coord(rng);
    }
    state.uav_positions.resize(config.n_uavs);
    for (Vec2 &p : state.uav_positions) {
        p.x = coord(rng);
        p.y = coord(rng);
    }
    state.uav_velocities.assign(config.n_uavs, Vec2{});
    state.coverage_time.assign(config.n_pois, 0);
    state.t = 0;
    GraphSnapshot snapshot = build_graphs(state, config);
    return {std::move(state), std::move(snapshot)};
}

GraphSnapshot build_graphs(const WorldState &state, const WorldConfig &config) {
    const std::size_t n_uavs = state.uav_positions.size();
    const std::size_t n_pois = state.poi_positions.size();
    const std::size_t m = n_uavs + n_pois;

    GraphSnapshot g;
    g.n_uavs = n_uavs;
    g.n_pois = n_pois;
    g.uav_states = ad::Tensor(n_uavs, 4);
    for (std::size_t i = 0; i < n_uavs; ++i) {
        g.uav_states(i, 0) = state.uav_positions[i].x;
        g.uav_states(i, 1) = state.uav_positions[i].y;
        g.uav_states(i, 2) = state.uav_velocities[i].x;
        g.uav_states(i, 3) = state.uav_velocities[i].y;
    }
    g.poi_states = ad::Tensor(n_pois, 2);
    for (std::size_t j = 0; j < n_pois; ++j) {
        g.poi_states(j, 0) = state.poi_positions[j].x;
        g.poi_states(j, 1) = state.poi_positions[j].y;
    }

    auto position = [&](std::size_t e) -> const Vec2 & {
        return e < n_uavs ? state.uav_positions[e] : state.poi_positions[e - n_uavs];
    };
    const double obs2 = config.obs_range * config.obs_range;
    const double comm2 = config.comm_range * config.comm_range;
    g.observation = BitMatrix(m);
    g.communication = BitMatrix(m);
    for (std::size_t i = 0; i < n_uavs; ++i) g.observation.set(i, i);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            const double d2 = dist2(position(i), position(j));
            if (d2 <= obs2) {
                g.observation.set(i, j);
                g.observation.set(j, i);
            }
            if (j < n_uavs && d2 <= comm2) {
                g.communication.set(i, j);
                g.communication.set(j, i);
            }
        }
    }
    return g;
}

CoverageSets compute_coverage(const WorldState &state, const WorldConfig &config) {
    const double recon2 = config.recon_range * config.recon_range;
    CoverageSets sets(state.poi_positions.size());
    for (std::size_t j = 0; j < state.poi_positions.size(); ++j) {
        for (std::size_t i = 0; i < state.uav_positions.size(); ++i) {
            if (dist2(state.uav_positions[i], state.poi_positions[j]) <= recon2) sets[j].push_back(i);
        }
    }
    return sets;
}

bool outside_area(const Vec2 &p, const WorldConfig &config) {
    return p.x < 0.0 || p.y < 0.0 || p.x > config.area_size || p.y > config.area_size;
}

double energy(const Vec2 &velocity, const WorldConfig &config) {
    return config.hover_energy + norm(velocity) / config.v_max * config.move_energy;
}

std::vector<RewardTerms> compute_reward(const WorldState &state, const WorldConfig &config,
                                        const CoverageSets &coverage) {
    const std::size_t n_uavs = state.uav_positions.size();
    std::vector<RewardTerms> terms(n_uavs);
    for (const auto &coverers : coverage) {
        if (coverers.size() == 1) {
            ++terms[coverers.front()].individual_count;
        } else if (coverers.size() > 1) {
            const double share = 1.0 / static_cast<double>(coverers.size());
            for (std::size_t i : coverers) terms[i].shared += share;
        }
    }
    for (std::size_t i = 0; i < n_uavs; ++i) {
        RewardTerms &r = terms[i];
        r.individual = r.individual_count == 0 ? -1.0 : static_cast<double>(r.individual_count);
        r.energy = energy(state.uav_velocities[i], config);
        r.penalty = outside_area(state.uav_positions[i], config) ? 1.0 : 0.0;
        r.reward = (config.eta1 * r.individual + config.eta2 * r.shared) / r.energy - r.penalty;
    }
    return terms;
}

StepResult step(WorldState &state, const WorldConfig &config, const ad::Tensor &actions) {
    const std::size_t n_uavs = state.uav_positions.size();
    if (state.t >= config.episode_len) {
        throw ContractViolation("step: episode already finished at t=" + std::to_string(state.t));
    }
    if (actions.rows() != n_uavs || actions.cols() != 2) {
        throw ContractViolation("step: actions " + actions.shape_string() + ", expected [" + std::to_string(n_uavs) +
                                "x2]");
    }
    for (std::size_t k = 0; k < actions.size(); ++k) {
        if (!(actions[k] >= -1.0 && actions[k] <= 1.0)) {
            throw ContractViolation("step: action component " + std::to_string(actions[k]) + " outside [-1, 1]");
        }
    }

    for (std::size_t i = 0; i < n_uavs; ++i) {
        const Vec2 acc = clip_norm({config.acc_max * actions(i, 0), config.acc_max * actions(i, 1)}, config.acc_max);
        Vec2 &v = state.uav_velocities[i];
        v = clip_norm({v.x + acc.x, v.y + acc.y}, config.v_max);
        state.uav_positions[i].x += v.x;
        state.uav_positions[i].y += v.y;
    }

    StepResult result;
    result.coverage = compute_coverage(state, config);
    for (std::size_t j = 0; j < result.coverage.size(); ++j) {
        if (!result.coverage[j].empty()) {
            ++state.coverage_time[j];
            ++result.n_covered;
        }
    }
    result.terms = compute_reward(state, config, result.coverage);
    result.rewards.reserve(n_uavs);
    result.energies.reserve(n_uavs);
    for (const RewardTerms &r : result.terms) {
        result.rewards.push_back(r.reward);
        result.energies.push_back(r.energy);
    }
    ++state.t;
    result.done = state.t == config.episode_len;
    result.next_snapshot = build_graphs(state, config);
    return result;
}

// ---- metrics -------------------------------------------------------------

MetricsAccumulator::MetricsAccumulator(std::size_t n_pois, std::size_t n_uavs) : n_pois_(n_pois), n_uavs_(n_uavs) {}

void MetricsAccumulator::add_step(std::size_t n_covered, const std::vector<double> &energies) {
    ++steps_;
    if (n_pois_ > 0) coverage_sum_ += static_cast<double>(n_covered) / static_cast<double>(n_pois_);
    for (double e : energies) energy_sum_ += e;
}

Metrics MetricsAccumulator::finish(const std::vector<std::uint32_t> &coverage_time) const {
    Metrics m;
    if (steps_ == 0) return m;
    const double t = static_cast<double>(steps_);
    m.coverage = coverage_sum_ / t;
    m.fairness = jain_fairness(coverage_time);
    m.energy = energy_sum_ / (t * static_cast<double>(n_uavs_));
    m.cfe = m.energy > 0.0 ? m.coverage * m.fairness / m.energy : 0.0;
    return m;
}

double jain_fairness(const std::vector<std::uint32_t> &counts) {
    double total = 0.0;
    double squares = 0.0;
    for (std::uint32_t c : counts) {
        total += c;
        squares += static_cast<double>(c) * c;
    }
    if (squares == 0.0) return 0.0;
    return total * total / (static_cast<double>(counts.size()) * squares);
}

Metrics accumulate_metrics(const EpisodeTrace &trace) {
    MetricsAccumulator acc(trace.n_pois, trace.n_uavs);
    for (std::size_t t = 0; t < trace.n_covered.size(); ++t) acc.add_step(trace.n_covered[t], trace.energies.at(t));
    return acc.finish(trace.final_coverage_time);
}

// ---- trace export --------------------------------------------------------

void TraceWriter::write_step(std::size_t episode, const WorldState &after, const ad::Tensor &actions,
                             const StepResult &result) {
    nlohmann::json rec;
    rec["schema"] = "ehcama.trace/" + std::to_string(kSchemaVersion);
    rec["episode"] = episode;
    rec["t"] = after.t;
    auto points = [](const std::vector<Vec2> &ps) {
        nlohmann::json arr = nlohmann::json::array();
        for (const Vec2 &p : ps) arr.push_back({p.x, p.y});
        return arr;
    };
    rec["uav_positions"] = points(after.uav_positions);
    rec["uav_velocities"] = points(after.uav_velocities);
    nlohmann::json acts = nlohmann::json::array();
    for (std::size_t i = 0; i < actions.rows(); ++i) acts.push_back({actions(i, 0), actions(i, 1)});
    rec["actions"] = acts;
    rec["rewards"] = result.rewards;
    rec["energies"] = result.energies;
    std::vector<std::size_t> covered;
    for (std::size_t j = 0; j < result.coverage.size(); ++j) {
        if (!result.coverage[j].empty()) covered.push_back(j);
    }
    rec["covered_pois"] = covered;
    rec["n_covered"] = result.n_covered;
    out_ << rec.dump() << '\n';
}

} // namespace ehcama::env
