#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ehcama/env.hpp"
#include "test_support.hpp"

using namespace ehcama;
using namespace ehcama::env;

namespace {

WorldState make_state(std::vector<Vec2> uavs, std::vector<Vec2> vels, std::vector<Vec2> pois) {
    WorldState s;
    s.uav_positions = std::move(uavs);
    s.uav_velocities = std::move(vels);
    s.poi_positions = std::move(pois);
    s.coverage_time.assign(s.poi_positions.size(), 0);
    return s;
}

ad::Tensor actions(std::initializer_list<std::initializer_list<double>> rows) { return ad::Tensor::matrix(rows); }

} // namespace

TEST(World, ValidateRejectsBadConfigs) {
    WorldConfig c;
    EXPECT_NO_THROW(c.validate());
    c.recon_range = 20.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = WorldConfig{};
    c.n_uavs = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Reset, DeterministicAndInsideArea) {
    const WorldConfig c;
    const auto a = reset(c, 42);
    const auto b = reset(c, 42);
    EXPECT_EQ(a.state, b.state);
    EXPECT_EQ(a.snapshot, b.snapshot);
    EXPECT_NE(a.state, reset(c, 43).state);
    for (const auto *ps : {&a.state.uav_positions, &a.state.poi_positions})
        for (const Vec2 &p : *ps) {
            EXPECT_GE(p.x, 0.0);
            EXPECT_LE(p.x, 200.0);
            EXPECT_GE(p.y, 0.0);
            EXPECT_LE(p.y, 200.0);
        }
    for (const Vec2 &v : a.state.uav_velocities) EXPECT_EQ(v, Vec2{});
    EXPECT_EQ(a.state.t, 0u);
}

TEST(Reset, PositionsAreUniformOnAverage) {
    WorldConfig c;
    c.n_uavs = 100;
    c.n_pois = 0;
    double sx = 0.0, sy = 0.0;
    std::size_t count = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        for (const Vec2 &p : reset(c, seed).state.uav_positions) {
            sx += p.x;
            sy += p.y;
            ++count;
        }
    }
    EXPECT_NEAR(sx / count, 100.0, 2.0);
    EXPECT_NEAR(sy / count, 100.0, 2.0);
}

TEST(Graphs, RangeThresholdsAreInclusive) {
    const WorldConfig c;
    const auto near = build_graphs(make_state({{50, 50}, {65, 50}}, {{}, {}}, {}), c);
    EXPECT_TRUE(near.observation.test(0, 1));
    EXPECT_TRUE(near.observation.test(1, 0));
    const auto far = build_graphs(make_state({{50, 50}, {65.01, 50}}, {{}, {}}, {}), c);
    EXPECT_FALSE(far.observation.test(0, 1));
    EXPECT_TRUE(far.communication.test(0, 1));
    const auto comm = build_graphs(make_state({{50, 50}, {80, 50}}, {{}, {}}, {}), c);
    EXPECT_TRUE(comm.communication.test(0, 1));
    const auto no_comm = build_graphs(make_state({{50, 50}, {80.01, 50}}, {{}, {}}, {}), c);
    EXPECT_FALSE(no_comm.communication.test(0, 1));
}

TEST(Graphs, SingleUavHasOnlySelfLoop) {
    const auto g = build_graphs(make_state({{10, 10}}, {{}}, {}), WorldConfig{});
    EXPECT_TRUE(g.observation.test(0, 0));
    EXPECT_EQ(g.observation.count_row(0), 1u);
    EXPECT_EQ(g.communication.count_row(0), 0u);
}

TEST(Graphs, RandomGraphsMatchDistanceOracle) {
    std::mt19937_64 rng(3);
    const WorldConfig c = testing_support::small_world(6, 8);
    for (int trial = 0; trial < 100; ++trial) {
        const auto [state, snap] = reset(c, rng());
        const std::size_t m = 14;
        auto pos = [&](std::size_t e) { return e < 6 ? state.uav_positions[e] : state.poi_positions[e - 6]; };
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                const double d = std::hypot(pos(i).x - pos(j).x, pos(i).y - pos(j).y);
                const bool obs = (i == j) ? i < 6 : d <= c.obs_range;
                const bool comm = i != j && i < 6 && j < 6 && d <= c.comm_range;
                ASSERT_EQ(snap.observation.test(i, j), obs) << i << "," << j;
                ASSERT_EQ(snap.communication.test(i, j), comm) << i << "," << j;
            }
        }
    }
}

TEST(Step, HoverStaysPut) {
    const WorldConfig c;
    WorldState s = make_state({{10, 10}}, {{}}, {});
    const StepResult r = step(s, c, actions({{0, 0}}));
    EXPECT_EQ(s.uav_positions[0], (Vec2{10, 10}));
    EXPECT_EQ(r.energies[0], 0.5);
}

TEST(Step, FullThrustFromRest) {
    const WorldConfig c;
    WorldState s = make_state({{10, 10}}, {{}}, {});
    step(s, c, actions({{1, 0}}));
    EXPECT_EQ(s.uav_velocities[0], (Vec2{4, 0}));
    EXPECT_EQ(s.uav_positions[0], (Vec2{14, 10}));
}

TEST(Step, DiagonalActionIsProjectedOntoDisc) {
    const WorldConfig c;
    WorldState s = make_state({{10, 10}}, {{}}, {});
    step(s, c, actions({{1, 1}}));
    EXPECT_NEAR(std::hypot(s.uav_velocities[0].x, s.uav_velocities[0].y), 4.0, 1e-12);
}

TEST(Step, SpeedIsCappedAtVmax) {
    const WorldConfig c;
    WorldState s = make_state({{10, 10}}, {{10, 0}}, {});
    step(s, c, actions({{1, 0}}));
    EXPECT_DOUBLE_EQ(s.uav_velocities[0].x, 10.0);
    EXPECT_EQ(s.uav_positions[0], (Vec2{20, 10}));
}

TEST(Step, RejectsBadActionsAndFinishedEpisodes) {
    WorldConfig c;
    c.episode_len = 1;
    WorldState s = make_state({{10, 10}}, {{}}, {});
    EXPECT_THROW(step(s, c, actions({{1.5, 0}})), ContractViolation);
    EXPECT_THROW(step(s, c, actions({{0, 0}, {0, 0}})), ContractViolation);
    const StepResult r = step(s, c, actions({{0, 0}}));
    EXPECT_TRUE(r.done);
    EXPECT_THROW(step(s, c, actions({{0, 0}})), ContractViolation);
}

TEST(Step, DeterministicGivenSeedAndActions) {
    const WorldConfig c = testing_support::small_world(3, 5);
    auto run = [&] {
        auto [s, snap] = reset(c, 9);
        std::mt19937_64 rng(1);
        std::vector<double> trace;
        for (std::size_t t = 0; t < c.episode_len; ++t) {
            const StepResult r = step(s, c, testing_support::random_tensor(rng, 3, 2));
            trace.insert(trace.end(), r.rewards.begin(), r.rewards.end());
        }
        return std::make_pair(s, trace);
    };
    EXPECT_EQ(run(), run());
}

TEST(Reward, WorkedExamples) {
    const WorldConfig c;
    const WorldState idle = make_state({{50, 50}}, {{}}, {{150, 150}});
    EXPECT_DOUBLE_EQ(compute_reward(idle, c, compute_coverage(idle, c))[0].reward, -2.0);
    const WorldState three = make_state({{50, 50}}, {{}}, {{51, 50}, {50, 52}, {45, 50}, {150, 150}});
    EXPECT_DOUBLE_EQ(compute_reward(three, c, compute_coverage(three, c))[0].reward, 6.0);
    const WorldState outside = make_state({{-1, 50}}, {{}}, {{150, 150}});
    EXPECT_DOUBLE_EQ(compute_reward(outside, c, compute_coverage(outside, c))[0].reward, -3.0);
}

TEST(Reward, SharedCreditSplitsPerPoi) {
    const WorldConfig c;
    // PoI 0 covered by UAVs 0 and 1, PoI 1 by all three, PoI 2 by UAV 2 alone.
    const WorldState s = make_state({{50, 50}, {58, 50}, {66, 50}}, {{}, {}, {}}, {{55, 50}, {58, 55}, {75, 50}});
    const auto terms = compute_reward(s, c, compute_coverage(s, c));
    EXPECT_NEAR(terms[0].shared, 0.5 + 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(terms[1].shared, 0.5 + 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(terms[2].shared, 1.0 / 3.0, 1e-15);
    EXPECT_EQ(terms[2].individual_count, 1u);
    double total_shared = 0.0;
    for (const auto &t : terms) total_shared += t.shared;
    EXPECT_NEAR(total_shared, 2.0, 1e-12);
}

TEST(Reward, MatchesDirectOracleOnRandomStates) {
    std::mt19937_64 rng(17);
    WorldConfig c = testing_support::small_world(4, 10);
    std::uniform_real_distribution<double> pos(-3.0, 23.0), vel(-7.0, 7.0);
    for (int instance = 0; instance < 200; ++instance) {
        WorldState s = make_state({}, {}, {});
        for (int i = 0; i < 4; ++i) {
            Vec2 v{vel(rng), vel(rng)};
            const double speed = std::hypot(v.x, v.y);
            if (speed > c.v_max) v = {v.x * c.v_max / speed, v.y * c.v_max / speed};
            s.uav_positions.push_back({pos(rng), pos(rng)});
            s.uav_velocities.push_back(v);
        }
        for (int j = 0; j < 10; ++j) s.poi_positions.push_back({pos(rng) * 0.8 + 2, pos(rng) * 0.8 + 2});
        s.coverage_time.assign(10, 0);
        const auto terms = compute_reward(s, c, compute_coverage(s, c));
        const auto expect = testing_support::ref_reward(s, c);
        for (int i = 0; i < 4; ++i) EXPECT_NEAR(terms[i].reward, expect[i], 1e-10) << "instance " << instance;
    }
}

TEST(Metrics, PerfectCoverageAndHover) {
    EpisodeTrace t;
    t.n_pois = 4;
    t.n_uavs = 2;
    for (int k = 0; k < 10; ++k) {
        t.n_covered.push_back(4);
        t.energies.push_back({0.5, 0.5});
    }
    t.final_coverage_time.assign(4, 10);
    const Metrics m = accumulate_metrics(t);
    EXPECT_DOUBLE_EQ(m.coverage, 1.0);
    EXPECT_DOUBLE_EQ(m.fairness, 1.0);
    EXPECT_DOUBLE_EQ(m.energy, 0.5);
    EXPECT_DOUBLE_EQ(m.cfe, 2.0);
}

TEST(Metrics, NoCoverageGivesZeroFairness) {
    EXPECT_EQ(jain_fairness({0, 0, 0}), 0.0);
    EXPECT_DOUBLE_EQ(jain_fairness({5, 0, 0, 0}), 0.25);
}

TEST(Metrics, MatchesDirectOracleOnRandomEpisodes) {
    std::mt19937_64 rng(23);
    const WorldConfig c = testing_support::small_world(3, 10);
    for (int instance = 0; instance < 100; ++instance) {
        auto [s, snap] = reset(c, rng());
        EpisodeTrace trace{c.n_pois, c.n_uavs, {}, {}, {}};
        std::vector<int> counts(c.n_pois, 0);
        double c_sum = 0.0, e_sum = 0.0;
        for (std::size_t t = 0; t < c.episode_len; ++t) {
            const StepResult r = step(s, c, testing_support::random_tensor(rng, 3, 2));
            trace.n_covered.push_back(r.n_covered);
            trace.energies.push_back(r.energies);
            // the spreadsheet: recount coverage and energy from positions
            int covered = 0;
            for (std::size_t j = 0; j < c.n_pois; ++j) {
                bool hit = false;
                for (const Vec2 &u : s.uav_positions)
                    hit |= std::hypot(u.x - s.poi_positions[j].x, u.y - s.poi_positions[j].y) <= c.recon_range;
                covered += hit;
                counts[j] += hit;
            }
            c_sum += covered / 10.0;
            for (const Vec2 &v : s.uav_velocities) e_sum += 0.5 + 0.5 * std::hypot(v.x, v.y) / c.v_max;
        }
        trace.final_coverage_time = s.coverage_time;
        const Metrics m = accumulate_metrics(trace);
        double tot = 0.0, sq = 0.0;
        for (int k : counts) tot += k, sq += double(k) * k;
        const double C = c_sum / c.episode_len;
        const double F = sq > 0 ? tot * tot / (c.n_pois * sq) : 0.0;
        const double E = e_sum / (c.episode_len * 3.0);
        EXPECT_NEAR(m.coverage, C, 1e-10);
        EXPECT_NEAR(m.fairness, F, 1e-10);
        EXPECT_NEAR(m.energy, E, 1e-10);
        EXPECT_NEAR(m.cfe, E > 0 ? C * F / E : 0.0, 1e-10);
        for (std::size_t j = 0; j < c.n_pois; ++j) EXPECT_EQ(s.coverage_time[j], static_cast<std::uint32_t>(counts[j]));
    }
}

TEST(Trace, WritesOneVersionedLinePerStep) {
    const WorldConfig c = testing_support::small_world(2, 3);
    auto [s, snap] = reset(c, 5);
    std::ostringstream out;
    TraceWriter writer(out);
    for (int t = 0; t < 3; ++t) {
        const ad::Tensor a = actions({{0.5, 0}, {0, -0.5}});
        const StepResult r = step(s, c, a);
        writer.write_step(7, s, a, r);
    }
    std::istringstream in(out.str());
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j["schema"], "ehcama.trace/1");
        EXPECT_EQ(j["episode"], 7);
        EXPECT_EQ(j["t"], lines + 1);
        EXPECT_EQ(j["uav_positions"].size(), 2u);
        EXPECT_EQ(j["rewards"].size(), 2u);
        ++lines;
    }
    EXPECT_EQ(lines, 3);
}
