#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "ehcama/checkpoint.hpp"
#include "ehcama/env.hpp"
#include "ehcama/nets.hpp"
#include "test_support.hpp"

using namespace ehcama;
using namespace ehcama::nets;
namespace ts = testing_support;

namespace {

NetConfig small_config(std::size_t embed = 6, std::size_t heads = 2) {
    NetConfig c;
    c.embed_dim = embed;
    c.heads = heads;
    c.position_scale = 20.0;
    c.velocity_scale = 10.0;
    return c;
}

ts::Matrix hidden_matrix(const Tensor &t) { return ts::to_matrix(t); }

std::vector<GraphSnapshot> random_snapshots(std::mt19937_64 &rng, std::size_t count, std::size_t n_uavs,
                                            std::size_t n_pois) {
    std::vector<GraphSnapshot> out;
    for (std::size_t b = 0; b < count; ++b) out.push_back(ts::random_snapshot(rng, n_uavs, n_pois));
    return out;
}

GraphBatch batch_of(const std::vector<GraphSnapshot> &snaps) {
    std::vector<const GraphSnapshot *> ptrs;
    for (const auto &s : snaps) ptrs.push_back(&s);
    return GraphBatch::from(ptrs);
}

} // namespace

TEST(Nets, ConfigValidation) {
    NetConfig c = small_config(6, 4);
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.position_scale = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_NO_THROW(small_config().validate());
}

TEST(Nets, GatForwardMatchesLoopReference) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> dim(1, 4);
    for (int instance = 0; instance < 100; ++instance) {
        const std::size_t heads = dim(rng), hd = dim(rng), batch = dim(rng);
        const std::size_t nq = dim(rng), ns = dim(rng) + 1;
        ActorParams actor = make_actor(small_config(heads * hd, heads), rng());
        const Tensor q = ts::random_tensor(rng, batch * nq, heads * hd);
        const Tensor s = ts::random_tensor(rng, batch * ns, heads * hd);
        const auto mask = ts::random_mask(rng, batch * nq * ns, 0.5);
        const std::size_t group = instance % 2;
        Tape tape;
        const Tensor out = gat_forward(tape, actor.observe, group, tape.constant(q), tape.constant(s), mask, batch,
                                       heads, Binding::frozen)
                               .value();
        const auto ref = ts::ref_gat(ts::to_matrix(q), ts::to_matrix(s), actor.observe.key[group].value,
                                     actor.observe.value[group].value, mask, batch, heads);
        EXPECT_LE(ts::max_abs_diff(ref, out), 1e-10) << "instance " << instance;
    }
}

TEST(Nets, HgatBlockMatchesLoopReference) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::size_t> dim(1, 4);
    for (int instance = 0; instance < 100; ++instance) {
        const std::size_t heads = dim(rng), hd = dim(rng), batch = dim(rng);
        const std::size_t n = dim(rng), m = dim(rng);
        const std::size_t d = heads * hd;
        ActorParams actor = make_actor(small_config(d, heads), rng());
        const Tensor e_uav = ts::random_tensor(rng, batch * n, d);
        const Tensor e_poi = ts::random_tensor(rng, batch * m, d);
        const auto mask_uav = ts::random_mask(rng, batch * n * n, 0.5);
        const auto mask_poi = ts::random_mask(rng, batch * n * m, 0.5);
        Tape tape;
        Var uav = tape.constant(e_uav);
        const GroupSource groups[] = {{uav, mask_uav}, {tape.constant(e_poi), mask_poi}};
        const Tensor out = hgat_block_forward(tape, actor.observe, uav, groups, batch, heads, Binding::frozen).value();
        const auto ref = ts::ref_hgat(actor.observe, ts::to_matrix(e_uav),
                                      {{ts::to_matrix(e_uav), mask_uav}, {ts::to_matrix(e_poi), mask_poi}}, batch, heads);
        EXPECT_LE(ts::max_abs_diff(ref, out), 1e-10) << "instance " << instance;
    }
}

TEST(Nets, GruStepMatchesLoopReference) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> dim(1, 5);
    for (int instance = 0; instance < 100; ++instance) {
        const std::size_t heads = 1, d = dim(rng), rows = dim(rng);
        ActorParams actor = make_actor(small_config(d, heads), rng());
        const Tensor x = ts::random_tensor(rng, rows, 2 * d);
        const Tensor h = ts::random_tensor(rng, rows, d);
        Tape tape;
        const Tensor out = gru_step(tape, actor.gru, tape.constant(x), tape.constant(h), Binding::frozen).value();
        EXPECT_LE(ts::max_abs_diff(ts::ref_gru(actor.gru, ts::to_matrix(x), ts::to_matrix(h)), out), 1e-10);
    }
}

TEST(Nets, GruWithSaturatedUpdateGateKeepsHidden) {
    ActorParams actor = make_actor(small_config(4, 1), 5);
    // z = sigmoid(-1000) = 0 leaves h unchanged
    for (std::size_t j = 0; j < 4; ++j) actor.gru.input_bias.value[4 + j] = -1000.0;
    std::mt19937_64 rng(5);
    const Tensor h = ts::random_tensor(rng, 2, 4);
    Tape tape;
    const Tensor out =
        gru_step(tape, actor.gru, tape.constant(ts::random_tensor(rng, 2, 8)), tape.constant(h), Binding::frozen)
            .value();
    EXPECT_EQ(out, h);
}

TEST(Nets, ActorAndCriticMatchLoopReference) {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::size_t> dim(1, 3);
    for (int instance = 0; instance < 100; ++instance) {
        const std::size_t heads = dim(rng), d = heads * dim(rng), batch = dim(rng);
        const std::size_t n = dim(rng) + 1, m = dim(rng);
        const NetConfig cfg = small_config(d, heads);
        ActorParams actor = make_actor(cfg, rng());
        CriticParams critic = make_critic(cfg, rng());
        const auto snaps = random_snapshots(rng, batch, n, m);
        const GraphBatch g = batch_of(snaps);
        const Tensor h = ts::random_tensor(rng, batch * n, d);
        const Tensor noise = ts::random_tensor(rng, batch * n, 2, -2.0, 2.0);

        Tape tape;
        const PolicyBatch pb = actor_forward(tape, actor, g, tape.constant(h), &noise, Binding::frozen);
        const ts::RefPolicy rp = ts::ref_actor(actor, g, hidden_matrix(h), &noise);
        EXPECT_LE(ts::max_abs_diff(rp.action, pb.action.value()), 1e-10);
        EXPECT_LE(ts::max_abs_diff(rp.next_hidden, pb.next_hidden.value()), 1e-10);
        ASSERT_TRUE(pb.log_pi.has_value());
        for (std::size_t r = 0; r < batch * n; ++r) EXPECT_NEAR(pb.log_pi->value()[r], rp.log_pi[r], 1e-10);

        const PolicyBatch greedy = actor_forward(tape, actor, g, tape.constant(h), nullptr, Binding::frozen);
        EXPECT_LE(ts::max_abs_diff(ts::ref_actor(actor, g, hidden_matrix(h), nullptr).action, greedy.action.value()),
                  1e-10);
        EXPECT_FALSE(greedy.log_pi.has_value());

        const CriticBatch cb = critic_forward(tape, critic, g, pb.action, tape.constant(h), Binding::frozen);
        const ts::RefCritic rc = ts::ref_critic(critic, g, rp.action, hidden_matrix(h));
        for (std::size_t r = 0; r < batch * n; ++r) EXPECT_NEAR(cb.q.value()[r], rc.q[r], 1e-10);
        EXPECT_LE(ts::max_abs_diff(rc.next_hidden, cb.next_hidden.value()), 1e-10);
    }
}

namespace {

struct NetProblem {
    NetConfig cfg = small_config(4, 2);
    std::vector<GraphSnapshot> snaps;
    GraphBatch graph;
    Tensor hidden;
    Tensor noise;
    Tensor action;
    Tensor weights;
};

NetProblem make_problem(std::mt19937_64 &rng) {
    NetProblem p;
    p.snaps = random_snapshots(rng, 2, 3, 3);
    p.graph = batch_of(p.snaps);
    p.hidden = ts::random_tensor(rng, 6, p.cfg.embed_dim, -0.5, 0.5);
    p.noise = ts::random_tensor(rng, 6, 2, -1.5, 1.5);
    p.action = ts::random_tensor(rng, 6, 2, -0.9, 0.9);
    p.weights = ts::random_tensor(rng, 6, 2);
    return p;
}

} // namespace

TEST(NetsGradients, StochasticActorForwardBackward) {
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        NetProblem p = make_problem(rng);
        ActorParams actor = make_actor(p.cfg, rng());
        const Tensor wl = ts::random_tensor(rng, 6, 1);
        auto loss = [&](bool with_backward) {
            Tape tape;
            const PolicyBatch pb = actor_forward(tape, actor, p.graph, tape.constant(p.hidden), &p.noise,
                                                 Binding::trainable);
            Var l = ad::add(ad::add(ts::probe(tape, pb.action, p.weights), ts::probe(tape, *pb.log_pi, wl)),
                            ad::mean(pb.next_hidden));
            if (with_backward) tape.backward(l);
            return l.value()[0];
        };
        const auto report = ts::check_parameter_gradients(actor.parameters(), loss);
        EXPECT_EQ(report.failures, 0u) << "seed " << seed << ": " << report.first_failure;
    }
}

TEST(NetsGradients, DeterministicActorForwardBackward) {
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(2000 + seed);
        NetProblem p = make_problem(rng);
        ActorParams actor = make_actor(p.cfg, rng());
        const std::vector<Parameter *> all = actor.parameters();
        // the spread head does not enter the mean action
        std::vector<Parameter *> used(all.begin(), all.end() - 2);
        auto loss = [&](bool with_backward) {
            Tape tape;
            const PolicyBatch pb =
                actor_forward(tape, actor, p.graph, tape.constant(p.hidden), nullptr, Binding::trainable);
            Var l = ts::probe(tape, pb.action, p.weights);
            if (with_backward) tape.backward(l);
            return l.value()[0];
        };
        const auto report = ts::check_parameter_gradients(used, loss);
        EXPECT_EQ(report.failures, 0u) << "seed " << seed << ": " << report.first_failure;
    }
}

TEST(NetsGradients, CriticForwardBackward) {
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(3000 + seed);
        NetProblem p = make_problem(rng);
        CriticParams critic = make_critic(p.cfg, rng());
        const Tensor wq = ts::random_tensor(rng, 6, 1);
        auto loss = [&](bool with_backward) {
            Tape tape;
            const CriticBatch cb = critic_forward(tape, critic, p.graph, tape.constant(p.action),
                                                  tape.constant(p.hidden), Binding::trainable);
            Var l = ad::add(ts::probe(tape, cb.q, wq), ad::mean(cb.next_hidden));
            if (with_backward) tape.backward(l);
            return l.value()[0];
        };
        const auto report = ts::check_parameter_gradients(critic.parameters(), loss);
        EXPECT_EQ(report.failures, 0u) << "seed " << seed << ": " << report.first_failure;

        // and with respect to the action and hidden inputs
        const auto inputs = ts::check_input_gradients({p.action, p.hidden}, [&](Tape &tape, const auto &x) {
            const CriticBatch cb = critic_forward(tape, critic, p.graph, x[0], x[1], Binding::frozen);
            return ts::probe(tape, cb.q, wq);
        });
        EXPECT_EQ(inputs.failures, 0u) << "seed " << seed << ": " << inputs.first_failure;
    }
}

TEST(Nets, SquashedDensityIntegratesToOne) {
    NetConfig cfg = small_config(4, 2);
    cfg.action_dim = 1;
    std::mt19937_64 rng(6);
    const GraphSnapshot snap = ts::random_snapshot(rng, 1, 2);
    constexpr std::size_t kGrid = 10000;
    const std::vector<const GraphSnapshot *> copies(kGrid, &snap);
    const GraphBatch grid_graph = GraphBatch::from(copies);
    const Tensor hidden(kGrid, cfg.embed_dim);

    const std::pair<double, double> cases[] = {{0.0, 0.0}, {0.5, -0.5}, {-0.3, -1.5}, {1.0, -1.0}};
    for (const auto &[mu, log_sigma] : cases) {
        ActorParams actor = make_actor(cfg, 9);
        actor.mu_head.weight.value.fill(0.0);
        actor.mu_head.bias.value[0] = mu;
        actor.log_sigma_head.weight.value.fill(0.0);
        actor.log_sigma_head.bias.value[0] = log_sigma;
        const double sigma = std::exp(log_sigma);
        const double da = 2.0 / kGrid;
        Tensor noise(kGrid, 1);
        for (std::size_t k = 0; k < kGrid; ++k) {
            const double a = -1.0 + (static_cast<double>(k) + 0.5) * da;
            noise[k] = (std::atanh(a) - mu) / sigma;
        }
        Tape tape;
        const PolicyBatch pb = actor_forward(tape, actor, grid_graph, tape.constant(hidden), &noise, Binding::frozen);
        double integral = 0.0;
        for (std::size_t k = 0; k < kGrid; ++k) integral += std::exp(pb.log_pi->value()[k]) * da;
        EXPECT_NEAR(integral, 1.0, 1e-3) << "mu " << mu << " log_sigma " << log_sigma;
    }
}

TEST(Nets, LogSigmaIsClamped) {
    ActorParams actor = make_actor(small_config(4, 2), 3);
    actor.log_sigma_head.weight.value.fill(0.0);
    actor.log_sigma_head.bias.value[0] = 7.0;
    actor.log_sigma_head.bias.value[1] = -40.0;
    std::mt19937_64 rng(3);
    const GraphSnapshot snap = ts::random_snapshot(rng, 2, 2);
    Tape tape;
    const PolicyBatch pb =
        actor_forward(tape, actor, GraphBatch::from(snap), tape.constant(Tensor(2, 4)), nullptr, Binding::frozen);
    EXPECT_EQ(pb.log_sigma.value()(0, 0), 2.0);
    EXPECT_EQ(pb.log_sigma.value()(1, 1), -20.0);
}

namespace {

/// World in which UAV positions are set explicitly.
GraphSnapshot snapshot_at(const std::vector<env::Vec2> &uavs, const std::vector<env::Vec2> &vels,
                          const std::vector<env::Vec2> &pois, double area = 100.0) {
    env::WorldConfig c = ts::small_world(uavs.size(), pois.size());
    c.area_size = area;
    env::WorldState s;
    s.uav_positions = uavs;
    s.uav_velocities = vels;
    s.poi_positions = pois;
    s.coverage_time.assign(pois.size(), 0);
    return env::build_graphs(s, c);
}

} // namespace

TEST(NetsInvariants, PermutingUavsPermutesOutputs) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 5;
        std::uniform_real_distribution<double> pos(0.0, 20.0), vel(-5.0, 5.0);
        std::vector<env::Vec2> u(n), v(n), p(4);
        for (std::size_t i = 0; i < n; ++i) u[i] = {pos(rng), pos(rng)}, v[i] = {vel(rng), vel(rng)};
        for (auto &q : p) q = {pos(rng), pos(rng)};
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<env::Vec2> pu(n), pv(n);
        for (std::size_t i = 0; i < n; ++i) pu[i] = u[perm[i]], pv[i] = v[perm[i]];

        ActorParams actor = make_actor(small_config(), rng());
        CriticParams critic = make_critic(small_config(), rng());
        const Tensor h = ts::random_tensor(rng, n, 6);
        Tensor ph(n, 6);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < 6; ++c) ph(i, c) = h(perm[i], c);
        const Tensor a = ts::random_tensor(rng, n, 2);
        Tensor pa(n, 2);
        for (std::size_t i = 0; i < n; ++i) pa(i, 0) = a(perm[i], 0), pa(i, 1) = a(perm[i], 1);

        Tape tape;
        const GraphBatch g = GraphBatch::from(snapshot_at(u, v, p));
        const GraphBatch pg = GraphBatch::from(snapshot_at(pu, pv, p));
        const Tensor out = actor_forward(tape, actor, g, tape.constant(h), nullptr, Binding::frozen).action.value();
        const Tensor pout = actor_forward(tape, actor, pg, tape.constant(ph), nullptr, Binding::frozen).action.value();
        const Tensor q = critic_forward(tape, critic, g, tape.constant(a), tape.constant(h), Binding::frozen).q.value();
        const Tensor pq =
            critic_forward(tape, critic, pg, tape.constant(pa), tape.constant(ph), Binding::frozen).q.value();
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_NEAR(pout(i, 0), out(perm[i], 0), 1e-12);
            EXPECT_NEAR(pout(i, 1), out(perm[i], 1), 1e-12);
            EXPECT_NEAR(pq[i], q[perm[i]], 1e-12);
        }
    }
}

TEST(NetsInvariants, IsolatedAgentIgnoresDistantEntitiesAndTeamSize) {
    ActorParams actor = make_actor(small_config(), 21);
    const Tensor h1(1, 6);
    const std::vector<env::Vec2> pois = {{2.0, 3.0}, {80.0, 80.0}};
    Tape tape;
    const GraphBatch alone = GraphBatch::from(snapshot_at({{1.0, 1.0}}, {{0.5, -0.5}}, pois));
    const Tensor solo = actor_forward(tape, actor, alone, tape.constant(h1), nullptr, Binding::frozen).action.value();

    // the same agent with teammates far outside its observation and communication ranges
    const GraphBatch team = GraphBatch::from(snapshot_at({{1.0, 1.0}, {60.0, 60.0}, {90.0, 10.0}},
                                                         {{0.5, -0.5}, {1.0, 1.0}, {-2.0, 0.0}}, pois));
    const Tensor with_team =
        actor_forward(tape, actor, team, tape.constant(Tensor(3, 6)), nullptr, Binding::frozen).action.value();
    EXPECT_NEAR(with_team(0, 0), solo(0, 0), 1e-13);
    EXPECT_NEAR(with_team(0, 1), solo(0, 1), 1e-13);

    // moving the PoI it cannot see leaves its action unchanged
    const GraphBatch moved = GraphBatch::from(snapshot_at({{1.0, 1.0}}, {{0.5, -0.5}}, {{2.0, 3.0}, {50.0, 20.0}}));
    const Tensor moved_out =
        actor_forward(tape, actor, moved, tape.constant(h1), nullptr, Binding::frozen).action.value();
    EXPECT_NEAR(moved_out(0, 0), solo(0, 0), 1e-13);
    EXPECT_NEAR(moved_out(0, 1), solo(0, 1), 1e-13);
}

TEST(NetsInvariants, EmptyNeighbourhoodGivesZeroSlot) {
    ActorParams actor = make_actor(small_config(), 4);
    std::mt19937_64 rng(4);
    const Tensor q = ts::random_tensor(rng, 2, 6);
    const Tensor s = ts::random_tensor(rng, 3, 6);
    const std::vector<std::uint8_t> mask = {0, 0, 0, 1, 0, 1};
    Tape tape;
    const Tensor out =
        gat_forward(tape, actor.observe, 0, tape.constant(q), tape.constant(s), mask, 1, 2, Binding::frozen).value();
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(out(0, c), 0.0);
    EXPECT_NE(out(1, 0), 0.0);
}

TEST(NetsInvariants, SharedParametersAcrossTeamSizes) {
    ActorParams actor = make_actor(small_config(), 12);
    std::mt19937_64 rng(12);
    for (std::size_t n : {1u, 3u, 8u}) {
        const GraphSnapshot snap = ts::random_snapshot(rng, n, 5);
        Tape tape;
        const PolicyBatch pb =
            actor_forward(tape, actor, GraphBatch::from(snap), tape.constant(Tensor(n, 6)), nullptr, Binding::frozen);
        EXPECT_EQ(pb.action.rows(), n);
    }
}

TEST(Nets, WrongLocalStateWidthIsConfigError) {
    NetConfig cfg = small_config();
    cfg.uav_state_dim = 3;
    ActorParams actor = make_actor(cfg, 1);
    std::mt19937_64 rng(1);
    const GraphSnapshot snap = ts::random_snapshot(rng, 2, 2);
    Tape tape;
    EXPECT_THROW(actor_forward(tape, actor, GraphBatch::from(snap), tape.constant(Tensor(2, 6)), nullptr,
                               Binding::frozen),
                 ConfigError);
}

TEST(Nets, SoftUpdateAndCopy) {
    ActorParams online = make_actor(small_config(), 1);
    ActorParams target = make_actor(small_config(), 2);
    ActorParams before = target;
    soft_update(target.parameters(), online.parameters(), 0.25);
    auto t = target.parameters();
    auto o = online.parameters();
    auto b = before.parameters();
    for (std::size_t k = 0; k < t.size(); ++k)
        for (std::size_t i = 0; i < t[k]->value.size(); ++i)
            EXPECT_DOUBLE_EQ(t[k]->value[i], 0.25 * o[k]->value[i] + 0.75 * b[k]->value[i]);
    EXPECT_THROW(soft_update(target.parameters(), online.parameters(), 0.0), ConfigError);
    copy_parameters(target.parameters(), online.parameters());
    for (std::size_t k = 0; k < t.size(); ++k) EXPECT_EQ(t[k]->value, o[k]->value);

    ActorParams wide = make_actor(small_config(8, 2), 3);
    EXPECT_THROW(soft_update(wide.parameters(), online.parameters(), 0.5), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    CriticParams critic = make_critic(small_config(), 77);
    Checkpoint c;
    c.metadata["note"] = "x";
    store_net_config(c, critic.config);
    c.add("critic", critic.parameters());
    const auto path = std::filesystem::temp_directory_path() / "ehcama_test_ckpt.bin";
    save_checkpoint(path, c);
    const Checkpoint back = load_checkpoint(path);
    EXPECT_EQ(back, c);
    EXPECT_EQ(read_net_config(back), critic.config);

    CriticParams fresh = make_critic(small_config(), 1);
    back.restore("critic", fresh.parameters());
    auto a = fresh.parameters();
    auto b = critic.parameters();
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k]->value, b[k]->value);

    CriticParams wide = make_critic(small_config(8, 2), 1);
    EXPECT_THROW(back.restore("critic", wide.parameters()), ConfigError);
    EXPECT_THROW(back.restore("actor", fresh.parameters()), ConfigError);
    std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedFileIsRejected) {
    const auto path = std::filesystem::temp_directory_path() / "ehcama_test_bad.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out << "EHCAMA-CKPT";
    }
    EXPECT_THROW(load_checkpoint(path), ConfigError);
    std::filesystem::remove(path);
}
