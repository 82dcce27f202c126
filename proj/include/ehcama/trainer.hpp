#pragma once

// Off-policy maximum-entropy training of the shared UAV policy: twin soft
// critics with target networks, reparameterized actor updates, and the
// deterministic and zero-temperature variants.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ehcama/autodiff.hpp"
#include "ehcama/checkpoint.hpp"
#include "ehcama/env.hpp"
#include "ehcama/nets.hpp"
#include "ehcama/replay.hpp"

namespace ehcama::train {

enum class Variant { ehcama, dhcama, variant_a };

std::string to_string(Variant v);
Variant parse_variant(const std::string &text);

struct TrainerConfig {
    env::WorldConfig world;
    std::size_t embed_dim = 256;
    std::size_t heads = 4;

    double gamma = 0.95;
    double tau = 0.01;
    double alpha = 2.5;
    double learning_rate = 1e-3;
    std::size_t batch_size = 128;
    std::size_t buffer_capacity = 50000;
    std::size_t updates_per_window = 4;
    std::size_t update_window = 100;
    std::size_t total_episodes = 100000;
    Variant variant = Variant::ehcama;
    double exploration_noise_sigma = 0.1;
    /// Global gradient-norm clip per network; 0 disables clipping.
    double grad_clip_norm = 10.0;
    std::uint64_t rng_seed = 1;

    /// Deterministic evaluation every eval_interval training episodes (0: off).
    std::size_t eval_interval = 0;
    std::size_t eval_episodes = 1;
    /// Checkpoint every checkpoint_interval episodes (0: final only).
    std::size_t checkpoint_interval = 0;

    /// Temperature actually used by the updates (0 for variant_a and dhcama).
    double effective_alpha() const;
    nets::NetConfig net_config() const;
    void validate() const;
};

/// Flat "key = value" text; '#' starts a comment. Unknown keys are errors.
TrainerConfig parse_config(const std::string &text, TrainerConfig base = {});
TrainerConfig load_config(const std::string &path);
/// Writes every key; parse_config(format_config(c)) reproduces c.
std::string format_config(const TrainerConfig &config);
/// Applies one key/value pair, throwing ConfigError naming an unknown key.
void set_config_value(TrainerConfig &config, const std::string &key, const std::string &value);

/// Seed of the index-th episode in the stream identified by base.
std::uint64_t episode_seed(std::uint64_t base, std::uint64_t index);
/// Seed of the index-th evaluation episode; disjoint from the training stream.
std::uint64_t eval_seed(std::uint64_t base, std::uint64_t index);

struct EpisodeStats {
    /// Per-agent episode return averaged over agents.
    double mean_reward = 0.0;
    env::Metrics metrics;
};

/// Returns the n_uavs x 2 action block for the snapshot at timeslot t.
using ActionFn = std::function<ad::Tensor(const GraphSnapshot &, std::size_t t)>;

/// Runs one episode of `world` from `seed` under `policy`, optionally
/// exporting a JSON-lines trace.
EpisodeStats run_episode(const env::WorldConfig &world, std::uint64_t seed, const ActionFn &policy,
                         env::TraceWriter *trace = nullptr, std::size_t episode_index = 0);

/// Uniform actions in [-1, 1]^2.
ActionFn random_policy(std::uint64_t seed);

/// Deterministic mean-action policy with its own recurrent state, zeroed at
/// t = 0.
class GreedyPolicy {
public:
    explicit GreedyPolicy(nets::ActorParams &actor) : actor_(actor) {}
    ad::Tensor operator()(const GraphSnapshot &snapshot, std::size_t t);

private:
    nets::ActorParams &actor_;
    ad::Tensor hidden_;
};

enum class Mode { train, eval };

struct ActResult {
    ad::Tensor actions;             // N x action_dim
    std::optional<ad::Tensor> log_pi; // N x 1, stochastic train mode only
    replay::HiddenStates next_hidden;
};

struct CriticLosses {
    double critic1 = 0.0;
    double critic2 = 0.0;
};

struct UpdateStats {
    CriticLosses critic;
    double actor_objective = 0.0;
};

struct CurveRecord {
    std::size_t episode = 0;
    double mean_reward = 0.0;
    env::Metrics metrics;
    /// NaN when no update round ran during the episode.
    double critic_loss_1 = 0.0;
    double critic_loss_2 = 0.0;
    double actor_objective = 0.0;
    double wall_time = 0.0;
};

struct EvalRecord {
    std::size_t episode = 0;
    double mean_reward = 0.0;
    env::Metrics metrics;
};

struct TrainHooks {
    std::function<void(const CurveRecord &)> on_episode;
    std::function<void(const EvalRecord &)> on_eval;
    std::function<void(std::size_t episode)> on_checkpoint;
};

struct Networks {
    nets::ActorParams actor;
    nets::CriticParams critic1;
    nets::CriticParams critic2;
    nets::ActorParams target_actor;
    nets::CriticParams target_critic1;
    nets::CriticParams target_critic2;
};

class Trainer {
public:
    explicit Trainer(TrainerConfig config);
    Trainer(const Trainer &) = delete;
    Trainer &operator=(const Trainer &) = delete;

    const TrainerConfig &config() const { return config_; }
    Networks &networks() { return *nets_; }
    replay::ReplayBuffer &buffer() { return buffer_; }
    std::mt19937_64 &rng() { return rng_; }
    std::size_t update_rounds() const { return update_rounds_; }

    /// Chooses actions for every UAV and advances all three recurrent states.
    ActResult act(const GraphSnapshot &snapshot, const replay::HiddenStates &hidden, Mode mode);

    /// One twin-critic Bellman step. Returns the two losses before the step.
    CriticLosses critic_update(std::span<const replay::Experience *const> batch);
    /// One reparameterized actor step (or the deterministic one for dhcama).
    /// Returns the objective before the step.
    double actor_update(std::span<const replay::Experience *const> batch);
    void soft_update_targets();

    /// Critics, actor, targets on a fresh minibatch; empty if the buffer holds
    /// fewer than batch_size transitions.
    std::optional<UpdateStats> update_round();

    /// Target values y for a batch (agents in row order b*N + i).
    ad::Tensor critic_targets(std::span<const replay::Experience *const> batch);

    /// Runs one training episode, storing experience and updating on schedule.
    CurveRecord train_episode(std::size_t episode);
    /// Deterministic evaluation of the online actor on a fixed seed list.
    EvalRecord evaluate(std::size_t episode);
    void train(const TrainHooks &hooks = {});

    nets::Checkpoint checkpoint() const;
    void restore(const nets::Checkpoint &checkpoint);

private:
    ad::Tensor standard_normal(std::size_t rows, std::size_t cols);
    void step_optimizer(ad::Adam &optimizer, std::span<ad::Parameter *const> params);

    TrainerConfig config_;
    double alpha_;
    std::mt19937_64 rng_;
    std::unique_ptr<Networks> nets_;
    std::vector<ad::Parameter *> actor_params_;
    std::vector<ad::Parameter *> critic1_params_;
    std::vector<ad::Parameter *> critic2_params_;
    std::unique_ptr<ad::Adam> actor_opt_;
    std::unique_ptr<ad::Adam> critic1_opt_;
    std::unique_ptr<ad::Adam> critic2_opt_;
    replay::ReplayBuffer buffer_;
    std::size_t timeslots_ = 0;
    std::size_t update_rounds_ = 0;
};

/// min(Q1, Q2) - alpha * log_pi for the given action, evaluated on `tape`.
ad::Var soft_value(ad::Tape &tape, nets::CriticParams &critic1, nets::CriticParams &critic2,
                   const nets::GraphBatch &graph, ad::Var action, std::optional<ad::Var> log_pi, ad::Var hidden1,
                   ad::Var hidden2, double alpha, ad::Binding binding);

/// Stacks rows of per-transition tensors selected by `field`.
ad::Tensor stack_rows(std::span<const replay::Experience *const> batch,
                      const std::function<const ad::Tensor &(const replay::Experience &)> &field);

/// Curve CSV helpers: the header and one formatted row.
std::string curve_csv_header();
std::string curve_csv_row(const CurveRecord &record);

} // namespace ehcama::train
