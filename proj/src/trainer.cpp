#include "ehcama/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace ehcama::train {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t kEvalStream = 0x6576616C00000000ULL;
constexpr std::uint64_t kInitStream = 0x696E697400000000ULL;

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string trim(const std::string &s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double parse_real(const std::string &key, const std::string &value) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &used);
    } catch (const std::exception &) {
        used = 0;
    }
    if (used == 0 || used != value.size() || !std::isfinite(v)) {
        throw ConfigError("config key '" + key + "': '" + value + "' is not a number");
    }
    return v;
}

std::uint64_t parse_count(const std::string &key, const std::string &value) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        if (!value.empty() && value.front() != '-') v = std::stoull(value, &used);
    } catch (const std::exception &) {
        used = 0;
    }
    if (used == 0 || used != value.size()) {
        throw ConfigError("config key '" + key + "': '" + value + "' is not a non-negative integer");
    }
    return v;
}

struct Field {
    const char *key;
    std::function<std::string(const TrainerConfig &)> get;
    std::function<void(TrainerConfig &, const std::string &key, const std::string &value)> set;
};

template <typename T>
Field real_field(const char *key, T TrainerConfig::*member) {
    return {key, [member](const TrainerConfig &c) { return format_double(c.*member); },
            [member](TrainerConfig &c, const std::string &k, const std::string &v) { c.*member = parse_real(k, v); }};
}

template <typename T>
Field count_field(const char *key, T TrainerConfig::*member) {
    return {key, [member](const TrainerConfig &c) { return std::to_string(c.*member); },
            [member](TrainerConfig &c, const std::string &k, const std::string &v) {
                c.*member = static_cast<T>(parse_count(k, v));
            }};
}

template <typename T>
Field world_real(const char *key, T env::WorldConfig::*member) {
    return {key, [member](const TrainerConfig &c) { return format_double(c.world.*member); },
            [member](TrainerConfig &c, const std::string &k, const std::string &v) {
                c.world.*member = parse_real(k, v);
            }};
}

template <typename T>
Field world_count(const char *key, T env::WorldConfig::*member) {
    return {key, [member](const TrainerConfig &c) { return std::to_string(c.world.*member); },
            [member](TrainerConfig &c, const std::string &k, const std::string &v) {
                c.world.*member = static_cast<T>(parse_count(k, v));
            }};
}

const std::vector<Field> &fields() {
    static const std::vector<Field> table = {
        world_real("area_size", &env::WorldConfig::area_size),
        world_count("n_pois", &env::WorldConfig::n_pois),
        world_count("n_uavs", &env::WorldConfig::n_uavs),
        world_real("v_max", &env::WorldConfig::v_max),
        world_real("hover_energy", &env::WorldConfig::hover_energy),
        world_real("move_energy", &env::WorldConfig::move_energy),
        world_real("recon_range", &env::WorldConfig::recon_range),
        world_real("obs_range", &env::WorldConfig::obs_range),
        world_real("comm_range", &env::WorldConfig::comm_range),
        world_real("acc_max", &env::WorldConfig::acc_max),
        world_count("episode_len", &env::WorldConfig::episode_len),
        world_real("eta1", &env::WorldConfig::eta1),
        world_real("eta2", &env::WorldConfig::eta2),
        count_field("embed_dim", &TrainerConfig::embed_dim),
        count_field("heads", &TrainerConfig::heads),
        real_field("gamma", &TrainerConfig::gamma),
        real_field("tau", &TrainerConfig::tau),
        real_field("alpha", &TrainerConfig::alpha),
        real_field("learning_rate", &TrainerConfig::learning_rate),
        count_field("batch_size", &TrainerConfig::batch_size),
        count_field("buffer_capacity", &TrainerConfig::buffer_capacity),
        count_field("updates_per_window", &TrainerConfig::updates_per_window),
        count_field("update_window", &TrainerConfig::update_window),
        count_field("total_episodes", &TrainerConfig::total_episodes),
        {"variant", [](const TrainerConfig &c) { return to_string(c.variant); },
         [](TrainerConfig &c, const std::string &, const std::string &v) { c.variant = parse_variant(v); }},
        real_field("exploration_noise_sigma", &TrainerConfig::exploration_noise_sigma),
        real_field("grad_clip_norm", &TrainerConfig::grad_clip_norm),
        count_field("rng_seed", &TrainerConfig::rng_seed),
        count_field("eval_interval", &TrainerConfig::eval_interval),
        count_field("eval_episodes", &TrainerConfig::eval_episodes),
        count_field("checkpoint_interval", &TrainerConfig::checkpoint_interval),
    };
    return table;
}

} // namespace

// ---- configuration -------------------------------------------------------

std::string to_string(Variant v) {
    switch (v) {
    case Variant::ehcama: return "ehcama";
    case Variant::dhcama: return "dhcama";
    case Variant::variant_a: return "variant_a";
    }
    return "unknown";
}

Variant parse_variant(const std::string &text) {
    if (text == "ehcama") return Variant::ehcama;
    if (text == "dhcama") return Variant::dhcama;
    if (text == "variant_a") return Variant::variant_a;
    throw ConfigError("unknown variant '" + text + "' (expected ehcama, dhcama or variant_a)");
}

double TrainerConfig::effective_alpha() const { return variant == Variant::ehcama ? alpha : 0.0; }

nets::NetConfig TrainerConfig::net_config() const {
    nets::NetConfig c;
    c.embed_dim = embed_dim;
    c.heads = heads;
    c.position_scale = world.area_size;
    c.velocity_scale = world.v_max;
    c.action_scale = world.acc_max;
    return c;
}

void TrainerConfig::validate() const {
    world.validate();
    net_config().validate();
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (buffer_capacity == 0) throw ConfigError("buffer_capacity must be positive");
    if (update_window == 0) throw ConfigError("update_window must be positive");
    if (!(exploration_noise_sigma >= 0.0)) throw ConfigError("exploration_noise_sigma must be non-negative");
    if (!(grad_clip_norm >= 0.0)) throw ConfigError("grad_clip_norm must be non-negative");
    if (eval_interval > 0 && eval_episodes == 0) throw ConfigError("eval_episodes must be positive");
}

void set_config_value(TrainerConfig &config, const std::string &key, const std::string &value) {
    for (const Field &f : fields()) {
        if (key == f.key) {
            f.set(config, key, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

TrainerConfig parse_config(const std::string &text, TrainerConfig base) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    base.validate();
    return base;
}

TrainerConfig load_config(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string format_config(const TrainerConfig &config) {
    std::ostringstream os;
    for (const Field &f : fields()) os << f.key << " = " << f.get(config) << '\n';
    return os.str();
}

std::uint64_t episode_seed(std::uint64_t base, std::uint64_t index) { return splitmix64(splitmix64(base) ^ index); }

std::uint64_t eval_seed(std::uint64_t base, std::uint64_t index) { return episode_seed(base ^ kEvalStream, index); }

// ---- episodes and fixed policies -----------------------------------------

EpisodeStats run_episode(const env::WorldConfig &world, std::uint64_t seed, const ActionFn &policy,
                         env::TraceWriter *trace, std::size_t episode_index) {
    auto [state, snapshot] = env::reset(world, seed);
    env::MetricsAccumulator metrics(world.n_pois, world.n_uavs);
    double reward_sum = 0.0;
    for (std::size_t t = 0; t < world.episode_len; ++t) {
        const ad::Tensor actions = policy(snapshot, t);
        env::StepResult result = env::step(state, world, actions);
        for (double r : result.rewards) reward_sum += r;
        metrics.add_step(result.n_covered, result.energies);
        if (trace) trace->write_step(episode_index, state, actions, result);
        snapshot = std::move(result.next_snapshot);
    }
    EpisodeStats stats;
    stats.mean_reward = reward_sum / static_cast<double>(world.n_uavs);
    stats.metrics = metrics.finish(state.coverage_time);
    return stats;
}

ActionFn random_policy(std::uint64_t seed) {
    auto rng = std::make_shared<std::mt19937_64>(seed);
    return [rng](const GraphSnapshot &snapshot, std::size_t) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        ad::Tensor a(snapshot.n_uavs, 2);
        for (double &v : a.data()) v = u(*rng);
        return a;
    };
}

ad::Tensor GreedyPolicy::operator()(const GraphSnapshot &snapshot, std::size_t t) {
    if (t == 0 || hidden_.rows() != snapshot.n_uavs) {
        hidden_ = ad::Tensor(snapshot.n_uavs, actor_.config.embed_dim);
    }
    ad::Tape tape;
    const nets::GraphBatch graph = nets::GraphBatch::from(snapshot);
    const nets::PolicyBatch out =
        nets::actor_forward(tape, actor_, graph, tape.constant(hidden_), nullptr, ad::Binding::frozen);
    hidden_ = out.next_hidden.value();
    return out.action.value();
}

// ---- batched helpers -----------------------------------------------------

ad::Tensor stack_rows(std::span<const replay::Experience *const> batch,
                      const std::function<const ad::Tensor &(const replay::Experience &)> &field) {
    const ad::Tensor &first = field(*batch.front());
    ad::Tensor out(first.rows() * batch.size(), first.cols());
    auto dst = out.data().begin();
    for (const replay::Experience *e : batch) {
        const ad::Tensor &t = field(*e);
        if (!t.same_shape(first)) throw ContractViolation("stack_rows: inconsistent tensor shapes in batch");
        dst = std::copy(t.data().begin(), t.data().end(), dst);
    }
    return out;
}

ad::Var soft_value(ad::Tape &tape, nets::CriticParams &critic1, nets::CriticParams &critic2,
                   const nets::GraphBatch &graph, ad::Var action, std::optional<ad::Var> log_pi, ad::Var hidden1,
                   ad::Var hidden2, double alpha, ad::Binding binding) {
    const nets::CriticBatch q1 = nets::critic_forward(tape, critic1, graph, action, hidden1, binding);
    const nets::CriticBatch q2 = nets::critic_forward(tape, critic2, graph, action, hidden2, binding);
    ad::Var value = ad::minimum(q1.q, q2.q);
    if (log_pi && alpha != 0.0) value = ad::sub(value, ad::scale(*log_pi, alpha));
    return value;
}

// ---- trainer -------------------------------------------------------------

Trainer::Trainer(TrainerConfig config)
    : config_(std::move(config)), alpha_(config_.effective_alpha()), rng_(config_.rng_seed),
      buffer_(config_.buffer_capacity) {
    config_.validate();
    const nets::NetConfig nc = config_.net_config();
    nets_ = std::make_unique<Networks>();
    nets_->actor = nets::make_actor(nc, episode_seed(config_.rng_seed ^ kInitStream, 0));
    nets_->critic1 = nets::make_critic(nc, episode_seed(config_.rng_seed ^ kInitStream, 1));
    nets_->critic2 = nets::make_critic(nc, episode_seed(config_.rng_seed ^ kInitStream, 2));
    nets_->target_actor = nets_->actor;
    nets_->target_critic1 = nets_->critic1;
    nets_->target_critic2 = nets_->critic2;
    actor_params_ = nets_->actor.parameters();
    critic1_params_ = nets_->critic1.parameters();
    critic2_params_ = nets_->critic2.parameters();
    const ad::AdamOptions opts{config_.learning_rate};
    actor_opt_ = std::make_unique<ad::Adam>(actor_params_, opts);
    critic1_opt_ = std::make_unique<ad::Adam>(critic1_params_, opts);
    critic2_opt_ = std::make_unique<ad::Adam>(critic2_params_, opts);
}

ad::Tensor Trainer::standard_normal(std::size_t rows, std::size_t cols) {
    std::normal_distribution<double> dist;
    ad::Tensor t(rows, cols);
    for (double &v : t.data()) v = dist(rng_);
    return t;
}

void Trainer::step_optimizer(ad::Adam &optimizer, std::span<ad::Parameter *const> params) {
    if (config_.grad_clip_norm > 0.0) ad::clip_grad_norm(params, config_.grad_clip_norm);
    optimizer.step();
}

ActResult Trainer::act(const GraphSnapshot &snapshot, const replay::HiddenStates &hidden, Mode mode) {
    const nets::GraphBatch graph = nets::GraphBatch::from(snapshot);
    const std::size_t n = snapshot.n_uavs;
    const std::size_t action_dim = nets_->actor.config.action_dim;
    const bool stochastic = mode == Mode::train && config_.variant != Variant::dhcama;

    ad::Tape tape;
    ad::Tensor noise;
    if (stochastic) noise = standard_normal(n, action_dim);
    const nets::PolicyBatch policy = nets::actor_forward(tape, nets_->actor, graph, tape.constant(hidden.actor),
                                                         stochastic ? &noise : nullptr, ad::Binding::frozen);
    ActResult result;
    result.actions = policy.action.value();
    if (policy.log_pi) result.log_pi = policy.log_pi->value();
    if (mode == Mode::train && config_.variant == Variant::dhcama) {
        const ad::Tensor exploration = standard_normal(n, action_dim);
        constexpr double kBound = 1.0 - 1e-6;
        for (std::size_t k = 0; k < result.actions.size(); ++k) {
            result.actions[k] =
                std::clamp(result.actions[k] + config_.exploration_noise_sigma * exploration[k], -kBound, kBound);
        }
    }
    result.next_hidden.actor = policy.next_hidden.value();
    if (mode == Mode::train) {
        ad::Var action = tape.constant(result.actions);
        result.next_hidden.critic1 = nets::critic_forward(tape, nets_->critic1, graph, action,
                                                          tape.constant(hidden.critic1), ad::Binding::frozen)
                                         .next_hidden.value();
        result.next_hidden.critic2 = nets::critic_forward(tape, nets_->critic2, graph, action,
                                                          tape.constant(hidden.critic2), ad::Binding::frozen)
                                         .next_hidden.value();
    } else {
        // critics play no part in evaluation
        result.next_hidden.critic1 = hidden.critic1;
        result.next_hidden.critic2 = hidden.critic2;
    }
    return result;
}

namespace {

std::vector<const GraphSnapshot *> snapshots_of(std::span<const replay::Experience *const> batch, bool next) {
    std::vector<const GraphSnapshot *> out;
    out.reserve(batch.size());
    for (const replay::Experience *e : batch) out.push_back(next ? &e->next_state : &e->state);
    return out;
}

} // namespace

ad::Tensor Trainer::critic_targets(std::span<const replay::Experience *const> batch) {
    if (batch.empty()) throw ContractViolation("critic_targets: empty batch");
    const auto next_states = snapshots_of(batch, true);
    const nets::GraphBatch next = nets::GraphBatch::from(next_states);
    const std::size_t n = next.n_uavs;
    Networks &nw = *nets_;

    ad::Tape tape;
    ad::Var h_pi = tape.constant(stack_rows(batch, [](const replay::Experience &e) -> const ad::Tensor & {
        return e.next_hidden.actor;
    }));
    ad::Var h_q1 = tape.constant(stack_rows(batch, [](const replay::Experience &e) -> const ad::Tensor & {
        return e.next_hidden.critic1;
    }));
    ad::Var h_q2 = tape.constant(stack_rows(batch, [](const replay::Experience &e) -> const ad::Tensor & {
        return e.next_hidden.critic2;
    }));
    const bool stochastic = config_.variant != Variant::dhcama;
    ad::Tensor noise;
    if (stochastic) noise = standard_normal(next.agents(), nw.target_actor.config.action_dim);
    const nets::PolicyBatch next_policy =
        nets::actor_forward(tape, nw.target_actor, next, h_pi, stochastic ? &noise : nullptr, ad::Binding::frozen);
    const ad::Var next_value = soft_value(tape, nw.target_critic1, nw.target_critic2, next, next_policy.action,
                                          next_policy.log_pi, h_q1, h_q2, alpha_, ad::Binding::frozen);

    ad::Tensor y(next.agents(), 1);
    const ad::Tensor &v = next_value.value();
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const double bootstrap = batch[b]->terminal ? 0.0 : config_.gamma;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t row = b * n + i;
            y[row] = batch[b]->rewards[i] + bootstrap * v[row];
        }
    }
    return y;
}

CriticLosses Trainer::critic_update(std::span<const replay::Experience *const> batch) {
    const ad::Tensor y = critic_targets(batch);
    const auto states = snapshots_of(batch, false);
    const nets::GraphBatch graph = nets::GraphBatch::from(states);
    Networks &nw = *nets_;

    ad::Tape tape;
    ad::Var action = tape.constant(stack_rows(batch, [](const replay::Experience &e) -> const ad::Tensor & {
        return e.actions;
    }));
    ad::Var h1 = tape.constant(stack_rows(batch, [](const replay::Experience &e) -> const ad::Tensor & {
        return e.hidden.critic1;
    }));
    ad::Var h2 = tape.constant(stack_rows(batch, [](const replay::Experience &e) -> const ad::Tensor & {
        return e.hidden.critic2;
    }));
    ad::Var target = tape.constant(y);
    const nets::CriticBatch q1 = nets::critic_forward(tape, nw.critic1, graph, action, h1, ad::Binding::trainable);
    const nets::CriticBatch q2 = nets::critic_forward(tape, nw.critic2, graph, action, h2, ad::Binding::trainable);
    ad::Var loss1 = ad::mean(ad::square(ad::sub(target, q1.q)));
    ad::Var loss2 = ad::mean(ad::square(ad::sub(target, q2.q)));
    // disjoint parameters: one backward pass serves both critics
    tape.backward(ad::add(loss1, loss2));
    step_optimizer(*critic1_opt_, critic1_params_);
    step_optimizer(*critic2_opt_, critic2_params_);
    return {loss1.value()[0], loss2.value()[0]};
}

double Trainer::actor_update(std::span<const replay::Experience *const> batch) {
    const auto states = snapshots_of(batch, false);
    const nets::GraphBatch graph = nets::GraphBatch::from(states);
    Networks &nw = *nets_;

    ad::Tape tape;
    ad::Var h_pi = tape.constant(stack_rows(batch, [](const replay::Experience &e) -> const ad::Tensor & {
        return e.hidden.actor;
    }));
    ad::Var h1 = tape.constant(stack_rows(batch, [](const replay::Experience &e) -> const ad::Tensor & {
        return e.hidden.critic1;
    }));
    ad::Var objective;
    if (config_.variant == Variant::dhcama) {
        const nets::PolicyBatch policy =
            nets::actor_forward(tape, nw.actor, graph, h_pi, nullptr, ad::Binding::trainable);
        objective = ad::mean(nets::critic_forward(tape, nw.critic1, graph, policy.action, h1, ad::Binding::frozen).q);
    } else {
        ad::Var h2 = tape.constant(stack_rows(batch, [](const replay::Experience &e) -> const ad::Tensor & {
            return e.hidden.critic2;
        }));
        const ad::Tensor noise = standard_normal(graph.agents(), nw.actor.config.action_dim);
        const nets::PolicyBatch policy =
            nets::actor_forward(tape, nw.actor, graph, h_pi, &noise, ad::Binding::trainable);
        objective = ad::mean(soft_value(tape, nw.critic1, nw.critic2, graph, policy.action, policy.log_pi, h1, h2,
                                        alpha_, ad::Binding::frozen));
    }
    tape.backward(ad::scale(objective, -1.0));
    if (config_.variant == Variant::dhcama) {
        // the deterministic policy never reads the spread head
        for (ad::Parameter *p : {&nw.actor.log_sigma_head.weight, &nw.actor.log_sigma_head.bias}) {
            p->grad = ad::Tensor(p->value.rows(), p->value.cols());
        }
    }
    step_optimizer(*actor_opt_, actor_params_);
    return objective.value()[0];
}

void Trainer::soft_update_targets() {
    Networks &nw = *nets_;
    const double tau = config_.tau;
    nets::soft_update(nw.target_actor.parameters(), actor_params_, tau);
    nets::soft_update(nw.target_critic1.parameters(), critic1_params_, tau);
    nets::soft_update(nw.target_critic2.parameters(), critic2_params_, tau);
}

std::optional<UpdateStats> Trainer::update_round() {
    auto batch = buffer_.sample_minibatch(config_.batch_size, rng_);
    if (!batch) return std::nullopt;
    UpdateStats stats;
    stats.critic = critic_update(*batch);
    stats.actor_objective = actor_update(*batch);
    soft_update_targets();
    ++update_rounds_;
    return stats;
}

CurveRecord Trainer::train_episode(std::size_t episode) {
    const env::WorldConfig &world = config_.world;
    auto [state, snapshot] = env::reset(world, episode_seed(config_.rng_seed, episode));
    replay::HiddenStates hidden = replay::HiddenStates::zeros(world.n_uavs, config_.embed_dim);
    env::MetricsAccumulator metrics(world.n_pois, world.n_uavs);
    double reward_sum = 0.0;
    double loss1 = 0.0, loss2 = 0.0, objective = 0.0;
    std::size_t rounds = 0;

    for (std::size_t t = 0; t < world.episode_len; ++t) {
        ActResult decision = act(snapshot, hidden, Mode::train);
        env::StepResult result = env::step(state, world, decision.actions);
        for (double r : result.rewards) reward_sum += r;
        metrics.add_step(result.n_covered, result.energies);

        replay::Experience experience;
        experience.state = std::move(snapshot);
        experience.actions = decision.actions;
        experience.rewards = result.rewards;
        experience.next_state = result.next_snapshot;
        experience.hidden = std::move(hidden);
        experience.next_hidden = decision.next_hidden;
        experience.episode_start = t == 0;
        experience.terminal = result.done;
        buffer_.push(std::move(experience));

        snapshot = std::move(result.next_snapshot);
        hidden = std::move(decision.next_hidden);

        if (++timeslots_ % config_.update_window == 0) {
            for (std::size_t k = 0; k < config_.updates_per_window; ++k) {
                if (auto stats = update_round()) {
                    loss1 += stats->critic.critic1;
                    loss2 += stats->critic.critic2;
                    objective += stats->actor_objective;
                    ++rounds;
                }
            }
        }
    }

    CurveRecord rec;
    rec.episode = episode;
    rec.mean_reward = reward_sum / static_cast<double>(world.n_uavs);
    rec.metrics = metrics.finish(state.coverage_time);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rec.critic_loss_1 = rounds ? loss1 / static_cast<double>(rounds) : nan;
    rec.critic_loss_2 = rounds ? loss2 / static_cast<double>(rounds) : nan;
    rec.actor_objective = rounds ? objective / static_cast<double>(rounds) : nan;
    return rec;
}

EvalRecord Trainer::evaluate(std::size_t episode) {
    GreedyPolicy policy(nets_->actor);
    const ActionFn fn = [&policy](const GraphSnapshot &s, std::size_t t) { return policy(s, t); };
    EvalRecord rec;
    rec.episode = episode;
    const double k = static_cast<double>(config_.eval_episodes);
    for (std::size_t e = 0; e < config_.eval_episodes; ++e) {
        const EpisodeStats stats = run_episode(config_.world, eval_seed(config_.rng_seed, e), fn);
        rec.mean_reward += stats.mean_reward / k;
        rec.metrics.coverage += stats.metrics.coverage / k;
        rec.metrics.fairness += stats.metrics.fairness / k;
        rec.metrics.energy += stats.metrics.energy / k;
        rec.metrics.cfe += stats.metrics.cfe / k;
    }
    return rec;
}

void Trainer::train(const TrainHooks &hooks) {
    const auto start = std::chrono::steady_clock::now();
    bool checkpointed_last = false;
    for (std::size_t e = 0; e < config_.total_episodes; ++e) {
        CurveRecord rec = train_episode(e);
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (hooks.on_episode) hooks.on_episode(rec);
        if (config_.eval_interval > 0 && (e + 1) % config_.eval_interval == 0 && hooks.on_eval) {
            hooks.on_eval(evaluate(e));
        }
        checkpointed_last = false;
        if (config_.checkpoint_interval > 0 && (e + 1) % config_.checkpoint_interval == 0) {
            if (hooks.on_checkpoint) hooks.on_checkpoint(e + 1);
            checkpointed_last = true;
        }
    }
    if (!checkpointed_last && hooks.on_checkpoint) hooks.on_checkpoint(config_.total_episodes);
}

nets::Checkpoint Trainer::checkpoint() const {
    nets::Checkpoint c;
    c.metadata["config"] = format_config(config_);
    c.metadata["variant"] = to_string(config_.variant);
    c.metadata["n_uavs_train"] = std::to_string(config_.world.n_uavs);
    c.metadata["update_rounds"] = std::to_string(update_rounds_);
    nets::store_net_config(c, config_.net_config());
    Networks &nw = *nets_;
    c.add("actor", nw.actor.parameters());
    c.add("critic1", nw.critic1.parameters());
    c.add("critic2", nw.critic2.parameters());
    c.add("target_actor", nw.target_actor.parameters());
    c.add("target_critic1", nw.target_critic1.parameters());
    c.add("target_critic2", nw.target_critic2.parameters());
    return c;
}

void Trainer::restore(const nets::Checkpoint &checkpoint) {
    if (!(nets::read_net_config(checkpoint) == config_.net_config())) {
        throw ConfigError("checkpoint network shape does not match the trainer configuration");
    }
    Networks &nw = *nets_;
    checkpoint.restore("actor", nw.actor.parameters());
    checkpoint.restore("critic1", nw.critic1.parameters());
    checkpoint.restore("critic2", nw.critic2.parameters());
    checkpoint.restore("target_actor", nw.target_actor.parameters());
    checkpoint.restore("target_critic1", nw.target_critic1.parameters());
    checkpoint.restore("target_critic2", nw.target_critic2.parameters());
}

std::string curve_csv_header() {
    return "episode,mean_reward,C,F,E,CFE,critic_loss_1,critic_loss_2,actor_objective,wall_time";
}

std::string curve_csv_row(const CurveRecord &r) {
    std::ostringstream os;
    os.precision(17);
    os << r.episode << ',' << r.mean_reward << ',' << r.metrics.coverage << ',' << r.metrics.fairness << ','
       << r.metrics.energy << ',' << r.metrics.cfe << ',' << r.critic_loss_1 << ',' << r.critic_loss_2 << ','
       << r.actor_objective << ',' << r.wall_time;
    return os.str();
}

} // namespace ehcama::train
