#include "ehcama/nets.hpp"

#include <cmath>
#include <random>

namespace ehcama::nets {

namespace {

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    Parameter uniform(std::string name, std::size_t rows, std::size_t cols, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor t(rows, cols);
        for (double &v : t.data()) v = dist(rng_);
        return Parameter{std::move(name), std::move(t), std::nullopt, true};
    }

    LinearParams linear(const std::string &name, std::size_t in, std::size_t out) {
        LinearParams p;
        p.weight = uniform(name + ".weight", in, out, in);
        p.bias = uniform(name + ".bias", 1, out, in);
        return p;
    }

    GatLayerParams gat(const std::string &name, std::size_t groups, std::size_t embed) {
        GatLayerParams p;
        p.query = uniform(name + ".query", embed, embed, embed);
        for (std::size_t g = 0; g < groups; ++g) {
            p.key.push_back(uniform(name + ".key" + std::to_string(g), embed, embed, embed));
            p.value.push_back(uniform(name + ".value" + std::to_string(g), embed, embed, embed));
        }
        p.aggregate = linear(name + ".aggregate", groups * embed, embed);
        return p;
    }

    GruParams gru(const std::string &name, std::size_t in, std::size_t hidden) {
        GruParams p;
        p.input_weight = uniform(name + ".input_weight", in, 3 * hidden, hidden);
        p.input_bias = uniform(name + ".input_bias", 1, 3 * hidden, hidden);
        p.hidden_gate_weight = uniform(name + ".hidden_gate_weight", hidden, 2 * hidden, hidden);
        p.hidden_candidate_weight = uniform(name + ".hidden_candidate_weight", hidden, hidden, hidden);
        return p;
    }

private:
    std::mt19937_64 rng_;
};

void push_linear(std::vector<Parameter *> &out, LinearParams &p) {
    out.push_back(&p.weight);
    out.push_back(&p.bias);
}

void push_gat(std::vector<Parameter *> &out, GatLayerParams &p) {
    out.push_back(&p.query);
    for (auto &k : p.key) out.push_back(&k);
    for (auto &v : p.value) out.push_back(&v);
    push_linear(out, p.aggregate);
}

void push_gru(std::vector<Parameter *> &out, GruParams &p) {
    out.push_back(&p.input_weight);
    out.push_back(&p.input_bias);
    out.push_back(&p.hidden_gate_weight);
    out.push_back(&p.hidden_candidate_weight);
}

Tensor scaled_states(const Tensor &states, std::size_t dim, const NetConfig &config) {
    Tensor out = states;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < out.cols(); ++c) {
            // columns 0-1 are positions, 2-3 (UAVs only) velocities
            out(r, c) /= c < 2 ? config.position_scale : config.velocity_scale;
        }
    }
    if (out.cols() != dim) {
        throw ConfigError("local state width " + std::to_string(out.cols()) + " does not match group dimension " +
                          std::to_string(dim));
    }
    return out;
}

} // namespace

void NetConfig::validate() const {
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
        throw ConfigError("embed_dim " + std::to_string(embed_dim) + " must be a positive multiple of heads " +
                          std::to_string(heads));
    }
    if (action_dim == 0 || uav_state_dim == 0 || poi_state_dim == 0) throw ConfigError("dimensions must be positive");
    if (!(position_scale > 0.0 && velocity_scale > 0.0 && action_scale > 0.0)) {
        throw ConfigError("input scales must be positive");
    }
    if (!(log_sigma_min < log_sigma_max)) throw ConfigError("log_sigma_min must be below log_sigma_max");
}

std::vector<Parameter *> ActorParams::parameters() {
    std::vector<Parameter *> out;
    push_linear(out, uav_encoder);
    push_linear(out, poi_encoder);
    push_gat(out, observe);
    push_gat(out, communicate);
    push_gru(out, gru);
    push_linear(out, mu_head);
    push_linear(out, log_sigma_head);
    return out;
}

std::vector<Parameter *> CriticParams::parameters() {
    std::vector<Parameter *> out;
    push_linear(out, uav_encoder);
    push_linear(out, poi_encoder);
    push_linear(out, action_encoder);
    push_gat(out, observe);
    push_gat(out, communicate);
    push_gru(out, gru);
    push_linear(out, q_head);
    return out;
}

ActorParams make_actor(const NetConfig &config, std::uint64_t seed) {
    config.validate();
    Initializer init(seed);
    const std::size_t d = config.embed_dim;
    ActorParams p;
    p.config = config;
    p.uav_encoder = init.linear("uav_encoder", config.uav_state_dim, d);
    p.poi_encoder = init.linear("poi_encoder", config.poi_state_dim, d);
    p.observe = init.gat("observe", 2, d);
    p.communicate = init.gat("communicate", 1, d);
    p.gru = init.gru("gru", 2 * d, d);
    p.mu_head = init.linear("mu_head", d, config.action_dim);
    p.log_sigma_head = init.linear("log_sigma_head", d, config.action_dim);
    return p;
}

CriticParams make_critic(const NetConfig &config, std::uint64_t seed) {
    config.validate();
    Initializer init(seed);
    const std::size_t d = config.embed_dim;
    CriticParams p;
    p.config = config;
    p.uav_encoder = init.linear("uav_encoder", config.uav_state_dim, d);
    p.poi_encoder = init.linear("poi_encoder", config.poi_state_dim, d);
    p.action_encoder = init.linear("action_encoder", config.action_dim, d);
    p.observe = init.gat("observe", 2, d);
    p.communicate = init.gat("communicate", 1, d);
    p.gru = init.gru("gru", 3 * d, d);
    p.q_head = init.linear("q_head", d, 1);
    return p;
}

GraphBatch GraphBatch::from(std::span<const GraphSnapshot *const> snapshots) {
    if (snapshots.empty()) throw ContractViolation("GraphBatch: no snapshots");
    GraphBatch g;
    g.batch = snapshots.size();
    g.n_uavs = snapshots.front()->n_uavs;
    g.n_pois = snapshots.front()->n_pois;
    const std::size_t n = g.n_uavs;
    const std::size_t m = g.n_pois;
    const std::size_t uav_dim = snapshots.front()->uav_states.cols();
    const std::size_t poi_dim = snapshots.front()->poi_states.cols();
    g.uav_states = Tensor(g.batch * n, uav_dim);
    g.poi_states = Tensor(g.batch * m, poi_dim);
    g.observe_uav.assign(g.batch * n * n, 0);
    g.observe_poi.assign(g.batch * n * m, 0);
    g.communicate.assign(g.batch * n * n, 0);
    for (std::size_t b = 0; b < g.batch; ++b) {
        const GraphSnapshot &s = *snapshots[b];
        if (s.n_uavs != n || s.n_pois != m || s.uav_states.cols() != uav_dim || s.poi_states.cols() != poi_dim) {
            throw ContractViolation("GraphBatch: snapshots disagree on entity counts");
        }
        std::copy(s.uav_states.data().begin(), s.uav_states.data().end(),
                  g.uav_states.data().begin() + static_cast<std::ptrdiff_t>(b * n * uav_dim));
        std::copy(s.poi_states.data().begin(), s.poi_states.data().end(),
                  g.poi_states.data().begin() + static_cast<std::ptrdiff_t>(b * m * poi_dim));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                g.observe_uav[(b * n + i) * n + j] = s.observation.test(i, j);
                g.communicate[(b * n + i) * n + j] = s.communication.test(i, j);
            }
            for (std::size_t j = 0; j < m; ++j) g.observe_poi[(b * n + i) * m + j] = s.observation.test(i, n + j);
        }
    }
    return g;
}

GraphBatch GraphBatch::from(const GraphSnapshot &snapshot) {
    const GraphSnapshot *one[] = {&snapshot};
    return from(one);
}

Var linear(Tape &tape, LinearParams &params, Var x, Binding binding) {
    return ad::add_bias(ad::matmul(x, tape.parameter(params.weight, binding)), tape.parameter(params.bias, binding));
}

EntityEmbeddings encode_entities(Tape &tape, LinearParams &uav_encoder, LinearParams &poi_encoder,
                                 const GraphBatch &graph, const NetConfig &config, Binding binding) {
    Var uav = tape.constant(scaled_states(graph.uav_states, config.uav_state_dim, config));
    Var poi = tape.constant(scaled_states(graph.poi_states, config.poi_state_dim, config));
    return {linear(tape, uav_encoder, uav, binding), linear(tape, poi_encoder, poi, binding)};
}

Var gat_forward(Tape &tape, GatLayerParams &layer, std::size_t source_group, Var queries, Var sources,
                std::span<const std::uint8_t> mask, std::size_t batch, std::size_t heads, Binding binding) {
    if (source_group >= layer.key.size()) {
        throw ContractViolation("gat_forward: source group " + std::to_string(source_group) + " not in layer");
    }
    Var keys = ad::matmul(sources, tape.parameter(layer.key[source_group], binding));
    Var values = ad::matmul(sources, tape.parameter(layer.value[source_group], binding));
    return ad::attend(queries, keys, values, mask, batch, heads);
}

Var hgat_block_forward(Tape &tape, GatLayerParams &layer, Var query_embeddings, std::span<const GroupSource> groups,
                       std::size_t batch, std::size_t heads, Binding binding) {
    if (groups.size() != layer.key.size()) {
        throw ContractViolation("hgat_block_forward: expected " + std::to_string(layer.key.size()) +
                                " source groups, got " + std::to_string(groups.size()));
    }
    Var queries = ad::matmul(query_embeddings, tape.parameter(layer.query, binding));
    std::vector<Var> parts;
    parts.reserve(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        parts.push_back(gat_forward(tape, layer, g, queries, groups[g].embeddings, groups[g].mask, batch, heads, binding));
    }
    return linear(tape, layer.aggregate, ad::concat_cols(parts), binding);
}

Var gru_step(Tape &tape, GruParams &params, Var input, Var hidden, Binding binding) {
    const std::size_t h = hidden.cols();
    Var x = ad::add_bias(ad::matmul(input, tape.parameter(params.input_weight, binding)),
                         tape.parameter(params.input_bias, binding));
    Var gates = ad::sigmoid(
        ad::add(ad::slice_cols(x, 0, 2 * h), ad::matmul(hidden, tape.parameter(params.hidden_gate_weight, binding))));
    Var reset = ad::slice_cols(gates, 0, h);
    Var update = ad::slice_cols(gates, h, h);
    Var candidate = ad::tanh(ad::add(ad::slice_cols(x, 2 * h, h),
                                     ad::matmul(ad::mul(reset, hidden),
                                                tape.parameter(params.hidden_candidate_weight, binding))));
    return ad::add(hidden, ad::mul(update, ad::sub(candidate, hidden)));
}

GraphFeatures graph_features(Tape &tape, LinearParams &uav_encoder, LinearParams &poi_encoder, GatLayerParams &observe,
                             GatLayerParams &communicate, const GraphBatch &graph, const NetConfig &config,
                             Binding binding) {
    const EntityEmbeddings e = encode_entities(tape, uav_encoder, poi_encoder, graph, config, binding);
    const GroupSource observed_groups[] = {{e.uav, graph.observe_uav}, {e.poi, graph.observe_poi}};
    Var observed = hgat_block_forward(tape, observe, e.uav, observed_groups, graph.batch, config.heads, binding);
    // Messages are the neighbors' observation-layer embeddings.
    const GroupSource messages[] = {{observed, graph.communicate}};
    Var communicated = hgat_block_forward(tape, communicate, observed, messages, graph.batch, config.heads, binding);
    return {observed, communicated};
}

PolicyBatch actor_forward(Tape &tape, ActorParams &params, const GraphBatch &graph, Var hidden, const Tensor *noise,
                          Binding binding) {
    const NetConfig &cfg = params.config;
    const GraphFeatures f = graph_features(tape, params.uav_encoder, params.poi_encoder, params.observe,
                                           params.communicate, graph, cfg, binding);
    const Var joined[] = {f.observed, f.communicated};
    PolicyBatch out;
    out.next_hidden = gru_step(tape, params.gru, ad::concat_cols(joined), hidden, binding);
    out.mu = linear(tape, params.mu_head, out.next_hidden, binding);
    out.log_sigma = ad::clamp(linear(tape, params.log_sigma_head, out.next_hidden, binding), cfg.log_sigma_min,
                              cfg.log_sigma_max);
    if (noise == nullptr) {
        out.action = ad::tanh(out.mu);
        return out;
    }
    const ad::GaussianSample u = ad::gaussian_rsample(out.mu, out.log_sigma, *noise);
    out.action = ad::tanh(u.sample);
    // change of variables through tanh: log(1 - a^2 + eps) per dimension
    Var jacobian = ad::log(ad::add_scalar(ad::scale(ad::square(out.action), -1.0), 1.0 + cfg.squash_epsilon));
    out.log_pi = ad::sub(u.log_density, ad::row_sum(jacobian));
    return out;
}

CriticBatch critic_forward(Tape &tape, CriticParams &params, const GraphBatch &graph, Var action, Var hidden,
                           Binding binding) {
    const NetConfig &cfg = params.config;
    if (action.rows() != graph.agents() || action.cols() != cfg.action_dim) {
        throw DimensionError("critic_forward: action " + action.value().shape_string() + " for " +
                             std::to_string(graph.agents()) + " agents");
    }
    const GraphFeatures f = graph_features(tape, params.uav_encoder, params.poi_encoder, params.observe,
                                           params.communicate, graph, cfg, binding);
    Var encoded_action = linear(tape, params.action_encoder, ad::scale(action, cfg.action_scale), binding);
    const Var joined[] = {f.observed, f.communicated, encoded_action};
    CriticBatch out;
    out.next_hidden = gru_step(tape, params.gru, ad::concat_cols(joined), hidden, binding);
    out.q = linear(tape, params.q_head, out.next_hidden, binding);
    return out;
}

PolicyOutput policy_output(const PolicyBatch &batch, std::size_t agent_row) {
    auto row = [agent_row](Var v) {
        const Tensor &t = v.value();
        return std::vector<double>(t.data().begin() + static_cast<std::ptrdiff_t>(agent_row * t.cols()),
                                   t.data().begin() + static_cast<std::ptrdiff_t>((agent_row + 1) * t.cols()));
    };
    PolicyOutput out;
    out.action = row(batch.action);
    out.mu = row(batch.mu);
    out.log_sigma = row(batch.log_sigma);
    if (batch.log_pi) out.log_pi = batch.log_pi->value()[agent_row];
    out.next_hidden = row(batch.next_hidden);
    return out;
}

namespace {

void check_pairing(std::span<Parameter *const> target, std::span<Parameter *const> online) {
    if (target.size() != online.size()) throw ConfigError("parameter sets differ in length");
    for (std::size_t k = 0; k < target.size(); ++k) {
        if (!target[k]->value.same_shape(online[k]->value)) {
            throw ConfigError("parameter '" + target[k]->name + "' shape " + target[k]->value.shape_string() +
                              " does not match " + online[k]->value.shape_string());
        }
    }
}

} // namespace

void soft_update(std::span<Parameter *const> target, std::span<Parameter *const> online, double tau) {
    check_pairing(target, online);
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("soft_update: tau must lie in (0, 1]");
    for (std::size_t k = 0; k < target.size(); ++k) {
        Tensor &t = target[k]->value;
        const Tensor &o = online[k]->value;
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = tau * o[i] + (1.0 - tau) * t[i];
    }
}

void copy_parameters(std::span<Parameter *const> target, std::span<Parameter *const> online) {
    check_pairing(target, online);
    for (std::size_t k = 0; k < target.size(); ++k) target[k]->value = online[k]->value;
}

} // namespace ehcama::nets
