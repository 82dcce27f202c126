#pragma once

// Actor and twin-critic networks over the observation and communication
// graphs. All agents of the UAV group share one parameter set; every forward
// pass below is batched over a block of snapshots with identical entity counts.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ehcama/autodiff.hpp"
#include "ehcama/graph.hpp"

namespace ehcama::nets {

using ad::Binding;
using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;

inline constexpr std::size_t kUavGroup = 0;
inline constexpr std::size_t kPoiGroup = 1;

struct GroupSpec {
    std::size_t group_id = 0;
    std::size_t local_state_dim = 0;
    bool is_learning = false;
};

struct NetConfig {
    std::size_t uav_state_dim = 4;
    std::size_t poi_state_dim = 2;
    std::size_t action_dim = 2;
    std::size_t embed_dim = 256;
    std::size_t heads = 4;
    /// Local states are divided by these before encoding.
    double position_scale = 1.0;
    double velocity_scale = 1.0;
    /// Critics consume action_scale * a for a policy output a in (-1, 1).
    double action_scale = 4.0;
    double log_sigma_min = -20.0;
    double log_sigma_max = 2.0;
    double squash_epsilon = 1e-6;

    std::size_t head_dim() const { return embed_dim / heads; }
    std::array<GroupSpec, 2> groups() const {
        return {GroupSpec{kUavGroup, uav_state_dim, true}, GroupSpec{kPoiGroup, poi_state_dim, false}};
    }
    void validate() const;
    bool operator==(const NetConfig &) const = default;
};

struct LinearParams {
    Parameter weight; // in x out
    Parameter bias;   // 1 x out
};

/// One hierarchical attention layer: a shared query map, per-source-group key
/// and value maps (all heads stacked column-wise) and the fully connected
/// group aggregator.
struct GatLayerParams {
    Parameter query;
    std::vector<Parameter> key;
    std::vector<Parameter> value;
    LinearParams aggregate;
};

struct GruParams {
    Parameter input_weight;           // in x 3H, columns [r | z | candidate]
    Parameter input_bias;             // 1 x 3H
    Parameter hidden_gate_weight;     // H x 2H, columns [r | z]
    Parameter hidden_candidate_weight; // H x H
};

struct ActorParams {
    NetConfig config;
    LinearParams uav_encoder;
    LinearParams poi_encoder;
    GatLayerParams observe;
    GatLayerParams communicate;
    GruParams gru;
    LinearParams mu_head;
    LinearParams log_sigma_head;

    std::vector<Parameter *> parameters();
};

struct CriticParams {
    NetConfig config;
    LinearParams uav_encoder;
    LinearParams poi_encoder;
    LinearParams action_encoder;
    GatLayerParams observe;
    GatLayerParams communicate;
    GruParams gru;
    LinearParams q_head;

    std::vector<Parameter *> parameters();
};

/// Weights and biases drawn uniformly from +-1/sqrt(fan_in).
ActorParams make_actor(const NetConfig &config, std::uint64_t seed);
CriticParams make_critic(const NetConfig &config, std::uint64_t seed);

/// A block of snapshots laid out for batched evaluation. Row b*n_uavs+i of
/// the UAV tensors belongs to agent i of snapshot b.
struct GraphBatch {
    std::size_t batch = 0;
    std::size_t n_uavs = 0;
    std::size_t n_pois = 0;
    Tensor uav_states; // batch*n_uavs x uav_state_dim (unscaled)
    Tensor poi_states; // batch*n_pois x poi_state_dim (unscaled)
    std::vector<std::uint8_t> observe_uav;  // [b][i][j] UAV i observes UAV j
    std::vector<std::uint8_t> observe_poi;  // [b][i][j] UAV i observes PoI j
    std::vector<std::uint8_t> communicate;  // [b][i][j] UAV i hears UAV j

    static GraphBatch from(std::span<const GraphSnapshot *const> snapshots);
    static GraphBatch from(const GraphSnapshot &snapshot);
    std::size_t agents() const { return batch * n_uavs; }
};

Var linear(Tape &tape, LinearParams &params, Var x, Binding binding);

struct EntityEmbeddings {
    Var uav;
    Var poi;
};

EntityEmbeddings encode_entities(Tape &tape, LinearParams &uav_encoder, LinearParams &poi_encoder,
                                 const GraphBatch &graph, const NetConfig &config, Binding binding);

/// Multi-head attention of projected queries over the neighbors drawn from a
/// single source group. Returns [rows(queries) x embed_dim]; a query with no
/// neighbor in the group gets a zero row.
Var gat_forward(Tape &tape, GatLayerParams &layer, std::size_t source_group, Var queries, Var sources,
                std::span<const std::uint8_t> mask, std::size_t batch, std::size_t heads, Binding binding);

struct GroupSource {
    Var embeddings;
    std::span<const std::uint8_t> mask;
};

/// Per-group attention followed by the fully connected group aggregator.
Var hgat_block_forward(Tape &tape, GatLayerParams &layer, Var query_embeddings, std::span<const GroupSource> groups,
                       std::size_t batch, std::size_t heads, Binding binding);

/// h' = (1 - z) * h + z * tanh(W_n x + b_n + U_n (r * h)).
Var gru_step(Tape &tape, GruParams &params, Var input, Var hidden, Binding binding);

/// Observation-layer and communication-layer embeddings e' and e''.
struct GraphFeatures {
    Var observed;
    Var communicated;
};

GraphFeatures graph_features(Tape &tape, LinearParams &uav_encoder, LinearParams &poi_encoder, GatLayerParams &observe,
                             GatLayerParams &communicate, const GraphBatch &graph, const NetConfig &config,
                             Binding binding);

struct PolicyBatch {
    Var action;
    Var mu;
    Var log_sigma;
    /// Present for stochastic evaluation only: batch*n_uavs x 1.
    std::optional<Var> log_pi;
    Var next_hidden;
};

/// Runs the actor for every agent of the batch. `noise` (agents x action_dim
/// standard normal draws) selects stochastic sampling; without it the action
/// is tanh(mu).
PolicyBatch actor_forward(Tape &tape, ActorParams &params, const GraphBatch &graph, Var hidden, const Tensor *noise,
                          Binding binding);

struct CriticBatch {
    Var q; // agents x 1
    Var next_hidden;
};

/// `action` holds policy outputs in (-1, 1); the critic rescales them by
/// config.action_scale before encoding.
CriticBatch critic_forward(Tape &tape, CriticParams &params, const GraphBatch &graph, Var action, Var hidden,
                           Binding binding);

/// Single-agent view of a policy evaluation.
struct PolicyOutput {
    std::vector<double> action;
    std::vector<double> mu;
    std::vector<double> log_sigma;
    std::optional<double> log_pi;
    std::vector<double> next_hidden;
};

PolicyOutput policy_output(const PolicyBatch &batch, std::size_t agent_row);

/// target <- tau * online + (1 - tau) * target.
void soft_update(std::span<Parameter *const> target, std::span<Parameter *const> online, double tau);

/// Exact copy of parameter values.
void copy_parameters(std::span<Parameter *const> target, std::span<Parameter *const> online);

} // namespace ehcama::nets
