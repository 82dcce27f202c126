#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "ehcama/autodiff.hpp"
#include "ehcama/graph.hpp"

namespace ehcama::replay {

/// Recurrent states of the actor and both critics for every agent (N x H each).
struct HiddenStates {
    ad::Tensor actor;
    ad::Tensor critic1;
    ad::Tensor critic2;

    static HiddenStates zeros(std::size_t n_agents, std::size_t width);
    bool operator==(const HiddenStates &) const = default;
};

struct Experience {
    GraphSnapshot state;
    ad::Tensor actions; // N x action_dim, policy outputs in (-1, 1)
    std::vector<double> rewards;
    GraphSnapshot next_state;
    HiddenStates hidden;
    HiddenStates next_hidden;
    bool episode_start = false;
    /// The next state ends the episode; no bootstrap from it.
    bool terminal = false;

    /// Throws ContractViolation on inconsistent shapes.
    void validate() const;
    bool operator==(const Experience &) const = default;
};

class ReplayBuffer {
public:
    static constexpr std::uint32_t kFormatVersion = 1;

    explicit ReplayBuffer(std::size_t capacity);

    void push(Experience experience);

    std::size_t size() const { return storage_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::size_t write_cursor() const { return cursor_; }
    const Experience &at(std::size_t index) const { return storage_.at(index); }

    /// Uniform draws with replacement; empty when fewer than batch_size
    /// transitions are stored.
    std::optional<std::vector<std::size_t>> sample_indices(std::size_t batch_size, std::mt19937_64 &rng) const;
    std::optional<std::vector<const Experience *>> sample_minibatch(std::size_t batch_size,
                                                                    std::mt19937_64 &rng) const;

    void save(const std::filesystem::path &path) const;
    static ReplayBuffer load(const std::filesystem::path &path);

    bool operator==(const ReplayBuffer &) const = default;

private:
    std::size_t capacity_;
    std::size_t cursor_ = 0;
    std::vector<Experience> storage_;
};

} // namespace ehcama::replay
