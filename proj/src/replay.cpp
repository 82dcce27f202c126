#include "ehcama/replay.hpp"

#include <fstream>
#include <string>

#include "binary_io.hpp"

namespace ehcama::replay {

namespace {

constexpr char kMagic[] = "EHCAMA-REPLAY";

void check(bool ok, const std::string &what) {
    if (!ok) throw ContractViolation("experience: " + what);
}

void check_snapshot(const GraphSnapshot &s, const char *which) {
    const std::string name(which);
    check(s.uav_states.rows() == s.n_uavs, name + " UAV state rows differ from n_uavs");
    check(s.poi_states.rows() == s.n_pois, name + " PoI state rows differ from n_pois");
    check(s.observation.size() == s.n_entities(), name + " observation adjacency has wrong size");
    check(s.communication.size() == s.n_entities(), name + " communication adjacency has wrong size");
}

void write_hidden(io::BinaryWriter &w, const HiddenStates &h) {
    w.tensor(h.actor);
    w.tensor(h.critic1);
    w.tensor(h.critic2);
}

HiddenStates read_hidden(io::BinaryReader &r) {
    HiddenStates h;
    h.actor = r.tensor();
    h.critic1 = r.tensor();
    h.critic2 = r.tensor();
    return h;
}

} // namespace

HiddenStates HiddenStates::zeros(std::size_t n_agents, std::size_t width) {
    return {ad::Tensor(n_agents, width), ad::Tensor(n_agents, width), ad::Tensor(n_agents, width)};
}

void Experience::validate() const {
    check_snapshot(state, "state");
    check_snapshot(next_state, "next state");
    const std::size_t n = state.n_uavs;
    check(next_state.n_uavs == n && next_state.n_pois == state.n_pois, "entity counts change across the transition");
    check(actions.rows() == n && actions.cols() > 0, "actions shape " + actions.shape_string());
    check(rewards.size() == n, "reward count " + std::to_string(rewards.size()));
    const std::size_t width = hidden.actor.cols();
    for (const HiddenStates *h : {&hidden, &next_hidden}) {
        for (const ad::Tensor *t : {&h->actor, &h->critic1, &h->critic2}) {
            check(t->rows() == n && t->cols() == width, "hidden state shape " + t->shape_string());
        }
    }
    if (episode_start) {
        for (const ad::Tensor *t : {&hidden.actor, &hidden.critic1, &hidden.critic2}) {
            for (double v : t->data()) check(v == 0.0, "hidden states must be zero at an episode start");
        }
    }
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
}

void ReplayBuffer::push(Experience experience) {
    experience.validate();
    if (storage_.size() < capacity_) {
        storage_.push_back(std::move(experience));
    } else {
        storage_[cursor_] = std::move(experience);
    }
    cursor_ = (cursor_ + 1) % capacity_;
}

std::optional<std::vector<std::size_t>> ReplayBuffer::sample_indices(std::size_t batch_size,
                                                                     std::mt19937_64 &rng) const {
    if (batch_size == 0 || storage_.size() < batch_size) return std::nullopt;
    std::uniform_int_distribution<std::size_t> pick(0, storage_.size() - 1);
    std::vector<std::size_t> out(batch_size);
    for (std::size_t &i : out) i = pick(rng);
    return out;
}

std::optional<std::vector<const Experience *>> ReplayBuffer::sample_minibatch(std::size_t batch_size,
                                                                              std::mt19937_64 &rng) const {
    auto indices = sample_indices(batch_size, rng);
    if (!indices) return std::nullopt;
    std::vector<const Experience *> out;
    out.reserve(batch_size);
    for (std::size_t i : *indices) out.push_back(&storage_[i]);
    return out;
}

void ReplayBuffer::save(const std::filesystem::path &path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write replay snapshot " + path.string());
    io::BinaryWriter w(out);
    w.string(kMagic);
    w.u64(kFormatVersion);
    w.u64(capacity_);
    w.u64(cursor_);
    w.u64(storage_.size());
    for (const Experience &e : storage_) {
        io::write_snapshot(w, e.state);
        w.tensor(e.actions);
        w.doubles(e.rewards);
        io::write_snapshot(w, e.next_state);
        write_hidden(w, e.hidden);
        write_hidden(w, e.next_hidden);
        w.boolean(e.episode_start);
        w.boolean(e.terminal);
    }
    if (!out) throw ConfigError("failed writing replay snapshot " + path.string());
}

ReplayBuffer ReplayBuffer::load(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open replay snapshot " + path.string());
    io::BinaryReader r(in);
    if (r.string() != kMagic) throw ConfigError(path.string() + " is not a replay snapshot");
    const std::uint64_t version = r.u64();
    if (version != kFormatVersion) {
        throw ConfigError("unsupported replay snapshot version " + std::to_string(version));
    }
    ReplayBuffer buffer(r.u64());
    const std::uint64_t cursor = r.u64();
    const std::uint64_t count = r.u64();
    if (count > buffer.capacity_ || cursor >= buffer.capacity_) throw ConfigError("corrupt replay snapshot header");
    buffer.storage_.reserve(count);
    for (std::uint64_t k = 0; k < count; ++k) {
        Experience e;
        e.state = io::read_snapshot(r);
        e.actions = r.tensor();
        e.rewards = r.doubles();
        e.next_state = io::read_snapshot(r);
        e.hidden = read_hidden(r);
        e.next_hidden = read_hidden(r);
        e.episode_start = r.boolean();
        e.terminal = r.boolean();
        e.validate();
        buffer.storage_.push_back(std::move(e));
    }
    buffer.cursor_ = cursor;
    return buffer;
}

} // namespace ehcama::replay
