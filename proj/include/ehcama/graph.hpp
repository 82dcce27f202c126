#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ehcama/autodiff.hpp"

namespace ehcama {

/// Square boolean matrix stored as packed 64-bit words per row.
class BitMatrix {
public:
    BitMatrix() = default;
    explicit BitMatrix(std::size_t n);

    std::size_t size() const { return n_; }
    std::size_t words_per_row() const { return words_per_row_; }

    bool test(std::size_t row, std::size_t col) const {
        return (bits_[row * words_per_row_ + col / 64] >> (col % 64)) & 1u;
    }
    void set(std::size_t row, std::size_t col, bool value = true);
    std::size_t count_row(std::size_t row) const;

    std::span<const std::uint64_t> words() const { return bits_; }
    std::span<std::uint64_t> words() { return bits_; }

    bool operator==(const BitMatrix &other) const = default;

private:
    std::size_t n_ = 0;
    std::size_t words_per_row_ = 0;
    std::vector<std::uint64_t> bits_;
};

/// Structured view of the global state. Entities are indexed UAVs first
/// (0..n_uavs-1), then PoIs (n_uavs..n_uavs+n_pois-1).
struct GraphSnapshot {
    std::size_t n_uavs = 0;
    std::size_t n_pois = 0;
    /// n_uavs x 4: x, y, vx, vy
    ad::Tensor uav_states;
    /// n_pois x 2: x, y
    ad::Tensor poi_states;
    /// Observation adjacency, including UAV self-loops.
    BitMatrix observation;
    /// Communication adjacency between distinct UAVs.
    BitMatrix communication;

    std::size_t n_entities() const { return n_uavs + n_pois; }
    bool operator==(const GraphSnapshot &other) const = default;
};

} // namespace ehcama
