#pragma once

// Versioned binary dump of named parameter tensors plus string metadata.
// Doubles are stored bit-exactly, so save/load round-trips exactly.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ehcama/autodiff.hpp"
#include "ehcama/nets.hpp"

namespace ehcama::nets {

struct Checkpoint {
    static constexpr std::uint64_t kFormatVersion = 1;

    std::map<std::string, std::string> metadata;
    std::vector<std::pair<std::string, Tensor>> tensors;

    /// Appends every parameter as "<prefix>/<name>".
    void add(const std::string &prefix, std::span<Parameter *const> params);
    /// Copies stored values into params. Throws ConfigError on a missing name
    /// or a shape mismatch.
    void restore(const std::string &prefix, std::span<Parameter *const> params) const;

    const std::string &meta(const std::string &key) const;

    bool operator==(const Checkpoint &) const = default;
};

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path &path);

/// NetConfig as metadata entries prefixed "net.".
void store_net_config(Checkpoint &checkpoint, const NetConfig &config);
NetConfig read_net_config(const Checkpoint &checkpoint);

} // namespace ehcama::nets
