#include "ehcama/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "binary_io.hpp"

namespace ehcama::nets {

namespace {

constexpr char kMagic[] = "EHCAMA-CKPT";

std::string exact(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace

void Checkpoint::add(const std::string &prefix, std::span<Parameter *const> params) {
    for (const Parameter *p : params) tensors.emplace_back(prefix + "/" + p->name, p->value);
}

void Checkpoint::restore(const std::string &prefix, std::span<Parameter *const> params) const {
    std::map<std::string, const Tensor *> index;
    for (const auto &[name, t] : tensors) index[name] = &t;
    for (Parameter *p : params) {
        const std::string key = prefix + "/" + p->name;
        auto it = index.find(key);
        if (it == index.end()) throw ConfigError("checkpoint lacks tensor '" + key + "'");
        if (!it->second->same_shape(p->value)) {
            throw ConfigError("checkpoint tensor '" + key + "' has shape " + it->second->shape_string() +
                              ", network expects " + p->value.shape_string());
        }
        p->value = *it->second;
    }
}

const std::string &Checkpoint::meta(const std::string &key) const {
    auto it = metadata.find(key);
    if (it == metadata.end()) throw ConfigError("checkpoint lacks metadata '" + key + "'");
    return it->second;
}

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &checkpoint) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + path.string());
    io::BinaryWriter w(out);
    w.string(kMagic);
    w.u64(Checkpoint::kFormatVersion);
    w.u64(checkpoint.metadata.size());
    for (const auto &[k, v] : checkpoint.metadata) {
        w.string(k);
        w.string(v);
    }
    w.u64(checkpoint.tensors.size());
    for (const auto &[name, t] : checkpoint.tensors) {
        w.string(name);
        w.tensor(t);
    }
    if (!out) throw ConfigError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint " + path.string());
    io::BinaryReader r(in);
    if (r.string() != kMagic) throw ConfigError(path.string() + " is not a checkpoint file");
    const std::uint64_t version = r.u64();
    if (version != Checkpoint::kFormatVersion) {
        throw ConfigError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint c;
    const std::uint64_t n_meta = r.u64();
    for (std::uint64_t k = 0; k < n_meta; ++k) {
        std::string key = r.string();
        c.metadata[key] = r.string();
    }
    const std::uint64_t n_tensors = r.u64();
    for (std::uint64_t k = 0; k < n_tensors; ++k) {
        std::string name = r.string();
        c.tensors.emplace_back(std::move(name), r.tensor());
    }
    return c;
}

void store_net_config(Checkpoint &checkpoint, const NetConfig &config) {
    auto &m = checkpoint.metadata;
    m["net.uav_state_dim"] = std::to_string(config.uav_state_dim);
    m["net.poi_state_dim"] = std::to_string(config.poi_state_dim);
    m["net.action_dim"] = std::to_string(config.action_dim);
    m["net.embed_dim"] = std::to_string(config.embed_dim);
    m["net.heads"] = std::to_string(config.heads);
    m["net.position_scale"] = exact(config.position_scale);
    m["net.velocity_scale"] = exact(config.velocity_scale);
    m["net.action_scale"] = exact(config.action_scale);
    m["net.log_sigma_min"] = exact(config.log_sigma_min);
    m["net.log_sigma_max"] = exact(config.log_sigma_max);
    m["net.squash_epsilon"] = exact(config.squash_epsilon);
}

NetConfig read_net_config(const Checkpoint &checkpoint) {
    NetConfig c;
    auto count = [&](const char *k) { return static_cast<std::size_t>(std::stoull(checkpoint.meta(k))); };
    auto real = [&](const char *k) { return std::stod(checkpoint.meta(k)); };
    c.uav_state_dim = count("net.uav_state_dim");
    c.poi_state_dim = count("net.poi_state_dim");
    c.action_dim = count("net.action_dim");
    c.embed_dim = count("net.embed_dim");
    c.heads = count("net.heads");
    c.position_scale = real("net.position_scale");
    c.velocity_scale = real("net.velocity_scale");
    c.action_scale = real("net.action_scale");
    c.log_sigma_min = real("net.log_sigma_min");
    c.log_sigma_max = real("net.log_sigma_max");
    c.squash_epsilon = real("net.squash_epsilon");
    c.validate();
    return c;
}

} // namespace ehcama::nets
