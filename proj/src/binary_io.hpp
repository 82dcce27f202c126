#pragma once

// Little helpers for the versioned binary files (checkpoints, replay
// snapshots). Values are written in host byte order; doubles bit-exactly.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ehcama/autodiff.hpp"
#include "ehcama/errors.hpp"
#include "ehcama/graph.hpp"

namespace ehcama::io {

class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream &out) : out_(out) {}

    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void boolean(bool v) { u64(v ? 1 : 0); }
    void string(const std::string &s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void doubles(const std::vector<double> &v) {
        u64(v.size());
        raw(v.data(), v.size() * sizeof(double));
    }
    void tensor(const ad::Tensor &t) {
        u64(t.rows());
        u64(t.cols());
        raw(t.data().data(), t.size() * sizeof(double));
    }
    void bits(const BitMatrix &m) {
        u64(m.size());
        for (std::uint64_t w : m.words()) u64(w);
    }

private:
    void raw(const void *p, std::size_t n) { out_.write(static_cast<const char *>(p), static_cast<std::streamsize>(n)); }
    std::ostream &out_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::istream &in) : in_(in) {}

    std::uint64_t u64() {
        std::uint64_t v = 0;
        raw(&v, sizeof v);
        return v;
    }
    double f64() {
        double v = 0;
        raw(&v, sizeof v);
        return v;
    }
    bool boolean() { return u64() != 0; }
    std::string string() {
        std::string s(checked_length(u64(), 1), '\0');
        raw(s.data(), s.size());
        return s;
    }
    std::vector<double> doubles() {
        std::vector<double> v(checked_length(u64(), sizeof(double)));
        raw(v.data(), v.size() * sizeof(double));
        return v;
    }
    ad::Tensor tensor() {
        const std::uint64_t rows = u64();
        const std::uint64_t cols = u64();
        if (cols != 0 && rows > (std::uint64_t{1} << 40) / cols) throw ConfigError("corrupt tensor header");
        std::vector<double> data(checked_length(rows * cols, sizeof(double)));
        raw(data.data(), data.size() * sizeof(double));
        return ad::Tensor(rows, cols, std::move(data));
    }
    BitMatrix bits() {
        BitMatrix m(checked_length(u64(), 1));
        for (std::uint64_t &w : m.words()) w = u64();
        return m;
    }

private:
    static std::size_t checked_length(std::uint64_t n, std::size_t unit) {
        if (n > (std::uint64_t{1} << 40) / unit) throw ConfigError("corrupt length field in binary file");
        return static_cast<std::size_t>(n);
    }
    void raw(void *p, std::size_t n) {
        in_.read(static_cast<char *>(p), static_cast<std::streamsize>(n));
        if (!in_) throw ConfigError("unexpected end of binary file");
    }
    std::istream &in_;
};

inline void write_snapshot(BinaryWriter &w, const GraphSnapshot &s) {
    w.u64(s.n_uavs);
    w.u64(s.n_pois);
    w.tensor(s.uav_states);
    w.tensor(s.poi_states);
    w.bits(s.observation);
    w.bits(s.communication);
}

inline GraphSnapshot read_snapshot(BinaryReader &r) {
    GraphSnapshot s;
    s.n_uavs = r.u64();
    s.n_pois = r.u64();
    s.uav_states = r.tensor();
    s.poi_states = r.tensor();
    s.observation = r.bits();
    s.communication = r.bits();
    return s;
}

} // namespace ehcama::io
