#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vscg/adam.hpp"
#include "vscg/model.hpp"

namespace vscg {

// Checkpoint layout (little-endian, pack-style header):
//   "VSCK" | u32 version | u32 config_len | config text
//   | u64 epoch | f64 best_val_acc | u32 rng_len | rng state text
//   | u64 adam_steps | u32 n_params
// then per parameter:
//   u32 name_len | name | u32 rank | u32 dims[rank]
//   | f64 value[n] | f64 adam_m[n] | f64 adam_v[n]

constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    ModelConfig cfg;
    std::size_t epoch = 0;
    double best_val_acc = 0.0;
    std::string rng_state;
    std::uint64_t adam_steps = 0;

    struct Entry {
        std::string name;
        std::vector<std::size_t> dims;
        std::vector<double> value, m, v;
    };
    std::vector<Entry> entries;
};

inline CheckpointData snapshot(const Model& model, const Adam& adam, const Rng& rng,
                               std::size_t epoch, double best_val_acc) {
    CheckpointData ck;
    ck.cfg = model.cfg;
    ck.epoch = epoch;
    ck.best_val_acc = best_val_acc;
    ck.rng_state = rng.save_state();
    ck.adam_steps = adam.steps();
    for (const auto& p : model.params) {
        CheckpointData::Entry e;
        e.name = p->id();
        for (std::size_t i = 0; i < p->shape().rank(); ++i) e.dims.push_back(p->shape()[i]);
        e.value = p->value();
        if (const Adam::Slot* slot = adam.slot(*p)) {
            e.m = slot->m;
            e.v = slot->v;
        } else {
            e.m.assign(p->size(), 0.0);
            e.v.assign(p->size(), 0.0);
        }
        ck.entries.push_back(std::move(e));
    }
    return ck;
}

namespace detail {

inline void write_u64(ByteWriter& w, std::uint64_t v) {
    w.u32(static_cast<std::uint32_t>(v & 0xffffffffu));
    w.u32(static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t read_u64(ByteReader& r, const std::string& what) {
    const std::uint64_t lo = r.u32(what);
    const std::uint64_t hi = r.u32(what);
    return lo | (hi << 32);
}

inline void write_f64(ByteWriter& w, double v) { write_u64(w, std::bit_cast<std::uint64_t>(v)); }

inline double read_f64(ByteReader& r, const std::string& what) {
    return std::bit_cast<double>(read_u64(r, what));
}

inline void write_string(ByteWriter& w, const std::string& s) {
    w.u32(static_cast<std::uint32_t>(s.size()));
    w.bytes(s.data(), s.size());
}

inline std::string read_string(ByteReader& r, const std::string& what) {
    const std::uint32_t n = r.u32(what);
    std::string s(n, '\0');
    if (n) r.read(s.data(), n, what);
    return s;
}

} // namespace detail

inline void write_checkpoint(const CheckpointData& ck, const std::string& path) {
    detail::ByteWriter w(path);
    w.bytes("VSCK", 4);
    w.u32(kCheckpointVersion);
    detail::write_string(w, config_to_text(ck.cfg));
    detail::write_u64(w, ck.epoch);
    detail::write_f64(w, ck.best_val_acc);
    detail::write_string(w, ck.rng_state);
    detail::write_u64(w, ck.adam_steps);
    w.u32(static_cast<std::uint32_t>(ck.entries.size()));
    for (const auto& e : ck.entries) {
        detail::write_string(w, e.name);
        w.u32(static_cast<std::uint32_t>(e.dims.size()));
        for (std::size_t d : e.dims) w.u32(static_cast<std::uint32_t>(d));
        for (double x : e.value) detail::write_f64(w, x);
        for (double x : e.m) detail::write_f64(w, x);
        for (double x : e.v) detail::write_f64(w, x);
    }
    if (!w.good()) throw FormatError("write failed for checkpoint '" + path + "'");
}

inline CheckpointData load_checkpoint(const std::string& path) {
    detail::ByteReader r(path);
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, "VSCK", 4) != 0)
        throw FormatError("'" + path + "': bad magic, not a VSCG checkpoint");
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw FormatError("'" + path + "': unsupported checkpoint version " + std::to_string(version));
    CheckpointData ck;
    ck.cfg = ModelConfig{};
    apply_config_text(ck.cfg, detail::read_string(r, "config"));
    ck.cfg.finalize();
    ck.epoch = static_cast<std::size_t>(detail::read_u64(r, "epoch"));
    ck.best_val_acc = detail::read_f64(r, "best_val_acc");
    ck.rng_state = detail::read_string(r, "rng state");
    ck.adam_steps = detail::read_u64(r, "adam steps");
    const std::uint32_t n = r.u32("parameter count");
    for (std::uint32_t i = 0; i < n; ++i) {
        CheckpointData::Entry e;
        e.name = detail::read_string(r, "parameter name");
        const std::uint32_t rank = r.u32(e.name + " rank");
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            e.dims.push_back(r.u32(e.name + " dims"));
            numel *= e.dims.back();
        }
        e.value.resize(numel);
        for (auto& x : e.value) x = detail::read_f64(r, e.name + " value");
        e.m.resize(numel);
        for (auto& x : e.m) x = detail::read_f64(r, e.name + " adam m");
        e.v.resize(numel);
        for (auto& x : e.v) x = detail::read_f64(r, e.name + " adam v");
        ck.entries.push_back(std::move(e));
    }
    return ck;
}

/// Load checkpointed values into an existing model and optimizer. Every model
/// parameter must be present with matching dims; the error names the first
/// offending field.
inline void apply_checkpoint(Model& model, Adam& adam, Rng& rng, const CheckpointData& ck) {
    adam.set_steps(ck.adam_steps);
    rng.load_state(ck.rng_state);
    for (const auto& p : model.params) {
        const CheckpointData::Entry* found = nullptr;
        for (const auto& e : ck.entries)
            if (e.name == p->id()) {
                found = &e;
                break;
            }
        if (!found) throw FormatError("checkpoint is missing parameter '" + p->id() + "'");
        Shape want = p->shape();
        bool dims_ok = found->dims.size() == want.rank();
        for (std::size_t i = 0; dims_ok && i < found->dims.size(); ++i)
            dims_ok = found->dims[i] == want[i];
        if (!dims_ok)
            throw FormatError("checkpoint parameter '" + p->id() + "' has mismatched dims (model wants " +
                              want.str() + ")");
        p->set_value(found->value);
        adam.set_slot(*p, Adam::Slot{found->m, found->v});
    }
    if (ck.entries.size() != model.params.size())
        throw FormatError("checkpoint holds " + std::to_string(ck.entries.size()) +
                          " parameters, model has " + std::to_string(model.params.size()));
}

/// Rebuild a model from the checkpoint's own config snapshot.
inline Model restore_model(const CheckpointData& ck, Adam& adam, Rng& rng) {
    Model m = build_model(ck.cfg);
    apply_checkpoint(m, adam, rng, ck);
    return m;
}

} // namespace vscg
