#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vscg/config.hpp"
#include "vscg/error.hpp"
#include "vscg/rng.hpp"

namespace vscg {

/// Dimensions shared by every sample in a dataset. background_index names the
/// class that means "no audio-visual event".
struct DataDims {
    std::size_t T = 0, C = 0, d_a = 0, d_v = 0, H = 0, W = 0;
    std::size_t background_index = 0;

    bool operator==(const DataDims&) const = default;

    static DataDims from_config(const ModelConfig& cfg) {
        const std::size_t bg =
            cfg.background_index == ModelConfig::kAutoIndex ? cfg.C - 1 : cfg.background_index;
        return DataDims{cfg.T, cfg.C, cfg.d_a, cfg.d_v, cfg.H, cfg.W, bg};
    }
};

/// One video: per-segment audio embeddings, visual spatial feature maps,
/// one-hot segment labels, and the video-level label (the temporal mean of
/// the segment labels).
struct FeatureSample {
    std::string id;
    std::vector<double> audio;      // T x d_a
    std::vector<double> visual;     // T x H x W x d_v
    std::vector<double> seg_labels; // T x C, one-hot rows
};

struct Dataset {
    DataDims dims;
    std::vector<FeatureSample> samples;
};

inline std::vector<double> video_label(const FeatureSample& s, const DataDims& d) {
    std::vector<double> y(d.C, 0.0);
    for (std::size_t t = 0; t < d.T; ++t)
        for (std::size_t c = 0; c < d.C; ++c) y[c] += s.seg_labels[t * d.C + c];
    for (double& v : y) v /= static_cast<double>(d.T);
    return y;
}

inline std::size_t label_of_segment(const FeatureSample& s, const DataDims& d, std::size_t t) {
    for (std::size_t c = 0; c < d.C; ++c)
        if (s.seg_labels[t * d.C + c] == 1.0) return c;
    throw FormatError("sample " + s.id + ": segment " + std::to_string(t) + " has no one-hot label");
}

// ---------------------------------------------------------------------------
// derived labels
// ---------------------------------------------------------------------------

/// Per-segment background mask Y_t, foreground one-hot rows Y_tc (background
/// rows zeroed, background column dropped) and the l1-normalized mask Y_tl.
/// For an all-background video Y_tl degenerates to uniform 1/T and the flag
/// is set.
struct DerivedLabels {
    std::vector<double> bg_mask;  // T, 1 = segment contains an event
    std::vector<double> cat_rows; // T x (C-1)
    std::vector<double> bg_l1;    // T
    bool all_background = false;
};

inline DerivedLabels derive_labels(const FeatureSample& s, const DataDims& d) {
    DerivedLabels out;
    out.bg_mask.assign(d.T, 0.0);
    out.cat_rows.assign(d.T * (d.C - 1), 0.0);
    out.bg_l1.assign(d.T, 0.0);
    double total = 0.0;
    for (std::size_t t = 0; t < d.T; ++t) {
        out.bg_mask[t] = 1.0 - s.seg_labels[t * d.C + d.background_index];
        total += out.bg_mask[t];
        std::size_t j = 0;
        for (std::size_t c = 0; c < d.C; ++c) {
            if (c == d.background_index) continue;
            out.cat_rows[t * (d.C - 1) + j] = s.seg_labels[t * d.C + c];
            ++j;
        }
    }
    if (total > 0.0) {
        for (std::size_t t = 0; t < d.T; ++t) out.bg_l1[t] = out.bg_mask[t] / total;
    } else {
        out.all_background = true;
        for (std::size_t t = 0; t < d.T; ++t) out.bg_l1[t] = 1.0 / static_cast<double>(d.T);
    }
    return out;
}

// ---------------------------------------------------------------------------
// pack format
// ---------------------------------------------------------------------------
// Layout (all integers little-endian u32):
//   "VSCG" | version | n_samples | T | C | d_a | d_v | H | W | background_index
// then per sample:
//   id_len | id bytes | audio float32 (T*d_a) | visual float32 (T*H*W*d_v)
//   | seg_labels u8 (T*C)
// Storage is float32; loading widens to float64.

constexpr std::uint32_t kPackVersion = 1;

namespace detail {

class ByteWriter {
public:
    explicit ByteWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw FormatError("cannot open '" + path + "' for writing");
    }
    void u32(std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
        out_.write(reinterpret_cast<const char*>(b), 4);
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
    void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    bool good() const { return static_cast<bool>(out_); }

private:
    std::ofstream out_;
};

class ByteReader {
public:
    explicit ByteReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw FormatError("cannot open '" + path + "' for reading");
    }
    void read(void* p, std::size_t n, const std::string& what) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw FormatError("'" + path_ + "': truncated at byte " +
                              std::to_string(offset_ + static_cast<std::size_t>(in_.gcount())) +
                              " while reading " + what);
        offset_ += n;
    }
    std::uint32_t u32(const std::string& what) {
        unsigned char b[4];
        read(b, 4, what);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    float f32(const std::string& what) { return std::bit_cast<float>(u32(what)); }

private:
    std::ifstream in_;
    std::string path_;
    std::size_t offset_ = 0;
};

} // namespace detail

inline void write_pack(const Dataset& ds, const std::string& path) {
    detail::ByteWriter w(path);
    w.bytes("VSCG", 4);
    w.u32(kPackVersion);
    w.u32(static_cast<std::uint32_t>(ds.samples.size()));
    for (std::size_t v : {ds.dims.T, ds.dims.C, ds.dims.d_a, ds.dims.d_v, ds.dims.H, ds.dims.W,
                          ds.dims.background_index})
        w.u32(static_cast<std::uint32_t>(v));
    const auto& d = ds.dims;
    for (const auto& s : ds.samples) {
        w.u32(static_cast<std::uint32_t>(s.id.size()));
        w.bytes(s.id.data(), s.id.size());
        if (s.audio.size() != d.T * d.d_a || s.visual.size() != d.T * d.H * d.W * d.d_v ||
            s.seg_labels.size() != d.T * d.C)
            throw FormatError("sample " + s.id + ": field sizes do not match dataset dims");
        for (double x : s.audio) w.f32(static_cast<float>(x));
        for (double x : s.visual) w.f32(static_cast<float>(x));
        for (double x : s.seg_labels) w.u8(x != 0.0 ? 1 : 0);
    }
    if (!w.good()) throw FormatError("write failed for '" + path + "'");
}

inline Dataset read_pack(const std::string& path) {
    detail::ByteReader r(path);
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, "VSCG", 4) != 0)
        throw FormatError("'" + path + "': bad magic, not a VSCG feature pack");
    const std::uint32_t version = r.u32("version");
    if (version != kPackVersion)
        throw FormatError("'" + path + "': unsupported version " + std::to_string(version));
    const std::uint32_t n = r.u32("sample count");
    Dataset ds;
    ds.dims.T = r.u32("T");
    ds.dims.C = r.u32("C");
    ds.dims.d_a = r.u32("d_a");
    ds.dims.d_v = r.u32("d_v");
    ds.dims.H = r.u32("H");
    ds.dims.W = r.u32("W");
    ds.dims.background_index = r.u32("background_index");
    const auto& d = ds.dims;
    if (d.T == 0 || d.C == 0 || d.d_a == 0 || d.d_v == 0 || d.H == 0 || d.W == 0)
        throw FormatError("'" + path + "': header dims must all be >= 1");
    if (d.background_index >= d.C)
        throw FormatError("'" + path + "': background_index out of range");
    ds.samples.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::string which = "sample " + std::to_string(i);
        FeatureSample s;
        const std::uint32_t id_len = r.u32(which + " id length");
        s.id.resize(id_len);
        if (id_len) r.read(s.id.data(), id_len, which + " id");
        s.audio.resize(d.T * d.d_a);
        for (auto& x : s.audio) x = static_cast<double>(r.f32(which + " audio"));
        s.visual.resize(d.T * d.H * d.W * d.d_v);
        for (auto& x : s.visual) x = static_cast<double>(r.f32(which + " visual"));
        s.seg_labels.resize(d.T * d.C);
        for (auto& x : s.seg_labels) {
            std::uint8_t b;
            r.read(&b, 1, which + " labels");
            if (b > 1) throw FormatError("'" + path + "': " + which + " label byte out of {0,1}");
            x = static_cast<double>(b);
        }
        for (std::size_t t = 0; t < d.T; ++t) {
            double row = 0.0;
            for (std::size_t c = 0; c < d.C; ++c) row += s.seg_labels[t * d.C + c];
            if (row != 1.0)
                throw FormatError("'" + path + "': " + which + " segment " + std::to_string(t) +
                                  " label row is not one-hot");
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

/// Class-conditional Gaussian prototypes stand in for real extracted
/// features: each sample carries one foreground event over a contiguous
/// segment interval, present in both modalities as prototype + noise;
/// background segments are unmatched noise. Deterministic under seed.
inline Dataset synth_dataset(const ModelConfig& cfg, std::size_t n, std::uint64_t seed,
                             double sigma = 0.1) {
    if (cfg.C < 2) throw ConfigError("synth_dataset: C >= 2 required");
    Dataset ds;
    ds.dims = DataDims::from_config(cfg);
    const auto& d = ds.dims;
    Rng rng(seed);
    const std::size_t n_fg = d.C - 1;
    std::vector<std::vector<double>> audio_proto(n_fg), visual_proto(n_fg);
    for (std::size_t c = 0; c < n_fg; ++c) {
        audio_proto[c].resize(d.d_a);
        for (auto& x : audio_proto[c]) x = rng.normal();
        visual_proto[c].resize(d.H * d.W * d.d_v);
        for (auto& x : visual_proto[c]) x = rng.normal();
    }
    ds.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        FeatureSample s;
        {
            char buf[32];
            std::snprintf(buf, sizeof buf, "synth-%06zu", i);
            s.id = buf;
        }
        const std::size_t cls = rng.index(n_fg); // foreground class, maps to label index cls
        const std::size_t len = 1 + rng.index(d.T);
        const std::size_t t0 = rng.index(d.T - len + 1);
        s.audio.resize(d.T * d.d_a);
        s.visual.resize(d.T * d.H * d.W * d.d_v);
        s.seg_labels.assign(d.T * d.C, 0.0);
        const std::size_t vis_stride = d.H * d.W * d.d_v;
        for (std::size_t t = 0; t < d.T; ++t) {
            const bool in_event = t >= t0 && t < t0 + len;
            for (std::size_t j = 0; j < d.d_a; ++j)
                s.audio[t * d.d_a + j] = in_event ? audio_proto[cls][j] + sigma * rng.normal() : rng.normal();
            for (std::size_t j = 0; j < vis_stride; ++j)
                s.visual[t * vis_stride + j] =
                    in_event ? visual_proto[cls][j] + sigma * rng.normal() : rng.normal();
            // foreground classes occupy the label indices below background_index
            const std::size_t label = in_event ? (cls < d.background_index ? cls : cls + 1)
                                               : d.background_index;
            s.seg_labels[t * d.C + label] = 1.0;
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

/// Index batches over [0, n); the final partial batch is kept. Shuffling is
/// seed-deterministic.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                          bool shuffle, std::uint64_t seed) {
    if (n == 0) throw ContractError("make_batches: empty dataset");
    if (batch_size == 0) throw ContractError("make_batches: batch_size >= 1 required");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (shuffle) {
        Rng rng(seed);
        rng.shuffle(order);
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t stop = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(stop));
    }
    return batches;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string path;
    std::string split; // train | val | test
};

inline void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path,
                           const nlohmann::json& meta = nlohmann::json::object()) {
    nlohmann::json j;
    j["packs"] = nlohmann::json::array();
    for (const auto& e : entries) j["packs"].push_back({{"path", e.path}, {"split", e.split}});
    j["meta"] = meta;
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest '" + path + "': " + e.what());
    }
    if (!j.contains("packs") || !j["packs"].is_array())
        throw FormatError("manifest '" + path + "': missing 'packs' array");
    std::vector<ManifestEntry> entries;
    for (const auto& p : j["packs"]) {
        if (!p.contains("path") || !p.contains("split"))
            throw FormatError("manifest '" + path + "': pack entries need 'path' and 'split'");
        entries.push_back({p["path"].get<std::string>(), p["split"].get<std::string>()});
    }
    return entries;
}

/// Load and concatenate all packs of one split; pack paths are resolved
/// relative to the manifest location.
inline Dataset load_split(const std::string& manifest_path, const std::string& split) {
    const auto entries = read_manifest(manifest_path);
    const auto base = std::filesystem::path(manifest_path).parent_path();
    Dataset out;
    bool first = true;
    for (const auto& e : entries) {
        if (e.split != split) continue;
        std::filesystem::path p(e.path);
        if (p.is_relative()) p = base / p;
        Dataset ds = read_pack(p.string());
        if (first) {
            out = std::move(ds);
            first = false;
        } else {
            if (!(ds.dims == out.dims))
                throw FormatError("manifest '" + manifest_path + "': packs of split '" + split +
                                  "' have mismatched dims");
            for (auto& s : ds.samples) out.samples.push_back(std::move(s));
        }
    }
    if (first) throw FormatError("manifest '" + manifest_path + "': no packs for split '" + split + "'");
    return out;
}

} // namespace vscg
