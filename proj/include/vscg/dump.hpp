#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vscg/model.hpp"

namespace vscg {

/// Binary portable graymap (P5, maxval 255), values scaled by the map's own
/// maximum.
inline void write_pgm(const std::vector<double>& values, std::size_t height, std::size_t width,
                      const std::string& path) {
    if (values.size() != height * width)
        throw ContractError("write_pgm: value count does not match " + std::to_string(height) + "x" +
                            std::to_string(width));
    double vmax = 0.0;
    for (double v : values) vmax = std::max(vmax, v);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << "P5\n" << width << " " << height << "\n255\n";
    for (double v : values) {
        const double unit = vmax > 0.0 ? v / vmax : 0.0;
        out.put(static_cast<char>(static_cast<int>(std::lround(unit * 255.0))));
    }
}

/// Per-segment AGVA attention maps plus the decoded trace of one sample:
///   <id>.seg<t>.pgm    T grayscale maps (H x W)
///   <id>.attention.csv exact attention weights, one row per segment
///   <id>.trace.csv     per-segment O_t, S and decoded label
inline void dump_attention(Model& model, const FeatureSample& sample, const std::string& out_dir) {
    if (model.cfg.mode != SupervisionMode::Fully)
        throw ConfigError("dump_attention: needs a fully-supervised checkpoint");
    std::filesystem::create_directories(out_dir);
    AttentionCapture capture;
    Prediction pred = predict_sample(model, sample, &capture);
    const std::size_t T = model.dims.T, H = model.cfg.H, W = model.cfg.W;
    if (capture.rows.size() != T)
        throw ContractError("dump_attention: expected " + std::to_string(T) + " attention rows");
    const auto base = std::filesystem::path(out_dir) / sample.id;
    for (std::size_t t = 0; t < T; ++t)
        write_pgm(capture.rows[t], H, W, base.string() + ".seg" + std::to_string(t) + ".pgm");
    {
        std::ofstream csv(base.string() + ".attention.csv");
        csv << "segment";
        for (std::size_t i = 0; i < H * W; ++i) csv << ",alpha_" << i;
        csv << "\n";
        char buf[32];
        for (std::size_t t = 0; t < T; ++t) {
            csv << t;
            for (double a : capture.rows[t]) {
                std::snprintf(buf, sizeof buf, ",%.17g", a);
                csv << buf;
            }
            csv << "\n";
        }
    }
    {
        std::ofstream csv(base.string() + ".trace.csv");
        csv << "segment,o_t,s,decoded_label\n";
        char buf[96];
        for (std::size_t t = 0; t < T; ++t) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%zu\n", t, pred.o_t[t],
                          pred.s_degenerate ? 0.0 : pred.s[t], pred.seg_labels_hat[t]);
            csv << buf;
        }
    }
}

} // namespace vscg
