#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vscg/data.hpp"

using namespace vscg;

namespace {

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "vscg_data_test";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace

TEST(SynthTest, DeterministicUnderSeed) {
    auto cfg = desk_config();
    auto a = synth_dataset(cfg, 20, 7);
    auto b = synth_dataset(cfg, 20, 7);
    ASSERT_EQ(a.samples.size(), b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        EXPECT_EQ(a.samples[i].id, b.samples[i].id);
        EXPECT_EQ(a.samples[i].audio, b.samples[i].audio);
        EXPECT_EQ(a.samples[i].visual, b.samples[i].visual);
        EXPECT_EQ(a.samples[i].seg_labels, b.samples[i].seg_labels);
    }
    auto c = synth_dataset(cfg, 20, 8);
    EXPECT_NE(a.samples[0].audio, c.samples[0].audio);
}

TEST(SynthTest, EventIntervalsAreContiguousSingleClass) {
    auto cfg = desk_config();
    auto ds = synth_dataset(cfg, 100, 3);
    const auto& d = ds.dims;
    for (const auto& s : ds.samples) {
        std::size_t fg_class = d.C; // sentinel
        std::size_t runs = 0;
        bool in_run = false;
        std::size_t event_len = 0;
        for (std::size_t t = 0; t < d.T; ++t) {
            const std::size_t label = label_of_segment(s, d, t);
            const bool fg = label != d.background_index;
            if (fg) {
                ++event_len;
                if (fg_class == d.C) fg_class = label;
                EXPECT_EQ(label, fg_class) << "one foreground class per video";
                if (!in_run) ++runs;
                in_run = true;
            } else {
                in_run = false;
            }
        }
        EXPECT_EQ(runs, 1u) << "event segments form one contiguous run";
        EXPECT_GE(event_len, 1u);
        EXPECT_LE(event_len, d.T);
    }
}

TEST(SynthTest, VideoLabelIsTemporalMeanOfSegmentLabels) {
    auto cfg = desk_config();
    auto ds = synth_dataset(cfg, 50, 11);
    for (const auto& s : ds.samples) {
        auto y = video_label(s, ds.dims);
        std::vector<double> manual(ds.dims.C, 0.0);
        for (std::size_t t = 0; t < ds.dims.T; ++t)
            for (std::size_t c = 0; c < ds.dims.C; ++c)
                manual[c] += s.seg_labels[t * ds.dims.C + c];
        for (double& v : manual) v /= static_cast<double>(ds.dims.T);
        EXPECT_EQ(y, manual);
        double total = 0.0;
        for (double v : y) total += v;
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(PackTest, RoundTripIsBitExact) {
    auto cfg = desk_config();
    auto ds = synth_dataset(cfg, 3, 5);
    const auto p1 = (temp_dir() / "rt1.vscg").string();
    const auto p2 = (temp_dir() / "rt2.vscg").string();
    write_pack(ds, p1);
    auto back = read_pack(p1);
    ASSERT_EQ(back.samples.size(), 3u);
    EXPECT_EQ(back.dims, ds.dims);
    // doubles were narrowed to float32 on disk; values must match after one
    // float32 round-trip and be byte-stable from then on
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back.samples[i].id, ds.samples[i].id);
        for (std::size_t j = 0; j < ds.samples[i].audio.size(); ++j)
            EXPECT_EQ(back.samples[i].audio[j], static_cast<double>(static_cast<float>(ds.samples[i].audio[j])));
        EXPECT_EQ(back.samples[i].seg_labels, ds.samples[i].seg_labels);
    }
    write_pack(back, p2);
    EXPECT_EQ(file_bytes(p1), file_bytes(p2));
}

TEST(PackTest, RejectsBadMagic) {
    const auto path = (temp_dir() / "bad_magic.vscg").string();
    std::ofstream(path, std::ios::binary) << "XXXXjunkjunkjunk";
    try {
        read_pack(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    }
}

TEST(PackTest, TruncationNamesFailingSample) {
    auto cfg = desk_config();
    auto ds = synth_dataset(cfg, 3, 5);
    const auto full_path = (temp_dir() / "full.vscg").string();
    write_pack(ds, full_path);
    auto bytes = file_bytes(full_path);
    // cut inside the second sample's payload
    const std::size_t header = 4 + 4 * 9;
    const std::size_t per_sample = 4 + ds.samples[0].id.size() +
                                   4 * (ds.samples[0].audio.size() + ds.samples[0].visual.size()) +
                                   ds.samples[0].seg_labels.size();
    const auto cut_path = (temp_dir() / "cut.vscg").string();
    std::ofstream(cut_path, std::ios::binary) << bytes.substr(0, header + per_sample + per_sample / 2);
    try {
        read_pack(cut_path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("sample 1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("byte"), std::string::npos) << msg;
    }
}

TEST(DerivedLabelsTest, AllBackgroundDegeneratesToUniform) {
    DataDims d{4, 3, 2, 2, 1, 1, 2};
    FeatureSample s;
    s.id = "bg";
    s.audio.assign(d.T * d.d_a, 0.0);
    s.visual.assign(d.T * d.H * d.W * d.d_v, 0.0);
    s.seg_labels.assign(d.T * d.C, 0.0);
    for (std::size_t t = 0; t < d.T; ++t) s.seg_labels[t * d.C + 2] = 1.0;
    auto lab = derive_labels(s, d);
    EXPECT_TRUE(lab.all_background);
    EXPECT_EQ(lab.bg_mask, (std::vector<double>{0, 0, 0, 0}));
    EXPECT_EQ(lab.bg_l1, (std::vector<double>{0.25, 0.25, 0.25, 0.25}));
}

// Event spanning segments 4..9 of 10 (six event segments): Y_t has six ones
// and Y_tl entries are 1/6 on the event span.
TEST(DerivedLabelsTest, SixSegmentEvent) {
    DataDims d{10, 6, 2, 2, 1, 1, 5};
    FeatureSample s;
    s.id = "dog";
    s.audio.assign(d.T * d.d_a, 0.0);
    s.visual.assign(d.T * d.H * d.W * d.d_v, 0.0);
    s.seg_labels.assign(d.T * d.C, 0.0);
    for (std::size_t t = 0; t < d.T; ++t) {
        const std::size_t label = (t >= 4 && t <= 9) ? 2 : d.background_index;
        s.seg_labels[t * d.C + label] = 1.0;
    }
    auto lab = derive_labels(s, d);
    EXPECT_FALSE(lab.all_background);
    double ones = 0.0;
    for (double v : lab.bg_mask) ones += v;
    EXPECT_EQ(ones, 6.0);
    for (std::size_t t = 0; t < d.T; ++t) {
        EXPECT_DOUBLE_EQ(lab.bg_l1[t], lab.bg_mask[t] / 6.0);
        // background rows of cat_rows are all-zero; event rows one-hot at
        // foreground column 2
        double row = 0.0;
        for (std::size_t c = 0; c + 1 < d.C; ++c) row += lab.cat_rows[t * (d.C - 1) + c];
        EXPECT_EQ(row, lab.bg_mask[t]);
        if (lab.bg_mask[t] == 1.0) EXPECT_EQ(lab.cat_rows[t * (d.C - 1) + 2], 1.0);
    }
}

TEST(DerivedLabelsTest, SingleEventSegmentIsOneHot) {
    DataDims d{5, 3, 2, 2, 1, 1, 2};
    FeatureSample s;
    s.id = "single";
    s.audio.assign(d.T * d.d_a, 0.0);
    s.visual.assign(d.T * d.H * d.W * d.d_v, 0.0);
    s.seg_labels.assign(d.T * d.C, 0.0);
    for (std::size_t t = 0; t < d.T; ++t) s.seg_labels[t * d.C + (t == 2 ? 0 : 2)] = 1.0;
    auto lab = derive_labels(s, d);
    EXPECT_EQ(lab.bg_l1, (std::vector<double>{0, 0, 1, 0, 0}));
}

TEST(DerivedLabelsTest, ConsistentWithSynth) {
    auto cfg = desk_config();
    auto ds = synth_dataset(cfg, 40, 21);
    for (const auto& s : ds.samples) {
        auto lab = derive_labels(s, ds.dims);
        for (std::size_t t = 0; t < ds.dims.T; ++t) {
            const bool fg = label_of_segment(s, ds.dims, t) != ds.dims.background_index;
            EXPECT_EQ(lab.bg_mask[t], fg ? 1.0 : 0.0);
        }
    }
}

TEST(BatchTest, SizesAndOrder) {
    auto batches = make_batches(10, 4, /*shuffle=*/false, 0);
    ASSERT_EQ(batches.size(), 3u);
    EXPECT_EQ(batches[0].size(), 4u);
    EXPECT_EQ(batches[1].size(), 4u);
    EXPECT_EQ(batches[2].size(), 2u);
    EXPECT_EQ(batches[0], (std::vector<std::size_t>{0, 1, 2, 3}));
    EXPECT_EQ(batches[2], (std::vector<std::size_t>{8, 9}));
}

TEST(BatchTest, ShuffleIsSeedDeterministic) {
    auto a = make_batches(10, 3, true, 99);
    auto b = make_batches(10, 3, true, 99);
    EXPECT_EQ(a, b);
    auto c = make_batches(10, 3, true, 100);
    EXPECT_NE(a, c);
    EXPECT_THROW(make_batches(0, 3, false, 0), ContractError);
}

TEST(ManifestTest, RoundTripAndSplitLoading) {
    auto cfg = desk_config();
    auto dir = temp_dir();
    auto train = synth_dataset(cfg, 8, 1);
    auto val = synth_dataset(cfg, 4, 2);
    write_pack(train, (dir / "train.vscg").string());
    write_pack(val, (dir / "val.vscg").string());
    const auto manifest = (dir / "manifest.json").string();
    write_manifest({{"train.vscg", "train"}, {"val.vscg", "val"}}, manifest);
    auto loaded = load_split(manifest, "train");
    EXPECT_EQ(loaded.samples.size(), 8u);
    auto loaded_val = load_split(manifest, "val");
    EXPECT_EQ(loaded_val.samples.size(), 4u);
    EXPECT_THROW(load_split(manifest, "test"), FormatError);
}
