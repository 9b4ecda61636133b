// Command-line surface: dataset synthesis, training, evaluation, gradient
// checking, ablation reports and attention dumps.
//
// Exit codes: 0 success; 2 usage/config/format errors; 3 numeric divergence
// during training; 4 gradient-check failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vscg/dump.hpp"
#include "vscg/gradcheck.hpp"
#include "vscg/train.hpp"

namespace fs = std::filesystem;
using namespace vscg;

namespace {

struct ConfigCli {
    std::string preset = "desk";
    std::string config_path;
    std::vector<std::string> overrides; // raw key=value pairs from flags
};

void add_config_flags(CLI::App* cmd, ConfigCli& c) {
    cmd->add_option("--preset", c.preset, "Dimension preset: desk or paper")
        ->check(CLI::IsMember({"desk", "paper", "tiny"}));
    cmd->add_option("--config", c.config_path, "Flat key = value config file");
    cmd->add_option("--set", c.overrides, "Inline config override, key=value (repeatable)");
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

/// Precedence: preset defaults < VSCG_SEED < config file < flags.
ModelConfig assemble_config(const ConfigCli& c) {
    ModelConfig cfg;
    if (c.preset == "paper")
        cfg = paper_config();
    else if (c.preset == "tiny")
        cfg = tiny_config();
    else
        cfg = desk_config();
    cfg.r_i = -1.0;
    cfg.lambda = -1.0; // let mode/variant entries re-resolve them
    if (const char* env = std::getenv("VSCG_SEED"))
        apply_config_entry(cfg, "seed", env);
    if (!c.config_path.empty()) apply_config_text(cfg, read_file(c.config_path));
    for (const std::string& kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void apply_ablation_flag(ModelConfig& cfg, const std::string& ablation) {
    if (ablation == "none") return;
    if (ablation == "no-escm")
        cfg.escm_on = false;
    else if (ablation == "no-cere")
        cfg.cere = CereAblation::ZeroInit;
    else if (ablation == "no-common-cere")
        cfg.shared_cere = false;
    else
        throw ConfigError("unknown --ablation '" + ablation + "'");
}

void require_matching_dims(const ModelConfig& cfg, const DataDims& d, const std::string& what) {
    auto fail = [&](const char* field, std::size_t want, std::size_t got) {
        throw ConfigError(what + ": config " + field + "=" + std::to_string(want) +
                          " does not match pack " + field + "=" + std::to_string(got));
    };
    if (cfg.T != d.T) fail("T", cfg.T, d.T);
    if (cfg.C != d.C) fail("C", cfg.C, d.C);
    if (cfg.d_a != d.d_a) fail("d_a", cfg.d_a, d.d_a);
    if (cfg.d_v != d.d_v) fail("d_v", cfg.d_v, d.d_v);
    if (cfg.H != d.H) fail("H", cfg.H, d.H);
    if (cfg.W != d.W) fail("W", cfg.W, d.W);
    if (cfg.background_index != d.background_index)
        fail("background_index", cfg.background_index, d.background_index);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << text;
}

// --------------------------------------------------------------------------
// synth
// --------------------------------------------------------------------------

int cmd_synth(const ConfigCli& cc, const std::string& out, std::size_t n, double sigma) {
    ModelConfig cfg = assemble_config(cc);
    cfg.finalize();
    cfg.validate();
    Dataset all = synth_dataset(cfg, n, cfg.seed, sigma);

    const std::size_t n_train = n * 8 / 10;
    const std::size_t n_val = n / 10;
    auto subrange = [&](std::size_t lo, std::size_t hi) {
        Dataset d;
        d.dims = all.dims;
        for (std::size_t i = lo; i < hi; ++i) d.samples.push_back(all.samples[i]);
        return d;
    };
    const fs::path out_path(out);
    const fs::path dir = out_path.parent_path();
    const std::string stem = out_path.stem().string();
    const std::string ext = out_path.extension().string();
    auto side_path = [&](const std::string& tag) {
        return (dir / (stem + "." + tag + ext)).string();
    };
    write_pack(subrange(0, n_train), out);
    write_pack(subrange(n_train, n_train + n_val), side_path("val"));
    write_pack(subrange(n_train + n_val, n), side_path("test"));
    const std::string manifest = (dir / (stem + ".manifest.json")).string();
    write_manifest({{out_path.filename().string(), "train"},
                    {fs::path(side_path("val")).filename().string(), "val"},
                    {fs::path(side_path("test")).filename().string(), "test"}},
                   manifest,
                   {{"n", n}, {"seed", cfg.seed}, {"sigma", sigma}});

    std::printf("pack=%s manifest=%s\n", out.c_str(), manifest.c_str());
    std::printf("dims: T=%zu C=%zu d_a=%zu d_v=%zu H=%zu W=%zu background_index=%zu\n", cfg.T,
                cfg.C, cfg.d_a, cfg.d_v, cfg.H, cfg.W, all.dims.background_index);
    std::vector<std::size_t> histogram(cfg.C, 0);
    for (const auto& s : all.samples)
        for (std::size_t t = 0; t < cfg.T; ++t) histogram[label_of_segment(s, all.dims, t)]++;
    std::printf("segment class histogram:");
    for (std::size_t c = 0; c < cfg.C; ++c) std::printf(" %zu:%zu", c, histogram[c]);
    std::printf("\n");
    return 0;
}

// --------------------------------------------------------------------------
// train
// --------------------------------------------------------------------------

int cmd_train(const ConfigCli& cc, const std::string& data, const std::string& mode,
              const std::string& ablation, const std::string& variant, const std::string& out,
              const std::string& history_path, bool dump_params, bool verbose) {
    ModelConfig cfg = assemble_config(cc);
    if (!mode.empty()) apply_config_entry(cfg, "mode", mode);
    if (!variant.empty()) apply_config_entry(cfg, "variant", variant);
    apply_ablation_flag(cfg, ablation);
    cfg.finalize();
    cfg.validate();

    if (dump_params) {
        Model model = build_model(cfg);
        for (const auto& p : model.params)
            std::printf("%s %s %zu\n", p->id().c_str(), p->shape().str().c_str(), p->size());
        std::printf("total_elements=%zu\n", model.total_param_elements());
        return 0;
    }

    Dataset train_ds = load_split(data, "train");
    Dataset val_ds = load_split(data, "val");
    require_matching_dims(cfg, train_ds.dims, "train split");

    Model model = build_model(cfg);
    TrainState state(cfg.seed);
    TrainOutcome outcome = train(model, train_ds, val_ds, state, /*quiet=*/!verbose);

    write_checkpoint(outcome.best, out);
    const std::string hist = history_path.empty() ? out + ".history.csv" : history_path;
    write_text_file(hist, history_csv(outcome.history));
    std::printf("val_acc=%.6f\n", outcome.best_val_acc);
    return 0;
}

// --------------------------------------------------------------------------
// eval
// --------------------------------------------------------------------------

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& split,
             const std::string& confusion_path) {
    CheckpointData ck = load_checkpoint(ckpt);
    Adam adam;
    Rng rng(0);
    Model model = restore_model(ck, adam, rng);
    Dataset ds = load_split(data, split);
    require_matching_dims(model.cfg, ds.dims, split + " split");
    EvalResult res = evaluate(model, ds);
    const std::string conf = confusion_path.empty() ? ckpt + ".confusion.csv" : confusion_path;
    write_text_file(conf, confusion_csv(res));
    std::printf("acc=%.6f\n", res.accuracy);
    return 0;
}

// --------------------------------------------------------------------------
// gradcheck
// --------------------------------------------------------------------------

int cmd_gradcheck(const ConfigCli& cc, double h, std::size_t max_elements, bool keep_dropout,
                  bool corrupt_adjoint) {
    ModelConfig cfg = assemble_config(cc);
    cfg.finalize();
    if (keep_dropout && (cfg.r_s > 0.0 || cfg.r_i > 0.0)) {
        std::fprintf(stderr,
                     "gradcheck: refusing to run with dropout enabled (r_s=%g, r_i=%g): "
                     "the loss would be nondeterministic\n",
                     cfg.r_s, cfg.r_i);
        return 2;
    }
    cfg.r_s = 0.0;
    cfg.r_i = 0.0;
    cfg.validate();
    Model model = build_model(cfg);
    if (model.total_param_elements() > max_elements) {
        std::fprintf(stderr,
                     "gradcheck: model has %zu parameter elements, cap is %zu; use tiny dims\n",
                     model.total_param_elements(), max_elements);
        return 2;
    }
    Dataset ds = synth_dataset(cfg, 2, cfg.seed);
    std::vector<std::size_t> idx{0, 1};

    bool all_ok = true;
    for (SupervisionMode mode : {SupervisionMode::Fully, SupervisionMode::Weakly}) {
        auto loss_fn = [&](Tape* t) {
            FwdCtx ctx;
            ctx.tape = t;
            return batch_loss(model, ds, idx, mode, ctx);
        };
        auto hook = [&](std::span<const std::shared_ptr<Parameter>> params) {
            if (corrupt_adjoint && !params.empty() && params[0]->size() > 0)
                params[0]->grad()[0] += 1.0;
        };
        GradCheckReport report = check_gradients(loss_fn, model.params, h, hook);
        std::map<std::string, GradCheckEntry> worst_per_module;
        for (const auto& e : report.per_param) {
            const std::string module = e.param.substr(0, e.param.find('.'));
            auto it = worst_per_module.find(module);
            if (it == worst_per_module.end() || e.max_rel_err > it->second.max_rel_err)
                worst_per_module[module] = e;
        }
        std::printf("mode=%s\n", to_string(mode).c_str());
        for (const auto& [module, e] : worst_per_module)
            std::printf("  module %-8s max_rel_err=%.3e (param %s)\n", module.c_str(),
                        e.max_rel_err, e.param.c_str());
        std::printf("  worst overall: %s max_rel_err=%.3e\n", report.worst_param.c_str(),
                    report.worst_rel_err);
        if (!report.passed(1e-4)) {
            all_ok = false;
            std::fprintf(stderr, "gradcheck FAILED in mode %s: parameter %s rel err %.3e >= 1e-4\n",
                         to_string(mode).c_str(), report.worst_param.c_str(), report.worst_rel_err);
        }
    }
    std::printf("gradcheck %s\n", all_ok ? "PASS" : "FAIL");
    return all_ok ? 0 : 4;
}

// --------------------------------------------------------------------------
// dump-attention
// --------------------------------------------------------------------------

int cmd_dump_attention(const std::string& ckpt, const std::string& data, const std::string& id,
                       const std::string& out_dir) {
    CheckpointData ck = load_checkpoint(ckpt);
    if (ck.cfg.mode != SupervisionMode::Fully)
        throw ConfigError("dump-attention: checkpoint was trained in weakly supervised mode; "
                          "a fully-supervised checkpoint is required");
    Adam adam;
    Rng rng(0);
    Model model = restore_model(ck, adam, rng);
    for (const std::string& split : {"train", "val", "test"}) {
        Dataset ds;
        try {
            ds = load_split(data, split);
        } catch (const FormatError&) {
            continue;
        }
        for (const auto& s : ds.samples) {
            if (s.id != id) continue;
            require_matching_dims(model.cfg, ds.dims, split + " split");
            dump_attention(model, s, out_dir);
            std::printf("wrote %zu attention maps for %s to %s\n", model.dims.T, id.c_str(),
                        out_dir.c_str());
            return 0;
        }
    }
    throw ConfigError("dump-attention: unknown sample id '" + id + "'");
}

// --------------------------------------------------------------------------
// ablate
// --------------------------------------------------------------------------

int cmd_ablate(const ConfigCli& cc, const std::string& data, const std::string& out_dir,
               const std::vector<std::uint64_t>& seeds, bool skip_loss_table) {
    ModelConfig cfg = assemble_config(cc);
    cfg.finalize();
    cfg.validate();
    Dataset train_ds = load_split(data, "train");
    Dataset val_ds = load_split(data, "val");
    require_matching_dims(cfg, train_ds.dims, "train split");
    fs::create_directories(out_dir);
    const std::vector<std::uint64_t> seed_list = seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : seeds;

    auto rows = ablation_matrix(cfg, train_ds, val_ds, seed_list);
    write_text_file((fs::path(out_dir) / "ablation.csv").string(), report_csv(rows));
    const std::string table = report_table(rows, ablation_row_order());
    write_text_file((fs::path(out_dir) / "ablation_table.txt").string(), table);
    std::printf("%s\n", table.c_str());

    if (!skip_loss_table) {
        auto loss_rows = loss_variant_matrix(cfg, train_ds, val_ds, seed_list);
        write_text_file((fs::path(out_dir) / "loss_variants.csv").string(), report_csv(loss_rows));
        const std::string loss_table = report_table(loss_rows, loss_row_order());
        write_text_file((fs::path(out_dir) / "loss_table.txt").string(), loss_table);
        std::printf("%s\n", loss_table.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Video-level semantic consistency guidance network for audio-visual event "
                 "localization on precomputed segment features"};
    app.require_subcommand(1);
    int rc = 0;

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled feature pack");
    ConfigCli synth_cc;
    add_config_flags(synth, synth_cc);
    std::string synth_out;
    std::size_t synth_n = 100;
    double synth_sigma = 0.1;
    std::uint64_t flag_seed = 0;
    bool synth_seed_given = false;
    synth->add_option("--out", synth_out, "Output pack path (val/test packs and manifest are written alongside)")
        ->required();
    synth->add_option("--n", synth_n, "Number of samples before the 80/10/10 split");
    synth->add_option("--sigma", synth_sigma, "Feature noise around the class prototypes");
    synth->add_option("--seed", flag_seed, "Generator seed")->each([&](const std::string&) {
        synth_seed_given = true;
    });
    synth->callback([&] {
        if (synth_seed_given) synth_cc.overrides.push_back("seed=" + std::to_string(flag_seed));
        rc = cmd_synth(synth_cc, synth_out, synth_n, synth_sigma);
    });

    // train
    auto* tr = app.add_subcommand("train", "Train a model on a manifest's train/val splits");
    ConfigCli train_cc;
    add_config_flags(tr, train_cc);
    std::string tr_data, tr_mode, tr_ablation = "none", tr_variant, tr_out = "model.vsck";
    std::string tr_history;
    bool tr_dump_params = false, tr_verbose = false;
    std::uint64_t tr_seed = 0;
    bool tr_seed_given = false;
    tr->add_option("--data", tr_data, "Manifest JSON")->required();
    tr->add_option("--out", tr_out, "Checkpoint output path");
    tr->add_option("--mode", tr_mode, "fully | weakly")->check(CLI::IsMember({"fully", "weakly"}));
    tr->add_option("--ablation", tr_ablation, "none | no-escm | no-cere | no-common-cere")
        ->check(CLI::IsMember({"none", "no-escm", "no-cere", "no-common-cere"}));
    tr->add_option("--variant", tr_variant, "Loss variant: full | ce_avps | c_t_only | bce_only")
        ->check(CLI::IsMember({"full", "ce_avps", "c_t_only", "bce_only"}));
    tr->add_option("--history", tr_history, "History CSV path (default: <out>.history.csv)");
    tr->add_option("--seed", tr_seed, "Training seed")->each([&](const std::string&) {
        tr_seed_given = true;
    });
    tr->add_flag("--dump-params", tr_dump_params, "Print the named parameter list and exit");
    tr->add_flag("--verbose", tr_verbose, "Per-epoch progress on stderr");
    tr->callback([&] {
        if (tr_seed_given) train_cc.overrides.push_back("seed=" + std::to_string(tr_seed));
        rc = cmd_train(train_cc, tr_data, tr_mode, tr_ablation, tr_variant, tr_out, tr_history,
                       tr_dump_params, tr_verbose);
    });

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    std::string ev_ckpt, ev_data, ev_split = "test", ev_confusion;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
    ev->add_option("--data", ev_data, "Manifest JSON")->required();
    ev->add_option("--split", ev_split, "train | val | test");
    ev->add_option("--confusion", ev_confusion, "Confusion CSV path (default: <ckpt>.confusion.csv)");
    ev->callback([&] { rc = cmd_eval(ev_ckpt, ev_data, ev_split, ev_confusion); });

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck",
                                  "Check recorded gradients against central finite differences");
    ConfigCli gc_cc;
    gc_cc.preset = "tiny"; // elementwise finite differences need tiny dims
    add_config_flags(gc, gc_cc);
    double gc_h = 1e-5;
    std::size_t gc_cap = 20000;
    bool gc_keep_dropout = false, gc_corrupt = false;
    std::uint64_t gc_seed = 0;
    bool gc_seed_given = false;
    gc->add_option("--step", gc_h, "Central difference step");
    gc->add_option("--max-elements", gc_cap, "Parameter element cap (tiny dims enforced)");
    gc->add_option("--seed", gc_seed, "Seed for init and probe data")->each([&](const std::string&) {
        gc_seed_given = true;
    });
    gc->add_flag("--keep-dropout", gc_keep_dropout,
                 "Keep configured dropout rates instead of forcing them to 0 (refuses to run)");
    gc->add_flag("--test-corrupt-adjoint", gc_corrupt, "Fault-injection hook for tests")
        ->group("");
    gc->callback([&] {
        if (gc_seed_given) gc_cc.overrides.push_back("seed=" + std::to_string(gc_seed));
        rc = cmd_gradcheck(gc_cc, gc_h, gc_cap, gc_keep_dropout, gc_corrupt);
    });

    // dump-attention
    auto* da = app.add_subcommand("dump-attention",
                                  "Write per-segment attention maps and the decoded trace");
    std::string da_ckpt, da_data, da_id, da_out = "attention";
    da->add_option("--ckpt", da_ckpt, "Fully-supervised checkpoint")->required();
    da->add_option("--data", da_data, "Manifest JSON")->required();
    da->add_option("--sample", da_id, "Sample id")->required();
    da->add_option("--out", da_out, "Output directory");
    da->callback([&] { rc = cmd_dump_attention(da_ckpt, da_data, da_id, da_out); });

    // ablate
    auto* ab = app.add_subcommand("ablate", "Run the module and loss ablation matrices");
    ConfigCli ab_cc;
    add_config_flags(ab, ab_cc);
    std::string ab_data, ab_out = "ablation";
    std::vector<std::uint64_t> ab_seeds;
    bool ab_skip_loss = false;
    ab->add_option("--data", ab_data, "Manifest JSON")->required();
    ab->add_option("--out-dir", ab_out, "Report directory");
    ab->add_option("--seeds", ab_seeds, "Seeds, one run per seed per cell")->delimiter(',');
    ab->add_flag("--skip-loss-table", ab_skip_loss, "Only run the module ablation matrix");
    ab->callback([&] { rc = cmd_ablate(ab_cc, ab_data, ab_out, ab_seeds, ab_skip_loss); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return rc;
}
