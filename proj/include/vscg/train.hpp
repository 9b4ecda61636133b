#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vscg/checkpoint.hpp"

namespace vscg {

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
    double accuracy = 0.0;
    std::size_t C = 0;
    std::vector<std::size_t> confusion; // C x C, row = ground truth, col = prediction
};

/// Segment-level accuracy: decoded label (background included) against ground
/// truth, plus the class confusion matrix. Samples are reduced in dataset
/// order.
inline EvalResult evaluate(Model& model, const Dataset& ds) {
    if (!(ds.dims == model.dims))
        throw ConfigError("evaluate: dataset dims do not match the model config");
    EvalResult res;
    res.C = ds.dims.C;
    res.confusion.assign(ds.dims.C * ds.dims.C, 0);
    std::size_t correct = 0, total = 0;
    for (const auto& s : ds.samples) {
        Prediction pred = predict_sample(model, s);
        for (std::size_t t = 0; t < ds.dims.T; ++t) {
            const std::size_t truth = label_of_segment(s, ds.dims, t);
            const std::size_t guess = pred.seg_labels_hat[t];
            res.confusion[truth * ds.dims.C + guess] += 1;
            correct += truth == guess;
            ++total;
        }
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    return res;
}

inline std::string confusion_csv(const EvalResult& res) {
    std::ostringstream os;
    os << "true_class";
    for (std::size_t c = 0; c < res.C; ++c) os << ",pred_" << c;
    os << "\n";
    for (std::size_t r = 0; r < res.C; ++r) {
        os << r;
        for (std::size_t c = 0; c < res.C; ++c) os << "," << res.confusion[r * res.C + c];
        os << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainState {
    Adam adam;
    Rng rng;
    std::size_t next_epoch = 0;

    explicit TrainState(std::uint64_t seed) : rng(seed) {}
};

struct TrainOutcome {
    std::vector<EpochStats> history;
    double best_val_acc = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    CheckpointData best; // full snapshot at the best-validation epoch
};

inline std::string param_norm_report(const Model& model) {
    std::ostringstream os;
    os.precision(6);
    for (const auto& p : model.params) {
        double norm = 0.0;
        for (double x : p->value()) norm += x * x;
        os << "  " << p->id() << " |value|_2 = " << std::sqrt(norm) << "\n";
    }
    return os.str();
}

/// Epoch loop: shuffle, forward, loss, backward, Adam step. Validation
/// accuracy is recorded per epoch and the best-validation snapshot retained;
/// stops early after cfg.patience epochs without improvement. Fully
/// deterministic given (state, cfg, data).
inline TrainOutcome train(Model& model, const Dataset& train_ds, const Dataset& val_ds,
                          TrainState& state, bool quiet = true) {
    if (train_ds.samples.empty() || val_ds.samples.empty())
        throw ContractError("train: empty split");
    const ModelConfig& cfg = model.cfg;
    TrainOutcome out;
    out.best = snapshot(model, state.adam, state.rng, 0, 0.0);
    std::size_t since_best = 0;
    for (std::size_t epoch = state.next_epoch; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(train_ds.samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        state.rng.shuffle(order);
        double loss_sum = 0.0;
        LossDiagnostics diag;
        std::size_t batch_id = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_id) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> batch(order.data() + start, stop - start);
            try {
                Tape tape;
                FwdCtx ctx;
                ctx.tape = &tape;
                ctx.training = true;
                ctx.rng = &state.rng;
                DiffValue loss = batch_loss(model, train_ds, batch, cfg.mode, ctx, &diag);
                loss_sum += loss.scalar() * static_cast<double>(batch.size());
                tape.backward(loss);
                accumulate_grads(tape, model.params);
                state.adam.step(model.params, cfg.lr);
                zero_grads(model.params);
            } catch (const NumericError& e) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                   std::to_string(batch_id) + ": " + e.what() +
                                   "\nparameter norms:\n" + param_norm_report(model));
            }
        }
        if (diag.degenerate_s > 0)
            std::cerr << "warning: epoch " << epoch << ": skipped the similarity loss for "
                      << diag.degenerate_s << " sample(s) with a degenerate similarity vector\n";
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train_ds.samples.size());
        stats.val_acc = evaluate(model, val_ds).accuracy;
        out.history.push_back(stats);
        out.epochs_run = epoch + 1;
        state.next_epoch = epoch + 1;
        if (stats.val_acc > out.best_val_acc || out.history.size() == 1) {
            out.best_val_acc = stats.val_acc;
            out.best_epoch = epoch;
            out.best = snapshot(model, state.adam, state.rng, epoch, stats.val_acc);
            since_best = 0;
        } else {
            ++since_best;
        }
        if (!quiet)
            std::cerr << "epoch " << epoch << " train_loss=" << stats.train_loss
                      << " val_acc=" << stats.val_acc << "\n";
        if (since_best >= cfg.patience) break;
    }
    return out;
}

inline std::string history_csv(const std::vector<EpochStats>& history) {
    std::ostringstream os;
    os << "epoch,train_loss,val_acc\n";
    char buf[96];
    for (const auto& h : history) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", h.epoch, h.train_loss, h.val_acc);
        os << buf;
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// ablation and loss-variant reports
// ---------------------------------------------------------------------------

struct ReportRow {
    std::string variant;
    std::string mode;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    std::size_t epochs_run = 0;
    double wall_seconds = 0.0;
};

inline ReportRow run_training(const ModelConfig& cfg, const Dataset& train_ds,
                              const Dataset& val_ds, const std::string& variant_name) {
    const auto t0 = std::chrono::steady_clock::now();
    Model model = build_model(cfg);
    TrainState state(cfg.seed);
    TrainOutcome out = train(model, train_ds, val_ds, state);
    const auto t1 = std::chrono::steady_clock::now();
    ReportRow row;
    row.variant = variant_name;
    row.mode = to_string(cfg.mode);
    row.seed = cfg.seed;
    row.accuracy = out.best_val_acc;
    row.epochs_run = out.epochs_run;
    row.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    return row;
}

/// Module ablations {full, w/o ESCM, w/o CERE, w/o common CERE} x
/// {fully, weakly} per seed.
inline std::vector<ReportRow> ablation_matrix(const ModelConfig& base, const Dataset& train_ds,
                                              const Dataset& val_ds,
                                              std::span<const std::uint64_t> seeds) {
    struct Row {
        const char* name;
        void (*apply)(ModelConfig&);
    };
    static const Row kRows[] = {
        {"Full model", [](ModelConfig&) {}},
        {"w/o ESCM", [](ModelConfig& c) { c.escm_on = false; }},
        {"w/o CERE", [](ModelConfig& c) { c.cere = CereAblation::ZeroInit; }},
        {"w/o common CERE", [](ModelConfig& c) { c.shared_cere = false; }},
    };
    std::vector<ReportRow> rows;
    for (std::uint64_t seed : seeds) {
        for (const Row& r : kRows) {
            for (SupervisionMode mode : {SupervisionMode::Fully, SupervisionMode::Weakly}) {
                ModelConfig cfg = base;
                cfg.mode = mode;
                cfg.r_i = -1.0; // re-resolve the mode-dependent dropout rate
                cfg.seed = seed;
                r.apply(cfg);
                cfg.finalize();
                rows.push_back(run_training(cfg, train_ds, val_ds, r.name));
            }
        }
    }
    return rows;
}

/// Loss-function comparison: the fully supervised objective against its two
/// reduced forms, and the weakly supervised smooth loss against plain BCE.
inline std::vector<ReportRow> loss_variant_matrix(const ModelConfig& base, const Dataset& train_ds,
                                                  const Dataset& val_ds,
                                                  std::span<const std::uint64_t> seeds) {
    struct Row {
        const char* name;
        SupervisionMode mode;
        LossVariant variant;
    };
    static const Row kRows[] = {
        {"L_c+L_t", SupervisionMode::Fully, LossVariant::CTOnly},
        {"L_ce+lambda*L_avps", SupervisionMode::Fully, LossVariant::CeAvps},
        {"L_c+L_t+L_avps", SupervisionMode::Fully, LossVariant::Full},
        {"L_bce", SupervisionMode::Weakly, LossVariant::BceOnly},
        {"2L_bce+L_s-bce", SupervisionMode::Weakly, LossVariant::Full},
    };
    std::vector<ReportRow> rows;
    for (std::uint64_t seed : seeds) {
        for (const Row& r : kRows) {
            ModelConfig cfg = base;
            cfg.mode = r.mode;
            cfg.variant = r.variant;
            cfg.r_i = -1.0;
            cfg.lambda = -1.0; // re-resolve the variant-dependent weight
            cfg.seed = seed;
            cfg.finalize();
            rows.push_back(run_training(cfg, train_ds, val_ds, r.name));
        }
    }
    return rows;
}

/// Long-form CSV, schema: variant,mode,seed,accuracy,epochs_run,wall_seconds.
inline std::string report_csv(const std::vector<ReportRow>& rows) {
    std::ostringstream os;
    os << "variant,mode,seed,accuracy,epochs_run,wall_seconds\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.6f", r.accuracy);
        os << r.variant << "," << r.mode << "," << r.seed << "," << buf << "," << r.epochs_run << ",";
        std::snprintf(buf, sizeof buf, "%.3f", r.wall_seconds);
        os << buf << "\n";
    }
    return os.str();
}

/// Aligned text table, variants down, supervision settings across, mean
/// accuracy over seeds per cell.
inline std::string report_table(const std::vector<ReportRow>& rows,
                                const std::vector<std::string>& variant_order) {
    std::ostringstream os;
    os << "Method                     Fully-supervised   Weakly-supervised\n";
    for (const auto& name : variant_order) {
        double acc[2] = {0, 0};
        std::size_t n[2] = {0, 0};
        for (const auto& r : rows) {
            if (r.variant != name) continue;
            const int col = r.mode == "fully" ? 0 : 1;
            acc[col] += r.accuracy;
            n[col] += 1;
        }
        char line[128];
        auto cell = [&](int col) -> std::string {
            if (n[col] == 0) return "    -  ";
            char buf[32];
            std::snprintf(buf, sizeof buf, "%7.4f", acc[col] / static_cast<double>(n[col]));
            return buf;
        };
        std::snprintf(line, sizeof line, "%-26s %16s %19s\n", name.c_str(), cell(0).c_str(),
                      cell(1).c_str());
        os << line;
    }
    return os.str();
}

inline const std::vector<std::string>& ablation_row_order() {
    static const std::vector<std::string> kOrder{"Full model", "w/o ESCM", "w/o CERE",
                                                 "w/o common CERE"};
    return kOrder;
}

inline const std::vector<std::string>& loss_row_order() {
    static const std::vector<std::string> kOrder{"L_c+L_t", "L_ce+lambda*L_avps", "L_c+L_t+L_avps",
                                                 "L_bce", "2L_bce+L_s-bce"};
    return kOrder;
}

} // namespace vscg
