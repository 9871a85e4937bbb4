#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "vsdr/adam.hpp"
#include "vsdr/checkpoint.hpp"
#include "vsdr/dataset.hpp"
#include "vsdr/loss.hpp"
#include "vsdr/metrics.hpp"
#include "vsdr/model.hpp"
#include "vsdr/rng.hpp"
#include "vsdr/split.hpp"

namespace vsdr {

struct TrainConfig {
    int64_t epochs = 30;
    int64_t batch = 1;
    uint64_t seed = 0;
    double lr = 0.001;
    int64_t checkpoint_every = 0;  // epochs between periodic saves; 0 = none
    bool save_best = false;        // write <tag>-best files when validation DC improves
    std::string checkpoint_dir;    // required for any on-disk checkpointing
    int64_t start_epoch = 0;       // resume: first epoch index to run
    int64_t patience = 0;          // stop after this many non-improving epochs; 0 = off

    void validate() const {
        if (epochs < 1) throw ValueError("train: epochs must be >= 1");
        if (batch < 1) throw ValueError("train: batch size must be >= 1");
        if (start_epoch < 0 || start_epoch >= epochs)
            throw ValueError("train: start epoch must lie in [0, epochs)");
        if (patience < 0) throw ValueError("train: patience must be >= 0");
        if ((checkpoint_every > 0 || save_best) && checkpoint_dir.empty())
            throw ValueError("train: checkpointing requested without a checkpoint directory");
    }
};

struct TrainLogRow {
    int64_t epoch = 0;
    double loss = 0, dice_term = 0, bce_term = 0;
    double val_dc = 0, val_ji = 0, val_ac = 0;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;

    std::string to_tsv() const {
        std::string out = "epoch\tloss\tdice\tbce\tval_dc\tval_ji\tval_ac\n";
        char buf[200];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf),
                          "%lld\t%.9f\t%.9f\t%.9f\t%.9f\t%.9f\t%.9f\n",
                          static_cast<long long>(r.epoch), r.loss, r.dice_term, r.bce_term,
                          r.val_dc, r.val_ji, r.val_ac);
            out += buf;
        }
        return out;
    }
};

// Value snapshots used to hold on to the best-validation weights in memory.
template <typename T>
struct ModelSnapshot {
    std::vector<std::vector<T>> params;
    std::vector<std::vector<T>> buffers;
};

template <typename T>
ModelSnapshot<T> snapshot_model(Model<T>& model) {
    ModelSnapshot<T> s;
    for (const auto& p : model.parameters())
        s.params.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    for (const auto& b : model.buffers()) s.buffers.push_back(*b.data);
    return s;
}

template <typename T>
void restore_model(Model<T>& model, const ModelSnapshot<T>& s) {
    const auto params = model.parameters();
    const auto bufs = model.buffers();
    if (s.params.size() != params.size() || s.buffers.size() != bufs.size())
        throw ShapeError("restore_model: snapshot does not match the model");
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<T> t = params[i].tensor;
        if (s.params[i].size() != t.values().size())
            throw ShapeError("restore_model: size mismatch for '" + params[i].name + "'");
        std::copy(s.params[i].begin(), s.params[i].end(), t.mutable_values().begin());
    }
    for (size_t i = 0; i < bufs.size(); ++i) *bufs[i].data = s.buffers[i];
}

template <typename T>
struct FoldResult {
    TrainLog log;
    double best_val_dc = -1.0;
    int64_t best_epoch = -1;
    ModelSnapshot<T> best;  // weights at the best validation epoch
};

namespace detail {

// Stacks the selected cases into [B,1,D,H,W] image/label tensors.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> stack_batch(const std::vector<Case<T>>& cases,
                                            const std::vector<int64_t>& order, size_t from,
                                            size_t to) {
    const Shape& one = cases[static_cast<size_t>(order[from])].image.shape();
    const int64_t B = static_cast<int64_t>(to - from);
    Shape shape{B, one[1], one[2], one[3], one[4]};
    std::vector<T> img(static_cast<size_t>(numel(shape)));
    std::vector<T> lbl(img.size());
    const size_t stride = static_cast<size_t>(numel(one));
    for (size_t b = from; b < to; ++b) {
        const auto& c = cases[static_cast<size_t>(order[b])];
        if (c.image.shape() != one)
            throw ShapeError("train: case '" + c.id + "' has extents " +
                             shape_str(c.image.shape()) + ", batch expects " + shape_str(one));
        std::copy(c.image.values().begin(), c.image.values().end(),
                  img.begin() + static_cast<int64_t>((b - from) * stride));
        std::copy(c.mask.values().begin(), c.mask.values().end(),
                  lbl.begin() + static_cast<int64_t>((b - from) * stride));
    }
    return {Tensor<T>::from_data(shape, std::move(img)),
            Tensor<T>::from_data(shape, std::move(lbl))};
}

inline std::string diverged_message(int64_t epoch, const std::string& tag, const char* what) {
    char msg[160];
    std::snprintf(msg, sizeof(msg),
                  "train: non-finite %s at epoch %lld (%s); aborting with the last good "
                  "checkpoint retained",
                  what, static_cast<long long>(epoch), tag.c_str());
    return msg;
}

template <typename T>
CaseMetrics validate_cases(Model<T>& model, const std::vector<Case<T>>& val,
                           MetricsReport* report = nullptr) {
    NoGradGuard ng;
    CaseMetrics mean;
    for (const auto& c : val) {
        const auto probs = model.forward(c.image, /*training=*/false);
        const CaseMetrics m = evaluate_metrics(c.mask, probs);
        if (report) report->add(c.id, m);
        mean.dc += m.dc;
        mean.ji += m.ji;
        mean.ac += m.ac;
    }
    const double n = static_cast<double>(val.size());
    mean.dc /= n;
    mean.ji /= n;
    mean.ac /= n;
    return mean;
}

}  // namespace detail

// One fold's training loop. Per epoch: seeded shuffle (stream = epoch index,
// so resumed runs replay the identical order), forward in train mode,
// combined loss, backward, Adam step; then validation metrics in inference
// mode. A non-finite loss aborts before any checkpoint write, so the most
// recent on-disk checkpoint stays good.
template <typename T>
FoldResult<T> train_fold(Model<T>& model, AdamState<T>& opt,
                         const std::vector<Case<T>>& train_cases,
                         const std::vector<Case<T>>& val_cases, const TrainConfig& cfg,
                         const std::string& tag = "fold") {
    cfg.validate();
    if (train_cases.empty()) throw ValueError("train: no training cases");
    if (val_cases.empty()) throw ValueError("train: no validation cases");
    for (const auto& tc : train_cases)
        for (const auto& vc : val_cases)
            if (tc.id == vc.id)
                throw ValueError("train: case '" + tc.id + "' appears in both train and val");
    const Shape& base = train_cases.front().image.shape();
    for (const auto* set : {&train_cases, &val_cases})
        for (const auto& c : *set)
            if (c.image.shape() != base)
                throw ShapeError("train: case '" + c.id + "' has extents " +
                                 shape_str(c.image.shape()) + ", expected " + shape_str(base));

    opt.lr = static_cast<T>(cfg.lr);
    const auto params = model.parameters();
    FoldResult<T> res;

    for (int64_t e = cfg.start_epoch; e < cfg.epochs; ++e) {
        Rng erng(derive_seed(cfg.seed, static_cast<uint64_t>(e)));
        std::vector<int64_t> order(train_cases.size());
        std::iota(order.begin(), order.end(), 0);
        erng.shuffle(order);

        double sum_total = 0, sum_dice = 0, sum_bce = 0;
        for (size_t from = 0; from < order.size(); from += static_cast<size_t>(cfg.batch)) {
            const size_t to = std::min(order.size(), from + static_cast<size_t>(cfg.batch));
            auto [img, lbl] = detail::stack_batch(train_cases, order, from, to);
            const auto probs = model.forward(img, /*training=*/true);
            for (const T pv : probs.values())
                if (!std::isfinite(static_cast<double>(pv)))
                    throw NumericError(detail::diverged_message(e, tag, "network output"));
            auto lv = combined_loss(lbl, probs);
            const double total = static_cast<double>(lv.total.item());
            const double dice = static_cast<double>(lv.dice_term.item());
            const double bce = static_cast<double>(lv.bce_term.item());
            if (!std::isfinite(total))
                throw NumericError(detail::diverged_message(e, tag, "loss"));
            backward(lv.total);
            adam_step(params, opt);
            for (const auto& p : params) {
                Tensor<T> t = p.tensor;
                t.zero_grad();
            }
            const double w = static_cast<double>(to - from);
            sum_total += total * w;
            sum_dice += dice * w;
            sum_bce += bce * w;
        }
        const double n_train = static_cast<double>(train_cases.size());
        const CaseMetrics vm = detail::validate_cases(model, val_cases);
        if (!std::isfinite(vm.dc) || !std::isfinite(vm.ji) || !std::isfinite(vm.ac))
            throw NumericError("train: non-finite validation metrics at epoch " +
                               std::to_string(e));

        res.log.rows.push_back({e, sum_total / n_train, sum_dice / n_train, sum_bce / n_train,
                                vm.dc, vm.ji, vm.ac});

        if (vm.dc > res.best_val_dc) {
            res.best_val_dc = vm.dc;
            res.best_epoch = e;
            res.best = snapshot_model(model);
            if (cfg.save_best) {
                save_checkpoint(model, cfg.checkpoint_dir + "/" + tag + "-best.vsdr");
            }
        }
        if (cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0) {
            save_checkpoint(model, cfg.checkpoint_dir + "/" + tag + "-last.vsdr");
            save_adam_state(opt, params, cfg.checkpoint_dir + "/" + tag + "-last.opt");
        }
        if (cfg.patience > 0 && e - res.best_epoch >= cfg.patience) break;
    }
    return res;
}

struct CvFold {
    int64_t fold = 0;
    TrainLog log;
    MetricsReport train_report, val_report;
    double best_val_dc = -1.0;
    int64_t best_epoch = -1;
};

struct CvResult {
    std::vector<CvFold> folds;
    MetricsReport test_report;
    int64_t best_fold = -1;  // 0-based; its model produced test_report

    // Aggregate table: per-split mean metrics in the column order AC, DC, JI.
    // Train/validation are best-epoch means across folds; test comes from the
    // best fold's model on the held-out cases.
    std::string table() const {
        CaseMetrics tr, va;
        for (const auto& f : folds) {
            const auto t = f.train_report.aggregate();
            const auto v = f.val_report.aggregate();
            tr.ac += t.ac;
            tr.dc += t.dc;
            tr.ji += t.ji;
            va.ac += v.ac;
            va.dc += v.dc;
            va.ji += v.ji;
        }
        const double k = static_cast<double>(folds.size());
        const auto te = test_report.aggregate();
        char buf[256];
        std::string out = "split\tac\tdc\tji\n";
        std::snprintf(buf, sizeof(buf), "train\t%.6f\t%.6f\t%.6f\n", tr.ac / k, tr.dc / k,
                      tr.ji / k);
        out += buf;
        std::snprintf(buf, sizeof(buf), "validation\t%.6f\t%.6f\t%.6f\n", va.ac / k, va.dc / k,
                      va.ji / k);
        out += buf;
        std::snprintf(buf, sizeof(buf), "test\t%.6f\t%.6f\t%.6f\n", te.ac, te.dc, te.ji);
        out += buf;
        std::snprintf(buf, sizeof(buf),
                      "# train/validation: best-epoch means across %lld folds; test: fold %lld "
                      "model on %lld held-out cases\n",
                      static_cast<long long>(folds.size()),
                      static_cast<long long>(best_fold + 1),
                      static_cast<long long>(test_report.per_case.size()));
        out += buf;
        return out;
    }
};

// K-fold driver: trains one fresh model per fold, restores each fold's
// best-validation weights for reporting, and evaluates the overall best fold
// on the held-out test cases.
template <typename T>
CvResult cross_validate(const NetworkConfig& netcfg, const std::vector<Case<T>>& cases,
                        const DatasetSplit& split, const TrainConfig& cfg) {
    split.validate();
    auto find_case = [&](const std::string& id) -> const Case<T>& {
        for (const auto& c : cases)
            if (c.id == id) return c;
        throw ValueError("cv: split references unknown case '" + id + "'");
    };
    auto gather = [&](const std::vector<std::string>& ids) {
        std::vector<Case<T>> out;
        out.reserve(ids.size());
        for (const auto& id : ids) out.push_back(find_case(id));
        return out;
    };

    CvResult res;
    std::vector<ModelSnapshot<T>> best_snaps;
    for (int64_t f = 0; f < split.k(); ++f) {
        Model<T> model = build_model<T>(netcfg, derive_seed(cfg.seed, 0xF01D + uint64_t(f)));
        AdamState<T> opt;
        const auto train_cases = gather(split.train_ids(f));
        const auto val_cases = gather(split.folds[static_cast<size_t>(f)]);
        auto fr = train_fold(model, opt, train_cases, val_cases, cfg,
                             "fold" + std::to_string(f + 1));

        restore_model(model, fr.best);
        CvFold out;
        out.fold = f;
        out.log = std::move(fr.log);
        out.best_val_dc = fr.best_val_dc;
        out.best_epoch = fr.best_epoch;
        detail::validate_cases(model, train_cases, &out.train_report);
        detail::validate_cases(model, val_cases, &out.val_report);
        res.folds.push_back(std::move(out));
        best_snaps.push_back(std::move(fr.best));

        if (res.best_fold < 0 ||
            res.folds.back().best_val_dc > res.folds[size_t(res.best_fold)].best_val_dc)
            res.best_fold = f;
    }

    if (!split.test_ids.empty()) {
        Model<T> model = build_model<T>(
            netcfg, derive_seed(cfg.seed, 0xF01D + uint64_t(res.best_fold)));
        restore_model(model, best_snaps[static_cast<size_t>(res.best_fold)]);
        detail::validate_cases(model, gather(split.test_ids), &res.test_report);
    }
    return res;
}

}  // namespace vsdr
