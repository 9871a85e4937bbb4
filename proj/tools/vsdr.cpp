// Command-line front end for the volumetric segmentation toolkit: data
// preparation (phantom, preprocess, split), model runs (train, cv, evaluate,
// predict), and verification probes (gradcheck, rfprobe, paramcount).
//
// Exit codes: 0 success, 1 usage error, 2 data error (bad files, values, or
// shapes), 3 numerical failure (non-finite training state, failed gradient
// check).
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "vsdr/checkpoint.hpp"
#include "vsdr/dataset.hpp"
#include "vsdr/gradient_suite.hpp"
#include "vsdr/metrics.hpp"
#include "vsdr/model.hpp"
#include "vsdr/nrrd.hpp"
#include "vsdr/phantom.hpp"
#include "vsdr/preprocess.hpp"
#include "vsdr/split.hpp"
#include "vsdr/train.hpp"

namespace fs = std::filesystem;
using namespace vsdr;

namespace {

std::string data_root_default() {
    const char* env = std::getenv("VSDR_DATA_ROOT");
    return env ? env : "";
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot create '" + path + "'");
    os << text;
    if (!os) throw IoError("failed writing '" + path + "'");
}

std::string image_path(const std::string& dir, const std::string& id) {
    return dir + "/" + id + ".nrrd";
}
std::string mask_path(const std::string& dir, const std::string& id) {
    return dir + "/" + id + "_mask.nrrd";
}

// Case ids in a data directory: every "<id>.nrrd" that is not itself a
// "*_mask.nrrd", sorted for reproducible ordering.
std::vector<std::string> scan_case_ids(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        const std::string suffix = ".nrrd";
        if (name.size() <= suffix.size() ||
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
            continue;
        const std::string stem = name.substr(0, name.size() - suffix.size());
        const std::string mask_tag = "_mask";
        if (stem.size() > mask_tag.size() &&
            stem.compare(stem.size() - mask_tag.size(), mask_tag.size(), mask_tag) == 0)
            continue;
        ids.push_back(stem);
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw ValueError("no .nrrd cases found in '" + dir + "'");
    return ids;
}

std::vector<std::string> read_id_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(is, line)) {
        const std::string id = detail::trim(line);
        if (!id.empty() && id[0] != '#') ids.push_back(id);
    }
    if (ids.empty()) throw ValueError("id file '" + path + "' lists no cases");
    return ids;
}

template <typename T>
Case<T> load_case(const std::string& dir, const std::string& id) {
    const auto img = read_volume<T>(image_path(dir, id), VolumeKind::intensity);
    const auto msk = read_volume<T>(mask_path(dir, id), VolumeKind::mask);
    return case_from_volumes<T>(id, img, msk);
}

// Runs fn(0..n-1) on up to `jobs` worker threads; the first exception wins
// and is rethrown on the calling thread after all workers stop.
void run_jobs(int64_t jobs, size_t n, const std::function<void(size_t)>& fn) {
    if (jobs < 1) throw ValueError("--jobs must be >= 1");
    if (jobs == 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr err;
    std::mutex err_mutex;
    auto worker = [&]() {
        NoGradGuard ng;
        while (!failed.load()) {
            const size_t i = next.fetch_add(1);
            if (i >= n) break;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!err) err = std::current_exception();
                failed.store(true);
            }
        }
    };
    std::vector<std::thread> threads;
    const size_t n_threads = static_cast<size_t>(std::min<int64_t>(jobs, int64_t(n)));
    threads.reserve(n_threads);
    for (size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (err) std::rethrow_exception(err);
}

std::vector<std::string> ids_for_role(const DatasetSplit& split, const std::string& role) {
    if (role == "test") return split.test_ids;
    for (const char* prefix : {"fold-", "train-"}) {
        const std::string p = prefix;
        if (role.rfind(p, 0) == 0) {
            const int64_t k = detail::parse_int(role.substr(p.size()), "fold number");
            if (k < 1 || k > split.k())
                throw ValueError("role '" + role + "' is out of range: manifest has " +
                                 std::to_string(split.k()) + " folds");
            return p == "fold-" ? split.folds[static_cast<size_t>(k - 1)]
                                : split.train_ids(k - 1);
        }
    }
    throw ValueError("unknown role '" + role + "' (expected test, fold-<k>, or train-<k>)");
}

struct ModelFlags {
    std::string variant = "unet_dr";
    int64_t base_channels = 4;
    int64_t levels = 2;
    std::vector<int64_t> rates{1, 2, 3, 4};

    NetworkConfig config() const {
        NetworkConfig nc;
        nc.variant = variant_from_name(variant);
        nc.base_channels = base_channels;
        nc.levels = levels;
        nc.dilation_rates = rates;
        nc.validate();
        return nc;
    }
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
    cmd->add_option("--variant", mf.variant, "Network variant")
        ->check(CLI::IsMember({"unet_dr", "baseline_unet"}))
        ->capture_default_str();
    cmd->add_option("--base-channels", mf.base_channels, "Channels of the first encoder block")
        ->capture_default_str();
    cmd->add_option("--levels", mf.levels, "Number of resolution halvings")
        ->capture_default_str();
    cmd->add_option("--rates", mf.rates, "Bottleneck dilation rates")
        ->delimiter(',')
        ->capture_default_str();
}

struct TrainFlags {
    int64_t epochs = 30;
    int64_t batch = 1;
    double lr = 0.001;
    uint64_t seed = 0;
    int64_t checkpoint_every = 0;
    int64_t patience = 0;
    int64_t precision = 64;

    TrainConfig config(const std::string& out_dir) const {
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch = batch;
        cfg.lr = lr;
        cfg.seed = seed;
        cfg.checkpoint_every = checkpoint_every;
        cfg.patience = patience;
        cfg.save_best = true;
        cfg.checkpoint_dir = out_dir;
        cfg.validate();
        return cfg;
    }
};

void add_train_flags(CLI::App* cmd, TrainFlags& tf) {
    cmd->add_option("--epochs", tf.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--batch", tf.batch, "Cases per optimizer step")->capture_default_str();
    cmd->add_option("--lr", tf.lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--seed", tf.seed, "Seed for init, shuffling, and derived streams")
        ->capture_default_str();
    cmd->add_option("--checkpoint-every", tf.checkpoint_every,
                    "Save a resumable checkpoint every N epochs (0 = off)")
        ->capture_default_str();
    cmd->add_option("--patience", tf.patience,
                    "Stop after N epochs without validation improvement (0 = off)")
        ->capture_default_str();
    cmd->add_option("--precision", tf.precision, "Scalar width in bits")
        ->check(CLI::IsMember({32, 64}))
        ->capture_default_str();
}

// ---------------------------------------------------------------- phantom

struct PhantomOpts {
    int64_t n = 8;
    uint64_t seed = 0;
    std::string out;
    std::string extents = "16x16x16";
};

int cmd_phantom(const PhantomOpts& o) {
    const auto ext = parse_extents3(o.extents, "--extents");
    ensure_dir(o.out);
    NrrdWriteOptions img_opt;
    img_opt.type = NrrdType::float_;
    NrrdWriteOptions mask_opt;
    mask_opt.type = NrrdType::uchar_;
    for (int64_t i = 0; i < o.n; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "ph%03lld", static_cast<long long>(i));
        const auto ph =
            generate_phantom<double>(derive_seed(o.seed, static_cast<uint64_t>(i)), ext);
        write_volume(image_path(o.out, id), ph.image, img_opt);
        write_volume(mask_path(o.out, id), ph.mask, mask_opt);
    }
    std::printf("wrote %lld phantom pairs to %s\n", static_cast<long long>(o.n), o.out.c_str());
    return 0;
}

// ------------------------------------------------------------- preprocess

struct PreprocessOpts {
    std::string in = data_root_default();
    std::string out;
    std::string config;
    int64_t tiles = 0;
    double clip_limit = 0;
    int64_t bins = 0;
    std::string crop, resample;
    int64_t jobs = 1;
    CLI::Option *tiles_opt = nullptr, *clip_opt = nullptr, *bins_opt = nullptr;
};

int cmd_preprocess(const PreprocessOpts& o) {
    PreprocessParams params;
    if (!o.config.empty()) params = load_preprocess_config(o.config, params);
    if (o.tiles_opt->count()) {
        params.clahe.tiles_y = o.tiles;
        params.clahe.tiles_x = o.tiles;
    }
    if (o.clip_opt->count()) params.clahe.clip_limit = o.clip_limit;
    if (o.bins_opt->count()) params.clahe.bins = o.bins;
    if (!o.crop.empty()) params.crop = parse_extents3(o.crop, "--crop");
    if (!o.resample.empty()) params.target = parse_extents3(o.resample, "--resample");
    params.validate();

    const auto ids = scan_case_ids(o.in);
    ensure_dir(o.out);
    NrrdWriteOptions img_opt;
    img_opt.type = NrrdType::float_;
    NrrdWriteOptions mask_opt;
    mask_opt.type = NrrdType::uchar_;
    std::atomic<int64_t> n_masks{0};
    run_jobs(o.jobs, ids.size(), [&](size_t i) {
        const std::string& id = ids[i];
        const auto img = read_volume<double>(image_path(o.in, id), VolumeKind::intensity);
        write_volume(image_path(o.out, id), preprocess_intensity(img, params), img_opt);
        if (fs::exists(mask_path(o.in, id))) {
            const auto msk = read_volume<double>(mask_path(o.in, id), VolumeKind::mask);
            write_volume(mask_path(o.out, id), preprocess_mask(msk, params), mask_opt);
            ++n_masks;
        }
    });
    std::printf("preprocessed %zu images (%lld with masks) from %s to %s\n", ids.size(),
                static_cast<long long>(n_masks.load()), o.in.c_str(), o.out.c_str());
    return 0;
}

// ------------------------------------------------------------------ split

struct SplitOpts {
    std::string ids_file;
    std::string data = data_root_default();
    double test_fraction = 0.2;
    int64_t k = 5;
    uint64_t seed = 0;
    std::string out;
};

int cmd_split(const SplitOpts& o) {
    std::vector<std::string> ids;
    if (!o.ids_file.empty())
        ids = read_id_file(o.ids_file);
    else if (!o.data.empty())
        ids = scan_case_ids(o.data);
    else
        throw ValueError("split needs --ids or --data to enumerate cases");
    const DatasetSplit split = make_split(ids, o.test_fraction, o.k, o.seed);
    write_split_manifest(split, o.out);
    std::printf("split %zu cases: %zu test", ids.size(), split.test_ids.size());
    for (const auto& fold : split.folds) std::printf(" / %zu", fold.size());
    std::printf(" across %lld folds -> %s\n", static_cast<long long>(split.k()), o.out.c_str());
    return 0;
}

// ------------------------------------------------------------------ train

struct TrainOpts {
    std::string data = data_root_default();
    std::string split;
    int64_t fold = 1;
    std::string out;
    ModelFlags model;
    TrainFlags train;
};

template <typename T>
int run_train(const TrainOpts& o) {
    const DatasetSplit split = read_split_manifest(o.split);
    if (o.fold < 1 || o.fold > split.k())
        throw ValueError("--fold " + std::to_string(o.fold) + " is out of range: manifest has " +
                         std::to_string(split.k()) + " folds");
    std::vector<Case<T>> train_cases, val_cases;
    for (const auto& id : split.train_ids(o.fold - 1))
        train_cases.push_back(load_case<T>(o.data, id));
    for (const auto& id : split.folds[static_cast<size_t>(o.fold - 1)])
        val_cases.push_back(load_case<T>(o.data, id));

    ensure_dir(o.out);
    const TrainConfig cfg = o.train.config(o.out);
    Model<T> model = build_model<T>(o.model.config(),
                                    derive_seed(cfg.seed, 0xF01D + uint64_t(o.fold - 1)));
    AdamState<T> opt;
    const std::string tag = "fold" + std::to_string(o.fold);
    const auto res = train_fold(model, opt, train_cases, val_cases, cfg, tag);
    write_text(o.out + "/" + tag + "-log.tsv", res.log.to_tsv());
    std::printf("%s: %zu train / %zu val cases, best validation dc %.6f at epoch %lld\n",
                tag.c_str(), train_cases.size(), val_cases.size(), res.best_val_dc,
                static_cast<long long>(res.best_epoch));
    std::printf("artifacts: %s/%s-log.tsv, %s/%s-best.vsdr\n", o.out.c_str(), tag.c_str(),
                o.out.c_str(), tag.c_str());
    return 0;
}

// --------------------------------------------------------------------- cv

struct CvOpts {
    std::string data = data_root_default();
    std::string split;
    std::string out;
    ModelFlags model;
    TrainFlags train;
};

template <typename T>
int run_cv(const CvOpts& o) {
    const DatasetSplit split = read_split_manifest(o.split);
    std::vector<Case<T>> cases;
    for (const auto& id : split.test_ids) cases.push_back(load_case<T>(o.data, id));
    for (const auto& fold : split.folds)
        for (const auto& id : fold) cases.push_back(load_case<T>(o.data, id));

    ensure_dir(o.out);
    const TrainConfig cfg = o.train.config(o.out);
    const CvResult res = cross_validate(o.model.config(), cases, split, cfg);
    for (const auto& f : res.folds) {
        const std::string tag = "fold" + std::to_string(f.fold + 1);
        write_text(o.out + "/" + tag + "-log.tsv", f.log.to_tsv());
        write_text(o.out + "/" + tag + "-train-report.tsv", f.train_report.to_tsv());
        write_text(o.out + "/" + tag + "-val-report.tsv", f.val_report.to_tsv());
    }
    write_text(o.out + "/test-report.tsv", res.test_report.to_tsv());
    const std::string table = res.table();
    write_text(o.out + "/cv-table.tsv", table);
    std::fputs(table.c_str(), stdout);
    return 0;
}

// --------------------------------------------------------------- evaluate

struct EvaluateOpts {
    std::string checkpoint;
    std::string data = data_root_default();
    std::string ids_file;
    std::string split;
    std::string role = "test";
    std::string out;
    double threshold = 0.5;
    int64_t jobs = 1;
};

template <typename T>
int run_evaluate(const EvaluateOpts& o) {
    Model<T> model = load_checkpoint<T>(o.checkpoint);
    std::vector<std::string> ids;
    if (!o.split.empty())
        ids = ids_for_role(read_split_manifest(o.split), o.role);
    else if (!o.ids_file.empty())
        ids = read_id_file(o.ids_file);
    else
        ids = scan_case_ids(o.data);

    std::vector<CaseMetrics> metrics(ids.size());
    run_jobs(o.jobs, ids.size(), [&](size_t i) {
        NoGradGuard ng;
        const auto c = load_case<T>(o.data, ids[i]);
        const auto probs = model.forward(c.image, /*training=*/false);
        metrics[i] = evaluate_metrics(c.mask, probs, o.threshold);
    });
    MetricsReport report;
    for (size_t i = 0; i < ids.size(); ++i) report.add(ids[i], metrics[i]);
    const std::string tsv = report.to_tsv();
    if (o.out.empty())
        std::fputs(tsv.c_str(), stdout);
    else
        write_text(o.out, tsv);
    return 0;
}

int cmd_evaluate(const EvaluateOpts& o) {
    return checkpoint_scalar_width(o.checkpoint) == 4 ? run_evaluate<float>(o)
                                                      : run_evaluate<double>(o);
}

// ---------------------------------------------------------------- predict

struct PredictOpts {
    std::string checkpoint;
    std::string in;
    std::string out;
    double threshold = 0.5;
};

template <typename T>
int run_predict(const PredictOpts& o) {
    Model<T> model = load_checkpoint<T>(o.checkpoint);
    const auto vol = read_volume<T>(o.in, VolumeKind::intensity);
    const auto norm = normalize_volume(vol);
    const Shape shape{1, 1, vol.extents[0], vol.extents[1], vol.extents[2]};
    const auto x = Tensor<T>::from_data(shape, norm.data);
    NoGradGuard ng;
    const auto probs = model.forward(x, /*training=*/false);

    Volume<T> mask;
    mask.extents = vol.extents;
    mask.spacing = vol.spacing;
    mask.kind = VolumeKind::mask;
    mask.data.resize(norm.data.size());
    int64_t fg = 0;
    const auto pv = probs.values();
    for (size_t i = 0; i < mask.data.size(); ++i) {
        const bool on = static_cast<double>(pv[i]) > o.threshold;
        mask.data[i] = on ? T(1) : T(0);
        fg += on;
    }
    NrrdWriteOptions mask_opt;
    mask_opt.type = NrrdType::uchar_;
    write_volume(o.out, mask, mask_opt);
    std::printf("wrote %s (foreground fraction %.6f)\n", o.out.c_str(),
                static_cast<double>(fg) / static_cast<double>(mask.data.size()));
    return 0;
}

int cmd_predict(const PredictOpts& o) {
    return checkpoint_scalar_width(o.checkpoint) == 4 ? run_predict<float>(o)
                                                      : run_predict<double>(o);
}

// -------------------------------------------------- verification commands

int cmd_gradcheck(uint64_t seed) {
    const auto results = run_gradient_suite(seed);
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%-24s max_rel_err=%.3e (%zu gradients) %s\n", r.name.c_str(),
                    r.max_rel_err, r.n_checked, r.pass ? "pass" : "FAIL");
        ok = ok && r.pass;
    }
    std::printf("gradient suite: %s (%zu checks)\n", ok ? "pass" : "FAIL", results.size());
    return ok ? 0 : 3;
}

int cmd_rfprobe(uint64_t seed, const std::vector<int64_t>& rates) {
    Rng rng(derive_seed(seed, 0x9F0B));
    const std::array<int64_t, 3> ext{15, 17, 19};
    for (int64_t d = 1; d <= 4; ++d) {
        auto unit = make_conv_bn_relu<double>(Conv3dSpec::same_padded(1, 2, 3, d), rng);
        probe_init(unit, rng);
        const auto got = receptive_field_probe<double>(
            [&](const Tensor<double>& x) { return unit.forward(x, false); }, ext);
        std::printf("conv3d k=3 d=%lld: %lldx%lldx%lld\n", static_cast<long long>(d),
                    static_cast<long long>(got[0]), static_cast<long long>(got[1]),
                    static_cast<long long>(got[2]));
    }
    Bottleneck<double> bott;
    bott.dilated = true;
    std::string rates_str;
    for (int64_t r : rates) {
        bott.units.push_back(make_conv_bn_relu<double>(Conv3dSpec::same_padded(1, 4, 3, r), rng));
        probe_init(bott.units.back(), rng);
        rates_str += (rates_str.empty() ? "" : ",") + std::to_string(r);
    }
    const auto got = receptive_field_probe<double>(
        [&](const Tensor<double>& x) { return bott.forward(x, false); }, ext);
    std::printf("bottleneck rates %s: %lldx%lldx%lld\n", rates_str.c_str(),
                static_cast<long long>(got[0]), static_cast<long long>(got[1]),
                static_cast<long long>(got[2]));
    return 0;
}

int cmd_paramcount(const std::string& variant, int64_t base_channels, int64_t levels,
                   const std::vector<int64_t>& rates) {
    auto report = [&](Variant v) {
        NetworkConfig nc;
        nc.variant = v;
        nc.base_channels = base_channels;
        nc.levels = levels;
        nc.dilation_rates = rates;
        const Model<double> m = build_model<double>(nc, 0);
        std::printf("%s (base channels %lld, levels %lld)\n", variant_name(v),
                    static_cast<long long>(base_channels), static_cast<long long>(levels));
        int64_t total = 0;
        for (const auto& p : m.parameters()) {
            std::printf("  %-28s %9lld\n", p.name.c_str(),
                        static_cast<long long>(p.tensor.numel()));
            total += p.tensor.numel();
        }
        std::printf("  %-28s %9lld\n\n", "total", static_cast<long long>(total));
        return total;
    };
    if (variant == "both") {
        const int64_t dr = report(Variant::unet_dr);
        const int64_t base = report(Variant::baseline_unet);
        std::printf("unet_dr %lld %s baseline_unet %lld\n", static_cast<long long>(dr),
                    dr < base ? "<" : ">=", static_cast<long long>(base));
        return 0;
    }
    report(variant_from_name(variant));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"volumetric atrial segmentation toolkit"};
    app.require_subcommand(1);
    std::function<int()> action;

    PhantomOpts phantom_opts;
    auto* phantom_cmd =
        app.add_subcommand("phantom", "Generate seeded synthetic image/mask NRRD pairs");
    phantom_cmd->add_option("--n", phantom_opts.n, "Number of cases")->capture_default_str();
    phantom_cmd->add_option("--seed", phantom_opts.seed, "Base seed; case i uses a derived stream")
        ->capture_default_str();
    phantom_cmd->add_option("--out", phantom_opts.out, "Output directory")->required();
    phantom_cmd->add_option("--extents", phantom_opts.extents, "Volume extents DxHxW")
        ->capture_default_str();
    phantom_cmd->callback([&] { action = [&] { return cmd_phantom(phantom_opts); }; });

    PreprocessOpts pre_opts;
    auto* pre_cmd = app.add_subcommand(
        "preprocess", "Equalize, crop, and resample a directory of volumes (and masks)");
    pre_cmd->add_option("--in", pre_opts.in, "Input directory (default: $VSDR_DATA_ROOT)");
    pre_cmd->add_option("--out", pre_opts.out, "Output directory")->required();
    pre_cmd->add_option("--config", pre_opts.config, "Key-value parameter file");
    pre_opts.tiles_opt =
        pre_cmd->add_option("--tiles", pre_opts.tiles, "Equalization tile grid (square)");
    pre_opts.clip_opt =
        pre_cmd->add_option("--clip-limit", pre_opts.clip_limit, "Histogram clip multiplier");
    pre_opts.bins_opt = pre_cmd->add_option("--bins", pre_opts.bins, "Histogram bins");
    pre_cmd->add_option("--crop", pre_opts.crop, "Center-crop extents DxHxW");
    pre_cmd->add_option("--resample", pre_opts.resample, "Output extents DxHxW");
    pre_cmd->add_option("--jobs", pre_opts.jobs, "Parallel per-case workers")
        ->capture_default_str();
    pre_cmd->callback([&] { action = [&] { return cmd_preprocess(pre_opts); }; });

    SplitOpts split_opts;
    auto* split_cmd =
        app.add_subcommand("split", "Write a seeded test/fold assignment manifest");
    split_cmd->add_option("--ids", split_opts.ids_file, "Text file with one case id per line");
    split_cmd->add_option("--data", split_opts.data,
                          "Directory to enumerate case ids from (default: $VSDR_DATA_ROOT)");
    split_cmd->add_option("--test-fraction", split_opts.test_fraction, "Held-out fraction")
        ->capture_default_str();
    split_cmd->add_option("--k", split_opts.k, "Number of folds")->capture_default_str();
    split_cmd->add_option("--seed", split_opts.seed, "Shuffle seed")->capture_default_str();
    split_cmd->add_option("--out", split_opts.out, "Manifest path")->required();
    split_cmd->callback([&] { action = [&] { return cmd_split(split_opts); }; });

    TrainOpts train_opts;
    auto* train_cmd = app.add_subcommand("train", "Train one fold against its validation fold");
    train_cmd->add_option("--data", train_opts.data,
                          "Preprocessed case directory (default: $VSDR_DATA_ROOT)");
    train_cmd->add_option("--split", train_opts.split, "Split manifest")->required();
    train_cmd->add_option("--fold", train_opts.fold, "1-based validation fold")
        ->capture_default_str();
    train_cmd->add_option("--out", train_opts.out, "Artifact directory")->required();
    add_model_flags(train_cmd, train_opts.model);
    add_train_flags(train_cmd, train_opts.train);
    train_cmd->callback([&] {
        action = [&] {
            return train_opts.train.precision == 32 ? run_train<float>(train_opts)
                                                    : run_train<double>(train_opts);
        };
    });

    CvOpts cv_opts;
    auto* cv_cmd = app.add_subcommand(
        "cv", "Cross-validate: train every fold, evaluate the best model on the test cases");
    cv_cmd->add_option("--data", cv_opts.data,
                       "Preprocessed case directory (default: $VSDR_DATA_ROOT)");
    cv_cmd->add_option("--split", cv_opts.split, "Split manifest")->required();
    cv_cmd->add_option("--out", cv_opts.out, "Artifact directory")->required();
    add_model_flags(cv_cmd, cv_opts.model);
    add_train_flags(cv_cmd, cv_opts.train);
    cv_cmd->callback([&] {
        action = [&] {
            return cv_opts.train.precision == 32 ? run_cv<float>(cv_opts) : run_cv<double>(cv_opts);
        };
    });

    EvaluateOpts eval_opts;
    auto* eval_cmd =
        app.add_subcommand("evaluate", "Score a checkpoint against cases with known masks");
    eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "Model checkpoint")->required();
    eval_cmd->add_option("--data", eval_opts.data,
                         "Case directory (default: $VSDR_DATA_ROOT)");
    eval_cmd->add_option("--ids", eval_opts.ids_file, "Restrict to ids listed in this file");
    eval_cmd->add_option("--split", eval_opts.split, "Restrict to a split manifest role");
    eval_cmd->add_option("--role", eval_opts.role, "Role within --split (test, fold-k, train-k)")
        ->capture_default_str();
    eval_cmd->add_option("--out", eval_opts.out, "Report path (default: stdout)");
    eval_cmd->add_option("--threshold", eval_opts.threshold, "Binarization threshold")
        ->capture_default_str();
    eval_cmd->add_option("--jobs", eval_opts.jobs, "Parallel per-case workers")
        ->capture_default_str();
    eval_cmd->callback([&] { action = [&] { return cmd_evaluate(eval_opts); }; });

    PredictOpts predict_opts;
    auto* predict_cmd =
        app.add_subcommand("predict", "Segment one volume into a binary mask NRRD");
    predict_cmd->add_option("--checkpoint", predict_opts.checkpoint, "Model checkpoint")
        ->required();
    predict_cmd->add_option("--in", predict_opts.in, "Input volume")->required();
    predict_cmd->add_option("--out", predict_opts.out, "Output mask path")->required();
    predict_cmd->add_option("--threshold", predict_opts.threshold, "Binarization threshold")
        ->capture_default_str();
    predict_cmd->callback([&] { action = [&] { return cmd_predict(predict_opts); }; });

    uint64_t gradcheck_seed = 7;
    auto* grad_cmd = app.add_subcommand(
        "gradcheck", "Finite-difference audit of every layer and loss (exit 3 on failure)");
    grad_cmd->add_option("--seed", gradcheck_seed, "Input seed")->capture_default_str();
    grad_cmd->callback([&] { action = [&] { return cmd_gradcheck(gradcheck_seed); }; });

    uint64_t rf_seed = 7;
    std::vector<int64_t> rf_rates{1, 2, 3, 4};
    auto* rf_cmd = app.add_subcommand(
        "rfprobe", "Measure receptive-field extents of dilated convolutions empirically");
    rf_cmd->add_option("--seed", rf_seed, "Weight seed")->capture_default_str();
    rf_cmd->add_option("--rates", rf_rates, "Bottleneck dilation rates")
        ->delimiter(',')
        ->capture_default_str();
    rf_cmd->callback([&] { action = [&] { return cmd_rfprobe(rf_seed, rf_rates); }; });

    std::string pc_variant = "both";
    int64_t pc_channels = 24, pc_levels = 3;
    std::vector<int64_t> pc_rates{1, 2, 3, 4};
    auto* pc_cmd =
        app.add_subcommand("paramcount", "Print per-layer and total parameter counts");
    pc_cmd->add_option("--variant", pc_variant, "Variant, or 'both' for a comparison")
        ->check(CLI::IsMember({"unet_dr", "baseline_unet", "both"}))
        ->capture_default_str();
    pc_cmd->add_option("--base-channels", pc_channels, "Channels of the first encoder block")
        ->capture_default_str();
    pc_cmd->add_option("--levels", pc_levels, "Number of resolution halvings")
        ->capture_default_str();
    pc_cmd->add_option("--rates", pc_rates, "Bottleneck dilation rates")
        ->delimiter(',')
        ->capture_default_str();
    pc_cmd->callback(
        [&] { action = [&] { return cmd_paramcount(pc_variant, pc_channels, pc_levels, pc_rates); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        return action ? action() : 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
