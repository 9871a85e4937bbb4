#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "support/temp_dir.hpp"
#include "vsdr/adam.hpp"
#include "vsdr/checkpoint.hpp"
#include "vsdr/dataset.hpp"
#include "vsdr/ops.hpp"
#include "vsdr/train.hpp"

using namespace vsdr;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using T64 = Tensor<double>;

namespace {

// Straight-line single-scalar Adam reference, written directly from the
// update rule. Shares no code with the library optimizer.
struct ScalarAdamRef {
    double m = 0, v = 0;
    int64_t t = 0;
    double step(double p, double g, double lr = 0.001, double b1 = 0.9, double b2 = 0.999,
                double eps = 1e-8) {
        ++t;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        const double mhat = m / (1.0 - std::pow(b1, static_cast<double>(t)));
        const double vhat = v / (1.0 - std::pow(b2, static_cast<double>(t)));
        return p - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

struct NamedParam {
    std::string name;
    T64 tensor;
};

// Populates p.grad = g exactly by differentiating sum(p * g).
void push_gradient(T64& p, const std::vector<double>& g) {
    auto c = T64::from_data(p.shape(), g);
    auto loss = sum(mul(p, c));
    backward(loss);
}

NetworkConfig tiny_config(int64_t levels = 2) {
    NetworkConfig cfg;
    cfg.variant = Variant::unet_dr;
    cfg.base_channels = 2;
    cfg.levels = levels;
    cfg.dilation_rates = {1, 2};
    return cfg;
}

std::vector<std::vector<double>> param_values(Model<double>& m) {
    std::vector<std::vector<double>> out;
    for (const auto& p : m.parameters())
        out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    return out;
}

}  // namespace

TEST_CASE("adam matches a scalar reference over five steps") {
    const std::vector<std::vector<std::vector<double>>> grads = {
        {{0.5, -0.3, 0.0}},  {{0.2, 0.2, -1.5}}, {{-0.7, 0.05, 2.0}},
        {{0.31, -0.9, 0.4}}, {{0.0, 1.1, -0.2}},
    };
    std::vector<NamedParam> params{{"w", T64::from_data({3}, {1.0, -2.0, 0.5}, true)}};
    AdamState<double> st;

    double ref_p[3] = {1.0, -2.0, 0.5};
    ScalarAdamRef ref[3];
    for (const auto& step_grads : grads) {
        push_gradient(params[0].tensor, step_grads[0]);
        adam_step(params, st);
        params[0].tensor.zero_grad();
        for (int j = 0; j < 3; ++j) ref_p[j] = ref[j].step(ref_p[j], step_grads[0][j]);

        auto vals = params[0].tensor.values();
        for (int j = 0; j < 3; ++j) {
            CHECK(vals[j] == ref_p[j]);
            CHECK(st.m[0][j] == ref[j].m);
            CHECK(st.v[0][j] == ref[j].v);
        }
    }
    CHECK(st.t == 5);
}

TEST_CASE("adam first-step fixtures") {
    SECTION("gradient 0.5 from 1.0 lands near 0.999") {
        std::vector<NamedParam> params{{"w", T64::from_data({1}, {1.0}, true)}};
        AdamState<double> st;
        push_gradient(params[0].tensor, {0.5});
        adam_step(params, st);
        // First step magnitude is ~lr regardless of gradient scale.
        REQUIRE_THAT(params[0].tensor.values()[0], WithinAbs(0.999, 1e-6));
        CHECK(params[0].tensor.values()[0] < 1.0);
    }
    SECTION("zero gradient leaves the parameter bit-identical") {
        std::vector<NamedParam> params{{"w", T64::from_data({2}, {0.125, -3.5}, true)}};
        AdamState<double> st;
        push_gradient(params[0].tensor, {0.0, 0.0});
        adam_step(params, st);
        CHECK(params[0].tensor.values()[0] == 0.125);
        CHECK(params[0].tensor.values()[1] == -3.5);
        CHECK(st.t == 1);
        CHECK(st.m[0][0] == 0.0);
        CHECK(st.v[0][1] == 0.0);
    }
    SECTION("step opposes the gradient sign") {
        std::vector<NamedParam> params{{"w", T64::from_data({2}, {1.0, 1.0}, true)}};
        AdamState<double> st;
        push_gradient(params[0].tensor, {2.0, -2.0});
        adam_step(params, st);
        CHECK(params[0].tensor.values()[0] < 1.0);
        CHECK(params[0].tensor.values()[1] > 1.0);
    }
}

TEST_CASE("adam validates every gradient before mutating anything") {
    SECTION("missing gradient") {
        std::vector<NamedParam> params{{"w", T64::from_data({1}, {1.0}, true)}};
        AdamState<double> st;
        REQUIRE_THROWS_MATCHES(adam_step(params, st), ValueError,
                               Catch::Matchers::MessageMatches(
                                   ContainsSubstring("'w' has no gradient")));
        CHECK(params[0].tensor.values()[0] == 1.0);
        CHECK(st.t == 0);
    }
    SECTION("non-finite gradient in the second parameter leaves the first untouched") {
        std::vector<NamedParam> params{{"a", T64::from_data({1}, {1.0}, true)},
                                       {"b", T64::from_data({1}, {2.0}, true)}};
        AdamState<double> st;
        push_gradient(params[0].tensor, {0.5});
        push_gradient(params[1].tensor, {std::numeric_limits<double>::quiet_NaN()});
        REQUIRE_THROWS_MATCHES(adam_step(params, st), NumericError,
                               Catch::Matchers::MessageMatches(ContainsSubstring(
                                   "non-finite gradient in parameter 'b'")));
        CHECK(params[0].tensor.values()[0] == 1.0);
        CHECK(params[1].tensor.values()[0] == 2.0);
        CHECK(st.t == 0);

        // Infinity is rejected the same way.
        params[1].tensor.zero_grad();
        push_gradient(params[1].tensor, {std::numeric_limits<double>::infinity()});
        REQUIRE_THROWS_AS(adam_step(params, st), NumericError);
    }
    SECTION("parameter list mismatches") {
        std::vector<NamedParam> two{{"a", T64::from_data({1}, {1.0}, true)},
                                    {"b", T64::from_data({1}, {2.0}, true)}};
        AdamState<double> st;
        push_gradient(two[0].tensor, {0.1});
        push_gradient(two[1].tensor, {0.1});
        adam_step(two, st);

        std::vector<NamedParam> one{two[0]};
        REQUIRE_THROWS_MATCHES(
            adam_step(one, st), ShapeError,
            Catch::Matchers::MessageMatches(ContainsSubstring("state tracks 2")));

        std::vector<NamedParam> resized{{"a", T64::from_data({2}, {1.0, 1.0}, true)},
                                        {"b", two[1].tensor}};
        push_gradient(resized[0].tensor, {0.1, 0.1});
        REQUIRE_THROWS_MATCHES(adam_step(resized, st), ShapeError,
                               Catch::Matchers::MessageMatches(
                                   ContainsSubstring("size mismatch for parameter 'a'")));
    }
}

TEST_CASE("optimizer state round-trips through its sidecar file") {
    vsdr_test::TempDir td;
    std::vector<NamedParam> params{{"a", T64::from_data({2}, {1.0, 2.0}, true)},
                                   {"b", T64::from_data({3}, {0.5, -0.5, 4.0}, true)}};
    AdamState<double> st;
    st.lr = 0.01;
    Rng rng(99);
    for (int step = 0; step < 3; ++step) {
        push_gradient(params[0].tensor, {rng.normal(), rng.normal()});
        push_gradient(params[1].tensor, {rng.normal(), rng.normal(), rng.normal()});
        adam_step(params, st);
        for (auto& p : params) p.tensor.zero_grad();
    }

    const std::string path = td.file("state.opt");
    save_adam_state(st, params, path);
    const AdamState<double> back = load_adam_state<double>(path, params);
    CHECK(back.t == 3);
    CHECK(back.lr == st.lr);
    CHECK(back.beta1 == st.beta1);
    CHECK(back.beta2 == st.beta2);
    CHECK(back.eps == st.eps);
    REQUIRE(back.m == st.m);
    REQUIRE(back.v == st.v);

    SECTION("trailing bytes are rejected") {
        std::ofstream(path, std::ios::binary | std::ios::app) << 'x';
        REQUIRE_THROWS_MATCHES(load_adam_state<double>(path, params), IoError,
                               Catch::Matchers::MessageMatches(
                                   ContainsSubstring("trailing bytes")));
    }
    SECTION("entry order is strict") {
        std::vector<NamedParam> reversed{params[1], params[0]};
        REQUIRE_THROWS_MATCHES(load_adam_state<double>(path, reversed), IoError,
                               Catch::Matchers::MessageMatches(
                                   ContainsSubstring("expected entry 'b.m'")));
    }
    SECTION("entry extents must match the parameter") {
        std::vector<NamedParam> resized{params[0],
                                        {"b", T64::from_data({4}, {1.0, 1.0, 1.0, 1.0}, true)}};
        REQUIRE_THROWS_MATCHES(
            load_adam_state<double>(path, resized), IoError,
            Catch::Matchers::MessageMatches(ContainsSubstring("wrong extent")));
    }
    SECTION("parameter count must match") {
        std::vector<NamedParam> one{params[0]};
        REQUIRE_THROWS_MATCHES(load_adam_state<double>(path, one), IoError,
                               Catch::Matchers::MessageMatches(
                                   ContainsSubstring("tracks 2 parameters, model has 1")));
    }
    SECTION("scalar width must match the build") {
        using T32 = Tensor<float>;
        struct NamedParam32 {
            std::string name;
            T32 tensor;
        };
        std::vector<NamedParam32> p32{{"a", T32::from_data({2}, {1.f, 2.f}, true)},
                                      {"b", T32::from_data({3}, {1.f, 1.f, 1.f}, true)}};
        AdamState<float> st32;
        st32.m = {{0.f, 0.f}, {0.f, 0.f, 0.f}};
        st32.v = st32.m;
        st32.t = 1;
        const std::string p32path = td.file("state32.opt");
        save_adam_state(st32, p32, p32path);
        REQUIRE_THROWS_MATCHES(
            load_adam_state<double>(p32path, params), IoError,
            Catch::Matchers::MessageMatches(ContainsSubstring("32-bit scalars")));
    }
    SECTION("wrong magic and missing file") {
        const std::string bad = td.file("bad.opt");
        std::ofstream(bad, std::ios::binary) << "NOPE!rest";
        REQUIRE_THROWS_AS(load_adam_state<double>(bad, params), IoError);
        REQUIRE_THROWS_MATCHES(
            load_adam_state<double>(td.file("absent.opt"), params), IoError,
            Catch::Matchers::MessageMatches(ContainsSubstring("cannot open")));
    }
}

TEST_CASE("training config validation") {
    TrainConfig cfg;
    cfg.epochs = 0;
    REQUIRE_THROWS_AS(cfg.validate(), ValueError);
    cfg = {};
    cfg.batch = 0;
    REQUIRE_THROWS_AS(cfg.validate(), ValueError);
    cfg = {};
    cfg.start_epoch = 30;
    REQUIRE_THROWS_AS(cfg.validate(), ValueError);
    cfg = {};
    cfg.patience = -1;
    REQUIRE_THROWS_AS(cfg.validate(), ValueError);
    cfg = {};
    cfg.checkpoint_every = 5;  // no directory
    REQUIRE_THROWS_MATCHES(
        cfg.validate(), ValueError,
        Catch::Matchers::MessageMatches(ContainsSubstring("checkpoint directory")));
    cfg = {};
    cfg.save_best = true;  // no directory
    REQUIRE_THROWS_AS(cfg.validate(), ValueError);
}

TEST_CASE("one epoch over a phantom pair yields one finite log row") {
    auto cases = make_phantom_cases<double>(3, 11, {16, 16, 16});
    std::vector<Case<double>> train{cases[0], cases[1]}, val{cases[2]};
    Model<double> model = build_model<double>(tiny_config(), 5);
    AdamState<double> opt;
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 7;

    const auto res = train_fold(model, opt, train, val, cfg);
    REQUIRE(res.log.rows.size() == 1);
    const auto& r = res.log.rows[0];
    CHECK(r.epoch == 0);
    CHECK(std::isfinite(r.loss));
    REQUIRE_THAT(r.loss, WithinAbs(r.dice_term + r.bce_term, 1e-9));
    CHECK(r.dice_term > 0.0);
    CHECK(r.bce_term > 0.0);
    for (double m : {r.val_dc, r.val_ji, r.val_ac}) {
        CHECK(m >= 0.0);
        CHECK(m <= 1.0);
    }
    CHECK(res.best_epoch == 0);
    CHECK(res.best_val_dc == r.val_dc);
    CHECK(opt.t == 2);  // two single-case batches

    const std::string tsv = res.log.to_tsv();
    CHECK_THAT(tsv, ContainsSubstring("epoch\tloss\tdice\tbce\tval_dc\tval_ji\tval_ac\n"));
    CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 2);

    SECTION("training rejects overlapping or empty splits") {
        std::vector<Case<double>> overlap{cases[0]};
        REQUIRE_THROWS_MATCHES(
            train_fold(model, opt, train, overlap, cfg), ValueError,
            Catch::Matchers::MessageMatches(ContainsSubstring("both train and val")));
        std::vector<Case<double>> empty;
        REQUIRE_THROWS_AS(train_fold(model, opt, empty, val, cfg), ValueError);
        REQUIRE_THROWS_AS(train_fold(model, opt, train, empty, cfg), ValueError);
    }
    SECTION("training rejects mixed extents") {
        auto odd = make_phantom_cases<double>(1, 99, {16, 16, 24});
        std::vector<Case<double>> mixed{cases[0], odd[0]};
        REQUIRE_THROWS_MATCHES(
            train_fold(model, opt, mixed, val, cfg), ShapeError,
            Catch::Matchers::MessageMatches(ContainsSubstring("ph000")));
    }
}

TEST_CASE("log TSV formatting is fixed-width and deterministic") {
    TrainLog log;
    log.rows.push_back({3, 0.5, 0.25, 0.25, 0.875, 0.75, 0.9990001});
    CHECK(log.to_tsv() ==
          "epoch\tloss\tdice\tbce\tval_dc\tval_ji\tval_ac\n"
          "3\t0.500000000\t0.250000000\t0.250000000\t0.875000000\t0.750000000\t0.999000100\n");
}

TEST_CASE("identical seeds reproduce the run bit for bit") {
    auto cases = make_phantom_cases<double>(3, 21, {16, 16, 16});
    std::vector<Case<double>> train{cases[0], cases[1]}, val{cases[2]};
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 3;

    auto run = [&]() {
        Model<double> model = build_model<double>(tiny_config(), 17);
        AdamState<double> opt;
        auto res = train_fold(model, opt, train, val, cfg);
        return std::make_pair(param_values(model), res.log);
    };
    const auto a = run();
    const auto b = run();
    REQUIRE(a.first == b.first);
    REQUIRE(a.second.rows.size() == b.second.rows.size());
    for (size_t i = 0; i < a.second.rows.size(); ++i) {
        CHECK(a.second.rows[i].loss == b.second.rows[i].loss);
        CHECK(a.second.rows[i].val_dc == b.second.rows[i].val_dc);
    }
    CHECK(a.second.to_tsv() == b.second.to_tsv());
}

TEST_CASE("validation cases never influence the learned weights") {
    auto cases = make_phantom_cases<double>(4, 31, {16, 16, 16});
    std::vector<Case<double>> train{cases[0], cases[1]};
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 13;

    auto run = [&](const Case<double>& val_case) {
        Model<double> model = build_model<double>(tiny_config(), 23);
        AdamState<double> opt;
        std::vector<Case<double>> val{val_case};
        auto res = train_fold(model, opt, train, val, cfg);
        return std::make_pair(param_values(model), res.log.rows.back().val_dc);
    };
    const auto with_a = run(cases[2]);
    const auto with_b = run(cases[3]);
    REQUIRE(with_a.first == with_b.first);  // weights identical under either val set
    CHECK(with_a.second != with_b.second);  // metrics reflect the different cases
}

TEST_CASE("resuming from a checkpoint continues the exact trajectory") {
    vsdr_test::TempDir td;
    auto cases = make_phantom_cases<double>(3, 41, {16, 16, 16});
    std::vector<Case<double>> train{cases[0], cases[1]}, val{cases[2]};
    const NetworkConfig netcfg = tiny_config();

    TrainConfig full;
    full.epochs = 4;
    full.seed = 19;
    Model<double> continuous = build_model<double>(netcfg, 29);
    AdamState<double> opt_full;
    const auto full_res = train_fold(continuous, opt_full, train, val, full);

    TrainConfig half = full;
    half.epochs = 2;
    half.checkpoint_every = 2;
    half.checkpoint_dir = td.path.string();
    Model<double> first = build_model<double>(netcfg, 29);
    AdamState<double> opt_half;
    train_fold(first, opt_half, train, val, half, "run");

    Model<double> resumed = load_checkpoint<double>(td.file("run-last.vsdr"));
    AdamState<double> opt_resumed =
        load_adam_state<double>(td.file("run-last.opt"), resumed.parameters());
    CHECK(opt_resumed.t == opt_half.t);
    TrainConfig rest = full;
    rest.start_epoch = 2;
    const auto tail = train_fold(resumed, opt_resumed, train, val, rest);

    REQUIRE(param_values(continuous) == param_values(resumed));
    REQUIRE(tail.log.rows.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        const auto& a = full_res.log.rows[2 + i];
        const auto& b = tail.log.rows[i];
        CHECK(a.epoch == b.epoch);
        CHECK(a.loss == b.loss);
        CHECK(a.dice_term == b.dice_term);
        CHECK(a.bce_term == b.bce_term);
        CHECK(a.val_dc == b.val_dc);
        CHECK(a.val_ji == b.val_ji);
        CHECK(a.val_ac == b.val_ac);
    }
}

TEST_CASE("a non-finite loss aborts without clobbering the last checkpoint") {
    vsdr_test::TempDir td;
    auto cases = make_phantom_cases<double>(3, 51, {16, 16, 16});
    std::vector<Case<double>> train{cases[0], cases[1]}, val{cases[2]};

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 9;
    cfg.checkpoint_every = 1;
    cfg.checkpoint_dir = td.path.string();
    Model<double> model = build_model<double>(tiny_config(), 37);
    AdamState<double> opt;
    train_fold(model, opt, train, val, cfg, "run");

    // Capture the bytes of the good checkpoint, then poison a weight so the
    // next epoch's loss is non-finite.
    auto read_bytes = [](const std::string& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(is)),
                           std::istreambuf_iterator<char>());
    };
    const std::string ckpt = td.file("run-last.vsdr");
    const std::string before = read_bytes(ckpt);
    REQUIRE(!before.empty());

    model.head_w.mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
    TrainConfig more = cfg;
    more.epochs = 3;
    more.start_epoch = 2;
    REQUIRE_THROWS_MATCHES(train_fold(model, opt, train, val, more, "run"), NumericError,
                           Catch::Matchers::MessageMatches(ContainsSubstring(
                               "non-finite network output at epoch 2")));

    CHECK(read_bytes(ckpt) == before);
    Model<double> recovered = load_checkpoint<double>(ckpt);
    for (const auto& p : recovered.parameters())
        for (double v : p.tensor.values()) REQUIRE(std::isfinite(v));
}

TEST_CASE("training loss trends downward across seeds") {
    // One fixed case per seed, 20 optimizer steps; the final loss must beat
    // the initial loss in at least 19 of 20 runs.
    const int n_seeds = 20, steps = 20;
    int improved = 0;
    for (int s = 0; s < n_seeds; ++s) {
        auto cases = make_phantom_cases<double>(2, 1000 + uint64_t(s), {16, 16, 16});
        std::vector<Case<double>> train{cases[0]}, val{cases[1]};
        Model<double> model = build_model<double>(tiny_config(1), 2000 + uint64_t(s));
        AdamState<double> opt;
        TrainConfig cfg;
        cfg.epochs = steps;
        cfg.seed = 3000 + uint64_t(s);
        const auto res = train_fold(model, opt, train, val, cfg);
        REQUIRE(res.log.rows.size() == size_t(steps));
        if (res.log.rows.back().loss < res.log.rows.front().loss) ++improved;
    }
    INFO("improved " << improved << "/" << n_seeds);
    CHECK(improved >= 19);
}

TEST_CASE("early stopping respects patience") {
    auto cases = make_phantom_cases<double>(3, 61, {16, 16, 16});
    std::vector<Case<double>> train{cases[0], cases[1]}, val{cases[2]};
    Model<double> model = build_model<double>(tiny_config(), 43);
    AdamState<double> opt;
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.seed = 5;
    cfg.patience = 2;
    const auto res = train_fold(model, opt, train, val, cfg);
    REQUIRE(!res.log.rows.empty());
    const int64_t last = res.log.rows.back().epoch;
    CHECK(last < 30 - 1 + 1);  // stopped at or before the final epoch
    if (last < 29) CHECK(last - res.best_epoch == 2);
}

TEST_CASE("cross-validation yields per-fold and held-out reports") {
    auto cases = make_phantom_cases<double>(8, 71, {16, 16, 16});
    std::vector<std::string> ids;
    for (const auto& c : cases) ids.push_back(c.id);
    const DatasetSplit split = make_split(ids, 0.25, 2, 77);
    REQUIRE(split.test_ids.size() == 2);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 15;
    const CvResult res = cross_validate(tiny_config(), cases, split, cfg);

    REQUIRE(res.folds.size() == 2);
    REQUIRE(res.best_fold >= 0);
    REQUIRE(res.best_fold < 2);
    CHECK(res.test_report.per_case.size() == 2);
    for (const auto& f : res.folds) {
        CHECK(f.train_report.per_case.size() == 3);
        CHECK(f.val_report.per_case.size() == 3);
        CHECK(f.log.rows.size() == 2);
        CHECK(f.best_epoch >= 0);
    }

    // Every reported metric is a valid rate, and the overlap scores obey
    // the set identity ji = dc / (2 - dc) per case.
    auto check_report = [](const MetricsReport& rep) {
        for (const auto& row : rep.per_case) {
            for (double m : {row.m.dc, row.m.ji, row.m.ac}) {
                CHECK(m >= 0.0);
                CHECK(m <= 1.0);
            }
            REQUIRE_THAT(row.m.ji, WithinAbs(row.m.dc / (2.0 - row.m.dc), 1e-12));
        }
    };
    for (const auto& f : res.folds) {
        check_report(f.train_report);
        check_report(f.val_report);
    }
    check_report(res.test_report);

    const std::string table = res.table();
    CHECK_THAT(table, ContainsSubstring("split\tac\tdc\tji\n"));
    CHECK_THAT(table, ContainsSubstring("\ntrain\t"));
    CHECK_THAT(table, ContainsSubstring("\nvalidation\t"));
    CHECK_THAT(table, ContainsSubstring("\ntest\t"));
    CHECK_THAT(table, ContainsSubstring("best-epoch means across 2 folds"));

    SECTION("unknown ids in the split are reported") {
        DatasetSplit broken = split;
        broken.test_ids[0] = "ghost";
        REQUIRE_THROWS_MATCHES(
            cross_validate(tiny_config(), cases, broken, cfg), ValueError,
            Catch::Matchers::MessageMatches(ContainsSubstring("unknown case 'ghost'")));
    }
}
