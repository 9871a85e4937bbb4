#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "support/temp_dir.hpp"
#include "vsdr/nrrd.hpp"
#include "vsdr/phantom.hpp"
#include "vsdr/rng.hpp"
#include "vsdr/split.hpp"

using namespace vsdr;
using vsdr_test::TempDir;

namespace {

void write_bytes(const std::string& path, const std::string& text,
                 const std::vector<unsigned char>& payload) {
    std::ofstream out(path, std::ios::binary);
    out.write(text.data(), std::streamsize(text.size()));
    out.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size()));
}

}  // namespace

TEST_CASE("nrrd header parsing") {
    SECTION("scanner-shaped header maps fastest-first sizes to internal (D,H,W)") {
        const auto h = parse_nrrd_header(
            "NRRD0004\n"
            "dimension: 3\n"
            "sizes: 640 640 88\n"
            "type: short\n"
            "encoding: raw\n"
            "endian: little\n"
            "spacings: 0.7 0.8 2.5\n"
            "\n");
        REQUIRE(h.extents == std::array<int64_t, 3>{88, 640, 640});
        REQUIRE(h.spacing == std::array<double, 3>{2.5, 0.8, 0.7});
        REQUIRE(h.type == NrrdType::short_);
        REQUIRE(h.encoding == NrrdEncoding::raw);
        REQUIRE_FALSE(h.big_endian);
        REQUIRE(h.payload_bytes() == 88 * 640 * 640 * 2);
        REQUIRE(h.warnings.empty());
    }
    SECTION("space directions provide per-axis spacing") {
        const auto h = parse_nrrd_header(
            "NRRD0004\ndimension: 3\nsizes: 4 5 6\ntype: float\nencoding: gzip\n"
            "space directions: (0.7,0,0) (0,0.8,0) (0,0,2.5)\n\n");
        REQUIRE(h.spacing == std::array<double, 3>{2.5, 0.8, 0.7});
        REQUIRE(h.encoding == NrrdEncoding::gzip);
    }
    SECTION("unknown fields and key-value pairs are warnings, not errors") {
        const auto h = parse_nrrd_header(
            "NRRD0004\ndimension: 3\nsizes: 2 2 2\ntype: uchar\nencoding: raw\n"
            "content: something\nmodality:=MRI\n\n");
        REQUIRE(h.warnings.size() == 2);
    }
    SECTION("missing magic") {
        REQUIRE_THROWS_WITH(parse_nrrd_header("NRRD00x\n"),
                            Catch::Matchers::ContainsSubstring("magic"));
        REQUIRE_THROWS_AS(parse_nrrd_header(""), IoError);
    }
    SECTION("missing required fields are named") {
        REQUIRE_THROWS_WITH(
            parse_nrrd_header("NRRD0004\nsizes: 2 2 2\ntype: uchar\nencoding: raw\n\n"),
            Catch::Matchers::ContainsSubstring("dimension"));
        REQUIRE_THROWS_WITH(
            parse_nrrd_header("NRRD0004\ndimension: 3\ntype: uchar\nencoding: raw\n\n"),
            Catch::Matchers::ContainsSubstring("sizes"));
        REQUIRE_THROWS_WITH(
            parse_nrrd_header("NRRD0004\ndimension: 3\nsizes: 2 2 2\nencoding: raw\n\n"),
            Catch::Matchers::ContainsSubstring("'type'"));
        REQUIRE_THROWS_WITH(
            parse_nrrd_header("NRRD0004\ndimension: 3\nsizes: 2 2 2\ntype: uchar\n\n"),
            Catch::Matchers::ContainsSubstring("encoding"));
    }
    SECTION("unsupported tokens list the supported set") {
        REQUIRE_THROWS_WITH(
            parse_nrrd_header("NRRD0004\ndimension: 3\nsizes: 2 2 2\ntype: double\n"
                              "encoding: raw\n\n"),
            Catch::Matchers::ContainsSubstring("uchar, short, ushort, float"));
        REQUIRE_THROWS_WITH(
            parse_nrrd_header("NRRD0004\ndimension: 3\nsizes: 2 2 2\ntype: uchar\n"
                              "encoding: ascii\n\n"),
            Catch::Matchers::ContainsSubstring("raw, gzip"));
    }
    SECTION("dimension / sizes consistency") {
        REQUIRE_THROWS_WITH(
            parse_nrrd_header("NRRD0004\ndimension: 3\nsizes: 88 640\ntype: short\n"
                              "encoding: raw\n\n"),
            Catch::Matchers::ContainsSubstring("sizes lists 2"));
        REQUIRE_THROWS_WITH(
            parse_nrrd_header("NRRD0004\ndimension: 2\nsizes: 4 4\ntype: short\n"
                              "encoding: raw\n\n"),
            Catch::Matchers::ContainsSubstring("dimension 3"));
    }
}

TEST_CASE("nrrd header fuzzing never crashes") {
    Rng rng(0xF022);
    const std::string valid =
        "NRRD0004\ndimension: 3\nsizes: 2 3 4\ntype: short\nencoding: raw\nendian: little\n\n";
    int parsed = 0, rejected = 0;
    for (int rep = 0; rep < 10000; ++rep) {
        std::string text;
        if (rep % 2 == 0) {
            // Random bytes, sometimes behind a valid magic.
            const size_t len = rng.uniform_int(200);
            text.reserve(len + 8);
            if (rep % 4 == 0) text = "NRRD0004\n";
            for (size_t i = 0; i < len; ++i)
                text.push_back(static_cast<char>(rng.uniform_int(256)));
        } else {
            // Mutations of a valid header.
            text = valid;
            const int flips = 1 + int(rng.uniform_int(6));
            for (int f = 0; f < flips; ++f)
                text[rng.uniform_int(text.size())] = static_cast<char>(rng.uniform_int(256));
        }
        try {
            (void)parse_nrrd_header(text);
            ++parsed;
        } catch (const Error&) {
            ++rejected;
        }
        // Anything else (segfault, std::exception, ...) fails the test.
    }
    REQUIRE(parsed + rejected == 10000);
    REQUIRE(rejected > 0);
}

TEST_CASE("nrrd hand-written short fixture decodes exactly") {
    TempDir tmp;
    const std::vector<int> values{-3, 7, 256, -300, 0, 1, 32767, -32768};
    // Little-endian two's-complement bytes for the values above.
    const std::vector<unsigned char> le{0xFD, 0xFF, 0x07, 0x00, 0x00, 0x01, 0xD4, 0xFE,
                                        0x00, 0x00, 0x01, 0x00, 0xFF, 0x7F, 0x00, 0x80};
    write_bytes(tmp.file("le.nrrd"),
                "NRRD0004\ndimension: 3\nsizes: 2 2 2\ntype: short\nencoding: raw\n"
                "endian: little\n\n",
                le);
    const auto v = read_volume<double>(tmp.file("le.nrrd"), VolumeKind::intensity);
    REQUIRE(v.extents == std::array<int64_t, 3>{2, 2, 2});
    for (int i = 0; i < 8; ++i) REQUIRE(v.data[size_t(i)] == double(values[size_t(i)]));

    // The same scalars big-endian: every byte pair swaps.
    std::vector<unsigned char> be(16);
    for (int i = 0; i < 8; ++i) {
        be[size_t(2 * i)] = le[size_t(2 * i + 1)];
        be[size_t(2 * i + 1)] = le[size_t(2 * i)];
    }
    write_bytes(tmp.file("be.nrrd"),
                "NRRD0004\ndimension: 3\nsizes: 2 2 2\ntype: short\nencoding: raw\n"
                "endian: big\n\n",
                be);
    const auto w = read_volume<double>(tmp.file("be.nrrd"), VolumeKind::intensity);
    REQUIRE(w.data == v.data);
}

TEST_CASE("nrrd round trips are bit-exact for every supported configuration") {
    TempDir tmp;
    Rng rng(55);
    auto fill = [&](Volume<float>& v, NrrdType t) {
        for (auto& x : v.data) {
            switch (t) {
                case NrrdType::uchar_: x = float(rng.uniform_int(256)); break;
                case NrrdType::short_: x = float(int64_t(rng.uniform_int(65536)) - 32768); break;
                case NrrdType::ushort_: x = float(rng.uniform_int(65536)); break;
                case NrrdType::float_: x = float(rng.uniform(-100.0, 100.0)); break;
            }
        }
    };
    int case_no = 0;
    for (NrrdType t :
         {NrrdType::uchar_, NrrdType::short_, NrrdType::ushort_, NrrdType::float_}) {
        for (NrrdEncoding enc : {NrrdEncoding::raw, NrrdEncoding::gzip}) {
            for (bool big : {false, true}) {
                for (bool detached : {false, true}) {
                    CAPTURE(int(t), int(enc), big, detached);
                    auto v = make_volume<float>({3, 4, 5});
                    v.spacing = {0.625, 0.9765625, 1.0 / 3.0};
                    fill(v, t);
                    NrrdWriteOptions opt;
                    opt.type = t;
                    opt.encoding = enc;
                    opt.big_endian = big;
                    const std::string name = "rt" + std::to_string(case_no++) + ".nrrd";
                    if (detached) opt.detached_data_file = name + ".data";
                    write_volume(tmp.file(name), v, opt);
                    const auto r = read_volume<float>(tmp.file(name), VolumeKind::intensity);
                    REQUIRE(r.extents == v.extents);
                    REQUIRE(r.spacing == v.spacing);
                    REQUIRE(r.data == v.data);
                }
            }
        }
    }
}

TEST_CASE("nrrd double-buffer round trip through float payloads") {
    TempDir tmp;
    auto v = make_volume<double>({2, 3, 4});
    Rng rng(7);
    for (auto& x : v.data) x = double(float(rng.uniform(-5.0, 5.0)));  // float-exact values
    write_volume(tmp.file("d.nrrd"), v, {});
    const auto r = read_volume<double>(tmp.file("d.nrrd"), VolumeKind::intensity);
    REQUIRE(r.data == v.data);
}

TEST_CASE("nrrd write rejects unrepresentable values") {
    TempDir tmp;
    auto v = make_volume<double>({1, 1, 2});
    NrrdWriteOptions opt;

    v.data = {0.0, 0.5};
    opt.type = NrrdType::short_;
    REQUIRE_THROWS_WITH(write_volume(tmp.file("x.nrrd"), v, opt),
                        Catch::Matchers::ContainsSubstring("short"));
    v.data = {-1.0, 3.0};
    opt.type = NrrdType::uchar_;
    REQUIRE_THROWS_WITH(write_volume(tmp.file("x.nrrd"), v, opt),
                        Catch::Matchers::ContainsSubstring("index 0"));
    v.data = {1.0, 70000.0};
    opt.type = NrrdType::ushort_;
    REQUIRE_THROWS_AS(write_volume(tmp.file("x.nrrd"), v, opt), ValueError);
    v.data = {std::nan(""), 0.0};
    opt.type = NrrdType::short_;
    REQUIRE_THROWS_AS(write_volume(tmp.file("x.nrrd"), v, opt), ValueError);
}

TEST_CASE("nrrd payload damage is reported with byte counts") {
    TempDir tmp;
    auto v = make_volume<float>({2, 3, 4});
    Rng rng(3);
    for (auto& x : v.data) x = float(rng.uniform(0.0, 10.0));

    SECTION("truncated raw payload") {
        write_volume(tmp.file("t.nrrd"), v, {});
        const auto full = std::filesystem::file_size(tmp.file("t.nrrd"));
        std::filesystem::resize_file(tmp.file("t.nrrd"), full - 3);
        REQUIRE_THROWS_WITH(read_volume<float>(tmp.file("t.nrrd"), VolumeKind::intensity),
                            Catch::Matchers::ContainsSubstring("expected 96") &&
                                Catch::Matchers::ContainsSubstring("93"));
    }
    SECTION("trailing bytes") {
        write_volume(tmp.file("t.nrrd"), v, {});
        std::ofstream app(tmp.file("t.nrrd"), std::ios::binary | std::ios::app);
        app << 'x';
        app.close();
        REQUIRE_THROWS_AS(read_volume<float>(tmp.file("t.nrrd"), VolumeKind::intensity), IoError);
    }
    SECTION("corrupted gzip payload") {
        NrrdWriteOptions opt;
        opt.encoding = NrrdEncoding::gzip;
        write_volume(tmp.file("g.nrrd"), v, opt);
        const auto sz = std::filesystem::file_size(tmp.file("g.nrrd"));
        std::fstream f(tmp.file("g.nrrd"), std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(std::streamoff(sz) - 20);
        f.put('\x55');
        f.put('\xAA');
        f.close();
        REQUIRE_THROWS_AS(read_volume<float>(tmp.file("g.nrrd"), VolumeKind::intensity), IoError);
    }
    SECTION("missing detached data file") {
        NrrdWriteOptions opt;
        opt.detached_data_file = "payload.raw";
        write_volume(tmp.file("h.nrrd"), v, opt);
        std::filesystem::remove(tmp.file("payload.raw"));
        REQUIRE_THROWS_WITH(read_volume<float>(tmp.file("h.nrrd"), VolumeKind::intensity),
                            Catch::Matchers::ContainsSubstring("detached"));
    }
    SECTION("missing file") {
        REQUIRE_THROWS_AS(read_volume<float>(tmp.file("nope.nrrd"), VolumeKind::intensity),
                          IoError);
    }
}

TEST_CASE("nrrd mask reads enforce binarity") {
    TempDir tmp;
    auto v = make_volume<float>({1, 1, 4});
    v.data = {0, 1, 2, 1};
    NrrdWriteOptions opt;
    opt.type = NrrdType::uchar_;
    write_volume(tmp.file("m.nrrd"), v, opt);
    REQUIRE_THROWS_WITH(read_volume<float>(tmp.file("m.nrrd"), VolumeKind::mask),
                        Catch::Matchers::ContainsSubstring("non-binary"));
    v.data = {0, 1, 0, 1};
    write_volume(tmp.file("m.nrrd"), v, opt);
    const auto m = read_volume<float>(tmp.file("m.nrrd"), VolumeKind::mask);
    REQUIRE(m.kind == VolumeKind::mask);
}

TEST_CASE("phantom generation") {
    const std::array<int64_t, 3> ext{16, 24, 24};
    SECTION("same seed is bit-identical; different seeds differ") {
        const auto a = generate_phantom<double>(42, ext);
        const auto b = generate_phantom<double>(42, ext);
        REQUIRE(a.image.data == b.image.data);
        REQUIRE(a.mask.data == b.mask.data);
        const auto c = generate_phantom<double>(43, ext);
        REQUIRE(a.image.data != c.image.data);
    }
    SECTION("foreground fraction within bounds over 100 seeds, masks binary") {
        PhantomParams p;
        for (uint64_t seed = 0; seed < 100; ++seed) {
            const auto ph = generate_phantom<float>(seed, ext, p);
            int64_t fg = 0;
            for (float x : ph.mask.data) {
                REQUIRE((x == 0.0f || x == 1.0f));
                fg += x == 1.0f;
            }
            const double frac = double(fg) / double(ph.mask.numel());
            REQUIRE(frac >= p.fg_lo);
            REQUIRE(frac <= p.fg_hi);
        }
    }
    SECTION("no noise and no bias gives a two-valued image aligned with the mask") {
        PhantomParams p;
        p.noise_sigma = 0.0;
        p.bias_amplitude = 0.0;
        const auto ph = generate_phantom<double>(7, ext, p);
        for (int64_t i = 0; i < ph.image.numel(); ++i) {
            const double expect = ph.mask.data[size_t(i)] == 1.0 ? p.base_level + p.contrast
                                                                 : p.base_level;
            REQUIRE(ph.image.data[size_t(i)] == expect);
        }
    }
    SECTION("small extents are rejected") {
        REQUIRE_THROWS_AS(generate_phantom<double>(1, {15, 24, 24}), ShapeError);
    }
    SECTION("parameters that empty the mask raise an error") {
        PhantomParams p;
        p.radius_lo = 1e-4;
        p.radius_hi = 2e-4;
        p.veins_min = p.veins_max = 0;
        p.fg_lo = 1e-7;  // bounds permissive; geometry itself is the problem
        p.max_attempts = 3;
        REQUIRE_THROWS_WITH(generate_phantom<double>(1, {16, 16, 16}, p),
                            Catch::Matchers::ContainsSubstring("empty"));
    }
    SECTION("unreachable fraction bounds raise an error naming the fraction") {
        PhantomParams p;
        p.fg_lo = 1e-6;
        p.fg_hi = 1e-5;
        p.max_attempts = 2;
        REQUIRE_THROWS_WITH(generate_phantom<double>(1, {16, 16, 16}, p),
                            Catch::Matchers::ContainsSubstring("outside"));
    }
}

TEST_CASE("dataset split shapes and determinism") {
    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "case%03d", i);
        ids.push_back(buf);
    }
    const auto s = make_split(ids, 0.2, 5, 42);
    REQUIRE(s.test_ids.size() == 20);
    REQUIRE(s.k() == 5);
    for (const auto& f : s.folds) REQUIRE(f.size() == 16);
    for (int64_t i = 0; i < 5; ++i) REQUIRE(s.train_ids(i).size() == 64);

    const auto s2 = make_split(ids, 0.2, 5, 42);
    REQUIRE(s2.test_ids == s.test_ids);
    REQUIRE(s2.folds == s.folds);

    SECTION("train/validation/test are disjoint and cover everything") {
        std::set<std::string> all(s.test_ids.begin(), s.test_ids.end());
        for (const auto& f : s.folds)
            for (const auto& id : f) REQUIRE(all.insert(id).second);
        REQUIRE(all.size() == ids.size());
        const auto train0 = s.train_ids(0);
        std::set<std::string> t0(train0.begin(), train0.end());
        for (const auto& id : s.folds[0]) REQUIRE_FALSE(t0.count(id));
        for (const auto& id : s.test_ids) REQUIRE_FALSE(t0.count(id));
    }
}

TEST_CASE("dataset split partition property over a parameter grid") {
    for (int64_t n : {6, 7, 23, 100, 101}) {
        for (int64_t k : {2, 3, 5}) {
            for (uint64_t seed : {1u, 7u}) {
                if (n < k + 1) continue;
                CAPTURE(n, k, seed);
                std::vector<std::string> ids;
                for (int64_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i));
                const auto s = make_split(ids, 0.2, k, seed);
                REQUIRE(int64_t(s.test_ids.size()) == int64_t(double(n) * 0.2 + 1e-9));
                REQUIRE(s.k() == k);
                std::multiset<std::string> all(s.test_ids.begin(), s.test_ids.end());
                size_t fold_min = SIZE_MAX, fold_max = 0;
                for (const auto& f : s.folds) {
                    fold_min = std::min(fold_min, f.size());
                    fold_max = std::max(fold_max, f.size());
                    all.insert(f.begin(), f.end());
                }
                REQUIRE(fold_max - fold_min <= 1);
                REQUIRE(all.size() == ids.size());
                REQUIRE(std::multiset<std::string>(ids.begin(), ids.end()) == all);
            }
        }
    }
}

TEST_CASE("dataset split validation errors") {
    std::vector<std::string> five{"a", "b", "c", "d", "e"};
    REQUIRE_THROWS_WITH(make_split(five, 0.2, 5, 1),
                        Catch::Matchers::ContainsSubstring("at least 6"));
    REQUIRE_THROWS_AS(make_split({"a", "b", "a", "c", "d", "e"}, 0.2, 2, 1), ValueError);
    REQUIRE_THROWS_AS(make_split(five, 1.0, 2, 1), ValueError);
    REQUIRE_THROWS_AS(make_split(five, -0.1, 2, 1), ValueError);
    REQUIRE_THROWS_AS(make_split(five, 0.2, 0, 1), ValueError);
    // 9 cases, fraction 0.5 -> 4 test, 5 remain, k=6 folds impossible.
    std::vector<std::string> nine;
    for (int i = 0; i < 9; ++i) nine.push_back("n" + std::to_string(i));
    REQUIRE_THROWS_AS(make_split(nine, 0.5, 6, 1), ValueError);
}

TEST_CASE("split manifest round trip") {
    std::vector<std::string> ids;
    for (int i = 0; i < 23; ++i) ids.push_back("case" + std::to_string(i));
    const auto s = make_split(ids, 0.2, 3, 9);

    std::ostringstream out;
    write_split_manifest(s, out);
    const std::string text = out.str();
    REQUIRE(text.rfind("split seed=9 folds=3\n", 0) == 0);

    std::istringstream in(text);
    const auto r = read_split_manifest(in, "manifest");
    REQUIRE(r.seed == s.seed);
    REQUIRE(r.test_ids == s.test_ids);
    REQUIRE(r.folds == s.folds);

    SECTION("malformed manifests are rejected") {
        std::istringstream bad_header("nonsense\n");
        REQUIRE_THROWS_AS(read_split_manifest(bad_header, "m"), IoError);
        std::istringstream bad_role("split seed=1 folds=2\nx\ttest\ny\tvalidation\n");
        REQUIRE_THROWS_WITH(read_split_manifest(bad_role, "m"),
                            Catch::Matchers::ContainsSubstring("validation"));
        std::istringstream bad_fold("split seed=1 folds=2\nx\tfold-3\n");
        REQUIRE_THROWS_AS(read_split_manifest(bad_fold, "m"), IoError);
        std::istringstream dup("split seed=1 folds=1\nx\ttest\nx\tfold-1\n");
        REQUIRE_THROWS_WITH(read_split_manifest(dup, "m"),
                            Catch::Matchers::ContainsSubstring("duplicate"));
        std::istringstream empty_fold("split seed=1 folds=2\nx\tfold-1\ny\tfold-1\n");
        REQUIRE_THROWS_AS(read_split_manifest(empty_fold, "m"), IoError);
    }
    SECTION("file-backed round trip") {
        TempDir tmp;
        write_split_manifest(s, tmp.file("split.tsv"));
        const auto fr = read_split_manifest(tmp.file("split.tsv"));
        REQUIRE(fr.folds == s.folds);
        REQUIRE_THROWS_AS(read_split_manifest(tmp.file("missing.tsv")), IoError);
    }
}

TEST_CASE("phantom volumes survive the file round trip") {
    TempDir tmp;
    const auto ph = generate_phantom<float>(5, {16, 16, 16});
    write_volume(tmp.file("img.nrrd"), ph.image, {});
    NrrdWriteOptions mopt;
    mopt.type = NrrdType::uchar_;
    write_volume(tmp.file("msk.nrrd"), ph.mask, mopt);
    const auto img = read_volume<float>(tmp.file("img.nrrd"), VolumeKind::intensity);
    const auto msk = read_volume<float>(tmp.file("msk.nrrd"), VolumeKind::mask);
    REQUIRE(img.data == ph.image.data);
    REQUIRE(msk.data == ph.mask.data);
}
