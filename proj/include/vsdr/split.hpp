#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "vsdr/common.hpp"
#include "vsdr/rng.hpp"

namespace vsdr {

// Held-out test set plus k cross-validation folds over the remaining cases.
struct DatasetSplit {
    uint64_t seed = 0;
    std::vector<std::string> test_ids;
    std::vector<std::vector<std::string>> folds;

    int64_t k() const { return static_cast<int64_t>(folds.size()); }

    // Training cases for fold i: every non-test case outside fold i.
    std::vector<std::string> train_ids(int64_t fold) const {
        if (fold < 0 || fold >= k()) throw ValueError("split: fold index out of range");
        std::vector<std::string> out;
        for (int64_t j = 0; j < k(); ++j)
            if (j != fold)
                out.insert(out.end(), folds[static_cast<size_t>(j)].begin(),
                           folds[static_cast<size_t>(j)].end());
        return out;
    }

    void validate() const {
        if (folds.empty()) throw ValueError("split: no folds");
        std::set<std::string> seen;
        auto add = [&](const std::string& id) {
            if (!seen.insert(id).second) throw ValueError("split: duplicate case id '" + id + "'");
        };
        for (const auto& id : test_ids) add(id);
        for (const auto& f : folds) {
            if (f.empty()) throw ValueError("split: empty fold");
            for (const auto& id : f) add(id);
        }
    }
};

// Deterministic shuffle by seed; the first floor(n * test_fraction) cases
// become the held-out test set and the rest split into k near-equal folds
// (earlier folds take the remainder).
inline DatasetSplit make_split(std::vector<std::string> ids, double test_fraction, int64_t k,
                               uint64_t seed) {
    if (k < 1) throw ValueError("split: k must be >= 1");
    if (!(test_fraction >= 0.0) || test_fraction >= 1.0)
        throw ValueError("split: test fraction must be in [0, 1)");
    const int64_t n = static_cast<int64_t>(ids.size());
    if (n < k + 1)
        throw ValueError("split: need at least " + std::to_string(k + 1) + " cases for " +
                         std::to_string(k) + " folds, got " + std::to_string(n));
    {
        auto sorted = ids;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw ValueError("split: duplicate case ids");
    }

    Rng rng(derive_seed(seed, 0x5B117));
    rng.shuffle(ids);

    const int64_t n_test = static_cast<int64_t>(double(n) * test_fraction + 1e-9);
    const int64_t remaining = n - n_test;
    if (remaining < k)
        throw ValueError("split: only " + std::to_string(remaining) +
                         " cases remain after the test split; need >= " + std::to_string(k));

    DatasetSplit split;
    split.seed = seed;
    split.test_ids.assign(ids.begin(), ids.begin() + n_test);
    const int64_t base = remaining / k, extra = remaining % k;
    int64_t pos = n_test;
    for (int64_t i = 0; i < k; ++i) {
        const int64_t sz = base + (i < extra ? 1 : 0);
        split.folds.emplace_back(ids.begin() + pos, ids.begin() + pos + sz);
        pos += sz;
    }
    split.validate();
    return split;
}

// Manifest format: one header line "split seed=<seed> folds=<k>", then one
// "<id>\t<role>" row per case with role "test" or "fold-<i>" (1-based).
inline void write_split_manifest(const DatasetSplit& split, std::ostream& out) {
    out << "split seed=" << split.seed << " folds=" << split.folds.size() << "\n";
    for (const auto& id : split.test_ids) out << id << "\ttest\n";
    for (size_t i = 0; i < split.folds.size(); ++i)
        for (const auto& id : split.folds[i]) out << id << "\tfold-" << (i + 1) << "\n";
}

inline void write_split_manifest(const DatasetSplit& split, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot create split manifest: " + path);
    write_split_manifest(split, out);
    if (!out) throw IoError("failed writing split manifest: " + path);
}

inline DatasetSplit read_split_manifest(std::istream& in, const std::string& origin) {
    std::string line;
    if (!std::getline(in, line)) throw IoError(origin + ": empty split manifest");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    uint64_t seed = 0;
    long long k = 0;
    if (std::sscanf(line.c_str(), "split seed=%llu folds=%lld",
                    reinterpret_cast<unsigned long long*>(&seed), &k) != 2 ||
        k < 1)
        throw IoError(origin + ": malformed split header '" + line + "'");

    DatasetSplit split;
    split.seed = seed;
    split.folds.resize(static_cast<size_t>(k));
    int64_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw IoError(origin + " line " + std::to_string(line_no) +
                          ": expected '<id>\\t<role>'");
        const std::string id = detail::trim(line.substr(0, tab));
        const std::string role = detail::trim(line.substr(tab + 1));
        if (id.empty())
            throw IoError(origin + " line " + std::to_string(line_no) + ": empty case id");
        if (role == "test") {
            split.test_ids.push_back(id);
        } else if (role.rfind("fold-", 0) == 0) {
            const int64_t f = detail::parse_int(role.substr(5), origin + " fold role");
            if (f < 1 || f > k)
                throw IoError(origin + " line " + std::to_string(line_no) + ": fold index " +
                              std::to_string(f) + " out of 1.." + std::to_string(k));
            split.folds[static_cast<size_t>(f - 1)].push_back(id);
        } else {
            throw IoError(origin + " line " + std::to_string(line_no) + ": unknown role '" +
                          role + "'");
        }
    }
    try {
        split.validate();
    } catch (const ValueError& e) {
        throw IoError(origin + ": " + e.what());
    }
    return split;
}

inline DatasetSplit read_split_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open split manifest: " + path);
    return read_split_manifest(in, path);
}

}  // namespace vsdr
