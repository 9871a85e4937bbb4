#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "vsdr/tensor.hpp"

namespace vsdr {

struct CaseMetrics {
    double dc = 0;  // 2|y∩p̂| / (|y|+|p̂|)
    double ji = 0;  // |y∩p̂| / |y∪p̂|
    double ac = 0;  // correct voxels / total voxels
};

// Overlap metrics between a binary mask and a probability volume binarized
// at `threshold` (strictly greater). Empty-vs-empty counts as a perfect
// match: dc = ji = 1.
template <typename T>
CaseMetrics evaluate_metrics(const Tensor<T>& y, const Tensor<T>& p, double threshold = 0.5) {
    if (y.shape() != p.shape())
        throw ShapeError("evaluate_metrics: shape mismatch " + shape_str(y.shape()) + " vs " +
                         shape_str(p.shape()));
    const auto yv = y.values();
    const auto pv = p.values();
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (size_t i = 0; i < yv.size(); ++i) {
        const double yd = static_cast<double>(yv[i]);
        if (yd != 0.0 && yd != 1.0)
            throw ValueError("evaluate_metrics: mask value " + std::to_string(yd) +
                             " is not binary");
        const bool t = yd != 0.0;
        const bool d = static_cast<double>(pv[i]) > threshold;
        if (t && d)
            ++tp;
        else if (!t && d)
            ++fp;
        else if (t && !d)
            ++fn;
        else
            ++tn;
    }
    CaseMetrics m;
    const int64_t ysz = tp + fn, psz = tp + fp;
    m.dc = (ysz + psz == 0) ? 1.0 : 2.0 * tp / static_cast<double>(ysz + psz);
    m.ji = (tp + fp + fn == 0) ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    m.ac = static_cast<double>(tp + tn) / static_cast<double>(yv.size());
    return m;
}

// Per-case metric rows with an aggregate mean row, serialized as a TSV
// table with a stable column order so runs can be diffed.
struct MetricsReport {
    struct Row {
        std::string id;
        CaseMetrics m;
    };
    std::vector<Row> per_case;

    void add(std::string id, CaseMetrics m) { per_case.push_back({std::move(id), m}); }

    CaseMetrics aggregate() const {
        CaseMetrics a;
        if (per_case.empty()) return a;
        for (const auto& r : per_case) {
            a.dc += r.m.dc;
            a.ji += r.m.ji;
            a.ac += r.m.ac;
        }
        const double n = static_cast<double>(per_case.size());
        a.dc /= n;
        a.ji /= n;
        a.ac /= n;
        return a;
    }

    std::string to_tsv() const {
        std::string out = "case\tdc\tji\tac\n";
        char buf[128];
        auto row = [&](const std::string& id, const CaseMetrics& m) {
            std::snprintf(buf, sizeof buf, "%s\t%.9f\t%.9f\t%.9f\n", id.c_str(), m.dc, m.ji, m.ac);
            out += buf;
        };
        for (const auto& r : per_case) row(r.id, r.m);
        row("mean", aggregate());
        return out;
    }
};

}  // namespace vsdr
