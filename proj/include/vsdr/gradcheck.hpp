#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vsdr/tensor.hpp"

namespace vsdr {

// Relative error with a floor so comparisons near zero stay meaningful.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Central differences: (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps) per element.
// f takes the flat value vector and returns the scalar objective.
template <typename F>
std::vector<double> finite_difference_gradient(F&& f, std::vector<double> x, double eps = 1e-6) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + eps;
        const double fp = f(x);
        x[i] = x0 - eps;
        const double fm = f(x);
        x[i] = x0;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

struct GradInput {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    size_t n_checked = 0;
    bool pass = false;
};

// Compares reverse-mode gradients of a scalar objective against central
// differences, element by element over every input. `build` maps leaf
// tensors (one per GradInput, same order) to the scalar objective and is
// re-invoked for every probe, so it must be a pure function of its inputs.
template <typename Builder>
GradCheckResult check_gradients(const std::string& name, const std::vector<GradInput>& inputs,
                                Builder&& build, double eps = 1e-6, double tol = 1e-5) {
    // Analytic pass.
    std::vector<Tensor<double>> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs)
        leaves.push_back(Tensor<double>::from_data(in.shape, in.values, /*requires_grad=*/true));
    Tensor<double> loss = build(leaves);
    backward(loss);

    GradCheckResult res;
    res.name = name;
    for (size_t j = 0; j < inputs.size(); ++j) {
        std::vector<double> analytic(inputs[j].values.size(), 0.0);
        if (leaves[j].has_grad()) {
            auto g = leaves[j].grad();
            std::copy(g.begin(), g.end(), analytic.begin());
        }
        auto objective = [&](const std::vector<double>& xj) {
            NoGradGuard ng;
            std::vector<Tensor<double>> probe;
            probe.reserve(inputs.size());
            for (size_t k = 0; k < inputs.size(); ++k)
                probe.push_back(Tensor<double>::from_data(inputs[k].shape,
                                                          k == j ? xj : inputs[k].values, false));
            return build(probe).item();
        };
        std::vector<double> numeric = finite_difference_gradient(objective, inputs[j].values, eps);
        for (size_t i = 0; i < numeric.size(); ++i) {
            res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[i], numeric[i]));
            ++res.n_checked;
        }
    }
    res.pass = res.max_rel_err < tol;
    return res;
}

}  // namespace vsdr
