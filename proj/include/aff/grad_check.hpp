#pragma once

#include <functional>
#include <string>
#include <vector>

#include "aff/layers.hpp"
#include "aff/matrix.hpp"

namespace aff {

struct GradCheckReport {
    int trials = 0;
    double max_rel_err = 0.0;
    std::string worst_param;

    bool passes(double tol = 1e-5) const { return max_rel_err <= tol; }
};

// Relative error convention used everywhere: |a - n| / max(1, |a|, |n|).
double fd_relative_error(double analytic, double numeric);

// Compares analytic gradients against central finite differences of a scalar
// loss. `loss` must be a pure re-evaluation (no tape growth); `fill_grads`
// zeroes and recomputes the analytic gradients for the current parameter
// values. Perturbation step h = 1e-5 in double precision.
GradCheckReport fd_compare(const std::function<double()>& loss,
                           const std::function<void()>& fill_grads,
                           const std::vector<ParamRef>& params, double h = 1e-5);

// Adapter for checking a matrix-in/matrix-out block: the scalar loss is
// <upstream, f(x)> for a fixed random upstream, and the block's input is
// included in the check as a pseudo-parameter named "input".
struct BlockUnderCheck {
    std::function<Matrix(const Matrix&)> forward;        // tape-recording
    std::function<Matrix(const Matrix&)> backward;       // upstream -> d_input
    std::function<Matrix(const Matrix&)> pure;           // no-tape evaluation
    std::function<std::vector<ParamRef>()> params;
    std::function<void()> zero_grads;
};

// Runs `trials` independent random trials (fresh input and upstream each
// time) and reports the max relative error across all parameters and the
// input gradient.
GradCheckReport grad_check(BlockUnderCheck block, std::size_t in_rows, std::size_t in_cols,
                           int trials, std::uint64_t seed, double h = 1e-5);

}  // namespace aff
