#include "aff/grad_check.hpp"

#include <cmath>

#include "aff/rng.hpp"

namespace aff {

double fd_relative_error(double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport fd_compare(const std::function<double()>& loss,
                           const std::function<void()>& fill_grads,
                           const std::vector<ParamRef>& params, double h) {
    fill_grads();
    // Snapshot analytic grads before the FD sweeps overwrite parameter values.
    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(*p.grad);

    GradCheckReport report;
    report.trials = 1;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Matrix& value = *params[pi].value;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value.at(i);
            value.at(i) = saved + h;
            const double up = loss();
            value.at(i) = saved - h;
            const double down = loss();
            value.at(i) = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double err = fd_relative_error(analytic[pi].at(i), numeric);
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst_param = params[pi].name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

GradCheckReport grad_check(BlockUnderCheck block, std::size_t in_rows, std::size_t in_cols,
                           int trials, std::uint64_t seed, double h) {
    GradCheckReport report;
    report.trials = trials;
    for (int t = 0; t < trials; ++t) {
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(t));
        Matrix input = rng.gaussian_matrix(in_rows, in_cols);
        Matrix input_grad(in_rows, in_cols);

        const Matrix probe = block.pure(input);
        const Matrix upstream = rng.gaussian_matrix(probe.rows(), probe.cols());

        auto loss = [&]() { return dot(upstream, block.pure(input)); };
        auto fill = [&]() {
            block.zero_grads();
            block.forward(input);
            input_grad = block.backward(upstream);
        };

        std::vector<ParamRef> all = block.params();
        all.push_back({"input", &input, &input_grad});
        const GradCheckReport one = fd_compare(loss, fill, all, h);
        if (one.max_rel_err > report.max_rel_err) {
            report.max_rel_err = one.max_rel_err;
            report.worst_param = one.worst_param + " (trial " + std::to_string(t) + ")";
        }
    }
    return report;
}

}  // namespace aff
