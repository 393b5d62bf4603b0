#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive (nested loops, direct formulas) so they share no code
// path with the library they check.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "aff/matrix.hpp"

namespace oracle {

inline aff::Matrix matmul_triple_loop(const aff::Matrix& a, const aff::Matrix& b) {
    aff::Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    return out;
}

inline aff::Matrix layer_norm_direct(const aff::Matrix& x, const aff::Matrix& gain,
                                     const aff::Matrix& bias, double eps = 1e-5) {
    aff::Matrix out(x.rows(), x.cols());
    const double d = double(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) mu += x(i, j) / d;
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) var += (x(i, j) - mu) * (x(i, j) - mu) / d;
        for (std::size_t j = 0; j < x.cols(); ++j)
            out(i, j) = gain(0, j) * (x(i, j) - mu) / std::sqrt(var + eps) + bias(0, j);
    }
    return out;
}

inline aff::Matrix softmax_naive(const aff::Matrix& x) {
    aff::Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) denom += std::exp(x(i, j));
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = std::exp(x(i, j)) / denom;
    }
    return out;
}

// Single-head attention spelled out step by step: q_i = x_i Wq, scores, exp
// weights, weighted sum of values, output projection.
inline aff::Matrix attention_single_head(const aff::Matrix& x, const aff::Matrix& wq,
                                         const aff::Matrix& wk, const aff::Matrix& wv,
                                         const aff::Matrix& wo) {
    const std::size_t n = x.rows(), d = x.cols();
    const aff::Matrix q = matmul_triple_loop(x, wq);
    const aff::Matrix k = matmul_triple_loop(x, wk);
    const aff::Matrix v = matmul_triple_loop(x, wv);
    aff::Matrix mixed(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> w(n);
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += q(i, c) * k(j, c);
            w[j] = std::exp(s / std::sqrt(double(d)));
            denom += w[j];
        }
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < d; ++c) mixed(i, c) += (w[j] / denom) * v(j, c);
    }
    return matmul_triple_loop(mixed, wo);
}

// Average precision from the definition: walk the ranking, and at every
// relevant item take precision as (#relevant seen so far) / rank. Junk ids
// are removed before ranks are assigned.
inline double ap_direct(const std::vector<std::string>& ranked,
                        const std::set<std::string>& positives,
                        const std::set<std::string>& junk = {}) {
    std::vector<std::string> kept;
    for (const auto& id : ranked)
        if (!junk.count(id)) kept.push_back(id);
    double acc = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        if (positives.count(kept[i])) {
            ++hits;
            acc += double(hits) / double(i + 1);
        }
    }
    return positives.empty() ? 0.0 : acc / double(positives.size());
}

// Expected AP of a uniformly random ranking of `gallery` items containing
// `positives` relevant ones; exact sum over ranks. Derivation: at rank i the
// probability of a positive is P/G, and conditioned on that the expected
// number of positives in the first i items is 1 + (i-1)(P-1)/(G-1).
inline double expected_ap_random(std::size_t gallery, std::size_t positives) {
    const double g = double(gallery), p = double(positives);
    double acc = 0.0;
    for (std::size_t i = 1; i <= gallery; ++i) {
        const double cond =
            1.0 + (gallery > 1 ? (double(i) - 1.0) * (p - 1.0) / (g - 1.0) : 0.0);
        acc += (p / g) * cond / double(i);
    }
    return acc / p;
}

// Brute-force check of expected_ap_random for small instances: enumerate all
// C(G, P) positive-position subsets (ranking fixed; positions random is the
// same distribution).
inline double expected_ap_enumerated(std::size_t gallery, std::size_t positives) {
    std::vector<bool> mask(gallery, false);
    std::fill(mask.end() - positives, mask.end(), true);
    double total = 0.0;
    std::size_t count = 0;
    do {
        double acc = 0.0;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < gallery; ++i) {
            if (mask[i]) {
                ++hits;
                acc += double(hits) / double(i + 1);
            }
        }
        total += acc / double(positives);
        ++count;
    } while (std::next_permutation(mask.begin(), mask.end()));
    return total / double(count);
}

inline double max_abs_diff(const aff::Matrix& a, const aff::Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

}  // namespace oracle
