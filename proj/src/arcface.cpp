#include "aff/arcface.hpp"

#include <cmath>
#include <vector>

namespace aff {

namespace {
constexpr double kCosClamp = 1e-7;
}

void ClassifierHead::validate() const {
    if (!(scale > 0.0)) throw ConfigError("classifier: scale must be positive");
    if (!(margin >= 0.0 && margin < 1.5707963267948966)) {
        throw ConfigError("classifier: margin must be in [0, pi/2)");
    }
    if (!prototypes.all_finite()) throw SchemaError("classifier: non-finite prototypes");
}

ArcFaceResult arcface_loss(const Matrix& feature, const ClassifierHead& head,
                           std::size_t label) {
    head.validate();
    if (feature.rows() != 1 || feature.cols() != head.dim()) {
        throw DimensionError("arcface: feature must be 1x" + std::to_string(head.dim()));
    }
    if (label >= head.num_classes()) {
        throw SchemaError("arcface: label " + std::to_string(label) + " out of range");
    }

    const std::size_t n = head.num_classes();
    const std::size_t d = head.dim();
    const double fnorm = norm(feature);
    if (!(fnorm > 1e-12)) throw DegenerateInputError("arcface: zero feature");
    const Matrix fhat = feature * (1.0 / fnorm);

    std::vector<double> pnorm(n);
    std::vector<double> cosv(n);
    std::vector<bool> clamped(n, false);
    for (std::size_t j = 0; j < n; ++j) {
        const Matrix pj = head.prototypes.row(j);
        pnorm[j] = norm(pj);
        if (!(pnorm[j] > 1e-12)) throw DegenerateInputError("arcface: zero prototype row");
        double c = dot(pj, fhat) / pnorm[j];
        if (c > 1.0 - kCosClamp) {
            c = 1.0 - kCosClamp;
            clamped[j] = true;
        } else if (c < -1.0 + kCosClamp) {
            c = -1.0 + kCosClamp;
            clamped[j] = true;
        }
        cosv[j] = c;
    }

    // logits: s*cos(theta_y + m) for the target, s*cos(theta_j) elsewhere
    std::vector<double> logits(n);
    const double theta_y = std::acos(cosv[label]);
    for (std::size_t j = 0; j < n; ++j) {
        logits[j] = head.scale * (j == label ? std::cos(theta_y + head.margin) : cosv[j]);
    }

    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double denom = 0.0;
    std::vector<double> p(n);
    for (std::size_t j = 0; j < n; ++j) {
        p[j] = std::exp(logits[j] - mx);
        denom += p[j];
    }
    for (std::size_t j = 0; j < n; ++j) p[j] /= denom;

    ArcFaceResult res;
    res.loss = -(logits[label] - mx) + std::log(denom);

    // d loss / d cos_j, with the margin chain rule on the target:
    //   d cos(theta + m) / d cos(theta) = sin(theta + m) / sin(theta)
    std::vector<double> dcos(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double dlogit = p[j] - (j == label ? 1.0 : 0.0);
        if (clamped[j]) {
            dcos[j] = 0.0;  // flat through the clamp
        } else if (j == label) {
            const double sin_y = std::sin(theta_y);
            dcos[j] = dlogit * head.scale * std::sin(theta_y + head.margin) / sin_y;
        } else {
            dcos[j] = dlogit * head.scale;
        }
    }

    // cos_j = <p_j, f> / (|p_j| |f|); chain into feature and prototypes
    res.d_feature = Matrix(1, d);
    res.d_prototypes = Matrix(n, d);
    for (std::size_t j = 0; j < n; ++j) {
        if (dcos[j] == 0.0) continue;
        const double inv_p = 1.0 / pnorm[j];
        for (std::size_t c = 0; c < d; ++c) {
            const double phat = head.prototypes(j, c) * inv_p;
            res.d_feature(0, c) += dcos[j] * (phat - cosv[j] * fhat(0, c)) / fnorm;
            res.d_prototypes(j, c) = dcos[j] * (fhat(0, c) - cosv[j] * phat) * inv_p;
        }
    }
    return res;
}

void momentum_update(ClassifierHead& query_head, const ClassifierHead& mixer_head,
                     double alpha) {
    if (!(alpha >= 0.0 && alpha < 1.0)) {
        throw ConfigError("momentum: alpha must be in [0, 1)");
    }
    if (!query_head.prototypes.same_shape(mixer_head.prototypes)) {
        throw SchemaError("momentum: head shapes differ (" +
                          shape_string(query_head.prototypes) + " vs " +
                          shape_string(mixer_head.prototypes) + ")");
    }
    Matrix& q = query_head.prototypes;
    const Matrix& w = mixer_head.prototypes;
    for (std::size_t i = 0; i < q.size(); ++i) {
        q.at(i) = alpha * q.at(i) + (1.0 - alpha) * w.at(i);
    }
}

}  // namespace aff
