#pragma once

#include "aff/matrix.hpp"

namespace aff {

// Prototype matrix with the additive-angular-margin hyperparameters. Rows are
// one prototype per class; they are L2-normalized inside the loss only, never
// in place.
struct ClassifierHead {
    Matrix prototypes;  // N_cls x d
    double scale = 32.0;
    double margin = 0.3;  // radians, added to the target angle

    std::size_t num_classes() const { return prototypes.rows(); }
    std::size_t dim() const { return prototypes.cols(); }
    void validate() const;
};

struct ArcFaceResult {
    double loss = 0.0;
    Matrix d_feature;     // 1 x d
    Matrix d_prototypes;  // N_cls x d; caller decides whether to apply
};

// Softmax cross-entropy over scaled cosine logits with the margin added to
// the target angle only. The feature is L2-normalized internally, so the loss
// is invariant to positive rescaling of the input. Cosines are clamped to
// [-1 + 1e-7, 1 - 1e-7] before arccos.
ArcFaceResult arcface_loss(const Matrix& feature, const ClassifierHead& head,
                           std::size_t label);

// Eq.-style exponential moving average: query <- alpha * query + (1 - alpha)
// * mixer, elementwise. The query head never receives gradients; this is its
// only writer.
void momentum_update(ClassifierHead& query_head, const ClassifierHead& mixer_head,
                     double alpha);

}  // namespace aff
