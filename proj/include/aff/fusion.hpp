#pragma once

#include <memory>
#include <string>
#include <vector>

#include "aff/layers.hpp"
#include "aff/matrix.hpp"
#include "aff/rng.hpp"

namespace aff {

// One item's heterogeneous gallery features before projection: K global
// vectors plus M local descriptor sets. Local coordinates and scales are not
// represented. Globals are unit-norm by construction everywhere bundles are
// produced in this library.
struct FeatureBundle {
    std::string item_id;
    int label = -1;  // class index; -1 when not a training item
    std::vector<Matrix> globals;  // each 1 x D_i
    std::vector<Matrix> locals;   // each n_i x d_i

    std::size_t token_count() const;
    void check_finite() const;
};

// Shape schema of a bundle family layout, used to validate projection arity.
struct BundleSchema {
    std::vector<std::size_t> global_dims;
    std::vector<std::pair<std::size_t, std::size_t>> local_shapes;  // (n_i, d_i)

    static BundleSchema of(const FeatureBundle& b);
    bool operator==(const BundleSchema&) const = default;
    std::size_t concat_width() const;
    std::string describe() const;
};

// The stacked, projected N x d token matrix (globals first, then local rows)
// plus a per-token source tag.
struct FeatureSequence {
    Matrix tokens;
    std::vector<std::string> provenance;
};

struct MixerConfig {
    std::size_t d = 32;
    std::size_t d_e = 0;  // 0 means 2*d
    std::size_t depth = 4;
    std::size_t heads = 4;
    bool shared_weights = true;

    std::size_t hidden() const { return d_e == 0 ? 2 * d : d_e; }
    void validate() const;
};

// Per-family fully-connected maps onto the common token width d.
struct ProjectionSet {
    std::vector<Linear> global_proj;  // D_i x d
    std::vector<Linear> local_proj;   // d_i x d

    std::vector<ParamRef> params();
    void zero_grads();
};

// Common interface of the two gallery aggregators. forward records tapes for
// training; embed is const and tape-free (safe for concurrent inference) and
// returns the L2-normalized embedding.
class GalleryEncoder {
public:
    virtual ~GalleryEncoder() = default;
    virtual Matrix forward(const FeatureBundle& bundle) = 0;  // raw 1 x d
    virtual void backward(const Matrix& upstream) = 0;
    virtual Matrix embed(const FeatureBundle& bundle) const = 0;
    virtual std::vector<ParamRef> params() = 0;
    virtual void zero_grads() = 0;
    virtual std::size_t out_dim() const = 0;
    virtual std::string kind() const = 0;

    LayerGrads collect_grads();
};

// Transformer aggregator: projected tokens behind a learnable fusion token,
// one post-norm transformer layer applied depth times (weights shared across
// iterations by default), row 0 of the final state is the aggregated feature.
class DynamicMixer : public GalleryEncoder {
public:
    DynamicMixer(const BundleSchema& schema, const MixerConfig& cfg, std::uint64_t seed);

    FeatureSequence project_and_stack(const FeatureBundle& bundle);        // tape
    FeatureSequence project_and_stack_pure(const FeatureBundle& bundle) const;
    Matrix mix(const FeatureSequence& seq);                                // tape, raw 1 x d
    Matrix mix_pure(const FeatureSequence& seq) const;

    Matrix forward(const FeatureBundle& bundle) override;
    void backward(const Matrix& upstream) override;
    Matrix embed(const FeatureBundle& bundle) const override;
    std::vector<ParamRef> params() override;
    void zero_grads() override;
    std::size_t out_dim() const override { return cfg_.d; }
    std::string kind() const override { return "mixer"; }

    const MixerConfig& config() const { return cfg_; }
    const BundleSchema& schema() const { return schema_; }

    Matrix fusion_token;  // 1 x d
    Matrix grad_fusion_token;
    ProjectionSet proj;
    std::vector<TransformerLayer> layers;  // size 1 when shared, else depth

private:
    void check_schema(const FeatureBundle& bundle) const;
    TransformerLayer& layer_at(std::size_t iteration);
    const TransformerLayer& layer_at(std::size_t iteration) const;

    BundleSchema schema_;
    MixerConfig cfg_;
    std::vector<std::size_t> tape_rows_;  // token-row counts of pending forwards
};

// Fixed-arity baseline: concatenate all raw features in stacking order and
// reduce with fully-connected layers (GeLU between them).
class BaselineMixer : public GalleryEncoder {
public:
    // hidden = 0 builds a single linear layer (used by tests); otherwise
    // concat -> hidden -> GeLU -> d.
    BaselineMixer(const BundleSchema& schema, std::size_t d, std::size_t hidden,
                  std::uint64_t seed);

    Matrix forward(const FeatureBundle& bundle) override;
    void backward(const Matrix& upstream) override;
    Matrix embed(const FeatureBundle& bundle) const override;
    std::vector<ParamRef> params() override;
    void zero_grads() override;
    std::size_t out_dim() const override { return d_; }
    std::string kind() const override { return "mlp"; }

    const BundleSchema& schema() const { return schema_; }

    Linear fc1;  // concat -> hidden (or concat -> d when hidden == 0)
    Linear fc2;  // hidden -> d, unused when hidden == 0

private:
    Matrix concat_features(const FeatureBundle& bundle) const;

    BundleSchema schema_;
    std::size_t d_ = 0;
    std::size_t hidden_ = 0;
    Gelu gelu_;
};

}  // namespace aff
