#include "aff/fusion.hpp"

#include <cmath>

namespace aff {

// ----------------------------------------------------------- FeatureBundle

std::size_t FeatureBundle::token_count() const {
    std::size_t n = globals.size();
    for (const auto& l : locals) n += l.rows();
    return n;
}

void FeatureBundle::check_finite() const {
    for (const auto& g : globals) {
        if (!g.all_finite()) throw SchemaError("bundle " + item_id + ": non-finite global");
    }
    for (const auto& l : locals) {
        if (!l.all_finite()) throw SchemaError("bundle " + item_id + ": non-finite local");
    }
}

BundleSchema BundleSchema::of(const FeatureBundle& b) {
    BundleSchema s;
    for (const auto& g : b.globals) s.global_dims.push_back(g.cols());
    for (const auto& l : b.locals) s.local_shapes.emplace_back(l.rows(), l.cols());
    return s;
}

std::size_t BundleSchema::concat_width() const {
    std::size_t w = 0;
    for (std::size_t d : global_dims) w += d;
    for (const auto& [n, d] : local_shapes) w += n * d;
    return w;
}

std::string BundleSchema::describe() const {
    std::string s = "globals[";
    for (std::size_t d : global_dims) s += std::to_string(d) + ",";
    s += "] locals[";
    for (const auto& [n, d] : local_shapes) s += std::to_string(n) + "x" + std::to_string(d) + ",";
    return s + "]";
}

void MixerConfig::validate() const {
    if (d < 2) throw ConfigError("mixer: d must be >= 2");
    if (depth < 1) throw ConfigError("mixer: depth must be >= 1");
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("mixer: d=" + std::to_string(d) + " not divisible by heads=" +
                          std::to_string(heads));
    }
}

std::vector<ParamRef> ProjectionSet::params() {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < global_proj.size(); ++i) {
        for (auto& p : global_proj[i].params("proj.g" + std::to_string(i))) out.push_back(p);
    }
    for (std::size_t i = 0; i < local_proj.size(); ++i) {
        for (auto& p : local_proj[i].params("proj.l" + std::to_string(i))) out.push_back(p);
    }
    return out;
}

void ProjectionSet::zero_grads() {
    for (auto& l : global_proj) l.zero_grads();
    for (auto& l : local_proj) l.zero_grads();
}

LayerGrads GalleryEncoder::collect_grads() {
    LayerGrads out;
    for (const auto& p : params()) out.param[p.name] = *p.grad;
    return out;
}

// ------------------------------------------------------------ DynamicMixer

DynamicMixer::DynamicMixer(const BundleSchema& schema, const MixerConfig& cfg,
                           std::uint64_t seed)
    : schema_(schema), cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::derive(seed, 0);
    fusion_token = rng.gaussian_matrix(1, cfg_.d, 0.5);
    grad_fusion_token = Matrix(1, cfg_.d);
    for (std::size_t dim : schema_.global_dims) {
        proj.global_proj.emplace_back(dim, cfg_.d, false, rng, 1.0 / std::sqrt(double(dim)));
    }
    for (const auto& [n, dim] : schema_.local_shapes) {
        (void)n;
        proj.local_proj.emplace_back(dim, cfg_.d, false, rng, 1.0 / std::sqrt(double(dim)));
    }
    const std::size_t copies = cfg_.shared_weights ? 1 : cfg_.depth;
    // small init keeps the post-norm stack trainable with plain SGD; the
    // shared layer is applied depth times, so activations pass many LNs
    const double std = std::min(0.1, 1.0 / std::sqrt(double(cfg_.d)));
    for (std::size_t i = 0; i < copies; ++i) {
        layers.emplace_back(cfg_.d, cfg_.hidden(), cfg_.heads, rng, std);
    }
}

void DynamicMixer::check_schema(const FeatureBundle& bundle) const {
    if (!(BundleSchema::of(bundle) == schema_)) {
        throw SchemaError("bundle " + bundle.item_id + " does not match mixer schema " +
                          schema_.describe());
    }
    bundle.check_finite();
}

TransformerLayer& DynamicMixer::layer_at(std::size_t iteration) {
    return layers[cfg_.shared_weights ? 0 : iteration];
}

const TransformerLayer& DynamicMixer::layer_at(std::size_t iteration) const {
    return layers[cfg_.shared_weights ? 0 : iteration];
}

FeatureSequence DynamicMixer::project_and_stack(const FeatureBundle& bundle) {
    check_schema(bundle);
    FeatureSequence seq;
    seq.tokens = Matrix(bundle.token_count(), cfg_.d);
    std::size_t row = 0;
    for (std::size_t i = 0; i < bundle.globals.size(); ++i) {
        seq.tokens.set_row(row++, proj.global_proj[i].forward(bundle.globals[i]));
        seq.provenance.push_back("g" + std::to_string(i));
    }
    for (std::size_t i = 0; i < bundle.locals.size(); ++i) {
        const Matrix mapped = proj.local_proj[i].forward(bundle.locals[i]);
        for (std::size_t r = 0; r < mapped.rows(); ++r) {
            seq.tokens.set_row(row++, mapped.row(r));
            seq.provenance.push_back("l" + std::to_string(i));
        }
    }
    return seq;
}

FeatureSequence DynamicMixer::project_and_stack_pure(const FeatureBundle& bundle) const {
    check_schema(bundle);
    FeatureSequence seq;
    seq.tokens = Matrix(bundle.token_count(), cfg_.d);
    std::size_t row = 0;
    for (std::size_t i = 0; i < bundle.globals.size(); ++i) {
        seq.tokens.set_row(row++, proj.global_proj[i].apply(bundle.globals[i]));
        seq.provenance.push_back("g" + std::to_string(i));
    }
    for (std::size_t i = 0; i < bundle.locals.size(); ++i) {
        const Matrix mapped = proj.local_proj[i].apply(bundle.locals[i]);
        for (std::size_t r = 0; r < mapped.rows(); ++r) {
            seq.tokens.set_row(row++, mapped.row(r));
            seq.provenance.push_back("l" + std::to_string(i));
        }
    }
    return seq;
}

Matrix DynamicMixer::mix(const FeatureSequence& seq) {
    if (seq.tokens.rows() == 0) throw SchemaError("mix: empty feature sequence");
    Matrix z = vstack(fusion_token, seq.tokens);
    for (std::size_t i = 0; i < cfg_.depth; ++i) z = layer_at(i).forward(z);
    tape_rows_.push_back(seq.tokens.rows());
    return z.row(0);
}

Matrix DynamicMixer::mix_pure(const FeatureSequence& seq) const {
    if (seq.tokens.rows() == 0) throw SchemaError("mix: empty feature sequence");
    Matrix z = vstack(fusion_token, seq.tokens);
    for (std::size_t i = 0; i < cfg_.depth; ++i) z = layer_at(i).apply(z);
    return z.row(0);
}

Matrix DynamicMixer::forward(const FeatureBundle& bundle) {
    return mix(project_and_stack(bundle));
}

void DynamicMixer::backward(const Matrix& upstream) {
    if (tape_rows_.empty()) {
        throw StateError("mixer: backward called without a recorded forward");
    }
    const std::size_t n_tokens = tape_rows_.back();
    tape_rows_.pop_back();
    if (upstream.rows() != 1 || upstream.cols() != cfg_.d) {
        throw DimensionError("mixer backward: upstream must be 1x" + std::to_string(cfg_.d));
    }

    // Loss touches only row 0 of the final state.
    Matrix dz(n_tokens + 1, cfg_.d);
    dz.set_row(0, upstream);
    for (std::size_t i = cfg_.depth; i-- > 0;) {
        dz = layer_at(i).backward(dz);
    }

    grad_fusion_token += dz.row(0);
    // Remaining rows flow back through the projections in reverse stack order.
    std::size_t row = 1 + n_tokens;
    for (std::size_t i = proj.local_proj.size(); i-- > 0;) {
        const std::size_t n = schema_.local_shapes[i].first;
        Matrix block(n, cfg_.d);
        for (std::size_t r = 0; r < n; ++r) block.set_row(r, dz.row(row - n + r));
        row -= n;
        proj.local_proj[i].backward(block);
    }
    for (std::size_t i = proj.global_proj.size(); i-- > 0;) {
        proj.global_proj[i].backward(dz.row(--row));
    }
}

Matrix DynamicMixer::embed(const FeatureBundle& bundle) const {
    return l2_normalize(mix_pure(project_and_stack_pure(bundle)));
}

std::vector<ParamRef> DynamicMixer::params() {
    std::vector<ParamRef> out{{"fusion_token", &fusion_token, &grad_fusion_token}};
    for (auto& p : proj.params()) out.push_back(p);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        for (auto& p : layers[i].params("layer" + std::to_string(i))) out.push_back(p);
    }
    return out;
}

void DynamicMixer::zero_grads() {
    grad_fusion_token = Matrix(1, cfg_.d);
    proj.zero_grads();
    for (auto& l : layers) l.zero_grads();
    tape_rows_.clear();
}

// ----------------------------------------------------------- BaselineMixer

BaselineMixer::BaselineMixer(const BundleSchema& schema, std::size_t d, std::size_t hidden,
                             std::uint64_t seed)
    : schema_(schema), d_(d), hidden_(hidden) {
    Rng rng = Rng::derive(seed, 1);
    const std::size_t in = schema_.concat_width();
    if (hidden_ == 0) {
        fc1 = Linear(in, d_, false, rng, 1.0 / std::sqrt(double(in)));
    } else {
        fc1 = Linear(in, hidden_, false, rng, 1.0 / std::sqrt(double(in)));
        fc2 = Linear(hidden_, d_, false, rng, 1.0 / std::sqrt(double(hidden_)));
    }
}

Matrix BaselineMixer::concat_features(const FeatureBundle& bundle) const {
    if (!(BundleSchema::of(bundle) == schema_)) {
        throw SchemaError("bundle " + bundle.item_id + " does not match baseline schema " +
                          schema_.describe());
    }
    bundle.check_finite();
    Matrix out(1, schema_.concat_width());
    std::size_t col = 0;
    for (const auto& g : bundle.globals) {
        for (std::size_t j = 0; j < g.cols(); ++j) out(0, col++) = g(0, j);
    }
    for (const auto& l : bundle.locals) {
        for (std::size_t r = 0; r < l.rows(); ++r)
            for (std::size_t j = 0; j < l.cols(); ++j) out(0, col++) = l(r, j);
    }
    return out;
}

Matrix BaselineMixer::forward(const FeatureBundle& bundle) {
    const Matrix x = concat_features(bundle);
    if (hidden_ == 0) return fc1.forward(x);
    return fc2.forward(gelu_.forward(fc1.forward(x)));
}

void BaselineMixer::backward(const Matrix& upstream) {
    if (hidden_ == 0) {
        fc1.backward(upstream);
        return;
    }
    fc1.backward(gelu_.backward(fc2.backward(upstream)));
}

Matrix BaselineMixer::embed(const FeatureBundle& bundle) const {
    const Matrix x = concat_features(bundle);
    if (hidden_ == 0) return l2_normalize(fc1.apply(x));
    return l2_normalize(fc2.apply(gelu(fc1.apply(x))));
}

std::vector<ParamRef> BaselineMixer::params() {
    std::vector<ParamRef> out = fc1.params("fc1");
    if (hidden_ != 0) {
        for (auto& p : fc2.params("fc2")) out.push_back(p);
    }
    return out;
}

void BaselineMixer::zero_grads() {
    fc1.zero_grads();
    if (hidden_ != 0) fc2.zero_grads();
    gelu_.reset();
}

}  // namespace aff
