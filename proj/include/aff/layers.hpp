#pragma once

#include <map>
#include <string>
#include <vector>

#include "aff/matrix.hpp"
#include "aff/rng.hpp"

namespace aff {

// Named view of one trainable parameter and its gradient accumulator.
struct ParamRef {
    std::string name;
    Matrix* value;
    Matrix* grad;
};

// Gradients of a scalar loss with respect to a block's parameters and input.
// Parameter grads are keyed by the names exposed through ParamRef.
struct LayerGrads {
    std::map<std::string, Matrix> param;
    Matrix input;
};

// Layers record per-call tapes on forward and consume them LIFO on backward,
// so one layer object can be applied several times inside a composite (the
// mixer reuses its transformer layer C times) and gradients accumulate across
// the reuses. backward with an empty tape is a state error.

class Linear {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng, double init_std);

    Matrix forward(const Matrix& x);
    Matrix backward(const Matrix& upstream);
    Matrix apply(const Matrix& x) const;  // inference path, no tape

    std::vector<ParamRef> params(const std::string& prefix);
    void zero_grads();
    std::size_t in_dim() const { return weight.rows(); }
    std::size_t out_dim() const { return weight.cols(); }

    Matrix weight;  // in x out
    Matrix bias;    // 1 x out, empty when bias-free
    Matrix grad_weight;
    Matrix grad_bias;

private:
    bool has_bias_ = false;
    std::vector<Matrix> tape_input_;
};

class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim);

    Matrix forward(const Matrix& x);
    Matrix backward(const Matrix& upstream);
    Matrix apply(const Matrix& x) const { return layer_norm(x, gain, bias, kEps); }

    std::vector<ParamRef> params(const std::string& prefix);
    void zero_grads();

    Matrix gain;  // 1 x dim
    Matrix bias;  // 1 x dim
    Matrix grad_gain;
    Matrix grad_bias;

    static constexpr double kEps = 1e-5;

private:
    std::vector<Matrix> tape_input_;
};

class Gelu {
public:
    Matrix forward(const Matrix& x);
    Matrix backward(const Matrix& upstream);
    void reset() { tape_input_.clear(); }

private:
    std::vector<Matrix> tape_input_;
};

class SoftmaxRows {
public:
    Matrix forward(const Matrix& x);
    Matrix backward(const Matrix& upstream);
    void reset() { tape_output_.clear(); }

private:
    std::vector<Matrix> tape_output_;
};

// Multi-head self-attention without positional encodings or biases; per-head
// scaling is 1/sqrt(d/heads).
class Mhsa {
public:
    Mhsa() = default;
    Mhsa(std::size_t dim, std::size_t heads, Rng& rng, double init_std);

    Matrix forward(const Matrix& x);
    Matrix backward(const Matrix& upstream);
    Matrix apply(const Matrix& x) const;

    std::vector<ParamRef> params(const std::string& prefix);
    void zero_grads();
    std::size_t heads() const { return heads_; }
    std::size_t dim() const { return wq.rows(); }

    Matrix wq, wk, wv, wo;  // each dim x dim
    Matrix grad_wq, grad_wk, grad_wv, grad_wo;

private:
    struct Tape {
        Matrix input;
        Matrix q, k, v;
        std::vector<Matrix> attn;  // per head, rows sum to 1
        Matrix concat;
    };
    std::size_t heads_ = 0;
    std::vector<Tape> tape_;
};

// One post-norm transformer layer, applied as
//   zbar = LN1(z + MHSA(z));  out = LN2(zbar + GeLU(zbar W1) W2).
class TransformerLayer {
public:
    TransformerLayer() = default;
    TransformerLayer(std::size_t dim, std::size_t hidden, std::size_t heads, Rng& rng,
                     double init_std);

    Matrix forward(const Matrix& x);
    Matrix backward(const Matrix& upstream);
    Matrix apply(const Matrix& x) const;

    std::vector<ParamRef> params(const std::string& prefix);
    void zero_grads();
    std::size_t dim() const { return attn.dim(); }
    std::size_t hidden() const { return w1.out_dim(); }
    std::size_t heads() const { return attn.heads(); }

    Mhsa attn;
    LayerNorm norm_attn;
    Linear w1;  // dim -> hidden, no bias
    Linear w2;  // hidden -> dim, no bias
    LayerNorm norm_mlp;

private:
    Gelu gelu_;
    std::vector<Matrix> tape_zbar_;  // retained only to track call depth
};

void zero_all(std::vector<ParamRef>& params);

}  // namespace aff
