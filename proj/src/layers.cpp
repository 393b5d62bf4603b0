#include "aff/layers.hpp"

#include <cmath>

namespace aff {

namespace {

Matrix pop_tape(std::vector<Matrix>& tape, const char* who) {
    if (tape.empty()) {
        throw StateError(std::string(who) + ": backward called without a recorded forward");
    }
    Matrix m = std::move(tape.back());
    tape.pop_back();
    return m;
}

}  // namespace

// ---------------------------------------------------------------- Linear

Linear::Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng, double init_std)
    : weight(rng.gaussian_matrix(in, out, init_std)),
      grad_weight(in, out),
      has_bias_(with_bias) {
    if (with_bias) {
        bias = Matrix(1, out);
        grad_bias = Matrix(1, out);
    }
}

Matrix Linear::forward(const Matrix& x) {
    Matrix out = matmul(x, weight);
    if (has_bias_) {
        for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bias(0, j);
    }
    tape_input_.push_back(x);
    return out;
}

Matrix Linear::backward(const Matrix& upstream) {
    const Matrix x = pop_tape(tape_input_, "Linear");
    grad_weight += matmul(transpose(x), upstream);
    if (has_bias_) {
        for (std::size_t i = 0; i < upstream.rows(); ++i)
            for (std::size_t j = 0; j < upstream.cols(); ++j)
                grad_bias(0, j) += upstream(i, j);
    }
    return matmul(upstream, transpose(weight));
}

Matrix Linear::apply(const Matrix& x) const {
    Matrix out = matmul(x, weight);
    if (has_bias_) {
        for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bias(0, j);
    }
    return out;
}

std::vector<ParamRef> Linear::params(const std::string& prefix) {
    std::vector<ParamRef> p{{prefix + ".w", &weight, &grad_weight}};
    if (has_bias_) p.push_back({prefix + ".b", &bias, &grad_bias});
    return p;
}

void Linear::zero_grads() {
    grad_weight = Matrix(weight.rows(), weight.cols());
    if (has_bias_) grad_bias = Matrix(1, bias.cols());
    tape_input_.clear();
}

// -------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(std::size_t dim)
    : gain(1, dim, 1.0), bias(1, dim), grad_gain(1, dim), grad_bias(1, dim) {}

Matrix LayerNorm::forward(const Matrix& x) {
    tape_input_.push_back(x);
    return layer_norm(x, gain, bias, kEps);
}

Matrix LayerNorm::backward(const Matrix& upstream) {
    const Matrix x = pop_tape(tape_input_, "LayerNorm");
    const std::size_t d = x.cols();
    const double dn = static_cast<double>(d);
    Matrix dx(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
        mean /= dn;
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x(i, j) - mean;
            var += c * c;
        }
        var /= dn;
        const double inv = 1.0 / std::sqrt(var + kEps);

        // xhat_j = (x_j - mean) * inv; grads through gain, then the two
        // coupling terms from mean and variance.
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (x(i, j) - mean) * inv;
            const double dxhat = upstream(i, j) * gain(0, j);
            grad_gain(0, j) += upstream(i, j) * xhat;
            grad_bias(0, j) += upstream(i, j);
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
        }
        mean_dxhat /= dn;
        mean_dxhat_xhat /= dn;
        for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (x(i, j) - mean) * inv;
            const double dxhat = upstream(i, j) * gain(0, j);
            dx(i, j) = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
        }
    }
    return dx;
}

std::vector<ParamRef> LayerNorm::params(const std::string& prefix) {
    return {{prefix + ".gain", &gain, &grad_gain}, {prefix + ".bias", &bias, &grad_bias}};
}

void LayerNorm::zero_grads() {
    grad_gain = Matrix(1, gain.cols());
    grad_bias = Matrix(1, bias.cols());
    tape_input_.clear();
}

// ------------------------------------------------------------------ Gelu

Matrix Gelu::forward(const Matrix& x) {
    tape_input_.push_back(x);
    return gelu(x);
}

Matrix Gelu::backward(const Matrix& upstream) {
    const Matrix x = pop_tape(tape_input_, "Gelu");
    Matrix dx(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        dx.at(i) = upstream.at(i) * gelu_grad_scalar(x.at(i));
    }
    return dx;
}

// ----------------------------------------------------------- SoftmaxRows

Matrix SoftmaxRows::forward(const Matrix& x) {
    Matrix out = softmax_rows(x);
    tape_output_.push_back(out);
    return out;
}

Matrix SoftmaxRows::backward(const Matrix& upstream) {
    const Matrix p = pop_tape(tape_output_, "SoftmaxRows");
    Matrix dx(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) acc += upstream(i, j) * p(i, j);
        for (std::size_t j = 0; j < p.cols(); ++j) {
            dx(i, j) = p(i, j) * (upstream(i, j) - acc);
        }
    }
    return dx;
}

// ------------------------------------------------------------------ Mhsa

Mhsa::Mhsa(std::size_t dim, std::size_t heads, Rng& rng, double init_std)
    : wq(rng.gaussian_matrix(dim, dim, init_std)),
      wk(rng.gaussian_matrix(dim, dim, init_std)),
      wv(rng.gaussian_matrix(dim, dim, init_std)),
      wo(rng.gaussian_matrix(dim, dim, init_std)),
      grad_wq(dim, dim),
      grad_wk(dim, dim),
      grad_wv(dim, dim),
      grad_wo(dim, dim),
      heads_(heads) {
    if (heads == 0 || dim % heads != 0) {
        throw ConfigError("mhsa: dim " + std::to_string(dim) +
                          " not divisible by heads " + std::to_string(heads));
    }
}

namespace {

// Copies columns [h*dh, (h+1)*dh) into a rows x dh block.
Matrix head_slice(const Matrix& m, std::size_t h, std::size_t dh) {
    Matrix out(m.rows(), dh);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < dh; ++j) out(i, j) = m(i, h * dh + j);
    return out;
}

void head_accum(Matrix& dst, const Matrix& block, std::size_t h, std::size_t dh) {
    for (std::size_t i = 0; i < block.rows(); ++i)
        for (std::size_t j = 0; j < dh; ++j) dst(i, h * dh + j) += block(i, j);
}

}  // namespace

Matrix Mhsa::forward(const Matrix& x) {
    const std::size_t d = dim();
    if (x.cols() != d) throw DimensionError("mhsa: input cols " + shape_string(x));
    const std::size_t dh = d / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tape t;
    t.input = x;
    t.q = matmul(x, wq);
    t.k = matmul(x, wk);
    t.v = matmul(x, wv);
    t.concat = Matrix(x.rows(), d);
    t.attn.reserve(heads_);
    for (std::size_t h = 0; h < heads_; ++h) {
        const Matrix qh = head_slice(t.q, h, dh);
        const Matrix kh = head_slice(t.k, h, dh);
        const Matrix vh = head_slice(t.v, h, dh);
        Matrix scores = matmul(qh, transpose(kh));
        scores *= scale;
        Matrix attn = softmax_rows(scores);
        const Matrix out_h = matmul(attn, vh);
        head_accum(t.concat, out_h, h, dh);
        t.attn.push_back(std::move(attn));
    }
    Matrix out = matmul(t.concat, wo);
    tape_.push_back(std::move(t));
    return out;
}

Matrix Mhsa::backward(const Matrix& upstream) {
    if (tape_.empty()) throw StateError("Mhsa: backward called without a recorded forward");
    Tape t = std::move(tape_.back());
    tape_.pop_back();

    const std::size_t d = dim();
    const std::size_t dh = d / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    grad_wo += matmul(transpose(t.concat), upstream);
    const Matrix d_concat = matmul(upstream, transpose(wo));

    Matrix dq(t.q.rows(), d), dk(t.k.rows(), d), dv(t.v.rows(), d);
    for (std::size_t h = 0; h < heads_; ++h) {
        const Matrix qh = head_slice(t.q, h, dh);
        const Matrix kh = head_slice(t.k, h, dh);
        const Matrix vh = head_slice(t.v, h, dh);
        const Matrix& attn = t.attn[h];
        const Matrix d_out_h = head_slice(d_concat, h, dh);

        const Matrix d_attn = matmul(d_out_h, transpose(vh));
        const Matrix d_vh = matmul(transpose(attn), d_out_h);

        // softmax backward over each score row, then the 1/sqrt(dh) scale
        Matrix d_scores(attn.rows(), attn.cols());
        for (std::size_t i = 0; i < attn.rows(); ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < attn.cols(); ++j) acc += d_attn(i, j) * attn(i, j);
            for (std::size_t j = 0; j < attn.cols(); ++j) {
                d_scores(i, j) = attn(i, j) * (d_attn(i, j) - acc) * scale;
            }
        }

        head_accum(dq, matmul(d_scores, kh), h, dh);
        head_accum(dk, matmul(transpose(d_scores), qh), h, dh);
        head_accum(dv, d_vh, h, dh);
    }

    grad_wq += matmul(transpose(t.input), dq);
    grad_wk += matmul(transpose(t.input), dk);
    grad_wv += matmul(transpose(t.input), dv);

    Matrix dx = matmul(dq, transpose(wq));
    dx += matmul(dk, transpose(wk));
    dx += matmul(dv, transpose(wv));
    return dx;
}

Matrix Mhsa::apply(const Matrix& x) const {
    const std::size_t d = dim();
    if (x.cols() != d) throw DimensionError("mhsa: input cols " + shape_string(x));
    const std::size_t dh = d / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Matrix q = matmul(x, wq), k = matmul(x, wk), v = matmul(x, wv);
    Matrix concat(x.rows(), d);
    for (std::size_t h = 0; h < heads_; ++h) {
        Matrix scores = matmul(head_slice(q, h, dh), transpose(head_slice(k, h, dh)));
        scores *= scale;
        head_accum(concat, matmul(softmax_rows(scores), head_slice(v, h, dh)), h, dh);
    }
    return matmul(concat, wo);
}

std::vector<ParamRef> Mhsa::params(const std::string& prefix) {
    return {{prefix + ".wq", &wq, &grad_wq},
            {prefix + ".wk", &wk, &grad_wk},
            {prefix + ".wv", &wv, &grad_wv},
            {prefix + ".wo", &wo, &grad_wo}};
}

void Mhsa::zero_grads() {
    const std::size_t d = dim();
    grad_wq = Matrix(d, d);
    grad_wk = Matrix(d, d);
    grad_wv = Matrix(d, d);
    grad_wo = Matrix(d, d);
    tape_.clear();
}

// ------------------------------------------------------- TransformerLayer

TransformerLayer::TransformerLayer(std::size_t dim, std::size_t hidden, std::size_t heads,
                                   Rng& rng, double init_std)
    : attn(dim, heads, rng, init_std),
      norm_attn(dim),
      w1(dim, hidden, false, rng, init_std),
      w2(hidden, dim, false, rng, init_std),
      norm_mlp(dim) {}

Matrix TransformerLayer::forward(const Matrix& x) {
    const Matrix zbar = norm_attn.forward(x + attn.forward(x));
    const Matrix out = norm_mlp.forward(zbar + w2.forward(gelu_.forward(w1.forward(zbar))));
    tape_zbar_.push_back(zbar);
    return out;
}

Matrix TransformerLayer::backward(const Matrix& upstream) {
    pop_tape(tape_zbar_, "TransformerLayer");
    const Matrix d_res2 = norm_mlp.backward(upstream);
    Matrix d_zbar = d_res2 + w1.backward(gelu_.backward(w2.backward(d_res2)));
    const Matrix d_res1 = norm_attn.backward(d_zbar);
    return d_res1 + attn.backward(d_res1);
}

Matrix TransformerLayer::apply(const Matrix& x) const {
    const Matrix zbar = norm_attn.apply(x + attn.apply(x));
    return norm_mlp.apply(zbar + w2.apply(gelu(w1.apply(zbar))));
}

std::vector<ParamRef> TransformerLayer::params(const std::string& prefix) {
    std::vector<ParamRef> p = attn.params(prefix + ".attn");
    for (auto& r : norm_attn.params(prefix + ".ln1")) p.push_back(r);
    for (auto& r : w1.params(prefix + ".mlp1")) p.push_back(r);
    for (auto& r : w2.params(prefix + ".mlp2")) p.push_back(r);
    for (auto& r : norm_mlp.params(prefix + ".ln2")) p.push_back(r);
    return p;
}

void TransformerLayer::zero_grads() {
    attn.zero_grads();
    norm_attn.zero_grads();
    w1.zero_grads();
    w2.zero_grads();
    norm_mlp.zero_grads();
    gelu_.reset();
    tape_zbar_.clear();
}

void zero_all(std::vector<ParamRef>& params) {
    for (auto& p : params) {
        *p.grad = Matrix(p.value->rows(), p.value->cols());
    }
}

}  // namespace aff
