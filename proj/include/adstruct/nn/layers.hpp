#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "adstruct/errors.hpp"
#include "adstruct/nn/ops.hpp"
#include "adstruct/nn/tensor.hpp"

namespace adstruct::nn {

using Rng = std::mt19937_64;

struct Init {
    enum class Kind { Zeros, Ones, XavierUniform, Normal };
    Kind kind = Kind::Zeros;
    double fan_in = 0.0;
    double fan_out = 0.0;
    double stddev = 0.0;

    static Init zeros() { return {Kind::Zeros}; }
    static Init ones() { return {Kind::Ones}; }
    static Init xavier(double fan_in, double fan_out) { return {Kind::XavierUniform, fan_in, fan_out}; }
    static Init normal(double stddev) { return {Kind::Normal, 0.0, 0.0, stddev}; }
    static Init embedding() { return normal(0.02); }
};

struct Parameter {
    std::string name;
    Tensor tensor;
};

// Ordered registry of a model's trainable tensors. Names are unique and the
// registration order is the checkpoint order.
class ParameterSet {
public:
    Tensor add(const std::string& name, Shape shape, const Init& init, Rng& rng) {
        if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        Tensor t(std::move(shape));
        switch (init.kind) {
            case Init::Kind::Zeros:
                break;
            case Init::Kind::Ones:
                for (double& v : t.data()) v = 1.0;
                break;
            case Init::Kind::XavierUniform: {
                const double a = std::sqrt(6.0 / (init.fan_in + init.fan_out));
                std::uniform_real_distribution<double> dist(-a, a);
                for (double& v : t.data()) v = dist(rng);
                break;
            }
            case Init::Kind::Normal: {
                std::normal_distribution<double> dist(0.0, init.stddev);
                for (double& v : t.data()) v = dist(rng);
                break;
            }
        }
        t.set_requires_grad(true);
        params_.push_back({name, t});
        return t;
    }

    const Tensor* find(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return &p.tensor;
        return nullptr;
    }

    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }
    std::size_t size() const { return params_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    void freeze(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) p.tensor.set_requires_grad(false);
    }

private:
    std::vector<Parameter> params_;
};

struct Linear {
    Tensor weight;  // in x out
    Tensor bias;    // 1 x out

    Linear() = default;
    Linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
        : weight(ps.add(name + ".weight", {in, out}, Init::xavier(double(in), double(out)), rng)),
          bias(ps.add(name + ".bias", {1, out}, Init::zeros(), rng)) {}

    Tensor operator()(const Tensor& x) const { return add_row(matmul(x, weight), bias); }
};

struct Conv1d {
    Tensor weight;  // (kernel * in) x out
    Tensor bias;
    std::size_t kernel = 1;

    Conv1d() = default;
    Conv1d(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel_size, Rng& rng)
        : kernel(kernel_size) {
        if (kernel_size % 2 == 0) throw ConfigError(name + ": kernel size must be odd, got " + std::to_string(kernel_size));
        weight = ps.add(name + ".weight", {kernel * in, out}, Init::xavier(double(kernel * in), double(kernel * out)), rng);
        bias = ps.add(name + ".bias", {1, out}, Init::zeros(), rng);
    }

    Tensor operator()(const Tensor& x) const { return conv1d(x, weight, bias, kernel); }
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    LayerNorm() = default;
    LayerNorm(ParameterSet& ps, const std::string& name, std::size_t dim, Rng& rng)
        : gamma(ps.add(name + ".gamma", {1, dim}, Init::ones(), rng)),
          beta(ps.add(name + ".beta", {1, dim}, Init::zeros(), rng)) {}

    Tensor operator()(const Tensor& x) const { return add_row(mul_row(normalize_rows(x), gamma), beta); }
};

// Scaled dot-product attention over one sequence (L x D), split into heads
// along the channel axis.
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(ParameterSet& ps, const std::string& name, std::size_t dim, std::size_t heads, Rng& rng)
        : heads_(heads) {
        if (heads == 0 || dim % heads != 0) {
            throw ConfigError(name + ": width " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
        }
        q_ = Linear(ps, name + ".q", dim, dim, rng);
        k_ = Linear(ps, name + ".k", dim, dim, rng);
        v_ = Linear(ps, name + ".v", dim, dim, rng);
        o_ = Linear(ps, name + ".o", dim, dim, rng);
    }

    // `mask`, when given, is an L x L additive term on the attention logits.
    // `weights_out` receives one L x L row-stochastic matrix per head.
    Tensor operator()(const Tensor& x, const Tensor* mask = nullptr, std::vector<Tensor>* weights_out = nullptr) const {
        const std::size_t dim = x.cols();
        const std::size_t dh = dim / heads_;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        Tensor q = q_(x), k = k_(x), v = v_(x);
        std::vector<Tensor> per_head;
        per_head.reserve(heads_);
        if (weights_out) weights_out->clear();
        for (std::size_t h = 0; h < heads_; ++h) {
            Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
            Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
            Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
            Tensor logits = scale(matmul(qh, transpose(kh)), inv_sqrt);
            if (mask) logits = add(logits, *mask);
            Tensor attn = softmax_rows(logits);
            if (weights_out) weights_out->push_back(attn);
            per_head.push_back(matmul(attn, vh));
        }
        return o_(heads_ == 1 ? per_head[0] : concat_cols(per_head));
    }

    std::size_t heads() const { return heads_; }

private:
    std::size_t heads_ = 1;
    Linear q_, k_, v_, o_;
};

// Post-norm encoder block: x = LN(x + MHA(x)); x = LN(x + FFN(x)).
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(ParameterSet& ps, const std::string& name, std::size_t dim, std::size_t heads, std::size_t ffn_dim, Rng& rng)
        : attn_(ps, name + ".attn", dim, heads, rng),
          ln1_(ps, name + ".ln1", dim, rng),
          ff1_(ps, name + ".ff1", dim, ffn_dim, rng),
          ff2_(ps, name + ".ff2", ffn_dim, dim, rng),
          ln2_(ps, name + ".ln2", dim, rng) {}

    Tensor operator()(const Tensor& x, const Tensor* mask = nullptr, std::vector<Tensor>* weights_out = nullptr) const {
        if (x.rank() != 2) throw DimensionError("transformer block expects (sequence, width), got " + shape_str(x.shape()));
        Tensor h = ln1_(add(x, attn_(x, mask, weights_out)));
        return ln2_(add(h, ff2_(relu(ff1_(h)))));
    }

    const MultiHeadAttention& attention() const { return attn_; }

private:
    MultiHeadAttention attn_;
    LayerNorm ln1_;
    Linear ff1_, ff2_;
    LayerNorm ln2_;
};

class TransformerStack {
public:
    TransformerStack() = default;
    TransformerStack(ParameterSet& ps, const std::string& name, std::size_t depth, std::size_t dim, std::size_t heads,
                     std::size_t ffn_dim, Rng& rng) {
        for (std::size_t i = 0; i < depth; ++i)
            blocks_.emplace_back(ps, name + "." + std::to_string(i), dim, heads, ffn_dim, rng);
    }

    // first_layer_weights receives the per-head attention of block 0.
    Tensor operator()(Tensor x, std::vector<Tensor>* first_layer_weights = nullptr) const {
        for (std::size_t i = 0; i < blocks_.size(); ++i) x = blocks_[i](x, nullptr, i == 0 ? first_layer_weights : nullptr);
        return x;
    }

    std::size_t depth() const { return blocks_.size(); }

private:
    std::vector<TransformerBlock> blocks_;
};

}  // namespace adstruct::nn
