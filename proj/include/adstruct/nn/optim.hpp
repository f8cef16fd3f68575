#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "adstruct/errors.hpp"
#include "adstruct/nn/layers.hpp"

namespace adstruct::nn {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay. Moment buffers are created lazily and
// keyed by registration order in the ParameterSet.
class AdamW {
public:
    explicit AdamW(AdamWConfig config = {}) : cfg_(config) {}

    // Applies one update from the gradients currently stored on the
    // parameters. Parameters that received no gradient this step are skipped
    // entirely, weight decay included.
    void step(ParameterSet& params) {
        auto& all = params.all();
        for (const auto& p : all) {
            if (!p.tensor.has_grad()) continue;
            Tensor t = p.tensor;
            for (double g : t.grad()) {
                if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter '" + p.name + "'");
            }
        }
        if (first_.size() != all.size()) {
            first_.resize(all.size());
            second_.resize(all.size());
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < all.size(); ++i) {
            Tensor& t = all[i].tensor;
            if (!t.requires_grad() || !t.has_grad()) continue;
            auto w = t.data();
            if (first_[i].size() != w.size()) {
                first_[i].assign(w.size(), 0.0);
                second_[i].assign(w.size(), 0.0);
            }
            std::span<double> g = t.grad();
            for (std::size_t j = 0; j < w.size(); ++j) {
                w[j] -= cfg_.lr * cfg_.weight_decay * w[j];
                const double gj = g[j];
                first_[i][j] = cfg_.beta1 * first_[i][j] + (1.0 - cfg_.beta1) * gj;
                second_[i][j] = cfg_.beta2 * second_[i][j] + (1.0 - cfg_.beta2) * gj * gj;
                const double mhat = first_[i][j] / bc1;
                const double vhat = second_[i][j] / bc2;
                w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    long step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    AdamWConfig cfg_;
    long step_ = 0;
    std::vector<std::vector<double>> first_;
    std::vector<std::vector<double>> second_;
};

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(ParameterSet& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params.all()) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto& p : params.all()) {
            if (!p.tensor.has_grad()) continue;
            for (double& g : p.tensor.grad()) g *= s;
        }
    }
    return norm;
}

}  // namespace adstruct::nn
