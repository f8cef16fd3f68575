#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "adstruct/nn/tensor.hpp"

// Central-difference gradient oracle. Independent of the tape: it only ever
// evaluates `fn` forward with perturbed input values.
namespace testsupport {

using adstruct::nn::Tensor;

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;
// Denominator floor: central differences at h=1e-5 carry ~1e-10 of round-off,
// so gradients below this are compared on an absolute 1e-9 scale.
inline constexpr double kRelativeFloor = 1e-5;

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries whose
// true gradient is zero from dividing round-off by round-off.
inline double relative_error(double analytic, double numeric, double floor = kRelativeFloor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

// `loss` must build a fresh scalar from the current values of `inputs` every
// time it is called. Every entry of every input is perturbed.
inline GradCheckResult gradcheck(const std::function<Tensor()>& loss, std::vector<Tensor> inputs, double h = kFdStep) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    {
        adstruct::nn::Tape tape;
        adstruct::nn::GradRecorder rec(tape);
        Tensor out = loss();
        tape.backward(out);
    }
    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) {
        if (t.has_grad()) {
            auto g = t.grad();
            analytic.emplace_back(g.begin(), g.end());
        } else {
            analytic.emplace_back(t.size(), 0.0);
        }
        t.zero_grad();
    }
    GradCheckResult res;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto data = inputs[k].data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + h;
            const double fp = loss().item();
            data[i] = orig - h;
            const double fm = loss().item();
            data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic[k][i], numeric));
            ++res.checked;
        }
    }
    return res;
}

inline Tensor random_tensor(adstruct::nn::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : t.data()) v = d(rng);
    return t;
}

// Moves every parameter to a generic point. Zero-initialised biases put ReLU
// inputs exactly on the kink whenever an upstream channel is dead, where the
// one-sided derivative and central differences legitimately disagree.
template <class Params>
void randomize_parameters(Params& ps, std::mt19937_64& rng, double scale = 0.1) {
    std::uniform_real_distribution<double> d(-scale, scale);
    for (auto& p : ps.all())
        for (double& v : p.tensor.data()) v += d(rng);
}

// Scalar projection <out, R> with a fixed random R, so every output entry
// carries a distinct weight into the loss.
inline Tensor project(const Tensor& out, const Tensor& weights) {
    return adstruct::nn::sum(adstruct::nn::mul(out, weights));
}

}  // namespace testsupport
