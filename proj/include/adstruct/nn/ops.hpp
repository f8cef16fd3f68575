#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <memory>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "adstruct/errors.hpp"
#include "adstruct/nn/tensor.hpp"

// Differentiable ops over rank-2 views (rows x cols). Sequences are laid out
// time-major: row t holds the channel vector of position t.
namespace adstruct::nn {

namespace kernel {

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        const double* a = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* b = B + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[p] * b[p];
            C[i * n + j] += s;
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* a = A + p * m;
        const double* b = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = a[i];
            double* c = C + i * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

}  // namespace kernel

namespace detail {

inline Tensor make_out(std::size_t rows, std::size_t cols) { return Tensor::zeros({rows, cols}); }

// Registers `fn(grad_of_out)` on the tape and flags `out` as differentiable.
template <class F>
void on_backward(Tape* tape, Tensor& out, F fn) {
    if (!tape) return;
    out.set_requires_grad(true);
    tape->record([out, fn = std::move(fn)]() mutable {
        if (!out.has_grad()) return;
        fn(std::span<const double>(out.grad()));
    });
}

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = detail::make_out(m, n);
    kernel::gemm_nn(m, n, k, a.ptr(), b.ptr(), out.ptr());
    detail::on_backward(detail::tape_for({&a, &b}), out, [a, b, m, n, k](std::span<const double> g) mutable {
        if (a.requires_grad()) kernel::gemm_nt(m, k, n, g.data(), b.ptr(), a.grad_ptr());
        if (b.requires_grad()) kernel::gemm_tn(k, n, m, a.ptr(), g.data(), b.grad_ptr());
    });
    return out;
}

inline Tensor transpose(const Tensor& x) {
    const std::size_t r = x.rows(), c = x.cols();
    Tensor out = detail::make_out(c, r);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.ptr()[j * r + i] = x.ptr()[i * c + j];
    detail::on_backward(detail::tape_for({&x}), out, [x, r, c](std::span<const double> g) mutable {
        double* gx = x.grad_ptr();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    });
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same(a, b, "add");
    Tensor out = detail::make_out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.ptr()[i] = a.ptr()[i] + b.ptr()[i];
    detail::on_backward(detail::tape_for({&a, &b}), out, [a, b](std::span<const double> g) mutable {
        if (a.requires_grad()) {
            double* ga = a.grad_ptr();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            double* gb = b.grad_ptr();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same(a, b, "sub");
    Tensor out = detail::make_out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.ptr()[i] = a.ptr()[i] - b.ptr()[i];
    detail::on_backward(detail::tape_for({&a, &b}), out, [a, b](std::span<const double> g) mutable {
        if (a.requires_grad()) {
            double* ga = a.grad_ptr();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            double* gb = b.grad_ptr();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same(a, b, "mul");
    Tensor out = detail::make_out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
    detail::on_backward(detail::tape_for({&a, &b}), out, [a, b](std::span<const double> g) mutable {
        if (a.requires_grad()) {
            double* ga = a.grad_ptr();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.ptr()[i];
        }
        if (b.requires_grad()) {
            double* gb = b.grad_ptr();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.ptr()[i];
        }
    });
    return out;
}

inline Tensor scale(const Tensor& x, double s) {
    Tensor out = detail::make_out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out.ptr()[i] = x.ptr()[i] * s;
    detail::on_backward(detail::tape_for({&x}), out, [x, s](std::span<const double> g) mutable {
        double* gx = x.grad_ptr();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
    });
    return out;
}

// x[r, :] + b for every row r.
inline Tensor add_row(const Tensor& x, const Tensor& b) {
    const std::size_t r = x.rows(), c = x.cols();
    if (b.size() != c) {
        throw DimensionError("add_row: row vector " + shape_str(b.shape()) + " does not match " + shape_str(x.shape()));
    }
    Tensor out = detail::make_out(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.ptr()[i * c + j] = x.ptr()[i * c + j] + b.ptr()[j];
    detail::on_backward(detail::tape_for({&x, &b}), out, [x, b, r, c](std::span<const double> g) mutable {
        if (x.requires_grad()) {
            double* gx = x.grad_ptr();
            for (std::size_t i = 0; i < r * c; ++i) gx[i] += g[i];
        }
        if (b.requires_grad()) {
            double* gb = b.grad_ptr();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
        }
    });
    return out;
}

// x[r, :] * s elementwise for every row r.
inline Tensor mul_row(const Tensor& x, const Tensor& s) {
    const std::size_t r = x.rows(), c = x.cols();
    if (s.size() != c) {
        throw DimensionError("mul_row: row vector " + shape_str(s.shape()) + " does not match " + shape_str(x.shape()));
    }
    Tensor out = detail::make_out(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.ptr()[i * c + j] = x.ptr()[i * c + j] * s.ptr()[j];
    detail::on_backward(detail::tape_for({&x, &s}), out, [x, s, r, c](std::span<const double> g) mutable {
        if (x.requires_grad()) {
            double* gx = x.grad_ptr();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] * s.ptr()[j];
        }
        if (s.requires_grad()) {
            double* gs = s.grad_ptr();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gs[j] += g[i * c + j] * x.ptr()[i * c + j];
        }
    });
    return out;
}

inline Tensor relu(const Tensor& x) {
    Tensor out = detail::make_out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out.ptr()[i] = x.ptr()[i] > 0.0 ? x.ptr()[i] : 0.0;
    detail::on_backward(detail::tape_for({&x}), out, [x](std::span<const double> g) mutable {
        double* gx = x.grad_ptr();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x.ptr()[i] > 0.0) gx[i] += g[i];
    });
    return out;
}

inline double sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
    Tensor out = detail::make_out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out.ptr()[i] = sigmoid(x.ptr()[i]);
    detail::on_backward(detail::tape_for({&x}), out, [x, out](std::span<const double> g) mutable {
        double* gx = x.grad_ptr();
        const double* y = out.ptr();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
    return out;
}

inline Tensor softmax_rows(const Tensor& x) {
    const std::size_t r = x.rows(), c = x.cols();
    Tensor out = detail::make_out(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        const double* xi = x.ptr() + i * c;
        double* yi = out.ptr() + i * c;
        const double mx = *std::max_element(xi, xi + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (yi[j] = std::exp(xi[j] - mx));
        for (std::size_t j = 0; j < c; ++j) yi[j] /= z;
    }
    detail::on_backward(detail::tape_for({&x}), out, [x, out, r, c](std::span<const double> g) mutable {
        double* gx = x.grad_ptr();
        for (std::size_t i = 0; i < r; ++i) {
            const double* yi = out.ptr() + i * c;
            const double* gi = g.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += gi[j] * yi[j];
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += yi[j] * (gi[j] - dot);
        }
    });
    return out;
}

// Per-row standardisation (x - mean) / sqrt(var + eps); the affine part of
// layer normalisation is applied separately with mul_row/add_row.
inline Tensor normalize_rows(const Tensor& x, double eps = 1e-5) {
    const std::size_t r = x.rows(), c = x.cols();
    Tensor out = detail::make_out(r, c);
    std::vector<double> inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* xi = x.ptr() + i * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += xi[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) out.ptr()[i * c + j] = (xi[j] - mean) * inv_std[i];
    }
    detail::on_backward(detail::tape_for({&x}), out,
                        [x, out, r, c, inv_std = std::move(inv_std)](std::span<const double> g) mutable {
                            double* gx = x.grad_ptr();
                            const double n = static_cast<double>(c);
                            for (std::size_t i = 0; i < r; ++i) {
                                const double* yi = out.ptr() + i * c;
                                const double* gi = g.data() + i * c;
                                double gmean = 0.0, gy = 0.0;
                                for (std::size_t j = 0; j < c; ++j) {
                                    gmean += gi[j];
                                    gy += gi[j] * yi[j];
                                }
                                gmean /= n;
                                gy /= n;
                                for (std::size_t j = 0; j < c; ++j)
                                    gx[i * c + j] += inv_std[i] * (gi[j] - gmean - yi[j] * gy);
                            }
                        });
    return out;
}

inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    if (begin >= end || end > x.rows()) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of range for " + shape_str(x.shape()));
    }
    const std::size_t c = x.cols();
    Tensor out = detail::make_out(end - begin, c);
    std::copy(x.ptr() + begin * c, x.ptr() + end * c, out.ptr());
    detail::on_backward(detail::tape_for({&x}), out, [x, begin, c](std::span<const double> g) mutable {
        double* gx = x.grad_ptr() + begin * c;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    return out;
}

inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    if (begin >= end || end > x.cols()) {
        throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of range for " + shape_str(x.shape()));
    }
    const std::size_t r = x.rows(), c = x.cols(), w = end - begin;
    Tensor out = detail::make_out(r, w);
    for (std::size_t i = 0; i < r; ++i) std::copy(x.ptr() + i * c + begin, x.ptr() + i * c + end, out.ptr() + i * w);
    detail::on_backward(detail::tape_for({&x}), out, [x, begin, r, c, w](std::span<const double> g) mutable {
        double* gx = x.grad_ptr();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += g[i * w + j];
    });
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t c = parts[0].cols();
    std::size_t r = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw DimensionError("concat_rows: width mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        r += p.rows();
    }
    Tensor out = detail::make_out(r, c);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.ptr(), p.ptr() + p.size(), out.ptr() + off);
        off += p.size();
    }
    detail::on_backward(detail::tape_for(parts), out, [parts](std::span<const double> g) mutable {
        std::size_t off = 0;
        for (auto& p : parts) {
            if (p.requires_grad()) {
                double* gp = p.grad_ptr();
                for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g[off + i];
            }
            off += p.size();
        }
    });
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t r = parts[0].rows();
    std::size_t c = 0;
    for (const auto& p : parts) {
        if (p.rows() != r) throw DimensionError("concat_cols: length mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        c += p.cols();
    }
    Tensor out = detail::make_out(r, c);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < r; ++i) std::copy(p.ptr() + i * w, p.ptr() + (i + 1) * w, out.ptr() + i * c + off);
        off += w;
    }
    detail::on_backward(detail::tape_for(parts), out, [parts, r, c](std::span<const double> g) mutable {
        std::size_t off = 0;
        for (auto& p : parts) {
            const std::size_t w = p.cols();
            if (p.requires_grad()) {
                double* gp = p.grad_ptr();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * c + off + j];
            }
            off += w;
        }
    });
    return out;
}

// Embedding lookup: row ids[k] of `table` becomes row k of the result.
inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
    if (ids.empty()) throw DimensionError("gather_rows: empty id list");
    const std::size_t c = table.cols();
    Tensor out = detail::make_out(ids.size(), c);
    for (std::size_t k = 0; k < ids.size(); ++k) {
        if (ids[k] >= table.rows()) {
            throw InputError("gather_rows: id " + std::to_string(ids[k]) + " out of range for table of " +
                             std::to_string(table.rows()) + " rows");
        }
        std::copy(table.ptr() + ids[k] * c, table.ptr() + (ids[k] + 1) * c, out.ptr() + k * c);
    }
    std::vector<std::size_t> idv(ids.begin(), ids.end());
    detail::on_backward(detail::tape_for({&table}), out, [table, idv = std::move(idv), c](std::span<const double> g) mutable {
        double* gt = table.grad_ptr();
        for (std::size_t k = 0; k < idv.size(); ++k)
            for (std::size_t j = 0; j < c; ++j) gt[idv[k] * c + j] += g[k * c + j];
    });
    return out;
}

// Mean of rows [begin, end] inclusive, as a 1 x cols row.
inline Tensor mean_rows(const Tensor& x, std::size_t first, std::size_t last) {
    if (first > last || last >= x.rows()) {
        throw InputError("mean_rows: span [" + std::to_string(first) + ", " + std::to_string(last) +
                         "] out of range for " + std::to_string(x.rows()) + " rows");
    }
    const std::size_t c = x.cols();
    const double inv = 1.0 / static_cast<double>(last - first + 1);
    Tensor out = detail::make_out(1, c);
    for (std::size_t i = first; i <= last; ++i)
        for (std::size_t j = 0; j < c; ++j) out.ptr()[j] += x.ptr()[i * c + j];
    for (std::size_t j = 0; j < c; ++j) out.ptr()[j] *= inv;
    detail::on_backward(detail::tape_for({&x}), out, [x, first, last, c, inv](std::span<const double> g) mutable {
        double* gx = x.grad_ptr();
        for (std::size_t i = first; i <= last; ++i)
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j] * inv;
    });
    return out;
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor out = Tensor::scalar(s);
    detail::on_backward(detail::tape_for({&x}), out, [x](std::span<const double> g) mutable {
        double* gx = x.grad_ptr();
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[0];
    });
    return out;
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// Temporal convolution with "same" zero padding.
// x: T x C_in, weight: (kernel * C_in) x C_out with tap k occupying rows
// [k * C_in, (k + 1) * C_in), bias: 1 x C_out.
inline Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t kernel) {
    if (kernel % 2 == 0) throw ConfigError("conv1d: kernel size must be odd, got " + std::to_string(kernel));
    const std::size_t T = x.rows(), cin = x.cols(), cout = weight.cols();
    if (weight.rows() != kernel * cin) {
        throw DimensionError("conv1d: weight " + shape_str(weight.shape()) + " does not match kernel " +
                             std::to_string(kernel) + " and input " + shape_str(x.shape()));
    }
    if (bias.size() != cout) throw DimensionError("conv1d: bias " + shape_str(bias.shape()) + " vs " + std::to_string(cout) + " outputs");
    const long half = static_cast<long>(kernel / 2);
    Tensor out = detail::make_out(T, cout);
    for (std::size_t t = 0; t < T; ++t) std::copy(bias.ptr(), bias.ptr() + cout, out.ptr() + t * cout);
    // For tap k, output rows [t0, t1) read input rows shifted by k - half.
    auto tap_range = [T, half](std::size_t k) {
        const long shift = static_cast<long>(k) - half;
        const long t0 = std::max(0L, -shift);
        const long t1 = std::min(static_cast<long>(T), static_cast<long>(T) - shift);
        return std::tuple<long, long, long>{shift, t0, t1};
    };
    for (std::size_t k = 0; k < kernel; ++k) {
        auto [shift, t0, t1] = tap_range(k);
        if (t1 <= t0) continue;
        kernel::gemm_nn(static_cast<std::size_t>(t1 - t0), cout, cin, x.ptr() + (t0 + shift) * cin,
                        weight.ptr() + k * cin * cout, out.ptr() + t0 * cout);
    }
    detail::on_backward(detail::tape_for({&x, &weight, &bias}), out,
                        [x, weight, bias, kernel, cin, cout, T, tap_range](std::span<const double> g) mutable {
                            for (std::size_t k = 0; k < kernel; ++k) {
                                auto [shift, t0, t1] = tap_range(k);
                                if (t1 <= t0) continue;
                                const auto n = static_cast<std::size_t>(t1 - t0);
                                if (x.requires_grad())
                                    kernel::gemm_nt(n, cin, cout, g.data() + t0 * cout, weight.ptr() + k * cin * cout,
                                                    x.grad_ptr() + (t0 + shift) * cin);
                                if (weight.requires_grad())
                                    kernel::gemm_tn(cin, cout, n, x.ptr() + (t0 + shift) * cin, g.data() + t0 * cout,
                                                    weight.grad_ptr() + k * cin * cout);
                            }
                            if (bias.requires_grad()) {
                                double* gb = bias.grad_ptr();
                                for (std::size_t t = 0; t < T; ++t)
                                    for (std::size_t o = 0; o < cout; ++o) gb[o] += g[t * cout + o];
                            }
                        });
    return out;
}

// Temporal max pooling with "same" padding (padding positions never win).
inline Tensor max_pool1d(const Tensor& x, std::size_t kernel) {
    if (kernel % 2 == 0) throw ConfigError("max_pool1d: kernel size must be odd, got " + std::to_string(kernel));
    const std::size_t T = x.rows(), c = x.cols();
    const std::size_t half = kernel / 2;
    Tensor out = detail::make_out(T, c);
    std::vector<std::size_t> arg(T * c);
    for (std::size_t t = 0; t < T; ++t) {
        const std::size_t lo = t >= half ? t - half : 0;
        const std::size_t hi = std::min(T - 1, t + half);
        for (std::size_t j = 0; j < c; ++j) {
            std::size_t best = lo;
            for (std::size_t s = lo + 1; s <= hi; ++s)
                if (x.ptr()[s * c + j] > x.ptr()[best * c + j]) best = s;
            arg[t * c + j] = best;
            out.ptr()[t * c + j] = x.ptr()[best * c + j];
        }
    }
    detail::on_backward(detail::tape_for({&x}), out, [x, arg = std::move(arg), c](std::span<const double> g) mutable {
        double* gx = x.grad_ptr();
        for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i] * c + i % c] += g[i];
    });
    return out;
}

inline constexpr double kProbClamp = 1e-12;

// Weighted binary cross entropy on probabilities:
//   -sum_i w_i [y_i log p_i + (1 - y_i) log(1 - p_i)] / sum_i w_i
// with both logs clamped at kProbClamp. Targets may be soft (in [0, 1]).
inline Tensor binary_cross_entropy(const Tensor& p, std::span<const double> target, std::span<const double> weight = {}) {
    const std::size_t n = p.size();
    if (target.size() != n || (!weight.empty() && weight.size() != n)) {
        throw InputError("binary_cross_entropy: " + std::to_string(n) + " predictions vs " +
                         std::to_string(target.size()) + " targets");
    }
    double wsum = 0.0, loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = weight.empty() ? 1.0 : weight[i];
        if (w == 0.0) continue;
        const double pi = p.ptr()[i];
        loss -= w * (target[i] * std::log(std::max(pi, kProbClamp)) +
                     (1.0 - target[i]) * std::log(std::max(1.0 - pi, kProbClamp)));
        wsum += w;
    }
    if (wsum <= 0.0) throw TrainingError("binary_cross_entropy: no positively weighted entries");
    Tensor out = Tensor::scalar(loss / wsum);
    std::vector<double> y(target.begin(), target.end());
    std::vector<double> w(weight.begin(), weight.end());
    detail::on_backward(detail::tape_for({&p}), out, [p, y = std::move(y), w = std::move(w), wsum, n](std::span<const double> g) mutable {
        double* gp = p.grad_ptr();
        for (std::size_t i = 0; i < n; ++i) {
            const double wi = w.empty() ? 1.0 : w[i];
            if (wi == 0.0) continue;
            const double pi = p.ptr()[i];
            double d = 0.0;
            if (pi > kProbClamp) d -= y[i] / pi;
            if (1.0 - pi > kProbClamp) d += (1.0 - y[i]) / (1.0 - pi);
            gp[i] += g[0] * wi * d / wsum;
        }
    });
    return out;
}

// sum_i w_i (p_i - y_i)^2 / sum_i w_i
inline Tensor weighted_mse(const Tensor& p, std::span<const double> target, std::span<const double> weight) {
    const std::size_t n = p.size();
    if (target.size() != n || weight.size() != n) throw InputError("weighted_mse: size mismatch");
    double wsum = 0.0, loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = p.ptr()[i] - target[i];
        loss += weight[i] * d * d;
        wsum += weight[i];
    }
    if (wsum <= 0.0) throw TrainingError("weighted_mse: no positively weighted entries");
    Tensor out = Tensor::scalar(loss / wsum);
    std::vector<double> y(target.begin(), target.end());
    std::vector<double> w(weight.begin(), weight.end());
    detail::on_backward(detail::tape_for({&p}), out, [p, y = std::move(y), w = std::move(w), wsum, n](std::span<const double> g) mutable {
        double* gp = p.grad_ptr();
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[0] * 2.0 * w[i] * (p.ptr()[i] - y[i]) / wsum;
    });
    return out;
}

// Fixed linear resampling: output row r, group s is the two-tap blend
//   sum_{q in {0,1}} weight[r, s, q] * x[index[r, s, q], :]
// written to columns [s * C, (s + 1) * C).
struct SamplingPlan {
    std::size_t input_rows = 0;
    std::size_t output_rows = 0;
    std::size_t groups = 0;
    std::vector<std::uint32_t> index;  // output_rows * groups * 2
    std::vector<double> weight;        // same layout
};

inline Tensor sample_rows(const Tensor& x, std::shared_ptr<const SamplingPlan> plan_ptr) {
    const SamplingPlan& plan = *plan_ptr;
    if (x.rows() != plan.input_rows) {
        throw DimensionError("sample_rows: plan expects " + std::to_string(plan.input_rows) + " input rows, got " +
                             shape_str(x.shape()));
    }
    const std::size_t c = x.cols(), width = plan.groups * c;
    Tensor out = detail::make_out(plan.output_rows, width);
    for (std::size_t r = 0; r < plan.output_rows; ++r) {
        for (std::size_t s = 0; s < plan.groups; ++s) {
            double* o = out.ptr() + r * width + s * c;
            for (std::size_t q = 0; q < 2; ++q) {
                const std::size_t k = (r * plan.groups + s) * 2 + q;
                const double w = plan.weight[k];
                if (w == 0.0) continue;
                const double* xi = x.ptr() + plan.index[k] * c;
                for (std::size_t j = 0; j < c; ++j) o[j] += w * xi[j];
            }
        }
    }
    detail::on_backward(detail::tape_for({&x}), out, [x, plan_ptr, c, width](std::span<const double> g) mutable {
        const SamplingPlan& plan = *plan_ptr;
        double* gx = x.grad_ptr();
        for (std::size_t r = 0; r < plan.output_rows; ++r) {
            for (std::size_t s = 0; s < plan.groups; ++s) {
                const double* gi = g.data() + r * width + s * c;
                for (std::size_t q = 0; q < 2; ++q) {
                    const std::size_t k = (r * plan.groups + s) * 2 + q;
                    const double w = plan.weight[k];
                    if (w == 0.0) continue;
                    double* gxi = gx + plan.index[k] * c;
                    for (std::size_t j = 0; j < c; ++j) gxi[j] += w * gi[j];
                }
            }
        }
    });
    return out;
}

// Sparse 2-D grid: some cells of a height x width lattice are present, each
// mapped to a tensor row. Absent cells read as zeros.
struct GridIndex {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<long> row_of_cell;                           // height * width, -1 when absent
    std::vector<std::pair<std::size_t, std::size_t>> cells;  // (h, w) of each row

    std::size_t rows() const { return cells.size(); }
    long row(long h, long w) const {
        if (h < 0 || w < 0 || h >= static_cast<long>(height) || w >= static_cast<long>(width)) return -1;
        return row_of_cell[static_cast<std::size_t>(h) * width + static_cast<std::size_t>(w)];
    }
};

// 3x3 "same" convolution over the present cells of a GridIndex.
// weight: (9 * C_in) x C_out, tap (dh, dw) at block (dh + 1) * 3 + (dw + 1).
inline Tensor grid_conv3x3(const Tensor& x, const GridIndex& grid, const Tensor& weight, const Tensor& bias) {
    const std::size_t R = x.rows(), cin = x.cols(), cout = weight.cols();
    if (R != grid.rows()) throw DimensionError("grid_conv3x3: grid has " + std::to_string(grid.rows()) + " cells, input " + shape_str(x.shape()));
    if (weight.rows() != 9 * cin || bias.size() != cout) {
        throw DimensionError("grid_conv3x3: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
    }
    // neighbour row of each (row, tap), -1 when absent
    std::vector<long> nb(R * 9);
    for (std::size_t r = 0; r < R; ++r) {
        const auto [h, w] = grid.cells[r];
        for (int dh = -1; dh <= 1; ++dh)
            for (int dw = -1; dw <= 1; ++dw)
                nb[r * 9 + static_cast<std::size_t>((dh + 1) * 3 + (dw + 1))] =
                    grid.row(static_cast<long>(h) + dh, static_cast<long>(w) + dw);
    }
    Tensor out = detail::make_out(R, cout);
    for (std::size_t r = 0; r < R; ++r) std::copy(bias.ptr(), bias.ptr() + cout, out.ptr() + r * cout);
    std::vector<double> gathered(R * cin);
    auto gather = [&](std::size_t tap, const double* src) {
        for (std::size_t r = 0; r < R; ++r) {
            const long n = nb[r * 9 + tap];
            if (n < 0)
                std::fill_n(gathered.data() + r * cin, cin, 0.0);
            else
                std::copy_n(src + static_cast<std::size_t>(n) * cin, cin, gathered.data() + r * cin);
        }
    };
    for (std::size_t tap = 0; tap < 9; ++tap) {
        gather(tap, x.ptr());
        kernel::gemm_nn(R, cout, cin, gathered.data(), weight.ptr() + tap * cin * cout, out.ptr());
    }
    detail::on_backward(detail::tape_for({&x, &weight, &bias}), out,
                        [x, weight, bias, nb = std::move(nb), R, cin, cout](std::span<const double> g) mutable {
                            std::vector<double> buf(R * cin);
                            for (std::size_t tap = 0; tap < 9; ++tap) {
                                if (weight.requires_grad()) {
                                    for (std::size_t r = 0; r < R; ++r) {
                                        const long n = nb[r * 9 + tap];
                                        if (n < 0)
                                            std::fill_n(buf.data() + r * cin, cin, 0.0);
                                        else
                                            std::copy_n(x.ptr() + static_cast<std::size_t>(n) * cin, cin, buf.data() + r * cin);
                                    }
                                    kernel::gemm_tn(cin, cout, R, buf.data(), g.data(), weight.grad_ptr() + tap * cin * cout);
                                }
                                if (x.requires_grad()) {
                                    std::fill(buf.begin(), buf.end(), 0.0);
                                    kernel::gemm_nt(R, cin, cout, g.data(), weight.ptr() + tap * cin * cout, buf.data());
                                    double* gx = x.grad_ptr();
                                    for (std::size_t r = 0; r < R; ++r) {
                                        const long n = nb[r * 9 + tap];
                                        if (n < 0) continue;
                                        for (std::size_t j = 0; j < cin; ++j)
                                            gx[static_cast<std::size_t>(n) * cin + j] += buf[r * cin + j];
                                    }
                                }
                            }
                            if (bias.requires_grad()) {
                                double* gb = bias.grad_ptr();
                                for (std::size_t r = 0; r < R; ++r)
                                    for (std::size_t o = 0; o < cout; ++o) gb[o] += g[r * cout + o];
                            }
                        });
    return out;
}

}  // namespace adstruct::nn
