#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "andt/tensor.hpp"

// Dense kernels used by the model: each forward op here has a matching
// vector-Jacobian rule next to it. All reductions accumulate in double
// regardless of the stored scalar type, and every loop runs in a fixed
// order so results are bit-identical across runs.

namespace andt {

// ---------------------------------------------------------------------------
// matmul

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.extent(1) != b.extent(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor<S> c({m, n});
    std::vector<double> row(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(row.begin(), row.end(), 0.0);
        for (std::size_t r = 0; r < k; ++r) {
            const double air = static_cast<double>(a[i * k + r]);
            if (air == 0.0) continue;
            const S* brow = b.data() + r * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += air * static_cast<double>(brow[j]);
        }
        S* crow = c.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<S>(row[j]);
    }
    return c;
}

/// c = a*b; given dc returns (da, db).
template <typename S>
void matmul_backward(const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>& dc,
                     Tensor<S>& da, Tensor<S>& db) {
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    da = Tensor<S>({m, k});
    db = Tensor<S>({k, n});
    // da = dc * b^T
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t r = 0; r < k; ++r) {
            double acc = 0.0;
            const S* dcrow = dc.data() + i * n;
            const S* brow = b.data() + r * n;
            for (std::size_t j = 0; j < n; ++j)
                acc += static_cast<double>(dcrow[j]) * static_cast<double>(brow[j]);
            da[i * k + r] = static_cast<S>(acc);
        }
    // db = a^T * dc
    std::vector<double> dbrow(n);
    for (std::size_t r = 0; r < k; ++r) {
        std::fill(dbrow.begin(), dbrow.end(), 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            const double air = static_cast<double>(a[i * k + r]);
            if (air == 0.0) continue;
            const S* dcrow = dc.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) dbrow[j] += air * static_cast<double>(dcrow[j]);
        }
        for (std::size_t j = 0; j < n; ++j) db[r * n + j] = static_cast<S>(dbrow[j]);
    }
}

// ---------------------------------------------------------------------------
// affine map: y = x*w + b (b broadcast over rows)

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    Tensor<S> y = matmul(x, w);
    const std::size_t rows = y.extent(0), cols = y.extent(1);
    if (b.numel() != cols)
        throw ShapeError("linear: bias length " + std::to_string(b.numel()) +
                         " does not match output width " + std::to_string(cols));
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) y[i * cols + j] += b[j];
    return y;
}

template <typename S>
void linear_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy,
                     Tensor<S>& dx, Tensor<S>& dw, Tensor<S>& db) {
    matmul_backward(x, w, dy, dx, dw);
    const std::size_t rows = dy.extent(0), cols = dy.extent(1);
    db = Tensor<S>({cols});
    for (std::size_t j = 0; j < cols; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < rows; ++i) acc += static_cast<double>(dy[i * cols + j]);
        db[j] = static_cast<S>(acc);
    }
}

// ---------------------------------------------------------------------------
// layer norm over the last axis (population variance)

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     double eps) {
    if (x.ndim() == 0 || x.numel() == 0) throw ShapeError("layer_norm: empty input");
    const std::size_t d = x.extent(x.ndim() - 1);
    if (gamma.numel() != d || beta.numel() != d)
        throw ShapeError("layer_norm: gamma/beta length must equal last extent " +
                         std::to_string(d) + ", got " + std::to_string(gamma.numel()) + "/" +
                         std::to_string(beta.numel()));
    if (eps < 0.0) throw ConfigError("layer_norm: eps must be >= 0");
    const std::size_t slices = x.numel() / d;
    Tensor<S> y(x.shape());
    for (std::size_t s = 0; s < slices; ++s) {
        const S* xs = x.data() + s * d;
        S* ys = y.data() + s * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += static_cast<double>(xs[j]);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = static_cast<double>(xs[j]) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (static_cast<double>(xs[j]) - mean) * inv;
            ys[j] = static_cast<S>(static_cast<double>(gamma[j]) * xhat +
                                   static_cast<double>(beta[j]));
        }
    }
    return y;
}

template <typename S>
void layer_norm_backward(const Tensor<S>& x, const Tensor<S>& gamma, double eps,
                         const Tensor<S>& dy, Tensor<S>& dx, Tensor<S>& dgamma,
                         Tensor<S>& dbeta) {
    const std::size_t d = x.extent(x.ndim() - 1);
    const std::size_t slices = x.numel() / d;
    dx = Tensor<S>(x.shape());
    dgamma = Tensor<S>({d});
    dbeta = Tensor<S>({d});
    std::vector<double> xhat(d), dg(d, 0.0), db(d, 0.0);
    for (std::size_t s = 0; s < slices; ++s) {
        const S* xs = x.data() + s * d;
        const S* dys = dy.data() + s * d;
        S* dxs = dx.data() + s * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += static_cast<double>(xs[j]);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = static_cast<double>(xs[j]) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        double g_mean = 0.0, gx_mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            xhat[j] = (static_cast<double>(xs[j]) - mean) * inv;
            const double g = static_cast<double>(gamma[j]) * static_cast<double>(dys[j]);
            g_mean += g;
            gx_mean += g * xhat[j];
        }
        g_mean /= static_cast<double>(d);
        gx_mean /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double g = static_cast<double>(gamma[j]) * static_cast<double>(dys[j]);
            dxs[j] = static_cast<S>(inv * (g - g_mean - xhat[j] * gx_mean));
            dg[j] += static_cast<double>(dys[j]) * xhat[j];
            db[j] += static_cast<double>(dys[j]);
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        dgamma[j] = static_cast<S>(dg[j]);
        dbeta[j] = static_cast<S>(db[j]);
    }
}

// ---------------------------------------------------------------------------
// softmax along an axis, computed with max subtraction

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, std::size_t axis) {
    if (axis >= x.ndim())
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    const std::size_t n = x.extent(axis);
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= x.extent(d);
    for (std::size_t d = axis + 1; d < x.ndim(); ++d) inner *= x.extent(d);
    Tensor<S> y(x.shape());
    std::vector<double> e(n);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j)
                mx = std::max(mx, static_cast<double>(x[base + j * inner]));
            double z = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                e[j] = std::exp(static_cast<double>(x[base + j * inner]) - mx);
                z += e[j];
            }
            for (std::size_t j = 0; j < n; ++j)
                y[base + j * inner] = static_cast<S>(e[j] / z);
        }
    return y;
}

/// dx from the softmax output y: dx = y .* (dy - sum(dy .* y)) per slice.
template <typename S>
Tensor<S> softmax_backward(const Tensor<S>& y, const Tensor<S>& dy, std::size_t axis) {
    const std::size_t n = y.extent(axis);
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= y.extent(d);
    for (std::size_t d = axis + 1; d < y.ndim(); ++d) inner *= y.extent(d);
    Tensor<S> dx(y.shape());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                dot += static_cast<double>(dy[base + j * inner]) *
                       static_cast<double>(y[base + j * inner]);
            for (std::size_t j = 0; j < n; ++j)
                dx[base + j * inner] =
                    static_cast<S>(static_cast<double>(y[base + j * inner]) *
                                   (static_cast<double>(dy[base + j * inner]) - dot));
        }
    return dx;
}

// ---------------------------------------------------------------------------
// multi-head self-attention over a (rows x width) sequence

template <typename S>
struct AttentionTrace {
    Tensor<S> q, k, v;   // rows x width
    Tensor<S> attn;      // heads x rows x rows, rows sum to 1
    Tensor<S> context;   // rows x width, heads concatenated
    std::size_t heads = 1;
};

template <typename S>
Tensor<S> multi_head_attention(const Tensor<S>& z, const Tensor<S>& wq, const Tensor<S>& wk,
                               const Tensor<S>& wv, const Tensor<S>& wo, std::size_t heads,
                               AttentionTrace<S>* trace = nullptr) {
    if (z.ndim() != 2)
        throw ShapeError("attention: input must be 2-d, got " + shape_str(z.shape()));
    const std::size_t rows = z.extent(0), width = z.extent(1);
    for (const Tensor<S>* w : {&wq, &wk, &wv, &wo})
        if (w->ndim() != 2 || w->extent(0) != width || w->extent(1) != width)
            throw ShapeError("attention: projection must be " + std::to_string(width) + "x" +
                             std::to_string(width) + ", got " + shape_str(w->shape()));
    if (heads == 0 || width % heads != 0)
        throw ConfigError("attention: width " + std::to_string(width) +
                          " not divisible by heads " + std::to_string(heads));
    const std::size_t hd = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor<S> q = matmul(z, wq);
    Tensor<S> k = matmul(z, wk);
    Tensor<S> v = matmul(z, wv);

    Tensor<S> attn({heads, rows, rows});
    Tensor<S> context({rows, width});
    std::vector<double> srow(rows);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t col = h * hd;
        for (std::size_t i = 0; i < rows; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < rows; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < hd; ++c)
                    dot += static_cast<double>(q[i * width + col + c]) *
                           static_cast<double>(k[j * width + col + c]);
                srow[j] = dot * scale;
                mx = std::max(mx, srow[j]);
            }
            double zsum = 0.0;
            for (std::size_t j = 0; j < rows; ++j) {
                srow[j] = std::exp(srow[j] - mx);
                zsum += srow[j];
            }
            S* arow = attn.data() + (h * rows + i) * rows;
            for (std::size_t j = 0; j < rows; ++j)
                arow[j] = static_cast<S>(srow[j] / zsum);
            for (std::size_t c = 0; c < hd; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < rows; ++j)
                    acc += static_cast<double>(arow[j]) *
                           static_cast<double>(v[j * width + col + c]);
                context[i * width + col + c] = static_cast<S>(acc);
            }
        }
    }
    Tensor<S> out = matmul(context, wo);
    if (trace) {
        trace->q = std::move(q);
        trace->k = std::move(k);
        trace->v = std::move(v);
        trace->attn = std::move(attn);
        trace->context = std::move(context);
        trace->heads = heads;
    }
    return out;
}

template <typename S>
struct AttentionGrads {
    Tensor<S> dz, dwq, dwk, dwv, dwo;
};

template <typename S>
AttentionGrads<S> multi_head_attention_backward(const Tensor<S>& z, const Tensor<S>& wq,
                                                const Tensor<S>& wk, const Tensor<S>& wv,
                                                const Tensor<S>& wo,
                                                const AttentionTrace<S>& trace,
                                                const Tensor<S>& dout) {
    const std::size_t rows = z.extent(0), width = z.extent(1);
    const std::size_t heads = trace.heads, hd = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    AttentionGrads<S> g;
    Tensor<S> dcontext;
    matmul_backward(trace.context, wo, dout, dcontext, g.dwo);

    std::vector<double> dqa(rows * width, 0.0), dka(rows * width, 0.0), dva(rows * width, 0.0);
    std::vector<double> da(rows), ds(rows);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t col = h * hd;
        for (std::size_t i = 0; i < rows; ++i) {
            const S* arow = trace.attn.data() + (h * rows + i) * rows;
            // da = dcontext_h . v_h^T ; dv += A^T . dcontext_h
            for (std::size_t j = 0; j < rows; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < hd; ++c)
                    acc += static_cast<double>(dcontext[i * width + col + c]) *
                           static_cast<double>(trace.v[j * width + col + c]);
                da[j] = acc;
                const double aij = static_cast<double>(arow[j]);
                for (std::size_t c = 0; c < hd; ++c)
                    dva[j * width + col + c] +=
                        aij * static_cast<double>(dcontext[i * width + col + c]);
            }
            // softmax backward on this attention row, then the score scale
            double dot = 0.0;
            for (std::size_t j = 0; j < rows; ++j) dot += da[j] * static_cast<double>(arow[j]);
            for (std::size_t j = 0; j < rows; ++j)
                ds[j] = static_cast<double>(arow[j]) * (da[j] - dot) * scale;
            // dq_i += ds_j * k_j ; dk_j += ds_j * q_i
            for (std::size_t j = 0; j < rows; ++j) {
                if (ds[j] == 0.0) continue;
                for (std::size_t c = 0; c < hd; ++c) {
                    dqa[i * width + col + c] +=
                        ds[j] * static_cast<double>(trace.k[j * width + col + c]);
                    dka[j * width + col + c] +=
                        ds[j] * static_cast<double>(trace.q[i * width + col + c]);
                }
            }
        }
    }
    Tensor<S> dq({rows, width}), dk({rows, width}), dv({rows, width});
    for (std::size_t i = 0; i < rows * width; ++i) {
        dq[i] = static_cast<S>(dqa[i]);
        dk[i] = static_cast<S>(dka[i]);
        dv[i] = static_cast<S>(dva[i]);
    }

    Tensor<S> dz_q, dz_k, dz_v;
    matmul_backward(z, wq, dq, dz_q, g.dwq);
    matmul_backward(z, wk, dk, dz_k, g.dwk);
    matmul_backward(z, wv, dv, dz_v, g.dwv);
    g.dz = dz_q;
    add_into(g.dz, dz_k);
    add_into(g.dz, dz_v);
    return g;
}

// ---------------------------------------------------------------------------
// 2-d cross-correlation, kernels [C_out x C_in x kh x kw], input [C_in x H x W]

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, std::size_t stride, std::size_t pad) {
    if (x.ndim() != 3 || w.ndim() != 4 || w.extent(1) != x.extent(0))
        throw ShapeError("conv2d: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    const std::size_t cin = x.extent(0), h = x.extent(1), wd = x.extent(2);
    const std::size_t cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    if (h + 2 * pad < kh || wd + 2 * pad < kw)
        throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
    if ((h + 2 * pad - kh) % stride != 0 || (wd + 2 * pad - kw) % stride != 0)
        throw ShapeError("conv2d: non-integral output extent for input " + shape_str(x.shape()) +
                         ", kernel " + shape_str(w.shape()) + ", stride " +
                         std::to_string(stride) + ", pad " + std::to_string(pad));
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (wd + 2 * pad - kw) / stride + 1;

    std::vector<double> acc(cout * ho * wo, 0.0);
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t u = 0; u < kh; ++u)
                for (std::size_t v = 0; v < kw; ++v) {
                    const double wv = static_cast<double>(w[((o * cin + c) * kh + u) * kw + v]);
                    if (wv == 0.0) continue;
                    for (std::size_t i = 0; i < ho; ++i) {
                        const std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(i * stride + u) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
                        const S* xrow = x.data() + (c * h + yi) * wd;
                        double* arow = acc.data() + (o * ho + i) * wo;
                        for (std::size_t j = 0; j < wo; ++j) {
                            const std::ptrdiff_t xj =
                                static_cast<std::ptrdiff_t>(j * stride + v) -
                                static_cast<std::ptrdiff_t>(pad);
                            if (xj < 0 || xj >= static_cast<std::ptrdiff_t>(wd)) continue;
                            arow[j] += wv * static_cast<double>(xrow[xj]);
                        }
                    }
                }
    Tensor<S> y({cout, ho, wo});
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = static_cast<S>(acc[i]);
    return y;
}

template <typename S>
void conv2d_backward(const Tensor<S>& x, const Tensor<S>& w, std::size_t stride, std::size_t pad,
                     const Tensor<S>& dy, Tensor<S>& dx, Tensor<S>& dw) {
    const std::size_t cin = x.extent(0), h = x.extent(1), wd = x.extent(2);
    const std::size_t cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    const std::size_t ho = dy.extent(1), wo = dy.extent(2);
    std::vector<double> dxa(x.numel(), 0.0);
    dw = Tensor<S>(w.shape());
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t u = 0; u < kh; ++u)
                for (std::size_t v = 0; v < kw; ++v) {
                    const double wv = static_cast<double>(w[((o * cin + c) * kh + u) * kw + v]);
                    double dwacc = 0.0;
                    for (std::size_t i = 0; i < ho; ++i) {
                        const std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(i * stride + u) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
                        const S* xrow = x.data() + (c * h + yi) * wd;
                        double* dxrow = dxa.data() + (c * h + yi) * wd;
                        const S* dyrow = dy.data() + (o * ho + i) * wo;
                        for (std::size_t j = 0; j < wo; ++j) {
                            const std::ptrdiff_t xj =
                                static_cast<std::ptrdiff_t>(j * stride + v) -
                                static_cast<std::ptrdiff_t>(pad);
                            if (xj < 0 || xj >= static_cast<std::ptrdiff_t>(wd)) continue;
                            const double g = static_cast<double>(dyrow[j]);
                            dxrow[xj] += wv * g;
                            dwacc += g * static_cast<double>(xrow[xj]);
                        }
                    }
                    dw[((o * cin + c) * kh + u) * kw + v] = static_cast<S>(dwacc);
                }
    dx = Tensor<S>(x.shape());
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = static_cast<S>(dxa[i]);
}

/// Per-output-channel bias for the conv path.
template <typename S>
Tensor<S> add_channel_bias(const Tensor<S>& x, const Tensor<S>& b) {
    if (x.ndim() != 3 || b.numel() != x.extent(0))
        throw ShapeError("add_channel_bias: bias " + shape_str(b.shape()) + " vs input " +
                         shape_str(x.shape()));
    Tensor<S> y = x;
    const std::size_t c = x.extent(0), hw = x.extent(1) * x.extent(2);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) y[ch * hw + i] += b[ch];
    return y;
}

template <typename S>
Tensor<S> channel_bias_backward(const Tensor<S>& dy) {
    const std::size_t c = dy.extent(0), hw = dy.extent(1) * dy.extent(2);
    Tensor<S> db({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += static_cast<double>(dy[ch * hw + i]);
        db[ch] = static_cast<S>(acc);
    }
    return db;
}

// ---------------------------------------------------------------------------
// nearest-neighbour 2x upsampling, [C x H x W] -> [C x 2H x 2W]

template <typename S>
Tensor<S> upsample_nn_2x(const Tensor<S>& x) {
    if (x.ndim() != 3)
        throw ShapeError("upsample_nn_2x: want [C x H x W], got " + shape_str(x.shape()));
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    Tensor<S> y({c, 2 * h, 2 * w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const S v = x[(ch * h + i) * w + j];
                S* base = y.data() + (ch * 2 * h + 2 * i) * 2 * w + 2 * j;
                base[0] = v;
                base[1] = v;
                base[2 * w] = v;
                base[2 * w + 1] = v;
            }
    return y;
}

template <typename S>
Tensor<S> upsample_nn_2x_backward(const Tensor<S>& dy) {
    const std::size_t c = dy.extent(0), h2 = dy.extent(1), w2 = dy.extent(2);
    const std::size_t h = h2 / 2, w = w2 / 2;
    Tensor<S> dx({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const S* base = dy.data() + (ch * h2 + 2 * i) * w2 + 2 * j;
                dx[(ch * h + i) * w + j] = static_cast<S>(
                    static_cast<double>(base[0]) + static_cast<double>(base[1]) +
                    static_cast<double>(base[w2]) + static_cast<double>(base[w2 + 1]));
            }
    return dx;
}

// ---------------------------------------------------------------------------
// batch norm over [B x C x H x W], per-channel stats across B,H,W

enum class BatchNormMode { kTrain, kInfer };

template <typename S>
struct BatchNormResult {
    Tensor<S> y;
    Tensor<S> new_running_mean, new_running_var;  // == inputs in infer mode
    Tensor<S> batch_mean, batch_var;              // train mode only
};

template <typename S>
BatchNormResult<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                              const Tensor<S>& running_mean, const Tensor<S>& running_var,
                              BatchNormMode mode, double eps, double momentum) {
    if (x.ndim() != 4)
        throw ShapeError("batch_norm: want [B x C x H x W], got " + shape_str(x.shape()));
    const std::size_t b = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
        running_var.numel() != c)
        throw ShapeError("batch_norm: per-channel params must have length " + std::to_string(c));
    const std::size_t n = b * h * w;
    if (mode == BatchNormMode::kTrain && n < 2)
        throw ConfigError("batch_norm: train mode needs at least 2 elements per channel, got " +
                          std::to_string(n));

    BatchNormResult<S> r;
    r.y = Tensor<S>(x.shape());
    r.new_running_mean = running_mean;
    r.new_running_var = running_var;
    const std::size_t hw = h * w;
    if (mode == BatchNormMode::kTrain) {
        r.batch_mean = Tensor<S>({c});
        r.batch_var = Tensor<S>({c});
        for (std::size_t ch = 0; ch < c; ++ch) {
            double mean = 0.0;
            for (std::size_t bi = 0; bi < b; ++bi) {
                const S* base = x.data() + (bi * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) mean += static_cast<double>(base[i]);
            }
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t bi = 0; bi < b; ++bi) {
                const S* base = x.data() + (bi * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    const double d = static_cast<double>(base[i]) - mean;
                    var += d * d;
                }
            }
            var /= static_cast<double>(n);
            r.batch_mean[ch] = static_cast<S>(mean);
            r.batch_var[ch] = static_cast<S>(var);
            const double inv = 1.0 / std::sqrt(var + eps);
            const double g = static_cast<double>(gamma[ch]), bt = static_cast<double>(beta[ch]);
            for (std::size_t bi = 0; bi < b; ++bi) {
                const S* base = x.data() + (bi * c + ch) * hw;
                S* out = r.y.data() + (bi * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i)
                    out[i] = static_cast<S>(g * (static_cast<double>(base[i]) - mean) * inv + bt);
            }
            r.new_running_mean[ch] = static_cast<S>(
                (1.0 - momentum) * static_cast<double>(running_mean[ch]) + momentum * mean);
            r.new_running_var[ch] = static_cast<S>(
                (1.0 - momentum) * static_cast<double>(running_var[ch]) + momentum * var);
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double inv = 1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps);
            const double mean = static_cast<double>(running_mean[ch]);
            const double g = static_cast<double>(gamma[ch]), bt = static_cast<double>(beta[ch]);
            for (std::size_t bi = 0; bi < b; ++bi) {
                const S* base = x.data() + (bi * c + ch) * hw;
                S* out = r.y.data() + (bi * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i)
                    out[i] = static_cast<S>(g * (static_cast<double>(base[i]) - mean) * inv + bt);
            }
        }
    }
    return r;
}

template <typename S>
struct BatchNormGrads {
    Tensor<S> dx, dgamma, dbeta;
};

/// Backward through batch_norm. In train mode `mean`/`var` are the batch
/// statistics from the forward trace; in infer mode the running statistics.
template <typename S>
BatchNormGrads<S> batch_norm_backward(const Tensor<S>& x, const Tensor<S>& gamma,
                                      const Tensor<S>& mean, const Tensor<S>& var,
                                      BatchNormMode mode, double eps, const Tensor<S>& dy) {
    const std::size_t b = x.extent(0), c = x.extent(1), hw = x.extent(2) * x.extent(3);
    const std::size_t n = b * hw;
    BatchNormGrads<S> g;
    g.dx = Tensor<S>(x.shape());
    g.dgamma = Tensor<S>({c});
    g.dbeta = Tensor<S>({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double mu = static_cast<double>(mean[ch]);
        const double inv = 1.0 / std::sqrt(static_cast<double>(var[ch]) + eps);
        const double gm = static_cast<double>(gamma[ch]);
        double dbeta = 0.0, dgamma = 0.0, gsum = 0.0, gxsum = 0.0;
        for (std::size_t bi = 0; bi < b; ++bi) {
            const S* xb = x.data() + (bi * c + ch) * hw;
            const S* dyb = dy.data() + (bi * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                const double xhat = (static_cast<double>(xb[i]) - mu) * inv;
                const double d = static_cast<double>(dyb[i]);
                dbeta += d;
                dgamma += d * xhat;
                gsum += gm * d;
                gxsum += gm * d * xhat;
            }
        }
        g.dgamma[ch] = static_cast<S>(dgamma);
        g.dbeta[ch] = static_cast<S>(dbeta);
        if (mode == BatchNormMode::kTrain) {
            const double g_mean = gsum / static_cast<double>(n);
            const double gx_mean = gxsum / static_cast<double>(n);
            for (std::size_t bi = 0; bi < b; ++bi) {
                const S* xb = x.data() + (bi * c + ch) * hw;
                const S* dyb = dy.data() + (bi * c + ch) * hw;
                S* dxb = g.dx.data() + (bi * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    const double xhat = (static_cast<double>(xb[i]) - mu) * inv;
                    dxb[i] = static_cast<S>(
                        inv * (gm * static_cast<double>(dyb[i]) - g_mean - xhat * gx_mean));
                }
            }
        } else {
            for (std::size_t bi = 0; bi < b; ++bi) {
                const S* dyb = dy.data() + (bi * c + ch) * hw;
                S* dxb = g.dx.data() + (bi * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i)
                    dxb[i] = static_cast<S>(gm * inv * static_cast<double>(dyb[i]));
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// elementwise nonlinearities

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    Tensor<S> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > S(0) ? x[i] : S(0);
    return y;
}

template <typename S>
Tensor<S> relu_backward(const Tensor<S>& x, const Tensor<S>& dy) {
    Tensor<S> dx(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > S(0) ? dy[i] : S(0);
    return dx;
}

/// Exact GELU: x * Phi(x).
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    Tensor<S> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = static_cast<double>(x[i]);
        y[i] = static_cast<S>(v * 0.5 * (1.0 + std::erf(v / std::sqrt(2.0))));
    }
    return y;
}

template <typename S>
Tensor<S> gelu_backward(const Tensor<S>& x, const Tensor<S>& dy) {
    Tensor<S> dx(x.shape());
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = static_cast<double>(x[i]);
        const double phi = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        dx[i] = static_cast<S>(static_cast<double>(dy[i]) * (phi + v * pdf));
    }
    return dx;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    Tensor<S> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = static_cast<double>(x[i]);
        y[i] = static_cast<S>(v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                       : std::exp(v) / (1.0 + std::exp(v)));
    }
    return y;
}

/// dx from the sigmoid output y.
template <typename S>
Tensor<S> sigmoid_backward(const Tensor<S>& y, const Tensor<S>& dy) {
    Tensor<S> dx(y.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) {
        const double v = static_cast<double>(y[i]);
        dx[i] = static_cast<S>(static_cast<double>(dy[i]) * v * (1.0 - v));
    }
    return dx;
}

// ---------------------------------------------------------------------------
// mean squared error over all elements

template <typename S>
double mean_squared_error(const Tensor<S>& pred, const Tensor<S>& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("mean_squared_error: shapes differ " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    if (pred.numel() == 0) throw ShapeError("mean_squared_error: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(pred.numel());
}

/// d(mse)/d(pred) scaled by the scalar cotangent dl.
template <typename S>
Tensor<S> mean_squared_error_backward(const Tensor<S>& pred, const Tensor<S>& target, double dl) {
    Tensor<S> dp(pred.shape());
    const double k = 2.0 * dl / static_cast<double>(pred.numel());
    for (std::size_t i = 0; i < pred.numel(); ++i)
        dp[i] = static_cast<S>(k * (static_cast<double>(pred[i]) - static_cast<double>(target[i])));
    return dp;
}

}  // namespace andt
