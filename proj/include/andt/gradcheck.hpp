#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "andt/ops.hpp"
#include "andt/tensor.hpp"

// Finite-difference verification of the backward rules in ops.hpp.
// Ops are wrapped as closures so one checker covers every signature; the
// scalar probe is sum(cotangent .* forward(inputs)) for a fixed random
// cotangent, whose input gradient is exactly what backward() returns.

namespace andt {

struct DifferentiableOp {
    std::string name;
    std::vector<std::string> input_names;
    std::function<Tensor<double>(const std::vector<Tensor<double>>&)> forward;
    // (inputs, output cotangent) -> one cotangent per input
    std::function<std::vector<Tensor<double>>(const std::vector<Tensor<double>>&,
                                              const Tensor<double>&)>
        backward;
};

struct GradCheckInputError {
    std::string input;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;  // at the worst element
    double numeric = 0.0;
};

struct GradCheckReport {
    std::string op_name;
    double max_rel_error = 0.0;
    std::vector<GradCheckInputError> inputs;
    bool pass = false;
    bool aborted = false;
    std::string diagnostic;
};

namespace detail {
inline double dot_all(const Tensor<double>& a, const Tensor<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
    return acc;
}
}  // namespace detail

/// Central-difference check of op.backward against a random scalar projection
/// of op.forward. Relative error uses max(|analytic|, |numeric|, 1e-3) as the
/// denominator so near-zero gradient components are judged absolutely.
inline GradCheckReport finite_diff_check(const DifferentiableOp& op,
                                         std::vector<Tensor<double>> inputs,
                                         double tolerance = 1e-4, double step = 1e-5,
                                         std::uint64_t seed = 20240901) {
    GradCheckReport report;
    report.op_name = op.name;
    const auto abort_with = [&](std::string msg) {
        report.aborted = true;
        report.pass = false;
        report.diagnostic = std::move(msg);
        return report;
    };

    Tensor<double> y0;
    try {
        y0 = op.forward(inputs);
    } catch (const Error& e) {
        return abort_with(std::string("forward threw: ") + e.what());
    }
    if (!y0.all_finite()) return abort_with("forward produced non-finite values");

    Rng rng(seed);
    Tensor<double> ct = random_normal<double>(rng, y0.shape());

    std::vector<Tensor<double>> analytic;
    try {
        analytic = op.backward(inputs, ct);
    } catch (const Error& e) {
        return abort_with(std::string("backward threw: ") + e.what());
    }
    if (analytic.size() != inputs.size())
        return abort_with("backward returned " + std::to_string(analytic.size()) +
                          " cotangents for " + std::to_string(inputs.size()) + " inputs");
    for (std::size_t i = 0; i < analytic.size(); ++i)
        if (!analytic[i].all_finite())
            return abort_with("backward produced non-finite values for input " +
                              std::to_string(i));

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        GradCheckInputError entry;
        entry.input = i < op.input_names.size() ? op.input_names[i]
                                                : "input" + std::to_string(i);
        for (std::size_t e = 0; e < inputs[i].numel(); ++e) {
            const double saved = inputs[i][e];
            inputs[i][e] = saved + step;
            Tensor<double> yp = op.forward(inputs);
            inputs[i][e] = saved - step;
            Tensor<double> ym = op.forward(inputs);
            inputs[i][e] = saved;
            if (!yp.all_finite() || !ym.all_finite())
                return abort_with("perturbed forward produced non-finite values at " +
                                  entry.input + "[" + std::to_string(e) + "]");
            const double numeric =
                (detail::dot_all(ct, yp) - detail::dot_all(ct, ym)) / (2.0 * step);
            const double a = analytic[i][e];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > entry.max_rel_error) {
                entry.max_rel_error = rel;
                entry.worst_index = e;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.inputs.push_back(std::move(entry));
    }
    report.pass = report.max_rel_error <= tolerance;
    return report;
}

struct GradCheckCase {
    DifferentiableOp op;
    std::vector<Tensor<double>> inputs;
};

/// One randomly shaped case per operator. Different seeds give different
/// shapes and values; the registry is what cmd_gradcheck and the gradient
/// acceptance test iterate over.
inline std::vector<GradCheckCase> differentiable_op_suite(std::uint64_t seed) {
    Rng rng(seed);
    const auto dim = [&](std::size_t lo, std::size_t hi) {
        return lo + static_cast<std::size_t>(rng.integer(hi - lo + 1));
    };
    std::vector<GradCheckCase> cases;

    {
        const std::size_t m = dim(2, 5), k = dim(2, 5), n = dim(2, 5);
        DifferentiableOp op;
        op.name = "matmul";
        op.input_names = {"a", "b"};
        op.forward = [](const std::vector<Tensor<double>>& in) { return matmul(in[0], in[1]); };
        op.backward = [](const std::vector<Tensor<double>>& in, const Tensor<double>& dc) {
            Tensor<double> da, db;
            matmul_backward(in[0], in[1], dc, da, db);
            return std::vector<Tensor<double>>{da, db};
        };
        cases.push_back({std::move(op),
                         {random_normal<double>(rng, {m, k}), random_normal<double>(rng, {k, n})}});
    }
    {
        const std::size_t m = dim(2, 5), k = dim(2, 5), n = dim(2, 5);
        DifferentiableOp op;
        op.name = "linear";
        op.input_names = {"x", "w", "b"};
        op.forward = [](const std::vector<Tensor<double>>& in) {
            return linear(in[0], in[1], in[2]);
        };
        op.backward = [](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
            Tensor<double> dx, dw, db;
            linear_backward(in[0], in[1], dy, dx, dw, db);
            return std::vector<Tensor<double>>{dx, dw, db};
        };
        cases.push_back({std::move(op),
                         {random_normal<double>(rng, {m, k}), random_normal<double>(rng, {k, n}),
                          random_normal<double>(rng, {n})}});
    }
    {
        const std::size_t rows = dim(2, 4), d = dim(3, 8);
        const double eps = 1e-5;
        DifferentiableOp op;
        op.name = "layer_norm";
        op.input_names = {"x", "gamma", "beta"};
        op.forward = [eps](const std::vector<Tensor<double>>& in) {
            return layer_norm(in[0], in[1], in[2], eps);
        };
        op.backward = [eps](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
            Tensor<double> dx, dg, db;
            layer_norm_backward(in[0], in[1], eps, dy, dx, dg, db);
            return std::vector<Tensor<double>>{dx, dg, db};
        };
        cases.push_back({std::move(op),
                         {random_normal<double>(rng, {rows, d}), random_normal<double>(rng, {d}),
                          random_normal<double>(rng, {d})}});
    }
    {
        const std::size_t rows = dim(2, 4), n = dim(3, 6);
        DifferentiableOp op;
        op.name = "softmax";
        op.input_names = {"x"};
        op.forward = [](const std::vector<Tensor<double>>& in) { return softmax(in[0], 1); };
        op.backward = [](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
            Tensor<double> y = softmax(in[0], 1);
            return std::vector<Tensor<double>>{softmax_backward(y, dy, 1)};
        };
        cases.push_back({std::move(op), {random_normal<double>(rng, {rows, n})}});
    }
    {
        const std::size_t heads = dim(1, 2), hd = dim(2, 3);
        const std::size_t width = heads * hd, rows = dim(3, 5);
        DifferentiableOp op;
        op.name = "multi_head_attention";
        op.input_names = {"z", "wq", "wk", "wv", "wo"};
        op.forward = [heads](const std::vector<Tensor<double>>& in) {
            return multi_head_attention(in[0], in[1], in[2], in[3], in[4], heads);
        };
        op.backward = [heads](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
            AttentionTrace<double> trace;
            multi_head_attention(in[0], in[1], in[2], in[3], in[4], heads, &trace);
            AttentionGrads<double> g =
                multi_head_attention_backward(in[0], in[1], in[2], in[3], in[4], trace, dy);
            return std::vector<Tensor<double>>{g.dz, g.dwq, g.dwk, g.dwv, g.dwo};
        };
        std::vector<Tensor<double>> inputs{random_normal<double>(rng, {rows, width})};
        for (int i = 0; i < 4; ++i) inputs.push_back(random_normal<double>(rng, {width, width}));
        cases.push_back({std::move(op), std::move(inputs)});
    }
    {
        const std::size_t cin = dim(1, 2), cout = dim(1, 3), hw = dim(5, 7);
        DifferentiableOp op;
        op.name = "conv2d";
        op.input_names = {"x", "w"};
        op.forward = [](const std::vector<Tensor<double>>& in) {
            return conv2d(in[0], in[1], 1, 1);
        };
        op.backward = [](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
            Tensor<double> dx, dw;
            conv2d_backward(in[0], in[1], 1, 1, dy, dx, dw);
            return std::vector<Tensor<double>>{dx, dw};
        };
        cases.push_back({std::move(op),
                         {random_normal<double>(rng, {cin, hw, hw}),
                          random_normal<double>(rng, {cout, cin, 3, 3})}});
    }
    {
        const std::size_t cin = dim(1, 2), cout = dim(1, 2);
        DifferentiableOp op;
        op.name = "conv2d_strided";
        op.input_names = {"x", "w"};
        op.forward = [](const std::vector<Tensor<double>>& in) {
            return conv2d(in[0], in[1], 2, 1);
        };
        op.backward = [](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
            Tensor<double> dx, dw;
            conv2d_backward(in[0], in[1], 2, 1, dy, dx, dw);
            return std::vector<Tensor<double>>{dx, dw};
        };
        cases.push_back({std::move(op),
                         {random_normal<double>(rng, {cin, 7, 7}),
                          random_normal<double>(rng, {cout, cin, 3, 3})}});
    }
    {
        const std::size_t c = dim(1, 3), hw = dim(2, 4);
        DifferentiableOp op;
        op.name = "channel_bias";
        op.input_names = {"x", "b"};
        op.forward = [](const std::vector<Tensor<double>>& in) {
            return add_channel_bias(in[0], in[1]);
        };
        op.backward = [](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
            return std::vector<Tensor<double>>{dy, channel_bias_backward(dy)};
        };
        cases.push_back({std::move(op),
                         {random_normal<double>(rng, {c, hw, hw}), random_normal<double>(rng, {c})}});
    }
    {
        const std::size_t c = dim(1, 3), hw = dim(2, 4);
        DifferentiableOp op;
        op.name = "upsample_nn_2x";
        op.input_names = {"x"};
        op.forward = [](const std::vector<Tensor<double>>& in) { return upsample_nn_2x(in[0]); };
        op.backward = [](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
            return std::vector<Tensor<double>>{upsample_nn_2x_backward(dy)};
        };
        cases.push_back({std::move(op), {random_normal<double>(rng, {c, hw, hw})}});
    }
    for (const bool train : {true, false}) {
        const std::size_t b = dim(1, 2), c = dim(1, 3), hw = dim(2, 4);
        const double eps = 1e-5, momentum = 0.1;
        const BatchNormMode mode = train ? BatchNormMode::kTrain : BatchNormMode::kInfer;
        Tensor<double> rmean = random_normal<double>(rng, {c});
        Tensor<double> rvar = random_uniform<double>(rng, {c}, 0.5, 1.5);
        DifferentiableOp op;
        op.name = train ? "batch_norm_train" : "batch_norm_infer";
        op.input_names = {"x", "gamma", "beta"};
        op.forward = [=](const std::vector<Tensor<double>>& in) {
            return batch_norm(in[0], in[1], in[2], rmean, rvar, mode, eps, momentum).y;
        };
        op.backward = [=](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
            BatchNormResult<double> r =
                batch_norm(in[0], in[1], in[2], rmean, rvar, mode, eps, momentum);
            const Tensor<double>& mean = train ? r.batch_mean : rmean;
            const Tensor<double>& var = train ? r.batch_var : rvar;
            BatchNormGrads<double> g =
                batch_norm_backward(in[0], in[1], mean, var, mode, eps, dy);
            return std::vector<Tensor<double>>{g.dx, g.dgamma, g.dbeta};
        };
        cases.push_back({std::move(op),
                         {random_normal<double>(rng, {b, c, hw, hw}),
                          random_normal<double>(rng, {c}), random_normal<double>(rng, {c})}});
    }
    {
        // inputs pushed away from 0 so the finite-difference step cannot
        // straddle the kink
        const std::size_t n = dim(4, 9);
        Tensor<double> x = random_uniform<double>(rng, {n}, -1.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) x[i] += x[i] >= 0.0 ? 0.3 : -0.3;
        DifferentiableOp op;
        op.name = "relu";
        op.input_names = {"x"};
        op.forward = [](const std::vector<Tensor<double>>& in) { return relu(in[0]); };
        op.backward = [](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
            return std::vector<Tensor<double>>{relu_backward(in[0], dy)};
        };
        cases.push_back({std::move(op), {std::move(x)}});
    }
    {
        const std::size_t n = dim(4, 9);
        DifferentiableOp op;
        op.name = "gelu";
        op.input_names = {"x"};
        op.forward = [](const std::vector<Tensor<double>>& in) { return gelu(in[0]); };
        op.backward = [](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
            return std::vector<Tensor<double>>{gelu_backward(in[0], dy)};
        };
        cases.push_back({std::move(op), {random_normal<double>(rng, {n})}});
    }
    {
        const std::size_t n = dim(4, 9);
        DifferentiableOp op;
        op.name = "sigmoid";
        op.input_names = {"x"};
        op.forward = [](const std::vector<Tensor<double>>& in) { return sigmoid(in[0]); };
        op.backward = [](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
            Tensor<double> y = sigmoid(in[0]);
            return std::vector<Tensor<double>>{sigmoid_backward(y, dy)};
        };
        cases.push_back({std::move(op), {random_normal<double>(rng, {n})}});
    }
    {
        const std::size_t n = dim(4, 9);
        DifferentiableOp op;
        op.name = "mean_squared_error";
        op.input_names = {"pred", "target"};
        op.forward = [](const std::vector<Tensor<double>>& in) {
            return Tensor<double>({1}, {mean_squared_error(in[0], in[1])});
        };
        op.backward = [](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
            Tensor<double> dp = mean_squared_error_backward(in[0], in[1], dy[0]);
            Tensor<double> dt = scaled(dp, -1.0);
            return std::vector<Tensor<double>>{dp, dt};
        };
        cases.push_back({std::move(op),
                         {random_normal<double>(rng, {n}), random_normal<double>(rng, {n})}});
    }
    return cases;
}

}  // namespace andt
