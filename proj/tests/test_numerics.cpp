#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "andt/gradcheck.hpp"
#include "andt/ops.hpp"
#include "andt/tensor.hpp"

using namespace andt;

namespace {

// Direct evaluation over output positions, no loop reordering. Exact on
// integer-valued inputs, so comparisons against conv2d are bitwise.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, std::size_t stride,
                           std::size_t pad) {
    const std::size_t cin = x.extent(0), h = x.extent(1), wd = x.extent(2);
    const std::size_t cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (wd + 2 * pad - kw) / stride + 1;
    Tensor<double> y({cout, ho, wo});
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t u = 0; u < kh; ++u)
                        for (std::size_t v = 0; v < kw; ++v) {
                            const std::ptrdiff_t yi =
                                static_cast<std::ptrdiff_t>(i * stride + u) -
                                static_cast<std::ptrdiff_t>(pad);
                            const std::ptrdiff_t xj =
                                static_cast<std::ptrdiff_t>(j * stride + v) -
                                static_cast<std::ptrdiff_t>(pad);
                            if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h) || xj < 0 ||
                                xj >= static_cast<std::ptrdiff_t>(wd))
                                continue;
                            acc += x[(c * h + yi) * wd + xj] * w[((o * cin + c) * kh + u) * kw + v];
                        }
                y[(o * ho + i) * wo + j] = acc;
            }
    return y;
}

// Single-head attention written as plain loops, independent of the
// production kernel's factoring.
Tensor<double> single_head_oracle(const Tensor<double>& z, const Tensor<double>& wq,
                                  const Tensor<double>& wk, const Tensor<double>& wv,
                                  const Tensor<double>& wo) {
    const std::size_t rows = z.extent(0), width = z.extent(1);
    const auto mm = [&](const Tensor<double>& a, const Tensor<double>& b) {
        const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
        Tensor<double> c({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t r = 0; r < k; ++r) acc += a[i * k + r] * b[r * n + j];
                c[i * n + j] = acc;
            }
        return c;
    };
    Tensor<double> q = mm(z, wq), k = mm(z, wk), v = mm(z, wv);
    Tensor<double> a({rows, rows});
    const double scale = 1.0 / std::sqrt(static_cast<double>(width));
    for (std::size_t i = 0; i < rows; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < rows; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < width; ++c) dot += q[i * width + c] * k[j * width + c];
            a[i * rows + j] = dot * scale;
            mx = std::max(mx, a[i * rows + j]);
        }
        double zsum = 0.0;
        for (std::size_t j = 0; j < rows; ++j) {
            a[i * rows + j] = std::exp(a[i * rows + j] - mx);
            zsum += a[i * rows + j];
        }
        for (std::size_t j = 0; j < rows; ++j) a[i * rows + j] /= zsum;
    }
    return mm(mm(a, v), wo);
}

Tensor<double> random_integers(Rng& rng, Shape shape, int lo, int hi) {
    Tensor<double> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<double>(lo + static_cast<int>(rng.integer(hi - lo + 1)));
    return t;
}

}  // namespace

TEST_CASE("tensor shape and indexing") {
    Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
    REQUIRE(t.numel() == 6);
    REQUIRE(t.ndim() == 2);
    REQUIRE(t.at(1, 2) == 6.0);
    REQUIRE(t.at(0, 1) == 2.0);
    REQUIRE_THROWS_AS(Tensor<double>({2, 2}, {1.0, 2.0}), ShapeError);
    REQUIRE_THROWS_AS(t.with_shape({4}), ShapeError);
    Tensor<double> r = t.with_shape({3, 2});
    REQUIRE(r.at(2, 1) == 6.0);
    REQUIRE(Tensor<double>({2, 2}) == Tensor<double>::full({2, 2}, 0.0));
    Tensor<float> f = t.cast<float>();
    REQUIRE(f.at(1, 0) == 4.0f);
}

TEST_CASE("matmul identity, hand value, annihilator") {
    Tensor<double> eye({2, 2}, {1, 0, 0, 1});
    Tensor<double> a({2, 2}, {1, 2, 3, 4});
    REQUIRE(matmul(eye, a) == a);

    Tensor<double> row({1, 2}, {1, 2}), col({2, 1}, {3, 4});
    Tensor<double> prod = matmul(row, col);
    REQUIRE(prod.numel() == 1);
    REQUIRE(prod[0] == 11.0);

    REQUIRE(matmul(a, Tensor<double>({2, 3})) == Tensor<double>({2, 3}));
    REQUIRE_THROWS_AS(matmul(a, Tensor<double>({3, 2})), ShapeError);
    try {
        matmul(a, Tensor<double>({3, 2}));
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("[2x2]") != std::string::npos);
        REQUIRE(msg.find("[3x2]") != std::string::npos);
    }
}

TEST_CASE("linear broadcasts bias over rows") {
    Tensor<double> x({2, 2}, {1, 0, 0, 1});
    Tensor<double> w({2, 2}, {1, 2, 3, 4});
    Tensor<double> b({2}, {10, 20});
    Tensor<double> y = linear(x, w, b);
    REQUIRE(y == Tensor<double>({2, 2}, {11, 22, 13, 24}));
    REQUIRE_THROWS_AS(linear(x, w, Tensor<double>({3})), ShapeError);
}

TEST_CASE("layer_norm hand values and error paths") {
    Tensor<double> g1({3}, {1, 1, 1}), b0({3}, {0, 0, 0});

    Tensor<double> constant({1, 3}, {7, 7, 7});
    Tensor<double> y = layer_norm(constant, g1, b0, 1e-5);
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(std::abs(y[i]) < 1e-12);

    Tensor<double> x({1, 3}, {1, 2, 3});
    y = layer_norm(x, g1, b0, 0.0);
    REQUIRE(y[0] == Catch::Approx(-1.224744871391589).epsilon(1e-12));
    REQUIRE(y[1] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(y[2] == Catch::Approx(1.224744871391589).epsilon(1e-12));

    Tensor<double> beta({3}, {5, 6, 7});
    y = layer_norm(x, Tensor<double>({3}), beta, 1e-5);
    REQUIRE(y == Tensor<double>({1, 3}, {5, 6, 7}));

    REQUIRE_THROWS_AS(layer_norm(x, Tensor<double>({2}), b0, 1e-5), ShapeError);
    REQUIRE_THROWS_AS(layer_norm(x, g1, b0, -1.0), ConfigError);
}

TEST_CASE("layer_norm normalizes every slice") {
    Rng rng(11);
    Tensor<double> x = random_normal<double>(rng, {5, 16}, 3.0, 2.0);
    Tensor<double> gamma = Tensor<double>::full({16}, 1.0);
    Tensor<double> beta(Shape{16});
    Tensor<double> y = layer_norm(x, gamma, beta, 0.0);
    for (std::size_t s = 0; s < 5; ++s) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 16; ++j) mean += y[s * 16 + j];
        mean /= 16.0;
        for (std::size_t j = 0; j < 16; ++j) {
            const double c = y[s * 16 + j] - mean;
            var += c * c;
        }
        var /= 16.0;
        REQUIRE(std::abs(mean) < 1e-10);
        REQUIRE(var == Catch::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("softmax values, stability, shift invariance") {
    Tensor<double> x({2}, {0, 0});
    Tensor<double> y = softmax(x, 0);
    REQUIRE(y[0] == 0.5);
    REQUIRE(y[1] == 0.5);

    Tensor<double> x2({2}, {0.0, std::log(3.0)});
    y = softmax(x2, 0);
    REQUIRE(y[0] == Catch::Approx(0.25).epsilon(1e-12));
    REQUIRE(y[1] == Catch::Approx(0.75).epsilon(1e-12));

    Tensor<double> big({2}, {1000, 1000});
    y = softmax(big, 0);
    REQUIRE(y.all_finite());
    REQUIRE(y[0] == 0.5);

    Rng rng(3);
    Tensor<double> r = random_normal<double>(rng, {4, 7});
    Tensor<double> a = softmax(r, 1);
    Tensor<double> shifted = r;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 7; ++j) shifted[i * 7 + j] += 123.456;
    Tensor<double> b = softmax(shifted, 1);
    for (std::size_t i = 0; i < 4; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 7; ++j) sum += a[i * 7 + j];
        REQUIRE(std::abs(sum - 1.0) < 1e-12);
    }
    REQUIRE(max_abs_diff(a, b) < 1e-12);

    // axis 0 normalizes columns
    Tensor<double> cols({2, 2}, {0, 0, 0, 0});
    Tensor<double> yc = softmax(cols, 0);
    REQUIRE(yc == Tensor<double>({2, 2}, {0.5, 0.5, 0.5, 0.5}));
    REQUIRE_THROWS_AS(softmax(cols, 2), ShapeError);
}

TEST_CASE("attention single token and identical tokens") {
    Rng rng(5);
    Tensor<double> z = random_normal<double>(rng, {1, 4});
    Tensor<double> wq = random_normal<double>(rng, {4, 4});
    Tensor<double> wk = random_normal<double>(rng, {4, 4});
    Tensor<double> wv = random_normal<double>(rng, {4, 4});
    Tensor<double> wo = random_normal<double>(rng, {4, 4});
    AttentionTrace<double> trace;
    Tensor<double> out = multi_head_attention(z, wq, wk, wv, wo, 2, &trace);
    for (std::size_t i = 0; i < trace.attn.numel(); ++i) REQUIRE(trace.attn[i] == 1.0);
    Tensor<double> expect = matmul(matmul(z, wv), wo);
    REQUIRE(max_abs_diff(out, expect) < 1e-12);

    Tensor<double> two({2, 4});
    for (std::size_t j = 0; j < 4; ++j) {
        two[j] = z[j];
        two[4 + j] = z[j];
    }
    Tensor<double> out2 = multi_head_attention(two, wq, wk, wv, wo, 2);
    for (std::size_t j = 0; j < 4; ++j)
        REQUIRE(out2[j] == Catch::Approx(out2[4 + j]).margin(1e-14));

    REQUIRE_THROWS_AS(multi_head_attention(two, wq, wk, wv, wo, 3), ConfigError);
}

TEST_CASE("attention matches hand-computed single-head fixture") {
    Tensor<double> z({3, 2}, {0.1, 0.2, -0.3, 0.4, 0.5, -0.6});
    Tensor<double> wq({2, 2}, {0.2, -0.1, 0.4, 0.3});
    Tensor<double> wk({2, 2}, {-0.5, 0.6, 0.1, 0.2});
    Tensor<double> wv({2, 2}, {0.7, -0.2, 0.3, 0.1});
    Tensor<double> wo({2, 2}, {0.5, 0.4, -0.3, 0.2});
    AttentionTrace<double> trace;
    Tensor<double> out = multi_head_attention(z, wq, wk, wv, wo, 1, &trace);

    const Tensor<double> attn_expect(
        {1, 3, 3},
        {0.3342587834240139, 0.3371071306770611, 0.328634085898925, 0.33522071912349305,
         0.333329777806222, 0.3314495030702849, 0.3305104978337276, 0.33408199115546133,
         0.3354075110108111});
    const Tensor<double> out_expect({3, 2},
                                    {0.04015211954633834, 0.02381856973957704,
                                     0.04087239731590829, 0.02403038306005234,
                                     0.04103623198697057, 0.02391590442525566});
    REQUIRE(max_abs_diff(trace.attn, attn_expect) < 1e-15);
    REQUIRE(max_abs_diff(out, out_expect) < 1e-15);
}

TEST_CASE("attention agrees with naive loops; rows sum to 1") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        const std::size_t rows = 3 + seed % 3, width = 4;
        Tensor<double> z = random_normal<double>(rng, {rows, width});
        Tensor<double> wq = random_normal<double>(rng, {width, width});
        Tensor<double> wk = random_normal<double>(rng, {width, width});
        Tensor<double> wv = random_normal<double>(rng, {width, width});
        Tensor<double> wo = random_normal<double>(rng, {width, width});
        AttentionTrace<double> trace;
        Tensor<double> out = multi_head_attention(z, wq, wk, wv, wo, 1, &trace);
        Tensor<double> expect = single_head_oracle(z, wq, wk, wv, wo);
        REQUIRE(max_abs_diff(out, expect) < 1e-12);

        Tensor<double> out2 = multi_head_attention(z, wq, wk, wv, wo, 2, &trace);
        for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t i = 0; i < rows; ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < rows; ++j)
                    sum += trace.attn[(h * rows + i) * rows + j];
                REQUIRE(std::abs(sum - 1.0) < 1e-9);
            }
    }
}

TEST_CASE("conv2d identity, box kernel, zero kernel") {
    Rng rng(7);
    Tensor<double> x = random_normal<double>(rng, {2, 4, 4});
    Tensor<double> ident({2, 2, 1, 1}, {1, 0, 0, 1});
    Tensor<double> y = conv2d(x, ident, 1, 0);
    REQUIRE(y == x);

    Tensor<double> ones5 = Tensor<double>::full({1, 5, 5}, 1.0);
    Tensor<double> box = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    Tensor<double> s = conv2d(ones5, box, 1, 0);
    REQUIRE(s == Tensor<double>::full({1, 3, 3}, 9.0));

    REQUIRE(conv2d(x, Tensor<double>({3, 2, 3, 3}), 1, 1) == Tensor<double>({3, 4, 4}));

    REQUIRE_THROWS_AS(conv2d(x, Tensor<double>({1, 2, 3, 3}), 2, 0), ShapeError);
    REQUIRE_THROWS_AS(conv2d(x, Tensor<double>({1, 1, 3, 3}), 1, 0), ShapeError);
    REQUIRE_THROWS_AS(conv2d(x, ident, 0, 0), ConfigError);
}

TEST_CASE("conv2d equals quadruple-loop oracle exactly on integers") {
    Rng rng(2024);
    for (int rep = 0; rep < 6; ++rep) {
        const std::size_t cin = 1 + rng.integer(2), cout = 1 + rng.integer(3);
        const std::size_t hw = 5 + rng.integer(3);
        Tensor<double> x = random_integers(rng, {cin, hw, hw}, -4, 4);
        Tensor<double> w = random_integers(rng, {cout, cin, 3, 3}, -3, 3);
        for (const auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0},
                                         {1, 1},
                                         {2, 1}}) {
            if ((hw + 2 * pad - 3) % stride != 0) continue;
            REQUIRE(conv2d(x, w, stride, pad) == conv_oracle(x, w, stride, pad));
        }
    }
}

TEST_CASE("upsample replicates each element four times") {
    Tensor<double> one({1, 1, 1}, {5});
    REQUIRE(upsample_nn_2x(one) == Tensor<double>::full({1, 2, 2}, 5.0));

    Tensor<double> sq({1, 2, 2}, {1, 2, 3, 4});
    Tensor<double> y = upsample_nn_2x(sq);
    REQUIRE(y == Tensor<double>({1, 4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));

    Rng rng(0);
    Tensor<double> x = random_normal<double>(rng, {3, 4, 5});
    REQUIRE(sum(upsample_nn_2x(x)) == Catch::Approx(4.0 * sum(x)).epsilon(1e-12));
}

TEST_CASE("batch_norm train and infer behaviour") {
    Tensor<double> g1({1}, {1}), b0({1}, {0});
    Tensor<double> rm({1}, {0}), rv({1}, {1});

    Tensor<double> constant = Tensor<double>::full({2, 1, 2, 2}, 3.5);
    auto r = batch_norm(constant, g1, b0, rm, rv, BatchNormMode::kTrain, 1e-5, 0.1);
    REQUIRE(max_abs(r.y) < 1e-2);
    REQUIRE(r.batch_mean[0] == 3.5);
    REQUIRE(r.batch_var[0] == 0.0);

    Rng rng(9);
    Tensor<double> x = random_normal<double>(rng, {2, 1, 2, 2});
    auto ident = batch_norm(x, g1, b0, rm, rv, BatchNormMode::kInfer, 0.0, 0.1);
    REQUIRE(ident.y == x);
    REQUIRE(ident.new_running_mean == rm);
    REQUIRE(ident.new_running_var == rv);

    // momentum 1 copies batch statistics into the running slots exactly
    auto train = batch_norm(x, g1, b0, rm, rv, BatchNormMode::kTrain, 1e-5, 1.0);
    auto infer = batch_norm(x, g1, b0, train.new_running_mean, train.new_running_var,
                            BatchNormMode::kInfer, 1e-5, 1.0);
    REQUIRE(max_abs_diff(train.y, infer.y) < 1e-12);

    REQUIRE_THROWS_AS(
        batch_norm(Tensor<double>({1, 2, 1, 1}), g1, b0, rm, rv, BatchNormMode::kTrain, 1e-5, 0.1),
        ShapeError);
    Tensor<double> g2({2}, {1, 1}), b2({2}, {0, 0});
    REQUIRE_THROWS_AS(
        batch_norm(Tensor<double>({1, 2, 1, 1}), g2, b2, g2, g2, BatchNormMode::kTrain, 1e-5, 0.1),
        ConfigError);
}

TEST_CASE("activation values") {
    Tensor<double> x({3}, {-1.0, 0.0, 1.0});
    Tensor<double> r = relu(x);
    REQUIRE(r == Tensor<double>({3}, {0.0, 0.0, 1.0}));

    Tensor<double> g = gelu(x);
    REQUIRE(g[1] == 0.0);
    REQUIRE(g[2] == Catch::Approx(0.8413447460685429).epsilon(1e-14));
    REQUIRE(g[0] == Catch::Approx(-0.15865525393145707).epsilon(1e-12));

    Tensor<double> s = sigmoid(x);
    REQUIRE(s[1] == 0.5);
    REQUIRE(s[2] == Catch::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));
    Tensor<double> extreme({2}, {-800.0, 800.0});
    REQUIRE(sigmoid(extreme).all_finite());
}

TEST_CASE("mean squared error") {
    Tensor<double> pred({2}, {1, 2}), target({2}, {0, 0});
    REQUIRE(mean_squared_error(pred, target) == 2.5);
    REQUIRE(mean_squared_error(pred, pred) == 0.0);
    REQUIRE_THROWS_AS(mean_squared_error(pred, Tensor<double>({3})), ShapeError);
}

TEST_CASE("kernels are bit-deterministic across runs") {
    const auto run = [] {
        Rng rng(42);
        Tensor<double> z = random_normal<double>(rng, {5, 6});
        Tensor<double> wq = random_normal<double>(rng, {6, 6});
        Tensor<double> wk = random_normal<double>(rng, {6, 6});
        Tensor<double> wv = random_normal<double>(rng, {6, 6});
        Tensor<double> wo = random_normal<double>(rng, {6, 6});
        Tensor<double> a = multi_head_attention(z, wq, wk, wv, wo, 2);
        Tensor<double> g1 = Tensor<double>::full({6}, 1.0);
        Tensor<double> ln = layer_norm(a, g1, Tensor<double>({6}), 1e-6);
        Tensor<double> img = random_normal<double>(rng, {2, 6, 6});
        Tensor<double> w = random_normal<double>(rng, {3, 2, 3, 3});
        Tensor<double> c = conv2d(img, w, 1, 1);
        return std::pair{ln, c};
    };
    const auto [a1, c1] = run();
    const auto [a2, c2] = run();
    REQUIRE(a1 == a2);
    REQUIRE(c1 == c2);
}

TEST_CASE("every operator passes the gradient check over many seeds") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        for (auto& c : differentiable_op_suite(seed)) {
            GradCheckReport report = finite_diff_check(c.op, c.inputs);
            INFO(report.op_name << " seed " << seed << " max_rel_error " << report.max_rel_error
                                << " " << report.diagnostic);
            REQUIRE(!report.aborted);
            REQUIRE(report.pass);
            REQUIRE(report.max_rel_error <= 1e-4);
        }
    }
}

TEST_CASE("gradient check is near-exact for a linear map") {
    // central differences are exact for maps linear in each perturbed
    // element, so only rounding remains
    Rng rng(17);
    DifferentiableOp op;
    op.name = "matmul";
    op.forward = [](const std::vector<Tensor<double>>& in) { return matmul(in[0], in[1]); };
    op.backward = [](const std::vector<Tensor<double>>& in, const Tensor<double>& dc) {
        Tensor<double> da, db;
        matmul_backward(in[0], in[1], dc, da, db);
        return std::vector<Tensor<double>>{da, db};
    };
    std::vector<Tensor<double>> inputs{random_uniform<double>(rng, {3, 4}, 0.5, 1.5),
                                       random_uniform<double>(rng, {4, 3}, 0.5, 1.5)};
    // a wide step is valid here precisely because the map is linear per
    // element; it keeps the difference quotient clear of rounding noise
    GradCheckReport report = finite_diff_check(op, inputs, 1e-4, 1e-3);
    REQUIRE(report.pass);
    REQUIRE(report.max_rel_error < 1e-9);
}

TEST_CASE("gradient check catches a corrupted backward") {
    Rng rng(23);
    DifferentiableOp op;
    op.name = "layer_norm_x2";
    const double eps = 1e-5;
    op.forward = [eps](const std::vector<Tensor<double>>& in) {
        return layer_norm(in[0], in[1], in[2], eps);
    };
    op.backward = [eps](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
        Tensor<double> dx, dg, db;
        layer_norm_backward(in[0], in[1], eps, dy, dx, dg, db);
        return std::vector<Tensor<double>>{scaled(dx, 2.0), scaled(dg, 2.0), scaled(db, 2.0)};
    };
    std::vector<Tensor<double>> inputs{random_normal<double>(rng, {2, 8}),
                                       random_normal<double>(rng, {8}),
                                       random_normal<double>(rng, {8})};
    GradCheckReport report = finite_diff_check(op, inputs);
    REQUIRE(!report.pass);
    REQUIRE(report.max_rel_error > 0.2);
}

TEST_CASE("gradient check on layer_norm with a random 8-vector") {
    Rng rng(31);
    const double eps = 1e-5;
    DifferentiableOp op;
    op.name = "layer_norm";
    op.forward = [eps](const std::vector<Tensor<double>>& in) {
        return layer_norm(in[0], in[1], in[2], eps);
    };
    op.backward = [eps](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
        Tensor<double> dx, dg, db;
        layer_norm_backward(in[0], in[1], eps, dy, dx, dg, db);
        return std::vector<Tensor<double>>{dx, dg, db};
    };
    std::vector<Tensor<double>> inputs{random_normal<double>(rng, {1, 8}),
                                       random_normal<double>(rng, {8}),
                                       random_normal<double>(rng, {8})};
    GradCheckReport report = finite_diff_check(op, inputs);
    REQUIRE(report.pass);
}

TEST_CASE("gradient check aborts on non-finite values with a diagnostic") {
    DifferentiableOp op;
    op.name = "produces_nan";
    op.forward = [](const std::vector<Tensor<double>>& in) {
        Tensor<double> y = in[0];
        y[0] = std::numeric_limits<double>::quiet_NaN();
        return y;
    };
    op.backward = [](const std::vector<Tensor<double>>& in, const Tensor<double>& dy) {
        return std::vector<Tensor<double>>{dy};
    };
    GradCheckReport report = finite_diff_check(op, {Tensor<double>({2}, {1.0, 2.0})});
    REQUIRE(report.aborted);
    REQUIRE(!report.pass);
    REQUIRE(!report.diagnostic.empty());
}
