#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "foton/diagnostics.hpp"
#include "foton/layers.hpp"

#include "helpers.hpp"

#include <cmath>

using namespace foton;

namespace {

// im2col + matmul reference for convolution, independent of the direct
// loop implementation.
Tensor<double> conv_im2col_oracle(const Tensor<double> &x, const Tensor<double> &k,
                                  std::size_t pad) {
    const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const std::size_t o = k.extent(0), kh = k.extent(2), kw = k.extent(3);
    const std::size_t ho = h + 2 * pad - kh + 1, wo = w + 2 * pad - kw + 1;

    Matrix<double> cols(n * ho * wo, c * kh * kw);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                std::size_t row = (s * ho + i) * wo + j;
                std::size_t col = 0;
                for (std::size_t ic = 0; ic < c; ++ic)
                    for (std::size_t p = 0; p < kh; ++p)
                        for (std::size_t q = 0; q < kw; ++q, ++col) {
                            std::ptrdiff_t ii = std::ptrdiff_t(i + p) - std::ptrdiff_t(pad);
                            std::ptrdiff_t jj = std::ptrdiff_t(j + q) - std::ptrdiff_t(pad);
                            cols(row, col) =
                                (ii < 0 || jj < 0 || ii >= std::ptrdiff_t(h) ||
                                 jj >= std::ptrdiff_t(w))
                                    ? 0.0
                                    : x.at4(s, ic, std::size_t(ii), std::size_t(jj));
                        }
            }
    Matrix<double> kmat(o, c * kh * kw,
                        std::vector<double>(k.data(), k.data() + k.size()));
    Matrix<double> prod = matmul(cols, kmat.transposed()); // (n*ho*wo, o)
    Tensor<double> out({n, o, ho, wo});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j)
                    out.at4(s, oc, i, j) = prod((s * ho + i) * wo + j, oc);
    return out;
}

} // namespace

TEST_CASE("dense_forward: identity and ReLU clamp") {
    DenseLayer<double> layer;
    layer.weight = Matrix<double>::identity(2);
    layer.act.kind = ActKind::Identity;
    Tensor<double> x({1, 2}, {1, 1});
    auto [pre, post] = dense_forward(layer, x);
    CHECK(pre == x);
    CHECK(post == x);

    layer.act.kind = ActKind::ReLU;
    Tensor<double> x2({1, 2}, {-1, 2});
    auto [pre2, post2] = dense_forward(layer, x2);
    CHECK(post2[0] == 0.0);
    CHECK(post2[1] == 2.0);
}

TEST_CASE("dense_forward matches a scalar-loop reference with tanh") {
    DenseLayer<double> layer;
    layer.weight = testutil::random_matrix<double>(5, 7, 101);
    layer.act.kind = ActKind::Tanh;
    auto x = testutil::random_tensor<double>({3, 7}, 102);
    auto [pre, post] = dense_forward(layer, x);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t i = 0; i < 5; ++i) {
            double acc = 0;
            for (std::size_t j = 0; j < 7; ++j) acc += layer.weight(i, j) * x.at2(s, j);
            CHECK(pre.at2(s, i) == doctest::Approx(acc).epsilon(1e-12));
            CHECK(post.at2(s, i) == doctest::Approx(std::tanh(acc)).epsilon(1e-12));
        }
}

TEST_CASE("dense_adjoint transports through the transpose") {
    DenseLayer<double> layer;
    layer.weight = Matrix<double>(2, 2, {0, 1, 1, 0});
    Tensor<double> s({1, 2}, {1, 0});
    auto back = dense_adjoint(layer, s);
    CHECK(back.at2(0, 0) == 0.0);
    CHECK(back.at2(0, 1) == 1.0);

    layer.weight = orthogonal_init<double>(4, 9, 7);
    auto sig = testutil::random_tensor<double>({1, 4}, 8);
    auto tr = dense_adjoint(layer, sig);
    CHECK(norm2(tr) == doctest::Approx(norm2(sig)).epsilon(1e-6)); // isometry

    layer.weight = testutil::random_matrix<double>(6, 5, 9);
    auto sig2 = testutil::random_tensor<double>({2, 6}, 10);
    auto tr2 = dense_adjoint(layer, sig2);
    for (std::size_t s2 = 0; s2 < 2; ++s2)
        for (std::size_t j = 0; j < 5; ++j) {
            double acc = 0;
            for (std::size_t i = 0; i < 6; ++i) acc += layer.weight(i, j) * sig2.at2(s2, i);
            CHECK(tr2.at2(s2, j) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("activation derivatives agree with central differences") {
    for (ActKind kind : {ActKind::Identity, ActKind::ReLU, ActKind::Tanh}) {
        Activation act{kind};
        Rng rng(11);
        for (int t = 0; t < 20; ++t) {
            double a = rng.gaussian();
            if (kind == ActKind::ReLU && std::abs(a) < 1e-3) continue; // non-smooth point
            const double h = 1e-5;
            Tensor<double> ap({1}, {a + h}), am({1}, {a - h}), at({1}, {a});
            double fd = (act.apply(ap)[0] - act.apply(am)[0]) / (2 * h);
            Tensor<double> one({1}, {1.0});
            CHECK(act.jvp(at, one)[0] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("groupsort permutes pairs and preserves the norm exactly") {
    Activation gs{ActKind::GroupSort};
    Tensor<double> x({1, 6}, {3, -1, 2, 5, -4, -7});
    auto y = gs.apply(x);
    CHECK(y == Tensor<double>({1, 6}, {-1, 3, 2, 5, -7, -4}));
    CHECK(norm2(y) == norm2(x)); // exact, it only permutes

    auto r = testutil::random_tensor<double>({4, 8}, 13);
    CHECK(norm2(gs.apply(r)) == norm2(r));

    // Jacobian action: the sorting permutation of the pre-activation
    Tensor<double> v({1, 6}, {10, 20, 30, 40, 50, 60});
    auto jv = gs.jvp(x, v);
    CHECK(jv == Tensor<double>({1, 6}, {20, 10, 30, 40, 60, 50}));
    CHECK(gs.vjp(x, v) == jv);

    Tensor<double> odd({1, 3});
    CHECK_THROWS_AS(gs.apply(odd), ShapeError);
}

TEST_CASE("conv_forward: 1x1 scalar kernel and identity") {
    ConvLayer<double> layer;
    layer.kernel = Tensor<double>({1, 1, 1, 1}, {2});
    layer.pad = 0;
    Tensor<double> x({1, 1, 1, 2}, {1, 3});
    auto [pre, post] = conv_forward(layer, x);
    CHECK(pre == Tensor<double>({1, 1, 1, 2}, {2, 6}));

    layer.kernel = Tensor<double>({1, 1, 1, 1}, {1});
    auto [pre2, post2] = conv_forward(layer, x);
    CHECK(pre2 == x);
}

TEST_CASE("conv_forward matches the im2col oracle") {
    auto x = testutil::random_tensor<double>({2, 3, 5, 5}, 21);
    auto k = testutil::random_tensor<double>({4, 3, 3, 3}, 22);
    for (std::size_t pad : {0u, 1u, 2u}) {
        auto direct = conv2d_forward(x, k, pad);
        auto oracle = conv_im2col_oracle(x, k, pad);
        CHECK(testutil::max_abs_diff(direct, oracle) < 1e-10);
    }
}

TEST_CASE("conv_adjoint: 1x1 reduces to a dot product") {
    Tensor<double> x({1, 1, 1, 2}, {1, 2});
    Tensor<double> s({1, 1, 1, 2}, {3, 4});
    auto g = conv_adjoint(x, s, 1, 1, 0);
    CHECK(g.size() == 1);
    CHECK(g[0] == doctest::Approx(11.0)); // 1*3 + 2*4

    Tensor<double> zero({1, 1, 1, 2});
    auto gz = conv_adjoint(x, zero, 1, 1, 0);
    CHECK(max_abs(gz) == 0.0);
}

TEST_CASE("conv_adjoint matches finite differences of <signal, k*x>") {
    auto x = testutil::random_tensor<double>({1, 2, 4, 4}, 31);
    auto k = testutil::random_tensor<double>({2, 2, 3, 3}, 32);
    auto s = testutil::random_tensor<double>({1, 2, 4, 4}, 33);
    auto g = conv_adjoint(x, s, 3, 3, 1);
    const double h = 1e-6;
    Rng rng(34);
    for (int t = 0; t < 12; ++t) {
        std::size_t i = rng.index(k.size());
        auto kp = k, km = k;
        kp[i] += h;
        km[i] -= h;
        double fp = dot(s, conv2d_forward(x, kp, 1));
        double fm = dot(s, conv2d_forward(x, km, 1));
        CHECK(g[i] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-5));
    }
}

TEST_CASE("conv_adjoint is the true adjoint of conv-by-fixed-input") {
    auto x = testutil::random_tensor<double>({2, 2, 5, 5}, 41);
    auto k = testutil::random_tensor<double>({3, 2, 3, 3}, 42);
    auto s = testutil::random_tensor<double>({2, 3, 5, 5}, 43);
    double lhs = dot(s, conv2d_forward(x, k, 1));
    double rhs = dot(conv_adjoint(x, s, 3, 3, 1), k);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-8));
}

TEST_CASE("conv input adjoint pairs with the forward map") {
    auto x = testutil::random_tensor<double>({2, 3, 4, 4}, 44);
    auto k = testutil::random_tensor<double>({2, 3, 3, 3}, 45);
    auto s = testutil::random_tensor<double>({2, 2, 4, 4}, 46);
    double lhs = dot(s, conv2d_forward(x, k, 1));
    double rhs = dot(conv2d_input_adjoint(s, k, 1, 4, 4), x);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-8));
}

TEST_CASE("pool_forward: constant windows and scaling") {
    PoolLayer p{2, 2};
    Tensor<double> ones({1, 1, 2, 2}, {1, 1, 1, 1});
    auto y = pool_forward(p, ones);
    CHECK(y.size() == 1);
    CHECK(y[0] == doctest::Approx(2.0)); // mean 1 x sqrt(4)

    Tensor<double> spike({1, 1, 2, 2}, {4, 0, 0, 0});
    CHECK(pool_forward(p, spike)[0] == doctest::Approx(2.0));

    Tensor<double> bad({1, 1, 3, 2});
    CHECK_THROWS_AS(pool_forward(p, bad), ShapeError);
}

TEST_CASE("pooling operator satisfies P P^T = I by materialization") {
    PoolLayer p{2, 2};
    auto op = materialize_operator<double>(
        [&](const Tensor<double> &basis) { return avg_pool_forward(basis, p.ph, p.pw); },
        {1, 4, 4});
    // rows have unit l2 norm and are mutually orthogonal
    Matrix<double> gram(op.rows(), op.rows());
    gemm_nt(op.data(), op.rows(), op.cols(), op.data(), op.rows(), gram.data());
    CHECK(testutil::max_abs_diff(gram, Matrix<double>::identity(op.rows())) < 1e-12);

    // 2x2 pool on a 2x2 input: a single row of entries 1/2
    auto tiny = materialize_operator<double>(
        [&](const Tensor<double> &basis) { return avg_pool_forward(basis, 2, 2); }, {1, 2, 2});
    CHECK(tiny.rows() == 1);
    for (std::size_t j = 0; j < 4; ++j) CHECK(tiny(0, j) == doctest::Approx(0.5));
}

TEST_CASE("pool adjoint pairs with the forward map") {
    auto x = testutil::random_tensor<double>({2, 3, 4, 6}, 51);
    auto s = testutil::random_tensor<double>({2, 3, 2, 3}, 52);
    double lhs = dot(s, avg_pool_forward(x, 2, 2));
    double rhs = dot(avg_pool_adjoint(s, 2, 2), x);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("norm preservation through an orthogonal identity stack") {
    // equal widths: the forward map itself is an isometry
    auto net = testutil::dense_network<double>({16, 16, 16, 16}, 61);
    auto x = testutil::random_tensor<double>({4, 16}, 62);
    auto tr = forward_clean(net, x);
    const auto &y = tr.post.back();
    for (std::size_t s = 0; s < 4; ++s) {
        double nx = 0, ny = 0;
        for (std::size_t j = 0; j < 16; ++j) {
            nx += x.at2(s, j) * x.at2(s, j);
            ny += y.at2(s, j) * y.at2(s, j);
        }
        CHECK(std::sqrt(ny) == doctest::Approx(std::sqrt(nx)).epsilon(1e-5));
    }
}

TEST_CASE("transported signals keep their norm down a non-increasing stack") {
    // gradient-norm preservation: the adjoint chain of row-orthogonal
    // layers is an isometry regardless of width shrinkage
    auto net = testutil::dense_network<double>({32, 24, 16, 12, 8}, 63);
    auto e = testutil::random_tensor<double>({4, 8}, 64);
    auto back = adjoint_chain(net, e);
    for (std::size_t s = 0; s < 4; ++s) {
        double ne = 0, nb = 0;
        for (std::size_t j = 0; j < 8; ++j) ne += e.at2(s, j) * e.at2(s, j);
        for (std::size_t j = 0; j < 32; ++j) nb += back.at2(s, j) * back.at2(s, j);
        CHECK(std::sqrt(nb) == doctest::Approx(std::sqrt(ne)).epsilon(1e-5));
    }
}

TEST_CASE("orthogonalize_network is a fixed point on orthogonal weights") {
    auto net = testutil::dense_network<double>({16, 12, 8}, 71);
    auto before = net;
    orthogonalize_network(net, 10);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto &a = std::get<DenseLayer<double>>(net.layers[l]).weight;
        const auto &b = std::get<DenseLayer<double>>(before.layers[l]).weight;
        CHECK(testutil::max_abs_diff(a, b) < 1e-10);
    }
}

TEST_CASE("orthogonalize_network restores residuals after an update") {
    auto net = testutil::dense_network<double>({16, 12, 8}, 81);
    for (auto &layer : net.layers) {
        auto &w = std::get<DenseLayer<double>>(layer).weight;
        auto noise = testutil::random_matrix<double>(w.rows(), w.cols(), 82, 0.05);
        w = w + noise;
    }
    orthogonalize_network(net, 5);
    for (const auto &layer : net.layers)
        CHECK(gram_residual(std::get<DenseLayer<double>>(layer).weight) < 1e-3);
}

TEST_CASE("orthogonalize_network holds the bound at depth 50") {
    std::vector<std::size_t> widths(51, 16);
    auto net = testutil::dense_network<double>(widths, 91);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto &w = std::get<DenseLayer<double>>(net.layers[l]).weight;
        w = w + testutil::random_matrix<double>(w.rows(), w.cols(), 92 + l, 0.03);
    }
    orthogonalize_network(net, 5);
    for (const auto &layer : net.layers)
        CHECK(gram_residual(std::get<DenseLayer<double>>(layer).weight) < 1e-3);
}

TEST_CASE("dropout masks are shared between clean and modulated passes") {
    Network<double> net;
    net.input_shape = {8};
    DenseLayer<double> d1;
    d1.weight = orthogonal_init<double>(8, 8, 95);
    d1.act.kind = ActKind::ReLU;
    d1.dropout_rate = 0.5;
    DenseLayer<double> d2;
    d2.weight = orthogonal_init<double>(4, 8, 96);
    net.layers = {d1, d2};

    auto x = testutil::random_tensor<double>({16, 8}, 97);
    Rng drop(5);
    auto tr = forward_clean(net, x, &drop);
    REQUIRE(tr.masks[0].size() == 16 * 8);

    auto x_err = testutil::random_tensor<double>({16, 8}, 98);
    forward_modulated(net, tr, x_err);

    // wherever the mask dropped a unit, both passes are zero there
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < tr.masks[0].size(); ++i) {
        if (tr.masks[0][i] == 0.0) {
            ++dropped;
            CHECK(tr.post[0][i] == 0.0);
            CHECK(tr.post_err[0][i] == 0.0);
        } else {
            CHECK(tr.masks[0][i] == doctest::Approx(2.0)); // 1/(1-0.5)
        }
    }
    CHECK(dropped > 20); // rate 0.5 over 128 draws
}

TEST_CASE("bcop: 1x1 kernel equals the channel matrix, operator Gram = I") {
    auto p = bcop_init<double>(2, 3, 1, 123);
    auto kernel = bcop_materialize(p);
    for (std::size_t o = 0; o < 2; ++o)
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(kernel.at4(o, c, 0, 0) == p.channel(o, c));

    auto op = materialize_operator<double>(
        [&](const Tensor<double> &b) { return conv2d_forward(b, kernel, 0); }, {3, 4, 4});
    Matrix<double> gram(op.rows(), op.rows());
    gemm_nt(op.data(), op.rows(), op.cols(), op.data(), op.rows(), gram.data());
    CHECK(testutil::max_abs_diff(gram, Matrix<double>::identity(op.rows())) < 1e-4);
}

TEST_CASE("bcop materialization is deterministic in the seed") {
    auto a = bcop_materialize(bcop_init<double>(4, 2, 3, 7));
    auto b = bcop_materialize(bcop_init<double>(4, 2, 3, 7));
    CHECK(a == b);
}

TEST_CASE("bcop 3x3 operator is semi-orthogonal: zero pad approximately, valid pad exactly") {
    auto p = bcop_init<double>(2, 2, 3, 321);
    auto kernel = bcop_materialize(p);

    // zero padding truncates boundary rows, so global orthogonality is
    // lost there; the interior block (full receptive fields) stays exact
    auto op_same = materialize_operator<double>(
        [&](const Tensor<double> &b) { return conv2d_forward(b, kernel, 1); }, {2, 6, 6});
    Matrix<double> gram(op_same.rows(), op_same.rows());
    gemm_nt(op_same.data(), op_same.rows(), op_same.cols(), op_same.data(), op_same.rows(),
            gram.data());
    double interior_res = 0, boundary_res = 0;
    auto is_interior = [](std::size_t flat) {
        std::size_t i = (flat % 36) / 6, j = flat % 6;
        return i >= 1 && i <= 4 && j >= 1 && j <= 4;
    };
    for (std::size_t i = 0; i < gram.rows(); ++i)
        for (std::size_t j = 0; j < gram.cols(); ++j) {
            double d = gram(i, j) - (i == j ? 1.0 : 0.0);
            if (is_interior(i) && is_interior(j)) interior_res += d * d;
            else boundary_res += d * d;
        }
    CHECK(std::sqrt(interior_res) < 1e-9);
    CHECK(boundary_res > 1e-2); // the truncation is real, not a tolerance issue

    // valid positions see full kernel support: exact row orthogonality
    auto op_valid = materialize_operator<double>(
        [&](const Tensor<double> &b) { return conv2d_forward(b, kernel, 0); }, {2, 6, 6});
    Matrix<double> gv(op_valid.rows(), op_valid.rows());
    gemm_nt(op_valid.data(), op_valid.rows(), op_valid.cols(), op_valid.data(), op_valid.rows(),
            gv.data());
    CHECK(testutil::max_abs_diff(gv, Matrix<double>::identity(gv.rows())) < 1e-9);
}

TEST_CASE("bcop pullback matches finite differences through the parametrization") {
    auto p = bcop_init<double>(4, 3, 3, 55);
    auto g = testutil::random_tensor<double>({4, 3, 3, 3}, 56); // gradient direction
    auto deltas = bcop_pullback(p, g);

    const double h = 1e-6;
    auto objective = [&](const BcopParams<double> &q) { return dot(g, bcop_materialize(q)); };

    Rng rng(57);
    for (int t = 0; t < 10; ++t) {
        std::size_t i = rng.index(p.channel.size());
        auto pp = p, pm = p;
        pp.channel.data()[i] += h;
        pm.channel.data()[i] -= h;
        double fd = (objective(pp) - objective(pm)) / (2 * h);
        CHECK(deltas.channel.data()[i] == doctest::Approx(fd).epsilon(1e-5));
    }
    for (std::size_t m = 0; m < p.qs.size(); ++m) {
        std::size_t i = Rng(58 + m).index(p.qs[m].size());
        auto pp = p, pm = p;
        pp.qs[m].data()[i] += h;
        pm.qs[m].data()[i] -= h;
        double fd = (objective(pp) - objective(pm)) / (2 * h);
        CHECK(deltas.qs[m].data()[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("bcop factor shapes are validated") {
    auto p = bcop_init<double>(4, 2, 3, 9);
    p.qs.pop_back();
    CHECK_THROWS_AS(bcop_materialize(p), ShapeError);
}
