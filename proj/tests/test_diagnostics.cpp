#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "foton/diagnostics.hpp"

#include "helpers.hpp"

#include <cmath>

using namespace foton;

TEST_CASE("finite_diff_gradient: quadratic one-layer closed form") {
    Network<double> net;
    net.input_shape = {3};
    DenseLayer<double> d;
    d.weight = testutil::random_matrix<double>(2, 3, 501);
    net.layers = {d};
    auto x = testutil::random_tensor<double>({1, 3}, 502);
    auto y = testutil::random_tensor<double>({1, 2}, 503);

    auto wx = matvec(d.weight, {x[0], x[1], x[2]});
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double fd = finite_diff_gradient(net, x, y, LossKind::mse(), 0, i * 3 + j);
            CHECK(fd == doctest::Approx((wx[i] - y[i]) * x[j]).epsilon(1e-8));
        }
}

TEST_CASE("finite_diff_gradient vanishes at a zero-error point") {
    Network<double> net;
    net.input_shape = {2};
    DenseLayer<double> d;
    d.weight = Matrix<double>::identity(2);
    net.layers = {d};
    Tensor<double> x({1, 2}, {0.3, -0.7});
    for (std::size_t i = 0; i < 4; ++i) {
        double fd = finite_diff_gradient(net, x, x, LossKind::mse(), 0, i);
        CHECK(std::abs(fd) < 1e-8);
    }
}

TEST_CASE("finite_diff_gradient agrees with bp and with itself across step sizes") {
    auto net = testutil::dense_network<double>({8, 7, 6, 4}, 511, ActKind::Tanh);
    auto x = testutil::random_tensor<double>({2, 8}, 512);
    Tensor<double> y({2, 4});
    y.at2(0, 0) = 1.0;
    y.at2(1, 3) = 1.0;

    auto bp = bp_update(net, x, y, LossKind::mse(), 1.0);
    Rng rng(513);
    for (int t = 0; t < 50; ++t) {
        std::size_t l = rng.index(net.layers.size());
        std::size_t i = rng.index(std::get<DenseLayer<double>>(net.layers[l]).weight.size());
        double fd5 = finite_diff_gradient(net, x, y, LossKind::mse(), l, i, 1e-5);
        double fd4 = finite_diff_gradient(net, x, y, LossKind::mse(), l, i, 1e-4);
        CHECK(-bp.deltas[l].dense->data()[i] == doctest::Approx(fd5).epsilon(1e-5));
        CHECK(std::abs(fd5 - fd4) < 1e-5); // self-consistency across h
    }
}

TEST_CASE("finite_diff_gradient covers convolution kernels") {
    Network<double> net;
    net.input_shape = {1, 6, 6};
    ConvLayer<double> conv;
    conv.kernel = testutil::random_tensor<double>({2, 1, 3, 3}, 521, 0.4);
    conv.pad = 1;
    conv.act.kind = ActKind::Tanh;
    DenseLayer<double> head;
    head.weight = testutil::random_matrix<double>(3, 2 * 6 * 6, 522, 0.2);
    net.layers = {conv, head};

    auto x = testutil::random_tensor<double>({2, 1, 6, 6}, 523);
    Tensor<double> y({2, 3});
    y.at2(0, 1) = 1.0;
    y.at2(1, 0) = 1.0;

    auto bp = bp_update(net, x, y, LossKind::mse(), 1.0);
    Rng rng(524);
    for (int t = 0; t < 10; ++t) {
        std::size_t i = rng.index(18);
        double fd = finite_diff_gradient(net, x, y, LossKind::mse(), 0, i);
        CHECK(-(*bp.deltas[0].kernel)[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("materialize_operator returns a dense layer's weight bit-exactly") {
    DenseLayer<double> d;
    d.weight = testutil::random_matrix<double>(5, 7, 531);
    auto op = materialize_operator<double>(
        [&](const Tensor<double> &basis) { return dense_forward(d, basis).first; }, {7});
    CHECK(op == d.weight);
}

TEST_CASE("materialize_operator refuses oversized inputs") {
    CHECK_THROWS_WITH_AS(materialize_operator<double>(
                             [](const Tensor<double> &b) { return b; }, {65, 64}),
                         doctest::Contains("4096"), ShapeError);
}

TEST_CASE("default_report_layers spans first to last") {
    auto five = default_report_layers(10);
    CHECK(five == std::vector<std::size_t>{1, 3, 5, 7, 10});
    CHECK(default_report_layers(3) == std::vector<std::size_t>{1, 2, 3});
    CHECK(default_report_layers(51).front() == 1);
    CHECK(default_report_layers(51).back() == 51);
}

TEST_CASE("alignment_sweep: bp against itself is exactly one") {
    auto net = testutil::dense_network<double>({12, 10, 8, 6}, 541, ActKind::Tanh);
    auto x = testutil::random_tensor<double>({8, 12}, 542);
    Tensor<double> y({8, 6});
    Rng lab(543);
    for (std::size_t i = 0; i < 8; ++i) y.at2(i, lab.index(6)) = 1.0;

    auto recs = alignment_sweep<double>(net, RuleKind::BP, nullptr, nullptr, x, y,
                                        LossKind::mse(), default_report_layers(3));
    for (const auto &r : recs) CHECK(r.cosine == doctest::Approx(1.0));
}

TEST_CASE("alignment_sweep: foton on an orthogonal linear net is one everywhere") {
    auto net = testutil::dense_network<double>({24, 20, 16, 12, 8}, 551);
    auto f = make_aligned_feedback(net, 1);
    auto x = testutil::random_tensor<double>({16, 24}, 552);
    Tensor<double> y({16, 8});
    Rng lab(553);
    for (std::size_t i = 0; i < 16; ++i) y.at2(i, lab.index(8)) = 1.0;

    auto recs = alignment_sweep<double>(net, RuleKind::FOTON, &f, nullptr, x, y,
                                        LossKind::mse(), default_report_layers(4));
    for (const auto &r : recs) CHECK(r.cosine == doctest::Approx(1.0).epsilon(1e-9));

    // weight-delta level agrees as well
    auto recs_w = alignment_sweep<double>(net, RuleKind::FOTON, &f, nullptr, x, y,
                                          LossKind::mse(), default_report_layers(4), true);
    for (const auto &r : recs_w) CHECK(r.cosine == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("alignment_sweep: pepita on a gaussian 50-layer linear net is near zero early") {
    std::vector<std::size_t> widths(51, 64);
    widths.back() = 10;
    auto net = testutil::dense_network<double>(widths, 561, ActKind::Identity,
                                               ActKind::Identity, false);
    auto f = make_fixed_random_feedback(net, 562);
    auto x = testutil::random_tensor<double>({32, 64}, 563);
    Tensor<double> y({32, 10});
    Rng lab(564);
    for (std::size_t i = 0; i < 32; ++i) y.at2(i, lab.index(10)) = 1.0;

    auto recs = alignment_sweep<double>(net, RuleKind::PEPITA, &f, nullptr, x, y,
                                        LossKind::mse(), {1, 13, 25});
    for (const auto &r : recs) CHECK(std::abs(r.cosine) < 0.1);
}

TEST_CASE("alignment_sweep flags degenerate zero-signal layers") {
    auto net = testutil::dense_network<double>({6, 4}, 571, ActKind::ReLU);
    auto x = testutil::random_tensor<double>({2, 6}, 572);
    auto tr = forward_clean(net, x);
    // targets equal to outputs: e = 0, all signals vanish
    Tensor<double> y = tr.post.back();
    auto f = make_aligned_feedback(net, 1);
    auto recs = alignment_sweep<double>(net, RuleKind::FOTON, &f, nullptr, x, y,
                                        LossKind::mse(), {1});
    CHECK(recs[0].degenerate_samples == 2);
    CHECK(recs[0].cosine == 0.0);
}
