#include <CLI11.hpp>

#include "foton/presets.hpp"
#include "foton/train.hpp"

#include <cstdio>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

foton::ExperimentConfig resolve_config(const std::string &preset_name,
                                       const std::string &config_path) {
    if (!preset_name.empty() && !config_path.empty())
        throw foton::ConfigError("--preset and --config are mutually exclusive");
    if (!preset_name.empty()) return foton::preset(preset_name);
    if (!config_path.empty()) return foton::load_config_file(config_path);
    throw foton::ConfigError("one of --preset or --config is required");
}

void print_run(const foton::RunMetrics &m) {
    for (const auto &e : m.epochs)
        std::printf("epoch %3zu  train loss %.5f acc %6.2f%%  test loss %.5f acc %6.2f%%  "
                    "lr %g  (%.1fs)\n",
                    e.epoch, e.train_loss, e.train_acc, e.test_loss, e.test_acc, e.lr,
                    e.seconds);
    for (const auto &a : m.alignment)
        std::printf("align step %zu layer %zu %s cos %.4f%s\n", a.step, a.layer,
                    a.rule.c_str(), a.cosine, a.degenerate_samples ? " (degenerate)" : "");
    std::printf("final test accuracy: %.2f%%  best %.2f%%  (%.1fs total)\n",
                m.final_test_acc(), m.best_test_acc(), m.wall_seconds);
}

// Fast self-check of the oracle and equivalence machinery; a compact
// version of what the acceptance suite runs at full size.
int run_verify() {
    using namespace foton;
    int failures = 0;
    auto report = [&](const char *name, bool ok) {
        std::printf("%-52s %s\n", name, ok ? "PASS" : "FAIL");
        if (!ok) ++failures;
    };

    { // linear equivalence, depth 10
        std::vector<std::size_t> widths{48};
        for (int l = 0; l < 10; ++l) widths.push_back(std::max(8, 48 - 4 * (l + 1)));
        Network<double> net;
        net.input_shape = {widths[0]};
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            DenseLayer<double> d;
            d.weight = orthogonal_init<double>(widths[l + 1], widths[l], derive_seed(1, l));
            net.layers.push_back(d);
        }
        Rng rng(2);
        Tensor<double> x({4, widths[0]}), t({4, widths.back()});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.gaussian();
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian();
        auto bp = bp_update(net, x, t, LossKind::mse(), 0.1);
        auto f = make_aligned_feedback(net, 1);
        auto tr = forward_clean(net, x);
        auto e = compute_error(LossKind::mse(), tr.post.back(), t);
        modulated_forward(net, x, e, f, tr);
        auto fo = foton_update(net, tr, e, 0.1);
        double worst = 0;
        for (std::size_t l = 0; l < net.layers.size(); ++l)
            worst = std::max(worst, double(max_abs(*fo.deltas[l].dense - *bp.deltas[l].dense)));
        report("foton == bp on an orthogonal linear net (1e-9)", worst < 1e-9);
    }

    { // bp against finite differences
        Network<double> net;
        net.input_shape = {8};
        for (std::size_t l = 0; l < 3; ++l) {
            DenseLayer<double> d;
            std::size_t in = l == 0 ? 8 : 8;
            d.weight = orthogonal_init<double>(8, in, derive_seed(3, l));
            d.act.kind = l == 2 ? ActKind::Identity : ActKind::Tanh;
            net.layers.push_back(d);
        }
        Rng rng(4);
        Tensor<double> x({2, 8}), t({2, 8});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.gaussian();
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian();
        auto bp = bp_update(net, x, t, LossKind::mse(), 1.0);
        double worst = 0;
        for (int trial = 0; trial < 20; ++trial) {
            std::size_t l = rng.index(3), i = rng.index(64);
            double fd = finite_diff_gradient(net, x, t, LossKind::mse(), l, i);
            worst = std::max(worst, std::abs(-bp.deltas[l].dense->data()[i] - fd));
        }
        report("bp matches central finite differences (1e-5)", worst < 1e-5);
    }

    { // bjorck machinery
        bool ok = true;
        for (int t = 0; t < 20; ++t) {
            auto w = spectral_rescale(gaussian_matrix<double>(4, 32, 500 + t, 1.0));
            ok = ok && gram_residual(bjorck_orthogonalize(w, 5)) < 1e-3;
        }
        report("bjorck: 5 iterations on rescaled rectangular input", ok);
    }

    { // pooling operator orthogonality
        auto op = materialize_operator<double>(
            [&](const Tensor<double> &b) { return avg_pool_forward(b, 2, 2); }, {1, 4, 4});
        Matrix<double> gram(op.rows(), op.rows());
        gemm_nt(op.data(), op.rows(), op.cols(), op.data(), op.rows(), gram.data());
        double worst = 0;
        for (std::size_t i = 0; i < gram.rows(); ++i)
            for (std::size_t j = 0; j < gram.cols(); ++j)
                worst = std::max(worst,
                                 std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)));
        report("scaled average pooling: P P^T = I (1e-12)", worst < 1e-12);
    }

    { // conv foton == conv bp in the linear orthogonal regime
        Network<double> net;
        net.input_shape = {2, 6, 6};
        ConvLayer<double> conv;
        conv.bcop = bcop_init<double>(2, 2, 3, 77);
        conv.kernel = bcop_materialize(*conv.bcop);
        conv.pad = 0;
        net.layers.push_back(conv);
        net.layers.push_back(PoolLayer{2, 2});
        DenseLayer<double> head;
        head.weight = orthogonal_init<double>(4, 2 * 2 * 2, 78);
        net.layers.push_back(head);

        Rng rng(79);
        Tensor<double> x({3, 2, 6, 6}), t({3, 4});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.gaussian();
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian();
        auto bp = bp_update(net, x, t, LossKind::mse(), 0.1);
        auto f = make_aligned_feedback(net, 1);
        auto tr = forward_clean(net, x);
        auto e = compute_error(LossKind::mse(), tr.post.back(), t);
        modulated_forward(net, x, e, f, tr);
        auto fo = foton_update(net, tr, e, 0.1);
        double worst = max_abs(*fo.deltas[0].kernel - *bp.deltas[0].kernel);
        report("conv foton == conv bp with bcop + pooling (1e-6)", worst < 1e-6);
    }

    std::printf(failures ? "verify: %d check(s) FAILED\n" : "verify: all checks passed\n",
                failures);
    return failures ? 1 : kExitOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"forward-only training of orthogonal networks"};
    app.require_subcommand(1);

    std::string preset_name, config_path, out_dir, data_dir, f_refresh, ortho_rate;
    std::string align_sweep, precision;
    std::uint64_t seed = std::uint64_t(-1);
    long long epochs = -1, batch = -1, train_subset = -1, eval_subset = -1;
    double lr = -1.0;

    auto add_common = [&](CLI::App *cmd) {
        cmd->add_option("--preset", preset_name, "preset name (see `list`)");
        cmd->add_option("--config", config_path, "config file (key = value lines)");
        cmd->add_option("--seed", seed, "random seed");
        cmd->add_option("--out", out_dir, "metrics/checkpoint directory");
        cmd->add_option("--data-dir", data_dir, "dataset root directory");
        cmd->add_option("--ortho-rate", ortho_rate, "steps between projections, or init-only");
        cmd->add_option("--f-refresh", f_refresh, "steps between F refreshes, epoch or never");
        cmd->add_option("--align-sweep", align_sweep,
                        "comma-separated epochs to record alignment curves (0 = at init)");
        cmd->add_option("--epochs", epochs, "override the preset epoch count");
        cmd->add_option("--batch", batch, "override the batch size");
        cmd->add_option("--lr", lr, "override the learning rate");
        cmd->add_option("--train-subset", train_subset, "train on a deterministic subset");
        cmd->add_option("--eval-subset", eval_subset, "evaluate on a deterministic subset");
        cmd->add_option("--precision", precision, "f32 or f64");
    };

    auto *train = app.add_subcommand("train", "run one experiment");
    add_common(train);

    auto *ablate = app.add_subcommand("ablate", "run a grid along one schedule axis");
    add_common(ablate);
    std::string axis;
    std::vector<std::string> values;
    ablate->add_option("--axis", axis, "ortho | feedback")->required();
    ablate->add_option("--values", values, "axis values (numbers, never, init-only)")
        ->required()
        ->delimiter(',');

    auto *verify = app.add_subcommand("verify", "run the oracle/equivalence self-checks");
    (void)verify;

    auto *list = app.add_subcommand("list", "list available presets");
    (void)list;

    CLI11_PARSE(app, argc, argv);

    try {
        if (list->parsed()) {
            for (const auto &n : foton::preset_names()) std::printf("%s\n", n.c_str());
            return kExitOk;
        }
        if (verify->parsed()) return run_verify();

        foton::ExperimentConfig cfg = resolve_config(preset_name, config_path);
        if (seed != std::uint64_t(-1)) cfg.seed = seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!data_dir.empty()) cfg.data_dir = data_dir;
        if (!ortho_rate.empty()) foton::apply_config_entry(cfg, "ortho_rate", ortho_rate);
        if (!f_refresh.empty()) foton::apply_config_entry(cfg, "f_refresh", f_refresh);
        if (!align_sweep.empty()) foton::apply_config_entry(cfg, "align_epochs", align_sweep);
        if (!precision.empty()) foton::apply_config_entry(cfg, "precision", precision);
        if (epochs >= 0) cfg.epochs = std::size_t(epochs);
        if (batch > 0) cfg.batch_size = std::size_t(batch);
        if (lr > 0) cfg.lr = lr;
        if (train_subset >= 0) cfg.train_subset = std::size_t(train_subset);
        if (eval_subset >= 0) cfg.eval_subset = std::size_t(eval_subset);

        if (train->parsed()) {
            auto m = foton::run_experiment(cfg);
            print_run(m);
            return kExitOk;
        }
        if (ablate->parsed()) {
            foton::AblationAxis ax;
            if (axis == "ortho") ax = foton::AblationAxis::OrthoRate;
            else if (axis == "feedback") ax = foton::AblationAxis::FeedbackRefresh;
            else throw foton::ConfigError("--axis must be ortho or feedback");
            auto cells = foton::ablation_grid(cfg, ax, values);
            for (const auto &m : cells) {
                if (!m.error.empty())
                    std::printf("%-32s ERROR %s\n", m.name.c_str(), m.error.c_str());
                else
                    std::printf("%-32s final test acc %6.2f%%\n", m.name.c_str(),
                                m.final_test_acc());
            }
            return kExitOk;
        }
    } catch (const foton::ConfigError &e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const foton::DataError &e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const foton::DivergenceError &e) {
        std::fprintf(stderr, "divergence: %s (last good checkpoint: %s)\n", e.what(),
                     e.last_checkpoint.c_str());
        return kExitDivergence;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return kExitOk;
}
