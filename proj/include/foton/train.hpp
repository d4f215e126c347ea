#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "foton/checkpoint.hpp"
#include "foton/config.hpp"
#include "foton/data.hpp"
#include "foton/diagnostics.hpp"
#include "foton/metrics.hpp"
#include "foton/presets.hpp"
#include "foton/rules.hpp"

namespace foton {

namespace detail {

// seed streams, one per consumer
inline constexpr std::uint64_t kSeedInit = 1;
inline constexpr std::uint64_t kSeedDropout = 2;
inline constexpr std::uint64_t kSeedShuffle = 3; // + epoch
inline constexpr std::uint64_t kSeedFeedback = 4;
inline constexpr std::uint64_t kSeedBaseline = 5;
inline constexpr std::uint64_t kSeedSubset = 6;
inline constexpr std::uint64_t kSeedSynth = 7;
inline constexpr std::uint64_t kSeedAlign = 8;

template <typename S> struct Problem {
    Dataset<S> train, test;
    Tensor<S> train_targets, test_targets; // (N, out)
};

template <typename S> Problem<S> load_problem(ExperimentConfig &cfg) {
    Problem<S> p;
    if (cfg.dataset == "mnist") {
        const std::string d = cfg.data_dir + "/mnist/";
        p.train = load_mnist_idx<S>(d + "train-images-idx3-ubyte",
                                    d + "train-labels-idx1-ubyte", "train");
        p.test = load_mnist_idx<S>(d + "t10k-images-idx3-ubyte",
                                   d + "t10k-labels-idx1-ubyte", "test");
        // loader output is [0,1]; the configured standardization applies here
        if (cfg.norm_mean[0] != 0.0 || cfg.norm_std[0] != 1.0)
            for (auto *ds : {&p.train, &p.test})
                for (std::size_t i = 0; i < ds->inputs.size(); ++i)
                    ds->inputs[i] =
                        S((double(ds->inputs[i]) - cfg.norm_mean[0]) / cfg.norm_std[0]);
        cfg.input_shape = {1, 28, 28};
        cfg.num_classes = 10;
    } else if (cfg.dataset == "cifar10") {
        const std::string d = cfg.data_dir + "/cifar10/";
        std::vector<std::string> train_paths;
        for (int i = 1; i <= 5; ++i)
            train_paths.push_back(d + "data_batch_" + std::to_string(i) + ".bin");
        p.train = load_cifar_binary<S>(train_paths, CifarVariant::Cifar10, false, cfg.norm_mean,
                                       cfg.norm_std, "train");
        p.test = load_cifar_binary<S>({d + "test_batch.bin"}, CifarVariant::Cifar10, false,
                                      cfg.norm_mean, cfg.norm_std, "test");
        cfg.input_shape = {3, 32, 32};
        cfg.num_classes = 10;
    } else if (cfg.dataset == "cifar100") {
        const std::string d = cfg.data_dir + "/cifar100/";
        p.train = load_cifar_binary<S>({d + "train.bin"}, CifarVariant::Cifar100,
                                       cfg.coarse_labels, cfg.norm_mean, cfg.norm_std, "train");
        p.test = load_cifar_binary<S>({d + "test.bin"}, CifarVariant::Cifar100,
                                      cfg.coarse_labels, cfg.norm_mean, cfg.norm_std, "test");
        cfg.input_shape = {3, 32, 32};
        cfg.num_classes = cfg.coarse_labels ? 20 : 100;
    } else if (cfg.dataset == "synthetic") {
        auto [teacher, train] =
            synthetic_regression<S>(cfg.synth_widths, cfg.synth_samples,
                                    derive_seed(cfg.seed, kSeedSynth));
        auto [teacher2, test] =
            synthetic_regression<S>(cfg.synth_widths, std::max<std::size_t>(32, cfg.synth_samples / 4),
                                    derive_seed(cfg.seed, kSeedSynth + 1));
        p.train = std::move(train);
        p.test = std::move(test);
        p.train_targets = forward_clean(teacher, p.train.inputs).post.back();
        p.test_targets = forward_clean(teacher, p.test.inputs).post.back();
        cfg.input_shape = {cfg.synth_widths.front()};
        cfg.num_classes = cfg.synth_widths.back();
    } else {
        throw ConfigError("unknown dataset: " + cfg.dataset);
    }

    if (cfg.train_subset > 0 && cfg.dataset != "synthetic")
        p.train = dataset_subset(p.train, cfg.train_subset, derive_seed(cfg.seed, kSeedSubset));
    if (cfg.eval_subset > 0 && cfg.dataset != "synthetic")
        p.test = dataset_subset(p.test, cfg.eval_subset, derive_seed(cfg.seed, kSeedSubset + 1));

    if (cfg.dataset != "synthetic") {
        p.train_targets = one_hot<S>(p.train.labels, cfg.num_classes);
        p.test_targets = one_hot<S>(p.test.labels, cfg.num_classes);
    }
    return p;
}

template <typename S> Network<S> build_network(const ExperimentConfig &cfg) {
    if (cfg.arch.empty()) throw ConfigError("empty architecture");
    Network<S> net;
    net.input_shape = cfg.input_shape;
    Shape cur = cfg.input_shape;
    for (std::size_t l = 0; l < cfg.arch.size(); ++l) {
        const LayerSpec &spec = cfg.arch[l];
        const std::uint64_t seed = derive_seed(cfg.seed, kSeedInit * 1000 + l);
        if (spec.kind == LayerSpec::Kind::Dense) {
            DenseLayer<S> d;
            const std::size_t in_d = shape_numel(cur);
            d.weight = cfg.init == InitKind::Orthogonal
                           ? orthogonal_init<S>(spec.units, in_d, seed)
                           : gaussian_matrix<S>(spec.units, in_d, seed,
                                                std::sqrt(2.0 / double(in_d)));
            d.act.kind = spec.act;
            d.dropout_rate = spec.dropout;
            net.layers.push_back(std::move(d));
            cur = {spec.units};
        } else if (spec.kind == LayerSpec::Kind::Conv) {
            if (cur.size() != 3)
                throw ConfigError("conv layer " + std::to_string(l) + " needs (c,h,w) input");
            ConvLayer<S> c;
            c.pad = spec.pad;
            c.act.kind = spec.act;
            if (spec.bcop) {
                c.bcop = bcop_init<S>(spec.filters, cur[0], spec.ksize, seed);
                c.kernel = bcop_materialize(*c.bcop);
            } else {
                const double fan = double(cur[0] * spec.ksize * spec.ksize);
                c.kernel = Tensor<S>({spec.filters, cur[0], spec.ksize, spec.ksize});
                Rng rng(seed);
                for (std::size_t i = 0; i < c.kernel.size(); ++i)
                    c.kernel[i] = S(rng.gaussian() * std::sqrt(2.0 / fan));
            }
            net.layers.push_back(std::move(c));
            cur = {spec.filters, cur[1] + 2 * spec.pad - spec.ksize + 1,
                   cur[2] + 2 * spec.pad - spec.ksize + 1};
        } else {
            if (cur.size() != 3)
                throw ConfigError("pool layer " + std::to_string(l) + " needs (c,h,w) input");
            net.layers.push_back(PoolLayer{spec.ph, spec.pw});
            cur = {cur[0], cur[1] / spec.ph, cur[2] / spec.pw};
        }
    }
    return net;
}

template <typename S>
std::pair<double, double> evaluate(const Network<S> &net, const Dataset<S> &ds,
                                   const Tensor<S> &targets, const LossKind &loss) {
    const std::size_t n = ds.size();
    const std::size_t out_d = targets.size() / n;
    double loss_acc = 0.0;
    std::size_t correct = 0;
    BatchIterator it(n, 512, 0, false);
    std::vector<std::size_t> idx;
    while (it.next(idx)) {
        auto [x, y_unused] = gather_batch(ds, idx);
        Tensor<S> y({idx.size(), out_d});
        for (std::size_t i = 0; i < idx.size(); ++i)
            std::memcpy(y.data() + i * out_d, targets.data() + idx[i] * out_d,
                        out_d * sizeof(S));
        auto tr = forward_clean(net, x);
        Tensor<S> out = tr.post.back().reshaped({idx.size(), out_d});
        loss_acc += loss_value(loss, out, y) * double(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::size_t pred = 0, truth = 0;
            for (std::size_t j = 1; j < out_d; ++j) {
                if (out.at2(i, j) > out.at2(i, pred)) pred = j;
                if (y.at2(i, j) > y.at2(i, truth)) truth = j;
            }
            correct += pred == truth;
        }
    }
    return {loss_acc / double(n), 100.0 * double(correct) / double(n)};
}

} // namespace detail

enum class AblationAxis { OrthoRate, FeedbackRefresh };

// Executes the step loop: clean pass, error, modulated pass when the rule
// needs one, updates for all layers from the same traces, apply, then the
// scheduled orthogonalization and F refresh. Deterministic per seed.
template <typename S> RunMetrics run_experiment_t(ExperimentConfig cfg) {
    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();

    auto problem = detail::load_problem<S>(cfg);
    const std::size_t n_train = problem.train.size();
    const std::size_t out_d = problem.train_targets.size() / n_train;
    const std::size_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t f_refresh =
        cfg.f_refresh == 0 ? steps_per_epoch : cfg.f_refresh; // default: once per epoch

    RunMetrics metrics;
    metrics.name = cfg.name;
    MetricsSink sink(cfg.out_dir, cfg.name);
    const std::string ckpt_path =
        cfg.out_dir.empty() ? "" : cfg.out_dir + "/" + cfg.name + "-checkpoint.bin";
    std::string last_good = "(no checkpoint)";

    TrainState<S> st;
    st.arch_fingerprint = arch_fingerprint(cfg);
    st.lr = cfg.lr;
    st.dropout_rng = Rng(derive_seed(cfg.seed, detail::kSeedDropout));

    std::optional<BaselineFeedback<S>> baseline;
    if (!cfg.resume_from.empty()) {
        st = checkpoint_load<S>(cfg.resume_from, arch_fingerprint(cfg));
    } else {
        st.net = detail::build_network<S>(cfg);
        if (cfg.rule == RuleKind::FOTON) {
            st.has_feedback = true;
            switch (cfg.f_mode) {
            case FeedbackMode::AlignedComposition:
                st.feedback = make_aligned_feedback(st.net, f_refresh);
                break;
            case FeedbackMode::Materialized:
                st.feedback = make_materialized_feedback(st.net, f_refresh);
                break;
            case FeedbackMode::FixedRandom:
                st.feedback = make_fixed_random_feedback<S>(
                    st.net, derive_seed(cfg.seed, detail::kSeedFeedback));
                break;
            case FeedbackMode::ExactPerSample:
                st.feedback = make_exact_per_sample_feedback<S>();
                break;
            }
        } else if (cfg.rule == RuleKind::PEPITA) {
            st.has_feedback = true;
            st.feedback = make_fixed_random_feedback<S>(
                st.net, derive_seed(cfg.seed, detail::kSeedFeedback));
        }
    }
    if (st.has_feedback) st.feedback.refresh_every = f_refresh;
    if (cfg.rule == RuleKind::FA)
        baseline = make_fa_feedback(st.net, derive_seed(cfg.seed, detail::kSeedBaseline));
    if (cfg.rule == RuleKind::DFA)
        baseline = make_dfa_feedback(st.net, derive_seed(cfg.seed, detail::kSeedBaseline));

    // fixed evaluation batch for the alignment curves
    Tensor<S> align_inputs, align_targets;
    if (!cfg.align_epochs.empty()) {
        const std::size_t n = std::min(cfg.align_batch, n_train);
        std::vector<std::size_t> order(n_train);
        for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
        Rng arng(derive_seed(cfg.seed, detail::kSeedAlign));
        for (std::size_t i = n_train; i-- > 1;) std::swap(order[i], order[arng.index(i + 1)]);
        order.resize(n);
        auto [ax, ay] = gather_batch(problem.train, order);
        align_inputs = std::move(ax);
        align_targets = std::move(ay);
        if (cfg.dataset == "synthetic")
            for (std::size_t i = 0; i < n; ++i)
                std::memcpy(align_targets.data() + i * out_d,
                            problem.train_targets.data() + order[i] * out_d, out_d * sizeof(S));
    }

    auto run_alignment = [&](std::size_t epoch) {
        if (cfg.align_epochs.empty()) return;
        if (std::find(cfg.align_epochs.begin(), cfg.align_epochs.end(), epoch) ==
            cfg.align_epochs.end())
            return;
        auto layers = default_report_layers(st.net.layers.size());
        auto recs = alignment_sweep<S>(st.net, cfg.rule, st.has_feedback ? &st.feedback : nullptr,
                                       baseline ? &*baseline : nullptr, align_inputs,
                                       align_targets, cfg.loss, layers, cfg.align_on_weights);
        for (auto &r : recs) {
            r.step = st.step;
            metrics.alignment.push_back(r);
            sink.alignment(r);
        }
    };

    run_alignment(st.epoch); // align_epochs containing 0 means "at initialization"

    if (cfg.epochs == 0 || st.epoch >= cfg.epochs) {
        auto [test_loss, test_acc] =
            detail::evaluate(st.net, problem.test, problem.test_targets, cfg.loss);
        EpochMetrics em;
        em.epoch = st.epoch;
        em.test_loss = test_loss;
        em.test_acc = test_acc;
        em.lr = st.lr;
        metrics.epochs.push_back(em);
        sink.epoch(em);
        sink.summary(metrics);
        metrics.wall_seconds = std::chrono::duration<double>(clock::now() - t_start).count();
        return metrics;
    }

    std::vector<std::size_t> idx;
    for (std::size_t epoch = st.epoch + 1; epoch <= cfg.epochs; ++epoch) {
        const auto t_epoch = clock::now();
        BatchIterator batches(n_train, cfg.batch_size,
                              derive_seed(cfg.seed, detail::kSeedShuffle * 1000 + epoch));
        double train_loss = 0.0;
        std::size_t train_correct = 0;

        while (batches.next(idx)) {
            auto [x, y] = gather_batch(problem.train, idx);
            if (cfg.dataset == "synthetic")
                for (std::size_t i = 0; i < idx.size(); ++i)
                    std::memcpy(y.data() + i * out_d,
                                problem.train_targets.data() + idx[i] * out_d,
                                out_d * sizeof(S));

            UpdateSet<S> update;
            double batch_loss = 0.0;
            bool used_dropout = false;
            for (const auto &spec : cfg.arch)
                if (spec.kind == LayerSpec::Kind::Dense && spec.dropout > 0.0)
                    used_dropout = true;
            Rng *drop = used_dropout ? &st.dropout_rng : nullptr;

            auto tr = forward_clean(st.net, x, drop);
            Tensor<S> out = tr.post.back().reshaped({idx.size(), out_d});
            batch_loss = loss_value(cfg.loss, out, y);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                std::size_t pred = 0, truth = 0;
                for (std::size_t j = 1; j < out_d; ++j) {
                    if (out.at2(i, j) > out.at2(i, pred)) pred = j;
                    if (y.at2(i, j) > y.at2(i, truth)) truth = j;
                }
                train_correct += pred == truth;
            }
            Tensor<S> e = compute_error(cfg.loss, out, y);

            switch (cfg.rule) {
            case RuleKind::BP:
                update = bp_update(st.net, x, y, cfg.loss, st.lr, cfg.weight_decay, &tr);
                break;
            case RuleKind::FOTON:
                modulated_forward(st.net, x, e, st.feedback, tr);
                update = foton_update(st.net, tr, e, st.lr, cfg.weight_decay);
                break;
            case RuleKind::PEPITA:
                modulated_forward(st.net, x, e, st.feedback, tr);
                update = pepita_update(st.net, tr, e, st.lr, cfg.weight_decay,
                                       cfg.pepita_variant);
                break;
            case RuleKind::FA:
                update = fa_update(st.net, tr, e, *baseline, st.lr, cfg.weight_decay);
                break;
            case RuleKind::DFA:
                update = dfa_update(st.net, tr, e, *baseline, st.lr, cfg.weight_decay);
                break;
            }

            if (!std::isfinite(batch_loss))
                throw DivergenceError("loss diverged at step " + std::to_string(st.step + 1) +
                                          " (epoch " + std::to_string(epoch) + ")",
                                      last_good);

            apply_updates(st.net, update);
            ++st.step;
            if (cfg.ortho_rate != kOrthoInitOnly && st.step % cfg.ortho_rate == 0)
                orthogonalize_network(st.net, cfg.bjorck_iters);
            if (st.has_feedback) refresh_feedback(st.feedback, st.net, st.step);

            train_loss += batch_loss * double(idx.size());
        }

        auto [test_loss, test_acc] =
            detail::evaluate(st.net, problem.test, problem.test_targets, cfg.loss);
        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = train_loss / double(n_train);
        em.train_acc = 100.0 * double(train_correct) / double(n_train);
        em.test_loss = test_loss;
        em.test_acc = test_acc;
        em.lr = st.lr;
        em.seconds = std::chrono::duration<double>(clock::now() - t_epoch).count();
        metrics.epochs.push_back(em);
        sink.epoch(em);

        run_alignment(epoch);

        // lr decay after the listed epoch, exact factor 0.1
        if (std::find(cfg.decay_epochs.begin(), cfg.decay_epochs.end(), epoch) !=
            cfg.decay_epochs.end())
            st.lr *= 0.1;

        st.epoch = epoch;
        if (!ckpt_path.empty()) {
            checkpoint_save(st, ckpt_path);
            last_good = ckpt_path;
        }
    }

    sink.summary(metrics);
    metrics.wall_seconds = std::chrono::duration<double>(clock::now() - t_start).count();
    return metrics;
}

inline RunMetrics run_experiment(const ExperimentConfig &cfg) {
    return cfg.precision == Precision::Float64 ? run_experiment_t<double>(cfg)
                                               : run_experiment_t<float>(cfg);
}

// Runs the base config once per axis value; a failing cell records its
// error and the remaining cells still run.
inline std::vector<RunMetrics> ablation_grid(const ExperimentConfig &base, AblationAxis axis,
                                             const std::vector<std::string> &values) {
    std::vector<RunMetrics> out;
    for (const auto &v : values) {
        ExperimentConfig cfg = base;
        cfg.name = base.name + (axis == AblationAxis::OrthoRate ? "-rortho-" : "-rf-") + v;
        try {
            if (axis == AblationAxis::OrthoRate)
                cfg.ortho_rate =
                    (v == "init-only" || v == "init") ? kOrthoInitOnly : std::stoull(v);
            else
                cfg.f_refresh = (v == "never" || v == "inf") ? kNeverRefresh : std::stoull(v);
            out.push_back(run_experiment(cfg));
        } catch (const std::exception &e) {
            RunMetrics failed;
            failed.name = cfg.name;
            failed.error = e.what();
            out.push_back(std::move(failed));
        }
    }
    if (!base.out_dir.empty()) {
        std::ofstream summary(base.out_dir + "/" + base.name + "-ablation.csv");
        summary << "run,final_test_acc,error\n";
        for (const auto &m : out)
            summary << m.name << "," << m.final_test_acc() << "," << m.error << "\n";
    }
    return out;
}

} // namespace foton
