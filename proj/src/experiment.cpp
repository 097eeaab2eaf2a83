#include "poq/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include "poq/assignment.hpp"

namespace poq {

namespace {

std::vector<float> target_vector(const LabelSet& labels, int num_classes) {
    std::vector<float> t(num_classes, 0.0f);
    for (int cls : labels) t[cls] = 1.0f;
    return t;
}

LabelSet support_of(const std::vector<float>& target) {
    LabelSet out;
    for (std::size_t i = 0; i < target.size(); ++i)
        if (target[i] > 0.0f) out.push_back(static_cast<int>(i));
    return out;
}

int max_label_count(const std::vector<Sample>& samples) {
    std::size_t m = 0;
    for (const auto& s : samples) m = std::max(m, s.labels.size());
    return static_cast<int>(m);
}

MetricReport report_from(const std::vector<LabelSet>& preds, const std::vector<LabelSet>& truths,
                         const std::vector<std::vector<double>>& scores, int num_classes) {
    auto report = prf_metrics(preds, truths, num_classes);
    bool any_positive = false;
    for (const auto& t : truths)
        if (!t.empty()) { any_positive = true; break; }
    if (any_positive) {
        report.map = mean_average_precision(scores, truths, num_classes);
        report.has_map = true;
    }
    return report;
}

} // namespace

void ExperimentConfig::validate() const {
    model.validate();
    mixup.validate();
    if (epochs < 0) throw ConfigError("epoch count must be non-negative");
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    if (decode_threshold < 0.0 || decode_threshold >= 1.0)
        throw ConfigError("decode threshold must lie in [0, 1)");
    if (loss == LossKind::Exhaustive && model.num_queries != model.num_classes)
        throw ConfigError("exhaustive loss requires exactly one query per class (O = " +
                          std::to_string(model.num_queries) + ", classes = " +
                          std::to_string(model.num_classes) + ")");
    if (mixup.mode == MixupMode::RestrictedHard && batch_size % 2 != 0)
        throw ConfigError("restricted hard mixup requires an even batch size");
    if (convergence_window < 1) throw ConfigError("convergence window must be positive");
    if (!(optim.transformer_lr > 0.0) || !(optim.backbone_lr > 0.0))
        throw ConfigError("learning rates must be positive");
}

std::vector<std::vector<std::size_t>> batch_schedule(std::uint64_t seed, int epoch, std::size_t n,
                                                     std::size_t batch_size) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, 3, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

Dataset obtain_dataset(const ExperimentConfig& cfg) {
    if (cfg.data_dir.empty()) {
        DatasetSpec spec = cfg.data;
        spec.num_classes = cfg.model.num_classes;
        spec.image_size = cfg.model.image_size;
        return generate(spec);
    }
    namespace fs = std::filesystem;
    Dataset data;
    bool first = true;
    for (auto [split, out] : {std::pair{Split::Train, &data.train}, {Split::Val, &data.val},
                              {Split::Test, &data.test}}) {
        fs::path path = fs::path(cfg.data_dir) / (std::string(split_name(split)) + ".poqd");
        auto [spec, samples] = load_dataset(path.string());
        if (first) {
            data.spec = spec;
            first = false;
        }
        *out = std::move(samples);
    }
    if (data.spec.num_classes != cfg.model.num_classes)
        throw ConfigError("dataset has " + std::to_string(data.spec.num_classes) +
                          " classes but the model is configured for " +
                          std::to_string(cfg.model.num_classes));
    if (data.spec.image_size != cfg.model.image_size)
        throw ConfigError("dataset image size " + std::to_string(data.spec.image_size) +
                          " does not match the model's " + std::to_string(cfg.model.image_size));
    return data;
}

MetricReport evaluate_model(const Model<float>& model, const std::vector<Sample>& samples,
                            double threshold) {
    NoGradGuard no_grad;
    const int c = model.config.num_classes;
    std::vector<LabelSet> preds, truths;
    std::vector<std::vector<double>> scores;
    preds.reserve(samples.size());
    for (const auto& sample : samples) {
        auto logits = model.forward(sample.image);
        auto probs = detail::probs_from_logits(logits);
        auto decoded = decode_predictions(probs, model.config.num_queries, c, threshold);
        preds.push_back(std::move(decoded.labels));
        scores.push_back(std::move(decoded.class_scores));
        truths.push_back(sample.labels);
    }
    return report_from(preds, truths, scores, c);
}

SpecializationReport query_specialization(const Model<float>& model,
                                          const std::vector<Sample>& samples) {
    NoGradGuard no_grad;
    const int O = model.config.num_queries, c = model.config.num_classes;
    SpecializationReport report;
    report.counts.assign(O, std::vector<long>(c, 0));
    for (const auto& sample : samples) {
        auto logits = model.forward(sample.image);
        for (int q = 0; q < O; ++q) {
            const float* row = logits->value.data() + static_cast<std::size_t>(q) * (c + 1);
            int best = 0;
            for (int j = 1; j <= c; ++j)
                if (row[j] > row[best]) best = j;
            if (best < c) report.counts[q][best] += 1;
        }
    }
    report.normalized.assign(O, std::vector<double>(c, 0.0));
    for (int q = 0; q < O; ++q) {
        long total = std::accumulate(report.counts[q].begin(), report.counts[q].end(), 0L);
        if (total == 0) continue;
        for (int k = 0; k < c; ++k)
            report.normalized[q][k] = double(report.counts[q][k]) / double(total);
    }
    return report;
}

TrainOutput train_run(const ExperimentConfig& cfg, const Dataset& data, std::ostream* progress,
                      const std::string& arm_tag) {
    cfg.validate();
    const int c = cfg.model.num_classes;
    const int O = cfg.model.num_queries;

    // alignment feasibility, including label unions produced by hard mixup
    int max_labels = max_label_count(data.train);
    int worst = max_labels;
    if (cfg.mixup.mode == MixupMode::Hard || cfg.mixup.mode == MixupMode::RestrictedHard)
        worst = std::min(c, 2 * max_labels);
    if (worst > O)
        throw ConfigError("up to " + std::to_string(worst) +
                          " labels per image (after mixup) exceed the " + std::to_string(O) +
                          " object queries; raise --queries or lower --max-labels");
    if (cfg.mixup.mode == MixupMode::RestrictedHard &&
        (data.train.size() % cfg.batch_size) % 2 != 0)
        throw ConfigError("restricted hard mixup needs an even final batch; adjust the train "
                          "size or batch size");

    TrainOutput out{RunLog{}, Model<float>(cfg.model, cfg.seed)};
    auto& model = out.model;
    auto& log = out.log;

    auto backbone_params = model.backbone_parameters();
    auto transformer_params = model.transformer_parameters();
    SgdMomentum<float> sgd(static_cast<float>(cfg.resolved_backbone_lr()),
                           static_cast<float>(cfg.optim.backbone_momentum));
    Adam<float> adam(static_cast<float>(cfg.optim.transformer_lr));

    Rng mixup_rng(mix_seed(cfg.seed, 4));
    std::vector<std::vector<float>> best_state = model.snapshot_state();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        auto batches = batch_schedule(cfg.seed, epoch, data.train.size(), cfg.batch_size);

        double loss_sum = 0.0;
        long loss_count = 0;
        std::vector<LabelSet> train_preds, train_truths;
        std::vector<std::vector<double>> train_scores;

        for (const auto& batch_indices : batches) {
            for (std::size_t idx : batch_indices)
                log.batch_stream_hash = fnv1a_update(log.batch_stream_hash, idx);

            Batch batch;
            batch.image_numel = data.train.empty() ? 0 : data.train[0].image.size();
            batch.num_classes = c;
            batch.epoch_index = epoch;
            for (std::size_t idx : batch_indices) {
                batch.images.push_back(data.train[idx].image);
                batch.targets.push_back(target_vector(data.train[idx].labels, c));
            }
            batch = apply_mixup(batch, cfg.mixup, mixup_rng);

            zero_grads(backbone_params);
            zero_grads(transformer_params);
            const float inv_n = 1.0f / static_cast<float>(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) {
                auto logits = model.forward(batch.images[i]);
                TensorPtr<float> loss;
                if (cfg.mixup.mode == MixupMode::Soft) {
                    loss = cfg.loss == LossKind::Aligned
                               ? aligned_loss_soft(logits, batch.targets[i])
                               : exhaustive_loss_soft(logits, batch.targets[i]);
                } else {
                    LabelSet labels = support_of(batch.targets[i]);
                    loss = cfg.loss == LossKind::Aligned ? aligned_loss(logits, labels)
                                                         : exhaustive_loss(logits, labels);
                }
                assert_finite(*loss, "training loss");
                backward(loss, inv_n);
                loss_sum += loss->value[0];
                ++loss_count;

                auto probs = detail::probs_from_logits(logits);
                auto decoded = decode_predictions(probs, O, c, cfg.decode_threshold);
                train_preds.push_back(std::move(decoded.labels));
                train_scores.push_back(std::move(decoded.class_scores));
                train_truths.push_back(support_of(batch.targets[i]));
            }
            sgd.step(backbone_params);
            adam.step(transformer_params);
        }

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
        row.train_metrics = report_from(train_preds, train_truths, train_scores, c);
        row.val_metrics = evaluate_model(model, data.val, cfg.decode_threshold);
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(row);

        if (log.best_epoch < 0 || row.val_metrics.class_f1 > log.best_val_cf1) {
            log.best_epoch = epoch;
            log.best_val_cf1 = row.val_metrics.class_f1;
            best_state = model.snapshot_state();
        }

        if (progress) {
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          "%s epoch %3d  loss %.4f  train-cf1 %.3f  val-cf1 %.3f  (%.1fs)\n",
                          arm_tag.empty() ? "train" : arm_tag.c_str(), epoch, row.train_loss,
                          row.train_metrics.class_f1, row.val_metrics.class_f1, row.seconds);
            *progress << buf << std::flush;
        }
    }

    model.restore_state(best_state);
    if (cfg.epochs > 0) {
        log.test_metrics = evaluate_model(model, data.test, cfg.decode_threshold);
        log.has_test = true;
    }
    return out;
}

std::string ArmSpec::name() const {
    std::string n = query_mode_name(mode);
    n += "-d" + std::to_string(depth);
    if (!residual_cross) n += "-nores";
    return n;
}

std::vector<ArmResult> run_arms(const ExperimentConfig& base, const std::vector<ArmSpec>& arms,
                                const Dataset& data, int workers, std::ostream* progress) {
    if (workers <= 0) {
        unsigned hw = std::thread::hardware_concurrency();
        workers = static_cast<int>(std::max(1u, hw));
    }
    workers = std::min<int>(workers, static_cast<int>(arms.size()));

    std::vector<ArmResult> results(arms.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= arms.size()) return;
            const auto& arm = arms[i];
            ExperimentConfig cfg = base;
            cfg.model.query_mode = arm.mode;
            cfg.model.num_decoder_layers = arm.depth;
            cfg.model.residual_cross_enabled = arm.residual_cross;
            cfg.seed = arm.seed;
            auto output = train_run(cfg, data, progress,
                                    arm.name() + "-s" + std::to_string(arm.seed));
            ArmResult r;
            r.arm = arm;
            r.val_cf1 = output.log.val_cf1_series();
            r.conv_epoch = convergence_epoch(r.val_cf1, base.convergence_window,
                                             base.convergence_delta);
            r.best_val_cf1 = output.log.best_val_cf1;
            r.test_cf1 = output.log.has_test ? output.log.test_metrics.class_f1 : 0.0;
            r.batch_stream_hash = output.log.batch_stream_hash;
            results[i] = std::move(r);
        }
    };

    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return results;
}

ConvergenceReport compare_queries(const ExperimentConfig& base, const std::vector<QueryMode>& modes,
                                  const std::vector<int>& depths,
                                  const std::vector<std::uint64_t>& seeds, const Dataset& data,
                                  int workers, std::ostream* progress) {
    if (modes.size() < 2)
        throw ConfigError("compare-queries needs at least two query modes");
    if (depths.empty() || seeds.empty())
        throw ConfigError("compare-queries needs at least one depth and one seed");
    if (base.epochs < base.convergence_window)
        throw ConfigError("epoch budget shorter than the convergence window");

    std::vector<ArmSpec> arms;
    for (auto mode : modes)
        for (int depth : depths)
            for (auto seed : seeds) arms.push_back({mode, depth, seed, true});

    ConvergenceReport report;
    report.epoch_budget = base.epochs;
    report.arms = run_arms(base, arms, data, workers, progress);

    // arms sharing a seed must have consumed identical batch streams
    for (const auto& r : report.arms)
        for (const auto& other : report.arms)
            if (r.arm.seed == other.arm.seed && r.batch_stream_hash != other.batch_stream_hash)
                throw DataError("batch streams diverged between arms with the same seed");

    auto mean_effective_epoch = [&](QueryMode mode, int depth) -> std::optional<double> {
        double sum = 0.0;
        int n = 0;
        for (const auto& r : report.arms) {
            if (r.arm.mode != mode || r.arm.depth != depth) continue;
            sum += r.conv_epoch ? double(*r.conv_epoch) : double(base.epochs);
            ++n;
        }
        if (n == 0) return std::nullopt;
        return sum / n;
    };

    bool have_pair = std::count(modes.begin(), modes.end(), QueryMode::Primal) &&
                     std::count(modes.begin(), modes.end(), QueryMode::AdditiveShared);
    if (have_pair) {
        std::vector<double> baseline, ours;
        for (int depth : depths) {
            if (depth > 3) continue;
            auto b = mean_effective_epoch(QueryMode::AdditiveShared, depth);
            auto o = mean_effective_epoch(QueryMode::Primal, depth);
            if (!b || !o) continue;
            DepthSpeedup ds;
            ds.depth = depth;
            ds.baseline_mean_epoch = *b;
            ds.ours_mean_epoch = *o;
            ds.percentage = *b > 0.0 ? 100.0 * (*b - *o) / *b : 0.0;
            report.per_depth.push_back(ds);
            if (*b > 0.0) {
                baseline.push_back(*b);
                ours.push_back(*o);
            }
        }
        if (!baseline.empty()) {
            report.average_speedup = speedup_percentage(baseline, ours);
            report.speedup_defined = true;
        }
    }
    return report;
}

void write_metrics_csv(const std::string& path, const RunLog& log) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f << metrics_csv_header() << "\n";
    for (const auto& row : log.epochs) {
        f << metrics_csv_row(row.epoch, "train", row.train_metrics) << "\n";
        f << metrics_csv_row(row.epoch, "val", row.val_metrics) << "\n";
    }
    if (log.has_test) f << metrics_csv_row(log.best_epoch, "test", log.test_metrics) << "\n";
    if (!f) throw DataError("short write to '" + path + "'");
}

void write_curves_csv(const std::string& path, const ConvergenceReport& report) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f << "arm,seed,epoch,cf1\n";
    for (const auto& r : report.arms) {
        char buf[96];
        for (std::size_t e = 0; e < r.val_cf1.size(); ++e) {
            std::snprintf(buf, sizeof(buf), "%s,%llu,%zu,%.6f\n", r.arm.name().c_str(),
                          static_cast<unsigned long long>(r.arm.seed), e, r.val_cf1[e]);
            f << buf;
        }
    }
    if (!f) throw DataError("short write to '" + path + "'");
}

void write_specialization_csv(const std::string& path, const SpecializationReport& report) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    char buf[32];
    for (const auto& row : report.normalized) {
        for (std::size_t k = 0; k < row.size(); ++k) {
            std::snprintf(buf, sizeof(buf), "%s%.6f", k ? "," : "", row[k]);
            f << buf;
        }
        f << "\n";
    }
    if (!f) throw DataError("short write to '" + path + "'");
}

} // namespace poq
