#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "poq/metrics.hpp"
#include "poq/mixup.hpp"
#include "poq/model.hpp"
#include "poq/synthdata.hpp"

namespace poq {

enum class LossKind { Aligned, Exhaustive };

inline const char* loss_kind_name(LossKind k) {
    return k == LossKind::Aligned ? "aligned" : "exhaustive";
}

inline LossKind parse_loss_kind(const std::string& s) {
    if (s == "aligned") return LossKind::Aligned;
    if (s == "exhaustive") return LossKind::Exhaustive;
    throw ConfigError("unknown loss '" + s + "' (expected aligned | exhaustive)");
}

struct OptimSettings {
    double backbone_lr = 1e-3;
    double backbone_momentum = 0.9;
    double transformer_lr = 1e-4;
    bool backbone_lr_explicit = false;
};

struct ExperimentConfig {
    ModelConfig model;
    MixupConfig mixup;
    DatasetSpec data;
    std::string data_dir; // when set, train/val/test .poqd files are loaded from here
    int epochs = 30;
    int batch_size = 32;
    std::uint64_t seed = 1;
    OptimSettings optim;
    LossKind loss = LossKind::Aligned;
    double decode_threshold = 0.0;
    std::string out_dir;
    int convergence_window = 5;
    double convergence_delta = 0.005;

    // Additive-query arms train their backbone at the transformer rate
    // unless the user pinned one explicitly.
    double resolved_backbone_lr() const {
        if (!optim.backbone_lr_explicit && model.query_mode != QueryMode::Primal)
            return optim.transformer_lr;
        return optim.backbone_lr;
    }

    void validate() const;
};

struct EpochRow {
    int epoch = 0;
    MetricReport train_metrics, val_metrics;
    double train_loss = 0.0;
    double seconds = 0.0;
};

struct RunLog {
    std::vector<EpochRow> epochs;
    MetricReport test_metrics;
    bool has_test = false;
    int best_epoch = -1;
    double best_val_cf1 = 0.0;
    std::uint64_t batch_stream_hash = kFnvOffset;

    std::vector<double> val_cf1_series() const {
        std::vector<double> out;
        out.reserve(epochs.size());
        for (const auto& e : epochs) out.push_back(e.val_metrics.class_f1);
        return out;
    }
};

/// Epoch's minibatch layout: a seeded shuffle of sample indices chunked into
/// batches. Depends only on (seed, epoch, n, batch_size) so that arms sharing
/// a seed see identical batch streams.
std::vector<std::vector<std::size_t>> batch_schedule(std::uint64_t seed, int epoch, std::size_t n,
                                                     std::size_t batch_size);

Dataset obtain_dataset(const ExperimentConfig& cfg);

struct TrainOutput {
    RunLog log;
    Model<float> model; // parameters of the best-validation epoch
};

/// Minibatch training with the configured mixup, loss, and the split
/// optimizer (momentum-SGD on the backbone, Adam on the transformer).
/// Validation runs every epoch; the best validation C-F1 snapshot is
/// restored into the returned model and scored on the test split.
TrainOutput train_run(const ExperimentConfig& cfg, const Dataset& data,
                      std::ostream* progress = nullptr, const std::string& arm_tag = "");

MetricReport evaluate_model(const Model<float>& model, const std::vector<Sample>& samples,
                            double threshold = 0.0);

struct SpecializationReport {
    std::vector<std::vector<long>> counts;        // O×c argmax hits
    std::vector<std::vector<double>> normalized;  // rows sum to 1, or stay all-zero
};

// Distribution of non-empty argmax predictions over queries for a split.
SpecializationReport query_specialization(const Model<float>& model,
                                          const std::vector<Sample>& samples);

struct ArmSpec {
    QueryMode mode = QueryMode::Primal;
    int depth = 1;
    std::uint64_t seed = 1;
    bool residual_cross = true;

    std::string name() const;
};

struct ArmResult {
    ArmSpec arm;
    std::vector<double> val_cf1;
    std::optional<int> conv_epoch;
    double best_val_cf1 = 0.0;
    double test_cf1 = 0.0;
    std::uint64_t batch_stream_hash = 0;
};

struct DepthSpeedup {
    int depth = 0;
    double baseline_mean_epoch = 0.0; // additive-shared, plateau epoch or epoch budget
    double ours_mean_epoch = 0.0;     // primal
    double percentage = 0.0;
};

struct ConvergenceReport {
    std::vector<ArmResult> arms;
    std::vector<DepthSpeedup> per_depth;
    double average_speedup = 0.0;
    bool speedup_defined = false;
    int epoch_budget = 0;
};

/// Trains every (mode × depth × seed) arm on the shared dataset with matched
/// batch streams and compares plateau epochs; the headline speedup averages
/// primal vs additive-shared over depths up to three. Arms without a plateau
/// count as converging at the epoch budget.
ConvergenceReport compare_queries(const ExperimentConfig& base, const std::vector<QueryMode>& modes,
                                  const std::vector<int>& depths,
                                  const std::vector<std::uint64_t>& seeds, const Dataset& data,
                                  int workers = 0, std::ostream* progress = nullptr);

// Plumbing shared by compare_queries and the standalone ablation arms.
std::vector<ArmResult> run_arms(const ExperimentConfig& base, const std::vector<ArmSpec>& arms,
                                const Dataset& data, int workers, std::ostream* progress);

void write_metrics_csv(const std::string& path, const RunLog& log);
void write_curves_csv(const std::string& path, const ConvergenceReport& report);
void write_curves_svg(const std::string& path, const ConvergenceReport& report);
void write_specialization_csv(const std::string& path, const SpecializationReport& report);

} // namespace poq
