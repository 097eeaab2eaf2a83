#include "poq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace poq {

namespace {

double safe_div(double num, double den) { return den > 0.0 ? num / den : 0.0; }

double harmonic_f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

} // namespace

MetricReport prf_metrics(const std::vector<LabelSet>& predictions,
                         const std::vector<LabelSet>& truths, int num_classes) {
    if (predictions.size() != truths.size())
        throw DataError("prf_metrics: prediction/truth list length mismatch");

    MetricReport report;
    report.per_class.assign(num_classes, {});
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        for (int cls : predictions[i])
            if (cls < 0 || cls >= num_classes)
                throw DataError("prf_metrics: predicted class " + std::to_string(cls) +
                                " out of range");
        for (int cls : truths[i])
            if (cls < 0 || cls >= num_classes)
                throw DataError("prf_metrics: true class " + std::to_string(cls) + " out of range");
        for (int k = 0; k < num_classes; ++k) {
            bool pred = label_set_contains(predictions[i], k);
            bool truth = label_set_contains(truths[i], k);
            auto& s = report.per_class[k];
            s.tp += pred && truth;
            s.fp += pred && !truth;
            s.fn += !pred && truth;
        }
    }

    long pooled_tp = 0, pooled_fp = 0, pooled_fn = 0;
    double psum = 0.0, rsum = 0.0;
    long counted = 0;
    for (auto& s : report.per_class) {
        s.positives = s.tp + s.fn;
        s.precision = safe_div(double(s.tp), double(s.tp + s.fp));
        s.recall = safe_div(double(s.tp), double(s.tp + s.fn));
        // classes never predicted and never present stay out of the averages
        s.counted = (s.positives > 0) || (s.tp + s.fp > 0);
        if (s.counted) {
            psum += s.precision;
            rsum += s.recall;
            ++counted;
        }
        pooled_tp += s.tp;
        pooled_fp += s.fp;
        pooled_fn += s.fn;
    }

    report.class_p = counted > 0 ? psum / counted : 0.0;
    report.class_r = counted > 0 ? rsum / counted : 0.0;
    report.class_f1 = harmonic_f1(report.class_p, report.class_r);
    report.class_f1_geometric = std::sqrt(report.class_p * report.class_r);
    report.overall_p = safe_div(double(pooled_tp), double(pooled_tp + pooled_fp));
    report.overall_r = safe_div(double(pooled_tp), double(pooled_tp + pooled_fn));
    report.overall_f1 = harmonic_f1(report.overall_p, report.overall_r);
    report.overall_f1_geometric = std::sqrt(report.overall_p * report.overall_r);
    return report;
}

double mean_average_precision(const std::vector<std::vector<double>>& scores,
                              const std::vector<LabelSet>& truths, int num_classes) {
    if (scores.size() != truths.size())
        throw DataError("mean_average_precision: score/truth list length mismatch");
    const std::size_t n = scores.size();
    for (const auto& row : scores) {
        if (row.size() != static_cast<std::size_t>(num_classes))
            throw DataError("mean_average_precision: score row has wrong class count");
        for (double v : row)
            if (!std::isfinite(v)) throw DataError("mean_average_precision: non-finite score");
    }

    double ap_sum = 0.0;
    int classes_with_positives = 0;
    std::vector<std::size_t> order(n);
    for (int k = 0; k < num_classes; ++k) {
        long positives = 0;
        for (const auto& t : truths) positives += label_set_contains(t, k);
        if (positives == 0) continue;
        ++classes_with_positives;

        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (scores[a][k] != scores[b][k]) return scores[a][k] > scores[b][k];
            return a < b;
        });

        double ap = 0.0;
        long hits = 0;
        for (std::size_t rank = 0; rank < n; ++rank) {
            if (!label_set_contains(truths[order[rank]], k)) continue;
            ++hits;
            double precision = double(hits) / double(rank + 1);
            ap += precision / double(positives); // recall step is 1/positives per hit
        }
        ap_sum += ap;
    }
    if (classes_with_positives == 0)
        throw DataError("mean_average_precision: no class has a positive image");
    return ap_sum / classes_with_positives;
}

std::optional<int> convergence_epoch(const std::vector<double>& f1_series, int window,
                                     double delta) {
    if (window < 1) throw ConfigError("convergence_epoch: window must be positive");
    if (f1_series.size() < static_cast<std::size_t>(window))
        throw ConfigError("convergence_epoch: series shorter than the window");
    double global_max = *std::max_element(f1_series.begin(), f1_series.end());
    for (std::size_t e = 0; e + window <= f1_series.size(); ++e) {
        double wmax = *std::max_element(f1_series.begin() + e, f1_series.begin() + e + window);
        if (wmax - f1_series[e] <= delta && f1_series[e] >= global_max * (1.0 - delta))
            return static_cast<int>(e);
    }
    return std::nullopt;
}

double speedup_percentage(const std::vector<double>& baseline_epochs,
                          const std::vector<double>& ours_epochs) {
    if (baseline_epochs.empty() || baseline_epochs.size() != ours_epochs.size())
        throw ConfigError("speedup_percentage: need matching non-empty epoch lists");
    double sum = 0.0;
    for (std::size_t i = 0; i < baseline_epochs.size(); ++i) {
        if (!(baseline_epochs[i] > 0.0))
            throw DataError("speedup_percentage: baseline epoch count must be positive");
        sum += 100.0 * (baseline_epochs[i] - ours_epochs[i]) / baseline_epochs[i];
    }
    return sum / double(baseline_epochs.size());
}

std::string metrics_csv_row(int epoch, const std::string& split, const MetricReport& report) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", epoch,
                  split.c_str(), report.class_p, report.class_r, report.class_f1,
                  report.overall_p, report.overall_r, report.overall_f1, report.map);
    return buf;
}

} // namespace poq
