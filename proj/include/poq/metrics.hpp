#pragma once

#include <optional>
#include <string>
#include <vector>

#include "poq/common.hpp"

namespace poq {

struct ClassStats {
    long tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0;
    double ap = 0.0;
    long positives = 0;
    bool counted = false; // enters the class-averaged means
};

/// Multi-label evaluation summary. Class-averaged values (cp/cr/cf1) mean
/// per-class scores first, then combine; overall values (op/or/of1) pool
/// true/false positives across every class and image. F1 is the harmonic
/// mean of the paired precision and recall; the geometric variant is kept
/// alongside as an alternate reading.
struct MetricReport {
    double class_p = 0.0, class_r = 0.0, class_f1 = 0.0;
    double overall_p = 0.0, overall_r = 0.0, overall_f1 = 0.0;
    double map = 0.0;
    double class_f1_geometric = 0.0, overall_f1_geometric = 0.0;
    bool has_map = false;
    std::vector<ClassStats> per_class;
};

// Precision/recall/F1 from predicted and true label sets; mAP left unset.
MetricReport prf_metrics(const std::vector<LabelSet>& predictions,
                         const std::vector<LabelSet>& truths, int num_classes);

/// Mean over classes (with at least one positive image) of average
/// precision; images ranked per class by score descending, ties broken by
/// ascending image index.
double mean_average_precision(const std::vector<std::vector<double>>& scores,
                              const std::vector<LabelSet>& truths, int num_classes);

/// First epoch where the curve enters its terminal plateau: the next
/// `window` values rise no more than `delta` above it and it sits within
/// delta (relatively) of the global maximum. Empty result when the series
/// never settles.
std::optional<int> convergence_epoch(const std::vector<double>& f1_series, int window = 5,
                                     double delta = 0.005);

// Mean over setups of 100·(baseline − ours)/baseline.
double speedup_percentage(const std::vector<double>& baseline_epochs,
                          const std::vector<double>& ours_epochs);

inline const char* metrics_csv_header() { return "epoch,split,cp,cr,cf1,op,or,of1,map"; }

std::string metrics_csv_row(int epoch, const std::string& split, const MetricReport& report);

} // namespace poq
