#pragma once

#include <vector>

#include "poq/common.hpp"
#include "poq/tensor.hpp"

namespace poq {

/// Per-query targets for one image: `target[j]` is a class index in
/// [0, num_classes) or num_classes for the empty token.
struct Assignment {
    std::vector<int> target;
    int num_classes = 0;

    int empty_index() const { return num_classes; }
};

/// Minimum-cost matching of all targets to distinct queries. `cost` is
/// row-major with one row per query and one column per target; requires at
/// least as many queries as targets. Returns, per target column, the index
/// of the query it is matched to. O(n³) worst case.
std::vector<int> hungarian(const std::vector<double>& cost, std::size_t n_queries,
                           std::size_t n_targets);

// Row-wise softmax over plain values (the c+1-way class distribution per query).
std::vector<double> softmax_rows_values(const std::vector<double>& logits, std::size_t rows,
                                        std::size_t cols);

/// Orderless target construction. Three stages: queries whose argmax class
/// lies in `labels` keep it; still-uncovered labels are matched to the
/// remaining queries by minimum −log S cost; every other query gets the
/// empty token. When the first stage leaves fewer free queries than
/// uncovered labels, the least-confident duplicate keepers are released so
/// that every label stays coverable. `probs` is the row-major O×(c+1)
/// softmax grid. A non-empty `class_weights` vector (length c) scales the
/// matching cost per class; the argmax stage always uses raw probabilities.
Assignment align_targets(const std::vector<double>& probs, std::size_t num_queries,
                         std::size_t num_classes, const LabelSet& labels,
                         const std::vector<double>& class_weights = {});

// One query per class: target j is class j when present, otherwise empty.
Assignment exhaustive_targets(std::size_t num_classes, const LabelSet& labels);

// Throws if the assignment violates coverage, emits an out-of-set class, or
// has the wrong arity.
void validate_assignment(const Assignment& a, std::size_t num_queries, const LabelSet& labels);

double assignment_log_cost(const std::vector<double>& probs, std::size_t num_classes,
                           const Assignment& a);

struct Decoded {
    LabelSet labels;
    std::vector<double> class_scores; // max over queries of S[q][class]
};

/// Test-time decoding: a class is predicted when some query's argmax picks
/// it; with a positive threshold the rule switches to score >= threshold.
/// Scores are the per-class max softmax probability across queries.
Decoded decode_predictions(const std::vector<double>& probs, std::size_t num_queries,
                           std::size_t num_classes, double threshold = 0.0);

namespace detail {
template <typename T>
std::vector<double> probs_from_logits(const TensorPtr<T>& logits) {
    std::vector<double> raw(logits->value.size());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<double>(logits->value[i]);
    return softmax_rows_values(raw, logits->shape[0], logits->shape[1]);
}

template <typename T>
std::vector<T> one_hot_targets(const Assignment& a, std::size_t cols) {
    std::vector<T> y(a.target.size() * cols, T(0));
    for (std::size_t j = 0; j < a.target.size(); ++j) y[j * cols + a.target[j]] = T(1);
    return y;
}
} // namespace detail

/// Mean cross entropy over queries with targets fixed by align_targets; the
/// assignment is recomputed each call and treated as a constant in backward.
template <typename T>
TensorPtr<T> aligned_loss(const TensorPtr<T>& logits, const LabelSet& labels) {
    std::size_t O = logits->shape[0], cols = logits->shape[1];
    auto a = align_targets(detail::probs_from_logits(logits), O, cols - 1, labels);
    return cross_entropy_rows(logits, detail::one_hot_targets<T>(a, cols), T(1) / T(O));
}

template <typename T>
TensorPtr<T> exhaustive_loss(const TensorPtr<T>& logits, const LabelSet& labels) {
    std::size_t O = logits->shape[0], cols = logits->shape[1];
    if (O != cols - 1)
        throw ConfigError("exhaustive loss requires one query per class, got " +
                          std::to_string(O) + " queries for " + std::to_string(cols - 1) +
                          " classes");
    auto a = exhaustive_targets(cols - 1, labels);
    return cross_entropy_rows(logits, detail::one_hot_targets<T>(a, cols), T(1) / T(O));
}

/// Aligned loss over a soft class-weight vector (entries in [0,1]); the
/// support of `target_vec` plays the label-set role, matching costs and the
/// matched queries' targets are weighted by the class weight, and unmatched
/// queries keep a unit empty target. Reduces to aligned_loss on 0/1 vectors.
template <typename T>
TensorPtr<T> aligned_loss_soft(const TensorPtr<T>& logits, const std::vector<T>& target_vec) {
    std::size_t O = logits->shape[0], cols = logits->shape[1], c = cols - 1;
    if (target_vec.size() != c)
        throw ShapeError("aligned_loss_soft: target vector size " +
                         std::to_string(target_vec.size()) + " does not match " +
                         std::to_string(c) + " classes");
    LabelSet support;
    std::vector<double> weights(c, 0.0);
    for (std::size_t i = 0; i < c; ++i) {
        weights[i] = static_cast<double>(target_vec[i]);
        if (target_vec[i] > T(0)) support.push_back(static_cast<int>(i));
    }
    auto a = align_targets(detail::probs_from_logits(logits), O, c, support, weights);

    std::vector<T> y(O * cols, T(0));
    for (std::size_t j = 0; j < O; ++j) {
        int t = a.target[j];
        y[j * cols + t] = t == a.empty_index() ? T(1) : target_vec[t];
    }
    return cross_entropy_rows(logits, std::move(y), T(1) / T(O));
}

/// Exhaustive loss over a soft class-weight vector: query j targets class j
/// with weight w_j and the empty token with weight 1−w_j.
template <typename T>
TensorPtr<T> exhaustive_loss_soft(const TensorPtr<T>& logits, const std::vector<T>& target_vec) {
    std::size_t O = logits->shape[0], cols = logits->shape[1], c = cols - 1;
    if (O != c)
        throw ConfigError("exhaustive loss requires one query per class");
    if (target_vec.size() != c)
        throw ShapeError("exhaustive_loss_soft: bad target vector size");
    std::vector<T> y(O * cols, T(0));
    for (std::size_t j = 0; j < O; ++j) {
        y[j * cols + j] = target_vec[j];
        y[j * cols + c] = T(1) - target_vec[j];
    }
    return cross_entropy_rows(logits, std::move(y), T(1) / T(O));
}

} // namespace poq
