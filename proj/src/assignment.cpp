#include "poq/assignment.hpp"

#include <cmath>
#include <limits>

namespace poq {

std::vector<int> hungarian(const std::vector<double>& cost, std::size_t n_queries,
                           std::size_t n_targets) {
    if (cost.size() != n_queries * n_targets)
        throw ShapeError("hungarian: cost matrix size does not match " +
                         std::to_string(n_queries) + "x" + std::to_string(n_targets));
    if (n_targets == 0) return {};
    if (n_queries < n_targets)
        throw DataError("hungarian: " + std::to_string(n_targets) + " targets exceed " +
                        std::to_string(n_queries) + " queries");
    for (double v : cost)
        if (!std::isfinite(v)) throw DataError("hungarian: non-finite cost entry");

    // shortest augmenting path with potentials; rows are targets (n ≤ m),
    // columns are queries, 1-indexed with column 0 as the virtual root
    const std::size_t n = n_targets, m = n_queries;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> match(m + 1, 0); // match[col] = row occupying it
    std::vector<std::size_t> way(m + 1, 0);

    auto a = [&](std::size_t row, std::size_t col) { return cost[(col - 1) * n + (row - 1)]; };

    for (std::size_t i = 1; i <= n; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            std::size_t i0 = match[j0], j1 = 0;
            double delta = inf;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                double cur = a(i0, j) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> result(n, -1);
    for (std::size_t j = 1; j <= m; ++j)
        if (match[j] != 0) result[match[j] - 1] = static_cast<int>(j - 1);
    return result;
}

std::vector<double> softmax_rows_values(const std::vector<double>& logits, std::size_t rows,
                                        std::size_t cols) {
    if (logits.size() != rows * cols) throw ShapeError("softmax_rows_values: bad size");
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = logits.data() + i * cols;
        double mx = row[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        if (!std::isfinite(mx))
            throw DataError("softmax_rows_values: non-finite row " + std::to_string(i));
        double sum = 0.0;
        double* o = out.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) {
            o[j] = std::exp(row[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < cols; ++j) o[j] /= sum;
    }
    return out;
}

Assignment align_targets(const std::vector<double>& probs, std::size_t num_queries,
                         std::size_t num_classes, const LabelSet& raw_labels,
                         const std::vector<double>& class_weights) {
    const std::size_t O = num_queries, c = num_classes, cols = c + 1;
    const LabelSet labels = make_label_set(raw_labels);
    if (probs.size() != O * cols)
        throw ShapeError("align_targets: probability grid size does not match " +
                         std::to_string(O) + "x" + std::to_string(cols));
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= c)
            throw DataError("align_targets: label " + std::to_string(l) + " out of range");
    if (labels.size() > O)
        throw DataError("align_targets: " + std::to_string(labels.size()) +
                        " labels exceed " + std::to_string(O) + " queries");
    if (!class_weights.empty() && class_weights.size() != c)
        throw ShapeError("align_targets: class weight vector must have one entry per class");

    Assignment out;
    out.num_classes = static_cast<int>(c);
    out.target.assign(O, static_cast<int>(c));

    // stage 1: queries keep their predicted class when it is a true label;
    // argmax ties break toward the lowest index
    std::vector<bool> assigned(O, false);
    std::vector<bool> covered(c, false);
    for (std::size_t q = 0; q < O; ++q) {
        const double* row = probs.data() + q * cols;
        std::size_t best = 0;
        for (std::size_t j = 1; j < cols; ++j)
            if (row[j] > row[best]) best = j;
        if (best < c && label_set_contains(labels, static_cast<int>(best))) {
            out.target[q] = static_cast<int>(best);
            assigned[q] = true;
            covered[best] = true;
        }
    }

    // stage 2: Hungarian over still-uncovered labels and unassigned queries
    std::vector<int> uncovered;
    for (int l : labels)
        if (!covered[l]) uncovered.push_back(l);
    if (!uncovered.empty()) {
        std::vector<std::size_t> free_queries;
        for (std::size_t q = 0; q < O; ++q)
            if (!assigned[q]) free_queries.push_back(q);
        if (uncovered.size() > free_queries.size()) {
            // The constraint pass can crowd every query onto few classes and
            // starve coverage. Coverage is the hard constraint, so release
            // the least-confident duplicate keepers (each class retains its
            // strongest query) until enough queries are free again.
            std::size_t deficit = uncovered.size() - free_queries.size();
            std::vector<std::pair<double, std::size_t>> duplicates;
            std::vector<int> best_query(c, -1);
            for (std::size_t q = 0; q < O; ++q) {
                if (!assigned[q]) continue;
                int cls = out.target[q];
                double p = probs[q * cols + cls];
                int& best = best_query[cls];
                if (best < 0 || p > probs[static_cast<std::size_t>(best) * cols + cls]) {
                    if (best >= 0)
                        duplicates.emplace_back(
                            probs[static_cast<std::size_t>(best) * cols + cls],
                            static_cast<std::size_t>(best));
                    best = static_cast<int>(q);
                } else {
                    duplicates.emplace_back(p, q);
                }
            }
            std::sort(duplicates.begin(), duplicates.end());
            if (deficit > duplicates.size())
                throw DataError("align_targets: cannot cover " +
                                std::to_string(uncovered.size()) + " labels with " +
                                std::to_string(O) + " queries");
            for (std::size_t i = 0; i < deficit; ++i) {
                std::size_t q = duplicates[i].second;
                out.target[q] = static_cast<int>(c);
                assigned[q] = false;
                free_queries.push_back(q);
            }
            std::sort(free_queries.begin(), free_queries.end());
        }
        // Net cost of moving a query off the empty token it would otherwise
        // keep: -log S[q][label] + log S[q][empty]. Matching on the raw
        // class term alone would not minimize the full per-query loss.
        std::vector<double> cost(free_queries.size() * uncovered.size());
        for (std::size_t qi = 0; qi < free_queries.size(); ++qi) {
            double empty_term = std::log(std::max(probs[free_queries[qi] * cols + c], 1e-300));
            for (std::size_t ti = 0; ti < uncovered.size(); ++ti) {
                double p = std::max(probs[free_queries[qi] * cols + uncovered[ti]], 1e-300);
                double w = class_weights.empty() ? 1.0 : class_weights[uncovered[ti]];
                cost[qi * uncovered.size() + ti] = -w * std::log(p) + empty_term;
            }
        }
        auto matched = hungarian(cost, free_queries.size(), uncovered.size());
        for (std::size_t ti = 0; ti < uncovered.size(); ++ti)
            out.target[free_queries[matched[ti]]] = uncovered[ti];
    }
    // stage 3: every remaining query keeps the empty token (the initializer)

    validate_assignment(out, O, labels);
    return out;
}

Assignment exhaustive_targets(std::size_t num_classes, const LabelSet& labels) {
    Assignment out;
    out.num_classes = static_cast<int>(num_classes);
    out.target.assign(num_classes, static_cast<int>(num_classes));
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
            throw DataError("exhaustive_targets: label " + std::to_string(l) + " out of range");
        out.target[l] = l;
    }
    return out;
}

void validate_assignment(const Assignment& a, std::size_t num_queries, const LabelSet& raw_labels) {
    const LabelSet labels = make_label_set(raw_labels);
    if (a.target.size() != num_queries)
        throw DataError("assignment covers " + std::to_string(a.target.size()) +
                        " queries, expected " + std::to_string(num_queries));
    std::vector<bool> covered(a.num_classes, false);
    for (int t : a.target) {
        if (t == a.empty_index()) continue;
        if (t < 0 || t > a.empty_index())
            throw DataError("assignment target " + std::to_string(t) + " out of range");
        if (!label_set_contains(labels, t))
            throw DataError("assignment maps a query to class " + std::to_string(t) +
                            " outside the label set");
        covered[t] = true;
    }
    for (int l : labels)
        if (!covered[l])
            throw DataError("assignment leaves label " + std::to_string(l) + " uncovered");
}

double assignment_log_cost(const std::vector<double>& probs, std::size_t num_classes,
                           const Assignment& a) {
    const std::size_t cols = num_classes + 1;
    double total = 0.0;
    for (std::size_t q = 0; q < a.target.size(); ++q)
        total -= std::log(std::max(probs[q * cols + a.target[q]], 1e-300));
    return total;
}

Decoded decode_predictions(const std::vector<double>& probs, std::size_t num_queries,
                           std::size_t num_classes, double threshold) {
    const std::size_t cols = num_classes + 1;
    if (probs.size() != num_queries * cols) throw ShapeError("decode_predictions: bad grid size");

    Decoded out;
    out.class_scores.assign(num_classes, 0.0);
    std::vector<bool> hit(num_classes, false);
    for (std::size_t q = 0; q < num_queries; ++q) {
        const double* row = probs.data() + q * cols;
        std::size_t best = 0;
        for (std::size_t j = 1; j < cols; ++j)
            if (row[j] > row[best]) best = j;
        if (best < num_classes) hit[best] = true;
        for (std::size_t k = 0; k < num_classes; ++k)
            out.class_scores[k] = std::max(out.class_scores[k], row[k]);
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
        bool predicted = threshold > 0.0 ? out.class_scores[k] >= threshold : hit[k];
        if (predicted) out.labels.push_back(static_cast<int>(k));
    }
    return out;
}

} // namespace poq
