#pragma once

// Per-pixel binary classification metrics and box-plot summaries.
// Conventions: prediction >= threshold counts as positive; precision,
// recall and F1 are defined as 0 when their denominators vanish, so
// degenerate fields never produce NaN in aggregates. All metrics are
// reported as percentages.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "frontcast/grid.hpp"

namespace frontcast {

struct Confusion {
    int64_t tp = 0, tn = 0, fp = 0, fn = 0;

    void add(bool pred_positive, bool label_positive) {
        if (pred_positive)
            (label_positive ? tp : fp)++;
        else
            (label_positive ? fn : tn)++;
    }

    Confusion& operator+=(const Confusion& o) {
        tp += o.tp;
        tn += o.tn;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }

    int64_t total() const { return tp + tn + fp + fn; }
};

struct ClassificationMetrics {
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;  // percent
};

inline ClassificationMetrics metrics_from_confusion(const Confusion& c) {
    ClassificationMetrics m;
    const double total = static_cast<double>(c.total());
    if (total > 0)
        m.accuracy = 100.0 * static_cast<double>(c.tp + c.tn) / total;
    const double p = (c.tp + c.fp) > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp)
                                       : 0.0;
    const double r = (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn)
                                       : 0.0;
    m.precision = 100.0 * p;
    m.recall = 100.0 * r;
    m.f1 = (p + r) > 0.0 ? 100.0 * 2.0 * p * r / (p + r) : 0.0;
    return m;
}

inline Confusion confusion_counts(const ScalarField& pred_front, const ScalarField& label,
                                  double threshold = 0.5) {
    detail::require_same_shape(pred_front, label, "confusion_counts");
    const auto& p = pred_front.values();
    const auto& y = label.values();
    Confusion c;
    for (size_t k = 0; k < p.size(); ++k) {
        if (y[k] != 0.0 && y[k] != 1.0)
            throw std::invalid_argument("confusion_counts: label values must be 0 or 1");
        c.add(p[k] >= threshold, y[k] == 1.0);
    }
    return c;
}

inline ClassificationMetrics classify_metrics(const ScalarField& pred_front,
                                              const ScalarField& label, double threshold = 0.5) {
    return metrics_from_confusion(confusion_counts(pred_front, label, threshold));
}

// Box-plot statistics matching the usual median / quartile / 1.5*IQR
// whisker convention; quartiles by linear interpolation of the sorted data.
struct BoxStats {
    double median = 0.0, q1 = 0.0, q3 = 0.0;
    double lower_whisker = 0.0, upper_whisker = 0.0;
    std::vector<double> outliers;
};

inline BoxStats box_stats(std::vector<double> values) {
    if (values.empty())
        throw std::invalid_argument("box_stats: empty sample");
    std::sort(values.begin(), values.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(values.size() - 1);
        const size_t lo = static_cast<size_t>(pos);
        const size_t hi = std::min(lo + 1, values.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return values[lo] * (1.0 - frac) + values[hi] * frac;
    };
    BoxStats b;
    b.q1 = quantile(0.25);
    b.median = quantile(0.5);
    b.q3 = quantile(0.75);
    const double iqr = b.q3 - b.q1;
    const double lo_fence = b.q1 - 1.5 * iqr;
    const double hi_fence = b.q3 + 1.5 * iqr;
    b.lower_whisker = b.upper_whisker = b.median;
    bool found = false;
    for (double v : values) {
        if (v < lo_fence || v > hi_fence) {
            b.outliers.push_back(v);
            continue;
        }
        if (!found) {
            b.lower_whisker = v;
            found = true;
        }
        b.upper_whisker = v;
    }
    return b;
}

}  // namespace frontcast
