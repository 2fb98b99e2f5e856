#pragma once

#include "sqe/common.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace sqe {

// Pearson correlation. Zero variance in either argument makes the value
// undefined; that is reported as nullopt, never coerced to a number.
inline std::optional<double> pearson(const std::vector<double> & xs, const std::vector<double> & ys) {
    require(xs.size() == ys.size(), "pearson: length mismatch");
    require(xs.size() >= 2, "pearson: need at least two points");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) {
        return std::nullopt;
    }
    return sxy / std::sqrt(sxx * syy);
}

// Binary cross-entropy in nats. Predictions are clamped away from 0 and 1
// before the logs.
inline double bce(const std::vector<double> & preds, const std::vector<double> & labels, double clamp_eps = 1e-7) {
    require(preds.size() == labels.size(), "bce: length mismatch");
    require(!preds.empty(), "bce: empty input");
    require(clamp_eps > 0.0 && clamp_eps < 0.5, "bce: bad clamp_eps");
    double total = 0.0;
    for (size_t i = 0; i < preds.size(); ++i) {
        require(labels[i] == 0.0 || labels[i] == 1.0, "bce: labels must be 0 or 1");
        const double p = std::min(std::max(preds[i], clamp_eps), 1.0 - clamp_eps);
        total -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
    }
    return total / static_cast<double>(preds.size());
}

} // namespace sqe
