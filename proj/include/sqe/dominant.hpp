#pragma once

#include "sqe/common.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace sqe {

// Appendix-style "significant drop" thresholds: a gap between adjacent
// sorted probabilities is significant when it exceeds both rel * preceding
// probability and abs.
struct DominantConfig {
    double rel = 0.30;
    double abs = 0.005;
    int scan_cap = 50;

    void validate() const {
        require(rel >= 0.0 && abs >= 0.0, "DominantConfig: thresholds must be nonnegative");
        require(scan_cap >= 1, "DominantConfig: scan_cap must be >= 1");
    }
};

// Token ids judged dominant in a softmax distribution: the prefix of the
// descending-sorted distribution before the first significant drop. Always
// contains the argmax.
struct DominantSet {
    std::vector<int> token_ids;  // descending probability, ties by id
    double total_mass = 0.0;

    bool contains(int id) const {
        for (int t : token_ids) {
            if (t == id) {
                return true;
            }
        }
        return false;
    }
};

// Core scan over (id, prob) pairs already sorted by probability descending
// with ties broken by ascending id. `pairs` may be a truncated top-k view
// (activation-dump mode); if no significant drop occurs within scan_cap
// entries the result falls back to the singleton argmax.
inline DominantSet find_dominant_sorted(const std::vector<std::pair<int, double>> & pairs,
                                        const DominantConfig & cfg = {}) {
    cfg.validate();
    require(!pairs.empty(), "find_dominant: empty distribution");
    const size_t limit = std::min<size_t>(cfg.scan_cap, pairs.size() - 1);
    size_t cut = 0;
    bool found = false;
    for (size_t j = 0; j < limit; ++j) {
        const double gap = pairs[j].second - pairs[j + 1].second;
        if (gap > cfg.rel * pairs[j].second && gap > cfg.abs) {
            cut = j;
            found = true;
            break;
        }
    }
    DominantSet out;
    const size_t take = found ? cut + 1 : 1;
    out.token_ids.reserve(take);
    for (size_t j = 0; j < take; ++j) {
        out.token_ids.push_back(pairs[j].first);
        out.total_mass += pairs[j].second;
    }
    return out;
}

template <typename T>
std::vector<std::pair<int, double>> sort_desc_by_prob(const std::vector<T> & dist, size_t top_n) {
    std::vector<std::pair<int, double>> pairs(dist.size());
    for (size_t i = 0; i < dist.size(); ++i) {
        pairs[i] = {static_cast<int>(i), static_cast<double>(dist[i])};
    }
    top_n = std::min(top_n, pairs.size());
    std::partial_sort(pairs.begin(), pairs.begin() + top_n, pairs.end(), [](const auto & a, const auto & b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    pairs.resize(top_n);
    return pairs;
}

namespace detail {

template <typename T>
void validate_softmax_dist(const std::vector<T> & dist, const char * who) {
    double sum = 0.0;
    for (const T & p : dist) {
        require(std::isfinite(static_cast<double>(p)) && p >= T(0),
                std::string(who) + ": negative or non-finite probability");
        sum += static_cast<double>(p);
    }
    require(std::fabs(sum - 1.0) <= 1e-6, std::string(who) + ": distribution does not sum to 1");
}

} // namespace detail

// Dominant-token detection on a full softmax distribution.
template <typename T>
DominantSet find_dominant(const std::vector<T> & dist, const DominantConfig & cfg = {}) {
    cfg.validate();
    detail::validate_softmax_dist(dist, "find_dominant");
    const auto pairs = sort_desc_by_prob(dist, static_cast<size_t>(cfg.scan_cap) + 1);
    return find_dominant_sorted(pairs, cfg);
}

// As find_dominant, but accepts truncated (top-k reconstructed)
// distributions whose entries need not sum to 1.
template <typename T>
DominantSet find_dominant_truncated(const std::vector<T> & dist, const DominantConfig & cfg = {}) {
    cfg.validate();
    require(!dist.empty(), "find_dominant: empty distribution");
    const auto pairs = sort_desc_by_prob(dist, static_cast<size_t>(cfg.scan_cap) + 1);
    return find_dominant_sorted(pairs, cfg);
}

// BoostedProb: a dominant token is credited with the mass of the whole
// dominant set; non-dominant tokens keep their own probability.
template <typename T>
double boosted_prob(const std::vector<T> & dist, int chosen, const DominantConfig & cfg = {}) {
    require(chosen >= 0 && chosen < static_cast<int>(dist.size()), "boosted_prob: chosen id out of range");
    const DominantSet dom = find_dominant(dist, cfg);
    if (dom.contains(chosen)) {
        return dom.total_mass;
    }
    return static_cast<double>(dist[chosen]);
}

} // namespace sqe
