#include "sqe/dominant.hpp"
#include "sqe/ops.hpp"
#include "sqe/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

using namespace sqe;
using Catch::Approx;

namespace {

std::vector<double> pad_to(std::vector<double> head, size_t n) {
    // Distribute the remaining mass uniformly over extra entries.
    double used = 0.0;
    for (double p : head) {
        used += p;
    }
    const size_t extra = n - head.size();
    for (size_t i = 0; i < extra; ++i) {
        head.push_back((1.0 - used) / static_cast<double>(extra));
    }
    return head;
}

} // namespace

TEST_CASE("find_dominant worked examples") {
    SECTION("one-hot distribution: the argmax alone with mass 1") {
        std::vector<double> dist(16, 0.0);
        dist[5] = 1.0;
        const DominantSet dom = find_dominant(dist);
        REQUIRE(dom.token_ids == std::vector<int>{5});
        REQUIRE(dom.total_mass == Approx(1.0));
    }
    SECTION("gap rule keeps the top two of [0.40 0.35 0.10 0.05 ...]") {
        // first gap 0.05 < 0.3*0.40; second gap 0.25 > max(0.3*0.35, 0.005)
        const std::vector<double> dist = pad_to({0.40, 0.35, 0.10, 0.05}, 8);
        const DominantSet dom = find_dominant(dist);
        REQUIRE(dom.token_ids == std::vector<int>{0, 1});
        REQUIRE(dom.total_mass == Approx(0.75).margin(1e-9));
    }
    SECTION("uniform over 100 tokens falls back to the lowest-id argmax") {
        const std::vector<double> dist(100, 0.01);
        const DominantSet dom = find_dominant(dist);
        REQUIRE(dom.token_ids == std::vector<int>{0});
        REQUIRE(dom.total_mass == Approx(0.01));
    }
}

TEST_CASE("find_dominant validation") {
    REQUIRE_THROWS_AS(find_dominant(std::vector<double>{0.5, 0.2}), invalid_input);
    REQUIRE_THROWS_AS(find_dominant(std::vector<double>{-0.5, 1.5}), invalid_input);
    DominantConfig bad;
    bad.scan_cap = 0;
    REQUIRE_THROWS_AS(find_dominant(std::vector<double>{1.0}, bad), invalid_input);
}

TEST_CASE("equal-probability split keeps both synonyms") {
    const std::vector<double> dist = pad_to({0.5, 0.5}, 12);  // padding gets 0 each
    const DominantSet dom = find_dominant(dist);
    REQUIRE(dom.token_ids == std::vector<int>{0, 1});
    REQUIRE(dom.total_mass == Approx(1.0));
}

TEST_CASE("find_dominant properties") {
    RngStream rng(99);
    for (int trial = 0; trial < 300; ++trial) {
        const size_t n = 4 + rng.below(60);
        std::vector<double> logits(n);
        for (double & z : logits) {
            z = rng.normal(0.0, 2.0);
        }
        const std::vector<double> dist = softmax(logits);
        const DominantSet dom = find_dominant(dist);

        // contains the argmax
        const int am = static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        REQUIRE(dom.contains(am));

        // members form a descending prefix: every member probability is
        // >= every non-member probability
        double min_member = 1.0;
        for (int id : dom.token_ids) {
            min_member = std::min(min_member, dist[id]);
        }
        for (size_t v = 0; v < n; ++v) {
            if (!dom.contains(static_cast<int>(v))) {
                REQUIRE(dist[v] <= min_member + 1e-12);
            }
        }

        // total mass matches the member sum
        double mass = 0.0;
        for (int id : dom.token_ids) {
            mass += dist[id];
        }
        REQUIRE(dom.total_mass == Approx(mass).margin(1e-9));
    }
}

TEST_CASE("find_dominant is invariant under id permutation") {
    RngStream rng(123);
    std::vector<double> dist = softmax(std::vector<double>{3.0, 2.8, 0.5, 0.2, -1.0, -1.5});
    const DominantSet dom = find_dominant(dist);

    std::vector<size_t> perm(dist.size());
    std::iota(perm.begin(), perm.end(), size_t{0});
    rng.shuffle(perm);
    std::vector<double> shuffled(dist.size());
    for (size_t i = 0; i < dist.size(); ++i) {
        shuffled[perm[i]] = dist[i];
    }
    const DominantSet dom2 = find_dominant(shuffled);
    REQUIRE(dom.token_ids.size() == dom2.token_ids.size());
    REQUIRE(dom.total_mass == Approx(dom2.total_mass).margin(1e-12));
    for (size_t i = 0; i < dom.token_ids.size(); ++i) {
        REQUIRE(dom2.token_ids[i] == static_cast<int>(perm[dom.token_ids[i]]));
    }
}

TEST_CASE("zero thresholds cut at the first strict descent") {
    DominantConfig cfg;
    cfg.rel = 0.0;
    cfg.abs = 0.0;
    const std::vector<double> dist = pad_to({0.3, 0.3, 0.25}, 6);  // padding 0.05 each
    const DominantSet dom = find_dominant(dist, cfg);
    REQUIRE(dom.token_ids == std::vector<int>{0, 1});
}

TEST_CASE("truncated top-k view") {
    SECTION("drop inside the stored entries is found") {
        const std::vector<std::pair<int, double>> pairs = {{4, 0.5}, {9, 0.4}, {2, 0.01}};
        const DominantSet dom = find_dominant_sorted(pairs);
        REQUIRE(dom.token_ids == std::vector<int>{4, 9});
    }
    SECTION("no drop within the stored entries falls back to the argmax") {
        const std::vector<std::pair<int, double>> pairs = {{4, 0.2}, {9, 0.19}, {2, 0.18}};
        const DominantSet dom = find_dominant_sorted(pairs);
        REQUIRE(dom.token_ids == std::vector<int>{4});
    }
}

TEST_CASE("boosted_prob") {
    const std::vector<double> dist = pad_to({0.40, 0.35, 0.10, 0.05}, 8);
    SECTION("dominant member gets the whole dominant mass") {
        REQUIRE(boosted_prob(dist, 1) == Approx(0.75).margin(1e-9));
        REQUIRE(boosted_prob(dist, 0) == Approx(0.75).margin(1e-9));
    }
    SECTION("non-dominant token keeps its own probability") {
        REQUIRE(boosted_prob(dist, 3) == Approx(0.05));
    }
    SECTION("one-hot argmax scores 1") {
        std::vector<double> onehot(8, 0.0);
        onehot[2] = 1.0;
        REQUIRE(boosted_prob(onehot, 2) == Approx(1.0));
    }
    SECTION("out-of-range id rejected") {
        REQUIRE_THROWS_AS(boosted_prob(dist, 8), invalid_input);
        REQUIRE_THROWS_AS(boosted_prob(dist, -1), invalid_input);
    }
}

TEST_CASE("boosting never lowers a score") {
    RngStream rng(7);
    for (int trial = 0; trial < 500; ++trial) {
        const size_t n = 3 + rng.below(40);
        std::vector<double> logits(n);
        for (double & z : logits) {
            z = rng.normal(0.0, 2.5);
        }
        const std::vector<double> dist = softmax(logits);
        const int chosen = static_cast<int>(rng.below(n));
        REQUIRE(boosted_prob(dist, chosen) >= dist[chosen] - 1e-12);
    }
}
