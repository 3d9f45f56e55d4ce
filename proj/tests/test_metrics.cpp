#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "llmverify/embedding_provider.hpp"
#include "llmverify/metrics.hpp"
#include "oracle.hpp"

using namespace llmverify;

namespace {

using Set = std::vector<EmbeddingVector>;

AnswerCluster make(const Set& s) { return summarize(s); }

}  // namespace

TEST(Summarize, SingleVector) {
    const auto c = make({{1.0, 2.0}});
    EXPECT_EQ(c.mean, (EmbeddingVector{1.0, 2.0}));
    EXPECT_EQ(c.per_dim_std, (std::vector<double>{0.0, 0.0}));
    EXPECT_EQ(c.rms_scatter, 0.0);
    EXPECT_EQ(c.n, 1u);
}

TEST(Summarize, SymmetricPair) {
    const auto c = make({{0.0, 0.0}, {2.0, 2.0}});
    EXPECT_EQ(c.mean, (EmbeddingVector{1.0, 1.0}));
    EXPECT_DOUBLE_EQ(c.per_dim_std[0], 1.0);
    EXPECT_DOUBLE_EQ(c.per_dim_std[1], 1.0);
    EXPECT_DOUBLE_EQ(c.rms_scatter, 1.0);
}

TEST(Summarize, MatchesOracleAtFullDimension) {
    std::mt19937_64 rng(1536);
    const auto xs = oracle::random_set(rng, 25, 1536, 0.0048);
    const auto c = make(xs);
    const auto o = oracle::summarize(xs);
    for (std::size_t j = 0; j < 1536; ++j) {
        ASSERT_LE(oracle::rel_err(c.mean[j], o.mean[j]), 1e-12) << j;
        ASSERT_LE(oracle::rel_err(c.per_dim_std[j], o.std_dev[j]), 1e-12) << j;
    }
    EXPECT_LE(oracle::rel_err(c.rms_scatter, o.rms), 1e-12);
}

TEST(Summarize, Errors) {
    EXPECT_THROW(make({}), InvalidInput);
    EXPECT_THROW(make({{1.0, 2.0}, {1.0}}), InvalidInput);
    EXPECT_THROW(make({{1.0, std::numeric_limits<double>::quiet_NaN()}}), InvalidInput);
    EXPECT_THROW(make({{std::numeric_limits<double>::infinity()}}), InvalidInput);
    EXPECT_THROW(make({{}}), InvalidInput);
}

TEST(Summarize, RmsMatchesMeanOfSquaredStd) {
    std::mt19937_64 rng(3);
    const auto c = make(oracle::random_set(rng, 17, 40));
    double acc = 0.0;
    for (double s : c.per_dim_std) acc += s * s;
    EXPECT_LE(oracle::rel_err(c.rms_scatter * c.rms_scatter, acc / 40.0), 1e-9);
}

TEST(Summarize, CancellationAtLargeOffset) {
    Set xs;
    for (int i = 0; i < 1000; ++i) xs.push_back({1e8 + (i % 2 == 0 ? 1.0 : -1.0)});
    const auto c = make(xs);
    EXPECT_DOUBLE_EQ(c.mean[0], 1e8);
    EXPECT_NEAR(c.per_dim_std[0], 1.0, 1e-9);
}

TEST(ClusterDistance, Examples) {
    const auto a = make({{0.0}});
    const auto b = make({{3.0}});
    EXPECT_EQ(cluster_distance(a, a), 0.0);
    EXPECT_DOUBLE_EQ(cluster_distance(a, b), 3.0);
    EXPECT_THROW(cluster_distance(a, make({{0.0, 0.0}})), InvalidInput);
}

TEST(ClusterDistance, SyntheticCalibratedDistance) {
    const std::size_t z = 1536;
    SyntheticProvider p(z, 11);
    const auto centers = place_centers({{0.0, 0.1558}, {0.1558, 0.0}}, random_unit_vector(z, 11, "q"), 12);
    p.add_profile("a", {centers[0], 0.0048});
    p.add_profile("b", {centers[1], 0.0048});
    Set xa, xb;
    for (std::uint64_t t = 0; t < 25; ++t) {
        xa.push_back(p.embed("", {"q", "a", "a", t}));
        xb.push_back(p.embed("", {"q", "b", "b", t}));
    }
    EXPECT_NEAR(cluster_distance(make(xa), make(xb)), 0.1558, 0.01);
}

TEST(Separation, Examples) {
    const auto a = make({{0.0, 0.0}, {2.0, 0.0}});  // rms sqrt(1/2)
    auto r = separation(a, a);
    EXPECT_EQ(r.distance, 0.0);
    EXPECT_FALSE(r.distinguishable);

    EXPECT_FALSE(distinguishable(3.0, 1.0));
    EXPECT_FALSE(distinguishable(0.0288, 0.0096));
    EXPECT_TRUE(distinguishable(0.1558, 0.0096));
    EXPECT_TRUE(distinguishable(1.0, 0.0));
    EXPECT_FALSE(distinguishable(0.0, 0.0));
    EXPECT_FALSE(distinguishable(0.037, 2 * 0.0072));
    EXPECT_TRUE(distinguishable(0.0862, 2 * 0.0072));
}

TEST(Separation, Boundary) {
    // D = 3, scatters 0.5 + 0.5: exactly 3 x scatter_sum is not enough.
    const auto a = make({{-0.5}, {0.5}});
    const auto b = make({{2.5}, {3.5}});
    const auto r = separation(a, b);
    EXPECT_DOUBLE_EQ(r.distance, 3.0);
    EXPECT_DOUBLE_EQ(r.scatter_sum, 1.0);
    EXPECT_FALSE(r.distinguishable);
    ASSERT_TRUE(r.ratio);
    EXPECT_DOUBLE_EQ(*r.ratio, 6.0);
}

TEST(Separation, RatioUsesLargerScatter) {
    const auto a = make({{0.0}, {2.0}});   // mean 1, rms 1
    const auto b = make({{10.0}, {11.0}}); // mean 10.5, rms 0.5
    const auto r = separation(a, b);
    ASSERT_TRUE(r.ratio);
    EXPECT_DOUBLE_EQ(*r.ratio, 9.5);
    EXPECT_TRUE(r.distinguishable);

    const auto p = make({{0.0}});
    const auto q = make({{4.0}});
    const auto zero = separation(p, q);
    EXPECT_FALSE(zero.ratio);
    EXPECT_TRUE(zero.distinguishable);
    EXPECT_THROW(separation(p, q, 0.0), InvalidInput);
}

TEST(MetricsProperty, OracleEquivalence200Sets) {
    std::mt19937_64 rng(200);
    std::uniform_int_distribution<std::size_t> pick_n(1, 30), pick_z(1, 64);
    std::uniform_real_distribution<double> pick_scale(1e-3, 5.0);
    for (int set = 0; set < 200; ++set) {
        const std::size_t z = pick_z(rng);
        const auto xa = oracle::random_set(rng, pick_n(rng), z, pick_scale(rng));
        const auto xb = oracle::random_set(rng, pick_n(rng), z, pick_scale(rng));
        const auto a = make(xa), b = make(xb);
        const auto oa = oracle::summarize(xa), ob = oracle::summarize(xb);
        for (std::size_t j = 0; j < z; ++j) {
            ASSERT_LE(oracle::rel_err(a.mean[j], oa.mean[j]), 1e-9);
            ASSERT_LE(oracle::rel_err(a.per_dim_std[j], oa.std_dev[j]), 1e-9);
        }
        ASSERT_LE(oracle::rel_err(a.rms_scatter, oa.rms), 1e-9);
        const double d = oracle::distance(oa.mean, ob.mean);
        ASSERT_LE(oracle::rel_err(cluster_distance(a, b), d), 1e-9);
        ASSERT_EQ(separation(a, b).distinguishable, oracle::distinguishable(d, oa.rms, ob.rms));
    }
}

TEST(MetricsProperty, PermutationInvariance) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 50; ++t) {
        auto xs = oracle::random_set(rng, 20, 16);
        const auto before = make(xs);
        std::ranges::shuffle(xs, rng);
        const auto after = make(xs);
        for (std::size_t j = 0; j < 16; ++j) {
            ASSERT_LE(oracle::rel_err(after.mean[j], before.mean[j]), 1e-12);
            ASSERT_LE(oracle::rel_err(after.per_dim_std[j], before.per_dim_std[j]), 1e-9);
        }
    }
}

TEST(MetricsProperty, TranslationInvariance) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g(0.0, 50.0);
    for (int t = 0; t < 50; ++t) {
        auto xs = oracle::random_set(rng, 12, 10);
        std::vector<double> shift(10);
        for (auto& s : shift) s = g(rng);
        const auto before = make(xs);
        for (auto& v : xs) {
            for (std::size_t j = 0; j < 10; ++j) v[j] += shift[j];
        }
        const auto after = make(xs);
        for (std::size_t j = 0; j < 10; ++j) {
            ASSERT_NEAR(after.mean[j], before.mean[j] + shift[j], 1e-9 * (1 + std::abs(shift[j])));
            ASSERT_NEAR(after.per_dim_std[j], before.per_dim_std[j], 1e-9);
        }
        ASSERT_NEAR(after.rms_scatter, before.rms_scatter, 1e-9);
    }
}

TEST(MetricsProperty, ScalingPreservesStrictPredicate) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> pick_s(1e-3, 1e3);
    for (int t = 0; t < 100; ++t) {
        auto xa = oracle::random_set(rng, 10, 8);
        auto xb = oracle::random_set(rng, 10, 8);
        const auto r0 = separation(make(xa), make(xb));
        const double s = pick_s(rng);
        for (auto* set : {&xa, &xb}) {
            for (auto& v : *set) {
                for (auto& x : v) x *= s;
            }
        }
        const auto r1 = separation(make(xa), make(xb));
        ASSERT_LE(oracle::rel_err(r1.distance, s * r0.distance), 1e-9);
        ASSERT_LE(oracle::rel_err(r1.scatter_sum, s * r0.scatter_sum), 1e-9);
        const double margin = std::abs(r0.distance - 3.0 * r0.scatter_sum) / r0.distance;
        if (margin > 1e-9) {
            ASSERT_EQ(r1.distinguishable, r0.distinguishable);
        }
    }
}

TEST(MetricsProperty, SymmetryAndTriangleInequality) {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 200; ++t) {
        const auto a = make(oracle::random_set(rng, 5, 12));
        const auto b = make(oracle::random_set(rng, 5, 12));
        const auto c = make(oracle::random_set(rng, 5, 12));
        const double ab = cluster_distance(a, b), ba = cluster_distance(b, a);
        ASSERT_EQ(ab, ba);
        ASSERT_LE(ab, cluster_distance(a, c) + cluster_distance(c, b) + 1e-12);
    }
}

TEST(Consensus, CoordinateMedianAndSpread) {
    const EmbeddingVector p1{0.0, 10.0}, p2{1.0, 0.0}, p3{5.0, 1.0}, p4{2.0, 3.0};
    std::vector<const EmbeddingVector*> odd{&p1, &p2, &p3};
    EXPECT_EQ(coordinate_median(odd), (EmbeddingVector{1.0, 1.0}));
    std::vector<const EmbeddingVector*> even{&p1, &p2, &p3, &p4};
    EXPECT_EQ(coordinate_median(even), (EmbeddingVector{1.5, 2.0}));

    const EmbeddingVector center{0.0, 0.0};
    const EmbeddingVector a{1.0, 1.0}, b{-1.0, -1.0};
    std::vector<const EmbeddingVector*> pts{&a, &b};
    EXPECT_DOUBLE_EQ(rms_spread_about(pts, center), 1.0);
}
