#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "shakesim/metrics.hpp"

using namespace shakesim;

namespace {

std::vector<Vec3> ring(int n, double rx, double ry, double z = 0.1) {
    std::vector<Vec3> p;
    for (int i = 0; i < n; ++i) {
        const double t = 2.0 * kPi * i / n;
        p.emplace_back(rx * std::cos(t), ry * std::sin(t), z);
    }
    return p;
}

std::vector<Vec2> random_set(std::mt19937_64& rng, int n, bool grid) {
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::uniform_int_distribution<int> G(0, 8);
    std::vector<Vec2> p;
    for (int i = 0; i < n; ++i) p.push_back(grid ? Vec2(G(rng), G(rng)) : Vec2(U(rng), U(rng)));
    return p;
}

}  // namespace

TEST(ConvexHull, UnitSquareKeepsCorners) {
    const std::vector<Vec2> sq{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    const Polygon h = convex_hull_2d(sq);
    ASSERT_EQ(h.size(), 4u);
    EXPECT_DOUBLE_EQ(polygon_area(h), 1.0);
    EXPECT_GT(polygon_signed_area(h), 0.0);
}

TEST(ConvexHull, CollinearPointsGiveZeroArea) {
    const std::vector<Vec2> line{{0, 0}, {1, 1}, {2, 2}};
    EXPECT_EQ(polygon_area(convex_hull_2d(line)), 0.0);
}

TEST(ConvexHull, EmptyInputRejected) { EXPECT_THROW(convex_hull_2d(std::vector<Vec2>{}), InvalidArgument); }

TEST(ConvexHull, MatchesBruteForceOnDiskSample) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<Vec2> pts;
    while (pts.size() < 200) {
        const Vec2 p(2 * U(rng) - 1, 2 * U(rng) - 1);
        if (p.squaredNorm() <= 1.0) pts.push_back(p);
    }
    const auto ref = oracle::brute_hull(pts);
    const auto h = convex_hull_2d(pts);
    ASSERT_EQ(h.size(), ref.size());
    for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(h[i], ref[i]);
    EXPECT_EQ(polygon_area(h), static_cast<double>(oracle::shoelace(ref)));
}

TEST(ConvexHull, MatchesBruteForceIncludingCollinearAndDuplicatePoints) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 3 + static_cast<int>(rng() % 48);
        const auto pts = random_set(rng, n, trial % 2 == 0);
        const auto ref = oracle::brute_hull(pts);
        const auto h = convex_hull_2d(pts);
        if (ref.size() < 3) {
            EXPECT_EQ(polygon_area(h), 0.0);
            continue;
        }
        ASSERT_EQ(h.size(), ref.size()) << "trial " << trial;
        for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(h[i], ref[i]) << "trial " << trial;
        const double a = static_cast<double>(oracle::shoelace(ref));
        EXPECT_LE(std::abs(polygon_area(h) - a), 1e-12 * a);
    }
}

TEST(OpeningMetrics, RegularRingOfRestPerimeter) {
    for (int n : {24, 32}) {
        const double r = 0.1;
        const OpeningMetrics m = opening_metrics(ring(n, r, r), 2.0 * kPi * r);
        // Inscribed n-gon area over the circle area.
        const double expect = 0.5 * n * std::sin(2.0 * kPi / n) / kPi;
        EXPECT_NEAR(m.a_ch, expect, 1e-12);
        EXPECT_NEAR(m.a_ch, 1.0, 0.02);
        EXPECT_NEAR(m.e_ch, 1.0, 0.01);
        EXPECT_FALSE(m.degenerate);
    }
}

TEST(OpeningMetrics, TwoToOneEllipse) {
    const OpeningMetrics m = opening_metrics(ring(64, 0.2, 0.1), 1.0);
    EXPECT_NEAR(m.e_ch, 2.0, 0.1);
}

TEST(OpeningMetrics, CollapsedRimIsDegenerate) {
    std::vector<Vec3> seg;
    for (int i = 0; i < 10; ++i) seg.emplace_back(0.01 * i, 0.02 * i, 0.0);
    const OpeningMetrics m = opening_metrics(seg, 0.5);
    EXPECT_EQ(m.a_ch, 0.0);
    EXPECT_TRUE(m.degenerate);
    EXPECT_EQ(m.e_ch, kElongationCap);
}

TEST(OpeningMetrics, InvariantUnderRigidMotionAndScale) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Vec3> rim;
        for (int i = 0; i < 20; ++i) rim.emplace_back(0.2 * U(rng), 0.1 * U(rng), 0.3 + 0.1 * U(rng));
        const double P = 1.0;
        const OpeningMetrics base = opening_metrics(rim, P);
        const double th = kPi * U(rng), s = std::exp(2.0 * U(rng));
        const Vec3 t(5 * U(rng), 5 * U(rng), U(rng));
        std::vector<Vec3> moved, scaled;
        for (const auto& p : rim) {
            moved.push_back(Vec3(std::cos(th) * p.x() - std::sin(th) * p.y(), std::sin(th) * p.x() + std::cos(th) * p.y(), p.z()) + t);
            scaled.push_back(s * p);
        }
        const OpeningMetrics a = opening_metrics(moved, P), b = opening_metrics(scaled, s * P);
        EXPECT_NEAR(a.a_ch, base.a_ch, 1e-9);
        EXPECT_NEAR(a.e_ch, base.e_ch, 1e-9);
        EXPECT_NEAR(b.a_ch, base.a_ch, 1e-9);
        EXPECT_NEAR(b.e_ch, base.e_ch, 1e-9);
    }
}

TEST(OpeningMetrics, HullAreaMonotoneInAddedPoints) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Vec2> pts;
        for (int i = 0; i < 12; ++i) pts.emplace_back(U(rng), U(rng));
        const Polygon h = convex_hull_2d(pts);
        const double a0 = polygon_area(h);
        // Interior: a convex combination of hull vertices.
        Vec2 inside = Vec2::Zero();
        for (const auto& v : h) inside += v;
        inside /= static_cast<double>(h.size());
        auto with_in = pts;
        with_in.push_back(inside);
        EXPECT_NEAR(polygon_area(convex_hull_2d(with_in)), a0, 1e-14);
        auto with_out = pts;
        with_out.emplace_back(3 * U(rng), 3 * U(rng));
        EXPECT_GE(polygon_area(convex_hull_2d(with_out)), a0 - 1e-14);
    }
}

TEST(OpeningMetrics, AreaBoundedByRestPerimeterLoop) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Vec3> loop;
        for (int i = 0; i < 24; ++i) loop.emplace_back(U(rng), U(rng), 0.0);
        double P = 0.0;
        for (std::size_t i = 0; i < loop.size(); ++i) P += (loop[(i + 1) % loop.size()] - loop[i]).norm();
        EXPECT_LE(opening_metrics(loop, P).a_ch, 1.02);
    }
}

TEST(OpeningMetrics, RimSeparationPairsLayers) {
    // Forward along one layer, backward along the other, 4 mm apart.
    std::vector<Vec3> cyc{{0, 0, 0}, {0.1, 0, 0}, {0.1, 0.004, 0}, {0, 0.004, 0}};
    EXPECT_NEAR(rim_separation(cyc), 0.004, 1e-15);
    EXPECT_THROW(rim_separation(std::vector<Vec3>{{0, 0, 0}}), InvalidArgument);
}

TEST(OpeningOk, ThresholdComparisons) {
    const OpeningThresholds t{0.4, 2.5};
    OpeningMetrics m;
    m.a_ch = 0.5;
    m.e_ch = 1.5;
    EXPECT_TRUE(opening_ok(m, t));
    m.a_ch = 0.39;
    EXPECT_FALSE(opening_ok(m, t));
    m.a_ch = 0.5;
    m.e_ch = 2.6;
    EXPECT_FALSE(opening_ok(m, t));
    EXPECT_THROW(opening_ok(m, OpeningThresholds{1.2, 2.5}), InvalidArgument);
    EXPECT_THROW(opening_ok(m, OpeningThresholds{0.4, 1.0}), InvalidArgument);
}
