#pragma once

// Bag-opening metrics: planar convex hull of the rim, normalized hull area (A_CH) and hull
// elongation (E_CH).

#include "shakesim/core.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace shakesim {

using Polygon = std::vector<Vec2>;

inline double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

/// Convex hull by monotone chain. Counterclockwise, no repeated or collinear vertices.
/// Collinear input yields its two extreme points; a single distinct point yields one vertex.
inline Polygon convex_hull_2d(std::span<const Vec2> points) {
    if (points.empty()) throw InvalidArgument("points", "convex hull of an empty point set");
    std::vector<Vec2> p(points.begin(), points.end());
    std::sort(p.begin(), p.end(), [](const Vec2& a, const Vec2& b) { return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y()); });
    p.erase(std::unique(p.begin(), p.end(), [](const Vec2& a, const Vec2& b) { return a == b; }), p.end());
    if (p.size() < 3) return p;

    Polygon hull(2 * p.size());
    std::size_t k = 0;
    for (const auto& q : p) {
        while (k >= 2 && cross2(hull[k - 2], hull[k - 1], q) <= 0.0) --k;
        hull[k++] = q;
    }
    for (std::size_t i = p.size() - 1, lower = k + 1; i-- > 0;) {
        while (k >= lower && cross2(hull[k - 2], hull[k - 1], p[i]) <= 0.0) --k;
        hull[k++] = p[i];
    }
    hull.resize(k - 1);
    return hull;
}

inline Polygon convex_hull_2d(const std::vector<Vec2>& points) { return convex_hull_2d(std::span<const Vec2>(points)); }

/// Signed shoelace area (positive for counterclockwise order).
inline double polygon_signed_area(std::span<const Vec2> poly) {
    if (poly.size() < 3) return 0.0;
    double a = 0.0;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) a += poly[j].x() * poly[i].y() - poly[i].x() * poly[j].y();
    return 0.5 * a;
}

inline double polygon_area(std::span<const Vec2> poly) { return std::abs(polygon_signed_area(poly)); }

inline Vec2 polygon_centroid(std::span<const Vec2> poly) {
    const double a = polygon_signed_area(poly);
    if (std::abs(a) < 1e-300) {
        Vec2 c = Vec2::Zero();
        for (const auto& p : poly) c += p;
        return poly.empty() ? c : Vec2(c / static_cast<double>(poly.size()));
    }
    Vec2 c = Vec2::Zero();
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const double w = poly[j].x() * poly[i].y() - poly[i].x() * poly[j].y();
        c += (poly[j] + poly[i]) * w;
    }
    return c / (6.0 * a);
}

/// Central second moments of the polygon region divided by its area (a 2x2 covariance).
inline Eigen::Matrix2d polygon_covariance(std::span<const Vec2> poly) {
    const double a = polygon_signed_area(poly);
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    if (std::abs(a) < 1e-300) return cov;
    const Vec2 c = polygon_centroid(poly);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Vec2 p = poly[j] - c, q = poly[i] - c;
        const double w = p.x() * q.y() - q.x() * p.y();
        sxx += w * (p.x() * p.x() + p.x() * q.x() + q.x() * q.x());
        syy += w * (p.y() * p.y() + p.y() * q.y() + q.y() * q.y());
        sxy += w * (2 * p.x() * p.y() + p.x() * q.y() + q.x() * p.y() + 2 * q.x() * q.y());
    }
    cov(0, 0) = sxx / 12.0;
    cov(1, 1) = syy / 12.0;
    cov(0, 1) = cov(1, 0) = sxy / 24.0;
    return cov / a;
}

/// Eigenvalues (descending) and the unit eigenvector of the larger one for a symmetric 2x2.
/// Ties resolve to the x axis.
struct PrincipalAxes {
    double major = 0.0;
    double minor = 0.0;
    Vec2 axis = Vec2::UnitX();
};

inline PrincipalAxes principal_axes(const Eigen::Matrix2d& c) {
    const double tr = c(0, 0) + c(1, 1);
    const double diff = c(0, 0) - c(1, 1);
    const double disc = std::sqrt(0.25 * diff * diff + c(0, 1) * c(0, 1));
    PrincipalAxes pa;
    pa.major = 0.5 * tr + disc;
    pa.minor = 0.5 * tr - disc;
    const double scale = std::max(std::abs(c(0, 0)) + std::abs(c(1, 1)), 1e-300);
    if (disc <= 1e-12 * scale) {
        pa.axis = Vec2::UnitX();
    } else if (std::abs(c(0, 1)) <= 1e-12 * scale) {
        pa.axis = c(0, 0) >= c(1, 1) ? Vec2::UnitX() : Vec2::UnitY();
    } else {
        pa.axis = Vec2(pa.major - c(1, 1), c(0, 1)).normalized();
    }
    return pa;
}

struct OpeningThresholds {
    double a_min = 0.4;  // calibration default
    double e_max = 2.5;  // calibration default

    void validate() const {
        if (!(a_min > 0.0 && a_min < 1.0)) throw InvalidArgument("a_min", "must lie in (0, 1)");
        if (!(e_max > 1.0)) throw InvalidArgument("e_max", "must be > 1");
    }
};

struct OpeningMetrics {
    Polygon hull;
    double area = 0.0;
    double a_ch = 0.0;
    double e_ch = 1.0;
    bool degenerate = false;
    std::optional<double> rim_separation;  // only observable from simulator state
};

inline constexpr double kElongationCap = 1e3;
inline constexpr double kMinorFloor = 1e-12;

/// Metrics from planar rim samples. `perimeter` is the rest length P of the rim loop; the
/// reference area is the isoperimetric maximum P^2 / (4 pi).
inline OpeningMetrics opening_metrics_2d(std::span<const Vec2> rim, double perimeter, double e_cap = kElongationCap) {
    if (rim.empty()) throw InvalidArgument("rim", "rim point set is empty");
    if (!(perimeter > 0.0)) throw InvalidArgument("rim_perimeter_rest", "must be > 0");
    OpeningMetrics m;
    m.hull = convex_hull_2d(rim);
    m.area = polygon_area(m.hull);
    m.a_ch = m.area / (perimeter * perimeter / (4.0 * kPi));
    const PrincipalAxes pa = principal_axes(polygon_covariance(m.hull));
    // The floor is in m^2 on the moments themselves.
    if (m.area <= 0.0 || pa.minor <= kMinorFloor) {
        m.degenerate = true;
        m.e_ch = e_cap;
    } else {
        m.e_ch = std::min(e_cap, std::sqrt(pa.major / pa.minor));
    }
    return m;
}

/// Mean distance between paired rim particles of the two layers. The rim cycle lists one
/// layer forward and the other backward, so entry i pairs with entry N-1-i.
inline double rim_separation(std::span<const Vec3> rim_cycle) {
    if (rim_cycle.size() < 2 || rim_cycle.size() % 2 != 0) throw InvalidArgument("rim", "rim cycle must have an even, nonzero length");
    const std::size_t n = rim_cycle.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n / 2; ++i) s += (rim_cycle[i] - rim_cycle[n - 1 - i]).norm();
    return s / static_cast<double>(n / 2);
}

/// Metrics from 3D rim particles in rim-cycle order, projected onto the table plane.
inline OpeningMetrics opening_metrics(std::span<const Vec3> rim, double rim_perimeter_rest, double e_cap = kElongationCap) {
    if (rim.empty()) throw InvalidArgument("rim", "rim point set is empty");
    std::vector<Vec2> flat;
    flat.reserve(rim.size());
    for (const auto& p : rim) flat.emplace_back(p.x(), p.y());
    OpeningMetrics m = opening_metrics_2d(flat, rim_perimeter_rest, e_cap);
    if (rim.size() % 2 == 0) m.rim_separation = rim_separation(rim);
    return m;
}

inline bool opening_ok(const OpeningMetrics& m, const OpeningThresholds& t) {
    t.validate();
    return m.a_ch >= t.a_min && m.e_ch <= t.e_max;
}

inline bool point_in_convex_polygon(const Polygon& poly, const Vec2& p) {
    if (poly.size() < 3) return false;
    for (std::size_t i = 0; i < poly.size(); ++i)
        if (cross2(poly[i], poly[(i + 1) % poly.size()], p) < 0.0) return false;
    return true;
}

/// Clips a convex polygon to the half-plane {p : dot(p, n) <= offset} (Sutherland-Hodgman).
inline Polygon clip_half_plane(const Polygon& poly, const Vec2& n, double offset) {
    Polygon out;
    if (poly.empty()) return out;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[(i + 1) % poly.size()];
        const double da = a.dot(n) - offset, db = b.dot(n) - offset;
        if (da <= 0.0) out.push_back(a);
        if ((da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0)) out.push_back(a + (b - a) * (da / (da - db)));
    }
    return out;
}

}  // namespace shakesim
