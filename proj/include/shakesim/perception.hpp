#pragma once

// Synthetic top-down observations, oracle and color-labeled masks, the classical Harris/Canny
// operators, and mask scoring.

#include "shakesim/bag_model.hpp"
#include "shakesim/metrics.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <vector>

namespace shakesim {

template <class T>
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Raster() = default;
    Raster(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
        if (w < 0 || h < 0) throw InvalidArgument("raster", "negative size");
    }

    [[nodiscard]] bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
    T& at(int x, int y) { return data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]; }
    const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]; }
    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] bool same_shape(int w, int h) const { return w == width && h == height; }
    template <class U>
    [[nodiscard]] bool same_shape(const Raster<U>& o) const { return o.width == width && o.height == height; }

    bool operator==(const Raster&) const = default;
};

struct RGB {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const RGB&) const = default;
};

using Mask = Raster<std::uint8_t>;  // 0 or 1

inline std::size_t count(const Mask& m) {
    std::size_t n = 0;
    for (auto v : m.data) n += v != 0;
    return n;
}

/// Orthographic top-down camera. Row 0 is the far (+y) edge of the workspace.
struct Camera {
    int width = 256;
    int height = 192;
    double pixel_scale = 1.8 / 256.0;
    Vec2 origin{-0.9, -0.675};  // world position of the image's lower-left corner

    void validate() const {
        if (width < 64 || height < 64) throw InvalidArgument("camera", "raster must be at least 64x64");
        if (!(pixel_scale > 0.0)) throw InvalidArgument("pixel_scale", "must be > 0");
    }

    [[nodiscard]] bool covers(const Workspace& ws) const {
        const double eps = 1e-9;
        return origin.x() <= -0.5 * ws.size_x + eps && origin.y() <= -0.5 * ws.size_y + eps &&
               origin.x() + width * pixel_scale >= 0.5 * ws.size_x - eps && origin.y() + height * pixel_scale >= 0.5 * ws.size_y - eps;
    }

    /// Continuous pixel coordinates (x right, y down) of a world point.
    [[nodiscard]] Vec2 to_pixel(const Vec2& w) const {
        return {(w.x() - origin.x()) / pixel_scale - 0.5, height - (w.y() - origin.y()) / pixel_scale - 0.5};
    }
    [[nodiscard]] Vec2 to_world(const Vec2& px) const {
        return {origin.x() + (px.x() + 0.5) * pixel_scale, origin.y() + (height - px.y() - 0.5) * pixel_scale};
    }
    [[nodiscard]] Vec2 to_world(int x, int y) const { return to_world(Vec2(x, y)); }
};

struct Observation {
    Raster<double> depth;      // height of the topmost surface, 0 = table
    Raster<double> depth_min;  // height of the lowest bag surface, 0 where none
    Raster<RGB> rgb;
    Camera camera;

    [[nodiscard]] double pixel_scale() const { return camera.pixel_scale; }
    [[nodiscard]] const Vec2& origin() const { return camera.origin; }
};

inline constexpr int kNumClasses = 2;
enum class MaskClass : int { Handle = 0, Rim = 1 };

struct Masks {
    std::array<Mask, kNumClasses> cls;
    std::optional<std::array<Raster<double>, kNumClasses>> prob;

    Mask& handle() { return cls[0]; }
    Mask& rim() { return cls[1]; }
    [[nodiscard]] const Mask& handle() const { return cls[0]; }
    [[nodiscard]] const Mask& rim() const { return cls[1]; }
};

enum class Pattern : std::uint8_t { Plain, Stripes };

struct RenderStyle {
    RGB table{45, 45, 50};
    RGB bag{225, 225, 220};
    RGB pattern_color{70, 90, 200};
    Pattern pattern = Pattern::Plain;
    RGB handle_paint{210, 30, 30};
    RGB rim_paint{30, 170, 60};
    double rim_band = 0.025;          // m of material below the rim edge painted as rim
    double surface_radius = 0.004;    // m, footprint of particles on edge-on parts of the mesh
    double edge_on_ratio = 0.3;       // projected / rest area below which a particle is edge-on
    double splat_tolerance = 0.001;   // m, a footprint must clear the surface by this to show
};

/// Per-pixel label of the topmost surface: 0 none or body, 1 handle, 2 rim.
struct Render {
    Observation obs;
    Raster<std::uint8_t> paint;
};

namespace detail {

inline RGB shade(RGB c, double f) {
    auto s = [f](std::uint8_t v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * f), 0L, 255L)); };
    return {s(c.r), s(c.g), s(c.b)};
}

inline std::uint8_t label_code(Label l) { return is_handle(l) ? 1 : l == Label::Rim ? 2 : 0; }

/// Class of a point of the bag surface from its flat-bag coordinates.
inline std::uint8_t material_code(const BagTopology& topo, const Vec2& uv, double rim_band) {
    const double rim_v = (topo.ny - 1) * topo.dy;
    if (uv.y() > rim_v + 0.5 * topo.dy) return 1;
    if (uv.y() >= rim_v - rim_band) return 2;
    return 0;
}

}  // namespace detail

/// Rasterizes the bag mesh: depth is the topmost height per pixel, depth_min the lowest bag
/// surface. The paint layer records what a camera sees on top (handle tabs, a band along the
/// rim); with `paint` set the RGB image shows handles red and the rim green.
inline Render render_full(const BagState& st, const Camera& cam, bool paint, const RenderStyle& style = {}) {
    cam.validate();
    Render r;
    Observation& o = r.obs;
    o.camera = cam;
    o.depth = Raster<double>(cam.width, cam.height, 0.0);
    o.depth_min = Raster<double>(cam.width, cam.height, 0.0);
    o.rgb = Raster<RGB>(cam.width, cam.height, style.table);
    r.paint = Raster<std::uint8_t>(cam.width, cam.height, 0);
    const auto& topo = *st.topology;

    std::vector<Vec2> px(st.size());
    for (std::size_t i = 0; i < st.size(); ++i) px[i] = cam.to_pixel(Vec2(st.positions[i].x(), st.positions[i].y()));

    auto deposit = [&](int x, int y, double z, std::uint8_t code, bool splat) {
        double& d = o.depth.at(x, y);
        const bool covered = d > 0.0;
        if (!covered || z > d + (splat ? style.splat_tolerance : 0.0)) {
            d = z;
            r.paint.at(x, y) = code;
        }
        double& dm = o.depth_min.at(x, y);
        dm = dm > 0.0 ? std::min(dm, z) : z;
    };

    // Projected (pixel) area of the triangles around each particle versus their rest area.
    std::vector<double> proj(st.size(), 0.0), rest(st.size(), 0.0);
    for (const auto& t : topo.triangles) {
        const Vec2 &a = px[t.a], &b = px[t.b], &c = px[t.c];
        const double pa = 0.5 * std::abs((b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x()));
        const Vec2 ua = topo.rest_uv[t.a], ub = topo.rest_uv[t.b], uc = topo.rest_uv[t.c];
        const double ra = 0.5 * std::abs((ub.x() - ua.x()) * (uc.y() - ua.y()) - (ub.y() - ua.y()) * (uc.x() - ua.x())) /
                          (cam.pixel_scale * cam.pixel_scale);
        for (auto v : {t.a, t.b, t.c}) {
            proj[v] += pa;
            rest[v] += ra;
        }
    }

    for (const auto& t : topo.triangles) {
        const Vec2 &a = px[t.a], &b = px[t.b], &c = px[t.c];
        const double za = st.positions[t.a].z(), zb = st.positions[t.b].z(), zc = st.positions[t.c].z();
        const double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
        if (std::abs(area) < 1e-12) continue;
        const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({a.x(), b.x(), c.x()}))));
        const int x1 = std::min(cam.width - 1, static_cast<int>(std::floor(std::max({a.x(), b.x(), c.x()}))));
        const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({a.y(), b.y(), c.y()}))));
        const int y1 = std::min(cam.height - 1, static_cast<int>(std::floor(std::max({a.y(), b.y(), c.y()}))));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double w0 = ((b.x() - x) * (c.y() - y) - (b.y() - y) * (c.x() - x)) / area;
                const double w1 = ((c.x() - x) * (a.y() - y) - (c.y() - y) * (a.x() - x)) / area;
                const double w2 = 1.0 - w0 - w1;
                if (w0 < -1e-9 || w1 < -1e-9 || w2 < -1e-9) continue;
                const double z = w0 * za + w1 * zb + w2 * zc;
                const Vec2 uv = w0 * topo.rest_uv[t.a] + w1 * topo.rest_uv[t.b] + w2 * topo.rest_uv[t.c];
                deposit(x, y, z, detail::material_code(topo, uv, style.rim_band), false);
            }
    }
    // Particle footprints keep edge-on sheets visible.
    const double rad = style.surface_radius / cam.pixel_scale;
    for (std::size_t i = 0; i < st.size(); ++i) {
        if (proj[i] > style.edge_on_ratio * rest[i]) continue;
        const Vec2& p = px[i];
        const double z = st.positions[i].z();
        const int cx = static_cast<int>(std::lround(p.x())), cy = static_cast<int>(std::lround(p.y()));
        for (int y = static_cast<int>(std::floor(p.y() - rad)); y <= static_cast<int>(std::ceil(p.y() + rad)); ++y)
            for (int x = static_cast<int>(std::floor(p.x() - rad)); x <= static_cast<int>(std::ceil(p.x() + rad)); ++x) {
                if (!o.depth.in_bounds(x, y)) continue;
                const double dx = x - p.x(), dy = y - p.y();
                if (dx * dx + dy * dy > rad * rad && !(x == cx && y == cy)) continue;
                deposit(x, y, z, detail::label_code(topo.labels[i]), true);
            }
    }
    for (auto& d : o.depth.data) d = std::clamp(d, 0.0, 2.0);
    for (auto& d : o.depth_min.data) d = std::clamp(d, 0.0, 2.0);

    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const double d = o.depth.at(x, y);
            if (d <= 0.0) continue;
            RGB base = style.bag;
            if (style.pattern == Pattern::Stripes) {
                const Vec2 w = cam.to_world(x, y);
                if (static_cast<long>(std::floor((w.x() + w.y()) / 0.03)) % 2 == 0) base = style.pattern_color;
            }
            const std::uint8_t pl = r.paint.at(x, y);
            if (paint && pl == 1) base = style.handle_paint;
            else if (paint && pl == 2) base = style.rim_paint;
            o.rgb.at(x, y) = detail::shade(base, 0.85 + 0.15 * std::min(1.0, d / 0.5));
        }
    return r;
}

inline Observation render_topdown(const BagState& st, const Camera& cam, bool paint, const RenderStyle& style = {}) {
    return render_full(st, cam, paint, style).obs;
}

/// Ground-truth masks: class of the topmost labeled particle per pixel, occlusion-aware.
inline Masks masks_from_paint(const Raster<std::uint8_t>& paint) {
    Masks m;
    m.cls[0] = Mask(paint.width, paint.height, 0);
    m.cls[1] = Mask(paint.width, paint.height, 0);
    for (std::size_t i = 0; i < paint.size(); ++i) {
        if (paint.data[i] == 1) m.cls[0].data[i] = 1;
        else if (paint.data[i] == 2) m.cls[1].data[i] = 1;
    }
    return m;
}

inline Masks oracle_masks(const BagState& st, const Camera& cam, const RenderStyle& style = {}) {
    return masks_from_paint(render_full(st, cam, false, style).paint);
}

// ---------------------------------------------------------------------------------------------
// Color labeling

struct HSV {
    double h = 0.0;  // degrees [0, 360)
    double s = 0.0;
    double v = 0.0;
};

inline HSV rgb_to_hsv(RGB c) {
    const double r = c.r / 255.0, g = c.g / 255.0, b = c.b / 255.0;
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
    HSV o;
    o.v = mx;
    o.s = mx > 0.0 ? d / mx : 0.0;
    if (d <= 0.0) return o;
    if (mx == r) o.h = 60.0 * std::fmod((g - b) / d, 6.0);
    else if (mx == g) o.h = 60.0 * ((b - r) / d + 2.0);
    else o.h = 60.0 * ((r - g) / d + 4.0);
    if (o.h < 0.0) o.h += 360.0;
    return o;
}

struct HsvWindow {
    double h_lo = 0.0, h_hi = 0.0;  // wraps through 0 when h_lo > h_hi
    double s_min = 0.0;
    double v_min = 0.0;

    [[nodiscard]] bool contains(const HSV& c) const {
        const bool hue = h_lo <= h_hi ? (c.h >= h_lo && c.h <= h_hi) : (c.h >= h_lo || c.h <= h_hi);
        return hue && c.s >= s_min && c.v >= v_min;
    }
};

struct HsvConfig {
    HsvWindow handle{340.0, 20.0, 0.5, 0.3};
    HsvWindow rim{90.0, 150.0, 0.4, 0.3};
    int open_size = 3;
};

/// Binary opening with a square structuring element of side `size` (odd).
inline Mask morph_open(const Mask& m, int size) {
    if (size <= 1) return m;
    const int r = size / 2;
    auto pass = [&](const Mask& in, bool erode) {
        Mask out(in.width, in.height, 0);
        for (int y = 0; y < in.height; ++y)
            for (int x = 0; x < in.width; ++x) {
                bool acc = erode;
                for (int dy = -r; dy <= r && acc == erode; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const int xx = x + dx, yy = y + dy;
                        const bool v = in.in_bounds(xx, yy) && in.at(xx, yy);
                        if (erode && !v) {
                            acc = false;
                            break;
                        }
                        if (!erode && v) {
                            acc = true;
                            break;
                        }
                    }
                out.at(x, y) = acc ? 1 : 0;
            }
        return out;
    };
    return pass(pass(m, true), false);
}

inline Masks hsv_autolabel(const Raster<RGB>& rgb, const HsvConfig& cfg = {}) {
    Masks m;
    m.cls[0] = Mask(rgb.width, rgb.height, 0);
    m.cls[1] = Mask(rgb.width, rgb.height, 0);
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        const HSV c = rgb_to_hsv(rgb.data[i]);
        if (cfg.handle.contains(c)) m.cls[0].data[i] = 1;
        else if (cfg.rim.contains(c)) m.cls[1].data[i] = 1;
    }
    m.cls[0] = morph_open(m.cls[0], cfg.open_size);
    m.cls[1] = morph_open(m.cls[1], cfg.open_size);
    return m;
}

inline double iou(const Mask& a, const Mask& b) {
    if (!a.same_shape(b)) throw InvalidArgument("mask", "shape mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += a.data[i] && b.data[i];
        uni += a.data[i] || b.data[i];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------------------------
// Connected components and grasp points

struct Component {
    std::size_t area = 0;
    Vec2 centroid = Vec2::Zero();  // pixels
    std::vector<Eigen::Vector2i> pixels;
};

/// 8-connected components, largest first (ties by first pixel in raster order).
inline std::vector<Component> connected_components(const Mask& m) {
    std::vector<Component> out;
    std::vector<char> seen(m.size(), 0);
    std::vector<Eigen::Vector2i> stack;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            const std::size_t id = static_cast<std::size_t>(y) * m.width + x;
            if (!m.data[id] || seen[id]) continue;
            Component c;
            stack.assign(1, {x, y});
            seen[id] = 1;
            while (!stack.empty()) {
                const Eigen::Vector2i p = stack.back();
                stack.pop_back();
                c.pixels.push_back(p);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int xx = p.x() + dx, yy = p.y() + dy;
                        if (!m.in_bounds(xx, yy)) continue;
                        const std::size_t j = static_cast<std::size_t>(yy) * m.width + xx;
                        if (m.data[j] && !seen[j]) {
                            seen[j] = 1;
                            stack.push_back({xx, yy});
                        }
                    }
            }
            c.area = c.pixels.size();
            for (const auto& p : c.pixels) c.centroid += p.cast<double>();
            c.centroid /= static_cast<double>(c.area);
            out.push_back(std::move(c));
        }
    std::stable_sort(out.begin(), out.end(), [](const Component& a, const Component& b) { return a.area > b.area; });
    return out;
}

enum class GraspStatus : std::uint8_t { Two, OneMissing, None };

struct GraspPoints {
    GraspStatus status = GraspStatus::None;
    std::vector<Vec2> points;  // pixels, 0..2 entries
};

/// Centroids of the two largest handle components.
inline GraspPoints grasp_points(const Mask& handle, std::size_t min_area = 1) {
    GraspPoints g;
    for (const auto& c : connected_components(handle)) {
        if (c.area < min_area || g.points.size() == 2) break;
        g.points.push_back(c.centroid);
    }
    g.status = g.points.size() == 2 ? GraspStatus::Two : g.points.size() == 1 ? GraspStatus::OneMissing : GraspStatus::None;
    return g;
}

// ---------------------------------------------------------------------------------------------
// Filters

inline Raster<double> to_double(const Mask& m) {
    Raster<double> r(m.width, m.height, 0.0);
    for (std::size_t i = 0; i < m.size(); ++i) r.data[i] = m.data[i];
    return r;
}

inline double sample_clamped(const Raster<double>& r, int x, int y) {
    return r.at(std::clamp(x, 0, r.width - 1), std::clamp(y, 0, r.height - 1));
}

inline Raster<double> gaussian_blur(const Raster<double>& in, double sigma) {
    if (!(sigma > 0.0)) return in;
    const int rad = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * rad + 1));
    double s = 0.0;
    for (int i = -rad; i <= rad; ++i) s += k[static_cast<std::size_t>(i + rad)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= s;
    Raster<double> tmp(in.width, in.height, 0.0), out(in.width, in.height, 0.0);
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            double acc = 0.0;
            for (int i = -rad; i <= rad; ++i) acc += k[static_cast<std::size_t>(i + rad)] * sample_clamped(in, x + i, y);
            tmp.at(x, y) = acc;
        }
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            double acc = 0.0;
            for (int i = -rad; i <= rad; ++i) acc += k[static_cast<std::size_t>(i + rad)] * sample_clamped(tmp, x, y + i);
            out.at(x, y) = acc;
        }
    return out;
}

/// 3x3 Sobel derivatives with replicated borders.
inline void sobel(const Raster<double>& in, Raster<double>& gx, Raster<double>& gy) {
    gx = Raster<double>(in.width, in.height, 0.0);
    gy = Raster<double>(in.width, in.height, 0.0);
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            auto p = [&](int dx, int dy) { return sample_clamped(in, x + dx, y + dy); };
            gx.at(x, y) = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            gy.at(x, y) = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
        }
}

// ---------------------------------------------------------------------------------------------
// Harris

struct HarrisParams {
    double sigma = 1.5;
    double k = 0.04;
    int nms_radius = 3;
    double rel_threshold = 0.01;   // fraction of the peak response
    double cluster_radius = 4.0;   // px
};

inline Raster<double> harris_response(const Raster<double>& img, const HarrisParams& p = {}) {
    Raster<double> gx, gy;
    sobel(img, gx, gy);
    Raster<double> xx(img.width, img.height), yy(img.width, img.height), xy(img.width, img.height);
    for (std::size_t i = 0; i < img.size(); ++i) {
        xx.data[i] = gx.data[i] * gx.data[i];
        yy.data[i] = gy.data[i] * gy.data[i];
        xy.data[i] = gx.data[i] * gy.data[i];
    }
    xx = gaussian_blur(xx, p.sigma);
    yy = gaussian_blur(yy, p.sigma);
    xy = gaussian_blur(xy, p.sigma);
    Raster<double> r(img.width, img.height, 0.0);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double det = xx.data[i] * yy.data[i] - xy.data[i] * xy.data[i];
        const double tr = xx.data[i] + yy.data[i];
        r.data[i] = det - p.k * tr * tr;
    }
    return r;
}

struct Corner {
    Vec2 px = Vec2::Zero();
    double response = 0.0;
};

/// Local maxima of the response above the threshold, merged into clusters; strongest first.
inline std::vector<Corner> harris_corners(const Raster<double>& img, const HarrisParams& p = {}) {
    const Raster<double> r = harris_response(img, p);
    double peak = 0.0;
    for (double v : r.data) peak = std::max(peak, v);
    std::vector<Corner> peaks;
    if (!(peak > 1e-18)) return peaks;
    const double thr = p.rel_threshold * peak;
    for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x) {
            const double v = r.at(x, y);
            if (v <= thr) continue;
            bool is_max = true;
            for (int dy = -p.nms_radius; dy <= p.nms_radius && is_max; ++dy)
                for (int dx = -p.nms_radius; dx <= p.nms_radius; ++dx) {
                    if ((dx == 0 && dy == 0) || !r.in_bounds(x + dx, y + dy)) continue;
                    const double w = r.at(x + dx, y + dy);
                    // Strict on earlier pixels, non-strict on later ones, so plateaus keep one peak.
                    const bool earlier = dy < 0 || (dy == 0 && dx < 0);
                    if (w > v || (earlier && w == v)) {
                        is_max = false;
                        break;
                    }
                }
            if (is_max) peaks.push_back({Vec2(x, y), v});
        }
    std::stable_sort(peaks.begin(), peaks.end(), [](const Corner& a, const Corner& b) { return a.response > b.response; });
    // Greedy clustering around the strongest peaks; centroids weighted by response.
    std::vector<Corner> clusters;
    std::vector<double> weight;
    std::vector<Vec2> seed;
    for (const auto& c : peaks) {
        std::size_t k = 0;
        for (; k < clusters.size(); ++k)
            if ((seed[k] - c.px).norm() <= p.cluster_radius) break;
        if (k == clusters.size()) {
            clusters.push_back({c.px * c.response, c.response});
            weight.push_back(c.response);
            seed.push_back(c.px);
        } else {
            clusters[k].px += c.px * c.response;
            weight[k] += c.response;
            clusters[k].response = std::max(clusters[k].response, c.response);
        }
    }
    for (std::size_t k = 0; k < clusters.size(); ++k) clusters[k].px /= weight[k];
    return clusters;
}

struct HarrisResult {
    bool ok = false;
    std::array<Vec2, 2> points{};  // pixels, strongest first
    std::vector<Corner> corners;
};

inline HarrisResult harris_handles(const Raster<double>& depth, const HarrisParams& p = {}) {
    HarrisResult res;
    res.corners = harris_corners(depth, p);
    if (res.corners.size() < 2) return res;
    res.ok = true;
    res.points = {res.corners[0].px, res.corners[1].px};
    return res;
}

// ---------------------------------------------------------------------------------------------
// Canny

struct CannyParams {
    double sigma = 1.0;
    double low = 0.1;   // fractions of the peak gradient magnitude
    double high = 0.3;
};

inline Mask canny(const Raster<double>& img, const CannyParams& p = {}) {
    const Raster<double> b = gaussian_blur(img, p.sigma);
    Raster<double> gx, gy;
    sobel(b, gx, gy);
    Raster<double> mag(img.width, img.height, 0.0);
    double peak = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) {
        mag.data[i] = std::hypot(gx.data[i], gy.data[i]);
        peak = std::max(peak, mag.data[i]);
    }
    Mask edges(img.width, img.height, 0);
    if (!(peak > 1e-12)) return edges;
    Raster<double> thin(img.width, img.height, 0.0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double m = mag.at(x, y);
            if (m <= 0.0) continue;
            double ang = std::atan2(gy.at(x, y), gx.at(x, y)) * 180.0 / kPi;
            if (ang < 0) ang += 180.0;
            int dx = 0, dy = 0;
            if (ang < 22.5 || ang >= 157.5) dx = 1;
            else if (ang < 67.5) dx = 1, dy = 1;
            else if (ang < 112.5) dy = 1;
            else dx = -1, dy = 1;
            auto g = [&](int xx, int yy) { return mag.in_bounds(xx, yy) ? mag.at(xx, yy) : 0.0; };
            // Ties break toward the forward neighbor so a symmetric ridge keeps a single pixel.
            if (m > g(x - dx, y - dy) && m >= g(x + dx, y + dy)) thin.at(x, y) = m;
        }
    const double hi = p.high * peak, lo = p.low * peak;
    std::vector<Eigen::Vector2i> stack;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            if (thin.at(x, y) >= hi && !edges.at(x, y)) {
                edges.at(x, y) = 1;
                stack.push_back({x, y});
                while (!stack.empty()) {
                    const auto q = stack.back();
                    stack.pop_back();
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int xx = q.x() + dx, yy = q.y() + dy;
                            if (!edges.in_bounds(xx, yy) || edges.at(xx, yy) || thin.at(xx, yy) < lo) continue;
                            edges.at(xx, yy) = 1;
                            stack.push_back({xx, yy});
                        }
                }
            }
    return edges;
}

struct CannyRim {
    std::vector<Vec2> points;  // pixels of the largest edge component
    Polygon hull;              // pixels
    double area_px = 0.0;
    double area = 0.0;         // m^2
};

inline CannyRim canny_rim(const Raster<double>& depth, double pixel_scale, const CannyParams& p = {}) {
    CannyRim out;
    const auto comps = connected_components(canny(depth, p));
    if (comps.empty()) return out;
    for (const auto& q : comps.front().pixels) out.points.push_back(q.cast<double>());
    out.hull = convex_hull_2d(out.points);
    out.area_px = polygon_area(out.hull);
    out.area = out.area_px * pixel_scale * pixel_scale;
    return out;
}

// ---------------------------------------------------------------------------------------------
// Mask scoring

inline constexpr double kProbClamp = 1e-7;

struct SegScore {
    double loss = 0.0;
    double miou = 0.0;
    double mpa = 0.0;
};

using ClassRasters = std::vector<Raster<double>>;  // one per class, values in [0, 1]
using ClassMasks = std::vector<Mask>;

namespace detail {
inline void check_shapes(const ClassRasters& pred, const ClassMasks& truth, const ClassRasters& w) {
    if (pred.empty() || pred.size() != truth.size() || pred.size() != w.size()) throw InvalidArgument("masks", "class count mismatch");
    for (std::size_t k = 0; k < pred.size(); ++k)
        if (!pred[k].same_shape(truth[k]) || !pred[k].same_shape(w[k]) || !pred[k].same_shape(pred[0]))
            throw InvalidArgument("masks", "shape mismatch");
}
}  // namespace detail

/// Weighted per-class binary cross entropy averaged over classes, plus mIoU and mean pixel
/// accuracy at the 0.5 threshold. Pixel accuracy of a class is the fraction of its true pixels
/// that are predicted; a class absent from both truth and prediction scores 1.
inline SegScore score_masks(const ClassRasters& pred, const ClassMasks& truth, const ClassRasters& weights) {
    detail::check_shapes(pred, truth, weights);
    const std::size_t K = pred.size();
    const double N = static_cast<double>(pred[0].size());
    SegScore s;
    for (std::size_t k = 0; k < K; ++k) {
        double lk = 0.0;
        std::size_t inter = 0, uni = 0, tp = 0, pos = 0, predicted = 0;
        for (std::size_t i = 0; i < pred[k].size(); ++i) {
            const double o = std::clamp(pred[k].data[i], kProbClamp, 1.0 - kProbClamp);
            const double t = truth[k].data[i] ? 1.0 : 0.0;
            lk += weights[k].data[i] * (t * std::log(o) + (1.0 - t) * std::log(1.0 - o));
            const bool p = pred[k].data[i] >= 0.5, tt = truth[k].data[i] != 0;
            inter += p && tt;
            uni += p || tt;
            tp += p && tt;
            pos += tt;
            predicted += p;
        }
        s.loss += -lk / N;
        s.miou += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        s.mpa += pos == 0 ? (predicted == 0 ? 1.0 : 0.0) : static_cast<double>(tp) / static_cast<double>(pos);
    }
    s.loss /= static_cast<double>(K);
    s.miou /= static_cast<double>(K);
    s.mpa /= static_cast<double>(K);
    return s;
}

/// d loss / d o for one pixel of one class (zero where the clamp is active).
inline double loss_gradient(const ClassRasters& pred, const ClassMasks& truth, const ClassRasters& weights, std::size_t k, std::size_t i) {
    detail::check_shapes(pred, truth, weights);
    if (k >= pred.size() || i >= pred[k].size()) throw InvalidArgument("index", "out of range");
    const double o = pred[k].data[i];
    if (o <= kProbClamp || o >= 1.0 - kProbClamp) return 0.0;
    const double t = truth[k].data[i] ? 1.0 : 0.0;
    const double N = static_cast<double>(pred[k].size());
    return -weights[k].data[i] * (t / o - (1.0 - t) / (1.0 - o)) / (N * static_cast<double>(pred.size()));
}

/// Inverse-frequency weights: N / (2 N_pos) on positives, N / (2 N_neg) on negatives.
inline Raster<double> balanced_weights(const Mask& truth) {
    const double N = static_cast<double>(truth.size());
    const double pos = static_cast<double>(count(truth)), neg = N - pos;
    Raster<double> w(truth.width, truth.height, 1.0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth.data[i]) w.data[i] = pos > 0 ? N / (2.0 * pos) : 1.0;
        else w.data[i] = neg > 0 ? N / (2.0 * neg) : 1.0;
    }
    return w;
}

/// An imperfect "network output": the truth blurred and perturbed with seeded Gaussian noise.
inline Raster<double> noisy_prediction(const Mask& truth, double blur_sigma, double noise_sigma, std::uint64_t seed) {
    Raster<double> p = gaussian_blur(to_double(truth), blur_sigma);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : p.data) v = std::clamp(v + noise_sigma * n(rng), 0.0, 1.0);
    return p;
}

inline ClassMasks to_class_masks(const Masks& m) { return {m.cls[0], m.cls[1]}; }

// ---------------------------------------------------------------------------------------------
// Raster I/O

namespace detail {

struct PngFile {
    FILE* f = nullptr;
    ~PngFile() {
        if (f) std::fclose(f);
    }
};

inline void write_png(const std::string& path, int w, int h, int color_type, const std::vector<std::uint8_t>& bytes) {
    PngFile file{std::fopen(path.c_str(), "wb")};
    if (!file.f) throw std::runtime_error("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng error while writing " + path);
    }
    png_init_io(png, file.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = bytes.size() / static_cast<std::size_t>(h);
    for (int y = 0; y < h; ++y) png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Reads any PNG as 8-bit gray or RGB per `want_rgb`.
inline std::vector<std::uint8_t> read_png(const std::string& path, int& w, int& h, bool want_rgb) {
    PngFile file{std::fopen(path.c_str(), "rb")};
    if (!file.f) throw std::runtime_error("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng error while reading " + path);
    }
    png_init_io(png, file.f);
    png_read_info(png, info);
    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    const int ct = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (ct == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (ct == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (ct & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    const bool is_gray = ct == PNG_COLOR_TYPE_GRAY || ct == PNG_COLOR_TYPE_GRAY_ALPHA;
    if (want_rgb && is_gray) png_set_gray_to_rgb(png);
    if (!want_rgb && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    std::vector<std::uint8_t> bytes(stride * static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) png_read_row(png, bytes.data() + static_cast<std::size_t>(y) * stride, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return bytes;
}

}  // namespace detail

inline void write_png(const std::string& path, const Raster<RGB>& img) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(img.size() * 3);
    for (const auto& c : img.data) bytes.insert(bytes.end(), {c.r, c.g, c.b});
    detail::write_png(path, img.width, img.height, PNG_COLOR_TYPE_RGB, bytes);
}

/// 8-bit mask: 0 or 255.
inline void write_png(const std::string& path, const Mask& m) {
    std::vector<std::uint8_t> bytes(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) bytes[i] = m.data[i] ? 255 : 0;
    detail::write_png(path, m.width, m.height, PNG_COLOR_TYPE_GRAY, bytes);
}

/// 8-bit probability raster, 0..255.
inline void write_png(const std::string& path, const Raster<double>& p) {
    std::vector<std::uint8_t> bytes(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(p.data[i], 0.0, 1.0) * 255.0));
    detail::write_png(path, p.width, p.height, PNG_COLOR_TYPE_GRAY, bytes);
}

inline Raster<RGB> read_png_rgb(const std::string& path) {
    int w = 0, h = 0;
    const auto bytes = detail::read_png(path, w, h, true);
    Raster<RGB> img(w, h);
    for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = {bytes[3 * i], bytes[3 * i + 1], bytes[3 * i + 2]};
    return img;
}

/// Gray PNG scaled to [0, 1].
inline Raster<double> read_png_gray(const std::string& path) {
    int w = 0, h = 0;
    const auto bytes = detail::read_png(path, w, h, false);
    Raster<double> img(w, h);
    for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = bytes[i] / 255.0;
    return img;
}

inline Mask read_png_mask(const std::string& path) {
    const Raster<double> g = read_png_gray(path);
    Mask m(g.width, g.height, 0);
    for (std::size_t i = 0; i < g.size(); ++i) m.data[i] = g.data[i] >= 0.5 ? 1 : 0;
    return m;
}

/// Binary PGM (P5), 16-bit big-endian, depth in millimeters.
inline void write_pgm16(const std::string& path, const Raster<double>& depth_m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "P5\n" << depth_m.width << ' ' << depth_m.height << "\n65535\n";
    for (double d : depth_m.data) {
        const auto mm = static_cast<std::uint16_t>(std::clamp(std::lround(d * 1000.0), 0L, 65535L));
        os.put(static_cast<char>(mm >> 8));
        os.put(static_cast<char>(mm & 0xFF));
    }
}

inline Raster<double> read_pgm16(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    is >> magic >> w >> h >> maxval;
    if (magic != "P5" || w <= 0 || h <= 0 || maxval != 65535) throw InvalidArgument("pgm", "expected a 16-bit binary PGM");
    is.get();
    Raster<double> r(w, h, 0.0);
    for (auto& d : r.data) {
        const int hi = is.get(), lo = is.get();
        if (!is) throw InvalidArgument("pgm", "truncated pixel data");
        d = ((hi << 8) | lo) / 1000.0;
    }
    return r;
}

// ---------------------------------------------------------------------------------------------
// Perception-side opening estimates

/// World-frame centers of the set pixels of a mask.
inline std::vector<Vec2> mask_points_world(const Mask& m, const Camera& cam) {
    std::vector<Vec2> pts;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(x, y)) pts.push_back(cam.to_world(x, y));
    return pts;
}

/// Opening metrics estimated from a rim mask. Returns nullopt for an empty mask.
inline std::optional<OpeningMetrics> rim_metrics_from_mask(const Mask& rim, const Camera& cam, double rim_perimeter_rest) {
    const auto pts = mask_points_world(rim, cam);
    if (pts.empty()) return std::nullopt;
    return opening_metrics_2d(pts, rim_perimeter_rest);
}

}  // namespace shakesim
