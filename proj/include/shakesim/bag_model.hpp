#pragma once

// Two-layer vest-bag mass-spring model.
//
// Layout of a freshly built bag (flat on the table, centered at `center`):
//   x: across the width, y: along the height with the open rim at +y, z: up.
//   Layer 0 (back) lies at z = particle_radius, layer 1 (front) one layer gap above it.
//   Each layer is an nx-by-ny particle grid; two handle tabs of tab_cols x tab_rows
//   particles extend above the rim row at the left and right edges. The layers are
//   joined by short seam springs along the left, right and bottom edges and along the
//   tab tops and outer tab edges, so the rim row stays open.

#include "shakesim/core.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace shakesim {

enum class Label : std::uint8_t { HandleL = 0, HandleR = 1, Rim = 2, Body = 3 };
enum class SpringKind : std::uint8_t { Structural, Shear, Bend, Seam };
enum class GripperId : std::uint8_t { Left = 0, Right = 1 };

inline const char* to_string(Label l) {
    switch (l) {
        case Label::HandleL: return "handle_L";
        case Label::HandleR: return "handle_R";
        case Label::Rim: return "rim";
        case Label::Body: return "body";
    }
    return "?";
}

inline std::optional<Label> label_from_string(const std::string& s) {
    if (s == "handle_L") return Label::HandleL;
    if (s == "handle_R") return Label::HandleR;
    if (s == "rim") return Label::Rim;
    if (s == "body") return Label::Body;
    return std::nullopt;
}

inline bool is_handle(Label l) { return l == Label::HandleL || l == Label::HandleR; }

inline const char* to_string(GripperId g) { return g == GripperId::Left ? "left" : "right"; }

/// Flat-bag geometry and material. Physical defaults are calibration values, not measurements.
struct BagSpec {
    double width = 0.30;
    double height = 0.45;
    double handle_width = 0.06;
    double handle_height = 0.08;
    int resolution = 16;
    double mass_total = 0.020;
    double stiffness_structural = 40.0;
    double stiffness_shear = 10.0;
    double stiffness_bend = 8.0;
    double damping = 0.02;
    double drag_coeff = 4.0;

    /// Throws InvalidArgument naming the first bad field.
    void validate() const {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(name, "must be finite and > 0");
        };
        positive(width, "width");
        positive(height, "height");
        positive(handle_width, "handle_width");
        positive(handle_height, "handle_height");
        if (resolution < 8) throw InvalidArgument("resolution", "must be an integer >= 8");
        positive(mass_total, "mass_total");
        positive(stiffness_structural, "stiffness_structural");
        positive(stiffness_shear, "stiffness_shear");
        positive(stiffness_bend, "stiffness_bend");
        positive(damping, "damping");
        positive(drag_coeff, "drag_coeff");
        if (2.0 * handle_width >= width) throw InvalidArgument("handle_width", "two handles must fit across the width");
    }

    /// Bags of 25-35 cm by 40-53 cm are the conformant size range.
    [[nodiscard]] bool conformant() const {
        return width >= 0.25 - 1e-12 && width <= 0.35 + 1e-12 && height >= 0.40 - 1e-12 && height <= 0.53 + 1e-12;
    }
};

/// Simulation knobs that are not bag material. `gravity` and `drag` double as test hooks.
struct PhysicsParams {
    double gravity = 9.81;
    bool drag = true;
    double particle_radius = 0.002;
    double layer_gap = 0.003;
    double friction = 0.6;
    double substep_safety = 0.85;
    double overstretch_ratio = 3.0;
    // Lumped pocket air: ram pressure through the mouth fills it, leaks with this time constant.
    // Active together with `drag`.
    double air_density = 1.2;
    double air_leak_time = 0.3;
    // Bend strain beyond which creases flow to the current shape. 0 disables plasticity.
    double bend_yield_strain = 0.1;
    // Cloth thickness seen by items.
    double item_contact_radius = 0.005;
};

struct Spring {
    std::uint32_t i = 0;
    std::uint32_t j = 0;
    double rest = 0.0;
    SpringKind kind = SpringKind::Structural;
};

struct Triangle {
    std::uint32_t a = 0, b = 0, c = 0;
};

/// Immutable connectivity shared by every state derived from one `new_bag` call.
struct BagTopology {
    BagSpec spec;
    PhysicsParams physics_at_build;
    int nx = 0;
    int ny = 0;
    int tab_cols = 0;
    int tab_rows = 0;
    double dx = 0.0;
    double dy = 0.0;
    double particle_mass = 0.0;
    double rim_perimeter_rest = 0.0;
    double stable_dt = 0.0;
    std::vector<Label> labels;
    std::vector<Spring> springs;
    std::vector<double> spring_k;  // stiffness per spring, parallel to `springs`
    std::vector<Triangle> triangles;
    std::vector<std::uint32_t> rim_cycle;
    std::vector<std::int32_t> grid;  // [layer][row][col] -> particle index or -1
    std::vector<std::uint8_t> layer_of;
    std::vector<Vec2> rest_uv;  // flat-bag coordinates from the bottom-left corner

    [[nodiscard]] int rows() const { return ny + tab_rows; }

    [[nodiscard]] std::int32_t index(int layer, int col, int row) const {
        if (layer < 0 || layer > 1 || col < 0 || col >= nx || row < 0 || row >= rows()) return -1;
        return grid[static_cast<std::size_t>((layer * rows() + row) * nx + col)];
    }
};

struct BagState {
    std::shared_ptr<const BagTopology> topology;
    std::vector<Vec3> positions;
    std::vector<Vec3> velocities;
    std::vector<double> rest_lengths;  // per spring; bend springs keep creases and yield plastically
    PhysicsParams physics;
    double time = 0.0;
    std::uint64_t step_count = 0;
    std::uint64_t seed = 0;
    std::uint64_t overstretch_events = 0;
    double air_pressure = 0.0;  // Pa above ambient inside the pocket

    [[nodiscard]] std::size_t size() const { return positions.size(); }
    [[nodiscard]] const std::vector<Label>& labels() const { return topology->labels; }
    [[nodiscard]] const std::vector<Spring>& springs() const { return topology->springs; }
    [[nodiscard]] double rim_perimeter_rest() const { return topology->rim_perimeter_rest; }
    [[nodiscard]] const BagSpec& spec() const { return topology->spec; }
    [[nodiscard]] bool conformant() const { return topology->spec.conformant(); }
};

struct GripperPose {
    Vec3 position = Vec3::Zero();
    double pitch = -kPi / 2;  // -90 deg: pointing straight down
};

using GripperPoses = std::array<GripperPose, 2>;

/// Rotation taking gripper-frame offsets to world. Pitch rotates about the world x axis;
/// the straight-down pose (-90 deg) is the identity.
inline Eigen::Matrix3d gripper_rotation(double pitch) {
    return Eigen::AngleAxisd(pitch + kPi / 2, Vec3::UnitX()).toRotationMatrix();
}

struct GripperAttachment {
    GripperId gripper = GripperId::Left;
    std::vector<std::uint32_t> pinned;
    std::vector<Vec3> local_offsets;
};

/// At most one attachment per gripper.
class AttachmentSet {
public:
    [[nodiscard]] bool has(GripperId g) const { return slots_[idx(g)].has_value(); }
    [[nodiscard]] const GripperAttachment& get(GripperId g) const {
        if (!has(g)) throw InvalidArgument("attachment", std::string("no active attachment for ") + to_string(g));
        return *slots_[idx(g)];
    }
    [[nodiscard]] bool empty() const { return !has(GripperId::Left) && !has(GripperId::Right); }
    [[nodiscard]] int count() const { return int(has(GripperId::Left)) + int(has(GripperId::Right)); }

    void add(GripperAttachment a) {
        if (has(a.gripper)) throw InvalidArgument("attachment", std::string(to_string(a.gripper)) + " already attached");
        slots_[idx(a.gripper)] = std::move(a);
    }
    void remove(GripperId g) {
        if (!has(g)) throw InvalidArgument("attachment", std::string("release of inactive attachment on ") + to_string(g));
        slots_[idx(g)].reset();
    }
    [[nodiscard]] bool is_pinned(std::uint32_t particle) const {
        for (const auto& s : slots_)
            if (s && std::find(s->pinned.begin(), s->pinned.end(), particle) != s->pinned.end()) return true;
        return false;
    }

    template <class F>
    void for_each(F&& f) const {
        for (const auto& s : slots_)
            if (s) f(*s);
    }

private:
    static std::size_t idx(GripperId g) { return static_cast<std::size_t>(g); }
    std::array<std::optional<GripperAttachment>, 2> slots_;
};

enum class ItemShape : std::uint8_t { Sphere, Cylinder };

/// A rigid, non-rotating item (sphere or upright cylinder) that collides with the bag and table.
struct ItemBody {
    ItemShape shape = ItemShape::Cylinder;
    double radius = 0.03;
    double height = 0.10;
    double mass = 0.05;
    Vec3 position = Vec3::Zero();
    Vec3 velocity = Vec3::Zero();

    [[nodiscard]] double half_height() const { return shape == ItemShape::Sphere ? radius : 0.5 * height; }
};

// ---------------------------------------------------------------------------------------------
// Construction

namespace detail {

inline double max_stable_dt(const BagTopology& topo) {
    // Gershgorin bound on the largest eigenvalue of M^-1 K; symplectic Euler needs dt*omega < 2.
    std::vector<double> ksum(topo.labels.size(), 0.0);
    const BagSpec& s = topo.spec;
    for (const auto& sp : topo.springs) {
        double k = 0.0;
        switch (sp.kind) {
            case SpringKind::Structural:
            case SpringKind::Seam: k = s.stiffness_structural; break;
            case SpringKind::Shear: k = s.stiffness_shear; break;
            case SpringKind::Bend: k = s.stiffness_bend; break;
        }
        ksum[sp.i] += k;
        ksum[sp.j] += k;
    }
    const double kmax = *std::max_element(ksum.begin(), ksum.end());
    const double omega = std::sqrt(2.0 * kmax / topo.particle_mass);
    return 2.0 / omega;
}

inline double spring_stiffness(const BagSpec& s, SpringKind k) {
    switch (k) {
        case SpringKind::Structural:
        case SpringKind::Seam: return s.stiffness_structural;
        case SpringKind::Shear: return s.stiffness_shear;
        case SpringKind::Bend: return s.stiffness_bend;
    }
    return 0.0;
}

}  // namespace detail

/// Builds a flat two-layer bag lying on the table. The construction itself is deterministic;
/// `seed` is recorded on the state for downstream perturbation.
inline BagState new_bag(const BagSpec& spec, std::uint64_t seed, const PhysicsParams& physics = {},
                        const Vec2& center = Vec2::Zero()) {
    spec.validate();
    if (!(physics.particle_radius > 0.0)) throw InvalidArgument("particle_radius", "must be > 0");
    if (!(physics.layer_gap > 0.0)) throw InvalidArgument("layer_gap", "must be > 0");

    auto topo = std::make_shared<BagTopology>();
    topo->spec = spec;
    topo->physics_at_build = physics;
    const int nx = spec.resolution;
    const int ny = std::max(2, static_cast<int>(std::lround(spec.resolution * spec.height / spec.width)));
    const double dx = spec.width / (nx - 1);
    const double dy = spec.height / (ny - 1);
    const int tc = std::clamp(static_cast<int>(std::lround(spec.handle_width / dx)) + 1, 2, nx / 2 - 1);
    const int tr = std::max(1, static_cast<int>(std::lround(spec.handle_height / dy)));
    topo->nx = nx;
    topo->ny = ny;
    topo->tab_cols = tc;
    topo->tab_rows = tr;
    topo->dx = dx;
    topo->dy = dy;
    const int rows = ny + tr;
    topo->grid.assign(static_cast<std::size_t>(2 * rows * nx), -1);

    BagState st;
    st.physics = physics;
    st.seed = seed;
    auto exists = [&](int i, int j) {
        if (i < 0 || i >= nx || j < 0 || j >= rows) return false;
        return j < ny || i < tc || i >= nx - tc;
    };
    for (int layer = 0; layer < 2; ++layer) {
        const double z = physics.particle_radius + layer * physics.layer_gap;
        for (int j = 0; j < rows; ++j) {
            for (int i = 0; i < nx; ++i) {
                if (!exists(i, j)) continue;
                const auto id = static_cast<std::int32_t>(st.positions.size());
                topo->grid[static_cast<std::size_t>((layer * rows + j) * nx + i)] = id;
                st.positions.emplace_back(center.x() - 0.5 * spec.width + i * dx, center.y() - 0.5 * spec.height + j * dy, z);
                Label lab = Label::Body;
                if (j >= ny) lab = (i < nx / 2) ? Label::HandleL : Label::HandleR;
                else if (j == ny - 1) lab = Label::Rim;
                topo->labels.push_back(lab);
                topo->layer_of.push_back(static_cast<std::uint8_t>(layer));
                topo->rest_uv.emplace_back(i * dx, j * dy);
            }
        }
    }
    st.velocities.assign(st.positions.size(), Vec3::Zero());

    auto add_spring = [&](std::int32_t a, std::int32_t b, SpringKind kind) {
        if (a < 0 || b < 0) return;
        const double rest = (st.positions[static_cast<std::size_t>(a)] - st.positions[static_cast<std::size_t>(b)]).norm();
        topo->springs.push_back({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), rest, kind});
    };
    for (int layer = 0; layer < 2; ++layer) {
        auto at = [&](int i, int j) { return exists(i, j) ? topo->index(layer, i, j) : -1; };
        for (int j = 0; j < rows; ++j) {
            for (int i = 0; i < nx; ++i) {
                if (!exists(i, j)) continue;
                add_spring(at(i, j), at(i + 1, j), SpringKind::Structural);
                add_spring(at(i, j), at(i, j + 1), SpringKind::Structural);
                add_spring(at(i, j), at(i + 1, j + 1), SpringKind::Shear);
                add_spring(at(i + 1, j), at(i, j + 1), SpringKind::Shear);
                add_spring(at(i, j), at(i + 2, j), SpringKind::Bend);
                add_spring(at(i, j), at(i, j + 2), SpringKind::Bend);
                const auto a = at(i, j), b = at(i + 1, j), c = at(i + 1, j + 1), d = at(i, j + 1);
                if (a >= 0 && b >= 0 && c >= 0 && d >= 0) {
                    topo->triangles.push_back({std::uint32_t(a), std::uint32_t(b), std::uint32_t(c)});
                    topo->triangles.push_back({std::uint32_t(a), std::uint32_t(c), std::uint32_t(d)});
                }
            }
        }
    }
    // Seams: side edges, bottom edge, tab tops. The rim row is only joined at its two ends.
    for (int j = 0; j < rows; ++j) {
        add_spring(topo->index(0, 0, j), topo->index(1, 0, j), SpringKind::Seam);
        add_spring(topo->index(0, nx - 1, j), topo->index(1, nx - 1, j), SpringKind::Seam);
    }
    for (int i = 1; i < nx - 1; ++i) add_spring(topo->index(0, i, 0), topo->index(1, i, 0), SpringKind::Seam);
    for (int i = 0; i < nx; ++i) {
        if (i == 0 || i == nx - 1 || !exists(i, rows - 1)) continue;
        add_spring(topo->index(0, i, rows - 1), topo->index(1, i, rows - 1), SpringKind::Seam);
    }

    // Rim cycle: front rim left to right, then back rim right to left.
    for (int i = 0; i < nx; ++i) topo->rim_cycle.push_back(static_cast<std::uint32_t>(topo->index(1, i, ny - 1)));
    for (int i = nx - 1; i >= 0; --i) topo->rim_cycle.push_back(static_cast<std::uint32_t>(topo->index(0, i, ny - 1)));
    double perim = 0.0;
    for (std::size_t k = 0; k < topo->rim_cycle.size(); ++k) {
        const auto a = topo->rim_cycle[k], b = topo->rim_cycle[(k + 1) % topo->rim_cycle.size()];
        perim += (st.positions[a] - st.positions[b]).norm();
    }
    topo->rim_perimeter_rest = perim;
    topo->particle_mass = spec.mass_total / static_cast<double>(st.positions.size());
    topo->stable_dt = detail::max_stable_dt(*topo);
    topo->spring_k.reserve(topo->springs.size());
    for (const auto& sp : topo->springs) topo->spring_k.push_back(detail::spring_stiffness(spec, sp.kind));
    for (const auto& sp : topo->springs) st.rest_lengths.push_back(sp.rest);
    st.topology = std::move(topo);
    return st;
}

// ---------------------------------------------------------------------------------------------
// Queries

inline std::vector<Vec3> rim_points(const BagState& st) {
    const auto& cyc = st.topology->rim_cycle;
    if (cyc.empty()) throw InvariantViolation("bag state has an empty rim cycle");
    std::vector<Vec3> out;
    out.reserve(cyc.size());
    for (auto i : cyc) {
        if (i >= st.positions.size()) throw InvariantViolation("rim cycle index out of range");
        out.push_back(st.positions[i]);
    }
    return out;
}

inline double kinetic_energy(const BagState& st) {
    double e = 0.0;
    for (const auto& v : st.velocities) e += v.squaredNorm();
    return 0.5 * st.topology->particle_mass * e;
}

inline Vec3 centroid(const BagState& st) {
    Vec3 c = Vec3::Zero();
    for (const auto& p : st.positions) c += p;
    return c / static_cast<double>(st.positions.size());
}

inline double min_height(const BagState& st) {
    double z = std::numeric_limits<double>::infinity();
    for (const auto& p : st.positions) z = std::min(z, p.z());
    return z;
}

inline double max_height(const BagState& st) {
    double z = -std::numeric_limits<double>::infinity();
    for (const auto& p : st.positions) z = std::max(z, p.z());
    return z;
}

/// Winding number of the bag pocket around `p`: the body of both layers, bridged along the
/// seams, with the opening capped by a fan from the rim centroid. About 1 inside the pocket and
/// 0 outside.
inline double pocket_winding_number(const BagState& st, const Vec3& p) {
    const auto& topo = *st.topology;
    const int nx = topo.nx, ny = topo.ny;
    auto is_body = [&](std::uint32_t i) { return topo.labels[i] == Label::Body || topo.labels[i] == Label::Rim; };
    std::vector<std::array<std::uint32_t, 3>> faces;
    for (const auto& t : topo.triangles) {
        if (!is_body(t.a) || !is_body(t.b) || !is_body(t.c)) continue;
        // Grid triangles face +z at rest; the bottom layer must face the other way.
        if (topo.layer_of[t.a] == 0) faces.push_back({t.a, t.c, t.b});
        else faces.push_back({t.a, t.b, t.c});
    }
    std::vector<std::array<int, 2>> ij(st.size(), {-1, -1});
    for (int layer = 0; layer < 2; ++layer)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i) ij[static_cast<std::size_t>(topo.index(layer, i, j))] = {i, j};
    auto on_seam = [&](std::uint32_t v) { return ij[v][0] == 0 || ij[v][0] == nx - 1 || ij[v][1] == 0; };
    auto partner = [&](std::uint32_t v) { return static_cast<std::uint32_t>(topo.index(1, ij[v][0], ij[v][1])); };

    auto boundary = [&]() {
        std::set<std::pair<std::uint32_t, std::uint32_t>> e;
        for (const auto& f : faces)
            for (int k = 0; k < 3; ++k) e.insert({f[k], f[(k + 1) % 3]});
        std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
        for (const auto& [a, b] : e)
            if (!e.contains({b, a})) out.emplace_back(a, b);
        return out;
    };
    // Bridge each seam edge of the bottom layer to its twin in the top layer.
    for (const auto& [a, b] : boundary()) {
        if (topo.layer_of[a] != 0 || !on_seam(a) || !on_seam(b)) continue;
        if (ij[a][1] == ny - 1 && ij[b][1] == ny - 1) continue;
        faces.push_back({b, a, partner(a)});
        faces.push_back({b, partner(a), partner(b)});
    }
    Vec3 apex = Vec3::Zero();
    for (const auto i : topo.rim_cycle) apex += st.positions[i];
    apex /= static_cast<double>(topo.rim_cycle.size());

    auto solid_angle = [&](const Vec3& a0, const Vec3& b0, const Vec3& c0) {
        const Vec3 a = a0 - p, b = b0 - p, c = c0 - p;
        const double la = a.norm(), lb = b.norm(), lc = c.norm();
        const double num = a.dot(b.cross(c));
        const double den = la * lb * lc + a.dot(b) * lc + a.dot(c) * lb + b.dot(c) * la;
        return 2.0 * std::atan2(num, den);
    };
    double omega = 0.0;
    for (const auto& f : faces) omega += solid_angle(st.positions[f[0]], st.positions[f[1]], st.positions[f[2]]);
    for (const auto& [a, b] : boundary()) omega += solid_angle(st.positions[b], st.positions[a], apex);
    return omega / (4.0 * kPi);
}

inline bool inside_pocket(const BagState& st, const Vec3& p) { return std::abs(pocket_winding_number(st, p)) > 0.5; }

inline double rim_mean_height(const BagState& st) {
    const auto& cyc = st.topology->rim_cycle;
    double z = 0.0;
    for (const auto i : cyc) z += st.positions[i].z();
    return z / static_cast<double>(cyc.size());
}

inline std::vector<std::uint32_t> particles_with_label(const BagState& st, Label l) {
    std::vector<std::uint32_t> out;
    for (std::uint32_t i = 0; i < st.labels().size(); ++i)
        if (st.labels()[i] == l) out.push_back(i);
    return out;
}

inline Vec3 label_centroid(const BagState& st, Label l) {
    Vec3 c = Vec3::Zero();
    int n = 0;
    for (std::size_t i = 0; i < st.size(); ++i)
        if (st.labels()[i] == l) {
            c += st.positions[i];
            ++n;
        }
    if (n == 0) throw InvariantViolation(std::string("no particles labeled ") + to_string(l));
    return c / n;
}

/// Plastic creasing: bend springs adopt their current lengths as rest lengths, so folds made
/// while scripting a configuration persist instead of springing open. Other springs keep the
/// flat rest shape. The state gets its own copy of the topology.
inline void set_crease_memory(BagState& st) {
    const auto& springs = st.topology->springs;
    for (std::size_t k = 0; k < springs.size(); ++k)
        if (springs[k].kind == SpringKind::Bend) st.rest_lengths[k] = (st.positions[springs[k].j] - st.positions[springs[k].i]).norm();
}

// ---------------------------------------------------------------------------------------------
// Attachments

/// Pins every free particle within `radius` of `grasp_point` to `gripper`. The gripper is taken
/// to be at `grasp_point`, pointing down, at the moment of the grasp.
inline const GripperAttachment& attach(const BagState& st, AttachmentSet& set, GripperId gripper, const Vec3& grasp_point,
                                       double radius) {
    if (!(radius > 0.0)) throw InvalidArgument("radius", "grasp radius must be > 0");
    if (!all_finite(grasp_point)) throw InvalidArgument("grasp_point", "must be finite");
    if (set.has(gripper)) throw InvalidArgument("gripper", std::string(to_string(gripper)) + " already attached");
    GripperAttachment a;
    a.gripper = gripper;
    const double r2 = radius * radius;
    for (std::uint32_t i = 0; i < st.size(); ++i) {
        if ((st.positions[i] - grasp_point).squaredNorm() <= r2 && !set.is_pinned(i)) {
            a.pinned.push_back(i);
            a.local_offsets.push_back(st.positions[i] - grasp_point);
        }
    }
    if (a.pinned.empty()) throw GraspMiss("no bag particle within grasp radius");
    set.add(std::move(a));
    return set.get(gripper);
}

/// Frees the particles held by `gripper`; they keep their current velocities.
inline void release(BagState& /*st*/, AttachmentSet& set, GripperId gripper) { set.remove(gripper); }

inline Vec3 pinned_target(const GripperPose& pose, const Vec3& local) { return pose.position + gripper_rotation(pose.pitch) * local; }

// ---------------------------------------------------------------------------------------------
// Integration

namespace detail {

/// Closest point to `p` on triangle abc, with its barycentric weights.
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c, Vec3& bary) {
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) {
        bary = {1.0, 0.0, 0.0};
        return a;
    }
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) {
        bary = {0.0, 1.0, 0.0};
        return b;
    }
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        bary = {1.0 - v, v, 0.0};
        return a + v * ab;
    }
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) {
        bary = {0.0, 0.0, 1.0};
        return c;
    }
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        bary = {1.0 - w, 0.0, w};
        return a + w * ac;
    }
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        bary = {0.0, 1.0 - w, w};
        return b + w * (c - b);
    }
    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    bary = {1.0 - v - w, v, w};
    return a + v * ab + w * ac;
}

/// Pushes cloth triangles out of an item. Spheres are tested against their center; cylinders
/// against the closest point of their axis, so the round side is exact and the caps are rounded.
/// Corrections and normal impulses are shared by mass, spread over the triangle's corners.
inline void collide_item_cloth(BagState& st, ItemBody& item, const std::vector<char>& pinned) {
    const double r = std::max(st.physics.particle_radius, st.physics.item_contact_radius);
    const double m = st.topology->particle_mass;
    const double reach = item.radius + r;
    const double axis = item.shape == ItemShape::Sphere ? 0.0 : std::max(0.0, item.half_height() - item.radius);
    const double bound = reach + axis;
    for (const auto& t : st.topology->triangles) {
        const std::uint32_t idx[3] = {t.a, t.b, t.c};
        const Vec3& pa = st.positions[t.a];
        const Vec3& pb = st.positions[t.b];
        const Vec3& pc = st.positions[t.c];
        const Vec3 lo = pa.cwiseMin(pb).cwiseMin(pc), hi = pa.cwiseMax(pb).cwiseMax(pc);
        const Vec3& c = item.position;
        if (c.x() < lo.x() - reach || c.x() > hi.x() + reach || c.y() < lo.y() - reach || c.y() > hi.y() + reach ||
            c.z() < lo.z() - bound || c.z() > hi.z() + bound)
            continue;
        Vec3 bary;
        Vec3 q = closest_point_on_triangle(c, pa, pb, pc, bary);
        Vec3 core = c;
        if (axis > 0.0) {
            core.z() = c.z() + std::clamp(q.z() - c.z(), -axis, axis);
            q = closest_point_on_triangle(core, pa, pb, pc, bary);
        }
        Vec3 d = q - core;
        const double dist = d.norm();
        if (dist >= reach) continue;
        Vec3 normal;
        if (dist > 1e-12) {
            normal = d / dist;
        } else {
            normal = (pb - pa).cross(pc - pa).normalized();
            if (normal.dot(item.velocity) < 0.0) normal = -normal;
        }
        const double depth = reach - dist;
        // Cloth lying on the table cannot be pushed further down.
        const bool grounded = normal.z() < 0.0 && std::min({pa.z(), pb.z(), pc.z()}) <= st.physics.particle_radius + 1e-3;
        const bool fixed = grounded || pinned[t.a] || pinned[t.b] || pinned[t.c];
        const double w2 = bary.squaredNorm();
        const double m_eff = m / w2;
        const double wp = fixed ? 0.0 : item.mass / (item.mass + m_eff);
        item.position -= depth * (1.0 - wp) * normal;
        Vec3 vq = Vec3::Zero();
        for (int k = 0; k < 3; ++k) vq += bary[k] * st.velocities[idx[k]];
        const double vn = (vq - item.velocity).dot(normal);
        if (fixed) {
            if (vn < 0.0) item.velocity += vn * normal;
            continue;
        }
        for (int k = 0; k < 3; ++k) st.positions[idx[k]] += (depth * wp * bary[k] / w2) * normal;
        if (vn < 0.0) {
            // Perfectly inelastic along the normal, momentum conserving.
            const double j = -vn * (m_eff * item.mass) / (m_eff + item.mass);
            for (int k = 0; k < 3; ++k) st.velocities[idx[k]] += (j * bary[k] / (w2 * m_eff)) * normal;
            item.velocity -= (j / item.mass) * normal;
        }
    }
}

inline void collide_item_table(ItemBody& item, double friction, double h, double g) {
    const double floor_z = item.half_height();
    if (item.position.z() < floor_z) {
        item.position.z() = floor_z;
        if (item.velocity.z() < 0.0) {
            const double dvn = -item.velocity.z();
            item.velocity.z() = 0.0;
            Vec2 vt(item.velocity.x(), item.velocity.y());
            const double n = vt.norm();
            const double cut = friction * (dvn + g * h);
            if (n <= cut) vt.setZero();
            else vt *= (1.0 - cut / n);
            item.velocity.x() = vt.x();
            item.velocity.y() = vt.y();
        }
    }
}

inline void collide_items(std::span<ItemBody> items) {
    for (std::size_t a = 0; a < items.size(); ++a)
        for (std::size_t b = a + 1; b < items.size(); ++b) {
            ItemBody& p = items[a];
            ItemBody& q = items[b];
            const Vec3 d = q.position - p.position;
            if (std::abs(d.z()) >= p.half_height() + q.half_height()) continue;
            const double radial = std::hypot(d.x(), d.y());
            const double reach = p.radius + q.radius;
            if (radial >= reach) continue;
            const Vec3 n = radial > 1e-12 ? Vec3(d.x() / radial, d.y() / radial, 0.0) : Vec3::UnitX();
            const double depth = reach - radial;
            const double wp = q.mass / (p.mass + q.mass);
            p.position -= depth * wp * n;
            q.position += depth * (1.0 - wp) * n;
            const double vn = (q.velocity - p.velocity).dot(n);
            if (vn < 0.0) {
                const double j = -vn * p.mass * q.mass / (p.mass + q.mass);
                p.velocity -= (j / p.mass) * n;
                q.velocity += (j / q.mass) * n;
            }
        }
}

}  // namespace detail

/// Advances the bag by `dt` with semi-implicit Euler, internally sub-stepped below the spring
/// stability limit. Pinned particles are driven linearly from their current positions to the
/// targets given by `poses` at the end of the interval. Spring damping is applied as exact
/// pairwise relaxation, which stays stable at any sub-step.
namespace detail {

/// Advances the pocket pressure by `dt` and returns the per-particle force it exerts. The mouth
/// is the rim loop; air rammed in while the mouth moves outward fills the pocket toward the
/// dynamic pressure, scaled by how open the mouth is. The pressure pushes each body triangle
/// along its outward normal.
inline std::vector<Vec3> pocket_air_forces(BagState& st, double dt) {
    const auto& topo = *st.topology;
    const PhysicsParams& ph = st.physics;
    const auto& cyc = topo.rim_cycle;
    Vec3 rim_c = Vec3::Zero(), rim_v = Vec3::Zero(), body_c = Vec3::Zero();
    for (const auto i : cyc) {
        rim_c += st.positions[i];
        rim_v += st.velocities[i];
    }
    rim_c /= static_cast<double>(cyc.size());
    rim_v /= static_cast<double>(cyc.size());
    std::size_t nb = 0;
    for (std::size_t i = 0; i < st.size(); ++i)
        if (topo.labels[i] == Label::Body) {
            body_c += st.positions[i];
            ++nb;
        }
    body_c /= static_cast<double>(std::max<std::size_t>(nb, 1));
    Vec3 area = Vec3::Zero();
    for (std::size_t k = 0; k < cyc.size(); ++k)
        area += 0.5 * (st.positions[cyc[k]] - rim_c).cross(st.positions[cyc[(k + 1) % cyc.size()]] - rim_c);
    const double mouth = area.norm();
    double target = 0.0;
    if (mouth > 1e-12) {
        Vec3 out = area / mouth;
        if (out.dot(rim_c - body_c) < 0.0) out = -out;
        const double u = rim_v.dot(out);
        // Stagnation pressure: a pocket fed through any opening reaches it, like a pitot tube.
        if (u > 0.0) target = 0.5 * ph.air_density * u * u;
    }
    const double a = 1.0 - std::exp(-dt / ph.air_leak_time);
    st.air_pressure += a * (target - st.air_pressure);

    std::vector<Vec3> f(st.size(), Vec3::Zero());
    if (st.air_pressure <= 0.0) return f;
    for (const auto& t : topo.triangles) {
        if (is_handle(topo.labels[t.a]) || is_handle(topo.labels[t.b]) || is_handle(topo.labels[t.c])) continue;
        // Grid triangles face +z at rest, which is outward for the top layer only.
        Vec3 nrm = 0.5 * (st.positions[t.b] - st.positions[t.a]).cross(st.positions[t.c] - st.positions[t.a]);
        if (topo.layer_of[t.a] == 0) nrm = -nrm;
        const Vec3 fi = (st.air_pressure / 3.0) * nrm;
        f[t.a] += fi;
        f[t.b] += fi;
        f[t.c] += fi;
    }
    return f;
}

}  // namespace detail

inline void step(BagState& st, const AttachmentSet& attachments, const GripperPoses& poses, double dt,
                 std::span<ItemBody> items = {}) {
    if (!(dt > 0.0) || dt > 1.0 / 60.0 + 1e-12) throw InvalidArgument("dt", "must lie in (0, 1/60]");
    for (const auto& p : poses)
        if (!all_finite(p.position) || !std::isfinite(p.pitch)) throw InvalidArgument("gripper_poses", "must be finite");

    const BagTopology& topo = *st.topology;
    const BagSpec& spec = topo.spec;
    const PhysicsParams& ph = st.physics;
    const std::size_t n = st.size();
    const double m = topo.particle_mass;
    const int substeps = std::max(1, static_cast<int>(std::ceil(dt / (ph.substep_safety * topo.stable_dt))));
    const double h = dt / substeps;
    const double r = ph.particle_radius;

    std::vector<char> pinned(n, 0);
    std::vector<Vec3> pin_start, pin_end;
    std::vector<std::uint32_t> pin_index;
    attachments.for_each([&](const GripperAttachment& a) {
        const GripperPose& pose = poses[static_cast<std::size_t>(a.gripper)];
        for (std::size_t k = 0; k < a.pinned.size(); ++k) {
            const auto i = a.pinned[k];
            pinned[i] = 1;
            pin_index.push_back(i);
            pin_start.push_back(st.positions[i]);
            pin_end.push_back(pinned_target(pose, a.local_offsets[k]));
        }
    });

    for (std::size_t k = 0; k < pin_index.size(); ++k) st.velocities[pin_index[k]] = (pin_end[k] - pin_start[k]) / dt;

    std::vector<Vec3> force(n);
    const std::size_t ns = topo.springs.size();
    std::vector<Vec3> spring_u(ns, Vec3::Zero());
    std::vector<double> spring_len(ns, 0.0);
    const double half_decay = std::exp(-spec.damping * h / m);
    const double half_decay_one_sided = std::exp(-0.5 * spec.damping * h / m);
    const Vec3 gvec(0.0, 0.0, -ph.gravity);
    std::vector<Vec3> air;
    if (ph.drag) air = detail::pocket_air_forces(st, dt);

    for (int sub = 1; sub <= substeps; ++sub) {
        for (std::size_t i = 0; i < n; ++i) force[i] = m * gvec;
        if (!air.empty())
            for (std::size_t i = 0; i < n; ++i) force[i] += air[i];
        for (std::size_t k = 0; k < ns; ++k) {
            const Spring& s = topo.springs[k];
            const Vec3 d = st.positions[s.j] - st.positions[s.i];
            const double len = d.norm();
            spring_len[k] = len;
            if (len < 1e-12) continue;
            spring_u[k] = d / len;
            // Seams act as tethers: pulling only, so stacked layers do not repel through them.
            const double rest = st.rest_lengths[k];
            if (s.kind == SpringKind::Seam && len <= rest) continue;
            const Vec3 f = (topo.spring_k[k] * (len - rest)) * spring_u[k];
            force[s.i] += f;
            force[s.j] -= f;
        }
        if (ph.drag) {
            for (const auto& t : topo.triangles) {
                const Vec3 nrm = (st.positions[t.b] - st.positions[t.a]).cross(st.positions[t.c] - st.positions[t.a]);
                const double twice_area = nrm.norm();
                if (twice_area < 1e-14) continue;
                const Vec3 nhat = nrm / twice_area;
                const Vec3 vrel = (st.velocities[t.a] + st.velocities[t.b] + st.velocities[t.c]) / 3.0;
                const Vec3 f = (-spec.drag_coeff * 0.5 * twice_area * vrel.dot(nhat) / 3.0) * nhat;
                force[t.a] += f;
                force[t.b] += f;
                force[t.c] += f;
            }
        }
        for (std::size_t i = 0; i < n; ++i)
            if (!pinned[i]) st.velocities[i] += (h / m) * force[i];
        // Pairwise exact damping along each spring, as a symmetric forward/backward sweep so the
        // combined velocity filter stays symmetric (a one-way sweep destabilizes the kick/drift).
        auto damp_pair = [&](std::size_t k) {
            const Spring& s = topo.springs[k];
            const bool pi = pinned[s.i], pj = pinned[s.j];
            if ((pi && pj) || spring_len[k] < 1e-12) return;
            const Vec3& u = spring_u[k];
            const double w = (st.velocities[s.j] - st.velocities[s.i]).dot(u);
            if (pi || pj) {
                const double dw = w * (1.0 - half_decay_one_sided);
                if (pi) st.velocities[s.j] -= dw * u;
                else st.velocities[s.i] += dw * u;
            } else {
                const double dw = 0.5 * w * (1.0 - half_decay);
                st.velocities[s.i] += dw * u;
                st.velocities[s.j] -= dw * u;
            }
        };
        for (std::size_t k = 0; k < ns; ++k) damp_pair(k);
        for (std::size_t k = ns; k-- > 0;) damp_pair(k);
        for (std::size_t i = 0; i < n; ++i)
            if (!pinned[i]) st.positions[i] += h * st.velocities[i];
        const double frac = static_cast<double>(sub) / substeps;
        for (std::size_t k = 0; k < pin_index.size(); ++k) {
            const auto i = pin_index[k];
            const Vec3 target = sub == substeps ? pin_end[k] : Vec3(pin_start[k] + frac * (pin_end[k] - pin_start[k]));
            st.positions[i] = target;
            st.velocities[i] = (pin_end[k] - pin_start[k]) / dt;
        }

        if (!items.empty()) {
            for (auto& it : items) {
                it.velocity += h * gvec;
                it.position += h * it.velocity;
            }
            detail::collide_items(items);
            for (auto& it : items) detail::collide_item_cloth(st, it, pinned);
            for (auto& it : items) detail::collide_item_table(it, ph.friction, h, ph.gravity);
        }

        // Table contact with Coulomb-style tangential damping.
        for (std::size_t i = 0; i < n; ++i) {
            if (pinned[i]) continue;
            Vec3& x = st.positions[i];
            if (x.z() >= r) continue;
            x.z() = r;
            Vec3& v = st.velocities[i];
            if (v.z() < 0.0) {
                const double dvn = -v.z();
                v.z() = 0.0;
                const double vt = std::hypot(v.x(), v.y());
                const double cut = ph.friction * dvn;
                if (vt <= cut) {
                    v.x() = 0.0;
                    v.y() = 0.0;
                } else {
                    const double s = 1.0 - cut / vt;
                    v.x() *= s;
                    v.y() *= s;
                }
            }
        }
    }

    if (ph.bend_yield_strain > 0.0) {
        const double y = ph.bend_yield_strain;
        for (std::size_t k = 0; k < ns; ++k) {
            const Spring& s = topo.springs[k];
            if (s.kind != SpringKind::Bend) continue;
            double& rest = st.rest_lengths[k];
            const double len = (st.positions[s.j] - st.positions[s.i]).norm();
            if (len > rest * (1.0 + y)) rest = len / (1.0 + y);
            else if (len < rest * (1.0 - y)) rest = len / (1.0 - y);
        }
    }

    st.time += dt;
    ++st.step_count;
    for (std::size_t i = 0; i < n; ++i)
        if (!all_finite(st.positions[i]) || !all_finite(st.velocities[i])) throw SimulationDiverged(st.step_count);
    for (const auto& it : items)
        if (!all_finite(it.position)) throw SimulationDiverged(st.step_count);
    for (const auto& s : topo.springs) {
        if (s.kind == SpringKind::Seam) continue;
        if ((st.positions[s.j] - st.positions[s.i]).squaredNorm() > std::pow(ph.overstretch_ratio * s.rest, 2)) {
            ++st.overstretch_events;
            break;
        }
    }
}

enum class SettleReason : std::uint8_t { Quiescent, Timeout };

struct SettleResult {
    SettleReason reason = SettleReason::Quiescent;
    double elapsed = 0.0;
    double kinetic_energy = 0.0;
};

inline constexpr double kDefaultDt = 1.0 / 240.0;
inline constexpr double kDefaultKeEps = 1e-6;

/// Steps with fixed gripper poses until kinetic energy drops below `ke_eps` or `max_time` passes.
inline SettleResult settle(BagState& st, const AttachmentSet& attachments, const GripperPoses& poses, double max_time,
                           double ke_eps = kDefaultKeEps, double dt = kDefaultDt, std::span<ItemBody> items = {}) {
    if (!(max_time > 0.0)) throw InvalidArgument("max_time", "must be > 0");
    auto total_ke = [&] {
        double e = kinetic_energy(st);
        for (const auto& it : items) e += 0.5 * it.mass * it.velocity.squaredNorm();
        return e;
    };
    SettleResult res;
    double ke = total_ke();
    while (ke >= ke_eps) {
        if (res.elapsed >= max_time - 1e-12) {
            res.reason = SettleReason::Timeout;
            res.kinetic_energy = ke;
            return res;
        }
        const double h = std::min(dt, max_time - res.elapsed);
        step(st, attachments, poses, h, items);
        res.elapsed += h;
        ke = total_ke();
    }
    res.reason = SettleReason::Quiescent;
    res.kinetic_energy = ke;
    return res;
}

// ---------------------------------------------------------------------------------------------
// Snapshots
//
// Plain-text, one record per line:
//   shakesim-bag 1
//   spec <width> <height> <handle_width> <handle_height> <resolution> <mass_total> <k_struct> <k_shear> <k_bend> <damping> <drag>
//   physics <particle_radius> <layer_gap>
//   state <time> <seed> <particle_count>
//   p <x> <y> <z> <label>        (one line per particle, index order)
//   c <spring> <rest>            (optional; bend springs whose rest length differs from the flat bag)

inline void write_snapshot(std::ostream& os, const BagState& st) {
    const BagSpec& s = st.spec();
    os.precision(17);
    os << "shakesim-bag 1\n";
    os << "spec " << s.width << ' ' << s.height << ' ' << s.handle_width << ' ' << s.handle_height << ' ' << s.resolution
       << ' ' << s.mass_total << ' ' << s.stiffness_structural << ' ' << s.stiffness_shear << ' ' << s.stiffness_bend << ' '
       << s.damping << ' ' << s.drag_coeff << '\n';
    os << "physics " << st.topology->physics_at_build.particle_radius << ' ' << st.topology->physics_at_build.layer_gap << '\n';
    os << "state " << st.time << ' ' << st.seed << ' ' << st.size() << '\n';
    for (std::size_t i = 0; i < st.size(); ++i) {
        const Vec3& p = st.positions[i];
        os << "p " << p.x() << ' ' << p.y() << ' ' << p.z() << ' ' << to_string(st.labels()[i]) << '\n';
    }
    const auto& springs = st.springs();
    for (std::size_t k = 0; k < springs.size(); ++k)
        if (st.rest_lengths[k] != springs[k].rest) os << "c " << k << ' ' << st.rest_lengths[k] << '\n';
}

inline BagState read_snapshot(std::istream& is) {
    std::string line, tag;
    auto next = [&](const char* expect) {
        if (!std::getline(is, line)) throw InvalidArgument("snapshot", std::string("missing '") + expect + "' record");
        std::istringstream ls(line);
        ls >> tag;
        if (tag != expect) throw InvalidArgument("snapshot", std::string("expected '") + expect + "', got '" + tag + "'");
        return ls;
    };
    {
        auto ls = next("shakesim-bag");
        int version = 0;
        ls >> version;
        if (version != 1) throw InvalidArgument("snapshot", "unsupported version");
    }
    BagSpec s;
    {
        auto ls = next("spec");
        ls >> s.width >> s.height >> s.handle_width >> s.handle_height >> s.resolution >> s.mass_total >> s.stiffness_structural >>
            s.stiffness_shear >> s.stiffness_bend >> s.damping >> s.drag_coeff;
        if (!ls) throw InvalidArgument("snapshot", "malformed spec record");
    }
    PhysicsParams ph;
    {
        auto ls = next("physics");
        ls >> ph.particle_radius >> ph.layer_gap;
        if (!ls) throw InvalidArgument("snapshot", "malformed physics record");
    }
    double time = 0.0;
    std::uint64_t seed = 0;
    std::size_t count = 0;
    {
        auto ls = next("state");
        ls >> time >> seed >> count;
        if (!ls) throw InvalidArgument("snapshot", "malformed state record");
    }
    BagState st = new_bag(s, seed, ph);
    if (st.size() != count) throw InvalidArgument("snapshot", "particle count does not match the spec topology");
    st.time = time;
    for (std::size_t i = 0; i < count; ++i) {
        auto ls = next("p");
        double x = 0, y = 0, z = 0;
        std::string lab;
        ls >> x >> y >> z >> lab;
        if (!ls) throw InvalidArgument("snapshot", "malformed particle record " + std::to_string(i));
        const auto parsed = label_from_string(lab);
        if (!parsed || *parsed != st.labels()[i]) throw InvalidArgument("snapshot", "label mismatch at particle " + std::to_string(i));
        st.positions[i] = Vec3(x, y, z);
    }
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::size_t k = 0;
        double rest = 0.0;
        ls >> tag >> k >> rest;
        if (tag != "c" || !ls) throw InvalidArgument("snapshot", "malformed crease record '" + line + "'");
        if (k >= st.rest_lengths.size() || st.springs()[k].kind != SpringKind::Bend || !(rest >= 0.0))
            throw InvalidArgument("snapshot", "crease record for a non-bend spring or negative rest length");
        st.rest_lengths[k] = rest;
    }
    return st;
}

}  // namespace shakesim
