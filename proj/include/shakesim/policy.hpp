#pragma once

// Rule-based bagging policy: grasp the handles (Shake / Recenter as fallbacks), iterate Bag
// Adjustment and Dual-arm Shaking until the opening metrics pass, then One-arm Holding, item
// insertion, regrasp and lift.

#include "shakesim/metrics.hpp"
#include "shakesim/perception.hpp"
#include "shakesim/primitives.hpp"

#include <functional>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace shakesim {

enum class Phase : std::uint8_t { Perceive, Grasp, Open, Hold, Insert, Regrasp, Lift, Done, Failed };

inline const char* to_string(Phase p) {
    static constexpr const char* names[] = {"perceive", "grasp", "open", "hold", "insert", "regrasp", "lift", "done", "failed"};
    return names[static_cast<int>(p)];
}

enum class Method : std::uint8_t { ShakingBot, ShakingBotA, ShakingBotH, AnalyticPrimitives };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::ShakingBot: return "shakingbot";
        case Method::ShakingBotA: return "shakingbot_A";
        case Method::ShakingBotH: return "shakingbot_H";
        case Method::AnalyticPrimitives: return "analytic_primitives";
    }
    return "?";
}

inline std::optional<Method> method_from_string(const std::string& s) {
    for (auto m : {Method::ShakingBot, Method::ShakingBotA, Method::ShakingBotH, Method::AnalyticPrimitives})
        if (s == to_string(m)) return m;
    return std::nullopt;
}

/// Display name used in result tables.
inline const char* display_name(Method m) {
    switch (m) {
        case Method::ShakingBot: return "ShakingBot";
        case Method::ShakingBotA: return "ShakingBot-A";
        case Method::ShakingBotH: return "ShakingBot-H";
        case Method::AnalyticPrimitives: return "Analytic&Primitives";
    }
    return "?";
}

struct ItemSpec {
    ItemShape shape = ItemShape::Cylinder;
    double radius = 0.03;
    double height = 0.08;
    double mass = 0.05;
    Vec3 start_pose = Vec3(0.6, -0.4, 0.04);  // known pick pose on the table

    void validate() const {
        if (!(radius > 0.0)) throw InvalidArgument("item.radius", "must be > 0");
        if (shape == ItemShape::Cylinder && !(height > 0.0)) throw InvalidArgument("item.height", "must be > 0");
        if (!(mass > 0.0)) throw InvalidArgument("item.mass", "must be > 0");
    }
    [[nodiscard]] double half_height() const { return shape == ItemShape::Sphere ? radius : 0.5 * height; }
};

struct PolicyConfig {
    OpeningThresholds thresholds;
    int T = 15;
    double r_center = 0.3;
    double grasp_radius = 0.02;
    double d_preset = 0.30;
    double hang_height = 0.8;        // gripper height while opening
    double lift_height = 0.8;        // final lift
    double hold_time = 2.0;
    double drop_height = 0.15;
    double shake_clearance = 0.08;   // bag bottom height at the end of a shaking stroke
    double bottom_fallback = 0.10;   // m, assumed bottom height when sensing fails
    int regrasp_retries = 3;
    std::size_t min_handle_area = 4; // px
    double settle_after_grasp = 0.5;
    double settle_after_primitive = 1.0;
    double settle_on_table = 1.5;
    double settle_after_hold = 0.1;
    double settle_items = 1.0;
    BagAdjustment bag_adjustment;
    DualArmShaking shaking;
    Shake shake;
    MotionLimits limits;
    Camera camera;
    RenderStyle style;
    HarrisParams harris;
    CannyParams canny;

    void validate() const {
        thresholds.validate();
        if (T < 0) throw InvalidArgument("T", "must be >= 0");
        if (!(grasp_radius > 0.0)) throw InvalidArgument("grasp_radius", "must be > 0");
        if (!(hang_height > 0.0) || hang_height > limits.reach) throw InvalidArgument("hang_height", "must lie in (0, reach]");
        if (!(lift_height > 0.0) || lift_height > limits.reach) throw InvalidArgument("lift_height", "must lie in (0, reach]");
        if (!(drop_height > 0.0)) throw InvalidArgument("drop_height", "must be > 0");
        shakesim::validate(bag_adjustment);
        shakesim::validate(shaking);
        shakesim::validate(shake);
        camera.validate();
    }
};

struct PolicyState {
    Phase phase = Phase::Perceive;
    int actions_used = 0;
    std::optional<OpeningMetrics> last_metrics;
    PolicyConfig config;
    double d = 0.30;               // current gripper separation
    bool last_was_adjustment = false;
    bool forced = false;
};

// ---------------------------------------------------------------------------------------------
// Perception front end

enum class Backend : std::uint8_t { Oracle, Analytic };

/// What the policy extracts from one observation.
struct Perceived {
    std::vector<Vec2> handles_px;          // candidate handle points, best first
    GraspStatus grasp_status = GraspStatus::None;
    std::optional<OpeningMetrics> opening; // estimated from the rim
    Polygon rim_hull;                      // world, counterclockwise
    std::optional<double> rim_height;      // mean observed height of rim pixels
    bool bag_visible = false;
    Vec2 bag_centroid = Vec2::Zero();      // world
    Vec2 top_px = Vec2::Zero();            // highest bag pixel
    Vec2 nearest_centroid_px = Vec2::Zero();
};

inline Perceived perceive_support(const Observation& obs) {
    Perceived p;
    double best = -1.0, sx = 0.0, sy = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < obs.depth.height; ++y)
        for (int x = 0; x < obs.depth.width; ++x) {
            const double d = obs.depth.at(x, y);
            if (d <= 0.0) continue;
            sx += x;
            sy += y;
            ++n;
            if (d > best) {
                best = d;
                p.top_px = Vec2(x, y);
            }
        }
    if (n == 0) return p;
    p.bag_visible = true;
    const Vec2 cpx(sx / n, sy / n);
    p.bag_centroid = obs.camera.to_world(cpx);
    double bd = 1e300;
    for (int y = 0; y < obs.depth.height; ++y)
        for (int x = 0; x < obs.depth.width; ++x)
            if (obs.depth.at(x, y) > 0.0) {
                const double dd = (Vec2(x, y) - cpx).squaredNorm();
                if (dd < bd) {
                    bd = dd;
                    p.nearest_centroid_px = Vec2(x, y);
                }
            }
    return p;
}

/// Perception from segmentation masks (oracle or predicted).
inline Perceived perceive_masks(const Observation& obs, const Masks& masks, double rim_perimeter_rest, std::size_t min_handle_area = 4) {
    Perceived p = perceive_support(obs);
    const GraspPoints g = grasp_points(masks.handle(), min_handle_area);
    p.grasp_status = g.status;
    p.handles_px = g.points;
    if (auto m = rim_metrics_from_mask(masks.rim(), obs.camera, rim_perimeter_rest)) {
        p.opening = m;
        p.rim_hull = m->hull;
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < masks.rim().size(); ++i)
            if (masks.rim().data[i]) {
                s += obs.depth.data[i];
                ++n;
            }
        p.rim_height = s / static_cast<double>(n);
    }
    return p;
}

/// Perception from the depth image alone: Harris corners as handles, the Canny edge hull as rim.
inline Perceived perceive_analytic(const Observation& obs, double rim_perimeter_rest, const HarrisParams& hp = {}, const CannyParams& cp = {}) {
    Perceived p = perceive_support(obs);
    const HarrisResult h = harris_handles(obs.depth, hp);
    for (const auto& c : h.corners) p.handles_px.push_back(c.px);
    p.grasp_status = h.ok ? GraspStatus::Two : h.corners.size() == 1 ? GraspStatus::OneMissing : GraspStatus::None;
    const CannyRim cr = canny_rim(obs.depth, obs.camera.pixel_scale, cp);
    if (!cr.hull.empty()) {
        Polygon world;
        for (const auto& v : cr.hull) world.push_back(obs.camera.to_world(v));
        p.opening = opening_metrics_2d(world, rim_perimeter_rest);
        p.rim_hull = p.opening->hull;
        double s = 0.0;
        for (const auto& q : cr.points) s += obs.depth.at(static_cast<int>(q.x()), static_cast<int>(q.y()));
        p.rim_height = s / static_cast<double>(cr.points.size());
    }
    return p;
}

// ---------------------------------------------------------------------------------------------
// Decisions

struct DualGrasp {
    Vec2 left_px = Vec2::Zero();
    Vec2 right_px = Vec2::Zero();
};

struct Transition {
    Phase to = Phase::Hold;
    bool forced = false;
};

using Decision = std::variant<DualGrasp, PrimitiveCommand, Transition>;

inline const char* decision_name(const Decision& d) {
    if (std::holds_alternative<DualGrasp>(d)) return "dual_grasp";
    if (const auto* c = std::get_if<PrimitiveCommand>(&d)) return command_name(*c);
    return "transition";
}

inline bool uses_adjustment(Method m) { return m != Method::ShakingBotA; }

/// One decision per call. Emitting a command consumes one action; at budget exhaustion the
/// policy transitions to the forced lift.
inline Decision decide(const Perceived& per, PolicyState& ps, Method method = Method::ShakingBot) {
    const PolicyConfig& cfg = ps.config;
    if (ps.phase != Phase::Perceive && ps.phase != Phase::Grasp && ps.phase != Phase::Open)
        throw InvalidArgument("phase", std::string("decide called in phase ") + to_string(ps.phase));
    if (ps.phase == Phase::Open && per.opening && opening_ok(*per.opening, cfg.thresholds)) return Transition{Phase::Hold, false};
    if (ps.actions_used >= cfg.T) {
        ps.forced = true;
        return Transition{ps.phase == Phase::Open ? Phase::Hold : Phase::Failed, true};
    }
    ++ps.actions_used;
    if (ps.phase == Phase::Open) {
        if (uses_adjustment(method) && !ps.last_was_adjustment) {
            BagAdjustment ba = cfg.bag_adjustment;
            ba.d = ps.d;
            ps.last_was_adjustment = true;
            return PrimitiveCommand{ba};
        }
        ps.last_was_adjustment = false;
        return PrimitiveCommand{cfg.shaking};
    }
    if (per.grasp_status == GraspStatus::Two && per.handles_px.size() >= 2) {
        // Left gripper takes the handle with the smaller world x.
        Vec2 a = per.handles_px[0], b = per.handles_px[1];
        if (a.x() > b.x()) std::swap(a, b);
        return DualGrasp{a, b};
    }
    if (per.bag_visible && per.bag_centroid.norm() > cfg.r_center) return PrimitiveCommand{Recenter{Vec2::Zero()}};
    Shake s = cfg.shake;
    s.grasp_point = per.handles_px.empty() ? per.top_px : per.handles_px.front();
    return PrimitiveCommand{s};
}

/// Convenience overload on raw observation and masks.
inline Decision decide(const Observation& obs, const Masks& masks, PolicyState& ps, double rim_perimeter_rest) {
    return decide(perceive_masks(obs, masks, rim_perimeter_rest, ps.config.min_handle_area), ps);
}

struct BottomSense {
    double height = 0.0;
    bool ok = false;
};

/// Lowest bag surface height anywhere in the lowest-surface raster.
inline BottomSense bag_bottom_height(const Observation& obs, double fallback = 0.10) {
    BottomSense b;
    double best = 1e300;
    for (const double d : obs.depth_min.data)
        if (d > 0.0 && d < best) best = d;
    if (best < 1e300) {
        b.height = best;
        b.ok = true;
    } else {
        b.height = fallback;
    }
    return b;
}

/// Splits the hull into n equal-area slabs by chords perpendicular to its principal axis and
/// returns the slab centroids.
inline std::vector<Vec2> insertion_plan(const Polygon& hull, std::size_t n) {
    if (n < 1) throw InvalidArgument("items", "need at least one item");
    const double total = polygon_area(hull);
    if (hull.size() < 3 || !(total > 1e-10)) throw InvalidArgument("hull", "insertion infeasible: degenerate opening hull");
    const Vec2 axis = principal_axes(polygon_covariance(hull)).axis;
    double lo = 1e300, hi = -1e300;
    for (const auto& v : hull) {
        lo = std::min(lo, v.dot(axis));
        hi = std::max(hi, v.dot(axis));
    }
    auto area_below = [&](double c) { return polygon_area(clip_half_plane(hull, axis, c)); };
    std::vector<double> cuts{lo};
    for (std::size_t k = 1; k < n; ++k) {
        const double target = total * static_cast<double>(k) / static_cast<double>(n);
        double a = cuts.back(), b = hi;
        for (int it = 0; it < 100; ++it) {
            const double m = 0.5 * (a + b);
            (area_below(m) < target ? a : b) = m;
        }
        cuts.push_back(0.5 * (a + b));
    }
    cuts.push_back(hi);
    std::vector<Vec2> pts;
    for (std::size_t k = 0; k < n; ++k) {
        Polygon slab = clip_half_plane(hull, axis, cuts[k + 1]);
        slab = clip_half_plane(slab, -axis, -cuts[k]);
        pts.push_back(polygon_centroid(slab));
    }
    return pts;
}

// ---------------------------------------------------------------------------------------------
// Episode execution

/// Everything the simulator advances.
struct World {
    BagState bag;
    AttachmentSet att;
    GripperPoses poses{park_pose(GripperId::Left), park_pose(GripperId::Right)};
    std::vector<ItemBody> items;
};

struct PolicyEvent {
    double t = 0.0;
    Phase phase = Phase::Perceive;
    std::string action;
    int actions_used = 0;
    std::optional<OpeningMetrics> estimated;
    std::optional<OpeningMetrics> truth;
    std::string note;
};

struct EpisodeResult {
    bool open_bag = false;
    int items_total = 0;
    int items_placed = 0;
    int items_lifted = 0;
    bool bag_lifted = false;
    bool full_success = false;
    bool partial_success = false;
    int actions = 0;
    double time = 0.0;
    bool forced = false;
    std::string failure;
};

/// True opening metrics of the current bag state.
inline OpeningMetrics true_opening(const BagState& st) { return opening_metrics(rim_points(st), st.rim_perimeter_rest()); }

class Episode {
public:
    using Logger = std::function<void(const PolicyEvent&)>;

    Episode(World& w, Method method, PolicyConfig cfg, std::vector<ItemSpec> items, Logger log = {})
        : w_(w), method_(method), items_(std::move(items)), log_(std::move(log)) {
        cfg.validate();
        for (const auto& it : items_) it.validate();
        ps_.config = std::move(cfg);
        ps_.d = ps_.config.d_preset;
    }

    [[nodiscard]] const PolicyState& state() const { return ps_; }

    EpisodeResult run() {
        res_.items_total = static_cast<int>(items_.size());
        while (true) {
            const Phase ph = ps_.phase;
            if (ph == Phase::Perceive || ph == Phase::Grasp || ph == Phase::Open) {
                decide_and_act();
            } else if (ph == Phase::Hold) {
                hold();
            } else if (ph == Phase::Insert) {
                insert();
            } else if (ph == Phase::Regrasp) {
                regrasp();
            } else if (ph == Phase::Lift) {
                lift();
            } else {
                break;
            }
        }
        res_.actions = ps_.actions_used;
        res_.forced = ps_.forced;
        res_.time = w_.bag.time;
        return res_;
    }

private:
    const PolicyConfig& cfg() const { return ps_.config; }
    double perimeter() const { return w_.bag.rim_perimeter_rest(); }
    ExecuteOptions exec_opts() const { return {cfg().grasp_radius, {}}; }

    void emit(const std::string& action, const std::optional<OpeningMetrics>& est = std::nullopt, std::string note = {}) {
        if (!log_) return;
        PolicyEvent e;
        e.t = w_.bag.time;
        e.phase = ps_.phase;
        e.action = action;
        e.actions_used = ps_.actions_used;
        e.estimated = est;
        e.truth = true_opening(w_.bag);
        e.note = std::move(note);
        log_(e);
    }

    void observe() {
        const Render r = render_full(w_.bag, cfg().camera, true, cfg().style);
        obs_ = r.obs;
        if (method_ == Method::AnalyticPrimitives) {
            per_ = perceive_analytic(obs_, perimeter(), cfg().harris, cfg().canny);
        } else {
            per_ = perceive_masks(obs_, masks_from_paint(r.paint), perimeter(), cfg().min_handle_area);
        }
    }

    /// World grasp point under a pixel: halfway down a thin stack of cloth, or just under the top
    /// surface of a tall fold.
    Vec3 grasp_at(const Vec2& px) const {
        const Vec2 xy = obs_.camera.to_world(px);
        const int cx = static_cast<int>(std::lround(px.x())), cy = static_cast<int>(std::lround(px.y()));
        double top = 0.0;
        for (int y = cy - 1; y <= cy + 1; ++y)
            for (int x = cx - 1; x <= cx + 1; ++x)
                if (obs_.depth.in_bounds(x, y)) top = std::max(top, obs_.depth.at(x, y));
        return {xy.x(), xy.y(), std::max(0.5 * top, top - 0.01)};
    }

    /// Waits at least a fraction of `t` (a bag at rest in an unsettled pose has zero kinetic
    /// energy), then until quiescent or `t` has passed.
    void settle_for(double t, bool with_items = false) {
        std::span<ItemBody> items = with_items ? std::span<ItemBody>(w_.items) : std::span<ItemBody>();
        const double t_min = std::min(t, 0.2);
        settle(w_.bag, w_.att, w_.poses, t_min, 0.0, cfg().limits.dt, items);
        if (t > t_min) settle(w_.bag, w_.att, w_.poses, t - t_min, kDefaultKeEps, cfg().limits.dt, items);
    }

    void run_traj(const DualTrajectory& tr, bool with_items = false) {
        std::span<ItemBody> items = with_items ? std::span<ItemBody>(w_.items) : std::span<ItemBody>();
        execute(w_.bag, w_.att, w_.poses, tr, items, exec_opts());
    }

    void release_all() {
        for (auto g : {GripperId::Left, GripperId::Right})
            if (w_.att.has(g)) release(w_.bag, w_.att, g);
    }

    BottomSense bottom_under_grippers() const {
        return bag_bottom_height(obs_, cfg().bottom_fallback);
    }

    void enter_hold(bool forced) {
        res_.open_bag = opening_ok(true_opening(w_.bag), cfg().thresholds);
        ps_.phase = Phase::Hold;
        emit(forced ? "forced_lift" : "opening_ok", per_.opening);
    }

    void decide_and_act() {
        observe();
        if (ps_.phase == Phase::Open && w_.att.count() < 2) {
            emit("dropped", per_.opening);
            release_all();
            settle_for(cfg().settle_on_table);
            ps_.phase = Phase::Perceive;
            return;
        }
        ps_.last_metrics = per_.opening;
        const Decision d = decide(per_, ps_, method_);
        if (const auto* tr = std::get_if<Transition>(&d)) {
            if (tr->to == Phase::Hold) {
                enter_hold(tr->forced);
            } else {
                res_.failure = "action budget exhausted before a dual grasp";
                ps_.phase = Phase::Failed;
                emit("forced_lift", per_.opening, res_.failure);
            }
            return;
        }
        if (const auto* g = std::get_if<DualGrasp>(&d)) {
            dual_grasp(*g);
            return;
        }
        std::visit([this](const auto& c) { act(c); }, std::get<PrimitiveCommand>(d));
    }

    void dual_grasp(const DualGrasp& g) {
        ps_.phase = Phase::Grasp;
        const Vec3 gl = grasp_at(g.left_px), gr = grasp_at(g.right_px);
        try {
            run_traj(gen_grasp_lift(gl, gr, cfg().d_preset, cfg().hang_height, cfg().limits));
        } catch (const GraspMiss&) {
            release_all();
            ps_.phase = Phase::Perceive;
            emit("dual_grasp", per_.opening, "grasp miss");
            return;
        }
        settle_for(cfg().settle_after_grasp);
        ps_.d = cfg().d_preset;
        ps_.last_was_adjustment = false;
        ps_.phase = Phase::Open;
        emit("dual_grasp");
    }

    void act(const Shake& s) {
        const Vec3 grasp = grasp_at(s.grasp_point);
        std::string note;
        try {
            run_traj(gen_shake(s, grasp, w_.poses, cfg().limits));
        } catch (const GraspMiss&) {
            note = "grasp miss";
        }
        release_all();
        w_.poses[0] = park_pose(GripperId::Left);
        settle_for(cfg().settle_on_table);
        emit("shake", std::nullopt, note);
    }

    void act(const Recenter& r) {
        const Vec3 grasp = grasp_at(per_.nearest_centroid_px);
        std::string note;
        try {
            run_traj(gen_recenter(r, per_.bag_centroid, grasp, w_.poses, cfg().limits));
        } catch (const GraspMiss&) {
            note = "grasp miss";
        }
        release_all();
        w_.poses[0] = park_pose(GripperId::Left);
        settle_for(cfg().settle_on_table);
        emit("recenter", std::nullopt, note);
    }

    void act(const BagAdjustment& ba) {
        const DualTrajectory tr = gen_bag_adjustment(ba, w_.poses, w_.att, cfg().limits);
        run_traj(tr);
        ps_.d = tr.final_separation.value_or(ps_.d);
        settle_for(cfg().settle_after_primitive);
        emit("bag_adjustment");
    }

    void act(DualArmShaking das) {
        // The down-stroke ends with the bag bottom a clearance above the table.
        const BottomSense b = bottom_under_grippers();
        const double length = w_.poses[0].position.z() - b.height;
        das.H_prime = std::clamp(length + cfg().shake_clearance, 0.2, das.H - 0.1);
        run_traj(gen_dual_arm_shaking(das, w_.poses, w_.att, cfg().limits));
        settle_for(cfg().settle_after_primitive);
        emit("dual_arm_shaking", std::nullopt, b.ok ? "" : "bottom not sensed");
    }

    void act(const OneArmHolding&) { throw InvariantViolation("one-arm holding is not a decision"); }

    void hold() {
        observe();
        double h = w_.poses[0].position.z();
        std::string note = "release in the air";
        if (method_ != Method::ShakingBotH) {
            const BottomSense b = bottom_under_grippers();
            h = std::max(cfg().limits.lay_down_height, w_.poses[0].position.z() - b.height);
            note = b.ok ? "" : "bottom not sensed";
        }
        run_traj(gen_one_arm_holding(OneArmHolding{h}, w_.poses, w_.att, cfg().limits));
        settle_for(cfg().settle_after_hold);
        ps_.phase = Phase::Insert;
        emit("one_arm_holding", std::nullopt, note);
    }

    void insert() {
        observe();
        ps_.phase = Phase::Regrasp;
        if (items_.empty()) return;
        std::vector<Vec2> plan;
        try {
            if (!per_.rim_height) throw InvalidArgument("rim", "no rim observed");
            plan = insertion_plan(per_.rim_hull, items_.size());
        } catch (const InvalidArgument& e) {
            emit("insert", per_.opening, std::string("insertion infeasible: ") + e.what());
            return;
        }
        for (std::size_t k = 0; k < items_.size(); ++k) {
            ItemBody b;
            b.shape = items_[k].shape;
            b.radius = items_[k].radius;
            b.height = items_[k].height;
            b.mass = items_[k].mass;
            b.position = Vec3(plan[k].x(), plan[k].y(), *per_.rim_height + cfg().drop_height + b.half_height());
            w_.items.push_back(b);
        }
        settle_for(cfg().settle_items, true);
        res_.items_placed = 0;
        for (const auto& it : w_.items) res_.items_placed += inside_pocket(w_.bag, it.position) ? 1 : 0;
        emit("insert", per_.opening, std::to_string(res_.items_placed) + " placed");
    }

    void regrasp() {
        const Vec2 left_xy = w_.poses[0].position.head<2>();
        for (int attempt = 0; attempt < cfg().regrasp_retries; ++attempt) {
            observe();
            const Vec2* best = nullptr;
            double best_d = 0.05;
            for (const auto& px : per_.handles_px) {
                const double d = (obs_.camera.to_world(px) - left_xy).norm();
                if (d > best_d) {
                    best_d = d;
                    best = &px;
                }
            }
            if (best) {
                const Vec3 g = grasp_at(*best);
                try {
                    attach(w_.bag, w_.att, GripperId::Right, g, cfg().grasp_radius);
                    w_.poses[1].position = g;
                    w_.poses[1].pitch = -kPi / 2;
                    ps_.phase = Phase::Lift;
                    emit("regrasp");
                    return;
                } catch (const GraspMiss&) {
                }
            }
            emit("regrasp", std::nullopt, "no handle grasped");
            settle_for(cfg().settle_after_primitive, true);
        }
        res_.failure = "regrasp failed";
        ps_.phase = Phase::Failed;
    }

    void lift() {
        Vec3 mid = detail::midpoint(w_.poses);
        mid.z() = cfg().lift_height;
        TrajectoryBuilder b(w_.poses, cfg().limits.dt);
        b.move_to(detail::symmetric_pair(mid, cfg().d_preset, -kPi / 2, detail::side_sign(w_.poses)), cfg().limits.move_speed);
        run_traj(b.trajectory(), true);
        settle(w_.bag, w_.att, w_.poses, cfg().hold_time, 0.0, cfg().limits.dt, std::span<ItemBody>(w_.items));
        res_.bag_lifted = min_height(w_.bag) > 0.01;
        res_.items_lifted = 0;
        for (const auto& it : w_.items)
            res_.items_lifted += inside_pocket(w_.bag, it.position) && it.position.z() - it.half_height() > 0.02 ? 1 : 0;
        // Only items placed before the lift count.
        const bool eligible = res_.bag_lifted && res_.items_placed > 0;
        res_.full_success = eligible && res_.items_total > 0 && res_.items_lifted == res_.items_total;
        res_.partial_success = eligible && res_.items_lifted > 0;
        ps_.phase = Phase::Done;
        emit("lift", std::nullopt, std::to_string(res_.items_lifted) + " lifted");
    }

    World& w_;
    Method method_;
    std::vector<ItemSpec> items_;
    Logger log_;
    PolicyState ps_;
    EpisodeResult res_;
    Observation obs_;
    Perceived per_;
};

}  // namespace shakesim
