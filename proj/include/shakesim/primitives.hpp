#pragma once

// Action primitives as time-parameterized dual-gripper trajectories.
//
// Conventions: the two grippers hold the bag with their connecting axis along world x and the
// bag midplane at x = (xL + xR) / 2. Pitch is measured from the horizontal about the world x
// axis: -90 deg points straight down. Trajectories are sampled at the simulation rate.

#include "shakesim/bag_model.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

namespace shakesim {

struct BagAdjustment {
    double d = 0.30;
    double delta_d = 0.05;
    int k_s = 3;
    double l = 0.08;
    double f = 2.0;
    double d_min = 0.08;
};

struct DualArmShaking {
    double H = 1.4;
    double H_prime = 0.6;
    double v = 1.5;
};

struct OneArmHolding {
    double h = 0.5;
};

struct Shake {
    Vec2 grasp_point = Vec2::Zero();  // pixels
    double amplitude = 0.5;           // rad
    int cycles = 3;
};

struct Recenter {
    Vec2 target = Vec2::Zero();  // m
};

using PrimitiveCommand = std::variant<BagAdjustment, DualArmShaking, OneArmHolding, Shake, Recenter>;

inline const char* command_name(const PrimitiveCommand& c) {
    static constexpr const char* names[] = {"bag_adjustment", "dual_arm_shaking", "one_arm_holding", "shake", "recenter"};
    return names[c.index()];
}

inline void validate(const BagAdjustment& c) {
    if (!(c.d > 0.0)) throw InvalidArgument("d", "must be > 0");
    if (!(c.delta_d >= 0.0)) throw InvalidArgument("delta_d", "must be >= 0");
    if (c.k_s < 1) throw InvalidArgument("k_s", "must be >= 1");
    if (!(c.l >= 0.0)) throw InvalidArgument("l", "must be >= 0");
    if (!(c.f > 0.0)) throw InvalidArgument("f", "must be > 0");
    if (!(c.d_min > 0.0)) throw InvalidArgument("d_min", "must be > 0");
}

inline void validate(const DualArmShaking& c) {
    if (!(c.H_prime > 0.0)) throw InvalidArgument("H_prime", "must be > 0");
    if (!(c.H > c.H_prime)) throw InvalidArgument("H_prime", "must be below H");
    if (!(c.v > 0.0)) throw InvalidArgument("v", "must be > 0");
}

inline void validate(const OneArmHolding& c) {
    if (!(c.h >= 0.0)) throw InvalidArgument("h", "holding height below the table");
}

inline void validate(const Shake& c) {
    if (!(c.amplitude >= 0.0)) throw InvalidArgument("amplitude", "must be >= 0");
    if (c.cycles < 0) throw InvalidArgument("cycles", "must be >= 0");
}

/// Speeds and fixed heights shared by all generators.
struct MotionLimits {
    double v_max = 1.5;           // global gripper speed limit, m/s
    double reach = 1.6;           // highest reachable gripper height, m
    double move_speed = 0.3;      // quasi-static moves
    double free_speed = 1.0;      // moves of an empty gripper
    double drag_speed = 0.15;     // Recenter drag along the table
    double shake_height = 0.4;
    double shake_frequency = 1.5; // wrist oscillation, Hz
    double lay_down_height = 0.06;
    double park_distance = 0.35;
    double recenter_tolerance = 0.02;
    double dt = kDefaultDt;
    Workspace workspace;
};

enum class EventKind : std::uint8_t { Attach, Release };

struct TrajEvent {
    double t = 0.0;
    EventKind kind = EventKind::Attach;
    GripperId gripper = GripperId::Left;
};

struct TrajSample {
    double t = 0.0;
    GripperPoses poses;
};

struct DualTrajectory {
    std::vector<TrajSample> samples;
    std::vector<TrajEvent> events;
    double duration = 0.0;
    // Bag Adjustment bookkeeping.
    std::optional<double> final_separation;
    bool distance_phase_executed = false;

    [[nodiscard]] bool empty() const { return samples.empty(); }
};

/// Appends segments to a trajectory, one sample per `dt` plus an exact endpoint.
class TrajectoryBuilder {
public:
    TrajectoryBuilder(const GripperPoses& start, double dt) : dt_(dt), cur_(start) {
        if (!(dt > 0.0)) throw InvalidArgument("dt", "must be > 0");
        traj_.samples.push_back({0.0, start});
    }

    [[nodiscard]] const GripperPoses& current() const { return cur_; }
    [[nodiscard]] double now() const { return traj_.duration; }
    DualTrajectory& trajectory() { return traj_; }

    /// Generic segment: `fn(s)` gives the poses at normalized time s in (0, 1].
    void segment(double duration, const std::function<GripperPoses(double)>& fn) {
        if (duration <= 0.0) return;
        const double t0 = traj_.duration;
        const auto n = static_cast<long>(std::ceil(duration / dt_ - 1e-9));
        for (long k = 1; k <= n; ++k) {
            const double tk = std::min(k * dt_, duration);
            if (k == n) {
                cur_ = fn(1.0);
                traj_.samples.push_back({t0 + duration, cur_});
            } else {
                traj_.samples.push_back({t0 + tk, fn(tk / duration)});
            }
        }
        traj_.duration = t0 + duration;
    }

    /// Straight-line move of both grippers at constant velocity; pitch interpolates linearly.
    void move_to(const GripperPoses& target, double speed) {
        const double dist = std::max((target[0].position - cur_[0].position).norm(), (target[1].position - cur_[1].position).norm());
        if (dist < 1e-12) {
            cur_ = target;
            if (!traj_.samples.empty()) traj_.samples.back().poses = target;
            return;
        }
        move_for(target, dist / speed);
    }

    void move_for(const GripperPoses& target, double duration) {
        const GripperPoses from = cur_;
        segment(duration, [&](double s) {
            GripperPoses p;
            for (std::size_t g = 0; g < 2; ++g) {
                p[g].position = from[g].position + s * (target[g].position - from[g].position);
                p[g].pitch = from[g].pitch + s * (target[g].pitch - from[g].pitch);
            }
            return p;
        });
    }

    void hold(double duration) {
        const GripperPoses p = cur_;
        segment(duration, [&](double) { return p; });
    }

    void event(EventKind kind, GripperId g) { traj_.events.push_back({traj_.duration, kind, g}); }

private:
    double dt_;
    GripperPoses cur_;
    DualTrajectory traj_;
};

namespace detail {

inline const GripperPose& left(const GripperPoses& p) { return p[0]; }
inline const GripperPose& right(const GripperPoses& p) { return p[1]; }

inline void require_symmetric(const GripperPoses& p) {
    const Vec3 d = right(p).position - left(p).position;
    if (std::abs(d.y()) > 0.01 || std::abs(d.z()) > 0.01)
        throw InvalidArgument("gripper_poses", "grippers must be symmetric about the bag midplane within 1 cm");
}

inline double separation(const GripperPoses& p) { return std::abs(right(p).position.x() - left(p).position.x()); }

/// Places both grippers symmetrically about `mid` along x with the given separation.
inline GripperPoses symmetric_pair(const Vec3& mid, double sep, double pitch, double sign) {
    GripperPoses p;
    p[0].position = mid - Vec3(0.5 * sep * sign, 0.0, 0.0);
    p[1].position = mid + Vec3(0.5 * sep * sign, 0.0, 0.0);
    p[0].pitch = p[1].pitch = pitch;
    return p;
}

inline double side_sign(const GripperPoses& p) { return right(p).position.x() >= left(p).position.x() ? 1.0 : -1.0; }

inline Vec3 midpoint(const GripperPoses& p) { return 0.5 * (left(p).position + right(p).position); }

}  // namespace detail

/// Largest sample-to-sample gripper speed in the trajectory.
inline double max_speed(const DualTrajectory& tr) {
    double vmax = 0.0;
    for (std::size_t k = 1; k < tr.samples.size(); ++k) {
        const double dt = tr.samples[k].t - tr.samples[k - 1].t;
        for (std::size_t g = 0; g < 2; ++g)
            vmax = std::max(vmax, (tr.samples[k].poses[g].position - tr.samples[k - 1].poses[g].position).norm() / dt);
    }
    return vmax;
}

/// Checks time ordering, finiteness and the speed limit.
inline void check_trajectory(const DualTrajectory& tr, double v_max) {
    for (std::size_t k = 0; k < tr.samples.size(); ++k) {
        for (const auto& p : tr.samples[k].poses)
            if (!all_finite(p.position) || !std::isfinite(p.pitch)) throw InvariantViolation("trajectory has a non-finite pose");
        if (k > 0 && !(tr.samples[k].t > tr.samples[k - 1].t)) throw InvariantViolation("trajectory times are not strictly increasing");
    }
    if (max_speed(tr) > v_max * (1.0 + 1e-9)) throw InvalidArgument("v_max", "trajectory exceeds the gripper speed limit");
}

/// Bag Adjustment: narrow the grippers by delta_d (unless that would go below d_min), then
/// k_s in-phase sinusoidal swings of half-length l perpendicular to the gripper axis.
inline DualTrajectory gen_bag_adjustment(const BagAdjustment& cmd, const GripperPoses& current, const AttachmentSet& att,
                                         const MotionLimits& lim = {}) {
    validate(cmd);
    if (!att.has(GripperId::Left) || !att.has(GripperId::Right))
        throw InvalidArgument("attachments", "bag adjustment needs both grippers attached");
    detail::require_symmetric(current);
    const double sign = detail::side_sign(current);
    const Vec3 mid = detail::midpoint(current);
    const double pitch = current[0].pitch;

    TrajectoryBuilder b(current, lim.dt);
    const double target = cmd.d - cmd.delta_d;
    const bool execute = target >= cmd.d_min && cmd.delta_d > 0.0;
    if (execute) b.move_to(detail::symmetric_pair(mid, target, pitch, sign), lim.move_speed);
    else b.move_to(detail::symmetric_pair(mid, detail::separation(current), pitch, sign), lim.move_speed);

    const GripperPoses base = b.current();
    const double omega = 2.0 * kPi * cmd.f;
    if (omega * cmd.l > lim.v_max) throw InvalidArgument("l", "swing peak speed exceeds v_max");
    b.segment(cmd.k_s / cmd.f, [&, base](double s) {
        const double t = s * cmd.k_s / cmd.f;
        const double off = cmd.l * std::sin(omega * t);
        GripperPoses p = base;
        p[0].position.y() += off;
        p[1].position.y() += off;
        return p;
    });
    // Pin the last sample exactly to the swing's zero crossing.
    b.trajectory().samples.back().poses = base;

    DualTrajectory tr = std::move(b.trajectory());
    tr.distance_phase_executed = execute;
    tr.final_separation = execute ? target : cmd.d;
    check_trajectory(tr, lim.v_max);
    return tr;
}

/// Dual-arm Shaking: one up-stroke to H and one down-stroke to H' at speed v. Pitch goes
/// linearly in path length from -90 deg to +45 deg at the apex and back.
inline DualTrajectory gen_dual_arm_shaking(const DualArmShaking& cmd, const GripperPoses& current, const AttachmentSet& att,
                                           const MotionLimits& lim = {}) {
    validate(cmd);
    if (cmd.H > lim.reach) throw InvalidArgument("reach", "H exceeds the reach limit of " + std::to_string(lim.reach) + " m");
    if (cmd.v > lim.v_max) throw InvalidArgument("v_max", "shaking speed exceeds the gripper speed limit");
    if (!att.has(GripperId::Left) || !att.has(GripperId::Right))
        throw InvalidArgument("attachments", "dual-arm shaking needs both grippers attached");
    detail::require_symmetric(current);

    constexpr double down = -kPi / 2;
    const double apex_pitch = deg2rad(45.0);
    TrajectoryBuilder b(current, lim.dt);
    GripperPoses apex = current;
    for (auto& p : apex) {
        p.position.z() = cmd.H;
        p.pitch = apex_pitch;
    }
    b.move_to(apex, cmd.v);
    GripperPoses bottom = apex;
    for (auto& p : bottom) {
        p.position.z() = cmd.H_prime;
        p.pitch = down;
    }
    b.move_to(bottom, cmd.v);
    DualTrajectory tr = std::move(b.trajectory());
    check_trajectory(tr, lim.v_max);
    return tr;
}

/// One-arm Holding: lower both grippers to height h, release the right handle, park the right
/// gripper away from the bag. The left gripper keeps holding.
inline DualTrajectory gen_one_arm_holding(const OneArmHolding& cmd, const GripperPoses& current, const AttachmentSet& att,
                                          const MotionLimits& lim = {}) {
    validate(cmd);
    if (!att.has(GripperId::Left) || !att.has(GripperId::Right))
        throw InvalidArgument("attachments", "one-arm holding needs both grippers attached");
    TrajectoryBuilder b(current, lim.dt);
    GripperPoses low = current;
    for (auto& p : low) p.position.z() = cmd.h;
    b.move_to(low, lim.move_speed);
    b.event(EventKind::Release, GripperId::Right);
    const double sign = detail::side_sign(current);
    GripperPoses parked = b.current();
    const double lateral = 0.6 * lim.park_distance, up = 0.8 * lim.park_distance;
    parked[1].position += Vec3(sign * lateral, 0.0, up);
    b.move_to(parked, lim.free_speed);
    DualTrajectory tr = std::move(b.trajectory());
    check_trajectory(tr, lim.v_max);
    return tr;
}

/// Parked pose for an idle gripper: well above the table, out of the camera's way.
inline GripperPose park_pose(GripperId g) {
    GripperPose p;
    p.position = Vec3(g == GripperId::Left ? -0.6 : 0.6, 0.45, 0.8);
    return p;
}

/// Shake with the left gripper, which grasps at `grasp` at t = 0: lift to the shake height,
/// `cycles` wrist oscillations of +-amplitude, lower and release.
inline DualTrajectory gen_shake(const Shake& cmd, const Vec3& grasp, const GripperPoses& current, const MotionLimits& lim = {}) {
    validate(cmd);
    if (!all_finite(grasp)) throw InvalidArgument("grasp_point", "must be finite");
    GripperPoses start = current;
    start[0].position = grasp;
    start[0].pitch = -kPi / 2;
    TrajectoryBuilder b(start, lim.dt);
    b.event(EventKind::Attach, GripperId::Left);
    GripperPoses up = start;
    up[0].position.z() = lim.shake_height;
    b.move_to(up, lim.move_speed);
    if (cmd.cycles > 0) {
        const GripperPoses base = b.current();
        const double period = 1.0 / lim.shake_frequency;
        b.segment(cmd.cycles * period, [&, base](double s) {
            GripperPoses p = base;
            p[0].pitch = base[0].pitch + cmd.amplitude * std::sin(2.0 * kPi * cmd.cycles * s);
            return p;
        });
        b.trajectory().samples.back().poses = base;
    }
    GripperPoses low = b.current();
    low[0].position.z() = std::max(lim.lay_down_height, grasp.z());
    b.move_to(low, lim.move_speed);
    b.event(EventKind::Release, GripperId::Left);
    DualTrajectory tr = std::move(b.trajectory());
    check_trajectory(tr, lim.v_max);
    return tr;
}

/// Recenter with the left gripper: grasp at `grasp` (the bag point nearest to the centroid),
/// drag along the table by (target - centroid), release and lift clear. Returns an empty
/// trajectory when the centroid is already within tolerance.
inline DualTrajectory gen_recenter(const Recenter& cmd, const Vec2& bag_centroid, const Vec3& grasp, const GripperPoses& current,
                                   const MotionLimits& lim = {}) {
    if (!lim.workspace.contains(cmd.target)) throw InvalidArgument("target", "outside the workspace");
    const Vec2 delta = cmd.target - bag_centroid;
    if (delta.norm() <= lim.recenter_tolerance) return {};
    GripperPoses start = current;
    start[0].position = grasp;
    start[0].pitch = -kPi / 2;
    TrajectoryBuilder b(start, lim.dt);
    b.event(EventKind::Attach, GripperId::Left);
    GripperPoses raised = start;
    raised[0].position.z() += 0.02;
    b.move_to(raised, lim.move_speed);
    GripperPoses moved = raised;
    moved[0].position += Vec3(delta.x(), delta.y(), 0.0);
    b.move_to(moved, lim.drag_speed);
    b.event(EventKind::Release, GripperId::Left);
    GripperPoses clear = moved;
    clear[0].position.z() += 0.15;
    b.move_to(clear, lim.move_speed);
    DualTrajectory tr = std::move(b.trajectory());
    check_trajectory(tr, lim.v_max);
    return tr;
}

/// Grasp both handles at t = 0 and lift them to the hanging pose: separation `d` along x,
/// centered over the grasp midpoint, at height `lift_height`.
inline DualTrajectory gen_grasp_lift(const Vec3& grasp_left, const Vec3& grasp_right, double d, double lift_height,
                                     const MotionLimits& lim = {}) {
    if (!(d > 0.0)) throw InvalidArgument("d", "must be > 0");
    if (!(lift_height > 0.0) || lift_height > lim.reach) throw InvalidArgument("lift_height", "must lie in (0, reach]");
    GripperPoses start;
    start[0].position = grasp_left;
    start[1].position = grasp_right;
    TrajectoryBuilder b(start, lim.dt);
    b.event(EventKind::Attach, GripperId::Left);
    b.event(EventKind::Attach, GripperId::Right);
    Vec3 mid = 0.5 * (grasp_left + grasp_right);
    mid.z() = lift_height;
    const double sign = grasp_right.x() >= grasp_left.x() ? 1.0 : -1.0;
    b.move_to(detail::symmetric_pair(mid, d, -kPi / 2, sign), lim.move_speed);
    DualTrajectory tr = std::move(b.trajectory());
    check_trajectory(tr, lim.v_max);
    return tr;
}

/// Linear interpolation between the bracketing samples.
inline GripperPoses sample(const DualTrajectory& tr, double t) {
    if (tr.samples.empty()) throw InvalidArgument("t", "empty trajectory");
    if (!(t >= 0.0 && t <= tr.duration + 1e-12)) throw InvalidArgument("t", "outside [0, duration]");
    const auto& s = tr.samples;
    auto it = std::lower_bound(s.begin(), s.end(), t, [](const TrajSample& a, double v) { return a.t < v; });
    if (it == s.begin()) return s.front().poses;
    if (it == s.end()) return s.back().poses;
    const TrajSample& hi = *it;
    const TrajSample& lo = *(it - 1);
    const double a = (t - lo.t) / (hi.t - lo.t);
    GripperPoses p;
    for (std::size_t g = 0; g < 2; ++g) {
        p[g].position = lo.poses[g].position + a * (hi.poses[g].position - lo.poses[g].position);
        p[g].pitch = lo.poses[g].pitch + a * (hi.poses[g].pitch - lo.poses[g].pitch);
    }
    return p;
}

/// CSV with header t,xL,yL,zL,pitchL,xR,yR,zR,pitchR.
inline void write_trajectory_csv(std::ostream& os, const DualTrajectory& tr) {
    os << "t,xL,yL,zL,pitchL,xR,yR,zR,pitchR\n";
    os.precision(10);
    for (const auto& s : tr.samples) {
        os << s.t;
        for (const auto& p : s.poses) os << ',' << p.position.x() << ',' << p.position.y() << ',' << p.position.z() << ',' << p.pitch;
        os << '\n';
    }
}

/// Plays a trajectory through the simulator one sample interval at a time, applying attach
/// and release events at their timestamps. Attach events grasp at the gripper's pose with
/// `grasp_radius`. `on_step` runs after each step.
struct ExecuteOptions {
    double grasp_radius = 0.02;
    std::function<void(const BagState&, const GripperPoses&)> on_step;
};

inline void execute(BagState& st, AttachmentSet& att, GripperPoses& poses, const DualTrajectory& tr, std::span<ItemBody> items = {},
                    const ExecuteOptions& opt = {}) {
    if (tr.empty()) return;
    std::size_t next_event = 0;
    auto fire_events = [&](double t) {
        while (next_event < tr.events.size() && tr.events[next_event].t <= t + 1e-9) {
            const TrajEvent& e = tr.events[next_event++];
            if (e.kind == EventKind::Attach) attach(st, att, e.gripper, poses[static_cast<std::size_t>(e.gripper)].position, opt.grasp_radius);
            else release(st, att, e.gripper);
        }
    };
    poses = tr.samples.front().poses;
    fire_events(0.0);
    for (std::size_t k = 1; k < tr.samples.size(); ++k) {
        const double h = tr.samples[k].t - tr.samples[k - 1].t;
        step(st, att, tr.samples[k].poses, h, items);
        poses = tr.samples[k].poses;
        if (opt.on_step) opt.on_step(st, poses);
        fire_events(tr.samples[k].t);
    }
}

}  // namespace shakesim
