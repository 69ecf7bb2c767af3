#pragma once

// Trial harness: tiered initial bag states, seeded trials, suite aggregation, config loading and
// result tables.

#include "shakesim/policy.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace shakesim {

// ---------------------------------------------------------------------------------------------
// Tier generator

struct TierParams {
    double jitter_mild = 0.01;    // m, smooth per-layer height noise for tier 1
    double jitter_strong = 0.02;  // m, tiers 2 and 3
    double max_offset = 0.25;     // m, bag center offset from the workspace center
    double open_min = 0.30;       // a_ch boundary between tier 1 and tier 2
    int retries = 20;
};

namespace detail {

/// Smooth height noise: |sum of four random plane waves| over the rest coordinates, drawn
/// independently for each layer so the two rim layers do not coincide.
inline void crumple(BagState& st, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> N(0.0, 1.0);
    const auto& topo = *st.topology;
    for (int layer = 0; layer < 2; ++layer) {
        double a[4], kx[4], ky[4], ph[4];
        for (int k = 0; k < 4; ++k) {
            a[k] = N(rng) * sigma;
            kx[k] = N(rng) * 15.0;
            ky[k] = N(rng) * 15.0;
            ph[k] = N(rng) * 3.0;
        }
        for (std::size_t i = 0; i < st.size(); ++i) {
            if (topo.layer_of[i] != layer) continue;
            const Vec2& uv = topo.rest_uv[i];
            double dz = 0.0;
            for (int k = 0; k < 4; ++k) dz += a[k] * std::sin(kx[k] * uv.x() + ky[k] * uv.y() + ph[k]);
            st.positions[i].z() += std::abs(dz);
        }
    }
}

/// Folds every particle on the `n` side of the line through `h` back over the rest of the bag,
/// wrapping around a crease of radius large enough to clear the stack underneath.
inline void fold(BagState& st, const Vec2& h, const Vec2& n) {
    const double zb = st.physics.particle_radius;
    double emax = 0.0;
    for (const auto& p : st.positions) emax = std::max(emax, p.z() - zb);
    const double rho = emax + 0.01;
    for (auto& p : st.positions) {
        const double u = (p.head<2>() - h).dot(n);
        if (u <= 0.0) continue;
        const double e = p.z() - zb;
        const Vec2 base = p.head<2>() - u * n;
        double un = 0.0, zn = 0.0;
        if (u <= kPi * rho) {
            const double phi = u / rho, r = rho - e;
            un = r * std::sin(phi);
            zn = zb + rho - r * std::cos(phi);
        } else {
            un = -(u - kPi * rho);
            zn = zb + 2.0 * rho - e;
        }
        p.head<2>() = base + un * n;
        p.z() = zn;
    }
}

/// Tilts the front rim flap up and back about a hinge `hinge` below the rim. The angle follows a
/// half-sine across the columns between the handle tabs.
inline void open_flap(BagState& st, double hinge, double alpha) {
    const auto& topo = *st.topology;
    const double rim_v = (topo.ny - 1) * topo.dy;
    const double v0 = rim_v - hinge;
    const int lo = topo.tab_cols, hi = topo.nx - topo.tab_cols - 1;
    for (std::size_t i = 0; i < st.size(); ++i) {
        if (topo.layer_of[i] != 1) continue;
        const Vec2& uv = topo.rest_uv[i];
        const int col = static_cast<int>(std::lround(uv.x() / topo.dx));
        if (col < lo || col > hi || uv.y() <= v0 || uv.y() > rim_v + 1e-9) continue;
        const double a = alpha * std::sin(kPi * (col - lo + 1) / static_cast<double>(hi - lo + 2));
        const double u = uv.y() - v0;
        Vec3& p = st.positions[i];
        p.y() += -u + u * std::cos(a);
        p.z() += u * std::sin(a);
    }
}

inline void place(BagState& st, double yaw, const Vec2& offset) {
    const Eigen::Rotation2Dd R(yaw);
    for (auto& p : st.positions) p.head<2>() = R * Vec2(p.head<2>()) + offset;
}

inline std::size_t handle_components(const BagState& st) {
    return connected_components(oracle_masks(st, Camera{}).handle()).size();
}

}  // namespace detail

/// Scripted, seeded initial state of the given difficulty tier. The state is geometric and at
/// rest but not settled: the bag has no self-collision, so settling would flatten every fold
/// into the table plane. Folds are kept as creases (see `set_crease_memory`).
/// Tier 1: mild crumple and the front rim flap folded back (opening at least `open_min`).
/// Tier 2: strong crumple and two bottom-corner folds (opening below `open_min`).
/// Tier 3: strong crumple and the bottom of the bag folded up over the handles (at most one
/// handle visible).
inline BagState gen_tier(int tier, const BagSpec& spec, std::uint64_t seed, const PhysicsParams& physics = {}, const TierParams& tp = {}) {
    if (tier < 1 || tier > 3) throw InvalidArgument("tier", "must be 1, 2 or 3");
    spec.validate();
    for (int attempt = 0; attempt < tp.retries; ++attempt) {
        std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(attempt) + 100u * static_cast<std::uint64_t>(tier)));
        std::uniform_real_distribution<double> U(0.0, 1.0);
        BagState st = new_bag(spec, seed, physics);
        const double w = spec.width, hgt = spec.height;
        const Vec2 corner(-0.5 * w, -0.5 * hgt);  // bag bottom-left in the flat layout
        if (tier == 1) {
            // Wrinkles set creases; the flap is held open elastically, as if opened by hand.
            const double hinge = 0.06 + 0.06 * U(rng), alpha = deg2rad(100.0 + 60.0 * U(rng));
            detail::crumple(st, tp.jitter_mild, rng);
            set_crease_memory(st);
            detail::open_flap(st, hinge, alpha);
        } else if (tier == 2) {
            detail::crumple(st, tp.jitter_strong, rng);
            for (int side = 0; side < 2; ++side) {
                const double c = 0.06 + 0.06 * U(rng);
                const double sx = side == 0 ? 1.0 : -1.0;
                const Vec2 cpt(side == 0 ? corner.x() : -corner.x(), corner.y());
                const Vec2 n = Vec2(-sx, -1.0).normalized();
                detail::fold(st, cpt + Vec2(sx * c, 0.0), n);
            }
        } else {
            detail::crumple(st, tp.jitter_strong, rng);
            const double tab_top = 0.5 * hgt + spec.handle_height;
            const double theta = deg2rad(-12.0 + 24.0 * U(rng));
            double emax = 0.0;
            for (const auto& p : st.positions) emax = std::max(emax, p.z() - physics.particle_radius);
            const double rho = emax + 0.01;
            // Reach of the folded edge past the hinge is (distance to the bottom) - pi rho.
            const double margin = 0.01 + 0.04 * U(rng);
            const double vh = 0.5 * (tab_top + margin - corner.y() + kPi * rho) + corner.y();
            detail::fold(st, Vec2(0.0, vh), Vec2(std::sin(theta), -std::cos(theta)));
        }
        const double yaw = -kPi + 2.0 * kPi * U(rng);
        const double r = tp.max_offset * std::sqrt(U(rng)), phi = 2.0 * kPi * U(rng);
        detail::place(st, yaw, Vec2(r * std::cos(phi), r * std::sin(phi)));
        if (tier != 1) set_crease_memory(st);

        const std::size_t handles = detail::handle_components(st);
        const double a = true_opening(st).a_ch;
        const bool ok = tier == 1 ? handles == 2 && a >= tp.open_min : tier == 2 ? handles == 2 && a < tp.open_min : handles <= 1;
        if (ok) return st;
    }
    throw GenerationFailure("tier " + std::to_string(tier) + " predicate not met in " + std::to_string(tp.retries) +
                            " attempts for seed " + std::to_string(seed));
}

// ---------------------------------------------------------------------------------------------
// Trials

inline std::vector<ItemSpec> default_items() {
    ItemSpec cyl;
    cyl.shape = ItemShape::Cylinder;
    cyl.radius = 0.015;
    cyl.height = 0.05;
    cyl.mass = 0.005;
    ItemSpec ball;
    ball.shape = ItemShape::Sphere;
    ball.radius = 0.018;
    ball.mass = 0.005;
    return {cyl, ball};
}

inline BagSpec default_trial_bag() {
    BagSpec b;
    b.resolution = 12;
    return b;
}

struct TrialConfig {
    Method method = Method::ShakingBot;
    int tier = 1;
    BagSpec bag = default_trial_bag();
    PhysicsParams physics;
    std::vector<ItemSpec> items = default_items();
    PolicyConfig policy;
    TierParams tiers;
    std::uint64_t seed = 0;

    void validate() const {
        if (tier < 1 || tier > 3) throw InvalidArgument("tier", "must be 1, 2 or 3");
        if (items.empty()) throw InvalidArgument("items", "need at least one item");
        bag.validate();
        for (const auto& it : items) it.validate();
        policy.validate();
    }
};

struct TrialRecord {
    Method method = Method::ShakingBot;
    int tier = 1;
    std::uint64_t seed = 0;
    bool open_bag = false;
    int placed = 0;
    bool partial = false;
    bool full = false;
    int actions = 0;
    double sim_time = 0.0;
    bool forced = false;
    bool failed = false;
    std::string failure;
    std::vector<PolicyEvent> trace;
};

inline nlohmann::json metrics_json(const std::optional<OpeningMetrics>& m) {
    if (!m) return nullptr;
    nlohmann::json j{{"a_ch", m->a_ch}, {"e_ch", m->e_ch}, {"degenerate", m->degenerate}};
    if (m->rim_separation) j["rim_separation"] = *m->rim_separation;
    return j;
}

inline nlohmann::json to_json(const PolicyEvent& e) {
    return {{"t", e.t},           {"phase", to_string(e.phase)}, {"action", e.action}, {"actions_used", e.actions_used},
            {"estimated", metrics_json(e.estimated)}, {"truth", metrics_json(e.truth)}, {"note", e.note}};
}

inline nlohmann::json to_json(const TrialRecord& r) {
    return {{"method", to_string(r.method)}, {"tier", r.tier},         {"seed", r.seed},         {"open_bag", r.open_bag},
            {"placed", r.placed},            {"partial", r.partial},   {"full", r.full},         {"actions", r.actions},
            {"sim_time", r.sim_time},        {"forced", r.forced},     {"failed", r.failed},     {"failure", r.failure}};
}

/// Builds the scene, runs the method to completion or forced lift and judges the outcome. A
/// diverging simulation yields a failed record rather than an exception.
inline TrialRecord run_trial(const TrialConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    TrialRecord rec;
    rec.method = cfg.method;
    rec.tier = cfg.tier;
    rec.seed = cfg.seed;
    auto write = [&](const nlohmann::json& j) {
        if (log) *log << j.dump() << '\n';
    };
    try {
        World w{gen_tier(cfg.tier, cfg.bag, cfg.seed, cfg.physics, cfg.tiers), {}, {park_pose(GripperId::Left), park_pose(GripperId::Right)}, {}};
        Episode ep(w, cfg.method, cfg.policy, cfg.items, [&](const PolicyEvent& e) {
            rec.trace.push_back(e);
            nlohmann::json j = to_json(e);
            j["seed"] = cfg.seed;
            write(j);
        });
        const EpisodeResult r = ep.run();
        rec.open_bag = r.open_bag;
        rec.placed = r.items_placed;
        rec.partial = r.partial_success;
        rec.full = r.full_success;
        rec.actions = r.actions;
        rec.sim_time = r.time;
        rec.forced = r.forced;
        rec.failure = r.failure;
        rec.failed = !r.failure.empty();
    } catch (const SimulationDiverged& e) {
        rec.failed = true;
        rec.failure = e.what();
    } catch (const GenerationFailure& e) {
        rec.failed = true;
        rec.failure = e.what();
    }
    if (rec.full && !rec.partial) throw InvariantViolation("full success without partial success");
    if (rec.partial && rec.placed < 1) throw InvariantViolation("partial success without a placed item");
    if (rec.actions > cfg.policy.T) throw InvariantViolation("action budget exceeded");
    write({{"record", to_json(rec)}});
    return rec;
}

// ---------------------------------------------------------------------------------------------
// Mechanism experiments

/// Handle particle closest to the centroid of its label, as an oracle grasp point.
inline Vec3 handle_grasp_point(const BagState& st, Label handle) {
    Vec3 c = Vec3::Zero();
    int n = 0;
    for (std::size_t i = 0; i < st.size(); ++i)
        if (st.labels()[i] == handle) {
            c += st.positions[i];
            ++n;
        }
    if (n == 0) throw InvalidArgument("handle", "bag has no particles with this label");
    c /= n;
    Vec3 best = c;
    double bd = 1e300;
    for (std::size_t i = 0; i < st.size(); ++i)
        if (st.labels()[i] == handle && (st.positions[i] - c).squaredNorm() < bd) {
            bd = (st.positions[i] - c).squaredNorm();
            best = st.positions[i];
        }
    return best;
}

/// A tier bag with both handles grasped at their oracle points, lifted to the hang height at
/// the preset separation and left to settle.
inline World rig_dual_hold(int tier, std::uint64_t seed, const BagSpec& spec, const PhysicsParams& physics, const PolicyConfig& pc,
                           const TierParams& tp = {}) {
    World w{gen_tier(tier, spec, seed, physics, tp), {}, {park_pose(GripperId::Left), park_pose(GripperId::Right)}, {}};
    Vec3 gl = handle_grasp_point(w.bag, Label::HandleL), gr = handle_grasp_point(w.bag, Label::HandleR);
    if (gl.x() > gr.x()) std::swap(gl, gr);
    execute(w.bag, w.att, w.poses, gen_grasp_lift(gl, gr, pc.d_preset, pc.hang_height, pc.limits), {}, {pc.grasp_radius, {}});
    settle(w.bag, w.att, w.poses, pc.settle_after_grasp, 0.0, pc.limits.dt);
    return w;
}

struct PairedSample {
    std::uint64_t seed = 0;
    double before = 0.0;
    double after = 0.0;
};

/// One Dual-arm Shaking stroke at speed `v` on the rig from `seed`, then a fixed settle. Returns
/// the true a_ch after the stroke. The stroke path is the same for every speed.
inline double shaking_stroke_a_ch(std::uint64_t seed, double v, const BagSpec& spec, const PolicyConfig& pc, int tier = 2) {
    World w = rig_dual_hold(tier, seed, spec, {}, pc);
    DualArmShaking das = pc.shaking;
    das.v = v;
    MotionLimits lim = pc.limits;
    execute(w.bag, w.att, w.poses, gen_dual_arm_shaking(das, w.poses, w.att, lim), {}, {pc.grasp_radius, {}});
    settle(w.bag, w.att, w.poses, pc.settle_after_primitive, 0.0, lim.dt);
    return true_opening(w.bag).a_ch;
}

/// Rim separation of the rig from `seed` before and after one Bag Adjustment.
inline PairedSample bag_adjustment_separation(std::uint64_t seed, const BagSpec& spec, const PolicyConfig& pc, int tier = 2) {
    World w = rig_dual_hold(tier, seed, spec, {}, pc);
    // Same rest period on both sides of the pair.
    settle(w.bag, w.att, w.poses, pc.settle_after_primitive, 0.0, pc.limits.dt);
    PairedSample s;
    s.seed = seed;
    s.before = true_opening(w.bag).rim_separation.value_or(0.0);
    BagAdjustment ba = pc.bag_adjustment;
    ba.d = pc.d_preset;
    execute(w.bag, w.att, w.poses, gen_bag_adjustment(ba, w.poses, w.att, pc.limits), {}, {pc.grasp_radius, {}});
    settle(w.bag, w.att, w.poses, pc.settle_after_primitive, 0.0, pc.limits.dt);
    s.after = true_opening(w.bag).rim_separation.value_or(0.0);
    return s;
}

// ---------------------------------------------------------------------------------------------
// Suites and tables

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for fewer than two values
};

inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd m;
    if (v.empty()) return m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    if (v.size() < 2) return m;
    double s = 0.0;
    for (double x : v) s += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(s / static_cast<double>(v.size() - 1));
    return m;
}

struct CellSummary {
    Method method = Method::ShakingBot;
    int tier = 1;
    int n = 0;
    int open_bag = 0;
    MeanStd placed;
    int partial = 0;
    int full = 0;
    MeanStd actions;
    MeanStd time;
    int failed = 0;
};

inline CellSummary summarize(std::vector<TrialRecord> recs) {
    if (recs.empty()) throw InvalidArgument("records", "cannot summarize an empty cell");
    std::sort(recs.begin(), recs.end(), [](const TrialRecord& a, const TrialRecord& b) { return a.seed < b.seed; });
    CellSummary c;
    c.method = recs.front().method;
    c.tier = recs.front().tier;
    c.n = static_cast<int>(recs.size());
    std::vector<double> placed, actions, time;
    for (const auto& r : recs) {
        c.open_bag += r.open_bag;
        c.partial += r.partial;
        c.full += r.full;
        c.failed += r.failed;
        placed.push_back(r.placed);
        actions.push_back(r.actions);
        time.push_back(r.sim_time);
    }
    c.placed = mean_std(placed);
    c.actions = mean_std(actions);
    c.time = mean_std(time);
    return c;
}

struct SuiteResult {
    std::vector<CellSummary> cells;
    std::vector<std::vector<TrialRecord>> records;  // parallel to `cells`
};

/// Runs seeds 0..trials-1 for every cell; each cell's own seed field is ignored. `log_for`
/// may return a stream for a cell's line-delimited log, or null.
inline SuiteResult run_suite(const std::vector<TrialConfig>& cells, int trials,
                             const std::function<std::ostream*(const TrialConfig&)>& log_for = {},
                             const std::function<void(const TrialRecord&)>& progress = {}) {
    if (trials < 1) throw InvalidArgument("trials", "must be >= 1");
    SuiteResult out;
    for (const auto& base : cells) {
        std::vector<TrialRecord> recs;
        std::ostream* log = log_for ? log_for(base) : nullptr;
        for (int s = 0; s < trials; ++s) {
            TrialConfig cfg = base;
            cfg.seed = static_cast<std::uint64_t>(s);
            recs.push_back(run_trial(cfg, log));
            if (progress) progress(recs.back());
        }
        out.cells.push_back(summarize(recs));
        out.records.push_back(std::move(recs));
    }
    return out;
}

inline std::string fmt_ratio(int x, int n) { return std::to_string(x) + "/" + std::to_string(n); }

inline std::string fmt_mean_std(const MeanStd& m, int precision = 1) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << m.mean << "±" << m.std;
    return os.str();
}

inline const std::vector<std::string>& table_columns() {
    static const std::vector<std::string> cols{"Tiers", "Method", "Open Bag", "Placed", "Partial Succ.", "Full Succ.", "Actions", "Time (Sec.)"};
    return cols;
}

inline std::vector<std::string> table_row(const CellSummary& c) {
    return {"Tier " + std::to_string(c.tier), display_name(c.method), fmt_ratio(c.open_bag, c.n), fmt_mean_std(c.placed),
            fmt_ratio(c.partial, c.n),        fmt_ratio(c.full, c.n),  fmt_mean_std(c.actions), fmt_mean_std(c.time)};
}

inline void write_csv(std::ostream& os, const std::vector<CellSummary>& cells) {
    auto quote = [](const std::string& s) {
        if (s.find_first_of(",\"") == std::string::npos) return s;
        std::string q = "\"";
        for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
        return q + "\"";
    };
    const auto& cols = table_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << quote(cols[i]);
    os << '\n';
    for (const auto& c : cells) {
        const auto row = table_row(c);
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << quote(row[i]);
        os << '\n';
    }
}

/// Display width in code points (the ± sign is one column, two bytes).
inline std::size_t text_width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
    return n;
}

inline void write_text_table(std::ostream& os, const std::vector<CellSummary>& cells) {
    std::vector<std::vector<std::string>> rows{table_columns()};
    for (const auto& c : cells) rows.push_back(table_row(c));
    std::vector<std::size_t> w(rows.front().size(), 0);
    for (const auto& r : rows)
        for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], text_width(r[i]));
    auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            os << (i ? "  " : "") << r[i];
            if (i + 1 < r.size()) os << std::string(w[i] - text_width(r[i]), ' ');
        }
        os << '\n';
    };
    line(rows.front());
    std::size_t total = 0;
    for (auto x : w) total += x;
    os << std::string(total + 2 * (w.size() - 1), '-') << '\n';
    for (std::size_t k = 1; k < rows.size(); ++k) line(rows[k]);
}

// ---------------------------------------------------------------------------------------------
// Config files (JSON). Every field is optional; missing fields keep their defaults.

namespace detail {

template <class T>
void get_to(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

inline std::string require_string(const nlohmann::json& j, const char* key) {
    if (!j.at(key).is_string()) throw InvalidArgument(key, "must be a string");
    return j.at(key).get<std::string>();
}

}  // namespace detail

inline Method parse_method(const std::string& s) {
    if (auto m = method_from_string(s)) return *m;
    throw InvalidArgument("method", "unknown method '" + s + "'");
}

inline void apply_config(const nlohmann::json& j, TrialConfig& c) {
    using detail::get_to;
    if (j.contains("method")) c.method = parse_method(detail::require_string(j, "method"));
    get_to(j, "tier", c.tier);
    get_to(j, "seed", c.seed);
    get_to(j, "T", c.policy.T);
    if (j.contains("bag")) {
        const auto& b = j.at("bag");
        get_to(b, "width", c.bag.width);
        get_to(b, "height", c.bag.height);
        get_to(b, "handle_width", c.bag.handle_width);
        get_to(b, "handle_height", c.bag.handle_height);
        get_to(b, "resolution", c.bag.resolution);
        get_to(b, "mass_total", c.bag.mass_total);
        get_to(b, "stiffness_structural", c.bag.stiffness_structural);
        get_to(b, "stiffness_shear", c.bag.stiffness_shear);
        get_to(b, "stiffness_bend", c.bag.stiffness_bend);
        get_to(b, "damping", c.bag.damping);
        get_to(b, "drag_coeff", c.bag.drag_coeff);
    }
    if (j.contains("items")) {
        c.items.clear();
        for (const auto& it : j.at("items")) {
            ItemSpec s;
            if (it.contains("shape")) {
                const std::string shape = detail::require_string(it, "shape");
                if (shape == "sphere") s.shape = ItemShape::Sphere;
                else if (shape == "cylinder") s.shape = ItemShape::Cylinder;
                else throw InvalidArgument("items.shape", "must be sphere or cylinder");
            }
            get_to(it, "radius", s.radius);
            get_to(it, "height", s.height);
            get_to(it, "mass", s.mass);
            c.items.push_back(s);
        }
    }
    if (j.contains("thresholds")) {
        get_to(j.at("thresholds"), "a_min", c.policy.thresholds.a_min);
        get_to(j.at("thresholds"), "e_max", c.policy.thresholds.e_max);
    }
    if (j.contains("policy")) {
        const auto& p = j.at("policy");
        get_to(p, "r_center", c.policy.r_center);
        get_to(p, "grasp_radius", c.policy.grasp_radius);
        get_to(p, "d", c.policy.d_preset);
        get_to(p, "hang_height", c.policy.hang_height);
        get_to(p, "lift_height", c.policy.lift_height);
        get_to(p, "drop_height", c.policy.drop_height);
        get_to(p, "shake_clearance", c.policy.shake_clearance);
        get_to(p, "delta_d", c.policy.bag_adjustment.delta_d);
        get_to(p, "k_s", c.policy.bag_adjustment.k_s);
        get_to(p, "swing_length", c.policy.bag_adjustment.l);
        get_to(p, "swing_frequency", c.policy.bag_adjustment.f);
        get_to(p, "H", c.policy.shaking.H);
        get_to(p, "v", c.policy.shaking.v);
    }
    if (j.contains("style")) {
        const auto& s = j.at("style");
        if (s.contains("pattern")) {
            const std::string pat = detail::require_string(s, "pattern");
            if (pat == "plain") c.policy.style.pattern = Pattern::Plain;
            else if (pat == "stripes") c.policy.style.pattern = Pattern::Stripes;
            else throw InvalidArgument("style.pattern", "must be plain or stripes");
        }
    }
}

inline TrialConfig parse_trial_config(const nlohmann::json& j) {
    TrialConfig c;
    apply_config(j, c);
    c.validate();
    return c;
}

/// Suite cells: an explicit "cells" list of {method, tier} overrides, otherwise the cross
/// product of "methods" and "tiers" (default: all four methods on all three tiers).
inline std::vector<TrialConfig> parse_suite_config(const nlohmann::json& j) {
    TrialConfig base;
    apply_config(j, base);
    std::vector<TrialConfig> cells;
    if (j.contains("cells")) {
        for (const auto& cj : j.at("cells")) {
            TrialConfig c = base;
            apply_config(cj, c);
            cells.push_back(c);
        }
    } else {
        std::vector<std::string> methods{"shakingbot", "shakingbot_A", "shakingbot_H", "analytic_primitives"};
        std::vector<int> tiers{1, 2, 3};
        detail::get_to(j, "methods", methods);
        detail::get_to(j, "tiers", tiers);
        for (int t : tiers)
            for (const auto& m : methods) {
                TrialConfig c = base;
                c.method = parse_method(m);
                c.tier = t;
                cells.push_back(c);
            }
    }
    for (const auto& c : cells) c.validate();
    return cells;
}

inline nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("config", "cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument("config", std::string("malformed JSON in ") + path + ": " + e.what());
    }
}

}  // namespace shakesim
