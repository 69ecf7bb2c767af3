#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>

#include "shakesim/harness.hpp"

namespace fs = std::filesystem;
using namespace shakesim;

namespace {

const char* kClassNames[kNumClasses] = {"handle", "rim"};

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p);
    if (!os) throw std::runtime_error("cannot open " + p.string() + " for writing");
    return os;
}

void print_record(const TrialRecord& r) {
    std::cerr << to_string(r.method) << " tier " << r.tier << " seed " << r.seed << ": open " << r.open_bag << " placed " << r.placed
              << " partial " << r.partial << " full " << r.full << " actions " << r.actions << " time " << std::fixed
              << std::setprecision(1) << r.sim_time << (r.forced ? " forced" : "") << (r.failed ? " failed: " + r.failure : "") << '\n';
}

int run_trial_cmd(const std::string& config, std::uint64_t seed, const std::string& log_path) {
    TrialConfig cfg = parse_trial_config(load_json(config));
    cfg.seed = seed;
    std::ofstream file;
    if (!log_path.empty()) file = open_out(log_path);
    const TrialRecord r = run_trial(cfg, log_path.empty() ? &std::cout : &file);
    print_record(r);
    return 0;
}

int run_suite_cmd(const std::string& config, int trials, const fs::path& out) {
    const auto cells = parse_suite_config(load_json(config));
    fs::create_directories(out / "logs");
    std::vector<std::ofstream> logs;
    logs.reserve(cells.size());
    std::ofstream records = open_out(out / "records.jsonl");
    const SuiteResult res = run_suite(
        cells, trials,
        [&](const TrialConfig& c) -> std::ostream* {
            logs.push_back(open_out(out / "logs" / (std::string(to_string(c.method)) + "_tier" + std::to_string(c.tier) + ".jsonl")));
            return &logs.back();
        },
        [&](const TrialRecord& r) {
            records << to_json(r).dump() << '\n';
            print_record(r);
        });
    std::ofstream csv = open_out(out / "results.csv");
    write_csv(csv, res.cells);
    std::ofstream txt = open_out(out / "results.txt");
    write_text_table(txt, res.cells);
    write_text_table(std::cout, res.cells);
    return 0;
}

BagState load_state(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("state", "cannot open " + path);
    return read_snapshot(in);
}

int render_cmd(const std::string& state, const fs::path& out, bool no_paint, const std::string& depth, const std::string& masks) {
    const BagState st = load_state(state);
    const Camera cam;
    const Observation obs = render_topdown(st, cam, !no_paint);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_png(out.string(), obs.rgb);
    if (!depth.empty()) write_pgm16(depth, obs.depth);
    if (!masks.empty()) {
        const Masks m = oracle_masks(st, cam);
        for (int k = 0; k < kNumClasses; ++k) write_png(masks + "_" + kClassNames[k] + ".png", m.cls[k]);
    }
    return 0;
}

int gen_tier_cmd(int tier, std::uint64_t seed, const fs::path& out) {
    TrialConfig cfg;
    const BagState st = gen_tier(tier, cfg.bag, seed, cfg.physics, cfg.tiers);
    std::ofstream os = open_out(out);
    write_snapshot(os, st);
    return 0;
}

/// Oracle masks and noisy probability rasters for `n` seeded tier renders, as eval-seg input.
int seg_samples_cmd(int n, const fs::path& out, double blur, double noise) {
    fs::create_directories(out / "truth");
    fs::create_directories(out / "pred");
    TrialConfig cfg;
    const Camera cam;
    for (int s = 0; s < n; ++s) {
        const BagState st = gen_tier(1 + s % 3, cfg.bag, static_cast<std::uint64_t>(s), cfg.physics, cfg.tiers);
        const Masks m = oracle_masks(st, cam);
        char stem[32];
        std::snprintf(stem, sizeof stem, "img%03d", s);
        for (int k = 0; k < kNumClasses; ++k) {
            const std::string name = std::string(stem) + "_" + kClassNames[k] + ".png";
            write_png((out / "truth" / name).string(), m.cls[k]);
            write_png((out / "pred" / name).string(), noisy_prediction(m.cls[k], blur, noise, mix_seed(s, k)));
        }
    }
    return 0;
}

int eval_seg_cmd(const fs::path& pred, const fs::path& truth) {
    // Stems that have every class in the truth directory.
    std::map<std::string, int> seen;
    for (const auto& e : fs::directory_iterator(truth)) {
        const std::string f = e.path().filename().string();
        for (const char* c : kClassNames) {
            const std::string suffix = std::string("_") + c + ".png";
            if (f.size() > suffix.size() && f.compare(f.size() - suffix.size(), suffix.size(), suffix) == 0)
                ++seen[f.substr(0, f.size() - suffix.size())];
        }
    }
    std::vector<std::string> stems;
    for (const auto& [stem, n] : seen)
        if (n == kNumClasses) stems.push_back(stem);
    if (stems.empty()) throw InvalidArgument("truth", "no <stem>_handle.png / <stem>_rim.png pairs in " + truth.string());

    SegScore mean;
    std::cout << std::left << std::setw(16) << "image" << std::right << std::setw(10) << "loss" << std::setw(8) << "mIoU"
              << std::setw(8) << "mPA" << '\n';
    std::cout << std::fixed << std::setprecision(4);
    for (const auto& stem : stems) {
        ClassRasters p, w;
        ClassMasks t;
        for (const char* c : kClassNames) {
            const std::string name = stem + "_" + c + ".png";
            if (!fs::exists(pred / name)) throw InvalidArgument("pred", "missing " + (pred / name).string());
            t.push_back(read_png_mask((truth / name).string()));
            p.push_back(read_png_gray((pred / name).string()));
            w.push_back(balanced_weights(t.back()));
        }
        const SegScore s = score_masks(p, t, w);
        std::cout << std::left << std::setw(16) << stem << std::right << std::setw(10) << s.loss << std::setw(8) << s.miou
                  << std::setw(8) << s.mpa << '\n';
        mean.loss += s.loss;
        mean.miou += s.miou;
        mean.mpa += s.mpa;
    }
    const double n = static_cast<double>(stems.size());
    std::cout << std::left << std::setw(16) << "mean" << std::right << std::setw(10) << mean.loss / n << std::setw(8) << mean.miou / n
              << std::setw(8) << mean.mpa / n << '\n';
    return 0;
}

int trajectory_cmd(const std::string& primitive, const fs::path& out) {
    const PolicyConfig pc;
    const GripperPoses poses = detail::symmetric_pair(Vec3(0.0, 0.0, pc.hang_height), pc.d_preset, -kPi / 2, 1.0);
    AttachmentSet att;
    att.add({GripperId::Left, {0}, {Vec3::Zero()}});
    att.add({GripperId::Right, {1}, {Vec3::Zero()}});
    DualTrajectory tr;
    if (primitive == "bag_adjustment") {
        BagAdjustment ba = pc.bag_adjustment;
        ba.d = pc.d_preset;
        tr = gen_bag_adjustment(ba, poses, att, pc.limits);
    } else if (primitive == "dual_arm_shaking") {
        tr = gen_dual_arm_shaking(pc.shaking, poses, att, pc.limits);
    } else if (primitive == "one_arm_holding") {
        tr = gen_one_arm_holding(OneArmHolding{}, poses, att, pc.limits);
    } else {
        throw InvalidArgument("primitive", "must be bag_adjustment, dual_arm_shaking or one_arm_holding");
    }
    std::ofstream os = open_out(out);
    write_trajectory_csv(os, tr);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Simulator and trial harness for dynamic bag opening and bagging"};
    app.require_subcommand(1);

    std::string config, log_path, state, depth, masks;
    fs::path out, pred, truth;
    std::uint64_t seed = 0;
    int trials = 8, tier = 1, n = 10;
    bool no_paint = false;
    double blur = 1.0, noise = 0.1;
    std::string primitive;

    auto* rt = app.add_subcommand("run-trial", "Run one trial and print its JSONL log");
    rt->add_option("--config", config, "JSON trial config")->required()->check(CLI::ExistingFile);
    rt->add_option("--seed", seed, "Trial seed")->required();
    rt->add_option("--log", log_path, "Write the log here instead of stdout");

    auto* rs = app.add_subcommand("run-suite", "Run every cell of a suite and write result tables");
    rs->add_option("--config", config, "JSON suite config")->required()->check(CLI::ExistingFile);
    rs->add_option("--trials", trials, "Seeds per cell")->check(CLI::PositiveNumber);
    rs->add_option("--out", out, "Output directory")->required();

    auto* rd = app.add_subcommand("render", "Render a bag snapshot top-down");
    rd->add_option("--state", state, "Snapshot file")->required()->check(CLI::ExistingFile);
    rd->add_option("--out", out, "RGB PNG")->required();
    rd->add_flag("--no-paint", no_paint, "Leave handles and rim unpainted");
    rd->add_option("--depth", depth, "Also write 16-bit PGM depth (mm)");
    rd->add_option("--masks", masks, "Also write oracle masks to <prefix>_handle.png and <prefix>_rim.png");

    auto* es = app.add_subcommand("eval-seg", "Score predicted masks against ground truth");
    es->add_option("--pred", pred, "Directory of <stem>_<class>.png probability rasters")->required()->check(CLI::ExistingDirectory);
    es->add_option("--truth", truth, "Directory of <stem>_<class>.png masks")->required()->check(CLI::ExistingDirectory);

    auto* gt = app.add_subcommand("gen-tier", "Write a tier initial state as a snapshot");
    gt->add_option("--tier", tier, "1, 2 or 3")->required()->check(CLI::Range(1, 3));
    gt->add_option("--seed", seed, "Seed")->required();
    gt->add_option("--out", out, "Snapshot file")->required();

    auto* ss = app.add_subcommand("seg-samples", "Write oracle masks and noisy predictions for eval-seg");
    ss->add_option("--n", n, "Number of renders")->check(CLI::PositiveNumber);
    ss->add_option("--out", out, "Output directory (gets truth/ and pred/)")->required();
    ss->add_option("--blur", blur, "Prediction blur sigma (px)");
    ss->add_option("--noise", noise, "Prediction noise sigma");

    auto* tj = app.add_subcommand("trajectory", "Write a primitive's trajectory CSV from the default hanging pose");
    tj->add_option("--primitive", primitive, "bag_adjustment, dual_arm_shaking or one_arm_holding")->required();
    tj->add_option("--out", out, "CSV file")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*rt) return run_trial_cmd(config, seed, log_path);
        if (*rs) return run_suite_cmd(config, trials, out);
        if (*rd) return render_cmd(state, out, no_paint, depth, masks);
        if (*es) return eval_seg_cmd(pred, truth);
        if (*gt) return gen_tier_cmd(tier, seed, out);
        if (*ss) return seg_samples_cmd(n, out, blur, noise);
        if (*tj) return trajectory_cmd(primitive, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
