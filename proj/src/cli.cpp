#include "posediff/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <utility>

#include "posediff/conditioning.hpp"
#include "posediff/data.hpp"
#include "posediff/diffusion.hpp"
#include "posediff/errors.hpp"
#include "posediff/metrics.hpp"
#include "posediff/runconfig.hpp"
#include "posediff/tasks.hpp"
#include "posediff/trainer.hpp"

namespace posediff {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

// Full-precision formatting shared by every CSV this file writes.
std::string fmt(double v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

std::string file_stem(const std::string& path) { return fs::path(path).stem().string(); }

std::string hash_hex(std::uint64_t h) {
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = hex[h & 0xf];
        h >>= 4;
    }
    return out;
}

void ensure_parent(const std::string& file) {
    const fs::path dir = fs::path(file).parent_path();
    if (!dir.empty()) fs::create_directories(dir);
}

std::ofstream open_output(const std::string& path) {
    ensure_parent(path);
    std::ofstream f(path);
    if (!f) throw Error("cannot open " + path + " for writing");
    return f;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f = open_output(path);
    f << text;
    if (!f) throw Error("write failed for " + path);
}

// Everything a command needs besides its own flags.
struct RunContext {
    RunConfig config;
    std::string hash;      // config_hash(config)
    std::string run_hash;  // over (config, command, flags): distinct invocations get distinct artifacts
    json flags;
    std::ostream* out = nullptr;
    std::ostream* err = nullptr;

    std::string id8() const { return run_hash.substr(0, 8); }
    std::string out_path(const std::string& name) const {
        return (fs::path(config.paths.output) / name).string();
    }
    std::ostream& log() const { return *out; }
};

// Every run records what produced its artifacts: the command, the resolved
// config (plus hashes), the command-local flags and the list of files
// written.  Deliberately no timestamps, so reruns stay byte-identical.
void write_manifest(const RunContext& ctx, const std::string& tag, const std::string& command,
                    const std::vector<std::string>& outputs) {
    json j;
    j["command"] = command;
    j["config_hash"] = ctx.hash;
    j["run_hash"] = ctx.run_hash;
    j["seed"] = ctx.config.seed;
    j["flags"] = ctx.flags;
    j["outputs"] = outputs;
    j["config"] = json::parse(config_to_json(ctx.config));
    write_text(ctx.out_path(tag + "-" + ctx.id8() + ".meta.json"), j.dump(2) + "\n");
}

// Wavefront-style dump of FK joint positions: one "v" per joint and one "l"
// per bone, viewable in any OBJ loader.
void write_obj(const std::string& path, const Pose& pose, const KinematicTree& tree) {
    const auto pts = forward_kinematics(tree, pose, Shape{});
    std::ostringstream ss;
    ss << std::setprecision(17);
    for (const Vec3& p : pts) ss << "v " << p.x() << " " << p.y() << " " << p.z() << "\n";
    for (int j = 1; j < kJointCount; ++j)
        ss << "l " << tree.parent[static_cast<size_t>(j)] + 1 << " " << j + 1 << "\n";
    write_text(path, ss.str());
}

void write_obj_set(const RunContext& ctx, const std::string& stem, const std::vector<PoseRecord>& records,
                   const KinematicTree& tree, std::vector<std::string>& outputs) {
    for (const PoseRecord& rec : records) {
        std::ostringstream name;
        name << stem << "/pose-" << std::setw(3) << std::setfill('0') << rec.id << ".obj";
        const std::string path = ctx.out_path(name.str());
        write_obj(path, rec.pose, tree);
        outputs.push_back(path);
    }
}

Observation2D render_observation(const KinematicTree& tree, const Pose& pose) {
    Observation2D obs;
    const auto pts = forward_kinematics(tree, pose, Shape{});
    for (int j = 0; j < kJointCount; ++j) {
        obs.uv[static_cast<size_t>(j)] = project(pts[static_cast<size_t>(j)] + obs.root_offset, obs.camera);
        obs.weight[static_cast<size_t>(j)] = 1.0;
    }
    return obs;
}

double reprojection_rms(const KinematicTree& tree, const Pose& pose, const Observation2D& obs) {
    const auto pts = forward_kinematics(tree, pose, Shape{});
    double acc = 0.0;
    int seen = 0;
    for (int j = 0; j < kJointCount; ++j) {
        if (obs.weight[static_cast<size_t>(j)] <= 0.0) continue;
        const Eigen::Vector2d px = project(pts[static_cast<size_t>(j)] + obs.root_offset, obs.camera);
        acc += (px - obs.uv[static_cast<size_t>(j)]).squaredNorm();
        ++seen;
    }
    if (seen == 0) throw ValidationError("reprojection_rms: no visible joints");
    return std::sqrt(acc / seen);
}

// Random per-joint rotation of fixed magnitude, the standard way this tool
// degrades a ground-truth pose into a fit/refine starting point.
Pose perturb_pose(const Pose& base, RngStream& rng, double magnitude) {
    Pose out = base;
    for (int j = 0; j < kJointCount; ++j) {
        const Vec3 axis(rng.next_gauss(), rng.next_gauss(), rng.next_gauss());
        const Mat3 tweak = axis_angle_to_matrix(axis.normalized() * magnitude);
        out.joints[static_cast<size_t>(j)] =
            matrix_to_sixd(tweak * sixd_to_matrix(base.joints[static_cast<size_t>(j)]));
    }
    return out;
}

std::vector<PoseRecord> held_out_records(const std::string& corpus_path, int count) {
    std::vector<PoseRecord> held;
    for (PoseRecord& rec : load_poses(corpus_path))
        if (rec.split == "test") held.push_back(std::move(rec));
    if (static_cast<int>(held.size()) < count)
        throw ValidationError("corpus has " + std::to_string(held.size()) + " held-out poses, need " +
                              std::to_string(count));
    held.resize(static_cast<size_t>(count));
    return held;
}

double mean_observed_error(const KinematicTree& tree, const Pose& pose, const Observation3D& obs) {
    const auto pts = forward_kinematics(tree, pose, Shape{});
    double acc = 0.0;
    int seen = 0;
    for (int j = 0; j < kJointCount; ++j) {
        if (!obs.visible[static_cast<size_t>(j)]) continue;
        acc += (pts[static_cast<size_t>(j)] - obs.xyz[static_cast<size_t>(j)]).norm();
        ++seen;
    }
    return acc / seen;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_gen_data(const RunContext& ctx) {
    CorpusSpec spec;
    spec.size = ctx.config.data.size;
    spec.seed = ctx.config.seed;
    spec.latent_rank = ctx.config.data.latent_rank;
    const std::vector<PoseRecord> corpus = synth_corpus(spec);
    int train_count = 0;
    for (const PoseRecord& rec : corpus) train_count += rec.split == "train" ? 1 : 0;

    ensure_parent(ctx.config.paths.corpus);
    save_poses(corpus, ctx.config.paths.corpus);
    write_manifest(ctx, "gen-data", "gen-data", {ctx.config.paths.corpus});
    ctx.log() << "gen-data: wrote " << corpus.size() << " records (" << train_count << " train, "
              << corpus.size() - static_cast<size_t>(train_count) << " test) to " << ctx.config.paths.corpus
              << "\n";
}

void cmd_train(const RunContext& ctx) {
    const std::vector<PoseRecord> corpus = load_poses(ctx.config.paths.corpus);
    const KinematicTree& tree = KinematicTree::humanoid24();
    const DiffusionSchedule sched(ctx.config.timesteps);
    RngStream init(ctx.config.seed);
    ModelParams model = init_model(ctx.config.model, init);

    const TrainConfig& tc = ctx.config.training;
    ctx.log() << "train: " << corpus.size() << " records, " << tc.steps << " steps, batch " << tc.batch_size
              << ", lr " << tc.learning_rate << "\n";
    const auto t0 = Clock::now();
    const TrainReport report = train(model, tree, sched, corpus, tc, [&](int step, double loss) {
        if (step % 100 == 0 || step + 1 == tc.steps)
            ctx.log() << "  step " << step << "  loss " << loss << "\n";
    });
    const double minutes = std::chrono::duration<double>(Clock::now() - t0).count() / 60.0;

    ensure_parent(ctx.config.paths.checkpoint);
    save_checkpoint(ctx.config.paths.checkpoint, model);
    std::ostringstream csv;
    csv << "step,loss\n";
    for (size_t s = 0; s < report.loss_history.size(); ++s)
        csv << s << "," << fmt(report.loss_history[s]) << "\n";
    const std::string loss_path = ctx.out_path("train-loss-" + ctx.id8() + ".csv");
    write_text(loss_path, csv.str());
    write_manifest(ctx, "train", "train", {ctx.config.paths.checkpoint, loss_path});

    *ctx.err << "train: finished in " << std::setprecision(3) << minutes << " min\n";
    ctx.log() << "train: checkpoint " << ctx.config.paths.checkpoint << ", loss history " << loss_path << "\n";
}

void cmd_sample(const RunContext& ctx, int n, const std::string& text, int stride, bool obj) {
    ModelParams model = load_checkpoint(ctx.config.paths.checkpoint);
    const KinematicTree& tree = KinematicTree::humanoid24();
    const DiffusionSchedule sched(ctx.config.timesteps);
    ConditionInputs cond;
    if (!text.empty()) cond.text = text;
    const int steps = ctx.config.timesteps / stride;

    const RngStream root(ctx.config.seed);
    std::vector<PoseRecord> records;
    records.reserve(static_cast<size_t>(n));
    int evals = 0;
    for (int i = 0; i < n; ++i) {
        RngStream stream = root.child(static_cast<std::uint64_t>(i));
        PoseRecord rec;
        rec.id = i;
        rec.split = "test";
        if (!text.empty()) rec.caption = text;
        int pose_evals = 0;
        rec.pose = sample_pose(model, tree, sched, stream, cond, steps, {}, &pose_evals);
        evals += pose_evals;
        records.push_back(std::move(rec));
    }

    const std::string pose_path = ctx.out_path("samples-" + ctx.id8() + ".poses");
    save_poses(records, pose_path);
    std::vector<std::string> outputs{pose_path};
    if (obj) write_obj_set(ctx, "samples-" + ctx.id8() + "-obj", records, tree, outputs);
    write_manifest(ctx, "sample", "sample", outputs);
    ctx.log() << "sample: wrote " << n << " poses (" << evals << " denoiser evals) to " << pose_path << "\n";
}

void cmd_fit(const RunContext& ctx, int count, bool obj) {
    const std::vector<PoseRecord> held = held_out_records(ctx.config.paths.corpus, count);
    ModelParams model = load_checkpoint(ctx.config.paths.checkpoint);
    const KinematicTree& tree = KinematicTree::humanoid24();
    const DiffusionSchedule sched(ctx.config.timesteps);
    const RngStream root(ctx.config.seed);

    std::vector<PoseRecord> fitted;
    std::ostringstream csv;
    csv << "id,initial_loss,final_loss,accepted_steps,rms_init,rms_fit\n";
    for (size_t k = 0; k < held.size(); ++k) {
        const PoseRecord& rec = held[k];
        const Observation2D obs = render_observation(tree, rec.pose);
        RngStream noise = root.child(static_cast<std::uint64_t>(k));
        const Pose init = perturb_pose(rec.pose, noise, 0.3);
        const FitResult res = smplify_fit(model, tree, sched, obs, init, Shape{});

        PoseRecord out_rec = rec;
        out_rec.pose = res.pose;
        fitted.push_back(std::move(out_rec));
        csv << rec.id << "," << fmt(res.loss_history.front()) << "," << fmt(res.loss_history.back()) << ","
            << res.accepted_steps << "," << fmt(reprojection_rms(tree, init, obs)) << ","
            << fmt(reprojection_rms(tree, res.pose, obs)) << "\n";
        ctx.log() << "fit: record " << rec.id << " loss " << res.loss_history.front() << " -> "
                  << res.loss_history.back() << " in " << res.accepted_steps << " accepted steps\n";
    }

    const std::string pose_path = ctx.out_path("fits-" + ctx.id8() + ".poses");
    const std::string report_path = ctx.out_path("fit-report-" + ctx.id8() + ".csv");
    save_poses(fitted, pose_path);
    write_text(report_path, csv.str());
    std::vector<std::string> outputs{pose_path, report_path};
    if (obj) write_obj_set(ctx, "fits-" + ctx.id8() + "-obj", fitted, tree, outputs);
    write_manifest(ctx, "fit", "fit", outputs);
    ctx.log() << "fit: wrote " << fitted.size() << " fits to " << pose_path << ", report " << report_path
              << "\n";
}

void cmd_complete(const RunContext& ctx, const std::string& scenario_str, int count, bool obj) {
    const Scenario scenario = scenario_from_name(scenario_str);
    const std::vector<PoseRecord> held = held_out_records(ctx.config.paths.corpus, count);
    ModelParams model = load_checkpoint(ctx.config.paths.checkpoint);
    const KinematicTree& tree = KinematicTree::humanoid24();
    const DiffusionSchedule sched(ctx.config.timesteps);
    const RngStream root(ctx.config.seed);

    std::vector<PoseRecord> completed;
    std::ostringstream csv;
    csv << "id,observed_error_m,j2j_mm\n";
    for (size_t k = 0; k < held.size(); ++k) {
        const PoseRecord& rec = held[k];
        const Observation3D obs = make_scenario(scenario, rec.pose, Shape{}, tree);
        RngStream stream = root.child(static_cast<std::uint64_t>(k));
        PoseRecord out_rec = rec;
        out_rec.pose = complete_pose(model, tree, sched, obs, stream);
        const double err_m = mean_observed_error(tree, out_rec.pose, obs);
        const double j2j_mm = j2j(out_rec.pose, rec.pose, Shape{}, tree);
        csv << rec.id << "," << fmt(err_m) << "," << fmt(j2j_mm) << "\n";
        ctx.log() << "complete: record " << rec.id << " observed error " << err_m << " m\n";
        completed.push_back(std::move(out_rec));
    }

    const std::string tag = "completions-" + scenario_str + "-" + ctx.id8();
    const std::string pose_path = ctx.out_path(tag + ".poses");
    const std::string report_path =
        ctx.out_path("completion-report-" + scenario_str + "-" + ctx.id8() + ".csv");
    save_poses(completed, pose_path);
    write_text(report_path, csv.str());
    std::vector<std::string> outputs{pose_path, report_path};
    if (obj) write_obj_set(ctx, tag + "-obj", completed, tree, outputs);
    write_manifest(ctx, "complete-" + scenario_str, "complete", outputs);
    ctx.log() << "complete: wrote " << completed.size() << " poses (" << scenario_str << ") to " << pose_path
              << "\n";
}

void cmd_denoise(const RunContext& ctx, int count, bool obj) {
    const std::vector<PoseRecord> held = held_out_records(ctx.config.paths.corpus, count);
    ModelParams model = load_checkpoint(ctx.config.paths.checkpoint);
    const KinematicTree& tree = KinematicTree::humanoid24();
    const DiffusionSchedule sched(ctx.config.timesteps);
    const RngStream root(ctx.config.seed);
    constexpr int kNoiseLevel = 400;  // denoise_pose's fixed re-entry level

    std::vector<PoseRecord> cleaned;
    std::ostringstream csv;
    csv << "id,j2j_noisy_mm,j2j_denoised_mm\n";
    for (size_t k = 0; k < held.size(); ++k) {
        const PoseRecord& rec = held[k];
        RngStream stream = root.child(static_cast<std::uint64_t>(k));
        const Tensor eps = gauss_sample(stream, {kJointCount, 6});
        const Pose noisy = tensor_to_pose(q_sample(sched, pose_to_tensor(rec.pose), kNoiseLevel, eps));
        PoseRecord out_rec = rec;
        out_rec.pose = denoise_pose(model, tree, sched, noisy);
        csv << rec.id << "," << fmt(j2j(noisy, rec.pose, Shape{}, tree)) << ","
            << fmt(j2j(out_rec.pose, rec.pose, Shape{}, tree)) << "\n";
        cleaned.push_back(std::move(out_rec));
    }

    const std::string pose_path = ctx.out_path("denoised-" + ctx.id8() + ".poses");
    const std::string report_path = ctx.out_path("denoise-report-" + ctx.id8() + ".csv");
    save_poses(cleaned, pose_path);
    write_text(report_path, csv.str());
    std::vector<std::string> outputs{pose_path, report_path};
    if (obj) write_obj_set(ctx, "denoised-" + ctx.id8() + "-obj", cleaned, tree, outputs);
    write_manifest(ctx, "denoise", "denoise", outputs);
    ctx.log() << "denoise: wrote " << cleaned.size() << " poses to " << pose_path << ", report "
              << report_path << "\n";
}

void cmd_eval(const RunContext& ctx, const std::string& metric, const std::string& a_path,
              const std::string& b_path) {
    const KinematicTree& tree = KinematicTree::humanoid24();
    std::vector<Pose> a, b;
    for (const PoseRecord& rec : load_poses(a_path)) a.push_back(rec.pose);
    if (!b_path.empty())
        for (const PoseRecord& rec : load_poses(b_path)) b.push_back(rec.pose);

    const size_t paired = std::min(a.size(), b.size());
    auto paired_mean = [&](const std::function<double(const Pose&, const Pose&)>& f) {
        if (paired == 0) throw ValidationError("eval: paired metrics need non-empty --a and --b");
        double acc = 0.0;
        for (size_t i = 0; i < paired; ++i) acc += f(a[i], b[i]);
        return acc / static_cast<double>(paired);
    };

    double value = 0.0;
    if (metric == "fid") {
        value = fid(a, b, tree);
    } else if (metric == "dnn") {
        value = d_nn(a, b);
    } else if (metric == "apd") {
        value = apd(a, tree);
    } else if (metric == "pampjpe") {
        value = paired_mean([&](const Pose& x, const Pose& y) {
            const auto px = forward_kinematics(tree, x, Shape{});
            const auto py = forward_kinematics(tree, y, Shape{});
            return pa_mpjpe(std::vector<Vec3>(px.begin(), px.end()), std::vector<Vec3>(py.begin(), py.end()));
        });
    } else if (metric == "deltaq") {
        value = paired_mean([&](const Pose& x, const Pose& y) { return delta_q(x, y, tree); });
    } else if (metric == "j2j") {
        value = paired_mean([&](const Pose& x, const Pose& y) { return j2j(x, y, Shape{}, tree); });
    } else {
        throw ValidationError("eval: unknown metric \"" + metric + "\"");
    }

    MetricRow row;
    row.metric = metric;
    row.set_a = file_stem(a_path);
    row.set_b = b_path.empty() ? "" : file_stem(b_path);
    row.value = value;
    const std::string csv_path = ctx.out_path("eval-" + metric + "-" + ctx.id8() + ".csv");
    write_text(csv_path, metrics_to_csv({row}));
    write_manifest(ctx, "eval-" + metric, "eval", {csv_path});
    ctx.log() << metric << "(" << row.set_a << (b_path.empty() ? "" : ", " + row.set_b) << ") = " << fmt(value)
              << "\n";
}

// ---------------------------------------------------------------------------
// Argument plumbing
// ---------------------------------------------------------------------------

// Leftover `--key.path value` / `--key=value` tokens become config overrides.
std::vector<std::pair<std::string, std::string>> parse_override_tokens(const std::vector<std::string>& tokens) {
    std::vector<std::pair<std::string, std::string>> kv;
    for (size_t i = 0; i < tokens.size(); ++i) {
        const std::string& t = tokens[i];
        if (t.rfind("--", 0) != 0 || t.size() <= 2)
            throw FormatError("unexpected argument \"" + t + "\" (overrides look like --training.steps 500)");
        const std::string body = t.substr(2);
        const size_t eq = body.find('=');
        if (eq != std::string::npos) {
            kv.emplace_back(body.substr(0, eq), body.substr(eq + 1));
        } else {
            if (i + 1 == tokens.size())
                throw FormatError("override \"" + t + "\" is missing a value");
            kv.emplace_back(body, tokens[++i]);
        }
    }
    return kv;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"skeleton-aware pose diffusion: generation, fitting, completion and evaluation"};
    app.name("posediff");
    app.require_subcommand(0, 1);
    app.allow_extras();

    std::string config_path;
    app.add_option("--config", config_path, "JSON run configuration (defaults apply when omitted)");

    struct {
        int n = 16;
        std::string text;
        int stride = 50;
        bool obj = false;
    } sample_flags;
    struct {
        int count = 4;
        bool obj = false;
    } fit_flags;
    struct {
        std::string scenario = "end_effectors";
        int count = 4;
        bool obj = false;
    } complete_flags;
    struct {
        int count = 8;
        bool obj = false;
    } denoise_flags;
    struct {
        std::string metric;
        std::string a;
        std::string b;
    } eval_flags;

    CLI::App* gen = app.add_subcommand("gen-data", "synthesize the caption-labelled pose corpus");
    CLI::App* train_cmd = app.add_subcommand("train", "train the denoiser on the corpus");
    CLI::App* sample_cmd = app.add_subcommand("sample", "draw poses from a trained checkpoint");
    sample_cmd->add_option("--n", sample_flags.n, "number of poses");
    sample_cmd->add_option("--text", sample_flags.text, "caption to condition on");
    sample_cmd->add_option("--stride", sample_flags.stride, "DDIM level stride");
    sample_cmd->add_flag("--obj", sample_flags.obj, "also dump FK joints as wavefront files");
    CLI::App* fit_cmd = app.add_subcommand("fit", "fit held-out poses to rendered 2D keypoints");
    fit_cmd->add_option("--count", fit_flags.count, "number of held-out poses");
    fit_cmd->add_flag("--obj", fit_flags.obj, "also dump FK joints as wavefront files");
    CLI::App* complete_cmd = app.add_subcommand("complete", "complete partially observed 3D joints");
    complete_cmd->add_option("--scenario", complete_flags.scenario, "occ_arm, occ_legs or end_effectors");
    complete_cmd->add_option("--count", complete_flags.count, "number of held-out poses");
    complete_cmd->add_flag("--obj", complete_flags.obj, "also dump FK joints as wavefront files");
    CLI::App* denoise_cmd = app.add_subcommand("denoise", "denoise corrupted held-out poses");
    denoise_cmd->add_option("--count", denoise_flags.count, "number of held-out poses");
    denoise_cmd->add_flag("--obj", denoise_flags.obj, "also dump FK joints as wavefront files");
    CLI::App* eval_cmd = app.add_subcommand("eval", "compute a metric over pose files");
    eval_cmd->add_option("--metric", eval_flags.metric, "fid, dnn, apd, pampjpe, deltaq or j2j")->required();
    eval_cmd->add_option("--a", eval_flags.a, "pose file")->required();
    eval_cmd->add_option("--b", eval_flags.b, "reference pose file (apd needs none)");
    for (CLI::App* sub : {gen, train_cmd, sample_cmd, fit_cmd, complete_cmd, denoise_cmd, eval_cmd}) {
        sub->allow_extras();
        sub->fallthrough();
    }

    std::vector<std::string> argv_store;
    argv_store.reserve(args.size() + 1);
    argv_store.emplace_back("posediff");
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(argv_store.size());
    for (const std::string& s : argv_store) argv.push_back(s.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    if (app.get_subcommands().empty()) {
        err << "error: expected a command (gen-data, train, sample, fit, complete, denoise, eval)\n";
        return 2;
    }
    CLI::App* active = app.get_subcommands().front();
    const std::string command = active->get_name();

    // Configuration phase: anything wrong here is the caller's invocation.
    RunContext ctx;
    ctx.out = &out;
    ctx.err = &err;
    try {
        RunConfig base = config_path.empty() ? RunConfig{} : load_config(config_path);
        std::vector<std::string> extras = app.remaining();
        const std::vector<std::string> sub_extras = active->remaining();
        extras.insert(extras.end(), sub_extras.begin(), sub_extras.end());
        ctx.config = apply_overrides(base, parse_override_tokens(extras));
        ctx.hash = config_hash(ctx.config);
        if (command == "sample") {
            ctx.flags = {{"n", sample_flags.n},
                         {"text", sample_flags.text},
                         {"stride", sample_flags.stride},
                         {"obj", sample_flags.obj}};
        } else if (command == "fit") {
            ctx.flags = {{"count", fit_flags.count}, {"obj", fit_flags.obj}};
        } else if (command == "complete") {
            ctx.flags = {{"scenario", complete_flags.scenario},
                         {"count", complete_flags.count},
                         {"obj", complete_flags.obj}};
        } else if (command == "denoise") {
            ctx.flags = {{"count", denoise_flags.count}, {"obj", denoise_flags.obj}};
        } else if (command == "eval") {
            ctx.flags = {{"metric", eval_flags.metric}, {"a", eval_flags.a}, {"b", eval_flags.b}};
        } else {
            ctx.flags = json::object();
        }
        ctx.run_hash = hash_hex(fnv1a64(config_to_json(ctx.config) + "\n" + command + "\n" + ctx.flags.dump()));

        if (command == "sample") {
            if (sample_flags.n < 1) throw ValidationError("sample: --n must be >= 1");
            if (sample_flags.stride < 1 || ctx.config.timesteps % sample_flags.stride != 0)
                throw ValidationError("sample: --stride must divide schedule.timesteps");
        }
        if (command == "fit" && fit_flags.count < 1) throw ValidationError("fit: --count must be >= 1");
        if (command == "complete") {
            if (complete_flags.count < 1) throw ValidationError("complete: --count must be >= 1");
            (void)scenario_from_name(complete_flags.scenario);
        }
        if (command == "denoise" && denoise_flags.count < 1)
            throw ValidationError("denoise: --count must be >= 1");
        if (command == "eval") {
            const std::string& m = eval_flags.metric;
            if (m != "fid" && m != "dnn" && m != "apd" && m != "pampjpe" && m != "deltaq" && m != "j2j")
                throw ValidationError("eval: unknown metric \"" + m + "\"");
            if (m != "apd" && eval_flags.b.empty())
                throw ValidationError("eval: --b is required for every metric except apd");
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    // Execution phase: failures here are runtime problems, not usage.
    try {
        fs::create_directories(ctx.config.paths.output);
        out << "posediff " << command << ": seed " << ctx.config.seed << ", config " << ctx.hash << ", run "
            << ctx.id8() << "\n";
        out << json::parse(config_to_json(ctx.config)).dump() << "\n";
        if (command == "gen-data") {
            cmd_gen_data(ctx);
        } else if (command == "train") {
            cmd_train(ctx);
        } else if (command == "sample") {
            cmd_sample(ctx, sample_flags.n, sample_flags.text, sample_flags.stride, sample_flags.obj);
        } else if (command == "fit") {
            cmd_fit(ctx, fit_flags.count, fit_flags.obj);
        } else if (command == "complete") {
            cmd_complete(ctx, complete_flags.scenario, complete_flags.count, complete_flags.obj);
        } else if (command == "denoise") {
            cmd_denoise(ctx, denoise_flags.count, denoise_flags.obj);
        } else {
            cmd_eval(ctx, eval_flags.metric, eval_flags.a, eval_flags.b);
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace posediff
