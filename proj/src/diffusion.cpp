#include "posediff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "posediff/errors.hpp"

namespace posediff {

namespace {

void check_level(const DiffusionSchedule& sched, int t, const char* who) {
    if (t < 0 || t >= sched.timesteps())
        throw ValidationError(std::string(who) + ": level " + std::to_string(t) + " outside [0, " +
                              std::to_string(sched.timesteps()) + ")");
}

void check_pose_shape(const Tensor& z, const char* who) {
    if (!(z.rank() == 2 && z.rows() == kJointCount && z.cols() == 6))
        throw ShapeError(std::string(who) + ": expected (24, 6), got " + z.shape_str());
}

}  // namespace

DiffusionSchedule::DiffusionSchedule(int timesteps, double beta_min, double beta_max) : timesteps_(timesteps) {
    if (timesteps < 1) throw ValidationError("DiffusionSchedule: timesteps must be >= 1");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
        throw ValidationError("DiffusionSchedule: need 0 < beta_min <= beta_max < 1");
    beta_.resize(static_cast<size_t>(timesteps));
    alpha_bar_.resize(static_cast<size_t>(timesteps));
    double running = 1.0;
    for (int t = 0; t < timesteps; ++t) {
        const double frac = timesteps == 1 ? 0.0 : static_cast<double>(t) / (timesteps - 1);
        beta_[static_cast<size_t>(t)] = beta_min + (beta_max - beta_min) * frac;
        running *= 1.0 - beta_[static_cast<size_t>(t)];
        alpha_bar_[static_cast<size_t>(t)] = running;
    }
}

double DiffusionSchedule::beta(int t) const {
    check_level(*this, t, "beta");
    return beta_[static_cast<size_t>(t)];
}

double DiffusionSchedule::alpha_bar(int t) const {
    if (t == -1) return 1.0;  // virtual data level
    check_level(*this, t, "alpha_bar");
    return alpha_bar_[static_cast<size_t>(t)];
}

Tensor q_sample(const DiffusionSchedule& sched, const Tensor& z0, int t, const Tensor& eps) {
    check_level(sched, t, "q_sample");
    if (!z0.same_shape(eps)) throw ShapeError("q_sample: z0 " + z0.shape_str() + " vs eps " + eps.shape_str());
    const double abar = sched.alpha_bar(t);
    const double cs = std::sqrt(abar), cn = std::sqrt(1.0 - abar);
    Tensor out = z0;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = cs * z0[i] + cn * eps[i];
    return out;
}

Tensor estimate_x0(const DiffusionSchedule& sched, const Tensor& z_t, int t, const Tensor& eps_hat) {
    check_level(sched, t, "estimate_x0");
    if (!z_t.same_shape(eps_hat))
        throw ShapeError("estimate_x0: z_t " + z_t.shape_str() + " vs eps_hat " + eps_hat.shape_str());
    const double abar = sched.alpha_bar(t);
    const double cn = std::sqrt(1.0 - abar), inv = 1.0 / std::sqrt(abar);
    Tensor out = z_t;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = (z_t[i] - cn * eps_hat[i]) * inv;
    return out;
}

Var estimate_x0_graph(Tape& tape, const DiffusionSchedule& sched, Var z_t, int t, Var eps_hat) {
    check_level(sched, t, "estimate_x0_graph");
    const double abar = sched.alpha_bar(t);
    const double cn = std::sqrt(1.0 - abar), inv = 1.0 / std::sqrt(abar);
    return tape.scale(tape.sub(z_t, tape.scale(eps_hat, cn)), inv);
}

Tensor ddim_step(const DiffusionSchedule& sched, const Tensor& z_t, int t, int t_prev, const Tensor& eps_hat,
                 double sigma, RngStream* stream) {
    check_level(sched, t, "ddim_step");
    if (t_prev < -1 || t_prev >= t)
        throw ValidationError("ddim_step: t_prev " + std::to_string(t_prev) + " must lie in [-1, " +
                              std::to_string(t) + ")");
    if (!z_t.same_shape(eps_hat))
        throw ShapeError("ddim_step: z_t " + z_t.shape_str() + " vs eps_hat " + eps_hat.shape_str());
    if (sigma < 0.0) throw ValidationError("ddim_step: sigma must be >= 0");
    const double abar_prev = sched.alpha_bar(t_prev);
    const double dir_sq = 1.0 - abar_prev - sigma * sigma;
    if (dir_sq < 0.0) throw ValidationError("ddim_step: sigma^2 exceeds 1 - alpha_bar(t_prev)");
    if (sigma > 0.0 && stream == nullptr) throw ValidationError("ddim_step: sigma > 0 needs a noise stream");

    const Tensor x0 = estimate_x0(sched, z_t, t, eps_hat);
    const double cs = std::sqrt(abar_prev), cd = std::sqrt(dir_sq);
    Tensor out = z_t;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = cs * x0[i] + cd * eps_hat[i];
    if (sigma > 0.0) {
        const Tensor fresh = gauss_sample(*stream, z_t.shape());
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] += sigma * fresh[i];
    }
    return out;
}

std::vector<int> descend_grid(int start, int stride) {
    if (start < 1) throw ValidationError("descend_grid: start must be >= 1");
    if (stride < 1) throw ValidationError("descend_grid: stride must be >= 1");
    std::vector<int> grid;
    for (int t = start; t > 0; t -= stride) grid.push_back(t);
    return grid;
}

std::vector<int> linspace_grid(int start, int stop, int count) {
    if (count < 2) throw ValidationError("linspace_grid: count must be >= 2");
    if (!(start > stop && stop >= 1)) throw ValidationError("linspace_grid: need start > stop >= 1");
    std::vector<int> grid(static_cast<size_t>(count));
    for (int k = 0; k < count; ++k) {
        const double v = start + (stop - start) * static_cast<double>(k) / (count - 1);
        grid[static_cast<size_t>(k)] = static_cast<int>(std::lround(v));
    }
    for (int k = 1; k < count; ++k)
        if (grid[static_cast<size_t>(k)] >= grid[static_cast<size_t>(k - 1)])
            throw ValidationError("linspace_grid: spacing below 1 level, grid not strictly descending");
    return grid;
}

Tensor cfg_epsilon(const ModelParams& model, const KinematicTree& tree, const Tensor& z_t, int t,
                   const ConditionInputs& cond, double cfg_weight, int& evals) {
    check_pose_shape(z_t, "cfg_epsilon");
    if (cond.empty() || cfg_weight == 0.0) {
        ++evals;
        return denoise(model, tree, z_t, t, cond, /*force_null=*/true);
    }
    if (cfg_weight == 1.0) {
        ++evals;
        return denoise(model, tree, z_t, t, cond);
    }
    const Tensor eps_cond = denoise(model, tree, z_t, t, cond);
    const Tensor eps_null = denoise(model, tree, z_t, t, cond, /*force_null=*/true);
    evals += 2;
    Tensor out = eps_null;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = eps_null[i] + cfg_weight * (eps_cond[i] - eps_null[i]);
    return out;
}

Tensor guided_epsilon(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                      const Tensor& z_t, int t, const ConditionInputs& cond, double cfg_weight,
                      const GuidanceResidual& residual, double rho, int& evals) {
    if (!residual || rho == 0.0) return cfg_epsilon(model, tree, z_t, t, cond, cfg_weight, evals);
    check_pose_shape(z_t, "guided_epsilon");
    check_level(sched, t, "guided_epsilon");

    // The whole prediction lives on one tape so the residual gradient flows
    // back through the classifier-free mix and the denoiser itself.
    Tape tape;
    const TapeParams P(tape, model);
    const Var z_in = tape.input(z_t);
    Var eps_hat;
    if (cond.empty() || cfg_weight == 0.0) {
        const ContextVars ctx = build_context_graph(tape, P, model.config, cond, t, /*force_null=*/true);
        eps_hat = denoise_graph(tape, P, model.config, tree, z_in, t, ctx);
        ++evals;
    } else if (cfg_weight == 1.0) {
        const ContextVars ctx = build_context_graph(tape, P, model.config, cond, t);
        eps_hat = denoise_graph(tape, P, model.config, tree, z_in, t, ctx);
        ++evals;
    } else {
        const ContextVars ctx_c = build_context_graph(tape, P, model.config, cond, t);
        const ContextVars ctx_n = build_context_graph(tape, P, model.config, cond, t, /*force_null=*/true);
        const Var eps_c = denoise_graph(tape, P, model.config, tree, z_in, t, ctx_c);
        const Var eps_n = denoise_graph(tape, P, model.config, tree, z_in, t, ctx_n);
        eps_hat = tape.add(eps_n, tape.scale(tape.sub(eps_c, eps_n), cfg_weight));
        evals += 2;
    }
    const Var x0 = estimate_x0_graph(tape, sched, z_in, t, eps_hat);
    const Var r = residual(tape, x0);
    if (tape.value(r).size() != 1) throw ShapeError("guided_epsilon: residual must be scalar");
    tape.backward(r);

    const Tensor& grad = tape.grad(z_in);
    const double coef = rho * std::sqrt(1.0 - sched.alpha_bar(t));
    Tensor out = tape.value(eps_hat);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += coef * grad[i];
    return out;
}

SampleResult sample_over_grid(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                              Tensor z_start, const std::vector<int>& grid, const ConditionInputs& cond,
                              const SampleOptions& opt) {
    check_pose_shape(z_start, "sample_over_grid");
    if (grid.empty()) throw ValidationError("sample_over_grid: empty grid");
    for (size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] < 1 || grid[i] >= sched.timesteps())
            throw ValidationError("sample_over_grid: level " + std::to_string(grid[i]) + " outside [1, T)");
        if (i > 0 && grid[i] >= grid[i - 1])
            throw ValidationError("sample_over_grid: grid must be strictly descending");
    }
    SampleResult res;
    res.z = std::move(z_start);
    for (size_t i = 0; i < grid.size(); ++i) {
        const int t = grid[i];
        const int t_prev = i + 1 < grid.size() ? grid[i + 1] : -1;
        const Tensor eps_hat =
            guided_epsilon(model, tree, sched, res.z, t, cond, opt.cfg_weight, opt.residual, opt.rho, res.evals);
        res.z = ddim_step(sched, res.z, t, t_prev, eps_hat, opt.sigma, opt.noise);
    }
    return res;
}

Pose sample_pose(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                 RngStream& stream, const ConditionInputs& cond, int steps, const SampleOptions& opt, int* evals) {
    if (steps < 1) throw ValidationError("sample_pose: steps must be >= 1");
    const int stride = sched.timesteps() / steps;
    if (stride < 1) throw ValidationError("sample_pose: more steps than schedule levels");
    Tensor z = gauss_sample(stream, {kJointCount, 6});
    const SampleResult res = sample_over_grid(model, tree, sched, std::move(z), descend_grid(sched.timesteps() - 1, stride),
                                              cond, opt);
    if (evals) *evals = res.evals;
    const Pose pose = tensor_to_pose(res.z);
    for (int j = 0; j < kJointCount; ++j) (void)sixd_to_matrix(pose.joints[static_cast<size_t>(j)]);
    return pose;
}

Tensor ddim_invert_fn(const EpsilonFn& eps_fn, const DiffusionSchedule& sched, const Tensor& z0, int t_target,
                      int step, int* evals) {
    check_pose_shape(z0, "ddim_invert");
    if (step < 1) throw ValidationError("ddim_invert: step must be >= 1");
    if (t_target >= sched.timesteps()) throw ValidationError("ddim_invert: t_target outside [.., T)");
    std::vector<int> targets;
    for (int t = t_target; t > 0; t -= step) targets.push_back(t);
    std::reverse(targets.begin(), targets.end());

    int local_evals = 0;
    Tensor z = z0;
    int src = -1;
    for (const int dst : targets) {
        // The model runs at the destination level; the x0 estimate uses the
        // source level, which at the data level is the latent itself.
        const Tensor eps_hat = eps_fn(z, dst);
        if (!eps_hat.same_shape(z)) throw ShapeError("ddim_invert: predictor changed the latent shape");
        ++local_evals;
        const double abar_src = sched.alpha_bar(src);
        const double abar_dst = sched.alpha_bar(dst);
        const double cn_src = std::sqrt(1.0 - abar_src), inv_src = 1.0 / std::sqrt(abar_src);
        const double cs_dst = std::sqrt(abar_dst), cn_dst = std::sqrt(1.0 - abar_dst);
        Tensor next = z;
        for (std::int64_t i = 0; i < z.size(); ++i) {
            const double x0 = (z[i] - cn_src * eps_hat[i]) * inv_src;
            next[i] = cs_dst * x0 + cn_dst * eps_hat[i];
        }
        z = std::move(next);
        src = dst;
    }
    if (evals) *evals = local_evals;
    return z;
}

Tensor ddim_invert(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                   const Tensor& z0, int t_target, int step, const ConditionInputs& cond, int* evals) {
    const EpsilonFn eps_fn = [&](const Tensor& z, int t) { return denoise(model, tree, z, t, cond); };
    return ddim_invert_fn(eps_fn, sched, z0, t_target, step, evals);
}

Var training_loss_graph(Tape& tape, const TapeParams& P, const DiffusionSchedule& sched, const KinematicTree& tree,
                        const Tensor& z0, const ConditionInputs& cond, double drop_p, RngStream& stream) {
    check_pose_shape(z0, "training_loss_graph");
    const int T = sched.timesteps();
    const int t = std::min(static_cast<int>(stream.next_unit() * T), T - 1);
    const ConditionInputs kept = cfg_dropout(cond, drop_p, stream);
    const Tensor eps = gauss_sample(stream, {kJointCount, 6});
    const Tensor z_t = q_sample(sched, z0, t, eps);

    const DenoiserConfig& config = P.model().config;
    const ContextVars ctx = build_context_graph(tape, P, config, kept, t);
    const Var eps_hat = denoise_graph(tape, P, config, tree, tape.constant(z_t), t, ctx);
    const Var diff = tape.sub(eps_hat, tape.constant(eps));
    return tape.sum(tape.mul(diff, diff));
}

}  // namespace posediff
