#include "posediff/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "posediff/errors.hpp"
#include "posediff/rotations.hpp"

namespace posediff {

namespace {

Tensor ones24() { return Tensor::full({24}, 1.0); }

// tensor_to_pose plus a per-joint Gram-Schmidt check so callers never receive
// a pose that later explodes in FK.
Pose validated_pose(const Tensor& z) {
    Pose pose = tensor_to_pose(z);
    for (int j = 0; j < kJointCount; ++j) (void)sixd_to_matrix(pose.joints[static_cast<size_t>(j)]);
    return pose;
}

void check_weights(const Observation2D& obs) {
    for (int j = 0; j < kJointCount; ++j) {
        const double w = obs.weight[static_cast<size_t>(j)];
        if (!std::isfinite(w) || w < 0)
            throw ValidationError("observation weight for " + std::string(joint_name(j)) + " must be finite and >= 0");
    }
}

Tensor root_offset_tensor(const Observation2D& obs) {
    return Tensor::row({obs.root_offset.x(), obs.root_offset.y(), obs.root_offset.z()});
}

Tensor keypoint_tensor(const Observation2D& obs) {
    Tensor uv({kJointCount, 2});
    for (int j = 0; j < kJointCount; ++j) {
        uv.at(j, 0) = obs.uv[static_cast<size_t>(j)].x();
        uv.at(j, 1) = obs.uv[static_cast<size_t>(j)].y();
    }
    return uv;
}

Tensor weight_tensor(const Observation2D& obs) {
    Tensor w({kJointCount});
    for (int j = 0; j < kJointCount; ++j) w[j] = obs.weight[static_cast<size_t>(j)];
    return w;
}

// Hyperextension angles as a (4,1) graph value; rows follow
// hyperextension_angles() order.  rot9 rows are row-major 3x3 entries, so
// the x-bend reads atan2(R21, R11) = cols (7, 4) and the y-bend
// atan2(R02, R00) = cols (2, 0).
Var hyperextension_graph(Tape& tape, Var rot9) {
    const Var knees = tape.gather_rows(rot9, {kLKnee, kRKnee});
    const Var knee_bend = tape.atan2(tape.slice_cols(knees, 7, 8), tape.slice_cols(knees, 4, 5));
    const Var elbows = tape.gather_rows(rot9, {kLElbow, kRElbow});
    const Var elbow_bend = tape.atan2(tape.slice_cols(elbows, 2, 3), tape.slice_cols(elbows, 0, 1));
    return tape.concat_rows({tape.scale(knee_bend, -1.0),           // knees bend naturally toward +x
                             tape.slice_rows(elbow_bend, 0, 1),     // left elbow toward -y
                             tape.scale(tape.slice_rows(elbow_bend, 1, 2), -1.0)});  // right toward +y
}

}  // namespace

GuidanceResidual reprojection_residual(const KinematicTree& tree, const Observation2D& obs, double gm_sigma) {
    check_weights(obs);
    if (gm_sigma <= 0) throw ValidationError("reprojection_residual: gm_sigma must be positive");
    return [tree, obs, gm_sigma](Tape& tape, Var x0) {
        const Var rot9 = rotmats_graph(tape, x0);
        const FkVars fk = fk_graph(tape, tree, rot9, tape.constant(ones24()));
        const Var cam_pts = tape.add_row(fk.positions, tape.constant(root_offset_tensor(obs)));
        const Var px = project_graph(tape, cam_pts, obs.camera);
        const Var resid = tape.sub(px, tape.constant(keypoint_tensor(obs)));
        const Var gm = geman_mcclure_graph(tape, resid, gm_sigma);
        return tape.sum(tape.mul_rows(gm, tape.constant(weight_tensor(obs))));
    };
}

GuidanceResidual sparse3d_residual(const KinematicTree& tree, const Observation3D& obs) {
    bool any = false;
    for (bool v : obs.visible) any = any || v;
    if (!any) throw ValidationError("sparse3d_residual: no visible joints");

    Tensor target({kJointCount, 3});
    Tensor mask({kJointCount});
    for (int j = 0; j < kJointCount; ++j) {
        for (int k = 0; k < 3; ++k) target.at(j, k) = obs.xyz[static_cast<size_t>(j)][k];
        mask[j] = obs.visible[static_cast<size_t>(j)] ? 1.0 : 0.0;
    }
    return [tree, target, mask](Tape& tape, Var x0) {
        const Var rot9 = rotmats_graph(tape, x0);
        const FkVars fk = fk_graph(tape, tree, rot9, tape.constant(ones24()));
        const Var diff = tape.mul_rows(tape.sub(fk.positions, tape.constant(target)), tape.constant(mask));
        return tape.sum(tape.mul(diff, diff));
    };
}

Pose refine_pose(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                 const Pose& init, const Observation2D& obs, const ConditionInputs& cond,
                 const RefineOptions& opt, int* evals) {
    int used = 0;
    const Tensor z_t = ddim_invert(model, tree, sched, pose_to_tensor(init), opt.t_start, opt.stride, cond, &used);

    SampleOptions sopt;
    sopt.cfg_weight = opt.cfg_weight;
    sopt.residual = reprojection_residual(tree, obs, opt.gm_sigma);
    sopt.rho = opt.rho;
    const SampleResult res =
        sample_over_grid(model, tree, sched, z_t, descend_grid(opt.t_start, opt.stride), cond, sopt);
    if (evals) *evals = used + res.evals;
    return validated_pose(res.z);
}

std::array<double, 4> hyperextension_angles(const Pose& pose) {
    const Mat3 lk = sixd_to_matrix(pose.joints[kLKnee]);
    const Mat3 rk = sixd_to_matrix(pose.joints[kRKnee]);
    const Mat3 le = sixd_to_matrix(pose.joints[kLElbow]);
    const Mat3 re = sixd_to_matrix(pose.joints[kRElbow]);
    return {-std::atan2(lk(2, 1), lk(1, 1)), -std::atan2(rk(2, 1), rk(1, 1)),
            std::atan2(le(0, 2), le(0, 0)), -std::atan2(re(0, 2), re(0, 0))};
}

FitResult smplify_fit(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                      const Observation2D& obs, const Pose& init, const Shape& shape, const SmplifyOptions& opt) {
    check_weights(obs);
    for (double l : opt.lambdas)
        if (!(l >= 0)) throw ValidationError("smplify_fit: lambdas must be >= 0");
    if (opt.iterations < 0) throw ValidationError("smplify_fit: iterations must be >= 0");
    if (opt.step <= 0 || opt.shrink <= 0 || opt.shrink >= 1 || opt.max_backtracks < 1)
        throw ValidationError("smplify_fit: bad line-search settings");
    if (opt.gm_sigma <= 0) throw ValidationError("smplify_fit: gm_sigma must be positive");

    const double l1 = opt.lambdas[0], l2 = opt.lambdas[1], l3 = opt.lambdas[2];

    Tensor theta = pose_to_tensor(init);
    Tensor beta({10, 1});
    for (int k = 0; k < 10; ++k) beta[k] = shape.beta[static_cast<size_t>(k)];

    Tensor basis({kJointCount, 10});
    for (int j = 0; j < kJointCount; ++j)
        for (int k = 0; k < 10; ++k) basis.at(j, k) = tree.shape_basis(j, k);
    const Tensor uv = keypoint_tensor(obs);
    const Tensor wts = weight_tensor(obs);
    const Tensor offset = root_offset_tensor(obs);

    // Manifold projection of the current pose: deterministic forward to
    // prior_t (zero-noise q_sample) and a short unconditional DDIM back.
    // Treated as a constant in the objective's gradient.
    const auto project_pose = [&](const Tensor& th) {
        Tensor z = th;
        const double root = std::sqrt(sched.alpha_bar(opt.prior_t));
        for (std::int64_t i = 0; i < z.size(); ++i) z[i] *= root;
        SampleOptions so;
        so.cfg_weight = 0.0;
        return sample_over_grid(model, tree, sched, z, descend_grid(opt.prior_t, opt.prior_stride), {}, so).z;
    };

    struct Eval {
        double loss = 0;
        Tensor g_theta;
        Tensor g_beta;
    };
    const auto evaluate = [&](const Tensor& th, const Tensor& be, bool want_grad) {
        const Tensor prior_target = l1 > 0 ? project_pose(th) : Tensor();
        Tape tape;
        const Var th_v = tape.input(th);
        const Var be_v = tape.input(be);
        const Var rot9 = rotmats_graph(tape, th_v);
        const Var scales =
            tape.clamp(tape.add_scalar(tape.reshape(tape.matmul(tape.constant(basis), be_v), {24}), 1.0), 0.5, 2.0);
        const FkVars fk = fk_graph(tape, tree, rot9, scales);
        const Var px = project_graph(tape, tape.add_row(fk.positions, tape.constant(offset)), obs.camera);
        const Var gm = geman_mcclure_graph(tape, tape.sub(px, tape.constant(uv)), opt.gm_sigma);
        Var loss = tape.sum(tape.mul_rows(gm, tape.constant(wts)));
        if (l1 > 0) {
            const Var d = tape.sub(th_v, tape.constant(prior_target));
            loss = tape.add(loss, tape.scale(tape.sum(tape.mul(d, d)), l1));
        }
        if (l2 > 0) loss = tape.add(loss, tape.scale(tape.sum(tape.mul(be_v, be_v)), l2));
        if (l3 > 0) loss = tape.add(loss, tape.scale(tape.sum(tape.exp(hyperextension_graph(tape, rot9))), l3));

        Eval ev;
        ev.loss = tape.value(loss)[0];
        if (want_grad) {
            tape.backward(loss);
            ev.g_theta = tape.grad(th_v);
            ev.g_beta = tape.grad(be_v);
        }
        return ev;
    };

    FitResult out;
    double cur;
    try {
        cur = evaluate(theta, beta, false).loss;
    } catch (const NumericError& e) {
        throw OptimizationError("smplify_fit: loss diverged at iteration 0 (" + std::string(e.what()) + ")");
    }
    out.loss_history.push_back(cur);

    for (int it = 0; it < opt.iterations; ++it) {
        Eval e;
        try {
            e = evaluate(theta, beta, true);
        } catch (const NumericError& err) {
            throw OptimizationError("smplify_fit: loss diverged at iteration " + std::to_string(it) + " (" +
                                    err.what() + ")");
        }
        double gmax = 0;
        for (std::int64_t i = 0; i < e.g_theta.size(); ++i) gmax = std::max(gmax, std::abs(e.g_theta[i]));
        for (std::int64_t i = 0; i < e.g_beta.size(); ++i) gmax = std::max(gmax, std::abs(e.g_beta[i]));
        if (gmax < 1e-12) break;  // stationary: e.g. a perfect init with zero lambdas

        bool accepted = false;
        double step = opt.step;
        for (int bt = 0; bt < opt.max_backtracks && !accepted; ++bt) {
            Tensor th_c = theta;
            Tensor be_c = beta;
            for (std::int64_t i = 0; i < th_c.size(); ++i) th_c[i] -= step * e.g_theta[i];
            for (std::int64_t i = 0; i < be_c.size(); ++i) be_c[i] -= step * e.g_beta[i];

            double cand;
            try {
                cand = evaluate(th_c, be_c, false).loss;
            } catch (const ProjectionError&) {
                step *= opt.shrink;  // candidate pushed a joint behind the camera
                continue;
            } catch (const NumericError&) {
                step *= opt.shrink;  // overshoot went non-finite; not divergence yet
                continue;
            }
            if (cand <= cur) {
                theta = std::move(th_c);
                beta = std::move(be_c);
                cur = cand;
                accepted = true;
            } else {
                step *= opt.shrink;
            }
        }
        if (!accepted) break;  // no acceptable step along -g at any scale
        out.loss_history.push_back(cur);
        ++out.accepted_steps;
    }

    out.pose = validated_pose(theta);
    for (int k = 0; k < 10; ++k) out.shape.beta[static_cast<size_t>(k)] = beta[k];
    return out;
}

Pose complete_pose(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                   const Observation3D& obs, RngStream& stream, const ConditionInputs& cond,
                   const CompleteOptions& opt, int* evals) {
    const std::vector<int> grid = linspace_grid(opt.t_start, opt.t_stop, opt.steps);
    int used = 0;
    Tensor z;
    if (opt.invert_from) {
        z = ddim_invert(model, tree, sched, pose_to_tensor(*opt.invert_from), opt.t_start, opt.invert_stride, cond,
                        &used);
    } else {
        z = gauss_sample(stream, {kJointCount, 6});
    }

    SampleOptions sopt;
    sopt.cfg_weight = opt.cfg_weight;
    sopt.residual = sparse3d_residual(tree, obs);
    sopt.rho = opt.rho;
    const SampleResult res = sample_over_grid(model, tree, sched, std::move(z), grid, cond, sopt);
    if (evals) *evals = used + res.evals;
    return validated_pose(res.z);
}

Pose denoise_pose(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                  const Pose& noisy, int* evals) {
    // The corrupted pose is read as the level-400 latent directly; no noise
    // is added and no conditioning is applied.
    const SampleResult res =
        sample_over_grid(model, tree, sched, pose_to_tensor(noisy), descend_grid(400, 5), {}, SampleOptions{});
    if (evals) *evals = res.evals;
    return validated_pose(res.z);
}

Scenario scenario_from_name(const std::string& name) {
    if (name == "occ_arm") return Scenario::kOccArm;
    if (name == "occ_legs") return Scenario::kOccLegs;
    if (name == "end_effectors") return Scenario::kEndEffectors;
    throw ValidationError("unknown occlusion scenario '" + name + "' (expected occ_arm, occ_legs or end_effectors)");
}

const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::kOccArm: return "occ_arm";
        case Scenario::kOccLegs: return "occ_legs";
        case Scenario::kEndEffectors: return "end_effectors";
    }
    throw ValidationError("scenario_name: bad enum value");
}

Observation3D make_scenario(Scenario scenario, const Pose& gt, const Shape& shape, const KinematicTree& tree) {
    Observation3D obs;
    obs.xyz = forward_kinematics(tree, gt, shape);
    obs.visible.fill(true);
    switch (scenario) {
        case Scenario::kOccArm:
            for (int j : {kLCollar, kLShoulder, kLElbow, kLWrist, kLHand}) obs.visible[static_cast<size_t>(j)] = false;
            break;
        case Scenario::kOccLegs:
            for (int j : {kLHip, kRHip, kLKnee, kRKnee, kLAnkle, kRAnkle, kLFoot, kRFoot})
                obs.visible[static_cast<size_t>(j)] = false;
            break;
        case Scenario::kEndEffectors:
            obs.visible.fill(false);
            for (int j : {kLWrist, kRWrist, kLAnkle, kRAnkle, kHead}) obs.visible[static_cast<size_t>(j)] = true;
            break;
    }
    return obs;
}

}  // namespace posediff
