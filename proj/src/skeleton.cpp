#include "posediff/skeleton.hpp"

#include <json.hpp>
#include <queue>

#include "posediff/errors.hpp"
#include "posediff/rng.hpp"

namespace posediff {

namespace {

constexpr const char* kJointNames[kJointCount] = {
    "pelvis",     "l_hip",      "r_hip",   "spine1", "l_knee",     "r_knee",     "spine2", "l_ankle",
    "r_ankle",    "spine3",     "l_foot",  "r_foot", "neck",       "l_collar",   "r_collar", "head",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist",   "r_wrist",    "l_hand", "r_hand"};

void compute_derived(KinematicTree& tree) {
    // Pairwise hop counts by BFS over the undirected bone graph.
    std::array<std::vector<int>, kJointCount> adj;
    for (int j = 1; j < kJointCount; ++j) {
        adj[static_cast<size_t>(j)].push_back(tree.parent[static_cast<size_t>(j)]);
        adj[static_cast<size_t>(tree.parent[static_cast<size_t>(j)])].push_back(j);
    }
    tree.max_hops = 0;
    for (int s = 0; s < kJointCount; ++s) {
        auto& dist = tree.hops[static_cast<size_t>(s)];
        dist.fill(-1);
        dist[static_cast<size_t>(s)] = 0;
        std::queue<int> q;
        q.push(s);
        while (!q.empty()) {
            const int u = q.front();
            q.pop();
            for (int v : adj[static_cast<size_t>(u)]) {
                if (dist[static_cast<size_t>(v)] < 0) {
                    dist[static_cast<size_t>(v)] = dist[static_cast<size_t>(u)] + 1;
                    tree.max_hops = std::max(tree.max_hops, dist[static_cast<size_t>(v)]);
                    q.push(v);
                }
            }
        }
    }
    // Distance-band groups relative to the pelvis.
    for (int j = 0; j < kJointCount; ++j) {
        const int d = tree.hops[0][static_cast<size_t>(j)];
        int g = 4;
        if (d == 0)
            g = 0;
        else if (d == 1)
            g = 1;
        else if (d <= 3)
            g = 2;
        else if (d <= 5)
            g = 3;
        tree.group[static_cast<size_t>(j)] = g;
    }
}

KinematicTree build_humanoid24() {
    KinematicTree t;
    t.parent = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
    const double o[kJointCount][3] = {
        {0, 0, 0},          // pelvis
        {+0.09, -0.06, 0},  // l_hip
        {-0.09, -0.06, 0},  // r_hip
        {0, +0.11, 0},      // spine1
        {0, -0.40, 0},      // l_knee
        {0, -0.40, 0},      // r_knee
        {0, +0.13, 0},      // spine2
        {0, -0.42, 0},      // l_ankle
        {0, -0.42, 0},      // r_ankle
        {0, +0.05, 0},      // spine3
        {0, -0.06, +0.13},  // l_foot
        {0, -0.06, +0.13},  // r_foot
        {0, +0.22, 0},      // neck
        {+0.07, +0.12, 0},  // l_collar
        {-0.07, +0.12, 0},  // r_collar
        {0, +0.21, 0},      // head
        {+0.09, +0.04, 0},  // l_shoulder
        {-0.09, +0.04, 0},  // r_shoulder
        {+0.26, 0, 0},      // l_elbow
        {-0.26, 0, 0},      // r_elbow
        {+0.25, 0, 0},      // l_wrist
        {-0.25, 0, 0},      // r_wrist
        {+0.08, 0, 0},      // l_hand
        {-0.08, 0, 0},      // r_hand
    };
    for (int j = 0; j < kJointCount; ++j) t.rest_offset[static_cast<size_t>(j)] = Vec3(o[j][0], o[j][1], o[j][2]);

    // Fixed random shape basis: a unit beta perturbs bone lengths by ~10%
    // (entries N(0, 0.1^2), so E[(row . beta)^2] = 0.01 for unit beta).
    RngStream rng(2801);
    for (int j = 0; j < kJointCount; ++j)
        for (int k = 0; k < 10; ++k) t.shape_basis(j, k) = 0.1 * rng.next_gauss();

    compute_derived(t);
    return t;
}

}  // namespace

const char* joint_name(int j) {
    if (j < 0 || j >= kJointCount) throw ValidationError("joint_name: index out of range");
    return kJointNames[j];
}

const KinematicTree& KinematicTree::humanoid24() {
    static const KinematicTree tree = build_humanoid24();
    return tree;
}

Tensor pose_to_tensor(const Pose& p) {
    Tensor t({kJointCount, 6});
    for (int j = 0; j < kJointCount; ++j)
        for (int k = 0; k < 6; ++k) t.at(j, k) = p.joints[static_cast<size_t>(j)].v[static_cast<size_t>(k)];
    return t;
}

Pose tensor_to_pose(const Tensor& t) {
    if (t.size() != kPoseDim)
        throw ShapeError("tensor_to_pose: expected 144 values, got shape " + t.shape_str());
    Pose p;
    for (int j = 0; j < kJointCount; ++j)
        for (int k = 0; k < 6; ++k) p.joints[static_cast<size_t>(j)].v[static_cast<size_t>(k)] = t[j * 6 + k];
    return p;
}

int skeletal_distance(const KinematicTree& tree, int i, int j) {
    if (i < 0 || i >= kJointCount || j < 0 || j >= kJointCount)
        throw ValidationError("skeletal_distance: joint index out of range");
    return tree.hops[static_cast<size_t>(i)][static_cast<size_t>(j)];
}

int joint_group(const KinematicTree& tree, int i) {
    if (i < 0 || i >= kJointCount) throw ValidationError("joint_group: joint index out of range");
    return tree.group[static_cast<size_t>(i)];
}

std::string tree_to_json(const KinematicTree& tree) {
    nlohmann::json j;
    j["parents"] = tree.parent;
    for (const auto& o : tree.rest_offset) j["offsets"].push_back({o.x(), o.y(), o.z()});
    for (int r = 0; r < kJointCount; ++r) {
        std::vector<double> row(10);
        for (int c = 0; c < 10; ++c) row[static_cast<size_t>(c)] = tree.shape_basis(r, c);
        j["shape_basis"].push_back(row);
    }
    return j.dump(2);
}

KinematicTree tree_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("tree_from_json: ") + e.what());
    }
    KinematicTree t;
    try {
        const auto parents = j.at("parents").get<std::vector<int>>();
        const auto offsets = j.at("offsets").get<std::vector<std::array<double, 3>>>();
        const auto basis = j.at("shape_basis").get<std::vector<std::vector<double>>>();
        if (parents.size() != kJointCount || offsets.size() != kJointCount || basis.size() != kJointCount)
            throw FormatError("tree_from_json: expected 24 joints");
        for (int i = 0; i < kJointCount; ++i) {
            t.parent[static_cast<size_t>(i)] = parents[static_cast<size_t>(i)];
            t.rest_offset[static_cast<size_t>(i)] =
                Vec3(offsets[static_cast<size_t>(i)][0], offsets[static_cast<size_t>(i)][1], offsets[static_cast<size_t>(i)][2]);
            if (basis[static_cast<size_t>(i)].size() != 10) throw FormatError("tree_from_json: basis rows must be length 10");
            for (int k = 0; k < 10; ++k) t.shape_basis(i, k) = basis[static_cast<size_t>(i)][static_cast<size_t>(k)];
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("tree_from_json: ") + e.what());
    }
    if (t.parent[0] != -1) throw FormatError("tree_from_json: joint 0 must be the root");
    for (int i = 1; i < kJointCount; ++i)
        if (t.parent[static_cast<size_t>(i)] < 0 || t.parent[static_cast<size_t>(i)] >= i)
            throw FormatError("tree_from_json: parents must precede children");
    compute_derived(t);
    return t;
}

std::array<double, kJointCount> bone_scales(const KinematicTree& tree, const Shape& shape) {
    Eigen::Matrix<double, 10, 1> beta;
    for (int k = 0; k < 10; ++k) beta[k] = shape.beta[static_cast<size_t>(k)];
    const Eigen::Matrix<double, kJointCount, 1> s = tree.shape_basis * beta;
    std::array<double, kJointCount> out{};
    for (int j = 0; j < kJointCount; ++j) out[static_cast<size_t>(j)] = std::clamp(1.0 + s[j], 0.5, 2.0);
    return out;
}

std::array<Vec3, kJointCount> forward_kinematics(const KinematicTree& tree, const Pose& pose, const Shape& shape) {
    std::vector<Mat3> locals(kJointCount);
    for (int j = 0; j < kJointCount; ++j) locals[static_cast<size_t>(j)] = sixd_to_matrix(pose.joints[static_cast<size_t>(j)]);
    const std::vector<Mat3> globals =
        local_to_global(locals, std::vector<int>(tree.parent.begin(), tree.parent.end()));
    const auto scales = bone_scales(tree, shape);

    std::array<Vec3, kJointCount> pos{};
    pos[0] = Vec3::Zero();
    for (int j = 1; j < kJointCount; ++j) {
        const int p = tree.parent[static_cast<size_t>(j)];
        pos[static_cast<size_t>(j)] =
            pos[static_cast<size_t>(p)] +
            globals[static_cast<size_t>(p)] * (scales[static_cast<size_t>(j)] * tree.rest_offset[static_cast<size_t>(j)]);
    }
    return pos;
}

Eigen::Vector2d project(const Vec3& p, const CameraIntrinsics& cam) {
    if (p.z() <= 1e-6) throw ProjectionError("project: point at or behind the camera plane");
    return {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
}

double geman_mcclure(const std::vector<double>& residual, double sigma) {
    if (sigma <= 0.0) throw ValidationError("geman_mcclure: sigma must be positive");
    const double s2 = sigma * sigma;
    double acc = 0.0;
    for (double r : residual) {
        const double r2 = r * r;
        acc += r2 * s2 / (r2 + s2);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// tape graphs
// ---------------------------------------------------------------------------

Var rotmats_graph(Tape& tape, Var pose) {
    const Tensor& pv = tape.value(pose);
    if (pv.rank() != 2 || pv.rows() != kJointCount || pv.cols() != 6)
        throw ShapeError("rotmats_graph: expected a (24,6) pose tensor, got " + pv.shape_str());
    const Var a = tape.slice_cols(pose, 0, 3);
    const Var b = tape.slice_cols(pose, 3, 6);
    const Var c1 = tape.div_rows(a, tape.sqrt(tape.add_scalar(tape.row_sums(tape.mul(a, a)), 1e-12)));
    const Var proj = tape.mul_rows(c1, tape.row_sums(tape.mul(c1, b)));
    const Var u = tape.sub(b, proj);
    const Var c2 = tape.div_rows(u, tape.sqrt(tape.add_scalar(tape.row_sums(tape.mul(u, u)), 1e-12)));
    const Var c3 = tape.cross3_rows(c1, c2);
    // Row-major 3x3 entries: columns of R interleaved per output row.
    auto col = [&](Var m, int k) { return tape.slice_cols(m, k, k + 1); };
    return tape.concat_cols({col(c1, 0), col(c2, 0), col(c3, 0), col(c1, 1), col(c2, 1), col(c3, 1), col(c1, 2),
                             col(c2, 2), col(c3, 2)});
}

FkVars fk_graph(Tape& tape, const KinematicTree& tree, Var rot9, Var scales) {
    const Tensor& rv = tape.value(rot9);
    if (rv.rank() != 2 || rv.rows() != kJointCount || rv.cols() != 9)
        throw ShapeError("fk_graph: expected (24,9) rotations, got " + rv.shape_str());
    const Tensor& sv = tape.value(scales);
    if (sv.rank() != 1 || sv.dim(0) != kJointCount)
        throw ShapeError("fk_graph: expected a length-24 scale vector, got " + sv.shape_str());

    Tensor offsets({kJointCount, 3});
    for (int j = 0; j < kJointCount; ++j)
        for (int k = 0; k < 3; ++k) offsets.at(j, k) = tree.rest_offset[static_cast<size_t>(j)][k];
    const Var scaled = tape.mul_rows(tape.constant(offsets), scales);

    std::vector<Var> glob(kJointCount), glob9(kJointCount), pos(kJointCount);
    glob9[0] = tape.slice_rows(rot9, 0, 1);
    glob[0] = tape.reshape(glob9[0], {3, 3});
    pos[0] = tape.constant(Tensor::zeros({1, 3}));
    for (int j = 1; j < kJointCount; ++j) {
        const int p = tree.parent[static_cast<size_t>(j)];
        const Var Rj = tape.reshape(tape.slice_rows(rot9, j, j + 1), {3, 3});
        glob[static_cast<size_t>(j)] = tape.matmul(glob[static_cast<size_t>(p)], Rj);
        glob9[static_cast<size_t>(j)] = tape.reshape(glob[static_cast<size_t>(j)], {1, 9});
        // Row-vector form of G_parent * offset.
        const Var disp = tape.matmul_nt(tape.slice_rows(scaled, j, j + 1), glob[static_cast<size_t>(p)]);
        pos[static_cast<size_t>(j)] = tape.add(pos[static_cast<size_t>(p)], disp);
    }
    return FkVars{tape.concat_rows(glob9), tape.concat_rows(pos)};
}

Var project_graph(Tape& tape, Var pts, const CameraIntrinsics& cam) {
    const Tensor& pv = tape.value(pts);
    if (pv.rank() != 2 || pv.cols() != 3) throw ShapeError("project_graph: expected (n,3) points, got " + pv.shape_str());
    const Var z = tape.slice_cols(pts, 2, 3);
    for (std::int64_t i = 0; i < tape.value(z).size(); ++i)
        if (tape.value(z)[i] <= 1e-6) throw ProjectionError("project_graph: point at or behind the camera plane");
    const Var u = tape.add_scalar(tape.scale(tape.div(tape.slice_cols(pts, 0, 1), z), cam.fx), cam.cx);
    const Var v = tape.add_scalar(tape.scale(tape.div(tape.slice_cols(pts, 1, 2), z), cam.fy), cam.cy);
    return tape.concat_cols({u, v});
}

Var geman_mcclure_graph(Tape& tape, Var residual, double sigma) {
    if (sigma <= 0.0) throw ValidationError("geman_mcclure_graph: sigma must be positive");
    const double s2 = sigma * sigma;
    const Var r2 = tape.mul(residual, residual);
    return tape.div(tape.scale(r2, s2), tape.add_scalar(r2, s2));
}

}  // namespace posediff
