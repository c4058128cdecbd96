#include "posediff/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "posediff/errors.hpp"

namespace posediff {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd to_eigen(const Tensor& t) {
    MatrixXd m(t.rows(), t.cols());
    for (int r = 0; r < t.rows(); ++r)
        for (int c = 0; c < t.cols(); ++c) m(r, c) = t.at(r, c);
    return m;
}

// Symmetric PSD square root; tiny negative eigenvalues from roundoff clamp
// to zero.
MatrixXd sqrt_psd(const MatrixXd& m) {
    const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(m);
    VectorXd lam = eig.eigenvalues();
    for (int i = 0; i < lam.size(); ++i) lam[i] = std::sqrt(std::max(lam[i], 0.0));
    return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

std::array<UnitQuaternion, kJointCount> local_quaternions(const Pose& pose) {
    std::array<UnitQuaternion, kJointCount> q;
    for (int j = 0; j < kJointCount; ++j)
        q[static_cast<size_t>(j)] = matrix_to_quaternion(sixd_to_matrix(pose.joints[static_cast<size_t>(j)]));
    return q;
}

}  // namespace

Tensor pose_features(const Pose& pose, const KinematicTree& tree) {
    const auto joints = forward_kinematics(tree, pose, Shape{});
    Tensor f({72});
    for (int j = 0; j < kJointCount; ++j)
        for (int k = 0; k < 3; ++k) f[3 * j + k] = joints[static_cast<size_t>(j)][k];
    return f;
}

Tensor pose_feature_matrix(const std::vector<Pose>& poses, const KinematicTree& tree) {
    if (poses.empty()) throw ValidationError("pose_feature_matrix: empty pose set");
    Tensor m({static_cast<int>(poses.size()), 72});
    for (size_t i = 0; i < poses.size(); ++i) {
        const Tensor f = pose_features(poses[i], tree);
        for (int k = 0; k < 72; ++k) m.at(static_cast<int>(i), k) = f[k];
    }
    return m;
}

GaussianStats fit_gaussian(const Tensor& features) {
    if (features.rank() != 2 || features.rows() < 1) throw ValidationError("fit_gaussian: need a (n, d) matrix");
    const int n = features.rows(), d = features.cols();
    GaussianStats g{Tensor::zeros({d}), Tensor::zeros({d, d})};
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) g.mean[c] += features.at(r, c);
    for (int c = 0; c < d; ++c) g.mean[c] /= n;
    if (n > 1) {
        for (int r = 0; r < n; ++r)
            for (int i = 0; i < d; ++i) {
                const double di = features.at(r, i) - g.mean[i];
                for (int j = i; j < d; ++j) g.covariance.at(i, j) += di * (features.at(r, j) - g.mean[j]);
            }
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) {
                g.covariance.at(i, j) /= n - 1;
                g.covariance.at(j, i) = g.covariance.at(i, j);
            }
    }
    for (int i = 0; i < d; ++i) g.covariance.at(i, i) += 1e-6;
    return g;
}

double fid_from_features(const Tensor& fa, const Tensor& fb) {
    if (fa.rank() != 2 || fb.rank() != 2 || fa.cols() != fb.cols())
        throw ShapeError("fid_from_features: feature matrices must share their width");
    const GaussianStats a = fit_gaussian(fa), b = fit_gaussian(fb);
    const int d = fa.cols();
    double mean_sq = 0;
    for (int i = 0; i < d; ++i) {
        const double diff = a.mean[i] - b.mean[i];
        mean_sq += diff * diff;
    }
    const MatrixXd sa = to_eigen(a.covariance), sb = to_eigen(b.covariance);
    const MatrixXd sa_half = sqrt_psd(sa);
    const MatrixXd cross = sqrt_psd(sa_half * sb * sa_half);
    return mean_sq + sa.trace() + sb.trace() - 2.0 * cross.trace();
}

double fid(const std::vector<Pose>& a, const std::vector<Pose>& b, const KinematicTree& tree) {
    return fid_from_features(pose_feature_matrix(a, tree), pose_feature_matrix(b, tree));
}

double apd(const std::vector<Pose>& set, const KinematicTree& tree) {
    if (set.size() < 2) throw ValidationError("apd: need at least two poses");
    const Tensor f = pose_feature_matrix(set, tree);
    const int n = f.rows();
    double acc = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double sq = 0;
            for (int k = 0; k < 72; ++k) {
                const double d = f.at(i, k) - f.at(j, k);
                sq += d * d;
            }
            acc += std::sqrt(sq);
        }
    return acc / (0.5 * n * (n - 1)) * 100.0;  // meters -> centimeters
}

double d_nn(const std::vector<Pose>& samples, const std::vector<Pose>& reference) {
    if (samples.empty() || reference.empty()) throw ValidationError("d_nn: empty pose set");
    std::vector<std::array<UnitQuaternion, kJointCount>> ref_q;
    ref_q.reserve(reference.size());
    for (const Pose& p : reference) ref_q.push_back(local_quaternions(p));

    double acc = 0;
    for (const Pose& sample : samples) {
        const auto sq = local_quaternions(sample);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& rq : ref_q) {
            double sum = 0;
            for (int j = 1; j < kJointCount; ++j)  // root (global orientation) excluded
                sum += quaternion_geodesic(sq[static_cast<size_t>(j)], rq[static_cast<size_t>(j)]);
            best = std::min(best, sum);
        }
        acc += best / (kJointCount - 1);
    }
    return acc / static_cast<double>(samples.size());
}

double delta_q(const Pose& pred, const Pose& gt, const KinematicTree& tree) {
    std::vector<Mat3> lp(kJointCount), lg(kJointCount);
    for (int j = 0; j < kJointCount; ++j) {
        lp[static_cast<size_t>(j)] = sixd_to_matrix(pred.joints[static_cast<size_t>(j)]);
        lg[static_cast<size_t>(j)] = sixd_to_matrix(gt.joints[static_cast<size_t>(j)]);
    }
    const std::vector<int> parents(tree.parent.begin(), tree.parent.end());
    const std::vector<Mat3> gp = local_to_global(lp, parents);
    const std::vector<Mat3> gg = local_to_global(lg, parents);
    double acc = 0;
    for (int j = 0; j < kJointCount; ++j)
        acc += quaternion_geodesic(matrix_to_quaternion(gp[static_cast<size_t>(j)]),
                                   matrix_to_quaternion(gg[static_cast<size_t>(j)]));
    return acc / kJointCount;
}

double pa_mpjpe(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
    if (pred.size() != gt.size()) throw ShapeError("pa_mpjpe: point counts differ");
    const int n = static_cast<int>(pred.size());
    if (n < 3) throw ValidationError("pa_mpjpe: need at least 3 points");
    MatrixXd src(3, n), dst(3, n);
    for (int i = 0; i < n; ++i) {
        src.col(i) = pred[static_cast<size_t>(i)];
        dst.col(i) = gt[static_cast<size_t>(i)];
    }
    // Collinear clouds leave the aligning rotation underdetermined.
    const MatrixXd centered = dst.colwise() - dst.rowwise().mean();
    const Eigen::JacobiSVD<MatrixXd> svd(centered);
    if (svd.singularValues()[1] <= 1e-9 * std::max(svd.singularValues()[0], 1e-300))
        throw ValidationError("pa_mpjpe: degenerate (collinear) ground-truth points");

    const Eigen::Matrix4d T = Eigen::umeyama(src, dst, /*with_scaling=*/true);
    double acc = 0;
    for (int i = 0; i < n; ++i) {
        const Vec3 mapped = T.topLeftCorner<3, 3>() * src.col(i) + T.topRightCorner<3, 1>();
        acc += (mapped - dst.col(i)).norm();
    }
    return acc / n * 1000.0;  // meters -> millimeters
}

double j2j(const Pose& pred, const Pose& gt, const Shape& shape, const KinematicTree& tree) {
    const auto jp = forward_kinematics(tree, pred, shape);
    const auto jg = forward_kinematics(tree, gt, shape);
    // FK roots both bodies at the origin, which is exactly root alignment.
    double acc = 0;
    for (int j = 0; j < kJointCount; ++j) acc += (jp[static_cast<size_t>(j)] - jg[static_cast<size_t>(j)]).norm();
    return acc / kJointCount * 1000.0;
}

std::string metrics_to_csv(const std::vector<MetricRow>& rows) {
    std::ostringstream out;
    out << "metric,set_a,set_b,value\n";
    out.precision(17);
    for (const MetricRow& r : rows) out << r.metric << ',' << r.set_a << ',' << r.set_b << ',' << r.value << '\n';
    return out.str();
}

}  // namespace posediff
