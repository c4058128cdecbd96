#pragma once

#include <string>
#include <vector>

#include "posediff/skeleton.hpp"
#include "posediff/tensor.hpp"

namespace posediff {

// Feature map shared by FID and APD: body-frame FK joint positions at neutral
// shape, flattened to 72 reals (meters).
Tensor pose_features(const Pose& pose, const KinematicTree& tree);
// Rows of pose_features for a whole set, (n, 72).
Tensor pose_feature_matrix(const std::vector<Pose>& poses, const KinematicTree& tree);

// Gaussian fit of a feature matrix: sample mean and covariance plus a 1e-6
// ridge so degenerate sets stay PSD.
struct GaussianStats {
    Tensor mean;        // (d)
    Tensor covariance;  // (d, d)
};
GaussianStats fit_gaussian(const Tensor& features);

// Frechet distance between Gaussian fits of two feature matrices:
//   |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}),
// with the matrix square root taken through the symmetric eigendecomposition
// of Sa^{1/2} Sb Sa^{1/2}.  Sets smaller than d+1 rows are rank-deficient and
// lean on the ridge; values are then dominated by the regularizer.
double fid_from_features(const Tensor& fa, const Tensor& fb);
double fid(const std::vector<Pose>& a, const std::vector<Pose>& b, const KinematicTree& tree);

// Average pairwise distance: mean Euclidean distance between pose features
// over all unordered pairs, in centimeters.  Needs at least two poses.
double apd(const std::vector<Pose>& set, const KinematicTree& tree);

// Mean nearest-neighbour distance from each sample to the reference set:
// per pose pair, the 23 non-root joints' local-rotation geodesics are summed
// and divided by 23 (radians); the root is excluded so global orientation
// does not dominate.
double d_nn(const std::vector<Pose>& samples, const std::vector<Pose>& reference);

// Mean global-frame geodesic over all 24 joints (radians): local rotations
// are composed down the tree before comparison, so a root error propagates to
// every joint.
double delta_q(const Pose& pred, const Pose& gt, const KinematicTree& tree);

// Procrustes-aligned mean per-joint position error in millimeters: the
// optimal similarity transform (rotation, scale, translation) maps pred onto
// gt before measuring.  Point sets need >= 3 non-collinear points.
double pa_mpjpe(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt);

// Root-aligned mean joint-to-joint FK distance in millimeters (both poses
// evaluated at the given shape).
double j2j(const Pose& pred, const Pose& gt, const Shape& shape, const KinematicTree& tree);

// CSV report with a "metric,set_a,set_b,value" header; values keep full
// double precision.
struct MetricRow {
    std::string metric;
    std::string set_a;
    std::string set_b;
    double value = 0;
};
std::string metrics_to_csv(const std::vector<MetricRow>& rows);

}  // namespace posediff
