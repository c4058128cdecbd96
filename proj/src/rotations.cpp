#include "posediff/rotations.hpp"

#include <cmath>

#include "posediff/errors.hpp"

namespace posediff {

namespace {
constexpr double kDegenerate = 1e-8;
}

Mat3 sixd_to_matrix(const SixD& r) {
    const Vec3 a = r.a();
    const double na = a.norm();
    if (na < kDegenerate) throw ValidationError("sixd_to_matrix: first 3-vector is numerically zero");
    const Vec3 c1 = a / na;
    const Vec3 u = r.b() - c1.dot(r.b()) * c1;
    const double nu = u.norm();
    if (nu < kDegenerate) throw ValidationError("sixd_to_matrix: input vectors are numerically colinear");
    const Vec3 c2 = u / nu;
    const Vec3 c3 = c1.cross(c2);
    Mat3 R;
    R.col(0) = c1;
    R.col(1) = c2;
    R.col(2) = c3;
    return R;
}

SixD matrix_to_sixd(const Mat3& R) {
    SixD r;
    for (int i = 0; i < 3; ++i) {
        r.v[static_cast<size_t>(i)] = R(i, 0);
        r.v[static_cast<size_t>(i + 3)] = R(i, 1);
    }
    return r;
}

UnitQuaternion matrix_to_quaternion(const Mat3& R) {
    if ((R.transpose() * R - Mat3::Identity()).norm() > 1e-6 || R.determinant() < 0.0)
        throw ValidationError("matrix_to_quaternion: input is not a rotation matrix");
    Eigen::Quaterniond q(R);
    q.normalize();
    // Canonicalize the double cover: w >= 0, ties broken by the first nonzero
    // component so equal rotations always serialize identically.
    double sign = 1.0;
    if (q.w() < 0)
        sign = -1.0;
    else if (q.w() == 0) {
        if (q.x() < 0)
            sign = -1.0;
        else if (q.x() == 0 && q.y() < 0)
            sign = -1.0;
        else if (q.x() == 0 && q.y() == 0 && q.z() < 0)
            sign = -1.0;
    }
    return UnitQuaternion{sign * q.w(), sign * q.x(), sign * q.y(), sign * q.z()};
}

double quaternion_geodesic(const UnitQuaternion& q1, const UnitQuaternion& q2) {
    const double dot = q1.w * q2.w + q1.x * q2.x + q1.y * q2.y + q1.z * q2.z;
    const double c = std::min(std::abs(dot), 1.0);
    return 2.0 * std::acos(c);
}

std::vector<Mat3> local_to_global(const std::vector<Mat3>& local, const std::vector<int>& parents) {
    if (local.size() != parents.size()) throw ValidationError("local_to_global: size mismatch");
    if (parents.empty() || parents[0] != -1) throw ValidationError("local_to_global: joint 0 must be the root");
    std::vector<Mat3> global(local.size());
    global[0] = local[0];
    for (size_t i = 1; i < local.size(); ++i) {
        const int p = parents[i];
        if (p < 0 || static_cast<size_t>(p) >= i)
            throw ValidationError("local_to_global: parents must precede children");
        global[i] = global[static_cast<size_t>(p)] * local[i];
    }
    return global;
}

Mat3 axis_angle_to_matrix(const Vec3& aa) {
    const double theta = aa.norm();
    if (theta < 1e-12) return Mat3::Identity();
    const Vec3 axis = aa / theta;
    return Eigen::AngleAxisd(theta, axis).toRotationMatrix();
}

Vec3 matrix_to_axis_angle(const Mat3& R) {
    if ((R.transpose() * R - Mat3::Identity()).norm() > 1e-6 || R.determinant() < 0.0)
        throw ValidationError("matrix_to_axis_angle: input is not a rotation matrix");
    const Eigen::AngleAxisd aa(R);
    return aa.angle() * aa.axis();
}

}  // namespace posediff
