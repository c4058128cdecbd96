#pragma once

#include <Eigen/Dense>
#include <array>
#include <vector>

namespace posediff {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

// Continuous 6D rotation parametrization: the first two columns of a rotation
// matrix, stored as [a0 a1 a2 b0 b1 b2].  Decoding runs Gram-Schmidt on (a, b)
// so any non-degenerate pair of vectors maps to a valid rotation.
struct SixD {
    std::array<double, 6> v{1, 0, 0, 0, 1, 0};

    Vec3 a() const { return Vec3(v[0], v[1], v[2]); }
    Vec3 b() const { return Vec3(v[3], v[4], v[5]); }
};

// Unit quaternion with the w >= 0 canonical sign (antipodal pairs collapse to
// one representative).
struct UnitQuaternion {
    double w = 1, x = 0, y = 0, z = 0;
};

// Gram-Schmidt decode.  Throws ValidationError when a is (near) zero or b is
// (near) colinear with a.
Mat3 sixd_to_matrix(const SixD& r);

// Drops the third column.
SixD matrix_to_sixd(const Mat3& R);

// Converts an orthonormal matrix (validated to 1e-6, det +1) to the canonical
// unit quaternion.
UnitQuaternion matrix_to_quaternion(const Mat3& R);

// Geodesic distance on SO(3) in radians: 2*acos(clamp(|<q1,q2>|, 0, 1)).
// Insensitive to the sign ambiguity of either argument.
double quaternion_geodesic(const UnitQuaternion& q1, const UnitQuaternion& q2);

// Composes per-joint local rotations into global ones along a kinematic tree.
// parents[0] must be -1 (root) and parents[i] < i for every other joint.
std::vector<Mat3> local_to_global(const std::vector<Mat3>& local, const std::vector<int>& parents);

// Rodrigues formula; the zero vector maps to the identity.
Mat3 axis_angle_to_matrix(const Vec3& aa);

// Inverse of the above for rotations short of a half turn (angle in [0, pi],
// identity maps to the zero vector).
Vec3 matrix_to_axis_angle(const Mat3& R);

}  // namespace posediff
