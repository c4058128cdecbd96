#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "posediff/errors.hpp"
#include "posediff/rng.hpp"
#include "posediff/rotations.hpp"

using namespace posediff;

namespace {

// Uniform random rotation via a normalized 4-gaussian quaternion.
Mat3 random_rotation(RngStream& rng) {
    Eigen::Vector4d q;
    for (int i = 0; i < 4; ++i) q[i] = rng.next_gauss();
    q.normalize();
    return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

}  // namespace

TEST_SUITE("rotations") {
    TEST_CASE("identity round trips exactly") {
        const SixD r;  // default is the identity's first two columns
        const Mat3 R = sixd_to_matrix(r);
        CHECK((R - Mat3::Identity()).norm() == 0.0);
        const SixD back = matrix_to_sixd(R);
        for (int i = 0; i < 6; ++i) CHECK(back.v[static_cast<size_t>(i)] == r.v[static_cast<size_t>(i)]);
        const UnitQuaternion q = matrix_to_quaternion(R);
        CHECK(q.w == 1.0);
        CHECK(quaternion_geodesic(q, q) == 0.0);
    }

    TEST_CASE("random rotations survive the 6D round trip") {
        RngStream rng(77);
        for (int i = 0; i < 200; ++i) {
            const Mat3 R = random_rotation(rng);
            const Mat3 back = sixd_to_matrix(matrix_to_sixd(R));
            CHECK((back - R).norm() < 1e-12);
        }
    }

    TEST_CASE("gram-schmidt repairs perturbed 6D inputs into valid rotations") {
        RngStream rng(78);
        for (int i = 0; i < 200; ++i) {
            SixD r;
            for (auto& v : r.v) v = rng.next_gauss();  // nowhere near orthonormal
            Mat3 R;
            try {
                R = sixd_to_matrix(r);
            } catch (const ValidationError&) {
                continue;  // measure-zero degenerate draw
            }
            CHECK((R.transpose() * R - Mat3::Identity()).norm() < 1e-12);
            CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
        }
    }

    TEST_CASE("degenerate 6D inputs are rejected") {
        SixD zero_a;
        zero_a.v = {0, 0, 0, 0, 1, 0};
        CHECK_THROWS_AS(sixd_to_matrix(zero_a), ValidationError);
        SixD colinear;
        colinear.v = {1, 2, 3, 2, 4, 6};
        CHECK_THROWS_AS(sixd_to_matrix(colinear), ValidationError);
        SixD near_colinear;
        near_colinear.v = {1, 0, 0, 1 + 1e-12, 1e-13, 0};
        CHECK_THROWS_AS(sixd_to_matrix(near_colinear), ValidationError);
    }

    TEST_CASE("quaternion geodesic recovers the rotation angle") {
        RngStream rng(79);
        const UnitQuaternion id = matrix_to_quaternion(Mat3::Identity());
        for (int i = 0; i < 100; ++i) {
            Vec3 axis(rng.next_gauss(), rng.next_gauss(), rng.next_gauss());
            if (axis.norm() < 0.1) continue;
            axis.normalize();
            const double theta = rng.next_unit() * 3.0 + 0.01;  // (0.01, 3.01) < pi
            const Mat3 R = axis_angle_to_matrix(axis * theta);
            const UnitQuaternion q = matrix_to_quaternion(R);
            CHECK(quaternion_geodesic(id, q) == doctest::Approx(theta).epsilon(1e-9));
        }
    }

    TEST_CASE("geodesic ignores the double cover and canonical form has w >= 0") {
        RngStream rng(80);
        for (int i = 0; i < 100; ++i) {
            const Mat3 R = random_rotation(rng);
            const UnitQuaternion q = matrix_to_quaternion(R);
            CHECK(q.w >= 0.0);
            const UnitQuaternion neg{-q.w, -q.x, -q.y, -q.z};
            // acos near |dot| = 1 resolves angles only to ~sqrt(ulp) = 3e-8.
            CHECK(quaternion_geodesic(q, neg) < 1e-6);
            // The same matrix always converts to the same canonical values.
            const UnitQuaternion q2 = matrix_to_quaternion(R);
            CHECK(q.w == q2.w);
            CHECK(q.x == q2.x);
        }
        // Half-turn rotations sit exactly on the w = 0 seam.
        const Mat3 half = axis_angle_to_matrix(Vec3(0, 0, M_PI));
        const UnitQuaternion qh = matrix_to_quaternion(half);
        CHECK(std::abs(qh.w) < 1e-9);
        CHECK(qh.z > 0.0);
    }

    TEST_CASE("matrix_to_quaternion validates its input") {
        Mat3 skewed = Mat3::Identity();
        skewed(0, 1) = 0.5;
        CHECK_THROWS_AS(matrix_to_quaternion(skewed), ValidationError);
        Mat3 reflection = Mat3::Identity();
        reflection(2, 2) = -1.0;
        CHECK_THROWS_AS(matrix_to_quaternion(reflection), ValidationError);
    }

    TEST_CASE("local_to_global composes along the chain") {
        const Mat3 rz = axis_angle_to_matrix(Vec3(0, 0, M_PI / 2));
        const Mat3 rx = axis_angle_to_matrix(Vec3(M_PI / 3, 0, 0));
        const std::vector<Mat3> locals{rz, rx, rx};
        const std::vector<int> parents{-1, 0, 1};
        const auto globals = local_to_global(locals, parents);
        CHECK((globals[0] - rz).norm() < 1e-15);
        CHECK((globals[1] - rz * rx).norm() < 1e-14);
        CHECK((globals[2] - rz * rx * rx).norm() < 1e-14);
    }

    TEST_CASE("local_to_global matches a recursive oracle on a random tree") {
        RngStream rng(81);
        const std::vector<int> parents{-1, 0, 0, 1, 1, 2, 4, 4, 6, 3};
        std::vector<Mat3> locals;
        for (size_t i = 0; i < parents.size(); ++i) locals.push_back(random_rotation(rng));
        const auto globals = local_to_global(locals, parents);

        // Independent oracle: walk each joint's ancestor path from the root.
        for (size_t j = 0; j < parents.size(); ++j) {
            std::vector<int> path;
            for (int cur = static_cast<int>(j); cur != -1; cur = parents[static_cast<size_t>(cur)])
                path.push_back(cur);
            Mat3 acc = Mat3::Identity();
            for (auto it = path.rbegin(); it != path.rend(); ++it) acc = acc * locals[static_cast<size_t>(*it)];
            CHECK((globals[j] - acc).norm() < 1e-13);
        }
    }

    TEST_CASE("local_to_global validates tree ordering") {
        const std::vector<Mat3> locals(3, Mat3::Identity());
        CHECK_THROWS_AS(local_to_global(locals, {0, 0, 1}), ValidationError);
        CHECK_THROWS_AS(local_to_global(locals, {-1, 2, 1}), ValidationError);
    }

    TEST_CASE("rodrigues formula matches known matrices") {
        const Mat3 R = axis_angle_to_matrix(Vec3(0, 0, M_PI / 2));
        CHECK(R(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(R(0, 1) == doctest::Approx(-1.0));
        CHECK(R(1, 0) == doctest::Approx(1.0));
        CHECK((axis_angle_to_matrix(Vec3::Zero()) - Mat3::Identity()).norm() == 0.0);
    }
}
