#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "posediff/data.hpp"
#include "posediff/errors.hpp"
#include "posediff/metrics.hpp"
#include "posediff/rng.hpp"
#include "posediff/rotations.hpp"
#include "posediff/skeleton.hpp"
#include "test_util.hpp"

using namespace posediff;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<Pose> corpus_poses(int n, std::uint64_t seed) {
    CorpusSpec spec;
    spec.size = n;
    spec.seed = seed;
    std::vector<Pose> poses;
    for (const PoseRecord& rec : synth_corpus(spec)) poses.push_back(rec.pose);
    return poses;
}

Pose rotated_pose(int joint, const Vec3& axis_angle) {
    Pose p;
    p.joints[static_cast<size_t>(joint)] = matrix_to_sixd(axis_angle_to_matrix(axis_angle));
    return p;
}

Vec3 random_axis(RngStream& rng) {
    Vec3 v(rng.next_gauss(), rng.next_gauss(), rng.next_gauss());
    return v.normalized();
}

// Alignment oracle for pa_mpjpe: random-restart hill climb over rotations.
// For a fixed rotation the least-squares scale is closed form (translation
// vanishes on centered clouds), and the squared fitting error is minimized by
// maximizing sum_i y_i . (R x_i).  The climb converges to the same rotation
// the analytic solver picks, so the reported mean norm matches to well under
// a micron.
double alignment_oracle(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt, RngStream& rng) {
    const int n = static_cast<int>(pred.size());
    Vec3 cp = Vec3::Zero(), cg = Vec3::Zero();
    for (int i = 0; i < n; ++i) {
        cp += pred[static_cast<size_t>(i)];
        cg += gt[static_cast<size_t>(i)];
    }
    cp /= n;
    cg /= n;
    std::vector<Vec3> x, y;
    for (int i = 0; i < n; ++i) {
        x.push_back(pred[static_cast<size_t>(i)] - cp);
        y.push_back(gt[static_cast<size_t>(i)] - cg);
    }
    const auto correlation = [&](const Mat3& R) {
        double num = 0;
        for (int i = 0; i < n; ++i) num += y[static_cast<size_t>(i)].dot(R * x[static_cast<size_t>(i)]);
        return num;
    };

    Mat3 best = Mat3::Identity();
    double best_num = correlation(best);
    for (int k = 0; k < 3000; ++k) {
        const Mat3 R = axis_angle_to_matrix(random_axis(rng) * (rng.next_unit() * kPi));
        const double num = correlation(R);
        if (num > best_num) {
            best_num = num;
            best = R;
        }
    }
    double step = 0.5;
    for (int k = 0; k < 4000; ++k) {
        const Mat3 R = axis_angle_to_matrix(random_axis(rng) * (step * rng.next_gauss())) * best;
        const double num = correlation(R);
        if (num > best_num) {
            best_num = num;
            best = R;
        }
        step *= 0.9975;
    }

    double den = 0;
    for (int i = 0; i < n; ++i) den += x[static_cast<size_t>(i)].squaredNorm();
    const double s = best_num / den;
    double err = 0;
    for (int i = 0; i < n; ++i) err += (s * (best * x[static_cast<size_t>(i)]) - y[static_cast<size_t>(i)]).norm();
    return err / n * 1000.0;
}

}  // namespace

TEST_SUITE("metrics") {
    TEST_CASE("fit_gaussian matches a hand-computed mean and sample covariance") {
        const Tensor f({3, 2}, {1, 2, 3, 4, 5, 9});
        const GaussianStats g = fit_gaussian(f);
        CHECK(g.mean[0] == doctest::Approx(3.0));
        CHECK(g.mean[1] == doctest::Approx(5.0));
        // n-1 normalization: var_x = 4, cov = 7, var_y = 13, plus the ridge.
        CHECK(g.covariance.at(0, 0) == doctest::Approx(4.0 + 1e-6));
        CHECK(g.covariance.at(0, 1) == doctest::Approx(7.0));
        CHECK(g.covariance.at(1, 0) == doctest::Approx(7.0));
        CHECK(g.covariance.at(1, 1) == doctest::Approx(13.0 + 1e-6));

        const GaussianStats single = fit_gaussian(Tensor({1, 2}, {4, -2}));
        CHECK(single.mean[0] == 4.0);
        CHECK(single.covariance.at(0, 0) == 1e-6);
        CHECK(single.covariance.at(0, 1) == 0.0);

        CHECK_THROWS_AS(fit_gaussian(Tensor({4})), ValidationError);
    }

    TEST_CASE("fid of a set against itself is zero and the distance is symmetric") {
        const KinematicTree tree = KinematicTree::humanoid24();
        const std::vector<Pose> a = corpus_poses(40, 11);
        const std::vector<Pose> b = corpus_poses(40, 12);
        CHECK(std::abs(fid(a, a, tree)) < 1e-8);
        const double ab = fid(a, b, tree);
        const double ba = fid(b, a, tree);
        CHECK(ab > 0.0);
        CHECK(ab == doctest::Approx(ba).epsilon(1e-9));
    }

    TEST_CASE("fid recovers the closed form for synthetic diagonal Gaussians") {
        // For N(m1, diag(s1^2)) vs N(m2, diag(s2^2)) the distance is
        // |m1 - m2|^2 + sum_i (s1_i - s2_i)^2.  Sampling noise at n = 4000,
        // d = 8 stays well inside 5%.
        const int n = 4000, d = 8;
        RngStream rng(808);
        const auto draw = [&](const std::array<double, 8>& mean, const std::array<double, 8>& sd) {
            Tensor f({n, d});
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < d; ++c)
                    f.at(r, c) = mean[static_cast<size_t>(c)] + sd[static_cast<size_t>(c)] * rng.next_gauss();
            return f;
        };
        const std::array<double, 8> zero{}, unit{1, 1, 1, 1, 1, 1, 1, 1};

        SUBCASE("mean offset only") {
            const double m = 1.0 / std::sqrt(2.0);  // |m|^2 = 8 * 0.5 = 4
            const Tensor fa = draw(zero, unit);
            const Tensor fb = draw({m, m, m, m, m, m, m, m}, unit);
            CHECK(fid_from_features(fa, fb) == doctest::Approx(4.0).epsilon(0.05));
        }
        SUBCASE("covariance mismatch only") {
            const std::array<double, 8> sd{0.5, 0.8, 1.2, 1.5, 1.0, 1.0, 2.0, 0.7};
            double expect = 0;
            for (double s : sd) expect += (s - 1.0) * (s - 1.0);  // 1.67
            const Tensor fa = draw(zero, unit);
            const Tensor fb = draw(zero, sd);
            CHECK(fid_from_features(fa, fb) == doctest::Approx(expect).epsilon(0.05));
        }
    }

    TEST_CASE("fid rejects mismatched feature widths") {
        CHECK_THROWS_AS(fid_from_features(Tensor::zeros({5, 3}), Tensor::zeros({5, 4})), ShapeError);
    }

    TEST_CASE("apd matches a brute-force pairwise recomputation") {
        const KinematicTree tree = KinematicTree::humanoid24();
        const std::vector<Pose> poses = corpus_poses(6, 21);
        const Tensor f = pose_feature_matrix(poses, tree);
        double acc = 0;
        int pairs = 0;
        for (int i = 0; i < f.rows(); ++i)
            for (int j = i + 1; j < f.rows(); ++j) {
                double sq = 0;
                for (int k = 0; k < 72; ++k) {
                    const double d = f.at(i, k) - f.at(j, k);
                    sq += d * d;
                }
                acc += std::sqrt(sq);
                ++pairs;
            }
        CHECK(apd(poses, tree) == acc / pairs * 100.0);

        SUBCASE("identical poses have zero diversity") {
            CHECK(apd({poses[0], poses[0], poses[0]}, tree) == 0.0);
        }
        SUBCASE("two poses reduce to their feature distance in centimeters") {
            double sq = 0;
            for (int k = 0; k < 72; ++k) {
                const double d = f.at(0, k) - f.at(1, k);
                sq += d * d;
            }
            CHECK(apd({poses[0], poses[1]}, tree) == doctest::Approx(std::sqrt(sq) * 100.0));
        }
        SUBCASE("a single pose is rejected") {
            CHECK_THROWS_AS(apd({poses[0]}, tree), ValidationError);
        }
    }

    TEST_CASE("d_nn matches an exhaustive double loop over local geodesics") {
        const std::vector<Pose> samples = corpus_poses(5, 31);
        const std::vector<Pose> reference = corpus_poses(7, 32);
        double acc = 0;
        for (const Pose& s : samples) {
            double best = 1e300;
            for (const Pose& r : reference) {
                double sum = 0;
                for (int j = 1; j < kJointCount; ++j) {
                    const auto qs = matrix_to_quaternion(sixd_to_matrix(s.joints[static_cast<size_t>(j)]));
                    const auto qr = matrix_to_quaternion(sixd_to_matrix(r.joints[static_cast<size_t>(j)]));
                    sum += quaternion_geodesic(qs, qr);
                }
                best = std::min(best, sum);
            }
            acc += best / (kJointCount - 1);
        }
        CHECK(d_nn(samples, reference) == acc / static_cast<double>(samples.size()));
    }

    TEST_CASE("d_nn is zero for subsets and ignores the root joint") {
        const std::vector<Pose> reference = corpus_poses(8, 41);
        const std::vector<Pose> subset{reference[2], reference[5]};
        // acos near 1 resolves identical rotations to ~1e-9, not exactly 0.
        CHECK(d_nn(subset, reference) < 1e-7);

        // Rotating only the root leaves every non-root local rotation equal.
        Pose spun = reference[0];
        spun.joints[0] = matrix_to_sixd(axis_angle_to_matrix(Vec3(0.4, -0.2, 1.1)));
        CHECK(d_nn({spun}, {reference[0]}) < 1e-7);

        CHECK_THROWS_AS(d_nn({}, reference), ValidationError);
        CHECK_THROWS_AS(d_nn(reference, {}), ValidationError);
    }

    TEST_CASE("d_nn pins a single-joint quarter turn at (pi/2)/23") {
        const Pose neutral;
        const Pose bent = rotated_pose(kRKnee, Vec3(kPi / 2, 0, 0));
        CHECK(d_nn({bent}, {neutral}) == doctest::Approx((kPi / 2) / 23.0).epsilon(1e-6));
    }

    TEST_CASE("delta_q is zero on identical poses and equals the root angle under a root spin") {
        const KinematicTree tree = KinematicTree::humanoid24();
        const Pose pose = corpus_poses(1, 51)[0];
        CHECK(delta_q(pose, pose, tree) < 1e-7);

        // A root-only rotation shifts every global frame by the same angle.
        Pose spun = pose;
        const Mat3 root = sixd_to_matrix(pose.joints[0]);
        spun.joints[0] = matrix_to_sixd(root * axis_angle_to_matrix(Vec3(0, kPi / 2, 0)));
        CHECK(delta_q(spun, pose, tree) == doctest::Approx(kPi / 2).epsilon(1e-6));
    }

    TEST_CASE("delta_q scales a joint perturbation by its subtree size") {
        const KinematicTree tree = KinematicTree::humanoid24();
        const Pose neutral;
        const double beta = 0.8;

        // r_hand is a leaf: exactly one of 24 global frames moves.
        CHECK(delta_q(rotated_pose(kRHand, Vec3(0, 0, beta)), neutral, tree) ==
              doctest::Approx(beta / 24.0).epsilon(1e-9));

        // l_knee carries l_ankle and l_foot with it: three frames move.
        CHECK(delta_q(rotated_pose(kLKnee, Vec3(beta, 0, 0)), neutral, tree) ==
              doctest::Approx(beta * 3.0 / 24.0).epsilon(1e-9));
    }

    TEST_CASE("pa_mpjpe vanishes under an exact similarity transform") {
        RngStream rng(61);
        std::vector<Vec3> gt;
        for (int i = 0; i < 12; ++i) gt.emplace_back(rng.next_gauss(), rng.next_gauss(), rng.next_gauss());

        CHECK(pa_mpjpe(gt, gt) < 1e-9);

        const Mat3 R = axis_angle_to_matrix(Vec3(0.3, -1.2, 0.7));
        const Vec3 t(4.0, -2.5, 0.3);
        const double s = 1.7;
        std::vector<Vec3> pred;
        for (const Vec3& p : gt) pred.push_back(s * (R * p) + t);
        CHECK(pa_mpjpe(pred, gt) < 1e-6);
    }

    TEST_CASE("pa_mpjpe is invariant to similarity transforms of the prediction") {
        RngStream rng(62);
        std::vector<Vec3> gt, pred;
        for (int i = 0; i < 10; ++i) {
            gt.emplace_back(rng.next_gauss(), rng.next_gauss(), rng.next_gauss());
            pred.emplace_back(rng.next_gauss(), rng.next_gauss(), rng.next_gauss());
        }
        const double base = pa_mpjpe(pred, gt);
        CHECK(base > 0.0);

        const Mat3 R = axis_angle_to_matrix(Vec3(-0.9, 0.4, 2.0));
        std::vector<Vec3> moved;
        for (const Vec3& p : pred) moved.push_back(0.35 * (R * p) + Vec3(10, 20, -5));
        CHECK(pa_mpjpe(moved, gt) == doctest::Approx(base).epsilon(1e-9));
    }

    TEST_CASE("pa_mpjpe agrees with a random-restart alignment search") {
        RngStream rng(63);
        std::vector<Vec3> gt, pred;
        for (int i = 0; i < 10; ++i) {
            gt.emplace_back(rng.next_gauss(), rng.next_gauss(), rng.next_gauss());
            pred.emplace_back(rng.next_gauss(), rng.next_gauss(), rng.next_gauss());
        }
        RngStream search(64);
        const double oracle = alignment_oracle(pred, gt, search);
        const double metric = pa_mpjpe(pred, gt);
        INFO("metric=" << metric << " oracle=" << oracle);
        CHECK(std::abs(metric - oracle) < 1e-3);  // millimeters
    }

    TEST_CASE("pa_mpjpe rejects degenerate input") {
        std::vector<Vec3> line, pred;
        RngStream rng(65);
        for (int i = 0; i < 6; ++i) {
            line.push_back(static_cast<double>(i) * Vec3(1, 2, 3));
            pred.emplace_back(rng.next_gauss(), rng.next_gauss(), rng.next_gauss());
        }
        CHECK_THROWS_AS(pa_mpjpe(pred, line), ValidationError);
        CHECK_THROWS_AS(pa_mpjpe(pred, std::vector<Vec3>(5)), ShapeError);
        CHECK_THROWS_AS(pa_mpjpe({Vec3(0, 0, 0), Vec3(1, 0, 0)}, {Vec3(0, 0, 0), Vec3(0, 1, 0)}),
                        ValidationError);
    }

    TEST_CASE("j2j matches a direct FK recomputation and is zero on equal poses") {
        const KinematicTree tree = KinematicTree::humanoid24();
        const std::vector<Pose> poses = corpus_poses(2, 71);
        Shape shape;
        shape.beta = {0.3, -0.2, 0.1, 0, 0.5, 0, -0.4, 0, 0.2, -0.1};

        CHECK(j2j(poses[0], poses[0], shape, tree) == 0.0);

        const auto ja = forward_kinematics(tree, poses[0], shape);
        const auto jb = forward_kinematics(tree, poses[1], shape);
        double acc = 0;
        for (int j = 0; j < kJointCount; ++j)
            acc += (ja[static_cast<size_t>(j)] - jb[static_cast<size_t>(j)]).norm();
        CHECK(j2j(poses[0], poses[1], shape, tree) == acc / kJointCount * 1000.0);
    }

    TEST_CASE("metrics_to_csv writes a header and full-precision values") {
        const std::string csv = metrics_to_csv({{"fid", "samples", "corpus", 0.1},
                                                {"apd", "samples", "", 12.5}});
        std::istringstream in(csv);
        std::string line;
        REQUIRE(std::getline(in, line));
        CHECK(line == "metric,set_a,set_b,value");
        REQUIRE(std::getline(in, line));
        const auto comma = line.rfind(',');
        CHECK(line.substr(0, comma) == "fid,samples,corpus");
        CHECK(std::stod(line.substr(comma + 1)) == 0.1);  // round-trips exactly
        REQUIRE(std::getline(in, line));
        CHECK(line == "apd,samples,,12.5");
        CHECK_FALSE(std::getline(in, line));

        CHECK(metrics_to_csv({}) == "metric,set_a,set_b,value\n");
    }
}
