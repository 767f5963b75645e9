#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "posediff/operators.hpp"
#include "posediff/rng.hpp"

using namespace posediff;

namespace {

Pose3D random_rooted_pose(std::mt19937_64& rng, double spread = 300.0) {
    Pose3D p;
    std::normal_distribution<double> d(0.0, spread);
    for (int j = 1; j < kNumJoints; ++j) {
        for (int c = 0; c < 3; ++c) p.joints(j, c) = d(rng);
    }
    return p;
}

const CameraIntrinsics kCam{1000.0, 1000.0, 500.0, 500.0};

}  // namespace

TEST_CASE("projection of the pelvis ray and a lateral joint") {
    Pose3D pose;  // all joints at the pelvis
    Trajectory traj;
    traj.pelvis << 0, 0, 5000;
    Pose2D pix = project_perspective(pose, traj, kCam);
    CHECK(pix.joints(0, 0) == doctest::Approx(500.0));
    CHECK(pix.joints(0, 1) == doctest::Approx(500.0));

    pose.joints(5, 0) = 500.0;  // u = 1000 * 500/5000 + 500
    pix = project_perspective(pose, traj, kCam);
    CHECK(pix.joints(5, 0) == doctest::Approx(600.0));
    CHECK(pix.joints(5, 1) == doctest::Approx(500.0));
}

TEST_CASE("projection rejects non-positive depth") {
    Pose3D pose;
    pose.joints(3, 2) = -6000.0;
    Trajectory traj;
    traj.pelvis << 0, 0, 5000;
    CHECK_THROWS_AS(project_perspective(pose, traj, kCam), std::runtime_error);
}

TEST_CASE("projection is scale-ambiguous along the ray") {
    auto rng = make_rng(40);
    Pose3D pose = random_rooted_pose(rng);
    Trajectory traj;
    traj.pelvis << 140, -60, 5200;
    Pose2D a = project_perspective(pose, traj, kCam);

    // scale pose + trajectory jointly: the image is unchanged
    double lambda = 1.9;
    Pose3D scaled = pose;
    scaled.joints *= lambda;
    Trajectory straj;
    straj.pelvis = lambda * traj.pelvis;
    Pose2D b = project_perspective(scaled, straj, kCam);
    for (int j = 0; j < kNumJoints; ++j) {
        for (int c = 0; c < 2; ++c) CHECK(std::abs(a.joints(j, c) - b.joints(j, c)) <= 1e-9);
    }
}

TEST_CASE("apply_noise matches its Monte-Carlo statistics") {
    auto rng = make_rng(41);
    Pose3D zero;
    const double avg_bone = 150.0;
    const double intensity = 0.5;  // sigma 75 mm per coordinate

    double acc = 0, acc2 = 0;
    double mpjpe_acc = 0;
    const int n = 10000;
    for (int k = 0; k < n; ++k) {
        Pose3D noisy = apply_noise(zero, NoiseKind::gaussian, intensity, avg_bone, rng);
        for (int j = 0; j < kNumJoints; ++j) {
            for (int c = 0; c < 3; ++c) {
                acc += noisy.joints(j, c);
                acc2 += noisy.joints(j, c) * noisy.joints(j, c);
            }
        }
        mpjpe_acc += mpjpe(noisy, zero);
    }
    double total = static_cast<double>(n) * kNumJoints * 3;
    double mean = acc / total;
    double std_dev = std::sqrt(acc2 / total - mean * mean);
    CHECK(std::abs(std_dev - 75.0) / 75.0 <= 0.03);

    // E||N(0, sigma^2 I3)|| = sigma * sqrt(2) * Gamma(2) / Gamma(1.5)
    double expected = 75.0 * std::sqrt(2.0) * 1.0 / std::tgamma(1.5);
    CHECK(std::abs(mpjpe_acc / n - expected) / expected <= 0.03);

    // uniform: std = half-width / sqrt(3)
    double uacc2 = 0;
    for (int k = 0; k < 2000; ++k) {
        Pose3D noisy = apply_noise(zero, NoiseKind::uniform, intensity, avg_bone, rng);
        for (int j = 0; j < kNumJoints; ++j) {
            for (int c = 0; c < 3; ++c) uacc2 += noisy.joints(j, c) * noisy.joints(j, c);
        }
    }
    double ustd = std::sqrt(uacc2 / (2000.0 * kNumJoints * 3));
    CHECK(std::abs(ustd - 75.0 / std::sqrt(3.0)) / (75.0 / std::sqrt(3.0)) <= 0.03);
}

TEST_CASE("apply_noise with zero intensity is the identity") {
    auto rng = make_rng(42);
    Pose3D pose = random_rooted_pose(rng);
    Pose3D same = apply_noise(pose, NoiseKind::gaussian, 0.0, 150.0, rng);
    CHECK((same.joints - pose.joints).norm() == 0.0);
    CHECK_THROWS_AS(apply_noise(pose, NoiseKind::gaussian, -0.1, 150.0, rng),
                    std::invalid_argument);
}

TEST_CASE("apply_mask zeroes exactly the hidden joints and is idempotent") {
    auto rng = make_rng(43);
    Pose3D pose = random_rooted_pose(rng);

    std::array<bool, kNumJoints> all_true{};
    all_true.fill(true);
    Measurement3D ident = apply_mask(pose, all_true);
    CHECK((ident.pose.joints - pose.joints).norm() == 0.0);

    // hide the right leg part group
    const auto& topo = SkeletonTopology::h36m17();
    std::array<bool, kNumJoints> mask{};
    mask.fill(true);
    for (int j : topo.part_groups.at("right_leg")) mask[static_cast<size_t>(j)] = false;
    Measurement3D m = apply_mask(pose, mask);
    for (int j = 0; j < kNumJoints; ++j) {
        if (mask[static_cast<size_t>(j)]) {
            CHECK((m.pose.joints.row(j) - pose.joints.row(j)).norm() == 0.0);
        } else {
            CHECK(m.pose.joints.row(j).norm() == 0.0);
        }
    }

    Measurement3D twice = apply_mask(m.pose, mask);
    CHECK((twice.pose.joints - m.pose.joints).norm() == 0.0);

    std::array<bool, kNumJoints> none{};
    CHECK_THROWS_AS(apply_mask(pose, none), std::invalid_argument);
}

TEST_CASE("inverse projection lifts rays to the trajectory norm") {
    Trajectory traj;
    traj.pelvis << 0, 0, 5000;

    // all joints at the principal point collapse to the pelvis
    Pose2D center;
    center.joints.col(0).setConstant(500.0);
    center.joints.col(1).setConstant(500.0);
    Pose3D lifted = inverse_project_init(center, kCam, traj);
    CHECK(lifted.joints.norm() == doctest::Approx(0.0));

    // pelvis at the principal point, one joint at (600, 500):
    // its ray is (0.1, 0, 1)/||.|| * 5000, pelvis-relative ~ (497.5, 0, -24.8)
    Pose2D p2 = center;
    p2.joints(7, 0) = 600.0;
    Pose3D init = inverse_project_init(p2, kCam, traj);
    CHECK(init.joints.row(0).norm() == 0.0);  // always exactly rooted
    double ray_len = std::sqrt(1.0 + 0.01);
    double x = 0.1 / ray_len * 5000.0;
    double z = 1.0 / ray_len * 5000.0 - 5000.0;
    CHECK(init.joints(7, 0) == doctest::Approx(x).epsilon(1e-9));
    CHECK(init.joints(7, 0) == doctest::Approx(497.5).epsilon(1e-3));
    CHECK(init.joints(7, 1) == doctest::Approx(0.0));
    CHECK(init.joints(7, 2) == doctest::Approx(z).epsilon(1e-9));
    CHECK(init.joints(7, 2) == doctest::Approx(-24.8).epsilon(1e-2));

    Trajectory zero;
    CHECK_THROWS_AS(inverse_project_init(p2, kCam, zero), std::invalid_argument);
}

TEST_CASE("projecting the inverse projection reproduces pixels near the pelvis depth") {
    auto rng = make_rng(44);
    Trajectory traj;
    traj.pelvis << 80, -40, 5000;
    for (int k = 0; k < 10; ++k) {
        // joints within +-10% of ||T|| around the pelvis
        Pose3D pose = random_rooted_pose(rng, 160.0);
        Pose2D pix = project_perspective(pose, traj, kCam);
        Pose3D init = inverse_project_init(pix, kCam, traj);
        Pose2D back = project_perspective(init, traj, kCam);
        // pelvis ray is exact
        CHECK(std::abs(back.joints(0, 0) - pix.joints(0, 0)) <= 1e-9);
        CHECK(std::abs(back.joints(0, 1) - pix.joints(0, 1)) <= 1e-9);
        for (int j = 1; j < kNumJoints; ++j) {
            CHECK(std::abs(back.joints(j, 0) - pix.joints(j, 0)) <= 10.0);  // 1% of 1000 px
            CHECK(std::abs(back.joints(j, 1) - pix.joints(j, 1)) <= 10.0);
        }
    }
}

TEST_CASE("round trip through projection and inverse projection with true depths") {
    // with every joint at the same distance as ||T|| the unit-ray lift is exact
    Trajectory traj;
    traj.pelvis << 0, 0, 5000;
    Pose3D pose;
    // place joints on the sphere of radius ||T|| around the camera
    auto rng = make_rng(45);
    std::normal_distribution<double> d(0.0, 0.06);
    for (int j = 1; j < kNumJoints; ++j) {
        Eigen::Vector3d dir(d(rng), d(rng), 1.0);
        dir.normalize();
        Eigen::Vector3d abs_pos = dir * 5000.0;
        pose.joints.row(j) = (abs_pos - traj.pelvis).transpose();
    }
    Pose2D pix = project_perspective(pose, traj, kCam);
    Pose3D lifted = inverse_project_init(pix, kCam, traj);
    for (int j = 0; j < kNumJoints; ++j) {
        for (int c = 0; c < 3; ++c) {
            CHECK(std::abs(lifted.joints(j, c) - pose.joints(j, c)) <= 1e-6);
        }
    }
}

TEST_CASE("residual is zero on consistent measurements for all operator kinds") {
    auto rng = make_rng(46);
    Pose3D pose = random_rooted_pose(rng);
    Trajectory traj;
    traj.pelvis << 10, 20, 5100;

    ProjectionOp proj{kCam, traj};
    Measurement y2d = Measurement2D{project_perspective(pose, traj, kCam)};
    CHECK(residual(proj, pose, y2d) <= 1e-14);

    std::array<bool, kNumJoints> all_true{};
    all_true.fill(true);
    AdditiveNoiseOp noise_op{NoiseKind::gaussian, 75.0};
    Measurement y3d = Measurement3D{pose, all_true};
    CHECK(residual(noise_op, pose, y3d) == 0.0);

    std::array<bool, kNumJoints> mask = all_true;
    mask[4] = mask[5] = mask[6] = false;
    MaskingOp mask_op{mask};
    Measurement ym = apply_mask(pose, mask);
    CHECK(residual(mask_op, pose, ym) == 0.0);
    // hidden joints do not contribute
    Pose3D off = pose;
    off.joints(5, 1) += 1000.0;
    CHECK(residual(mask_op, off, ym) == 0.0);
}

TEST_CASE("masked residual of a single displaced coordinate is delta squared") {
    auto rng = make_rng(47);
    Pose3D pose = random_rooted_pose(rng);
    std::array<bool, kNumJoints> all_true{};
    all_true.fill(true);
    Measurement y = Measurement3D{pose, all_true};
    Pose3D pred = pose;
    pred.joints(8, 2) += 3.25;
    CHECK(residual(MaskingOp{all_true}, pred, y) == doctest::Approx(3.25 * 3.25).epsilon(1e-12));
}

TEST_CASE("residual rejects mismatched operator and measurement kinds") {
    auto rng = make_rng(48);
    Pose3D pose = random_rooted_pose(rng);
    Trajectory traj;
    traj.pelvis << 0, 0, 5000;
    std::array<bool, kNumJoints> all_true{};
    all_true.fill(true);
    Measurement y3d = Measurement3D{pose, all_true};
    CHECK_THROWS_AS(residual(ProjectionOp{kCam, traj}, pose, y3d), std::invalid_argument);
    Measurement y2d = Measurement2D{project_perspective(pose, traj, kCam)};
    CHECK_THROWS_AS(residual(MaskingOp{all_true}, pose, y2d), std::invalid_argument);
}

TEST_CASE("projection residual gradient matches finite differences") {
    auto rng = make_rng(49);
    Pose3D pose = random_rooted_pose(rng);
    Trajectory traj;
    traj.pelvis << -30, 60, 4800;
    Pose2D targets = project_perspective(random_rooted_pose(rng), traj, kCam);
    Measurement y = Measurement2D{targets};
    ProjectionOp op{kCam, traj};

    Tape tape;
    Var x = tape.leaf(pose.flat());
    Var r = residual_on(tape, op, x, y, 1.0);
    Tensor analytic = tape.grad_one(r, x);
    auto f = [&](const Tensor& q) {
        Tape t2;
        return t2.value(residual_on(t2, op, t2.leaf(q), y, 1.0)).item();
    };
    CHECK(finite_diff_check(f, pose.flat(), analytic, 1e-4) <= 1e-4);
}

TEST_CASE("average bone length of the identity-offset pose") {
    const auto& topo = SkeletonTopology::h36m17();
    Pose3D p;
    for (int b = 0; b < kNumBones; ++b) {
        auto [parent, child] = topo.bones[b];
        p.joints.row(child) = p.joints.row(parent) + Eigen::RowVector3d(0, 2.0, 0);
    }
    CHECK(average_bone_length(p, topo) == doctest::Approx(2.0));
}
