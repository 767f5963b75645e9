#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <random>

#include "posediff/rng.hpp"
#include "posediff/skeleton.hpp"

using namespace posediff;

namespace {

Pose3D random_pose(std::mt19937_64& rng, double spread = 400.0) {
    Pose3D p;
    std::normal_distribution<double> d(0.0, spread);
    for (int j = 0; j < kNumJoints; ++j) {
        for (int c = 0; c < 3; ++c) p.joints(j, c) = d(rng);
    }
    return p;
}

}  // namespace

TEST_CASE("topology is a single tree rooted at the pelvis with the expected part groups") {
    const auto& topo = SkeletonTopology::h36m17();
    CHECK(topo.parent[0] == -1);
    int roots = 0;
    for (int j = 0; j < kNumJoints; ++j) {
        if (topo.parent[j] < 0) {
            ++roots;
            continue;
        }
        CHECK(topo.parent[j] < j);  // parents precede children: a single tree
    }
    CHECK(roots == 1);

    auto name_of = [&](int j) { return topo.joint_names[static_cast<size_t>(j)]; };
    for (int j : topo.part_groups.at("right_leg")) {
        std::string n = name_of(j);
        CHECK((n == "r_hip" || n == "r_knee" || n == "r_foot"));
    }
    for (int j : topo.part_groups.at("left_arm")) {
        std::string n = name_of(j);
        CHECK((n == "l_shoulder" || n == "l_elbow" || n == "l_wrist"));
    }
    for (int j : topo.part_groups.at("spine")) {
        std::string n = name_of(j);
        CHECK((n == "pelvis" || n == "thorax" || n == "neck"));
    }
    CHECK(topo.part_groups.at("spine").size() == 3);
}

TEST_CASE("root_center puts the pelvis at the origin and is idempotent") {
    auto rng = make_rng(5);
    Pose3D p = random_pose(rng);
    p.joints.row(0) << 100, 200, 5000;
    Pose3D rooted = root_center(p);
    CHECK(rooted.joints.row(0).norm() == 0.0);

    Pose3D twice = root_center(rooted);
    CHECK((twice.joints - rooted.joints).norm() == 0.0);

    Pose3D q = random_pose(rng);
    CHECK((root_center(root_center(q)).joints - root_center(q).joints).norm() == 0.0);
}

TEST_CASE("bone_lengths of unit x offsets are all one and translation-invariant") {
    const auto& topo = SkeletonTopology::h36m17();
    Pose3D p;
    for (int b = 0; b < kNumBones; ++b) {
        auto [parent, child] = topo.bones[b];
        p.joints.row(child) = p.joints.row(parent) + Eigen::RowVector3d(1, 0, 0);
    }
    for (double len : bone_lengths(p, topo)) CHECK(len == doctest::Approx(1.0));

    auto rng = make_rng(6);
    Pose3D q = random_pose(rng);
    Pose3D shifted = q;
    shifted.joints.rowwise() += Eigen::RowVector3d(123.0, -45.0, 678.0);
    auto a = bone_lengths(q, topo);
    auto b = bone_lengths(shifted, topo);
    for (int i = 0; i < kNumBones; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("mpjpe basics") {
    auto rng = make_rng(8);
    Pose3D p = random_pose(rng);
    CHECK(mpjpe(p, p) == 0.0);

    Pose3D q = p;
    q.joints(4, 1) += 17.0;  // one joint off by 17 mm
    CHECK(mpjpe(q, p) == doctest::Approx(1.0));

    Pose3D r = p;
    Eigen::RowVector3d shift(3.0, 4.0, 12.0);  // norm 13
    r.joints.rowwise() += shift;
    CHECK(mpjpe(r, p) == doctest::Approx(13.0));
}

TEST_CASE("mpjpe is a metric on random triples") {
    auto rng = make_rng(21);
    for (int k = 0; k < 20; ++k) {
        Pose3D a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
        CHECK(mpjpe(a, b) == doctest::Approx(mpjpe(b, a)));
        CHECK(mpjpe(a, b) >= 0.0);
        CHECK(mpjpe(a, c) <= mpjpe(a, b) + mpjpe(b, c) + 1e-9);
    }
    Pose3D a = random_pose(rng);
    CHECK(mpjpe(a, a) == 0.0);
}

TEST_CASE("pa_mpjpe removes similarity transforms") {
    auto rng = make_rng(17);
    Pose3D gt = random_pose(rng);
    Eigen::Matrix3d rot =
        Eigen::AngleAxisd(0.73, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
    Pose3D pred;
    pred.joints = 2.0 * (gt.joints * rot.transpose());
    pred.joints.rowwise() += Eigen::RowVector3d(55.0, -20.0, 9.0);
    CHECK(pa_mpjpe(pred, gt) <= 1e-9);
    CHECK(pa_mpjpe(gt, gt) <= 1e-9);
}

TEST_CASE("pa_mpjpe never exceeds mpjpe and rejects degenerate ground truth") {
    auto rng = make_rng(29);
    for (int k = 0; k < 30; ++k) {
        Pose3D a = random_pose(rng), b = random_pose(rng);
        CHECK(pa_mpjpe(a, b) <= mpjpe(a, b) + 1e-9);
    }
    Pose3D flat;  // every joint at the same point
    flat.joints.setConstant(1.0);
    Pose3D pred = random_pose(rng);
    CHECK_THROWS_AS(pa_mpjpe(pred, flat), std::invalid_argument);
}

TEST_CASE("pck and auc at the grid endpoints and at a uniform 75 mm error") {
    auto rng = make_rng(31);
    std::vector<Pose3D> gts, exact, far, mid;
    for (int k = 0; k < 4; ++k) {
        Pose3D g = random_pose(rng);
        g.joints = g.joints.array().round();  // integer coords keep +75.0 exact
        gts.push_back(g);
        exact.push_back(g);
        Pose3D f = g;
        f.joints.col(0).array() += 400.0;  // every joint 400 mm off
        far.push_back(f);
        Pose3D m = g;
        m.joints.col(2).array() += 75.0;  // every joint exactly 75 mm off
        mid.push_back(m);
    }
    // PCK uses a strict error < threshold comparison, so the 0 mm grid point
    // never passes and a perfect prediction scores 30 of 31 thresholds.
    PckAuc perfect = pck_auc(exact, gts);
    CHECK(perfect.pck150 == doctest::Approx(100.0));
    CHECK(perfect.auc == doctest::Approx(100.0 * 30.0 / 31.0));

    PckAuc worst = pck_auc(far, gts);
    CHECK(worst.pck150 == doctest::Approx(0.0));
    CHECK(worst.auc == doctest::Approx(0.0));

    // 75 mm error passes thresholds 80..150: 15 of the 31 grid points.
    PckAuc half = pck_auc(mid, gts);
    CHECK(half.pck150 == doctest::Approx(100.0));
    CHECK(half.auc == doctest::Approx(100.0 * 15.0 / 31.0).epsilon(1e-9));

    CHECK_THROWS_AS(pck_auc({}, {}), std::invalid_argument);
}

TEST_CASE("mpjpe_over restricts to a subset") {
    auto rng = make_rng(33);
    Pose3D gt = random_pose(rng);
    Pose3D pred = gt;
    pred.joints(2, 0) += 30.0;
    pred.joints(3, 0) += 60.0;
    CHECK(mpjpe_over(pred, gt, {2, 3}) == doctest::Approx(45.0));
    CHECK(mpjpe_over(pred, gt, {5}) == doctest::Approx(0.0));
    CHECK_THROWS_AS(mpjpe_over(pred, gt, {}), std::invalid_argument);
}
