#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "posediff/data.hpp"
#include "posediff/rng.hpp"

using namespace posediff;

namespace {

SyntheticGenConfig small_config(int n, uint64_t seed) {
    SyntheticGenConfig cfg;
    cfg.n_poses = n;
    cfg.seed = seed;
    return cfg;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("generated poses carry the configured segment lengths exactly") {
    SyntheticGenConfig cfg = small_config(50, 1);
    const auto& topo = SkeletonTopology::h36m17();
    auto records = generate_synthetic_dataset(cfg);
    REQUIRE(records.size() == 50);
    for (const auto& rec : records) {
        auto lengths = bone_lengths(rec.rooted(), topo);
        for (int b = 0; b < kNumBones; ++b) {
            CHECK(std::abs(lengths[b] - cfg.segment_lengths_mm[b]) <= 1e-9);
        }
    }
}

TEST_CASE("trajectory depths stay inside the configured range") {
    SyntheticGenConfig cfg = small_config(200, 2);
    for (const auto& rec : generate_synthetic_dataset(cfg)) {
        CHECK(rec.trajectory.pelvis.z() >= cfg.trajectory_depth_range_mm.first);
        CHECK(rec.trajectory.pelvis.z() <= cfg.trajectory_depth_range_mm.second);
        // trajectory equals the absolute pelvis joint
        CHECK((rec.pose3d.joints.row(0).transpose() - rec.trajectory.pelvis).norm() <= 1e-9);
    }
}

TEST_CASE("adjacent-bone angles never exceed the rest angle plus the Euler budget") {
    SyntheticGenConfig cfg = small_config(2000, 3);
    const auto& topo = SkeletonTopology::h36m17();
    const auto& rest = rest_bone_directions();

    // bone owned by each child joint
    std::array<int, kNumJoints> bone_of{};
    bone_of.fill(-1);
    for (int b = 0; b < kNumBones; ++b) bone_of[topo.bones[b].second] = b;

    auto records = generate_synthetic_dataset(cfg);
    for (const auto& rec : records) {
        Pose3D pose = rec.rooted();
        for (int b = 0; b < kNumBones; ++b) {
            auto [parent, child] = topo.bones[b];
            int parent_bone = bone_of[static_cast<size_t>(parent)];
            if (parent_bone < 0) continue;  // parent is the root
            Eigen::Vector3d d_child =
                (pose.joints.row(child) - pose.joints.row(parent)).transpose().normalized();
            Eigen::Vector3d d_parent =
                (pose.joints.row(parent) - pose.joints.row(topo.bones[parent_bone].first))
                    .transpose()
                    .normalized();
            double angle = std::acos(std::clamp(d_parent.dot(d_child), -1.0, 1.0));
            double rest_angle = std::acos(
                std::clamp(rest[parent_bone].dot(rest[b]), -1.0, 1.0));
            auto [lo, hi] = cfg.joint_angle_limits_deg[static_cast<size_t>(child)];
            double budget = 3.0 * std::max(std::abs(lo), std::abs(hi)) * M_PI / 180.0;
            CHECK(angle <= rest_angle + budget + 1e-9);
        }
    }
}

TEST_CASE("generator is deterministic per seed") {
    auto a = generate_synthetic_dataset(small_config(20, 9));
    auto b = generate_synthetic_dataset(small_config(20, 9));
    auto c = generate_synthetic_dataset(small_config(20, 10));
    REQUIRE(a.size() == b.size());
    double max_diff = 0, cross_diff = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        max_diff = std::max(max_diff, (a[i].pose3d.joints - b[i].pose3d.joints).norm());
        cross_diff = std::max(cross_diff, (a[i].pose3d.joints - c[i].pose3d.joints).norm());
    }
    CHECK(max_diff == 0.0);
    CHECK(cross_diff > 1.0);
}

TEST_CASE("every generated record reprojects onto its stored 2d pose") {
    auto records = generate_synthetic_dataset(small_config(100, 4));
    for (const auto& rec : records) {
        REQUIRE(rec.pose2d.has_value());
        Pose2D again = project_perspective(rec.rooted(), rec.trajectory, rec.intrinsics);
        CHECK((again.joints - rec.pose2d->joints).norm() <= 1e-9);
    }
}

TEST_CASE("normalization scale equals the stated RMS and doubles with the data") {
    // one pose whose non-pelvis rooted coordinates are all +-c
    PoseRecord rec;
    rec.trajectory.pelvis << 0, 0, 5000;
    double c = 37.0;
    for (int j = 1; j < kNumJoints; ++j) {
        rec.pose3d.joints(j, 0) = (j % 2) ? c : -c;
        rec.pose3d.joints(j, 1) = c;
        rec.pose3d.joints(j, 2) = -c;
    }
    NormalizationInfo info = compute_normalization({rec});
    CHECK(info.scale_mm == doctest::Approx(c).epsilon(1e-12));

    PoseRecord doubled = rec;
    doubled.pose3d.joints *= 2.0;
    CHECK(compute_normalization({doubled}).scale_mm == doctest::Approx(2.0 * c).epsilon(1e-12));

    CHECK_THROWS_AS(compute_normalization({}), std::invalid_argument);
}

TEST_CASE("normalized dataset round trips to millimeters") {
    auto records = generate_synthetic_dataset(small_config(10, 5));
    double scale = compute_normalization(records).scale_mm;
    Tensor data = normalized_dataset(records, scale);
    REQUIRE(data.shape() == std::vector<int64_t>{10, 51});
    for (size_t i = 0; i < records.size(); ++i) {
        Pose3D rooted = records[i].rooted();
        for (int j = 0; j < kNumJoints; ++j) {
            for (int c3 = 0; c3 < 3; ++c3) {
                double back = data[static_cast<int64_t>(i) * 51 + j * 3 + c3] * scale;
                CHECK(std::abs(back - rooted.joints(j, c3)) <= 1e-9);
            }
        }
    }
}

TEST_CASE("pose file round trip preserves records") {
    auto records = generate_synthetic_dataset(small_config(25, 6));
    std::string path = temp_path("posediff_data_test.txt");
    save_pose_file(records, path);
    auto back = load_pose_file(path);
    REQUIRE(back.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(back[i].id == records[i].id);
        CHECK((back[i].pose3d.joints - records[i].pose3d.joints).cwiseAbs().maxCoeff() <= 1e-6);
        CHECK((back[i].trajectory.pelvis - records[i].trajectory.pelvis).norm() <= 1e-6);
        CHECK(back[i].intrinsics.fx == doctest::Approx(records[i].intrinsics.fx));
        REQUIRE(back[i].pose2d.has_value());
        CHECK((back[i].pose2d->joints - records[i].pose2d->joints).cwiseAbs().maxCoeff() <= 1e-6);
    }
    std::filesystem::remove(path);
}

TEST_CASE("pose file loader reports malformed lines and tolerates empty files") {
    std::string path = temp_path("posediff_malformed.txt");
    {
        std::ofstream out(path);
        out << "posefile 1\n";
        out << "0";
        for (int i = 0; i < 50; ++i) out << " 1.0";  // 50 pose values, one short
        out << " 0 0 5000 1145 1145 500 500\n";
    }
    try {
        load_pose_file(path);
        FAIL("expected a parse error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);  // line number
    }

    {
        std::ofstream out(path);  // truncate to empty
    }
    CHECK(load_pose_file(path).empty());

    {
        std::ofstream out(path);
        out << "posefile 99\n";
    }
    CHECK_THROWS_AS(load_pose_file(path), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("completion datasets mask exactly the named group") {
    auto records = generate_synthetic_dataset(small_config(5, 7));
    TaskParams params;
    params.mask_group = "spine";
    auto problems = make_task_dataset(records, Task::complete, params, 1);
    REQUIRE(problems.size() == records.size());
    const auto& topo = SkeletonTopology::h36m17();
    for (const auto& tp : problems) {
        const auto& mop = std::get<MaskingOp>(tp.problem.op);
        const auto& y = std::get<Measurement3D>(tp.problem.y);
        for (int j = 0; j < kNumJoints; ++j) {
            bool hidden = std::find(topo.part_groups.at("spine").begin(),
                                    topo.part_groups.at("spine").end(),
                                    j) != topo.part_groups.at("spine").end();
            CHECK(mop.mask[static_cast<size_t>(j)] == !hidden);
            if (hidden) {
                CHECK(y.pose.joints.row(j).norm() == 0.0);
            } else {
                CHECK((y.pose.joints.row(j) - tp.gt.joints.row(j)).norm() == 0.0);
            }
        }
    }

    TaskParams bad;
    bad.mask_group = "tail";
    try {
        make_task_dataset(records, Task::complete, bad, 1);
        FAIL("expected an unknown-group error");
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        CHECK(msg.find("right_leg") != std::string::npos);  // lists valid names
        CHECK(msg.find("spine") != std::string::npos);
    }
}

TEST_CASE("denoising with zero intensity measures the ground truth") {
    auto records = generate_synthetic_dataset(small_config(4, 8));
    TaskParams params;
    params.intensity = 0.0;
    auto problems = make_task_dataset(records, Task::denoise, params, 2);
    for (const auto& tp : problems) {
        const auto& y = std::get<Measurement3D>(tp.problem.y);
        CHECK((y.pose.joints - tp.gt.joints).cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("estimation problems measure the stored 2d pose") {
    auto records = generate_synthetic_dataset(small_config(4, 11));
    TaskParams params;
    auto problems = make_task_dataset(records, Task::estimate, params, 3);
    for (size_t i = 0; i < problems.size(); ++i) {
        const auto& y = std::get<Measurement2D>(problems[i].problem.y);
        CHECK((y.pixels.joints - records[i].pose2d->joints).norm() == 0.0);
        // init is rooted
        CHECK(problems[i].problem.init.joints.row(0).norm() == 0.0);
    }
    CHECK_THROWS_AS(make_task_dataset(records, Task::generate, params, 3),
                    std::invalid_argument);
}
