#pragma once

#include <Eigen/Core>

#include <array>
#include <map>
#include <string>
#include <vector>

#include "posediff/tensor.hpp"

namespace posediff {

inline constexpr int kNumJoints = 17;
inline constexpr int kNumBones = 16;

/// Fixed 17-joint tree rooted at the pelvis: pelvis, right/left hip-knee-foot
/// chains, spine-thorax-neck-head, and left/right shoulder-elbow-wrist chains.
struct SkeletonTopology {
    std::array<std::string, kNumJoints> joint_names;
    std::array<int, kNumJoints> parent;                        // -1 for the pelvis
    std::array<std::pair<int, int>, kNumBones> bones;           // (parent, child)
    std::map<std::string, std::vector<int>> part_groups;        // named joint sets

    static const SkeletonTopology& h36m17();
};

struct Pose3D {
    Eigen::Matrix<double, kNumJoints, 3, Eigen::RowMajor> joints =
        Eigen::Matrix<double, kNumJoints, 3, Eigen::RowMajor>::Zero();  // millimeters

    Tensor flat() const;                    // [51]
    static Pose3D from_flat(const Tensor&);
    static Pose3D from_flat(const double* v51);
};

struct Pose2D {
    Eigen::Matrix<double, kNumJoints, 2, Eigen::RowMajor> joints =
        Eigen::Matrix<double, kNumJoints, 2, Eigen::RowMajor>::Zero();  // pixels
};

struct CameraIntrinsics {
    double fx = 0, fy = 0;  // focal lengths, pixels
    double cx = 0, cy = 0;  // principal point, pixels
};

/// Pelvis position in the camera frame, millimeters. Must be in front of the
/// camera (z > 0) wherever it is used for projection.
struct Trajectory {
    Eigen::Vector3d pelvis = Eigen::Vector3d::Zero();
};

/// Translates so the pelvis sits exactly at the origin. Idempotent.
Pose3D root_center(const Pose3D& pose);

/// Euclidean length of each bone, in the topology's bone order.
std::array<double, kNumBones> bone_lengths(const Pose3D& pose, const SkeletonTopology& topo);

/// Mean per-joint position error in millimeters.
double mpjpe(const Pose3D& pred, const Pose3D& gt);

/// MPJPE restricted to a joint subset (e.g. the masked joints of a
/// completion problem).
double mpjpe_over(const Pose3D& pred, const Pose3D& gt, const std::vector<int>& joints);

/// MPJPE after optimal similarity alignment (rotation + translation + uniform
/// scale) of pred onto gt. Reflections are not allowed; a degenerate gt with
/// zero spread throws.
double pa_mpjpe(const Pose3D& pred, const Pose3D& gt);

struct PckAuc {
    double pck150 = 0;  // percent of joints with error < 150 mm
    double auc = 0;     // mean PCK over thresholds 0..threshold_max every 5 mm
};

PckAuc pck_auc(const std::vector<Pose3D>& preds, const std::vector<Pose3D>& gts,
               double threshold_max = 150.0);

}  // namespace posediff
