#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "posediff/operators.hpp"
#include "posediff/skeleton.hpp"
#include "posediff/solvers.hpp"
#include "posediff/tensor.hpp"

namespace posediff {

/// Forward-kinematics pose sampler over the 17-joint tree. Each non-root
/// joint rotates relative to its parent within per-joint Euler limits; bone
/// lengths are fixed. The root gets a free yaw within its limit plus a small
/// tilt. Poses are placed in front of a fixed camera.
struct SyntheticGenConfig {
    int n_poses = 5000;
    std::array<double, kNumBones> segment_lengths_mm = {
        120, 450, 440,   // right hip, thigh, shin
        120, 450, 440,   // left hip, thigh, shin
        230, 230, 120, 120,  // spine, thorax, neck, head
        150, 280, 250,   // left shoulder, upper arm, forearm
        150, 280, 250};  // right shoulder, upper arm, forearm
    std::array<std::pair<double, double>, kNumJoints> joint_angle_limits_deg = {{
        {-180, 180},           // pelvis yaw
        {-25, 25}, {-40, 40}, {-20, 20},   // right leg
        {-25, 25}, {-40, 40}, {-20, 20},   // left leg
        {-15, 15}, {-15, 15}, {-20, 20}, {-15, 15},  // spine chain
        {-35, 35}, {-45, 45}, {-25, 25},   // left arm
        {-35, 35}, {-45, 45}, {-25, 25},   // right arm
    }};
    double root_tilt_deg = 15.0;  // pitch/roll range of the whole body
    std::pair<double, double> trajectory_depth_range_mm = {4000, 7000};
    double lateral_range_mm = 500.0;  // pelvis x/y placement around the optical axis
    CameraIntrinsics intrinsics{1145.0, 1145.0, 500.0, 500.0};
    uint64_t seed = 1;

    void validate() const;
};

/// Unit bone directions of the canonical rest stance (arms out, legs down),
/// in bone order. The generator rotates these; tests use them to bound
/// adjacent-bone angles.
const std::array<Eigen::Vector3d, kNumBones>& rest_bone_directions();

struct PoseRecord {
    int64_t id = 0;
    Pose3D pose3d;  // absolute camera-frame joints, millimeters
    Trajectory trajectory;
    CameraIntrinsics intrinsics;
    std::optional<Pose2D> pose2d;

    Pose3D rooted() const { return root_center(pose3d); }
};

std::vector<PoseRecord> generate_synthetic_dataset(const SyntheticGenConfig& cfg);

struct NormalizationInfo {
    double scale_mm = 1.0;
};

/// RMS of the non-pelvis coordinates of the rooted training poses; maps
/// millimeters to roughly unit-variance model units.
NormalizationInfo compute_normalization(const std::vector<PoseRecord>& records);

/// Rooted poses divided by scale_mm, stacked as [N, 51].
Tensor normalized_dataset(const std::vector<PoseRecord>& records, double scale_mm);

// Line-oriented text format, one record per line:
//   id  x0 y0 z0 ... x16 y16 z16  tx ty tz  fx fy cx cy  [u0 v0 ... u16 v16]
// preceded by the header line "posefile 1". Values carry 12 significant
// digits. `pose_file_field_spec` returns the exact field order.
void save_pose_file(const std::vector<PoseRecord>& records, const std::string& path);
std::vector<PoseRecord> load_pose_file(const std::string& path);
std::string pose_file_field_spec();

enum class Task { estimate, denoise, complete, generate };

Task parse_task(const std::string& name);
std::string task_name(Task t);

struct TaskParams {
    NoiseKind noise_kind = NoiseKind::gaussian;
    double intensity = 0.5;          // fraction of the average bone length
    std::string mask_group = "spine";
    InitKind init = InitKind::pose;  // random = the random-noise ablation
    bool use_inverse_projection = true;  // estimation only
};

struct TaskProblem {
    int64_t id = 0;
    ProblemSpec problem;
    Pose3D gt;  // rooted ground truth
};

/// Builds per-record inverse problems: estimation projects through the
/// record's camera with an inverse-projection (or random) init; denoising
/// perturbs then re-roots the pose, starting from the measurement;
/// completion masks a named part group, starting from a mean-pose fill.
std::vector<TaskProblem> make_task_dataset(const std::vector<PoseRecord>& records, Task task,
                                           const TaskParams& params, uint64_t seed);

/// Per-coordinate mean of the rooted poses (the completion fill).
Pose3D mean_pose(const std::vector<PoseRecord>& records);

}  // namespace posediff
