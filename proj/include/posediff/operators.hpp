#pragma once

#include <array>
#include <random>
#include <variant>

#include "posediff/autodiff.hpp"
#include "posediff/skeleton.hpp"

namespace posediff {

enum class NoiseKind { gaussian, uniform };

struct ProjectionOp {
    CameraIntrinsics intrinsics;
    Trajectory trajectory;
};

struct AdditiveNoiseOp {
    NoiseKind kind = NoiseKind::gaussian;
    double sigma_mm = 0.0;  // per-coordinate std (gaussian) or half-width (uniform)
};

struct MaskingOp {
    std::array<bool, kNumJoints> mask{};  // true = observed
};

using MeasurementOperator = std::variant<ProjectionOp, AdditiveNoiseOp, MaskingOp>;

struct Measurement2D {
    Pose2D pixels;
};

/// 3D measurement for denoising/completion. Masked joints are zeroed and the
/// mask travels with the data; the residual reads the mask, never the zeros.
struct Measurement3D {
    Pose3D pose;
    std::array<bool, kNumJoints> mask;  // all-true for denoising
};

using Measurement = std::variant<Measurement2D, Measurement3D>;

/// Pinhole projection of a pelvis-relative pose placed at `traj`.
/// Throws if any joint lands at non-positive depth.
Pose2D project_perspective(const Pose3D& pose_rel, const Trajectory& traj,
                           const CameraIntrinsics& K);

/// Adds per-coordinate noise of magnitude intensity * avg_bone_mm
/// (std for gaussian, half-width for uniform).
Pose3D apply_noise(const Pose3D& pose, NoiseKind kind, double intensity, double avg_bone_mm,
                   std::mt19937_64& rng);

/// Copies observed joints, zeroes the rest. At least one joint must be observed.
Measurement3D apply_mask(const Pose3D& pose, const std::array<bool, kNumJoints>& mask);

/// Places every joint on its camera ray at distance ||T||, then pelvis-roots
/// the result. Exact on the pelvis ray, an approximation elsewhere.
Pose3D inverse_project_init(const Pose2D& p2d, const CameraIntrinsics& K, const Trajectory& traj);

/// Differentiable pinhole projection node: x_mm is a [51] pelvis-relative
/// pose on the tape; output is the [17,2] pixel image of x_mm + traj.
Var project_points_on(Tape& tape, Var x_mm, const CameraIntrinsics& K, const Trajectory& traj);

/// Squared measurement residual ||y - f(xhat0)||^2 on the tape.
/// For the projection operator, xhat0 is scaled by scale_mm into millimeters
/// and the residual is in pixel units. For the linear operators, xhat0 and
/// the measurement must already share one space (the solver passes both
/// normalized) and scale_mm is unused; masking sums only observed joints.
Var residual_on(Tape& tape, const MeasurementOperator& op, Var xhat0, const Measurement& y,
                double scale_mm = 1.0);

/// Value-only residual with xhat0 in millimeters.
double residual(const MeasurementOperator& op, const Pose3D& xhat0_mm, const Measurement& y);

/// Mean of the 16 bone lengths; the noise-intensity unit.
double average_bone_length(const Pose3D& pose, const SkeletonTopology& topo);

}  // namespace posediff
