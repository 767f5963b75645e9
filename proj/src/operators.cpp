#include "posediff/operators.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace posediff {

Pose2D project_perspective(const Pose3D& pose_rel, const Trajectory& traj,
                           const CameraIntrinsics& K) {
    if (!(K.fx > 0.0) || !(K.fy > 0.0)) throw std::invalid_argument("projection: fx, fy must be > 0");
    Pose2D out;
    for (int j = 0; j < kNumJoints; ++j) {
        double x = pose_rel.joints(j, 0) + traj.pelvis.x();
        double y = pose_rel.joints(j, 1) + traj.pelvis.y();
        double z = pose_rel.joints(j, 2) + traj.pelvis.z();
        if (!(z > 0.0)) {
            throw std::runtime_error("projection: joint " + std::to_string(j) +
                                     " has non-positive depth " + std::to_string(z));
        }
        out.joints(j, 0) = K.fx * x / z + K.cx;
        out.joints(j, 1) = K.fy * y / z + K.cy;
    }
    return out;
}

Pose3D apply_noise(const Pose3D& pose, NoiseKind kind, double intensity, double avg_bone_mm,
                   std::mt19937_64& rng) {
    if (intensity < 0.0) throw std::invalid_argument("apply_noise: intensity must be >= 0");
    Pose3D out = pose;
    double level = intensity * avg_bone_mm;
    if (level == 0.0) return out;
    if (kind == NoiseKind::gaussian) {
        std::normal_distribution<double> d(0.0, level);
        for (int j = 0; j < kNumJoints; ++j) {
            for (int c = 0; c < 3; ++c) out.joints(j, c) += d(rng);
        }
    } else {
        std::uniform_real_distribution<double> d(-level, level);
        for (int j = 0; j < kNumJoints; ++j) {
            for (int c = 0; c < 3; ++c) out.joints(j, c) += d(rng);
        }
    }
    return out;
}

Measurement3D apply_mask(const Pose3D& pose, const std::array<bool, kNumJoints>& mask) {
    bool any = false;
    for (bool m : mask) any = any || m;
    if (!any) throw std::invalid_argument("apply_mask: at least one joint must be observed");
    Measurement3D out;
    out.mask = mask;
    for (int j = 0; j < kNumJoints; ++j) {
        if (mask[static_cast<size_t>(j)]) {
            out.pose.joints.row(j) = pose.joints.row(j);
        } else {
            out.pose.joints.row(j).setZero();
        }
    }
    return out;
}

Pose3D inverse_project_init(const Pose2D& p2d, const CameraIntrinsics& K, const Trajectory& traj) {
    double t_norm = traj.pelvis.norm();
    if (!(t_norm > 0.0)) throw std::invalid_argument("inverse_project_init: zero trajectory");
    if (!(K.fx > 0.0) || !(K.fy > 0.0)) {
        throw std::invalid_argument("inverse_project_init: fx, fy must be > 0");
    }
    Pose3D lifted;
    for (int j = 0; j < kNumJoints; ++j) {
        // K^-1 [u, v, 1]^T, unit-normalized, scaled to ||T||.
        Eigen::Vector3d ray((p2d.joints(j, 0) - K.cx) / K.fx, (p2d.joints(j, 1) - K.cy) / K.fy,
                            1.0);
        lifted.joints.row(j) = (ray / ray.norm() * t_norm).transpose();
    }
    return root_center(lifted);
}

Var project_points_on(Tape& tape, Var x_mm, const CameraIntrinsics& K, const Trajectory& traj) {
    const Tensor& xv = tape.value(x_mm);
    if (xv.numel() != kNumJoints * 3) {
        throw std::invalid_argument("project_points_on: expected 51 values, got " + xv.shape_str());
    }
    Tensor out({kNumJoints, 2});
    std::array<double, kNumJoints> zs{};
    for (int j = 0; j < kNumJoints; ++j) {
        double x = xv[j * 3 + 0] + traj.pelvis.x();
        double y = xv[j * 3 + 1] + traj.pelvis.y();
        double z = xv[j * 3 + 2] + traj.pelvis.z();
        if (!(z > 0.0)) {
            throw std::runtime_error("project_points_on: joint " + std::to_string(j) +
                                     " has non-positive depth " + std::to_string(z));
        }
        zs[static_cast<size_t>(j)] = z;
        out[j * 2 + 0] = K.fx * x / z + K.cx;
        out[j * 2 + 1] = K.fy * y / z + K.cy;
    }
    int x_id = x_mm.id;
    Eigen::Vector3d t = traj.pelvis;
    return tape.make("project_points", {x_mm}, std::move(out),
                     [x_id, K, t, zs](Tape& tp, const Tensor& g) {
                         if (!tp.requires_grad(x_id)) return;
                         const Tensor& xin = tp.value(x_id);
                         Tensor gx = Tensor::zeros(xin.shape());
                         for (int j = 0; j < kNumJoints; ++j) {
                             double x = xin[j * 3 + 0] + t.x();
                             double y = xin[j * 3 + 1] + t.y();
                             double z = zs[static_cast<size_t>(j)];
                             double gu = g[j * 2 + 0];
                             double gv = g[j * 2 + 1];
                             gx[j * 3 + 0] = gu * K.fx / z;
                             gx[j * 3 + 1] = gv * K.fy / z;
                             gx[j * 3 + 2] = -(gu * K.fx * x + gv * K.fy * y) / (z * z);
                         }
                         tp.accumulate(x_id, gx);
                     });
}

namespace {

Tensor flat_pose_tensor(const Pose3D& p) { return p.flat(); }

Tensor mask_to_51(const std::array<bool, kNumJoints>& mask) {
    Tensor m({kNumJoints * 3});
    for (int j = 0; j < kNumJoints; ++j) {
        double v = mask[static_cast<size_t>(j)] ? 1.0 : 0.0;
        m[j * 3 + 0] = v;
        m[j * 3 + 1] = v;
        m[j * 3 + 2] = v;
    }
    return m;
}

}  // namespace

Var residual_on(Tape& tape, const MeasurementOperator& op, Var xhat0, const Measurement& y,
                double scale_mm) {
    if (tape.value(xhat0).numel() != kNumJoints * 3) {
        throw std::invalid_argument("residual: xhat0 must hold 51 values");
    }
    if (std::holds_alternative<ProjectionOp>(op)) {
        const auto* y2d = std::get_if<Measurement2D>(&y);
        if (!y2d) throw std::invalid_argument("residual: projection operator needs a 2D measurement");
        const auto& proj = std::get<ProjectionOp>(op);
        Var x_mm = scale_mm == 1.0 ? xhat0 : scale(xhat0, scale_mm);
        Var pix = project_points_on(tape, x_mm, proj.intrinsics, proj.trajectory);
        std::vector<double> yv(y2d->pixels.joints.data(), y2d->pixels.joints.data() + kNumJoints * 2);
        Var diff = sub(pix, tape.constant(Tensor::from({kNumJoints, 2}, std::move(yv))));
        return sum_squares(diff);
    }
    const auto* y3d = std::get_if<Measurement3D>(&y);
    if (!y3d) throw std::invalid_argument("residual: linear operator needs a 3D measurement");
    Tensor y_flat = flat_pose_tensor(y3d->pose).reshaped({kNumJoints * 3});
    Var x = tape.value(xhat0).rank() == 1 ? xhat0
                                          : tape.make("reshape", {xhat0},
                                                      tape.value(xhat0).reshaped({kNumJoints * 3}),
                                                      [id = xhat0.id](Tape& tp, const Tensor& g) {
                                                          if (tp.requires_grad(id)) {
                                                              tp.accumulate(id, g.reshaped(
                                                                  tp.value(id).shape()));
                                                          }
                                                      });
    Var diff = sub(x, tape.constant(std::move(y_flat)));
    if (std::holds_alternative<MaskingOp>(op)) {
        const auto& mop = std::get<MaskingOp>(op);
        if (mop.mask != y3d->mask) {
            throw std::invalid_argument("residual: operator mask and measurement mask differ");
        }
        diff = cmul(diff, mask_to_51(mop.mask));
    }
    return sum_squares(diff);
}

double residual(const MeasurementOperator& op, const Pose3D& xhat0_mm, const Measurement& y) {
    Tape tape;
    Var x = tape.constant(xhat0_mm.flat());
    return tape.value(residual_on(tape, op, x, y, 1.0)).item();
}

double average_bone_length(const Pose3D& pose, const SkeletonTopology& topo) {
    auto lengths = bone_lengths(pose, topo);
    return std::accumulate(lengths.begin(), lengths.end(), 0.0) / static_cast<double>(kNumBones);
}

}  // namespace posediff
