#include "posediff/skeleton.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>

namespace posediff {

const SkeletonTopology& SkeletonTopology::h36m17() {
    static const SkeletonTopology topo = [] {
        SkeletonTopology t;
        t.joint_names = {"pelvis",     "r_hip",   "r_knee",     "r_foot",  "l_hip",
                         "l_knee",     "l_foot",  "spine",      "thorax",  "neck",
                         "head",       "l_shoulder", "l_elbow", "l_wrist", "r_shoulder",
                         "r_elbow",    "r_wrist"};
        t.parent = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};
        int b = 0;
        for (int j = 0; j < kNumJoints; ++j) {
            if (t.parent[j] < 0) continue;
            t.bones[b++] = {t.parent[j], j};
        }
        // Legs are hip/knee/foot, arms are shoulder/elbow/wrist, and the spine
        // group is the central hip plus thorax and neck.
        t.part_groups = {
            {"right_leg", {1, 2, 3}},
            {"left_leg", {4, 5, 6}},
            {"right_arm", {14, 15, 16}},
            {"left_arm", {11, 12, 13}},
            {"spine", {0, 8, 9}},
        };
        return t;
    }();
    return topo;
}

Tensor Pose3D::flat() const {
    std::vector<double> v(joints.data(), joints.data() + kNumJoints * 3);
    return Tensor::from({kNumJoints * 3}, std::move(v));
}

Pose3D Pose3D::from_flat(const Tensor& t) {
    if (t.numel() != kNumJoints * 3) {
        throw std::invalid_argument("Pose3D::from_flat: expected 51 values, got " +
                                    std::to_string(t.numel()));
    }
    return from_flat(t.data());
}

Pose3D Pose3D::from_flat(const double* v51) {
    Pose3D p;
    for (int j = 0; j < kNumJoints; ++j) {
        p.joints(j, 0) = v51[j * 3 + 0];
        p.joints(j, 1) = v51[j * 3 + 1];
        p.joints(j, 2) = v51[j * 3 + 2];
    }
    return p;
}

Pose3D root_center(const Pose3D& pose) {
    Pose3D out = pose;
    Eigen::RowVector3d pelvis = pose.joints.row(0);
    out.joints.rowwise() -= pelvis;
    return out;
}

std::array<double, kNumBones> bone_lengths(const Pose3D& pose, const SkeletonTopology& topo) {
    std::array<double, kNumBones> out{};
    for (int b = 0; b < kNumBones; ++b) {
        auto [p, c] = topo.bones[b];
        out[b] = (pose.joints.row(c) - pose.joints.row(p)).norm();
    }
    return out;
}

double mpjpe(const Pose3D& pred, const Pose3D& gt) {
    double sum = 0.0;
    for (int j = 0; j < kNumJoints; ++j) {
        sum += (pred.joints.row(j) - gt.joints.row(j)).norm();
    }
    return sum / kNumJoints;
}

double mpjpe_over(const Pose3D& pred, const Pose3D& gt, const std::vector<int>& joints) {
    if (joints.empty()) throw std::invalid_argument("mpjpe_over: empty joint set");
    double sum = 0.0;
    for (int j : joints) {
        if (j < 0 || j >= kNumJoints) throw std::invalid_argument("mpjpe_over: joint out of range");
        sum += (pred.joints.row(j) - gt.joints.row(j)).norm();
    }
    return sum / static_cast<double>(joints.size());
}

double pa_mpjpe(const Pose3D& pred, const Pose3D& gt) {
    using Mat = Eigen::Matrix<double, kNumJoints, 3>;
    Mat p = pred.joints;
    Mat g = gt.joints;
    Eigen::RowVector3d p_mean = p.colwise().mean();
    Eigen::RowVector3d g_mean = g.colwise().mean();
    p.rowwise() -= p_mean;
    g.rowwise() -= g_mean;

    double p_var = p.squaredNorm();
    double g_var = g.squaredNorm();
    if (g_var <= 0.0) throw std::invalid_argument("pa_mpjpe: degenerate ground truth (zero spread)");
    if (p_var <= 0.0) throw std::invalid_argument("pa_mpjpe: degenerate prediction (zero spread)");

    Eigen::Matrix3d h = p.transpose() * g;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    Eigen::Matrix3d v = svd.matrixV();
    Eigen::Vector3d s = svd.singularValues();
    // Proper rotation only: fold a reflection into the smallest singular value.
    double d = (v * u.transpose()).determinant();
    Eigen::Vector3d corr(1.0, 1.0, d < 0 ? -1.0 : 1.0);
    Eigen::Matrix3d r = v * corr.asDiagonal() * u.transpose();
    double scale_fit = (s.array() * corr.array()).sum() / p_var;

    Mat aligned = scale_fit * (r * p.transpose()).transpose();
    aligned.rowwise() += g_mean;
    Pose3D ap;
    ap.joints = aligned;
    return mpjpe(ap, gt);
}

PckAuc pck_auc(const std::vector<Pose3D>& preds, const std::vector<Pose3D>& gts,
               double threshold_max) {
    if (preds.empty() || preds.size() != gts.size()) {
        throw std::invalid_argument("pck_auc: lists must be nonempty and equal-length");
    }
    std::vector<double> errors;
    errors.reserve(preds.size() * kNumJoints);
    for (size_t i = 0; i < preds.size(); ++i) {
        for (int j = 0; j < kNumJoints; ++j) {
            errors.push_back((preds[i].joints.row(j) - gts[i].joints.row(j)).norm());
        }
    }
    auto pck_at = [&](double thr) {
        int64_t ok = 0;
        for (double e : errors) ok += (e < thr) ? 1 : 0;
        return 100.0 * static_cast<double>(ok) / static_cast<double>(errors.size());
    };
    PckAuc out;
    out.pck150 = pck_at(150.0);
    int n_thr = static_cast<int>(std::lround(threshold_max / 5.0)) + 1;  // 0,5,...,max
    double acc = 0.0;
    for (int k = 0; k < n_thr; ++k) acc += pck_at(5.0 * k);
    out.auc = acc / n_thr;
    return out;
}

}  // namespace posediff
