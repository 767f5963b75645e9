#include "posediff/data.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "posediff/rng.hpp"

namespace posediff {

void SyntheticGenConfig::validate() const {
    if (n_poses < 0) throw std::invalid_argument("generator: n_poses must be >= 0");
    for (double s : segment_lengths_mm) {
        if (!(s > 0.0)) throw std::invalid_argument("generator: segment lengths must be > 0");
    }
    if (!(trajectory_depth_range_mm.first > 0.0) ||
        trajectory_depth_range_mm.second < trajectory_depth_range_mm.first) {
        throw std::invalid_argument("generator: depth range must satisfy 0 < min <= max");
    }
    for (auto [lo, hi] : joint_angle_limits_deg) {
        if (lo > hi) throw std::invalid_argument("generator: angle limit min exceeds max");
    }
}

const std::array<Eigen::Vector3d, kNumBones>& rest_bone_directions() {
    // Rest stance in a y-down camera-style frame: legs along +y, spine along
    // -y, arms straight out along x.
    static const std::array<Eigen::Vector3d, kNumBones> dirs = [] {
        std::array<Eigen::Vector3d, kNumBones> d;
        d[0] = {-1, 0, 0};  // pelvis -> r_hip
        d[1] = {0, 1, 0};   // r_hip -> r_knee
        d[2] = {0, 1, 0};   // r_knee -> r_foot
        d[3] = {1, 0, 0};   // pelvis -> l_hip
        d[4] = {0, 1, 0};
        d[5] = {0, 1, 0};
        d[6] = {0, -1, 0};  // pelvis -> spine
        d[7] = {0, -1, 0};  // spine -> thorax
        d[8] = {0, -1, 0};  // thorax -> neck
        d[9] = {0, -1, 0};  // neck -> head
        d[10] = {1, 0, 0};  // thorax -> l_shoulder
        d[11] = {1, 0, 0};
        d[12] = {1, 0, 0};
        d[13] = {-1, 0, 0};  // thorax -> r_shoulder
        d[14] = {-1, 0, 0};
        d[15] = {-1, 0, 0};
        return d;
    }();
    return dirs;
}

namespace {

Eigen::Matrix3d euler_zyx(double ax, double ay, double az) {
    return (Eigen::AngleAxisd(az, Eigen::Vector3d::UnitZ()) *
            Eigen::AngleAxisd(ay, Eigen::Vector3d::UnitY()) *
            Eigen::AngleAxisd(ax, Eigen::Vector3d::UnitX()))
        .toRotationMatrix();
}

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

}  // namespace

std::vector<PoseRecord> generate_synthetic_dataset(const SyntheticGenConfig& cfg) {
    cfg.validate();
    const SkeletonTopology& topo = SkeletonTopology::h36m17();
    const auto& rest = rest_bone_directions();

    // bone index owned by each child joint
    std::array<int, kNumJoints> bone_of{};
    bone_of.fill(-1);
    for (int b = 0; b < kNumBones; ++b) bone_of[static_cast<size_t>(topo.bones[b].second)] = b;

    std::vector<PoseRecord> out;
    out.reserve(static_cast<size_t>(cfg.n_poses));
    for (int i = 0; i < cfg.n_poses; ++i) {
        auto rng = make_rng(cfg.seed, static_cast<uint64_t>(i));
        auto uniform = [&](double lo, double hi) {
            std::uniform_real_distribution<double> d(lo, hi);
            return d(rng);
        };

        auto [yaw_lo, yaw_hi] = cfg.joint_angle_limits_deg[0];
        double tilt = cfg.root_tilt_deg * kDegToRad;
        Eigen::Matrix3d root_rot = euler_zyx(uniform(-tilt, tilt),
                                             uniform(yaw_lo * kDegToRad, yaw_hi * kDegToRad),
                                             uniform(-tilt, tilt));

        std::array<Eigen::Matrix3d, kNumJoints> global;
        global[0] = root_rot;
        Pose3D rooted;
        rooted.joints.row(0).setZero();
        for (int b = 0; b < kNumBones; ++b) {
            auto [parent, child] = topo.bones[b];
            auto [lo, hi] = cfg.joint_angle_limits_deg[static_cast<size_t>(child)];
            double lo_r = lo * kDegToRad, hi_r = hi * kDegToRad;
            Eigen::Matrix3d local =
                euler_zyx(uniform(lo_r, hi_r), uniform(lo_r, hi_r), uniform(lo_r, hi_r));
            global[static_cast<size_t>(child)] = global[static_cast<size_t>(parent)] * local;
            Eigen::Vector3d offset = global[static_cast<size_t>(child)] * rest[b] *
                                     cfg.segment_lengths_mm[static_cast<size_t>(b)];
            rooted.joints.row(child) = rooted.joints.row(parent) + offset.transpose();
        }

        PoseRecord rec;
        rec.id = i;
        rec.intrinsics = cfg.intrinsics;
        double depth = uniform(cfg.trajectory_depth_range_mm.first, cfg.trajectory_depth_range_mm.second);
        rec.trajectory.pelvis = Eigen::Vector3d(uniform(-cfg.lateral_range_mm, cfg.lateral_range_mm),
                                                uniform(-cfg.lateral_range_mm, cfg.lateral_range_mm),
                                                depth);
        rec.pose3d = rooted;
        rec.pose3d.joints.rowwise() += rec.trajectory.pelvis.transpose();
        rec.pose2d = project_perspective(rooted, rec.trajectory, rec.intrinsics);
        out.push_back(std::move(rec));
    }
    return out;
}

NormalizationInfo compute_normalization(const std::vector<PoseRecord>& records) {
    if (records.empty()) throw std::invalid_argument("compute_normalization: empty dataset");
    double acc = 0.0;
    int64_t count = 0;
    for (const PoseRecord& rec : records) {
        Pose3D rooted = rec.rooted();
        for (int j = 1; j < kNumJoints; ++j) {  // pelvis is identically zero after rooting
            for (int c = 0; c < 3; ++c) {
                double v = rooted.joints(j, c);
                acc += v * v;
                ++count;
            }
        }
    }
    NormalizationInfo info;
    info.scale_mm = std::sqrt(acc / static_cast<double>(count));
    if (!(info.scale_mm > 0.0)) {
        throw std::invalid_argument("compute_normalization: degenerate dataset (zero spread)");
    }
    return info;
}

Tensor normalized_dataset(const std::vector<PoseRecord>& records, double scale_mm) {
    Tensor data({static_cast<int64_t>(records.size()), kNumJoints * 3});
    for (size_t i = 0; i < records.size(); ++i) {
        Pose3D rooted = records[i].rooted();
        for (int j = 0; j < kNumJoints; ++j) {
            for (int c = 0; c < 3; ++c) {
                data[static_cast<int64_t>(i) * kNumJoints * 3 + j * 3 + c] =
                    rooted.joints(j, c) / scale_mm;
            }
        }
    }
    return data;
}

// ---- pose file I/O ----------------------------------------------------------

namespace {

constexpr const char* kPoseFileHeader = "posefile 1";

void append_value(std::string& line, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), " %.12g", v);
    line += buf;
}

}  // namespace

std::string pose_file_field_spec() {
    return "posefile 1 fields, space-separated, one record per line:\n"
           "  1      id (integer)\n"
           "  2-52   pose3d: x y z per joint (mm, camera frame), joints "
           "pelvis, r_hip, r_knee, r_foot, l_hip, l_knee, l_foot, spine, thorax, neck, head, "
           "l_shoulder, l_elbow, l_wrist, r_shoulder, r_elbow, r_wrist\n"
           "  53-55  trajectory: pelvis x y z (mm)\n"
           "  56-59  intrinsics: fx fy cx cy (px)\n"
           "  60-93  optional pose2d: u v per joint (px), same joint order\n";
}

void save_pose_file(const std::vector<PoseRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << kPoseFileHeader << "\n";
    for (const PoseRecord& rec : records) {
        std::string line = std::to_string(rec.id);
        for (int j = 0; j < kNumJoints; ++j) {
            for (int c = 0; c < 3; ++c) append_value(line, rec.pose3d.joints(j, c));
        }
        for (int c = 0; c < 3; ++c) append_value(line, rec.trajectory.pelvis(c));
        append_value(line, rec.intrinsics.fx);
        append_value(line, rec.intrinsics.fy);
        append_value(line, rec.intrinsics.cx);
        append_value(line, rec.intrinsics.cy);
        if (rec.pose2d) {
            for (int j = 0; j < kNumJoints; ++j) {
                for (int c = 0; c < 2; ++c) append_value(line, rec.pose2d->joints(j, c));
            }
        }
        out << line << "\n";
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<PoseRecord> load_pose_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open pose file " + path);
    std::string line;
    if (!std::getline(in, line)) return {};  // empty file: empty dataset
    if (line != kPoseFileHeader) {
        throw std::runtime_error(path + ": unsupported pose file header '" + line + "'");
    }
    std::vector<PoseRecord> out;
    int64_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::vector<double> vals;
        double v;
        while (ss >> v) vals.push_back(v);
        if (!ss.eof()) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed value");
        }
        constexpr size_t kBase = 1 + 51 + 3 + 4;
        if (vals.size() != kBase && vals.size() != kBase + 34) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                                     std::to_string(kBase) + " or " + std::to_string(kBase + 34) +
                                     " fields, got " + std::to_string(vals.size()));
        }
        PoseRecord rec;
        size_t k = 0;
        rec.id = static_cast<int64_t>(vals[k++]);
        for (int j = 0; j < kNumJoints; ++j) {
            for (int c = 0; c < 3; ++c) rec.pose3d.joints(j, c) = vals[k++];
        }
        for (int c = 0; c < 3; ++c) rec.trajectory.pelvis(c) = vals[k++];
        rec.intrinsics.fx = vals[k++];
        rec.intrinsics.fy = vals[k++];
        rec.intrinsics.cx = vals[k++];
        rec.intrinsics.cy = vals[k++];
        if (vals.size() == kBase + 34) {
            Pose2D p2;
            for (int j = 0; j < kNumJoints; ++j) {
                for (int c = 0; c < 2; ++c) p2.joints(j, c) = vals[k++];
            }
            rec.pose2d = p2;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

// ---- task datasets ----------------------------------------------------------

Task parse_task(const std::string& name) {
    if (name == "estimate") return Task::estimate;
    if (name == "denoise") return Task::denoise;
    if (name == "complete") return Task::complete;
    if (name == "generate") return Task::generate;
    throw std::invalid_argument("unknown task '" + name +
                                "' (expected estimate, denoise, complete or generate)");
}

std::string task_name(Task t) {
    switch (t) {
        case Task::estimate: return "estimate";
        case Task::denoise: return "denoise";
        case Task::complete: return "complete";
        case Task::generate: return "generate";
    }
    return "?";
}

Pose3D mean_pose(const std::vector<PoseRecord>& records) {
    if (records.empty()) throw std::invalid_argument("mean_pose: empty dataset");
    Pose3D mean;
    for (const PoseRecord& rec : records) mean.joints += rec.rooted().joints;
    mean.joints /= static_cast<double>(records.size());
    return mean;
}

std::vector<TaskProblem> make_task_dataset(const std::vector<PoseRecord>& records, Task task,
                                           const TaskParams& params, uint64_t seed) {
    if (task == Task::generate) {
        throw std::invalid_argument("make_task_dataset: generation has no measurements");
    }
    const SkeletonTopology& topo = SkeletonTopology::h36m17();

    std::array<bool, kNumJoints> group_mask{};
    if (task == Task::complete) {
        auto it = topo.part_groups.find(params.mask_group);
        if (it == topo.part_groups.end()) {
            std::string names;
            for (const auto& [name, _] : topo.part_groups) {
                if (!names.empty()) names += ", ";
                names += name;
            }
            throw std::invalid_argument("unknown part group '" + params.mask_group +
                                        "' (valid: " + names + ")");
        }
        group_mask.fill(true);
        for (int j : it->second) group_mask[static_cast<size_t>(j)] = false;  // masked = hidden
    }
    Pose3D fill;
    if (task == Task::complete) fill = mean_pose(records);

    std::vector<TaskProblem> out;
    out.reserve(records.size());
    for (const PoseRecord& rec : records) {
        TaskProblem tp;
        tp.id = rec.id;
        tp.gt = rec.rooted();
        switch (task) {
            case Task::estimate: {
                Pose2D y2d = rec.pose2d ? *rec.pose2d
                                        : project_perspective(tp.gt, rec.trajectory, rec.intrinsics);
                tp.problem.op = ProjectionOp{rec.intrinsics, rec.trajectory};
                tp.problem.y = Measurement2D{y2d};
                if (params.init == InitKind::random) {
                    tp.problem.init_kind = InitKind::random;
                } else if (params.use_inverse_projection) {
                    tp.problem.init = inverse_project_init(y2d, rec.intrinsics, rec.trajectory);
                } else {
                    tp.problem.init = tp.gt;  // oracle init, diagnostics only
                }
                break;
            }
            case Task::denoise: {
                auto rng = make_rng(seed, static_cast<uint64_t>(rec.id));
                double avg_bone = average_bone_length(tp.gt, topo);
                Pose3D noisy = apply_noise(tp.gt, params.noise_kind, params.intensity, avg_bone, rng);
                noisy = root_center(noisy);  // the model's space is pelvis-rooted
                std::array<bool, kNumJoints> all_true{};
                all_true.fill(true);
                tp.problem.op = AdditiveNoiseOp{params.noise_kind,
                                                params.intensity * avg_bone};
                tp.problem.y = Measurement3D{noisy, all_true};
                tp.problem.init = noisy;
                tp.problem.init_kind = params.init;
                break;
            }
            case Task::complete: {
                Measurement3D masked = apply_mask(tp.gt, group_mask);
                tp.problem.op = MaskingOp{group_mask};
                tp.problem.y = masked;
                Pose3D init = tp.gt;
                for (int j = 0; j < kNumJoints; ++j) {
                    if (!group_mask[static_cast<size_t>(j)]) {
                        init.joints.row(j) = fill.joints.row(j);
                    }
                }
                tp.problem.init = init;
                tp.problem.init_kind = params.init;
                break;
            }
            case Task::generate: break;
        }
        out.push_back(std::move(tp));
    }
    return out;
}

}  // namespace posediff
