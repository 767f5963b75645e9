#pragma once

#include <cstdint>
#include <vector>

#include "posediff/checkpoint.hpp"
#include "posediff/denoiser.hpp"
#include "posediff/operators.hpp"
#include "posediff/schedule.hpp"
#include "posediff/skeleton.hpp"

namespace posediff {

enum class SolverKind { dps, mcg, pigdm };
enum class SamplerKind { ddpm, ddim };

struct SolverConfig {
    SolverKind solver = SolverKind::dps;
    SamplerKind sampler = SamplerKind::ddim;
    int truncation = 450;
    int n_steps = 450;
    double eta = 0.0;                  // DDIM stochasticity
    double rho = 0.003;                // likelihood guidance scale
    std::vector<double> rho_schedule;  // optional per-step values, outermost first
    bool freeze_eps = false;           // treat eps_hat as constant in the guidance gradient
    uint64_t seed = 1;

    double rho_at(size_t step_index) const;
    void validate(const NoiseSchedule& sched) const;
};

enum class InitKind { pose, random };

/// One inverse problem: the forward operator, its measurement, and the
/// starting pose (millimeters, pelvis-rooted) or a random-latent start.
struct ProblemSpec {
    MeasurementOperator op;
    Measurement y;
    Pose3D init;
    InitKind init_kind = InitKind::pose;
};

/// Inference-time model: EMA weights plus the schedule and the scale that
/// maps millimeters to model units.
struct PriorModel {
    DenoiserParams net;
    NoiseSchedule sched;
    double scale_mm = 1.0;
};

PriorModel make_prior(const Checkpoint& ckpt);

/// Reverse diffusion guided by the gradient of the measurement residual at
/// the posterior mean. `stream` decorrelates noise across samples solved
/// with one config. Throws on a non-finite state, naming the step.
Pose3D dps_sample(const PriorModel& model, const ProblemSpec& problem, const SolverConfig& cfg,
                  uint64_t stream = 0);

/// DPS plus hard data consistency: observed entries of xhat0 are replaced by
/// the measurement before each reverse step. Linear operators only.
Pose3D mcg_sample(const PriorModel& model, const ProblemSpec& problem, const SolverConfig& cfg,
                  uint64_t stream = 0);

/// Guidance through the operator's pseudoinverse direction, weighted by
/// r_t^2 = (1 - abar_t) / (2 - abar_t).
Pose3D pigdm_sample(const PriorModel& model, const ProblemSpec& problem, const SolverConfig& cfg,
                    uint64_t stream = 0);

/// Dispatch on cfg.solver.
Pose3D solve(const PriorModel& model, const ProblemSpec& problem, const SolverConfig& cfg,
             uint64_t stream = 0);

/// Solves independent problems on a bounded worker pool; results are ordered
/// by problem index and identical to serial execution.
std::vector<Pose3D> solve_batch(const PriorModel& model, const std::vector<ProblemSpec>& problems,
                                const SolverConfig& cfg, int workers = 0);

/// Ancestral (or DDIM) sampling of the unconditional prior from standard
/// normal latents; returns de-normalized rooted poses.
std::vector<Pose3D> unconditional_sample(const PriorModel& model, int n, uint64_t seed,
                                         SamplerKind sampler = SamplerKind::ddpm,
                                         int n_steps = 0 /* 0 = one per timestep */,
                                         double eta = 1.0);

}  // namespace posediff
