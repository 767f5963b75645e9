#include "posediff/solvers.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "posediff/rng.hpp"

namespace posediff {

double SolverConfig::rho_at(size_t step_index) const {
    if (rho_schedule.empty()) return rho;
    if (step_index >= rho_schedule.size()) {
        throw std::invalid_argument("rho schedule shorter than the step plan");
    }
    return rho_schedule[step_index];
}

void SolverConfig::validate(const NoiseSchedule& sched) const {
    if (rho < 0.0) throw std::invalid_argument("solver config: rho must be >= 0");
    for (double r : rho_schedule) {
        if (r < 0.0) throw std::invalid_argument("solver config: rho schedule entries must be >= 0");
    }
    if (n_steps < 1) throw std::invalid_argument("solver config: n_steps must be >= 1");
    if (truncation < 1 || truncation > sched.steps) {
        throw std::invalid_argument("solver config: truncation must lie in [1, T]");
    }
    if (sampler == SamplerKind::ddpm && n_steps != truncation) {
        throw std::invalid_argument(
            "solver config: the ddpm sampler steps one timestep at a time (n_steps must equal "
            "truncation)");
    }
    if (!rho_schedule.empty() && static_cast<int>(rho_schedule.size()) != n_steps) {
        throw std::invalid_argument("solver config: rho schedule length must equal n_steps");
    }
}

PriorModel make_prior(const Checkpoint& ckpt) {
    PriorModel m;
    m.sched = ckpt.schedule();
    m.scale_mm = ckpt.scale_mm;
    // Inference always runs the EMA shadow.
    m.net = DenoiserParams::init(ckpt.model, m.sched.steps, 0).with_weights(ckpt.ema);
    return m;
}

namespace {

Tensor normalized_flat(const Pose3D& pose, double scale_mm) {
    Tensor x = pose.flat();
    for (int64_t i = 0; i < x.numel(); ++i) x[i] /= scale_mm;
    return x;
}

Pose3D denormalized_pose(const Tensor& x, double scale_mm) {
    Tensor mm = x;
    for (int64_t i = 0; i < mm.numel(); ++i) mm[i] *= scale_mm;
    return root_center(Pose3D::from_flat(mm));
}

Tensor draw_normal(std::vector<int64_t> shape, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> d(0.0, 1.0);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = d(rng);
    return t;
}

// Reverse-step kernels parameterized by an explicit xhat0 so that MCG's
// data-consistency replacement feeds straight into the step.
Tensor step_from_xhat0(const Tensor& x_t, const Tensor& xhat0, const Tensor& eps_hat, int t,
                       int t_prev, const SolverConfig& cfg, const Tensor& z,
                       const NoiseSchedule& sched) {
    Tensor out(x_t.shape());
    if (cfg.sampler == SamplerKind::ddpm) {
        double ab = sched.alpha_bar[static_cast<size_t>(t)];
        double ab_prev = sched.alpha_bar[static_cast<size_t>(t) - 1];
        double c_xt = std::sqrt(sched.alpha[static_cast<size_t>(t)]) * (1.0 - ab_prev) / (1.0 - ab);
        double c_x0 = std::sqrt(ab_prev) * sched.beta[static_cast<size_t>(t)] / (1.0 - ab);
        double sigma = ddpm_sigma(sched, t);
        for (int64_t i = 0; i < out.numel(); ++i) {
            out[i] = c_xt * x_t[i] + c_x0 * xhat0[i] + sigma * z[i];
        }
    } else {
        double sigma = ddim_sigma(sched, t, t_prev, cfg.eta);
        double ab_prev = sched.alpha_bar[static_cast<size_t>(t_prev)];
        double dir = 1.0 - ab_prev - sigma * sigma;
        double c_eps = dir > 0.0 ? std::sqrt(dir) : 0.0;
        double c_x0 = std::sqrt(ab_prev);
        for (int64_t i = 0; i < out.numel(); ++i) {
            out[i] = c_x0 * xhat0[i] + c_eps * eps_hat[i] + sigma * z[i];
        }
    }
    return out;
}

std::array<bool, kNumJoints> observed_mask(const MeasurementOperator& op) {
    if (const auto* m = std::get_if<MaskingOp>(&op)) return m->mask;
    std::array<bool, kNumJoints> all{};
    all.fill(true);
    return all;
}

/// Measurement with 3D content scaled into model units for the linear
/// operators; projection measurements stay in pixels.
Measurement normalized_measurement(const Measurement& y, double scale_mm) {
    if (const auto* y3 = std::get_if<Measurement3D>(&y)) {
        Measurement3D out = *y3;
        out.pose.joints /= scale_mm;
        return out;
    }
    return y;
}

/// Pseudoinverse lift of a measurement into signal space (model units).
Tensor pigdm_lift(const MeasurementOperator& op, const Measurement& y_norm,
                  const Tensor& xhat0_val, double scale_mm) {
    if (const auto* proj = std::get_if<ProjectionOp>(&op)) {
        const auto& y2 = std::get<Measurement2D>(y_norm);
        Pose3D xhat_mm = Pose3D::from_flat(xhat0_val);
        xhat_mm.joints *= scale_mm;
        Pose2D fx = project_perspective(xhat_mm, proj->trajectory, proj->intrinsics);
        Pose3D lift_y = inverse_project_init(y2.pixels, proj->intrinsics, proj->trajectory);
        Pose3D lift_fx = inverse_project_init(fx, proj->intrinsics, proj->trajectory);
        Tensor v({kNumJoints * 3});
        for (int j = 0; j < kNumJoints; ++j) {
            for (int c = 0; c < 3; ++c) {
                v[j * 3 + c] = (lift_y.joints(j, c) - lift_fx.joints(j, c)) / scale_mm;
            }
        }
        return v;
    }
    const auto& y3 = std::get<Measurement3D>(y_norm);
    std::array<bool, kNumJoints> mask = observed_mask(op);
    Tensor v = Tensor::zeros({kNumJoints * 3});
    for (int j = 0; j < kNumJoints; ++j) {
        if (!mask[static_cast<size_t>(j)]) continue;
        for (int c = 0; c < 3; ++c) {
            v[j * 3 + c] = y3.pose.joints(j, c) - xhat0_val[j * 3 + c];
        }
    }
    return v;
}

Pose3D run_guided(const PriorModel& model, const ProblemSpec& problem, const SolverConfig& cfg,
                  SolverKind kind, uint64_t stream) {
    const NoiseSchedule& sched = model.sched;
    cfg.validate(sched);
    if (kind == SolverKind::mcg && std::holds_alternative<ProjectionOp>(problem.op)) {
        throw std::invalid_argument(
            "mcg: unsupported operator (projection is nonlinear; use dps or pigdm)");
    }
    const bool needs_2d = std::holds_alternative<ProjectionOp>(problem.op);
    if (needs_2d != std::holds_alternative<Measurement2D>(problem.y)) {
        throw std::invalid_argument("solver: operator and measurement kinds do not match");
    }

    StepPlan plan = make_step_plan(sched, cfg.truncation, cfg.n_steps, cfg.eta);
    auto rng = make_rng(cfg.seed, 0x50013800ull + stream);

    Tensor x = problem.init_kind == InitKind::random
                   ? draw_normal({kNumJoints * 3}, rng)
                   : normalized_flat(problem.init, model.scale_mm);
    Measurement y_norm = normalized_measurement(problem.y, model.scale_mm);

    for (size_t k = 0; k < plan.timesteps.size(); ++k) {
        int t = plan.timesteps[k];
        int t_prev = (k + 1 < plan.timesteps.size()) ? plan.timesteps[k + 1] : 0;
        double rho_t = cfg.rho_at(k);

        Tape tape;
        Var x_var = tape.leaf(x);
        Var eps_hat_var;
        if (cfg.freeze_eps) {
            eps_hat_var = tape.constant(predict_noise(model.net, x, {t}, sched));
        } else {
            BoundDenoiser net = bind_denoiser(tape, model.net, /*as_leaves=*/false);
            eps_hat_var = predict_noise_on(tape, net, x_var, {t}, sched);
        }
        double ab = sched.alpha_bar[static_cast<size_t>(t)];
        Var xhat0_var = add(scale(x_var, 1.0 / std::sqrt(ab)),
                            scale(eps_hat_var, -std::sqrt(1.0 - ab) / std::sqrt(ab)));

        Tensor guidance;
        bool has_guidance = rho_t > 0.0;
        if (has_guidance) {
            if (kind == SolverKind::pigdm) {
                Tensor v = pigdm_lift(problem.op, y_norm, tape.value(xhat0_var), model.scale_mm);
                Var s = reduce_sum(cmul(xhat0_var, v));
                guidance = tape.grad_one(s, x_var);
            } else {
                Var r = residual_on(tape, problem.op, xhat0_var, y_norm, model.scale_mm);
                guidance = tape.grad_one(r, x_var);
            }
        }

        Tensor eps_hat = tape.value(eps_hat_var);
        Tensor xhat0 = tape.value(xhat0_var);
        if (kind == SolverKind::mcg) {
            const auto& y3 = std::get<Measurement3D>(y_norm);
            std::array<bool, kNumJoints> mask = observed_mask(problem.op);
            for (int j = 0; j < kNumJoints; ++j) {
                if (!mask[static_cast<size_t>(j)]) continue;
                for (int c = 0; c < 3; ++c) xhat0[j * 3 + c] = y3.pose.joints(j, c);
            }
        }

        Tensor z = draw_normal(x.shape(), rng);
        Tensor x_next = step_from_xhat0(x, xhat0, eps_hat, t, t_prev, cfg, z, sched);
        if (has_guidance) {
            double sign = (kind == SolverKind::pigdm) ? 1.0 : -1.0;
            double w = rho_t;
            if (kind == SolverKind::pigdm) w *= (1.0 - ab) / (2.0 - ab);
            for (int64_t i = 0; i < x_next.numel(); ++i) x_next[i] += sign * w * guidance[i];
        }
        if (kind == SolverKind::mcg && t_prev == 0) {
            // x_0 lives in signal space: hard consistency holds on the output.
            const auto& y3 = std::get<Measurement3D>(y_norm);
            std::array<bool, kNumJoints> mask = observed_mask(problem.op);
            for (int j = 0; j < kNumJoints; ++j) {
                if (!mask[static_cast<size_t>(j)]) continue;
                for (int c = 0; c < 3; ++c) x_next[j * 3 + c] = y3.pose.joints(j, c);
            }
        }
        for (int64_t i = 0; i < x_next.numel(); ++i) {
            if (!std::isfinite(x_next[i])) {
                throw std::runtime_error("solver: non-finite state at step " + std::to_string(k) +
                                         " (t=" + std::to_string(t) + ")");
            }
        }
        x = std::move(x_next);
    }
    return denormalized_pose(x, model.scale_mm);
}

}  // namespace

Pose3D dps_sample(const PriorModel& model, const ProblemSpec& problem, const SolverConfig& cfg,
                  uint64_t stream) {
    return run_guided(model, problem, cfg, SolverKind::dps, stream);
}

Pose3D mcg_sample(const PriorModel& model, const ProblemSpec& problem, const SolverConfig& cfg,
                  uint64_t stream) {
    return run_guided(model, problem, cfg, SolverKind::mcg, stream);
}

Pose3D pigdm_sample(const PriorModel& model, const ProblemSpec& problem, const SolverConfig& cfg,
                    uint64_t stream) {
    return run_guided(model, problem, cfg, SolverKind::pigdm, stream);
}

Pose3D solve(const PriorModel& model, const ProblemSpec& problem, const SolverConfig& cfg,
             uint64_t stream) {
    return run_guided(model, problem, cfg, cfg.solver, stream);
}

std::vector<Pose3D> solve_batch(const PriorModel& model, const std::vector<ProblemSpec>& problems,
                                const SolverConfig& cfg, int workers) {
    std::vector<Pose3D> out(problems.size());
    if (problems.empty()) return out;
    if (workers <= 0) {
        workers = static_cast<int>(std::thread::hardware_concurrency());
        if (workers < 1) workers = 1;
    }
    workers = std::min<int>(workers, static_cast<int>(problems.size()));
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::string error_message;
    std::mutex error_mutex;
    auto worker = [&] {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= problems.size() || failed.load()) return;
            try {
                out[i] = solve(model, problems[i], cfg, /*stream=*/i);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mutex);
                failed.store(true);
                if (error_message.empty()) {
                    error_message = "sample " + std::to_string(i) + ": " + e.what();
                }
                return;
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failed.load()) throw std::runtime_error("solve_batch: " + error_message);
    return out;
}

std::vector<Pose3D> unconditional_sample(const PriorModel& model, int n, uint64_t seed,
                                         SamplerKind sampler, int n_steps, double eta) {
    if (n < 0) throw std::invalid_argument("unconditional_sample: n must be >= 0");
    std::vector<Pose3D> out;
    if (n == 0) return out;
    const NoiseSchedule& sched = model.sched;
    if (n_steps <= 0) n_steps = sched.steps;
    if (sampler == SamplerKind::ddpm && n_steps != sched.steps) {
        throw std::invalid_argument("unconditional_sample: ddpm runs one step per timestep");
    }
    StepPlan plan = make_step_plan(sched, sched.steps, n_steps, eta);

    auto rng = make_rng(seed, 0x0c0de);
    Tensor x = draw_normal({n, kNumJoints * 3}, rng);
    for (size_t k = 0; k < plan.timesteps.size(); ++k) {
        int t = plan.timesteps[k];
        int t_prev = (k + 1 < plan.timesteps.size()) ? plan.timesteps[k + 1] : 0;
        std::vector<int> t_batch(static_cast<size_t>(n), t);
        Tensor eps_hat = predict_noise(model.net, x, t_batch, sched);
        Tensor z = (t_prev > 0 || sampler == SamplerKind::ddpm) ? draw_normal(x.shape(), rng)
                                                                : Tensor::zeros(x.shape());
        Tensor x0 = predict_x0(x, eps_hat, t, sched);
        SolverConfig step_cfg;
        step_cfg.sampler = sampler;
        step_cfg.eta = eta;
        x = step_from_xhat0(x, x0, eps_hat, t, t_prev, step_cfg, z, sched);
        x.ensure_finite("unconditional_sample step " + std::to_string(k));
    }
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Tensor row({kNumJoints * 3});
        for (int64_t j = 0; j < row.numel(); ++j) row[j] = x[i * kNumJoints * 3 + j];
        out.push_back(denormalized_pose(row, model.scale_mm));
    }
    return out;
}

}  // namespace posediff
