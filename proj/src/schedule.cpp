#include "posediff/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace posediff {

void NoiseSchedule::check_t(int t) const {
    if (t < 1 || t > steps) {
        throw std::invalid_argument("timestep " + std::to_string(t) + " outside [1, " +
                                    std::to_string(steps) + "]");
    }
}

NoiseSchedule build_linear_schedule(int steps, double beta1, double betaT) {
    if (steps < 2) throw std::invalid_argument("schedule needs at least 2 steps");
    if (!(0.0 < beta1 && beta1 < betaT && betaT < 1.0)) {
        throw std::invalid_argument("schedule requires 0 < beta1 < betaT < 1");
    }
    NoiseSchedule s;
    s.steps = steps;
    s.beta.assign(static_cast<size_t>(steps) + 1, 0.0);
    s.alpha.assign(static_cast<size_t>(steps) + 1, 1.0);
    s.alpha_bar.assign(static_cast<size_t>(steps) + 1, 1.0);
    for (int t = 1; t <= steps; ++t) {
        double b = beta1 + (betaT - beta1) * static_cast<double>(t - 1) / (steps - 1);
        s.beta[t] = b;
        s.alpha[t] = 1.0 - b;
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    }
    return s;
}

StepPlan make_step_plan(const NoiseSchedule& sched, int truncation, int n_steps, double eta) {
    if (truncation < 1 || truncation > sched.steps) {
        throw std::invalid_argument("truncation must lie in [1, T]");
    }
    if (n_steps < 1 || n_steps > truncation) {
        throw std::invalid_argument("n_steps must lie in [1, truncation]");
    }
    if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("eta must lie in [0, 1]");
    StepPlan plan;
    plan.eta = eta;
    if (n_steps == 1) {
        plan.timesteps = {truncation};
        return plan;
    }
    plan.timesteps.reserve(static_cast<size_t>(n_steps));
    double span = static_cast<double>(truncation - 1) / (n_steps - 1);
    for (int i = 0; i < n_steps; ++i) {
        plan.timesteps.push_back(static_cast<int>(std::lround(truncation - i * span)));
    }
    return plan;
}

namespace {

void check_same(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shapes " + a.shape_str() + " and " +
                                    b.shape_str() + " differ");
    }
}

}  // namespace

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    sched.check_t(t);
    check_same(x0, eps, "q_sample");
    double ab = sched.alpha_bar[static_cast<size_t>(t)];
    double c0 = std::sqrt(ab), ce = std::sqrt(1.0 - ab);
    Tensor out(x0.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = c0 * x0[i] + ce * eps[i];
    return out;
}

Tensor predict_x0(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
    sched.check_t(t);
    check_same(x_t, eps_hat, "predict_x0");
    double ab = sched.alpha_bar[static_cast<size_t>(t)];
    double inv = 1.0 / std::sqrt(ab), ce = std::sqrt(1.0 - ab);
    Tensor out(x_t.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = inv * (x_t[i] - ce * eps_hat[i]);
    return out;
}

double ddpm_sigma(const NoiseSchedule& sched, int t) {
    sched.check_t(t);
    double ab = sched.alpha_bar[static_cast<size_t>(t)];
    double ab_prev = sched.alpha_bar[static_cast<size_t>(t) - 1];
    return std::sqrt((1.0 - ab_prev) / (1.0 - ab) * sched.beta[static_cast<size_t>(t)]);
}

Tensor ddpm_step(const Tensor& x_t, const Tensor& eps_hat, int t, const Tensor& z,
                 const NoiseSchedule& sched) {
    sched.check_t(t);
    check_same(x_t, eps_hat, "ddpm_step");
    check_same(x_t, z, "ddpm_step");
    double ab = sched.alpha_bar[static_cast<size_t>(t)];
    double ab_prev = sched.alpha_bar[static_cast<size_t>(t) - 1];
    double beta = sched.beta[static_cast<size_t>(t)];
    double alpha = sched.alpha[static_cast<size_t>(t)];
    double c_xt = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab);
    double c_x0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    double sigma = ddpm_sigma(sched, t);
    Tensor x0 = predict_x0(x_t, eps_hat, t, sched);
    Tensor out(x_t.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        out[i] = c_xt * x_t[i] + c_x0 * x0[i] + sigma * z[i];
    }
    return out;
}

double ddim_sigma(const NoiseSchedule& sched, int t, int t_prev, double eta) {
    sched.check_t(t);
    if (t_prev >= t || t_prev < 0) {
        throw std::invalid_argument("ddim_step: t_prev must lie in [0, t)");
    }
    double ab = sched.alpha_bar[static_cast<size_t>(t)];
    double ab_prev = sched.alpha_bar[static_cast<size_t>(t_prev)];
    return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int t, int t_prev, double eta,
                 const Tensor& z, const NoiseSchedule& sched) {
    check_same(x_t, eps_hat, "ddim_step");
    check_same(x_t, z, "ddim_step");
    double sigma = ddim_sigma(sched, t, t_prev, eta);
    double ab_prev = sched.alpha_bar[static_cast<size_t>(t_prev)];
    double dir = 1.0 - ab_prev - sigma * sigma;
    double c_eps = dir > 0.0 ? std::sqrt(dir) : 0.0;
    Tensor x0 = predict_x0(x_t, eps_hat, t, sched);
    Tensor out(x_t.shape());
    double c_x0 = std::sqrt(ab_prev);
    for (int64_t i = 0; i < out.numel(); ++i) {
        out[i] = c_x0 * x0[i] + c_eps * eps_hat[i] + sigma * z[i];
    }
    return out;
}

}  // namespace posediff
