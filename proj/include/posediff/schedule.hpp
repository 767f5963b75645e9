#pragma once

#include <vector>

#include "posediff/tensor.hpp"

namespace posediff {

/// Discrete-time noising schedule. Timesteps are 1-based; index 0 holds the
/// conventions beta[0] = 0, alpha[0] = 1, alpha_bar[0] = 1.
struct NoiseSchedule {
    int steps = 0;                    // T
    std::vector<double> beta;         // size T+1
    std::vector<double> alpha;        // 1 - beta
    std::vector<double> alpha_bar;    // running product of alpha

    void check_t(int t) const;        // throws if t outside [1, T]
};

/// beta rises linearly from beta1 at t=1 to betaT at t=T.
NoiseSchedule build_linear_schedule(int steps, double beta1, double betaT);

/// Timesteps at which the denoiser is evaluated during reverse sampling,
/// strictly decreasing; the final entry steps to t=0 implicitly.
struct StepPlan {
    std::vector<int> timesteps;
    double eta = 0.0;  // DDIM stochasticity in [0, 1]
};

/// n_steps timesteps evenly spaced from `truncation` down to 1
/// (just {truncation} when n_steps is 1).
StepPlan make_step_plan(const NoiseSchedule& sched, int truncation, int n_steps, double eta);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

/// xhat0 = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
Tensor predict_x0(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched);

/// Posterior standard deviation sqrt((1 - abar_{t-1}) / (1 - abar_t) * beta_t).
double ddpm_sigma(const NoiseSchedule& sched, int t);

/// One ancestral reverse step t -> t-1:
/// sqrt(alpha_t)(1-abar_{t-1})/(1-abar_t) x_t + sqrt(abar_{t-1}) beta_t/(1-abar_t) xhat0 + sigma_t z
Tensor ddpm_step(const Tensor& x_t, const Tensor& eps_hat, int t, const Tensor& z,
                 const NoiseSchedule& sched);

double ddim_sigma(const NoiseSchedule& sched, int t, int t_prev, double eta);

/// Generalized step t -> t_prev (t_prev may be 0):
/// sqrt(abar_p) xhat0 + sqrt(1 - abar_p - sigma^2) eps_hat + sigma z
Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int t, int t_prev, double eta,
                 const Tensor& z, const NoiseSchedule& sched);

}  // namespace posediff
