#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "posediff/autodiff.hpp"
#include "posediff/schedule.hpp"
#include "posediff/tensor.hpp"

namespace posediff {

struct DenoiserConfig {
    int dim = 96;        // token width D
    int layers = 4;      // encoder blocks
    int heads = 4;
    int time_dim = 128;  // sinusoidal timestep encoding width

    int ff_dim() const { return 4 * dim; }
    int head_dim() const { return dim / heads; }
    void validate() const;
};

/// Ordered collection of named tensors. Order is fixed at construction and
/// shared by the optimizer state, the EMA shadow, and checkpoints.
class ParamSet {
  public:
    void add(std::string name, Tensor value);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    size_t index_of(const std::string& name) const;
    size_t size() const { return items_.size(); }
    std::pair<const std::string&, Tensor&> item(size_t i);
    std::pair<const std::string&, const Tensor&> item(size_t i) const;

  private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, size_t> index_;
};

/// Noise-prediction network over 17 joint tokens: per-joint linear embedding
/// plus learned position embeddings and an additive timestep embedding, then
/// pre-norm self-attention encoder blocks and a linear head back to 3 values
/// per joint. The head starts at zero so an untrained net predicts no noise.
struct DenoiserParams {
    DenoiserConfig cfg;
    ParamSet weights;
    Tensor time_table;  // [T+1, time_dim] fixed sinusoidal rows

    static DenoiserParams init(const DenoiserConfig& cfg, int max_timestep, uint64_t seed);
    /// Same architecture, weights replaced (used to run the EMA shadow).
    DenoiserParams with_weights(ParamSet w) const;
};

/// Network weights bound onto a tape, either as gradient-tracked leaves
/// (training) or constants (inference / input-gradient only).
struct BoundDenoiser {
    const DenoiserParams* params = nullptr;
    std::vector<Var> vars;  // parallel to params->weights order
    Var var(const std::string& name) const;
};

BoundDenoiser bind_denoiser(Tape& tape, const DenoiserParams& params, bool as_leaves);

/// eps_hat for a batch: x is [B, 51] (or [51]), t has one timestep per row.
/// Output shape equals the input shape.
Var predict_noise_on(Tape& tape, const BoundDenoiser& net, Var x, const std::vector<int>& t,
                     const NoiseSchedule& sched);

/// Value-only convenience wrapper.
Tensor predict_noise(const DenoiserParams& params, const Tensor& x, const std::vector<int>& t,
                     const NoiseSchedule& sched);

struct TrainConfig {
    int epochs = 100;
    int batch_size = 1024;
    double learning_rate = 1e-4;
    double weight_decay = 0.01;
    double ema_ratio = 0.9999;
    uint64_t seed = 1;

    void validate() const;
};

struct AdamWState {
    std::vector<Tensor> m, v;  // parallel to ParamSet order
    int64_t step = 0;

    static AdamWState init(const ParamSet& params);
};

/// One optimization step on a batch of normalized flat poses (rows of
/// `dataset` selected by `indices`). Per-example timestep and noise draws are
/// keyed by (seed, epoch, example id), so batch order does not change them.
/// Returns the batch epsilon-MSE; throws on a non-finite loss.
double training_step(DenoiserParams& params, AdamWState& opt, const Tensor& dataset,
                     const std::vector<int64_t>& indices, int epoch, const NoiseSchedule& sched,
                     const TrainConfig& cfg);

/// shadow <- ratio * shadow + (1 - ratio) * params, elementwise.
void ema_update(ParamSet& shadow, const ParamSet& params, double ratio);

struct TrainResult {
    DenoiserParams params;
    ParamSet ema;
    std::vector<double> epoch_loss;
};

/// Full training loop over normalized poses [N, 51]. Deterministic given the
/// seed. The EMA shadow is the inference model.
TrainResult train_loop(const Tensor& dataset, const DenoiserConfig& net_cfg,
                       const TrainConfig& cfg, const NoiseSchedule& sched,
                       std::ostream* log = nullptr);

}  // namespace posediff
