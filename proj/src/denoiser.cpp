#include "posediff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "posediff/rng.hpp"
#include "posediff/skeleton.hpp"

namespace posediff {

void DenoiserConfig::validate() const {
    if (dim < 1 || layers < 1 || heads < 1 || time_dim < 2 || time_dim % 2 != 0) {
        throw std::invalid_argument("denoiser config: dim/layers/heads must be positive, time_dim even");
    }
    if (dim % heads != 0) throw std::invalid_argument("denoiser config: dim must divide by heads");
}

void ParamSet::add(std::string name, Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    index_[name] = items_.size();
    items_.emplace_back(std::move(name), std::move(value));
}

Tensor& ParamSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter " + name);
    return items_[it->second].second;
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter " + name);
    return items_[it->second].second;
}

size_t ParamSet::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter " + name);
    return it->second;
}

std::pair<const std::string&, Tensor&> ParamSet::item(size_t i) {
    return {items_.at(i).first, items_.at(i).second};
}

std::pair<const std::string&, const Tensor&> ParamSet::item(size_t i) const {
    return {items_.at(i).first, items_.at(i).second};
}

namespace {

Tensor randn(std::vector<int64_t> shape, double stddev, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

Tensor sinusoidal_table(int max_timestep, int dim) {
    Tensor table({max_timestep + 1, dim});
    int half = dim / 2;
    for (int t = 0; t <= max_timestep; ++t) {
        for (int i = 0; i < half; ++i) {
            double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
            table[t * dim + i] = std::sin(t * freq);
            table[t * dim + half + i] = std::cos(t * freq);
        }
    }
    return table;
}

}  // namespace

DenoiserParams DenoiserParams::init(const DenoiserConfig& cfg, int max_timestep, uint64_t seed) {
    cfg.validate();
    auto rng = make_rng(seed, 0xd10d);
    const int64_t d = cfg.dim, ff = cfg.ff_dim(), td = cfg.time_dim;
    const double w_std = 0.02;

    DenoiserParams p;
    p.cfg = cfg;
    p.time_table = sinusoidal_table(max_timestep, cfg.time_dim);
    ParamSet& w = p.weights;
    w.add("joint_embed.w", randn({3, d}, w_std, rng));
    w.add("joint_embed.b", Tensor::zeros({d}));
    w.add("pos_embed", randn({kNumJoints, d}, w_std, rng));
    w.add("time_mlp.w1", randn({td, d}, w_std, rng));
    w.add("time_mlp.b1", Tensor::zeros({d}));
    w.add("time_mlp.w2", randn({d, d}, w_std, rng));
    w.add("time_mlp.b2", Tensor::zeros({d}));
    for (int l = 0; l < cfg.layers; ++l) {
        std::string b = "blocks." + std::to_string(l) + ".";
        w.add(b + "ln1.g", Tensor::full({d}, 1.0));
        w.add(b + "ln1.b", Tensor::zeros({d}));
        w.add(b + "attn.wq", randn({d, d}, w_std, rng));
        w.add(b + "attn.bq", Tensor::zeros({d}));
        w.add(b + "attn.wk", randn({d, d}, w_std, rng));
        w.add(b + "attn.bk", Tensor::zeros({d}));
        w.add(b + "attn.wv", randn({d, d}, w_std, rng));
        w.add(b + "attn.bv", Tensor::zeros({d}));
        w.add(b + "attn.wo", randn({d, d}, w_std, rng));
        w.add(b + "attn.bo", Tensor::zeros({d}));
        w.add(b + "ln2.g", Tensor::full({d}, 1.0));
        w.add(b + "ln2.b", Tensor::zeros({d}));
        w.add(b + "ff.w1", randn({d, ff}, w_std, rng));
        w.add(b + "ff.b1", Tensor::zeros({ff}));
        w.add(b + "ff.w2", randn({ff, d}, w_std, rng));
        w.add(b + "ff.b2", Tensor::zeros({d}));
    }
    w.add("head.w", Tensor::zeros({d, 3}));
    w.add("head.b", Tensor::zeros({3}));
    return p;
}

DenoiserParams DenoiserParams::with_weights(ParamSet w) const {
    DenoiserParams p;
    p.cfg = cfg;
    p.time_table = time_table;
    p.weights = std::move(w);
    return p;
}

BoundDenoiser bind_denoiser(Tape& tape, const DenoiserParams& params, bool as_leaves) {
    BoundDenoiser net;
    net.params = &params;
    net.vars.reserve(params.weights.size());
    for (size_t i = 0; i < params.weights.size(); ++i) {
        const Tensor& v = params.weights.item(i).second;
        net.vars.push_back(as_leaves ? tape.leaf(v) : tape.constant(v));
    }
    return net;
}

Var BoundDenoiser::var(const std::string& name) const {
    return vars.at(params->weights.index_of(name));
}

namespace {

/// Cache of name -> Var lookups for one forward pass.
struct NetView {
    const BoundDenoiser& net;
    Var operator()(const std::string& name) const { return net.var(name); }
};

Var linear(Tape&, Var x, Var w, Var b) { return add(matmul(x, w), b); }

Var encoder_block(Var x, const NetView& p, const std::string& prefix, int heads) {
    Tape& t = *x.tape;
    const int64_t d = t.value(x).extent(-1);
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d / heads));

    Var h = layer_norm(x, p(prefix + "ln1.g"), p(prefix + "ln1.b"));
    Var q = linear(t, h, p(prefix + "attn.wq"), p(prefix + "attn.bq"));
    Var k = linear(t, h, p(prefix + "attn.wk"), p(prefix + "attn.bk"));
    Var v = linear(t, h, p(prefix + "attn.wv"), p(prefix + "attn.bv"));
    std::vector<Var> qh = split_last(q, heads);
    std::vector<Var> kh = split_last(k, heads);
    std::vector<Var> vh = split_last(v, heads);
    std::vector<Var> ctx;
    ctx.reserve(static_cast<size_t>(heads));
    for (int i = 0; i < heads; ++i) {
        Var scores = scale(matmul(qh[i], kh[i], /*transpose_b=*/true), inv_sqrt_dh);
        ctx.push_back(matmul(softmax_last(scores), vh[i]));
    }
    Var attn = linear(t, concat_last(ctx), p(prefix + "attn.wo"), p(prefix + "attn.bo"));
    x = add(x, attn);

    Var h2 = layer_norm(x, p(prefix + "ln2.g"), p(prefix + "ln2.b"));
    Var f = gelu(linear(t, h2, p(prefix + "ff.w1"), p(prefix + "ff.b1")));
    f = linear(t, f, p(prefix + "ff.w2"), p(prefix + "ff.b2"));
    return add(x, f);
}

}  // namespace

Var predict_noise_on(Tape& tape, const BoundDenoiser& net, Var x, const std::vector<int>& t,
                     const NoiseSchedule& sched) {
    const DenoiserConfig& cfg = net.params->cfg;
    const Tensor& xv = tape.value(x);
    const bool flat_input = (xv.rank() == 1);
    int64_t batch = flat_input ? 1 : xv.extent(0);
    if ((xv.rank() != 1 && xv.rank() != 2) || xv.extent(-1) != kNumJoints * 3) {
        throw std::invalid_argument("predict_noise: expected [B,51] or [51], got " + xv.shape_str());
    }
    if (static_cast<int64_t>(t.size()) != batch) {
        throw std::invalid_argument("predict_noise: " + std::to_string(t.size()) +
                                    " timesteps for batch of " + std::to_string(batch));
    }
    for (int ti : t) sched.check_t(ti);

    NetView p{net};
    Var tokens = tape.make("reshape", {x}, xv.reshaped({batch, kNumJoints, 3}),
                           [x_id = x.id](Tape& tp, const Tensor& g) {
                               if (tp.requires_grad(x_id)) {
                                   tp.accumulate(x_id, g.reshaped(tp.value(x_id).shape()));
                               }
                           });
    Var emb = linear(tape, tokens, p("joint_embed.w"), p("joint_embed.b"));
    emb = add(emb, p("pos_embed"));

    std::vector<int64_t> t_rows(t.begin(), t.end());
    Var t_sin = lookup_rows(tape.constant(net.params->time_table), t_rows);  // [B, time_dim]
    Var t_emb = gelu(linear(tape, t_sin, p("time_mlp.w1"), p("time_mlp.b1")));
    t_emb = linear(tape, t_emb, p("time_mlp.w2"), p("time_mlp.b2"));
    emb = add(emb, tile_mid(t_emb, kNumJoints));

    for (int l = 0; l < cfg.layers; ++l) {
        emb = encoder_block(emb, p, "blocks." + std::to_string(l) + ".", cfg.heads);
    }
    Var out = linear(tape, emb, p("head.w"), p("head.b"));  // [B, 17, 3]

    const Tensor& ov = tape.value(out);
    Tensor reshaped = flat_input ? ov.reshaped({kNumJoints * 3})
                                 : ov.reshaped({batch, kNumJoints * 3});
    return tape.make("reshape", {out}, std::move(reshaped),
                     [out_id = out.id](Tape& tp, const Tensor& g) {
                         if (tp.requires_grad(out_id)) {
                             tp.accumulate(out_id, g.reshaped(tp.value(out_id).shape()));
                         }
                     });
}

Tensor predict_noise(const DenoiserParams& params, const Tensor& x, const std::vector<int>& t,
                     const NoiseSchedule& sched) {
    Tape tape;
    BoundDenoiser net = bind_denoiser(tape, params, /*as_leaves=*/false);
    Var out = predict_noise_on(tape, net, tape.constant(x), t, sched);
    return tape.value(out);
}

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1) throw std::invalid_argument("train config: epochs/batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate must be > 0");
    if (!(ema_ratio > 0.0 && ema_ratio < 1.0) && ema_ratio != 0.0 && ema_ratio != 1.0) {
        throw std::invalid_argument("train config: ema_ratio must lie in [0, 1]");
    }
}

AdamWState AdamWState::init(const ParamSet& params) {
    AdamWState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor& p = params.item(i).second;
        s.m.push_back(Tensor::zeros(p.shape()));
        s.v.push_back(Tensor::zeros(p.shape()));
    }
    return s;
}

namespace {

// Biases, layer norms, embeddings and the timestep table carry no decay.
bool decays(const std::string& name) {
    if (name == "pos_embed") return false;
    auto ends_with = [&](const char* suf) {
        size_t n = std::strlen(suf);
        return name.size() >= n && name.compare(name.size() - n, n, suf) == 0;
    };
    return !(ends_with(".b") || ends_with(".g") || ends_with(".b1") || ends_with(".b2") ||
             ends_with(".bq") || ends_with(".bk") || ends_with(".bv") || ends_with(".bo"));
}

void adamw_update(ParamSet& params, AdamWState& opt, const std::vector<Tensor>& grads,
                  const TrainConfig& cfg) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    opt.step += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(opt.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(opt.step));
    for (size_t i = 0; i < params.size(); ++i) {
        auto [name, p] = params.item(i);
        const Tensor& g = grads[i];
        Tensor& m = opt.m[i];
        Tensor& v = opt.v[i];
        double wd = decays(name) ? cfg.weight_decay : 0.0;
        for (int64_t j = 0; j < p.numel(); ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            double mh = m[j] / bc1;
            double vh = v[j] / bc2;
            p[j] -= cfg.learning_rate * (mh / (std::sqrt(vh) + eps) + wd * p[j]);
        }
    }
}

}  // namespace

double training_step(DenoiserParams& params, AdamWState& opt, const Tensor& dataset,
                     const std::vector<int64_t>& indices, int epoch, const NoiseSchedule& sched,
                     const TrainConfig& cfg) {
    if (indices.empty()) throw std::invalid_argument("training_step: empty batch");
    if (dataset.rank() != 2 || dataset.extent(1) != kNumJoints * 3) {
        throw std::invalid_argument("training_step: dataset must be [N, 51]");
    }
    const int64_t n_examples = dataset.extent(0);
    const int64_t b = static_cast<int64_t>(indices.size());
    const int64_t w = kNumJoints * 3;

    Tensor x_t({b, w});
    Tensor eps({b, w});
    std::vector<int> t_batch(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) {
        int64_t id = indices[static_cast<size_t>(i)];
        // Draws keyed by example identity, not batch slot.
        auto rng = make_rng(cfg.seed, static_cast<uint64_t>(epoch) * static_cast<uint64_t>(n_examples) +
                                          static_cast<uint64_t>(id));
        std::uniform_int_distribution<int> t_dist(1, sched.steps);
        std::normal_distribution<double> n_dist(0.0, 1.0);
        int t = t_dist(rng);
        t_batch[static_cast<size_t>(i)] = t;
        double c0 = std::sqrt(sched.alpha_bar[static_cast<size_t>(t)]);
        double ce = std::sqrt(1.0 - sched.alpha_bar[static_cast<size_t>(t)]);
        const double* x0 = dataset.data() + id * w;
        for (int64_t j = 0; j < w; ++j) {
            double e = n_dist(rng);
            eps[i * w + j] = e;
            x_t[i * w + j] = c0 * x0[j] + ce * e;
        }
    }

    Tape tape;
    BoundDenoiser net = bind_denoiser(tape, params, /*as_leaves=*/true);
    Var x_var = tape.constant(std::move(x_t));
    Var eps_hat = predict_noise_on(tape, net, x_var, t_batch, sched);
    Var loss = mean_square(sub(eps_hat, tape.constant(std::move(eps))));
    double loss_v = tape.value(loss).item();
    if (!std::isfinite(loss_v)) throw std::runtime_error("training_step: non-finite loss");

    std::vector<Tensor> grads = tape.grad(loss, net.vars);
    adamw_update(params.weights, opt, grads, cfg);
    return loss_v;
}

void ema_update(ParamSet& shadow, const ParamSet& params, double ratio) {
    if (shadow.size() != params.size()) throw std::invalid_argument("ema_update: size mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& s = shadow.item(i).second;
        const Tensor& p = params.item(i).second;
        if (!s.same_shape(p)) throw std::invalid_argument("ema_update: shape mismatch");
        for (int64_t j = 0; j < s.numel(); ++j) s[j] = ratio * s[j] + (1.0 - ratio) * p[j];
    }
}

TrainResult train_loop(const Tensor& dataset, const DenoiserConfig& net_cfg,
                       const TrainConfig& cfg, const NoiseSchedule& sched, std::ostream* log) {
    cfg.validate();
    if (dataset.rank() != 2 || dataset.extent(0) < 1) {
        throw std::invalid_argument("train_loop: dataset must be a nonempty [N, 51] tensor");
    }
    const int64_t n = dataset.extent(0);

    TrainResult result;
    result.params = DenoiserParams::init(net_cfg, sched.steps, cfg.seed);
    result.ema = result.params.weights;
    AdamWState opt = AdamWState::init(result.params.weights);

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto shuffle_rng = make_rng(cfg.seed, 0x5f5f5f5full + static_cast<uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        int64_t n_batches = 0;
        for (int64_t start = 0; start < n; start += cfg.batch_size) {
            int64_t stop = std::min<int64_t>(n, start + cfg.batch_size);
            std::vector<int64_t> batch(order.begin() + start, order.begin() + stop);
            epoch_loss += training_step(result.params, opt, dataset, batch, epoch, sched, cfg);
            ema_update(result.ema, result.params.weights, cfg.ema_ratio);
            ++n_batches;
        }
        epoch_loss /= static_cast<double>(n_batches);
        result.epoch_loss.push_back(epoch_loss);
        if (log) {
            (*log) << "epoch " << (epoch + 1) << "/" << cfg.epochs << " eps_mse " << epoch_loss
                   << "\n";
            log->flush();
        }
    }
    return result;
}

}  // namespace posediff
