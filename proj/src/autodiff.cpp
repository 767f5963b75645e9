#include "posediff/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "posediff/threading.hpp"

namespace posediff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(op + ": incompatible shapes " + a.shape_str() + " and " +
                                b.shape_str());
}

[[noreturn]] void shape_error(const std::string& op, const Tensor& a, const std::string& what) {
    throw std::invalid_argument(op + ": " + what + " (got " + a.shape_str() + ")");
}

bool is_suffix(const std::vector<int64_t>& small, const std::vector<int64_t>& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Tape* common_tape(const std::vector<Var>& vars) {
    Tape* t = nullptr;
    for (const Var& v : vars) {
        if (!v.tape) throw std::invalid_argument("op on unbound Var");
        if (t && t != v.tape) throw std::invalid_argument("op mixes Vars from different tapes");
        t = v.tape;
    }
    if (!t) throw std::invalid_argument("op with no inputs");
    return t;
}

// C[m,n] += or = A[m,k] (. or ^T) B. Deterministic: output rows are
// partitioned across threads and each entry is one serial dot product chain.
void gemm(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
          bool transpose_b) {
    const int64_t macs = m * k * n;
    const int64_t kMinParallel = 1 << 21;
    auto run = [&](int64_t lo, int64_t hi) {
        CMapMat A(a + lo * k, hi - lo, k);
        MapMat C(c + lo * n, hi - lo, n);
        if (transpose_b) {
            CMapMat B(b, n, k);
            C.noalias() = A * B.transpose();
        } else {
            CMapMat B(b, k, n);
            C.noalias() = A * B;
        }
    };
    if (macs >= kMinParallel && m >= 2) {
        parallel_for(m, [&](int64_t lo, int64_t hi) { run(lo, hi); });
    } else {
        run(0, m);
    }
}

}  // namespace

const Tensor& Var::value() const {
    if (!tape) throw std::invalid_argument("value() on unbound Var");
    return tape->value(id);
}

Var Tape::leaf(Tensor value) {
    value.ensure_finite("leaf");
    nodes_.push_back(Node{"leaf", {}, std::move(value), nullptr, true});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor value) {
    value.ensure_finite("constant");
    nodes_.push_back(Node{"constant", {}, std::move(value), nullptr, false});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::make(const std::string& op, const std::vector<Var>& inputs, Tensor value,
               Backward backward) {
    bool needs = false;
    std::vector<int> ids;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
        if (v.tape != this) throw std::invalid_argument(op + ": input from another tape");
        needs = needs || nodes_[static_cast<size_t>(v.id)].needs_grad;
        ids.push_back(v.id);
    }
    value.ensure_finite(op);
    nodes_.push_back(Node{op, std::move(ids), std::move(value),
                          needs ? std::move(backward) : nullptr, needs});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(int id) const { return nodes_.at(static_cast<size_t>(id)).value; }

bool Tape::requires_grad(int id) const { return nodes_.at(static_cast<size_t>(id)).needs_grad; }

void Tape::accumulate(int id, const Tensor& g) {
    auto idx = static_cast<size_t>(id);
    if (!adjoint_present_[idx]) {
        adjoints_[idx] = g;
        adjoint_present_[idx] = 1;
        return;
    }
    Tensor& acc = adjoints_[idx];
    if (!acc.same_shape(g)) {
        throw std::runtime_error("gradient shape mismatch for node " + nodes_[idx].op);
    }
    for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
}

const Tensor* Tape::adjoint(int id) const {
    auto idx = static_cast<size_t>(id);
    return adjoint_present_[idx] ? &adjoints_[idx] : nullptr;
}

std::vector<Tensor> Tape::grad(Var output, std::span<const Var> wrt) {
    if (output.tape != this) throw std::invalid_argument("grad: output from another tape");
    const Node& out = nodes_.at(static_cast<size_t>(output.id));
    if (out.value.numel() != 1) {
        throw std::invalid_argument("grad: output must be a scalar, got " + out.value.shape_str());
    }
    adjoints_.assign(nodes_.size(), Tensor());
    adjoint_present_.assign(nodes_.size(), 0);
    accumulate(output.id, Tensor::full(out.value.shape(), 1.0));

    for (int id = output.id; id >= 0; --id) {
        Node& node = nodes_[static_cast<size_t>(id)];
        if (!adjoint_present_[static_cast<size_t>(id)] || !node.backward) continue;
        node.backward(*this, adjoints_[static_cast<size_t>(id)]);
    }

    std::vector<Tensor> result;
    result.reserve(wrt.size());
    for (const Var& v : wrt) {
        if (v.tape != this) throw std::invalid_argument("grad: wrt Var from another tape");
        const Tensor* g = adjoint(v.id);
        result.push_back(g ? *g : Tensor::zeros(value(v.id).shape()));
    }
    adjoints_.clear();
    adjoint_present_.clear();
    return result;
}

Tensor Tape::grad_one(Var output, Var wrt) {
    std::vector<Var> w{wrt};
    return grad(output, w)[0];
}

// ---- Elementwise and structural ops ----------------------------------------

Var add(Var a, Var b) {
    Tape& t = *common_tape({a, b});
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!is_suffix(bv.shape(), av.shape())) shape_error("add", av, bv);
    Tensor out = av;
    const int64_t bn = bv.numel();
    if (bn > 0) {
        for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i % bn];
    }
    int a_id = a.id, b_id = b.id;
    int64_t an = av.numel();
    std::vector<int64_t> bshape = bv.shape();
    return t.make("add", {a, b}, std::move(out), [=](Tape& tp, const Tensor& g) {
        if (tp.requires_grad(a_id)) tp.accumulate(a_id, g);
        if (tp.requires_grad(b_id)) {
            Tensor gb = Tensor::zeros(bshape);
            for (int64_t i = 0; i < an; ++i) gb[i % bn] += g[i];
            tp.accumulate(b_id, gb);
        }
    });
}

Var sub(Var a, Var b) {
    Tape& t = *common_tape({a, b});
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!av.same_shape(bv)) shape_error("sub", av, bv);
    Tensor out = av;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    int a_id = a.id, b_id = b.id;
    return t.make("sub", {a, b}, std::move(out), [=](Tape& tp, const Tensor& g) {
        if (tp.requires_grad(a_id)) tp.accumulate(a_id, g);
        if (tp.requires_grad(b_id)) {
            Tensor gb = g;
            for (int64_t i = 0; i < gb.numel(); ++i) gb[i] = -gb[i];
            tp.accumulate(b_id, gb);
        }
    });
}

Var scale(Var a, double s) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
    int a_id = a.id;
    return t.make("scale", {a}, std::move(out), [=](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(a_id)) return;
        Tensor ga = g;
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= s;
        tp.accumulate(a_id, ga);
    });
}

Var cmul(Var a, const Tensor& c) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (!av.same_shape(c)) shape_error("cmul", av, c);
    Tensor out = av;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c[i];
    int a_id = a.id;
    Tensor cc = c;
    return t.make("cmul", {a}, std::move(out), [a_id, cc](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(a_id)) return;
        Tensor ga = g;
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= cc[i];
        tp.accumulate(a_id, ga);
    });
}

// ---- matmul -----------------------------------------------------------------

namespace {

struct MatmulDims {
    int64_t batch;  // product of leading extents of a
    int64_t m, k, n;
    bool batched_b;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b, bool transpose_b) {
    if (a.rank() < 2) shape_error("matmul", a, "lhs rank must be >= 2");
    if (b.rank() != 2 && b.rank() != a.rank()) shape_error("matmul", a, b);
    MatmulDims d;
    d.m = a.extent(-2);
    d.k = a.extent(-1);
    d.batch = 1;
    for (int64_t i = 0; i + 2 < a.rank(); ++i) d.batch *= a.extent(i);
    d.batched_b = (b.rank() != 2);
    if (d.batched_b) {
        for (int64_t i = 0; i + 2 < a.rank(); ++i) {
            if (a.extent(i) != b.extent(i)) shape_error("matmul", a, b);
        }
    }
    int64_t bk = transpose_b ? b.extent(-1) : b.extent(-2);
    d.n = transpose_b ? b.extent(-2) : b.extent(-1);
    if (bk != d.k) shape_error("matmul", a, b);
    return d;
}

}  // namespace

Var matmul(Var a, Var b, bool transpose_b) {
    Tape& t = *common_tape({a, b});
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    MatmulDims d = matmul_dims(av, bv, transpose_b);

    std::vector<int64_t> out_shape(av.shape().begin(), av.shape().end() - 1);
    out_shape.push_back(d.n);
    Tensor out(out_shape);
    if (d.batched_b) {
        auto run = [&](int64_t lo, int64_t hi) {
            for (int64_t s = lo; s < hi; ++s) {
                gemm(av.data() + s * d.m * d.k, bv.data() + s * d.k * d.n, out.data() + s * d.m * d.n,
                     d.m, d.k, d.n, transpose_b);
            }
        };
        if (d.batch * d.m * d.k * d.n >= (1 << 21) && d.batch > 1) {
            parallel_for(d.batch, run);
        } else {
            run(0, d.batch);
        }
    } else {
        // Shared rank-2 rhs: fold batch into rows for one pass.
        gemm(av.data(), bv.data(), out.data(), d.batch * d.m, d.k, d.n, transpose_b);
    }

    int a_id = a.id, b_id = b.id;
    return t.make("matmul", {a, b}, std::move(out), [=](Tape& tp, const Tensor& g) {
        const Tensor& A = tp.value(a_id);
        const Tensor& B = tp.value(b_id);
        if (tp.requires_grad(a_id)) {
            // dA = dC B^T (or dC B when B was transposed).
            Tensor ga(A.shape());
            if (d.batched_b) {
                for (int64_t s = 0; s < d.batch; ++s) {
                    gemm(g.data() + s * d.m * d.n, B.data() + s * d.k * d.n,
                         ga.data() + s * d.m * d.k, d.m, d.n, d.k, !transpose_b);
                }
            } else {
                gemm(g.data(), B.data(), ga.data(), d.batch * d.m, d.n, d.k, !transpose_b);
            }
            tp.accumulate(a_id, ga);
        }
        if (tp.requires_grad(b_id)) {
            Tensor gb(B.shape());
            auto one = [&](const double* ap, const double* gp, double* out_p) {
                // dB = A^T dC; for transpose_b, dB = dC^T A.
                CMapMat Am(ap, d.m, d.k);
                CMapMat Gm(gp, d.m, d.n);
                if (transpose_b) {
                    MapMat Bm(out_p, d.n, d.k);
                    Bm.noalias() += Gm.transpose() * Am;
                } else {
                    MapMat Bm(out_p, d.k, d.n);
                    Bm.noalias() += Am.transpose() * Gm;
                }
            };
            if (d.batched_b) {
                for (int64_t s = 0; s < d.batch; ++s) {
                    one(A.data() + s * d.m * d.k, g.data() + s * d.m * d.n,
                        gb.data() + s * d.k * d.n);
                }
            } else {
                CMapMat Am(A.data(), d.batch * d.m, d.k);
                CMapMat Gm(g.data(), d.batch * d.m, d.n);
                if (transpose_b) {
                    MapMat Bm(gb.data(), d.n, d.k);
                    Bm.noalias() = Gm.transpose() * Am;
                } else {
                    MapMat Bm(gb.data(), d.k, d.n);
                    Bm.noalias() = Am.transpose() * Gm;
                }
            }
            tp.accumulate(b_id, gb);
        }
    });
}

// ---- split / concat ---------------------------------------------------------

std::vector<Var> split_last(Var a, int parts) {
    Tape& t = *a.tape;
    // Copy: make() below may grow the node vector and invalidate references.
    const Tensor av = t.value(a);
    if (av.rank() < 1) shape_error("split_last", av, "rank must be >= 1");
    int64_t last = av.extent(-1);
    if (parts <= 0 || last % parts != 0) {
        shape_error("split_last", av, "last extent not divisible by " + std::to_string(parts));
    }
    int64_t piece = last / parts;
    int64_t rows = av.numel() / last;
    std::vector<Var> out;
    out.reserve(static_cast<size_t>(parts));
    int a_id = a.id;
    for (int p = 0; p < parts; ++p) {
        std::vector<int64_t> shape = av.shape();
        shape.back() = piece;
        Tensor piece_t(shape);
        for (int64_t r = 0; r < rows; ++r) {
            const double* src = av.data() + r * last + p * piece;
            std::copy(src, src + piece, piece_t.data() + r * piece);
        }
        int64_t offset = p * piece;
        out.push_back(t.make("split_last", {a}, std::move(piece_t),
                             [=](Tape& tp, const Tensor& g) {
                                 if (!tp.requires_grad(a_id)) return;
                                 Tensor ga = Tensor::zeros(tp.value(a_id).shape());
                                 for (int64_t r = 0; r < rows; ++r) {
                                     double* dst = ga.data() + r * last + offset;
                                     const double* src = g.data() + r * piece;
                                     for (int64_t i = 0; i < piece; ++i) dst[i] += src[i];
                                 }
                                 tp.accumulate(a_id, ga);
                             }));
    }
    return out;
}

Var concat_last(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_last: no inputs");
    Tape& t = *common_tape(parts);
    const Tensor& first = t.value(parts[0]);
    int64_t total_last = 0;
    for (const Var& v : parts) {
        const Tensor& pv = t.value(v);
        if (pv.rank() != first.rank()) shape_error("concat_last", first, pv);
        for (int64_t i = 0; i + 1 < pv.rank(); ++i) {
            if (pv.extent(i) != first.extent(i)) shape_error("concat_last", first, pv);
        }
        total_last += pv.extent(-1);
    }
    std::vector<int64_t> shape = first.shape();
    shape.back() = total_last;
    Tensor out(shape);
    int64_t rows = out.numel() / total_last;
    std::vector<int64_t> pieces, offsets;
    std::vector<int> ids;
    int64_t off = 0;
    for (const Var& v : parts) {
        int64_t piece = t.value(v).extent(-1);
        for (int64_t r = 0; r < rows; ++r) {
            const double* src = t.value(v).data() + r * piece;
            std::copy(src, src + piece, out.data() + r * total_last + off);
        }
        pieces.push_back(piece);
        offsets.push_back(off);
        ids.push_back(v.id);
        off += piece;
    }
    return t.make("concat_last", parts, std::move(out), [=](Tape& tp, const Tensor& g) {
        for (size_t p = 0; p < ids.size(); ++p) {
            if (!tp.requires_grad(ids[p])) continue;
            std::vector<int64_t> pshape = g.shape();
            pshape.back() = pieces[p];
            Tensor gp(pshape);
            for (int64_t r = 0; r < rows; ++r) {
                const double* src = g.data() + r * total_last + offsets[p];
                std::copy(src, src + pieces[p], gp.data() + r * pieces[p]);
            }
            tp.accumulate(ids[p], gp);
        }
    });
}

// ---- Nonlinearities ---------------------------------------------------------

Var softmax_last(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.rank() < 1) shape_error("softmax_last", av, "rank must be >= 1");
    int64_t last = av.extent(-1);
    int64_t rows = av.numel() / last;
    Tensor out(av.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = av.data() + r * last;
        double* y = out.data() + r * last;
        double mx = x[0];
        for (int64_t i = 1; i < last; ++i) mx = std::max(mx, x[i]);
        double sum = 0.0;
        for (int64_t i = 0; i < last; ++i) {
            y[i] = std::exp(x[i] - mx);
            sum += y[i];
        }
        for (int64_t i = 0; i < last; ++i) y[i] /= sum;
    }
    int a_id = a.id;
    int out_id = t.size();  // id this node will get
    return t.make("softmax_last", {a}, std::move(out), [=](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(a_id)) return;
        const Tensor& y = tp.value(out_id);
        Tensor ga(y.shape());
        for (int64_t r = 0; r < rows; ++r) {
            const double* yr = y.data() + r * last;
            const double* gr = g.data() + r * last;
            double dot = 0.0;
            for (int64_t i = 0; i < last; ++i) dot += yr[i] * gr[i];
            double* out_r = ga.data() + r * last;
            for (int64_t i = 0; i < last; ++i) out_r[i] = yr[i] * (gr[i] - dot);
        }
        tp.accumulate(a_id, ga);
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    Tape& t = *common_tape({x, gamma, beta});
    const Tensor& xv = t.value(x);
    const Tensor& gv = t.value(gamma);
    const Tensor& bv = t.value(beta);
    if (xv.rank() < 1) shape_error("layer_norm", xv, "rank must be >= 1");
    int64_t last = xv.extent(-1);
    if (gv.rank() != 1 || bv.rank() != 1 || gv.extent(0) != last || bv.extent(0) != last) {
        shape_error("layer_norm", xv, gv);
    }
    int64_t rows = xv.numel() / last;
    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    std::vector<double> inv(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * last;
        double mu = 0.0;
        for (int64_t i = 0; i < last; ++i) mu += xr[i];
        mu /= static_cast<double>(last);
        double var = 0.0;
        for (int64_t i = 0; i < last; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<double>(last);
        double iv = 1.0 / std::sqrt(var + eps);
        inv[static_cast<size_t>(r)] = iv;
        double* hr = xhat.data() + r * last;
        double* or_ = out.data() + r * last;
        for (int64_t i = 0; i < last; ++i) {
            hr[i] = (xr[i] - mu) * iv;
            or_[i] = hr[i] * gv[i] + bv[i];
        }
    }
    int x_id = x.id, g_id = gamma.id, b_id = beta.id;
    return t.make("layer_norm", {x, gamma, beta}, std::move(out),
                  [=, xhat = std::move(xhat), inv = std::move(inv)](Tape& tp, const Tensor& g) {
        const Tensor& gamma_v = tp.value(g_id);
        if (tp.requires_grad(x_id)) {
            Tensor gx(tp.value(x_id).shape());
            for (int64_t r = 0; r < rows; ++r) {
                const double* hr = xhat.data() + r * last;
                const double* gr = g.data() + r * last;
                double sum_dh = 0.0, sum_dh_h = 0.0;
                for (int64_t i = 0; i < last; ++i) {
                    double dh = gr[i] * gamma_v[i];
                    sum_dh += dh;
                    sum_dh_h += dh * hr[i];
                }
                double iv = inv[static_cast<size_t>(r)];
                double* out_r = gx.data() + r * last;
                double nl = static_cast<double>(last);
                for (int64_t i = 0; i < last; ++i) {
                    double dh = gr[i] * gamma_v[i];
                    out_r[i] = iv * (dh - sum_dh / nl - hr[i] * sum_dh_h / nl);
                }
            }
            tp.accumulate(x_id, gx);
        }
        if (tp.requires_grad(g_id)) {
            Tensor gg = Tensor::zeros({last});
            for (int64_t r = 0; r < rows; ++r) {
                const double* hr = xhat.data() + r * last;
                const double* gr = g.data() + r * last;
                for (int64_t i = 0; i < last; ++i) gg[i] += gr[i] * hr[i];
            }
            tp.accumulate(g_id, gg);
        }
        if (tp.requires_grad(b_id)) {
            Tensor gb = Tensor::zeros({last});
            for (int64_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * last;
                for (int64_t i = 0; i < last; ++i) gb[i] += gr[i];
            }
            tp.accumulate(b_id, gb);
        }
    });
}

Var gelu(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    Tensor out(av.shape());
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (int64_t i = 0; i < av.numel(); ++i) {
        out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * inv_sqrt2));
    }
    int a_id = a.id;
    return t.make("gelu", {a}, std::move(out), [=](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(a_id)) return;
        const Tensor& x = tp.value(a_id);
        Tensor ga(x.shape());
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        for (int64_t i = 0; i < x.numel(); ++i) {
            double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
            ga[i] = g[i] * (cdf + x[i] * pdf);
        }
        tp.accumulate(a_id, ga);
    });
}

// ---- Lookup / tiling / reductions ------------------------------------------

Var lookup_rows(Var table, const std::vector<int64_t>& rows) {
    Tape& t = *table.tape;
    const Tensor& tv = t.value(table);
    if (tv.rank() != 2) shape_error("lookup_rows", tv, "table must be rank 2");
    int64_t nrows = tv.extent(0), width = tv.extent(1);
    for (int64_t r : rows) {
        if (r < 0 || r >= nrows) {
            throw std::invalid_argument("lookup_rows: index " + std::to_string(r) +
                                        " out of range [0," + std::to_string(nrows) + ")");
        }
    }
    Tensor out({static_cast<int64_t>(rows.size()), width});
    for (size_t i = 0; i < rows.size(); ++i) {
        const double* src = tv.data() + rows[i] * width;
        std::copy(src, src + width, out.data() + static_cast<int64_t>(i) * width);
    }
    int t_id = table.id;
    std::vector<int64_t> idx = rows;
    return t.make("lookup_rows", {table}, std::move(out), [=](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(t_id)) return;
        Tensor gt = Tensor::zeros(tp.value(t_id).shape());
        for (size_t i = 0; i < idx.size(); ++i) {
            const double* src = g.data() + static_cast<int64_t>(i) * width;
            double* dst = gt.data() + idx[i] * width;
            for (int64_t j = 0; j < width; ++j) dst[j] += src[j];
        }
        tp.accumulate(t_id, gt);
    });
}

Var tile_mid(Var a, int64_t count) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.rank() != 2) shape_error("tile_mid", av, "input must be rank 2");
    if (count <= 0) shape_error("tile_mid", av, "count must be positive");
    int64_t b = av.extent(0), d = av.extent(1);
    Tensor out({b, count, d});
    for (int64_t i = 0; i < b; ++i) {
        for (int64_t c = 0; c < count; ++c) {
            std::copy(av.data() + i * d, av.data() + (i + 1) * d, out.data() + (i * count + c) * d);
        }
    }
    int a_id = a.id;
    return t.make("tile_mid", {a}, std::move(out), [=](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(a_id)) return;
        Tensor ga = Tensor::zeros({b, d});
        for (int64_t i = 0; i < b; ++i) {
            for (int64_t c = 0; c < count; ++c) {
                const double* src = g.data() + (i * count + c) * d;
                double* dst = ga.data() + i * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        }
        tp.accumulate(a_id, ga);
    });
}

Var reduce_sum(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    double s = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) s += av[i];
    int a_id = a.id;
    return t.make("reduce_sum", {a}, Tensor::scalar(s), [=](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(a_id)) return;
        tp.accumulate(a_id, Tensor::full(tp.value(a_id).shape(), g[0]));
    });
}

Var sum_squares(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    double s = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) s += av[i] * av[i];
    int a_id = a.id;
    return t.make("sum_squares", {a}, Tensor::scalar(s), [=](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(a_id)) return;
        const Tensor& x = tp.value(a_id);
        Tensor ga(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) ga[i] = 2.0 * x[i] * g[0];
        tp.accumulate(a_id, ga);
    });
}

Var mean_square(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.numel() == 0) throw std::invalid_argument("mean_square: empty tensor");
    double inv_n = 1.0 / static_cast<double>(av.numel());
    double s = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) s += av[i] * av[i];
    s *= inv_n;
    int a_id = a.id;
    return t.make("mean_square", {a}, Tensor::scalar(s), [=](Tape& tp, const Tensor& g) {
        if (!tp.requires_grad(a_id)) return;
        const Tensor& x = tp.value(a_id);
        Tensor ga(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) ga[i] = 2.0 * x[i] * inv_n * g[0];
        tp.accumulate(a_id, ga);
    });
}

// ---- finite differences ------------------------------------------------------

double finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& point,
                         const Tensor& analytic_grad, double step) {
    if (!point.same_shape(analytic_grad)) {
        throw std::invalid_argument("finite_diff_check: gradient shape " +
                                    analytic_grad.shape_str() + " does not match point " +
                                    point.shape_str());
    }
    double worst = 0.0;
    Tensor x = point;
    for (int64_t i = 0; i < x.numel(); ++i) {
        double orig = x[i];
        x[i] = orig + step;
        double fp = f(x);
        x[i] = orig - step;
        double fm = f(x);
        x[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw std::runtime_error("finite_diff_check: non-finite function value");
        }
        double fd = (fp - fm) / (2.0 * step);
        double a = analytic_grad[i];
        double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace posediff
