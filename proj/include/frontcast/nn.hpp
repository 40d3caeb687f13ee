#pragma once

// Layer building blocks on top of the autodiff tape: a named parameter
// store, fan-in uniform initialization, conv / norm / linear / attention /
// LSTM pieces. Models own a ParamStore and a set of layer descriptors that
// hold indices into it; binding the store to a tape yields the Vars a
// forward pass consumes.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "frontcast/autodiff.hpp"
#include "frontcast/random.hpp"
#include "frontcast/tensor.hpp"

namespace frontcast {

struct ParamStore {
    struct Entry {
        std::string name;
        Tensor value;
    };
    std::vector<Entry> entries;

    int add(std::string name, Tensor value) {
        entries.push_back({std::move(name), std::move(value)});
        return static_cast<int>(entries.size() - 1);
    }

    int64_t total_scalars() const {
        int64_t n = 0;
        for (const auto& e : entries)
            n += e.value.numel();
        return n;
    }

    std::vector<Var> bind(Tape& tape, bool requires_grad) const {
        std::vector<Var> vars;
        vars.reserve(entries.size());
        for (const auto& e : entries)
            vars.push_back(tape.leaf(e.value, requires_grad));
        return vars;
    }
};

// Uniform fan-in scaling: U(-b, b) with b = sqrt(3 / fan_in), unit variance
// scaling for ReLU-free paths and close enough for the shallow stacks here.
inline Tensor uniform_fanin_init(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    for (double& v : t.data)
        v = rng.uniform(-bound, bound);
    return t;
}

// ---- layer descriptors (indices into a ParamStore) ----

struct Conv2dLayer {
    int w = -1, b = -1;
    int stride = 2, pad = 1;

    static Conv2dLayer make(ParamStore& ps, const std::string& name, int64_t in_ch, int64_t out_ch,
                            int64_t k, Rng& rng) {
        Conv2dLayer l;
        l.w = ps.add(name + ".weight", uniform_fanin_init({out_ch, in_ch, k, k}, in_ch * k * k, rng));
        l.b = ps.add(name + ".bias", Tensor({out_ch}));
        return l;
    }

    Var apply(Tape& t, const std::vector<Var>& pv, Var x) const {
        return t.conv2d(x, pv[w], pv[b], stride, pad);
    }
};

struct ConvTranspose2dLayer {
    int w = -1, b = -1;
    int stride = 2, pad = 1;
    int out_pad_h = 0, out_pad_w = 0;

    static ConvTranspose2dLayer make(ParamStore& ps, const std::string& name, int64_t in_ch,
                                     int64_t out_ch, int64_t k, int out_pad_h, int out_pad_w,
                                     Rng& rng) {
        ConvTranspose2dLayer l;
        l.w = ps.add(name + ".weight", uniform_fanin_init({in_ch, out_ch, k, k}, in_ch * k * k, rng));
        l.b = ps.add(name + ".bias", Tensor({out_ch}));
        l.out_pad_h = out_pad_h;
        l.out_pad_w = out_pad_w;
        return l;
    }

    Var apply(Tape& t, const std::vector<Var>& pv, Var x) const {
        return t.conv_transpose2d(x, pv[w], pv[b], stride, pad, out_pad_h, out_pad_w);
    }
};

struct GroupNormLayer {
    int gamma = -1, beta = -1;
    int groups = 1;

    static GroupNormLayer make(ParamStore& ps, const std::string& name, int64_t channels) {
        GroupNormLayer l;
        l.gamma = ps.add(name + ".gamma", Tensor({channels}, 1.0));
        l.beta = ps.add(name + ".beta", Tensor({channels}));
        l.groups = static_cast<int>(std::min<int64_t>(8, channels));
        return l;
    }

    Var apply(Tape& t, const std::vector<Var>& pv, Var x) const {
        return t.group_norm(x, pv[gamma], pv[beta], groups);
    }
};

struct LayerNormLayer {
    int gamma = -1, beta = -1;

    static LayerNormLayer make(ParamStore& ps, const std::string& name, int64_t width) {
        LayerNormLayer l;
        l.gamma = ps.add(name + ".gamma", Tensor({width}, 1.0));
        l.beta = ps.add(name + ".beta", Tensor({width}));
        return l;
    }

    Var apply(Tape& t, const std::vector<Var>& pv, Var x) const {
        return t.layer_norm_rows(x, pv[gamma], pv[beta]);
    }
};

struct LinearLayer {
    int w = -1, b = -1;

    static LinearLayer make(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                            Rng& rng) {
        LinearLayer l;
        l.w = ps.add(name + ".weight", uniform_fanin_init({in, out}, in, rng));
        l.b = ps.add(name + ".bias", Tensor({out}));
        return l;
    }

    Var apply(Tape& t, const std::vector<Var>& pv, Var x) const {
        return t.linear(x, pv[w], pv[b]);
    }
};

// Fixed sinusoidal encoding over timesteps, added after the input projection.
inline Tensor positional_encoding(int64_t steps, int64_t d_model) {
    Tensor pe({steps, d_model});
    for (int64_t t = 0; t < steps; ++t)
        for (int64_t i = 0; i < d_model; i += 2) {
            const double angle =
                static_cast<double>(t) /
                std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
            pe.data[static_cast<size_t>(t * d_model + i)] = std::sin(angle);
            if (i + 1 < d_model)
                pe.data[static_cast<size_t>(t * d_model + i + 1)] = std::cos(angle);
        }
    return pe;
}

// ---- multi-head self-attention ----

// Per head, Q/K/V slices of packed [d,d] projections; scaled dot-product
// softmax(Q K^T / sqrt(d_k)) V; heads concatenated back to [T,d].
inline Var multi_head_attention(Tape& t, Var x, Var wq, Var wk, Var wv, int heads) {
    const int64_t d = t.val(x).dim(1);
    if (heads < 1 || d % heads != 0)
        throw std::invalid_argument("multi_head_attention: d_model must be divisible by heads");
    const int64_t dk = d / heads;
    const Var q = t.matmul(x, wq);
    const Var k = t.matmul(x, wk);
    const Var v = t.matmul(x, wv);
    std::vector<Var> zs;
    zs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const Var qi = t.slice_cols(q, h * dk, (h + 1) * dk);
        const Var ki = t.slice_cols(k, h * dk, (h + 1) * dk);
        const Var vi = t.slice_cols(v, h * dk, (h + 1) * dk);
        const Var scores = t.scale(t.matmul(qi, t.transpose(ki)), 1.0 / std::sqrt(static_cast<double>(dk)));
        zs.push_back(t.matmul(t.softmax_rows(scores), vi));
    }
    return t.concat_cols(zs);
}

struct TransformerBlock {
    int wq = -1, wk = -1, wv = -1;
    LayerNormLayer ln_attn;
    LinearLayer ff_expand, ff_contract;
    LayerNormLayer ln_ff;
    int heads = 8;

    static TransformerBlock make(ParamStore& ps, const std::string& name, int64_t d_model,
                                 int64_t d_ff, int heads, Rng& rng) {
        TransformerBlock b;
        b.wq = ps.add(name + ".wq", uniform_fanin_init({d_model, d_model}, d_model, rng));
        b.wk = ps.add(name + ".wk", uniform_fanin_init({d_model, d_model}, d_model, rng));
        b.wv = ps.add(name + ".wv", uniform_fanin_init({d_model, d_model}, d_model, rng));
        b.ln_attn = LayerNormLayer::make(ps, name + ".ln_attn", d_model);
        b.ff_expand = LinearLayer::make(ps, name + ".ff_expand", d_model, d_ff, rng);
        b.ff_contract = LinearLayer::make(ps, name + ".ff_contract", d_ff, d_model, rng);
        b.ln_ff = LayerNormLayer::make(ps, name + ".ln_ff", d_model);
        b.heads = heads;
        return b;
    }

    // Post-norm encoder wiring: LN(x + MHA(x)), then LN(y + FFN(y)).
    Var apply(Tape& t, const std::vector<Var>& pv, Var x) const {
        const Var attn = multi_head_attention(t, x, pv[wq], pv[wk], pv[wv], heads);
        const Var y = ln_attn.apply(t, pv, t.add(x, attn));
        Var ff = ff_expand.apply(t, pv, y);
        ff = t.relu(ff);
        ff = ff_contract.apply(t, pv, ff);
        return ln_ff.apply(t, pv, t.add(y, ff));
    }
};

// ---- LSTM ----

struct LstmLayer {
    int wx = -1, wh = -1, b = -1;
    int64_t input = 0, hidden = 0;

    // Gate order along the packed 4H axis: input, forget, cell, output.
    static LstmLayer make(ParamStore& ps, const std::string& name, int64_t input, int64_t hidden,
                          Rng& rng) {
        LstmLayer l;
        l.wx = ps.add(name + ".wx", uniform_fanin_init({input, 4 * hidden}, input, rng));
        l.wh = ps.add(name + ".wh", uniform_fanin_init({hidden, 4 * hidden}, hidden, rng));
        l.b = ps.add(name + ".bias", Tensor({4 * hidden}));
        l.input = input;
        l.hidden = hidden;
        return l;
    }

    // (h, c) -> (h', c') for one timestep; x_t is [1, input].
    std::pair<Var, Var> step(Tape& t, const std::vector<Var>& pv, Var x_t, Var h, Var c) const {
        const Var gates = t.add(t.linear(x_t, pv[wx], pv[b]), t.matmul(h, pv[wh]));
        const Var gi = t.sigmoid(t.slice_cols(gates, 0, hidden));
        const Var gf = t.sigmoid(t.slice_cols(gates, hidden, 2 * hidden));
        const Var gc = t.tanh_op(t.slice_cols(gates, 2 * hidden, 3 * hidden));
        const Var go = t.sigmoid(t.slice_cols(gates, 3 * hidden, 4 * hidden));
        const Var c2 = t.add(t.mul(gf, c), t.mul(gi, gc));
        const Var h2 = t.mul(go, t.tanh_op(c2));
        return {h2, c2};
    }
};

}  // namespace frontcast
