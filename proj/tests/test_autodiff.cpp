#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "frontcast/autodiff.hpp"
#include "frontcast/nn.hpp"
#include "frontcast/random.hpp"

using namespace frontcast;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data)
        v = rng.uniform(lo, hi);
    return t;
}

using BuildFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Checks every analytic input gradient of a scalar-valued graph against
// central finite differences.
void check_gradients(const std::vector<Tensor>& inputs, const BuildFn& build, double h = 1e-6,
                     double tol = 2e-6) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& in : inputs)
        vars.push_back(tape.leaf(in, true));
    const Var out = build(tape, vars);
    REQUIRE(tape.val(out).numel() == 1);
    tape.backward(out);
    std::vector<Tensor> analytic;
    for (Var v : vars)
        analytic.push_back(tape.grad(v));

    for (size_t vi = 0; vi < inputs.size(); ++vi) {
        for (int64_t k = 0; k < inputs[vi].numel(); ++k) {
            auto eval = [&](double delta) {
                std::vector<Tensor> per = inputs;
                per[vi].data[static_cast<size_t>(k)] += delta;
                Tape t2;
                std::vector<Var> vs;
                for (const auto& in : per)
                    vs.push_back(t2.leaf(in, false));
                return t2.val(build(t2, vs)).data[0];
            };
            const double num = (eval(h) - eval(-h)) / (2.0 * h);
            const double ana = analytic[vi].data[static_cast<size_t>(k)];
            const double err = std::abs(num - ana);
            const double scale = std::max({1.0, std::abs(num), std::abs(ana)});
            INFO("input " << vi << " element " << k << ": analytic " << ana << " numeric " << num);
            REQUIRE(err <= tol * scale);
        }
    }
}

}  // namespace

TEST_CASE("elementwise op gradients", "[autodiff]") {
    Rng rng(100);
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor b = random_tensor({3, 4}, rng);
    const Tensor tgt = random_tensor({3, 4}, rng);

    auto against_target = [&](std::function<Var(Tape&, Var, Var)> op) {
        return BuildFn([op, tgt](Tape& t, const std::vector<Var>& v) {
            return t.mse_mean(op(t, v[0], v[1]), t.constant(tgt));
        });
    };

    check_gradients({a, b}, against_target([](Tape& t, Var x, Var y) { return t.add(x, y); }));
    check_gradients({a, b}, against_target([](Tape& t, Var x, Var y) { return t.sub(x, y); }));
    check_gradients({a, b}, against_target([](Tape& t, Var x, Var y) { return t.mul(x, y); }));
    check_gradients({a}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.scale(v[0], -2.3), t.constant(tgt));
    });
    check_gradients({a}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.sigmoid(v[0]), t.constant(tgt));
    });
    check_gradients({a}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.tanh_op(v[0]), t.constant(tgt));
    });

    // keep relu inputs away from the kink
    Tensor shifted = a;
    for (auto& x : shifted.data)
        x += (x >= 0.0 ? 0.3 : -0.3);
    check_gradients({shifted}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.relu(v[0]), t.constant(tgt));
    });
}

TEST_CASE("matmul, transpose and linear gradients", "[autodiff]") {
    Rng rng(101);
    const Tensor A = random_tensor({3, 5}, rng);
    const Tensor B = random_tensor({5, 4}, rng);
    const Tensor W = random_tensor({5, 4}, rng);
    const Tensor bias = random_tensor({4}, rng);
    const Tensor tgt = random_tensor({3, 4}, rng);

    check_gradients({A, B}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.matmul(v[0], v[1]), t.constant(tgt));
    });
    const Tensor tgtT = random_tensor({5, 3}, rng);
    check_gradients({A}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.transpose(v[0]), t.constant(tgtT));
    });
    check_gradients({A, W, bias}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.linear(v[0], v[1], v[2]), t.constant(tgt));
    });
}

TEST_CASE("shape op gradients", "[autodiff]") {
    Rng rng(102);
    const Tensor A = random_tensor({4, 6}, rng);

    check_gradients({A}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.reshape(v[0], {2, 12}), t.constant(Tensor({2, 12}, 0.5)));
    });
    check_gradients({A}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.slice_rows(v[0], 1, 3), t.constant(Tensor({2, 6}, 0.5)));
    });
    check_gradients({A}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.slice_cols(v[0], 2, 5), t.constant(Tensor({4, 3}, 0.5)));
    });
    const Tensor B = random_tensor({4, 2}, rng);
    check_gradients({A, B}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.concat_cols({v[0], v[1]}), t.constant(Tensor({4, 8}, 0.1)));
    });
    check_gradients({A}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.mean_rows(v[0]), t.constant(Tensor({1, 6}, 0.2)));
    });
}

TEST_CASE("softmax and normalization gradients", "[autodiff]") {
    Rng rng(103);
    const Tensor X = random_tensor({3, 5}, rng);
    const Tensor gamma = random_tensor({5}, rng, 0.5, 1.5);
    const Tensor beta = random_tensor({5}, rng);
    const Tensor tgt = random_tensor({3, 5}, rng);

    check_gradients({X}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.softmax_rows(v[0]), t.constant(tgt));
    });
    check_gradients({X, gamma, beta}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.layer_norm_rows(v[0], v[1], v[2]), t.constant(tgt));
    });

    SECTION("softmax rows sum to one") {
        Tape t;
        const Var s = t.softmax_rows(t.constant(X));
        for (int64_t i = 0; i < 3; ++i) {
            double sum = 0.0;
            for (int64_t j = 0; j < 5; ++j)
                sum += t.val(s).data[static_cast<size_t>(i * 5 + j)];
            REQUIRE(std::abs(sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("conv2d gradients and values", "[autodiff]") {
    Rng rng(104);
    const Tensor X = random_tensor({2, 2, 5, 4}, rng);
    const Tensor K = random_tensor({3, 2, 3, 3}, rng);
    const Tensor bias = random_tensor({3}, rng);

    Tape probe;
    const Var out = probe.conv2d(probe.constant(X), probe.constant(K), probe.constant(bias), 2, 1);
    REQUIRE(probe.val(out).shape == std::vector<int64_t>({2, 3, 3, 2}));

    const Tensor tgt = random_tensor({2, 3, 3, 2}, rng);
    check_gradients({X, K, bias}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.conv2d(v[0], v[1], v[2], 2, 1), t.constant(tgt));
    });

    SECTION("hand-computed 1x1 output cell") {
        // single sample, single channel, 3x3 input, one filter, stride 2 pad 1
        Tensor x({1, 1, 3, 3});
        for (int k = 0; k < 9; ++k)
            x.data[static_cast<size_t>(k)] = k + 1;
        Tensor w({1, 1, 3, 3}, 1.0);
        Tensor b({1}, 0.5);
        Tape t;
        const Var y = t.conv2d(t.constant(x), t.constant(w), t.constant(b), 2, 1);
        REQUIRE(t.val(y).shape == std::vector<int64_t>({1, 1, 2, 2}));
        // top-left: kernel overlaps rows 0..1, cols 0..1 => 1+2+4+5 (+bias)
        REQUIRE(t.val(y).data[0] == 0.5 + 1 + 2 + 4 + 5);
    }
}

TEST_CASE("conv_transpose2d gradients and geometry", "[autodiff]") {
    Rng rng(105);
    const Tensor X = random_tensor({2, 3, 3, 2}, rng);
    const Tensor K = random_tensor({3, 2, 3, 3}, rng);
    const Tensor bias = random_tensor({2}, rng);

    SECTION("inverts the strided conv output size") {
        Tape t;
        // 5 -> ceil(5/2)=3 with conv; transpose with out_pad 0 restores 5
        // 4 -> 2 with conv; transpose with out_pad 1 restores 4
        const Var y = t.conv_transpose2d(t.constant(X), t.constant(K), t.constant(bias), 2, 1, 0, 1);
        REQUIRE(t.val(y).shape == std::vector<int64_t>({2, 2, 5, 4}));
    }

    const Tensor tgt = random_tensor({2, 2, 5, 4}, rng);
    check_gradients({X, K, bias}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.conv_transpose2d(v[0], v[1], v[2], 2, 1, 0, 1), t.constant(tgt));
    });
}

TEST_CASE("group_norm gradients", "[autodiff]") {
    Rng rng(106);
    const Tensor X = random_tensor({2, 4, 3, 3}, rng);
    const Tensor gamma = random_tensor({4}, rng, 0.5, 1.5);
    const Tensor beta = random_tensor({4}, rng);
    const Tensor tgt = random_tensor({2, 4, 3, 3}, rng);

    for (int groups : {1, 2, 4})
        check_gradients({X, gamma, beta}, [&, groups](Tape& t, const std::vector<Var>& v) {
            return t.mse_mean(t.group_norm(v[0], v[1], v[2], groups), t.constant(tgt));
        });

    SECTION("normalizes each group to zero mean unit variance") {
        Tape t;
        const Var y = t.group_norm(t.constant(X), t.constant(Tensor({4}, 1.0)),
                                   t.constant(Tensor({4})), 2);
        const auto& yd = t.val(y).data;
        // group 0 of sample 0: channels 0..1, 18 values
        double mean = 0.0;
        for (int k = 0; k < 18; ++k)
            mean += yd[static_cast<size_t>(k)];
        mean /= 18.0;
        REQUIRE(std::abs(mean) <= 1e-12);
    }
}

TEST_CASE("channel op gradients", "[autodiff]") {
    Rng rng(107);
    const Tensor X = random_tensor({3, 4, 5}, rng);

    check_gradients({X}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.sigmoid_channel(v[0], 0), t.constant(Tensor({3, 4, 5}, 0.3)));
    });
    check_gradients({X}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(t.slice_channel(v[0], 1), t.constant(Tensor({4, 5}, 0.3)));
    });

    SECTION("sigmoid_channel leaves other channels untouched") {
        Tape t;
        const Var y = t.sigmoid_channel(t.constant(X), 0);
        for (size_t k = 20; k < X.data.size(); ++k)
            REQUIRE(t.val(y).data[k] == X.data[k]);
        for (size_t k = 0; k < 20; ++k)
            REQUIRE(t.val(y).data[k] == 1.0 / (1.0 + std::exp(-X.data[k])));
    }
}

TEST_CASE("finite-difference stencil op gradients", "[autodiff]") {
    Rng rng(108);
    const Tensor now = random_tensor({5, 6}, rng);
    const Tensor next = random_tensor({5, 6}, rng);
    const Tensor u = random_tensor({5, 6}, rng);
    const Tensor v = random_tensor({5, 6}, rng);
    const Tensor q = random_tensor({5, 6}, rng);
    const Tensor tgt = random_tensor({5, 6}, rng);

    check_gradients({now, next}, [&](Tape& t, const std::vector<Var>& vars) {
        return t.mse_mean(t.fd_ddt(vars[0], vars[1], 3.7), t.constant(tgt));
    });
    check_gradients({u, v, q}, [&](Tape& t, const std::vector<Var>& vars) {
        return t.mse_mean(t.fd_convection(vars[0], vars[1], vars[2], 2.5), t.constant(tgt));
    });
    check_gradients({q}, [&](Tape& t, const std::vector<Var>& vars) {
        return t.mse_mean(t.fd_diffusion(vars[0], 2.5, 0.8), t.constant(tgt));
    });

    SECTION("self-advection aliasing: u, v and q are the same Var") {
        check_gradients({q}, [&](Tape& t, const std::vector<Var>& vars) {
            return t.mse_mean(t.fd_convection(vars[0], vars[0], vars[0], 2.5), t.constant(tgt));
        });
    }
}

TEST_CASE("loss reduction gradients", "[autodiff]") {
    Rng rng(109);
    const Tensor pred = random_tensor({4, 5}, rng, 0.2, 0.8);
    Tensor label({4, 5});
    for (auto& x : label.data)
        x = rng.uniform() < 0.4 ? 1.0 : 0.0;

    check_gradients({pred}, [&](Tape& t, const std::vector<Var>& v) {
        return t.bce_mean(v[0], t.constant(label));
    });

    const Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    // keep |a-b| away from the MAE kink
    for (size_t k = 0; k < b.data.size(); ++k)
        if (std::abs(a.data[k] - b.data[k]) < 0.2)
            b.data[k] += 0.4;
    std::vector<uint8_t> mask(20, 0);
    for (size_t k = 0; k < mask.size(); ++k)
        mask[k] = (k % 3 == 0) ? 1 : 0;

    check_gradients({a, b}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mse_mean(v[0], v[1], mask);
    });
    check_gradients({a, b}, [&](Tape& t, const std::vector<Var>& v) {
        return t.mae_mean(v[0], v[1], mask);
    });
    check_gradients({a, b}, [&](Tape& t, const std::vector<Var>& v) {
        return t.sum_scalars({t.mse_mean(v[0], v[1]), t.mae_mean(v[0], v[1]), t.bce_mean(
                                  t.sigmoid(v[0]), t.constant(label))});
    });

    SECTION("empty mask rejected") {
        Tape t;
        const Var x = t.constant(a);
        REQUIRE_THROWS_AS(t.mse_mean(x, x, std::vector<uint8_t>(20, 0)), std::invalid_argument);
    }

    SECTION("bce clamps at the edges") {
        Tensor p({1, 2});
        p.data = {0.0, 1.0};
        Tensor y({1, 2});
        y.data = {0.0, 1.0};
        Tape t;
        const Var loss = t.bce_mean(t.constant(p), t.constant(y));
        REQUIRE(std::isfinite(t.val(loss).data[0]));
        REQUIRE(t.val(loss).data[0] <= 1.1e-7);
    }
}

TEST_CASE("multi-head attention building block", "[autodiff]") {
    Rng rng(110);

    SECTION("gradients through a full attention layer") {
        const Tensor X = random_tensor({3, 4}, rng);
        const Tensor Wq = random_tensor({4, 4}, rng);
        const Tensor Wk = random_tensor({4, 4}, rng);
        const Tensor Wv = random_tensor({4, 4}, rng);
        const Tensor tgt = random_tensor({3, 4}, rng);
        check_gradients({X, Wq, Wk, Wv}, [&](Tape& t, const std::vector<Var>& v) {
            return t.mse_mean(multi_head_attention(t, v[0], v[1], v[2], v[3], 2), t.constant(tgt));
        });
    }

    SECTION("T=1 attention returns V") {
        const Tensor X = random_tensor({1, 6}, rng);
        const Tensor Wq = random_tensor({6, 6}, rng);
        const Tensor Wk = random_tensor({6, 6}, rng);
        const Tensor Wv = random_tensor({6, 6}, rng);
        Tape t;
        const Var x = t.constant(X);
        const Var out = multi_head_attention(t, x, t.constant(Wq), t.constant(Wk), t.constant(Wv), 3);
        const Var v = t.matmul(x, t.constant(Wv));
        for (int64_t k = 0; k < 6; ++k)
            REQUIRE(std::abs(t.val(out).data[static_cast<size_t>(k)] -
                             t.val(v).data[static_cast<size_t>(k)]) <= 1e-12);
    }
}
