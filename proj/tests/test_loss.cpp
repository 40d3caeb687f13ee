#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "frontcast/loss.hpp"
#include "frontcast/random.hpp"

using namespace frontcast;

namespace {

ScalarField random_field(const GridSpec& spec, Rng& rng, double lo, double hi) {
    ScalarField f(spec);
    for (auto& v : f.values())
        v = rng.uniform(lo, hi);
    return f;
}

ScalarField random_binary(const GridSpec& spec, Rng& rng, double p = 0.4) {
    ScalarField f(spec);
    for (auto& v : f.values())
        v = rng.uniform() < p ? 1.0 : 0.0;
    return f;
}

StateFrame random_state(const GridSpec& spec, Rng& rng, int64_t day, bool binary_front) {
    StateFrame f;
    f.front = binary_front ? random_binary(spec, rng) : random_field(spec, rng, 0.05, 0.95);
    f.u = random_field(spec, rng, -1.5, 1.5);
    f.v = random_field(spec, rng, -1.5, 1.5);
    f.day_index = day;
    return f;
}

// scalar-loop CE oracle, independent of the library path
double oracle_ce(const ScalarField& pred, const ScalarField& label) {
    double s = 0.0;
    for (size_t k = 0; k < pred.values().size(); ++k) {
        double c = pred.values()[k];
        c = std::min(std::max(c, 1e-7), 1.0 - 1e-7);
        s += label.values()[k] * std::log(c) + (1.0 - label.values()[k]) * std::log(1.0 - c);
    }
    return -s / static_cast<double>(pred.values().size());
}

}  // namespace

TEST_CASE("ce_loss", "[loss]") {
    const GridSpec spec{8, 8, 9000.0, 86400.0, 1e-6};
    Rng rng(21);

    SECTION("maximum entropy prediction") {
        const ScalarField pred(spec, 0.5);
        const ScalarField label = random_binary(spec, rng);
        REQUIRE(std::abs(ce_loss(pred, label) - std::log(2.0)) <= 1e-12);
    }

    SECTION("perfect prediction hits the clamp floor") {
        const ScalarField label = random_binary(spec, rng);
        REQUIRE(ce_loss(label, label) <= 1e-6);
        REQUIRE(ce_loss(label, label) > 0.0);
    }

    SECTION("matches scalar oracle") {
        for (int rep = 0; rep < 20; ++rep) {
            const ScalarField pred = random_field(spec, rng, 0.01, 0.99);
            const ScalarField label = random_binary(spec, rng);
            REQUIRE(std::abs(ce_loss(pred, label) - oracle_ce(pred, label)) <= 1e-12);
        }
    }

    SECTION("non-binary label rejected") {
        const ScalarField pred(spec, 0.5);
        ScalarField label(spec, 0.0);
        label(2, 2) = 0.5;
        REQUIRE_THROWS_AS(ce_loss(pred, label), std::invalid_argument);
    }
}

TEST_CASE("mse and mae losses", "[loss]") {
    const GridSpec spec{8, 8, 9000.0, 86400.0, 1e-6};
    Rng rng(22);

    SECTION("zero at equality") {
        const ScalarField f = random_field(spec, rng, -2, 2);
        REQUIRE(mse_loss(f, f) == 0.0);
        REQUIRE(mae_loss(f, f) == 0.0);
    }

    SECTION("constant offsets") {
        const ScalarField a(spec, 5.0), b(spec, 3.0);
        REQUIRE(mse_loss(a, b) == 4.0);
        const ScalarField c(spec, 0.0), d(spec, 3.0);
        REQUIRE(mae_loss(c, d) == 3.0);
    }

    SECTION("masked forms match a scalar oracle") {
        for (int rep = 0; rep < 20; ++rep) {
            const ScalarField a = random_field(spec, rng, -2, 2);
            const ScalarField b = random_field(spec, rng, -2, 2);
            std::vector<uint8_t> mask(64);
            for (auto& m : mask)
                m = rng.uniform() < 0.6 ? 1 : 0;
            mask[0] = 1;  // never empty
            double se = 0.0, ae = 0.0;
            int64_t n = 0;
            for (size_t k = 0; k < 64; ++k) {
                if (!mask[k])
                    continue;
                const double d = a.values()[k] - b.values()[k];
                se += d * d;
                ae += std::abs(d);
                ++n;
            }
            REQUIRE(std::abs(mse_loss(a, b, &mask) - se / n) <= 1e-12);
            REQUIRE(std::abs(mae_loss(a, b, &mask) - ae / n) <= 1e-12);
        }
    }

    SECTION("empty mask rejected") {
        const ScalarField a = random_field(spec, rng, -2, 2);
        const std::vector<uint8_t> mask(64, 0);
        REQUIRE_THROWS_AS(mse_loss(a, a, &mask), std::invalid_argument);
    }
}

TEST_CASE("assemble_loss values", "[loss]") {
    const GridSpec spec{6, 6, 9000.0, 86400.0, 1e-6};
    Rng rng(23);

    SECTION("perfect prediction leaves only the clamp floor") {
        const StateFrame last = random_state(spec, rng, 0, true);
        StateFrame target = random_state(spec, rng, 1, true);
        const LossBreakdown bd = assemble_loss(1, target, target, last, spec);
        REQUIRE(bd.u_term == 0.0);
        REQUIRE(bd.v_term == 0.0);
        REQUIRE(bd.ddt_u == 0.0);
        REQUIRE(bd.conv_u == 0.0);
        REQUIRE(bd.diff_v == 0.0);
        REQUIRE(bd.front_term > 0.0);
        REQUIRE(bd.front_term <= 1.1e-7);
        REQUIRE(bd.total == bd.front_term);
    }

    SECTION("total is the sum of the nine terms and every term is non-negative") {
        for (int variant = 1; variant <= 4; ++variant) {
            const StateFrame last = random_state(spec, rng, 0, true);
            const StateFrame target = random_state(spec, rng, 1, true);
            const StateFrame pred = random_state(spec, rng, 1, false);
            const LossBreakdown bd = assemble_loss(variant, pred, target, last, spec);
            double sum = 0.0;
            for (const auto& [name, value] : bd.named()) {
                REQUIRE(value >= 0.0);
                sum += value;
            }
            REQUIRE(std::abs(bd.total - sum) <= 1e-12 * std::max(1.0, std::abs(sum)));
        }
    }

    SECTION("matches independent recomposition from the component oracles") {
        const StateFrame last = random_state(spec, rng, 0, true);
        const StateFrame target = random_state(spec, rng, 1, true);
        const StateFrame pred = random_state(spec, rng, 1, false);
        const LossBreakdown bd = assemble_loss(1, pred, target, last, spec);

        const PhysicsTerms tp = compute_terms(last, pred);
        const PhysicsTerms tt = compute_terms(last, target);
        const double front = ce_loss(pred.front, target.front);
        const double u = mse_loss(pred.u, target.u);
        const double v = mse_loss(pred.v, target.v);
        auto phys = [&](const ScalarField& a, const ScalarField& b) {
            return mse_loss(a, b, &tt.valid_mask);
        };
        const double expect = front + u + v + phys(tp.ddt_u, tt.ddt_u) + phys(tp.ddt_v, tt.ddt_v) +
                              phys(tp.conv_u, tt.conv_u) + phys(tp.conv_v, tt.conv_v) +
                              phys(tp.diff_u, tt.diff_u) + phys(tp.diff_v, tt.diff_v);
        REQUIRE(std::abs(bd.total - expect) <= 1e-10 * std::max(1.0, std::abs(expect)));
        REQUIRE(std::abs(bd.front_term - front) <= 1e-12);
        REQUIRE(std::abs(bd.u_term - u) <= 1e-12);
        REQUIRE(std::abs(bd.conv_v - phys(tp.conv_v, tt.conv_v)) <= 1e-12);
    }

    SECTION("variant pairs differ exactly where the assemblies differ") {
        const StateFrame last = random_state(spec, rng, 0, true);
        const StateFrame target = random_state(spec, rng, 1, true);
        const StateFrame pred = random_state(spec, rng, 1, false);
        const LossBreakdown b1 = assemble_loss(1, pred, target, last, spec);
        const LossBreakdown b2 = assemble_loss(2, pred, target, last, spec);
        const LossBreakdown b3 = assemble_loss(3, pred, target, last, spec);
        const LossBreakdown b4 = assemble_loss(4, pred, target, last, spec);

        // 1 vs 2: only the front term changes (CE vs MSE)
        REQUIRE(b1.front_term != b2.front_term);
        REQUIRE(b1.u_term == b2.u_term);
        REQUIRE(b1.v_term == b2.v_term);
        REQUIRE(b1.conv_u == b2.conv_u);
        REQUIRE(b1.diff_v == b2.diff_v);

        // 1 vs 3: same front term (CE), different regression metric
        REQUIRE(b1.front_term == b3.front_term);
        REQUIRE(b1.u_term != b3.u_term);
        REQUIRE(b1.conv_u != b3.conv_u);

        // 3 vs 4: only the front term changes (CE vs MAE)
        REQUIRE(b3.front_term != b4.front_term);
        REQUIRE(b3.u_term == b4.u_term);
        REQUIRE(b3.diff_u == b4.diff_u);
    }

    SECTION("doubling dx quarters diffusion term values") {
        Rng r2(24);
        const ScalarField f = random_field(spec, r2, -2, 2);
        const ScalarField d1 = diffusion(f, spec.dx_meters, 1.0);
        const ScalarField d2 = diffusion(f, 2.0 * spec.dx_meters, 1.0);
        for (int i = 1; i < spec.height - 1; ++i)
            for (int j = 1; j < spec.width - 1; ++j)
                REQUIRE(std::abs(d2(i, j) - 0.25 * d1(i, j)) <=
                        1e-12 * std::max(1.0, std::abs(d1(i, j))));
    }
}

TEST_CASE("assemble_loss gradient matches central differences", "[loss][grad]") {
    // Unit-scale grid makes every physics term O(1), so the finite
    // differences exercise the stencil adjoints, not just front/velocity.
    const GridSpec unit{6, 6, 2.0, 1.5, 0.8};
    const GridSpec paper{6, 6, 9000.0, 86400.0, 1e-6};
    const double h = 1e-4;
    const double tol = 1e-4;

    for (const GridSpec& spec : {unit, paper}) {
        Rng rng(25);
        const StateFrame last = random_state(spec, rng, 0, true);
        const StateFrame target = random_state(spec, rng, 1, true);
        StateFrame pred = random_state(spec, rng, 1, false);
        // keep MAE variants away from kinks: shift velocities off the targets
        for (int i = 0; i < spec.height; ++i)
            for (int j = 0; j < spec.width; ++j) {
                if (std::abs(pred.u(i, j) - target.u(i, j)) < 0.3)
                    pred.u(i, j) += 0.6;
                if (std::abs(pred.v(i, j) - target.v(i, j)) < 0.3)
                    pred.v(i, j) -= 0.6;
            }

        for (int variant = 1; variant <= 4; ++variant) {
            const auto [bd, grad] = assemble_loss_grad(variant, pred, target, last, spec);
            REQUIRE(grad.shape == std::vector<int64_t>({3, spec.height, spec.width}));

            auto eval = [&](int c, int i, int j, double delta) {
                StateFrame p2 = pred;
                ScalarField& field = c == 0 ? p2.front : (c == 1 ? p2.u : p2.v);
                field(i, j) += delta;
                return assemble_loss(variant, p2, target, last, spec).total;
            };

            int checked = 0;
            for (int c = 0; c < 3; ++c)
                for (int i = 0; i < spec.height; ++i)
                    for (int j = 0; j < spec.width; ++j) {
                        if ((i + j + c) % 3 != 0)
                            continue;  // probe a third of the cells, all channels
                        const double num = (eval(c, i, j, h) - eval(c, i, j, -h)) / (2.0 * h);
                        const double ana =
                            grad.data[static_cast<size_t>((c * spec.height + i) * spec.width + j)];
                        const double err = std::abs(num - ana);
                        const double scale = std::max(std::abs(num), std::abs(ana));
                        INFO("variant " << variant << " channel " << c << " cell (" << i << "," << j
                                        << "): analytic " << ana << " numeric " << num);
                        if (scale > 1e-7)
                            REQUIRE(err / scale <= tol);
                        else
                            REQUIRE(err <= 1e-8);
                        ++checked;
                    }
            REQUIRE(checked > 30);
        }
    }
}

TEST_CASE("front-only loss reduction", "[loss]") {
    const GridSpec spec{6, 6, 9000.0, 86400.0, 1e-6};
    Rng rng(26);
    const ScalarField label = random_binary(spec, rng);
    const ScalarField pred = random_field(spec, rng, 0.05, 0.95);

    Tape t;
    Tensor p({1, spec.height, spec.width}, pred.values());
    LossBreakdown bd;
    const Var total = assemble_front_loss_node(t, 1, t.constant(p), label, &bd);
    REQUIRE(std::abs(t.val(total).data[0] - ce_loss(pred, label)) <= 1e-12);
    REQUIRE(bd.total == bd.front_term);
    REQUIRE(bd.u_term == 0.0);

    Tape t2;
    REQUIRE_THROWS_AS(assemble_front_loss_node(t2, 2, t2.constant(p), label, nullptr),
                      std::invalid_argument);
}
