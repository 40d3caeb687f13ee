#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "frontcast/physics.hpp"
#include "frontcast/random.hpp"
#include "frontcast/synthdata.hpp"

using namespace frontcast;

namespace {

GridSpec spec16() { return GridSpec{16, 16, 9000.0, 86400.0, 1e-6}; }

ScalarField random_field(const GridSpec& spec, Rng& rng, double lo = -2.0, double hi = 2.0) {
    ScalarField f(spec);
    for (auto& v : f.values())
        v = rng.uniform(lo, hi);
    return f;
}

// ---- independent scalar-loop oracles (kept separate from the library path) ----

ScalarField oracle_ddt(const ScalarField& a, const ScalarField& b, double dt) {
    ScalarField out(a.spec());
    for (int i = 0; i < a.height(); ++i)
        for (int j = 0; j < a.width(); ++j)
            out(i, j) = (b(i, j) - a(i, j)) / dt;
    return out;
}

ScalarField oracle_convection(const ScalarField& u, const ScalarField& v, const ScalarField& f,
                              double dx) {
    ScalarField out(f.spec());
    for (int i = 0; i < f.height(); ++i)
        for (int j = 0; j < f.width(); ++j) {
            if (i == f.height() - 1 || j == f.width() - 1)
                continue;
            const double dfdx = (f(i, j + 1) - f(i, j)) / dx;
            const double dfdy = (f(i + 1, j) - f(i, j)) / dx;
            out(i, j) = u(i, j) * dfdx + v(i, j) * dfdy;
        }
    return out;
}

ScalarField oracle_diffusion(const ScalarField& f, double dx, double nu) {
    ScalarField out(f.spec());
    for (int i = 1; i < f.height() - 1; ++i)
        for (int j = 1; j < f.width() - 1; ++j)
            out(i, j) = nu *
                        (f(i, j + 1) + f(i, j - 1) + f(i + 1, j) + f(i - 1, j) - 4.0 * f(i, j)) /
                        (dx * dx);
    return out;
}

double max_abs_diff(const ScalarField& a, const ScalarField& b) {
    double m = 0.0;
    for (int i = 0; i < a.height(); ++i)
        for (int j = 0; j < a.width(); ++j)
            m = std::max(m, std::abs(a(i, j) - b(i, j)));
    return m;
}

}  // namespace

TEST_CASE("ddt_forward", "[physics]") {
    const GridSpec spec = spec16();
    Rng rng(11);

    SECTION("constant in time gives zero") {
        const ScalarField f = random_field(spec, rng);
        const ScalarField out = ddt_forward(f, f, spec.dt_seconds);
        for (double v : out.values())
            REQUIRE(v == 0.0);
    }

    SECTION("linear ramp") {
        const ScalarField a(spec, 0.0);
        const ScalarField b(spec, 86400.0);
        const ScalarField out = ddt_forward(a, b, 86400.0);
        for (double v : out.values())
            REQUIRE(v == 1.0);
    }

    SECTION("matches scalar oracle on random pairs") {
        for (int rep = 0; rep < 50; ++rep) {
            const ScalarField a = random_field(spec, rng);
            const ScalarField b = random_field(spec, rng);
            REQUIRE(max_abs_diff(ddt_forward(a, b, spec.dt_seconds),
                                 oracle_ddt(a, b, spec.dt_seconds)) <= 1e-12);
        }
    }

    SECTION("linearity") {
        const ScalarField f = random_field(spec, rng);
        const ScalarField g = random_field(spec, rng);
        const ScalarField zero(spec, 0.0);
        const double a = 1.7, b = -0.4;
        ScalarField combo(spec);
        for (int i = 0; i < spec.height; ++i)
            for (int j = 0; j < spec.width; ++j)
                combo(i, j) = a * f(i, j) + b * g(i, j);
        const ScalarField lhs = ddt_forward(zero, combo, spec.dt_seconds);
        const ScalarField df = ddt_forward(zero, f, spec.dt_seconds);
        const ScalarField dg = ddt_forward(zero, g, spec.dt_seconds);
        for (int i = 0; i < spec.height; ++i)
            for (int j = 0; j < spec.width; ++j) {
                const double expect = a * df(i, j) + b * dg(i, j);
                REQUIRE(std::abs(lhs(i, j) - expect) <=
                        1e-10 * std::max(1.0, std::abs(expect)));
            }
    }

    SECTION("shape mismatch") {
        const ScalarField a(spec);
        const ScalarField b(GridSpec{8, 8, 9000.0, 86400.0, 1e-6});
        REQUIRE_THROWS_AS(ddt_forward(a, b, 1.0), std::invalid_argument);
    }
}

TEST_CASE("convection", "[physics]") {
    const GridSpec spec = spec16();
    Rng rng(12);

    SECTION("constant field has zero gradient") {
        const ScalarField u = random_field(spec, rng);
        const ScalarField v = random_field(spec, rng);
        const ScalarField f(spec, 3.5);
        const ScalarField out = convection(u, v, f, spec.dx_meters);
        for (double x : out.values())
            REQUIRE(x == 0.0);
    }

    SECTION("linear field is exact for forward differences") {
        const double c = 0.7, a = 1.3e-4;
        const ScalarField u(spec, c);
        const ScalarField v(spec, 0.0);
        ScalarField f(spec);
        for (int i = 0; i < spec.height; ++i)
            for (int j = 0; j < spec.width; ++j)
                f(i, j) = a * (j * spec.dx_meters);
        const ScalarField out = convection(u, v, f, spec.dx_meters);
        for (int i = 0; i < spec.height - 1; ++i)
            for (int j = 0; j < spec.width - 1; ++j)
                REQUIRE(std::abs(out(i, j) - c * a) <= 1e-15);
    }

    SECTION("matches scalar oracle; borders zero") {
        for (int rep = 0; rep < 50; ++rep) {
            const ScalarField u = random_field(spec, rng);
            const ScalarField v = random_field(spec, rng);
            const ScalarField f = random_field(spec, rng);
            const ScalarField out = convection(u, v, f, spec.dx_meters);
            REQUIRE(max_abs_diff(out, oracle_convection(u, v, f, spec.dx_meters)) <= 1e-12);
            for (int j = 0; j < spec.width; ++j)
                REQUIRE(out(spec.height - 1, j) == 0.0);
            for (int i = 0; i < spec.height; ++i)
                REQUIRE(out(i, spec.width - 1) == 0.0);
        }
    }

    SECTION("zero velocity kills the term everywhere") {
        const ScalarField zero(spec, 0.0);
        const ScalarField f = random_field(spec, rng);
        const ScalarField out = convection(zero, zero, f, spec.dx_meters);
        for (double x : out.values())
            REQUIRE(x == 0.0);
    }
}

TEST_CASE("diffusion", "[physics]") {
    const GridSpec spec = spec16();
    Rng rng(13);

    SECTION("affine field has zero Laplacian") {
        ScalarField f(spec);
        for (int i = 0; i < spec.height; ++i)
            for (int j = 0; j < spec.width; ++j)
                f(i, j) = 2.0 + 0.3 * i - 1.1 * j;
        const ScalarField out = diffusion(f, spec.dx_meters, 1.0);
        for (int i = 1; i < spec.height - 1; ++i)
            for (int j = 1; j < spec.width - 1; ++j)
                REQUIRE(std::abs(out(i, j)) <= 1e-12);
    }

    SECTION("quadratic field is exact: Laplacian((x)^2) = 2") {
        ScalarField f(spec);
        for (int i = 0; i < spec.height; ++i)
            for (int j = 0; j < spec.width; ++j)
                f(i, j) = (j * spec.dx_meters) * (j * spec.dx_meters);
        const ScalarField out = diffusion(f, spec.dx_meters, 1.0);
        for (int i = 1; i < spec.height - 1; ++i)
            for (int j = 1; j < spec.width - 1; ++j)
                REQUIRE(std::abs(out(i, j) - 2.0) <= 1e-9);
    }

    SECTION("matches scalar oracle; border ring zero") {
        for (int rep = 0; rep < 50; ++rep) {
            const ScalarField f = random_field(spec, rng);
            const ScalarField out = diffusion(f, spec.dx_meters, spec.nu);
            REQUIRE(max_abs_diff(out, oracle_diffusion(f, spec.dx_meters, spec.nu)) <= 1e-12);
            for (int j = 0; j < spec.width; ++j) {
                REQUIRE(out(0, j) == 0.0);
                REQUIRE(out(spec.height - 1, j) == 0.0);
            }
        }
    }
}

TEST_CASE("compute_terms", "[physics]") {
    const GridSpec spec = spec16();
    Rng rng(14);

    auto frame_of = [&](const ScalarField& u, const ScalarField& v) {
        StateFrame f;
        f.front = ScalarField(spec);
        f.u = u;
        f.v = v;
        return f;
    };

    SECTION("steady uniform flow zeroes every term on valid cells") {
        StateFrame a = frame_of(ScalarField(spec, 0.4), ScalarField(spec, -0.2));
        StateFrame b = a;
        a.day_index = 0;
        b.day_index = 1;
        const PhysicsTerms t = compute_terms(a, b);
        for (const ScalarField* f :
             {&t.ddt_u, &t.ddt_v, &t.conv_u, &t.conv_v, &t.diff_u, &t.diff_v})
            for (size_t k = 0; k < f->values().size(); ++k)
                if (t.valid_mask[k])
                    REQUIRE(f->values()[k] == 0.0);
    }

    SECTION("equals independent composition of the three ops") {
        for (int rep = 0; rep < 20; ++rep) {
            StateFrame a = frame_of(random_field(spec, rng), random_field(spec, rng));
            StateFrame b = frame_of(random_field(spec, rng), random_field(spec, rng));
            a.day_index = 0;
            b.day_index = 1;
            const PhysicsTerms t = compute_terms(a, b);
            REQUIRE(max_abs_diff(t.ddt_u, ddt_forward(a.u, b.u, spec.dt_seconds)) == 0.0);
            REQUIRE(max_abs_diff(t.ddt_v, ddt_forward(a.v, b.v, spec.dt_seconds)) == 0.0);
            REQUIRE(max_abs_diff(t.conv_u, convection(b.u, b.v, b.u, spec.dx_meters)) == 0.0);
            REQUIRE(max_abs_diff(t.conv_v, convection(b.u, b.v, b.v, spec.dx_meters)) == 0.0);
            REQUIRE(max_abs_diff(t.diff_u, diffusion(b.u, spec.dx_meters, spec.nu)) == 0.0);
            REQUIRE(max_abs_diff(t.diff_v, diffusion(b.v, spec.dx_meters, spec.nu)) == 0.0);
        }
    }

    SECTION("valid mask is exactly the interior") {
        StateFrame a = frame_of(random_field(spec, rng), random_field(spec, rng));
        StateFrame b = frame_of(random_field(spec, rng), random_field(spec, rng));
        a.day_index = 0;
        b.day_index = 1;
        const PhysicsTerms t = compute_terms(a, b);
        REQUIRE(t.valid_count == (spec.height - 2) * (spec.width - 2));
        int64_t count = 0;
        for (int i = 0; i < spec.height; ++i)
            for (int j = 0; j < spec.width; ++j) {
                const bool interior =
                    i >= 1 && i < spec.height - 1 && j >= 1 && j < spec.width - 1;
                REQUIRE((t.valid_mask[static_cast<size_t>(i) * spec.width + j] != 0) == interior);
                count += t.valid_mask[static_cast<size_t>(i) * spec.width + j] ? 1 : 0;
            }
        REQUIRE(count == t.valid_count);
    }

    SECTION("grid mismatch rejected") {
        StateFrame a = frame_of(random_field(spec, rng), random_field(spec, rng));
        const GridSpec other{8, 8, 9000.0, 86400.0, 1e-6};
        StateFrame b;
        b.front = ScalarField(other);
        b.u = ScalarField(other);
        b.v = ScalarField(other);
        REQUIRE_THROWS_AS(compute_terms(a, b), std::invalid_argument);
    }
}

TEST_CASE("advected temperature satisfies the transport balance", "[physics][synthdata]") {
    // The generator advects its temperature field nearly purely; the
    // forward-difference rate of change plus convection should nearly cancel.
    SynthConfig cfg;
    cfg.grid = GridSpec{64, 64, 9000.0, 86400.0, 1e-6};
    cfg.num_days = 24;
    cfg.max_speed = 0.02;  // ~0.2 cells/day keeps the discretization error small
    cfg.front_threshold = 1e-5;
    cfg.seed = 5;
    const SynthSequence seq = generate_sequence_full(cfg);

    const auto mask = physics_valid_mask(cfg.grid.height, cfg.grid.width);
    double residual_sq = 0.0, conv_sq = 0.0;
    for (size_t d = 0; d + 1 < seq.temperature.size(); ++d) {
        const ScalarField ddt =
            ddt_forward(seq.temperature[d], seq.temperature[d + 1], cfg.grid.dt_seconds);
        const ScalarField conv = convection(seq.frames[d].u, seq.frames[d].v,
                                            seq.temperature[d], cfg.grid.dx_meters);
        for (int i = 0; i < cfg.grid.height; ++i)
            for (int j = 0; j < cfg.grid.width; ++j) {
                if (!mask[static_cast<size_t>(i) * cfg.grid.width + j])
                    continue;
                const double r = ddt(i, j) + conv(i, j);
                residual_sq += r * r;
                conv_sq += conv(i, j) * conv(i, j);
            }
    }
    REQUIRE(conv_sq > 0.0);
    const double ratio = std::sqrt(residual_sq / conv_sq);
    INFO("relative advection residual " << ratio);
    REQUIRE(ratio < 0.1);
}
