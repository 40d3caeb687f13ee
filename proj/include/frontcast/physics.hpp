#pragma once

// Finite-difference approximations of the momentum-equation terms used by
// the physics-informed loss: rate of change (forward difference in time),
// convection (forward differences in space) and diffusion (5-point central
// Laplacian). Border cells whose stencil would leave the grid are zeroed and
// flagged invalid in a companion mask; downstream losses exclude them.
//
// Axis convention (fixed project-wide): row index i = northward, advected by
// v; column index j = eastward, advected by u.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "frontcast/grid.hpp"

namespace frontcast {

struct PhysicsTerms {
    ScalarField ddt_u, ddt_v;    // m/s^2
    ScalarField conv_u, conv_v;  // m/s^2
    ScalarField diff_u, diff_v;  // m/s^2
    std::vector<uint8_t> valid_mask;  // H*W row-major, 1 = all stencils in bounds
    int64_t valid_count = 0;
};

namespace detail {
inline void require_same_shape(const ScalarField& a, const ScalarField& b, const char* op) {
    if (a.height() != b.height() || a.width() != b.width())
        throw std::invalid_argument(std::string(op) + ": field shapes differ");
}
}  // namespace detail

// (f_next - f_now) / dt, valid on every cell.
inline ScalarField ddt_forward(const ScalarField& f_now, const ScalarField& f_next,
                               double dt_seconds) {
    detail::require_same_shape(f_now, f_next, "ddt_forward");
    if (!(dt_seconds > 0.0))
        throw std::invalid_argument("ddt_forward: dt must be positive");
    ScalarField out(f_now.spec());
    const auto& a = f_now.values();
    const auto& b = f_next.values();
    auto& o = out.values();
    for (size_t k = 0; k < o.size(); ++k)
        o[k] = (b[k] - a[k]) / dt_seconds;
    return out;
}

// u * df/dx + v * df/dy with forward spatial differences. The last row and
// last column cannot host the forward stencil and are zeroed.
inline ScalarField convection(const ScalarField& u, const ScalarField& v, const ScalarField& f,
                              double dx_meters) {
    detail::require_same_shape(u, f, "convection");
    detail::require_same_shape(v, f, "convection");
    if (!(dx_meters > 0.0))
        throw std::invalid_argument("convection: dx must be positive");
    const int h = f.height(), w = f.width();
    ScalarField out(f.spec());
    for (int i = 0; i + 1 < h; ++i)
        for (int j = 0; j + 1 < w; ++j)
            out(i, j) = u(i, j) * (f(i, j + 1) - f(i, j)) / dx_meters +
                        v(i, j) * (f(i + 1, j) - f(i, j)) / dx_meters;
    return out;
}

// nu * Laplacian(f) via the 5-point central stencil; outer ring zeroed.
inline ScalarField diffusion(const ScalarField& f, double dx_meters, double nu) {
    if (!(dx_meters > 0.0))
        throw std::invalid_argument("diffusion: dx must be positive");
    if (!(nu >= 0.0))
        throw std::invalid_argument("diffusion: nu must be non-negative");
    const int h = f.height(), w = f.width();
    const double inv_dx2 = 1.0 / (dx_meters * dx_meters);
    ScalarField out(f.spec());
    for (int i = 1; i + 1 < h; ++i)
        for (int j = 1; j + 1 < w; ++j)
            out(i, j) =
                nu * (f(i, j + 1) + f(i, j - 1) + f(i + 1, j) + f(i - 1, j) - 4.0 * f(i, j)) *
                inv_dx2;
    return out;
}

// Mask of cells where every stencil used by compute_terms is in bounds:
// the convection region (drop last row/column) intersected with the
// diffusion interior, i.e. exactly the (H-2)(W-2) interior cells.
inline std::vector<uint8_t> physics_valid_mask(int height, int width) {
    std::vector<uint8_t> mask(static_cast<size_t>(height) * width, 0);
    for (int i = 1; i + 1 < height; ++i)
        for (int j = 1; j + 1 < width; ++j)
            mask[static_cast<size_t>(i) * width + j] = 1;
    return mask;
}

// Assembles the three terms for both velocity components. The time
// derivative spans the frame pair; convection and diffusion are evaluated on
// the later frame's velocities.
inline PhysicsTerms compute_terms(const StateFrame& frame_now, const StateFrame& frame_next) {
    if (frame_now.spec() != frame_next.spec())
        throw std::invalid_argument("compute_terms: frames do not share one GridSpec");
    const GridSpec& g = frame_now.spec();

    PhysicsTerms t;
    t.ddt_u = ddt_forward(frame_now.u, frame_next.u, g.dt_seconds);
    t.ddt_v = ddt_forward(frame_now.v, frame_next.v, g.dt_seconds);
    t.conv_u = convection(frame_next.u, frame_next.v, frame_next.u, g.dx_meters);
    t.conv_v = convection(frame_next.u, frame_next.v, frame_next.v, g.dx_meters);
    t.diff_u = diffusion(frame_next.u, g.dx_meters, g.nu);
    t.diff_v = diffusion(frame_next.v, g.dx_meters, g.nu);
    t.valid_mask = physics_valid_mask(g.height, g.width);
    t.valid_count = static_cast<int64_t>(g.height - 2) * (g.width - 2);

    for (const ScalarField* f : {&t.ddt_u, &t.ddt_v, &t.conv_u, &t.conv_v, &t.diff_u, &t.diff_v})
        f->validate_finite();
    return t;
}

}  // namespace frontcast
