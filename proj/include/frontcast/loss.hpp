#pragma once

// The four loss assemblies over classification, velocity and physics terms:
//   1: CE(front) + MSE(velocity & physics)
//   2: MSE everywhere
//   3: CE(front) + MAE(velocity & physics)
//   4: MAE everywhere
// Physics terms compare each finite-difference field computed from the
// predicted frame against the same field computed from the target frame
// (both differenced against the last input frame), restricted to the stencil
// validity mask. Classification and velocity terms run over all cells.
//
// The assembly is built on the autodiff tape, so the analytic gradient used
// in training is the derivative of exactly the reported value.

#include <cmath>
#include <string>
#include <vector>

#include "frontcast/autodiff.hpp"
#include "frontcast/grid.hpp"
#include "frontcast/physics.hpp"
#include "frontcast/tensor.hpp"

namespace frontcast {

inline constexpr double kCeClampEps = 1e-7;

struct LossBreakdown {
    double front_term = 0.0;
    double u_term = 0.0, v_term = 0.0;
    double ddt_u = 0.0, ddt_v = 0.0;
    double conv_u = 0.0, conv_v = 0.0;
    double diff_u = 0.0, diff_v = 0.0;
    double total = 0.0;

    std::vector<std::pair<std::string, double>> named() const {
        return {{"front", front_term}, {"u", u_term},         {"v", v_term},
                {"ddt_u", ddt_u},      {"ddt_v", ddt_v},       {"conv_u", conv_u},
                {"conv_v", conv_v},    {"diff_u", diff_u},     {"diff_v", diff_v}};
    }
};

namespace detail {
inline void require_binary(const ScalarField& label, const char* op) {
    for (double p : label.values())
        if (p != 0.0 && p != 1.0)
            throw std::invalid_argument(std::string(op) + ": label values must be 0 or 1");
}
}  // namespace detail

inline Tensor field_tensor(const ScalarField& f) {
    return Tensor({f.height(), f.width()}, f.values());
}

// Mean binary cross entropy with the prediction clamped to
// [eps, 1-eps]; Eq. undefined at exactly 0/1, clamp bounds the gradients.
inline double ce_loss(const ScalarField& pred_prob, const ScalarField& label) {
    detail::require_same_shape(pred_prob, label, "ce_loss");
    detail::require_binary(label, "ce_loss");
    const auto& p = pred_prob.values();
    const auto& y = label.values();
    double sum = 0.0;
    for (size_t k = 0; k < p.size(); ++k) {
        const double c = std::min(std::max(p[k], kCeClampEps), 1.0 - kCeClampEps);
        sum += y[k] * std::log(c) + (1.0 - y[k]) * std::log(1.0 - c);
    }
    return -sum / static_cast<double>(p.size());
}

inline double mse_loss(const ScalarField& pred, const ScalarField& target,
                       const std::vector<uint8_t>* mask = nullptr) {
    detail::require_same_shape(pred, target, "mse_loss");
    const auto& a = pred.values();
    const auto& b = target.values();
    double sum = 0.0;
    int64_t n = 0;
    for (size_t k = 0; k < a.size(); ++k) {
        if (mask && !(*mask)[k])
            continue;
        sum += (a[k] - b[k]) * (a[k] - b[k]);
        ++n;
    }
    if (n == 0)
        throw std::invalid_argument("mse_loss: empty mask");
    return sum / static_cast<double>(n);
}

inline double mae_loss(const ScalarField& pred, const ScalarField& target,
                       const std::vector<uint8_t>* mask = nullptr) {
    detail::require_same_shape(pred, target, "mae_loss");
    const auto& a = pred.values();
    const auto& b = target.values();
    double sum = 0.0;
    int64_t n = 0;
    for (size_t k = 0; k < a.size(); ++k) {
        if (mask && !(*mask)[k])
            continue;
        sum += std::abs(a[k] - b[k]);
        ++n;
    }
    if (n == 0)
        throw std::invalid_argument("mae_loss: empty mask");
    return sum / static_cast<double>(n);
}

inline void validate_loss_variant(int variant) {
    if (variant < 1 || variant > 4)
        throw std::invalid_argument("loss variant must be 1..4 (CE+MSE, MSE, CE+MAE, MAE)");
}

inline bool variant_front_is_ce(int variant) { return variant == 1 || variant == 3; }
inline bool variant_regression_is_mse(int variant) { return variant == 1 || variant == 2; }

// Builds the full 3-channel loss on the tape. `pred` is a [3,H,W] Var;
// target and last_input enter as constants. Fills `out` with the per-term
// values and returns the scalar total node.
inline Var assemble_loss_node(Tape& t, int variant, Var pred, const StateFrame& target,
                              const StateFrame& last_input, const GridSpec& spec,
                              LossBreakdown* out = nullptr) {
    validate_loss_variant(variant);
    if (target.spec() != spec || last_input.spec() != spec)
        throw std::invalid_argument("assemble_loss: frames do not share the given GridSpec");
    if (target.day_index != last_input.day_index + 1)
        throw std::invalid_argument("assemble_loss: target must be the day after last_input");
    const Tensor& P = t.val(pred);
    if (P.ndim() != 3 || P.dim(0) != 3 || P.dim(1) != spec.height || P.dim(2) != spec.width)
        throw std::invalid_argument("assemble_loss: prediction must be [3,H,W], got " + P.shape_str());

    const Var front = t.slice_channel(pred, 0);
    const Var u_pred = t.slice_channel(pred, 1);
    const Var v_pred = t.slice_channel(pred, 2);

    Var front_term;
    if (variant_front_is_ce(variant)) {
        detail::require_binary(target.front, "assemble_loss");
        front_term = t.bce_mean(front, t.constant(field_tensor(target.front)), kCeClampEps);
    } else if (variant == 2) {
        front_term = t.mse_mean(front, t.constant(field_tensor(target.front)));
    } else {
        front_term = t.mae_mean(front, t.constant(field_tensor(target.front)));
    }

    const bool reg_mse = variant_regression_is_mse(variant);
    auto reg = [&](Var a, Var b, std::vector<uint8_t> mask) {
        return reg_mse ? t.mse_mean(a, b, std::move(mask)) : t.mae_mean(a, b, std::move(mask));
    };

    const Var u_term = reg(u_pred, t.constant(field_tensor(target.u)), {});
    const Var v_term = reg(v_pred, t.constant(field_tensor(target.v)), {});

    // Physics terms of the predicted frame, differentiable through the
    // stencils; target-side terms are plain constants.
    const PhysicsTerms truth = compute_terms(last_input, target);
    const Var u_last = t.constant(field_tensor(last_input.u));
    const Var v_last = t.constant(field_tensor(last_input.v));
    const Var ddt_u_pred = t.fd_ddt(u_last, u_pred, spec.dt_seconds);
    const Var ddt_v_pred = t.fd_ddt(v_last, v_pred, spec.dt_seconds);
    const Var conv_u_pred = t.fd_convection(u_pred, v_pred, u_pred, spec.dx_meters);
    const Var conv_v_pred = t.fd_convection(u_pred, v_pred, v_pred, spec.dx_meters);
    const Var diff_u_pred = t.fd_diffusion(u_pred, spec.dx_meters, spec.nu);
    const Var diff_v_pred = t.fd_diffusion(v_pred, spec.dx_meters, spec.nu);

    const Var ddt_u_term = reg(ddt_u_pred, t.constant(field_tensor(truth.ddt_u)), truth.valid_mask);
    const Var ddt_v_term = reg(ddt_v_pred, t.constant(field_tensor(truth.ddt_v)), truth.valid_mask);
    const Var conv_u_term = reg(conv_u_pred, t.constant(field_tensor(truth.conv_u)), truth.valid_mask);
    const Var conv_v_term = reg(conv_v_pred, t.constant(field_tensor(truth.conv_v)), truth.valid_mask);
    const Var diff_u_term = reg(diff_u_pred, t.constant(field_tensor(truth.diff_u)), truth.valid_mask);
    const Var diff_v_term = reg(diff_v_pred, t.constant(field_tensor(truth.diff_v)), truth.valid_mask);

    const Var total = t.sum_scalars({front_term, u_term, v_term, ddt_u_term, ddt_v_term,
                                     conv_u_term, conv_v_term, diff_u_term, diff_v_term});
    if (out) {
        out->front_term = t.val(front_term).data[0];
        out->u_term = t.val(u_term).data[0];
        out->v_term = t.val(v_term).data[0];
        out->ddt_u = t.val(ddt_u_term).data[0];
        out->ddt_v = t.val(ddt_v_term).data[0];
        out->conv_u = t.val(conv_u_term).data[0];
        out->conv_v = t.val(conv_v_term).data[0];
        out->diff_u = t.val(diff_u_term).data[0];
        out->diff_v = t.val(diff_v_term).data[0];
        out->total = t.val(total).data[0];
    }
    return total;
}

// Front-only reduction used by single-channel models; `pred` is [1,H,W].
// Only cross entropy is meaningful here, so the variant must use CE.
inline Var assemble_front_loss_node(Tape& t, int variant, Var pred, const ScalarField& label,
                                    LossBreakdown* out = nullptr) {
    validate_loss_variant(variant);
    if (!variant_front_is_ce(variant))
        throw std::invalid_argument(
            "front-only models support CE-based loss variants (1 or 3) only");
    const Tensor& P = t.val(pred);
    if (P.ndim() != 3 || P.dim(0) != 1)
        throw std::invalid_argument("front loss: prediction must be [1,H,W]");
    detail::require_binary(label, "assemble_front_loss");
    const Var front = t.slice_channel(pred, 0);
    const Var term = t.bce_mean(front, t.constant(field_tensor(label)), kCeClampEps);
    if (out) {
        out->front_term = t.val(term).data[0];
        out->total = out->front_term;
    }
    return term;
}

inline Tensor frame_tensor3(const StateFrame& f) {
    Tensor x({3, f.spec().height, f.spec().width});
    const int64_t hw = static_cast<int64_t>(f.spec().height) * f.spec().width;
    std::copy(f.front.values().begin(), f.front.values().end(), x.data.begin());
    std::copy(f.u.values().begin(), f.u.values().end(), x.data.begin() + hw);
    std::copy(f.v.values().begin(), f.v.values().end(), x.data.begin() + 2 * hw);
    return x;
}

// Plain evaluation of the assembly for a concrete predicted frame.
inline LossBreakdown assemble_loss(int variant, const StateFrame& pred, const StateFrame& target,
                                   const StateFrame& last_input, const GridSpec& spec) {
    if (pred.spec() != spec)
        throw std::invalid_argument("assemble_loss: pred grid mismatch");
    Tape t;
    LossBreakdown bd;
    assemble_loss_node(t, variant, t.constant(frame_tensor3(pred)), target, last_input, spec, &bd);
    return bd;
}

// Assembly value plus its analytic gradient w.r.t. the predicted frame,
// returned as a [3,H,W] tensor (channels front, u, v).
inline std::pair<LossBreakdown, Tensor> assemble_loss_grad(int variant, const StateFrame& pred,
                                                           const StateFrame& target,
                                                           const StateFrame& last_input,
                                                           const GridSpec& spec) {
    Tape t;
    LossBreakdown bd;
    const Var p = t.leaf(frame_tensor3(pred), true);
    const Var total = assemble_loss_node(t, variant, p, target, last_input, spec, &bd);
    t.backward(total);
    return {bd, t.grad(p)};
}

}  // namespace frontcast
