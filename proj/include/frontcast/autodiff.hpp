#pragma once

// Reverse-mode autodiff over Tensor values. A Tape owns the computation
// graph; nodes are appended in evaluation order, so the reverse sweep walks
// the vector backwards. Gradient buffers are allocated lazily during
// backward, which keeps forward-only evaluation cheap.
//
// Every op's adjoint is exercised against central finite differences in the
// test suite; when adding an op, add it to that harness.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "frontcast/tensor.hpp"

namespace frontcast {

struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    void clear() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

    Var leaf(Tensor value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, nullptr);
    }
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& val(Var v) const { return node(v).value; }

    // Gradient of the last backward() root w.r.t. v; zeros if v was not
    // reached by the sweep.
    Tensor grad(Var v) const {
        const Node& n = node(v);
        if (n.grad.data.empty())
            return Tensor(n.value.shape);
        return n.grad;
    }

    void backward(Var root) {
        if (!root.valid() || static_cast<size_t>(root.id) >= nodes_.size())
            throw std::invalid_argument("backward: invalid root");
        Node& r = nodes_[static_cast<size_t>(root.id)];
        if (r.value.numel() != 1)
            throw std::invalid_argument("backward: root must be scalar");
        for (auto& n : nodes_)
            n.grad = Tensor();
        gbuf(root.id).data[0] = 1.0;
        for (int32_t i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.backprop || !n.requires_grad || n.grad.data.empty())
                continue;
            n.backprop(*this, i);
        }
    }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        check_same(a, b, "add");
        Tensor out = val(a);
        const auto& bd = val(b).data;
        for (size_t k = 0; k < out.data.size(); ++k)
            out.data[k] += bd[k];
        return push(std::move(out), rg(a) || rg(b), [a, b](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            t.accumulate(a, [&](std::vector<double>& da) {
                for (size_t k = 0; k < g.size(); ++k) da[k] += g[k];
            });
            t.accumulate(b, [&](std::vector<double>& db) {
                for (size_t k = 0; k < g.size(); ++k) db[k] += g[k];
            });
        });
    }

    Var sub(Var a, Var b) {
        check_same(a, b, "sub");
        Tensor out = val(a);
        const auto& bd = val(b).data;
        for (size_t k = 0; k < out.data.size(); ++k)
            out.data[k] -= bd[k];
        return push(std::move(out), rg(a) || rg(b), [a, b](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            t.accumulate(a, [&](std::vector<double>& da) {
                for (size_t k = 0; k < g.size(); ++k) da[k] += g[k];
            });
            t.accumulate(b, [&](std::vector<double>& db) {
                for (size_t k = 0; k < g.size(); ++k) db[k] -= g[k];
            });
        });
    }

    Var mul(Var a, Var b) {
        check_same(a, b, "mul");
        Tensor out = val(a);
        const auto& bd = val(b).data;
        for (size_t k = 0; k < out.data.size(); ++k)
            out.data[k] *= bd[k];
        return push(std::move(out), rg(a) || rg(b), [a, b](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            const auto& av = t.val(a).data;
            const auto& bv = t.val(b).data;
            t.accumulate(a, [&](std::vector<double>& da) {
                for (size_t k = 0; k < g.size(); ++k) da[k] += g[k] * bv[k];
            });
            t.accumulate(b, [&](std::vector<double>& db) {
                for (size_t k = 0; k < g.size(); ++k) db[k] += g[k] * av[k];
            });
        });
    }

    Var scale(Var a, double s) {
        Tensor out = val(a);
        for (double& x : out.data)
            x *= s;
        return push(std::move(out), rg(a), [a, s](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            t.accumulate(a, [&](std::vector<double>& da) {
                for (size_t k = 0; k < g.size(); ++k) da[k] += g[k] * s;
            });
        });
    }

    Var relu(Var a) {
        Tensor out = val(a);
        for (double& x : out.data)
            x = x > 0.0 ? x : 0.0;
        return push(std::move(out), rg(a), [a](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            const auto& av = t.val(a).data;
            t.accumulate(a, [&](std::vector<double>& da) {
                for (size_t k = 0; k < g.size(); ++k)
                    if (av[k] > 0.0) da[k] += g[k];
            });
        });
    }

    Var sigmoid(Var a) {
        Tensor out = val(a);
        for (double& x : out.data)
            x = 1.0 / (1.0 + std::exp(-x));
        return push(std::move(out), rg(a), [a](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            const auto& y = t.node_at(self).value.data;
            t.accumulate(a, [&](std::vector<double>& da) {
                for (size_t k = 0; k < g.size(); ++k) da[k] += g[k] * y[k] * (1.0 - y[k]);
            });
        });
    }

    Var tanh_op(Var a) {
        Tensor out = val(a);
        for (double& x : out.data)
            x = std::tanh(x);
        return push(std::move(out), rg(a), [a](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            const auto& y = t.node_at(self).value.data;
            t.accumulate(a, [&](std::vector<double>& da) {
                for (size_t k = 0; k < g.size(); ++k) da[k] += g[k] * (1.0 - y[k] * y[k]);
            });
        });
    }

    // ---- linear algebra ----

    Var matmul(Var a, Var b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.ndim() != 2 || B.ndim() != 2 || A.dim(1) != B.dim(0))
            throw std::invalid_argument("matmul: incompatible shapes " + A.shape_str() + " x " +
                                        B.shape_str());
        const int64_t m = A.dim(0), kk = A.dim(1), n = B.dim(1);
        Tensor out({m, n});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t k = 0; k < kk; ++k) {
                const double av = A.data[static_cast<size_t>(i * kk + k)];
                if (av == 0.0) continue;
                const double* brow = &B.data[static_cast<size_t>(k * n)];
                double* orow = &out.data[static_cast<size_t>(i * n)];
                for (int64_t j = 0; j < n; ++j)
                    orow[j] += av * brow[j];
            }
        return push(std::move(out), rg(a) || rg(b), [a, b, m, kk, n](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            const auto& av = t.val(a).data;
            const auto& bv = t.val(b).data;
            t.accumulate(a, [&](std::vector<double>& da) {
                // dA = g * B^T
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t k = 0; k < kk; ++k) {
                        double s = 0.0;
                        for (int64_t j = 0; j < n; ++j)
                            s += g[static_cast<size_t>(i * n + j)] * bv[static_cast<size_t>(k * n + j)];
                        da[static_cast<size_t>(i * kk + k)] += s;
                    }
            });
            t.accumulate(b, [&](std::vector<double>& db) {
                // dB = A^T * g
                for (int64_t k = 0; k < kk; ++k)
                    for (int64_t i = 0; i < m; ++i) {
                        const double aik = av[static_cast<size_t>(i * kk + k)];
                        if (aik == 0.0) continue;
                        for (int64_t j = 0; j < n; ++j)
                            db[static_cast<size_t>(k * n + j)] += aik * g[static_cast<size_t>(i * n + j)];
                    }
            });
        });
    }

    Var transpose(Var a) {
        const Tensor& A = val(a);
        if (A.ndim() != 2)
            throw std::invalid_argument("transpose: need 2-d tensor");
        const int64_t m = A.dim(0), n = A.dim(1);
        Tensor out({n, m});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j)
                out.data[static_cast<size_t>(j * m + i)] = A.data[static_cast<size_t>(i * n + j)];
        return push(std::move(out), rg(a), [a, m, n](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            t.accumulate(a, [&](std::vector<double>& da) {
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j)
                        da[static_cast<size_t>(i * n + j)] += g[static_cast<size_t>(j * m + i)];
            });
        });
    }

    // x[m,k] * W[k,n] + b[n]
    Var linear(Var x, Var W, Var b) {
        const Tensor& X = val(x);
        const Tensor& Wt = val(W);
        const Tensor& B = val(b);
        if (X.ndim() != 2 || Wt.ndim() != 2 || X.dim(1) != Wt.dim(0) || B.numel() != Wt.dim(1))
            throw std::invalid_argument("linear: incompatible shapes");
        const int64_t m = X.dim(0), kk = X.dim(1), n = Wt.dim(1);
        Tensor out({m, n});
        for (int64_t i = 0; i < m; ++i) {
            double* orow = &out.data[static_cast<size_t>(i * n)];
            for (int64_t j = 0; j < n; ++j)
                orow[j] = B.data[static_cast<size_t>(j)];
            for (int64_t k = 0; k < kk; ++k) {
                const double xv = X.data[static_cast<size_t>(i * kk + k)];
                if (xv == 0.0) continue;
                const double* wrow = &Wt.data[static_cast<size_t>(k * n)];
                for (int64_t j = 0; j < n; ++j)
                    orow[j] += xv * wrow[j];
            }
        }
        return push(std::move(out), rg(x) || rg(W) || rg(b), [x, W, b, m, kk, n](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            const auto& xv = t.val(x).data;
            const auto& wv = t.val(W).data;
            t.accumulate(x, [&](std::vector<double>& dx) {
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t k = 0; k < kk; ++k) {
                        double s = 0.0;
                        for (int64_t j = 0; j < n; ++j)
                            s += g[static_cast<size_t>(i * n + j)] * wv[static_cast<size_t>(k * n + j)];
                        dx[static_cast<size_t>(i * kk + k)] += s;
                    }
            });
            t.accumulate(W, [&](std::vector<double>& dw) {
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t k = 0; k < kk; ++k) {
                        const double xik = xv[static_cast<size_t>(i * kk + k)];
                        if (xik == 0.0) continue;
                        for (int64_t j = 0; j < n; ++j)
                            dw[static_cast<size_t>(k * n + j)] += xik * g[static_cast<size_t>(i * n + j)];
                    }
            });
            t.accumulate(b, [&](std::vector<double>& db) {
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j)
                        db[static_cast<size_t>(j)] += g[static_cast<size_t>(i * n + j)];
            });
        });
    }

    // ---- shape ops ----

    Var reshape(Var a, std::vector<int64_t> new_shape) {
        const Tensor& A = val(a);
        if (Tensor::count(new_shape) != A.numel())
            throw std::invalid_argument("reshape: element count mismatch");
        Tensor out(std::move(new_shape), A.data);
        return push(std::move(out), rg(a), [a](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            t.accumulate(a, [&](std::vector<double>& da) {
                for (size_t k = 0; k < g.size(); ++k) da[k] += g[k];
            });
        });
    }

    Var slice_rows(Var a, int64_t r0, int64_t r1) {
        const Tensor& A = val(a);
        if (A.ndim() != 2 || r0 < 0 || r1 > A.dim(0) || r0 >= r1)
            throw std::invalid_argument("slice_rows: bad range");
        const int64_t n = A.dim(1);
        Tensor out({r1 - r0, n});
        std::copy(A.data.begin() + r0 * n, A.data.begin() + r1 * n, out.data.begin());
        return push(std::move(out), rg(a), [a, r0, r1, n](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            t.accumulate(a, [&](std::vector<double>& da) {
                for (int64_t i = 0; i < (r1 - r0) * n; ++i)
                    da[static_cast<size_t>(r0 * n + i)] += g[static_cast<size_t>(i)];
            });
        });
    }

    Var slice_cols(Var a, int64_t c0, int64_t c1) {
        const Tensor& A = val(a);
        if (A.ndim() != 2 || c0 < 0 || c1 > A.dim(1) || c0 >= c1)
            throw std::invalid_argument("slice_cols: bad range");
        const int64_t m = A.dim(0), n = A.dim(1), w = c1 - c0;
        Tensor out({m, w});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < w; ++j)
                out.data[static_cast<size_t>(i * w + j)] = A.data[static_cast<size_t>(i * n + c0 + j)];
        return push(std::move(out), rg(a), [a, c0, m, n, w](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            t.accumulate(a, [&](std::vector<double>& da) {
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < w; ++j)
                        da[static_cast<size_t>(i * n + c0 + j)] += g[static_cast<size_t>(i * w + j)];
            });
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty())
            throw std::invalid_argument("concat_cols: no parts");
        const int64_t m = val(parts[0]).dim(0);
        int64_t total = 0;
        bool any_rg = false;
        std::vector<int64_t> widths;
        for (Var p : parts) {
            const Tensor& P = val(p);
            if (P.ndim() != 2 || P.dim(0) != m)
                throw std::invalid_argument("concat_cols: row mismatch");
            widths.push_back(P.dim(1));
            total += P.dim(1);
            any_rg = any_rg || rg(p);
        }
        Tensor out({m, total});
        int64_t off = 0;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            const Tensor& P = val(parts[pi]);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < widths[pi]; ++j)
                    out.data[static_cast<size_t>(i * total + off + j)] =
                        P.data[static_cast<size_t>(i * widths[pi] + j)];
            off += widths[pi];
        }
        std::vector<Var> ps = parts;
        return push(std::move(out), any_rg, [ps, widths, m, total](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            int64_t off2 = 0;
            for (size_t pi = 0; pi < ps.size(); ++pi) {
                const int64_t w = widths[pi];
                const int64_t o = off2;
                t.accumulate(ps[pi], [&](std::vector<double>& dp) {
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < w; ++j)
                            dp[static_cast<size_t>(i * w + j)] += g[static_cast<size_t>(i * total + o + j)];
                });
                off2 += w;
            }
        });
    }

    // ---- rowwise ops ----

    Var softmax_rows(Var a) {
        const Tensor& A = val(a);
        if (A.ndim() != 2)
            throw std::invalid_argument("softmax_rows: need 2-d tensor");
        const int64_t m = A.dim(0), n = A.dim(1);
        Tensor out({m, n});
        for (int64_t i = 0; i < m; ++i) {
            const double* row = &A.data[static_cast<size_t>(i * n)];
            double mx = row[0];
            for (int64_t j = 1; j < n; ++j)
                mx = std::max(mx, row[j]);
            double sum = 0.0;
            double* orow = &out.data[static_cast<size_t>(i * n)];
            for (int64_t j = 0; j < n; ++j) {
                orow[j] = std::exp(row[j] - mx);
                sum += orow[j];
            }
            for (int64_t j = 0; j < n; ++j)
                orow[j] /= sum;
        }
        return push(std::move(out), rg(a), [a, m, n](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            const auto& y = t.node_at(self).value.data;
            t.accumulate(a, [&](std::vector<double>& da) {
                for (int64_t i = 0; i < m; ++i) {
                    double dot = 0.0;
                    for (int64_t j = 0; j < n; ++j)
                        dot += g[static_cast<size_t>(i * n + j)] * y[static_cast<size_t>(i * n + j)];
                    for (int64_t j = 0; j < n; ++j) {
                        const size_t k = static_cast<size_t>(i * n + j);
                        da[k] += y[k] * (g[k] - dot);
                    }
                }
            });
        });
    }

    Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5) {
        const Tensor& X = val(x);
        if (X.ndim() != 2)
            throw std::invalid_argument("layer_norm_rows: need 2-d tensor");
        const int64_t m = X.dim(0), n = X.dim(1);
        if (val(gamma).numel() != n || val(beta).numel() != n)
            throw std::invalid_argument("layer_norm_rows: gamma/beta size mismatch");
        Tensor out({m, n});
        const auto& gv = val(gamma).data;
        const auto& bv = val(beta).data;
        for (int64_t i = 0; i < m; ++i) {
            const double* row = &X.data[static_cast<size_t>(i * n)];
            double mean = 0.0;
            for (int64_t j = 0; j < n; ++j)
                mean += row[j];
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (int64_t j = 0; j < n; ++j)
                var += (row[j] - mean) * (row[j] - mean);
            var /= static_cast<double>(n);
            const double inv = 1.0 / std::sqrt(var + eps);
            double* orow = &out.data[static_cast<size_t>(i * n)];
            for (int64_t j = 0; j < n; ++j)
                orow[j] = gv[static_cast<size_t>(j)] * (row[j] - mean) * inv + bv[static_cast<size_t>(j)];
        }
        return push(std::move(out), rg(x) || rg(gamma) || rg(beta),
                    [x, gamma, beta, eps, m, n](Tape& t, int32_t self) {
                        const auto& g = t.node_at(self).grad.data;
                        const auto& xv = t.val(x).data;
                        const auto& gv = t.val(gamma).data;
                        for (int64_t i = 0; i < m; ++i) {
                            const double* row = &xv[static_cast<size_t>(i * n)];
                            double mean = 0.0;
                            for (int64_t j = 0; j < n; ++j)
                                mean += row[j];
                            mean /= static_cast<double>(n);
                            double var = 0.0;
                            for (int64_t j = 0; j < n; ++j)
                                var += (row[j] - mean) * (row[j] - mean);
                            var /= static_cast<double>(n);
                            const double inv = 1.0 / std::sqrt(var + eps);

                            // dxhat, then the standard normalization adjoint per row
                            double sum_dxhat = 0.0, sum_dxhat_xc = 0.0;
                            for (int64_t j = 0; j < n; ++j) {
                                const double dxh = g[static_cast<size_t>(i * n + j)] * gv[static_cast<size_t>(j)];
                                sum_dxhat += dxh;
                                sum_dxhat_xc += dxh * (row[j] - mean);
                            }
                            t.accumulate(x, [&](std::vector<double>& dx) {
                                for (int64_t j = 0; j < n; ++j) {
                                    const double dxh = g[static_cast<size_t>(i * n + j)] * gv[static_cast<size_t>(j)];
                                    const double xc = row[j] - mean;
                                    dx[static_cast<size_t>(i * n + j)] +=
                                        inv * (dxh - sum_dxhat / static_cast<double>(n) -
                                               xc * inv * inv * sum_dxhat_xc / static_cast<double>(n));
                                }
                            });
                            t.accumulate(gamma, [&](std::vector<double>& dg) {
                                for (int64_t j = 0; j < n; ++j)
                                    dg[static_cast<size_t>(j)] += g[static_cast<size_t>(i * n + j)] *
                                                                  (row[j] - mean) * inv;
                            });
                            t.accumulate(beta, [&](std::vector<double>& db) {
                                for (int64_t j = 0; j < n; ++j)
                                    db[static_cast<size_t>(j)] += g[static_cast<size_t>(i * n + j)];
                            });
                        }
                    });
    }

    // Mean over rows: [m,n] -> [1,n].
    Var mean_rows(Var a) {
        const Tensor& A = val(a);
        if (A.ndim() != 2)
            throw std::invalid_argument("mean_rows: need 2-d tensor");
        const int64_t m = A.dim(0), n = A.dim(1);
        Tensor out({1, n});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j)
                out.data[static_cast<size_t>(j)] += A.data[static_cast<size_t>(i * n + j)];
        for (int64_t j = 0; j < n; ++j)
            out.data[static_cast<size_t>(j)] /= static_cast<double>(m);
        return push(std::move(out), rg(a), [a, m, n](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            t.accumulate(a, [&](std::vector<double>& da) {
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j)
                        da[static_cast<size_t>(i * n + j)] += g[static_cast<size_t>(j)] / static_cast<double>(m);
            });
        });
    }

    // ---- convolution ----

    // x[N,C,H,W], W[F,C,kh,kw], b[F]; out[N,F,H',W'] with
    // H' = floor((H + 2p - kh)/s) + 1.
    Var conv2d(Var x, Var W, Var b, int stride, int pad) {
        const Tensor& X = val(x);
        const Tensor& K = val(W);
        if (X.ndim() != 4 || K.ndim() != 4 || X.dim(1) != K.dim(1))
            throw std::invalid_argument("conv2d: incompatible shapes");
        const int64_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
        const int64_t F = K.dim(0), kh = K.dim(2), kw = K.dim(3);
        if (val(b).numel() != F)
            throw std::invalid_argument("conv2d: bias size mismatch");
        const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
        const int64_t Wo = (Wd + 2 * pad - kw) / stride + 1;
        Tensor out({N, F, Ho, Wo});
        const auto& bv = val(b).data;
        for (int64_t nn = 0; nn < N; ++nn)
            for (int64_t f = 0; f < F; ++f)
                for (int64_t oh = 0; oh < Ho; ++oh)
                    for (int64_t ow = 0; ow < Wo; ++ow) {
                        double s = bv[static_cast<size_t>(f)];
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t u = 0; u < kh; ++u) {
                                const int64_t ih = oh * stride - pad + u;
                                if (ih < 0 || ih >= H) continue;
                                for (int64_t w2 = 0; w2 < kw; ++w2) {
                                    const int64_t iw = ow * stride - pad + w2;
                                    if (iw < 0 || iw >= Wd) continue;
                                    s += X.data[static_cast<size_t>(((nn * C + c) * H + ih) * Wd + iw)] *
                                         K.data[static_cast<size_t>(((f * C + c) * kh + u) * kw + w2)];
                                }
                            }
                        out.data[static_cast<size_t>(((nn * F + f) * Ho + oh) * Wo + ow)] = s;
                    }
        return push(std::move(out), rg(x) || rg(W) || rg(b),
                    [x, W, b, stride, pad, N, C, H, Wd, F, kh, kw, Ho, Wo](Tape& t, int32_t self) {
                        const auto& g = t.node_at(self).grad.data;
                        const auto& xv = t.val(x).data;
                        const auto& kv = t.val(W).data;
                        const bool need_x = t.rg(x), need_w = t.rg(W), need_b = t.rg(b);
                        std::vector<double>* dx = need_x ? &t.gbuf(x.id).data : nullptr;
                        std::vector<double>* dw = need_w ? &t.gbuf(W.id).data : nullptr;
                        std::vector<double>* db = need_b ? &t.gbuf(b.id).data : nullptr;
                        for (int64_t nn = 0; nn < N; ++nn)
                            for (int64_t f = 0; f < F; ++f)
                                for (int64_t oh = 0; oh < Ho; ++oh)
                                    for (int64_t ow = 0; ow < Wo; ++ow) {
                                        const double gv =
                                            g[static_cast<size_t>(((nn * F + f) * Ho + oh) * Wo + ow)];
                                        if (gv == 0.0) continue;
                                        if (db) (*db)[static_cast<size_t>(f)] += gv;
                                        for (int64_t c = 0; c < C; ++c)
                                            for (int64_t u = 0; u < kh; ++u) {
                                                const int64_t ih = oh * stride - pad + u;
                                                if (ih < 0 || ih >= H) continue;
                                                for (int64_t w2 = 0; w2 < kw; ++w2) {
                                                    const int64_t iw = ow * stride - pad + w2;
                                                    if (iw < 0 || iw >= Wd) continue;
                                                    const size_t xi = static_cast<size_t>(
                                                        ((nn * C + c) * H + ih) * Wd + iw);
                                                    const size_t ki = static_cast<size_t>(
                                                        ((f * C + c) * kh + u) * kw + w2);
                                                    if (dx) (*dx)[xi] += gv * kv[ki];
                                                    if (dw) (*dw)[ki] += gv * xv[xi];
                                                }
                                            }
                                    }
                    });
    }

    // x[N,F,H,W], W[F,C,kh,kw], b[C]; out[N,C,H',W'] with
    // H' = (H-1)*s - 2p + kh + out_pad. Scatter form of the conv adjoint.
    Var conv_transpose2d(Var x, Var W, Var b, int stride, int pad, int out_pad_h, int out_pad_w) {
        const Tensor& X = val(x);
        const Tensor& K = val(W);
        if (X.ndim() != 4 || K.ndim() != 4 || X.dim(1) != K.dim(0))
            throw std::invalid_argument("conv_transpose2d: incompatible shapes");
        const int64_t N = X.dim(0), F = X.dim(1), H = X.dim(2), Wd = X.dim(3);
        const int64_t C = K.dim(1), kh = K.dim(2), kw = K.dim(3);
        if (val(b).numel() != C)
            throw std::invalid_argument("conv_transpose2d: bias size mismatch");
        const int64_t Ho = (H - 1) * stride - 2 * pad + kh + out_pad_h;
        const int64_t Wo = (Wd - 1) * stride - 2 * pad + kw + out_pad_w;
        if (Ho < 1 || Wo < 1)
            throw std::invalid_argument("conv_transpose2d: non-positive output size");
        Tensor out({N, C, Ho, Wo});
        const auto& bv = val(b).data;
        for (int64_t nn = 0; nn < N; ++nn)
            for (int64_t c = 0; c < C; ++c) {
                double* base = &out.data[static_cast<size_t>((nn * C + c) * Ho * Wo)];
                for (int64_t k = 0; k < Ho * Wo; ++k)
                    base[k] = bv[static_cast<size_t>(c)];
            }
        for (int64_t nn = 0; nn < N; ++nn)
            for (int64_t f = 0; f < F; ++f)
                for (int64_t ih = 0; ih < H; ++ih)
                    for (int64_t iw = 0; iw < Wd; ++iw) {
                        const double xv =
                            X.data[static_cast<size_t>(((nn * F + f) * H + ih) * Wd + iw)];
                        if (xv == 0.0) continue;
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t u = 0; u < kh; ++u) {
                                const int64_t oh = ih * stride - pad + u;
                                if (oh < 0 || oh >= Ho) continue;
                                for (int64_t w2 = 0; w2 < kw; ++w2) {
                                    const int64_t ow = iw * stride - pad + w2;
                                    if (ow < 0 || ow >= Wo) continue;
                                    out.data[static_cast<size_t>(((nn * C + c) * Ho + oh) * Wo + ow)] +=
                                        xv * K.data[static_cast<size_t>(((f * C + c) * kh + u) * kw + w2)];
                                }
                            }
                    }
        return push(std::move(out), rg(x) || rg(W) || rg(b),
                    [x, W, b, stride, pad, N, F, H, Wd, C, kh, kw, Ho, Wo](Tape& t, int32_t self) {
                        const auto& g = t.node_at(self).grad.data;
                        const auto& xv = t.val(x).data;
                        const auto& kv = t.val(W).data;
                        const bool need_x = t.rg(x), need_w = t.rg(W), need_b = t.rg(b);
                        std::vector<double>* dx = need_x ? &t.gbuf(x.id).data : nullptr;
                        std::vector<double>* dw = need_w ? &t.gbuf(W.id).data : nullptr;
                        std::vector<double>* db = need_b ? &t.gbuf(b.id).data : nullptr;
                        if (db)
                            for (int64_t nn = 0; nn < N; ++nn)
                                for (int64_t c = 0; c < C; ++c) {
                                    const double* base =
                                        &g[static_cast<size_t>((nn * C + c) * Ho * Wo)];
                                    double s = 0.0;
                                    for (int64_t k = 0; k < Ho * Wo; ++k)
                                        s += base[k];
                                    (*db)[static_cast<size_t>(c)] += s;
                                }
                        for (int64_t nn = 0; nn < N; ++nn)
                            for (int64_t f = 0; f < F; ++f)
                                for (int64_t ih = 0; ih < H; ++ih)
                                    for (int64_t iw = 0; iw < Wd; ++iw) {
                                        const size_t xi =
                                            static_cast<size_t>(((nn * F + f) * H + ih) * Wd + iw);
                                        double acc = 0.0;
                                        for (int64_t c = 0; c < C; ++c)
                                            for (int64_t u = 0; u < kh; ++u) {
                                                const int64_t oh = ih * stride - pad + u;
                                                if (oh < 0 || oh >= Ho) continue;
                                                for (int64_t w2 = 0; w2 < kw; ++w2) {
                                                    const int64_t ow = iw * stride - pad + w2;
                                                    if (ow < 0 || ow >= Wo) continue;
                                                    const size_t gi = static_cast<size_t>(
                                                        ((nn * C + c) * Ho + oh) * Wo + ow);
                                                    const size_t ki = static_cast<size_t>(
                                                        ((f * C + c) * kh + u) * kw + w2);
                                                    if (dx) acc += g[gi] * kv[ki];
                                                    if (dw) (*dw)[ki] += g[gi] * xv[xi];
                                                }
                                            }
                                        if (dx) (*dx)[xi] += acc;
                                    }
                    });
    }

    // x[N,C,H,W], gamma[C], beta[C]; normalizes over each (sample, group).
    Var group_norm(Var x, Var gamma, Var beta, int groups, double eps = 1e-5) {
        const Tensor& X = val(x);
        if (X.ndim() != 4)
            throw std::invalid_argument("group_norm: need 4-d tensor");
        const int64_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
        if (groups < 1 || C % groups != 0)
            throw std::invalid_argument("group_norm: groups must divide channels");
        if (val(gamma).numel() != C || val(beta).numel() != C)
            throw std::invalid_argument("group_norm: gamma/beta size mismatch");
        const int64_t cg = C / groups;
        const int64_t gsz = cg * H * Wd;
        Tensor out(X.shape);
        const auto& gv = val(gamma).data;
        const auto& bv = val(beta).data;
        for (int64_t nn = 0; nn < N; ++nn)
            for (int64_t g0 = 0; g0 < groups; ++g0) {
                const int64_t cbase = g0 * cg;
                double mean = 0.0;
                for (int64_t c = 0; c < cg; ++c) {
                    const double* base =
                        &X.data[static_cast<size_t>((nn * C + cbase + c) * H * Wd)];
                    for (int64_t k = 0; k < H * Wd; ++k)
                        mean += base[k];
                }
                mean /= static_cast<double>(gsz);
                double var = 0.0;
                for (int64_t c = 0; c < cg; ++c) {
                    const double* base =
                        &X.data[static_cast<size_t>((nn * C + cbase + c) * H * Wd)];
                    for (int64_t k = 0; k < H * Wd; ++k)
                        var += (base[k] - mean) * (base[k] - mean);
                }
                var /= static_cast<double>(gsz);
                const double inv = 1.0 / std::sqrt(var + eps);
                for (int64_t c = 0; c < cg; ++c) {
                    const int64_t ch = cbase + c;
                    const double* base = &X.data[static_cast<size_t>((nn * C + ch) * H * Wd)];
                    double* obase = &out.data[static_cast<size_t>((nn * C + ch) * H * Wd)];
                    for (int64_t k = 0; k < H * Wd; ++k)
                        obase[k] = gv[static_cast<size_t>(ch)] * (base[k] - mean) * inv +
                                   bv[static_cast<size_t>(ch)];
                }
            }
        return push(std::move(out), rg(x) || rg(gamma) || rg(beta),
                    [x, gamma, beta, groups, eps, N, C, H, Wd](Tape& t, int32_t self) {
                        const auto& g = t.node_at(self).grad.data;
                        const auto& xv = t.val(x).data;
                        const auto& gv = t.val(gamma).data;
                        const int64_t cg = C / groups;
                        const int64_t gsz = cg * H * Wd;
                        const int64_t hw = H * Wd;
                        for (int64_t nn = 0; nn < N; ++nn)
                            for (int64_t g0 = 0; g0 < groups; ++g0) {
                                const int64_t cbase = g0 * cg;
                                double mean = 0.0, var = 0.0;
                                for (int64_t c = 0; c < cg; ++c) {
                                    const double* base =
                                        &xv[static_cast<size_t>((nn * C + cbase + c) * hw)];
                                    for (int64_t k = 0; k < hw; ++k)
                                        mean += base[k];
                                }
                                mean /= static_cast<double>(gsz);
                                for (int64_t c = 0; c < cg; ++c) {
                                    const double* base =
                                        &xv[static_cast<size_t>((nn * C + cbase + c) * hw)];
                                    for (int64_t k = 0; k < hw; ++k)
                                        var += (base[k] - mean) * (base[k] - mean);
                                }
                                var /= static_cast<double>(gsz);
                                const double inv = 1.0 / std::sqrt(var + eps);

                                double sum_dxhat = 0.0, sum_dxhat_xc = 0.0;
                                for (int64_t c = 0; c < cg; ++c) {
                                    const int64_t ch = cbase + c;
                                    const double* base = &xv[static_cast<size_t>((nn * C + ch) * hw)];
                                    const double* gbase = &g[static_cast<size_t>((nn * C + ch) * hw)];
                                    for (int64_t k = 0; k < hw; ++k) {
                                        const double dxh = gbase[k] * gv[static_cast<size_t>(ch)];
                                        sum_dxhat += dxh;
                                        sum_dxhat_xc += dxh * (base[k] - mean);
                                    }
                                }
                                t.accumulate(x, [&](std::vector<double>& dx) {
                                    for (int64_t c = 0; c < cg; ++c) {
                                        const int64_t ch = cbase + c;
                                        const double* base =
                                            &xv[static_cast<size_t>((nn * C + ch) * hw)];
                                        const double* gbase =
                                            &g[static_cast<size_t>((nn * C + ch) * hw)];
                                        double* dbase = &dx[static_cast<size_t>((nn * C + ch) * hw)];
                                        for (int64_t k = 0; k < hw; ++k) {
                                            const double dxh = gbase[k] * gv[static_cast<size_t>(ch)];
                                            const double xc = base[k] - mean;
                                            dbase[k] += inv * (dxh - sum_dxhat / static_cast<double>(gsz) -
                                                               xc * inv * inv * sum_dxhat_xc /
                                                                   static_cast<double>(gsz));
                                        }
                                    }
                                });
                                t.accumulate(gamma, [&](std::vector<double>& dg) {
                                    for (int64_t c = 0; c < cg; ++c) {
                                        const int64_t ch = cbase + c;
                                        const double* base =
                                            &xv[static_cast<size_t>((nn * C + ch) * hw)];
                                        const double* gbase =
                                            &g[static_cast<size_t>((nn * C + ch) * hw)];
                                        double s = 0.0;
                                        for (int64_t k = 0; k < hw; ++k)
                                            s += gbase[k] * (base[k] - mean) * inv;
                                        dg[static_cast<size_t>(ch)] += s;
                                    }
                                });
                                t.accumulate(beta, [&](std::vector<double>& db) {
                                    for (int64_t c = 0; c < cg; ++c) {
                                        const int64_t ch = cbase + c;
                                        const double* gbase =
                                            &g[static_cast<size_t>((nn * C + ch) * hw)];
                                        double s = 0.0;
                                        for (int64_t k = 0; k < hw; ++k)
                                            s += gbase[k];
                                        db[static_cast<size_t>(ch)] += s;
                                    }
                                });
                            }
                    });
    }

    // ---- channel ops on [C,H,W] / [N,C,H,W] ----

    // Sigmoid on one channel, identity on the rest. x is [C,H,W] or [N,C,H,W].
    Var sigmoid_channel(Var x, int channel) {
        const Tensor& X = val(x);
        const bool batched = X.ndim() == 4;
        if (!batched && X.ndim() != 3)
            throw std::invalid_argument("sigmoid_channel: need 3-d or 4-d tensor");
        const int64_t N = batched ? X.dim(0) : 1;
        const int64_t C = batched ? X.dim(1) : X.dim(0);
        const int64_t hw = batched ? X.dim(2) * X.dim(3) : X.dim(1) * X.dim(2);
        if (channel < 0 || channel >= C)
            throw std::invalid_argument("sigmoid_channel: channel out of range");
        Tensor out = X;
        for (int64_t nn = 0; nn < N; ++nn) {
            double* base = &out.data[static_cast<size_t>((nn * C + channel) * hw)];
            for (int64_t k = 0; k < hw; ++k)
                base[k] = 1.0 / (1.0 + std::exp(-base[k]));
        }
        return push(std::move(out), rg(x), [x, channel, N, C, hw](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            const auto& y = t.node_at(self).value.data;
            t.accumulate(x, [&](std::vector<double>& dx) {
                for (size_t k = 0; k < g.size(); ++k)
                    dx[k] += g[k];
                // overwrite the sigmoid channel with the chained derivative
                for (int64_t nn = 0; nn < N; ++nn) {
                    const size_t base = static_cast<size_t>((nn * C + channel) * hw);
                    for (int64_t k = 0; k < hw; ++k) {
                        const size_t idx = base + static_cast<size_t>(k);
                        dx[idx] += g[idx] * (y[idx] * (1.0 - y[idx]) - 1.0);
                    }
                }
            });
        });
    }

    // [C,H,W] -> [H,W]
    Var slice_channel(Var x, int channel) {
        const Tensor& X = val(x);
        if (X.ndim() != 3)
            throw std::invalid_argument("slice_channel: need 3-d tensor");
        const int64_t C = X.dim(0), H = X.dim(1), Wd = X.dim(2);
        if (channel < 0 || channel >= C)
            throw std::invalid_argument("slice_channel: channel out of range");
        Tensor out({H, Wd});
        const size_t base = static_cast<size_t>(channel) * H * Wd;
        std::copy(X.data.begin() + base, X.data.begin() + base + H * Wd, out.data.begin());
        return push(std::move(out), rg(x), [x, channel, H, Wd](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            t.accumulate(x, [&](std::vector<double>& dx) {
                const size_t base = static_cast<size_t>(channel) * H * Wd;
                for (size_t k = 0; k < g.size(); ++k)
                    dx[base + k] += g[k];
            });
        });
    }

    // ---- finite-difference stencils on [H,W] fields ----

    // (next - now) / dt
    Var fd_ddt(Var now, Var next, double dt_seconds) {
        check_same(now, next, "fd_ddt");
        Tensor out = val(next);
        const auto& a = val(now).data;
        for (size_t k = 0; k < out.data.size(); ++k)
            out.data[k] = (out.data[k] - a[k]) / dt_seconds;
        return push(std::move(out), rg(now) || rg(next), [now, next, dt_seconds](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            t.accumulate(next, [&](std::vector<double>& dn) {
                for (size_t k = 0; k < g.size(); ++k) dn[k] += g[k] / dt_seconds;
            });
            t.accumulate(now, [&](std::vector<double>& dn) {
                for (size_t k = 0; k < g.size(); ++k) dn[k] -= g[k] / dt_seconds;
            });
        });
    }

    // u*dq/dx + v*dq/dy with forward differences; last row/column zero.
    // u, v, q may alias the same Var.
    Var fd_convection(Var u, Var v, Var q, double dx) {
        check_same(u, q, "fd_convection");
        check_same(v, q, "fd_convection");
        const Tensor& Q = val(q);
        if (Q.ndim() != 2)
            throw std::invalid_argument("fd_convection: need 2-d field");
        const int64_t H = Q.dim(0), W = Q.dim(1);
        const auto& uv = val(u).data;
        const auto& vv = val(v).data;
        const auto& qv = Q.data;
        Tensor out({H, W});
        for (int64_t i = 0; i + 1 < H; ++i)
            for (int64_t j = 0; j + 1 < W; ++j) {
                const size_t k = static_cast<size_t>(i * W + j);
                out.data[k] = uv[k] * (qv[k + 1] - qv[k]) / dx +
                              vv[k] * (qv[static_cast<size_t>((i + 1) * W + j)] - qv[k]) / dx;
            }
        return push(std::move(out), rg(u) || rg(v) || rg(q), [u, v, q, dx, H, W](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            const auto& uv = t.val(u).data;
            const auto& vv = t.val(v).data;
            const auto& qv = t.val(q).data;
            t.accumulate(u, [&](std::vector<double>& du) {
                for (int64_t i = 0; i + 1 < H; ++i)
                    for (int64_t j = 0; j + 1 < W; ++j) {
                        const size_t k = static_cast<size_t>(i * W + j);
                        du[k] += g[k] * (qv[k + 1] - qv[k]) / dx;
                    }
            });
            t.accumulate(v, [&](std::vector<double>& dv) {
                for (int64_t i = 0; i + 1 < H; ++i)
                    for (int64_t j = 0; j + 1 < W; ++j) {
                        const size_t k = static_cast<size_t>(i * W + j);
                        dv[k] += g[k] * (qv[static_cast<size_t>((i + 1) * W + j)] - qv[k]) / dx;
                    }
            });
            t.accumulate(q, [&](std::vector<double>& dq) {
                for (int64_t i = 0; i + 1 < H; ++i)
                    for (int64_t j = 0; j + 1 < W; ++j) {
                        const size_t k = static_cast<size_t>(i * W + j);
                        const double gk = g[k];
                        dq[k + 1] += gk * uv[k] / dx;
                        dq[k] -= gk * (uv[k] + vv[k]) / dx;
                        dq[static_cast<size_t>((i + 1) * W + j)] += gk * vv[k] / dx;
                    }
            });
        });
    }

    // nu * 5-point Laplacian; outer ring zero. The arithmetic matches the
    // physics module expression term for term, so identical inputs give
    // bit-identical outputs on both paths.
    Var fd_diffusion(Var q, double dx, double nu) {
        const Tensor& Q = val(q);
        if (Q.ndim() != 2)
            throw std::invalid_argument("fd_diffusion: need 2-d field");
        const int64_t H = Q.dim(0), W = Q.dim(1);
        const double inv_dx2 = 1.0 / (dx * dx);
        const double c = nu * inv_dx2;
        const auto& qv = Q.data;
        Tensor out({H, W});
        for (int64_t i = 1; i + 1 < H; ++i)
            for (int64_t j = 1; j + 1 < W; ++j) {
                const size_t k = static_cast<size_t>(i * W + j);
                out.data[k] = nu *
                              (qv[k + 1] + qv[k - 1] + qv[k + static_cast<size_t>(W)] +
                               qv[k - static_cast<size_t>(W)] - 4.0 * qv[k]) *
                              inv_dx2;
            }
        return push(std::move(out), rg(q), [q, c, H, W](Tape& t, int32_t self) {
            const auto& g = t.node_at(self).grad.data;
            t.accumulate(q, [&](std::vector<double>& dq) {
                for (int64_t i = 1; i + 1 < H; ++i)
                    for (int64_t j = 1; j + 1 < W; ++j) {
                        const size_t k = static_cast<size_t>(i * W + j);
                        const double gc = g[k] * c;
                        dq[k + 1] += gc;
                        dq[k - 1] += gc;
                        dq[k + static_cast<size_t>(W)] += gc;
                        dq[k - static_cast<size_t>(W)] += gc;
                        dq[k] -= 4.0 * gc;
                    }
            });
        });
    }

    // ---- reductions / losses; all return scalar [1] nodes ----

    // -(1/N) * sum(p*ln(c) + (1-p)*ln(1-c)), c = clamp(pred, eps, 1-eps).
    Var bce_mean(Var pred, Var label, double eps = 1e-7) {
        check_same(pred, label, "bce_mean");
        const auto& pv = val(pred).data;
        const auto& lv = val(label).data;
        const double n = static_cast<double>(pv.size());
        double sum = 0.0;
        for (size_t k = 0; k < pv.size(); ++k) {
            const double c = std::min(std::max(pv[k], eps), 1.0 - eps);
            sum += lv[k] * std::log(c) + (1.0 - lv[k]) * std::log(1.0 - c);
        }
        Tensor out({1});
        out.data[0] = -sum / n;
        return push(std::move(out), rg(pred) || rg(label), [pred, label, eps, n](Tape& t, int32_t self) {
            const double g = t.node_at(self).grad.data[0];
            const auto& pv = t.val(pred).data;
            const auto& lv = t.val(label).data;
            t.accumulate(pred, [&](std::vector<double>& dp) {
                for (size_t k = 0; k < pv.size(); ++k) {
                    if (pv[k] <= eps || pv[k] >= 1.0 - eps) continue;  // clamped: flat
                    dp[k] += g * (-(lv[k] / pv[k]) + (1.0 - lv[k]) / (1.0 - pv[k])) / n;
                }
            });
        });
    }

    // Mean squared difference over unmasked cells (all cells when mask empty).
    Var mse_mean(Var a, Var b, std::vector<uint8_t> mask = {}) {
        check_same(a, b, "mse_mean");
        const auto& av = val(a).data;
        const auto& bv = val(b).data;
        const double n = masked_count(mask, av.size(), "mse_mean");
        double sum = 0.0;
        for (size_t k = 0; k < av.size(); ++k)
            if (mask.empty() || mask[k])
                sum += (av[k] - bv[k]) * (av[k] - bv[k]);
        Tensor out({1});
        out.data[0] = sum / n;
        return push(std::move(out), rg(a) || rg(b),
                    [a, b, mask = std::move(mask), n](Tape& t, int32_t self) {
                        const double g = t.node_at(self).grad.data[0];
                        const auto& av = t.val(a).data;
                        const auto& bv = t.val(b).data;
                        t.accumulate(a, [&](std::vector<double>& da) {
                            for (size_t k = 0; k < av.size(); ++k)
                                if (mask.empty() || mask[k])
                                    da[k] += g * 2.0 * (av[k] - bv[k]) / n;
                        });
                        t.accumulate(b, [&](std::vector<double>& db) {
                            for (size_t k = 0; k < av.size(); ++k)
                                if (mask.empty() || mask[k])
                                    db[k] -= g * 2.0 * (av[k] - bv[k]) / n;
                        });
                    });
    }

    Var mae_mean(Var a, Var b, std::vector<uint8_t> mask = {}) {
        check_same(a, b, "mae_mean");
        const auto& av = val(a).data;
        const auto& bv = val(b).data;
        const double n = masked_count(mask, av.size(), "mae_mean");
        double sum = 0.0;
        for (size_t k = 0; k < av.size(); ++k)
            if (mask.empty() || mask[k])
                sum += std::abs(av[k] - bv[k]);
        Tensor out({1});
        out.data[0] = sum / n;
        return push(std::move(out), rg(a) || rg(b),
                    [a, b, mask = std::move(mask), n](Tape& t, int32_t self) {
                        const double g = t.node_at(self).grad.data[0];
                        const auto& av = t.val(a).data;
                        const auto& bv = t.val(b).data;
                        auto sgn = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
                        t.accumulate(a, [&](std::vector<double>& da) {
                            for (size_t k = 0; k < av.size(); ++k)
                                if (mask.empty() || mask[k])
                                    da[k] += g * sgn(av[k] - bv[k]) / n;
                        });
                        t.accumulate(b, [&](std::vector<double>& db) {
                            for (size_t k = 0; k < av.size(); ++k)
                                if (mask.empty() || mask[k])
                                    db[k] -= g * sgn(av[k] - bv[k]) / n;
                        });
                    });
    }

    // Sum of scalar nodes.
    Var sum_scalars(const std::vector<Var>& terms) {
        if (terms.empty())
            throw std::invalid_argument("sum_scalars: no terms");
        double s = 0.0;
        bool any_rg = false;
        for (Var v : terms) {
            if (val(v).numel() != 1)
                throw std::invalid_argument("sum_scalars: non-scalar term");
            s += val(v).data[0];
            any_rg = any_rg || rg(v);
        }
        Tensor out({1});
        out.data[0] = s;
        std::vector<Var> ts = terms;
        return push(std::move(out), any_rg, [ts](Tape& t, int32_t self) {
            const double g = t.node_at(self).grad.data[0];
            for (Var v : ts)
                t.accumulate(v, [&](std::vector<double>& dv) { dv[0] += g; });
        });
    }

    // ---- internals (public for op closures) ----

    bool rg(Var a) const { return node(a).requires_grad; }

    Tensor& gbuf(int32_t id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.data.empty())
            n.grad = Tensor(n.value.shape);
        return n.grad;
    }

    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Tape&, int32_t)> backprop;
    };

    Node& node_at(int32_t id) { return nodes_[static_cast<size_t>(id)]; }

    template <typename Fn>
    void accumulate(Var parent, Fn&& fn) {
        if (!rg(parent))
            return;
        fn(gbuf(parent.id).data);
    }

private:
    std::vector<Node> nodes_;

    const Node& node(Var v) const {
        if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
            throw std::invalid_argument("Tape: invalid Var");
        return nodes_[static_cast<size_t>(v.id)];
    }

    void check_same(Var a, Var b, const char* op) const {
        if (!val(a).same_shape(val(b)))
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + val(a).shape_str() +
                                        " vs " + val(b).shape_str());
    }

    static double masked_count(const std::vector<uint8_t>& mask, size_t total, const char* op) {
        if (mask.empty())
            return static_cast<double>(total);
        if (mask.size() != total)
            throw std::invalid_argument(std::string(op) + ": mask size mismatch");
        int64_t c = 0;
        for (uint8_t m : mask)
            c += m ? 1 : 0;
        if (c == 0)
            throw std::invalid_argument(std::string(op) + ": empty mask");
        return static_cast<double>(c);
    }

    Var push(Tensor value, bool requires_grad, std::function<void(Tape&, int32_t)> bp) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.backprop = requires_grad ? std::move(bp) : nullptr;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int32_t>(nodes_.size() - 1)};
    }
};

}  // namespace frontcast
