#include "mvit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "mvit/errors.hpp"

namespace mvit::ops {

using detail::make_result;
using detail::Node;

namespace {

// Accumulate into an input's gradient buffer if that input participates in the graph.
std::vector<double>* grad_of(const Tensor& t) {
    if (!t.defined() || !t.requires_grad()) return nullptr;
    return &t.node()->grad_buffer();
}

bool is_suffix(const Shape& full, const Shape& tail) {
    if (shape_numel(tail) == 1) return true;
    if (tail.size() > full.size()) return false;
    return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

bool is_prefix(const Shape& full, const Shape& head) {
    if (head.size() > full.size()) return false;
    return std::equal(head.begin(), head.end(), full.begin());
}

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
}

std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

// Outer / axis / inner decomposition around one axis.
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t len = 1;
    std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

template <class F, class D>
Tensor unary(const Tensor& x, F f, D df) {
    std::vector<double> out(x.numel());
    auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return make_result(x.shape(), std::move(out), {x}, [x, df](Node& self) {
        auto* gx = grad_of(x);
        if (!gx) return;
        auto xv = x.values();
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * df(xv[i], self.values[i]);
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    if (!is_suffix(a.shape(), b.shape())) mismatch("add", a, b);
    const std::size_t n = a.numel();
    const std::size_t m = b.numel();
    std::vector<double> out(n);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + bv[i % m];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b, m](Node& self) {
        if (auto* ga = grad_of(a)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
        }
        if (auto* gb = grad_of(b)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i % m] += self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (!is_suffix(a.shape(), b.shape())) mismatch("mul", a, b);
    const std::size_t n = a.numel();
    const std::size_t m = b.numel();
    std::vector<double> out(n);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * bv[i % m];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b, m](Node& self) {
        auto av = a.values();
        auto bv = b.values();
        if (auto* ga = grad_of(a)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * bv[i % m];
        }
        if (auto* gb = grad_of(b)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i % m] += self.grad[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) v *= factor;
    return make_result(a.shape(), std::move(out), {a}, [a, factor](Node& self) {
        if (auto* ga = grad_of(a)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * factor;
        }
    });
}

Tensor mul_prefix(const Tensor& x, const Tensor& g) {
    if (!is_prefix(x.shape(), g.shape())) mismatch("mul_prefix", x, g);
    const std::size_t inner = x.numel() / g.numel();
    std::vector<double> out(x.numel());
    auto xv = x.values();
    auto gv = g.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * gv[i / inner];
    return make_result(x.shape(), std::move(out), {x, g}, [x, g, inner](Node& self) {
        auto xv = x.values();
        auto gv = g.values();
        if (auto* gx = grad_of(x)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * gv[i / inner];
        }
        if (auto* gg = grad_of(g)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gg)[i / inner] += self.grad[i] * xv[i];
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(0)) mismatch("matmul", a, b);
    return bmm(a, b);
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || a.rank() != b.rank()) mismatch("bmm", a, b);
    const std::size_t r = a.rank();
    if (!std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) mismatch("bmm", a, b);
    const std::size_t m = a.size(r - 2);
    const std::size_t k = a.size(r - 1);
    const std::size_t n = b.size(r - 1);
    if (b.size(r - 2) != k) mismatch("bmm", a, b);
    const std::size_t batch = a.numel() / (m * k);

    Shape out_shape = a.shape();
    out_shape[r - 1] = n;
    std::vector<double> out(batch * m * n, 0.0);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t p = 0; p < batch; ++p) {
        const double* A = av.data() + p * m * k;
        const double* B = bv.data() + p * k * n;
        double* C = out.data() + p * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t t = 0; t < k; ++t) {
                const double aval = A[i * k + t];
                for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aval * B[t * n + j];
            }
        }
    }
    return make_result(std::move(out_shape), std::move(out), {a, b}, [a, b, batch, m, k, n](Node& self) {
        auto av = a.values();
        auto bv = b.values();
        auto* ga = grad_of(a);
        auto* gb = grad_of(b);
        for (std::size_t p = 0; p < batch; ++p) {
            const double* A = av.data() + p * m * k;
            const double* B = bv.data() + p * k * n;
            const double* G = self.grad.data() + p * m * n;
            if (ga) {
                double* GA = ga->data() + p * m * k;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t t = 0; t < k; ++t) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[t * n + j];
                        GA[i * k + t] += s;
                    }
            }
            if (gb) {
                double* GB = gb->data() + p * k * n;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t t = 0; t < k; ++t) {
                        const double aval = A[i * k + t];
                        for (std::size_t j = 0; j < n; ++j) GB[t * n + j] += aval * G[i * n + j];
                    }
            }
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2 || x.rank() < 1 || x.shape().back() != weight.size(1)) mismatch("linear", x, weight);
    const std::size_t din = weight.size(1);
    const std::size_t dout = weight.size(0);
    if (bias.defined() && (bias.rank() != 1 || bias.size(0) != dout)) mismatch("linear", weight, bias);
    const std::size_t rows = x.numel() / din;

    Shape out_shape = x.shape();
    out_shape.back() = dout;
    std::vector<double> out(rows * dout, 0.0);
    auto xv = x.values();
    auto wv = weight.values();
    // Row-by-row axpy over the transposed weight; per output the summation order matches a dot product.
    std::vector<double> wt(din * dout);
    for (std::size_t o = 0; o < dout; ++o)
        for (std::size_t i = 0; i < din; ++i) wt[i * dout + o] = wv[o * din + i];
    for (std::size_t r = 0; r < rows; ++r) {
        const double* X = xv.data() + r * din;
        double* Y = out.data() + r * dout;
        if (bias.defined()) std::copy(bias.values().begin(), bias.values().end(), Y);
        for (std::size_t i = 0; i < din; ++i) {
            const double xi = X[i];
            const double* WT = wt.data() + i * dout;
            for (std::size_t o = 0; o < dout; ++o) Y[o] += xi * WT[o];
        }
    }
    return make_result(std::move(out_shape), std::move(out), {x, weight, bias},
                       [x, weight, bias, rows, din, dout](Node& self) {
                           auto xv = x.values();
                           auto wv = weight.values();
                           auto* gx = grad_of(x);
                           auto* gw = grad_of(weight);
                           auto* gbias = grad_of(bias);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* G = self.grad.data() + r * dout;
                               const double* X = xv.data() + r * din;
                               for (std::size_t o = 0; o < dout; ++o) {
                                   const double g = G[o];
                                   if (g == 0.0) continue;
                                   if (gx) {
                                       double* GX = gx->data() + r * din;
                                       const double* W = wv.data() + o * din;
                                       for (std::size_t i = 0; i < din; ++i) GX[i] += g * W[i];
                                   }
                                   if (gw) {
                                       double* GW = gw->data() + o * din;
                                       for (std::size_t i = 0; i < din; ++i) GW[i] += g * X[i];
                                   }
                                   if (gbias) (*gbias)[o] += g;
                               }
                           }
                       });
}

namespace {

// Output positions [lo, hi) along one axis whose input tap k lands inside [0, n).
std::pair<std::size_t, std::size_t> valid_outputs(std::size_t k, std::size_t pad, std::size_t stride, std::size_t n,
                                                  std::size_t out) {
    const std::size_t lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
    if (n + pad <= k) return {0, 0};
    const std::size_t hi = std::min(out, (n - 1 + pad - k) / stride + 1);
    return {std::min(lo, hi), hi};
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opt) {
    if (x.rank() != 4 || weight.rank() != 4) mismatch("conv2d", x, weight);
    const std::size_t B = x.size(0), Cin = x.size(1), H = x.size(2), W = x.size(3);
    const std::size_t Cout = weight.size(0), Cg = weight.size(1), KH = weight.size(2), KW = weight.size(3);
    const std::size_t G = opt.groups;
    const auto [SH, SW] = opt.stride;
    const auto [PH, PW] = opt.padding;
    if (G == 0 || Cin % G != 0 || Cout % G != 0) {
        throw ConfigError("conv2d: channels " + std::to_string(Cin) + "->" + std::to_string(Cout) +
                          " not divisible by groups " + std::to_string(G));
    }
    if (Cg != Cin / G) mismatch("conv2d", x, weight);
    if (SH == 0 || SW == 0) throw ConfigError("conv2d: stride must be positive");
    if (H + 2 * PH < KH || W + 2 * PW < KW) {
        throw ConfigError("conv2d: nonpositive output extent for input " + shape_string(x.shape()) + " and kernel " +
                          shape_string(weight.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.size(0) != Cout)) mismatch("conv2d", weight, bias);
    const std::size_t HO = (H + 2 * PH - KH) / SH + 1;
    const std::size_t WO = (W + 2 * PW - KW) / SW + 1;
    const std::size_t out_per_group = Cout / G;

    // 1x1, stride 1, no padding: each tap covers the whole plane, so loops run over flat planes.
    const bool pointwise = KH == 1 && KW == 1 && SH == 1 && SW == 1 && PH == 0 && PW == 0;
    const std::size_t plane = HO * WO;
    std::vector<double> out(B * Cout * HO * WO, 0.0);
    auto xv = x.values();
    auto wv = weight.values();
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t oc = 0; oc < Cout; ++oc) {
            const std::size_t g = oc / out_per_group;
            double* O = out.data() + (b * Cout + oc) * HO * WO;
            if (bias.defined()) std::fill(O, O + HO * WO, bias.values()[oc]);
            for (std::size_t icg = 0; icg < Cg; ++icg) {
                const std::size_t ic = g * Cg + icg;
                const double* X = xv.data() + (b * Cin + ic) * H * W;
                if (pointwise) {
                    const double wval = wv[oc * Cg + icg];
                    for (std::size_t i = 0; i < plane; ++i) O[i] += wval * X[i];
                    continue;
                }
                for (std::size_t ky = 0; ky < KH; ++ky) {
                    const auto [oy0, oy1] = valid_outputs(ky, PH, SH, H, HO);
                    for (std::size_t kx = 0; kx < KW; ++kx) {
                        const auto [ox0, ox1] = valid_outputs(kx, PW, SW, W, WO);
                        const double wval = wv[((oc * Cg + icg) * KH + ky) * KW + kx];
                        const std::size_t n = ox1 - ox0;
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const double* xp = X + (oy * SH + ky - PH) * W + (ox0 * SW + kx - PW);
                            double* op = O + oy * WO + ox0;
                            if (SW == 1) {
                                for (std::size_t i = 0; i < n; ++i) op[i] += wval * xp[i];
                            } else {
                                for (std::size_t i = 0; i < n; ++i) op[i] += wval * xp[i * SW];
                            }
                        }
                    }
                }
            }
        }
    }

    return make_result(
        {B, Cout, HO, WO}, std::move(out), {x, weight, bias},
        [=](Node& self) {
            auto xv = x.values();
            auto wv = weight.values();
            auto* gx = grad_of(x);
            auto* gw = grad_of(weight);
            auto* gbias = grad_of(bias);
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t oc = 0; oc < Cout; ++oc) {
                    const std::size_t g = oc / out_per_group;
                    const double* GO = self.grad.data() + (b * Cout + oc) * HO * WO;
                    if (gbias) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < HO * WO; ++i) s += GO[i];
                        (*gbias)[oc] += s;
                    }
                    for (std::size_t icg = 0; icg < Cg; ++icg) {
                        const std::size_t ic = g * Cg + icg;
                        const double* X = xv.data() + (b * Cin + ic) * H * W;
                        double* GX = gx ? gx->data() + (b * Cin + ic) * H * W : nullptr;
                        if (pointwise) {
                            const std::size_t widx = oc * Cg + icg;
                            const double wval = wv[widx];
                            if (gw) {
                                double wacc = 0.0;
                                for (std::size_t i = 0; i < plane; ++i) wacc += GO[i] * X[i];
                                (*gw)[widx] += wacc;
                            }
                            if (GX) {
                                for (std::size_t i = 0; i < plane; ++i) GX[i] += GO[i] * wval;
                            }
                            continue;
                        }
                        for (std::size_t ky = 0; ky < KH; ++ky) {
                            const auto [oy0, oy1] = valid_outputs(ky, PH, SH, H, HO);
                            for (std::size_t kx = 0; kx < KW; ++kx) {
                                const auto [ox0, ox1] = valid_outputs(kx, PW, SW, W, WO);
                                const std::size_t widx = ((oc * Cg + icg) * KH + ky) * KW + kx;
                                const double wval = wv[widx];
                                const std::size_t n = ox1 - ox0;
                                double wacc = 0.0;
                                for (std::size_t oy = oy0; oy < oy1; ++oy) {
                                    const std::size_t base = (oy * SH + ky - PH) * W + (ox0 * SW + kx - PW);
                                    const double* xp = X + base;
                                    const double* gp = GO + oy * WO + ox0;
                                    for (std::size_t i = 0; i < n; ++i) wacc += gp[i] * xp[i * SW];
                                    if (!GX) continue;
                                    double* gxp = GX + base;
                                    if (SW == 1) {
                                        for (std::size_t i = 0; i < n; ++i) gxp[i] += gp[i] * wval;
                                    } else {
                                        for (std::size_t i = 0; i < n; ++i) gxp[i * SW] += gp[i] * wval;
                                    }
                                }
                                if (gw) (*gw)[widx] += wacc;
                            }
                        }
                    }
                }
            }
        });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_string(x.shape()));
    const AxisSplit s = split_at(x.shape(), axis);
    std::vector<double> out(x.numel());
    auto xv = x.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.len * s.inner + in;
            double mx = xv[base];
            for (std::size_t i = 1; i < s.len; ++i) mx = std::max(mx, xv[base + i * s.inner]);
            double total = 0.0;
            for (std::size_t i = 0; i < s.len; ++i) {
                const double e = std::exp(xv[base + i * s.inner] - mx);
                out[base + i * s.inner] = e;
                total += e;
            }
            for (std::size_t i = 0; i < s.len; ++i) out[base + i * s.inner] /= total;
        }
    }
    return make_result(x.shape(), std::move(out), {x}, [x, s](Node& self) {
        auto* gx = grad_of(x);
        if (!gx) return;
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.len * s.inner + in;
                double dot = 0.0;
                for (std::size_t i = 0; i < s.len; ++i) dot += self.grad[base + i * s.inner] * self.values[base + i * s.inner];
                for (std::size_t i = 0; i < s.len; ++i) {
                    const std::size_t k = base + i * s.inner;
                    (*gx)[k] += self.values[k] * (self.grad[k] - dot);
                }
            }
        }
    });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (eps <= 0.0) throw ConfigError("layernorm: eps must be positive");
    const std::size_t C = x.shape().back();
    if (gamma.numel() != C || beta.numel() != C) mismatch("layernorm", x, gamma);
    const std::size_t rows = x.numel() / C;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> rstd(rows);
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* X = xv.data() + r * C;
        double mu = 0.0;
        for (std::size_t c = 0; c < C; ++c) mu += X[c];
        mu /= static_cast<double>(C);
        double var = 0.0;
        for (std::size_t c = 0; c < C; ++c) var += (X[c] - mu) * (X[c] - mu);
        var /= static_cast<double>(C);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < C; ++c) {
            const double h = (X[c] - mu) * rstd[r];
            xhat[r * C + c] = h;
            out[r * C + c] = h * gv[c] + bv[c];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta},
                       [x, gamma, beta, C, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                           auto* gx = grad_of(x);
                           auto* gg = grad_of(gamma);
                           auto* gb = grad_of(beta);
                           auto gv = gamma.values();
                           const double invC = 1.0 / static_cast<double>(C);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* G = self.grad.data() + r * C;
                               const double* XH = xhat.data() + r * C;
                               if (gg || gb) {
                                   for (std::size_t c = 0; c < C; ++c) {
                                       if (gg) (*gg)[c] += G[c] * XH[c];
                                       if (gb) (*gb)[c] += G[c];
                                   }
                               }
                               if (!gx) continue;
                               double mean_g = 0.0;
                               double mean_gx = 0.0;
                               for (std::size_t c = 0; c < C; ++c) {
                                   const double gh = G[c] * gv[c];
                                   mean_g += gh;
                                   mean_gx += gh * XH[c];
                               }
                               mean_g *= invC;
                               mean_gx *= invC;
                               double* GX = gx->data() + r * C;
                               for (std::size_t c = 0; c < C; ++c) {
                                   GX[c] += rstd[r] * (G[c] * gv[c] - mean_g - XH[c] * mean_gx);
                               }
                           }
                       });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
    constexpr double k = 0.044715;
    const double c = std::sqrt(2.0 / std::numbers::pi);
    return unary(
        x, [c](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v))); },
        [c](double v, double) {
            const double t = std::tanh(c * (v + k * v * v * v));
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * k * v * v);
        });
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 4) throw DimensionError("global_avg_pool expects [B,C,H,W], got " + shape_string(x.shape()));
    const std::size_t B = x.size(0), C = x.size(1), HW = x.size(2) * x.size(3);
    std::vector<double> out(B * C);
    auto xv = x.values();
    for (std::size_t i = 0; i < B * C; ++i) {
        double s = 0.0;
        for (std::size_t p = 0; p < HW; ++p) s += xv[i * HW + p];
        out[i] = s / static_cast<double>(HW);
    }
    return make_result({B, C}, std::move(out), {x}, [x, HW](Node& self) {
        auto* gx = grad_of(x);
        if (!gx) return;
        const double inv = 1.0 / static_cast<double>(HW);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            for (std::size_t p = 0; p < HW; ++p) (*gx)[i * HW + p] += self.grad[i] * inv;
    });
}

Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 4) throw DimensionError("adaptive_avg_pool expects [B,C,H,W], got " + shape_string(x.shape()));
    const std::size_t BC = x.size(0) * x.size(1), H = x.size(2), W = x.size(3);
    if (out_h == 0 || out_w == 0 || out_h > H || out_w > W) {
        throw ConfigError("adaptive_avg_pool: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                          " exceeds input " + shape_string(x.shape()));
    }
    auto edges = [](std::size_t n, std::size_t bins) {
        std::vector<std::size_t> e(bins + 1);
        for (std::size_t i = 0; i <= bins; ++i) e[i] = i * n / bins;
        return e;
    };
    const auto ey = edges(H, out_h);
    const auto ex = edges(W, out_w);
    std::vector<double> out(BC * out_h * out_w);
    auto xv = x.values();
    for (std::size_t i = 0; i < BC; ++i) {
        for (std::size_t by = 0; by < out_h; ++by) {
            for (std::size_t bx = 0; bx < out_w; ++bx) {
                double s = 0.0;
                for (std::size_t y = ey[by]; y < ey[by + 1]; ++y)
                    for (std::size_t xx = ex[bx]; xx < ex[bx + 1]; ++xx) s += xv[(i * H + y) * W + xx];
                const double cnt = static_cast<double>((ey[by + 1] - ey[by]) * (ex[bx + 1] - ex[bx]));
                out[(i * out_h + by) * out_w + bx] = s / cnt;
            }
        }
    }
    return make_result({x.size(0), x.size(1), out_h, out_w}, std::move(out), {x},
                       [x, BC, H, W, out_h, out_w, ey, ex](Node& self) {
                           auto* gx = grad_of(x);
                           if (!gx) return;
                           for (std::size_t i = 0; i < BC; ++i)
                               for (std::size_t by = 0; by < out_h; ++by)
                                   for (std::size_t bx = 0; bx < out_w; ++bx) {
                                       const double cnt = static_cast<double>((ey[by + 1] - ey[by]) * (ex[bx + 1] - ex[bx]));
                                       const double g = self.grad[(i * out_h + by) * out_w + bx] / cnt;
                                       for (std::size_t y = ey[by]; y < ey[by + 1]; ++y)
                                           for (std::size_t xx = ex[bx]; xx < ex[bx + 1]; ++xx) (*gx)[(i * H + y) * W + xx] += g;
                                   }
                       });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    return make_result(std::move(shape), std::move(out), {x}, [x](Node& self) {
        if (auto* gx = grad_of(x)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
        }
    });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    const std::size_t r = x.rank();
    if (axes.size() != r) throw DimensionError("permute: axis count mismatch for " + shape_string(x.shape()));
    std::vector<bool> seen(r, false);
    for (std::size_t a : axes) {
        if (a >= r || seen[a]) throw DimensionError("permute: invalid axis order");
        seen[a] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.size(axes[i]);
    const auto in_strides = strides_of(x.shape());
    // Source offset for each output position, walked with an odometer.
    std::vector<std::size_t> src(x.numel());
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t o = 0; o < src.size(); ++o) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[axes[i]];
        src[o] = off;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    std::vector<double> out(x.numel());
    auto xv = x.values();
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = xv[src[o]];
    return make_result(std::move(out_shape), std::move(out), {x}, [x, src = std::move(src)](Node& self) {
        if (auto* gx = grad_of(x)) {
            for (std::size_t o = 0; o < self.grad.size(); ++o) (*gx)[src[o]] += self.grad[o];
        }
    });
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    if (axis >= x.rank() || length == 0 || start + length > x.size(axis)) {
        throw DimensionError("narrow: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                             ") invalid on axis " + std::to_string(axis) + " of " + shape_string(x.shape()));
    }
    const AxisSplit s = split_at(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[axis] = length;
    std::vector<double> out(s.outer * length * s.inner);
    auto xv = x.values();
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(xv.data() + (o * s.len + start) * s.inner, length * s.inner, out.data() + o * length * s.inner);
    return make_result(std::move(out_shape), std::move(out), {x}, [x, s, start, length](Node& self) {
        auto* gx = grad_of(x);
        if (!gx) return;
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < length * s.inner; ++i)
                (*gx)[(o * s.len + start) * s.inner + i] += self.grad[o * length * s.inner + i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& ref = parts.front().shape();
    if (axis >= ref.size()) throw DimensionError("concat: axis out of range for " + shape_string(ref));
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& sh = p.shape();
        bool ok = sh.size() == ref.size();
        for (std::size_t i = 0; ok && i < sh.size(); ++i) ok = i == axis || sh[i] == ref[i];
        if (!ok) mismatch("concat", parts.front(), p);
        total += sh[axis];
    }
    Shape out_shape = ref;
    out_shape[axis] = total;
    const AxisSplit s = split_at(out_shape, axis);
    std::vector<double> out(shape_numel(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t len = p.size(axis);
        auto pv = p.values();
        for (std::size_t o = 0; o < s.outer; ++o)
            std::copy_n(pv.data() + o * len * s.inner, len * s.inner, out.data() + (o * total + offset) * s.inner);
        offset += len;
    }
    return make_result(std::move(out_shape), std::move(out), parts, [parts, offsets, s, total, axis](Node& self) {
        for (std::size_t k = 0; k < parts.size(); ++k) {
            auto* gp = grad_of(parts[k]);
            if (!gp) continue;
            const std::size_t len = parts[k].size(axis);
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t i = 0; i < len * s.inner; ++i)
                    (*gp)[o * len * s.inner + i] += self.grad[(o * total + offsets[k]) * s.inner + i];
        }
    });
}

Tensor repeat_leading(const Tensor& x, std::size_t count) {
    if (count == 0) throw DimensionError("repeat_leading: count must be positive");
    Shape out_shape{count};
    out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
    const std::size_t n = x.numel();
    std::vector<double> out(count * n);
    for (std::size_t c = 0; c < count; ++c) std::copy_n(x.values().data(), n, out.data() + c * n);
    return make_result(std::move(out_shape), std::move(out), {x}, [x, n](Node& self) {
        if (auto* gx = grad_of(x)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i % n] += self.grad[i];
        }
    });
}

Tensor sum(const Tensor& x) {
    auto xv = x.values();
    const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
    return make_result({1}, {s}, {x}, [x](Node& self) {
        if (auto* gx = grad_of(x)) {
            for (double& g : *gx) g += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) throw DimensionError("mean: axis out of range for " + shape_string(x.shape()));
    const AxisSplit s = split_at(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape.push_back(1);
    std::vector<double> out(s.outer * s.inner, 0.0);
    auto xv = x.values();
    const double inv = 1.0 / static_cast<double>(s.len);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.len; ++i)
            for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += xv[(o * s.len + i) * s.inner + in];
    for (double& v : out) v *= inv;
    return make_result(std::move(out_shape), std::move(out), {x}, [x, s, inv](Node& self) {
        auto* gx = grad_of(x);
        if (!gx) return;
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < s.len; ++i)
                for (std::size_t in = 0; in < s.inner; ++in)
                    (*gx)[(o * s.len + i) * s.inner + in] += self.grad[o * s.inner + in] * inv;
    });
}

Tensor normalize_last(const Tensor& x) {
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    std::vector<double> out(x.numel());
    std::vector<double> sums(rows);
    auto xv = x.values();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += xv[r * n + i];
        if (!(s >= 1e-12)) throw NumericalError("normalize_last: slice sum " + std::to_string(s) + " below 1e-12");
        sums[r] = s;
        for (std::size_t i = 0; i < n; ++i) out[r * n + i] = xv[r * n + i] / s;
    }
    return make_result(x.shape(), std::move(out), {x}, [x, n, rows, sums = std::move(sums)](Node& self) {
        auto* gx = grad_of(x);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += self.grad[r * n + i] * self.values[r * n + i];
            for (std::size_t i = 0; i < n; ++i) (*gx)[r * n + i] += (self.grad[r * n + i] - dot) / sums[r];
        }
    });
}

Tensor cross_entropy(const Tensor& logits, const Tensor& targets) {
    if (logits.rank() != 2 || logits.shape() != targets.shape()) mismatch("cross_entropy", logits, targets);
    const std::size_t B = logits.size(0), K = logits.size(1);
    auto zv = logits.values();
    auto tv = targets.values();
    std::vector<double> probs(B * K);
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const double* Z = zv.data() + b * K;
        const double mx = *std::max_element(Z, Z + K);
        double se = 0.0;
        for (std::size_t k = 0; k < K; ++k) se += std::exp(Z[k] - mx);
        const double lse = mx + std::log(se);
        for (std::size_t k = 0; k < K; ++k) {
            probs[b * K + k] = std::exp(Z[k] - lse);
            loss -= tv[b * K + k] * (Z[k] - lse);
        }
    }
    loss /= static_cast<double>(B);
    return make_result({1}, {loss}, {logits, targets}, [logits, targets, B, K, probs = std::move(probs)](Node& self) {
        auto tv = targets.values();
        const double g = self.grad[0] / static_cast<double>(B);
        if (auto* gz = grad_of(logits)) {
            for (std::size_t b = 0; b < B; ++b) {
                double tsum = 0.0;
                for (std::size_t k = 0; k < K; ++k) tsum += tv[b * K + k];
                for (std::size_t k = 0; k < K; ++k) (*gz)[b * K + k] += g * (probs[b * K + k] * tsum - tv[b * K + k]);
            }
        }
        if (auto* gt = grad_of(targets)) {
            for (std::size_t i = 0; i < B * K; ++i) (*gt)[i] -= g * std::log(probs[i]);
        }
    });
}

Tensor patchify(const Tensor& x, std::size_t patch) {
    if (x.rank() != 4) throw DimensionError("patchify expects [B,C,H,W], got " + shape_string(x.shape()));
    const std::size_t B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    if (patch == 0 || H % patch != 0 || W % patch != 0) {
        throw ConfigError("patchify: " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by patch " +
                          std::to_string(patch));
    }
    const std::size_t gh = H / patch, gw = W / patch, D = C * patch * patch;
    std::vector<std::size_t> src(B * gh * gw * D);
    std::size_t o = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t py = 0; py < gh; ++py)
            for (std::size_t px = 0; px < gw; ++px)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t dy = 0; dy < patch; ++dy)
                        for (std::size_t dx = 0; dx < patch; ++dx)
                            src[o++] = ((b * C + c) * H + py * patch + dy) * W + px * patch + dx;
    std::vector<double> out(src.size());
    auto xv = x.values();
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = xv[src[i]];
    return make_result({B, gh * gw, D}, std::move(out), {x}, [x, src = std::move(src)](Node& self) {
        if (auto* gx = grad_of(x)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[src[i]] += self.grad[i];
        }
    });
}

}  // namespace mvit::ops
