#include "cgcce/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

namespace cgcce::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_rank(const Tensor& t, std::int64_t rank, const char* what) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + to_string(t.shape()));
    }
}

// Rank-4 broadcast plan; shapes are left-padded with ones.
struct Broadcast {
    Shape out;
    std::array<std::int64_t, 4> dims{};
    std::array<std::int64_t, 4> stride_a{};
    std::array<std::int64_t, 4> stride_b{};
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* what) {
    if (a.size() != b.size() || a.size() > 4) {
        throw ShapeError(std::string(what) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    const std::size_t pad = 4 - a.size();
    std::array<std::int64_t, 4> da{1, 1, 1, 1}, db{1, 1, 1, 1};
    for (std::size_t i = 0; i < a.size(); ++i) {
        da[pad + i] = a[i];
        db[pad + i] = b[i];
    }
    Broadcast p;
    for (std::size_t i = 0; i < 4; ++i) {
        if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
            throw ShapeError(std::string(what) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
        }
        p.dims[i] = std::max(da[i], db[i]);
    }
    std::int64_t sa = 1, sb = 1;
    for (int i = 3; i >= 0; --i) {
        p.stride_a[i] = da[i] == 1 ? 0 : sa;
        p.stride_b[i] = db[i] == 1 ? 0 : sb;
        sa *= da[i];
        sb *= db[i];
    }
    for (std::size_t i = 0; i < a.size(); ++i) p.out.push_back(p.dims[pad + i]);
    return p;
}

template <typename Fn>
void for_each_broadcast(const Broadcast& p, Fn&& fn) {
    std::int64_t o = 0;
    for (std::int64_t i0 = 0; i0 < p.dims[0]; ++i0)
        for (std::int64_t i1 = 0; i1 < p.dims[1]; ++i1)
            for (std::int64_t i2 = 0; i2 < p.dims[2]; ++i2) {
                std::int64_t ia = i0 * p.stride_a[0] + i1 * p.stride_a[1] + i2 * p.stride_a[2];
                std::int64_t ib = i0 * p.stride_b[0] + i1 * p.stride_b[1] + i2 * p.stride_b[2];
                for (std::int64_t i3 = 0; i3 < p.dims[3]; ++i3, ++o) {
                    fn(o, ia + i3 * p.stride_a[3], ib + i3 * p.stride_b[3]);
                }
            }
}

enum class BinaryKind { kAdd, kSub, kMul };

Var binary(const Var& a, const Var& b, BinaryKind kind, const char* what) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() == bv.shape()) {
        Tensor out(av.shape());
        const std::int64_t n = av.numel();
        const double* pa = av.data();
        const double* pb = bv.data();
        double* po = out.data();
        switch (kind) {
            case BinaryKind::kAdd: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
            case BinaryKind::kSub: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
            case BinaryKind::kMul: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
        }
        return make_result(std::move(out), {a, b}, [kind](Node& self) {
            Node& na = *self.inputs[0];
            Node& nb = *self.inputs[1];
            const std::int64_t n = self.value.numel();
            const double* g = self.grad.data();
            if (na.requires_grad) {
                double* ga = na.grad_buffer().data();
                if (kind == BinaryKind::kMul) {
                    for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * nb.value[i];
                } else {
                    for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
                }
            }
            if (nb.requires_grad) {
                double* gb = nb.grad_buffer().data();
                switch (kind) {
                    case BinaryKind::kAdd: for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i]; break;
                    case BinaryKind::kSub: for (std::int64_t i = 0; i < n; ++i) gb[i] -= g[i]; break;
                    case BinaryKind::kMul: for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i] * na.value[i]; break;
                }
            }
        });
    }

    Broadcast plan = plan_broadcast(av.shape(), bv.shape(), what);
    Tensor out(plan.out);
    for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
        switch (kind) {
            case BinaryKind::kAdd: out[o] = av[ia] + bv[ib]; break;
            case BinaryKind::kSub: out[o] = av[ia] - bv[ib]; break;
            case BinaryKind::kMul: out[o] = av[ia] * bv[ib]; break;
        }
    });
    return make_result(std::move(out), {a, b}, [kind, plan](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        Tensor* ga = na.requires_grad ? &na.grad_buffer() : nullptr;
        Tensor* gb = nb.requires_grad ? &nb.grad_buffer() : nullptr;
        for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
            const double g = self.grad[o];
            if (ga) (*ga)[ia] += kind == BinaryKind::kMul ? g * nb.value[ib] : g;
            if (gb) {
                switch (kind) {
                    case BinaryKind::kAdd: (*gb)[ib] += g; break;
                    case BinaryKind::kSub: (*gb)[ib] -= g; break;
                    case BinaryKind::kMul: (*gb)[ib] += g * na.value[ia]; break;
                }
            }
        });
    });
}

// Unary map with derivative expressed through input x and output y.
template <typename Fwd, typename Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::int64_t i = 0; i < xv.numel(); ++i) out[i] = fwd(xv[i]);
    return make_result(std::move(out), {x}, [deriv](Node& self) {
        Node& nx = *self.inputs[0];
        double* gx = nx.grad_buffer().data();
        for (std::int64_t i = 0; i < self.value.numel(); ++i) {
            gx[i] += self.grad[i] * deriv(nx.value[i], self.value[i]);
        }
    });
}

// Unfolds one image into rows (c, ki, kj) x columns (oh, ow); `ld` is the
// row stride of `cols`, so several images can sit side by side.
void im2col(const double* x, std::int64_t channels, std::int64_t height, std::int64_t width, int k, int stride,
            int pad, std::int64_t out_h, std::int64_t out_w, double* cols, std::int64_t ld) {
    for (std::int64_t c = 0; c < channels; ++c) {
        const double* xc = x + c * height * width;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                double* row = cols + ((c * k + ki) * k + kj) * ld;
                for (std::int64_t oh = 0; oh < out_h; ++oh) {
                    const std::int64_t ih = oh * stride - pad + ki;
                    double* dst = row + oh * out_w;
                    if (ih < 0 || ih >= height) {
                        std::fill(dst, dst + out_w, 0.0);
                        continue;
                    }
                    const double* src = xc + ih * width;
                    for (std::int64_t ow = 0; ow < out_w; ++ow) {
                        const std::int64_t iw = ow * stride - pad + kj;
                        dst[ow] = (iw >= 0 && iw < width) ? src[iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, std::int64_t channels, std::int64_t height, std::int64_t width, int k, int stride,
            int pad, std::int64_t out_h, std::int64_t out_w, double* x, std::int64_t ld) {
    for (std::int64_t c = 0; c < channels; ++c) {
        double* xc = x + c * height * width;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const double* row = cols + ((c * k + ki) * k + kj) * ld;
                for (std::int64_t oh = 0; oh < out_h; ++oh) {
                    const std::int64_t ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= height) continue;
                    double* dst = xc + ih * width;
                    const double* src = row + oh * out_w;
                    for (std::int64_t ow = 0; ow < out_w; ++ow) {
                        const std::int64_t iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < width) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

struct ConvGeometry {
    std::int64_t n, cin, h, w, cout, k, out_h, out_w;
    int stride, pad;
};

// Images per GEMM: several small images share one product so each weight
// pass is amortized; the unfolded buffer stays near 2 MB.
std::int64_t conv_chunk(const ConvGeometry& g) {
    constexpr std::int64_t kBudget = std::int64_t{1} << 18;
    const std::int64_t per = g.cin * g.k * g.k * g.out_h * g.out_w;
    return std::clamp<std::int64_t>(kBudget / std::max<std::int64_t>(per, 1), 1, g.n);
}

Var conv2d_dense(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g) {
    const std::int64_t kdim = g.cin * g.k * g.k;
    const std::int64_t plane = g.out_h * g.out_w;
    const std::int64_t in_plane = g.cin * g.h * g.w;
    const std::int64_t chunk = conv_chunk(g);
    FlopCounter::record_macs(g.n * g.cout * plane * kdim);

    Tensor out({g.n, g.cout, g.out_h, g.out_w});
    if (!FlopCounter::dry_run()) {
        ConstMatMap wmat(weight.value().data(), g.cout, kdim);
        std::vector<double> cols(static_cast<std::size_t>(kdim * plane * chunk));
        RowMat prod;
        for (std::int64_t b0 = 0; b0 < g.n; b0 += chunk) {
            const std::int64_t nb = std::min(chunk, g.n - b0);
            const std::int64_t ld = nb * plane;
            for (std::int64_t i = 0; i < nb; ++i) {
                im2col(x.value().data() + (b0 + i) * in_plane, g.cin, g.h, g.w, static_cast<int>(g.k), g.stride,
                       g.pad, g.out_h, g.out_w, cols.data() + i * plane, ld);
            }
            prod.noalias() = wmat * ConstMatMap(cols.data(), kdim, ld);
            for (std::int64_t i = 0; i < nb; ++i) {
                MatMap ob(out.data() + (b0 + i) * g.cout * plane, g.cout, plane);
                ob = prod.middleCols(i * plane, plane);
                if (bias.defined()) {
                    for (std::int64_t c = 0; c < g.cout; ++c) ob.row(c).array() += bias.value()[c];
                }
            }
        }
    }

    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(std::move(out), std::move(inputs), [g, kdim, plane, in_plane, chunk](Node& self) {
        Node& nx = *self.inputs[0];
        Node& nw = *self.inputs[1];
        Node* nb_node = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
        ConstMatMap wmat(nw.value.data(), g.cout, kdim);
        std::vector<double> cols(static_cast<std::size_t>(kdim * plane * chunk));
        RowMat gout, dcols;
        for (std::int64_t b0 = 0; b0 < g.n; b0 += chunk) {
            const std::int64_t nb = std::min(chunk, g.n - b0);
            const std::int64_t ld = nb * plane;
            gout.resize(g.cout, ld);
            for (std::int64_t i = 0; i < nb; ++i) {
                gout.middleCols(i * plane, plane) =
                    ConstMatMap(self.grad.data() + (b0 + i) * g.cout * plane, g.cout, plane);
            }
            if (nb_node && nb_node->requires_grad) {
                double* gb = nb_node->grad_buffer().data();
                for (std::int64_t c = 0; c < g.cout; ++c) gb[c] += gout.row(c).sum();
            }
            if (nw.requires_grad) {
                for (std::int64_t i = 0; i < nb; ++i) {
                    im2col(nx.value.data() + (b0 + i) * in_plane, g.cin, g.h, g.w, static_cast<int>(g.k), g.stride,
                           g.pad, g.out_h, g.out_w, cols.data() + i * plane, ld);
                }
                MatMap gw(nw.grad_buffer().data(), g.cout, kdim);
                gw.noalias() += gout * ConstMatMap(cols.data(), kdim, ld).transpose();
            }
            if (nx.requires_grad) {
                dcols.noalias() = wmat.transpose() * gout;
                double* gx = nx.grad_buffer().data();
                for (std::int64_t i = 0; i < nb; ++i) {
                    col2im(dcols.data() + i * plane, g.cin, g.h, g.w, static_cast<int>(g.k), g.stride, g.pad, g.out_h,
                           g.out_w, gx + (b0 + i) * in_plane, ld);
                }
            }
        }
    });
}

Var conv2d_depthwise(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g) {
    const std::int64_t k = g.k;
    FlopCounter::record_macs(g.n * g.cout * g.out_h * g.out_w * k * k);
    Tensor out({g.n, g.cout, g.out_h, g.out_w});
    if (!FlopCounter::dry_run()) {
        const Tensor& xv = x.value();
        const Tensor& wv = weight.value();
        for (std::int64_t b = 0; b < g.n; ++b)
            for (std::int64_t c = 0; c < g.cout; ++c) {
                const double* xc = xv.data() + (b * g.cin + c) * g.h * g.w;
                const double* wc = wv.data() + c * k * k;
                double* oc = out.data() + (b * g.cout + c) * g.out_h * g.out_w;
                const double bc = bias.defined() ? bias.value()[c] : 0.0;
                for (std::int64_t oh = 0; oh < g.out_h; ++oh)
                    for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                        double acc = bc;
                        for (std::int64_t ki = 0; ki < k; ++ki) {
                            const std::int64_t ih = oh * g.stride - g.pad + ki;
                            if (ih < 0 || ih >= g.h) continue;
                            for (std::int64_t kj = 0; kj < k; ++kj) {
                                const std::int64_t iw = ow * g.stride - g.pad + kj;
                                if (iw < 0 || iw >= g.w) continue;
                                acc += wc[ki * k + kj] * xc[ih * g.w + iw];
                            }
                        }
                        oc[oh * g.out_w + ow] = acc;
                    }
            }
    }
    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(std::move(out), std::move(inputs), [g](Node& self) {
        Node& nx = *self.inputs[0];
        Node& nw = *self.inputs[1];
        Node* nb = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
        const std::int64_t k = g.k;
        double* gx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
        double* gw = nw.requires_grad ? nw.grad_buffer().data() : nullptr;
        double* gb = (nb && nb->requires_grad) ? nb->grad_buffer().data() : nullptr;
        for (std::int64_t b = 0; b < g.n; ++b)
            for (std::int64_t c = 0; c < g.cout; ++c) {
                const double* xc = nx.value.data() + (b * g.cin + c) * g.h * g.w;
                const double* wc = nw.value.data() + c * k * k;
                const double* go = self.grad.data() + (b * g.cout + c) * g.out_h * g.out_w;
                for (std::int64_t oh = 0; oh < g.out_h; ++oh)
                    for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                        const double gv = go[oh * g.out_w + ow];
                        if (gb) gb[c] += gv;
                        for (std::int64_t ki = 0; ki < k; ++ki) {
                            const std::int64_t ih = oh * g.stride - g.pad + ki;
                            if (ih < 0 || ih >= g.h) continue;
                            for (std::int64_t kj = 0; kj < k; ++kj) {
                                const std::int64_t iw = ow * g.stride - g.pad + kj;
                                if (iw < 0 || iw >= g.w) continue;
                                if (gw) gw[c * k * k + ki * k + kj] += gv * xc[ih * g.w + iw];
                                if (gx) gx[(b * g.cin + c) * g.h * g.w + ih * g.w + iw] += gv * wc[ki * k + kj];
                            }
                        }
                    }
            }
    });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Var scale(const Var& x, double s) {
    return unary(x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& x, double s) {
    return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var abs(const Var& x) {
    return unary(
        x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var relu(const Var& x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& x) {
    return unary(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
        [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + v * pdf;
        });
}

Var sigmoid(const Var& x) {
    return unary(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var concat_channels(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape& s0 = xs.front().shape();
    if (s0.size() != 4) throw ShapeError("concat_channels: expected rank 4, got " + to_string(s0));
    std::int64_t channels = 0;
    for (const auto& x : xs) {
        const Shape& s = x.shape();
        if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
            throw ShapeError("concat_channels: incompatible " + to_string(s) + " vs " + to_string(s0));
        }
        channels += s[1];
    }
    const std::int64_t n = s0[0];
    const std::int64_t plane = s0[2] * s0[3];
    Tensor out({n, channels, s0[2], s0[3]});
    std::vector<std::int64_t> offsets;
    std::int64_t off = 0;
    for (const auto& x : xs) {
        offsets.push_back(off);
        const std::int64_t c = x.dim(1);
        for (std::int64_t b = 0; b < n; ++b) {
            std::copy_n(x.value().data() + b * c * plane, c * plane, out.data() + (b * channels + off) * plane);
        }
        off += c;
    }
    return make_result(std::move(out), xs, [offsets, channels, n, plane](Node& self) {
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            Node& in = *self.inputs[i];
            if (!in.requires_grad) continue;
            const std::int64_t c = in.value.dim(1);
            double* gi = in.grad_buffer().data();
            for (std::int64_t b = 0; b < n; ++b) {
                const double* src = self.grad.data() + (b * channels + offsets[i]) * plane;
                double* dst = gi + b * c * plane;
                for (std::int64_t j = 0; j < c * plane; ++j) dst[j] += src[j];
            }
        }
    });
}

Var slice_channels(const Var& x, std::int64_t begin, std::int64_t end) {
    require_rank(x.value(), 4, "slice_channels");
    const Shape& s = x.shape();
    if (begin < 0 || end > s[1] || begin >= end) {
        throw ShapeError("slice_channels: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ") for " +
                         to_string(s));
    }
    const std::int64_t n = s[0], c = s[1], plane = s[2] * s[3], width = end - begin;
    Tensor out({n, width, s[2], s[3]});
    for (std::int64_t b = 0; b < n; ++b) {
        std::copy_n(x.value().data() + (b * c + begin) * plane, width * plane, out.data() + b * width * plane);
    }
    return make_result(std::move(out), {x}, [n, c, plane, begin, width](Node& self) {
        double* gx = self.inputs[0]->grad_buffer().data();
        for (std::int64_t b = 0; b < n; ++b) {
            const double* src = self.grad.data() + b * width * plane;
            double* dst = gx + (b * c + begin) * plane;
            for (std::int64_t j = 0; j < width * plane; ++j) dst[j] += src[j];
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return make_result(std::move(out), {x}, [](Node& self) {
        Tensor& gx = self.inputs[0]->grad_buffer();
        for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[i];
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding, int groups) {
    require_rank(x.value(), 4, "conv2d input");
    require_rank(weight.value(), 4, "conv2d weight");
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (ws[2] != ws[3]) throw ShapeError("conv2d: only square kernels are supported, got " + to_string(ws));
    if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
    ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], 0, 0, stride, padding};
    g.out_h = (g.h + 2 * padding - g.k) / stride + 1;
    g.out_w = (g.w + 2 * padding - g.k) / stride + 1;
    if (g.out_h <= 0 || g.out_w <= 0) throw ShapeError("conv2d: kernel larger than padded input " + to_string(xs));
    if (bias.defined() && (bias.value().numel() != g.cout)) {
        throw ShapeError("conv2d: bias size " + std::to_string(bias.value().numel()) + " != out channels " +
                         std::to_string(g.cout));
    }
    if (groups == 1) {
        if (ws[1] != g.cin) {
            throw ShapeError("conv2d: weight " + to_string(ws) + " does not match input channels of " + to_string(xs));
        }
        return conv2d_dense(x, weight, bias, g);
    }
    if (groups == g.cin && g.cout == g.cin && ws[1] == 1) return conv2d_depthwise(x, weight, bias, g);
    throw ShapeError("conv2d: unsupported grouping " + std::to_string(groups) + " for weight " + to_string(ws));
}

Var global_avg_pool(const Var& x) {
    require_rank(x.value(), 4, "global_avg_pool");
    const Shape& s = x.shape();
    const std::int64_t nc = s[0] * s[1], plane = s[2] * s[3];
    Tensor out({s[0], s[1], 1, 1});
    for (std::int64_t i = 0; i < nc; ++i) {
        double acc = 0.0;
        const double* p = x.value().data() + i * plane;
        for (std::int64_t j = 0; j < plane; ++j) acc += p[j];
        out[i] = acc / static_cast<double>(plane);
    }
    return make_result(std::move(out), {x}, [nc, plane](Node& self) {
        double* gx = self.inputs[0]->grad_buffer().data();
        for (std::int64_t i = 0; i < nc; ++i) {
            const double g = self.grad[i] / static_cast<double>(plane);
            for (std::int64_t j = 0; j < plane; ++j) gx[i * plane + j] += g;
        }
    });
}

Var global_max_pool(const Var& x) {
    require_rank(x.value(), 4, "global_max_pool");
    const Shape& s = x.shape();
    const std::int64_t nc = s[0] * s[1], plane = s[2] * s[3];
    Tensor out({s[0], s[1], 1, 1});
    std::vector<std::int64_t> arg(static_cast<std::size_t>(nc));
    for (std::int64_t i = 0; i < nc; ++i) {
        const double* p = x.value().data() + i * plane;
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < plane; ++j)
            if (p[j] > p[best]) best = j;
        arg[static_cast<std::size_t>(i)] = i * plane + best;
        out[i] = p[best];
    }
    return make_result(std::move(out), {x}, [arg](Node& self) {
        double* gx = self.inputs[0]->grad_buffer().data();
        for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += self.grad[static_cast<std::int64_t>(i)];
    });
}

Var channel_mean(const Var& x) {
    require_rank(x.value(), 4, "channel_mean");
    const Shape& s = x.shape();
    const std::int64_t n = s[0], c = s[1], plane = s[2] * s[3];
    Tensor out({n, 1, s[2], s[3]});
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double* p = x.value().data() + (b * c + ch) * plane;
            double* o = out.data() + b * plane;
            for (std::int64_t j = 0; j < plane; ++j) o[j] += p[j];
        }
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] /= static_cast<double>(c);
    return make_result(std::move(out), {x}, [n, c, plane](Node& self) {
        double* gx = self.inputs[0]->grad_buffer().data();
        for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t j = 0; j < plane; ++j)
                    gx[(b * c + ch) * plane + j] += self.grad[b * plane + j] / static_cast<double>(c);
    });
}

Var channel_max(const Var& x) {
    require_rank(x.value(), 4, "channel_max");
    const Shape& s = x.shape();
    const std::int64_t n = s[0], c = s[1], plane = s[2] * s[3];
    Tensor out({n, 1, s[2], s[3]}, -std::numeric_limits<double>::infinity());
    std::vector<std::int64_t> arg(static_cast<std::size_t>(n * plane), 0);
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double* p = x.value().data() + (b * c + ch) * plane;
            for (std::int64_t j = 0; j < plane; ++j) {
                if (p[j] > out[b * plane + j]) {
                    out[b * plane + j] = p[j];
                    arg[static_cast<std::size_t>(b * plane + j)] = (b * c + ch) * plane + j;
                }
            }
        }
    return make_result(std::move(out), {x}, [arg](Node& self) {
        double* gx = self.inputs[0]->grad_buffer().data();
        for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += self.grad[static_cast<std::int64_t>(i)];
    });
}

Var avg_pool(const Var& x, int kernel) {
    require_rank(x.value(), 4, "avg_pool");
    const Shape& s = x.shape();
    if (kernel < 1 || s[2] % kernel != 0 || s[3] % kernel != 0) {
        throw ShapeError("avg_pool: spatial size " + to_string(s) + " not divisible by " + std::to_string(kernel));
    }
    if (kernel == 1) return x;
    const std::int64_t nc = s[0] * s[1], h = s[2], w = s[3], oh = h / kernel, ow = w / kernel;
    const double inv = 1.0 / (kernel * kernel);
    Tensor out({s[0], s[1], oh, ow});
    for (std::int64_t i = 0; i < nc; ++i)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xx = 0; xx < w; ++xx)
                out[(i * oh + y / kernel) * ow + xx / kernel] += x.value()[(i * h + y) * w + xx] * inv;
    return make_result(std::move(out), {x}, [nc, h, w, oh, ow, kernel, inv](Node& self) {
        double* gx = self.inputs[0]->grad_buffer().data();
        for (std::int64_t i = 0; i < nc; ++i)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t xx = 0; xx < w; ++xx)
                    gx[(i * h + y) * w + xx] += self.grad[(i * oh + y / kernel) * ow + xx / kernel] * inv;
    });
}

namespace {

struct Lerp {
    std::int64_t i0, i1;
    double t;
};

// Half-pixel-centre sampling (align_corners = false).
std::vector<Lerp> lerp_table(std::int64_t in, std::int64_t out, int factor) {
    std::vector<Lerp> table(static_cast<std::size_t>(out));
    for (std::int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
        if (src < 0.0) src = 0.0;
        auto i0 = static_cast<std::int64_t>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const std::int64_t i1 = std::min(i0 + 1, in - 1);
        table[static_cast<std::size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
    }
    return table;
}

}  // namespace

Var upsample_bilinear(const Var& x, int factor) {
    require_rank(x.value(), 4, "upsample_bilinear");
    if (factor < 1) throw ShapeError("upsample_bilinear: factor must be positive");
    if (factor == 1) return x;
    const Shape& s = x.shape();
    const std::int64_t nc = s[0] * s[1], h = s[2], w = s[3], oh = h * factor, ow = w * factor;
    auto ty = lerp_table(h, oh, factor);
    auto tx = lerp_table(w, ow, factor);
    Tensor out({s[0], s[1], oh, ow});
    for (std::int64_t i = 0; i < nc; ++i) {
        const double* p = x.value().data() + i * h * w;
        double* o = out.data() + i * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y) {
            const Lerp& ly = ty[static_cast<std::size_t>(y)];
            const double* r0 = p + ly.i0 * w;
            const double* r1 = p + ly.i1 * w;
            for (std::int64_t xx = 0; xx < ow; ++xx) {
                const Lerp& lx = tx[static_cast<std::size_t>(xx)];
                const double top = r0[lx.i0] + lx.t * (r0[lx.i1] - r0[lx.i0]);
                const double bot = r1[lx.i0] + lx.t * (r1[lx.i1] - r1[lx.i0]);
                o[y * ow + xx] = top + ly.t * (bot - top);
            }
        }
    }
    return make_result(std::move(out), {x}, [nc, h, w, oh, ow, ty, tx](Node& self) {
        double* gx = self.inputs[0]->grad_buffer().data();
        for (std::int64_t i = 0; i < nc; ++i) {
            double* g = gx + i * h * w;
            const double* go = self.grad.data() + i * oh * ow;
            for (std::int64_t y = 0; y < oh; ++y) {
                const Lerp& ly = ty[static_cast<std::size_t>(y)];
                for (std::int64_t xx = 0; xx < ow; ++xx) {
                    const Lerp& lx = tx[static_cast<std::size_t>(xx)];
                    const double v = go[y * ow + xx];
                    g[ly.i0 * w + lx.i0] += v * (1 - ly.t) * (1 - lx.t);
                    g[ly.i0 * w + lx.i1] += v * (1 - ly.t) * lx.t;
                    g[ly.i1 * w + lx.i0] += v * ly.t * (1 - lx.t);
                    g[ly.i1 * w + lx.i1] += v * ly.t * lx.t;
                }
            }
        }
    });
}

Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_rank(x.value(), 4, "layer_norm_channels");
    const Shape& s = x.shape();
    const std::int64_t n = s[0], c = s[1], plane = s[2] * s[3];
    if (gamma.value().numel() != c || beta.value().numel() != c) {
        throw ShapeError("layer_norm_channels: affine size does not match channels of " + to_string(s));
    }
    Tensor xhat(s);
    Tensor rstd({n, plane});
    Tensor out(s);
    std::vector<double> mean(static_cast<std::size_t>(plane)), var(static_cast<std::size_t>(plane));
    for (std::int64_t b = 0; b < n; ++b) {
        std::fill(mean.begin(), mean.end(), 0.0);
        std::fill(var.begin(), var.end(), 0.0);
        const double* xb = x.value().data() + b * c * plane;
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t j = 0; j < plane; ++j) mean[j] += xb[ch * plane + j];
        for (auto& m : mean) m /= static_cast<double>(c);
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t j = 0; j < plane; ++j) {
                const double d = xb[ch * plane + j] - mean[j];
                var[j] += d * d;
            }
        for (std::int64_t j = 0; j < plane; ++j) rstd[b * plane + j] = 1.0 / std::sqrt(var[j] / c + eps);
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double gm = gamma.value()[ch], bt = beta.value()[ch];
            for (std::int64_t j = 0; j < plane; ++j) {
                const std::int64_t idx = (b * c + ch) * plane + j;
                const double xh = (xb[ch * plane + j] - mean[j]) * rstd[b * plane + j];
                xhat[idx] = xh;
                out[idx] = xh * gm + bt;
            }
        }
    }
    return make_result(std::move(out), {x, gamma, beta}, [xhat = std::move(xhat), rstd = std::move(rstd), n, c,
                                                          plane](Node& self) {
        Node& nx = *self.inputs[0];
        Node& ng = *self.inputs[1];
        Node& nb = *self.inputs[2];
        double* gg = ng.requires_grad ? ng.grad_buffer().data() : nullptr;
        double* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
        double* gx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
        std::vector<double> m1(static_cast<std::size_t>(plane)), m2(static_cast<std::size_t>(plane));
        for (std::int64_t b = 0; b < n; ++b) {
            std::fill(m1.begin(), m1.end(), 0.0);
            std::fill(m2.begin(), m2.end(), 0.0);
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const double gm = ng.value[ch];
                for (std::int64_t j = 0; j < plane; ++j) {
                    const std::int64_t idx = (b * c + ch) * plane + j;
                    const double dy = self.grad[idx];
                    if (gg) gg[ch] += dy * xhat[idx];
                    if (gb) gb[ch] += dy;
                    const double dxh = dy * gm;
                    m1[j] += dxh;
                    m2[j] += dxh * xhat[idx];
                }
            }
            if (!gx) continue;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const double gm = ng.value[ch];
                for (std::int64_t j = 0; j < plane; ++j) {
                    const std::int64_t idx = (b * c + ch) * plane + j;
                    const double dxh = self.grad[idx] * gm;
                    gx[idx] += rstd[b * plane + j] * (dxh - m1[j] / c - xhat[idx] * m2[j] / c);
                }
            }
        }
    });
}

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps) {
    require_rank(x.value(), 4, "group_norm");
    const Shape& s = x.shape();
    const std::int64_t n = s[0], c = s[1], plane = s[2] * s[3];
    if (groups < 1 || c % groups != 0) {
        throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) +
                         " groups");
    }
    if (gamma.value().numel() != c || beta.value().numel() != c) {
        throw ShapeError("group_norm: affine size does not match channels of " + to_string(s));
    }
    const std::int64_t cg = c / groups, count = cg * plane;
    Tensor xhat(s);
    std::vector<double> rstd(static_cast<std::size_t>(n * groups));
    Tensor out(s);
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t gi = 0; gi < groups; ++gi) {
            const std::int64_t base = (b * c + gi * cg) * plane;
            const double* p = x.value().data() + base;
            double mean = 0.0;
            for (std::int64_t j = 0; j < count; ++j) mean += p[j];
            mean /= static_cast<double>(count);
            double var = 0.0;
            for (std::int64_t j = 0; j < count; ++j) var += (p[j] - mean) * (p[j] - mean);
            const double r = 1.0 / std::sqrt(var / count + eps);
            rstd[static_cast<std::size_t>(b * groups + gi)] = r;
            for (std::int64_t j = 0; j < count; ++j) {
                const std::int64_t ch = gi * cg + j / plane;
                const double xh = (p[j] - mean) * r;
                xhat[base + j] = xh;
                out[base + j] = xh * gamma.value()[ch] + beta.value()[ch];
            }
        }
    return make_result(std::move(out), {x, gamma, beta}, [xhat = std::move(xhat), rstd = std::move(rstd), n, c, plane,
                                                          groups, cg, count](Node& self) {
        Node& nx = *self.inputs[0];
        Node& ng = *self.inputs[1];
        Node& nb = *self.inputs[2];
        double* gg = ng.requires_grad ? ng.grad_buffer().data() : nullptr;
        double* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
        double* gx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
        for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t gi = 0; gi < groups; ++gi) {
                const std::int64_t base = (b * c + gi * cg) * plane;
                double m1 = 0.0, m2 = 0.0;
                for (std::int64_t j = 0; j < count; ++j) {
                    const std::int64_t ch = gi * cg + j / plane;
                    const double dy = self.grad[base + j];
                    if (gg) gg[ch] += dy * xhat[base + j];
                    if (gb) gb[ch] += dy;
                    const double dxh = dy * ng.value[ch];
                    m1 += dxh;
                    m2 += dxh * xhat[base + j];
                }
                if (!gx) continue;
                const double r = rstd[static_cast<std::size_t>(b * groups + gi)];
                for (std::int64_t j = 0; j < count; ++j) {
                    const std::int64_t ch = gi * cg + j / plane;
                    const double dxh = self.grad[base + j] * ng.value[ch];
                    gx[base + j] += r * (dxh - m1 / count - xhat[base + j] * m2 / count);
                }
            }
    });
}

Var bmm(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    require_rank(a.value(), 3, "bmm lhs");
    require_rank(b.value(), 3, "bmm rhs");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa[0] != sb[0]) throw ShapeError("bmm: batch mismatch " + to_string(sa) + " vs " + to_string(sb));
    const std::int64_t batch = sa[0];
    const std::int64_t m = trans_a ? sa[2] : sa[1];
    const std::int64_t k = trans_a ? sa[1] : sa[2];
    const std::int64_t kb = trans_b ? sb[2] : sb[1];
    const std::int64_t n = trans_b ? sb[1] : sb[2];
    if (k != kb) {
        throw ShapeError("bmm: inner dimensions differ for " + to_string(sa) + (trans_a ? "^T" : "") + " x " +
                         to_string(sb) + (trans_b ? "^T" : ""));
    }
    FlopCounter::record_macs(batch * m * n * k);
    Tensor out({batch, m, n});
    if (!FlopCounter::dry_run()) {
        for (std::int64_t i = 0; i < batch; ++i) {
            ConstMatMap am(a.value().data() + i * sa[1] * sa[2], sa[1], sa[2]);
            ConstMatMap bm(b.value().data() + i * sb[1] * sb[2], sb[1], sb[2]);
            MatMap om(out.data() + i * m * n, m, n);
            if (!trans_a && !trans_b) om.noalias() = am * bm;
            else if (trans_a && !trans_b) om.noalias() = am.transpose() * bm;
            else if (!trans_a && trans_b) om.noalias() = am * bm.transpose();
            else om.noalias() = am.transpose() * bm.transpose();
        }
    }
    return make_result(std::move(out), {a, b}, [trans_a, trans_b, batch, m, n](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        const Shape sa = na.value.shape();
        const Shape sb = nb.value.shape();
        for (std::int64_t i = 0; i < batch; ++i) {
            ConstMatMap g(self.grad.data() + i * m * n, m, n);
            ConstMatMap am(na.value.data() + i * sa[1] * sa[2], sa[1], sa[2]);
            ConstMatMap bm(nb.value.data() + i * sb[1] * sb[2], sb[1], sb[2]);
            if (na.requires_grad) {
                MatMap ga(na.grad_buffer().data() + i * sa[1] * sa[2], sa[1], sa[2]);
                // op(A) = G * op(B)^T
                if (!trans_a) {
                    if (!trans_b) ga.noalias() += g * bm.transpose();
                    else ga.noalias() += g * bm;
                } else {
                    if (!trans_b) ga.noalias() += bm * g.transpose();
                    else ga.noalias() += bm.transpose() * g.transpose();
                }
            }
            if (nb.requires_grad) {
                MatMap gb(nb.grad_buffer().data() + i * sb[1] * sb[2], sb[1], sb[2]);
                // op(B) = op(A)^T * G
                if (!trans_b) {
                    if (!trans_a) gb.noalias() += am.transpose() * g;
                    else gb.noalias() += am * g;
                } else {
                    if (!trans_a) gb.noalias() += g.transpose() * am;
                    else gb.noalias() += g.transpose() * am.transpose();
                }
            }
        }
    });
}

Var softmax_last(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() < 1) throw ShapeError("softmax_last: rank 0 input");
    const std::int64_t cols = xv.dim(-1);
    const std::int64_t rows = xv.numel() / std::max<std::int64_t>(cols, 1);
    Tensor out(xv.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* p = xv.data() + r * cols;
        double* o = out.data() + r * cols;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < cols; ++j) mx = std::max(mx, p[j]);
        double total = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) total += (o[j] = std::exp(p[j] - mx));
        for (std::int64_t j = 0; j < cols; ++j) o[j] /= total;
    }
    return make_result(std::move(out), {x}, [rows, cols](Node& self) {
        double* gx = self.inputs[0]->grad_buffer().data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * cols;
            const double* g = self.grad.data() + r * cols;
            double dot = 0.0;
            for (std::int64_t j = 0; j < cols; ++j) dot += g[j] * y[j];
            for (std::int64_t j = 0; j < cols; ++j) gx[r * cols + j] += y[j] * (g[j] - dot);
        }
    });
}

Var sum(const Var& x) {
    double acc = 0.0;
    for (double v : x.value().values()) acc += v;
    return make_result(Tensor({1}, acc), {x}, [](Node& self) {
        Tensor& gx = self.inputs[0]->grad_buffer();
        for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[0];
    });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var weighted_sum(const Var& x, const Tensor& weights) {
    require_same_shape(x.value(), weights, "weighted_sum");
    double acc = 0.0;
    for (std::int64_t i = 0; i < weights.numel(); ++i) acc += x.value()[i] * weights[i];
    return make_result(Tensor({1}, acc), {x}, [weights](Node& self) {
        Tensor& gx = self.inputs[0]->grad_buffer();
        for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[0] * weights[i];
    });
}

}  // namespace cgcce::ops
