#include <cmath>

#include "metaptq/tensor.hpp"

// Convolution family, stride 1, zero padding, cross-correlation layout
// x:[N,C,H,W], w:[O,C,kh,kw]. The three ops (forward, input-gradient,
// weight-gradient) are closed under differentiation: every backward rule
// is one of the other two, which is what makes second-order use work.

namespace metaptq {

namespace {

void conv_check_4d(const Tensor& t, const char* name) {
    if (t.shape().size() != 4) {
        throw NumericError(std::string("conv2d: ") + name + " must be 4-d, got " + shape_str(t.shape()));
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int64_t pad) {
    conv_check_4d(x, "input");
    conv_check_4d(w, "weight");
    int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
    int64_t o = w.shape()[0], kc = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    if (c != kc) throw NumericError("conv2d: channel mismatch");
    int64_t ho = h + 2 * pad - kh + 1;
    int64_t wo = wd + 2 * pad - kw + 1;
    if (ho <= 0 || wo <= 0) throw NumericError("conv2d: kernel larger than padded input");
    std::vector<double> out(n * o * ho * wo, 0.0);
    const auto& xv = x.values();
    const auto& wv = w.values();
    for (int64_t in = 0; in < n; ++in) {
        for (int64_t io = 0; io < o; ++io) {
            double* optr = out.data() + (in * o + io) * ho * wo;
            for (int64_t ic = 0; ic < c; ++ic) {
                const double* xptr = xv.data() + (in * c + ic) * h * wd;
                const double* wptr = wv.data() + (io * c + ic) * kh * kw;
                for (int64_t u = 0; u < kh; ++u) {
                    for (int64_t v = 0; v < kw; ++v) {
                        double wk = wptr[u * kw + v];
                        if (wk == 0.0) continue;
                        for (int64_t i = 0; i < ho; ++i) {
                            int64_t xi = i + u - pad;
                            if (xi < 0 || xi >= h) continue;
                            int64_t j0 = std::max<int64_t>(0, pad - v);
                            int64_t j1 = std::min<int64_t>(wo, wd + pad - v);
                            const double* xrow = xptr + xi * wd + (j0 + v - pad);
                            double* orow = optr + i * wo + j0;
                            for (int64_t j = j0; j < j1; ++j) *orow++ += wk * *xrow++;
                        }
                    }
                }
            }
        }
    }
    return make_op(Shape{n, o, ho, wo}, std::move(out), {x, w},
                   [x, w, pad, kh, kw](const Tensor&, const Tensor& cot) {
                       return std::vector<Tensor>{conv2d_input_grad(cot, w, pad),
                                                  conv2d_weight_grad(x, cot, pad, kh, kw)};
                   });
}

Tensor conv2d_input_grad(const Tensor& gy, const Tensor& w, int64_t pad) {
    conv_check_4d(gy, "output-grad");
    conv_check_4d(w, "weight");
    int64_t n = gy.shape()[0], o = gy.shape()[1], ho = gy.shape()[2], wo = gy.shape()[3];
    int64_t ko = w.shape()[0], c = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    if (o != ko) throw NumericError("conv2d_input_grad: output-channel mismatch");
    int64_t h = ho + kh - 1 - 2 * pad;
    int64_t wd = wo + kw - 1 - 2 * pad;
    if (h <= 0 || wd <= 0) throw NumericError("conv2d_input_grad: degenerate input size");
    std::vector<double> out(n * c * h * wd, 0.0);
    const auto& gv = gy.values();
    const auto& wv = w.values();
    for (int64_t in = 0; in < n; ++in) {
        for (int64_t ic = 0; ic < c; ++ic) {
            double* optr = out.data() + (in * c + ic) * h * wd;
            for (int64_t io = 0; io < o; ++io) {
                const double* gptr = gv.data() + (in * o + io) * ho * wo;
                const double* wptr = wv.data() + (io * c + ic) * kh * kw;
                for (int64_t u = 0; u < kh; ++u) {
                    for (int64_t v = 0; v < kw; ++v) {
                        double wk = wptr[u * kw + v];
                        if (wk == 0.0) continue;
                        // gx[a,b] += gy[a-u+pad, b-v+pad] * w[u,v]
                        for (int64_t a = 0; a < h; ++a) {
                            int64_t gi = a - u + pad;
                            if (gi < 0 || gi >= ho) continue;
                            int64_t b0 = std::max<int64_t>(0, v - pad);
                            int64_t b1 = std::min<int64_t>(wd, wo + v - pad);
                            const double* grow = gptr + gi * wo + (b0 - v + pad);
                            double* orow = optr + a * wd + b0;
                            for (int64_t b = b0; b < b1; ++b) *orow++ += wk * *grow++;
                        }
                    }
                }
            }
        }
    }
    return make_op(Shape{n, c, h, wd}, std::move(out), {gy, w},
                   [gy, w, pad, kh, kw](const Tensor&, const Tensor& cot) {
                       return std::vector<Tensor>{conv2d(cot, w, pad),
                                                  conv2d_weight_grad(cot, gy, pad, kh, kw)};
                   });
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, int64_t pad, int64_t kh, int64_t kw) {
    conv_check_4d(x, "input");
    conv_check_4d(gy, "output-grad");
    int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
    int64_t gn = gy.shape()[0], o = gy.shape()[1], ho = gy.shape()[2], wo = gy.shape()[3];
    if (n != gn) throw NumericError("conv2d_weight_grad: batch mismatch");
    if (ho != h + 2 * pad - kh + 1 || wo != wd + 2 * pad - kw + 1) {
        throw NumericError("conv2d_weight_grad: inconsistent spatial sizes");
    }
    std::vector<double> out(o * c * kh * kw, 0.0);
    const auto& xv = x.values();
    const auto& gv = gy.values();
    for (int64_t in = 0; in < n; ++in) {
        for (int64_t io = 0; io < o; ++io) {
            const double* gptr = gv.data() + (in * o + io) * ho * wo;
            for (int64_t ic = 0; ic < c; ++ic) {
                const double* xptr = xv.data() + (in * c + ic) * h * wd;
                double* optr = out.data() + (io * c + ic) * kh * kw;
                for (int64_t u = 0; u < kh; ++u) {
                    for (int64_t v = 0; v < kw; ++v) {
                        double acc = 0.0;
                        for (int64_t i = 0; i < ho; ++i) {
                            int64_t xi = i + u - pad;
                            if (xi < 0 || xi >= h) continue;
                            int64_t j0 = std::max<int64_t>(0, pad - v);
                            int64_t j1 = std::min<int64_t>(wo, wd + pad - v);
                            const double* xrow = xptr + xi * wd + (j0 + v - pad);
                            const double* grow = gptr + i * wo + j0;
                            for (int64_t j = j0; j < j1; ++j) acc += *xrow++ * *grow++;
                        }
                        optr[u * kw + v] += acc;
                    }
                }
            }
        }
    }
    return make_op(Shape{o, c, kh, kw}, std::move(out), {x, gy},
                   [x, gy, pad](const Tensor&, const Tensor& cot) {
                       return std::vector<Tensor>{conv2d_input_grad(gy, cot, pad), conv2d(x, cot, pad)};
                   });
}

Tensor avg_pool2(const Tensor& x) {
    conv_check_4d(x, "input");
    int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (h % 2 != 0 || w % 2 != 0) throw NumericError("avg_pool2: spatial size must be even");
    int64_t ho = h / 2, wo = w / 2;
    std::vector<double> out(n * c * ho * wo);
    const auto& xv = x.values();
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const double* xp = xv.data() + nc * h * w;
        double* op = out.data() + nc * ho * wo;
        for (int64_t i = 0; i < ho; ++i)
            for (int64_t j = 0; j < wo; ++j) {
                op[i * wo + j] = 0.25 * (xp[(2 * i) * w + 2 * j] + xp[(2 * i) * w + 2 * j + 1] +
                                         xp[(2 * i + 1) * w + 2 * j] + xp[(2 * i + 1) * w + 2 * j + 1]);
            }
    }
    return make_op(Shape{n, c, ho, wo}, std::move(out), {x}, [](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{scale(upsample_nearest2(cot), 0.25)};
    });
}

Tensor upsample_nearest2(const Tensor& x) {
    conv_check_4d(x, "input");
    int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    int64_t ho = 2 * h, wo = 2 * w;
    std::vector<double> out(n * c * ho * wo);
    const auto& xv = x.values();
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const double* xp = xv.data() + nc * h * w;
        double* op = out.data() + nc * ho * wo;
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) {
                double v = xp[i * w + j];
                op[(2 * i) * wo + 2 * j] = v;
                op[(2 * i) * wo + 2 * j + 1] = v;
                op[(2 * i + 1) * wo + 2 * j] = v;
                op[(2 * i + 1) * wo + 2 * j + 1] = v;
            }
    }
    return make_op(Shape{n, c, ho, wo}, std::move(out), {x}, [](const Tensor&, const Tensor& cot) {
        return std::vector<Tensor>{scale(avg_pool2(cot), 4.0)};
    });
}

}  // namespace metaptq
