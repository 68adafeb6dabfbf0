#pragma once

#include "hds/simd.hpp"

namespace hds::simd::scalar {

// Reference kernels. The AVX2 variants reproduce these bitwise, so the
// loop nests here define the canonical accumulation order.

template <class T>
void conv3d_forward(const T* xp, const T* w, const T* bias, T* y, const Conv3dDims& d) {
    const int64_t xplane = d.hp * d.wp;
    const int64_t xchan = d.dp * xplane;
    const int64_t yrow = d.ow;
    const int64_t kvol = d.kd * d.kh * d.kw;
    for (int64_t n = 0; n < d.n; ++n) {
        const T* xn = xp + n * d.cin * xchan;
        for (int64_t co = 0; co < d.cout; ++co) {
            const T* wc = w + co * d.cin * kvol;
            T* yc = y + ((n * d.cout + co) * d.od) * d.oh * d.ow;
            const T b = bias ? bias[co] : T(0);
            for (int64_t od = 0; od < d.od; ++od)
                for (int64_t oh = 0; oh < d.oh; ++oh)
                    for (int64_t ow = 0; ow < d.ow; ++ow) {
                        T acc = b;
                        for (int64_t ci = 0; ci < d.cin; ++ci) {
                            const T* xc = xn + ci * xchan;
                            const T* wk = wc + ci * kvol;
                            for (int64_t kd = 0; kd < d.kd; ++kd)
                                for (int64_t kh = 0; kh < d.kh; ++kh) {
                                    const T* xrow = xc + (od * d.stride + kd) * xplane +
                                                    (oh * d.stride + kh) * d.wp +
                                                    ow * d.stride;
                                    const T* wrow = wk + (kd * d.kh + kh) * d.kw;
                                    for (int64_t kw = 0; kw < d.kw; ++kw)
                                        acc += wrow[kw] * xrow[kw];
                                }
                        }
                        yc[(od * d.oh + oh) * yrow + ow] = acc;
                    }
        }
    }
}

template <class T>
void conv3d_backward_input(const T* gy, const T* w, T* gxp, const Conv3dDims& d) {
    const int64_t xplane = d.hp * d.wp;
    const int64_t xchan = d.dp * xplane;
    const int64_t kvol = d.kd * d.kh * d.kw;
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t co = 0; co < d.cout; ++co) {
            const T* gyc = gy + ((n * d.cout + co) * d.od) * d.oh * d.ow;
            const T* wc = w + co * d.cin * kvol;
            for (int64_t od = 0; od < d.od; ++od)
                for (int64_t oh = 0; oh < d.oh; ++oh) {
                    const T* gyrow = gyc + (od * d.oh + oh) * d.ow;
                    for (int64_t ci = 0; ci < d.cin; ++ci) {
                        T* gxc = gxp + (n * d.cin + ci) * xchan;
                        const T* wk = wc + ci * kvol;
                        for (int64_t kd = 0; kd < d.kd; ++kd)
                            for (int64_t kh = 0; kh < d.kh; ++kh) {
                                T* gxrow = gxc + (od * d.stride + kd) * xplane +
                                           (oh * d.stride + kh) * d.wp;
                                const T* wrow = wk + (kd * d.kh + kh) * d.kw;
                                for (int64_t kw = 0; kw < d.kw; ++kw)
                                    for (int64_t ow = 0; ow < d.ow; ++ow)
                                        gxrow[ow * d.stride + kw] += wrow[kw] * gyrow[ow];
                            }
                    }
                }
        }
}

// Reduction over output positions uses an 8-lane blocked order: lanes
// accumulate chunks of 8 along the output rows, remainders go to a tail
// accumulator, lanes are combined left to right at the end. This is the
// documented order the AVX2 kernel reproduces exactly.
template <class T>
void conv3d_backward_weight(const T* xp, const T* gy, T* gw, const Conv3dDims& d) {
    const int64_t xplane = d.hp * d.wp;
    const int64_t xchan = d.dp * xplane;
    const int64_t kvol = d.kd * d.kh * d.kw;
    const int64_t wo8 = (d.ow / 8) * 8;
    for (int64_t co = 0; co < d.cout; ++co)
        for (int64_t ci = 0; ci < d.cin; ++ci)
            for (int64_t kd = 0; kd < d.kd; ++kd)
                for (int64_t kh = 0; kh < d.kh; ++kh)
                    for (int64_t kw = 0; kw < d.kw; ++kw) {
                        T lane[8] = {};
                        T tail = T(0);
                        for (int64_t n = 0; n < d.n; ++n) {
                            const T* xc = xp + (n * d.cin + ci) * xchan;
                            const T* gyc = gy + ((n * d.cout + co) * d.od) * d.oh * d.ow;
                            for (int64_t od = 0; od < d.od; ++od)
                                for (int64_t oh = 0; oh < d.oh; ++oh) {
                                    const T* xrow = xc + (od * d.stride + kd) * xplane +
                                                    (oh * d.stride + kh) * d.wp + kw;
                                    const T* gyrow = gyc + (od * d.oh + oh) * d.ow;
                                    for (int64_t ow = 0; ow < wo8; ow += 8)
                                        for (int64_t l = 0; l < 8; ++l)
                                            lane[l] += xrow[(ow + l) * d.stride] * gyrow[ow + l];
                                    for (int64_t ow = wo8; ow < d.ow; ++ow)
                                        tail += xrow[ow * d.stride] * gyrow[ow];
                                }
                        }
                        T acc = lane[0];
                        for (int l = 1; l < 8; ++l) acc += lane[l];
                        gw[(co * d.cin + ci) * kvol + (kd * d.kh + kh) * d.kw + kw] += acc + tail;
                    }
}

template <class T>
void add(const T* a, const T* b, T* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
void mul(const T* a, const T* b, T* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
void axpy(T alpha, const T* x, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace hds::simd::scalar
