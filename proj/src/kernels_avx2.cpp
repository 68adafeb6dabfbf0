// AVX2 variants of the float kernels. Compiled with -mavx2 only (no FMA):
// every lane performs the same mul-then-add sequence as the scalar
// reference, so results are bitwise identical and equivalence-testable.

#include <immintrin.h>

#include "hds/simd.hpp"

namespace hds::simd::avx2 {

void conv3d_forward(const float* xp, const float* w, const float* bias, float* y,
                    const Conv3dDims& d) {
    const int64_t xplane = d.hp * d.wp;
    const int64_t xchan = d.dp * xplane;
    const int64_t kvol = d.kd * d.kh * d.kw;
    const int64_t ow8 = (d.ow / 8) * 8;
    for (int64_t n = 0; n < d.n; ++n) {
        const float* xn = xp + n * d.cin * xchan;
        for (int64_t co = 0; co < d.cout; ++co) {
            const float* wc = w + co * d.cin * kvol;
            float* yc = y + ((n * d.cout + co) * d.od) * d.oh * d.ow;
            const float b = bias ? bias[co] : 0.0f;
            const __m256 vb = _mm256_set1_ps(b);
            for (int64_t od = 0; od < d.od; ++od)
                for (int64_t oh = 0; oh < d.oh; ++oh) {
                    float* yrow = yc + (od * d.oh + oh) * d.ow;
                    for (int64_t ow = 0; ow < ow8; ow += 8) {
                        __m256 acc = vb;
                        for (int64_t ci = 0; ci < d.cin; ++ci) {
                            const float* xc = xn + ci * xchan;
                            const float* wk = wc + ci * kvol;
                            for (int64_t kd = 0; kd < d.kd; ++kd)
                                for (int64_t kh = 0; kh < d.kh; ++kh) {
                                    const float* xrow = xc + (od + kd) * xplane +
                                                        (oh + kh) * d.wp + ow;
                                    const float* wrow = wk + (kd * d.kh + kh) * d.kw;
                                    for (int64_t kw = 0; kw < d.kw; ++kw) {
                                        __m256 xv = _mm256_loadu_ps(xrow + kw);
                                        __m256 wv = _mm256_set1_ps(wrow[kw]);
                                        acc = _mm256_add_ps(acc, _mm256_mul_ps(wv, xv));
                                    }
                                }
                        }
                        _mm256_storeu_ps(yrow + ow, acc);
                    }
                    for (int64_t ow = ow8; ow < d.ow; ++ow) {
                        float acc = b;
                        for (int64_t ci = 0; ci < d.cin; ++ci) {
                            const float* xc = xn + ci * xchan;
                            const float* wk = wc + ci * kvol;
                            for (int64_t kd = 0; kd < d.kd; ++kd)
                                for (int64_t kh = 0; kh < d.kh; ++kh) {
                                    const float* xrow = xc + (od + kd) * xplane +
                                                        (oh + kh) * d.wp + ow;
                                    const float* wrow = wk + (kd * d.kh + kh) * d.kw;
                                    for (int64_t kw = 0; kw < d.kw; ++kw)
                                        acc += wrow[kw] * xrow[kw];
                                }
                        }
                        yrow[ow] = acc;
                    }
                }
        }
    }
}

void conv3d_backward_input(const float* gy, const float* w, float* gxp, const Conv3dDims& d) {
    const int64_t xplane = d.hp * d.wp;
    const int64_t xchan = d.dp * xplane;
    const int64_t kvol = d.kd * d.kh * d.kw;
    const int64_t ow8 = (d.ow / 8) * 8;
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t co = 0; co < d.cout; ++co) {
            const float* gyc = gy + ((n * d.cout + co) * d.od) * d.oh * d.ow;
            const float* wc = w + co * d.cin * kvol;
            for (int64_t od = 0; od < d.od; ++od)
                for (int64_t oh = 0; oh < d.oh; ++oh) {
                    const float* gyrow = gyc + (od * d.oh + oh) * d.ow;
                    for (int64_t ci = 0; ci < d.cin; ++ci) {
                        float* gxc = gxp + (n * d.cin + ci) * xchan;
                        const float* wk = wc + ci * kvol;
                        for (int64_t kd = 0; kd < d.kd; ++kd)
                            for (int64_t kh = 0; kh < d.kh; ++kh) {
                                float* gxrow = gxc + (od + kd) * xplane + (oh + kh) * d.wp;
                                const float* wrow = wk + (kd * d.kh + kh) * d.kw;
                                for (int64_t kw = 0; kw < d.kw; ++kw) {
                                    const __m256 wv = _mm256_set1_ps(wrow[kw]);
                                    for (int64_t ow = 0; ow < ow8; ow += 8) {
                                        __m256 gv = _mm256_loadu_ps(gyrow + ow);
                                        __m256 xv = _mm256_loadu_ps(gxrow + ow + kw);
                                        xv = _mm256_add_ps(xv, _mm256_mul_ps(wv, gv));
                                        _mm256_storeu_ps(gxrow + ow + kw, xv);
                                    }
                                    for (int64_t ow = ow8; ow < d.ow; ++ow)
                                        gxrow[ow + kw] += wrow[kw] * gyrow[ow];
                                }
                            }
                    }
                }
        }
}

void conv3d_backward_weight(const float* xp, const float* gy, float* gw, const Conv3dDims& d) {
    const int64_t xplane = d.hp * d.wp;
    const int64_t xchan = d.dp * xplane;
    const int64_t kvol = d.kd * d.kh * d.kw;
    const int64_t ow8 = (d.ow / 8) * 8;
    for (int64_t co = 0; co < d.cout; ++co)
        for (int64_t ci = 0; ci < d.cin; ++ci)
            for (int64_t kd = 0; kd < d.kd; ++kd)
                for (int64_t kh = 0; kh < d.kh; ++kh)
                    for (int64_t kw = 0; kw < d.kw; ++kw) {
                        __m256 lane = _mm256_setzero_ps();
                        float tail = 0.0f;
                        for (int64_t n = 0; n < d.n; ++n) {
                            const float* xc = xp + (n * d.cin + ci) * xchan;
                            const float* gyc = gy + ((n * d.cout + co) * d.od) * d.oh * d.ow;
                            for (int64_t od = 0; od < d.od; ++od)
                                for (int64_t oh = 0; oh < d.oh; ++oh) {
                                    const float* xrow = xc + (od + kd) * xplane +
                                                        (oh + kh) * d.wp + kw;
                                    const float* gyrow = gyc + (od * d.oh + oh) * d.ow;
                                    for (int64_t ow = 0; ow < ow8; ow += 8) {
                                        __m256 xv = _mm256_loadu_ps(xrow + ow);
                                        __m256 gv = _mm256_loadu_ps(gyrow + ow);
                                        lane = _mm256_add_ps(lane, _mm256_mul_ps(xv, gv));
                                    }
                                    for (int64_t ow = ow8; ow < d.ow; ++ow)
                                        tail += xrow[ow] * gyrow[ow];
                                }
                        }
                        // left-to-right lane combine, matching the reference
                        alignas(32) float l[8];
                        _mm256_store_ps(l, lane);
                        float acc = l[0];
                        for (int i = 1; i < 8; ++i) acc += l[i];
                        gw[(co * d.cin + ci) * kvol + (kd * d.kh + kh) * d.kw + kw] += acc + tail;
                    }
}

void add(const float* a, const float* b, float* out, int64_t n) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul(const float* a, const float* b, float* out, int64_t n) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy(float alpha, const float* x, float* y, int64_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 yv = _mm256_loadu_ps(y + i);
        yv = _mm256_add_ps(yv, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
        _mm256_storeu_ps(y + i, yv);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace hds::simd::avx2
