#pragma once

#include <cmath>

#include "hds/autodiff.hpp"

namespace hds::seg {

using ad::Var;

// Volume-normalized soft K-means consistency of a representation h under a
// soft mask M, averaged over the batch:
//   C = (1/Nvox) sum_k sum_u M_ku ||z_k - h_u||^2,
//   z_k = sum_u M_ku h_u / sum_u M_ku.
// Parts with soft mass below the guard contribute zero (their centroid is
// undefined; zeroing keeps the loss continuous).
//
// Custom backward. Because sum_u M_ku (z_k - h_u) = 0 at the centroid, the
// z-dependence drops out of both derivatives:
//   dC/dM_ku   = ||z_k - h_u||^2 / Nvox
//   dC/dh_uc   = (2/Nvox) sum_k M_ku (h_uc - z_kc)
template <class T>
Var<T> consistency(const Var<T>& h, const Var<T>& m, T mass_guard = T(1e-8)) {
    const auto& hs = h->value.shape;
    const auto& ms = m->value.shape;
    check_shape(hs.size() >= 3 && ms.size() >= 3, "consistency: expected [N,C,spatial] inputs");
    check_shape(hs[0] == ms[0], "consistency: batch mismatch");
    int64_t nb, p, sp, k, msp;
    ad::detail::ncs(h->value, nb, p, sp);
    {
        int64_t tmp;
        ad::detail::ncs(m->value, tmp, k, msp);
    }
    check_shape(sp == msp, "consistency: spatial extents differ, " + shape_str(hs) + " vs " +
                               shape_str(ms));

    // centroids [nb, k, p] and masses [nb, k]
    std::vector<double> cent(static_cast<size_t>(nb * k * p), 0.0);
    std::vector<double> mass(static_cast<size_t>(nb * k), 0.0);
    for (int64_t b = 0; b < nb; ++b)
        for (int64_t kk = 0; kk < k; ++kk) {
            const T* mrow = m->value.ptr() + (b * k + kk) * sp;
            double* c = cent.data() + (b * k + kk) * p;
            double ms_acc = 0.0;
            for (int64_t u = 0; u < sp; ++u) {
                const double w = mrow[u];
                ms_acc += w;
                for (int64_t c_i = 0; c_i < p; ++c_i)
                    c[c_i] += w * h->value[(b * p + c_i) * sp + u];
            }
            mass[static_cast<size_t>(b * k + kk)] = ms_acc;
            if (ms_acc >= mass_guard)
                for (int64_t c_i = 0; c_i < p; ++c_i) c[c_i] /= ms_acc;
        }

    double total = 0.0;
    for (int64_t b = 0; b < nb; ++b) {
        double cb = 0.0;
        for (int64_t kk = 0; kk < k; ++kk) {
            if (mass[static_cast<size_t>(b * k + kk)] < mass_guard) continue;
            const T* mrow = m->value.ptr() + (b * k + kk) * sp;
            const double* c = cent.data() + (b * k + kk) * p;
            for (int64_t u = 0; u < sp; ++u) {
                double d2 = 0.0;
                for (int64_t c_i = 0; c_i < p; ++c_i) {
                    const double d = c[c_i] - static_cast<double>(h->value[(b * p + c_i) * sp + u]);
                    d2 += d * d;
                }
                cb += static_cast<double>(mrow[u]) * d2;
            }
        }
        total += cb / static_cast<double>(sp);
    }
    TensorT<T> out(Shape{1});
    out[0] = static_cast<T>(total / static_cast<double>(nb));

    auto cent_s = std::make_shared<std::vector<double>>(std::move(cent));
    auto mass_s = std::make_shared<std::vector<double>>(std::move(mass));
    return ad::detail::make_op<T>(
        std::move(out), {h, m},
        [h, m, nb, p, sp, k, cent_s, mass_s, mass_guard](ad::Node<T>& nd) {
            const T g = nd.grad[0];
            const double norm = static_cast<double>(g) /
                                (static_cast<double>(sp) * static_cast<double>(nb));
            if (m->requires_grad) m->ensure_grad();
            if (h->requires_grad) h->ensure_grad();
            for (int64_t b = 0; b < nb; ++b)
                for (int64_t kk = 0; kk < k; ++kk) {
                    if ((*mass_s)[static_cast<size_t>(b * k + kk)] < mass_guard) continue;
                    const T* mrow = m->value.ptr() + (b * k + kk) * sp;
                    const double* c = cent_s->data() + (b * k + kk) * p;
                    for (int64_t u = 0; u < sp; ++u) {
                        double d2 = 0.0;
                        for (int64_t c_i = 0; c_i < p; ++c_i) {
                            const double d =
                                c[c_i] - static_cast<double>(h->value[(b * p + c_i) * sp + u]);
                            d2 += d * d;
                            if (h->requires_grad)
                                h->grad[(b * p + c_i) * sp + u] +=
                                    static_cast<T>(-2.0 * norm * mrow[u] * d);
                        }
                        if (m->requires_grad)
                            m->grad[(b * k + kk) * sp + u] += static_cast<T>(norm * d2);
                    }
                }
        });
}

// Eq-style feature consistency: the feature volume is a frozen input, so
// gradients flow into the mask only.
template <class T>
Var<T> loss_f(const Var<T>& m, const TensorT<T>& features) {
    return consistency(ad::constant(features), m);
}

// Visual consistency: identity feature extractor, image as 1-channel features.
template <class T>
Var<T> loss_v(const Var<T>& m, const TensorT<T>& image_nc) {
    return consistency(ad::constant(image_nc), m);
}

// Soft Dice disagreement between two masks:
//   1 - (1/K) sum_k 2 sum_u a b / (sum_u a^2 + sum_u b^2 + 1e-8)
// Symmetric, in [0,1], zero iff the masks agree.
template <class T>
Var<T> loss_inv(const Var<T>& ma, const Var<T>& mb) {
    check_shape(ma->value.shape == mb->value.shape,
                "loss_inv: shape mismatch " + shape_str(ma->value.shape) + " vs " +
                    shape_str(mb->value.shape));
    int64_t nb, k, sp;
    ad::detail::ncs(ma->value, nb, k, sp);
    auto num = ad::scale(ad::spatial_sum(ad::mul(ma, mb)), T(2));
    auto den = ad::add_scalar(
        ad::add(ad::spatial_sum(ad::mul(ma, ma)), ad::spatial_sum(ad::mul(mb, mb))), T(1e-8));
    auto dice = ad::sum(ad::div(num, den));
    return ad::add_scalar(ad::scale(dice, T(-1) / static_cast<T>(nb * k)), T(1));
}

struct LossWeights {
    double lambda_v = 1.0;
    double lambda_f = 1.0;
    double lambda_inv = 1.0;

    void validate() const {
        if (lambda_v < 0 || lambda_f < 0 || lambda_inv < 0)
            throw std::invalid_argument("loss weights must be non-negative");
    }
};

struct LossBreakdown {
    double lv = 0, lf = 0, linv = 0, total = 0;
};

}  // namespace hds::seg
