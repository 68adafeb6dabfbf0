#pragma once

#include <type_traits>

#include "hds/kernels_scalar.hpp"
#include "hds/simd.hpp"

namespace hds::simd {

// Dispatch layer: float stride-1 conv paths and elementwise ops go to the
// AVX2 variants when active; everything else runs the scalar reference.

template <class T>
void conv3d_forward(const T* xp, const T* w, const T* bias, T* y, const Conv3dDims& d) {
#ifdef HDS_HAVE_AVX2
    if constexpr (std::is_same_v<T, float>) {
        if (active_backend() == Backend::Avx2 && d.stride == 1) {
            avx2::conv3d_forward(xp, w, bias, y, d);
            return;
        }
    }
#endif
    scalar::conv3d_forward(xp, w, bias, y, d);
}

template <class T>
void conv3d_backward_input(const T* gy, const T* w, T* gxp, const Conv3dDims& d) {
#ifdef HDS_HAVE_AVX2
    if constexpr (std::is_same_v<T, float>) {
        if (active_backend() == Backend::Avx2 && d.stride == 1) {
            avx2::conv3d_backward_input(gy, w, gxp, d);
            return;
        }
    }
#endif
    scalar::conv3d_backward_input(gy, w, gxp, d);
}

template <class T>
void conv3d_backward_weight(const T* xp, const T* gy, T* gw, const Conv3dDims& d) {
#ifdef HDS_HAVE_AVX2
    if constexpr (std::is_same_v<T, float>) {
        if (active_backend() == Backend::Avx2 && d.stride == 1) {
            avx2::conv3d_backward_weight(xp, gy, gw, d);
            return;
        }
    }
#endif
    scalar::conv3d_backward_weight(xp, gy, gw, d);
}

template <class T>
void ew_add(const T* a, const T* b, T* out, int64_t n) {
#ifdef HDS_HAVE_AVX2
    if constexpr (std::is_same_v<T, float>) {
        if (active_backend() == Backend::Avx2) {
            avx2::add(a, b, out, n);
            return;
        }
    }
#endif
    scalar::add(a, b, out, n);
}

template <class T>
void ew_mul(const T* a, const T* b, T* out, int64_t n) {
#ifdef HDS_HAVE_AVX2
    if constexpr (std::is_same_v<T, float>) {
        if (active_backend() == Backend::Avx2) {
            avx2::mul(a, b, out, n);
            return;
        }
    }
#endif
    scalar::mul(a, b, out, n);
}

template <class T>
void ew_axpy(T alpha, const T* x, T* y, int64_t n) {
#ifdef HDS_HAVE_AVX2
    if constexpr (std::is_same_v<T, float>) {
        if (active_backend() == Backend::Avx2) {
            avx2::axpy(alpha, x, y, n);
            return;
        }
    }
#endif
    scalar::axpy(alpha, x, y, n);
}

}  // namespace hds::simd
