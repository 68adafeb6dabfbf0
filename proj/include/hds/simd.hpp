#pragma once

#include <cstdint>
#include <string>

namespace hds::simd {

enum class Backend { Scalar, Avx2 };

// Detected at first use; HDS_SIMD=scalar|avx2 overrides.
Backend active_backend();
void set_backend(Backend b);
std::string backend_name(Backend b);

struct Conv3dDims {
    int64_t n = 1;
    int64_t cin = 1, cout = 1;
    int64_t dp = 1, hp = 1, wp = 1;  // zero-padded input extents
    int64_t kd = 1, kh = 1, kw = 1;
    int64_t od = 1, oh = 1, ow = 1;
    int64_t stride = 1;
};

// AVX2 float kernels (stride-1 conv paths plus elementwise).
// Accumulation order matches the scalar reference bitwise: no FMA,
// identical loop nests, and the grad-weight reduction uses the same
// 8-lane blocked order on both backends.
namespace avx2 {
void conv3d_forward(const float* xp, const float* w, const float* bias, float* y,
                    const Conv3dDims& d);
void conv3d_backward_input(const float* gy, const float* w, float* gxp, const Conv3dDims& d);
void conv3d_backward_weight(const float* xp, const float* gy, float* gw, const Conv3dDims& d);
void add(const float* a, const float* b, float* out, int64_t n);
void mul(const float* a, const float* b, float* out, int64_t n);
void axpy(float alpha, const float* x, float* y, int64_t n);
}  // namespace avx2

}  // namespace hds::simd
