#include "hds/simd.hpp"

#include <cstdlib>
#include <cstring>

namespace hds::simd {

namespace {

Backend detect() {
    if (const char* env = std::getenv("HDS_SIMD")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
        if (std::strcmp(env, "avx2") == 0) return Backend::Avx2;
    }
#if defined(__x86_64__) || defined(__i386__)
    if (__builtin_cpu_supports("avx2")) return Backend::Avx2;
#endif
    return Backend::Scalar;
}

Backend g_backend = detect();

}  // namespace

Backend active_backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

std::string backend_name(Backend b) {
    return b == Backend::Avx2 ? "avx2" : "scalar";
}

}  // namespace hds::simd
