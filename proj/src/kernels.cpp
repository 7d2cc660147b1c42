#include "hvsr/kernels.hpp"

#include "hvsr/error.hpp"

namespace hvsr::kernels {

namespace {

Backend g_backend = avx2::ops != nullptr && [] {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}() ? Backend::avx2 : Backend::scalar;

}  // namespace

bool avx2_supported() {
#if defined(__x86_64__) || defined(__i386__)
    return avx2::ops != nullptr && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend backend() { return g_backend; }

void set_backend(Backend b) {
    if (b == Backend::avx2 && !avx2_supported())
        throw ArgumentError("avx2 kernels are not available on this CPU/build");
    g_backend = b;
}

bool set_backend(const std::string& name) {
    if (name == "auto") {
        g_backend = avx2_supported() ? Backend::avx2 : Backend::scalar;
        return true;
    }
    if (name == "scalar") {
        g_backend = Backend::scalar;
        return true;
    }
    if (name == "avx2") {
        set_backend(Backend::avx2);
        return true;
    }
    return false;
}

const char* backend_name() { return g_backend == Backend::avx2 ? "avx2" : "scalar"; }

const Ops& active() { return g_backend == Backend::avx2 ? *avx2::ops : ref::ops; }

}  // namespace hvsr::kernels
