#include "tsc/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace tsc::kernels {
namespace {

Backend detect() {
    if (const char* env = std::getenv("TSC_SIMD"); env && std::strcmp(env, "scalar") == 0)
        return Backend::Scalar;
    return (cpu_has_avx2() && avx2_table()) ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<const KernelTable*>& current() {
    static std::atomic<const KernelTable*> t{detect() == Backend::Avx2 ? avx2_table()
                                                                        : &scalar_table()};
    return t;
}

}  // namespace

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend active_backend() {
    return current().load(std::memory_order_relaxed) == &scalar_table() ? Backend::Scalar
                                                                        : Backend::Avx2;
}

void set_backend(Backend b) {
    if (b == Backend::Avx2 && (!cpu_has_avx2() || !avx2_table())) b = Backend::Scalar;
    current().store(b == Backend::Avx2 ? avx2_table() : &scalar_table(),
                    std::memory_order_relaxed);
}

std::string_view backend_name(Backend b) { return b == Backend::Avx2 ? "avx2" : "scalar"; }

const KernelTable& table() { return *current().load(std::memory_order_relaxed); }

}  // namespace tsc::kernels
