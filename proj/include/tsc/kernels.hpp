#pragma once

// Data-parallel inner loops used by the priority labeling pipeline and by the
// dense layers of the coordination network. Each kernel has a portable scalar
// reference and an AVX2/FMA variant; the variant is chosen once at startup
// from CPUID and can be pinned with set_backend() or TSC_SIMD=scalar.

#include <cstddef>
#include <span>
#include <string_view>

namespace tsc::kernels {

enum class Backend { Scalar, Avx2 };

struct KernelTable {
    double (*dot)(const double* a, const double* b, std::size_t n);
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // y = W x + b, W row-major (rows x cols). b may be null.
    void (*gemv)(const double* w, std::size_t rows, std::size_t cols, const double* x,
                 const double* b, double* y);
    // dx += W^T dy
    void (*gemv_t_acc)(const double* w, std::size_t rows, std::size_t cols, const double* dy,
                       double* dx);
    // dW += dy x^T
    void (*ger_acc)(const double* dy, std::size_t rows, const double* x, std::size_t cols,
                    double* dw);
    // out[h] = min(|g[h]|, |g[h+1]|) / (eps + max(0, -g[h] g[h+1])), h < n-1
    void (*near_crossing)(const double* gap, std::size_t n, double eps, double* out);
};

const KernelTable& scalar_table();
// Null when the binary was built without AVX2 support.
const KernelTable* avx2_table();

bool cpu_has_avx2();
Backend active_backend();
void set_backend(Backend b);
std::string_view backend_name(Backend b);
const KernelTable& table();

inline double dot(std::span<const double> a, std::span<const double> b) {
    return table().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    table().axpy(alpha, x.data(), y.data(), x.size());
}

inline void gemv(const double* w, std::size_t rows, std::size_t cols, std::span<const double> x,
                 const double* b, std::span<double> y) {
    table().gemv(w, rows, cols, x.data(), b, y.data());
}

inline void gemv_t_acc(const double* w, std::size_t rows, std::size_t cols,
                       std::span<const double> dy, std::span<double> dx) {
    table().gemv_t_acc(w, rows, cols, dy.data(), dx.data());
}

inline void ger_acc(std::span<const double> dy, std::span<const double> x, double* dw) {
    table().ger_acc(dy.data(), dy.size(), x.data(), x.size(), dw);
}

inline void near_crossing(std::span<const double> gap, double eps, std::span<double> out) {
    table().near_crossing(gap.data(), gap.size(), eps, out.data());
}

}  // namespace tsc::kernels
