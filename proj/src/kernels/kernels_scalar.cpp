#include "tsc/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace tsc::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_scalar(const double* w, std::size_t rows, std::size_t cols, const double* x,
                 const double* b, double* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = w + r * cols;
        double s = b ? b[r] : 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
        y[r] = s;
    }
}

void gemv_t_acc_scalar(const double* w, std::size_t rows, std::size_t cols, const double* dy,
                       double* dx) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double g = dy[r];
        if (g == 0.0) continue;
        const double* row = w + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dx[c] += g * row[c];
    }
}

void ger_acc_scalar(const double* dy, std::size_t rows, const double* x, std::size_t cols,
                    double* dw) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double g = dy[r];
        if (g == 0.0) continue;
        double* row = dw + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += g * x[c];
    }
}

void near_crossing_scalar(const double* gap, std::size_t n, double eps, double* out) {
    for (std::size_t h = 0; h + 1 < n; ++h) {
        const double a = gap[h];
        const double b = gap[h + 1];
        const double num = std::min(std::fabs(a), std::fabs(b));
        const double cross = std::max(0.0, -(a * b));
        out[h] = num / (eps + cross);
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable t{dot_scalar,        axpy_scalar,    gemv_scalar,
                               gemv_t_acc_scalar, ger_acc_scalar, near_crossing_scalar};
    return t;
}

}  // namespace tsc::kernels
