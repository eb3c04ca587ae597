// Compiled with -mavx2 -mfma. Nothing in this file may run before the
// dispatcher has confirmed CPU support.

#include "tsc/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

namespace tsc::kernels {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_avx2(const double* w, std::size_t rows, std::size_t cols, const double* x,
               const double* b, double* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        y[r] = (b ? b[r] : 0.0) + dot_avx2(w + r * cols, x, cols);
    }
}

void gemv_t_acc_avx2(const double* w, std::size_t rows, std::size_t cols, const double* dy,
                     double* dx) {
    for (std::size_t r = 0; r < rows; ++r) {
        if (dy[r] == 0.0) continue;
        axpy_avx2(dy[r], w + r * cols, dx, cols);
    }
}

void ger_acc_avx2(const double* dy, std::size_t rows, const double* x, std::size_t cols,
                  double* dw) {
    for (std::size_t r = 0; r < rows; ++r) {
        if (dy[r] == 0.0) continue;
        axpy_avx2(dy[r], x, dw + r * cols, cols);
    }
}

void near_crossing_avx2(const double* gap, std::size_t n, double eps, double* out) {
    if (n < 2) return;
    const std::size_t m = n - 1;
    const __m256d sign = _mm256_set1_pd(-0.0);
    const __m256d zero = _mm256_setzero_pd();
    const __m256d veps = _mm256_set1_pd(eps);
    std::size_t h = 0;
    for (; h + 4 <= m; h += 4) {
        const __m256d a = _mm256_loadu_pd(gap + h);
        const __m256d b = _mm256_loadu_pd(gap + h + 1);
        const __m256d num = _mm256_min_pd(_mm256_andnot_pd(sign, a), _mm256_andnot_pd(sign, b));
        // -(a*b) rounds identically to the scalar path; no fused multiply here.
        const __m256d cross = _mm256_max_pd(_mm256_xor_pd(_mm256_mul_pd(a, b), sign), zero);
        _mm256_storeu_pd(out + h, _mm256_div_pd(num, _mm256_add_pd(veps, cross)));
    }
    for (; h < m; ++h) {
        const double a = gap[h];
        const double b = gap[h + 1];
        out[h] = std::min(std::fabs(a), std::fabs(b)) / (eps + std::max(0.0, -(a * b)));
    }
}

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable t{dot_avx2,        axpy_avx2,    gemv_avx2,
                               gemv_t_acc_avx2, ger_acc_avx2, near_crossing_avx2};
    return &t;
}

}  // namespace tsc::kernels

#else

namespace tsc::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace tsc::kernels

#endif
