#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sentdiff::kernels {

// Dense matrix kernels used by every forward and backward pass.
//
// Each kernel comes in two flavors: a plain serial reference (suffix
// `_serial`) and an OpenMP version that parallelizes over output rows.
// Both compute every output element with the identical reduction order,
// so results are bit-identical for any thread count. Tests assert this.
//
// Naming follows BLAS transposition conventions:
//   nn:  C[M,N] (+)= A[M,K] * B[K,N]
//   nt:  C[M,N] (+)= A[M,K] * B[N,K]^T
//   tn:  C[M,N] (+)= A[K,M]^T * B[K,N]

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

template <class T>
void gemm_nn_serial(T* c, const T* a, const T* b, int64_t m, int64_t k, int64_t n,
                    bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!accumulate) {
            for (int64_t j = 0; j < n; ++j) crow[j] = T{0};
        }
        const T* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void gemm_nn(T* c, const T* a, const T* b, int64_t m, int64_t k, int64_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!accumulate) {
            for (int64_t j = 0; j < n; ++j) crow[j] = T{0};
        }
        const T* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void gemm_nt_serial(T* c, const T* a, const T* b, int64_t m, int64_t k, int64_t n,
                    bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc{0};
            for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

template <class T>
void gemm_nt(T* c, const T* a, const T* b, int64_t m, int64_t k, int64_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc{0};
            for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

template <class T>
void gemm_tn_serial(T* c, const T* a, const T* b, int64_t m, int64_t k, int64_t n,
                    bool accumulate) {
    // C[i,j] = sum_p A[p,i] * B[p,j]; A is K x M, B is K x N.
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!accumulate) {
            for (int64_t j = 0; j < n; ++j) crow[j] = T{0};
        }
        for (int64_t p = 0; p < k; ++p) {
            const T av = a[p * m + i];
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void gemm_tn(T* c, const T* a, const T* b, int64_t m, int64_t k, int64_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!accumulate) {
            for (int64_t j = 0; j < n; ++j) crow[j] = T{0};
        }
        for (int64_t p = 0; p < k; ++p) {
            const T av = a[p * m + i];
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// Batched variants over a leading batch dimension; each batch slice is an
// independent GEMM. Parallelism is over (batch, row) pairs.

template <class T>
void bmm_nn(T* c, const T* a, const T* b, int64_t batch, int64_t m, int64_t k, int64_t n,
            bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t bi = 0; bi < batch * m; ++bi) {
        const int64_t bb = bi / m;
        const int64_t i = bi % m;
        const T* abase = a + bb * m * k + i * k;
        const T* bbase = b + bb * k * n;
        T* crow = c + bb * m * n + i * n;
        if (!accumulate) {
            for (int64_t j = 0; j < n; ++j) crow[j] = T{0};
        }
        for (int64_t p = 0; p < k; ++p) {
            const T av = abase[p];
            const T* brow = bbase + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void bmm_nt(T* c, const T* a, const T* b, int64_t batch, int64_t m, int64_t k, int64_t n,
            bool accumulate) {
    // C[b,i,j] = sum_p A[b,i,p] * B[b,j,p]; B is batch x N x K.
#pragma omp parallel for schedule(static)
    for (int64_t bi = 0; bi < batch * m; ++bi) {
        const int64_t bb = bi / m;
        const int64_t i = bi % m;
        const T* arow = a + bb * m * k + i * k;
        const T* bbase = b + bb * n * k;
        T* crow = c + bb * m * n + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = bbase + j * k;
            T acc{0};
            for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

template <class T>
void bmm_tn(T* c, const T* a, const T* b, int64_t batch, int64_t m, int64_t k, int64_t n,
            bool accumulate) {
    // C[b,i,j] = sum_p A[b,p,i] * B[b,p,j]; A is batch x K x M.
#pragma omp parallel for schedule(static)
    for (int64_t bi = 0; bi < batch * m; ++bi) {
        const int64_t bb = bi / m;
        const int64_t i = bi % m;
        const T* abase = a + bb * k * m;
        const T* bbase = b + bb * k * n;
        T* crow = c + bb * m * n + i * n;
        if (!accumulate) {
            for (int64_t j = 0; j < n; ++j) crow[j] = T{0};
        }
        for (int64_t p = 0; p < k; ++p) {
            const T av = abase[p * m + i];
            const T* brow = bbase + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace sentdiff::kernels
