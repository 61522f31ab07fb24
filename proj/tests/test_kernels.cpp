#include <vector>

#include "doctest.h"
#include "sentdiff/kernels.hpp"
#include "sentdiff/rng.hpp"

using namespace sentdiff;

namespace {

std::vector<double> random_matrix(int64_t rows, int64_t cols, uint64_t seed) {
    rng::Stream stream(seed);
    std::vector<double> m(static_cast<size_t>(rows * cols));
    for (auto& v : m) v = stream.next_normal();
    return m;
}

// Textbook triple loop, no blocking, used as the oracle.
std::vector<double> naive_nn(const std::vector<double>& a, const std::vector<double>& b,
                             int64_t m, int64_t k, int64_t n) {
    std::vector<double> c(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            for (int64_t p = 0; p < k; ++p)
                c[static_cast<size_t>(i * n + j)] +=
                    a[static_cast<size_t>(i * k + p)] * b[static_cast<size_t>(p * n + j)];
    return c;
}

}  // namespace

TEST_CASE("gemm_nn matches the naive oracle") {
    const int64_t m = 17, k = 23, n = 13;
    const auto a = random_matrix(m, k, 1);
    const auto b = random_matrix(k, n, 2);
    const auto expected = naive_nn(a, b, m, k, n);
    std::vector<double> c(static_cast<size_t>(m * n));
    kernels::gemm_nn(c.data(), a.data(), b.data(), m, k, n, false);
    for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("gemm_nt and gemm_tn agree with explicit transposition") {
    const int64_t m = 9, k = 15, n = 11;
    const auto a = random_matrix(m, k, 3);
    const auto b = random_matrix(n, k, 4);  // nt: b is n x k
    std::vector<double> bt(static_cast<size_t>(k * n));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < k; ++j) bt[static_cast<size_t>(j * n + i)] = b[static_cast<size_t>(i * k + j)];
    const auto expected = naive_nn(a, bt, m, k, n);
    std::vector<double> c(static_cast<size_t>(m * n));
    kernels::gemm_nt(c.data(), a.data(), b.data(), m, k, n, false);
    for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(expected[i]).epsilon(1e-12));

    // tn: computes a2^T * b2 with a2 stored k2 x m2
    const int64_t m2 = 8, k2 = 12, n2 = 10;
    const auto a2 = random_matrix(k2, m2, 5);
    const auto b2 = random_matrix(k2, n2, 6);
    std::vector<double> a2t(static_cast<size_t>(m2 * k2));
    for (int64_t i = 0; i < k2; ++i)
        for (int64_t j = 0; j < m2; ++j)
            a2t[static_cast<size_t>(j * k2 + i)] = a2[static_cast<size_t>(i * m2 + j)];
    const auto expected2 = naive_nn(a2t, b2, m2, k2, n2);
    std::vector<double> c2(static_cast<size_t>(m2 * n2));
    kernels::gemm_tn(c2.data(), a2.data(), b2.data(), m2, k2, n2, false);
    for (size_t i = 0; i < c2.size(); ++i)
        CHECK(c2[i] == doctest::Approx(expected2[i]).epsilon(1e-12));
}

TEST_CASE("parallel kernels are bit-identical to the serial references") {
    const int64_t m = 33, k = 47, n = 29;
    const auto a = random_matrix(m, k, 7);
    const auto b = random_matrix(k, n, 8);
    std::vector<double> serial(static_cast<size_t>(m * n)), parallel(static_cast<size_t>(m * n));

    kernels::set_threads(2);
    kernels::gemm_nn_serial(serial.data(), a.data(), b.data(), m, k, n, false);
    kernels::gemm_nn(parallel.data(), a.data(), b.data(), m, k, n, false);
    CHECK(serial == parallel);

    const auto bt = random_matrix(n, k, 9);
    kernels::gemm_nt_serial(serial.data(), a.data(), bt.data(), m, k, n, false);
    kernels::gemm_nt(parallel.data(), a.data(), bt.data(), m, k, n, false);
    CHECK(serial == parallel);

    const auto at = random_matrix(k, m, 10);
    kernels::gemm_tn_serial(serial.data(), at.data(), b.data(), m, k, n, false);
    kernels::gemm_tn(parallel.data(), at.data(), b.data(), m, k, n, false);
    CHECK(serial == parallel);
    kernels::set_threads(0);
}

TEST_CASE("accumulate variant adds on top of existing values") {
    const int64_t m = 5, k = 6, n = 4;
    const auto a = random_matrix(m, k, 11);
    const auto b = random_matrix(k, n, 12);
    auto base = random_matrix(m, n, 13);
    auto expected = base;
    const auto prod = naive_nn(a, b, m, k, n);
    for (size_t i = 0; i < expected.size(); ++i) expected[i] += prod[i];
    kernels::gemm_nn(base.data(), a.data(), b.data(), m, k, n, true);
    for (size_t i = 0; i < base.size(); ++i)
        CHECK(base[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("batched kernels match per-slice gemm") {
    const int64_t batch = 3, m = 6, k = 5, n = 7;
    const auto a = random_matrix(batch * m, k, 14);
    const auto b = random_matrix(batch * k, n, 15);
    std::vector<double> c(static_cast<size_t>(batch * m * n));
    kernels::bmm_nn(c.data(), a.data(), b.data(), batch, m, k, n, false);
    for (int64_t bb = 0; bb < batch; ++bb) {
        std::vector<double> slice_a(a.begin() + bb * m * k, a.begin() + (bb + 1) * m * k);
        std::vector<double> slice_b(b.begin() + bb * k * n, b.begin() + (bb + 1) * k * n);
        const auto expected = naive_nn(slice_a, slice_b, m, k, n);
        for (int64_t i = 0; i < m * n; ++i)
            CHECK(c[static_cast<size_t>(bb * m * n + i)] ==
                  doctest::Approx(expected[static_cast<size_t>(i)]).epsilon(1e-12));
    }
}
