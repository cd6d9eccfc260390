/* c (m x n, zeroed) += a (m x kk) * b (kk x n), all row-major.
 * Each c[i][j] accumulates over k in increasing order. */
static void hdnn_matmul(const double *restrict a, const double *restrict b,
                        double *restrict c, Py_ssize_t m, Py_ssize_t kk,
                        Py_ssize_t n)
{
    for (Py_ssize_t i = 0; i < m; i++) {
        double *restrict crow = c + i * n;
        for (Py_ssize_t k = 0; k < kk; k++) {
            const double aik = a[i * kk + k];
            const double *restrict brow = b + k * n;
            for (Py_ssize_t j = 0; j < n; j++)
                crow[j] = crow[j] + aik * brow[j];
        }
    }
}
