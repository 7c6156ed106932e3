#pragma once

#include <vector>

#include "flexattn/matrix.hpp"

namespace flexattn {

// Dense kernels behind every model operation. The default entry points use an
// OpenMP parallel-for over output rows once the work is large enough; the
// *_serial twins are the reference implementations kept for testing and for
// the kernel benchmark. Per-element accumulation order is identical in both,
// so parallel and serial results are bit-identical for any thread count.

constexpr double kLayerNormEps = 1e-5;

// c = a * b, counts 2*m*k*n mul_adds.
Matrix2D matmul(const Matrix2D& a, const Matrix2D& b, FlopCounter& ctr);
Matrix2D matmul_serial(const Matrix2D& a, const Matrix2D& b, FlopCounter& ctr);

// c = a * b^T (b given row-major as [n x k]).
Matrix2D matmul_nt(const Matrix2D& a, const Matrix2D& b, FlopCounter& ctr);
Matrix2D matmul_nt_serial(const Matrix2D& a, const Matrix2D& b, FlopCounter& ctr);

// c = a^T * b (a given row-major as [k x m]).
Matrix2D matmul_tn(const Matrix2D& a, const Matrix2D& b, FlopCounter& ctr);
Matrix2D matmul_tn_serial(const Matrix2D& a, const Matrix2D& b, FlopCounter& ctr);

// Row-wise softmax with optional additive mask (entries 0 or -infinity).
// Stabilized by row-max subtraction over unmasked entries; masked entries map
// to exactly 0. A fully masked row raises ContractError. Counter convention:
// per row of length L, L exps, L divs, 3L adds.
Matrix2D softmax_rows(const Matrix2D& x, const Matrix2D* mask, FlopCounter& ctr);
Matrix2D softmax_rows_serial(const Matrix2D& x, const Matrix2D* mask, FlopCounter& ctr);

// Per-row normalization to zero mean / unit variance (epsilon 1e-5 inside the
// square root) followed by the affine gain/bias ([1 x cols] each).
Matrix2D layer_norm(const Matrix2D& x, const Matrix2D& gain, const Matrix2D& bias, FlopCounter& ctr);

// Exact GELU: x * Phi(x) with Phi the standard normal CDF (erf form).
Matrix2D gelu(const Matrix2D& x, FlopCounter& ctr);
double gelu_scalar(double x);
double gelu_grad_scalar(double x);

// Structural ops; copies are not counted as FLOPs.
Matrix2D concat_rows(const Matrix2D& a, const Matrix2D& b);
Matrix2D concat_cols(const std::vector<const Matrix2D*>& xs);
Matrix2D slice_rows(const Matrix2D& x, int r0, int r1);
Matrix2D slice_cols(const Matrix2D& x, int c0, int c1);
Matrix2D gather_rows(const Matrix2D& x, const std::vector<int>& idx);

Matrix2D add(const Matrix2D& a, const Matrix2D& b, FlopCounter& ctr);
Matrix2D add_row_vector(const Matrix2D& x, const Matrix2D& row, FlopCounter& ctr);
Matrix2D scale(const Matrix2D& x, double s, FlopCounter& ctr);

// Uncounted elementwise helpers for bookkeeping math (map averaging etc.).
Matrix2D ewise_mul(const Matrix2D& a, const Matrix2D& b);
Matrix2D colsum(const Matrix2D& x);  // [1 x cols]

int argmax_row(const Matrix2D& x, int row);

}  // namespace flexattn
