#include "flexattn/kernels.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flexattn {

namespace {

constexpr long long kParallelWork = 1 << 15;

void check_matmul(const Matrix2D& a, const Matrix2D& b, int a_inner, int b_inner, const char* name) {
    int ai = a_inner == 0 ? a.cols : a.rows;
    int bi = b_inner == 0 ? b.rows : b.cols;
    if (ai != bi)
        throw ShapeError(std::string(name) + ": inner dims of " + a.shape_str() + " and " + b.shape_str() +
                         " do not match");
}

// Per output element the inner accumulation runs over k in ascending order in
// every variant below, which is what makes serial, parallel and the naive
// triple-loop oracle agree bit-for-bit.
void matmul_rows(const Matrix2D& a, const Matrix2D& b, Matrix2D& c, int i0, int i1) {
    const int n = b.cols;
    const int k = a.cols;
    for (int i = i0; i < i1; ++i) {
        double* crow = c.row_ptr(i);
        const double* arow = a.row_ptr(i);
        for (int kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = b.row_ptr(kk);
            for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

void matmul_nt_rows(const Matrix2D& a, const Matrix2D& b, Matrix2D& c, int i0, int i1) {
    const int n = b.rows;
    const int k = a.cols;
    for (int i = i0; i < i1; ++i) {
        double* crow = c.row_ptr(i);
        const double* arow = a.row_ptr(i);
        for (int j = 0; j < n; ++j) {
            const double* brow = b.row_ptr(j);
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] = acc;
        }
    }
}

void matmul_tn_rows(const Matrix2D& a, const Matrix2D& b, Matrix2D& c, int i0, int i1) {
    const int n = b.cols;
    const int k = a.rows;
    for (int i = i0; i < i1; ++i) {
        double* crow = c.row_ptr(i);
        for (int kk = 0; kk < k; ++kk) {
            const double aki = a.at(kk, i);
            const double* brow = b.row_ptr(kk);
            for (int j = 0; j < n; ++j) crow[j] += aki * brow[j];
        }
    }
}

template <typename RowFn>
void run_rows(int nrows, long long work, RowFn fn) {
#ifdef _OPENMP
    if (work >= kParallelWork && nrows > 1) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < nrows; ++i) fn(i, i + 1);
        return;
    }
#endif
    (void)work;
    fn(0, nrows);
}

void softmax_one_row(const double* xrow, const double* mrow, double* yrow, int len) {
    const double neg_inf = -std::numeric_limits<double>::infinity();
    double mx = neg_inf;
    for (int j = 0; j < len; ++j) {
        if (mrow && mrow[j] == neg_inf) continue;
        if (xrow[j] > mx) mx = xrow[j];
    }
    if (mx == neg_inf) throw ContractError("softmax_rows: fully masked row");
    double sum = 0.0;
    for (int j = 0; j < len; ++j) {
        if (mrow && mrow[j] == neg_inf) {
            yrow[j] = 0.0;
        } else {
            yrow[j] = std::exp(xrow[j] - mx);
            sum += yrow[j];
        }
    }
    for (int j = 0; j < len; ++j) yrow[j] /= sum;
}

}  // namespace

Matrix2D matmul(const Matrix2D& a, const Matrix2D& b, FlopCounter& ctr) {
    check_matmul(a, b, 0, 0, "matmul");
    Matrix2D c(a.rows, b.cols);
    run_rows(a.rows, static_cast<long long>(a.rows) * a.cols * b.cols,
             [&](int i0, int i1) { matmul_rows(a, b, c, i0, i1); });
    ctr += flop::matmul(a.rows, a.cols, b.cols);
    return c;
}

Matrix2D matmul_serial(const Matrix2D& a, const Matrix2D& b, FlopCounter& ctr) {
    check_matmul(a, b, 0, 0, "matmul");
    Matrix2D c(a.rows, b.cols);
    matmul_rows(a, b, c, 0, a.rows);
    ctr += flop::matmul(a.rows, a.cols, b.cols);
    return c;
}

Matrix2D matmul_nt(const Matrix2D& a, const Matrix2D& b, FlopCounter& ctr) {
    check_matmul(a, b, 0, 1, "matmul_nt");
    Matrix2D c(a.rows, b.rows);
    run_rows(a.rows, static_cast<long long>(a.rows) * a.cols * b.rows,
             [&](int i0, int i1) { matmul_nt_rows(a, b, c, i0, i1); });
    ctr += flop::matmul(a.rows, a.cols, b.rows);
    return c;
}

Matrix2D matmul_nt_serial(const Matrix2D& a, const Matrix2D& b, FlopCounter& ctr) {
    check_matmul(a, b, 0, 1, "matmul_nt");
    Matrix2D c(a.rows, b.rows);
    matmul_nt_rows(a, b, c, 0, a.rows);
    ctr += flop::matmul(a.rows, a.cols, b.rows);
    return c;
}

Matrix2D matmul_tn(const Matrix2D& a, const Matrix2D& b, FlopCounter& ctr) {
    check_matmul(a, b, 1, 0, "matmul_tn");
    Matrix2D c(a.cols, b.cols);
    run_rows(a.cols, static_cast<long long>(a.cols) * a.rows * b.cols,
             [&](int i0, int i1) { matmul_tn_rows(a, b, c, i0, i1); });
    ctr += flop::matmul(a.cols, a.rows, b.cols);
    return c;
}

Matrix2D matmul_tn_serial(const Matrix2D& a, const Matrix2D& b, FlopCounter& ctr) {
    check_matmul(a, b, 1, 0, "matmul_tn");
    Matrix2D c(a.cols, b.cols);
    matmul_tn_rows(a, b, c, 0, a.cols);
    ctr += flop::matmul(a.cols, a.rows, b.cols);
    return c;
}

Matrix2D softmax_rows(const Matrix2D& x, const Matrix2D* mask, FlopCounter& ctr) {
    if (mask && !mask->same_shape(x))
        throw ShapeError("softmax_rows: mask " + mask->shape_str() + " vs input " + x.shape_str());
    Matrix2D y(x.rows, x.cols);
    run_rows(x.rows, static_cast<long long>(x.rows) * x.cols * 8, [&](int i0, int i1) {
        for (int i = i0; i < i1; ++i)
            softmax_one_row(x.row_ptr(i), mask ? mask->row_ptr(i) : nullptr, y.row_ptr(i), x.cols);
    });
    ctr += flop::softmax(x.rows, x.cols);
    return y;
}

Matrix2D softmax_rows_serial(const Matrix2D& x, const Matrix2D* mask, FlopCounter& ctr) {
    if (mask && !mask->same_shape(x))
        throw ShapeError("softmax_rows: mask " + mask->shape_str() + " vs input " + x.shape_str());
    Matrix2D y(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i)
        softmax_one_row(x.row_ptr(i), mask ? mask->row_ptr(i) : nullptr, y.row_ptr(i), x.cols);
    ctr += flop::softmax(x.rows, x.cols);
    return y;
}

Matrix2D layer_norm(const Matrix2D& x, const Matrix2D& gain, const Matrix2D& bias, FlopCounter& ctr) {
    if (gain.rows != 1 || gain.cols != x.cols || bias.rows != 1 || bias.cols != x.cols)
        throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(x.cols));
    Matrix2D y(x.rows, x.cols);
    const int n = x.cols;
    run_rows(x.rows, static_cast<long long>(x.rows) * n * 6, [&](int i0, int i1) {
        for (int i = i0; i < i1; ++i) {
            const double* xr = x.row_ptr(i);
            double* yr = y.row_ptr(i);
            double mean = 0.0;
            for (int j = 0; j < n; ++j) mean += xr[j];
            mean /= n;
            double var = 0.0;
            for (int j = 0; j < n; ++j) {
                double d = xr[j] - mean;
                var += d * d;
            }
            var /= n;
            const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
            for (int j = 0; j < n; ++j) yr[j] = gain.at(0, j) * ((xr[j] - mean) * inv) + bias.at(0, j);
        }
    });
    ctr += flop::layer_norm(x.rows, x.cols);
    return y;
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad_scalar(double x) {
    const double phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return phi + x * pdf;
}

Matrix2D gelu(const Matrix2D& x, FlopCounter& ctr) {
    Matrix2D y(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) y.data[i] = gelu_scalar(x.data[i]);
    ctr += flop::gelu(static_cast<long long>(x.size()));
    return y;
}

Matrix2D concat_rows(const Matrix2D& a, const Matrix2D& b) {
    if (a.rows == 0 && a.cols == 0) return b;
    if (b.rows == 0 && b.cols == 0) return a;
    if (a.cols != b.cols)
        throw ShapeError("concat_rows: column mismatch " + a.shape_str() + " vs " + b.shape_str());
    Matrix2D c(a.rows + b.rows, a.cols);
    std::memcpy(c.data.data(), a.data.data(), a.size() * sizeof(double));
    std::memcpy(c.data.data() + a.size(), b.data.data(), b.size() * sizeof(double));
    return c;
}

Matrix2D concat_cols(const std::vector<const Matrix2D*>& xs) {
    if (xs.empty()) return Matrix2D();
    int rows = xs[0]->rows;
    int cols = 0;
    for (const Matrix2D* x : xs) {
        if (x->rows != rows) throw ShapeError("concat_cols: row mismatch");
        cols += x->cols;
    }
    Matrix2D c(rows, cols);
    for (int i = 0; i < rows; ++i) {
        double* dst = c.row_ptr(i);
        for (const Matrix2D* x : xs) {
            std::memcpy(dst, x->row_ptr(i), x->cols * sizeof(double));
            dst += x->cols;
        }
    }
    return c;
}

Matrix2D slice_rows(const Matrix2D& x, int r0, int r1) {
    if (r0 < 0 || r1 < r0 || r1 > x.rows) throw ShapeError("slice_rows: bad range on " + x.shape_str());
    Matrix2D y(r1 - r0, x.cols);
    std::memcpy(y.data.data(), x.row_ptr(r0), y.size() * sizeof(double));
    return y;
}

Matrix2D slice_cols(const Matrix2D& x, int c0, int c1) {
    if (c0 < 0 || c1 < c0 || c1 > x.cols) throw ShapeError("slice_cols: bad range on " + x.shape_str());
    Matrix2D y(x.rows, c1 - c0);
    for (int i = 0; i < x.rows; ++i)
        std::memcpy(y.row_ptr(i), x.row_ptr(i) + c0, (c1 - c0) * sizeof(double));
    return y;
}

Matrix2D gather_rows(const Matrix2D& x, const std::vector<int>& idx) {
    Matrix2D y(static_cast<int>(idx.size()), x.cols);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= x.rows)
            throw ShapeError("gather_rows: index " + std::to_string(idx[i]) + " out of range for " +
                             x.shape_str());
        std::memcpy(y.row_ptr(static_cast<int>(i)), x.row_ptr(idx[i]), x.cols * sizeof(double));
    }
    return y;
}

Matrix2D add(const Matrix2D& a, const Matrix2D& b, FlopCounter& ctr) {
    if (!a.same_shape(b)) throw ShapeError("add: " + a.shape_str() + " vs " + b.shape_str());
    Matrix2D c(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) c.data[i] = a.data[i] + b.data[i];
    ctr += flop::ewise_add(static_cast<long long>(a.size()));
    return c;
}

Matrix2D add_row_vector(const Matrix2D& x, const Matrix2D& row, FlopCounter& ctr) {
    if (row.rows != 1 || row.cols != x.cols)
        throw ShapeError("add_row_vector: " + x.shape_str() + " vs " + row.shape_str());
    Matrix2D y(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) y.at(i, j) = x.at(i, j) + row.at(0, j);
    ctr += flop::ewise_add(static_cast<long long>(x.size()));
    return y;
}

Matrix2D scale(const Matrix2D& x, double s, FlopCounter& ctr) {
    Matrix2D y(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] * s;
    ctr += flop::scale(static_cast<long long>(x.size()));
    return y;
}

Matrix2D ewise_mul(const Matrix2D& a, const Matrix2D& b) {
    if (!a.same_shape(b)) throw ShapeError("ewise_mul: " + a.shape_str() + " vs " + b.shape_str());
    Matrix2D c(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) c.data[i] = a.data[i] * b.data[i];
    return c;
}

Matrix2D colsum(const Matrix2D& x) {
    Matrix2D y(1, x.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) y.at(0, j) += x.at(i, j);
    return y;
}

int argmax_row(const Matrix2D& x, int row) {
    if (x.cols == 0) throw EmptyInputError("argmax_row: empty row");
    int best = 0;
    for (int j = 1; j < x.cols; ++j)
        if (x.at(row, j) > x.at(row, best)) best = j;
    return best;
}

}  // namespace flexattn
