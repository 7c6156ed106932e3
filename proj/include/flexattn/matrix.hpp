#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace flexattn {

// Error taxonomy used across the project.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Row-major dense matrix of doubles. Kernels treat inputs as immutable and
// return fresh matrices; sharing a Matrix2D read-only across threads is safe.
struct Matrix2D {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix2D() = default;
    Matrix2D(int r, int c) : rows(r), cols(c) {
        if (r < 0 || c < 0) throw ShapeError("matrix dims must be non-negative");
        data.assign(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0);
    }
    Matrix2D(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
        if (r < 0 || c < 0) throw ShapeError("matrix dims must be non-negative");
        if (data.size() != static_cast<size_t>(r) * static_cast<size_t>(c))
            throw ShapeError("data length does not match " + shape_str());
    }

    static Matrix2D zeros(int r, int c) { return Matrix2D(r, c); }

    static Matrix2D identity(int n) {
        Matrix2D m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    static Matrix2D from_rows(std::initializer_list<std::initializer_list<double>> rs) {
        int r = static_cast<int>(rs.size());
        int c = r == 0 ? 0 : static_cast<int>(rs.begin()->size());
        Matrix2D m(r, c);
        int i = 0;
        for (const auto& row : rs) {
            if (static_cast<int>(row.size()) != c) throw ShapeError("ragged initializer");
            int j = 0;
            for (double v : row) m.at(i, j++) = v;
            ++i;
        }
        return m;
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    double* row_ptr(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return data.size(); }
    bool empty() const { return rows == 0 || cols == 0; }

    bool same_shape(const Matrix2D& o) const { return rows == o.rows && cols == o.cols; }

    bool bitwise_equal(const Matrix2D& o) const {
        return same_shape(o) && data == o.data;
    }

    void append_row(const double* src, int n) {
        if (cols == 0) cols = n;
        if (n != cols) throw ShapeError("append_row: width " + std::to_string(n) + " vs " + shape_str());
        data.insert(data.end(), src, src + n);
        ++rows;
    }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }
};

// FLOP accounting: one multiply-accumulate counts as 2 FLOPs (mul_adds holds
// the 2x-weighted number directly); exp, div and add count 1 each. The same
// struct doubles as the counts holder in the analytical cost model, so the
// counted and formula-side numbers share one convention.
struct FlopCounter {
    long long mul_adds = 0;
    long long exps = 0;
    long long divs = 0;
    long long adds = 0;

    long long total() const { return mul_adds + exps + divs + adds; }

    FlopCounter& operator+=(const FlopCounter& o) {
        mul_adds += o.mul_adds;
        exps += o.exps;
        divs += o.divs;
        adds += o.adds;
        return *this;
    }
    friend FlopCounter operator+(FlopCounter a, const FlopCounter& b) { return a += b; }
    friend FlopCounter operator-(const FlopCounter& a, const FlopCounter& b) {
        return FlopCounter{a.mul_adds - b.mul_adds, a.exps - b.exps, a.divs - b.divs, a.adds - b.adds};
    }
    bool operator==(const FlopCounter&) const = default;
};

// Per-op cost expressions shared by the kernels (which increment counters
// with them) and by the analytical model (which sums the same expressions),
// so reconciliation is exact rather than approximate.
//
//   matmul m,k,n     : 2*m*k*n mul_adds
//   softmax row of L : L exps, L divs, 3L adds (max shift, exp-sum, normalize);
//                      masked entries are included by convention
//   layer_norm row L : 3L mul_adds, 2L adds, 2 divs (sqrt counted as a div)
//   gelu element     : 3 mul_adds, 1 exp (erf counted as one exp), 2 adds
//   scale element    : 1 mul_add
//   add element      : 1 add
namespace flop {

inline FlopCounter matmul(long long m, long long k, long long n) {
    return FlopCounter{2 * m * k * n, 0, 0, 0};
}
inline FlopCounter softmax(long long nrows, long long len) {
    return FlopCounter{0, nrows * len, nrows * len, 3 * nrows * len};
}
inline FlopCounter layer_norm(long long nrows, long long ncols) {
    return FlopCounter{3 * nrows * ncols, 0, 2 * nrows, 2 * nrows * ncols};
}
inline FlopCounter gelu(long long elems) {
    return FlopCounter{3 * elems, elems, 0, 2 * elems};
}
inline FlopCounter scale(long long elems) {
    return FlopCounter{elems, 0, 0, 0};
}
inline FlopCounter ewise_add(long long elems) {
    return FlopCounter{0, 0, 0, elems};
}

}  // namespace flop

}  // namespace flexattn
