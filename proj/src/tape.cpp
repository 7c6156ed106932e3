#include "flexattn/tape.hpp"

#include <cmath>
#include <cstring>

namespace flexattn {

FlopCounter& GradTape::ctr() { return ctr_ ? *ctr_ : scratch_; }

ValueId GradTape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size()) - 1;
}

ValueId GradTape::leaf(Matrix2D v) { return push({Op::kLeaf, {}, std::move(v)}); }

ValueId GradTape::constant(Matrix2D v) { return push({Op::kConstant, {}, std::move(v)}); }

ValueId GradTape::matmul(ValueId a, ValueId b) {
    return push({Op::kMatMul, {a, b}, flexattn::matmul(value(a), value(b), ctr())});
}

ValueId GradTape::matmul_nt(ValueId a, ValueId b) {
    return push({Op::kMatMulNT, {a, b}, flexattn::matmul_nt(value(a), value(b), ctr())});
}

ValueId GradTape::add(ValueId a, ValueId b) {
    return push({Op::kAdd, {a, b}, flexattn::add(value(a), value(b), ctr())});
}

ValueId GradTape::add_row_vector(ValueId x, ValueId row) {
    return push({Op::kAddRowVec, {x, row}, flexattn::add_row_vector(value(x), value(row), ctr())});
}

ValueId GradTape::scale(ValueId x, double s) {
    Node n{Op::kScale, {x}, flexattn::scale(value(x), s, ctr())};
    n.scalar = s;
    return push(std::move(n));
}

ValueId GradTape::concat_rows(ValueId a, ValueId b) {
    return push({Op::kConcatRows, {a, b}, flexattn::concat_rows(value(a), value(b))});
}

ValueId GradTape::concat_cols(const std::vector<ValueId>& xs) {
    std::vector<const Matrix2D*> ptrs;
    ptrs.reserve(xs.size());
    for (ValueId id : xs) ptrs.push_back(&value(id));
    return push({Op::kConcatCols, xs, flexattn::concat_cols(ptrs)});
}

ValueId GradTape::slice_rows(ValueId x, int r0, int r1) {
    Node n{Op::kSliceRows, {x}, flexattn::slice_rows(value(x), r0, r1)};
    n.r0 = r0;
    n.r1 = r1;
    return push(std::move(n));
}

ValueId GradTape::slice_cols(ValueId x, int c0, int c1) {
    Node n{Op::kSliceCols, {x}, flexattn::slice_cols(value(x), c0, c1)};
    n.r0 = c0;
    n.r1 = c1;
    return push(std::move(n));
}

ValueId GradTape::softmax_rows(ValueId x) {
    return push({Op::kSoftmax, {x}, flexattn::softmax_rows(value(x), nullptr, ctr())});
}

ValueId GradTape::softmax_rows_masked(ValueId x, Matrix2D mask) {
    Node n{Op::kSoftmax, {x}, flexattn::softmax_rows(value(x), &mask, ctr())};
    n.aux = std::move(mask);
    return push(std::move(n));
}

ValueId GradTape::layer_norm(ValueId x, ValueId gain, ValueId bias) {
    const Matrix2D& xm = value(x);
    Node n{Op::kLayerNorm, {x, gain, bias}, {}};
    // Save xhat and inv_std; the affine output is recomputed from them.
    const int cols = xm.cols;
    n.aux = Matrix2D(xm.rows, cols);
    n.extra.resize(xm.rows);
    Matrix2D y(xm.rows, cols);
    const Matrix2D& g = value(gain);
    const Matrix2D& b = value(bias);
    if (g.rows != 1 || g.cols != cols || b.rows != 1 || b.cols != cols)
        throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(cols));
    for (int i = 0; i < xm.rows; ++i) {
        double mean = 0.0;
        for (int j = 0; j < cols; ++j) mean += xm.at(i, j);
        mean /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
            double d = xm.at(i, j) - mean;
            var += d * d;
        }
        var /= cols;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        n.extra[i] = inv;
        for (int j = 0; j < cols; ++j) {
            const double xh = (xm.at(i, j) - mean) * inv;
            n.aux.at(i, j) = xh;
            y.at(i, j) = g.at(0, j) * xh + b.at(0, j);
        }
    }
    ctr() += flop::layer_norm(xm.rows, cols);
    n.value = std::move(y);
    return push(std::move(n));
}

ValueId GradTape::gelu(ValueId x) {
    return push({Op::kGelu, {x}, flexattn::gelu(value(x), ctr())});
}

ValueId GradTape::gather_rows(ValueId x, std::vector<int> idx) {
    Node n{Op::kGatherRows, {x}, flexattn::gather_rows(value(x), idx)};
    n.idx = std::move(idx);
    return push(std::move(n));
}

ValueId GradTape::softmax_cross_entropy(ValueId logits, std::vector<int> labels) {
    const Matrix2D& lm = value(logits);
    if (static_cast<int>(labels.size()) != lm.rows)
        throw ShapeError("softmax_cross_entropy: labels/rows mismatch");
    FlopCounter unused;  // training-only op, excluded from the inference cost model
    Matrix2D probs = flexattn::softmax_rows(lm, nullptr, unused);
    double loss = 0.0;
    for (int i = 0; i < lm.rows; ++i) {
        int lab = labels[i];
        if (lab < 0 || lab >= lm.cols) throw ShapeError("softmax_cross_entropy: label out of range");
        loss -= std::log(std::max(probs.at(i, lab), 1e-300));
    }
    loss /= lm.rows;
    Node n{Op::kCrossEntropy, {logits}, Matrix2D(1, 1, {loss})};
    n.aux = std::move(probs);
    n.idx = std::move(labels);
    return push(std::move(n));
}

ValueId GradTape::selection_boundary(Matrix2D v, const std::vector<ValueId>& producers) {
    ValueId id = push({Op::kBoundary, producers, std::move(v)});
    boundaries_.push_back(id);
    return id;
}

bool GradTape::is_boundary(ValueId id) const { return nodes_[id].op == Op::kBoundary; }

void GradTape::accum(ValueId id, const Matrix2D& g) {
    if (!touched_[id]) {
        grads_[id] = g;
        touched_[id] = 1;
        return;
    }
    Matrix2D& dst = grads_[id];
    for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += g.data[i];
}

void GradTape::backward(ValueId output) {
    const Matrix2D& v = value(output);
    if (v.rows != 1 || v.cols != 1)
        throw ShapeError("backward: output is " + v.shape_str() + ", pass an explicit seed");
    backward(output, Matrix2D(1, 1, {1.0}));
}

void GradTape::backward(ValueId output, const Matrix2D& seed) {
    if (!seed.same_shape(value(output)))
        throw ShapeError("backward: seed " + seed.shape_str() + " vs output " + value(output).shape_str());
    grads_.assign(nodes_.size(), Matrix2D());
    touched_.assign(nodes_.size(), 0);
    accum(output, seed);

    FlopCounter unused;
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
        if (!touched_[id]) continue;
        const Node& n = nodes_[id];
        const Matrix2D& g = grads_[id];
        switch (n.op) {
            case Op::kLeaf:
            case Op::kConstant:
                break;
            case Op::kBoundary:
                throw ContractError("non-differentiable selection boundary reached in backward");
            case Op::kMatMul: {
                const Matrix2D& a = value(n.ins[0]);
                const Matrix2D& b = value(n.ins[1]);
                accum(n.ins[0], flexattn::matmul_nt(g, b, ctr()));
                accum(n.ins[1], flexattn::matmul_tn(a, g, ctr()));
                break;
            }
            case Op::kMatMulNT: {
                const Matrix2D& a = value(n.ins[0]);
                const Matrix2D& b = value(n.ins[1]);
                accum(n.ins[0], flexattn::matmul(g, b, ctr()));
                accum(n.ins[1], flexattn::matmul_tn(g, a, ctr()));
                break;
            }
            case Op::kAdd:
                accum(n.ins[0], g);
                accum(n.ins[1], g);
                break;
            case Op::kAddRowVec:
                accum(n.ins[0], g);
                accum(n.ins[1], colsum(g));
                break;
            case Op::kScale:
                accum(n.ins[0], flexattn::scale(g, n.scalar, ctr()));
                break;
            case Op::kConcatRows: {
                const Matrix2D& a = value(n.ins[0]);
                accum(n.ins[0], flexattn::slice_rows(g, 0, a.rows));
                accum(n.ins[1], flexattn::slice_rows(g, a.rows, g.rows));
                break;
            }
            case Op::kConcatCols: {
                int c = 0;
                for (ValueId in : n.ins) {
                    int w = value(in).cols;
                    accum(in, flexattn::slice_cols(g, c, c + w));
                    c += w;
                }
                break;
            }
            case Op::kSliceRows: {
                Matrix2D dx(value(n.ins[0]).rows, value(n.ins[0]).cols);
                for (int i = 0; i < g.rows; ++i)
                    std::memcpy(dx.row_ptr(n.r0 + i), g.row_ptr(i), g.cols * sizeof(double));
                accum(n.ins[0], dx);
                break;
            }
            case Op::kSliceCols: {
                const Matrix2D& x = value(n.ins[0]);
                Matrix2D dx(x.rows, x.cols);
                for (int i = 0; i < g.rows; ++i)
                    std::memcpy(dx.row_ptr(i) + n.r0, g.row_ptr(i), g.cols * sizeof(double));
                accum(n.ins[0], dx);
                break;
            }
            case Op::kSoftmax: {
                // dx = y * (g - sum(g*y)) per row; masked entries have y=0.
                const Matrix2D& y = n.value;
                Matrix2D dx(y.rows, y.cols);
                for (int i = 0; i < y.rows; ++i) {
                    double dot = 0.0;
                    for (int j = 0; j < y.cols; ++j) dot += g.at(i, j) * y.at(i, j);
                    for (int j = 0; j < y.cols; ++j) dx.at(i, j) = y.at(i, j) * (g.at(i, j) - dot);
                }
                accum(n.ins[0], dx);
                break;
            }
            case Op::kLayerNorm: {
                const Matrix2D& xhat = n.aux;
                const Matrix2D& gain = value(n.ins[1]);
                const int cols = xhat.cols;
                Matrix2D dx(xhat.rows, cols);
                Matrix2D dgain(1, cols);
                Matrix2D dbias(1, cols);
                for (int i = 0; i < xhat.rows; ++i) {
                    const double inv = n.extra[i];
                    double mean_gh = 0.0, mean_ghx = 0.0;
                    for (int j = 0; j < cols; ++j) {
                        const double gh = g.at(i, j) * gain.at(0, j);
                        mean_gh += gh;
                        mean_ghx += gh * xhat.at(i, j);
                        dgain.at(0, j) += g.at(i, j) * xhat.at(i, j);
                        dbias.at(0, j) += g.at(i, j);
                    }
                    mean_gh /= cols;
                    mean_ghx /= cols;
                    for (int j = 0; j < cols; ++j) {
                        const double gh = g.at(i, j) * gain.at(0, j);
                        dx.at(i, j) = inv * (gh - mean_gh - xhat.at(i, j) * mean_ghx);
                    }
                }
                accum(n.ins[0], dx);
                accum(n.ins[1], dgain);
                accum(n.ins[2], dbias);
                break;
            }
            case Op::kGelu: {
                const Matrix2D& x = value(n.ins[0]);
                Matrix2D dx(x.rows, x.cols);
                for (size_t i = 0; i < x.size(); ++i)
                    dx.data[i] = g.data[i] * gelu_grad_scalar(x.data[i]);
                accum(n.ins[0], dx);
                break;
            }
            case Op::kGatherRows: {
                const Matrix2D& x = value(n.ins[0]);
                Matrix2D dx(x.rows, x.cols);
                for (size_t i = 0; i < n.idx.size(); ++i) {
                    double* dst = dx.row_ptr(n.idx[i]);
                    const double* src = g.row_ptr(static_cast<int>(i));
                    for (int j = 0; j < x.cols; ++j) dst[j] += src[j];
                }
                accum(n.ins[0], dx);
                break;
            }
            case Op::kCrossEntropy: {
                const Matrix2D& probs = n.aux;
                const double gs = g.at(0, 0) / probs.rows;
                Matrix2D dl(probs.rows, probs.cols);
                for (int i = 0; i < probs.rows; ++i) {
                    for (int j = 0; j < probs.cols; ++j) dl.at(i, j) = gs * probs.at(i, j);
                    dl.at(i, n.idx[i]) -= gs;
                }
                accum(n.ins[0], dl);
                break;
            }
        }
    }
    (void)unused;
}

Matrix2D GradTape::grad_of(ValueId id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw ShapeError("grad_of: bad id");
    if (grads_.empty() || !touched_[id]) {
        const Matrix2D& v = nodes_[id].value;
        return Matrix2D(v.rows, v.cols);
    }
    return grads_[id];
}

}  // namespace flexattn
