#pragma once

#include <vector>

#include "flexattn/kernels.hpp"
#include "flexattn/matrix.hpp"

namespace flexattn {

using ValueId = int;

// Eager reverse-mode tape over Matrix2D values. Each op computes its result
// immediately through the shared kernels (so forward values and FLOP counts
// are identical to the plain execution path) and records what backward needs
// for the vector-Jacobian product.
//
// Selection is not differentiable: attention maps leave the graph through
// selection_boundary(), and the chosen high-resolution rows re-enter through
// gather_rows(), whose gradient scatters into the gathered rows only. Building
// ops on top of a boundary value and then running backward through them raises
// ContractError("non-differentiable selection boundary").
class GradTape {
public:
    explicit GradTape(FlopCounter* ctr = nullptr) : ctr_(ctr) {}

    ValueId leaf(Matrix2D v);      // differentiable input
    ValueId constant(Matrix2D v);  // non-differentiable input

    ValueId matmul(ValueId a, ValueId b);
    ValueId matmul_nt(ValueId a, ValueId b);  // a * b^T
    ValueId add(ValueId a, ValueId b);
    ValueId add_row_vector(ValueId x, ValueId row);
    ValueId scale(ValueId x, double s);
    ValueId concat_rows(ValueId a, ValueId b);
    ValueId concat_cols(const std::vector<ValueId>& xs);
    ValueId slice_rows(ValueId x, int r0, int r1);
    ValueId slice_cols(ValueId x, int c0, int c1);
    ValueId softmax_rows(ValueId x);                       // unmasked
    ValueId softmax_rows_masked(ValueId x, Matrix2D mask); // additive 0/-inf mask
    ValueId layer_norm(ValueId x, ValueId gain, ValueId bias);
    ValueId gelu(ValueId x);
    ValueId gather_rows(ValueId x, std::vector<int> idx);
    // Mean cross-entropy over rows: [rows x vocab] logits + one label per row -> [1x1].
    ValueId softmax_cross_entropy(ValueId logits, std::vector<int> labels);
    // Marks the handoff of `v` (typically an attention map derived from the
    // listed producers) to the non-differentiable selection machinery.
    ValueId selection_boundary(Matrix2D v, const std::vector<ValueId>& producers = {});

    const Matrix2D& value(ValueId id) const { return nodes_[id].value; }
    int size() const { return static_cast<int>(nodes_.size()); }
    bool is_boundary(ValueId id) const;
    const std::vector<ValueId>& boundaries() const { return boundaries_; }

    // Reverse pass. The [1x1] overload seeds with 1.0; the explicit-seed
    // overload accepts any output shape.
    void backward(ValueId output);
    void backward(ValueId output, const Matrix2D& seed);

    // Gradient accumulated for `id` by the last backward(); zeros if the
    // value did not influence the output.
    Matrix2D grad_of(ValueId id) const;

private:
    enum class Op {
        kLeaf,
        kConstant,
        kMatMul,
        kMatMulNT,
        kAdd,
        kAddRowVec,
        kScale,
        kConcatRows,
        kConcatCols,
        kSliceRows,
        kSliceCols,
        kSoftmax,
        kLayerNorm,
        kGelu,
        kGatherRows,
        kCrossEntropy,
        kBoundary,
    };

    struct Node {
        Op op;
        std::vector<ValueId> ins;
        Matrix2D value;
        Matrix2D aux;             // softmax mask / layer_norm xhat / CE probs
        std::vector<double> extra;  // layer_norm inv_std
        std::vector<int> idx;       // gather indices / CE labels
        double scalar = 0.0;
        int r0 = 0, r1 = 0;
    };

    ValueId push(Node n);
    void accum(ValueId id, const Matrix2D& g);
    FlopCounter& ctr();

    std::vector<Node> nodes_;
    std::vector<Matrix2D> grads_;
    std::vector<char> touched_;
    std::vector<ValueId> boundaries_;
    FlopCounter* ctr_ = nullptr;
    FlopCounter scratch_;
};

}  // namespace flexattn
