#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "dctts/tensor.hpp"

namespace dctts {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor::zeros(value.dims);
    }
    int64_t numel() const { return value.numel(); }
};

// Reverse-mode autodiff tape. Nodes are created by forward calls and hold the
// full activation; backward() runs the tape once in reverse creation order.
// Single-use: one backward per graph.
class Graph {
public:
    using Id = int32_t;

    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        bool reachable = false;
        std::function<void()> back;
        std::vector<Id> parents;
        Parameter* param = nullptr;
    };

    // leaves
    Id input(Tensor v);
    Id param(Parameter& p);

    // elementwise
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);
    Id scale(Id a, double s);
    Id add_scalar(Id a, double s);
    Id add_const_tensor(Id a, const Tensor& t);  // gradient flows to `a` only
    Id relu(Id a);
    Id gelu(Id a);
    Id exp(Id a);
    Id clamp(Id a, double lo, double hi);

    // matrix ops (rank-2 operands)
    Id matmul(Id a, Id b);     // [m,k]x[k,n]
    Id matmul_nt(Id a, Id b);  // [m,k]x[n,k]^T
    Id linear(Id x, Id w, Id b);  // x:[n,in], w:[out,in], b:[out] or -1
    Id embedding(const std::vector<int>& ids, Id table);

    // convolutions
    Id conv1d(Id x, Id w, Id b, int stride, int pad);          // x:[L,Cin], w:[Cout,Cin,k]
    Id depthwise_conv1d(Id x, Id w, Id b, int stride, int pad);  // x:[L,C], w:[C,k]
    Id conv2d(Id x, Id w, Id b, int sf, int st, int pf, int pt);           // x:[Cin,F,L], w:[Cout,Cin,kf,kt]
    Id conv2d_transpose(Id x, Id w, Id b, int sf, int st, int pf, int pt); // w:[Cin,Cout,kf,kt]

    // normalization
    Id layer_norm(Id x, Id gain, Id bias, double eps);  // affine params [d]
    Id ln_norm(Id x, double eps);                       // no affine
    Id channel_norm(Id x, Id gain, Id bias, double eps);  // x:[C,F,L], norm over C per cell

    // [C,F,L] grid <-> [F*L, C] rows with row p = t*F + i (time-major)
    Id grid_to_rows(Id x);
    Id rows_to_grid(Id x, int f, int l);
    Id scale_columns(Id x, Id v);                       // y[r][c] = x[r][c]*v[c]
    Id add_row_vector(Id x, Id v);                      // y[r][c] = x[r][c]+v[c]

    // shape
    Id slice_cols(Id x, int c0, int c1);
    Id concat_cols(const std::vector<Id>& xs);
    Id repeat_rows(Id x, const std::vector<int>& counts);
    Id resize_rows(Id x, int target_rows);  // truncate or zero-pad at the end

    // reductions / softmax
    Id softmax_rows(Id x);
    Id log_softmax_rows(Id x);
    Id gather_rows(Id x, const std::vector<int>& idx);  // -> [n]
    Id sum_all(Id x);
    Id mean_all(Id x);
    Id mean_rows(Id x);  // [n,d] -> [d]
    Id mse(Id a, Id b);  // scalar mean((a-b)^2)

    // escape hatch for module-specific ops with hand-derived backward
    Id custom(Tensor value, std::vector<Id> parents,
              std::function<void(Graph&, Id)> back_fn);

    void backward(Id loss);

    const Tensor& val(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor& grad_of(Id id) const { return nodes_[static_cast<size_t>(id)].grad; }
    Node& node(Id id) { return nodes_[static_cast<size_t>(id)]; }
    size_t size() const { return nodes_.size(); }
    bool backward_done() const { return backward_done_; }

private:
    Id make(Tensor value, std::vector<Id> parents, Parameter* p = nullptr);
    void set_back(Id id, std::function<void()> fn);

    std::deque<Node> nodes_;
    std::vector<std::pair<Parameter*, Id>> param_leaves_;
    bool backward_done_ = false;
};

// low-level matmul kernels (accumulating)
namespace mm {
void acc(const double* a, const double* b, double* c, int m, int k, int n);     // C += A·B
void nt_acc(const double* a, const double* b, double* c, int m, int k, int n);  // C += A·Bᵀ, B:[n,k]
void tn_acc(const double* a, const double* b, double* c, int m, int k, int n);  // C += Aᵀ·B, A:[m,k], B:[m,n], C:[k,n]
}  // namespace mm

}  // namespace dctts
