#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gsrig/types.hpp"

namespace gsrig::ad {

// Dense row-major tensor of doubles. Most values are (rows, cols) with
// rows = point count; scalars are (1, 1).
struct Tensor {
    int rows = 0, cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c, double fill = 0.0) : rows(r), cols(c), v(size_t(r) * c, fill) {}

    double& operator()(int r, int c) { return v[size_t(r) * cols + c]; }
    double operator()(int r, int c) const { return v[size_t(r) * cols + c]; }
    size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    static Tensor scalar(double x) {
        Tensor t(1, 1);
        t.v[0] = x;
        return t;
    }
};

// Define-by-run reverse-mode tape. Ops are recorded in insertion order and
// backward visits them in exact reverse order, accumulating gradients
// additively. A fresh tape is built every training step.
class Tape {
   public:
    using Id = int;

    Id leaf(const Tensor& t);     // gradient-tracked input (parameter)
    Id constant(Tensor t);        // no gradient

    const Tensor& val(Id id) const { return nodes_[id].value; }
    const Tensor& grad(Id id) const { return nodes_[id].grad; }

    // --- elementwise ---
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);
    Id div(Id a, Id b);
    Id scale(Id a, double c);
    Id add_scalar(Id a, double c);
    Id square(Id a);
    Id abs(Id a);
    Id exp(Id a);
    Id sin(Id a);
    Id cos(Id a);
    Id softplus(Id a, double beta);

    // --- reductions / layout ---
    Id sum(Id a);   // -> (1,1)
    Id mean(Id a);  // -> (1,1)
    Id concat_cols(const std::vector<Id>& parts);
    Id slice_cols(Id a, int c0, int c1);  // [c0, c1)
    Id select_rows(Id a, std::vector<int> indices);
    Id add_rowvec(Id a, Id row);  // (N,C) + (1,C) broadcast over rows

    // --- linear algebra ---
    // x (N,in) * w (in,out) + b (1,out)
    Id affine(Id x, Id w, Id b);
    // w (N,K) combined with fixed per-row stacks (N, K*3) -> (N,3)
    Id linear_combine(Id w, Tensor deltas);

    // --- geometry ---
    Id axis_angle_to_quat(Id aa);  // (N,3) -> (N,4), always unit output
    Id quat_mul(Id a, Id b);       // (N,4) x (N,4)
    Id quat_normalize(Id q);

    // Bilinear sample of three axis-aligned feature planes over [-1,1]^3.
    // pos (N,3); each plane (res*res, ch); output (N, 3*ch). Plane 0 reads
    // (x,y), plane 1 (x,z), plane 2 (y,z).
    Id triplane_sample(Id pos, Id plane_xy, Id plane_xz, Id plane_yz, int res,
                       int ch);

    // Valid-mode correlation of an (H*W, C) image with a fixed kh x kw
    // kernel, applied per channel. Output ((H-kh+1)*(W-kw+1), C).
    Id filter2d(Id img, int h, int w, const std::vector<double>& kernel, int kh,
                int kw);

    // Custom-gradient op: the backward callback receives this tape and the
    // output id and must add into grad_mut(input) for each input it
    // differentiates.
    Id custom(const std::vector<Id>& inputs, Tensor output,
              std::function<void(Tape&, Id)> backward);

    Tensor& grad_mut(Id id) { return nodes_[id].grad; }

    // Seeds d(out)/d(out) = 1 and sweeps the whole tape in reverse.
    void backward(Id scalar_out);

    size_t node_count() const { return nodes_.size(); }

   private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Tape&, Id)> bwd;  // null for leaves/constants
    };

    Id push(Tensor value, std::function<void(Tape&, Id)> bwd);
    void check_same(Id a, Id b, const char* op) const;

    std::vector<Node> nodes_;
};

// PE(x, L) = x ++ [sin(2^l pi x), cos(2^l pi x)], l = 0..L-1, columnwise.
Tape::Id positional_encode(Tape& t, Tape::Id x, int levels);

}  // namespace gsrig::ad
