#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

#include "vsa/common.hpp"
#include "vsa/rng.hpp"

namespace vsa {

class Tensor;

// One node of the computation graph. Values are row-major, f64 by default.
// `backprop` reads this node's accumulated grad and adds contributions into
// the parents' grads; it is only set while the node requires grad.
struct TensorImpl {
    Shape shape;
    std::vector<Scalar> value;
    std::vector<Scalar> grad;  // empty until backward needs it
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(TensorImpl&)> backprop;

    long size() const { return static_cast<long>(value.size()); }
    bool is_leaf() const { return parents.empty(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), Scalar(0));
    }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, Scalar v);
    static Tensor scalar(Scalar v) { return full({1}, v); }
    static Tensor from(Shape shape, std::vector<Scalar> data);
    static Tensor randn(Shape shape, Rng& rng, Scalar sigma = 1.0);
    static Tensor rand_uniform(Shape shape, Rng& rng, Scalar lo = 0.0, Scalar hi = 1.0);
    static Tensor trunc_normal(Shape shape, Rng& rng, Scalar sigma);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    long rank() const { return static_cast<long>(impl_->shape.size()); }
    long dim(long i) const { return impl_->shape[static_cast<size_t>(i)]; }
    long size() const { return impl_->size(); }

    std::span<const Scalar> data() const { return impl_->value; }
    std::span<Scalar> data_mut() { return impl_->value; }
    Scalar item() const;
    Scalar at(std::initializer_list<long> idx) const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        impl_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const Scalar> grad() const;
    std::span<Scalar> grad_mut();
    void zero_grad() { impl_->grad.clear(); }

    TensorImpl& impl() const { return *impl_; }
    const std::shared_ptr<TensorImpl>& ptr() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
    friend Tensor make_tensor(Shape shape);
};

// Allocates a zero-filled node; op builders fill value and wire parents.
Tensor make_tensor(Shape shape);
// Result node for an op: requires_grad and parent links derived from inputs.
Tensor op_result(Shape shape, std::vector<Tensor> parents);

// While alive, ops record no graph (pure inference).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Reverse sweep from a scalar loss. Leaf grads accumulate across calls;
// interior grads are released at the end of each sweep.
void backward(const Tensor& loss);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);
Tensor add_scalar(const Tensor& a, Scalar s);
Tensor gelu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, Scalar slope = 0.01);

// ---- reductions / normalization ----
Tensor sum_all(const Tensor& x);
Tensor softmax(const Tensor& x, long axis);
Tensor log_softmax(const Tensor& x, long axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps = 1e-5);

// ---- contractions ----
// Batched matmul: [..., m, k] x [..., k, n] -> [..., m, n]; leading batch dims
// broadcast where one side has extent 1 (or is absent).
Tensor matmul(const Tensor& a, const Tensor& b);
// x [..., c_in] -> [..., c_out] with optional bias [c_out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---- spatial ----
// Mean over k x k cells with stride k; ragged bottom/right windows divide by
// the true cell count so implicit padding never biases the mean.
Tensor avg_pool2d(const Tensor& x, long kernel);
// Per-channel conv, odd kernel, stride 1, zero pad (k-1)/2; spatial shape kept.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel);
// Bilinear sample of src [H,W,C] at coords [P,2] (x,y in token units). Out of
// bounds neighbors contribute zero. Gradients flow to src and, when
// coord_grad is set, to the coordinates themselves.
Tensor grid_sample_bilinear(const Tensor& src, const Tensor& coords, bool coord_grad = true);
// Zero pad bottom/right of [H,W,C] to [new_h, new_w, C].
Tensor pad2d(const Tensor& x, long new_h, long new_w);
// [H,W,C] -> [H/b, W/b, b*b*C], block-major then channel.
Tensor space_to_depth(const Tensor& x, long block);

// ---- layout ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, const std::vector<long>& perm);
Tensor slice(const Tensor& x, long axis, long start, long len);
Tensor concat(const std::vector<Tensor>& parts, long axis);
Tensor repeat_leading(const Tensor& x, long times);
Tensor gather_rows(const Tensor& table, const std::vector<long>& indices);

// C[m,n] (+)= op(A) * op(B); op transposes the row-major operand when set.
void gemm(bool a_t, bool b_t, long m, long n, long k, const Scalar* a, const Scalar* b, Scalar* c,
          bool accumulate);

}  // namespace vsa
