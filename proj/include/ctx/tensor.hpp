#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ctx/rng.hpp"

namespace ctx {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

/// Dense row-major float32 tensor with reverse-mode autodiff. Value type over
/// shared storage; data is immutable once produced except through the
/// optimizer/grad entry points, which require exclusive access.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
    /// Gaussian init, mean 0.
    static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::int64_t numel() const;
    std::int64_t dim(int i) const;
    bool requires_grad() const;

    std::span<const float> data() const;
    /// In-place access for leaf tensors (parameter updates, test fixtures).
    std::span<float> mutable_data();

    bool has_grad() const;
    std::span<const float> grad() const;
    std::span<float> mutable_grad();
    void zero_grad();

    /// Value of a one-element tensor.
    float item() const;

    /// One-element value from the 64-bit reduction accumulator when the
    /// producing op kept one (reductions and scalar arithmetic do); falls back
    /// to the float32 value.
    double item_double() const;

    /// Reverse-mode sweep from a scalar. Accumulates additively into every
    /// requires_grad leaf reachable from this node, then frees the graph.
    void backward();

    /// Throws if any value is NaN/Inf.
    void assert_finite(const std::string& what) const;
    bool all_finite() const;

    /// Detached copy sharing no graph history.
    Tensor detach() const;

    TensorImpl* impl() const { return impl_.get(); }

private:
    friend struct OpBuilder;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad;  // empty until first accumulation
    // 64-bit value of a one-element tensor, kept by reductions and scalar ops.
    double scalar64 = 0.0;
    bool has_scalar64 = false;
    // Graph edges; cleared when backward() frees the tape.
    std::vector<Tensor> parents;
    std::function<void(TensorImpl&)> backward_fn;

    void accumulate_grad(const float* g, std::int64_t n);
};

/// Global autograd switch. Ops record graph nodes only when enabled.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// ---------------------------------------------------------------------------
// Ops. No implicit broadcasting anywhere except add_bias along the last axis.
// ---------------------------------------------------------------------------

/// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// x + b with b broadcast along the last axis (the one permitted broadcast).
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// Multiply by a compile-time constant.
Tensor scale(const Tensor& x, float c);

/// Multiply by a learnable one-element tensor; gradient flows to both.
Tensor scale_by(const Tensor& x, const Tensor& alpha);

/// Row-wise softmax of a 2-D tensor, max-subtracted for stability.
Tensor softmax_rows(const Tensor& x);

/// Normalizes each trailing-axis vector to mean 0 / variance 1, then applies
/// the affine gamma/beta of size d.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-6f);

Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Mean of the smooth-L1 residual over mask==1 positions; 0 if mask is empty.
/// target and mask are treated as constants.
Tensor smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& mask);

/// Mean two-class cross-entropy of logits [2,H,W] against labels in {0,1}.
Tensor pixel_cross_entropy(const Tensor& logits, const std::vector<float>& labels);

/// 2-D row slice [begin, end).
Tensor slice_rows(const Tensor& x, std::int64_t begin, std::int64_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);

/// Replaces row r of x by `row` wherever row_mask[r] != 0. Gradient flows to x
/// at kept rows and to `row` summed over replaced rows.
Tensor replace_rows(const Tensor& x, const std::vector<std::uint8_t>& row_mask, const Tensor& row);

/// [m,n] -> [n,m].
Tensor transpose2d(const Tensor& x);

/// Same data, new shape (copy-free for metadata purposes; grad passes through).
Tensor reshape(const Tensor& x, Shape new_shape);

/// One query-range attends to one key/value-range.
struct AttentionSpan {
    std::int64_t q_begin, q_end;
    std::int64_t kv_begin, kv_end;
};

/// Fused multi-head scaled-dot-product attention over already-projected
/// q [Lq,d], k/v [Lk,d]. Each span restricts attention to a contiguous block;
/// spans must tile the query rows.
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads,
                           const std::vector<AttentionSpan>& spans);

/// 3x3 same-padding convolution on x [Cin,H,W] with kernel [Cout,Cin,3,3].
Tensor conv3x3(const Tensor& x, const Tensor& kernel, const Tensor& bias);

/// Nearest-neighbor upsampling of [C,H,W] by an integer factor.
Tensor upsample_nearest(const Tensor& x, int factor);

/// Reads CONTEXT_FORGE_THREADS (if set) and caps BLAS parallelism. Safe to
/// call repeatedly.
void configure_threads();

}  // namespace ctx
