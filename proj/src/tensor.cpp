#include "ctx/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <unordered_set>

#include "ctx/errors.hpp"

extern "C" void openblas_set_num_threads(int);

namespace ctx {

namespace {

bool g_grad_enabled = true;

void sgemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
           float alpha, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
           float beta, float* c, std::int64_t ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                beta, c, static_cast<int>(ldc));
}

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void TensorImpl::accumulate_grad(const float* g, std::int64_t n) {
    if (grad.empty()) grad.assign(static_cast<std::size_t>(n), 0.0f);
    for (std::int64_t i = 0; i < n; ++i) grad[static_cast<std::size_t>(i)] += g[i];
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

namespace {

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<float> data, bool requires_grad) {
    const auto n = shape_numel(shape);
    if (static_cast<std::int64_t>(data.size()) != n)
        throw ShapeError("tensor data size " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    if (n == 1) {
        impl->scalar64 = impl->data[0];
        impl->has_scalar64 = true;
    }
    return impl;
}

}  // namespace

struct OpBuilder {
    static Tensor wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }
};

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return OpBuilder::wrap(make_impl(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), 0.0f), requires_grad));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    auto n = shape_numel(shape);
    return OpBuilder::wrap(make_impl(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    return OpBuilder::wrap(make_impl(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::randn(Shape shape, Rng& rng, float stddev, bool requires_grad) {
    const auto n = shape_numel(shape);
    std::vector<float> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = static_cast<float>(rng.normal()) * stddev;
    return OpBuilder::wrap(make_impl(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!impl_) throw ContractError("use of undefined tensor");
    return impl_->shape;
}

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

std::int64_t Tensor::dim(int i) const {
    const auto& s = shape();
    if (i < 0 || static_cast<std::size_t>(i) >= s.size())
        throw ShapeError("dim index out of range for shape " + shape_str(s));
    return s[static_cast<std::size_t>(i)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

std::span<const float> Tensor::data() const {
    if (!impl_) throw ContractError("use of undefined tensor");
    return {impl_->data.data(), impl_->data.size()};
}

std::span<float> Tensor::mutable_data() {
    if (!impl_) throw ContractError("use of undefined tensor");
    return {impl_->data.data(), impl_->data.size()};
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient");
    return {impl_->grad.data(), impl_->grad.size()};
}

std::span<float> Tensor::mutable_grad() {
    if (!has_grad()) throw ContractError("tensor has no gradient");
    return {impl_->grad.data(), impl_->grad.size()};
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

float Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor with " + std::to_string(numel()) + " elements");
    return impl_->data[0];
}

double Tensor::item_double() const {
    if (numel() != 1) throw ContractError("item_double() on tensor with " + std::to_string(numel()) + " elements");
    return impl_->has_scalar64 ? impl_->scalar64 : static_cast<double>(impl_->data[0]);
}

bool Tensor::all_finite() const {
    for (float v : data())
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::assert_finite(const std::string& what) const {
    if (!all_finite()) throw TrainingDivergedError(what + ": non-finite values");
}

Tensor Tensor::detach() const {
    if (!impl_) return {};
    return Tensor::from_data(impl_->shape, impl_->data, false);
}

void Tensor::backward() {
    if (!impl_) throw ContractError("backward on undefined tensor");
    if (numel() != 1) throw ContractError("backward requires a scalar, got shape " + shape_str(shape()));

    // Depth-first topological order over the tape.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* p = node->parents[next].impl();
            ++next;
            if (p && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    impl_->accumulate_grad(std::vector<float>{1.0f}.data(), 1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
    // Free the graph; parameters (leaves) keep their grads.
    for (TensorImpl* node : order) {
        if (node->backward_fn) {
            node->backward_fn = nullptr;
            node->parents.clear();
            node->grad.clear();
        }
    }
}

// ---------------------------------------------------------------------------
// Op plumbing
// ---------------------------------------------------------------------------

namespace {

Tensor make_result(Shape shape, std::vector<float> data, const std::vector<Tensor>& inputs,
                   std::function<void(TensorImpl&)> backward_fn) {
    bool rg = false;
    if (g_grad_enabled)
        for (const auto& t : inputs) rg = rg || t.requires_grad();
    auto impl = make_impl(std::move(shape), std::move(data), rg);
    if (rg) {
        impl->parents = inputs;
        impl->backward_fn = std::move(backward_fn);
    }
    return OpBuilder::wrap(impl);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

double scalar64_of(const Tensor& t) {
    return t.impl()->has_scalar64 ? t.impl()->scalar64 : static_cast<double>(t.data()[0]);
}

void keep_scalar64(Tensor& t, double v) {
    t.impl()->scalar64 = v;
    t.impl()->has_scalar64 = true;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw ShapeError("matmul: expects 2-D operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const auto m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<float> out(static_cast<std::size_t>(m * n), 0.0f);
    if (m > 0 && n > 0 && k > 0)
        sgemm(false, false, m, n, k, 1.0f, a.data().data(), k, b.data().data(), n, 0.0f, out.data(), n);
    return make_result({m, n}, std::move(out), {a, b}, [m, n, k](TensorImpl& self) {
        const float* g = self.grad.data();
        TensorImpl* ia = self.parents[0].impl();
        TensorImpl* ib = self.parents[1].impl();
        if (ia->requires_grad || ia->backward_fn) {
            std::vector<float> da(static_cast<std::size_t>(m * k), 0.0f);
            sgemm(false, true, m, k, n, 1.0f, g, n, ib->data.data(), n, 0.0f, da.data(), k);
            ia->accumulate_grad(da.data(), m * k);
        }
        if (ib->requires_grad || ib->backward_fn) {
            std::vector<float> db(static_cast<std::size_t>(k * n), 0.0f);
            sgemm(true, false, k, n, m, 1.0f, ia->data.data(), k, g, n, 0.0f, db.data(), n);
            ib->accumulate_grad(db.data(), k * n);
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto n = a.numel();
    std::vector<float> out(static_cast<std::size_t>(n));
    const auto da = a.data(), db = b.data();
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = da[static_cast<std::size_t>(i)] + db[static_cast<std::size_t>(i)];
    Tensor r = make_result(a.shape(), std::move(out), {a, b}, [n](TensorImpl& self) {
        self.parents[0].impl()->accumulate_grad(self.grad.data(), n);
        self.parents[1].impl()->accumulate_grad(self.grad.data(), n);
    });
    if (n == 1) keep_scalar64(r, scalar64_of(a) + scalar64_of(b));
    return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    const auto n = a.numel();
    std::vector<float> out(static_cast<std::size_t>(n));
    const auto da = a.data(), db = b.data();
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = da[static_cast<std::size_t>(i)] - db[static_cast<std::size_t>(i)];
    return make_result(a.shape(), std::move(out), {a, b}, [n](TensorImpl& self) {
        self.parents[0].impl()->accumulate_grad(self.grad.data(), n);
        std::vector<float> neg(self.grad.size());
        for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -self.grad[i];
        self.parents[1].impl()->accumulate_grad(neg.data(), n);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto n = a.numel();
    std::vector<float> out(static_cast<std::size_t>(n));
    const auto da = a.data(), db = b.data();
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = da[static_cast<std::size_t>(i)] * db[static_cast<std::size_t>(i)];
    return make_result(a.shape(), std::move(out), {a, b}, [n](TensorImpl& self) {
        std::vector<float> tmp(static_cast<std::size_t>(n));
        const auto& av = self.parents[0].impl()->data;
        const auto& bv = self.parents[1].impl()->data;
        for (std::int64_t i = 0; i < n; ++i) tmp[static_cast<std::size_t>(i)] = self.grad[static_cast<std::size_t>(i)] * bv[static_cast<std::size_t>(i)];
        self.parents[0].impl()->accumulate_grad(tmp.data(), n);
        for (std::int64_t i = 0; i < n; ++i) tmp[static_cast<std::size_t>(i)] = self.grad[static_cast<std::size_t>(i)] * av[static_cast<std::size_t>(i)];
        self.parents[1].impl()->accumulate_grad(tmp.data(), n);
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    const auto& xs = x.shape();
    if (xs.empty()) throw ShapeError("add_bias: scalar input");
    const auto d = xs.back();
    if (bias.numel() != d)
        throw ShapeError("add_bias: bias size " + std::to_string(bias.numel()) + " does not match last axis " +
                         std::to_string(d));
    const auto n = x.numel();
    const auto rows = n / d;
    std::vector<float> out(static_cast<std::size_t>(n));
    const auto dx = x.data(), db = bias.data();
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < d; ++j)
            out[static_cast<std::size_t>(r * d + j)] = dx[static_cast<std::size_t>(r * d + j)] + db[static_cast<std::size_t>(j)];
    return make_result(xs, std::move(out), {x, bias}, [n, rows, d](TensorImpl& self) {
        self.parents[0].impl()->accumulate_grad(self.grad.data(), n);
        std::vector<float> gb(static_cast<std::size_t>(d));
        for (std::int64_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::int64_t r = 0; r < rows; ++r) acc += self.grad[static_cast<std::size_t>(r * d + j)];
            gb[static_cast<std::size_t>(j)] = static_cast<float>(acc);
        }
        self.parents[1].impl()->accumulate_grad(gb.data(), d);
    });
}

Tensor scale(const Tensor& x, float c) {
    const auto n = x.numel();
    std::vector<float> out(static_cast<std::size_t>(n));
    const auto dx = x.data();
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = dx[static_cast<std::size_t>(i)] * c;
    Tensor r = make_result(x.shape(), std::move(out), {x}, [n, c](TensorImpl& self) {
        std::vector<float> g(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = self.grad[static_cast<std::size_t>(i)] * c;
        self.parents[0].impl()->accumulate_grad(g.data(), n);
    });
    if (n == 1) keep_scalar64(r, scalar64_of(x) * static_cast<double>(c));
    return r;
}

Tensor scale_by(const Tensor& x, const Tensor& alpha) {
    if (alpha.numel() != 1) throw ShapeError("scale_by: alpha must be a one-element tensor");
    const auto n = x.numel();
    const float a = alpha.data()[0];
    std::vector<float> out(static_cast<std::size_t>(n));
    const auto dx = x.data();
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = dx[static_cast<std::size_t>(i)] * a;
    return make_result(x.shape(), std::move(out), {x, alpha}, [n](TensorImpl& self) {
        const float av = self.parents[1].impl()->data[0];
        const auto& xv = self.parents[0].impl()->data;
        std::vector<float> gx(static_cast<std::size_t>(n));
        double ga = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            gx[static_cast<std::size_t>(i)] = self.grad[static_cast<std::size_t>(i)] * av;
            ga += static_cast<double>(self.grad[static_cast<std::size_t>(i)]) * xv[static_cast<std::size_t>(i)];
        }
        self.parents[0].impl()->accumulate_grad(gx.data(), n);
        const float gaf = static_cast<float>(ga);
        self.parents[1].impl()->accumulate_grad(&gaf, 1);
    });
}

namespace {

void softmax_rows_raw(const float* x, float* y, std::int64_t rows, std::int64_t cols) {
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* xr = x + r * cols;
        float* yr = y + r * cols;
        float mx = xr[0];
        for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        double denom = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
            const float e = std::exp(xr[j] - mx);
            yr[j] = e;
            denom += e;
        }
        const float inv = static_cast<float>(1.0 / denom);
        for (std::int64_t j = 0; j < cols; ++j) yr[j] *= inv;
    }
}

void softmax_backward_raw(const float* y, const float* gy, float* gx, std::int64_t rows, std::int64_t cols) {
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* yr = y + r * cols;
        const float* gr = gy + r * cols;
        float* xr = gx + r * cols;
        double dot = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) dot += static_cast<double>(yr[j]) * gr[j];
        for (std::int64_t j = 0; j < cols; ++j)
            xr[j] = yr[j] * (gr[j] - static_cast<float>(dot));
    }
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
    if (x.shape().size() != 2) throw ShapeError("softmax_rows: expects a 2-D tensor");
    const auto rows = x.dim(0), cols = x.dim(1);
    std::vector<float> out(static_cast<std::size_t>(rows * cols));
    softmax_rows_raw(x.data().data(), out.data(), rows, cols);
    std::vector<float> saved = out;
    return make_result(x.shape(), std::move(out), {x}, [rows, cols, saved = std::move(saved)](TensorImpl& self) {
        std::vector<float> gx(static_cast<std::size_t>(rows * cols));
        softmax_backward_raw(saved.data(), self.grad.data(), gx.data(), rows, cols);
        self.parents[0].impl()->accumulate_grad(gx.data(), rows * cols);
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    const auto& xs = x.shape();
    if (xs.empty()) throw ShapeError("layer_norm: scalar input");
    const auto d = xs.back();
    if (gamma.numel() != d || beta.numel() != d)
        throw ShapeError("layer_norm: gamma/beta size must equal last axis " + std::to_string(d));
    const auto rows = x.numel() / d;
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    std::vector<float> xhat(static_cast<std::size_t>(x.numel()));
    std::vector<float> inv_sigma(static_cast<std::size_t>(rows));
    const auto xd = x.data(), gd = gamma.data(), bd = beta.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* xr = xd.data() + r * d;
        double s = 0.0;
        for (std::int64_t j = 0; j < d; ++j) s += xr[j];
        const double mu = s / static_cast<double>(d);
        double v = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = xr[j] - mu;
            v += c * c;
        }
        const double var = v / static_cast<double>(d);
        const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        inv_sigma[static_cast<std::size_t>(r)] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const float h = (xr[j] - static_cast<float>(mu)) * is;
            xhat[static_cast<std::size_t>(r * d + j)] = h;
            out[static_cast<std::size_t>(r * d + j)] = h * gd[static_cast<std::size_t>(j)] + bd[static_cast<std::size_t>(j)];
        }
    }
    return make_result(xs, std::move(out), {x, gamma, beta},
                       [rows, d, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](TensorImpl& self) {
        TensorImpl* ix = self.parents[0].impl();
        TensorImpl* ig = self.parents[1].impl();
        TensorImpl* ib = self.parents[2].impl();
        const auto& gd = ig->data;
        std::vector<float> gx(static_cast<std::size_t>(rows * d));
        std::vector<double> ggamma(static_cast<std::size_t>(d), 0.0);
        std::vector<double> gbeta(static_cast<std::size_t>(d), 0.0);
        for (std::int64_t r = 0; r < rows; ++r) {
            const float* gr = self.grad.data() + r * d;
            const float* hr = xhat.data() + r * d;
            double m1 = 0.0, m2 = 0.0;
            for (std::int64_t j = 0; j < d; ++j) {
                const double t = static_cast<double>(gr[j]) * gd[static_cast<std::size_t>(j)];
                m1 += t;
                m2 += t * hr[j];
                ggamma[static_cast<std::size_t>(j)] += static_cast<double>(gr[j]) * hr[j];
                gbeta[static_cast<std::size_t>(j)] += gr[j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            const float is = inv_sigma[static_cast<std::size_t>(r)];
            for (std::int64_t j = 0; j < d; ++j) {
                const double t = static_cast<double>(gr[j]) * gd[static_cast<std::size_t>(j)];
                gx[static_cast<std::size_t>(r * d + j)] = static_cast<float>((t - m1 - hr[j] * m2) * is);
            }
        }
        ix->accumulate_grad(gx.data(), rows * d);
        std::vector<float> gg(static_cast<std::size_t>(d)), gb(static_cast<std::size_t>(d));
        for (std::int64_t j = 0; j < d; ++j) {
            gg[static_cast<std::size_t>(j)] = static_cast<float>(ggamma[static_cast<std::size_t>(j)]);
            gb[static_cast<std::size_t>(j)] = static_cast<float>(gbeta[static_cast<std::size_t>(j)]);
        }
        ig->accumulate_grad(gg.data(), d);
        ib->accumulate_grad(gb.data(), d);
    });
}

Tensor gelu(const Tensor& x) {
    const auto n = x.numel();
    std::vector<float> out(static_cast<std::size_t>(n));
    const auto xd = x.data();
    constexpr double kInvSqrt2 = 0.7071067811865475;
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = xd[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(i)] = static_cast<float>(v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)));
    }
    return make_result(x.shape(), std::move(out), {x}, [n](TensorImpl& self) {
        const auto& xv = self.parents[0].impl()->data;
        std::vector<float> g(static_cast<std::size_t>(n));
        constexpr double kInvSqrt2 = 0.7071067811865475;
        constexpr double kInvSqrt2Pi = 0.3989422804014327;
        for (std::int64_t i = 0; i < n; ++i) {
            const double v = xv[static_cast<std::size_t>(i)];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            g[static_cast<std::size_t>(i)] = static_cast<float>(self.grad[static_cast<std::size_t>(i)] * (cdf + v * pdf));
        }
        self.parents[0].impl()->accumulate_grad(g.data(), n);
    });
}

Tensor sigmoid(const Tensor& x) {
    const auto n = x.numel();
    std::vector<float> out(static_cast<std::size_t>(n));
    const auto xd = x.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const float v = xd[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(i)] = v >= 0 ? 1.0f / (1.0f + std::exp(-v))
                                                  : std::exp(v) / (1.0f + std::exp(v));
    }
    std::vector<float> saved = out;
    return make_result(x.shape(), std::move(out), {x}, [n, saved = std::move(saved)](TensorImpl& self) {
        std::vector<float> g(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            const float y = saved[static_cast<std::size_t>(i)];
            g[static_cast<std::size_t>(i)] = self.grad[static_cast<std::size_t>(i)] * y * (1.0f - y);
        }
        self.parents[0].impl()->accumulate_grad(g.data(), n);
    });
}

Tensor sum(const Tensor& x) {
    const auto n = x.numel();
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    Tensor r = make_result({1}, {static_cast<float>(acc)}, {x}, [n](TensorImpl& self) {
        std::vector<float> g(static_cast<std::size_t>(n), self.grad[0]);
        self.parents[0].impl()->accumulate_grad(g.data(), n);
    });
    keep_scalar64(r, acc);
    return r;
}

Tensor mean(const Tensor& x) {
    const auto n = x.numel();
    if (n == 0) throw ContractError("mean of empty tensor");
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    Tensor r = make_result({1}, {static_cast<float>(acc / static_cast<double>(n))}, {x}, [n](TensorImpl& self) {
        std::vector<float> g(static_cast<std::size_t>(n), self.grad[0] / static_cast<float>(n));
        self.parents[0].impl()->accumulate_grad(g.data(), n);
    });
    keep_scalar64(r, acc / static_cast<double>(n));
    return r;
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    require_same_shape(pred, target, "smooth_l1");
    require_same_shape(pred, mask, "smooth_l1");
    const auto n = pred.numel();
    const auto pd = pred.data(), td = target.data(), md = mask.data();
    double acc = 0.0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (md[static_cast<std::size_t>(i)] == 0.0f) continue;
        ++count;
        const double d = static_cast<double>(pd[static_cast<std::size_t>(i)]) - td[static_cast<std::size_t>(i)];
        const double a = std::abs(d);
        acc += a < 1.0 ? 0.5 * d * d : a - 0.5;
    }
    const float value = count == 0 ? 0.0f : static_cast<float>(acc / static_cast<double>(count));
    Tensor tgt = target.detach(), msk = mask.detach();
    Tensor r = make_result({1}, {value}, {pred, tgt, msk}, [n, count](TensorImpl& self) {
        if (count == 0) return;
        const auto& pv = self.parents[0].impl()->data;
        const auto& tv = self.parents[1].impl()->data;
        const auto& mv = self.parents[2].impl()->data;
        const float gscale = self.grad[0] / static_cast<float>(count);
        std::vector<float> g(static_cast<std::size_t>(n), 0.0f);
        for (std::int64_t i = 0; i < n; ++i) {
            if (mv[static_cast<std::size_t>(i)] == 0.0f) continue;
            const float d = pv[static_cast<std::size_t>(i)] - tv[static_cast<std::size_t>(i)];
            g[static_cast<std::size_t>(i)] = gscale * (std::abs(d) < 1.0f ? d : (d > 0 ? 1.0f : -1.0f));
        }
        self.parents[0].impl()->accumulate_grad(g.data(), n);
    });
    keep_scalar64(r, count == 0 ? 0.0 : acc / static_cast<double>(count));
    return r;
}

Tensor pixel_cross_entropy(const Tensor& logits, const std::vector<float>& labels) {
    const auto& s = logits.shape();
    if (s.size() != 3 || s[0] != 2)
        throw ShapeError("pixel_cross_entropy: logits must be [2,H,W], got " + shape_str(s));
    const auto hw = s[1] * s[2];
    if (static_cast<std::int64_t>(labels.size()) != hw)
        throw ShapeError("pixel_cross_entropy: label count mismatch");
    for (float y : labels)
        if (y != 0.0f && y != 1.0f) throw ContractError("pixel_cross_entropy: labels must be 0 or 1");
    const auto ld = logits.data();
    double acc = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) {
        const double z0 = ld[static_cast<std::size_t>(i)];
        const double z1 = ld[static_cast<std::size_t>(hw + i)];
        const double m = std::max(z0, z1);
        const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
        acc += lse - (labels[static_cast<std::size_t>(i)] > 0.5f ? z1 : z0);
    }
    const float value = static_cast<float>(acc / static_cast<double>(hw));
    Tensor r = make_result({1}, {value}, {logits}, [hw, labels](TensorImpl& self) {
        const auto& zv = self.parents[0].impl()->data;
        std::vector<float> g(static_cast<std::size_t>(2 * hw));
        const float gscale = self.grad[0] / static_cast<float>(hw);
        for (std::int64_t i = 0; i < hw; ++i) {
            const double z0 = zv[static_cast<std::size_t>(i)];
            const double z1 = zv[static_cast<std::size_t>(hw + i)];
            const double m = std::max(z0, z1);
            const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
            const double p1 = e1 / (e0 + e1);
            const bool one = labels[static_cast<std::size_t>(i)] > 0.5f;
            g[static_cast<std::size_t>(i)] = gscale * static_cast<float>((1.0 - p1) - (one ? 0.0 : 1.0));
            g[static_cast<std::size_t>(hw + i)] = gscale * static_cast<float>(p1 - (one ? 1.0 : 0.0));
        }
        self.parents[0].impl()->accumulate_grad(g.data(), 2 * hw);
    });
    keep_scalar64(r, acc / static_cast<double>(hw));
    return r;
}

Tensor slice_rows(const Tensor& x, std::int64_t begin, std::int64_t end) {
    if (x.shape().size() != 2) throw ShapeError("slice_rows: expects a 2-D tensor");
    const auto rows = x.dim(0), cols = x.dim(1);
    if (begin < 0 || end > rows || begin > end)
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of bounds for " + std::to_string(rows) + " rows");
    const auto m = end - begin;
    std::vector<float> out(static_cast<std::size_t>(m * cols));
    std::copy_n(x.data().data() + begin * cols, m * cols, out.data());
    return make_result({m, cols}, std::move(out), {x}, [begin, m, cols, rows](TensorImpl& self) {
        std::vector<float> g(static_cast<std::size_t>(rows * cols), 0.0f);
        std::copy_n(self.grad.data(), m * cols, g.data() + begin * cols);
        self.parents[0].impl()->accumulate_grad(g.data(), rows * cols);
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty input");
    const auto cols = parts[0].dim(1);
    std::int64_t rows = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.dim(1) != cols)
            throw ShapeError("concat_rows: all parts must be 2-D with equal column count");
        rows += p.dim(0);
    }
    std::vector<float> out(static_cast<std::size_t>(rows * cols));
    std::int64_t at = 0;
    std::vector<std::int64_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(at);
        std::copy_n(p.data().data(), p.numel(), out.data() + at * cols);
        at += p.dim(0);
    }
    return make_result({rows, cols}, std::move(out), parts, [cols, offsets](TensorImpl& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            TensorImpl* p = self.parents[i].impl();
            const auto m = p->shape[0];
            p->accumulate_grad(self.grad.data() + offsets[i] * cols, m * cols);
        }
    });
}

Tensor replace_rows(const Tensor& x, const std::vector<std::uint8_t>& row_mask, const Tensor& row) {
    if (x.shape().size() != 2) throw ShapeError("replace_rows: expects a 2-D tensor");
    const auto rows = x.dim(0), cols = x.dim(1);
    if (static_cast<std::int64_t>(row_mask.size()) != rows)
        throw ShapeError("replace_rows: mask length must equal row count");
    if (row.numel() != cols) throw ShapeError("replace_rows: replacement size must equal column count");
    std::vector<float> out(x.data().begin(), x.data().end());
    const auto rd = row.data();
    for (std::int64_t r = 0; r < rows; ++r)
        if (row_mask[static_cast<std::size_t>(r)])
            std::copy_n(rd.data(), cols, out.data() + r * cols);
    return make_result(x.shape(), std::move(out), {x, row}, [rows, cols, row_mask](TensorImpl& self) {
        std::vector<float> gx(static_cast<std::size_t>(rows * cols), 0.0f);
        std::vector<double> gr(static_cast<std::size_t>(cols), 0.0);
        for (std::int64_t r = 0; r < rows; ++r) {
            if (row_mask[static_cast<std::size_t>(r)]) {
                for (std::int64_t j = 0; j < cols; ++j)
                    gr[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(r * cols + j)];
            } else {
                std::copy_n(self.grad.data() + r * cols, cols, gx.data() + r * cols);
            }
        }
        self.parents[0].impl()->accumulate_grad(gx.data(), rows * cols);
        std::vector<float> grf(static_cast<std::size_t>(cols));
        for (std::int64_t j = 0; j < cols; ++j) grf[static_cast<std::size_t>(j)] = static_cast<float>(gr[static_cast<std::size_t>(j)]);
        self.parents[1].impl()->accumulate_grad(grf.data(), cols);
    });
}

Tensor transpose2d(const Tensor& x) {
    if (x.shape().size() != 2) throw ShapeError("transpose2d: expects a 2-D tensor");
    const auto m = x.dim(0), n = x.dim(1);
    std::vector<float> out(static_cast<std::size_t>(m * n));
    const auto xd = x.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j * m + i)] = xd[static_cast<std::size_t>(i * n + j)];
    return make_result({n, m}, std::move(out), {x}, [m, n](TensorImpl& self) {
        std::vector<float> g(static_cast<std::size_t>(m * n));
        for (std::int64_t j = 0; j < n; ++j)
            for (std::int64_t i = 0; i < m; ++i)
                g[static_cast<std::size_t>(i * n + j)] = self.grad[static_cast<std::size_t>(j * m + i)];
        self.parents[0].impl()->accumulate_grad(g.data(), m * n);
    });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
    const auto n = x.numel();
    std::vector<float> out(x.data().begin(), x.data().end());
    return make_result(std::move(new_shape), std::move(out), {x}, [n](TensorImpl& self) {
        self.parents[0].impl()->accumulate_grad(self.grad.data(), n);
    });
}

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads,
                           const std::vector<AttentionSpan>& spans) {
    if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2)
        throw ShapeError("multihead_attention: expects 2-D q/k/v");
    const auto lq = q.dim(0), d = q.dim(1);
    if (k.dim(1) != d || v.dim(1) != d) throw ShapeError("multihead_attention: dim mismatch");
    if (k.dim(0) != v.dim(0)) throw ShapeError("multihead_attention: k/v row mismatch");
    const auto lk = k.dim(0);
    if (n_heads <= 0 || d % n_heads != 0)
        throw ContractError("multihead_attention: head count must divide dim");
    const auto dh = d / n_heads;
    const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));
    if (spans.empty()) throw ContractError("multihead_attention: spans must tile the query rows");
    std::int64_t covered = 0;
    for (const auto& sp : spans) {
        if (sp.q_begin != covered || sp.q_end <= sp.q_begin || sp.q_end > lq)
            throw ContractError("multihead_attention: spans must tile the query rows in order");
        if (sp.kv_begin < 0 || sp.kv_end > lk || sp.kv_begin >= sp.kv_end)
            throw ContractError("multihead_attention: kv span out of range");
        covered = sp.q_end;
    }
    if (covered != lq) throw ContractError("multihead_attention: spans must cover all query rows");

    // Per-head strided views: head h of row r lives at [r*d + h*dh, dh).
    std::vector<float> out(static_cast<std::size_t>(lq * d), 0.0f);
    // Saved softmax probabilities, laid out per (span, head) block.
    std::size_t probs_size = 0;
    for (const auto& sp : spans)
        probs_size += static_cast<std::size_t>((sp.q_end - sp.q_begin) * (sp.kv_end - sp.kv_begin)) *
                      static_cast<std::size_t>(n_heads);
    std::vector<float> probs(probs_size);

    const float* qd = q.data().data();
    const float* kd = k.data().data();
    const float* vd = v.data().data();
    std::size_t pofs = 0;
    for (const auto& sp : spans) {
        const auto mq = sp.q_end - sp.q_begin;
        const auto mk = sp.kv_end - sp.kv_begin;
        std::vector<float> scores(static_cast<std::size_t>(mq * mk));
        for (int h = 0; h < n_heads; ++h) {
            const float* qh = qd + sp.q_begin * d + h * dh;
            const float* kh = kd + sp.kv_begin * d + h * dh;
            const float* vh = vd + sp.kv_begin * d + h * dh;
            sgemm(false, true, mq, mk, dh, att_scale, qh, d, kh, d, 0.0f, scores.data(), mk);
            float* ph = probs.data() + pofs;
            softmax_rows_raw(scores.data(), ph, mq, mk);
            sgemm(false, false, mq, dh, mk, 1.0f, ph, mk, vh, d, 0.0f, out.data() + sp.q_begin * d + h * dh, d);
            pofs += static_cast<std::size_t>(mq * mk);
        }
    }

    return make_result({lq, d}, std::move(out), {q, k, v},
                       [lq, lk, d, dh, n_heads, att_scale, spans, probs = std::move(probs)](TensorImpl& self) {
        TensorImpl* iq = self.parents[0].impl();
        TensorImpl* ik = self.parents[1].impl();
        TensorImpl* iv = self.parents[2].impl();
        std::vector<float> gq(static_cast<std::size_t>(lq * d), 0.0f);
        std::vector<float> gk(static_cast<std::size_t>(lk * d), 0.0f);
        std::vector<float> gv(static_cast<std::size_t>(lk * d), 0.0f);
        const float* god = self.grad.data();
        std::size_t pofs = 0;
        for (const auto& sp : spans) {
            const auto mq = sp.q_end - sp.q_begin;
            const auto mk = sp.kv_end - sp.kv_begin;
            std::vector<float> dp(static_cast<std::size_t>(mq * mk));
            std::vector<float> ds(static_cast<std::size_t>(mq * mk));
            for (int h = 0; h < n_heads; ++h) {
                const float* ph = probs.data() + pofs;
                const float* goh = god + sp.q_begin * d + h * dh;
                const float* qh = iq->data.data() + sp.q_begin * d + h * dh;
                const float* kh = ik->data.data() + sp.kv_begin * d + h * dh;
                const float* vh = iv->data.data() + sp.kv_begin * d + h * dh;
                // dV += P^T dOut
                sgemm(true, false, mk, dh, mq, 1.0f, ph, mk, goh, d, 1.0f, gv.data() + sp.kv_begin * d + h * dh, d);
                // dP = dOut V^T
                sgemm(false, true, mq, mk, dh, 1.0f, goh, d, vh, d, 0.0f, dp.data(), mk);
                // dS = P o (dP - rowsum(dP o P))
                softmax_backward_raw(ph, dp.data(), ds.data(), mq, mk);
                // dQ += scale * dS K ; dK += scale * dS^T Q
                sgemm(false, false, mq, dh, mk, att_scale, ds.data(), mk, kh, d, 1.0f, gq.data() + sp.q_begin * d + h * dh, d);
                sgemm(true, false, mk, dh, mq, att_scale, ds.data(), mk, qh, d, 1.0f, gk.data() + sp.kv_begin * d + h * dh, d);
                pofs += static_cast<std::size_t>(mq * mk);
            }
        }
        iq->accumulate_grad(gq.data(), lq * d);
        ik->accumulate_grad(gk.data(), lk * d);
        iv->accumulate_grad(gv.data(), lk * d);
    });
}

namespace {

// Gathers 3x3 neighborhoods into a [H*W, Cin*9] matrix (zero padded).
void im2col3x3(const float* x, std::int64_t cin, std::int64_t h, std::int64_t w, float* col) {
    for (std::int64_t i = 0; i < h; ++i) {
        for (std::int64_t j = 0; j < w; ++j) {
            float* row = col + (i * w + j) * cin * 9;
            for (std::int64_t c = 0; c < cin; ++c) {
                for (int di = -1; di <= 1; ++di) {
                    for (int dj = -1; dj <= 1; ++dj) {
                        const std::int64_t ii = i + di, jj = j + dj;
                        const std::size_t idx = static_cast<std::size_t>(c * 9 + (di + 1) * 3 + (dj + 1));
                        row[idx] = (ii < 0 || ii >= h || jj < 0 || jj >= w)
                                       ? 0.0f
                                       : x[(c * h + ii) * w + jj];
                    }
                }
            }
        }
    }
}

void col2im3x3(const float* col, std::int64_t cin, std::int64_t h, std::int64_t w, float* x) {
    std::fill_n(x, cin * h * w, 0.0f);
    for (std::int64_t i = 0; i < h; ++i) {
        for (std::int64_t j = 0; j < w; ++j) {
            const float* row = col + (i * w + j) * cin * 9;
            for (std::int64_t c = 0; c < cin; ++c) {
                for (int di = -1; di <= 1; ++di) {
                    for (int dj = -1; dj <= 1; ++dj) {
                        const std::int64_t ii = i + di, jj = j + dj;
                        if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                        x[(c * h + ii) * w + jj] += row[c * 9 + (di + 1) * 3 + (dj + 1)];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv3x3(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    const auto& xs = x.shape();
    const auto& ks = kernel.shape();
    if (xs.size() != 3) throw ShapeError("conv3x3: input must be [C,H,W]");
    if (ks.size() != 4 || ks[2] != 3 || ks[3] != 3)
        throw ShapeError("conv3x3: kernel must be [Cout,Cin,3,3]");
    const auto cin = xs[0], h = xs[1], w = xs[2];
    if (ks[1] != cin) throw ShapeError("conv3x3: channel mismatch");
    const auto cout = ks[0];
    if (bias.numel() != cout) throw ShapeError("conv3x3: bias size must equal Cout");

    const auto hw = h * w;
    std::vector<float> col(static_cast<std::size_t>(hw * cin * 9));
    im2col3x3(x.data().data(), cin, h, w, col.data());
    // out_mat [HW, Cout] = col [HW, Cin*9] * K^T
    std::vector<float> out_mat(static_cast<std::size_t>(hw * cout));
    sgemm(false, true, hw, cout, cin * 9, 1.0f, col.data(), cin * 9, kernel.data().data(), cin * 9,
          0.0f, out_mat.data(), cout);
    std::vector<float> out(static_cast<std::size_t>(cout * hw));
    const auto bd = bias.data();
    for (std::int64_t p = 0; p < hw; ++p)
        for (std::int64_t c = 0; c < cout; ++c)
            out[static_cast<std::size_t>(c * hw + p)] = out_mat[static_cast<std::size_t>(p * cout + c)] + bd[static_cast<std::size_t>(c)];

    return make_result({cout, h, w}, std::move(out), {x, kernel, bias},
                       [cin, cout, h, w, col = std::move(col)](TensorImpl& self) {
        const auto hw = h * w;
        std::vector<float> go_mat(static_cast<std::size_t>(hw * cout));
        for (std::int64_t p = 0; p < hw; ++p)
            for (std::int64_t c = 0; c < cout; ++c)
                go_mat[static_cast<std::size_t>(p * cout + c)] = self.grad[static_cast<std::size_t>(c * hw + p)];
        TensorImpl* ix = self.parents[0].impl();
        TensorImpl* ik = self.parents[1].impl();
        TensorImpl* ib = self.parents[2].impl();
        // dK = dOut^T col
        std::vector<float> gk(static_cast<std::size_t>(cout * cin * 9), 0.0f);
        sgemm(true, false, cout, cin * 9, hw, 1.0f, go_mat.data(), cout, col.data(), cin * 9, 0.0f,
              gk.data(), cin * 9);
        ik->accumulate_grad(gk.data(), cout * cin * 9);
        // dcol = dOut K ; dX = col2im(dcol)
        std::vector<float> gcol(static_cast<std::size_t>(hw * cin * 9));
        sgemm(false, false, hw, cin * 9, cout, 1.0f, go_mat.data(), cout, ik->data.data(), cin * 9,
              0.0f, gcol.data(), cin * 9);
        std::vector<float> gx(static_cast<std::size_t>(cin * hw));
        col2im3x3(gcol.data(), cin, h, w, gx.data());
        ix->accumulate_grad(gx.data(), cin * hw);
        std::vector<float> gb(static_cast<std::size_t>(cout));
        for (std::int64_t c = 0; c < cout; ++c) {
            double acc = 0.0;
            for (std::int64_t p = 0; p < hw; ++p) acc += self.grad[static_cast<std::size_t>(c * hw + p)];
            gb[static_cast<std::size_t>(c)] = static_cast<float>(acc);
        }
        ib->accumulate_grad(gb.data(), cout);
    });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
    const auto& xs = x.shape();
    if (xs.size() != 3) throw ShapeError("upsample_nearest: input must be [C,H,W]");
    if (factor < 1) throw ContractError("upsample_nearest: factor must be >= 1");
    const auto c = xs[0], h = xs[1], w = xs[2];
    const auto ho = h * factor, wo = w * factor;
    std::vector<float> out(static_cast<std::size_t>(c * ho * wo));
    const auto xd = x.data();
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < ho; ++i)
            for (std::int64_t j = 0; j < wo; ++j)
                out[static_cast<std::size_t>((ch * ho + i) * wo + j)] =
                    xd[static_cast<std::size_t>((ch * h + i / factor) * w + j / factor)];
    return make_result({c, ho, wo}, std::move(out), {x}, [c, h, w, factor](TensorImpl& self) {
        const auto ho = h * factor, wo = w * factor;
        std::vector<float> g(static_cast<std::size_t>(c * h * w), 0.0f);
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t i = 0; i < ho; ++i)
                for (std::int64_t j = 0; j < wo; ++j)
                    g[static_cast<std::size_t>((ch * h + i / factor) * w + j / factor)] +=
                        self.grad[static_cast<std::size_t>((ch * ho + i) * wo + j)];
        self.parents[0].impl()->accumulate_grad(g.data(), c * h * w);
    });
}

void configure_threads() {
    int threads = 0;
    if (const char* env = std::getenv("CONTEXT_FORGE_THREADS")) {
        threads = std::atoi(env);
        if (threads < 1) threads = 1;
    }
    if (threads > 0) openblas_set_num_threads(threads);
}

}  // namespace ctx
