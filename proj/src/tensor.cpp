#include "vsa/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace vsa {

namespace {

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

std::vector<long> contiguous_strides(const Shape& shape) {
    std::vector<long> strides(shape.size(), 1);
    for (long i = static_cast<long>(shape.size()) - 2; i >= 0; --i) {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    return strides;
}

void check_axis(const Tensor& x, long axis, const char* op) {
    if (axis < 0 || axis >= x.rank()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for shape " + shape_str(x.shape()));
    }
}

constexpr long kElemGrain = 1 << 14;

}  // namespace

Tensor make_tensor(Shape shape) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->value.assign(static_cast<size_t>(numel(t.impl_->shape)), Scalar(0));
    return t;
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor op_result(Shape shape, std::vector<Tensor> parents) {
    Tensor out = make_tensor(std::move(shape));
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
        out.impl().requires_grad = true;
        out.impl().parents = std::move(parents);
    }
    return out;
}

Tensor Tensor::zeros(Shape shape) { return make_tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, Scalar v) {
    Tensor t = make_tensor(std::move(shape));
    std::fill(t.impl_->value.begin(), t.impl_->value.end(), v);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> data) {
    if (numel(shape) != static_cast<long>(data.size())) {
        throw DimensionError("from: shape " + shape_str(shape) + " needs " +
                             std::to_string(numel(shape)) + " values, got " +
                             std::to_string(data.size()));
    }
    Tensor t = make_tensor(std::move(shape));
    t.impl_->value = std::move(data);
    return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, Scalar sigma) {
    Tensor t = make_tensor(std::move(shape));
    for (auto& v : t.impl_->value) v = static_cast<Scalar>(rng.normal(0.0, sigma));
    return t;
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, Scalar lo, Scalar hi) {
    Tensor t = make_tensor(std::move(shape));
    for (auto& v : t.impl_->value) v = static_cast<Scalar>(rng.uniform(lo, hi));
    return t;
}

Tensor Tensor::trunc_normal(Shape shape, Rng& rng, Scalar sigma) {
    Tensor t = make_tensor(std::move(shape));
    for (auto& v : t.impl_->value) v = static_cast<Scalar>(rng.trunc_normal(sigma));
    return t;
}

Scalar Tensor::item() const {
    if (size() != 1) throw ContractError("item: tensor has shape " + shape_str(shape()));
    return impl_->value[0];
}

Scalar Tensor::at(std::initializer_list<long> idx) const {
    const auto strides = contiguous_strides(shape());
    if (idx.size() != strides.size()) throw DimensionError("at: rank mismatch");
    long off = 0;
    size_t i = 0;
    for (long v : idx) off += v * strides[i++];
    return impl_->value[static_cast<size_t>(off)];
}

std::span<const Scalar> Tensor::grad() const {
    if (impl_->grad.empty()) throw ContractError("grad: no gradient recorded");
    return impl_->grad;
}

std::span<Scalar> Tensor::grad_mut() {
    impl_->ensure_grad();
    return impl_->grad;
}

// ---------------------------------------------------------------- backward

void backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        return;  // nothing reachable requires grad
    }
    // Iterative postorder over parents; each node visited exactly once.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, size_t>> stack;
    stack.emplace_back(&loss.impl(), 0);
    visited.insert(&loss.impl());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* parent = node->parents[next].ptr().get();
            ++next;
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.impl().ensure_grad();
    loss.impl().grad[0] += Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backprop) {
            node->ensure_grad();
            node->backprop(*node);
        }
    }
    // Interior grads are per-sweep scratch; leaves keep accumulating.
    for (TensorImpl* node : order) {
        if (!node->is_leaf()) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

// ------------------------------------------------------------- elementwise

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = op_result(a.shape(), {a, b});
    const Scalar* pa = a.data().data();
    const Scalar* pb = b.data().data();
    Scalar* po = out.data_mut().data();
    parallel_for(a.size(), kElemGrain, [&](long lo, long hi) {
        for (long i = lo; i < hi; ++i) po[i] = pa[i] + pb[i];
    });
    if (out.requires_grad()) {
        out.impl().backprop = [](TensorImpl& self) {
            for (int side = 0; side < 2; ++side) {
                TensorImpl& p = *self.parents[side].ptr();
                if (!p.requires_grad) continue;
                p.ensure_grad();
                for (long i = 0; i < self.size(); ++i) p.grad[i] += self.grad[i];
            }
        };
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = op_result(a.shape(), {a, b});
    const Scalar* pa = a.data().data();
    const Scalar* pb = b.data().data();
    Scalar* po = out.data_mut().data();
    for (long i = 0; i < a.size(); ++i) po[i] = pa[i] - pb[i];
    if (out.requires_grad()) {
        out.impl().backprop = [](TensorImpl& self) {
            TensorImpl& a = *self.parents[0].ptr();
            TensorImpl& b = *self.parents[1].ptr();
            if (a.requires_grad) {
                a.ensure_grad();
                for (long i = 0; i < self.size(); ++i) a.grad[i] += self.grad[i];
            }
            if (b.requires_grad) {
                b.ensure_grad();
                for (long i = 0; i < self.size(); ++i) b.grad[i] -= self.grad[i];
            }
        };
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = op_result(a.shape(), {a, b});
    const Scalar* pa = a.data().data();
    const Scalar* pb = b.data().data();
    Scalar* po = out.data_mut().data();
    for (long i = 0; i < a.size(); ++i) po[i] = pa[i] * pb[i];
    if (out.requires_grad()) {
        out.impl().backprop = [](TensorImpl& self) {
            TensorImpl& a = *self.parents[0].ptr();
            TensorImpl& b = *self.parents[1].ptr();
            if (a.requires_grad) {
                a.ensure_grad();
                for (long i = 0; i < self.size(); ++i) a.grad[i] += self.grad[i] * b.value[i];
            }
            if (b.requires_grad) {
                b.ensure_grad();
                for (long i = 0; i < self.size(); ++i) b.grad[i] += self.grad[i] * a.value[i];
            }
        };
    }
    return out;
}

Tensor scale(const Tensor& a, Scalar s) {
    Tensor out = op_result(a.shape(), {a});
    const Scalar* pa = a.data().data();
    Scalar* po = out.data_mut().data();
    for (long i = 0; i < a.size(); ++i) po[i] = pa[i] * s;
    if (out.requires_grad()) {
        out.impl().backprop = [s](TensorImpl& self) {
            TensorImpl& a = *self.parents[0].ptr();
            a.ensure_grad();
            for (long i = 0; i < self.size(); ++i) a.grad[i] += self.grad[i] * s;
        };
    }
    return out;
}

Tensor add_scalar(const Tensor& a, Scalar s) {
    Tensor out = op_result(a.shape(), {a});
    const Scalar* pa = a.data().data();
    Scalar* po = out.data_mut().data();
    for (long i = 0; i < a.size(); ++i) po[i] = pa[i] + s;
    if (out.requires_grad()) {
        out.impl().backprop = [](TensorImpl& self) {
            TensorImpl& a = *self.parents[0].ptr();
            a.ensure_grad();
            for (long i = 0; i < self.size(); ++i) a.grad[i] += self.grad[i];
        };
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = op_result(x.shape(), {x});
    const Scalar* px = x.data().data();
    Scalar* po = out.data_mut().data();
    constexpr Scalar inv_sqrt2 = 0.70710678118654752440;
    parallel_for(x.size(), kElemGrain, [&](long lo, long hi) {
        for (long i = lo; i < hi; ++i) {
            po[i] = Scalar(0.5) * px[i] * (Scalar(1) + std::erf(px[i] * inv_sqrt2));
        }
    });
    if (out.requires_grad()) {
        out.impl().backprop = [](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            x.ensure_grad();
            constexpr Scalar inv_sqrt2pi = 0.39894228040143267794;
            const Scalar* px = x.value.data();
            const Scalar* pg = self.grad.data();
            Scalar* pd = x.grad.data();
            parallel_for(self.size(), kElemGrain, [&](long lo, long hi) {
                for (long i = lo; i < hi; ++i) {
                    const Scalar v = px[i];
                    const Scalar cdf =
                        Scalar(0.5) * (Scalar(1) + std::erf(v * Scalar(0.70710678118654752440)));
                    const Scalar pdf = inv_sqrt2pi * std::exp(Scalar(-0.5) * v * v);
                    pd[i] += pg[i] * (cdf + v * pdf);
                }
            });
        };
    }
    return out;
}

Tensor leaky_relu(const Tensor& x, Scalar slope) {
    Tensor out = op_result(x.shape(), {x});
    const Scalar* px = x.data().data();
    Scalar* po = out.data_mut().data();
    for (long i = 0; i < x.size(); ++i) po[i] = px[i] > Scalar(0) ? px[i] : slope * px[i];
    if (out.requires_grad()) {
        // Subgradient at 0 pinned to the slope.
        out.impl().backprop = [slope](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            x.ensure_grad();
            for (long i = 0; i < self.size(); ++i) {
                x.grad[i] += self.grad[i] * (x.value[i] > Scalar(0) ? Scalar(1) : slope);
            }
        };
    }
    return out;
}

// ------------------------------------------------- reductions/normalization

Tensor sum_all(const Tensor& x) {
    Tensor out = op_result({1}, {x});
    Scalar acc = 0;
    for (Scalar v : x.data()) acc += v;
    out.data_mut()[0] = acc;
    if (out.requires_grad()) {
        out.impl().backprop = [](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            x.ensure_grad();
            const Scalar g = self.grad[0];
            for (auto& v : x.grad) v += g;
        };
    }
    return out;
}

namespace {

struct AxisSplit {
    long outer, n, inner;
};

AxisSplit split_at(const Shape& shape, long axis) {
    AxisSplit s{1, shape[axis], 1};
    for (long i = 0; i < axis; ++i) s.outer *= shape[i];
    for (long i = axis + 1; i < static_cast<long>(shape.size()); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

Tensor softmax(const Tensor& x, long axis) {
    check_axis(x, axis, "softmax");
    const AxisSplit sp = split_at(x.shape(), axis);
    Tensor out = op_result(x.shape(), {x});
    const Scalar* px = x.data().data();
    Scalar* po = out.data_mut().data();
    parallel_for(sp.outer * sp.inner, 64, [&](long lo, long hi) {
        for (long r = lo; r < hi; ++r) {
            const long o = r / sp.inner;
            const long in = r % sp.inner;
            const long base = o * sp.n * sp.inner + in;
            Scalar mx = px[base];
            for (long k = 1; k < sp.n; ++k) mx = std::max(mx, px[base + k * sp.inner]);
            Scalar denom = 0;
            for (long k = 0; k < sp.n; ++k) {
                const Scalar e = std::exp(px[base + k * sp.inner] - mx);
                po[base + k * sp.inner] = e;
                denom += e;
            }
            const Scalar inv = Scalar(1) / denom;
            for (long k = 0; k < sp.n; ++k) po[base + k * sp.inner] *= inv;
        }
    });
    if (out.requires_grad()) {
        out.impl().backprop = [sp](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            x.ensure_grad();
            const Scalar* ps = self.value.data();
            const Scalar* pg = self.grad.data();
            Scalar* pd = x.grad.data();
            parallel_for(sp.outer * sp.inner, 64, [&](long lo, long hi) {
                for (long r = lo; r < hi; ++r) {
                    const long o = r / sp.inner;
                    const long in = r % sp.inner;
                    const long base = o * sp.n * sp.inner + in;
                    Scalar dot = 0;
                    for (long k = 0; k < sp.n; ++k) {
                        dot += pg[base + k * sp.inner] * ps[base + k * sp.inner];
                    }
                    for (long k = 0; k < sp.n; ++k) {
                        const long at = base + k * sp.inner;
                        pd[at] += ps[at] * (pg[at] - dot);
                    }
                }
            });
        };
    }
    return out;
}

Tensor log_softmax(const Tensor& x, long axis) {
    check_axis(x, axis, "log_softmax");
    const AxisSplit sp = split_at(x.shape(), axis);
    Tensor out = op_result(x.shape(), {x});
    const Scalar* px = x.data().data();
    Scalar* po = out.data_mut().data();
    for (long r = 0; r < sp.outer * sp.inner; ++r) {
        const long o = r / sp.inner;
        const long in = r % sp.inner;
        const long base = o * sp.n * sp.inner + in;
        Scalar mx = px[base];
        for (long k = 1; k < sp.n; ++k) mx = std::max(mx, px[base + k * sp.inner]);
        Scalar denom = 0;
        for (long k = 0; k < sp.n; ++k) denom += std::exp(px[base + k * sp.inner] - mx);
        const Scalar log_denom = std::log(denom) + mx;
        for (long k = 0; k < sp.n; ++k) {
            po[base + k * sp.inner] = px[base + k * sp.inner] - log_denom;
        }
    }
    if (out.requires_grad()) {
        out.impl().backprop = [sp](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            x.ensure_grad();
            const Scalar* py = self.value.data();
            const Scalar* pg = self.grad.data();
            Scalar* pd = x.grad.data();
            for (long r = 0; r < sp.outer * sp.inner; ++r) {
                const long o = r / sp.inner;
                const long in = r % sp.inner;
                const long base = o * sp.n * sp.inner + in;
                Scalar gsum = 0;
                for (long k = 0; k < sp.n; ++k) gsum += pg[base + k * sp.inner];
                for (long k = 0; k < sp.n; ++k) {
                    const long at = base + k * sp.inner;
                    pd[at] += pg[at] - std::exp(py[at]) * gsum;
                }
            }
        };
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps) {
    const long c = x.dim(x.rank() - 1);
    if (gain.shape() != Shape{c} || bias.shape() != Shape{c}) {
        throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(c) + "], got " +
                             shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    }
    const long rows = x.size() / c;
    Tensor out = op_result(x.shape(), {x, gain, bias});
    // mean and inverse stddev per row, reused by the backward pass
    auto stats = std::make_shared<std::vector<Scalar>>(static_cast<size_t>(rows) * 2);
    const Scalar* px = x.data().data();
    const Scalar* pgain = gain.data().data();
    const Scalar* pbias = bias.data().data();
    Scalar* po = out.data_mut().data();
    Scalar* pst = stats->data();
    parallel_for(rows, 16, [&](long lo, long hi) {
        for (long r = lo; r < hi; ++r) {
            const Scalar* row = px + r * c;
            Scalar mean = 0;
            for (long j = 0; j < c; ++j) mean += row[j];
            mean /= static_cast<Scalar>(c);
            Scalar var = 0;
            for (long j = 0; j < c; ++j) {
                const Scalar d = row[j] - mean;
                var += d * d;
            }
            var /= static_cast<Scalar>(c);
            const Scalar inv_std = Scalar(1) / std::sqrt(var + eps);
            pst[2 * r] = mean;
            pst[2 * r + 1] = inv_std;
            Scalar* orow = po + r * c;
            for (long j = 0; j < c; ++j) {
                orow[j] = (row[j] - mean) * inv_std * pgain[j] + pbias[j];
            }
        }
    });
    if (out.requires_grad()) {
        out.impl().backprop = [stats, rows, c](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            TensorImpl& gain = *self.parents[1].ptr();
            TensorImpl& bias = *self.parents[2].ptr();
            const Scalar* px = x.value.data();
            const Scalar* pgain = gain.value.data();
            const Scalar* pg = self.grad.data();
            const Scalar* pst = stats->data();
            if (x.requires_grad) {
                x.ensure_grad();
                Scalar* pd = x.grad.data();
                parallel_for(rows, 16, [&](long lo, long hi) {
                    for (long r = lo; r < hi; ++r) {
                        const Scalar mean = pst[2 * r], inv_std = pst[2 * r + 1];
                        const Scalar* grow = pg + r * c;
                        const Scalar* xrow = px + r * c;
                        Scalar sum_g = 0, sum_gx = 0;
                        for (long j = 0; j < c; ++j) {
                            const Scalar gj = grow[j] * pgain[j];
                            const Scalar xh = (xrow[j] - mean) * inv_std;
                            sum_g += gj;
                            sum_gx += gj * xh;
                        }
                        const Scalar inv_c = Scalar(1) / static_cast<Scalar>(c);
                        Scalar* drow = pd + r * c;
                        for (long j = 0; j < c; ++j) {
                            const Scalar gj = grow[j] * pgain[j];
                            const Scalar xh = (xrow[j] - mean) * inv_std;
                            drow[j] += inv_std * (gj - inv_c * sum_g - xh * inv_c * sum_gx);
                        }
                    }
                });
            }
            if (gain.requires_grad || bias.requires_grad) {
                if (gain.requires_grad) gain.ensure_grad();
                if (bias.requires_grad) bias.ensure_grad();
                for (long r = 0; r < rows; ++r) {
                    const Scalar mean = pst[2 * r], inv_std = pst[2 * r + 1];
                    const Scalar* grow = pg + r * c;
                    const Scalar* xrow = px + r * c;
                    for (long j = 0; j < c; ++j) {
                        if (gain.requires_grad) {
                            gain.grad[j] += grow[j] * (xrow[j] - mean) * inv_std;
                        }
                        if (bias.requires_grad) bias.grad[j] += grow[j];
                    }
                }
            }
        };
    }
    return out;
}

// ------------------------------------------------------------- contractions

void gemm(bool a_t, bool b_t, long m, long n, long k, const Scalar* a, const Scalar* b, Scalar* c,
          bool accumulate) {
    auto run_rows = [&](long r0, long r1) {
        const long mm = r1 - r0;
        MapMat C(c + r0 * n, mm, n);
        auto apply = [&](const auto& expr) {
            if (accumulate) {
                C.noalias() += expr;
            } else {
                C.noalias() = expr;
            }
        };
        if (!a_t && !b_t) {
            apply(MapConst(a + r0 * k, mm, k) * MapConst(b, k, n));
        } else if (a_t && !b_t) {
            apply(MapConst(a, k, m).middleCols(r0, mm).transpose() * MapConst(b, k, n));
        } else if (!a_t && b_t) {
            apply(MapConst(a + r0 * k, mm, k) * MapConst(b, n, k).transpose());
        } else {
            apply(MapConst(a, k, m).middleCols(r0, mm).transpose() * MapConst(b, n, k).transpose());
        }
    };
    if (m * n * k >= (1 << 16) && m >= 2) {
        parallel_for(m, 8, run_rows);
    } else {
        run_rows(0, m);
    }
}

namespace {

struct BatchPlan {
    long batch = 1;                  // number of output batch elements
    std::vector<long> out_batch;     // output batch shape
    std::vector<long> a_stride;      // per batch axis, in units of a's matrix size
    std::vector<long> b_stride;
};

BatchPlan plan_batches(const Tensor& a, const Tensor& b, const char* op) {
    const long ra = a.rank() - 2, rb = b.rank() - 2;
    const long r = std::max(ra, rb);
    BatchPlan plan;
    plan.out_batch.resize(r);
    plan.a_stride.resize(r);
    plan.b_stride.resize(r);
    std::vector<long> a_dims(r, 1), b_dims(r, 1);
    for (long i = 0; i < ra; ++i) a_dims[r - ra + i] = a.dim(i);
    for (long i = 0; i < rb; ++i) b_dims[r - rb + i] = b.dim(i);
    for (long i = 0; i < r; ++i) {
        if (a_dims[i] != b_dims[i] && a_dims[i] != 1 && b_dims[i] != 1) {
            throw DimensionError(std::string(op) + ": batch dims incompatible " +
                                 shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        }
        plan.out_batch[i] = std::max(a_dims[i], b_dims[i]);
        plan.batch *= plan.out_batch[i];
    }
    // strides in batch elements; 0 where broadcast
    long sa = 1, sb = 1;
    for (long i = r - 1; i >= 0; --i) {
        plan.a_stride[i] = (a_dims[i] == 1) ? 0 : sa;
        plan.b_stride[i] = (b_dims[i] == 1) ? 0 : sb;
        sa *= a_dims[i];
        sb *= b_dims[i];
    }
    return plan;
}

void batch_offsets(const BatchPlan& plan, long out_idx, long* a_idx, long* b_idx) {
    long rem = out_idx, ai = 0, bi = 0;
    for (long i = static_cast<long>(plan.out_batch.size()) - 1; i >= 0; --i) {
        const long pos = rem % plan.out_batch[i];
        rem /= plan.out_batch[i];
        ai += pos * plan.a_stride[i];
        bi += pos * plan.b_stride[i];
    }
    *a_idx = ai;
    *b_idx = bi;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    const long m = a.dim(a.rank() - 2), ka = a.dim(a.rank() - 1);
    const long kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
    if (ka != kb) {
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const BatchPlan plan = plan_batches(a, b, "matmul");
    Shape out_shape = plan.out_batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out = op_result(std::move(out_shape), {a, b});
    const Scalar* pa = a.data().data();
    const Scalar* pb = b.data().data();
    Scalar* po = out.data_mut().data();
    const long a_mat = m * ka, b_mat = ka * n, o_mat = m * n;
    parallel_for(plan.batch, 1, [&](long lo, long hi) {
        for (long bi = lo; bi < hi; ++bi) {
            long ao, bo;
            batch_offsets(plan, bi, &ao, &bo);
            gemm(false, false, m, n, ka, pa + ao * a_mat, pb + bo * b_mat, po + bi * o_mat, false);
        }
    });
    if (out.requires_grad()) {
        out.impl().backprop = [plan, m, n, ka, a_mat, b_mat, o_mat](TensorImpl& self) {
            TensorImpl& a = *self.parents[0].ptr();
            TensorImpl& b = *self.parents[1].ptr();
            const Scalar* pg = self.grad.data();
            if (a.requires_grad) {
                a.ensure_grad();
                for (long bi = 0; bi < plan.batch; ++bi) {
                    long ao, bo;
                    batch_offsets(plan, bi, &ao, &bo);
                    // dA = G * B^T
                    gemm(false, true, m, ka, n, pg + bi * o_mat, b.value.data() + bo * b_mat,
                         a.grad.data() + ao * a_mat, true);
                }
            }
            if (b.requires_grad) {
                b.ensure_grad();
                for (long bi = 0; bi < plan.batch; ++bi) {
                    long ao, bo;
                    batch_offsets(plan, bi, &ao, &bo);
                    // dB = A^T * G
                    gemm(true, false, ka, n, m, a.value.data() + ao * a_mat, pg + bi * o_mat,
                         b.grad.data() + bo * b_mat, true);
                }
            }
        };
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2) {
        throw DimensionError("linear: weight must be rank 2, got " + shape_str(weight.shape()));
    }
    const long c_in = weight.dim(0), c_out = weight.dim(1);
    if (x.dim(x.rank() - 1) != c_in) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    }
    const bool has_bias = bias.defined();
    if (has_bias && bias.shape() != Shape{c_out}) {
        throw DimensionError("linear: bias must be [" + std::to_string(c_out) + "], got " +
                             shape_str(bias.shape()));
    }
    const long rows = x.size() / c_in;
    Shape out_shape = x.shape();
    out_shape.back() = c_out;
    std::vector<Tensor> parents = {x, weight};
    if (has_bias) parents.push_back(bias);
    Tensor out = op_result(std::move(out_shape), std::move(parents));
    gemm(false, false, rows, c_out, c_in, x.data().data(), weight.data().data(),
         out.data_mut().data(), false);
    if (has_bias) {
        Scalar* po = out.data_mut().data();
        const Scalar* pbias = bias.data().data();
        parallel_for(rows, 64, [&](long lo, long hi) {
            for (long r = lo; r < hi; ++r) {
                Scalar* row = po + r * c_out;
                for (long j = 0; j < c_out; ++j) row[j] += pbias[j];
            }
        });
    }
    if (out.requires_grad()) {
        out.impl().backprop = [rows, c_in, c_out, has_bias](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            TensorImpl& w = *self.parents[1].ptr();
            const Scalar* pg = self.grad.data();
            if (x.requires_grad) {
                x.ensure_grad();
                gemm(false, true, rows, c_in, c_out, pg, w.value.data(), x.grad.data(), true);
            }
            if (w.requires_grad) {
                w.ensure_grad();
                gemm(true, false, c_in, c_out, rows, x.value.data(), pg, w.grad.data(), true);
            }
            if (has_bias) {
                TensorImpl& b = *self.parents[2].ptr();
                if (b.requires_grad) {
                    b.ensure_grad();
                    for (long r = 0; r < rows; ++r) {
                        const Scalar* row = pg + r * c_out;
                        for (long j = 0; j < c_out; ++j) b.grad[j] += row[j];
                    }
                }
            }
        };
    }
    return out;
}

// ------------------------------------------------------------------ spatial

Tensor avg_pool2d(const Tensor& x, long kernel) {
    if (x.rank() != 3) {
        throw DimensionError("avg_pool2d: expected [H,W,C], got " + shape_str(x.shape()));
    }
    if (kernel <= 0) throw DimensionError("avg_pool2d: kernel must be positive");
    const long h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const long oh = (h + kernel - 1) / kernel, ow = (w + kernel - 1) / kernel;
    Tensor out = op_result({oh, ow, c}, {x});
    const Scalar* px = x.data().data();
    Scalar* po = out.data_mut().data();
    for (long i = 0; i < oh; ++i) {
        const long y0 = i * kernel, y1 = std::min(h, y0 + kernel);
        for (long j = 0; j < ow; ++j) {
            const long x0 = j * kernel, x1 = std::min(w, x0 + kernel);
            const Scalar inv = Scalar(1) / static_cast<Scalar>((y1 - y0) * (x1 - x0));
            Scalar* orow = po + (i * ow + j) * c;
            for (long ch = 0; ch < c; ++ch) orow[ch] = 0;
            for (long y = y0; y < y1; ++y) {
                for (long xx = x0; xx < x1; ++xx) {
                    const Scalar* row = px + (y * w + xx) * c;
                    for (long ch = 0; ch < c; ++ch) orow[ch] += row[ch];
                }
            }
            for (long ch = 0; ch < c; ++ch) orow[ch] *= inv;
        }
    }
    if (out.requires_grad()) {
        out.impl().backprop = [h, w, c, kernel, oh, ow](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            x.ensure_grad();
            const Scalar* pg = self.grad.data();
            Scalar* pd = x.grad.data();
            for (long i = 0; i < oh; ++i) {
                const long y0 = i * kernel, y1 = std::min(h, y0 + kernel);
                for (long j = 0; j < ow; ++j) {
                    const long x0 = j * kernel, x1 = std::min(w, x0 + kernel);
                    const Scalar inv = Scalar(1) / static_cast<Scalar>((y1 - y0) * (x1 - x0));
                    const Scalar* grow = pg + (i * ow + j) * c;
                    for (long y = y0; y < y1; ++y) {
                        for (long xx = x0; xx < x1; ++xx) {
                            Scalar* drow = pd + (y * w + xx) * c;
                            for (long ch = 0; ch < c; ++ch) drow[ch] += grow[ch] * inv;
                        }
                    }
                }
            }
        };
    }
    return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel) {
    if (x.rank() != 3 || kernel.rank() != 3) {
        throw DimensionError("depthwise_conv2d: expected x [H,W,C] and kernel [k,k,C], got " +
                             shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
    }
    const long h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const long k = kernel.dim(0);
    if (kernel.dim(1) != k || kernel.dim(2) != c) {
        throw DimensionError("depthwise_conv2d: kernel " + shape_str(kernel.shape()) +
                             " does not match input channels " + std::to_string(c));
    }
    if (k % 2 == 0) {
        throw ConfigError("depthwise_conv2d: kernel size must be odd, got " + std::to_string(k));
    }
    const long r = (k - 1) / 2;
    Tensor out = op_result({h, w, c}, {x, kernel});
    const Scalar* px = x.data().data();
    const Scalar* pk = kernel.data().data();
    Scalar* po = out.data_mut().data();
    parallel_for(h, 4, [&](long lo, long hi) {
        for (long y = lo; y < hi; ++y) {
            for (long xx = 0; xx < w; ++xx) {
                Scalar* orow = po + (y * w + xx) * c;
                for (long ch = 0; ch < c; ++ch) orow[ch] = 0;
                for (long u = 0; u < k; ++u) {
                    const long sy = y + u - r;
                    if (sy < 0 || sy >= h) continue;
                    for (long v = 0; v < k; ++v) {
                        const long sx = xx + v - r;
                        if (sx < 0 || sx >= w) continue;
                        const Scalar* row = px + (sy * w + sx) * c;
                        const Scalar* krow = pk + (u * k + v) * c;
                        for (long ch = 0; ch < c; ++ch) orow[ch] += row[ch] * krow[ch];
                    }
                }
            }
        }
    });
    if (out.requires_grad()) {
        out.impl().backprop = [h, w, c, k, r](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            TensorImpl& kern = *self.parents[1].ptr();
            const Scalar* pg = self.grad.data();
            if (x.requires_grad) {
                x.ensure_grad();
                const Scalar* pk = kern.value.data();
                Scalar* pd = x.grad.data();
                parallel_for(h, 4, [&](long lo, long hi) {
                    for (long y = lo; y < hi; ++y) {
                        for (long xx = 0; xx < w; ++xx) {
                            Scalar* drow = pd + (y * w + xx) * c;
                            for (long u = 0; u < k; ++u) {
                                const long gy = y - (u - r);
                                if (gy < 0 || gy >= h) continue;
                                for (long v = 0; v < k; ++v) {
                                    const long gx = xx - (v - r);
                                    if (gx < 0 || gx >= w) continue;
                                    const Scalar* grow = pg + (gy * w + gx) * c;
                                    const Scalar* krow = pk + (u * k + v) * c;
                                    for (long ch = 0; ch < c; ++ch) {
                                        drow[ch] += grow[ch] * krow[ch];
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if (kern.requires_grad) {
                kern.ensure_grad();
                const Scalar* px = x.value.data();
                Scalar* pdk = kern.grad.data();
                parallel_for(c, 8, [&](long clo, long chi) {
                    for (long y = 0; y < h; ++y) {
                        for (long xx = 0; xx < w; ++xx) {
                            const Scalar* grow = pg + (y * w + xx) * c;
                            for (long u = 0; u < k; ++u) {
                                const long sy = y + u - r;
                                if (sy < 0 || sy >= h) continue;
                                for (long v = 0; v < k; ++v) {
                                    const long sx = xx + v - r;
                                    if (sx < 0 || sx >= w) continue;
                                    const Scalar* row = px + (sy * w + sx) * c;
                                    Scalar* krow = pdk + (u * k + v) * c;
                                    for (long ch = clo; ch < chi; ++ch) {
                                        krow[ch] += grow[ch] * row[ch];
                                    }
                                }
                            }
                        }
                    }
                });
            }
        };
    }
    return out;
}

Tensor grid_sample_bilinear(const Tensor& src, const Tensor& coords, bool coord_grad) {
    if (src.rank() != 3) {
        throw DimensionError("grid_sample: src must be [H,W,C], got " + shape_str(src.shape()));
    }
    if (coords.rank() != 2 || coords.dim(1) != 2) {
        throw DimensionError("grid_sample: coords must be [P,2], got " + shape_str(coords.shape()));
    }
    const long h = src.dim(0), w = src.dim(1), c = src.dim(2);
    const long p = coords.dim(0);
    for (Scalar v : coords.data()) {
        if (!std::isfinite(v)) throw NumericError("grid_sample: non-finite coordinate");
    }
    Tensor out = op_result({p, c}, {src, coords});
    const Scalar* ps = src.data().data();
    const Scalar* pc = coords.data().data();
    Scalar* po = out.data_mut().data();
    auto tap = [&](long y, long x) -> const Scalar* {
        if (y < 0 || y >= h || x < 0 || x >= w) return nullptr;
        return ps + (y * w + x) * c;
    };
    parallel_for(p, 64, [&](long lo, long hi) {
        for (long i = lo; i < hi; ++i) {
            const Scalar cx = pc[2 * i], cy = pc[2 * i + 1];
            const long x0 = static_cast<long>(std::floor(cx));
            const long y0 = static_cast<long>(std::floor(cy));
            const Scalar tx = cx - static_cast<Scalar>(x0);
            const Scalar ty = cy - static_cast<Scalar>(y0);
            const Scalar* v00 = tap(y0, x0);
            const Scalar* v01 = tap(y0, x0 + 1);
            const Scalar* v10 = tap(y0 + 1, x0);
            const Scalar* v11 = tap(y0 + 1, x0 + 1);
            const Scalar w00 = (1 - tx) * (1 - ty), w01 = tx * (1 - ty);
            const Scalar w10 = (1 - tx) * ty, w11 = tx * ty;
            Scalar* orow = po + i * c;
            for (long ch = 0; ch < c; ++ch) {
                Scalar acc = 0;
                if (v00) acc += w00 * v00[ch];
                if (v01) acc += w01 * v01[ch];
                if (v10) acc += w10 * v10[ch];
                if (v11) acc += w11 * v11[ch];
                orow[ch] = acc;
            }
        }
    });
    if (out.requires_grad()) {
        out.impl().backprop = [h, w, c, p, coord_grad](TensorImpl& self) {
            TensorImpl& src = *self.parents[0].ptr();
            TensorImpl& coords = *self.parents[1].ptr();
            const Scalar* ps = src.value.data();
            const Scalar* pc = coords.value.data();
            const Scalar* pg = self.grad.data();
            const bool want_src = src.requires_grad;
            const bool want_coords = coords.requires_grad && coord_grad;
            if (want_src) src.ensure_grad();
            if (want_coords) coords.ensure_grad();
            if (!want_src && !want_coords) return;
            auto in = [&](long y, long x) { return y >= 0 && y < h && x >= 0 && x < w; };
            for (long i = 0; i < p; ++i) {
                const Scalar cx = pc[2 * i], cy = pc[2 * i + 1];
                const long x0 = static_cast<long>(std::floor(cx));
                const long y0 = static_cast<long>(std::floor(cy));
                const Scalar tx = cx - static_cast<Scalar>(x0);
                const Scalar ty = cy - static_cast<Scalar>(y0);
                const bool i00 = in(y0, x0), i01 = in(y0, x0 + 1);
                const bool i10 = in(y0 + 1, x0), i11 = in(y0 + 1, x0 + 1);
                const Scalar* grow = pg + i * c;
                Scalar dx = 0, dy = 0;
                for (long ch = 0; ch < c; ++ch) {
                    const Scalar g = grow[ch];
                    const Scalar s00 = i00 ? ps[(y0 * w + x0) * c + ch] : 0;
                    const Scalar s01 = i01 ? ps[(y0 * w + x0 + 1) * c + ch] : 0;
                    const Scalar s10 = i10 ? ps[((y0 + 1) * w + x0) * c + ch] : 0;
                    const Scalar s11 = i11 ? ps[((y0 + 1) * w + x0 + 1) * c + ch] : 0;
                    if (want_src) {
                        if (i00) src.grad[(y0 * w + x0) * c + ch] += g * (1 - tx) * (1 - ty);
                        if (i01) src.grad[(y0 * w + x0 + 1) * c + ch] += g * tx * (1 - ty);
                        if (i10) src.grad[((y0 + 1) * w + x0) * c + ch] += g * (1 - tx) * ty;
                        if (i11) src.grad[((y0 + 1) * w + x0 + 1) * c + ch] += g * tx * ty;
                    }
                    if (want_coords) {
                        dx += g * ((1 - ty) * (s01 - s00) + ty * (s11 - s10));
                        dy += g * ((1 - tx) * (s10 - s00) + tx * (s11 - s01));
                    }
                }
                if (want_coords) {
                    coords.grad[2 * i] += dx;
                    coords.grad[2 * i + 1] += dy;
                }
            }
        };
    }
    return out;
}

Tensor pad2d(const Tensor& x, long new_h, long new_w) {
    if (x.rank() != 3) {
        throw DimensionError("pad2d: expected [H,W,C], got " + shape_str(x.shape()));
    }
    const long h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (new_h < h || new_w < w) {
        throw DimensionError("pad2d: target extents smaller than input");
    }
    Tensor out = op_result({new_h, new_w, c}, {x});
    const Scalar* px = x.data().data();
    Scalar* po = out.data_mut().data();
    for (long y = 0; y < h; ++y) {
        std::memcpy(po + y * new_w * c, px + y * w * c, sizeof(Scalar) * static_cast<size_t>(w * c));
    }
    if (out.requires_grad()) {
        out.impl().backprop = [h, w, c, new_w](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            x.ensure_grad();
            const Scalar* pg = self.grad.data();
            Scalar* pd = x.grad.data();
            for (long y = 0; y < h; ++y) {
                for (long i = 0; i < w * c; ++i) pd[y * w * c + i] += pg[y * new_w * c + i];
            }
        };
    }
    return out;
}

Tensor space_to_depth(const Tensor& x, long block) {
    if (x.rank() != 3) {
        throw DimensionError("space_to_depth: expected [H,W,C], got " + shape_str(x.shape()));
    }
    const long h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (h % block != 0 || w % block != 0) {
        throw DimensionError("space_to_depth: extents " + shape_str(x.shape()) +
                             " not divisible by block " + std::to_string(block));
    }
    const long oh = h / block, ow = w / block, oc = block * block * c;
    Tensor out = op_result({oh, ow, oc}, {x});
    const Scalar* px = x.data().data();
    Scalar* po = out.data_mut().data();
    for (long i = 0; i < oh; ++i) {
        for (long j = 0; j < ow; ++j) {
            Scalar* orow = po + (i * ow + j) * oc;
            for (long dy = 0; dy < block; ++dy) {
                for (long dx = 0; dx < block; ++dx) {
                    const Scalar* row = px + ((i * block + dy) * w + (j * block + dx)) * c;
                    std::memcpy(orow + (dy * block + dx) * c, row,
                                sizeof(Scalar) * static_cast<size_t>(c));
                }
            }
        }
    }
    if (out.requires_grad()) {
        out.impl().backprop = [h, w, c, block, oh, ow, oc](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            x.ensure_grad();
            const Scalar* pg = self.grad.data();
            Scalar* pd = x.grad.data();
            for (long i = 0; i < oh; ++i) {
                for (long j = 0; j < ow; ++j) {
                    const Scalar* grow = pg + (i * ow + j) * oc;
                    for (long dy = 0; dy < block; ++dy) {
                        for (long dx = 0; dx < block; ++dx) {
                            Scalar* drow = pd + ((i * block + dy) * w + (j * block + dx)) * c;
                            const Scalar* gsub = grow + (dy * block + dx) * c;
                            for (long ch = 0; ch < c; ++ch) drow[ch] += gsub[ch];
                        }
                    }
                }
            }
        };
    }
    return out;
}

// ------------------------------------------------------------------- layout

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    Tensor out = op_result(std::move(shape), {x});
    std::copy(x.data().begin(), x.data().end(), out.impl().value.begin());
    if (out.requires_grad()) {
        out.impl().backprop = [](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            x.ensure_grad();
            for (long i = 0; i < self.size(); ++i) x.grad[i] += self.grad[i];
        };
    }
    return out;
}

Tensor transpose(const Tensor& x, const std::vector<long>& perm) {
    const long r = x.rank();
    if (static_cast<long>(perm.size()) != r) {
        throw DimensionError("transpose: permutation rank mismatch for " + shape_str(x.shape()));
    }
    Shape out_shape(r);
    for (long i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);
    Tensor out = op_result(out_shape, {x});
    const auto in_strides = contiguous_strides(x.shape());
    const auto out_strides = contiguous_strides(out_shape);
    // stride of output axis i in the input buffer
    std::vector<long> gather(r);
    for (long i = 0; i < r; ++i) gather[i] = in_strides[perm[i]];
    const Scalar* px = x.data().data();
    Scalar* po = out.data_mut().data();
    const long n = x.size();
    parallel_for(n, kElemGrain, [&](long lo, long hi) {
        for (long o = lo; o < hi; ++o) {
            long rem = o, src = 0;
            for (long i = 0; i < r; ++i) {
                src += (rem / out_strides[i]) * gather[i];
                rem %= out_strides[i];
            }
            po[o] = px[src];
        }
    });
    if (out.requires_grad()) {
        out.impl().backprop = [out_strides, gather, r](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            x.ensure_grad();
            const Scalar* pg = self.grad.data();
            Scalar* pd = x.grad.data();
            for (long o = 0; o < self.size(); ++o) {
                long rem = o, src = 0;
                for (long i = 0; i < r; ++i) {
                    src += (rem / out_strides[i]) * gather[i];
                    rem %= out_strides[i];
                }
                pd[src] += pg[o];
            }
        };
    }
    return out;
}

Tensor slice(const Tensor& x, long axis, long start, long len) {
    check_axis(x, axis, "slice");
    if (start < 0 || len <= 0 || start + len > x.dim(axis)) {
        throw DimensionError("slice: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") invalid for axis " +
                             std::to_string(axis) + " of " + shape_str(x.shape()));
    }
    const AxisSplit sp = split_at(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    Tensor out = op_result(std::move(out_shape), {x});
    const Scalar* px = x.data().data();
    Scalar* po = out.data_mut().data();
    for (long o = 0; o < sp.outer; ++o) {
        const Scalar* src = px + (o * sp.n + start) * sp.inner;
        Scalar* dst = po + o * len * sp.inner;
        std::memcpy(dst, src, sizeof(Scalar) * static_cast<size_t>(len * sp.inner));
    }
    if (out.requires_grad()) {
        out.impl().backprop = [sp, start, len](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            x.ensure_grad();
            const Scalar* pg = self.grad.data();
            Scalar* pd = x.grad.data();
            for (long o = 0; o < sp.outer; ++o) {
                Scalar* dst = pd + (o * sp.n + start) * sp.inner;
                const Scalar* src = pg + o * len * sp.inner;
                for (long i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
            }
        };
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, long axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    check_axis(parts[0], axis, "concat");
    Shape out_shape = parts[0].shape();
    long total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (static_cast<long>(s.size()) != parts[0].rank()) {
            throw DimensionError("concat: rank mismatch");
        }
        for (long i = 0; i < parts[0].rank(); ++i) {
            if (i != axis && s[i] != out_shape[i]) {
                throw DimensionError("concat: shape mismatch " + shape_str(s) + " vs " +
                                     shape_str(out_shape));
            }
        }
        total += s[axis];
    }
    out_shape[axis] = total;
    Tensor out = op_result(out_shape, std::vector<Tensor>(parts));
    const AxisSplit sp = split_at(out_shape, axis);
    Scalar* po = out.data_mut().data();
    long offset = 0;
    for (const auto& part : parts) {
        const long len = part.dim(axis);
        const Scalar* pp = part.data().data();
        for (long o = 0; o < sp.outer; ++o) {
            std::memcpy(po + (o * sp.n + offset) * sp.inner, pp + o * len * sp.inner,
                        sizeof(Scalar) * static_cast<size_t>(len * sp.inner));
        }
        offset += len;
    }
    if (out.requires_grad()) {
        std::vector<long> lens;
        for (const auto& p : parts) lens.push_back(p.dim(axis));
        out.impl().backprop = [sp, lens](TensorImpl& self) {
            const Scalar* pg = self.grad.data();
            long offset = 0;
            for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                TensorImpl& part = *self.parents[pi].ptr();
                const long len = lens[pi];
                if (part.requires_grad) {
                    part.ensure_grad();
                    Scalar* pd = part.grad.data();
                    for (long o = 0; o < sp.outer; ++o) {
                        const Scalar* src = pg + (o * sp.n + offset) * sp.inner;
                        Scalar* dst = pd + o * len * sp.inner;
                        for (long i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
                    }
                }
                offset += len;
            }
        };
    }
    return out;
}

Tensor repeat_leading(const Tensor& x, long times) {
    if (times <= 0) throw DimensionError("repeat_leading: times must be positive");
    Shape out_shape;
    out_shape.push_back(times);
    for (long d : x.shape()) out_shape.push_back(d);
    Tensor out = op_result(std::move(out_shape), {x});
    const long n = x.size();
    Scalar* po = out.data_mut().data();
    for (long t = 0; t < times; ++t) {
        std::memcpy(po + t * n, x.data().data(), sizeof(Scalar) * static_cast<size_t>(n));
    }
    if (out.requires_grad()) {
        out.impl().backprop = [times, n](TensorImpl& self) {
            TensorImpl& x = *self.parents[0].ptr();
            x.ensure_grad();
            const Scalar* pg = self.grad.data();
            for (long t = 0; t < times; ++t) {
                for (long i = 0; i < n; ++i) x.grad[i] += pg[t * n + i];
            }
        };
    }
    return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<long>& indices) {
    if (table.rank() != 2) {
        throw DimensionError("gather_rows: table must be rank 2, got " + shape_str(table.shape()));
    }
    const long rows = table.dim(0), c = table.dim(1);
    for (long idx : indices) {
        if (idx < 0 || idx >= rows) {
            throw DimensionError("gather_rows: index " + std::to_string(idx) + " out of [0," +
                                 std::to_string(rows) + ")");
        }
    }
    const long p = static_cast<long>(indices.size());
    Tensor out = op_result({p, c}, {table});
    const Scalar* pt = table.data().data();
    Scalar* po = out.data_mut().data();
    for (long i = 0; i < p; ++i) {
        std::memcpy(po + i * c, pt + indices[i] * c, sizeof(Scalar) * static_cast<size_t>(c));
    }
    if (out.requires_grad()) {
        out.impl().backprop = [indices, c](TensorImpl& self) {
            TensorImpl& table = *self.parents[0].ptr();
            table.ensure_grad();
            const Scalar* pg = self.grad.data();
            for (size_t i = 0; i < indices.size(); ++i) {
                Scalar* dst = table.grad.data() + indices[i] * c;
                const Scalar* src = pg + static_cast<long>(i) * c;
                for (long j = 0; j < c; ++j) dst[j] += src[j];
            }
        };
    }
    return out;
}

}  // namespace vsa
