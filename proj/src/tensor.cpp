#include "snpforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace snpforge {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (const auto d : s) n *= d;
    return n;
}

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                                " and " + shape_str(b));
}

std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[static_cast<size_t>(i)] = acc;
        acc *= s[static_cast<size_t>(i)];
    }
    return st;
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    const size_t nd = std::max(a.size(), b.size());
    Shape out(nd);
    for (size_t i = 0; i < nd; ++i) {
        const int64_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
        const int64_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
        if (da == db || db == 1)
            out[i] = da;
        else if (da == 1)
            out[i] = db;
        else
            shape_error(op, a, b);
    }
    return out;
}

// Strides of `in` viewed inside the broadcast output (0 where broadcast).
std::vector<int64_t> broadcast_strides(const Shape& out, const Shape& in) {
    const auto in_st = row_major_strides(in);
    std::vector<int64_t> st(out.size(), 0);
    const size_t off = out.size() - in.size();
    for (size_t i = 0; i < in.size(); ++i)
        st[off + i] = in[i] == 1 && out[off + i] != 1 ? 0 : in_st[i];
    return st;
}

// Calls visit(out_linear, a_offset, b_offset) over every output position.
template <typename F>
void walk_broadcast(const Shape& out_shape, const std::vector<int64_t>& a_st,
                    const std::vector<int64_t>& b_st, F&& visit) {
    const int nd = static_cast<int>(out_shape.size());
    const int64_t total = shape_numel(out_shape);
    if (nd == 0) {
        if (total > 0) visit(int64_t{0}, int64_t{0}, int64_t{0});
        return;
    }
    std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
    int64_t ao = 0, bo = 0;
    for (int64_t o = 0; o < total; ++o) {
        visit(o, ao, bo);
        for (int d = nd - 1; d >= 0; --d) {
            const auto du = static_cast<size_t>(d);
            ++idx[du];
            ao += a_st[du];
            bo += b_st[du];
            if (idx[du] < out_shape[du]) break;
            idx[du] = 0;
            ao -= a_st[du] * out_shape[du];
            bo -= b_st[du] * out_shape[du];
        }
    }
}

template <typename T>
void check_defined(const char* op, const Tensor<T>& t) {
    if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

} // namespace

// ---- Tensor ---------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
    auto impl = std::make_shared<TensorImpl<T>>();
    const auto n = static_cast<size_t>(shape_numel(shape));
    impl->shape = std::move(shape);
    impl->data.assign(n, T(0));
    return wrap(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
    auto t = zeros(std::move(shape));
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::from_vector(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw std::invalid_argument("Tensor::from_vector: " + shape_str(shape) + " does not hold " +
                                    std::to_string(values.size()) + " values");
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    return wrap(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, Rng& rng, T stdev) {
    auto t = zeros(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.normal()) * stdev;
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, Rng& rng, T lo, T hi) {
    auto t = zeros(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
int64_t Tensor<T>::dim(int i) const {
    const int nd = ndim();
    if (i < 0) i += nd;
    if (i < 0 || i >= nd)
        throw std::invalid_argument("Tensor::dim: axis " + std::to_string(i) + " out of range for " +
                                    shape_str(shape()));
    return impl_->shape[static_cast<size_t>(i)];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1)
        throw std::invalid_argument("Tensor::item: tensor " + shape_str(shape()) + " is not scalar");
    return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<int64_t> idx) const {
    if (static_cast<int>(idx.size()) != ndim())
        throw std::invalid_argument("Tensor::at: rank mismatch");
    const auto st = row_major_strides(impl_->shape);
    int64_t off = 0;
    size_t d = 0;
    for (const auto i : idx) off += i * st[d++];
    return impl_->data[static_cast<size_t>(off)];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return wrap(std::move(impl));
}

// ---- Tape ------------------------------------------------------------------

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a defined scalar tensor");
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

namespace {

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
    if (Tape<T>::current() == nullptr) return false;
    for (const auto* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

template <typename T>
void record(const char* op, std::initializer_list<const Tensor<T>*> inputs, Tensor<T>& out,
            std::function<void()> bwd) {
    if (!should_record<T>(inputs)) return;
    out.set_requires_grad(true);
    auto* tape = Tape<T>::current();
    for (const auto* t : inputs)
        if (t->defined()) tape->track(t->impl());
    tape->track(out.impl());
    tape->record(op, std::move(bwd));
}

} // namespace

// ---- binary broadcast ops ---------------------------------------------------

namespace {

enum class BinKind { Add, Sub, Mul };

template <typename T, BinKind kind>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b) {
    check_defined(name, a);
    check_defined(name, b);
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    Tensor<T> out;
    const bool same = sa == sb;
    if (same) {
        out = Tensor<T>::zeros(sa);
        const auto* pa = a.data().data();
        const auto* pb = b.data().data();
        auto* po = out.data().data();
        const int64_t n = out.numel();
        for (int64_t i = 0; i < n; ++i) {
            if constexpr (kind == BinKind::Add) po[i] = pa[i] + pb[i];
            if constexpr (kind == BinKind::Sub) po[i] = pa[i] - pb[i];
            if constexpr (kind == BinKind::Mul) po[i] = pa[i] * pb[i];
        }
    } else {
        const Shape os = broadcast_shape(name, sa, sb);
        out = Tensor<T>::zeros(os);
        const auto ast = broadcast_strides(os, sa);
        const auto bst = broadcast_strides(os, sb);
        const auto* pa = a.data().data();
        const auto* pb = b.data().data();
        auto* po = out.data().data();
        walk_broadcast(os, ast, bst, [&](int64_t o, int64_t ao, int64_t bo) {
            if constexpr (kind == BinKind::Add) po[o] = pa[ao] + pb[bo];
            if constexpr (kind == BinKind::Sub) po[o] = pa[ao] - pb[bo];
            if constexpr (kind == BinKind::Mul) po[o] = pa[ao] * pb[bo];
        });
    }
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    record(name, {&a, &b}, out, [ai, bi, oi, same]() {
        oi->ensure_grad();
        const auto* g = oi->grad.data();
        const bool ga = ai->requires_grad;
        const bool gb = bi->requires_grad;
        if (ga) ai->ensure_grad();
        if (gb) bi->ensure_grad();
        auto apply = [&](int64_t o, int64_t ao, int64_t bo) {
            if constexpr (kind == BinKind::Add) {
                if (ga) ai->grad[static_cast<size_t>(ao)] += g[o];
                if (gb) bi->grad[static_cast<size_t>(bo)] += g[o];
            }
            if constexpr (kind == BinKind::Sub) {
                if (ga) ai->grad[static_cast<size_t>(ao)] += g[o];
                if (gb) bi->grad[static_cast<size_t>(bo)] -= g[o];
            }
            if constexpr (kind == BinKind::Mul) {
                if (ga) ai->grad[static_cast<size_t>(ao)] += g[o] * bi->data[static_cast<size_t>(bo)];
                if (gb) bi->grad[static_cast<size_t>(bo)] += g[o] * ai->data[static_cast<size_t>(ao)];
            }
        };
        if (same) {
            const int64_t n = static_cast<int64_t>(oi->data.size());
            for (int64_t i = 0; i < n; ++i) apply(i, i, i);
        } else {
            const auto ast = broadcast_strides(oi->shape, ai->shape);
            const auto bst = broadcast_strides(oi->shape, bi->shape);
            walk_broadcast(oi->shape, ast, bst, apply);
        }
    });
    return out;
}

} // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T, BinKind::Add>("add", a, b);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T, BinKind::Sub>("sub", a, b);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T, BinKind::Mul>("mul", a, b);
}

// ---- unary elementwise ops ---------------------------------------------------

namespace {

// fwd(x) -> y; dfn(x, y) -> dy/dx evaluated pointwise in the closure.
template <typename T, typename FwdF, typename DerivF>
Tensor<T> unary_op(const char* name, const Tensor<T>& a, FwdF fwd, DerivF deriv) {
    check_defined(name, a);
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const auto* pa = a.data().data();
    auto* po = out.data().data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
    auto ai = a.impl();
    auto oi = out.impl();
    record(name, {&a}, out, [ai, oi, deriv]() {
        if (!ai->requires_grad) return;
        oi->ensure_grad();
        ai->ensure_grad();
        const int64_t n = static_cast<int64_t>(ai->data.size());
        for (int64_t i = 0; i < n; ++i) {
            const auto u = static_cast<size_t>(i);
            ai->grad[u] += oi->grad[u] * deriv(ai->data[u], oi->data[u]);
        }
    });
    return out;
}

} // namespace

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    return unary_op<T>(
        "scale", a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    return unary_op<T>(
        "add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return unary_op<T>(
        "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    return unary_op<T>(
        "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> pow(const Tensor<T>& a, T e) {
    return unary_op<T>(
        "pow", a, [e](T x) { return std::pow(x, e); },
        [e](T x, T) { return e * std::pow(x, e - T(1)); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return unary_op<T>(
        "sigmoid", a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
    return unary_op<T>(
        "silu", a,
        [](T x) {
            const T s = T(1) / (T(1) + std::exp(-x));
            return x * s;
        },
        [](T x, T) {
            const T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) + x * (T(1) - s));
        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return unary_op<T>(
        "relu", a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
    return unary_op<T>(
        "leaky_relu", a, [slope](T x) { return x > T(0) ? x : slope * x; },
        [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    return unary_op<T>(
        "clamp", a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
        [lo, hi](T x, T) { return x >= lo && x <= hi ? T(1) : T(0); });
}

// ---- shape ops ----------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    check_defined("reshape", a);
    if (shape_numel(shape) != a.numel())
        shape_error("reshape", a.shape(), shape);
    Tensor<T> out = Tensor<T>::from_vector(std::move(shape), a.data());
    auto ai = a.impl();
    auto oi = out.impl();
    record("reshape", {&a}, out, [ai, oi]() {
        if (!ai->requires_grad) return;
        oi->ensure_grad();
        ai->ensure_grad();
        for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += oi->grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm) {
    check_defined("permute", a);
    const int nd = a.ndim();
    if (static_cast<int>(perm.size()) != nd)
        throw std::invalid_argument("permute: perm rank " + std::to_string(perm.size()) +
                                    " vs tensor " + shape_str(a.shape()));
    Shape os(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) os[static_cast<size_t>(i)] = a.dim(perm[static_cast<size_t>(i)]);
    const auto in_st = row_major_strides(a.shape());
    // Stride of the source tensor along each output axis.
    std::vector<int64_t> src_st(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) src_st[static_cast<size_t>(i)] = in_st[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    Tensor<T> out = Tensor<T>::zeros(os);
    const auto* pa = a.data().data();
    auto* po = out.data().data();
    const std::vector<int64_t> zero_st(static_cast<size_t>(nd), 0);
    walk_broadcast(os, src_st, zero_st, [&](int64_t o, int64_t src, int64_t) { po[o] = pa[src]; });
    auto ai = a.impl();
    auto oi = out.impl();
    record("permute", {&a}, out, [ai, oi, src_st, zero_st]() {
        if (!ai->requires_grad) return;
        oi->ensure_grad();
        ai->ensure_grad();
        walk_broadcast(oi->shape, src_st, zero_st, [&](int64_t o, int64_t src, int64_t) {
            ai->grad[static_cast<size_t>(src)] += oi->grad[static_cast<size_t>(o)];
        });
    });
    return out;
}

namespace {

// Decompose a tensor around `axis` into outer x axis x inner blocks.
struct AxisBlocks {
    int64_t outer = 1, axis = 1, inner = 1;
};

AxisBlocks axis_blocks(const Shape& s, int axis) {
    AxisBlocks b;
    for (int i = 0; i < static_cast<int>(s.size()); ++i) {
        const auto d = s[static_cast<size_t>(i)];
        if (i < axis)
            b.outer *= d;
        else if (i == axis)
            b.axis = d;
        else
            b.inner *= d;
    }
    return b;
}

int normalize_axis(const char* op, int axis, int nd) {
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd)
        throw std::invalid_argument(std::string(op) + ": axis out of range");
    return axis;
}

} // namespace

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, int64_t start, int64_t len) {
    check_defined("slice", a);
    axis = normalize_axis("slice", axis, a.ndim());
    const int64_t d = a.dim(axis);
    if (start < 0 || len < 0 || start + len > d)
        throw std::invalid_argument("slice: window [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") out of range for " +
                                    shape_str(a.shape()));
    Shape os = a.shape();
    os[static_cast<size_t>(axis)] = len;
    Tensor<T> out = Tensor<T>::zeros(os);
    const auto bl = axis_blocks(a.shape(), axis);
    const auto* pa = a.data().data();
    auto* po = out.data().data();
    for (int64_t o = 0; o < bl.outer; ++o)
        std::memcpy(po + o * len * bl.inner, pa + (o * bl.axis + start) * bl.inner,
                    static_cast<size_t>(len * bl.inner) * sizeof(T));
    auto ai = a.impl();
    auto oi = out.impl();
    record("slice", {&a}, out, [ai, oi, bl, start, len]() {
        if (!ai->requires_grad) return;
        oi->ensure_grad();
        ai->ensure_grad();
        for (int64_t o = 0; o < bl.outer; ++o) {
            auto* ga = ai->grad.data() + (o * bl.axis + start) * bl.inner;
            const auto* go = oi->grad.data() + o * len * bl.inner;
            for (int64_t i = 0; i < len * bl.inner; ++i) ga[i] += go[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    for (const auto& p : parts) check_defined("concat", p);
    axis = normalize_axis("concat", axis, parts[0].ndim());
    Shape os = parts[0].shape();
    int64_t total_axis = 0;
    for (const auto& p : parts) {
        Shape ps = p.shape();
        ps[static_cast<size_t>(axis)] = os[static_cast<size_t>(axis)];
        if (ps != os) shape_error("concat", parts[0].shape(), p.shape());
        total_axis += p.dim(axis);
    }
    os[static_cast<size_t>(axis)] = total_axis;
    Tensor<T> out = Tensor<T>::zeros(os);
    const auto bl = axis_blocks(os, axis);
    auto* po = out.data().data();
    int64_t axis_off = 0;
    for (const auto& p : parts) {
        const int64_t pa = p.dim(axis);
        const auto* pp = p.data().data();
        for (int64_t o = 0; o < bl.outer; ++o)
            std::memcpy(po + (o * total_axis + axis_off) * bl.inner, pp + o * pa * bl.inner,
                        static_cast<size_t>(pa * bl.inner) * sizeof(T));
        axis_off += pa;
    }
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (Tape<T>::current() != nullptr && any) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImpl<T>>> impls;
        impls.reserve(parts.size());
        for (const auto& p : parts) impls.push_back(p.impl());
        auto oi = out.impl();
        for (const auto& pi : impls) Tape<T>::current()->track(pi);
        Tape<T>::current()->track(oi);
        const int64_t ta = total_axis;
        Tape<T>::current()->record("concat", [impls, oi, bl, ta]() {
            oi->ensure_grad();
            int64_t axis_off = 0;
            for (const auto& pi : impls) {
                const int64_t pa = pi->data.empty() ? 0 : static_cast<int64_t>(pi->data.size()) / (bl.outer * bl.inner);
                if (pi->requires_grad) {
                    pi->ensure_grad();
                    for (int64_t o = 0; o < bl.outer; ++o) {
                        auto* gp = pi->grad.data() + o * pa * bl.inner;
                        const auto* go = oi->grad.data() + (o * ta + axis_off) * bl.inner;
                        for (int64_t i = 0; i < pa * bl.inner; ++i) gp[i] += go[i];
                    }
                }
                axis_off += pa;
            }
        });
    }
    return out;
}

// ---- reductions -----------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    check_defined("sum", a);
    T acc = T(0);
    for (const auto v : a.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    auto ai = a.impl();
    auto oi = out.impl();
    record("sum", {&a}, out, [ai, oi]() {
        if (!ai->requires_grad) return;
        oi->ensure_grad();
        ai->ensure_grad();
        const T g = oi->grad[0];
        for (auto& v : ai->grad) v += g;
    });
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    check_defined("mean", a);
    if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    T acc = T(0);
    for (const auto v : a.data()) acc += v;
    const T n = static_cast<T>(a.numel());
    Tensor<T> out = Tensor<T>::scalar(acc / n);
    auto ai = a.impl();
    auto oi = out.impl();
    record("mean", {&a}, out, [ai, oi, n]() {
        if (!ai->requires_grad) return;
        oi->ensure_grad();
        ai->ensure_grad();
        const T g = oi->grad[0] / n;
        for (auto& v : ai->grad) v += g;
    });
    return out;
}

namespace {

template <typename T, bool is_mean>
Tensor<T> reduce_axis(const char* name, const Tensor<T>& a, int axis, bool keepdim) {
    check_defined(name, a);
    axis = normalize_axis(name, axis, a.ndim());
    const auto bl = axis_blocks(a.shape(), axis);
    Shape os;
    for (int i = 0; i < a.ndim(); ++i) {
        if (i == axis) {
            if (keepdim) os.push_back(1);
        } else {
            os.push_back(a.dim(i));
        }
    }
    Tensor<T> out = Tensor<T>::zeros(os);
    const auto* pa = a.data().data();
    auto* po = out.data().data();
    const T denom = is_mean ? static_cast<T>(bl.axis) : T(1);
    for (int64_t o = 0; o < bl.outer; ++o)
        for (int64_t x = 0; x < bl.axis; ++x) {
            const auto* src = pa + (o * bl.axis + x) * bl.inner;
            auto* dst = po + o * bl.inner;
            for (int64_t i = 0; i < bl.inner; ++i) dst[i] += src[i];
        }
    if (is_mean)
        for (auto& v : out.data()) v /= denom;
    auto ai = a.impl();
    auto oi = out.impl();
    record(name, {&a}, out, [ai, oi, bl, denom]() {
        if (!ai->requires_grad) return;
        oi->ensure_grad();
        ai->ensure_grad();
        for (int64_t o = 0; o < bl.outer; ++o)
            for (int64_t x = 0; x < bl.axis; ++x) {
                auto* ga = ai->grad.data() + (o * bl.axis + x) * bl.inner;
                const auto* go = oi->grad.data() + o * bl.inner;
                for (int64_t i = 0; i < bl.inner; ++i) ga[i] += go[i] / denom;
            }
    });
    return out;
}

} // namespace

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, int axis, bool keepdim) {
    return reduce_axis<T, false>("sum_axis", a, axis, keepdim);
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, int axis, bool keepdim) {
    return reduce_axis<T, true>("mean_axis", a, axis, keepdim);
}

// ---- matmul / linear ----------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    check_defined("matmul", a);
    check_defined("matmul", b);
    if (a.ndim() < 2 || b.ndim() < 2 || a.ndim() != b.ndim())
        shape_error("matmul", a.shape(), b.shape());
    const int nd = a.ndim();
    for (int i = 0; i < nd - 2; ++i)
        if (a.dim(i) != b.dim(i)) shape_error("matmul", a.shape(), b.shape());
    const int64_t m = a.dim(nd - 2), k = a.dim(nd - 1);
    const int64_t k2 = b.dim(nd - 2), n = b.dim(nd - 1);
    if (k != k2) shape_error("matmul", a.shape(), b.shape());
    int64_t batch = 1;
    for (int i = 0; i < nd - 2; ++i) batch *= a.dim(i);
    Shape os = a.shape();
    os[static_cast<size_t>(nd - 1)] = n;
    Tensor<T> out = Tensor<T>::zeros(os);
    const auto* pa = a.data().data();
    const auto* pb = b.data().data();
    auto* po = out.data().data();
    for (int64_t bt = 0; bt < batch; ++bt) {
        const auto* A = pa + bt * m * k;
        const auto* B = pb + bt * k * n;
        auto* O = po + bt * m * n;
        for (int64_t i = 0; i < m; ++i)
            for (int64_t kk = 0; kk < k; ++kk) {
                const T av = A[i * k + kk];
                const auto* Br = B + kk * n;
                auto* Or = O + i * n;
                for (int64_t j = 0; j < n; ++j) Or[j] += av * Br[j];
            }
    }
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    record("matmul", {&a, &b}, out, [ai, bi, oi, batch, m, k, n]() {
        oi->ensure_grad();
        if (ai->requires_grad) ai->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        for (int64_t bt = 0; bt < batch; ++bt) {
            const auto* A = ai->data.data() + bt * m * k;
            const auto* B = bi->data.data() + bt * k * n;
            const auto* G = oi->grad.data() + bt * m * n;
            if (ai->requires_grad) {
                auto* dA = ai->grad.data() + bt * m * k;
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t kk = 0; kk < k; ++kk) {
                        const auto* Gr = G + i * n;
                        const auto* Br = B + kk * n;
                        T acc = T(0);
                        for (int64_t j = 0; j < n; ++j) acc += Gr[j] * Br[j];
                        dA[i * k + kk] += acc;
                    }
            }
            if (bi->requires_grad) {
                auto* dB = bi->grad.data() + bt * k * n;
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t kk = 0; kk < k; ++kk) {
                        const T av = A[i * k + kk];
                        const auto* Gr = G + i * n;
                        auto* dBr = dB + kk * n;
                        for (int64_t j = 0; j < n; ++j) dBr[j] += av * Gr[j];
                    }
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    check_defined("linear", x);
    check_defined("linear", w);
    if (w.ndim() != 2 || x.ndim() < 1 || x.dim(-1) != w.dim(1))
        shape_error("linear", x.shape(), w.shape());
    const int64_t in = w.dim(1), outf = w.dim(0);
    const int64_t rows = x.numel() / in;
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != outf)) shape_error("linear", w.shape(), b.shape());
    Shape os = x.shape();
    os.back() = outf;
    Tensor<T> out = Tensor<T>::zeros(os);
    const auto* px = x.data().data();
    const auto* pw = w.data().data();
    auto* po = out.data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const auto* xr = px + r * in;
        auto* orow = po + r * outf;
        for (int64_t o = 0; o < outf; ++o) {
            const auto* wr = pw + o * in;
            T acc = b.defined() ? b.data()[static_cast<size_t>(o)] : T(0);
            for (int64_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
            orow[o] = acc;
        }
    }
    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = b.defined() ? b.impl() : nullptr;
    auto oi = out.impl();
    record("linear", {&x, &w, &b}, out, [xi, wi, bi, oi, rows, in, outf]() {
        oi->ensure_grad();
        const auto* g = oi->grad.data();
        if (xi->requires_grad) {
            xi->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                auto* dx = xi->grad.data() + r * in;
                const auto* gr = g + r * outf;
                for (int64_t o = 0; o < outf; ++o) {
                    const T gv = gr[o];
                    const auto* wr = wi->data.data() + o * in;
                    for (int64_t i = 0; i < in; ++i) dx[i] += gv * wr[i];
                }
            }
        }
        if (wi->requires_grad) {
            wi->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const auto* xr = xi->data.data() + r * in;
                const auto* gr = g + r * outf;
                for (int64_t o = 0; o < outf; ++o) {
                    const T gv = gr[o];
                    auto* dw = wi->grad.data() + o * in;
                    for (int64_t i = 0; i < in; ++i) dw[i] += gv * xr[i];
                }
            }
        }
        if (bi && bi->requires_grad) {
            bi->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const auto* gr = g + r * outf;
                for (int64_t o = 0; o < outf; ++o) bi->grad[static_cast<size_t>(o)] += gr[o];
            }
        }
    });
    return out;
}

// ---- conv1d -----------------------------------------------------------------------

namespace {

// Output index range [lo_begin, lo_end) such that li = lo*stride + k - pad stays in [0, L).
void conv_bounds(int64_t L, int64_t Lout, int stride, int k, int pad, int64_t& lo_begin,
                 int64_t& lo_end) {
    const int64_t shift = k - pad; // li = lo*stride + shift
    if (shift >= 0)
        lo_begin = 0;
    else
        lo_begin = (-shift + stride - 1) / stride;
    const int64_t hi = L - 1 - shift; // lo*stride <= hi
    lo_end = hi < 0 ? 0 : std::min<int64_t>(Lout, hi / stride + 1);
    if (lo_begin > lo_end) lo_begin = lo_end;
}

} // namespace

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                 int padding) {
    check_defined("conv1d", x);
    check_defined("conv1d", w);
    if (x.ndim() != 3 || w.ndim() != 3 || x.dim(1) != w.dim(1))
        shape_error("conv1d", x.shape(), w.shape());
    const int64_t B = x.dim(0), Ci = x.dim(1), L = x.dim(2);
    const int64_t Co = w.dim(0), K = w.dim(2);
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != Co)) shape_error("conv1d", w.shape(), b.shape());
    const int64_t Lout = (L + 2 * padding - K) / stride + 1;
    if (Lout < 1)
        throw std::invalid_argument("conv1d: empty output for input " + shape_str(x.shape()) +
                                    " kernel " + shape_str(w.shape()));
    Tensor<T> out = Tensor<T>::zeros({B, Co, Lout});
    const auto* px = x.data().data();
    const auto* pw = w.data().data();
    auto* po = out.data().data();
    for (int64_t bi_ = 0; bi_ < B; ++bi_) {
        for (int64_t co = 0; co < Co; ++co) {
            auto* orow = po + (bi_ * Co + co) * Lout;
            if (b.defined()) {
                const T bv = b.data()[static_cast<size_t>(co)];
                for (int64_t lo = 0; lo < Lout; ++lo) orow[lo] = bv;
            }
            for (int64_t ci = 0; ci < Ci; ++ci) {
                const auto* xrow = px + (bi_ * Ci + ci) * L;
                const auto* wrow = pw + (co * Ci + ci) * K;
                for (int64_t k = 0; k < K; ++k) {
                    const T wv = wrow[k];
                    int64_t lo_begin, lo_end;
                    conv_bounds(L, Lout, stride, static_cast<int>(k), padding, lo_begin, lo_end);
                    const auto* xs = xrow + lo_begin * stride + k - padding;
                    if (stride == 1) {
                        for (int64_t lo = lo_begin; lo < lo_end; ++lo)
                            orow[lo] += wv * xs[lo - lo_begin];
                    } else {
                        for (int64_t lo = lo_begin; lo < lo_end; ++lo)
                            orow[lo] += wv * xs[(lo - lo_begin) * stride];
                    }
                }
            }
        }
    }
    auto xi = x.impl();
    auto wi = w.impl();
    auto bimp = b.defined() ? b.impl() : nullptr;
    auto oi = out.impl();
    record("conv1d", {&x, &w, &b}, out, [xi, wi, bimp, oi, B, Ci, Co, L, K, Lout, stride, padding]() {
        oi->ensure_grad();
        const bool gx = xi->requires_grad, gw = wi->requires_grad;
        const bool gb = bimp && bimp->requires_grad;
        if (gx) xi->ensure_grad();
        if (gw) wi->ensure_grad();
        if (gb) bimp->ensure_grad();
        for (int64_t bi_ = 0; bi_ < B; ++bi_) {
            for (int64_t co = 0; co < Co; ++co) {
                const auto* grow = oi->grad.data() + (bi_ * Co + co) * Lout;
                if (gb) {
                    T acc = T(0);
                    for (int64_t lo = 0; lo < Lout; ++lo) acc += grow[lo];
                    bimp->grad[static_cast<size_t>(co)] += acc;
                }
                for (int64_t ci = 0; ci < Ci; ++ci) {
                    const auto* xrow = xi->data.data() + (bi_ * Ci + ci) * L;
                    auto* dxrow = gx ? xi->grad.data() + (bi_ * Ci + ci) * L : nullptr;
                    const auto* wrow = wi->data.data() + (co * Ci + ci) * K;
                    auto* dwrow = gw ? wi->grad.data() + (co * Ci + ci) * K : nullptr;
                    for (int64_t k = 0; k < K; ++k) {
                        int64_t lo_begin, lo_end;
                        conv_bounds(L, Lout, stride, static_cast<int>(k), padding, lo_begin, lo_end);
                        const int64_t base = lo_begin * stride + k - padding;
                        if (gx) {
                            const T wv = wrow[k];
                            for (int64_t lo = lo_begin; lo < lo_end; ++lo)
                                dxrow[base + (lo - lo_begin) * stride] += wv * grow[lo];
                        }
                        if (gw) {
                            T acc = T(0);
                            for (int64_t lo = lo_begin; lo < lo_end; ++lo)
                                acc += xrow[base + (lo - lo_begin) * stride] * grow[lo];
                            dwrow[k] += acc;
                        }
                    }
                }
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> conv_transpose1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                           int padding) {
    check_defined("conv_transpose1d", x);
    check_defined("conv_transpose1d", w);
    if (x.ndim() != 3 || w.ndim() != 3 || x.dim(1) != w.dim(0))
        shape_error("conv_transpose1d", x.shape(), w.shape());
    const int64_t B = x.dim(0), Ci = x.dim(1), L = x.dim(2);
    const int64_t Co = w.dim(1), K = w.dim(2);
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != Co))
        shape_error("conv_transpose1d", w.shape(), b.shape());
    const int64_t Lout = (L - 1) * stride - 2 * padding + K;
    if (Lout < 1)
        throw std::invalid_argument("conv_transpose1d: empty output for input " +
                                    shape_str(x.shape()) + " kernel " + shape_str(w.shape()));
    Tensor<T> out = Tensor<T>::zeros({B, Co, Lout});
    const auto* px = x.data().data();
    const auto* pw = w.data().data();
    auto* po = out.data().data();
    for (int64_t bi_ = 0; bi_ < B; ++bi_) {
        if (b.defined())
            for (int64_t co = 0; co < Co; ++co) {
                auto* orow = po + (bi_ * Co + co) * Lout;
                const T bv = b.data()[static_cast<size_t>(co)];
                for (int64_t lo = 0; lo < Lout; ++lo) orow[lo] = bv;
            }
        for (int64_t ci = 0; ci < Ci; ++ci) {
            const auto* xrow = px + (bi_ * Ci + ci) * L;
            for (int64_t co = 0; co < Co; ++co) {
                auto* orow = po + (bi_ * Co + co) * Lout;
                const auto* wrow = pw + (ci * Co + co) * K;
                for (int64_t k = 0; k < K; ++k) {
                    const T wv = wrow[k];
                    // lo = li*stride + k - padding must stay in [0, Lout)
                    int64_t li_begin, li_end;
                    conv_bounds(Lout, L, stride, static_cast<int>(k), padding, li_begin, li_end);
                    const int64_t base = li_begin * stride + k - padding;
                    for (int64_t li = li_begin; li < li_end; ++li)
                        orow[base + (li - li_begin) * stride] += wv * xrow[li];
                }
            }
        }
    }
    auto xi = x.impl();
    auto wi = w.impl();
    auto bimp = b.defined() ? b.impl() : nullptr;
    auto oi = out.impl();
    record("conv_transpose1d", {&x, &w, &b}, out,
           [xi, wi, bimp, oi, B, Ci, Co, L, K, Lout, stride, padding]() {
               oi->ensure_grad();
               const bool gx = xi->requires_grad, gw = wi->requires_grad;
               const bool gb = bimp && bimp->requires_grad;
               if (gx) xi->ensure_grad();
               if (gw) wi->ensure_grad();
               if (gb) bimp->ensure_grad();
               if (gb)
                   for (int64_t bi_ = 0; bi_ < B; ++bi_)
                       for (int64_t co = 0; co < Co; ++co) {
                           const auto* grow = oi->grad.data() + (bi_ * Co + co) * Lout;
                           T acc = T(0);
                           for (int64_t lo = 0; lo < Lout; ++lo) acc += grow[lo];
                           bimp->grad[static_cast<size_t>(co)] += acc;
                       }
               for (int64_t bi_ = 0; bi_ < B; ++bi_)
                   for (int64_t ci = 0; ci < Ci; ++ci) {
                       const auto* xrow = xi->data.data() + (bi_ * Ci + ci) * L;
                       auto* dxrow = gx ? xi->grad.data() + (bi_ * Ci + ci) * L : nullptr;
                       for (int64_t co = 0; co < Co; ++co) {
                           const auto* grow = oi->grad.data() + (bi_ * Co + co) * Lout;
                           const auto* wrow = wi->data.data() + (ci * Co + co) * K;
                           auto* dwrow = gw ? wi->grad.data() + (ci * Co + co) * K : nullptr;
                           for (int64_t k = 0; k < K; ++k) {
                               int64_t li_begin, li_end;
                               conv_bounds(Lout, L, stride, static_cast<int>(k), padding, li_begin,
                                           li_end);
                               const int64_t base = li_begin * stride + k - padding;
                               if (gx) {
                                   const T wv = wrow[k];
                                   for (int64_t li = li_begin; li < li_end; ++li)
                                       dxrow[li] += wv * grow[base + (li - li_begin) * stride];
                               }
                               if (gw) {
                                   T acc = T(0);
                                   for (int64_t li = li_begin; li < li_end; ++li)
                                       acc += xrow[li] * grow[base + (li - li_begin) * stride];
                                   dwrow[k] += acc;
                               }
                           }
                       }
                   }
           });
    return out;
}

// ---- softmax / cross entropy / embedding ----------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
    check_defined("softmax", a);
    axis = normalize_axis("softmax", axis, a.ndim());
    const auto bl = axis_blocks(a.shape(), axis);
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const auto* pa = a.data().data();
    auto* po = out.data().data();
    for (int64_t o = 0; o < bl.outer; ++o)
        for (int64_t i = 0; i < bl.inner; ++i) {
            const int64_t base = o * bl.axis * bl.inner + i;
            T mx = pa[base];
            for (int64_t x = 1; x < bl.axis; ++x)
                mx = std::max(mx, pa[base + x * bl.inner]);
            T denom = T(0);
            for (int64_t x = 0; x < bl.axis; ++x) {
                const T e = std::exp(pa[base + x * bl.inner] - mx);
                po[base + x * bl.inner] = e;
                denom += e;
            }
            for (int64_t x = 0; x < bl.axis; ++x) po[base + x * bl.inner] /= denom;
        }
    auto ai = a.impl();
    auto oi = out.impl();
    record("softmax", {&a}, out, [ai, oi, bl]() {
        if (!ai->requires_grad) return;
        oi->ensure_grad();
        ai->ensure_grad();
        const auto* y = oi->data.data();
        const auto* gy = oi->grad.data();
        for (int64_t o = 0; o < bl.outer; ++o)
            for (int64_t i = 0; i < bl.inner; ++i) {
                const int64_t base = o * bl.axis * bl.inner + i;
                T dot = T(0);
                for (int64_t x = 0; x < bl.axis; ++x) {
                    const int64_t p = base + x * bl.inner;
                    dot += y[p] * gy[p];
                }
                for (int64_t x = 0; x < bl.axis; ++x) {
                    const int64_t p = base + x * bl.inner;
                    ai->grad[static_cast<size_t>(p)] += y[p] * (gy[p] - dot);
                }
            }
    });
    return out;
}

template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, const std::vector<int64_t>& targets) {
    check_defined("cross_entropy", logits);
    if (logits.ndim() != 2 && logits.ndim() != 3)
        throw std::invalid_argument("cross_entropy: logits must be [B,C] or [B,C,L], got " +
                                    shape_str(logits.shape()));
    const int64_t B = logits.dim(0), C = logits.dim(1);
    const int64_t L = logits.ndim() == 3 ? logits.dim(2) : 1;
    if (static_cast<int64_t>(targets.size()) != B * L)
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                    " targets for logits " + shape_str(logits.shape()));
    const auto* pl = logits.data().data();
    // Save the softmax probabilities for the backward pass.
    auto probs = std::make_shared<std::vector<T>>(logits.data().size());
    T loss = T(0);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t l = 0; l < L; ++l) {
            const int64_t t = targets[static_cast<size_t>(b * L + l)];
            if (t < 0 || t >= C)
                throw std::invalid_argument("cross_entropy: target " + std::to_string(t) +
                                            " out of range [0," + std::to_string(C) + ")");
            const int64_t base = b * C * L + l;
            T mx = pl[base];
            for (int64_t c = 1; c < C; ++c) mx = std::max(mx, pl[base + c * L]);
            T denom = T(0);
            for (int64_t c = 0; c < C; ++c) {
                const T e = std::exp(pl[base + c * L] - mx);
                (*probs)[static_cast<size_t>(base + c * L)] = e;
                denom += e;
            }
            for (int64_t c = 0; c < C; ++c) (*probs)[static_cast<size_t>(base + c * L)] /= denom;
            loss -= pl[base + t * L] - mx - std::log(denom);
        }
    const T count = static_cast<T>(B * L);
    Tensor<T> out = Tensor<T>::scalar(loss / count);
    auto li = logits.impl();
    auto oi = out.impl();
    auto tgt = std::make_shared<std::vector<int64_t>>(targets);
    record("cross_entropy", {&logits}, out, [li, oi, probs, tgt, B, C, L, count]() {
        if (!li->requires_grad) return;
        oi->ensure_grad();
        li->ensure_grad();
        const T g = oi->grad[0] / count;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t l = 0; l < L; ++l) {
                const int64_t t = (*tgt)[static_cast<size_t>(b * L + l)];
                const int64_t base = b * C * L + l;
                for (int64_t c = 0; c < C; ++c) {
                    const auto p = static_cast<size_t>(base + c * L);
                    li->grad[p] += g * ((*probs)[p] - (c == t ? T(1) : T(0)));
                }
            }
    });
    return out;
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int64_t>& indices) {
    check_defined("embedding", table);
    if (table.ndim() != 2)
        throw std::invalid_argument("embedding: table must be [V,E], got " + shape_str(table.shape()));
    const int64_t V = table.dim(0), E = table.dim(1);
    const auto N = static_cast<int64_t>(indices.size());
    Tensor<T> out = Tensor<T>::zeros({N, E});
    const auto* pt = table.data().data();
    auto* po = out.data().data();
    for (int64_t n = 0; n < N; ++n) {
        const int64_t v = indices[static_cast<size_t>(n)];
        if (v < 0 || v >= V)
            throw std::invalid_argument("embedding: index " + std::to_string(v) + " out of range [0," +
                                        std::to_string(V) + ")");
        std::memcpy(po + n * E, pt + v * E, static_cast<size_t>(E) * sizeof(T));
    }
    auto ti = table.impl();
    auto oi = out.impl();
    auto idx = std::make_shared<std::vector<int64_t>>(indices);
    record("embedding", {&table}, out, [ti, oi, idx, E]() {
        if (!ti->requires_grad) return;
        oi->ensure_grad();
        ti->ensure_grad();
        for (size_t n = 0; n < idx->size(); ++n) {
            auto* dst = ti->grad.data() + (*idx)[n] * E;
            const auto* src = oi->grad.data() + static_cast<int64_t>(n) * E;
            for (int64_t e = 0; e < E; ++e) dst[e] += src[e];
        }
    });
    return out;
}

// ---- composite ops -----------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> affine_channel(const Tensor<T>& y, const Tensor<T>& gamma, const Tensor<T>& beta,
                         const Shape& view) {
    if (!gamma.defined()) return y;
    auto out = mul(y, reshape(gamma, view));
    if (beta.defined()) out = add(out, reshape(beta, view));
    return out;
}

} // namespace

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps) {
    check_defined("group_norm", x);
    if (x.ndim() != 3)
        throw std::invalid_argument("group_norm: expected [B,C,L], got " + shape_str(x.shape()));
    const int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
    if (groups < 1 || C % groups != 0)
        throw std::invalid_argument("group_norm: " + std::to_string(groups) +
                                    " groups do not divide " + std::to_string(C) + " channels");
    auto xr = reshape(x, {B, groups, (C / groups) * L});
    auto mu = mean_axis(xr, 2, true);
    auto xc = sub(xr, mu);
    auto var = mean_axis(mul(xc, xc), 2, true);
    auto xn = mul(xc, pow(add_scalar(var, eps), T(-0.5)));
    auto y = reshape(xn, x.shape());
    return affine_channel(y, gamma, beta, Shape{1, C, 1});
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    check_defined("instance_norm", x);
    if (x.ndim() != 3)
        throw std::invalid_argument("instance_norm: expected [B,C,L], got " + shape_str(x.shape()));
    return group_norm(x, static_cast<int>(x.dim(1)), gamma, beta, eps);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    check_defined("layer_norm", x);
    const int axis = x.ndim() - 1;
    auto mu = mean_axis(x, axis, true);
    auto xc = sub(x, mu);
    auto var = mean_axis(mul(xc, xc), axis, true);
    auto y = mul(xc, pow(add_scalar(var, eps), T(-0.5)));
    if (gamma.defined()) {
        y = mul(y, gamma);
        if (beta.defined()) y = add(y, beta);
    }
    return y;
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    check_defined("attention", q);
    check_defined("attention", k);
    check_defined("attention", v);
    if (q.ndim() < 2 || q.ndim() != k.ndim() || q.ndim() != v.ndim())
        shape_error("attention", q.shape(), k.shape());
    const int nd = q.ndim();
    std::vector<int> perm(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) perm[static_cast<size_t>(i)] = i;
    std::swap(perm[static_cast<size_t>(nd - 1)], perm[static_cast<size_t>(nd - 2)]);
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(q.dim(-1)));
    auto scores = scale(matmul(q, permute(k, perm)), inv_sqrt_d);
    auto attn = softmax(scores, -1);
    return matmul(attn, v);
}

template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar, const Tensor<T>& noise) {
    return add(mu, mul(exp(scale(logvar, T(0.5))), noise));
}

template <typename T>
Tensor<T> sinusoidal_embedding(const std::vector<double>& timesteps, int dim, double max_period) {
    if (dim < 2 || dim % 2 != 0)
        throw std::invalid_argument("sinusoidal_embedding: dim must be even and >= 2");
    const auto N = static_cast<int64_t>(timesteps.size());
    const int half = dim / 2;
    Tensor<T> out = Tensor<T>::zeros({N, dim});
    auto* po = out.data().data();
    for (int64_t n = 0; n < N; ++n) {
        const double t = timesteps[static_cast<size_t>(n)];
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(max_period) * i / half);
            po[n * dim + i] = static_cast<T>(std::cos(t * freq));
            po[n * dim + half + i] = static_cast<T>(std::sin(t * freq));
        }
    }
    return out;
}

// ---- explicit instantiations ---------------------------------------------------------

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

#define SNPFORGE_INSTANTIATE_OPS(T)                                                               \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                            \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                       \
    template Tensor<T> exp<T>(const Tensor<T>&);                                                 \
    template Tensor<T> log<T>(const Tensor<T>&);                                                 \
    template Tensor<T> pow<T>(const Tensor<T>&, T);                                              \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                             \
    template Tensor<T> silu<T>(const Tensor<T>&);                                                \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                \
    template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                       \
    template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                         \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                      \
    template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<int>&);                    \
    template Tensor<T> slice<T>(const Tensor<T>&, int, int64_t, int64_t);                        \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                            \
    template Tensor<T> sum_all<T>(const Tensor<T>&);                                             \
    template Tensor<T> mean_all<T>(const Tensor<T>&);                                            \
    template Tensor<T> sum_axis<T>(const Tensor<T>&, int, bool);                                 \
    template Tensor<T> mean_axis<T>(const Tensor<T>&, int, bool);                                \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
    template Tensor<T> conv1d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);\
    template Tensor<T> conv_transpose1d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                           int, int);                                            \
    template Tensor<T> softmax<T>(const Tensor<T>&, int);                                        \
    template Tensor<T> cross_entropy_logits<T>(const Tensor<T>&, const std::vector<int64_t>&);   \
    template Tensor<T> embedding<T>(const Tensor<T>&, const std::vector<int64_t>&);              \
    template Tensor<T> group_norm<T>(const Tensor<T>&, int, const Tensor<T>&, const Tensor<T>&,  \
                                     T);                                                         \
    template Tensor<T> instance_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);\
    template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);   \
    template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
    template Tensor<T> reparameterize<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
    template Tensor<T> sinusoidal_embedding<T>(const std::vector<double>&, int, double);

SNPFORGE_INSTANTIATE_OPS(float)
SNPFORGE_INSTANTIATE_OPS(double)

#undef SNPFORGE_INSTANTIATE_OPS

} // namespace snpforge
