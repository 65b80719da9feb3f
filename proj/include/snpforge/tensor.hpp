#ifndef SNPFORGE_TENSOR_HPP
#define SNPFORGE_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "snpforge/rng.hpp"

namespace snpforge {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // allocated lazily on first accumulation
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }
};

// Dense tensor handle with value semantics over a shared buffer. Gradients
// accumulate additively into `grad` during Tape::backward.
template <typename T>
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, T value);
    static Tensor from_vector(Shape shape, std::vector<T> values);
    static Tensor scalar(T value) { return from_vector({}, {value}); }
    static Tensor randn(Shape shape, Rng& rng, T stdev = T(1));
    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
    int64_t dim(int i) const;

    std::vector<T>& data() { return impl_->data; }
    const std::vector<T>& data() const { return impl_->data; }
    T item() const;
    T at(std::initializer_list<int64_t> idx) const;

    Tensor& set_requires_grad(bool b = true) {
        impl_->requires_grad = b;
        return *this;
    }
    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    std::vector<T>& grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    void zero_grad() {
        if (impl_) impl_->grad.assign(impl_->grad.size(), T(0));
    }

    // Deep copy without gradient tracking.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
    static Tensor wrap(std::shared_ptr<TensorImpl<T>> impl) {
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }

  private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
struct TapeNode {
    const char* op;
    std::function<void()> backward;
};

// Define-by-run gradient tape. Constructing a Tape makes it current for the
// thread; ops record nodes while a tape is current and any input requires
// grad. backward() replays nodes in exact reverse insertion order.
template <typename T>
class Tape {
  public:
    Tape() : prev_(current_ref()) { current_ref() = this; }
    ~Tape() { current_ref() = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(const char* op, std::function<void()> backward) {
        nodes_.push_back(TapeNode<T>{op, std::move(backward)});
    }
    void track(std::shared_ptr<TensorImpl<T>> impl) { touched_.push_back(std::move(impl)); }
    void backward(const Tensor<T>& loss);
    // Reset every gradient buffer touched by this tape, so a second backward
    // pass from a different root starts clean.
    void zero_all_grads() {
        for (auto& t : touched_) t->grad.assign(t->grad.size(), T(0));
    }
    size_t size() const { return nodes_.size(); }

    static Tape* current() { return current_ref(); }

  private:
    static Tape*& current_ref() {
        thread_local Tape* cur = nullptr;
        return cur;
    }
    std::vector<TapeNode<T>> nodes_;
    std::vector<std::shared_ptr<TensorImpl<T>>> touched_;
    Tape* prev_;
};

// ---- elementwise and broadcast ops ------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T c);
template <typename T> Tensor<T> neg(const Tensor<T>& a) { return scale(a, T(-1)); }
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> pow(const Tensor<T>& a, T exponent);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> silu(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T slope);
// Gradient passes through inside [lo, hi], zero outside.
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

// ---- shape ops ---------------------------------------------------------

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm);
template <typename T> Tensor<T> slice(const Tensor<T>& a, int axis, int64_t start, int64_t len);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);

// ---- reductions ---------------------------------------------------------

template <typename T> Tensor<T> sum_all(const Tensor<T>& a);
template <typename T> Tensor<T> mean_all(const Tensor<T>& a);
template <typename T> Tensor<T> sum_axis(const Tensor<T>& a, int axis, bool keepdim);
template <typename T> Tensor<T> mean_axis(const Tensor<T>& a, int axis, bool keepdim);

// ---- matrix / NN ops -----------------------------------------------------

// [..., M, K] x [..., K, N]; leading batch dims must match exactly.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x [..., In], w [Out, In], optional b [Out].
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
// x [B, Cin, L], w [Cout, Cin, K], optional b [Cout].
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int padding);
// x [B, Cin, L], w [Cin, Cout, K]; Lout = (L-1)*stride - 2*padding + K.
template <typename T>
Tensor<T> conv_transpose1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                           int padding);
template <typename T> Tensor<T> softmax(const Tensor<T>& a, int axis);
// logits [B, C] with targets length B, or [B, C, L] with targets length B*L
// (b-major). Mean negative log-likelihood over all positions.
template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, const std::vector<int64_t>& targets);
// table [V, E], indices in [0, V) -> [N, E].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int64_t>& indices);

// ---- composite ops (built from the primitives above) --------------------

// x [B, C, L] normalized per (sample, group) over the grouped channel block.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));
// x [B, C, L] normalized per (sample, channel).
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                        T eps = T(1e-5));
// normalized over the last axis.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));
// scaled dot-product attention; q [..., Lq, D], k [..., Lk, D], v [..., Lk, Dv].
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v);
// z = mu + exp(logvar / 2) * noise.
template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar, const Tensor<T>& noise);
// [N, dim] sin/cos features of (possibly fractional) timesteps.
template <typename T>
Tensor<T> sinusoidal_embedding(const std::vector<double>& timesteps, int dim,
                               double max_period = 10000.0);

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;
using Tapef = Tape<float>;
using Taped = Tape<double>;

} // namespace snpforge

#endif
