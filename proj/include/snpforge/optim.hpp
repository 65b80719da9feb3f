#ifndef SNPFORGE_OPTIM_HPP
#define SNPFORGE_OPTIM_HPP

#include <string>
#include <vector>

#include "snpforge/tensor.hpp"

namespace snpforge {

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> value;
};

// Bias-corrected Adam over a fixed parameter list. step() reads each
// parameter's accumulated gradient in place.
template <typename T>
class Adam {
  public:
    Adam(std::vector<NamedParam<T>> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
         T eps = T(1e-8));

    void step();
    void zero_grad();
    void set_lr(T lr) { lr_ = lr; }
    T lr() const { return lr_; }
    int64_t step_count() const { return step_; }
    const std::vector<NamedParam<T>>& params() const { return params_; }

  private:
    std::vector<NamedParam<T>> params_;
    std::vector<std::vector<T>> m_, v_;
    T lr_, beta1_, beta2_, eps_;
    int64_t step_ = 0;
};

// Exponential moving average of a parameter list: shadow <- d*shadow + (1-d)*param.
// With `warmup`, the effective decay ramps as min(d, (1+n)/(10+n)) so short
// runs are not dominated by the initialization (the LDM-framework EMA rule).
template <typename T>
class Ema {
  public:
    Ema(const std::vector<NamedParam<T>>& params, T decay, bool warmup = false);

    void update(const std::vector<NamedParam<T>>& params);
    // Overwrite params with the shadow values (checkpoint view).
    void copy_to(std::vector<NamedParam<T>>& params) const;
    const std::vector<std::vector<T>>& shadows() const { return shadows_; }
    T decay() const { return decay_; }

  private:
    std::vector<std::vector<T>> shadows_;
    T decay_;
    bool warmup_ = false;
    int64_t updates_ = 0;
};

using Adamf = Adam<float>;
using Emaf = Ema<float>;

} // namespace snpforge

#endif
