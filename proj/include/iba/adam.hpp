#pragma once

#include <cmath>
#include <vector>

#include "iba/tensor.hpp"

namespace iba {

// Adam over a fixed set of leaf tensors. step() consumes the accumulated
// gradients and zeroes them.
template <class Real>
class AdamT {
  public:
    struct Config {
        Real lr = Real(1e-3);
        Real beta1 = Real(0.9);
        Real beta2 = Real(0.999);
        Real eps = Real(1e-8);
    };

    AdamT(std::vector<TensorT<Real>> params, Config cfg) : params_(std::move(params)), cfg_(cfg) {
        for (auto& p : params_) {
            m_.emplace_back(p.size(), Real(0));
            v_.emplace_back(p.size(), Real(0));
        }
    }

    AdamT(std::vector<TensorT<Real>> params, Real lr) : AdamT(std::move(params), Config{lr}) {}

    void step() {
        ++t_;
        const Real bc1 = Real(1) - std::pow(cfg_.beta1, static_cast<Real>(t_));
        const Real bc2 = Real(1) - std::pow(cfg_.beta2, static_cast<Real>(t_));
        for (size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k];
            Real* w = p.data();
            const Real* g = p.grad();
            Real* m = m_[k].data();
            Real* v = v_[k].data();
            for (int i = 0; i < p.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (Real(1) - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (Real(1) - cfg_.beta2) * g[i] * g[i];
                const Real mhat = m[i] / bc1;
                const Real vhat = v[i] / bc2;
                w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
        zero_grad();
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

  private:
    std::vector<TensorT<Real>> params_;
    Config cfg_;
    std::vector<std::vector<Real>> m_, v_;
    long t_ = 0;
};

using Adam = AdamT<float>;

}  // namespace iba
