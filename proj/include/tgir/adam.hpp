#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace tgir {

/// Adam moments for one flat parameter block.
class AdamState {
public:
    explicit AdamState(std::size_t size = 0, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    std::size_t size() const noexcept { return m_.size(); }
    int steps() const noexcept { return t_; }

    /// One bias-corrected update of `param` in place.
    void step(std::span<double> param, std::span<const double> grad, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < m_.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
            param[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        }
    }

private:
    std::vector<double> m_, v_;
    double beta1_, beta2_, eps_;
    int t_ = 0;
};

}  // namespace tgir
