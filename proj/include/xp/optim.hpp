#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "xp/tensor.hpp"

namespace xp {

// SGD with classic momentum: v = mu*v + g, x -= lr*v.
class SgdMomentum {
public:
    SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

    void add_param(const Tensor& t) {
        params_.push_back(t);
        velocity_.emplace_back(t.size(), 0.0);
    }

    void add_params(const std::vector<Tensor>& ts) {
        for (const auto& t : ts) add_param(t);
    }

    void step() {
        for (std::size_t p = 0; p < params_.size(); ++p) {
            auto& x = params_[p].data_mut();
            auto& v = velocity_[p];
            const double* g = params_[p].has_grad() ? params_[p].grad().data() : nullptr;
            for (std::size_t i = 0; i < x.size(); ++i) {
                v[i] = momentum_ * v[i] + (g ? g[i] : 0.0);
                x[i] -= lr_ * v[i];
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    std::size_t num_params() const { return params_.size(); }

    std::vector<std::vector<double>>& state() { return velocity_; }
    const std::vector<std::vector<double>>& state() const { return velocity_; }

private:
    double lr_, momentum_;
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
};

// AdamW with decoupled weight decay.
class AdamW {
public:
    explicit AdamW(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                   double weight_decay = 0.01)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

    void add_param(const Tensor& t) {
        params_.push_back(t);
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
    }

    void add_params(const std::vector<Tensor>& ts) {
        for (const auto& t : ts) add_param(t);
    }

    void step() {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t p = 0; p < params_.size(); ++p) {
            auto& x = params_[p].data_mut();
            auto& m = m_[p];
            auto& v = v_[p];
            const double* g = params_[p].has_grad() ? params_[p].grad().data() : nullptr;
            for (std::size_t i = 0; i < x.size(); ++i) {
                double gi = g ? g[i] : 0.0;
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                x[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * x[i]);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    double lr() const { return lr_; }
    long step_count() const { return t_; }
    void set_step_count(long t) { t_ = t; }

    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

private:
    double lr_, beta1_, beta2_, eps_, wd_;
    long t_ = 0;
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace xp
