#pragma once

#include <Eigen/Dense>

namespace artsplat {

// Plain Adam (beta1=0.9, beta2=0.999, eps=1e-8) over a flat parameter
// vector; constant learning rate, optional per-parameter scale.
class Adam {
 public:
  Adam(int n, double lr) : lr_(lr), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

  void set_lr_scale(const Eigen::VectorXd& scale) { lr_scale_ = scale; }
  void set_lr(double lr) { lr_ = lr; }

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = (beta2_ * v_.array() + (1.0 - beta2_) * grad.array().square()).matrix();
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    Eigen::ArrayXd update = lr_ * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + eps_);
    if (lr_scale_.size() == params.size()) update *= lr_scale_.array();
    params.array() -= update;
  }

 private:
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int t_ = 0;
  Eigen::VectorXd m_, v_;
  Eigen::VectorXd lr_scale_;
};

}  // namespace artsplat
