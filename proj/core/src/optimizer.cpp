#include "ink/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "ink/error.hpp"

namespace ink {

double LearningRateSchedule::at(std::int64_t step) const {
  if (warmup_steps <= 0 || !(peak_lr > 0.0)) throw InputError("schedule: warmup_steps and peak_lr must be positive");
  const double s = static_cast<double>(std::max<std::int64_t>(step, 1));
  const double w = static_cast<double>(warmup_steps);
  return peak_lr * std::min(s / w, std::sqrt(w / s));
}

Adam::Adam(std::vector<ad::Parameter*> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void Adam::step(double lr) {
  double clip = 1.0;
  if (options_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto* p : params_)
      if (p->trainable) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > options_.clip_norm) clip = options_.clip_norm / norm;
  }
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Parameter& p = *params_[i];
    if (!p.trainable) continue;
    if (!p.grad.allFinite()) throw NumericError("adam: non-finite gradient in " + p.name);
    const Matrix g = clip * p.grad;
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g.cwiseProduct(g);
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + options_.epsilon);
  }
}

}  // namespace ink
