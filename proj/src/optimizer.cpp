#include "uqbench/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace uq::nn {

void Adam::step(const std::vector<Param*>& params) {
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Param* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  } else if (m_.size() != params.size()) {
    throw std::invalid_argument("Adam::step: parameter list changed size");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Param& param = *params[p];
    if (!param.value.same_shape(m_[p])) {
      throw std::invalid_argument("Adam::step: shape of " + param.name + " changed");
    }
    for (std::size_t i = 0; i < param.value.size(); ++i) {
      const double g = param.grad[i];
      m_[p][i] = cfg_.beta1 * m_[p][i] + (1.0 - cfg_.beta1) * g;
      v_[p][i] = cfg_.beta2 * v_[p][i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m_[p][i] / bc1;
      const double v_hat = v_[p][i] / bc2;
      param.value[i] -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
    }
  }
}

}  // namespace uq::nn
