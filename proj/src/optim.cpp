#include "moext/optim.hpp"

#include <cmath>

namespace moext::nn {

template <typename T>
AdamW<T>::AdamW(std::vector<ParamRef<T>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.learning_rate > 0)) throw ConfigError("learning rate must be positive");
  for (const auto& p : params_) {
    m_.emplace_back(p.value->size(), T(0));
    v_.emplace_back(p.value->size(), T(0));
  }
}

template <typename T>
void AdamW<T>::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  const double decay = 1.0 - cfg_.learning_rate * cfg_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    T* p = params_[i].value->data();
    const T* g = params_[i].grad->data();
    T* m = m_[i].data();
    T* v = v_[i].data();
    const std::size_t size = params_[i].value->size();
    for (std::size_t k = 0; k < size; ++k) {
      p[k] = static_cast<T>(p[k] * decay);
      m[k] = static_cast<T>(cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k]);
      v[k] = static_cast<T>(cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k]);
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] = static_cast<T>(p[k] - cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.eps));
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace moext::nn
