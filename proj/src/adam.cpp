#include "edt/adam.hpp"

#include <cmath>

namespace edt {

Adam::Slot& Adam::slot_for(const std::string& key, const Matrix& param) {
  auto [it, inserted] = slots_.try_emplace(key);
  Slot& s = it->second;
  if (inserted) {
    s.m = Matrix::Zero(param.rows(), param.cols());
    s.v = Matrix::Zero(param.rows(), param.cols());
  } else if (s.m.rows() != param.rows() || s.m.cols() != param.cols()) {
    throw ShapeError("adam: moment shape " + shape_str(s.m) + " does not match parameter '" +
                     key + "' " + shape_str(param));
  }
  return s;
}

void Adam::update(Slot& s, Matrix& param, const Matrix& grad, long t) const {
  require_same_shape(param, grad, "adam");
  s.m = opts_.beta1 * s.m + (1.0 - opts_.beta1) * grad;
  s.v = opts_.beta2 * s.v + (1.0 - opts_.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t));
  param.array() -=
      opts_.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + opts_.eps);
  require_finite(param, "adam update");
}

void Adam::step(ParameterSet& params) {
  ++step_;
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    update(slot_for(e.name, e.value), e.value, e.grad, step_);
  }
}

void Adam::step(const std::string& key, Matrix& param, const Matrix& grad) {
  ++step_;
  update(slot_for(key, param), param, grad, step_);
}

}  // namespace edt
