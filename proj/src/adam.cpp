#include "rectflow/adam.hpp"

#include <cmath>
#include <string>

namespace rectflow {

AdamState::AdamState(AdamConfig cfg, const std::vector<Tensor>& params)
    : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamState::restore(std::uint64_t step, std::vector<std::vector<double>> m,
                        std::vector<std::vector<double>> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) {
    throw ContractError("AdamState::restore: moment count mismatch");
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size()) {
      throw ContractError("AdamState::restore: moment shape mismatch at " +
                          std::to_string(i));
    }
  }
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

void AdamState::step(std::vector<Tensor>& params) {
  std::vector<const std::vector<double>*> grads;
  grads.reserve(params.size());
  for (auto& p : params) grads.push_back(&p.grad());
  apply(params, grads);
  for (auto& p : params) p.zero_grad();
}

void AdamState::step(std::vector<Tensor>& params,
                     const std::vector<std::vector<double>>& grads) {
  if (grads.size() != params.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) +
                        " parameters but " + std::to_string(grads.size()) +
                        " gradients");
  }
  std::vector<const std::vector<double>*> ptrs;
  ptrs.reserve(grads.size());
  for (const auto& g : grads) ptrs.push_back(&g);
  apply(params, ptrs);
}

void AdamState::apply(std::vector<Tensor>& params,
                      const std::vector<const std::vector<double>*>& grads) {
  if (params.size() != m_.size()) {
    throw ContractError("adam_step: state tracks " +
                        std::to_string(m_.size()) + " parameters, got " +
                        std::to_string(params.size()));
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].mutable_values();
    const auto& g = *grads[i];
    if (!g.empty() && g.size() != w.size()) {
      throw ContractError("adam_step: gradient size " +
                          std::to_string(g.size()) +
                          " does not match parameter size " +
                          std::to_string(w.size()) + " at index " +
                          std::to_string(i));
    }
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      if (!std::isfinite(gj)) {
        throw NumericFault("adam_step: non-finite gradient");
      }
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  state.step(params);
}

}  // namespace rectflow
