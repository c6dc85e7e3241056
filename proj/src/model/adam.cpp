#include "hitlsep/adam.hpp"

#include <cmath>
#include <string>

#include "hitlsep/error.hpp"

namespace hitlsep {

AdamState AdamState::for_sizes(std::span<const std::size_t> sizes, double lr) {
  AdamState s;
  s.lr = lr;
  for (std::size_t n : sizes) {
    s.m.emplace_back(n, 0.0f);
    s.v.emplace_back(n, 0.0f);
  }
  return s;
}

void adam_step(std::span<std::vector<float>* const> params, std::span<const std::vector<float>> grads,
               AdamState& state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->size(), 0.0f);
      state.v.emplace_back(p->size(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: moment count does not match parameters");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (grads[t].size() != params[t]->size() || state.m[t].size() != params[t]->size()) {
      throw ShapeError("adam_step: tensor " + std::to_string(t) + " shape mismatch");
    }
    for (float g : grads[t]) {
      if (!std::isfinite(g)) {
        throw NumericError("adam_step rejected: non-finite gradient in tensor " + std::to_string(t));
      }
    }
  }

  const std::uint64_t step = state.step_count + 1;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = *params[t];
    auto& m = state.m[t];
    auto& v = state.v[t];
    const auto& g = grads[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double mi = b1 * m[i] + (1.0 - b1) * g[i];
      const double vi = b2 * v[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i];
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = state.lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps);
      p[i] = static_cast<float>(p[i] - update);
      if (!std::isfinite(p[i])) throw NumericError("adam_step produced a non-finite parameter");
    }
  }
  state.step_count = step;
}

}  // namespace hitlsep
