#pragma once

// Central finite-difference oracle for the masking network. Test-only; shares
// nothing with the analytic backward pass beyond the forward loss value.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "hitlsep/model.hpp"

namespace hitlsep::test {

struct TensorCheck {
  std::string name;
  std::size_t checked = 0;
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0.0;
};

/// Checks up to `per_tensor` seeded-random entries of every parameter tensor.
/// Finite differences are taken on a copy of the net in `Probe` precision.
template <typename Real, typename Probe = Real>
std::vector<TensorCheck> gradient_check(const BasicMaskNet<Real>& net, const std::vector<TrainingExample>& batch,
                                        double h, std::size_t per_tensor, std::uint64_t seed) {
  const std::uint64_t dropout_seed = seed * 31 + 7;
  const auto analytic = l1_loss(net, std::span<const TrainingExample>(batch), dropout_seed);
  std::mt19937_64 rng(seed);
  std::vector<TensorCheck> out;
  BasicMaskNet<Probe> probe = net.template cast<Probe>();
  for (std::size_t t = 0; t < net.params.size(); ++t) {
    const std::size_t n = net.params[t].size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(n, per_tensor));

    double diff2 = 0, a2 = 0, f2 = 0;
    for (std::size_t i : idx) {
      Probe& w = probe.params[t].values[i];
      const Probe orig = w;
      w = static_cast<Probe>(orig + h);
      const Probe up = w;
      const double lp = l1_loss(probe, std::span<const TrainingExample>(batch), dropout_seed).loss;
      w = static_cast<Probe>(orig - h);
      const Probe down = w;
      const double lm = l1_loss(probe, std::span<const TrainingExample>(batch), dropout_seed).loss;
      w = orig;
      const double numeric = (lp - lm) / (static_cast<double>(up) - static_cast<double>(down));
      const double a = static_cast<double>(analytic.grads[t][i]);
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      f2 += numeric * numeric;
    }
    TensorCheck c;
    c.name = net.params[t].name;
    c.checked = idx.size();
    c.analytic_norm = std::sqrt(a2);
    const double scale = std::max({std::sqrt(a2), std::sqrt(f2), 1e-30});
    c.rel_error = std::sqrt(diff2) / scale;
    out.push_back(c);
  }
  return out;
}

/// Random non-negative windows with targets that are a fraction of the input.
inline std::vector<TrainingExample> random_examples(WindowShape shape, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> mag(0.0f, 2.0f);
  std::uniform_real_distribution<float> frac(0.0f, 1.0f);
  std::vector<TrainingExample> out(count);
  for (auto& ex : out) {
    ex.x.shape = shape;
    ex.x.values.resize(static_cast<std::size_t>(shape.freq) * shape.time);
    ex.y.resize(ex.x.values.size());
    for (std::size_t i = 0; i < ex.y.size(); ++i) {
      ex.x.values[i] = mag(rng);
      ex.y[i] = ex.x.values[i] * frac(rng);
    }
  }
  return out;
}

}  // namespace hitlsep::test
