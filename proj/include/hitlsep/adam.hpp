#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace hitlsep {

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step_count = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;

  /// Zeroed moments shaped like `sizes`.
  static AdamState for_sizes(std::span<const std::size_t> sizes, double lr);
};

/// One bias-corrected Adam update over a list of parameter buffers.
/// A non-finite gradient rejects the whole step (NumericError) before anything changes.
void adam_step(std::span<std::vector<float>* const> params,
               std::span<const std::vector<float>> grads, AdamState& state);

}  // namespace hitlsep
