#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hitlsep/stft.hpp"

namespace hitlsep {

/// Geometry and hyperparameters of the U-Net style masking network.
struct NetConfig {
  WindowShape input{1024, 512};
  int depth = 6;
  int base_channels = 16;
  int kernel = 5;
  float leaky_slope = 0.2f;
  float dropout_p = 0.5f;
  float bn_momentum = 0.9f;
  float bn_eps = 1e-5f;
  std::uint64_t seed = 0;

  /// Throws ValidationError on indivisible input dims, depth < 2, base_channels < 2
  /// or an even kernel.
  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

enum class NetMode { Train, Eval };

template <typename Real>
struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<Real> values;

  std::size_t size() const { return values.size(); }
};

/// Trainable parameters plus normalisation running statistics.
///
/// Layer layout for depth D with c_i = base_channels * 2^(i-1):
///   enc{i}:  conv k x k / stride 2 (c_{i-1} -> c_i), batch norm, leaky ReLU
///   dec{i}:  transposed conv (in -> c_{i-1}), batch norm, ReLU, optional dropout,
///            concatenated with enc{i-1}; i = D .. 2
///   head:    transposed conv (2 c_1 -> 1) + bias, sigmoid
/// Dropout applies to the first D/2 decoder stages.
template <typename Real>
class BasicMaskNet {
 public:
  BasicMaskNet() = default;
  explicit BasicMaskNet(const NetConfig& config);

  const NetConfig& config() const { return config_; }
  NetMode mode = NetMode::Eval;

  std::vector<NamedTensor<Real>> params;
  std::vector<NamedTensor<Real>> buffers;  // bn running mean / var, in layer order

  std::size_t parameter_count() const;
  const NamedTensor<Real>* find_param(const std::string& name) const;

  template <typename Other>
  BasicMaskNet<Other> cast() const;

 private:
  NetConfig config_;
  template <typename>
  friend class BasicMaskNet;
};

using MaskNet = BasicMaskNet<float>;

/// Deterministic He-style initialisation from config.seed.
template <typename Real>
BasicMaskNet<Real> init_net(const NetConfig& config) {
  return BasicMaskNet<Real>(config);
}
inline MaskNet init(const NetConfig& config) { return MaskNet(config); }

enum class ExampleSource { OriginalTrain, ZeroTarget, Synthetic };
std::string_view to_string(ExampleSource source);

/// One (mixture magnitude window, target vocal magnitude window) pair.
struct TrainingExample {
  MagWindow x;
  std::vector<float> y;
  ExampleSource source = ExampleSource::OriginalTrain;
};

/// Per-layer batch statistics observed in a train-mode forward pass.
struct BatchNormStats {
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> var;  // unbiased
};

template <typename Real>
struct LossResult {
  double loss = 0.0;
  std::vector<std::vector<Real>> grads;  // aligned with net.params
  BatchNormStats bn_stats;
};

/// Mask for a batch of windows, one flat [freq][time] vector per window.
/// Eval mode uses running statistics and no dropout; train mode uses batch
/// statistics and the dropout pattern derived from dropout_seed.
template <typename Real>
std::vector<std::vector<Real>> forward(const BasicMaskNet<Real>& net,
                                       std::span<const MagWindow> batch, NetMode mode,
                                       std::uint64_t dropout_seed = 0);

/// Single-window eval-or-train forward using net.mode.
std::vector<float> forward(const MaskNet& net, const MagWindow& x);

/// loss = mean over batch and elements of |mask(x) * x - y|, with reverse-mode
/// gradients for every parameter. Runs in train mode.
template <typename Real>
LossResult<Real> l1_loss(const BasicMaskNet<Real>& net, std::span<const TrainingExample> batch,
                         std::uint64_t dropout_seed = 0);

/// running = momentum * running + (1 - momentum) * batch
template <typename Real>
void update_running_stats(BasicMaskNet<Real>& net, const BatchNormStats& stats);

}  // namespace hitlsep
