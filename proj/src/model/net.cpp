#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "hitlsep/error.hpp"
#include "hitlsep/kernels.hpp"
#include "hitlsep/model.hpp"

namespace hitlsep {

void NetConfig::validate() const {
  if (depth < 2) throw ValidationError("net depth must be at least 2, got " + std::to_string(depth));
  if (base_channels < 2) {
    throw ValidationError("base_channels must be at least 2, got " + std::to_string(base_channels));
  }
  if (kernel < 1 || kernel % 2 == 0) {
    throw ValidationError("kernel size must be odd, got " + std::to_string(kernel));
  }
  if (depth > 20) throw ValidationError("net depth too large");
  const int div = 1 << depth;
  if (input.freq <= 0 || input.time <= 0 || input.freq % div != 0 || input.time % div != 0) {
    throw ValidationError("input shape (" + std::to_string(input.freq) + ", " +
                          std::to_string(input.time) + ") is not divisible by 2^" +
                          std::to_string(depth) + " = " + std::to_string(div));
  }
  if (!(dropout_p >= 0.0f && dropout_p < 1.0f)) throw ValidationError("dropout_p must lie in [0, 1)");
  if (!(bn_momentum >= 0.0f && bn_momentum < 1.0f)) throw ValidationError("bn_momentum must lie in [0, 1)");
}

std::string_view to_string(ExampleSource source) {
  switch (source) {
    case ExampleSource::OriginalTrain: return "original_train";
    case ExampleSource::ZeroTarget: return "zero_target";
    case ExampleSource::Synthetic: return "synthetic";
  }
  return "unknown";
}

namespace {

// Parameter / buffer positions, fixed by the layer order documented in model.hpp.
struct Layout {
  int depth;
  std::vector<int> ch;  // ch[0] = 1, ch[i] = base * 2^(i-1)

  explicit Layout(const NetConfig& c) : depth(c.depth), ch(static_cast<std::size_t>(c.depth) + 1) {
    ch[0] = 1;
    for (int i = 1; i <= depth; ++i) ch[i] = c.base_channels << (i - 1);
  }
  std::size_t enc(int i) const { return static_cast<std::size_t>(3 * (i - 1)); }
  std::size_t dec(int i) const { return static_cast<std::size_t>(3 * depth + 3 * (depth - i)); }
  std::size_t head() const { return static_cast<std::size_t>(3 * depth + 3 * (depth - 1)); }
  std::size_t enc_bn(int i) const { return static_cast<std::size_t>(i - 1); }
  std::size_t dec_bn(int i) const { return static_cast<std::size_t>(depth + (depth - i)); }
  int dec_in(int i) const { return i == depth ? ch[depth] : 2 * ch[i]; }
  bool dec_dropout(int i) const { return (depth - i) < depth / 2; }
};

template <typename Real>
void gemm(kernels::Transpose ta, kernels::Transpose tb, std::size_t m, std::size_t n, std::size_t k,
          const Real* a, std::size_t lda, const Real* b, std::size_t ldb, Real* c, std::size_t ldc,
          bool accumulate) {
  if constexpr (std::is_same_v<Real, float>) {
    kernels::active().gemm(ta, tb, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  } else {
    const bool at = ta == kernels::Transpose::Yes;
    const bool bt = tb == kernels::Transpose::Yes;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        Real s = 0;
        for (std::size_t p = 0; p < k; ++p) {
          s += (at ? a[p * lda + i] : a[i * lda + p]) * (bt ? b[j * ldb + p] : b[p * ldb + j]);
        }
        c[i * ldc + j] = accumulate ? c[i * ldc + j] + s : s;
      }
    }
  }
}

template <typename Real>
void moments(std::size_t n, const Real* x, double& sum, double& sum_sq) {
  if constexpr (std::is_same_v<Real, float>) {
    kernels::active().moments(n, x, &sum, &sum_sq);
  } else {
    sum = 0.0;
    sum_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum += x[i];
      sum_sq += x[i] * x[i];
    }
  }
}

// Stride-2 convolution geometry shared by conv and transposed conv.
struct Geometry {
  int k;
  int pad;
  int h_big, w_big;      // conv input / transposed-conv output
  int h_small, w_small;  // conv output / transposed-conv input

  std::size_t big_hw() const { return static_cast<std::size_t>(h_big) * w_big; }
  std::size_t small_hw() const { return static_cast<std::size_t>(h_small) * w_small; }
  std::size_t kk() const { return static_cast<std::size_t>(k) * k; }
};

// cols[(c*k + ky)*k + kx][oy * w_small + ox] = big[c][2 oy - pad + ky][2 ox - pad + kx]
template <typename Real>
void im2col(const Real* big, int channels, const Geometry& g, Real* cols) {
  const std::size_t hw = g.small_hw();
  for (int c = 0; c < channels; ++c) {
    const Real* plane = big + static_cast<std::size_t>(c) * g.big_hw();
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        Real* row = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * hw;
        for (int oy = 0; oy < g.h_small; ++oy) {
          const int iy = 2 * oy - g.pad + ky;
          Real* out = row + static_cast<std::size_t>(oy) * g.w_small;
          if (iy < 0 || iy >= g.h_big) {
            std::fill(out, out + g.w_small, Real(0));
            continue;
          }
          const Real* src = plane + static_cast<std::size_t>(iy) * g.w_big;
          for (int ox = 0; ox < g.w_small; ++ox) {
            const int ix = 2 * ox - g.pad + kx;
            out[ox] = (ix >= 0 && ix < g.w_big) ? src[ix] : Real(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: big += scatter(cols).
template <typename Real>
void col2im(const Real* cols, int channels, const Geometry& g, Real* big) {
  const std::size_t hw = g.small_hw();
  for (int c = 0; c < channels; ++c) {
    Real* plane = big + static_cast<std::size_t>(c) * g.big_hw();
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const Real* row = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * hw;
        for (int oy = 0; oy < g.h_small; ++oy) {
          const int iy = 2 * oy - g.pad + ky;
          if (iy < 0 || iy >= g.h_big) continue;
          Real* dst = plane + static_cast<std::size_t>(iy) * g.w_big;
          const Real* src = row + static_cast<std::size_t>(oy) * g.w_small;
          for (int ox = 0; ox < g.w_small; ++ox) {
            const int ix = 2 * ox - g.pad + kx;
            if (ix >= 0 && ix < g.w_big) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

using kernels::Transpose;

// Conv: big (cin) -> small (cout). weight [cout][cin*k*k].
template <typename Real>
void conv_forward(const std::vector<Real>& in, int n, int cin, int cout, const Geometry& g,
                  const Real* weight, std::vector<Real>& out, std::vector<Real>& cols) {
  out.assign(static_cast<std::size_t>(n) * cout * g.small_hw(), Real(0));
  cols.resize(static_cast<std::size_t>(cin) * g.kk() * g.small_hw());
  for (int s = 0; s < n; ++s) {
    im2col(in.data() + static_cast<std::size_t>(s) * cin * g.big_hw(), cin, g, cols.data());
    gemm<Real>(Transpose::No, Transpose::No, cout, g.small_hw(), cin * g.kk(), weight, cin * g.kk(),
               cols.data(), g.small_hw(), out.data() + static_cast<std::size_t>(s) * cout * g.small_hw(),
               g.small_hw(), false);
  }
}

template <typename Real>
void conv_backward(const std::vector<Real>& in, int n, int cin, int cout, const Geometry& g,
                   const Real* weight, const std::vector<Real>& dout, Real* dweight,
                   std::vector<Real>* din, std::vector<Real>& cols) {
  cols.resize(static_cast<std::size_t>(cin) * g.kk() * g.small_hw());
  std::vector<Real> dcols;
  if (din != nullptr) {
    din->assign(static_cast<std::size_t>(n) * cin * g.big_hw(), Real(0));
    dcols.resize(cols.size());
  }
  for (int s = 0; s < n; ++s) {
    const Real* ds = dout.data() + static_cast<std::size_t>(s) * cout * g.small_hw();
    im2col(in.data() + static_cast<std::size_t>(s) * cin * g.big_hw(), cin, g, cols.data());
    gemm<Real>(Transpose::No, Transpose::Yes, cout, cin * g.kk(), g.small_hw(), ds, g.small_hw(),
               cols.data(), g.small_hw(), dweight, cin * g.kk(), true);
    if (din != nullptr) {
      gemm<Real>(Transpose::Yes, Transpose::No, cin * g.kk(), g.small_hw(), cout, weight, cin * g.kk(),
                 ds, g.small_hw(), dcols.data(), g.small_hw(), false);
      col2im(dcols.data(), cin, g, din->data() + static_cast<std::size_t>(s) * cin * g.big_hw());
    }
  }
}

// Transposed conv: small (cin) -> big (cout). weight [cin][cout*k*k].
template <typename Real>
void deconv_forward(const std::vector<Real>& in, int n, int cin, int cout, const Geometry& g,
                    const Real* weight, std::vector<Real>& out, std::vector<Real>& cols) {
  out.assign(static_cast<std::size_t>(n) * cout * g.big_hw(), Real(0));
  cols.resize(static_cast<std::size_t>(cout) * g.kk() * g.small_hw());
  for (int s = 0; s < n; ++s) {
    gemm<Real>(Transpose::Yes, Transpose::No, cout * g.kk(), g.small_hw(), cin, weight, cout * g.kk(),
               in.data() + static_cast<std::size_t>(s) * cin * g.small_hw(), g.small_hw(), cols.data(),
               g.small_hw(), false);
    col2im(cols.data(), cout, g, out.data() + static_cast<std::size_t>(s) * cout * g.big_hw());
  }
}

template <typename Real>
void deconv_backward(const std::vector<Real>& in, int n, int cin, int cout, const Geometry& g,
                     const Real* weight, const std::vector<Real>& dout, Real* dweight,
                     std::vector<Real>& din, std::vector<Real>& cols) {
  cols.resize(static_cast<std::size_t>(cout) * g.kk() * g.small_hw());
  din.assign(static_cast<std::size_t>(n) * cin * g.small_hw(), Real(0));
  for (int s = 0; s < n; ++s) {
    im2col(dout.data() + static_cast<std::size_t>(s) * cout * g.big_hw(), cout, g, cols.data());
    const Real* xs = in.data() + static_cast<std::size_t>(s) * cin * g.small_hw();
    gemm<Real>(Transpose::No, Transpose::No, cin, g.small_hw(), cout * g.kk(), weight, cout * g.kk(),
               cols.data(), g.small_hw(), din.data() + static_cast<std::size_t>(s) * cin * g.small_hw(),
               g.small_hw(), false);
    gemm<Real>(Transpose::No, Transpose::Yes, cin, cout * g.kk(), g.small_hw(), xs, g.small_hw(),
               cols.data(), g.small_hw(), dweight, cout * g.kk(), true);
  }
}

template <typename Real>
struct BnCache {
  std::vector<Real> xhat;
  std::vector<double> invstd;
};

template <typename Real>
void bn_forward(std::vector<Real>& x, int n, int c, std::size_t hw, const Real* gamma, const Real* beta,
                bool train, const Real* run_mean, const Real* run_var, double eps, BnCache<Real>* cache,
                std::vector<double>* batch_mean, std::vector<double>* batch_var) {
  const std::size_t count = static_cast<std::size_t>(n) * hw;
  if (cache != nullptr) {
    cache->xhat.resize(x.size());
    cache->invstd.assign(static_cast<std::size_t>(c), 0.0);
  }
  if (batch_mean != nullptr) {
    batch_mean->assign(static_cast<std::size_t>(c), 0.0);
    batch_var->assign(static_cast<std::size_t>(c), 0.0);
  }
  for (int ch = 0; ch < c; ++ch) {
    double mean;
    double var;
    if (train) {
      double s = 0.0;
      double q = 0.0;
      for (int i = 0; i < n; ++i) {
        double ps;
        double pq;
        moments<Real>(hw, x.data() + (static_cast<std::size_t>(i) * c + ch) * hw, ps, pq);
        s += ps;
        q += pq;
      }
      mean = s / static_cast<double>(count);
      // Two-pass variance for accuracy.
      double v = 0.0;
      for (int i = 0; i < n; ++i) {
        const Real* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          const double d = static_cast<double>(p[j]) - mean;
          v += d * d;
        }
      }
      var = v / static_cast<double>(count);
      if (batch_mean != nullptr) {
        (*batch_mean)[ch] = mean;
        (*batch_var)[ch] = count > 1 ? v / static_cast<double>(count - 1) : var;
      }
    } else {
      mean = run_mean[ch];
      var = run_var[ch];
    }
    const double invstd = 1.0 / std::sqrt(var + eps);
    if (cache != nullptr) cache->invstd[ch] = invstd;
    const double g = gamma[ch];
    const double b = beta[ch];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        const double xh = (static_cast<double>(x[off + j]) - mean) * invstd;
        if (cache != nullptr) cache->xhat[off + j] = static_cast<Real>(xh);
        x[off + j] = static_cast<Real>(g * xh + b);
      }
    }
  }
}

// dy (in place) becomes dx.
template <typename Real>
void bn_backward(std::vector<Real>& dy, int n, int c, std::size_t hw, const Real* gamma,
                 const BnCache<Real>& cache, Real* dgamma, Real* dbeta) {
  const double count = static_cast<double>(n) * static_cast<double>(hw);
  for (int ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        sum_dy += dy[off + j];
        sum_dy_xhat += static_cast<double>(dy[off + j]) * cache.xhat[off + j];
      }
    }
    dgamma[ch] += static_cast<Real>(sum_dy_xhat);
    dbeta[ch] += static_cast<Real>(sum_dy);
    const double k = gamma[ch] * cache.invstd[ch] / count;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        dy[off + j] = static_cast<Real>(
            k * (count * dy[off + j] - sum_dy - static_cast<double>(cache.xhat[off + j]) * sum_dy_xhat));
      }
    }
  }
}

template <typename Real>
void check_finite(const std::vector<Real>& v, const std::string& layer) {
  for (Real x : v) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw NumericError("non-finite activation after layer " + layer);
    }
  }
}

std::uint64_t dropout_stream(std::uint64_t seed, int stage) {
  return seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(stage + 1));
}

template <typename Real>
Real sigmoid_clamped(Real z) {
  // Keeps the mask strictly inside (0, 1) in the working precision.
  constexpr Real lo = std::is_same_v<Real, float> ? Real(1e-7) : Real(1e-15);
  constexpr Real hi = Real(1) - (std::is_same_v<Real, float> ? Real(6e-8) : Real(1e-15));
  const Real s = Real(1) / (Real(1) + std::exp(-z));
  return std::clamp(s, lo, hi);
}

// Forward pass with everything backward needs.
template <typename Real>
struct Tape {
  int n = 0;
  std::vector<Real> x;                 // input, [n][1][H][W]
  std::vector<std::vector<Real>> act;  // act[i] = encoder output i (act[0] = x)
  std::vector<std::vector<Real>> enc_pre;  // bn output before leaky (sign source)
  std::vector<BnCache<Real>> enc_bn;
  std::vector<std::vector<Real>> dec_in;   // indexed by stage i
  std::vector<std::vector<Real>> dec_pre;  // bn output before relu
  std::vector<BnCache<Real>> dec_bn;
  std::vector<std::vector<Real>> dec_drop;  // dropout scale per element (empty = none)
  std::vector<Real> head_in;
  std::vector<Real> mask;
  BatchNormStats stats;
};

template <typename Real>
Geometry geometry(const NetConfig& cfg, int level) {
  // level i: big = input / 2^(i-1), small = input / 2^i
  return Geometry{cfg.kernel, cfg.kernel / 2, cfg.input.freq >> (level - 1), cfg.input.time >> (level - 1),
                  cfg.input.freq >> level, cfg.input.time >> level};
}

template <typename Real>
void run_forward(const BasicMaskNet<Real>& net, std::span<const MagWindow> batch, NetMode mode,
                 std::uint64_t dropout_seed, Tape<Real>& tape, bool keep) {
  const NetConfig& cfg = net.config();
  const Layout L(cfg);
  const int n = static_cast<int>(batch.size());
  if (n == 0) throw ShapeError("forward needs a non-empty batch");
  const std::size_t hw = static_cast<std::size_t>(cfg.input.freq) * cfg.input.time;
  tape.n = n;
  tape.x.resize(static_cast<std::size_t>(n) * hw);
  for (int s = 0; s < n; ++s) {
    const MagWindow& w = batch[s];
    if (w.shape != cfg.input || w.values.size() != hw) {
      throw ShapeError("input window (" + std::to_string(w.shape.freq) + ", " + std::to_string(w.shape.time) +
                       ") does not match model input (" + std::to_string(cfg.input.freq) + ", " +
                       std::to_string(cfg.input.time) + ")");
    }
    std::copy(w.values.begin(), w.values.end(), tape.x.begin() + static_cast<std::ptrdiff_t>(s * hw));
  }

  const bool train = mode == NetMode::Train;
  const int D = cfg.depth;
  tape.act.assign(static_cast<std::size_t>(D) + 1, {});
  tape.enc_pre.assign(static_cast<std::size_t>(D) + 1, {});
  tape.enc_bn.assign(static_cast<std::size_t>(D) + 1, {});
  tape.dec_in.assign(static_cast<std::size_t>(D) + 1, {});
  tape.dec_pre.assign(static_cast<std::size_t>(D) + 1, {});
  tape.dec_bn.assign(static_cast<std::size_t>(D) + 1, {});
  tape.dec_drop.assign(static_cast<std::size_t>(D) + 1, {});
  tape.stats.mean.assign(static_cast<std::size_t>(2 * D - 1), {});
  tape.stats.var.assign(static_cast<std::size_t>(2 * D - 1), {});
  tape.act[0] = tape.x;

  std::vector<Real> cols;
  const auto& P = net.params;
  const auto& B = net.buffers;
  const Real slope = static_cast<Real>(cfg.leaky_slope);

  for (int i = 1; i <= D; ++i) {
    const Geometry g = geometry<Real>(cfg, i);
    std::vector<Real> z;
    conv_forward(tape.act[i - 1], n, L.ch[i - 1], L.ch[i], g, P[L.enc(i)].values.data(), z, cols);
    const std::size_t bi = L.enc_bn(i);
    bn_forward(z, n, L.ch[i], g.small_hw(), P[L.enc(i) + 1].values.data(), P[L.enc(i) + 2].values.data(), train,
               B[2 * bi].values.data(), B[2 * bi + 1].values.data(), cfg.bn_eps, keep ? &tape.enc_bn[i] : nullptr,
               train ? &tape.stats.mean[bi] : nullptr, train ? &tape.stats.var[bi] : nullptr);
    if (keep) tape.enc_pre[i] = z;
    for (Real& v : z) v = v > 0 ? v : slope * v;
    if (train) check_finite(z, "enc" + std::to_string(i));
    tape.act[i] = std::move(z);
  }

  std::vector<Real> d = tape.act[D];
  for (int i = D; i >= 2; --i) {
    const Geometry g = geometry<Real>(cfg, i);
    const int cin = L.dec_in(i);
    const int cout = L.ch[i - 1];
    std::vector<Real> u;
    deconv_forward(d, n, cin, cout, g, P[L.dec(i)].values.data(), u, cols);
    if (keep) tape.dec_in[i] = std::move(d);
    const std::size_t bi = L.dec_bn(i);
    bn_forward(u, n, cout, g.big_hw(), P[L.dec(i) + 1].values.data(), P[L.dec(i) + 2].values.data(), train,
               B[2 * bi].values.data(), B[2 * bi + 1].values.data(), cfg.bn_eps, keep ? &tape.dec_bn[i] : nullptr,
               train ? &tape.stats.mean[bi] : nullptr, train ? &tape.stats.var[bi] : nullptr);
    if (keep) tape.dec_pre[i] = u;
    for (Real& v : u) v = v > 0 ? v : Real(0);
    if (train && L.dec_dropout(i) && cfg.dropout_p > 0.0f) {
      std::mt19937_64 rng(dropout_stream(dropout_seed, i));
      std::bernoulli_distribution keep_unit(1.0 - cfg.dropout_p);
      const Real scale = static_cast<Real>(1.0 / (1.0 - cfg.dropout_p));
      std::vector<Real> drop(u.size());
      for (std::size_t j = 0; j < u.size(); ++j) {
        drop[j] = keep_unit(rng) ? scale : Real(0);
        u[j] *= drop[j];
      }
      if (keep) tape.dec_drop[i] = std::move(drop);
    }
    if (train) check_finite(u, "dec" + std::to_string(i));
    // concat(u, act[i-1]) along channels
    const std::size_t hw_big = g.big_hw();
    std::vector<Real> cat(static_cast<std::size_t>(n) * 2 * cout * hw_big);
    for (int s = 0; s < n; ++s) {
      std::copy_n(u.begin() + static_cast<std::ptrdiff_t>(s * cout * hw_big), cout * hw_big,
                  cat.begin() + static_cast<std::ptrdiff_t>(s * 2 * cout * hw_big));
      std::copy_n(tape.act[i - 1].begin() + static_cast<std::ptrdiff_t>(s * cout * hw_big), cout * hw_big,
                  cat.begin() + static_cast<std::ptrdiff_t>((s * 2 + 1) * cout * hw_big));
    }
    d = std::move(cat);
  }

  const Geometry g = geometry<Real>(cfg, 1);
  std::vector<Real> o;
  deconv_forward(d, n, 2 * L.ch[1], 1, g, P[L.head()].values.data(), o, cols);
  const Real bias = P[L.head() + 1].values[0];
  for (Real& v : o) v = sigmoid_clamped(v + bias);
  if (train) check_finite(o, "head");
  if (keep) tape.head_in = std::move(d);
  tape.mask = std::move(o);
}

}  // namespace

template <typename Real>
BasicMaskNet<Real>::BasicMaskNet(const NetConfig& config) : config_(config) {
  config.validate();
  const Layout L(config);
  const int k = config.kernel;
  std::mt19937_64 rng(config.seed);
  auto he = [&](const std::string& name, std::vector<int> shape, double fan_in, double gain) {
    NamedTensor<Real> t{name, std::move(shape), {}};
    std::size_t count = 1;
    for (int d : t.shape) count *= static_cast<std::size_t>(d);
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
    t.values.resize(count);
    for (auto& v : t.values) v = static_cast<Real>(dist(rng));
    params.push_back(std::move(t));
  };
  auto constant = [](const std::string& name, int n, Real value) {
    return NamedTensor<Real>{name, {n}, std::vector<Real>(static_cast<std::size_t>(n), value)};
  };
  const double leaky_gain = 2.0 / (1.0 + static_cast<double>(config.leaky_slope) * config.leaky_slope);
  for (int i = 1; i <= config.depth; ++i) {
    const std::string p = "enc" + std::to_string(i);
    he(p + ".conv.weight", {L.ch[i], L.ch[i - 1], k, k}, static_cast<double>(L.ch[i - 1]) * k * k, leaky_gain);
    params.push_back(constant(p + ".bn.gamma", L.ch[i], Real(1)));
    params.push_back(constant(p + ".bn.beta", L.ch[i], Real(0)));
  }
  for (int i = config.depth; i >= 2; --i) {
    const std::string p = "dec" + std::to_string(i);
    // Stride 2 means each output sees about a quarter of the kernel taps.
    he(p + ".deconv.weight", {L.dec_in(i), L.ch[i - 1], k, k}, static_cast<double>(L.dec_in(i)) * k * k / 4.0, 2.0);
    params.push_back(constant(p + ".bn.gamma", L.ch[i - 1], Real(1)));
    params.push_back(constant(p + ".bn.beta", L.ch[i - 1], Real(0)));
  }
  he("head.deconv.weight", {2 * L.ch[1], 1, k, k}, 2.0 * L.ch[1] * k * k / 4.0, 1.0);
  params.push_back(constant("head.deconv.bias", 1, Real(0)));

  for (int i = 1; i <= config.depth; ++i) {
    const std::string p = "enc" + std::to_string(i);
    buffers.push_back(constant(p + ".bn.running_mean", L.ch[i], Real(0)));
    buffers.push_back(constant(p + ".bn.running_var", L.ch[i], Real(1)));
  }
  for (int i = config.depth; i >= 2; --i) {
    const std::string p = "dec" + std::to_string(i);
    buffers.push_back(constant(p + ".bn.running_mean", L.ch[i - 1], Real(0)));
    buffers.push_back(constant(p + ".bn.running_var", L.ch[i - 1], Real(1)));
  }
}

template <typename Real>
std::size_t BasicMaskNet<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

template <typename Real>
const NamedTensor<Real>* BasicMaskNet<Real>::find_param(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename Real>
template <typename Other>
BasicMaskNet<Other> BasicMaskNet<Real>::cast() const {
  BasicMaskNet<Other> out;
  out.config_ = config_;
  out.mode = mode;
  auto convert = [](const std::vector<NamedTensor<Real>>& src) {
    std::vector<NamedTensor<Other>> dst;
    for (const auto& t : src) {
      dst.push_back({t.name, t.shape, std::vector<Other>(t.values.begin(), t.values.end())});
    }
    return dst;
  };
  out.params = convert(params);
  out.buffers = convert(buffers);
  return out;
}

template <typename Real>
std::vector<std::vector<Real>> forward(const BasicMaskNet<Real>& net, std::span<const MagWindow> batch,
                                       NetMode mode, std::uint64_t dropout_seed) {
  Tape<Real> tape;
  run_forward(net, batch, mode, dropout_seed, tape, false);
  const std::size_t hw = static_cast<std::size_t>(net.config().input.freq) * net.config().input.time;
  std::vector<std::vector<Real>> out(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    out[s].assign(tape.mask.begin() + static_cast<std::ptrdiff_t>(s * hw),
                  tape.mask.begin() + static_cast<std::ptrdiff_t>((s + 1) * hw));
  }
  return out;
}

std::vector<float> forward(const MaskNet& net, const MagWindow& x) {
  return forward<float>(net, std::span<const MagWindow>(&x, 1), net.mode, 0).front();
}

template <typename Real>
LossResult<Real> l1_loss(const BasicMaskNet<Real>& net, std::span<const TrainingExample> batch,
                         std::uint64_t dropout_seed) {
  const NetConfig& cfg = net.config();
  const Layout L(cfg);
  const int n = static_cast<int>(batch.size());
  if (n == 0) throw ShapeError("l1_loss needs a non-empty batch");
  const std::size_t hw = static_cast<std::size_t>(cfg.input.freq) * cfg.input.time;

  std::vector<MagWindow> inputs;
  inputs.reserve(batch.size());
  for (const auto& ex : batch) {
    if (ex.y.size() != ex.x.values.size()) throw ShapeError("training target and input differ in size");
    inputs.push_back(ex.x);
  }

  Tape<Real> tape;
  run_forward(net, inputs, NetMode::Train, dropout_seed, tape, true);

  LossResult<Real> result;
  result.bn_stats = std::move(tape.stats);
  const double count = static_cast<double>(n) * static_cast<double>(hw);
  std::vector<Real> dout(tape.mask.size());
  double loss = 0.0;
  for (int s = 0; s < n; ++s) {
    const auto& y = batch[s].y;
    for (std::size_t j = 0; j < hw; ++j) {
      const std::size_t idx = static_cast<std::size_t>(s) * hw + j;
      const double x = tape.x[idx];
      const double m = tape.mask[idx];
      const double r = m * x - static_cast<double>(y[j]);
      loss += std::abs(r);
      const double sign = r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0);
      // d loss / d logit = sign * x * m (1 - m) / count
      dout[idx] = static_cast<Real>(sign * x * m * (1.0 - m) / count);
    }
  }
  result.loss = loss / count;
  if (!std::isfinite(result.loss)) throw NumericError("non-finite loss");

  auto& grads = result.grads;
  grads.resize(net.params.size());
  for (std::size_t p = 0; p < net.params.size(); ++p) grads[p].assign(net.params[p].size(), Real(0));
  const auto& P = net.params;
  std::vector<Real> cols;

  // head
  {
    double db = 0.0;
    for (Real v : dout) db += v;
    grads[L.head() + 1][0] = static_cast<Real>(db);
  }
  std::vector<Real> dd;
  deconv_backward(tape.head_in, n, 2 * L.ch[1], 1, geometry<Real>(cfg, 1), P[L.head()].values.data(), dout,
                  grads[L.head()].data(), dd, cols);

  const int D = cfg.depth;
  std::vector<std::vector<Real>> dact(static_cast<std::size_t>(D) + 1);
  for (int i = 2; i <= D + 1; ++i) {
    // dd is the gradient of concat(r_i, act[i-1]) (i <= D), or of act[D] itself.
    if (i == D + 1) {
      dact[D] = std::move(dd);
      break;
    }
    const int lvl = i - 1;
    const int c = L.ch[lvl];
    const std::size_t hw_l = geometry<Real>(cfg, i).big_hw();
    std::vector<Real> dr(static_cast<std::size_t>(n) * c * hw_l);
    dact[lvl].assign(static_cast<std::size_t>(n) * c * hw_l, Real(0));
    for (int s = 0; s < n; ++s) {
      std::copy_n(dd.begin() + static_cast<std::ptrdiff_t>(s * 2 * c * hw_l), c * hw_l,
                  dr.begin() + static_cast<std::ptrdiff_t>(s * c * hw_l));
      std::copy_n(dd.begin() + static_cast<std::ptrdiff_t>((s * 2 + 1) * c * hw_l), c * hw_l,
                  dact[lvl].begin() + static_cast<std::ptrdiff_t>(s * c * hw_l));
    }
    // decoder stage i produced r_i
    if (!tape.dec_drop[i].empty()) {
      for (std::size_t j = 0; j < dr.size(); ++j) dr[j] *= tape.dec_drop[i][j];
    }
    for (std::size_t j = 0; j < dr.size(); ++j) {
      if (!(tape.dec_pre[i][j] > 0)) dr[j] = Real(0);
    }
    bn_backward(dr, n, c, hw_l, P[L.dec(i) + 1].values.data(), tape.dec_bn[i], grads[L.dec(i) + 1].data(),
                grads[L.dec(i) + 2].data());
    const Geometry g = geometry<Real>(cfg, i);
    deconv_backward(tape.dec_in[i], n, L.dec_in(i), c, g, P[L.dec(i)].values.data(), dr, grads[L.dec(i)].data(),
                    dd, cols);
  }

  const Real slope = static_cast<Real>(cfg.leaky_slope);
  for (int i = D; i >= 1; --i) {
    std::vector<Real>& da = dact[i];
    for (std::size_t j = 0; j < da.size(); ++j) {
      if (!(tape.enc_pre[i][j] > 0)) da[j] *= slope;
    }
    const Geometry g = geometry<Real>(cfg, i);
    bn_backward(da, n, L.ch[i], g.small_hw(), P[L.enc(i) + 1].values.data(), tape.enc_bn[i],
                grads[L.enc(i) + 1].data(), grads[L.enc(i) + 2].data());
    std::vector<Real> din;
    conv_backward(tape.act[i - 1], n, L.ch[i - 1], L.ch[i], g, P[L.enc(i)].values.data(), da,
                  grads[L.enc(i)].data(), i > 1 ? &din : nullptr, cols);
    if (i > 1) {
      for (std::size_t j = 0; j < din.size(); ++j) dact[i - 1][j] += din[j];
    }
  }
  return result;
}

template <typename Real>
void update_running_stats(BasicMaskNet<Real>& net, const BatchNormStats& stats) {
  const double m = net.config().bn_momentum;
  for (std::size_t b = 0; b < stats.mean.size(); ++b) {
    auto& rm = net.buffers[2 * b].values;
    auto& rv = net.buffers[2 * b + 1].values;
    if (stats.mean[b].size() != rm.size()) throw ShapeError("batch-norm statistics do not match the network");
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = static_cast<Real>(m * rm[c] + (1.0 - m) * stats.mean[b][c]);
      rv[c] = static_cast<Real>(m * rv[c] + (1.0 - m) * stats.var[b][c]);
    }
  }
}

template class BasicMaskNet<float>;
template class BasicMaskNet<double>;
template BasicMaskNet<double> BasicMaskNet<float>::cast<double>() const;
template BasicMaskNet<float> BasicMaskNet<double>::cast<float>() const;
template BasicMaskNet<float> BasicMaskNet<float>::cast<float>() const;
template BasicMaskNet<double> BasicMaskNet<double>::cast<double>() const;
template std::vector<std::vector<float>> forward(const BasicMaskNet<float>&, std::span<const MagWindow>, NetMode,
                                                 std::uint64_t);
template std::vector<std::vector<double>> forward(const BasicMaskNet<double>&, std::span<const MagWindow>,
                                                  NetMode, std::uint64_t);
template LossResult<float> l1_loss(const BasicMaskNet<float>&, std::span<const TrainingExample>, std::uint64_t);
template LossResult<double> l1_loss(const BasicMaskNet<double>&, std::span<const TrainingExample>, std::uint64_t);
template void update_running_stats(BasicMaskNet<float>&, const BatchNormStats&);
template void update_running_stats(BasicMaskNet<double>&, const BatchNormStats&);

}  // namespace hitlsep
