#pragma once

// Hand-looped framewise SDR used as an independent reference.

#include <cmath>
#include <optional>
#include <vector>

namespace hitlsep::test {

inline std::vector<std::optional<double>> naive_sdr(const std::vector<double>& ref, const std::vector<double>& est,
                                                    int rate, double frame_s = 1.0) {
  const long frame = std::lround(frame_s * rate);
  const long n = static_cast<long>(ref.size());
  std::vector<std::optional<double>> out;
  for (long start = 0; start < n; start += frame) {
    const long stop = start + frame < n ? start + frame : n;
    if ((stop - start) * 2 < frame) break;
    double signal = 0, noise = 0;
    for (long i = start; i < stop; i++) {
      signal += ref[i] * ref[i];
      noise += (ref[i] - est[i]) * (ref[i] - est[i]);
    }
    if (signal < 1e-10) {
      out.push_back(std::nullopt);
      continue;
    }
    double db = noise == 0 ? 100.0 : 10.0 * std::log10(signal / noise);
    if (db > 100.0) db = 100.0;
    if (db < -100.0) db = -100.0;
    out.push_back(db);
  }
  return out;
}

}  // namespace hitlsep::test
