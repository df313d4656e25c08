#include "oocmice/draws.hpp"

#include <cmath>
#include <string>

#include "oocmice/error.hpp"

namespace oocmice {

double residual_sigma(std::span<const double> observed, std::span<const double> fitted) {
  if (observed.size() != fitted.size()) throw Error("draws", ErrorCode::Contract, "residual inputs differ in length");
  if (observed.empty()) return 0.0;
  double ss = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double r = observed[i] - fitted[i];
    ss += r * r;
  }
  return std::sqrt(ss / static_cast<double>(observed.size()));
}

std::vector<double> draw_continuous(std::span<const double> predictions, double sigma,
                                    std::span<const DrawKey> keys, bool round_to_int) {
  if (!std::isfinite(sigma) || sigma < 0.0) {
    throw Error("draws", ErrorCode::Numeric, "residual sigma must be finite and non-negative");
  }
  if (predictions.size() != keys.size()) throw Error("draws", ErrorCode::Contract, "one key per prediction required");
  std::vector<double> out(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    double v = predictions[i];
    if (sigma > 0.0) {
      KeyedStream stream(Stream::Draw, keys[i]);
      v += sigma * stream.normal();
    }
    out[i] = round_to_int ? std::nearbyint(v) : v;
  }
  return out;
}

std::size_t select_category(std::span<const double> probs, double u) {
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (probs[k] > 0.0) last_positive = k;
    const double next = cumulative + probs[k];
    if (cumulative < u && u <= next) return k;
    cumulative = next;
  }
  return last_positive;
}

std::vector<std::int64_t> draw_categorical(std::span<const double> probs, std::size_t classes,
                                           std::span<const DrawKey> keys) {
  if (classes == 0 || probs.size() != classes * keys.size()) {
    throw Error("draws", ErrorCode::Contract, "probability matrix does not match the key count");
  }
  std::vector<std::int64_t> out(keys.size());
  std::vector<double> row(classes);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    double sum = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = probs[i * classes + k];
      if (!(p >= 0.0)) {
        throw Error("draws", ErrorCode::Contract, "negative or NaN class probability in row " + std::to_string(i));
      }
      sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-9) {
      throw Error("draws", ErrorCode::Contract, "class probabilities in row " + std::to_string(i) + " sum to " +
                                                    std::to_string(sum));
    }
    for (std::size_t k = 0; k < classes; ++k) row[k] = probs[i * classes + k] / sum;
    KeyedStream stream(Stream::Draw, keys[i]);
    out[i] = static_cast<std::int64_t>(select_category(row, stream.uniform()));
  }
  return out;
}

}  // namespace oocmice
