#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "oocmice/rng.hpp"

namespace oocmice {

/// Root mean squared residual with the 1/n convention.
double residual_sigma(std::span<const double> observed, std::span<const double> fitted);

/// prediction + N(0, sigma^2) noise from each cell's own stream. With
/// round_to_int the noisy value is rounded to the nearest integer.
std::vector<double> draw_continuous(std::span<const double> predictions, double sigma,
                                    std::span<const DrawKey> keys, bool round_to_int = false);

/// Inverse-CDF selection: the class k with F(k-1) < u <= F(k), F(0) = 0.
/// Rounding slack past the last cumulative value falls to the last class
/// with positive probability.
std::size_t select_category(std::span<const double> probs, double u);

/// One class code per row of the row-major (rows x classes) probability
/// matrix. Rows must be non-negative and sum to 1 within 1e-9.
std::vector<std::int64_t> draw_categorical(std::span<const double> probs, std::size_t classes,
                                           std::span<const DrawKey> keys);

}  // namespace oocmice
