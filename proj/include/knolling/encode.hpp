#pragma once

#include <span>
#include <vector>

namespace knolling {

// Sinusoidal feature lift: each input scalar expands to
// [p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(F-1) pi p), cos(2^(F-1) pi p)].
struct LiftConfig {
    int num_frequencies = 5;
    bool include_input = true;
};

constexpr int lift_dim(int input_dim, const LiftConfig& cfg = {}) {
    return input_dim * ((cfg.include_input ? 1 : 0) + 2 * cfg.num_frequencies);
}

std::vector<double> sinusoidal_lift(std::span<const double> values, const LiftConfig& cfg = {});

// Classic alternating sine/cosine slot encoding with the 10000^(2i/d)
// wavelength progression.
std::vector<double> index_encoding(int slot, int d_model);

}  // namespace knolling
