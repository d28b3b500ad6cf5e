#include "knolling/encode.hpp"

#include <cmath>
#include <stdexcept>

#include "knolling/core.hpp"
#include "knolling/rng.hpp"

namespace knolling {

std::vector<double> sinusoidal_lift(std::span<const double> values, const LiftConfig& cfg) {
    if (cfg.num_frequencies < 1) throw std::invalid_argument("num_frequencies must be >= 1");
    std::vector<double> out;
    out.reserve(values.size() * ((cfg.include_input ? 1 : 0) + 2 * cfg.num_frequencies));
    for (double p : values) {
        if (!std::isfinite(p)) throw std::invalid_argument("sinusoidal_lift: non-finite input");
        if (cfg.include_input) out.push_back(p);
        double freq = kPi;
        for (int k = 0; k < cfg.num_frequencies; ++k) {
            out.push_back(std::sin(freq * p));
            out.push_back(std::cos(freq * p));
            freq *= 2.0;
        }
    }
    return out;
}

std::vector<double> index_encoding(int slot, int d_model) {
    if (slot < 0 || slot >= kMaxObjects)
        throw std::invalid_argument("index_encoding: slot out of range");
    if (d_model < 1) throw std::invalid_argument("index_encoding: bad d_model");
    std::vector<double> out(d_model);
    for (int i = 0; i < d_model; i += 2) {
        double wavelength = std::pow(10000.0, static_cast<double>(i) / d_model);
        out[i] = std::sin(slot / wavelength);
        if (i + 1 < d_model) out[i + 1] = std::cos(slot / wavelength);
    }
    return out;
}

}  // namespace knolling
