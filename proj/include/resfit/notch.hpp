#pragma once

#include <complex>
#include <cstdint>
#include <cstddef>
#include <random>

#include "resfit/trace.hpp"

namespace resfit {

// Notch (hanger) resonator response parameters.
//
//   S21(f) = amp * exp(i(phi0 - 2 pi f delay))
//            * [1 - (Q/Q_C)(1 + 2i Q delta_f/f0) / (1 + 2i Q (f - f0)/f0)]
//
// delta_f is the impedance-mismatch asymmetry detuning in Hz (the angular
// and ordinary frequency ratios coincide). Synthesis requires a physical
// parameter set: q_total <= q_c up to 1e-9 relative slack, positive f0 and
// amplitude, all fields finite; the constructor enforces this.
class NotchParams {
public:
    NotchParams(double f0_hz, double q_total, double q_c, double delta_f_hz = 0.0,
                double phi0_rad = 0.0, double delay_s = 0.0, double amp = 1.0);

    double f0_hz;
    double q_total;
    double q_c;
    double delta_f_hz;
    double phi0_rad;
    double delay_s;
    double amp;
};

// Additive complex Gaussian noise: sigma per quadrature, deterministic for
// a fixed seed (same seed, same sequence, bit for bit).
struct NoiseSpec {
    double sigma = 0.0;
    std::uint64_t seed = 0;
};

// Bracketed resonance factor of the model, without amp/phase/delay.
[[nodiscard]] std::complex<double> resonance_factor(double f_hz, double f0_hz,
                                                    double q_total, double q_c,
                                                    double delta_f_hz);

// Full model evaluation at one frequency.
[[nodiscard]] std::complex<double> s21_at(const NotchParams& p, double f_hz);

// Phase model: arg of the bracketed factor plus phi0. Delay is excluded by
// definition; amp > 0 cannot affect it.
[[nodiscard]] double phase_at(const NotchParams& p, double f_hz);

// Uniform-grid synthetic trace over the band with optional additive noise.
// The grid includes both band edges; n_points must satisfy the Trace
// minimum-length invariant.
[[nodiscard]] Trace synth_trace(const NotchParams& p, const Band& band,
                                std::size_t n_points, const NoiseSpec& noise = {},
                                TraceMeta meta = {});

// Coupling quality factor extracted from the dip linewidth of a lossless
// parameter set (q_total == q_c up to 1e-9 relative). Evaluates
// |1 - resonance_factor|^2, an exact Lorentzian with FWHM = f0/q_total, on
// uniform grids refined by factor 2 until two successive FWHM estimates
// agree to relative 1e-4; returns f0/FWHM. Amplitude, global phase, and
// delay have no effect on the dip width and are ignored. Throws
// numerical_error if 40 refinement levels do not converge.
[[nodiscard]] double qc_from_linewidth(const NotchParams& lossless);

// Deterministic standard-normal stream used for synthesis noise. Built on
// std::mt19937_64 (sequence pinned by the standard) with an explicit
// Box-Muller transform, since std::normal_distribution's algorithm is
// implementation-defined. Exposed so tests can reproduce sequences.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed);
    double next();

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace resfit
