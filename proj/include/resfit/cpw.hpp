#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace resfit {

// Coplanar waveguide cross-section on a thick substrate, zero metal
// thickness. tan_delta is carried for record-keeping; the lossless line
// model below does not consume it.
struct CpwGeometry {
    double center_width_m;
    double gap_m;
    double substrate_eps_r;
    double tan_delta = 0.0;
};

// Distributed line constants of the geometric (magnetic) inductance model.
// Invariants: z0 == sqrt(L/C) and eps_eff in [1, substrate_eps_r].
struct LineParams {
    double l_per_len;   // H/m, geometric inductance
    double c_per_len;   // F/m
    double z0_ohm;      // characteristic impedance
    double eps_eff;     // effective permittivity
};

// One tone's kinetic-inductance extraction. freq_ratio = f_meas/f_model
// and equals sqrt(l_geom/(l_geom + l_ki)) by construction.
struct KiResult {
    double l_ki;        // H/m, >= 0
    double freq_ratio;  // in (0, 1]
    double f_model_hz;
    double f_meas_hz;
};

// Single shared kinetic inductance fitted across a device's tones.
struct DeviceKiFit {
    double l_ki;         // H/m
    double rms_hz;       // rms of per-tone frequency residuals
    std::size_t n_tones;
};

// Complete elliptic integral of the first kind, modulus k in [0, 1),
// via the arithmetic-geometric mean; relative accuracy ~1e-15.
[[nodiscard]] double elliptic_k(double k);

// Conformal-mapping line constants: k = w/(w + 2s), eps_eff = (eps_r+1)/2,
// C = 4 eps0 eps_eff K(k)/K(k'), L = mu0 K(k')/(4 K(k)).
[[nodiscard]] LineParams line_params(const CpwGeometry& geom);

// Quarter-wave resonance of a shorted line section with optional kinetic
// inductance per length added to the geometric inductance.
[[nodiscard]] double quarter_wave_freq_hz(const LineParams& line, double length_m,
                                          double l_ki = 0.0);

// Length whose quarter-wave resonance (at l_ki = 0) equals f0_hz.
[[nodiscard]] double quarter_wave_length_m(const LineParams& line, double f0_hz);

// Kinetic inductance from the measured/modeled frequency ratio:
// l_ki = l_geom ((f_model/f_meas)^2 - 1). f_meas above f_model would imply
// negative inductance and raises data_error.
[[nodiscard]] KiResult extract_lki(double f_meas_hz, double f_model_hz, double l_geom);

// Single l_ki minimizing the total squared frequency error over
// (f_meas, f_model) pairs, bounded search on [0, 100 l_geom].
[[nodiscard]] DeviceKiFit fit_device_lki(
    const std::vector<std::pair<double, double>>& meas_model_hz, double l_geom);

} // namespace resfit
