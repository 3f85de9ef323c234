#pragma once

#include <array>
#include <optional>
#include <utility>

#include "resfit/delay.hpp"
#include "resfit/notch.hpp"
#include "resfit/trace.hpp"

namespace resfit {

// Optional box bounds for one fit parameter.
struct ParamBounds {
    double lo;
    double hi;
};

// Damped least-squares configuration. Unset bounds get defaults derived
// from the data: f0 inside the trace range extended by one span, quality
// factors in [1, 1e12], detuning within 10 spans, phi0 within +-1e3 rad.
struct FitConfig {
    int max_iterations = 200;
    double relative_tolerance = 1e-10;
    double damping_init = 1e-3;
    std::optional<ParamBounds> f0_hz;
    std::optional<ParamBounds> q_total;
    std::optional<ParamBounds> q_c;
    std::optional<ParamBounds> delta_f_hz;
    std::optional<ParamBounds> phi0_rad;
};

// Phase-model fit result. Uncertainties are 1-sigma values from the
// residual-scaled inverse normal matrix, computed only for converged fits
// (NaN otherwise). q_i is present only when q_c > q_total; its sigma
// propagates the q/q_c sigmas in quadrature (correlations ignored).
// converged requires both the step criterion and a fitted f0 inside the
// fitted trace's frequency range; when the iteration cap is hit the best
// parameters so far are returned with converged = false.
struct ResonatorFit {
    double f0_hz = 0.0;
    double f0_sigma_hz = 0.0;
    double q_total = 0.0;
    double q_total_sigma = 0.0;
    double q_c = 0.0;
    double q_c_sigma = 0.0;
    double delta_f_hz = 0.0;
    double delta_f_sigma_hz = 0.0;
    double phi0_rad = 0.0;
    double phi0_sigma_rad = 0.0;
    std::optional<double> q_i;
    std::optional<double> q_i_sigma;
    double rms_residual_rad = 0.0;
    int n_iterations = 0;
    bool converged = false;
    Band fit_band{1.0, 1.0};
};

struct PipelineResult {
    DelayFit delay;
    ResonatorFit fit;
    double extrapolation_rms_rad = 0.0; // fitted model vs corrected wide scan
};

// Phase of the resonance factor and its gradient with respect to
// (f0, q_total, q_c, delta_f, phi0), all in natural units. Exposed so the
// implemented Jacobian can be checked against finite differences.
struct PhaseGradient {
    double phase;
    std::array<double, 5> d;
};
[[nodiscard]] PhaseGradient phase_model_gradient(double f_hz, double f0_hz,
                                                 double q_total, double q_c,
                                                 double delta_f_hz, double phi0_rad);

// Phase of the resonance factor plus phi0 along a frequency grid, with
// branch continuity tracked sample to sample — the curve fit_phase
// compares against unwrapped data phase.
[[nodiscard]] std::vector<double> phase_model_curve(
    const std::vector<double>& freq_hz, double f0_hz, double q_total,
    double q_c, double delta_f_hz, double phi0_rad);

// Starting point from a delay-corrected narrow scan: f0 at the magnitude
// minimum, q_total from the FWHM of the inverted |S21|^2 dip, q_c from the
// dip depth, delta_f = 0, phi0 as a wrap-safe median of the tail phase.
// Requires a dip deeper than 3x the noise-floor estimate (median |S21|
// minus minimum vs a MAD estimate from successive differences); throws
// data_error otherwise.
[[nodiscard]] NotchParams init_guess(const Trace& narrow_corrected);

// Damped least squares on unwrapped phase over (f0, q_total, q_c, delta_f,
// phi0); quality factors are log-scaled internally. The data trace must
// already be delay-corrected. Throws numerical_error if the normal matrix
// is rank-deficient at a converged solution.
[[nodiscard]] ResonatorFit fit_phase(const Trace& narrow_corrected,
                                     const NotchParams& guess,
                                     const FitConfig& config = {});

// Internal quality factor 1/(1/q_total - 1/q_c); q_total >= q_c is a
// domain error (infinite or negative Qi).
[[nodiscard]] double qi_from(double q_total, double q_c);

struct ValueSigma {
    double value;
    double sigma;
};
[[nodiscard]] ValueSigma qi_from(double q_total, double q_total_sigma, double q_c,
                                 double q_c_sigma);

// Full protocol: delay fit on the wide scan (excluding 3x the narrow
// span), correction, initial guess, phase fit, and an extrapolation check
// of the fitted model against the corrected wide scan. Both traces must
// carry the same device_id and resonator_index.
[[nodiscard]] PipelineResult fit_pipeline(const Trace& wide, const Trace& narrow,
                                          const FitConfig& config = {});

} // namespace resfit
