#pragma once

#include "resfit/trace.hpp"

namespace resfit {

struct DelayFitOptions {
    // Polynomial order of the phase background. 1 fits phase = a + b f
    // (the default protocol); 2 adds a curvature term as an extension, with
    // the delay still taken from the linear coefficient.
    int background_order = 1;
};

// Electrical-delay estimate from a wide scan with the resonance excluded.
struct DelayFit {
    double tau_s;                 // -slope / (2 pi)
    double phase_intercept_rad;   // fitted phase extrapolated to f = 0
    Band excluded_band;           // exactly 3x the narrow span, same center
    double rms_residual_rad;      // over retained samples
};

// Fits the linear phase background of the wide scan: unwraps the full
// scan's phase, drops samples inside a band 3x the narrow span centered on
// the narrow center, and least-squares fits the retained phase against
// (centered) frequency. Preconditions: wide scan spans at least 5x the
// narrow span; at least 16 samples survive the exclusion. Throws
// numerical_error when the retained unwrapped phase reverses against its
// overall trend by more than pi/2 between neighboring retained samples.
[[nodiscard]] DelayFit fit_delay(const Trace& wide, const Band& narrow_band,
                                 const DelayFitOptions& options = {});

// Removes the fitted delay: multiplies every sample by exp(+2 pi i f tau).
// Magnitudes are preserved sample by sample.
[[nodiscard]] Trace correct(const Trace& trace, const DelayFit& fit);

} // namespace resfit
