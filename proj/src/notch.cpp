#include "resfit/notch.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "resfit/errors.hpp"

namespace resfit {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kLosslessSlack = 1e-9;

bool all_finite(const NotchParams& p) {
    return std::isfinite(p.f0_hz) && std::isfinite(p.q_total) &&
           std::isfinite(p.q_c) && std::isfinite(p.delta_f_hz) &&
           std::isfinite(p.phi0_rad) && std::isfinite(p.delay_s) &&
           std::isfinite(p.amp);
}

} // namespace

NotchParams::NotchParams(double f0, double q, double qc, double delta, double phi0,
                         double delay, double amplitude)
    : f0_hz(f0), q_total(q), q_c(qc), delta_f_hz(delta), phi0_rad(phi0),
      delay_s(delay), amp(amplitude) {
    if (!all_finite(*this)) {
        throw data_error("NotchParams: all parameters must be finite");
    }
    if (!(f0_hz > 0.0)) {
        throw data_error("NotchParams: f0 must be positive");
    }
    if (!(q_total > 0.0) || !(q_c > 0.0)) {
        throw data_error("NotchParams: quality factors must be positive");
    }
    if (q_total > q_c * (1.0 + kLosslessSlack)) {
        throw data_error("NotchParams: q_total must not exceed q_c "
                         "(internal losses cannot be negative)");
    }
    if (!(amp > 0.0)) {
        throw data_error("NotchParams: amplitude must be positive");
    }
}

std::complex<double> resonance_factor(double f_hz, double f0_hz, double q_total,
                                      double q_c, double delta_f_hz) {
    const double g = q_total / q_c;
    const double a = 2.0 * q_total * delta_f_hz / f0_hz;
    const double u = 2.0 * q_total * (f_hz - f0_hz) / f0_hz;
    const std::complex<double> num(1.0, a);
    const std::complex<double> den(1.0, u);
    return 1.0 - g * num / den;
}

std::complex<double> s21_at(const NotchParams& p, double f_hz) {
    const std::complex<double> env =
        p.amp * std::polar(1.0, p.phi0_rad - kTwoPi * f_hz * p.delay_s);
    return env * resonance_factor(f_hz, p.f0_hz, p.q_total, p.q_c, p.delta_f_hz);
}

double phase_at(const NotchParams& p, double f_hz) {
    return std::arg(resonance_factor(f_hz, p.f0_hz, p.q_total, p.q_c, p.delta_f_hz)) +
           p.phi0_rad;
}

GaussianStream::GaussianStream(std::uint64_t seed) : eng_(seed) {}

double GaussianStream::next() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    // 53-bit uniforms; u1 in (0, 1] keeps the log finite.
    const double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = kTwoPi * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
}

Trace synth_trace(const NotchParams& p, const Band& band, std::size_t n_points,
                  const NoiseSpec& noise, TraceMeta meta) {
    if (n_points < 2) {
        throw data_error("synth_trace: needs at least 2 grid points");
    }
    if (!(noise.sigma >= 0.0) || !std::isfinite(noise.sigma)) {
        throw data_error("synth_trace: noise sigma must be finite and >= 0");
    }
    const double lo = band.lo_hz();
    const double step = band.span_hz / static_cast<double>(n_points - 1);
    std::vector<double> freq(n_points);
    std::vector<std::complex<double>> s21(n_points);
    GaussianStream gauss(noise.seed);
    for (std::size_t i = 0; i < n_points; ++i) {
        freq[i] = lo + static_cast<double>(i) * step;
        std::complex<double> v = s21_at(p, freq[i]);
        if (noise.sigma > 0.0) {
            const double re = noise.sigma * gauss.next();
            const double im = noise.sigma * gauss.next();
            v += std::complex<double>(re, im);
        }
        s21[i] = v;
    }
    return Trace(std::move(freq), std::move(s21), std::move(meta));
}

double qc_from_linewidth(const NotchParams& lossless) {
    if (std::abs(lossless.q_total / lossless.q_c - 1.0) > kLosslessSlack) {
        throw data_error("qc_from_linewidth: parameters must be lossless "
                         "(q_total == q_c)");
    }
    const double f0 = lossless.f0_hz;
    const double q = lossless.q_total;

    // Dip response of the resonance factor alone; exact Lorentzian in f.
    const auto dip = [&](double f) {
        const std::complex<double> one_minus =
            1.0 - resonance_factor(f, f0, lossless.q_total, lossless.q_c,
                                   lossless.delta_f_hz);
        return std::norm(one_minus);
    };

    double span = 16.0 * f0 / q;
    double prev_fwhm = 0.0;
    std::size_t half_n = 10; // grid has 2*half_n + 1 points, center at f0
    for (int level = 0; level < 40; ++level) {
        const double step = span / static_cast<double>(2 * half_n);
        const double peak = dip(f0);
        const double half = 0.5 * peak;

        // Walk outward from the center to bracket the half-maximum crossing
        // on each side, then interpolate linearly.
        double crossing[2] = {0.0, 0.0};
        bool found = true;
        for (int side = 0; side < 2; ++side) {
            const double dir = side == 0 ? -1.0 : 1.0;
            double prev_f = f0;
            double prev_d = peak;
            bool hit = false;
            for (std::size_t j = 1; j <= half_n; ++j) {
                const double f = f0 + dir * static_cast<double>(j) * step;
                const double d = dip(f);
                if (d < half) {
                    crossing[side] =
                        prev_f + (half - prev_d) * (f - prev_f) / (d - prev_d);
                    hit = true;
                    break;
                }
                prev_f = f;
                prev_d = d;
            }
            if (!hit) found = false;
        }

        if (!found) {
            span *= 2.0; // crossing escaped the window; widen and retry
            continue;
        }
        const double fwhm = crossing[1] - crossing[0];
        if (prev_fwhm > 0.0 && std::abs(fwhm - prev_fwhm) <= 1e-4 * fwhm) {
            return f0 / fwhm;
        }
        prev_fwhm = fwhm;
        half_n *= 2;
    }
    throw numerical_error("qc_from_linewidth: refinement did not converge "
                          "after 40 levels");
}

} // namespace resfit
