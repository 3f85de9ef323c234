#include "resfit/fit.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "resfit/detail/levmar.hpp"
#include "resfit/errors.hpp"

namespace resfit {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double median_inplace(std::vector<double>& v) {
    const std::size_t n = v.size();
    const std::size_t mid = n / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double m = v[mid];
    if (n % 2 == 0) {
        const auto lower = std::max_element(
            v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
        m = 0.5 * (m + *lower);
    }
    return m;
}

// Wrap-safe median angle: median of deviations around the circular mean.
double median_angle(const std::vector<double>& angles) {
    double sx = 0.0;
    double sy = 0.0;
    for (double a : angles) {
        sx += std::cos(a);
        sy += std::sin(a);
    }
    const double mean_dir = std::atan2(sy, sx);
    std::vector<double> dev(angles.size());
    for (std::size_t i = 0; i < angles.size(); ++i) {
        dev[i] = std::remainder(angles[i] - mean_dir, kTwoPi);
    }
    return mean_dir + median_inplace(dev);
}

// Tracked (continuity-unwrapped) model phase along a grid; the model is
// evaluated left to right and each sample stays within pi of its neighbor.
void model_phase_tracked(const std::vector<double>& freq, double f0, double q,
                         double qc, double delta, double phi0,
                         std::vector<double>& out) {
    out.resize(freq.size());
    double prev_raw = 0.0;
    double prev_tracked = 0.0;
    for (std::size_t i = 0; i < freq.size(); ++i) {
        const double raw =
            std::arg(resonance_factor(freq[i], f0, q, qc, delta));
        if (i == 0) {
            prev_tracked = raw;
        } else {
            prev_tracked += std::remainder(raw - prev_raw, kTwoPi);
        }
        prev_raw = raw;
        out[i] = prev_tracked + phi0;
    }
}

struct InternalBounds {
    std::vector<double> lo;
    std::vector<double> hi;
};

InternalBounds derive_bounds(const Trace& trace, const FitConfig& cfg) {
    const double span = trace.span_hz();
    const double fmin = trace.f_min_hz();
    const double fmax = trace.f_max_hz();
    const auto pick = [](const std::optional<ParamBounds>& user, double dlo,
                         double dhi) {
        return user ? std::pair<double, double>{user->lo, user->hi}
                    : std::pair<double, double>{dlo, dhi};
    };
    const auto [f0_lo, f0_hi] = pick(cfg.f0_hz, fmin - span, fmax + span);
    const auto [q_lo, q_hi] = pick(cfg.q_total, 1.0, 1e12);
    const auto [qc_lo, qc_hi] = pick(cfg.q_c, 1.0, 1e12);
    const auto [d_lo, d_hi] = pick(cfg.delta_f_hz, -10.0 * span, 10.0 * span);
    const auto [p_lo, p_hi] = pick(cfg.phi0_rad, -1e3, 1e3);
    InternalBounds b;
    b.lo = {f0_lo, std::log(q_lo), std::log(qc_lo), d_lo, p_lo};
    b.hi = {f0_hi, std::log(q_hi), std::log(qc_hi), d_hi, p_hi};
    return b;
}

} // namespace

PhaseGradient phase_model_gradient(double f_hz, double f0_hz, double q_total,
                                   double q_c, double delta_f_hz, double phi0_rad) {
    const double g = q_total / q_c;
    const double a = 2.0 * q_total * delta_f_hz / f0_hz;
    const double u = 2.0 * q_total * (f_hz - f0_hz) / f0_hz;
    const double den = 1.0 + u * u;

    const double re = 1.0 - g * (1.0 + a * u) / den;
    const double im = g * (u - a) / den;
    const double norm2 = re * re + im * im;

    // d(arg)/dx = (re dIm - im dRe)/|B|^2 for each intermediate x.
    const double dre_dg = -(1.0 + a * u) / den;
    const double dim_dg = (u - a) / den;
    const double dre_da = -g * u / den;
    const double dim_da = -g / den;
    const double dre_du = -g * (a - 2.0 * u - a * u * u) / (den * den);
    const double dim_du = g * (1.0 - u * u + 2.0 * a * u) / (den * den);

    const double p_g = (re * dim_dg - im * dre_dg) / norm2;
    const double p_a = (re * dim_da - im * dre_da) / norm2;
    const double p_u = (re * dim_du - im * dre_du) / norm2;

    // Chain rule to the natural parameters.
    const double da_df0 = -a / f0_hz;
    const double du_df0 = -2.0 * q_total * f_hz / (f0_hz * f0_hz);
    const double da_dq = a / q_total;
    const double du_dq = u / q_total;
    const double dg_dq = 1.0 / q_c;
    const double dg_dqc = -g / q_c;
    const double da_ddelta = 2.0 * q_total / f0_hz;

    PhaseGradient out{};
    out.phase = std::atan2(im, re) + phi0_rad;
    out.d[0] = p_a * da_df0 + p_u * du_df0;                  // d/df0
    out.d[1] = p_g * dg_dq + p_a * da_dq + p_u * du_dq;      // d/dq
    out.d[2] = p_g * dg_dqc;                                 // d/dqc
    out.d[3] = p_a * da_ddelta;                              // d/ddelta
    out.d[4] = 1.0;                                          // d/dphi0
    return out;
}

std::vector<double> phase_model_curve(const std::vector<double>& freq_hz,
                                      double f0_hz, double q_total, double q_c,
                                      double delta_f_hz, double phi0_rad) {
    std::vector<double> out;
    model_phase_tracked(freq_hz, f0_hz, q_total, q_c, delta_f_hz, phi0_rad, out);
    return out;
}

NotchParams init_guess(const Trace& narrow_corrected) {
    const auto& f = narrow_corrected.freq();
    const auto& s = narrow_corrected.s21();
    const std::size_t n = narrow_corrected.size();

    std::vector<double> mag(n);
    for (std::size_t i = 0; i < n; ++i) mag[i] = std::abs(s[i]);

    std::size_t i_min = 0;
    double min_mag = mag[0];
    double max_mag = mag[0];
    for (std::size_t i = 1; i < n; ++i) {
        if (mag[i] < min_mag) {
            min_mag = mag[i];
            i_min = i;
        }
        max_mag = std::max(max_mag, mag[i]);
    }

    // Noise floor from successive differences (robust to the dip shape),
    // dip depth from the median baseline.
    std::vector<double> diffs(n - 1);
    for (std::size_t i = 1; i < n; ++i) diffs[i - 1] = std::abs(mag[i] - mag[i - 1]);
    const double mad = median_inplace(diffs);
    const double noise_sigma = mad / (0.6745 * std::numbers::sqrt2);
    std::vector<double> mags_copy = mag;
    const double median_mag = median_inplace(mags_copy);
    const double depth = median_mag - min_mag;
    if (!(depth > 3.0 * noise_sigma)) {
        throw data_error("init_guess: no dip found above the noise floor "
                         "(depth " + std::to_string(depth) + ", noise " +
                         std::to_string(noise_sigma) + ")");
    }

    const double f0 = f[i_min];

    // FWHM of the inverted power dip, walking outward from the minimum.
    const double peak = max_mag * max_mag - min_mag * min_mag;
    const double half = 0.5 * peak;
    double left = f[0];
    for (std::size_t j = i_min; j-- > 0;) {
        const double d = max_mag * max_mag - mag[j] * mag[j];
        if (d < half) {
            const double d_in = max_mag * max_mag - mag[j + 1] * mag[j + 1];
            left = f[j + 1] + (half - d_in) * (f[j] - f[j + 1]) / (d - d_in);
            break;
        }
    }
    double right = f[n - 1];
    for (std::size_t j = i_min + 1; j < n; ++j) {
        const double d = max_mag * max_mag - mag[j] * mag[j];
        if (d < half) {
            const double d_in = max_mag * max_mag - mag[j - 1] * mag[j - 1];
            right = f[j - 1] + (half - d_in) * (f[j] - f[j - 1]) / (d - d_in);
            break;
        }
    }
    const double min_step = (f[n - 1] - f[0]) / static_cast<double>(n - 1);
    const double fwhm = std::max(right - left, min_step);
    const double q_guess = f0 / fwhm;
    const double qc_guess = q_guess / (1.0 - min_mag / max_mag);

    // Tail phase: wrap-safe median over the outer tenth on each side.
    const std::size_t k = std::max<std::size_t>(3, n / 10);
    std::vector<double> tails;
    tails.reserve(2 * k);
    for (std::size_t i = 0; i < k; ++i) tails.push_back(std::arg(s[i]));
    for (std::size_t i = n - k; i < n; ++i) tails.push_back(std::arg(s[i]));
    const double phi0_guess = median_angle(tails);

    return NotchParams(f0, q_guess, qc_guess, 0.0, phi0_guess, 0.0, max_mag);
}

ResonatorFit fit_phase(const Trace& narrow_corrected, const NotchParams& guess,
                       const FitConfig& config) {
    const auto& freq = narrow_corrected.freq();
    const std::size_t n = narrow_corrected.size();
    const std::vector<double> data_phase = unwrap_phase(narrow_corrected);

    std::vector<double> p = {guess.f0_hz, std::log(guess.q_total),
                             std::log(guess.q_c), guess.delta_f_hz,
                             guess.phi0_rad};

    // One-time 2 pi branch alignment between the unwrapped data phase and
    // the tracked model phase at the starting point.
    {
        std::vector<double> m;
        model_phase_tracked(freq, p[0], std::exp(p[1]), std::exp(p[2]), p[3], p[4], m);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += data_phase[i] - m[i];
        const double k2pi = std::round(acc / static_cast<double>(n) / kTwoPi);
        p[4] += kTwoPi * k2pi;
    }

    detail::LmOptions opt;
    opt.max_iterations = config.max_iterations;
    opt.relative_tolerance = config.relative_tolerance;
    opt.damping_init = config.damping_init;
    opt.scale = {guess.f0_hz, 1.0, 1.0, guess.f0_hz / guess.q_total, 1.0};
    auto bounds = derive_bounds(narrow_corrected, config);
    opt.lo = std::move(bounds.lo);
    opt.hi = std::move(bounds.hi);

    std::vector<double> model;
    const auto eval = [&](const std::vector<double>& params, std::vector<double>& r,
                          std::vector<double>& jac) {
        const double f0 = params[0];
        const double q = std::exp(params[1]);
        const double qc = std::exp(params[2]);
        const double delta = params[3];
        const double phi0 = params[4];
        model_phase_tracked(freq, f0, q, qc, delta, phi0, model);
        r.resize(n);
        jac.resize(n * 5);
        for (std::size_t i = 0; i < n; ++i) {
            r[i] = data_phase[i] - model[i];
            const PhaseGradient grad =
                phase_model_gradient(freq[i], f0, q, qc, delta, phi0);
            jac[i * 5 + 0] = grad.d[0];
            jac[i * 5 + 1] = grad.d[1] * q;   // internal log scaling
            jac[i * 5 + 2] = grad.d[2] * qc;
            jac[i * 5 + 3] = grad.d[3];
            jac[i * 5 + 4] = grad.d[4];
        }
    };

    const detail::LmResult lm = detail::lm_minimize(eval, std::move(p), opt);

    ResonatorFit fit;
    fit.f0_hz = lm.params[0];
    fit.q_total = std::exp(lm.params[1]);
    fit.q_c = std::exp(lm.params[2]);
    fit.delta_f_hz = lm.params[3];
    fit.phi0_rad = lm.params[4];
    fit.n_iterations = lm.n_iterations;
    fit.rms_residual_rad = std::sqrt(lm.ssr / static_cast<double>(n));
    fit.fit_band = narrow_corrected.band();
    fit.converged = lm.converged && fit.f0_hz >= narrow_corrected.f_min_hz() &&
                    fit.f0_hz <= narrow_corrected.f_max_hz();

    const double nan = std::numeric_limits<double>::quiet_NaN();
    fit.f0_sigma_hz = nan;
    fit.q_total_sigma = nan;
    fit.q_c_sigma = nan;
    fit.delta_f_sigma_hz = nan;
    fit.phi0_sigma_rad = nan;

    if (fit.converged) {
        // Residual-scaled covariance from the final undamped normal matrix.
        std::vector<double> n_mat(25, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = &lm.jacobian[i * 5];
            for (std::size_t a = 0; a < 5; ++a) {
                for (std::size_t b = a; b < 5; ++b) {
                    n_mat[a * 5 + b] += row[a] * row[b];
                }
            }
        }
        for (std::size_t a = 0; a < 5; ++a) {
            for (std::size_t b = 0; b < a; ++b) n_mat[a * 5 + b] = n_mat[b * 5 + a];
        }
        std::vector<double> cov;
        if (!detail::invert_spd(n_mat, 5, cov)) {
            throw numerical_error("fit_phase: normal matrix is rank-deficient "
                                  "at the solution");
        }
        const double dof = static_cast<double>(n) - 5.0;
        const double s2 = lm.ssr / dof;
        fit.f0_sigma_hz = std::sqrt(std::max(cov[0 * 5 + 0] * s2, 0.0));
        fit.q_total_sigma =
            fit.q_total * std::sqrt(std::max(cov[1 * 5 + 1] * s2, 0.0));
        fit.q_c_sigma = fit.q_c * std::sqrt(std::max(cov[2 * 5 + 2] * s2, 0.0));
        fit.delta_f_sigma_hz = std::sqrt(std::max(cov[3 * 5 + 3] * s2, 0.0));
        fit.phi0_sigma_rad = std::sqrt(std::max(cov[4 * 5 + 4] * s2, 0.0));
    }

    if (fit.q_c > fit.q_total) {
        fit.q_i = qi_from(fit.q_total, fit.q_c);
        if (fit.converged) {
            fit.q_i_sigma = qi_from(fit.q_total, fit.q_total_sigma, fit.q_c,
                                    fit.q_c_sigma)
                                .sigma;
        }
    }
    return fit;
}

double qi_from(double q_total, double q_c) {
    if (!(q_total > 0.0) || !(q_c > 0.0)) {
        throw data_error("qi_from: quality factors must be positive");
    }
    if (q_total >= q_c) {
        throw data_error("qi_from: q_total >= q_c implies infinite or negative "
                         "internal quality factor");
    }
    return 1.0 / (1.0 / q_total - 1.0 / q_c);
}

ValueSigma qi_from(double q_total, double q_total_sigma, double q_c,
                   double q_c_sigma) {
    const double qi = qi_from(q_total, q_c);
    const double t1 = qi * qi / (q_total * q_total) * q_total_sigma;
    const double t2 = qi * qi / (q_c * q_c) * q_c_sigma;
    return {qi, std::sqrt(t1 * t1 + t2 * t2)};
}

PipelineResult fit_pipeline(const Trace& wide, const Trace& narrow,
                            const FitConfig& config) {
    if (wide.meta().device_id != narrow.meta().device_id ||
        wide.meta().resonator_index != narrow.meta().resonator_index) {
        throw data_error("fit_pipeline: wide and narrow traces describe "
                         "different resonators");
    }
    const Band narrow_band = narrow.band();
    const DelayFit delay = fit_delay(wide, narrow_band);
    const Trace narrow_corr = correct(narrow, delay);
    const NotchParams guess = init_guess(narrow_corr);
    const ResonatorFit fit = fit_phase(narrow_corr, guess, config);

    // Extrapolation: fitted phase model against the corrected wide scan,
    // allowing a whole-2pi branch offset between the two unwraps.
    const Trace wide_corr = correct(wide, delay);
    const std::vector<double> data_phase = unwrap_phase(wide_corr);
    std::vector<double> model;
    model_phase_tracked(wide_corr.freq(), fit.f0_hz, fit.q_total, fit.q_c,
                        fit.delta_f_hz, fit.phi0_rad, model);
    std::vector<double> resid(wide_corr.size());
    for (std::size_t i = 0; i < wide_corr.size(); ++i) {
        resid[i] = data_phase[i] - model[i];
    }
    std::vector<double> resid_copy = resid;
    const double k2pi = std::round(median_inplace(resid_copy) / kTwoPi);
    double ssr = 0.0;
    for (double& r : resid) {
        r -= kTwoPi * k2pi;
        ssr += r * r;
    }

    PipelineResult out{delay, fit, 0.0};
    out.extrapolation_rms_rad =
        std::sqrt(ssr / static_cast<double>(wide_corr.size()));
    return out;
}

} // namespace resfit
