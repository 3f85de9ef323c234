#include "resfit/cpw.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "resfit/errors.hpp"

namespace resfit {

namespace {

constexpr double kMu0 = 1.25663706212e-6;        // H/m
constexpr double kEps0 = 8.8541878128e-12;       // F/m
constexpr double kGolden = 0.6180339887498949;   // (sqrt(5)-1)/2

double model_freq(double f_model, double l_geom, double l_ki) {
    return f_model * std::sqrt(l_geom / (l_geom + l_ki));
}

} // namespace

double elliptic_k(double k) {
    if (!std::isfinite(k) || k < 0.0 || k >= 1.0) {
        throw data_error("elliptic_k: modulus must lie in [0, 1), got " +
                         std::to_string(k));
    }
    double a = 1.0;
    double b = std::sqrt((1.0 - k) * (1.0 + k)); // complementary modulus
    for (int i = 0; i < 64; ++i) {
        if (std::abs(a - b) <= 1e-15 * a) {
            return std::numbers::pi / (2.0 * a);
        }
        const double an = 0.5 * (a + b);
        b = std::sqrt(a * b);
        a = an;
    }
    throw numerical_error("elliptic_k: AGM did not converge");
}

LineParams line_params(const CpwGeometry& geom) {
    if (!(geom.center_width_m > 0.0) || !(geom.gap_m > 0.0)) {
        throw data_error("line_params: center width and gap must be positive");
    }
    if (!(geom.substrate_eps_r >= 1.0)) {
        throw data_error("line_params: substrate permittivity must be >= 1");
    }
    if (geom.tan_delta < 0.0) {
        throw data_error("line_params: tan_delta must be non-negative");
    }
    const double k = geom.center_width_m / (geom.center_width_m + 2.0 * geom.gap_m);
    if (!(k > 0.0) || !(k < 1.0)) {
        throw data_error("line_params: aspect ratio w/(w+2s) outside (0, 1)");
    }
    const double kp = std::sqrt((1.0 - k) * (1.0 + k));
    const double big_k = elliptic_k(k);
    const double big_kp = elliptic_k(kp);
    const double eps_eff = 0.5 * (geom.substrate_eps_r + 1.0);
    LineParams p{};
    p.eps_eff = eps_eff;
    p.c_per_len = 4.0 * kEps0 * eps_eff * big_k / big_kp;
    p.l_per_len = kMu0 * big_kp / (4.0 * big_k);
    p.z0_ohm = std::sqrt(p.l_per_len / p.c_per_len);
    return p;
}

double quarter_wave_freq_hz(const LineParams& line, double length_m, double l_ki) {
    if (!(length_m > 0.0)) {
        throw data_error("quarter_wave_freq_hz: length must be positive");
    }
    if (!(l_ki >= 0.0)) {
        throw data_error("quarter_wave_freq_hz: kinetic inductance must be >= 0");
    }
    return 1.0 / (4.0 * length_m * std::sqrt((line.l_per_len + l_ki) * line.c_per_len));
}

double quarter_wave_length_m(const LineParams& line, double f0_hz) {
    if (!(f0_hz > 0.0)) {
        throw data_error("quarter_wave_length_m: frequency must be positive");
    }
    return 1.0 / (4.0 * f0_hz * std::sqrt(line.l_per_len * line.c_per_len));
}

KiResult extract_lki(double f_meas_hz, double f_model_hz, double l_geom) {
    if (!(f_meas_hz > 0.0) || !(f_model_hz > 0.0)) {
        throw data_error("extract_lki: frequencies must be positive");
    }
    if (!(l_geom > 0.0)) {
        throw data_error("extract_lki: geometric inductance must be positive");
    }
    if (f_meas_hz > f_model_hz) {
        throw data_error("extract_lki: measured tone above modeled tone implies "
                         "negative kinetic inductance");
    }
    const double ratio = f_meas_hz / f_model_hz;
    KiResult r{};
    r.f_meas_hz = f_meas_hz;
    r.f_model_hz = f_model_hz;
    r.freq_ratio = ratio;
    r.l_ki = l_geom * ((f_model_hz / f_meas_hz) * (f_model_hz / f_meas_hz) - 1.0);
    return r;
}

DeviceKiFit fit_device_lki(const std::vector<std::pair<double, double>>& meas_model_hz,
                           double l_geom) {
    if (meas_model_hz.empty()) {
        throw data_error("fit_device_lki: needs at least one tone pair");
    }
    if (!(l_geom > 0.0)) {
        throw data_error("fit_device_lki: geometric inductance must be positive");
    }
    for (const auto& [meas, model] : meas_model_hz) {
        if (!(meas > 0.0) || !(model > 0.0)) {
            throw data_error("fit_device_lki: frequencies must be positive");
        }
        if (meas > model) {
            throw data_error("fit_device_lki: measured tone above modeled tone implies "
                             "negative kinetic inductance");
        }
    }

    const auto ssr = [&](double l_ki) {
        double s = 0.0;
        for (const auto& [meas, model] : meas_model_hz) {
            const double d = model_freq(model, l_geom, l_ki) - meas;
            s += d * d;
        }
        return s;
    };

    // Golden-section search; the objective is unimodal in l_ki on the
    // bounded interval (the predicted frequencies decrease monotonically).
    double lo = 0.0;
    double hi = 100.0 * l_geom;
    double x1 = hi - kGolden * (hi - lo);
    double x2 = lo + kGolden * (hi - lo);
    double f1 = ssr(x1);
    double f2 = ssr(x2);
    for (int i = 0; i < 200 && (hi - lo) > 1e-14 * (std::abs(hi) + std::abs(lo)); ++i) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - kGolden * (hi - lo);
            f1 = ssr(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + kGolden * (hi - lo);
            f2 = ssr(x2);
        }
    }
    const double best = 0.5 * (lo + hi);
    DeviceKiFit fit{};
    fit.l_ki = best;
    fit.rms_hz = std::sqrt(ssr(best) / static_cast<double>(meas_model_hz.size()));
    fit.n_tones = meas_model_hz.size();
    return fit;
}

} // namespace resfit
