#include "resfit/delay.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "resfit/errors.hpp"

namespace resfit {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::size_t kMinRetained = 16;

// Solves the symmetric positive-definite system A x = b (tiny n) by
// Gaussian elimination with partial pivoting.
void solve_small(std::vector<std::vector<double>>& a, std::vector<double>& b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        }
        if (a[piv][col] == 0.0) {
            throw numerical_error("fit_delay: singular background system");
        }
        std::swap(a[piv], a[col]);
        std::swap(b[piv], b[col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double m = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) a[r][c] -= m * a[col][c];
            b[r] -= m * b[col];
        }
    }
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * b[c];
        b[i] = s / a[i][i];
    }
}

} // namespace

DelayFit fit_delay(const Trace& wide, const Band& narrow_band,
                   const DelayFitOptions& options) {
    if (options.background_order < 1 || options.background_order > 2) {
        throw data_error("fit_delay: background_order must be 1 or 2");
    }
    if (wide.span_hz() < 5.0 * narrow_band.span_hz) {
        throw data_error("fit_delay: wide scan must span at least 5x the narrow band");
    }

    const Band excluded(narrow_band.center_hz, 3.0 * narrow_band.span_hz);
    const std::vector<double> phase = unwrap_phase(wide);

    std::vector<double> fr;
    std::vector<double> ph;
    fr.reserve(wide.size());
    ph.reserve(wide.size());
    for (std::size_t i = 0; i < wide.size(); ++i) {
        const double f = wide.freq()[i];
        if (f >= excluded.lo_hz() && f <= excluded.hi_hz()) continue;
        fr.push_back(f);
        ph.push_back(phase[i]);
    }
    if (fr.size() < kMinRetained) {
        throw data_error("fit_delay: only " + std::to_string(fr.size()) +
                         " samples outside the exclusion band, need " +
                         std::to_string(kMinRetained));
    }

    // Trend-reversal guard on the retained unwrapped phase: a step against
    // the overall direction by more than pi/2 marks a wrap failure.
    {
        const double overall = ph.back() - ph.front();
        const double dir = overall >= 0.0 ? 1.0 : -1.0;
        for (std::size_t i = 1; i < ph.size(); ++i) {
            const double step = dir * (ph[i] - ph[i - 1]);
            if (step < -0.5 * std::numbers::pi) {
                throw numerical_error(
                    "fit_delay: unwrapped phase reverses by more than pi/2 "
                    "between retained samples; unwrap is untrustworthy");
            }
        }
    }

    // Least squares on centered frequency; the uncentered [1, f] design is
    // numerically useless at GHz frequencies in double precision.
    const std::size_t n = fr.size();
    double mean_f = 0.0;
    double mean_p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_f += fr[i];
        mean_p += ph[i];
    }
    mean_f /= static_cast<double>(n);
    mean_p /= static_cast<double>(n);

    const std::size_t terms = static_cast<std::size_t>(options.background_order) + 1;
    std::vector<std::vector<double>> ata(terms, std::vector<double>(terms, 0.0));
    std::vector<double> atb(terms, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = fr[i] - mean_f;
        const double y = ph[i] - mean_p;
        double pow_row[3] = {1.0, x, x * x};
        for (std::size_t r = 0; r < terms; ++r) {
            for (std::size_t c = 0; c < terms; ++c) ata[r][c] += pow_row[r] * pow_row[c];
            atb[r] += pow_row[r] * y;
        }
    }
    solve_small(ata, atb);

    const double a0 = atb[0];
    const double b1 = atb[1];
    const double c2 = terms > 2 ? atb[2] : 0.0;

    double ssr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = fr[i] - mean_f;
        const double r = (ph[i] - mean_p) - (a0 + b1 * x + c2 * x * x);
        ssr += r * r;
    }

    DelayFit fit{0.0, 0.0, excluded, 0.0};
    fit.tau_s = -b1 / kTwoPi;
    // Value of the fitted background extrapolated to f = 0.
    fit.phase_intercept_rad = mean_p + a0 - b1 * mean_f + c2 * mean_f * mean_f;
    fit.rms_residual_rad = std::sqrt(ssr / static_cast<double>(n));
    return fit;
}

Trace correct(const Trace& trace, const DelayFit& fit) {
    std::vector<double> freq = trace.freq();
    std::vector<std::complex<double>> s21(trace.size());
    for (std::size_t i = 0; i < trace.size(); ++i) {
        s21[i] = trace.s21()[i] * std::polar(1.0, kTwoPi * freq[i] * fit.tau_s);
    }
    return Trace(std::move(freq), std::move(s21), trace.meta());
}

} // namespace resfit
