#include "resfit/trace.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

#include "resfit/errors.hpp"

namespace resfit {

namespace {

constexpr std::size_t kMinSamples = 8;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

} // namespace

Band::Band(double center, double span) : center_hz(center), span_hz(span) {
    if (!std::isfinite(center) || !std::isfinite(span)) {
        throw data_error("Band: center and span must be finite");
    }
    if (span <= 0.0) {
        throw data_error("Band: span must be positive, got " + std::to_string(span));
    }
    if (center - 0.5 * span <= 0.0) {
        throw data_error("Band: lower edge must be above 0 Hz");
    }
}

Trace::Trace(std::vector<double> freq_hz,
             std::vector<std::complex<double>> s21,
             TraceMeta meta)
    : freq_hz_(std::move(freq_hz)), s21_(std::move(s21)), meta_(std::move(meta)) {
    if (freq_hz_.size() != s21_.size()) {
        throw data_error("Trace: frequency and S21 arrays differ in length (" +
                         std::to_string(freq_hz_.size()) + " vs " +
                         std::to_string(s21_.size()) + ")");
    }
    if (freq_hz_.size() < kMinSamples) {
        throw data_error("Trace: needs at least " + std::to_string(kMinSamples) +
                         " samples, got " + std::to_string(freq_hz_.size()));
    }
    if (meta_.resonator_index < 1 || meta_.resonator_index > 4) {
        throw data_error("Trace: resonator_index must be in 1..4, got " +
                         std::to_string(meta_.resonator_index));
    }
    if (meta_.temperature_mk && *meta_.temperature_mk < 0.0) {
        throw data_error("Trace: temperature_mk must be non-negative");
    }
    for (std::size_t i = 0; i < freq_hz_.size(); ++i) {
        if (!std::isfinite(freq_hz_[i])) {
            throw data_error("Trace: non-finite frequency at sample " + std::to_string(i));
        }
        if (!std::isfinite(s21_[i].real()) || !std::isfinite(s21_[i].imag())) {
            throw data_error("Trace: non-finite S21 at sample " + std::to_string(i));
        }
        if (freq_hz_[i] <= 0.0) {
            throw data_error("Trace: frequency must be positive at sample " +
                             std::to_string(i));
        }
        if (i > 0 && freq_hz_[i] <= freq_hz_[i - 1]) {
            throw data_error("Trace: frequencies must be strictly increasing; sample " +
                             std::to_string(i) + " does not increase");
        }
    }
}

Band Trace::band() const {
    const double lo = f_min_hz();
    const double hi = f_max_hz();
    return Band(0.5 * (lo + hi), hi - lo);
}

Trace window(const Trace& trace, const Band& band) {
    const auto& f = trace.freq();
    const double lo = band.lo_hz();
    const double hi = band.hi_hz();
    const auto first = std::lower_bound(f.begin(), f.end(), lo);
    const auto last = std::upper_bound(first, f.end(), hi);
    if (first == last) {
        throw data_error("window: no samples inside band [" + std::to_string(lo) +
                         ", " + std::to_string(hi) + "] Hz");
    }
    const auto i0 = static_cast<std::size_t>(first - f.begin());
    const auto i1 = static_cast<std::size_t>(last - f.begin());
    std::vector<double> wf(f.begin() + static_cast<std::ptrdiff_t>(i0),
                           f.begin() + static_cast<std::ptrdiff_t>(i1));
    std::vector<std::complex<double>> ws(
        trace.s21().begin() + static_cast<std::ptrdiff_t>(i0),
        trace.s21().begin() + static_cast<std::ptrdiff_t>(i1));
    return Trace(std::move(wf), std::move(ws), trace.meta());
}

std::vector<double> unwrap_radians(const std::vector<double>& angles) {
    std::vector<double> out(angles.size());
    if (angles.empty()) return out;
    // Reduce the anchor to (-pi, pi]; remainder() lands in [-pi, pi].
    double a0 = std::remainder(angles[0], kTwoPi);
    if (a0 <= -std::numbers::pi) a0 += kTwoPi;
    out[0] = a0;
    for (std::size_t i = 1; i < angles.size(); ++i) {
        out[i] = out[i - 1] + std::remainder(angles[i] - angles[i - 1], kTwoPi);
    }
    return out;
}

std::vector<double> unwrap_phase(const Trace& trace) {
    std::vector<double> raw(trace.size());
    for (std::size_t i = 0; i < trace.size(); ++i) {
        raw[i] = std::arg(trace.s21()[i]);
    }
    return unwrap_radians(raw);
}

} // namespace resfit
