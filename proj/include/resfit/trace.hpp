#pragma once

#include <complex>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace resfit {

enum class Coupling { inductive, capacitive, unknown };
enum class ScanKind { wide, narrow, full };

// Descriptive metadata attached to a trace. resonator_index is the 1-based
// feedline position of the resonator the scan targets.
struct TraceMeta {
    std::string device_id;
    int resonator_index = 1;
    std::optional<double> power_dbm;
    std::optional<double> temperature_mk;
    Coupling coupling = Coupling::unknown;
    ScanKind scan_kind = ScanKind::full;
};

// Closed frequency interval [center - span/2, center + span/2] in Hz.
// span must be positive and the lower edge must stay above 0 Hz.
struct Band {
    double center_hz;
    double span_hz;

    Band(double center, double span);

    [[nodiscard]] double lo_hz() const { return center_hz - 0.5 * span_hz; }
    [[nodiscard]] double hi_hz() const { return center_hz + 0.5 * span_hz; }
};

// Immutable forward-transmission trace: strictly increasing positive
// frequencies (Hz), one complex S21 sample per frequency, at least 8
// samples, all values finite. Violations raise data_error at construction,
// which is also what rejects duplicate frequencies at parse time.
class Trace {
public:
    Trace(std::vector<double> freq_hz,
          std::vector<std::complex<double>> s21,
          TraceMeta meta);

    [[nodiscard]] const std::vector<double>& freq() const { return freq_hz_; }
    [[nodiscard]] const std::vector<std::complex<double>>& s21() const { return s21_; }
    [[nodiscard]] const TraceMeta& meta() const { return meta_; }
    [[nodiscard]] std::size_t size() const { return freq_hz_.size(); }
    [[nodiscard]] double f_min_hz() const { return freq_hz_.front(); }
    [[nodiscard]] double f_max_hz() const { return freq_hz_.back(); }
    [[nodiscard]] double span_hz() const { return f_max_hz() - f_min_hz(); }

    // Band covering exactly [f_min, f_max].
    [[nodiscard]] Band band() const;

private:
    std::vector<double> freq_hz_;
    std::vector<std::complex<double>> s21_;
    TraceMeta meta_;
};

// Sub-trace of the samples whose frequency lies in the closed band.
// Sample order and metadata are preserved; the operation is idempotent for
// a fixed band. Throws data_error when no samples fall inside the band.
[[nodiscard]] Trace window(const Trace& trace, const Band& band);

// Unwraps a sequence of angles (radians): output[0] = input[0] reduced to
// (-pi, pi], successive outputs differ from their neighbor by at most pi.
[[nodiscard]] std::vector<double> unwrap_radians(const std::vector<double>& angles);

// Unwrapped phase of the trace's S21 samples. The first element equals
// arg(s21[0]) in (-pi, pi]; adjacent elements differ by less than pi
// (modulo the measure-zero exact-pi tie).
[[nodiscard]] std::vector<double> unwrap_phase(const Trace& trace);

} // namespace resfit
