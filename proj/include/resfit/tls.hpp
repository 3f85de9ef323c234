#pragma once

#include <optional>
#include <string>
#include <vector>

#include "resfit/fit.hpp"
#include "resfit/trace.hpp"

namespace resfit {

/// Per-temperature-row label describing how the internal quality factor
/// responds to drive power.
enum class Regime {
    unclassified,
    saturated,       ///< Qi essentially flat across power.
    power_dependent, ///< Qi varies strongly with power.
    tls_dominated,   ///< Power-dependent, cold, and consistent with
                     ///< two-level-system saturation behaviour.
};

const char* to_string(Regime regime);

struct QiCell {
    double value = 0.0;
    double sigma = 0.0; ///< NaN when the underlying fit carried no uncertainty.
};

/// Internal quality factor on a (temperature, power) grid for one resonator.
/// Cells may be missing (failed fits, unmeasured points).
struct QiSurface {
    std::string device_id;
    int resonator_index = 1;
    std::vector<double> temperatures_mk; ///< strictly increasing
    std::vector<double> powers_dbm;      ///< strictly increasing
    /// cells[t][p]; same shape as regimes.
    std::vector<std::vector<std::optional<QiCell>>> cells;
    std::vector<std::vector<Regime>> regimes;
};

struct FitWithMeta {
    ResonatorFit fit;
    TraceMeta meta;
};

/// Builds a surface from individual resonator fits. Every entry must carry a
/// temperature, a power, and an internal quality factor, and all entries must
/// describe the same device and resonator index. Two entries at the same
/// (temperature, power) point are an error.
QiSurface aggregate(const std::vector<FitWithMeta>& fits);

/// Inverse of aggregate for the fields a surface retains: one entry per
/// present cell, carrying Qi, its uncertainty, and the grid coordinates.
std::vector<FitWithMeta> disaggregate(const QiSurface& surface);

struct RegimeOptions {
    /// A row whose max/min Qi ratio is below 1 + eps_saturated is flat.
    double eps_saturated = 0.05;
    /// A row whose ratio is at least 1 + eps_dependent responds to power.
    double eps_dependent = 0.2;
    /// Relative slack allowed when testing Qi monotonicity.
    double monotone_rel_tol = 1e-9;
};

struct RegimeReport {
    /// Per temperature row: max Qi / min Qi across power (NaN when fewer
    /// than two cells are present).
    std::vector<double> row_ratio;
    /// Per power column: temperature at which log Qi crosses the midpoint of
    /// its endpoint values (linear interpolation); absent when the column has
    /// fewer than two cells or no meaningful rise.
    std::vector<std::optional<double>> boundary_t_mk;
    /// Per power column: whether Qi is monotone non-decreasing in
    /// temperature over the present cells.
    std::vector<bool> qi_monotone_in_t;
    std::vector<std::string> notes;
};

/// Labels every cell of the surface, row by row:
///  - rows with ratio < 1 + eps_saturated are saturated;
///  - rows with ratio >= 1 + eps_dependent are power_dependent;
///  - rows in between stay unclassified (noted);
///  - the maximal contiguous run of power_dependent rows starting at the
///    coldest temperature, in which Qi rises monotonically with power and the
///    ratio stays within (1 - eps_saturated) of the coldest row's ratio, is
///    promoted to tls_dominated.
RegimeReport classify_regimes(QiSurface& surface, const RegimeOptions& options = {});

struct TlsLawConfig {
    double saturation_exponent = 0.5;
    int max_iterations = 300;
    double relative_tolerance = 1e-10;
    double damping_init = 1e-3;
};

struct TlsLawFit {
    double f_delta0 = 0.0;   ///< zero-temperature, zero-power loss amplitude
    double p_c_dbm = 0.0;    ///< critical (saturation) power
    double q_other = 0.0;    ///< power- and temperature-independent Q
    double rms_log = 0.0;    ///< rms of ln(Qi_data / Qi_model)
    int n_iterations = 0;
    bool converged = false;
};

/// Frequency-dependent thermal scale of the loss law, in millikelvin.
double tls_theta_mk(double frequency_hz);

/// Forward loss law: Qi as a function of temperature and drive power,
///   1/Qi = f_delta0 * tanh(theta/T) / (1 + P/Pc)^exponent + 1/q_other,
/// with P and Pc compared in linear power units.
double tls_qi_model(double temperature_mk, double power_dbm, double frequency_hz,
                    double f_delta0, double p_c_dbm, double q_other,
                    double saturation_exponent = 0.5);

/// Fits the loss law to every present cell of the surface, minimizing
/// residuals of ln Qi. Initial values come from a coarse grid over the
/// critical power with the two linear parameters solved exactly at each
/// candidate.
TlsLawFit fit_tls_law(const QiSurface& surface, double frequency_hz,
                      const TlsLawConfig& config = {});

} // namespace resfit
