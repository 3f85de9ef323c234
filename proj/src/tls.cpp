#include "resfit/tls.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "resfit/detail/levmar.hpp"
#include "resfit/errors.hpp"

namespace resfit {

namespace {

constexpr double kHbar = 1.054571817e-34;      // J s
constexpr double kBoltzmann = 1.380649e-23;    // J / K

double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }
double mw_to_dbm(double mw) { return 10.0 * std::log10(mw); }

double thermal_factor(double theta_mk, double temperature_mk) {
    if (temperature_mk < 0.0) {
        throw data_error("negative temperature");
    }
    if (temperature_mk == 0.0) return 1.0;
    return std::tanh(theta_mk / temperature_mk);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

} // namespace

const char* to_string(Regime regime) {
    switch (regime) {
        case Regime::saturated: return "saturated";
        case Regime::power_dependent: return "power_dependent";
        case Regime::tls_dominated: return "tls_dominated";
        case Regime::unclassified: return "unclassified";
    }
    return "unclassified";
}

double tls_theta_mk(double frequency_hz) {
    if (!(frequency_hz > 0.0)) {
        throw data_error("tls_theta_mk: frequency must be positive");
    }
    const double omega = 2.0 * std::numbers::pi * frequency_hz;
    return 1e3 * kHbar * omega / (2.0 * kBoltzmann);
}

double tls_qi_model(double temperature_mk, double power_dbm, double frequency_hz,
                    double f_delta0, double p_c_dbm, double q_other,
                    double saturation_exponent) {
    if (!(f_delta0 >= 0.0) || !(q_other > 0.0) || !(saturation_exponent > 0.0)) {
        throw data_error("tls_qi_model: f_delta0 must be non-negative, q_other "
                         "and the exponent positive");
    }
    const double theta = tls_theta_mk(frequency_hz);
    const double t = thermal_factor(theta, temperature_mk);
    const double ratio = dbm_to_mw(power_dbm) / dbm_to_mw(p_c_dbm);
    const double loss = f_delta0 * t / std::pow(1.0 + ratio, saturation_exponent) +
                        1.0 / q_other;
    return 1.0 / loss;
}

QiSurface aggregate(const std::vector<FitWithMeta>& fits) {
    if (fits.empty()) {
        throw data_error("aggregate: no fits supplied");
    }
    struct Point {
        double t;
        double p;
        QiCell cell;
    };
    std::vector<Point> pts;
    pts.reserve(fits.size());
    const std::string& dev = fits.front().meta.device_id;
    const int res = fits.front().meta.resonator_index;
    for (std::size_t i = 0; i < fits.size(); ++i) {
        const auto& fm = fits[i];
        if (fm.meta.device_id != dev || fm.meta.resonator_index != res) {
            throw data_error("aggregate: entry " + std::to_string(i) +
                             " belongs to a different resonator (" +
                             fm.meta.device_id + " #" +
                             std::to_string(fm.meta.resonator_index) + ")");
        }
        if (!fm.meta.temperature_mk || !fm.meta.power_dbm) {
            throw data_error("aggregate: entry " + std::to_string(i) +
                             " lacks a temperature or power");
        }
        if (!fm.fit.q_i) {
            throw data_error("aggregate: entry " + std::to_string(i) +
                             " carries no internal quality factor");
        }
        QiCell cell;
        cell.value = *fm.fit.q_i;
        cell.sigma = fm.fit.q_i_sigma
                         ? *fm.fit.q_i_sigma
                         : std::numeric_limits<double>::quiet_NaN();
        pts.push_back({*fm.meta.temperature_mk, *fm.meta.power_dbm, cell});
    }

    QiSurface s;
    s.device_id = dev;
    s.resonator_index = res;
    for (const Point& pt : pts) s.temperatures_mk.push_back(pt.t);
    for (const Point& pt : pts) s.powers_dbm.push_back(pt.p);
    const auto dedup = [](std::vector<double>& v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    dedup(s.temperatures_mk);
    dedup(s.powers_dbm);

    const std::size_t nt = s.temperatures_mk.size();
    const std::size_t np = s.powers_dbm.size();
    s.cells.assign(nt, std::vector<std::optional<QiCell>>(np));
    s.regimes.assign(nt, std::vector<Regime>(np, Regime::unclassified));
    for (const Point& pt : pts) {
        const auto ti = std::lower_bound(s.temperatures_mk.begin(),
                                         s.temperatures_mk.end(), pt.t) -
                        s.temperatures_mk.begin();
        const auto pi =
            std::lower_bound(s.powers_dbm.begin(), s.powers_dbm.end(), pt.p) -
            s.powers_dbm.begin();
        auto& slot = s.cells[static_cast<std::size_t>(ti)]
                            [static_cast<std::size_t>(pi)];
        if (slot) {
            throw data_error("aggregate: duplicate point at " + fmt(pt.t) +
                             " mK, " + fmt(pt.p) + " dBm");
        }
        slot = pt.cell;
    }
    return s;
}

std::vector<FitWithMeta> disaggregate(const QiSurface& surface) {
    std::vector<FitWithMeta> out;
    for (std::size_t t = 0; t < surface.temperatures_mk.size(); ++t) {
        for (std::size_t p = 0; p < surface.powers_dbm.size(); ++p) {
            const auto& cell = surface.cells[t][p];
            if (!cell) continue;
            FitWithMeta fm;
            fm.fit.q_i = cell->value;
            if (!std::isnan(cell->sigma)) fm.fit.q_i_sigma = cell->sigma;
            fm.meta.device_id = surface.device_id;
            fm.meta.resonator_index = surface.resonator_index;
            fm.meta.temperature_mk = surface.temperatures_mk[t];
            fm.meta.power_dbm = surface.powers_dbm[p];
            out.push_back(std::move(fm));
        }
    }
    return out;
}

RegimeReport classify_regimes(QiSurface& surface, const RegimeOptions& options) {
    const std::size_t nt = surface.temperatures_mk.size();
    const std::size_t np = surface.powers_dbm.size();
    if (nt < 3 || np < 2) {
        throw data_error("classify_regimes: grid too small (" + std::to_string(nt) +
                         " temperatures x " + std::to_string(np) +
                         " powers); need at least 3 temperatures and 2 powers");
    }
    if (surface.cells.size() != nt ||
        std::any_of(surface.cells.begin(), surface.cells.end(),
                    [np](const auto& row) { return row.size() != np; })) {
        throw data_error("classify_regimes: cell grid does not match the axes");
    }
    surface.regimes.assign(nt, std::vector<Regime>(np, Regime::unclassified));

    RegimeReport report;
    report.row_ratio.assign(nt, std::numeric_limits<double>::quiet_NaN());
    report.boundary_t_mk.assign(np, std::nullopt);
    report.qi_monotone_in_t.assign(np, true);

    // Row statistics and per-row labels.
    std::vector<Regime> row_label(nt, Regime::unclassified);
    std::vector<bool> row_rising_in_p(nt, false);
    for (std::size_t t = 0; t < nt; ++t) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        std::size_t count = 0;
        bool rising = true;
        const QiCell* prev = nullptr;
        for (std::size_t p = 0; p < np; ++p) {
            const auto& cell = surface.cells[t][p];
            if (!cell) continue;
            ++count;
            lo = std::min(lo, cell->value);
            hi = std::max(hi, cell->value);
            if (prev &&
                cell->value < prev->value * (1.0 - options.monotone_rel_tol)) {
                rising = false;
            }
            prev = &*cell;
        }
        row_rising_in_p[t] = rising;
        if (count < 2) {
            report.notes.push_back("row " + fmt(surface.temperatures_mk[t]) +
                                   " mK: fewer than two cells, left unclassified");
            continue;
        }
        const double ratio = hi / lo;
        report.row_ratio[t] = ratio;
        if (ratio < 1.0 + options.eps_saturated) {
            row_label[t] = Regime::saturated;
        } else if (ratio >= 1.0 + options.eps_dependent) {
            row_label[t] = Regime::power_dependent;
        } else {
            report.notes.push_back(
                "row " + fmt(surface.temperatures_mk[t]) + " mK: ratio " +
                fmt(ratio) + " between thresholds, left unclassified");
        }
    }

    // Promote the coldest contiguous power-dependent run whose response stays
    // comparable to the coldest row and whose Qi rises with power.
    if (nt > 0 && row_label[0] == Regime::power_dependent) {
        const double r0 = report.row_ratio[0];
        std::size_t end = 0;
        while (end < nt && row_label[end] == Regime::power_dependent &&
               row_rising_in_p[end] &&
               report.row_ratio[end] >= (1.0 - options.eps_saturated) * r0) {
            ++end;
        }
        for (std::size_t t = 0; t < end; ++t) {
            row_label[t] = Regime::tls_dominated;
        }
    } else if (nt > 0) {
        report.notes.push_back(
            "coldest row is not power-dependent; no tls_dominated region");
    }

    for (std::size_t t = 0; t < nt; ++t) {
        for (std::size_t p = 0; p < np; ++p) {
            if (surface.cells[t][p]) surface.regimes[t][p] = row_label[t];
        }
    }

    // Column statistics: monotonicity in temperature and the temperature at
    // which log Qi crosses the midpoint of its endpoint values.
    for (std::size_t p = 0; p < np; ++p) {
        std::vector<double> ts;
        std::vector<double> ys;
        for (std::size_t t = 0; t < nt; ++t) {
            const auto& cell = surface.cells[t][p];
            if (!cell) continue;
            ts.push_back(surface.temperatures_mk[t]);
            ys.push_back(std::log(cell->value));
        }
        for (std::size_t i = 1; i < ys.size(); ++i) {
            if (ys[i] < ys[i - 1] + std::log1p(-options.monotone_rel_tol)) {
                report.qi_monotone_in_t[p] = false;
                break;
            }
        }
        if (ys.size() < 2) continue;
        const double rise = ys.back() - ys.front();
        if (std::abs(rise) < std::log1p(options.eps_dependent)) {
            report.notes.push_back("power " + fmt(surface.powers_dbm[p]) +
                                   " dBm: no meaningful Qi change across "
                                   "temperature, no boundary");
            continue;
        }
        const double mid = 0.5 * (ys.front() + ys.back());
        for (std::size_t i = 0; i + 1 < ys.size(); ++i) {
            if ((ys[i] - mid) * (ys[i + 1] - mid) <= 0.0) {
                const double dy = ys[i + 1] - ys[i];
                report.boundary_t_mk[p] =
                    dy == 0.0 ? ts[i]
                              : ts[i] + (mid - ys[i]) * (ts[i + 1] - ts[i]) / dy;
                break;
            }
        }
    }
    return report;
}

TlsLawFit fit_tls_law(const QiSurface& surface, double frequency_hz,
                      const TlsLawConfig& config) {
    if (!(config.saturation_exponent > 0.0)) {
        throw data_error("fit_tls_law: saturation exponent must be positive");
    }
    if (surface.temperatures_mk.size() < 3 || surface.powers_dbm.size() < 3) {
        throw data_error("fit_tls_law: grid too small (" +
                         std::to_string(surface.temperatures_mk.size()) +
                         " temperatures x " + std::to_string(surface.powers_dbm.size()) +
                         " powers); need at least 3 of each");
    }
    const double theta = tls_theta_mk(frequency_hz);
    const double e = config.saturation_exponent;

    std::vector<double> tanh_term;
    std::vector<double> p_mw;
    std::vector<double> y; // ln Qi
    for (std::size_t t = 0; t < surface.temperatures_mk.size(); ++t) {
        for (std::size_t p = 0; p < surface.powers_dbm.size(); ++p) {
            const auto& cell = surface.cells[t][p];
            if (!cell) continue;
            if (!(cell->value > 0.0)) {
                throw data_error("fit_tls_law: non-positive Qi at " +
                                 fmt(surface.temperatures_mk[t]) + " mK, " +
                                 fmt(surface.powers_dbm[p]) + " dBm");
            }
            tanh_term.push_back(thermal_factor(theta, surface.temperatures_mk[t]));
            p_mw.push_back(dbm_to_mw(surface.powers_dbm[p]));
            y.push_back(std::log(cell->value));
        }
    }
    const std::size_t n = y.size();
    if (n < 4) {
        throw data_error("fit_tls_law: need at least four cells, have " +
                         std::to_string(n));
    }

    // Coarse search over the critical power; at each candidate the two linear
    // parameters have a closed-form least-squares solution in 1/Qi.
    const auto p_lohi = std::minmax_element(p_mw.begin(), p_mw.end());
    const double grid_lo_dbm = mw_to_dbm(*p_lohi.first) - 30.0;
    const double grid_hi_dbm = mw_to_dbm(*p_lohi.second) + 30.0;
    double best_ssr = std::numeric_limits<double>::infinity();
    double best_a = 1e-7;
    double best_pc_mw = dbm_to_mw(0.5 * (grid_lo_dbm + grid_hi_dbm));
    double best_b = 1e-7;
    for (double pc_dbm = grid_lo_dbm; pc_dbm <= grid_hi_dbm + 1e-9;
         pc_dbm += 5.0) {
        const double pc = dbm_to_mw(pc_dbm);
        double sxx = 0.0;
        double sx = 0.0;
        double sxz = 0.0;
        double sz = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x =
                tanh_term[i] * std::pow(1.0 + p_mw[i] / pc, -e);
            const double z = std::exp(-y[i]); // 1/Qi
            sxx += x * x;
            sx += x;
            sxz += x * z;
            sz += z;
        }
        const double nn = static_cast<double>(n);
        const double det = sxx * nn - sx * sx;
        if (std::abs(det) < 1e-300) continue;
        double a = (nn * sxz - sx * sz) / det;
        double b = (sxx * sz - sx * sxz) / det;
        a = std::max(a, 1e-30);
        b = std::max(b, 1e-15);
        double ssr = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = tanh_term[i] * std::pow(1.0 + p_mw[i] / pc, -e);
            const double r = y[i] + std::log(a * x + b);
            ssr += r * r;
        }
        if (ssr < best_ssr) {
            best_ssr = ssr;
            best_a = a;
            best_pc_mw = pc;
            best_b = b;
        }
    }

    detail::LmOptions opt;
    opt.max_iterations = config.max_iterations;
    opt.relative_tolerance = config.relative_tolerance;
    opt.damping_init = config.damping_init;
    opt.scale = {1.0, 1.0, 1.0};
    opt.lo = {std::log(1e-30), std::log(1e-20), 0.0};
    opt.hi = {std::log(10.0), std::log(1e10), std::log(1e15)};

    const auto eval = [&](const std::vector<double>& x, std::vector<double>& r,
                          std::vector<double>& jac) {
        const double a = std::exp(x[0]);
        const double pc = std::exp(x[1]);
        const double qo = std::exp(x[2]);
        r.resize(n);
        jac.resize(n * 3);
        for (std::size_t i = 0; i < n; ++i) {
            const double ratio = p_mw[i] / pc;
            const double sat = std::pow(1.0 + ratio, -e);
            const double loss_tls = a * tanh_term[i] * sat;
            const double loss = loss_tls + 1.0 / qo;
            r[i] = y[i] + std::log(loss); // y - (-log loss)
            jac[i * 3 + 0] = -loss_tls / loss;
            jac[i * 3 + 1] = -(loss_tls / loss) * e * ratio / (1.0 + ratio);
            jac[i * 3 + 2] = (1.0 / qo) / loss;
        }
    };

    const detail::LmResult lm = detail::lm_minimize(
        eval, {std::log(best_a), std::log(best_pc_mw), std::log(1.0 / best_b)},
        opt);

    TlsLawFit out;
    out.f_delta0 = std::exp(lm.params[0]);
    out.p_c_dbm = mw_to_dbm(std::exp(lm.params[1]));
    out.q_other = std::exp(lm.params[2]);
    out.rms_log = std::sqrt(lm.ssr / static_cast<double>(n));
    out.n_iterations = lm.n_iterations;
    out.converged = lm.converged;
    return out;
}

} // namespace resfit
