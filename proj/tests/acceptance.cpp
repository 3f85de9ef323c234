// Acceptance suite: one pass/fail line per numbered check, exit code equal
// to the number of failures. Each check carries its stated tolerance and
// runtime bound; a check that cannot be met is reported as a failure with
// the measured numbers, never silenced.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "resfit/cli.hpp"
#include "resfit/cpw.hpp"
#include "resfit/delay.hpp"
#include "resfit/errors.hpp"
#include "resfit/fit.hpp"
#include "resfit/io.hpp"
#include "resfit/notch.hpp"
#include "resfit/tls.hpp"
#include "resfit/trace.hpp"

using namespace resfit;
using nlohmann::json;

namespace {

double rel(double got, double want) {
    return std::abs(got - want) / std::abs(want);
}

std::string num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (ok) return;
        pass = false;
        append(what);
    }
    void note(const std::string& what) { append(what); }

private:
    void append(const std::string& what) {
        if (!detail.empty()) detail += "; ";
        detail += what;
    }
};

// ---------------------------------------------------------------------------
// 1. Kinetic-inductance consistency: every observed tone, pushed through
//    extraction and back through the quarter-wave model, must land on itself
//    to five significant figures.

struct Tone {
    double meas_ghz;
    double model_ghz;
};

// Observed tone catalog: (measured GHz, modeled-geometry GHz).
const std::vector<Tone> kTones = {
    {2.8869552, 4.2449}, {3.1095532, 4.2449},
    {3.2927021, 4.7440}, {3.36243, 4.7440},   {3.3426635, 4.7440},
    {3.292418, 4.7440},  {3.3167549, 4.7440}, {3.5438650, 4.7440},
    {3.1892495, 4.7440},
    {3.933598, 5.6803},  {4.0359282, 5.6803}, {3.9886998, 5.6803},
    {3.8579864, 5.6803}, {3.8800269, 5.6803}, {3.7426150, 5.6803},
    {4.4501541, 6.6598}, {4.7164314, 6.6598}, {4.7868947, 6.6598},
    {4.4920176, 6.6598},
};

Outcome check_ki_consistency() {
    Outcome out;
    const double l_geom = 410e-9;
    const double c_per_len = 1.64e-10;
    const LineParams line{l_geom, c_per_len, std::sqrt(l_geom / c_per_len),
                          6.35};
    double worst = 0.0;
    for (const Tone& t : kTones) {
        const double f_meas = t.meas_ghz * 1e9;
        const double f_model = t.model_ghz * 1e9;
        const KiResult ki = extract_lki(f_meas, f_model, l_geom);
        out.require(ki.l_ki >= 0.0,
                    "negative inductance at " + num(t.meas_ghz) + " GHz");
        const double length = quarter_wave_length_m(line, f_model);
        const double f_back = quarter_wave_freq_hz(line, length, ki.l_ki);
        worst = std::max(worst, rel(f_back, f_meas));
    }
    out.require(worst < 1e-5,
                "worst tone reproduction error " + num(worst) + " >= 1e-5");
    if (out.pass)
        out.note(std::to_string(kTones.size()) +
                 " tones reproduced, worst relative error " + num(worst));
    return out;
}

// ---------------------------------------------------------------------------
// 2. Coupling Q from the dip linewidth versus the closed form it encodes.

Outcome check_qc_linewidth() {
    Outcome out;
    const double qc[4] = {7.22e5, 3.94e5, 5.68e6, 3.69e6};
    const double f_ghz[4] = {4.2449, 5.6803, 4.7440, 6.6598};
    double worst = 0.0;
    for (int i = 0; i < 4; ++i) {
        const NotchParams lossless(f_ghz[i] * 1e9, qc[i], qc[i]);
        const double got = qc_from_linewidth(lossless);
        worst = std::max(worst, rel(got, qc[i]));
    }
    out.require(worst < 1e-3,
                "worst linewidth extraction error " + num(worst) + " >= 1e-3");
    if (out.pass) out.note("4 cases, worst relative error " + num(worst));
    return out;
}

// ---------------------------------------------------------------------------
// 3. Phase-fit round trip on the 3x3x3 (Q, Q/Q_C, detuning) grid, then f0
//    coverage against the reported 1-sigma over 200 noisy seeds.

Outcome check_fit_roundtrip() {
    Outcome out;
    const double f0 = 4.4920176e9;
    const double qs[3] = {1e4, 1e5, 1e6};
    const double ratios[3] = {0.1, 0.5, 0.9};
    const double dels[3] = {-0.3, 0.0, 0.3};
    double worst = 0.0;
    for (double q : qs) {
        for (double r : ratios) {
            for (double d : dels) {
                const double lw = f0 / q;
                const NotchParams truth(f0, q, q / r, d * lw, 0.3);
                const Trace tr =
                    synth_trace(truth, Band(f0, 4.0 * lw), 401);
                const ResonatorFit fit = fit_phase(tr, init_guess(tr));
                const std::string where = " at Q=" + num(q) + " Q/QC=" +
                                          num(r) + " d/lw=" + num(d);
                if (!fit.converged) {
                    out.require(false, "no convergence" + where);
                    continue;
                }
                double err = rel(fit.f0_hz, f0);
                err = std::max(err, rel(fit.q_total, q));
                err = std::max(err, rel(fit.q_c, q / r));
                err = std::max(err, rel(fit.phi0_rad, 0.3));
                // zero detuning has no scale of its own; measure it against
                // the linewidth instead
                err = std::max(err, d == 0.0
                                        ? std::abs(fit.delta_f_hz) / lw
                                        : rel(fit.delta_f_hz, d * lw));
                worst = std::max(worst, err);
                out.require(err < 1e-6,
                            "parameter error " + num(err) + where);
            }
        }
    }
    if (out.pass) out.note("27 noiseless fits, worst relative error " + num(worst));

    const NotchParams truth(f0, 5e5, 8.178e5, 0.0, 0.3);
    const double lw = f0 / 5e5;
    int covered = 0;
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        const Trace tr = synth_trace(truth, Band(f0, 4.0 * lw), 201,
                                     NoiseSpec{1e-3, seed});
        try {
            const ResonatorFit fit = fit_phase(tr, init_guess(tr));
            if (fit.converged &&
                std::abs(fit.f0_hz - f0) <= 3.0 * fit.f0_sigma_hz) {
                ++covered;
            }
        } catch (const std::exception&) {
            // a failed fit cannot cover the true value
        }
    }
    out.require(covered >= 198, "f0 within 3 sigma in only " +
                                    std::to_string(covered) + "/200 runs");
    out.note("f0 coverage " + std::to_string(covered) + "/200");
    return out;
}

// ---------------------------------------------------------------------------
// 4. Delay protocol end to end on a noisy synthetic scan pair.

Outcome check_delay_protocol() {
    Outcome out;
    const double f0 = 3.88e9, q = 3e5, qc = 4e5, tau = 40e-9;
    const NotchParams truth(f0, q, qc, 0.0, 0.3, tau);
    const double lw = f0 / q;
    TraceMeta meta;
    meta.device_id = "acc";
    meta.resonator_index = 1;
    meta.scan_kind = ScanKind::wide;
    const Trace wide = synth_trace(truth, Band(f0, 2000.0 * lw), 2001,
                                   NoiseSpec{1e-3, 4001}, meta);
    meta.scan_kind = ScanKind::narrow;
    const Trace narrow = synth_trace(truth, Band(f0, 2.0 * lw), 401,
                                     NoiseSpec{1e-3, 4002}, meta);
    const PipelineResult res = fit_pipeline(wide, narrow);
    out.require(res.fit.converged, "narrow fit did not converge");
    out.require(rel(res.delay.tau_s, tau) < 1e-3,
                "delay error " + num(rel(res.delay.tau_s, tau)) + " >= 1e-3");
    out.require(rel(res.fit.f0_hz, f0) < 0.01,
                "f0 error " + num(rel(res.fit.f0_hz, f0)));
    out.require(rel(res.fit.q_total, q) < 0.01,
                "q_total error " + num(rel(res.fit.q_total, q)));
    out.require(rel(res.fit.q_c, qc) < 0.01,
                "q_c error " + num(rel(res.fit.q_c, qc)));
    out.require(rel(res.delay.excluded_band.span_hz, 3.0 * narrow.span_hz()) <
                    1e-12,
                "exclusion span is not 3x the narrow span");
    if (out.pass)
        out.note("tau to " + num(rel(res.delay.tau_s, tau) * 100) +
                 "%, parameters to <=" +
                 num(std::max({rel(res.fit.f0_hz, f0), rel(res.fit.q_total, q),
                               rel(res.fit.q_c, qc)}) *
                     100) +
                 "%");
    return out;
}

// ---------------------------------------------------------------------------
// 5. Transmission-line constants against an oracle written separately below
//    (long-double arithmetic-geometric mean, independent constant set
//    mu0 = 4 pi 1e-7, eps0 = 1/(mu0 c^2)).

long double oracle_k(long double k) {
    long double a = 1.0L;
    long double b = std::sqrt((1.0L - k) * (1.0L + k));
    while (std::abs(a - b) > 1e-18L * a) {
        const long double an = 0.5L * (a + b);
        b = std::sqrt(a * b);
        a = an;
    }
    return std::numbers::pi_v<long double> / (a + b);
}

Outcome check_cpw_oracle() {
    Outcome out;
    const long double mu0 = 4.0L * std::numbers::pi_v<long double> * 1e-7L;
    const long double c_light = 299792458.0L;
    const long double eps0 = 1.0L / (mu0 * c_light * c_light);
    const double widths_um[5] = {2, 5, 10, 20, 50};
    const double gaps_um[5] = {1, 2, 6, 10, 20};
    const double er = 11.7;
    double worst = 0.0;
    for (double w_um : widths_um) {
        for (double s_um : gaps_um) {
            const LineParams got =
                line_params(CpwGeometry{w_um * 1e-6, s_um * 1e-6, er});
            const long double w = static_cast<long double>(w_um) * 1e-6L;
            const long double s = static_cast<long double>(s_um) * 1e-6L;
            const long double k = w / (w + 2.0L * s);
            const long double kp = std::sqrt((1.0L - k) * (1.0L + k));
            const long double kk = oracle_k(k);
            const long double kkp = oracle_k(kp);
            const long double ee = 0.5L * (static_cast<long double>(er) + 1.0L);
            const long double c_or = 4.0L * eps0 * ee * kk / kkp;
            const long double l_or = mu0 * kkp / (4.0L * kk);
            const long double z_or = std::sqrt(l_or / c_or);
            double err = rel(got.c_per_len, static_cast<double>(c_or));
            err = std::max(err, rel(got.l_per_len, static_cast<double>(l_or)));
            err = std::max(err, rel(got.z0_ohm, static_cast<double>(z_or)));
            worst = std::max(worst, err);
            out.require(err < 5e-3, "line constants off by " + num(err) +
                                        " at w=" + num(w_um) + "um s=" +
                                        num(s_um) + "um");
            out.require(std::abs(got.eps_eff - 0.5 * (er + 1.0)) < 1e-12,
                        "eps_eff not (er+1)/2 at w=" + num(w_um) + "um s=" +
                            num(s_um) + "um");
        }
    }
    if (out.pass)
        out.note("25 geometries, worst relative error " + num(worst));
    return out;
}

// ---------------------------------------------------------------------------
// 6. Loss-law round trip and the knee of the classification boundary.

Outcome check_tls_roundtrip() {
    Outcome out;
    const double f = 4.744e9;
    const double a_true = 1e-6, pc_true = -50.0, qo_true = 5e6;

    QiSurface s;
    s.device_id = "acc";
    s.temperatures_mk = {25, 50, 75, 100, 150, 200, 300, 400};
    for (int j = 0; j < 9; ++j) s.powers_dbm.push_back(-90.0 + 10.0 * j);
    s.cells.assign(s.temperatures_mk.size(),
                   std::vector<std::optional<QiCell>>(s.powers_dbm.size()));
    s.regimes.assign(s.temperatures_mk.size(),
                     std::vector<Regime>(s.powers_dbm.size(),
                                         Regime::unclassified));
    for (std::size_t i = 0; i < s.temperatures_mk.size(); ++i) {
        for (std::size_t j = 0; j < s.powers_dbm.size(); ++j) {
            s.cells[i][j] = QiCell{
                tls_qi_model(s.temperatures_mk[i], s.powers_dbm[j], f, a_true,
                             pc_true, qo_true),
                0.0};
        }
    }
    const TlsLawFit law = fit_tls_law(s, f);
    out.require(law.converged, "law fit did not converge");
    out.require(rel(law.f_delta0, a_true) < 1e-4,
                "loss amplitude error " + num(rel(law.f_delta0, a_true)));
    const double pc_lin = std::pow(10.0, law.p_c_dbm / 10.0);
    const double pc_lin_true = std::pow(10.0, pc_true / 10.0);
    out.require(rel(pc_lin, pc_lin_true) < 1e-4,
                "saturation power error " + num(rel(pc_lin, pc_lin_true)));
    out.require(rel(law.q_other, qo_true) < 1e-4,
                "residual-Q error " + num(rel(law.q_other, qo_true)));

    // Knee: with the residual channel pushed out of the way, the boundary
    // (midpoint crossing of log Qi along temperature) must sit within one
    // grid step of theta/atanh(1/2).
    const double theta = tls_theta_mk(f);
    const double knee = theta / std::atanh(0.5);
    const double t_hi = theta / std::atanh(0.25);
    const int nt = 18;
    QiSurface s2;
    s2.device_id = "acc";
    const double step = (t_hi - 25.0) / (nt - 1);
    for (int i = 0; i < nt; ++i) s2.temperatures_mk.push_back(25.0 + i * step);
    s2.powers_dbm = {-80, -70, -60};
    s2.cells.assign(nt, std::vector<std::optional<QiCell>>(3));
    s2.regimes.assign(nt, std::vector<Regime>(3, Regime::unclassified));
    for (int i = 0; i < nt; ++i) {
        for (int j = 0; j < 3; ++j) {
            s2.cells[i][j] = QiCell{
                tls_qi_model(s2.temperatures_mk[i], s2.powers_dbm[j], f,
                             a_true, pc_true, 1e12),
                0.0};
        }
    }
    const RegimeReport report = classify_regimes(s2);
    for (int j = 0; j < 3; ++j) {
        if (!report.boundary_t_mk[j].has_value()) {
            out.require(false, "no boundary found for power column " +
                                   std::to_string(j));
            continue;
        }
        const double b = *report.boundary_t_mk[j];
        out.require(std::abs(b - knee) <= step,
                    "boundary " + num(b) + " mK more than one step (" +
                        num(step) + " mK) from the knee " + num(knee) + " mK");
    }
    if (out.pass && report.boundary_t_mk[0].has_value())
        out.note("law recovered; boundary " + num(*report.boundary_t_mk[0]) +
                 " mK vs knee " + num(knee) + " mK, step " + num(step) + " mK");
    return out;
}

// ---------------------------------------------------------------------------
// 7. Absolute device Qi magnitudes and the measured two-device improvement
//    cannot be reproduced from synthetic data (no raw traces are published),
//    so this check verifies the comparison machinery those results would
//    flow through and defers the quantitative burden to checks 3 and 6.

json surface_record(const QiSurface& s) {
    json rec;
    rec["schema"] = "resfit-result v1";
    rec["kind"] = "qi_surface";
    rec["surface"] = surface_to_json(s);
    return rec;
}

Outcome check_comparison_path(const std::filesystem::path& scratch,
                              bool fits_ok, bool tls_ok) {
    Outcome out;
    out.require(fits_ok, "substitute check 3 failed");
    out.require(tls_ok, "substitute check 6 failed");

    QiSurface a;
    a.device_id = "ref";
    a.temperatures_mk = {25, 100, 300};
    a.powers_dbm = {-80, -60};
    a.cells.assign(3, std::vector<std::optional<QiCell>>(2));
    a.regimes.assign(3, std::vector<Regime>(2, Regime::unclassified));
    QiSurface b = a;
    b.device_id = "improved";
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 2; ++j) {
            const double qi = tls_qi_model(a.temperatures_mk[i],
                                           a.powers_dbm[j], 4.744e9, 1e-6,
                                           -50.0, 5e6);
            a.cells[i][j] = QiCell{qi, 0.0};
            b.cells[i][j] = QiCell{2.0 * qi, 0.0};
        }
    }
    const std::string pa = (scratch / "surface_a.json").string();
    const std::string pb = (scratch / "surface_b.json").string();
    const std::string pc = (scratch / "comparison.json").string();
    write_text_atomic(pa, surface_record(a).dump(2) + "\n");
    write_text_atomic(pb, surface_record(b).dump(2) + "\n");
    const int rc = cli_dispatch({"report", "--a", pa, "--b", pb, "--out", pc,
                                 "--no-timestamp"});
    out.require(rc == 0, "report run exited with code " + std::to_string(rc));
    if (rc == 0) {
        const json rec = json::parse(read_text(pc));
        const double ratio =
            rec["comparison"]["median_ratio_b_over_a"]["value"].get<double>();
        const double cells =
            rec["comparison"]["n_common_cells"]["value"].get<double>();
        out.require(cells == 6.0, "expected 6 common cells, found " + num(cells));
        out.require(rel(ratio, 2.0) < 1e-12,
                    "median ratio " + num(ratio) + " != 2");
        if (out.pass)
            out.note("raw magnitudes unavailable by construction; comparison "
                     "machinery verified (median ratio " +
                     num(ratio) + " over " + num(cells) + " cells)");
    }
    return out;
}

// ---------------------------------------------------------------------------
// 8. Determinism: identical seeded invocations, byte-identical outputs.

Outcome check_determinism(const std::filesystem::path& scratch) {
    Outcome out;
    auto path = [&](const char* name) { return (scratch / name).string(); };

    // Two identical seeded synth runs, then the remaining record writers
    // invoked twice each on the same inputs. Only the output paths differ;
    // records never embed them.
    for (int round = 1; round <= 2; ++round) {
        const std::string tag = std::to_string(round);
        int rc = cli_dispatch(
            {"synth", "--f0-ghz", "3.88", "--q", "3e5", "--qc", "4e5",
             "--delay-ns", "40", "--noise-sigma", "1e-3", "--seed", "7",
             "--device", "det", "--out-wide", path(("w" + tag + ".csv").c_str()),
             "--out-narrow", path(("n" + tag + ".csv").c_str())});
        out.require(rc == 0, "synth exited with " + std::to_string(rc));
        rc = cli_dispatch({"fit", "--wide", path("w1.csv"), "--narrow",
                           path("n1.csv"), "--out",
                           path(("fit" + tag + ".json").c_str()), "--plot",
                           path(("plot" + tag + ".csv").c_str()),
                           "--no-timestamp"});
        out.require(rc == 0, "fit exited with " + std::to_string(rc));
        rc = cli_dispatch({"cpw", "--width-um", "10", "--gap-um", "6",
                           "--eps-r", "11.7", "--length-mm", "6.116",
                           "--lki-nh-per-m", "428.8", "--out",
                           path(("cpw" + tag + ".json").c_str()),
                           "--no-timestamp"});
        out.require(rc == 0, "cpw exited with " + std::to_string(rc));
    }
    const char* pairs[5][2] = {{"w1.csv", "w2.csv"},
                               {"n1.csv", "n2.csv"},
                               {"fit1.json", "fit2.json"},
                               {"plot1.csv", "plot2.csv"},
                               {"cpw1.json", "cpw2.json"}};
    for (const auto& p : pairs) {
        const std::string lhs = read_text(path(p[0]));
        const std::string rhs = read_text(path(p[1]));
        out.require(!lhs.empty(), std::string(p[0]) + " is empty");
        out.require(lhs == rhs, std::string(p[0]) + " and " + p[1] +
                                    " differ between identical runs");
    }
    if (out.pass) out.note("seeded synth/fit/cpw reruns byte-identical");
    return out;
}

} // namespace

int main() {
    using clock = std::chrono::steady_clock;
    const auto suite_start = clock::now();

    const std::filesystem::path scratch =
        std::filesystem::temp_directory_path() /
        ("resfit_acceptance_" + std::to_string(::getpid()));
    std::filesystem::remove_all(scratch);
    std::filesystem::create_directories(scratch);

    int failures = 0;
    std::vector<bool> passed;
    auto run = [&](int id, const char* title, double max_seconds,
                   const std::function<Outcome()>& body) {
        const auto t0 = clock::now();
        Outcome out;
        try {
            out = body();
        } catch (const std::exception& e) {
            out.pass = false;
            out.note(std::string("unexpected exception: ") + e.what());
        }
        const double secs =
            std::chrono::duration<double>(clock::now() - t0).count();
        if (max_seconds > 0.0 && secs >= max_seconds) {
            out.require(false, "runtime " + num(secs) + " s exceeds " +
                                   num(max_seconds) + " s");
        }
        std::printf("[%s] %d. %s%s%s (%.3f s)\n", out.pass ? "PASS" : "FAIL",
                    id, title, out.detail.empty() ? "" : " -- ",
                    out.detail.c_str(), secs);
        std::fflush(stdout);
        passed.push_back(out.pass);
        if (!out.pass) ++failures;
    };

    run(1, "kinetic-inductance tone reproduction", 1.0, check_ki_consistency);
    run(2, "coupling Q from linewidth", 5.0, check_qc_linewidth);
    run(3, "phase-fit round trip and f0 coverage", 60.0, check_fit_roundtrip);
    run(4, "delay protocol end to end", 5.0, check_delay_protocol);
    run(5, "line constants vs independent oracle", 0.0, check_cpw_oracle);
    run(6, "loss-law round trip and knee location", 10.0, check_tls_roundtrip);
    run(7, "device comparison path (magnitudes not reproducible)", 0.0,
        [&] { return check_comparison_path(scratch, passed[2], passed[5]); });
    run(8, "byte-identical seeded reruns", 0.0,
        [&] { return check_determinism(scratch); });

    const double total =
        std::chrono::duration<double>(clock::now() - suite_start).count();
    if (total >= 120.0) {
        std::printf("[FAIL] total runtime %.1f s exceeds 120 s\n", total);
        ++failures;
    } else {
        std::printf("total runtime %.1f s\n", total);
    }
    std::printf("%d of 8 checks passed\n", 8 - failures);

    std::error_code ec;
    std::filesystem::remove_all(scratch, ec);
    return failures;
}
