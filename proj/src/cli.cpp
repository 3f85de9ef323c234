#include "resfit/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "resfit/cpw.hpp"
#include "resfit/delay.hpp"
#include "resfit/errors.hpp"
#include "resfit/fit.hpp"
#include "resfit/format.hpp"
#include "resfit/io.hpp"
#include "resfit/notch.hpp"
#include "resfit/tls.hpp"
#include "resfit/trace.hpp"

namespace resfit {

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";
constexpr const char* kSchema = "resfit-result v1";

std::string iso_utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json record_base(const char* kind, bool with_timestamp) {
    json j;
    j["schema"] = kSchema;
    j["kind"] = kind;
    j["tool"] = {{"name", "resfit"}, {"version", kVersion}};
    if (with_timestamp) j["timestamp"] = iso_utc_now();
    return j;
}

json input_entry(const std::string& path) {
    json j;
    j["path"] = path;
    j["fnv1a64"] = fnv1a64_hex(read_text(path));
    return j;
}

json band_json(const Band& band) {
    json j;
    j["center"] = quantity(band.center_hz, "Hz");
    j["span"] = quantity(band.span_hz, "Hz");
    return j;
}

json delay_json(const DelayFit& d) {
    json j;
    j["tau"] = quantity(d.tau_s, "s");
    j["phase_intercept"] = quantity(d.phase_intercept_rad, "rad");
    j["rms_residual"] = quantity(d.rms_residual_rad, "rad");
    j["excluded_band"] = band_json(d.excluded_band);
    return j;
}

json fit_json(const ResonatorFit& f) {
    json j;
    j["f0"] = quantity(f.f0_hz, f.f0_sigma_hz, "Hz");
    j["q_total"] = quantity(f.q_total, f.q_total_sigma, "dimensionless");
    j["q_c"] = quantity(f.q_c, f.q_c_sigma, "dimensionless");
    j["delta_f"] = quantity(f.delta_f_hz, f.delta_f_sigma_hz, "Hz");
    j["phi0"] = quantity(f.phi0_rad, f.phi0_sigma_rad, "rad");
    if (f.q_i) {
        j["q_i"] = quantity(*f.q_i,
                            f.q_i_sigma ? *f.q_i_sigma
                                        : std::numeric_limits<double>::quiet_NaN(),
                            "dimensionless");
    }
    j["rms_residual"] = quantity(f.rms_residual_rad, "rad");
    j["n_iterations"] = quantity(f.n_iterations, "count");
    j["converged"] = f.converged;
    j["fit_band"] = band_json(f.fit_band);
    return j;
}

void write_record(const std::string& path, const json& record) {
    write_text_atomic(path, record.dump(2) + "\n");
}

void emit_error_record(const char* type, const std::string& message) {
    json j;
    j["error"] = {{"type", type}, {"message", message}};
    std::cerr << j.dump() << "\n";
}

double parse_csv_double(const std::string& token, const std::string& path,
                        std::size_t line, std::size_t col) {
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0') {
        throw data_error(path + ":" + std::to_string(line) + ":" +
                         std::to_string(col) + ": expected a number, got \"" +
                         token + "\"");
    }
    return v;
}

double median_of(std::vector<double> v) {
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid),
                     v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        m = 0.5 * (m + *std::max_element(
                           v.begin(),
                           v.begin() + static_cast<std::ptrdiff_t>(mid)));
    }
    return m;
}

// Defaults that the RESFIT_CONFIG environment variable can override; explicit
// flags take precedence over both.
struct ConfigDefaults {
    FitConfig fit;
    double saturation_exponent = 0.5;
};

ConfigDefaults load_config_defaults() {
    ConfigDefaults d;
    const char* path = std::getenv("RESFIT_CONFIG");
    if (path == nullptr || *path == '\0') return d;
    const json j = json::parse(read_text(path), nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw data_error(std::string("RESFIT_CONFIG (") + path +
                         "): not a JSON object");
    }
    if (j.contains("fit")) {
        const json& f = j["fit"];
        if (f.contains("max_iterations")) {
            d.fit.max_iterations = f["max_iterations"].get<int>();
        }
        if (f.contains("relative_tolerance")) {
            d.fit.relative_tolerance = f["relative_tolerance"].get<double>();
        }
        if (f.contains("damping_init")) {
            d.fit.damping_init = f["damping_init"].get<double>();
        }
    }
    if (j.contains("tls") && j["tls"].contains("saturation_exponent")) {
        d.saturation_exponent = j["tls"]["saturation_exponent"].get<double>();
    }
    return d;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOpts {
    double f0_ghz = 0.0;
    double q = 0.0;
    double qc = 0.0;
    double delta_ghz = 0.0;
    double phi0_deg = 0.0;
    double delay_ns = 0.0;
    double amp = 1.0;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    std::size_t narrow_points = 401;
    std::size_t wide_points = 2001;
    double narrow_span_lw = 2.0;
    double wide_span_factor = 1000.0;
    std::string device = "synthetic";
    int resonator = 1;
    std::optional<double> power_dbm;
    std::optional<double> temperature_mk;
    std::string out_wide;
    std::string out_narrow;
};

void run_synth(const SynthOpts& o) {
    const double f0 = o.f0_ghz * 1e9;
    const NotchParams params(f0, o.q, o.qc, o.delta_ghz * 1e9,
                             o.phi0_deg * std::numbers::pi / 180.0,
                             o.delay_ns * 1e-9, o.amp);
    const double linewidth = f0 / o.q;
    const Band narrow_band(f0, o.narrow_span_lw * linewidth);
    const Band wide_band(f0, o.narrow_span_lw * linewidth * o.wide_span_factor);

    TraceMeta meta;
    meta.device_id = o.device;
    meta.resonator_index = o.resonator;
    meta.power_dbm = o.power_dbm;
    meta.temperature_mk = o.temperature_mk;
    TraceMeta wide_meta = meta;
    wide_meta.scan_kind = ScanKind::wide;
    TraceMeta narrow_meta = meta;
    narrow_meta.scan_kind = ScanKind::narrow;

    // The narrow scan draws from an independent stream at seed + 1 so the two
    // files are individually reproducible.
    const Trace wide = synth_trace(params, wide_band, o.wide_points,
                                   {o.noise_sigma, o.seed}, wide_meta);
    const Trace narrow = synth_trace(params, narrow_band, o.narrow_points,
                                     {o.noise_sigma, o.seed + 1}, narrow_meta);
    write_trace_csv(o.out_wide, wide);
    write_trace_csv(o.out_narrow, narrow);
    std::cout << "wrote " << o.out_wide << " (" << wide.size() << " points) and "
              << o.out_narrow << " (" << narrow.size() << " points)\n";
}

// ---------------------------------------------------------------------------
// delay

struct DelayOpts {
    std::string wide;
    double center_ghz = 0.0;
    double span_ghz = 0.0;
    int order = 1;
    std::string out;
    bool no_timestamp = false;
};

void run_delay(const DelayOpts& o) {
    const Trace wide = read_trace_csv(o.wide);
    const Band narrow_band(o.center_ghz * 1e9, o.span_ghz * 1e9);
    const DelayFit d = fit_delay(wide, narrow_band, {o.order});

    json rec = record_base("delay_fit", !o.no_timestamp);
    rec["inputs"]["wide"] = input_entry(o.wide);
    rec["config"] = {{"background_order", o.order},
                     {"narrow_band_center_hz", narrow_band.center_hz},
                     {"narrow_band_span_hz", narrow_band.span_hz}};
    rec["delay"] = delay_json(d);
    char tau_buf[48];
    std::snprintf(tau_buf, sizeof(tau_buf), "%.6f", d.tau_s * 1e9);
    rec["summary"] = {{"tau_ns", tau_buf}};
    write_record(o.out, rec);
    std::cout << "tau = " << tau_buf << " ns (rms residual "
              << d.rms_residual_rad << " rad), wrote " << o.out << "\n";
}

// ---------------------------------------------------------------------------
// fit

struct FitOpts {
    std::string wide;
    std::string narrow;
    std::string out;
    std::string plot;
    int max_iter = 0;
    double rtol = 0.0;
    double damping = 0.0;
    bool max_iter_given = false;
    bool rtol_given = false;
    bool damping_given = false;
    bool no_timestamp = false;
};

std::string fit_plot_table(const Trace& wide, const Trace& narrow,
                           const PipelineResult& pr) {
    const Trace narrow_corr = correct(narrow, pr.delay);
    const Trace wide_corr = correct(wide, pr.delay);
    std::string out = "region,freq_hz,phase_data_rad,phase_model_rad,residual_rad\n";
    char buf[160];
    const auto append_region = [&](const char* region, const Trace& tr,
                                   bool align_branch) {
        const std::vector<double> data = unwrap_phase(tr);
        const std::vector<double> model = phase_model_curve(
            tr.freq(), pr.fit.f0_hz, pr.fit.q_total, pr.fit.q_c,
            pr.fit.delta_f_hz, pr.fit.phi0_rad);
        double shift = 0.0;
        if (align_branch) {
            std::vector<double> diffs(tr.size());
            for (std::size_t i = 0; i < tr.size(); ++i) {
                diffs[i] = data[i] - model[i];
            }
            shift = 2.0 * std::numbers::pi *
                    std::round(median_of(std::move(diffs)) /
                               (2.0 * std::numbers::pi));
        }
        for (std::size_t i = 0; i < tr.size(); ++i) {
            const double m = model[i] + shift;
            std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g\n",
                          region, tr.freq()[i], data[i], m, data[i] - m);
            out += buf;
        }
    };
    append_region("narrow", narrow_corr, false);
    append_region("wide", wide_corr, true);
    return out;
}

int run_fit(const FitOpts& o) {
    const ConfigDefaults defaults = load_config_defaults();
    FitConfig cfg = defaults.fit;
    if (o.max_iter_given) cfg.max_iterations = o.max_iter;
    if (o.rtol_given) cfg.relative_tolerance = o.rtol;
    if (o.damping_given) cfg.damping_init = o.damping;

    const Trace wide = read_trace_csv(o.wide);
    const Trace narrow = read_trace_csv(o.narrow);
    const PipelineResult pr = fit_pipeline(wide, narrow, cfg);

    json rec = record_base("resonator_fit", !o.no_timestamp);
    rec["inputs"]["wide"] = input_entry(o.wide);
    rec["inputs"]["narrow"] = input_entry(o.narrow);
    rec["config"] = {{"max_iterations", cfg.max_iterations},
                     {"relative_tolerance", cfg.relative_tolerance},
                     {"damping_init", cfg.damping_init}};
    rec["meta"] = meta_to_json(narrow.meta());
    rec["delay"] = delay_json(pr.delay);
    rec["fit"] = fit_json(pr.fit);
    rec["fit"]["extrapolation_rms"] = quantity(pr.extrapolation_rms_rad, "rad");
    json summary;
    summary["f0_ghz"] = format_ghz(pr.fit.f0_hz);
    summary["f0_hz"] = format_value_sigma(pr.fit.f0_hz, pr.fit.f0_sigma_hz);
    summary["q_total"] = format_value_sigma(pr.fit.q_total, pr.fit.q_total_sigma);
    summary["q_c"] = format_value_sigma(pr.fit.q_c, pr.fit.q_c_sigma);
    if (pr.fit.q_i) {
        summary["q_i"] = format_value_sigma(
            *pr.fit.q_i, pr.fit.q_i_sigma
                             ? *pr.fit.q_i_sigma
                             : std::numeric_limits<double>::quiet_NaN());
    }
    rec["summary"] = summary;

    std::string plot;
    if (!o.plot.empty()) plot = fit_plot_table(wide, narrow, pr);
    write_record(o.out, rec);
    if (!o.plot.empty()) write_text_atomic(o.plot, plot);

    std::cout << "f0 = " << format_ghz(pr.fit.f0_hz) << " GHz, Q = "
              << format_value_sigma(pr.fit.q_total, pr.fit.q_total_sigma)
              << ", Qc = "
              << format_value_sigma(pr.fit.q_c, pr.fit.q_c_sigma);
    if (pr.fit.q_i) {
        std::cout << ", Qi = "
                  << format_value_sigma(
                         *pr.fit.q_i,
                         pr.fit.q_i_sigma
                             ? *pr.fit.q_i_sigma
                             : std::numeric_limits<double>::quiet_NaN());
    }
    std::cout << ", wrote " << o.out << "\n";
    if (!pr.fit.converged) {
        emit_error_record("numerical", "fit did not converge (record written to " +
                                           o.out + ")");
        return 4;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// cpw

struct CpwOpts {
    double width_um = 0.0;
    double gap_um = 0.0;
    double eps_r = 0.0;
    double tan_delta = 0.0;
    double length_mm = 0.0;
    double lki_nh_per_m = 0.0;
    bool length_given = false;
    std::string out;
    bool no_timestamp = false;
};

void run_cpw(const CpwOpts& o) {
    const CpwGeometry geom{o.width_um * 1e-6, o.gap_um * 1e-6, o.eps_r,
                           o.tan_delta};
    const LineParams line = line_params(geom);

    json rec = record_base("cpw_line", !o.no_timestamp);
    rec["geometry"] = {{"center_width", quantity(geom.center_width_m, "m")},
                       {"gap", quantity(geom.gap_m, "m")},
                       {"substrate_eps_r",
                        quantity(geom.substrate_eps_r, "dimensionless")},
                       {"tan_delta", quantity(geom.tan_delta, "dimensionless")}};
    rec["line"] = {{"l_per_len", quantity(line.l_per_len, "H/m")},
                   {"c_per_len", quantity(line.c_per_len, "F/m")},
                   {"z0", quantity(line.z0_ohm, "ohm")},
                   {"eps_eff", quantity(line.eps_eff, "dimensionless")}};
    char z0_buf[32];
    std::snprintf(z0_buf, sizeof(z0_buf), "%.4f", line.z0_ohm);
    rec["summary"] = {{"z0_ohm", z0_buf}};
    if (o.length_given) {
        const double length = o.length_mm * 1e-3;
        const double lki = o.lki_nh_per_m * 1e-9;
        const double f0 = quarter_wave_freq_hz(line, length, lki);
        rec["quarter_wave"] = {{"length", quantity(length, "m")},
                               {"l_ki", quantity(lki, "H/m")},
                               {"f0", quantity(f0, "Hz")}};
        rec["summary"]["f0_ghz"] = format_ghz(f0);
    }
    write_record(o.out, rec);
    std::cout << "z0 = " << z0_buf << " ohm, eps_eff = " << line.eps_eff
              << ", L = " << line.l_per_len * 1e9 << " nH/m, C = "
              << line.c_per_len * 1e12 << " pF/m";
    if (o.length_given && rec.contains("quarter_wave")) {
        std::cout << ", f0 = " << rec["summary"]["f0_ghz"].get<std::string>()
                  << " GHz";
    }
    std::cout << ", wrote " << o.out << "\n";
}

// ---------------------------------------------------------------------------
// ki

struct KiOpts {
    std::string tones;
    double l_geom_nh_per_m = 0.0;
    std::string out;
    std::string plot;
    std::size_t curve_points = 201;
    bool no_timestamp = false;
};

void run_ki(const KiOpts& o) {
    const std::string text = read_text(o.tones);
    std::vector<std::pair<double, double>> pairs; // (f_meas, f_model)
    {
        std::size_t line_no = 0;
        std::string::size_type start = 0;
        while (start <= text.size()) {
            const auto nl = text.find('\n', start);
            std::string line = nl == std::string::npos
                                   ? text.substr(start)
                                   : text.substr(start, nl - start);
            start = nl == std::string::npos ? text.size() + 1 : nl + 1;
            ++line_no;
            while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
                line.pop_back();
            }
            if (line_no == 1) {
                if (line != "f_meas_hz,f_model_hz") {
                    throw data_error(o.tones +
                                     ":1: expected header \"f_meas_hz,f_model_hz\"");
                }
                continue;
            }
            if (line.empty()) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos) {
                throw data_error(o.tones + ":" + std::to_string(line_no) +
                                 ": expected 2 fields");
            }
            pairs.emplace_back(
                parse_csv_double(line.substr(0, comma), o.tones, line_no, 1),
                parse_csv_double(line.substr(comma + 1), o.tones, line_no, 2));
        }
    }
    if (pairs.empty()) {
        throw data_error(o.tones + ": no tone rows");
    }
    const double l_geom = o.l_geom_nh_per_m * 1e-9;

    json tones = json::array();
    std::vector<KiResult> per_tone;
    for (const auto& [f_meas, f_model] : pairs) {
        const KiResult r = extract_lki(f_meas, f_model, l_geom);
        per_tone.push_back(r);
        json t;
        t["f_meas"] = quantity(r.f_meas_hz, "Hz");
        t["f_model"] = quantity(r.f_model_hz, "Hz");
        t["l_ki"] = quantity(r.l_ki, "H/m");
        t["freq_ratio"] = quantity(r.freq_ratio, "dimensionless");
        tones.push_back(std::move(t));
    }
    const DeviceKiFit device = fit_device_lki(pairs, l_geom);

    json rec = record_base("kinetic_inductance", !o.no_timestamp);
    rec["inputs"]["tones"] = input_entry(o.tones);
    rec["config"] = {{"l_geom_h_per_m", l_geom}};
    rec["tones"] = std::move(tones);
    rec["device_fit"] = {{"l_ki", quantity(device.l_ki, "H/m")},
                         {"rms", quantity(device.rms_hz, "Hz")},
                         {"n_tones", quantity(static_cast<double>(device.n_tones),
                                              "count")}};
    char lki_buf[32];
    std::snprintf(lki_buf, sizeof(lki_buf), "%.4f", device.l_ki * 1e9);
    rec["summary"] = {{"device_l_ki_nh_per_m", lki_buf}};

    std::string plot;
    if (!o.plot.empty()) {
        double lki_max = device.l_ki;
        for (const KiResult& r : per_tone) lki_max = std::max(lki_max, r.l_ki);
        lki_max = lki_max > 0.0 ? 1.5 * lki_max : 1e-7;
        plot = "series,l_ki_h_per_m,f_hz\n";
        char buf[128];
        for (std::size_t j = 0; j < pairs.size(); ++j) {
            const double f_model = pairs[j].second;
            for (std::size_t i = 0; i < o.curve_points; ++i) {
                const double lki = lki_max * static_cast<double>(i) /
                                   static_cast<double>(o.curve_points - 1);
                const double f =
                    f_model * std::sqrt(l_geom / (l_geom + lki));
                std::snprintf(buf, sizeof(buf), "tone%zu,%.17g,%.17g\n", j + 1,
                              lki, f);
                plot += buf;
            }
        }
        for (std::size_t j = 0; j < pairs.size(); ++j) {
            std::snprintf(buf, sizeof(buf), "extracted,%.17g,%.17g\n",
                          per_tone[j].l_ki, per_tone[j].f_meas_hz);
            plot += buf;
        }
        for (std::size_t j = 0; j < pairs.size(); ++j) {
            const double f = pairs[j].second *
                             std::sqrt(l_geom / (l_geom + device.l_ki));
            std::snprintf(buf, sizeof(buf), "device,%.17g,%.17g\n", device.l_ki,
                          f);
            plot += buf;
        }
    }
    write_record(o.out, rec);
    if (!o.plot.empty()) write_text_atomic(o.plot, plot);
    std::cout << "device l_ki = " << lki_buf << " nH/m over " << device.n_tones
              << " tones (rms " << device.rms_hz << " Hz), wrote " << o.out
              << "\n";
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOpts {
    std::string in_dir;
    std::string out;
    std::string plot;
    double eps_saturated = 0.05;
    double eps_dependent = 0.2;
    double law_frequency_ghz = 0.0;
    bool law_given = false;
    double exponent = 0.0;
    bool exponent_given = false;
    bool include_unconverged = false;
    bool no_timestamp = false;
};

std::string sweep_plot_table(const QiSurface& s) {
    std::string out = "temperature_mk,power_dbm,qi,qi_sigma,regime\n";
    char buf[160];
    for (std::size_t p = 0; p < s.powers_dbm.size(); ++p) {
        for (std::size_t t = 0; t < s.temperatures_mk.size(); ++t) {
            const auto& cell = s.cells[t][p];
            if (!cell) continue;
            std::string sigma;
            if (std::isfinite(cell->sigma)) {
                std::snprintf(buf, sizeof(buf), "%.17g", cell->sigma);
                sigma = buf;
            }
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%s,%s\n",
                          s.temperatures_mk[t], s.powers_dbm[p], cell->value,
                          sigma.c_str(), to_string(s.regimes[t][p]));
            out += buf;
        }
    }
    return out;
}

void run_sweep(const SweepOpts& o) {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    {
        std::error_code ec;
        fs::directory_iterator it(o.in_dir, ec);
        if (ec) {
            throw data_error("cannot list directory " + o.in_dir + ": " +
                             ec.message());
        }
        for (const auto& entry : it) {
            if (entry.is_regular_file() && entry.path().extension() == ".json") {
                files.push_back(entry.path().string());
            }
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw data_error("no .json result files in " + o.in_dir);
    }

    std::vector<FitWithMeta> usable;
    json inputs = json::array();
    int skipped_unconverged = 0;
    int skipped_no_qi = 0;
    for (const std::string& path : files) {
        const std::string text = read_text(path);
        const json rec = json::parse(text, nullptr, false);
        if (rec.is_discarded()) {
            throw data_error(path + ": not valid JSON");
        }
        if (rec.value("schema", "") != kSchema ||
            rec.value("kind", "") != "resonator_fit") {
            throw data_error(path + ": not a \"" + kSchema +
                             "\" resonator_fit record");
        }
        json in;
        in["path"] = path;
        in["fnv1a64"] = fnv1a64_hex(text);
        inputs.push_back(std::move(in));

        const json& fj = rec.at("fit");
        const bool converged = fj.value("converged", false);
        if (!converged && !o.include_unconverged) {
            ++skipped_unconverged;
            continue;
        }
        if (!fj.contains("q_i")) {
            ++skipped_no_qi;
            continue;
        }
        FitWithMeta fm;
        fm.meta = meta_from_json(rec.at("meta"), path);
        fm.fit.converged = converged;
        fm.fit.q_i = fj["q_i"].at("value").get<double>();
        if (fj["q_i"].contains("sigma")) {
            fm.fit.q_i_sigma = fj["q_i"]["sigma"].get<double>();
        }
        usable.push_back(std::move(fm));
    }
    if (usable.empty()) {
        throw data_error("no usable resonator fits in " + o.in_dir + " (" +
                         std::to_string(skipped_unconverged) + " unconverged, " +
                         std::to_string(skipped_no_qi) + " without q_i)");
    }

    QiSurface surface = aggregate(usable);
    RegimeOptions ropts;
    ropts.eps_saturated = o.eps_saturated;
    ropts.eps_dependent = o.eps_dependent;
    const RegimeReport report = classify_regimes(surface, ropts);

    json rec = record_base("qi_surface", !o.no_timestamp);
    rec["inputs"]["results"] = std::move(inputs);
    rec["config"] = {{"eps_saturated", o.eps_saturated},
                     {"eps_dependent", o.eps_dependent},
                     {"include_unconverged", o.include_unconverged},
                     {"skipped_unconverged", skipped_unconverged},
                     {"skipped_no_qi", skipped_no_qi}};
    rec["surface"] = surface_to_json(surface);
    json rr;
    rr["row_ratio"] = json::array();
    for (double r : report.row_ratio) {
        rr["row_ratio"].push_back(
            std::isfinite(r) ? quantity(r, "dimensionless") : json(nullptr));
    }
    rr["boundary_t"] = json::array();
    for (const auto& b : report.boundary_t_mk) {
        rr["boundary_t"].push_back(b ? quantity(*b, "mK") : json(nullptr));
    }
    rr["qi_monotone_in_t"] = report.qi_monotone_in_t;
    rr["notes"] = report.notes;
    rec["regimes_report"] = std::move(rr);

    if (o.law_given) {
        ConfigDefaults defaults = load_config_defaults();
        TlsLawConfig lcfg;
        lcfg.saturation_exponent =
            o.exponent_given ? o.exponent : defaults.saturation_exponent;
        const TlsLawFit law = fit_tls_law(surface, o.law_frequency_ghz * 1e9, lcfg);
        rec["tls_law"] = {
            {"f_delta0", quantity(law.f_delta0, "dimensionless")},
            {"p_c", quantity(law.p_c_dbm, "dBm")},
            {"q_other", quantity(law.q_other, "dimensionless")},
            {"rms_log", quantity(law.rms_log, "dimensionless")},
            {"n_iterations", quantity(law.n_iterations, "count")},
            {"converged", law.converged},
            {"frequency", quantity(o.law_frequency_ghz * 1e9, "Hz")},
            {"saturation_exponent",
             quantity(lcfg.saturation_exponent, "dimensionless")}};
    }

    std::string plot;
    if (!o.plot.empty()) plot = sweep_plot_table(surface);
    write_record(o.out, rec);
    if (!o.plot.empty()) write_text_atomic(o.plot, plot);
    std::cout << "surface " << surface.temperatures_mk.size() << " x "
              << surface.powers_dbm.size() << " from " << usable.size()
              << " fits, wrote " << o.out << "\n";
}

// ---------------------------------------------------------------------------
// report

struct ReportOpts {
    std::string a;
    std::string b;
    std::string out;
    std::string plot;
    bool no_timestamp = false;
};

void run_report(const ReportOpts& o) {
    const auto load_surface = [](const std::string& path) {
        const json rec = json::parse(read_text(path), nullptr, false);
        if (rec.is_discarded()) {
            throw data_error(path + ": not valid JSON");
        }
        if (rec.value("kind", "") != "qi_surface" || !rec.contains("surface")) {
            throw data_error(path + ": not a qi_surface record");
        }
        return surface_from_json(rec["surface"], path);
    };
    const QiSurface sa = load_surface(o.a);
    const QiSurface sb = load_surface(o.b);

    struct CommonCell {
        double t;
        double p;
        double qi_a;
        double qi_b;
    };
    std::vector<CommonCell> common;
    for (std::size_t ta = 0; ta < sa.temperatures_mk.size(); ++ta) {
        const auto tb_it =
            std::find(sb.temperatures_mk.begin(), sb.temperatures_mk.end(),
                      sa.temperatures_mk[ta]);
        if (tb_it == sb.temperatures_mk.end()) continue;
        const auto tb =
            static_cast<std::size_t>(tb_it - sb.temperatures_mk.begin());
        for (std::size_t pa = 0; pa < sa.powers_dbm.size(); ++pa) {
            const auto pb_it = std::find(sb.powers_dbm.begin(),
                                         sb.powers_dbm.end(), sa.powers_dbm[pa]);
            if (pb_it == sb.powers_dbm.end()) continue;
            const auto pb =
                static_cast<std::size_t>(pb_it - sb.powers_dbm.begin());
            if (!sa.cells[ta][pa] || !sb.cells[tb][pb]) continue;
            common.push_back({sa.temperatures_mk[ta], sa.powers_dbm[pa],
                              sa.cells[ta][pa]->value, sb.cells[tb][pb]->value});
        }
    }
    if (common.empty()) {
        throw data_error("the two surfaces share no (temperature, power) cells");
    }
    std::vector<double> ratios;
    ratios.reserve(common.size());
    for (const CommonCell& c : common) ratios.push_back(c.qi_b / c.qi_a);
    const double med = median_of(ratios);

    json rec = record_base("surface_comparison", !o.no_timestamp);
    rec["inputs"]["a"] = input_entry(o.a);
    rec["inputs"]["b"] = input_entry(o.b);
    rec["devices"] = {{"a", sa.device_id}, {"b", sb.device_id}};
    rec["comparison"] = {
        {"n_common_cells", quantity(static_cast<double>(common.size()), "count")},
        {"median_ratio_b_over_a", quantity(med, "dimensionless")}};
    char med_buf[32];
    std::snprintf(med_buf, sizeof(med_buf), "%.4f", med);
    rec["summary"] = {{"median_ratio_b_over_a", med_buf}};

    std::string plot;
    if (!o.plot.empty()) {
        plot = "temperature_mk,power_dbm,qi_a,qi_b,ratio_b_over_a\n";
        char buf[160];
        for (const CommonCell& c : common) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g\n",
                          c.t, c.p, c.qi_a, c.qi_b, c.qi_b / c.qi_a);
            plot += buf;
        }
    }
    write_record(o.out, rec);
    if (!o.plot.empty()) write_text_atomic(o.plot, plot);
    std::cout << "median Qi ratio (b/a) = " << med_buf << " over "
              << common.size() << " cells, wrote " << o.out << "\n";
}

} // namespace

int cli_dispatch(const std::vector<std::string>& args) {
    CLI::App app{"Notch-resonator characterization toolkit: synthetic traces, "
                 "electrical-delay correction, phase fits, transmission-line "
                 "math, and Qi sweep analysis."};
    app.name("resfit");
    app.set_version_flag("--version", std::string("resfit ") + kVersion);
    app.require_subcommand(1);

    SynthOpts so;
    CLI::App* synth = app.add_subcommand(
        "synth", "Generate a synthetic wide+narrow trace pair");
    synth->add_option("--f0-ghz", so.f0_ghz, "Resonance frequency (GHz)")
        ->required();
    synth->add_option("--q", so.q, "Total quality factor")->required();
    synth->add_option("--qc", so.qc, "Coupling quality factor")->required();
    synth->add_option("--delta-ghz", so.delta_ghz,
                      "Asymmetry detuning (GHz)")->capture_default_str();
    synth->add_option("--phi0-deg", so.phi0_deg,
                      "Global phase offset (degrees)")->capture_default_str();
    synth->add_option("--delay-ns", so.delay_ns,
                      "Electrical delay (ns)")->capture_default_str();
    synth->add_option("--amp", so.amp, "Amplitude scale")->capture_default_str();
    synth->add_option("--noise-sigma", so.noise_sigma,
                      "Gaussian noise sigma per quadrature")
        ->capture_default_str();
    synth->add_option("--seed", so.seed,
                      "Noise seed; the narrow scan uses seed + 1")
        ->capture_default_str();
    synth->add_option("--narrow-points", so.narrow_points,
                      "Samples in the narrow scan")->capture_default_str();
    synth->add_option("--wide-points", so.wide_points,
                      "Samples in the wide scan")->capture_default_str();
    synth->add_option("--narrow-span-lw", so.narrow_span_lw,
                      "Narrow span in linewidths (f0/Q)")->capture_default_str();
    synth->add_option("--wide-span-factor", so.wide_span_factor,
                      "Wide span as a multiple of the narrow span; keep large "
                      "so the resonator's phase tails do not bias the delay fit")
        ->capture_default_str();
    synth->add_option("--device", so.device, "Device id for the metadata")
        ->capture_default_str();
    synth->add_option("--resonator", so.resonator,
                      "Resonator index (1-4)")->capture_default_str();
    synth->add_option("--power-dbm", so.power_dbm, "Drive power metadata (dBm)");
    synth->add_option("--temperature-mk", so.temperature_mk,
                      "Temperature metadata (mK)");
    synth->add_option("--out-wide", so.out_wide, "Wide trace output path")
        ->required();
    synth->add_option("--out-narrow", so.out_narrow, "Narrow trace output path")
        ->required();
    synth->callback([&]() { run_synth(so); });

    DelayOpts dopt;
    CLI::App* delay = app.add_subcommand(
        "delay", "Fit the electrical delay of a wide scan");
    delay->add_option("--wide", dopt.wide, "Wide trace file")->required();
    delay->add_option("--center-ghz", dopt.center_ghz,
                      "Narrow-band center to exclude (GHz)")->required();
    delay->add_option("--span-ghz", dopt.span_ghz,
                      "Narrow-band span; 3x this is excluded (GHz)")->required();
    delay->add_option("--order", dopt.order,
                      "Phase background order (1 or 2)")->capture_default_str();
    delay->add_option("--out", dopt.out, "Result record path")->required();
    delay->add_flag("--no-timestamp", dopt.no_timestamp,
                    "Omit the timestamp field");
    delay->callback([&]() { run_delay(dopt); });

    FitOpts fo;
    int fit_rc = 0;
    CLI::App* fit = app.add_subcommand(
        "fit", "Full pipeline: delay fit, correction, phase fit");
    fit->add_option("--wide", fo.wide, "Wide trace file")->required();
    fit->add_option("--narrow", fo.narrow, "Narrow trace file")->required();
    fit->add_option("--out", fo.out, "Result record path")->required();
    fit->add_option("--plot", fo.plot, "Phase/residual table output path");
    CLI::Option* mi = fit->add_option("--max-iter", fo.max_iter,
                                      "Iteration cap for the phase fit");
    CLI::Option* rt = fit->add_option("--rtol", fo.rtol,
                                      "Relative step tolerance");
    CLI::Option* dp = fit->add_option("--damping", fo.damping,
                                      "Initial damping factor");
    fit->add_flag("--no-timestamp", fo.no_timestamp, "Omit the timestamp field");
    fit->callback([&]() {
        fo.max_iter_given = mi->count() > 0;
        fo.rtol_given = rt->count() > 0;
        fo.damping_given = dp->count() > 0;
        fit_rc = run_fit(fo);
    });

    CpwOpts co;
    CLI::App* cpw = app.add_subcommand(
        "cpw", "Coplanar-waveguide line constants and quarter-wave frequency");
    cpw->add_option("--width-um", co.width_um, "Center conductor width (um)")
        ->required();
    cpw->add_option("--gap-um", co.gap_um, "Gap width (um)")->required();
    cpw->add_option("--eps-r", co.eps_r, "Substrate relative permittivity")
        ->required();
    cpw->add_option("--tan-delta", co.tan_delta,
                    "Substrate loss tangent (recorded only)")
        ->capture_default_str();
    CLI::Option* len = cpw->add_option("--length-mm", co.length_mm,
                                       "Resonator length (mm)");
    cpw->add_option("--lki-nh-per-m", co.lki_nh_per_m,
                    "Kinetic inductance per length (nH/m)")
        ->capture_default_str();
    cpw->add_option("--out", co.out, "Result record path")->required();
    cpw->add_flag("--no-timestamp", co.no_timestamp, "Omit the timestamp field");
    cpw->callback([&]() {
        co.length_given = len->count() > 0;
        run_cpw(co);
    });

    KiOpts ko;
    CLI::App* ki = app.add_subcommand(
        "ki", "Kinetic inductance from measured/modeled tone frequencies");
    ki->add_option("--tones", ko.tones,
                   "CSV of f_meas_hz,f_model_hz rows")->required();
    ki->add_option("--l-geom-nh-per-m", ko.l_geom_nh_per_m,
                   "Geometric inductance per length (nH/m)")->required();
    ki->add_option("--out", ko.out, "Result record path")->required();
    ki->add_option("--plot", ko.plot, "Frequency-vs-l_ki curve table path");
    ki->add_option("--curve-points", ko.curve_points,
                   "Points per plotted curve")->capture_default_str();
    ki->add_flag("--no-timestamp", ko.no_timestamp, "Omit the timestamp field");
    ki->callback([&]() { run_ki(ko); });

    SweepOpts swo;
    CLI::App* sweep = app.add_subcommand(
        "sweep", "Aggregate fit records into a Qi(T, P) surface");
    sweep->add_option("--in-dir", swo.in_dir,
                      "Directory of resonator_fit .json records")->required();
    sweep->add_option("--out", swo.out, "Result record path")->required();
    sweep->add_option("--plot", swo.plot, "Qi-vs-T-per-power table path");
    sweep->add_option("--eps-saturated", swo.eps_saturated,
                      "Flat-row ratio threshold")->capture_default_str();
    sweep->add_option("--eps-dependent", swo.eps_dependent,
                      "Power-dependent ratio threshold")->capture_default_str();
    CLI::Option* lawf = sweep->add_option(
        "--law-frequency-ghz", swo.law_frequency_ghz,
        "Also fit the temperature/power loss law at this frequency (GHz)");
    CLI::Option* expo = sweep->add_option(
        "--exponent", swo.exponent, "Saturation exponent for the loss law");
    sweep->add_flag("--include-unconverged", swo.include_unconverged,
                    "Use records whose fit did not converge");
    sweep->add_flag("--no-timestamp", swo.no_timestamp,
                    "Omit the timestamp field");
    sweep->callback([&]() {
        swo.law_given = lawf->count() > 0;
        swo.exponent_given = expo->count() > 0;
        run_sweep(swo);
    });

    ReportOpts ro;
    CLI::App* report = app.add_subcommand(
        "report", "Compare two Qi surfaces cell by cell");
    report->add_option("--a", ro.a, "First qi_surface record")->required();
    report->add_option("--b", ro.b, "Second qi_surface record")->required();
    report->add_option("--out", ro.out, "Result record path")->required();
    report->add_option("--plot", ro.plot, "Side-by-side table path");
    report->add_flag("--no-timestamp", ro.no_timestamp,
                     "Omit the timestamp field");
    report->callback([&]() { run_report(ro); });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        std::cout << "resfit " << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        emit_error_record("usage", e.what());
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    } catch (const data_error& e) {
        emit_error_record("data", e.what());
        return 3;
    } catch (const numerical_error& e) {
        emit_error_record("numerical", e.what());
        return 4;
    } catch (const std::exception& e) {
        emit_error_record("internal", e.what());
        return 4;
    }
    return fit_rc;
}

} // namespace resfit
