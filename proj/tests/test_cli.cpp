#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "doctest.h"
#include "helpers.hpp"
#include "resfit/cli.hpp"
#include "resfit/cpw.hpp"
#include "resfit/format.hpp"
#include "resfit/io.hpp"
#include "resfit/tls.hpp"
#include "resfit/trace.hpp"

using namespace resfit;
using nlohmann::json;
using testutil::TempDir;
using testutil::rel_err;

namespace {

int run(std::initializer_list<std::string> args) {
    return cli_dispatch(std::vector<std::string>(args));
}

json load_json(const std::string& path) { return json::parse(read_text(path)); }

// Minimal but schema-conformant resonator-fit record for sweep input.
void write_fit_record(const std::string& path, const std::string& dev,
                      double t_mk, double p_dbm, double qi, bool converged,
                      bool with_qi = true) {
    json rec;
    rec["schema"] = "resfit-result v1";
    rec["kind"] = "resonator_fit";
    rec["meta"] = {{"device_id", dev},
                   {"resonator_index", 1},
                   {"temperature_mk", t_mk},
                   {"power_dbm", p_dbm}};
    rec["fit"]["converged"] = converged;
    if (with_qi) {
        rec["fit"]["q_i"] = {
            {"value", qi}, {"sigma", qi * 1e-3}, {"unit", "dimensionless"}};
    }
    write_text_atomic(path, rec.dump(2) + "\n");
}

} // namespace

TEST_SUITE("cli") {

TEST_CASE("help and usage exit codes") {
    CHECK(run({"--help"}) == 0);
    CHECK(run({"synth", "--help"}) == 0);
    CHECK(run({"fit", "--help"}) == 0);
    CHECK(run({}) == 2);
    CHECK(run({"frobnicate"}) == 2);
    CHECK(run({"fit", "--no-such-flag"}) == 2);
    CHECK(run({"--version"}) == 0);
}

TEST_CASE("synthesis writes deterministic, readable scan pairs") {
    TempDir dir("cli_synth");
    const auto wide1 = dir.file("w1.csv");
    const auto narrow1 = dir.file("n1.csv");
    CHECK(run({"synth", "--f0-ghz", "3.88", "--q", "3e5", "--qc", "4e5",
               "--delay-ns", "40", "--noise-sigma", "1e-3", "--seed", "7",
               "--device", "devS", "--power-dbm", "-75", "--temperature-mk",
               "25", "--out-wide", wide1, "--out-narrow", narrow1}) == 0);

    const Trace wide = read_trace_csv(wide1);
    const Trace narrow = read_trace_csv(narrow1);
    CHECK(wide.size() == 2001);
    CHECK(narrow.size() == 401);
    CHECK(wide.meta().device_id == "devS");
    CHECK(wide.meta().scan_kind == ScanKind::wide);
    CHECK(narrow.meta().scan_kind == ScanKind::narrow);
    CHECK(narrow.meta().power_dbm == -75.0);
    CHECK(narrow.meta().temperature_mk == 25.0);
    // narrow span: 2 linewidths around f0; wide: 1000x narrow span
    const double lw = 3.88e9 / 3e5;
    CHECK(narrow.span_hz() == doctest::Approx(2.0 * lw).epsilon(1e-9));
    CHECK(wide.span_hz() == doctest::Approx(2000.0 * lw).epsilon(1e-9));

    const auto wide2 = dir.file("w2.csv");
    const auto narrow2 = dir.file("n2.csv");
    CHECK(run({"synth", "--f0-ghz", "3.88", "--q", "3e5", "--qc", "4e5",
               "--delay-ns", "40", "--noise-sigma", "1e-3", "--seed", "7",
               "--device", "devS", "--power-dbm", "-75", "--temperature-mk",
               "25", "--out-wide", wide2, "--out-narrow", narrow2}) == 0);
    CHECK(read_text(wide1) == read_text(wide2));
    CHECK(read_text(narrow1) == read_text(narrow2));

    const auto wide3 = dir.file("w3.csv");
    const auto narrow3 = dir.file("n3.csv");
    CHECK(run({"synth", "--f0-ghz", "3.88", "--q", "3e5", "--qc", "4e5",
               "--delay-ns", "40", "--noise-sigma", "1e-3", "--seed", "8",
               "--out-wide", wide3, "--out-narrow", narrow3}) == 0);
    CHECK(read_text(wide1) != read_text(wide3));

    SUBCASE("invalid generator parameters exit with a data error") {
        CHECK(run({"synth", "--f0-ghz", "3.88", "--q", "4e5", "--qc", "3e5",
                   "--out-wide", dir.file("x.csv"), "--out-narrow",
                   dir.file("y.csv")}) == 3);
        CHECK_FALSE(std::filesystem::exists(dir.file("x.csv")));
    }
}

TEST_CASE("noiseless synth-fit loop returns the generator values") {
    TempDir dir("cli_fit0");
    const auto w = dir.file("w.csv");
    const auto n = dir.file("n.csv");
    const auto out = dir.file("fit.json");
    REQUIRE(run({"synth", "--f0-ghz", "3.88", "--q", "3e5", "--qc", "4e5",
                 "--delay-ns", "40", "--phi0-deg", "20", "--device", "dev0",
                 "--out-wide", w, "--out-narrow", n}) == 0);
    REQUIRE(run({"fit", "--wide", w, "--narrow", n, "--out", out,
                 "--no-timestamp"}) == 0);

    const json rec = load_json(out);
    CHECK(rec.at("schema") == "resfit-result v1");
    CHECK(rec.at("kind") == "resonator_fit");
    CHECK_FALSE(rec.contains("timestamp"));
    CHECK(rec.at("fit").at("converged") == true);
    CHECK(rel_err(rec["fit"]["f0"]["value"].get<double>(), 3.88e9) < 1e-9);
    CHECK(rel_err(rec["fit"]["q_total"]["value"].get<double>(), 3e5) < 1e-4);
    CHECK(rel_err(rec["fit"]["q_c"]["value"].get<double>(), 4e5) < 1e-4);
    CHECK(rel_err(rec["fit"]["q_i"]["value"].get<double>(),
                  1.0 / (1.0 / 3e5 - 1.0 / 4e5)) < 1e-3);
    CHECK(rel_err(rec["delay"]["tau"]["value"].get<double>(), 40e-9) < 1e-3);
    // input digests: 16 lowercase hex characters each
    const std::string dig = rec["inputs"]["wide"]["fnv1a64"].get<std::string>();
    CHECK(dig.size() == 16);
    CHECK(dig.find_first_not_of("0123456789abcdef") == std::string::npos);
    CHECK(rec["inputs"]["wide"]["fnv1a64"] != rec["inputs"]["narrow"]["fnv1a64"]);
    CHECK(rec["meta"]["device_id"] == "dev0");
    CHECK(rec["summary"].contains("f0_ghz"));
    CHECK(rec["summary"].contains("q_total"));
    CHECK(rec["config"]["max_iterations"].get<int>() == 200);
}

TEST_CASE("fit records and plot tables are byte-stable") {
    TempDir dir("cli_det");
    const auto w = dir.file("w.csv");
    const auto n = dir.file("n.csv");
    REQUIRE(run({"synth", "--f0-ghz", "4.492", "--q", "5e5", "--qc", "8.178e5",
                 "--delay-ns", "35", "--noise-sigma", "1e-3", "--seed", "42",
                 "--out-wide", w, "--out-narrow", n}) == 0);
    const auto o1 = dir.file("a.json");
    const auto o2 = dir.file("b.json");
    const auto p1 = dir.file("a.csv");
    const auto p2 = dir.file("b.csv");
    REQUIRE(run({"fit", "--wide", w, "--narrow", n, "--out", o1, "--plot", p1,
                 "--no-timestamp"}) == 0);
    REQUIRE(run({"fit", "--wide", w, "--narrow", n, "--out", o2, "--plot", p2,
                 "--no-timestamp"}) == 0);
    CHECK(read_text(o1) == read_text(o2));
    CHECK(read_text(p1) == read_text(p2));
    const std::string plot = read_text(p1);
    CHECK(plot.rfind("region,freq_hz,phase_data_rad,phase_model_rad,residual_rad\n",
                     0) == 0);
    CHECK(plot.find("narrow,") != std::string::npos);
    CHECK(plot.find("wide,") != std::string::npos);
}

TEST_CASE("an unconvergeable fit still writes its record and exits loudly") {
    TempDir dir("cli_nc");
    const auto w = dir.file("w.csv");
    const auto n = dir.file("n.csv");
    const auto out = dir.file("fit.json");
    REQUIRE(run({"synth", "--f0-ghz", "3.88", "--q", "3e5", "--qc", "4e5",
                 "--noise-sigma", "1e-3", "--seed", "5", "--out-wide", w,
                 "--out-narrow", n}) == 0);
    CHECK(run({"fit", "--wide", w, "--narrow", n, "--out", out, "--max-iter",
               "1", "--no-timestamp"}) == 4);
    const json rec = load_json(out);
    CHECK(rec["fit"]["converged"] == false);
    CHECK(rec["config"]["max_iterations"].get<int>() == 1);
    CHECK_FALSE(rec["fit"]["f0"].contains("sigma"));
}

TEST_CASE("missing input files are data errors") {
    TempDir dir("cli_missing");
    CHECK(run({"fit", "--wide", dir.file("no.csv"), "--narrow",
               dir.file("no2.csv"), "--out", dir.file("o.json")}) == 3);
    CHECK_FALSE(std::filesystem::exists(dir.file("o.json")));
}

TEST_CASE("delay subcommand fits the wide-scan slope") {
    TempDir dir("cli_delay");
    const auto w = dir.file("w.csv");
    const auto n = dir.file("n.csv");
    const auto out = dir.file("delay.json");
    REQUIRE(run({"synth", "--f0-ghz", "4", "--q", "2e5", "--qc", "3e5",
                 "--delay-ns", "40", "--out-wide", w, "--out-narrow", n}) == 0);
    // narrow span = 2 linewidths = 40 kHz at f0/q = 20 kHz
    CHECK(run({"delay", "--wide", w, "--center-ghz", "4", "--span-ghz", "4e-5",
               "--out", out, "--no-timestamp"}) == 0);
    const json rec = load_json(out);
    CHECK(rec.at("kind") == "delay_fit");
    CHECK(rel_err(rec["delay"]["tau"]["value"].get<double>(), 40e-9) < 1e-3);
    CHECK(rec["delay"]["excluded_band"]["span"]["value"].get<double>() ==
          doctest::Approx(1.2e5).epsilon(1e-12));
    CHECK(rec["summary"].contains("tau_ns"));
}

TEST_CASE("cpw subcommand reports line parameters and scaled tones") {
    TempDir dir("cli_cpw");
    const auto out = dir.file("cpw.json");
    CHECK(run({"cpw", "--width-um", "10", "--gap-um", "6", "--eps-r", "11.7",
               "--length-mm", "6.116", "--lki-nh-per-m", "428.8", "--out", out,
               "--no-timestamp"}) == 0);
    const json rec = load_json(out);
    CHECK(rec.at("kind") == "cpw_line");
    CHECK(rel_err(rec["line"]["l_per_len"]["value"].get<double>(), 423.629e-9) <
          1e-5);
    CHECK(rel_err(rec["line"]["c_per_len"]["value"].get<double>(),
                  166.781e-12) < 1e-5);
    CHECK(rel_err(rec["line"]["z0"]["value"].get<double>(), 50.3987) < 1e-5);
    CHECK(rec["line"]["eps_eff"]["value"].get<double>() ==
          doctest::Approx(6.35).epsilon(1e-12));
    REQUIRE(rec.contains("quarter_wave"));
    const double f0_expected = quarter_wave_freq_hz(
        line_params(CpwGeometry{10e-6, 6e-6, 11.7}), 6.116e-3, 428.8e-9);
    CHECK(rel_err(rec["quarter_wave"]["f0"]["value"].get<double>(),
                  f0_expected) < 1e-12);
    CHECK(rec["summary"]["f0_ghz"].get<std::string>() ==
          format_ghz(f0_expected));

    SUBCASE("without a length there is no quarter-wave block") {
        const auto out2 = dir.file("cpw2.json");
        CHECK(run({"cpw", "--width-um", "10", "--gap-um", "6", "--eps-r",
                   "11.7", "--out", out2, "--no-timestamp"}) == 0);
        CHECK_FALSE(load_json(out2).contains("quarter_wave"));
    }
}

TEST_CASE("ki subcommand extracts per-tone and shared kinetic inductance") {
    TempDir dir("cli_ki");
    const auto tones = dir.file("tones.csv");
    {
        std::ofstream f(tones);
        f << "f_meas_hz,f_model_hz\n"
          << "2.8869552e9,4.2449e9\n"
          << "3.3167549e9,4.7440e9\n"
          << "3.8800269e9,5.6803e9\n"
          << "4.4920176e9,6.6598e9\n";
    }
    const auto out = dir.file("ki.json");
    const auto plot = dir.file("ki_plot.csv");
    CHECK(run({"ki", "--tones", tones, "--l-geom-nh-per-m", "410", "--out",
               out, "--plot", plot, "--no-timestamp"}) == 0);
    const json rec = load_json(out);
    CHECK(rec.at("kind") == "kinetic_inductance");
    REQUIRE(rec["tones"].size() == 4);
    const double expected_nh[4] = {476.41826267, 428.77689451, 468.73298743,
                                   491.20446040};
    for (int i = 0; i < 4; ++i) {
        CHECK(rel_err(rec["tones"][i]["l_ki"]["value"].get<double>() * 1e9,
                      expected_nh[i]) < 1e-8);
    }
    CHECK(rel_err(rec["device_fit"]["l_ki"]["value"].get<double>() * 1e9,
                  470.309496) < 1e-6);
    CHECK(rec["device_fit"]["n_tones"]["value"].get<double>() == 4.0);
    const std::string table = read_text(plot);
    CHECK(table.rfind("series,l_ki_h_per_m,f_hz\n", 0) == 0);
    CHECK(table.find("extracted,") != std::string::npos);
    CHECK(table.find("device,") != std::string::npos);

    SUBCASE("wrong tone header is a data error") {
        const auto bad = dir.file("bad.csv");
        {
            std::ofstream f(bad);
            f << "measured,model\n1e9,2e9\n";
        }
        CHECK(run({"ki", "--tones", bad, "--l-geom-nh-per-m", "410", "--out",
                   dir.file("k2.json")}) == 3);
    }
}

TEST_CASE("sweep aggregates fit records into a classified surface") {
    TempDir dir("cli_sweep");
    const auto in = dir.path() / "records";
    std::filesystem::create_directories(in);

    const std::vector<double> ts{25.0, 75.0, 150.0, 300.0};
    const std::vector<double> ps{-80.0, -65.0, -50.0};
    int idx = 0;
    for (double t : ts) {
        for (double p : ps) {
            const double qi = tls_qi_model(t, p, 4.744e9, 1e-6, -50.0, 5e6);
            write_fit_record((in / ("r" + std::to_string(idx++) + ".json")).string(),
                             "swdev", t, p, qi, true);
        }
    }
    // One unconverged record at a new temperature: skipped by default.
    write_fit_record((in / "r_unconv.json").string(), "swdev", 600.0, -50.0,
                     2e6, false);
    // One converged record without a usable quality factor: skipped.
    write_fit_record((in / "r_noqi.json").string(), "swdev", 600.0, -65.0, 0.0,
                     true, false);

    const auto out = dir.file("surface.json");
    const auto plot = dir.file("surface_plot.csv");
    CHECK(run({"sweep", "--in-dir", in.string(), "--out", out, "--plot", plot,
               "--law-frequency-ghz", "4.744", "--no-timestamp"}) == 0);

    const json rec = load_json(out);
    CHECK(rec.at("kind") == "qi_surface");
    CHECK(rec["config"]["skipped_unconverged"].get<int>() == 1);
    CHECK(rec["config"]["skipped_no_qi"].get<int>() == 1);
    CHECK(rec["surface"]["temperatures_mk"].size() == 4);
    CHECK(rec["surface"]["powers_dbm"].size() == 3);
    CHECK(rec["surface"]["cells"].size() == 12);
    CHECK(rec.contains("regimes_report"));

    // The generating law must be recovered from its own samples.
    REQUIRE(rec.contains("tls_law"));
    CHECK(rec["tls_law"]["converged"] == true);
    CHECK(rel_err(rec["tls_law"]["f_delta0"]["value"].get<double>(), 1e-6) <
          1e-3);
    CHECK(rel_err(rec["tls_law"]["q_other"]["value"].get<double>(), 5e6) < 1e-3);

    const std::string table = read_text(plot);
    CHECK(table.rfind("temperature_mk,power_dbm,qi,qi_sigma,regime\n", 0) == 0);

    SUBCASE("including unconverged records widens the grid") {
        const auto out2 = dir.file("surface2.json");
        CHECK(run({"sweep", "--in-dir", in.string(), "--out", out2,
                   "--include-unconverged", "--no-timestamp"}) == 0);
        const json rec2 = load_json(out2);
        CHECK(rec2["surface"]["temperatures_mk"].size() == 5);
        CHECK(rec2["config"]["skipped_unconverged"].get<int>() == 0);
    }

    SUBCASE("an empty directory is a data error") {
        const auto empty = dir.path() / "empty";
        std::filesystem::create_directories(empty);
        CHECK(run({"sweep", "--in-dir", empty.string(), "--out",
                   dir.file("s3.json")}) == 3);
    }
}

TEST_CASE("report compares two surfaces cell by cell") {
    TempDir dir("cli_report");
    const auto in_a = dir.path() / "a";
    const auto in_b = dir.path() / "b";
    std::filesystem::create_directories(in_a);
    std::filesystem::create_directories(in_b);
    const std::vector<double> ts{25.0, 75.0, 150.0};
    const std::vector<double> ps{-80.0, -60.0};
    int idx = 0;
    for (double t : ts) {
        for (double p : ps) {
            const double qi = tls_qi_model(t, p, 4.744e9, 1e-6, -50.0, 5e6);
            write_fit_record(
                (in_a / ("r" + std::to_string(idx) + ".json")).string(), "devA",
                t, p, qi, true);
            write_fit_record(
                (in_b / ("r" + std::to_string(idx) + ".json")).string(), "devB",
                t, p, 2.0 * qi, true);
            ++idx;
        }
    }
    const auto sa = dir.file("sa.json");
    const auto sb = dir.file("sb.json");
    REQUIRE(run({"sweep", "--in-dir", in_a.string(), "--out", sa,
                 "--no-timestamp"}) == 0);
    REQUIRE(run({"sweep", "--in-dir", in_b.string(), "--out", sb,
                 "--no-timestamp"}) == 0);

    const auto out = dir.file("cmp.json");
    const auto plot = dir.file("cmp.csv");
    CHECK(run({"report", "--a", sa, "--b", sb, "--out", out, "--plot", plot,
               "--no-timestamp"}) == 0);
    const json rec = load_json(out);
    CHECK(rec.at("kind") == "surface_comparison");
    CHECK(rec["devices"]["a"] == "devA");
    CHECK(rec["devices"]["b"] == "devB");
    CHECK(rec["comparison"]["n_common_cells"]["value"].get<double>() == 6.0);
    CHECK(rel_err(rec["comparison"]["median_ratio_b_over_a"]["value"]
                      .get<double>(),
                  2.0) < 1e-12);
    const std::string table = read_text(plot);
    CHECK(table.rfind("temperature_mk,power_dbm,qi_a,qi_b,ratio_b_over_a\n",
                      0) == 0);
    // header + one row per common cell
    CHECK(std::count(table.begin(), table.end(), '\n') == 7);

    SUBCASE("disjoint surfaces are a data error") {
        CHECK(run({"report", "--a", sa, "--b", sa, "--out", dir.file("c2.json"),
                   "--no-timestamp"}) == 0); // identical surfaces share all cells
        const auto in_c = dir.path() / "c";
        std::filesystem::create_directories(in_c);
        int k = 0;
        for (double t : {999.0, 999.5, 999.9}) {
            for (double p : {-10.0, -5.0}) {
                write_fit_record(
                    (in_c / ("r" + std::to_string(k++) + ".json")).string(),
                    "devC", t, p, 1e6, true);
            }
        }
        const auto sc = dir.file("sc.json");
        REQUIRE(run({"sweep", "--in-dir", in_c.string(), "--out", sc,
                     "--no-timestamp"}) == 0);
        CHECK(run({"report", "--a", sa, "--b", sc, "--out",
                   dir.file("c3.json")}) == 3);
    }
}

TEST_CASE("environment config changes fit defaults") {
    TempDir dir("cli_env");
    const auto cfg = dir.file("cfg.json");
    write_text_atomic(cfg, R"({"fit":{"max_iterations":1}})");
    const auto w = dir.file("w.csv");
    const auto n = dir.file("n.csv");
    REQUIRE(run({"synth", "--f0-ghz", "3.88", "--q", "3e5", "--qc", "4e5",
                 "--noise-sigma", "1e-3", "--seed", "5", "--out-wide", w,
                 "--out-narrow", n}) == 0);
    ::setenv("RESFIT_CONFIG", cfg.c_str(), 1);
    const int rc = run({"fit", "--wide", w, "--narrow", n, "--out",
                        dir.file("f.json"), "--no-timestamp"});
    // Explicit flags must still win over the environment.
    const int rc2 = run({"fit", "--wide", w, "--narrow", n, "--out",
                         dir.file("f2.json"), "--max-iter", "200",
                         "--no-timestamp"});
    ::unsetenv("RESFIT_CONFIG");
    CHECK(rc == 4);
    CHECK(rc2 == 0);
    CHECK(load_json(dir.file("f.json"))["config"]["max_iterations"].get<int>() ==
          1);
    CHECK(load_json(dir.file("f2.json"))["config"]["max_iterations"].get<int>() ==
          200);

    SUBCASE("a malformed config file is a loud error") {
        write_text_atomic(cfg, "not json");
        ::setenv("RESFIT_CONFIG", cfg.c_str(), 1);
        const int rc3 = run({"fit", "--wide", w, "--narrow", n, "--out",
                             dir.file("f3.json"), "--no-timestamp"});
        ::unsetenv("RESFIT_CONFIG");
        CHECK(rc3 == 3);
    }
}

} // TEST_SUITE
