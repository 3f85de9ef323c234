#include "resfit/io.hpp"

#include <cerrno>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "resfit/errors.hpp"

namespace resfit {

namespace {

constexpr const char* kTraceTag = "# resfit-trace v1";
constexpr const char* kMetaPrefix = "# meta ";
constexpr const char* kHeaderReIm = "freq_hz,s21_re,s21_im";
constexpr const char* kHeaderDbDeg = "freq_hz,s21_db,s21_deg";

std::string rtrim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) {
        s.pop_back();
    }
    return s;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string::size_type start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        if (nl == std::string::npos) {
            if (start < text.size()) lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

std::string loc(const std::string& path, std::size_t line) {
    return path + ":" + std::to_string(line);
}

std::string loc(const std::string& path, std::size_t line, std::size_t col) {
    return loc(path, line) + ":" + std::to_string(col);
}

double parse_double(const std::string& token, const std::string& path,
                    std::size_t line, std::size_t col) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0' || errno == ERANGE) {
        throw data_error(loc(path, line, col) + ": expected a number, got \"" +
                         token + "\"");
    }
    return v;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string::size_type start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

void require_number(const nlohmann::json& j, const char* key,
                    const std::string& context) {
    if (!j.at(key).is_number()) {
        throw data_error(context + ": field \"" + key + "\" must be a number");
    }
}

} // namespace

const char* to_string(Coupling coupling) {
    switch (coupling) {
        case Coupling::inductive: return "inductive";
        case Coupling::capacitive: return "capacitive";
        case Coupling::unknown: return "unknown";
    }
    return "unknown";
}

const char* to_string(ScanKind kind) {
    switch (kind) {
        case ScanKind::wide: return "wide";
        case ScanKind::narrow: return "narrow";
        case ScanKind::full: return "full";
    }
    return "full";
}

Coupling coupling_from_string(const std::string& s, const std::string& context) {
    if (s == "inductive") return Coupling::inductive;
    if (s == "capacitive") return Coupling::capacitive;
    if (s == "unknown") return Coupling::unknown;
    throw data_error(context + ": unknown coupling \"" + s + "\"");
}

ScanKind scan_kind_from_string(const std::string& s, const std::string& context) {
    if (s == "wide") return ScanKind::wide;
    if (s == "narrow") return ScanKind::narrow;
    if (s == "full") return ScanKind::full;
    throw data_error(context + ": unknown scan kind \"" + s + "\"");
}

nlohmann::json meta_to_json(const TraceMeta& meta) {
    nlohmann::json j;
    j["device_id"] = meta.device_id;
    j["resonator_index"] = meta.resonator_index;
    if (meta.power_dbm) j["power_dbm"] = *meta.power_dbm;
    if (meta.temperature_mk) j["temperature_mk"] = *meta.temperature_mk;
    j["coupling"] = to_string(meta.coupling);
    j["scan_kind"] = to_string(meta.scan_kind);
    return j;
}

TraceMeta meta_from_json(const nlohmann::json& j, const std::string& context) {
    if (!j.is_object()) {
        throw data_error(context + ": metadata must be a JSON object");
    }
    TraceMeta meta;
    if (j.contains("device_id")) {
        if (!j["device_id"].is_string()) {
            throw data_error(context + ": field \"device_id\" must be a string");
        }
        meta.device_id = j["device_id"].get<std::string>();
    }
    if (j.contains("resonator_index")) {
        if (!j["resonator_index"].is_number_integer()) {
            throw data_error(context +
                             ": field \"resonator_index\" must be an integer");
        }
        meta.resonator_index = j["resonator_index"].get<int>();
    }
    if (j.contains("power_dbm")) {
        require_number(j, "power_dbm", context);
        meta.power_dbm = j["power_dbm"].get<double>();
    }
    if (j.contains("temperature_mk")) {
        require_number(j, "temperature_mk", context);
        meta.temperature_mk = j["temperature_mk"].get<double>();
    }
    if (j.contains("coupling")) {
        if (!j["coupling"].is_string()) {
            throw data_error(context + ": field \"coupling\" must be a string");
        }
        meta.coupling = coupling_from_string(j["coupling"].get<std::string>(), context);
    }
    if (j.contains("scan_kind")) {
        if (!j["scan_kind"].is_string()) {
            throw data_error(context + ": field \"scan_kind\" must be a string");
        }
        meta.scan_kind =
            scan_kind_from_string(j["scan_kind"].get<std::string>(), context);
    }
    return meta;
}

void write_trace_csv(const std::string& path, const Trace& trace) {
    std::string out;
    out.reserve(64 * trace.size() + 256);
    out += kTraceTag;
    out += '\n';
    out += kMetaPrefix;
    out += meta_to_json(trace.meta()).dump();
    out += '\n';
    out += kHeaderReIm;
    out += '\n';
    char buf[96];
    for (std::size_t i = 0; i < trace.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", trace.freq()[i],
                      trace.s21()[i].real(), trace.s21()[i].imag());
        out += buf;
    }
    write_text_atomic(path, out);
}

Trace read_trace_csv(const std::string& path) {
    const std::string text = read_text(path);
    const std::vector<std::string> lines = split_lines(text);
    if (lines.size() < 4) {
        throw data_error(path + ": truncated trace file (" +
                         std::to_string(lines.size()) + " lines)");
    }
    if (rtrim(lines[0]) != kTraceTag) {
        throw data_error(loc(path, 1) + ": not a resfit trace file (expected \"" +
                         kTraceTag + "\")");
    }
    const std::string meta_line = rtrim(lines[1]);
    if (meta_line.rfind(kMetaPrefix, 0) != 0) {
        throw data_error(loc(path, 2) + ": expected \"" + kMetaPrefix +
                         "{...}\" metadata line");
    }
    const nlohmann::json meta_json = nlohmann::json::parse(
        meta_line.substr(std::string(kMetaPrefix).size()), nullptr, false);
    if (meta_json.is_discarded()) {
        throw data_error(loc(path, 2) + ": metadata is not valid JSON");
    }
    const TraceMeta meta = meta_from_json(meta_json, loc(path, 2));

    const std::string header = rtrim(lines[2]);
    bool db_deg = false;
    if (header == kHeaderDbDeg) {
        db_deg = true;
    } else if (header != kHeaderReIm) {
        throw data_error(loc(path, 3) + ": unrecognized column header \"" +
                         header + "\"");
    }

    std::vector<double> freq;
    std::vector<std::complex<double>> s21;
    for (std::size_t li = 3; li < lines.size(); ++li) {
        const std::string row = rtrim(lines[li]);
        if (row.empty() && li + 1 == lines.size()) break;
        const std::vector<std::string> fields = split_fields(row);
        if (fields.size() != 3) {
            throw data_error(loc(path, li + 1) + ": expected 3 fields, got " +
                             std::to_string(fields.size()));
        }
        const double f = parse_double(fields[0], path, li + 1, 1);
        const double a = parse_double(fields[1], path, li + 1, 2);
        const double b = parse_double(fields[2], path, li + 1, 3);
        freq.push_back(f);
        if (db_deg) {
            s21.push_back(std::polar(std::pow(10.0, a / 20.0),
                                     b * std::numbers::pi / 180.0));
        } else {
            s21.emplace_back(a, b);
        }
    }
    try {
        return Trace(std::move(freq), std::move(s21), meta);
    } catch (const data_error& e) {
        throw data_error(path + ": " + e.what());
    }
}

nlohmann::json quantity(double value, const std::string& unit) {
    nlohmann::json j;
    j["value"] = value;
    j["unit"] = unit;
    return j;
}

nlohmann::json quantity(double value, double sigma, const std::string& unit) {
    nlohmann::json j = quantity(value, unit);
    if (std::isfinite(sigma)) j["sigma"] = sigma;
    return j;
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string fnv1a64_hex(const std::string& bytes) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw data_error("cannot open " + tmp + " for writing");
        }
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        f.flush();
        if (!f) {
            std::remove(tmp.c_str());
            throw data_error("failed while writing " + tmp);
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw data_error("cannot move " + tmp + " into place at " + path);
    }
}

std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw data_error("cannot read " + path);
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

nlohmann::json surface_to_json(const QiSurface& surface) {
    nlohmann::json j;
    j["device_id"] = surface.device_id;
    j["resonator_index"] = surface.resonator_index;
    j["temperatures_mk"] = surface.temperatures_mk;
    j["powers_dbm"] = surface.powers_dbm;
    nlohmann::json cells = nlohmann::json::array();
    for (std::size_t t = 0; t < surface.temperatures_mk.size(); ++t) {
        for (std::size_t p = 0; p < surface.powers_dbm.size(); ++p) {
            const auto& cell = surface.cells[t][p];
            if (!cell) continue;
            nlohmann::json c;
            c["t_index"] = t;
            c["p_index"] = p;
            c["qi"] = quantity(cell->value, cell->sigma, "dimensionless");
            c["regime"] = to_string(surface.regimes[t][p]);
            cells.push_back(std::move(c));
        }
    }
    j["cells"] = std::move(cells);
    return j;
}

QiSurface surface_from_json(const nlohmann::json& j, const std::string& context) {
    if (!j.is_object()) {
        throw data_error(context + ": surface must be a JSON object");
    }
    QiSurface s;
    try {
        s.device_id = j.at("device_id").get<std::string>();
        s.resonator_index = j.at("resonator_index").get<int>();
        s.temperatures_mk = j.at("temperatures_mk").get<std::vector<double>>();
        s.powers_dbm = j.at("powers_dbm").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw data_error(context + ": malformed surface: " + e.what());
    }
    const std::size_t nt = s.temperatures_mk.size();
    const std::size_t np = s.powers_dbm.size();
    s.cells.assign(nt, std::vector<std::optional<QiCell>>(np));
    s.regimes.assign(nt, std::vector<Regime>(np, Regime::unclassified));
    if (!j.contains("cells") || !j["cells"].is_array()) {
        throw data_error(context + ": surface lacks a cells array");
    }
    for (const auto& c : j["cells"]) {
        std::size_t t = 0;
        std::size_t p = 0;
        QiCell cell;
        try {
            t = c.at("t_index").get<std::size_t>();
            p = c.at("p_index").get<std::size_t>();
            cell.value = c.at("qi").at("value").get<double>();
            cell.sigma = c["qi"].contains("sigma")
                             ? c["qi"]["sigma"].get<double>()
                             : std::numeric_limits<double>::quiet_NaN();
        } catch (const nlohmann::json::exception& e) {
            throw data_error(context + ": malformed surface cell: " + e.what());
        }
        if (t >= nt || p >= np) {
            throw data_error(context + ": cell index (" + std::to_string(t) +
                             ", " + std::to_string(p) + ") outside the grid");
        }
        s.cells[t][p] = cell;
        if (c.contains("regime")) {
            const std::string r = c["regime"].get<std::string>();
            if (r == "saturated") s.regimes[t][p] = Regime::saturated;
            else if (r == "power_dependent") s.regimes[t][p] = Regime::power_dependent;
            else if (r == "tls_dominated") s.regimes[t][p] = Regime::tls_dominated;
            else if (r == "unclassified") s.regimes[t][p] = Regime::unclassified;
            else throw data_error(context + ": unknown regime \"" + r + "\"");
        }
    }
    return s;
}

} // namespace resfit
