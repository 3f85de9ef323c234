#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "resfit/tls.hpp"
#include "resfit/trace.hpp"

namespace resfit {

/// Writes a trace as CSV: a format tag line, a metadata line holding a JSON
/// object, a column header, then one `freq_hz,s21_re,s21_im` row per sample
/// with full double precision.
void write_trace_csv(const std::string& path, const Trace& trace);

/// Parses a trace written by write_trace_csv, or the same layout with
/// `freq_hz,s21_db,s21_deg` columns (decibel magnitude, phase in degrees).
/// Errors name the file, line, and column of the first offending token.
[[nodiscard]] Trace read_trace_csv(const std::string& path);

[[nodiscard]] nlohmann::json meta_to_json(const TraceMeta& meta);
[[nodiscard]] TraceMeta meta_from_json(const nlohmann::json& j,
                                       const std::string& context);

const char* to_string(Coupling coupling);
const char* to_string(ScanKind kind);
[[nodiscard]] Coupling coupling_from_string(const std::string& s,
                                            const std::string& context);
[[nodiscard]] ScanKind scan_kind_from_string(const std::string& s,
                                             const std::string& context);

/// Physical-quantity JSON leaf: {"value": ..., "unit": ...} plus "sigma"
/// when a finite sigma is given.
[[nodiscard]] nlohmann::json quantity(double value, const std::string& unit);
[[nodiscard]] nlohmann::json quantity(double value, double sigma,
                                      const std::string& unit);

/// 64-bit FNV-1a content digest, and its 16-digit lowercase hex form.
[[nodiscard]] std::uint64_t fnv1a64(const std::string& bytes);
[[nodiscard]] std::string fnv1a64_hex(const std::string& bytes);

/// Writes via a temporary file in the same directory followed by an atomic
/// rename, so a crash or error never leaves a partial file at `path`.
void write_text_atomic(const std::string& path, const std::string& content);
[[nodiscard]] std::string read_text(const std::string& path);

/// Sparse JSON form of a Qi surface (missing cells are simply absent);
/// regimes and per-cell sigmas survive the round trip. NaN sigmas are
/// stored by omission.
[[nodiscard]] nlohmann::json surface_to_json(const QiSurface& surface);
[[nodiscard]] QiSurface surface_from_json(const nlohmann::json& j,
                                          const std::string& context);

} // namespace resfit
