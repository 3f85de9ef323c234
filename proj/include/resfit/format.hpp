#pragma once

#include <string>

namespace resfit {

/// Renders a value with its one-sigma uncertainty in compact parenthetical
/// notation: the uncertainty is rounded to one significant digit and the
/// value to the matching decimal place, e.g. (3.3426635, 8e-7) ->
/// "3.3426635(8)" and (12345.6, 230) -> "12300(200)". When the uncertainty
/// is not finite and positive, the value alone is rendered with nine
/// significant digits.
std::string format_value_sigma(double value, double sigma);

/// Renders a frequency in GHz with seven decimal places (sub-Hz resolution
/// for the low-gigahertz range), e.g. 3342663500.0 -> "3.3426635".
std::string format_ghz(double frequency_hz);

} // namespace resfit
