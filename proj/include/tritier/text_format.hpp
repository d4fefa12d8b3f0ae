#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace tritier {

/// Shortest-faithful decimal for a double: 17 significant digits, so that
/// parse(format(x)) == x bit-for-bit for every finite x. Infinities print as
/// "inf"/"-inf", NaN as "nan".
std::string fmt_g17(double x);

/// strtod wrapper; sets ok=false on garbage or trailing junk.
double parse_double(std::string_view s, bool& ok);

long parse_long(std::string_view s, bool& ok);

std::vector<std::string> split(std::string_view s, char sep);

/// Whitespace-separated tokens, empty tokens dropped.
std::vector<std::string> tokenize(std::string_view s);

}  // namespace tritier
