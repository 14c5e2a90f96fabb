#pragma once

// Minimal RFC-4180 helpers.

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace wordprobe::csv {

std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);
/// Parses one record; quoted fields may contain commas and doubled quotes
/// (embedded newlines are not supported).
std::vector<std::string> parse_line(std::string_view line);

std::string format_fixed(double value, int decimals);
/// Shortest text that reads back to the same float.
std::string format_float(float value);

}  // namespace wordprobe::csv
