#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace mama::csv {

using Row = std::vector<std::string>;

// RFC 4180-style reader: comma separated, double-quoted fields with "" escapes,
// LF or CRLF line endings. Blank lines are skipped.
std::vector<Row> parse(std::string_view text);

// Quotes a field only when it contains a comma, quote, or newline.
std::string escape(std::string_view field);
std::string join(const Row& row);

}  // namespace mama::csv
