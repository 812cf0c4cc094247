#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace fedsurg::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  /// Column index for `name`, or -1 if absent.
  int column(const std::string& name) const;
};

/// Reads a comma-separated file with a mandatory header row. Fields are
/// trimmed of surrounding whitespace; quoting is not supported (none of the
/// file formats here need it). Throws ValidationError on missing file or
/// ragged rows, naming the line number.
Table read_file(const std::filesystem::path& path);

/// Parses CSV from an in-memory string (same rules as read_file).
Table parse(const std::string& text, const std::string& origin = "<string>");

std::string join_row(const std::vector<std::string>& fields);

}  // namespace fedsurg::csv
