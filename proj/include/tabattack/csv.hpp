#pragma once

#include <string>
#include <vector>

namespace tabattack {

/// In-memory raw table. Cells are strings; the empty string means missing.
struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t n_rows() const { return rows.size(); }
    std::size_t n_cols() const { return header.size(); }
    std::size_t column_index(const std::string& name) const;  // throws if absent
};

/// UTF-8 CSV with a mandatory header row. Supports double-quoted fields.
RawTable read_csv(const std::string& path);
RawTable parse_csv(const std::string& text);
void write_csv(const RawTable& table, const std::string& path);

}  // namespace tabattack
