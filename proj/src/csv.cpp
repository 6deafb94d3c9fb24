#include "tabattack/csv.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tabattack {

std::size_t RawTable::column_index(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw std::invalid_argument("no such column '" + name + "'");
}

namespace {

std::vector<std::string> split_record(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

bool needs_quoting(const std::string& s) {
    return s.find_first_of(",\"\n") != std::string::npos;
}

}  // namespace

RawTable parse_csv(const std::string& text) {
    RawTable table;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() && in.eof()) break;
        if (!line.empty() && line[0] == '#') continue;  // metadata comment lines
        auto fields = split_record(line);
        if (first) {
            table.header = std::move(fields);
            first = false;
        } else {
            if (fields.size() != table.header.size())
                throw std::runtime_error("csv row has " + std::to_string(fields.size()) +
                                         " fields, header has " +
                                         std::to_string(table.header.size()));
            table.rows.push_back(std::move(fields));
        }
    }
    if (first) throw std::runtime_error("csv is empty: header row is mandatory");
    return table;
}

RawTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str());
}

void write_csv(const RawTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    auto emit_row = [&out](const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out << ',';
            if (needs_quoting(fields[i])) {
                out << '"';
                for (char c : fields[i]) {
                    if (c == '"') out << '"';
                    out << c;
                }
                out << '"';
            } else {
                out << fields[i];
            }
        }
        out << '\n';
    };
    emit_row(table.header);
    for (const auto& row : table.rows) emit_row(row);
}

}  // namespace tabattack
