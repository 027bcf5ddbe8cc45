#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "overparam/ddsim.hpp"
#include "overparam/diagnostics.hpp"
#include "overparam/errors.hpp"
#include "overparam/estimators.hpp"

namespace overparam::io {

/// 17 significant digits; enough for any double to round-trip.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct CsvTable {
    std::vector<std::string> header;
    Matrix data;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline bool blank(std::string_view line) { return trim(line).empty(); }

}  // namespace detail

/// Header row, then numeric rows. Lines starting with '#' and blank lines are skipped.
/// Any unparsable cell is an InputError naming its 1-based row and column.
inline CsvTable parse_csv(std::istream& in, const std::string& source = "<input>") {
    CsvTable table;
    std::string line;
    long line_no = 0;
    bool have_header = false;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::blank(line) || detail::trim(line).front() == '#') continue;
        const auto cells = detail::split(line);
        if (!have_header) {
            for (auto c : cells) table.header.emplace_back(c);
            have_header = true;
            continue;
        }
        if (cells.size() != table.header.size())
            throw InputError(source + ": line " + std::to_string(line_no) + " has " +
                             std::to_string(cells.size()) + " cells, header has " +
                             std::to_string(table.header.size()));
        std::vector<double> row;
        row.reserve(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            auto cell = cells[c];
            if (cell.size() > 1 && cell.front() == '+') cell.remove_prefix(1);
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size())
                throw InputError(source + ": row " + std::to_string(rows.size() + 1) + ", column " +
                                 std::to_string(c + 1) + " ('" + table.header[c] +
                                 "'): cannot parse '" + std::string(cell) + "' as a number");
            row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    table.data = Matrix(static_cast<long>(rows.size()), static_cast<long>(table.header.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            table.data(static_cast<long>(i), static_cast<long>(j)) = rows[i][j];
    return table;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    return parse_csv(in, path);
}

struct Dataset {
    std::string response_name;
    std::vector<std::string> feature_names;
    Matrix X;
    Vector y;
};

/// Splits a table into response (named column, or the first column) and features in file order.
inline Dataset split_response(const CsvTable& t, const std::optional<std::string>& response = {}) {
    if (t.header.size() < 2) throw InputError("need a response column and at least one feature column");
    std::size_t col = 0;
    if (response) {
        auto it = std::find(t.header.begin(), t.header.end(), *response);
        if (it == t.header.end()) throw InputError("response column '" + *response + "' not found");
        col = static_cast<std::size_t>(it - t.header.begin());
    }
    Dataset ds;
    ds.response_name = t.header[col];
    ds.y = t.data.col(static_cast<long>(col));
    ds.X = Matrix(t.data.rows(), t.data.cols() - 1);
    long k = 0;
    for (std::size_t j = 0; j < t.header.size(); ++j) {
        if (j == col) continue;
        ds.feature_names.push_back(t.header[j]);
        ds.X.col(k++) = t.data.col(static_cast<long>(j));
    }
    return ds;
}

inline std::string tuning_text(const CoefficientEstimate& est) {
    std::ostringstream os;
    os << "method=" << method_name(est.method);
    if (est.tuning.lambda) os << " lambda=" << format_double(*est.tuning.lambda);
    if (est.tuning.rank) os << " rank=" << *est.tuning.rank;
    if (est.tuning.eta) os << " eta=" << format_double(*est.tuning.eta);
    if (est.tuning.iterations) os << " iterations=" << *est.tuning.iterations;
    os << " in_row_space=" << (est.in_row_space ? "true" : "false");
    return os.str();
}

/// "# method=..." metadata line, then `term,coefficient` rows.
inline void write_coefficients(std::ostream& out, const std::vector<std::string>& names,
                               const CoefficientEstimate& est) {
    if (names.size() != static_cast<std::size_t>(est.beta.size()))
        throw InputError("coefficient names do not match coefficient count");
    out << "# " << tuning_text(est) << '\n';
    out << "term,coefficient\n";
    for (std::size_t j = 0; j < names.size(); ++j)
        out << names[j] << ',' << format_double(est.beta(static_cast<long>(j))) << '\n';
}

struct CoefficientFile {
    std::vector<std::string> names;
    Vector beta;
};

inline CoefficientFile read_coefficients(std::istream& in, const std::string& source = "<input>") {
    std::string line;
    long line_no = 0;
    bool header = false;
    CoefficientFile f;
    std::vector<double> values;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::blank(line) || detail::trim(line).front() == '#') continue;
        if (!header) {
            header = true;
            continue;
        }
        const auto cells = detail::split(line);
        if (cells.size() != 2)
            throw InputError(source + ": line " + std::to_string(line_no) + " is not term,coefficient");
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(cells[1].data(), cells[1].data() + cells[1].size(), v);
        if (ec != std::errc() || ptr != cells[1].data() + cells[1].size())
            throw InputError(source + ": line " + std::to_string(line_no) + ": bad coefficient");
        f.names.emplace_back(cells[0]);
        values.push_back(v);
    }
    f.beta = Eigen::Map<Vector>(values.data(), static_cast<long>(values.size()));
    return f;
}

inline void write_estimability_csv(std::ostream& out, const std::vector<EstimabilityScore>& scores) {
    out << "index,sse,relative,leverage,flag\n";
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto& s = scores[i];
        out << i + 1 << ',' << format_double(s.sse) << ',' << format_double(s.relative) << ','
            << format_double(s.leverage) << ',' << (s.estimable ? "estimable" : "not-estimable") << '\n';
    }
}

inline void write_estimability_text(std::ostream& out, const std::vector<EstimabilityScore>& scores) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto& s = scores[i];
        out << "case " << i + 1 << ": sse=" << s.sse << " relative=" << s.relative
            << " leverage=" << s.leverage << (s.estimable ? "  [estimable]" : "  [not estimable]") << '\n';
    }
}

inline void write_report_csv(std::ostream& out, const ddsim::DoubleDescentReport& report) {
    out << "degree,s_plus_1,pmse,bias2\n";
    for (const auto& r : report.rows)
        out << r.degree << ',' << r.s_plus_1 << ',' << format_double(r.pmse) << ','
            << format_double(r.bias2) << '\n';
}

/// One row per (model, metric) for plotting tools.
inline void write_report_long_csv(std::ostream& out, const ddsim::DoubleDescentReport& report) {
    out << "degree,s_plus_1,metric,value\n";
    for (const auto& r : report.rows) {
        const std::pair<const char*, double> metrics[] = {
            {"pmse", r.pmse},         {"bias2", r.bias2},   {"pmse_se", r.pmse_se},
            {"bias2_floor", r.bias2_floor}, {"rank", static_cast<double>(r.rank)},
            {"train_rel_sse", r.train_rel_sse}};
        for (const auto& [name, value] : metrics)
            out << r.degree << ',' << r.s_plus_1 << ',' << name << ',' << format_double(value) << '\n';
    }
}

inline void write_eigen_decay_csv(std::ostream& out, const std::vector<EigenDecayRow>& rows) {
    out << "index,eigenvalue,cumulative_share\n";
    for (const auto& r : rows)
        out << r.index << ',' << format_double(r.eigenvalue) << ',' << format_double(r.cumulative_share)
            << '\n';
}

}  // namespace overparam::io
