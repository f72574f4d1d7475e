#ifndef SVBMC_IO_HPP
#define SVBMC_IO_HPP

#include <svbmc/data.hpp>

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string_view>

namespace svbmc {

enum class DataFormat { csv, jsonl };

/// Picks the format from the file extension (.jsonl / .ndjson / .json are JSON lines).
inline DataFormat format_from_path(const std::filesystem::path& p) {
    const auto ext = p.extension().string();
    return (ext == ".jsonl" || ext == ".ndjson" || ext == ".json") ? DataFormat::jsonl : DataFormat::csv;
}

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline std::string_view trim_ws(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        out.push_back(trim_ws(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline double parse_double(std::string_view s, long row) {
    double v = 0.0;
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw InputError("cannot parse number '" + std::string(s) + "'", row);
    return v;
}

inline bool blank(std::string_view s) { return trim_ws(s).empty(); }

inline Evaluation checked(Vector x, double y, double sigma, long row) {
    if (!x.allFinite()) throw InputError("non-finite coordinate", row);
    if (!std::isfinite(y)) throw InputError("non-finite y", row);
    if (!std::isfinite(sigma) || sigma < 0.0) throw InputError("invalid sigma_obs", row);
    return {std::move(x), y, sigma * sigma};
}

} // namespace detail

/// Parses `x1,...,xD,y[,sigma_obs]` CSV. Rows are numbered from 0 after the header.
inline Dataset read_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw InputError("empty input: missing header");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto header = detail::split(line, ',');
    const bool has_sigma = header.back() == "sigma_obs";
    const auto ncols = header.size();
    const long dim = static_cast<long>(ncols) - (has_sigma ? 2 : 1);
    if (dim < 1) throw InputError("header must be x1,...,xD,y[,sigma_obs]");
    for (long d = 0; d < dim; ++d)
        if (header[static_cast<std::size_t>(d)] != "x" + std::to_string(d + 1))
            throw InputError("header column " + std::to_string(d + 1) + " should be x" + std::to_string(d + 1));
    if (header[static_cast<std::size_t>(dim)] != "y") throw InputError("header is missing the y column");

    std::vector<Evaluation> evals;
    long row = 0;
    while (std::getline(in, line)) {
        if (detail::blank(line)) continue;
        const auto cells = detail::split(line, ',');
        if (cells.size() != ncols)
            throw InputError("expected " + std::to_string(ncols) + " columns, got " + std::to_string(cells.size()), row);
        Vector x(dim);
        for (long d = 0; d < dim; ++d) x(d) = detail::parse_double(cells[static_cast<std::size_t>(d)], row);
        const double y = detail::parse_double(cells[static_cast<std::size_t>(dim)], row);
        const double s = has_sigma ? detail::parse_double(cells.back(), row) : std::sqrt(kNoiselessVariance);
        evals.push_back(detail::checked(std::move(x), y, s, row));
        ++row;
    }
    if (!has_sigma)
        for (auto& e : evals) e.sigma_obs_sq = kNoiselessVariance;
    return Dataset::from_evaluations(static_cast<int>(dim), evals);
}

/// Parses one JSON object per line: {"x": [...], "y": v, "sigma_obs": s}.
inline Dataset read_jsonl(std::istream& in) {
    std::string line;
    std::vector<Evaluation> evals;
    long dim = -1;
    long row = 0;
    while (std::getline(in, line)) {
        if (detail::blank(line)) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw InputError(std::string("malformed JSON: ") + e.what(), row);
        }
        if (!j.is_object() || !j.contains("x") || !j["x"].is_array() || !j.contains("y"))
            throw InputError("each line needs an array 'x' and a number 'y'", row);
        const auto& jx = j["x"];
        if (dim < 0) dim = static_cast<long>(jx.size());
        if (static_cast<long>(jx.size()) != dim || dim == 0)
            throw InputError("expected " + std::to_string(dim) + " coordinates, got " + std::to_string(jx.size()), row);
        auto number = [&](const nlohmann::json& v) {
            if (!v.is_number()) throw InputError("non-numeric value", row);
            return v.get<double>();
        };
        Vector x(dim);
        for (long d = 0; d < dim; ++d) x(d) = number(jx[static_cast<std::size_t>(d)]);
        const double y = number(j["y"]);
        Evaluation e = j.contains("sigma_obs") ? detail::checked(std::move(x), y, number(j["sigma_obs"]), row)
                                               : detail::checked(std::move(x), y, 0.0, row);
        if (!j.contains("sigma_obs")) e.sigma_obs_sq = kNoiselessVariance;
        evals.push_back(std::move(e));
        ++row;
    }
    if (dim < 0) throw InputError("empty input");
    return Dataset::from_evaluations(static_cast<int>(dim), evals);
}

inline Dataset ingest(std::istream& in, DataFormat fmt) {
    return fmt == DataFormat::csv ? read_csv(in) : read_jsonl(in);
}

inline Dataset ingest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    return ingest(in, format_from_path(path));
}

/// Writes evaluations as CSV; the sigma_obs column is omitted when every point is noiseless,
/// so a re-read reproduces the stored variances exactly.
inline void write_csv(std::ostream& out, std::span<const Evaluation> evals, int dim) {
    const bool noiseless = std::all_of(evals.begin(), evals.end(),
                                       [](const Evaluation& e) { return e.sigma_obs_sq == kNoiselessVariance; });
    for (int d = 0; d < dim; ++d) out << 'x' << d + 1 << ',';
    out << 'y' << (noiseless ? "" : ",sigma_obs") << '\n';
    for (const auto& e : evals) {
        for (int d = 0; d < dim; ++d) out << format_double(e.x(d)) << ',';
        out << format_double(e.y);
        if (!noiseless) out << ',' << format_double(std::sqrt(e.sigma_obs_sq));
        out << '\n';
    }
}

inline void write_csv(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    write_csv(out, ds.evaluations(), ds.dim());
}

/// Reads a numeric CSV matrix (e.g. posterior samples). A first row that does not parse as
/// numbers is taken as a header.
inline Matrix read_matrix_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    long row = 0;
    while (std::getline(in, line)) {
        if (detail::blank(line)) continue;
        const auto cells = detail::split(line, ',');
        std::vector<double> r;
        r.reserve(cells.size());
        bool numeric = true;
        for (auto c : cells) {
            const auto t = detail::trim_ws(c);
            double v = 0.0;
            const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
            if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
                numeric = false;
                break;
            }
            r.push_back(v);
        }
        if (!numeric) {
            if (first) {
                first = false;
                continue;
            }
            throw InputError(path.string() + ": not numeric", row);
        }
        first = false;
        if (!rows.empty() && r.size() != rows.front().size())
            throw InputError(path.string() + ": inconsistent number of columns", row);
        rows.push_back(std::move(r));
        ++row;
    }
    if (rows.empty()) throw InputError(path.string() + ": no data rows");
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return m;
}

inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    for (Eigen::Index d = 0; d < m.cols(); ++d) out << (d ? "," : "") << 'x' << d + 1;
    out << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index d = 0; d < m.cols(); ++d) out << (d ? "," : "") << format_double(m(i, d));
        out << '\n';
    }
}

} // namespace svbmc

#endif
